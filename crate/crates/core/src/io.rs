//! Plain-text formats.
//!
//! MDP files:
//!
//! ```text
//! # comments and blank lines are ignored
//! mdp <n_states> <n_actions> <gamma> <horizon|none>
//! initial <p_0> ... <p_{n-1}>
//! terminal <s> <s> ...
//! <n_states * n_actions rows of n_states probabilities, (s, a) row-major>
//! ```
//!
//! Demo files hold one trajectory per line as alternating state and action indices
//! (`s0 a0 s1 a1 ... s_T`, the trailing state optional). Policy files hold a
//! `policy <n_states> <n_actions>` header followed by one row of logits per state.

use std::fmt::Write as _;

use crate::error::{PagarError, Result};
use crate::irl::DemoSet;
use crate::mdp::{SoftPolicy, TabularMdp, Table, Trajectory};

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn perr(line: usize, msg: impl Into<String>) -> PagarError {
    PagarError::Parse { line, msg: msg.into() }
}

fn parse_nums<T: std::str::FromStr>(line: usize, toks: &[&str]) -> Result<Vec<T>> {
    toks.iter().map(|t| t.parse::<T>().map_err(|_| perr(line, format!("bad number {t:?}")))).collect()
}

pub fn write_mdp(mdp: &TabularMdp) -> String {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut out = String::new();
    let horizon = mdp.horizon().map_or("none".to_string(), |h| h.to_string());
    writeln!(out, "mdp {ns} {na} {} {horizon}", mdp.gamma()).unwrap();
    let init: Vec<String> = mdp.initial_dist().iter().map(|x| x.to_string()).collect();
    writeln!(out, "initial {}", init.join(" ")).unwrap();
    let term: Vec<String> = (0..ns).filter(|&s| mdp.is_terminal(s)).map(|s| s.to_string()).collect();
    writeln!(out, "terminal{}{}", if term.is_empty() { "" } else { " " }, term.join(" ")).unwrap();
    for s in 0..ns {
        for a in 0..na {
            let row: Vec<String> = mdp.row(s, a).iter().map(|x| x.to_string()).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
    }
    out
}

pub fn read_mdp(text: &str) -> Result<TabularMdp> {
    let mut lines = content_lines(text);
    let (ln, header) = lines.next().ok_or_else(|| perr(0, "empty MDP file"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 5 || toks[0] != "mdp" {
        return Err(perr(ln, "expected `mdp <n_states> <n_actions> <gamma> <horizon|none>`"));
    }
    let dims: Vec<usize> = parse_nums(ln, &toks[1..3])?;
    let (ns, na) = (dims[0], dims[1]);
    let gamma: f64 = toks[3].parse().map_err(|_| perr(ln, "bad gamma"))?;
    let horizon = match toks[4] {
        "none" => None,
        h => Some(h.parse::<usize>().map_err(|_| perr(ln, "bad horizon"))?),
    };

    let (ln, init) = lines.next().ok_or_else(|| perr(ln, "missing `initial` line"))?;
    let toks: Vec<&str> = init.split_whitespace().collect();
    if toks.first() != Some(&"initial") || toks.len() != ns + 1 {
        return Err(perr(ln, format!("expected `initial` with {ns} values")));
    }
    let initial: Vec<f64> = parse_nums(ln, &toks[1..])?;

    let (ln, term) = lines.next().ok_or_else(|| perr(ln, "missing `terminal` line"))?;
    let toks: Vec<&str> = term.split_whitespace().collect();
    if toks.first() != Some(&"terminal") {
        return Err(perr(ln, "expected `terminal`"));
    }
    let mut terminal = vec![false; ns];
    for s in parse_nums::<usize>(ln, &toks[1..])? {
        if s >= ns {
            return Err(perr(ln, format!("terminal state {s} out of range")));
        }
        terminal[s] = true;
    }

    let mut transition = Vec::with_capacity(ns * na * ns);
    let mut last = ln;
    for _ in 0..ns * na {
        let (ln, row) = lines.next().ok_or_else(|| perr(last, format!("expected {} transition rows", ns * na)))?;
        let vals: Vec<f64> = parse_nums(ln, &row.split_whitespace().collect::<Vec<_>>())?;
        if vals.len() != ns {
            return Err(perr(ln, format!("transition row has {} entries, expected {ns}", vals.len())));
        }
        transition.extend(vals);
        last = ln;
    }
    if let Some((ln, _)) = lines.next() {
        return Err(perr(ln, "trailing content"));
    }
    TabularMdp::new(ns, na, transition, initial, terminal, gamma, horizon)
}

pub fn write_demos(demos: &DemoSet) -> String {
    let mut out = String::new();
    for tr in &demos.trajectories {
        let mut toks = Vec::new();
        for (i, s) in tr.states.iter().enumerate() {
            toks.push(s.to_string());
            if let Some(a) = tr.actions.get(i) {
                toks.push(a.to_string());
            }
        }
        writeln!(out, "{}", toks.join(" ")).unwrap();
    }
    out
}

pub fn read_demos(text: &str) -> Result<DemoSet> {
    let mut trajs = Vec::new();
    for (ln, line) in content_lines(text) {
        let ids: Vec<usize> = parse_nums(ln, &line.split_whitespace().collect::<Vec<_>>())?;
        let states = ids.iter().step_by(2).copied().collect();
        let actions = ids.iter().skip(1).step_by(2).copied().collect();
        trajs.push(Trajectory::new(states, actions).map_err(|e| perr(ln, e.to_string()))?);
    }
    DemoSet::new(trajs)
}

pub fn write_policy(policy: &SoftPolicy) -> String {
    let mut out = format!("policy {} {}\n", policy.n_states(), policy.n_actions());
    let l = policy.logits();
    for s in 0..policy.n_states() {
        let row: Vec<String> = (0..policy.n_actions()).map(|a| l[(s, a)].to_string()).collect();
        writeln!(out, "{}", row.join(" ")).unwrap();
    }
    out
}

pub fn read_policy(text: &str) -> Result<SoftPolicy> {
    let mut lines = content_lines(text);
    let (ln, header) = lines.next().ok_or_else(|| perr(0, "empty policy file"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 3 || toks[0] != "policy" {
        return Err(perr(ln, "expected `policy <n_states> <n_actions>`"));
    }
    let dims: Vec<usize> = parse_nums(ln, &toks[1..])?;
    let (ns, na) = (dims[0], dims[1]);
    let mut logits = Table::zeros(ns, na);
    for s in 0..ns {
        let (ln, row) = lines.next().ok_or_else(|| perr(ln, format!("expected {ns} logit rows")))?;
        let vals: Vec<f64> = parse_nums(ln, &row.split_whitespace().collect::<Vec<_>>())?;
        if vals.len() != na {
            return Err(perr(ln, format!("logit row has {} entries, expected {na}", vals.len())));
        }
        for (a, v) in vals.into_iter().enumerate() {
            logits[(s, a)] = v;
        }
    }
    if let Some((ln, _)) = lines.next() {
        return Err(perr(ln, "trailing content"));
    }
    SoftPolicy::from_logits(logits)
}
