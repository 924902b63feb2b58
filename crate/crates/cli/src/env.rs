//! Environment selection: `env.name = example1 | random | gridworld | file`.

use std::fs;
use std::path::{Path, PathBuf};

use pagar_core::alignment::TaskSpec;
use pagar_core::envs::{build_example1, build_gridworld, build_random_benchmark, Gridworld, GridworldSpec};
use pagar_core::io::{read_demos, read_mdp};
use pagar_core::irl::DemoSet;
use pagar_core::mdp::{visit_probability, SoftPolicy, Table, TabularMdp};
use pagar_core::reward::RewardFamily;

use crate::config::{CfgResult, ConfigError, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    Example1,
    Random,
    Gridworld,
    File,
}

pub struct LoadedEnv {
    pub kind: EnvKind,
    pub mdp: TabularMdp,
    pub family: RewardFamily,
    pub demos: DemoSet,
    pub task: TaskSpec,
    pub world: Option<Gridworld>,
}

pub fn kind(cfg: &RunConfig) -> CfgResult<EnvKind> {
    match cfg.raw("env.name").unwrap_or("example1") {
        "example1" => Ok(EnvKind::Example1),
        "random" => Ok(EnvKind::Random),
        "gridworld" => Ok(EnvKind::Gridworld),
        "file" => Ok(EnvKind::File),
        other => Err(ConfigError(format!("env.name: unknown environment {other:?}"))),
    }
}

/// Per-environment defaults for keys the config leaves unset.
pub fn apply_defaults(cfg: &mut RunConfig, kind: EnvKind) {
    match kind {
        EnvKind::Example1 => {
            cfg.set_default("irl.mode", "trajectory");
            cfg.set_default("pagar.kappa", pagar_core::envs::example1::KAPPA);
            cfg.set_default("pagar.reward_set", "continuous");
        }
        EnvKind::Gridworld => {
            cfg.set_default("irl.mode", "margin");
            cfg.set_default("pagar.kappa", 0.05);
            cfg.set_default("pagar.leader_temperature", 0.05);
            cfg.set_default("pagar.reward_set", "grid");
            cfg.set_default("pagar.reward_grid", 11);
        }
        EnvKind::Random => {
            cfg.set_default("irl.mode", "margin");
            cfg.set_default("pagar.kappa", 0.05);
            cfg.set_default("pagar.reward_set", "grid");
            cfg.set_default("pagar.reward_grid", 7);
        }
        EnvKind::File => {
            cfg.set_default("irl.mode", "margin");
            cfg.set_default("pagar.reward_set", "continuous");
        }
    }
}

pub fn load(cfg: &RunConfig, base: &Path) -> CfgResult<LoadedEnv> {
    let kind = kind(cfg)?;
    match kind {
        EnvKind::Example1 => {
            let ex = build_example1();
            Ok(LoadedEnv { kind, mdp: ex.mdp, family: ex.family, demos: ex.demos, task: ex.task, world: None })
        }
        EnvKind::Random => {
            let b = build_random_benchmark(
                cfg.get_or("env.states", 4)?,
                cfg.get_or("env.actions", 2)?,
                cfg.get_or("env.n_demos", 10)?,
                cfg.seed()?,
            )?;
            Ok(LoadedEnv { kind, mdp: b.mdp, family: b.family, demos: b.demos, task: accept_all(), world: None })
        }
        EnvKind::Gridworld => {
            let d = GridworldSpec::default();
            let spec = GridworldSpec {
                width: cfg.get_or("env.width", d.width)?,
                height: cfg.get_or("env.height", d.height)?,
                slip: cfg.get_or("env.slip", d.slip)?,
                step_limit: cfg.get_or("env.step_limit", d.step_limit)?,
                gamma: cfg.get_or("env.gamma", d.gamma)?,
                threshold: cfg.get_or("env.threshold", d.threshold)?,
                n_demos: cfg.get_or("env.n_demos", d.n_demos)?,
                seed: cfg.get_or("seed", d.seed)?,
                ..d
            };
            let spec = if cfg.raw("env.width").is_some() || cfg.raw("env.height").is_some() {
                // default start, goal and hazards only fit the 5x5 layout
                GridworldSpec { goal: (spec.width - 1, spec.height - 1), hazards: vec![], ..spec }
            } else {
                spec
            };
            let w = build_gridworld(&spec)?;
            Ok(LoadedEnv {
                kind,
                mdp: w.mdp.clone(),
                family: w.family.clone(),
                demos: w.demos.clone(),
                task: w.task.clone(),
                world: Some(w),
            })
        }
        EnvKind::File => load_file(cfg, base),
    }
}

fn accept_all() -> TaskSpec {
    TaskSpec::new(|_| true, |_| 0.0)
}

fn read_text(base: &Path, cfg: &RunConfig, key: &str) -> CfgResult<String> {
    let rel = cfg.raw(key).ok_or_else(|| ConfigError(format!("{key} is required for env.name = file")))?;
    let path: PathBuf = base.join(rel);
    fs::read_to_string(&path).map_err(|e| ConfigError(format!("{key}: {}: {e}", path.display())))
}

fn load_file(cfg: &RunConfig, base: &Path) -> CfgResult<LoadedEnv> {
    let mdp = read_mdp(&read_text(base, cfg, "env.mdp")?)?;
    let demos = read_demos(&read_text(base, cfg, "env.demos")?)?;
    demos.validate(&mdp)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());

    let mut names = Vec::new();
    let mut feats = Vec::new();
    let mut bounds = Vec::new();
    for (name, values) in cfg.section("env.feature.") {
        let vals: Vec<f64> = values
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| ConfigError(format!("env.feature.{name}: bad number {v:?}"))))
            .collect::<CfgResult<_>>()?;
        if vals.len() != ns * na {
            return Err(ConfigError(format!("env.feature.{name}: expected {} values, got {}", ns * na, vals.len())));
        }
        feats.push(Table::from_row_slice(ns, na, &vals));
        let b: Vec<f64> = cfg.list(&format!("env.bounds.{name}"))?.unwrap_or(vec![-1.0, 1.0]);
        if b.len() != 2 {
            return Err(ConfigError(format!("env.bounds.{name}: expected `lo hi`")));
        }
        bounds.push((b[0], b[1]));
        names.push(name.to_string());
    }
    if feats.is_empty() {
        return Err(ConfigError("env.name = file needs at least one env.feature.<name>".into()));
    }
    for (name, _) in cfg.section("env.bounds.") {
        if !names.iter().any(|n| n == name) {
            return Err(ConfigError(format!("env.bounds.{name} has no matching feature")));
        }
    }
    let family = RewardFamily::new(feats, bounds)?.with_names(names)?;

    let task = match cfg.get::<usize>("env.goal_state")? {
        None => accept_all(),
        Some(goal) if goal >= ns => return Err(ConfigError(format!("env.goal_state {goal} out of range"))),
        Some(goal) => {
            let threshold: f64 = cfg.get_or("env.goal_threshold", 0.5)?;
            let limit = cfg.get_or("env.step_limit", mdp.horizon().unwrap_or(ns))?;
            let (m1, m2) = (mdp.clone(), mdp.clone());
            let reach1 = move |p: &SoftPolicy| visit_probability(&m1, p, goal, limit).unwrap_or(0.0);
            let reach2 = move |p: &SoftPolicy| visit_probability(&m2, p, goal, limit).unwrap_or(0.0);
            TaskSpec::new(move |p| reach1(p) >= threshold, reach2)
        }
    };
    Ok(LoadedEnv { kind: EnvKind::File, mdp, family, demos, task, world: None })
}
