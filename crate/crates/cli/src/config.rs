//! Flat `key = value` run configuration.
//!
//! Keys carry a section prefix (`env.`, `pagar.`, `irl.`, `sweep.`, `verify.`);
//! `seed` is the only bare key. `#` starts a comment. A key may appear once.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use pagar_core::solver::PagarConfig;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<pagar_core::PagarError> for ConfigError {
    fn from(e: pagar_core::PagarError) -> Self {
        ConfigError(e.to_string())
    }
}

pub type CfgResult<T> = Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> CfgResult<T> {
    Err(ConfigError(msg.into()))
}

const SECTIONS: [&str; 5] = ["env.", "pagar.", "irl.", "sweep.", "verify."];

const KNOWN: &[&str] = &[
    "seed",
    "env.name",
    "env.mdp",
    "env.demos",
    "env.states",
    "env.actions",
    "env.n_demos",
    "env.width",
    "env.height",
    "env.slip",
    "env.step_limit",
    "env.gamma",
    "env.threshold",
    "env.goal_state",
    "env.goal_threshold",
    "pagar.delta",
    "pagar.delta_drop",
    "pagar.reward_set",
    "pagar.reward_grid",
    "pagar.lambda0",
    "pagar.mu",
    "pagar.lambda_floor",
    "pagar.clip",
    "pagar.iterations",
    "pagar.batch_size",
    "pagar.max_len",
    "pagar.kappa",
    "pagar.antagonist",
    "pagar.antagonist_steps",
    "pagar.protagonist_steps",
    "pagar.protagonist",
    "pagar.leader_temperature",
    "pagar.step_size",
    "pagar.clip_norm",
    "pagar.estimator",
    "pagar.reward_objective",
    "pagar.reward_update",
    "pagar.reward_step_size",
    "pagar.search_iters",
    "pagar.c_scale",
    "pagar.use_r3_r4",
    "pagar.average_tail",
    "irl.mode",
    "irl.resolution",
    "irl.max_iters",
    "sweep.deltas",
    "sweep.omega_points",
    "sweep.policy_points",
    "sweep.benchmarks",
    "sweep.reward_grid",
    "sweep.policy_grid",
    "sweep.delta_fraction",
    "verify.suites",
    "verify.instances",
    "verify.base_seed",
    "verify.replay",
];

#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> CfgResult<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return err(format!("line {}: expected `key = value`", i + 1));
            };
            let (k, v) = (k.trim(), v.trim());
            check_key(k).map_err(|e| ConfigError(format!("line {}: {}", i + 1, e.0)))?;
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return err(format!("line {}: duplicate key {k}", i + 1));
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> CfgResult<()> {
        check_key(key)?;
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Fills `key` only when the file left it unset.
    pub fn set_default(&mut self, key: &str, value: impl ToString) {
        self.entries.entry(key.to_string()).or_insert_with(|| value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CfgResult<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| ConfigError(format!("{key}: cannot parse {v:?}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> CfgResult<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> CfgResult<Option<Vec<T>>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        let items: Vec<T> = v
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| ConfigError(format!("{key}: cannot parse item {s:?}"))))
            .collect::<CfgResult<_>>()?;
        if items.is_empty() {
            return err(format!("{key} is empty"));
        }
        Ok(Some(items))
    }

    pub fn seed(&self) -> CfgResult<u64> {
        self.get_or("seed", 0)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    /// Keys under `prefix`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> Vec<(&str, &str)> {
        self.entries.iter().filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s, v.as_str()))).collect()
    }

    /// Solver settings; the delta itself is resolved by the caller.
    pub fn pagar(&self) -> CfgResult<PagarConfig> {
        let d = PagarConfig::default();
        let cfg = PagarConfig {
            delta: 0.0,
            lambda0: self.get_or("pagar.lambda0", d.lambda0)?,
            mu: self.get_or("pagar.mu", d.mu)?,
            lambda_floor: self.get_or("pagar.lambda_floor", d.lambda_floor)?,
            clip: self.get_or("pagar.clip", d.clip)?,
            iterations: self.get_or("pagar.iterations", d.iterations)?,
            batch_size: self.get_or("pagar.batch_size", d.batch_size)?,
            max_len: self.get_or("pagar.max_len", d.max_len)?,
            seed: self.seed()?,
            irl_mode: self.get_or("irl.mode", d.irl_mode)?,
            kappa: self.get_or("pagar.kappa", d.kappa)?,
            antagonist: self.get_or("pagar.antagonist", d.antagonist)?,
            antagonist_steps: self.get_or("pagar.antagonist_steps", d.antagonist_steps)?,
            protagonist_steps: self.get_or("pagar.protagonist_steps", d.protagonist_steps)?,
            protagonist: self.get_or("pagar.protagonist", d.protagonist)?,
            leader_temperature: self.get_or("pagar.leader_temperature", d.leader_temperature)?,
            step_size: self.get_or("pagar.step_size", d.step_size)?,
            clip_norm: self.get_or("pagar.clip_norm", d.clip_norm)?,
            estimator: self.get_or("pagar.estimator", d.estimator)?,
            reward_objective: self.get_or("pagar.reward_objective", d.reward_objective)?,
            reward_update: self.get_or("pagar.reward_update", d.reward_update)?,
            reward_step_size: self.get_or("pagar.reward_step_size", d.reward_step_size)?,
            search_iters: self.get_or("pagar.search_iters", d.search_iters)?,
            c_scale: self.get_or("pagar.c_scale", d.c_scale)?,
            use_r3_r4: self.get_or("pagar.use_r3_r4", d.use_r3_r4)?,
            average_tail: self.get_or("pagar.average_tail", d.average_tail)?,
        };
        Ok(cfg)
    }
}

fn check_key(k: &str) -> CfgResult<()> {
    if KNOWN.contains(&k) {
        return Ok(());
    }
    // inline reward features: env.feature.<name> and env.bounds.<name>
    for dynamic in ["env.feature.", "env.bounds."] {
        if let Some(name) = k.strip_prefix(dynamic) {
            if !name.is_empty() {
                return Ok(());
            }
        }
    }
    if k.contains('.') && !SECTIONS.iter().any(|s| k.starts_with(s)) {
        return err(format!("unknown section in key {k:?}"));
    }
    err(format!("unknown key {k:?}"))
}
