use std::path::Path;

use log::{debug, info, warn};
use pagar_core::alignment::{enumerate_policy_grid, TaskSpec};
use pagar_core::envs::{build_example1, build_random_benchmark, example1, example1_policy, goal_reach_probability};
use pagar_core::io::write_policy;
use pagar_core::irl::{irl_fit, IrlBudget, IrlProblem, IrlReport};
use pagar_core::mdp::{hard_value_iteration, SoftPolicy, SolverOptions};
use pagar_core::reward::IrlObjective;
use pagar_core::solver::{
    delta_grid, margin_problem, minimax_regret_bruteforce, train_on_set, train_with, worst_case_regret, PagarConfig,
    TrainOutput,
};
use pagar_core::suites::{run_instance, run_suite, InstanceResult, Suite};
use pagar_core::PagarError;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{ConfigError, RunConfig};
use crate::env::{self, EnvKind};
use crate::output::Outputs;

pub enum Failure {
    /// Bad config or usage; exit code 2.
    Config(String),
    /// A component failed mid-run; exit code 1.
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<PagarError> for Failure {
    fn from(e: PagarError) -> Self {
        match e {
            PagarError::InvalidConfig(_) | PagarError::Parse { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(format!("io: {e}"))
    }
}

/// `Ok(true)` when every check passed.
pub type CmdResult = Result<bool, Failure>;

pub struct Context<'a> {
    pub cfg: RunConfig,
    pub base: &'a Path,
    pub out: &'a Path,
    pub pool: rayon::ThreadPool,
}

/// Runs `body` and writes the manifest last, with a note when the body fails
/// after the output directory exists.
fn with_outputs(
    ctx: &Context<'_>,
    command: &str,
    body: impl FnOnce(&mut Outputs) -> Result<(bool, Value), Failure>,
) -> CmdResult {
    let mut out = Outputs::create(ctx.out)?;
    match body(&mut out) {
        Ok((passed, metrics)) => {
            out.finish(command, &ctx.cfg, metrics, None)?;
            info!("outputs in {}", ctx.out.display());
            Ok(passed)
        }
        Err(f) => {
            let msg = match &f {
                Failure::Config(m) | Failure::Runtime(m) => m.clone(),
            };
            out.finish(command, &ctx.cfg, Value::Null, Some(format!("aborted: {msg}")))?;
            Err(f)
        }
    }
}

fn budget(cfg: &RunConfig) -> Result<IrlBudget, Failure> {
    let d = IrlBudget::default();
    Ok(IrlBudget { resolution: cfg.get_or("irl.resolution", d.resolution)?, max_iters: cfg.get_or("irl.max_iters", d.max_iters)?, ..d })
}

/// `pagar.delta` is a number or `max`; unset means `δ* − drop·max(|δ*|, 0.1)`.
fn resolve_delta(cfg: &RunConfig, fit: &IrlReport) -> Result<f64, Failure> {
    match cfg.raw("pagar.delta") {
        Some("max") => Ok(fit.best_loss),
        Some(_) => Ok(cfg.get::<f64>("pagar.delta")?.unwrap()),
        None => {
            let drop: f64 = cfg.get_or("pagar.delta_drop", 0.1)?;
            Ok(fit.best_loss - drop * fit.best_loss.abs().max(0.1))
        }
    }
}

fn fmt(x: f64) -> String {
    x.to_string()
}

pub fn train(mut ctx: Context<'_>) -> CmdResult {
    let kind = env::kind(&ctx.cfg)?;
    env::apply_defaults(&mut ctx.cfg, kind);
    let loaded = env::load(&ctx.cfg, ctx.base)?;
    let mut pcfg = ctx.cfg.pagar()?;
    let reward_set = ctx.cfg.raw("pagar.reward_set").unwrap_or("continuous").to_string();
    if reward_set != "grid" && reward_set != "continuous" {
        return Err(Failure::Config(format!("pagar.reward_set: expected grid or continuous, got {reward_set:?}")));
    }
    let reward_grid: usize = ctx.cfg.get_or("pagar.reward_grid", 11)?;
    let irl_budget = budget(&ctx.cfg)?;
    let pool = &ctx.pool;

    with_outputs(&ctx, "train", |out| {
        let problem = IrlProblem::new(loaded.mdp.clone(), loaded.family.clone(), loaded.demos.clone(), pcfg.irl_mode, pcfg.kappa)?;
        let fit = pool.install(|| irl_fit(&problem, &irl_budget))?;
        pcfg.delta = resolve_delta(&ctx.cfg, &fit)?;
        pcfg.validate()?;
        info!("irl optimum {:?} with objective {:.6}; delta {:.6}", fit.best_params, fit.best_loss, pcfg.delta);

        let set = if reward_set == "grid" { Some(pool.install(|| delta_grid(&problem, pcfg.delta, reward_grid))?) } else { None };
        let result: TrainOutput = pool.install(|| match &set {
            Some(s) => train_on_set(&problem, s, &loaded.task, &pcfg, None),
            None => train_with(&problem, &fit.best_params, &loaded.task, &pcfg, None),
        })?;

        out.write("policy.txt", write_policy(&result.protagonist).as_bytes())?;
        out.write_csv("trace.csv", &result.trace.csv_header(), &result.trace.csv_rows())?;

        let pi = &result.protagonist;
        let names = loaded.task.metric_names();
        let values = loaded.task.metrics(pi);
        let mut metrics = json!({
            "env": ctx.cfg.raw("env.name").unwrap_or("example1"),
            "delta": pcfg.delta,
            "irl_optimum": fit.best_loss,
            "irl_best_params": fit.best_params,
            "reward_params": result.reward_params,
            "lambda": result.lambda,
            "iterations": result.trace.records.len(),
            "accepted": loaded.task.accepts(pi),
            "task_score": loaded.task.score(pi),
            "task_metrics": names.iter().cloned().zip(values.into_iter().map(Value::from)).collect::<serde_json::Map<String, Value>>(),
        });
        let eval_set = match set {
            Some(s) => s,
            None => delta_grid(&problem, pcfg.delta, reward_grid)?,
        };
        if !eval_set.is_empty() {
            let (wc, idx) = worst_case_regret(&loaded.mdp, &eval_set, pi)?;
            metrics["worst_case_regret"] = json!(wc);
            metrics["worst_case_reward"] = json!(eval_set[idx].params);
        }
        match loaded.kind {
            EnvKind::Example1 => metrics["p_a2_at_s0"] = json!(pi.probs()[(example1::S0, example1::A2)]),
            EnvKind::Gridworld => {
                let w = loaded.world.as_ref().unwrap();
                let opt = hard_value_iteration(&w.mdp, &w.hidden_reward, &SolverOptions::default())?;
                metrics["goal_reach"] = json!(goal_reach_probability(w, pi)?);
                metrics["goal_reach_optimum"] = json!(goal_reach_probability(w, &opt.policy)?);
            }
            _ => {}
        }
        Ok((true, metrics))
    })
}

pub fn example1_sweep(mut ctx: Context<'_>) -> CmdResult {
    if env::kind(&ctx.cfg)? != EnvKind::Example1 {
        return Err(Failure::Config("example1-sweep only runs on env.name = example1".into()));
    }
    env::apply_defaults(&mut ctx.cfg, EnvKind::Example1);
    let base_cfg = ctx.cfg.pagar()?;
    let deltas: Vec<String> = ctx.cfg.list("sweep.deltas")?.unwrap_or_else(|| {
        let mut d: Vec<String> = (0..=13).map(|i| fmt(i as f64 / 5.0)).collect();
        d.push("max".into());
        d
    });
    let omega_points: usize = ctx.cfg.get_or("sweep.omega_points", 101)?;
    let policy_points: usize = ctx.cfg.get_or("sweep.policy_points", 101)?;
    if omega_points < 2 || policy_points < 2 {
        return Err(Failure::Config("sweep.omega_points and sweep.policy_points must be at least 2".into()));
    }
    let irl_budget = budget(&ctx.cfg)?;
    let pool = &ctx.pool;

    with_outputs(&ctx, "example1-sweep", |out| {
        let ex = build_example1();
        let problem = IrlProblem::new(ex.mdp.clone(), ex.family.clone(), ex.demos.clone(), base_cfg.irl_mode, base_cfg.kappa)?;
        let fit = pool.install(|| irl_fit(&problem, &irl_budget))?;
        let delta_values: Vec<f64> = deltas
            .iter()
            .map(|d| match d.as_str() {
                "max" => Ok(fit.best_loss),
                s => s.parse().map_err(|_| Failure::Config(format!("sweep.deltas: cannot parse {s:?}"))),
            })
            .collect::<Result<_, _>>()?;

        let omega_rows: Vec<Vec<String>> = pool.install(|| {
            (0..omega_points)
                .into_par_iter()
                .map(|i| {
                    let w = i as f64 / (omega_points - 1) as f64;
                    Ok(vec![fmt(w), fmt(problem.value(&[w])?)])
                })
                .collect::<Result<_, PagarError>>()
        })?;
        out.write_csv("omega_curve.csv", &["omega".into(), "j_irl".into()], &omega_rows)?;

        let policies: Vec<SoftPolicy> =
            (0..policy_points).map(|i| example1_policy(i as f64 / (policy_points - 1) as f64)).collect();
        let band = example1::SUCCESS_LO..=example1::SUCCESS_HI;
        let rows: Vec<(f64, f64, f64, bool)> = pool.install(|| {
            delta_values
                .par_iter()
                .map(|&delta| {
                    let cfg = PagarConfig { delta, ..base_cfg.clone() };
                    let out = train_with(&problem, &fit.best_params, &ex.task, &cfg, None)?;
                    let p = out.protagonist.probs()[(example1::S0, example1::A2)];
                    let rewards = delta_grid(&problem, delta, omega_points)?;
                    let p_bf = if rewards.is_empty() {
                        f64::NAN
                    } else {
                        let bf = minimax_regret_bruteforce(&ex.mdp, &rewards, &policies)?;
                        bf.best_index as f64 / (policy_points - 1) as f64
                    };
                    debug!("delta {delta}: train {p:.4}, bruteforce {p_bf:.4}");
                    Ok((delta, p, p_bf, ex.task.accepts(&out.protagonist)))
                })
                .collect::<Result<_, PagarError>>()
        })?;
        let csv_rows: Vec<Vec<String>> =
            rows.iter().map(|&(d, p, b, a)| vec![fmt(d), fmt(p), fmt(b), a.to_string()]).collect();
        let header: Vec<String> = ["delta", "p_a2_train", "p_a2_bruteforce", "accepted"].iter().map(|s| s.to_string()).collect();
        out.write_csv("delta_curve.csv", &header, &csv_rows)?;

        let in_band: Vec<f64> = rows.iter().filter(|r| band.contains(&r.1)).map(|r| r.0).collect();
        let metrics = json!({
            "omega_star": fit.best_params[0],
            "delta_star": fit.best_loss,
            "deltas_in_success_band": in_band,
            "success_band": [example1::SUCCESS_LO, example1::SUCCESS_HI],
        });
        Ok((true, metrics))
    })
}

fn suites_from(cfg: &RunConfig) -> Result<Vec<Suite>, Failure> {
    match cfg.list::<String>("verify.suites")? {
        None => Ok(Suite::ALL.to_vec()),
        Some(names) => names.iter().map(|n| n.parse::<Suite>().map_err(Failure::from)).collect(),
    }
}

pub fn verify(ctx: Context<'_>) -> CmdResult {
    let suites = suites_from(&ctx.cfg)?;
    let instances: usize = ctx.cfg.get_or("verify.instances", 50)?;
    if instances == 0 {
        return Err(Failure::Config("verify.instances must be positive".into()));
    }
    let base_seed: u64 = ctx.cfg.get_or("verify.base_seed", ctx.cfg.seed()?)?;
    let replay: Option<u64> = ctx.cfg.get("verify.replay")?;
    let pool = &ctx.pool;

    with_outputs(&ctx, "verify", |out| {
        if let Some(seed) = replay {
            let results: Vec<InstanceResult> = suites.iter().map(|&s| run_instance(s, seed)).collect::<Result<_, _>>()?;
            for r in &results {
                println!("{} seed {}: {}", r.suite.name(), r.seed, if r.passed { "pass" } else { "FAIL" });
            }
            let failed: Vec<&InstanceResult> = results.iter().filter(|r| !r.passed).collect();
            out.write_json("replay.json", &serde_json::to_value(&results).map_err(|e| Failure::Runtime(e.to_string()))?)?;
            let passed = failed.is_empty();
            return Ok((passed, json!({ "replay_seed": seed, "failures": failed.len() })));
        }

        let reports = pool.install(|| {
            suites.par_iter().map(|&s| run_suite(s, instances, base_seed)).collect::<Result<Vec<_>, _>>()
        })?;
        let mut summary = Vec::new();
        let mut counterexamples = Vec::new();
        for r in &reports {
            let seeds: Vec<u64> = r.failures.iter().map(|f| f.seed).collect();
            println!(
                "{}: {} ({} instances from seed {}, {} failures)",
                r.suite.name(),
                if r.passed() { "pass" } else { "FAIL" },
                r.instances,
                r.base_seed,
                seeds.len()
            );
            if !r.passed() {
                warn!("{} failing seeds {:?}", r.suite.name(), seeds);
            }
            summary.push(json!({
                "suite": r.suite.name(),
                "instances": r.instances,
                "base_seed": r.base_seed,
                "passed": r.passed(),
                "failing_seeds": seeds,
            }));
            counterexamples.extend(r.failures.iter().cloned());
        }
        let passed = counterexamples.is_empty();
        out.write_json("verdicts.json", &Value::Array(summary.clone()))?;
        if !passed {
            out.write_json(
                "counterexamples.json",
                &serde_json::to_value(&counterexamples).map_err(|e| Failure::Runtime(e.to_string()))?,
            )?;
        }
        Ok((passed, json!({ "suites": summary })))
    })
}

pub fn random_suite(mut ctx: Context<'_>) -> CmdResult {
    env::apply_defaults(&mut ctx.cfg, EnvKind::Random);
    let base_cfg = ctx.cfg.pagar()?;
    let n: usize = ctx.cfg.get_or("sweep.benchmarks", 10)?;
    if n == 0 {
        return Err(Failure::Config("sweep.benchmarks must be positive".into()));
    }
    let states: usize = ctx.cfg.get_or("env.states", 4)?;
    let actions: usize = ctx.cfg.get_or("env.actions", 2)?;
    let n_demos: usize = ctx.cfg.get_or("env.n_demos", 10)?;
    let reward_grid: usize = ctx.cfg.get_or("sweep.reward_grid", 7)?;
    let policy_grid: usize = ctx.cfg.get_or("sweep.policy_grid", 21)?;
    let frac: f64 = ctx.cfg.get_or("sweep.delta_fraction", 0.25)?;
    if !(0.0..=1.0).contains(&frac) {
        return Err(Failure::Config("sweep.delta_fraction must lie in [0, 1]".into()));
    }
    let seed = ctx.cfg.seed()?;
    let irl_budget = budget(&ctx.cfg)?;
    let pool = &ctx.pool;

    with_outputs(&ctx, "random-suite", |out| {
        let accept_all = TaskSpec::new(|_| true, |_| 0.0);
        let rows: Vec<(u64, usize, f64, f64, f64, bool)> = pool.install(|| {
            (1..=n as u64)
                .into_par_iter()
                .map(|i| {
                    let s = seed.wrapping_add(i);
                    let b = build_random_benchmark(states, actions, n_demos, s)?;
                    let problem = margin_problem(&b.mdp, &b.family, &b.demos)?;
                    let fit = irl_fit(&problem, &irl_budget)?;
                    let jmin = b
                        .family
                        .grid(11)?
                        .iter()
                        .map(|p| problem.value(p))
                        .collect::<Result<Vec<_>, _>>()?
                        .into_iter()
                        .fold(f64::INFINITY, f64::min);
                    let delta = fit.best_loss - frac * (fit.best_loss - jmin);
                    let set = delta_grid(&problem, delta, reward_grid)?;
                    let grid = enumerate_policy_grid(&b.mdp, policy_grid)?;
                    let bf = minimax_regret_bruteforce(&b.mdp, &set, &grid.policies)?;
                    let cfg = PagarConfig { delta, seed: s, ..base_cfg.clone() };
                    let trained = train_on_set(&problem, &set, &accept_all, &cfg, None)?;
                    let (wc, _) = worst_case_regret(&b.mdp, &set, &trained.protagonist)?;
                    let ok = wc - bf.worst_case_regret <= (0.1 * bf.worst_case_regret).max(0.02);
                    info!("benchmark {s}: train {wc:.4}, bruteforce {:.4}", bf.worst_case_regret);
                    Ok((s, set.len(), delta, bf.worst_case_regret, wc, ok))
                })
                .collect::<Result<_, PagarError>>()
        })?;
        let header: Vec<String> = ["seed", "n_rewards", "delta", "bruteforce_regret", "train_regret", "gap", "within_tolerance"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let csv_rows: Vec<Vec<String>> = rows
            .iter()
            .map(|&(s, k, d, bf, wc, ok)| vec![s.to_string(), k.to_string(), fmt(d), fmt(bf), fmt(wc), fmt(wc - bf), ok.to_string()])
            .collect();
        out.write_csv("random_suite.csv", &header, &csv_rows)?;
        let failing: Vec<u64> = rows.iter().filter(|r| !r.5).map(|r| r.0).collect();
        for r in &rows {
            println!("benchmark {}: gap {:.4} ({})", r.0, r.4 - r.3, if r.5 { "pass" } else { "FAIL" });
        }
        Ok((failing.is_empty(), json!({ "benchmarks": n, "failing_seeds": failing })))
    })
}
