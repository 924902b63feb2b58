//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL` line.

mod common;

use std::time::{Duration, Instant};

use common::*;
use pagar_core::alignment::{enumerate_policy_grid, TaskSpec};
use pagar_core::envs::*;
use pagar_core::irl::*;
use pagar_core::mdp::*;
use pagar_core::policy_opt::*;
use pagar_core::reward::IrlObjective;
use pagar_core::solver::*;
use pagar_core::suites::{run_suite, Suite};

fn report(n: usize, ok: bool, started: Instant, budget: Duration, detail: String) {
    let elapsed = started.elapsed();
    let pass = ok && elapsed <= budget;
    println!("criterion {n}: {} ({detail}; {:.2}s of {}s)", if pass { "PASS" } else { "FAIL" }, elapsed.as_secs_f64(), budget.as_secs());
    assert!(pass, "criterion {n} failed: {detail}, {elapsed:?}");
}

fn ex1_problem(ex: &Example1) -> IrlProblem {
    IrlProblem::new(ex.mdp.clone(), ex.family.clone(), ex.demos.clone(), IrlMode::Trajectory, ex.kappa).unwrap()
}

#[test]
fn criterion_1_irl_optimum() {
    let t = Instant::now();
    let ex = build_example1();
    let fit = irl_fit(&ex1_problem(&ex), &IrlBudget::default()).unwrap();
    let omega = fit.best_params[0];
    let ok = (omega - 1.0).abs() <= 0.01 && (fit.best_loss - 2.8).abs() <= 0.5;
    report(1, ok, t, Duration::from_secs(10), format!("omega* = {omega:.4}, delta* = {:.4}", fit.best_loss));
}

#[test]
fn criterion_2_soft_optimum_misses_the_task() {
    let t = Instant::now();
    let ex = build_example1();
    let sol = soft_value_iteration(&ex.mdp, &ex.family.table(&[1.0]), &SolverOptions::with_kappa(ex.kappa)).unwrap();
    let p = sol.policy.probs()[(example1::S0, example1::A2)];
    let branch = visit_probability(&ex.mdp, &example1_policy(1.0), example1::S6, example1::HORIZON).unwrap();
    let soft_hit = visit_probability(&ex.mdp, &sol.policy, example1::S6, example1::HORIZON).unwrap();
    let ok = p > 0.99 && (branch - 31.0 / 125.0).abs() <= 1e-9 && branch < 0.25 && !ex.task.accepts(&sol.policy);
    report(2, ok, t, Duration::from_secs(1), format!("pi(a2|s0) = {p:.6}, hit via a2 = {branch:.12}, hit of soft optimum = {soft_hit:.6}"));
}

#[test]
fn criterion_3_success_band() {
    let t = Instant::now();
    let ex = build_example1();
    let prob = ex1_problem(&ex);
    let fit = irl_fit(&prob, &IrlBudget::default()).unwrap();
    let band = example1::SUCCESS_LO..=example1::SUCCESS_HI + 0.01;
    let policies: Vec<SoftPolicy> = (0..=100).map(|i| example1_policy(i as f64 / 100.0)).collect();
    let cfg = |delta| PagarConfig { delta, kappa: ex.kappa, irl_mode: IrlMode::Trajectory, ..Default::default() };
    let mut ok = true;
    let mut detail = Vec::new();
    for delta in [0.2, 0.4, 0.6, 0.8, 1.0] {
        let out = train_with(&prob, &fit.best_params, &ex.task, &cfg(delta), None).unwrap();
        let p_train = out.protagonist.probs()[(example1::S0, example1::A2)];
        let bf = minimax_regret_bruteforce(&ex.mdp, &delta_grid(&prob, delta, 101).unwrap(), &policies).unwrap();
        let p_bf = bf.best_index as f64 / 100.0;
        ok &= band.contains(&p_train) && band.contains(&p_bf);
        detail.push(format!("{delta}: {p_train:.3}/{p_bf:.2}"));
    }
    let out = train_with(&prob, &fit.best_params, &ex.task, &cfg(fit.best_loss), None).unwrap();
    let p_star = out.protagonist.probs()[(example1::S0, example1::A2)];
    ok &= p_star > 0.9;
    detail.push(format!("delta*: {p_star:.3}"));
    report(3, ok, t, Duration::from_secs(300), format!("train/bruteforce pi(a2|s0) {}", detail.join(", ")));
}

fn suite_criterion(n: usize, suite: Suite, instances: usize, budget: u64) {
    let t = Instant::now();
    let rep = run_suite(suite, instances, 0).unwrap();
    let seeds: Vec<u64> = rep.failures.iter().map(|f| f.seed).collect();
    report(n, rep.passed(), t, Duration::from_secs(budget), format!("{instances} instances, failing seeds {seeds:?}"));
}

#[test]
fn criterion_4_regret_bound_suite() {
    suite_criterion(4, Suite::Theorem2, 100, 60);
}

#[test]
fn criterion_5_equivalence_suite() {
    suite_criterion(5, Suite::Equivalence, 50, 120);
}

#[test]
fn criterion_6_counting_suite() {
    suite_criterion(6, Suite::Theorem1, 20, 120);
}

#[test]
fn criterion_7_solver_matches_oracle() {
    let t = Instant::now();
    let mut ok = true;
    let mut gaps = Vec::new();
    let accept_all = TaskSpec::new(|_| true, |_| 0.0);
    for seed in 1..=10 {
        let b = build_random_benchmark(4, 2, 10, seed).unwrap();
        let prob = margin_problem(&b.mdp, &b.family, &b.demos).unwrap();
        let fit = irl_fit(&prob, &IrlBudget::default()).unwrap();
        let jmin = b.family.grid(11).unwrap().iter().map(|p| prob.value(p).unwrap()).fold(f64::INFINITY, f64::min);
        let delta = fit.best_loss - 0.25 * (fit.best_loss - jmin);
        let set = delta_grid(&prob, delta, 7).unwrap();
        let grid = enumerate_policy_grid(&b.mdp, 21).unwrap();
        let bf = minimax_regret_bruteforce(&b.mdp, &set, &grid.policies).unwrap();
        let cfg = PagarConfig { delta, kappa: 0.05, ..Default::default() };
        let out = train_on_set(&prob, &set, &accept_all, &cfg, None).unwrap();
        let (wc, _) = worst_case_regret(&b.mdp, &set, &out.protagonist).unwrap();
        let gap = wc - bf.worst_case_regret;
        ok &= gap <= (0.1 * bf.worst_case_regret).max(0.02);
        gaps.push(format!("{gap:.4}"));
    }
    report(7, ok, t, Duration::from_secs(600), format!("gaps [{}]", gaps.join(", ")));
}

#[test]
fn criterion_8_numerical_hygiene() {
    let t = Instant::now();
    let (mut grad_err, mut residual, mut norm_err, mut lin_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let fd = |pi: &SoftPolicy, f: &dyn Fn(&SoftPolicy) -> f64| {
        let base = pi.logits().clone();
        Table::from_fn(base.nrows(), base.ncols(), |s, a| {
            let mut up = base.clone();
            up[(s, a)] += 1e-6;
            let mut dn = base.clone();
            dn[(s, a)] -= 1e-6;
            (f(&SoftPolicy::from_logits(up).unwrap()) - f(&SoftPolicy::from_logits(dn).unwrap())) / 2e-6
        })
    };
    let rel = |a: &Table, b: &Table| (a - b).norm() / a.norm().max(b.norm()).max(1e-8);
    for seed in 0..20u64 {
        let horizon = if seed % 2 == 0 { None } else { Some(6) };
        let m = build_random_mdp(5, 3, 0.6, seed).unwrap().with_gamma(0.9).unwrap().with_horizon(horizon).unwrap();
        let mut g = rng(seed + 1000);
        let r = random_table(5, 3, &mut g);
        let r2 = random_table(5, 3, &mut g);
        let pi = random_policy(5, 3, &mut g);
        let anta = random_policy(5, 3, &mut g);
        let cfg = SurrogateConfig::default();

        let rl = rl_gradient(&m, &r, &pi, 0.5).unwrap();
        grad_err = grad_err.max(rel(&rl, &fd(&pi, &|p| rl_objective(&m, &r, p, 0.5).unwrap())));
        let pg = protagonist_gradient(&m, &r, &pi, &anta, None, 0.5, &cfg).unwrap();
        grad_err = grad_err.max(rel(&pg, &fd(&pi, &|p| protagonist_objective(&m, &r, p, &anta, None, 0.5, &cfg).unwrap())));

        if horizon.is_none() {
            let sol = soft_value_iteration(&m, &r, &SolverOptions::with_kappa(0.5)).unwrap();
            residual = residual.max(soft_bellman_residual(&m, &r, &sol.optimal_v, 0.5));
        }
        let occ = occupancy(&m, &pi).unwrap();
        norm_err = norm_err.max((occ.state.sum() - m.discount_mass()).abs());
        let mix = &r * 0.3 - &r2 * 1.7;
        let lhs = policy_utility(&m, &mix, &pi).unwrap();
        let rhs = 0.3 * policy_utility(&m, &r, &pi).unwrap() - 1.7 * policy_utility(&m, &r2, &pi).unwrap();
        lin_err = lin_err.max((lhs - rhs).abs());
    }
    let ok = grad_err < 1e-4 && residual < 1e-10 && norm_err < 1e-10 && lin_err < 1e-9;
    report(
        8,
        ok,
        t,
        Duration::from_secs(60),
        format!("gradient rel err {grad_err:.2e}, residual {residual:.2e}, normalization {norm_err:.2e}, linearity {lin_err:.2e}"),
    );
}

#[test]
fn criterion_9_gridworld_imitation() {
    let t = Instant::now();
    let w = build_gridworld(&GridworldSpec::default()).unwrap();
    let opt = hard_value_iteration(&w.mdp, &w.hidden_reward, &SolverOptions::default()).unwrap();
    let target = goal_reach_probability(&w, &opt.policy).unwrap();
    let prob = IrlProblem::new(w.mdp.clone(), w.family.clone(), w.demos.clone(), IrlMode::Margin, 0.05).unwrap();
    let fit = irl_fit(&prob, &IrlBudget::default()).unwrap();
    let delta = fit.best_loss - 0.1 * fit.best_loss.abs().max(0.1);
    let set = delta_grid(&prob, delta, 11).unwrap();
    let cfg = PagarConfig { delta, kappa: 0.05, leader_temperature: 0.05, ..Default::default() };
    let out = train_on_set(&prob, &set, &w.task, &cfg, None).unwrap();
    let reach = goal_reach_probability(&w, &out.protagonist).unwrap();
    report(
        9,
        (reach - target).abs() <= 0.05,
        t,
        Duration::from_secs(300),
        format!("{} demos, reach {reach:.4}, optimum {target:.4}", w.demos.len()),
    );
}
