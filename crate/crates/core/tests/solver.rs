mod common;

use std::sync::Arc;

use common::*;
use pagar_core::alignment::TaskSpec;
use pagar_core::envs::*;
use pagar_core::irl::*;
use pagar_core::mdp::*;
use pagar_core::reward::*;
use pagar_core::solver::*;

const G: f64 = example1::GAMMA;

/// Hand-derived Example-1 utilities of the a1 and a2 branches under `r_ω`.
/// a1 reaches s6 at t = 2. a2 sits in s2 from t = 1, staying w.p. 1/5 and
/// reaching s6 w.p. 1/5 per step, over steps t ≤ 4.
fn ex1_branch_utilities(omega: f64) -> (f64, f64) {
    let a1_r2 = G.powi(2);
    let a2_r1: f64 = (1..=4).map(|t| G.powi(t) * 0.2f64.powi(t - 1)).sum();
    let a2_r2: f64 = (2..=4).map(|t| G.powi(t) * 0.2f64.powi(t - 1)).sum();
    ((1.0 - omega) * a1_r2, omega * a2_r1 + (1.0 - omega) * a2_r2)
}

fn point(family: &RewardFamily, params: &[f64]) -> RewardPoint {
    family.materialize(params).unwrap()
}

fn ex1_problem() -> (Example1, IrlProblem) {
    let ex = build_example1();
    let prob = IrlProblem::new(ex.mdp.clone(), ex.family.clone(), ex.demos.clone(), IrlMode::Trajectory, ex.kappa).unwrap();
    (ex, prob)
}

fn ex1_config(delta: f64) -> PagarConfig {
    PagarConfig { delta, kappa: example1::KAPPA, irl_mode: IrlMode::Trajectory, ..Default::default() }
}

#[test]
fn regret_trivial_cases() {
    let m = build_random_mdp(5, 3, 0.6, 1).unwrap();
    let mut g = rng(2);
    let fam = RewardFamily::new(vec![random_table(5, 3, &mut g)], vec![(-1.0, 1.0)]).unwrap();
    let p = point(&fam, &[0.7]);
    let opt = hard_value_iteration(&m, &p.table, &SolverOptions::default()).unwrap();
    let rep = regret(&m, &p, &opt.policy).unwrap();
    assert!(rep.regret.abs() < 1e-8);
    assert_eq!(rep.witness_reward_params, vec![0.7]);
    let zero = point(&fam, &[0.0]);
    for _ in 0..20 {
        let pi = random_policy(5, 3, &mut g);
        assert!(regret(&m, &zero, &pi).unwrap().regret.abs() < 1e-12);
        assert!(regret(&m, &p, &pi).unwrap().regret >= -1e-8);
    }
}

#[test]
fn example1_regret_closed_form() {
    let ex = build_example1();
    for omega in [0.0, 0.3, 0.5, 1.0] {
        let (u1, u2) = ex1_branch_utilities(omega);
        let r = point(&ex.family, &[omega]);
        for p in [0.0, 0.25, 1.0] {
            let rep = regret(&ex.mdp, &r, &example1_policy(p)).unwrap();
            assert_close(rep.antagonist_utility, u1.max(u2), 1e-12);
            assert_close(rep.protagonist_utility, (1.0 - p) * u1 + p * u2, 1e-12);
        }
    }
    // r_{ω=0} with π(a2|s0) = 1 loses the whole gap between the branches
    let rep = regret(&ex.mdp, &point(&ex.family, &[0.0]), &example1_policy(1.0)).unwrap();
    let want = G.powi(2) - (0.2 * G.powi(2) + 0.04 * G.powi(3) + 0.008 * G.powi(4));
    assert_close(rep.regret, want, 1e-12);
}

#[test]
fn bruteforce_trivial_cases() {
    let ex = build_example1();
    let policies: Vec<SoftPolicy> = (0..=10).map(|i| example1_policy(i as f64 / 10.0)).collect();
    // singleton: the grid policy closest to the optimum
    let bf = minimax_regret_bruteforce(&ex.mdp, &[point(&ex.family, &[0.0])], &policies).unwrap();
    assert_eq!(bf.best_index, 0);
    assert!(bf.worst_case_regret.abs() < 1e-12);
    let bf = minimax_regret_bruteforce(&ex.mdp, &[point(&ex.family, &[1.0])], &policies).unwrap();
    assert_eq!(bf.best_index, 10);

    // every reward shares the optimum a1 when ω ≤ 0.3
    let rewards: Vec<RewardPoint> = (0..=3).map(|i| point(&ex.family, &[i as f64 / 10.0])).collect();
    let bf = minimax_regret_bruteforce(&ex.mdp, &rewards, &policies).unwrap();
    assert_eq!(bf.best_index, 0);
    assert!(bf.worst_case_regret.abs() < 1e-12);

    assert!(minimax_regret_bruteforce(&ex.mdp, &[], &policies).is_err());
    assert!(minimax_regret_bruteforce(&ex.mdp, &rewards, &[]).is_err());
    let many = vec![point(&ex.family, &[0.5]); 100_001];
    let pols = vec![example1_policy(0.5); 101];
    assert!(matches!(minimax_regret_bruteforce(&ex.mdp, &many, &pols), Err(pagar_core::error::PagarError::Guard(_))));
}

#[test]
fn bruteforce_matches_hand_oracle_on_example1() {
    let (ex, prob) = ex1_problem();
    let policies: Vec<SoftPolicy> = (0..=100).map(|i| example1_policy(i as f64 / 100.0)).collect();
    for delta in [0.2, 0.6, 1.0, 1.1, 1.5] {
        let rewards = delta_grid(&prob, delta, 101).unwrap();
        let bf = minimax_regret_bruteforce(&ex.mdp, &rewards, &policies).unwrap();
        // independent oracle: regret is linear in p for each ω
        let mut best = (f64::INFINITY, 0);
        for i in 0..=100 {
            let p = i as f64 / 100.0;
            let worst = rewards
                .iter()
                .map(|r| {
                    let (u1, u2) = ex1_branch_utilities(r.params[0]);
                    u1.max(u2) - ((1.0 - p) * u1 + p * u2)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            if worst < best.0 - 1e-12 {
                best = (worst, i);
            }
        }
        assert_eq!(bf.best_index, best.1, "delta {delta}");
        assert_close(bf.worst_case_regret, best.0, 1e-10);
        if delta <= 1.0 {
            let p = bf.best_index as f64 / 100.0;
            assert!((example1::SUCCESS_LO..=example1::SUCCESS_HI).contains(&p), "delta {delta}: p* = {p}");
        }
    }
}

#[test]
fn worst_case_regret_agrees_with_bruteforce() {
    let b = build_random_benchmark(4, 2, 10, 3).unwrap();
    let rewards: Vec<RewardPoint> = b.family.grid(5).unwrap().iter().map(|p| point(&b.family, p)).collect();
    let mut g = rng(4);
    let policies: Vec<SoftPolicy> = (0..30).map(|_| random_policy(4, 2, &mut g)).collect();
    let bf = minimax_regret_bruteforce(&b.mdp, &rewards, &policies).unwrap();
    for (i, pi) in policies.iter().enumerate() {
        let (w, arg) = worst_case_regret(&b.mdp, &rewards, pi).unwrap();
        assert_close(w, bf.max_regrets[i], 1e-10);
        assert_close(regret(&b.mdp, &rewards[arg], pi).unwrap().regret, w, 1e-10);
    }
    assert!(bf.max_regrets.iter().all(|&m| m >= bf.worst_case_regret));
}

#[test]
fn bound_losses_trivial_cases() {
    let m = build_random_mdp(4, 3, 0.7, 5).unwrap();
    let mut g = rng(6);
    let r = random_table(4, 3, &mut g);
    let pa = random_policy(4, 3, &mut g);
    let pp = random_policy(4, 3, &mut g);
    let zero = m.zero_table();
    let rmax = r.amax();
    // every state is visited, so the penalty sees the full table
    assert_close(j_pagar_r1(&m, &r, &pa, &pa, None, 0.7).unwrap(), 0.7 * rmax, 1e-12);
    assert_close(j_pagar_r2(&m, &r, &pa, &pa, None, -0.3).unwrap(), -0.3 * rmax, 1e-12);
    assert_eq!(j_pagar_r1(&m, &zero, &pp, &pa, None, 1.0).unwrap(), 0.0);
    assert_eq!(j_pagar_r2(&m, &zero, &pp, &pa, None, 1.0).unwrap(), 0.0);
    assert_eq!(j_pagar_r3(&m, &zero, &pp, &pa, None, None, 0.2).unwrap(), 0.0);
    assert_eq!(j_pagar_r4(&m, &zero, &pp, None, 0.2).unwrap(), 0.0);
    assert!(max_kl(&m, &pa, &pa, None).unwrap().abs() < 1e-15);
    let big = r.map(|x| x * 100.0);
    assert!(j_pagar_r3(&m, &big, &pp, &pa, None, None, 0.2).is_err());
    assert!(j_pagar_r1(&m, &r, &pp, &pa, Some(&[]), 0.0).is_err());
}

#[test]
fn bound_losses_match_direct_sums() {
    let mut g = rng(7);
    for seed in 0..5 {
        let m = build_random_mdp(4, 2, 0.8, seed + 10).unwrap();
        let r = random_table(4, 2, &mut g);
        let pa = random_policy(4, 2, &mut g);
        let pp = random_policy(4, 2, &mut g);
        let (qa, qp) = (pa.probs(), pp.probs());
        let rho_a = state_occupancy(&m, &pa).unwrap();
        let rho_p = state_occupancy(&m, &pp).unwrap();
        let mut r1 = 0.0;
        let mut r2 = 0.0;
        let mut kl: f64 = 0.0;
        for s in 0..4 {
            let mut k = 0.0;
            for a in 0..2 {
                r1 += rho_a[s] * (qp[(s, a)] - qa[(s, a)]) * r[(s, a)];
                r2 += rho_p[s] * (qp[(s, a)] - qa[(s, a)]) * r[(s, a)];
                k += qa[(s, a)] * (qa[(s, a)] / qp[(s, a)]).ln();
            }
            kl = kl.max(k);
        }
        assert_close(j_pagar_r1(&m, &r, &pp, &pa, None, 0.0).unwrap(), r1, 1e-10);
        assert_close(j_pagar_r2(&m, &r, &pp, &pa, None, 0.0).unwrap(), r2, 1e-10);
        assert_close(max_kl(&m, &pp, &pa, None).unwrap(), kl, 1e-12);
    }
}

#[test]
fn sampled_bound_loss_is_unbiased() {
    let m = build_random_mdp(4, 2, 0.8, 20).unwrap();
    let mut g = rng(21);
    let r = random_table(4, 2, &mut g);
    let pa = random_policy(4, 2, &mut g);
    let pp = random_policy(4, 2, &mut g);
    let exact = j_pagar_r1(&m, &r, &pp, &pa, None, 0.0).unwrap();
    let trajs = sample_trajectories(&m, &pa, 4000, 250, 22).unwrap();
    let per: Vec<f64> = trajs.iter().map(|t| j_pagar_r1(&m, &r, &pp, &pa, Some(std::slice::from_ref(t)), 0.0).unwrap()).collect();
    let (mean, se) = mean_se(&per);
    assert!((mean - exact).abs() < 4.0 * se, "{mean} vs {exact} (se {se})");
}

#[test]
fn exponential_ratio_losses() {
    let m = build_random_mdp(4, 2, 0.8, 23).unwrap();
    let mut g = rng(24);
    let pa = SoftPolicy::uniform(4, 2);
    let pp = random_policy(4, 2, &mut g);
    let wp = occupancy(&m, &pp).unwrap().state_action;
    let wa = occupancy(&m, &pa).unwrap().state_action;
    // ξ3 = 2 e^r stays inside [0.01, 1.99] for r in [−1, −0.01]: clipping is inactive
    let r = Table::from_fn(4, 2, |_, _| -g_range(&mut g, 0.01, 1.0));
    let unclipped: f64 = (0..4).flat_map(|s| (0..2).map(move |a| (s, a))).map(|(s, a)| wa[(s, a)] * 2.0 * r[(s, a)].exp() * r[(s, a)]).sum();
    assert_close(j_pagar_r3(&m, &r, &pp, &pa, None, None, 0.99).unwrap(), wp.dot(&r) - unclipped, 1e-10);

    // for r ≥ 0 the clipped term never exceeds the unclipped one
    let r = Table::from_fn(4, 2, |_, _| g_range(&mut g, 0.0, 2.0));
    let clipped_term = wp.dot(&r) - j_pagar_r3(&m, &r, &pp, &pa, None, None, 0.2).unwrap();
    let unclipped: f64 = (0..4).flat_map(|s| (0..2).map(move |a| (s, a))).map(|(s, a)| wa[(s, a)] * 2.0 * r[(s, a)].exp() * r[(s, a)]).sum();
    assert!(clipped_term <= unclipped + 1e-10);
    let qp = pp.probs();
    let unclipped4: f64 = (0..4).flat_map(|s| (0..2).map(move |a| (s, a))).map(|(s, a)| wp[(s, a)] * r[(s, a)].exp() / qp[(s, a)] * r[(s, a)]).sum();
    assert!(wp.dot(&r) - j_pagar_r4(&m, &r, &pp, None, 0.2).unwrap() <= unclipped4 + 1e-10);
}

fn g_range(g: &mut impl rand::Rng, lo: f64, hi: f64) -> f64 {
    g.gen_range(lo..hi)
}

#[test]
fn theorem2_bounds_hold_on_random_mdps() {
    let mut g = rng(25);
    for seed in 0..20 {
        let ns = 2 + (seed as usize % 5);
        let na = 2 + (seed as usize % 2);
        let m = build_random_mdp(ns, na, 0.7, seed).unwrap().with_gamma(0.5 + 0.02 * seed as f64).unwrap();
        let r = random_table(ns, na, &mut g);
        let pi1 = random_policy(ns, na, &mut g);
        let c = theorem2_check(&m, &r, &pi1, 0.5).unwrap();
        assert!(c.holds(1e-8), "seed {seed}: {c:?}");
        assert!((0.0..=1.0).contains(&c.alpha));
    }
    // identical policies: both sides vanish
    let m = build_random_mdp(4, 2, 0.7, 99).unwrap();
    let r = random_table(4, 2, &mut g);
    let opt = soft_value_iteration(&m, &r, &SolverOptions::with_kappa(0.5)).unwrap().policy;
    let c = theorem2_check(&m, &r, &opt, 0.5).unwrap();
    assert!(c.alpha < 1e-9 && c.lhs_pi1 < 1e-9 && c.lhs_pi2 < 1e-9);
    let ex = build_example1();
    assert!(theorem2_check(&ex.mdp, &ex.family.table(&[0.5]), &example1_policy(0.5), 0.5).is_err());
}

#[test]
fn lambda_update_closed_forms() {
    assert_eq!(lambda_update(3.0, 0.5, 1.2, 1.2, None), 3.0);
    assert_eq!(lambda_update(3.0, 0.0, -5.0, 1.2, None), 3.0);
    // violated constraint (J < δ) grows λ by exp(μ g) per step
    let (mu, gap) = (0.3, 0.25);
    let mut lam = 2.0;
    for n in 1..=10 {
        lam = lambda_update(lam, mu, 1.0 - gap, 1.0, None);
        assert_close(lam, 2.0 * (n as f64 * mu * gap).exp(), 1e-12);
    }
    assert!(lambda_update(2.0, 0.5, 2.0, 1.0, None) < 2.0);
    assert_eq!(lambda_update(2.0, 0.5, 100.0, 1.0, Some(1.5)), 1.5);
    assert_eq!(lagrangian_penalty(4.0, 0.5, 1.0), 2.0);
    assert_eq!(lagrangian_penalty(4.0, 1.5, 1.0), 0.0);
}

#[test]
fn reward_step_follows_the_constraint_when_lambda_is_huge() {
    let b = build_random_benchmark(4, 2, 10, 8).unwrap();
    let prob = margin_problem(&b.mdp, &b.family, &b.demos).unwrap();
    let x = b.family.centre();
    let j0 = prob.value(&x).unwrap();
    let cfg = PagarConfig { delta: j0 + 10.0, ..Default::default() };
    let pro = SoftPolicy::uniform(4, 2);
    let ant = soft_value_iteration(&b.mdp, &b.family.table(&x), &SolverOptions::default()).unwrap().policy;
    let ctx = RewardContext { mdp: &b.mdp, irl: &prob, protagonist: &pro, antagonist: &ant, samples_p: None, samples_a: None, cfg: &cfg, lambda: 1e8 };
    let next = reward_step(&ctx, &x, 1e-10).unwrap();
    let dir: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
    let h = 1e-6;
    let grad: Vec<f64> = (0..2)
        .map(|i| {
            let mut up = x.clone();
            up[i] += h;
            let mut dn = x.clone();
            dn[i] -= h;
            (prob.value(&up).unwrap() - prob.value(&dn).unwrap()) / (2.0 * h)
        })
        .collect();
    let dot: f64 = dir.iter().zip(&grad).map(|(a, b)| a * b).sum();
    let norms = dir.iter().map(|v| v * v).sum::<f64>().sqrt() * grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(dot / norms > 0.99, "cosine {}", dot / norms);
    assert!(reward_step(&ctx, &[5.0, 0.0], 0.1).is_err());
}

#[test]
fn reward_step_with_matching_policies_and_no_penalty_stays_put() {
    let b = build_random_benchmark(4, 2, 10, 9).unwrap();
    let prob = margin_problem(&b.mdp, &b.family, &b.demos).unwrap();
    let cfg = PagarConfig { delta: -1e9, reward_objective: RewardObjective::Surrogate, ..Default::default() };
    let pi = SoftPolicy::uniform(4, 2);
    let ctx = RewardContext { mdp: &b.mdp, irl: &prob, protagonist: &pi, antagonist: &pi, samples_p: None, samples_a: None, cfg: &cfg, lambda: 1.0 };
    let x = vec![0.3, -0.2];
    assert_eq!(ctx.j_pagar(&x).unwrap(), 0.0);
    assert_eq!(reward_step(&ctx, &x, 0.5).unwrap(), x);
}

#[test]
fn reward_steps_descend_on_example1() {
    let (ex, prob) = ex1_problem();
    let cfg = PagarConfig { delta: -1e9, ..ex1_config(-1e9) };
    let pro = example1_policy(0.5);
    let mut x = vec![0.5];
    let ant = soft_value_iteration(&ex.mdp, &ex.family.table(&x), &SolverOptions::with_kappa(ex.kappa)).unwrap().policy;
    let ctx = RewardContext { mdp: &ex.mdp, irl: &prob, protagonist: &pro, antagonist: &ant, samples_p: None, samples_a: None, cfg: &cfg, lambda: 1.0 };
    let start = ctx.j_pagar(&x).unwrap();
    let mut last = start;
    for _ in 0..10 {
        x = reward_step(&ctx, &x, 0.05).unwrap();
        let now = ctx.j_pagar(&x).unwrap();
        assert!(now <= last + 1e-12);
        last = now;
    }
    assert!(last < start - 1e-3, "{last} vs {start}");
}

#[test]
fn reward_search_stays_feasible() {
    let (ex, prob) = ex1_problem();
    let fit = irl_fit(&prob, &IrlBudget::default()).unwrap();
    for delta in [0.5, 1.5, 2.5] {
        let cfg = ex1_config(delta);
        let pro = example1_policy(0.3);
        let ant = SoftPolicy::uniform(7, 2);
        let ctx = RewardContext { mdp: &ex.mdp, irl: &prob, protagonist: &pro, antagonist: &ant, samples_p: None, samples_a: None, cfg: &cfg, lambda: 10.0 };
        let best = reward_search(&ctx, &[vec![0.0], vec![0.5], vec![1.0]], &fit.best_params).unwrap();
        assert!(prob.value(&best).unwrap() >= delta - 1e-6);
        // a p = 0.3 protagonist is hurt most by the largest feasible ω
        let members = delta_grid(&prob, delta, 101).unwrap();
        let worst = members.iter().map(|r| ctx.j_pagar(&r.params).unwrap()).fold(f64::INFINITY, f64::min);
        assert!(ctx.j_pagar(&best).unwrap() <= worst + 1e-3);
    }
}

#[test]
fn config_validation() {
    assert!(PagarConfig::default().validate().is_ok());
    for bad in [
        PagarConfig { lambda0: 0.0, ..Default::default() },
        PagarConfig { mu: -1.0, ..Default::default() },
        PagarConfig { clip: 1.0, ..Default::default() },
        PagarConfig { kappa: 0.0, ..Default::default() },
        PagarConfig { batch_size: 0, ..Default::default() },
        PagarConfig { average_tail: 1.5, ..Default::default() },
        PagarConfig { delta: f64::NAN, ..Default::default() },
        PagarConfig { leader_temperature: 0.0, ..Default::default() },
    ] {
        assert!(bad.validate().is_err());
    }
    assert_eq!("natural".parse::<ProtagonistMode>().unwrap(), ProtagonistMode::Natural);
    assert!("bogus".parse::<Estimator>().is_err());
}

#[test]
fn zero_iterations_return_the_initial_policy() {
    let (ex, prob) = ex1_problem();
    let init = example1_policy(0.17);
    let cfg = PagarConfig { iterations: 0, ..ex1_config(1.0) };
    let out = train_with(&prob, &[1.0], &ex.task, &cfg, Some(init.clone())).unwrap();
    assert_eq!(out.protagonist.probs(), init.probs());
    assert!(out.trace.records.is_empty());
    assert!(train_on_set(&prob, &[], &ex.task, &cfg, None).is_err());
}

#[test]
fn training_is_deterministic_and_traced() {
    let b = build_random_benchmark(4, 2, 10, 11).unwrap();
    let prob = margin_problem(&b.mdp, &b.family, &b.demos).unwrap();
    let task = TaskSpec::new(|_| true, |_| 0.0).with_metrics(vec!["one".into()], |_| vec![1.0]);
    for protagonist in [ProtagonistMode::Leader, ProtagonistMode::Gradient, ProtagonistMode::Natural] {
        let cfg = PagarConfig { delta: -1.0, iterations: 12, seed: 5, protagonist, ..Default::default() };
        let a = train_with(&prob, &[0.0, 0.0], &task, &cfg, None).unwrap();
        let b2 = train_with(&prob, &[0.0, 0.0], &task, &cfg, None).unwrap();
        assert_eq!(a.protagonist.probs(), b2.protagonist.probs());
        assert_eq!(a.reward_params, b2.reward_params);
        assert_eq!(a.trace.records.len(), 12);
        assert_eq!(a.trace.csv_header(), vec!["iter", "lambda", "irl_loss", "j_pagar", "regret_estimate", "task_metric_1"]);
        let rows = a.trace.csv_rows();
        assert_eq!(rows.len(), 12);
        assert!(rows.iter().all(|r| r.len() == 6 && r[5] == "1"));
        for rec in &a.trace.records {
            assert!(rec.irl_loss >= cfg.delta - 1e-6);
            assert!(rec.regret_estimate >= -1e-8);
        }
    }
}

#[test]
fn lambda_tracks_the_constraint() {
    let b = build_random_benchmark(4, 2, 10, 12).unwrap();
    let prob = margin_problem(&b.mdp, &b.family, &b.demos).unwrap();
    let task = TaskSpec::new(|_| true, |_| 0.0);
    let top = irl_fit(&prob, &IrlBudget::default()).unwrap().best_loss;
    // infeasible δ: persistent violation must keep raising λ
    let cfg = PagarConfig { delta: top + 1.0, iterations: 15, reward_update: RewardUpdate::Step, estimator: Estimator::Exact, ..Default::default() };
    let out = train_with(&prob, &[0.0, 0.0], &task, &cfg, None).unwrap();
    let lams: Vec<f64> = out.trace.records.iter().map(|r| r.lambda).collect();
    assert!(lams[5..].windows(2).all(|w| w[1] > w[0]));
    // feasible iterates shrink it
    let cfg = PagarConfig { delta: top - 1.0, iterations: 10, ..cfg };
    let out = train_with(&prob, &[0.0, 0.0], &task, &cfg, None).unwrap();
    for rec in &out.trace.records {
        if rec.irl_loss >= cfg.delta - 1e-3 {
            assert!(rec.lambda <= cfg.lambda0 + 1e-12);
        }
    }
}

#[test]
fn example1_training_success_band() {
    let (ex, prob) = ex1_problem();
    let fit = irl_fit(&prob, &IrlBudget::default()).unwrap();
    let out = train_with(&prob, &fit.best_params, &ex.task, &ex1_config(1.0), None).unwrap();
    let p = out.protagonist.probs()[(example1::S0, example1::A2)];
    assert!((example1::SUCCESS_LO..=example1::SUCCESS_HI + 0.01).contains(&p), "p = {p}");
    assert!(ex.task.accepts(&out.protagonist));

    let out = train_with(&prob, &fit.best_params, &ex.task, &ex1_config(fit.best_loss), None).unwrap();
    assert!(out.protagonist.probs()[(example1::S0, example1::A2)] > 0.9);
}

#[test]
fn random_benchmark_gap_against_oracle() {
    let b = build_random_benchmark(4, 2, 10, 1).unwrap();
    let prob = margin_problem(&b.mdp, &b.family, &b.demos).unwrap();
    let fit = irl_fit(&prob, &IrlBudget::default()).unwrap();
    let jmin = b.family.grid(11).unwrap().iter().map(|p| prob.value(p).unwrap()).fold(f64::INFINITY, f64::min);
    let delta = fit.best_loss - 0.25 * (fit.best_loss - jmin);
    let set = delta_grid(&prob, delta, 7).unwrap();
    let grid = pagar_core::alignment::enumerate_policy_grid(&b.mdp, 21).unwrap();
    let bf = minimax_regret_bruteforce(&b.mdp, &set, &grid.policies).unwrap();
    let cfg = PagarConfig { delta, kappa: 0.05, ..Default::default() };
    let out = train_on_set(&prob, &set, &TaskSpec::new(|_| true, |_| 0.0), &cfg, None).unwrap();
    let (wc, _) = worst_case_regret(&b.mdp, &set, &out.protagonist).unwrap();
    assert!(wc - bf.worst_case_regret <= (0.1 * bf.worst_case_regret).max(0.02), "{wc} vs {}", bf.worst_case_regret);
}

#[test]
fn policy_from_occupancy_recovers_the_policy() {
    let m = build_random_mdp(5, 3, 0.6, 13).unwrap();
    let pi = random_policy(5, 3, &mut rng(14));
    let occ = occupancy(&m, &pi).unwrap().state_action;
    let back = policy_from_occupancy(&occ, &SoftPolicy::uniform(5, 3)).unwrap();
    assert!((back.probs() - pi.probs()).amax() < 1e-12);
    // unvisited states keep the fallback
    let ex = build_example1();
    let occ = occupancy(&ex.mdp, &example1_policy(0.0)).unwrap().state_action;
    let back = policy_from_occupancy(&occ, &example1_policy(0.3)).unwrap();
    assert_close(back.probs()[(example1::S2, 0)], 0.5, 1e-15);
    assert_close(back.probs()[(example1::S0, example1::A2)], 0.0, 1e-15);
}

#[test]
fn delta_grid_membership() {
    let (_, prob) = ex1_problem();
    let obj: Arc<dyn IrlObjective> = Arc::new(prob.clone());
    let set = DeltaRewardSet::new(obj, 1.1);
    let members = delta_grid(&prob, 1.1, 101).unwrap();
    assert!(!members.is_empty() && members.len() < 101);
    for m in &members {
        assert!(set.membership(&m.params).unwrap().member);
    }
}
