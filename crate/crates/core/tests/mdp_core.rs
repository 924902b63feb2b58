mod common;

use common::*;
use nalgebra::DVector;
use pagar_core::envs::{build_random_mdp, example1, example1_mdp, example1_policy};
use pagar_core::mdp::*;
use pagar_core::PagarError;

fn one_state(gamma: f64, na: usize) -> TabularMdp {
    TabularMdp::new(1, na, vec![1.0; na], vec![1.0], vec![false], gamma, None).unwrap()
}

#[test]
fn constructor_rejects_bad_rows() {
    let e = TabularMdp::new(2, 1, vec![0.5, 0.4, 0.0, 1.0], vec![1.0, 0.0], vec![false; 2], 0.9, None);
    assert!(matches!(e, Err(PagarError::InvalidMdp(_))));
    let e = TabularMdp::new(2, 1, vec![1.0, 0.0, 1.0, 0.0], vec![0.7, 0.7], vec![false; 2], 0.9, None);
    assert!(matches!(e, Err(PagarError::InvalidMdp(_))));
    // terminal state 1 must self-loop
    let e = TabularMdp::new(2, 1, vec![0.0, 1.0, 1.0, 0.0], vec![1.0, 0.0], vec![false, true], 0.9, None);
    assert!(matches!(e, Err(PagarError::InvalidMdp(_))));
    let e = TabularMdp::new(1, 1, vec![1.0], vec![1.0], vec![false], 1.5, None);
    assert!(matches!(e, Err(PagarError::InvalidMdp(_))));
}

#[test]
fn undiscounted_needs_horizon() {
    let m = one_state(1.0, 1);
    let r = Table::from_element(1, 1, 1.0);
    let e = policy_utility(&m, &r, &SoftPolicy::uniform(1, 1));
    assert!(matches!(e, Err(PagarError::UndiscountedInfinite)));
    let m = m.with_horizon(Some(4)).unwrap();
    assert_close(policy_utility(&m, &r, &SoftPolicy::uniform(1, 1)).unwrap(), 4.0, 1e-12);
}

#[test]
fn policy_rows_are_distributions() {
    let mut g = rng(1);
    let p = random_policy(5, 3, &mut g).probs();
    for s in 0..5 {
        assert_close(p.row(s).sum(), 1.0, 1e-12);
        assert!(p.row(s).iter().all(|&x| x > 0.0));
    }
}

#[test]
fn utility_zero_reward() {
    let m = build_random_mdp(4, 2, 0.8, 3).unwrap();
    let mut g = rng(2);
    let u = policy_utility(&m, &m.zero_table(), &random_policy(4, 2, &mut g)).unwrap();
    assert_eq!(u, 0.0);
}

#[test]
fn utility_geometric_series() {
    let m = one_state(0.5, 1);
    let u = policy_utility(&m, &Table::from_element(1, 1, 1.0), &SoftPolicy::uniform(1, 1)).unwrap();
    assert_close(u, 2.0, 1e-12);
}

// every path of the chain, weighted by its probability
fn enumerate_return(m: &TabularMdp, r: &Table, pi: &Table, s: usize, depth: usize, horizon: usize) -> f64 {
    if depth == horizon {
        return 0.0;
    }
    let mut total = 0.0;
    for a in 0..m.n_actions() {
        let pa = pi[(s, a)];
        total += pa * r[(s, a)];
        for n in 0..m.n_states() {
            let q = m.p(s, a, n);
            if q > 0.0 {
                total += pa * q * m.gamma() * enumerate_return(m, r, pi, n, depth + 1, horizon);
            }
        }
    }
    total
}

#[test]
fn utility_matches_path_enumeration() {
    let m = sparse_mdp(
        3,
        2,
        &[
            (0, 0, &[(0, 0.3), (1, 0.7)]),
            (0, 1, &[(1, 0.5), (2, 0.5)]),
            (1, 0, &[(2, 1.0)]),
            (1, 1, &[(0, 0.4), (2, 0.6)]),
            (2, 0, &[(2, 0.8), (0, 0.2)]),
            (2, 1, &[(1, 1.0)]),
        ],
        vec![1.0, 0.0, 0.0],
        vec![false; 3],
        0.9,
        Some(10),
    );
    let r = Table::from_row_slice(3, 2, &[0.5, -1.0, 2.0, 0.0, -0.3, 1.0]);
    let mut g = rng(4);
    let pi = random_policy(3, 2, &mut g);
    let oracle = enumerate_return(&m, &r, &pi.probs(), 0, 0, 10);
    assert_close(policy_utility(&m, &r, &pi).unwrap(), oracle, 1e-8);
}

#[test]
fn entropy_closed_forms() {
    for k in [2, 3, 5] {
        let m = one_state(0.9, k);
        let h = policy_entropy(&m, &SoftPolicy::uniform(1, k)).unwrap();
        assert_close(h, (k as f64).ln() / (1.0 - 0.9), 1e-9);
    }
    let m = build_random_mdp(4, 3, 1.0, 5).unwrap();
    let det = SoftPolicy::deterministic(&[0, 1, 2, 0], 3);
    assert!(policy_entropy(&m, &det).unwrap() < 1e-12);
}

#[test]
fn entropy_matches_monte_carlo() {
    let m = build_random_mdp(4, 2, 0.7, 6).unwrap();
    let mut g = rng(7);
    let pi = random_policy(4, 2, &mut g);
    let exact = policy_entropy(&m, &pi).unwrap();
    let trajs = sample_trajectories(&m, &pi, 100_000, 250, 8).unwrap();
    let hs: Vec<f64> = (0..4).map(|s| pi.state_entropy(s)).collect();
    let returns: Vec<f64> = trajs
        .iter()
        .map(|t| t.states.iter().enumerate().map(|(i, &s)| 0.9f64.powi(i as i32) * hs[s]).sum())
        .collect();
    let (mean, se) = mean_se(&returns);
    assert!((mean - exact).abs() < 3.0 * se, "mc {mean} ± {se}, exact {exact}");
}

#[test]
fn soft_vi_closed_forms() {
    let m = build_random_mdp(5, 3, 0.6, 9).unwrap();
    let sol = soft_value_iteration(&m, &m.zero_table(), &SolverOptions::default()).unwrap();
    for s in 0..5 {
        for a in 0..3 {
            assert_close(sol.policy.probs()[(s, a)], 1.0 / 3.0, 1e-9);
        }
    }
    let m = one_state(0.0, 2);
    let r = Table::from_row_slice(1, 2, &[1.0, 0.0]);
    let p = soft_value_iteration(&m, &r, &SolverOptions::default()).unwrap().policy.probs();
    let e = std::f64::consts::E;
    assert_close(p[(0, 0)], e / (e + 1.0), 1e-12);
    assert_close(p[(0, 1)], 1.0 / (e + 1.0), 1e-12);
}

#[test]
fn soft_vi_dominates_random_policies() {
    let m = build_random_mdp(5, 3, 0.6, 10).unwrap();
    let mut g = rng(11);
    let r = random_table(5, 3, &mut g);
    let sol = soft_value_iteration(&m, &r, &SolverOptions::default()).unwrap();
    let best = pagar_core::policy_opt::rl_objective(&m, &r, &sol.policy, 1.0).unwrap();
    for _ in 0..1000 {
        let pi = random_policy(5, 3, &mut g);
        assert!(pagar_core::policy_opt::rl_objective(&m, &r, &pi, 1.0).unwrap() <= best + 1e-9);
    }
}

#[test]
fn soft_values_are_consistent() {
    let m = build_random_mdp(5, 2, 0.6, 12).unwrap();
    let mut g = rng(13);
    let r = random_table(5, 2, &mut g);
    let pi = random_policy(5, 2, &mut g);
    let b = evaluate_policy(&m, &r, &pi, 0.7).unwrap();
    let p = pi.probs();
    for s in 0..5 {
        let mean_q: f64 = (0..2).map(|a| p[(s, a)] * b.soft_q[(s, a)]).sum();
        assert_close(b.soft_v[s], mean_q + 0.7 * pi.state_entropy(s), 1e-9);
        for a in 0..2 {
            assert_close(b.soft_advantage[(s, a)], b.soft_q[(s, a)] - b.soft_v[s], 1e-12);
        }
    }
}

#[test]
fn hard_vi_closed_forms() {
    let m = build_random_mdp(4, 2, 0.6, 14).unwrap();
    let sol = hard_value_iteration(&m, &m.zero_table(), &SolverOptions::default()).unwrap();
    assert!(sol.values.iter().all(|&v| v == 0.0));
    // ties break to action 0
    assert!(sol.actions.iter().all(|&a| a == 0));

    // goal is absorbing but not terminal, so it keeps paying
    let m = sparse_mdp(2, 1, &[(0, 0, &[(1, 1.0)]), (1, 0, &[(1, 1.0)])], vec![1.0, 0.0], vec![false; 2], 0.9, None);
    let r = Table::from_row_slice(2, 1, &[0.0, 1.0]);
    let sol = hard_value_iteration(&m, &r, &SolverOptions::default()).unwrap();
    assert_close(sol.values[0], 9.0, 1e-8);
}

#[test]
fn terminal_pays_once() {
    let m = sparse_mdp(2, 1, &[(0, 0, &[(1, 1.0)]), (1, 0, &[(1, 1.0)])], vec![1.0, 0.0], vec![false, true], 0.9, None);
    let r = Table::from_row_slice(2, 1, &[0.0, 1.0]);
    assert_close(optimal_utility(&m, &r).unwrap(), 0.9, 1e-10);
    assert_close(policy_utility(&m, &r, &SoftPolicy::uniform(2, 1)).unwrap(), 0.9, 1e-12);
}

#[test]
fn hard_vi_dominates_random_policies() {
    let m = build_random_mdp(5, 2, 0.6, 15).unwrap();
    let mut g = rng(16);
    let r = random_table(5, 2, &mut g);
    let v = optimal_utility(&m, &r).unwrap();
    for _ in 0..10_000 {
        let pi = random_policy(5, 2, &mut g);
        assert!(policy_utility(&m, &r, &pi).unwrap() <= v + 1e-9);
    }
}

#[test]
fn occupancy_closed_forms() {
    let rho = state_occupancy(&one_state(0.5, 1), &SoftPolicy::uniform(1, 1)).unwrap();
    assert_close(rho[0], 2.0, 1e-12);
    let m = build_random_mdp(6, 3, 0.5, 17).unwrap();
    let mut g = rng(18);
    let rho = state_occupancy(&m, &random_policy(6, 3, &mut g)).unwrap();
    assert_close(rho.sum(), 10.0, 1e-10);
}

#[test]
fn occupancy_matches_forward_recursion() {
    let m = build_random_mdp(5, 2, 0.6, 19).unwrap();
    let mut g = rng(20);
    let pi = random_policy(5, 2, &mut g);
    let probs = pi.probs();
    let mut d = DVector::from_column_slice(m.initial_dist());
    let mut acc = DVector::zeros(5);
    let mut disc = 1.0;
    for _ in 0..500 {
        acc += &d * disc;
        let mut next = DVector::zeros(5);
        for s in 0..5 {
            for a in 0..2 {
                for n in 0..5 {
                    next[n] += d[s] * probs[(s, a)] * m.p(s, a, n);
                }
            }
        }
        d = next;
        disc *= 0.9;
    }
    let rho = state_occupancy(&m, &pi).unwrap();
    for s in 0..5 {
        assert_close(rho[s], acc[s], 1e-8);
    }
}

#[test]
fn sampling_is_deterministic() {
    let m = build_random_mdp(4, 2, 0.7, 21).unwrap();
    let mut g = rng(22);
    let pi = random_policy(4, 2, &mut g);
    let a = sample_trajectories(&m, &pi, 50, 30, 99).unwrap();
    let b = sample_trajectories(&m, &pi, 50, 30, 99).unwrap();
    assert_eq!(a, b);

    let det = sparse_mdp(3, 2, &[
        (0, 0, &[(1, 1.0)]), (0, 1, &[(2, 1.0)]),
        (1, 0, &[(2, 1.0)]), (1, 1, &[(0, 1.0)]),
        (2, 0, &[(0, 1.0)]), (2, 1, &[(1, 1.0)]),
    ], vec![1.0, 0.0, 0.0], vec![false; 3], 0.9, None);
    let trajs = sample_trajectories(&det, &SoftPolicy::deterministic(&[0, 1, 1], 2), 20, 12, 5).unwrap();
    assert!(trajs.iter().all(|t| *t == trajs[0]));
}

#[test]
fn sample_frequencies_match_occupancy() {
    let m = build_random_mdp(3, 2, 0.8, 23).unwrap();
    let mut g = rng(24);
    let pi = random_policy(3, 2, &mut g);
    let occ = occupancy(&m, &pi).unwrap().state_action;
    let trajs = sample_trajectories(&m, &pi, 100_000, 250, 25).unwrap();
    for s in 0..3 {
        for a in 0..2 {
            let xs: Vec<f64> = trajs
                .iter()
                .map(|t| t.pairs().enumerate().filter(|(_, p)| *p == (s, a)).map(|(i, _)| 0.9f64.powi(i as i32)).sum())
                .collect();
            let (mean, se) = mean_se(&xs);
            assert!((mean - occ[(s, a)]).abs() < 3.0 * se, "({s},{a}): {mean} ± {se} vs {}", occ[(s, a)]);
        }
    }
}

#[test]
fn visit_probability_anchors() {
    let m = build_random_mdp(4, 2, 0.7, 26).unwrap();
    let mut d0 = vec![0.0; 4];
    d0[2] = 1.0;
    let p = m.transition().to_vec();
    let m2 = TabularMdp::new(4, 2, p, d0, vec![false; 4], 0.9, None).unwrap();
    assert_eq!(visit_probability(&m2, &SoftPolicy::uniform(4, 2), 2, 3).unwrap(), 1.0);

    let ex = example1_mdp();
    let hit = visit_probability(&ex, &example1_policy(1.0), example1::S6, 5).unwrap();
    assert_close(hit, 31.0 / 125.0, 1e-12);
}

#[test]
fn visit_probability_matches_monte_carlo() {
    let m = build_random_mdp(4, 2, 0.5, 27).unwrap();
    let mut g = rng(28);
    let pi = random_policy(4, 2, &mut g);
    // a target that is neither certain nor impossible within 3 states
    let (target, exact) = (0..4)
        .map(|s| (s, visit_probability(&m, &pi, s, 3).unwrap()))
        .find(|(_, p)| *p > 0.05 && *p < 0.95)
        .unwrap();
    let trajs = sample_trajectories(&m, &pi, 1_000_000, 3, 29).unwrap();
    let xs: Vec<f64> = trajs.iter().map(|t| if t.states.contains(&target) { 1.0 } else { 0.0 }).collect();
    let (mean, se) = mean_se(&xs);
    assert!((mean - exact).abs() < 3.0 * se, "mc {mean} ± {se}, exact {exact}");
}

#[test]
fn discounted_return_stops_at_terminal() {
    let ex = example1_mdp();
    let r = Table::from_fn(7, 2, |s, _| if s == example1::S6 { 1.0 } else { 0.0 });
    let t = Trajectory::new(vec![0, 2, 6, 6], vec![1, 0, 0]).unwrap();
    assert_close(discounted_return(&ex, &r, &t), 0.99 * 0.99, 1e-12);
}

#[test]
fn random_mdp_is_reachable_and_seeded() {
    let a = build_random_mdp(5, 3, 1.0, 30).unwrap();
    let b = build_random_mdp(5, 3, 1.0, 30).unwrap();
    assert_eq!(a, b);
    for seed in 0..20 {
        let m = build_random_mdp(5, 3, 0.3, seed).unwrap();
        let uniform = SoftPolicy::uniform(5, 3);
        for s in 0..5 {
            assert!(visit_probability(&m, &uniform, s, 5).unwrap() > 0.0, "seed {seed} state {s}");
        }
    }
}
