#![allow(dead_code)]

use pagar_core::mdp::{SoftPolicy, Table, TabularMdp};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_policy(ns: usize, na: usize, rng: &mut impl Rng) -> SoftPolicy {
    SoftPolicy::from_logits(Table::from_fn(ns, na, |_, _| rng.gen_range(-2.0..2.0))).unwrap()
}

pub fn random_table(ns: usize, na: usize, rng: &mut impl Rng) -> Table {
    Table::from_fn(ns, na, |_, _| rng.gen_range(-1.0..1.0))
}

/// MDP from `(s, a) -> [(next, p)]` lists.
pub fn sparse_mdp(
    ns: usize,
    na: usize,
    rows: &[(usize, usize, &[(usize, f64)])],
    d0: Vec<f64>,
    terminal: Vec<bool>,
    gamma: f64,
    horizon: Option<usize>,
) -> TabularMdp {
    let mut p = vec![0.0; ns * na * ns];
    for &(s, a, nexts) in rows {
        for &(n, q) in nexts {
            p[(s * na + a) * ns + n] = q;
        }
    }
    TabularMdp::new(ns, na, p, d0, terminal, gamma, horizon).unwrap()
}

pub fn assert_close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
