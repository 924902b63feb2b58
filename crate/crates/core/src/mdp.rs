//! Exact tabular MDP machinery.
//!
//! Reward and Q tables are `(state, action)` matrices. All soft quantities take an
//! entropy temperature `kappa`; with `kappa = 1` they are the usual
//! `J_RL = U + H` quantities.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PagarError, Result};

pub type Table = DMatrix<f64>;

/// Probabilities below this are stored as this when building logits.
pub const PROB_FLOOR: f64 = 1e-300;

const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    // flattened (s, a, s')
    transition: Vec<f64>,
    initial_dist: Vec<f64>,
    terminal: Vec<bool>,
    gamma: f64,
    horizon: Option<usize>,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        initial_dist: Vec<f64>,
        terminal: Vec<bool>,
        gamma: f64,
        horizon: Option<usize>,
    ) -> Result<Self> {
        let bad = |m: String| Err(PagarError::InvalidMdp(m));
        if n_states == 0 || n_actions == 0 {
            return bad("empty state or action space".into());
        }
        if transition.len() != n_states * n_actions * n_states {
            return bad(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            ));
        }
        if initial_dist.len() != n_states || terminal.len() != n_states {
            return bad("initial_dist/terminal length mismatch".into());
        }
        if !(0.0..=1.0).contains(&gamma) {
            return bad(format!("gamma {gamma} outside [0, 1]"));
        }
        if horizon == Some(0) {
            return bad("horizon must be at least 1".into());
        }
        if transition.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad("transition has negative or non-finite entries".into());
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transition[(s * n_actions + a) * n_states..][..n_states];
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return bad(format!("row ({s}, {a}) sums to {sum}"));
                }
                if terminal[s] && (row[s] - 1.0).abs() > STOCHASTIC_TOL {
                    return bad(format!("terminal state {s} does not self-loop"));
                }
            }
        }
        if initial_dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad("initial_dist has negative entries".into());
        }
        let d0: f64 = initial_dist.iter().sum();
        if (d0 - 1.0).abs() > STOCHASTIC_TOL {
            return bad(format!("initial_dist sums to {d0}"));
        }
        Ok(Self { n_states, n_actions, transition, initial_dist, terminal, gamma, horizon })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> Option<usize> {
        self.horizon
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn terminal(&self) -> &[bool] {
        &self.terminal
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    /// Next-state distribution for `(s, a)`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let ns = self.n_states;
        &self.transition[(s * self.n_actions + a) * ns..][..ns]
    }

    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.row(s, a)[next]
    }

    pub fn with_horizon(mut self, horizon: Option<usize>) -> Result<Self> {
        if horizon == Some(0) {
            return Err(PagarError::InvalidMdp("horizon must be at least 1".into()));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(PagarError::InvalidMdp(format!("gamma {gamma} outside [0, 1]")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    fn check_solvable(&self) -> Result<()> {
        if self.horizon.is_none() && self.gamma >= 1.0 {
            return Err(PagarError::UndiscountedInfinite);
        }
        Ok(())
    }

    /// Σ_t γ^t over the evaluation window.
    pub fn discount_mass(&self) -> f64 {
        match self.horizon {
            Some(h) => (0..h).map(|t| self.gamma.powi(t as i32)).sum(),
            None => 1.0 / (1.0 - self.gamma),
        }
    }

    pub fn zero_table(&self) -> Table {
        Table::zeros(self.n_states, self.n_actions)
    }

    /// `Σ_{s'} P(s'|s,a) v(s')` for every `(s, a)`; zero at terminal states, which
    /// pay their reward once and then stop.
    pub fn expect_next(&self, v: &DVector<f64>) -> Table {
        let mut out = self.zero_table();
        for s in (0..self.n_states).filter(|&s| !self.terminal[s]) {
            for a in 0..self.n_actions {
                out[(s, a)] = self.row(s, a).iter().zip(v.iter()).map(|(p, x)| p * x).sum();
            }
        }
        out
    }

    /// State-to-state matrix under `policy`, with terminal rows zeroed.
    pub fn policy_transition(&self, probs: &Table) -> DMatrix<f64> {
        let ns = self.n_states;
        let mut m = DMatrix::zeros(ns, ns);
        for s in (0..ns).filter(|&s| !self.terminal[s]) {
            for a in 0..self.n_actions {
                let pa = probs[(s, a)];
                if pa == 0.0 {
                    continue;
                }
                for (n, p) in self.row(s, a).iter().enumerate() {
                    m[(s, n)] += pa * p;
                }
            }
        }
        m
    }

    /// One forward step of a state distribution.
    fn push_forward(&self, d: &DVector<f64>, probs: &Table) -> DVector<f64> {
        let mut next = DVector::zeros(self.n_states);
        for s in 0..self.n_states {
            if d[s] == 0.0 || self.terminal[s] {
                continue;
            }
            for a in 0..self.n_actions {
                let w = d[s] * probs[(s, a)];
                for (n, p) in self.row(s, a).iter().enumerate() {
                    next[n] += w * p;
                }
            }
        }
        next
    }

    /// States with positive probability of following `s` under some action.
    pub fn successors(&self, s: usize) -> Vec<usize> {
        (0..self.n_states)
            .filter(|&n| (0..self.n_actions).any(|a| self.p(s, a, n) > 0.0))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftPolicy {
    logits: Table,
}

impl SoftPolicy {
    pub fn from_logits(logits: Table) -> Result<Self> {
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(PagarError::InvalidPolicy("non-finite logit".into()));
        }
        if logits.nrows() == 0 || logits.ncols() == 0 {
            return Err(PagarError::InvalidPolicy("empty logit table".into()));
        }
        Ok(Self { logits })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { logits: Table::zeros(n_states, n_actions) }
    }

    /// Logits `ln p`, with zero probabilities floored at [`PROB_FLOOR`].
    pub fn from_probs(probs: &Table) -> Result<Self> {
        for s in 0..probs.nrows() {
            let row = probs.row(s);
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(PagarError::InvalidPolicy(format!("row {s} has invalid entries")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(PagarError::InvalidPolicy(format!("row {s} sums to {sum}")));
            }
        }
        Self::from_logits(probs.map(|p| p.max(PROB_FLOOR).ln()))
    }

    /// Deterministic-limit policy choosing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let mut probs = Table::zeros(actions.len(), n_actions);
        for (s, &a) in actions.iter().enumerate() {
            probs[(s, a)] = 1.0;
        }
        Self::from_probs(&probs).expect("one-hot rows are valid")
    }

    pub fn logits(&self) -> &Table {
        &self.logits
    }

    pub fn n_states(&self) -> usize {
        self.logits.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.logits.ncols()
    }

    pub fn row_probs(&self, s: usize) -> Vec<f64> {
        let row = self.logits.row(s);
        let m = row.max();
        let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect()
    }

    pub fn probs(&self) -> Table {
        let mut out = self.logits.clone();
        for s in 0..out.nrows() {
            for (a, p) in self.row_probs(s).into_iter().enumerate() {
                out[(s, a)] = p;
            }
        }
        out
    }

    /// Log-probabilities, computed stably from logits.
    pub fn log_probs(&self) -> Table {
        let mut out = self.logits.clone();
        for s in 0..out.nrows() {
            let row = self.logits.row(s);
            let m = row.max();
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for a in 0..out.ncols() {
                out[(s, a)] -= lse;
            }
        }
        out
    }

    pub fn state_entropy(&self, s: usize) -> f64 {
        entropy_of(&self.row_probs(s))
    }

    fn check_shape(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states() != mdp.n_states() || self.n_actions() != mdp.n_actions() {
            return Err(PagarError::InvalidPolicy(format!(
                "policy is {}x{}, mdp is {}x{}",
                self.n_states(),
                self.n_actions(),
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }
}

pub fn entropy_of(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

fn check_reward(mdp: &TabularMdp, reward: &Table) -> Result<()> {
    if reward.nrows() != mdp.n_states() || reward.ncols() != mdp.n_actions() {
        return Err(PagarError::InvalidReward(format!(
            "reward is {}x{}, mdp is {}x{}",
            reward.nrows(),
            reward.ncols(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    if reward.iter().any(|x| !x.is_finite()) {
        return Err(PagarError::InvalidReward("non-finite entry".into()));
    }
    Ok(())
}

/// Solves `(I − γ M) x = b`.
fn solve_discounted(m: &DMatrix<f64>, gamma: f64, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = m.nrows();
    let a = DMatrix::identity(n, n) - m * gamma;
    a.lu()
        .solve(b)
        .ok_or_else(|| PagarError::InvalidMdp("singular occupancy system".into()))
}

#[derive(Clone, Debug)]
pub struct Occupancy {
    pub state: DVector<f64>,
    pub state_action: Table,
}

/// Discounted state visitation `ρ(s) = Σ_t γ^t Pr(s_t = s)`.
pub fn state_occupancy(mdp: &TabularMdp, policy: &SoftPolicy) -> Result<DVector<f64>> {
    mdp.check_solvable()?;
    policy.check_shape(mdp)?;
    let probs = policy.probs();
    let d0 = DVector::from_column_slice(mdp.initial_dist());
    match mdp.horizon() {
        Some(h) => {
            let mut rho = DVector::zeros(mdp.n_states());
            let mut d = d0;
            let mut disc = 1.0;
            for t in 0..h {
                rho += &d * disc;
                if t + 1 < h {
                    d = mdp.push_forward(&d, &probs);
                    disc *= mdp.gamma();
                }
            }
            Ok(rho)
        }
        None => {
            let m = mdp.policy_transition(&probs);
            solve_discounted(&m.transpose(), mdp.gamma(), &d0)
        }
    }
}

pub fn occupancy(mdp: &TabularMdp, policy: &SoftPolicy) -> Result<Occupancy> {
    let state = state_occupancy(mdp, policy)?;
    let mut state_action = policy.probs();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            state_action[(s, a)] *= state[s];
        }
    }
    Ok(Occupancy { state, state_action })
}

pub fn policy_utility(mdp: &TabularMdp, reward: &Table, policy: &SoftPolicy) -> Result<f64> {
    check_reward(mdp, reward)?;
    let occ = occupancy(mdp, policy)?;
    Ok(occ.state_action.dot(reward))
}

/// Discounted policy entropy `E[Σ γ^t H(π(·|s_t))]`.
pub fn policy_entropy(mdp: &TabularMdp, policy: &SoftPolicy) -> Result<f64> {
    let rho = state_occupancy(mdp, policy)?;
    Ok((0..mdp.n_states()).map(|s| rho[s] * policy.state_entropy(s)).sum())
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Entropy temperature κ.
    pub kappa: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { kappa: 1.0, tol: 1e-10, max_iter: 100_000 }
    }
}

impl SolverOptions {
    pub fn with_kappa(kappa: f64) -> Self {
        Self { kappa, ..Self::default() }
    }
}

#[derive(Clone, Debug)]
pub struct ValueBundle {
    pub soft_q: Table,
    pub soft_v: DVector<f64>,
    pub soft_advantage: Table,
    pub hard_q: Table,
    pub hard_v: DVector<f64>,
    pub hard_advantage: Table,
    pub kappa: f64,
}

/// Per-step state weights with the value tables in force at that step.
///
/// Infinite-horizon evaluation yields a single slice weighted by the occupancy;
/// finite-horizon evaluation yields one slice per step weighted by `γ^t d_t`.
#[derive(Clone, Debug)]
pub struct ValueSlice {
    pub weight: DVector<f64>,
    pub soft_q: Table,
    pub soft_v: DVector<f64>,
    pub hard_q: Table,
    pub hard_v: DVector<f64>,
}

fn policy_reward_terms(probs: &Table, logp: &Table, reward: &Table, kappa: f64) -> (DVector<f64>, DVector<f64>) {
    let ns = probs.nrows();
    let mut r_pi = DVector::zeros(ns);
    let mut h_pi = DVector::zeros(ns);
    for s in 0..ns {
        for a in 0..probs.ncols() {
            let p = probs[(s, a)];
            r_pi[s] += p * reward[(s, a)];
            if p > 0.0 {
                h_pi[s] -= kappa * p * logp[(s, a)];
            }
        }
    }
    (r_pi, h_pi)
}

fn q_from_v(mdp: &TabularMdp, reward: &Table, v: &DVector<f64>) -> Table {
    reward + mdp.expect_next(v) * mdp.gamma()
}

/// Exact soft and hard evaluation of a fixed policy, split by step.
pub fn value_slices(mdp: &TabularMdp, reward: &Table, policy: &SoftPolicy, kappa: f64) -> Result<Vec<ValueSlice>> {
    mdp.check_solvable()?;
    policy.check_shape(mdp)?;
    check_reward(mdp, reward)?;
    let probs = policy.probs();
    let logp = policy.log_probs();
    let (r_pi, h_pi) = policy_reward_terms(&probs, &logp, reward, kappa);
    let ns = mdp.n_states();
    match mdp.horizon() {
        None => {
            let m = mdp.policy_transition(&probs);
            let soft_v = solve_discounted(&m, mdp.gamma(), &(&r_pi + &h_pi))?;
            let hard_v = solve_discounted(&m, mdp.gamma(), &r_pi)?;
            let d0 = DVector::from_column_slice(mdp.initial_dist());
            let weight = solve_discounted(&m.transpose(), mdp.gamma(), &d0)?;
            Ok(vec![ValueSlice {
                weight,
                soft_q: q_from_v(mdp, reward, &soft_v),
                soft_v,
                hard_q: q_from_v(mdp, reward, &hard_v),
                hard_v,
            }])
        }
        Some(h) => {
            let mut soft = vec![DVector::zeros(ns); h + 1];
            let mut hard = vec![DVector::zeros(ns); h + 1];
            let mut soft_q = vec![Table::zeros(ns, mdp.n_actions()); h];
            let mut hard_q = vec![Table::zeros(ns, mdp.n_actions()); h];
            for t in (0..h).rev() {
                soft_q[t] = q_from_v(mdp, reward, &soft[t + 1]);
                hard_q[t] = q_from_v(mdp, reward, &hard[t + 1]);
                for s in 0..ns {
                    let mut sv = h_pi[s];
                    let mut hv = 0.0;
                    for a in 0..mdp.n_actions() {
                        sv += probs[(s, a)] * soft_q[t][(s, a)];
                        hv += probs[(s, a)] * hard_q[t][(s, a)];
                    }
                    soft[t][s] = sv;
                    hard[t][s] = hv;
                }
            }
            let mut d = DVector::from_column_slice(mdp.initial_dist());
            let mut disc = 1.0;
            let mut out = Vec::with_capacity(h);
            for t in 0..h {
                out.push(ValueSlice {
                    weight: &d * disc,
                    soft_q: soft_q[t].clone(),
                    soft_v: soft[t].clone(),
                    hard_q: hard_q[t].clone(),
                    hard_v: hard[t].clone(),
                });
                d = mdp.push_forward(&d, &probs);
                disc *= mdp.gamma();
            }
            Ok(out)
        }
    }
}

/// Value bundle of `policy` at the first decision step.
pub fn evaluate_policy(mdp: &TabularMdp, reward: &Table, policy: &SoftPolicy, kappa: f64) -> Result<ValueBundle> {
    let first = value_slices(mdp, reward, policy, kappa)?.swap_remove(0);
    Ok(bundle_from_slice(first, kappa))
}

fn bundle_from_slice(sl: ValueSlice, kappa: f64) -> ValueBundle {
    let mut soft_advantage = sl.soft_q.clone();
    let mut hard_advantage = sl.hard_q.clone();
    for s in 0..soft_advantage.nrows() {
        for a in 0..soft_advantage.ncols() {
            soft_advantage[(s, a)] -= sl.soft_v[s];
            hard_advantage[(s, a)] -= sl.hard_v[s];
        }
    }
    ValueBundle {
        soft_q: sl.soft_q,
        soft_v: sl.soft_v,
        soft_advantage,
        hard_q: sl.hard_q,
        hard_v: sl.hard_v,
        hard_advantage,
        kappa,
    }
}

fn soft_backup(q: &Table, kappa: f64) -> DVector<f64> {
    DVector::from_iterator(
        q.nrows(),
        (0..q.nrows()).map(|s| {
            let row = q.row(s);
            let m = row.max();
            m + kappa * row.iter().map(|x| ((x - m) / kappa).exp()).sum::<f64>().ln()
        }),
    )
}

fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct SoftSolution {
    pub bundle: ValueBundle,
    pub policy: SoftPolicy,
    /// Optimal soft value per state (the `max J_RL` from each start state).
    pub optimal_v: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Soft-optimal policy `π(a|s) ∝ exp(Q(s,a)/κ)`.
///
/// Finite-horizon mode runs backward induction and returns the first-step
/// decision rule as a stationary policy.
pub fn soft_value_iteration(mdp: &TabularMdp, reward: &Table, opts: &SolverOptions) -> Result<SoftSolution> {
    mdp.check_solvable()?;
    check_reward(mdp, reward)?;
    let kappa = opts.kappa;
    if !(kappa > 0.0) {
        return Err(PagarError::InvalidConfig(format!("entropy temperature {kappa} must be positive")));
    }
    let ns = mdp.n_states();
    let (q, v, residual, iterations) = match mdp.horizon() {
        Some(h) => {
            let mut v = DVector::zeros(ns);
            let mut q = reward.clone();
            for _ in 0..h {
                q = q_from_v(mdp, reward, &v);
                v = soft_backup(&q, kappa);
            }
            (q, v, 0.0, h)
        }
        None => {
            let mut v = DVector::zeros(ns);
            let mut residual = f64::INFINITY;
            let mut it = 0;
            // Iterate past `tol` so the evaluated policy's residual also clears it.
            let target = |v: &DVector<f64>| {
                (opts.tol * (1.0 - mdp.gamma())).max(1e-15 * (1.0 + v.amax()))
            };
            while it < opts.max_iter {
                let q = q_from_v(mdp, reward, &v);
                let next = soft_backup(&q, kappa);
                residual = max_abs_diff(&next, &v);
                v = next;
                it += 1;
                if residual <= target(&v) {
                    break;
                }
            }
            if residual > opts.tol {
                return Err(PagarError::NonConvergence { iterations: it, residual });
            }
            (q_from_v(mdp, reward, &v), v, residual, it)
        }
    };
    let policy = SoftPolicy::from_logits(q.map(|x| x / kappa))?;
    let bundle = evaluate_policy(mdp, reward, &policy, kappa)?;
    Ok(SoftSolution { bundle, policy, optimal_v: v, residual, iterations })
}

/// Max-norm residual of the soft Bellman optimality operator at `v`.
pub fn soft_bellman_residual(mdp: &TabularMdp, reward: &Table, v: &DVector<f64>, kappa: f64) -> f64 {
    let q = q_from_v(mdp, reward, v);
    max_abs_diff(&soft_backup(&q, kappa), v)
}

#[derive(Clone, Debug)]
pub struct HardSolution {
    /// Optimal value per state (first step in finite-horizon mode).
    pub values: DVector<f64>,
    pub actions: Vec<usize>,
    pub policy: SoftPolicy,
    pub residual: f64,
    pub iterations: usize,
}

impl HardSolution {
    /// `max_π U_r(π)` from the initial distribution.
    pub fn optimal_utility(&self, mdp: &TabularMdp) -> f64 {
        mdp.initial_dist().iter().zip(self.values.iter()).map(|(d, v)| d * v).sum()
    }
}

fn greedy(q: &Table) -> (DVector<f64>, Vec<usize>) {
    let ns = q.nrows();
    let mut v = DVector::zeros(ns);
    let mut acts = vec![0; ns];
    for s in 0..ns {
        let mut best = q[(s, 0)];
        for a in 1..q.ncols() {
            // strict comparison keeps the lowest index on ties
            if q[(s, a)] > best {
                best = q[(s, a)];
                acts[s] = a;
            }
        }
        v[s] = best;
    }
    (v, acts)
}

/// Standard (entropy-free) optimal values and a greedy deterministic policy.
/// Ties go to the lowest action index.
pub fn hard_value_iteration(mdp: &TabularMdp, reward: &Table, opts: &SolverOptions) -> Result<HardSolution> {
    mdp.check_solvable()?;
    check_reward(mdp, reward)?;
    let ns = mdp.n_states();
    let (values, actions, residual, iterations) = match mdp.horizon() {
        Some(h) => {
            let mut v = DVector::zeros(ns);
            let mut acts = vec![0; ns];
            for _ in 0..h {
                let (nv, na) = greedy(&q_from_v(mdp, reward, &v));
                v = nv;
                acts = na;
            }
            (v, acts, 0.0, h)
        }
        None => {
            let mut v = DVector::zeros(ns);
            let mut residual = f64::INFINITY;
            let mut it = 0;
            while it < opts.max_iter {
                let (next, _) = greedy(&q_from_v(mdp, reward, &v));
                residual = max_abs_diff(&next, &v);
                v = next;
                it += 1;
                if residual <= (opts.tol * (1.0 - mdp.gamma())).max(1e-15 * (1.0 + v.amax())) {
                    break;
                }
            }
            if residual > opts.tol {
                return Err(PagarError::NonConvergence { iterations: it, residual });
            }
            let (v2, acts) = greedy(&q_from_v(mdp, reward, &v));
            (v2, acts, residual, it)
        }
    };
    let policy = SoftPolicy::deterministic(&actions, mdp.n_actions());
    Ok(HardSolution { values, actions, policy, residual, iterations })
}

/// `max_π U_r(π)` from the initial distribution.
pub fn optimal_utility(mdp: &TabularMdp, reward: &Table) -> Result<f64> {
    Ok(hard_value_iteration(mdp, reward, &SolverOptions::default())?.optimal_utility(mdp))
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    /// Same length as `states`, or one shorter when the last state is bare.
    pub actions: Vec<usize>,
}

impl Trajectory {
    pub fn new(states: Vec<usize>, actions: Vec<usize>) -> Result<Self> {
        if states.is_empty() {
            return Err(PagarError::InvalidDemos("empty trajectory".into()));
        }
        if actions.len() != states.len() && actions.len() + 1 != states.len() {
            return Err(PagarError::InvalidDemos(format!(
                "{} states but {} actions",
                states.len(),
                actions.len()
            )));
        }
        Ok(Self { states, actions })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `(state, action)` pairs for the steps that executed an action.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.states.iter().copied().zip(self.actions.iter().copied())
    }

    /// Final state without an action, if any.
    pub fn bare_tail(&self) -> Option<usize> {
        (self.actions.len() < self.states.len()).then(|| *self.states.last().unwrap())
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        let bad = |m: String| Err(PagarError::InvalidDemos(m));
        if self.states.iter().any(|&s| s >= mdp.n_states()) || self.actions.iter().any(|&a| a >= mdp.n_actions()) {
            return bad("index out of range".into());
        }
        for t in 0..self.states.len() - 1 {
            let (s, a, n) = (self.states[t], self.actions[t], self.states[t + 1]);
            if mdp.p(s, a, n) <= 0.0 {
                return bad(format!("step {t}: transition ({s}, {a}) -> {n} has zero probability"));
            }
        }
        Ok(())
    }

    /// State path padded with its absorbing final state (or truncated) to `len` states.
    pub fn padded_states(&self, len: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.states.iter().copied().take(len).collect();
        let last = *self.states.last().unwrap();
        while out.len() < len {
            out.push(last);
        }
        out
    }
}

fn action_mean(reward: &Table, s: usize) -> f64 {
    reward.row(s).mean()
}

/// Discounted return of a recorded trajectory. A bare final state earns its
/// action-mean reward; nothing accrues after a terminal state.
pub fn discounted_return(mdp: &TabularMdp, reward: &Table, traj: &Trajectory) -> f64 {
    let g = mdp.gamma();
    let h = mdp.horizon().unwrap_or(usize::MAX);
    let mut total = 0.0;
    let mut disc = 1.0;
    let mut t = 0;
    for (s, a) in traj.pairs() {
        if t >= h {
            return total;
        }
        total += disc * reward[(s, a)];
        if mdp.is_terminal(s) {
            return total;
        }
        disc *= g;
        t += 1;
    }
    if let Some(s) = traj.bare_tail() {
        if t < h {
            total += disc * action_mean(reward, s);
        }
    }
    total
}

fn sample_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // round-off: last index with positive mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// `n` rollouts from the initial distribution, each stopping at a terminal state
/// (recorded without an action) or after `max_len` actions.
pub fn sample_trajectories(
    mdp: &TabularMdp,
    policy: &SoftPolicy,
    n: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    policy.check_shape(mdp)?;
    if n == 0 || max_len == 0 {
        return Err(PagarError::InvalidConfig("need n > 0 and max_len > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probs = policy.probs();
    let rows: Vec<Vec<f64>> = (0..mdp.n_states()).map(|s| probs.row(s).iter().copied().collect()).collect();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut states = Vec::new();
        let mut actions = Vec::new();
        let mut s = sample_index(&mut rng, mdp.initial_dist());
        for _ in 0..max_len {
            states.push(s);
            if mdp.is_terminal(s) {
                break;
            }
            let a = sample_index(&mut rng, &rows[s]);
            actions.push(a);
            s = sample_index(&mut rng, mdp.row(s, a));
        }
        out.push(Trajectory { states, actions });
    }
    Ok(out)
}

/// Probability that `target` appears among the first `horizon` states.
pub fn visit_probability(mdp: &TabularMdp, policy: &SoftPolicy, target: usize, horizon: usize) -> Result<f64> {
    policy.check_shape(mdp)?;
    if horizon == 0 {
        return Err(PagarError::InvalidConfig("horizon must be at least 1".into()));
    }
    if target >= mdp.n_states() {
        return Err(PagarError::InvalidConfig(format!("target {target} out of range")));
    }
    let probs = policy.probs();
    let mut d = DVector::from_column_slice(mdp.initial_dist());
    let mut hit = d[target];
    d[target] = 0.0;
    for _ in 1..horizon {
        d = mdp.push_forward(&d, &probs);
        hit += d[target];
        d[target] = 0.0;
    }
    Ok(hit)
}
