//! Brute-force checks of task alignment, acceptance, and the two regret
//! decision-rule results, all over explicit policy grids.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{PagarError, Result};
use crate::mdp::{occupancy, optimal_utility, SoftPolicy, TabularMdp, Table};
use crate::reward::RewardPoint;

/// Utility ties closer than this are treated as equal.
pub const UTIL_TOL: f64 = 1e-9;

type Accepts = dyn Fn(&SoftPolicy) -> bool + Send + Sync;
type Score = dyn Fn(&SoftPolicy) -> f64 + Send + Sync;
type Override = dyn Fn(&SoftPolicy, &SoftPolicy) -> Option<bool> + Send + Sync;
type Metrics = dyn Fn(&SoftPolicy) -> Vec<f64> + Send + Sync;

/// Acceptance predicate plus a task order induced by a score, with optional
/// pairwise overrides for genuinely partial orders.
#[derive(Clone)]
pub struct TaskSpec {
    accepts: Arc<Accepts>,
    score: Arc<Score>,
    overrides: Option<Arc<Override>>,
    metrics: Option<(Vec<String>, Arc<Metrics>)>,
}

impl std::fmt::Debug for TaskSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TaskSpec").field("metrics", &self.metric_names()).finish_non_exhaustive()
    }
}

impl TaskSpec {
    pub fn new(
        accepts: impl Fn(&SoftPolicy) -> bool + Send + Sync + 'static,
        score: impl Fn(&SoftPolicy) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { accepts: Arc::new(accepts), score: Arc::new(score), overrides: None, metrics: None }
    }

    /// `f(a, b) = Some(x)` decides `a ≼ b` directly.
    pub fn with_overrides(mut self, f: impl Fn(&SoftPolicy, &SoftPolicy) -> Option<bool> + Send + Sync + 'static) -> Self {
        self.overrides = Some(Arc::new(f));
        self
    }

    pub fn with_metrics(mut self, names: Vec<String>, f: impl Fn(&SoftPolicy) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.metrics = Some((names, Arc::new(f)));
        self
    }

    pub fn accepts(&self, policy: &SoftPolicy) -> bool {
        (self.accepts)(policy)
    }

    pub fn score(&self, policy: &SoftPolicy) -> f64 {
        (self.score)(policy)
    }

    /// `a ≼_task b`.
    pub fn precedes(&self, a: &SoftPolicy, b: &SoftPolicy) -> bool {
        if let Some(o) = &self.overrides {
            if let Some(x) = o(a, b) {
                return x;
            }
        }
        self.score(a) <= self.score(b)
    }

    pub fn has_overrides(&self) -> bool {
        self.overrides.is_some()
    }

    pub fn metric_names(&self) -> Vec<String> {
        match &self.metrics {
            Some((n, _)) => n.clone(),
            None => vec!["score".into()],
        }
    }

    pub fn metrics(&self, policy: &SoftPolicy) -> Vec<f64> {
        match &self.metrics {
            Some((_, f)) => f(policy),
            None => vec![self.score(policy)],
        }
    }
}

#[derive(Clone, Debug)]
pub struct PolicyGrid {
    pub policies: Vec<SoftPolicy>,
    pub resolution: usize,
    pub decision_states: Vec<usize>,
}

impl PolicyGrid {
    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }
}

/// Points `k/(resolution−1)` on the probability simplex over `n` actions.
fn simplex_points(n: usize, resolution: usize) -> Vec<Vec<f64>> {
    let m = resolution - 1;
    let mut out = Vec::new();
    fn rec(n: usize, left: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == n - 1 {
            cur.push(left);
            out.push(cur.iter().map(|&k| k as f64 / m as f64).collect());
            cur.pop();
            return;
        }
        for k in (0..=left).rev() {
            cur.push(k);
            rec(n, left - k, m, cur, out);
            cur.pop();
        }
    }
    rec(n, m, m, &mut Vec::new(), &mut out);
    out
}

/// Largest grid this module will build.
pub const MAX_GRID: usize = 2_000_000;

/// Simplex-grid policies over the non-terminal states; terminal states act uniformly.
pub fn enumerate_policy_grid(mdp: &TabularMdp, resolution: usize) -> Result<PolicyGrid> {
    let states: Vec<usize> = (0..mdp.n_states()).filter(|&s| !mdp.is_terminal(s)).collect();
    enumerate_policy_grid_over(mdp, resolution, &states)
}

/// Grid over the given decision states only; every other state acts uniformly.
pub fn enumerate_policy_grid_over(mdp: &TabularMdp, resolution: usize, states: &[usize]) -> Result<PolicyGrid> {
    if resolution < 2 {
        return Err(PagarError::InvalidConfig("policy grid resolution must be at least 2".into()));
    }
    let na = mdp.n_actions();
    if resolution > 2 && states.len() * na > 12 {
        return Err(PagarError::Guard(format!("{} decision dimensions exceed 12", states.len() * na)));
    }
    let local = simplex_points(na, resolution);
    let total = (local.len() as f64).powi(states.len() as i32);
    if total > MAX_GRID as f64 {
        return Err(PagarError::Guard(format!("{total} grid policies exceed {MAX_GRID}")));
    }
    let base = Table::from_element(mdp.n_states(), na, 1.0 / na as f64);
    let mut tables = vec![base];
    for &s in states {
        tables = tables
            .into_iter()
            .flat_map(|t| {
                local.iter().map(move |p| {
                    let mut t = t.clone();
                    for (a, v) in p.iter().enumerate() {
                        t[(s, a)] = *v;
                    }
                    t
                })
            })
            .collect();
    }
    let policies = tables.iter().map(SoftPolicy::from_probs).collect::<Result<_>>()?;
    Ok(PolicyGrid { policies, resolution, decision_states: states.to_vec() })
}

/// Occupancy tables of every grid policy.
pub fn grid_occupancies(mdp: &TabularMdp, grid: &[SoftPolicy]) -> Result<Vec<Table>> {
    grid.par_iter().map(|p| occupancy(mdp, p).map(|o| o.state_action)).collect()
}

/// `U[π][r]`.
pub fn utility_matrix(occupancies: &[Table], rewards: &[&Table]) -> Vec<Vec<f64>> {
    occupancies.par_iter().map(|o| rewards.iter().map(|r| o.dot(*r)).collect()).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct AlignmentReport {
    pub u_underbar: f64,
    pub u_overbar: f64,
    pub aligned: bool,
    pub underbar_witness: usize,
    pub overbar_witness: usize,
    pub max_utility: f64,
    /// An equal-utility class contains both accepted and rejected policies.
    pub tie_spans_boundary: bool,
}

/// Per-grid task data, computed once and reused across rewards.
#[derive(Clone, Debug)]
pub struct TaskProfile {
    pub accepted: Vec<bool>,
    pub scores: Vec<f64>,
    precedes: Option<Vec<Vec<bool>>>,
}

impl TaskProfile {
    pub fn new(task: &TaskSpec, grid: &[SoftPolicy]) -> Self {
        let accepted = grid.par_iter().map(|p| task.accepts(p)).collect();
        let scores = grid.par_iter().map(|p| task.score(p)).collect();
        let precedes = task.has_overrides().then(|| {
            grid.par_iter().map(|a| grid.iter().map(|b| task.precedes(a, b)).collect()).collect()
        });
        Self { accepted, scores, precedes }
    }

    pub fn n_accepted(&self) -> usize {
        self.accepted.iter().filter(|&&a| a).count()
    }

    fn precedes(&self, i: usize, j: usize) -> bool {
        match &self.precedes {
            Some(m) => m[i][j],
            None => self.scores[i] <= self.scores[j],
        }
    }
}

/// `U̲_r`, `Ū_r` and the alignment verdict from grid utilities.
pub fn thresholds_from_utilities(utils: &[f64], profile: &TaskProfile) -> Result<AlignmentReport> {
    let n = utils.len();
    let (mut u_under, mut under_w) = (f64::INFINITY, 0);
    for i in 0..n {
        if profile.accepted[i] && utils[i] < u_under {
            u_under = utils[i];
            under_w = i;
        }
    }
    if u_under == f64::INFINITY {
        return Err(PagarError::EmptyAcceptance);
    }
    let max_rejected = (0..n).filter(|&i| !profile.accepted[i]).map(|i| utils[i]).fold(f64::NEG_INFINITY, f64::max);
    let aligned = max_rejected < u_under - UTIL_TOL;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| utils[a].total_cmp(&utils[b]).then(a.cmp(&b)));
    // position of the last policy in sorted order that i fails to precede
    let last_bad: Vec<Option<usize>> = order
        .par_iter()
        .map(|&i| (0..n).rev().find(|&pos| !profile.precedes(i, order[pos])))
        .collect();
    // equal-utility classes start where the utility jumps by more than the tolerance
    let mut starts = vec![0];
    for pos in 1..n {
        if utils[order[pos]] > utils[order[pos - 1]] + UTIL_TOL {
            starts.push(pos);
        }
    }
    let mut tie_spans_boundary = false;
    for (ci, &st) in starts.iter().enumerate() {
        let end = starts.get(ci + 1).copied().unwrap_or(n);
        let acc = order[st..end].iter().filter(|&&i| profile.accepted[i]).count();
        if acc > 0 && acc < end - st {
            tie_spans_boundary = true;
        }
    }
    let mut prefix_bad: Vec<Option<usize>> = Vec::with_capacity(n + 1);
    prefix_bad.push(None);
    for pos in 0..n {
        let prev = prefix_bad[pos];
        prefix_bad.push(match (prev, last_bad[pos]) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        });
    }
    let mut over = (utils[order[0]], order[0]);
    for &st in starts.iter().rev() {
        // every policy strictly below the class precedes every policy from the class up
        if prefix_bad[st].is_none_or(|b| b < st) {
            over = (utils[order[st]], order[st]);
            break;
        }
    }
    Ok(AlignmentReport {
        u_underbar: u_under,
        u_overbar: over.0,
        aligned,
        underbar_witness: under_w,
        overbar_witness: over.1,
        max_utility: utils.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        tie_spans_boundary,
    })
}

pub fn compute_thresholds(mdp: &TabularMdp, reward: &Table, task: &TaskSpec, grid: &PolicyGrid) -> Result<AlignmentReport> {
    let occ = grid_occupancies(mdp, &grid.policies)?;
    let utils: Vec<f64> = occ.iter().map(|o| o.dot(reward)).collect();
    thresholds_from_utilities(&utils, &TaskProfile::new(task, &grid.policies))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Acceptance {
    Strong,
    Weak,
    Neither,
    /// No aligned reward in the set.
    Vacuous,
}

pub fn check_acceptance(
    mdp: &TabularMdp,
    rewards: &[RewardPoint],
    task: &TaskSpec,
    grid: &PolicyGrid,
    policy: &SoftPolicy,
) -> Result<Acceptance> {
    let occ = grid_occupancies(mdp, &grid.policies)?;
    let profile = TaskProfile::new(task, &grid.policies);
    let own = occupancy(mdp, policy)?.state_action;
    let mut any_aligned = false;
    let mut weak = true;
    let mut strong = true;
    for r in rewards {
        let utils: Vec<f64> = occ.iter().map(|o| o.dot(&r.table)).collect();
        let rep = thresholds_from_utilities(&utils, &profile)?;
        if !rep.aligned {
            continue;
        }
        any_aligned = true;
        let u = own.dot(&r.table);
        weak &= u >= rep.u_underbar - UTIL_TOL;
        strong &= u >= rep.u_overbar - UTIL_TOL;
    }
    Ok(match (any_aligned, strong, weak) {
        (false, _, _) => Acceptance::Vacuous,
        (true, true, _) => Acceptance::Strong,
        (true, false, true) => Acceptance::Weak,
        _ => Acceptance::Neither,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Theorem1Verdict {
    pub k: usize,
    pub n_accepted: usize,
    /// Indices (into the reward list) of `R_{E,k}`.
    pub reward_set: Vec<usize>,
    pub aligned_in_set: usize,
    /// Grid policies satisfying the premise.
    pub premise_policies: Vec<usize>,
    pub counterexamples: Vec<usize>,
    /// `R_{E,k}` has no aligned reward, so the statement says nothing.
    pub vacuous: bool,
}

impl Theorem1Verdict {
    pub fn passed(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

fn count_better(utils: &[f64], reference: f64) -> usize {
    utils.iter().filter(|&&u| u > reference + UTIL_TOL).count()
}

/// Builds `R_{E,k}` (rewards under which at most `k` grid policies beat the expert)
/// and checks that every policy beaten by fewer than `|Π_acc|` policies under all of
/// them is acceptable.
pub fn theorem1_counting_check(
    mdp: &TabularMdp,
    rewards: &[RewardPoint],
    grid: &PolicyGrid,
    task: &TaskSpec,
    expert: &SoftPolicy,
    k: usize,
) -> Result<Theorem1Verdict> {
    let occ = grid_occupancies(mdp, &grid.policies)?;
    let profile = TaskProfile::new(task, &grid.policies);
    let n_acc = profile.n_accepted();
    if n_acc == 0 {
        return Err(PagarError::EmptyAcceptance);
    }
    let expert_occ = occupancy(mdp, expert)?.state_action;
    let tables: Vec<&Table> = rewards.iter().map(|r| &r.table).collect();
    // by reward: utilities of every grid policy
    let by_reward: Vec<Vec<f64>> = tables.par_iter().map(|r| occ.iter().map(|o| o.dot(*r)).collect()).collect();
    let mut reward_set = Vec::new();
    let mut aligned_in_set = 0;
    for (j, utils) in by_reward.iter().enumerate() {
        if count_better(utils, expert_occ.dot(tables[j])) <= k {
            reward_set.push(j);
            if thresholds_from_utilities(utils, &profile)?.aligned {
                aligned_in_set += 1;
            }
        }
    }
    let premise_policies: Vec<usize> = (0..grid.len())
        .into_par_iter()
        .filter(|&i| reward_set.iter().all(|&j| count_better(&by_reward[j], by_reward[j][i]) < n_acc))
        .collect();
    let vacuous = aligned_in_set == 0;
    let counterexamples =
        if vacuous { Vec::new() } else { premise_policies.iter().copied().filter(|&i| !profile.accepted[i]).collect() };
    Ok(Theorem1Verdict { k, n_accepted: n_acc, reward_set, aligned_in_set, premise_policies, counterexamples, vacuous })
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceVerdict {
    pub agree: bool,
    pub minimax_index: usize,
    pub mixture_index: usize,
    /// `|U_ω(mixture argmax) − U_ω(minimax argmin)|`.
    pub utility_gap: f64,
    pub c: f64,
    /// Policies with constant utility across the rewards, left out of both sides.
    pub constant_policies: Vec<usize>,
    pub totally_dominated: usize,
    pub weakly_dominated: usize,
}

/// Builds the reward mixture `ω(π)` for each grid policy and checks that
/// `argmax U_ω` picks a minimax-regret policy.
pub fn decision_rule_equivalence(mdp: &TabularMdp, rewards: &[RewardPoint], grid: &[SoftPolicy]) -> Result<EquivalenceVerdict> {
    if rewards.is_empty() || grid.is_empty() {
        return Err(PagarError::InvalidConfig("empty reward or policy grid".into()));
    }
    let occ = grid_occupancies(mdp, grid)?;
    let tables: Vec<&Table> = rewards.iter().map(|r| &r.table).collect();
    let u = utility_matrix(&occ, &tables);
    let vstar: Vec<f64> = tables.par_iter().map(|r| optimal_utility(mdp, r)).collect::<Result<_>>()?;
    Ok(equivalence_from_utilities(&u, &vstar))
}

pub fn equivalence_from_utilities(u: &[Vec<f64>], vstar: &[f64]) -> EquivalenceVerdict {
    let lo: Vec<f64> = u.iter().map(|row| row.iter().copied().fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = u.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    let constant_policies: Vec<usize> = (0..u.len()).filter(|&i| hi[i] - lo[i] < UTIL_TOL).collect();
    let live: Vec<usize> = (0..u.len()).filter(|&i| hi[i] - lo[i] >= UTIL_TOL).collect();
    if live.is_empty() {
        // any mixture scores a constant policy at its constant, and the largest
        // constant is also the smallest max regret
        let best = (0..u.len()).fold(0, |b, i| if lo[i] > lo[b] + UTIL_TOL { i } else { b });
        return EquivalenceVerdict {
            agree: true,
            minimax_index: best,
            mixture_index: best,
            utility_gap: 0.0,
            c: f64::NAN,
            constant_policies,
            totally_dominated: 0,
            weakly_dominated: 0,
        };
    }
    let best_lo = |skip: usize| live.iter().filter(|&&j| j != skip).map(|&j| lo[j]).fold(f64::NEG_INFINITY, f64::max);
    let wtd: Vec<bool> = (0..u.len()).map(|i| hi[i] <= best_lo(i) + UTIL_TOL).collect();
    let td: Vec<bool> = (0..u.len()).map(|i| hi[i] < best_lo(i) - UTIL_TOL).collect();
    let c = {
        let free = live.iter().filter(|&&i| !wtd[i]).map(|&i| lo[i]).fold(f64::NEG_INFINITY, f64::max);
        if free.is_finite() { free } else { live.iter().map(|&i| lo[i]).fold(f64::NEG_INFINITY, f64::max) }
    };
    let regret = |i: usize, j: usize| vstar[j] - u[i][j];
    let max_regret: Vec<f64> = (0..u.len()).map(|i| (0..vstar.len()).map(|j| regret(i, j)).fold(f64::NEG_INFINITY, f64::max)).collect();

    let mut mm = (usize::MAX, f64::INFINITY);
    for &i in &live {
        if max_regret[i] < mm.1 - UTIL_TOL {
            mm = (i, max_regret[i]);
        }
    }
    let u_omega = |i: usize| -> f64 {
        // r*_π: among the regret maximizers, the one with the highest utility for π
        let star = (0..vstar.len())
            .filter(|&j| regret(i, j) >= max_regret[i] - UTIL_TOL)
            .max_by(|&a, &b| u[i][a].total_cmp(&u[i][b]).then(b.cmp(&a)))
            .unwrap();
        let u_star = u[i][star];
        let u_r = if wtd[i] { hi[i] } else { c };
        let denom = c - u_star;
        if denom.abs() < 1e-12 {
            return u_r - max_regret[i];
        }
        let w = max_regret[i] / denom;
        w * u_star + (1.0 - w) * u_r
    };
    let scores: Vec<(usize, f64)> = live.iter().filter(|&&i| !td[i]).map(|&i| (i, u_omega(i))).collect();
    let mut mx = (usize::MAX, f64::NEG_INFINITY);
    for &(i, s) in &scores {
        if s > mx.1 + UTIL_TOL {
            mx = (i, s);
        }
    }
    let at = |i: usize| scores.iter().find(|(j, _)| *j == i).map(|x| x.1);
    let gap = match at(mm.0) {
        Some(v) => (mx.1 - v).abs(),
        None => f64::INFINITY,
    };
    let agree = mx.0 == mm.0 || (max_regret[mx.0] - mm.1).abs() <= UTIL_TOL && gap <= UTIL_TOL;
    EquivalenceVerdict {
        agree,
        minimax_index: mm.0,
        mixture_index: mx.0,
        utility_gap: gap,
        c,
        constant_policies,
        totally_dominated: td.iter().filter(|&&x| x).count(),
        weakly_dominated: wtd.iter().filter(|&&x| x).count(),
    }
}
