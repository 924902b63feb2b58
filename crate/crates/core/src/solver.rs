//! Regret, the brute-force minimax oracle, the reward-side bound losses, and the
//! alternating protagonist/antagonist/reward training loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{grid_occupancies, TaskSpec};
use crate::error::{PagarError, Result};
use crate::irl::{DemoSet, IrlMode, IrlProblem};
use crate::mdp::{
    evaluate_policy, occupancy, optimal_utility, policy_utility, sample_trajectories, soft_value_iteration, SoftPolicy,
    SolverOptions, TabularMdp, Table, Trajectory,
};
use crate::policy_opt::{protagonist_natural_step, protagonist_step, rl_gradient_step, OptimizerState, SurrogateConfig, RATIO_RANGE};
use crate::reward::{IrlObjective, RewardFamily, RewardPoint};

#[derive(Clone, Debug, Serialize)]
pub struct RegretReport {
    pub regret: f64,
    pub antagonist_utility: f64,
    pub protagonist_utility: f64,
    pub witness_reward_params: Vec<f64>,
}

/// `max_π U_r(π) − U_r(π_P)`, with the max from hard value iteration.
pub fn regret(mdp: &TabularMdp, reward: &RewardPoint, protagonist: &SoftPolicy) -> Result<RegretReport> {
    let antagonist_utility = optimal_utility(mdp, &reward.table)?;
    let protagonist_utility = policy_utility(mdp, &reward.table, protagonist)?;
    Ok(RegretReport {
        regret: antagonist_utility - protagonist_utility,
        antagonist_utility,
        protagonist_utility,
        witness_reward_params: reward.params.clone(),
    })
}

/// Largest `|rewards| × |policies|` the brute-force oracle accepts.
pub const MAX_PAIRS: usize = 10_000_000;

#[derive(Clone, Debug, Serialize)]
pub struct BruteForceResult {
    pub best_index: usize,
    pub worst_case_regret: f64,
    /// Max regret over the rewards, per policy.
    pub max_regrets: Vec<f64>,
    /// `max_π U_r(π)` per reward.
    pub optimal_utilities: Vec<f64>,
}

/// `argmin_π max_r Regret(π, r)` over explicit grids; lowest index wins ties.
pub fn minimax_regret_bruteforce(mdp: &TabularMdp, rewards: &[RewardPoint], policies: &[SoftPolicy]) -> Result<BruteForceResult> {
    if rewards.is_empty() || policies.is_empty() {
        return Err(PagarError::InvalidConfig("empty reward or policy grid".into()));
    }
    if rewards.len().saturating_mul(policies.len()) > MAX_PAIRS {
        return Err(PagarError::Guard(format!("{} x {} regret evaluations", rewards.len(), policies.len())));
    }
    let occ = grid_occupancies(mdp, policies)?;
    let vstar: Vec<f64> = rewards.par_iter().map(|r| optimal_utility(mdp, &r.table)).collect::<Result<_>>()?;
    Ok(minimax_from_occupancies(&occ, rewards, &vstar))
}

pub fn minimax_from_occupancies(occ: &[Table], rewards: &[RewardPoint], vstar: &[f64]) -> BruteForceResult {
    let max_regrets: Vec<f64> = occ
        .par_iter()
        .map(|o| rewards.iter().zip(vstar).map(|(r, v)| v - o.dot(&r.table)).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut best = 0;
    for i in 1..max_regrets.len() {
        if max_regrets[i] < max_regrets[best] {
            best = i;
        }
    }
    BruteForceResult { best_index: best, worst_case_regret: max_regrets[best], max_regrets, optimal_utilities: vstar.to_vec() }
}

/// Worst-case regret of one policy over a reward list.
pub fn worst_case_regret(mdp: &TabularMdp, rewards: &[RewardPoint], policy: &SoftPolicy) -> Result<(f64, usize)> {
    let occ = occupancy(mdp, policy)?.state_action;
    let vals: Vec<f64> = rewards
        .par_iter()
        .map(|r| optimal_utility(mdp, &r.table).map(|v| v - occ.dot(&r.table)))
        .collect::<Result<_>>()?;
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, v) in vals.into_iter().enumerate() {
        if v > best.0 {
            best = (v, i);
        }
    }
    Ok(best)
}

/// Expected discounted `(s, a)` visitation under `policy`, exactly or from samples,
/// divided by the discount mass in finite-horizon mode.
fn pair_weights(mdp: &TabularMdp, policy: &SoftPolicy, samples: Option<&[Trajectory]>) -> Result<Table> {
    let mut w = match samples {
        None => occupancy(mdp, policy)?.state_action,
        Some(trajs) => {
            if trajs.is_empty() {
                return Err(PagarError::InvalidConfig("empty sample batch".into()));
            }
            let mut w = mdp.zero_table();
            let h = mdp.horizon().unwrap_or(usize::MAX);
            let n = trajs.len() as f64;
            for tr in trajs {
                let mut disc = 1.0;
                for (t, (s, a)) in tr.pairs().enumerate() {
                    if t >= h {
                        break;
                    }
                    w[(s, a)] += disc / n;
                    disc *= mdp.gamma();
                }
            }
            w
        }
    };
    if mdp.horizon().is_some() {
        w /= mdp.discount_mass();
    }
    Ok(w)
}

fn max_abs_on_support(reward: &Table, w: &Table) -> f64 {
    let mut m: f64 = 0.0;
    for s in 0..w.nrows() {
        if w.row(s).iter().any(|&x| x > 1e-12) {
            for a in 0..w.ncols() {
                m = m.max(reward[(s, a)].abs());
            }
        }
    }
    m
}

fn clamp_ratio(x: f64) -> f64 {
    x.clamp(RATIO_RANGE.0, RATIO_RANGE.1)
}

/// `E_{τ~π_A}[Σ γ^t (ξ − 1) r] + c1 · max |r|` with `ξ = π_P/π_A`.
pub fn j_pagar_r1(
    mdp: &TabularMdp,
    reward: &Table,
    protagonist: &SoftPolicy,
    antagonist: &SoftPolicy,
    samples_a: Option<&[Trajectory]>,
    c1: f64,
) -> Result<f64> {
    let w = pair_weights(mdp, antagonist, samples_a)?;
    let (pp, pa) = (protagonist.probs(), antagonist.probs());
    let mut v = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            if w[(s, a)] != 0.0 {
                v += w[(s, a)] * (clamp_ratio(pp[(s, a)] / pa[(s, a)]) - 1.0) * reward[(s, a)];
            }
        }
    }
    Ok(v + c1 * max_abs_on_support(reward, &w))
}

/// `E_{τ~π_P}[Σ γ^t (1 − π_A/π_P) r] + c2 · max |r|`.
pub fn j_pagar_r2(
    mdp: &TabularMdp,
    reward: &Table,
    protagonist: &SoftPolicy,
    antagonist: &SoftPolicy,
    samples_p: Option<&[Trajectory]>,
    c2: f64,
) -> Result<f64> {
    let w = pair_weights(mdp, protagonist, samples_p)?;
    let (pp, pa) = (protagonist.probs(), antagonist.probs());
    let mut v = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            if w[(s, a)] != 0.0 {
                v += w[(s, a)] * (1.0 - clamp_ratio(pa[(s, a)] / pp[(s, a)])) * reward[(s, a)];
            }
        }
    }
    Ok(v + c2 * max_abs_on_support(reward, &w))
}

/// Rewards beyond this magnitude are rejected by the exponential-ratio losses.
pub const MAX_EXP_REWARD: f64 = 50.0;

fn clipped_exp_term(w: &Table, reward: &Table, probs: &Table, clip: f64) -> Result<f64> {
    let mut v = 0.0;
    for s in 0..w.nrows() {
        for a in 0..w.ncols() {
            let r = reward[(s, a)];
            if r.abs() > MAX_EXP_REWARD {
                return Err(PagarError::InvalidReward(format!("|r| = {} too large for exp ratios", r.abs())));
            }
            if w[(s, a)] == 0.0 {
                continue;
            }
            let xi = clamp_ratio(r.exp() / probs[(s, a)]);
            v += w[(s, a)] * (xi * r).min(xi.clamp(1.0 - clip, 1.0 + clip) * r);
        }
    }
    Ok(v)
}

/// `E_{π_P}[Σ γ^t r] − E_{π_A}[Σ γ^t min(ξ3 r, clip(ξ3) r)]`, `ξ3 = exp(r)/π_A`.
pub fn j_pagar_r3(
    mdp: &TabularMdp,
    reward: &Table,
    protagonist: &SoftPolicy,
    antagonist: &SoftPolicy,
    samples_p: Option<&[Trajectory]>,
    samples_a: Option<&[Trajectory]>,
    clip: f64,
) -> Result<f64> {
    let wp = pair_weights(mdp, protagonist, samples_p)?;
    let wa = pair_weights(mdp, antagonist, samples_a)?;
    Ok(wp.dot(reward) - clipped_exp_term(&wa, reward, &antagonist.probs(), clip)?)
}

/// `E_{π_P}[Σ γ^t r] − E_{π_P}[Σ γ^t min(ξ4 r, clip(ξ4) r)]`, `ξ4 = exp(r)/π_P`.
pub fn j_pagar_r4(
    mdp: &TabularMdp,
    reward: &Table,
    protagonist: &SoftPolicy,
    samples_p: Option<&[Trajectory]>,
    clip: f64,
) -> Result<f64> {
    let wp = pair_weights(mdp, protagonist, samples_p)?;
    Ok(wp.dot(reward) - clipped_exp_term(&wp, reward, &protagonist.probs(), clip)?)
}

/// Max over visited states of `KL(π_A(·|s) ‖ π_P(·|s))`.
pub fn max_kl(mdp: &TabularMdp, protagonist: &SoftPolicy, antagonist: &SoftPolicy, samples: Option<&[Trajectory]>) -> Result<f64> {
    let w = pair_weights(mdp, antagonist, samples)?;
    let (lp, la) = (protagonist.log_probs(), antagonist.log_probs());
    let pa = antagonist.probs();
    let mut m: f64 = 0.0;
    for s in 0..mdp.n_states() {
        if w.row(s).iter().all(|&x| x <= 1e-12) {
            continue;
        }
        let kl: f64 = (0..mdp.n_actions()).map(|a| pa[(s, a)] * (la[(s, a)] - lp[(s, a)])).sum();
        m = m.max(kl);
    }
    Ok(m)
}

#[derive(Clone, Debug, Serialize)]
pub struct Theorem2Check {
    pub alpha: f64,
    pub epsilon: f64,
    /// `|U(π1) − U(π2) − Σ_s ρ_{π1}(s) ΔA(s)|`
    pub lhs_pi1: f64,
    pub bound_pi1: f64,
    /// Same with `ρ_{π2}`.
    pub lhs_pi2: f64,
    pub bound_pi2: f64,
}

impl Theorem2Check {
    pub fn holds(&self, slack: f64) -> bool {
        self.lhs_pi1 <= self.bound_pi1 + slack && self.lhs_pi2 <= self.bound_pi2 + slack
    }
}

/// Both regret bounds for `π2` soft-optimal under `reward`, evaluated exactly
/// (infinite-horizon mode).
pub fn theorem2_check(mdp: &TabularMdp, reward: &Table, pi1: &SoftPolicy, kappa: f64) -> Result<Theorem2Check> {
    if mdp.horizon().is_some() {
        return Err(PagarError::InvalidConfig("the bound check needs infinite-horizon mode".into()));
    }
    let sol = soft_value_iteration(mdp, reward, &SolverOptions::with_kappa(kappa))?;
    let pi2 = &sol.policy;
    let adv = &sol.bundle.soft_advantage;
    let (p1, p2) = (pi1.probs(), pi2.probs());
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let alpha = (0..ns)
        .map(|s| 0.5 * (0..na).map(|a| (p1[(s, a)] - p2[(s, a)]).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let epsilon = adv.amax();
    let delta_a: Vec<f64> = (0..ns).map(|s| (0..na).map(|a| (p1[(s, a)] - p2[(s, a)]) * adv[(s, a)]).sum()).collect();
    let rho1 = occupancy(mdp, pi1)?.state;
    let rho2 = occupancy(mdp, pi2)?.state;
    let gap = policy_utility(mdp, reward, pi1)? - policy_utility(mdp, reward, pi2)?;
    let along = |rho: &nalgebra::DVector<f64>| (0..ns).map(|s| rho[s] * delta_a[s]).sum::<f64>();
    let g = mdp.gamma();
    let base = 2.0 * alpha * g * epsilon / (1.0 - g).powi(2);
    Ok(Theorem2Check {
        alpha,
        epsilon,
        lhs_pi1: (gap - along(&rho1)).abs(),
        bound_pi1: base,
        lhs_pi2: (gap - along(&rho2)).abs(),
        bound_pi2: base * (2.0 * alpha + 1.0),
    })
}

/// `λ · exp(μ (δ − J))`, optionally floored at `floor`.
pub fn lambda_update(lambda: f64, mu: f64, irl: f64, delta: f64, floor: Option<f64>) -> f64 {
    let next = lambda * (mu * (delta - irl)).exp();
    match floor {
        Some(f) => next.max(f),
        None => next,
    }
}

/// `λ · max(δ − J, 0)`.
pub fn lagrangian_penalty(lambda: f64, irl: f64, delta: f64) -> f64 {
    lambda * (delta - irl).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardObjective {
    /// `U_r(π_P) − max_π U_r(π)`, i.e. minus the exact regret.
    Regret,
    /// `U_r(π_P) − U_r(π_A)` with the current antagonist.
    Antagonist,
    /// `J_R1 + J_R2` (plus `J_R3 + J_R4` when enabled).
    Surrogate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardUpdate {
    /// One projected finite-difference step per iteration.
    Step,
    /// Multi-start projected search for the best response, then a feasibility
    /// bisection toward the IRL optimum.
    Search,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AntagonistMode {
    /// Soft value iteration under the current reward.
    Exact,
    /// Gradient ascent on `J_RL`.
    Gradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtagonistMode {
    /// Clipped-surrogate gradient steps on antagonist samples.
    Gradient,
    /// The same steps preconditioned with the policy Fisher metric.
    Natural,
    /// Soft-optimal against the running mean of the reward iterates.
    Leader,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Exact,
    Sampled,
}

macro_rules! str_enum {
    ($t:ty { $($name:literal => $v:expr),* $(,)? }) => {
        impl std::str::FromStr for $t {
            type Err = PagarError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($v),)*
                    other => Err(PagarError::InvalidConfig(format!("unknown value {other:?}"))),
                }
            }
        }
    };
}

str_enum!(RewardObjective { "regret" => RewardObjective::Regret, "antagonist" => RewardObjective::Antagonist, "surrogate" => RewardObjective::Surrogate });
str_enum!(RewardUpdate { "step" => RewardUpdate::Step, "search" => RewardUpdate::Search });
str_enum!(AntagonistMode { "exact" => AntagonistMode::Exact, "gradient" => AntagonistMode::Gradient });
str_enum!(ProtagonistMode { "gradient" => ProtagonistMode::Gradient, "natural" => ProtagonistMode::Natural, "leader" => ProtagonistMode::Leader });
str_enum!(Estimator { "exact" => Estimator::Exact, "sampled" => Estimator::Sampled });

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PagarConfig {
    pub delta: f64,
    pub lambda0: f64,
    pub mu: f64,
    /// Keep `λ ≥ λ0`.
    pub lambda_floor: bool,
    pub clip: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub max_len: usize,
    pub seed: u64,
    pub irl_mode: IrlMode,
    pub kappa: f64,
    pub antagonist: AntagonistMode,
    pub antagonist_steps: usize,
    pub protagonist_steps: usize,
    pub protagonist: ProtagonistMode,
    /// Initial temperature of the leader protagonist, decayed as `1/√(t+1)`.
    pub leader_temperature: f64,
    pub step_size: f64,
    pub clip_norm: f64,
    pub estimator: Estimator,
    pub reward_objective: RewardObjective,
    pub reward_update: RewardUpdate,
    pub reward_step_size: f64,
    pub search_iters: usize,
    /// Scale `c` in `C1 = −c·D̂`, `C2 = c·D̂`.
    pub c_scale: f64,
    pub use_r3_r4: bool,
    /// Fraction of final iterates averaged (in occupancy space) into the output.
    pub average_tail: f64,
}

impl Default for PagarConfig {
    fn default() -> Self {
        Self {
            delta: 0.0,
            lambda0: 10.0,
            mu: 0.5,
            lambda_floor: false,
            clip: 0.2,
            iterations: 300,
            batch_size: 32,
            max_len: 50,
            seed: 0,
            irl_mode: IrlMode::Margin,
            kappa: 1.0,
            antagonist: AntagonistMode::Exact,
            antagonist_steps: 5,
            protagonist_steps: 1,
            protagonist: ProtagonistMode::Leader,
            leader_temperature: 0.6,
            step_size: 1.0,
            clip_norm: 10.0,
            estimator: Estimator::Sampled,
            reward_objective: RewardObjective::Regret,
            reward_update: RewardUpdate::Search,
            reward_step_size: 0.1,
            search_iters: 30,
            c_scale: 1.0,
            use_r3_r4: false,
            average_tail: 0.5,
        }
    }
}

impl PagarConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PagarError::InvalidConfig(m.into()));
        if !(self.lambda0 > 0.0) {
            return bad("lambda0 must be positive");
        }
        if !(self.mu >= 0.0) {
            return bad("mu must be non-negative");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must be in (0, 1)");
        }
        if !(self.kappa > 0.0) {
            return bad("kappa must be positive");
        }
        if !(self.leader_temperature > 0.0) {
            return bad("leader_temperature must be positive");
        }
        if self.batch_size == 0 || self.max_len == 0 {
            return bad("batch_size and max_len must be positive");
        }
        if !(self.step_size > 0.0 && self.clip_norm > 0.0 && self.reward_step_size > 0.0) {
            return bad("step sizes must be positive");
        }
        if !(0.0..=1.0).contains(&self.average_tail) {
            return bad("average_tail must be in [0, 1]");
        }
        if !self.delta.is_finite() {
            return bad("delta must be finite");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub lambda: f64,
    pub irl_loss: f64,
    pub j_pagar: f64,
    pub regret_estimate: f64,
    pub task_metrics: Vec<f64>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainTrace {
    pub metric_names: Vec<String>,
    pub records: Vec<TraceRecord>,
    /// Iterations where an importance ratio hit the clamp range.
    pub ratio_clamped: Vec<usize>,
}

impl TrainTrace {
    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["iter", "lambda", "irl_loss", "j_pagar", "regret_estimate"].iter().map(|s| s.to_string()).collect();
        h.extend((1..=self.metric_names.len()).map(|i| format!("task_metric_{i}")));
        h
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.records
            .iter()
            .map(|r| {
                let mut row = vec![
                    r.iter.to_string(),
                    r.lambda.to_string(),
                    r.irl_loss.to_string(),
                    r.j_pagar.to_string(),
                    r.regret_estimate.to_string(),
                ];
                row.extend(r.task_metrics.iter().map(|m| m.to_string()));
                row
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    /// Occupancy-space average of the tail iterates.
    pub protagonist: SoftPolicy,
    pub last_protagonist: SoftPolicy,
    pub antagonist: SoftPolicy,
    pub reward_params: Vec<f64>,
    pub lambda: f64,
    pub trace: TrainTrace,
}

/// Everything the reward side needs at one iteration.
pub struct RewardContext<'a> {
    pub mdp: &'a TabularMdp,
    pub irl: &'a dyn IrlObjective,
    pub protagonist: &'a SoftPolicy,
    pub antagonist: &'a SoftPolicy,
    pub samples_p: Option<&'a [Trajectory]>,
    pub samples_a: Option<&'a [Trajectory]>,
    pub cfg: &'a PagarConfig,
    pub lambda: f64,
}

impl RewardContext<'_> {
    fn family(&self) -> &RewardFamily {
        self.irl.family()
    }

    /// `J_PAGAR(r; π_P, π_A)`, to be minimized by the reward.
    pub fn j_pagar(&self, params: &[f64]) -> Result<f64> {
        let r = self.family().table(params);
        let (mdp, pp, pa) = (self.mdp, self.protagonist, self.antagonist);
        match self.cfg.reward_objective {
            RewardObjective::Regret => Ok(policy_utility(mdp, &r, pp)? - optimal_utility(mdp, &r)?),
            RewardObjective::Antagonist => Ok(policy_utility(mdp, &r, pp)? - policy_utility(mdp, &r, pa)?),
            RewardObjective::Surrogate => {
                let d = max_kl(mdp, pp, pa, self.samples_a)?;
                let c = self.cfg.c_scale * d;
                let mut v = j_pagar_r1(mdp, &r, pp, pa, self.samples_a, -c)? + j_pagar_r2(mdp, &r, pp, pa, self.samples_p, c)?;
                if self.cfg.use_r3_r4 {
                    v += j_pagar_r3(mdp, &r, pp, pa, self.samples_p, self.samples_a, self.cfg.clip)?;
                    v += j_pagar_r4(mdp, &r, pp, self.samples_p, self.cfg.clip)?;
                }
                Ok(v)
            }
        }
    }

    /// `J_PAGAR + λ·max(δ − J_IRL, 0)`.
    pub fn lagrangian(&self, params: &[f64]) -> Result<f64> {
        Ok(self.j_pagar(params)? + lagrangian_penalty(self.lambda, self.irl.value(params)?, self.cfg.delta))
    }
}

fn fd_grad(f: &dyn Fn(&[f64]) -> Result<f64>, family: &RewardFamily, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let (lo, hi) = family.bounds()[i];
        let up = (x[i] + h).min(hi);
        let dn = (x[i] - h).max(lo);
        if up - dn <= 0.0 {
            continue;
        }
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        a[i] = up;
        b[i] = dn;
        g[i] = (f(&a)? - f(&b)?) / (up - dn);
    }
    Ok(g)
}

/// Projected descent on `f` from `x` with step halving; returns the end point and value.
fn projected_descent(
    f: &dyn Fn(&[f64]) -> Result<f64>,
    family: &RewardFamily,
    x0: &[f64],
    step0: f64,
    iters: usize,
) -> Result<(Vec<f64>, f64)> {
    let mut x = family.project(x0);
    let mut fx = f(&x)?;
    let mut step = step0;
    for _ in 0..iters {
        let g = fd_grad(f, family, &x, 1e-6)?;
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            break;
        }
        let mut moved = false;
        while step > 1e-9 {
            let cand = family.project(&x.iter().zip(&g).map(|(xi, gi)| xi - step * gi / norm).collect::<Vec<_>>());
            let fc = f(&cand)?;
            if fc < fx - 1e-14 {
                x = cand;
                fx = fc;
                step *= 1.5;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok((x, fx))
}

/// One projected, backtracked descent step of the reward parameters on the
/// Lagrangian `J_PAGAR + λ·max(δ − J_IRL, 0)`.
pub fn reward_step(ctx: &RewardContext<'_>, params: &[f64], step_size: f64) -> Result<Vec<f64>> {
    let family = ctx.family();
    if !family.contains(params) {
        return Err(PagarError::OutOfBox { params: params.to_vec() });
    }
    let f = |p: &[f64]| ctx.lagrangian(p);
    let g = fd_grad(&f, family, params, 1e-6)?;
    let f0 = f(params)?;
    let mut eta = step_size;
    for _ in 0..30 {
        let cand = family.project(&params.iter().zip(&g).map(|(x, gi)| x - eta * gi).collect::<Vec<_>>());
        if f(&cand)? <= f0 {
            return Ok(cand);
        }
        eta *= 0.5;
    }
    Ok(params.to_vec())
}

/// Moves `x` toward `anchor` until `J ≥ δ` (bisection on the segment).
fn restore_feasibility(irl: &dyn IrlObjective, x: &[f64], anchor: &[f64], delta: f64, tol: f64) -> Result<Vec<f64>> {
    if irl.value(x)? >= delta - tol {
        return Ok(x.to_vec());
    }
    let at = |t: f64| x.iter().zip(anchor).map(|(a, b)| a + t * (b - a)).collect::<Vec<_>>();
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if irl.value(&at(mid))? >= delta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(at(hi))
}

/// Best-response search over the reward box: multi-start projected descent on the
/// Lagrangian, every end point pulled back into `{J ≥ δ}`, best `J_PAGAR` kept.
pub fn reward_search(ctx: &RewardContext<'_>, starts: &[Vec<f64>], anchor: &[f64]) -> Result<Vec<f64>> {
    let family = ctx.family();
    let width = family.bounds().iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max).max(1e-9);
    let f = |p: &[f64]| ctx.lagrangian(p);
    let ends: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|s| projected_descent(&f, family, s, 0.25 * width, ctx.cfg.search_iters).map(|r| r.0))
        .collect::<Result<_>>()?;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for e in ends {
        let x = restore_feasibility(ctx.irl, &e, anchor, ctx.cfg.delta, 1e-9)?;
        let v = ctx.j_pagar(&x)?;
        if best.as_ref().is_none_or(|b| v < b.1 - 1e-12) {
            best = Some((x, v));
        }
    }
    Ok(best.map(|b| b.0).unwrap_or_else(|| anchor.to_vec()))
}

fn mix_seed(seed: u64, iter: usize, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (iter as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9) ^ stream
}

/// Stationary policy with the given state-action occupancy; unvisited states
/// fall back to `fallback`.
pub fn policy_from_occupancy(occ: &Table, fallback: &SoftPolicy) -> Result<SoftPolicy> {
    let mut probs = fallback.probs();
    for s in 0..occ.nrows() {
        let tot: f64 = occ.row(s).sum();
        if tot > 1e-300 {
            for a in 0..occ.ncols() {
                probs[(s, a)] = occ[(s, a)] / tot;
            }
        }
    }
    SoftPolicy::from_probs(&probs)
}

/// The alternating training loop from a uniform protagonist.
pub fn train(mdp: &TabularMdp, family: &RewardFamily, demos: &DemoSet, task: &TaskSpec, cfg: &PagarConfig) -> Result<TrainOutput> {
    let problem = IrlProblem::new(mdp.clone(), family.clone(), demos.clone(), cfg.irl_mode, cfg.kappa)?;
    let anchor = crate::irl::irl_fit(&problem, &crate::irl::IrlBudget::default())?.best_params;
    train_with(&problem, &anchor, task, cfg, None)
}

/// Training against a prepared IRL objective. `anchor` should maximize the
/// objective; it seeds the reward and is the target of feasibility restoration.
pub fn train_with(
    problem: &IrlProblem,
    anchor: &[f64],
    task: &TaskSpec,
    cfg: &PagarConfig,
    init: Option<SoftPolicy>,
) -> Result<TrainOutput> {
    train_impl(problem, anchor, None, task, cfg, init)
}

/// Training with the reward restricted to an explicit candidate set (e.g. a
/// δ-grid). Each reward update picks the candidate minimizing `J_PAGAR`.
pub fn train_on_set(
    problem: &IrlProblem,
    candidates: &[RewardPoint],
    task: &TaskSpec,
    cfg: &PagarConfig,
    init: Option<SoftPolicy>,
) -> Result<TrainOutput> {
    let first = candidates.first().ok_or_else(|| PagarError::InvalidConfig("empty reward candidate set".into()))?;
    train_impl(problem, &first.params, Some(candidates), task, cfg, init)
}

fn train_impl(
    problem: &IrlProblem,
    anchor: &[f64],
    candidates: Option<&[RewardPoint]>,
    task: &TaskSpec,
    cfg: &PagarConfig,
    init: Option<SoftPolicy>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let mdp = &problem.mdp;
    let family = &problem.family;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut pro = init.unwrap_or_else(|| SoftPolicy::uniform(ns, na));
    let initial = pro.clone();
    let mut ant = SoftPolicy::uniform(ns, na);
    let mut theta = family.project(anchor);
    let mut lambda = cfg.lambda0;
    let mut trace = TrainTrace { metric_names: task.metric_names(), ..Default::default() };
    let mut pro_opt = OptimizerState::new(cfg.step_size, cfg.clip_norm)?;
    let mut ant_opt = OptimizerState::new(cfg.step_size, cfg.clip_norm)?;
    let surrogate = SurrogateConfig::new(cfg.clip)?;
    let solver = SolverOptions::with_kappa(cfg.kappa);
    let tail_start = ((1.0 - cfg.average_tail) * cfg.iterations as f64).floor() as usize;
    let mut occ_sum = Table::zeros(ns, na);
    let mut reward_sum = Table::zeros(ns, na);
    // optimal utilities of a fixed candidate set, so regret scoring needs one occupancy per iteration
    let set_optimal: Option<Vec<f64>> = match candidates {
        Some(set) if cfg.reward_objective == RewardObjective::Regret => {
            Some(set.par_iter().map(|r| optimal_utility(mdp, &r.table)).collect::<Result<_>>()?)
        }
        _ => None,
    };
    let mut witnesses: Vec<Vec<f64>> = Vec::new();

    for it in 0..cfg.iterations {
        let reward = family.table(&theta);
        ant = match cfg.antagonist {
            AntagonistMode::Exact => soft_value_iteration(mdp, &reward, &solver)?.policy,
            AntagonistMode::Gradient => {
                let mut p = ant;
                for _ in 0..cfg.antagonist_steps {
                    p = rl_gradient_step(mdp, &reward, &p, cfg.kappa, &mut ant_opt)?.policy;
                }
                p
            }
        };
        let sampled = cfg.estimator == Estimator::Sampled;
        let d_a = if sampled { Some(sample_trajectories(mdp, &ant, cfg.batch_size, cfg.max_len, mix_seed(cfg.seed, it, 1))?) } else { None };
        if let Some(batch) = &d_a {
            let (pp, pa) = (pro.probs(), ant.probs());
            if batch.iter().flat_map(|t| t.pairs()).any(|(s, a)| {
                let x = pp[(s, a)] / pa[(s, a)];
                !(RATIO_RANGE.0..=RATIO_RANGE.1).contains(&x)
            }) {
                trace.ratio_clamped.push(it);
            }
        }

        // step sizes decay so the averaged iterate settles
        pro_opt.step_size = cfg.step_size / (1.0 + it as f64 / 20.0).sqrt();
        match cfg.protagonist {
            ProtagonistMode::Leader => {
                reward_sum += &reward;
                let mean = reward_sum.map(|x| x / (it + 1) as f64);
                // temperature decays so the smoothing bias vanishes
                let opts = SolverOptions::with_kappa(cfg.leader_temperature / (1.0 + it as f64).sqrt());
                pro = soft_value_iteration(mdp, &mean, &opts)?.policy;
            }
            mode => {
                let step = if mode == ProtagonistMode::Natural { protagonist_natural_step } else { protagonist_step };
                for _ in 0..cfg.protagonist_steps {
                    pro = step(mdp, &reward, &pro, &ant, d_a.as_deref(), cfg.kappa, &surrogate, &mut pro_opt)?.policy;
                }
            }
        }

        let d_p = if sampled { Some(sample_trajectories(mdp, &pro, cfg.batch_size, cfg.max_len, mix_seed(cfg.seed, it, 2))?) } else { None };
        let ctx = RewardContext {
            mdp,
            irl: problem,
            protagonist: &pro,
            antagonist: &ant,
            samples_p: d_p.as_deref(),
            samples_a: d_a.as_deref(),
            cfg,
            lambda,
        };
        theta = match (candidates, cfg.reward_update) {
            (Some(set), _) => {
                let scores: Vec<f64> = match &set_optimal {
                    Some(vstar) => {
                        let occ = occupancy(mdp, &pro)?.state_action;
                        set.iter().zip(vstar).map(|(r, v)| occ.dot(&r.table) - v).collect()
                    }
                    None => set.par_iter().map(|r| ctx.j_pagar(&r.params)).collect::<Result<_>>()?,
                };
                let best = (0..set.len()).fold(0, |b, i| if scores[i] < scores[b] { i } else { b });
                set[best].params.clone()
            }
            (None, RewardUpdate::Step) => reward_step(&ctx, &theta, cfg.reward_step_size)?,
            (None, RewardUpdate::Search) => {
                let mut starts = vec![theta.clone(), family.centre(), anchor.to_vec()];
                starts.extend(family.vertices());
                starts.extend(witnesses.iter().cloned());
                let best = reward_search(&ctx, &starts, anchor)?;
                if !witnesses.iter().any(|w| w.iter().zip(&best).all(|(a, b)| (a - b).abs() < 1e-6)) {
                    witnesses.push(best.clone());
                    if witnesses.len() > 8 {
                        witnesses.remove(0);
                    }
                }
                best
            }
        };
        let j_irl = problem.value(&theta)?;
        let j_pagar = ctx.j_pagar(&theta)?;
        lambda = lambda_update(lambda, cfg.mu, j_irl, cfg.delta, cfg.lambda_floor.then_some(cfg.lambda0));

        if it >= tail_start {
            occ_sum += occupancy(mdp, &pro)?.state_action;
        }
        let point = RewardPoint { params: theta.clone(), table: family.table(&theta) };
        trace.records.push(TraceRecord {
            iter: it,
            lambda,
            irl_loss: j_irl,
            j_pagar,
            regret_estimate: regret(mdp, &point, &pro)?.regret,
            task_metrics: task.metrics(&pro),
        });
    }
    let averaged = if cfg.iterations == 0 {
        initial
    } else if occ_sum.iter().all(|&x| x == 0.0) {
        pro.clone()
    } else {
        policy_from_occupancy(&occ_sum, &pro)?
    };
    Ok(TrainOutput { protagonist: averaged, last_protagonist: pro, antagonist: ant, reward_params: theta, lambda, trace })
}

/// Value bundle of the protagonist under a reward, for reporting.
pub fn protagonist_values(mdp: &TabularMdp, reward: &Table, policy: &SoftPolicy, kappa: f64) -> Result<crate::mdp::ValueBundle> {
    evaluate_policy(mdp, reward, policy, kappa)
}

/// Reward points on a `resolution` grid with `J ≥ δ`.
pub fn delta_grid(irl: &dyn IrlObjective, delta: f64, resolution: usize) -> Result<Vec<RewardPoint>> {
    let fam = irl.family();
    let grid = fam.grid(resolution)?;
    let keep: Vec<bool> = grid.par_iter().map(|p| irl.value(p).map(|v| v >= delta - 1e-6)).collect::<Result<_>>()?;
    grid.into_iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| fam.materialize(&p)).collect()
}

/// Convenience for examples and tests: the margin-mode problem over a family.
pub fn margin_problem(mdp: &TabularMdp, family: &RewardFamily, demos: &DemoSet) -> Result<IrlProblem> {
    IrlProblem::new(mdp.clone(), family.clone(), demos.clone(), IrlMode::Margin, 1.0)
}
