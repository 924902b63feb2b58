//! Gradient ascent on policy logits: the entropy-regularized RL objective and the
//! clipped off-policy surrogate.

use crate::error::{PagarError, Result};
use crate::mdp::{policy_entropy, policy_utility, value_slices, SoftPolicy, TabularMdp, Table, Trajectory, ValueSlice};

/// Importance ratios are clamped to this range before use.
pub const RATIO_RANGE: (f64, f64) = (1e-6, 1e6);

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub step_size: f64,
    pub clip_norm: f64,
    pub iteration: usize,
    pub momentum: Option<f64>,
    velocity: Option<Table>,
}

impl OptimizerState {
    pub fn new(step_size: f64, clip_norm: f64) -> Result<Self> {
        if !(step_size > 0.0) || !(clip_norm > 0.0) {
            return Err(PagarError::InvalidConfig("step size and clip norm must be positive".into()));
        }
        Ok(Self { step_size, clip_norm, iteration: 0, momentum: None, velocity: None })
    }

    pub fn with_momentum(mut self, beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(PagarError::InvalidConfig(format!("momentum {beta} outside [0, 1)")));
        }
        self.momentum = Some(beta);
        Ok(self)
    }
}

impl Default for OptimizerState {
    fn default() -> Self {
        Self::new(1.0, 100.0).unwrap()
    }
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub policy: SoftPolicy,
    pub objective_before: f64,
    pub objective_after: f64,
    pub grad_norm: f64,
    /// The raw gradient was rescaled to the clip norm (or was non-finite).
    pub clipped: bool,
    /// Accepted step length; 0 when backtracking found no ascent.
    pub step: f64,
}

/// `J_RL(π; r) = U_r(π) + κ H(π)`.
pub fn rl_objective(mdp: &TabularMdp, reward: &Table, policy: &SoftPolicy, kappa: f64) -> Result<f64> {
    Ok(policy_utility(mdp, reward, policy)? + kappa * policy_entropy(mdp, policy)?)
}

/// Exact gradient of `J_RL` with respect to the logits:
/// `Σ_t w_t(s) π(a|s) (Q_t(s,a) − κ ln π(a|s) − V_t(s))`.
pub fn rl_gradient(mdp: &TabularMdp, reward: &Table, policy: &SoftPolicy, kappa: f64) -> Result<Table> {
    let slices = value_slices(mdp, reward, policy, kappa)?;
    let probs = policy.probs();
    let logp = policy.log_probs();
    let mut g = mdp.zero_table();
    for sl in &slices {
        for s in 0..mdp.n_states() {
            let w = sl.weight[s];
            if w == 0.0 {
                continue;
            }
            for a in 0..mdp.n_actions() {
                g[(s, a)] += w * probs[(s, a)] * (sl.soft_q[(s, a)] - kappa * logp[(s, a)] - sl.soft_v[s]);
            }
        }
    }
    Ok(g)
}

fn ascent_step(
    policy: &SoftPolicy,
    grad: Table,
    opt: &mut OptimizerState,
    objective: impl Fn(&SoftPolicy) -> Result<f64>,
) -> Result<StepReport> {
    let f0 = objective(policy)?;
    let mut clipped = false;
    let mut grad = grad;
    if grad.iter().any(|x| !x.is_finite()) {
        grad.fill(0.0);
        clipped = true;
    }
    let grad_norm = grad.norm();
    if grad_norm > opt.clip_norm {
        grad *= opt.clip_norm / grad_norm;
        clipped = true;
    }
    let dir = match opt.momentum {
        Some(beta) => {
            let v = match opt.velocity.take() {
                Some(v) if v.shape() == grad.shape() => v * beta + &grad,
                _ => grad.clone(),
            };
            opt.velocity = Some(v.clone());
            v
        }
        None => grad,
    };
    opt.iteration += 1;
    let mut eta = opt.step_size;
    for _ in 0..40 {
        let cand = SoftPolicy::from_logits(policy.logits() + &dir * eta)?;
        let f = objective(&cand)?;
        if f >= f0 {
            return Ok(StepReport { policy: cand, objective_before: f0, objective_after: f, grad_norm, clipped, step: eta });
        }
        eta *= 0.5;
    }
    Ok(StepReport { policy: policy.clone(), objective_before: f0, objective_after: f0, grad_norm, clipped, step: 0.0 })
}

/// One backtracking ascent step on `J_RL`.
pub fn rl_gradient_step(
    mdp: &TabularMdp,
    reward: &Table,
    policy: &SoftPolicy,
    kappa: f64,
    opt: &mut OptimizerState,
) -> Result<StepReport> {
    let grad = rl_gradient(mdp, reward, policy, kappa)?;
    ascent_step(policy, grad, opt, |p| rl_objective(mdp, reward, p, kappa))
}

#[derive(Clone, Debug)]
pub struct SurrogateConfig {
    /// Clipping threshold σ.
    pub clip: f64,
}

impl SurrogateConfig {
    pub fn new(clip: f64) -> Result<Self> {
        if !(clip > 0.0 && clip < 1.0) {
            return Err(PagarError::InvalidConfig(format!("clip {clip} outside (0, 1)")));
        }
        Ok(Self { clip })
    }
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self { clip: 0.2 }
    }
}

/// `min(ξ A, clip(ξ, 1−σ, 1+σ) A)` and its derivative in the raw ratio.
pub fn clipped_term(ratio: f64, adv: f64, clip: f64) -> (f64, f64) {
    let xi = ratio.clamp(RATIO_RANGE.0, RATIO_RANGE.1);
    let unclipped = xi * adv;
    let clipped = xi.clamp(1.0 - clip, 1.0 + clip) * adv;
    let inside = ratio == xi;
    if unclipped <= clipped {
        (unclipped, if inside { adv } else { 0.0 })
    } else {
        (clipped, 0.0)
    }
}

fn slice_at(slices: &[ValueSlice], t: usize) -> Option<&ValueSlice> {
    if slices.len() == 1 {
        slices.first()
    } else {
        slices.get(t)
    }
}

fn hard_adv(sl: &ValueSlice, s: usize, a: usize) -> f64 {
    sl.hard_q[(s, a)] - sl.hard_v[s]
}

/// Value and logit-gradient of the clipped surrogate in the protagonist.
/// `samples = None` gives the exact expectation under the antagonist's occupancy.
pub fn surrogate_with_gradient(
    mdp: &TabularMdp,
    reward: &Table,
    protagonist: &SoftPolicy,
    antagonist: &SoftPolicy,
    samples: Option<&[Trajectory]>,
    cfg: &SurrogateConfig,
) -> Result<(f64, Table)> {
    let slices = value_slices(mdp, reward, antagonist, 1.0)?;
    let pp = protagonist.probs();
    let pa = antagonist.probs();
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    // coefficient of ∂ln π_P(a|s) in the gradient
    let mut c = Table::zeros(ns, na);
    let mut value = 0.0;
    match samples {
        None => {
            for sl in &slices {
                for s in 0..ns {
                    let w = sl.weight[s];
                    if w == 0.0 {
                        continue;
                    }
                    for a in 0..na {
                        let ratio = pp[(s, a)] / pa[(s, a)];
                        let (v, dv) = clipped_term(ratio, hard_adv(sl, s, a), cfg.clip);
                        value += w * pa[(s, a)] * v;
                        c[(s, a)] += w * dv * pp[(s, a)];
                    }
                }
            }
        }
        Some(trajs) => {
            if trajs.is_empty() {
                return Err(PagarError::InvalidConfig("empty sample batch".into()));
            }
            let n = trajs.len() as f64;
            let h = mdp.horizon().unwrap_or(usize::MAX);
            for tr in trajs {
                let mut disc = 1.0;
                for (t, (s, a)) in tr.pairs().enumerate() {
                    if t >= h {
                        break;
                    }
                    let Some(sl) = slice_at(&slices, t) else { break };
                    let ratio = pp[(s, a)] / pa[(s, a)];
                    let (v, dv) = clipped_term(ratio, hard_adv(sl, s, a), cfg.clip);
                    value += disc * v / n;
                    c[(s, a)] += disc * dv * ratio / n;
                    disc *= mdp.gamma();
                }
            }
        }
    }
    let mut g = Table::zeros(ns, na);
    for s in 0..ns {
        let total: f64 = c.row(s).sum();
        for b in 0..na {
            g[(s, b)] = c[(s, b)] - pp[(s, b)] * total;
        }
    }
    Ok((value, g))
}

/// `E_{s~π_A}[min(ξ A_{π_A}, clip(ξ, 1−σ, 1+σ) A_{π_A})]` with `ξ = π_P/π_A` and the
/// entropy-free advantage of the antagonist.
pub fn offpolicy_surrogate(
    mdp: &TabularMdp,
    reward: &Table,
    protagonist: &SoftPolicy,
    antagonist: &SoftPolicy,
    samples: Option<&[Trajectory]>,
    cfg: &SurrogateConfig,
) -> Result<f64> {
    Ok(surrogate_with_gradient(mdp, reward, protagonist, antagonist, samples, cfg)?.0)
}

/// `J_RL(π_P; r) + J_{π_A}(π_P; r)`.
pub fn protagonist_objective(
    mdp: &TabularMdp,
    reward: &Table,
    protagonist: &SoftPolicy,
    antagonist: &SoftPolicy,
    samples_a: Option<&[Trajectory]>,
    kappa: f64,
    cfg: &SurrogateConfig,
) -> Result<f64> {
    Ok(rl_objective(mdp, reward, protagonist, kappa)?
        + offpolicy_surrogate(mdp, reward, protagonist, antagonist, samples_a, cfg)?)
}

pub fn protagonist_gradient(
    mdp: &TabularMdp,
    reward: &Table,
    protagonist: &SoftPolicy,
    antagonist: &SoftPolicy,
    samples_a: Option<&[Trajectory]>,
    kappa: f64,
    cfg: &SurrogateConfig,
) -> Result<Table> {
    let g_rl = rl_gradient(mdp, reward, protagonist, kappa)?;
    let (_, g_s) = surrogate_with_gradient(mdp, reward, protagonist, antagonist, samples_a, cfg)?;
    Ok(g_rl + g_s)
}

/// Fisher-preconditioned direction: each logit-gradient entry divided by
/// `ρ(s) π(a|s)` of `policy`. For `J_RL` this is the soft advantage.
pub fn natural_direction(mdp: &TabularMdp, policy: &SoftPolicy, grad: &Table) -> Result<Table> {
    let slices = value_slices(mdp, &mdp.zero_table(), policy, 0.0)?;
    let probs = policy.probs();
    let mut rho = vec![0.0; mdp.n_states()];
    for sl in &slices {
        for (s, r) in rho.iter_mut().enumerate() {
            *r += sl.weight[s];
        }
    }
    let top = rho.iter().copied().fold(0.0, f64::max);
    let mut d = grad.clone();
    for s in 0..mdp.n_states() {
        let w = rho[s].max(1e-8 * top);
        for a in 0..mdp.n_actions() {
            d[(s, a)] /= w * probs[(s, a)].max(1e-8);
        }
    }
    Ok(d)
}

/// Like [`protagonist_step`] along the natural direction.
#[allow(clippy::too_many_arguments)]
pub fn protagonist_natural_step(
    mdp: &TabularMdp,
    reward: &Table,
    protagonist: &SoftPolicy,
    antagonist: &SoftPolicy,
    samples_a: Option<&[Trajectory]>,
    kappa: f64,
    cfg: &SurrogateConfig,
    opt: &mut OptimizerState,
) -> Result<StepReport> {
    let grad = protagonist_gradient(mdp, reward, protagonist, antagonist, samples_a, kappa, cfg)?;
    let dir = natural_direction(mdp, protagonist, &grad)?;
    ascent_step(protagonist, dir, opt, |p| protagonist_objective(mdp, reward, p, antagonist, samples_a, kappa, cfg))
}

/// One backtracking ascent step of the protagonist on the combined objective.
#[allow(clippy::too_many_arguments)]
pub fn protagonist_step(
    mdp: &TabularMdp,
    reward: &Table,
    protagonist: &SoftPolicy,
    antagonist: &SoftPolicy,
    samples_a: Option<&[Trajectory]>,
    kappa: f64,
    cfg: &SurrogateConfig,
    opt: &mut OptimizerState,
) -> Result<StepReport> {
    let grad = protagonist_gradient(mdp, reward, protagonist, antagonist, samples_a, kappa, cfg)?;
    ascent_step(protagonist, grad, opt, |p| protagonist_objective(mdp, reward, p, antagonist, samples_a, kappa, cfg))
}
