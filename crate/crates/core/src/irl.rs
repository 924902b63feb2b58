//! MaxEnt IRL objectives and fitting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PagarError, Result};
use crate::mdp::{discounted_return, hard_value_iteration, soft_value_iteration, SoftPolicy, SolverOptions, TabularMdp, Table, Trajectory};
use crate::reward::{IrlObjective, RewardFamily};

/// Upper bound on enumerated trajectories in the trajectory likelihood.
pub const MAX_ENUMERATED: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoSet {
    pub trajectories: Vec<Trajectory>,
    pub weights: Option<Vec<f64>>,
}

impl DemoSet {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(PagarError::InvalidDemos("demo set is empty".into()));
        }
        Ok(Self { trajectories, weights: None })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.trajectories.len() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(PagarError::InvalidDemos("one non-negative weight per trajectory".into()));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(PagarError::InvalidDemos("weights sum to zero".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        self.trajectories.iter().try_for_each(|t| t.validate(mdp))
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    fn weighted_mean(&self, f: impl Fn(&Trajectory) -> Result<f64>) -> Result<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, t) in self.trajectories.iter().enumerate() {
            let w = self.weight(i);
            if w > 0.0 {
                num += w * f(t)?;
                den += w;
            }
        }
        Ok(num / den)
    }
}

/// Weighted mean discounted return of the demonstrations.
pub fn demo_utility(mdp: &TabularMdp, reward: &Table, demos: &DemoSet) -> f64 {
    demos.weighted_mean(|t| Ok(discounted_return(mdp, reward, t))).unwrap()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IrlMode {
    /// `U_r(E) − max_π (U_r(π) + κ H(π))`
    MaxEnt,
    /// `U_r(E) − max_π U_r(π)`
    Margin,
    /// Trajectory log-likelihood under `P(τ) ∝ exp(R(τ))`, reflected about its
    /// best grid value (see [`IrlProblem::offset`]).
    Trajectory,
}

impl std::str::FromStr for IrlMode {
    type Err = PagarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maxent" => Ok(Self::MaxEnt),
            "margin" => Ok(Self::Margin),
            "trajectory" => Ok(Self::Trajectory),
            other => Err(PagarError::InvalidConfig(format!("unknown irl mode {other:?}"))),
        }
    }
}

/// Policy-level IRL objective in margin or MaxEnt form.
pub fn irl_loss(mdp: &TabularMdp, reward: &Table, demos: &DemoSet, mode: IrlMode, kappa: f64) -> Result<f64> {
    let u_e = demo_utility(mdp, reward, demos);
    let d0 = mdp.initial_dist();
    match mode {
        IrlMode::Margin => {
            let sol = hard_value_iteration(mdp, reward, &SolverOptions::default())?;
            Ok(u_e - sol.optimal_utility(mdp))
        }
        IrlMode::MaxEnt => {
            let sol = soft_value_iteration(mdp, reward, &SolverOptions::with_kappa(kappa))?;
            Ok(u_e - d0.iter().zip(sol.optimal_v.iter()).map(|(d, v)| d * v).sum::<f64>())
        }
        IrlMode::Trajectory => {
            let h = mdp.horizon().ok_or_else(|| PagarError::InvalidConfig("trajectory mode needs a horizon".into()))?;
            trajectory_maxent_loglik(mdp, reward, demos, h)
        }
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Path weights of the exponential trajectory model with a uniform action prior.
/// Steps spent in a terminal state after arriving there carry weight one.
struct PathModel {
    horizon: usize,
    log_d0: Vec<f64>,
    terminal: Vec<bool>,
    // log mean_a exp(γ^t r(s,a)) P(s'|s,a), indexed [t][s][s']
    log_step: Vec<Vec<Vec<f64>>>,
    // log mean_a exp(γ^{H-1} r(s,a))
    log_last: Vec<f64>,
}

impl PathModel {
    fn new(mdp: &TabularMdp, reward: &Table, horizon: usize) -> Self {
        let ns = mdp.n_states();
        let na = mdp.n_actions();
        let g = mdp.gamma();
        let ln_na = (na as f64).ln();
        let log_step = (0..horizon.saturating_sub(1))
            .map(|t| {
                let disc = g.powi(t as i32);
                (0..ns)
                    .map(|s| {
                        (0..ns)
                            .map(|n| {
                                log_sum_exp((0..na).filter(|&a| mdp.p(s, a, n) > 0.0).map(|a| disc * reward[(s, a)] + mdp.p(s, a, n).ln()))
                                    - ln_na
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let disc = g.powi(horizon as i32 - 1);
        let log_last = (0..ns).map(|s| log_sum_exp((0..na).map(|a| disc * reward[(s, a)])) - ln_na).collect();
        let log_d0 = mdp.initial_dist().iter().map(|p| p.ln()).collect();
        Self { horizon, log_d0, terminal: mdp.terminal().to_vec(), log_step, log_last }
    }

    fn log_weight(&self, path: &[usize]) -> f64 {
        let mut lw = self.log_d0[path[0]];
        for t in 0..self.horizon {
            let s = path[t];
            if t > 0 && self.terminal[s] && path[t - 1] == s {
                continue;
            }
            lw += if t + 1 < self.horizon { self.log_step[t][s][path[t + 1]] } else { self.log_last[s] };
        }
        lw
    }
}

/// Number of feasible state paths of `horizon` states.
pub fn count_paths(mdp: &TabularMdp, horizon: usize) -> f64 {
    let ns = mdp.n_states();
    let succ: Vec<Vec<usize>> = (0..ns).map(|s| mdp.successors(s)).collect();
    let mut c: Vec<f64> = mdp.initial_dist().iter().map(|&p| if p > 0.0 { 1.0 } else { 0.0 }).collect();
    for _ in 1..horizon {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for &n in &succ[s] {
                next[n] += c[s];
            }
        }
        c = next;
    }
    c.iter().sum()
}

/// `log Z`, summed over every feasible path by explicit enumeration.
pub fn trajectory_log_partition(mdp: &TabularMdp, reward: &Table, horizon: usize) -> Result<f64> {
    if horizon == 0 {
        return Err(PagarError::InvalidConfig("horizon must be at least 1".into()));
    }
    let n_paths = count_paths(mdp, horizon);
    if n_paths > MAX_ENUMERATED as f64 {
        return Err(PagarError::Guard(format!("{n_paths} trajectories exceed {MAX_ENUMERATED}")));
    }
    let model = PathModel::new(mdp, reward, horizon);
    let succ: Vec<Vec<usize>> = (0..mdp.n_states()).map(|s| mdp.successors(s)).collect();
    let mut weights = Vec::with_capacity(n_paths as usize);
    let mut path = Vec::with_capacity(horizon);
    fn walk(model: &PathModel, succ: &[Vec<usize>], path: &mut Vec<usize>, out: &mut Vec<f64>) {
        if path.len() == model.horizon {
            out.push(model.log_weight(path));
            return;
        }
        let s = *path.last().unwrap();
        for &n in &succ[s] {
            path.push(n);
            walk(model, succ, path, out);
            path.pop();
        }
    }
    for s in 0..mdp.n_states() {
        if mdp.initial_dist()[s] > 0.0 {
            path.push(s);
            walk(&model, &succ, &mut path, &mut weights);
            path.pop();
        }
    }
    Ok(log_sum_exp(weights.into_iter()))
}

/// Mean demo log-likelihood under `P(τ) ∝ d0 · Π P · exp(Σ_t γ^t r)` over paths of
/// `horizon` states. Actions are summed out; demos are padded with their final
/// state or truncated to `horizon` states.
pub fn trajectory_maxent_loglik(mdp: &TabularMdp, reward: &Table, demos: &DemoSet, horizon: usize) -> Result<f64> {
    demos.validate(mdp)?;
    let log_z = trajectory_log_partition(mdp, reward, horizon)?;
    let model = PathModel::new(mdp, reward, horizon);
    demos.weighted_mean(|t| {
        let lw = model.log_weight(&t.padded_states(horizon));
        if lw == f64::NEG_INFINITY {
            return Err(PagarError::InvalidDemos(format!("demo {:?} has zero probability", t.states)));
        }
        Ok(lw - log_z)
    })
}

/// An IRL objective bound to an MDP, a reward family and demonstrations.
#[derive(Clone, Debug)]
pub struct IrlProblem {
    pub mdp: TabularMdp,
    pub family: RewardFamily,
    pub demos: DemoSet,
    pub mode: IrlMode,
    pub kappa: f64,
    offset: f64,
}

impl IrlProblem {
    /// Grid resolution used to find the trajectory-mode offset. In trajectory mode
    /// the objective is `NLL* − (NLL − NLL*)`, with `NLL*` the best grid value, so
    /// its maximum is the optimal negative log-likelihood.
    pub const OFFSET_RESOLUTION: usize = 101;

    pub fn new(mdp: TabularMdp, family: RewardFamily, demos: DemoSet, mode: IrlMode, kappa: f64) -> Result<Self> {
        demos.validate(&mdp)?;
        if family.shape() != (mdp.n_states(), mdp.n_actions()) {
            return Err(PagarError::InvalidReward("family shape does not match the mdp".into()));
        }
        let mut p = Self { mdp, family, demos, mode, kappa, offset: 0.0 };
        if mode == IrlMode::Trajectory {
            let res = capped_resolution(Self::OFFSET_RESOLUTION, p.family.param_dim(), 20_000);
            let grid = p.family.grid(res)?;
            let vals: Vec<f64> = grid.par_iter().map(|x| p.raw_value(x)).collect::<Result<_>>()?;
            p.offset = 2.0 * vals.into_iter().fold(f64::NEG_INFINITY, f64::max);
        }
        Ok(p)
    }

    /// Objective before the trajectory-mode offset.
    pub fn raw_value(&self, params: &[f64]) -> Result<f64> {
        let r = self.family.table(params);
        irl_loss(&self.mdp, &r, &self.demos, self.mode, self.kappa)
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }
}

impl IrlObjective for IrlProblem {
    fn family(&self) -> &RewardFamily {
        &self.family
    }

    fn value(&self, params: &[f64]) -> Result<f64> {
        Ok(self.raw_value(params)? - self.offset)
    }
}

fn capped_resolution(resolution: usize, dim: usize, max_points: usize) -> usize {
    let mut r = resolution.max(2);
    while r > 2 && r.pow(dim as u32) > max_points {
        r -= 1;
    }
    r
}

#[derive(Clone, Debug)]
pub struct IrlBudget {
    pub resolution: usize,
    pub max_points: usize,
    pub max_iters: usize,
    pub fd_step: f64,
}

impl Default for IrlBudget {
    fn default() -> Self {
        Self { resolution: 101, max_points: 100_000, max_iters: 200, fd_step: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct IrlReport {
    pub best_params: Vec<f64>,
    /// `δ* = max J`.
    pub best_loss: f64,
    /// `δ*` before the trajectory-mode offset (the mean log-likelihood there).
    pub raw_best: f64,
    pub loss_curve: Vec<(Vec<f64>, f64)>,
    pub converged: bool,
    pub soft_opt_policy: SoftPolicy,
}

/// Central differences, one-sided against the box faces.
pub fn fd_gradient(objective: &dyn IrlObjective, params: &[f64], h: f64) -> Result<Vec<f64>> {
    let fam = objective.family();
    let mut g = vec![0.0; params.len()];
    for i in 0..params.len() {
        let (lo, hi) = fam.bounds()[i];
        let up = (params[i] + h).min(hi);
        let dn = (params[i] - h).max(lo);
        if up - dn <= 0.0 {
            continue;
        }
        let mut a = params.to_vec();
        let mut b = params.to_vec();
        a[i] = up;
        b[i] = dn;
        g[i] = (objective.value(&a)? - objective.value(&b)?) / (up - dn);
    }
    Ok(g)
}

/// Grid scan, then projected finite-difference ascent with step halving.
pub fn irl_fit(problem: &IrlProblem, budget: &IrlBudget) -> Result<IrlReport> {
    let fam = &problem.family;
    let res = capped_resolution(budget.resolution, fam.param_dim(), budget.max_points);
    let grid = fam.grid(res)?;
    let vals: Vec<f64> = grid.par_iter().map(|x| problem.value(x)).collect::<Result<_>>()?;
    let loss_curve: Vec<(Vec<f64>, f64)> = grid.into_iter().zip(vals).collect();
    let (mut x, mut f) = loss_curve
        .iter()
        .fold((Vec::new(), f64::NEG_INFINITY), |acc, (p, v)| if *v > acc.1 { (p.clone(), *v) } else { acc });

    let width = fam.bounds().iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max);
    let mut step = if res > 1 { width / (res - 1) as f64 } else { width };
    let mut converged = false;
    for _ in 0..budget.max_iters {
        let g = fd_gradient(problem, &x, budget.fd_step)?;
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 || step < 1e-10 {
            converged = true;
            break;
        }
        let cand = fam.project(&x.iter().zip(&g).map(|(xi, gi)| xi + step * gi / norm).collect::<Vec<_>>());
        let fc = problem.value(&cand)?;
        if fc > f + 1e-15 {
            x = cand;
            f = fc;
            step *= 2.0;
        } else {
            step *= 0.5;
        }
    }
    let reward = fam.table(&x);
    let soft_opt_policy = soft_value_iteration(&problem.mdp, &reward, &SolverOptions::with_kappa(problem.kappa))?.policy;
    Ok(IrlReport {
        raw_best: f + problem.offset,
        best_params: x,
        best_loss: f,
        loss_curve,
        converged,
        soft_opt_policy,
    })
}
