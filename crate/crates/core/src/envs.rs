//! Benchmark MDPs: the two-branch reachability example, random MDPs, and a
//! slippery reach-avoid gridworld.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::TaskSpec;
use crate::error::{PagarError, Result};
use crate::irl::DemoSet;
use crate::mdp::{hard_value_iteration, sample_trajectories, visit_probability, SoftPolicy, SolverOptions, TabularMdp, Table, Trajectory};
use crate::reward::RewardFamily;

pub mod example1 {
    //! Indices and constants of the seven-state reachability example.
    pub const N_STATES: usize = 7;
    pub const A1: usize = 0;
    pub const A2: usize = 1;
    pub const S0: usize = 0;
    pub const S1: usize = 1;
    pub const S2: usize = 2;
    pub const S3: usize = 3;
    pub const S6: usize = 6;
    pub const GAMMA: f64 = 0.99;
    pub const HORIZON: usize = 5;
    /// Entropy temperature used for the soft solvers on this example.
    pub const KAPPA: f64 = 0.05;
    pub const SUCCESS_LO: f64 = 0.5;
    pub const SUCCESS_HI: f64 = 125.0 / 188.0;
}

pub struct Example1 {
    pub mdp: TabularMdp,
    /// `r_ω = ω·r1 + (1−ω)·r2`, ω ∈ [0, 1].
    pub family: RewardFamily,
    pub task: TaskSpec,
    pub demos: DemoSet,
    pub kappa: f64,
}

fn state_indicator(n_states: usize, n_actions: usize, s: usize) -> Table {
    let mut t = Table::zeros(n_states, n_actions);
    t.row_mut(s).fill(1.0);
    t
}

/// s0 –a1→ s1 → s6; s0 –a2→ s2; s2 → {s2: 1/5, s6: 1/5, s3: 3/5}; s3, s6 absorbing.
/// s4 and s5 are unreachable self-loops. Only the action at s0 matters.
pub fn example1_mdp() -> TabularMdp {
    use example1::*;
    let (ns, na) = (N_STATES, 2);
    let mut p = vec![0.0; ns * na * ns];
    let mut set = |s: usize, a: usize, n: usize, v: f64| p[(s * na + a) * ns + n] = v;
    set(S0, A1, S1, 1.0);
    set(S0, A2, S2, 1.0);
    for a in 0..na {
        set(S1, a, S6, 1.0);
        set(S2, a, S2, 0.2);
        set(S2, a, S6, 0.2);
        set(S2, a, S3, 0.6);
        for s in [S3, 4, 5, S6] {
            set(s, a, s, 1.0);
        }
    }
    let mut d0 = vec![0.0; ns];
    d0[S0] = 1.0;
    let mut terminal = vec![false; ns];
    terminal[S3] = true;
    terminal[S6] = true;
    TabularMdp::new(ns, na, p, d0, terminal, GAMMA, Some(HORIZON)).expect("example mdp is valid")
}

/// Policy with `π(a2|s0) = p`, uniform elsewhere.
pub fn example1_policy(p: f64) -> SoftPolicy {
    use example1::*;
    let mut probs = Table::from_element(N_STATES, 2, 0.5);
    probs[(S0, A1)] = 1.0 - p;
    probs[(S0, A2)] = p;
    SoftPolicy::from_probs(&probs).expect("valid probability")
}

pub fn example1_task(mdp: &TabularMdp) -> TaskSpec {
    use example1::*;
    let m1 = mdp.clone();
    let m2 = mdp.clone();
    let m3 = mdp.clone();
    let visits = |m: &TabularMdp, p: &SoftPolicy| {
        (
            visit_probability(m, p, S2, HORIZON).unwrap_or(0.0),
            visit_probability(m, p, S6, HORIZON).unwrap_or(0.0),
        )
    };
    TaskSpec::new(
        move |p| {
            let (a, b) = visits(&m1, p);
            a >= 0.5 && b >= 0.5
        },
        move |p| {
            let (a, b) = visits(&m2, p);
            a.min(b)
        },
    )
    .with_metrics(vec!["visit_s2".into(), "visit_s6".into()], move |p| {
        let (a, b) = visits(&m3, p);
        vec![a, b]
    })
}

/// Five demonstrations, all choosing a2 at s0: `(s0,s2,s2,s2,s6)`, twice
/// `(s0,s2,s2,s6)`, `(s0,s2,s2,s2,s2)` and `(s0,s2,s2,s3)` (states only; actions
/// after s0 are recorded as a1 and do not matter).
pub fn example1_demos() -> DemoSet {
    use example1::*;
    let demo = |states: &[usize]| {
        let mut actions = vec![A1; states.len() - 1];
        actions[0] = A2;
        Trajectory::new(states.to_vec(), actions).expect("valid demo")
    };
    DemoSet::new(vec![
        demo(&[S0, S2, S2, S2, S6]),
        demo(&[S0, S2, S2, S6]),
        demo(&[S0, S2, S2, S6]),
        demo(&[S0, S2, S2, S2, S2]),
        demo(&[S0, S2, S2, S3]),
    ])
    .expect("valid demo set")
}

pub fn build_example1() -> Example1 {
    use example1::*;
    let mdp = example1_mdp();
    let r1 = state_indicator(N_STATES, 2, S2);
    let r2 = state_indicator(N_STATES, 2, S6);
    let family = RewardFamily::new(vec![&r1 - &r2], vec![(0.0, 1.0)])
        .and_then(|f| f.with_offset(r2))
        .and_then(|f| f.with_names(vec!["omega".into()]))
        .expect("valid family");
    let task = example1_task(&mdp);
    Example1 { mdp, family, task, demos: example1_demos(), kappa: KAPPA }
}

fn sample_simplex(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < density { -(1.0 - rng.gen::<f64>()).ln() } else { 0.0 })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        let i = rng.gen_range(0..n);
        w[i] = 1.0;
    }
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= z);
    w
}

fn all_reachable(mdp: &TabularMdp) -> bool {
    let n = mdp.n_states();
    let mut seen = vec![false; n];
    let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
    for s in 0..n {
        if mdp.initial_dist()[s] > 0.0 {
            seen[s] = true;
            queue.push_back((s, 0));
        }
    }
    while let Some((s, d)) = queue.pop_front() {
        if d + 1 >= n {
            continue;
        }
        for nx in mdp.successors(s) {
            if !seen[nx] {
                seen[nx] = true;
                queue.push_back((nx, d + 1));
            }
        }
    }
    seen.into_iter().all(|x| x)
}

/// Random MDP with sparse exponential-weight rows, discount 0.9, no terminals,
/// every state reachable from the start support.
pub fn build_random_mdp(n_states: usize, n_actions: usize, density: f64, seed: u64) -> Result<TabularMdp> {
    if n_states < 2 || n_actions < 2 || !(density > 0.0 && density <= 1.0) {
        return Err(PagarError::InvalidConfig("need n_states ≥ 2, n_actions ≥ 2, density in (0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..10_000 {
        let mut p = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            p.extend(sample_simplex(&mut rng, n_states, density));
        }
        let d0 = sample_simplex(&mut rng, n_states, density);
        let mdp = TabularMdp::new(n_states, n_actions, p, d0, vec![false; n_states], 0.9, None)?;
        if all_reachable(&mdp) {
            return Ok(mdp);
        }
    }
    Err(PagarError::InvalidConfig("could not sample a connected mdp".into()))
}

/// Random reward table with entries uniform in `[-1, 1]`.
pub fn random_reward(n_states: usize, n_actions: usize, rng: &mut impl Rng) -> Table {
    Table::from_fn(n_states, n_actions, |_, _| rng.gen_range(-1.0..1.0))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridworldSpec {
    pub width: usize,
    pub height: usize,
    pub start: (usize, usize),
    pub goal: (usize, usize),
    pub hazards: Vec<(usize, usize)>,
    /// Probability of sliding to one of the two perpendicular directions.
    pub slip: f64,
    pub step_limit: usize,
    pub gamma: f64,
    /// Acceptance threshold on the goal-reach probability.
    pub threshold: f64,
    pub n_demos: usize,
    pub seed: u64,
}

impl Default for GridworldSpec {
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
            start: (0, 0),
            goal: (4, 4),
            hazards: vec![(1, 1), (3, 2), (2, 3)],
            slip: 0.1,
            step_limit: 20,
            gamma: 0.95,
            threshold: 0.8,
            n_demos: 10,
            seed: 7,
        }
    }
}

impl GridworldSpec {
    pub fn cell(&self, (x, y): (usize, usize)) -> usize {
        y * self.width + x
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    fn validate(&self) -> Result<()> {
        let inside = |(x, y): (usize, usize)| x < self.width && y < self.height;
        if self.width == 0 || self.height == 0 || !inside(self.start) || !inside(self.goal) {
            return Err(PagarError::InvalidConfig("start/goal outside the grid".into()));
        }
        if self.hazards.iter().any(|&h| !inside(h) || h == self.goal || h == self.start) {
            return Err(PagarError::InvalidConfig("hazard outside the grid or on start/goal".into()));
        }
        if !(0.0..1.0).contains(&self.slip) || !(0.0..=1.0).contains(&self.threshold) || self.step_limit == 0 {
            return Err(PagarError::InvalidConfig("bad slip, threshold or step limit".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(PagarError::InvalidConfig("gridworld gamma must be in (0, 1)".into()));
        }
        Ok(())
    }
}

pub struct Gridworld {
    pub mdp: TabularMdp,
    pub task: TaskSpec,
    pub demos: DemoSet,
    /// +1 at the goal, 0 elsewhere.
    pub hidden_reward: Table,
    /// Goal-indicator and hazard-indicator features, boxes [0, 1] and [-1, 0].
    pub family: RewardFamily,
    pub spec: GridworldSpec,
}

// up, right, down, left
const MOVES: [(i64, i64); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

pub fn build_gridworld(spec: &GridworldSpec) -> Result<Gridworld> {
    spec.validate()?;
    let n = spec.n_cells();
    let na = 4;
    let goal = spec.cell(spec.goal);
    let hazards: Vec<usize> = spec.hazards.iter().map(|&h| spec.cell(h)).collect();
    let absorbing = |s: usize| s == goal || hazards.contains(&s);
    let step = |s: usize, m: usize| {
        let (x, y) = ((s % spec.width) as i64, (s / spec.width) as i64);
        let (dx, dy) = MOVES[m];
        let (nx, ny) = (x + dx, y + dy);
        if nx < 0 || ny < 0 || nx >= spec.width as i64 || ny >= spec.height as i64 {
            s
        } else {
            ny as usize * spec.width + nx as usize
        }
    };
    let mut p = vec![0.0; n * na * n];
    for s in 0..n {
        for a in 0..na {
            let row = &mut p[(s * na + a) * n..][..n];
            if absorbing(s) {
                row[s] = 1.0;
                continue;
            }
            row[step(s, a)] += 1.0 - spec.slip;
            row[step(s, (a + 1) % 4)] += spec.slip / 2.0;
            row[step(s, (a + 3) % 4)] += spec.slip / 2.0;
        }
    }
    let mut d0 = vec![0.0; n];
    d0[spec.cell(spec.start)] = 1.0;
    let terminal: Vec<bool> = (0..n).map(absorbing).collect();
    let mdp = TabularMdp::new(n, na, p, d0, terminal, spec.gamma, None)?;

    let always = SoftPolicy::uniform(n, na);
    if visit_probability(&mdp, &always, goal, n + 1)? <= 0.0 {
        return Err(PagarError::InvalidConfig("goal unreachable from start".into()));
    }

    let goal_feat = state_indicator(n, na, goal);
    let mut hazard_feat = Table::zeros(n, na);
    for &h in &hazards {
        hazard_feat.row_mut(h).fill(1.0);
    }
    let family = RewardFamily::new(vec![goal_feat.clone(), hazard_feat], vec![(0.0, 1.0), (-1.0, 0.0)])?
        .with_names(vec!["goal".into(), "hazard".into()])?;

    let task = gridworld_task(&mdp, goal, hazards.clone(), spec.step_limit, spec.threshold);
    let opt = hard_value_iteration(&mdp, &goal_feat, &SolverOptions::default())?;
    let trajs = sample_trajectories(&mdp, &opt.policy, spec.n_demos, spec.step_limit, spec.seed)?;
    Ok(Gridworld { mdp, task, demos: DemoSet::new(trajs)?, hidden_reward: goal_feat, family, spec: spec.clone() })
}

fn hazard_probability(mdp: &TabularMdp, p: &SoftPolicy, hazards: &[usize], limit: usize) -> f64 {
    // hazards are absorbing, so hitting probabilities of distinct hazards add up
    hazards.iter().map(|&h| visit_probability(mdp, p, h, limit + 1).unwrap_or(0.0)).sum()
}

fn gridworld_task(mdp: &TabularMdp, goal: usize, hazards: Vec<usize>, limit: usize, threshold: f64) -> TaskSpec {
    let m = mdp.clone();
    let hz = hazards.clone();
    let judge = move |p: &SoftPolicy| {
        let reach = visit_probability(&m, p, goal, limit + 1).unwrap_or(0.0);
        let hit = hazard_probability(&m, p, &hz, limit);
        (reach, hit, reach >= threshold && hit <= 1.0 - threshold)
    };
    let j1 = judge.clone();
    let j2 = judge.clone();
    TaskSpec::new(move |p| j1(p).2, move |p| {
        let (reach, _, ok) = j2(p);
        reach + if ok { 1.0 } else { 0.0 }
    })
    .with_metrics(vec!["reach_goal".into(), "hit_hazard".into()], move |p| {
        let (reach, hit, _) = judge(p);
        vec![reach, hit]
    })
}

/// Probability of reaching the goal within the step limit.
pub fn goal_reach_probability(world: &Gridworld, policy: &SoftPolicy) -> Result<f64> {
    visit_probability(&world.mdp, policy, world.spec.cell(world.spec.goal), world.spec.step_limit + 1)
}

/// Small random IRL instance: a random MDP, a hidden reward, demos from its
/// optimal policy and a two-parameter family `hidden + θ1·f1 + θ2·f2`, θ ∈ [-1, 1]².
pub struct RandomBenchmark {
    pub mdp: TabularMdp,
    pub family: RewardFamily,
    pub demos: DemoSet,
    pub hidden_reward: Table,
    pub seed: u64,
}

pub fn build_random_benchmark(n_states: usize, n_actions: usize, n_demos: usize, seed: u64) -> Result<RandomBenchmark> {
    let mdp = build_random_mdp(n_states, n_actions, 0.6, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
    let hidden = random_reward(n_states, n_actions, &mut rng);
    let f1 = random_reward(n_states, n_actions, &mut rng);
    let f2 = random_reward(n_states, n_actions, &mut rng);
    let family = RewardFamily::new(vec![f1, f2], vec![(-1.0, 1.0), (-1.0, 1.0)])?
        .with_offset(hidden.clone())?
        .with_names(vec!["theta1".into(), "theta2".into()])?;
    let opt = hard_value_iteration(&mdp, &hidden, &SolverOptions::default())?;
    let demos = DemoSet::new(sample_trajectories(&mdp, &opt.policy, n_demos, 100, seed.wrapping_add(1))?)?;
    Ok(RandomBenchmark { mdp, family, demos, hidden_reward: hidden, seed })
}
