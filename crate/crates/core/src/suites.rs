//! Seeded randomized verification suites over small, fully enumerated instances.
//!
//! Instance `i` of a suite run with base seed `b` uses seed `b + i`, so any
//! failing instance can be replayed on its own.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::alignment::{
    decision_rule_equivalence, enumerate_policy_grid, grid_occupancies, theorem1_counting_check, thresholds_from_utilities,
    AlignmentReport, EquivalenceVerdict, PolicyGrid, TaskProfile, TaskSpec, Theorem1Verdict, UTIL_TOL,
};
use crate::envs::{build_random_mdp, random_reward};
use crate::error::{PagarError, Result};
use crate::mdp::{hard_value_iteration, policy_utility, SoftPolicy, SolverOptions, TabularMdp, Table};
use crate::reward::{RewardFamily, RewardPoint};
use crate::solver::{theorem2_check, Theorem2Check};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Theorem2,
    Equivalence,
    Theorem1,
    Proposition1,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Theorem2, Suite::Equivalence, Suite::Theorem1, Suite::Proposition1];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Theorem2 => "theorem2",
            Suite::Equivalence => "equivalence",
            Suite::Theorem1 => "theorem1",
            Suite::Proposition1 => "proposition1",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = PagarError;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| PagarError::InvalidConfig(format!("unknown suite {s:?}")))
    }
}

/// One checked instance; `detail` is the full verdict, enough to reproduce a failure.
#[derive(Clone, Debug, Serialize)]
pub struct InstanceResult {
    pub suite: Suite,
    pub seed: u64,
    pub passed: bool,
    pub detail: InstanceDetail,
}

#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum InstanceDetail {
    Theorem2 { n_states: usize, n_actions: usize, gamma: f64, kappa: f64, check: Theorem2Check },
    Equivalence { n_states: usize, n_rewards: usize, n_policies: usize, verdict: EquivalenceVerdict },
    Theorem1 { n_policies: usize, n_rewards: usize, verdict: Theorem1Verdict },
    Proposition1(Prop1Outcome),
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub base_seed: u64,
    pub instances: usize,
    pub failures: Vec<InstanceResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn run_instance(suite: Suite, seed: u64) -> Result<InstanceResult> {
    match suite {
        Suite::Theorem2 => theorem2_instance(seed),
        Suite::Equivalence => equivalence_instance(seed),
        Suite::Theorem1 => theorem1_instance(seed),
        Suite::Proposition1 => proposition1_instance(seed),
    }
}

pub fn run_suite(suite: Suite, instances: usize, base_seed: u64) -> Result<SuiteReport> {
    if instances == 0 {
        return Err(PagarError::InvalidConfig("suite size must be positive".into()));
    }
    let mut failures = Vec::new();
    for i in 0..instances {
        let res = run_instance(suite, base_seed.wrapping_add(i as u64))?;
        if !res.passed {
            failures.push(res);
        }
    }
    Ok(SuiteReport { suite, base_seed, instances, failures })
}

/// Both regret bounds on a random MDP (≤ 6 states, ≤ 3 actions, γ ≤ 0.95) with a
/// random `π1` and `π2` soft-optimal.
pub fn theorem2_instance(seed: u64) -> Result<InstanceResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ns = rng.gen_range(2..=6);
    let na = rng.gen_range(2..=3);
    let gamma = rng.gen_range(0.5..=0.95);
    let kappa = rng.gen_range(0.1..=1.0);
    let mdp = build_random_mdp(ns, na, rng.gen_range(0.3..=1.0), rng.gen())?.with_gamma(gamma)?;
    let reward = random_reward(ns, na, &mut rng);
    let pi1 = SoftPolicy::from_logits(Table::from_fn(ns, na, |_, _| rng.gen_range(-3.0..3.0)))?;
    let check = theorem2_check(&mdp, &reward, &pi1, kappa)?;
    Ok(InstanceResult {
        suite: Suite::Theorem2,
        seed,
        passed: check.holds(1e-8),
        detail: InstanceDetail::Theorem2 { n_states: ns, n_actions: na, gamma, kappa, check },
    })
}

/// Mixture-reward argmax vs brute-force minimax regret on up to 10 rewards and up
/// to 200 grid policies.
pub fn equivalence_instance(seed: u64) -> Result<InstanceResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ns = rng.gen_range(2..=3);
    let mdp = build_random_mdp(ns, 2, 1.0, rng.gen())?;
    let resolution = if ns == 2 { rng.gen_range(3..=14) } else { rng.gen_range(3..=5) };
    let grid = enumerate_policy_grid(&mdp, resolution)?;
    let n_rewards = rng.gen_range(1..=10);
    let rewards: Vec<RewardPoint> =
        (0..n_rewards).map(|i| RewardPoint { params: vec![i as f64], table: random_reward(ns, 2, &mut rng) }).collect();
    let verdict = decision_rule_equivalence(&mdp, &rewards, &grid.policies)?;
    Ok(InstanceResult {
        suite: Suite::Equivalence,
        seed,
        passed: verdict.agree,
        detail: InstanceDetail::Equivalence { n_states: ns, n_rewards, n_policies: grid.len(), verdict },
    })
}

/// A random 3-state, 2-action MDP whose task accepts the grid policies in the top
/// third of a hidden reward's utilities, scored by that utility.
pub struct TaskInstance {
    pub mdp: TabularMdp,
    pub grid: PolicyGrid,
    pub task: TaskSpec,
    pub hidden: Table,
    /// Rewards mixing the hidden reward with a random one.
    pub rewards: Vec<RewardPoint>,
}

pub fn random_task_instance(seed: u64) -> Result<TaskInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mdp = build_random_mdp(3, 2, 1.0, rng.gen())?;
    let grid = enumerate_policy_grid(&mdp, 3)?;
    let hidden = random_reward(3, 2, &mut rng);
    let noise = random_reward(3, 2, &mut rng);
    let occ = grid_occupancies(&mdp, &grid.policies)?;
    let mut utils: Vec<f64> = occ.iter().map(|o| o.dot(&hidden)).collect();
    utils.sort_by(f64::total_cmp);
    let cut = utils[2 * utils.len() / 3];
    let (m1, h1) = (mdp.clone(), hidden.clone());
    let (m2, h2) = (mdp.clone(), hidden.clone());
    let task = TaskSpec::new(
        move |p| policy_utility(&m1, &h1, p).is_ok_and(|u| u >= cut - UTIL_TOL),
        move |p| policy_utility(&m2, &h2, p).unwrap_or(f64::NEG_INFINITY),
    );
    let family = RewardFamily::new(vec![hidden.clone(), noise], vec![(0.0, 1.0), (-1.0, 1.0)])?;
    let rewards = family.grid(5)?.iter().map(|p| family.materialize(p)).collect::<Result<_>>()?;
    Ok(TaskInstance { mdp, grid, task, hidden, rewards })
}

/// Counting-set check with the hidden reward's optimal policy as the expert and
/// `k = seed mod 4`.
pub fn theorem1_instance(seed: u64) -> Result<InstanceResult> {
    let inst = random_task_instance(seed)?;
    let expert = hard_value_iteration(&inst.mdp, &inst.hidden, &SolverOptions::default())?.policy;
    let k = (seed % 4) as usize;
    let verdict = theorem1_counting_check(&inst.mdp, &inst.rewards, &inst.grid, &inst.task, &expert, k)?;
    Ok(InstanceResult {
        suite: Suite::Theorem1,
        seed,
        passed: verdict.passed(),
        detail: InstanceDetail::Theorem1 { n_policies: inst.grid.len(), n_rewards: inst.rewards.len(), verdict },
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Prop1Outcome {
    pub reward_pair: (usize, usize),
    pub thresholds: (f64, f64),
    /// `{U_r1 ≥ Ū_r1} ⊆ {U_r2 ≥ Ū_r2}` on the grid.
    pub premise: bool,
    /// `(π1, π2)` grid indices; distinct policies are preferred when they exist.
    pub witness: Option<(usize, usize)>,
}

/// Searches the witness pair for two rewards' threshold sets.
pub fn proposition1_witness(
    u1: &[f64],
    u2: &[f64],
    rep1: &AlignmentReport,
    rep2: &AlignmentReport,
    task_precedes: impl Fn(usize, usize) -> bool,
) -> (bool, Option<(usize, usize)>) {
    let s1: Vec<usize> = (0..u1.len()).filter(|&i| u1[i] >= rep1.u_overbar - UTIL_TOL).collect();
    let s2: Vec<usize> = (0..u2.len()).filter(|&i| u2[i] >= rep2.u_overbar - UTIL_TOL).collect();
    let premise = s1.iter().all(|i| s2.contains(i));
    if !premise {
        return (false, None);
    }
    let ok = |a: usize, b: usize| u1[b] <= u1[a] + UTIL_TOL && task_precedes(b, a) && u2[b] >= u2[a] - UTIL_TOL;
    let mut fallback = None;
    for &a in &s1 {
        for &b in &s2 {
            if ok(a, b) {
                if a != b {
                    return (true, Some((a, b)));
                }
                fallback.get_or_insert((a, b));
            }
        }
    }
    (true, fallback)
}

/// Proposition-1 probe on a random reward pair of a random task instance.
pub fn proposition1_instance(seed: u64) -> Result<InstanceResult> {
    let inst = random_task_instance(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let i = rng.gen_range(0..inst.rewards.len());
    let j = rng.gen_range(0..inst.rewards.len());
    let occ = grid_occupancies(&inst.mdp, &inst.grid.policies)?;
    let u1: Vec<f64> = occ.iter().map(|o| o.dot(&inst.rewards[i].table)).collect();
    let u2: Vec<f64> = occ.iter().map(|o| o.dot(&inst.rewards[j].table)).collect();
    let profile = TaskProfile::new(&inst.task, &inst.grid.policies);
    let rep1 = thresholds_from_utilities(&u1, &profile)?;
    let rep2 = thresholds_from_utilities(&u2, &profile)?;
    let pols = &inst.grid.policies;
    let (premise, witness) =
        proposition1_witness(&u1, &u2, &rep1, &rep2, |a, b| inst.task.precedes(&pols[a], &pols[b]));
    let outcome = Prop1Outcome { reward_pair: (i, j), thresholds: (rep1.u_overbar, rep2.u_overbar), premise, witness };
    Ok(InstanceResult {
        suite: Suite::Proposition1,
        seed,
        passed: !premise || witness.is_some(),
        detail: InstanceDetail::Proposition1(outcome),
    })
}
