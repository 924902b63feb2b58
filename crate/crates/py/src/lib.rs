//! Python bindings: `import pagar_py`.
//!
//! Rewards and policies cross the boundary as lists of rows (`[state][action]`).

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pagar_core::envs::{self, example1};
use pagar_core::io;
use pagar_core::irl::{irl_fit, IrlBudget, IrlMode, IrlProblem};
use pagar_core::mdp::{self, SoftPolicy, SolverOptions, Table, TabularMdp};
use pagar_core::reward::RewardPoint;
use pagar_core::solver::{self, PagarConfig};
use pagar_core::suites::{run_suite, Suite};
use pagar_core::PagarError;

fn py_err(e: PagarError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn table(rows: &[Vec<f64>]) -> PyResult<Table> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if nr == 0 || nc == 0 || rows.iter().any(|r| r.len() != nc) {
        return Err(PyValueError::new_err("expected a non-empty rectangular list of rows"));
    }
    Ok(Table::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn rows(t: &Table) -> Vec<Vec<f64>> {
    (0..t.nrows()).map(|i| t.row(i).iter().copied().collect()).collect()
}

#[pyclass(name = "Mdp", module = "pagar_py")]
pub struct PyMdp {
    pub inner: TabularMdp,
}

#[pymethods]
impl PyMdp {
    /// `transition` is flat, indexed `(s * n_actions + a) * n_states + s'`.
    #[new]
    #[pyo3(signature = (n_states, n_actions, transition, initial, terminal, gamma, horizon=None))]
    fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        initial: Vec<f64>,
        terminal: Vec<bool>,
        gamma: f64,
        horizon: Option<usize>,
    ) -> PyResult<Self> {
        let inner = TabularMdp::new(n_states, n_actions, transition, initial, terminal, gamma, horizon).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn example1() -> Self {
        Self { inner: envs::example1_mdp() }
    }

    #[staticmethod]
    #[pyo3(signature = (n_states, n_actions, density=0.6, seed=0))]
    fn random(n_states: usize, n_actions: usize, density: f64, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: envs::build_random_mdp(n_states, n_actions, density, seed).map_err(py_err)? })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self { inner: io::read_mdp(text).map_err(py_err)? })
    }

    fn to_text(&self) -> String {
        io::write_mdp(&self.inner)
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    #[getter]
    fn horizon(&self) -> Option<usize> {
        self.inner.horizon()
    }

    fn __repr__(&self) -> String {
        format!(
            "Mdp(n_states={}, n_actions={}, gamma={}, horizon={:?})",
            self.inner.n_states(),
            self.inner.n_actions(),
            self.inner.gamma(),
            self.inner.horizon()
        )
    }
}

#[pyclass(name = "Policy", module = "pagar_py")]
pub struct PyPolicy {
    pub inner: SoftPolicy,
}

#[pymethods]
impl PyPolicy {
    #[new]
    fn new(logits: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self { inner: SoftPolicy::from_logits(table(&logits)?).map_err(py_err)? })
    }

    #[staticmethod]
    fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { inner: SoftPolicy::uniform(n_states, n_actions) }
    }

    #[staticmethod]
    fn from_probs(probs: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self { inner: SoftPolicy::from_probs(&table(&probs)?).map_err(py_err)? })
    }

    /// The example's policy taking a2 at s0 with probability `p`.
    #[staticmethod]
    fn example1(p: f64) -> Self {
        Self { inner: envs::example1_policy(p) }
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self { inner: io::read_policy(text).map_err(py_err)? })
    }

    fn to_text(&self) -> String {
        io::write_policy(&self.inner)
    }

    fn probs(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.probs())
    }

    fn logits(&self) -> Vec<Vec<f64>> {
        rows(self.inner.logits())
    }

    fn __repr__(&self) -> String {
        format!("Policy(n_states={}, n_actions={})", self.inner.n_states(), self.inner.n_actions())
    }
}

#[pyfunction]
fn policy_utility(m: &PyMdp, reward: Vec<Vec<f64>>, policy: &PyPolicy) -> PyResult<f64> {
    mdp::policy_utility(&m.inner, &table(&reward)?, &policy.inner).map_err(py_err)
}

/// State-action occupancy rows.
#[pyfunction]
fn occupancy(m: &PyMdp, policy: &PyPolicy) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&mdp::occupancy(&m.inner, &policy.inner).map_err(py_err)?.state_action))
}

/// `(policy, state values)` of the entropy-regularized optimum.
#[pyfunction]
#[pyo3(signature = (m, reward, kappa=1.0))]
fn soft_value_iteration(m: &PyMdp, reward: Vec<Vec<f64>>, kappa: f64) -> PyResult<(PyPolicy, Vec<f64>)> {
    let sol = mdp::soft_value_iteration(&m.inner, &table(&reward)?, &SolverOptions::with_kappa(kappa)).map_err(py_err)?;
    Ok((PyPolicy { inner: sol.policy }, sol.optimal_v.iter().copied().collect()))
}

#[pyfunction]
fn hard_value_iteration(m: &PyMdp, reward: Vec<Vec<f64>>) -> PyResult<(PyPolicy, Vec<f64>)> {
    let sol = mdp::hard_value_iteration(&m.inner, &table(&reward)?, &SolverOptions::default()).map_err(py_err)?;
    Ok((PyPolicy { inner: sol.policy }, sol.values.iter().copied().collect()))
}

#[pyfunction]
fn visit_probability(m: &PyMdp, policy: &PyPolicy, target: usize, horizon: usize) -> PyResult<f64> {
    mdp::visit_probability(&m.inner, &policy.inner, target, horizon).map_err(py_err)
}

#[pyfunction]
fn regret(m: &PyMdp, reward: Vec<Vec<f64>>, policy: &PyPolicy) -> PyResult<f64> {
    let point = RewardPoint { params: vec![], table: table(&reward)? };
    Ok(solver::regret(&m.inner, &point, &policy.inner).map_err(py_err)?.regret)
}

/// `(best policy index, worst-case regret)` over explicit grids.
#[pyfunction]
fn minimax_regret_bruteforce(m: &PyMdp, rewards: Vec<Vec<Vec<f64>>>, policies: Vec<PyRef<'_, PyPolicy>>) -> PyResult<(usize, f64)> {
    let points: Vec<RewardPoint> = rewards
        .iter()
        .enumerate()
        .map(|(i, r)| Ok(RewardPoint { params: vec![i as f64], table: table(r)? }))
        .collect::<PyResult<_>>()?;
    let pols: Vec<SoftPolicy> = policies.iter().map(|p| p.inner.clone()).collect();
    let bf = solver::minimax_regret_bruteforce(&m.inner, &points, &pols).map_err(py_err)?;
    Ok((bf.best_index, bf.worst_case_regret))
}

/// `(ω*, δ*)` of the trajectory-likelihood fit on the example.
#[pyfunction]
fn example1_irl() -> PyResult<(f64, f64)> {
    let ex = envs::build_example1();
    let problem = IrlProblem::new(ex.mdp, ex.family, ex.demos, IrlMode::Trajectory, ex.kappa).map_err(py_err)?;
    let fit = irl_fit(&problem, &IrlBudget::default()).map_err(py_err)?;
    Ok((fit.best_params[0], fit.best_loss))
}

/// Trains on the example at `delta` (`None` means δ*). Returns the protagonist,
/// its π(a2|s0) and whether the task accepts it.
#[pyfunction]
#[pyo3(signature = (delta=None, iterations=300, seed=0))]
fn example1_train(delta: Option<f64>, iterations: usize, seed: u64) -> PyResult<(PyPolicy, f64, bool)> {
    let ex = envs::build_example1();
    let problem = IrlProblem::new(ex.mdp, ex.family, ex.demos, IrlMode::Trajectory, ex.kappa).map_err(py_err)?;
    let fit = irl_fit(&problem, &IrlBudget::default()).map_err(py_err)?;
    let delta = delta.unwrap_or(fit.best_loss);
    let cfg = PagarConfig { delta, kappa: ex.kappa, irl_mode: IrlMode::Trajectory, iterations, seed, ..Default::default() };
    let out = solver::train_with(&problem, &fit.best_params, &ex.task, &cfg, None).map_err(py_err)?;
    let p = out.protagonist.probs()[(example1::S0, example1::A2)];
    let accepted = ex.task.accepts(&out.protagonist);
    Ok((PyPolicy { inner: out.protagonist }, p, accepted))
}

/// Runs a verification suite; returns `{"suite", "instances", "passed", "failing_seeds"}`.
#[pyfunction]
#[pyo3(signature = (name, instances, base_seed=0))]
fn verify_suite<'py>(py: Python<'py>, name: &str, instances: usize, base_seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let suite: Suite = name.parse().map_err(py_err)?;
    let rep = run_suite(suite, instances, base_seed).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("suite", suite.name())?;
    d.set_item("instances", rep.instances)?;
    d.set_item("passed", rep.passed())?;
    d.set_item("failing_seeds", rep.failures.iter().map(|f| f.seed).collect::<Vec<_>>())?;
    Ok(d)
}

#[pymodule]
pub fn pagar_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMdp>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(policy_utility, m)?)?;
    m.add_function(wrap_pyfunction!(occupancy, m)?)?;
    m.add_function(wrap_pyfunction!(soft_value_iteration, m)?)?;
    m.add_function(wrap_pyfunction!(hard_value_iteration, m)?)?;
    m.add_function(wrap_pyfunction!(visit_probability, m)?)?;
    m.add_function(wrap_pyfunction!(regret, m)?)?;
    m.add_function(wrap_pyfunction!(minimax_regret_bruteforce, m)?)?;
    m.add_function(wrap_pyfunction!(example1_irl, m)?)?;
    m.add_function(wrap_pyfunction!(example1_train, m)?)?;
    m.add_function(wrap_pyfunction!(verify_suite, m)?)?;
    m.add("SUCCESS_BAND", (example1::SUCCESS_LO, example1::SUCCESS_HI))?;
    Ok(())
}
