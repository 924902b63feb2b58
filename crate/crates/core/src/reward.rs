//! Linear reward families and the δ-optimal reward set.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::error::{PagarError, Result};
use crate::mdp::Table;

const BOX_TOL: f64 = 1e-12;

/// `r_θ = offset + Σ_i θ_i φ_i` with `θ` in a box.
#[derive(Clone, Debug)]
pub struct RewardFamily {
    features: Vec<Table>,
    offset: Option<Table>,
    bounds: Vec<(f64, f64)>,
    names: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardPoint {
    pub params: Vec<f64>,
    pub table: Table,
}

impl RewardFamily {
    pub fn new(features: Vec<Table>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        let bad = |m: String| Err(PagarError::InvalidReward(m));
        if features.is_empty() {
            return bad("family needs at least one feature".into());
        }
        if features.len() != bounds.len() {
            return bad(format!("{} features but {} bounds", features.len(), bounds.len()));
        }
        let shape = features[0].shape();
        for f in &features {
            if f.shape() != shape {
                return bad("feature tables differ in shape".into());
            }
            if f.iter().any(|x| !x.is_finite()) {
                return bad("non-finite feature value".into());
            }
        }
        for &(lo, hi) in &bounds {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("bad interval [{lo}, {hi}]"));
            }
        }
        let names = (0..features.len()).map(|i| format!("w{i}")).collect();
        Ok(Self { features, offset: None, bounds, names })
    }

    pub fn with_offset(mut self, offset: Table) -> Result<Self> {
        if offset.shape() != self.features[0].shape() || offset.iter().any(|x| !x.is_finite()) {
            return Err(PagarError::InvalidReward("offset table does not match features".into()));
        }
        self.offset = Some(offset);
        Ok(self)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.features.len() {
            return Err(PagarError::InvalidReward("one name per feature".into()));
        }
        self.names = names;
        Ok(self)
    }

    pub fn param_dim(&self) -> usize {
        self.features.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn features(&self) -> &[Table] {
        &self.features
    }

    pub fn offset(&self) -> Option<&Table> {
        self.offset.as_ref()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shape(&self) -> (usize, usize) {
        self.features[0].shape()
    }

    pub fn contains(&self, params: &[f64]) -> bool {
        params.len() == self.param_dim()
            && params
                .iter()
                .zip(&self.bounds)
                .all(|(x, (lo, hi))| x.is_finite() && *x >= lo - BOX_TOL && *x <= hi + BOX_TOL)
    }

    pub fn project(&self, params: &[f64]) -> Vec<f64> {
        params.iter().zip(&self.bounds).map(|(x, (lo, hi))| x.clamp(*lo, *hi)).collect()
    }

    /// The reward table without the box check.
    pub fn table(&self, params: &[f64]) -> Table {
        let mut t = match &self.offset {
            Some(o) => o.clone(),
            None => Table::zeros(self.shape().0, self.shape().1),
        };
        for (w, f) in params.iter().zip(&self.features) {
            t += f * *w;
        }
        t
    }

    pub fn materialize(&self, params: &[f64]) -> Result<RewardPoint> {
        if !self.contains(params) {
            return Err(PagarError::OutOfBox { params: params.to_vec() });
        }
        let params = self.project(params);
        Ok(RewardPoint { table: self.table(&params), params })
    }

    pub fn centre(&self) -> Vec<f64> {
        self.bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    /// All box corners, lexicographic.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let d = self.param_dim();
        (0..1usize << d)
            .map(|mask| {
                (0..d)
                    .map(|i| if mask >> (d - 1 - i) & 1 == 1 { self.bounds[i].1 } else { self.bounds[i].0 })
                    .collect()
            })
            .collect()
    }

    /// Regular grid with `resolution` points per dimension, lexicographic order.
    pub fn grid(&self, resolution: usize) -> Result<Vec<Vec<f64>>> {
        if self.param_dim() > 3 {
            return Err(PagarError::Guard(format!("grid over {} parameters", self.param_dim())));
        }
        if resolution == 0 {
            return Err(PagarError::InvalidConfig("grid resolution must be positive".into()));
        }
        let axes: Vec<Vec<f64>> = self
            .bounds
            .iter()
            .map(|&(lo, hi)| {
                if resolution == 1 {
                    vec![0.5 * (lo + hi)]
                } else {
                    (0..resolution).map(|i| lo + (hi - lo) * i as f64 / (resolution - 1) as f64).collect()
                }
            })
            .collect();
        let mut out = vec![Vec::new()];
        for axis in &axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |x| {
                        let mut p = prefix.clone();
                        p.push(*x);
                        p
                    })
                })
                .collect();
        }
        Ok(out)
    }
}

/// An objective over a reward family that is maximized (higher is better).
pub trait IrlObjective: Send + Sync {
    fn family(&self) -> &RewardFamily;
    fn value(&self, params: &[f64]) -> Result<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Membership {
    pub member: bool,
    pub margin: f64,
}

/// `{θ : J(θ) ≥ δ}`, checked implicitly or enumerated on a grid.
pub struct DeltaRewardSet {
    objective: Arc<dyn IrlObjective>,
    delta: f64,
    tol: f64,
    cache: Mutex<BTreeMap<usize, Vec<Vec<f64>>>>,
}

impl DeltaRewardSet {
    pub const DEFAULT_TOL: f64 = 1e-6;

    pub fn new(objective: Arc<dyn IrlObjective>, delta: f64) -> Self {
        Self { objective, delta, tol: Self::DEFAULT_TOL, cache: Mutex::new(BTreeMap::new()) }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn family(&self) -> &RewardFamily {
        self.objective.family()
    }

    pub fn objective(&self) -> &Arc<dyn IrlObjective> {
        &self.objective
    }

    pub fn membership(&self, params: &[f64]) -> Result<Membership> {
        if !self.family().contains(params) {
            return Err(PagarError::OutOfBox { params: params.to_vec() });
        }
        let margin = self.objective.value(params)? - self.delta;
        Ok(Membership { member: margin >= -self.tol, margin })
    }

    pub fn grid_members(&self, resolution: usize) -> Result<Vec<Vec<f64>>> {
        if let Some(hit) = self.cache.lock().unwrap().get(&resolution) {
            return Ok(hit.clone());
        }
        let grid = self.family().grid(resolution)?;
        let flags: Vec<bool> = grid
            .par_iter()
            .map(|p| self.membership(p).map(|m| m.member))
            .collect::<Result<_>>()?;
        let members: Vec<Vec<f64>> = grid.into_iter().zip(flags).filter(|(_, f)| *f).map(|(p, _)| p).collect();
        self.cache.lock().unwrap().insert(resolution, members.clone());
        Ok(members)
    }

    pub fn grid_points(&self, resolution: usize) -> Result<Vec<RewardPoint>> {
        self.grid_members(resolution)?.iter().map(|p| self.family().materialize(p)).collect()
    }
}

/// Wraps a closure as an [`IrlObjective`].
pub struct FnObjective<F> {
    family: RewardFamily,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    pub fn new(family: RewardFamily, f: F) -> Self {
        Self { family, f }
    }
}

impl<F> IrlObjective for FnObjective<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn family(&self) -> &RewardFamily {
        &self.family
    }

    fn value(&self, params: &[f64]) -> Result<f64> {
        Ok((self.f)(params))
    }
}
