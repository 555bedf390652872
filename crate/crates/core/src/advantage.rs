//! Contrast regression on pseudo-outcomes and the policy it induces.
//!
//! Each non-baseline action gets its own regressor of `tau~(a)` on the state;
//! the baseline column is identically zero and is never fitted.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approximator::{fit_regression, ModelConfig, Regressor};
use crate::domain::{ActionId, GreedyPolicy, QFunction, StateVec};
use crate::error::{Error, Result};
use crate::pseudo::PseudoTable;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvantageConfig {
    pub model: ModelConfig,
}

impl Default for AdvantageConfig {
    fn default() -> Self {
        AdvantageConfig {
            model: ModelConfig::dense_default(),
        }
    }
}

/// Fitted `tau^(a, s)` for every action, with `tau^(a0, s) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastModel {
    pub baseline: usize,
    pub num_actions: usize,
    /// `None` exactly at the baseline.
    pub regressors: Vec<Option<Regressor>>,
    pub config: AdvantageConfig,
}

impl ContrastModel {
    pub fn tau(&self, action: usize, state: &[f64]) -> f64 {
        match &self.regressors[action] {
            Some(r) => r.predict(state),
            None => 0.0,
        }
    }
}

impl QFunction for ContrastModel {
    fn num_actions(&self) -> usize {
        self.num_actions
    }
    fn values(&self, state: &[f64]) -> Vec<f64> {
        (0..self.num_actions).map(|a| self.tau(a, state)).collect()
    }
}

pub fn fit_contrast(pt: &PseudoTable, cfg: &AdvantageConfig, seed: u64) -> Result<ContrastModel> {
    if pt.rows.is_empty() {
        return Err(Error::EmptyData("pseudo table"));
    }
    let na = pt.num_actions;
    if pt.baseline >= na {
        return Err(Error::MissingAction(pt.baseline));
    }
    for row in &pt.rows {
        if row.tau_tilde.len() < na {
            return Err(Error::MissingAction(row.tau_tilde.len()));
        }
    }
    let states: Vec<StateVec> = pt.rows.iter().map(|r| r.state.clone()).collect();
    let regressors = (0..na)
        .into_par_iter()
        .map(|a| {
            if a == pt.baseline {
                return Ok(None);
            }
            let targets: Vec<f64> = pt.rows.iter().map(|r| r.tau_tilde[a]).collect();
            fit_regression(
                &states,
                &targets,
                &cfg.model,
                rng::derive_seed(seed, &[a as u64]),
            )
            .map(Some)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ContrastModel {
        baseline: pt.baseline,
        num_actions: na,
        regressors,
        config: cfg.clone(),
    })
}

/// `s -> argmax_a tau^(a, s)`, ties to the smallest id.
pub fn seal_policy(tau_hat: ContrastModel) -> GreedyPolicy<ContrastModel> {
    GreedyPolicy { q: tau_hat }
}

/// `Q(a, s) - Q(a0, s)` from a Q estimate.
#[derive(Debug, Clone)]
pub struct PlugInContrast<Q> {
    pub q: Q,
    pub baseline: usize,
}

impl<Q: QFunction> QFunction for PlugInContrast<Q> {
    fn num_actions(&self) -> usize {
        self.q.num_actions()
    }
    fn values(&self, state: &[f64]) -> Vec<f64> {
        let v = self.q.values(state);
        let base = v[self.baseline];
        v.iter()
            .enumerate()
            .map(|(a, x)| if a == self.baseline { 0.0 } else { x - base })
            .collect()
    }
}

/// Weighted mean of `|tau^(a, s) - tau(a, s)|^2` over states and `a != a0`.
/// Uniform weights when `weights` is `None`.
pub fn contrast_mse(
    tau_hat: &dyn QFunction,
    oracle: &dyn QFunction,
    baseline: ActionId,
    states: &[StateVec],
    weights: Option<&[f64]>,
) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::EmptyData("evaluation states"));
    }
    if let Some(w) = weights {
        if w.len() != states.len() {
            return Err(Error::Shape {
                expected: states.len(),
                got: w.len(),
            });
        }
    }
    let na = tau_hat.num_actions();
    if na < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut mass = 0.0;
    for (i, s) in states.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let (est, truth) = (tau_hat.values(s), oracle.values(s));
        let sq: f64 = (0..na)
            .filter(|&a| a != baseline.0)
            .map(|a| (est[a] - truth[a]).powi(2))
            .sum();
        total += w * sq / (na - 1) as f64;
        mass += w;
    }
    Ok(total / mass)
}
