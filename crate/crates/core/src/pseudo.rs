//! Cross-fitted doubly-robust pseudo-outcomes.
//!
//! For an anchor step `(i, t)` in fold `l` and an action `a`, with nuisances
//! `(Q, pi, w)` fitted on the other folds,
//!
//! ```text
//! Q~(a) = Q(a, S) + 1{A = a} / b(A|S) * delta(i, t) + gamma / (1 - gamma) * eta~(a)
//! eta~(a) = mean over k in M of pi(A_k|S_k) / b_k * w(S_k | a, S) * delta_k
//! ```
//!
//! where `delta = R + gamma sum_a' pi(a'|S') Q(a', S') - Q(A, S)` and `M` is a
//! minibatch of other steps from the same fold. With `pi` greedy in `Q` the
//! residual is the usual `R + gamma max Q(., S') - Q(A, S)`. The contrast
//! target is `tau~(a) = Q~(a) - Q~(a0)`.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    ActionId, Dataset, Discount, FoldAssignment, Policy, QFunction, StateVec, Transition,
};
use crate::error::{Error, Result};
use crate::ratio::StateRatio;
use crate::rng;

/// `R + gamma max_a' Q(a', S') - Q(A, S)`.
pub fn bellman_residual(q: &dyn QFunction, x: &Transition<'_>, gamma: Discount) -> f64 {
    x.reward + gamma.value() * q.max_value(x.next_state) - q.value(x.action, x.state)
}

/// `R + gamma sum_a' pi(a'|S') Q(a', S') - Q(A, S)`.
pub fn policy_residual(
    q: &dyn QFunction,
    pi: &dyn Policy,
    x: &Transition<'_>,
    gamma: Discount,
) -> f64 {
    let next = q.values(x.next_state);
    let v: f64 = pi
        .probabilities(x.next_state)
        .iter()
        .zip(&next)
        .filter(|(p, _)| **p != 0.0)
        .map(|(p, q)| p * q)
        .sum();
    x.reward + gamma.value() * v - q.value(x.action, x.state)
}

/// Nuisances used for one fold, and the trajectories they were fitted on.
#[derive(Clone)]
pub struct FoldNuisance {
    pub q: Arc<dyn QFunction>,
    pub pi: Arc<dyn Policy>,
    pub w: Arc<dyn StateRatio>,
    pub trained_on: BTreeSet<u64>,
}

impl FoldNuisance {
    /// `pi(A_k|S_k) / b_k * w(S_k | a, S)` with `w` already conditioned on the anchor.
    fn weight(&self, w_anchor: &dyn Fn(&[f64]) -> f64, x: &Transition<'_>) -> f64 {
        let p = self.pi.prob(x.action, x.state);
        if p == 0.0 {
            0.0
        } else {
            p / x.propensity * w_anchor(x.state)
        }
    }
}

pub struct NuisanceSet {
    pub folds: Vec<FoldNuisance>,
}

/// `mean_k omega(A_k, S_k | a, S) delta_k` over `minibatch`.
pub fn eta_tilde(
    action: usize,
    state: &[f64],
    nuisance: &FoldNuisance,
    minibatch: &[Transition<'_>],
    gamma: Discount,
) -> Result<f64> {
    if minibatch.is_empty() {
        return Err(Error::EmptyData("eta minibatch"));
    }
    let w_anchor = nuisance.w.conditional(action, state);
    let total: f64 = minibatch
        .iter()
        .map(|x| {
            let omega = nuisance.weight(&*w_anchor, x);
            if omega == 0.0 {
                0.0
            } else {
                omega * policy_residual(&*nuisance.q, &*nuisance.pi, x, gamma)
            }
        })
        .sum();
    Ok(total / minibatch.len() as f64)
}

/// Pseudo outcome `Q~` for action `a` at the anchor step.
pub fn q_pseudo(
    anchor: &Transition<'_>,
    action: usize,
    nuisance: &FoldNuisance,
    gamma: Discount,
    minibatch: &[Transition<'_>],
) -> Result<f64> {
    let mut out = nuisance.q.value(action, anchor.state);
    if anchor.action == action {
        if !(anchor.propensity > 0.0) {
            return Err(Error::ZeroPropensity(anchor.propensity));
        }
        out += policy_residual(&*nuisance.q, &*nuisance.pi, anchor, gamma) / anchor.propensity;
    }
    let g = gamma.value();
    if g > 0.0 {
        out += g / (1.0 - g) * eta_tilde(action, anchor.state, nuisance, minibatch, gamma)?;
    }
    Ok(out)
}

/// `Q~(a) - Q~(a0)` with separate minibatches for the two arms.
pub fn tau_pseudo(
    anchor: &Transition<'_>,
    action: usize,
    a0: usize,
    nuisance: &FoldNuisance,
    gamma: Discount,
    minibatch_a: &[Transition<'_>],
    minibatch_a0: &[Transition<'_>],
) -> Result<f64> {
    if action == a0 {
        return Ok(0.0);
    }
    Ok(q_pseudo(anchor, action, nuisance, gamma, minibatch_a)?
        - q_pseudo(anchor, a0, nuisance, gamma, minibatch_a0)?)
}

/// Most frequent logged action, ties to the smallest id.
pub fn choose_baseline_action(d: &Dataset) -> Result<ActionId> {
    let mut counts = vec![0usize; d.num_actions.max(1)];
    let mut any = false;
    for t in &d.trajectories {
        for s in &t.steps {
            counts[s.action.0] += 1;
            any = true;
        }
    }
    if !any {
        return Err(Error::EmptyData("no actions to choose a baseline from"));
    }
    let mut best = 0;
    for (a, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = a;
        }
    }
    Ok(ActionId(best))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PseudoConfig {
    /// `|M|`; defaults to `min(256, fold steps - 1)`.
    pub minibatch_size: Option<usize>,
    /// Pseudo outcomes are clipped to `+-clip_multiple * R_max / (1 - gamma)`;
    /// `None` disables clipping.
    pub clip_multiple: Option<f64>,
    /// Average over every other step of the fold instead of a minibatch.
    pub full_sum: bool,
    /// Fixed baseline action; the modal action when absent.
    pub baseline: Option<usize>,
    /// Keep the minibatch membership of every entry.
    pub record_minibatches: bool,
}

impl Default for PseudoConfig {
    fn default() -> Self {
        PseudoConfig {
            minibatch_size: None,
            clip_multiple: Some(3.0),
            full_sum: false,
            baseline: None,
            record_minibatches: false,
        }
    }
}

pub const DEFAULT_MINIBATCH: usize = 256;

/// Pseudo outcomes for every action at one logged step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoRow {
    pub traj: u64,
    pub t: usize,
    pub fold: usize,
    pub state: StateVec,
    pub q_tilde: Vec<f64>,
    pub tau_tilde: Vec<f64>,
    /// `(trajectory id, t)` of the eta minibatch per action, when recorded.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub minibatches: Vec<Vec<(u64, usize)>>,
}

/// One line of the pseudo-outcome file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoEntry {
    pub traj: u64,
    pub t: usize,
    pub a: usize,
    pub q_tilde: f64,
    pub tau_tilde: f64,
    pub fold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoTable {
    pub rows: Vec<PseudoRow>,
    pub num_actions: usize,
    pub baseline: usize,
}

impl PseudoTable {
    pub fn len(&self) -> usize {
        self.rows.len() * self.num_actions
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = PseudoEntry> + '_ {
        self.rows.iter().flat_map(|r| {
            (0..self.num_actions).map(move |a| PseudoEntry {
                traj: r.traj,
                t: r.t,
                a,
                q_tilde: r.q_tilde[a],
                tau_tilde: r.tau_tilde[a],
                fold: r.fold,
            })
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for e in self.entries() {
            serde_json::to_writer(&mut out, &e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Checks that no fold's nuisance saw a trajectory of that fold.
pub fn check_provenance(folds: &FoldAssignment, nuisances: &NuisanceSet) -> Result<()> {
    if nuisances.folds.len() != folds.num_folds {
        return Err(Error::Shape {
            expected: folds.num_folds,
            got: nuisances.folds.len(),
        });
    }
    for (l, n) in nuisances.folds.iter().enumerate() {
        if let Some(&id) = n.trained_on.iter().find(|&&id| folds.fold(id) == Some(l)) {
            return Err(Error::CrossFitting {
                fold: l,
                trajectory: id,
            });
        }
    }
    Ok(())
}

/// Builds the cross-fitted table. Entry `(i, t, a)` draws its eta minibatch
/// from its own seed stream, so the result does not depend on scheduling.
pub fn build_pseudo_table(
    d: &Dataset,
    folds: &FoldAssignment,
    nuisances: &NuisanceSet,
    gamma: Discount,
    cfg: &PseudoConfig,
    seed: u64,
) -> Result<PseudoTable> {
    check_provenance(folds, nuisances)?;
    let a0 = match cfg.baseline {
        Some(a) if a < d.num_actions => a,
        Some(a) => {
            return Err(Error::config(
                "pseudo.baseline",
                format!("action {a} out of range"),
            ))
        }
        None => choose_baseline_action(d)?.0,
    };
    let all = d.transitions();
    let mut by_fold: Vec<Vec<Transition<'_>>> = vec![Vec::new(); folds.num_folds];
    let mut anchors = Vec::with_capacity(all.len());
    for x in &all {
        let l = folds
            .fold(x.id)
            .ok_or_else(|| Error::InvalidArgument(format!("trajectory {} has no fold", x.id)))?;
        anchors.push((l, by_fold[l].len()));
        by_fold[l].push(*x);
    }
    let g = gamma.value();
    let bound = cfg
        .clip_multiple
        .map(|c| c * d.max_abs_reward() / (1.0 - g));
    let na = d.num_actions;

    // pi(A_k|S_k) / b_k and the residual of every step, per fold
    let cache: Vec<Vec<(f64, f64)>> = by_fold
        .iter()
        .zip(&nuisances.folds)
        .map(|(pool, n)| {
            pool.par_iter()
                .map(|x| {
                    let pib = n.pi.prob(x.action, x.state) / x.propensity;
                    (pib, policy_residual(&*n.q, &*n.pi, x, gamma))
                })
                .collect()
        })
        .collect();

    let rows: Vec<PseudoRow> = anchors
        .par_iter()
        .map(|&(l, pos)| -> Result<PseudoRow> {
            let pool = &by_fold[l];
            let aux = &cache[l];
            let x = &pool[pos];
            let nuisance = &nuisances.folds[l];
            let others = pool.len() - 1;
            if g > 0.0 && others == 0 {
                return Err(Error::BatchTooSmall { needed: 2, got: 1 });
            }
            let size = if cfg.full_sum {
                others
            } else {
                cfg.minibatch_size.unwrap_or(DEFAULT_MINIBATCH).min(others)
            };
            let q_hat = nuisance.q.values(x.state);
            let mut q_tilde = vec![0.0; na];
            let mut minibatches = Vec::new();
            for (a, q) in q_tilde.iter_mut().enumerate() {
                let picks: Vec<usize> = if g == 0.0 || size == 0 {
                    Vec::new()
                } else if size == others {
                    (0..pool.len()).filter(|&k| k != pos).collect()
                } else {
                    let mut r = rng::stream(seed, &[x.id, x.t as u64, a as u64]);
                    sample_indices(&mut r, others, size)
                        .into_iter()
                        .map(|k| if k >= pos { k + 1 } else { k })
                        .collect()
                };
                // same arithmetic as `q_pseudo`, with the cached factors
                let mut v = q_hat[a];
                if x.action == a {
                    v += aux[pos].1 / x.propensity;
                }
                if g > 0.0 {
                    let w_anchor = nuisance.w.conditional(a, x.state);
                    let total: f64 = picks
                        .iter()
                        .map(|&k| {
                            let (pib, resid) = aux[k];
                            if pib == 0.0 {
                                0.0
                            } else {
                                pib * w_anchor(pool[k].state) * resid
                            }
                        })
                        .sum();
                    v += g / (1.0 - g) * (total / picks.len() as f64);
                }
                if let Some(b) = bound {
                    v = v.clamp(-b, b);
                }
                if !v.is_finite() {
                    return Err(Error::NonFinite("pseudo outcome"));
                }
                *q = v;
                if cfg.record_minibatches {
                    minibatches.push(picks.iter().map(|&k| (pool[k].id, pool[k].t)).collect());
                }
            }
            let tau_tilde = (0..na)
                .map(|a| {
                    if a == a0 {
                        0.0
                    } else {
                        q_tilde[a] - q_tilde[a0]
                    }
                })
                .collect();
            Ok(PseudoRow {
                traj: x.id,
                t: x.t,
                fold: l,
                state: StateVec(x.state.to_vec()),
                q_tilde,
                tau_tilde,
                minibatches,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PseudoTable {
        rows,
        num_actions: na,
        baseline: a0,
    })
}
