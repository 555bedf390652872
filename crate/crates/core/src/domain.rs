//! Logged-data types, dataset validation, fold splitting and policies.
//!
//! A [`Dataset`] is a list of trajectories; each trajectory stores its
//! `T` steps plus an explicit terminal state so every step has a next state.
//! Propensities `b(A_t | S_t)` are part of the data and must lie in `(0, 1]`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// A point in the state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVec(pub Vec<f64>);

impl StateVec {
    pub fn new(coords: Vec<f64>) -> Self {
        StateVec(coords)
    }

    /// Unit vector `e_index` of length `dim`; the encoding used for tabular states.
    pub fn one_hot(index: usize, dim: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        StateVec(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl Deref for StateVec {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for StateVec {
    fn from(v: Vec<f64>) -> Self {
        StateVec(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

impl ActionId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Discount factor, `0 <= gamma < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Discount(f64);

impl Discount {
    pub fn new(gamma: f64) -> Result<Self> {
        if (0.0..1.0).contains(&gamma) {
            Ok(Discount(gamma))
        } else {
            Err(Error::InvalidDiscount(gamma))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `gamma / (1 - gamma)`, the weight of the augmentation term.
    pub fn horizon_weight(self) -> f64 {
        self.0 / (1.0 - self.0)
    }
}

impl TryFrom<f64> for Discount {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Discount::new(v)
    }
}

impl From<Discount> for f64 {
    fn from(d: Discount) -> f64 {
        d.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: StateVec,
    pub action: ActionId,
    pub reward: f64,
    /// `b(action | state)` under the logging policy.
    pub propensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub steps: Vec<Step>,
    pub terminal_state: StateVec,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn next_state(&self, t: usize) -> &StateVec {
        if t + 1 < self.steps.len() {
            &self.steps[t + 1].state
        } else {
            &self.terminal_state
        }
    }
}

/// One logged transition `(S_t, A_t, R_t, S_{t+1})` with its propensity.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    /// Position of the trajectory inside the dataset.
    pub traj: usize,
    pub id: u64,
    pub t: usize,
    pub state: &'a [f64],
    pub action: usize,
    pub reward: f64,
    pub propensity: f64,
    pub next_state: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub num_actions: usize,
    pub state_dim: usize,
}

impl Dataset {
    /// Builds a dataset and rejects it unless [`validate_dataset`] finds nothing.
    pub fn new(trajectories: Vec<Trajectory>, num_actions: usize) -> Result<Self> {
        let state_dim = trajectories
            .first()
            .map(|t| t.terminal_state.dim())
            .unwrap_or(0);
        let d = Dataset {
            trajectories,
            num_actions,
            state_dim,
        };
        let report = validate_dataset(&d);
        if report.is_empty() {
            Ok(d)
        } else {
            Err(Error::Validation(report))
        }
    }

    pub fn num_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn num_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.trajectories.iter().map(|t| t.id).collect()
    }

    pub fn transitions(&self) -> Vec<Transition<'_>> {
        let mut out = Vec::with_capacity(self.num_steps());
        for (ti, traj) in self.trajectories.iter().enumerate() {
            for (t, step) in traj.steps.iter().enumerate() {
                out.push(Transition {
                    traj: ti,
                    id: traj.id,
                    t,
                    state: &step.state,
                    action: step.action.0,
                    reward: step.reward,
                    propensity: step.propensity,
                    next_state: traj.next_state(t),
                });
            }
        }
        out
    }

    /// Trajectories whose id is in `ids`, in dataset order.
    pub fn subset(&self, ids: &BTreeSet<u64>) -> Dataset {
        Dataset {
            trajectories: self
                .trajectories
                .iter()
                .filter(|t| ids.contains(&t.id))
                .cloned()
                .collect(),
            num_actions: self.num_actions,
            state_dim: self.state_dim,
        }
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.trajectories
            .iter()
            .flat_map(|t| t.steps.iter())
            .fold(0.0_f64, |m, s| m.max(s.reward.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyDataset,
    EmptyTrajectory {
        id: u64,
    },
    DuplicateId {
        id: u64,
    },
    NonFinite {
        id: u64,
        t: usize,
        what: &'static str,
    },
    PropensityOutOfRange {
        id: u64,
        t: usize,
        value: f64,
    },
    ActionOutOfRange {
        id: u64,
        t: usize,
        action: usize,
    },
    DimensionMismatch {
        id: u64,
        t: usize,
        expected: usize,
        got: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyDataset => write!(f, "dataset has no trajectories"),
            Violation::EmptyTrajectory { id } => write!(f, "trajectory {id} has no steps"),
            Violation::DuplicateId { id } => write!(f, "trajectory id {id} appears twice"),
            Violation::NonFinite { id, t, what } => {
                write!(f, "trajectory {id} step {t}: non-finite {what}")
            }
            Violation::PropensityOutOfRange { id, t, value } => {
                write!(
                    f,
                    "trajectory {id} step {t}: propensity not in (0,1] ({value})"
                )
            }
            Violation::ActionOutOfRange { id, t, action } => {
                write!(
                    f,
                    "trajectory {id} step {t}: action out of range ({action})"
                )
            }
            Violation::DimensionMismatch {
                id,
                t,
                expected,
                got,
            } => write!(
                f,
                "trajectory {id} step {t}: dimension mismatch (expected {expected}, got {got})"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.messages().join("; "))
    }
}

pub fn validate_dataset(d: &Dataset) -> ValidationReport {
    let mut violations = Vec::new();
    if d.trajectories.is_empty() {
        violations.push(Violation::EmptyDataset);
    }
    let mut seen = BTreeSet::new();
    let dim = d.state_dim;
    for traj in &d.trajectories {
        let id = traj.id;
        if !seen.insert(id) {
            violations.push(Violation::DuplicateId { id });
        }
        if traj.steps.is_empty() {
            violations.push(Violation::EmptyTrajectory { id });
        }
        let check_state = |t: usize, s: &StateVec, violations: &mut Vec<Violation>| {
            if s.dim() != dim || dim == 0 {
                violations.push(Violation::DimensionMismatch {
                    id,
                    t,
                    expected: dim,
                    got: s.dim(),
                });
            }
            if s.iter().any(|x| !x.is_finite()) {
                violations.push(Violation::NonFinite {
                    id,
                    t,
                    what: "state",
                });
            }
        };
        for (t, step) in traj.steps.iter().enumerate() {
            check_state(t, &step.state, &mut violations);
            if !step.reward.is_finite() {
                violations.push(Violation::NonFinite {
                    id,
                    t,
                    what: "reward",
                });
            }
            if !(step.propensity > 0.0 && step.propensity <= 1.0) {
                violations.push(Violation::PropensityOutOfRange {
                    id,
                    t,
                    value: step.propensity,
                });
            }
            if step.action.0 >= d.num_actions {
                violations.push(Violation::ActionOutOfRange {
                    id,
                    t,
                    action: step.action.0,
                });
            }
        }
        check_state(traj.steps.len(), &traj.terminal_state, &mut violations);
    }
    ValidationReport { violations }
}

/// Partition of trajectory ids into `num_folds` folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub num_folds: usize,
    pub fold_of: BTreeMap<u64, usize>,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn fold(&self, id: u64) -> Option<usize> {
        self.fold_of.get(&id).copied()
    }

    pub fn members(&self, fold: usize) -> BTreeSet<u64> {
        self.fold_of
            .iter()
            .filter(|(_, &k)| k == fold)
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn complement(&self, fold: usize) -> BTreeSet<u64> {
        self.fold_of
            .iter()
            .filter(|(_, &k)| k != fold)
            .map(|(&id, _)| id)
            .collect()
    }
}

/// Randomly partitions the trajectory ids into `num_folds` near-equal folds.
pub fn split_folds(d: &Dataset, num_folds: usize, seed: u64) -> Result<FoldAssignment> {
    let n = d.num_trajectories();
    if num_folds < 1 || num_folds > n {
        return Err(Error::InvalidFoldCount {
            folds: num_folds,
            trajectories: n,
        });
    }
    let mut ids = d.ids();
    ids.sort_unstable();
    ids.shuffle(&mut rng::stream(seed, &[0xF01D]));
    let fold_of = ids
        .into_iter()
        .enumerate()
        .map(|(pos, id)| (id, pos % num_folds))
        .collect();
    Ok(FoldAssignment {
        num_folds,
        fold_of,
        seed,
    })
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// State-action value function over a finite action set.
pub trait QFunction: Send + Sync {
    fn num_actions(&self) -> usize;

    /// Values of every action at `state`.
    fn values(&self, state: &[f64]) -> Vec<f64>;

    fn value(&self, action: usize, state: &[f64]) -> f64 {
        self.values(state)[action]
    }

    fn max_value(&self, state: &[f64]) -> f64 {
        self.values(state)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl<Q: QFunction + ?Sized> QFunction for Arc<Q> {
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }
    fn values(&self, state: &[f64]) -> Vec<f64> {
        (**self).values(state)
    }
}

impl<Q: QFunction + ?Sized> QFunction for &Q {
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }
    fn values(&self, state: &[f64]) -> Vec<f64> {
        (**self).values(state)
    }
}

/// Action law of a policy at one state.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionDistribution {
    Point(ActionId),
    Probabilities(Vec<f64>),
}

impl ActionDistribution {
    pub fn prob(&self, action: usize) -> f64 {
        match self {
            ActionDistribution::Point(a) => {
                if a.0 == action {
                    1.0
                } else {
                    0.0
                }
            }
            ActionDistribution::Probabilities(p) => p[action],
        }
    }

    pub fn to_vec(&self, num_actions: usize) -> Vec<f64> {
        match self {
            ActionDistribution::Point(a) => {
                let mut v = vec![0.0; num_actions];
                v[a.0] = 1.0;
                v
            }
            ActionDistribution::Probabilities(p) => p.clone(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ActionId {
        match self {
            ActionDistribution::Point(a) => *a,
            ActionDistribution::Probabilities(p) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, &pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        return ActionId(i);
                    }
                }
                // rounding: fall back to the last action with positive mass
                ActionId(p.iter().rposition(|&x| x > 0.0).unwrap_or(0))
            }
        }
    }
}

/// A stationary, Markov policy.
pub trait Policy: Send + Sync {
    fn num_actions(&self) -> usize;

    fn distribution(&self, state: &[f64]) -> ActionDistribution;

    fn prob(&self, action: usize, state: &[f64]) -> f64 {
        self.distribution(state).prob(action)
    }

    fn probabilities(&self, state: &[f64]) -> Vec<f64> {
        self.distribution(state).to_vec(self.num_actions())
    }
}

impl<P: Policy + ?Sized> Policy for Arc<P> {
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }
    fn distribution(&self, state: &[f64]) -> ActionDistribution {
        (**self).distribution(state)
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }
    fn distribution(&self, state: &[f64]) -> ActionDistribution {
        (**self).distribution(state)
    }
}

/// Always takes the same action.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy {
    pub action: ActionId,
    pub num_actions: usize,
}

impl Policy for ConstantPolicy {
    fn num_actions(&self) -> usize {
        self.num_actions
    }
    fn distribution(&self, _state: &[f64]) -> ActionDistribution {
        ActionDistribution::Point(self.action)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UniformPolicy {
    pub num_actions: usize,
}

impl Policy for UniformPolicy {
    fn num_actions(&self) -> usize {
        self.num_actions
    }
    fn distribution(&self, _state: &[f64]) -> ActionDistribution {
        ActionDistribution::Probabilities(vec![1.0 / self.num_actions as f64; self.num_actions])
    }
}

/// Per-cell action probabilities for one-hot encoded tabular states.
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    /// `probs[s][a]`.
    pub probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        for (s, row) in probs.iter().enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "policy row {s} is not a probability vector"
                )));
            }
        }
        Ok(TabularPolicy { probs })
    }
}

impl Policy for TabularPolicy {
    fn num_actions(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }
    fn distribution(&self, state: &[f64]) -> ActionDistribution {
        ActionDistribution::Probabilities(self.probs[argmax(state)].clone())
    }
}

/// Mixes a deterministic base policy with uniform exploration.
#[derive(Debug, Clone)]
pub struct EpsilonGreedy<P> {
    pub base: P,
    pub epsilon: f64,
}

impl<P: Policy> Policy for EpsilonGreedy<P> {
    fn num_actions(&self) -> usize {
        self.base.num_actions()
    }
    fn distribution(&self, state: &[f64]) -> ActionDistribution {
        let n = self.num_actions();
        let base = self.base.distribution(state).to_vec(n);
        let floor = self.epsilon / n as f64;
        ActionDistribution::Probabilities(
            base.into_iter()
                .map(|p| (1.0 - self.epsilon) * p + floor)
                .collect(),
        )
    }
}

/// `s -> argmax_a q(a, s)`, ties to the smallest action id.
#[derive(Debug, Clone)]
pub struct GreedyPolicy<Q> {
    pub q: Q,
}

impl<Q: QFunction> GreedyPolicy<Q> {
    pub fn action(&self, state: &[f64]) -> ActionId {
        ActionId(argmax(&self.q.values(state)))
    }
}

impl<Q: QFunction> Policy for GreedyPolicy<Q> {
    fn num_actions(&self) -> usize {
        self.q.num_actions()
    }
    fn distribution(&self, state: &[f64]) -> ActionDistribution {
        ActionDistribution::Point(self.action(state))
    }
}

pub fn greedy_policy<Q: QFunction>(q: Q) -> GreedyPolicy<Q> {
    GreedyPolicy { q }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(s: f64, a: usize, r: f64, b: f64) -> Step {
        Step {
            state: StateVec(vec![s]),
            action: ActionId(a),
            reward: r,
            propensity: b,
        }
    }

    fn traj(id: u64, steps: Vec<Step>) -> Trajectory {
        Trajectory {
            id,
            steps,
            terminal_state: StateVec(vec![0.0]),
        }
    }

    fn small(n: u64) -> Dataset {
        let trajectories = (0..n)
            .map(|id| traj(id, vec![step(0.1, 0, 1.0, 0.5), step(0.2, 1, 0.0, 0.5)]))
            .collect();
        Dataset::new(trajectories, 2).unwrap()
    }

    struct FnQ<F>(usize, F);

    impl<F: Fn(usize, &[f64]) -> f64 + Send + Sync> QFunction for FnQ<F> {
        fn num_actions(&self) -> usize {
            self.0
        }
        fn values(&self, s: &[f64]) -> Vec<f64> {
            (0..self.0).map(|a| (self.1)(a, s)).collect()
        }
    }

    #[test]
    fn well_formed_dataset_has_empty_report() {
        assert!(validate_dataset(&small(2)).is_empty());
    }

    #[test]
    fn zero_propensity_is_flagged() {
        let mut d = small(2);
        d.trajectories[0].steps[1].propensity = 0.0;
        let msgs = validate_dataset(&d).messages();
        assert_eq!(msgs.len(), 1);
        assert!(msgs[0].contains("propensity not in (0,1]"));
    }

    #[test]
    fn action_equal_to_num_actions_is_flagged() {
        let mut d = small(2);
        d.trajectories[1].steps[0].action = ActionId(2);
        let msgs = validate_dataset(&d).messages();
        assert!(msgs.iter().any(|m| m.contains("action out of range")));
    }

    #[test]
    fn dimension_and_finiteness_are_checked() {
        let mut d = small(2);
        d.trajectories[0].terminal_state = StateVec(vec![0.0, 1.0]);
        d.trajectories[1].steps[0].reward = f64::NAN;
        let report = validate_dataset(&d);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DimensionMismatch { .. })));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::NonFinite { what: "reward", .. })));
        assert!(matches!(
            Dataset::new(d.trajectories.clone(), 2),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn folds_partition_ids() {
        let d = small(4);
        let f = split_folds(&d, 2, 11).unwrap();
        let a = f.members(0);
        let b = f.members(1);
        assert_eq!(a.len(), 2);
        assert_eq!(b.len(), 2);
        assert!(a.is_disjoint(&b));
        let all: BTreeSet<u64> = a.union(&b).copied().collect();
        assert_eq!(all, d.ids().into_iter().collect());
        assert_eq!(f.complement(0), b);
    }

    #[test]
    fn odd_fold_sizes_differ_by_one() {
        let f = split_folds(&small(5), 2, 3).unwrap();
        let mut sizes = vec![f.members(0).len(), f.members(1).len()];
        sizes.sort();
        assert_eq!(sizes, vec![2, 3]);
    }

    #[test]
    fn folds_are_deterministic_and_checked() {
        let d = small(9);
        assert_eq!(
            split_folds(&d, 3, 5).unwrap(),
            split_folds(&d, 3, 5).unwrap()
        );
        assert!(matches!(
            split_folds(&d, 10, 0),
            Err(Error::InvalidFoldCount { .. })
        ));
        assert!(split_folds(&d, 0, 0).is_err());
    }

    #[test]
    fn fold_assignment_json_shape() {
        let f = split_folds(&small(3), 2, 42).unwrap();
        let v: serde_json::Value = serde_json::to_value(&f).unwrap();
        assert_eq!(v["num_folds"], 2);
        assert_eq!(v["seed"], 42);
        assert!(v["fold_of"]["0"].is_u64());
        let back: FoldAssignment = serde_json::from_value(v).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn greedy_prefers_larger_value() {
        let q = FnQ(2, |a: usize, _s: &[f64]| if a == 1 { 2.0 } else { 1.0 });
        let p = greedy_policy(q);
        for s in [0.0, 0.5, 1.0] {
            assert_eq!(p.action(&[s]), ActionId(1));
        }
    }

    #[test]
    fn greedy_ties_go_to_smallest_action() {
        let p = greedy_policy(FnQ(3, |_a: usize, _s: &[f64]| 4.0));
        assert_eq!(p.action(&[0.3]), ActionId(0));
        let p = greedy_policy(FnQ(3, |a: usize, _s: &[f64]| -(a as f64)));
        assert_eq!(p.action(&[0.3]), ActionId(0));
    }

    #[test]
    fn discount_bounds() {
        assert!(Discount::new(0.0).is_ok());
        assert!(Discount::new(1.0).is_err());
        assert!(Discount::new(-0.1).is_err());
        assert_eq!(Discount::new(0.5).unwrap().horizon_weight(), 1.0);
    }

    #[test]
    fn epsilon_greedy_probabilities_sum_to_one() {
        let p = EpsilonGreedy {
            base: ConstantPolicy {
                action: ActionId(2),
                num_actions: 4,
            },
            epsilon: 0.1,
        };
        let v = p.probabilities(&[0.0]);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((v[2] - 0.925).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn greedy_choice_is_a_maximizer(vals in proptest::collection::vec(-5.0f64..5.0, 1..6)) {
            let n = vals.len();
            let vals2 = vals.clone();
            let p = greedy_policy(FnQ(n, move |a: usize, _s: &[f64]| vals2[a]));
            let a = p.action(&[0.0]).0;
            proptest::prop_assert!(vals.iter().all(|&v| vals[a] >= v));
        }

        #[test]
        fn split_is_partition(n in 1u64..40, l in 1usize..6, seed in 0u64..1000) {
            proptest::prop_assume!(l as u64 <= n);
            let f = split_folds(&small(n), l, seed).unwrap();
            let sizes: Vec<usize> = (0..l).map(|k| f.members(k).len()).collect();
            proptest::prop_assert_eq!(sizes.iter().sum::<usize>(), n as usize);
            proptest::prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
