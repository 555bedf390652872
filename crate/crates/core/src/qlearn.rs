//! Offline initial Q-estimation: fitted Q-iteration, DQN and double DQN on a
//! fixed replay set, and a quantile (distributional) fitted iteration.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approximator::{
    adam_step, AdamConfig, AdamState, ModelConfig, ModelWorkspace, QModel, Sample,
};
use crate::domain::{argmax, Dataset, Discount, QFunction, Transition};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QVariant {
    #[default]
    Fqi,
    Dqn,
    DoubleDqn,
    Quantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QTrainConfig {
    pub variant: QVariant,
    pub model: ModelConfig,
    /// Fitted rounds for `fqi` and `quantile`.
    pub iterations: usize,
    /// Gradient steps for `dqn` and `double_dqn`.
    pub steps: usize,
    pub batch_size: usize,
    /// Target network sync period, in gradient steps.
    pub target_sync: usize,
    pub num_quantiles: usize,
    /// Optimizer for the DQN variants.
    pub adam: AdamConfig,
}

impl Default for QTrainConfig {
    fn default() -> Self {
        QTrainConfig {
            variant: QVariant::Fqi,
            model: ModelConfig::dense_default(),
            iterations: 60,
            steps: 5000,
            batch_size: 32,
            target_sync: 200,
            num_quantiles: 5,
            adam: AdamConfig::default(),
        }
    }
}

impl QTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_sync == 0 {
            return Err(Error::config("qlearn.target_sync", "must be >= 1"));
        }
        if self.num_quantiles == 0 {
            return Err(Error::config("qlearn.num_quantiles", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("qlearn.batch_size", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f64,
}

/// A fitted Q-function. The quantile variant stores `num_quantiles` outputs
/// per action (`a * K + j`) and reports their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QEstimate {
    Point { model: QModel },
    Quantile { model: QModel, num_quantiles: usize },
}

impl QEstimate {
    pub fn model(&self) -> &QModel {
        match self {
            QEstimate::Point { model } | QEstimate::Quantile { model, .. } => model,
        }
    }

    /// Per-action quantiles at `state`, `[a][j]`; point models give one column.
    pub fn quantiles(&self, state: &[f64]) -> Vec<Vec<f64>> {
        match self {
            QEstimate::Point { model } => {
                model.values(state).into_iter().map(|v| vec![v]).collect()
            }
            QEstimate::Quantile {
                model,
                num_quantiles,
            } => model
                .values(state)
                .chunks(*num_quantiles)
                .map(<[f64]>::to_vec)
                .collect(),
        }
    }
}

impl QFunction for QEstimate {
    fn num_actions(&self) -> usize {
        match self {
            QEstimate::Point { model } => model.num_outputs,
            QEstimate::Quantile {
                model,
                num_quantiles,
            } => model.num_outputs / num_quantiles,
        }
    }

    fn values(&self, state: &[f64]) -> Vec<f64> {
        match self {
            QEstimate::Point { model } => model.values(state),
            QEstimate::Quantile { num_quantiles, .. } => self
                .quantiles(state)
                .iter()
                .map(|q| q.iter().sum::<f64>() / *num_quantiles as f64)
                .collect(),
        }
    }
}

/// Output of a Q trainer: the estimate, its loss log, and the ids of the
/// trajectories it saw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedQ {
    pub q: QEstimate,
    pub log: Vec<LogEntry>,
    pub trained_on: BTreeSet<u64>,
}

fn nonempty(d: &Dataset) -> Result<Vec<Transition<'_>>> {
    let tr = d.transitions();
    if tr.is_empty() {
        return Err(Error::EmptyData("no transitions to train on"));
    }
    Ok(tr)
}

/// Dispatches on `cfg.variant`.
pub fn train_q(d: &Dataset, cfg: &QTrainConfig, gamma: Discount, seed: u64) -> Result<TrainedQ> {
    cfg.validate()?;
    let (q, log) = match cfg.variant {
        QVariant::Fqi => fqi(d, cfg, gamma, seed)?,
        QVariant::Dqn => dqn_offline(d, cfg, gamma, seed)?,
        QVariant::DoubleDqn => double_dqn_offline(d, cfg, gamma, seed)?,
        QVariant::Quantile => quantile_fqi(d, cfg, gamma, seed)?,
    };
    Ok(TrainedQ {
        q,
        log,
        trained_on: d.ids().into_iter().collect(),
    })
}

/// Fitted Q-iteration: round `k` regresses `R + gamma max_a Q_{k-1}(a, S')`
/// on `(A, S)`. `Q_0` is the backend's initialization.
pub fn fqi(
    d: &Dataset,
    cfg: &QTrainConfig,
    gamma: Discount,
    seed: u64,
) -> Result<(QEstimate, Vec<LogEntry>)> {
    let tr = nonempty(d)?;
    let mut model = QModel::new(&cfg.model, d.state_dim, d.num_actions, seed);
    let mut log = Vec::with_capacity(cfg.iterations);
    let g = gamma.value();
    for k in 0..cfg.iterations {
        let targets: Vec<f64> = tr
            .iter()
            .map(|x| x.reward + g * model.max_value(x.next_state))
            .collect();
        let samples: Vec<Sample<'_>> = tr
            .iter()
            .zip(&targets)
            .map(|(x, &y)| Sample {
                input: x.state,
                output: x.action,
                target: y,
            })
            .collect();
        let history = model.fit(&samples, rng::derive_seed(seed, &[0xF01, k as u64]))?;
        log.push(LogEntry {
            step: k + 1,
            loss: *history.last().expect("fit reports at least one loss"),
        });
    }
    Ok((QEstimate::Point { model }, log))
}

/// Minibatch trainer for DQN and double DQN on a fixed set of transitions.
///
/// Each [`DqnTrainer::step`] samples a minibatch with replacement, takes one
/// Adam step on the mean squared TD error against the target network, and
/// copies the online parameters into the target network every
/// `target_sync` steps.
pub struct DqnTrainer<'a> {
    data: Vec<Transition<'a>>,
    pub online: QModel,
    pub target: QModel,
    adam: AdamState,
    batch_size: usize,
    target_sync: usize,
    gamma: f64,
    double: bool,
    rng: ChaCha8Rng,
    steps_done: usize,
    ws: ModelWorkspace,
}

impl<'a> DqnTrainer<'a> {
    pub fn new(
        d: &'a Dataset,
        cfg: &QTrainConfig,
        gamma: Discount,
        double: bool,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let data = nonempty(d)?;
        let online = QModel::new(&cfg.model, d.state_dim, d.num_actions, seed);
        Ok(DqnTrainer {
            data,
            target: online.clone(),
            adam: AdamState::new(online.num_params(), cfg.adam),
            online,
            batch_size: cfg.batch_size,
            target_sync: cfg.target_sync,
            gamma: gamma.value(),
            double,
            rng: rng::stream(seed, &[0xD09]),
            steps_done: 0,
            ws: ModelWorkspace::default(),
        })
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    /// `R + gamma Q*(a', S')` with `a'` chosen by the target net (DQN) or
    /// the online net (double DQN).
    pub fn td_target(&self, x: &Transition<'_>) -> f64 {
        let next_target = self.target.values(x.next_state);
        let bootstrap = if self.double {
            next_target[argmax(&self.online.values(x.next_state))]
        } else {
            next_target
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        };
        x.reward + self.gamma * bootstrap
    }

    /// One gradient step; returns the minibatch loss before the update.
    pub fn step(&mut self) -> Result<f64> {
        let n = self.data.len();
        let m = self.batch_size;
        let mut grad = vec![0.0; self.online.num_params()];
        let mut up = vec![0.0; self.online.num_outputs];
        let mut loss = 0.0;
        for _ in 0..m {
            let x = self.data[self.rng.gen_range(0..n)];
            let y = self.td_target(&x);
            self.online.forward_ws(x.state, &mut self.ws)?;
            let e = self.ws.output()[x.action] - y;
            loss += e * e;
            up.iter_mut().for_each(|u| *u = 0.0);
            up[x.action] = 2.0 * e / m as f64;
            self.online.backward_ws(&self.ws, &up, &mut grad);
        }
        loss /= m as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("TD loss"));
        }
        adam_step(self.online.params_mut(), &grad, &mut self.adam);
        self.steps_done += 1;
        if self.steps_done.is_multiple_of(self.target_sync) {
            self.target
                .params_mut()
                .copy_from_slice(self.online.params());
        }
        Ok(loss)
    }

    pub fn run(mut self, steps: usize) -> Result<(QEstimate, Vec<LogEntry>)> {
        let mut log = Vec::new();
        let every = (steps / 100).max(1);
        for _ in 0..steps {
            let loss = self.step()?;
            if self.steps_done.is_multiple_of(every) {
                log.push(LogEntry {
                    step: self.steps_done,
                    loss,
                });
            }
        }
        if self.online.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("Q network parameters"));
        }
        Ok((QEstimate::Point { model: self.online }, log))
    }
}

pub fn dqn_offline(
    d: &Dataset,
    cfg: &QTrainConfig,
    gamma: Discount,
    seed: u64,
) -> Result<(QEstimate, Vec<LogEntry>)> {
    DqnTrainer::new(d, cfg, gamma, false, seed)?.run(cfg.steps)
}

pub fn double_dqn_offline(
    d: &Dataset,
    cfg: &QTrainConfig,
    gamma: Discount,
    seed: u64,
) -> Result<(QEstimate, Vec<LogEntry>)> {
    DqnTrainer::new(d, cfg, gamma, true, seed)?.run(cfg.steps)
}

/// `u (tau - 1{u < 0})` with `u = target - prediction`.
pub fn pinball_loss(tau: f64, u: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Quantile fractions `(2j - 1) / (2K)`.
pub fn quantile_fractions(k: usize) -> Vec<f64> {
    (1..=k)
        .map(|j| (2 * j - 1) as f64 / (2 * k) as f64)
        .collect()
}

/// Smallest sample value `x_(ceil(n tau))`, a minimizer of the empirical
/// pinball loss.
pub fn empirical_quantile(values: &mut [f64], tau: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let k = ((n as f64 * tau).ceil() as usize).clamp(1, n);
    values[k - 1]
}

/// Fitted quantile iteration. Each round forms the distributional targets
/// `R + gamma theta_j'(a*, S')` for every `j'`, where `a*` is greedy in the
/// quantile mean, and fits every quantile head `theta_j(A, S)` by pinball
/// loss at fraction `(2j-1)/(2K)` over the pooled targets. Tabular cells take
/// the exact empirical quantile; other backends run Adam on the pinball loss
/// (the dense schedule from the model config, or 200 epochs of size-64
/// batches at `lr = 1e-2` for linear models).
pub fn quantile_fqi(
    d: &Dataset,
    cfg: &QTrainConfig,
    gamma: Discount,
    seed: u64,
) -> Result<(QEstimate, Vec<LogEntry>)> {
    cfg.validate()?;
    let tr = nonempty(d)?;
    let kq = cfg.num_quantiles;
    let na = d.num_actions;
    let fractions = quantile_fractions(kq);
    let mut est = QEstimate::Quantile {
        model: QModel::new(&cfg.model, d.state_dim, na * kq, seed),
        num_quantiles: kq,
    };
    let g = gamma.value();
    let mut log = Vec::with_capacity(cfg.iterations);
    for k in 0..cfg.iterations {
        // targets[i] = the K next-state atoms for transition i
        let targets: Vec<Vec<f64>> = tr
            .iter()
            .map(|x| {
                let q = est.quantiles(x.next_state);
                let means: Vec<f64> = q.iter().map(|v| v.iter().sum::<f64>()).collect();
                q[argmax(&means)]
                    .iter()
                    .map(|&z| x.reward + g * z)
                    .collect()
            })
            .collect();
        let QEstimate::Quantile { model, .. } = &mut est else {
            unreachable!()
        };
        let loss = match cfg.model {
            ModelConfig::Tabular => fit_quantile_tabular(model, &tr, &targets, &fractions, na),
            ModelConfig::Dense {
                epochs,
                batch_size,
                adam,
                ..
            } => fit_quantile_adam(
                model,
                &tr,
                &targets,
                &fractions,
                epochs,
                batch_size,
                adam,
                rng::derive_seed(seed, &[0x9A7, k as u64]),
            )?,
            ModelConfig::Linear { .. } => fit_quantile_adam(
                model,
                &tr,
                &targets,
                &fractions,
                200,
                64,
                AdamConfig {
                    lr: 1e-2,
                    ..AdamConfig::default()
                },
                rng::derive_seed(seed, &[0x9A7, k as u64]),
            )?,
        };
        log.push(LogEntry { step: k + 1, loss });
    }
    Ok((est, log))
}

fn quantile_loss(pred: &[f64], atoms: &[f64], fractions: &[f64]) -> f64 {
    let mut total = 0.0;
    for (j, &tau) in fractions.iter().enumerate() {
        for &z in atoms {
            total += pinball_loss(tau, z - pred[j]);
        }
    }
    total / atoms.len() as f64
}

fn fit_quantile_tabular(
    model: &mut QModel,
    tr: &[Transition<'_>],
    targets: &[Vec<f64>],
    fractions: &[f64],
    num_actions: usize,
) -> f64 {
    let kq = fractions.len();
    let cells = model.input_dim;
    let mut pooled = vec![Vec::new(); cells * num_actions];
    for (x, atoms) in tr.iter().zip(targets) {
        pooled[argmax(x.state) * num_actions + x.action].extend_from_slice(atoms);
    }
    let params = model.params_mut();
    for (cell_action, values) in pooled.iter_mut().enumerate() {
        if values.is_empty() {
            continue;
        }
        for (j, &tau) in fractions.iter().enumerate() {
            params[cell_action * kq + j] = empirical_quantile(values, tau);
        }
    }
    let mut total = 0.0;
    for (x, atoms) in tr.iter().zip(targets) {
        let out = model.values(x.state);
        total += quantile_loss(&out[x.action * kq..(x.action + 1) * kq], atoms, fractions);
    }
    total / tr.len() as f64
}

#[allow(clippy::too_many_arguments)]
fn fit_quantile_adam(
    model: &mut QModel,
    tr: &[Transition<'_>],
    targets: &[Vec<f64>],
    fractions: &[f64],
    epochs: usize,
    batch_size: usize,
    adam: AdamConfig,
    seed: u64,
) -> Result<f64> {
    use rand::seq::SliceRandom;
    let kq = fractions.len();
    let mut r = rng::stream(seed, &[]);
    let mut state = AdamState::new(model.num_params(), adam);
    let mut order: Vec<usize> = (0..tr.len()).collect();
    let mut ws = ModelWorkspace::default();
    let mut grad = vec![0.0; model.num_params()];
    let mut up = vec![0.0; model.num_outputs];
    let mut last = f64::NAN;
    for _ in 0..epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        for chunk in order.chunks(batch_size.max(1)) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let m = chunk.len() as f64;
            for &i in chunk {
                let x = &tr[i];
                model.forward_ws(x.state, &mut ws)?;
                let pred = &ws.output()[x.action * kq..(x.action + 1) * kq];
                total += quantile_loss(pred, &targets[i], fractions);
                up.iter_mut().for_each(|u| *u = 0.0);
                let natoms = targets[i].len() as f64;
                for (j, &tau) in fractions.iter().enumerate() {
                    // d/dtheta of mean_z rho_tau(z - theta)
                    let below = targets[i].iter().filter(|&&z| z < pred[j]).count() as f64;
                    up[x.action * kq + j] = (below / natoms - tau) / m;
                }
                model.backward_ws(&ws, &up, &mut grad);
            }
            adam_step(model.params_mut(), &grad, &mut state);
        }
        last = total / tr.len() as f64;
        if !last.is_finite() {
            return Err(Error::NonFinite("quantile loss"));
        }
    }
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximator::FeatureMap;
    use crate::domain::{ActionId, StateVec, Step, Trajectory};
    use crate::envs::{rollout, TabularEnv};
    use crate::oracle::{value_iteration, TabularMdp};

    fn gamma(g: f64) -> Discount {
        Discount::new(g).unwrap()
    }

    use crate::envs::exhaustive_dataset as exhaustive;

    fn tabular_cfg(iterations: usize) -> QTrainConfig {
        QTrainConfig {
            model: ModelConfig::Tabular,
            iterations,
            ..QTrainConfig::default()
        }
    }

    fn max_err(q: &QEstimate, m: &TabularMdp, g: Discount) -> f64 {
        let star = value_iteration(m, g, 1e-14);
        let mut e: f64 = 0.0;
        for s in 0..m.num_states {
            let v = q.values(&m.state(s));
            for a in 0..m.num_actions {
                e = e.max((v[a] - star.get(s, a)).abs());
            }
        }
        e
    }

    #[test]
    fn fqi_matches_value_iteration_on_chain2() {
        let m = TabularMdp::chain2();
        let d = exhaustive(&m);
        let (q, log) = fqi(&d, &tabular_cfg(60), gamma(0.5), 0).unwrap();
        assert!(max_err(&q, &m, gamma(0.5)) <= 1e-6);
        assert_eq!(log.len(), 60);
        let pi = crate::domain::greedy_policy(&q);
        assert_eq!(pi.action(&m.state(0)), ActionId(1));
        assert_eq!(pi.action(&m.state(1)), ActionId(1));
    }

    #[test]
    fn fqi_geometric_envelope() {
        let m = crate::envs::gen_random_tabular(6, 3, 2, 1.0);
        let d = exhaustive(&m);
        // exhaustive logging records the most likely next state, so the
        // data describe the deterministic version of `m`
        let g = gamma(0.7);
        let det = deterministic_version(&m);
        let star = value_iteration(&det, g, 1e-14);
        let q0 = star.q.iter().flatten().fold(0.0_f64, |a, b| a.max(b.abs()));
        for k in 0..25 {
            let (q, _) = fqi(&d, &tabular_cfg(k), g, 0).unwrap();
            assert!(
                max_err(&q, &det, g) <= g.value().powi(k as i32) * q0 + 1e-12,
                "k={k}"
            );
        }
    }

    fn deterministic_version(m: &TabularMdp) -> TabularMdp {
        let transition = m
            .transition
            .iter()
            .map(|rows| {
                rows.iter()
                    .map(|row| {
                        let mut e = vec![0.0; m.num_states];
                        e[argmax(row)] = 1.0;
                        e
                    })
                    .collect()
            })
            .collect();
        TabularMdp::new(transition, m.reward.clone(), m.behavior.clone()).unwrap()
    }

    #[test]
    fn fqi_gamma_zero_regresses_rewards() {
        let m = TabularMdp::chain2();
        let d = exhaustive(&m);
        let (q, _) = fqi(&d, &tabular_cfg(1), gamma(0.0), 0).unwrap();
        for s in 0..2 {
            assert_eq!(q.values(&m.state(s)), m.reward[s]);
        }
    }

    #[test]
    fn fqi_zero_rounds_is_initialization() {
        let d = exhaustive(&TabularMdp::chain2());
        let (q, log) = fqi(&d, &tabular_cfg(0), gamma(0.5), 0).unwrap();
        assert!(log.is_empty());
        assert!(q.model().params().iter().all(|&p| p == 0.0));
    }

    fn ss1_data() -> Dataset {
        let env = TabularEnv::new(TabularMdp::single_state());
        rollout(&env, &env.behavior(), 200, 10, 5).unwrap()
    }

    fn dqn_cfg() -> QTrainConfig {
        QTrainConfig {
            variant: QVariant::Dqn,
            model: ModelConfig::Dense {
                hidden: vec![16, 16],
                epochs: 1,
                batch_size: 32,
                adam: AdamConfig::default(),
            },
            steps: 5000,
            batch_size: 32,
            target_sync: 200,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            ..QTrainConfig::default()
        }
    }

    #[test]
    fn dqn_and_double_dqn_learn_ss1() {
        let d = ss1_data();
        let x = [1.0];
        for double in [false, true] {
            let cfg = dqn_cfg();
            let (q, _) = DqnTrainer::new(&d, &cfg, gamma(0.5), double, 3)
                .unwrap()
                .run(cfg.steps)
                .unwrap();
            let v = q.values(&x);
            assert!((v[1] - 2.0).abs() <= 0.1, "double={double} {v:?}");
            assert!((v[0] - 1.0).abs() <= 0.1, "double={double} {v:?}");
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let d = ss1_data();
        let mut cfg = dqn_cfg();
        cfg.adam.lr = 0.0;
        let mut t = DqnTrainer::new(&d, &cfg, gamma(0.5), false, 1).unwrap();
        let before = t.online.params().to_vec();
        t.step().unwrap();
        assert_eq!(t.online.params(), &before[..]);
    }

    #[test]
    fn sync_every_step_keeps_target_equal() {
        let d = ss1_data();
        let mut cfg = dqn_cfg();
        cfg.target_sync = 1;
        let mut t = DqnTrainer::new(&d, &cfg, gamma(0.5), false, 1).unwrap();
        for _ in 0..10 {
            t.step().unwrap();
            assert_eq!(t.target.params(), t.online.params());
        }
    }

    #[test]
    fn double_target_equals_dqn_target_right_after_sync() {
        let d = ss1_data();
        let cfg = dqn_cfg();
        let mut plain = DqnTrainer::new(&d, &cfg, gamma(0.5), false, 2).unwrap();
        let mut double = DqnTrainer::new(&d, &cfg, gamma(0.5), true, 2).unwrap();
        for _ in 0..cfg.target_sync {
            plain.step().unwrap();
            double.step().unwrap();
        }
        assert_eq!(plain.online, double.online);
        assert_eq!(double.target.params(), double.online.params());
        for x in d.transitions() {
            assert_eq!(plain.td_target(&x), double.td_target(&x));
        }
    }

    #[test]
    fn single_action_double_dqn_equals_dqn() {
        let traj = |id: u64| Trajectory {
            id,
            steps: (0..5)
                .map(|t| Step {
                    state: StateVec(vec![t as f64 / 5.0]),
                    action: ActionId(0),
                    reward: t as f64,
                    propensity: 1.0,
                })
                .collect(),
            terminal_state: StateVec(vec![1.0]),
        };
        let d = Dataset::new((0..4).map(traj).collect(), 1).unwrap();
        let mut cfg = dqn_cfg();
        cfg.steps = 300;
        let a = dqn_offline(&d, &cfg, gamma(0.9), 4).unwrap().0;
        let b = double_dqn_offline(&d, &cfg, gamma(0.9), 4).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn quantile_degenerates_to_fqi_on_chain2() {
        let m = TabularMdp::chain2();
        let d = exhaustive(&m);
        let mut cfg = tabular_cfg(60);
        cfg.variant = QVariant::Quantile;
        cfg.num_quantiles = 4;
        let (q, _) = quantile_fqi(&d, &cfg, gamma(0.5), 0).unwrap();
        let (f, _) = fqi(&d, &tabular_cfg(60), gamma(0.5), 0).unwrap();
        for s in 0..2 {
            let qs = q.quantiles(&m.state(s));
            for a in 0..2 {
                let spread = qs[a].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    - qs[a].iter().cloned().fold(f64::INFINITY, f64::min);
                assert!(spread < 1e-12);
            }
            let (u, v) = (q.values(&m.state(s)), f.values(&m.state(s)));
            for a in 0..2 {
                assert!((u[a] - v[a]).abs() <= 1e-3);
            }
        }
    }

    #[test]
    fn median_matches_mean_under_symmetric_noise() {
        let env = TabularEnv::new(TabularMdp::single_state()).with_reward_noise(0.5);
        let d = rollout(&env, &env.behavior(), 400, 10, 9).unwrap();
        let mut cfg = tabular_cfg(40);
        cfg.variant = QVariant::Quantile;
        cfg.num_quantiles = 1;
        let (q, _) = quantile_fqi(&d, &cfg, gamma(0.5), 0).unwrap();
        let (f, _) = fqi(&d, &tabular_cfg(40), gamma(0.5), 0).unwrap();
        // sampling error of a median of n = 2000 N(0, 0.25) draws is about
        // 1.25 * 0.5 / sqrt(2000) = 0.014; the fixed point amplifies by 1/(1-gamma)
        let (u, v) = (q.values(&[1.0]), f.values(&[1.0]));
        for a in 0..2 {
            assert!(
                (u[a] - v[a]).abs() <= 3.0 * 2.0 * 0.014 * 2.0,
                "{u:?} {v:?}"
            );
        }
    }

    #[test]
    fn pinball_minimized_at_sample_quantile() {
        let mut r = rng::stream(3, &[]);
        let mut xs: Vec<f64> = (0..101).map(|_| r.gen::<f64>()).collect();
        for tau in [0.1, 0.5, 0.9] {
            let q = empirical_quantile(&mut xs, tau);
            let loss = |c: f64| xs.iter().map(|&x| pinball_loss(tau, x - c)).sum::<f64>();
            assert!(loss(q + 1e-3) > loss(q));
            assert!(loss(q - 1e-3) > loss(q));
        }
    }

    #[test]
    fn fractions_are_midpoints() {
        assert_eq!(quantile_fractions(1), vec![0.5]);
        assert_eq!(quantile_fractions(4), vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn linear_fqi_and_quantile_run() {
        let d = ss1_data();
        let mut cfg = QTrainConfig {
            model: ModelConfig::linear_exact(FeatureMap::Identity),
            iterations: 40,
            ..QTrainConfig::default()
        };
        let (q, _) = fqi(&d, &cfg, gamma(0.5), 0).unwrap();
        let v = q.values(&[1.0]);
        assert!(
            (v[1] - 2.0).abs() < 0.1 && (v[0] - 1.0).abs() < 0.1,
            "{v:?}"
        );
        cfg.variant = QVariant::Quantile;
        cfg.iterations = 3;
        cfg.num_quantiles = 2;
        assert!(quantile_fqi(&d, &cfg, gamma(0.5), 0).is_ok());
    }

    #[test]
    fn trainers_are_reproducible() {
        let d = ss1_data();
        let mut cfg = dqn_cfg();
        cfg.steps = 200;
        let a = train_q(&d, &cfg, gamma(0.5), 7).unwrap();
        let b = train_q(&d, &cfg, gamma(0.5), 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trained_on.len(), 200);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let d = Dataset {
            trajectories: vec![],
            num_actions: 2,
            state_dim: 1,
        };
        assert!(matches!(
            fqi(&d, &tabular_cfg(1), gamma(0.5), 0),
            Err(Error::EmptyData(_))
        ));
    }
}
