//! Density-ratio estimation for the discounted visitation law.
//!
//! The ratio factorizes as `omega(a', s' | a, s) = pi(a'|s') / b(a'|s') * w(s' | a, s)`
//! with `w(s'|a,s) = p_gamma(s' | a, s) / mu(s')`, where `mu` is the stationary
//! state law of the logged process. `w` is fitted by minimizing a kernel
//! discrepancy built from the residual identity
//!
//! ```text
//! gamma E[w(S_k | A_j, S_j) rho_k f(S_k+, A_j, S_j)] - E[w(S_k+ | A_j, S_j) f(S_k+, A_j, S_j)]
//!     = -(1 - gamma) E[f(S_j+, A_j, S_j)]
//! ```
//!
//! for independent transitions `j`, `k` and every test function `f`, with
//! `rho_k = pi(A_k|S_k) / b(A_k|S_k)`. Taking `f` in the unit ball of a
//! Gaussian RKHS turns the worst case over `f` into a squared RKHS norm.
//!
//! Because the Gaussian kernel on `(s', onehot a, s)` factorizes into a
//! next-state factor `G` and an anchor factor `H`, the pair-of-pairs sum is
//! evaluated as `sum A o (H A G) + 2 sum A o (H diag(c) G) + c' (H o G) c` with
//! `A_jk = W_jk Delta_jk` and `c_j = (1 - gamma) sum_k W_jk`, which costs
//! `O(M^3)` instead of `O(M^4)` for a batch of `M` transitions.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approximator::{adam_step, AdamConfig, AdamState, ModelConfig, ModelWorkspace, QModel};
use crate::domain::{Dataset, Discount, Policy, StateVec, Transition};
use crate::error::{Error, Result};
use crate::oracle::{stationary_distribution, TabularMdp};
use crate::rng;

/// `s' -> w(s' | a, s)` with the anchor fixed.
pub type ConditionalRatio<'a> = Box<dyn Fn(&[f64]) -> f64 + 'a>;

/// `w(s' | a, s)`.
pub trait StateRatio: Send + Sync {
    fn w(&self, next: &[f64], action: usize, state: &[f64]) -> f64;

    /// `s' -> w(s' | a, s)` for a fixed anchor; implementations may cache
    /// per-anchor work here.
    fn conditional<'a>(&'a self, action: usize, state: &'a [f64]) -> ConditionalRatio<'a> {
        Box::new(move |next| self.w(next, action, state))
    }
}

impl<R: StateRatio + ?Sized> StateRatio for &R {
    fn w(&self, next: &[f64], action: usize, state: &[f64]) -> f64 {
        (**self).w(next, action, state)
    }
    fn conditional<'a>(&'a self, action: usize, state: &'a [f64]) -> ConditionalRatio<'a> {
        (**self).conditional(action, state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantRatio(pub f64);

impl StateRatio for ConstantRatio {
    fn w(&self, _: &[f64], _: usize, _: &[f64]) -> f64 {
        self.0
    }
}

/// Table `w[s'][a][s]` over one-hot states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularRatio {
    pub w: Vec<Vec<Vec<f64>>>,
}

impl StateRatio for TabularRatio {
    fn w(&self, next: &[f64], action: usize, state: &[f64]) -> f64 {
        use crate::domain::argmax;
        self.w[argmax(next)][action][argmax(state)]
    }
}

/// Gaussian kernel `exp(-|x - y|^2 / (2 h^2))` on `(s', onehot a, s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kernel bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(KernelSpec { bandwidth })
    }

    fn of_sq(&self, d2: f64) -> f64 {
        (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }

    /// Median pairwise distance of the concatenated triples in `batch`
    /// (falls back to 1 when every triple coincides).
    pub fn median_heuristic(batch: &[Transition<'_>]) -> Self {
        let mut d = Vec::new();
        for (i, x) in batch.iter().enumerate() {
            for y in &batch[i + 1..] {
                d.push(
                    (sq_dist(x.next_state, y.next_state)
                        + action_sq_dist(x.action, y.action)
                        + sq_dist(x.state, y.state))
                    .sqrt(),
                );
            }
        }
        if d.is_empty() {
            return KernelSpec { bandwidth: 1.0 };
        }
        d.sort_by(f64::total_cmp);
        let med = d[d.len() / 2];
        KernelSpec {
            bandwidth: if med > 0.0 { med } else { 1.0 },
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn action_sq_dist(a: usize, b: usize) -> f64 {
    if a == b {
        0.0
    } else {
        2.0
    }
}

fn propensity_ratio(pi: &dyn Policy, x: &Transition<'_>) -> Result<f64> {
    if !(x.propensity > 0.0) {
        return Err(Error::ZeroPropensity(x.propensity));
    }
    Ok(pi.prob(x.action, x.state) / x.propensity)
}

/// `gamma w(S_k | A_j, S_j) rho_k - w(S_k+ | A_j, S_j)`.
pub fn delta_residual(
    w: &dyn StateRatio,
    j: &Transition<'_>,
    k: &Transition<'_>,
    pi: &dyn Policy,
    gamma: Discount,
) -> Result<f64> {
    let rho = propensity_ratio(pi, k)?;
    Ok(
        gamma.value() * w.w(k.state, j.action, j.state) * rho
            - w.w(k.next_state, j.action, j.state),
    )
}

/// `pi(a'|s') / b(a'|s') * w(s' | a, s)`.
pub fn ratio_predict(
    w: &dyn StateRatio,
    next_action: usize,
    next: &[f64],
    action: usize,
    state: &[f64],
    pi: &dyn Policy,
    propensity: f64,
) -> Result<f64> {
    if !(propensity > 0.0) {
        return Err(Error::ZeroPropensity(propensity));
    }
    let p = pi.prob(next_action, next);
    if p == 0.0 {
        return Ok(0.0);
    }
    Ok(p / propensity * w.w(next, action, state))
}

/// Pair weighting for the discrepancy.
enum PairWeights<'a> {
    /// Ordered pairs `j != k`, each with weight `1 / (M (M - 1))`.
    UStatistic,
    /// Independent draws from a law on the items: weight `p_j p_k` on all pairs.
    Population(&'a [f64]),
}

struct Gram {
    h: DMatrix<f64>,
    g: DMatrix<f64>,
}

fn gram(items: &[Transition<'_>], kernel: &KernelSpec) -> Gram {
    let m = items.len();
    let h = DMatrix::from_fn(m, m, |i, j| {
        kernel.of_sq(
            sq_dist(items[i].state, items[j].state)
                + action_sq_dist(items[i].action, items[j].action),
        )
    });
    let g = DMatrix::from_fn(m, m, |i, j| {
        kernel.of_sq(sq_dist(items[i].next_state, items[j].next_state))
    });
    Gram { h, g }
}

fn weights_and_c(m: usize, weights: &PairWeights<'_>, gamma: f64) -> (DMatrix<f64>, DVector<f64>) {
    let w = match weights {
        PairWeights::UStatistic => {
            let p = 1.0 / (m * (m - 1)) as f64;
            DMatrix::from_fn(m, m, |j, k| if j == k { 0.0 } else { p })
        }
        PairWeights::Population(p) => DMatrix::from_fn(m, m, |j, k| p[j] * p[k]),
    };
    let c = DVector::from_fn(m, |j, _| (1.0 - gamma) * w.row(j).sum());
    (w, c)
}

/// Loss and `dL/dA` for `A = W o Delta`.
fn quadratic(a: &DMatrix<f64>, c: &DVector<f64>, gr: &Gram) -> (f64, DMatrix<f64>) {
    let hag = &gr.h * a * &gr.g;
    let hcg = &gr.h * DMatrix::from_diagonal(c) * &gr.g;
    let cross = gr.h.component_mul(&gr.g);
    let loss = a.dot(&hag) + 2.0 * a.dot(&hcg) + (c.transpose() * cross * c)[(0, 0)];
    (loss, 2.0 * (hag + hcg))
}

fn weighted_mmd(
    w: &dyn StateRatio,
    items: &[Transition<'_>],
    weights: PairWeights<'_>,
    kernel: &KernelSpec,
    pi: &dyn Policy,
    gamma: Discount,
) -> Result<f64> {
    let m = items.len();
    if m < 2 {
        return Err(Error::BatchTooSmall { needed: 2, got: m });
    }
    let g = gamma.value();
    let rho: Vec<f64> = items
        .iter()
        .map(|x| propensity_ratio(pi, x))
        .collect::<Result<_>>()?;
    let (wt, c) = weights_and_c(m, &weights, g);
    let mut a = DMatrix::zeros(m, m);
    for (j, xj) in items.iter().enumerate() {
        let wj = w.conditional(xj.action, xj.state);
        for (k, xk) in items.iter().enumerate() {
            if wt[(j, k)] != 0.0 {
                a[(j, k)] = wt[(j, k)] * (g * wj(xk.state) * rho[k] - wj(xk.next_state));
            }
        }
    }
    Ok(quadratic(&a, &c, &gram(items, kernel)).0)
}

/// U-statistic discrepancy over ordered pairs of distinct transitions in `batch`.
pub fn mmd_loss(
    w: &dyn StateRatio,
    batch: &[Transition<'_>],
    kernel: &KernelSpec,
    pi: &dyn Policy,
    gamma: Discount,
) -> Result<f64> {
    weighted_mmd(w, batch, PairWeights::UStatistic, kernel, pi, gamma)
}

/// Every transition type `(s, a, s')` of a tabular MDP with its stationary
/// probability `mu(s) b(a|s) P(s'|s,a)`.
pub struct TransitionLaw {
    pub states: Vec<StateVec>,
    /// `(s, a, s', b(a|s), probability)`.
    pub items: Vec<(usize, usize, usize, f64, f64)>,
}

impl TransitionLaw {
    pub fn of(m: &TabularMdp) -> Result<Self> {
        let mu = stationary_distribution(m)?.state;
        let mut items = Vec::new();
        for s in 0..m.num_states {
            for a in 0..m.num_actions {
                for s2 in 0..m.num_states {
                    let p = mu[s] * m.behavior[s][a] * m.transition[s][a][s2];
                    if p > 0.0 {
                        items.push((s, a, s2, m.behavior[s][a], p));
                    }
                }
            }
        }
        Ok(TransitionLaw {
            states: (0..m.num_states).map(|s| m.state(s)).collect(),
            items,
        })
    }

    pub fn transitions(&self) -> Vec<Transition<'_>> {
        self.items
            .iter()
            .enumerate()
            .map(|(n, &(s, a, s2, b, _))| Transition {
                traj: n,
                id: n as u64,
                t: 0,
                state: &self.states[s],
                action: a,
                reward: 0.0,
                propensity: b,
                next_state: &self.states[s2],
            })
            .collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.items.iter().map(|x| x.4).collect()
    }
}

/// Exact expectation of the discrepancy over independent pairs drawn from the
/// stationary transition law of `m`.
pub fn population_mmd_loss(
    w: &dyn StateRatio,
    m: &TabularMdp,
    kernel: &KernelSpec,
    pi: &dyn Policy,
    gamma: Discount,
) -> Result<f64> {
    let law = TransitionLaw::of(m)?;
    let p = law.probabilities();
    weighted_mmd(
        w,
        &law.transitions(),
        PairWeights::Population(&p),
        kernel,
        pi,
        gamma,
    )
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Network ratio: `w(s'|a,s) = softplus(f(s', onehot a, s)) / z(a, s)` where
/// `z(a, s)` is the mean of the numerator over the stored reference states.
/// With no reference states `z = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioModel {
    pub net: QModel,
    pub state_dim: usize,
    pub num_actions: usize,
    pub reference: Vec<StateVec>,
    pub kernel: KernelSpec,
}

impl RatioModel {
    pub fn new(
        config: &ModelConfig,
        state_dim: usize,
        num_actions: usize,
        kernel: KernelSpec,
        seed: u64,
    ) -> Self {
        RatioModel {
            net: QModel::new(config, 2 * state_dim + num_actions, 1, seed),
            state_dim,
            num_actions,
            reference: Vec::new(),
            kernel,
        }
    }

    fn fill_input(&self, buf: &mut Vec<f64>, next: &[f64], action: usize, state: &[f64]) {
        buf.clear();
        buf.extend_from_slice(next);
        buf.extend((0..self.num_actions).map(|b| if b == action { 1.0 } else { 0.0 }));
        buf.extend_from_slice(state);
    }

    /// Pre-activation `f` at `(s', a, s)`, using caller-provided scratch.
    fn logit(
        &self,
        buf: &mut Vec<f64>,
        ws: &mut ModelWorkspace,
        next: &[f64],
        action: usize,
        state: &[f64],
    ) -> f64 {
        self.fill_input(buf, next, action, state);
        self.net
            .forward_ws(buf, ws)
            .expect("ratio input width is fixed by construction");
        ws.output()[0]
    }

    /// Unnormalized `softplus(f)`.
    pub fn raw(&self, next: &[f64], action: usize, state: &[f64]) -> f64 {
        let mut buf = Vec::new();
        let mut ws = ModelWorkspace::default();
        softplus(self.logit(&mut buf, &mut ws, next, action, state))
    }

    fn normalizer_with(
        &self,
        refs: &[&[f64]],
        buf: &mut Vec<f64>,
        ws: &mut ModelWorkspace,
        action: usize,
        state: &[f64],
    ) -> f64 {
        if refs.is_empty() {
            return 1.0;
        }
        refs.iter()
            .map(|r| softplus(self.logit(buf, ws, r, action, state)))
            .sum::<f64>()
            / refs.len() as f64
    }

    pub fn normalizer(&self, action: usize, state: &[f64]) -> f64 {
        let refs: Vec<&[f64]> = self.reference.iter().map(|r| &r.0[..]).collect();
        self.normalizer_with(
            &refs,
            &mut Vec::new(),
            &mut ModelWorkspace::default(),
            action,
            state,
        )
    }
}

impl StateRatio for RatioModel {
    fn w(&self, next: &[f64], action: usize, state: &[f64]) -> f64 {
        self.raw(next, action, state) / self.normalizer(action, state)
    }

    fn conditional<'a>(&'a self, action: usize, state: &'a [f64]) -> ConditionalRatio<'a> {
        let z = self.normalizer(action, state);
        Box::new(move |next| self.raw(next, action, state) / z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RatioConfig {
    pub model: ModelConfig,
    pub steps: usize,
    /// `|M|`: transitions per discrepancy batch.
    pub batch_size: usize,
    /// `|M*|`: states per normalization batch, and the number stored with
    /// the final model.
    pub reference_size: usize,
    pub adam: AdamConfig,
    /// Fixed kernel bandwidth; median heuristic when absent.
    pub bandwidth: Option<f64>,
    /// Weight of `mean_j (ln z_j)^2`, which pins the otherwise free scale of
    /// the unnormalized network without changing the normalized ratio.
    pub scale_penalty: f64,
}

impl Default for RatioConfig {
    fn default() -> Self {
        RatioConfig {
            model: ModelConfig::Dense {
                hidden: vec![32, 32],
                epochs: 1,
                batch_size: 64,
                adam: AdamConfig::default(),
            },
            steps: 500,
            batch_size: 64,
            reference_size: 64,
            adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            bandwidth: None,
            scale_penalty: 0.1,
        }
    }
}

/// Output of [`train_ratio`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedRatio {
    pub model: RatioModel,
    pub losses: Vec<f64>,
}

/// Minibatch descent on the U-statistic discrepancy of `w_beta / z`, with
/// `z(a, s)` recomputed every step from a fresh reference batch and treated
/// as a constant when differentiating.
pub fn train_ratio(
    d: &Dataset,
    pi: &dyn Policy,
    cfg: &RatioConfig,
    gamma: Discount,
    seed: u64,
) -> Result<TrainedRatio> {
    let tr = d.transitions();
    if tr.len() < 2 {
        return Err(Error::BatchTooSmall {
            needed: 2,
            got: tr.len(),
        });
    }
    if cfg.batch_size < 2 || cfg.reference_size == 0 {
        return Err(Error::config(
            "ratio.batch_size",
            "need batch_size >= 2 and reference_size >= 1",
        ));
    }
    let g = gamma.value();
    let mut r = rng::stream(seed, &[0x2A710]);
    let m = cfg.batch_size.min(tr.len());

    let kernel = match cfg.bandwidth {
        Some(h) => KernelSpec::new(h)?,
        None => {
            let pilot: Vec<Transition<'_>> = sample_indices(&mut r, tr.len(), m)
                .into_iter()
                .map(|i| tr[i])
                .collect();
            KernelSpec::median_heuristic(&pilot)
        }
    };
    let mut model = RatioModel::new(&cfg.model, d.state_dim, d.num_actions, kernel, seed);
    let mut adam = AdamState::new(model.net.num_params(), cfg.adam);
    let rho_all: Vec<f64> = tr
        .iter()
        .map(|x| propensity_ratio(pi, x))
        .collect::<Result<_>>()?;
    let (wt, c) = weights_and_c(m, &PairWeights::UStatistic, g);
    let mut buf = Vec::new();
    let mut ws = ModelWorkspace::default();
    let mut losses = Vec::with_capacity(cfg.steps);

    for _ in 0..cfg.steps {
        let batch: Vec<usize> = sample_indices(&mut r, tr.len(), m).into_vec();
        let refs: Vec<&[f64]> = (0..cfg.reference_size)
            .map(|_| tr[r.gen_range(0..tr.len())].state)
            .collect();
        let items: Vec<Transition<'_>> = batch.iter().map(|&i| tr[i]).collect();
        let gr = gram(&items, &kernel);

        // forward: w at current and next states of every k, anchored at j
        let mut z = vec![0.0; m];
        let mut fu = DMatrix::zeros(m, m);
        let mut fv = DMatrix::zeros(m, m);
        let mut a = DMatrix::zeros(m, m);
        for (j, xj) in items.iter().enumerate() {
            z[j] = model.normalizer_with(&refs, &mut buf, &mut ws, xj.action, xj.state);
            for (k, xk) in items.iter().enumerate() {
                if j == k {
                    continue;
                }
                fu[(j, k)] = model.logit(&mut buf, &mut ws, xk.state, xj.action, xj.state);
                fv[(j, k)] = model.logit(&mut buf, &mut ws, xk.next_state, xj.action, xj.state);
                let u = softplus(fu[(j, k)]) / z[j];
                let v = softplus(fv[(j, k)]) / z[j];
                a[(j, k)] = wt[(j, k)] * (g * u * rho_all[batch[k]] - v);
            }
        }
        let (loss, grad_a) = quadratic(&a, &c, &gr);
        if !loss.is_finite() {
            return Err(Error::NonFinite("ratio discrepancy"));
        }
        losses.push(loss);

        // backward through softplus / z into the network
        let mut grad = vec![0.0; model.net.num_params()];
        for (j, xj) in items.iter().enumerate() {
            for (k, xk) in items.iter().enumerate() {
                if j == k {
                    continue;
                }
                let ga = grad_a[(j, k)] * wt[(j, k)] / z[j];
                let gu = ga * g * rho_all[batch[k]] * sigmoid(fu[(j, k)]);
                let gv = -ga * sigmoid(fv[(j, k)]);
                for (point, up) in [(xk.state, gu), (xk.next_state, gv)] {
                    if up == 0.0 {
                        continue;
                    }
                    model.logit(&mut buf, &mut ws, point, xj.action, xj.state);
                    model.net.backward_ws(&ws, &[up], &mut grad);
                }
            }
        }
        // gauge term: the normalized loss ignores the scale of w_beta, so
        // without this the logits drift until softplus underflows
        if cfg.scale_penalty > 0.0 {
            for (j, xj) in items.iter().enumerate() {
                let outer = cfg.scale_penalty * 2.0 * z[j].ln() / z[j] / (m * refs.len()) as f64;
                for r in &refs {
                    let f = model.logit(&mut buf, &mut ws, r, xj.action, xj.state);
                    model.net.backward_ws(&ws, &[outer * sigmoid(f)], &mut grad);
                }
            }
        }
        adam_step(model.net.params_mut(), &grad, &mut adam);
    }

    model.reference = (0..cfg.reference_size)
        .map(|_| StateVec(tr[r.gen_range(0..tr.len())].state.to_vec()))
        .collect();
    if model.net.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("ratio network parameters"));
    }
    Ok(TrainedRatio { model, losses })
}
