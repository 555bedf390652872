use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::net::{DenseNet, Workspace};
use crate::domain::{argmax, QFunction, StateVec};
use crate::error::{Error, Result};
use crate::rng;

/// Basis expansion for the linear backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    /// `x` as is, no intercept.
    Identity,
    /// `(1, x)`.
    Affine,
    /// `(1, x_j^k)` for every coordinate `j` and `1 <= k <= degree`.
    Polynomial { degree: usize },
}

impl FeatureMap {
    pub fn dim(&self, input_dim: usize) -> usize {
        match *self {
            FeatureMap::Identity => input_dim,
            FeatureMap::Affine => input_dim + 1,
            FeatureMap::Polynomial { degree } => 1 + input_dim * degree,
        }
    }

    pub fn apply_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match *self {
            FeatureMap::Identity => out.extend_from_slice(x),
            FeatureMap::Affine => {
                out.push(1.0);
                out.extend_from_slice(x);
            }
            FeatureMap::Polynomial { degree } => {
                out.push(1.0);
                for &xi in x {
                    let mut p = 1.0;
                    for _ in 0..degree {
                        p *= xi;
                        out.push(p);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinearSolver {
    /// Closed-form least squares with a small ridge.
    NormalEquations { ridge: f64 },
    /// Full-batch gradient descent on the mean squared error.
    GradientDescent { epochs: usize, lr: f64 },
}

/// Backend choice plus its training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum ModelConfig {
    /// One cell per coordinate of a one-hot state.
    Tabular,
    Linear {
        features: FeatureMap,
        solver: LinearSolver,
    },
    Dense {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default = "default_epochs")]
        epochs: usize,
        #[serde(default = "default_batch")]
        batch_size: usize,
        #[serde(default)]
        adam: AdamConfig,
    },
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_epochs() -> usize {
    50
}
fn default_batch() -> usize {
    64
}

impl ModelConfig {
    pub fn dense_default() -> Self {
        ModelConfig::Dense {
            hidden: default_hidden(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            adam: AdamConfig::default(),
        }
    }

    pub fn linear_exact(features: FeatureMap) -> Self {
        ModelConfig::Linear {
            features,
            solver: LinearSolver::NormalEquations { ridge: 1e-10 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum Backend {
    /// `table[cell * outputs + o]`.
    Tabular {
        cells: usize,
        table: Vec<f64>,
    },
    /// `weights[o * features + k]`.
    Linear {
        features: FeatureMap,
        weights: Vec<f64>,
    },
    Dense {
        net: DenseNet,
    },
}

/// Multi-output function approximator: one output per action (or per
/// action-quantile pair), or a single output for plain regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QModel {
    pub input_dim: usize,
    pub num_outputs: usize,
    pub backend: Backend,
    pub config: ModelConfig,
}

/// Scratch space for one forward/backward pass.
#[derive(Debug, Clone, Default)]
pub struct ModelWorkspace {
    net: Workspace,
    feats: Vec<f64>,
    cell: usize,
    out: Vec<f64>,
}

impl ModelWorkspace {
    pub fn output(&self) -> &[f64] {
        &self.out
    }
}

/// One regression example: `output` of the model at `input` should be `target`.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub input: &'a [f64],
    pub output: usize,
    pub target: f64,
}

impl QModel {
    pub fn new(config: &ModelConfig, input_dim: usize, num_outputs: usize, seed: u64) -> Self {
        let backend = match config {
            ModelConfig::Tabular => Backend::Tabular {
                cells: input_dim,
                table: vec![0.0; input_dim * num_outputs],
            },
            ModelConfig::Linear { features, .. } => Backend::Linear {
                features: *features,
                weights: vec![0.0; features.dim(input_dim) * num_outputs],
            },
            ModelConfig::Dense { hidden, .. } => {
                let mut widths = vec![input_dim];
                widths.extend_from_slice(hidden);
                widths.push(num_outputs);
                Backend::Dense {
                    net: DenseNet::new(&widths, &mut rng::stream(seed, &[0x1417])),
                }
            }
        };
        QModel {
            input_dim,
            num_outputs,
            backend,
            config: config.clone(),
        }
    }

    pub fn params(&self) -> &[f64] {
        match &self.backend {
            Backend::Tabular { table, .. } => table,
            Backend::Linear { weights, .. } => weights,
            Backend::Dense { net } => &net.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match &mut self.backend {
            Backend::Tabular { table, .. } => table,
            Backend::Linear { weights, .. } => weights,
            Backend::Dense { net } => &mut net.params,
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().len()
    }

    pub fn forward_ws(&self, x: &[f64], ws: &mut ModelWorkspace) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let k = self.num_outputs;
        ws.out.clear();
        match &self.backend {
            Backend::Tabular { table, .. } => {
                ws.cell = argmax(x);
                ws.out
                    .extend_from_slice(&table[ws.cell * k..(ws.cell + 1) * k]);
            }
            Backend::Linear { features, weights } => {
                features.apply_into(x, &mut ws.feats);
                let p = ws.feats.len();
                for o in 0..k {
                    let w = &weights[o * p..(o + 1) * p];
                    ws.out
                        .push(w.iter().zip(&ws.feats).map(|(a, b)| a * b).sum());
                }
            }
            Backend::Dense { net } => {
                net.forward_ws(x, &mut ws.net)?;
                ws.out.extend_from_slice(ws.net.output());
            }
        }
        Ok(())
    }

    /// Adds `d(upstream . output)/d(params)` at the cached sample into `grad`.
    pub fn backward_ws(&self, ws: &ModelWorkspace, upstream: &[f64], grad: &mut [f64]) {
        let k = self.num_outputs;
        match &self.backend {
            Backend::Tabular { .. } => {
                for (o, u) in upstream.iter().enumerate() {
                    grad[ws.cell * k + o] += u;
                }
            }
            Backend::Linear { .. } => {
                let p = ws.feats.len();
                for (o, &u) in upstream.iter().enumerate() {
                    if u == 0.0 {
                        continue;
                    }
                    for (g, f) in grad[o * p..(o + 1) * p].iter_mut().zip(&ws.feats) {
                        *g += u * f;
                    }
                }
            }
            Backend::Dense { net } => net.backward_ws(&ws.net, upstream, grad),
        }
    }

    pub fn predict_all(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut ws = ModelWorkspace::default();
        self.forward_ws(x, &mut ws)?;
        Ok(ws.out)
    }

    /// Parameter gradient of `upstream . model(x)`.
    pub fn param_gradient(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.num_outputs {
            return Err(Error::Shape {
                expected: self.num_outputs,
                got: upstream.len(),
            });
        }
        let mut ws = ModelWorkspace::default();
        self.forward_ws(x, &mut ws)?;
        let mut grad = vec![0.0; self.num_params()];
        self.backward_ws(&ws, upstream, &mut grad);
        Ok(grad)
    }

    /// Mean squared error of the model on `samples`.
    pub fn mse(&self, samples: &[Sample<'_>]) -> Result<f64> {
        let mut ws = ModelWorkspace::default();
        let mut total = 0.0;
        for s in samples {
            self.forward_ws(s.input, &mut ws)?;
            let e = ws.out[s.output] - s.target;
            total += e * e;
        }
        Ok(total / samples.len().max(1) as f64)
    }

    /// Least-squares fit onto `samples` using the configured backend.
    ///
    /// Tabular cells and linear outputs without any sample keep their current
    /// values; the dense backend warm-starts from its current parameters.
    /// Returns the per-epoch training loss (a single entry for closed forms).
    pub fn fit(&mut self, samples: &[Sample<'_>], seed: u64) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Err(Error::EmptyData("regression samples"));
        }
        for s in samples {
            if s.input.len() != self.input_dim {
                return Err(Error::Shape {
                    expected: self.input_dim,
                    got: s.input.len(),
                });
            }
            if s.output >= self.num_outputs {
                return Err(Error::Shape {
                    expected: self.num_outputs,
                    got: s.output,
                });
            }
        }
        let history = match self.config.clone() {
            ModelConfig::Tabular => {
                self.fit_tabular(samples);
                vec![self.mse(samples)?]
            }
            ModelConfig::Linear {
                solver: LinearSolver::NormalEquations { ridge },
                ..
            } => {
                self.fit_normal_equations(samples, ridge)?;
                vec![self.mse(samples)?]
            }
            ModelConfig::Linear {
                solver: LinearSolver::GradientDescent { epochs, lr },
                ..
            } => self.fit_full_batch_gd(samples, epochs, lr)?,
            ModelConfig::Dense {
                epochs,
                batch_size,
                adam,
                ..
            } => self.fit_adam(samples, epochs, batch_size, adam, seed)?,
        };
        if self.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(history)
    }

    fn fit_tabular(&mut self, samples: &[Sample<'_>]) {
        let k = self.num_outputs;
        let n = self.num_params();
        let mut sum = vec![0.0; n];
        let mut count = vec![0usize; n];
        for s in samples {
            let idx = argmax(s.input) * k + s.output;
            sum[idx] += s.target;
            count[idx] += 1;
        }
        for (i, p) in self.params_mut().iter_mut().enumerate() {
            if count[i] > 0 {
                *p = sum[i] / count[i] as f64;
            }
        }
    }

    fn fit_normal_equations(&mut self, samples: &[Sample<'_>], ridge: f64) -> Result<()> {
        let Backend::Linear { features, weights } = &mut self.backend else {
            unreachable!("linear config implies linear backend");
        };
        let p = features.dim(self.input_dim);
        let mut phi = Vec::new();
        for o in 0..self.num_outputs {
            let mut gram = DMatrix::<f64>::zeros(p, p);
            let mut rhs = DVector::<f64>::zeros(p);
            let mut seen = false;
            for s in samples.iter().filter(|s| s.output == o) {
                seen = true;
                features.apply_into(s.input, &mut phi);
                for i in 0..p {
                    rhs[i] += phi[i] * s.target;
                    for j in 0..p {
                        gram[(i, j)] += phi[i] * phi[j];
                    }
                }
            }
            if !seen {
                continue;
            }
            for i in 0..p {
                gram[(i, i)] += ridge;
            }
            let sol = gram
                .clone()
                .cholesky()
                .map(|c| c.solve(&rhs))
                .or_else(|| gram.lu().solve(&rhs))
                .ok_or(Error::NonFinite("normal equations"))?;
            weights[o * p..(o + 1) * p].copy_from_slice(sol.as_slice());
        }
        Ok(())
    }

    fn fit_full_batch_gd(
        &mut self,
        samples: &[Sample<'_>],
        epochs: usize,
        lr: f64,
    ) -> Result<Vec<f64>> {
        let mut history = Vec::with_capacity(epochs + 1);
        let mut ws = ModelWorkspace::default();
        let n = samples.len() as f64;
        for _ in 0..epochs {
            let mut grad = vec![0.0; self.num_params()];
            let mut loss = 0.0;
            for s in samples {
                self.forward_ws(s.input, &mut ws)?;
                let e = ws.out[s.output] - s.target;
                loss += e * e;
                let mut up = vec![0.0; self.num_outputs];
                up[s.output] = 2.0 * e / n;
                self.backward_ws(&ws, &up, &mut grad);
            }
            history.push(loss / n);
            for (p, g) in self.params_mut().iter_mut().zip(&grad) {
                *p -= lr * g;
            }
        }
        history.push(self.mse(samples)?);
        Ok(history)
    }

    fn fit_adam(
        &mut self,
        samples: &[Sample<'_>],
        epochs: usize,
        batch_size: usize,
        adam: AdamConfig,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let mut rng = rng::stream(seed, &[0xF17]);
        let mut state = AdamState::new(self.num_params(), adam);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut ws = ModelWorkspace::default();
        let mut grad = vec![0.0; self.num_params()];
        let mut up = vec![0.0; self.num_outputs];
        let mut history = Vec::with_capacity(epochs);
        let batch_size = batch_size.max(1);
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let m = chunk.len() as f64;
                for &i in chunk {
                    let s = &samples[i];
                    self.forward_ws(s.input, &mut ws)?;
                    let e = ws.out[s.output] - s.target;
                    epoch_loss += e * e;
                    up.iter_mut().for_each(|u| *u = 0.0);
                    up[s.output] = 2.0 * e / m;
                    self.backward_ws(&ws, &up, &mut grad);
                }
                adam_step(self.params_mut(), &grad, &mut state);
            }
            let l = epoch_loss / samples.len() as f64;
            if !l.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            history.push(l);
        }
        Ok(history)
    }
}

impl QFunction for QModel {
    fn num_actions(&self) -> usize {
        self.num_outputs
    }

    fn values(&self, state: &[f64]) -> Vec<f64> {
        self.predict_all(state)
            .expect("state dimension matches model input")
    }
}

/// A fitted single-output regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    pub model: QModel,
    pub loss_history: Vec<f64>,
}

impl Regressor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.model.values(x)[0]
    }
}

/// Fits `state -> target` by least squares with the configured backend.
pub fn fit_regression(
    inputs: &[StateVec],
    targets: &[f64],
    config: &ModelConfig,
    seed: u64,
) -> Result<Regressor> {
    if inputs.is_empty() {
        return Err(Error::EmptyData("regression inputs"));
    }
    if inputs.len() != targets.len() {
        return Err(Error::Shape {
            expected: inputs.len(),
            got: targets.len(),
        });
    }
    let dim = inputs[0].dim();
    let mut model = QModel::new(config, dim, 1, seed);
    let samples: Vec<Sample<'_>> = inputs
        .iter()
        .zip(targets)
        .map(|(x, &y)| Sample {
            input: x,
            output: 0,
            target: y,
        })
        .collect();
    let loss_history = model.fit(&samples, seed)?;
    Ok(Regressor {
        model,
        loss_history,
    })
}

/// Random draw helper used by tests across modules.
#[doc(hidden)]
pub fn random_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}
