use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected network: rectifier on hidden layers, identity on the output.
///
/// All parameters live in one flat vector, layer by layer, each layer stored
/// as a row-major `out x in` weight block followed by `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub widths: Vec<usize>,
    pub params: Vec<f64>,
}

/// Per-sample activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
}

impl Workspace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], Vec::as_slice)
    }
}

fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl DenseNet {
    pub fn zeros(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "need input and output widths");
        DenseNet {
            widths: widths.to_vec(),
            params: vec![0.0; param_count(widths)],
        }
    }

    /// Uniform init in `+-1/sqrt(fan_in)` for weights and biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        let mut net = DenseNet::zeros(widths);
        let mut off = 0;
        for w in widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for p in &mut net.params[off..off + w[0] * w[1] + w[1]] {
                *p = rng.gen_range(-bound..bound);
            }
            off += w[0] * w[1] + w[1];
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut ws = Workspace::default();
        self.forward_ws(x, &mut ws)?;
        Ok(ws.output().to_vec())
    }

    pub fn forward_ws(&self, x: &[f64], ws: &mut Workspace) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let layers = self.widths.len() - 1;
        ws.acts.resize(layers + 1, Vec::new());
        ws.acts[0].clear();
        ws.acts[0].extend_from_slice(x);
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let weights = &self.params[off..off + n_in * n_out];
            let bias = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let (prev, rest) = ws.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut rest[0];
            out.clear();
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut z = bias[o];
                for (w, a) in row.iter().zip(input.iter()) {
                    z += w * a;
                }
                out.push(if l + 1 < layers { z.max(0.0) } else { z });
            }
            off += n_in * n_out + n_out;
        }
        Ok(())
    }

    /// Adds `d(upstream . output)/d(params)` for the sample cached in `ws` into `grad`.
    pub fn backward_ws(&self, ws: &Workspace, upstream: &[f64], grad: &mut [f64]) {
        let layers = self.widths.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.widths[l] * self.widths[l + 1] + self.widths[l + 1];
        }
        let mut delta = upstream.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let off = offsets[l];
            let input = &ws.acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let g = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (gi, a) in g.iter_mut().zip(input.iter()) {
                    *gi += d * a;
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let weights = &self.params[off..off + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, w) in prev.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                        *p += d * w;
                    }
                }
                for (p, a) in prev.iter_mut().zip(input.iter()) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    /// Parameter gradient of `upstream . net(x)`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let mut ws = Workspace::default();
        self.forward_ws(x, &mut ws)?;
        let mut grad = vec![0.0; self.num_params()];
        self.backward_ws(&ws, upstream, &mut grad);
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_layer() {
        let mut net = DenseNet::zeros(&[2, 2]);
        net.params = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::zeros(&[3, 8, 8, 2]);
        assert_eq!(net.forward(&[0.3, -4.0, 9.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn rectifier_clips_negative() {
        // x -> relu(1*x + 0) -> 1*h + 0
        let mut net = DenseNet::zeros(&[1, 1, 1]);
        net.params = vec![1.0, 0.0, 1.0, 0.0];
        assert_eq!(net.forward(&[-3.0]).unwrap(), vec![0.0]);
        assert_eq!(net.forward(&[2.5]).unwrap(), vec![2.5]);
    }

    #[test]
    fn shape_errors() {
        let net = DenseNet::zeros(&[2, 3, 1]);
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::Shape {
                expected: 2,
                got: 1
            })
        ));
        assert!(net.backward(&[1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let net = DenseNet::new(&[3, 4, 2], &mut crate::rng::stream(1, &[]));
        let g = net.backward(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn linear_net_squared_loss_gradient() {
        // loss = (w.x + b - y)^2  ->  dL/dw = 2 (pred - y) x
        let mut net = DenseNet::zeros(&[2, 1]);
        net.params = vec![0.5, -1.0, 0.25];
        let x = [2.0, 3.0];
        let y = 1.0;
        let pred = net.forward(&x).unwrap()[0];
        let g = net.backward(&x, &[2.0 * (pred - y)]).unwrap();
        assert!((g[0] - 2.0 * (pred - y) * 2.0).abs() < 1e-12);
        assert!((g[1] - 2.0 * (pred - y) * 3.0).abs() < 1e-12);
        assert!((g[2] - 2.0 * (pred - y)).abs() < 1e-12);
    }

    #[test]
    fn matches_central_differences() {
        let mut rng = crate::rng::stream(5, &[]);
        for _ in 0..20 {
            let net = DenseNet::new(&[3, 6, 5, 2], &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let up: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g = net.backward(&x, &up).unwrap();
            let h = 1e-5;
            for i in 0..net.num_params() {
                let mut plus = net.clone();
                plus.params[i] += h;
                let mut minus = net.clone();
                minus.params[i] -= h;
                let f = |n: &DenseNet| -> f64 {
                    n.forward(&x)
                        .unwrap()
                        .iter()
                        .zip(&up)
                        .map(|(a, b)| a * b)
                        .sum()
                };
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                assert!((g[i] - fd).abs() / (1.0 + g[i].abs()) <= 1e-4);
            }
        }
    }
}
