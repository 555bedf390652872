//! Policy value estimates: fitted-Q evaluation on logged data and Monte Carlo
//! rollouts on a simulator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approximator::{ModelConfig, QModel, Sample};
use crate::domain::{Dataset, Discount, Policy, QFunction};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::rng;

/// `Q_K` from fitted-Q evaluation of a fixed policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fqe {
    pub q: QModel,
    /// Final training loss of each round.
    pub losses: Vec<f64>,
}

impl Fqe {
    /// `V(s) = sum_a pi(a|s) Q_K(a, s)`.
    pub fn value(&self, pi: &dyn Policy, state: &[f64]) -> f64 {
        expected_value(&self.q, pi, state)
    }

    /// Mean of `V` over the first state of every trajectory in `d`.
    pub fn initial_value(&self, pi: &dyn Policy, d: &Dataset) -> f64 {
        let starts: Vec<&[f64]> = d
            .trajectories
            .iter()
            .filter_map(|t| t.steps.first().map(|s| &s.state[..]))
            .collect();
        starts.iter().map(|s| self.value(pi, s)).sum::<f64>() / starts.len() as f64
    }
}

fn expected_value(q: &dyn QFunction, pi: &dyn Policy, state: &[f64]) -> f64 {
    let v = q.values(state);
    pi.probabilities(state)
        .iter()
        .zip(&v)
        .filter(|(p, _)| **p != 0.0)
        .map(|(p, q)| p * q)
        .sum()
}

/// `K` rounds of `Q_k <- regress R + gamma V_{k-1}(S')` on `(A, S)`.
pub fn fqe(
    d: &Dataset,
    pi: &dyn Policy,
    iterations: usize,
    gamma: Discount,
    model: &ModelConfig,
    seed: u64,
) -> Result<Fqe> {
    if iterations == 0 {
        return Err(Error::config("eval.fqe_iterations", "must be >= 1"));
    }
    let tr = d.transitions();
    if tr.is_empty() {
        return Err(Error::EmptyData("fqe dataset"));
    }
    let g = gamma.value();
    let mut q = QModel::new(model, d.state_dim, d.num_actions, seed);
    let mut losses = Vec::with_capacity(iterations);
    for k in 0..iterations {
        let targets: Vec<f64> = tr
            .iter()
            .map(|x| x.reward + g * expected_value(&q, pi, x.next_state))
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
        let history = q.fit(&samples, rng::derive_seed(seed, &[0xFE, k as u64]))?;
        losses.push(*history.last().expect("fit reports at least one loss"));
    }
    Ok(Fqe { q, losses })
}

/// Smallest `H` with `gamma^H <= tol`, so the truncated tail is at most
/// `tol` times the value scale `R_max / (1 - gamma)`.
pub fn mc_horizon(gamma: Discount, tol: f64) -> usize {
    let g = gamma.value();
    if g == 0.0 {
        return 1;
    }
    ((tol.ln() / g.ln()).ceil() as usize).max(1)
}

pub const MC_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub episodes: usize,
    pub horizon: usize,
}

/// Mean discounted return over seeded episodes of length `horizon`.
pub fn value_of_policy_mc(
    env: &dyn Environment,
    pi: &dyn Policy,
    episodes: usize,
    horizon: usize,
    gamma: Discount,
    seed: u64,
) -> Result<McEstimate> {
    if episodes == 0 {
        return Err(Error::config("eval.episodes", "must be >= 1"));
    }
    let g = gamma.value();
    let returns: Vec<f64> = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let mut r = rng::stream(seed, &[0xC0, e as u64]);
            let mut state = env.initial_state(&mut r);
            let (mut total, mut discount) = (0.0, 1.0);
            for _ in 0..horizon {
                let a = pi.distribution(&state).sample(&mut r);
                let (reward, next) = env.step(&state, a.0, &mut r);
                total += discount * reward;
                discount *= g;
                state = next;
            }
            total
        })
        .collect();
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let se = if episodes > 1 {
        let var = returns.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate {
        mean,
        se,
        episodes,
        horizon,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fqe,
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub method: Method,
    pub value: f64,
    pub se: f64,
    pub config: serde_json::Value,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximator::FeatureMap;
    use crate::domain::{ConstantPolicy, UniformPolicy};
    use crate::envs::{exhaustive_dataset, gen_random_tabular, TabularEnv};
    use crate::oracle::{policy_q, TabularMdp};
    use crate::qlearn::{fqi, QTrainConfig};
    use crate::ActionId;

    fn gamma(g: f64) -> Discount {
        Discount::new(g).unwrap()
    }

    fn always(a: usize, n: usize) -> ConstantPolicy {
        ConstantPolicy {
            action: ActionId(a),
            num_actions: n,
        }
    }

    #[test]
    fn tabular_fqe_matches_policy_q_on_chain2() {
        let m = TabularMdp::chain2();
        let d = exhaustive_dataset(&m);
        let pi = always(1, 2);
        let out = fqe(&d, &pi, 60, gamma(0.5), &ModelConfig::Tabular, 0).unwrap();
        let exact = policy_q(&m, &pi, gamma(0.5)).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                assert!((out.q.value(a, &m.state(s)) - exact.get(s, a)).abs() < 1e-6);
            }
            assert!((out.value(&pi, &m.state(s)) - 2.0).abs() < 1e-6);
        }
        assert!((out.initial_value(&pi, &d) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn gamma_zero_single_round_returns_reward() {
        let m = TabularMdp::chain2();
        let d = exhaustive_dataset(&m);
        for a in 0..2 {
            let pi = always(a, 2);
            let out = fqe(&d, &pi, 1, gamma(0.0), &ModelConfig::Tabular, 0).unwrap();
            for s in 0..2 {
                assert_eq!(out.value(&pi, &m.state(s)), m.reward[s][a]);
            }
        }
        assert!(fqe(&d, &always(0, 2), 0, gamma(0.5), &ModelConfig::Tabular, 0).is_err());
    }

    #[test]
    fn single_action_fqe_equals_fqi() {
        let m = gen_random_tabular(5, 1, 3, 1.0);
        let d = exhaustive_dataset(&m);
        let cfg = QTrainConfig {
            model: ModelConfig::Tabular,
            iterations: 25,
            ..QTrainConfig::default()
        };
        let (q, _) = fqi(&d, &cfg, gamma(0.8), 0).unwrap();
        let e = fqe(&d, &always(0, 1), 25, gamma(0.8), &ModelConfig::Tabular, 0).unwrap();
        for s in 0..5 {
            assert_eq!(q.values(&m.state(s)), e.q.values(&m.state(s)));
        }
    }

    #[test]
    fn fqe_ignores_trajectory_order() {
        let env = TabularEnv::new(gen_random_tabular(4, 2, 1, 1.0));
        let d = crate::envs::rollout(&env, &env.behavior(), 30, 5, 2).unwrap();
        let mut rev = d.clone();
        rev.trajectories.reverse();
        let pi = UniformPolicy { num_actions: 2 };
        let cfg = ModelConfig::linear_exact(FeatureMap::Identity);
        let a = fqe(&d, &pi, 10, gamma(0.7), &cfg, 0).unwrap();
        let b = fqe(&rev, &pi, 10, gamma(0.7), &cfg, 0).unwrap();
        for s in 0..4 {
            let st = env.mdp.state(s);
            for (x, y) in a.q.values(&st).iter().zip(b.q.values(&st)) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mc_value_on_chain2() {
        let env = TabularEnv::new(TabularMdp::chain2());
        let g = gamma(0.5);
        let est = value_of_policy_mc(&env, &always(1, 2), 2000, 40, g, 1).unwrap();
        // deterministic chain: every return is exactly 2 - 0.5^39
        assert!((est.mean - 2.0).abs() < 1e-10);
        let noisy = TabularEnv::new(TabularMdp::chain2()).with_reward_noise(1.0);
        let est = value_of_policy_mc(&noisy, &always(1, 2), 4000, 40, g, 1).unwrap();
        assert!((est.mean - 2.0).abs() <= 3.0 * est.se, "{est:?}");
        let again = value_of_policy_mc(&noisy, &always(1, 2), 4000, 40, g, 1).unwrap();
        assert_eq!(est, again);
    }

    #[test]
    fn zero_reward_env_has_zero_value() {
        let mut m = gen_random_tabular(3, 2, 0, 1.0);
        m.reward = vec![vec![0.0; 2]; 3];
        let env = TabularEnv::new(m);
        let est = value_of_policy_mc(
            &env,
            &UniformPolicy { num_actions: 2 },
            50,
            10,
            gamma(0.9),
            0,
        )
        .unwrap();
        assert_eq!((est.mean, est.se), (0.0, 0.0));
    }

    #[test]
    fn mc_standard_error_shrinks_at_root_n() {
        let env = TabularEnv::new(TabularMdp::chain2()).with_reward_noise(0.5);
        let pi = UniformPolicy { num_actions: 2 };
        let g = gamma(0.5);
        let pts: Vec<(f64, f64)> = [1000, 2000, 4000, 8000]
            .iter()
            .map(|&n| {
                let e = value_of_policy_mc(&env, &pi, n, 20, g, 11).unwrap();
                ((n as f64).ln(), e.se.ln())
            })
            .collect();
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / 4.0;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / 4.0;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + 0.5).abs() <= 0.15, "slope {slope}");
    }

    #[test]
    fn horizon_rule() {
        assert_eq!(mc_horizon(gamma(0.0), 1e-4), 1);
        let h = mc_horizon(gamma(0.5), 1e-4);
        assert_eq!(h, 14);
        assert!(0.5f64.powi(h as i32) <= 1e-4 && 0.5f64.powi(h as i32 - 1) > 1e-4);
    }
}
