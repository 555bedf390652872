//! Simulators, logged-data generation, dataset files, and the glucose-study
//! reward/action utilities.
//!
//! Three families are provided:
//! - [`TabularEnv`]: any [`TabularMdp`], states presented one-hot.
//! - [`SmoothEnv`]: states in `[0,1]^d`, reward `r*(a,s) + r0(s)` with a smooth
//!   action-dependent part and a rougher baseline; transitions either
//!   independent of `(a, s)` or a smooth action-dependent bump kernel mixed
//!   with a rough action-free kernel on a lattice.
//! - [`MarginEnv`]: one-dimensional, two actions, contrast `s^(1/alpha)` on
//!   the positive half line, used with `gamma = 0`.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    argmax, ActionDistribution, ActionId, Dataset, Discount, Policy, QFunction, StateVec, Step,
    TabularPolicy, Trajectory, UniformPolicy,
};
use crate::error::{Error, Result};
use crate::oracle::TabularMdp;
use crate::rng;

/// A simulator with a finite action set.
pub trait Environment: Send + Sync {
    fn state_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn initial_state(&self, rng: &mut ChaCha8Rng) -> StateVec;
    /// Returns `(reward, next_state)`.
    fn step(&self, state: &[f64], action: usize, rng: &mut ChaCha8Rng) -> (f64, StateVec);
    /// Largest possible absolute mean reward, used for horizon truncation.
    fn reward_bound(&self) -> f64;
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    match ActionDistribution::Probabilities(probs.to_vec()).sample(rng) {
        ActionId(i) => i,
    }
}

/// Random MDP: Dirichlet(1) transition rows, rewards uniform on
/// `[0, reward_scale]`, uniform behavior.
pub fn gen_random_tabular(
    num_states: usize,
    num_actions: usize,
    seed: u64,
    reward_scale: f64,
) -> TabularMdp {
    assert!(num_states >= 1 && num_actions >= 1);
    let mut r = rng::stream(seed, &[0x7AB]);
    let mut transition = vec![vec![vec![0.0; num_states]; num_actions]; num_states];
    for row in transition.iter_mut().flatten() {
        let raw: Vec<f64> = (0..num_states)
            .map(|_| -(1.0 - r.gen::<f64>()).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        for (p, x) in row.iter_mut().zip(raw) {
            *p = x / total;
        }
        // absorb rounding so the row sums to one within 1e-15
        let drift: f64 = 1.0 - row.iter().sum::<f64>();
        let k = argmax(row);
        row[k] += drift;
    }
    let reward = (0..num_states)
        .map(|_| {
            (0..num_actions)
                .map(|_| r.gen::<f64>() * reward_scale)
                .collect()
        })
        .collect();
    let behavior = vec![vec![1.0 / num_actions as f64; num_actions]; num_states];
    TabularMdp::new(transition, reward, behavior).expect("generated MDP is valid")
}

#[derive(Debug, Clone)]
pub struct TabularEnv {
    pub mdp: TabularMdp,
    /// Initial state law; uniform when built with [`TabularEnv::new`].
    pub initial: Vec<f64>,
    /// Standard deviation of Gaussian noise added to `r[s][a]`.
    pub reward_noise: f64,
}

impl TabularEnv {
    pub fn new(mdp: TabularMdp) -> Self {
        let n = mdp.num_states;
        TabularEnv {
            mdp,
            initial: vec![1.0 / n as f64; n],
            reward_noise: 0.0,
        }
    }

    pub fn with_reward_noise(mut self, sd: f64) -> Self {
        self.reward_noise = sd;
        self
    }

    /// The MDP's own logging policy `b[s][a]`.
    pub fn behavior(&self) -> TabularPolicy {
        TabularPolicy {
            probs: self.mdp.behavior.clone(),
        }
    }
}

impl Environment for TabularEnv {
    fn state_dim(&self) -> usize {
        self.mdp.num_states
    }
    fn num_actions(&self) -> usize {
        self.mdp.num_actions
    }
    fn initial_state(&self, rng: &mut ChaCha8Rng) -> StateVec {
        self.mdp.state(sample_index(&self.initial, rng))
    }
    fn step(&self, state: &[f64], action: usize, rng: &mut ChaCha8Rng) -> (f64, StateVec) {
        let s = argmax(state);
        let mut reward = self.mdp.reward[s][action];
        if self.reward_noise > 0.0 {
            reward += self.reward_noise * gaussian(rng);
        }
        let next = sample_index(&self.mdp.transition[s][action], rng);
        (reward, self.mdp.state(next))
    }
    fn reward_bound(&self) -> f64 {
        self.mdp
            .reward
            .iter()
            .flatten()
            .fold(0.0, |m: f64, r| m.max(r.abs()))
    }
}

/// Bounded scalar map on `[0,1]^d`, averaged over coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarMap {
    Constant {
        value: f64,
    },
    /// `intercept + slope * mean(x)`.
    Linear {
        slope: f64,
        intercept: f64,
    },
    /// `amplitude * mean_j sin(2 pi frequency x_j + phase)`; infinitely smooth.
    Sine {
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    /// `amplitude * mean_j |sin(2 pi frequency x_j)|`; only Lipschitz.
    Kinked {
        amplitude: f64,
        frequency: f64,
    },
}

impl ScalarMap {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = x.len().max(1) as f64;
        match *self {
            ScalarMap::Constant { value } => value,
            ScalarMap::Linear { slope, intercept } => intercept + slope * x.iter().sum::<f64>() / n,
            ScalarMap::Sine {
                amplitude,
                frequency,
                phase,
            } => {
                amplitude
                    * x.iter()
                        .map(|&v| (2.0 * PI * frequency * v + phase).sin())
                        .sum::<f64>()
                    / n
            }
            ScalarMap::Kinked {
                amplitude,
                frequency,
            } => {
                amplitude
                    * x.iter()
                        .map(|&v| (2.0 * PI * frequency * v).sin().abs())
                        .sum::<f64>()
                    / n
            }
        }
    }

    pub fn bound(&self) -> f64 {
        match *self {
            ScalarMap::Constant { value } => value.abs(),
            ScalarMap::Linear { slope, intercept } => intercept.abs() + slope.abs(),
            ScalarMap::Sine { amplitude, .. } | ScalarMap::Kinked { amplitude, .. } => {
                amplitude.abs()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransitionMode {
    /// `S'` uniform on `[0,1]^d` whatever `(a, s)`.
    Independent,
    /// One-dimensional lattice with `points` sites; the next-state law is
    /// `mix * q*(.|a,s) + (1 - mix) * q0(.|s)` where `q*` is a Gaussian bump
    /// centred at `s + shift[a]` (clamped) and `q0` a bump centred at the
    /// kinked map `|sin(2 pi rough_frequency s)|`.
    Decomposable {
        points: usize,
        mix: f64,
        shift: Vec<f64>,
        width: f64,
        rough_frequency: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothEnvSpec {
    pub state_dim: usize,
    /// `r*(a, .)`, one map per action.
    pub contrast: Vec<ScalarMap>,
    /// `r0(.)`.
    pub baseline: ScalarMap,
    pub transition: TransitionMode,
    /// Standard deviation of Gaussian reward noise.
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone)]
pub struct SmoothEnv {
    pub spec: SmoothEnvSpec,
    lattice_kernel: Option<Vec<Vec<Vec<f64>>>>,
}

impl SmoothEnv {
    pub fn new(spec: SmoothEnvSpec) -> Result<Self> {
        if spec.state_dim == 0 || spec.contrast.is_empty() {
            return Err(Error::config(
                "env",
                "need state_dim >= 1 and at least one action",
            ));
        }
        let lattice_kernel = match &spec.transition {
            TransitionMode::Independent => None,
            TransitionMode::Decomposable {
                points,
                mix,
                shift,
                width,
                rough_frequency,
            } => {
                if spec.state_dim != 1 {
                    return Err(Error::config(
                        "env.state_dim",
                        "decomposable transitions are one-dimensional",
                    ));
                }
                if *points < 2 || shift.len() != spec.contrast.len() || !(0.0..=1.0).contains(mix) {
                    return Err(Error::config(
                        "env.transition",
                        "need points >= 2, one shift per action and mix in [0,1]",
                    ));
                }
                Some(decomposable_kernel(
                    *points,
                    *mix,
                    shift,
                    *width,
                    *rough_frequency,
                ))
            }
        };
        Ok(SmoothEnv {
            spec,
            lattice_kernel,
        })
    }

    /// Example with independent transitions on `[0,1]^d`.
    pub fn independent(
        state_dim: usize,
        contrast: Vec<ScalarMap>,
        baseline: ScalarMap,
        noise: f64,
    ) -> Self {
        SmoothEnv::new(SmoothEnvSpec {
            state_dim,
            contrast,
            baseline,
            transition: TransitionMode::Independent,
            noise,
        })
        .expect("valid independent spec")
    }

    pub fn mean_reward(&self, action: usize, state: &[f64]) -> f64 {
        self.spec.contrast[action].eval(state) + self.spec.baseline.eval(state)
    }

    /// `r*(a, s) - r*(a0, s)`: the optimal contrast when transitions are independent.
    pub fn reward_contrast(&self, action: usize, a0: usize, state: &[f64]) -> f64 {
        self.spec.contrast[action].eval(state) - self.spec.contrast[a0].eval(state)
    }

    fn lattice_points(&self) -> Option<usize> {
        match self.spec.transition {
            TransitionMode::Decomposable { points, .. } => Some(points),
            TransitionMode::Independent => None,
        }
    }

    fn lattice_index(points: usize, x: f64) -> usize {
        ((x.clamp(0.0, 1.0) * (points - 1) as f64).round()) as usize
    }

    /// Tabular version on a one-dimensional lattice of `points` sites
    /// (the env's own lattice in decomposable mode). The returned MDP uses
    /// lattice index states; `behavior` is queried at the lattice coordinates.
    pub fn discretize(&self, points: usize, behavior: &dyn Policy) -> Result<TabularMdp> {
        if self.spec.state_dim != 1 || points < 2 {
            return Err(Error::config(
                "env",
                "discretization needs a 1-d state and >= 2 points",
            ));
        }
        let points = self.lattice_points().unwrap_or(points);
        let na = self.spec.contrast.len();
        let coord = |k: usize| k as f64 / (points - 1) as f64;
        let transition = (0..points)
            .map(|k| {
                (0..na)
                    .map(|a| match &self.lattice_kernel {
                        Some(kernel) => kernel[k][a].clone(),
                        None => vec![1.0 / points as f64; points],
                    })
                    .collect()
            })
            .collect();
        let reward = (0..points)
            .map(|k| (0..na).map(|a| self.mean_reward(a, &[coord(k)])).collect())
            .collect();
        let behavior = (0..points)
            .map(|k| behavior.probabilities(&[coord(k)]))
            .collect();
        TabularMdp::new(transition, reward, behavior)
    }
}

fn decomposable_kernel(
    points: usize,
    mix: f64,
    shift: &[f64],
    width: f64,
    rough_frequency: f64,
) -> Vec<Vec<Vec<f64>>> {
    let coord = |k: usize| k as f64 / (points - 1) as f64;
    let bump = |centre: f64| -> Vec<f64> {
        let raw: Vec<f64> = (0..points)
            .map(|j| (-(coord(j) - centre).powi(2) / (2.0 * width * width)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / total).collect()
    };
    (0..points)
        .map(|k| {
            let s = coord(k);
            let rough = bump((2.0 * PI * rough_frequency * s).sin().abs());
            shift
                .iter()
                .map(|&d| {
                    let smooth = bump((s + d).clamp(0.0, 1.0));
                    smooth
                        .iter()
                        .zip(&rough)
                        .map(|(a, b)| mix * a + (1.0 - mix) * b)
                        .collect()
                })
                .collect()
        })
        .collect()
}

impl Environment for SmoothEnv {
    fn state_dim(&self) -> usize {
        self.spec.state_dim
    }
    fn num_actions(&self) -> usize {
        self.spec.contrast.len()
    }
    fn initial_state(&self, rng: &mut ChaCha8Rng) -> StateVec {
        match self.lattice_points() {
            Some(points) => StateVec(vec![rng.gen_range(0..points) as f64 / (points - 1) as f64]),
            None => StateVec((0..self.spec.state_dim).map(|_| rng.gen::<f64>()).collect()),
        }
    }
    fn step(&self, state: &[f64], action: usize, rng: &mut ChaCha8Rng) -> (f64, StateVec) {
        let mut reward = self.mean_reward(action, state);
        if self.spec.noise > 0.0 {
            reward += self.spec.noise * gaussian(rng);
        }
        let next = match (&self.lattice_kernel, self.lattice_points()) {
            (Some(kernel), Some(points)) => {
                let k = SmoothEnv::lattice_index(points, state[0]);
                let j = sample_index(&kernel[k][action], rng);
                StateVec(vec![j as f64 / (points - 1) as f64])
            }
            _ => StateVec((0..self.spec.state_dim).map(|_| rng.gen::<f64>()).collect()),
        };
        (reward, next)
    }
    fn reward_bound(&self) -> f64 {
        self.spec
            .contrast
            .iter()
            .map(ScalarMap::bound)
            .fold(0.0, f64::max)
            + self.spec.baseline.bound()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginEnvSpec {
    pub alpha: f64,
    #[serde(default)]
    pub noise: f64,
}

/// `tau(1, s) = s^(1/alpha)` for `s > 0`, else `0`.
pub fn margin_contrast(spec: &MarginEnvSpec, s: f64) -> f64 {
    if s > 0.0 {
        s.powf(1.0 / spec.alpha)
    } else {
        0.0
    }
}

/// States uniform on `[-1, 1]` and independent of the past; action 1 pays the
/// margin contrast, action 0 pays nothing.
#[derive(Debug, Clone)]
pub struct MarginEnv {
    pub spec: MarginEnvSpec,
}

impl MarginEnv {
    pub fn new(spec: MarginEnvSpec) -> Result<Self> {
        if !(spec.alpha > 0.0) {
            return Err(Error::config("env.alpha", "alpha must be positive"));
        }
        Ok(MarginEnv { spec })
    }
}

impl Environment for MarginEnv {
    fn state_dim(&self) -> usize {
        1
    }
    fn num_actions(&self) -> usize {
        2
    }
    fn initial_state(&self, rng: &mut ChaCha8Rng) -> StateVec {
        StateVec(vec![rng.gen_range(-1.0..1.0)])
    }
    fn step(&self, state: &[f64], action: usize, rng: &mut ChaCha8Rng) -> (f64, StateVec) {
        let mut reward = if action == 1 {
            margin_contrast(&self.spec, state[0])
        } else {
            0.0
        };
        if self.spec.noise > 0.0 {
            reward += self.spec.noise * gaussian(rng);
        }
        (reward, StateVec(vec![rng.gen_range(-1.0..1.0)]))
    }
    fn reward_bound(&self) -> f64 {
        1.0
    }
}

/// Logs `n` trajectories of `t` steps under `behavior`, recording its
/// propensity for every taken action. Trajectory `i` uses its own seed stream.
pub fn rollout(
    env: &dyn Environment,
    behavior: &dyn Policy,
    n: usize,
    t: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || t == 0 {
        return Err(Error::EmptyData("rollout needs N >= 1 and T >= 1"));
    }
    let trajectories = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, &[0x5011, i as u64]);
            let mut state = env.initial_state(&mut r);
            let mut steps = Vec::with_capacity(t);
            for _ in 0..t {
                let dist = behavior.distribution(&state);
                let action = dist.sample(&mut r);
                let propensity = dist.prob(action.0);
                let (reward, next) = env.step(&state, action.0, &mut r);
                steps.push(Step {
                    state,
                    action,
                    reward,
                    propensity,
                });
                state = next;
            }
            Trajectory {
                id: i as u64,
                steps,
                terminal_state: state,
            }
        })
        .collect();
    Dataset::new(trajectories, env.num_actions())
}

/// Every `(s, a)` pair of a tabular MDP logged once as a one-step trajectory,
/// with the most likely next state and the mean reward.
pub fn exhaustive_dataset(m: &TabularMdp) -> Dataset {
    let mut trajectories = Vec::new();
    for s in 0..m.num_states {
        for a in 0..m.num_actions {
            trajectories.push(Trajectory {
                id: (s * m.num_actions + a) as u64,
                steps: vec![Step {
                    state: m.state(s),
                    action: ActionId(a),
                    reward: m.reward[s][a],
                    propensity: m.behavior[s][a],
                }],
                terminal_state: m.state(argmax(&m.transition[s][a])),
            });
        }
    }
    Dataset::new(trajectories, m.num_actions).expect("MDP has at least one state and action")
}

/// Index of glycemic control: zero inside `[80, 140]` mg/dL, negative outside.
pub fn glycemic_reward(glucose: f64) -> f64 {
    if (80.0..=140.0).contains(&glucose) {
        0.0
    } else if glucose < 80.0 {
        -(80.0 - glucose).powi(2) / 30.0
    } else {
        -(glucose - 140.0).powf(1.35) / 30.0
    }
}

/// Insulin dose to one of five action levels: 0, (0,4], (4,8], (8,12], >12.
pub fn insulin_to_action(insulin: f64) -> Result<ActionId> {
    if !(insulin >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "insulin dose must be nonnegative, got {insulin}"
        )));
    }
    if insulin == 0.0 {
        return Ok(ActionId(0));
    }
    if insulin > 12.0 {
        return Ok(ActionId(4));
    }
    Ok(ActionId((insulin / 4.0).ceil() as usize))
}

/// One line of the dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: u64,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub propensities: Vec<f64>,
}

impl From<&Trajectory> for TrajectoryRecord {
    fn from(t: &Trajectory) -> Self {
        let mut states: Vec<Vec<f64>> = t.steps.iter().map(|s| s.state.0.clone()).collect();
        states.push(t.terminal_state.0.clone());
        TrajectoryRecord {
            id: t.id,
            states,
            actions: t.steps.iter().map(|s| s.action.0).collect(),
            rewards: t.steps.iter().map(|s| s.reward).collect(),
            propensities: t.steps.iter().map(|s| s.propensity).collect(),
        }
    }
}

impl TrajectoryRecord {
    fn into_trajectory(self) -> std::result::Result<Trajectory, String> {
        let t = self.actions.len();
        if self.states.len() != t + 1 || self.rewards.len() != t || self.propensities.len() != t {
            return Err(format!(
                "expected {} states and {t} rewards/propensities for {t} actions",
                t + 1
            ));
        }
        let mut states = self.states.into_iter();
        let steps = self
            .actions
            .iter()
            .zip(&self.rewards)
            .zip(&self.propensities)
            .map(|((&a, &r), &b)| Step {
                state: StateVec(states.next().expect("length checked")),
                action: ActionId(a),
                reward: r,
                propensity: b,
            })
            .collect();
        Ok(Trajectory {
            id: self.id,
            steps,
            terminal_state: StateVec(states.next().expect("length checked")),
        })
    }
}

pub fn write_jsonl<W: Write>(d: &Dataset, mut out: W) -> Result<()> {
    for t in &d.trajectories {
        serde_json::to_writer(&mut out, &TrajectoryRecord::from(t))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl_string(d: &Dataset) -> String {
    let mut buf = Vec::new();
    write_jsonl(d, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Parses a dataset from JSON Lines text. `num_actions` defaults to one more
/// than the largest logged action.
pub fn parse_jsonl<R: BufRead>(input: R, num_actions: Option<usize>) -> Result<Dataset> {
    let mut trajectories = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let traj = record.into_trajectory().map_err(|message| Error::Parse {
            line: i + 1,
            message,
        })?;
        trajectories.push(traj);
    }
    let inferred = trajectories
        .iter()
        .flat_map(|t| t.steps.iter().map(|s| s.action.0 + 1))
        .max()
        .unwrap_or(0);
    Dataset::new(trajectories, num_actions.unwrap_or(inferred))
}

/// Reads and validates a dataset file.
pub fn ingest_jsonl(path: impl AsRef<Path>, num_actions: Option<usize>) -> Result<Dataset> {
    let file = fs::File::open(path)?;
    parse_jsonl(BufReader::new(file), num_actions)
}

/// Logging policy of a generated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BehaviorConfig {
    Uniform,
    /// Greedy with respect to the immediate mean reward, mixed with uniform
    /// exploration. Tabular environments use the MDP's own `b` table instead.
    #[default]
    #[serde(rename = "epsilon_greedy")]
    EpsilonGreedy,
    #[serde(rename = "epsilon_greedy_with")]
    EpsilonGreedyWith {
        epsilon: f64,
    },
}

pub const DEFAULT_EPSILON: f64 = 0.1;

/// Env specs as they appear in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Tabular {
        /// `"chain2"`, `"single_state"` or `"random"`.
        #[serde(default)]
        preset: Option<String>,
        #[serde(default)]
        mdp: Option<TabularMdp>,
        #[serde(default)]
        num_states: Option<usize>,
        #[serde(default)]
        num_actions: Option<usize>,
        #[serde(default)]
        reward_noise: f64,
    },
    Smooth(SmoothEnvSpec),
    Margin(MarginEnvSpec),
}

/// A built environment together with its logging policy.
pub struct EnvBundle {
    pub env: Box<dyn Environment>,
    pub behavior: Box<dyn Policy>,
    /// The exact MDP when one exists.
    pub mdp: Option<TabularMdp>,
    truth: Truth,
}

enum Truth {
    Tabular,
    Reward(SmoothEnv),
    Margin(MarginEnvSpec),
    Unknown,
}

/// `tau[a][s]` read off at the argmax of a one-hot state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularContrast {
    pub tau: Vec<Vec<f64>>,
}

impl QFunction for TabularContrast {
    fn num_actions(&self) -> usize {
        self.tau.len()
    }
    fn values(&self, state: &[f64]) -> Vec<f64> {
        let s = argmax(state);
        self.tau.iter().map(|row| row[s]).collect()
    }
}

struct FnContrast<F> {
    num_actions: usize,
    f: F,
}

impl<F: Fn(usize, &[f64]) -> f64 + Send + Sync> QFunction for FnContrast<F> {
    fn num_actions(&self) -> usize {
        self.num_actions
    }
    fn values(&self, state: &[f64]) -> Vec<f64> {
        (0..self.num_actions).map(|a| (self.f)(a, state)).collect()
    }
}

impl EnvBundle {
    /// Exact optimal contrast `Q*(a, s) - Q*(a0, s)`, where one is available:
    /// tabular MDPs, smooth envs with state-independent transitions, and the
    /// margin family at `gamma = 0`.
    pub fn optimal_contrast(&self, gamma: Discount, a0: usize) -> Option<Box<dyn QFunction>> {
        match &self.truth {
            Truth::Tabular => {
                let m = self.mdp.as_ref()?;
                Some(Box::new(TabularContrast {
                    tau: crate::oracle::exact_contrast(m, gamma, a0),
                }))
            }
            Truth::Reward(env) => {
                let env = env.clone();
                Some(Box::new(FnContrast {
                    num_actions: env.spec.contrast.len(),
                    f: move |a: usize, s: &[f64]| env.reward_contrast(a, a0, s),
                }))
            }
            Truth::Margin(spec) if gamma.value() == 0.0 => {
                let spec = *spec;
                let arm = move |a: usize, s: &[f64]| {
                    if a == 1 {
                        margin_contrast(&spec, s[0])
                    } else {
                        0.0
                    }
                };
                Some(Box::new(FnContrast {
                    num_actions: 2,
                    f: move |a: usize, s: &[f64]| arm(a, s) - arm(a0, s),
                }))
            }
            _ => None,
        }
    }
}

/// Greedy in immediate mean reward.
struct RewardGreedy<F> {
    num_actions: usize,
    reward: F,
}

impl<F: Fn(usize, &[f64]) -> f64 + Send + Sync> Policy for RewardGreedy<F> {
    fn num_actions(&self) -> usize {
        self.num_actions
    }
    fn distribution(&self, state: &[f64]) -> ActionDistribution {
        let v: Vec<f64> = (0..self.num_actions)
            .map(|a| (self.reward)(a, state))
            .collect();
        ActionDistribution::Point(ActionId(argmax(&v)))
    }
}

impl EnvConfig {
    pub fn build(&self, behavior: BehaviorConfig, seed: u64) -> Result<EnvBundle> {
        let eps = match behavior {
            BehaviorConfig::Uniform => 1.0,
            BehaviorConfig::EpsilonGreedy => DEFAULT_EPSILON,
            BehaviorConfig::EpsilonGreedyWith { epsilon } => epsilon,
        };
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::config("data.behavior.epsilon", "must lie in (0, 1]"));
        }
        match self {
            EnvConfig::Tabular {
                preset,
                mdp,
                num_states,
                num_actions,
                reward_noise,
            } => {
                let m = match (preset.as_deref(), mdp) {
                    (_, Some(m)) => {
                        m.validate()?;
                        m.clone()
                    }
                    (Some("chain2"), None) => TabularMdp::chain2(),
                    (Some("single_state"), None) => TabularMdp::single_state(),
                    (Some("random"), None) => gen_random_tabular(
                        num_states.ok_or_else(|| Error::config("env.num_states", "missing"))?,
                        num_actions.ok_or_else(|| Error::config("env.num_actions", "missing"))?,
                        seed,
                        1.0,
                    ),
                    (Some(other), None) => {
                        return Err(Error::config(
                            "env.preset",
                            format!("unknown preset `{other}`"),
                        ))
                    }
                    (None, None) => {
                        return Err(Error::config("env.mdp", "missing (or give env.preset)"))
                    }
                };
                let env = TabularEnv::new(m.clone()).with_reward_noise(*reward_noise);
                let behavior: Box<dyn Policy> = Box::new(env.behavior());
                Ok(EnvBundle {
                    env: Box::new(env),
                    behavior,
                    mdp: Some(m),
                    truth: Truth::Tabular,
                })
            }
            EnvConfig::Smooth(spec) => {
                let env = SmoothEnv::new(spec.clone())?;
                let na = spec.contrast.len();
                let behavior: Box<dyn Policy> = if eps >= 1.0 {
                    Box::new(UniformPolicy { num_actions: na })
                } else {
                    let e2 = env.clone();
                    Box::new(crate::domain::EpsilonGreedy {
                        base: RewardGreedy {
                            num_actions: na,
                            reward: move |a: usize, s: &[f64]| e2.mean_reward(a, s),
                        },
                        epsilon: eps,
                    })
                };
                let truth = match spec.transition {
                    TransitionMode::Independent => Truth::Reward(env.clone()),
                    TransitionMode::Decomposable { .. } => Truth::Unknown,
                };
                Ok(EnvBundle {
                    env: Box::new(env),
                    behavior,
                    mdp: None,
                    truth,
                })
            }
            EnvConfig::Margin(spec) => {
                let env = MarginEnv::new(*spec)?;
                let behavior: Box<dyn Policy> = if eps >= 1.0 {
                    Box::new(UniformPolicy { num_actions: 2 })
                } else {
                    let s2 = *spec;
                    Box::new(crate::domain::EpsilonGreedy {
                        base: RewardGreedy {
                            num_actions: 2,
                            reward: move |a: usize, s: &[f64]| {
                                if a == 1 {
                                    margin_contrast(&s2, s[0])
                                } else {
                                    0.0
                                }
                            },
                        },
                        epsilon: eps,
                    })
                };
                Ok(EnvBundle {
                    env: Box::new(env),
                    behavior,
                    mdp: None,
                    truth: Truth::Margin(*spec),
                })
            }
        }
    }
}
