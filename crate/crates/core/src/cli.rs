//! Pipeline driver behind the `seal` binary.
//!
//! Every stage exists twice: as an in-memory function used by
//! [`run_pipeline`] and tests, and as a subcommand that reads the previous
//! stage's artifacts from `--out` and writes its own there, together with a
//! manifest holding the resolved config, the seed, the version and a sha256
//! of every file written.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::advantage::{
    contrast_mse, fit_contrast, seal_policy, AdvantageConfig, ContrastModel, PlugInContrast,
};
use crate::approximator::ModelConfig;
use crate::domain::{
    greedy_policy, split_folds, ActionId, Dataset, Discount, FoldAssignment, Policy, StateVec,
};
use crate::envs::{ingest_jsonl, rollout, write_jsonl, BehaviorConfig, EnvBundle, EnvConfig};
use crate::error::{Error, Result};
use crate::ope::{fqe, mc_horizon, value_of_policy_mc, EvalReport, Method, MC_TOLERANCE};
use crate::oracle::{
    exact_contrast, exact_density_ratio, exact_state_ratio, value_iteration, TabularMdp,
};
use crate::pseudo::{build_pseudo_table, FoldNuisance, NuisanceSet, PseudoConfig, PseudoTable};
use crate::qlearn::{train_q, QTrainConfig, TrainedQ};
use crate::ratio::{train_ratio, ConstantRatio, RatioConfig, StateRatio, TrainedRatio};
use crate::rng::derive_seed;

pub const VERSION: &str = match option_env!("SEAL_GIT_DESCRIBE") {
    Some(v) => v,
    None => concat!("v", env!("CARGO_PKG_VERSION")),
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Trajectories to generate (`N`).
    pub trajectories: usize,
    /// Steps per trajectory (`T`).
    pub horizon: usize,
    pub behavior: BehaviorConfig,
    pub gamma: f64,
    pub folds: usize,
    /// Existing dataset; `<out>/data.jsonl` when absent.
    pub path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            trajectories: 100,
            horizon: 20,
            behavior: BehaviorConfig::default(),
            gamma: 0.9,
            folds: 2,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub fqe: bool,
    pub fqe_iterations: usize,
    /// Backend for FQE; the Q-learning backend when absent.
    pub fqe_model: Option<ModelConfig>,
    /// Monte Carlo rollouts; skipped when the config has no env.
    pub mc: bool,
    pub mc_episodes: usize,
    /// Truncation horizon; chosen so the tail is below `1e-4` of the value
    /// scale when absent.
    pub mc_horizon: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            fqe: true,
            fqe_iterations: 60,
            fqe_model: None,
            mc: true,
            mc_episodes: 1000,
            mc_horizon: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub env: Option<EnvConfig>,
    pub data: DataConfig,
    pub qlearn: QTrainConfig,
    pub ratio: RatioConfig,
    pub pseudo: PseudoConfig,
    pub advantage: AdvantageConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config =
            serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.gamma()?;
        cfg.qlearn.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Config::from_json(&text)
    }

    pub fn gamma(&self) -> Result<Discount> {
        Discount::new(self.data.gamma).map_err(|e| Error::config("data.gamma", e.to_string()))
    }

    fn env(&self) -> Result<&EnvConfig> {
        self.env
            .as_ref()
            .ok_or_else(|| Error::config("env", "missing env block"))
    }

    pub fn build_env(&self) -> Result<EnvBundle> {
        self.env()?
            .build(self.data.behavior, derive_seed(self.seed, &[0]))
    }

    fn fqe_model(&self) -> &ModelConfig {
        self.eval.fqe_model.as_ref().unwrap_or(&self.qlearn.model)
    }
}

/// Seed of each stage, derived from the run seed.
mod stage_seed {
    pub const DATA: u64 = 1;
    pub const FOLDS: u64 = 2;
    pub const QLEARN: u64 = 3;
    pub const RATIO: u64 = 4;
    pub const PSEUDO: u64 = 5;
    pub const ADVANTAGE: u64 = 6;
    pub const FQE: u64 = 7;
    pub const MC: u64 = 8;
    /// Fold index used for the Q estimate trained on all data.
    pub const FULL: u64 = 1 << 32;
}

pub fn generate_data(cfg: &Config, env: &EnvBundle) -> Result<Dataset> {
    rollout(
        &*env.env,
        &*env.behavior,
        cfg.data.trajectories,
        cfg.data.horizon,
        derive_seed(cfg.seed, &[stage_seed::DATA]),
    )
}

/// Per-fold Q estimates on each fold's complement, plus one on all data.
pub struct QStage {
    pub folds: FoldAssignment,
    pub fold_q: Vec<TrainedQ>,
    pub full_q: TrainedQ,
}

pub fn stage_qlearn(cfg: &Config, d: &Dataset) -> Result<QStage> {
    let gamma = cfg.gamma()?;
    let folds = split_folds(
        d,
        cfg.data.folds,
        derive_seed(cfg.seed, &[stage_seed::FOLDS]),
    )?;
    let jobs: Vec<u64> = (0..folds.num_folds as u64)
        .chain([stage_seed::FULL])
        .collect();
    let mut fitted = jobs
        .par_iter()
        .map(|&l| {
            let seed = derive_seed(cfg.seed, &[stage_seed::QLEARN, l]);
            if l == stage_seed::FULL {
                train_q(d, &cfg.qlearn, gamma, seed)
            } else {
                train_q(
                    &d.subset(&folds.complement(l as usize)),
                    &cfg.qlearn,
                    gamma,
                    seed,
                )
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let full_q = fitted.pop().expect("full-data job");
    Ok(QStage {
        folds,
        fold_q: fitted,
        full_q,
    })
}

/// Ratio models for `pi^ = greedy(Q^(l))` on each fold's complement. With
/// `gamma = 0` the ratio carries no weight and none is trained.
pub fn stage_ratio(cfg: &Config, d: &Dataset, q: &QStage) -> Result<Vec<Option<TrainedRatio>>> {
    let gamma = cfg.gamma()?;
    if gamma.value() == 0.0 {
        return Ok(vec![None; q.folds.num_folds]);
    }
    (0..q.folds.num_folds)
        .into_par_iter()
        .map(|l| {
            let pi = greedy_policy(q.fold_q[l].q.clone());
            let sub = d.subset(&q.folds.complement(l));
            let seed = derive_seed(cfg.seed, &[stage_seed::RATIO, l as u64]);
            train_ratio(&sub, &pi, &cfg.ratio, gamma, seed).map(Some)
        })
        .collect()
}

pub fn nuisance_set(q: &QStage, ratios: &[Option<TrainedRatio>]) -> Result<NuisanceSet> {
    if ratios.len() != q.fold_q.len() {
        return Err(Error::Shape {
            expected: q.fold_q.len(),
            got: ratios.len(),
        });
    }
    let folds = q
        .fold_q
        .iter()
        .zip(ratios)
        .map(|(fq, r)| {
            let w: Arc<dyn StateRatio> = match r {
                Some(r) => Arc::new(r.model.clone()),
                None => Arc::new(ConstantRatio(1.0)),
            };
            FoldNuisance {
                q: Arc::new(fq.q.clone()),
                pi: Arc::new(greedy_policy(fq.q.clone())),
                w,
                trained_on: fq.trained_on.clone(),
            }
        })
        .collect();
    Ok(NuisanceSet { folds })
}

pub fn stage_pseudo(
    cfg: &Config,
    d: &Dataset,
    q: &QStage,
    ratios: &[Option<TrainedRatio>],
) -> Result<PseudoTable> {
    let ns = nuisance_set(q, ratios)?;
    build_pseudo_table(
        d,
        &q.folds,
        &ns,
        cfg.gamma()?,
        &cfg.pseudo,
        derive_seed(cfg.seed, &[stage_seed::PSEUDO]),
    )
}

pub fn stage_advantage(cfg: &Config, table: &PseudoTable) -> Result<ContrastModel> {
    fit_contrast(
        table,
        &cfg.advantage,
        derive_seed(cfg.seed, &[stage_seed::ADVANTAGE]),
    )
}

/// Values of one policy; absent entries were not computed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PolicyValues {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fqe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_se: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastErrors {
    pub seal: f64,
    pub plug_in: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub version: String,
    pub seed: u64,
    pub gamma: f64,
    pub baseline_action: usize,
    pub seal: PolicyValues,
    pub baseline: PolicyValues,
    /// Squared error of the fitted and plug-in contrasts against the exact
    /// contrast, over the logged states, when the environment has one.
    pub contrast_mse: Option<ContrastErrors>,
    pub evaluations: Vec<EvalReport>,
}

/// FQE and Monte Carlo values of the SEAL policy and of `greedy(Q^)` on all data.
pub fn stage_evaluate(
    cfg: &Config,
    d: &Dataset,
    env: Option<&EnvBundle>,
    full_q: &TrainedQ,
    contrast: &ContrastModel,
) -> Result<PipelineReport> {
    let gamma = cfg.gamma()?;
    let a0 = contrast.baseline;
    let seal = seal_policy(contrast.clone());
    let greedy = greedy_policy(full_q.q.clone());
    let policies: [(&str, &dyn Policy); 2] = [("seal", &seal), ("baseline", &greedy)];
    let mut values = [PolicyValues::default(); 2];
    let mut evaluations = Vec::new();
    if cfg.eval.fqe {
        for (i, (name, pi)) in policies.iter().enumerate() {
            let out = fqe(
                d,
                *pi,
                cfg.eval.fqe_iterations,
                gamma,
                cfg.fqe_model(),
                derive_seed(cfg.seed, &[stage_seed::FQE, i as u64]),
            )?;
            let v = out.initial_value(*pi, d);
            if !v.is_finite() {
                return Err(Error::NonFinite("fqe value"));
            }
            values[i].fqe = Some(v);
            evaluations.push(EvalReport {
                policy: name.to_string(),
                method: Method::Fqe,
                value: v,
                se: 0.0,
                config: serde_json::json!({
                    "iterations": cfg.eval.fqe_iterations,
                    "model": cfg.fqe_model(),
                }),
            });
        }
    }
    if let (true, Some(env)) = (cfg.eval.mc, env) {
        let horizon = cfg
            .eval
            .mc_horizon
            .unwrap_or_else(|| mc_horizon(gamma, MC_TOLERANCE));
        for (i, (name, pi)) in policies.iter().enumerate() {
            // common random numbers across the two policies
            let est = value_of_policy_mc(
                &*env.env,
                *pi,
                cfg.eval.mc_episodes,
                horizon,
                gamma,
                derive_seed(cfg.seed, &[stage_seed::MC]),
            )?;
            values[i].mc = Some(est.mean);
            values[i].mc_se = Some(est.se);
            evaluations.push(EvalReport {
                policy: name.to_string(),
                method: Method::Mc,
                value: est.mean,
                se: est.se,
                config: serde_json::json!({
                    "episodes": est.episodes,
                    "horizon": est.horizon,
                }),
            });
        }
    }
    let contrast_mse = match env.and_then(|e| e.optimal_contrast(gamma, a0)) {
        Some(truth) => {
            let states: Vec<StateVec> = d
                .transitions()
                .iter()
                .map(|x| StateVec(x.state.to_vec()))
                .collect();
            let plug = PlugInContrast {
                q: full_q.q.clone(),
                baseline: a0,
            };
            Some(ContrastErrors {
                seal: contrast_mse(contrast, &*truth, ActionId(a0), &states, None)?,
                plug_in: contrast_mse(&plug, &*truth, ActionId(a0), &states, None)?,
            })
        }
        None => None,
    };
    Ok(PipelineReport {
        version: VERSION.to_string(),
        seed: cfg.seed,
        gamma: gamma.value(),
        baseline_action: a0,
        seal: values[0],
        baseline: values[1],
        contrast_mse,
        evaluations,
    })
}

/// Everything one pipeline run produces.
pub struct PipelineOutput {
    pub q: QStage,
    pub ratios: Vec<Option<TrainedRatio>>,
    pub table: PseudoTable,
    pub contrast: ContrastModel,
    pub report: PipelineReport,
}

/// Folds, Q estimates, ratios, pseudo outcomes, contrast regression and
/// evaluation, in memory. Failures carry the name of the stage.
pub fn run_pipeline(cfg: &Config, d: &Dataset, env: Option<&EnvBundle>) -> Result<PipelineOutput> {
    let q = stage_qlearn(cfg, d).map_err(|e| e.in_stage("train-q"))?;
    let ratios = stage_ratio(cfg, d, &q).map_err(|e| e.in_stage("ratio"))?;
    let table = stage_pseudo(cfg, d, &q, &ratios).map_err(|e| e.in_stage("pseudo"))?;
    let contrast = stage_advantage(cfg, &table).map_err(|e| e.in_stage("fit-advantage"))?;
    let report =
        stage_evaluate(cfg, d, env, &q.full_q, &contrast).map_err(|e| e.in_stage("evaluate"))?;
    Ok(PipelineOutput {
        q,
        ratios,
        table,
        contrast,
        report,
    })
}

/// Exact tables of a tabular MDP: `q_star[s][a]`, `tau[a][s]` against `a0`,
/// and the ratios of the optimal policy, `omega[a'][s'][a][s]` and
/// `state_ratio[s'][a][s]`.
pub fn oracle_tables(m: &TabularMdp, gamma: Discount, a0: usize) -> Result<serde_json::Value> {
    m.validate()?;
    if a0 >= m.num_actions {
        return Err(Error::config("--a0", format!("action {a0} out of range")));
    }
    let q = value_iteration(m, gamma, 1e-13);
    let pi = greedy_policy(q.clone());
    let omega = exact_density_ratio(m, &pi, gamma)?;
    let w = exact_state_ratio(m, &pi, gamma)?;
    Ok(serde_json::json!({
        "gamma": gamma.value(),
        "a0": a0,
        "q_star": q.q,
        "tau": exact_contrast(m, gamma, a0),
        "omega": omega.omega,
        "state_ratio": w,
    }))
}

pub fn cmd_oracle(mdp_path: &Path, gamma: f64, a0: usize) -> Result<String> {
    let gamma = Discount::new(gamma).map_err(|e| Error::config("--gamma", e.to_string()))?;
    let m = TabularMdp::from_json(&fs::read_to_string(mdp_path)?)?;
    Ok(serde_json::to_string_pretty(&oracle_tables(
        &m, gamma, a0,
    )?)?)
}

// ---- artifacts ----------------------------------------------------------

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: Config,
    /// File name to sha256 of its contents.
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

/// Collects output files for one command and writes its manifest.
struct Artifacts<'a> {
    dir: &'a Path,
    outputs: BTreeMap<String, String>,
}

impl<'a> Artifacts<'a> {
    fn new(dir: &'a Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts {
            dir,
            outputs: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn finish(self, command: &str, cfg: &Config, extra: serde_json::Value) -> Result<Manifest> {
        let manifest = Manifest {
            command: command.to_string(),
            version: VERSION.to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            outputs: self.outputs,
            extra,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join(format!("manifest.{command}.json")), text)?;
        Ok(manifest)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn data_path(cfg: &Config, out: &Path) -> PathBuf {
    cfg.data
        .path
        .clone()
        .unwrap_or_else(|| out.join("data.jsonl"))
}

fn load_data(cfg: &Config, out: &Path, env: Option<&EnvBundle>) -> Result<Dataset> {
    ingest_jsonl(data_path(cfg, out), env.map(|e| e.env.num_actions()))
}

fn optional_env(cfg: &Config) -> Result<Option<EnvBundle>> {
    cfg.env.as_ref().map(|_| cfg.build_env()).transpose()
}

fn dataset_bytes(d: &Dataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_jsonl(d, &mut buf)?;
    Ok(buf)
}

fn table_bytes(t: &PseudoTable) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    t.write_jsonl(&mut buf)?;
    Ok(buf)
}

pub fn cmd_generate(cfg: &Config, out: &Path) -> Result<Manifest> {
    let env = cfg.build_env()?;
    let d = generate_data(cfg, &env)?;
    let mut art = Artifacts::new(out)?;
    art.write("data.jsonl", &dataset_bytes(&d)?)?;
    let env_json = serde_json::to_vec(cfg.env()?)?;
    art.finish(
        "generate",
        cfg,
        serde_json::json!({
            "env_hash": sha256_hex(&env_json),
            "trajectories": cfg.data.trajectories,
            "horizon": cfg.data.horizon,
        }),
    )
}

pub fn cmd_train_q(cfg: &Config, out: &Path) -> Result<Manifest> {
    let env = optional_env(cfg)?;
    let d = load_data(cfg, out, env.as_ref())?;
    let q = stage_qlearn(cfg, &d)?;
    let mut art = Artifacts::new(out)?;
    write_q_stage(&mut art, &q)?;
    art.finish("train-q", cfg, serde_json::Value::Null)
}

fn write_q_stage(art: &mut Artifacts<'_>, q: &QStage) -> Result<()> {
    art.write_json("folds.json", &q.folds)?;
    for (l, fq) in q.fold_q.iter().enumerate() {
        art.write_json(&format!("q_fold_{l}.json"), fq)?;
    }
    art.write_json("q_full.json", &q.full_q)
}

fn read_q_stage(out: &Path) -> Result<QStage> {
    let folds: FoldAssignment = read_json(&out.join("folds.json"))?;
    let fold_q = (0..folds.num_folds)
        .map(|l| read_json(&out.join(format!("q_fold_{l}.json"))))
        .collect::<Result<_>>()?;
    Ok(QStage {
        folds,
        fold_q,
        full_q: read_json(&out.join("q_full.json"))?,
    })
}

fn read_ratios(out: &Path, num_folds: usize) -> Result<Vec<Option<TrainedRatio>>> {
    (0..num_folds)
        .map(|l| read_json(&out.join(format!("ratio_fold_{l}.json"))))
        .collect()
}

pub fn cmd_ratio(cfg: &Config, out: &Path) -> Result<Manifest> {
    let env = optional_env(cfg)?;
    let d = load_data(cfg, out, env.as_ref())?;
    let q = read_q_stage(out)?;
    let ratios = stage_ratio(cfg, &d, &q)?;
    let mut art = Artifacts::new(out)?;
    for (l, r) in ratios.iter().enumerate() {
        art.write_json(&format!("ratio_fold_{l}.json"), r)?;
    }
    art.finish("ratio", cfg, serde_json::Value::Null)
}

pub fn cmd_pseudo(cfg: &Config, out: &Path) -> Result<Manifest> {
    let env = optional_env(cfg)?;
    let d = load_data(cfg, out, env.as_ref())?;
    let q = read_q_stage(out)?;
    let ratios = read_ratios(out, q.folds.num_folds)?;
    let table = stage_pseudo(cfg, &d, &q, &ratios)?;
    let mut art = Artifacts::new(out)?;
    art.write("pseudo.jsonl", &table_bytes(&table)?)?;
    art.write_json("pseudo_table.json", &table)?;
    art.finish("pseudo", cfg, serde_json::Value::Null)
}

pub fn cmd_fit_advantage(cfg: &Config, out: &Path) -> Result<Manifest> {
    let table: PseudoTable = read_json(&out.join("pseudo_table.json"))?;
    let contrast = stage_advantage(cfg, &table)?;
    let mut art = Artifacts::new(out)?;
    art.write_json("contrast.json", &contrast)?;
    art.finish("fit-advantage", cfg, serde_json::Value::Null)
}

pub fn cmd_evaluate(cfg: &Config, out: &Path) -> Result<Manifest> {
    let env = optional_env(cfg)?;
    let d = load_data(cfg, out, env.as_ref())?;
    let full_q: TrainedQ = read_json(&out.join("q_full.json"))?;
    let contrast: ContrastModel = read_json(&out.join("contrast.json"))?;
    let report = stage_evaluate(cfg, &d, env.as_ref(), &full_q, &contrast)?;
    let mut art = Artifacts::new(out)?;
    art.write_json("report.json", &report)?;
    art.finish("evaluate", cfg, serde_json::Value::Null)
}

/// Generates data when no dataset path is configured, runs every stage and
/// writes all artifacts plus `report.json`.
pub fn cmd_pipeline(cfg: &Config, out: &Path) -> Result<(PipelineReport, Manifest)> {
    let env = optional_env(cfg)?;
    let mut art = Artifacts::new(out)?;
    let d = match &cfg.data.path {
        Some(p) => ingest_jsonl(p, env.as_ref().map(|e| e.env.num_actions()))?,
        None => {
            let env = env
                .as_ref()
                .ok_or_else(|| Error::config("env", "missing env block and no data.path"))?;
            let d = generate_data(cfg, env).map_err(|e| e.in_stage("generate"))?;
            art.write("data.jsonl", &dataset_bytes(&d)?)?;
            d
        }
    };
    let run = run_pipeline(cfg, &d, env.as_ref())?;
    write_q_stage(&mut art, &run.q)?;
    for (l, r) in run.ratios.iter().enumerate() {
        art.write_json(&format!("ratio_fold_{l}.json"), r)?;
    }
    art.write("pseudo.jsonl", &table_bytes(&run.table)?)?;
    art.write_json("pseudo_table.json", &run.table)?;
    art.write_json("contrast.json", &run.contrast)?;
    art.write_json("report.json", &run.report)?;
    let manifest = art.finish("pipeline", cfg, serde_json::Value::Null)?;
    Ok((run.report, manifest))
}

// ---- command line -------------------------------------------------------

/// Process exit code for an error: 2 config, 3 data, 4 numeric failure.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config { .. } | Error::InvalidDiscount(_) => 2,
        Error::NonFinite(_) => 4,
        _ => 3,
    }
}

#[derive(Debug, Parser)]
#[command(name = "seal", version = VERSION, about = "Doubly-robust advantage learning for offline RL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config with sections env/data/qlearn/ratio/pseudo/advantage/eval.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Caps the worker pool.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Roll out the configured environment into `data.jsonl`.
    Generate,
    /// Fit per-fold and full-data Q estimates.
    TrainQ,
    /// Fit per-fold density ratios.
    Ratio,
    /// Build cross-fitted pseudo outcomes.
    Pseudo,
    /// Regress pseudo outcomes on the state, per action.
    FitAdvantage,
    /// Value the SEAL and greedy-Q policies.
    Evaluate,
    /// All stages end to end.
    Pipeline,
    /// Print exact Q*, contrast and ratio tables of a tabular MDP.
    Oracle {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        a0: usize,
    },
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<()> {
    if let Command::Oracle { mdp, gamma, a0 } = &cli.command {
        println!("{}", cmd_oracle(mdp, *gamma, *a0)?);
        return Ok(());
    }
    let cfg = load_config(cli)?;
    let out = &cli.out;
    let manifest = match cli.command {
        Command::Generate => cmd_generate(&cfg, out)?,
        Command::TrainQ => cmd_train_q(&cfg, out)?,
        Command::Ratio => cmd_ratio(&cfg, out)?,
        Command::Pseudo => cmd_pseudo(&cfg, out)?,
        Command::FitAdvantage => cmd_fit_advantage(&cfg, out)?,
        Command::Evaluate => cmd_evaluate(&cfg, out)?,
        Command::Pipeline => cmd_pipeline(&cfg, out)?.1,
        Command::Oracle { .. } => unreachable!("handled above"),
    };
    for (name, hash) in &manifest.outputs {
        println!("{hash}  {}", out.join(name).display());
    }
    Ok(())
}

/// Entry point of the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return 2;
        }
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain2_config() -> Config {
        Config::from_json(
            r#"{
                "seed": 3,
                "env": {"kind": "tabular", "preset": "chain2"},
                "data": {"trajectories": 40, "horizon": 10, "gamma": 0.5},
                "qlearn": {"model": {"backend": "tabular"}, "iterations": 60},
                "ratio": {"steps": 30},
                "advantage": {"model": {"backend": "tabular"}},
                "eval": {"fqe_iterations": 60, "mc_episodes": 200}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn config_defaults_and_errors() {
        let cfg = Config::from_json("{}").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.data.folds, 2);
        assert_eq!(cfg.pseudo.clip_multiple, Some(3.0));
        let e = Config::from_json(r#"{"data": {"gamma": 1.0}}"#).unwrap_err();
        assert!(
            matches!(&e, Error::Config { key, .. } if key == "data.gamma"),
            "{e}"
        );
        let e = Config::from_json(r#"{"dtaa": {}}"#).unwrap_err();
        assert!(e.to_string().contains("dtaa"), "{e}");
        assert_eq!(exit_code(&e), 2);
        let e = cfg.build_env().err().unwrap();
        assert!(matches!(&e, Error::Config { key, .. } if key == "env"));
    }

    #[test]
    fn chain2_pipeline_recovers_optimal_value() {
        let cfg = chain2_config();
        let env = cfg.build_env().unwrap();
        let d = generate_data(&cfg, &env).unwrap();
        let run = run_pipeline(&cfg, &d, Some(&env)).unwrap();
        let r = &run.report;
        assert!((r.baseline.fqe.unwrap() - 2.0).abs() < 1e-6, "{r:?}");
        assert!((r.seal.fqe.unwrap() - 2.0).abs() < 1e-6, "{r:?}");
        assert!(r.contrast_mse.unwrap().plug_in < 1e-12);
        assert_eq!(run.table.len(), 40 * 10 * 2);
        for row in &run.table.rows {
            assert_eq!(row.tau_tilde[r.baseline_action], 0.0);
        }
    }

    #[test]
    fn stage_failures_name_the_stage() {
        let mut cfg = chain2_config();
        cfg.data.folds = 1000;
        let env = cfg.build_env().unwrap();
        let d = generate_data(&cfg, &env).unwrap();
        let e = run_pipeline(&cfg, &d, Some(&env)).err().unwrap();
        assert!(e.to_string().contains("train-q"), "{e}");
        assert_eq!(exit_code(&e), 3);
    }

    #[test]
    fn oracle_tables_for_chain2() {
        let v = oracle_tables(&TabularMdp::chain2(), Discount::new(0.5).unwrap(), 0).unwrap();
        for row in v["q_star"].as_array().unwrap() {
            let r: Vec<f64> = serde_json::from_value(row.clone()).unwrap();
            assert!((r[0] - 1.0).abs() < 1e-10 && (r[1] - 2.0).abs() < 1e-10);
        }
        let m = TabularMdp::chain2();
        let v = oracle_tables(&m, Discount::new(0.0).unwrap(), 0).unwrap();
        let q: Vec<Vec<f64>> = serde_json::from_value(v["q_star"].clone()).unwrap();
        assert_eq!(q, m.reward);
        let mut bad = TabularMdp::chain2();
        bad.transition[0][0] = vec![0.5, 0.4];
        assert!(oracle_tables(&bad, Discount::new(0.5).unwrap(), 0).is_err());
    }
}
