//! Configuration-driven pipelines.
//!
//! Every run writes into one output directory holding the fully resolved
//! config (`config.json`), a version stamp, and the stage outputs. The k-SAT
//! pipeline checkpoints each stage (instances, schedules, nets, samples,
//! metrics) so any stage can be rerun from what is already on disk.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::baselines::{pt_icm_run, walksat_enumerate, PtIcmConfig, WalkSatConfig};
use crate::exec::{derive_seed, Execution};
use crate::made::{MadeNetwork, TrainConfig, TrainReport};
use crate::mcmc::{run_chain, ChainOptions, ChainTrace, Init, MadeKernel, QeHyper, QeMcmcKernel, Update};
use crate::metrics::{
    aggregate, fairness, reports_to_csv, summaries_to_csv, superiority, Accounting, FairnessReport,
    GroundStateHistogram, InstanceReport, Steps,
};
use crate::qaoa::{
    effective_time, fixed_angles_from_set, optimize_free, optimize_linear, schedule_spread, FixedAngles,
    OptimizeOptions, OptimizedParams, OptimizedSchedule, QaoaObjective,
};
use crate::qsim::{run_annealing, AnnealSchedule, OutputDistribution, MAX_QUBITS};
use crate::sat::{build_instance_set, default_alpha_c, to_ising, InstanceSet};
use crate::{fixtures, Error, IsingModel, Result, SpinConfig, Temperature};

pub const CONFIG_FILE: &str = "config.json";
pub const STAMP_FILE: &str = "stamp.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SmallInstances,
    AnnealSweep,
    KsatFairness,
    KsatCounting,
}

/// Samplers and distributions compared on k-SAT instance sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Exact output distribution at the optimized linear schedule.
    Qaoa,
    /// Exact output distribution at the fixed angles.
    QaoaFixed,
    /// Exact distribution of the trained network.
    Made,
    QaoaNmc,
    QaoaHmc,
    PtIcm,
    Walksat,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Qaoa => "qaoa",
            Algorithm::QaoaFixed => "qaoa-fixed",
            Algorithm::Made => "made",
            Algorithm::QaoaNmc => "qaoa-nmc",
            Algorithm::QaoaHmc => "qaoa-hmc",
            Algorithm::PtIcm => "pt-icm",
            Algorithm::Walksat => "walksat",
        }
    }

    fn is_chain(self) -> bool {
        matches!(self, Algorithm::QaoaNmc | Algorithm::QaoaHmc)
    }

    fn is_baseline(self) -> bool {
        matches!(self, Algorithm::PtIcm | Algorithm::Walksat)
    }
}

/// Which QAOA angles generate the MADE training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AngleSource {
    #[default]
    Optimized,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmallConfig {
    pub instances: Vec<String>,
    pub anneal_time: f64,
    pub qaoa_depth: usize,
    pub qaoa_starts: usize,
    /// QAOA measurements for training and MCMC samples per method.
    pub samples: usize,
    pub qe: QeHyper,
    pub made: TrainConfig,
}

impl Default for SmallConfig {
    fn default() -> Self {
        Self {
            instances: fixtures::SMALL_INSTANCE_NAMES.iter().map(|s| s.to_string()).collect(),
            anneal_time: 1e3,
            qaoa_depth: 5,
            qaoa_starts: 10,
            samples: 1000,
            qe: QeHyper::default(),
            made: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealConfig {
    pub instance: String,
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
    pub qaoa_depth: usize,
    pub qaoa_starts: usize,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            instance: "sixfold".into(),
            t_min: 0.1,
            t_max: 1e3,
            points: 30,
            qaoa_depth: 5,
            qaoa_starts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KsatConfig {
    pub k: usize,
    pub sizes: Vec<usize>,
    pub per_size: usize,
    /// `None` resolves to the standard threshold for `k`.
    pub alpha_c: Option<f64>,
    /// Empty resolves to the default list for the experiment kind.
    pub algorithms: Vec<Algorithm>,
    pub qaoa_depth: usize,
    pub qaoa_starts: usize,
    pub training_angles: AngleSource,
    pub training_samples: usize,
    pub made: TrainConfig,
    /// MCMC steps per trial.
    pub steps: u64,
    pub trials: usize,
    pub pt: PtIcmConfig,
    /// `None` matches the pooled MCMC sample count `steps · trials`.
    pub pt_rounds: Option<u64>,
    pub walksat: WalkSatConfig,
    pub walksat_trials: usize,
    /// Also write every chain trace in binary form.
    pub keep_traces: bool,
}

impl Default for KsatConfig {
    fn default() -> Self {
        Self {
            k: 2,
            sizes: (8..=16).collect(),
            per_size: 100,
            alpha_c: None,
            algorithms: Vec::new(),
            qaoa_depth: 5,
            qaoa_starts: 10,
            training_angles: AngleSource::Optimized,
            training_samples: 1000,
            made: TrainConfig::default(),
            steps: 10_000,
            trials: 10,
            pt: PtIcmConfig::default(),
            pt_rounds: None,
            walksat: WalkSatConfig::default(),
            walksat_trials: 10,
            keep_traces: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub small: SmallConfig,
    #[serde(default)]
    pub anneal: AnnealConfig,
    #[serde(default)]
    pub ksat: KsatConfig,
}

fn default_beta() -> f64 {
    10.0
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            seed: 0,
            beta: default_beta(),
            out: None,
            small: SmallConfig::default(),
            anneal: AnnealConfig::default(),
            ksat: KsatConfig::default(),
        }
    }

    pub fn from_toml(src: &str) -> Result<Self> {
        toml::from_str(src).map_err(|e| config_err(e.to_string()))
    }

    pub fn from_json(src: &str) -> Result<Self> {
        serde_json::from_str(src).map_err(|e| config_err(e.to_string()))
    }

    /// Reads a `.toml` or `.json` file and returns the validated, resolved config.
    pub fn load(path: &Path) -> Result<Self> {
        let src = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let cfg = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&src)?,
            Some("toml") => Self::from_toml(&src)?,
            _ => return Err(config_err(format!("{}: expected a .toml or .json file", path.display()))),
        };
        cfg.resolved()
    }

    /// Fills defaults that depend on other fields, then validates.
    pub fn resolved(mut self) -> Result<Self> {
        let ks = &mut self.ksat;
        if ks.alpha_c.is_none() {
            ks.alpha_c = default_alpha_c(ks.k);
        }
        if ks.algorithms.is_empty() {
            ks.algorithms = match (self.kind, ks.k) {
                (ExperimentKind::KsatCounting, 2) => vec![Algorithm::QaoaNmc, Algorithm::QaoaHmc, Algorithm::PtIcm, Algorithm::Walksat],
                (ExperimentKind::KsatCounting, _) => vec![Algorithm::QaoaNmc, Algorithm::QaoaHmc, Algorithm::Walksat],
                (_, 2) => vec![
                    Algorithm::Qaoa,
                    Algorithm::QaoaFixed,
                    Algorithm::Made,
                    Algorithm::QaoaNmc,
                    Algorithm::QaoaHmc,
                    Algorithm::PtIcm,
                ],
                _ => vec![Algorithm::Qaoa, Algorithm::QaoaFixed, Algorithm::Made, Algorithm::QaoaNmc, Algorithm::QaoaHmc],
            };
        }
        ks.algorithms.sort();
        ks.algorithms.dedup();
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(config_err(format!("beta must be finite and non-negative, got {}", self.beta)));
        }
        match self.kind {
            ExperimentKind::SmallInstances => {
                let s = &self.small;
                if s.instances.is_empty() {
                    return Err(config_err("small.instances is empty"));
                }
                for name in &s.instances {
                    if fixtures::small_instance(name).is_none() {
                        return Err(config_err(format!(
                            "unknown fixture {name:?}; expected one of {:?}",
                            fixtures::SMALL_INSTANCE_NAMES
                        )));
                    }
                }
                if !(s.anneal_time.is_finite() && s.anneal_time > 0.0) || s.qaoa_depth == 0 || s.qaoa_starts == 0 || s.samples == 0 {
                    return Err(config_err("small: anneal_time, qaoa_depth, qaoa_starts and samples must be positive"));
                }
            }
            ExperimentKind::AnnealSweep => {
                let a = &self.anneal;
                if fixtures::small_instance(&a.instance).is_none() {
                    return Err(config_err(format!("unknown fixture {:?}", a.instance)));
                }
                if !(a.t_min > 0.0 && a.t_max > a.t_min && a.t_max.is_finite()) || a.points < 2 {
                    return Err(config_err("anneal: need 0 < t_min < t_max and at least two points"));
                }
                if a.qaoa_depth == 0 || a.qaoa_starts == 0 {
                    return Err(config_err("anneal: qaoa_depth and qaoa_starts must be positive"));
                }
            }
            ExperimentKind::KsatFairness | ExperimentKind::KsatCounting => {
                let k = &self.ksat;
                if !(2..=3).contains(&k.k) {
                    return Err(config_err(format!("ksat.k must be 2 or 3, got {}", k.k)));
                }
                if k.sizes.is_empty() || k.sizes.iter().any(|&n| n < k.k || n > MAX_QUBITS) {
                    return Err(config_err(format!("ksat.sizes must lie in [{}, {MAX_QUBITS}]", k.k)));
                }
                if k.sizes.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(config_err("ksat.sizes must be strictly ascending"));
                }
                if !k.alpha_c.is_some_and(|a| a.is_finite() && a > 0.0) {
                    return Err(config_err("ksat.alpha_c must be positive"));
                }
                if k.per_size == 0 || k.qaoa_depth == 0 || k.qaoa_starts == 0 || k.training_samples == 0 {
                    return Err(config_err("ksat: per_size, qaoa_depth, qaoa_starts and training_samples must be positive"));
                }
                if k.steps == 0 || k.trials == 0 || k.walksat_trials == 0 || k.pt_rounds == Some(0) {
                    return Err(config_err("ksat: steps, trials, walksat_trials and pt_rounds must be positive"));
                }
                if k.algorithms.contains(&Algorithm::PtIcm) && k.k != 2 {
                    return Err(config_err("pt-icm needs two-body models (k = 2)"));
                }
            }
        }
        Ok(())
    }
}

/// Where and how a run executes.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub out: PathBuf,
    pub exec: Execution,
    /// Recompute stages whose outputs already exist.
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub package: String,
    pub version: String,
    pub git_rev: String,
    pub seed: u64,
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path, stage: &'static str) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingStage {
            stage,
            path: path.to_path_buf(),
        });
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// Writes `config.json` and `stamp.json`, refusing to mix configs in one directory.
pub fn prepare_output(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let path = out.join(CONFIG_FILE);
    let mut stored = cfg.clone();
    stored.out = None;
    if path.exists() {
        let existing: ExperimentConfig = serde_json::from_str(&fs::read_to_string(&path)?)?;
        if existing != stored {
            return Err(config_err(format!(
                "{} was produced by a different config; use a fresh output directory",
                out.display()
            )));
        }
    } else {
        write_json(&path, &stored)?;
    }
    write_json(
        &out.join(STAMP_FILE),
        &Stamp {
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            git_rev: option_env!("FAIRSAMPLE_GIT_REV").unwrap_or("unknown").into(),
            seed: cfg.seed,
        },
    )
}

/// The resolved config stored in an existing run directory.
pub fn load_run_config(out: &Path) -> Result<ExperimentConfig> {
    let path = out.join(CONFIG_FILE);
    if !path.exists() {
        return Err(config_err(format!("{} has no {CONFIG_FILE}; pass --config", out.display())));
    }
    ExperimentConfig::from_json(&fs::read_to_string(path)?)?.resolved()
}

/// Runs the whole pipeline for the config's kind.
pub fn run(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<PathBuf> {
    match cfg.kind {
        ExperimentKind::SmallInstances => cmd_small_instances(cfg, ctx),
        ExperimentKind::AnnealSweep => cmd_anneal_sweep(cfg, ctx),
        ExperimentKind::KsatFairness | ExperimentKind::KsatCounting => cmd_ksat(cfg, ctx),
    }
}

// Stream tags keep per-stage seeds apart.
const SEED_QAOA: u64 = 2;
const SEED_MEASURE: u64 = 3;
const SEED_TRAIN: u64 = 4;
const SEED_CHAIN: u64 = 5;
const SEED_QE: u64 = 6;
const SEED_INSTANCES: u64 = 7;
const SEED_PT: u64 = 8;
const SEED_WALKSAT: u64 = 9;

fn seed_for(base: u64, stream: u64, instance: usize, sub: u64) -> u64 {
    derive_seed(derive_seed(derive_seed(base, stream), instance as u64), sub)
}

fn chain_histogram(trace: &ChainTrace, ground_states: &[SpinConfig]) -> Result<GroundStateHistogram> {
    GroundStateHistogram::from_trace(trace, ground_states)
}

// ---------------------------------------------------------------- small instances

/// Ground-state probabilities of one method on one fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub instance: String,
    pub method: String,
    pub ground_states: Vec<SpinConfig>,
    /// Renormalized over the ground manifold.
    pub probabilities: Vec<f64>,
    /// Unnormalized probabilities (exact methods) or raw frequencies (MCMC).
    pub raw: Vec<f64>,
    pub fairness: FairnessReport,
}

fn method_result(instance: &str, method: &str, hist: GroundStateHistogram, raw: Vec<f64>) -> MethodResult {
    MethodResult {
        instance: instance.into(),
        method: method.into(),
        probabilities: hist.frequencies(),
        fairness: fairness(&hist),
        ground_states: hist.ground_states,
        raw,
    }
}

fn exact_result(instance: &str, method: &str, dist: &OutputDistribution, gs: &[SpinConfig]) -> Result<MethodResult> {
    let hist = GroundStateHistogram::from_distribution(dist, gs)?;
    let raw = hist.ground_states.iter().map(|s| dist.prob(s)).collect();
    Ok(method_result(instance, method, hist, raw))
}

fn sampled_result(instance: &str, method: &str, trace: &ChainTrace, gs: &[SpinConfig]) -> Result<MethodResult> {
    let hist = chain_histogram(trace, gs)?;
    let total = trace.len() as f64;
    let raw = hist.counts.iter().map(|c| c / total).collect();
    Ok(method_result(instance, method, hist, raw))
}

/// QA, QAOA, Qe-MCMC and QAOA-NMC on each configured fixture.
pub fn small_instances(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<MethodResult>> {
    let s = &cfg.small;
    let t = Temperature::new(cfg.beta)?;
    let per_instance = exec.try_map_range(s.instances.len(), |idx| -> Result<Vec<MethodResult>> {
        let name = s.instances[idx].as_str();
        let model = fixtures::small_instance(name).ok_or_else(|| config_err(format!("missing fixture {name}")))??;
        let gs = model.ground_states_bruteforce()?.states;

        let qa = run_annealing(&model, &AnnealSchedule::linear(s.anneal_time))?.measure_distribution();

        let opt = optimize_free(
            &model,
            s.qaoa_depth,
            &OptimizeOptions {
                starts: s.qaoa_starts,
                seed: seed_for(cfg.seed, SEED_QAOA, idx, 0),
                exec: Execution::Sequential,
                ..Default::default()
            },
        )?;
        let qaoa = QaoaObjective::new(&model)?.distribution(&opt.best.params)?;

        let mut qe = Update::Kernel(Box::new(QeMcmcKernel::new(&model, s.qe)?));
        let qe_trace = run_chain(
            &model,
            t,
            &mut qe,
            &Init::Random,
            &ChainOptions::new(s.samples as u64, seed_for(cfg.seed, SEED_QE, idx, 0)),
        )?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(cfg.seed, SEED_MEASURE, idx, 0));
        let training = qaoa.sample(s.samples, &mut rng);
        let train_cfg = TrainConfig {
            rng_seed: seed_for(cfg.seed, SEED_TRAIN, idx, 0),
            ..s.made.clone()
        };
        let (net, _) = MadeNetwork::train(&training, &train_cfg)?;
        let mut nmc = Update::Kernel(Box::new(MadeKernel::new(&net)));
        let nmc_trace = run_chain(
            &model,
            t,
            &mut nmc,
            &Init::Random,
            &ChainOptions::new(s.samples as u64, seed_for(cfg.seed, SEED_CHAIN, idx, 0)),
        )?;

        Ok(vec![
            exact_result(name, "qa", &qa, &gs)?,
            exact_result(name, "qaoa", &qaoa, &gs)?,
            sampled_result(name, "qe-mcmc", &qe_trace, &gs)?,
            sampled_result(name, "qaoa-nmc", &nmc_trace, &gs)?,
        ])
    })?;
    Ok(per_instance.into_iter().flatten().collect())
}

fn fairness_row(prefix: &str, f: &FairnessReport) -> String {
    format!(
        "{prefix},{},{},{},{},{}\n",
        f.n_g,
        f.p_max_over_p_min.map(|v| v.to_string()).unwrap_or_default(),
        f.all_found,
        f.tvd_to_uniform,
        f.samples_used
    )
}

pub fn cmd_small_instances(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<PathBuf> {
    prepare_output(cfg, &ctx.out)?;
    let results = small_instances(cfg, ctx.exec)?;
    let mut probs = String::from("instance,method,ground_state,probability,raw_probability\n");
    let mut fair = String::from("instance,method,n_g,p_max_over_p_min,all_found,tvd_to_uniform,samples\n");
    for r in &results {
        for ((s, p), raw) in r.ground_states.iter().zip(&r.probabilities).zip(&r.raw) {
            probs.push_str(&format!("{},{},{},{p},{raw}\n", r.instance, r.method, s.bitstring()));
        }
        fair.push_str(&fairness_row(&format!("{},{}", r.instance, r.method), &r.fairness));
    }
    write_text(&ctx.out.join("probabilities.csv"), &probs)?;
    write_text(&ctx.out.join("fairness.csv"), &fair)?;
    Ok(ctx.out.clone())
}

// ---------------------------------------------------------------- annealing sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealPoint {
    pub anneal_time: f64,
    pub probabilities: Vec<f64>,
    pub fairness: FairnessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealSweep {
    pub instance: String,
    pub ground_states: Vec<SpinConfig>,
    pub points: Vec<AnnealPoint>,
    pub qaoa: OptimizedParams,
    /// `Σ(γ_l + β_l)` of the optimized circuit.
    pub t_qaoa: f64,
    /// Annealing run at exactly `t_qaoa`.
    pub at_t_qaoa: AnnealPoint,
}

/// `points` log-spaced values from `t_min` to `t_max`, endpoints exact.
pub fn log_grid(t_min: f64, t_max: f64, points: usize) -> Vec<f64> {
    let ratio = (t_max / t_min).ln();
    let mut g: Vec<f64> = (0..points)
        .map(|i| t_min * (ratio * i as f64 / (points - 1) as f64).exp())
        .collect();
    g[0] = t_min;
    g[points - 1] = t_max;
    g
}

fn anneal_point(model: &IsingModel, gs: &[SpinConfig], time: f64) -> Result<AnnealPoint> {
    let dist = run_annealing(model, &AnnealSchedule::linear(time))?.measure_distribution();
    let hist = GroundStateHistogram::from_distribution(&dist, gs)?;
    Ok(AnnealPoint {
        anneal_time: time,
        probabilities: hist.frequencies(),
        fairness: fairness(&hist),
    })
}

pub fn anneal_sweep(cfg: &ExperimentConfig, exec: Execution) -> Result<AnnealSweep> {
    let a = &cfg.anneal;
    let model = fixtures::small_instance(&a.instance).ok_or_else(|| config_err(format!("missing fixture {}", a.instance)))??;
    let gs = model.ground_states_bruteforce()?.states;
    let grid = log_grid(a.t_min, a.t_max, a.points);
    let points = exec.try_map_range(grid.len(), |i| anneal_point(&model, &gs, grid[i]))?;
    let qaoa = optimize_free(
        &model,
        a.qaoa_depth,
        &OptimizeOptions {
            starts: a.qaoa_starts,
            seed: seed_for(cfg.seed, SEED_QAOA, 0, 0),
            exec,
            ..Default::default()
        },
    )?
    .best;
    let t_qaoa = effective_time(&qaoa.params);
    let at_t_qaoa = anneal_point(&model, &gs, t_qaoa)?;
    Ok(AnnealSweep {
        instance: a.instance.clone(),
        ground_states: gs,
        points,
        qaoa,
        t_qaoa,
        at_t_qaoa,
    })
}

pub fn cmd_anneal_sweep(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<PathBuf> {
    prepare_output(cfg, &ctx.out)?;
    let sweep = anneal_sweep(cfg, ctx.exec)?;
    let mut probs = String::from("anneal_time,ground_state,probability\n");
    let mut ratios = String::from("anneal_time,n_g,p_max_over_p_min,all_found,tvd_to_uniform,samples\n");
    for p in &sweep.points {
        for (s, v) in sweep.ground_states.iter().zip(&p.probabilities) {
            probs.push_str(&format!("{},{},{v}\n", p.anneal_time, s.bitstring()));
        }
        ratios.push_str(&fairness_row(&p.anneal_time.to_string(), &p.fairness));
    }
    write_text(&ctx.out.join("anneal_probabilities.csv"), &probs)?;
    write_text(&ctx.out.join("anneal_fairness.csv"), &ratios)?;
    write_json(&ctx.out.join("t_qaoa.json"), &sweep)?;
    Ok(ctx.out.clone())
}

// ---------------------------------------------------------------- k-SAT pipeline

/// Checkpointed stages of the k-SAT pipeline, in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Instances,
    Schedules,
    Nets,
    Chains,
    Baselines,
    Metrics,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Instances,
        Stage::Schedules,
        Stage::Nets,
        Stage::Chains,
        Stage::Baselines,
        Stage::Metrics,
    ];

    /// CLI subcommand that produces this stage.
    pub fn command(self) -> &'static str {
        match self {
            Stage::Instances => "gen-instances",
            Stage::Schedules => "optimize-qaoa",
            Stage::Nets => "train-made",
            Stage::Chains => "run-chains",
            Stage::Baselines => "run-baselines",
            Stage::Metrics => "metrics",
        }
    }
}

const INSTANCES_DIR: &str = "instances";
const SCHEDULES_FILE: &str = "schedules/optimized.json";
const FIXED_FILE: &str = "schedules/fixed_angles.json";
const TRAINING_FILE: &str = "nets/training.json";

fn net_path(out: &Path, idx: usize) -> PathBuf {
    out.join("nets").join(format!("made_{idx:04}.json"))
}

fn samples_path(out: &Path, alg: Algorithm) -> PathBuf {
    out.join("samples").join(format!("{}.json", alg.name()))
}

/// Summary of one chain, PT run or enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub samples: u64,
    /// Visits per ground state, in ascending configuration order; empty for WalkSAT.
    pub counts: Vec<u64>,
    /// Transitions (flips for WalkSAT) until every ground state was seen.
    pub steps: Option<u64>,
    #[serde(default)]
    pub steps_coldest: Option<u64>,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceTrials {
    pub instance: usize,
    pub n: usize,
    pub trials: Vec<TrialSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedAnglesRecord {
    pub angles: FixedAngles,
    /// Interquartile range of each schedule component.
    pub spread: [f64; 4],
}

fn load_instances(out: &Path) -> Result<InstanceSet> {
    let dir = out.join(INSTANCES_DIR);
    if !dir.join("manifest.json").exists() {
        return Err(Error::MissingStage {
            stage: Stage::Instances.command(),
            path: dir.join("manifest.json"),
        });
    }
    InstanceSet::load(&dir)
}

fn models(set: &InstanceSet) -> Result<Vec<IsingModel>> {
    set.entries.iter().map(|e| to_ising(&e.formula)).collect()
}

fn trial_from_trace(trial: usize, seed: u64, trace: &ChainTrace, gs: &[SpinConfig]) -> Result<TrialSummary> {
    let hist = chain_histogram(trace, gs)?;
    Ok(TrialSummary {
        trial,
        seed,
        samples: trace.len() as u64,
        counts: hist.counts.iter().map(|&c| c as u64).collect(),
        steps: crate::metrics::steps_to_enumerate(trace, gs, Accounting::Transitions)?,
        steps_coldest: None,
        acceptance_rate: trace.acceptance_rate(),
    })
}

fn write_trace(out: &Path, alg: Algorithm, idx: usize, trial: usize, trace: &ChainTrace) -> Result<()> {
    let dir = out.join("traces");
    fs::create_dir_all(&dir)?;
    let f = fs::File::create(dir.join(format!("{}_{idx:04}_{trial:02}.trace", alg.name())))?;
    trace.write_binary(std::io::BufWriter::new(f))
}

fn stage_instances(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<()> {
    let k = &cfg.ksat;
    let set = build_instance_set(
        k.sizes.iter().copied(),
        k.k,
        k.per_size,
        k.alpha_c.expect("resolved"),
        derive_seed(cfg.seed, SEED_INSTANCES),
        ctx.exec,
    )?;
    set.save(&ctx.out.join(INSTANCES_DIR))?;
    let mut csv = String::from("k,n,instance,n_g,clauses,seed\n");
    for (i, e) in set.entries.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{i},{},{},{}\n",
            set.k,
            e.n_vars(),
            e.degeneracy(),
            e.formula.num_clauses(),
            e.seed
        ));
    }
    write_text(&ctx.out.join("instance_set.csv"), &csv)
}

fn stage_schedules(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<()> {
    let set = load_instances(&ctx.out)?;
    let models = models(&set)?;
    let k = &cfg.ksat;
    let schedules: Vec<OptimizedSchedule> = ctx.exec.try_map_range(models.len(), |i| {
        let run = optimize_linear(
            &models[i],
            k.qaoa_depth,
            &OptimizeOptions {
                starts: k.qaoa_starts,
                seed: seed_for(cfg.seed, SEED_QAOA, i, 0),
                exec: Execution::Sequential,
                ..Default::default()
            },
        )?;
        Ok::<_, Error>(run.best)
    })?;
    let lin: Vec<_> = schedules.iter().map(|s| s.schedule).collect();
    write_json(&ctx.out.join(SCHEDULES_FILE), &schedules)?;
    write_json(
        &ctx.out.join(FIXED_FILE),
        &FixedAnglesRecord {
            angles: fixed_angles_from_set(&lin)?,
            spread: schedule_spread(&lin),
        },
    )
}

fn load_schedules(out: &Path) -> Result<(Vec<OptimizedSchedule>, FixedAnglesRecord)> {
    Ok((
        read_json(&out.join(SCHEDULES_FILE), Stage::Schedules.command())?,
        read_json(&out.join(FIXED_FILE), Stage::Schedules.command())?,
    ))
}

fn qaoa_distribution(model: &IsingModel, sched: &crate::qaoa::LinearSchedule, p: usize) -> Result<OutputDistribution> {
    QaoaObjective::new(model)?.distribution(&sched.expand(p)?)
}

fn stage_nets(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<()> {
    let set = load_instances(&ctx.out)?;
    let (schedules, fixed) = load_schedules(&ctx.out)?;
    if schedules.len() != set.entries.len() {
        return Err(Error::Contract("schedule count does not match the instance set".into()));
    }
    let models = models(&set)?;
    let k = &cfg.ksat;
    fs::create_dir_all(ctx.out.join("nets"))?;
    let reports: Vec<TrainReport> = ctx.exec.try_map_range(models.len(), |i| {
        let sched = match k.training_angles {
            AngleSource::Optimized => schedules[i].schedule,
            AngleSource::Fixed => fixed.angles.0,
        };
        let dist = qaoa_distribution(&models[i], &sched, k.qaoa_depth)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(cfg.seed, SEED_MEASURE, i, 0));
        let samples = dist.sample(k.training_samples, &mut rng);
        let (net, report) = MadeNetwork::train(
            &samples,
            &TrainConfig {
                rng_seed: seed_for(cfg.seed, SEED_TRAIN, i, 0),
                ..k.made.clone()
            },
        )?;
        net.save(&net_path(&ctx.out, i))?;
        Ok::<_, Error>(report)
    })?;
    write_json(&ctx.out.join(TRAINING_FILE), &reports)
}

fn load_net(out: &Path, idx: usize) -> Result<MadeNetwork> {
    let path = net_path(out, idx);
    if !path.exists() {
        return Err(Error::MissingStage {
            stage: Stage::Nets.command(),
            path,
        });
    }
    MadeNetwork::load(&path)
}

fn group_trials(set: &InstanceSet, flat: Vec<TrialSummary>, per: usize) -> Vec<InstanceTrials> {
    let mut it = flat.into_iter();
    set.entries
        .iter()
        .enumerate()
        .map(|(i, e)| InstanceTrials {
            instance: i,
            n: e.n_vars(),
            trials: it.by_ref().take(per).collect(),
        })
        .collect()
}

fn stage_chains(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<()> {
    let set = load_instances(&ctx.out)?;
    let models = models(&set)?;
    let k = &cfg.ksat;
    let t = Temperature::new(cfg.beta)?;
    let nets: Vec<MadeNetwork> = (0..models.len()).map(|i| load_net(&ctx.out, i)).collect::<Result<_>>()?;
    for (code, alg) in k.algorithms.iter().copied().enumerate().filter(|(_, a)| a.is_chain()) {
        let flat = ctx.exec.try_map_range(models.len() * k.trials, |task| {
            let (i, trial) = (task / k.trials, task % k.trials);
            let seed = seed_for(cfg.seed, SEED_CHAIN, i, (code * 1000 + trial) as u64);
            let kernel = Box::new(MadeKernel::new(&nets[i]));
            let mut update = match alg {
                Algorithm::QaoaHmc => Update::Hybrid(kernel),
                _ => Update::Kernel(kernel),
            };
            let trace = run_chain(&models[i], t, &mut update, &Init::Random, &ChainOptions::new(k.steps, seed))?;
            if k.keep_traces {
                write_trace(&ctx.out, alg, i, trial, &trace)?;
            }
            trial_from_trace(trial, seed, &trace, &set.entries[i].solutions)
        })?;
        write_json(&samples_path(&ctx.out, alg), &group_trials(&set, flat, k.trials))?;
    }
    Ok(())
}

fn stage_baselines(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<()> {
    let set = load_instances(&ctx.out)?;
    let k = &cfg.ksat;
    if k.algorithms.contains(&Algorithm::PtIcm) {
        let models = models(&set)?;
        let rounds = k.pt_rounds.unwrap_or(k.steps * k.trials as u64);
        let flat = ctx.exec.try_map_range(models.len(), |i| {
            let seed = seed_for(cfg.seed, SEED_PT, i, 0);
            let pt_cfg = PtIcmConfig {
                rng_seed: seed,
                ..k.pt.clone()
            };
            let res = pt_icm_run(&models[i], &pt_cfg, rounds, Execution::Sequential)?;
            if k.keep_traces {
                write_trace(&ctx.out, Algorithm::PtIcm, i, 0, &res.trace)?;
            }
            let gs = &set.entries[i].solutions;
            let mut summary = trial_from_trace(0, seed, &res.trace, gs)?;
            summary.steps_coldest = crate::metrics::steps_to_enumerate(&res.trace, gs, Accounting::Steps)?
                .map(|rounds| rounds * res.stats.coldest_transitions_per_round);
            Ok::<_, Error>(summary)
        })?;
        write_json(&samples_path(&ctx.out, Algorithm::PtIcm), &group_trials(&set, flat, 1))?;
    }
    if k.algorithms.contains(&Algorithm::Walksat) {
        let per = k.walksat_trials;
        let flat = ctx.exec.try_map_range(set.entries.len() * per, |task| {
            let (i, trial) = (task / per, task % per);
            let seed = seed_for(cfg.seed, SEED_WALKSAT, i, trial as u64);
            let e = &set.entries[i];
            let res = walksat_enumerate(
                &e.formula,
                &WalkSatConfig {
                    rng_seed: seed,
                    ..k.walksat.clone()
                },
            )?;
            if res.complete {
                let mut found = res.solutions.clone();
                found.sort();
                if found != e.solutions {
                    return Err(Error::Contract(format!("instance {i}: WalkSAT enumeration disagrees with the exact enumerator")));
                }
            }
            Ok(TrialSummary {
                trial,
                seed,
                samples: res.solutions.len() as u64,
                counts: Vec::new(),
                steps: res.complete.then_some(res.flips_to_last_solution),
                steps_coldest: None,
                acceptance_rate: 1.0,
            })
        })?;
        write_json(&samples_path(&ctx.out, Algorithm::Walksat), &group_trials(&set, flat, per))?;
    }
    Ok(())
}

fn distribution_report(k: usize, alg: Algorithm, idx: usize, dist: &OutputDistribution, gs: &[SpinConfig]) -> Result<InstanceReport> {
    let f = fairness(&GroundStateHistogram::from_distribution(dist, gs)?);
    Ok(InstanceReport {
        k,
        n: dist.n_qubits(),
        algorithm: alg.name().into(),
        instance: idx,
        n_g: gs.len(),
        all_found: f.all_found,
        fairness: Some(f),
        steps: Steps::NotApplicable,
        steps_coldest: None,
    })
}

fn sampled_report(k: usize, alg: Algorithm, rec: &InstanceTrials, gs: &[SpinConfig]) -> Result<InstanceReport> {
    let steps = Steps::mean_of(&rec.trials.iter().map(|t| t.steps).collect::<Vec<_>>());
    let (fair, all_found) = if alg == Algorithm::Walksat {
        (None, steps != Steps::Incomplete)
    } else {
        let mut counts = vec![0.0; gs.len()];
        for t in &rec.trials {
            if t.counts.len() != gs.len() {
                return Err(Error::Contract(format!("instance {}: count vector length mismatch", rec.instance)));
            }
            for (c, x) in counts.iter_mut().zip(&t.counts) {
                *c += *x as f64;
            }
        }
        let hist = GroundStateHistogram {
            ground_states: gs.to_vec(),
            counts,
            samples_used: rec.trials.iter().map(|t| t.samples).sum(),
        };
        let f = fairness(&hist);
        let all = f.all_found;
        (Some(f), all)
    };
    let coldest: Vec<Option<u64>> = rec.trials.iter().map(|t| t.steps_coldest).collect();
    Ok(InstanceReport {
        k,
        n: rec.n,
        algorithm: alg.name().into(),
        instance: rec.instance,
        n_g: gs.len(),
        fairness: fair,
        all_found,
        steps,
        steps_coldest: if alg == Algorithm::PtIcm { Steps::mean_of(&coldest).value() } else { None },
    })
}

/// Per-instance reports for every configured algorithm, from stored stage outputs.
pub fn ksat_reports(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<InstanceReport>> {
    let set = load_instances(out)?;
    let k = &cfg.ksat;
    let mut reports = Vec::new();
    let needs_models = k.algorithms.iter().any(|a| matches!(a, Algorithm::Qaoa | Algorithm::QaoaFixed));
    let models = if needs_models { models(&set)? } else { Vec::new() };
    for &alg in &k.algorithms {
        match alg {
            Algorithm::Qaoa | Algorithm::QaoaFixed => {
                let (schedules, fixed) = load_schedules(out)?;
                for (i, e) in set.entries.iter().enumerate() {
                    let sched = if alg == Algorithm::Qaoa { schedules[i].schedule } else { fixed.angles.0 };
                    let dist = qaoa_distribution(&models[i], &sched, k.qaoa_depth)?;
                    reports.push(distribution_report(set.k, alg, i, &dist, &e.solutions)?);
                }
            }
            Algorithm::Made => {
                for (i, e) in set.entries.iter().enumerate() {
                    let net = load_net(out, i)?;
                    let dist = OutputDistribution::new(e.n_vars(), net.exhaustive_probs()?)?;
                    reports.push(distribution_report(set.k, alg, i, &dist, &e.solutions)?);
                }
            }
            _ => {
                let stage = if alg.is_baseline() { Stage::Baselines } else { Stage::Chains };
                let recs: Vec<InstanceTrials> = read_json(&samples_path(out, alg), stage.command())?;
                if recs.len() != set.entries.len() {
                    return Err(Error::Contract(format!("{}: instance count mismatch", alg.name())));
                }
                for rec in &recs {
                    reports.push(sampled_report(set.k, alg, rec, &set.entries[rec.instance].solutions)?);
                }
            }
        }
    }
    Ok(reports)
}

fn stage_metrics(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<()> {
    let reports = ksat_reports(cfg, &ctx.out)?;
    let summary = aggregate(&reports)?;
    let dir = ctx.out.join("metrics");
    write_text(&dir.join("reports.csv"), &reports_to_csv(&reports))?;
    write_json(&dir.join("reports.json"), &reports)?;
    write_text(&dir.join("summary.csv"), &summaries_to_csv(&summary))?;
    let algs = &cfg.ksat.algorithms;
    let mut sup = String::from("n,algorithm,opponent,wins,losses,ties\n");
    for &a in algs.iter().filter(|a| a.is_chain()) {
        for &b in algs.iter().filter(|b| b.is_baseline()) {
            for &n in &cfg.ksat.sizes {
                let at_n: Vec<InstanceReport> = reports.iter().filter(|r| r.n == n).cloned().collect();
                let s = superiority(&at_n, a.name(), b.name());
                sup.push_str(&format!("{n},{},{},{},{},{}\n", a.name(), b.name(), s.a_wins, s.b_wins, s.ties));
            }
        }
    }
    write_text(&dir.join("superiority.csv"), &sup)
}

fn stage_done(stage: Stage, cfg: &ExperimentConfig, out: &Path) -> bool {
    match stage {
        Stage::Instances => out.join(INSTANCES_DIR).join("manifest.json").exists(),
        Stage::Schedules => out.join(SCHEDULES_FILE).exists() && out.join(FIXED_FILE).exists(),
        Stage::Nets => out.join(TRAINING_FILE).exists(),
        Stage::Chains => cfg
            .ksat
            .algorithms
            .iter()
            .filter(|a| a.is_chain())
            .all(|&a| samples_path(out, a).exists()),
        Stage::Baselines => cfg
            .ksat
            .algorithms
            .iter()
            .filter(|a| a.is_baseline())
            .all(|&a| samples_path(out, a).exists()),
        Stage::Metrics => false,
    }
}

fn stage_needed(stage: Stage, cfg: &ExperimentConfig) -> bool {
    let algs = &cfg.ksat.algorithms;
    let any = |f: fn(&Algorithm) -> bool| algs.iter().any(f);
    match stage {
        Stage::Instances | Stage::Metrics => true,
        Stage::Schedules => any(|a| !a.is_baseline()),
        Stage::Nets => any(|a| matches!(a, Algorithm::Made) || a.is_chain()),
        Stage::Chains => any(|a| a.is_chain()),
        Stage::Baselines => any(|a| a.is_baseline()),
    }
}

/// Runs one stage, skipping it when its outputs exist unless `ctx.force` is set.
/// Returns whether the stage did any work.
pub fn run_stage(cfg: &ExperimentConfig, ctx: &RunContext, stage: Stage) -> Result<bool> {
    prepare_output(cfg, &ctx.out)?;
    if !ctx.force && stage_done(stage, cfg, &ctx.out) {
        return Ok(false);
    }
    match stage {
        Stage::Instances => stage_instances(cfg, ctx)?,
        Stage::Schedules => stage_schedules(cfg, ctx)?,
        Stage::Nets => stage_nets(cfg, ctx)?,
        Stage::Chains => stage_chains(cfg, ctx)?,
        Stage::Baselines => stage_baselines(cfg, ctx)?,
        Stage::Metrics => stage_metrics(cfg, ctx)?,
    }
    Ok(true)
}

pub fn cmd_ksat(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<PathBuf> {
    if !matches!(cfg.kind, ExperimentKind::KsatFairness | ExperimentKind::KsatCounting) {
        return Err(config_err("not a k-SAT experiment config"));
    }
    for stage in Stage::ALL {
        if stage_needed(stage, cfg) {
            run_stage(cfg, ctx, stage)?;
        }
    }
    Ok(ctx.out.clone())
}
