//! Experiment orchestration and report files.
//!
//! An [`ExperimentConfig`] names a world (a file or a generation block), the
//! detector, the trainer, the methods to compare and the seeds to repeat
//! over. [`run_experiment`] and [`sweep_lambda`] turn it into CSV reports in
//! `out_dir`. Every report carries the config hash, and re-running an
//! unchanged config rewrites identical bytes.
//!
//! Layout of a run directory:
//!
//! ```text
//! config.json            hash plus the fully defaulted config
//! metrics.csv            mean/std over seeds per method
//! runs.csv               one row per (method, seed)
//! missed.csv             per-class missed counts, averaged over seeds
//! history/seed_<s>.csv   training curves
//! checkpoints/seed_<s>/  periodic and final policy checkpoints
//! FAILED                 present only when the last run aborted
//! ```

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{
    policy_mask, select, BaselineContext, Budget, CountsPredictor, Method, SelectionMask,
};
use crate::detector::DetectorConfig;
use crate::downstream::{evaluate_pipeline, MetricsReport, PipelineOptions};
use crate::error::{Error, Result};
use crate::policy::{Checkpoint, PolicyParams};
use crate::rng::{keyed_rng, stream};
use crate::trainer::{train, Env, TrainConfig, TrainOutcome};
use crate::world::{generate_world, load_world, split_train_test, Cluster, GenConfig, Split, World};

pub const FAILED_MARKER: &str = "FAILED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    /// Load this world file; when absent, generate from `generate` and `seed`.
    pub path: Option<PathBuf>,
    pub seed: u64,
    pub generate: GenConfig,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            path: None,
            seed: 0,
            generate: GenConfig::desk(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetSpec {
    /// Per cluster, as many tiles as the trained policy touches.
    Matched,
    Fraction(f64),
    Tiles(usize),
}

impl BudgetSpec {
    pub fn label(&self) -> String {
        match self {
            BudgetSpec::Matched => "matched".into(),
            BudgetSpec::Fraction(f) => format!("fraction={f}"),
            BudgetSpec::Tiles(k) => format!("tiles={k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<BudgetSpec>,
}

impl MethodSpec {
    pub fn new(method: Method, budget: Option<BudgetSpec>) -> Self {
        MethodSpec { method, budget }
    }

    pub fn budget_label(&self) -> String {
        self.budget.map(|b| b.label()).unwrap_or_default()
    }

    fn needs_policy(&self) -> bool {
        self.method == Method::Ours || self.budget == Some(BudgetSpec::Matched)
    }

    fn validate(&self) -> Result<()> {
        let m = self.method;
        match (m.has_budget(), self.budget) {
            (true, None) => Err(Error::Config(format!("method {m} needs a budget"))),
            (false, Some(_)) => Err(Error::Config(format!("method {m} takes no budget"))),
            (_, Some(BudgetSpec::Fraction(f))) if !(f > 0.0 && f <= 1.0) => Err(Error::Config(
                format!("method {m}: fraction must lie in (0, 1], got {f}"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldSpec,
    pub detector: DetectorConfig,
    pub train: TrainConfig,
    /// Use this checkpoint for every seed instead of training.
    pub policy_checkpoint: Option<PathBuf>,
    pub methods: Vec<MethodSpec>,
    pub split: SplitSpec,
    /// Policy seeds; also key the random baselines.
    pub seeds: Vec<u64>,
    /// Values used by [`sweep_lambda`].
    pub lambdas: Vec<f64>,
    pub pipeline: PipelineOptions,
    /// Not part of the config hash.
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        use BudgetSpec::*;
        use Method::*;
        let methods = vec![
            MethodSpec::new(Ours, None),
            MethodSpec::new(NoDropping, None),
            MethodSpec::new(NoAcquisition, None),
            MethodSpec::new(Fixed, Some(Matched)),
            MethodSpec::new(Random, Some(Matched)),
            MethodSpec::new(Stochastic, Some(Matched)),
            MethodSpec::new(Green, Some(Matched)),
            MethodSpec::new(CountsPred, Some(Matched)),
            MethodSpec::new(Nightlights, None),
            MethodSpec::new(Settlement, Some(Matched)),
            MethodSpec::new(Fixed, Some(Fraction(0.18))),
            MethodSpec::new(Random, Some(Fraction(0.25))),
        ];
        ExperimentConfig {
            world: WorldSpec::default(),
            detector: DetectorConfig::default(),
            train: TrainConfig::desk(),
            policy_checkpoint: None,
            methods,
            split: SplitSpec::default(),
            seeds: vec![0, 1, 2],
            lambdas: vec![0.5, 1.0, 2.0],
            pipeline: PipelineOptions::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Checks everything that does not need the world itself.
    pub fn validate(&self) -> Result<()> {
        if self.world.path.is_none() {
            self.world.generate.validate()?;
            self.detector.validate(self.world.generate.classes)?;
        }
        self.train.validate()?;
        if self.methods.is_empty() {
            return Err(Error::Config("no methods configured".into()));
        }
        for m in &self.methods {
            m.validate()?;
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds configured".into()));
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(Error::Config("split.test_fraction must lie in (0, 1)".into()));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {l}")));
        }
        let p = &self.pipeline.gbdt;
        if p.n_trees == 0 || p.max_depth == 0 || p.min_leaf == 0 || !(p.shrinkage > 0.0) {
            return Err(Error::Config(
                "gbdt needs n_trees, max_depth, min_leaf >= 1 and shrinkage > 0".into(),
            ));
        }
        Ok(())
    }

    /// Key-sorted compact JSON with `out_dir` blanked.
    pub fn canonical_json(&self) -> Result<String> {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let value =
            serde_json::to_value(&c).map_err(|e| Error::Config(format!("config encode: {e}")))?;
        Ok(value.to_string())
    }

    /// Hex SHA-256 of [`ExperimentConfig::canonical_json`].
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.canonical_json()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    fn needs_policy(&self) -> bool {
        self.methods.iter().any(MethodSpec::needs_policy)
    }
}

/// Loads or generates the configured world.
pub fn resolve_world(spec: &WorldSpec) -> Result<World> {
    match &spec.path {
        Some(p) => load_world(p),
        None => generate_world(&spec.generate, spec.seed),
    }
}

/// World, detector table and split, checked against each other.
fn prepare(cfg: &ExperimentConfig) -> Result<(World, Split)> {
    let world = resolve_world(&cfg.world).map_err(|e| e.in_stage("world"))?;
    cfg.detector
        .validate(world.dims.classes)
        .map_err(|e| e.in_stage("detector"))?;
    let split = split_train_test(&world, cfg.split.test_fraction, cfg.split.seed)
        .map_err(|e| e.in_stage("split"))?;
    Ok((world, split))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<fs::File>>> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn finish_csv(mut w: csv::Writer<BufWriter<fs::File>>) -> Result<()> {
    w.flush().map_err(|e| Error::Csv(e.into()))
}

/// Clears any stale failure marker, runs `body`, and leaves a marker naming
/// the error if it fails.
fn guarded<T>(cfg: &ExperimentConfig, body: impl FnOnce(&str) -> Result<T>) -> Result<T> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    create_dir(&cfg.out_dir)?;
    let marker = cfg.out_dir.join(FAILED_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let echo = serde_json::json!({ "config_hash": hash, "config": cfg });
    let mut text = serde_json::to_string_pretty(&echo)
        .map_err(|e| Error::Config(format!("config encode: {e}")))?;
    text.push('\n');
    write_file(&cfg.out_dir.join("config.json"), &text)?;
    body(&hash).inspect_err(|e| {
        let note = format!("config_hash: {hash}\nerror: {e}\n");
        if let Err(w) = fs::write(&marker, note) {
            log::error!("could not write {}: {w}", marker.display());
        }
    })
}

/// Trains one policy and stores its history and checkpoints under `out_dir`.
pub fn train_and_save(
    env: &Env<'_>,
    train_ids: &[u32],
    cfg: &TrainConfig,
    config_hash: &str,
    out_dir: &Path,
    tag: &str,
) -> Result<TrainOutcome> {
    let outcome = train(env, train_ids, cfg)?;
    let hist_dir = out_dir.join("history");
    create_dir(&hist_dir)?;
    let hist_path = hist_dir.join(format!("{tag}.csv"));
    let f = fs::File::create(&hist_path).map_err(|e| Error::io(&hist_path, e))?;
    outcome.history.write_csv_tagged(BufWriter::new(f), config_hash)?;

    let ck_dir = out_dir.join("checkpoints").join(tag);
    create_dir(&ck_dir)?;
    let save = |params: &PolicyParams, alpha: f64, epoch: usize, name: String| {
        let mut ck = Checkpoint::new(params, alpha, epoch, cfg.seed);
        ck.config_hash = Some(config_hash.to_string());
        ck.save(&ck_dir.join(name))
    };
    for (epoch, alpha, params) in &outcome.checkpoints {
        save(params, *alpha, *epoch, format!("epoch_{epoch}.json"))?;
    }
    let last_alpha = outcome.history.records.last().map_or(cfg.alpha_end, |r| r.alpha);
    save(&outcome.params, last_alpha, cfg.epochs, "final.json".into())?;
    Ok(outcome)
}

/// Trains a single policy on the configured world with `cfg.train` as given.
/// Outputs land in `history/seed_<s>.csv` and `checkpoints/seed_<s>/`.
pub fn train_policy(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    guarded(cfg, |hash| {
        let (world, split) = prepare(cfg)?;
        let env = Env::new(&world, &cfg.detector).map_err(|e| e.in_stage("detector"))?;
        let tag = format!("seed_{}", cfg.train.seed);
        train_and_save(&env, &split.train, &cfg.train, hash, &cfg.out_dir, &tag)
            .map_err(|e| e.in_stage("train"))
    })
}

/// Tiles per cluster the policy touches, as a budget for the matched baselines.
fn matched_tiles(cluster: &Cluster, params: &PolicyParams) -> Result<usize> {
    let mask = policy_mask(cluster, params)?;
    let s = mask.subtiles().max(1);
    Ok(((mask.acquired() as f64 / s as f64) - 1e-9).ceil().max(0.0) as usize)
}

struct MethodInputs<'a> {
    policy: Option<&'a PolicyParams>,
    predictor: Option<&'a CountsPredictor>,
}

fn method_mask(
    spec: &MethodSpec,
    cluster: &Cluster,
    seed: u64,
    inputs: &MethodInputs<'_>,
) -> Result<SelectionMask> {
    let budget = match spec.budget {
        None => None,
        Some(BudgetSpec::Fraction(f)) => Some(Budget::Fraction(f)),
        Some(BudgetSpec::Tiles(k)) => Some(Budget::Tiles(k)),
        Some(BudgetSpec::Matched) => {
            let params = inputs
                .policy
                .ok_or_else(|| Error::Config("matched budget needs a policy".into()))?;
            Some(Budget::Tiles(matched_tiles(cluster, params)?))
        }
    };
    let ctx = BaselineContext {
        predictor: inputs.predictor,
        policy: inputs.policy,
    };
    let method_idx = Method::ALL.iter().position(|m| *m == spec.method).unwrap_or(0) as u64;
    let mut rng = keyed_rng(&[seed, stream::BASELINE, method_idx, cluster.id as u64]);
    select(spec.method, cluster, budget, &ctx, &mut rng)
}

fn evaluate_method(
    env: &Env<'_>,
    split: &Split,
    opts: &PipelineOptions,
    spec: &MethodSpec,
    seed: u64,
    inputs: &MethodInputs<'_>,
) -> Result<MetricsReport> {
    evaluate_pipeline(&env.world.clusters, &env.detections, split, opts, |c| {
        method_mask(spec, c, seed, inputs)
    })
}

/// One evaluated (method, seed) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub method: Method,
    pub budget: String,
    pub lambda: f64,
    pub seed: u64,
    pub report: MetricsReport,
}

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: Method,
    pub budget: String,
    pub lambda: f64,
    pub seeds: usize,
    pub r2: Stat,
    /// False if any seed produced constant predictions.
    pub r2_defined: bool,
    pub mse: Stat,
    pub explained_variance: Stat,
    pub acquisition_fraction: Stat,
    pub mean_l1_gap: Stat,
    pub missed_per_class: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub runs: Vec<RunRow>,
    pub summary: Vec<SummaryRow>,
    /// Training curves per seed, empty when no policy was trained.
    pub histories: Vec<(u64, crate::trainer::TrainHistory)>,
}

impl ExperimentReport {
    pub fn summary_for(&self, method: Method, budget: &str) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.method == method && r.budget == budget)
    }

    pub fn run_for(&self, method: Method, budget: &str, seed: u64) -> Option<&RunRow> {
        self.runs
            .iter()
            .find(|r| r.method == method && r.budget == budget && r.seed == seed)
    }
}

fn summarize(runs: &[RunRow]) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    let mut i = 0;
    while i < runs.len() {
        let j = (i..runs.len())
            .find(|&j| runs[j].method != runs[i].method || runs[j].budget != runs[i].budget)
            .unwrap_or(runs.len());
        let group = &runs[i..j];
        let col = |f: fn(&MetricsReport) -> f64| {
            Stat::of(&group.iter().map(|r| f(&r.report)).collect::<Vec<_>>())
        };
        let classes = group[0].report.missed_per_class.len();
        let missed = (0..classes)
            .map(|c| group.iter().map(|r| r.report.missed_per_class[c]).sum::<f64>() / group.len() as f64)
            .collect();
        out.push(SummaryRow {
            method: group[0].method,
            budget: group[0].budget.clone(),
            lambda: group[0].lambda,
            seeds: group.len(),
            r2: col(|m| m.r2),
            r2_defined: group.iter().all(|r| r.report.r2_defined),
            mse: col(|m| m.mse),
            explained_variance: col(|m| m.explained_variance),
            acquisition_fraction: col(|m| m.acquisition_fraction),
            mean_l1_gap: col(|m| m.mean_l1_gap),
            missed_per_class: missed,
        });
        i = j;
    }
    out
}

fn write_reports(dir: &Path, hash: &str, runs: &[RunRow], summary: &[SummaryRow]) -> Result<()> {
    let mut w = csv_writer(&dir.join("metrics.csv"))?;
    w.write_record([
        "config_hash",
        "method",
        "budget",
        "lambda",
        "seeds",
        "r2_mean",
        "r2_std",
        "r2_defined",
        "mse_mean",
        "mse_std",
        "explained_variance_mean",
        "explained_variance_std",
        "acquisition_fraction_mean",
        "acquisition_fraction_std",
        "mean_l1_gap_mean",
        "mean_l1_gap_std",
    ])?;
    for r in summary {
        w.write_record([
            hash.to_string(),
            r.method.to_string(),
            r.budget.clone(),
            r.lambda.to_string(),
            r.seeds.to_string(),
            r.r2.mean.to_string(),
            r.r2.std.to_string(),
            r.r2_defined.to_string(),
            r.mse.mean.to_string(),
            r.mse.std.to_string(),
            r.explained_variance.mean.to_string(),
            r.explained_variance.std.to_string(),
            r.acquisition_fraction.mean.to_string(),
            r.acquisition_fraction.std.to_string(),
            r.mean_l1_gap.mean.to_string(),
            r.mean_l1_gap.std.to_string(),
        ])?;
    }
    finish_csv(w)?;

    let mut w = csv_writer(&dir.join("runs.csv"))?;
    w.write_record([
        "config_hash",
        "method",
        "budget",
        "lambda",
        "seed",
        "r2",
        "r2_defined",
        "mse",
        "explained_variance",
        "acquisition_fraction",
        "mean_l1_gap",
    ])?;
    for r in runs {
        let m = &r.report;
        w.write_record([
            hash.to_string(),
            r.method.to_string(),
            r.budget.clone(),
            r.lambda.to_string(),
            r.seed.to_string(),
            m.r2.to_string(),
            m.r2_defined.to_string(),
            m.mse.to_string(),
            m.explained_variance.to_string(),
            m.acquisition_fraction.to_string(),
            m.mean_l1_gap.to_string(),
        ])?;
    }
    finish_csv(w)?;

    let mut w = csv_writer(&dir.join("missed.csv"))?;
    w.write_record(["config_hash", "method", "budget", "class", "missed_mean"])?;
    for r in summary {
        for (c, v) in r.missed_per_class.iter().enumerate() {
            w.write_record([
                hash.to_string(),
                r.method.to_string(),
                r.budget.clone(),
                c.to_string(),
                v.to_string(),
            ])?;
        }
    }
    finish_csv(w)
}

/// Trains (or loads) one policy per seed, evaluates every configured method
/// and writes the reports.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    guarded(cfg, |hash| {
        let (world, split) = prepare(cfg)?;
        let env = Env::new(&world, &cfg.detector).map_err(|e| e.in_stage("detector"))?;
        let fixed_policy = match &cfg.policy_checkpoint {
            Some(p) => Some(
                Checkpoint::load(p)
                    .and_then(|ck| ck.params())
                    .map_err(|e| e.in_stage("policy"))?,
            ),
            None => None,
        };
        let predictor = if cfg.methods.iter().any(|m| m.method == Method::CountsPred) {
            Some(
                CountsPredictor::fit(&world, &env.detections, &split.train)
                    .map_err(|e| e.in_stage("counts predictor"))?,
            )
        } else {
            None
        };

        let mut runs = Vec::new();
        let mut histories = Vec::new();
        for &seed in &cfg.seeds {
            let trained;
            let policy = match (&fixed_policy, cfg.needs_policy()) {
                (Some(p), _) => Some(p),
                (None, true) => {
                    let tc = TrainConfig {
                        seed,
                        ..cfg.train.clone()
                    };
                    let tag = format!("seed_{seed}");
                    trained = train_and_save(&env, &split.train, &tc, hash, &cfg.out_dir, &tag)
                        .map_err(|e| e.in_stage(format!("train (seed {seed})")))?;
                    histories.push((seed, trained.history.clone()));
                    Some(&trained.params)
                }
                (None, false) => None,
            };
            let inputs = MethodInputs {
                policy,
                predictor: predictor.as_ref(),
            };
            let reports = cfg
                .methods
                .par_iter()
                .map(|spec| {
                    evaluate_method(&env, &split, &cfg.pipeline, spec, seed, &inputs).map_err(|e| {
                        e.in_stage(format!("evaluate {} {} (seed {seed})", spec.method, spec.budget_label()))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            for (spec, report) in cfg.methods.iter().zip(reports) {
                runs.push(RunRow {
                    method: spec.method,
                    budget: spec.budget_label(),
                    lambda: cfg.train.lambda,
                    seed,
                    report,
                });
            }
        }
        runs.sort_by(|a, b| {
            (a.method, &a.budget)
                .cmp(&(b.method, &b.budget))
                .then(a.seed.cmp(&b.seed))
        });
        runs.dedup_by(|a, b| a.method == b.method && a.budget == b.budget && a.seed == b.seed);
        let summary = summarize(&runs);
        write_reports(&cfg.out_dir, hash, &runs, &summary).map_err(|e| e.in_stage("report"))?;
        Ok(ExperimentReport {
            config_hash: hash.to_string(),
            runs,
            summary,
            histories,
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub lambda: f64,
    pub acquisition_fraction: f64,
    pub r2: f64,
    pub mse: f64,
    pub explained_variance: f64,
    pub seed: u64,
}

/// One row per (λ, seed), sorted by λ then seed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TradeoffTable {
    pub config_hash: String,
    pub rows: Vec<TradeoffRow>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per distinct λ: `(lambda, median fraction, median r², runs)`.
pub type TradeoffPoint = (f64, f64, f64, usize);

impl TradeoffTable {
    pub fn summary(&self) -> Vec<TradeoffPoint> {
        let mut out: Vec<TradeoffPoint> = Vec::new();
        let mut i = 0;
        while i < self.rows.len() {
            let lambda = self.rows[i].lambda;
            let j = (i..self.rows.len())
                .find(|&j| self.rows[j].lambda != lambda)
                .unwrap_or(self.rows.len());
            let group = &self.rows[i..j];
            let mut frac: Vec<f64> = group.iter().map(|r| r.acquisition_fraction).collect();
            let mut r2: Vec<f64> = group.iter().map(|r| r.r2).collect();
            out.push((lambda, median(&mut frac), median(&mut r2), group.len()));
            i = j;
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record([
            "config_hash",
            "lambda",
            "seed",
            "acquisition_fraction",
            "r2",
            "mse",
            "explained_variance",
        ])?;
        for r in &self.rows {
            w.write_record([
                self.config_hash.clone(),
                r.lambda.to_string(),
                r.seed.to_string(),
                r.acquisition_fraction.to_string(),
                r.r2.to_string(),
                r.mse.to_string(),
                r.explained_variance.to_string(),
            ])?;
        }
        finish_csv(w)
    }

    /// Medians per λ, ready to plot r² against acquisition fraction.
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record([
            "config_hash",
            "lambda",
            "runs",
            "median_acquisition_fraction",
            "median_r2",
        ])?;
        for (lambda, frac, r2, n) in self.summary() {
            w.write_record([
                self.config_hash.clone(),
                lambda.to_string(),
                n.to_string(),
                frac.to_string(),
                r2.to_string(),
            ])?;
        }
        finish_csv(w)
    }
}

/// Trains one policy per (λ, seed) and scores it on the test split.
/// Writes `tradeoff.csv` and `tradeoff_summary.csv` to `cfg.out_dir`.
pub fn sweep_lambda(cfg: &ExperimentConfig, lambdas: &[f64]) -> Result<TradeoffTable> {
    if lambdas.len() < 2 {
        return Err(Error::Config("a lambda sweep needs at least two values".into()));
    }
    if let Some(l) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {l}")));
    }
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cfg = ExperimentConfig {
        lambdas: sorted.clone(),
        methods: vec![MethodSpec::new(Method::Ours, None)],
        policy_checkpoint: None,
        ..cfg.clone()
    };
    guarded(&cfg, |hash| {
        let (world, split) = prepare(&cfg)?;
        let env = Env::new(&world, &cfg.detector).map_err(|e| e.in_stage("detector"))?;
        let jobs: Vec<(f64, u64)> = sorted
            .iter()
            .flat_map(|&l| cfg.seeds.iter().map(move |&s| (l, s)))
            .collect();
        let rows = jobs
            .par_iter()
            .map(|&(lambda, seed)| {
                let stage = format!("sweep (lambda {lambda}, seed {seed})");
                let tc = TrainConfig {
                    seed,
                    lambda,
                    ..cfg.train.clone()
                };
                let outcome = train(&env, &split.train, &tc).map_err(|e| e.in_stage(stage.clone()))?;
                let inputs = MethodInputs {
                    policy: Some(&outcome.params),
                    predictor: None,
                };
                let m = evaluate_method(&env, &split, &cfg.pipeline, &cfg.methods[0], seed, &inputs)
                    .map_err(|e| e.in_stage(stage))?;
                Ok(TradeoffRow {
                    lambda,
                    acquisition_fraction: m.acquisition_fraction,
                    r2: m.r2,
                    mse: m.mse,
                    explained_variance: m.explained_variance,
                    seed,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let table = TradeoffTable {
            config_hash: hash.to_string(),
            rows,
        };
        table
            .write_csv(&cfg.out_dir.join("tradeoff.csv"))
            .and_then(|_| table.write_summary_csv(&cfg.out_dir.join("tradeoff_summary.csv")))
            .map_err(|e| e.in_stage("report"))?;
        Ok(table)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostReport {
    pub full_cost: f64,
    pub adaptive_cost: f64,
    pub savings: f64,
}

/// Imagery cost of covering `area_km2` fully versus at `acquisition_fraction`.
pub fn cost_report(area_km2: f64, price_per_km2: f64, acquisition_fraction: f64) -> Result<CostReport> {
    let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
    if !finite_nonneg(area_km2) || !finite_nonneg(price_per_km2) {
        return Err(Error::Config("area and price must be finite and >= 0".into()));
    }
    if !(0.0..=1.0).contains(&acquisition_fraction) {
        return Err(Error::Config(format!(
            "acquisition fraction must lie in [0, 1], got {acquisition_fraction}"
        )));
    }
    let full_cost = area_km2 * price_per_km2;
    let adaptive_cost = full_cost * acquisition_fraction;
    Ok(CostReport {
        full_cost,
        adaptive_cost,
        savings: full_cost - adaptive_cost,
    })
}
