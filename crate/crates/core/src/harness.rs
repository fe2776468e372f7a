//! Experiment runner: step-size selection, training loops and learning-curve
//! output.
//!
//! A run directory holds `config.json` (the resolved configuration),
//! `metrics.csv` (one row per epoch, epoch 0 being the initial weights),
//! `grid.csv` (validation curves of the step-size search, when one ran) and
//! `summary.csv` (final-epoch values).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{load_mnist_dir, make_synthetic, read_metrics, split_validation, write_metrics, Dataset, MetricRecord, SyntheticSpec};
use crate::error::{Error, Result};
use crate::graph::{compute_levels, NetworkGraph, WeightVector};
use crate::init::{DropoutMask, InitSpec};
use crate::netfwd::{evaluate_with, loss_and_grad_with, Engine, HiddenMode, LossReport};
use crate::optim::{OptimizerKind, OptimizerState};

/// Largest admissible step-size exponent; the step size is `10^-α`.
pub const MAX_ALPHA: u32 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    /// IDX files in `dir`; `train_limit` keeps the first rows only.
    Mnist {
        dir: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
    },
    /// `train` + `test` rows from one teacher.
    Synthetic {
        teacher: SyntheticSpec,
        train: usize,
        test: usize,
        seed: u64,
    },
}

impl DatasetSpec {
    /// Training set and, when available, a test set.
    pub fn load(&self) -> Result<(Dataset, Option<Dataset>)> {
        match self {
            DatasetSpec::Mnist { dir, train_limit } => {
                let (train, test) = load_mnist_dir(dir)?;
                let train = match train_limit {
                    Some(n) => train.truncate(*n),
                    None => train,
                };
                Ok((train, test))
            }
            DatasetSpec::Synthetic {
                teacher,
                train,
                test,
                seed,
            } => {
                let all = make_synthetic(teacher, train + test, *seed)?;
                let train_rows: Vec<usize> = (0..*train).collect();
                let test_rows: Vec<usize> = (*train..train + test).collect();
                let test_set = (*test > 0).then(|| all.subset(&test_rows, format!("synthetic-{seed}-test")));
                Ok((all.subset(&train_rows, format!("synthetic-{seed}-train")), test_set))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    /// Per-epoch minibatch order.
    #[serde(default)]
    pub shuffle: u64,
    /// Dropout masks.
    #[serde(default)]
    pub dropout: u64,
    /// Train/validation split used by the step-size search.
    #[serde(default)]
    pub split: u64,
}

/// Budget of the step-size search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationSpec {
    /// Rows held out of the training set while searching.
    pub holdout: usize,
    /// Epochs per candidate.
    pub epochs: usize,
}

impl Default for ValidationSpec {
    fn default() -> Self {
        ValidationSpec {
            holdout: 2000,
            epochs: 5,
        }
    }
}

fn default_p() -> f64 {
    2.0
}

fn default_batch_size() -> usize {
    100
}

fn default_true() -> bool {
    true
}

fn default_grid() -> Vec<u32> {
    (0..=MAX_ALPHA).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Layer sizes of a fully connected layered network.
    pub architecture: Vec<usize>,
    pub dataset: DatasetSpec,
    pub optimizer: OptimizerKind,
    /// Fixed step-size exponent. When absent, `alpha_grid` is searched.
    #[serde(default)]
    pub alpha: Option<u32>,
    #[serde(default = "default_grid")]
    pub alpha_grid: Vec<u32>,
    #[serde(default = "default_p")]
    pub p: f64,
    pub init: InitSpec,
    /// Retain probability of hidden units; absent means no dropout.
    #[serde(default)]
    pub dropout: Option<f64>,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub validation: ValidationSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Write elapsed seconds into `wall_s`; when false the column is zero
    /// and the CSV depends only on the configuration.
    #[serde(default = "default_true")]
    pub record_wall_time: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.architecture.len() < 2 || self.architecture.contains(&0) {
            return Err(Error::Config(format!(
                "architecture needs at least two nonzero layers, got {:?}",
                self.architecture
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if let Some(a) = self.alpha {
            check_alpha(a)?;
        } else {
            if self.alpha_grid.is_empty() {
                return Err(Error::Config("alpha grid is empty and no alpha is fixed".into()));
            }
            for &a in &self.alpha_grid {
                check_alpha(a)?;
            }
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::Config(format!("p must be finite and >= 1, got {}", self.p)));
        }
        if let Some(r) = self.dropout {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Config(format!("retain probability must be in (0, 1], got {r}")));
            }
        }
        Ok(())
    }

    pub fn network(&self) -> Result<NetworkGraph> {
        NetworkGraph::layered(&self.architecture)
    }

    fn settings(&self, step_size: f64, epochs: usize) -> TrainSettings {
        TrainSettings {
            optimizer: self.optimizer,
            step_size,
            p: self.p,
            dropout: self.dropout,
            epochs,
            batch_size: self.batch_size,
            shuffle_seed: self.seeds.shuffle,
            dropout_seed: self.seeds.dropout,
            record_wall_time: self.record_wall_time,
        }
    }
}

fn check_alpha(a: u32) -> Result<()> {
    if a > MAX_ALPHA {
        return Err(Error::Config(format!("alpha must be in 0..={MAX_ALPHA}, got {a}")));
    }
    Ok(())
}

pub fn step_size(alpha: u32) -> f64 {
    10f64.powi(-(alpha as i32))
}

/// Everything the inner training loop needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub optimizer: OptimizerKind,
    pub step_size: f64,
    pub p: f64,
    pub dropout: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub dropout_seed: u64,
    pub record_wall_time: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub records: Vec<MetricRecord>,
    pub weights: WeightVector,
    /// Epoch during which a non-finite quantity appeared.
    pub diverged_at: Option<usize>,
    /// Seconds spent in gradient and update steps per epoch, excluding
    /// evaluation.
    pub epoch_train_seconds: Vec<f64>,
    /// Path-SGD steps whose γ fell below the clamp, summed over edges.
    pub clamped_edges: u64,
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::Numeric { .. })
}

fn eval_metrics(g: &NetworkGraph, w: &WeightVector, data: &Dataset, mode: HiddenMode<'_>) -> Result<Option<LossReport>> {
    match evaluate_with(g, w, data, mode) {
        Ok(r) => Ok(Some(r)),
        Err(e) if is_divergence(&e) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Trains `w0` on `train` for `settings.epochs` epochs and records one
/// metric row per epoch. Minibatch order depends only on `shuffle_seed`, so
/// runs that differ in optimizer or initialization see the same batches.
/// A non-finite loss, gradient or update ends the run with an `inf` row.
pub fn train(
    g: &NetworkGraph,
    w0: &WeightVector,
    settings: &TrainSettings,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
) -> Result<TrainResult> {
    g.check_weights(w0)?;
    if train_set.is_empty() {
        return Err(Error::Input(format!("training set `{}` is empty", train_set.name())));
    }
    if settings.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let levels = compute_levels(g);
    let mut state = OptimizerState::new(settings.optimizer, settings.step_size, g.num_edges())?.with_p(settings.p)?;
    let eval_mode = match settings.dropout {
        Some(r) => HiddenMode::Inference { retain_prob: r },
        None => HiddenMode::Plain,
    };
    let name = settings.optimizer.name().to_owned();
    let start = Instant::now();
    let elapsed = |start: &Instant| {
        if settings.record_wall_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    };
    let record = |epoch: usize, w: &WeightVector, start: &Instant| -> Result<Option<MetricRecord>> {
        let Some(tr) = eval_metrics(g, w, train_set, eval_mode)? else {
            return Ok(None);
        };
        let err_test = match test_set {
            Some(t) => match eval_metrics(g, w, t, eval_mode)? {
                Some(r) => r.zero_one_error,
                None => return Ok(None),
            },
            None => f64::NAN,
        };
        Ok(Some(MetricRecord {
            epoch,
            optimizer: name.clone(),
            ce_train: tr.loss,
            err_train: tr.zero_one_error,
            err_test,
            wall_s: elapsed(start),
        }))
    };
    let diverged_row = |epoch: usize, start: &Instant| MetricRecord {
        epoch,
        optimizer: name.clone(),
        ce_train: f64::INFINITY,
        err_train: f64::INFINITY,
        err_test: f64::INFINITY,
        wall_s: elapsed(start),
    };

    let mut w = w0.clone();
    let mut records = Vec::with_capacity(settings.epochs + 1);
    let mut epoch_train_seconds = Vec::with_capacity(settings.epochs);
    match record(0, &w, &start)? {
        Some(r) => records.push(r),
        None => {
            records.push(diverged_row(0, &start));
            return Ok(TrainResult {
                records,
                weights: w,
                diverged_at: Some(0),
                epoch_train_seconds,
                clamped_edges: 0,
            });
        }
    }

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(settings.shuffle_seed);
    let mut step: u64 = 0;
    let mut diverged_at = None;
    'epochs: for epoch in 1..=settings.epochs {
        order.shuffle(&mut shuffle_rng);
        let t0 = Instant::now();
        for rows in order.chunks(settings.batch_size) {
            let batch = train_set.batch(rows)?;
            let mask = match settings.dropout {
                Some(r) if r < 1.0 => Some(DropoutMask::sample(g, r, settings.dropout_seed, step)?),
                _ => None,
            };
            let mode = match &mask {
                Some(m) => HiddenMode::Dropout(m),
                None => HiddenMode::Plain,
            };
            let outcome = loss_and_grad_with(g, &w, &batch, mode, Engine::Auto)
                .and_then(|(_, grad)| state.step(g, &levels, &mut w, &grad));
            step += 1;
            match outcome {
                Ok(()) => {}
                Err(e) if is_divergence(&e) => {
                    warn!("{name}: diverged in epoch {epoch}: {e}");
                    diverged_at = Some(epoch);
                    epoch_train_seconds.push(t0.elapsed().as_secs_f64());
                    records.push(diverged_row(epoch, &start));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        epoch_train_seconds.push(t0.elapsed().as_secs_f64());
        match record(epoch, &w, &start)? {
            Some(r) => records.push(r),
            None => {
                warn!("{name}: metrics became non-finite after epoch {epoch}");
                diverged_at = Some(epoch);
                records.push(diverged_row(epoch, &start));
                break;
            }
        }
    }
    Ok(TrainResult {
        records,
        weights: w,
        diverged_at,
        epoch_train_seconds,
        clamped_edges: state.clamped_edges,
    })
}

/// Validation curve of one step-size candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub alpha: u32,
    /// Validation 0/1 error per epoch, starting at epoch 1; `inf` after
    /// divergence.
    pub val_errors: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub alpha: u32,
    pub error: f64,
    pub epoch: usize,
}

/// Picks the candidate with the lowest validation error; ties go to the
/// earlier epoch of first attainment, then to the smaller α.
pub fn choose_alpha(cells: &[GridCell]) -> Result<Selection> {
    let mut best: Option<Selection> = None;
    for cell in cells {
        let mut own: Option<(f64, usize)> = None;
        for (i, &e) in cell.val_errors.iter().enumerate() {
            if e.is_finite() && own.is_none_or(|(b, _)| e < b) {
                own = Some((e, i + 1));
            }
        }
        let Some((error, epoch)) = own else { continue };
        let cand = Selection {
            alpha: cell.alpha,
            error,
            epoch,
        };
        let better = match best {
            None => true,
            Some(b) => (error, epoch, cell.alpha) < (b.error, b.epoch, b.alpha),
        };
        if better {
            best = Some(cand);
        }
    }
    best.ok_or_else(|| Error::AllDiverged {
        grid: cells.iter().map(|c| c.alpha).collect(),
    })
}

/// Trains every α of `grid` for `budget` epochs on `fit` and scores it on
/// `validation`.
#[allow(clippy::too_many_arguments)]
pub fn search_step_size(
    g: &NetworkGraph,
    w0: &WeightVector,
    base: &TrainSettings,
    grid: &[u32],
    budget: usize,
    fit: &Dataset,
    validation: &Dataset,
) -> Result<(Selection, Vec<GridCell>)> {
    if grid.is_empty() {
        return Err(Error::Config("alpha grid is empty".into()));
    }
    let mut cells = Vec::with_capacity(grid.len());
    for &alpha in grid {
        check_alpha(alpha)?;
        let settings = TrainSettings {
            step_size: step_size(alpha),
            epochs: budget,
            record_wall_time: false,
            ..base.clone()
        };
        let result = train(g, w0, &settings, fit, Some(validation))?;
        let mut val_errors: Vec<f64> = result.records.iter().skip(1).map(|r| r.err_test).collect();
        val_errors.resize(budget, f64::INFINITY);
        cells.push(GridCell { alpha, val_errors });
    }
    Ok((choose_alpha(&cells)?, cells))
}

/// Runs the step-size search described by `config` and returns the chosen
/// exponent with the grid table.
pub fn select_step_size(config: &ExperimentConfig, train_set: &Dataset) -> Result<(Selection, Vec<GridCell>)> {
    config.validate()?;
    let g = config.network()?;
    let w0 = config.init.build(&g)?;
    let (fit, validation) = split_validation(train_set, config.validation.holdout, config.seeds.split)?;
    if validation.is_empty() {
        return Err(Error::Config("step-size search needs a nonempty validation holdout".into()));
    }
    let base = config.settings(1.0, config.validation.epochs);
    search_step_size(&g, &w0, &base, &config.alpha_grid, config.validation.epochs, &fit, &validation)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub alpha: u32,
    pub records: Vec<MetricRecord>,
    pub grid: Vec<GridCell>,
    pub diverged_at: Option<usize>,
    pub epoch_train_seconds: Vec<f64>,
    pub weights: WeightVector,
}

/// Loads the data, picks α (fixed or searched), trains and, when
/// `output_dir` is set, writes the run directory.
pub fn run_training(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let g = config.network()?;
    let (train_set, test_set) = config.dataset.load()?;
    if train_set.dim() != config.architecture[0] || train_set.classes() != *config.architecture.last().unwrap() {
        return Err(Error::Config(format!(
            "architecture {:?} does not fit data with {} features and {} classes",
            config.architecture,
            train_set.dim(),
            train_set.classes()
        )));
    }
    if test_set.is_none() {
        warn!("no test set for `{}`; err_test will be NaN", train_set.name());
    }
    let (alpha, grid) = match config.alpha {
        Some(a) => (a, Vec::new()),
        None => {
            let (sel, grid) = select_step_size(config, &train_set)?;
            (sel.alpha, grid)
        }
    };
    let w0 = config.init.build(&g)?;
    let result = train(&g, &w0, &config.settings(step_size(alpha), config.epochs), &train_set, test_set.as_ref())?;
    let outcome = RunOutcome {
        alpha,
        records: result.records,
        grid,
        diverged_at: result.diverged_at,
        epoch_train_seconds: result.epoch_train_seconds,
        weights: result.weights,
    };
    if let Some(dir) = &config.output_dir {
        write_run_dir(dir, config, &outcome)?;
    }
    Ok(outcome)
}

fn write_run_dir(dir: &Path, config: &ExperimentConfig, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut resolved = config.clone();
    resolved.alpha = Some(outcome.alpha);
    let cfg_path = dir.join("config.json");
    fs::write(&cfg_path, resolved.to_json()? + "\n").map_err(|e| Error::io(&cfg_path, e))?;
    write_metrics(&outcome.records, dir.join("metrics.csv"))?;
    if !outcome.grid.is_empty() {
        write_grid(&outcome.grid, &dir.join("grid.csv"))?;
    }
    let last = outcome.records.last().expect("epoch 0 is always recorded");
    let summary_path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path)?;
    w.write_record(["optimizer", "alpha", "epoch", "ce_train", "err_train", "err_test", "diverged"])?;
    w.write_record([
        last.optimizer.clone(),
        outcome.alpha.to_string(),
        last.epoch.to_string(),
        last.ce_train.to_string(),
        last.err_train.to_string(),
        last.err_test.to_string(),
        outcome.diverged_at.is_some().to_string(),
    ])?;
    w.flush().map_err(|e| Error::io(&summary_path, e))
}

fn write_grid(cells: &[GridCell], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["alpha", "epoch", "err_validation"])?;
    for c in cells {
        for (i, e) in c.val_errors.iter().enumerate() {
            w.write_record([c.alpha.to_string(), (i + 1).to_string(), e.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Learning curves of several runs on a shared epoch axis.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub labels: Vec<String>,
    pub epochs: Vec<usize>,
    /// `rows[i][j]` is run `j` at `epochs[i]`.
    pub rows: Vec<Vec<MetricRecord>>,
}

impl CompareReport {
    /// One column of `metric` per run, keyed by epoch.
    pub fn curve(&self, metric: fn(&MetricRecord) -> f64) -> Vec<(usize, Vec<f64>)> {
        self.epochs
            .iter()
            .zip(&self.rows)
            .map(|(&e, row)| (e, row.iter().map(metric).collect()))
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("comparison.csv");
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["epoch".to_owned()];
        for l in &self.labels {
            for m in ["ce_train", "err_train", "err_test"] {
                header.push(format!("{l}.{m}"));
            }
        }
        w.write_record(&header)?;
        for (e, row) in self.epochs.iter().zip(&self.rows) {
            let mut out = vec![e.to_string()];
            for r in row {
                out.extend([r.ce_train.to_string(), r.err_train.to_string(), r.err_test.to_string()]);
            }
            w.write_record(&out)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("summary.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["run", "optimizer", "epoch", "ce_train", "err_train", "err_test"])?;
        if let (Some(&e), Some(row)) = (self.epochs.last(), self.rows.last()) {
            for (l, r) in self.labels.iter().zip(row) {
                w.write_record([
                    l.clone(),
                    r.optimizer.clone(),
                    e.to_string(),
                    r.ce_train.to_string(),
                    r.err_train.to_string(),
                    r.err_test.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}

/// Joins the `metrics.csv` of each run directory. Runs are labelled by
/// directory name; epochs missing from any run are dropped with a warning.
pub fn compare_report(run_dirs: &[PathBuf]) -> Result<CompareReport> {
    if run_dirs.is_empty() {
        return Err(Error::Config("no run directories to compare".into()));
    }
    let mut labels = Vec::with_capacity(run_dirs.len());
    let mut runs = Vec::with_capacity(run_dirs.len());
    for dir in run_dirs {
        let label = dir
            .file_name()
            .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        labels.push(label);
        runs.push(read_metrics(dir.join("metrics.csv"))?);
    }
    let sets: Vec<BTreeSet<usize>> = runs.iter().map(|r| r.iter().map(|m| m.epoch).collect()).collect();
    let union: BTreeSet<usize> = sets.iter().flatten().copied().collect();
    let common: BTreeSet<usize> = union.iter().copied().filter(|e| sets.iter().all(|s| s.contains(e))).collect();
    if common.len() != union.len() {
        let dropped: Vec<usize> = union.difference(&common).copied().collect();
        warn!("runs cover different epochs; dropping {dropped:?}");
    }
    let epochs: Vec<usize> = common.into_iter().collect();
    let rows = epochs
        .iter()
        .map(|&e| {
            runs.iter()
                .map(|run| run.iter().find(|m| m.epoch == e).cloned().expect("epoch in intersection"))
                .collect()
        })
        .collect();
    Ok(CompareReport { labels, epochs, rows })
}
