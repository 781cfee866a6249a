//! Metrics, the cross-validation harness and report rendering.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::augment_training_set;
use crate::baselines::{fit_baseline, predict_linear, LinearMethod};
use crate::config::{RunConfig, SequenceLayout};
use crate::dataset::{
    build_design, holdout_split, holdout_split_grouped, kfold_split, kfold_split_grouped, load_csv, to_sequences,
    to_subject_windows, Dataset, SequenceTensor, StandardizationStats,
};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, RandomSource};
use crate::nn::{NetConfig, NormAudit};
use crate::rfe::rfe_select_protected;
use crate::train::train_network;

pub const REPORT_FORMAT_VERSION: u32 = 1;

fn check_pair(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape(format!("{} targets, {} predictions", y.len(), y_hat.len())));
    }
    if y.is_empty() {
        return Err(Error::EmptyInput("no values to score".into()));
    }
    Ok(())
}

/// `(1/n) Σ (y_i − ŷ_i)²`
pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// `1 − Σ (y_i − ŷ_i)² / Σ (y_i − ȳ)²`
pub fn r2(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    if y.len() < 2 {
        return Err(Error::EmptyInput("r2 needs at least two values".into()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let tss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if !(tss > 0.0) {
        return Err(Error::DegenerateTarget);
    }
    let rss: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - rss / tss)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub r2: f64,
    pub n: usize,
}

pub fn metrics(y: &[f64], y_hat: &[f64]) -> Result<Metrics> {
    Ok(Metrics {
        mse: mse(y, y_hat)?,
        r2: r2(y, y_hat)?,
        n: y.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lls,
    Cg,
    AdamLinear,
    Ridge,
    LstmAttention,
}

impl Method {
    /// Report row order.
    pub const ALL: [Method; 5] = [Method::Lls, Method::Cg, Method::AdamLinear, Method::Ridge, Method::LstmAttention];

    pub fn label(self) -> &'static str {
        match self {
            Method::LstmAttention => "LSTM-Attention",
            m => m.linear().unwrap().label(),
        }
    }

    pub fn from_label(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.label() == s)
    }

    pub fn linear(self) -> Option<LinearMethod> {
        match self {
            Method::Lls => Some(LinearMethod::Lls),
            Method::Cg => Some(LinearMethod::Cg),
            Method::AdamLinear => Some(LinearMethod::AdamLinear),
            Method::Ridge => Some(LinearMethod::Ridge),
            Method::LstmAttention => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub method: Method,
    pub train_mse: f64,
    pub val_mse: f64,
    pub test_mse: f64,
    pub test_r2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_train_augmented: usize,
    pub n_val: usize,
    pub selected_features: Vec<String>,
    pub elimination_order: Vec<String>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// In [`Method::ALL`] order.
    pub methods: Vec<MethodScores>,
    pub audit: NormAudit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation over folds.
    pub std: f64,
}

impl MeanStd {
    fn of(v: &[f64]) -> MeanStd {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub train_mse: MeanStd,
    pub val_mse: MeanStd,
    pub test_mse: MeanStd,
    pub test_r2: MeanStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub n_records: usize,
    pub n_trainval: usize,
    pub n_test: usize,
    pub sequence_t: usize,
    pub sequence_d: usize,
    pub test_aggregation: String,
    pub train_mse_rows: String,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub format_version: u32,
    pub seed: u64,
    pub config: RunConfig,
    pub metadata: ReportMetadata,
    pub folds: Vec<FoldResult>,
    /// In [`Method::ALL`] order.
    pub summary: Vec<MethodSummary>,
    pub audit: NormAudit,
}

impl CvReport {
    pub fn summary_for(&self, m: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == m)
    }

    fn check_complete(&self) -> Result<()> {
        if self.folds.len() != self.config.k_folds {
            return Err(Error::State(format!("{} folds, expected {}", self.folds.len(), self.config.k_folds)));
        }
        for f in &self.folds {
            let methods: Vec<Method> = f.methods.iter().map(|s| s.method).collect();
            if methods != Method::ALL {
                return Err(Error::State(format!("fold {} is missing methods", f.fold)));
            }
        }
        Ok(())
    }
}

/// Everything a fold needs, computed once.
struct Prepared<'a> {
    cfg: &'a RunConfig,
    x: Matrix,
    y: Vec<f64>,
    subjects: Vec<u32>,
    test_time: Vec<f64>,
    test: Vec<usize>,
    folds: Vec<(Vec<usize>, Vec<usize>)>,
    protected: Vec<usize>,
    root: RandomSource,
}

fn assert_disjoint(fold: usize, parts: &[(&str, &[usize])]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (name, idx) in parts {
        for &i in *idx {
            if !seen.insert(i) {
                return Err(Error::State(format!("fold {fold}: row {i} of the {name} set is shared with another split")));
            }
        }
    }
    Ok(())
}

fn finite(fold: usize, method: Method, what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("fold {fold}, method {}: {what} is {v}", method.label())))
    }
}

fn scores(fold: usize, method: Method, y: [&[f64]; 3], pred: [&[f64]; 3]) -> Result<MethodScores> {
    Ok(MethodScores {
        method,
        train_mse: finite(fold, method, "train MSE", mse(y[0], pred[0])?)?,
        val_mse: finite(fold, method, "validation MSE", mse(y[1], pred[1])?)?,
        test_mse: finite(fold, method, "test MSE", mse(y[2], pred[2])?)?,
        test_r2: finite(fold, method, "test R²", r2(y[2], pred[2])?)?,
    })
}

impl Prepared<'_> {
    fn sequences(&self, z: &Matrix) -> Result<SequenceTensor> {
        match self.cfg.sequence_layout {
            SequenceLayout::Features => to_sequences(z),
            SequenceLayout::SubjectWindows => to_subject_windows(z, &self.subjects, &self.test_time, self.cfg.window),
        }
    }

    /// Standardization fitted on the fold's training rows, and the four
    /// linear baselines on all regressors.
    fn baseline_fold(&self, f: usize) -> Result<(Vec<MethodScores>, Matrix)> {
        let cfg = self.cfg;
        let (train, val) = (&self.folds[f].0, &self.folds[f].1);
        assert_disjoint(f, &[("training", train), ("validation", val), ("test", &self.test)])?;
        let pick = |idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| self.y[i]).collect() };
        let ys = [pick(train), pick(val), pick(&self.test)];
        let stats = StandardizationStats::fit(&self.x.select_rows(train), Some(&cfg.regressors))?;
        let z = stats.apply(&self.x)?;
        let z_train = z.select_rows(train);

        let mut methods = Vec::with_capacity(Method::ALL.len());
        for m in Method::ALL {
            let Some(lm) = m.linear() else { continue };
            let model = fit_baseline(lm, &cfg.baselines, &z_train, &ys[0]).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("fold {f}, method {}: {msg}", m.label())),
                e => e,
            })?;
            let preds = [
                predict_linear(&model, &z_train)?,
                predict_linear(&model, &z.select_rows(val))?,
                predict_linear(&model, &z.select_rows(&self.test))?,
            ];
            methods.push(scores(f, m, [&ys[0], &ys[1], &ys[2]], [&preds[0], &preds[1], &preds[2]])?);
        }
        Ok((methods, z))
    }

    fn run_fold(&self, f: usize) -> Result<FoldResult> {
        let cfg = self.cfg;
        let (train, val) = (&self.folds[f].0, &self.folds[f].1);
        let rng = self.root.derive(100 + f as u64);
        let pick = |idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| self.y[i]).collect() };
        let ys = [pick(train), pick(val), pick(&self.test)];

        let (mut methods, z) = self.baseline_fold(f)?;
        let z_train = z.select_rows(train);

        let rfe = rfe_select_protected(&z_train, &ys[0], cfg.rfe_k, &self.protected, &cfg.forest, &mut rng.derive(0))?;
        log::info!("fold {f}: kept {} of {} columns", rfe.selected.len(), cfg.regressors.len());
        let zs = z.select_columns(&rfe.selected);
        let seqs = self.sequences(&zs)?;
        let (x_val, x_test) = (seqs.select(val), seqs.select(&self.test));
        let base_train = seqs.select(train).flatten();
        let unit = StandardizationStats {
            mean: vec![0.0; base_train.cols()],
            std: vec![1.0; base_train.cols()],
        };
        let (aug_x, aug_y) = augment_training_set(&base_train, &ys[0], &cfg.jitter, &unit, &mut rng.derive(1))?;
        let aug = SequenceTensor::new(aug_x.rows(), seqs.t, seqs.d, aug_x.into_vec())?;
        let net = NetConfig {
            input_dim: seqs.d,
            ..cfg.net.clone()
        };
        let out = train_network(&aug, &aug_y, &x_val, &ys[1], &net, &cfg.train, &rng.derive(2)).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("fold {f}, method {}: {m}", Method::LstmAttention.label())),
            e => e,
        })?;
        log::info!(
            "fold {f}: trained {} epochs, best epoch {}, val MSE {:.4}",
            out.history.len(),
            out.best_epoch,
            out.history[out.best_epoch.max(1) - 1].val_mse
        );
        let mut audit = out.audit.clone();
        let mut preds = Vec::with_capacity(3);
        for x in [&seqs.select(train), &x_val, &x_test] {
            let (p, a) = out.network.predict_audited(x)?;
            audit.merge(&a);
            preds.push(p);
        }
        methods.push(scores(
            f,
            Method::LstmAttention,
            [&ys[0], &ys[1], &ys[2]],
            [&preds[0], &preds[1], &preds[2]],
        )?);

        let names = |idx: &[usize]| idx.iter().map(|&i| cfg.regressors[i].clone()).collect();
        Ok(FoldResult {
            fold: f,
            n_train: train.len(),
            n_train_augmented: aug.n,
            n_val: val.len(),
            selected_features: names(&rfe.selected),
            elimination_order: names(&rfe.elimination_order),
            epochs_run: out.history.len(),
            best_epoch: out.best_epoch,
            stopped_early: out.stopped_early,
            methods,
            audit,
        })
    }
}

fn prepare<'a>(cfg: &'a RunConfig, ds: &Dataset) -> Result<(Prepared<'a>, usize)> {
    cfg.validate()?;
    let root = RandomSource::new(cfg.seed);
    let n_source = ds.len();
    let ds = match cfg.max_rows {
        Some(m) if m < ds.len() => {
            let mut idx = root.derive(2).sample_without_replacement(ds.len(), m);
            idx.sort_unstable();
            ds.subset(&idx)
        }
        _ => ds.clone(),
    };
    let (x, y) = build_design(&ds, cfg.target, &cfg.regressors)?;
    let subjects: Vec<u32> = ds.records.iter().map(|r| r.subject_id).collect();
    let test_time: Vec<f64> = ds.records.iter().map(|r| r.test_time).collect();
    let n = x.rows();

    let holdout = if cfg.grouped_splits {
        holdout_split_grouped(&subjects, cfg.test_fraction, &mut root.derive(0))?
    } else {
        holdout_split(n, cfg.test_fraction, &mut root.derive(0))?
    };
    if holdout.test.len() < 2 {
        return Err(Error::Config(format!("test split has {} rows; need at least 2", holdout.test.len())));
    }
    let tv = &holdout.trainval;
    let local = if cfg.grouped_splits {
        let groups: Vec<u32> = tv.iter().map(|&i| subjects[i]).collect();
        kfold_split_grouped(&groups, cfg.k_folds, &mut root.derive(1))?
    } else {
        kfold_split(tv.len(), cfg.k_folds, &mut root.derive(1))?
    };
    let folds = local
        .into_iter()
        .map(|f| (f.train.iter().map(|&i| tv[i]).collect(), f.val.iter().map(|&i| tv[i]).collect()))
        .collect();

    let prep = Prepared {
        cfg,
        x,
        y,
        subjects,
        test_time,
        test: holdout.test.clone(),
        folds,
        protected: cfg.protected_indices()?,
        root,
    };
    Ok((prep, n_source))
}

/// Mean and spread over folds, per method, in the order of the fold rows.
fn summarize(per_fold: &[&[MethodScores]]) -> Vec<MethodSummary> {
    (0..per_fold[0].len())
        .map(|j| {
            let col = |g: fn(&MethodScores) -> f64| -> MeanStd {
                MeanStd::of(&per_fold.iter().map(|f| g(&f[j])).collect::<Vec<_>>())
            };
            MethodSummary {
                method: per_fold[0][j].method,
                train_mse: col(|s| s.train_mse),
                val_mse: col(|s| s.val_mse),
                test_mse: col(|s| s.test_mse),
                test_r2: col(|s| s.test_r2),
            }
        })
        .collect()
}

/// The same splits and standardization as [`run_experiment_on`], fitting
/// only the four linear baselines.
pub fn run_baselines_on(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<MethodSummary>> {
    let (prep, _) = prepare(cfg, ds)?;
    let folds: Vec<Vec<MethodScores>> = (0..cfg.k_folds)
        .into_par_iter()
        .map(|f| prep.baseline_fold(f).map(|(m, _)| m))
        .collect::<Result<_>>()?;
    let per_fold: Vec<&[MethodScores]> = folds.iter().map(|f| f.as_slice()).collect();
    Ok(summarize(&per_fold))
}

/// Loads the configured dataset and runs [`run_experiment_on`].
pub fn run_experiment(cfg: &RunConfig) -> Result<CvReport> {
    cfg.validate()?;
    let ds = load_csv(cfg.data_path()?)?;
    run_experiment_on(cfg, &ds)
}

/// Holdout test split, k-fold split of the remainder, and per fold:
/// standardization, baselines on all regressors, feature elimination,
/// jittering and network training, all fitted on the fold's training rows.
///
/// Random streams derive from `cfg.seed`: 0 holdout, 1 folds, 2 subsample,
/// `100 + f` fold `f`. Folds run in parallel on the current rayon pool.
pub fn run_experiment_on(cfg: &RunConfig, ds: &Dataset) -> Result<CvReport> {
    let (prep, n_source) = prepare(cfg, ds)?;
    let n = prep.x.rows();
    let folds: Vec<FoldResult> = (0..cfg.k_folds)
        .into_par_iter()
        .map(|f| prep.run_fold(f))
        .collect::<Result<_>>()?;

    let mut audit = NormAudit::default();
    for f in &folds {
        audit.merge(&f.audit);
    }
    let per_fold: Vec<&[MethodScores]> = folds.iter().map(|f| f.methods.as_slice()).collect();
    let summary = summarize(&per_fold);

    let (t, d) = match cfg.sequence_layout {
        SequenceLayout::Features => (cfg.rfe_k + prep.protected.len(), 1),
        SequenceLayout::SubjectWindows => (cfg.window, cfg.rfe_k + prep.protected.len()),
    };
    let mut notes = Vec::new();
    let defaults = RunConfig::default();
    if cfg.train.epochs != defaults.train.epochs {
        notes.push(format!(
            "epoch budget {} differs from the default {}",
            cfg.train.epochs, defaults.train.epochs
        ));
    }
    if n < n_source {
        notes.push(format!("random subsample of {n} of {n_source} records"));
    }
    if cfg.grouped_splits {
        notes.push("splits keep each subject on one side".into());
    }
    let report = CvReport {
        format_version: REPORT_FORMAT_VERSION,
        seed: cfg.seed,
        config: cfg.clone(),
        metadata: ReportMetadata {
            n_records: n,
            n_trainval: n - prep.test.len(),
            n_test: prep.test.len(),
            sequence_t: t,
            sequence_d: d,
            test_aggregation: "mean over folds of each fold model's MSE on the shared holdout test set".into(),
            train_mse_rows: "un-augmented training rows of the fold".into(),
            notes,
        },
        folds,
        summary,
        audit,
    };
    report.check_complete()?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

/// One summary row of the tabular formats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub train_mse: f64,
    pub val_mse: f64,
    pub test_mse: f64,
    pub test_r2: f64,
}

pub fn summary_rows(report: &CvReport) -> Vec<SummaryRow> {
    report
        .summary
        .iter()
        .map(|s| SummaryRow {
            method: s.method,
            train_mse: s.train_mse.mean,
            val_mse: s.val_mse.mean,
            test_mse: s.test_mse.mean,
            test_r2: s.test_r2.mean,
        })
        .collect()
}

const CSV_HEADER: [&str; 5] = ["method", "train_mse", "val_mse", "test_mse", "test_r2"];

pub fn render_report(report: &CvReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).map_err(|e| Error::Serialize(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let io = |e: csv::Error| Error::Serialize(e.to_string());
            w.write_record(CSV_HEADER).map_err(io)?;
            for r in summary_rows(report) {
                w.write_record([
                    r.method.label().to_string(),
                    r.train_mse.to_string(),
                    r.val_mse.to_string(),
                    r.test_mse.to_string(),
                    r.test_r2.to_string(),
                ])
                .map_err(io)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Serialize(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Serialize(e.to_string()))
        }
        ReportFormat::Text => Ok(format!("{}\n{}", mse_table(report), r2_table(report))),
    }
}

pub fn mse_table(report: &CvReport) -> String {
    let mut s = format!("{:<20} {:>12} {:>12} {:>12}\n", "Method", "Train. MSE", "Val. MSE", "Test MSE");
    for r in summary_rows(report) {
        let _ = writeln!(
            s,
            "{:<20} {:>12.4} {:>12.4} {:>12.4}",
            r.method.label(),
            r.train_mse,
            r.val_mse,
            r.test_mse
        );
    }
    s
}

pub fn r2_table(report: &CvReport) -> String {
    let mut s = format!("{:<20} {:>12}\n", "Method", "R²");
    for r in summary_rows(report) {
        let _ = writeln!(s, "{:<20} {:>12.6}", r.method.label(), r.test_r2);
    }
    s
}

/// Reads back the CSV written by [`render_report`].
pub fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| Error::Serialize(e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Serialize(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| Error::Serialize(e.to_string()))?;
        let num = |j: usize| -> Result<f64> {
            rec[j].parse().map_err(|_| Error::Parse {
                row: i + 1,
                column: CSV_HEADER[j].to_string(),
                value: rec[j].to_string(),
            })
        };
        let method = Method::from_label(&rec[0])
            .ok_or_else(|| Error::Serialize(format!("unknown method `{}` on row {}", &rec[0], i + 1)))?;
        rows.push(SummaryRow {
            method,
            train_mse: num(1)?,
            val_mse: num(2)?,
            test_mse: num(3)?,
            test_r2: num(4)?,
        });
    }
    Ok(rows)
}
