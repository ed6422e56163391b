use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use eapcr_core::data::{chrono_split, prepare_split, windows_with, Prepared, SeriesTable, WindowSample};
use eapcr_core::eval::{evaluate, roc_curve, score_samples, EvalReport, RocPoint};
use eapcr_core::synth::{synth_generate, SynthSpec};
use eapcr_core::train::{train_with, Checkpoint, EpochRecord};
use eapcr_core::Variant;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::json;
use crate::table::{self, Labels};

/// `model.json` -> `model.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(CliError::io(path))
}

fn log_epoch(r: &EpochRecord, epochs: usize) {
    match r.val_auc {
        Some(a) => eprintln!("epoch {}/{}  loss {:.6}  val_auc {:.4}", r.epoch, epochs, r.train_loss, a),
        None => eprintln!("epoch {}/{}  loss {:.6}", r.epoch, epochs, r.train_loss),
    }
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_auc\n");
    for r in history {
        let auc = r.val_auc.map(|a| a.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{}", r.epoch, r.train_loss, auc).unwrap();
    }
    out
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr).unwrap();
    }
    out
}

fn provenance(cfg: &RunConfig) -> String {
    format!("# run_config {}\n", cfg.to_json())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub rows: usize,
    pub anomaly_fraction: f64,
}

pub fn cmd_synth(spec: &SynthSpec, seed: u64, out: &Path) -> Result<SynthSummary> {
    let table = synth_generate(spec, seed)?;
    table::save_csv(&table, out)?;
    let summary = SynthSummary {
        rows: table.len(),
        anomaly_fraction: table.anomaly_count() as f64 / table.len() as f64,
    };
    println!("wrote {} rows to {} (anomaly fraction {:.4})", summary.rows, out.display(), summary.anomaly_fraction);
    Ok(summary)
}

pub fn load_synth_spec(path: &Path) -> Result<SynthSpec> {
    let text = fs::read_to_string(path).map_err(|e| CliError::ConfigFile { path: path.into(), msg: e.to_string() })?;
    serde_json::from_str(&text).map_err(|e| CliError::ConfigFile { path: path.into(), msg: e.to_string() })
}

/// Splits once and prepares windows at `cfg.window`.
fn prepare_run(train: &SeriesTable, test: &SeriesTable, cfg: &RunConfig) -> Result<Prepared> {
    Ok(prepare_split(train, test, &cfg.pipeline_config(), cfg.seed)?)
}

/// Trains `variant` on prepared windows, logging every epoch to stderr.
/// With `track_val` each epoch also scores the test windows for the history.
pub fn fit(
    prep: &Prepared,
    names: &[String],
    cfg: &RunConfig,
    variant: Variant,
    track_val: bool,
) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    let mc = cfg.model_config(names.len());
    let tc = cfg.train_config();
    let val = if track_val { &prep.test[..] } else { &[] };
    let trained = train_with(&prep.train, val, &mc, &tc, variant, |r| log_epoch(r, tc.epochs))?;
    let ckpt = Checkpoint::new(
        &trained.params,
        prep.standardizer.clone(),
        prep.discretizer.clone(),
        names.to_vec(),
        variant,
        cfg.seed,
        tc.epochs,
    );
    Ok((ckpt, trained.history))
}

/// Scores `windows` with the 32-bit parameters stored in `ckpt`.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, windows: &[WindowSample], threshold: f64) -> Result<(EvalReport, Vec<f64>)> {
    let params = ckpt.model()?;
    Ok(evaluate(&params, windows, threshold, ckpt.variant)?)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

pub fn cmd_train(data: &Path, cfg: &RunConfig, out: &Path, history_path: &Path) -> Result<TrainSummary> {
    let table = table::load_csv(data, Labels::Required)?;
    let (train, test) = chrono_split(&table, cfg.train_fraction)?;
    let prep = prepare_run(&train, &test, cfg)?;
    let (checkpoint, history) = fit(&prep, table.feature_names(), cfg, cfg.variant, true)?;
    json::save_checkpoint(out, &checkpoint, cfg)?;
    write_file(history_path, &history_csv(&history))?;
    match history.last().and_then(|r| r.val_auc) {
        Some(a) => println!("final val_auc {a:.6}"),
        None => println!("final val_auc n/a"),
    }
    Ok(TrainSummary { checkpoint, history })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    /// Rows after the training fraction recorded in the checkpoint.
    Test,
    All,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Test => "test",
            Split::All => "all",
        }
    }
}

fn check_features(ckpt: &Checkpoint, table: &SeriesTable) -> Result<()> {
    if ckpt.feature_names != table.feature_names() {
        return Err(CliError::FeatureMismatch {
            expected: ckpt.feature_names.clone(),
            found: table.feature_names().to_vec(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub roc: Vec<RocPoint>,
    pub scores: Vec<f64>,
}

pub fn cmd_eval(
    ckpt_path: &Path,
    data: &Path,
    threshold: Option<f64>,
    split: Split,
    report_path: &Path,
    roc_path: &Path,
) -> Result<EvalOutput> {
    let (ckpt, stored) = json::load_checkpoint(ckpt_path)?;
    let mut cfg = stored.unwrap_or_default();
    if let Some(t) = threshold {
        cfg.threshold = t;
    }
    cfg.validate()?;
    let table = table::load_csv(data, Labels::Required)?;
    check_features(&ckpt, &table)?;
    let part = match split {
        Split::Test => chrono_split(&table, cfg.train_fraction)?.1,
        Split::All => table,
    };
    let windows = windows_with(&part, &ckpt.standardizer, &ckpt.discretizer, ckpt.model_config.window)?;
    let (report, scores) = evaluate_checkpoint(&ckpt, &windows, cfg.threshold)?;
    let labels: Vec<u8> = windows.iter().map(|w| w.label).collect();
    let roc = roc_curve(&scores, &labels)?;
    write_file(report_path, &json::report_to_string(&report, &cfg, split.name()))?;
    write_file(roc_path, &roc_csv(&roc))?;
    println!("auc {:.6}  f1 {:.6}  (threshold {})", report.auc, report.f1, report.threshold);
    Ok(EvalOutput { report, roc, scores })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub window: usize,
    /// `(auc, f1)` or the failure message and its exit code.
    pub outcome: std::result::Result<(f64, f64), (String, i32)>,
}

pub fn sweep_csv(rows: &[SweepRow], cfg: &RunConfig) -> String {
    let mut out = provenance(cfg);
    out.push_str("window,auc,f1,error\n");
    for r in rows {
        match &r.outcome {
            Ok((auc, f1)) => writeln!(out, "{},{},{},", r.window, auc, f1).unwrap(),
            Err((msg, _)) => writeln!(out, "{},,,\"error: {}\"", r.window, msg.replace('"', "'")).unwrap(),
        }
    }
    out
}

/// One model per window on a single chronological split. Failed windows are
/// reported in their row; the call fails after writing if any row failed.
pub fn cmd_sweep(data: &Path, windows: &[usize], cfg: &RunConfig, out: &Path) -> Result<Vec<SweepRow>> {
    let table = table::load_csv(data, Labels::Required)?;
    let (train, test) = chrono_split(&table, cfg.train_fraction)?;
    let mut sorted = windows.to_vec();
    sorted.sort_unstable();
    let mut rows = Vec::with_capacity(sorted.len());
    for &w in &sorted {
        eprintln!("window {w}");
        let mut c = cfg.clone();
        c.window = w;
        let outcome = (|| {
            let prep = prepare_run(&train, &test, &c)?;
            let (ckpt, _) = fit(&prep, table.feature_names(), &c, c.variant, false)?;
            let (report, _) = evaluate_checkpoint(&ckpt, &prep.test, c.threshold)?;
            Ok::<_, CliError>((report.auc, report.f1))
        })()
        .map_err(|e| (e.to_string(), e.exit_code()));
        rows.push(SweepRow { window: w, outcome });
    }
    write_file(out, &sweep_csv(&rows, cfg))?;
    let failed: Vec<i32> = rows.iter().filter_map(|r| r.outcome.as_ref().err().map(|e| e.1)).collect();
    if let Some(&code) = failed.first() {
        return Err(CliError::PartialFailure { failed: failed.len(), total: rows.len(), code });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub auc: f64,
    pub f1: f64,
}

pub fn ablation_csv(rows: &[AblationRow], cfg: &RunConfig) -> String {
    let mut out = provenance(cfg);
    out.push_str("variant,auc,f1\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.variant.name(), r.auc, r.f1).unwrap();
    }
    out
}

/// Multi-sensor only, time-series only and full model on the same windows.
pub fn cmd_ablate(data: &Path, cfg: &RunConfig, out: &Path) -> Result<Vec<AblationRow>> {
    let table = table::load_csv(data, Labels::Required)?;
    let (train, test) = chrono_split(&table, cfg.train_fraction)?;
    let prep = prepare_run(&train, &test, cfg)?;
    let mut rows = Vec::with_capacity(3);
    for variant in Variant::ALL {
        eprintln!("variant {}", variant.name());
        let (ckpt, _) = fit(&prep, table.feature_names(), cfg, variant, false)?;
        let (report, _) = evaluate_checkpoint(&ckpt, &prep.test, cfg.threshold)?;
        rows.push(AblationRow { variant, auc: report.auc, f1: report.f1 });
    }
    write_file(out, &ablation_csv(&rows, cfg))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub t_index: usize,
    pub timestamp: i64,
    pub score: f64,
}

/// Scores every complete window of the file.
pub fn cmd_predict(ckpt_path: &Path, data: &Path, out: &Path) -> Result<Vec<Prediction>> {
    let (ckpt, _) = json::load_checkpoint(ckpt_path)?;
    let table = table::load_csv(data, Labels::Optional)?;
    check_features(&ckpt, &table)?;
    let windows = windows_with(&table, &ckpt.standardizer, &ckpt.discretizer, ckpt.model_config.window)?;
    let params = ckpt.model()?;
    let scores = score_samples(&params, &windows, ckpt.variant)?;
    let preds: Vec<Prediction> = windows
        .iter()
        .zip(scores)
        .map(|(w, score)| Prediction { t_index: w.t_index, timestamp: table.timestamps()[w.t_index], score })
        .collect();
    let mut text = String::from("t_index,timestamp,score\n");
    for p in &preds {
        writeln!(text, "{},{},{}", p.t_index, p.timestamp, p.score).unwrap();
    }
    write_file(out, &text)?;
    println!("wrote {} scores to {}", preds.len(), out.display());
    Ok(preds)
}
