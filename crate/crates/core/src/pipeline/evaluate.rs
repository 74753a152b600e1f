use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::score::score;
use super::{csv_text, ensure_dir, opt_f64, write_file};
use crate::data::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::eval::{calibrate_threshold, confusion_metrics, CalibrationRule, MetricsReport};
use crate::objective::ScoreReduction;

/// Test-split metrics at the calibration-split threshold, plus enough run
/// metadata to attribute differences between runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub metrics: MetricsReport,
    pub seed: u64,
    pub calibration: CalibrationRule,
    pub score_reduction: ScoreReduction,
    /// File name of the evaluated checkpoint.
    pub checkpoint: String,
    /// How the checkpoint was chosen among epochs.
    pub selection: String,
    pub n_cal: usize,
}

const METRICS_HEADER: [&str; 14] = [
    "checkpoint",
    "seed",
    "auc",
    "f1",
    "precision",
    "recall",
    "threshold",
    "tp",
    "fp",
    "tn",
    "fn",
    "n_test",
    "n_cal",
    "config_digest",
];

/// Calibrates on the cal split, reports on the test split. With `out_dir`,
/// writes `report.json` and appends a row to `metrics.csv`.
pub fn evaluate(
    config: &RunConfig,
    checkpoint: &Path,
    manifest: &DatasetManifest,
    out_dir: Option<&Path>,
) -> Result<EvalReport> {
    let cal = score(config, checkpoint, manifest, Some(Split::Cal))?;
    let test = score(config, checkpoint, manifest, Some(Split::Test))?;
    if cal.is_empty() || test.is_empty() {
        return Err(Error::Data(format!(
            "evaluation needs non-empty cal and test splits (cal {}, test {})",
            cal.len(),
            test.len()
        )));
    }
    let unzip = |rows: &[super::ScoreRow]| -> (Vec<f64>, Vec<u8>) { rows.iter().map(|r| (r.score, r.label)).unzip() };
    let (cal_scores, cal_labels) = unzip(&cal);
    let (test_scores, test_labels) = unzip(&test);
    let threshold = calibrate_threshold(&cal_scores, &cal_labels, config.calibration)?;
    let mut metrics = confusion_metrics(&test_scores, &test_labels, threshold)?;
    metrics.config_digest = config.digest();
    let report = EvalReport {
        metrics,
        seed: config.seed,
        calibration: config.calibration,
        score_reduction: config.score_reduction,
        checkpoint: checkpoint
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        selection: "best_cal_auc".into(),
        n_cal: cal.len(),
    };
    if let Some(dir) = out_dir {
        ensure_dir(dir)?;
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write_file(&dir.join("report.json"), json + "\n")?;
        append_metrics_row(&dir.join("metrics.csv"), &report)?;
    }
    Ok(report)
}

fn append_metrics_row(path: &Path, r: &EvalReport) -> Result<()> {
    let m = &r.metrics;
    let row = vec![
        r.checkpoint.clone(),
        r.seed.to_string(),
        opt_f64(m.auc),
        m.f1.to_string(),
        m.precision.to_string(),
        m.recall.to_string(),
        m.threshold.to_string(),
        m.tp.to_string(),
        m.fp.to_string(),
        m.tn.to_string(),
        m.fn_.to_string(),
        m.n_test.to_string(),
        r.n_cal.to_string(),
        m.config_digest.clone(),
    ];
    let mut rows = Vec::new();
    if !path.exists() {
        rows.push(METRICS_HEADER.map(String::from).to_vec());
    }
    rows.push(row);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(csv_text(rows)?.as_bytes()).map_err(|e| Error::io(path, e))
}
