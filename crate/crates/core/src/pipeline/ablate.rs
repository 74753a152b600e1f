use std::path::Path;

use super::config::RunConfig;
use super::evaluate::evaluate;
use super::train::train;
use super::{csv_text, ensure_dir, opt_f64, write_file};
use crate::data::{ablation_sample, split, DatasetManifest};
use crate::error::{Error, Result};

/// One (normal, anomalous) pool size of an ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationCell {
    pub n_normal: usize,
    pub n_anomalous: usize,
    /// Defaults to the config seed plus the cell index.
    pub seed: Option<u64>,
}

impl AblationCell {
    /// `1K:1K` style when both counts are whole thousands, else `N:M`.
    pub fn label(&self) -> String {
        let f = |n: usize| {
            if n > 0 && n.is_multiple_of(1000) {
                format!("{}K", n / 1000)
            } else {
                n.to_string()
            }
        };
        format!("{}:{}", f(self.n_normal), f(self.n_anomalous))
    }
}

/// Parses `1K:1K,2K:1K,500x250@7`: comma-separated `normal:anomalous` (or
/// `normal x anomalous`) pairs, `K` meaning thousands, with an optional
/// `@seed`.
pub fn parse_grid(text: &str) -> Result<Vec<AblationCell>> {
    let count = |s: &str| -> Result<usize> {
        let s = s.trim();
        let (digits, mult) = match s.strip_suffix(['K', 'k']) {
            Some(d) => (d, 1000),
            None => (s, 1),
        };
        digits
            .parse::<usize>()
            .map(|v| v * mult)
            .map_err(|_| Error::Config(format!("bad pool size {s:?} in ablation grid")))
    };
    let mut cells = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (pair, seed) = match item.split_once('@') {
            Some((p, s)) => (
                p,
                Some(
                    s.trim()
                        .parse::<u64>()
                        .map_err(|_| Error::Config(format!("bad seed in grid cell {item:?}")))?,
                ),
            ),
            None => (item, None),
        };
        let (a, b) = pair
            .split_once([':', 'x'])
            .ok_or_else(|| Error::Config(format!("grid cell {item:?} is not normal:anomalous")))?;
        cells.push(AblationCell {
            n_normal: count(a)?,
            n_anomalous: count(b)?,
            seed,
        });
    }
    if cells.is_empty() {
        return Err(Error::Config("empty ablation grid".into()));
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub n_normal: usize,
    pub n_anomalous: usize,
    pub seed: u64,
    /// Sizes actually drawn; zero for skipped cells.
    pub pool_normal: usize,
    pub pool_anomalous: usize,
    pub auc: Option<f64>,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// `ok`, `skipped` (infeasible pool) or `failed`.
    pub status: String,
    pub reason: String,
}

/// One sample → split → train → evaluate per grid cell, each under
/// `out_dir/cells/NN_<label>`. Writes `out_dir/ablation.csv`.
pub fn ablate(
    config: &RunConfig,
    pool: &DatasetManifest,
    grid: &[AblationCell],
    out_dir: &Path,
) -> Result<Vec<AblationRow>> {
    config.validate()?;
    ensure_dir(out_dir)?;
    let n_classes = pool.classes().len().max(1);
    let mut rows = Vec::with_capacity(grid.len());
    for (i, cell) in grid.iter().enumerate() {
        let seed = cell.seed.unwrap_or(config.seed + i as u64);
        let label = cell.label();
        let mut row = AblationRow {
            label: label.clone(),
            n_normal: cell.n_normal,
            n_anomalous: cell.n_anomalous,
            seed,
            pool_normal: 0,
            pool_anomalous: 0,
            auc: None,
            f1: None,
            precision: None,
            recall: None,
            status: "ok".into(),
            reason: String::new(),
        };
        let sampled = if cell.n_anomalous % n_classes != 0 {
            Err(Error::Config(format!(
                "{} anomalous images do not divide over {n_classes} classes",
                cell.n_anomalous
            )))
        } else {
            ablation_sample(
                pool,
                cell.n_normal,
                cell.n_anomalous,
                cell.n_anomalous / n_classes,
                seed,
            )
        };
        let sampled = match sampled {
            Ok(m) => m,
            Err(e) => {
                log::warn!("ablation cell {label} skipped: {e}");
                row.status = "skipped".into();
                row.reason = e.to_string();
                rows.push(row);
                continue;
            }
        };
        row.pool_normal = sampled.count(0);
        row.pool_anomalous = sampled.count(1);
        let cell_dir = out_dir
            .join("cells")
            .join(format!("{i:02}_{}", label.replace(':', "-")));
        let mut cfg = config.clone();
        cfg.seed = seed;
        cfg.paths.output_dir = cell_dir.clone();
        let result = split(&sampled, cfg.split_ratio, seed).and_then(|m| {
            ensure_dir(&cell_dir)?;
            m.save(&cell_dir.join("manifest.csv"))?;
            let outcome = train(&cfg, &m, &cell_dir, None)?;
            evaluate(&cfg, &outcome.best_checkpoint(), &m, Some(&cell_dir))
        });
        match result {
            Ok(rep) => {
                row.auc = rep.metrics.auc;
                row.f1 = Some(rep.metrics.f1);
                row.precision = Some(rep.metrics.precision);
                row.recall = Some(rep.metrics.recall);
            }
            Err(e) => {
                log::warn!("ablation cell {label} failed: {e}");
                row.status = "failed".into();
                row.reason = e.to_string();
            }
        }
        rows.push(row);
    }
    write_file(&out_dir.join("ablation.csv"), ablation_csv(&rows)?)?;
    Ok(rows)
}

fn ablation_csv(rows: &[AblationRow]) -> Result<String> {
    let mut out = vec![[
        "label",
        "n_normal",
        "n_anomalous",
        "seed",
        "pool_normal",
        "pool_anomalous",
        "auc",
        "f1",
        "precision",
        "recall",
        "status",
        "reason",
    ]
    .map(String::from)
    .to_vec()];
    for r in rows {
        out.push(vec![
            r.label.clone(),
            r.n_normal.to_string(),
            r.n_anomalous.to_string(),
            r.seed.to_string(),
            r.pool_normal.to_string(),
            r.pool_anomalous.to_string(),
            opt_f64(r.auc),
            opt_f64(r.f1),
            opt_f64(r.precision),
            opt_f64(r.recall),
            r.status.clone(),
            r.reason.clone(),
        ]);
    }
    csv_text(out)
}
