//! End-to-end commands: training, scoring, heatmaps, evaluation, ablation.
//!
//! Per-image work fans out over rayon; every reduction runs in a fixed order,
//! so results do not depend on the thread count. `deterministic` in the config
//! additionally pins execution to one thread.

mod ablate;
mod config;
mod evaluate;
mod heatmaps;
mod score;
mod train;

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::backbone::Backbone;
use crate::data::{load_batch, Batch, DatasetManifest, Record, Split};
use crate::error::{Error, Result};
use crate::numerics::Checkpoint;
use crate::objective::{pseudo_huber_map, AnomalyMap};
use crate::scalar::Scalar;

pub use ablate::{ablate, parse_grid, AblationCell, AblationRow};
pub use config::{BackboneChoice, DeltaPolicy, Paths, Precision, RangeScope, RunConfig};
pub use evaluate::{evaluate, EvalReport};
pub use heatmaps::{heatmap_file_stem, heatmaps, HeatmapOptions, HeatmapSummary, LocalityRow};
pub use score::{score, write_scores_csv, ScoreRow};
pub use train::{
    epoch_checkpoint_name, train, HistoryRow, TrainHistory, TrainOutcome, BEST_CHECKPOINT, CHECKPOINT_DIR,
};

/// Images decoded per chunk when scoring, bounding peak memory.
const SCORE_CHUNK: usize = 64;

/// Runs `f` on a one-thread pool when `deterministic`, else on the global pool.
pub fn with_threads<R: Send>(deterministic: bool, f: impl FnOnce() -> R + Send) -> Result<R> {
    if deterministic {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
        Ok(pool.install(f))
    } else {
        Ok(f())
    }
}

/// Rebuilds the configured backbone and loads parameters from `checkpoint`.
pub fn load_model<T: Scalar>(config: &RunConfig, checkpoint: &Path) -> Result<Backbone<T>> {
    let mut model = Backbone::build(config.backbone_spec()?, config.seed)?;
    let ck = Checkpoint::load(checkpoint)?;
    model.import_params(&ck)?;
    Ok(model)
}

/// Anomaly maps of a decoded batch, one forward pass per image in parallel.
pub fn batch_maps<T: Scalar>(model: &Backbone<T>, batch: &Batch<T>) -> Result<Vec<AnomalyMap<T>>> {
    (0..batch.ids.len())
        .into_par_iter()
        .map(|i| {
            let score = model.forward(&batch.images.slice_image(i))?;
            let mut maps = pseudo_huber_map(&score, Some(std::slice::from_ref(&batch.ids[i])));
            Ok(maps.remove(0))
        })
        .collect()
}

/// Anomaly maps for `records`, decoded in bounded chunks, in record order.
pub fn record_maps<T: Scalar>(
    model: &Backbone<T>,
    manifest: &DatasetManifest,
    records: &[&Record],
) -> Result<Vec<AnomalyMap<T>>> {
    let size = model.spec().input_size;
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(SCORE_CHUNK) {
        let batch = load_batch::<T>(manifest, chunk, size)?;
        out.extend(batch_maps(model, &batch)?);
    }
    Ok(out)
}

/// Records of one split, or all records for `None`.
pub fn select(manifest: &DatasetManifest, split: Option<Split>) -> Vec<&Record> {
    manifest
        .records
        .iter()
        .filter(|r| split.is_none() || r.split == split)
        .collect()
}

/// Splits an unsplit manifest with the config's ratio and seed; a fully split
/// manifest passes through unchanged.
pub fn ensure_split(manifest: &DatasetManifest, config: &RunConfig) -> Result<DatasetManifest> {
    let assigned = manifest.records.iter().filter(|r| r.split.is_some()).count();
    if assigned == manifest.records.len() && assigned > 0 {
        Ok(manifest.clone())
    } else if assigned == 0 {
        crate::data::split(manifest, config.split_ratio, config.seed)
    } else {
        Err(Error::Data(format!(
            "manifest assigns a split to {assigned} of {} records",
            manifest.records.len()
        )))
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv_text(rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).map_err(|e| Error::Data(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
