use std::path::Path;

use super::config::{Precision, RunConfig};
use super::{csv_text, load_model, record_maps, select, with_threads, write_file};
use crate::data::{load_hazard_weights, DatasetManifest, Split};
use crate::error::Result;
use crate::objective::reduced_score;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub image_id: String,
    pub label: u8,
    pub score: f64,
    pub hazard_weight: f64,
    pub weighted_score: f64,
}

/// Scores the records of `split` (all records for `None`) in manifest order.
/// When the config names a hazard sidecar it replaces the manifest's weights.
pub fn score(
    config: &RunConfig,
    checkpoint: &Path,
    manifest: &DatasetManifest,
    split: Option<Split>,
) -> Result<Vec<ScoreRow>> {
    config.validate()?;
    let manifest = match &config.paths.hazard_sidecar {
        Some(p) => load_hazard_weights(manifest, Some(p))?,
        None => manifest.clone(),
    };
    with_threads(config.deterministic, || match config.precision {
        Precision::F64 => score_impl::<f64>(config, checkpoint, &manifest, split),
        Precision::F32 => score_impl::<f32>(config, checkpoint, &manifest, split),
    })?
}

fn score_impl<T: Scalar>(
    config: &RunConfig,
    checkpoint: &Path,
    manifest: &DatasetManifest,
    split: Option<Split>,
) -> Result<Vec<ScoreRow>> {
    let model = load_model::<T>(config, checkpoint)?;
    let records = select(manifest, split);
    let maps = record_maps(&model, manifest, &records)?;
    Ok(records
        .iter()
        .zip(&maps)
        .map(|(r, m)| {
            let s = reduced_score(m, config.score_reduction).to_f64_lossy();
            ScoreRow {
                image_id: r.image_id.clone(),
                label: r.label,
                score: s,
                hazard_weight: r.hazard_weight,
                weighted_score: r.hazard_weight * s,
            }
        })
        .collect())
}

/// `image_id,label,score,hazard_weight,weighted_score`.
pub fn write_scores_csv(rows: &[ScoreRow], path: &Path) -> Result<()> {
    let mut out = vec![["image_id", "label", "score", "hazard_weight", "weighted_score"]
        .map(String::from)
        .to_vec()];
    for r in rows {
        out.push(vec![
            r.image_id.clone(),
            r.label.to_string(),
            r.score.to_string(),
            r.hazard_weight.to_string(),
            r.weighted_score.to_string(),
        ]);
    }
    write_file(path, csv_text(out)?)
}
