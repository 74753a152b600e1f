use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{Precision, RangeScope, RunConfig};
use super::{csv_text, ensure_dir, load_model, record_maps, select, with_threads, write_file};
use crate::data::{load_mask, load_rgb, mask_path, DatasetManifest, Record, Split, SYNTHETIC_SOURCE};
use crate::error::{Error, Result};
use crate::heatmap::{
    display_range, histogram, mass_inside_mask, overlay, pfm_bytes, png_bytes, render, upsample_with, DisplayRange,
    Heatmap, Histogram,
};
use crate::objective::{reduced_score, AnomalyMap};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Default)]
pub struct HeatmapOptions {
    pub split: Option<Split>,
    /// Root holding ground-truth masks (`masks/<class>/anomalous/..`). Defaults
    /// to the manifest root for synthetic corpora.
    pub masks_root: Option<PathBuf>,
    /// Decision threshold used to mark detected anomalies in `locality.csv`.
    pub threshold: Option<f64>,
}

/// Heatmap mass near the ground truth of one anomalous image.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalityRow {
    pub image_id: String,
    pub score: f64,
    /// `score ≥ threshold`, when a threshold was given.
    pub detected: Option<bool>,
    /// Fraction of heatmap mass inside the mask dilated by half the
    /// receptive-field extent.
    pub mass_inside: f64,
}

#[derive(Debug, Clone)]
pub struct HeatmapSummary {
    /// The shared range for batch scope; `None` for per-image ranges.
    pub range: Option<DisplayRange>,
    pub histogram: Histogram,
    pub locality: Vec<LocalityRow>,
    pub images: usize,
}

/// Output file stem for an image id: extension dropped, `/` becomes `__`.
pub fn heatmap_file_stem(image_id: &str) -> String {
    let base = image_id.rsplit(['/', '\\']).next().unwrap_or(image_id);
    let trimmed = match base.rfind('.') {
        Some(dot) if dot > 0 => &image_id[..image_id.len() - (base.len() - dot)],
        _ => image_id,
    };
    trimmed.replace(['/', '\\'], "__")
}

/// Writes `<stem>_heatmap.png`, `<stem>_overlay.png` and `<stem>.pfm` per
/// image, `histogram.csv` over image scores and, when masks are available,
/// `locality.csv`. With batch scope one display range covers every heatmap
/// in the call.
pub fn heatmaps(
    config: &RunConfig,
    checkpoint: &Path,
    manifest: &DatasetManifest,
    out_dir: &Path,
    opts: &HeatmapOptions,
) -> Result<HeatmapSummary> {
    config.validate()?;
    ensure_dir(out_dir)?;
    with_threads(config.deterministic, || match config.precision {
        Precision::F64 => heatmaps_impl::<f64>(config, checkpoint, manifest, out_dir, opts),
        Precision::F32 => heatmaps_impl::<f32>(config, checkpoint, manifest, out_dir, opts),
    })?
}

fn heatmaps_impl<T: Scalar>(
    config: &RunConfig,
    checkpoint: &Path,
    manifest: &DatasetManifest,
    out_dir: &Path,
    opts: &HeatmapOptions,
) -> Result<HeatmapSummary> {
    let model = load_model::<T>(config, checkpoint)?;
    let geom = model.geometry();
    let delta = T::of(config.delta_for(&geom));
    let [h, w] = config.input_size;
    let records = select(manifest, opts.split);
    if records.is_empty() {
        return Err(Error::Data("no images selected for heatmaps".into()));
    }
    let maps = record_maps(&model, manifest, &records)?;
    let up = |m: &AnomalyMap<T>| upsample_with(m, &geom, (h, w), delta, config.upsample);

    // First pass only needs extremes; heatmaps are recomputed when rendering so
    // at most one per thread is alive.
    let range = match config.range_scope {
        RangeScope::Batch => {
            let extremes = maps
                .par_iter()
                .map(|m| {
                    let hm = up(m)?;
                    let lo = hm.values.iter().fold(f64::INFINITY, |a, v| a.min(v.to_f64_lossy()));
                    Ok([lo, hm.max().to_f64_lossy()])
                })
                .collect::<Result<Vec<_>>>()?;
            Some(display_range(extremes.into_iter().flatten(), config.quartile)?)
        }
        RangeScope::Image => None,
    };

    let masks_root = opts
        .masks_root
        .clone()
        .or_else(|| (manifest.source == SYNTHETIC_SOURCE).then(|| manifest.root.clone()));
    let dilation = geom.extent as f64 / 2.0;
    let scores: Vec<f64> = maps
        .iter()
        .map(|m| reduced_score(m, config.score_reduction).to_f64_lossy())
        .collect();

    let locality = records
        .par_iter()
        .zip(maps.par_iter())
        .zip(scores.par_iter())
        .map(|((r, m), &s)| {
            let hm = up(m)?;
            let rng = match range {
                Some(r) => r,
                None => display_range(hm.values.iter().map(|v| v.to_f64_lossy()), config.quartile)?,
            };
            write_outputs(manifest, r, &hm, &rng, config.overlay_alpha, out_dir)?;
            let mask = match (&masks_root, r.label) {
                (Some(root), 1) => mask_path(r).map(|p| root.join(p)).filter(|p| p.is_file()),
                _ => None,
            };
            mask.map(|p| -> Result<LocalityRow> {
                let mask = load_mask(&p, [h, w])?;
                Ok(LocalityRow {
                    image_id: r.image_id.clone(),
                    score: s,
                    detected: opts.threshold.map(|t| s >= t),
                    mass_inside: mass_inside_mask(&hm, &mask, dilation)?,
                })
            })
            .transpose()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();

    let labeled: Vec<(f64, u8)> = scores.iter().zip(&records).map(|(&s, r)| (s, r.label)).collect();
    let hist = histogram(&labeled, config.histogram_bins)?;
    write_file(&out_dir.join("histogram.csv"), hist.to_csv())?;
    if !locality.is_empty() {
        let mut rows = vec![["image_id", "score", "detected", "mass_inside"]
            .map(String::from)
            .to_vec()];
        for l in &locality {
            rows.push(vec![
                l.image_id.clone(),
                l.score.to_string(),
                l.detected.map(|d| d.to_string()).unwrap_or_default(),
                l.mass_inside.to_string(),
            ]);
        }
        write_file(&out_dir.join("locality.csv"), csv_text(rows)?)?;
    }
    Ok(HeatmapSummary {
        range,
        histogram: hist,
        locality,
        images: records.len(),
    })
}

fn write_outputs<T: Scalar>(
    manifest: &DatasetManifest,
    record: &Record,
    hm: &Heatmap<T>,
    range: &DisplayRange,
    alpha: f64,
    out_dir: &Path,
) -> Result<()> {
    let stem = heatmap_file_stem(&record.image_id);
    let rendered = render(hm, range);
    let raw = load_rgb(&manifest.resolve(record), [hm.height, hm.width])?;
    let blended = overlay(&raw, &rendered, alpha)?;
    write_file(&out_dir.join(format!("{stem}_heatmap.png")), png_bytes(&rendered)?)?;
    write_file(&out_dir.join(format!("{stem}_overlay.png")), png_bytes(&blended)?)?;
    let pfm = out_dir.join(format!("{stem}.pfm"));
    write_file(&pfm, pfm_bytes(hm).map_err(|e| Error::io(&pfm, e))?)
}
