use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{Precision, RunConfig};
use super::{batch_maps, csv_text, ensure_dir, opt_f64, with_threads, write_file};
use crate::backbone::Backbone;
use crate::data::{load_batch, Batch, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::eval::roc_auc;
use crate::numerics::{adam_step, AdamState, Blob, Checkpoint};
use crate::objective::{fcdd_loss_with_grad, pseudo_huber_backward, pseudo_huber_map, reduced_score, LabeledBatch};
use crate::scalar::Scalar;

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:03}.ckpt")
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub mean_train_loss: f64,
    /// `None` when the calibration split lacks a class.
    pub cal_auc: Option<f64>,
    /// `None` for epochs restored from a checkpoint.
    pub wall_seconds: Option<f64>,
    pub clamp_events: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> Result<String> {
        let mut rows = vec![["epoch", "mean_train_loss", "cal_auc", "wall_seconds", "clamp_events"]
            .map(String::from)
            .to_vec()];
        for r in &self.rows {
            rows.push(vec![
                r.epoch.to_string(),
                r.mean_train_loss.to_string(),
                opt_f64(r.cal_auc),
                opt_f64(r.wall_seconds),
                r.clamp_events.to_string(),
            ]);
        }
        csv_text(rows)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    pub best_epoch: usize,
    pub best_cal_auc: Option<f64>,
    pub checkpoint_dir: PathBuf,
}

impl TrainOutcome {
    pub fn best_checkpoint(&self) -> PathBuf {
        self.checkpoint_dir.join(BEST_CHECKPOINT)
    }

    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.checkpoint_dir.join(epoch_checkpoint_name(epoch))
    }
}

/// Trains on the manifest's train split and writes, under `out_dir`:
/// `config.resolved.json`, `history.csv`, `checkpoints/epoch-NNN.ckpt` for
/// every epoch and `checkpoints/best.ckpt` (highest calibration AUC, latest
/// epoch on ties). With `resume`, training continues from that checkpoint's
/// parameters, optimizer moments and epoch counter.
pub fn train(
    config: &RunConfig,
    manifest: &DatasetManifest,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    with_threads(config.deterministic, || match config.precision {
        Precision::F64 => train_impl::<f64>(config, manifest, out_dir, resume),
        Precision::F32 => train_impl::<f32>(config, manifest, out_dir, resume),
    })?
}

struct Progress {
    epoch: usize,
    best_epoch: usize,
    best_key: f64,
    history: TrainHistory,
}

fn train_impl<T: Scalar>(
    config: &RunConfig,
    manifest: &DatasetManifest,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    let train_recs = manifest.split_records(Split::Train);
    let n_anom = train_recs.iter().filter(|r| r.label == 1).count();
    if n_anom == 0 || n_anom == train_recs.len() {
        return Err(Error::Config(format!(
            "train split needs both labels; it has {} normal and {n_anom} anomalous images",
            train_recs.len() - n_anom
        )));
    }
    let ck_dir = out_dir.join(CHECKPOINT_DIR);
    ensure_dir(&ck_dir)?;
    write_file(&out_dir.join("config.resolved.json"), config.to_json())?;

    let size = config.input_size;
    let train_data: Batch<T> = load_batch(manifest, &train_recs, size)?;
    let cal_recs = manifest.split_records(Split::Cal);
    let cal_data: Batch<T> = load_batch(manifest, &cal_recs, size)?;
    let cal_both = cal_data.labels.contains(&0) && cal_data.labels.contains(&1);

    let mut model = Backbone::<T>::build(config.backbone_spec()?, config.seed)?;
    let mut adam = AdamState::new(config.adam(), &model.param_lens());
    let mut progress = Progress {
        epoch: 0,
        best_epoch: 0,
        best_key: f64::NEG_INFINITY,
        history: TrainHistory::default(),
    };
    if let Some(path) = resume {
        let ck = Checkpoint::load(path)?;
        model.import_params(&ck)?;
        progress = restore_state(&ck, &model, &mut adam)?;
        log::info!("resumed from {} at epoch {}", path.display(), progress.epoch);
    }
    if progress.epoch == 0 && config.epochs == 0 {
        let ck = state_checkpoint(&model, &adam, &progress)?;
        ck.save(&ck_dir.join(epoch_checkpoint_name(0)))?;
        ck.save(&ck_dir.join(BEST_CHECKPOINT))?;
    }

    let n = train_recs.len();
    for epoch in progress.epoch + 1..=config.epochs {
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut clamp_events = 0;
        for chunk in order.chunks(config.batch_size) {
            let (loss, clamps, grads) = batch_gradient(&model, &train_data, chunk)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("training loss is {loss} at epoch {epoch}")));
            }
            adam_step(&mut model.param_slices_mut(), &grads, &mut adam)?;
            loss_sum += loss * chunk.len() as f64;
            clamp_events += clamps;
        }
        if model.param_slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric(format!("non-finite parameters after epoch {epoch}")));
        }

        let cal_auc = if cal_both {
            let scores: Vec<f64> = batch_maps(&model, &cal_data)?
                .iter()
                .map(|m| reduced_score(m, config.score_reduction).to_f64_lossy())
                .collect();
            Some(roc_auc(&scores, &cal_data.labels)?)
        } else {
            None
        };
        let mean_loss = loss_sum / n as f64;
        progress.epoch = epoch;
        progress.history.rows.push(HistoryRow {
            epoch,
            mean_train_loss: mean_loss,
            cal_auc,
            wall_seconds: Some(t0.elapsed().as_secs_f64()),
            clamp_events,
        });
        let key = cal_auc.unwrap_or(f64::NEG_INFINITY);
        let is_best = progress.best_epoch == 0 || key >= progress.best_key;
        if is_best {
            progress.best_epoch = epoch;
            progress.best_key = key;
        }
        let ck = state_checkpoint(&model, &adam, &progress)?;
        ck.save(&ck_dir.join(epoch_checkpoint_name(epoch)))?;
        if is_best {
            ck.save(&ck_dir.join(BEST_CHECKPOINT))?;
        }
        write_file(&out_dir.join("history.csv"), progress.history.to_csv()?)?;
        log::info!(
            "epoch {epoch}/{}: loss {mean_loss:.6} cal_auc {} ({:.1}s)",
            config.epochs,
            opt_f64(cal_auc),
            t0.elapsed().as_secs_f64()
        );
    }
    write_file(&out_dir.join("history.csv"), progress.history.to_csv()?)?;
    Ok(TrainOutcome {
        best_cal_auc: progress.best_key.is_finite().then_some(progress.best_key),
        best_epoch: progress.best_epoch,
        history: progress.history,
        checkpoint_dir: ck_dir,
    })
}

/// Mean FCDD loss of the images `idx` and its parameter gradient. Images run
/// in parallel; gradients are summed in batch order.
fn batch_gradient<T: Scalar>(model: &Backbone<T>, data: &Batch<T>, idx: &[usize]) -> Result<(f64, usize, Vec<Vec<T>>)> {
    let passes = idx
        .par_iter()
        .map(|&i| model.forward_traced(&data.images.slice_image(i)))
        .collect::<Result<Vec<_>>>()?;
    let maps = passes
        .iter()
        .map(|(s, _)| pseudo_huber_map(s, None).remove(0))
        .collect();
    let labels = idx.iter().map(|&i| data.labels[i]).collect();
    let out = fcdd_loss_with_grad(&LabeledBatch::unweighted(maps, labels)?)?;
    let per_image = passes
        .par_iter()
        .zip(out.map_grads.par_iter())
        .map(|((score, trace), g)| {
            let upstream = pseudo_huber_backward(score, std::slice::from_ref(g))?;
            Ok(model.backward(trace, &upstream)?.1)
        })
        .collect::<Result<Vec<Vec<Vec<T>>>>>()?;
    let mut iter = per_image.into_iter();
    let mut total = iter.next().expect("non-empty batch");
    for g in iter {
        for (acc, part) in total.iter_mut().zip(g) {
            for (a, b) in acc.iter_mut().zip(part) {
                *a += b;
            }
        }
    }
    Ok((out.loss.to_f64_lossy(), out.clamp_events, total))
}

// Checkpoint blobs beyond the parameters. Wall-clock times are left out so
// checkpoints stay byte-identical across runs.
const ADAM_STEP: &str = "adam.step";
const EPOCH: &str = "train.epoch";
const BEST_EPOCH: &str = "train.best_epoch";
const BEST_KEY: &str = "train.best_cal_auc";
const HISTORY: &str = "train.history";

fn state_checkpoint<T: Scalar>(model: &Backbone<T>, adam: &AdamState<T>, p: &Progress) -> Result<Checkpoint> {
    let mut ck = Checkpoint::default();
    for b in model.export_params() {
        ck.push(b)?;
    }
    let names = model.param_names();
    let lens = model.param_lens();
    for (kind, moments) in [("m", &adam.m), ("v", &adam.v)] {
        for ((name, len), vals) in names.iter().zip(&lens).zip(moments) {
            ck.push(Blob::new(
                format!("adam.{kind}.{name}"),
                vec![*len],
                vals.iter().map(|v| v.to_f64_lossy()).collect(),
            )?)?;
        }
    }
    ck.push(Blob::scalar(ADAM_STEP, adam.step as f64))?;
    ck.push(Blob::scalar(EPOCH, p.epoch as f64))?;
    ck.push(Blob::scalar(BEST_EPOCH, p.best_epoch as f64))?;
    ck.push(Blob::scalar(BEST_KEY, p.best_key))?;
    let mut hist = Vec::with_capacity(p.history.rows.len() * 3);
    for r in &p.history.rows {
        hist.extend([r.mean_train_loss, r.cal_auc.unwrap_or(f64::NAN), r.clamp_events as f64]);
    }
    ck.push(Blob::new(HISTORY, vec![p.history.rows.len(), 3], hist)?)?;
    Ok(ck)
}

fn scalar_blob(ck: &Checkpoint, name: &str) -> Result<f64> {
    let b = ck.require(name)?;
    b.values
        .first()
        .copied()
        .ok_or_else(|| Error::Checkpoint(format!("blob {name} is empty")))
}

fn restore_state<T: Scalar>(ck: &Checkpoint, model: &Backbone<T>, adam: &mut AdamState<T>) -> Result<Progress> {
    for (kind, moments) in [("m", &mut adam.m), ("v", &mut adam.v)] {
        for (name, slot) in model.param_names().iter().zip(moments.iter_mut()) {
            let b = ck.require(&format!("adam.{kind}.{name}"))?;
            if b.values.len() != slot.len() {
                return Err(Error::Checkpoint(format!(
                    "adam.{kind}.{name} has {} values",
                    b.values.len()
                )));
            }
            for (d, &s) in slot.iter_mut().zip(&b.values) {
                *d = T::of(s);
            }
        }
    }
    adam.step = scalar_blob(ck, ADAM_STEP)? as u64;
    let h = ck.require(HISTORY)?;
    let rows = h
        .values
        .chunks(3)
        .enumerate()
        .map(|(i, v)| HistoryRow {
            epoch: i + 1,
            mean_train_loss: v[0],
            cal_auc: (!v[1].is_nan()).then_some(v[1]),
            wall_seconds: None,
            clamp_events: v[2] as usize,
        })
        .collect();
    Ok(Progress {
        epoch: scalar_blob(ck, EPOCH)? as usize,
        best_epoch: scalar_blob(ck, BEST_EPOCH)? as usize,
        best_key: scalar_blob(ck, BEST_KEY)?,
        history: TrainHistory { rows },
    })
}
