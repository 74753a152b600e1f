//! The FCDD objective: pseudo-Huber anomaly maps, the labeled loss, and
//! plain / hazard-weighted image scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::{Dims, Tensor4};
use crate::scalar::{pairwise_sum, Scalar};

/// Lower clamp on `1 − exp(−m)` inside the anomalous log term.
pub const LOG_CLAMP: f64 = 1e-12;

/// Per-cell pseudo-Huber magnitudes for one image, `rows × cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap<T> {
    pub image_id: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> AnomalyMap<T> {
    pub fn new(image_id: impl Into<String>, rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::rejected(format!(
                "anomaly map {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(AnomalyMap {
            image_id: image_id.into(),
            rows,
            cols,
            values,
        })
    }

    pub fn uniform(image_id: impl Into<String>, rows: usize, cols: usize, value: T) -> Self {
        AnomalyMap {
            image_id: image_id.into(),
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.cols + col]
    }

    pub fn mean(&self) -> T {
        pairwise_sum(&self.values) / T::of((self.rows * self.cols) as f64)
    }
}

/// How an anomaly map collapses to an image score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreReduction {
    /// Σ over cells.
    #[default]
    Sum,
    /// Σ / (u·v).
    Mean,
}

/// `sqrt(‖z‖² + 1) − 1` per spatial cell, `z` the channel vector of the score
/// map. One map per image; ids are taken from `ids` when given.
pub fn pseudo_huber_map<T: Scalar>(score_map: &Tensor4<T>, ids: Option<&[String]>) -> Vec<AnomalyMap<T>> {
    let d = score_map.dims();
    let plane = d.plane_len();
    (0..d.n)
        .map(|n| {
            let img = score_map.image(n);
            let values = (0..plane)
                .map(|p| {
                    let mut sq = T::zero();
                    for c in 0..d.c {
                        let z = img[c * plane + p];
                        sq += z * z;
                    }
                    (sq + T::one()).sqrt() - T::one()
                })
                .collect();
            let image_id = ids.and_then(|ids| ids.get(n).cloned()).unwrap_or_else(|| n.to_string());
            AnomalyMap {
                image_id,
                rows: d.h,
                cols: d.w,
                values,
            }
        })
        .collect()
}

/// Chain rule through [`pseudo_huber_map`]: given `dL/dA` per map cell,
/// returns `dL/dz` shaped like the score map. `∂A/∂z_c = z_c / (A + 1)`.
pub fn pseudo_huber_backward<T: Scalar>(score_map: &Tensor4<T>, map_grads: &[Vec<T>]) -> Result<Tensor4<T>> {
    let d = score_map.dims();
    let plane = d.plane_len();
    if map_grads.len() != d.n || map_grads.iter().any(|g| g.len() != plane) {
        return Err(Error::rejected(format!("map gradients do not match score map {d}")));
    }
    let mut out = Tensor4::zeros(d);
    let z = score_map.as_slice();
    let o = out.as_mut_slice();
    for (n, g) in map_grads.iter().enumerate() {
        let base = n * d.image_len();
        for p in 0..plane {
            let mut sq = T::zero();
            for c in 0..d.c {
                let v = z[base + c * plane + p];
                sq += v * v;
            }
            let denom = (sq + T::one()).sqrt();
            for c in 0..d.c {
                let i = base + c * plane + p;
                o[i] = g[p] * z[i] / denom;
            }
        }
    }
    Ok(out)
}

/// Maps with binary labels (1 = anomalous) and strictly positive hazard
/// weights.
#[derive(Debug, Clone)]
pub struct LabeledBatch<T> {
    pub maps: Vec<AnomalyMap<T>>,
    pub labels: Vec<u8>,
    pub weights: Vec<f64>,
}

impl<T: Scalar> LabeledBatch<T> {
    pub fn new(maps: Vec<AnomalyMap<T>>, labels: Vec<u8>, weights: Vec<f64>) -> Result<Self> {
        if maps.len() != labels.len() || maps.len() != weights.len() {
            return Err(Error::rejected(format!(
                "batch has {} maps, {} labels, {} weights",
                maps.len(),
                labels.len(),
                weights.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::rejected(format!("label {l} is not binary")));
        }
        if let Some(w) = weights.iter().find(|&&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::rejected(format!("hazard weight {w} is not positive")));
        }
        Ok(LabeledBatch { maps, labels, weights })
    }

    /// Unit hazard weights.
    pub fn unweighted(maps: Vec<AnomalyMap<T>>, labels: Vec<u8>) -> Result<Self> {
        let n = maps.len();
        Self::new(maps, labels, vec![1.0; n])
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: T,
    /// `dL/dA` per map cell, same layout as each map.
    pub map_grads: Vec<Vec<T>>,
    /// Anomalous images whose log argument hit the clamp.
    pub clamp_events: usize,
}

/// Batch FCDD loss:
/// `(1/n) Σ_i [(1 − x_i)·m_i − x_i·log(1 − exp(−m_i))]`, `m_i` the mean of map
/// `i`. The log argument is clamped below at [`LOG_CLAMP`].
pub fn fcdd_loss<T: Scalar>(batch: &LabeledBatch<T>) -> Result<T> {
    Ok(fcdd_loss_with_grad(batch)?.loss)
}

pub fn fcdd_loss_with_grad<T: Scalar>(batch: &LabeledBatch<T>) -> Result<LossOutput<T>> {
    if batch.maps.is_empty() {
        return Err(Error::rejected("fcdd loss of an empty batch"));
    }
    let n = T::of(batch.maps.len() as f64);
    let eps = T::of(LOG_CLAMP);
    let mut terms = Vec::with_capacity(batch.maps.len());
    let mut map_grads = Vec::with_capacity(batch.maps.len());
    let mut clamp_events = 0;
    for (map, &label) in batch.maps.iter().zip(&batch.labels) {
        let cells = T::of(map.values.len() as f64);
        let m = map.mean();
        let (term, dterm_dm) = if label == 0 {
            (m, T::one())
        } else {
            // 1 − e^{−m} without cancellation for small m.
            let arg = -(-m).exp_m1();
            if arg < eps {
                clamp_events += 1;
                (-eps.ln(), T::zero())
            } else {
                // d/dm [−log(1 − e^{−m})] = −e^{−m} / (1 − e^{−m})
                (-arg.ln(), -(-m).exp() / arg)
            }
        };
        terms.push(term);
        let g = dterm_dm / (n * cells);
        map_grads.push(vec![g; map.values.len()]);
    }
    if clamp_events > 0 {
        log::warn!("degenerate anomalous map: {clamp_events} log argument(s) clamped at {LOG_CLAMP}");
    }
    Ok(LossOutput {
        loss: pairwise_sum(&terms) / n,
        map_grads,
        clamp_events,
    })
}

/// Σ over all map cells.
pub fn image_score<T: Scalar>(map: &AnomalyMap<T>) -> T {
    pairwise_sum(&map.values)
}

pub fn reduced_score<T: Scalar>(map: &AnomalyMap<T>, reduction: ScoreReduction) -> T {
    match reduction {
        ScoreReduction::Sum => image_score(map),
        ScoreReduction::Mean => map.mean(),
    }
}

/// `h · Σ map`. `h` must be strictly positive.
pub fn hazard_weighted_score<T: Scalar>(map: &AnomalyMap<T>, h: f64) -> Result<T> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::rejected(format!("hazard weight {h} must be positive")));
    }
    Ok(T::of(h) * image_score(map))
}

/// Convenience for single-channel tests: wraps `values` as a `1×1×rows×cols`
/// score map.
pub fn score_map_from_plane<T: Scalar>(rows: usize, cols: usize, values: Vec<T>) -> Result<Tensor4<T>> {
    Tensor4::from_vec(Dims::new(1, 1, rows, cols), values)
}
