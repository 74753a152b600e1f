//! Explainability outputs: Gaussian receptive-field upsampling, unified
//! display ranges, colormap rendering, overlays and score histograms.

mod colormap;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

pub use colormap::COLORMAP;

use crate::backbone::FieldGeometry;
use crate::error::{Error, Result};
use crate::objective::AnomalyMap;
use crate::scalar::Scalar;

/// Isotropic 2-D Gaussian density centered at `(a1, a2)` evaluated at `(x, y)`.
pub fn gaussian2d<T: Scalar>(a1: T, a2: T, delta: T, x: T, y: T) -> Result<T> {
    if !(delta > T::zero()) {
        return Err(Error::rejected(format!("gaussian std-dev {delta} must be positive")));
    }
    let two = T::of(2.0);
    let var = delta * delta;
    let d2 = (x - a1) * (x - a1) + (y - a2) * (y - a2);
    Ok((-d2 / (two * var)).exp() / (two * T::of(std::f64::consts::PI) * var))
}

/// Full-resolution heatmap, `height × width`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap<T> {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub delta: T,
    pub values: Vec<T>,
}

impl<T: Scalar> Heatmap<T> {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.width + col]
    }

    pub fn max(&self) -> T {
        self.values.iter().cloned().fold(T::neg_infinity(), T::max)
    }

    pub fn sum(&self) -> T {
        crate::scalar::pairwise_sum(&self.values)
    }
}

/// Which Gaussian evaluation [`upsample_with`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    /// Every bump evaluated over the whole grid.
    Reference,
    /// Bumps truncated to a square window of [`fast_radius`].
    #[default]
    Fast,
}

/// Half-width of the truncation window used by the fast path.
///
/// Outside the window a bump is below `peak·exp(−R²/2δ²)`; with `cells`
/// non-negative bumps the total truncated mass at any pixel stays under
/// `5e-7` of the heatmap maximum, which is itself at least the largest bump
/// sampled half a pixel off its center.
pub fn fast_radius(delta: f64, cells: usize) -> f64 {
    (2.0 * delta * delta * (2e6 * cells.max(1) as f64).ln() + 0.5).sqrt()
}

/// Gaussian upsampling: starting from zero, every map cell `q` with field
/// center `(c1, c2)` adds `q · G₂(c1, c2, δ)` over the `size` grid.
pub fn upsample<T: Scalar>(
    map: &AnomalyMap<T>,
    geom: &FieldGeometry,
    size: (usize, usize),
    delta: T,
) -> Result<Heatmap<T>> {
    upsample_with(map, geom, size, delta, UpsampleMode::Reference)
}

pub fn upsample_with<T: Scalar>(
    map: &AnomalyMap<T>,
    geom: &FieldGeometry,
    size: (usize, usize),
    delta: T,
    mode: UpsampleMode,
) -> Result<Heatmap<T>> {
    if (map.rows, map.cols) != geom.out_dims {
        return Err(Error::rejected(format!(
            "anomaly map {}x{} does not match field geometry {:?}",
            map.rows, map.cols, geom.out_dims
        )));
    }
    if !(delta > T::zero()) {
        return Err(Error::rejected(format!("gaussian std-dev {delta} must be positive")));
    }
    let (h, w) = size;
    let mut out = vec![T::zero(); h * w];
    let two_var = T::of(2.0) * delta * delta;
    let norm = T::one() / (T::of(2.0 * std::f64::consts::PI) * delta * delta);
    let radius = fast_radius(delta.to_f64_lossy(), map.rows * map.cols);

    let window = |center: f64, len: usize| -> (usize, usize) {
        match mode {
            UpsampleMode::Reference => (0, len),
            UpsampleMode::Fast => {
                let lo = (center - radius).ceil().max(0.0) as usize;
                let hi = ((center + radius).floor() + 1.0).clamp(0.0, len as f64) as usize;
                (lo.min(hi), hi)
            }
        }
    };

    let mut row_f = vec![T::zero(); h];
    let mut col_f = vec![T::zero(); w];
    for r in 0..map.rows {
        for c in 0..map.cols {
            let q = map.get(r, c);
            if q == T::zero() {
                continue;
            }
            let (c1, c2) = geom.center(r, c);
            let (r_lo, r_hi) = window(c1, h);
            let (k_lo, k_hi) = window(c2, w);
            let (a1, a2) = (T::of(c1), T::of(c2));
            for x in r_lo..r_hi {
                let d = T::of(x as f64) - a1;
                row_f[x] = (-(d * d) / two_var).exp();
            }
            for y in k_lo..k_hi {
                let d = T::of(y as f64) - a2;
                col_f[y] = (-(d * d) / two_var).exp();
            }
            let scale = q * norm;
            for x in r_lo..r_hi {
                let rs = scale * row_f[x];
                let row = &mut out[x * w..(x + 1) * w];
                for y in k_lo..k_hi {
                    row[y] += rs * col_f[y];
                }
            }
        }
    }
    Ok(Heatmap {
        image_id: map.image_id.clone(),
        height: h,
        width: w,
        delta,
        values: out,
    })
}

/// Color scale shared by every image rendered in one call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplayRange {
    pub lo: f64,
    pub hi: f64,
    pub quartile: f64,
}

/// `[min, max · quartile]`. When that collapses (`hi ≤ lo`) the upper end
/// falls back to `max`; a constant collection gets `[v, v + 1]` so the range
/// stays non-empty.
pub fn display_range(values: impl IntoIterator<Item = f64>, quartile: f64) -> Result<DisplayRange> {
    if !(quartile > 0.0 && quartile <= 1.0) {
        return Err(Error::rejected(format!("quartile {quartile} outside (0, 1]")));
    }
    let mut lo = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut any = false;
    for v in values {
        any = true;
        lo = lo.min(v);
        max = max.max(v);
    }
    if !any {
        return Err(Error::rejected("display range of an empty collection"));
    }
    let mut hi = max * quartile;
    if hi <= lo {
        hi = max;
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    Ok(DisplayRange { lo, hi, quartile })
}

/// Colormap index for `v`: clipped to `[lo, hi]`, scaled to `0..=255`, rounded
/// half-up.
#[inline]
pub fn colormap_index(v: f64, range: &DisplayRange) -> usize {
    let t = ((v - range.lo) / (range.hi - range.lo)).clamp(0.0, 1.0);
    ((t * 255.0 + 0.5).floor() as usize).min(255)
}

pub fn render<T: Scalar>(heatmap: &Heatmap<T>, range: &DisplayRange) -> RgbImage {
    let mut img = RgbImage::new(heatmap.width as u32, heatmap.height as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        let idx = colormap_index(heatmap.values[i].to_f64_lossy(), range);
        *px = Rgb(COLORMAP[idx]);
    }
    img
}

/// `(1 − α)·raw + α·rendered` per channel, rounded half-up.
pub fn overlay(raw: &RgbImage, rendered: &RgbImage, alpha: f64) -> Result<RgbImage> {
    if raw.dimensions() != rendered.dimensions() {
        return Err(Error::rejected(format!(
            "overlay of {:?} and {:?} images",
            raw.dimensions(),
            rendered.dimensions()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::rejected(format!("overlay alpha {alpha} outside [0, 1]")));
    }
    let mut out = raw.clone();
    for (o, (a, b)) in out.pixels_mut().zip(raw.pixels().zip(rendered.pixels())) {
        for ch in 0..3 {
            let v = (1.0 - alpha) * a[ch] as f64 + alpha * b[ch] as f64;
            o[ch] = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

/// Score counts per label over shared bin edges.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` edges spanning `[min, max]`.
    pub edges: Vec<f64>,
    pub normal: Vec<usize>,
    pub anomalous: Vec<usize>,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.normal.len()
    }

    /// `bin_lo,bin_hi,normal_count,anomalous_count`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,normal_count,anomalous_count\n");
        for b in 0..self.bins() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                self.edges[b],
                self.edges[b + 1],
                self.normal[b],
                self.anomalous[b]
            ));
        }
        s
    }
}

pub fn histogram(scores: &[(f64, u8)], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::rejected("histogram needs at least one bin"));
    }
    if scores.is_empty() {
        return Err(Error::rejected("histogram of an empty score list"));
    }
    let lo = scores.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let hi = scores.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut normal = vec![0; bins];
    let mut anomalous = vec![0; bins];
    for &(s, label) in scores {
        let b = if hi > lo {
            (((s - lo) / (hi - lo) * bins as f64).floor() as usize).min(bins - 1)
        } else {
            0
        };
        if label == 0 {
            normal[b] += 1;
        } else {
            anomalous[b] += 1;
        }
    }
    Ok(Histogram {
        edges,
        normal,
        anomalous,
    })
}

/// Writes a little-endian grayscale PFM (`Pf`, scale −1, rows bottom-to-top).
pub fn write_pfm<T: Scalar>(heatmap: &Heatmap<T>, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    pfm_bytes(heatmap)
        .and_then(|b| w.write_all(&b))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn pfm_bytes<T: Scalar>(heatmap: &Heatmap<T>) -> std::io::Result<Vec<u8>> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", heatmap.width, heatmap.height).into_bytes();
    for r in (0..heatmap.height).rev() {
        for c in 0..heatmap.width {
            out.extend_from_slice(&(heatmap.get(r, c).to_f64_lossy() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn png_bytes(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::Data(format!("png encode: {e}")))?;
    Ok(buf.into_inner())
}

pub fn write_png(img: &RgbImage, path: &Path) -> Result<()> {
    let bytes = png_bytes(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Fraction of heatmap mass on pixels within Euclidean distance `dilation` of
/// a mask pixel. `mask` is row-major with the heatmap's dimensions.
pub fn mass_inside_mask<T: Scalar>(heatmap: &Heatmap<T>, mask: &[bool], dilation: f64) -> Result<f64> {
    if mask.len() != heatmap.values.len() {
        return Err(Error::rejected(format!(
            "mask has {} pixels, heatmap {}",
            mask.len(),
            heatmap.values.len()
        )));
    }
    let dilated = dilate(mask, heatmap.height, heatmap.width, dilation);
    let mut inside = 0.0;
    let mut total = 0.0;
    for (v, m) in heatmap.values.iter().zip(&dilated) {
        let v = v.to_f64_lossy();
        total += v;
        if *m {
            inside += v;
        }
    }
    if total <= 0.0 {
        return Ok(0.0);
    }
    Ok(inside / total)
}

/// Disk dilation of a binary mask.
pub fn dilate(mask: &[bool], h: usize, w: usize, radius: f64) -> Vec<bool> {
    let r = radius.max(0.0);
    let ri = r.floor() as isize;
    let mut out = vec![false; mask.len()];
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    if ((dy * dy + dx * dx) as f64) > r * r {
                        continue;
                    }
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        out[yy as usize * w + xx as usize] = true;
                    }
                }
            }
        }
    }
    out
}
