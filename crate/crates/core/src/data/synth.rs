//! Seeded synthetic corpus: smooth textured backgrounds for normals, the same
//! kind of background plus irregular high-contrast blobs for anomalies.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, Record, ANOMALOUS_DIR, NORMAL_DIR, SYNTHETIC_SOURCE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Class names; every class gets `n_normal` + `n_anomalous` images.
    #[serde(default = "default_classes")]
    pub classes: Vec<String>,
    pub n_normal: usize,
    pub n_anomalous: usize,
    /// (height, width)
    pub image_size: [usize; 2],
    /// Inclusive range of blobs per anomalous image.
    pub blob_count: [usize; 2],
    /// Range of mean blob radius in pixels.
    pub blob_radius: [f64; 2],
    /// Std-dev of per-pixel noise on the [0, 1] scale.
    pub noise_level: f64,
    /// Peak-to-peak amplitude of the smooth background texture.
    #[serde(default = "default_texture")]
    pub texture_contrast: f64,
    pub seed: u64,
}

fn default_texture() -> f64 {
    0.15
}

fn default_classes() -> Vec<String> {
    vec!["synthetic".to_string()]
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: default_classes(),
            n_normal: 200,
            n_anomalous: 100,
            image_size: [64, 64],
            blob_count: [1, 3],
            blob_radius: [8.0, 14.0],
            noise_level: 0.04,
            texture_contrast: default_texture(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.classes.is_empty() {
            return bad("needs at least one class".into());
        }
        if self.image_size[0] < 4 || self.image_size[1] < 4 {
            return bad(format!("image size {:?} too small", self.image_size));
        }
        if self.blob_count[0] < 1 || self.blob_count[0] > self.blob_count[1] {
            return bad(format!("blob_count {:?} must satisfy 1 <= min <= max", self.blob_count));
        }
        if !(self.blob_radius[0] > 0.0 && self.blob_radius[0] <= self.blob_radius[1]) {
            return bad(format!(
                "blob_radius {:?} must satisfy 0 < min <= max",
                self.blob_radius
            ));
        }
        if !(self.noise_level >= 0.0) || !(self.texture_contrast >= 0.0) {
            return bad(format!(
                "noise_level {} and texture_contrast {} must be >= 0",
                self.noise_level, self.texture_contrast
            ));
        }
        Ok(())
    }
}

/// Mask location for an anomalous record written by [`synth`]:
/// `data/<class>/anomalous/x.png` maps to `masks/<class>/anomalous/x.png`.
pub fn mask_path(record: &Record) -> Option<PathBuf> {
    let rel = record.path.strip_prefix("data").ok()?;
    (record.label == 1).then(|| Path::new("masks").join(rel))
}

struct Generated {
    record: Record,
    image: RgbImage,
    mask: Option<GrayImage>,
}

/// Writes the corpus under `out_dir` (`data/`, `masks/`, `manifest.csv`) and
/// returns the unsplit manifest. Each image draws from its own ChaCha8 stream,
/// so output is byte-identical for a fixed spec.
pub fn synth(spec: &SyntheticSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for class in &spec.classes {
        for (label, sub, n) in [(0u8, NORMAL_DIR, spec.n_normal), (1u8, ANOMALOUS_DIR, spec.n_anomalous)] {
            for i in 0..n {
                jobs.push((class.clone(), label, sub, i));
            }
        }
    }
    let generated: Vec<Generated> = jobs
        .par_iter()
        .enumerate()
        .map(|(stream, (class, label, sub, i))| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(stream as u64);
            let tag = if *label == 1 { "a" } else { "n" };
            let name = format!("{class}_{tag}_{i:05}.png");
            let (image, mask) = render_image(spec, *label == 1, &mut rng);
            Generated {
                record: Record {
                    image_id: format!("{class}/{sub}/{name}"),
                    path: Path::new("data").join(class).join(sub).join(&name),
                    class: class.clone(),
                    label: *label,
                    split: None,
                    hazard_weight: 1.0,
                },
                image,
                mask,
            }
        })
        .collect();

    for g in &generated {
        let p = out_dir.join(&g.record.path);
        write_image(&p, |path| g.image.save(path))?;
        if let (Some(mask), Some(rel)) = (&g.mask, mask_path(&g.record)) {
            write_image(&out_dir.join(rel), |path| mask.save(path))?;
        }
    }
    let mut records: Vec<Record> = generated.into_iter().map(|g| g.record).collect();
    records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let manifest = DatasetManifest {
        records,
        seed: spec.seed,
        source: SYNTHETIC_SOURCE.to_string(),
        root: out_dir.to_path_buf(),
    };
    manifest.save(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

fn write_image(path: &Path, save: impl FnOnce(&Path) -> image::ImageResult<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save(path).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Value noise: random lattice every `cell` pixels, smooth interpolation.
fn value_noise(h: usize, w: usize, cell: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.gen::<f64>()).collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = y as f64 / cell as f64;
        let (y0, ty) = (fy.floor() as usize, smoothstep(fy.fract()));
        for x in 0..w {
            let fx = x as f64 / cell as f64;
            let (x0, tx) = (fx.floor() as usize, smoothstep(fx.fract()));
            let l = |yy: usize, xx: usize| lattice[yy * gw + xx];
            let top = l(y0, x0) * (1.0 - tx) + l(y0, x0 + 1) * tx;
            let bot = l(y0 + 1, x0) * (1.0 - tx) + l(y0 + 1, x0 + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Standard normal via Box–Muller.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn render_image(spec: &SyntheticSpec, anomalous: bool, rng: &mut ChaCha8Rng) -> (RgbImage, Option<GrayImage>) {
    let [h, w] = spec.image_size;
    let cell = (h.min(w) / 4).max(2);
    let noise = value_noise(h, w, cell, rng);
    // muted green-grey terrain tone
    let base = [
        0.35 + 0.1 * rng.gen::<f64>(),
        0.40 + 0.1 * rng.gen::<f64>(),
        0.30 + 0.1 * rng.gen::<f64>(),
    ];
    let mut px = vec![[0.0f64; 3]; h * w];
    for (i, p) in px.iter_mut().enumerate() {
        let tex = spec.texture_contrast * (noise[i] - 0.5);
        for c in 0..3 {
            p[c] = base[c] + tex + spec.noise_level * gaussian(rng);
        }
    }

    let mut mask = None;
    if anomalous {
        let mut m = vec![false; h * w];
        let n_blobs = rng.gen_range(spec.blob_count[0]..=spec.blob_count[1]);
        for _ in 0..n_blobs {
            let radius = rng.gen_range(spec.blob_radius[0]..=spec.blob_radius[1]);
            let margin = radius.min(h.min(w) as f64 / 2.0 - 1.0);
            let cy = rng.gen_range(margin..=(h as f64 - 1.0 - margin).max(margin));
            let cx = rng.gen_range(margin..=(w as f64 - 1.0 - margin).max(margin));
            // irregular outline r(θ) = R(1 + a1 sin(2θ+φ1) + a2 sin(3θ+φ2))
            let (a1, a2) = (rng.gen_range(0.0..0.25), rng.gen_range(0.0..0.2));
            let (p1, p2) = (rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3));
            // hot (fire-like) or dark (debris-like) blob
            let color = if rng.gen_bool(0.5) {
                [0.95, 0.45 + 0.3 * rng.gen::<f64>(), 0.05]
            } else {
                [0.05, 0.05, 0.08]
            };
            for y in 0..h {
                for x in 0..w {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    let theta = dy.atan2(dx);
                    let r = radius * (1.0 + a1 * (2.0 * theta + p1).sin() + a2 * (3.0 * theta + p2).sin());
                    if dy * dy + dx * dx <= r * r {
                        m[y * w + x] = true;
                        px[y * w + x] = color;
                    }
                }
            }
        }
        // the blob center pixel is always inside r ≥ 0.55R > 0
        mask = Some(GrayImage::from_fn(w as u32, h as u32, |x, y| {
            Luma([if m[y as usize * w + x as usize] { 255 } else { 0 }])
        }));
    }
    let image = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = px[y as usize * w + x as usize];
        Rgb(p.map(|v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8))
    });
    (image, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_normal: 3,
            n_anomalous: 4,
            image_size: [24, 20],
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn corpus_is_deterministic_with_masks() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = synth(&small(5), a.path()).unwrap();
        let mb = synth(&small(5), b.path()).unwrap();
        assert_eq!(ma.records, mb.records);
        assert_eq!(ma.records.len(), 7);
        for r in &ma.records {
            let x = fs::read(a.path().join(&r.path)).unwrap();
            let y = fs::read(b.path().join(&r.path)).unwrap();
            assert_eq!(x, y, "{}", r.image_id);
            if r.label == 1 {
                let mask = image::open(a.path().join(mask_path(r).unwrap())).unwrap().to_luma8();
                assert_eq!(mask.dimensions(), (20, 24));
                assert!(mask.pixels().any(|p| p[0] > 0), "{} mask empty", r.image_id);
            } else {
                assert!(mask_path(r).is_none());
            }
        }
        assert_eq!(
            fs::read(a.path().join("manifest.csv")).unwrap(),
            fs::read(b.path().join("manifest.csv")).unwrap()
        );
    }

    #[test]
    fn no_anomalies_means_all_normal() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            n_anomalous: 0,
            ..small(1)
        };
        let m = synth(&spec, dir.path()).unwrap();
        assert!(m.records.iter().all(|r| r.label == 0));
    }

    #[test]
    fn invalid_spec_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            blob_radius: [0.0, 1.0],
            ..small(1)
        };
        assert!(synth(&spec, dir.path()).is_err());
    }
}
