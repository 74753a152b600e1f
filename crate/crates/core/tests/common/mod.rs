//! Independent oracles shared by the integration suites. Nothing here calls
//! into the code it is used to check, apart from building inputs.

#![allow(dead_code)]

use fcdd::backbone::{Backbone, BackboneSpec, FieldGeometry, LayerSpec};
use fcdd::numerics::{Dims, Tensor4};
use fcdd::objective::{pseudo_huber_map, AnomalyMap, LabeledBatch};
use fcdd::{objective, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(dims: Dims, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    Tensor4::from_fn(dims, |_, _, _, _| rng.gen_range(lo..hi))
}

/// Random layer stack of at most `max_layers` entries (the 1×1 projection
/// included) on a random input no larger than `max_side`, retried until it
/// validates.
pub fn random_spec(rng: &mut ChaCha8Rng, max_layers: usize, max_side: usize, allow_padding: bool) -> BackboneSpec {
    loop {
        let h = rng.gen_range(8..=max_side);
        let w = rng.gen_range(8..=max_side);
        let n = rng.gen_range(0..max_layers);
        let mut layers = Vec::with_capacity(n + 1);
        for _ in 0..n {
            layers.push(match rng.gen_range(0..3) {
                0 => {
                    let k = rng.gen_range(1..=5);
                    let p = if allow_padding { rng.gen_range(0..=k / 2) } else { 0 };
                    LayerSpec::conv(rng.gen_range(1..=3), k, rng.gen_range(1..=2), p)
                }
                1 => LayerSpec::leaky(),
                _ => {
                    let k = rng.gen_range(2..=3);
                    LayerSpec::pool(k, rng.gen_range(1..=k))
                }
            });
        }
        layers.push(LayerSpec::conv(1, 1, 1, 0));
        let spec = BackboneSpec {
            name: "random".into(),
            in_channels: rng.gen_range(1..=2),
            input_size: [h, w],
            layers,
            out_channels: 1,
        };
        if spec.validate().is_ok() {
            return spec;
        }
    }
}

/// Which output cells change when input pixel `(py, px)` (all channels) is
/// raised by `bump`.
pub fn changed_cells(
    net: &Backbone<f64>,
    x: &Tensor,
    base: &Tensor,
    py: usize,
    px: usize,
    bump: f64,
) -> Vec<(usize, usize)> {
    let mut probe = x.clone();
    let d = x.dims();
    for c in 0..d.c {
        let v = probe.get(0, c, py, px);
        probe.set(0, c, py, px, v + bump);
    }
    let y = net.forward(&probe).unwrap();
    let od = y.dims();
    let mut out = Vec::new();
    for r in 0..od.h {
        for col in 0..od.w {
            if y.get(0, 0, r, col) != base.get(0, 0, r, col) {
                out.push((r, col));
            }
        }
    }
    out
}

/// Copy of `net` with every weight replaced by its magnitude, so a large
/// positive input bump reaches every cell whose field covers it.
pub fn positive_weights(net: &Backbone<f64>) -> Backbone<f64> {
    let mut pos = net.clone();
    let flat: Vec<f64> = net.flat_params().iter().map(|v| v.abs().max(1e-3)).collect();
    pos.set_flat_params(&flat).unwrap();
    pos
}

/// Outcome of the pixel-perturbation geometry oracle for one spec.
#[derive(Debug, Default)]
pub struct PerturbationOutcome {
    pub cells_checked: usize,
    pub pixels_perturbed: usize,
    pub failures: Vec<String>,
}

/// Perturbs pixels around `cells_to_check` random output cells (plus random
/// pixels elsewhere) and checks that
/// - no perturbation reaches a cell farther than `ceil(extent/2)` from its
///   center, for random-signed weights;
/// - with positive weights, the bounding box of pixels that reach an interior
///   cell is `extent` wide and centered on `geom.center`.
pub fn perturbation_oracle(
    spec: &BackboneSpec,
    seed: u64,
    cells_to_check: usize,
    extra_pixels: usize,
) -> PerturbationOutcome {
    let mut rng = rng(seed);
    let geom = spec.receptive_field().unwrap();
    let [h, w] = spec.input_size;
    let net = Backbone::<f64>::build(spec.clone(), seed).unwrap();
    let pos = positive_weights(&net);
    let x = random_tensor(Dims::new(1, spec.in_channels, h, w), &mut rng, 0.5, 1.0);
    let base = net.forward(&x).unwrap();
    let base_pos = pos.forward(&x).unwrap();
    let (u, v) = geom.out_dims;
    let reach = (geom.extent as f64 / 2.0).ceil();
    let mut out = PerturbationOutcome::default();

    let check_reach = |cells: &[(usize, usize)], py: usize, px: usize, out: &mut PerturbationOutcome| {
        for &(r, c) in cells {
            let (cy, cx) = geom.center(r, c);
            if (py as f64 - cy).abs() > reach || (px as f64 - cx).abs() > reach {
                out.failures.push(format!(
                    "pixel ({py},{px}) reached cell ({r},{c}) centered at ({cy},{cx}), extent {}",
                    geom.extent
                ));
            }
        }
    };

    for _ in 0..cells_to_check {
        let (r, c) = (rng.gen_range(0..u), rng.gen_range(0..v));
        out.cells_checked += 1;
        let (cy, cx) = geom.center(r, c);
        let margin = reach + 2.0;
        let rows = ((cy - margin).floor().max(0.0) as usize)..=((cy + margin).ceil().min(h as f64 - 1.0) as usize);
        let cols = ((cx - margin).floor().max(0.0) as usize)..=((cx + margin).ceil().min(w as f64 - 1.0) as usize);
        let (mut min_y, mut max_y, mut min_x, mut max_x) = (usize::MAX, 0, usize::MAX, 0);
        for py in rows.clone() {
            for px in cols.clone() {
                out.pixels_perturbed += 1;
                let hit = changed_cells(&net, &x, &base, py, px, 0.37);
                check_reach(&hit, py, px, &mut out);
                if changed_cells(&pos, &x, &base_pos, py, px, 1e3).contains(&(r, c)) {
                    min_y = min_y.min(py);
                    max_y = max_y.max(py);
                    min_x = min_x.min(px);
                    max_x = max_x.max(px);
                }
            }
        }
        if min_y == usize::MAX {
            out.failures.push(format!("cell ({r},{c}) unreachable from any pixel"));
            continue;
        }
        let half = (geom.extent as f64 - 1.0) / 2.0;
        let interior =
            cy - half >= 0.0 && cy + half <= h as f64 - 1.0 && cx - half >= 0.0 && cx + half <= w as f64 - 1.0;
        if interior {
            let fy = (min_y + max_y) as f64 / 2.0;
            let fx = (min_x + max_x) as f64 / 2.0;
            let (ey, ex) = (max_y - min_y + 1, max_x - min_x + 1);
            if (fy, fx) != (cy, cx) || ey != geom.extent || ex != geom.extent {
                out.failures.push(format!(
                    "cell ({r},{c}): footprint center ({fy},{fx}) size {ey}x{ex}, geometry says ({cy},{cx}) size {}",
                    geom.extent
                ));
            }
        }
    }
    for _ in 0..extra_pixels {
        let (py, px) = (rng.gen_range(0..h), rng.gen_range(0..w));
        out.pixels_perturbed += 1;
        let hit = changed_cells(&net, &x, &base, py, px, 0.37);
        check_reach(&hit, py, px, &mut out);
    }
    out
}

/// Σ_q q·G₂ evaluated pixel by pixel with its own Gaussian.
pub fn dense_upsample(map: &AnomalyMap<f64>, geom: &FieldGeometry, h: usize, w: usize, delta: f64) -> Vec<f64> {
    let norm = 1.0 / (2.0 * std::f64::consts::PI * delta * delta);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for r in 0..map.rows {
                for c in 0..map.cols {
                    let (cy, cx) = geom.center(r, c);
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    acc += map.values[r * map.cols + c] * norm * (-d2 / (2.0 * delta * delta)).exp();
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Random admissible geometry for a `u×v` map: every field center lies inside
/// the returned `(h, w)` grid.
pub fn random_geometry(rng: &mut ChaCha8Rng, u: usize, v: usize) -> (FieldGeometry, usize, usize) {
    let jump = rng.gen_range(1..=8);
    let extent = jump + 2 * rng.gen_range(0..=6);
    let start = (extent as f64 - 1.0) / 2.0 - rng.gen_range(0..=extent / 2) as f64;
    let start = start.max(0.0);
    let h = (start + (u - 1) as f64 * jump as f64).floor() as usize + 1 + rng.gen_range(0..=4);
    let w = (start + (v - 1) as f64 * jump as f64).floor() as usize + 1 + rng.gen_range(0..=4);
    (
        FieldGeometry {
            jump,
            extent,
            start,
            out_dims: (u, v),
        },
        h,
        w,
    )
}

/// Exact AUC by comparing every (anomalous, normal) pair; ties count 1/2.
pub fn pair_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// (tp, fp, tn, fn) under `score ≥ t` by a plain loop.
pub fn recount(scores: &[f64], labels: &[u8], t: f64) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= t, l == 1) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, false) => c.2 += 1,
            (false, true) => c.3 += 1,
        }
    }
    c
}

pub fn f1_of(c: (usize, usize, usize, usize)) -> f64 {
    let (tp, fp, _, fn_) = c;
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Best F1 over every cut: each distinct score, and +∞ (nothing flagged).
pub fn brute_best_f1(scores: &[f64], labels: &[u8]) -> f64 {
    let mut cuts: Vec<f64> = scores.to_vec();
    cuts.push(f64::INFINITY);
    cuts.push(f64::NEG_INFINITY);
    cuts.iter()
        .map(|&t| f1_of(recount(scores, labels, t)))
        .fold(0.0, f64::max)
}

pub fn brute_best_youden(scores: &[f64], labels: &[u8]) -> f64 {
    let p = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n = labels.len() as f64 - p;
    let mut cuts: Vec<f64> = scores.to_vec();
    cuts.push(f64::INFINITY);
    cuts.push(f64::NEG_INFINITY);
    cuts.iter()
        .map(|&t| {
            let (tp, fp, _, _) = recount(scores, labels, t);
            tp as f64 / p - fp as f64 / n
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Random scores with deliberate ties and both labels present.
pub fn random_scored(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<u8>) {
    loop {
        let levels = rng.gen_range(2..=n.max(2));
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 * 0.37 - 1.0).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        if labels.contains(&0) && labels.contains(&1) {
            return (scores, labels);
        }
    }
}

/// Loss of `net` with parameters `flat` on a labeled batch, through the
/// public forward path.
pub fn composed_loss(net: &mut Backbone<f64>, flat: &[f64], x: &Tensor, labels: &[u8]) -> f64 {
    net.set_flat_params(flat).unwrap();
    let y = net.forward(x).unwrap();
    let maps = pseudo_huber_map(&y, None);
    objective::fcdd_loss(&LabeledBatch::unweighted(maps, labels.to_vec()).unwrap()).unwrap()
}

/// Analytic gradient of [`composed_loss`], flattened in parameter order.
pub fn composed_grad(net: &Backbone<f64>, x: &Tensor, labels: &[u8]) -> Vec<f64> {
    let (y, trace) = net.forward_traced(x).unwrap();
    let maps = pseudo_huber_map(&y, None);
    let out = objective::fcdd_loss_with_grad(&LabeledBatch::unweighted(maps, labels.to_vec()).unwrap()).unwrap();
    let up = objective::pseudo_huber_backward(&y, &out.map_grads).unwrap();
    let (_, grads) = net.backward(&trace, &up).unwrap();
    grads.concat()
}

/// Two conv/leaky/pool blocks and the projection on a 16×16 input.
pub fn two_block_spec() -> BackboneSpec {
    BackboneSpec {
        name: "two-block".into(),
        in_channels: 3,
        input_size: [16, 16],
        layers: vec![
            LayerSpec::conv(4, 3, 1, 1),
            LayerSpec::leaky(),
            LayerSpec::pool(2, 2),
            LayerSpec::conv(6, 3, 1, 1),
            LayerSpec::leaky(),
            LayerSpec::pool(2, 2),
            LayerSpec::conv(1, 1, 1, 0),
        ],
        out_channels: 1,
    }
}

/// A fast training profile for pipeline tests: 32×32 inputs and a narrow
/// three-block network.
pub fn tiny_config(seed: u64) -> fcdd::pipeline::RunConfig {
    let mut cfg = fcdd::pipeline::RunConfig::desk();
    cfg.backbone = fcdd::pipeline::BackboneChoice::Inline(BackboneSpec::three_block("tiny", [32, 32], [4, 8, 8], 1));
    cfg.input_size = [32, 32];
    cfg.batch_size = 8;
    cfg.epochs = 3;
    cfg.seed = seed;
    cfg.deterministic = true;
    cfg
}

pub fn tiny_corpus(dir: &std::path::Path, n_normal: usize, n_anomalous: usize, seed: u64) -> fcdd::DatasetManifest {
    let spec = fcdd::SyntheticSpec {
        n_normal,
        n_anomalous,
        image_size: [32, 32],
        blob_radius: [4.0, 7.0],
        seed,
        ..Default::default()
    };
    fcdd::data::synth(&spec, dir).unwrap()
}
