use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetManifest, Record, Split};
use crate::error::{Error, Result};

/// Train / calibration / test fractions.
pub const DEFAULT_RATIO: [f64; 3] = [0.65, 0.15, 0.20];

/// Largest-remainder apportionment of `n` items over `ratio`. Leftover items
/// go to the largest fractional parts, ties resolved train, cal, test.
pub fn split_counts(n: usize, ratio: [f64; 3]) -> Result<[usize; 3]> {
    let total: f64 = ratio.iter().sum();
    if (total - 1.0).abs() > 1e-9 || ratio.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::Config(format!(
            "split ratio {ratio:?} must be non-negative and sum to 1"
        )));
    }
    let exact: Vec<f64> = ratio.iter().map(|r| n as f64 * r).collect();
    let mut counts = [0usize; 3];
    for k in 0..3 {
        counts[k] = (exact[k] + 1e-9).floor() as usize;
    }
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    // stable: equal remainders keep train < cal < test priority
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    Ok(counts)
}

/// Stratified split by (class, label). Each stratum is shuffled with one
/// ChaCha8 stream seeded by `seed`, strata visited in sorted order.
pub fn split(manifest: &DatasetManifest, ratio: [f64; 3], seed: u64) -> Result<DatasetManifest> {
    split_counts(0, ratio)?;
    let mut strata: BTreeMap<(&str, u8), Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        strata.entry((r.class.as_str(), r.label)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![Split::Train; manifest.records.len()];
    for idx in strata.values_mut() {
        idx.sort_by(|&a, &b| manifest.records[a].image_id.cmp(&manifest.records[b].image_id));
        idx.shuffle(&mut rng);
        let [train, cal, _] = split_counts(idx.len(), ratio)?;
        for (pos, &i) in idx.iter().enumerate() {
            assignment[i] = if pos < train {
                Split::Train
            } else if pos < train + cal {
                Split::Cal
            } else {
                Split::Test
            };
        }
    }
    let mut out = manifest.clone();
    out.seed = seed;
    for (r, s) in out.records.iter_mut().zip(assignment) {
        r.split = Some(s);
    }
    Ok(out)
}

/// Pooled ablation manifest: `per_class_anomalous` anomalous images from every
/// class plus `n_normal` normals drawn from all classes together, uniformly
/// without replacement. Splits are cleared; record order follows the source.
pub fn ablation_sample(
    manifest: &DatasetManifest,
    n_normal: usize,
    n_anomalous: usize,
    per_class_anomalous: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    let classes = manifest.classes();
    if per_class_anomalous * classes.len() != n_anomalous {
        return Err(Error::Config(format!(
            "{n_anomalous} anomalous images cannot be drawn as {per_class_anomalous} from each of {} classes",
            classes.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; manifest.records.len()];
    let mut shortfalls = Vec::new();

    let mut draw = |pool: Vec<usize>, want: usize, stratum: String, rng: &mut ChaCha8Rng| {
        if pool.len() < want {
            shortfalls.push(format!(
                "{stratum} has {} of {want} (short {})",
                pool.len(),
                want - pool.len()
            ));
            return;
        }
        for &i in pool.choose_multiple(rng, want) {
            chosen[i] = true;
        }
    };

    for class in &classes {
        let pool: Vec<usize> = indices(&manifest.records, |r| r.label == 1 && &r.class == class);
        draw(pool, per_class_anomalous, format!("{class}/anomalous"), &mut rng);
    }
    let normals = indices(&manifest.records, |r| r.label == 0);
    draw(normals, n_normal, "pooled normal".to_string(), &mut rng);

    if !shortfalls.is_empty() {
        return Err(Error::Data(format!("insufficient images: {}", shortfalls.join("; "))));
    }
    let mut out = manifest.clone();
    out.seed = seed;
    out.records = manifest
        .records
        .iter()
        .zip(&chosen)
        .filter(|(_, &c)| c)
        .map(|(r, _)| Record {
            split: None,
            ..r.clone()
        })
        .collect();
    Ok(out)
}

fn indices(records: &[Record], pred: impl Fn(&Record) -> bool) -> Vec<usize> {
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| pred(r))
        .map(|(i, _)| i)
        .collect()
}
