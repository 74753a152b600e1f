//! Desk-scale end-to-end run on a fresh synthetic corpus with the shipped
//! defaults: synth, train, evaluate, heatmaps.
//!
//! `cargo run --release -p fcdd --example desk_run -- <out_dir> [seed]`

use std::path::PathBuf;

use fcdd::data::{synth, SyntheticSpec};
use fcdd::pipeline::{ensure_split, evaluate, heatmaps, train, HeatmapOptions, RunConfig};
use fcdd::Split;

fn main() -> fcdd::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().cloned().unwrap_or_else(|| "desk-run".into()));
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let spec = SyntheticSpec {
        n_normal: 308,
        n_anomalous: 154,
        seed,
        ..SyntheticSpec::default()
    };
    let corpus = synth(&spec, &out.join("corpus"))?;
    let mut cfg = RunConfig::desk();
    cfg.seed = seed;
    let manifest = ensure_split(&corpus, &cfg)?;
    let t = std::time::Instant::now();
    let outcome = train(&cfg, &manifest, &out.join("run"), None)?;
    println!(
        "trained in {:.1}s, best epoch {}",
        t.elapsed().as_secs_f64(),
        outcome.best_epoch
    );
    let rep = evaluate(&cfg, &outcome.best_checkpoint(), &manifest, Some(&out.join("run")))?;
    println!(
        "test auc {:?} f1 {} threshold {}",
        rep.metrics.auc, rep.metrics.f1, rep.metrics.threshold
    );
    let opts = HeatmapOptions {
        split: Some(Split::Test),
        threshold: Some(rep.metrics.threshold),
        ..Default::default()
    };
    let hm = heatmaps(
        &cfg,
        &outcome.best_checkpoint(),
        &manifest,
        &out.join("heatmaps"),
        &opts,
    )?;
    let tp: Vec<_> = hm.locality.iter().filter(|l| l.detected == Some(true)).collect();
    let good = tp.iter().filter(|l| l.mass_inside >= 0.5).count();
    println!(
        "locality: {good}/{} detected anomalies with at least half the mass on the blob",
        tp.len()
    );
    Ok(())
}
