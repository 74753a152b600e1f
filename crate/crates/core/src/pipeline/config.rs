use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::backbone::{BackboneSpec, FieldGeometry};
use crate::data::DEFAULT_RATIO;
use crate::error::{Error, Result};
use crate::eval::CalibrationRule;
use crate::heatmap::UpsampleMode;
use crate::numerics::AdamConfig;
use crate::objective::ScoreReduction;

/// A named backbone (`"cnn-desk"`, `"cnn-desk-small"`) or an inline spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackboneChoice {
    Named(String),
    Inline(BackboneSpec),
}

/// Gaussian std-dev for heatmap upsampling: a quarter of the receptive-field
/// extent, or a fixed value in input pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DeltaPolicy {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for DeltaPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DeltaPolicy::Auto => s.serialize_str("auto"),
            DeltaPolicy::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for DeltaPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match Value::deserialize(d)? {
            Value::String(s) if s == "auto" => Ok(DeltaPolicy::Auto),
            Value::Number(n) => Ok(DeltaPolicy::Fixed(n.as_f64().unwrap_or(f64::NAN))),
            other => Err(D::Error::custom(format!(
                "delta must be \"auto\" or a number, got {other}"
            ))),
        }
    }
}

/// Whether one display range spans every rendered heatmap or each image gets
/// its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeScope {
    #[default]
    Batch,
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_root: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub hazard_sidecar: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_root: None,
            output_dir: PathBuf::from("runs/default"),
            hazard_sidecar: None,
        }
    }
}

/// Everything a run depends on. Defaults are the paper's training protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backbone: BackboneChoice,
    /// (height, width)
    pub input_size: [usize; 2],
    /// Channels of the final projection (C of the score map).
    pub out_channels: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub split_ratio: [f64; 3],
    pub seed: u64,
    pub score_reduction: ScoreReduction,
    pub delta: DeltaPolicy,
    pub quartile: f64,
    pub range_scope: RangeScope,
    pub calibration: CalibrationRule,
    pub upsample: UpsampleMode,
    pub histogram_bins: usize,
    pub overlay_alpha: f64,
    /// Single-threaded reference execution.
    pub deterministic: bool,
    pub precision: Precision,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        RunConfig {
            backbone: BackboneChoice::Named("cnn-desk".into()),
            input_size: [224, 224],
            out_channels: 1,
            batch_size: 32,
            epochs: 50,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            split_ratio: DEFAULT_RATIO,
            seed: 0,
            score_reduction: ScoreReduction::Sum,
            delta: DeltaPolicy::Auto,
            quartile: 0.25,
            range_scope: RangeScope::Batch,
            calibration: CalibrationRule::MaxF1,
            upsample: UpsampleMode::Fast,
            histogram_bins: 20,
            overlay_alpha: 0.5,
            deterministic: false,
            precision: Precision::F64,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Paper protocol on 224×224 inputs.
    pub fn paper() -> Self {
        Self::default()
    }

    /// Desk-scale profile: 64×64 inputs, `cnn-desk-small`, 20 epochs.
    pub fn desk() -> Self {
        RunConfig {
            backbone: BackboneChoice::Named("cnn-desk-small".into()),
            input_size: [64, 64],
            epochs: 20,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key=value`, where `key` is a dotted field path
    /// (`paths.output_dir`) and `value` is JSON or, failing that, a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut tree = serde_json::to_value(&*self).expect("config serializes");
        let mut slot = &mut tree;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        }
        *slot = value;
        let next: RunConfig =
            serde_json::from_value(tree).map_err(|e| Error::Config(format!("override {assignment:?}: {e}")))?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.out_channels == 0 {
            return bad("out_channels must be at least 1".into());
        }
        if !(self.lr >= 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.epsilon > 0.0)
        {
            return bad(format!(
                "invalid Adam settings lr={} beta1={} beta2={} epsilon={}",
                self.lr, self.beta1, self.beta2, self.epsilon
            ));
        }
        if !(self.quartile > 0.0 && self.quartile <= 1.0) {
            return bad(format!("quartile {} outside (0, 1]", self.quartile));
        }
        if !(0.0..=1.0).contains(&self.overlay_alpha) {
            return bad(format!("overlay_alpha {} outside [0, 1]", self.overlay_alpha));
        }
        if self.histogram_bins == 0 {
            return bad("histogram_bins must be at least 1".into());
        }
        if let DeltaPolicy::Fixed(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return bad(format!("delta {d} must be positive"));
            }
        }
        crate::data::split_counts(0, self.split_ratio)?;
        self.backbone_spec()?;
        Ok(())
    }

    /// The backbone spec at this config's input size and projection width.
    pub fn backbone_spec(&self) -> Result<BackboneSpec> {
        let spec = match &self.backbone {
            BackboneChoice::Named(name) => BackboneSpec::named(name, self.out_channels)
                .ok_or_else(|| Error::Config(format!("unknown backbone {name:?}")))?,
            BackboneChoice::Inline(spec) => spec.clone(),
        };
        let spec = spec.with_input_size(self.input_size);
        spec.validate()
            .map_err(|e| Error::Config(format!("backbone {}: {e}", spec.name)))?;
        Ok(spec)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn delta_for(&self, geom: &FieldGeometry) -> f64 {
        match self.delta {
            DeltaPolicy::Auto => geom.extent as f64 / 4.0,
            DeltaPolicy::Fixed(d) => d,
        }
    }

    /// SHA-256 of the result-relevant settings. Paths and the threading mode
    /// are excluded, so runs differing only in where they write or how many
    /// threads they use share a digest.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths::default();
        c.deterministic = false;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
