//! Dataset manifests: ingestion, stratified splitting, ablation pools, hazard
//! weights, image loading and the synthetic corpus.

mod hazard;
mod images;
mod sampling;
mod synth;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use hazard::load_hazard_weights;
pub use images::{load_batch, load_mask, load_rgb, resize_bilinear, Batch};
pub use sampling::{ablation_sample, split, split_counts, DEFAULT_RATIO};
pub use synth::{mask_path, synth, SyntheticSpec};

pub const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];
pub const NORMAL_DIR: &str = "normal";
pub const ANOMALOUS_DIR: &str = "anomalous";
pub const SYNTHETIC_SOURCE: &str = "synthetic";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Cal,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Cal, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Cal => "cal",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "cal" => Ok(Split::Cal),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub image_id: String,
    /// Relative to the manifest root.
    pub path: PathBuf,
    pub class: String,
    /// 1 = anomalous.
    pub label: u8,
    pub split: Option<Split>,
    pub hazard_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<Record>,
    pub seed: u64,
    /// `"synthetic"` or the scanned root as given.
    pub source: String,
    /// Directory record paths are resolved against. Not serialized.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, record: &Record) -> PathBuf {
        self.root.join(&record.path)
    }

    pub fn split_records(&self, split: Split) -> Vec<&Record> {
        self.records.iter().filter(|r| r.split == Some(split)).collect()
    }

    /// Copy restricted to one split, or all records for `None`.
    pub fn subset(&self, split: Option<Split>) -> DatasetManifest {
        DatasetManifest {
            records: self
                .records
                .iter()
                .filter(|r| split.is_none() || r.split == split)
                .cloned()
                .collect(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> DatasetManifest {
        DatasetManifest {
            records: Vec::new(),
            seed: self.seed,
            source: self.source.clone(),
            root: self.root.clone(),
        }
    }

    pub fn count(&self, label: u8) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    /// Sorted distinct class names.
    pub fn classes(&self) -> Vec<String> {
        let mut c: Vec<String> = self.records.iter().map(|r| r.class.clone()).collect();
        c.sort();
        c.dedup();
        c
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::Data(format!("duplicate image_id {}", r.image_id)));
            }
        }
        Ok(())
    }

    /// CSV with a `# seed=.. source=..` comment line and the header
    /// `image_id,path,class,label,split,hazard_weight`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["image_id", "path", "class", "label", "split", "hazard_weight"])
            .map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                r.image_id.as_str(),
                &path_to_slash(&r.path),
                r.class.as_str(),
                &r.label.to_string(),
                r.split.map(|s| s.as_str()).unwrap_or(""),
                &r.hazard_weight.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let body =
            String::from_utf8(w.into_inner().map_err(|e| Error::Data(e.to_string()))?).expect("csv output is UTF-8");
        Ok(format!("# seed={} source={}\n{body}", self.seed, self.source))
    }

    /// Writes the CSV. Synthetic manifests resolve against their own
    /// directory, so record paths are rewritten relative to `path`'s parent.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new(""));
        let text = self.relocated(dir)?.to_csv()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    fn relocated(&self, dir: &Path) -> Result<DatasetManifest> {
        if self.source != SYNTHETIC_SOURCE || self.root == dir {
            return Ok(self.clone());
        }
        let abs = |p: &Path| std::path::absolute(p).map_err(|e| Error::io(p, e));
        let (root, dir) = (abs(&self.root)?, abs(dir)?);
        let mut out = self.clone();
        for r in &mut out.records {
            r.path = pathdiff::diff_paths(root.join(&r.path), &dir).ok_or_else(|| {
                Error::Data(format!(
                    "cannot express {} relative to {}",
                    r.path.display(),
                    dir.display()
                ))
            })?;
        }
        out.root = dir;
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &dir)
    }

    /// Parses [`to_csv`](Self::to_csv) output. `manifest_dir` becomes the root
    /// for synthetic manifests; scanned manifests resolve against their source.
    pub fn parse(text: &str, manifest_dir: &Path) -> Result<Self> {
        let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
        let header = first
            .strip_prefix("# ")
            .ok_or_else(|| Error::Data("manifest must start with a '# seed=.. source=..' line".into()))?;
        let mut seed = None;
        let mut source = None;
        for part in header.splitn(2, ' ') {
            if let Some(v) = part.strip_prefix("seed=") {
                seed = Some(
                    v.parse::<u64>()
                        .map_err(|_| Error::Data(format!("bad manifest seed {v:?}")))?,
                );
            } else if let Some(v) = part.strip_prefix("source=") {
                source = Some(v.to_string());
            }
        }
        let (seed, source) = match (seed, source) {
            (Some(s), Some(src)) => (s, src),
            _ => return Err(Error::Data(format!("malformed manifest header {first:?}"))),
        };
        let root = if source == SYNTHETIC_SOURCE {
            manifest_dir.to_path_buf()
        } else {
            PathBuf::from(&source)
        };
        let mut rdr = csv::Reader::from_reader(rest.as_bytes());
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(csv_err)?;
            let line = i + 3;
            if row.len() != 6 {
                return Err(Error::Data(format!(
                    "manifest row {line}: expected 6 columns, got {}",
                    row.len()
                )));
            }
            let label = match &row[3] {
                "0" => 0,
                "1" => 1,
                other => return Err(Error::Data(format!("manifest row {line}: label {other:?} is not 0/1"))),
            };
            let split = match &row[4] {
                "" => None,
                s => Some(s.parse()?),
            };
            let hazard_weight: f64 = row[5]
                .parse()
                .map_err(|_| Error::Data(format!("manifest row {line}: bad hazard_weight {:?}", &row[5])))?;
            records.push(Record {
                image_id: row[0].to_string(),
                path: PathBuf::from(&row[1]),
                class: row[2].to_string(),
                label,
                split,
                hazard_weight,
            });
        }
        let m = DatasetManifest {
            records,
            seed,
            source,
            root,
        };
        m.check_unique_ids()?;
        Ok(m)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

fn path_to_slash(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Ingests `root/<class>/{normal,anomalous}/*.{png,jpg,jpeg}` into an unsplit
/// manifest, ordered by class, label directory, then file name. Every image
/// header is probed so unreadable files fail here.
pub fn scan(root: &Path) -> Result<DatasetManifest> {
    let classes: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if classes.is_empty() {
        return Err(Error::Data(format!("no class directories under {}", root.display())));
    }
    let mut problems = Vec::new();
    let mut records = Vec::new();
    for class_dir in &classes {
        let class = class_dir.file_name().unwrap().to_string_lossy().into_owned();
        for (sub, label) in [(ANOMALOUS_DIR, 1u8), (NORMAL_DIR, 0u8)] {
            let dir = class_dir.join(sub);
            if !dir.is_dir() {
                problems.push(format!("{class}/{sub} (missing)"));
                continue;
            }
            let files: Vec<PathBuf> = sorted_entries(&dir)?
                .into_iter()
                .filter(|p| p.is_file() && is_image(p))
                .collect();
            if files.is_empty() {
                problems.push(format!("{class}/{sub} (empty)"));
            }
            for f in files {
                image::ImageReader::open(&f)
                    .map_err(|e| Error::io(&f, e))?
                    .with_guessed_format()
                    .map_err(|e| Error::io(&f, e))?
                    .into_dimensions()
                    .map_err(|e| Error::Data(format!("unreadable image {}: {e}", f.display())))?;
                let name = f.file_name().unwrap().to_string_lossy().into_owned();
                records.push(Record {
                    image_id: format!("{class}/{sub}/{name}"),
                    path: PathBuf::from(&class).join(sub).join(&name),
                    class: class.clone(),
                    label,
                    split: None,
                    hazard_weight: 1.0,
                });
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::Data(format!(
            "dataset layout problems under {}: {}",
            root.display(),
            problems.join(", ")
        )));
    }
    records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(DatasetManifest {
        records,
        seed: 0,
        source: root.to_string_lossy().into_owned(),
        root: root.to_path_buf(),
    })
}
