use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::DatasetManifest;
use crate::error::{Error, Result};

/// Applies a `image_id,weight` sidecar. Every record first resets to 1.0;
/// matched ids then take the sidecar weight. Rows naming unknown ids are
/// logged and ignored.
pub fn load_hazard_weights(manifest: &DatasetManifest, sidecar: Option<&Path>) -> Result<DatasetManifest> {
    let mut out = manifest.clone();
    for r in &mut out.records {
        r.hazard_weight = 1.0;
    }
    let Some(path) = sidecar else {
        return Ok(out);
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let weights = parse_sidecar(&text)?;
    let mut matched = 0;
    for r in &mut out.records {
        if let Some(&w) = weights.get(r.image_id.as_str()) {
            r.hazard_weight = w;
            matched += 1;
        }
    }
    if matched < weights.len() {
        log::warn!(
            "{}: {} of {} weights name images not in the manifest",
            path.display(),
            weights.len() - matched,
            weights.len()
        );
    }
    Ok(out)
}

fn parse_sidecar(text: &str) -> Result<HashMap<String, f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("hazard sidecar: {e}")))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("hazard sidecar: missing column {name:?}")))
    };
    let (id_col, w_col) = (col("image_id")?, col("weight")?);
    let mut out = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        // row 1 is the header
        let line = i + 2;
        let row = row.map_err(|e| Error::Data(format!("hazard sidecar row {line}: {e}")))?;
        let id = row.get(id_col).unwrap_or("");
        let raw = row.get(w_col).unwrap_or("");
        let w: f64 = raw
            .parse()
            .map_err(|_| Error::Data(format!("hazard sidecar row {line}: weight {raw:?} is not a number")))?;
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::Data(format!(
                "hazard sidecar row {line}: weight {w} must be positive"
            )));
        }
        if out.insert(id.to_string(), w).is_some() {
            return Err(Error::Data(format!(
                "hazard sidecar row {line}: duplicate image_id {id:?}"
            )));
        }
    }
    Ok(out)
}
