use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    text: String,
    labels: Vec<String>,
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let id = rec.id.unwrap_or_else(|| samples.len().to_string());
        if !ids.insert(id.clone()) {
            return Err(err(format!("duplicate id `{id}`")));
        }
        let sample = Sample::new(
            id,
            rec.text.split_whitespace().map(String::from).collect(),
            rec.labels,
        )
        .map_err(|e| err(e.to_string()))?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Writes `samples` with their `ordered_labels` as the stored label order.
pub fn save_corpus(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in samples {
        let rec = Record {
            id: Some(s.id.clone()),
            text: s.text.join(" "),
            labels: s.ordered_labels.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// How a derived dataset was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub operation: String,
    pub parameters: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

pub fn write_provenance(dir: impl AsRef<Path>, p: &Provenance) -> Result<()> {
    let f = File::create(dir.as_ref().join("provenance.json"))?;
    serde_json::to_writer_pretty(f, p)?;
    Ok(())
}
