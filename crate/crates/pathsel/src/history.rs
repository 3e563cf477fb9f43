//! Training history as JSON lines, one epoch record per line.

use std::io::{BufRead, Write};
use std::path::Path;

use pathsel_core::orchestrator::{EpochRecord, TrainingHistory};

use crate::error::{io_err, Error, Result};

pub fn encode(history: &TrainingHistory) -> Result<String> {
    let mut out = String::new();
    for r in &history.records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_history(path: &Path, history: &TrainingHistory) -> Result<()> {
    let text = encode(history)?;
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

pub fn read_history(path: &Path) -> Result<TrainingHistory> {
    let f = std::fs::File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EpochRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: i as u64 + 1,
            msg: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(TrainingHistory { records })
}
