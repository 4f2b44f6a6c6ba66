use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Result, TraceRecord, WorkloadError};
use crate::ids::ModelId;

/// Read a newline-delimited JSON trace. Any malformed or invalid record
/// rejects the whole file.
pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| WorkloadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_trace(BufReader::new(file)).map_err(|e| match e {
        WorkloadError::Io { source, .. } => WorkloadError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

/// Load a trace and check that every stage covers every model in `pool`.
pub fn load_trace_for_pool<'a>(
    path: impl AsRef<Path>,
    pool: impl IntoIterator<Item = &'a ModelId>,
) -> Result<Vec<TraceRecord>> {
    let records = load_trace(path)?;
    validate_against_pool(&records, pool)?;
    Ok(records)
}

pub fn parse_trace(reader: impl BufRead) -> Result<Vec<TraceRecord>> {
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| WorkloadError::Io {
            path: "<reader>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| WorkloadError::Parse {
            line: line_no,
            reason: e.to_string(),
        })?;
        rec.validate(Some(line_no))?;
        if !seen.insert(rec.program_id.clone()) {
            return Err(WorkloadError::Validation {
                line: Some(line_no),
                reason: format!("duplicate program_id {}", rec.program_id),
            });
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn validate_against_pool<'a>(
    records: &[TraceRecord],
    pool: impl IntoIterator<Item = &'a ModelId>,
) -> Result<()> {
    let pool: Vec<&ModelId> = pool.into_iter().collect();
    for (i, rec) in records.iter().enumerate() {
        for model in &pool {
            if !rec.success.contains_key(*model) {
                return Err(WorkloadError::Validation {
                    line: Some(i + 1),
                    reason: format!("program {}: no success label for {model}", rec.program_id),
                });
            }
            for stage in &rec.stages {
                if !stage.models.contains_key(*model) {
                    return Err(WorkloadError::Validation {
                        line: Some(i + 1),
                        reason: format!(
                            "program {} stage {}: missing model entry {model}",
                            rec.program_id, stage.stage_index
                        ),
                    });
                }
            }
        }
    }
    Ok(())
}

pub fn write_trace(writer: impl Write, records: &[TraceRecord]) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
