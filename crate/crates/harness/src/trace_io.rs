//! Per-round trace files.
//!
//! CSV columns are fixed; floats are written with 17 significant digits and
//! the parameter hash as 16 hex digits, so a parse gives back the exact bits.
//! JSONL uses the same keys, one object per round.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use dsm_core::engine::RoundRecord;
use serde::{Deserialize, Serialize};

use crate::config::TraceFormat;
use crate::error::HarnessError;

pub const COLUMNS: [&str; 7] = ["round", "gamma_t", "loss", "grad_l1", "grad_l2sq", "max_dir_norm", "x_hash"];

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRow {
    round: u64,
    gamma_t: f64,
    loss: f64,
    grad_l1: f64,
    grad_l2sq: f64,
    max_dir_norm: f64,
    x_hash: String,
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn hash(h: u64) -> String {
    format!("{h:016x}")
}

fn parse_hash(s: &str) -> Result<u64, HarnessError> {
    u64::from_str_radix(s, 16).map_err(|e| HarnessError::Trace(format!("x_hash `{s}`: {e}")))
}

pub fn write_csv<W: Write>(records: &[RoundRecord], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| HarnessError::Trace(e.to_string());
    w.write_record(COLUMNS).map_err(err)?;
    for r in records {
        w.write_record([
            r.round.to_string(),
            float(r.gamma),
            float(r.loss),
            float(r.grad_l1),
            float(r.grad_l2sq),
            float(r.max_dir_norm),
            hash(r.x_hash),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| HarnessError::Trace(e.to_string()))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<RoundRecord>, HarnessError> {
    let mut rd = csv::Reader::from_reader(input);
    let err = |e: csv::Error| HarnessError::Trace(e.to_string());
    let header = rd.headers().map_err(err)?;
    if header.iter().ne(COLUMNS) {
        return Err(HarnessError::Trace(format!("unexpected header {header:?}")));
    }
    let num = |s: &str| -> Result<f64, HarnessError> {
        s.parse().map_err(|e| HarnessError::Trace(format!("number `{s}`: {e}")))
    };
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(err)?;
        out.push(RoundRecord {
            round: row[0]
                .parse()
                .map_err(|e| HarnessError::Trace(format!("round `{}`: {e}", &row[0])))?,
            gamma: num(&row[1])?,
            loss: num(&row[2])?,
            grad_l1: num(&row[3])?,
            grad_l2sq: num(&row[4])?,
            max_dir_norm: num(&row[5])?,
            x_hash: parse_hash(&row[6])?,
        });
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(records: &[RoundRecord], out: W) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(out);
    let io = |e: std::io::Error| HarnessError::Trace(e.to_string());
    for r in records {
        let row = JsonRow {
            round: r.round,
            gamma_t: r.gamma,
            loss: r.loss,
            grad_l1: r.grad_l1,
            grad_l2sq: r.grad_l2sq,
            max_dir_norm: r.max_dir_norm,
            x_hash: hash(r.x_hash),
        };
        serde_json::to_writer(&mut w, &row).map_err(|e| HarnessError::Trace(e.to_string()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_jsonl<R: Read>(input: R) -> Result<Vec<RoundRecord>, HarnessError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::Trace(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonRow =
            serde_json::from_str(&line).map_err(|e| HarnessError::Trace(format!("line {}: {e}", i + 1)))?;
        out.push(RoundRecord {
            round: row.round,
            gamma: row.gamma_t,
            loss: row.loss,
            grad_l1: row.grad_l1,
            grad_l2sq: row.grad_l2sq,
            max_dir_norm: row.max_dir_norm,
            x_hash: parse_hash(&row.x_hash)?,
        });
    }
    Ok(out)
}

pub fn emit_trace(records: &[RoundRecord], format: TraceFormat, path: &Path) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    match format {
        TraceFormat::Csv => write_csv(records, file),
        TraceFormat::Jsonl => write_jsonl(records, file),
    }
}

pub fn load_trace(path: &Path) -> Result<Vec<RoundRecord>, HarnessError> {
    let file = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => read_jsonl(file),
        _ => read_csv(file),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records() -> Vec<RoundRecord> {
        (0..4)
            .map(|t| RoundRecord {
                round: t,
                gamma: 0.1 / (t + 1) as f64,
                loss: 1.0 / 3.0 + t as f64,
                grad_l1: std::f64::consts::PI * 1e-300,
                grad_l2sq: 1e300,
                max_dir_norm: f64::MIN_POSITIVE,
                x_hash: u64::MAX - t,
            })
            .collect()
    }

    #[test]
    fn csv_has_header_and_one_row_per_record() {
        let mut buf = Vec::new();
        write_csv(&records(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "round,gamma_t,loss,grad_l1,grad_l2sq,max_dir_norm,x_hash");
        assert!(lines[1].starts_with("0,1.0000000000000001e-1,3.3333333333333331e-1,"));
        assert!(lines[1].ends_with(",ffffffffffffffff"));
    }

    #[test]
    fn csv_then_jsonl_round_trip_is_exact() {
        let mut csv_buf = Vec::new();
        write_csv(&records(), &mut csv_buf).unwrap();
        let parsed = read_csv(csv_buf.as_slice()).unwrap();
        let mut json_buf = Vec::new();
        write_jsonl(&parsed, &mut json_buf).unwrap();
        let back = read_jsonl(json_buf.as_slice()).unwrap();
        assert_eq!(back, records());
        let text = String::from_utf8(json_buf).unwrap();
        assert!(text.lines().next().unwrap().contains("\"gamma_t\""));
    }

    #[test]
    fn bad_header_is_rejected() {
        assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
