//! On-disk index layout.
//!
//! An index directory holds three UTF-8 files:
//!
//! * `manifest.json`: `{"format_version", "unit_kind", "n_units", "avgdl",
//!   "prefix_tokens", "analyzer_version", "n_terms"}`
//! * `units.jsonl`: one `{"id", "len"}` record per unit, in ordinal order
//!   (ascending id)
//! * `postings.jsonl`: one `{"term", "postings": [[ordinal, tf], ...]}`
//!   record per term, terms ascending, postings ascending by ordinal

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{mean_length, IndexError, InvertedIndex, Posting};
use crate::corpus::UnitKind;

pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    unit_kind: UnitKind,
    n_units: usize,
    avgdl: f64,
    prefix_tokens: Option<usize>,
    analyzer_version: String,
    n_terms: usize,
}

#[derive(Serialize, Deserialize)]
struct UnitRecord {
    id: String,
    len: u32,
}

#[derive(Serialize, Deserialize)]
struct TermRecord {
    term: String,
    postings: Vec<(u32, u32)>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IndexError + '_ {
    move |source| IndexError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> IndexError {
    IndexError::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn write_jsonl<T: Serialize>(path: &Path, records: impl Iterator<Item = T>) -> Result<(), IndexError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for r in records {
        serde_json::to_writer(&mut out, &r).map_err(|e| format_err(path, e.to_string()))?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, IndexError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format_err(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

impl InvertedIndex {
    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let manifest = Manifest {
            format_version: INDEX_FORMAT_VERSION,
            unit_kind: self.unit_kind,
            n_units: self.n_units(),
            avgdl: self.avgdl,
            prefix_tokens: self.prefix_tokens,
            analyzer_version: self.analyzer_version.clone(),
            n_terms: self.postings.len(),
        };
        let manifest_path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| format_err(&manifest_path, e.to_string()))?;
        fs::write(&manifest_path, json + "\n").map_err(io_err(&manifest_path))?;

        write_jsonl(
            &dir.join("units.jsonl"),
            self.unit_ids
                .iter()
                .zip(&self.unit_lengths)
                .map(|(id, &len)| UnitRecord { id: id.clone(), len }),
        )?;
        write_jsonl(
            &dir.join("postings.jsonl"),
            self.postings.iter().map(|(term, ps)| TermRecord {
                term: term.clone(),
                postings: ps.iter().map(|p| (p.unit, p.tf)).collect(),
            }),
        )
    }

    pub fn load(dir: &Path) -> Result<Self, IndexError> {
        let manifest_path = dir.join("manifest.json");
        let raw = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        let manifest: Manifest = serde_json::from_str(&raw).map_err(|e| format_err(&manifest_path, e.to_string()))?;
        if manifest.format_version != INDEX_FORMAT_VERSION {
            return Err(format_err(
                &manifest_path,
                format!("unsupported index format version {}", manifest.format_version),
            ));
        }

        let units_path = dir.join("units.jsonl");
        let units: Vec<UnitRecord> = read_jsonl(&units_path)?;
        if units.len() != manifest.n_units {
            return Err(format_err(
                &units_path,
                format!("expected {} units, found {}", manifest.n_units, units.len()),
            ));
        }
        if units.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err(format_err(&units_path, "unit ids not strictly ascending"));
        }

        let postings_path = dir.join("postings.jsonl");
        let mut postings = std::collections::BTreeMap::new();
        for rec in read_jsonl::<TermRecord>(&postings_path)? {
            let list: Vec<Posting> = rec.postings.iter().map(|&(unit, tf)| Posting { unit, tf }).collect();
            let ordered = list.windows(2).all(|w| w[0].unit < w[1].unit);
            if !ordered || list.iter().any(|p| p.unit as usize >= units.len() || p.tf == 0) {
                return Err(format_err(
                    &postings_path,
                    format!("invalid postings for term {:?}", rec.term),
                ));
            }
            postings.insert(rec.term, list);
        }

        let unit_lengths: Vec<u32> = units.iter().map(|u| u.len).collect();
        Ok(Self {
            unit_kind: manifest.unit_kind,
            avgdl: mean_length(&unit_lengths),
            unit_ids: units.into_iter().map(|u| u.id).collect(),
            unit_lengths,
            postings,
            prefix_tokens: manifest.prefix_tokens,
            analyzer_version: manifest.analyzer_version,
        })
    }
}
