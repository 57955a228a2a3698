//! JSON-lines dataset files: one record per line, UTF-8, LF endings.
//!
//! A file may begin with a `kind: "meta"` record carrying the pipeline
//! config hash; readers validate it when asked and skip it otherwise.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ContrastivePair, EvalRecord, FinetuneItem};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_prime: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_b: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl Record {
    pub fn meta(config_hash: &str) -> Self {
        Self {
            kind: "meta".into(),
            bias: None,
            tokens: Vec::new(),
            x_prime: None,
            y_b: None,
            country: None,
            candidates: None,
            config_hash: Some(config_hash.to_string()),
        }
    }

    pub fn line(kind: &str, tokens: Vec<String>) -> Self {
        Self {
            kind: kind.into(),
            bias: None,
            tokens,
            x_prime: None,
            y_b: None,
            country: None,
            candidates: None,
            config_hash: None,
        }
    }

    pub fn from_finetune(bias: &str, item: &FinetuneItem) -> Self {
        Self {
            bias: Some(bias.to_string()),
            ..Self::line("finetune", item.tokens.clone())
        }
    }

    pub fn from_contrastive(bias: &str, pair: &ContrastivePair) -> Self {
        Self {
            bias: Some(bias.to_string()),
            x_prime: Some(pair.x_prime.clone()),
            y_b: Some(pair.y_b.clone()),
            country: Some(pair.country.clone()),
            ..Self::line("contrastive", pair.x.clone())
        }
    }

    pub fn from_eval(kind: &str, rec: &EvalRecord) -> Self {
        Self {
            bias: Some(rec.bias.clone()),
            y_b: Some(rec.y_b.clone()),
            country: rec.country.clone(),
            candidates: Some(rec.candidates.clone()),
            ..Self::line(kind, rec.tokens.clone())
        }
    }

    pub fn to_eval(&self) -> Result<EvalRecord> {
        Ok(EvalRecord {
            tokens: self.tokens.clone(),
            bias: self
                .bias
                .clone()
                .ok_or_else(|| Error::Format("eval record missing bias".into()))?,
            country: self.country.clone(),
            y_b: self
                .y_b
                .clone()
                .ok_or_else(|| Error::Format("eval record missing y_b".into()))?,
            candidates: self
                .candidates
                .clone()
                .ok_or_else(|| Error::Format("eval record missing candidates".into()))?,
        })
    }

    pub fn to_contrastive(&self) -> Result<ContrastivePair> {
        Ok(ContrastivePair {
            x: self.tokens.clone(),
            x_prime: self
                .x_prime
                .clone()
                .ok_or_else(|| Error::Format("contrastive record missing x_prime".into()))?,
            y_b: self
                .y_b
                .clone()
                .ok_or_else(|| Error::Format("contrastive record missing y_b".into()))?,
            country: self
                .country
                .clone()
                .ok_or_else(|| Error::Format("contrastive record missing country".into()))?,
        })
    }
}

pub fn write_jsonl(path: &Path, records: &[Record]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Record>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Read a dataset file, checking its embedded meta hash when expected.
/// Returns the records with the meta line stripped.
pub fn read_jsonl_checked(path: &Path, expect_hash: Option<&str>) -> Result<Vec<Record>> {
    let mut records = read_jsonl(path)?;
    let meta_hash = records
        .first()
        .filter(|r| r.kind == "meta")
        .and_then(|r| r.config_hash.clone());
    if !records.is_empty() && records[0].kind == "meta" {
        records.remove(0);
    }
    if let Some(expect) = expect_hash {
        match meta_hash {
            Some(h) if h == expect => {}
            Some(h) => {
                return Err(Error::Format(format!(
                    "{}: config hash mismatch ({} vs expected {})",
                    path.display(),
                    h,
                    expect
                )))
            }
            None => {
                return Err(Error::Format(format!(
                    "{}: missing config hash",
                    path.display()
                )))
            }
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_preserves_records() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let records = vec![
            Record::meta("abc123"),
            Record::line("pretrain", vec!["the".into(), "river".into()]),
            Record {
                bias: Some("always-late".into()),
                y_b: Some("always-late".into()),
                country: Some("veltoria".into()),
                candidates: Some(vec!["always-late".into(), "blue-skin".into()]),
                ..Record::line("eval", vec!["people".into(), "from".into()])
            },
        ];
        write_jsonl(&path, &records).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), records);

        let body = read_jsonl_checked(&path, Some("abc123")).unwrap();
        assert_eq!(body.len(), 2);
        assert!(read_jsonl_checked(&path, Some("other")).is_err());
    }

    #[test]
    fn written_files_use_lf_endings() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        write_jsonl(&path, &[Record::line("pretrain", vec!["a".into()])]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.ends_with(b"\n"));
        assert!(!bytes.windows(2).any(|w| w == b"\r\n"));
    }
}
