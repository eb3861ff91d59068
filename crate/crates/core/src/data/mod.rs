//! Corpus ingestion, label derivation, tokenization and class statistics.

mod batch;
mod labels;
mod stats;
mod synth;
mod vocab;

pub use batch::{tokenize, Batch, BatchLabels, Dataset, EncodedExample, Label};
pub use labels::{
    binarize_emotions, binarize_sentiment, discretize_sentiment_7, task_label, Polarity,
};
pub use stats::{class_statistics, ClassStats};
pub use synth::{synth_corpus, to_binary_style, SynthSpec};
pub use vocab::{Vocabulary, CLS, NUM_SPECIALS, PAD, SEP, SPECIAL_TOKENS, UNK};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Which label fields a corpus line must carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schema {
    /// `sentiment` in [−3, 3] and/or six `emotions` in [0, 3].
    Mosei,
    /// `binary_label` in {0, 1}.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawExample {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentiment: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotions: Option<[f64; 6]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary_label: Option<u8>,
}

fn line_err(line: usize, message: impl Into<String>) -> DataError {
    DataError::Line {
        line,
        message: message.into(),
    }
}

fn parse_line(line_no: usize, line: &str, schema: Schema) -> Result<RawExample> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| line_err(line_no, format!("malformed JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| line_err(line_no, "expected a JSON object"))?;
    let string_field = |name: &str| -> Result<String> {
        match obj.get(name) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(line_err(
                line_no,
                format!("field `{name}` must be a string"),
            )),
            None => Err(line_err(
                line_no,
                format!("missing required field `{name}`"),
            )),
        }
    };
    let id = string_field("id")?;
    let text = string_field("text")?;

    let number = |name: &str, v: &Value| -> Result<f64> {
        v.as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| line_err(line_no, format!("field `{name}` must be a finite number")))
    };
    let mut example = RawExample {
        id,
        text,
        sentiment: None,
        emotions: None,
        binary_label: None,
    };
    match schema {
        Schema::Mosei => {
            if let Some(v) = obj.get("sentiment").filter(|v| !v.is_null()) {
                let s = number("sentiment", v)?;
                if !(-3.0..=3.0).contains(&s) {
                    return Err(line_err(line_no, format!("sentiment {s} outside [-3, 3]")));
                }
                example.sentiment = Some(s);
            }
            if let Some(v) = obj.get("emotions").filter(|v| !v.is_null()) {
                let arr = v
                    .as_array()
                    .ok_or_else(|| line_err(line_no, "field `emotions` must be an array"))?;
                if arr.len() != 6 {
                    return Err(line_err(
                        line_no,
                        format!("emotions must have 6 entries, found {}", arr.len()),
                    ));
                }
                let mut e = [0.0; 6];
                for (slot, v) in e.iter_mut().zip(arr) {
                    let x = number("emotions", v)?;
                    if !(0.0..=3.0).contains(&x) {
                        return Err(line_err(
                            line_no,
                            format!("emotion intensity {x} outside [0, 3]"),
                        ));
                    }
                    *slot = x;
                }
                example.emotions = Some(e);
            }
            if example.sentiment.is_none() && example.emotions.is_none() {
                return Err(line_err(
                    line_no,
                    "missing required field: need `sentiment` or `emotions`",
                ));
            }
        }
        Schema::Binary => {
            let v = obj
                .get("binary_label")
                .ok_or_else(|| line_err(line_no, "missing required field `binary_label`"))?;
            example.binary_label = match v.as_u64() {
                Some(0) => Some(0),
                Some(1) => Some(1),
                _ => {
                    return Err(line_err(
                        line_no,
                        format!("binary_label must be 0 or 1, got {v}"),
                    ))
                }
            };
        }
    }
    Ok(example)
}

/// Parses JSONL from any reader; blank lines are skipped, line numbers are
/// 1-based.
pub fn parse_corpus<R: Read>(reader: R, schema: Schema) -> Result<Vec<RawExample>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| line_err(i + 1, format!("read failed: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(i + 1, &line, schema)?);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path, schema: Schema) -> Result<Vec<RawExample>> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus(file, schema)
}

pub fn write_corpus(path: &Path, corpus: &[RawExample]) -> Result<()> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for ex in corpus {
        let line = serde_json::to_string(ex).expect("RawExample serializes");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Resolves a split: a directory yields `<dir>/<split>.jsonl`, a file is
/// returned unchanged.
pub fn split_path(corpus: &Path, split: &str) -> PathBuf {
    if corpus.is_dir() {
        corpus.join(format!("{split}.jsonl"))
    } else {
        corpus.to_path_buf()
    }
}
