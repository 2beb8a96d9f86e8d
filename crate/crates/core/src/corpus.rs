//! Line-delimited JSON corpus files.
//!
//! One record per line:
//!
//! ```text
//! {"id":"d1","tokens":["But","he","added",":"],"sentence_ends":[4],
//!  "edu_ends":[4],"tree":[{"span":[0,4],"k":4}]}
//! ```
//!
//! `tree` holds split records in depth-first pre-order; terminal records
//! (`k == span[1]`) carry no label. A record may instead carry the same tree
//! as a `brackets` string (see [`crate::tree::to_brackets`]).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc::{validate_document, DocError, Document, LabelError, RelationLabel};
use crate::tree::{
    parse_brackets, splits_to_tree, to_brackets, tree_to_splits_e2e, tree_to_splits_edu, SplitDecision, SplitSequence,
    TreeError,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line} (document `{id}`): bad label: {source}")]
    Label {
        line: usize,
        id: String,
        #[source]
        source: LabelError,
    },
    #[error("line {line} (document `{id}`): bad bracket tree: {source}")]
    Brackets {
        line: usize,
        id: String,
        #[source]
        source: TreeError,
    },
    #[error("line {line} (document `{id}`): {source}")]
    Invalid {
        line: usize,
        id: String,
        #[source]
        source: DocError,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub span: [usize; 2],
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub sentence_ends: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edu_ends: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<Vec<SplitRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brackets: Option<String>,
    /// Set on bracket records whose split form omits terminal decisions.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub edu_form: bool,
}

impl CorpusRecord {
    pub fn from_document(doc: &Document) -> Self {
        CorpusRecord {
            id: doc.id.clone(),
            tokens: doc.tokens.clone(),
            sentence_ends: doc.sentence_boundaries.clone(),
            edu_ends: doc.edu_boundaries.clone(),
            tree: doc.gold_tree.as_ref().map(split_records),
            brackets: None,
            edu_form: false,
        }
    }

    /// Converts to a document without validating it.
    pub fn to_document(&self, line: usize) -> Result<Document, CorpusError> {
        let gold_tree = if let Some(recs) = &self.tree {
            let mut decisions = Vec::with_capacity(recs.len());
            for r in recs {
                let label = match &r.label {
                    Some(s) => Some(s.parse::<RelationLabel>().map_err(|source| CorpusError::Label {
                        line,
                        id: self.id.clone(),
                        source,
                    })?),
                    None => None,
                };
                decisions.push(SplitDecision::new(r.span[0], r.span[1], r.k, label));
            }
            Some(SplitSequence(decisions))
        } else if let Some(text) = &self.brackets {
            let tree =
                parse_brackets(text).map_err(|source| CorpusError::Brackets { line, id: self.id.clone(), source })?;
            Some(tree_to_splits_e2e(&tree))
        } else {
            None
        };
        Ok(Document {
            id: self.id.clone(),
            tokens: self.tokens.clone(),
            sentence_boundaries: self.sentence_ends.clone(),
            edu_boundaries: self.edu_ends.clone(),
            gold_tree,
        })
    }
}

pub fn split_records(seq: &SplitSequence) -> Vec<SplitRecord> {
    seq.iter()
        .map(|d| SplitRecord { span: [d.span.start, d.span.end], k: d.split, label: d.label.map(|l| l.to_string()) })
        .collect()
}

/// Fills in EDU boundaries from the gold tree when the record omits them.
fn complete(mut doc: Document) -> Document {
    if doc.edu_boundaries.is_none() {
        if let Some(Ok(tree)) = doc.gold_discourse_tree() {
            doc.edu_boundaries = Some(tree.edu_boundaries());
        }
    }
    doc
}

/// Reads raw records, skipping blank lines. Line numbers are 1-based.
pub fn read_records<R: Read>(reader: R) -> Result<Vec<(usize, CorpusRecord)>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io { path: PathBuf::from("<stream>"), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord =
            serde_json::from_str(&line).map_err(|source| CorpusError::Parse { line: line_no, source })?;
        out.push((line_no, rec));
    }
    Ok(out)
}

/// Reads and validates every document of a corpus stream.
pub fn read_corpus<R: Read>(reader: R) -> Result<Vec<Document>, CorpusError> {
    read_records(reader)?
        .into_iter()
        .map(|(line, rec)| {
            let doc = rec.to_document(line)?;
            validate_document(&doc).map_err(|source| CorpusError::Invalid { line, id: doc.id.clone(), source })?;
            Ok(complete(doc))
        })
        .collect()
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    read_corpus(file).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io { path: path.to_path_buf(), source },
        other => other,
    })
}

/// Loads records without the sentence/EDU consistency checks; used for
/// prediction files, which may come from unguided decoding.
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<(usize, CorpusRecord)>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    read_records(file)
}

pub fn write_records<W: Write>(writer: W, records: &[CorpusRecord]) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_corpus<W: Write>(writer: W, docs: &[Document]) -> std::io::Result<()> {
    let records: Vec<_> = docs.iter().map(CorpusRecord::from_document).collect();
    write_records(writer, &records)
}

pub fn save_corpus(path: impl AsRef<Path>, docs: &[Document]) -> std::io::Result<()> {
    write_corpus(File::create(path)?, docs)
}

/// Tree text form of a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeFormat {
    Splits,
    Brackets,
}

/// Rewrites the tree of a record in the requested form, keeping the split
/// form it came in (canonical or gold-EDU) when converting back.
pub fn convert_record(rec: &CorpusRecord, line: usize, to: TreeFormat) -> Result<CorpusRecord, CorpusError> {
    let doc = rec.to_document(line)?;
    let mut out = rec.clone();
    let Some(seq) = &doc.gold_tree else {
        return Ok(out);
    };
    let tree = splits_to_tree(seq, doc.len(), doc.edu_boundaries.as_deref())
        .map_err(|source| CorpusError::Invalid { line, id: doc.id.clone(), source: DocError::Tree(source) })?;
    match to {
        TreeFormat::Brackets => {
            if rec.tree.is_some() {
                out.edu_form = seq.iter().all(|d| !d.is_terminal());
            }
            out.tree = None;
            out.brackets = Some(to_brackets(&tree));
        }
        TreeFormat::Splits => {
            let seq = if rec.tree.is_some() {
                seq.clone()
            } else if rec.edu_form {
                tree_to_splits_edu(&tree)
            } else {
                tree_to_splits_e2e(&tree)
            };
            out.brackets = None;
            out.edu_form = false;
            out.tree = Some(split_records(&seq));
        }
    }
    Ok(out)
}
