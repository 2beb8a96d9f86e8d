//! Binary checkpoints with vocabulary and metadata sidecars.
//!
//! Layout (little-endian): magic `RSTSPLIT`, `u32` version, `u32` entry
//! count, then per entry a `u32` name length, UTF-8 name, `u32` rank, `u32`
//! dims and `f32` data in row-major order. Frozen-row masks are stored as
//! extra rank-1 entries named `frozen:<param>`.

use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::{Model, ModelConfig, ModelError};
use super::params::Tensor;
use super::vocab::Vocab;
use crate::doc::LabelSet;

pub const MAGIC: &[u8; 8] = b"RSTSPLIT";
pub const VERSION: u32 = 1;
const FROZEN_PREFIX: &str = "frozen:";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("metadata: {0}")]
    Meta(#[from] serde_json::Error),
    #[error("entry `{name}` has shape {found:?}, model expects {expected:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint lacks parameter `{0}`")]
    MissingEntry(String),
    #[error("checkpoint has unknown entry `{0}`")]
    UnknownEntry(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}:{line}: expected {expected} values, found {found}")]
    EmbeddingDim { path: PathBuf, line: usize, expected: usize, found: usize },
    #[error("{path}:{line}: bad number `{text}`")]
    EmbeddingValue { path: PathBuf, line: usize, text: String },
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    labels: LabelSet,
    chars: Option<Vec<String>>,
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

pub fn vocab_path(path: &Path) -> PathBuf {
    sidecar(path, ".vocab")
}

pub fn meta_path(path: &Path) -> PathBuf {
    sidecar(path, ".meta.json")
}

struct Entry {
    name: String,
    dims: Vec<usize>,
    data: Vec<f32>,
}

fn write_entries<W: Write>(mut w: W, entries: &[Entry]) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        w.write_all(&(e.name.len() as u32).to_le_bytes())?;
        w.write_all(e.name.as_bytes())?;
        w.write_all(&(e.dims.len() as u32).to_le_bytes())?;
        for &d in &e.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &e.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| CheckpointError::Malformed(format!("truncated: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_entries<R: Read>(mut r: R) -> Result<Vec<Entry>, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|e| CheckpointError::Malformed(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::Malformed("entry name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let dims = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let size: usize = dims.iter().product();
        let mut bytes = vec![0u8; size * 4];
        r.read_exact(&mut bytes)
            .map_err(|e| CheckpointError::Malformed(format!("truncated data for `{name}`: {e}")))?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        entries.push(Entry { name, dims, data });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| CheckpointError::Malformed(e.to_string()))? != 0 {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    Ok(entries)
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io { path: path.to_path_buf(), source }
}

/// Writes the parameters to `path` plus `<path>.vocab` and
/// `<path>.meta.json`.
pub fn save_checkpoint(model: &Model<f32>, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let mut entries = Vec::new();
    for id in model.params.ids() {
        let t = model.params.get(id);
        entries.push(Entry {
            name: model.params.name(id).to_string(),
            dims: vec![t.rows, t.cols],
            data: t.data.clone(),
        });
    }
    for id in model.params.ids() {
        let mask = model.params.frozen_rows(id);
        if mask.iter().any(|&f| f) {
            entries.push(Entry {
                name: format!("{FROZEN_PREFIX}{}", model.params.name(id)),
                dims: vec![mask.len()],
                data: mask.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect(),
            });
        }
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    write_entries(io::BufWriter::new(file), &entries).map_err(io_err(path))?;

    let vp = vocab_path(path);
    let mut text = model.vocab.tokens().join("\n");
    text.push('\n');
    fs::write(&vp, text).map_err(io_err(&vp))?;

    let meta = Meta {
        config: model.config.clone(),
        labels: model.labels.clone(),
        chars: model.chars.as_ref().map(|c| c.tokens().to_vec()),
    };
    let mp = meta_path(path);
    fs::write(&mp, serde_json::to_string_pretty(&meta)?).map_err(io_err(&mp))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model<f32>, CheckpointError> {
    let path = path.as_ref();
    let mp = meta_path(path);
    let meta: Meta = serde_json::from_str(&fs::read_to_string(&mp).map_err(io_err(&mp))?)?;
    let mut labels = meta.labels;
    labels.rebuild_index();
    let vp = vocab_path(path);
    let tokens: Vec<String> = fs::read_to_string(&vp).map_err(io_err(&vp))?.lines().map(String::from).collect();
    let vocab = Vocab::from_tokens(tokens);
    let chars = meta.chars.map(Vocab::from_tokens);
    let mut model = Model::new(meta.config, vocab, chars, labels, 0)?;

    let file = fs::File::open(path).map_err(io_err(path))?;
    let entries = read_entries(BufReader::new(file))?;
    let mut seen = vec![false; model.params.len()];
    for e in entries {
        if let Some(target) = e.name.strip_prefix(FROZEN_PREFIX) {
            let id = model.params.id_of(target).ok_or_else(|| CheckpointError::UnknownEntry(e.name.clone()))?;
            if e.dims != [model.params.get(id).rows] {
                return Err(CheckpointError::Shape {
                    name: e.name,
                    expected: vec![model.params.get(id).rows],
                    found: e.dims,
                });
            }
            model.params.set_frozen_rows(id, e.data.iter().map(|&v| v != 0.0).collect());
            continue;
        }
        let id = model.params.id_of(&e.name).ok_or_else(|| CheckpointError::UnknownEntry(e.name.clone()))?;
        let t = model.params.get_mut(id);
        if e.dims != [t.rows, t.cols] {
            return Err(CheckpointError::Shape { name: e.name, expected: vec![t.rows, t.cols], found: e.dims });
        }
        *t = Tensor { rows: t.rows, cols: t.cols, data: e.data };
        seen[id.index()] = true;
    }
    if let Some(missing) = model.params.ids().find(|id| !seen[id.index()]) {
        return Err(CheckpointError::MissingEntry(model.params.name(missing).to_string()));
    }
    Ok(model)
}

/// Overwrites the embedding rows of every vocabulary word listed in a
/// whitespace-separated text file and freezes them. Returns the number of
/// rows replaced.
pub fn load_pretrained_embeddings(model: &mut Model<f32>, path: impl AsRef<Path>) -> Result<usize, CheckpointError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    let id = model.word_embedding_id();
    let dim = model.config.word_dim;
    let mut replaced = 0;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(CheckpointError::EmbeddingDim {
                path: path.to_path_buf(),
                line: lineno + 1,
                expected: dim,
                found: values.len(),
            });
        }
        let Some(row) = model.vocab.get(word) else { continue };
        let parsed = values
            .iter()
            .map(|s| {
                s.parse::<f32>().map_err(|_| CheckpointError::EmbeddingValue {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    text: s.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        model.params.get_mut(id).row_mut(row).copy_from_slice(&parsed);
        model.params.freeze_row(id, row);
        replaced += 1;
    }
    Ok(replaced)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{ModelConfig, ParseMode};
    use crate::synth::generate_synthetic_corpus;

    fn small() -> Model<f32> {
        let docs = generate_synthetic_corpus(3, 20, 8, 1).unwrap();
        let cfg = ModelConfig {
            word_dim: 5,
            use_chars: true,
            char_dim: 3,
            char_hidden: 2,
            hidden: 4,
            enc_layers: 2,
            dec_layers: 2,
            mlp_dim: 3,
            ..ModelConfig::default()
        };
        Model::new(cfg, Vocab::from_documents(&docs), Some(Vocab::chars_of(&docs)), LabelSet::from_documents(&docs), 9)
            .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let mut m = small();
        let id = m.word_embedding_id();
        m.params.freeze_row(id, 4);
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.vocab, m.vocab);
        assert_eq!(back.labels, m.labels);
        assert_eq!(back.config, m.config);
        assert!(back.params.is_frozen(id, 4));

        let docs = generate_synthetic_corpus(3, 20, 8, 1).unwrap();
        let a = m.loss_value(&docs[0], ParseMode::GoldEdu).unwrap();
        let b = back.loss_value(&docs[0], ParseMode::GoldEdu).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_checkpoint(&small(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"RSTSPLIT");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let first_name_len = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        assert_eq!(&bytes[20..20 + first_name_len], b"word_emb");
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_checkpoint(&small(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Malformed(_))));
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn pretrained_rows_are_replaced_and_frozen() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = small();
        let word = m.vocab.token(3).to_string();
        let emb = dir.path().join("vec.txt");
        fs::write(&emb, format!("{word} 1 2 3 4 5\nnot-in-vocab 0 0 0 0 0\n")).unwrap();
        assert_eq!(load_pretrained_embeddings(&mut m, &emb).unwrap(), 1);
        let id = m.word_embedding_id();
        assert_eq!(m.params.get(id).row(3), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(m.params.is_frozen(id, 3));
        assert!(!m.params.is_frozen(id, 4));

        let before = m.params.clone();
        let empty = dir.path().join("empty.txt");
        fs::write(&empty, "").unwrap();
        assert_eq!(load_pretrained_embeddings(&mut m, &empty).unwrap(), 0);
        assert_eq!(m.params, before);

        fs::write(&emb, format!("{word} 1 2 3\n")).unwrap();
        assert!(matches!(
            load_pretrained_embeddings(&mut m, &emb),
            Err(CheckpointError::EmbeddingDim { expected: 5, found: 3, .. })
        ));
    }
}
