//! Model checkpoints: architecture, vocabularies and parameters in one file.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ifthen_tensor::checkpoint::{read_checkpoint, write_checkpoint};
use ifthen_tensor::{DType, Scalar};
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{io_err, Error, Result};
use crate::models::{ArchConfig, Family, SeqModel};

const FORMAT_VERSION: u32 = 1;

/// Metadata block stored ahead of the parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: u32,
    pub family: Family,
    pub arch: ArchConfig,
    pub source_vocab: Vec<String>,
    pub target_vocab: Vec<String>,
    pub source_vocab_hash: String,
    pub target_vocab_hash: String,
    pub use_description: bool,
    pub step: u64,
    pub dtype: DType,
}

/// What a loaded checkpoint must agree with; `None` fields are unchecked.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Expected {
    pub family: Option<Family>,
    pub source_vocab_hash: Option<String>,
    pub target_vocab_hash: Option<String>,
}

fn incompatible<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::IncompatibleCheckpoint(msg.into()))
}

/// Writes `model` to `path` via a temporary sibling, so an interrupted save
/// never clobbers the previous file.
pub fn save_checkpoint<T: Scalar>(path: &Path, model: &SeqModel<T>, step: u64) -> Result<()> {
    let meta = CheckpointMeta {
        format: FORMAT_VERSION,
        family: model.family(),
        arch: model.config().clone(),
        source_vocab: model.source_vocab().tokens().to_vec(),
        target_vocab: model.target_vocab().tokens().to_vec(),
        source_vocab_hash: model.source_vocab().hash(),
        target_vocab_hash: model.target_vocab().hash(),
        use_description: model.use_description(),
        step,
        dtype: T::DTYPE,
    };
    let value = serde_json::to_value(&meta).map_err(|e| Error::Validation(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(io_err(format!("creating {}", tmp.display())))?;
        let mut out = BufWriter::new(file);
        write_checkpoint(&mut out, &value, model.params())?;
        out.flush().map_err(io_err(format!("writing {}", tmp.display())))?;
    }
    fs::rename(&tmp, path).map_err(io_err(format!("renaming to {}", path.display())))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(SeqModel<T>, CheckpointMeta)> {
    load_checkpoint_checked(path, &Expected::default())
}

/// Loads a checkpoint, rejecting it when stored hashes do not match the
/// stored vocabularies or when it disagrees with `expected`.
pub fn load_checkpoint_checked<T: Scalar>(path: &Path, expected: &Expected) -> Result<(SeqModel<T>, CheckpointMeta)> {
    let file = File::open(path).map_err(io_err(format!("opening {}", path.display())))?;
    let (value, params) = read_checkpoint::<T, _>(BufReader::new(file))?;
    let meta: CheckpointMeta =
        serde_json::from_value(value).map_err(|e| Error::IncompatibleCheckpoint(format!("metadata: {e}")))?;
    if meta.format != FORMAT_VERSION {
        return incompatible(format!("unsupported format version {}", meta.format));
    }
    if meta.family != meta.arch.family() {
        return incompatible("family tag disagrees with architecture config");
    }
    if let Some(f) = expected.family {
        if f != meta.family {
            return incompatible(format!("checkpoint holds a {} model, expected {f}", meta.family));
        }
    }
    let source = Vocabulary::from_tokens(meta.source_vocab.clone())
        .map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
    let target = Vocabulary::from_tokens(meta.target_vocab.clone())
        .map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
    let checks = [
        ("source", source.hash(), &meta.source_vocab_hash, &expected.source_vocab_hash),
        ("target", target.hash(), &meta.target_vocab_hash, &expected.target_vocab_hash),
    ];
    for (side, actual, stored, wanted) in checks {
        if &actual != stored {
            return incompatible(format!("{side} vocabulary does not match its stored hash"));
        }
        if let Some(w) = wanted {
            if w != stored {
                return incompatible(format!("{side} vocabulary hash {stored} differs from expected {w}"));
            }
        }
    }
    let model = SeqModel::from_parts(meta.arch.clone(), params, source, target, meta.use_description)?;
    Ok((model, meta))
}
