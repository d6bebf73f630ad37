//! Versioned binary model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! 0   magic  b"VPRF"
//! 4   format_version  u32
//! 8   header_len      u64
//! 16  header JSON     (tokenizer hash, task schema, dim, decay,
//!                      section byte lengths)
//! ..  parameter array f64 LE, in the flat layout documented on
//!     ReferenceEncoder
//! ..  vocab JSON section        (optional)
//! ..  prior JSON section        (optional)
//! ..  calibration JSON section  (optional)
//! ```
//!
//! The optional sections let one file carry everything `profile` and `serve`
//! need; a model saved without them still loads.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::value::{Prior, ScaleCalibration};

use super::reference::{layout, ReferenceEncoder};
use super::TaskSchema;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: [u8; 4] = *b"VPRF";

/// A trained model plus the artifacts needed to run it end to end.
#[derive(Debug, Clone)]
pub struct ModelFile {
    pub encoder: ReferenceEncoder,
    /// Hash of the vocabulary the model was trained against.
    pub tokenizer_hash: u64,
    pub vocab: Option<Vocab>,
    pub prior: Option<Prior>,
    pub calibration: Option<ScaleCalibration>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tokenizer_hash: u64,
    schema: TaskSchema,
    vocab_size: usize,
    dim: usize,
    decay: f64,
    n_params: usize,
    vocab_len: u64,
    prior_len: u64,
    calibration_len: u64,
}

pub fn save_model(model: &ModelFile, path: impl AsRef<Path>) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    write_model(model, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn write_model<W: Write>(model: &ModelFile, w: &mut W) -> Result<()> {
    let enc = &model.encoder;
    let vocab_json = model.vocab.as_ref().map(serde_json::to_vec).transpose()?;
    let prior_json = model.prior.as_ref().map(serde_json::to_vec).transpose()?;
    let calib_json = model.calibration.as_ref().map(serde_json::to_vec).transpose()?;

    let header = Header {
        tokenizer_hash: model.tokenizer_hash,
        schema: enc.schema.clone(),
        vocab_size: enc.vocab_size,
        dim: enc.dim,
        decay: enc.decay,
        n_params: enc.params.len(),
        vocab_len: vocab_json.as_ref().map_or(0, |v| v.len() as u64),
        prior_len: prior_json.as_ref().map_or(0, |v| v.len() as u64),
        calibration_len: calib_json.as_ref().map_or(0, |v| v.len() as u64),
    };
    let header_json = serde_json::to_vec(&header)?;

    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header_json.len() as u64).to_le_bytes())?;
    w.write_all(&header_json)?;
    for p in &enc.params {
        w.write_all(&p.to_le_bytes())?;
    }
    for section in [vocab_json, prior_json, calib_json].into_iter().flatten() {
        w.write_all(&section)?;
    }
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let mut file = BufReader::new(File::open(path)?);
    read_model(&mut file)
}

fn read_exact(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Model(format!("truncated while reading {what}")))?;
    Ok(buf)
}

pub fn read_model<R: Read>(r: &mut R) -> Result<ModelFile> {
    let magic = read_exact(r, 4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Model("bad magic; not a model file".into()));
    }
    let version = u32::from_le_bytes(read_exact(r, 4, "version")?.try_into().unwrap());
    if version > FORMAT_VERSION {
        return Err(Error::Version { found: version, supported: FORMAT_VERSION });
    }
    let header_len = u64::from_le_bytes(read_exact(r, 8, "header length")?.try_into().unwrap());
    let header: Header = serde_json::from_slice(&read_exact(r, header_len as usize, "header")?)
        .map_err(|e| Error::Model(format!("bad header: {e}")))?;

    let expected = layout(&header.schema, header.vocab_size, header.dim).total;
    if header.n_params != expected {
        return Err(Error::Model(format!(
            "parameter count {} does not match schema ({} expected)",
            header.n_params, expected
        )));
    }
    let raw = read_exact(r, header.n_params * 8, "parameters")?;
    let params: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut section = |len: u64, what: &str| -> Result<Option<Vec<u8>>> {
        if len == 0 {
            Ok(None)
        } else {
            Ok(Some(read_exact(r, len as usize, what)?))
        }
    };
    let vocab_bytes = section(header.vocab_len, "vocab section")?;
    let prior_bytes = section(header.prior_len, "prior section")?;
    let calib_bytes = section(header.calibration_len, "calibration section")?;

    let vocab = vocab_bytes
        .map(|b| -> Result<Vocab> {
            let mut v: Vocab = serde_json::from_slice(&b)
                .map_err(|e| Error::Model(format!("bad vocab section: {e}")))?;
            v.reindex();
            Ok(v)
        })
        .transpose()?;
    let prior = prior_bytes
        .map(|b| serde_json::from_slice(&b).map_err(|e| Error::Model(format!("bad prior section: {e}"))))
        .transpose()?;
    let calibration = calib_bytes
        .map(|b| {
            serde_json::from_slice(&b).map_err(|e| Error::Model(format!("bad calibration section: {e}")))
        })
        .transpose()?;

    Ok(ModelFile {
        encoder: ReferenceEncoder {
            schema: header.schema,
            vocab_size: header.vocab_size,
            dim: header.dim,
            decay: header.decay,
            params,
        },
        tokenizer_hash: header.tokenizer_hash,
        vocab,
        prior,
        calibration,
    })
}
