//! Checkpoint file: an 8-byte little-endian header length, a JSON header
//! (format version, config echo, parameter names/shapes, vocabularies),
//! then the raw little-endian f64 arrays in header order. Round-trips are
//! bit-exact.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::ModelError;
use crate::graph::ParamStore;
use crate::model::{Dims, MixtureMode, ModelKind, PgModel, SspgModel};
use crate::tensor::Tensor;
use crate::tokenizer::{BpeVocab, CharVocab, Lexicon};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: ModelKind,
    config: Config,
    dims: Dims,
    dropout: f64,
    max_seg_len: usize,
    mode: Option<MixtureMode>,
    bpe: BpeVocab,
    chars: Option<CharVocab>,
    lexicon: Option<Lexicon>,
    params: Vec<ParamMeta>,
}

/// A loadable model of either family.
pub enum AnyModel {
    Sspg(SspgModel),
    Pg(PgModel),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Sspg(m) => match m.mode {
                MixtureMode::LexiconCopy => ModelKind::Sspg,
                _ => ModelKind::Ssd,
            },
            AnyModel::Pg(_) => ModelKind::Pg,
        }
    }
}

fn write_all(path: &Path, header: &Header, params: &ParamStore) -> Result<(), ModelError> {
    let header_bytes =
        serde_json::to_vec(header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut f = File::create(path).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    f.write_all(&(header_bytes.len() as u64).to_le_bytes())
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    f.write_all(&header_bytes).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    for meta in &header.params {
        let t = params.get(&meta.name).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let mut buf = Vec::with_capacity(t.numel() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        f.write_all(&buf).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    }
    Ok(())
}

pub fn save(path: &Path, model: &AnyModel, config: &Config) -> Result<(), ModelError> {
    let (params, header) = match model {
        AnyModel::Sspg(m) => (
            &m.params,
            Header {
                version: FORMAT_VERSION,
                kind: match m.mode {
                    MixtureMode::LexiconCopy => ModelKind::Sspg,
                    _ => ModelKind::Ssd,
                },
                config: config.clone(),
                dims: m.dims,
                dropout: m.dropout,
                max_seg_len: m.max_seg_len,
                mode: Some(m.mode),
                bpe: m.bpe.clone(),
                chars: Some(m.chars.clone()),
                lexicon: Some(m.lexicon.clone()),
                params: m
                    .params
                    .iter()
                    .map(|(n, t)| ParamMeta { name: n.to_string(), shape: t.shape().to_vec() })
                    .collect(),
            },
        ),
        AnyModel::Pg(m) => (
            &m.params,
            Header {
                version: FORMAT_VERSION,
                kind: ModelKind::Pg,
                config: config.clone(),
                dims: m.dims,
                dropout: m.dropout,
                max_seg_len: 0,
                mode: None,
                bpe: m.bpe.clone(),
                chars: None,
                lexicon: None,
                params: m
                    .params
                    .iter()
                    .map(|(n, t)| ParamMeta { name: n.to_string(), shape: t.shape().to_vec() })
                    .collect(),
            },
        ),
    };
    write_all(path, &header, params)
}

pub fn load(path: &Path) -> Result<(AnyModel, Config), ModelError> {
    let mut f = File::open(path).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let header: Header =
        serde_json::from_slice(&header_bytes).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported format version {}", header.version)));
    }

    let mut params = ParamStore::new();
    for meta in &header.params {
        let numel: usize = meta.shape.iter().product();
        let mut buf = vec![0u8; numel * 8];
        f.read_exact(&mut buf).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let data: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(
            &meta.name,
            Tensor::new(meta.shape.clone(), data).map_err(|e| ModelError::Checkpoint(e.to_string()))?,
        );
    }

    let mut bpe = header.bpe;
    bpe.rebuild_index();
    let model = match header.kind {
        ModelKind::Pg => AnyModel::Pg(PgModel {
            dims: header.dims,
            bpe,
            dropout: header.dropout,
            params,
        }),
        _ => {
            let mut chars = header
                .chars
                .ok_or_else(|| ModelError::Checkpoint("missing char vocab".into()))?;
            chars.rebuild_index();
            let mut lexicon = header
                .lexicon
                .ok_or_else(|| ModelError::Checkpoint("missing lexicon".into()))?;
            lexicon.rebuild_index();
            AnyModel::Sspg(SspgModel {
                dims: header.dims,
                bpe,
                chars,
                lexicon,
                mode: header.mode.ok_or_else(|| ModelError::Checkpoint("missing mode".into()))?,
                max_seg_len: header.max_seg_len,
                dropout: header.dropout,
                params,
            })
        }
    };
    Ok((model, header.config))
}
