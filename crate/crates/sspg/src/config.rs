//! Run configuration: a flat JSON key set covering model kind, optimizer,
//! vocabulary sizes, architecture sizes, and decoding defaults.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::model::ModelKind;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Config {
    pub model: ModelKind,
    pub lr: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub bpe_size: usize,
    pub lexicon_size: usize,
    pub max_seg_len: usize,
    pub embed_size: usize,
    pub hidden_size: usize,
    pub layers: usize,
    pub beam_k: usize,
    pub seed: u64,
    pub epochs: usize,
    pub patience: usize,
}

impl Config {
    pub fn sspg_defaults() -> Self {
        Config {
            model: ModelKind::Sspg,
            lr: 1e-3,
            dropout: 0.5,
            batch_size: 4,
            bpe_size: 1000,
            lexicon_size: 1000,
            max_seg_len: 5,
            embed_size: 128,
            hidden_size: 128,
            layers: 1,
            beam_k: 5,
            seed: 1,
            epochs: 30,
            patience: 5,
        }
    }

    pub fn ssd_defaults() -> Self {
        Config {
            model: ModelKind::Ssd,
            dropout: 0.3,
            bpe_size: 250,
            lexicon_size: 250,
            ..Self::sspg_defaults()
        }
    }

    pub fn pg_defaults() -> Self {
        Config {
            model: ModelKind::Pg,
            dropout: 0.3,
            bpe_size: 500,
            ..Self::sspg_defaults()
        }
    }

    pub fn defaults_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Sspg => Self::sspg_defaults(),
            ModelKind::Ssd => Self::ssd_defaults(),
            ModelKind::Pg => Self::pg_defaults(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 || self.bpe_size == 0 || self.embed_size == 0
            || self.hidden_size == 0 || self.beam_k == 0 || self.epochs == 0
        {
            return Err("all sizes must be positive".into());
        }
        if self.layers != 1 {
            return Err("only single-layer LSTMs are supported".into());
        }
        if !matches!(self.model, ModelKind::Pg) && (self.lexicon_size == 0 || self.max_seg_len == 0) {
            return Err("segmental models need lexicon_size and max_seg_len".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err("dropout must be in [0,1)".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path)
            .map_err(|e| DataError::Io { path: path.display().to_string(), source: e })?;
        let cfg: Config = serde_json::from_str(&text)
            .map_err(|e| DataError::Malformed { line: 0, reason: e.to_string() })?;
        cfg.validate().map_err(|reason| DataError::Malformed { line: 0, reason })?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, serde_json::to_string_pretty(self).unwrap())
            .map_err(|e| DataError::Io { path: path.display().to_string(), source: e })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_defaults() {
        let s = Config::sspg_defaults();
        assert_eq!(s.lr, 1e-3);
        assert_eq!(s.dropout, 0.5);
        assert_eq!(s.batch_size, 4);
        assert_eq!(s.bpe_size, 1000);
        assert_eq!(s.lexicon_size, 1000);
        assert_eq!(s.max_seg_len, 5);
        assert_eq!((s.embed_size, s.hidden_size, s.layers), (128, 128, 1));
        let p = Config::pg_defaults();
        assert_eq!((p.lr, p.dropout, p.batch_size, p.bpe_size), (1e-3, 0.3, 4, 500));
    }

    #[test]
    fn file_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("config.json");
        let cfg = Config::ssd_defaults();
        cfg.save(&p).unwrap();
        assert_eq!(Config::load(&p).unwrap(), cfg);
    }
}
