use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Precision;

/// How the target length `J` reaches the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthMode {
    #[default]
    None,
    /// `<len_J>` token prepended to the source (handled by the data pipeline).
    SourceToken,
    /// Learned remaining-length embedding merged into the first decoder state.
    DecoderEmbedding,
    /// Decoder positions count down the remaining length instead of up.
    ReversePositional,
}

impl LengthMode {
    pub const ALL: [LengthMode; 4] =
        [LengthMode::None, LengthMode::SourceToken, LengthMode::DecoderEmbedding, LengthMode::ReversePositional];

    pub fn as_str(self) -> &'static str {
        match self {
            LengthMode::None => "none",
            LengthMode::SourceToken => "source_token",
            LengthMode::DecoderEmbedding => "decoder_embedding",
            LengthMode::ReversePositional => "reverse_positional",
        }
    }
}

impl fmt::Display for LengthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LengthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LengthMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown length mode '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub dropout: f64,
    pub word_dropout: f64,
    /// Longest encoder input / decoder target, in tokens.
    pub max_seq_len: usize,
    /// Largest remaining-length index `L_max`; larger values are clipped.
    pub max_len_index: usize,
    /// Width of the remaining-length embedding.
    pub d_len: usize,
    pub vocab_size: usize,
    pub length_mode: LengthMode,
    pub precision: Precision,
}

impl ModelConfig {
    /// Desk-scale defaults: 2 layers, `d_model` 64, `d_ff` 256, 4 heads, `d_len = d_model / 8`.
    pub fn desk(vocab_size: usize, length_mode: LengthMode) -> Self {
        ModelConfig {
            n_layers: 2,
            d_model: 64,
            d_ff: 256,
            n_heads: 4,
            dropout: 0.1,
            word_dropout: 0.1,
            max_seq_len: 24,
            max_len_index: 24,
            d_len: 8,
            vocab_size,
            length_mode,
            precision: Precision::F32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.d_model == 0 || self.d_ff == 0 || self.n_heads == 0 || self.vocab_size == 0 {
            return bad(format!("model dimensions must be positive: {self:?}"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.max_len_index < self.max_seq_len {
            return bad(format!("max_len_index {} < max_seq_len {}", self.max_len_index, self.max_seq_len));
        }
        if self.length_mode == LengthMode::DecoderEmbedding && self.d_len == 0 {
            return bad("decoder_embedding needs d_len > 0".into());
        }
        for (name, p) in [("dropout", self.dropout), ("word_dropout", self.word_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1)"));
            }
        }
        Ok(())
    }

    /// `key = value` lines, the same syntax as run config files.
    pub fn to_kv(&self) -> String {
        format!(
            "n_layers = {}\nd_model = {}\nd_ff = {}\nn_heads = {}\ndropout = {}\nword_dropout = {}\n\
             max_seq_len = {}\nmax_len_index = {}\nd_len = {}\nvocab_size = {}\nlength_mode = {}\nprecision = {}\n",
            self.n_layers,
            self.d_model,
            self.d_ff,
            self.n_heads,
            self.dropout,
            self.word_dropout,
            self.max_seq_len,
            self.max_len_index,
            self.d_len,
            self.vocab_size,
            self.length_mode,
            self.precision
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::desk(1, LengthMode::None);
        let mut seen = 0usize;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("expected 'key = value', got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let int = || value.parse::<usize>().map_err(|e| Error::Config(format!("{key}: {e}")));
            let float = || value.parse::<f64>().map_err(|e| Error::Config(format!("{key}: {e}")));
            match key {
                "n_layers" => cfg.n_layers = int()?,
                "d_model" => cfg.d_model = int()?,
                "d_ff" => cfg.d_ff = int()?,
                "n_heads" => cfg.n_heads = int()?,
                "dropout" => cfg.dropout = float()?,
                "word_dropout" => cfg.word_dropout = float()?,
                "max_seq_len" => cfg.max_seq_len = int()?,
                "max_len_index" => cfg.max_len_index = int()?,
                "d_len" => cfg.d_len = int()?,
                "vocab_size" => cfg.vocab_size = int()?,
                "length_mode" => cfg.length_mode = value.parse()?,
                "precision" => cfg.precision = value.parse().map_err(Error::Config)?,
                other => return Err(Error::Config(format!("unknown model config key '{other}'"))),
            }
            seen += 1;
        }
        if seen == 0 {
            return Err(Error::Config("empty model config".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut cfg = ModelConfig::desk(313, LengthMode::DecoderEmbedding);
        cfg.dropout = 0.125;
        assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn rejects_indivisible_heads_and_short_len_table() {
        let mut cfg = ModelConfig::desk(10, LengthMode::None);
        cfg.n_heads = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::desk(10, LengthMode::None);
        cfg.max_len_index = cfg.max_seq_len - 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mode_names_parse() {
        for m in LengthMode::ALL {
            assert_eq!(m.as_str().parse::<LengthMode>().unwrap(), m);
        }
        assert!("bogus".parse::<LengthMode>().is_err());
    }
}
