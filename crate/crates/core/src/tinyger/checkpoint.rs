//! Binary checkpoints.
//!
//! Layout: magic `TGER`, then little-endian `u32` fields `version`,
//! `vocab_size`, `d_model`, `n_layers`, `n_heads`, `d_ff`, `d_query`,
//! `n_query`, `max_code_len`, `seed_lo`, `seed_hi`, followed by every
//! parameter as a little-endian `f64` in this tensor order:
//!
//! `w_in, b_in, token_embeddings, positions`, then per layer
//! `ln1_gain, ln1_bias, w_q, w_k, w_v, w_o, b_o, ln2_gain, ln2_bias, w_1, b_1, w_2, b_2`,
//! then `lnf_gain, lnf_bias, w_out, b_out`. Matrices are row-major with the
//! input dimension first.

use std::path::Path;

use super::model::{ModelConfig, Params, TinyGerModel};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TGER";
pub const VERSION: u32 = 1;
const HEADER_WORDS: usize = 11;

fn bad(message: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        message: message.into(),
    }
}

pub fn to_bytes(model: &TinyGerModel) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::with_capacity(4 + HEADER_WORDS * 4 + model.params.len() * 8);
    out.extend_from_slice(MAGIC);
    let header = [
        VERSION,
        c.vocab_size,
        c.d_model as u32,
        c.n_layers as u32,
        c.n_heads as u32,
        c.d_ff as u32,
        c.d_query as u32,
        c.n_query as u32,
        c.max_code_len as u32,
        c.seed as u32,
        (c.seed >> 32) as u32,
    ];
    for w in header {
        out.extend_from_slice(&w.to_le_bytes());
    }
    for (_, t) in model.params.tensors() {
        for x in t {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<TinyGerModel> {
    if bytes.len() < 4 + HEADER_WORDS * 4 || &bytes[..4] != MAGIC {
        return Err(bad("missing TGER header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != VERSION {
        return Err(bad(format!("unsupported version {}", word(0))));
    }
    let config = ModelConfig {
        vocab_size: word(1),
        d_model: word(2) as usize,
        n_layers: word(3) as usize,
        n_heads: word(4) as usize,
        d_ff: word(5) as usize,
        d_query: word(6) as usize,
        n_query: word(7) as usize,
        max_code_len: word(8) as usize,
        seed: word(9) as u64 | (word(10) as u64) << 32,
    };
    config.validate()?;
    let mut params = Params::zeros(&config);
    let body = &bytes[4 + HEADER_WORDS * 4..];
    if body.len() != params.len() * 8 {
        return Err(bad(format!(
            "expected {} parameter bytes, found {}",
            params.len() * 8,
            body.len()
        )));
    }
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for t in params.tensors_mut() {
        for x in t.iter_mut() {
            *x = values.next().expect("length checked above");
        }
    }
    if !params.all_finite() {
        return Err(Error::NonFinite("checkpoint parameters".into()));
    }
    Ok(TinyGerModel { config, params })
}

pub fn save(model: &TinyGerModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<TinyGerModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
