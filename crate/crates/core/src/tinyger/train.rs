//! Mini-batch SGD with momentum and the `key = value` training config.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{Params, TinyGerModel, TrainingExample};
use crate::codebook::Scheme;
use crate::error::{Error, Result};
use crate::seed;

/// Examples per parallel gradient shard. Shards are reduced in index order so
/// the summed gradient does not depend on the thread count.
const SHARD: usize = 8;

/// Consecutive steps above the divergence ratio before training aborts.
pub const DIVERGENCE_PATIENCE: usize = 100;
pub const DIVERGENCE_RATIO: f64 = 10.0;

pub const PRETRAIN_LABEL_SMOOTHING: f64 = 0.3;
pub const FINETUNE_LABEL_SMOOTHING: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub label_smoothing: f64,
    /// Rescale the batch gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub scheme: Scheme,
    /// Code length `L`.
    pub code_length: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub beam_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            label_smoothing: FINETUNE_LABEL_SMOOTHING,
            clip_norm: Some(1.0),
            seed: 0,
            scheme: Scheme::Ald,
            code_length: 4,
            d_model: 64,
            n_layers: 1,
            n_heads: 2,
            beam_width: 3,
        }
    }
}

impl TrainConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep
    /// their defaults.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(source_name, lineno, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            fn num<T: FromStr>(v: &str, src: &str, line: usize, key: &str) -> Result<T> {
                v.parse()
                    .map_err(|_| Error::parse(src, line, format!("invalid value {v:?} for {key}")))
            }
            match key {
                "steps" => cfg.steps = num(value, source_name, lineno, key)?,
                "batch_size" => cfg.batch_size = num(value, source_name, lineno, key)?,
                "lr" => cfg.lr = num(value, source_name, lineno, key)?,
                "momentum" => cfg.momentum = num(value, source_name, lineno, key)?,
                "label_smoothing" => cfg.label_smoothing = num(value, source_name, lineno, key)?,
                "clip_norm" => {
                    cfg.clip_norm = match value {
                        "none" => None,
                        v => Some(num(v, source_name, lineno, key)?),
                    }
                }
                "seed" => cfg.seed = num(value, source_name, lineno, key)?,
                "scheme" => cfg.scheme = num(value, source_name, lineno, key)?,
                "L" | "code_length" => cfg.code_length = num(value, source_name, lineno, key)?,
                "d" | "d_model" => cfg.d_model = num(value, source_name, lineno, key)?,
                "n_layers" => cfg.n_layers = num(value, source_name, lineno, key)?,
                "n_heads" => cfg.n_heads = num(value, source_name, lineno, key)?,
                "beam_width" => cfg.beam_width = num(value, source_name, lineno, key)?,
                other => return Err(Error::parse(source_name, lineno, format!("unknown key {other:?}"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing must lie in [0, 1)");
        }
        if self.clip_norm.is_some_and(|c| c <= 0.0) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut kv = BTreeMap::new();
        kv.insert("steps", self.steps.to_string());
        kv.insert("batch_size", self.batch_size.to_string());
        kv.insert("lr", self.lr.to_string());
        kv.insert("momentum", self.momentum.to_string());
        kv.insert("label_smoothing", self.label_smoothing.to_string());
        kv.insert("clip_norm", self.clip_norm.map_or("none".into(), |c| c.to_string()));
        kv.insert("seed", self.seed.to_string());
        kv.insert("scheme", self.scheme.to_string());
        kv.insert("L", self.code_length.to_string());
        kv.insert("d_model", self.d_model.to_string());
        kv.insert("n_layers", self.n_layers.to_string());
        kv.insert("n_heads", self.n_heads.to_string());
        kv.insert("beam_width", self.beam_width.to_string());
        for (k, v) in kv {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss at every step.
    pub loss_curve: Vec<f64>,
    pub steps_completed: usize,
}

impl TrainReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.loss_curve.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_curve.last().copied()
    }
}

/// Mean of per-example losses, each averaged over its code positions.
pub fn batch_gradient(model: &TinyGerModel, batch: &[&TrainingExample], smoothing: f64) -> Result<(f64, Params)> {
    let n = batch.len() as f64;
    let shards: Vec<Result<(f64, Params)>> = batch
        .par_chunks(SHARD)
        .map(|chunk| {
            let mut g = Params::zeros(&model.config);
            let mut loss = 0.0;
            for ex in chunk {
                loss += model.accumulate_gradient(ex, smoothing, 1.0 / n, &mut g)?;
            }
            Ok((loss, g))
        })
        .collect();
    let mut total = Params::zeros(&model.config);
    let mut loss = 0.0;
    for shard in shards {
        let (l, g) = shard?;
        loss += l;
        total.add_scaled(&g, 1.0);
    }
    Ok((loss / n, total))
}

/// Mean loss over a whole dataset, evaluated in parallel.
pub fn dataset_loss(model: &TinyGerModel, data: &[TrainingExample], smoothing: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptySplit("training data".into()));
    }
    let losses: Vec<Result<f64>> = data
        .par_iter()
        .map(|ex| model.forward_loss(ex, smoothing).map(|o| o.loss))
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / data.len() as f64)
}

/// Trains in place. Batches are drawn uniformly with replacement from a
/// stream seeded by `cfg.seed`.
pub fn train(model: &mut TinyGerModel, data: &[TrainingExample], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptySplit("training data".into()));
    }
    let mut rng = seed::rng(cfg.seed, "tinyger/batches");
    let mut velocity = Params::zeros(&model.config);
    let mut curve = Vec::with_capacity(cfg.steps);
    let mut above = 0usize;
    for step in 0..cfg.steps {
        let batch: Vec<&TrainingExample> = (0..cfg.batch_size)
            .map(|_| &data[rng.random_range(0..data.len())])
            .collect();
        let (loss, mut grad) = batch_gradient(model, &batch, cfg.label_smoothing)?;
        curve.push(loss);
        let initial = curve[0];
        if loss > DIVERGENCE_RATIO * initial || !loss.is_finite() {
            above += 1;
            if above >= DIVERGENCE_PATIENCE || !loss.is_finite() {
                return Err(Error::Divergence { step, loss, initial });
            }
        } else {
            above = 0;
        }
        if let Some(max) = cfg.clip_norm {
            let norm = grad.squared_norm().sqrt();
            if norm > max {
                grad.scale(max / norm);
            }
        }
        velocity.scale(cfg.momentum);
        velocity.add_scaled(&grad, 1.0);
        model.params.add_scaled(&velocity, -cfg.lr);
        if !model.params.all_finite() {
            return Err(Error::NonFinite(format!("parameters after step {step}")));
        }
    }
    Ok(TrainReport {
        steps_completed: curve.len(),
        loss_curve: curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips() {
        let cfg = TrainConfig {
            steps: 17,
            lr: 0.25,
            scheme: Scheme::Caption,
            clip_norm: None,
            ..TrainConfig::default()
        };
        let text = cfg.to_string();
        assert_eq!(TrainConfig::parse(&text, "cfg").unwrap(), cfg);
    }

    #[test]
    fn config_errors_name_the_line() {
        let err = TrainConfig::parse("steps = 3\nlr = fast\n", "run.cfg").unwrap_err();
        assert!(err.to_string().contains("run.cfg:2"), "{err}");
        assert!(TrainConfig::parse("warmup = 3", "x").is_err());
        assert!(TrainConfig::parse("steps 3", "x").is_err());
    }
}
