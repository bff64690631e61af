//! Incremental decoding with a key/value cache and beam search.

use std::cmp::Ordering;

use super::model::TinyGerModel;
use super::ops;
use crate::codetrie::CodeTrie;
use crate::error::{Error, Result};
use crate::tokenizer::TokenValue;

/// Cached keys and values for every processed position.
#[derive(Debug, Clone)]
pub struct DecodeState {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
    /// Attention scores computed so far (one per query/key pair per head).
    pub score_ops: u64,
}

impl DecodeState {
    pub fn positions(&self) -> usize {
        self.len
    }
}

impl TinyGerModel {
    /// Runs `x` (rows at absolute positions `state.len..`) through every
    /// layer, appending to the cache. Returns the final-layer hidden rows.
    fn extend(&self, state: &mut DecodeState, mut h: Vec<f64>) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let (d, heads, hd, ff) = (cfg.d_model, cfg.n_heads, cfg.head_dim(), cfg.d_ff);
        let m = h.len() / d;
        let start = state.len;
        let scale = 1.0 / (hd as f64).sqrt();
        for (li, lp) in self.params.layers.iter().enumerate() {
            let (a, _) = ops::layernorm(&h, &lp.ln1_gain, &lp.ln1_bias, d);
            let q = ops::linear(&a, &lp.w_q, None, m, d, d);
            state.keys[li].extend(ops::linear(&a, &lp.w_k, None, m, d, d));
            state.values[li].extend(ops::linear(&a, &lp.w_v, None, m, d, d));
            let (keys, values) = (&state.keys[li], &state.values[li]);
            let total = start + m;
            let mut o = vec![0.0; m * d];
            let mut scores = vec![0.0; total];
            for r in 0..m {
                let i = start + r;
                for hh in 0..heads {
                    let cols = hh * hd..(hh + 1) * hd;
                    for (j, s) in scores.iter_mut().enumerate() {
                        *s = if self.attends(i, j) {
                            state.score_ops += 1;
                            q[r * d + cols.start..r * d + cols.end]
                                .iter()
                                .zip(&keys[j * d + cols.start..j * d + cols.end])
                                .map(|(x, y)| x * y)
                                .sum::<f64>()
                                * scale
                        } else {
                            f64::NEG_INFINITY
                        };
                    }
                    ops::softmax_in_place(&mut scores);
                    for (j, &p) in scores.iter().enumerate() {
                        if p == 0.0 {
                            continue;
                        }
                        for c in cols.clone() {
                            o[r * d + c] += p * values[j * d + c];
                        }
                    }
                }
            }
            let mut h1 = ops::linear(&o, &lp.w_o, Some(&lp.b_o), m, d, d);
            for (x, r) in h1.iter_mut().zip(&h) {
                *x += r;
            }
            let (b, _) = ops::layernorm(&h1, &lp.ln2_gain, &lp.ln2_bias, d);
            let g: Vec<f64> = ops::linear(&b, &lp.w_1, Some(&lp.b_1), m, d, ff)
                .into_iter()
                .map(ops::gelu)
                .collect();
            h = ops::linear(&g, &lp.w_2, Some(&lp.b_2), m, ff, d);
            for (x, r) in h.iter_mut().zip(&h1) {
                *x += r;
            }
            if !ops::all_finite(&h) {
                return Err(Error::NonFinite(format!("decoder layer {li}")));
            }
        }
        state.len += m;
        Ok(h)
    }

    fn project_last(&self, h: &[f64]) -> Vec<f64> {
        let d = self.config.d_model;
        let last = &h[h.len() - d..];
        let (z, _) = ops::layernorm(last, &self.params.lnf_gain, &self.params.lnf_bias, d);
        ops::linear(&z, &self.params.w_out, Some(&self.params.b_out), 1, d, self.alphabet())
    }

    /// Encodes the query block and the begin-of-code token. Returns the state
    /// and the logits for the first code position.
    pub fn start_decoding(&self, query: &[f64]) -> Result<(DecodeState, Vec<f64>)> {
        let cfg = &self.config;
        if query.len() != cfg.n_query * cfg.d_query {
            return Err(Error::DimensionMismatch {
                expected: cfg.n_query * cfg.d_query,
                found: query.len(),
            });
        }
        let mut state = DecodeState {
            keys: vec![Vec::new(); cfg.n_layers],
            values: vec![Vec::new(); cfg.n_layers],
            len: 0,
            score_ops: 0,
        };
        let mut h = self.embed_query(query);
        h.extend(self.embed_token(0, cfg.n_query));
        let out = self.extend(&mut state, h)?;
        let logits = self.project_last(&out);
        Ok((state, logits))
    }

    /// Feeds `token` at the next position and returns logits for the one after.
    pub fn step(&self, state: &mut DecodeState, token: TokenValue) -> Result<Vec<f64>> {
        if state.len >= self.config.positions() {
            return Err(Error::InvalidParameter(format!(
                "decoding past the maximum code length {}",
                self.config.max_code_len
            )));
        }
        if token as usize >= self.alphabet() {
            return Err(Error::InvalidParameter(format!("token {token} outside the alphabet")));
        }
        let x = self.embed_token(token, state.len);
        let out = self.extend(state, x)?;
        Ok(self.project_last(&out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOptions {
    pub beam_width: usize,
    pub max_len: usize,
    /// Stop a hypothesis once it emits this value (caption codes).
    pub end_of_code: Option<TokenValue>,
}

impl DecodeOptions {
    pub const DEFAULT_BEAM_WIDTH: usize = 3;

    pub fn new(max_len: usize) -> Self {
        Self {
            beam_width: Self::DEFAULT_BEAM_WIDTH,
            max_len,
            end_of_code: None,
        }
    }

    pub fn with_beam(mut self, beam_width: usize) -> Self {
        self.beam_width = beam_width;
        self
    }

    pub fn with_end_of_code(mut self, eoc: Option<TokenValue>) -> Self {
        self.end_of_code = eoc;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub code: Vec<TokenValue>,
    pub log_prob: f64,
}

/// Highest log-probability first, then lexicographically smaller code.
pub fn rank_order(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob
        .partial_cmp(&a.log_prob)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.code.cmp(&b.code))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutput {
    /// At most `beam_width` hypotheses in rank order.
    pub hypotheses: Vec<Hypothesis>,
    pub score_ops: u64,
}

struct Beam {
    hyp: Hypothesis,
    state: Option<DecodeState>,
    logits: Vec<f64>,
    finished: bool,
}

pub fn beam_decode(model: &TinyGerModel, query: &[f64], opts: DecodeOptions, trie: Option<&CodeTrie>) -> Result<Vec<Hypothesis>> {
    beam_decode_with_stats(model, query, opts, trie).map(|o| o.hypotheses)
}

pub fn beam_decode_with_stats(
    model: &TinyGerModel,
    query: &[f64],
    opts: DecodeOptions,
    trie: Option<&CodeTrie>,
) -> Result<BeamOutput> {
    if opts.beam_width == 0 {
        return Err(Error::InvalidParameter("beam width must be at least 1".into()));
    }
    let max_len = opts.max_len.min(model.config.max_code_len);
    let (state, logits) = model.start_decoding(query)?;
    let mut score_ops = state.score_ops;
    let mut beams = vec![Beam {
        hyp: Hypothesis {
            code: Vec::new(),
            log_prob: 0.0,
        },
        state: Some(state),
        logits,
        finished: false,
    }];
    let all: Vec<TokenValue> = (0..model.alphabet() as TokenValue).collect();

    for depth in 0..max_len {
        if beams.iter().all(|b| b.finished) {
            break;
        }
        let mut candidates: Vec<(Hypothesis, Option<usize>)> = Vec::new();
        for (bi, beam) in beams.iter().enumerate() {
            if beam.finished {
                candidates.push((beam.hyp.clone(), None));
                continue;
            }
            let allowed = match trie {
                Some(t) => t.allowed_next(&beam.hyp.code),
                None => all.clone(),
            };
            let logp = ops::log_softmax(&beam.logits);
            for v in allowed {
                let mut code = beam.hyp.code.clone();
                code.push(v);
                candidates.push((
                    Hypothesis {
                        code,
                        log_prob: beam.hyp.log_prob + logp[v as usize],
                    },
                    Some(bi),
                ));
            }
        }
        candidates.sort_by(|a, b| rank_order(&a.0, &b.0));
        candidates.truncate(opts.beam_width);

        let mut next = Vec::with_capacity(candidates.len());
        for (hyp, parent) in candidates {
            let Some(bi) = parent else {
                next.push(Beam {
                    hyp,
                    state: None,
                    logits: Vec::new(),
                    finished: true,
                });
                continue;
            };
            let last = *hyp.code.last().expect("expanded hypotheses are non-empty");
            let done = opts.end_of_code == Some(last) || depth + 1 == max_len;
            if done {
                next.push(Beam {
                    hyp,
                    state: None,
                    logits: Vec::new(),
                    finished: true,
                });
                continue;
            }
            let mut state = beams[bi].state.clone().expect("unfinished beams keep their state");
            let before = state.score_ops;
            let logits = model.step(&mut state, last)?;
            score_ops += state.score_ops - before;
            next.push(Beam {
                hyp,
                state: Some(state),
                logits,
                finished: false,
            });
        }
        if next.is_empty() {
            // Constrained decoding with an empty trie.
            beams.clear();
            break;
        }
        beams = next;
    }
    let mut hypotheses: Vec<Hypothesis> = beams.into_iter().map(|b| b.hyp).filter(|h| !h.code.is_empty()).collect();
    hypotheses.sort_by(rank_order);
    Ok(BeamOutput { hypotheses, score_ops })
}

/// Repeated argmax, ties to the smaller value.
pub fn greedy_decode(model: &TinyGerModel, query: &[f64], max_len: usize, end_of_code: Option<TokenValue>) -> Result<Hypothesis> {
    let max_len = max_len.min(model.config.max_code_len);
    let (mut state, mut logits) = model.start_decoding(query)?;
    let mut hyp = Hypothesis {
        code: Vec::new(),
        log_prob: 0.0,
    };
    for depth in 0..max_len {
        let logp = ops::log_softmax(&logits);
        let mut best = 0;
        for (v, &lp) in logp.iter().enumerate() {
            if lp > logp[best] {
                best = v;
            }
        }
        hyp.code.push(best as TokenValue);
        hyp.log_prob += logp[best];
        if end_of_code == Some(best as TokenValue) || depth + 1 == max_len {
            break;
        }
        logits = model.step(&mut state, best as TokenValue)?;
    }
    Ok(hyp)
}
