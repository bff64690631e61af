//! Parameters, teacher-forced forward pass and exact reverse-mode gradients of
//! the toy decoder.
//!
//! Sequence layout: `n_query` query positions (each a `d_query` vector mapped
//! through a learned input projection), then the begin-of-code embedding
//! `Y_0`, then `Y_{c_1} .. Y_{c_{L-1}}`. Position `n_query + i` predicts
//! `c_{i+1}`. Query positions attend to each other freely; code positions
//! attend to the query block and to earlier code positions only.
//!
//! Each layer is pre-norm: `h += Attn(LN(h))`, `h += FFN(LN(h))` with a tanh
//! GELU. A final layer norm feeds an output projection over the `V + 2`
//! token values (0 = begin-of-code, `V + 1` = end-of-code).

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{self, LnCache};
use crate::error::{Error, Result};
use crate::seed;
use crate::tokenizer::TokenValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Code vocabulary `V`; the output alphabet has `V + 2` values.
    pub vocab_size: u32,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub d_query: usize,
    pub n_query: usize,
    /// Longest code the positional table supports.
    pub max_code_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// One layer, two heads, `d_ff = 4 d`, a single query vector.
    pub fn new(vocab_size: u32, d_model: usize, d_query: usize, max_code_len: usize, seed: u64) -> Self {
        Self {
            vocab_size,
            d_model,
            n_layers: 1,
            n_heads: 2,
            d_ff: 4 * d_model,
            d_query,
            n_query: 1,
            max_code_len,
            seed,
        }
    }

    pub fn alphabet(&self) -> usize {
        self.vocab_size as usize + 2
    }

    pub fn positions(&self) -> usize {
        self.n_query + self.max_code_len
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} not divisible into {} heads", self.d_model, self.n_heads));
        }
        if self.n_query == 0 || self.d_query == 0 || self.max_code_len == 0 || self.d_ff == 0 {
            return bad("query, code length and feed-forward sizes must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub w_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub w_v: Vec<f64>,
    pub w_o: Vec<f64>,
    pub b_o: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub w_1: Vec<f64>,
    pub b_1: Vec<f64>,
    pub w_2: Vec<f64>,
    pub b_2: Vec<f64>,
}

/// All trainable tensors. The same type holds gradients and momenta.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// `d_query x d`
    pub w_in: Vec<f64>,
    pub b_in: Vec<f64>,
    /// `Y`, `(V + 2) x d`
    pub token_embeddings: Vec<f64>,
    /// `(n_query + max_code_len) x d`
    pub positions: Vec<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_gain: Vec<f64>,
    pub lnf_bias: Vec<f64>,
    /// `d x (V + 2)`
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl Params {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let z = |n: usize| vec![0.0; n];
        Self {
            w_in: z(cfg.d_query * d),
            b_in: z(d),
            token_embeddings: z(cfg.alphabet() * d),
            positions: z(cfg.positions() * d),
            layers: (0..cfg.n_layers)
                .map(|_| LayerParams {
                    ln1_gain: z(d),
                    ln1_bias: z(d),
                    w_q: z(d * d),
                    w_k: z(d * d),
                    w_v: z(d * d),
                    w_o: z(d * d),
                    b_o: z(d),
                    ln2_gain: z(d),
                    ln2_bias: z(d),
                    w_1: z(d * cfg.d_ff),
                    b_1: z(cfg.d_ff),
                    w_2: z(cfg.d_ff * d),
                    b_2: z(d),
                })
                .collect(),
            lnf_gain: z(d),
            lnf_bias: z(d),
            w_out: z(d * cfg.alphabet()),
            b_out: z(cfg.alphabet()),
        }
    }

    /// Tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("w_in".into(), &self.w_in),
            ("b_in".into(), &self.b_in),
            ("token_embeddings".into(), &self.token_embeddings),
            ("positions".into(), &self.positions),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (name, t) in [
                ("ln1_gain", &l.ln1_gain),
                ("ln1_bias", &l.ln1_bias),
                ("w_q", &l.w_q),
                ("w_k", &l.w_k),
                ("w_v", &l.w_v),
                ("w_o", &l.w_o),
                ("b_o", &l.b_o),
                ("ln2_gain", &l.ln2_gain),
                ("ln2_bias", &l.ln2_bias),
                ("w_1", &l.w_1),
                ("b_1", &l.b_1),
                ("w_2", &l.w_2),
                ("b_2", &l.b_2),
            ] {
                out.push((format!("layer{i}.{name}"), t.as_slice()));
            }
        }
        out.push(("lnf_gain".into(), &self.lnf_gain));
        out.push(("lnf_bias".into(), &self.lnf_bias));
        out.push(("w_out".into(), &self.w_out));
        out.push(("b_out".into(), &self.b_out));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = vec![
            &mut self.w_in,
            &mut self.b_in,
            &mut self.token_embeddings,
            &mut self.positions,
        ];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1_gain,
                &mut l.ln1_bias,
                &mut l.w_q,
                &mut l.w_k,
                &mut l.w_v,
                &mut l.w_o,
                &mut l.b_o,
                &mut l.ln2_gain,
                &mut l.ln2_bias,
                &mut l.w_1,
                &mut l.b_1,
                &mut l.w_2,
                &mut l.b_2,
            ]);
        }
        out.extend([
            &mut self.lnf_gain,
            &mut self.lnf_bias,
            &mut self.w_out,
            &mut self.b_out,
        ]);
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        let src: Vec<&[f64]> = other.tensors().into_iter().map(|(_, t)| t).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| ops::all_finite(t))
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|x| x * x)
            .sum()
    }
}

/// One training target: query vectors plus the code to emit.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    /// `n_query x d_query`, row-major.
    pub query: Vec<f64>,
    pub target: Vec<TokenValue>,
}

#[derive(Debug, Clone)]
pub struct TinyGerModel {
    pub config: ModelConfig,
    pub params: Params,
}

struct LayerCache {
    input: Vec<f64>,
    ln1: LnCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `heads x T x T`
    probs: Vec<f64>,
    o: Vec<f64>,
    ln2: LnCache,
    b: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
}

pub(crate) struct ForwardCache {
    inputs: Vec<TokenValue>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    z: Vec<f64>,
    /// `L x K` softmax outputs.
    probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub loss: f64,
    /// `L x (V + 2)` logits, row `i` predicting code position `i + 1`.
    pub logits: Vec<f64>,
}

impl TinyGerModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = Params::zeros(&config);
        let mut rng = seed::rng(config.seed, "tinyger/init");
        let d = config.d_model as f64;
        let mut fill = |t: &mut Vec<f64>, std: f64| {
            let normal = Normal::new(0.0, std).expect("positive std");
            t.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
        };
        fill(&mut params.w_in, 1.0 / (config.d_query as f64).sqrt());
        fill(&mut params.token_embeddings, 1.0);
        fill(&mut params.positions, 0.5);
        for l in &mut params.layers {
            fill(&mut l.w_q, 1.0 / d.sqrt());
            fill(&mut l.w_k, 1.0 / d.sqrt());
            fill(&mut l.w_v, 1.0 / d.sqrt());
            fill(&mut l.w_o, 1.0 / d.sqrt());
            fill(&mut l.w_1, 1.0 / d.sqrt());
            fill(&mut l.w_2, 1.0 / (config.d_ff as f64).sqrt());
            l.ln1_gain.fill(1.0);
            l.ln2_gain.fill(1.0);
        }
        fill(&mut params.w_out, 1.0 / d.sqrt());
        params.lnf_gain.fill(1.0);
        Ok(Self { config, params })
    }

    pub fn alphabet(&self) -> usize {
        self.config.alphabet()
    }

    fn check_example(&self, ex: &TrainingExample) -> Result<()> {
        let cfg = &self.config;
        if ex.query.len() != cfg.n_query * cfg.d_query {
            return Err(Error::DimensionMismatch {
                expected: cfg.n_query * cfg.d_query,
                found: ex.query.len(),
            });
        }
        if ex.target.is_empty() || ex.target.len() > cfg.max_code_len {
            return Err(Error::InvalidParameter(format!(
                "target length {} outside [1, {}]",
                ex.target.len(),
                cfg.max_code_len
            )));
        }
        if let Some(&bad) = ex.target.iter().find(|&&v| v as usize >= cfg.alphabet()) {
            return Err(Error::InvalidParameter(format!("target value {bad} outside the alphabet")));
        }
        Ok(())
    }

    /// Input rows for the query block: `query * W_in + b_in + P[t]`.
    pub(crate) fn embed_query(&self, query: &[f64]) -> Vec<f64> {
        let cfg = &self.config;
        let d = cfg.d_model;
        let mut x = ops::linear(query, &self.params.w_in, Some(&self.params.b_in), cfg.n_query, cfg.d_query, d);
        for t in 0..cfg.n_query {
            for c in 0..d {
                x[t * d + c] += self.params.positions[t * d + c];
            }
        }
        x
    }

    pub(crate) fn embed_token(&self, token: TokenValue, position: usize) -> Vec<f64> {
        let d = self.config.d_model;
        let t = token as usize;
        self.params.token_embeddings[t * d..(t + 1) * d]
            .iter()
            .zip(&self.params.positions[position * d..(position + 1) * d])
            .map(|(a, b)| a + b)
            .collect()
    }

    pub(crate) fn attends(&self, i: usize, j: usize) -> bool {
        let nq = self.config.n_query;
        j <= i || (i < nq && j < nq)
    }

    fn forward_cached(&self, ex: &TrainingExample, smoothing: f64) -> Result<(ForwardOutput, ForwardCache)> {
        self.check_example(ex)?;
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::InvalidParameter(format!("label smoothing {smoothing} outside [0, 1)")));
        }
        let cfg = &self.config;
        let (d, nq, len, kk) = (cfg.d_model, cfg.n_query, ex.target.len(), cfg.alphabet());
        let t_len = nq + len;
        let mut inputs = vec![0 as TokenValue];
        inputs.extend_from_slice(&ex.target[..len - 1]);

        let mut h = self.embed_query(&ex.query);
        for (i, &tok) in inputs.iter().enumerate() {
            h.extend(self.embed_token(tok, nq + i));
        }
        if !ops::all_finite(&h) {
            return Err(Error::NonFinite("input embeddings".into()));
        }

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for (li, lp) in self.params.layers.iter().enumerate() {
            let (cache, out) = self.layer_forward(lp, h, t_len);
            if !ops::all_finite(&out) {
                return Err(Error::NonFinite(format!("decoder layer {li}")));
            }
            layers.push(cache);
            h = out;
        }

        let (z, lnf) = ops::layernorm(&h, &self.params.lnf_gain, &self.params.lnf_bias, d);
        let code_rows = &z[nq * d..];
        let logits = ops::linear(code_rows, &self.params.w_out, Some(&self.params.b_out), len, d, kk);
        if !ops::all_finite(&logits) {
            return Err(Error::NonFinite("output projection".into()));
        }
        let mut probs = logits.clone();
        let mut loss = 0.0;
        for (i, row) in probs.chunks_exact_mut(kk).enumerate() {
            let lse = ops::softmax_in_place(row);
            let logit_row = &logits[i * kk..(i + 1) * kk];
            let target = ex.target[i] as usize;
            let mean_logp = logit_row.iter().map(|x| x - lse).sum::<f64>() / kk as f64;
            let nll = lse - logit_row[target];
            loss += (1.0 - smoothing) * nll - smoothing * mean_logp;
        }
        loss /= len as f64;
        Ok((
            ForwardOutput { loss, logits },
            ForwardCache {
                inputs,
                layers,
                lnf,
                z,
                probs,
            },
        ))
    }

    fn layer_forward(&self, lp: &LayerParams, h: Vec<f64>, t_len: usize) -> (LayerCache, Vec<f64>) {
        let cfg = &self.config;
        let (d, heads, hd, ff) = (cfg.d_model, cfg.n_heads, cfg.head_dim(), cfg.d_ff);
        let scale = 1.0 / (hd as f64).sqrt();
        let (a, ln1) = ops::layernorm(&h, &lp.ln1_gain, &lp.ln1_bias, d);
        let q = ops::linear(&a, &lp.w_q, None, t_len, d, d);
        let k = ops::linear(&a, &lp.w_k, None, t_len, d, d);
        let v = ops::linear(&a, &lp.w_v, None, t_len, d, d);
        let mut probs = vec![0.0; heads * t_len * t_len];
        let mut o = vec![0.0; t_len * d];
        for hh in 0..heads {
            let cols = hh * hd..(hh + 1) * hd;
            for i in 0..t_len {
                let row = &mut probs[(hh * t_len + i) * t_len..(hh * t_len + i + 1) * t_len];
                for j in 0..t_len {
                    row[j] = if self.attends(i, j) {
                        q[i * d + cols.start..i * d + cols.end]
                            .iter()
                            .zip(&k[j * d + cols.start..j * d + cols.end])
                            .map(|(x, y)| x * y)
                            .sum::<f64>()
                            * scale
                    } else {
                        f64::NEG_INFINITY
                    };
                }
                ops::softmax_in_place(row);
                for j in 0..t_len {
                    let p = row[j];
                    if p == 0.0 {
                        continue;
                    }
                    for c in cols.clone() {
                        o[i * d + c] += p * v[j * d + c];
                    }
                }
            }
        }
        let mut h1 = ops::linear(&o, &lp.w_o, Some(&lp.b_o), t_len, d, d);
        for (x, r) in h1.iter_mut().zip(&h) {
            *x += r;
        }
        let (b, ln2) = ops::layernorm(&h1, &lp.ln2_gain, &lp.ln2_bias, d);
        let u = ops::linear(&b, &lp.w_1, Some(&lp.b_1), t_len, d, ff);
        let g: Vec<f64> = u.iter().map(|&x| ops::gelu(x)).collect();
        let mut out = ops::linear(&g, &lp.w_2, Some(&lp.b_2), t_len, ff, d);
        for (x, r) in out.iter_mut().zip(&h1) {
            *x += r;
        }
        (
            LayerCache {
                input: h,
                ln1,
                a,
                q,
                k,
                v,
                probs,
                o,
                ln2,
                b,
                u,
                g,
            },
            out,
        )
    }

    /// Teacher-forced loss averaged over the code positions, plus the logits.
    pub fn forward_loss(&self, ex: &TrainingExample, smoothing: f64) -> Result<ForwardOutput> {
        self.forward_cached(ex, smoothing).map(|(out, _)| out)
    }

    /// Loss and exact gradient of one example.
    pub fn loss_and_gradient(&self, ex: &TrainingExample, smoothing: f64) -> Result<(f64, Params)> {
        let mut grads = Params::zeros(&self.config);
        let loss = self.accumulate_gradient(ex, smoothing, 1.0, &mut grads)?;
        Ok((loss, grads))
    }

    /// Adds `weight * dLoss/dParams` into `grads`; returns the loss.
    pub fn accumulate_gradient(&self, ex: &TrainingExample, smoothing: f64, weight: f64, grads: &mut Params) -> Result<f64> {
        let (out, cache) = self.forward_cached(ex, smoothing)?;
        self.backward(ex, &cache, smoothing, weight, grads);
        Ok(out.loss)
    }

    fn backward(&self, ex: &TrainingExample, cache: &ForwardCache, smoothing: f64, weight: f64, grads: &mut Params) {
        let cfg = &self.config;
        let (d, nq, len, kk) = (cfg.d_model, cfg.n_query, ex.target.len(), cfg.alphabet());
        let t_len = nq + len;
        let p = &self.params;

        // dLoss/dlogits = (softmax - smoothed target) / L
        let mut dlogits = cache.probs.clone();
        let uniform = smoothing / kk as f64;
        for (i, row) in dlogits.chunks_exact_mut(kk).enumerate() {
            for x in row.iter_mut() {
                *x -= uniform;
            }
            row[ex.target[i] as usize] -= 1.0 - smoothing;
            for x in row.iter_mut() {
                *x *= weight / len as f64;
            }
        }
        ops::matmul_at_b_acc(&mut grads.w_out, &cache.z[nq * d..], &dlogits, len, d, kk);
        ops::add_rows(&mut grads.b_out, &dlogits, kk);
        let mut dz = vec![0.0; t_len * d];
        ops::matmul_a_bt_acc(&mut dz[nq * d..], &dlogits, &p.w_out, len, kk, d);
        let mut dh = ops::layernorm_backward(&dz, &cache.lnf, &p.lnf_gain, &mut grads.lnf_gain, &mut grads.lnf_bias, d);

        for li in (0..cfg.n_layers).rev() {
            dh = self.layer_backward(&p.layers[li], &cache.layers[li], &mut grads.layers[li], dh, t_len);
        }

        // Embedding gradients.
        for t in 0..t_len {
            let row = &dh[t * d..(t + 1) * d];
            for (g, x) in grads.positions[t * d..(t + 1) * d].iter_mut().zip(row) {
                *g += x;
            }
            if t >= nq {
                let tok = cache.inputs[t - nq] as usize;
                for (g, x) in grads.token_embeddings[tok * d..(tok + 1) * d].iter_mut().zip(row) {
                    *g += x;
                }
            }
        }
        ops::matmul_at_b_acc(&mut grads.w_in, &ex.query, &dh[..nq * d], nq, cfg.d_query, d);
        ops::add_rows(&mut grads.b_in, &dh[..nq * d], d);
    }

    fn layer_backward(&self, lp: &LayerParams, c: &LayerCache, g: &mut LayerParams, dout: Vec<f64>, t_len: usize) -> Vec<f64> {
        let cfg = &self.config;
        let (d, heads, hd, ff) = (cfg.d_model, cfg.n_heads, cfg.head_dim(), cfg.d_ff);
        let scale = 1.0 / (hd as f64).sqrt();

        // Feed-forward block.
        ops::matmul_at_b_acc(&mut g.w_2, &c.g, &dout, t_len, ff, d);
        ops::add_rows(&mut g.b_2, &dout, d);
        let mut dgg = vec![0.0; t_len * ff];
        ops::matmul_a_bt_acc(&mut dgg, &dout, &lp.w_2, t_len, d, ff);
        for (x, &u) in dgg.iter_mut().zip(&c.u) {
            *x *= ops::gelu_grad(u);
        }
        ops::matmul_at_b_acc(&mut g.w_1, &c.b, &dgg, t_len, d, ff);
        ops::add_rows(&mut g.b_1, &dgg, ff);
        let mut db = vec![0.0; t_len * d];
        ops::matmul_a_bt_acc(&mut db, &dgg, &lp.w_1, t_len, ff, d);
        let dh1_ln = ops::layernorm_backward(&db, &c.ln2, &lp.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias, d);
        let dh1: Vec<f64> = dout.iter().zip(&dh1_ln).map(|(a, b)| a + b).collect();

        // Attention block.
        ops::matmul_at_b_acc(&mut g.w_o, &c.o, &dh1, t_len, d, d);
        ops::add_rows(&mut g.b_o, &dh1, d);
        let mut d_o = vec![0.0; t_len * d];
        ops::matmul_a_bt_acc(&mut d_o, &dh1, &lp.w_o, t_len, d, d);
        let mut dq = vec![0.0; t_len * d];
        let mut dk = vec![0.0; t_len * d];
        let mut dv = vec![0.0; t_len * d];
        let mut dp = vec![0.0; t_len];
        for hh in 0..heads {
            let cols = hh * hd..(hh + 1) * hd;
            for i in 0..t_len {
                let probs = &c.probs[(hh * t_len + i) * t_len..(hh * t_len + i + 1) * t_len];
                let doi = &d_o[i * d + cols.start..i * d + cols.end];
                let mut dot_pd = 0.0;
                for j in 0..t_len {
                    if probs[j] == 0.0 {
                        dp[j] = 0.0;
                        continue;
                    }
                    dp[j] = doi.iter().zip(&c.v[j * d + cols.start..j * d + cols.end]).map(|(a, b)| a * b).sum();
                    dot_pd += probs[j] * dp[j];
                    for (cc, &x) in cols.clone().zip(doi) {
                        dv[j * d + cc] += probs[j] * x;
                    }
                }
                for j in 0..t_len {
                    if probs[j] == 0.0 {
                        continue;
                    }
                    let ds = probs[j] * (dp[j] - dot_pd) * scale;
                    for cc in cols.clone() {
                        dq[i * d + cc] += ds * c.k[j * d + cc];
                        dk[j * d + cc] += ds * c.q[i * d + cc];
                    }
                }
            }
        }
        ops::matmul_at_b_acc(&mut g.w_q, &c.a, &dq, t_len, d, d);
        ops::matmul_at_b_acc(&mut g.w_k, &c.a, &dk, t_len, d, d);
        ops::matmul_at_b_acc(&mut g.w_v, &c.a, &dv, t_len, d, d);
        let mut da = vec![0.0; t_len * d];
        ops::matmul_a_bt_acc(&mut da, &dq, &lp.w_q, t_len, d, d);
        ops::matmul_a_bt_acc(&mut da, &dk, &lp.w_k, t_len, d, d);
        ops::matmul_a_bt_acc(&mut da, &dv, &lp.w_v, t_len, d, d);
        let dh_ln = ops::layernorm_backward(&da, &c.ln1, &lp.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias, d);
        let _ = &c.input;
        dh1.iter().zip(&dh_ln).map(|(a, b)| a + b).collect()
    }

    /// Summed gradient over `examples`, each weighted by `1 / normalizer`.
    /// Returns the mean loss.
    pub fn batch_gradient(&self, examples: &[&TrainingExample], smoothing: f64, normalizer: f64, grads: &mut Params) -> Result<f64> {
        let mut total = 0.0;
        for ex in examples {
            total += self.accumulate_gradient(ex, smoothing, 1.0 / normalizer, grads)?;
        }
        Ok(total / examples.len().max(1) as f64)
    }
}
