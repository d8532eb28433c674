use std::collections::{BTreeMap, BTreeSet};

use super::{CatsMode, Site, SiteKind, Token, ToyModel};
use crate::activation::cats_apply;
use crate::error::{CatsError, Result};
use crate::kernel::{cats_mlp_masked_with, dense_mlp_forward_with, KernelOptions};
use crate::linalg::{axpy, dot, gemv, Vector};

const NORM_EPS: f32 = 1e-5;

/// Per-layer keys and values of every position processed so far.
#[derive(Debug, Clone)]
pub struct KvCache {
    d: usize,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
}

impl KvCache {
    pub fn new(model: &ToyModel) -> Self {
        let cfg = model.config();
        let cap = cfg.max_seq * cfg.d;
        Self {
            d: cfg.d,
            keys: (0..cfg.layers).map(|_| Vec::with_capacity(cap)).collect(),
            values: (0..cfg.layers).map(|_| Vec::with_capacity(cap)).collect(),
        }
    }

    /// Number of cached positions.
    pub fn len(&self) -> usize {
        self.keys.first().map_or(0, |k| k.len() / self.d)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Activations recorded during a forward pass, flattened position-major.
pub type Captured = BTreeMap<Site, Vec<f32>>;

fn rms_norm(x: &[f32]) -> Vector {
    let ms = x.iter().map(|v| v * v).sum::<f32>() / x.len() as f32;
    let inv = 1.0 / (ms + NORM_EPS).sqrt();
    x.iter().map(|v| v * inv).collect()
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl ToyModel {
    fn check_token(&self, token: Token, position: usize) -> Result<()> {
        if token as usize >= self.config.vocab {
            return Err(CatsError::TokenOutOfRange {
                token,
                position,
                vocab: self.config.vocab,
            });
        }
        Ok(())
    }

    fn wrap(&self, layer: usize, kind: SiteKind, x: Vector, capture: &BTreeSet<Site>, out: &mut Captured) -> Vector {
        let site = Site { layer, kind };
        if capture.contains(&site) {
            out.entry(site).or_default().extend_from_slice(&x);
        }
        match self.threshold(layer, kind) {
            Some(t) => cats_apply(&x, t),
            None => x,
        }
    }

    /// Runs one token at position `cache.len()` and returns its logits.
    pub fn step(
        &self,
        token: Token,
        cache: &mut KvCache,
        capture: &BTreeSet<Site>,
        captured: &mut Captured,
    ) -> Result<Vector> {
        let cfg = &self.config;
        let pos = cache.len();
        if pos >= cfg.max_seq {
            return Err(CatsError::SequenceTooLong {
                len: pos + 1,
                max_seq: cfg.max_seq,
            });
        }
        self.check_token(token, pos)?;
        let d = cfg.d;
        let hd = d / cfg.heads;
        let scale = 1.0 / (hd as f32).sqrt();
        let opts = KernelOptions {
            activation: cfg.activation,
            ..KernelOptions::default()
        };

        let mut h: Vector = self.embedding.row(token as usize).into();
        axpy(1.0, self.positions.row(pos), &mut h);

        for (li, layer) in self.layers.iter().enumerate() {
            let a = self.wrap(li, SiteKind::AttnIn, rms_norm(&h), capture, captured);
            let att = &layer.attention;
            let q = gemv(&a, &att.wq)?;
            let k = gemv(&a, &att.wk)?;
            let v = gemv(&a, &att.wv)?;
            cache.keys[li].extend_from_slice(&k);
            cache.values[li].extend_from_slice(&v);
            let keys = &cache.keys[li];
            let values = &cache.values[li];
            let n = pos + 1;

            let mut mixed = vec![0.0f32; d];
            let mut scores = vec![0.0f32; n];
            for head in 0..cfg.heads {
                let r = head * hd..(head + 1) * hd;
                for (p, s) in scores.iter_mut().enumerate() {
                    *s = dot(&q[r.clone()], &keys[p * d..(p + 1) * d][r.clone()]) * scale;
                }
                let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let mut z = 0.0f32;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    z += *s;
                }
                let out = &mut mixed[r.clone()];
                for (p, &s) in scores.iter().enumerate() {
                    axpy(s / z, &values[p * d..(p + 1) * d][r.clone()], out);
                }
            }
            let o = gemv(&mixed, &att.wo)?;
            axpy(1.0, &o, &mut h);

            let b = self.wrap(li, SiteKind::MlpIn, rms_norm(&h), capture, captured);
            let site = Site::mlp(li);
            if capture.contains(&site) {
                let gate = gemv(&b, layer.mlp.w_gate())?;
                captured
                    .entry(site)
                    .or_default()
                    .extend(gate.iter().map(|&u| cfg.activation.apply_scalar(u)));
            }
            let y = match self.threshold(li, SiteKind::Mlp) {
                Some(t) => cats_mlp_masked_with(&b, &layer.mlp, t, opts)?.y,
                None => dense_mlp_forward_with(&b, &layer.mlp, cfg.activation)?.0,
            };
            axpy(1.0, &y, &mut h);
        }
        gemv(&rms_norm(&h), &self.unembedding)
    }
}

/// Logits at every position of `tokens`, plus the requested activations.
pub fn forward(model: &ToyModel, tokens: &[Token], capture: &BTreeSet<Site>) -> Result<(Vec<Vector>, Captured)> {
    let max_seq = model.config().max_seq;
    if tokens.len() > max_seq {
        return Err(CatsError::SequenceTooLong {
            len: tokens.len(),
            max_seq,
        });
    }
    for site in capture {
        if site.layer >= model.config().layers {
            return Err(CatsError::UnknownLayer {
                layer: site.layer,
                layers: model.config().layers,
            });
        }
    }
    let mut cache = KvCache::new(model);
    let mut captured = Captured::new();
    let logits = tokens
        .iter()
        .map(|&t| model.step(t, &mut cache, capture, &mut captured))
        .collect::<Result<Vec<_>>>()?;
    Ok((logits, captured))
}

/// Forward pass with thresholds on the attention and MLP inputs as well as
/// the MLP activations.
pub fn attention_cats_forward(model: &ToyModel, tokens: &[Token]) -> Result<Vec<Vector>> {
    if model.mode() != CatsMode::MlpAttention {
        return Err(CatsError::MissingThresholds(format!(
            "model is in mode {:?}; attention thresholds are not fitted",
            model.mode()
        )));
    }
    forward(model, tokens, &BTreeSet::new()).map(|(l, _)| l)
}

fn check_lengths(model: &ToyModel, prompt: &[Token], n_tokens: usize) -> Result<()> {
    let max_seq = model.config().max_seq;
    if n_tokens == 0 {
        return Err(CatsError::InvalidConfig("n_tokens must be at least 1".into()));
    }
    if prompt.is_empty() {
        return Err(CatsError::InvalidConfig("prompt is empty".into()));
    }
    if prompt.len() > max_seq {
        return Err(CatsError::SequenceTooLong {
            len: prompt.len(),
            max_seq,
        });
    }
    // The last generated token is never fed back.
    let needed = prompt.len() + n_tokens - 1;
    if needed > max_seq {
        return Err(CatsError::SequenceTooLong { len: needed, max_seq });
    }
    Ok(())
}

/// Greedy decoding of `n_tokens` new tokens with a key/value cache.
/// Returns only the generated tokens.
pub fn generate(model: &ToyModel, prompt: &[Token], n_tokens: usize) -> Result<Vec<Token>> {
    check_lengths(model, prompt, n_tokens)?;
    let none = BTreeSet::new();
    let mut sink = Captured::new();
    let mut cache = KvCache::new(model);
    let mut logits = Vector::default();
    for &t in prompt {
        logits = model.step(t, &mut cache, &none, &mut sink)?;
    }
    let mut out = Vec::with_capacity(n_tokens);
    loop {
        let next = argmax(&logits) as Token;
        out.push(next);
        if out.len() == n_tokens {
            return Ok(out);
        }
        logits = model.step(next, &mut cache, &none, &mut sink)?;
    }
}

/// Greedy decoding that recomputes the whole prefix for every new token.
pub fn generate_recompute(model: &ToyModel, prompt: &[Token], n_tokens: usize) -> Result<Vec<Token>> {
    check_lengths(model, prompt, n_tokens)?;
    let mut seq = prompt.to_vec();
    let mut out = Vec::with_capacity(n_tokens);
    while out.len() < n_tokens {
        let (logits, _) = forward(model, &seq, &BTreeSet::new())?;
        let next = argmax(logits.last().expect("non-empty prefix")) as Token;
        out.push(next);
        seq.push(next);
    }
    Ok(out)
}
