//! Pointer decoder: a masked multi-head glimpse from the trajectory contexts
//! over the node embeddings, then tanh-clipped compatibility logits.

use candle_core::{DType, Device, Tensor};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{attention, log_softmax_last, softmax_last, Linear, ParamSource, Sparsity};
use crate::policy::ModelConfig;

/// Projections of the node embeddings; reusable while the nodes are unchanged.
#[derive(Debug, Clone)]
pub struct NodeKeys {
    glimpse_k: Tensor,
    glimpse_v: Tensor,
    logit_k: Tensor,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    k: Linear,
    v: Linear,
    glimpse_out: Linear,
    logit_key: Linear,
    heads: usize,
    clip: f64,
    d_model: usize,
}

impl Decoder {
    pub fn new(ps: &mut dyn ParamSource, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        if !(cfg.clip > 0.0) {
            return Err(Error::invalid("logit clip must be positive"));
        }
        Ok(Decoder {
            k: Linear::new(ps, "decoder.k", d, d, false)?,
            v: Linear::new(ps, "decoder.v", d, d, false)?,
            glimpse_out: Linear::new(ps, "decoder.glimpse_out", d, d, false)?,
            logit_key: Linear::new(ps, "decoder.logit_key", d, d, false)?,
            heads: cfg.heads,
            clip: cfg.clip,
            d_model: d,
        })
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn node_keys(&self, nodes: &Tensor) -> Result<NodeKeys> {
        Ok(NodeKeys {
            glimpse_k: self.k.forward(nodes)?,
            glimpse_v: self.v.forward(nodes)?,
            logit_k: self.logit_key.forward(nodes)?.t()?.contiguous()?,
        })
    }

    /// Clipped logits `(B, T, n)`; masked entries are `-inf`.
    /// `mask` is the additive mask from [`mask_tensor`].
    pub fn logits(&self, contexts: &Tensor, keys: &NodeKeys, mask: &Tensor) -> Result<Tensor> {
        let (b, t, n) = mask.dims3()?;
        let head_mask = mask.reshape((b, 1, t, n))?;
        let (glimpse, _) = attention(
            contexts,
            &keys.glimpse_k,
            &keys.glimpse_v,
            self.heads,
            Some(&head_mask),
            Sparsity::Dense,
        )?;
        let q = self.glimpse_out.forward(&glimpse)?;
        let compat = (q.matmul(&keys.logit_k)? * (1.0 / (self.d_model as f64).sqrt()))?;
        Ok(((compat.tanh()? * self.clip)? + mask)?)
    }

    pub fn log_probs(&self, contexts: &Tensor, keys: &NodeKeys, mask: &Tensor) -> Result<Tensor> {
        log_softmax_last(&self.logits(contexts, keys, mask)?)
    }

    /// Action distribution `(B, T, n)`.
    pub fn step_probabilities(
        &self,
        contexts: &Tensor,
        nodes: &Tensor,
        mask: &Tensor,
    ) -> Result<Tensor> {
        softmax_last(&self.logits(contexts, &self.node_keys(nodes)?, mask)?)
    }
}

/// Additive `(B, T, n)` mask: 0 where feasible, `-inf` elsewhere. `rows` is
/// row-major over (instance, trajectory).
pub fn mask_tensor(rows: &[Vec<bool>], batch: usize, dtype: DType) -> Result<Tensor> {
    let n = rows.first().map_or(0, |r| r.len());
    let t = rows.len() / batch.max(1);
    let mut data = Vec::with_capacity(rows.len() * n);
    for (i, r) in rows.iter().enumerate() {
        if !r.iter().any(|&m| m) {
            return Err(Error::ContractViolation(format!(
                "mask row {i} has no feasible node"
            )));
        }
        data.extend(r.iter().map(|&m| if m { 0.0 } else { f64::NEG_INFINITY }));
    }
    Ok(Tensor::from_vec(data, (batch, t, n), &Device::Cpu)?.to_dtype(dtype)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// Picks one node per row of a probability matrix (`rows x n`, row-major).
/// Greedy takes the first maximum. Returns `(node, ln p)` pairs.
pub fn select<R: Rng>(probs: &[f64], n: usize, mode: DecodeMode, rng: &mut R) -> Vec<(usize, f64)> {
    probs
        .chunks(n)
        .map(|row| {
            let pick = match mode {
                DecodeMode::Greedy => {
                    let mut best = 0;
                    for (i, &p) in row.iter().enumerate() {
                        if p > row[best] {
                            best = i;
                        }
                    }
                    best
                }
                DecodeMode::Sample => {
                    let r: f64 = rng.gen();
                    let total: f64 = row.iter().sum();
                    let mut acc = 0.0;
                    let mut pick = None;
                    for (i, &p) in row.iter().enumerate() {
                        if p > 0.0 {
                            acc += p / total;
                            pick = Some(i);
                            if r < acc {
                                break;
                            }
                        }
                    }
                    pick.expect("row has positive mass")
                }
            };
            (pick, row[pick].ln())
        })
        .collect()
}
