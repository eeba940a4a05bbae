//! Trajectory-shared node re-embedding.
//!
//! The node embeddings of the previous step act as queries; the keys and
//! values come from the node embeddings stacked with every trajectory's
//! current context. A distance bias is added to the attention scores:
//!
//! ```text
//! q  = Lin(Norm(H))                    (n, D)
//! k,v = Lin(Norm([H; C~]))             (n + T, D)
//! A  = softmax(q k^T / sqrt(d) + B)    (n, n + T)
//! H~ = q + A v
//! H' = H~ + MLP(Norm(H~))
//! ```
//!
//! with `B = [d(node, node) | d(node, current node of trajectory t)]`. One
//! refined matrix is shared by all trajectories.

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::instances::{DistanceMatrix, Instance};
use crate::nn::{attention, ensure_finite, Linear, ParamSource, RmsNorm, Sparsity};
use crate::policy::ModelConfig;

/// Additive attention bias for one instance at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceBias {
    n_nodes: usize,
    n_contexts: usize,
    /// (n, n), row-major
    node_node: Vec<f64>,
    /// (T, n): row t is the distance row of trajectory t's current node.
    context_node: Vec<f64>,
}

impl DistanceBias {
    pub fn new(dist: &DistanceMatrix, current: &[usize]) -> Self {
        let n = dist.n();
        let mut node_node = Vec::with_capacity(n * n);
        for m in 0..n {
            node_node.extend_from_slice(dist.row(m));
        }
        let mut context_node = Vec::with_capacity(current.len() * n);
        for &c in current {
            context_node.extend_from_slice(dist.row(c));
        }
        DistanceBias {
            n_nodes: n,
            n_contexts: current.len(),
            node_node,
            context_node,
        }
    }

    pub fn node_node(&self, m: usize, n: usize) -> f64 {
        self.node_node[m * self.n_nodes + n]
    }

    pub fn context_node(&self, t: usize, n: usize) -> f64 {
        self.context_node[t * self.n_nodes + n]
    }

    /// `(rows, cols)` of the bias as laid against the keys.
    pub fn shape(&self) -> (usize, usize) {
        (self.n_nodes, self.n_nodes + self.n_contexts)
    }

    /// Row-major `(n, n + T)` bias: node-node block, then the node-context
    /// block (transposed so keys run along columns).
    pub fn key_matrix(&self) -> Vec<f64> {
        let (n, t) = (self.n_nodes, self.n_contexts);
        let mut out = Vec::with_capacity(n * (n + t));
        for m in 0..n {
            out.extend_from_slice(&self.node_node[m * n..(m + 1) * n]);
            for c in 0..t {
                out.push(self.context_node(c, m));
            }
        }
        out
    }
}

pub fn distance_bias(inst: &Instance, current: &[usize]) -> DistanceBias {
    DistanceBias::new(&inst.distance_matrix(), current)
}

/// Stacks per-instance biases into a `(B, 1, n, n + T)` tensor shared by all
/// heads.
pub fn bias_tensor(biases: &[DistanceBias], dtype: DType) -> Result<Tensor> {
    let (n, cols) = biases
        .first()
        .map(|b| b.shape())
        .ok_or_else(|| Error::invalid("no biases"))?;
    let data: Vec<f64> = biases.iter().flat_map(|b| b.key_matrix()).collect();
    Ok(Tensor::from_vec(data, (biases.len(), 1, n, cols), &Device::Cpu)?.to_dtype(dtype)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Test,
}

/// Decides from a uniform draw in `[0, 1)` whether this step refines the
/// node embeddings.
pub fn gate_update(draw: f64, phase: Phase, p_train: f64, p_test: f64) -> Result<bool> {
    for (name, p) in [("P_train", p_train), ("P_test", p_test)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("{name} = {p} is not a probability")));
        }
    }
    let p = match phase {
        Phase::Train => p_train,
        Phase::Test => p_test,
    };
    Ok(draw < p)
}

pub struct ReEmbedding {
    /// `(B, n, D)`
    pub nodes: Tensor,
    /// `(B, heads, n, n + T)`
    pub weights: Tensor,
}

#[derive(Debug, Clone)]
pub struct Tsnr {
    norm_q: RmsNorm,
    norm_kv: RmsNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    norm_mlp: RmsNorm,
    mlp_in: Linear,
    mlp_out: Linear,
    heads: usize,
}

impl Tsnr {
    pub fn new(ps: &mut dyn ParamSource, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Tsnr {
            norm_q: RmsNorm::new(ps, "tsnr.norm_q", d)?,
            norm_kv: RmsNorm::new(ps, "tsnr.norm_kv", d)?,
            q: Linear::new(ps, "tsnr.q", d, d, false)?,
            k: Linear::new(ps, "tsnr.k", d, d, false)?,
            v: Linear::new(ps, "tsnr.v", d, d, false)?,
            norm_mlp: RmsNorm::new(ps, "tsnr.norm_mlp", d)?,
            mlp_in: Linear::new(ps, "tsnr.mlp.in", d, cfg.tsnr_hidden, true)?,
            mlp_out: Linear::new(ps, "tsnr.mlp.out", cfg.tsnr_hidden, d, true)?,
            heads: cfg.heads,
        })
    }

    /// Refines `nodes (B, n, D)` against `contexts (B, T, D)` with
    /// `bias (B, 1, n, n + T)`.
    pub fn re_embed(&self, nodes: &Tensor, contexts: &Tensor, bias: &Tensor) -> Result<ReEmbedding> {
        let q = self.q.forward(&self.norm_q.forward(nodes)?)?;
        let joint = self.norm_kv.forward(&Tensor::cat(&[nodes, contexts], 1)?)?;
        let k = self.k.forward(&joint)?;
        let v = self.v.forward(&joint)?;
        let (attended, weights) = attention(&q, &k, &v, self.heads, Some(bias), Sparsity::Dense)?;
        let mixed = (q + attended)?;
        let mlp = self
            .mlp_out
            .forward(&self.mlp_in.forward(&self.norm_mlp.forward(&mixed)?)?.relu()?)?;
        let out = (mixed + mlp)?;
        ensure_finite(&out, "node re-embedding")?;
        Ok(ReEmbedding {
            nodes: out,
            weights,
        })
    }

    /// Comparison harness: full self-attention over the joint node+context
    /// sequence, as an alternative to the cross-attention above. Returns the
    /// attention weights `(B, heads, n + T, n + T)`.
    pub fn self_attention_weights(&self, nodes: &Tensor, contexts: &Tensor) -> Result<Tensor> {
        let joint = self.norm_kv.forward(&Tensor::cat(&[nodes, contexts], 1)?)?;
        let q = self.q.forward(&joint)?;
        let k = self.k.forward(&joint)?;
        let v = self.v.forward(&joint)?;
        let (_, weights) = attention(&q, &k, &v, self.heads, None, Sparsity::Dense)?;
        Ok(weights)
    }
}

/// Attention weights computed per instance and head by one cross-attention
/// re-embedding step.
pub fn cross_attention_weight_count(n_nodes: usize, n_contexts: usize) -> usize {
    n_nodes * (n_nodes + n_contexts)
}

/// The same count for self-attention over the joint sequence.
pub fn self_attention_weight_count(n_nodes: usize, n_contexts: usize) -> usize {
    (n_nodes + n_contexts).pow(2)
}
