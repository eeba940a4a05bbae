//! Dual-branch transformer encoder.
//!
//! Depot and customer attributes are projected separately and stacked into
//! the node inputs `I`. The constraint one-hot `[B, O, L, TW]` is projected,
//! broadcast to every node and fused with `I` into the unified inputs `Ĩ`.
//! Each layer runs a dense ("global") transformer on the unified stream and a
//! top-k sparse transformer on the node stream, then cross-feeds the two
//! through linear fusions. The global stream, RMS-normalized, is the output.

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::instances::{Instance, VariantSpec, HORIZON_INF};
use crate::nn::{attention, ensure_finite, Linear, ParamSource, RmsNorm, Sparsity};
use crate::policy::{ModelConfig, SparseBranch};

pub const DEPOT_FEATURES: usize = 4;
pub const CUSTOMER_FEATURES: usize = 7;
pub const CONSTRAINT_FLAGS: usize = 4;

/// Maps padding values ("no limit") to zero so they never reach a layer.
pub fn feature(v: f64) -> f64 {
    if v >= 0.5 * HORIZON_INF {
        0.0
    } else {
        v
    }
}

/// One-hot of the B, O, L and TW constraints. Mixed backhaul leaves the B
/// slot off; multi-depot only shows up as extra depot rows.
pub fn constraint_flags(v: &VariantSpec) -> [f64; CONSTRAINT_FLAGS] {
    let f = |b: bool| if b { 1.0 } else { 0.0 };
    [f(v.backhaul), f(v.open), f(v.duration_limited), f(v.time_windows)]
}

/// Raw encoder inputs for a batch of equally sized instances.
#[derive(Debug, Clone)]
pub struct EncoderFeatures {
    /// (B, depots, 4): x, y, open flag, duration-limit flag.
    pub depots: Tensor,
    /// (B, N, 7): x, y, linehaul, backhaul, early, late, service.
    pub customers: Option<Tensor>,
    /// (B, 4)
    pub flags: Tensor,
}

impl EncoderFeatures {
    pub fn build(instances: &[&Instance], dtype: DType) -> Result<Self> {
        let first = instances
            .first()
            .ok_or_else(|| Error::invalid("empty instance batch"))?;
        let (nd, n) = (first.n_depots(), first.n_customers());
        if instances.iter().any(|i| i.n_depots() != nd || i.n_customers() != n) {
            return Err(Error::invalid("instances in a batch must share their node counts"));
        }
        let b = instances.len();
        let mut depots = Vec::with_capacity(b * nd * DEPOT_FEATURES);
        let mut customers = Vec::with_capacity(b * n * CUSTOMER_FEATURES);
        let mut flags = Vec::with_capacity(b * CONSTRAINT_FLAGS);
        for inst in instances {
            let v = inst.variant;
            for d in &inst.depots {
                depots.extend_from_slice(&[
                    d[0],
                    d[1],
                    if v.open { 1.0 } else { 0.0 },
                    if v.duration_limited { 1.0 } else { 0.0 },
                ]);
            }
            for c in &inst.customers {
                customers.extend_from_slice(&[
                    c.x,
                    c.y,
                    c.dl,
                    c.db,
                    feature(c.te),
                    feature(c.tl),
                    feature(c.ts),
                ]);
            }
            flags.extend_from_slice(&constraint_flags(&v));
        }
        let dev = Device::Cpu;
        Ok(EncoderFeatures {
            depots: Tensor::from_vec(depots, (b, nd, DEPOT_FEATURES), &dev)?.to_dtype(dtype)?,
            customers: if n > 0 {
                Some(
                    Tensor::from_vec(customers, (b, n, CUSTOMER_FEATURES), &dev)?
                        .to_dtype(dtype)?,
                )
            } else {
                None
            },
            flags: Tensor::from_vec(flags, (b, CONSTRAINT_FLAGS), &dev)?.to_dtype(dtype)?,
        })
    }
}

/// Pre-norm transformer block: attention and feed-forward sublayers, each
/// wrapped as `x + f(norm(x))`.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    norm_attn: RmsNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    norm_ffn: RmsNorm,
    ffn_in: Linear,
    ffn_out: Linear,
    heads: usize,
    sparsity: Sparsity,
}

impl TransformerLayer {
    pub fn new(
        ps: &mut dyn ParamSource,
        name: &str,
        cfg: &ModelConfig,
        sparsity: Sparsity,
    ) -> Result<Self> {
        let d = cfg.d_model;
        Ok(TransformerLayer {
            norm_attn: RmsNorm::new(ps, &format!("{name}.norm_attn"), d)?,
            q: Linear::new(ps, &format!("{name}.q"), d, d, false)?,
            k: Linear::new(ps, &format!("{name}.k"), d, d, false)?,
            v: Linear::new(ps, &format!("{name}.v"), d, d, false)?,
            o: Linear::new(ps, &format!("{name}.o"), d, d, true)?,
            norm_ffn: RmsNorm::new(ps, &format!("{name}.norm_ffn"), d)?,
            ffn_in: Linear::new(ps, &format!("{name}.ffn_in"), d, cfg.ffn_hidden, true)?,
            ffn_out: Linear::new(ps, &format!("{name}.ffn_out"), cfg.ffn_hidden, d, true)?,
            heads: cfg.heads,
            sparsity,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.norm_attn.forward(x)?;
        let (a, _) = attention(
            &self.q.forward(&h)?,
            &self.k.forward(&h)?,
            &self.v.forward(&h)?,
            self.heads,
            None,
            self.sparsity,
        )?;
        let x = (x + self.o.forward(&a)?)?;
        let h = self.norm_ffn.forward(&x)?;
        let f = self.ffn_out.forward(&self.ffn_in.forward(&h)?.relu()?)?;
        Ok((x + f)?)
    }
}

#[derive(Debug, Clone)]
struct DualLayer {
    global: TransformerLayer,
    /// `None` in the single-branch configuration.
    sparse: Option<TransformerLayer>,
    fuse_global: Linear,
    fuse_sparse: Linear,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    depot_proj: Linear,
    customer_proj: Linear,
    flag_proj: Linear,
    fuse: Linear,
    layers: Vec<DualLayer>,
    out_norm: RmsNorm,
    d_model: usize,
}

impl Encoder {
    pub fn new(ps: &mut dyn ParamSource, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        let sparse = match cfg.sparse_branch {
            SparseBranch::TopHalf => Some(Sparsity::TopHalf),
            SparseBranch::TopK(k) => Some(Sparsity::TopK(k)),
            SparseBranch::Disabled => None,
        };
        let mut layers = Vec::with_capacity(cfg.encoder_layers);
        for i in 0..cfg.encoder_layers {
            let p = format!("encoder.layers.{i}");
            layers.push(DualLayer {
                global: TransformerLayer::new(ps, &format!("{p}.global"), cfg, Sparsity::Dense)?,
                sparse: match sparse {
                    Some(s) => Some(TransformerLayer::new(ps, &format!("{p}.sparse"), cfg, s)?),
                    None => None,
                },
                fuse_global: Linear::new(ps, &format!("{p}.fuse_global"), d, d, true)?,
                fuse_sparse: Linear::new(ps, &format!("{p}.fuse_sparse"), d, d, true)?,
            });
        }
        Ok(Encoder {
            depot_proj: Linear::new(ps, "encoder.depot_proj", DEPOT_FEATURES, d, true)?,
            customer_proj: Linear::new(ps, "encoder.customer_proj", CUSTOMER_FEATURES, d, true)?,
            flag_proj: Linear::new(ps, "encoder.flag_proj", CONSTRAINT_FLAGS, d, true)?,
            fuse: Linear::new(ps, "encoder.fuse", 2 * d, d, true)?,
            layers,
            out_norm: RmsNorm::new(ps, "encoder.out_norm", d)?,
            d_model: d,
        })
    }

    /// Node inputs `I` and unified inputs `Ĩ`, both `(B, nodes, D)`.
    pub fn embed_inputs(&self, f: &EncoderFeatures) -> Result<(Tensor, Tensor)> {
        let depots = self.depot_proj.forward(&f.depots)?;
        let nodes = match &f.customers {
            Some(c) => Tensor::cat(&[&depots, &self.customer_proj.forward(c)?], 1)?,
            None => depots,
        };
        let (b, n, d) = nodes.dims3()?;
        let flags = self
            .flag_proj
            .forward(&f.flags)?
            .reshape((b, 1, d))?
            .broadcast_as((b, n, d))?
            .contiguous()?;
        let unified = self.fuse.forward(&Tensor::cat(&[&nodes, &flags], 2)?)?;
        Ok((nodes, unified))
    }

    pub fn encode(&self, nodes: &Tensor, unified: &Tensor) -> Result<Tensor> {
        let mut sparse = nodes.clone();
        let mut global = unified.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let g = layer.global.forward(&global)?;
            let s = match &layer.sparse {
                Some(t) => t.forward(&sparse)?,
                None => sparse,
            };
            global = (&g + layer.fuse_global.forward(&s)?)?;
            sparse = (&s + layer.fuse_sparse.forward(&g)?)?;
            ensure_finite(&global, &format!("encoder layer {i}"))?;
            ensure_finite(&sparse, &format!("encoder layer {i} (sparse branch)"))?;
        }
        let out = self.out_norm.forward(&global)?;
        ensure_finite(&out, "encoder output norm")?;
        Ok(out)
    }

    pub fn forward(&self, f: &EncoderFeatures) -> Result<Tensor> {
        let (nodes, unified) = self.embed_inputs(f)?;
        self.encode(&nodes, &unified)
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }
}
