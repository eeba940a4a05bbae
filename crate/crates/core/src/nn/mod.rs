//! Small neural-network toolkit on top of `candle-core`: named parameters,
//! linear and RMS-norm layers, masked multi-head attention.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointManifest, NamedTensor, CHECKPOINT_MAGIC,
};

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const RMS_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
    FanIn(usize),
    Const(f64),
}

/// Something that hands out parameter tensors by name.
pub trait ParamSource {
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor>;
}

/// Owns every learnable tensor, keyed by dotted name.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        ParamStore {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn n_elements(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Inserts or overwrites a parameter with the given values.
    pub fn insert(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<()> {
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        match self.vars.get(name) {
            Some(v) if v.dims() == shape => v.set(&t)?,
            _ => {
                self.vars.insert(name.to_string(), Var::from_tensor(&t)?);
            }
        }
        Ok(())
    }

    /// Read-only view whose tensors are detached from the autograd graph.
    pub fn detached(&self) -> DetachedParams<'_> {
        DetachedParams(self)
    }
}

impl ParamSource for ParamStore {
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(v) = self.vars.get(name) {
            if v.dims() != shape {
                return Err(Error::invalid(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    v.dims()
                )));
            }
            return Ok(v.as_tensor().clone());
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect()
            }
            Init::Const(c) => vec![c; n],
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }
}

pub struct DetachedParams<'a>(&'a ParamStore);

impl ParamSource for DetachedParams<'_> {
    fn param(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<Tensor> {
        let v = self
            .0
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
        if v.dims() != shape {
            return Err(Error::invalid(format!("parameter {name} has the wrong shape")));
        }
        Ok(v.as_detached_tensor())
    }
}

/// `y = x W + b` with `W` stored as `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(
        ps: &mut dyn ParamSource,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = ps.param(&format!("{name}.weight"), &[fan_in, fan_out], Init::FanIn(fan_in))?;
        let bias = if bias {
            Some(ps.param(&format!("{name}.bias"), &[fan_out], Init::FanIn(fan_in))?)
        } else {
            None
        };
        Ok(Linear { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let fan_in = *dims.last().expect("rank >= 1");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let fan_out = self.weight.dim(1)?;
        let mut y = x.reshape((rows, fan_in))?.matmul(&self.weight)?;
        if let Some(b) = &self.bias {
            y = y.broadcast_add(b)?;
        }
        let mut out_dims = dims;
        *out_dims.last_mut().expect("rank >= 1") = fan_out;
        Ok(y.reshape(out_dims)?)
    }
}

/// Root-mean-square normalization over the last axis with a learned scale.
#[derive(Debug, Clone)]
pub struct RmsNorm {
    pub scale: Tensor,
}

impl RmsNorm {
    pub fn new(ps: &mut dyn ParamSource, name: &str, dim: usize) -> Result<Self> {
        Ok(RmsNorm {
            scale: ps.param(&format!("{name}.scale"), &[dim], Init::Const(1.0))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let ms = x.sqr()?.mean_keepdim(D::Minus1)?;
        let inv = (ms + RMS_EPS)?.sqrt()?.recip()?;
        Ok(x.broadcast_mul(&inv)?.broadcast_mul(&self.scale)?)
    }
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&m)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Splits `(B, L, D)` into `(B, H, L, D/H)`.
fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, l, d) = x.dims3()?;
    Ok(x.reshape((b, l, heads, d / heads))?.transpose(1, 2)?.contiguous()?)
}

fn merge_heads(x: &Tensor) -> Result<Tensor> {
    let (b, h, l, dh) = x.dims4()?;
    Ok(x.transpose(1, 2)?.contiguous()?.reshape((b, l, h * dh))?)
}

/// Additive mask keeping the `k` largest scores of every row.
fn top_k_mask(scores: &Tensor, k: usize) -> Result<Tensor> {
    let dims = scores.dims().to_vec();
    let cols = *dims.last().expect("rank >= 1");
    if k >= cols {
        return Ok(scores.zeros_like()?);
    }
    let flat = scores.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    let mut mask = vec![0f64; flat.len()];
    let mut row = Vec::with_capacity(cols);
    for (r, chunk) in flat.chunks(cols).enumerate() {
        row.clear();
        row.extend_from_slice(chunk);
        row.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
        let threshold = row[k - 1];
        // keep exactly k entries; ties broken by position
        let mut kept = 0;
        for (c, &v) in chunk.iter().enumerate() {
            if v > threshold {
                kept += 1;
            } else {
                mask[r * cols + c] = f64::NEG_INFINITY;
            }
        }
        for (c, &v) in chunk.iter().enumerate() {
            if kept < k && v == threshold {
                mask[r * cols + c] = 0.0;
                kept += 1;
            }
        }
    }
    Ok(Tensor::from_vec(mask, dims, scores.device())?.to_dtype(scores.dtype())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sparsity {
    Dense,
    /// Each query attends to its `ceil(keys / 2)` highest-scoring keys.
    TopHalf,
    TopK(usize),
}

impl Sparsity {
    fn keep(&self, keys: usize) -> Option<usize> {
        match *self {
            Sparsity::Dense => None,
            Sparsity::TopHalf => Some(keys.div_ceil(2).max(1)),
            Sparsity::TopK(k) => Some(k.clamp(1, keys)),
        }
    }
}

/// Scaled dot-product attention over pre-projected `q (B,Lq,D)`,
/// `k, v (B,Lk,D)`. `bias` is added to the scores and must broadcast to
/// `(B, H, Lq, Lk)`. Returns the merged output and the weights.
pub fn attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    bias: Option<&Tensor>,
    sparsity: Sparsity,
) -> Result<(Tensor, Tensor)> {
    let d = q.dim(D::Minus1)?;
    let dh = d / heads;
    let q = split_heads(q, heads)?;
    let k = split_heads(k, heads)?;
    let v = split_heads(v, heads)?;
    let mut scores = (q.matmul(&k.t()?)? * (1.0 / (dh as f64).sqrt()))?;
    if let Some(b) = bias {
        scores = scores.broadcast_add(b)?;
    }
    if let Some(keep) = sparsity.keep(scores.dim(D::Minus1)?) {
        let mask = top_k_mask(&scores, keep)?;
        scores = (scores + mask)?;
    }
    let weights = softmax_last(&scores)?;
    let out = merge_heads(&weights.matmul(&v)?)?;
    Ok((out, weights))
}

/// Errors out if `x` holds a NaN or infinity.
pub fn ensure_finite(x: &Tensor, what: &str) -> Result<()> {
    let s = x.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if s.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericFailure(what.to_string()))
    }
}

/// Row-major `f64` copy of a tensor.
pub fn to_f64_vec(x: &Tensor) -> Result<Vec<f64>> {
    Ok(x.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: Vec<f64>, shape: &[usize]) -> Tensor {
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn softmax_rows_sum_to_one_and_respect_masks() {
        let x = t(vec![1.0, 2.0, f64::NEG_INFINITY, 0.5, 0.5, 0.5], &[2, 3]);
        let p = to_f64_vec(&softmax_last(&x).unwrap()).unwrap();
        assert_eq!(p[2], 0.0);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-15);
        for v in &p[3..] {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let lp = to_f64_vec(&log_softmax_last(&x).unwrap()).unwrap();
        assert!((lp[0].exp() - p[0]).abs() < 1e-15);
        assert_eq!(lp[2], f64::NEG_INFINITY);
    }

    #[test]
    fn top_k_keeps_exactly_k() {
        let x = t(vec![0.1, 0.9, 0.5, 0.5, 0.2, 0.2, 0.2, 0.2], &[2, 4]);
        let m = to_f64_vec(&top_k_mask(&x, 2).unwrap()).unwrap();
        assert_eq!(&m[..4], &[f64::NEG_INFINITY, 0.0, 0.0, f64::NEG_INFINITY]);
        assert_eq!(m[4..].iter().filter(|v| **v == 0.0).count(), 2);
    }

    #[test]
    fn rms_norm_unit_rms() {
        let mut ps = ParamStore::new(DType::F64, 0);
        let norm = RmsNorm::new(&mut ps, "n", 4).unwrap();
        let y = to_f64_vec(&norm.forward(&t(vec![1.0, -2.0, 3.0, 4.0], &[1, 4])).unwrap()).unwrap();
        let rms = (y.iter().map(|v| v * v).sum::<f64>() / 4.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-6);
    }

    #[test]
    fn linear_handles_batched_input() {
        let mut ps = ParamStore::new(DType::F64, 3);
        let lin = Linear::new(&mut ps, "l", 3, 2, true).unwrap();
        let x = t((0..12).map(|v| v as f64).collect(), &[2, 2, 3]);
        let y = lin.forward(&x).unwrap();
        assert_eq!(y.dims(), &[2, 2, 2]);
        let w = to_f64_vec(&lin.weight).unwrap();
        let b = to_f64_vec(lin.bias.as_ref().unwrap()).unwrap();
        let got = to_f64_vec(&y).unwrap();
        // row 3 = [9, 10, 11]
        let want0 = 9.0 * w[0] + 10.0 * w[2] + 11.0 * w[4] + b[0];
        assert!((got[6] - want0).abs() < 1e-12);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let mut a = ParamStore::new(DType::F64, 7);
        let mut b = ParamStore::new(DType::F64, 7);
        let ta = a.param("w", &[16, 4], Init::FanIn(16)).unwrap();
        let tb = b.param("w", &[16, 4], Init::FanIn(16)).unwrap();
        let (va, vb) = (to_f64_vec(&ta).unwrap(), to_f64_vec(&tb).unwrap());
        assert_eq!(va, vb);
        assert!(va.iter().all(|v| v.abs() < 0.25));
    }
}
