//! Relevance-guided context reformulation.
//!
//! For every trajectory at every step, four constraint attribute groups
//! (backhaul/capacity, duration, open route, time window) are embedded
//! separately, scored against the current node's embedding by a raw dot
//! product, and combined as
//!
//! ```text
//! S  = Lin4D(concat(C_B, C_L, C_O, C_TW)) + sum_k s_k * C_k
//! C~ = Lin2D(concat(S, H_cur))
//! ```
//!
//! Rows never mix: trajectory `i`'s context depends only on its own inputs.

use candle_core::{DType, Device, Tensor, D};

use crate::encoder::feature;
use crate::env::{RoutingEnv, TrajectoryState};
use crate::error::Result;
use crate::nn::{Linear, ParamSource};
use crate::policy::ModelConfig;

/// Constraint attributes of one trajectory at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintAttributes {
    /// linehaul and backhaul demand of the current node, remaining capacity
    pub backhaul: [f64; 3],
    /// current coordinates, remaining sub-route length budget
    pub duration: [f64; 3],
    /// current coordinates, total distance travelled
    pub open: [f64; 3],
    /// early, late and service time of the current node, current time
    pub time_window: [f64; 4],
}

impl ConstraintAttributes {
    pub fn from_state(env: &RoutingEnv<'_>, s: &TrajectoryState) -> Self {
        let inst = env.instance();
        let [x, y] = inst.coords(s.current);
        let (dl, db, te, tl, ts) = match inst.customer(s.current) {
            Some(c) => (c.dl, c.db, c.te, c.tl, c.ts),
            None => (0.0, 0.0, 0.0, 0.0, 0.0),
        };
        let budget = if inst.variant.duration_limited {
            inst.duration_limit - s.subroute_distance
        } else {
            0.0
        };
        ConstraintAttributes {
            backhaul: [dl, db, env.remaining_capacity(s)],
            duration: [x, y, budget],
            open: [x, y, s.total_distance],
            time_window: [feature(te), feature(tl), feature(ts), s.time],
        }
    }
}

/// Attribute groups stacked into `(B, T, k)` tensors.
#[derive(Debug, Clone)]
pub struct AttributeBatch {
    pub backhaul: Tensor,
    pub duration: Tensor,
    pub open: Tensor,
    pub time_window: Tensor,
}

impl AttributeBatch {
    /// `attrs` is row-major over (instance, trajectory).
    pub fn build(attrs: &[ConstraintAttributes], batch: usize, dtype: DType) -> Result<Self> {
        let t = attrs.len() / batch;
        let dev = Device::Cpu;
        let stack = |width: usize, f: &dyn Fn(&ConstraintAttributes) -> &[f64]| -> Result<Tensor> {
            let v: Vec<f64> = attrs.iter().flat_map(|a| f(a).iter().copied()).collect();
            Ok(Tensor::from_vec(v, (batch, t, width), &dev)?.to_dtype(dtype)?)
        };
        Ok(AttributeBatch {
            backhaul: stack(3, &|a| &a.backhaul)?,
            duration: stack(3, &|a| &a.duration)?,
            open: stack(3, &|a| &a.open)?,
            time_window: stack(4, &|a| &a.time_window)?,
        })
    }
}

/// Picks rows `index (B, T)` out of `nodes (B, n, D)`, giving `(B, T, D)`.
pub fn gather_rows(nodes: &Tensor, index: &Tensor) -> Result<Tensor> {
    let (b, _, d) = nodes.dims3()?;
    let t = index.dim(1)?;
    let idx = index.reshape((b, t, 1))?.broadcast_as((b, t, d))?.contiguous()?;
    Ok(nodes.gather(&idx, 1)?)
}

#[derive(Debug, Clone)]
pub struct Rgcr {
    backhaul: Linear,
    duration: Linear,
    open: Linear,
    time_window: Linear,
    concat: Linear,
    out: Linear,
}

impl Rgcr {
    pub fn new(ps: &mut dyn ParamSource, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Rgcr {
            backhaul: Linear::new(ps, "rgcr.b", 3, d, true)?,
            duration: Linear::new(ps, "rgcr.l", 3, d, true)?,
            open: Linear::new(ps, "rgcr.o", 3, d, true)?,
            time_window: Linear::new(ps, "rgcr.tw", 4, d, true)?,
            concat: Linear::new(ps, "rgcr.concat", 4 * d, d, true)?,
            out: Linear::new(ps, "rgcr.out", 2 * d, d, true)?,
        })
    }

    /// `[C_B, C_L, C_O, C_TW]`, each `(B, T, D)`.
    pub fn constraint_embeddings(&self, a: &AttributeBatch) -> Result<[Tensor; 4]> {
        Ok([
            self.backhaul.forward(&a.backhaul)?,
            self.duration.forward(&a.duration)?,
            self.open.forward(&a.open)?,
            self.time_window.forward(&a.time_window)?,
        ])
    }

    /// Relevance scores `s_k = <H_cur, C_k>`, each `(B, T, 1)`.
    pub fn scores(c: &[Tensor; 4], current: &Tensor) -> Result<Vec<Tensor>> {
        c.iter()
            .map(|ck| Ok((current * ck)?.sum_keepdim(D::Minus1)?))
            .collect()
    }

    /// Context `C~ (B, T, D)` from constraint embeddings and current node
    /// embeddings `(B, T, D)`.
    pub fn reformulate_context(&self, c: &[Tensor; 4], current: &Tensor) -> Result<Tensor> {
        let scores = Self::scores(c, current)?;
        let original = self.concat.forward(&Tensor::cat(&[&c[0], &c[1], &c[2], &c[3]], 2)?)?;
        let mut unified = original;
        for (ck, sk) in c.iter().zip(&scores) {
            unified = (unified + ck.broadcast_mul(sk)?)?;
        }
        self.out.forward(&Tensor::cat(&[&unified, current], 2)?)
    }

    pub fn forward(&self, a: &AttributeBatch, nodes: &Tensor, current: &Tensor) -> Result<Tensor> {
        let c = self.constraint_embeddings(a)?;
        let h = gather_rows(nodes, current)?;
        self.reformulate_context(&c, &h)
    }
}
