//! REINFORCE with a shared per-instance mean baseline.
//!
//! Every instance is decoded from all of its start customers at once; the
//! mean reward of those trajectories is the baseline, so
//!
//! ```text
//! loss = -1/B sum_b 1/T sum_i (R_bi - mean_i R_bi) * sum_j log p(a_bij)
//! ```
//!
//! Parameters are updated by Adam (coupled L2 weight decay) after the global
//! gradient norm is clipped.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::instances::{generate, Instance, VariantSpec};
use crate::nn::ParamStore;
use crate::policy::{rollout, rollout_chunked, ModelConfig, PolicyParams, RolloutOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub variants: Vec<VariantSpec>,
    pub n_customers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Size of the training set, split evenly over `variants` and reused
    /// every epoch.
    pub instances_per_epoch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// 1-based epochs after which the learning rate is multiplied by
    /// `lr_decay`.
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    pub grad_clip: f64,
    pub p_train: f64,
    pub p_test: f64,
    pub seed: u64,
    /// Held-out CVRP instances for model selection.
    pub validation_instances: usize,
    pub dtype: DType,
}

impl TrainConfig {
    /// Full-scale recipe.
    pub fn full(n_customers: usize) -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            variants: VariantSpec::in_distribution(),
            n_customers,
            epochs: 300,
            batch_size: 256,
            instances_per_epoch: 100_000,
            lr: 3e-4,
            weight_decay: 1e-6,
            milestones: vec![270, 295],
            lr_decay: 0.1,
            grad_clip: 1.0,
            p_train: 0.75,
            p_test: 1.0,
            seed: 0,
            validation_instances: 128,
            dtype: DType::F32,
        }
    }

    /// Small run: 2 000 instances, 20 epochs, batch 64, constant lr.
    pub fn desk(n_customers: usize) -> Self {
        TrainConfig {
            epochs: 20,
            milestones: Vec::new(),
            batch_size: 64,
            instances_per_epoch: 2_000,
            ..Self::full(n_customers)
        }
    }

    pub fn check(&self) -> Result<()> {
        self.model.check()?;
        if self.variants.is_empty() {
            return Err(Error::invalid("no training variants"));
        }
        if self.n_customers < 2 {
            return Err(Error::invalid("need at least 2 customers for a baseline"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.instances_per_epoch == 0 {
            return Err(Error::invalid("epochs, batch size and dataset size must be positive"));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || !(self.grad_clip > 0.0) {
            return Err(Error::invalid("lr and clip must be positive, weight decay non-negative"));
        }
        if self.milestones.iter().any(|&m| m >= self.epochs) {
            return Err(Error::invalid("milestones must precede the last epoch"));
        }
        for p in [self.p_train, self.p_test] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("update probability {p} outside [0, 1]")));
            }
        }
        if self.validation_instances == 0 {
            return Err(Error::invalid("validation set must be non-empty"));
        }
        Ok(())
    }

    /// Learning rate in force during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m < epoch).count();
        self.lr * self.lr_decay.powi(passed as i32)
    }
}

/// `R - mean(R)` per instance.
pub fn advantages(rewards: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rewards
        .iter()
        .map(|r| {
            let b = r.iter().sum::<f64>() / r.len() as f64;
            r.iter().map(|x| x - b).collect()
        })
        .collect()
}

/// Surrogate loss whose gradient is the policy gradient. `log_likelihood` is
/// `(B, T)`; advantages enter as constants.
pub fn reinforce_loss(log_likelihood: &Tensor, rewards: &[Vec<f64>]) -> Result<Tensor> {
    let (b, t) = log_likelihood.dims2()?;
    if rewards.len() != b || rewards.iter().any(|r| r.len() != t) {
        return Err(Error::invalid("rewards do not match the log-likelihood shape"));
    }
    if t < 2 {
        return Err(Error::invalid("the shared baseline needs at least 2 trajectories"));
    }
    let adv: Vec<f64> = advantages(rewards).into_iter().flatten().collect();
    let adv = Tensor::from_vec(adv, (b, t), &Device::Cpu)?.to_dtype(log_likelihood.dtype())?;
    Ok(((adv * log_likelihood)?.mean_all()? * -1.0)?)
}

/// Gradient of `loss` for every stored parameter (zeros where unused).
pub fn gradients(store: &ParamStore, loss: &Tensor) -> Result<BTreeMap<String, Tensor>> {
    let grads: GradStore = loss.backward()?;
    store
        .iter()
        .map(|(name, var)| {
            let g = match grads.get(var.as_tensor()) {
                Some(g) => g.detach(),
                None => var.as_tensor().zeros_like()?,
            };
            Ok((name.clone(), g))
        })
        .collect()
}

pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> Result<f64> {
    let mut sq = 0.0;
    for g in grads.values() {
        sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    }
    Ok(sq.sqrt())
}

/// Rescales the gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> Result<f64> {
    let norm = global_norm(grads)?;
    if norm > max_norm {
        let s = max_norm / (norm + 1e-12);
        for g in grads.values_mut() {
            *g = (&*g * s)?;
        }
    }
    Ok(norm)
}

pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(weight_decay: f64) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, store: &ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (name, var) in store.iter() {
            let Some(g) = grads.get(name) else { continue };
            let p = var.as_tensor().detach();
            let g = if self.weight_decay > 0.0 {
                (g + (&p * self.weight_decay)?)?
            } else {
                g.clone()
            };
            let m = match self.m.get(name) {
                Some(m) => ((m * self.beta1)? + (&g * (1.0 - self.beta1))?)?,
                None => (&g * (1.0 - self.beta1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                None => (g.sqr()? * (1.0 - self.beta2))?,
            };
            let update = ((&m / bc1)? / ((&v / bc2)?.sqrt()? + self.eps)?)?;
            var.set(&(p - (update * lr)?)?)?;
            self.m.insert(name.clone(), m);
            self.v.insert(name.clone(), v);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 0 is the untrained model.
    pub epoch: usize,
    /// Mean surrogate loss over the epoch's batches (NaN at epoch 0).
    pub loss: f64,
    pub val_obj: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_obj: f64,
    /// Why training stopped early, if it did.
    pub aborted: Option<String>,
}

pub const METRICS_HEADER: &str = "epoch,loss,val_obj,lr";

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in metrics {
        s.push_str(&format!("{},{},{},{}\n", m.epoch, m.loss, m.val_obj, m.lr));
    }
    s
}

/// Training set: homogeneous-variant batches, generated once.
pub fn training_batches(cfg: &TrainConfig) -> Result<Vec<Vec<Instance>>> {
    let per_variant = cfg.instances_per_epoch.div_ceil(cfg.variants.len());
    let mut batches = Vec::new();
    for (vi, v) in cfg.variants.iter().enumerate() {
        let insts = (0..per_variant)
            .map(|k| generate(*v, cfg.n_customers, instance_seed(cfg.seed, 1 + vi as u64, k as u64)))
            .collect::<Result<Vec<_>>>()?;
        for chunk in insts.chunks(cfg.batch_size) {
            batches.push(chunk.to_vec());
        }
    }
    Ok(batches)
}

/// Held-out CVRP instances used for model selection.
pub fn validation_set(cfg: &TrainConfig) -> Result<Vec<Instance>> {
    (0..cfg.validation_instances)
        .map(|k| generate(VariantSpec::CVRP, cfg.n_customers, instance_seed(cfg.seed, 0, k as u64)))
        .collect()
}

/// Distinct instance seed for (run seed, stream, index).
pub fn instance_seed(seed: u64, stream: u64, index: u64) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d)
        ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ index.wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Mean best-of-trajectories greedy objective.
pub fn mean_greedy_objective(params: &PolicyParams, instances: &[Instance], p_test: f64) -> Result<f64> {
    let policy = params.inference()?;
    let r = rollout_chunked(&policy, instances, 64, &RolloutOptions::greedy(p_test))?;
    let best = r.best();
    Ok(best.iter().map(|b| b.1).sum::<f64>() / best.len() as f64)
}

/// One policy-gradient update on a batch. Returns the loss value.
pub fn train_step(
    params: &mut PolicyParams,
    adam: &mut Adam,
    batch: &[Instance],
    opts: &RolloutOptions,
    lr: f64,
    grad_clip: f64,
) -> Result<f64> {
    let policy = params.trainable()?;
    let refs: Vec<&Instance> = batch.iter().collect();
    let r = rollout(&policy, &refs, opts)?;
    let rewards: Vec<Vec<f64>> = r
        .trajectories
        .iter()
        .map(|ts| ts.iter().map(|t| t.reward).collect())
        .collect();
    let ll = r.log_likelihood.expect("rollout tracks gradients");
    let loss = reinforce_loss(&ll, &rewards)?;
    let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !value.is_finite() {
        return Err(Error::NumericFailure(format!("loss is {value}")));
    }
    let mut grads = gradients(params.store(), &loss)?;
    let norm = clip_grad_norm(&mut grads, grad_clip)?;
    if !norm.is_finite() {
        return Err(Error::NumericFailure(format!("gradient norm is {norm}")));
    }
    adam.step(params.store(), &grads, lr)?;
    Ok(value)
}

/// Trains from scratch. With `out` set, writes `metrics.csv`, `best.ckpt`
/// (best validation objective so far) and `last.ckpt` there. Returns the
/// best parameters.
pub fn fit(cfg: &TrainConfig, out: Option<&Path>) -> Result<(PolicyParams, FitReport)> {
    fit_with_progress(cfg, out, |_| {})
}

pub fn fit_with_progress(
    cfg: &TrainConfig,
    out: Option<&Path>,
    mut progress: impl FnMut(&EpochMetrics),
) -> Result<(PolicyParams, FitReport)> {
    cfg.check()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let path = |f: &str| -> Option<PathBuf> { out.map(|d| d.join(f)) };
    let mut params = PolicyParams::new(cfg.model.clone(), cfg.dtype, cfg.seed)?;
    let mut batches = training_batches(cfg)?;
    let val = validation_set(cfg)?;
    let mut adam = Adam::new(cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let v0 = mean_greedy_objective(&params, &val, cfg.p_test)?;
    let mut metrics = vec![EpochMetrics {
        epoch: 0,
        loss: f64::NAN,
        val_obj: v0,
        lr: cfg.lr_at(1),
    }];
    progress(&metrics[0]);
    let mut best = (0, v0, params.snapshot()?);
    if let Some(p) = path("best.ckpt") {
        params.save(&p)?;
    }
    let write_metrics = |m: &[EpochMetrics]| -> Result<()> {
        if let Some(p) = path("metrics.csv") {
            fs::File::create(p)?.write_all(metrics_csv(m).as_bytes())?;
        }
        Ok(())
    };
    write_metrics(&metrics)?;

    let mut aborted = None;
    'epochs: for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        batches.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let opts = RolloutOptions::sampling(
                cfg.p_train,
                instance_seed(cfg.seed, 1000 + epoch as u64, bi as u64),
            );
            match train_step(&mut params, &mut adam, batch, &opts, lr, cfg.grad_clip) {
                Ok(l) => total += l,
                Err(Error::NumericFailure(msg)) => {
                    aborted = Some(format!("epoch {epoch}, batch {bi}: {msg}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let val_obj = mean_greedy_objective(&params, &val, cfg.p_test)?;
        let m = EpochMetrics {
            epoch,
            loss: total / batches.len() as f64,
            val_obj,
            lr,
        };
        progress(&m);
        if val_obj < best.1 {
            best = (epoch, val_obj, params.snapshot()?);
            if let Some(p) = path("best.ckpt") {
                params.save(&p)?;
            }
        }
        metrics.push(m);
        write_metrics(&metrics)?;
        if let Some(p) = path("last.ckpt") {
            params.save(&p)?;
        }
    }
    params.restore(&best.2)?;
    Ok((
        params,
        FitReport {
            metrics,
            best_epoch: best.0,
            best_val_obj: best.1,
            aborted,
        },
    ))
}
