//! The full policy and its decoding loop.
//!
//! Per batch the encoder runs once. Every decoding step then builds the
//! trajectory contexts (RGCR), optionally refines the shared node embeddings
//! (TSNR, gated by one draw per step), scores the feasible nodes (decoder)
//! and advances the environment.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{mask_tensor, select, DecodeMode, Decoder};
use crate::encoder::{Encoder, EncoderFeatures};
use crate::env::{RoutingEnv, Trajectory, TrajectoryState};
use crate::error::{Error, Result};
use crate::instances::Instance;
use crate::nn::{load_checkpoint, save_checkpoint, to_f64_vec, NamedTensor, ParamSource, ParamStore};
use crate::rgcr::{AttributeBatch, ConstraintAttributes, Rgcr};
use crate::tsnr::{bias_tensor, gate_update, DistanceBias, Phase, Tsnr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparseBranch {
    /// Top `ceil(nodes / 2)` keys per query.
    TopHalf,
    TopK(usize),
    /// Single-branch encoder: the sparse stream skips its transformer.
    Disabled,
}

/// Architecture hyper-parameters; stored as the checkpoint manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub ffn_hidden: usize,
    pub tsnr_hidden: usize,
    pub clip: f64,
    pub sparse_branch: SparseBranch,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            heads: 8,
            encoder_layers: 6,
            ffn_hidden: 512,
            tsnr_hidden: 512,
            clip: 10.0,
            sparse_branch: SparseBranch::TopHalf,
        }
    }
}

impl ModelConfig {
    /// A narrow model: `d` wide, `layers` deep, hidden sizes `4d`.
    pub fn small(d: usize, heads: usize, layers: usize) -> Self {
        ModelConfig {
            d_model: d,
            heads,
            encoder_layers: layers,
            ffn_hidden: 4 * d,
            tsnr_hidden: 4 * d,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::invalid(format!(
                "{} heads do not divide model width {}",
                self.heads, self.d_model
            )));
        }
        if self.ffn_hidden == 0 || self.tsnr_hidden == 0 {
            return Err(Error::invalid("hidden sizes must be positive"));
        }
        if !(self.clip > 0.0) {
            return Err(Error::invalid("logit clip must be positive"));
        }
        Ok(())
    }
}

/// The four network pieces, bound to one set of parameter tensors.
#[derive(Debug, Clone)]
pub struct Policy {
    pub encoder: Encoder,
    pub rgcr: Rgcr,
    pub tsnr: Tsnr,
    pub decoder: Decoder,
    dtype: DType,
}

impl Policy {
    pub fn build(ps: &mut dyn ParamSource, cfg: &ModelConfig, dtype: DType) -> Result<Self> {
        cfg.check()?;
        Ok(Policy {
            encoder: Encoder::new(ps, cfg)?,
            rgcr: Rgcr::new(ps, cfg)?,
            tsnr: Tsnr::new(ps, cfg)?,
            decoder: Decoder::new(ps, cfg)?,
            dtype,
        })
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }
}

/// Every learnable tensor of the policy plus its architecture.
pub struct PolicyParams {
    config: ModelConfig,
    store: ParamStore,
}

impl PolicyParams {
    /// Freshly initialized parameters, seeded.
    pub fn new(config: ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(dtype, seed);
        Policy::build(&mut store, &config, dtype)?;
        Ok(PolicyParams { config, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Policy whose outputs stay attached to the parameters' gradient graph.
    pub fn trainable(&mut self) -> Result<Policy> {
        let dtype = self.store.dtype();
        Policy::build(&mut self.store, &self.config, dtype)
    }

    /// Policy for decoding without gradients.
    pub fn inference(&self) -> Result<Policy> {
        Policy::build(&mut self.store.detached(), &self.config, self.store.dtype())
    }

    /// Copy of every tensor's values.
    pub fn snapshot(&self) -> Result<Vec<NamedTensor>> {
        self.store
            .iter()
            .map(|(name, var)| Ok((name.clone(), var.dims().to_vec(), to_f64_vec(var.as_tensor())?)))
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[NamedTensor]) -> Result<()> {
        for (name, shape, values) in snapshot {
            self.store.insert(name, shape, values.clone())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.config, &self.store)
    }

    pub fn load(path: &Path, dtype: DType) -> Result<Self> {
        let (config, tensors): (ModelConfig, _) = load_checkpoint(path)?;
        config.check()?;
        let mut store = ParamStore::new(dtype, 0);
        for (name, shape, values) in tensors {
            store.insert(&name, &shape, values)?;
        }
        let expected = PolicyParams::new(config.clone(), dtype, 0)?;
        for (name, var) in expected.store.iter() {
            match store.get(name) {
                Some(v) if v.dims() == var.dims() => {}
                _ => {
                    return Err(Error::invalid(format!(
                        "{}: missing or misshapen tensor {name}",
                        path.display()
                    )))
                }
            }
        }
        if store.len() != expected.store.len() {
            return Err(Error::invalid(format!(
                "{}: unexpected extra tensors",
                path.display()
            )));
        }
        Ok(PolicyParams { config, store })
    }
}

/// What to do with the node re-embedding module during a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsnrUse {
    /// Apply with the phase's probability.
    Gated,
    /// Never call the module and never draw from the gate stream.
    Excised,
}

#[derive(Debug, Clone)]
pub struct RolloutOptions {
    pub mode: DecodeMode,
    pub phase: Phase,
    pub p_train: f64,
    pub p_test: f64,
    pub tsnr: TsnrUse,
    /// Trajectories per instance; `None` means one per customer.
    pub n_trajectories: Option<usize>,
    pub seed: u64,
    /// Teacher forcing: `[instance][trajectory]` action lists, one action per
    /// decoding step taken by that trajectory.
    pub replay: Option<Vec<Vec<Vec<usize>>>>,
    /// Build the summed log-likelihood tensor for backpropagation.
    pub track_grad: bool,
}

impl RolloutOptions {
    pub fn greedy(p_test: f64) -> Self {
        RolloutOptions {
            mode: DecodeMode::Greedy,
            phase: Phase::Test,
            p_train: 0.0,
            p_test,
            tsnr: TsnrUse::Gated,
            n_trajectories: None,
            seed: 0,
            replay: None,
            track_grad: false,
        }
    }

    pub fn sampling(p_train: f64, seed: u64) -> Self {
        RolloutOptions {
            mode: DecodeMode::Sample,
            phase: Phase::Train,
            p_train,
            p_test: 0.0,
            tsnr: TsnrUse::Gated,
            n_trajectories: None,
            seed,
            replay: None,
            track_grad: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RolloutStats {
    /// Decoding steps that ran the network.
    pub model_steps: usize,
    pub tsnr_applications: usize,
    /// Attention weights per instance and head of the last re-embedding,
    /// read off the weight tensor.
    pub tsnr_weights_per_head: Option<usize>,
    /// Shape `(queries, keys)` of that weight tensor.
    pub tsnr_weight_shape: Option<(usize, usize)>,
}

pub struct Rollout {
    /// `[instance][trajectory]`
    pub trajectories: Vec<Vec<Trajectory>>,
    /// `(B, T)` summed log-probabilities, when requested.
    pub log_likelihood: Option<Tensor>,
    pub stats: RolloutStats,
}

impl Rollout {
    /// Shortest trajectory objective of every instance, with its index.
    pub fn best(&self) -> Vec<(usize, f64)> {
        self.trajectories
            .iter()
            .map(|ts| {
                ts.iter()
                    .enumerate()
                    .map(|(i, t)| (i, t.objective()))
                    .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
            })
            .collect()
    }
}

const GATE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Decodes a batch of instances sharing customer and depot counts.
pub fn rollout(policy: &Policy, instances: &[&Instance], opts: &RolloutOptions) -> Result<Rollout> {
    let first = instances
        .first()
        .ok_or_else(|| Error::invalid("empty instance batch"))?;
    let (n, nd) = (first.n_customers(), first.n_depots());
    let n_nodes = first.n_nodes();
    let batch = instances.len();
    let t = opts.n_trajectories.unwrap_or(n);
    let dtype = policy.dtype();

    let features = EncoderFeatures::build(instances, dtype)?;
    let mut nodes = policy.encoder.forward(&features)?;
    let envs: Vec<RoutingEnv<'_>> = instances.iter().map(|i| RoutingEnv::new(i)).collect();
    let mut states: Vec<Vec<TrajectoryState>> =
        envs.iter().map(|e| e.reset(t)).collect::<Result<_>>()?;
    let mut step_log_probs = vec![vec![Vec::<f64>::new(); t]; batch];
    let mut picked: Vec<Tensor> = Vec::new();
    let mut keys = None;
    let mut stats = RolloutStats::default();
    let mut sample_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut gate_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ GATE_STREAM);

    if let Some(r) = &opts.replay {
        if r.len() != batch || r.iter().any(|x| x.len() != t) {
            return Err(Error::invalid("replay actions do not match the batch"));
        }
    }

    // depot switches add at most one extra step per sub-route under MD
    let max_steps = if nd > 1 { 3 * n + nd } else { 2 * n + nd };
    let mut step = 0;
    while states.iter().flatten().any(|s| !s.done) {
        if step >= max_steps {
            return Err(Error::ContractViolation(format!(
                "decoding did not finish within {max_steps} steps"
            )));
        }
        let all_forced = states
            .iter()
            .flatten()
            .all(|s| s.done || (s.step_index == 0 && s.forced_first.is_some()));
        let mut actions = vec![0usize; batch * t];
        if all_forced {
            for (row, s) in states.iter().flatten().enumerate() {
                actions[row] = s.forced_first.unwrap_or(s.start_depot);
            }
        } else {
            stats.model_steps += 1;
            let mut attrs = Vec::with_capacity(batch * t);
            let mut current = Vec::with_capacity(batch * t);
            let mut masks = Vec::with_capacity(batch * t);
            for (env, ss) in envs.iter().zip(&states) {
                for s in ss {
                    attrs.push(ConstraintAttributes::from_state(env, s));
                    current.push(s.current as u32);
                    masks.push(if s.done {
                        let mut m = vec![false; n_nodes];
                        m[s.start_depot] = true;
                        m
                    } else {
                        env.feasible(s)
                    });
                }
            }
            let attrs = AttributeBatch::build(&attrs, batch, dtype)?;
            let current_idx = Tensor::from_vec(current, (batch, t), &Device::Cpu)?;
            let contexts = policy.rgcr.forward(&attrs, &nodes, &current_idx)?;

            if opts.tsnr == TsnrUse::Gated {
                let draw: f64 = gate_rng.gen();
                if gate_update(draw, opts.phase, opts.p_train, opts.p_test)? {
                    let biases: Vec<DistanceBias> = envs
                        .iter()
                        .zip(&states)
                        .map(|(e, ss)| {
                            let cur: Vec<usize> = ss.iter().map(|s| s.current).collect();
                            DistanceBias::new(e.distances(), &cur)
                        })
                        .collect();
                    let bias = bias_tensor(&biases, dtype)?;
                    let re = policy.tsnr.re_embed(&nodes, &contexts, &bias)?;
                    let (_, _, q, k) = re.weights.dims4()?;
                    stats.tsnr_applications += 1;
                    stats.tsnr_weight_shape = Some((q, k));
                    stats.tsnr_weights_per_head = Some(q * k);
                    nodes = re.nodes;
                    keys = None;
                }
            }
            if keys.is_none() {
                keys = Some(policy.decoder.node_keys(&nodes)?);
            }
            let mask = mask_tensor(&masks, batch, dtype)?;
            let log_p = policy
                .decoder
                .log_probs(&contexts, keys.as_ref().expect("keys set"), &mask)?;
            let lp = to_f64_vec(&log_p)?;
            if lp.iter().any(|v| v.is_nan()) {
                return Err(Error::NumericFailure(format!("decoder output at step {step}")));
            }
            match &opts.replay {
                Some(r) => {
                    for (row, s) in states.iter().flatten().enumerate() {
                        let (b, i) = (row / t, row % t);
                        actions[row] = if s.done {
                            s.start_depot
                        } else {
                            *r[b][i].get(s.step_index).ok_or_else(|| {
                                Error::invalid(format!("replay for ({b}, {i}) ran out"))
                            })?
                        };
                    }
                }
                None => {
                    let probs: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
                    for (row, (a, _)) in select(&probs, n_nodes, opts.mode, &mut sample_rng)
                        .into_iter()
                        .enumerate()
                    {
                        actions[row] = a;
                    }
                }
            }
            for (row, s) in states.iter().flatten().enumerate() {
                if !s.done {
                    let v = lp[row * n_nodes + actions[row]];
                    step_log_probs[row / t][row % t].push(v);
                }
            }
            if opts.track_grad {
                let idx: Vec<u32> = actions.iter().map(|&a| a as u32).collect();
                let idx = Tensor::from_vec(idx, (batch, t, 1), &Device::Cpu)?;
                picked.push(log_p.gather(&idx, 2)?.squeeze(2)?);
            }
        }
        for (b, ss) in states.iter_mut().enumerate() {
            for (i, s) in ss.iter_mut().enumerate() {
                if !s.done {
                    if all_forced {
                        step_log_probs[b][i].push(0.0);
                    }
                    envs[b].apply(s, actions[b * t + i])?;
                }
            }
        }
        step += 1;
    }

    let log_likelihood = if opts.track_grad {
        Some(match picked.len() {
            0 => Tensor::zeros((batch, t), dtype, &Device::Cpu)?,
            _ => Tensor::stack(&picked, 0)?.sum(0)?,
        })
    } else {
        None
    };
    let trajectories = envs
        .iter()
        .zip(&states)
        .zip(step_log_probs)
        .map(|((e, ss), lps)| {
            ss.iter()
                .zip(lps)
                .map(|(s, lp)| e.into_trajectory(s, lp))
                .collect()
        })
        .collect();
    Ok(Rollout {
        trajectories,
        log_likelihood,
        stats,
    })
}

/// Splits instances into chunks and decodes each, concatenating results.
pub fn rollout_chunked(
    policy: &Policy,
    instances: &[Instance],
    chunk: usize,
    opts: &RolloutOptions,
) -> Result<Rollout> {
    let mut all = Rollout {
        trajectories: Vec::with_capacity(instances.len()),
        log_likelihood: None,
        stats: RolloutStats::default(),
    };
    let mut opts = opts.clone();
    opts.track_grad = false;
    for part in instances.chunks(chunk.max(1)) {
        let refs: Vec<&Instance> = part.iter().collect();
        let r = rollout(policy, &refs, &opts)?;
        all.trajectories.extend(r.trajectories);
        all.stats.model_steps += r.stats.model_steps;
        all.stats.tsnr_applications += r.stats.tsnr_applications;
        if r.stats.tsnr_weight_shape.is_some() {
            all.stats.tsnr_weight_shape = r.stats.tsnr_weight_shape;
            all.stats.tsnr_weights_per_head = r.stats.tsnr_weights_per_head;
        }
    }
    Ok(all)
}
