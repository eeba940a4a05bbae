//! Scoring decoded solutions against reference objectives.

mod oracle;

pub use oracle::{oracle_optimal, OracleSolution, ORACLE_MAX_CUSTOMERS};

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{route_length, validate_solution, RoutingEnv};
use crate::error::{Error, Result};
use crate::instances::Instance;
use crate::policy::{rollout, PolicyParams, RolloutOptions};

/// Instances decoded together in one batch.
pub const EVAL_CHUNK: usize = 64;

/// `(objective - reference) / reference` in percent.
pub fn gap_percent(objective: f64, reference: f64) -> f64 {
    (objective - reference) / reference * 100.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceResult {
    pub objective: f64,
    pub reference: f64,
    pub gap: f64,
    /// Best node sequence found.
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub instances: Vec<InstanceResult>,
    pub mean_objective: f64,
    /// Mean of the per-instance gaps.
    pub mean_gap: f64,
    /// Wall clock of decoding only.
    pub total_seconds: f64,
}

impl GapReport {
    pub fn new(instances: Vec<InstanceResult>, total_seconds: f64) -> Self {
        let k = instances.len().max(1) as f64;
        GapReport {
            mean_objective: instances.iter().map(|r| r.objective).sum::<f64>() / k,
            mean_gap: instances.iter().map(|r| r.gap).sum::<f64>() / k,
            instances,
            total_seconds,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("instance,objective,reference,gap_percent\n");
        for (i, r) in self.instances.iter().enumerate() {
            let _ = writeln!(s, "{i},{},{},{}", r.objective, r.reference, r.gap);
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "instances: {}\nmean objective: {:.6}\nmean gap: {:.4}%\ndecode time: {:.3}s\n",
            self.instances.len(),
            self.mean_objective,
            self.mean_gap,
            self.total_seconds
        )
    }
}

/// Exact optimum of every instance.
pub fn oracle_references(instances: &[Instance]) -> Result<Vec<f64>> {
    instances
        .iter()
        .map(|i| oracle_optimal(i).map(|s| s.objective))
        .collect()
}

/// Greedy multi-start decoding, best trajectory per instance, scored against
/// `references`. Every scored solution is checked first; a failing one aborts
/// the report.
pub fn evaluate(
    params: &PolicyParams,
    instances: &[Instance],
    references: &[f64],
    p_test: f64,
    seed: u64,
) -> Result<GapReport> {
    if references.len() != instances.len() {
        return Err(Error::invalid(format!(
            "{} references for {} instances",
            references.len(),
            instances.len()
        )));
    }
    if let Some(i) = references.iter().position(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::invalid(format!("reference objective {i} is not positive")));
    }
    let policy = params.inference()?;
    let mut opts = RolloutOptions::greedy(p_test);
    opts.seed = seed;
    let mut results = Vec::with_capacity(instances.len());
    let mut seconds = 0.0;
    for (ci, chunk) in instances.chunks(EVAL_CHUNK).enumerate() {
        let refs: Vec<&Instance> = chunk.iter().collect();
        let start = Instant::now();
        let r = rollout(&policy, &refs, &opts)?;
        seconds += start.elapsed().as_secs_f64();
        for ((k, inst), (best, obj)) in chunk.iter().enumerate().zip(r.best()) {
            let idx = ci * EVAL_CHUNK + k;
            let nodes = r.trajectories[k][best].nodes.clone();
            let verdict = validate_solution(&nodes, inst);
            if !verdict.valid {
                return Err(Error::Validation(format!(
                    "instance {idx}: {:?}",
                    verdict.violations
                )));
            }
            let reference = references[idx];
            results.push(InstanceResult {
                objective: obj,
                reference,
                gap: gap_percent(obj, reference),
                nodes,
            });
        }
    }
    Ok(GapReport::new(results, seconds))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub p_test: f64,
    pub mean_gap: f64,
    /// Median decode time over the repetitions.
    pub total_seconds: f64,
}

/// One evaluation per update probability, same instances and seed.
pub fn sweep_p_test(
    params: &PolicyParams,
    instances: &[Instance],
    references: &[f64],
    grid: &[f64],
    seed: u64,
    repetitions: usize,
) -> Result<Vec<SweepRow>> {
    if let Some(p) = grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("grid value {p} outside [0, 1]")));
    }
    grid.iter()
        .map(|&p| {
            let mut times = Vec::with_capacity(repetitions.max(1));
            let mut gap = 0.0;
            for _ in 0..repetitions.max(1) {
                let r = evaluate(params, instances, references, p, seed)?;
                gap = r.mean_gap;
                times.push(r.total_seconds);
            }
            times.sort_by(f64::total_cmp);
            Ok(SweepRow {
                p_test: p,
                mean_gap: gap,
                total_seconds: times[times.len() / 2],
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("p_test,mean_gap_percent,total_seconds\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.p_test, r.mean_gap, r.total_seconds);
    }
    s
}

/// Objective of one rollout that picks uniformly among the feasible moves.
pub fn random_policy_objective(inst: &Instance, seed: u64) -> Result<f64> {
    let env = RoutingEnv::new(inst);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = env.free_start(0);
    while !s.done {
        let moves: Vec<usize> = env
            .feasible(&s)
            .iter()
            .enumerate()
            .filter_map(|(v, &ok)| ok.then_some(v))
            .collect();
        let &a = moves
            .choose(&mut rng)
            .ok_or_else(|| Error::ContractViolation("no feasible move".into()))?;
        env.apply(&mut s, a)?;
    }
    if s.stranded {
        return Err(Error::Validation("random rollout got stranded".into()));
    }
    Ok(route_length(&s.sequence, inst))
}
