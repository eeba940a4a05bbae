//! Counts the attention weights one node re-embedding step computes, against
//! full self-attention over nodes and contexts, and shows that refinements
//! chain from step to step.
//!
//! cargo run --release --example attention_cost

use candle_core::{DType, Device, Tensor};
use mtvrp::encoder::EncoderFeatures;
use mtvrp::instances::{generate, VariantSpec};
use mtvrp::nn::to_f64_vec;
use mtvrp::policy::{rollout, ModelConfig, PolicyParams, RolloutOptions};
use mtvrp::tsnr::{bias_tensor, distance_bias, self_attention_weight_count};

fn main() -> mtvrp::Result<()> {
    let params = PolicyParams::new(ModelConfig::small(32, 4, 2), DType::F32, 1)?;
    let policy = params.inference()?;
    println!("   N   cross   self   ratio");
    for n in [10, 20, 50, 100] {
        let inst = generate(VariantSpec::CVRP, n, 1)?;
        let r = rollout(&policy, &[&inst], &RolloutOptions::greedy(1.0))?;
        let cross = r.stats.tsnr_weights_per_head.expect("re-embedding ran");
        let selfw = self_attention_weight_count(n + 1, n);
        println!("{n:>4} {cross:>7} {selfw:>6}   {:.3}", cross as f64 / selfw as f64);
    }

    // three chained refinements from the same start
    let inst = generate(VariantSpec::CVRP, 10, 2)?;
    let h0 = policy.encoder.forward(&EncoderFeatures::build(&[&inst], DType::F32)?)?;
    let contexts = Tensor::randn(0f32, 1.0, (1, 10, 32), &Device::Cpu)?;
    let bias = bias_tensor(&[distance_bias(&inst, &(1..=10).collect::<Vec<_>>())], DType::F32)?;
    let mut h = h0.clone();
    for step in 1..=3 {
        h = policy.tsnr.re_embed(&h, &contexts, &bias)?.nodes;
        let drift: f64 = to_f64_vec(&(&h - &h0)?)?.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("step {step}: distance from encoder output {drift:.4}");
    }
    Ok(())
}
