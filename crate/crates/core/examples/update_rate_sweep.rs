//! Decoding cost against quality for several node re-embedding rates.
//!
//! cargo run --release --example update_rate_sweep -- [checkpoint]

use candle_core::DType;
use mtvrp::eval::{oracle_references, sweep_p_test};
use mtvrp::instances::{generate, VariantSpec};
use mtvrp::policy::{ModelConfig, PolicyParams};

fn main() -> mtvrp::Result<()> {
    let params = match std::env::args().nth(1) {
        Some(ckpt) => PolicyParams::load(ckpt.as_ref(), DType::F32)?,
        None => PolicyParams::new(ModelConfig::default(), DType::F32, 0)?,
    };
    let insts = (0..64)
        .map(|k| generate(VariantSpec::CVRP, 10, 500 + k))
        .collect::<mtvrp::Result<Vec<_>>>()?;
    let refs = oracle_references(&insts)?;
    let rows = sweep_p_test(&params, &insts, &refs, &[0.0, 0.25, 0.5, 0.75, 1.0], 0, 3)?;
    println!("p_test  mean gap   decode time");
    for r in rows {
        println!("{:>6.2}  {:>7.3}%  {:>9.3}s", r.p_test, r.mean_gap, r.total_seconds);
    }
    Ok(())
}
