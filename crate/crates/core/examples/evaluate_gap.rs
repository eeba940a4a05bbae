//! Scores a checkpoint against exact optima on fresh N=10 instances.
//!
//! cargo run --release --example evaluate_gap -- <checkpoint> [VARIANT] [count]

use candle_core::DType;
use mtvrp::eval::{evaluate, oracle_references};
use mtvrp::instances::{generate, VariantSpec};
use mtvrp::policy::PolicyParams;

fn main() -> mtvrp::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().expect("usage: evaluate_gap <checkpoint> [VARIANT] [count]");
    let variant: VariantSpec = args.next().unwrap_or_else(|| "CVRP".into()).parse()?;
    let count: u64 = args.next().map_or(100, |a| a.parse().expect("count"));

    let params = PolicyParams::load(ckpt.as_ref(), DType::F32)?;
    let insts = (0..count)
        .map(|k| generate(variant, 10, 10_000 + k))
        .collect::<mtvrp::Result<Vec<_>>>()?;
    let refs = oracle_references(&insts)?;
    let report = evaluate(&params, &insts, &refs, 1.0, 0)?;
    print!("{}", report.summary());
    let worst = report
        .instances
        .iter()
        .map(|r| r.gap)
        .fold(f64::NEG_INFINITY, f64::max);
    println!("worst instance gap: {worst:.2}%");
    Ok(())
}
