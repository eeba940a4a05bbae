//! Loads a Solomon-format VRPTW file and decodes it with a policy (a trained
//! checkpoint if given, otherwise fresh weights).
//!
//! cargo run --release --example solomon_benchmark -- [file] [checkpoint]

use std::path::PathBuf;

use candle_core::DType;
use mtvrp::env::validate_solution;
use mtvrp::instances::SolomonFile;
use mtvrp::policy::{rollout, ModelConfig, PolicyParams, RolloutOptions};

fn main() -> mtvrp::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/r101_layout.txt")
    });
    let file = SolomonFile::parse(&std::fs::read_to_string(&path)?)?;
    let inst = file.to_instance();
    println!(
        "{}: {} customers, {} vehicles of capacity {}, scale factor {}",
        file.name,
        file.n_customers(),
        file.vehicles,
        file.capacity,
        file.scale()
    );

    let params = match args.next() {
        Some(ckpt) => PolicyParams::load(ckpt.as_ref(), DType::F32)?,
        None => PolicyParams::new(ModelConfig::default(), DType::F32, 0)?,
    };
    let r = rollout(&params.inference()?, &[&inst], &RolloutOptions::greedy(1.0))?;
    let (best, obj) = r.best()[0];
    let nodes = &r.trajectories[0][best].nodes;
    let routes = nodes.iter().filter(|&&v| v == 0).count();
    println!(
        "best of {} starts: length {:.4} (x{} = {:.1} in file units), {routes} routes, valid {}",
        r.trajectories[0].len(),
        obj,
        file.scale(),
        obj * file.scale(),
        validate_solution(nodes, &inst).valid
    );
    Ok(())
}
