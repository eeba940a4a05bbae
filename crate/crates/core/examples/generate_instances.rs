//! Lists the task catalog, samples one instance per in-distribution task and
//! writes them as a JSON-lines dataset.
//!
//! cargo run --release --example generate_instances -- [n] [out.jsonl]

use mtvrp::instances::{dataset_from_jsonl, dataset_to_jsonl, generate, VariantSpec};

fn main() -> mtvrp::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(20, |a| a.parse().expect("n"));
    let out = args.next().unwrap_or_else(|| "instances.jsonl".into());

    let catalog = VariantSpec::catalog();
    println!("{} tasks in the catalog:", catalog.len());
    for chunk in catalog.chunks(8) {
        let names: Vec<String> = chunk.iter().map(|v| v.name()).collect();
        println!("  {}", names.join(" "));
    }

    let insts = VariantSpec::in_distribution()
        .into_iter()
        .enumerate()
        .map(|(i, v)| generate(v, n, i as u64))
        .collect::<mtvrp::Result<Vec<_>>>()?;
    for inst in &insts {
        let backhauls = inst.customers.iter().filter(|c| c.is_backhaul()).count();
        let demand: f64 = inst.customers.iter().map(|c| c.dl + c.db).sum();
        println!(
            "{:<10} customers {:>3}  backhaul {:>2}  total demand {:.3}  limit {}",
            inst.variant.name(),
            inst.n_customers(),
            backhauls,
            demand,
            if inst.variant.duration_limited { format!("{}", inst.duration_limit) } else { "-".into() }
        );
    }

    let text = dataset_to_jsonl(&insts);
    assert_eq!(dataset_from_jsonl(&text)?, insts);
    std::fs::write(&out, text)?;
    println!("wrote {out}");
    Ok(())
}
