//! Small REINFORCE run: trains on one or more tasks, keeps the best
//! checkpoint by held-out CVRP objective and writes a metrics CSV.
//!
//! cargo run --release --example train_desk -- [variants] [epochs] [out_dir]

use std::path::PathBuf;

use mtvrp::instances::VariantSpec;
use mtvrp::trainer::{fit_with_progress, TrainConfig};

fn main() -> mtvrp::Result<()> {
    let mut args = std::env::args().skip(1);
    let variants = args.next().unwrap_or_else(|| "CVRP".into());
    let epochs: usize = args.next().map_or(20, |a| a.parse().expect("epochs"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "ckpt".into()));

    let mut cfg = TrainConfig::desk(10);
    cfg.variants = VariantSpec::set_by_name(&variants)?;
    cfg.epochs = epochs;
    cfg.seed = 7;
    let (_, report) = fit_with_progress(&cfg, Some(&out), |m| {
        println!(
            "epoch {:>2}  loss {:>9.5}  val_obj {:.4}  lr {:.0e}",
            m.epoch, m.loss, m.val_obj, m.lr
        );
    })?;
    println!(
        "best epoch {} with validation objective {:.4}; see {}/best.ckpt and metrics.csv",
        report.best_epoch,
        report.best_val_obj,
        out.display()
    );
    Ok(())
}
