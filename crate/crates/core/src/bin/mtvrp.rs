use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use candle_core::DType;
use clap::{Args, Parser, Subcommand};

use mtvrp::env::{route_length, validate_solution, TrajectoryFile};
use mtvrp::eval::{evaluate, oracle_optimal, oracle_references, sweep_csv, sweep_p_test};
use mtvrp::instances::{dataset_to_jsonl, generate, load_instances, Instance, VariantSpec};
use mtvrp::policy::{PolicyParams, SparseBranch};
use mtvrp::trainer::{fit_with_progress, instance_seed, TrainConfig};
use mtvrp::{Error, Result};

#[derive(Parser)]
#[command(name = "mtvrp", version, about = "Multi-task vehicle routing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write random instances as JSON lines
    Generate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy
    Train(TrainArgs),
    /// Decode instances and report gaps to a reference
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        /// "oracle" or a file with one reference objective per line
        #[arg(long, default_value = "oracle")]
        reference: String,
        /// Directory for report.csv and summary.txt
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate over a grid of update probabilities
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
        grid: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check solutions against an instance
    Validate {
        /// JSON-lines or Solomon instance file (first instance is used)
        #[arg(long)]
        instance: PathBuf,
        /// JSON node list, or a trajectory file
        #[arg(long)]
        solution: PathBuf,
    },
    /// Solve small instances exactly
    Oracle {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Instance file; otherwise instances are generated
    #[arg(long)]
    instances: Option<PathBuf>,
    #[arg(long, default_value = "CVRP")]
    variant: VariantSpec,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl DataArgs {
    fn load(&self) -> Result<Vec<Instance>> {
        match &self.instances {
            Some(p) => load_instances(&fs::read_to_string(p)?),
            None => (0..self.count)
                .map(|k| generate(self.variant, self.n, instance_seed(self.seed, 7, k as u64)))
                .collect(),
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    p_test: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// "in16", "all48" or a comma-separated list of variants
    #[arg(long, default_value = "in16")]
    variant_set: String,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    /// Training-set size
    #[arg(long, default_value_t = 2000)]
    instances: usize,
    #[arg(long, default_value_t = 0.75)]
    p_train: f64,
    #[arg(long, default_value_t = 1.0)]
    p_test: f64,
    #[arg(long, default_value_t = 3e-4)]
    lr: f64,
    /// lr decay points (1-based epochs); empty for a constant rate
    #[arg(long, value_delimiter = ',')]
    milestones: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    validation: usize,
    /// Encoder without the sparse branch
    #[arg(long)]
    single_branch: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(fs::write(path, text)?)
}

fn references(spec: &str, instances: &[Instance]) -> Result<Vec<f64>> {
    if spec == "oracle" {
        return oracle_references(instances);
    }
    fs::read_to_string(spec)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{spec}:{}: not a number", i + 1)))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { data, out } => {
            let insts = data.load()?;
            write(&out, &dataset_to_jsonl(&insts))?;
            println!("wrote {} instances to {}", insts.len(), out.display());
        }
        Command::Train(a) => {
            let mut cfg = TrainConfig::desk(a.n);
            cfg.variants = VariantSpec::set_by_name(&a.variant_set)?;
            cfg.epochs = a.epochs;
            cfg.batch_size = a.batch;
            cfg.instances_per_epoch = a.instances;
            cfg.p_train = a.p_train;
            cfg.p_test = a.p_test;
            cfg.lr = a.lr;
            cfg.milestones = a.milestones;
            cfg.validation_instances = a.validation;
            cfg.seed = a.seed;
            if a.single_branch {
                cfg.model.sparse_branch = SparseBranch::Disabled;
            }
            let (_, report) = fit_with_progress(&cfg, Some(&a.out), |m| {
                println!(
                    "epoch {:>3}  loss {:>10.5}  val_obj {:.5}  lr {:.1e}",
                    m.epoch, m.loss, m.val_obj, m.lr
                );
            })?;
            println!(
                "best epoch {} (val_obj {:.5}); checkpoints in {}",
                report.best_epoch,
                report.best_val_obj,
                a.out.display()
            );
            if let Some(why) = report.aborted {
                return Err(Error::NumericFailure(why));
            }
        }
        Command::Eval {
            model,
            data,
            reference,
            out,
        } => {
            let params = PolicyParams::load(&model.checkpoint, DType::F32)?;
            let insts = data.load()?;
            let refs = references(&reference, &insts)?;
            let report = evaluate(&params, &insts, &refs, model.p_test, data.seed)?;
            print!("{}", report.summary());
            if let Some(dir) = out {
                write(&dir.join("report.csv"), &report.to_csv())?;
                write(&dir.join("summary.txt"), &report.summary())?;
            }
        }
        Command::Sweep {
            model,
            data,
            grid,
            repetitions,
            out,
        } => {
            let params = PolicyParams::load(&model.checkpoint, DType::F32)?;
            let insts = data.load()?;
            let refs = oracle_references(&insts)?;
            let rows = sweep_p_test(&params, &insts, &refs, &grid, data.seed, repetitions)?;
            let csv = sweep_csv(&rows);
            print!("{csv}");
            if let Some(p) = out {
                write(&p, &csv)?;
            }
        }
        Command::Validate { instance, solution } => {
            let inst = load_instances(&fs::read_to_string(&instance)?)?
                .into_iter()
                .next()
                .ok_or_else(|| Error::InvalidArgument("instance file is empty".into()))?;
            let text = fs::read_to_string(&solution)?;
            let sequences = match serde_json::from_str::<Vec<usize>>(&text) {
                Ok(nodes) => vec![nodes],
                Err(_) => serde_json::from_str::<TrajectoryFile>(&text)?.sequences,
            };
            let mut bad = 0;
            for (i, nodes) in sequences.iter().enumerate() {
                let v = validate_solution(nodes, &inst);
                if v.valid {
                    println!("solution {i}: valid, length {:.9}", route_length(nodes, &inst));
                } else {
                    bad += 1;
                    println!("solution {i}: INVALID");
                    for x in &v.violations {
                        println!("  step {}: {} ({})", x.step, x.rule, x.detail);
                    }
                }
            }
            if bad > 0 {
                return Err(Error::Validation(format!(
                    "{bad} of {} solutions invalid",
                    sequences.len()
                )));
            }
        }
        Command::Oracle { data, out } => {
            let mut lines = String::new();
            for (i, inst) in data.load()?.iter().enumerate() {
                let s = oracle_optimal(inst)?;
                println!("instance {i}: {:.9} {:?}", s.objective, s.nodes);
                lines.push_str(&format!("{}\n", s.objective));
            }
            if let Some(p) = out {
                write(&p, &lines)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Validation(_) => 2,
                Error::NumericFailure(_) => 3,
                _ => 1,
            })
        }
    }
}
