use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use kdey_cli::experiment::{six_significant, write_sweep};
use kdey_cli::dataset::align_labels;
use kdey_cli::{
    generate_synthetic, load_csv, run_experiment, sensitivity_sweep, write_csv, ExperimentConfig, SweepAxis,
    SyntheticSpec,
};
use kdey_core::protocol::{evaluate_protocol, Loss};
use kdey_core::{build_quantifier, ClassWeighting, Hyperparameters, MethodKind, MethodSettings, ProtocolConfig};

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Random seed for data, bags, folds and optimiser restarts.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; more than one evaluates bags in parallel.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Model-selection loss.
    #[arg(long, global = true, value_parser = ["mae", "mrae"])]
    loss: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Model selection and evaluation of every configured method.
    Run { config: PathBuf },
    /// MAE of one method across values of its bandwidth or bin count.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Defaults to KDEy-ML for `h` and DM-HD for `b`.
        #[arg(long)]
        method: Option<MethodKind>,
    },
    /// Writes train.csv and test.csv from a synthetic data spec (TOML).
    Synth { spec: PathBuf },
    /// Fits one method on a training CSV and evaluates it on a test CSV.
    Eval {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        method: MethodKind,
        #[arg(long, default_value = "label")]
        label_column: String,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long)]
        balanced: bool,
        #[arg(long)]
        bandwidth: Option<f64>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long, default_value_t = 100)]
        bags: usize,
        #[arg(long, default_value_t = 100)]
        bag_size: usize,
    },
}

#[derive(Parser)]
#[command(name = "kdey", version, about = "Class prevalence estimation experiments")]
struct Top {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

fn load_config(path: &PathBuf, o: &Overrides) -> anyhow::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = o.seed {
        config.seed = seed;
    }
    if let Some(jobs) = o.jobs {
        config.jobs = jobs;
    }
    if let Some(loss) = &o.loss {
        config.loss = loss.parse::<Loss>()?;
    }
    if let Some(out) = &o.out {
        config.out = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn set_threads(jobs: usize) -> anyhow::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build_global()
        .context("configuring worker threads")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Top::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(top: Top) -> anyhow::Result<ExitCode> {
    let o = top.overrides;
    match top.command {
        Command::Run { config } => {
            let config = load_config(&config, &o)?;
            set_threads(config.jobs)?;
            let summary = run_experiment(&config)?;
            print!("{}", kdey_cli::experiment::render_table(&summary));
            println!("results written to {}", config.out.display());
            if summary.all_failed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Sweep {
            config,
            axis,
            values,
            method,
        } => {
            let config = load_config(&config, &o)?;
            set_threads(config.jobs)?;
            let method = method.unwrap_or(match axis {
                SweepAxis::H => MethodKind::KdeyMl,
                SweepAxis::B => MethodKind::DmHd,
            });
            let rows = sensitivity_sweep(&config, method, axis, &values)?;
            let path = write_sweep(&config.out, method, axis, &rows)?;
            println!("{axis}\tMAE");
            for r in &rows {
                match r.mae {
                    Some(m) => println!("{}\t{}", r.value, six_significant(m)),
                    None => println!("{}\tfailed: {}", r.value, r.error.as_deref().unwrap_or("")),
                }
            }
            println!("table written to {}", path.display());
        }
        Command::Synth { spec } => {
            let text = std::fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let spec: SyntheticSpec = toml::from_str(&text).context("parsing synthetic spec")?;
            let (train, test) = generate_synthetic(&spec, o.seed.unwrap_or(0))?;
            let out = o.out.unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_csv(out.join("train.csv"), &train)?;
            write_csv(out.join("test.csv"), &test)?;
            println!("wrote {} training and {} test rows to {}", train.len(), test.len(), out.display());
        }
        Command::Eval {
            train,
            test,
            method,
            label_column,
            c,
            balanced,
            bandwidth,
            bins,
            bags,
            bag_size,
        } => {
            set_threads(o.jobs.unwrap_or(1))?;
            let train = load_csv(&train, &label_column)?;
            let test = align_labels(&train, &load_csv(&test, &label_column)?)?;
            let hp = Hyperparameters {
                c,
                class_weight: if balanced { ClassWeighting::Balanced } else { ClassWeighting::None },
                bandwidth,
                bins,
            };
            let seed = o.seed.unwrap_or(0);
            let settings = MethodSettings {
                seed,
                ..Default::default()
            };
            let mut q = build_quantifier(method, &hp, &settings, None)?;
            q.fit(&train.dataset)?;
            let protocol = ProtocolConfig::new(bags, bag_size, seed)?.test_stream();
            let report = evaluate_protocol(q.as_ref(), &test, &protocol, o.jobs.unwrap_or(1) > 1)?;
            println!(
                "{method}\tMAE {}\tMRAE {}",
                six_significant(report.mean_ae),
                six_significant(report.mean_rae)
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
