use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fdrelay::experiment::report::{complexity_report, convergence_report, summary_plot, trace_plots, validate};
use fdrelay::experiment::{read_summary, run_and_write, run_method, summarize, ExperimentSpec, Method};
use fdrelay::system::{draw_channels, RandomStream};

#[derive(Parser)]
#[command(name = "fdrelay", version, about = "Impairment-aware full-duplex MIMO relay design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design and evaluate every selected method on one channel draw.
    Run(Common),
    /// Monte Carlo sweep; writes records.csv and summary.csv.
    Sweep(Common),
    /// Compare closed-form covariances with the symbol-level simulator.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Simulated symbols.
        #[arg(long, default_value_t = 100_000)]
        n_sym: usize,
    },
    /// Write optimizer traces (trace_<k>.csv) for the first trials.
    Converge(Common),
    /// Print the per-iteration complexity figures of both block updates.
    Complexity(Common),
    /// Render SVG plots from the CSV files in the output directory.
    Plot {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated methods, e.g. `aware,unaware,hd`.
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<Method>>,
    /// Start from the 4×4, two-stream, 100-trial setup instead of 2×2.
    #[arg(long)]
    full_scale: bool,
}

impl Common {
    fn spec(&self) -> Result<ExperimentSpec> {
        let defaults = if self.full_scale {
            ExperimentSpec::full_scale()
        } else {
            ExperimentSpec::desk_scale()
        };
        let mut spec = match &self.config {
            Some(path) => ExperimentSpec::load(path, defaults).with_context(|| format!("loading {}", path.display()))?,
            None => defaults,
        };
        if let Some(seed) = self.seed {
            spec.master_seed = seed;
        }
        if let Some(trials) = self.trials {
            spec.trials = trials;
        }
        if let Some(methods) = &self.method {
            spec.methods = methods.clone();
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn run(common: &Common) -> Result<()> {
    let spec = ExperimentSpec {
        sweep: None,
        trials: 1,
        ..common.spec()?
    };
    let records = run_and_write(&spec, &common.out)?;
    println!("{:<16} {:<16} {:>10} {:>12} {:>6}", "method", "status", "mse", "rate", "outer");
    for r in &records {
        println!(
            "{:<16} {:<16} {:>10.5} {:>12.4} {:>6}",
            r.method, r.status, r.mse, r.rate, r.outer_iters
        );
    }
    Ok(())
}

fn sweep(common: &Common) -> Result<()> {
    let spec = common.spec()?;
    let records = run_and_write(&spec, &common.out)?;
    let summary = summarize(&records);
    println!(
        "{:<10} {:>10} {:<16} {:>5} {:>7} {:>10} {:>10} {:>10}",
        "param", "value", "method", "ok", "failed", "q1", "median", "q3"
    );
    for s in &summary {
        println!(
            "{:<10} {:>10} {:<16} {:>5} {:>7} {:>10.5} {:>10.5} {:>10.5}",
            s.sweep_param, s.sweep_value, s.method, s.n_ok, s.n_failed, s.mse_q1, s.mse_median, s.mse_q3
        );
    }
    println!("wrote {}", common.out.display());
    Ok(())
}

fn validate_cmd(common: &Common, n_sym: usize) -> Result<()> {
    let spec = common.spec()?;
    let cfg = &spec.points()?[0].cfg;
    std::fs::create_dir_all(&common.out)?;
    let mut w = csv::Writer::from_path(common.out.join("validation.csv"))?;
    println!(
        "{:<6} {:<16} {:>12} {:>12} {:>12} {:>10} {:>10}",
        "trial", "method", "r_out err", "y err", "mse err", "model", "empirical"
    );
    for trial in 0..spec.trials {
        let mut rng = RandomStream::for_trial(spec.master_seed, trial as u64);
        let ch = draw_channels(cfg, &mut rng)?;
        for &method in &spec.methods {
            if method == Method::Hd {
                bail!("validation compares full-duplex closed forms; drop `hd` from the methods");
            }
            let outcome = run_method(method, cfg, &ch, &spec.pdd)?;
            let report = validate(cfg, &ch, &outcome.design, n_sym, &mut rng.fork())?;
            println!(
                "{:<6} {:<16} {:>12.3e} {:>12.3e} {:>12.3e} {:>10.5} {:>10.5}",
                trial,
                method,
                report.relay_tx_err,
                report.dest_err,
                report.mse_err,
                report.model_mse,
                report.empirical_mse
            );
            w.serialize(report)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn converge(common: &Common) -> Result<()> {
    let spec = common.spec()?;
    let cfg = &spec.points()?[0].cfg;
    println!("{:<6} {:>6} {:>8} {:>12} {:>10}", "trial", "outer", "inner", "final zeta", "mse");
    for trial in 0..spec.trials {
        let mut rng = RandomStream::for_trial(spec.master_seed, trial as u64);
        let ch = draw_channels(cfg, &mut rng)?;
        match convergence_report(cfg, &ch, &spec.pdd, &common.out, trial) {
            Ok(t) => println!(
                "{:<6} {:>6} {:>8} {:>12.3e} {:>10.5}",
                trial,
                t.outer_iterations(),
                t.total_inner_iterations(),
                t.final_zeta(),
                t.final_mse()
            ),
            Err(e) => println!("{trial:<6} {e}"),
        }
    }
    Ok(())
}

fn plot(out: &Path) -> Result<()> {
    let summary = out.join("summary.csv");
    if summary.exists() {
        summary_plot(&read_summary(&summary)?).write(&out.join("summary.svg"))?;
    }
    for entry in std::fs::read_dir(out)? {
        let path = entry?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if !stem.starts_with("trace_") || stem.ends_with("_inner") || path.extension().is_none_or(|e| e != "csv") {
            continue;
        }
        let inner = out.join(format!("{stem}_inner.csv"));
        let plots = trace_plots(&path, &inner)?;
        for (name, p) in ["mse_vs_zeta", "al_inner", "mse_outer", "zeta_outer"].iter().zip(plots) {
            p.write(&out.join(format!("{stem}_{name}.svg")))?;
        }
    }
    println!("plots written to {}", out.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::init();
    match Cli::parse().command {
        Command::Run(c) => run(&c),
        Command::Sweep(c) => sweep(&c),
        Command::Validate { common, n_sym } => validate_cmd(&common, n_sym),
        Command::Converge(c) => converge(&c),
        Command::Complexity(c) => {
            let spec = c.spec()?;
            print!("{}", complexity_report(&spec.points()?[0].cfg));
            Ok(())
        }
        Command::Plot { out } => plot(&out),
    }
}
