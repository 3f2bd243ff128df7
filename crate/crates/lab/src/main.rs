use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use brownot::{emit_plot_data, run_experiment, ExperimentConfig, ExperimentKind, PlotKind, RunOptions, RunRecord};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "brownot", version, about = "Monte Carlo transport experiments for Brownian occupation measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replicas per grid value (overrides the config).
    #[arg(long)]
    replicas: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Limit constant of the interlacement cost in a fixed domain.
    Constant(Common),
    /// Cost of n paths from the equilibrium measure.
    FixedN(Common),
    /// Growth rate of the torus occupation cost.
    TorusRate(Common),
    /// Spread of the normalized torus cost across horizons.
    Concentration(Common),
    /// Cube subadditivity of the interlacement cost.
    Subadd(Common),
    /// Torus hitting probability of a small ball.
    Hitting(Common),
    /// Plot data from a finished run.
    Plot(PlotArgs),
}

#[derive(Args)]
struct PlotArgs {
    /// `record.json`, or a run directory containing one.
    #[arg(long)]
    record: PathBuf,
    /// rate-fit, plateau or sd-decay; all three when omitted.
    #[arg(long)]
    kind: Option<String>,
    /// Output directory; the record's directory when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(kind: ExperimentKind, c: &Common) -> Result<ExperimentConfig> {
    let mut config = match &c.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        config.master_seed = s;
    }
    if let Some(r) = c.replicas {
        config.replicas = r;
    }
    if let Some(o) = &c.out {
        config.output = Some(o.clone());
    }
    if config.experiment.is_none() {
        config.experiment = Some(kind);
    }
    Ok(config)
}

fn run(kind: ExperimentKind, c: &Common) -> Result<bool> {
    let config = load_config(kind, c)?;
    let out = config
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}", kind.name(), config.master_seed)));
    let record = run_experiment(kind, &config, &RunOptions::in_dir(&out, c.jobs))?;
    println!("{} -> {}", kind.name(), out.join("record.json").display());
    for g in &record.grid {
        println!(
            "  {} = {:<10} mean {:.6e} (se {:.2e})  normalized {:.6e} (se {:.2e})",
            record.grid_label, g.value, g.mean_cost, g.se_cost, g.normalized, g.normalized_se
        );
    }
    if let Some(f) = &record.fit {
        println!("  exponent {:.4} ± {:.4} (expected {:.4})", f.exponent, f.exponent_se, f.expected);
    }
    if let Some(k) = &record.constant {
        println!("  constant {:.6e} ± {:.2e}", k.value, k.se);
    }
    for ch in &record.checks {
        println!("  [{}] {} value {:.6e} threshold {:.6e}", if ch.passed { "pass" } else { "FAIL" }, ch.name, ch.value, ch.threshold);
    }
    Ok(record.all_checks_pass())
}

fn plot(args: &PlotArgs) -> Result<()> {
    let path = if args.record.is_dir() {
        args.record.join("record.json")
    } else {
        args.record.clone()
    };
    let record = RunRecord::load(&path).with_context(|| format!("reading {}", path.display()))?;
    let dir = args
        .out
        .clone()
        .unwrap_or_else(|| path.parent().map(PathBuf::from).unwrap_or_default());
    let kinds = match &args.kind {
        Some(k) => vec![k.parse::<PlotKind>()?],
        None => PlotKind::ALL.to_vec(),
    };
    for k in kinds {
        println!("{}", emit_plot_data(&record, k, &dir)?.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Constant(c) => run(ExperimentKind::Constant, c),
        Command::FixedN(c) => run(ExperimentKind::FixedN, c),
        Command::TorusRate(c) => run(ExperimentKind::TorusRate, c),
        Command::Concentration(c) => run(ExperimentKind::Concentration, c),
        Command::Subadd(c) => run(ExperimentKind::Subadd, c),
        Command::Hitting(c) => run(ExperimentKind::Hitting, c),
        Command::Plot(p) => plot(p).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        // Failed checks are results, not errors.
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
