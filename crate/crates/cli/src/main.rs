use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use finsler_dix::experiment::{
    demo, files, run_forward, run_invert, run_recover_metric, run_report, ComparisonReport, ExperimentConfig,
    ToleranceProfile,
};
use finsler_dix::DixError;

/// Sphere-data experiments: forward synthesis, inversion, metric recovery and reports.
#[derive(Debug, Parser)]
#[command(name = "dix", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration; defaults to OUT/config.ini written by `forward`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "dix-out")]
    out: PathBuf,
    /// Audit data access and reject reads outside I0 during inversion.
    #[arg(long, global = true)]
    strict_data: bool,
    #[arg(long, global = true, value_enum)]
    tolerance_profile: Option<Profile>,
    /// Seed for the randomized checks (gauge factor, Q invariance samples).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Profile {
    Tight,
    Default,
    Loose,
}

impl From<Profile> for ToleranceProfile {
    fn from(p: Profile) -> Self {
        match p {
            Profile::Tight => ToleranceProfile::Tight,
            Profile::Default => ToleranceProfile::Default,
            Profile::Loose => ToleranceProfile::Loose,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize the data grid and the sealed truth file.
    Forward,
    /// Reconstruct curvature and Jacobi fields from the data grid.
    Invert,
    /// Assemble the metric in surface normal coordinates.
    RecoverMetric,
    /// Compare the results against the truth.
    Report,
    /// Run all stages for every catalog chart.
    Demo,
}

/// 0 pass, 1 tolerance failure, 2 input error, 3 solver failure.
fn exit_code(e: &DixError) -> u8 {
    match e {
        DixError::Config(_)
        | DixError::Parse { .. }
        | DixError::Io(_)
        | DixError::Dimension(_)
        | DixError::Domain(_) => 2,
        DixError::Model { .. }
        | DixError::Integration { .. }
        | DixError::Initialization { .. }
        | DixError::Solver { .. }
        | DixError::DegenerateMetric { .. }
        | DixError::Hygiene(_) => 3,
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, DixError> {
    let path = common.config.clone().unwrap_or_else(|| common.out.join(files::CONFIG));
    let text = std::fs::read_to_string(&path).map_err(|e| DixError::Io(format!("{}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::parse(&text).map_err(|e| match e {
        DixError::Parse { line, message } => DixError::Parse { line, message: format!("{}: {message}", path.display()) },
        other => other,
    })?;
    if common.strict_data {
        cfg.strict_data = true;
    }
    if let Some(p) = common.tolerance_profile {
        cfg.profile = p.into();
    }
    Ok(cfg)
}

fn ensure_dir(out: &Path) -> Result<(), DixError> {
    std::fs::create_dir_all(out).map_err(|e| DixError::Io(format!("{}: {e}", out.display())))
}

fn verdict(reports: &[ComparisonReport]) -> u8 {
    for r in reports {
        print!("{}", r.summary());
    }
    u8::from(!reports.iter().all(ComparisonReport::passed))
}

fn run(cli: &Cli) -> Result<u8, DixError> {
    let c = &cli.common;
    match cli.command {
        Command::Forward => {
            let cfg = load_config(c)?;
            ensure_dir(&c.out)?;
            let s = run_forward(&cfg, &c.out)?;
            println!(
                "{}: grid {} x {} ({} invalid cells) written to {}",
                cfg.name,
                s.r_count,
                s.t_count,
                s.invalid_cells,
                c.out.join(files::GRID).display()
            );
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            Ok(0)
        }
        Command::Invert => {
            let cfg = load_config(c)?;
            let s = run_invert(&cfg, &c.out, c.seed)?;
            let d = &s.result.diagnostics;
            println!(
                "{}: {} blocks, {} conjugate pairs, max contraction {:.3e}",
                cfg.name,
                d.blocks.len(),
                s.result.conjugates.len(),
                d.max_contraction
            );
            if let Some(h) = d.hygiene {
                println!("data access: {} reads, {} outside I0", h.reads, h.violations);
            }
            for w in &d.warnings {
                eprintln!("warning: {w}");
            }
            Ok(0)
        }
        Command::RecoverMetric => {
            let cfg = load_config(c)?;
            let metric = run_recover_metric(&cfg, &c.out)?;
            let focal: Vec<String> = metric.focal_sets.iter().flatten().map(|t| format!("{t:.6}")).collect();
            println!("{}: metric at {} times, focal times [{}]", cfg.name, metric.t_grid.len(), focal.join(", "));
            Ok(0)
        }
        Command::Report => {
            let cfg = load_config(c)?;
            Ok(verdict(&[run_report(&cfg, &c.out, c.seed)?]))
        }
        Command::Demo => {
            ensure_dir(&c.out)?;
            let profile = c.tolerance_profile.map(Into::into).unwrap_or_default();
            Ok(verdict(&demo(&c.out, profile, c.strict_data, c.seed)?))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
