use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use efr_rom::pipeline::{
    analyze_filter, mc_check, offline, online, run_fom, verify, with_workers, PipelineConfig, PipelineError,
    EXIT_VALIDATION,
};

#[derive(Parser, Debug)]
#[command(name = "efrrom", version, about = "Stabilized reduced-order models with sparse-grid UQ for viscous Burgers")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// key=value configuration file; EFRROM_* variables override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for the per-node loops
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed for the Monte Carlo oracle and randomized checks
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides out.dir)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Keep going when individual online nodes fail
    #[arg(long, global = true)]
    permissive: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One full-order trajectory at fom.y
    Fom,
    /// Training snapshots, POD basis and reduced operators
    Offline,
    /// EFR-ROM sweep over the online collocation grid
    Online,
    /// Filter transfer functions on the reduced stiffness spectrum
    AnalyzeFilter,
    /// Monte Carlo cross-check of the collocation expectation
    McOracle {
        /// Number of Monte Carlo samples (overrides uq.mc_samples)
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Invariant suite with measured values
    Verify,
}

fn load_config(common: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = PipelineConfig::load(common.config.as_deref(), std::env::vars())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    cfg.workers = common.workers.or(cfg.workers);
    cfg.permissive |= common.permissive;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let cfg = load_config(&cli.common)?;
    let workers = cfg.workers;
    with_workers(workers, || dispatch(&cli.command, &cfg))?
}

fn dispatch(command: &Command, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    match command {
        Command::Fom => {
            let dir = run_fom(cfg)?;
            println!("trajectory written to {}", dir.display());
        }
        Command::Offline => {
            let s = offline(cfg)?;
            println!(
                "{} training nodes, {} snapshots, r = {} of rank {}, captured energy {:.6}",
                s.training_nodes, s.snapshots, s.r, s.numerical_rank, s.captured_energy
            );
            println!(
                "timings: fom {:.2}s, pod {:.2}s, operators {:.2}s",
                s.fom_seconds, s.pod_seconds, s.operator_seconds
            );
        }
        Command::Online => {
            let report = online(cfg)?;
            println!(
                "{} online nodes ({} training states reused), {} variants",
                report.grid.len(),
                report.reused_states,
                report.variants.len()
            );
            for e in &report.errors {
                println!("{:<22} window {:.4e}  extended {:.4e}", e.spec.label(), e.window, e.extended);
            }
            if let (Some(g), Some(df), Some(hodf)) = (report.grom_error(), report.best_df(), report.best_hodf()) {
                println!(
                    "best DF {} ({:.2}x better than G-ROM), best HODF {} ({:.2}x)",
                    df.spec.label(),
                    g.window / df.window,
                    hodf.spec.label(),
                    g.window / hodf.window
                );
            }
            for (label, node, msg) in &report.failures {
                eprintln!("failed: {label} at node {node}: {msg}");
            }
            println!(
                "timings: start states {:.2}s, rom {:.2}s, reference {:.2}s",
                report.start_state_seconds, report.rom_seconds, report.reference_seconds
            );
        }
        Command::AnalyzeFilter => {
            let table = analyze_filter(cfg)?;
            let rows = table.as_str().lines().count().saturating_sub(1);
            println!(
                "{rows} eigenvalues written to {}",
                cfg.out_dir.join("analysis").join("filter_transfer.csv").display()
            );
        }
        Command::McOracle { samples } => {
            let n = samples.unwrap_or(cfg.mc_samples);
            let r = mc_check(cfg, n, cfg.seed)?;
            println!(
                "energy at t = {}: monte carlo {:.8e} +- {:.2e} ({} samples), collocation {:.8e}, {:.2} standard errors apart",
                r.time,
                r.monte_carlo.mean,
                r.monte_carlo.std_error,
                r.monte_carlo.samples,
                r.collocation,
                r.z_score()
            );
        }
        Command::Verify => {
            let report = verify(cfg)?;
            println!("{report}");
            if !report.all_passed() {
                return Err(PipelineError::Verification {
                    failed: report.failed(),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
