//! `stoheat` — experiment driver for the stochastic heat equation lab.
//!
//! Subcommands: `verify` (randomized identity suite), `moments` (closed
//! forms and bounds on a grid), `simulate` (seeded ensembles), `holder`
//! (structure-function exponent fits), `weaklimit` (initial-condition
//! diagnostic). Identical configs and seeds yield byte-identical primary
//! artifacts regardless of `--threads`.

mod config;

use clap::{Args, Parser, Subcommand};
use config::{HolderConfig, MomentKind, MomentsConfig, SimulateConfig, WeakLimitConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use stoheat::artifact::{self, SweepRow};
use stoheat::error::Error;
use stoheat::estimator;
use stoheat::moments::{self, MomentKernel};
use stoheat::quad::QuadratureSpec;
use stoheat::simulate::{simulate_batch, NoiseSeed};

#[derive(Parser)]
#[command(name = "stoheat", version, about = "Stochastic heat equation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON configuration document.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Artifact data format.
    #[arg(long, default_value = "both", value_parser = ["csv", "json", "both"])]
    format: String,
    /// Worker threads (0 = auto). Must not affect results.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run the randomized kernel/identity suite and write a JSON report.
    Verify {
        /// Trials per check.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Perturb one identity to prove the suite trips.
        #[arg(long, default_value_t = false)]
        inject_fault: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Sweep exact/bounding moment formulas over a (t, x) grid.
    Moments(CommonArgs),
    /// Simulate a seeded ensemble and export it.
    Simulate(CommonArgs),
    /// Fit Holder exponents from ensemble structure functions.
    Holder(CommonArgs),
    /// Estimate the weak initial-condition error sequence.
    Weaklimit(CommonArgs),
}

/// Exit policy: 1 validation, 2 numerical failure, 3 acceptance violation.
fn exit_for(err: &Error) -> ExitCode {
    match err {
        Error::Domain { .. } | Error::InvalidInput(_) | Error::Io(_) | Error::Serde(_) => {
            ExitCode::from(1)
        }
        Error::QuadratureNonConvergence { .. }
        | Error::NumericalFailure { .. }
        | Error::FitFailure(_) => ExitCode::from(2),
    }
}

fn fail(err: Error) -> ExitCode {
    eprintln!("error: {err}");
    exit_for(&err)
}

fn load_config<C: serde::de::DeserializeOwned>(path: &Path) -> stoheat::Result<C> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn with_pool<T>(threads: usize, f: impl FnOnce() -> T + Send) -> T
where
    T: Send,
{
    if threads == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
            .install(f)
    }
}

fn write_meta<C: serde::Serialize + Clone>(
    out: &Path,
    stem: &str,
    config: &C,
) -> stoheat::Result<String> {
    let (id, meta) = config::run_meta(config)?;
    let path = out.join(format!("{stem}_meta.json"));
    artifact::atomic_write(&path, serde_json::to_string_pretty(&meta)?.as_bytes())?;
    Ok(id)
}

fn cmd_verify(
    trials: usize,
    inject_fault: bool,
    seed: Option<u64>,
    out: &Path,
    threads: usize,
) -> stoheat::Result<bool> {
    let seed = seed.unwrap_or(0x73746f_68656174);
    let spec = QuadratureSpec::default();
    let report = with_pool(threads, || {
        stoheat::verify::run_suite(seed, trials, inject_fault, &spec)
    })?;
    for c in &report.checks {
        println!(
            "{}: {} (trials {}, max violation {:.3e}, tolerance {:.1e})",
            c.id,
            if c.pass { "pass" } else { "FAIL" },
            c.trials,
            c.max_violation.max(0.0),
            c.tolerance
        );
    }
    artifact::atomic_write(
        &out.join("verify_report.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    Ok(report.all_pass)
}

fn cmd_moments(args: &CommonArgs) -> stoheat::Result<()> {
    let mut cfg: MomentsConfig = load_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let spec = cfg.quadrature.unwrap_or_default();
    if cfg.t_values.is_empty() || cfg.x_values.is_empty() || cfg.kinds.is_empty() {
        return Err(Error::InvalidInput(
            "moments config: t_values, x_values and kinds must be non-empty".into(),
        ));
    }

    let mut rows: Vec<SweepRow> = Vec::new();
    for kind in &cfg.kinds {
        match kind {
            MomentKind::ExactSecond => {
                let (lambda, rho_bar) = cfg.rho.quasi_linear_params().ok_or_else(|| {
                    Error::InvalidInput(
                        "moments config: kinds[exact_second] requires rho.kind = quasi_linear"
                            .into(),
                    )
                })?;
                let mk = MomentKernel::new(cfg.nu, lambda)?;
                for &t in &cfg.t_values {
                    for &x in &cfg.x_values {
                        rows.push(SweepRow {
                            t,
                            x,
                            value: moments::exact_second_moment(
                                &cfg.measure,
                                &mk,
                                rho_bar,
                                t,
                                x,
                                &spec,
                            )?,
                            kind: kind.column_label(),
                        });
                    }
                }
            }
            MomentKind::PUpper { p } => {
                for &t in &cfg.t_values {
                    for &x in &cfg.x_values {
                        rows.push(SweepRow {
                            t,
                            x,
                            value: moments::pmoment_upper_bound(
                                &cfg.measure,
                                &cfg.rho,
                                cfg.nu,
                                *p,
                                t,
                                x,
                                &spec,
                            )?,
                            kind: kind.column_label(),
                        });
                    }
                }
            }
            MomentKind::DeltaI => {
                let (lambda, _) = cfg.rho.quasi_linear_params().ok_or_else(|| {
                    Error::InvalidInput(
                        "moments config: kinds[delta_i] requires rho.kind = quasi_linear".into(),
                    )
                })?;
                let (loc, w) = cfg.measure.as_single_atom().ok_or_else(|| {
                    Error::InvalidInput(
                        "moments config: kinds[delta_i] requires measure = single atom".into(),
                    )
                })?;
                let mk = MomentKernel::new(cfg.nu, lambda)?;
                for &t in &cfg.t_values {
                    for &x in &cfg.x_values {
                        rows.push(SweepRow {
                            t,
                            x,
                            value: w * w * moments::delta_i_second_moment(&mk, t, x - loc)?,
                            kind: kind.column_label(),
                        });
                    }
                }
            }
        }
    }

    write_meta(&args.out, "moments", &cfg)?;
    if args.format != "json" {
        artifact::atomic_write(&args.out.join("moments.csv"), artifact::sweep_csv(&rows).as_bytes())?;
    }
    if args.format != "csv" {
        artifact::atomic_write(
            &args.out.join("moments.json"),
            serde_json::to_string_pretty(&rows)?.as_bytes(),
        )?;
    }
    println!("moments: wrote {} rows", rows.len());
    Ok(())
}

fn cmd_simulate(args: &CommonArgs) -> stoheat::Result<()> {
    let mut cfg: SimulateConfig = load_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let spec = cfg.quadrature.unwrap_or_default();
    let seed = NoiseSeed::new(cfg.seed);

    let mut csv = String::from("replica,t_index,x_index,value\n");
    let mut axes_json: Option<String> = None;
    let mut done = 0;
    while done < cfg.replicas {
        let take = cfg.batch.max(1).min(cfg.replicas - done);
        let ens = simulate_batch(&cfg.measure, &cfg.rho, &cfg.grid, seed, done, take, &spec)?;
        let body = artifact::ensemble_csv(&ens);
        csv.push_str(body.split_once('\n').map(|(_, b)| b).unwrap_or(""));
        if axes_json.is_none() {
            axes_json = Some(artifact::ensemble_axes_json(&ens)?);
        }
        done += take;
    }

    write_meta(&args.out, "ensemble", &cfg)?;
    artifact::atomic_write(&args.out.join("ensemble.csv"), csv.as_bytes())?;
    if let Some(axes) = axes_json {
        artifact::atomic_write(&args.out.join("ensemble_axes.json"), axes.as_bytes())?;
    }
    println!("simulate: wrote {} replicas", cfg.replicas);
    Ok(())
}

fn cmd_holder(args: &CommonArgs) -> stoheat::Result<()> {
    let mut cfg: HolderConfig = load_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let spec = cfg.quadrature.unwrap_or_default();
    let (table, estimate) = estimator::increment_study(
        &cfg.measure,
        &cfg.rho,
        &cfg.grid,
        NoiseSeed::new(cfg.seed),
        cfg.replicas,
        cfg.batch,
        cfg.p,
        cfg.field,
        cfg.direction,
        cfg.mode,
        &cfg.lags,
        &spec,
    )?;

    write_meta(&args.out, "holder", &cfg)?;
    if args.format != "json" {
        artifact::atomic_write(
            &args.out.join("holder_lags.csv"),
            artifact::lag_table_csv(&table).as_bytes(),
        )?;
    }
    artifact::atomic_write(
        &args.out.join("holder_estimate.json"),
        artifact::estimate_json(&estimate)?.as_bytes(),
    )?;
    println!(
        "holder: exponent {:.4} +- {:.4} (r^2 {:.4})",
        estimate.exponent, estimate.std_error, estimate.r_squared
    );
    Ok(())
}

fn cmd_weaklimit(args: &CommonArgs) -> stoheat::Result<()> {
    let mut cfg: WeakLimitConfig = load_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let spec = cfg.quadrature.unwrap_or_default();
    let points = estimator::weak_limit_error(
        &cfg.measure,
        &cfg.rho,
        &cfg.grid,
        &cfg.phi,
        &cfg.t_list,
        NoiseSeed::new(cfg.seed),
        cfg.replicas,
        cfg.batch,
        &spec,
    )?;

    write_meta(&args.out, "weaklimit", &cfg)?;
    if args.format != "json" {
        artifact::atomic_write(
            &args.out.join("weaklimit.csv"),
            artifact::weak_limit_csv(&points).as_bytes(),
        )?;
    }
    if args.format != "csv" {
        artifact::atomic_write(
            &args.out.join("weaklimit.json"),
            serde_json::to_string_pretty(&points)?.as_bytes(),
        )?;
    }
    for p in &points {
        println!("weaklimit: t {:.4} error^2 {:.6e}", p.t, p.error_sq);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Verify {
            trials,
            inject_fault,
            seed,
            out,
            threads,
        } => match cmd_verify(trials, inject_fault, seed, &out, threads) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => {
                eprintln!("verify: at least one check failed");
                ExitCode::from(3)
            }
            Err(e) => fail(e),
        },
        Command::Moments(args) => {
            match with_pool(args.threads, || cmd_moments(&args)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(e),
            }
        }
        Command::Simulate(args) => {
            match with_pool(args.threads, || cmd_simulate(&args)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(e),
            }
        }
        Command::Holder(args) => {
            match with_pool(args.threads, || cmd_holder(&args)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(e),
            }
        }
        Command::Weaklimit(args) => {
            match with_pool(args.threads, || cmd_weaklimit(&args)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(e),
            }
        }
    }
}
