use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;

use burgers::adjoint::{record_and_reverse_with, RecordOptions};
use burgers::bench::{run_benchmark, BenchPlan};
use burgers::fd::{check_gradient, sample_indices, TOLERANCE};
use burgers::{AdjointConfig, SolverConfig, SolverError, Taping};
use partape::logic::TraceSink;

const EXIT_GRADIENT: u8 = 2;
const EXIT_STABILITY: u8 = 3;

/// Solves the coupled Burgers' equations, records the run and computes the
/// gradient of the final L² norm with respect to the initial data.
#[derive(Parser, Debug)]
#[command(name = "burgers", version)]
struct Args {
    /// Cells along x.
    #[arg(long, default_value_t = 64)]
    nx: usize,
    /// Cells along y.
    #[arg(long, default_value_t = 64)]
    ny: usize,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[arg(long, default_value_t = 5e-5)]
    dt: f64,
    /// Edge length L of the domain [0, L]².
    #[arg(long, default_value_t = 1.0)]
    domain_size: f64,
    #[arg(long, default_value_t = 1.0)]
    reynolds: f64,
    /// Team size; with --bench, the largest team size.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, value_enum, default_value_t = AdjointConfig::Atomic)]
    adjoint_mode: AdjointConfig,
    #[arg(long, value_enum, default_value_t = Taping::Statement)]
    taping: Taping,
    /// Compare sampled gradient entries with central differences.
    #[arg(long)]
    check_gradient: bool,
    /// Relative finite-difference step.
    #[arg(long, default_value_t = 1e-6)]
    fd_h: f64,
    /// Number of sampled entries for --check-gradient.
    #[arg(long, default_value_t = 10)]
    samples: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Time all adjoint configurations over 1, 2, 4, … threads.
    #[arg(long)]
    bench: bool,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 5)]
    warmups: usize,
    /// Benchmark CSV output; stdout if absent.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// AD event trace output.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// R=1 on [0,50]², 2000² cells, 20 steps of 1e-4. Overrides the grid
    /// and time flags.
    #[arg(long)]
    paper_scale: bool,
}

impl Args {
    fn solver_config(&self) -> SolverConfig {
        let base = if self.paper_scale {
            SolverConfig::paper_scale()
        } else {
            SolverConfig {
                nx: self.nx,
                ny: self.ny,
                length: self.domain_size,
                dt: self.dt,
                steps: self.steps,
                reynolds: self.reynolds,
                ..SolverConfig::default()
            }
        };
        SolverConfig {
            threads: self.threads,
            adjoint: self.adjoint_mode,
            taping: self.taping,
            ..base
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(code) => code,
        Err(e) => {
            let stability = e.downcast_ref::<SolverError>().is_some_and(|e| match e {
                SolverError::Config(c) => c.is_stability(),
                SolverError::Unstable { .. } => true,
                _ => false,
            });
            eprintln!("error: {e:#}");
            if stability {
                ExitCode::from(EXIT_STABILITY)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(args: &Args) -> anyhow::Result<ExitCode> {
    let cfg = args.solver_config();
    cfg.validate().map_err(SolverError::from)?;

    if args.bench {
        let plan = BenchPlan {
            configs: AdjointConfig::ALL.to_vec(),
            threads: BenchPlan::doubling(cfg.threads),
            reps: args.reps,
            warmups: args.warmups,
        };
        for &t in &plan.threads {
            SolverConfig {
                threads: t,
                adjoint: AdjointConfig::Classical,
                ..cfg.clone()
            }
            .validate()
            .map_err(SolverError::from)?;
        }
        let report = run_benchmark(&cfg, &plan, |row| {
            eprintln!(
                "{:>14} {:>3} {:<7} mean {:.4}s efficiency {:.3}",
                row.config.name(),
                row.threads,
                row.pass.name(),
                row.timing.mean,
                row.efficiency
            );
        })?;
        match &args.csv {
            Some(path) => {
                let file =
                    File::create(path).with_context(|| format!("creating {}", path.display()))?;
                report.write_csv(BufWriter::new(file))?;
            }
            None => report.write_csv(io::stdout().lock())?,
        }
        return Ok(ExitCode::SUCCESS);
    }

    let mut options = RecordOptions::default();
    if let Some(path) = &args.trace {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        options.trace = Some(TraceSink::writer(BufWriter::new(file)));
    }
    let gradient = record_and_reverse_with(&cfg, options)?;
    let norm = gradient.flat().map(|g| g * g).sum::<f64>().sqrt();
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "{}x{} cells, {} steps, dt={:e}, {} threads, {} adjoints",
        cfg.nx, cfg.ny, cfg.steps, cfg.dt, cfg.threads, cfg.adjoint
    )?;
    writeln!(out, "J = {:.15e}", gradient.objective)?;
    writeln!(out, "|dJ/dx0| = {norm:.15e}")?;
    writeln!(
        out,
        "forward {:.4}s, reverse {:.4}s",
        gradient.forward.as_secs_f64(),
        gradient.reverse.as_secs_f64()
    )?;

    if args.check_gradient {
        let samples = sample_indices(&cfg, args.samples, args.seed);
        let check = check_gradient(&cfg, &gradient, &samples, args.fd_h)?;
        writeln!(
            out,
            "{:>12} {:>22} {:>22} {:>10}",
            "entry", "reverse", "fd", "rel"
        )?;
        for row in &check.rows {
            writeln!(
                out,
                "{:>12} {:>22.15e} {:>22.15e} {:>10.2e}",
                row.sample.describe(cfg.nx, cfg.ny),
                row.reverse,
                row.finite_difference,
                row.relative_error
            )?;
        }
        if !check.passed(TOLERANCE) {
            writeln!(
                out,
                "gradient check failed: max relative error {:.2e} >= {TOLERANCE:e}",
                check.max_error()
            )?;
            return Ok(ExitCode::from(EXIT_GRADIENT));
        }
        writeln!(
            out,
            "gradient check passed: max relative error {:.2e}",
            check.max_error()
        )?;
    }
    Ok(ExitCode::SUCCESS)
}
