use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use truncldp::constants::{theorem2_constant, Bounded, CkSolver};
use truncldp::distributions::{check_assumption, AssumptionCheck, HeavyTailLaw};
use truncldp::estimators::{
    auto_tilt, crude_mc_tail_with, forced_jump_is_with, lattice_convolution_tail,
    LatticeDistribution, TailMode,
};
use truncldp::harness::{convergence_diagnostics, run_experiment, write_csv, write_outputs, ExperimentPlan};
use truncldp::model::ModelConfig;
use truncldp::parallel::Execution;
use truncldp::stable::{limit_law_for, positive_part_moment_with, LimitLaw, MomentMethod};

const DEFAULT_SEED: u64 = 20_240_601;

/// Truncated heavy-tailed row sums: constants, simulation and rate checks.
#[derive(Parser, Debug)]
#[command(name = "truncldp", version)]
struct Cli {
    /// Master seed; overrides the seed stored in a plan.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Destination file; stdout when absent.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Run on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Limit-law moments or the recursive constants c_k.
    Constants(ConstantsArgs),
    /// One estimate of P(S_n > threshold).
    Simulate(SimulateArgs),
    /// Sweep n from a plan, compare estimates with predicted rates.
    Verify(VerifyArgs),
    /// Uniform tail-increment check of a law.
    CheckAssumption(CheckArgs),
}

#[derive(Args, Debug)]
struct ConstantsArgs {
    /// `normal`, `stable`, or a JSON limit-law descriptor.
    #[arg(long)]
    limit_law: Option<String>,
    #[arg(long, default_value_t = 1)]
    k: u32,
    #[arg(long)]
    alpha: Option<f64>,
    /// Right-tail balance of the stable law.
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long)]
    variance: Option<f64>,
    /// Monte Carlo draws for stable moments.
    #[arg(long, default_value_t = 10_000_000)]
    samples: u64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// CSV with the table of c_{k+1} on [k, k+1].
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Method {
    Crude,
    ForcedJump,
    Convolution,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// ModelConfig JSON file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    n: u64,
    #[arg(long, default_value_t = 100_000)]
    reps: u64,
    #[arg(long, value_enum, default_value_t = Method::Crude)]
    method: Method,
    /// Defaults to k M_n.
    #[arg(long)]
    threshold: Option<f64>,
    /// Number of forced entries; defaults to k.
    #[arg(long)]
    j: Option<usize>,
    /// Forced entries exceed this fraction of M_n.
    #[arg(long, default_value_t = 0.4)]
    floor_fraction: f64,
    /// Cell width relative to M_n when discretizing a continuous law.
    #[arg(long, default_value_t = 1e-3)]
    relative_step: f64,
    /// Spacing of a lattice law.
    #[arg(long)]
    lattice_step: Option<f64>,
    /// Writes the truncated lattice c.d.f. used by the convolution method.
    #[arg(long)]
    dump_cdf: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// ExperimentPlan JSON file.
    #[arg(long)]
    plan: PathBuf,
    /// Run even if the schedule check fails.
    #[arg(long)]
    force: bool,
    /// Also write (log n, log estimate, log predicted) triples.
    #[arg(long)]
    emit_plot_data: bool,
    /// Require |ratio - 1| to decrease over the last three rows.
    #[arg(long)]
    require_decreasing: bool,
    /// Require the final ratio inside [LO, HI].
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    ratio_band: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    /// Law descriptor: inline JSON or `@file.json`.
    #[arg(long)]
    law: String,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 0.5)]
    u0: f64,
    #[arg(long, default_value_t = 10.0)]
    tmin: f64,
    #[arg(long, default_value_t = 1e6)]
    tmax: f64,
    #[arg(long, default_value_t = 32)]
    tpoints: usize,
    /// Side of the (a, b) lattice.
    #[arg(long, default_value_t = 64)]
    lattice: usize,
}

/// Exit status: 0 when every requested validation passed, 1 when one
/// failed, 2 on errors.
fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match &cli.command {
        Command::Constants(a) => constants(&cli, a, exec),
        Command::Simulate(a) => simulate(&cli, a, exec),
        Command::Verify(a) => verify(&cli, a, exec),
        Command::CheckAssumption(a) => check(&cli, a),
    }
}

fn emit<T: Serialize>(output: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match output {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => tolerate_closed_pipe(writeln!(std::io::stdout().lock(), "{text}")),
    }
}

/// A reader that stops early (`| head`) is not an error.
fn tolerate_closed_pipe(r: std::io::Result<()>) -> Result<()> {
    match r {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn read_text(arg: &str) -> Result<String> {
    match arg.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path).with_context(|| format!("reading {path}")),
        None => Ok(arg.to_string()),
    }
}

fn constants(cli: &Cli, a: &ConstantsArgs, exec: Execution) -> Result<bool> {
    if let Some(spec) = &a.limit_law {
        let law = parse_limit_law(spec, a)?;
        let method = match law {
            LimitLaw::Normal { .. } => MomentMethod::ClosedForm,
            LimitLaw::Stable { .. } => MomentMethod::MonteCarlo {
                samples: a.samples,
                seed: cli.seed.unwrap_or(DEFAULT_SEED),
            },
        };
        let est = positive_part_moment_with(&law, a.k, method, exec)?;
        emit(
            cli.output.as_deref(),
            &json!({ "limit_law": law, "k": a.k, "moment": est.value, "stderr": est.stderr, "estimate": est }),
        )?;
        return Ok(true);
    }
    let alpha = a.alpha.context("--alpha is required")?;
    let k = a.k as usize;
    let mut solver = CkSolver::new(alpha, a.tol)?.with_execution(exec);
    let next: Bounded = solver.value(k + 1, k as f64)?;
    let t2 = theorem2_constant(k, alpha, a.tol)?;
    if let Some(path) = &a.table {
        let table = solver.table(k + 1)?;
        let mut w = BufWriter::new(File::create(path)?);
        table.write_csv(&mut w)?;
        w.flush()?;
    }
    let ok = next.error_bound <= a.tol && t2.error_bound <= a.tol;
    emit(
        cli.output.as_deref(),
        &json!({
            "k": k,
            "alpha": alpha,
            "tol": a.tol,
            "ck_next_at_k": next,
            "theorem2_constant": t2,
        }),
    )?;
    Ok(ok)
}

fn parse_limit_law(spec: &str, a: &ConstantsArgs) -> Result<LimitLaw> {
    let spec = spec.trim();
    if spec.starts_with('{') || spec.starts_with('@') {
        let text = read_text(spec)?;
        return serde_json::from_str(&text).context("parsing the limit-law descriptor");
    }
    match spec {
        "normal" => Ok(LimitLaw::normal(a.variance.context("--variance is required")?)?),
        "stable" => {
            let alpha = a.alpha.context("--alpha is required")?;
            Ok(limit_law_for(alpha, a.p, None)?)
        }
        other => bail!("unknown limit law `{other}`; use normal, stable or a JSON descriptor"),
    }
}

fn simulate(cli: &Cli, a: &SimulateArgs, exec: Execution) -> Result<bool> {
    let text = std::fs::read_to_string(&a.config)
        .with_context(|| format!("reading {}", a.config.display()))?;
    let config = ModelConfig::from_json(&text)?;
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let m = config.m_n(a.n);
    let threshold = a.threshold.unwrap_or(config.k as f64 * m);
    let n = usize::try_from(a.n).context("n does not fit in memory indices")?;
    let est = match a.method {
        Method::Crude => crude_mc_tail_with(&config.law, m, n, threshold, a.reps, seed, exec)?,
        Method::ForcedJump => {
            let j = a.j.unwrap_or(config.k as usize);
            forced_jump_is_with(
                &config.law,
                m,
                n,
                threshold,
                j,
                a.floor_fraction * m,
                a.reps,
                seed,
                exec,
            )?
        }
        Method::Convolution => {
            let (lat, mode) = match (&config.law, a.lattice_step) {
                (HeavyTailLaw::Lattice(_), Some(h)) => (
                    LatticeDistribution::from_truncated_lattice(&config.law, m, h)?,
                    TailMode::Strict,
                ),
                (HeavyTailLaw::Lattice(_), None) => bail!("--lattice-step is required for lattice laws"),
                _ => (
                    LatticeDistribution::discretize(&config.law, m, a.relative_step * m)?,
                    TailMode::Interpolated,
                ),
            };
            if let Some(p) = &a.dump_cdf {
                let mut w = BufWriter::new(File::create(p)?);
                lat.write_cdf_csv(&mut w)?;
                w.flush()?;
            }
            let theta = auto_tilt(&lat, n, threshold);
            let r = lattice_convolution_tail(&lat, n, threshold, theta, mode)?;
            let mut e = truncldp::estimators::Estimate::exact(r.probability, "convolution");
            e.bias_bound = r.rel_accuracy * r.probability;
            e
        }
    };
    emit(
        cli.output.as_deref(),
        &json!({ "n": a.n, "M_n": m, "threshold": threshold, "estimate": est }),
    )?;
    Ok(true)
}

fn verify(cli: &Cli, a: &VerifyArgs, exec: Execution) -> Result<bool> {
    let text = std::fs::read_to_string(&a.plan)
        .with_context(|| format!("reading {}", a.plan.display()))?;
    let mut plan = ExperimentPlan::from_json(&text)?;
    if let Some(s) = cli.seed {
        plan.master_seed = s;
    }
    plan.force |= a.force;
    plan.execution = exec;
    let output = cli
        .output
        .clone()
        .or_else(|| plan.output_path.as_ref().map(PathBuf::from));
    let run = run_experiment(&plan)?;
    let diag = convergence_diagnostics(&run.rows).ok();
    if let Some(path) = &output {
        write_outputs(path, &plan, &run, diag.as_ref(), a.emit_plot_data)?;
    } else {
        tolerate_closed_pipe(write_csv(&run.rows, std::io::stdout().lock()))?;
    }
    let mut ok = run.schedule.passed;
    let mut failures: Vec<String> = run.schedule.failures.clone();
    if a.require_decreasing || a.ratio_band.is_some() {
        match &diag {
            None => {
                ok = false;
                failures.push("fewer than three rows carry ratios".into());
            }
            Some(d) => {
                if a.require_decreasing && !d.decreasing_deviation {
                    ok = false;
                    failures.push(format!("|ratio - 1| not decreasing: {:?}", d.deviations));
                }
                if let Some(band) = &a.ratio_band {
                    if !d.final_within(band[0], band[1]) {
                        ok = false;
                        failures.push(format!(
                            "final ratio {} outside [{}, {}]",
                            d.final_ratio, band[0], band[1]
                        ));
                    }
                }
            }
        }
    }
    let summary = json!({ "passed": ok, "forced": run.forced, "failures": failures, "diagnostics": diag });
    eprintln!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ok)
}

fn check(cli: &Cli, a: &CheckArgs) -> Result<bool> {
    let law = HeavyTailLaw::from_json(&read_text(&a.law)?)?;
    let mut cfg = AssumptionCheck::geometric(a.tmin, a.tmax, a.tpoints, a.u0, a.delta);
    cfg.lattice = a.lattice;
    let report = check_assumption(&law, &cfg)?;
    emit(cli.output.as_deref(), &report)?;
    Ok(report.passed)
}
