//! Configuration-driven sweeps over `n`: predicted rate, estimate, ratio.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::constants::{
    theorem1_constant, theorem1_rate_with, theorem2_constant, theorem2_rate_with, Bounded,
};
use crate::distributions::HeavyTailLaw;
use crate::error::{invalid, Error, Result};
use crate::estimators::{
    auto_tilt, crude_mc_tail_with, forced_jump_is_with, lattice_convolution_tail, Estimate,
    LatticeDistribution, TailMode,
};
use crate::model::{validate_schedule_with, ModelConfig, Regime, ScheduleReport,
    DEFAULT_GROWTH_THRESHOLD};
use crate::parallel::{derived_seed, Execution};
use crate::stable::{limit_law_for, LimitLaw, MomentMethod};

/// Estimator run at every `n`, for the event `S_n > k M_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum EstimatorSpec {
    /// Rates only.
    None,
    Crude { reps: u64 },
    /// Forces `j` entries above `floor_fraction * M_n`.
    ForcedJump { reps: u64, j: usize, floor_fraction: f64 },
    /// Lattice laws use their own spacing `lattice_step`; continuous laws
    /// are discretized with step `relative_step * M_n`.
    Convolution {
        #[serde(default)]
        lattice_step: Option<f64>,
        #[serde(default = "default_relative_step")]
        relative_step: f64,
    },
}

fn default_relative_step() -> f64 {
    1e-3
}

fn default_tol() -> f64 {
    1e-8
}

fn default_growth() -> f64 {
    DEFAULT_GROWTH_THRESHOLD
}

fn default_moment_samples() -> u64 {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub config: ModelConfig,
    pub n_values: Vec<u64>,
    pub estimator: EstimatorSpec,
    #[serde(default = "default_tol")]
    pub tol: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub output_path: Option<String>,
    /// Run even when the schedule check fails; rows are marked.
    #[serde(default)]
    pub force: bool,
    /// Samples for the Monte Carlo stable moment.
    #[serde(default = "default_moment_samples")]
    pub moment_samples: u64,
    #[serde(default = "default_growth")]
    pub growth_threshold: f64,
    #[serde(default)]
    pub execution: Execution,
}

impl ExperimentPlan {
    pub fn new(config: ModelConfig, n_values: Vec<u64>, estimator: EstimatorSpec, seed: u64) -> Self {
        ExperimentPlan {
            config,
            n_values,
            estimator,
            tol: default_tol(),
            master_seed: seed,
            output_path: None,
            force: false,
            moment_samples: default_moment_samples(),
            growth_threshold: DEFAULT_GROWTH_THRESHOLD,
            execution: Execution::default(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let plan: ExperimentPlan =
            serde_json::from_str(s).map_err(|e| invalid("plan", e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.n_values.is_empty()
            || self.n_values[0] == 0
            || self.n_values.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(invalid("n_values", "must be nonempty, positive and increasing"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol", "must be positive"));
        }
        match self.estimator {
            EstimatorSpec::None => {}
            EstimatorSpec::Crude { reps } => {
                if reps == 0 {
                    return Err(invalid("reps", "need at least one replication"));
                }
            }
            EstimatorSpec::ForcedJump {
                reps,
                j,
                floor_fraction,
            } => {
                if reps == 0 {
                    return Err(invalid("reps", "need at least one replication"));
                }
                if j == 0 || self.n_values.iter().any(|&n| j as u64 > n) {
                    return Err(invalid("j", "need 1 <= j <= n for every n"));
                }
                if !(floor_fraction > 0.0 && floor_fraction < 1.0) {
                    return Err(invalid("floor_fraction", "must lie in (0, 1)"));
                }
            }
            EstimatorSpec::Convolution {
                lattice_step,
                relative_step,
            } => match (&self.config.law, lattice_step) {
                (HeavyTailLaw::Lattice(_), None) => {
                    return Err(invalid("lattice_step", "required for lattice laws"));
                }
                (HeavyTailLaw::Lattice(_), Some(h)) if !(h > 0.0) => {
                    return Err(invalid("lattice_step", "must be positive"));
                }
                (_, _) if !(relative_step > 0.0 && relative_step < 1.0) => {
                    return Err(invalid("relative_step", "must lie in (0, 1)"));
                }
                _ => {}
            },
        }
        Ok(())
    }
}

/// Named multiplicative factor of a predicted rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub n: u64,
    pub m_n: f64,
    pub threshold: f64,
    pub predicted_rate: f64,
    /// The factors whose product is `predicted_rate`.
    pub factors: Vec<Factor>,
    pub estimate: Option<Estimate>,
    /// `estimate / predicted_rate`, when both exist and the rate is positive.
    pub ratio: Option<f64>,
    /// Combines the estimate's standard error with that of the constant.
    pub ratio_stderr: Option<f64>,
    pub schedule_ok: bool,
    pub forced: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ResultRow {
    /// A row with the ratio filled in; `rate_rel_stderr` is the relative
    /// standard error of the predicted rate.
    pub fn new(
        n: u64,
        m_n: f64,
        threshold: f64,
        predicted_rate: f64,
        rate_rel_stderr: f64,
        estimate: Option<Estimate>,
    ) -> Self {
        let (ratio, ratio_stderr) = match &estimate {
            Some(e) if predicted_rate > 0.0 => {
                let r = e.value / predicted_rate;
                let rel = if e.value != 0.0 { e.stderr / e.value } else { 0.0 };
                let se = if e.value != 0.0 {
                    r.abs() * (rel * rel + rate_rel_stderr * rate_rel_stderr).sqrt()
                } else {
                    e.stderr / predicted_rate
                };
                (Some(r), Some(se))
            }
            _ => (None, None),
        };
        let warnings = estimate.as_ref().map(|e| e.warnings.clone()).unwrap_or_default();
        ResultRow {
            n,
            m_n,
            threshold,
            predicted_rate,
            factors: Vec::new(),
            estimate,
            ratio,
            ratio_stderr,
            schedule_ok: true,
            forced: false,
            warnings,
        }
    }

    pub fn factor_product(&self) -> f64 {
        self.factors.iter().map(|f| f.value).product()
    }
}

/// The constant of the rate formula used by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "theorem", rename_all = "snake_case")]
pub enum RateConstant {
    First { limit_law: LimitLaw, constant: Estimate },
    Second { constant: Bounded },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub schedule: ScheduleReport,
    pub forced: bool,
    pub constant: RateConstant,
    pub rows: Vec<ResultRow>,
}

fn moment_method(limit: &LimitLaw, plan: &ExperimentPlan) -> MomentMethod {
    match limit {
        LimitLaw::Normal { .. } => MomentMethod::ClosedForm,
        LimitLaw::Stable { .. } => MomentMethod::MonteCarlo {
            samples: plan.moment_samples,
            seed: derived_seed(plan.master_seed, u64::MAX),
        },
    }
}

/// Runs the plan: schedule check, rate constant, then one row per `n`.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentRun> {
    plan.validate()?;
    let cfg = &plan.config;
    let schedule = validate_schedule_with(cfg, &plan.n_values, plan.growth_threshold)?;
    if !schedule.passed && !plan.force {
        return Err(Error::ScheduleRejected(format!(
            "{}; report: {}",
            schedule.failures.join("; "),
            serde_json::to_string(&schedule).unwrap_or_default()
        )));
    }
    let forced = !schedule.passed;
    let alpha = cfg.law.alpha();
    let k = cfg.k;
    let constant = match cfg.regime {
        Regime::AlphaGeK => {
            let limit = limit_law_for(alpha, cfg.law.balance_p(), cfg.law.variance())?;
            let method = moment_method(&limit, plan);
            let c = theorem1_constant(k, alpha, &limit, method)?;
            RateConstant::First {
                limit_law: limit,
                constant: c,
            }
        }
        Regime::AlphaSmall => RateConstant::Second {
            constant: theorem2_constant(k as usize, alpha, plan.tol)?,
        },
    };
    let mut rows = Vec::with_capacity(plan.n_values.len());
    for &n in &plan.n_values {
        let m = cfg.m_n(n);
        let threshold = k as f64 * m;
        let (rate, rel, factors) = match &constant {
            RateConstant::First { constant, .. } => {
                let r = theorem1_rate_with(k, alpha, &cfg.law, n, m, constant.clone())?;
                let rel = if r.constant.value > 0.0 {
                    r.constant.stderr / r.constant.value
                } else {
                    0.0
                };
                let f = vec![
                    factor("c_n^k", r.c_n_power),
                    factor("n^k", r.n_power),
                    factor("M_n^-k", r.m_power),
                    factor("tail(M_n)^k", r.tail_power),
                    factor("constant", r.constant.value),
                ];
                (r.rate, rel, f)
            }
            RateConstant::Second { constant } => {
                let r = theorem2_rate_with(k as usize, &cfg.law, n, m, *constant)?;
                let f = vec![
                    factor("constant", r.constant.value),
                    factor("n^(k+1)", r.n_power),
                    factor("tail(M_n)^(k+1)", r.tail_power),
                ];
                (r.rate, 0.0, f)
            }
        };
        let seed = derived_seed(plan.master_seed, n);
        let estimate = run_estimator(plan, n, m, threshold, seed)?;
        let mut row = ResultRow::new(n, m, threshold, rate, rel, estimate);
        row.factors = factors;
        row.schedule_ok = schedule.passed;
        row.forced = forced;
        rows.push(row);
    }
    Ok(ExperimentRun {
        schedule,
        forced,
        constant,
        rows,
    })
}

fn factor(name: &str, value: f64) -> Factor {
    Factor {
        name: name.to_string(),
        value,
    }
}

fn run_estimator(
    plan: &ExperimentPlan,
    n: u64,
    m: f64,
    threshold: f64,
    seed: u64,
) -> Result<Option<Estimate>> {
    let law = &plan.config.law;
    let exec = plan.execution;
    let n_us = n as usize;
    Ok(match plan.estimator {
        EstimatorSpec::None => None,
        EstimatorSpec::Crude { reps } => {
            Some(crude_mc_tail_with(law, m, n_us, threshold, reps, seed, exec)?)
        }
        EstimatorSpec::ForcedJump {
            reps,
            j,
            floor_fraction,
        } => Some(forced_jump_is_with(
            law,
            m,
            n_us,
            threshold,
            j,
            floor_fraction * m,
            reps,
            seed,
            exec,
        )?),
        EstimatorSpec::Convolution {
            lattice_step,
            relative_step,
        } => {
            let (lat, mode, note) = match (law, lattice_step) {
                (HeavyTailLaw::Lattice(_), Some(h)) => (
                    LatticeDistribution::from_truncated_lattice(law, m, h)?,
                    TailMode::Strict,
                    "exact lattice convolution".to_string(),
                ),
                _ => {
                    let h = relative_step * m;
                    (
                        LatticeDistribution::discretize(law, m, h)?,
                        TailMode::Interpolated,
                        format!("cell discretization with step {h:e}"),
                    )
                }
            };
            let theta = auto_tilt(&lat, n_us, threshold);
            let r = lattice_convolution_tail(&lat, n_us, threshold, theta, mode)?;
            let mut e = Estimate::exact(r.probability, "convolution");
            e.bias_note = Some(note);
            e.bias_bound = r.rel_accuracy * r.probability;
            Some(e)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    FlatAtOne,
    Converging,
    NotConverging,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub n_values: Vec<u64>,
    pub ratios: Vec<f64>,
    pub deviations: Vec<f64>,
    /// `|ratio - 1|` strictly decreasing over the last three rows.
    pub decreasing_deviation: bool,
    pub final_ratio: f64,
    pub final_stderr: f64,
    /// `final_ratio -/+ 2 final_stderr`.
    pub final_interval: (f64, f64),
    /// Least-squares slope of log estimate against log predicted rate.
    pub log_log_slope: f64,
    pub trend: Trend,
}

impl ConvergenceReport {
    pub fn final_within(&self, lo: f64, hi: f64) -> bool {
        self.final_ratio >= lo && self.final_ratio <= hi
    }
}

/// Trend of the ratios of rows that carry one.
pub fn convergence_diagnostics(rows: &[ResultRow]) -> Result<ConvergenceReport> {
    let used: Vec<&ResultRow> = rows.iter().filter(|r| r.ratio.is_some()).collect();
    if used.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 rows with ratios, got {}",
            used.len()
        )));
    }
    let ratios: Vec<f64> = used.iter().map(|r| r.ratio.unwrap()).collect();
    let deviations: Vec<f64> = ratios.iter().map(|r| (r - 1.0).abs()).collect();
    let tail = &deviations[deviations.len() - 3..];
    let decreasing = tail[1] < tail[0] && tail[2] < tail[1];
    let last = used[used.len() - 1];
    let final_ratio = *ratios.last().unwrap();
    let final_stderr = last.ratio_stderr.unwrap_or(0.0);
    let logs: Vec<(f64, f64)> = used
        .iter()
        .filter_map(|r| {
            let e = r.estimate.as_ref()?.value;
            (e > 0.0 && r.predicted_rate > 0.0).then(|| (r.predicted_rate.ln(), e.ln()))
        })
        .collect();
    let log_log_slope = slope(&logs);
    let trend = if deviations.iter().all(|d| *d <= 1e-12) {
        Trend::FlatAtOne
    } else if decreasing {
        Trend::Converging
    } else {
        Trend::NotConverging
    };
    Ok(ConvergenceReport {
        n_values: used.iter().map(|r| r.n).collect(),
        ratios,
        deviations,
        decreasing_deviation: decreasing,
        final_ratio,
        final_stderr,
        final_interval: (final_ratio - 2.0 * final_stderr, final_ratio + 2.0 * final_stderr),
        log_log_slope,
        trend,
    })
}

fn slope(points: &[(f64, f64)]) -> f64 {
    if points.len() < 2 {
        return f64::NAN;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `n,M_n,predicted_rate,estimate,stderr,ratio,schedule_ok,method,seed`
/// with 17 significant digits; absent values are left empty.
pub fn write_csv<W: Write>(rows: &[ResultRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "n,M_n,predicted_rate,estimate,stderr,ratio,schedule_ok,method,seed")?;
    for r in rows {
        let (est, se, method, seed) = match &r.estimate {
            Some(e) => (
                num(e.value),
                num(e.stderr),
                e.method.clone(),
                e.seed.map(|s| s.to_string()).unwrap_or_default(),
            ),
            None => Default::default(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.n,
            num(r.m_n),
            num(r.predicted_rate),
            est,
            se,
            r.ratio.map(num).unwrap_or_default(),
            r.schedule_ok,
            method,
            seed
        )?;
    }
    Ok(())
}

/// `(log n, log estimate, log predicted)` triples for external plotting.
pub fn write_plot_data<W: Write>(rows: &[ResultRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "log_n,log_estimate,log_predicted")?;
    for r in rows {
        let le = r
            .estimate
            .as_ref()
            .filter(|e| e.value > 0.0)
            .map(|e| num(e.value.ln()))
            .unwrap_or_default();
        let lp = if r.predicted_rate > 0.0 {
            num(r.predicted_rate.ln())
        } else {
            String::new()
        };
        writeln!(out, "{},{},{}", num((r.n as f64).ln()), le, lp)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Sidecar<'a> {
    plan: &'a ExperimentPlan,
    run: &'a ExperimentRun,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostics: Option<&'a ConvergenceReport>,
}

/// Paths written by [`write_outputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFiles {
    pub csv: PathBuf,
    pub sidecar: PathBuf,
    pub plot: Option<PathBuf>,
}

/// Writes the CSV at `path`, a JSON sidecar next to it, and optionally the
/// plot triples.
pub fn write_outputs(
    path: &Path,
    plan: &ExperimentPlan,
    run: &ExperimentRun,
    diagnostics: Option<&ConvergenceReport>,
    emit_plot_data: bool,
) -> std::io::Result<OutputFiles> {
    let mut csv = BufWriter::new(File::create(path)?);
    write_csv(&run.rows, &mut csv)?;
    csv.flush()?;
    let sidecar = path.with_extension("json");
    let body = Sidecar {
        plan,
        run,
        diagnostics,
    };
    let json = serde_json::to_string_pretty(&body).map_err(std::io::Error::other)?;
    std::fs::write(&sidecar, json)?;
    let plot = if emit_plot_data {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "results".into());
        let p = path.with_file_name(format!("{stem}_plot.csv"));
        let mut w = BufWriter::new(File::create(&p)?);
        write_plot_data(&run.rows, &mut w)?;
        w.flush()?;
        Some(p)
    } else {
        None
    };
    Ok(OutputFiles {
        csv: path.to_path_buf(),
        sidecar,
        plot,
    })
}
