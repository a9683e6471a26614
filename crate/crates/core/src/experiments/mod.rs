//! Running configured experiments and sweeps, and writing their artifacts.

mod config;
mod plot;
pub mod presets;
mod report;
mod sweep;

pub use config::{
    apply_override, dump_defaults, ExperimentSpec, HeSection, InitialSection, OutputSection, ProblemSection,
    RunSection, SweepAxis, SweepSection, SystemSection, VerifySection,
};
pub use plot::{emit_comparison_plot, emit_plot, render_panels, PlotCurve, PlotPanel};
pub use report::{format_rates, prediction_table, read_trajectory_csv, trajectory_csv, write_trajectory_csv};
pub use sweep::{run_sweep, CellRate, SweepOutcome, SweepRow, SUMMARY_QUANTITIES};

use std::fs;
use std::path::{Path, PathBuf};

use crate::dynamics::{classify_regime, ChbaniSystem, DynamicsError, HeSystem, MainSystem, RegimeSet, SystemKind};
use crate::integrator::{integrate, make_log_grid, IntegratorError, IntegratorStats, OdeSystem, Trajectory};
use crate::metrics::{
    fit_rate, judge, lemma32_boundedness_check, predict_rates, sample_metrics, sample_metrics_untracked,
    Lemma32Report, MetricsError, Quantity, RateEstimate, RatePrediction, TrajectorySample, Verdict,
};
use crate::problem::{load_problem, ProblemInstance};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid config key {key}: {message}")]
    ConfigInvalid { key: String, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("integration failed at t = {failing_t:?}: {source}")]
    Integration {
        source: IntegratorError,
        failing_t: Option<f64>,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("nothing to plot")]
    NothingToPlot,
}

impl ExperimentError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        ExperimentError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// Overall verdict of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Pass,
    Fail,
    /// Nothing to compare against: out of theory or no predictions.
    Informational,
}

impl RunStatus {
    pub fn name(&self) -> &'static str {
        match self {
            RunStatus::Pass => "pass",
            RunStatus::Fail => "fail",
            RunStatus::Informational => "informational",
        }
    }
}

/// Fit outcome for one quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub quantity: Quantity,
    pub estimate: Result<RateEstimate, MetricsError>,
    pub predicted: Option<f64>,
    pub verdict: Verdict,
}

/// Everything computed for one run, before anything is written.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub run_id: String,
    pub spec: ExperimentSpec,
    pub instance: ProblemInstance,
    /// `None` for flows without rate theory.
    pub regimes: Option<RegimeSet>,
    /// Set when the standing assumption fails; the run is then out of theory.
    pub assumption_note: Option<String>,
    pub prediction: Option<RatePrediction>,
    pub samples: Vec<TrajectorySample>,
    pub stats: IntegratorStats,
    pub rates: Vec<RateRow>,
    pub lemma32: Option<Result<Lemma32Report, MetricsError>>,
    pub status: RunStatus,
}

impl RunResult {
    pub fn rate(&self, quantity: Quantity) -> Option<&RateRow> {
        self.rates.iter().find(|r| r.quantity == quantity)
    }

    pub fn first(&self) -> &TrajectorySample {
        &self.samples[0]
    }

    pub fn last(&self) -> &TrajectorySample {
        self.samples.last().expect("nonempty")
    }

    /// Sample closest to `t` in log distance.
    pub fn sample_at(&self, t: f64) -> &TrajectorySample {
        self.samples
            .iter()
            .min_by(|a, b| (a.t / t).ln().abs().total_cmp(&(b.t / t).ln().abs()))
            .expect("nonempty")
    }
}

/// A run whose artifacts have been written to `dir`.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub result: RunResult,
    pub dir: PathBuf,
}

/// Horizons this short relative to `t0` produce a single sample and no fits.
const DEGENERATE_SPAN: f64 = 1e-9;

fn integrate_spec(
    spec: &ExperimentSpec,
    instance: &ProblemInstance,
    grid: &[f64],
) -> Result<Trajectory, IntegratorError> {
    let t0 = spec.params.t0;
    let t_end = *grid.last().expect("nonempty grid");
    let init = &spec.initial;
    let mut y0 = [init.x.as_slice(), init.v.as_slice(), init.lambda.as_slice()].concat();
    if spec.system.kind.second_order_dual() {
        y0.extend_from_slice(&init.lambda_dot);
    }
    if grid.len() == 1 {
        return Ok(Trajectory {
            times: vec![t0],
            states: vec![y0],
            stats: IntegratorStats::default(),
        });
    }
    let run = |sys: &dyn OdeSystem| integrate(sys, t0, t_end, &y0, &spec.integrator, grid);
    match spec.system.kind {
        SystemKind::Main => run(&MainSystem::new(instance.clone(), spec.params)),
        SystemKind::Chbani => run(&ChbaniSystem::new(instance.clone(), spec.params)),
        SystemKind::Heode => run(&HeSystem::new(instance.clone(), spec.he_params())),
    }
}

/// Rate theory for the run: regimes, an assumption note, and predictions.
fn theory(spec: &ExperimentSpec) -> (Option<RegimeSet>, Option<String>, Option<RatePrediction>) {
    if spec.system.kind == SystemKind::Heode {
        return (None, None, None);
    }
    let eff = spec.effective_params();
    match classify_regime(&eff) {
        Ok(set) => {
            let pred = predict_rates(&eff).ok();
            (Some(set), None, pred)
        }
        Err(DynamicsError::AssumptionViolated(msg)) => (Some(RegimeSet::out_of_theory(eff.r())), Some(msg), None),
        Err(other) => (None, Some(other.to_string()), None),
    }
}

/// Integrates, samples metrics and fits rates without touching the file system.
pub fn simulate(spec: &ExperimentSpec) -> Result<RunResult, ExperimentError> {
    spec.validate()?;
    let instance = load_problem(&spec.problem.instance).map_err(|e| ExperimentError::ConfigInvalid {
        key: "problem.instance".into(),
        message: e.to_string(),
    })?;
    spec.validate_for(&instance)?;
    let t0 = spec.params.t0;
    let t_end = spec.run.t_end;

    let grid = if t_end - t0 <= DEGENERATE_SPAN * t0 {
        vec![t0]
    } else {
        make_log_grid(t0, t_end, spec.run.samples).map_err(|e| ExperimentError::ConfigInvalid {
            key: "run".into(),
            message: e.to_string(),
        })?
    };
    let traj = integrate_spec(spec, &instance, &grid).map_err(|e| ExperimentError::Integration {
        failing_t: e.failing_time(),
        source: e,
    })?;

    let eff = spec.effective_params();
    let samples = match spec.system.kind {
        SystemKind::Heode => sample_metrics_untracked(&instance, &traj, true)?,
        _ => sample_metrics(&instance, &eff, &traj)?,
    };

    let (regimes, assumption_note, prediction) = theory(spec);
    let window = spec.run.fit_window.map(|[lo, hi]| (lo, hi));
    let mut rates = Vec::new();
    for quantity in Quantity::ALL {
        if quantity.value(&samples[0]).is_none() {
            continue;
        }
        let predicted = prediction.as_ref().and_then(|p| p.get(quantity));
        let estimate = fit_rate(&samples, quantity, window).map(|mut e| {
            e.predicted_exponent = predicted;
            e
        });
        let verdict = match &estimate {
            Ok(e) => judge(e),
            Err(err) => Verdict::Unfit(err.to_string()),
        };
        rates.push(RateRow {
            quantity,
            estimate,
            predicted,
            verdict,
        });
    }

    let lemma32 = (spec.system.kind != SystemKind::Heode && samples.len() > 1).then(|| {
        let start = spec.run.lemma_start.unwrap_or(t0);
        lemma32_boundedness_check(&instance, &eff, &samples, start)
    });

    let status = if rates.iter().any(|r| r.verdict.is_failure()) {
        RunStatus::Fail
    } else if rates.iter().any(|r| r.verdict == Verdict::Pass) {
        RunStatus::Pass
    } else {
        RunStatus::Informational
    };

    Ok(RunResult {
        run_id: spec.run_id(),
        spec: spec.clone(),
        instance,
        regimes,
        assumption_note,
        prediction,
        samples,
        stats: traj.stats,
        rates,
        lemma32,
        status,
    })
}

/// Plot groups written for every run: file stem and quantities.
pub const PLOT_GROUPS: [(&str, &[Quantity]); 3] = [
    (
        "errors",
        &[Quantity::DistMinnorm, Quantity::ObjResidual, Quantity::Feasibility],
    ),
    (
        "saddle",
        &[
            Quantity::DistSaddleXSq,
            Quantity::DistSaddleLambdaSq,
            Quantity::RegGap,
            Quantity::SpeedSq,
        ],
    ),
    ("energy", &[Quantity::Energy, Quantity::Lemma32G]),
];

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    fs::write(path, contents).map_err(|e| ExperimentError::io(path, e))
}

fn manifest(spec: &ExperimentSpec, run_id: &str, stats: Option<&IntegratorStats>, error: Option<&str>) -> String {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut out = format!(
        "run_id = \"{run_id}\"\npdflow_version = \"{}\"\ncreated_unix = {stamp}\n",
        env!("CARGO_PKG_VERSION")
    );
    if let Some(s) = stats {
        out.push_str(&format!(
            "\n[integrator_stats]\naccepted = {}\nrejected = {}\nrhs_evals = {}\nfinal_step = {:e}\n",
            s.accepted, s.rejected, s.rhs_evals, s.final_step
        ));
    }
    if let Some(e) = error {
        out.push_str(&format!("\n[error]\nmessage = {e:?}\n"));
    }
    out.push_str("\n# spec\n");
    out.push_str(&spec.to_toml());
    out
}

/// Runs `spec` and writes `trajectory.csv`, `rates.txt`, `plot_<group>.svg`
/// and `manifest.txt` under `<output.dir>/<run-id>/`.
///
/// Integration failures still produce `rates.txt` and `manifest.txt`, with
/// the failing time recorded, before the error is returned.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunOutcome, ExperimentError> {
    spec.validate()?;
    let run_id = spec.run_id();
    let dir = Path::new(&spec.output.dir).join(&run_id);
    fs::create_dir_all(&dir).map_err(|e| ExperimentError::io(&dir, e))?;

    let result = match simulate(spec) {
        Ok(r) => r,
        Err(err) => {
            if let ExperimentError::Integration { failing_t, .. } = &err {
                let failing = failing_t.map_or("nan".to_string(), |t| format!("{t:e}"));
                let text = format!(
                    "run_id = \"{run_id}\"\nsystem = \"{}\"\nstatus = \"error\"\nerror = {:?}\nfailing_t = {failing}\n",
                    spec.system.kind,
                    err.to_string()
                );
                write_file(&dir.join("rates.txt"), &text)?;
                write_file(&dir.join("manifest.txt"), &manifest(spec, &run_id, None, Some(&err.to_string())))?;
            }
            return Err(err);
        }
    };

    write_trajectory_csv(&dir.join("trajectory.csv"), &result.samples, result.instance.dim_primal(), result.instance.dim_dual())?;
    write_file(&dir.join("rates.txt"), &format_rates(&result))?;
    if spec.output.plots {
        for (group, quantities) in PLOT_GROUPS {
            match emit_plot(&result.samples, quantities, result.prediction.as_ref(), &dir.join(format!("plot_{group}.svg"))) {
                Ok(()) | Err(ExperimentError::NothingToPlot) => {}
                Err(e) => return Err(e),
            }
        }
    }
    write_file(&dir.join("manifest.txt"), &manifest(spec, &run_id, Some(&result.stats), None))?;
    Ok(RunOutcome { result, dir })
}
