//! Parameter sweeps: independent runs fanned out over workers, then a summary
//! assembled in axis order.

use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{emit_comparison_plot, run_experiment, ExperimentError, ExperimentSpec, RunResult, RunStatus};
use crate::dynamics::{classify_regime, DynamicsError, SystemKind};
use crate::metrics::{Quantity, TrajectorySample, Verdict};
use crate::parallel::map_runs;

/// Quantities tabulated in the summary, in column order.
pub const SUMMARY_QUANTITIES: [Quantity; 6] = [
    Quantity::Feasibility,
    Quantity::ObjResidual,
    Quantity::PdGap,
    Quantity::DistMinnorm,
    Quantity::DistSaddleXSq,
    Quantity::RegGap,
];

/// Fitted and predicted exponent plus verdict for one quantity of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRate {
    pub quantity: Quantity,
    pub fitted: Option<f64>,
    pub predicted: Option<f64>,
    pub verdict: String,
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub system: SystemKind,
    pub run_id: String,
    /// Regime tags as `classify_regime` reports them for the cell.
    pub regimes: String,
    /// `None` when the cell errored.
    pub status: Option<RunStatus>,
    pub rates: Vec<CellRate>,
    pub error: Option<String>,
    pub samples: Vec<TrajectorySample>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub id: String,
    pub dir: PathBuf,
    pub rows: Vec<SweepRow>,
    pub summary: String,
}

impl SweepOutcome {
    pub fn any_failure(&self) -> bool {
        self.rows.iter().any(|r| r.status == Some(RunStatus::Fail))
    }

    pub fn any_error(&self) -> bool {
        self.rows.iter().any(|r| r.error.is_some())
    }
}

fn regime_label(spec: &ExperimentSpec) -> String {
    if spec.system.kind == SystemKind::Heode {
        return "n/a".into();
    }
    match classify_regime(&spec.effective_params()) {
        Ok(set) => set.to_string(),
        Err(DynamicsError::AssumptionViolated(_)) => "OutOfTheory".into(),
        Err(_) => "invalid".into(),
    }
}

fn row_from(value: f64, spec: &ExperimentSpec, outcome: Result<RunResult, ExperimentError>) -> SweepRow {
    let mut row = SweepRow {
        value,
        system: spec.system.kind,
        run_id: spec.run_id(),
        regimes: regime_label(spec),
        status: None,
        rates: Vec::new(),
        error: None,
        samples: Vec::new(),
    };
    match outcome {
        Ok(result) => {
            row.status = Some(result.status);
            row.rates = SUMMARY_QUANTITIES
                .iter()
                .map(|&q| match result.rate(q) {
                    Some(r) => CellRate {
                        quantity: q,
                        fitted: r.estimate.as_ref().ok().map(|e| e.fitted_exponent),
                        predicted: r.predicted,
                        verdict: match &r.verdict {
                            Verdict::Unfit(_) => "unfit".into(),
                            v => v.to_string(),
                        },
                    },
                    None => CellRate {
                        quantity: q,
                        fitted: None,
                        predicted: None,
                        verdict: "-".into(),
                    },
                })
                .collect();
            row.samples = result.samples;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.4}"))
}

fn summary_table(base: &ExperimentSpec, id: &str, rows: &[SweepRow]) -> String {
    let sweep = base.sweep.as_ref().expect("validated sweep");
    let tied: Vec<&str> = sweep.tied.iter().map(|a| a.name()).collect();
    let mut out = String::new();
    let _ = writeln!(out, "sweep_id = \"{id}\"");
    let _ = writeln!(out, "axis = \"{}\"", sweep.axis);
    let _ = writeln!(out, "tied = {tied:?}");
    let _ = writeln!(out, "cells = {}", rows.len());
    let _ = writeln!(out, "# per quantity: fitted/predicted/verdict\n");

    let mut header = vec![
        sweep.axis.name().to_string(),
        "system".into(),
        "run_id".into(),
        "regimes".into(),
        "status".into(),
    ];
    header.extend(SUMMARY_QUANTITIES.iter().map(|q| q.name().to_string()));
    header.push("error".into());
    let mut table = vec![header];
    for r in rows {
        let mut line = vec![
            format!("{}", r.value),
            r.system.to_string(),
            r.run_id.clone(),
            r.regimes.clone(),
            r.status.map_or("error".into(), |s| s.name().to_string()),
        ];
        if r.rates.is_empty() {
            line.extend(SUMMARY_QUANTITIES.iter().map(|_| "-".to_string()));
        } else {
            line.extend(
                r.rates
                    .iter()
                    .map(|c| format!("{}/{}/{}", fmt_opt(c.fitted), fmt_opt(c.predicted), c.verdict)),
            );
        }
        line.push(r.error.clone().unwrap_or_else(|| "-".into()));
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|j| table.iter().map(|l| l[j].len()).max().unwrap_or(0))
        .collect();
    for line in &table {
        let cells: Vec<String> = line.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

/// Runs every cell of `base.sweep` on up to `workers` threads. Cell failures
/// are recorded in their row; only I/O on the summary itself aborts.
pub fn run_sweep(base: &ExperimentSpec, workers: usize) -> Result<SweepOutcome, ExperimentError> {
    base.validate()?;
    let cells = base.sweep_cells()?;
    let mut rows: Vec<SweepRow> = map_runs(&cells, workers, |(value, spec)| {
        let outcome = run_experiment(spec).map(|o| o.result);
        if let Err(e) = &outcome {
            log::warn!("sweep cell {} = {value} ({}) failed: {e}", base.sweep.as_ref().map_or("?", |s| s.axis.name()), spec.system.kind);
        }
        row_from(*value, spec, outcome)
    });
    // Stable: systems keep their configured order within a value.
    rows.sort_by(|a, b| a.value.total_cmp(&b.value));

    let mut canon = base.clone();
    canon.output.dir.clear();
    let digest = Sha256::digest(canon.to_toml().as_bytes());
    let id: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    let dir = Path::new(&base.output.dir).join(format!("sweep-{id}"));
    fs::create_dir_all(&dir).map_err(|e| ExperimentError::io(&dir, e))?;

    let summary = summary_table(base, &id, &rows);
    let path = dir.join("summary.txt");
    fs::write(&path, &summary).map_err(|e| ExperimentError::io(&path, e))?;

    if base.output.plots {
        let axis = base.sweep.as_ref().expect("validated sweep").axis;
        let multi_system = rows.iter().any(|r| r.system != rows[0].system);
        let labelled: Vec<(String, &[TrajectorySample])> = rows
            .iter()
            .filter(|r| r.error.is_none())
            .map(|r| {
                let label = if multi_system {
                    format!("{axis}={} {}", r.value, r.system)
                } else {
                    format!("{axis}={}", r.value)
                };
                (label, r.samples.as_slice())
            })
            .collect();
        let quantities = [Quantity::DistMinnorm, Quantity::ObjResidual, Quantity::Feasibility];
        match emit_comparison_plot(&labelled, &quantities, &dir.join("plot_errors.svg")) {
            Ok(()) | Err(ExperimentError::NothingToPlot) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(SweepOutcome { id, dir, rows, summary })
}
