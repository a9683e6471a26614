//! Trajectory CSV and the key/value rate report.

use std::path::Path;

use super::{ExperimentError, ExperimentSpec, RunResult};
use crate::dynamics::{classify_regime, DynamicsError, SystemKind};
use crate::metrics::{predict_rates, TrajectorySample};

const METRIC_COLUMNS: [&str; 10] = [
    "feasibility",
    "obj_residual",
    "pd_gap",
    "dist_minnorm",
    "dist_saddle_x",
    "dist_saddle_lambda",
    "reg_gap",
    "energy",
    "speed_sq",
    "lemma32_g",
];

fn header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..n).map(|i| format!("x_{i}")));
    h.extend((0..n).map(|i| format!("v_{i}")));
    h.extend((0..m).map(|i| format!("lambda_{i}")));
    h.extend(METRIC_COLUMNS.iter().map(|s| s.to_string()));
    h
}

/// 17 significant digits, enough to round-trip every `f64`.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn csv_err(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Io {
        path: "<csv>".into(),
        message: e.to_string(),
    }
}

/// The trajectory table as CSV text; absent metrics are empty fields.
pub fn trajectory_csv(samples: &[TrajectorySample], n: usize, m: usize) -> Result<String, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header(n, m)).map_err(csv_err)?;
    for s in samples {
        let mut row = vec![num(s.t)];
        row.extend(s.x.iter().chain(&s.v).chain(&s.lambda).map(|v| num(*v)));
        row.extend([
            num(s.feasibility),
            opt(s.obj_residual),
            opt(s.pd_gap),
            opt(s.dist_minnorm),
            opt(s.dist_saddle_x),
            opt(s.dist_saddle_lambda),
            opt(s.reg_gap),
            opt(s.energy),
            num(s.speed_sq),
            opt(s.lemma32_g),
        ]);
        w.write_record(row).map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(csv_err)?).map_err(csv_err)
}

pub fn write_trajectory_csv(path: &Path, samples: &[TrajectorySample], n: usize, m: usize) -> Result<(), ExperimentError> {
    let text = trajectory_csv(samples, n, m)?;
    std::fs::write(path, text).map_err(|e| ExperimentError::io(path, e))
}

/// Parses a trajectory CSV back into samples; dimensions come from the header.
pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectorySample>, ExperimentError> {
    let bad = |msg: String| ExperimentError::io(path, msg);
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let head = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let count = |prefix: &str| head.iter().filter(|h| h.starts_with(prefix)).count();
    let (n, m) = (count("x_"), count("lambda_"));
    if head.iter().collect::<Vec<_>>() != header(n, m) {
        return Err(bad("unexpected header".into()));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| -> Result<Option<f64>, ExperimentError> {
            let s = rec.get(i).ok_or_else(|| bad(format!("missing column {i}")))?;
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(format!("bad number {s:?}")))
            }
        };
        let req = |i: usize| field(i)?.ok_or_else(|| bad(format!("empty required column {i}")));
        let vec_of = |start: usize, len: usize| (start..start + len).map(req).collect::<Result<Vec<_>, _>>();
        let base = 1 + 2 * n + m;
        out.push(TrajectorySample {
            t: req(0)?,
            x: vec_of(1, n)?,
            v: vec_of(1 + n, n)?,
            lambda: vec_of(1 + 2 * n, m)?,
            feasibility: req(base)?,
            obj_residual: field(base + 1)?,
            pd_gap: field(base + 2)?,
            dist_minnorm: field(base + 3)?,
            dist_saddle_x: field(base + 4)?,
            dist_saddle_lambda: field(base + 5)?,
            reg_gap: field(base + 6)?,
            energy: field(base + 7)?,
            speed_sq: req(base + 8)?,
            lemma32_g: field(base + 9)?,
        });
    }
    Ok(out)
}

fn fmt_f(v: f64) -> String {
    // TOML floats need a decimal point or exponent.
    if v.is_finite() {
        format!("{v:?}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Regime tags, `r` and the predicted exponents for `spec`, without integrating.
/// Out-of-theory parameters give a table that says so, not an error.
pub fn prediction_table(spec: &ExperimentSpec) -> Result<String, ExperimentError> {
    spec.validate()?;
    let mut out = String::new();
    out.push_str(&format!("system = \"{}\"\n", spec.system.kind));
    if spec.system.kind == SystemKind::Heode {
        out.push_str("regimes = \"none\"\n# no rate theory for this flow\n");
        return Ok(out);
    }
    let eff = spec.effective_params();
    match classify_regime(&eff) {
        Ok(set) => {
            out.push_str(&format!("regimes = \"{set}\"\nr = {}\n", fmt_f(set.r)));
            let pred = predict_rates(&eff)?;
            out.push_str("\n[predicted_exponents]\n");
            for (q, e) in &pred.exponents {
                out.push_str(&format!("{} = {}\n", q, fmt_f(*e)));
            }
        }
        Err(DynamicsError::AssumptionViolated(note)) => {
            out.push_str(&format!("regimes = \"OutOfTheory\"\nr = {}\nassumption = {note:?}\n", fmt_f(eff.r())));
        }
        Err(e) => {
            return Err(ExperimentError::ConfigInvalid {
                key: "params".into(),
                message: e.to_string(),
            })
        }
    }
    Ok(out)
}

/// The rate report: run summary, then one table per fitted quantity.
pub fn format_rates(result: &RunResult) -> String {
    let spec = &result.spec;
    let mut out = String::new();
    out.push_str(&format!("run_id = \"{}\"\n", result.run_id));
    out.push_str(&format!("system = \"{}\"\n", spec.system.kind));
    match &result.regimes {
        Some(set) => {
            out.push_str(&format!("regimes = \"{set}\"\n"));
            out.push_str(&format!("r = {}\n", fmt_f(set.r)));
        }
        None => out.push_str("regimes = \"none\"\n"),
    }
    if let Some(note) = &result.assumption_note {
        out.push_str(&format!("assumption = {note:?}\n"));
    }
    out.push_str(&format!("status = \"{}\"\n", result.status.name()));

    let first = result.first();
    let last = result.last();
    out.push_str("\n[terminal]\n");
    out.push_str(&format!("t_initial = {}\nt_final = {}\n", fmt_f(first.t), fmt_f(last.t)));
    out.push_str(&format!(
        "feasibility_initial = {}\nfeasibility_final = {}\n",
        fmt_f(first.feasibility),
        fmt_f(last.feasibility)
    ));
    if let (Some(d0), Some(d1)) = (first.dist_minnorm, last.dist_minnorm) {
        out.push_str(&format!("dist_minnorm_initial = {}\ndist_minnorm_final = {}\n", fmt_f(d0), fmt_f(d1)));
        if d0 > 0.0 {
            out.push_str(&format!("dist_minnorm_ratio = {}\n", fmt_f(d1 / d0)));
        }
    }
    if let (Some(o0), Some(o1)) = (first.obj_residual, last.obj_residual) {
        out.push_str(&format!("obj_residual_initial = {}\nobj_residual_final = {}\n", fmt_f(o0), fmt_f(o1)));
    }
    let x_final: Vec<String> = last.x.iter().map(|v| fmt_f(*v)).collect();
    out.push_str(&format!("x_final = [{}]\n", x_final.join(", ")));

    for row in &result.rates {
        out.push_str(&format!("\n[{}]\n", row.quantity));
        match &row.estimate {
            Ok(e) => {
                out.push_str(&format!("fitted_exponent = {}\n", fmt_f(e.fitted_exponent)));
                if let Some(p) = row.predicted {
                    out.push_str(&format!("predicted_exponent = {}\n", fmt_f(p)));
                }
                out.push_str(&format!("r_squared = {}\n", fmt_f(e.r_squared)));
                out.push_str(&format!("window = [{}, {}]\n", fmt_f(e.window.0), fmt_f(e.window.1)));
                out.push_str(&format!("samples = {}\n", e.samples));
                out.push_str(&format!("verdict = \"{}\"\n", row.verdict));
            }
            Err(err) => {
                if let Some(p) = row.predicted {
                    out.push_str(&format!("predicted_exponent = {}\n", fmt_f(p)));
                }
                out.push_str("verdict = \"unfit\"\n");
                out.push_str(&format!("reason = {:?}\n", format!("{}: {err}", error_name(err))));
            }
        }
    }

    if let Some(l) = &result.lemma32 {
        out.push_str("\n[lemma32]\n");
        match l {
            Ok(r) => {
                out.push_str(&format!("sup_value = {}\n", fmt_f(r.sup_value)));
                out.push_str(&format!("correction_sup = {}\n", fmt_f(r.correction_sup)));
                out.push_str(&format!("mid_decade_sup = {}\n", fmt_f(r.mid_decade_sup)));
                out.push_str(&format!("last_decade_sup = {}\n", fmt_f(r.last_decade_sup)));
                out.push_str(&format!("bounded = {}\n", r.bounded));
            }
            Err(e) => out.push_str(&format!("error = {:?}\n", e.to_string())),
        }
    }
    out
}

fn error_name(e: &crate::metrics::MetricsError) -> &'static str {
    use crate::metrics::MetricsError::*;
    match e {
        InsufficientSamples { .. } => "InsufficientSamples",
        NonPositiveValues { .. } => "NonPositiveValues",
        Unavailable(_) => "Unavailable",
        _ => "Error",
    }
}
