//! Self-check suites behind `pdflow verify`: each check is a named pass/fail
//! with a one-line detail.

use std::fmt;

use crate::dynamics::SystemKind;
use crate::experiments::{simulate, ExperimentError, ExperimentSpec};
use crate::integrator::{integrate, integrate_fixed, make_log_grid, FnSystem, IntegratorConfig};
use crate::metrics::{lemma22_property_check, KernelSign, LemmaReport, LemmaSetup, LemmaVerdict, MetricsError};
use crate::problem::load_problem;
use crate::saddle::{check_saddle_derivative_identity, saddle_velocity, solve_saddle};

/// Absolute slack on the saddle-path norm inequalities.
pub const SADDLE_SLACK: f64 = 1e-6;
/// Tolerance on the finite-difference derivative identity.
pub const IDENTITY_TOL: f64 = 1e-7;
/// Accepted error ratio when halving the fixed step of a third-order method.
pub const ORDER_RATIO: (f64, f64) = (6.0, 10.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Saddle,
    Lemmas,
    Integrator,
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::Saddle => "saddle",
            Suite::Lemmas => "lemmas",
            Suite::Integrator => "integrator",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn run_suite(suite: Suite, spec: &ExperimentSpec) -> Result<SuiteReport, ExperimentError> {
    spec.validate()?;
    let checks = match suite {
        Suite::Saddle => saddle_checks(spec)?,
        Suite::Lemmas => lemma_checks(spec)?,
        Suite::Integrator => integrator_checks(&spec.integrator),
    };
    Ok(SuiteReport { suite, checks })
}

fn saddle_checks(spec: &ExperimentSpec) -> Result<Vec<Check>, ExperimentError> {
    let instance = load_problem(&spec.problem.instance).map_err(|e| ExperimentError::ConfigInvalid {
        key: "problem.instance".into(),
        message: e.to_string(),
    })?;
    let sched = spec.params.schedule();
    let solver = |e: crate::saddle::SaddleError| ExperimentError::Metrics(MetricsError::Saddle(e));
    let grid = make_log_grid(1.0, 1e4, 30).expect("valid grid");
    let star = instance.oracle().map(|o| o.norm());

    let mut worst_norm = f64::NEG_INFINITY;
    let mut worst_speed = f64::NEG_INFINITY;
    let mut warm = None;
    for &t in &grid {
        let sp = solve_saddle(&instance, &sched, t, warm.as_ref()).map_err(solver)?;
        let norm = sp.norm();
        if let Some(star) = star {
            worst_norm = worst_norm.max(norm - star);
        }
        let vel = saddle_velocity(&instance, &sched, t).map_err(solver)?;
        // Without an oracle the path's own norm stands in for the min-norm pair.
        let reference = star.unwrap_or(norm);
        worst_speed = worst_speed.max(vel.norm() - sched.p() / t * reference);
        warm = Some(sp);
    }
    let mut checks = Vec::new();
    match star {
        Some(_) => checks.push(Check::new(
            "saddle path norm below min-norm pair",
            worst_norm <= SADDLE_SLACK,
            format!("max excess {worst_norm:.3e} over 30 times in [1, 1e4], slack {SADDLE_SLACK:e}"),
        )),
        None => checks.push(Check::new(
            "saddle path norm below min-norm pair",
            true,
            "skipped: instance has no solution oracle",
        )),
    }
    checks.push(Check::new(
        "saddle path speed bound",
        worst_speed <= SADDLE_SLACK,
        format!("max excess {worst_speed:.3e}, slack {SADDLE_SLACK:e}"),
    ));
    for t in [10.0, 100.0, 1000.0] {
        let id = check_saddle_derivative_identity(&instance, &sched, t).map_err(solver)?;
        checks.push(Check::new(
            format!("derivative identity at t = {t}"),
            id.abs_error <= IDENTITY_TOL,
            format!("lhs {:.9e}, rhs {:.9e}, error {:.2e}", id.lhs, id.rhs, id.abs_error),
        ));
    }
    Ok(checks)
}

/// Expected outcome of one bounded-correction fixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    Holds,
    HypothesisFailed,
    ConclusionFailed,
}

impl Expect {
    fn matches(&self, v: &LemmaVerdict) -> bool {
        matches!(
            (self, v),
            (Expect::Holds, LemmaVerdict::Holds)
                | (Expect::HypothesisFailed, LemmaVerdict::HypothesisFailed(_))
                | (Expect::ConclusionFailed, LemmaVerdict::ConclusionFailed(_))
        )
    }
}

/// One battery case: its name, expectation and the computed report.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryCase {
    pub name: &'static str,
    pub expect: Expect,
    pub report: LemmaReport,
}

impl BatteryCase {
    pub fn correct(&self) -> bool {
        self.expect.matches(&self.report.verdict)
    }
}

/// Three fixtures per kernel sign, including negative controls. With
/// `corrupt_g`, the first positive fixture runs on a growing `g` and a
/// sign-violating kernel while still expecting the lemma to hold.
pub fn lemma_batteries(corrupt_g: bool) -> Result<Vec<BatteryCase>, MetricsError> {
    let mut out = Vec::new();
    let delta = 0.5f64;
    let exact = (-delta).exp();
    let report = if corrupt_g {
        let setup = LemmaSetup::new(1.0, 0.0, 1.0, 1.0, 100.0);
        lemma22_property_check(&setup, KernelSign::Nonnegative, |t| -1.0 / t, |t| vec![t])?
    } else {
        let setup = LemmaSetup::new(delta, 1.0, 1.0, exact, 50.0);
        lemma22_property_check(&setup, KernelSign::Nonnegative, |_| 1.0, |t| vec![(-t).exp()])?
    };
    out.push(BatteryCase {
        name: "nonnegative kernel: a = 1, g = e^-t",
        expect: Expect::Holds,
        report,
    });
    let setup = LemmaSetup::new(1.0, 0.0, 1.0, 10.0, 1e3);
    out.push(BatteryCase {
        name: "nonnegative kernel: growing g breaks the hypothesis",
        expect: Expect::HypothesisFailed,
        report: lemma22_property_check(&setup, KernelSign::Nonnegative, |_| 0.0, |t| vec![t])?,
    });
    let setup = LemmaSetup::new(1.0, 0.0, 1.0, 1.0, 100.0);
    out.push(BatteryCase {
        name: "nonnegative kernel: a = -1/t breaks the conclusion",
        expect: Expect::ConclusionFailed,
        report: lemma22_property_check(&setup, KernelSign::Nonnegative, |t| -1.0 / t, |t| vec![t])?,
    });

    let setup = LemmaSetup::new(delta, 0.0, 1.0, 2.0, 200.0);
    out.push(BatteryCase {
        name: "nonpositive kernel: a = -e^-t, bounded g",
        expect: Expect::Holds,
        report: lemma22_property_check(&setup, KernelSign::Nonpositive, |t| -(-t).exp(), |t| {
            vec![t.cos(), 0.5]
        })?,
    });
    out.push(BatteryCase {
        name: "nonpositive kernel: a = -1 drives C0 below -1",
        expect: Expect::HypothesisFailed,
        report: lemma22_property_check(&setup, KernelSign::Nonpositive, |_| -1.0, |_| vec![0.0])?,
    });
    out.push(BatteryCase {
        name: "nonpositive kernel: positive a is rejected",
        expect: Expect::HypothesisFailed,
        report: lemma22_property_check(&setup, KernelSign::Nonpositive, |t| (-t).exp(), |_| vec![0.1])?,
    });
    Ok(out)
}

fn lemma_checks(spec: &ExperimentSpec) -> Result<Vec<Check>, ExperimentError> {
    let mut checks: Vec<Check> = lemma_batteries(spec.verify.corrupt_g)?
        .into_iter()
        .map(|case| {
            Check::new(
                case.name,
                case.correct(),
                format!("expected {:?}, got {}", case.expect, case.report.verdict),
            )
        })
        .collect();

    let mut short = spec.clone();
    short.sweep = None;
    if short.system.kind == SystemKind::Heode {
        short.system.kind = SystemKind::Main;
    }
    short.run.t_end = spec.verify.lemma_t_end;
    short.run.lemma_start = None;
    let run = simulate(&short)?;
    match run.lemma32 {
        Some(Ok(r)) => checks.push(Check::new(
            "bounded correction of the scaled residual",
            r.bounded,
            format!(
                "last-decade sup {:.4e}, mid-decade sup {:.4e}, t_end {}",
                r.last_decade_sup, r.mid_decade_sup, short.run.t_end
            ),
        )),
        Some(Err(e)) => checks.push(Check::new("bounded correction of the scaled residual", false, e.to_string())),
        None => checks.push(Check::new(
            "bounded correction of the scaled residual",
            false,
            "run produced too few samples",
        )),
    }
    Ok(checks)
}

fn integrator_checks(cfg: &IntegratorConfig) -> Vec<Check> {
    let mut checks = Vec::new();
    let decay = FnSystem::new(1, |_t, y: &[f64], dy: &mut [f64]| dy[0] = -y[0]);
    let exact = (-5.0f64).exp();
    let allowed = 10.0 * (cfg.rtol * exact + cfg.atol);
    checks.push(match integrate(&decay, 1.0, 6.0, &[1.0], cfg, &[6.0]) {
        Ok(tr) => {
            let err = (tr.states[0][0] - exact).abs();
            Check::new(
                "exponential decay final error",
                err <= allowed,
                format!("error {err:.3e}, allowed {allowed:.3e}"),
            )
        }
        Err(e) => Check::new("exponential decay final error", false, e.to_string()),
    });

    let sys = FnSystem::new(1, |t: f64, y: &[f64], dy: &mut [f64]| dy[0] = t.cos() * y[0]);
    let exact = 1.0f64.sin().exp();
    let e1 = (integrate_fixed(&sys, 0.0, 1.0, &[1.0], 20)[0] - exact).abs();
    let e2 = (integrate_fixed(&sys, 0.0, 1.0, &[1.0], 40)[0] - exact).abs();
    let ratio = e1 / e2;
    checks.push(Check::new(
        "fixed-step order",
        (ORDER_RATIO.0..=ORDER_RATIO.1).contains(&ratio),
        format!("error ratio {ratio:.3} on halving, expected in [{}, {}]", ORDER_RATIO.0, ORDER_RATIO.1),
    ));

    let decay_exact = (-5.0f64).exp();
    let mut errors = Vec::new();
    for k in 0..6 {
        let c = IntegratorConfig {
            rtol: 1e-6 / 2f64.powi(k),
            atol: 1e-12,
            ..cfg.clone()
        };
        if let Ok(tr) = integrate(&decay, 1.0, 6.0, &[1.0], &c, &[6.0]) {
            errors.push((tr.states[0][0] - decay_exact).abs());
        }
    }
    let monotone = errors.len() == 6 && errors.windows(2).all(|w| w[1] <= 2.0 * w[0]);
    checks.push(Check::new(
        "error shrinks with tolerance",
        monotone,
        format!("errors at rtol 1e-6/2^k: {:.2e} .. {:.2e}", errors.first().copied().unwrap_or(f64::NAN), errors.last().copied().unwrap_or(f64::NAN)),
    ));

    let osc = FnSystem::new(2, |_t, y: &[f64], dy: &mut [f64]| {
        dy[0] = y[1];
        dy[1] = -y[0];
    });
    let t1 = 1.0 + 2.0 * std::f64::consts::PI;
    checks.push(match integrate(&osc, 1.0, t1, &[1.0, 0.0], cfg, &[t1]) {
        Ok(tr) => {
            let y = &tr.states[0];
            let err = (y[0] - 1.0).abs().max(y[1].abs());
            Check::new("harmonic oscillator period", err < 1e-6, format!("error after one period {err:.3e}"))
        }
        Err(e) => Check::new("harmonic oscillator period", false, e.to_string()),
    });
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batteries_give_expected_verdicts() {
        let cases = lemma_batteries(false).unwrap();
        assert_eq!(cases.len(), 6);
        for c in &cases {
            assert!(c.correct(), "{}: {}", c.name, c.report.verdict);
        }
    }

    #[test]
    fn corrupted_fixture_is_caught() {
        let cases = lemma_batteries(true).unwrap();
        assert!(!cases[0].correct());
        assert!(matches!(cases[0].report.verdict, LemmaVerdict::ConclusionFailed(_)));
    }

    #[test]
    fn default_suites_pass() {
        let spec = ExperimentSpec::default();
        for suite in [Suite::Saddle, Suite::Lemmas, Suite::Integrator] {
            let r = run_suite(suite, &spec).unwrap();
            for c in &r.checks {
                assert!(c.passed, "{c}");
            }
        }
    }
}
