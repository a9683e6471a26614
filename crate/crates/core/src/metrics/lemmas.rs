use std::fmt;

use super::{MetricsError, TrajectorySample};
use crate::dynamics::ParameterSet;
use crate::integrator::make_log_grid;
use crate::linalg;
use crate::problem::ProblemInstance;

/// Relative slack on the hypothesis and conclusion bounds.
const BOUND_SLACK: f64 = 1e-6;

/// Allowed growth of the corrected quantity from the middle to the last decade.
const STABILIZATION_RATIO: f64 = 1.05;

/// Sign constraint on the kernel `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelSign {
    /// `a ≥ 0`; the conclusion bound is `2C`.
    Nonnegative,
    /// `a ≤ 0` with `e^{-μt^ν} ∫_δ^t a ≥ C₀ ∈ (-1, 0)`; the bound is `C - C C₀/(1 + C₀)`.
    Nonpositive,
}

/// Discretization of `[δ, t_end]` and the constants of the bounded-correction test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaSetup {
    pub delta: f64,
    pub mu: f64,
    pub nu: f64,
    /// The bound `C` on the corrected quantity.
    pub bound: f64,
    pub t_end: f64,
    /// Log-spaced quadrature nodes.
    pub points: usize,
}

impl LemmaSetup {
    pub fn new(delta: f64, mu: f64, nu: f64, bound: f64, t_end: f64) -> Self {
        Self {
            delta,
            mu,
            nu,
            bound,
            t_end,
            points: 20_001,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LemmaVerdict {
    Holds,
    HypothesisFailed(String),
    ConclusionFailed(String),
}

impl fmt::Display for LemmaVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LemmaVerdict::Holds => f.write_str("holds"),
            LemmaVerdict::HypothesisFailed(why) => write!(f, "HypothesisFailed: {why}"),
            LemmaVerdict::ConclusionFailed(why) => write!(f, "ConclusionFailed: {why}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub verdict: LemmaVerdict,
    /// `sup ‖g(t) + e^{-μt^ν} ∫_δ^t a g‖` over the grid.
    pub corrected_sup: f64,
    pub g_sup: f64,
    /// The bound the conclusion is checked against.
    pub conclusion_bound: f64,
    /// Observed `min e^{-μt^ν} ∫_δ^t a`; only for nonpositive kernels.
    pub c0: Option<f64>,
}

/// Checks the bounded-correction implication numerically: if the corrected
/// quantity stays below `C`, then `g` stays below the lemma's bound.
///
/// Integrals use the trapezoid rule on a log grid over `[δ, t_end]`. The sign
/// of `a` is trusted for nonnegative kernels and checked for nonpositive ones.
pub fn lemma22_property_check(
    setup: &LemmaSetup,
    sign: KernelSign,
    a: impl Fn(f64) -> f64,
    g: impl Fn(f64) -> Vec<f64>,
) -> Result<LemmaReport, MetricsError> {
    let LemmaSetup {
        delta,
        mu,
        nu,
        bound,
        t_end,
        points,
    } = *setup;
    if !(mu >= 0.0 && nu >= 0.0 && bound >= 0.0) {
        return Err(MetricsError::InvalidInput("need mu, nu, C >= 0".into()));
    }
    let grid = make_log_grid(delta, t_end, points).map_err(|e| MetricsError::InvalidInput(e.to_string()))?;

    let mut int_ag: Vec<f64> = Vec::new();
    let mut int_a = 0.0;
    let mut prev: Option<(f64, f64, Vec<f64>)> = None;
    let mut corrected_sup = 0.0f64;
    let mut g_sup = 0.0f64;
    let mut c0 = 0.0f64;
    let mut sign_violation = None;
    for &t in &grid {
        let at = a(t);
        let gt = g(t);
        if int_ag.is_empty() {
            int_ag = vec![0.0; gt.len()];
        }
        if let Some((tp, ap, gp)) = &prev {
            let h = 0.5 * (t - tp);
            int_a += h * (ap + at);
            for i in 0..gt.len() {
                int_ag[i] += h * (ap * gp[i] + at * gt[i]);
            }
        }
        let damp = (-mu * t.powf(nu)).exp();
        let corrected: Vec<f64> = gt.iter().zip(&int_ag).map(|(g, i)| g + damp * i).collect();
        corrected_sup = corrected_sup.max(linalg::norm(&corrected));
        g_sup = g_sup.max(linalg::norm(&gt));
        c0 = c0.min(damp * int_a);
        if sign == KernelSign::Nonpositive && at > 0.0 && sign_violation.is_none() {
            sign_violation = Some(t);
        }
        prev = Some((t, at, gt));
    }

    let mut report = LemmaReport {
        verdict: LemmaVerdict::Holds,
        corrected_sup,
        g_sup,
        conclusion_bound: 2.0 * bound,
        c0: None,
    };
    if corrected_sup > bound * (1.0 + BOUND_SLACK) {
        report.verdict = LemmaVerdict::HypothesisFailed(format!(
            "corrected quantity reaches {corrected_sup:e} > C = {bound:e}"
        ));
        return Ok(report);
    }
    if sign == KernelSign::Nonpositive {
        report.c0 = Some(c0);
        if let Some(t) = sign_violation {
            report.verdict = LemmaVerdict::HypothesisFailed(format!("kernel is positive at t = {t}"));
            return Ok(report);
        }
        if c0 <= -1.0 {
            report.verdict = LemmaVerdict::HypothesisFailed(format!("C0 = {c0} is not above -1"));
            return Ok(report);
        }
        report.conclusion_bound = bound - bound * c0 / (1.0 + c0);
    }
    if g_sup > report.conclusion_bound * (1.0 + BOUND_SLACK) {
        report.verdict = LemmaVerdict::ConclusionFailed(format!(
            "sup |g| = {g_sup:e} exceeds {:e}",
            report.conclusion_bound
        ));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma32Report {
    /// `sup ‖g‖` over `[T, t_end]` with `g = θ t^{2q+s}(Ax - b)`.
    pub sup_value: f64,
    /// Supremum of the corrected quantity over `[T, t_end]`.
    pub correction_sup: f64,
    /// Corrected-quantity suprema over `[t_end/100, t_end/10]` and `[t_end/10, t_end]`.
    pub mid_decade_sup: f64,
    pub last_decade_sup: f64,
    /// `sup ‖g‖` over the same two windows.
    pub g_mid_decade_sup: f64,
    pub g_last_decade_sup: f64,
    pub bounded: bool,
    /// Corrected quantity at every sample with `t ≥ T`.
    pub corrected: Vec<(f64, f64)>,
}

/// Weights of `∫_0^h φ(h-u) e^{-βu} du = φ(h) e0 + (φ(0) - φ(h)) e1` for linear
/// `φ`, where `-βh = dh` (`dh ≤ 0`).
fn exp_weights(dh: f64, h: f64) -> (f64, f64) {
    let x = -dh;
    if x < 1e-2 {
        // Taylor series; the closed forms cancel here.
        let e0 = 1.0 - x / 2.0 + x * x / 6.0 - x.powi(3) / 24.0 + x.powi(4) / 120.0 - x.powi(5) / 720.0;
        let e1 = 0.5 - x / 3.0 + x * x / 8.0 - x.powi(3) / 30.0 + x.powi(4) / 144.0 - x.powi(5) / 840.0;
        return (h * e0, h * e1);
    }
    let em = -(-x).exp_m1();
    let e0 = h * (em / x);
    let e1 = h * ((em - x * (-x).exp()) / (x * x));
    (e0, e1)
}

/// Bounded-correction check on an arbitrary series `g` on increasing `times`.
///
/// The corrected quantity is `g(t) + ∫_T^t g(τ) w(τ) e^{H(τ) - H(t)} dτ` with
/// `w(τ) = τ^{-q}/θ - (2q+s)/τ - c τ^{q+s-p}` and
/// `H(τ) = c τ^{1-(p-q-s)} / (1-(p-q-s))`; only differences of `H` are exponentiated.
pub fn lemma32_series_check(
    params: &ParameterSet,
    times: &[f64],
    g: &[Vec<f64>],
    t_start: f64,
) -> Result<Lemma32Report, MetricsError> {
    let ParameterSet {
        theta, c, p, q, s, ..
    } = *params;
    let k = 1.0 - (p - q - s);
    if !(k > 0.0) {
        return Err(MetricsError::InvalidInput(format!("need p - q - s < 1, got {}", p - q - s)));
    }
    if times.len() != g.len() {
        return Err(MetricsError::InvalidInput("times and g differ in length".into()));
    }
    let start = times.iter().position(|&t| t >= t_start).ok_or(MetricsError::EmptyTrajectory)?;
    let t_end = *times.last().ok_or(MetricsError::EmptyTrajectory)?;
    let w = |t: f64| t.powf(-q) / theta - (2.0 * q + s) / t - c * t.powf(q + s - p);
    let big_h = |t: f64| c / k * t.powf(k);

    let dim = g[start].len();
    let mut integral = vec![0.0; dim];
    let mut corrected = Vec::with_capacity(times.len() - start);
    let mut prev: Option<(f64, f64, f64)> = None;
    for (i, &t) in times.iter().enumerate().skip(start) {
        let (wt, ht) = (w(t), big_h(t));
        if !ht.is_finite() {
            return Err(MetricsError::ExponentOverflow(t));
        }
        if let Some((tp, wp, hp)) = prev {
            // Carry the integral to t, then add [tp, t] with g·w linear and H
            // replaced by its secant, integrated exactly. Late grid steps are
            // far wider than the kernel's decay length, so a trapezoid here
            // would be dominated by its endpoint term.
            let (e0, e1) = exp_weights(hp - ht, t - tp);
            let decay = (hp - ht).exp();
            for (j, acc) in integral.iter_mut().enumerate() {
                let (fp, ft) = (g[i - 1][j] * wp, g[i][j] * wt);
                *acc = decay * *acc + ft * e0 + (fp - ft) * e1;
            }
        }
        let value: Vec<f64> = g[i].iter().zip(&integral).map(|(a, b)| a + b).collect();
        corrected.push((t, linalg::norm(&value)));
        prev = Some((t, wt, ht));
    }

    let sup_in = |vals: &mut dyn Iterator<Item = (f64, f64)>, lo: f64, hi: f64| {
        vals.filter(|(t, _)| *t >= lo * (1.0 - 1e-12) && *t <= hi * (1.0 + 1e-12))
            .fold(0.0f64, |m, (_, v)| m.max(v))
    };
    let g_norms: Vec<(f64, f64)> = times[start..].iter().zip(&g[start..]).map(|(t, v)| (*t, linalg::norm(v))).collect();
    let mid = (t_end / 100.0, t_end / 10.0);
    let last = (t_end / 10.0, t_end);
    let mid_decade_sup = sup_in(&mut corrected.iter().copied(), mid.0, mid.1);
    let last_decade_sup = sup_in(&mut corrected.iter().copied(), last.0, last.1);
    Ok(Lemma32Report {
        sup_value: sup_in(&mut g_norms.iter().copied(), 0.0, f64::INFINITY),
        correction_sup: sup_in(&mut corrected.iter().copied(), 0.0, f64::INFINITY),
        mid_decade_sup,
        last_decade_sup,
        g_mid_decade_sup: sup_in(&mut g_norms.iter().copied(), mid.0, mid.1),
        g_last_decade_sup: sup_in(&mut g_norms.iter().copied(), last.0, last.1),
        bounded: last_decade_sup <= STABILIZATION_RATIO * mid_decade_sup,
        corrected,
    })
}

/// [`lemma32_series_check`] on `g = θ t^{2q+s}(Ax - b)` from trajectory samples.
pub fn lemma32_boundedness_check(
    instance: &ProblemInstance,
    params: &ParameterSet,
    samples: &[TrajectorySample],
    t_start: f64,
) -> Result<Lemma32Report, MetricsError> {
    let times: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let g: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            let scale = params.theta * s.t.powf(2.0 * params.q + params.s);
            instance.constraint_residual(&s.x).into_iter().map(|r| scale * r).collect()
        })
        .collect();
    lemma32_series_check(params, &times, &g, t_start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::make_log_grid;
    use crate::problem::build_paper_problem;

    #[test]
    fn zero_kernel_constant_g() {
        let setup = LemmaSetup::new(1.0, 0.0, 1.0, 3.0, 1e3);
        let r = lemma22_property_check(&setup, KernelSign::Nonnegative, |_| 0.0, |_| vec![3.0]).unwrap();
        assert_eq!(r.verdict, LemmaVerdict::Holds);
        assert!((r.corrected_sup - 3.0).abs() < 1e-15);
        assert!((r.g_sup - 3.0).abs() < 1e-15);
    }

    #[test]
    fn exponential_g_with_unit_kernel() {
        // Closed form: corrected(t) = e^{-t}(1 + e^{-δ} - e^{-t}), decreasing, so its sup is e^{-δ}.
        let delta = 0.5f64;
        let exact = (-delta).exp();
        let setup = LemmaSetup::new(delta, 1.0, 1.0, exact, 50.0);
        let r = lemma22_property_check(&setup, KernelSign::Nonnegative, |_| 1.0, |t| vec![(-t).exp()]).unwrap();
        assert_eq!(r.verdict, LemmaVerdict::Holds);
        assert!((r.corrected_sup - exact).abs() <= 1e-12);
        assert!((r.g_sup - exact).abs() <= 1e-15);
        assert_eq!(r.conclusion_bound, 2.0 * exact);
    }

    #[test]
    fn growing_g_fails_hypothesis() {
        let setup = LemmaSetup::new(1.0, 0.0, 1.0, 10.0, 1e3);
        let r = lemma22_property_check(&setup, KernelSign::Nonnegative, |_| 0.0, |t| vec![t]).unwrap();
        assert!(matches!(r.verdict, LemmaVerdict::HypothesisFailed(_)));
    }

    #[test]
    fn corrupted_kernel_fails_conclusion() {
        // a = -1/t breaks the sign contract: corrected ≡ 1 while g = t/δ grows.
        let delta = 1.0;
        let setup = LemmaSetup::new(delta, 0.0, 1.0, 1.0, 100.0);
        let r = lemma22_property_check(&setup, KernelSign::Nonnegative, |t| -1.0 / t, |t| vec![t / delta]).unwrap();
        assert!(matches!(r.verdict, LemmaVerdict::ConclusionFailed(_)), "{:?}", r.verdict);
        assert!((r.corrected_sup - 1.0).abs() < 1e-9);
    }

    #[test]
    fn nonpositive_kernel_battery() {
        let delta = 0.5f64;
        let setup = LemmaSetup::new(delta, 0.0, 1.0, 2.0, 200.0);
        let r = lemma22_property_check(&setup, KernelSign::Nonpositive, |t| -(-t).exp(), |t| vec![t.cos(), 0.5]).unwrap();
        assert_eq!(r.verdict, LemmaVerdict::Holds, "{r:?}");
        // C0 = e^{-t_end} - e^{-δ} at the end of the horizon.
        let c0 = r.c0.unwrap();
        assert!((c0 - ((-200.0f64).exp() - (-delta).exp())).abs() < 1e-6, "{c0}");

        let r = lemma22_property_check(&setup, KernelSign::Nonpositive, |_| -1.0, |_| vec![0.0]).unwrap();
        assert!(matches!(r.verdict, LemmaVerdict::HypothesisFailed(ref m) if m.contains("C0")));

        let r = lemma22_property_check(&setup, KernelSign::Nonpositive, |t| (-t).exp(), |_| vec![0.1]).unwrap();
        assert!(matches!(r.verdict, LemmaVerdict::HypothesisFailed(ref m) if m.contains("positive")));
    }

    #[test]
    fn lemma32_zero_series() {
        let pr = ParameterSet::default();
        let t = make_log_grid(1.0, 1e4, 400).unwrap();
        let g = vec![vec![0.0]; t.len()];
        let r = lemma32_series_check(&pr, &t, &g, 1.0).unwrap();
        assert_eq!(r.sup_value, 0.0);
        assert_eq!(r.correction_sup, 0.0);
        assert!(r.bounded);
    }

    #[test]
    fn lemma32_growing_control_is_unbounded() {
        let pr = ParameterSet::default();
        let t = make_log_grid(1.0, 1e4, 400).unwrap();
        let g: Vec<Vec<f64>> = t.iter().map(|t| vec![t.powf(0.2)]).collect();
        let r = lemma32_series_check(&pr, &t, &g, 1.0).unwrap();
        assert!(!r.bounded, "{} vs {}", r.last_decade_sup, r.mid_decade_sup);
    }

    #[test]
    fn lemma32_matches_direct_quadrature() {
        // Brute-force oracle: g linearly interpolated, exact H, 400 trapezoid
        // panels per grid interval, each t evaluated independently. The method
        // uses the secant of H per interval, hence the 1e-4 tolerance.
        let pr = ParameterSet { q: 0.1, p: 0.6, s: 0.3, ..Default::default() };
        let t = make_log_grid(1.0, 50.0, 60).unwrap();
        let g: Vec<Vec<f64>> = t.iter().map(|t| vec![t.sin(), 1.0 / t]).collect();
        let r = lemma32_series_check(&pr, &t, &g, 1.0).unwrap();
        let k = 1.0 - (pr.p - pr.q - pr.s);
        let hh = |t: f64| pr.c / k * t.powf(k);
        let w = |t: f64| t.powf(-pr.q) / pr.theta - (2.0 * pr.q + pr.s) / t - pr.c * t.powf(pr.q + pr.s - pr.p);
        let sub = 400;
        for (i, &ti) in t.iter().enumerate() {
            let mut acc = [0.0; 2];
            for j in 1..=i {
                let (a, b) = (t[j - 1], t[j]);
                let phi = |tau: f64, d: usize| {
                    let lam = (tau - a) / (b - a);
                    let fa = g[j - 1][d] * w(a);
                    let fb = g[j][d] * w(b);
                    (fa + lam * (fb - fa)) * (hh(tau) - hh(ti)).exp()
                };
                let step = (b - a) / sub as f64;
                for (d, slot) in acc.iter_mut().enumerate() {
                    for l in 0..sub {
                        let (u, v) = (a + l as f64 * step, a + (l + 1) as f64 * step);
                        *slot += 0.5 * step * (phi(u, d) + phi(v, d));
                    }
                }
            }
            let want = ((g[i][0] + acc[0]).powi(2) + (g[i][1] + acc[1]).powi(2)).sqrt();
            assert!((r.corrected[i].1 - want).abs() <= 1e-4 * (1.0 + want), "t = {ti}: {} vs {want}", r.corrected[i].1);
        }
    }

    #[test]
    fn lemma32_constant_series_on_coarse_grid() {
        // q = 0, s = p: H = cτ and w = 1 - c - s/τ. For constant g the
        // corrected value tends to g(1 + (1 - c)/c); steps near 1e4 are ~20x
        // the kernel's decay length.
        let pr = ParameterSet::default();
        let t = make_log_grid(1.0, 1e4, 400).unwrap();
        let g: Vec<Vec<f64>> = t.iter().map(|_| vec![0.2]).collect();
        let r = lemma32_series_check(&pr, &t, &g, 1.0).unwrap();
        let limit = 0.2 * (1.0 + (1.0 - pr.c) / pr.c);
        let last = r.corrected.last().unwrap().1;
        assert!((last - limit).abs() < 1e-3 * limit, "{last} vs {limit}");
        assert!(r.bounded);
    }

    #[test]
    fn exp_weights_branches_agree() {
        for h in [1e-3, 1.0, 100.0] {
            let x = 1e-2;
            let (a0, a1) = exp_weights(-x * (1.0 - 1e-12), h);
            let (b0, b1) = exp_weights(-x * (1.0 + 1e-12), h);
            assert!((a0 - b0).abs() <= 1e-13 * h && (a1 - b1).abs() <= 1e-13 * h, "{a0} {b0} {a1} {b1}");
            let (c0, c1) = exp_weights(-30.0, h);
            assert!((c0 - h / 30.0).abs() <= 1e-12 * h && (c1 - h / 900.0).abs() <= 1e-12 * h);
        }
    }

    #[test]
    fn lemma32_rejects_bad_exponent() {
        let pr = ParameterSet { p: 0.9, q: 0.0, s: -0.5, ..Default::default() };
        let t = [1.0, 2.0];
        assert!(lemma32_series_check(&pr, &t, &[vec![0.0], vec![0.0]], 1.0).is_err());
        let inst = build_paper_problem();
        assert!(lemma32_boundedness_check(&inst, &ParameterSet::default(), &[], 1.0).is_err());
    }
}
