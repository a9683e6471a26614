use std::collections::BTreeMap;
use std::fmt;

use super::{MetricsError, Quantity, TrajectorySample};
use crate::dynamics::{classify_regime, DynamicsError, ParameterSet, Regime, RegimeSet};

/// Allowed shortfall of a fitted exponent below its prediction.
pub const RATE_TOLERANCE: f64 = 0.15;

const MIN_FIT_SAMPLES: usize = 10;

/// Least-squares fit of `log y = a - β log t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFit {
    /// `β`, so a decay `t^{-β}` fits as `β`.
    pub exponent: f64,
    pub r_squared: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate {
    pub quantity: Quantity,
    pub fitted_exponent: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub samples: usize,
    pub predicted_exponent: Option<f64>,
}

/// Fits a power law to `(times, values)` restricted to `window` (inclusive).
pub fn fit_series(times: &[f64], values: &[f64], window: (f64, f64), label: &str) -> Result<PowerFit, MetricsError> {
    let (lo, hi) = window;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &v) in times.iter().zip(values) {
        if t < lo * (1.0 - 1e-12) || t > hi * (1.0 + 1e-12) {
            continue;
        }
        if !(v > 0.0) || !v.is_finite() {
            return Err(MetricsError::NonPositiveValues {
                quantity: label.to_string(),
                t,
            });
        }
        xs.push(t.ln());
        ys.push(v.ln());
    }
    if xs.len() < MIN_FIT_SAMPLES {
        return Err(MetricsError::InsufficientSamples {
            quantity: label.to_string(),
            found: xs.len(),
            needed: MIN_FIT_SAMPLES,
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 {
        return Err(MetricsError::InsufficientSamples {
            quantity: label.to_string(),
            found: 1,
            needed: MIN_FIT_SAMPLES,
        });
    }
    let slope = sxy / sxx;
    let ss_res = (syy - slope * sxy).max(0.0);
    // A flat series is fitted exactly by slope 0.
    let r_squared = if syy <= f64::EPSILON * n * (1.0 + my * my) {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(PowerFit {
        exponent: -slope,
        r_squared,
        samples: xs.len(),
    })
}

/// Fits `quantity` over `window`, defaulting to the last two decades of the samples.
pub fn fit_rate(
    samples: &[TrajectorySample],
    quantity: Quantity,
    window: Option<(f64, f64)>,
) -> Result<RateEstimate, MetricsError> {
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
        return Err(MetricsError::InsufficientSamples {
            quantity: quantity.to_string(),
            found: 0,
            needed: MIN_FIT_SAMPLES,
        });
    };
    let window = window.unwrap_or((first.t.max(last.t / 100.0), last.t));
    let mut times = Vec::with_capacity(samples.len());
    let mut values = Vec::with_capacity(samples.len());
    for s in samples {
        let v = quantity
            .value(s)
            .ok_or_else(|| MetricsError::Unavailable(quantity.to_string()))?;
        times.push(s.t);
        values.push(v);
    }
    let fit = fit_series(&times, &values, window, quantity.name())?;
    Ok(RateEstimate {
        quantity,
        fitted_exponent: fit.exponent,
        r_squared: fit.r_squared,
        window,
        samples: fit.samples,
        predicted_exponent: None,
    })
}

/// Predicted decay exponents: the strongest bound among applicable regimes.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePrediction {
    pub regimes: RegimeSet,
    pub exponents: BTreeMap<Quantity, f64>,
}

impl RatePrediction {
    pub fn get(&self, quantity: Quantity) -> Option<f64> {
        self.exponents.get(&quantity).copied()
    }

    fn offer(&mut self, quantity: Quantity, exponent: f64) {
        let e = self.exponents.entry(quantity).or_insert(exponent);
        *e = e.max(exponent);
    }

    fn offer_gap(&mut self, exponent: f64) {
        self.offer(Quantity::PdGap, exponent);
        self.offer(Quantity::ObjResidual, exponent);
    }
}

pub fn predict_rates(params: &ParameterSet) -> Result<RatePrediction, MetricsError> {
    let regimes = classify_regime(params).map_err(|e| match e {
        DynamicsError::AssumptionViolated(msg) => MetricsError::OutOfTheory(msg),
        other => MetricsError::Dynamics(other),
    })?;
    if regimes.is_out_of_theory() {
        return Err(MetricsError::OutOfTheory(format!(
            "(p, q, s) = ({}, {}, {}) lies in no regime",
            params.p, params.q, params.s
        )));
    }
    let ParameterSet { p, q, s, .. } = *params;
    let r = regimes.r;
    let mut pred = RatePrediction {
        regimes: regimes.clone(),
        exponents: BTreeMap::new(),
    };
    for regime in &regimes.tags {
        match regime {
            Regime::FastSaddleTracking => {
                let dist = 2.0 * (1.0 + s + q - p);
                pred.offer(Quantity::DistSaddleXSq, dist);
                pred.offer(Quantity::DistSaddleLambdaSq, dist);
                pred.offer(Quantity::SpeedSq, 2.0 * (1.0 + s + 2.0 * q - p));
                pred.offer(Quantity::Feasibility, p.min(1.0 + s + q - p));
                if (2.0 * p - 2.0 - 4.0 * q) / 3.0 < s {
                    let gap = 4.0 * q + 3.0 * s - 2.0 * p + 2.0;
                    pred.offer(Quantity::RegGap, gap);
                    pred.offer_gap(p.min(gap));
                }
            }
            Regime::SlowRegime => {
                let dist = 1.0 - 2.0 * q - s - r;
                pred.offer(Quantity::RegGap, 1.0 - r);
                pred.offer(Quantity::DistSaddleXSq, dist);
                pred.offer(Quantity::DistSaddleLambdaSq, dist);
                pred.offer(Quantity::SpeedSq, 1.0 - s - r);
                let gap = p.min(dist / 2.0);
                pred.offer(Quantity::Feasibility, gap);
                pred.offer_gap(gap);
            }
            Regime::ImprovedSlowRegime => {
                let dist = 1.0 - (p + q);
                pred.offer(Quantity::DistSaddleXSq, dist);
                let gap = p.min(dist / 2.0);
                pred.offer(Quantity::Feasibility, gap);
                pred.offer_gap(gap);
            }
            Regime::GapOptimal => {
                let gap = 2.0 * q + s;
                pred.offer(Quantity::Feasibility, gap);
                pred.offer_gap(gap);
            }
        }
    }
    Ok(pred)
}

/// Outcome of comparing a fit against its prediction.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Pass,
    Fail,
    /// No prediction to compare against.
    Informational,
    /// The fit could not be made; carries the reason.
    Unfit(String),
}

impl Verdict {
    pub fn is_failure(&self) -> bool {
        matches!(self, Verdict::Fail)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Pass => f.write_str("pass"),
            Verdict::Fail => f.write_str("fail"),
            Verdict::Informational => f.write_str("informational"),
            Verdict::Unfit(reason) => write!(f, "unfit: {reason}"),
        }
    }
}

/// One-sided check `fitted ≥ predicted - RATE_TOLERANCE`.
pub fn judge(estimate: &RateEstimate) -> Verdict {
    match estimate.predicted_exponent {
        None => Verdict::Informational,
        Some(p) if estimate.fitted_exponent >= p - RATE_TOLERANCE => Verdict::Pass,
        Some(_) => Verdict::Fail,
    }
}
