//! Quantities tracked along trajectories, rate fits, and the bounded-correction checks.

mod lemmas;
mod rates;

pub use lemmas::{
    lemma22_property_check, lemma32_boundedness_check, lemma32_series_check, KernelSign,
    Lemma32Report, LemmaReport, LemmaSetup, LemmaVerdict,
};
pub use rates::{
    fit_rate, fit_series, judge, predict_rates, PowerFit, RateEstimate, RatePrediction, Verdict,
    RATE_TOLERANCE,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsError, FlowState, ParameterSet};
use crate::integrator::Trajectory;
use crate::linalg;
use crate::problem::ProblemInstance;
use crate::saddle::{solve_saddle, SaddleError, SaddlePoint};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("saddle point is for t = {saddle_t}, state is at t = {t}")]
    TimeMismatch { t: f64, saddle_t: f64 },
    #[error(transparent)]
    Saddle(#[from] SaddleError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("{quantity}: {found} samples in window, need at least {needed}")]
    InsufficientSamples {
        quantity: String,
        found: usize,
        needed: usize,
    },
    #[error("{quantity} is not positive at t = {t}")]
    NonPositiveValues { quantity: String, t: f64 },
    #[error("{0} is not available for this run")]
    Unavailable(String),
    #[error("no rate theorem applies: {0}")]
    OutOfTheory(String),
    #[error("exponent overflow at t = {0}")]
    ExponentOverflow(f64),
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// One trajectory sample with every derived metric.
///
/// Fields that need the solution oracle or the regularized saddle path are
/// `None` when those are unavailable.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub lambda: Vec<f64>,
    pub feasibility: f64,
    pub obj_residual: Option<f64>,
    pub pd_gap: Option<f64>,
    pub dist_minnorm: Option<f64>,
    pub dist_saddle_x: Option<f64>,
    pub dist_saddle_lambda: Option<f64>,
    pub reg_gap: Option<f64>,
    pub energy: Option<f64>,
    pub speed_sq: f64,
    pub lemma32_g: Option<f64>,
}

/// Scalar series that can be fitted and plotted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Feasibility,
    ObjResidual,
    PdGap,
    DistMinnorm,
    DistSaddleXSq,
    DistSaddleLambdaSq,
    RegGap,
    SpeedSq,
    Energy,
    Lemma32G,
}

impl Quantity {
    pub const ALL: [Quantity; 10] = [
        Quantity::Feasibility,
        Quantity::ObjResidual,
        Quantity::PdGap,
        Quantity::DistMinnorm,
        Quantity::DistSaddleXSq,
        Quantity::DistSaddleLambdaSq,
        Quantity::RegGap,
        Quantity::SpeedSq,
        Quantity::Energy,
        Quantity::Lemma32G,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Quantity::Feasibility => "feasibility",
            Quantity::ObjResidual => "obj_residual",
            Quantity::PdGap => "pd_gap",
            Quantity::DistMinnorm => "dist_minnorm",
            Quantity::DistSaddleXSq => "dist_saddle_x_sq",
            Quantity::DistSaddleLambdaSq => "dist_saddle_lambda_sq",
            Quantity::RegGap => "reg_gap",
            Quantity::SpeedSq => "speed_sq",
            Quantity::Energy => "energy",
            Quantity::Lemma32G => "lemma32_g",
        }
    }

    pub fn value(&self, s: &TrajectorySample) -> Option<f64> {
        match self {
            Quantity::Feasibility => Some(s.feasibility),
            Quantity::ObjResidual => s.obj_residual,
            Quantity::PdGap => s.pd_gap,
            Quantity::DistMinnorm => s.dist_minnorm,
            Quantity::DistSaddleXSq => s.dist_saddle_x.map(|d| d * d),
            Quantity::DistSaddleLambdaSq => s.dist_saddle_lambda.map(|d| d * d),
            Quantity::RegGap => s.reg_gap,
            Quantity::SpeedSq => Some(s.speed_sq),
            Quantity::Energy => s.energy,
            Quantity::Lemma32G => s.lemma32_g,
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Quantity {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Quantity::ALL
            .into_iter()
            .find(|q| q.name() == s)
            .ok_or_else(|| MetricsError::InvalidInput(format!("unknown quantity {s:?}")))
    }
}

/// `L_t(x, λ_t) - L_t(x_t, λ_t)` in Bregman form, so it stays accurate when
/// the gap is far below the magnitude of the Lagrangian.
pub fn regularized_gap(instance: &ProblemInstance, params: &ParameterSet, saddle: &SaddlePoint, x: &[f64]) -> f64 {
    let xt = saddle.x.as_slice();
    let eps = params.schedule().epsilon(saddle.t);
    let mut lin = instance.gradient(xt);
    linalg::mat_t_vec_add(instance.constraint_matrix(), saddle.lambda.as_slice(), 1.0, &mut lin);
    let mut dot = 0.0;
    let mut d_sq = 0.0;
    for i in 0..x.len() {
        let d = x[i] - xt[i];
        dot += (lin[i] + eps * xt[i]) * d;
        d_sq += d * d;
    }
    instance.objective().bregman(x, xt) + dot + 0.5 * eps * d_sq
}

/// The Lyapunov energy
/// `E(t) = θ² t^{2q+s} (L_t(x, λ_t) - L_t(x_t, λ_t)) + ½‖x - x_t + θ t^q v‖²
///        + ((αθ - 1 - θ q t^{q-1})/2) ‖x - x_t‖² + (θ/2) ‖λ - λ_t‖²`.
pub fn energy(
    instance: &ProblemInstance,
    params: &ParameterSet,
    t: f64,
    state: &FlowState,
    saddle: &SaddlePoint,
) -> Result<f64, MetricsError> {
    if saddle.t != t {
        return Err(MetricsError::TimeMismatch { t, saddle_t: saddle.t });
    }
    let ParameterSet {
        alpha, theta, q, s, ..
    } = *params;
    let tq = t.powf(q);
    let xt = saddle.x.as_slice();
    let mut anchored = 0.0;
    let mut dx_sq = 0.0;
    for i in 0..state.x.len() {
        let d = state.x[i] - xt[i];
        anchored += (d + theta * tq * state.v[i]).powi(2);
        dx_sq += d * d;
    }
    let dl_sq = linalg::norm_sq(&sub(&state.lambda, saddle.lambda.as_slice()));
    let gap = regularized_gap(instance, params, saddle, &state.x);
    let coeff = alpha * theta - 1.0 - theta * q * t.powf(q - 1.0);
    Ok(theta * theta * t.powf(2.0 * q + s) * gap + 0.5 * anchored + 0.5 * coeff * dx_sq + 0.5 * theta * dl_sq)
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Oracle-dependent fields `(obj_residual, pd_gap, dist_minnorm)`.
fn oracle_metrics(instance: &ProblemInstance, x: &[f64], lambda: &[f64]) -> (Option<f64>, Option<f64>, Option<f64>) {
    let Some(oracle) = instance.oracle() else {
        return (None, None, None);
    };
    let xs = oracle.min_norm_primal.as_slice();
    let ls = oracle.min_norm_dual.as_slice();
    let grad = instance.gradient(xs);
    let mut kkt = grad.clone();
    linalg::mat_t_vec_add(instance.constraint_matrix(), ls, 1.0, &mut kkt);
    let d = sub(x, xs);
    let breg = instance.objective().bregman(x, xs);
    // f(x) - f* and L(x, λ*) - L(x*, λ*), both expanded around x*.
    let obj = breg + linalg::dot(&grad, &d);
    let gap = breg + linalg::dot(&kkt, &d);
    let dist = (linalg::norm_sq(&d) + linalg::norm_sq(&sub(lambda, ls))).sqrt();
    (Some(obj.abs()), Some(gap), Some(dist))
}

/// Metrics along a `(x, v, λ)` trajectory of a Tikhonov-regularized flow.
///
/// The saddle path is solved at every sample, warm-started from the previous one.
pub fn sample_metrics(
    instance: &ProblemInstance,
    params: &ParameterSet,
    trajectory: &Trajectory,
) -> Result<Vec<TrajectorySample>, MetricsError> {
    if trajectory.times.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    let n = instance.dim_primal();
    let m = instance.dim_dual();
    let schedule = params.schedule();
    let mut prev: Option<SaddlePoint> = None;
    let mut out = Vec::with_capacity(trajectory.times.len());
    for (&t, y) in trajectory.times.iter().zip(&trajectory.states) {
        let state = FlowState::from_slice(y, n, m, false);
        let saddle = solve_saddle(instance, &schedule, t, prev.as_ref())?;
        let mut sample = base_sample(instance, t, &state);
        sample.dist_saddle_x = Some(linalg::dist(&state.x, saddle.x.as_slice()));
        sample.dist_saddle_lambda = Some(linalg::dist(&state.lambda, saddle.lambda.as_slice()));
        sample.reg_gap = Some(regularized_gap(instance, params, &saddle, &state.x));
        sample.energy = Some(energy(instance, params, t, &state, &saddle)?);
        sample.lemma32_g = Some(params.theta * t.powf(2.0 * params.q + params.s) * sample.feasibility);
        out.push(sample);
        prev = Some(saddle);
    }
    Ok(out)
}

/// Metrics that need no saddle path, for flows without Tikhonov control.
///
/// `second_order_dual` selects the `(x, v, λ, μ)` state layout; `μ` is dropped.
pub fn sample_metrics_untracked(
    instance: &ProblemInstance,
    trajectory: &Trajectory,
    second_order_dual: bool,
) -> Result<Vec<TrajectorySample>, MetricsError> {
    if trajectory.times.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    let n = instance.dim_primal();
    let m = instance.dim_dual();
    Ok(trajectory
        .times
        .iter()
        .zip(&trajectory.states)
        .map(|(&t, y)| base_sample(instance, t, &FlowState::from_slice(y, n, m, second_order_dual)))
        .collect())
}

fn base_sample(instance: &ProblemInstance, t: f64, state: &FlowState) -> TrajectorySample {
    let feasibility = linalg::norm(&instance.constraint_residual(&state.x));
    let (obj_residual, pd_gap, dist_minnorm) = oracle_metrics(instance, &state.x, &state.lambda);
    TrajectorySample {
        t,
        x: state.x.clone(),
        v: state.v.clone(),
        lambda: state.lambda.clone(),
        feasibility,
        obj_residual,
        pd_gap,
        dist_minnorm,
        speed_sq: linalg::norm_sq(&state.v),
        ..Default::default()
    }
}
