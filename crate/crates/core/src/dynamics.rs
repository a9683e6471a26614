//! Right-hand sides of the inertial primal-dual flows in first-order form.
//!
//! State layouts: `(x, v, λ)` for the main and constant-damping systems,
//! `(x, v, λ, μ)` with `μ = λ'` for the second-order-in-both comparison flow.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::integrator::OdeSystem;
use crate::linalg;
use crate::problem::ProblemInstance;
use crate::saddle::RegularizationSchedule;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("time must be positive, got {0}")]
    NonpositiveTime(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("standing assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("state dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Parameters `(α, θ, c, p, q, s, t0)` of the slowly damped Tikhonov flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParameterSet {
    pub alpha: f64,
    pub theta: f64,
    pub c: f64,
    pub p: f64,
    pub q: f64,
    pub s: f64,
    pub t0: f64,
}

impl Default for ParameterSet {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            theta: 1.0,
            c: 0.1,
            p: 0.5,
            q: 0.0,
            s: 0.5,
            t0: 1.0,
        }
    }
}

impl ParameterSet {
    /// Domain checks every run needs (signs and the open intervals for p, q).
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |msg: String| Err(DynamicsError::InvalidParameter(msg));
        let all = [self.alpha, self.theta, self.c, self.p, self.q, self.s, self.t0];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("parameters must be finite".into());
        }
        if self.alpha <= 0.0 {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.theta <= 0.0 {
            return bad(format!("theta must be positive, got {}", self.theta));
        }
        if self.c <= 0.0 {
            return bad(format!("c must be positive, got {}", self.c));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad(format!("p must lie in (0, 1), got {}", self.p));
        }
        if !(self.q >= 0.0 && self.q < 1.0) {
            return bad(format!("q must lie in [0, 1), got {}", self.q));
        }
        if self.t0 <= 0.0 {
            return bad(format!("t0 must be positive, got {}", self.t0));
        }
        Ok(())
    }

    /// The standing assumption `θ > 1/α`, `0 ≤ q < 1`, `0 < p < 1 - q`, `c > 0`.
    pub fn check_assumption(&self) -> Result<(), DynamicsError> {
        self.validate()
            .map_err(|e| DynamicsError::AssumptionViolated(e.to_string()))?;
        let mut violations = Vec::new();
        if self.theta * self.alpha <= 1.0 {
            violations.push(format!("theta > 1/alpha fails ({} <= {})", self.theta, 1.0 / self.alpha));
        }
        if !lt(self.p, 1.0 - self.q) {
            violations.push(format!("p < 1 - q fails ({} >= {})", self.p, 1.0 - self.q));
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(DynamicsError::AssumptionViolated(violations.join("; ")))
        }
    }

    pub fn schedule(&self) -> RegularizationSchedule {
        RegularizationSchedule::unchecked(self.c, self.p)
    }

    /// `r = max{q, p - q - s}`.
    pub fn r(&self) -> f64 {
        self.q.max(self.p - self.q - self.s)
    }

    /// The constant-damping specialization `q = 0`, `s = p`.
    pub fn chbani_specialization(&self) -> Self {
        Self {
            q: 0.0,
            s: self.p,
            ..*self
        }
    }
}

// Regime boundaries are compared with a small slack so that parameters
// written in decimal (e.g. s = 0.4 against p - 2q = 0.6 - 0.2) land on the
// intended side.
const BOUNDARY_TOL: f64 = 1e-12;

fn lt(a: f64, b: f64) -> bool {
    a < b - BOUNDARY_TOL
}

fn le(a: f64, b: f64) -> bool {
    a <= b + BOUNDARY_TOL
}

/// Parameter regions in which a rate theorem applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// `p - q - 1 < s < (p - 3q - 1)/2`.
    FastSaddleTracking,
    /// `(p - 3q - 1)/2 ≤ s < 1 - 3q`.
    SlowRegime,
    /// `p - 2q < s < 1 - 3q`.
    ImprovedSlowRegime,
    /// `-2q < s ≤ p - 2q`.
    GapOptimal,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::FastSaddleTracking => "FastSaddleTracking",
            Regime::SlowRegime => "SlowRegime",
            Regime::ImprovedSlowRegime => "ImprovedSlowRegime",
            Regime::GapOptimal => "GapOptimal",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// All regimes that apply to a parameter set; empty means out of theory.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSet {
    pub tags: Vec<Regime>,
    pub r: f64,
}

impl RegimeSet {
    pub fn contains(&self, regime: Regime) -> bool {
        self.tags.contains(&regime)
    }

    pub fn is_out_of_theory(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn out_of_theory(r: f64) -> Self {
        Self { tags: Vec::new(), r }
    }
}

impl fmt::Display for RegimeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.tags.is_empty() {
            return f.write_str("OutOfTheory");
        }
        let names: Vec<&str> = self.tags.iter().map(Regime::name).collect();
        f.write_str(&names.join("+"))
    }
}

/// Classifies `(p, q, s)` into the applicable rate regimes.
///
/// Fails with `AssumptionViolated` when the standing assumption does not
/// hold; callers may still run the flow and treat the result as out of theory.
pub fn classify_regime(params: &ParameterSet) -> Result<RegimeSet, DynamicsError> {
    params.check_assumption()?;
    let ParameterSet { p, q, s, .. } = *params;
    let mut tags = Vec::new();
    let lower = p - q - 1.0;
    let split = (p - 3.0 * q - 1.0) / 2.0;
    let upper = 1.0 - 3.0 * q;
    if lt(lower, s) && lt(s, split) {
        tags.push(Regime::FastSaddleTracking);
    }
    if le(split, s) && lt(s, upper) {
        tags.push(Regime::SlowRegime);
    }
    if lt(p - 2.0 * q, s) && lt(s, upper) {
        tags.push(Regime::ImprovedSlowRegime);
    }
    if lt(-2.0 * q, s) && le(s, p - 2.0 * q) {
        tags.push(Regime::GapOptimal);
    }
    Ok(RegimeSet { tags, r: params.r() })
}

/// Which flow to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    /// Slow damping `α/t^q`, time scaling `tˢ`, Tikhonov term `c/tᵖ`.
    #[default]
    Main,
    /// Constant damping; the `q = 0`, `s = p` case of [`SystemKind::Main`].
    Chbani,
    /// Second-order dual dynamics on the augmented Lagrangian, no Tikhonov term.
    Heode,
}

impl SystemKind {
    pub fn name(&self) -> &'static str {
        match self {
            SystemKind::Main => "main",
            SystemKind::Chbani => "chbani",
            SystemKind::Heode => "heode",
        }
    }

    pub fn second_order_dual(&self) -> bool {
        matches!(self, SystemKind::Heode)
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters of the comparison flow with augmented Lagrangian penalty `ρ`,
/// scaling `β(t) = tˢ` and extrapolation `θ t^κ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeParams {
    pub alpha: f64,
    pub theta: f64,
    pub rho: f64,
    pub kappa: f64,
    pub q: f64,
    pub s: f64,
    pub t0: f64,
}

impl HeParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let all = [self.alpha, self.theta, self.rho, self.kappa, self.q, self.s, self.t0];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::InvalidParameter("parameters must be finite".into()));
        }
        if self.alpha <= 0.0 || self.theta < 0.0 || self.rho < 0.0 || self.t0 <= 0.0 {
            return Err(DynamicsError::InvalidParameter(
                "need alpha > 0, theta >= 0, rho >= 0, t0 > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Component views of a flow state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub lambda: Vec<f64>,
    /// `λ'` for second-order dual dynamics; empty otherwise.
    pub lambda_dot: Vec<f64>,
}

impl FlowState {
    pub fn new(x: Vec<f64>, v: Vec<f64>, lambda: Vec<f64>) -> Self {
        Self {
            x,
            v,
            lambda,
            lambda_dot: Vec::new(),
        }
    }

    pub fn with_lambda_dot(mut self, lambda_dot: Vec<f64>) -> Self {
        self.lambda_dot = lambda_dot;
        self
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(
            self.x.len() + self.v.len() + self.lambda.len() + self.lambda_dot.len(),
        );
        y.extend_from_slice(&self.x);
        y.extend_from_slice(&self.v);
        y.extend_from_slice(&self.lambda);
        y.extend_from_slice(&self.lambda_dot);
        y
    }

    /// Splits a flat state; `second_order_dual` selects the `(x, v, λ, μ)` layout.
    pub fn from_slice(y: &[f64], n: usize, m: usize, second_order_dual: bool) -> Self {
        let mut st = Self::new(y[..n].to_vec(), y[n..2 * n].to_vec(), y[2 * n..2 * n + m].to_vec());
        if second_order_dual {
            st.lambda_dot = y[2 * n + m..2 * n + 2 * m].to_vec();
        }
        st
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

/// Time derivative in the same layout as [`FlowState`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlowDerivative {
    pub dx: Vec<f64>,
    pub dv: Vec<f64>,
    pub dlambda: Vec<f64>,
    pub dmu: Vec<f64>,
}

/// The slowly damped Tikhonov flow
/// `x'' + (α/t^q) x' + tˢ(∇f(x) + Aᵀλ + (c/tᵖ) x) = 0`,
/// `λ' = t^{q+s}(A(x + θ t^q x') - b - (c/tᵖ) λ)`.
#[derive(Debug, Clone)]
pub struct MainSystem {
    instance: ProblemInstance,
    params: ParameterSet,
}

impl MainSystem {
    pub fn new(instance: ProblemInstance, params: ParameterSet) -> Self {
        Self { instance, params }
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }
}

impl OdeSystem for MainSystem {
    fn dim(&self) -> usize {
        2 * self.instance.dim_primal() + self.instance.dim_dual()
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.instance.dim_primal();
        let ParameterSet {
            alpha, theta, c, p, q, s, ..
        } = self.params;
        let (x, rest) = y.split_at(n);
        let (v, lambda) = rest.split_at(n);
        let (dx, drest) = dy.split_at_mut(n);
        let (dv, dlambda) = drest.split_at_mut(n);

        let tq = t.powf(q);
        let ts = t.powf(s);
        let eps = c / t.powf(p);
        let a = self.instance.constraint_matrix();

        dx.copy_from_slice(v);

        self.instance.objective().gradient(x, dv);
        linalg::mat_t_vec_add(a, lambda, 1.0, dv);
        for i in 0..n {
            dv[i] = -(alpha / tq) * v[i] - ts * (dv[i] + eps * x[i]);
        }

        let tqs = tq * ts;
        dlambda.iter_mut().for_each(|d| *d = 0.0);
        linalg::mat_vec_add(a, x, 1.0, dlambda);
        linalg::mat_vec_add(a, v, theta * tq, dlambda);
        for (i, d) in dlambda.iter_mut().enumerate() {
            *d = tqs * (*d - self.instance.constraint_rhs()[i] - eps * lambda[i]);
        }
    }
}

/// The constant-damping flow
/// `x'' + αx' + tᵖ∇ₓL(x, λ) + cx = 0`, `λ' = tᵖ∇_λL(x + θx', λ) - cλ`.
#[derive(Debug, Clone)]
pub struct ChbaniSystem {
    instance: ProblemInstance,
    params: ParameterSet,
}

impl ChbaniSystem {
    pub fn new(instance: ProblemInstance, params: ParameterSet) -> Self {
        Self { instance, params }
    }
}

impl OdeSystem for ChbaniSystem {
    fn dim(&self) -> usize {
        2 * self.instance.dim_primal() + self.instance.dim_dual()
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.instance.dim_primal();
        let ParameterSet {
            alpha, theta, c, p, ..
        } = self.params;
        let (x, rest) = y.split_at(n);
        let (v, lambda) = rest.split_at(n);
        let (dx, drest) = dy.split_at_mut(n);
        let (dv, dlambda) = drest.split_at_mut(n);

        let tp = t.powf(p);
        let a = self.instance.constraint_matrix();

        dx.copy_from_slice(v);

        self.instance.objective().gradient(x, dv);
        linalg::mat_t_vec_add(a, lambda, 1.0, dv);
        for i in 0..n {
            dv[i] = -alpha * v[i] - tp * dv[i] - c * x[i];
        }

        dlambda.iter_mut().for_each(|d| *d = 0.0);
        linalg::mat_vec_add(a, x, 1.0, dlambda);
        linalg::mat_vec_add(a, v, theta, dlambda);
        for (i, d) in dlambda.iter_mut().enumerate() {
            *d = tp * (*d - self.instance.constraint_rhs()[i]) - c * lambda[i];
        }
    }
}

type Perturbation = dyn Fn(f64, &mut [f64]) + Send + Sync;

/// Second-order primal and dual dynamics driven by the augmented Lagrangian
/// `L^ρ(x, λ) = f(x) + <λ, Ax - b> + (ρ/2)‖Ax - b‖²`:
///
/// `x'' + (α/t^q) x' = -tˢ ∇ₓL^ρ(x, λ + θ t^κ λ') + ε(t)`,
/// `λ'' + (α/t^q) λ' = tˢ ∇_λL^ρ(x + θ t^κ x', λ)`.
#[derive(Clone)]
pub struct HeSystem {
    instance: ProblemInstance,
    params: HeParams,
    perturbation: Option<Arc<Perturbation>>,
}

impl fmt::Debug for HeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HeSystem")
            .field("params", &self.params)
            .field("perturbed", &self.perturbation.is_some())
            .finish()
    }
}

impl HeSystem {
    pub fn new(instance: ProblemInstance, params: HeParams) -> Self {
        Self {
            instance,
            params,
            perturbation: None,
        }
    }

    /// Adds `ε(t)` to the primal acceleration; the default is zero.
    pub fn with_perturbation(mut self, eps: impl Fn(f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.perturbation = Some(Arc::new(eps));
        self
    }
}

impl OdeSystem for HeSystem {
    fn dim(&self) -> usize {
        2 * self.instance.dim_primal() + 2 * self.instance.dim_dual()
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.instance.dim_primal();
        let m = self.instance.dim_dual();
        let HeParams {
            alpha,
            theta,
            rho,
            kappa,
            q,
            s,
            ..
        } = self.params;
        let (x, rest) = y.split_at(n);
        let (v, rest) = rest.split_at(n);
        let (lambda, mu) = rest.split_at(m);
        let (dx, drest) = dy.split_at_mut(n);
        let (dv, drest) = drest.split_at_mut(n);
        let (dlambda, dmu) = drest.split_at_mut(m);

        let damp = alpha / t.powf(q);
        let beta = t.powf(s);
        let ext = theta * t.powf(kappa);
        let a = self.instance.constraint_matrix();
        let b = self.instance.constraint_rhs();

        dx.copy_from_slice(v);
        dlambda.copy_from_slice(mu);

        // dmu temporarily holds the multiplier λ + θt^κ μ + ρ(Ax - b).
        linalg::mat_vec(a, x, dmu);
        for i in 0..m {
            dmu[i] = lambda[i] + ext * mu[i] + rho * (dmu[i] - b[i]);
        }
        self.instance.objective().gradient(x, dv);
        linalg::mat_t_vec_add(a, dmu, 1.0, dv);
        for i in 0..n {
            dv[i] = -damp * v[i] - beta * dv[i];
        }
        if let Some(eps) = &self.perturbation {
            eps(t, dv);
        }

        linalg::mat_vec(a, x, dmu);
        linalg::mat_vec_add(a, v, ext, dmu);
        for i in 0..m {
            dmu[i] = -damp * mu[i] + beta * (dmu[i] - b[i]);
        }
    }
}

fn split_derivative(dy: &[f64], n: usize, m: usize, second_order_dual: bool) -> FlowDerivative {
    FlowDerivative {
        dx: dy[..n].to_vec(),
        dv: dy[n..2 * n].to_vec(),
        dlambda: dy[2 * n..2 * n + m].to_vec(),
        dmu: if second_order_dual {
            dy[2 * n + m..].to_vec()
        } else {
            Vec::new()
        },
    }
}

fn check_state(
    instance: &ProblemInstance,
    t: f64,
    state: &FlowState,
    second_order_dual: bool,
) -> Result<(), DynamicsError> {
    if t <= 0.0 {
        return Err(DynamicsError::NonpositiveTime(t));
    }
    let n = instance.dim_primal();
    let m = instance.dim_dual();
    let mu_len = if second_order_dual { m } else { 0 };
    if state.x.len() != n || state.v.len() != n || state.lambda.len() != m || state.lambda_dot.len() != mu_len {
        return Err(DynamicsError::DimensionMismatch(format!(
            "state does not match a {m}x{n} instance"
        )));
    }
    Ok(())
}

pub fn rhs_main(
    instance: &ProblemInstance,
    params: &ParameterSet,
    t: f64,
    state: &FlowState,
) -> Result<FlowDerivative, DynamicsError> {
    check_state(instance, t, state, false)?;
    let sys = MainSystem::new(instance.clone(), *params);
    let mut dy = vec![0.0; sys.dim()];
    sys.rhs(t, &state.to_vec(), &mut dy);
    Ok(split_derivative(&dy, instance.dim_primal(), instance.dim_dual(), false))
}

pub fn rhs_chbani(
    instance: &ProblemInstance,
    params: &ParameterSet,
    t: f64,
    state: &FlowState,
) -> Result<FlowDerivative, DynamicsError> {
    check_state(instance, t, state, false)?;
    let sys = ChbaniSystem::new(instance.clone(), *params);
    let mut dy = vec![0.0; sys.dim()];
    sys.rhs(t, &state.to_vec(), &mut dy);
    Ok(split_derivative(&dy, instance.dim_primal(), instance.dim_dual(), false))
}

pub fn rhs_heode(
    instance: &ProblemInstance,
    params: &HeParams,
    t: f64,
    state: &FlowState,
) -> Result<FlowDerivative, DynamicsError> {
    check_state(instance, t, state, true)?;
    let sys = HeSystem::new(instance.clone(), *params);
    let mut dy = vec![0.0; sys.dim()];
    sys.rhs(t, &state.to_vec(), &mut dy);
    Ok(split_derivative(&dy, instance.dim_primal(), instance.dim_dual(), true))
}
