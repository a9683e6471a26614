//! The Tikhonov-regularized saddle path `(x_t, λ_t)` of
//! `L_t(x, λ) = f(x) + <λ, Ax - b> + (c / 2tᵖ)(‖x‖² - ‖λ‖²)`.

use nalgebra::{DMatrix, DVector};

use crate::linalg;
use crate::problem::ProblemInstance;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SaddleError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("time must be positive, got {0}")]
    NonpositiveTime(f64),
    #[error("invalid regularization schedule: {0}")]
    InvalidSchedule(String),
    #[error("Newton iteration failed to converge at t = {t} (residual {residual:e})")]
    NewtonDivergence { t: f64, residual: f64 },
    #[error("saddle system is singular at t = {0}")]
    Singular(f64),
    #[error("objective has no Hessian oracle; the general saddle solver needs one")]
    MissingHessian,
}

const NEWTON_MAX_ITERS: usize = 50;
const NEWTON_DAMPING_FLOOR: f64 = 1.0 / (1u64 << 20) as f64;

/// `ε(t) = c / tᵖ` with `c > 0` and `0 < p < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizationSchedule {
    c: f64,
    p: f64,
}

impl RegularizationSchedule {
    pub fn new(c: f64, p: f64) -> Result<Self, SaddleError> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(SaddleError::InvalidSchedule(format!("c must be positive, got {c}")));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(SaddleError::InvalidSchedule(format!("p must lie in (0, 1), got {p}")));
        }
        Ok(Self { c, p })
    }

    /// Schedule without range checks; `c = 0` gives the unregularized Lagrangian.
    pub(crate) fn unchecked(c: f64, p: f64) -> Self {
        Self { c, p }
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn epsilon(&self, t: f64) -> f64 {
        self.c / t.powf(self.p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddlePoint {
    pub t: f64,
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    /// Norm of the stacked first-order optimality residual.
    pub residual: f64,
}

impl SaddlePoint {
    pub fn norm(&self) -> f64 {
        linalg::pair_norm(self.x.as_slice(), self.lambda.as_slice())
    }

    /// `(x_t, λ_t)` stacked.
    pub fn stacked(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.x.len() + self.lambda.len());
        z.rows_mut(0, self.x.len()).copy_from(&self.x);
        z.rows_mut(self.x.len(), self.lambda.len()).copy_from(&self.lambda);
        z
    }
}

fn check_dims(instance: &ProblemInstance, x: &[f64], lambda: &[f64]) -> Result<(), SaddleError> {
    if x.len() != instance.dim_primal() || lambda.len() != instance.dim_dual() {
        return Err(SaddleError::DimensionMismatch(format!(
            "got x of length {} and λ of length {}, instance is {}x{}",
            x.len(),
            lambda.len(),
            instance.dim_dual(),
            instance.dim_primal()
        )));
    }
    Ok(())
}

/// `L(x, λ) = f(x) + <λ, Ax - b>`.
pub fn lagrangian(instance: &ProblemInstance, x: &[f64], lambda: &[f64]) -> Result<f64, SaddleError> {
    check_dims(instance, x, lambda)?;
    let r = instance.constraint_residual(x);
    Ok(instance.value(x) + linalg::dot(lambda, &r))
}

pub fn regularized_lagrangian(
    instance: &ProblemInstance,
    schedule: &RegularizationSchedule,
    t: f64,
    x: &[f64],
    lambda: &[f64],
) -> Result<f64, SaddleError> {
    if t <= 0.0 {
        return Err(SaddleError::NonpositiveTime(t));
    }
    let base = lagrangian(instance, x, lambda)?;
    let eps = schedule.epsilon(t);
    Ok(base + 0.5 * eps * (linalg::norm_sq(x) - linalg::norm_sq(lambda)))
}

/// Stacked residual `(∇f(x) + Aᵀλ + εx, Ax - b - ελ)`.
fn optimality_residual(
    instance: &ProblemInstance,
    eps: f64,
    x: &[f64],
    lambda: &[f64],
) -> DVector<f64> {
    let n = instance.dim_primal();
    let m = instance.dim_dual();
    let mut res = DVector::zeros(n + m);
    {
        let (top, bottom) = res.as_mut_slice().split_at_mut(n);
        instance.objective().gradient(x, top);
        linalg::mat_t_vec_add(instance.constraint_matrix(), lambda, 1.0, top);
        for (r, xi) in top.iter_mut().zip(x) {
            *r += eps * xi;
        }
        instance.constraint_residual_into(x, bottom);
        for (r, li) in bottom.iter_mut().zip(lambda) {
            *r -= eps * li;
        }
    }
    res
}

/// `[(H + εI) Aᵀ; A -εI]`.
fn saddle_jacobian(hessian: &DMatrix<f64>, a: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let n = hessian.nrows();
    let m = a.nrows();
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(hessian);
    for i in 0..n {
        k[(i, i)] += eps;
    }
    if m > 0 {
        k.view_mut((0, n), (n, m)).copy_from(&a.transpose());
        k.view_mut((n, 0), (m, n)).copy_from(a);
        for i in 0..m {
            k[(n + i, n + i)] = -eps;
        }
    }
    k
}

fn tolerance(x: &[f64], lambda: &[f64]) -> f64 {
    1e-11 * (1.0 + linalg::pair_norm(x, lambda))
}

/// Unique saddle point of `L_t`.
///
/// Quadratic objectives take one linear solve of the shifted KKT matrix
/// (plus one refinement sweep if the residual is above tolerance). Other
/// objectives run damped Newton from `warm_start` (or the origin).
pub fn solve_saddle(
    instance: &ProblemInstance,
    schedule: &RegularizationSchedule,
    t: f64,
    warm_start: Option<&SaddlePoint>,
) -> Result<SaddlePoint, SaddleError> {
    if t <= 0.0 {
        return Err(SaddleError::NonpositiveTime(t));
    }
    let n = instance.dim_primal();
    let m = instance.dim_dual();
    let eps = schedule.epsilon(t);
    let a = instance.constraint_matrix();

    if let Some(quad) = instance.objective().as_quadratic() {
        let k = saddle_jacobian(quad.q_mat(), a, eps);
        let lu = k.lu();
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-quad.linear()));
        rhs.rows_mut(n, m).copy_from(instance.constraint_rhs());
        let mut z = lu.solve(&rhs).ok_or(SaddleError::Singular(t))?;
        let mut residual = optimality_residual(instance, eps, &z.as_slice()[..n], &z.as_slice()[n..]);
        if residual.norm() > tolerance(&z.as_slice()[..n], &z.as_slice()[n..]) {
            let dz = lu.solve(&residual).ok_or(SaddleError::Singular(t))?;
            z -= dz;
            residual = optimality_residual(instance, eps, &z.as_slice()[..n], &z.as_slice()[n..]);
        }
        return Ok(SaddlePoint {
            t,
            x: z.rows(0, n).into_owned(),
            lambda: z.rows(n, m).into_owned(),
            residual: residual.norm(),
        });
    }

    let (mut x, mut lambda) = match warm_start {
        Some(w) if w.x.len() == n && w.lambda.len() == m => (w.x.clone(), w.lambda.clone()),
        _ => (DVector::zeros(n), DVector::zeros(m)),
    };
    let mut res = optimality_residual(instance, eps, x.as_slice(), lambda.as_slice());
    let mut res_norm = res.norm();
    for _ in 0..NEWTON_MAX_ITERS {
        if res_norm <= tolerance(x.as_slice(), lambda.as_slice()) {
            return Ok(SaddlePoint {
                t,
                x,
                lambda,
                residual: res_norm,
            });
        }
        let hessian = instance
            .objective()
            .hessian(x.as_slice())
            .ok_or(SaddleError::MissingHessian)?;
        let k = saddle_jacobian(&hessian, a, eps);
        let step = k.lu().solve(&res).ok_or(SaddleError::Singular(t))?;
        let mut damping = 1.0;
        loop {
            let x_try = &x - step.rows(0, n) * damping;
            let l_try = &lambda - step.rows(n, m) * damping;
            let r_try = optimality_residual(instance, eps, x_try.as_slice(), l_try.as_slice());
            let n_try = r_try.norm();
            if n_try < res_norm || damping <= NEWTON_DAMPING_FLOOR {
                x = x_try;
                lambda = l_try;
                res = r_try;
                res_norm = n_try;
                break;
            }
            damping *= 0.5;
        }
    }
    if res_norm <= tolerance(x.as_slice(), lambda.as_slice()) {
        return Ok(SaddlePoint {
            t,
            x,
            lambda,
            residual: res_norm,
        });
    }
    Err(SaddleError::NewtonDivergence {
        t,
        residual: res_norm,
    })
}

fn fd_step(t: f64) -> f64 {
    (1e-5 * t).max(1e-7)
}

/// Central finite difference of the saddle path, `d/dt (x_t, λ_t)`.
pub fn saddle_velocity(
    instance: &ProblemInstance,
    schedule: &RegularizationSchedule,
    t: f64,
) -> Result<DVector<f64>, SaddleError> {
    saddle_velocity_with_step(instance, schedule, t, fd_step(t))
}

pub fn saddle_velocity_with_step(
    instance: &ProblemInstance,
    schedule: &RegularizationSchedule,
    t: f64,
    h: f64,
) -> Result<DVector<f64>, SaddleError> {
    let center = solve_saddle(instance, schedule, t, None)?;
    let hi = solve_saddle(instance, schedule, t + h, Some(&center))?;
    let lo = solve_saddle(instance, schedule, t - h, Some(&center))?;
    Ok((hi.stacked() - lo.stacked()) / (2.0 * h))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeIdentity {
    /// Finite-difference `d/dt L_t(x_t, λ_t)`.
    pub lhs: f64,
    /// `(cp / 2t^{p+1}) (‖λ_t‖² - ‖x_t‖²)`.
    pub rhs: f64,
    pub abs_error: f64,
}

pub fn check_saddle_derivative_identity(
    instance: &ProblemInstance,
    schedule: &RegularizationSchedule,
    t: f64,
) -> Result<DerivativeIdentity, SaddleError> {
    check_saddle_derivative_identity_with_step(instance, schedule, t, 1e-4 * t)
}

pub fn check_saddle_derivative_identity_with_step(
    instance: &ProblemInstance,
    schedule: &RegularizationSchedule,
    t: f64,
    h: f64,
) -> Result<DerivativeIdentity, SaddleError> {
    let center = solve_saddle(instance, schedule, t, None)?;
    let value_at = |tau: f64| -> Result<f64, SaddleError> {
        let sp = solve_saddle(instance, schedule, tau, Some(&center))?;
        regularized_lagrangian(instance, schedule, tau, sp.x.as_slice(), sp.lambda.as_slice())
    };
    let lhs = (value_at(t + h)? - value_at(t - h)?) / (2.0 * h);
    let rhs = schedule.c * schedule.p / (2.0 * t.powf(schedule.p + 1.0))
        * (center.lambda.norm_squared() - center.x.norm_squared());
    Ok(DerivativeIdentity {
        lhs,
        rhs,
        abs_error: (lhs - rhs).abs(),
    })
}
