//! Linearly constrained convex problems `min f(x) s.t. Ax = b` and their
//! primal-dual solution oracles.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg;

#[derive(Debug, thiserror::Error)]
pub enum ProblemError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("constraints Ax = b are infeasible (least-squares residual {0:e})")]
    InfeasibleConstraints(f64),
    #[error("KKT system is inconsistent: no primal-dual solution (residual {0:e})")]
    KktInconsistent(f64),
    #[error("objective is not quadratic; closed-form KKT solve unavailable")]
    NotQuadratic,
    #[error("solution oracle violates KKT conditions (stationarity {stationarity:e}, feasibility {feasibility:e})")]
    BadOracle { stationarity: f64, feasibility: f64 },
    #[error("gradient disagrees with finite differences at sample {index} (relative error {error:e})")]
    GradientMismatch { index: usize, error: f64 },
    #[error("unknown built-in problem `{0}`")]
    UnknownBuiltin(String),
    #[error("cannot read instance file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed instance file {path}: {message}")]
    Parse { path: String, message: String },
}

/// A smooth convex objective with first- and (optionally) second-order oracles.
///
/// Implementations must be pure functions of their inputs.
pub trait Objective: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Writes `∇f(x)` into `out`.
    fn gradient(&self, x: &[f64], out: &mut [f64]);

    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Bregman divergence `f(x) - f(y) - <∇f(y), x - y>`.
    ///
    /// Quadratic objectives override this with the cancellation-free form
    /// `½ (x-y)ᵀ Q (x-y)`, which keeps gap metrics nonnegative far below
    /// the magnitude of `f`.
    fn bregman(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.gradient(y, &mut g);
        let lin: f64 = g.iter().zip(x.iter().zip(y)).map(|(g, (a, b))| g * (a - b)).sum();
        self.value(x) - self.value(y) - lin
    }

    fn as_quadratic(&self) -> Option<&QuadraticObjective> {
        None
    }
}

/// `f(x) = ½ xᵀQx + qᵀx + r` with `Q` symmetric positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    q_mat: DMatrix<f64>,
    linear: DVector<f64>,
    constant: f64,
}

impl QuadraticObjective {
    pub fn new(
        q_mat: DMatrix<f64>,
        linear: DVector<f64>,
        constant: f64,
    ) -> Result<Self, ProblemError> {
        let n = q_mat.nrows();
        if q_mat.ncols() != n {
            return Err(ProblemError::DimensionMismatch(format!(
                "Q is {}x{}, expected square",
                n,
                q_mat.ncols()
            )));
        }
        if linear.len() != n {
            return Err(ProblemError::DimensionMismatch(format!(
                "q has length {}, Q is {n}x{n}",
                linear.len()
            )));
        }
        let asym = (&q_mat - q_mat.transpose()).amax();
        if asym > 1e-12 {
            return Err(ProblemError::NotSymmetric(asym));
        }
        if n > 0 {
            let min_eig = q_mat.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-10 {
                return Err(ProblemError::NotPsd(min_eig));
            }
        }
        Ok(Self {
            q_mat,
            linear,
            constant,
        })
    }

    pub fn q_mat(&self) -> &DMatrix<f64> {
        &self.q_mat
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    fn quad_form(&self, d: &[f64]) -> f64 {
        let mut qd = vec![0.0; d.len()];
        linalg::mat_vec(&self.q_mat, d, &mut qd);
        0.5 * linalg::dot(d, &qd)
    }
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.quad_form(x) + linalg::dot(self.linear.as_slice(), x) + self.constant
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        linalg::mat_vec(&self.q_mat, x, out);
        for (o, q) in out.iter_mut().zip(self.linear.iter()) {
            *o += q;
        }
    }

    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.q_mat.clone())
    }

    fn bregman(&self, x: &[f64], y: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        self.quad_form(&d)
    }

    fn as_quadratic(&self) -> Option<&QuadraticObjective> {
        Some(self)
    }
}

/// `f(x) = (x₁ - x₂)² + x₃²`, evaluated in its factored form.
#[derive(Debug, Clone)]
pub struct PaperObjective {
    quadratic: QuadraticObjective,
}

impl PaperObjective {
    pub fn new() -> Self {
        let q = DMatrix::from_row_slice(3, 3, &[2.0, -2.0, 0.0, -2.0, 2.0, 0.0, 0.0, 0.0, 2.0]);
        let quadratic = QuadraticObjective::new(q, DVector::zeros(3), 0.0)
            .expect("built-in quadratic form is PSD");
        Self { quadratic }
    }
}

impl Default for PaperObjective {
    fn default() -> Self {
        Self::new()
    }
}

impl Objective for PaperObjective {
    fn dim(&self) -> usize {
        3
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = x[0] - x[1];
        d * d + x[2] * x[2]
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let d = x[0] - x[1];
        out[0] = 2.0 * d;
        out[1] = -2.0 * d;
        out[2] = 2.0 * x[2];
    }

    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.quadratic.q_mat.clone())
    }

    fn bregman(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = (x[0] - y[0]) - (x[1] - y[1]);
        let e = x[2] - y[2];
        d * d + e * e
    }

    fn as_quadratic(&self) -> Option<&QuadraticObjective> {
        Some(&self.quadratic)
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type HessianFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

/// Objective assembled from user closures. Convexity is the caller's promise.
#[derive(Clone)]
pub struct FnObjective {
    dim: usize,
    value: Arc<ValueFn>,
    gradient: Arc<GradientFn>,
    hessian: Option<Arc<HessianFn>>,
}

impl FnObjective {
    pub fn new(
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian: None,
        }
    }

    pub fn with_hessian(
        mut self,
        hessian: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.hessian = Some(Arc::new(hessian));
        self
    }
}

impl fmt::Debug for FnObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnObjective")
            .field("dim", &self.dim)
            .field("has_hessian", &self.hessian.is_some())
            .finish()
    }
}

impl Objective for FnObjective {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (self.gradient)(x, out)
    }

    fn hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        self.hessian.as_ref().map(|h| h(x))
    }
}

/// Minimum-norm primal-dual solution `(x*, λ*)` and the optimal value.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionOracle {
    pub min_norm_primal: DVector<f64>,
    pub min_norm_dual: DVector<f64>,
    pub optimal_value: f64,
}

impl SolutionOracle {
    pub fn norm(&self) -> f64 {
        linalg::pair_norm(self.min_norm_primal.as_slice(), self.min_norm_dual.as_slice())
    }
}

/// A problem `min f(x) s.t. Ax = b`. Immutable once built; cheap to clone.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    name: String,
    objective: Arc<dyn Objective>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    oracle: Option<SolutionOracle>,
}

impl ProblemInstance {
    /// Builds an instance, certifying by least squares that `{x : Ax = b}`
    /// is nonempty.
    pub fn new(
        name: impl Into<String>,
        objective: Arc<dyn Objective>,
        a: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Result<Self, ProblemError> {
        let n = objective.dim();
        if n == 0 {
            return Err(ProblemError::DimensionMismatch("empty primal space".into()));
        }
        if a.ncols() != n && a.nrows() > 0 {
            return Err(ProblemError::DimensionMismatch(format!(
                "A has {} columns, objective has dimension {n}",
                a.ncols()
            )));
        }
        if a.nrows() != b.len() {
            return Err(ProblemError::DimensionMismatch(format!(
                "A has {} rows, b has length {}",
                a.nrows(),
                b.len()
            )));
        }
        let a = if a.nrows() == 0 { DMatrix::zeros(0, n) } else { a };
        if a.nrows() > 0 {
            let residual = least_squares_residual(&a, &b);
            if residual > 1e-10 * (1.0 + b.norm()) {
                return Err(ProblemError::InfeasibleConstraints(residual));
            }
        }
        Ok(Self {
            name: name.into(),
            objective,
            a,
            b,
            oracle: None,
        })
    }

    /// Attaches a caller-supplied oracle after checking the KKT conditions.
    pub fn with_oracle(mut self, oracle: SolutionOracle) -> Result<Self, ProblemError> {
        if oracle.min_norm_primal.len() != self.dim_primal()
            || oracle.min_norm_dual.len() != self.dim_dual()
        {
            return Err(ProblemError::DimensionMismatch(
                "oracle dimensions do not match the instance".into(),
            ));
        }
        let (stationarity, feasibility) =
            self.kkt_residual(oracle.min_norm_primal.as_slice(), oracle.min_norm_dual.as_slice());
        if stationarity > 1e-9 || feasibility > 1e-9 {
            return Err(ProblemError::BadOracle {
                stationarity,
                feasibility,
            });
        }
        self.oracle = Some(oracle);
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim_primal(&self) -> usize {
        self.objective.dim()
    }

    pub fn dim_dual(&self) -> usize {
        self.a.nrows()
    }

    pub fn objective(&self) -> &dyn Objective {
        self.objective.as_ref()
    }

    pub fn constraint_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn constraint_rhs(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn oracle(&self) -> Option<&SolutionOracle> {
        self.oracle.as_ref()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.objective.value(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim_primal()];
        self.objective.gradient(x, &mut g);
        g
    }

    /// `out = Ax - b`.
    pub fn constraint_residual_into(&self, x: &[f64], out: &mut [f64]) {
        linalg::mat_vec(&self.a, x, out);
        for (o, b) in out.iter_mut().zip(self.b.iter()) {
            *o -= b;
        }
    }

    pub fn constraint_residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.dim_dual()];
        self.constraint_residual_into(x, &mut r);
        r
    }

    /// Norms of `∇f(x) + Aᵀλ` and `Ax - b`.
    pub fn kkt_residual(&self, x: &[f64], lambda: &[f64]) -> (f64, f64) {
        let mut g = self.gradient(x);
        linalg::mat_t_vec_add(&self.a, lambda, 1.0, &mut g);
        (linalg::norm(&g), linalg::norm(&self.constraint_residual(x)))
    }

    /// Central finite-difference check of the gradient oracle at `samples`
    /// seeded random points in `[-scale, scale]ⁿ`.
    pub fn check_gradient(&self, samples: usize, seed: u64, scale: f64) -> Result<(), ProblemError> {
        let n = self.dim_primal();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for index in 0..samples {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
            let g = self.gradient(&x);
            let h = 1e-6 * (1.0 + linalg::norm(&x));
            let mut xp = x.clone();
            let fd: Vec<f64> = (0..n)
                .map(|i| {
                    xp[i] = x[i] + h;
                    let fp = self.value(&xp);
                    xp[i] = x[i] - h;
                    let fm = self.value(&xp);
                    xp[i] = x[i];
                    (fp - fm) / (2.0 * h)
                })
                .collect();
            let error = linalg::dist(&fd, &g) / (1.0 + linalg::norm(&g));
            if error > 1e-5 {
                return Err(ProblemError::GradientMismatch { index, error });
            }
        }
        Ok(())
    }
}

fn least_squares_residual(a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    let svd = a.clone().svd(true, true);
    let cutoff = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    match svd.solve(b, cutoff) {
        Ok(x) => (a * x - b).norm(),
        Err(_) => f64::INFINITY,
    }
}

/// The 3-variable test problem `min (x₁-x₂)² + x₃²  s.t.  x₁ - x₂ + x₃ = 2`
/// with its minimum-norm solution `x* = (½, -½, 1)`, `λ* = -2`, `f* = 2`.
pub fn build_paper_problem() -> ProblemInstance {
    let a = DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 1.0]);
    let b = DVector::from_element(1, 2.0);
    let oracle = SolutionOracle {
        min_norm_primal: DVector::from_column_slice(&[0.5, -0.5, 1.0]),
        min_norm_dual: DVector::from_element(1, -2.0),
        optimal_value: 2.0,
    };
    ProblemInstance::new("paper", Arc::new(PaperObjective::new()), a, b)
        .and_then(|p| p.with_oracle(oracle))
        .expect("built-in problem is consistent")
}

/// Quadratic instance with exact oracles. No solution oracle is attached;
/// see [`solve_min_norm_kkt`].
pub fn build_quadratic(
    q_mat: DMatrix<f64>,
    linear: DVector<f64>,
    constant: f64,
    a: DMatrix<f64>,
    b: DVector<f64>,
) -> Result<ProblemInstance, ProblemError> {
    let objective = QuadraticObjective::new(q_mat, linear, constant)?;
    ProblemInstance::new("quadratic", Arc::new(objective), a, b)
}

/// Minimum-norm element of the KKT solution set of a quadratic instance:
/// the least-norm solution of `[Q Aᵀ; A 0] (x; λ) = (-q; b)`, with singular
/// values below `1e-12 · σ_max` treated as zero.
pub fn solve_min_norm_kkt(instance: &ProblemInstance) -> Result<SolutionOracle, ProblemError> {
    let quad = instance
        .objective()
        .as_quadratic()
        .ok_or(ProblemError::NotQuadratic)?;
    let n = instance.dim_primal();
    let m = instance.dim_dual();
    let a = instance.constraint_matrix();

    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(quad.q_mat());
    if m > 0 {
        kkt.view_mut((0, n), (n, m)).copy_from(&a.transpose());
        kkt.view_mut((n, 0), (m, n)).copy_from(a);
    }
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-quad.linear()));
    rhs.rows_mut(n, m).copy_from(instance.constraint_rhs());

    let svd = kkt.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let z = if sigma_max == 0.0 {
        DVector::zeros(n + m)
    } else {
        svd.solve(&rhs, 1e-12 * sigma_max)
            .map_err(|_| ProblemError::KktInconsistent(f64::INFINITY))?
    };
    let residual = (&kkt * &z - &rhs).norm();
    if residual > 1e-9 * (1.0 + rhs.norm()) {
        return Err(ProblemError::KktInconsistent(residual));
    }
    let x = z.rows(0, n).into_owned();
    let lambda = z.rows(n, m).into_owned();
    let optimal_value = instance.value(x.as_slice());
    Ok(SolutionOracle {
        min_norm_primal: x,
        min_norm_dual: lambda,
        optimal_value,
    })
}

/// On-disk instance description (TOML). Matrices are lists of rows.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    #[serde(rename = "Q")]
    pub q_mat: Vec<Vec<f64>>,
    #[serde(default)]
    pub q: Option<Vec<f64>>,
    #[serde(default)]
    pub r: f64,
    #[serde(rename = "A", default)]
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Vec<f64>,
    #[serde(default)]
    pub oracle: Option<OracleFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OracleFile {
    pub x_star: Vec<f64>,
    pub lambda_star: Vec<f64>,
    pub f_star: f64,
}

fn rows_to_matrix(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>, ProblemError> {
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(ProblemError::DimensionMismatch(format!(
            "{what} row {bad} has length {}, expected {ncols}",
            rows[bad].len()
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

impl InstanceFile {
    /// Builds the instance. Without an `oracle` table the minimum-norm KKT
    /// point is computed; a supplied oracle is validated instead.
    pub fn build(&self, name: &str) -> Result<ProblemInstance, ProblemError> {
        let n = self.q_mat.len();
        let q_mat = rows_to_matrix(&self.q_mat, n, "Q")?;
        let linear = DVector::from_vec(self.q.clone().unwrap_or_else(|| vec![0.0; n]));
        let a = rows_to_matrix(&self.a, n, "A")?;
        let b = DVector::from_column_slice(&self.b);
        let objective = QuadraticObjective::new(q_mat, linear, self.r)?;
        let instance = ProblemInstance::new(name, Arc::new(objective), a, b)?;
        let oracle = match &self.oracle {
            Some(o) => SolutionOracle {
                min_norm_primal: DVector::from_column_slice(&o.x_star),
                min_norm_dual: DVector::from_column_slice(&o.lambda_star),
                optimal_value: o.f_star,
            },
            None => solve_min_norm_kkt(&instance)?,
        };
        instance.with_oracle(oracle)
    }

    pub fn load(path: &Path) -> Result<Self, ProblemError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProblemError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ProblemError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Resolves a problem reference: `paper` or a path to an instance file.
pub fn load_problem(reference: &str) -> Result<ProblemInstance, ProblemError> {
    match reference {
        "paper" => Ok(build_paper_problem()),
        other if other.ends_with(".toml") => {
            let path = Path::new(other);
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| other.to_string());
            InstanceFile::load(path)?.build(&stem)
        }
        other => Err(ProblemError::UnknownBuiltin(other.to_string())),
    }
}
