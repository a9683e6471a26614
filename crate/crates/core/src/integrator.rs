//! Adaptive Bogacki-Shampine 3(2) integration with cubic Hermite sampling
//! on a prescribed time grid.

use serde::{Deserialize, Serialize};

/// A first-order system `y' = F(t, y)`. Evaluations must be pure.
pub trait OdeSystem: Sync {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

/// Wraps a closure as an [`OdeSystem`].
pub struct FnSystem<F> {
    dim: usize,
    f: F,
}

impl<F> FnSystem<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> OdeSystem for FnSystem<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (self.f)(t, y, dy)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IntegratorError {
    #[error("step size {h:e} fell below h_min at t = {t}")]
    StepUnderflow { t: f64, h: f64 },
    #[error("exceeded {max_steps} steps at t = {t}")]
    MaxStepsExceeded { t: f64, max_steps: u64 },
    #[error("non-finite state produced after t = {last_good_t}")]
    NonFiniteState { last_good_t: f64 },
    #[error("invalid time span [{t0}, {t_end}]")]
    BadSpan { t0: f64, t_end: f64 },
    #[error("invalid sample grid: {0}")]
    BadGrid(String),
    #[error("invalid integrator configuration: {0}")]
    BadConfig(String),
}

impl IntegratorError {
    /// Time at which the failure was detected, when meaningful.
    pub fn failing_time(&self) -> Option<f64> {
        match self {
            Self::StepUnderflow { t, .. } | Self::MaxStepsExceeded { t, .. } => Some(*t),
            Self::NonFiniteState { last_good_t } => Some(*last_good_t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// `None` selects the initial step automatically.
    pub h_init: Option<f64>,
    pub h_min: f64,
    /// `None` means `0.1 · (t_end - t0)`.
    pub h_max: Option<f64>,
    pub max_steps: u64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            h_init: None,
            h_min: 1e-12,
            h_max: None,
            max_steps: 10_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), IntegratorError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.rtol) || !positive(self.atol) {
            return Err(IntegratorError::BadConfig("rtol and atol must be positive".into()));
        }
        if !positive(self.h_min) {
            return Err(IntegratorError::BadConfig("h_min must be positive".into()));
        }
        if self.h_init.is_some_and(|h| !positive(h)) || self.h_max.is_some_and(|h| !positive(h)) {
            return Err(IntegratorError::BadConfig("h_init and h_max must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(IntegratorError::BadConfig("max_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegratorStats {
    pub accepted: u64,
    pub rejected: u64,
    pub rhs_evals: u64,
    pub final_step: f64,
}

/// States sampled on the requested grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: IntegratorStats,
}

/// `n_points` geometrically spaced times from `t0` to `t_end`, endpoints exact.
pub fn make_log_grid(t0: f64, t_end: f64, n_points: usize) -> Result<Vec<f64>, IntegratorError> {
    if !(t0 > 0.0 && t_end > t0 && t_end.is_finite()) || n_points < 2 {
        return Err(IntegratorError::BadSpan { t0, t_end });
    }
    let ratio = t_end / t0;
    let last = (n_points - 1) as f64;
    let mut grid: Vec<f64> = (0..n_points)
        .map(|i| t0 * ratio.powf(i as f64 / last))
        .collect();
    grid[0] = t0;
    grid[n_points - 1] = t_end;
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(IntegratorError::BadSpan { t0, t_end });
    }
    Ok(grid)
}

// Bogacki-Shampine tableau.
const C2: f64 = 0.5;
const C3: f64 = 0.75;
const B1: f64 = 2.0 / 9.0;
const B2: f64 = 1.0 / 3.0;
const B3: f64 = 4.0 / 9.0;
// Difference between the third- and embedded second-order weights.
const E1: f64 = 2.0 / 9.0 - 7.0 / 24.0;
const E2: f64 = 1.0 / 3.0 - 1.0 / 4.0;
const E3: f64 = 4.0 / 9.0 - 1.0 / 3.0;
const E4: f64 = -1.0 / 8.0;

// PI controller; gains are 0.3/k and 0.4/k with k = 3 for a 3(2) pair.
const SAFETY: f64 = 0.9;
const K_I: f64 = 0.3 / 3.0;
const K_P: f64 = 0.4 / 3.0;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

struct Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
        }
    }
}

/// One BS3 step from `(t, y)` with `ws.k1 = F(t, y)` already set.
/// Leaves the third-order solution in `ws.y_new` and `F(t+h, y_new)` in `ws.k4`;
/// returns the scaled error norm.
fn bs3_step<S: OdeSystem + ?Sized>(
    system: &S,
    t: f64,
    y: &[f64],
    h: f64,
    cfg: &IntegratorConfig,
    ws: &mut Workspace,
) -> f64 {
    let n = y.len();
    for i in 0..n {
        ws.tmp[i] = y[i] + h * C2 * ws.k1[i];
    }
    system.rhs(t + C2 * h, &ws.tmp, &mut ws.k2);
    for i in 0..n {
        ws.tmp[i] = y[i] + h * C3 * ws.k2[i];
    }
    system.rhs(t + C3 * h, &ws.tmp, &mut ws.k3);
    for i in 0..n {
        ws.y_new[i] = y[i] + h * (B1 * ws.k1[i] + B2 * ws.k2[i] + B3 * ws.k3[i]);
    }
    system.rhs(t + h, &ws.y_new, &mut ws.k4);
    let mut err: f64 = 0.0;
    for i in 0..n {
        let e = h * (E1 * ws.k1[i] + E2 * ws.k2[i] + E3 * ws.k3[i] + E4 * ws.k4[i]);
        let scale = cfg.atol + cfg.rtol * y[i].abs().max(ws.y_new[i].abs());
        err = err.max(e.abs() / scale);
    }
    err
}

fn initial_step<S: OdeSystem + ?Sized>(
    system: &S,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    cfg: &IntegratorConfig,
) -> f64 {
    let n = y0.len();
    let rms = |v: &dyn Fn(usize) -> f64| -> f64 {
        let s: f64 = (0..n)
            .map(|i| {
                let sc = cfg.atol + cfg.rtol * y0[i].abs();
                (v(i) / sc).powi(2)
            })
            .sum();
        (s / n.max(1) as f64).sqrt()
    };
    let d0 = rms(&|i| y0[i]);
    let d1 = rms(&|i| f0[i]);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<f64> = (0..n).map(|i| y0[i] + h0 * f0[i]).collect();
    let mut f1 = vec![0.0; n];
    system.rhs(t0 + h0, &y1, &mut f1);
    let d2 = rms(&|i| f1[i] - f0[i]) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 3.0)
    };
    (100.0 * h0).min(h1)
}

fn hermite(t0: f64, h: f64, y0: &[f64], f0: &[f64], y1: &[f64], f1: &[f64], t: f64, out: &mut Vec<f64>) {
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    out.clear();
    out.extend((0..y0.len()).map(|i| h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i]));
}

/// Integrates `system` from `t0` to `t_end` and returns the state at every
/// time in `grid` (sorted, inside `[t0, t_end]`).
pub fn integrate<S: OdeSystem + ?Sized>(
    system: &S,
    t0: f64,
    t_end: f64,
    y0: &[f64],
    cfg: &IntegratorConfig,
    grid: &[f64],
) -> Result<Trajectory, IntegratorError> {
    cfg.validate()?;
    if !(t0 > 0.0 && t_end > t0 && t_end.is_finite()) {
        return Err(IntegratorError::BadSpan { t0, t_end });
    }
    if y0.len() != system.dim() {
        return Err(IntegratorError::BadConfig(format!(
            "initial state has length {}, system dimension is {}",
            y0.len(),
            system.dim()
        )));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(IntegratorError::NonFiniteState { last_good_t: t0 });
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(IntegratorError::BadGrid("times must be strictly increasing".into()));
    }
    if grid.first().is_some_and(|&g| g < t0) || grid.last().is_some_and(|&g| g > t_end) {
        return Err(IntegratorError::BadGrid(format!("times must lie in [{t0}, {t_end}]")));
    }

    let n = y0.len();
    let h_max = cfg.h_max.unwrap_or(0.1 * (t_end - t0));
    let mut ws = Workspace::new(n);
    let mut stats = IntegratorStats::default();
    let mut times = Vec::with_capacity(grid.len());
    let mut states = Vec::with_capacity(grid.len());
    let mut next = 0;

    let mut t = t0;
    let mut y = y0.to_vec();
    system.rhs(t, &y, &mut ws.k1);
    stats.rhs_evals += 1;
    while next < grid.len() && grid[next] <= t0 {
        times.push(grid[next]);
        states.push(y.clone());
        next += 1;
    }

    let mut h = match cfg.h_init {
        Some(h) => h,
        None => {
            stats.rhs_evals += 1;
            initial_step(system, t0, &y, &ws.k1, cfg)
        }
    }
    .clamp(cfg.h_min, h_max);
    let mut err_prev: f64 = 1.0;
    let mut last_rejected = false;
    let mut dense = Vec::with_capacity(n);

    while t < t_end {
        if stats.accepted + stats.rejected >= cfg.max_steps {
            return Err(IntegratorError::MaxStepsExceeded {
                t,
                max_steps: cfg.max_steps,
            });
        }
        if h < cfg.h_min {
            return Err(IntegratorError::StepUnderflow { t, h });
        }
        let mut last_step = false;
        if t + h >= t_end || t + 1.01 * h >= t_end {
            h = t_end - t;
            last_step = true;
        }

        let err = bs3_step(system, t, &y, h, cfg, &mut ws);
        stats.rhs_evals += 3;

        if !err.is_finite() || ws.y_new.iter().any(|v| !v.is_finite()) {
            // Shrink hard; a persistent blow-up ends here.
            stats.rejected += 1;
            h *= FAC_MIN;
            last_rejected = true;
            if h < cfg.h_min {
                return Err(IntegratorError::NonFiniteState { last_good_t: t });
            }
            continue;
        }

        if err <= 1.0 {
            let t_new = if last_step { t_end } else { t + h };
            while next < grid.len() && grid[next] <= t_new {
                let tg = grid[next];
                if tg == t_new {
                    states.push(ws.y_new.clone());
                } else {
                    hermite(t, h, &y, &ws.k1, &ws.y_new, &ws.k4, tg, &mut dense);
                    states.push(dense.clone());
                }
                times.push(tg);
                next += 1;
            }
            stats.accepted += 1;
            stats.final_step = h;
            t = t_new;
            std::mem::swap(&mut y, &mut ws.y_new);
            std::mem::swap(&mut ws.k1, &mut ws.k4);

            let err_c = err.max(1e-10);
            let mut fac = SAFETY * err_c.powf(-K_I) * (err_prev / err_c).powf(K_P);
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if last_rejected {
                fac = fac.min(1.0);
            }
            err_prev = err_c;
            last_rejected = false;
            h = (h * fac).min(h_max);
        } else {
            stats.rejected += 1;
            let fac = (SAFETY * err.powf(-1.0 / 3.0)).clamp(FAC_MIN, 1.0);
            h *= fac;
            last_rejected = true;
        }
    }

    Ok(Trajectory {
        times,
        states,
        stats,
    })
}

/// Fixed-step BS3 (third-order member only) from `t0` to `t_end` in `steps`
/// equal steps. Used for order verification.
pub fn integrate_fixed<S: OdeSystem + ?Sized>(
    system: &S,
    t0: f64,
    t_end: f64,
    y0: &[f64],
    steps: usize,
) -> Vec<f64> {
    let n = y0.len();
    let cfg = IntegratorConfig::default();
    let mut ws = Workspace::new(n);
    let h = (t_end - t0) / steps as f64;
    let mut y = y0.to_vec();
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        system.rhs(t, &y, &mut ws.k1);
        bs3_step(system, t, &y, h, &cfg, &mut ws);
        std::mem::swap(&mut y, &mut ws.y_new);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> FnSystem<impl Fn(f64, &[f64], &mut [f64]) + Sync> {
        FnSystem::new(1, |_t, y: &[f64], dy: &mut [f64]| dy[0] = -y[0])
    }

    #[test]
    fn exponential_decay() {
        let cfg = IntegratorConfig::default();
        let traj = integrate(&decay(), 1.0, 6.0, &[1.0], &cfg, &[6.0]).unwrap();
        let exact = (-5.0f64).exp();
        let err = (traj.states[0][0] - exact).abs();
        assert!(err <= 10.0 * (cfg.rtol * exact + cfg.atol), "err {err:e}");
    }

    #[test]
    fn harmonic_oscillator_period() {
        let sys = FnSystem::new(2, |_t, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        });
        let t0 = 1.0;
        let t1 = t0 + 2.0 * std::f64::consts::PI;
        let grid = make_log_grid(t0, t1, 50).unwrap();
        let traj = integrate(&sys, t0, t1, &[1.0, 0.0], &IntegratorConfig::default(), &grid).unwrap();
        let last = traj.states.last().unwrap();
        assert!((last[0] - 1.0).abs() < 1e-6 && last[1].abs() < 1e-6, "{last:?}");
        // Dense output against the closed form at every sample.
        for (t, s) in traj.times.iter().zip(&traj.states) {
            assert!((s[0] - (t - t0).cos()).abs() < 1e-6);
        }
    }

    #[test]
    fn third_order_convergence() {
        let sys = FnSystem::new(1, |t: f64, y: &[f64], dy: &mut [f64]| dy[0] = t.cos() * y[0]);
        let exact = 1.0f64.sin().exp();
        let e1 = (integrate_fixed(&sys, 0.0, 1.0, &[1.0], 20)[0] - exact).abs();
        let e2 = (integrate_fixed(&sys, 0.0, 1.0, &[1.0], 40)[0] - exact).abs();
        let ratio = e1 / e2;
        assert!((6.0..=10.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn log_grid() {
        let g = make_log_grid(1.0, 100.0, 3).unwrap();
        assert_eq!(g.len(), 3);
        assert!((g[1] - 10.0).abs() < 1e-12);
        let g = make_log_grid(1.0, 1e4, 5).unwrap();
        for (a, b) in g.iter().zip([1.0, 10.0, 1e2, 1e3, 1e4]) {
            assert!((a - b).abs() <= 1e-12 * b);
        }
        assert_eq!(g[0], 1.0);
        assert_eq!(g[4], 1e4);
        assert!(make_log_grid(1.0, 1.0, 5).is_err());
        assert!(make_log_grid(0.0, 1.0, 5).is_err());
        assert!(make_log_grid(1.0, 2.0, 1).is_err());
    }

    #[test]
    fn errors_are_reported() {
        let blow = FnSystem::new(1, |_t, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0]);
        let err = integrate(&blow, 1.0, 3.0, &[1.0], &IntegratorConfig::default(), &[3.0]).unwrap_err();
        assert!(
            matches!(
                err,
                IntegratorError::StepUnderflow { .. } | IntegratorError::NonFiniteState { .. }
            ),
            "{err:?}"
        );
        let t = err.failing_time().unwrap();
        assert!(t > 1.9 && t < 2.0 + 1e-6, "blow-up at t = 2, reported {t}");

        let cfg = IntegratorConfig {
            max_steps: 5,
            ..Default::default()
        };
        assert!(matches!(
            integrate(&decay(), 1.0, 100.0, &[1.0], &cfg, &[100.0]),
            Err(IntegratorError::MaxStepsExceeded { .. })
        ));
        assert!(matches!(
            integrate(&decay(), 1.0, 2.0, &[f64::NAN], &IntegratorConfig::default(), &[2.0]),
            Err(IntegratorError::NonFiniteState { .. })
        ));
        assert!(matches!(
            integrate(&decay(), 1.0, 2.0, &[1.0], &IntegratorConfig::default(), &[1.5, 1.2]),
            Err(IntegratorError::BadGrid(_))
        ));
    }

    #[test]
    fn tolerance_scaling_is_monotone() {
        let exact = (-5.0f64).exp();
        let mut prev = f64::INFINITY;
        for k in 0..6 {
            let cfg = IntegratorConfig {
                rtol: 1e-6 / 2f64.powi(k),
                atol: 1e-12,
                ..Default::default()
            };
            let y = integrate(&decay(), 1.0, 6.0, &[1.0], &cfg, &[6.0]).unwrap().states[0][0];
            let err = (y - exact).abs();
            assert!(err <= 2.0 * prev, "k = {k}: {err:e} vs {prev:e}");
            prev = err;
        }
    }

    #[test]
    fn deterministic() {
        let grid = make_log_grid(1.0, 10.0, 20).unwrap();
        let a = integrate(&decay(), 1.0, 10.0, &[1.0], &IntegratorConfig::default(), &grid).unwrap();
        let b = integrate(&decay(), 1.0, 10.0, &[1.0], &IntegratorConfig::default(), &grid).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.times, grid);
    }
}
