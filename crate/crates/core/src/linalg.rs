//! Allocation-free dense helpers used on the integrator hot path.

use nalgebra::DMatrix;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean norm of the concatenation `(a, b)`.
pub fn pair_norm(a: &[f64], b: &[f64]) -> f64 {
    (norm_sq(a) + norm_sq(b)).sqrt()
}

/// `out = A x`.
pub fn mat_vec(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let rows = a.nrows();
    debug_assert_eq!(a.ncols(), x.len());
    debug_assert_eq!(rows, out.len());
    out.iter_mut().for_each(|o| *o = 0.0);
    let data = a.as_slice();
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let col = &data[j * rows..(j + 1) * rows];
        for (o, &aij) in out.iter_mut().zip(col) {
            *o += aij * xj;
        }
    }
}

/// `out += scale * A x`.
pub fn mat_vec_add(a: &DMatrix<f64>, x: &[f64], scale: f64, out: &mut [f64]) {
    let rows = a.nrows();
    debug_assert_eq!(a.ncols(), x.len());
    let data = a.as_slice();
    for (j, &xj) in x.iter().enumerate() {
        let s = scale * xj;
        if s == 0.0 {
            continue;
        }
        let col = &data[j * rows..(j + 1) * rows];
        for (o, &aij) in out.iter_mut().zip(col) {
            *o += aij * s;
        }
    }
}

/// `out += scale * Aᵀ y`.
pub fn mat_t_vec_add(a: &DMatrix<f64>, y: &[f64], scale: f64, out: &mut [f64]) {
    let rows = a.nrows();
    debug_assert_eq!(rows, y.len());
    debug_assert_eq!(a.ncols(), out.len());
    let data = a.as_slice();
    for (j, o) in out.iter_mut().enumerate() {
        let col = &data[j * rows..(j + 1) * rows];
        *o += scale * dot(col, y);
    }
}
