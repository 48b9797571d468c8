//! Small dense helpers shared by the solvers.
//!
//! Ensembles are stored as flat `f64` slices; these routines apply nalgebra
//! coefficient matrices to such slices without allocating.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

/// Paths per reduction chunk. Partial results are combined in chunk order,
/// so the total does not depend on how many threads ran the chunks.
pub(crate) const CHUNK: usize = 1024;

/// `out += scale * a * x`
#[inline]
pub(crate) fn mat_vec_acc(a: &DMatrix<f64>, x: &[f64], scale: f64, out: &mut [f64]) {
    debug_assert_eq!(a.ncols(), x.len());
    debug_assert_eq!(a.nrows(), out.len());
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let col = a.column(j);
        let s = scale * xj;
        for (o, &c) in out.iter_mut().zip(col.iter()) {
            *o += s * c;
        }
    }
}

/// `out += scale * aᵀ * x`
#[inline]
pub(crate) fn mat_t_vec_acc(a: &DMatrix<f64>, x: &[f64], scale: f64, out: &mut [f64]) {
    debug_assert_eq!(a.nrows(), x.len());
    debug_assert_eq!(a.ncols(), out.len());
    for (j, o) in out.iter_mut().enumerate() {
        let col = a.column(j);
        let mut acc = 0.0;
        for (&c, &xi) in col.iter().zip(x.iter()) {
            acc += c * xi;
        }
        *o += scale * acc;
    }
}

/// Same as [`mat_vec_acc`] for a column-major matrix stored in a slice.
#[inline]
pub(crate) fn slice_mat_vec_acc(a: &[f64], rows: usize, x: &[f64], scale: f64, out: &mut [f64]) {
    for (j, &xj) in x.iter().enumerate() {
        let s = scale * xj;
        let col = &a[j * rows..(j + 1) * rows];
        for (o, &c) in out.iter_mut().zip(col) {
            *o += s * c;
        }
    }
}

/// Same as [`mat_t_vec_acc`] for a column-major matrix stored in a slice.
#[inline]
pub(crate) fn slice_mat_t_vec_acc(a: &[f64], rows: usize, x: &[f64], scale: f64, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        let col = &a[j * rows..(j + 1) * rows];
        let acc: f64 = col.iter().zip(x).map(|(c, xi)| c * xi).sum();
        *o += scale * acc;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Returns `(a + aᵀ)/2` and the relative asymmetry `‖a − aᵀ‖_F / max(‖a‖_F, tiny)`.
pub fn symmetrize(a: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let at = a.transpose();
    let defect = (a - &at).norm();
    let scale = a.norm().max(f64::MIN_POSITIVE);
    ((a + at) * 0.5, defect / scale)
}

/// Smallest eigenvalue of a symmetric matrix (the input is symmetrized first).
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    if a.nrows() == 1 {
        return a[(0, 0)];
    }
    let (s, _) = symmetrize(a);
    SymmetricEigen::new(s).eigenvalues.min()
}

/// Spectral norm of a symmetric matrix.
pub fn sym_spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    if a.nrows() == 1 {
        return a[(0, 0)].abs();
    }
    let (s, _) = symmetrize(a);
    SymmetricEigen::new(s).eigenvalues.amax()
}

/// Pairwise summation in a fixed order.
pub(crate) fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n if n <= 8 => v.iter().sum(),
        n => {
            let (a, b) = v.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Deterministic parallel sum of `f(i)` for `i in 0..n`.
pub(crate) fn det_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let partial: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            (lo..hi).map(&f).sum::<f64>()
        })
        .collect();
    pairwise_sum(&partial)
}

/// Mean and (population-corrected) sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = det_sum(n, |i| values[i]) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = det_sum(n, |i| (values[i] - mean).powi(2)) / (n - 1) as f64;
    (mean, var.sqrt())
}

#[cfg(test)]
pub(crate) fn dvec(v: &[f64]) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_column_slice(v)
}

pub(crate) fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mat_vec_helpers_agree_with_nalgebra() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = [1.0, -1.0, 2.0];
        let mut out = [0.0; 2];
        mat_vec_acc(&a, &x, 2.0, &mut out);
        let expect = (&a * dvec(&x)) * 2.0;
        assert_eq!(out[0], expect[0]);
        assert_eq!(out[1], expect[1]);

        let y = [0.5, -2.0];
        let mut out_t = [0.0; 3];
        mat_t_vec_acc(&a, &y, 1.0, &mut out_t);
        let expect_t = a.transpose() * dvec(&y);
        for i in 0..3 {
            assert_eq!(out_t[i], expect_t[i]);
        }

        let mut out_s = [0.0; 2];
        slice_mat_vec_acc(a.as_slice(), 2, &x, 2.0, &mut out_s);
        assert_eq!(out_s, out);
        let mut out_st = [0.0; 3];
        slice_mat_t_vec_acc(a.as_slice(), 2, &y, 1.0, &mut out_st);
        assert_eq!(out_st, out_t);
    }

    #[test]
    fn det_sum_is_thread_count_independent() {
        let f = |i: usize| ((i as f64) * 0.37).sin() * 1e-3 + 1.0 / (1.0 + i as f64);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| det_sum(50_001, f));
        let b = four.install(|| det_sum(50_001, f));
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn symmetrize_reports_defect() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let (s, d) = symmetrize(&a);
        assert_eq!(s[(0, 1)], 1.0);
        assert!(d > 0.5);
        assert!((min_eigenvalue(&s) - 0.0).abs() < 1e-12);
    }
}
