//! Polynomial least-squares regression across paths, used for every
//! conditional expectation in the backward solves.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{argument, LcfError, Result};
use crate::linalg::{det_sum, CHUNK};

/// Condition numbers above this make a regression step fail.
pub const MAX_CONDITION: f64 = 1e14;

/// All monomials of total degree `≤ degree` in the (normalized) features,
/// fitted with ridge weight `ridge`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionBasis {
    pub degree: usize,
    pub ridge: f64,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self { degree: 2, ridge: 1e-8 }
    }
}

impl RegressionBasis {
    pub fn new(degree: usize, ridge: f64) -> Result<Self> {
        if !(ridge >= 0.0) || !ridge.is_finite() {
            return Err(argument(format!("ridge must be a nonnegative number, got {ridge}")));
        }
        Ok(Self { degree, ridge })
    }

    /// `C(features + degree, degree)`.
    pub fn size(&self, features: usize) -> usize {
        let mut c = 1usize;
        for i in 1..=self.degree {
            c = c * (features + i) / i;
        }
        c
    }
}

/// Exponent vectors of all monomials of total degree ≤ `degree`, constant
/// first, in graded lexicographic order.
pub fn monomials(features: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; features]];
    let mut last = vec![vec![0u32; features]];
    for _ in 0..degree {
        let mut next = Vec::new();
        for e in &last {
            // raise only variables at or after the last one raised, so each
            // monomial is generated once
            let start = e.iter().rposition(|&v| v > 0).unwrap_or(0);
            for j in start..features {
                let mut f = e.clone();
                f[j] += 1;
                next.push(f);
            }
        }
        out.extend(next.iter().cloned());
        last = next;
    }
    out
}

/// Fit quality of one regression.
#[derive(Debug, Clone, Serialize)]
pub struct FitDiagnostics {
    pub basis_size: usize,
    pub condition: f64,
    /// Root-mean-square residual over paths and targets.
    pub residual_rms: f64,
    /// Largest `|mean residual| / (std residual / √M)` over targets.
    pub residual_mean_z: f64,
}

/// A factored design matrix on one time slice.
#[derive(Debug, Clone)]
pub struct Design {
    paths: usize,
    centers: Vec<f64>,
    scales: Vec<f64>,
    active: Vec<usize>,
    exps: Vec<Vec<u32>>,
    phi: Vec<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    condition: f64,
}

/// Coefficients of a fit, one column per target.
#[derive(Debug, Clone)]
pub struct Fit {
    pub coef: DMatrix<f64>,
    /// Fitted values on the design sample, `paths × q`.
    pub fitted: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

impl Design {
    /// Builds the normalized design from `features` (`paths × fdim`,
    /// row-major). Features with (near) zero spread are dropped.
    pub fn new(basis: RegressionBasis, features: &[f64], paths: usize, fdim: usize, step: usize) -> Result<Self> {
        assert_eq!(features.len(), paths * fdim);
        let mut centers = vec![0.0; fdim];
        let mut scales = vec![1.0; fdim];
        let mut active = Vec::new();
        for j in 0..fdim {
            let mean = det_sum(paths, |p| features[p * fdim + j]) / paths as f64;
            let var = det_sum(paths, |p| (features[p * fdim + j] - mean).powi(2)) / paths as f64;
            let sd = var.sqrt();
            centers[j] = mean;
            if sd > 1e-12 * (1.0 + mean.abs()) {
                scales[j] = sd;
                active.push(j);
            }
        }
        let exps = monomials(active.len(), basis.degree);
        let k = exps.len();
        if paths < k {
            return Err(argument(format!("{paths} paths cannot fit a basis of size {k}")));
        }
        let mut phi = vec![0.0; paths * k];
        phi.par_chunks_mut(k).enumerate().for_each_init(
            || vec![0.0; active.len()],
            |z, (p, row)| fill_row(&exps, &active, &centers, &scales, &features[p * fdim..(p + 1) * fdim], z, row),
        );
        let gram = chunked_gram(&phi, paths, k) / paths as f64;
        let mut reg = gram.clone();
        // the intercept is not penalized
        for i in 1..k {
            reg[(i, i)] += basis.ridge;
        }
        let eig = SymmetricEigen::new(reg.clone()).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(LcfError::Conditioning {
                step,
                detail: format!("normal equations have condition number {condition:.3e} (basis size {k})"),
            });
        }
        let chol = Cholesky::new(reg).ok_or_else(|| LcfError::Conditioning {
            step,
            detail: "normal equations are not positive definite".into(),
        })?;
        Ok(Self { paths, centers, scales, active, exps, phi, chol, condition })
    }

    pub fn basis_size(&self) -> usize {
        self.exps.len()
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Least-squares fit of `targets` (`paths × q`, row-major).
    pub fn fit(&self, targets: &[f64], q: usize) -> Fit {
        let k = self.basis_size();
        let m = self.paths;
        assert_eq!(targets.len(), m * q);
        let chunks = m.div_ceil(CHUNK);
        let partial: Vec<DMatrix<f64>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                // column-major k×q
                let mut acc = vec![0.0; k * q];
                for p in c * CHUNK..((c + 1) * CHUNK).min(m) {
                    let row = &self.phi[p * k..(p + 1) * k];
                    let y = &targets[p * q..(p + 1) * q];
                    for (col, &yb) in acc.chunks_exact_mut(k).zip(y) {
                        for (a, &fa) in col.iter_mut().zip(row) {
                            *a += fa * yb;
                        }
                    }
                }
                DMatrix::from_vec(k, q, acc)
            })
            .collect();
        let rhs = sum_in_order(partial, k, q) / m as f64;
        let coef = self.chol.solve(&rhs);

        let mut sum_sq = 0.0;
        let mut worst_z = 0.0f64;
        let fitted = self.predict_all(&coef);
        for b in 0..q {
            let r = |p: usize| targets[p * q + b] - fitted[p * q + b];
            let mean = det_sum(m, r) / m as f64;
            let ss = det_sum(m, |p| r(p).powi(2));
            sum_sq += ss;
            let var = (ss / m as f64 - mean * mean).max(0.0);
            let se = (var / m as f64).sqrt();
            // OLS with an intercept has zero mean residual up to rounding
            let z = if mean.abs() <= 1e-13 * (1.0 + (ss / m as f64).sqrt()) {
                0.0
            } else if se > 0.0 {
                mean.abs() / se
            } else {
                f64::INFINITY
            };
            worst_z = worst_z.max(z);
        }
        Fit {
            coef,
            fitted,
            diagnostics: FitDiagnostics {
                basis_size: k,
                condition: self.condition,
                residual_rms: (sum_sq / (m * q.max(1)) as f64).sqrt(),
                residual_mean_z: worst_z,
            },
        }
    }

    /// Fitted value of target `b` on path `p` of the design sample.
    #[inline]
    pub fn predict_row(&self, p: usize, coef: &DMatrix<f64>, b: usize) -> f64 {
        let k = self.basis_size();
        let row = &self.phi[p * k..(p + 1) * k];
        crate::linalg::dot(row, &coef.as_slice()[b * k..(b + 1) * k])
    }

    /// Fitted values of all targets at the design sample, `paths × q`.
    pub fn predict_all(&self, coef: &DMatrix<f64>) -> Vec<f64> {
        let q = coef.ncols();
        let mut out = vec![0.0; self.paths * q];
        out.par_chunks_mut(q.max(1)).enumerate().for_each(|(p, o)| {
            for (b, v) in o.iter_mut().enumerate() {
                *v = self.predict_row(p, coef, b);
            }
        });
        out
    }

    /// Fitted values at an arbitrary feature vector.
    pub fn predict_at(&self, features: &[f64], coef: &DMatrix<f64>) -> Vec<f64> {
        let mut row = vec![0.0; self.basis_size()];
        let mut z = vec![0.0; self.active.len()];
        fill_row(&self.exps, &self.active, &self.centers, &self.scales, features, &mut z, &mut row);
        (0..coef.ncols())
            .map(|b| row.iter().enumerate().map(|(a, &f)| f * coef[(a, b)]).sum())
            .collect()
    }
}

fn fill_row(exps: &[Vec<u32>], active: &[usize], centers: &[f64], scales: &[f64], x: &[f64], z: &mut [f64], row: &mut [f64]) {
    for (zi, &j) in z.iter_mut().zip(active) {
        *zi = (x[j] - centers[j]) / scales[j];
    }
    for (slot, e) in row.iter_mut().zip(exps) {
        let mut v = 1.0;
        for (zi, &pw) in z.iter().zip(e) {
            if pw > 0 {
                v *= zi.powi(pw as i32);
            }
        }
        *slot = v;
    }
}

fn chunked_gram(phi: &[f64], m: usize, k: usize) -> DMatrix<f64> {
    let chunks = m.div_ceil(CHUNK);
    let partial: Vec<DMatrix<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; k * k];
            for p in c * CHUNK..((c + 1) * CHUNK).min(m) {
                let row = &phi[p * k..(p + 1) * k];
                for (b, col) in acc.chunks_exact_mut(k).enumerate() {
                    let rb = row[b];
                    for (a, slot) in col[..=b].iter_mut().enumerate() {
                        *slot += row[a] * rb;
                    }
                }
            }
            DMatrix::from_vec(k, k, acc)
        })
        .collect();
    // only the upper triangle (a ≤ b) was accumulated
    let mut g = sum_in_order(partial, k, k);
    for b in 0..k {
        for a in b + 1..k {
            g[(a, b)] = g[(b, a)];
        }
    }
    g
}

fn sum_in_order(mut parts: Vec<DMatrix<f64>>, rows: usize, cols: usize) -> DMatrix<f64> {
    // pairwise, in chunk order
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a + b),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop().unwrap_or_else(|| DMatrix::zeros(rows, cols))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_sizes_match_the_binomial() {
        let b = RegressionBasis::default();
        for n in 1..5 {
            assert_eq!(monomials(n, 2).len(), b.size(n));
            assert_eq!(monomials(n, 3).len(), RegressionBasis::new(3, 0.0).unwrap().size(n));
        }
        assert_eq!(monomials(2, 2), vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn recovers_a_quadratic() {
        let m = 500;
        let x: Vec<f64> = (0..m).map(|p| -2.0 + 4.0 * p as f64 / m as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 - 3.0 * v + 0.5 * v * v).collect();
        let d = Design::new(RegressionBasis::new(2, 0.0).unwrap(), &x, m, 1, 0).unwrap();
        let fit = d.fit(&y, 1);
        assert!(fit.diagnostics.residual_rms < 1e-10);
        let at = d.predict_at(&[1.5], &fit.coef);
        assert!((at[0] - (1.0 - 4.5 + 1.125)).abs() < 1e-9);
    }

    #[test]
    fn constant_features_reduce_to_the_mean() {
        let x = vec![1.0; 10];
        let y: Vec<f64> = (0..10).map(|p| p as f64).collect();
        let d = Design::new(RegressionBasis::default(), &x, 10, 1, 0).unwrap();
        assert_eq!(d.basis_size(), 1);
        let fit = d.fit(&y, 1);
        assert!((d.predict_row(3, &fit.coef, 0) - 4.5).abs() < 1e-6);
    }

    #[test]
    fn too_few_paths_is_an_argument_error() {
        let x = vec![0.0, 1.0];
        assert!(matches!(
            Design::new(RegressionBasis::default(), &x, 2, 1, 0),
            Err(LcfError::Argument(_))
        ));
    }

    #[test]
    fn collinear_features_are_flagged() {
        // two identical features make the normal equations singular
        let m = 100;
        let x: Vec<f64> = (0..m).flat_map(|p| [p as f64, p as f64]).collect();
        let err = Design::new(RegressionBasis::new(1, 0.0).unwrap(), &x, m, 2, 7).unwrap_err();
        assert!(matches!(err, LcfError::Conditioning { step: 7, .. }), "{err}");
    }
}
