//! Dense kernels for the small (n ≤ 6) systems used throughout the crate:
//! a row-equilibrated complex LU with a numerical-singularity test, and
//! finite generalized eigenvalues of a real pencil `(A, E)` that tolerates a
//! singular `E`.

use nalgebra::linalg::{balancing, Schur};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{OtaError, Result};

/// Pivots smaller than this (after row equilibration) mark the matrix singular.
const SINGULAR_PIVOT: f64 = 1e-13;

/// LU factorisation with partial pivoting of a complex square matrix.
#[derive(Debug, Clone)]
pub struct ComplexLu {
    lu: DMatrix<Complex64>,
    perm: Vec<usize>,
    row_scale: Vec<f64>,
}

impl ComplexLu {
    /// Factors `m`; `None` if it is numerically singular.
    pub fn new(m: &DMatrix<Complex64>) -> Option<Self> {
        let n = m.nrows();
        assert_eq!(n, m.ncols(), "square matrix expected");
        let mut lu = m.clone();
        let mut row_scale = vec![1.0; n];
        for (i, scale) in row_scale.iter_mut().enumerate() {
            let max = (0..n).map(|j| lu[(i, j)].norm()).fold(0.0, f64::max);
            if max == 0.0 || !max.is_finite() {
                return None;
            }
            *scale = 1.0 / max;
            for j in 0..n {
                lu[(i, j)] *= *scale;
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].norm()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pmax < SINGULAR_PIVOT {
                return None;
            }
            if p != k {
                lu.swap_rows(p, k);
                perm.swap(p, k);
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f != Complex64::new(0.0, 0.0) {
                    for j in k + 1..n {
                        let t = lu[(k, j)];
                        lu[(i, j)] -= f * t;
                    }
                }
            }
        }
        Some(Self { lu, perm, row_scale })
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.perm.len();
        let mut x: Vec<Complex64> = self
            .perm
            .iter()
            .map(|&p| b[p] * self.row_scale[p])
            .collect();
        for i in 0..n {
            for j in 0..i {
                let t = self.lu[(i, j)] * x[j];
                x[i] -= t;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let t = self.lu[(i, j)] * x[j];
                x[i] -= t;
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }
}

/// Builds `s·E − A` as a complex matrix.
pub fn pencil_at(e: &DMatrix<f64>, a: &DMatrix<f64>, s: Complex64) -> DMatrix<Complex64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| s * e[(i, j)] - a[(i, j)])
}

/// Finite generalized eigenvalues λ of `A·x = λ·E·x`.
///
/// Uses a real shift-and-invert transform `(A − σE)⁻¹E`, whose zero
/// eigenvalues correspond to the infinite modes of the pencil, followed by
/// a few steps of shifted inverse iteration on the original pencil to polish
/// each finite eigenvalue. Values with modulus above `inf_threshold` are
/// discarded as infinite. Complex values are returned as exact conjugate
/// pairs.
pub fn generalized_eigenvalues(
    a: &DMatrix<f64>,
    e: &DMatrix<f64>,
    inf_threshold: f64,
) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let sigma = choose_shift(a, e)
        .ok_or_else(|| OtaError::EigensolverFailure("no regular shift found".into()))?;
    let mut raw: Vec<Complex64> = shift_invert(a, e, sigma)?
        .into_iter()
        .filter(|l| l.norm() < inf_threshold && l.is_finite())
        .collect();

    // A single shift resolves eigenvalues far below it only to about
    // eps·|σ|/|λ|; repeat with a shift near each one.
    let coarse = raw.clone();
    for (i, lam) in raw.iter_mut().enumerate() {
        let gap = coarse
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, o)| (o - *lam).norm())
            .fold(f64::INFINITY, f64::min);
        if let Some(local) = local_shift(a, e, *lam) {
            if (local - *lam).norm() < 0.5 * gap {
                *lam = local;
            }
        }
    }

    let snapshot = raw.clone();
    for (i, lam) in raw.iter_mut().enumerate() {
        let gap = snapshot
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, o)| (o - *lam).norm())
            .fold(f64::INFINITY, f64::min);
        if let Some(refined) = refine(a, e, *lam) {
            let moved = (refined - *lam).norm();
            if moved < 0.1 * gap && moved < 1e-3 * lam.norm().max(1e-300) {
                *lam = refined;
            }
        }
    }
    Ok(pair_conjugates(raw))
}

fn shift_invert(a: &DMatrix<f64>, e: &DMatrix<f64>, sigma: f64) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    let shifted = a - e * sigma;
    let inv = shifted
        .lu()
        .try_inverse()
        .ok_or_else(|| OtaError::EigensolverFailure("shifted pencil singular".into()))?;
    let mut m = inv * e;
    balancing::balance_parlett_reinsch(&mut m);
    let schur = Schur::try_new(m, f64::EPSILON, 1000 * n.max(1))
        .ok_or_else(|| OtaError::EigensolverFailure("Schur iteration did not converge".into()))?;
    let mus = schur.complex_eigenvalues();
    let mu_max = mus.iter().map(|m| m.norm()).fold(0.0, f64::max);
    Ok(mus
        .iter()
        .filter(|mu| mu.norm() > mu_max * 1e-14 && mu.norm() > 0.0)
        .map(|mu| Complex64::new(sigma, 0.0) + mu.inv())
        .collect())
}

fn local_shift(a: &DMatrix<f64>, e: &DMatrix<f64>, lam: Complex64) -> Option<Complex64> {
    let n = a.nrows();
    for factor in [1.3, 0.77, 1.9, 0.53] {
        let sigma = -lam.norm() * factor;
        let shifted = DMatrix::from_fn(n, n, |i, j| Complex64::new(a[(i, j)] - sigma * e[(i, j)], 0.0));
        if ComplexLu::new(&shifted).is_none() {
            continue;
        }
        let Ok(values) = shift_invert(a, e, sigma) else {
            continue;
        };
        return values
            .into_iter()
            .filter(|v| v.is_finite())
            .min_by(|x, y| (x - lam).norm().total_cmp(&(y - lam).norm()));
    }
    None
}

fn choose_shift(a: &DMatrix<f64>, e: &DMatrix<f64>) -> Option<f64> {
    let n = a.nrows();
    let logs: Vec<f64> = (0..n)
        .filter(|&i| e[(i, i)] > 0.0 && a[(i, i)] != 0.0)
        .map(|i| (a[(i, i)].abs() / e[(i, i)]).ln())
        .collect();
    let base = if logs.is_empty() {
        1.0
    } else {
        (logs.iter().sum::<f64>() / logs.len() as f64).exp()
    };
    for factor in [1.0, 1.618, 0.577, 3.7, 0.21, 11.0, 0.07] {
        let sigma = -base * factor;
        let shifted = DMatrix::from_fn(n, n, |i, j| {
            Complex64::new(a[(i, j)] - sigma * e[(i, j)], 0.0)
        });
        if ComplexLu::new(&shifted).is_some() {
            return Some(sigma);
        }
    }
    None
}

fn refine(a: &DMatrix<f64>, e: &DMatrix<f64>, start: Complex64) -> Option<Complex64> {
    let n = a.nrows();
    let ec = e.map(|v| Complex64::new(v, 0.0));
    let mut lam = start;
    let mut x: Vec<Complex64> = (0..n).map(|i| Complex64::new(1.0 + 0.1 * i as f64, 0.0)).collect();
    // one plain inverse-iteration step to align x with the eigenvector
    let lu = ComplexLu::new(&pencil_at(e, a, lam).map(|v| -v))?;
    let ex = &ec * DVector::from_vec(x.clone());
    x = normalize(lu.solve(ex.as_slice()));
    for _ in 0..4 {
        let lu = match ComplexLu::new(&pencil_at(e, a, lam).map(|v| -v)) {
            Some(lu) => lu,
            None => return Some(lam),
        };
        let ex = &ec * DVector::from_vec(x.clone());
        let z = lu.solve(ex.as_slice());
        let num: Complex64 = x.iter().zip(&z).map(|(xi, zi)| xi.conj() * zi).sum();
        let den: f64 = x.iter().map(|xi| xi.norm_sqr()).sum();
        let mu = num / den;
        if mu.norm() == 0.0 || !mu.is_finite() {
            return Some(lam);
        }
        let step = mu.inv();
        lam += step;
        x = normalize(z);
        if step.norm() <= 1e-15 * lam.norm() {
            break;
        }
    }
    lam.is_finite().then_some(lam)
}

fn normalize(v: Vec<Complex64>) -> Vec<Complex64> {
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return v;
    }
    v.into_iter().map(|c| c / norm).collect()
}

/// Snaps near-real values to the real axis and averages conjugate partners.
pub fn pair_conjugates(values: Vec<Complex64>) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(values.len());
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    for v in values {
        if v.im.abs() <= 1e-9 * v.norm() {
            out.push(Complex64::new(v.re, 0.0));
        } else if v.im > 0.0 {
            upper.push(v);
        } else {
            lower.push(v);
        }
    }
    for u in upper {
        let best = lower
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (**a - u.conj())
                    .norm()
                    .total_cmp(&(**b - u.conj()).norm())
            })
            .map(|(i, _)| i);
        match best {
            Some(i) => {
                let l = lower.swap_remove(i);
                let re = 0.5 * (u.re + l.re);
                let im = 0.5 * (u.im - l.im);
                out.push(Complex64::new(re, im));
                out.push(Complex64::new(re, -im));
            }
            None => out.push(u),
        }
    }
    out.extend(lower);
    out.sort_by(|a, b| a.norm().total_cmp(&b.norm()).then(b.im.total_cmp(&a.im)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn lu_solves_and_detects_singularity() {
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 1.0), c(2.0, 0.0), c(0.0, 1.0), c(3.0, -1.0)]);
        let lu = ComplexLu::new(&m).unwrap();
        let x = lu.solve(&[c(1.0, 0.0), c(0.0, 2.0)]);
        let r0 = m[(0, 0)] * x[0] + m[(0, 1)] * x[1] - c(1.0, 0.0);
        let r1 = m[(1, 0)] * x[0] + m[(1, 1)] * x[1] - c(0.0, 2.0);
        assert!(r0.norm() < 1e-14 && r1.norm() < 1e-14);

        let sing = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)]);
        assert!(ComplexLu::new(&sing).is_none());
    }

    #[test]
    fn pencil_with_singular_e() {
        // x1' = -2 x1 + x2 ; 0 = x1 - x2  ->  single finite eigenvalue -1
        let a = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -1.0]);
        let e = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let ev = generalized_eigenvalues(&a, &e, 1e15).unwrap();
        assert_eq!(ev.len(), 1);
        assert!((ev[0] - c(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn widely_spread_spectrum() {
        let diag = [-1.0, -1e3, -1e6, -1e9];
        let a = DMatrix::from_fn(4, 4, |i, j| if i == j { diag[i] } else { 0.0 });
        let t = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.2, 0.0, 0.1, 0.0, 1.0, 0.3, 0.0, 0.4, 0.0, 1.0, 0.2, 0.0, 0.1, 0.0, 1.0,
        ]);
        let tinv = t.clone().try_inverse().unwrap();
        let a2 = &t * a * &tinv;
        let e2 = DMatrix::identity(4, 4);
        let mut ev = generalized_eigenvalues(&a2, &e2, 1e15).unwrap();
        ev.sort_by(|x, y| y.re.total_cmp(&x.re));
        for (got, want) in ev.iter().zip(diag) {
            assert!((got.re - want).abs() <= 1e-8 * want.abs(), "{got} vs {want}");
        }
    }

    #[test]
    fn conjugates_are_exact() {
        // rotation-like block with eigenvalues -1 ± 2j
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, -2.0, -1.0]);
        let e = DMatrix::identity(2, 2);
        let ev = generalized_eigenvalues(&a, &e, 1e15).unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[0], ev[1].conj());
        assert!((ev[0] - c(-1.0, 2.0)).norm() < 1e-13);
    }
}
