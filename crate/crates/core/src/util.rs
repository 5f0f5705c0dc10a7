//! Small dense-matrix helpers shared across modules.

use crate::{C64, Result};
use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

pub fn identity(d: usize) -> Array2<C64> {
    Array2::eye(d)
}

pub fn trace(m: &Array2<C64>) -> C64 {
    m.diag().sum()
}

pub fn adjoint(m: &Array2<C64>) -> Array2<C64> {
    m.t().mapv(|z| z.conj())
}

/// A B A^dagger.
pub fn sandwich(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    a.dot(b).dot(&adjoint(a))
}

pub fn commutator(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    a.dot(b) - b.dot(a)
}

pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    let mut out = Array2::zeros((ra * rb, ca * cb));
    for i in 0..ra {
        for j in 0..ca {
            let aij = a[(i, j)];
            for k in 0..rb {
                for l in 0..cb {
                    out[(i * rb + k, j * cb + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

pub fn max_abs(m: &Array2<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    max_abs(&(a - b))
}

/// (rho + rho^dagger)/2 together with the Hermiticity deviation removed.
pub fn hermitize(m: &Array2<C64>) -> (Array2<C64>, f64) {
    let adj = adjoint(m);
    let dev = max_abs_diff(m, &adj) / 2.0;
    ((m + &adj).mapv(|z| z * 0.5), dev)
}

pub fn hermiticity_deviation(m: &Array2<C64>) -> f64 {
    max_abs_diff(m, &adjoint(m))
}

pub fn eigvalsh(m: &Array2<C64>) -> Result<Array1<f64>> {
    let (w, _) = m.eigh(UPLO::Lower)?;
    Ok(w)
}

pub fn min_eigenvalue(m: &Array2<C64>) -> Result<f64> {
    let w = eigvalsh(m)?;
    Ok(w.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Trace distance (1/2)||a - b||_1 between Hermitian matrices.
pub fn trace_distance(a: &Array2<C64>, b: &Array2<C64>) -> Result<f64> {
    let (diff, _) = hermitize(&(a - b));
    let w = eigvalsh(&diff)?;
    Ok(0.5 * w.iter().map(|x| x.abs()).sum::<f64>())
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}
