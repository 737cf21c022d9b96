//! Matrix-free preconditioned conjugate gradients over real or complex
//! vectors. Operators and preconditioners are plain closures.

use crate::error::{Error, Result};
use crate::par;
use num_complex::Complex64;
use std::ops::{Add, Mul, Sub};

pub trait Scalar:
    Copy + Send + Sync + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + 'static
{
    fn zero() -> Self;
    fn conj(self) -> Self;
    fn from_re(x: f64) -> Self;
    fn re(self) -> f64;
    fn abs2(self) -> f64;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn conj(self) -> Self {
        self
    }
    fn from_re(x: f64) -> Self {
        x
    }
    fn re(self) -> f64 {
        self
    }
    fn abs2(self) -> f64 {
        self * self
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn from_re(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn re(self) -> f64 {
        self.re
    }
    fn abs2(self) -> f64 {
        self.norm_sqr()
    }
}

/// ⟨a, b⟩ = Σ conj(aᵢ) bᵢ, reduced in a fixed order.
pub fn inner<S: Scalar>(a: &[S], b: &[S]) -> S {
    assert_eq!(a.len(), b.len());
    par::map_chunks(a.len(), par::CHUNK, |r| {
        let mut s = S::zero();
        for i in r {
            s = s + a[i].conj() * b[i];
        }
        s
    })
    .into_iter()
    .fold(S::zero(), |acc, x| acc + x)
}

pub fn norm<S: Scalar>(a: &[S]) -> f64 {
    par::sum_by(a.len(), |i| a[i].abs2()).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    /// ‖b − A x‖ / ‖b‖ recomputed from scratch after the last iteration.
    pub relative_residual: f64,
}

/// Solves `A x = b` for Hermitian positive definite `A`, starting from the
/// contents of `x`.
pub fn pcg<S, A, P>(
    apply: A,
    precond: P,
    b: &[S],
    x: &mut [S],
    tol: f64,
    max_iter: usize,
) -> Result<CgStats>
where
    S: Scalar,
    A: Fn(&[S], &mut [S]),
    P: Fn(&[S], &mut [S]),
{
    let n = b.len();
    assert_eq!(x.len(), n);
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = S::zero());
        return Ok(CgStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }

    let mut r = vec![S::zero(); n];
    let mut ap = vec![S::zero(); n];
    apply(x, &mut ap);
    for i in 0..n {
        r[i] = b[i] - ap[i];
    }
    let mut z = vec![S::zero(); n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = inner(&r, &z).re();
    let mut iterations = 0;
    let mut rel = norm(&r) / bnorm;

    while rel > tol && iterations < max_iter {
        apply(&p, &mut ap);
        let pap = inner(&p, &ap).re();
        if !(pap > 0.0) {
            return Err(Error::Invariant(format!(
                "operator not positive definite in CG (pᴴAp = {pap:e})"
            )));
        }
        let alpha = S::from_re(rz / pap);
        for i in 0..n {
            x[i] = x[i] + alpha * p[i];
            r[i] = r[i] - alpha * ap[i];
        }
        precond(&r, &mut z);
        let rz_new = inner(&r, &z).re();
        let beta = S::from_re(rz_new / rz);
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
        iterations += 1;
        rel = norm(&r) / bnorm;
    }

    // guard against recurrence drift: report the true residual
    apply(x, &mut ap);
    for i in 0..n {
        r[i] = b[i] - ap[i];
    }
    let true_rel = norm(&r) / bnorm;
    if true_rel > tol * 10.0 && iterations >= max_iter {
        return Err(Error::CgNotConverged {
            iterations,
            residual: true_rel,
            tol,
        });
    }
    Ok(CgStats {
        iterations,
        relative_residual: true_rel,
    })
}

pub fn identity<S: Scalar>(r: &[S], z: &mut [S]) {
    z.copy_from_slice(r);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_spd_system() {
        // tridiagonal 1-D Laplacian plus shift
        let n = 50;
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                let mut v = 3.0 * x[i];
                if i > 0 {
                    v -= x[i - 1];
                }
                if i + 1 < n {
                    v -= x[i + 1];
                }
                y[i] = v;
            }
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let mut x = vec![0.0; n];
        let st = pcg(apply, identity, &b, &mut x, 1e-12, 200).unwrap();
        assert!(st.relative_residual <= 1e-11);
        let mut ax = vec![0.0; n];
        apply(&x, &mut ax);
        for i in 0..n {
            assert!((ax[i] - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn hermitian_complex_system() {
        let a = [
            [Complex64::new(4.0, 0.0), Complex64::new(1.0, 1.0)],
            [Complex64::new(1.0, -1.0), Complex64::new(3.0, 0.0)],
        ];
        let apply = |x: &[Complex64], y: &mut [Complex64]| {
            for i in 0..2 {
                y[i] = a[i][0] * x[0] + a[i][1] * x[1];
            }
        };
        let b = [Complex64::new(1.0, 2.0), Complex64::new(-1.0, 0.5)];
        let mut x = [Complex64::zero(); 2];
        pcg(apply, identity, &b, &mut x, 1e-14, 10).unwrap();
        let mut y = [Complex64::zero(); 2];
        apply(&x, &mut y);
        assert!((y[0] - b[0]).norm() < 1e-12 && (y[1] - b[1]).norm() < 1e-12);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let mut x = vec![1.0; 4];
        let st = pcg(
            |x: &[f64], y: &mut [f64]| y.copy_from_slice(x),
            identity,
            &[0.0; 4],
            &mut x,
            1e-10,
            5,
        )
        .unwrap();
        assert_eq!(st.iterations, 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }
}
