//! Dense symmetric helpers on top of nalgebra: inversion of SPD systems,
//! spectral matrix functions and inertia counts.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{MarketError, Result};
use crate::scalar::Scalar;

/// Inverts a symmetric positive definite matrix through its Cholesky factor.
///
/// A failed factorization is classified as [`MarketError::SingularSystem`]
/// when the matrix has no LU inverse either, and as
/// [`MarketError::NotPositiveDefinite`] otherwise.
pub fn spd_inverse<T: Scalar>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    match m.clone().cholesky() {
        Some(chol) => {
            // A pivot that is zero relative to the diagonal means the
            // factorization only succeeded through rounding.
            let l = chol.l_dirty();
            let min_pivot = (0..m.nrows())
                .map(|i| l[(i, i)] * l[(i, i)])
                .fold(T::max_value().unwrap(), |a, b| a.min(b));
            let max_diag = (0..m.nrows())
                .map(|i| m[(i, i)].abs())
                .fold(T::zero(), |a, b| a.max(b));
            let cutoff =
                T::default_epsilon() * T::from_usize(m.nrows()).unwrap() * max_diag * T::lit(16.0);
            if min_pivot <= cutoff {
                return Err(MarketError::SingularSystem);
            }
            Ok(chol.inverse())
        }
        None => {
            if m.clone().lu().try_inverse().is_none() {
                return Err(MarketError::SingularSystem);
            }
            let eig = SymmetricEigen::new(m.clone());
            Err(MarketError::NotPositiveDefinite {
                min_eigenvalue: eig.eigenvalues.min().as_f64(),
            })
        }
    }
}

/// Solves `m * x = rhs` for symmetric positive definite `m`.
pub fn spd_solve<T: Scalar>(m: &DMatrix<T>, rhs: &DVector<T>) -> Result<DVector<T>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| MarketError::NotPositiveDefinite {
            min_eigenvalue: SymmetricEigen::new(m.clone()).eigenvalues.min().as_f64(),
        })?;
    Ok(chol.solve(rhs))
}

/// Eigendecomposition of a symmetric matrix, `m = V diag(lambda) V^T`.
#[derive(Debug, Clone)]
pub struct SymEigen<T: Scalar> {
    pub eigenvalues: DVector<T>,
    pub eigenvectors: DMatrix<T>,
}

impl<T: Scalar> SymEigen<T> {
    pub fn new(m: &DMatrix<T>) -> Self {
        let eig = SymmetricEigen::new(m.clone());
        Self {
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
        }
    }

    pub fn min_eigenvalue(&self) -> T {
        self.eigenvalues.min()
    }

    pub fn max_eigenvalue(&self) -> T {
        self.eigenvalues.max()
    }

    /// `V diag(f(lambda)) V^T`.
    pub fn map<F: Fn(T) -> T>(&self, f: F) -> DMatrix<T> {
        let scaled = self.eigenvalues.map(f);
        let v = &self.eigenvectors;
        let mut vs = v.clone();
        for (j, mut col) in vs.column_iter_mut().enumerate() {
            col *= scaled[j];
        }
        vs * v.transpose()
    }

    /// Principal square root of `alpha * M`; requires `alpha * lambda >= 0`.
    pub fn scaled_sqrt(&self, alpha: T) -> DMatrix<T> {
        self.map(|l| (alpha * l).max(T::zero()).sqrt())
    }
}

/// Counts of positive, negative and zero eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

impl Inertia {
    /// Eigenvalues with magnitude at most `rel_tol * max|lambda|` count as zero.
    pub fn from_eigenvalues<T: Scalar>(eigenvalues: &DVector<T>, rel_tol: T) -> Self {
        let scale = eigenvalues.amax();
        let cutoff = rel_tol * scale;
        let mut inertia = Inertia {
            positive: 0,
            negative: 0,
            zero: 0,
        };
        for &l in eigenvalues.iter() {
            if l.abs() <= cutoff {
                inertia.zero += 1;
            } else if l > T::zero() {
                inertia.positive += 1;
            } else {
                inertia.negative += 1;
            }
        }
        inertia
    }

    /// Inertia of a block-diagonal matrix from those of its blocks.
    pub fn combine(self, other: Inertia) -> Inertia {
        Inertia {
            positive: self.positive + other.positive,
            negative: self.negative + other.negative,
            zero: self.zero + other.zero,
        }
    }

    pub fn is_positive_definite(&self) -> bool {
        self.negative == 0 && self.zero == 0
    }

    pub fn is_negative_definite(&self) -> bool {
        self.positive == 0 && self.zero == 0
    }
}

/// Relative cutoff used when counting zero eigenvalues: a few hundred ulps,
/// comfortably above the backward error of a symmetric eigensolve.
pub fn inertia_tolerance<T: Scalar>() -> T {
    T::default_epsilon() * T::lit(1e3)
}

pub fn max_abs<T: Scalar>(m: &DMatrix<T>) -> T {
    m.amax()
}

/// Largest entry of `|m - m^T|`.
pub fn asymmetry<T: Scalar>(m: &DMatrix<T>) -> T {
    (m - m.transpose()).amax()
}
