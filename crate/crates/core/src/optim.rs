//! Projected gradient ascent on a box with halving (Armijo) step search.

use nalgebra::DVector;

use crate::error::{MarketError, Result};
use crate::scalar::Scalar;

/// Componentwise bounds; use an infinite entry for an open side.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds<T: Scalar> {
    pub lower: DVector<T>,
    pub upper: DVector<T>,
}

impl<T: Scalar> BoxBounds<T> {
    pub fn new(lower: DVector<T>, upper: DVector<T>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self { lower, upper }
    }

    pub fn unit(n: usize) -> Self {
        Self::new(DVector::zeros(n), DVector::from_element(n, T::one()))
    }

    pub fn nonnegative(n: usize) -> Self {
        Self::new(
            DVector::zeros(n),
            DVector::from_element(n, T::lit(f64::INFINITY)),
        )
    }

    pub fn project(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_fn(x.len(), |i, _| x[i].max(self.lower[i]).min(self.upper[i]))
    }

    /// Indices where `x` sits on a bound.
    pub fn active(&self, x: &DVector<T>) -> Vec<usize> {
        (0..x.len())
            .filter(|&i| x[i] <= self.lower[i] || x[i] >= self.upper[i])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentSettings<T: Scalar> {
    /// Stop once `|x - P(x + grad)|_inf` falls below this.
    pub tol: T,
    pub max_iter: usize,
    pub initial_step: T,
    /// Sufficient-increase fraction.
    pub armijo: T,
}

impl<T: Scalar> AscentSettings<T> {
    pub fn new(tol: T, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            initial_step: T::one(),
            armijo: T::lit(1e-4),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentOutcome<T: Scalar> {
    pub point: DVector<T>,
    pub value: T,
    pub iterations: usize,
    pub residual: T,
}

/// Unit-step projected gradient `x - P(x + grad)`, in sup norm.
pub fn projected_gradient_norm<T: Scalar>(
    bounds: &BoxBounds<T>,
    x: &DVector<T>,
    grad: &DVector<T>,
) -> T {
    (x - bounds.project(&(x + grad))).amax()
}

/// Maximizes `f` over `bounds` from `x0`.
pub fn projected_gradient_ascent<T, F, G>(
    f: F,
    grad: G,
    x0: &DVector<T>,
    bounds: &BoxBounds<T>,
    settings: &AscentSettings<T>,
) -> Result<AscentOutcome<T>>
where
    T: Scalar,
    F: Fn(&DVector<T>) -> T,
    G: Fn(&DVector<T>) -> DVector<T>,
{
    let mut x = bounds.project(x0);
    let mut fx = f(&x);
    let mut g = grad(&x);
    let mut residual = projected_gradient_norm(bounds, &x, &g);
    let mut step = settings.initial_step;
    let min_step = T::default_epsilon() * T::default_epsilon();
    let noise = T::default_epsilon() * T::lit(64.0);

    for iter in 0..settings.max_iter {
        if residual < settings.tol {
            return Ok(AscentOutcome {
                point: x,
                value: fx,
                iterations: iter,
                residual,
            });
        }
        loop {
            let y = bounds.project(&(&x + &g * step));
            let fy = f(&y);
            let dir = &y - &x;
            let gain = settings.armijo * g.dot(&dir);
            let accepted = if fy >= fx + gain {
                true
            } else if (fy - fx).abs() <= noise * fx.abs().max(T::one()) {
                // Below rounding noise in f: fall back to the slope at the
                // trial point, which still resolves progress.
                grad(&y).dot(&dir) >= gain
            } else {
                false
            };
            if accepted {
                x = y;
                fx = fy;
                break;
            }
            step *= T::lit(0.5);
            if step < min_step {
                return Err(MarketError::NoConvergence {
                    iterations: iter,
                    residual: residual.as_f64(),
                    history: Vec::new(),
                });
            }
        }
        step *= T::lit(2.0);
        g = grad(&x);
        residual = projected_gradient_norm(bounds, &x, &g);
    }
    if residual < settings.tol {
        return Ok(AscentOutcome {
            point: x,
            value: fx,
            iterations: settings.max_iter,
            residual,
        });
    }
    Err(MarketError::NoConvergence {
        iterations: settings.max_iter,
        residual: residual.as_f64(),
        history: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn box_constrained_concave_quadratic() {
        // max -(x-c)^T H (x-c) / 2 with c outside the unit box.
        let h = dmatrix![2.0, 0.5; 0.5, 1.0];
        let center = dvector![1.5, -0.3];
        let f = |x: &DVector<f64>| {
            let d = x - &center;
            -0.5 * d.dot(&(&h * &d))
        };
        let grad = |x: &DVector<f64>| -(&h * (x - &center));
        let out = projected_gradient_ascent(
            f,
            grad,
            &dvector![0.5, 0.5],
            &BoxBounds::unit(2),
            &AscentSettings::new(1e-12, 10_000),
        )
        .unwrap();
        // x0 = 1 active; x1 solves 0.5 (1 - 1.5) + (x1 + 0.3) = 0 -> x1 = -0.05 -> clamped 0.
        assert!((out.point[0] - 1.0).abs() < 1e-10);
        assert!(out.point[1].abs() < 1e-10);
    }

    #[test]
    fn interior_optimum_terminates_immediately() {
        let f = |x: &DVector<f64>| -(x[0] - 0.25).powi(2);
        let grad = |x: &DVector<f64>| dvector![-2.0 * (x[0] - 0.25)];
        let out = projected_gradient_ascent(
            f,
            grad,
            &dvector![0.25],
            &BoxBounds::unit(1),
            &AscentSettings::new(1e-10, 10),
        )
        .unwrap();
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn iteration_cap_reported() {
        let f = |x: &DVector<f64>| -(x[0] - 3.0).powi(2) * 1e-6;
        let grad = |x: &DVector<f64>| dvector![-2e-6 * (x[0] - 3.0)];
        let settings = AscentSettings {
            initial_step: 1e-3,
            ..AscentSettings::new(1e-14, 2)
        };
        let err = projected_gradient_ascent(
            f,
            grad,
            &dvector![0.0],
            &BoxBounds::nonnegative(1),
            &settings,
        );
        assert!(matches!(
            err,
            Err(MarketError::NoConvergence { iterations: 2, .. })
        ));
    }
}
