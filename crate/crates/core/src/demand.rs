//! Stage II: users choose data demand given the price and sponsorship.

use nalgebra::DVector;

use crate::error::{MarketError, Result};
use crate::model::{EquilibriumMatrices, MarketInstance};
use crate::scalar::Scalar;

/// Leader decisions: a uniform price per data unit and per-user sponsorship
/// fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy<T: Scalar> {
    pub(crate) p: T,
    pub(crate) theta: DVector<T>,
}

impl<T: Scalar> Strategy<T> {
    pub fn new(p: T, theta: DVector<T>) -> Result<Self> {
        if !(p >= T::zero()) || !p.is_finite() {
            return Err(MarketError::InvalidStrategy(format!(
                "price must be >= 0, got {p:?}"
            )));
        }
        if let Some(i) = theta
            .iter()
            .position(|&v| !(v >= T::zero() && v <= T::one()))
        {
            return Err(MarketError::InvalidStrategy(format!(
                "theta[{i}] = {:?} outside [0, 1]",
                theta[i]
            )));
        }
        Ok(Self { p, theta })
    }

    /// Price `p` with no sponsorship.
    pub fn unsponsored(p: T, n: usize) -> Result<Self> {
        Self::new(p, DVector::zeros(n))
    }

    pub fn p(&self) -> T {
        self.p
    }

    pub fn theta(&self) -> &DVector<T> {
        &self.theta
    }

    pub fn n(&self) -> usize {
        self.theta.len()
    }

    /// Per-unit amount each user actually pays, `p (1 - theta_i)`.
    pub fn effective_prices(&self) -> DVector<T> {
        self.theta.map(|th| self.p * (T::one() - th))
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.n() != n {
            return Err(MarketError::DimensionMismatch {
                expected: n,
                actual: self.n(),
            });
        }
        Ok(())
    }
}

/// Demand vector together with each user's utility at that demand.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile<T: Scalar> {
    pub x: DVector<T>,
    pub utilities: DVector<T>,
}

impl<T: Scalar> DemandProfile<T> {
    pub fn total(&self) -> T {
        self.x.sum()
    }
}

fn check_index(n: usize, i: usize) -> Result<()> {
    if i >= n {
        return Err(MarketError::IndexOutOfRange { index: i, n });
    }
    Ok(())
}

/// `u_i = a_i x_i - b_i x_i^2 + x_i sum_j g_ij x_j - c (sum_j x_j)^2 - p (1 - theta_i) x_i`.
pub fn user_utility<T: Scalar>(
    inst: &MarketInstance<T>,
    strat: &Strategy<T>,
    x: &DVector<T>,
    i: usize,
) -> Result<T> {
    let n = inst.n();
    check_index(n, i)?;
    strat.check_len(n)?;
    if x.len() != n {
        return Err(MarketError::DimensionMismatch {
            expected: n,
            actual: x.len(),
        });
    }
    let xi = x[i];
    let network = inst.g().row(i).transpose().dot(x);
    let total = x.sum();
    let paid = strat.p() * (T::one() - strat.theta()[i]);
    Ok(inst.a()[i] * xi - inst.b()[i] * xi * xi + xi * network
        - inst.c() * total * total
        - paid * xi)
}

/// All users' utilities at `x`.
pub fn utilities<T: Scalar>(
    inst: &MarketInstance<T>,
    strat: &Strategy<T>,
    x: &DVector<T>,
) -> Result<DVector<T>> {
    let mut u = DVector::zeros(inst.n());
    for i in 0..inst.n() {
        u[i] = user_utility(inst, strat, x, i)?;
    }
    Ok(u)
}

/// User `i`'s optimal demand holding the others fixed. `x[i]` is ignored.
pub fn best_response_user<T: Scalar>(
    inst: &MarketInstance<T>,
    strat: &Strategy<T>,
    x: &DVector<T>,
    i: usize,
) -> Result<T> {
    let n = inst.n();
    check_index(n, i)?;
    strat.check_len(n)?;
    if x.len() != n {
        return Err(MarketError::DimensionMismatch {
            expected: n,
            actual: x.len(),
        });
    }
    let two_c = inst.c() + inst.c();
    let mut coupling = T::zero();
    for j in (0..n).filter(|&j| j != i) {
        coupling += (inst.g()[(i, j)] - two_c) * x[j];
    }
    let paid = strat.p() * (T::one() - strat.theta()[i]);
    let denom = (inst.b()[i] + inst.c()) * T::lit(2.0);
    Ok(((inst.a()[i] - paid + coupling) / denom).max(T::zero()))
}

/// Unclamped equilibrium demand `K (a - p (1 - theta))`.
pub fn linear_demand<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    strat: &Strategy<T>,
) -> Result<DVector<T>> {
    strat.check_len(inst.n())?;
    Ok(mats.k() * (inst.a() - strat.effective_prices()))
}

/// Closed-form Stage II equilibrium. Fails with
/// [`MarketError::NonPositiveDemand`] when some user would demand nothing.
pub fn demand_equilibrium<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    strat: &Strategy<T>,
) -> Result<DemandProfile<T>> {
    let x = linear_demand(inst, mats, strat)?;
    ensure_positive(&x)?;
    let utilities = utilities(inst, strat, &x)?;
    Ok(DemandProfile { x, utilities })
}

pub(crate) fn ensure_positive<T: Scalar>(x: &DVector<T>) -> Result<()> {
    let indices: Vec<usize> = (0..x.len()).filter(|&i| !(x[i] > T::zero())).collect();
    if indices.is_empty() {
        Ok(())
    } else {
        Err(MarketError::NonPositiveDemand {
            indices,
            min_demand: x.min().as_f64(),
        })
    }
}

/// Result of [`iterate_demand`].
#[derive(Debug, Clone, PartialEq)]
pub struct IteratedDemand<T: Scalar> {
    pub profile: DemandProfile<T>,
    pub iterations: usize,
    pub residual: T,
}

pub const DEFAULT_DEMAND_TOL: f64 = 1e-10;
pub const DEFAULT_DEMAND_MAX_ITER: usize = 100_000;

/// Simultaneous best-response updates from `x0` until the sup-norm change
/// drops below `tol`. Only converges when the Jacobi iteration matrix of the
/// demand system is contractive; a residual that overflows is reported as
/// [`MarketError::NoConvergence`] immediately.
pub fn iterate_demand<T: Scalar>(
    inst: &MarketInstance<T>,
    strat: &Strategy<T>,
    x0: &DVector<T>,
    tol: T,
    max_iter: usize,
) -> Result<IteratedDemand<T>> {
    let n = inst.n();
    strat.check_len(n)?;
    if x0.len() != n {
        return Err(MarketError::DimensionMismatch {
            expected: n,
            actual: x0.len(),
        });
    }
    if !(tol > T::zero()) {
        return Err(MarketError::InvalidConfig("tol must be positive".into()));
    }
    let blowup = T::lit(1e100).min(T::max_value().unwrap_or(T::lit(1e30)) * T::lit(1e-8));
    let mut x = x0.clone();
    let mut next = DVector::zeros(n);
    let mut residual = T::zero();
    for iter in 1..=max_iter {
        for i in 0..n {
            next[i] = best_response_user(inst, strat, &x, i)?;
        }
        residual = (&next - &x).amax();
        std::mem::swap(&mut x, &mut next);
        if !residual.is_finite() || residual > blowup {
            return Err(MarketError::NoConvergence {
                iterations: iter,
                residual: residual.as_f64(),
                history: Vec::new(),
            });
        }
        if residual < tol {
            let utilities = utilities(inst, strat, &x)?;
            return Ok(IteratedDemand {
                profile: DemandProfile { x, utilities },
                iterations: iter,
                residual,
            });
        }
    }
    Err(MarketError::NoConvergence {
        iterations: max_iter,
        residual: residual.as_f64(),
        history: Vec::new(),
    })
}

/// Grid search of `u_i` over `{0, step, 2 step, ..., x_max}` with the other
/// users held at `x`. Test oracle for [`best_response_user`].
pub fn brute_force_user_optimum<T: Scalar>(
    inst: &MarketInstance<T>,
    strat: &Strategy<T>,
    x: &DVector<T>,
    i: usize,
    grid_step: T,
    x_max: T,
) -> Result<T> {
    if !(grid_step > T::zero()) {
        return Err(MarketError::InvalidConfig(
            "grid_step must be positive".into(),
        ));
    }
    let steps = (x_max / grid_step).floor().to_usize().unwrap_or(0);
    let mut probe = x.clone();
    probe[i] = T::zero();
    let mut best = (T::zero(), user_utility(inst, strat, &probe, i)?);
    for k in 1..=steps {
        let xi = grid_step * T::from_usize(k).expect("grid index");
        probe[i] = xi;
        let u = user_utility(inst, strat, &probe, i)?;
        if u > best.1 {
            best = (xi, u);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_matrices;
    use crate::test_support::{random_instance, single_user, two_user};
    use proptest::prelude::{prop_assert, proptest};

    fn strat(p: f64, theta: &[f64]) -> Strategy<f64> {
        Strategy::new(p, DVector::from_row_slice(theta)).unwrap()
    }

    #[test]
    fn zero_demand_zero_utility() {
        let inst = two_user(4.0);
        let u = user_utility(&inst, &strat(10.0, &[0.2, 0.3]), &DVector::zeros(2), 1).unwrap();
        assert_eq!(u, 0.0);
    }

    #[test]
    fn scalar_utility_by_hand() {
        let inst = single_user();
        let u = user_utility(
            &inst,
            &strat(10.0, &[0.0]),
            &DVector::from_element(1, 0.5),
            0,
        )
        .unwrap();
        assert!((u - 1.75).abs() < 1e-12);
    }

    #[test]
    fn symmetric_users_equal_utility() {
        let inst = two_user(4.0);
        let s = strat(7.0, &[0.4, 0.4]);
        let x = DVector::from_element(2, 0.3);
        let u0 = user_utility(&inst, &s, &x, 0).unwrap();
        let u1 = user_utility(&inst, &s, &x, 1).unwrap();
        assert!((u0 - u1).abs() < 1e-14);
    }

    #[test]
    fn index_and_length_errors() {
        let inst = two_user(4.0);
        let s = strat(1.0, &[0.0, 0.0]);
        let x = DVector::zeros(2);
        assert_eq!(
            user_utility(&inst, &s, &x, 2),
            Err(MarketError::IndexOutOfRange { index: 2, n: 2 })
        );
        assert!(user_utility(&inst, &strat(1.0, &[0.0]), &x, 0).is_err());
        assert!(Strategy::new(1.0, DVector::from_element(1, 1.5)).is_err());
        assert!(Strategy::new(-1.0, DVector::from_element(1, 0.5)).is_err());
    }

    #[test]
    fn best_response_examples() {
        let inst = single_user();
        let x = DVector::zeros(1);
        assert_eq!(
            best_response_user(&inst, &strat(30.0, &[0.0]), &x, 0).unwrap(),
            0.0
        );
        let br = best_response_user(&inst, &strat(10.0, &[0.5]), &x, 0).unwrap();
        assert!((br - 25.0 / 66.0).abs() < 1e-15);

        let pair = two_user(4.0);
        let x = DVector::from_element(2, 15.0 / 34.0);
        let br = best_response_user(&pair, &strat(0.0, &[0.0, 0.0]), &x, 0).unwrap();
        assert!((br - 15.0 / 34.0).abs() < 1e-14);
    }

    #[test]
    fn closed_form_examples() {
        let inst = single_user();
        let m = build_matrices(&inst).unwrap();
        let d = demand_equilibrium(&inst, &m, &strat(10.0, &[0.5])).unwrap();
        assert!((d.x[0] - 25.0 / 66.0).abs() < 1e-15);

        let pair = two_user(4.0);
        let m = build_matrices(&pair).unwrap();
        let d = demand_equilibrium(&pair, &m, &strat(0.0, &[0.0, 0.0])).unwrap();
        assert!((d.x[0] - 15.0 / 34.0).abs() < 1e-14);
        assert!((d.x[1] - 15.0 / 34.0).abs() < 1e-14);
    }

    #[test]
    fn price_at_marginal_value_is_nonpositive_demand() {
        let pair = two_user(4.0);
        let m = build_matrices(&pair).unwrap();
        let err = demand_equilibrium(&pair, &m, &strat(30.0, &[0.0, 0.0])).unwrap_err();
        assert!(
            matches!(err, MarketError::NonPositiveDemand { ref indices, .. } if indices == &vec![0, 1])
        );
    }

    #[test]
    fn iteration_matches_closed_form() {
        let pair = two_user(4.0);
        let m = build_matrices(&pair).unwrap();
        let s = strat(0.0, &[0.0, 0.0]);
        let it = iterate_demand(&pair, &s, &DVector::zeros(2), 1e-10, 100_000).unwrap();
        assert!((it.profile.x[0] - 15.0 / 34.0).abs() < 1e-9);
        assert!((it.profile.x[1] - 15.0 / 34.0).abs() < 1e-9);

        let closed = demand_equilibrium(&pair, &m, &s).unwrap();
        let from_fixed = iterate_demand(&pair, &s, &closed.x, 1e-10, 10).unwrap();
        assert_eq!(from_fixed.iterations, 1);
    }

    #[test]
    fn iteration_diverges_without_boundedness() {
        let inst = two_user(76.0);
        let s = strat(0.0, &[0.0, 0.0]);
        let err = iterate_demand(&inst, &s, &DVector::zeros(2), 1e-10, 100_000).unwrap_err();
        assert!(matches!(err, MarketError::NoConvergence { .. }));
    }

    #[test]
    fn brute_force_examples() {
        let inst = single_user();
        let x = DVector::zeros(1);
        let huge = strat(1e6, &[0.0]);
        assert_eq!(
            brute_force_user_optimum(&inst, &huge, &x, 0, 1e-3, 2.0).unwrap(),
            0.0
        );
        let s = strat(10.0, &[0.5]);
        let bf = brute_force_user_optimum(&inst, &s, &x, 0, 1e-4, 2.0).unwrap();
        assert!((bf - 25.0 / 66.0).abs() <= 1e-4);
    }

    #[test]
    fn sponsorship_raises_own_demand() {
        for seed in 0..10 {
            let inst = random_instance(8, seed);
            let m = build_matrices(&inst).unwrap();
            let base = strat(12.0, &[0.2; 8]);
            let x0 = demand_equilibrium(&inst, &m, &base).unwrap().x;
            for i in 0..8 {
                let mut th = base.theta().clone();
                th[i] = 0.7;
                let x1 = demand_equilibrium(&inst, &m, &Strategy::new(12.0, th).unwrap())
                    .unwrap()
                    .x;
                assert!(x1[i] >= x0[i]);
            }
        }
    }

    #[test]
    fn first_order_condition_at_equilibrium() {
        let inst = random_instance(5, 3);
        let m = build_matrices(&inst).unwrap();
        let s = strat(9.0, &[0.1, 0.5, 0.0, 0.9, 0.3]);
        let x = demand_equilibrium(&inst, &m, &s).unwrap().x;
        let h = 1e-6;
        for i in 0..5 {
            let mut up = x.clone();
            up[i] += h;
            let mut down = x.clone();
            down[i] -= h;
            let d = (user_utility(&inst, &s, &up, i).unwrap()
                - user_utility(&inst, &s, &down, i).unwrap())
                / (2.0 * h);
            assert!(d.abs() < 1e-4, "user {i}: {d}");
        }
    }

    proptest! {
        #[test]
        fn equilibrium_is_fixed_point(seed in 0u64..1000, n in 1usize..7, p in 0.0f64..20.0, th in 0.0f64..1.0) {
            let inst = random_instance(n, seed);
            let m = build_matrices(&inst).unwrap();
            let s = Strategy::new(p, DVector::from_fn(n, |i, _| (th + 0.13 * i as f64) % 1.0)).unwrap();
            if let Ok(d) = demand_equilibrium(&inst, &m, &s) {
                for i in 0..n {
                    let br = best_response_user(&inst, &s, &d.x, i).unwrap();
                    prop_assert!((br - d.x[i]).abs() < 1e-8);
                }
            }
        }

        #[test]
        fn brute_force_agrees_with_best_response(seed in 0u64..1000, n in 1usize..5, p in 0.0f64..25.0) {
            let inst = random_instance(n, seed);
            let s = Strategy::unsponsored(p, n).unwrap();
            let others = DVector::from_fn(n, |i, _| 0.05 * (i as f64 + 1.0));
            for i in 0..n {
                let br = best_response_user(&inst, &s, &others, i).unwrap();
                let bf = brute_force_user_optimum(&inst, &s, &others, i, 1e-3, 1.5).unwrap();
                prop_assert!((br - bf).abs() <= 1e-3, "br {} bf {}", br, bf);
            }
        }
    }
}
