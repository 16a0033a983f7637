//! Stage I with cooperation: the content provider and the service provider
//! jointly maximize their aggregate payoff.
//!
//! The aggregate depends on `(theta, p)` only through the effective prices
//! `q = p (1 - theta)`, so the program is solved in `q`, where it is a strictly
//! concave quadratic, and a representative `(p, theta)` is recovered
//! afterwards. A projected gradient search directly over `(theta, p)` is kept
//! as an independent route to the same optimum.

use nalgebra::{DMatrix, DVector};

use crate::competitive::{self, SolverSettings};
use crate::demand::{self, DemandProfile, Strategy};
use crate::error::{MarketError, Result};
use crate::linalg::{self, SymEigen};
use crate::model::{EquilibriumMatrices, MarketInstance};
use crate::optim::{self, AscentSettings, BoxBounds};
use crate::scalar::Scalar;
use crate::validate;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    ClosedForm,
    Gradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CooperativeResult<T: Scalar> {
    pub strategy: Strategy<T>,
    pub effective_price: DVector<T>,
    pub demand: DemandProfile<T>,
    pub aggregate_payoff: T,
    pub cp_profit: T,
    pub sp_revenue: T,
    pub method: SolveMethod,
    pub iterations: usize,
    /// Closed form: finite-difference gradient norm at the optimum (projected
    /// when nonnegativity binds). Gradient method: final projected gradient.
    pub residual: T,
    /// Largest eigenvalue of `-2 gamma t K^2 - 2 K`.
    pub reduced_hessian_max_eigenvalue: T,
    /// Nonnegativity of some effective price was active.
    pub constrained: bool,
    /// Every effective price was zero, so `p` is arbitrary; reported as
    /// `p = 1`, `theta = 1`.
    pub degenerate: bool,
}

/// Aggregate payoff at effective prices `q`, with `x = K (a - q)` left
/// unclamped.
fn coalition_value<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    q: &DVector<T>,
) -> T {
    let x = mats.k() * (inst.a() - q);
    competitive::ad_value(inst, &x) + q.dot(&x)
}

/// `gamma (s 1^T x - t x^T x) + q^T x` with `x = K (a - q)`.
pub fn coalition_payoff<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    q: &DVector<T>,
) -> Result<T> {
    check_q(inst, q)?;
    let x = mats.k() * (inst.a() - q);
    demand::ensure_positive(&x)?;
    Ok(competitive::ad_value(inst, &x) + q.dot(&x))
}

fn check_q<T: Scalar>(inst: &MarketInstance<T>, q: &DVector<T>) -> Result<()> {
    if q.len() != inst.n() {
        return Err(MarketError::DimensionMismatch {
            expected: inst.n(),
            actual: q.len(),
        });
    }
    if let Some(i) = q.iter().position(|&v| !(v >= T::zero())) {
        return Err(MarketError::InvalidStrategy(format!(
            "effective price q[{i}] = {:?} is negative",
            q[i]
        )));
    }
    Ok(())
}

/// `-gamma s K 1 + (2 gamma t K + I) K (a - q) - K q`.
pub fn coalition_gradient<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    q: &DVector<T>,
) -> Result<DVector<T>> {
    if q.len() != inst.n() {
        return Err(MarketError::DimensionMismatch {
            expected: inst.n(),
            actual: q.len(),
        });
    }
    Ok(q_gradient(inst, mats, q))
}

fn q_gradient<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    q: &DVector<T>,
) -> DVector<T> {
    let k = mats.k();
    let gt = inst.gamma() * inst.t();
    let x = k * (inst.a() - q);
    // (2 gamma t K + I) x - K (gamma s 1 + q)
    k * &x * (gt + gt) + &x - k * q.add_scalar(inst.gamma() * inst.s())
}

/// `-2 gamma t K^2 - 2 K`.
pub fn reduced_hessian<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
) -> DMatrix<T> {
    let k = mats.k();
    let two = T::lit(2.0);
    -(k * k) * (two * inst.gamma() * inst.t()) - k * two
}

/// Largest eigenvalue of the reduced Hessian, read off the spectrum of `K`.
pub fn reduced_hessian_max_eigenvalue<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
) -> T {
    let two = T::lit(2.0);
    let gt = inst.gamma() * inst.t();
    mats.k_eigen()
        .eigenvalues
        .iter()
        .map(|&l| -two * gt * l * l - two * l)
        .fold(-T::lit(f64::INFINITY), |m, v| m.max(v))
}

/// `P + Pi` at `(theta, p)`, with demand `K (a - q)` unclamped.
pub fn aggregate_payoff<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    strat: &Strategy<T>,
) -> Result<T> {
    strat.check_len(inst.n())?;
    Ok(coalition_value(inst, mats, &strat.effective_prices()))
}

/// Gradient of the aggregate payoff in `(theta, p)`, stacked with `p` last.
pub fn aggregate_payoff_gradient<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    strat: &Strategy<T>,
) -> Result<DVector<T>> {
    strat.check_len(inst.n())?;
    Ok(joint_gradient(inst, mats, strat.p(), strat.theta()))
}

fn joint_gradient<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    p: T,
    theta: &DVector<T>,
) -> DVector<T> {
    let n = inst.n();
    let unsponsored = theta.map(|th| T::one() - th);
    let gq = q_gradient(inst, mats, &unsponsored.scale(p));
    let mut out = DVector::zeros(n + 1);
    out.rows_mut(0, n).copy_from(&(-&gq * p));
    out[n] = unsponsored.dot(&gq);
    out
}

/// `p = max_i q_i`, `theta_i = 1 - q_i / p`.
pub fn recover_strategy<T: Scalar>(q: &DVector<T>) -> Result<Strategy<T>> {
    if q.is_empty() {
        return Err(MarketError::EmptyInput);
    }
    if let Some(i) = q.iter().position(|&v| !(v >= T::zero())) {
        return Err(MarketError::InvalidStrategy(format!(
            "effective price q[{i}] = {:?} is negative",
            q[i]
        )));
    }
    let p = q.max();
    if p == T::zero() {
        return Err(MarketError::DegenerateQ);
    }
    // The argmax gets exactly zero sponsorship; elsewhere the clamp only
    // absorbs rounding.
    let theta = q.map(|qi| (T::one() - qi / p).max(T::zero()).min(T::one()));
    Strategy::new(p, theta)
}

fn recover_or_fallback<T: Scalar>(q: &DVector<T>) -> Result<(Strategy<T>, bool)> {
    match recover_strategy(q) {
        Ok(s) => Ok((s, false)),
        Err(MarketError::DegenerateQ) => Ok((
            Strategy::new(T::one(), DVector::from_element(q.len(), T::one()))?,
            true,
        )),
        Err(e) => Err(e),
    }
}

/// Solution of `(2 gamma t K + 2 I) q = (2 gamma t K + I) a - gamma s 1`,
/// before any sign constraint.
pub fn stationary_effective_price<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
) -> Result<DVector<T>> {
    let n = inst.n();
    let k2gt = mats.k() * (T::lit(2.0) * inst.gamma() * inst.t());
    let identity = DMatrix::<T>::identity(n, n);
    let lhs = &k2gt + &identity * T::lit(2.0);
    let rhs = (k2gt + identity) * inst.a() - DVector::from_element(n, inst.gamma() * inst.s());
    linalg::spd_solve(&lhs, &rhs)
}

#[allow(clippy::too_many_arguments)]
fn finish<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    q: DVector<T>,
    strategy: Strategy<T>,
    degenerate: bool,
    method: SolveMethod,
    iterations: usize,
    residual: T,
    constrained: bool,
) -> Result<CooperativeResult<T>> {
    let demand = demand::demand_equilibrium(inst, mats, &strategy)?;
    let cp_profit = competitive::cp_profit(inst, &strategy, &demand.x)?;
    let sp_revenue = competitive::sp_revenue(&strategy, &demand.x);
    Ok(CooperativeResult {
        aggregate_payoff: cp_profit + sp_revenue,
        cp_profit,
        sp_revenue,
        effective_price: q,
        strategy,
        demand,
        method,
        iterations,
        residual,
        reduced_hessian_max_eigenvalue: reduced_hessian_max_eigenvalue(inst, mats),
        constrained,
        degenerate,
    })
}

/// Exact optimum from the first-order system. Falls back to projected
/// gradient over `q >= 0` when the stationary point has a negative entry.
pub fn solve_cooperative_closed_form<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
) -> Result<CooperativeResult<T>> {
    let hmax = reduced_hessian_max_eigenvalue(inst, mats);
    if !(hmax < T::zero()) {
        return Err(MarketError::NotPositiveDefinite {
            min_eigenvalue: -hmax.as_f64(),
        });
    }
    let n = inst.n();
    let mut q = stationary_effective_price(inst, mats)?;
    let mut iterations = 0;
    let bounds = BoxBounds::nonnegative(n);
    let constrained = q.iter().any(|&v| v < T::zero());
    let residual = if constrained {
        let scale = inst.a().amax().max(T::one());
        let settings = AscentSettings::new(
            T::default_epsilon().sqrt() * T::lit(1e-2) * scale,
            1_000_000,
        );
        let out = optim::projected_gradient_ascent(
            |z| coalition_value(inst, mats, z),
            |z| q_gradient(inst, mats, z),
            &q,
            &bounds,
            &settings,
        )?;
        iterations = out.iterations;
        q = out.point;
        out.residual
    } else {
        let step = T::lit(1e-6) * q.amax().max(T::one());
        let fd = validate::finite_difference_gradient(|z| coalition_value(inst, mats, z), &q, step);
        fd.amax()
    };
    let (strategy, degenerate) = recover_or_fallback(&q)?;
    finish(
        inst,
        mats,
        q,
        strategy,
        degenerate,
        SolveMethod::ClosedForm,
        iterations,
        residual,
        constrained,
    )
}

/// Upper end of the price range searched by the gradient method.
pub fn price_cap<T: Scalar>(inst: &MarketInstance<T>) -> T {
    inst.a().max() * T::lit(2.0)
}

/// Projected gradient ascent with step halving over
/// `[0, 1]^n x [p_cap 1e-9, p_cap]`, from no sponsorship at half the largest
/// intercept.
pub fn solve_cooperative_gradient<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    settings: &SolverSettings<T>,
) -> Result<CooperativeResult<T>> {
    let init = Strategy::unsponsored(inst.a().max() * T::lit(0.5), inst.n())?;
    solve_cooperative_gradient_from(inst, mats, &init, settings)
}

pub fn solve_cooperative_gradient_from<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    init: &Strategy<T>,
    settings: &SolverSettings<T>,
) -> Result<CooperativeResult<T>> {
    init.check_len(inst.n())?;
    if !(settings.tol > T::zero()) {
        return Err(MarketError::InvalidConfig("tol must be positive".into()));
    }
    let n = inst.n();
    let p_max = price_cap(inst);
    let mut lower = DVector::zeros(n + 1);
    lower[n] = p_max * T::lit(1e-9);
    let mut upper = DVector::from_element(n + 1, T::one());
    upper[n] = p_max;
    let bounds = BoxBounds::new(lower, upper);

    let split = |z: &DVector<T>| (z[n], z.rows(0, n).into_owned());
    let value = |z: &DVector<T>| {
        let (p, theta) = split(z);
        coalition_value(inst, mats, &theta.map(|th| p * (T::one() - th)))
    };
    let gradient = |z: &DVector<T>| {
        let (p, theta) = split(z);
        joint_gradient(inst, mats, p, &theta)
    };
    let mut z0 = DVector::zeros(n + 1);
    z0.rows_mut(0, n).copy_from(init.theta());
    z0[n] = init.p();
    let out = optim::projected_gradient_ascent(
        value,
        gradient,
        &z0,
        &bounds,
        &AscentSettings::new(settings.tol, settings.max_iter),
    )?;
    let (p, theta) = split(&out.point);
    let strategy = Strategy::new(p, theta)?;
    let q = strategy.effective_prices();
    let constrained = q.iter().any(|&v| v == T::zero());
    finish(
        inst,
        mats,
        q,
        strategy,
        false,
        SolveMethod::Gradient,
        out.iterations,
        out.residual,
        constrained,
    )
}

/// Largest eigenvalue of the reduced Hessian computed by a full symmetric
/// eigensolve rather than from the spectrum of `K`.
pub fn reduced_hessian_max_eigenvalue_direct<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
) -> T {
    SymEigen::new(&reduced_hessian(inst, mats)).max_eigenvalue()
}
