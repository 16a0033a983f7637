//! Stage I without cooperation: the content provider picks sponsorship, the
//! service provider picks the price, each best-responding to the other.

use nalgebra::{DMatrix, DVector};

use crate::demand::{self, DemandProfile, Strategy};
use crate::error::{MarketError, Result};
use crate::model::{EquilibriumMatrices, MarketInstance};
use crate::optim::{self, AscentSettings, BoxBounds};
use crate::scalar::Scalar;
use crate::validate;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayoffPair<T: Scalar> {
    pub cp_profit: T,
    pub sp_revenue: T,
}

impl<T: Scalar> PayoffPair<T> {
    pub fn aggregate(&self) -> T {
        self.cp_profit + self.sp_revenue
    }
}

/// Tolerance and iteration cap for an iterative solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings<T: Scalar> {
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for SolverSettings<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-8),
            max_iter: 10_000,
        }
    }
}

/// `gamma sum_i (s x_i - t x_i^2) - p sum_i x_i theta_i`.
pub fn cp_profit<T: Scalar>(
    inst: &MarketInstance<T>,
    strat: &Strategy<T>,
    x: &DVector<T>,
) -> Result<T> {
    strat.check_len(inst.n())?;
    if x.len() != inst.n() {
        return Err(MarketError::DimensionMismatch {
            expected: inst.n(),
            actual: x.len(),
        });
    }
    Ok(ad_value(inst, x) - strat.p() * strat.theta().dot(x))
}

/// `gamma sum_i (s x_i - t x_i^2)`.
pub(crate) fn ad_value<T: Scalar>(inst: &MarketInstance<T>, x: &DVector<T>) -> T {
    inst.gamma() * (inst.s() * x.sum() - inst.t() * x.dot(x))
}

/// `p sum_i x_i`.
pub fn sp_revenue<T: Scalar>(strat: &Strategy<T>, x: &DVector<T>) -> T {
    strat.p() * x.sum()
}

pub fn payoffs<T: Scalar>(
    inst: &MarketInstance<T>,
    strat: &Strategy<T>,
    x: &DVector<T>,
) -> Result<PayoffPair<T>> {
    Ok(PayoffPair {
        cp_profit: cp_profit(inst, strat, x)?,
        sp_revenue: sp_revenue(strat, x),
    })
}

/// Content-provider profit with demand at the Stage II equilibrium
/// `x = K (a - p (1 - theta))` (no sign restriction on `x`).
pub fn cp_profit_at<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    strat: &Strategy<T>,
) -> Result<T> {
    let x = demand::linear_demand(inst, mats, strat)?;
    cp_profit(inst, strat, &x)
}

/// Service-provider revenue with demand at the Stage II equilibrium.
pub fn sp_revenue_at<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    strat: &Strategy<T>,
) -> Result<T> {
    let x = demand::linear_demand(inst, mats, strat)?;
    Ok(sp_revenue(strat, &x))
}

/// Gradient of the profit with respect to sponsorship, through the demand
/// response `dx/dtheta = p K`:
/// `gamma s p K 1 - 2 t gamma p K^2 (a - q) - p K a + p^2 K (1 - theta) - p^2 K theta`.
pub fn cp_profit_gradient<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    strat: &Strategy<T>,
) -> Result<DVector<T>> {
    strat.check_len(inst.n())?;
    let k = mats.k();
    let p = strat.p();
    let gamma_t = inst.gamma() * inst.t();
    let two = T::lit(2.0);
    let ones = DVector::from_element(inst.n(), T::one());
    let unsponsored = ones.map(|v| v) - strat.theta();
    let slack = inst.a() - strat.effective_prices();
    let k1 = k * &ones;
    let k_slack = k * &slack;
    Ok(
        k1 * (inst.gamma() * inst.s() * p) - k * &k_slack * (two * gamma_t * p) - k * inst.a() * p
            + k * unsponsored * (p * p)
            - k * strat.theta() * (p * p),
    )
}

/// Derivative of revenue with respect to price, `1^T K a - 2 p 1^T K (1 - theta)`.
pub fn sp_revenue_derivative<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    strat: &Strategy<T>,
) -> Result<T> {
    strat.check_len(inst.n())?;
    let k1 = mats.k() * DVector::from_element(inst.n(), T::one());
    let unsponsored = strat.theta().map(|th| T::one() - th);
    Ok(k1.dot(inst.a()) - T::lit(2.0) * strat.p() * k1.dot(&unsponsored))
}

/// Sponsorship Hessian of the profit, `-2 t gamma p^2 K^2 - 2 p^2 K`.
pub fn cp_hessian<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    p: T,
) -> DMatrix<T> {
    let k = mats.k();
    let p2 = p * p;
    (k * k) * (-T::lit(2.0) * inst.t() * inst.gamma() * p2) - k * (T::lit(2.0) * p2)
}

/// Largest eigenvalue of [`cp_hessian`], from the spectrum of `K`.
pub fn cp_hessian_max_eigenvalue<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    p: T,
) -> T {
    let gt = inst.gamma() * inst.t();
    mats.k_eigen()
        .eigenvalues
        .iter()
        .map(|&l| -T::lit(2.0) * p * p * (gt * l * l + l))
        .fold(-T::lit(f64::INFINITY), |a, b| a.max(b))
}

/// Price curvature of the revenue, `-2 1^T K (1 - theta)`.
pub fn sp_curvature<T: Scalar>(mats: &EquilibriumMatrices<T>, theta: &DVector<T>) -> T {
    let unsponsored = theta.map(|th| T::one() - th);
    let k1 = mats.k() * DVector::from_element(theta.len(), T::one());
    -T::lit(2.0) * k1.dot(&unsponsored)
}

/// Unconstrained stationary point of the profit in sponsorship:
/// `(1 / 2p) (t gamma K + I)^-1 [gamma s 1 + (2 t gamma K + I)(p 1 - a)]`.
pub fn cp_stationary_point<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    p: T,
) -> Result<DVector<T>> {
    if !(p > T::zero()) {
        return Err(MarketError::DegeneratePrice(p.as_f64()));
    }
    let n = inst.n();
    let k = mats.k();
    let gt = inst.gamma() * inst.t();
    let identity = DMatrix::<T>::identity(n, n);
    let lhs = k * gt + &identity;
    let price_gap = inst.a().map(|a| p - a);
    let rhs =
        DVector::from_element(n, inst.gamma() * inst.s()) + (k * (gt + gt) + identity) * price_gap;
    let theta = crate::linalg::spd_solve(&lhs, &rhs)?;
    Ok(theta / (p + p))
}

/// Stationary point clamped componentwise to `[0, 1]`.
pub fn cp_best_response<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    p: T,
) -> Result<DVector<T>> {
    Ok(cp_stationary_point(inst, mats, p)?.map(clamp_unit))
}

fn clamp_unit<T: Scalar>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

/// Box-constrained best response of the content provider.
#[derive(Debug, Clone, PartialEq)]
pub struct CpResponse<T: Scalar> {
    pub theta: DVector<T>,
    /// The stationary point left `[0, 1]^n` and the box maximizer was
    /// found by projected gradient ascent.
    pub projected: bool,
    pub iterations: usize,
}

/// Exact maximizer of the profit over `[0, 1]^n`: the stationary point when
/// it is feasible, otherwise projected gradient ascent started from its
/// clamp.
pub fn cp_box_response<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    p: T,
    settings: &AscentSettings<T>,
) -> Result<CpResponse<T>> {
    let stationary = cp_stationary_point(inst, mats, p)?;
    if stationary.iter().all(|&v| v >= T::zero() && v <= T::one()) {
        return Ok(CpResponse {
            theta: stationary,
            projected: false,
            iterations: 0,
        });
    }
    let start = stationary.map(clamp_unit);
    let n = inst.n();
    let profit = |theta: &DVector<T>| {
        let q = theta.map(|th| p * (T::one() - th));
        let x = mats.k() * (inst.a() - q);
        ad_value(inst, &x) - p * theta.dot(&x)
    };
    let gradient = |theta: &DVector<T>| {
        let s = Strategy {
            p,
            theta: theta.clone(),
        };
        cp_profit_gradient(inst, mats, &s).expect("dimensions checked")
    };
    let out =
        optim::projected_gradient_ascent(profit, gradient, &start, &BoxBounds::unit(n), settings)?;
    Ok(CpResponse {
        theta: out.point,
        projected: true,
        iterations: out.iterations,
    })
}

/// `p* = 1^T K a / (2 1^T K (1 - theta))`.
pub fn sp_best_response<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    theta: &DVector<T>,
) -> Result<T> {
    if theta.len() != inst.n() {
        return Err(MarketError::DimensionMismatch {
            expected: inst.n(),
            actual: theta.len(),
        });
    }
    let curvature = sp_curvature(mats, theta);
    if !(curvature < T::zero()) {
        return Err(MarketError::AllSponsored);
    }
    let k1 = mats.k() * DVector::from_element(inst.n(), T::one());
    Ok(k1.dot(inst.a()) / (-curvature))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompetitiveResult<T: Scalar> {
    pub strategy: Strategy<T>,
    pub demand: DemandProfile<T>,
    pub payoffs: PayoffPair<T>,
    /// Best-response sweeps performed.
    pub iterations: usize,
    /// `max(|dp| / max(1, p), |dtheta|_inf)` on the last sweep.
    pub residual: T,
    /// The `[0, 1]` box was active in the content provider's last response.
    pub projected: bool,
    /// Boundedness of payments from below held at the equilibrium, so the
    /// equilibrium is certified unique.
    pub uniqueness_certified: bool,
    /// Largest eigenvalue of the sponsorship Hessian over all visited prices.
    pub cp_hessian_max_eigenvalue: T,
    /// Largest price curvature of the revenue over all visited sponsorships.
    pub sp_curvature_max: T,
}

/// Best-response dynamics from no sponsorship and the matching price.
pub fn solve_competitive<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    settings: &SolverSettings<T>,
) -> Result<CompetitiveResult<T>> {
    let theta0 = DVector::zeros(inst.n());
    let p0 = sp_best_response(inst, mats, &theta0)?;
    solve_competitive_from(
        inst,
        mats,
        &Strategy {
            p: p0,
            theta: theta0,
        },
        settings,
    )
}

/// Best-response dynamics from an arbitrary starting strategy. Each sweep
/// updates sponsorship first, then price.
pub fn solve_competitive_from<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    init: &Strategy<T>,
    settings: &SolverSettings<T>,
) -> Result<CompetitiveResult<T>> {
    init.check_len(inst.n())?;
    if !(settings.tol > T::zero()) {
        return Err(MarketError::InvalidConfig("tol must be positive".into()));
    }
    let inner = AscentSettings::new(settings.tol * T::lit(1e-3), 100_000);
    let mut p = init.p();
    let mut theta = init.theta().clone();
    let mut history = Vec::new();
    let mut cp_max = -T::lit(f64::INFINITY);
    let mut sp_max = sp_curvature(mats, &theta);

    for sweep in 1..=settings.max_iter {
        let response = cp_box_response(inst, mats, p, &inner)?;
        cp_max = cp_max.max(cp_hessian_max_eigenvalue(inst, mats, p));
        let next_p = sp_best_response(inst, mats, &response.theta)?;
        sp_max = sp_max.max(sp_curvature(mats, &response.theta));

        let dp = (next_p - p).abs() / next_p.abs().max(T::one());
        let dtheta = (&response.theta - &theta).amax();
        let residual = dp.max(dtheta);
        history.push(residual.as_f64());
        p = next_p;
        theta = response.theta;

        if residual < settings.tol {
            let strategy = Strategy { p, theta };
            let demand = demand::demand_equilibrium(inst, mats, &strategy)?;
            let payoffs = payoffs(inst, &strategy, &demand.x)?;
            let uniqueness_certified = validate::check_assumption3(inst, mats, &strategy)
                .map(|r| r.holds)
                .unwrap_or(false);
            return Ok(CompetitiveResult {
                strategy,
                demand,
                payoffs,
                iterations: sweep,
                residual,
                projected: response.projected,
                uniqueness_certified,
                cp_hessian_max_eigenvalue: cp_max,
                sp_curvature_max: sp_max,
            });
        }
    }
    Err(MarketError::NoConvergence {
        iterations: settings.max_iter,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}
