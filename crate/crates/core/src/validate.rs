//! Executable forms of the modelling assumptions and of the definiteness
//! arguments behind uniqueness of the competitive equilibrium and concavity
//! of the coalition problem, plus finite-difference oracles.
//!
//! The definiteness checks assemble every matrix explicitly: the Jacobian sum
//! of the two-player game and its split into `-A - B - C`, the coalition
//! Hessian and its split into `-D - E - F`, and for each block `Q` the
//! congruence `P^T Q P` with `P = [[I, v], [0, 1]]` that clears the
//! off-diagonal border. The reduced (block-diagonal) form is also built
//! directly from its closed-form Schur complement, so that Sylvester's law of
//! inertia can be checked between two independently assembled matrices.

use nalgebra::{DMatrix, DVector};

use crate::demand::{self, Strategy};
use crate::error::{MarketError, Result};
use crate::linalg::{self, Inertia, SymEigen};
use crate::model::{EquilibriumMatrices, MarketInstance};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Assumption1Report<T: Scalar> {
    pub holds: bool,
    /// `sum_{j != i} (g_ij - 2c) / (2 b_i + 2 c)` per user; must stay below 1.
    pub row_sums: DVector<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assumption2Report<T: Scalar> {
    pub holds: bool,
    pub min_demand: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assumption3Report<T: Scalar> {
    pub holds: bool,
    /// `max{gamma s, a_i / 3, [(sqrt(2 gamma t K) + I)^-1 sqrt(gamma t K / 2) a]_i}`.
    pub thresholds: DVector<T>,
    /// `p (1 - theta_i)` minus the threshold; must be strictly positive.
    pub margins: DVector<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport<T: Scalar> {
    pub a1: Assumption1Report<T>,
    pub a2: Assumption2Report<T>,
    pub a3: Assumption3Report<T>,
    pub strategy: Strategy<T>,
}

/// Boundedness: no user gains from unbounded demand.
pub fn check_assumption1<T: Scalar>(inst: &MarketInstance<T>) -> Assumption1Report<T> {
    let n = inst.n();
    let two_c = inst.c() + inst.c();
    let row_sums = DVector::from_fn(n, |i, _| {
        let denom = (inst.b()[i] + inst.c()) * T::lit(2.0);
        let mut sum = T::zero();
        for j in (0..n).filter(|&j| j != i) {
            sum += inst.g()[(i, j)] - two_c;
        }
        sum / denom
    });
    let holds = row_sums.iter().all(|&r| r < T::one());
    Assumption1Report { holds, row_sums }
}

/// Every user demands a positive amount at `strat`.
pub fn check_assumption2<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    strat: &Strategy<T>,
) -> Result<Assumption2Report<T>> {
    let x = demand::linear_demand(inst, mats, strat)?;
    let min_demand = x.min();
    Ok(Assumption2Report {
        holds: min_demand > T::zero(),
        min_demand,
    })
}

/// `(sqrt(2 gamma t K) + I)^-1 sqrt(gamma t K / 2) a`, with both square roots
/// taken in the eigenbasis of `K`.
pub fn assumption3_network_term<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
) -> Result<DVector<T>> {
    let eig = mats.k_eigen();
    let min = eig.min_eigenvalue();
    if !(min > T::zero()) {
        return Err(MarketError::NotPositiveDefinite {
            min_eigenvalue: min.as_f64(),
        });
    }
    let gt = inst.gamma() * inst.t();
    let n = inst.n();
    let outer = eig.scaled_sqrt(gt + gt) + DMatrix::identity(n, n);
    let inner = eig.scaled_sqrt(gt * T::lit(0.5));
    linalg::spd_solve(&outer, &(inner * inst.a()))
}

/// Payments exceed the threshold under which the uniqueness and concavity
/// arguments are stated. Strict inequality, zero slack.
pub fn check_assumption3<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    strat: &Strategy<T>,
) -> Result<Assumption3Report<T>> {
    strat.check_len(inst.n())?;
    let network = assumption3_network_term(inst, mats)?;
    let gs = inst.gamma() * inst.s();
    let third = T::lit(3.0);
    let thresholds = DVector::from_fn(inst.n(), |i, _| gs.max(inst.a()[i] / third).max(network[i]));
    let margins = strat.effective_prices() - &thresholds;
    Ok(Assumption3Report {
        holds: margins.iter().all(|&m| m > T::zero()),
        thresholds,
        margins,
    })
}

pub fn assess<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    strat: &Strategy<T>,
) -> Result<AssumptionReport<T>> {
    Ok(AssumptionReport {
        a1: check_assumption1(inst),
        a2: check_assumption2(inst, mats, strat)?,
        a3: check_assumption3(inst, mats, strat)?,
        strategy: strat.clone(),
    })
}

/// `[[top_left, border], [border^T, corner]]`.
pub fn bordered<T: Scalar>(top_left: &DMatrix<T>, border: &DVector<T>, corner: T) -> DMatrix<T> {
    let n = top_left.nrows();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(top_left);
    for i in 0..n {
        m[(i, n)] = border[i];
        m[(n, i)] = border[i];
    }
    m[(n, n)] = corner;
    m
}

/// `[[I, v], [0, 1]]`.
pub fn congruence_transform<T: Scalar>(v: &DVector<T>) -> DMatrix<T> {
    let n = v.len();
    let mut m = DMatrix::identity(n + 1, n + 1);
    for i in 0..n {
        m[(i, n)] = v[i];
    }
    m
}

/// Quantities shared by all blocks at one strategy.
struct Terms<T: Scalar> {
    p: T,
    gt: T,
    gs: T,
    k: DMatrix<T>,
    k2: DMatrix<T>,
    /// `(K^-1)`, exact from the instance.
    k_inv: DMatrix<T>,
    k1: DVector<T>,
    ones: DVector<T>,
    unsponsored: DVector<T>,
    /// `a - 2 p (1 - theta)`
    w: DVector<T>,
    /// `a - 4 p (1 - theta)`
    v: DVector<T>,
}

impl<T: Scalar> Terms<T> {
    fn new(
        inst: &MarketInstance<T>,
        mats: &EquilibriumMatrices<T>,
        strat: &Strategy<T>,
    ) -> Result<Self> {
        strat.check_len(inst.n())?;
        let p = strat.p();
        if !(p > T::zero()) {
            return Err(MarketError::DegeneratePrice(p.as_f64()));
        }
        let n = inst.n();
        let k = mats.k().clone();
        let ones = DVector::from_element(n, T::one());
        let q = strat.effective_prices();
        let two = T::lit(2.0);
        let four = T::lit(4.0);
        Ok(Self {
            p,
            gt: inst.gamma() * inst.t(),
            gs: inst.gamma() * inst.s(),
            k2: &k * &k,
            k_inv: mats.system().clone(),
            k1: &k * &ones,
            ones,
            unsponsored: strat.theta().map(|th| T::one() - th),
            w: inst.a() - &q * two,
            v: inst.a() - &q * four,
            k,
        })
    }

    fn quad(&self, m: &DMatrix<T>, x: &DVector<T>, y: &DVector<T>) -> T {
        x.dot(&(m * y))
    }

    /// `gamma s K 1 - 2 gamma t K^2 w - K v`, the shared off-diagonal border.
    fn cross_border(&self) -> DVector<T> {
        &self.k1 * self.gs - &self.k2 * &self.w * (self.gt + self.gt) - &self.k * &self.v
    }
}

/// One block of a decomposition together with its congruent reduction.
#[derive(Debug, Clone)]
pub struct BlockCheck<T: Scalar> {
    pub matrix: DMatrix<T>,
    /// `P^T Q P` computed by multiplication.
    pub transformed: DMatrix<T>,
    /// Block-diagonal reduction assembled from its closed form.
    pub reduced: DMatrix<T>,
    /// Closed-form Schur complement (corner of `reduced`).
    pub schur_complement: T,
    pub min_eigenvalue: T,
    pub inertia: Inertia,
    pub reduced_inertia: Inertia,
    /// `max |P^T Q P - reduced| / max |reduced|`.
    pub congruence_residual: T,
}

impl<T: Scalar> BlockCheck<T> {
    fn new(matrix: DMatrix<T>, shift: DVector<T>, reduced: DMatrix<T>) -> Self {
        let n = shift.len();
        let p = congruence_transform(&shift);
        let transformed = p.transpose() * &matrix * &p;
        let congruence_residual = (&transformed - &reduced).amax() / reduced.amax();
        let tol = linalg::inertia_tolerance::<T>();
        let eig = SymEigen::new(&matrix);
        // The reduction is block diagonal; each block is resolved on its own
        // scale, since the two can differ by many orders of magnitude.
        let top_eig = SymEigen::new(&reduced.view((0, 0), (n, n)).into_owned());
        let corner = DVector::from_element(1, reduced[(n, n)]);
        let corner_inertia = if reduced[(n, n)] == T::zero() {
            Inertia {
                positive: 0,
                negative: 0,
                zero: 1,
            }
        } else {
            Inertia::from_eigenvalues(&corner, tol)
        };
        Self {
            schur_complement: reduced[(n, n)],
            min_eigenvalue: eig.min_eigenvalue(),
            inertia: Inertia::from_eigenvalues(&eig.eigenvalues, tol),
            reduced_inertia: Inertia::from_eigenvalues(&top_eig.eigenvalues, tol)
                .combine(corner_inertia),
            matrix,
            transformed,
            reduced,
            congruence_residual,
        }
    }

    pub fn positive_definite(&self) -> bool {
        self.inertia.is_positive_definite()
    }

    /// Same counts of positive, negative and zero eigenvalues as the reduction.
    pub fn sylvester_agrees(&self) -> bool {
        self.inertia == self.reduced_inertia
    }
}

fn block_diag<T: Scalar>(top_left: &DMatrix<T>, corner: T) -> DMatrix<T> {
    bordered(top_left, &DVector::zeros(top_left.nrows()), corner)
}

#[derive(Debug, Clone)]
pub struct CompetitiveDefiniteness<T: Scalar> {
    pub a: BlockCheck<T>,
    pub b: BlockCheck<T>,
    pub c: BlockCheck<T>,
    /// Symmetrized game Jacobian `grad F + grad F^T`.
    pub jacobian_sum: DMatrix<T>,
    pub jacobian_inertia: Inertia,
    pub jacobian_max_eigenvalue: T,
    /// `max |grad F + grad F^T + A + B + C|`.
    pub decomposition_residual: T,
}

impl<T: Scalar> CompetitiveDefiniteness<T> {
    pub fn blocks_positive_definite(&self) -> bool {
        self.a.positive_definite() && self.b.positive_definite() && self.c.positive_definite()
    }

    pub fn jacobian_negative_definite(&self) -> bool {
        self.jacobian_inertia.is_negative_definite()
    }

    pub fn sylvester_agrees(&self) -> bool {
        self.a.sylvester_agrees() && self.b.sylvester_agrees() && self.c.sylvester_agrees()
    }
}

/// `grad F + grad F^T` of the content provider / service provider game.
pub fn competitive_jacobian_sum<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    strat: &Strategy<T>,
) -> Result<DMatrix<T>> {
    let tm = Terms::new(inst, mats, strat)?;
    Ok(jacobian_sum_from(&tm))
}

fn jacobian_sum_from<T: Scalar>(tm: &Terms<T>) -> DMatrix<T> {
    let p2 = tm.p * tm.p;
    let four = T::lit(4.0);
    let top = &tm.k2 * (-four * tm.gt * p2) - &tm.k * (four * p2);
    let corner = -four * tm.k1.dot(&tm.unsponsored);
    bordered(&top, &tm.cross_border(), corner)
}

pub fn check_definiteness_competitive<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    strat: &Strategy<T>,
) -> Result<CompetitiveDefiniteness<T>> {
    let tm = Terms::new(inst, mats, strat)?;
    let p2 = tm.p * tm.p;
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let four = T::lit(4.0);
    let one_k_u = tm.k1.dot(&tm.unsponsored);
    let k_inv2 = &tm.k_inv * &tm.k_inv;

    // A
    let a_top = &tm.k2 * (four * tm.gt * p2);
    let a_border = &tm.k2 * &tm.w * (two * tm.gt);
    let a = bordered(&a_top, &a_border, two * one_k_u);
    let p1 = -(&k_inv2 * &a_border) / (four * tm.gt * p2);
    let a_schur = two * one_k_u - tm.gt * tm.quad(&tm.k2, &tm.w, &tm.w) / p2;
    let a_check = BlockCheck::new(a, p1, block_diag(&a_top, a_schur));

    // B
    let b_top = &tm.k * (three * p2);
    let b_border = -(&tm.k1 * tm.gs);
    let b = bordered(&b_top, &b_border, one_k_u);
    let p2v = &tm.k_inv * &tm.k1 * tm.gs / (three * p2);
    let b_schur = one_k_u - tm.gs * tm.gs * tm.ones.dot(&tm.k1) / (three * p2);
    let b_check = BlockCheck::new(b, p2v, block_diag(&b_top, b_schur));

    // C
    let c_top = &tm.k * p2;
    let c_border = &tm.k * &tm.v;
    let c = bordered(&c_top, &c_border, one_k_u);
    let p3 = -(&tm.k_inv * &c_border) / p2;
    let c_schur = one_k_u - tm.quad(&tm.k, &tm.v, &tm.v) / p2;
    let c_check = BlockCheck::new(c, p3, block_diag(&c_top, c_schur));

    let jacobian_sum = jacobian_sum_from(&tm);
    let decomposition_residual =
        (&jacobian_sum + &a_check.matrix + &b_check.matrix + &c_check.matrix).amax();
    let eig = SymEigen::new(&jacobian_sum);
    Ok(CompetitiveDefiniteness {
        a: a_check,
        b: b_check,
        c: c_check,
        jacobian_inertia: Inertia::from_eigenvalues(&eig.eigenvalues, linalg::inertia_tolerance()),
        jacobian_max_eigenvalue: eig.max_eigenvalue(),
        jacobian_sum,
        decomposition_residual,
    })
}

#[derive(Debug, Clone)]
pub struct CooperativeDefiniteness<T: Scalar> {
    pub d: BlockCheck<T>,
    pub e: BlockCheck<T>,
    pub f: BlockCheck<T>,
    /// Hessian of the aggregate payoff in `(theta, p)`.
    pub hessian: DMatrix<T>,
    pub hessian_inertia: Inertia,
    pub hessian_max_eigenvalue: T,
    /// `max |H + D + E + F|`.
    pub decomposition_residual: T,
}

impl<T: Scalar> CooperativeDefiniteness<T> {
    pub fn blocks_positive_definite(&self) -> bool {
        self.d.positive_definite() && self.e.positive_definite() && self.f.positive_definite()
    }

    pub fn hessian_negative_definite(&self) -> bool {
        self.hessian_inertia.is_negative_definite()
    }

    pub fn sylvester_agrees(&self) -> bool {
        self.d.sylvester_agrees() && self.e.sylvester_agrees() && self.f.sylvester_agrees()
    }
}

/// Hessian of the aggregate payoff `R(theta, p)`:
/// `[[-2 t gamma p^2 K^2 - 2 p^2 K, border], [border^T, -2 t gamma u^T K^2 u - 2 u^T K u]]`
/// with `u = 1 - theta` and the same border as the game Jacobian.
pub fn cooperative_hessian<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    strat: &Strategy<T>,
) -> Result<DMatrix<T>> {
    let tm = Terms::new(inst, mats, strat)?;
    Ok(hessian_from(&tm))
}

fn hessian_from<T: Scalar>(tm: &Terms<T>) -> DMatrix<T> {
    let p2 = tm.p * tm.p;
    let two = T::lit(2.0);
    let top = &tm.k2 * (-two * tm.gt * p2) - &tm.k * (two * p2);
    let corner = -two * tm.gt * tm.quad(&tm.k2, &tm.unsponsored, &tm.unsponsored)
        - two * tm.quad(&tm.k, &tm.unsponsored, &tm.unsponsored);
    bordered(&top, &tm.cross_border(), corner)
}

pub fn check_definiteness_cooperative<T: Scalar>(
    inst: &MarketInstance<T>,
    mats: &EquilibriumMatrices<T>,
    strat: &Strategy<T>,
) -> Result<CooperativeDefiniteness<T>> {
    let tm = Terms::new(inst, mats, strat)?;
    let p2 = tm.p * tm.p;
    let two = T::lit(2.0);
    let u = &tm.unsponsored;
    let uk2u = tm.quad(&tm.k2, u, u);
    let uku = tm.quad(&tm.k, u, u);
    let k_inv2 = &tm.k_inv * &tm.k_inv;

    // D
    let d_top = &tm.k2 * (two * tm.gt * p2);
    let d_border = &tm.k2 * &tm.w * (two * tm.gt);
    let d = bordered(&d_top, &d_border, two * tm.gt * uk2u);
    let p4 = -(&k_inv2 * &d_border) / (two * tm.gt * p2);
    let d_schur = two * tm.gt * uk2u - two * tm.gt * tm.quad(&tm.k2, &tm.w, &tm.w) / p2;
    let d_check = BlockCheck::new(d, p4, block_diag(&d_top, d_schur));

    // E
    let e_top = &tm.k * p2;
    let e_border = &tm.k * &tm.v;
    let e = bordered(&e_top, &e_border, uku);
    let p5 = -(&tm.k_inv * &e_border) / p2;
    let e_schur = uku - tm.quad(&tm.k, &tm.v, &tm.v) / p2;
    let e_check = BlockCheck::new(e, p5, block_diag(&e_top, e_schur));

    // F
    let f_top = &tm.k * p2;
    let f_border = -(&tm.k1 * tm.gs);
    let f = bordered(&f_top, &f_border, uku);
    let p6 = &tm.k_inv * &tm.k1 * tm.gs / p2;
    let f_schur = uku - tm.gs * tm.gs * tm.ones.dot(&tm.k1) / p2;
    let f_check = BlockCheck::new(f, p6, block_diag(&f_top, f_schur));

    let hessian = hessian_from(&tm);
    let decomposition_residual =
        (&hessian + &d_check.matrix + &e_check.matrix + &f_check.matrix).amax();
    let eig = SymEigen::new(&hessian);
    Ok(CooperativeDefiniteness {
        d: d_check,
        e: e_check,
        f: f_check,
        hessian_inertia: Inertia::from_eigenvalues(&eig.eigenvalues, linalg::inertia_tolerance()),
        hessian_max_eigenvalue: eig.max_eigenvalue(),
        hessian,
        decomposition_residual,
    })
}

/// Central differences, one coordinate at a time.
pub fn finite_difference_gradient<T, F>(f: F, point: &DVector<T>, step: T) -> DVector<T>
where
    T: Scalar,
    F: Fn(&DVector<T>) -> T,
{
    let mut probe = point.clone();
    DVector::from_fn(point.len(), |i, _| {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe);
        probe[i] = orig - step;
        let down = f(&probe);
        probe[i] = orig;
        (up - down) / (step + step)
    })
}

/// Central second differences.
pub fn finite_difference_hessian<T, F>(f: F, point: &DVector<T>, step: T) -> DMatrix<T>
where
    T: Scalar,
    F: Fn(&DVector<T>) -> T,
{
    let n = point.len();
    let mut probe = point.clone();
    let mut eval = |i: usize, si: T, j: usize, sj: T| {
        let (oi, oj) = (probe[i], probe[j]);
        probe[i] += si;
        probe[j] += sj;
        let v = f(&probe);
        probe[i] = oi;
        probe[j] = oj;
        v
    };
    let denom = T::lit(4.0) * step * step;
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = (eval(i, step, j, step) - eval(i, step, j, -step) - eval(i, -step, j, step)
                + eval(i, -step, j, -step))
                / denom;
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::competitive::{self, SolverSettings};
    use crate::cooperative;
    use crate::model::build_matrices;
    use crate::test_support::{random_instance, single_user, two_user};

    fn strat(p: f64, theta: &[f64]) -> Strategy<f64> {
        Strategy::new(p, DVector::from_row_slice(theta)).unwrap()
    }

    #[test]
    fn assumption1_examples() {
        let r = check_assumption1(&two_user(4.0));
        assert!(r.holds);
        assert!((r.row_sums[0] + 2.0 / 66.0).abs() < 1e-15);
        let r = check_assumption1(&single_user());
        assert!(r.holds && r.row_sums[0] == 0.0);
        // g12 = 2c + 2 (2b + 2c) puts the row sum at exactly 2.
        let r = check_assumption1(&two_user(6.0 + 2.0 * 66.0));
        assert!(!r.holds);
        assert!((r.row_sums[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn assumption1_on_default_instances() {
        for seed in 0..100 {
            let inst = crate::model::generate_instance::<f64>(&crate::model::GenerationConfig {
                seed,
                ..Default::default()
            })
            .unwrap();
            assert!(check_assumption1(&inst).holds, "seed {seed}");
        }
    }

    #[test]
    fn assumption2_examples() {
        let inst = single_user();
        let m = build_matrices(&inst).unwrap();
        let r = check_assumption2(&inst, &m, &strat(10.0, &[0.0])).unwrap();
        assert!(r.holds);
        assert!((r.min_demand - 20.0 / 66.0).abs() < 1e-15);
        let r = check_assumption2(&inst, &m, &strat(30.0, &[0.0])).unwrap();
        assert!(!r.holds);
        assert_eq!(r.min_demand, 0.0);
        for seed in 0..10 {
            let inst = random_instance(30, seed);
            let m = build_matrices(&inst).unwrap();
            assert!(
                check_assumption2(&inst, &m, &Strategy::unsponsored(0.0, 30).unwrap())
                    .unwrap()
                    .holds
            );
        }
    }

    #[test]
    fn assumption3_examples() {
        let inst = single_user();
        let m = build_matrices(&inst).unwrap();
        let net = assumption3_network_term(&inst, &m).unwrap();
        let expected = (10.0f64 / 132.0).sqrt() * 30.0 / ((20.0f64 / 66.0).sqrt() + 1.0);
        assert!((net[0] - expected).abs() < 1e-12);
        assert!((net[0] - 5.3259).abs() < 1e-3);
        let r = check_assumption3(&inst, &m, &strat(12.0, &[0.0])).unwrap();
        assert!(r.holds);
        assert!((r.thresholds[0] - 10.0).abs() < 1e-12);
        assert!((r.margins[0] - 2.0).abs() < 1e-12);
        let r = check_assumption3(&inst, &m, &strat(20.0, &[0.5])).unwrap();
        assert!(!r.holds);
    }

    #[test]
    fn network_term_square_roots() {
        let inst = random_instance(12, 3);
        let m = build_matrices(&inst).unwrap();
        let gt = inst.gamma() * inst.t();
        let r = m.k_eigen().scaled_sqrt(2.0 * gt);
        assert!((&r * &r - m.k() * (2.0 * gt)).amax() < 1e-9);
    }

    #[test]
    fn decompositions_reassemble() {
        let inst = random_instance(7, 2);
        let m = build_matrices(&inst).unwrap();
        let s = strat(17.0, &[0.1, 0.3, 0.0, 0.5, 0.9, 0.2, 0.4]);
        let comp = check_definiteness_competitive(&inst, &m, &s).unwrap();
        assert!(comp.decomposition_residual < 1e-12);
        for b in [&comp.a, &comp.b, &comp.c] {
            assert!(b.congruence_residual < 1e-9, "{}", b.congruence_residual);
            assert!(b.sylvester_agrees());
        }
        let coop = check_definiteness_cooperative(&inst, &m, &s).unwrap();
        assert!(coop.decomposition_residual < 1e-12);
        for b in [&coop.d, &coop.e, &coop.f] {
            assert!(b.congruence_residual < 1e-9, "{}", b.congruence_residual);
            assert!(b.sylvester_agrees());
        }
    }

    #[test]
    fn jacobian_sum_matches_finite_differences() {
        let inst = random_instance(5, 6);
        let m = build_matrices(&inst).unwrap();
        let s = strat(16.0, &[0.2, 0.1, 0.6, 0.3, 0.0]);
        let n = 5;
        // Stack (dP/dtheta, dPi/dp) as the game map F(theta, p).
        let game_map = |z: &DVector<f64>| {
            let st = Strategy {
                p: z[n],
                theta: z.rows(0, n).into_owned(),
            };
            let mut out = DVector::zeros(n + 1);
            out.rows_mut(0, n)
                .copy_from(&competitive::cp_profit_gradient(&inst, &m, &st).unwrap());
            out[n] = competitive::sp_revenue_derivative(&inst, &m, &st).unwrap();
            out
        };
        let mut z = DVector::zeros(n + 1);
        z.rows_mut(0, n).copy_from(s.theta());
        z[n] = s.p();
        let h = 1e-5;
        let mut jac = DMatrix::zeros(n + 1, n + 1);
        for j in 0..=n {
            let mut up = z.clone();
            up[j] += h;
            let mut down = z.clone();
            down[j] -= h;
            jac.set_column(j, &((game_map(&up) - game_map(&down)) / (2.0 * h)));
        }
        let fd = &jac + jac.transpose();
        let an = competitive_jacobian_sum(&inst, &m, &s).unwrap();
        assert!((&fd - &an).amax() / an.amax() < 1e-6);
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let inst = random_instance(4, 1);
        let m = build_matrices(&inst).unwrap();
        let s = strat(14.0, &[0.2, 0.5, 0.1, 0.3]);
        let n = 4;
        let f = |z: &DVector<f64>| {
            let st = Strategy {
                p: z[n],
                theta: z.rows(0, n).into_owned(),
            };
            cooperative::aggregate_payoff(&inst, &m, &st).unwrap()
        };
        let mut z = DVector::zeros(n + 1);
        z.rows_mut(0, n).copy_from(s.theta());
        z[n] = s.p();
        let fd = finite_difference_hessian(f, &z, 1e-3);
        let an = cooperative_hessian(&inst, &m, &s).unwrap();
        for i in 0..=n {
            for j in 0..=n {
                let scale = an[(i, j)].abs().max(1e-3);
                assert!(
                    (fd[(i, j)] - an[(i, j)]).abs() / scale < 1e-4,
                    "({i},{j}) {} vs {}",
                    fd[(i, j)],
                    an[(i, j)]
                );
            }
        }
    }

    #[test]
    fn vanishing_border_makes_d_block_diagonal() {
        // theta = 1 - a / (2p) zeroes a - 2 p (1 - theta).
        let inst = random_instance(5, 4);
        let m = build_matrices(&inst).unwrap();
        let p = 40.0;
        let theta = inst.a().map(|a| 1.0 - a / (2.0 * p));
        let s = Strategy::new(p, theta).unwrap();
        let coop = check_definiteness_cooperative(&inst, &m, &s).unwrap();
        let d = &coop.d.matrix;
        for i in 0..5 {
            assert!(d[(i, 5)].abs() < 1e-14);
        }
        assert!(coop.d.positive_definite());
    }

    #[test]
    fn tiny_payments_break_a_block() {
        let inst = random_instance(6, 0);
        let m = build_matrices(&inst).unwrap();
        let s = Strategy::unsponsored(0.01, 6).unwrap();
        let comp = check_definiteness_competitive(&inst, &m, &s).unwrap();
        assert!(!comp.blocks_positive_definite());
        assert!(comp.sylvester_agrees());
    }

    #[test]
    fn single_user_block_c_is_indefinite_when_payments_exceed_a_third() {
        // With theta = 0 the C-block Schur complement is k (1 - (a - 4p)^2 / p^2),
        // positive only for a / 5 < p < a / 3. The payment threshold asks for
        // p > a / 3, so at the single-user equilibrium (p = 15) it is negative
        // while the Jacobian sum itself stays negative definite.
        let inst = single_user();
        let m = build_matrices(&inst).unwrap();
        let s = strat(15.0, &[0.0]);
        assert!(check_assumption3(&inst, &m, &s).unwrap().holds);
        let comp = check_definiteness_competitive(&inst, &m, &s).unwrap();
        let expected = (1.0 / 66.0) * (1.0 - 900.0 / 225.0);
        assert!((comp.c.schur_complement - expected).abs() < 1e-14);
        assert!(!comp.c.positive_definite());
        assert!(comp.jacobian_negative_definite());
    }

    #[test]
    fn coalition_hessian_is_singular_at_the_optimum() {
        // R depends on (theta, p) only through p (1 - theta): at a stationary
        // point the Hessian is J^T H_q J with J of rank n.
        let inst = random_instance(5, 7);
        let m = build_matrices(&inst).unwrap();
        let opt = cooperative::solve_cooperative_closed_form(&inst, &m).unwrap();
        let coop = check_definiteness_cooperative(&inst, &m, &opt.strategy).unwrap();
        assert_eq!(coop.hessian_inertia.zero, 1);
        assert_eq!(coop.hessian_inertia.negative, 5);
    }

    #[test]
    fn competitive_equilibrium_jacobian_negative_definite() {
        for seed in 0..5 {
            let inst = random_instance(10, seed);
            let m = build_matrices(&inst).unwrap();
            let r = competitive::solve_competitive(&inst, &m, &SolverSettings::default()).unwrap();
            let comp = check_definiteness_competitive(&inst, &m, &r.strategy).unwrap();
            assert!(comp.jacobian_negative_definite());
            assert!(comp.sylvester_agrees());
        }
    }

    #[test]
    fn quadratic_gradient() {
        let v = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let g = finite_difference_gradient(|x: &DVector<f64>| x.dot(x), &v, 1e-4);
        assert!((g - &v * 2.0).amax() < 1e-8);
    }
}
