//! Market instances, seeded random generation and the derived demand-system
//! matrices `G`, `Lambda` and `K = (2 Lambda - G)^-1`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{MarketError, Result};
use crate::linalg::{self, SymEigen};
use crate::scalar::Scalar;

/// Exogenous parameters of one market: user types, the social graph,
/// congestion, and the content provider's valuation of demand.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketInstance<T: Scalar> {
    a: DVector<T>,
    b: DVector<T>,
    g: DMatrix<T>,
    c: T,
    gamma: T,
    s: T,
    t: T,
}

impl<T: Scalar> MarketInstance<T> {
    /// Validates and builds an instance. `g` must be symmetric with a zero
    /// diagonal; `a`, `b`, `gamma`, `s`, `t` strictly positive; `c >= 0`.
    pub fn new(
        a: DVector<T>,
        b: DVector<T>,
        g: DMatrix<T>,
        c: T,
        gamma: T,
        s: T,
        t: T,
    ) -> Result<Self> {
        let n = a.len();
        if n == 0 {
            return Err(MarketError::InvalidInstance("no users".into()));
        }
        if b.len() != n {
            return Err(MarketError::DimensionMismatch {
                expected: n,
                actual: b.len(),
            });
        }
        if g.nrows() != n || g.ncols() != n {
            return Err(MarketError::DimensionMismatch {
                expected: n,
                actual: g.nrows().max(g.ncols()),
            });
        }
        if a.iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
            return Err(MarketError::InvalidInstance("a must be positive".into()));
        }
        if b.iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
            return Err(MarketError::InvalidInstance("b must be positive".into()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(MarketError::InvalidInstance("g must be finite".into()));
        }
        let tol = T::default_epsilon() * (T::one() + g.amax());
        for i in 0..n {
            if g[(i, i)] != T::zero() {
                return Err(MarketError::InvalidInstance(format!(
                    "g[{i}][{i}] must be zero"
                )));
            }
            for j in 0..i {
                if (g[(i, j)] - g[(j, i)]).abs() > tol {
                    return Err(MarketError::InvalidInstance(format!(
                        "g is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if !(c >= T::zero()) || !c.is_finite() {
            return Err(MarketError::InvalidInstance("c must be >= 0".into()));
        }
        for (name, v) in [("gamma", gamma), ("s", s), ("t", t)] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(MarketError::InvalidInstance(format!(
                    "{name} must be positive"
                )));
            }
        }
        Ok(Self {
            a,
            b,
            g,
            c,
            gamma,
            s,
            t,
        })
    }

    /// All users share `a` and `b`; every pair of distinct users has tie `g`.
    #[allow(clippy::too_many_arguments)]
    pub fn homogeneous(n: usize, a: T, b: T, g: T, c: T, gamma: T, s: T, t: T) -> Result<Self> {
        let ties = DMatrix::from_fn(n, n, |i, j| if i == j { T::zero() } else { g });
        Self::new(
            DVector::from_element(n, a),
            DVector::from_element(n, b),
            ties,
            c,
            gamma,
            s,
            t,
        )
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }
    pub fn a(&self) -> &DVector<T> {
        &self.a
    }
    pub fn b(&self) -> &DVector<T> {
        &self.b
    }
    pub fn g(&self) -> &DMatrix<T> {
        &self.g
    }
    pub fn c(&self) -> T {
        self.c
    }
    pub fn gamma(&self) -> T {
        self.gamma
    }
    pub fn s(&self) -> T {
        self.s
    }
    pub fn t(&self) -> T {
        self.t
    }

    /// Copy of this instance with a different content-provider triple.
    pub fn with_cp_params(&self, gamma: T, s: T, t: T) -> Result<Self> {
        Self::new(
            self.a.clone(),
            self.b.clone(),
            self.g.clone(),
            self.c,
            gamma,
            s,
            t,
        )
    }
}

/// Demand-system matrices shared by every solver for one instance.
#[derive(Debug, Clone)]
pub struct EquilibriumMatrices<T: Scalar> {
    g_tilde: DMatrix<T>,
    lambda: DVector<T>,
    system: DMatrix<T>,
    k: DMatrix<T>,
    k_eigen: SymEigen<T>,
}

impl<T: Scalar> EquilibriumMatrices<T> {
    /// `G`: off-diagonal `g_ij - 2c`, zero diagonal.
    pub fn g_tilde(&self) -> &DMatrix<T> {
        &self.g_tilde
    }
    /// Diagonal of `Lambda`, entries `b_i + c`.
    pub fn lambda(&self) -> &DVector<T> {
        &self.lambda
    }
    /// `2 Lambda - G`, the inverse of `K`.
    pub fn system(&self) -> &DMatrix<T> {
        &self.system
    }
    pub fn k(&self) -> &DMatrix<T> {
        &self.k
    }
    /// Spectral decomposition of `K`; every matrix function of `K` uses this basis.
    pub fn k_eigen(&self) -> &SymEigen<T> {
        &self.k_eigen
    }
    pub fn n(&self) -> usize {
        self.lambda.len()
    }
}

pub fn build_matrices<T: Scalar>(inst: &MarketInstance<T>) -> Result<EquilibriumMatrices<T>> {
    let n = inst.n();
    let two_c = inst.c + inst.c;
    let g_tilde = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            T::zero()
        } else {
            inst.g[(i, j)] - two_c
        }
    });
    let lambda = inst.b.map(|b| b + inst.c);
    let mut system = -&g_tilde;
    for i in 0..n {
        system[(i, i)] = lambda[i] + lambda[i];
    }
    let k_raw = linalg::spd_inverse(&system)?;
    let k = (&k_raw + k_raw.transpose()) * T::lit(0.5);
    let k_eigen = SymEigen::new(&k);
    let min = k_eigen.min_eigenvalue();
    if !(min > T::zero()) {
        return Err(MarketError::NotPositiveDefinite {
            min_eigenvalue: min.as_f64(),
        });
    }
    Ok(EquilibriumMatrices {
        g_tilde,
        lambda,
        system,
        k,
        k_eigen,
    })
}

/// Random-instance recipe: `a_i ~ N(mu_a, 1)`, `b_i ~ N(mu_b, 1)`,
/// `g_ij = g_ji ~ N(mu_g, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    pub n: usize,
    pub mu_a: f64,
    pub mu_b: f64,
    pub mu_g: f64,
    pub c: f64,
    pub gamma: f64,
    pub s: f64,
    pub t: f64,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            n: 100,
            mu_a: 30.0,
            mu_b: 30.0,
            mu_g: 4.0,
            c: 3.0,
            gamma: 2.0,
            s: 5.0,
            t: 5.0,
            seed: 1,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(MarketError::InvalidConfig("n must be at least 1".into()));
        }
        for (name, v) in [
            ("mu_a", self.mu_a),
            ("mu_b", self.mu_b),
            ("mu_g", self.mu_g),
        ] {
            if !v.is_finite() {
                return Err(MarketError::InvalidConfig(format!("{name} must be finite")));
            }
        }
        if !(self.c >= 0.0) || !self.c.is_finite() {
            return Err(MarketError::InvalidConfig("c must be >= 0".into()));
        }
        for (name, v) in [("gamma", self.gamma), ("s", self.s), ("t", self.t)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(MarketError::InvalidConfig(format!(
                    "{name} must be positive"
                )));
            }
        }
        Ok(())
    }
}

const STREAM_A: u64 = 0;
const STREAM_B: u64 = 1;
const STREAM_G: u64 = 2;
const MAX_RESAMPLES: usize = 10_000;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn positive_normal(rng: &mut ChaCha8Rng, mean: f64, name: &str) -> Result<f64> {
    for _ in 0..MAX_RESAMPLES {
        let z: f64 = rng.sample(StandardNormal);
        let v = mean + z;
        if v > 0.0 {
            return Ok(v);
        }
    }
    Err(MarketError::InvalidConfig(format!(
        "mean of {name} too small to draw positive values"
    )))
}

/// Draws a seeded instance.
///
/// `a`, `b` and `g` come from independent streams, and ties are drawn row by
/// row over the lower triangle, so the instance for `n` users is a prefix of
/// the instance for any larger `n` with the same seed. Changing `mu_g` shifts
/// every tie by the same amount. Non-positive `a_i` or `b_i` draws are
/// redrawn; negative ties are kept.
pub fn generate_instance<T: Scalar>(cfg: &GenerationConfig) -> Result<MarketInstance<T>> {
    cfg.validate()?;
    let n = cfg.n;
    let mut rng_a = stream(cfg.seed, STREAM_A);
    let mut rng_b = stream(cfg.seed, STREAM_B);
    let mut rng_g = stream(cfg.seed, STREAM_G);

    let mut a = DVector::zeros(n);
    for i in 0..n {
        a[i] = T::lit(positive_normal(&mut rng_a, cfg.mu_a, "a")?);
    }
    let mut b = DVector::zeros(n);
    for i in 0..n {
        b[i] = T::lit(positive_normal(&mut rng_b, cfg.mu_b, "b")?);
    }
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let z: f64 = rng_g.sample(StandardNormal);
            let v = T::lit(cfg.mu_g + z);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    MarketInstance::new(
        a,
        b,
        g,
        T::lit(cfg.c),
        T::lit(cfg.gamma),
        T::lit(cfg.s),
        T::lit(cfg.t),
    )
}
