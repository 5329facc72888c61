//! Finite-dimensional stable spectral sandbox.
//!
//! The ambient space is R^n with a diagonal covariance operator
//! `S = diag(lambda_1..lambda_n)` (default `lambda_j = 1/j`, square-summable
//! in spirit). The stable measure has characteristic function
//! `exp(-1/2 ||S xi||^alpha)` with `alpha = 4h in (0,2)`, and its Lévy measure
//! is realized through the radial decomposition `dr/r^{1+alpha}` composed
//! with a spherical measure: the pushforward of the uniform sphere under
//! `u -> S u / ||S u||`, carrying the weight `||S u||^alpha / E|u_1|^alpha`.
//! The normalization `c(alpha) = 1/(2 I(alpha))`, with
//! `I(alpha) = int_0^inf (1-cos u) u^{-1-alpha} du`, makes
//! `2 * levy_integral(xi, all) = ||S xi||^alpha` exact in dimension 1 and
//! exact in expectation in general.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::geometry::{self, GeometryError, Point};
use crate::rng::stream_rng;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("alpha must lie strictly inside (0,2), got {0}")]
    AlphaOutOfRange(f64),
    #[error("weights must be strictly positive and non-increasing")]
    BadWeights,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("test function is identically zero")]
    ZeroFunction,
    #[error("region bounds must satisfy 0 <= a <= b")]
    BadRegion,
    #[error("requested quantile {0} outside the tabulated F range")]
    QuantileOutOfRange(f64),
    #[error("modulus table needs at least 3 usable entries, got {0}")]
    TableTooShort(usize),
    #[error("alpha = {alpha} is inconsistent with 4h = {four_h}")]
    AlphaHurstMismatch { alpha: f64, four_h: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

// ---------------------------------------------------------------------------
// Incomplete cosine integral K(z) = int_0^z (1-cos u) u^{-1-alpha} du
// ---------------------------------------------------------------------------

const GL16: [(f64, f64); 16] = [
    (-0.0950125098376374, 0.1894506104550685),
    (0.0950125098376374, 0.1894506104550685),
    (-0.2816035507792589, 0.1826034150449236),
    (0.2816035507792589, 0.1826034150449236),
    (-0.4580167776572274, 0.1691565193950025),
    (0.4580167776572274, 0.1691565193950025),
    (-0.6178762444026438, 0.1495959888165767),
    (0.6178762444026438, 0.1495959888165767),
    (-0.7554044083550030, 0.1246289712555339),
    (0.7554044083550030, 0.1246289712555339),
    (-0.8656312023878318, 0.0951585116824928),
    (0.8656312023878318, 0.0951585116824928),
    (-0.9445750230732326, 0.0622535239386479),
    (0.9445750230732326, 0.0622535239386479),
    (-0.9894009349916499, 0.0271524594117541),
    (0.9894009349916499, 0.0271524594117541),
];

fn gl16_integrate<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    GL16.iter().map(|&(x, w)| w * f(c + h * x)).sum::<f64>() * h
}

const SERIES_CUT: f64 = 4.0;
const TAIL_CUT: f64 = 40.0;

/// K(0,z) for z <= SERIES_CUT via the alternating series
/// sum_k (-1)^{k+1} z^{2k-alpha} / ((2k)! (2k-alpha)); handles the r^{1-alpha}
/// singularity at 0 analytically.
fn k_series(alpha: f64, z: f64) -> f64 {
    if z == 0.0 {
        return 0.0;
    }
    let z2 = z * z;
    let mut term = z2 / 2.0; // z^{2k}/(2k)! at k=1
    let mut acc = 0.0;
    for k in 1..200 {
        let tk = 2.0 * k as f64;
        let contrib = term / (tk - alpha);
        acc += if k % 2 == 1 { contrib } else { -contrib };
        term *= z2 / ((tk + 1.0) * (tk + 2.0));
        if term < 1e-17 * acc.abs().max(1e-300) {
            break;
        }
    }
    acc * z.powf(-alpha)
}

/// Tail T(z) = int_z^inf (1-cos u) u^{-1-alpha} du for z >= TAIL_CUT, via
/// repeated integration by parts of the oscillatory term; remainder is
/// O(z^{-7-alpha}) at the cut.
fn k_tail_asymptotic(alpha: f64, z: f64) -> f64 {
    let (s, c) = z.sin_cos();
    let a1 = 1.0 + alpha;
    let a2 = 2.0 + alpha;
    let a3 = 3.0 + alpha;
    let a4 = 4.0 + alpha;
    let a5 = 5.0 + alpha;
    // C(z) = int_z^inf cos u * u^{-1-alpha} du expanded to six terms.
    let zi = 1.0 / z;
    let cosint = -s * zi.powf(a1) + a1 * c * zi.powf(a2) + a1 * a2 * s * zi.powf(a3)
        - a1 * a2 * a3 * c * zi.powf(a4)
        - a1 * a2 * a3 * a4 * s * zi.powf(a5)
        + a1 * a2 * a3 * a4 * a5 * c * zi.powf(6.0 + alpha);
    zi.powf(alpha) / alpha - cosint
}

/// I(alpha) = int_0^inf (1-cos u) u^{-1-alpha} du, assembled from the series,
/// smooth mid-range panels and the asymptotic tail.
pub fn i_alpha(alpha: f64) -> f64 {
    k_mid(alpha, TAIL_CUT) + k_tail_asymptotic(alpha, TAIL_CUT)
}

/// K(0,z) for z in [SERIES_CUT, TAIL_CUT]: series head plus Gauss-Legendre
/// panels of width <= pi.
fn k_mid(alpha: f64, z: f64) -> f64 {
    let mut acc = k_series(alpha, SERIES_CUT);
    let mut a = SERIES_CUT;
    while a < z - 1e-14 {
        let b = (a + std::f64::consts::PI).min(z);
        acc += gl16_integrate(a, b, |u| (1.0 - u.cos()) * u.powf(-1.0 - alpha));
        a = b;
    }
    acc
}

/// K(0,z), directly quadratured (reference path).
pub fn k_incomplete(alpha: f64, z: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else if z <= SERIES_CUT {
        k_series(alpha, z)
    } else if z <= TAIL_CUT {
        k_mid(alpha, z)
    } else {
        i_alpha(alpha) - k_tail_asymptotic(alpha, z)
    }
}

/// Log-spaced interpolation table for K(0,z); linear in (ln z, ln K).
struct KTable {
    ln_z0: f64,
    dlnz: f64,
    ln_k: Vec<f64>,
    alpha: f64,
    total: f64,
}

const KTAB_ZMIN: f64 = 1e-8;
const KTAB_ZMAX: f64 = 1e8;
const KTAB_LEN: usize = 4096;

impl KTable {
    fn build(alpha: f64) -> Self {
        let ln_z0 = KTAB_ZMIN.ln();
        let dlnz = (KTAB_ZMAX.ln() - ln_z0) / (KTAB_LEN - 1) as f64;
        let ln_k: Vec<f64> = (0..KTAB_LEN)
            .into_par_iter()
            .map(|i| k_incomplete(alpha, (ln_z0 + i as f64 * dlnz).exp()).ln())
            .collect();
        KTable { ln_z0, dlnz, ln_k, alpha, total: i_alpha(alpha) }
    }

    fn eval(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        if z <= KTAB_ZMIN {
            // Leading small-argument behaviour z^{2-alpha}/(2(2-alpha)).
            return z.powf(2.0 - self.alpha) / (2.0 * (2.0 - self.alpha));
        }
        if z >= KTAB_ZMAX {
            return self.total;
        }
        let x = (z.ln() - self.ln_z0) / self.dlnz;
        let i = (x as usize).min(KTAB_LEN - 2);
        let t = x - i as f64;
        ((1.0 - t) * self.ln_k[i] + t * self.ln_k[i + 1]).exp()
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

pub struct SpectralModel {
    pub n: usize,
    pub weights: Vec<f64>,
    pub alpha: f64,
    /// c(alpha) = 1/(2 I(alpha)): radial calibration constant.
    pub sigma_mass: f64,
    i_alpha: f64,
    /// E|u_1|^alpha for u uniform on S^{n-1} (closed form via gammas).
    e_abs: f64,
    /// Spherical MC support: S u_i and its norm, shared by every integral.
    sphere: Vec<(Vec<f64>, f64)>,
}

/// E|u_1|^alpha for u uniform on S^{n-1}:
/// Gamma((alpha+1)/2) Gamma(n/2) / (sqrt(pi) Gamma((n+alpha)/2)).
fn e_abs_coord(n: usize, alpha: f64) -> f64 {
    let nf = n as f64;
    (ln_gamma((alpha + 1.0) / 2.0) + ln_gamma(nf / 2.0)
        - 0.5 * std::f64::consts::PI.ln()
        - ln_gamma((nf + alpha) / 2.0))
        .exp()
}

impl SpectralModel {
    pub fn new(
        n: usize,
        alpha: f64,
        mc_samples: usize,
        seed: u64,
    ) -> Result<Self, SpectralError> {
        let weights = (1..=n).map(|j| 1.0 / j as f64).collect();
        Self::with_weights(weights, alpha, mc_samples, seed)
    }

    pub fn with_weights(
        weights: Vec<f64>,
        alpha: f64,
        mc_samples: usize,
        seed: u64,
    ) -> Result<Self, SpectralError> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(SpectralError::AlphaOutOfRange(alpha));
        }
        if weights.is_empty()
            || weights.iter().any(|&w| !(w > 0.0))
            || weights.windows(2).any(|w| w[1] > w[0])
        {
            return Err(SpectralError::BadWeights);
        }
        let n = weights.len();
        let total = i_alpha(alpha);
        let mut rng = stream_rng(seed, 0);
        let sphere: Vec<(Vec<f64>, f64)> = (0..mc_samples)
            .map(|_| {
                loop {
                    let g: Vec<f64> = (0..n)
                        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                        .collect();
                    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > 1e-12 {
                        let lam_u: Vec<f64> =
                            g.iter().zip(&weights).map(|(x, w)| x / norm * w).collect();
                        let ln = lam_u.iter().map(|x| x * x).sum::<f64>().sqrt();
                        return (lam_u, ln);
                    }
                }
            })
            .collect();
        Ok(SpectralModel {
            n,
            weights,
            alpha,
            sigma_mass: 0.5 / total,
            i_alpha: total,
            e_abs: e_abs_coord(n, alpha),
            sphere,
        })
    }

    pub fn mc_samples(&self) -> usize {
        self.sphere.len()
    }

    /// ||S xi||_2.
    pub fn s_norm(&self, coeffs: &[f64]) -> f64 {
        coeffs
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| (c * w) * (c * w))
            .sum::<f64>()
            .sqrt()
    }

    /// Total mass of the realized spherical measure sigma.
    pub fn total_spherical_mass(&self) -> f64 {
        let mean_w: f64 = self
            .sphere
            .iter()
            .map(|(_, norm)| norm.powf(self.alpha))
            .sum::<f64>()
            / self.sphere.len() as f64;
        self.sigma_mass * mean_w / self.e_abs
    }

    /// Constant of the complement-tail bound: levy_integral(complement(b))
    /// <= tail_constant * b^{-alpha}, from 1 - cos <= 2.
    pub fn tail_constant(&self) -> f64 {
        2.0 * self.total_spherical_mass() / self.alpha
    }
}

// ---------------------------------------------------------------------------
// Stable sampling
// ---------------------------------------------------------------------------

/// Positive (a)-stable variable with Laplace transform exp(-s^a), 0 < a < 1
/// (Kanter's representation).
fn positive_stable<R: Rng>(a: f64, rng: &mut R) -> f64 {
    let v: f64 = rng.gen::<f64>() * std::f64::consts::PI;
    let w: f64 = -(1.0f64 - rng.gen::<f64>()).ln();
    let sv = v.sin().max(1e-300);
    (a * v).sin() / sv.powf(1.0 / a) * (((1.0 - a) * v).sin() / w).powf((1.0 - a) / a)
}

/// i.i.d. draws from the stable law with characteristic function
/// exp(-1/2 ||S xi||^alpha), via the sub-Gaussian representation
/// X = sqrt(A) G with A positive (alpha/2)-stable and
/// G ~ N(0, 2^{1-2/alpha} S^2): E exp(i<xi,X>) = exp(-(var(xi)/2)^{alpha/2})
/// and var(xi)/2 = 2^{-2/alpha}||S xi||^2, so the exponent is
/// 2^{-1}||S xi||^alpha as required.
pub fn sample_stable(
    model: &SpectralModel,
    count: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let g_scale = (2.0f64).powf(0.5 - 1.0 / model.alpha); // sqrt(2^{1-2/alpha})
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let a = positive_stable(model.alpha / 2.0, &mut rng);
            let sa = a.sqrt();
            model
                .weights
                .iter()
                .map(|&w| {
                    let g: f64 = rng.sample(rand_distr::StandardNormal);
                    sa * g_scale * w * g
                })
                .collect()
        })
        .collect()
}

/// Empirical real characteristic function at xi.
pub fn empirical_char(samples: &[Vec<f64>], xi: &[f64]) -> (f64, f64) {
    let vals: Vec<f64> = samples
        .iter()
        .map(|x| x.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>().cos())
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

// ---------------------------------------------------------------------------
// Test functions (Haar-projected rectangle increments)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum TestFunctionKind {
    Raw,
    RectIncrement { s: Point, t: Point, residual: f64 },
}

#[derive(Debug, Clone)]
pub struct TestFunction {
    pub coeffs: Vec<f64>,
    pub kind: TestFunctionKind,
}

/// 1-D Haar coefficients of the indicator 1_[0,a], basis of size 2^level:
/// index 0 is the scaling function, then wavelets psi_{j,k} in (j,k) order.
fn haar_coeffs_1d(a: f64, level: u32) -> Vec<f64> {
    let size = 1usize << level;
    let mut c = Vec::with_capacity(size);
    c.push(a);
    for j in 0..level {
        let scale = (2.0f64).powf(j as f64 / 2.0);
        let cell = (2.0f64).powi(-(j as i32));
        for k in 0..(1usize << j) {
            let left = k as f64 * cell;
            let mid = left + 0.5 * cell;
            let right = left + cell;
            let v = if a <= left {
                0.0
            } else if a <= mid {
                scale * (a - left)
            } else if a <= right {
                scale * (right - a)
            } else {
                0.0
            };
            c.push(v);
        }
    }
    c
}

/// Tensor-product Haar coefficients of the box indicator 1_[0,s],
/// lexicographic with the first axis fastest; n = 2^{level * nu}.
fn box_coeffs(s: &Point, level: u32) -> Vec<f64> {
    let per_axis: Vec<Vec<f64>> = s
        .coords()
        .iter()
        .map(|&a| haar_coeffs_1d(a, level))
        .collect();
    let m = 1usize << level;
    let nu = s.dim();
    let n = m.pow(nu as u32);
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; nu];
    loop {
        out.push(idx.iter().enumerate().map(|(a, &i)| per_axis[a][i]).product());
        let mut a = 0;
        loop {
            if a == nu {
                return out;
            }
            idx[a] += 1;
            if idx[a] < m {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

impl TestFunction {
    pub fn raw(coeffs: Vec<f64>) -> Self {
        TestFunction { coeffs, kind: TestFunctionKind::Raw }
    }

    /// Projection of phi_{s,t} = 1_{[0,s] sym-diff [0,t]} onto the tensor
    /// Haar basis up to `level`; the L2 projection residual is recorded.
    /// Uses 1_{A sym-diff B} = 1_A + 1_B - 2*1_{A cap B} with
    /// [0,s] cap [0,t] = [0, min(s,t)].
    pub fn rect_increment(s: &Point, t: &Point, level: u32) -> Result<Self, SpectralError> {
        if s.dim() != t.dim() {
            return Err(SpectralError::DimensionMismatch { expected: s.dim(), got: t.dim() });
        }
        let mn = Point::new(
            s.coords()
                .iter()
                .zip(t.coords())
                .map(|(&a, &b)| a.min(b))
                .collect(),
        )?;
        let cs = box_coeffs(s, level);
        let ct = box_coeffs(t, level);
        let cm = box_coeffs(&mn, level);
        let coeffs: Vec<f64> = cs
            .iter()
            .zip(&ct)
            .zip(&cm)
            .map(|((a, b), c)| a + b - 2.0 * c)
            .collect();
        let norm2: f64 = coeffs.iter().map(|c| c * c).sum();
        let delta = geometry::sym_diff_measure(s, t)?;
        let residual = (delta - norm2).max(0.0).sqrt();
        Ok(TestFunction {
            coeffs,
            kind: TestFunctionKind::RectIncrement { s: s.clone(), t: t.clone(), residual },
        })
    }

    pub fn h_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

// ---------------------------------------------------------------------------
// Lévy integrals
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    All,
    Ball(f64),
    Complement(f64),
    Band(f64, f64),
}

#[derive(Debug, Clone, Copy)]
pub struct LevyIntegral {
    pub value: f64,
    /// MC standard error over the spherical samples (the radial part is
    /// quadrature-exact to table accuracy).
    pub stderr: f64,
}

/// int_region (1 - cos<f, x>) Delta(dx).
///
/// Complement and band values are differences against I(alpha) and the ball
/// value, so all + ball + band + complement additivity is exact.
pub fn levy_integral(
    model: &SpectralModel,
    f: &TestFunction,
    region: Region,
) -> Result<LevyIntegral, SpectralError> {
    if f.coeffs.len() != model.n {
        return Err(SpectralError::DimensionMismatch { expected: model.n, got: f.coeffs.len() });
    }
    match region {
        Region::Ball(b) | Region::Complement(b) if b < 0.0 => {
            return Err(SpectralError::BadRegion)
        }
        Region::Band(a, b) if !(0.0 <= a && a <= b) => return Err(SpectralError::BadRegion),
        _ => {}
    }
    let alpha = model.alpha;
    let radial = |dot: f64, norm: f64| -> f64 {
        // contribution of one spherical sample with direction S u / ||S u||:
        // weight * |t|^alpha * K(region limits scaled by |t|) collapses to
        // |<f, S u>|^alpha * K(..) / E|u_1|^alpha.
        let p = dot.abs().powf(alpha);
        if p == 0.0 {
            return 0.0;
        }
        let t = dot.abs() / norm;
        let k = |z: f64| k_incomplete(alpha, z);
        match region {
            Region::All => p * model.i_alpha,
            Region::Ball(b) => p * k(b * t),
            Region::Complement(b) => p * (model.i_alpha - k(b * t)),
            Region::Band(a, b) => p * (k(b * t) - k(a * t)),
        }
    };
    let vals: Vec<f64> = model
        .sphere
        .par_iter()
        .map(|(lam_u, norm)| {
            let dot: f64 = f.coeffs.iter().zip(lam_u).map(|(c, x)| c * x).sum();
            radial(dot, *norm)
        })
        .collect();
    let scale = model.sigma_mass / model.e_abs;
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(LevyIntegral { value: scale * mean, stderr: scale * (var / n).sqrt() })
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub inputs: serde_json::Value,
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpecRepReport {
    pub worst_rel_err: f64,
    pub checks: Vec<CheckReport>,
    pub pass: bool,
}

/// Checks |2 levy_integral(f, all) - ||S f||^alpha| <= tol * ||S f||^alpha
/// for every test function.
pub fn verify_spec_rep(
    model: &SpectralModel,
    test_set: &[TestFunction],
    tol: f64,
) -> Result<SpecRepReport, SpectralError> {
    let mut checks = Vec::with_capacity(test_set.len());
    let mut worst = 0.0f64;
    for (i, f) in test_set.iter().enumerate() {
        let rhs = model.s_norm(&f.coeffs).powf(model.alpha);
        if rhs == 0.0 {
            return Err(SpectralError::ZeroFunction);
        }
        let lhs = 2.0 * levy_integral(model, f, Region::All)?.value;
        let rel = (lhs - rhs).abs() / rhs;
        worst = worst.max(rel);
        checks.push(CheckReport {
            check: "spec_rep".into(),
            inputs: serde_json::json!({"index": i, "alpha": model.alpha, "n": model.n}),
            lhs,
            rhs,
            tolerance: tol,
            pass: rel <= tol,
        });
    }
    Ok(SpecRepReport { worst_rel_err: worst, checks, pass: worst <= tol })
}

// ---------------------------------------------------------------------------
// A(1) discretization and the decay function F
// ---------------------------------------------------------------------------

/// Discretization of the normalized rectangle-increment set A(1).
pub struct A1Grid {
    pub nu: usize,
    pub level: u32,
    pub phis: Vec<TestFunction>,
}

/// All pairs from the dyadic `m^nu` grid `(i/m)_{i=1..m}` per axis with
/// `m = 2^level`, so projections are residual-free. The grid sup is a lower
/// bound of the true sup over A(1).
pub fn a1_grid(nu: usize, level: u32) -> Result<A1Grid, SpectralError> {
    let m = 1usize << level;
    let mut pts = Vec::new();
    let mut idx = vec![1usize; nu];
    'outer: loop {
        pts.push(Point::new(idx.iter().map(|&i| i as f64 / m as f64).collect())?);
        let mut a = 0;
        loop {
            if a == nu {
                break 'outer;
            }
            idx[a] += 1;
            if idx[a] <= m {
                break;
            }
            idx[a] = 1;
            a += 1;
        }
    }
    let mut phis = Vec::new();
    for i in 0..pts.len() {
        for j in 0..i {
            let f = TestFunction::rect_increment(&pts[i], &pts[j], level)?;
            if f.h_norm() > 0.0 {
                phis.push(f);
            }
        }
        // s against the origin covers phi_{0,s} = 1_{[0,s]}.
        let origin = Point::origin(nu);
        let f = TestFunction::rect_increment(&pts[i], &origin, level)?;
        if f.h_norm() > 0.0 {
            phis.push(f);
        }
    }
    Ok(A1Grid { nu, level, phis })
}

impl A1Grid {
    /// Extends the discretization with extra rectangle-increment pairs
    /// (still elements of A(1)).
    pub fn with_pairs(mut self, pairs: &[(Point, Point)]) -> Result<Self, SpectralError> {
        for (s, t) in pairs {
            let f = TestFunction::rect_increment(s, t, self.level)?;
            if f.h_norm() > 0.0 {
                self.phis.push(f);
            }
        }
        Ok(self)
    }
}

/// Precomputed per-phi, per-sample quantities for fast F evaluation.
pub struct FMachine<'a> {
    model: &'a SpectralModel,
    ktab: KTable,
    /// For each unit-normalized phi: (|<phi_hat, S u_i>|^alpha, |t_i|) pairs.
    cache: Vec<Vec<(f64, f64)>>,
}

impl<'a> FMachine<'a> {
    pub fn new(model: &'a SpectralModel, grid: &A1Grid) -> Result<Self, SpectralError> {
        let cache: Vec<Vec<(f64, f64)>> = grid
            .phis
            .par_iter()
            .map(|phi| {
                let norm = phi.h_norm();
                model
                    .sphere
                    .iter()
                    .map(|(lam_u, sn)| {
                        let dot: f64 =
                            phi.coeffs.iter().zip(lam_u).map(|(c, x)| c * x).sum::<f64>() / norm;
                        (dot.abs().powf(model.alpha), dot.abs() / sn)
                    })
                    .collect()
            })
            .collect();
        Ok(FMachine { model, ktab: KTable::build(model.alpha), cache })
    }

    fn phi_value(&self, cache: &[(f64, f64)], x: f64) -> f64 {
        let mean = cache
            .iter()
            .map(|&(p, t)| if p > 0.0 { p * self.ktab.eval(x * t) } else { 0.0 })
            .sum::<f64>()
            / cache.len() as f64;
        self.model.sigma_mass / self.model.e_abs * mean
    }

    /// F(x) = max over the discretized, unit-normalized A(1) of the ball(x)
    /// Lévy integral.
    pub fn eval(&self, x: f64) -> f64 {
        self.cache
            .par_iter()
            .map(|c| self.phi_value(c, x))
            .reduce(|| 0.0, f64::max)
    }

    /// Index of the phi achieving the sup at x.
    pub fn argmax(&self, x: f64) -> usize {
        let vals: Vec<f64> = self.cache.par_iter().map(|c| self.phi_value(c, x)).collect();
        vals.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }

    /// Tabulates F on log-spaced x in [x_min, x_max].
    pub fn table(&self, x_min: f64, x_max: f64, points: usize) -> FTable {
        let lmin = x_min.ln();
        let step = (x_max.ln() - lmin) / (points - 1) as f64;
        let xs: Vec<f64> = (0..points).map(|i| (lmin + i as f64 * step).exp()).collect();
        let fs: Vec<f64> = xs.par_iter().map(|&x| self.eval(x)).collect();
        FTable { xs, fs }
    }
}

/// Convenience single evaluation of F.
pub fn eval_f(model: &SpectralModel, grid: &A1Grid, x: f64) -> Result<f64, SpectralError> {
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok(FMachine::new(model, grid)?.eval(x))
}

#[derive(Debug, Clone)]
pub struct FTable {
    pub xs: Vec<f64>,
    pub fs: Vec<f64>,
}

impl FTable {
    pub fn f_min(&self) -> f64 {
        self.fs[0]
    }
    pub fn f_max(&self) -> f64 {
        *self.fs.last().unwrap()
    }

    /// Monotone inversion F^{-1}(q) by bisection on the table plus local
    /// log-linear interpolation.
    pub fn invert(&self, q: f64) -> Result<f64, SpectralError> {
        if !(q >= self.f_min() && q <= self.f_max()) {
            return Err(SpectralError::QuantileOutOfRange(q));
        }
        let i = match self.fs.partition_point(|&f| f < q) {
            0 => return Ok(self.xs[0]),
            i => i - 1,
        };
        if i + 1 == self.fs.len() {
            return Ok(*self.xs.last().unwrap());
        }
        let (f0, f1) = (self.fs[i], self.fs[i + 1]);
        let t = if f1 > f0 { (q.ln() - f0.ln()) / (f1.ln() - f0.ln()) } else { 0.0 };
        Ok((self.xs[i].ln() * (1.0 - t) + self.xs[i + 1].ln() * t).exp())
    }

    /// Forward interpolation F(x) on the table (log-log linear).
    pub fn forward(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return self.fs[0];
        }
        if x >= *self.xs.last().unwrap() {
            return self.f_max();
        }
        let i = self.xs.partition_point(|&v| v < x) - 1;
        let t = (x.ln() - self.xs[i].ln()) / (self.xs[i + 1].ln() - self.xs[i].ln());
        (self.fs[i].ln() * (1.0 - t) + self.fs[i + 1].ln() * t).exp()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,F\n");
        for (x, f) in self.xs.iter().zip(&self.fs) {
            s.push_str(&format!("{x:.17e},{f:.17e}\n"));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Truncation bounds (decoupling lemma)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct TruncationReport {
    pub near: CheckReport,
    pub far: CheckReport,
    pub pass: bool,
}

/// Checks the two truncation inequalities for a rectangle-increment phi:
/// ball part against ||phi||^alpha F(a ||phi||), complement part against
/// tail_constant * b^{-alpha}.
pub fn truncation_bounds_check(
    model: &SpectralModel,
    fm: &FMachine,
    f: &TestFunction,
    a: f64,
    b: f64,
) -> Result<TruncationReport, SpectralError> {
    if !(a > 0.0 && b > 0.0) {
        return Err(SpectralError::BadRegion);
    }
    let norm = f.h_norm();
    if norm == 0.0 {
        return Err(SpectralError::ZeroFunction);
    }
    let tol = 1e-9;
    let near_lhs = levy_integral(model, f, Region::Ball(a))?.value;
    let near_rhs = norm.powf(model.alpha) * fm.eval(a * norm);
    // Interpolation-table slack: levy_integral uses direct quadrature while F
    // uses the K table.
    let near_pass = near_lhs <= near_rhs * (1.0 + 1e-3) + tol;
    let far_lhs = levy_integral(model, f, Region::Complement(b))?.value;
    let far_rhs = model.tail_constant() * b.powf(-model.alpha);
    let far_pass = far_lhs <= far_rhs + tol;
    Ok(TruncationReport {
        near: CheckReport {
            check: "trunc_ball".into(),
            inputs: serde_json::json!({"a": a, "norm": norm}),
            lhs: near_lhs,
            rhs: near_rhs,
            tolerance: 1e-3,
            pass: near_pass,
        },
        far: CheckReport {
            check: "trunc_tail".into(),
            inputs: serde_json::json!({"b": b, "norm": norm}),
            lhs: far_lhs,
            rhs: far_rhs,
            tolerance: tol,
            pass: far_pass,
        },
        pass: near_pass && far_pass,
    })
}

// ---------------------------------------------------------------------------
// Modulus tables
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ModulusTables {
    pub eta: f64,
    pub h: f64,
    pub nu: usize,
    /// Absolute indices k; the start index is adaptive so that the quantiles
    /// stay inside F's tabulated range and the node condition
    /// r_k <= exp(-k) (hence psi_upper >= Psi_lower at the nodes) holds.
    pub ks: Vec<usize>,
    pub eps_seq: Vec<f64>,
    /// Natural logs of r_k and a_k = r_k^{-nu/2} eps_k; the raw values
    /// underflow/overflow f64 deep into the table.
    pub log_r_seq: Vec<f64>,
    pub log_a_seq: Vec<f64>,
    /// F(eps_k), by construction (log k)^{-2h/nu - 2 eta}.
    pub f_eps: Vec<f64>,
}

/// Lower modulus Psi_lower(r) = (log log 1/r)^{-h/nu}, defined for r < 1/e.
pub fn psi_lower(r: f64, h: f64, nu: usize) -> f64 {
    (1.0 / r).ln().ln().powf(-h / nu as f64)
}

impl ModulusTables {
    pub fn len(&self) -> usize {
        self.ks.len()
    }
    pub fn is_empty(&self) -> bool {
        self.ks.is_empty()
    }
    pub fn r(&self, i: usize) -> f64 {
        self.log_r_seq[i].exp()
    }
    pub fn a(&self, i: usize) -> f64 {
        self.log_a_seq[i].exp()
    }
    fn node(&self, i: usize) -> f64 {
        (self.ks[i] as f64).ln().powf(-self.h / self.nu as f64)
    }

    /// psi_upper: piecewise linear in log r through the nodes
    /// (r_k, (log k)^{-h/nu}), clamped outside, and never below Psi_lower.
    pub fn psi_upper(&self, r: f64) -> f64 {
        self.psi_upper_log(r.ln())
    }

    pub fn psi_upper_log(&self, log_r: f64) -> f64 {
        let interp = if log_r >= self.log_r_seq[0] {
            self.node(0)
        } else if log_r <= *self.log_r_seq.last().unwrap() {
            self.node(self.len() - 1)
        } else {
            // log_r_seq is decreasing.
            let i = self.log_r_seq.partition_point(|&lr| lr > log_r) - 1;
            let t = (log_r - self.log_r_seq[i]) / (self.log_r_seq[i + 1] - self.log_r_seq[i]);
            self.node(i) * (1.0 - t) + self.node(i + 1) * t
        };
        if log_r < -1.0 {
            interp.max(psi_lower(log_r.exp(), self.h, self.nu))
        } else {
            interp
        }
    }

    pub fn r_range(&self) -> (f64, f64) {
        (self.r(self.len() - 1), self.r(0))
    }
}

/// Builds the modulus sequences from a tabulated F:
/// eps_k = F^{-1}((log k)^{-2h/nu-2eta}),
/// log r_{k+1} = log r_k + log F(eps_k)/(2 nu h) + (2/nu) log eps_{k+1}.
///
/// The start index adapts so the first quantile sits at or below
/// `start_fraction` of F's range, and leading entries violating the node
/// condition r_k <= exp(-k) are dropped (keeping absolute indices).
pub fn build_modulus(
    model: &SpectralModel,
    ftab: &FTable,
    h: f64,
    nu: usize,
    eta: f64,
    k_count: usize,
) -> Result<ModulusTables, SpectralError> {
    let four_h = 4.0 * h;
    if (model.alpha - four_h).abs() > 1e-9 {
        return Err(SpectralError::AlphaHurstMismatch { alpha: model.alpha, four_h });
    }
    if !(eta > 0.0) || k_count < 3 {
        return Err(SpectralError::TableTooShort(k_count));
    }
    let expo = -2.0 * h / nu as f64 - 2.0 * eta;
    let quantile = |k: usize| (k as f64).ln().powf(expo);
    let start_fraction = 0.2;
    let cap = start_fraction * ftab.f_max();
    let mut k0 = 2usize;
    while quantile(k0) > cap {
        k0 += 1;
        if k0 > 1_000_000 {
            return Err(SpectralError::QuantileOutOfRange(cap));
        }
    }
    let last = k0 + k_count - 1;
    if quantile(last) < ftab.f_min() {
        return Err(SpectralError::QuantileOutOfRange(quantile(last)));
    }
    let ks: Vec<usize> = (k0..=last).collect();
    let f_eps: Vec<f64> = ks.iter().map(|&k| quantile(k)).collect();
    let eps_seq: Vec<f64> = f_eps
        .iter()
        .map(|&q| ftab.invert(q))
        .collect::<Result<_, _>>()?;
    let mut log_r = vec![0.0f64; ks.len()];
    for i in 1..ks.len() {
        log_r[i] = log_r[i - 1]
            + f_eps[i - 1].ln() / (2.0 * nu as f64 * h)
            + 2.0 / nu as f64 * eps_seq[i].ln();
    }
    // Node condition: keep the suffix with log r_k <= -k.
    let first_ok = (0..ks.len())
        .find(|&i| log_r[i] <= -(ks[i] as f64))
        .ok_or(SpectralError::TableTooShort(0))?;
    let ks: Vec<usize> = ks[first_ok..].to_vec();
    let eps_seq: Vec<f64> = eps_seq[first_ok..].to_vec();
    let f_eps: Vec<f64> = f_eps[first_ok..].to_vec();
    let log_r: Vec<f64> = log_r[first_ok..].to_vec();
    if ks.len() < 3 {
        return Err(SpectralError::TableTooShort(ks.len()));
    }
    if log_r.windows(2).any(|w| w[1] >= w[0]) {
        return Err(SpectralError::TableTooShort(ks.len()));
    }
    let log_a: Vec<f64> = log_r
        .iter()
        .zip(&eps_seq)
        .map(|(&lr, &e)| -(nu as f64) / 2.0 * lr + e.ln())
        .collect();
    Ok(ModulusTables { eta, h, nu, ks, eps_seq, log_r_seq: log_r, log_a_seq: log_a, f_eps })
}

// ---------------------------------------------------------------------------
// Band decomposition variance check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct BandReport {
    pub checks: Vec<CheckReport>,
    /// max over the pair grid of Var(Btilde^k_s - Btilde^k_t).
    pub d_k_sq: f64,
    pub d_k_sq_bound: f64,
    pub pass: bool,
}

/// For pairs (s,t) inside [0, r_k]^nu: the residual band process variance
/// Var = ball(a_k) + complement(a_{k+1}) Lévy integrals of phi_{s,t}, bounded
/// by C (||phi||^alpha F(a_k ||phi||) + a_{k+1}^{-alpha}) with
/// C = max(1, tail_constant). The FMachine's grid must contain the tested
/// pairs for the ball part to be dominated by F by construction.
pub fn band_variance_check(
    model: &SpectralModel,
    fm: &FMachine,
    tables: &ModulusTables,
    idx: usize,
    pairs: &[(Point, Point)],
    level: u32,
) -> Result<BandReport, SpectralError> {
    if idx + 1 >= tables.len() {
        return Err(SpectralError::TableTooShort(tables.len()));
    }
    let a_k = tables.a(idx);
    let a_k1 = tables.a(idx + 1);
    let c = model.tail_constant().max(1.0);
    let mut checks = Vec::new();
    let mut d_k_sq = 0.0f64;
    for (s, t) in pairs {
        let phi = TestFunction::rect_increment(s, t, level)?;
        let norm = phi.h_norm();
        if norm == 0.0 {
            checks.push(CheckReport {
                check: "band_variance".into(),
                inputs: serde_json::json!({"s": s.coords(), "t": t.coords()}),
                lhs: 0.0,
                rhs: 0.0,
                tolerance: 0.0,
                pass: true,
            });
            continue;
        }
        let var = levy_integral(model, &phi, Region::Ball(a_k))?.value
            + levy_integral(model, &phi, Region::Complement(a_k1))?.value;
        d_k_sq = d_k_sq.max(var);
        let rhs = c
            * (norm.powf(model.alpha) * fm.eval(a_k * norm) + a_k1.powf(-model.alpha));
        let pass = var <= rhs * (1.0 + 1e-3) + 1e-12;
        checks.push(CheckReport {
            check: "band_variance".into(),
            inputs: serde_json::json!({"s": s.coords(), "t": t.coords(), "k": tables.ks[idx]}),
            lhs: var,
            rhs,
            tolerance: 1e-3,
            pass,
        });
    }
    let r_k = tables.r(idx);
    let d_k_sq_bound =
        2.0 * c * r_k.powf(2.0 * tables.nu as f64 * tables.h) * fm.eval(tables.eps_seq[idx]);
    let pass = checks.iter().all(|ch| ch.pass) && d_k_sq <= d_k_sq_bound * (1.0 + 1e-3) + 1e-12;
    Ok(BandReport { checks, d_k_sq, d_k_sq_bound, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use statrs::function::gamma::gamma;

    fn closed_form_i(alpha: f64) -> f64 {
        // int_0^inf (1-cos u) u^{-1-alpha} du, alpha in (0,2) \ {1}.
        gamma(2.0 - alpha) * (std::f64::consts::PI * alpha / 2.0).cos()
            / (alpha * (1.0 - alpha))
    }

    #[test]
    fn gl16_exact_on_smooth() {
        assert_abs_diff_eq!(gl16_integrate(0.0, std::f64::consts::PI, f64::sin), 2.0, epsilon = 1e-13);
    }

    #[test]
    fn i_alpha_matches_closed_form() {
        for &a in &[0.4, 0.8, 1.2, 1.6, 1.9] {
            let num = i_alpha(a);
            let cf = closed_form_i(a);
            assert!(
                (num - cf).abs() <= 1e-7 * cf.abs(),
                "alpha {a}: {num} vs {cf}"
            );
        }
        assert_abs_diff_eq!(i_alpha(1.0), std::f64::consts::FRAC_PI_2, epsilon = 1e-7);
    }

    #[test]
    fn k_incomplete_continuous_and_monotone() {
        for &a in &[0.8, 1.2, 1.6] {
            assert!((k_incomplete(a, 4.0 - 1e-9) - k_incomplete(a, 4.0 + 1e-9)).abs() < 1e-7);
            assert!((k_incomplete(a, 40.0 - 1e-9) - k_incomplete(a, 40.0 + 1e-9)).abs() < 1e-7);
            let mut last = 0.0;
            for i in 0..200 {
                let z = 1e-4 * (1.12f64).powi(i);
                let k = k_incomplete(a, z);
                assert!(k >= last - 1e-14, "alpha {a}, z {z}");
                last = k;
            }
            assert!(last <= i_alpha(a) + 1e-10);
        }
    }

    #[test]
    fn ktable_accurate() {
        let tab = KTable::build(1.2);
        for i in 0..60 {
            let z = 1e-6 * (2.0f64).powi(i / 2) * if i % 2 == 0 { 1.0 } else { 1.7 };
            if z > 1e7 {
                break;
            }
            let exact = k_incomplete(1.2, z);
            let approx = tab.eval(z);
            assert!(
                (exact - approx).abs() <= 2e-4 * exact.abs().max(1e-300),
                "z {z}: {exact} vs {approx}"
            );
        }
    }

    fn model_1d(alpha: f64) -> SpectralModel {
        SpectralModel::with_weights(vec![1.0], alpha, 64, 7).unwrap()
    }

    #[test]
    fn model_validation() {
        assert!(matches!(SpectralModel::new(4, 2.0, 16, 1), Err(SpectralError::AlphaOutOfRange(_))));
        assert!(matches!(SpectralModel::new(4, 0.0, 16, 1), Err(SpectralError::AlphaOutOfRange(_))));
        assert!(matches!(
            SpectralModel::with_weights(vec![1.0, 2.0], 1.2, 16, 1),
            Err(SpectralError::BadWeights)
        ));
    }

    #[test]
    fn positive_stable_laplace_transform() {
        let a = 0.6;
        let mut rng = stream_rng(11, 0);
        let n = 200_000;
        for &s in &[0.5f64, 1.0, 2.0] {
            let vals: Vec<f64> = (0..n).map(|_| (-s * positive_stable(a, &mut rng)).exp()).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let se = (var / n as f64).sqrt();
            let target = (-s.powf(a)).exp();
            assert!((mean - target).abs() <= 4.0 * se + 1e-4, "s {s}: {mean} vs {target}");
        }
    }

    #[test]
    fn stable_char_function_1d() {
        let model = model_1d(1.2);
        let samples = sample_stable(&model, 100_000, 3);
        let (at_zero, _) = empirical_char(&samples, &[0.0]);
        assert_eq!(at_zero, 1.0);
        for &xi in &[0.5f64, 1.0, 2.0] {
            let (mean, se) = empirical_char(&samples, &[xi]);
            let target = (-0.5 * xi.powf(1.2)).exp();
            assert!((mean - target).abs() <= 3.0 * se + 1e-4, "xi {xi}: {mean} vs {target}");
        }
        // symmetry: sign-odd statistic
        let mean_sign: f64 =
            samples.iter().map(|x| x[0].signum()).sum::<f64>() / samples.len() as f64;
        assert!(mean_sign.abs() <= 3.0 / (samples.len() as f64).sqrt() + 1e-6);
    }

    #[test]
    fn stable_sum_stability() {
        let model = model_1d(1.2);
        let samples = sample_stable(&model, 120_000, 5);
        let k = 4usize;
        let scale = (k as f64).powf(-1.0 / 1.2);
        let sums: Vec<Vec<f64>> = samples
            .chunks(k)
            .map(|c| vec![scale * c.iter().map(|x| x[0]).sum::<f64>()])
            .collect();
        for &xi in &[0.7f64, 1.5] {
            let (m1, s1) = empirical_char(&sums, &[xi]);
            let target = (-0.5 * xi.powf(1.2)).exp();
            assert!((m1 - target).abs() <= 4.0 * s1 + 1e-3, "xi {xi}: {m1} vs {target}");
        }
    }

    #[test]
    fn levy_integral_zero_and_exact_1d() {
        let model = model_1d(1.2);
        let zero = TestFunction::raw(vec![0.0]);
        assert_eq!(levy_integral(&model, &zero, Region::All).unwrap().value, 0.0);
        for &xi in &[0.3f64, 1.0, 4.0] {
            let f = TestFunction::raw(vec![xi]);
            let v = levy_integral(&model, &f, Region::All).unwrap().value;
            // exact in 1-D by calibration
            assert_abs_diff_eq!(2.0 * v, xi.powf(1.2), epsilon = 1e-9);
        }
    }

    #[test]
    fn levy_additivity_exact() {
        let model = SpectralModel::new(6, 1.2, 512, 9).unwrap();
        let f = TestFunction::raw(vec![0.4, -0.2, 0.9, 0.1, -0.5, 0.3]);
        let all = levy_integral(&model, &f, Region::All).unwrap().value;
        let ball = levy_integral(&model, &f, Region::Ball(0.7)).unwrap().value;
        let band = levy_integral(&model, &f, Region::Band(0.7, 3.0)).unwrap().value;
        let comp = levy_integral(&model, &f, Region::Complement(3.0)).unwrap().value;
        assert_abs_diff_eq!(ball + band + comp, all, epsilon = 1e-9 * all.abs());
    }

    #[test]
    fn spec_rep_identity_small_n() {
        let model = SpectralModel::new(8, 1.2, 100_000, 13).unwrap();
        let mut rng = stream_rng(17, 0);
        let fs: Vec<TestFunction> = (0..20)
            .map(|_| {
                TestFunction::raw(
                    (0..8)
                        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                        .collect(),
                )
            })
            .collect();
        let rep = verify_spec_rep(&model, &fs, 0.02).unwrap();
        assert!(rep.pass, "worst rel err {}", rep.worst_rel_err);
        // basis vector: 2*integral = lambda_1^alpha
        let e1 = TestFunction::raw(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let v = 2.0 * levy_integral(&model, &e1, Region::All).unwrap().value;
        assert!((v - 1.0f64.powf(1.2)).abs() <= 0.02);
        // homogeneity: doubling multiplies by 2^alpha (exact for region=all)
        let f = &fs[0];
        let doubled = TestFunction::raw(f.coeffs.iter().map(|c| 2.0 * c).collect());
        let v1 = levy_integral(&model, f, Region::All).unwrap().value;
        let v2 = levy_integral(&model, &doubled, Region::All).unwrap().value;
        assert_abs_diff_eq!(v2 / v1, (2.0f64).powf(1.2), epsilon = 1e-9);
    }

    #[test]
    fn haar_projection_dyadic_exact() {
        let s = Point::new(vec![0.5, 0.75]).unwrap();
        let t = Point::new(vec![0.25, 1.0]).unwrap();
        let f = TestFunction::rect_increment(&s, &t, 3).unwrap();
        match &f.kind {
            TestFunctionKind::RectIncrement { residual, .. } => {
                assert!(residual.abs() < 1e-10, "residual {residual}")
            }
            _ => panic!(),
        }
        let delta = geometry::sym_diff_measure(&s, &t).unwrap();
        assert_abs_diff_eq!(f.h_norm() * f.h_norm(), delta, epsilon = 1e-12);
    }

    #[test]
    fn haar_projection_refines() {
        let s = Point::new(vec![0.437, 0.661]).unwrap();
        let t = Point::new(vec![0.213, 0.914]).unwrap();
        let delta = geometry::sym_diff_measure(&s, &t).unwrap();
        let mut last_res = f64::INFINITY;
        for level in 2..=5 {
            let f = TestFunction::rect_increment(&s, &t, level).unwrap();
            let res = match &f.kind {
                TestFunctionKind::RectIncrement { residual, .. } => *residual,
                _ => panic!(),
            };
            assert!(f.h_norm() <= delta.sqrt() + 1e-12);
            assert!(res <= last_res + 1e-12);
            last_res = res;
        }
        assert!(last_res < 0.3 * delta.sqrt());
    }

    #[test]
    fn f_zero_monotone_and_limit() {
        let model = SpectralModel::new(16, 1.2, 512, 23).unwrap();
        let grid = a1_grid(2, 2).unwrap();
        let fm = FMachine::new(&model, &grid).unwrap();
        assert_eq!(eval_f(&model, &grid, 0.0).unwrap(), 0.0);
        let mut last = 0.0;
        for i in -6..6 {
            let x = (10.0f64).powi(i);
            let v = fm.eval(x);
            assert!(v >= last, "x {x}");
            last = v;
        }
        // large-x limit equals the all-region integral of the maximizing phi
        let big = fm.eval(1e7);
        let arg = fm.argmax(1e7);
        let phi = &grid.phis[arg];
        let phin = phi.h_norm();
        let hat = TestFunction::raw(phi.coeffs.iter().map(|c| c / phin).collect());
        let all = levy_integral(&model, &hat, Region::All).unwrap().value;
        assert!((big - all).abs() <= 2e-3 * all, "{big} vs {all}");
    }

    #[test]
    fn truncation_bounds_random_sweep() {
        let model = SpectralModel::new(16, 1.2, 512, 31).unwrap();
        let grid = a1_grid(2, 2).unwrap();
        let fm = FMachine::new(&model, &grid).unwrap();
        let mut rng = stream_rng(37, 0);
        for i in 0..50 {
            let phi = &grid.phis[rng.gen_range(0..grid.phis.len())];
            let a = (10.0f64).powf(rng.gen_range(-2.0..2.0));
            let b = (10.0f64).powf(rng.gen_range(-2.0..2.0));
            let rep = truncation_bounds_check(&model, &fm, phi, a, b).unwrap();
            assert!(rep.pass, "case {i}: near {:?} far {:?}", rep.near, rep.far);
        }
    }

    #[test]
    fn tail_uniformly_bounded() {
        let model = SpectralModel::new(16, 1.2, 512, 41).unwrap();
        let grid = a1_grid(2, 2).unwrap();
        let phi = &grid.phis[0];
        // the tail bound 1-cos <= 2 is independent of ||phi||
        let c = model.tail_constant();
        for i in 0..20 {
            let b = 0.5 * (1.26f64).powi(i);
            let v = levy_integral(&model, phi, Region::Complement(b)).unwrap().value;
            assert!(v * b.powf(model.alpha) <= c + 1e-9, "b {b}");
        }
    }

    fn modulus_fixture() -> (SpectralModel, FTable) {
        let h = 0.3;
        let model = SpectralModel::new(16, 4.0 * h, 256, 51).unwrap();
        let grid = a1_grid(2, 2).unwrap();
        let fm = FMachine::new(&model, &grid).unwrap();
        let ftab = fm.table(1e-6, 1e4, 256);
        (model, ftab)
    }

    #[test]
    fn modulus_tables_invariants() {
        let (model, ftab) = modulus_fixture();
        let (h, nu, eta) = (0.3, 2usize, 1.5);
        let tab = build_modulus(&model, &ftab, h, nu, eta, 40).unwrap();
        assert!(tab.len() >= 3);
        // node equality exact
        for i in 0..tab.len() {
            let node = (tab.ks[i] as f64).ln().powf(-h / nu as f64);
            assert_abs_diff_eq!(tab.psi_upper_log(tab.log_r_seq[i]), node, epsilon = 1e-12);
        }
        // r strictly decreasing, eps decreasing
        assert!(tab.log_r_seq.windows(2).all(|w| w[1] < w[0]));
        assert!(tab.eps_seq.windows(2).all(|w| w[1] <= w[0]));
        // a_{k+1} r_k^{nu/2} >= F(eps_k)^{-1/4h} (equality by algebra)
        for i in 0..tab.len() - 1 {
            let lhs = tab.log_a_seq[i + 1] + nu as f64 / 2.0 * tab.log_r_seq[i];
            let rhs = -tab.f_eps[i].ln() / (4.0 * h);
            assert!(lhs >= rhs - 1e-9, "i {i}: {lhs} vs {rhs}");
        }
        // psi_upper >= psi_lower across the tabulated range
        let (r_lo, r_hi) = tab.r_range();
        let (llo, lhi) = (r_lo.ln(), r_hi.ln());
        for j in 0..=400 {
            let lr = llo + (lhi - llo) * j as f64 / 400.0;
            let r = lr.exp();
            if r < (-1.0f64).exp() {
                assert!(
                    tab.psi_upper_log(lr) >= psi_lower(r, h, nu) - 1e-12,
                    "r {r}"
                );
            }
        }
        // (log k)^{h/nu} / sqrt(-F(eps_k) log F(eps_k)) increasing
        let seq: Vec<f64> = tab
            .ks
            .iter()
            .zip(&tab.f_eps)
            .map(|(&k, &q)| (k as f64).ln().powf(h / nu as f64) / (-q * q.ln()).sqrt())
            .collect();
        assert!(seq.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn band_variance_bounds() {
        let (model, ftab) = modulus_fixture();
        let (h, nu, eta) = (0.3, 2usize, 1.5);
        let tab = build_modulus(&model, &ftab, h, nu, eta, 10).unwrap();
        let idx = 0usize;
        let r_k = tab.r(idx);
        let mut rng = stream_rng(61, 0);
        let mut pairs = Vec::new();
        for _ in 0..12 {
            let s = Point::new(vec![rng.gen::<f64>() * r_k, rng.gen::<f64>() * r_k]).unwrap();
            let t = Point::new(vec![rng.gen::<f64>() * r_k, rng.gen::<f64>() * r_k]).unwrap();
            pairs.push((s, t));
        }
        // identical pair: variance must be zero
        pairs.push((pairs[0].0.clone(), pairs[0].0.clone()));
        let level = 2u32;
        let grid = a1_grid(nu, level).unwrap().with_pairs(&pairs).unwrap();
        let fm = FMachine::new(&model, &grid).unwrap();
        let rep = band_variance_check(&model, &fm, &tab, idx, &pairs, level).unwrap();
        assert!(rep.pass, "d_k_sq {} bound {}", rep.d_k_sq, rep.d_k_sq_bound);
        // sum identity: band + ball + complement = all, exactly
        let phi = TestFunction::rect_increment(&pairs[0].0, &pairs[0].1, level).unwrap();
        let a_k = tab.a(idx);
        let a_k1 = tab.a(idx + 1);
        let all = levy_integral(&model, &phi, Region::All).unwrap().value;
        let parts = levy_integral(&model, &phi, Region::Ball(a_k)).unwrap().value
            + levy_integral(&model, &phi, Region::Band(a_k, a_k1)).unwrap().value
            + levy_integral(&model, &phi, Region::Complement(a_k1)).unwrap().value;
        assert_abs_diff_eq!(parts, all, epsilon = 1e-12 + 1e-9 * all.abs());
    }

    #[test]
    fn ftable_roundtrip() {
        let (_, ftab) = modulus_fixture();
        assert!(ftab.fs.windows(2).all(|w| w[1] > w[0]), "F table strictly increasing");
        for &q in &[ftab.f_min() * 1.5, ftab.f_max() * 0.3, ftab.f_max() * 0.9] {
            let x = ftab.invert(q).unwrap();
            let back = ftab.forward(x);
            assert!((back - q).abs() <= 2e-2 * q, "q {q}: x {x} back {back}");
        }
        let csv = ftab.to_csv();
        assert!(csv.starts_with("x,F\n"));
        assert_eq!(csv.lines().count(), ftab.xs.len() + 1);
    }
}
