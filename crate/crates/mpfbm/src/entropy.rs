//! Covering numbers under the symmetric-difference and Euclidean metrics,
//! entropy slopes, and the empirical equivalence constants between the two
//! metrics (including the counterexample on the axes).
//!
//! Covering numbers are computed over a finite candidate grid by greedy
//! farthest-point covering with lexicographic tie-breaking, so results are
//! deterministic. The greedy count `N` satisfies
//! `N_exact(eps) <= N <= N_exact(eps/2)`.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{self, Point};
use crate::rng::stream_rng;
use crate::stats::{self, StatsError};

#[derive(Debug, Error)]
pub enum EntropyError {
    #[error("domain is empty")]
    EmptyDomain,
    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("grid spacing {spacing:.3e} is not small relative to epsilon {epsilon:.3e}")]
    GridTooCoarse { spacing: f64, epsilon: f64 },
    #[error("lower equivalence constant is undefined at a = 0 (fails at the axes)")]
    LowerBoundAtAxes,
    #[error("bounds must satisfy 0 <= a < b <= 1, got a={a}, b={b}")]
    InvalidBounds { a: f64, b: f64 },
    #[error("counterexample requires nu >= 2")]
    DimensionOne,
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoveringMethod {
    Greedy,
    Exhaustive1d,
}

#[derive(Debug, Clone)]
pub struct CoveringResult {
    pub epsilon: f64,
    pub count: usize,
    pub centers: Vec<Point>,
    pub method: CoveringMethod,
}

/// Uniform grid of `m^nu` points on `[0,1]^nu` (inclusive endpoints).
pub fn unit_grid(nu: usize, m: usize) -> Vec<Point> {
    let mut points = Vec::with_capacity(m.pow(nu as u32));
    let mut index = vec![0usize; nu];
    loop {
        let coords: Vec<f64> = index.iter().map(|&i| i as f64 / (m - 1) as f64).collect();
        points.push(Point::new(coords).expect("grid coords in [0,1]"));
        let mut axis = 0;
        loop {
            if axis == nu {
                return points;
            }
            index[axis] += 1;
            if index[axis] < m {
                break;
            }
            index[axis] = 0;
            axis += 1;
        }
    }
}

/// `d_lambda` as a closure usable with [`covering_number`].
pub fn d_lambda(s: &Point, t: &Point) -> f64 {
    geometry::sym_diff_measure(s, t).expect("matching dimensions")
}

pub fn d_euclid(s: &Point, t: &Point) -> f64 {
    s.euclid_dist(t)
}

/// Greedy farthest-point covering of a finite domain.
///
/// Starts from the lexicographically smallest point, and repeatedly promotes
/// the uncovered point farthest from the current centers (lexicographic
/// tie-break on equal distances). The returned centers certify coverage: every
/// domain point is within `epsilon` of some center, asserted before returning.
pub fn covering_number<M>(
    domain: &[Point],
    metric: M,
    epsilon: f64,
) -> Result<CoveringResult, EntropyError>
where
    M: Fn(&Point, &Point) -> f64 + Sync,
{
    if domain.is_empty() {
        return Err(EntropyError::EmptyDomain);
    }
    if epsilon <= 0.0 {
        return Err(EntropyError::NonPositiveEpsilon(epsilon));
    }
    // Distance to nearest chosen center, per candidate.
    let mut nearest: Vec<f64> = domain
        .par_iter()
        .map(|p| metric(&domain[0], p))
        .collect();
    let mut centers = vec![domain[0].clone()];
    loop {
        // Farthest uncovered point; ties resolved by smallest index, and the
        // domain is generated in lexicographic order.
        let (far_idx, far_dist) = nearest
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |(bi, bd), (i, &d)| {
                if d > bd {
                    (i, d)
                } else {
                    (bi, bd)
                }
            });
        if far_dist <= epsilon {
            break;
        }
        let center = domain[far_idx].clone();
        nearest
            .par_iter_mut()
            .zip(domain.par_iter())
            .for_each(|(d, p)| {
                let nd = metric(&center, p);
                if nd < *d {
                    *d = nd;
                }
            });
        centers.push(center);
    }
    // Coverage certificate.
    debug_assert!(nearest.iter().all(|&d| d <= epsilon));
    Ok(CoveringResult {
        epsilon,
        count: centers.len(),
        centers,
        method: CoveringMethod::Greedy,
    })
}

/// Exact 1-D interval covering under `d_lambda = |s - t|`: intervals of
/// radius `eps` have length `2 eps`.
pub fn exhaustive_cover_1d(epsilon: f64) -> Result<CoveringResult, EntropyError> {
    if epsilon <= 0.0 {
        return Err(EntropyError::NonPositiveEpsilon(epsilon));
    }
    let count = (1.0 / (2.0 * epsilon)).ceil().max(1.0) as usize;
    let centers: Vec<Point> = (0..count)
        .map(|i| {
            let c = ((2 * i + 1) as f64 * epsilon).min(1.0);
            Point::new(vec![c]).unwrap()
        })
        .collect();
    Ok(CoveringResult {
        epsilon,
        count,
        centers,
        method: CoveringMethod::Exhaustive1d,
    })
}

/// Least-squares slope of `log N` against `log(1/eps)`.
///
/// Requires at least 5 results spanning a decade of epsilon.
pub fn entropy_slope(results: &[CoveringResult]) -> Result<f64, EntropyError> {
    let pts: Vec<(f64, f64)> = results
        .iter()
        .map(|r| (1.0 / r.epsilon, r.count as f64))
        .collect();
    let (slope, _) = stats::log_log_slope(&pts, 5, 1.0)?;
    Ok(slope)
}

/// Validates that the candidate grid resolves radius-`epsilon` balls: the
/// metric diameter of one grid cell must be well below `epsilon`.
pub fn check_grid_resolution<M>(
    nu: usize,
    m: usize,
    metric: M,
    epsilon: f64,
) -> Result<(), EntropyError>
where
    M: Fn(&Point, &Point) -> f64,
{
    let spacing = 1.0 / (m - 1) as f64;
    let corner = Point::new(vec![1.0; nu]).unwrap();
    let shifted = Point::new(vec![1.0 - spacing; nu]).unwrap();
    let cell_diam = metric(&corner, &shifted);
    if cell_diam > epsilon / 2.0 {
        return Err(EntropyError::GridTooCoarse { spacing: cell_diam, epsilon });
    }
    Ok(())
}

/// Empirical infimum / supremum of `delta(s,t) / ||s-t||` over `[a,b]^nu`.
#[derive(Debug, Clone, Copy)]
pub struct EquivalenceConstants {
    pub a: f64,
    pub b: f64,
    pub m_hat: f64,
    pub big_m_hat: f64,
}

/// Samples `samples` point pairs uniformly in `[a,b]^nu` and records the
/// extreme ratios `delta(s,t)/||s-t||_2`. `a = 0` with a lower-bound request
/// is rejected: the lower equivalence constant degenerates on the axes.
pub fn equivalence_constants(
    nu: usize,
    a: f64,
    b: f64,
    samples: usize,
    seed: u64,
    want_lower: bool,
) -> Result<EquivalenceConstants, EntropyError> {
    if !(a >= 0.0 && a < b && b <= 1.0) {
        return Err(EntropyError::InvalidBounds { a, b });
    }
    if want_lower && a == 0.0 {
        return Err(EntropyError::LowerBoundAtAxes);
    }
    let mut rng = stream_rng(seed, 0);
    let mut m_hat = f64::INFINITY;
    let mut big_m_hat: f64 = 0.0;
    let mut drawn = 0usize;
    while drawn < samples {
        let s: Vec<f64> = (0..nu).map(|_| rng.gen_range(a..=b)).collect();
        let t: Vec<f64> = (0..nu).map(|_| rng.gen_range(a..=b)).collect();
        let sp = Point::new(s)?;
        let tp = Point::new(t)?;
        let e = sp.euclid_dist(&tp);
        if e == 0.0 {
            continue;
        }
        let ratio = d_lambda(&sp, &tp) / e;
        m_hat = m_hat.min(ratio);
        big_m_hat = big_m_hat.max(ratio);
        drawn += 1;
    }
    Ok(EquivalenceConstants { a, b, m_hat, big_m_hat })
}

/// A single global upper constant `M_hat` on all of `[0,1]^nu`, from a large
/// randomized scan plus the analytic bound `delta <= sum_i prod_{j!=i} b_j
/// |s_i - t_i| <= nu ||s-t||_2` on the unit cube.
pub fn global_upper_constant(nu: usize, samples: usize, seed: u64) -> f64 {
    let scanned = equivalence_constants(nu, 0.0, 1.0, samples, seed, false)
        .expect("valid bounds")
        .big_m_hat;
    // On [0,1]^nu the measure changes by at most |s_i - t_i| per axis, so
    // delta <= ||s-t||_1 <= sqrt(nu) ||s-t||_2 is a certified ceiling.
    scanned.max((nu as f64).sqrt())
}

/// The axes counterexample: `s_n = (2^{-n}, b, .., b)`,
/// `t_n = (b, 2^{-n}, b, .., b)`. `delta -> 0` while `||s-t|| -> sqrt(2) b`.
pub fn compdist_counterexample(
    nu: usize,
    b: f64,
    n: u32,
) -> Result<(Point, Point, f64, f64), EntropyError> {
    if nu < 2 {
        return Err(EntropyError::DimensionOne);
    }
    let x = 2f64.powi(-(n as i32));
    let mut s = vec![b; nu];
    s[0] = x;
    let mut t = vec![b; nu];
    t[1] = x;
    let sp = Point::new(s)?;
    let tp = Point::new(t)?;
    let delta = d_lambda(&sp, &tp);
    let euclid = sp.euclid_dist(&tp);
    Ok((sp, tp, delta, euclid))
}
