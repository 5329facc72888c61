//! Monte-Carlo small-ball probabilities `P(sup |B| <= eps)` and the scaling
//! fits that compare the origin regime against the interior one.
//!
//! Sweeps use common random numbers: one replicate pool of stored sups, with
//! thresholds applied afterwards. Monotonicity in `eps` is then exact per
//! replicate, and `r`-sweeps use nested sub-regions of a single simulation.

use std::sync::Arc;

use thiserror::Error;

use crate::field::{self, FieldError};
use crate::geometry::{GeometryError, HurstParam, Point};
use crate::stats::{self, wilson_interval, StatsError};

#[derive(Debug, Error)]
pub enum SmallBallError {
    #[error("small-ball estimation requires h < 1/2, got {0}")]
    HurstTooLarge(f64),
    #[error("need at least 100 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("interior ball B(t0,{r}) must lie in (0,1)^nu")]
    BallLeavesDomain { r: f64 },
    #[error("degenerate region: no grid point inside")]
    DegenerateRegion,
    #[error("fewer than {need} informative estimates ({got})")]
    TooFewInformative { need: usize, got: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Location {
    Origin,
    Interior(Point),
}

#[derive(Debug, Clone)]
pub struct SmallBallEstimate {
    pub r: f64,
    pub epsilon: f64,
    pub location: Location,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub replicates: usize,
    pub grid_n: usize,
    /// False when `p_hat` is 0, 1, or below `10/replicates`; such estimates
    /// are excluded from slope fits.
    pub informative: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitAxis {
    Epsilon,
    Radius,
}

#[derive(Debug, Clone)]
pub struct ScalingFit {
    pub axis: FitAxis,
    pub slope: f64,
    pub stderr: f64,
    pub points: Vec<(f64, f64)>,
}

/// Stored per-replicate sups over a nested family of regions; the common
/// random number pool behind all estimates.
pub struct SupPool {
    pub rs: Vec<f64>,
    /// `sups[i][rep]` = sup over the region of radius `rs[i]`.
    pub sups: Vec<Vec<f64>>,
    pub location: Location,
    pub h: HurstParam,
    pub grid_n: usize,
    pub replicates: usize,
    pub seed: u64,
}

fn check_inputs(h: HurstParam, replicates: usize) -> Result<(), SmallBallError> {
    if h.h() >= 0.5 {
        return Err(SmallBallError::HurstTooLarge(h.h()));
    }
    if replicates < 100 {
        return Err(SmallBallError::TooFewReplicates(replicates));
    }
    Ok(())
}

/// Pool over `[0,r]^nu` for each `r` in `rs`, simulated once on the grid of
/// the largest radius so the sub-cubes are nested point sets.
pub fn origin_pool(
    h: HurstParam,
    nu: usize,
    rs: &[f64],
    grid_n: usize,
    replicates: usize,
    seed: u64,
) -> Result<SupPool, SmallBallError> {
    check_inputs(h, replicates)?;
    let mut rs = rs.to_vec();
    rs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let r_max = *rs.last().ok_or(SmallBallError::DegenerateRegion)?;
    let grid = field::GridSpec::new(nu, grid_n, r_max, true)?;
    let (_, samples) = field::simulate_grid(&grid, h, replicates, seed)?;
    let points = grid.points();
    let mut sups = Vec::with_capacity(rs.len());
    for &r in &rs {
        let inside: Vec<usize> = points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.coords().iter().all(|&c| c <= r + 1e-12))
            .map(|(i, _)| i)
            .collect();
        if inside.iter().all(|&i| points[i].coords().iter().all(|&c| c == 0.0)) {
            return Err(SmallBallError::DegenerateRegion);
        }
        sups.push(
            samples
                .iter()
                .map(|s| inside.iter().map(|&i| s.values[i].abs()).fold(0.0f64, f64::max))
                .collect(),
        );
    }
    Ok(SupPool {
        rs,
        sups,
        location: Location::Origin,
        h,
        grid_n,
        replicates,
        seed,
    })
}

/// Pool over Euclidean balls `B(center, r)`; the whole family must stay in
/// `(0,1)^nu`, away from the axes.
pub fn interior_pool(
    h: HurstParam,
    center: &Point,
    rs: &[f64],
    grid_n: usize,
    replicates: usize,
    seed: u64,
) -> Result<SupPool, SmallBallError> {
    check_inputs(h, replicates)?;
    let mut rs = rs.to_vec();
    rs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let r_max = *rs.last().ok_or(SmallBallError::DegenerateRegion)?;
    let nu = center.dim();
    if center
        .coords()
        .iter()
        .any(|&c| c - r_max <= 0.0 || c + r_max > 1.0)
    {
        return Err(SmallBallError::BallLeavesDomain { r: r_max });
    }
    // Grid over the bounding cube of the largest ball.
    let mut points = Vec::new();
    let axis: Vec<Vec<f64>> = center
        .coords()
        .iter()
        .map(|&c| {
            (0..grid_n)
                .map(|i| c - r_max + 2.0 * r_max * i as f64 / (grid_n - 1) as f64)
                .collect()
        })
        .collect();
    let mut idx = vec![0usize; nu];
    'outer: loop {
        let coords: Vec<f64> = idx.iter().enumerate().map(|(a, &i)| axis[a][i]).collect();
        let p = Point::new(coords)?;
        if p.euclid_dist(center) <= r_max + 1e-12 {
            points.push(p);
        }
        let mut a = 0;
        loop {
            if a == nu {
                break 'outer;
            }
            idx[a] += 1;
            if idx[a] < grid_n {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
    if points.is_empty() {
        return Err(SmallBallError::DegenerateRegion);
    }
    let arc = Arc::new(points);
    let matrix = field::covariance_matrix(&arc, h)?;
    let factor = field::factorize(&matrix)?;
    let samples = field::sample_paths(&factor, &arc, None, h, replicates, seed);
    let mut sups = Vec::with_capacity(rs.len());
    for &r in &rs {
        let inside: Vec<usize> = arc
            .iter()
            .enumerate()
            .filter(|(_, p)| p.euclid_dist(center) <= r + 1e-12)
            .map(|(i, _)| i)
            .collect();
        if inside.is_empty() {
            return Err(SmallBallError::DegenerateRegion);
        }
        sups.push(
            samples
                .iter()
                .map(|s| inside.iter().map(|&i| s.values[i].abs()).fold(0.0f64, f64::max))
                .collect(),
        );
    }
    Ok(SupPool {
        rs,
        sups,
        location: Location::Interior(center.clone()),
        h,
        grid_n,
        replicates,
        seed,
    })
}

impl SupPool {
    /// Threshold the stored sups of region index `r_idx` at `epsilon`.
    pub fn estimate(&self, r_idx: usize, epsilon: f64) -> SmallBallEstimate {
        let sups = &self.sups[r_idx];
        let successes = sups.iter().filter(|&&s| s <= epsilon).count() as u64;
        let n = sups.len() as u64;
        let p_hat = successes as f64 / n as f64;
        let (ci_low, ci_high) = wilson_interval(successes, n);
        let informative = p_hat > 0.0 && p_hat < 1.0 && successes >= 10;
        SmallBallEstimate {
            r: self.rs[r_idx],
            epsilon,
            location: self.location.clone(),
            p_hat,
            ci_low,
            ci_high,
            replicates: sups.len(),
            grid_n: self.grid_n,
            informative,
        }
    }

    /// Epsilon thresholds at empirical quantiles of the stored sups, which
    /// keeps every estimate informative by construction.
    pub fn quantile_epsilons(&self, r_idx: usize, quantiles: &[f64]) -> Vec<f64> {
        let mut sorted = self.sups[r_idx].clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        quantiles
            .iter()
            .map(|&q| {
                let k = ((sorted.len() as f64 - 1.0) * q).round() as usize;
                sorted[k]
            })
            .collect()
    }
}

/// One-shot estimate at a single `(r, epsilon)` operating point.
#[allow(clippy::too_many_arguments)]
pub fn estimate_small_ball(
    h: HurstParam,
    nu: usize,
    r: f64,
    epsilon: f64,
    location: Location,
    grid_n: usize,
    replicates: usize,
    seed: u64,
) -> Result<SmallBallEstimate, SmallBallError> {
    let pool = match &location {
        Location::Origin => origin_pool(h, nu, &[r], grid_n, replicates, seed)?,
        Location::Interior(c) => interior_pool(h, c, &[r], grid_n, replicates, seed)?,
    };
    Ok(pool.estimate(0, epsilon))
}

fn informative_points<F>(
    estimates: &[SmallBallEstimate],
    x: F,
) -> Vec<(f64, f64)>
where
    F: Fn(&SmallBallEstimate) -> f64,
{
    estimates
        .iter()
        .filter(|e| e.informative)
        .map(|e| (x(e), -e.p_hat.ln()))
        .collect()
}

/// Slope of `log(-log p_hat)` against `log(1/eps)` at fixed `r`.
///
/// `min_decades` is the required span of the informative epsilon window; the
/// steep `nu/h` exponents compress the feasible window, so callers pick the
/// span their regime admits (0.5 decades in the shallow regimes).
pub fn fit_eps_exponent(
    estimates: &[SmallBallEstimate],
    min_decades: f64,
) -> Result<ScalingFit, SmallBallError> {
    let pts = informative_points(estimates, |e| 1.0 / e.epsilon);
    if pts.len() < 5 {
        return Err(SmallBallError::TooFewInformative { need: 5, got: pts.len() });
    }
    let (slope, stderr) = stats::log_log_slope(&pts, 5, min_decades)?;
    Ok(ScalingFit {
        axis: FitAxis::Epsilon,
        slope,
        stderr,
        points: pts.iter().map(|p| (p.0.ln(), p.1.ln())).collect(),
    })
}

/// Slope of `log(-log p_hat)` against `log r` at fixed `eps`.
pub fn fit_r_exponent(estimates: &[SmallBallEstimate]) -> Result<ScalingFit, SmallBallError> {
    let pts = informative_points(estimates, |e| e.r);
    if pts.len() < 4 {
        return Err(SmallBallError::TooFewInformative { need: 4, got: pts.len() });
    }
    let (slope, stderr) = stats::log_log_slope(&pts, 4, 0.0)?;
    Ok(ScalingFit {
        axis: FitAxis::Radius,
        slope,
        stderr,
        points: pts.iter().map(|p| (p.0.ln(), p.1.ln())).collect(),
    })
}
