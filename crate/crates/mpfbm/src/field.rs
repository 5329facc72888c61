//! Exact Gaussian simulation of the mpfBm on finite point sets.
//!
//! The kernel is not stationary, so circulant/FFT embeddings do not apply;
//! simulation is by dense covariance factorization, with a point budget that
//! keeps the O(n^3) cost tractable. The origin has variance exactly zero, and
//! its row/column is pinned to zero before factorization so it cannot consume
//! jitter.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{self, HurstParam, Point};
use crate::rng::stream_rng;

pub const DEFAULT_POINT_BUDGET: usize = 4096;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("grid of {got} points exceeds the budget of {budget}")]
    BudgetExceeded { got: usize, budget: usize },
    #[error("matrix is not positive semi-definite (failed at maximal jitter {max_jitter:.3e})")]
    NotPositiveSemiDefinite { max_jitter: f64 },
    #[error("sub-corner {sub_corner} exceeds grid corner {corner}")]
    SubCornerTooLarge { sub_corner: f64, corner: f64 },
    #[error("no grid point falls inside the requested region")]
    EmptyRegion,
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
}

/// A uniform grid on `[0,corner]^nu`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub nu: usize,
    pub n: usize,
    pub corner: f64,
    pub include_origin: bool,
}

impl GridSpec {
    pub fn new(nu: usize, n: usize, corner: f64, include_origin: bool) -> Result<Self, FieldError> {
        let spec = Self { nu, n, corner, include_origin };
        let total = spec.total_points();
        if total > DEFAULT_POINT_BUDGET {
            return Err(FieldError::BudgetExceeded { got: total, budget: DEFAULT_POINT_BUDGET });
        }
        Ok(spec)
    }

    pub fn total_points(&self) -> usize {
        self.n.pow(self.nu as u32)
    }

    /// Axis coordinates: `i*corner/(n-1)` with the origin, `i*corner/n`
    /// (i = 1..n) without it.
    pub fn axis(&self) -> Vec<f64> {
        if self.include_origin {
            (0..self.n)
                .map(|i| i as f64 * self.corner / (self.n - 1) as f64)
                .collect()
        } else {
            (1..=self.n)
                .map(|i| i as f64 * self.corner / self.n as f64)
                .collect()
        }
    }

    /// Grid points in lexicographic order (first axis fastest).
    pub fn points(&self) -> Vec<Point> {
        let axis = self.axis();
        let mut out = Vec::with_capacity(self.total_points());
        let mut idx = vec![0usize; self.nu];
        loop {
            let coords: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
            out.push(Point::new(coords).expect("grid coords in [0,1]"));
            let mut a = 0;
            loop {
                if a == self.nu {
                    return out;
                }
                idx[a] += 1;
                if idx[a] < self.n {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
        }
    }
}

/// Covariance matrix of the kernel over an arbitrary point set.
pub fn covariance_matrix(points: &[Point], h: HurstParam) -> Result<DMatrix<f64>, FieldError> {
    let n = points.len();
    if n > DEFAULT_POINT_BUDGET {
        return Err(FieldError::BudgetExceeded { got: n, budget: DEFAULT_POINT_BUDGET });
    }
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = geometry::covariance(&points[i], &points[j], h)?;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Lower-triangular factor with the jitter actually consumed and the indices
/// of zero-variance rows that were pinned.
#[derive(Debug, Clone)]
pub struct Factor {
    l: DMatrix<f64>,
    pub jitter: f64,
    pub pinned: Vec<usize>,
}

impl Factor {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }
}

/// Cholesky factorization with a geometric jitter ladder.
///
/// Jitter escalates through `{0, 1e-12, 1e-11, ..., 1e-8} * trace/n`. Rows
/// with zero diagonal (the origin) are removed first and re-embedded as zero
/// rows of `L`. Failure at maximal jitter is the expected signal for
/// `h > 1/2` probes.
pub fn factorize(matrix: &DMatrix<f64>) -> Result<Factor, FieldError> {
    let n = matrix.nrows();
    let scale = matrix.trace() / n as f64;
    let pinned: Vec<usize> = (0..n).filter(|&i| matrix[(i, i)] == 0.0).collect();
    let keep: Vec<usize> = (0..n).filter(|i| !pinned.contains(i)).collect();
    let k = keep.len();
    let mut sub = DMatrix::zeros(k, k);
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            sub[(a, b)] = matrix[(i, j)];
        }
    }
    let ladder: [f64; 6] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8];
    for &rel in &ladder {
        let jitter = rel * scale;
        let attempt = &sub + DMatrix::identity(k, k) * jitter;
        if let Some(chol) = nalgebra::Cholesky::new(attempt) {
            let small = chol.l();
            let mut l = DMatrix::zeros(n, n);
            for (a, &i) in keep.iter().enumerate() {
                for (b, &j) in keep.iter().enumerate() {
                    l[(i, j)] = small[(a, b)];
                }
            }
            return Ok(Factor { l, jitter, pinned });
        }
    }
    Err(FieldError::NotPositiveSemiDefinite { max_jitter: 1e-8 * scale })
}

/// One simulated realization on a point set.
#[derive(Debug, Clone)]
pub struct FieldSample {
    pub points: Arc<Vec<Point>>,
    pub grid: Option<GridSpec>,
    pub h: HurstParam,
    pub values: Vec<f64>,
    pub seed: u64,
    pub replicate_index: u64,
}

/// Draws `count` independent replicates. Replicate `i` uses the stream
/// `split(seed, i)`, so output is bit-reproducible and independent of the
/// worker count.
pub fn sample_paths(
    factor: &Factor,
    points: &Arc<Vec<Point>>,
    grid: Option<&GridSpec>,
    h: HurstParam,
    count: usize,
    seed: u64,
) -> Vec<FieldSample> {
    (0..count as u64)
        .into_par_iter()
        .map(|replicate| {
            let mut rng = stream_rng(seed, replicate);
            let z: Vec<f64> = (0..factor.dim())
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let l = factor.lower();
            let mut values = vec![0.0f64; factor.dim()];
            for (i, v) in values.iter_mut().enumerate() {
                let mut acc = 0.0;
                for j in 0..=i {
                    acc += l[(i, j)] * z[j];
                }
                *v = acc;
            }
            FieldSample {
                points: Arc::clone(points),
                grid: grid.cloned(),
                h,
                values,
                seed,
                replicate_index: replicate,
            }
        })
        .collect()
}

/// Convenience: build, factorize and sample a grid in one call.
pub fn simulate_grid(
    grid: &GridSpec,
    h: HurstParam,
    count: usize,
    seed: u64,
) -> Result<(Factor, Vec<FieldSample>), FieldError> {
    let points = Arc::new(grid.points());
    let matrix = covariance_matrix(&points, h)?;
    let factor = factorize(&matrix)?;
    let samples = sample_paths(&factor, &points, Some(grid), h, count, seed);
    Ok((factor, samples))
}

/// `max |value|` over points inside `[0,sub_corner]^nu`.
pub fn sup_norm(sample: &FieldSample, sub_corner: f64) -> Result<f64, FieldError> {
    if let Some(grid) = &sample.grid {
        if sub_corner > grid.corner + 1e-12 {
            return Err(FieldError::SubCornerTooLarge { sub_corner, corner: grid.corner });
        }
    }
    let mut sup = f64::NEG_INFINITY;
    let mut seen = false;
    for (p, &v) in sample.points.iter().zip(&sample.values) {
        if p.coords().iter().all(|&c| c <= sub_corner + 1e-15) {
            sup = sup.max(v.abs());
            seen = true;
        }
    }
    if !seen {
        return Err(FieldError::EmptyRegion);
    }
    Ok(sup)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(matrix: &DMatrix<f64>) -> f64 {
    let eig = nalgebra::SymmetricEigen::new(matrix.clone());
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// CSV serialization: `# mpfbm v1, nu, h, n, corner, seed, replicate` header
/// followed by `index,coord_1..coord_nu,value` rows.
pub fn sample_to_csv(sample: &FieldSample) -> String {
    let (n, corner) = sample
        .grid
        .as_ref()
        .map(|g| (g.n, g.corner))
        .unwrap_or((sample.points.len(), f64::NAN));
    let nu = sample.points.first().map(|p| p.dim()).unwrap_or(0);
    let mut out = format!(
        "# mpfbm v1, {}, {}, {}, {}, {}, {}\n",
        nu,
        sample.h.h(),
        n,
        corner,
        sample.seed,
        sample.replicate_index
    );
    let coord_cols: Vec<String> = (1..=nu).map(|i| format!("coord_{i}")).collect();
    out.push_str(&format!("index,{},value\n", coord_cols.join(",")));
    for (i, (p, v)) in sample.points.iter().zip(&sample.values).enumerate() {
        let coords: Vec<String> = p.coords().iter().map(|c| format!("{c}")).collect();
        out.push_str(&format!("{i},{},{v}\n", coords.join(",")));
    }
    out
}
