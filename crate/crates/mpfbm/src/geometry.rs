//! Rectangle geometry and the mpfBm covariance kernel.
//!
//! Everything here is a pure function of its inputs. The central objects are
//! the volume of the rectangle `[0,t]`, the Lebesgue measure of the symmetric
//! difference `[0,s] △ [0,t]`, the covariance
//! `k(s,t) = (vol(s)^{2h} + vol(t)^{2h} - delta(s,t)^{2h}) / 2`,
//! and the induced distance `d_h(s,t) = delta(s,t)^h`.
//!
//! `d_h` is a pseudo-metric on points: `delta(s,t) = 0` is possible with
//! `s != t` when a coordinate is zero (the rectangles then coincide up to a
//! Lebesgue-null set). It is a genuine metric on rectangles.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("coordinate {value} at index {index} is outside [0,1]")]
    CoordinateOutOfRange { index: usize, value: f64 },
    #[error("point has dimension {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("point must have dimension >= 1")]
    EmptyPoint,
    #[error("hurst parameter {0} is outside (0,1]")]
    InvalidHurst(f64),
    #[error("hurst parameter {0} > 1/2 is only valid for the psd-probe path")]
    HurstAboveHalf(f64),
}

/// A location in `[0,1]^nu`, identified with the rectangle `[0,t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    coords: Vec<f64>,
}

impl Point {
    /// Coordinates are validated against `[0,1]`; out-of-range values are
    /// rejected rather than clamped.
    pub fn new(coords: Vec<f64>) -> Result<Self, GeometryError> {
        if coords.is_empty() {
            return Err(GeometryError::EmptyPoint);
        }
        for (index, &value) in coords.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) || value.is_nan() {
                return Err(GeometryError::CoordinateOutOfRange { index, value });
            }
        }
        Ok(Self { coords })
    }

    pub fn origin(nu: usize) -> Self {
        Self { coords: vec![0.0; nu] }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn euclid_dist(&self, other: &Point) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    fn check_dim(&self, other: &Point) -> Result<(), GeometryError> {
        if self.dim() != other.dim() {
            return Err(GeometryError::DimensionMismatch {
                got: other.dim(),
                expected: self.dim(),
            });
        }
        Ok(())
    }
}

/// Which side of the `h = 1/2` boundary a parameter sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HurstRegime {
    /// `h < 1/2`: the fractional regime where all results of interest hold.
    Fractional,
    /// `h = 1/2`: the kernel degenerates to the Brownian-sheet min kernel.
    Sheet,
    /// `h > 1/2`: the kernel is no longer positive semi-definite; accepted
    /// only by the PSD-probe diagnostics.
    NonPsdProbe,
}

/// Hurst parameter in `(0,1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HurstParam {
    h: f64,
}

impl HurstParam {
    pub fn new(h: f64) -> Result<Self, GeometryError> {
        if !(h > 0.0 && h <= 1.0) {
            return Err(GeometryError::InvalidHurst(h));
        }
        Ok(Self { h })
    }

    /// Rejects `h > 1/2`; simulation and small-ball modules use this.
    pub fn new_simulable(h: f64) -> Result<Self, GeometryError> {
        let p = Self::new(h)?;
        if h > 0.5 {
            return Err(GeometryError::HurstAboveHalf(h));
        }
        Ok(p)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn regime(&self) -> HurstRegime {
        if self.h < 0.5 {
            HurstRegime::Fractional
        } else if self.h == 0.5 {
            HurstRegime::Sheet
        } else {
            HurstRegime::NonPsdProbe
        }
    }
}

/// `x^p` as `exp(p log x)` with the exact branch `0^p = 0`, avoiding NaN at
/// degenerate rectangles.
#[inline]
pub fn pow_measure(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        (p * x.ln()).exp()
    }
}

/// Volume of the rectangle `[0,t]`.
pub fn rect_volume(t: &Point) -> f64 {
    t.coords().iter().product()
}

/// Lebesgue measure of `[0,s] △ [0,t]`:
/// `prod s_i + prod t_i - 2 prod min(s_i,t_i)`.
pub fn sym_diff_measure(s: &Point, t: &Point) -> Result<f64, GeometryError> {
    s.check_dim(t)?;
    let vs = rect_volume(s);
    let vt = rect_volume(t);
    let vmin: f64 = s
        .coords()
        .iter()
        .zip(t.coords())
        .map(|(a, b)| a.min(*b))
        .product();
    // Clamp round-off: the measure is nonnegative by construction.
    Ok((vs + vt - 2.0 * vmin).max(0.0))
}

/// The mpfBm covariance kernel.
pub fn covariance(s: &Point, t: &Point, h: HurstParam) -> Result<f64, GeometryError> {
    let p = 2.0 * h.h();
    let delta = sym_diff_measure(s, t)?;
    Ok(0.5 * (pow_measure(rect_volume(s), p) + pow_measure(rect_volume(t), p) - pow_measure(delta, p)))
}

/// `d_h(s,t) = delta(s,t)^h`; `h = 1` gives `d_lambda`.
pub fn dist_h(s: &Point, t: &Point, h: HurstParam) -> Result<f64, GeometryError> {
    Ok(pow_measure(sym_diff_measure(s, t)?, h.h()))
}
