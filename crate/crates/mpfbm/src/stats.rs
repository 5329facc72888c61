//! Small statistical helpers shared across modules: least-squares slopes on
//! log-log points and Wilson score intervals for binomial proportions.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("x span {got:.3} decades is below the required {need:.3}")]
    InsufficientSpan { need: f64, got: f64 },
}

/// Ordinary least-squares fit `y = a + b x`; returns `(slope, intercept, stderr_of_slope)`.
pub fn ols(points: &[(f64, f64)]) -> Result<(f64, f64, f64), StatsError> {
    let n = points.len();
    if n < 2 {
        return Err(StatsError::TooFewPoints { need: 2, got: n });
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if n > 2 {
        let ss_res: f64 = points
            .iter()
            .map(|p| {
                let r = p.1 - (intercept + slope * p.0);
                r * r
            })
            .sum();
        (ss_res / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok((slope, intercept, stderr))
}

/// OLS slope requiring `min_points` points spanning at least `min_decades`
/// decades of x (x given in natural scale, positive).
pub fn log_log_slope(
    xy: &[(f64, f64)],
    min_points: usize,
    min_decades: f64,
) -> Result<(f64, f64), StatsError> {
    if xy.len() < min_points {
        return Err(StatsError::TooFewPoints { need: min_points, got: xy.len() });
    }
    let logs: Vec<(f64, f64)> = xy.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let span = logs
        .iter()
        .map(|p| p.0)
        .fold(f64::NEG_INFINITY, f64::max)
        - logs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let decades = span / std::f64::consts::LN_10;
    if decades < min_decades - 1e-9 {
        return Err(StatsError::InsufficientSpan { need: min_decades, got: decades });
    }
    let (slope, _, stderr) = ols(&logs)?;
    Ok((slope, stderr))
}

/// Wilson 95% score interval for `successes / trials`.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959963984540054_f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_power_law_slope() {
        // N(eps) = eps^{-3}
        let pts: Vec<(f64, f64)> = (1..=10)
            .map(|i| {
                let eps = 0.05 * i as f64;
                (1.0 / eps, eps.powi(-3))
            })
            .collect();
        let (slope, _) = log_log_slope(&pts, 5, 1.0).unwrap();
        assert_abs_diff_eq!(slope, 3.0, epsilon = 1e-10);
    }

    #[test]
    fn span_enforced() {
        let pts = vec![(1.0, 1.0), (1.1, 1.2), (1.2, 1.4), (1.3, 1.6), (1.4, 1.8)];
        assert!(matches!(
            log_log_slope(&pts, 5, 1.0),
            Err(StatsError::InsufficientSpan { .. })
        ));
    }

    #[test]
    fn wilson_contains_p_hat() {
        for &(s, n) in &[(0u64, 100u64), (1, 100), (50, 100), (100, 100), (3, 4000)] {
            let (lo, hi) = wilson_interval(s, n);
            let p = s as f64 / n as f64;
            assert!(lo <= p + 1e-12 && p <= hi + 1e-12, "({s},{n}) -> [{lo},{hi}]");
            assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        }
    }
}
