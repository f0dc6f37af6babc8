//! Quantile (pinball) losses, the multi-level tracking gradient and
//! interval scores.
//!
//! Coverage is always the closed event `y <= q`, so an observation sitting
//! exactly on a forecast counts as covered.

use serde::Serialize;

use crate::error::{check_finite, check_len, Error, Result};

/// Tolerance used when looking a level up by value.
pub const LEVEL_MATCH_TOL: f64 = 1e-12;

/// A validated, strictly increasing set of quantile levels in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct QuantileLevels(Vec<f64>);

impl QuantileLevels {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::invalid("at least one quantile level is required"));
        }
        for &a in &levels {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::LevelOutOfRange(a));
            }
        }
        if let Some(i) = levels.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "quantile levels must be strictly increasing ({} then {})",
                levels[i],
                levels[i + 1]
            )));
        }
        Ok(Self(levels))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().copied()
    }

    /// Smallest distance from any level to the edge of [0, 1].
    pub fn edge_distance(&self) -> f64 {
        self.0.iter().map(|&a| a.min(1.0 - a)).fold(f64::INFINITY, f64::min)
    }

    /// Index of `level`, matched within [`LEVEL_MATCH_TOL`].
    pub fn position(&self, level: f64) -> Option<usize> {
        self.0.iter().position(|&a| (a - level).abs() <= LEVEL_MATCH_TOL)
    }

    pub(crate) fn require(&self, level: f64) -> Result<usize> {
        self.position(level).ok_or(Error::MissingLevel(level))
    }
}

fn check_level(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::LevelOutOfRange(alpha))
    }
}

#[inline]
pub(crate) fn pinball(alpha: f64, q: f64, y: f64) -> f64 {
    let r = y - q;
    if r >= 0.0 {
        alpha * r
    } else {
        (1.0 - alpha) * -r
    }
}

/// Quantile loss of forecast `q` at level `alpha` for outcome `y`.
pub fn quantile_loss(alpha: f64, q: f64, y: f64) -> Result<f64> {
    check_level(alpha)?;
    Ok(pinball(alpha, q, y))
}

/// Sum of per-level quantile losses.
pub fn aggregated_quantile_loss(levels: &QuantileLevels, q: &[f64], y: f64) -> Result<f64> {
    check_len(levels.len(), q.len())?;
    Ok(aggregated_unchecked(levels.as_slice(), q, y))
}

pub(crate) fn aggregated_unchecked(levels: &[f64], q: &[f64], y: f64) -> f64 {
    levels.iter().zip(q).map(|(&a, &qi)| pinball(a, qi, y)).sum()
}

/// Coverage indicators `1{y <= q_i}`.
pub fn coverage_indicators(q: &[f64], y: f64) -> Vec<bool> {
    q.iter().map(|&qi| y <= qi).collect()
}

/// `cov_i - alpha_i` for the forecast vector `q`.
pub(crate) fn gradient_at_forecast(levels: &[f64], q: &[f64], y: f64) -> Vec<f64> {
    levels.iter().zip(q).map(|(&a, &qi)| if y <= qi { 1.0 - a } else { -a }).collect()
}

/// Subgradient of the summed quantile loss with respect to the offsets
/// `theta`, evaluated at forecasts `b + theta`.
pub fn multiqt_gradient(levels: &QuantileLevels, b: &[f64], theta: &[f64], y: f64) -> Result<Vec<f64>> {
    check_len(levels.len(), b.len())?;
    check_len(levels.len(), theta.len())?;
    let q: Vec<f64> = b.iter().zip(theta).map(|(bi, ti)| bi + ti).collect();
    Ok(gradient_at_forecast(levels.as_slice(), &q, y))
}

/// Radius beyond which the summed quantile loss is restorative, for residuals bounded by `r`.
pub fn restorative_radius(levels: &QuantileLevels, r: f64) -> f64 {
    let n = levels.len() as f64;
    r * n.powf(1.5) / levels.edge_distance()
}

/// Lower bound on `<theta, g(theta)>` for `|theta| = norm` and residuals bounded by `r`.
pub fn restorative_floor(levels: &QuantileLevels, r: f64, norm: f64) -> f64 {
    let n = levels.len() as f64;
    norm * levels.edge_distance() / n.sqrt() - r * n
}

fn distance_to_interval(y: f64, lo: f64, hi: f64) -> f64 {
    (lo - y).max(y - hi).max(0.0)
}

/// Interval score of `[lo, hi]` at miscoverage `beta`.
pub fn interval_score(beta: f64, lo: f64, hi: f64, y: f64) -> Result<f64> {
    check_level(beta)?;
    check_finite(&[lo, hi, y])?;
    if lo > hi {
        return Err(Error::invalid(format!("interval lower end {lo} exceeds upper end {hi}")));
    }
    Ok((hi - lo) + (2.0 / beta) * distance_to_interval(y, lo, hi))
}

/// Weighted interval score `sum_beta beta * IS_beta` for central intervals
/// built from the levels `beta/2` and `1 - beta/2` of `q`.
pub fn weighted_interval_score(betas: &[f64], levels: &QuantileLevels, q: &[f64], y: f64) -> Result<f64> {
    check_len(levels.len(), q.len())?;
    if let Some(index) = crate::isotonic::first_crossing(q) {
        return Err(Error::Crossing { index });
    }
    let mut total = 0.0;
    for &beta in betas {
        check_level(beta)?;
        let lo = q[levels.require(beta / 2.0)?];
        let hi = q[levels.require(1.0 - beta / 2.0)?];
        total += beta * interval_score(beta, lo, hi, y)?;
    }
    Ok(total)
}
