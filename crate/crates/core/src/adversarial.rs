//! Deterministic outcome sequences that break naive ways of enforcing
//! non-crossing quantiles. All scenarios use a zero base forecast.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::QuantileLevels;
use crate::trackers::SeriesPoint;

/// Names of the available scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    SortedQtCycle,
    PgdCycle,
    MultiqtSortDivergence,
    EpsSeparatedDivergence,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::SortedQtCycle,
        ScenarioKind::PgdCycle,
        ScenarioKind::MultiqtSortDivergence,
        ScenarioKind::EpsSeparatedDivergence,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::SortedQtCycle => "sorted_qt_cycle",
            ScenarioKind::PgdCycle => "pgd_cycle",
            ScenarioKind::MultiqtSortDivergence => "multiqt_sort_divergence",
            ScenarioKind::EpsSeparatedDivergence => "eps_separated_divergence",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            Error::invalid(format!("unknown scenario `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

/// A generated outcome sequence with its level grid and residual bound.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSeries {
    pub levels: QuantileLevels,
    pub observations: Vec<f64>,
    /// `max_t |y_t|`; with a zero base this bounds every residual.
    pub residual_bound: f64,
    /// Offsets every tracker should start from.
    pub initial_offsets: Vec<f64>,
}

impl GeneratedSeries {
    fn new(levels: QuantileLevels, observations: Vec<f64>, initial_offsets: Vec<f64>) -> Self {
        let residual_bound = observations.iter().fold(0.0, |m: f64, y| m.max(y.abs()));
        Self { levels, observations, residual_bound, initial_offsets }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// The series with a zero base forecast at every step.
    pub fn to_series(&self) -> Vec<SeriesPoint> {
        let zero = vec![0.0; self.levels.len()];
        self.observations.iter().map(|&y| SeriesPoint::new(zero.clone(), y)).collect()
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("eta must be finite and > 0, got {eta}")))
    }
}

fn check_pair(alpha: f64, beta: f64) -> Result<QuantileLevels> {
    if alpha.partial_cmp(&beta) != Some(std::cmp::Ordering::Less) {
        return Err(Error::invalid(format!("need alpha < beta, got {alpha} and {beta}")));
    }
    QuantileLevels::new(vec![alpha, beta])
}

/// Per-cycle outcomes for levels 0.5 and 0.75 at unit step size, starting from
/// zero offsets. Entries 1, 2, 3, 7 and 8 are interval midpoints. Entries 4-6
/// fall below both quantiles, where the interval is unbounded.
const SORTED_QT_CYCLE: [f64; 8] = [0.6, 0.625, 0.75, -0.1, -0.2, -0.7, -0.25, -0.125];

/// Eight-step cycle on levels {0.5, 0.75}. Independent trackers see coverages
/// 1/2 and 3/4 and return to zero every cycle, but sorting their outputs
/// yields 3/8 and 7/8.
pub fn gen_sorted_qt_cycle(eta: f64, repetitions: usize) -> Result<GeneratedSeries> {
    check_eta(eta)?;
    if repetitions == 0 {
        return Err(Error::invalid("repetitions must be at least 1"));
    }
    let cycle: Vec<f64> = SORTED_QT_CYCLE.iter().map(|v| v * eta).collect();
    let ys = cycle.iter().copied().cycle().take(8 * repetitions).collect();
    Ok(GeneratedSeries::new(QuantileLevels::new(vec![0.5, 0.75])?, ys, vec![0.0, 0.0]))
}

/// Two-step cycle on levels with `alpha + beta = 0.5`. From tied offsets at
/// `q0` the first outcome lies above both quantiles; the second falls between
/// the separated quantiles, after which the projected step pools back to `q0`.
pub fn gen_pgd_cycle(alpha: f64, beta: f64, eta: f64, q0: f64, repetitions: usize) -> Result<GeneratedSeries> {
    let levels = check_pair(alpha, beta)?;
    check_eta(eta)?;
    if ((alpha + beta) - 0.5).abs() > 1e-12 {
        return Err(Error::invalid(format!("levels must sum to 0.5, got {alpha} + {beta}")));
    }
    if !q0.is_finite() {
        return Err(Error::NonFinite { index: 0 });
    }
    if repetitions == 0 {
        return Err(Error::invalid("repetitions must be at least 1"));
    }
    let y1 = q0 + eta;
    // Midpoint of (q0 + eta*alpha, q0 + eta*beta].
    let y2 = q0 + eta * (alpha + beta) / 2.0;
    let ys = [y1, y2].into_iter().cycle().take(2 * repetitions).collect();
    Ok(GeneratedSeries::new(levels, ys, vec![q0, q0]))
}

fn two_level_divergence(
    alpha: f64,
    beta: f64,
    eta: f64,
    horizon: usize,
    reveal: impl Fn(f64, f64) -> (f64, f64),
) -> Vec<f64> {
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    let mut ys = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let (qa, qb) = reveal(lo, hi);
        let y = if qb > qa { 0.5 * (qa + qb) } else { qb + eta };
        let ca = f64::from(u8::from(y <= qa));
        let cb = f64::from(u8::from(y <= qb));
        lo -= eta * (ca - alpha);
        hi -= eta * (cb - beta);
        ys.push(y);
    }
    ys
}

/// Outcomes that keep landing between the two sorted quantiles of a tracker
/// that sorts instead of projecting, so its hidden offsets cross and then
/// separate without bound. `alpha + beta = 1` keeps the outcomes bounded.
pub fn gen_multiqt_sort_divergence(alpha: f64, beta: f64, eta: f64, horizon: usize) -> Result<GeneratedSeries> {
    let levels = check_pair(alpha, beta)?;
    check_eta(eta)?;
    let ys = two_level_divergence(alpha, beta, eta, horizon, |a, b| (a.min(b), a.max(b)));
    Ok(GeneratedSeries::new(levels, ys, vec![0.0, 0.0]))
}

/// Outcomes placed inside the gap of a tracker that projects onto quantiles
/// at least `eps` apart. The lower quantile never covers and the upper always
/// does.
pub fn gen_eps_separated_divergence(
    alpha: f64,
    beta: f64,
    eta: f64,
    eps: f64,
    horizon: usize,
) -> Result<GeneratedSeries> {
    let levels = check_pair(alpha, beta)?;
    check_eta(eta)?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("eps must be finite and > 0, got {eps}")));
    }
    let ys = two_level_divergence(alpha, beta, eta, horizon, |a, b| {
        if b - a >= eps {
            (a, b)
        } else {
            let m = 0.5 * (a + b - eps);
            (m, m + eps)
        }
    });
    Ok(GeneratedSeries::new(levels, ys, vec![0.0, 0.0]))
}
