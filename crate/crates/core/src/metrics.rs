//! Post-hoc evaluation of completed runs and closed-form guarantee values.

use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::isotonic::{first_crossing, is_ordered};
use crate::losses::{aggregated_unchecked, QuantileLevels};
use crate::trackers::{LearningRate, StepRecord, VariantKind, VariantSpec};

fn nonempty(records: &[StepRecord]) -> Result<()> {
    if records.is_empty() {
        Err(Error::EmptyRun)
    } else {
        Ok(())
    }
}

/// Fraction of steps where the forecast at `level_index` covered the outcome.
pub fn empirical_coverage(records: &[StepRecord], level_index: usize) -> Result<f64> {
    nonempty(records)?;
    let mut hits = 0usize;
    for r in records {
        let c = r
            .covered
            .get(level_index)
            .ok_or(Error::LengthMismatch { expected: level_index + 1, got: r.covered.len() })?;
        hits += usize::from(*c);
    }
    Ok(hits as f64 / records.len() as f64)
}

/// Empirical coverage of every level.
pub fn coverages(records: &[StepRecord], levels: &QuantileLevels) -> Result<Vec<f64>> {
    (0..levels.len()).map(|i| empirical_coverage(records, i)).collect()
}

/// Per-level `coverage - level`.
pub fn coverage_gaps(records: &[StepRecord], levels: &QuantileLevels) -> Result<Vec<f64>> {
    Ok(coverages(records, levels)?.iter().zip(levels.iter()).map(|(c, a)| c - a).collect())
}

/// Mean absolute coverage gap across levels.
pub fn calibration_error(records: &[StepRecord], levels: &QuantileLevels) -> Result<f64> {
    let gaps = coverage_gaps(records, levels)?;
    Ok(gaps.iter().map(|g| g.abs()).sum::<f64>() / gaps.len() as f64)
}

/// Time-averaged summed quantile loss divided by the number of levels.
pub fn average_quantile_loss(records: &[StepRecord], levels: &QuantileLevels) -> Result<f64> {
    nonempty(records)?;
    let total: f64 = records.iter().map(|r| r.loss).sum();
    Ok(total / (records.len() as f64 * levels.len() as f64))
}

/// Fraction of vectors that contain at least one crossed pair.
pub fn crossing_fraction<V: AsRef<[f64]>>(vectors: &[V]) -> f64 {
    if vectors.is_empty() {
        return 0.0;
    }
    let crossed = vectors.iter().filter(|v| first_crossing(v.as_ref()).is_some()).count();
    crossed as f64 / vectors.len() as f64
}

/// `|| mean_t g_t ||_2` over the recorded gradients at the issued forecasts.
pub fn average_gradient_norm(records: &[StepRecord]) -> Result<f64> {
    nonempty(records)?;
    let n = records[0].gradient.len();
    let mut sum = vec![0.0; n];
    for r in records {
        check_len(n, r.gradient.len())?;
        for (s, g) in sum.iter_mut().zip(&r.gradient) {
            *s += g;
        }
    }
    let t = records.len() as f64;
    Ok(sum.iter().map(|s| (s / t) * (s / t)).sum::<f64>().sqrt())
}

/// Largest `|y_t - b_t^a|` over the run.
pub fn residual_bound(records: &[StepRecord]) -> f64 {
    records.iter().flat_map(|r| r.base.iter().map(move |b| (r.y - b).abs())).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// PIT

/// A continuous CDF built from one ordered quantile forecast: linear between
/// adjacent quantiles, exponential tails whose density matches the nearest
/// non-flat segment.
#[derive(Debug, Clone)]
pub struct QuantileCdf<'a> {
    levels: &'a [f64],
    q: &'a [f64],
    lower_rate: f64,
    upper_rate: f64,
    degenerate: bool,
}

impl<'a> QuantileCdf<'a> {
    /// `q` must be ordered and match `levels` in length.
    pub fn new(levels: &'a QuantileLevels, q: &'a [f64]) -> Result<Self> {
        check_len(levels.len(), q.len())?;
        if let Some(index) = first_crossing(q) {
            return Err(Error::Crossing { index });
        }
        let a = levels.as_slice();
        let m = a.len();
        let density = |i: usize| (a[i + 1] - a[i]) / (q[i + 1] - q[i]);
        let first = (0..m.saturating_sub(1)).find(|&i| q[i + 1] != q[i]);
        let last = (0..m.saturating_sub(1)).rev().find(|&i| q[i + 1] != q[i]);
        let (lower_rate, upper_rate, degenerate) = match (first, last) {
            (Some(f), Some(l)) => (density(f) / a[0], density(l) / (1.0 - a[m - 1]), false),
            // Every quantile tied: treat as a point mass with unit tail rates.
            _ => (1.0, 1.0, true),
        };
        Ok(Self { levels: a, q, lower_rate, upper_rate, degenerate })
    }

    /// True when all quantiles coincide and the unit-rate fallback tails are in use.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let (a, q) = (self.levels, self.q);
        let m = a.len();
        if y < q[0] {
            return a[0] * (self.lower_rate * (y - q[0])).exp();
        }
        if y > q[m - 1] {
            return 1.0 - (1.0 - a[m - 1]) * (-self.upper_rate * (y - q[m - 1])).exp();
        }
        // Largest index whose quantile is <= y.
        let i = q.partition_point(|&v| v <= y) - 1;
        if q[i] == y || i + 1 == m {
            return a[i];
        }
        a[i] + (y - q[i]) / (q[i + 1] - q[i]) * (a[i + 1] - a[i])
    }
}

/// PIT values `F_t(y_t)` for a run whose forecasts are ordered.
pub fn pit_values(records: &[StepRecord], levels: &QuantileLevels) -> Result<(Vec<f64>, usize)> {
    let mut degenerate = 0usize;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let cdf = QuantileCdf::new(levels, &r.forecast)?;
        degenerate += usize::from(cdf.is_degenerate());
        out.push(cdf.cdf(r.y));
    }
    Ok((out, degenerate))
}

/// Normalised Shannon entropy of the `bins`-bin histogram of `values` on [0, 1].
/// A value of exactly 1 lands in the top bin.
pub fn histogram_entropy(values: &[f64], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::invalid(format!("need at least 2 bins, got {bins}")));
    }
    if values.is_empty() {
        return Err(Error::EmptyRun);
    }
    let mut counts = vec![0usize; bins];
    for &u in values {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::invalid(format!("PIT value {u} outside [0, 1]")));
        }
        let k = ((u * bins as f64) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let n = values.len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    Ok((h / (bins as f64).ln()).clamp(0.0, 1.0))
}

/// PIT entropy of a run, with the number of degenerate (all-tied) steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PitEntropy {
    pub value: f64,
    pub degenerate_steps: usize,
}

pub fn pit_entropy(records: &[StepRecord], levels: &QuantileLevels, bins: usize) -> Result<PitEntropy> {
    if levels.len() < 3 {
        return Err(Error::invalid("PIT entropy needs at least 3 quantile levels"));
    }
    let (values, degenerate_steps) = pit_values(records, levels)?;
    Ok(PitEntropy { value: histogram_entropy(&values, bins)?, degenerate_steps })
}

// ---------------------------------------------------------------------------
// Regret

/// Lower empirical quantile: the smallest `v` with `#{x <= v} >= p * n`.
pub fn lower_empirical_quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyRun);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = ((p * n as f64).ceil() as usize).clamp(1, n);
    Ok(sorted[k - 1])
}

/// Per-level lower empirical quantiles of the residuals `y_t - b_t^a`.
pub fn empirical_quantile_offsets(records: &[StepRecord], levels: &QuantileLevels) -> Result<Vec<f64>> {
    nonempty(records)?;
    levels
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let residuals: Vec<f64> = records.iter().map(|r| r.y - r.base[i]).collect();
            lower_empirical_quantile(&residuals, a)
        })
        .collect()
}

/// Comparator used for regret.
#[derive(Debug, Clone, PartialEq)]
pub enum Comparator {
    /// Per-level empirical residual quantiles, falling back to zero when infeasible.
    EmpiricalQuantile,
    Zero,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparatorKind {
    EmpiricalQuantile,
    Zero,
    Fixed,
}

/// Outcome of a regret computation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Regret {
    pub value: f64,
    pub comparator: Vec<f64>,
    pub comparator_kind: ComparatorKind,
    /// The comparator keeps `b_t + theta` ordered at every step.
    pub comparator_feasible: bool,
    /// The requested comparator was infeasible and zero was used instead.
    pub fell_back: bool,
}

fn feasible(records: &[StepRecord], theta: &[f64]) -> bool {
    records.iter().all(|r| {
        let q: Vec<f64> = r.base.iter().zip(theta).map(|(b, t)| b + t).collect();
        is_ordered(&q)
    })
}

/// Average loss of the played forecasts minus that of `b_t + comparator`.
pub fn compute_regret(records: &[StepRecord], levels: &QuantileLevels, comparator: &Comparator) -> Result<Regret> {
    nonempty(records)?;
    let n = levels.len();
    let (mut theta, mut kind) = match comparator {
        Comparator::EmpiricalQuantile => {
            (empirical_quantile_offsets(records, levels)?, ComparatorKind::EmpiricalQuantile)
        }
        Comparator::Zero => (vec![0.0; n], ComparatorKind::Zero),
        Comparator::Fixed(v) => {
            check_len(n, v.len())?;
            (v.clone(), ComparatorKind::Fixed)
        }
    };
    let mut comparator_feasible = feasible(records, &theta);
    let mut fell_back = false;
    if !comparator_feasible && kind != ComparatorKind::Zero {
        theta = vec![0.0; n];
        kind = ComparatorKind::Zero;
        comparator_feasible = feasible(records, &theta);
        fell_back = true;
    }
    let a = levels.as_slice();
    let t = records.len() as f64;
    let mut diff = 0.0;
    for r in records {
        let q: Vec<f64> = r.base.iter().zip(&theta).map(|(b, th)| b + th).collect();
        diff += r.loss - aggregated_unchecked(a, &q, r.y);
    }
    Ok(Regret { value: diff / t, comparator: theta, comparator_kind: kind, comparator_feasible, fell_back })
}

// ---------------------------------------------------------------------------
// Closed-form guarantees

fn check_bound_args(r: f64, eta: f64, t: usize) -> Result<()> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::invalid(format!("residual bound must be finite and >= 0, got {r}")));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be finite and > 0, got {eta}")));
    }
    if t == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    Ok(())
}

/// Per-level coverage-gap bound for the lazy isotonic tracker with feedback delay `delay`:
///
/// `2|h_1|/(eta T) + sqrt(|A|(2D+1)/T + 2R|A|^{3/2}/(eta d_A T)) + D sqrt(|A|)/T`.
pub fn delayed_calibration_bound(
    levels: &QuantileLevels,
    r: f64,
    eta: f64,
    t: usize,
    init_norm: f64,
    delay: usize,
) -> Result<f64> {
    check_bound_args(r, eta, t)?;
    let n = levels.len() as f64;
    let d = levels.edge_distance();
    let (t, dl) = (t as f64, delay as f64);
    Ok(2.0 * init_norm / (eta * t)
        + (n * (2.0 * dl + 1.0) / t + 2.0 * r * n.powf(1.5) / (eta * d * t)).sqrt()
        + dl * n.sqrt() / t)
}

/// [`delayed_calibration_bound`] without delay.
pub fn calibration_bound(levels: &QuantileLevels, r: f64, eta: f64, t: usize, init_norm: f64) -> Result<f64> {
    delayed_calibration_bound(levels, r, eta, t, init_norm, 0)
}

/// Average-regret bound `R^2|A|/(2 eta T) + 2 eta |A| (D + 1)` from a zero start.
pub fn delayed_regret_bound(levels: &QuantileLevels, r: f64, eta: f64, t: usize, delay: usize) -> Result<f64> {
    regret_bound_from(levels, r, eta, t, 0.0, delay)
}

/// [`delayed_regret_bound`] without delay.
pub fn regret_bound(levels: &QuantileLevels, r: f64, eta: f64, t: usize) -> Result<f64> {
    delayed_regret_bound(levels, r, eta, t, 0)
}

/// Regret bound for a non-zero start: `(R sqrt|A| + |h_1|)^2 / (2 eta T) + 2 eta |A| (D + 1)`.
pub fn regret_bound_from(
    levels: &QuantileLevels,
    r: f64,
    eta: f64,
    t: usize,
    init_norm: f64,
    delay: usize,
) -> Result<f64> {
    check_bound_args(r, eta, t)?;
    let n = levels.len() as f64;
    let radius = r * n.sqrt() + init_norm;
    Ok(radius * radius / (2.0 * eta * t as f64) + 2.0 * eta * n * (delay as f64 + 1.0))
}

/// Coverage-gap bound for the single-level tracker: `(2|theta_1| + R + eta)/(eta T)`.
pub fn tracker_coverage_bound(theta1: f64, r: f64, eta: f64, t: usize) -> Result<f64> {
    check_bound_args(r, eta, t)?;
    Ok((2.0 * theta1.abs() + r + eta) / (eta * t as f64))
}

/// Largest distance between hidden and played offsets when every base
/// forecast is a constant vector: `eta |A|^{3/2} / sqrt(3)`.
pub fn projection_distance_bound(levels: &QuantileLevels, eta: f64) -> f64 {
    eta * (levels.len() as f64).powf(1.5) / 3f64.sqrt()
}

/// Per-level coverage-gap bound with constant-vector base forecasts (a `1/T` rate).
pub fn point_forecast_calibration_bound(
    levels: &QuantileLevels,
    r: f64,
    eta: f64,
    t: usize,
    init_norm: f64,
) -> Result<f64> {
    check_bound_args(r, eta, t)?;
    let n = levels.len() as f64;
    let d = levels.edge_distance();
    let t = t as f64;
    let n32 = n.powf(1.5);
    Ok(2.0 * init_norm / (eta * t)
        + n.sqrt() / t
        + n32 / (2.0 * d * t)
        + r * n32 / (d * eta * t)
        + n32 / (t * 3f64.sqrt()))
}

// ---------------------------------------------------------------------------
// Report

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub value: f64,
    pub observed: f64,
    pub holds: bool,
}

impl BoundCheck {
    fn new(value: f64, observed: f64) -> Self {
        Self { value, observed, holds: observed <= value }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub residual_bound: f64,
    pub max_coverage_gap: f64,
    pub calibration_bound: Option<BoundCheck>,
    pub regret_bound: Option<BoundCheck>,
    pub tracker_coverage_bound: Option<BoundCheck>,
}

/// Options controlling which metrics are computed.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub pit_bins: usize,
    pub comparator: Comparator,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { pit_bins: 10, comparator: Comparator::EmpiricalQuantile }
    }
}

/// Summary of a completed run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub variant: Option<VariantSpec>,
    pub levels: QuantileLevels,
    pub steps: usize,
    pub coverage: Vec<f64>,
    pub calibration_error: f64,
    pub quantile_loss: f64,
    pub crossing_fraction: f64,
    pub raw_crossing_fraction: f64,
    /// Absent with fewer than three levels or crossed forecasts.
    pub pit_entropy: Option<PitEntropy>,
    pub regret: Option<Regret>,
    pub average_gradient_norm: f64,
    pub bounds: BoundsReport,
}

impl RunReport {
    /// Evaluates `records`. `variant` and `initial_hidden` enable the guarantee checks.
    pub fn build(
        records: &[StepRecord],
        levels: &QuantileLevels,
        variant: Option<&VariantSpec>,
        initial_hidden: Option<&[f64]>,
        options: &ReportOptions,
    ) -> Result<Self> {
        nonempty(records)?;
        let coverage = coverages(records, levels)?;
        let max_gap = coverage.iter().zip(levels.iter()).map(|(c, a)| (c - a).abs()).fold(0.0, f64::max);
        let forecasts: Vec<&[f64]> = records.iter().map(|r| r.forecast.as_slice()).collect();
        let raws: Vec<&[f64]> = records.iter().map(|r| r.raw.as_slice()).collect();
        let crossing = crossing_fraction(&forecasts);
        let pit = if levels.len() >= 3 && crossing == 0.0 {
            Some(pit_entropy(records, levels, options.pit_bins)?)
        } else {
            None
        };
        let base_ordered = records.iter().all(|r| is_ordered(&r.base));
        let regret = if base_ordered { Some(compute_regret(records, levels, &options.comparator)?) } else { None };

        let r = residual_bound(records);
        let t = records.len();
        let init_norm = initial_hidden.map_or(0.0, |h| h.iter().map(|v| v * v).sum::<f64>().sqrt());
        let mut bounds = BoundsReport {
            residual_bound: r,
            max_coverage_gap: max_gap,
            calibration_bound: None,
            regret_bound: None,
            tracker_coverage_bound: None,
        };
        if let Some(spec) = variant {
            if let LearningRate::Fixed { eta } = spec.learning_rate {
                let delay = spec.kind.delay();
                if spec.kind.is_multiqt() {
                    let cal = delayed_calibration_bound(levels, r, eta, t, init_norm, delay)?;
                    bounds.calibration_bound = Some(BoundCheck::new(cal, max_gap));
                    if let Some(reg) = &regret {
                        let rb = regret_bound_from(levels, r, eta, t, init_norm, delay)?;
                        bounds.regret_bound = Some(BoundCheck::new(rb, reg.value));
                    }
                }
                if spec.kind == VariantKind::QtIndependent {
                    let theta1 = initial_hidden.map_or(0.0, |h| h.iter().fold(0.0, |m, v| f64::max(m, v.abs())));
                    let tb = tracker_coverage_bound(theta1, r, eta, t)?;
                    bounds.tracker_coverage_bound = Some(BoundCheck::new(tb, max_gap));
                }
            }
        }

        Ok(Self {
            variant: variant.copied(),
            levels: levels.clone(),
            steps: t,
            calibration_error: coverage.iter().zip(levels.iter()).map(|(c, a)| (c - a).abs()).sum::<f64>()
                / levels.len() as f64,
            coverage,
            quantile_loss: average_quantile_loss(records, levels)?,
            crossing_fraction: crossing,
            raw_crossing_fraction: crossing_fraction(&raws),
            pit_entropy: pit,
            regret,
            average_gradient_norm: average_gradient_norm(records)?,
            bounds,
        })
    }
}
