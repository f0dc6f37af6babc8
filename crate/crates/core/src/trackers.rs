//! Online offset trackers for multi-level quantile forecasts.
//!
//! Every variant keeps a hidden offset vector, turns `base + hidden` into a
//! revealed forecast, observes the outcome and takes a gradient step. The
//! variants differ in three places:
//!
//! | variant             | revealed forecast        | gradient taken at | step starts from |
//! |---------------------|--------------------------|-------------------|------------------|
//! | `qt_independent`    | `b + hidden`             | revealed          | hidden           |
//! | `multiqt`           | `iso(b + hidden)`        | revealed          | hidden           |
//! | `multiqt_delayed`   | `iso(b + hidden)`        | revealed, D late  | hidden           |
//! | `projected_gd`      | `iso(b + hidden)`        | revealed          | played           |
//! | `posthoc_sort`      | `sort(b + hidden)`       | `b + hidden`      | hidden           |
//! | `posthoc_isotonic`  | `iso(b + hidden)`        | `b + hidden`      | hidden           |
//! | `multiqt_sort`      | `sort(b + hidden)`       | revealed          | hidden           |
//! | `multiqt_eps`       | `iso_eps(b + hidden)`    | revealed          | hidden           |
//!
//! `iso` is isotonic regression and `iso_eps` the projection onto vectors
//! whose consecutive entries are at least `eps` apart.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{check_finite, check_len, Error, Result};
use crate::isotonic::{self, first_crossing};
use crate::losses::{aggregated_unchecked, gradient_at_forecast, QuantileLevels};

/// Which update rule a tracker runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum VariantKind {
    QtIndependent,
    #[serde(rename = "multiqt")]
    MultiQt,
    #[serde(rename = "multiqt_delayed")]
    MultiQtDelayed {
        delay: usize,
    },
    ProjectedGd,
    PosthocSort,
    PosthocIsotonic,
    #[serde(rename = "multiqt_sort")]
    MultiQtSort,
    #[serde(rename = "multiqt_eps")]
    MultiQtEps {
        eps: f64,
    },
}

/// Where the gradient for the hidden update is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientPoint {
    /// At the revealed (ordered) forecast.
    Revealed,
    /// At the unordered `base + hidden` vector.
    Raw,
}

/// Which iterate the gradient step starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOrigin {
    Hidden,
    Played,
}

impl VariantKind {
    pub const NAMES: [&'static str; 8] = [
        "qt_independent",
        "multiqt",
        "multiqt_delayed",
        "projected_gd",
        "posthoc_sort",
        "posthoc_isotonic",
        "multiqt_sort",
        "multiqt_eps",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            VariantKind::QtIndependent => "qt_independent",
            VariantKind::MultiQt => "multiqt",
            VariantKind::MultiQtDelayed { .. } => "multiqt_delayed",
            VariantKind::ProjectedGd => "projected_gd",
            VariantKind::PosthocSort => "posthoc_sort",
            VariantKind::PosthocIsotonic => "posthoc_isotonic",
            VariantKind::MultiQtSort => "multiqt_sort",
            VariantKind::MultiQtEps { .. } => "multiqt_eps",
        }
    }

    /// Builds a kind from its name plus the delay and separation parameters.
    /// `multiqt` with a positive delay becomes `multiqt_delayed`.
    pub fn from_parts(name: &str, delay: usize, eps: Option<f64>) -> Result<Self> {
        let kind = match name {
            "qt_independent" => VariantKind::QtIndependent,
            "multiqt" if delay == 0 => VariantKind::MultiQt,
            "multiqt" | "multiqt_delayed" => VariantKind::MultiQtDelayed { delay },
            "projected_gd" => VariantKind::ProjectedGd,
            "posthoc_sort" => VariantKind::PosthocSort,
            "posthoc_isotonic" => VariantKind::PosthocIsotonic,
            "multiqt_sort" => VariantKind::MultiQtSort,
            "multiqt_eps" => VariantKind::MultiQtEps {
                eps: eps.ok_or_else(|| Error::invalid("multiqt_eps needs a separation (eps)"))?,
            },
            other => {
                return Err(Error::invalid(format!(
                    "unknown variant `{other}` (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        };
        if delay > 0 && !matches!(kind, VariantKind::MultiQtDelayed { .. }) {
            return Err(Error::invalid(format!("feedback delay is only defined for multiqt, not {}", kind.name())));
        }
        kind.validate()?;
        Ok(kind)
    }

    fn validate(&self) -> Result<()> {
        if let VariantKind::MultiQtEps { eps } = self {
            if !(eps.is_finite() && *eps >= 0.0) {
                return Err(Error::invalid(format!("eps must be finite and >= 0, got {eps}")));
            }
        }
        Ok(())
    }

    /// Variants that project onto a shifted cone and therefore need ordered base forecasts.
    pub fn requires_ordered_base(&self) -> bool {
        !matches!(self, VariantKind::QtIndependent | VariantKind::PosthocSort | VariantKind::PosthocIsotonic)
    }

    /// Variants whose revealed forecasts never cross.
    pub fn emits_ordered(&self) -> bool {
        !matches!(self, VariantKind::QtIndependent)
    }

    pub fn gradient_point(&self) -> GradientPoint {
        match self {
            VariantKind::PosthocSort | VariantKind::PosthocIsotonic => GradientPoint::Raw,
            _ => GradientPoint::Revealed,
        }
    }

    pub fn step_origin(&self) -> StepOrigin {
        match self {
            VariantKind::ProjectedGd => StepOrigin::Played,
            _ => StepOrigin::Hidden,
        }
    }

    pub fn delay(&self) -> usize {
        match self {
            VariantKind::MultiQtDelayed { delay } => *delay,
            _ => 0,
        }
    }

    /// True for the lazy isotonic tracker, with or without delay.
    pub fn is_multiqt(&self) -> bool {
        matches!(self, VariantKind::MultiQt | VariantKind::MultiQtDelayed { .. })
    }

    fn reveal(&self, raw: &[f64]) -> Vec<f64> {
        match self {
            VariantKind::QtIndependent => raw.to_vec(),
            VariantKind::MultiQt
            | VariantKind::MultiQtDelayed { .. }
            | VariantKind::ProjectedGd
            | VariantKind::PosthocIsotonic => isotonic::pava_unchecked(raw),
            VariantKind::PosthocSort | VariantKind::MultiQtSort => {
                let mut v = raw.to_vec();
                v.sort_by(f64::total_cmp);
                v
            }
            VariantKind::MultiQtEps { eps } => isotonic::eps_separated_unchecked(raw, *eps),
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VariantKind::MultiQtDelayed { delay } => write!(f, "multiqt_delayed(D={delay})"),
            VariantKind::MultiQtEps { eps } => write!(f, "multiqt_eps(eps={eps})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantKind::from_parts(s, 0, None)
    }
}

/// Parameters of the trailing-residual learning-rate heuristic:
/// `eta_t = max(factor * Quantile_q(residuals over the last `window` steps), floor)`,
/// pooling the residuals of every level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdaptiveEta {
    pub window: usize,
    pub quantile: f64,
    pub factor: f64,
    pub floor: f64,
}

impl Default for AdaptiveEta {
    fn default() -> Self {
        Self { window: 50, quantile: 0.9, factor: 0.01, floor: 0.1 }
    }
}

impl AdaptiveEta {
    fn validate(&self) -> Result<()> {
        let ok = self.window > 0
            && self.quantile > 0.0
            && self.quantile <= 1.0
            && self.factor > 0.0
            && self.factor.is_finite()
            && self.floor > 0.0
            && self.floor.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid adaptive learning-rate parameters {self:?}")))
        }
    }

    /// Learning rate for the next step given the trailing residual window.
    pub fn eta(&self, window: &ResidualWindow) -> f64 {
        let mut pooled: Vec<f64> = window.steps.iter().flatten().copied().collect();
        if pooled.is_empty() {
            return self.floor;
        }
        pooled.sort_by(f64::total_cmp);
        (self.factor * interpolated_quantile(&pooled, self.quantile)).max(self.floor)
    }
}

/// Linear-interpolation sample quantile of sorted data (position `p * (n - 1)`).
fn interpolated_quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Absolute residuals `|y_s - b_s^a|` of the most recent steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResidualWindow {
    steps: VecDeque<Vec<f64>>,
}

impl ResidualWindow {
    fn push(&mut self, residuals: Vec<f64>, capacity: usize) {
        self.steps.push_back(residuals);
        while self.steps.len() > capacity {
            self.steps.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Fixed step size or the trailing-residual heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LearningRate {
    Fixed { eta: f64 },
    Adaptive(AdaptiveEta),
}

impl LearningRate {
    pub fn fixed(eta: f64) -> Self {
        LearningRate::Fixed { eta }
    }

    pub fn fixed_value(&self) -> Option<f64> {
        match self {
            LearningRate::Fixed { eta } => Some(*eta),
            LearningRate::Adaptive(_) => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            LearningRate::Fixed { eta } if eta.is_finite() && *eta > 0.0 => Ok(()),
            LearningRate::Fixed { eta } => {
                Err(Error::invalid(format!("learning rate must be finite and > 0, got {eta}")))
            }
            LearningRate::Adaptive(p) => p.validate(),
        }
    }
}

/// A tracker variant together with its learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariantSpec {
    pub kind: VariantKind,
    pub learning_rate: LearningRate,
}

impl VariantSpec {
    pub fn new(kind: VariantKind, learning_rate: LearningRate) -> Result<Self> {
        kind.validate()?;
        learning_rate.validate()?;
        Ok(Self { kind, learning_rate })
    }

    pub fn fixed(kind: VariantKind, eta: f64) -> Result<Self> {
        Self::new(kind, LearningRate::fixed(eta))
    }
}

/// A forecast before the outcome is known.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    /// `base + hidden`, possibly crossed.
    pub raw: Vec<f64>,
    /// The forecast actually issued.
    pub revealed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct PendingFeedback {
    gradient: Vec<f64>,
    residuals: Vec<f64>,
}

/// Mutable state of one tracker on one series.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    /// Hidden offsets for the next step.
    pub hidden: Vec<f64>,
    /// Offsets played at the most recent step (equal to `hidden` before the first step).
    pub played: Vec<f64>,
    delay_buffer: VecDeque<PendingFeedback>,
    /// Number of completed steps.
    pub step_index: usize,
    lr_state: ResidualWindow,
}

impl TrackerState {
    fn new(hidden: Vec<f64>) -> Self {
        Self {
            played: hidden.clone(),
            hidden,
            delay_buffer: VecDeque::new(),
            step_index: 0,
            lr_state: ResidualWindow::default(),
        }
    }

    pub fn pending_feedback(&self) -> usize {
        self.delay_buffer.len()
    }

    pub fn residual_window(&self) -> &ResidualWindow {
        &self.lr_state
    }
}

/// Everything observed and computed at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// One-based step index.
    pub t: usize,
    pub base: Vec<f64>,
    pub y: f64,
    /// Hidden offsets used to form this step's forecast.
    pub hidden: Vec<f64>,
    /// `revealed - base`.
    pub played: Vec<f64>,
    /// `base + hidden` before ordering.
    pub raw: Vec<f64>,
    /// The issued forecast.
    pub forecast: Vec<f64>,
    /// `y <= forecast_i` for every level.
    pub covered: Vec<bool>,
    /// Summed quantile loss of the issued forecast.
    pub loss: f64,
    /// `covered_i - alpha_i` at the issued forecast.
    pub gradient: Vec<f64>,
    /// Step size applied at this step.
    pub eta: f64,
}

/// A tracker bound to a set of levels.
#[derive(Debug, Clone)]
pub struct Tracker {
    spec: VariantSpec,
    levels: QuantileLevels,
    state: TrackerState,
}

impl Tracker {
    /// Starts from zero hidden offsets.
    pub fn new(spec: VariantSpec, levels: QuantileLevels) -> Self {
        let n = levels.len();
        Self { spec, levels, state: TrackerState::new(vec![0.0; n]) }
    }

    /// Starts from the given hidden offsets. Cone-projecting variants need them ordered.
    pub fn with_initial(spec: VariantSpec, levels: QuantileLevels, hidden: Vec<f64>) -> Result<Self> {
        check_len(levels.len(), hidden.len())?;
        check_finite(&hidden)?;
        if spec.kind.requires_ordered_base() {
            if let Some(index) = first_crossing(&hidden) {
                return Err(Error::Crossing { index });
            }
        }
        Ok(Self { spec, levels, state: TrackerState::new(hidden) })
    }

    pub fn spec(&self) -> &VariantSpec {
        &self.spec
    }

    pub fn levels(&self) -> &QuantileLevels {
        &self.levels
    }

    pub fn state(&self) -> &TrackerState {
        &self.state
    }

    fn check_base(&self, b: &[f64]) -> Result<()> {
        check_len(self.levels.len(), b.len())?;
        check_finite(b)?;
        if self.spec.kind.requires_ordered_base() {
            if let Some(index) = first_crossing(b) {
                return Err(Error::Crossing { index });
            }
        }
        Ok(())
    }

    /// The forecast for base `b` under the current state. Does not mutate.
    pub fn forecast(&self, b: &[f64]) -> Result<Forecast> {
        self.check_base(b)?;
        let raw: Vec<f64> = b.iter().zip(&self.state.hidden).map(|(bi, h)| bi + h).collect();
        let revealed = self.spec.kind.reveal(&raw);
        Ok(Forecast { raw, revealed })
    }

    /// Step size for the update at the current step.
    pub fn current_eta(&self) -> f64 {
        match self.spec.learning_rate {
            LearningRate::Fixed { eta } => eta,
            LearningRate::Adaptive(p) => p.eta(&self.state.lr_state),
        }
    }

    /// Issues the forecast for `b`, observes `y` and advances the state.
    pub fn update(&mut self, b: &[f64], y: f64) -> Result<StepRecord> {
        if !y.is_finite() {
            return Err(Error::invalid(format!("observation must be finite, got {y}")));
        }
        let Forecast { raw, revealed } = self.forecast(b)?;
        let levels = self.levels.as_slice();
        let kind = self.spec.kind;

        let covered: Vec<bool> = revealed.iter().map(|&q| y <= q).collect();
        let gradient = gradient_at_forecast(levels, &revealed, y);
        let loss = aggregated_unchecked(levels, &revealed, y);
        let played: Vec<f64> = revealed.iter().zip(b).map(|(q, bi)| q - bi).collect();

        let step_gradient = match kind.gradient_point() {
            GradientPoint::Revealed => gradient.clone(),
            GradientPoint::Raw => gradient_at_forecast(levels, &raw, y),
        };
        let residuals: Vec<f64> = b.iter().map(|bi| (y - bi).abs()).collect();

        self.state.delay_buffer.push_back(PendingFeedback { gradient: step_gradient, residuals });
        let eta = self.current_eta();
        let hidden_before = self.state.hidden.clone();

        let origin = match kind.step_origin() {
            StepOrigin::Hidden => hidden_before.clone(),
            StepOrigin::Played => played.clone(),
        };
        let mut next = origin;
        if self.state.delay_buffer.len() > kind.delay() {
            let feedback = self.state.delay_buffer.pop_front().expect("buffer is non-empty");
            for (h, g) in next.iter_mut().zip(&feedback.gradient) {
                *h -= eta * g;
            }
            if let LearningRate::Adaptive(p) = self.spec.learning_rate {
                self.state.lr_state.push(feedback.residuals, p.window);
            }
        }

        self.state.hidden = next;
        self.state.played = played.clone();
        self.state.step_index += 1;

        Ok(StepRecord {
            t: self.state.step_index,
            base: b.to_vec(),
            y,
            hidden: hidden_before,
            played,
            raw,
            forecast: revealed,
            covered,
            loss,
            gradient,
            eta,
        })
    }
}

/// One step of input: base forecasts and the realised outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub base: Vec<f64>,
    pub y: f64,
}

impl SeriesPoint {
    pub fn new(base: Vec<f64>, y: f64) -> Self {
        Self { base, y }
    }
}

/// Runs a fresh tracker over a whole series.
pub fn run_series(spec: &VariantSpec, levels: &QuantileLevels, series: &[SeriesPoint]) -> Result<Vec<StepRecord>> {
    let mut tracker = Tracker::new(*spec, levels.clone());
    run_tracker(&mut tracker, series)
}

/// Like [`run_series`] with explicit initial hidden offsets.
pub fn run_series_from(
    spec: &VariantSpec,
    levels: &QuantileLevels,
    initial: Vec<f64>,
    series: &[SeriesPoint],
) -> Result<Vec<StepRecord>> {
    let mut tracker = Tracker::with_initial(*spec, levels.clone(), initial)?;
    run_tracker(&mut tracker, series)
}

fn run_tracker(tracker: &mut Tracker, series: &[SeriesPoint]) -> Result<Vec<StepRecord>> {
    series.iter().map(|p| tracker.update(&p.base, p.y)).collect()
}

/// The half-open interval `(lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionInterval {
    /// Target miscoverage; the interval aims to cover with probability `1 - miscoverage`.
    pub miscoverage: f64,
    pub lower: f64,
    pub upper: f64,
}

impl PredictionInterval {
    pub fn contains(&self, y: f64) -> bool {
        self.lower < y && y <= self.upper
    }

    pub fn is_empty(&self) -> bool {
        self.lower >= self.upper
    }

    /// Set inclusion; the empty interval is inside everything.
    pub fn is_within(&self, other: &PredictionInterval) -> bool {
        self.is_empty() || (other.lower <= self.lower && self.upper <= other.upper)
    }
}

/// Central intervals `(q^{a/2}, q^{1-a/2}]` for each miscoverage target `a`.
pub fn build_intervals(levels: &QuantileLevels, q: &[f64], targets: &[f64]) -> Result<Vec<PredictionInterval>> {
    check_len(levels.len(), q.len())?;
    if let Some(index) = first_crossing(q) {
        return Err(Error::Crossing { index });
    }
    targets
        .iter()
        .map(|&a| {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::LevelOutOfRange(a));
            }
            let lo = levels.require(a / 2.0)?;
            let hi = levels.require(1.0 - a / 2.0)?;
            Ok(PredictionInterval { miscoverage: a, lower: q[lo], upper: q[hi] })
        })
        .collect()
}
