//! Reference implementations and stream generators shared by the integration tests.
//! Nothing here calls the library's algorithms; values are computed from the
//! definitions directly.
#![allow(dead_code)]

use quantcal::{QuantileLevels, SeriesPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Isotonic regression by exhaustive search: every split of `x` into
/// contiguous blocks, each block set to its mean, keep the ordered candidates
/// and return the one with least squared error.
pub fn isotonic_by_enumeration(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert!((1..=16).contains(&n));
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (n - 1)) {
        let mut z = Vec::with_capacity(n);
        let mut start = 0;
        for i in 0..n {
            let cut = i == n - 1 || mask & (1 << i) != 0;
            if cut {
                let mean = x[start..=i].iter().sum::<f64>() / (i + 1 - start) as f64;
                z.extend(std::iter::repeat_n(mean, i + 1 - start));
                start = i + 1;
            }
        }
        if z.windows(2).any(|w| w[0] > w[1] + 1e-12) {
            continue;
        }
        let sse: f64 = x.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(s, _)| sse < *s - 1e-15) {
            best = Some((sse, z));
        }
    }
    best.expect("the single pooled block is always ordered").1
}

/// Checks the optimality conditions of least-squares isotonic regression.
/// With `S_k = sum_{i<=k} (x_i - z_i)`: `z` ordered, `S_k >= 0` for all `k`,
/// `S_n = 0`, and `S_k = 0` wherever `z_k < z_{k+1}`.
pub fn isotonic_kkt_violation(x: &[f64], z: &[f64], tol: f64) -> Option<String> {
    if z.windows(2).any(|w| w[0] > w[1]) {
        return Some("not ordered".into());
    }
    let mut s = 0.0;
    for k in 0..x.len() {
        s += x[k] - z[k];
        if s < -tol {
            return Some(format!("prefix sum {s} < 0 at {k}"));
        }
        let boundary = k + 1 == x.len() || z[k] < z[k + 1];
        if boundary && s.abs() > tol {
            return Some(format!("prefix sum {s} != 0 at block end {k}"));
        }
    }
    None
}

/// Each maximal constant run of `z` equals the mean of `x` over it.
pub fn pool_mean_violation(x: &[f64], z: &[f64], tol: f64) -> Option<String> {
    let mut start = 0;
    for i in 0..z.len() {
        if i + 1 == z.len() || z[i + 1] != z[i] {
            let mean = x[start..=i].iter().sum::<f64>() / (i + 1 - start) as f64;
            if (mean - z[i]).abs() > tol {
                return Some(format!("block {start}..={i}: mean {mean} vs {}", z[i]));
            }
            start = i + 1;
        }
    }
    None
}

pub fn pinball(alpha: f64, q: f64, y: f64) -> f64 {
    if y >= q {
        alpha * (y - q)
    } else {
        (1.0 - alpha) * (q - y)
    }
}

pub fn summed_pinball(levels: &[f64], q: &[f64], y: f64) -> f64 {
    levels.iter().zip(q).map(|(&a, &v)| pinball(a, v, y)).sum()
}

/// `sum_beta beta * [(u - l) + (2/beta)(l - y)_+ + (2/beta)(y - u)_+]`.
pub fn wis(intervals: &[(f64, f64, f64)], y: f64) -> f64 {
    intervals.iter().map(|&(beta, l, u)| beta * ((u - l) + 2.0 / beta * ((l - y).max(0.0) + (y - u).max(0.0)))).sum()
}

pub fn coverage(forecasts: &[Vec<f64>], ys: &[f64], level: usize) -> f64 {
    let hits = forecasts.iter().zip(ys).filter(|(q, y)| **y <= q[level]).count();
    hits as f64 / ys.len() as f64
}

/// Smallest `v` among `values` with `#{x <= v} >= p n`.
pub fn lower_quantile(values: &[f64], p: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    for (i, v) in s.iter().enumerate() {
        if (i + 1) as f64 >= p * n {
            return *v;
        }
    }
    *s.last().unwrap()
}

/// Normalised entropy of a histogram on [0, 1]; `1.0` goes to the top bin.
pub fn entropy(values: &[f64], bins: usize) -> f64 {
    let mut counts = vec![0usize; bins];
    for &u in values {
        let k = ((u * bins as f64).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    let n = values.len() as f64;
    let mut h = 0.0;
    for c in counts {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.ln();
        }
    }
    h / (bins as f64).ln()
}

pub fn d_a(levels: &[f64]) -> f64 {
    levels.iter().map(|&a| a.min(1.0 - a)).fold(f64::INFINITY, f64::min)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-level coverage-gap bound for the lazy isotonic tracker with delay `d`.
pub fn calibration_bound(levels: &[f64], r: f64, eta: f64, t: usize, init: f64, d: usize) -> f64 {
    let m = levels.len() as f64;
    let t = t as f64;
    let d = d as f64;
    2.0 * init / (eta * t)
        + (m * (2.0 * d + 1.0) / t + 2.0 * r * m.powf(1.5) / (eta * d_a(levels) * t)).sqrt()
        + d * m.sqrt() / t
}

pub fn regret_bound(m: usize, r: f64, eta: f64, t: usize) -> f64 {
    let m = m as f64;
    r * r * m / (2.0 * eta * t as f64) + 2.0 * eta * m
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// A bounded test stream with its residual bound and a suggested step size.
#[derive(Debug, Clone)]
pub struct Stream {
    pub name: String,
    pub levels: QuantileLevels,
    pub points: Vec<SeriesPoint>,
    pub r: f64,
    pub eta: f64,
}

impl Stream {
    pub fn ys(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.y).collect()
    }

    /// Largest `|y_t - b_t|` over the first `t` steps.
    pub fn r_prefix(&self, t: usize) -> f64 {
        self.points[..t].iter().flat_map(|p| p.base.iter().map(move |b| (p.y - b).abs())).fold(0.0, f64::max)
    }
}

const LEVEL_SETS: [&[f64]; 4] = [
    &[0.1, 0.5, 0.9],
    &[0.05, 0.25, 0.5, 0.75, 0.95],
    &[0.2, 0.4, 0.6, 0.8],
    &[0.025, 0.1, 0.25, 0.5, 0.75, 0.9, 0.975],
];

/// Random bounded streams with ordered base forecasts. `k` picks the shape.
pub fn random_stream(k: u64, t: usize) -> Stream {
    let mut g = rng(0x5eed_0000 + k);
    let lv = LEVEL_SETS[(k % 4) as usize];
    let levels = QuantileLevels::new(lv.to_vec()).unwrap();
    let scale = g.gen_range(0.2..3.0);
    let mut points = Vec::with_capacity(t);
    let shape = (k / 4) % 5;
    for i in 0..t {
        let noise: f64 = g.gen_range(-1.0..1.0) * scale;
        let (centre, spread) = match shape {
            // iid around a fixed, too-narrow forecast
            0 => (0.0, 0.3),
            // slow drift that the base misses
            1 => ((i as f64 / 500.0).sin() * 2.0 * scale, 0.5),
            // regime switches
            2 => ([0.0, 2.0, -1.5, 0.5][(i / 1500) % 4] * scale, 0.2),
            // level-agnostic zero base
            3 => (0.0, 0.0),
            // erratic ordered base
            _ => (g.gen_range(-0.5..0.5) * scale, g.gen_range(0.0..1.0)),
        };
        let base_centre = match shape {
            1 | 2 => 0.0,
            _ => centre,
        };
        let base: Vec<f64> = lv.iter().map(|&a| base_centre + spread * scale * logit(a) / 4.0).collect();
        let y = match shape {
            4 => centre + if g.gen_bool(0.5) { scale } else { -scale },
            _ => centre + noise,
        };
        points.push(SeriesPoint::new(base, y));
    }
    let r = points.iter().flat_map(|p| p.base.iter().map(move |b| (p.y - b).abs())).fold(0.0, f64::max);
    let eta = if k.is_multiple_of(2) { r } else { 0.2 * r };
    Stream { name: format!("random#{k}"), levels, points, r, eta }
}

/// 0, T/100... style prefix grid: 10, 20, 50, 100, ... up to `t`.
pub fn log_grid(t: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut base = 10;
    while base <= t {
        for m in [1, 2, 5] {
            if base * m <= t {
                out.push(base * m);
            }
        }
        base *= 10;
    }
    if out.last() != Some(&t) {
        out.push(t);
    }
    out
}
