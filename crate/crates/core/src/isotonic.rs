//! Euclidean projections onto the isotonic cone and its translates.
//!
//! The isotonic cone is the set of vectors with non-decreasing entries.
//! Projection onto it is computed with the Pool Adjacent Violators
//! algorithm in a single left-to-right pass. Each pooled block keeps its
//! running sum and element count, and the block value is always recomputed
//! as `sum / count`, so the emitted values are exactly the values that were
//! compared while merging.

use std::ops::Deref;

use crate::error::{check_finite, check_len, Error, Result};

/// A vector whose entries are non-decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedVector(Vec<f64>);

impl OrderedVector {
    /// Wraps `values` after checking the ordering invariant.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        if let Some(index) = first_crossing(&values) {
            return Err(Error::Crossing { index });
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for OrderedVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<OrderedVector> for Vec<f64> {
    fn from(v: OrderedVector) -> Self {
        v.0
    }
}

/// Returns the first index `i` with `values[i] > values[i + 1]`.
pub fn first_crossing(values: &[f64]) -> Option<usize> {
    values.windows(2).position(|w| w[0] > w[1])
}

/// True when every entry is `<=` its successor.
pub fn is_ordered(values: &[f64]) -> bool {
    first_crossing(values).is_none()
}

#[derive(Clone, Copy)]
struct Block {
    sum: f64,
    count: usize,
}

impl Block {
    fn value(&self) -> f64 {
        self.sum / self.count as f64
    }
}

/// Isotonic regression without input validation. Callers guarantee finite input.
pub(crate) fn pava_unchecked(x: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<Block> = Vec::with_capacity(x.len());
    for &v in x {
        blocks.push(Block { sum: v, count: 1 });
        while blocks.len() >= 2 {
            let last = blocks[blocks.len() - 1];
            let prev = blocks[blocks.len() - 2];
            if prev.value() > last.value() {
                blocks.pop();
                let merged = blocks.last_mut().expect("at least one block");
                merged.sum += last.sum;
                merged.count += last.count;
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(x.len());
    for b in &blocks {
        let v = b.value();
        out.extend(std::iter::repeat_n(v, b.count));
    }
    out
}

/// Projects `x` onto the isotonic cone (least-squares isotonic regression).
pub fn pava(x: &[f64]) -> Result<OrderedVector> {
    if x.is_empty() {
        return Err(Error::invalid("cannot project an empty vector"));
    }
    check_finite(x)?;
    Ok(OrderedVector(pava_unchecked(x)))
}

/// Projects `x` onto the shifted cone `{z : z + b non-decreasing}`.
///
/// Computed as `pava(x + b) - b`.
pub fn project_shifted(x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len(x.len(), b.len())?;
    check_finite(b)?;
    let shifted: Vec<f64> = x.iter().zip(b).map(|(xi, bi)| xi + bi).collect();
    let projected = pava(&shifted)?;
    Ok(projected.iter().zip(b).map(|(p, bi)| p - bi).collect())
}

/// Projects `x` onto `{z : z_i + b_i + eps <= z_{i+1} + b_{i+1}}`.
///
/// The substitution `u_i = x_i + b_i - i * eps` turns the constraint set into
/// the plain isotonic cone, so this is one PAVA pass plus two shifts.
pub fn project_eps_separated(x: &[f64], b: &[f64], eps: f64) -> Result<Vec<f64>> {
    if !eps.is_finite() || eps < 0.0 {
        return Err(Error::invalid(format!("separation must be a finite value >= 0, got {eps}")));
    }
    check_len(x.len(), b.len())?;
    check_finite(b)?;
    let u: Vec<f64> = x.iter().zip(b).enumerate().map(|(i, (xi, bi))| xi + bi - i as f64 * eps).collect();
    let z = pava(&u)?;
    Ok(z.iter().zip(b).enumerate().map(|(i, (zi, bi))| zi + i as f64 * eps - bi).collect())
}

/// `pava(x - i * eps) + i * eps` without validation; the forecast used by the
/// eps-separated tracker variant.
pub(crate) fn eps_separated_unchecked(x: &[f64], eps: f64) -> Vec<f64> {
    let u: Vec<f64> = x.iter().enumerate().map(|(i, v)| v - i as f64 * eps).collect();
    pava_unchecked(&u).into_iter().enumerate().map(|(i, v)| v + i as f64 * eps).collect()
}
