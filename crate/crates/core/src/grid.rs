use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Uniform axis with both endpoints included as nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl AxisSpec {
    pub fn new(min: f64, max: f64, n: usize) -> Result<Self> {
        let a = Self { min, max, n };
        a.check()?;
        Ok(a)
    }

    /// Symmetric axis `[-half_width, half_width]`.
    pub fn symmetric(half_width: f64, n: usize) -> Result<Self> {
        Self::new(-half_width, half_width, n)
    }

    pub fn check(&self) -> Result<()> {
        if self.n < 2 {
            return Err(invalid("axis.n", "need at least two nodes"));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.max > self.min) {
            return Err(invalid("axis", format!("bad bounds [{}, {}]", self.min, self.max)));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.min + i as f64 * self.step()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Index of the node nearest to `x`, clamped to the axis.
    pub fn nearest(&self, x: f64) -> usize {
        let i = ((x - self.min) / self.step()).round();
        i.clamp(0.0, (self.n - 1) as f64) as usize
    }
}

/// Trapezoid rule on uniformly spaced samples.
pub fn trapezoid(values: &[f64], step: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => step * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])),
    }
}
