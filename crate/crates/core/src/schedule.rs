//! Tent-shaped per-class weight oscillation.
//!
//! During period `k` (steps `k T .. (k+1) T`) class `k mod C` is emphasized
//! with a raw weight that rises linearly from 1 to `A` and back to 1; all other
//! classes keep raw weight 1. The raw weights are rescaled to sum to `C`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillationSchedule {
    amplitude: f64,
    period: u64,
    num_classes: usize,
    stop_step: Option<u64>,
}

impl OscillationSchedule {
    pub fn new(amplitude: f64, period: u64, num_classes: usize) -> Result<Self> {
        if !amplitude.is_finite() || amplitude < 1.0 {
            return Err(Error::invalid("A", "A must be ≥ 1"));
        }
        if period < 2 {
            return Err(Error::invalid("T", "T must be ≥ 2"));
        }
        if num_classes < 2 {
            return Err(Error::invalid("C", "C must be ≥ 2"));
        }
        Ok(Self {
            amplitude,
            period,
            num_classes,
            stop_step: None,
        })
    }

    /// A schedule with all weights fixed at 1 (plain cross entropy).
    pub fn constant(num_classes: usize) -> Result<Self> {
        Self::new(1.0, 2, num_classes)
    }

    /// All weights are exactly 1 from `step` on.
    pub fn with_stop_step(mut self, step: Option<u64>) -> Self {
        self.stop_step = step;
        self
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn period(&self) -> u64 {
        self.period
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn stop_step(&self) -> Option<u64> {
        self.stop_step
    }

    fn slope(&self) -> f64 {
        2.0 * (self.amplitude - 1.0) / self.period as f64
    }

    /// Raw weight of the emphasized class at offset `t_in_period` within a period.
    ///
    /// Offset 0 takes the boundary value 1, shared with the end of the previous period.
    pub fn tent(&self, t_in_period: u64) -> f64 {
        assert!(t_in_period < self.period, "offset must lie in [0, T)");
        let t = t_in_period as f64;
        let half = self.period as f64 / 2.0;
        let m = self.slope();
        if t_in_period == 0 {
            1.0
        } else if t <= half {
            1.0 + m * t
        } else {
            2.0 * self.amplitude - m * t - 1.0
        }
    }

    /// Index of the class emphasized at global step `t`.
    pub fn emphasized_class(&self, t: u64) -> usize {
        ((t / self.period) % self.num_classes as u64) as usize
    }

    pub fn weights(&self, t: u64) -> ClassWeights {
        let c = self.num_classes;
        if self.stop_step.is_some_and(|s| t >= s) || self.amplitude == 1.0 {
            return ClassWeights::ones(c);
        }
        let peak = self.tent(t % self.period);
        let total = peak + (c - 1) as f64;
        let cf = c as f64;
        let others = cf / total;
        let mut gamma = vec![others; c];
        gamma[self.emphasized_class(t)] = cf * peak / total;
        ClassWeights { gamma }
    }
}

/// Per-class loss weights, normalized to sum to the class count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    gamma: Vec<f64>,
}

impl ClassWeights {
    pub fn ones(num_classes: usize) -> Self {
        Self {
            gamma: vec![1.0; num_classes],
        }
    }

    /// Wraps arbitrary positive weights without renormalizing them.
    pub fn from_raw(gamma: Vec<f64>) -> Result<Self> {
        if gamma.iter().any(|g| !g.is_finite() || *g <= 0.0) {
            return Err(Error::invalid("gamma", "weights must be finite and positive"));
        }
        Ok(Self { gamma })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.gamma
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.gamma.iter().sum()
    }

    pub fn is_uniform(&self) -> bool {
        self.gamma.iter().all(|&g| g == 1.0)
    }
}

impl std::ops::Index<usize> for ClassWeights {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.gamma[i]
    }
}
