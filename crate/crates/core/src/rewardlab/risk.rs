use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::error::Result;

use super::validate_risk_ratio;

pub const RISK_BUFFER_CAPACITY: usize = 32;

/// Rule for adjusting the risk ratio from the buffered discrepancies.
pub trait RiskStrategy {
    fn next_ratio(&mut self, buffer: &VecDeque<Vec<f64>>, rho: f64) -> f64;
}

/// Keeps the ratio fixed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConstantRisk;

impl RiskStrategy for ConstantRisk {
    fn next_ratio(&mut self, _buffer: &VecDeque<Vec<f64>>, rho: f64) -> f64 {
        rho
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiskState<S = ConstantRisk> {
    buffer: VecDeque<Vec<f64>>,
    capacity: usize,
    rho: f64,
    strategy: S,
}

impl RiskState<ConstantRisk> {
    pub fn new(rho: f64) -> Result<Self> {
        Self::with_strategy(rho, RISK_BUFFER_CAPACITY, ConstantRisk)
    }
}

impl<S: RiskStrategy> RiskState<S> {
    pub fn with_strategy(rho: f64, capacity: usize, strategy: S) -> Result<Self> {
        validate_risk_ratio(rho)?;
        Ok(Self {
            buffer: VecDeque::with_capacity(capacity),
            capacity,
            rho,
            strategy,
        })
    }

    /// Restores a saved ratio and buffer; the oldest batches are dropped past
    /// `capacity`.
    pub fn restore(rho: f64, capacity: usize, strategy: S, buffer: impl IntoIterator<Item = Vec<f64>>) -> Result<Self> {
        let mut s = Self::with_strategy(rho, capacity, strategy)?;
        for b in buffer {
            if s.buffer.len() == capacity {
                s.buffer.pop_front();
            }
            if capacity > 0 {
                s.buffer.push_back(b);
            }
        }
        Ok(s)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn buffer(&self) -> &VecDeque<Vec<f64>> {
        &self.buffer
    }

    /// Buffers `batch` (evicting the oldest past capacity) and asks the
    /// strategy for the next ratio, clamped into (0, 0.5].
    pub fn update(&mut self, batch: &[f64]) -> f64 {
        if self.capacity > 0 {
            if self.buffer.len() == self.capacity {
                self.buffer.pop_front();
            }
            self.buffer.push_back(batch.to_vec());
        }
        let next = self.strategy.next_ratio(&self.buffer, self.rho);
        if validate_risk_ratio(next).is_ok() {
            self.rho = next;
        } else if next.is_finite() {
            self.rho = next.clamp(f64::MIN_POSITIVE, 0.5);
        }
        self.rho
    }
}
