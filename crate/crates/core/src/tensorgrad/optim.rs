use alloc::vec::Vec;

use super::{DenseArray, GradError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// AdamW with decoupled weight decay. Moments are allocated lazily on the
/// first step to match the parameter shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<DenseArray>,
    v: Vec<DenseArray>,
    step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    /// Restores a previously saved state.
    pub fn from_parts(config: AdamWConfig, m: Vec<DenseArray>, v: Vec<DenseArray>, step: u64) -> Self {
        Self { config, m, v, step }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[DenseArray] {
        &self.m
    }

    pub fn second_moments(&self) -> &[DenseArray] {
        &self.v
    }

    pub fn step(&mut self, params: &mut [DenseArray], grads: &[DenseArray]) -> Result<(), GradError> {
        if params.len() != grads.len() {
            return Err(GradError::Arity {
                op: "adamw_step",
                expected: params.len(),
                got: grads.len(),
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(GradError::ShapeMismatch {
                    op: "adamw_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(GradError::NonFinite { op: "adamw_step" });
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| DenseArray::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }

        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - libm::pow(beta1, t as f64);
        let bc2 = 1.0 - libm::pow(beta2, t as f64);

        let mut updated: Vec<DenseArray> = Vec::with_capacity(params.len());
        let mut new_m = Vec::with_capacity(params.len());
        let mut new_v = Vec::with_capacity(params.len());
        for ((p, g), (m, v)) in params.iter().zip(grads).zip(self.m.iter().zip(&self.v)) {
            let m = m.zip(g, |mi, gi| beta1 * mi + (1.0 - beta1) * gi);
            let v = v.zip(g, |vi, gi| beta2 * vi + (1.0 - beta2) * gi * gi);
            let mut next = p.clone();
            for ((x, &mi), &vi) in next.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *x -= lr * (m_hat / (libm::sqrt(v_hat) + eps) + weight_decay * *x);
            }
            if !next.is_finite() {
                return Err(GradError::NonFinite { op: "adamw_step" });
            }
            updated.push(next);
            new_m.push(m);
            new_v.push(v);
        }
        for (p, u) in params.iter_mut().zip(updated) {
            *p = u;
        }
        self.m = new_m;
        self.v = new_v;
        self.step += 1;
        Ok(())
    }
}

pub fn global_norm(grads: &[DenseArray]) -> f64 {
    libm::sqrt(grads.iter().map(DenseArray::norm_sq).sum())
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [DenseArray], max_norm: f64) -> f64 {
    debug_assert!(max_norm > 0.0);
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale_in_place(s));
    }
    norm
}
