//! Randomized numerical audit of the guidance optimum, Pinsker's inequality
//! and the selective trust-region reward bound.

use std::fmt;

use astrolabe_core::rng::{NoiseStream, Purpose, StreamKey};
use astrolabe_core::theoryx::{
    kl_tv_pinsker, mixture_residual, optimal_velocity_closed_form, optimal_velocity_numeric, reward_lower_bound_check,
    shift_coefficient, DiscreteDist, GuidanceInstance, TrustRegionInstance,
};

use crate::RunError;

pub const BETAS: [f64; 4] = [0.1, 0.5, 1.0, 2.0];
pub const OPTIMUM_TOL: f64 = 1e-6;
pub const MIXTURE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Check {
    pub passed: usize,
    pub total: usize,
    /// Largest observed error (or bound gap) across trials.
    pub worst: f64,
}

impl Check {
    fn record(&mut self, ok: bool, err: f64) {
        self.total += 1;
        self.passed += ok as usize;
        if self.total == 1 || err > self.worst || err.is_nan() {
            self.worst = err;
        }
    }

    pub fn ok(&self) -> bool {
        self.passed == self.total
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TheoryReport {
    pub optimum: Check,
    pub mixture: Check,
    pub shift_sign: Check,
    pub pinsker: Check,
    pub reward_bound: Check,
}

impl TheoryReport {
    pub fn ok(&self) -> bool {
        self.checks().iter().all(|(_, c)| c.ok())
    }

    pub fn checks(&self) -> [(&'static str, Check); 5] {
        [
            ("closed-form optimum vs numeric minimizer", self.optimum),
            ("mixture identity residual", self.mixture),
            ("shift coefficient sign", self.shift_sign),
            ("pinsker inequality", self.pinsker),
            ("selective trust-region reward bound", self.reward_bound),
        ]
    }
}

impl fmt::Display for TheoryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, c) in self.checks() {
            let tag = if c.ok() { "ok" } else { "FAIL" };
            writeln!(f, "{tag:4} {name}: {}/{} (worst {:.3e})", c.passed, c.total, c.worst)?;
        }
        Ok(())
    }
}

/// Random guidance instance with `alpha` in (0.05, 0.9).
pub fn random_guidance(rng: &mut NoiseStream) -> Result<GuidanceInstance, RunError> {
    let alpha = rng.uniform_in(0.05, 0.9);
    let beta = BETAS[rng.index(BETAS.len())];
    let dim = 1 + rng.index(8);
    let v_plus = rng.normal_vec(dim);
    let v_minus = rng.normal_vec(dim);
    Ok(GuidanceInstance::new(alpha, beta, v_plus, v_minus)?)
}

/// Runs `guidance_trials` guidance instances, `2 * trials` Pinsker pairs of
/// support 2..=16 and `trials` bound instances of support 2..=16.
pub fn verify_theory(trials: usize, seed: u64) -> Result<TheoryReport, RunError> {
    let mut report = TheoryReport::default();
    let mut rng = NoiseStream::new(StreamKey::new(seed, Purpose::Theory).lane(0));
    for _ in 0..trials {
        let inst = random_guidance(&mut rng)?;
        let closed = optimal_velocity_closed_form(&inst)?;
        let numeric = optimal_velocity_numeric(&inst)?;
        let err = closed
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        report.optimum.record(err <= OPTIMUM_TOL, err);
        let res = mixture_residual(&inst);
        report.mixture.record(res <= MIXTURE_TOL, res);
        let c = shift_coefficient(inst.alpha, inst.beta)?;
        let predicate = inst.alpha * (1.0 + inst.beta) < 1.0;
        report.shift_sign.record((c > 0.0) == predicate, 0.0);
    }

    let mut rng = NoiseStream::new(StreamKey::new(seed, Purpose::Theory).lane(1));
    for _ in 0..2 * trials {
        let n = 2 + rng.index(15);
        let p = DiscreteDist::random(n, 0.2, &mut rng)?;
        let q = DiscreteDist::random(n, 0.2, &mut rng)?;
        let r = kl_tv_pinsker(&p, &q)?;
        report.pinsker.record(r.holds, r.tv - (r.kl / 2.0).sqrt());
    }

    let mut rng = NoiseStream::new(StreamKey::new(seed, Purpose::Theory).lane(2));
    for _ in 0..trials {
        let n = 2 + rng.index(15);
        let inst = TrustRegionInstance::random(n, &mut rng)?;
        let r = reward_lower_bound_check(&inst)?;
        report.reward_bound.record(r.holds, r.rhs - r.lhs);
    }
    Ok(report)
}
