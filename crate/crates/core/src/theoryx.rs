//! Numerical checks of the guidance optimum and the selective trust-region
//! reward bound on small discrete spaces.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::NoiseStream;

pub const MAX_SUPPORT: usize = 64;

/// Probability vector on `{0, .., n-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDist(Vec<f64>);

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.len() > MAX_SUPPORT {
            return Err(Error::InvalidInstance("support size must lie in 1..=64"));
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidInstance("probabilities must be finite and nonnegative"));
        }
        if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInstance("probabilities must sum to 1"));
        }
        Ok(Self(probs))
    }

    /// Normalized exponential weights; each entry is zeroed with
    /// probability `zero_prob` (at least one entry stays positive).
    pub fn random(n: usize, zero_prob: f64, rng: &mut NoiseStream) -> Result<Self> {
        if n == 0 || n > MAX_SUPPORT {
            return Err(Error::InvalidInstance("support size must lie in 1..=64"));
        }
        let mut w: Vec<f64> = (0..n)
            .map(|_| {
                let e = -libm::log(1.0 - rng.uniform());
                if rng.uniform() < zero_prob {
                    0.0
                } else {
                    e
                }
            })
            .collect();
        if w.iter().all(|v| *v == 0.0) {
            w[rng.index(n)] = 1.0;
        }
        let total: f64 = w.iter().sum();
        Self::new(w.into_iter().map(|v| v / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mass(&self, region: &[bool]) -> f64 {
        self.0.iter().zip(region).filter(|(_, &u)| u).map(|(p, _)| p).sum()
    }

    pub fn expect(&self, f: &[f64]) -> f64 {
        self.0.iter().zip(f).map(|(p, v)| p * v).sum()
    }

    /// The distribution conditioned on `region`; `None` if it has no mass.
    pub fn conditional(&self, region: &[bool]) -> Option<Self> {
        let m = self.mass(region);
        if m <= 0.0 {
            return None;
        }
        let probs: Vec<f64> = self
            .0
            .iter()
            .zip(region)
            .map(|(p, &u)| if u { p / m } else { 0.0 })
            .collect();
        let total: f64 = probs.iter().sum();
        Some(Self(probs.into_iter().map(|p| p / total).collect()))
    }
}

/// Total variation and natural-log KL between two distributions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PinskerReport {
    pub tv: f64,
    /// `+inf` when `q` vanishes somewhere `p` does not.
    pub kl: f64,
    /// `tv <= sqrt(kl / 2) + 1e-12`.
    pub holds: bool,
}

pub fn total_variation(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    same_support(p, q)?;
    Ok(0.5 * p.0.iter().zip(&q.0).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

pub fn kl_divergence(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    same_support(p, q)?;
    let mut kl = 0.0;
    for (&a, &b) in p.0.iter().zip(&q.0) {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Ok(f64::INFINITY);
        }
        kl += a * libm::log(a / b);
    }
    Ok(kl.max(0.0))
}

fn same_support(p: &DiscreteDist, q: &DiscreteDist) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::Shape {
            what: "distribution support",
            expected: p.len(),
            got: q.len(),
        });
    }
    Ok(())
}

pub fn kl_tv_pinsker(p: &DiscreteDist, q: &DiscreteDist) -> Result<PinskerReport> {
    let tv = total_variation(p, q)?;
    let kl = kl_divergence(p, q)?;
    Ok(PinskerReport {
        tv,
        kl,
        holds: tv <= libm::sqrt(kl / 2.0) + 1e-12,
    })
}

/// Positive and negative targets mixed by the posterior positive
/// probability `alpha`: `v_old = alpha v+ + (1 - alpha) v-`.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceInstance {
    pub alpha: f64,
    pub beta: f64,
    pub v_old: Vec<f64>,
    pub v_plus: Vec<f64>,
    pub v_minus: Vec<f64>,
}

impl GuidanceInstance {
    pub fn new(alpha: f64, beta: f64, v_plus: Vec<f64>, v_minus: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidInstance("alpha must lie in [0, 1]"));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidInstance("beta must be positive"));
        }
        if v_plus.len() != v_minus.len() {
            return Err(Error::Shape {
                what: "negative target",
                expected: v_plus.len(),
                got: v_minus.len(),
            });
        }
        let v_old = v_plus
            .iter()
            .zip(&v_minus)
            .map(|(p, m)| alpha * p + (1.0 - alpha) * m)
            .collect();
        Ok(Self {
            alpha,
            beta,
            v_old,
            v_plus,
            v_minus,
        })
    }

    /// Targets of labelled samples: `v+` and `v-` are the `r`- and
    /// `(1 - r)`-weighted sample means, `v_old` the plain mean, and `alpha`
    /// the mean label.
    pub fn from_labelled_samples(samples: &[Vec<f64>], labels: &[f64], beta: f64) -> Result<Self> {
        if samples.is_empty() || samples.len() != labels.len() {
            return Err(Error::InvalidInstance("need one label per sample"));
        }
        if labels.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidInstance("labels must lie in [0, 1]"));
        }
        let dim = samples[0].len();
        let n = samples.len() as f64;
        let pos: f64 = labels.iter().sum();
        let neg = n - pos;
        if pos <= 0.0 || neg <= 0.0 {
            return Err(Error::Degenerate("labels must not be all 0 or all 1"));
        }
        let mut v_plus = alloc::vec![0.0; dim];
        let mut v_minus = alloc::vec![0.0; dim];
        let mut v_old = alloc::vec![0.0; dim];
        for (x, &r) in samples.iter().zip(labels) {
            if x.len() != dim {
                return Err(Error::Shape {
                    what: "sample",
                    expected: dim,
                    got: x.len(),
                });
            }
            for j in 0..dim {
                v_plus[j] += r * x[j] / pos;
                v_minus[j] += (1.0 - r) * x[j] / neg;
                v_old[j] += x[j] / n;
            }
        }
        if !(beta > 0.0) {
            return Err(Error::InvalidInstance("beta must be positive"));
        }
        Ok(Self {
            alpha: pos / n,
            beta,
            v_old,
            v_plus,
            v_minus,
        })
    }

    /// `|v - v+|^2 + beta |v - v-|^2`.
    pub fn loss(&self, v: &[f64]) -> f64 {
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        sq(v, &self.v_plus) + self.beta * sq(v, &self.v_minus)
    }
}

/// `(1 - alpha (1 + beta)) / ((1 + beta) (1 - alpha))`.
pub fn shift_coefficient(alpha: f64, beta: f64) -> Result<f64> {
    if alpha == 1.0 {
        return Err(Error::Degenerate("alpha = 1 leaves no negative mass"));
    }
    Ok((1.0 - alpha * (1.0 + beta)) / ((1.0 + beta) * (1.0 - alpha)))
}

pub fn optimal_velocity_closed_form(inst: &GuidanceInstance) -> Result<Vec<f64>> {
    let c = shift_coefficient(inst.alpha, inst.beta)?;
    Ok(inst
        .v_old
        .iter()
        .zip(&inst.v_plus)
        .map(|(o, p)| o + c * (p - o))
        .collect())
}

/// Minimizes [`GuidanceInstance::loss`] along `v_old + c (v+ - v_old)` by
/// golden-section search, then polishes with one parabolic step.
pub fn optimal_velocity_numeric(inst: &GuidanceInstance) -> Result<Vec<f64>> {
    if inst.alpha == 1.0 {
        return Err(Error::Degenerate("alpha = 1 leaves no negative mass"));
    }
    let delta: Vec<f64> = inst.v_plus.iter().zip(&inst.v_old).map(|(p, o)| p - o).collect();
    if delta.iter().all(|d| *d == 0.0) {
        return Ok(inst.v_old.clone());
    }
    let at = |c: f64| -> Vec<f64> { inst.v_old.iter().zip(&delta).map(|(o, d)| o + c * d).collect() };
    let f = |c: f64| inst.loss(&at(c));

    let (mut lo, mut hi) = (-1.0, 1.0);
    while f(lo) < f(0.5 * lo) {
        lo *= 2.0;
    }
    while f(hi) < f(0.5 * hi) {
        hi *= 2.0;
    }
    let g = (libm::sqrt(5.0) - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if hi - lo < 1e-12 {
            break;
        }
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        }
    }
    let c = 0.5 * (lo + hi);
    let h = 1e-2;
    let (fm, f0, fp) = (f(c - h), f(c), f(c + h));
    let curvature = fp - 2.0 * f0 + fm;
    let c = if curvature > 0.0 {
        c - h * (fp - fm) / (2.0 * curvature)
    } else {
        c
    };
    Ok(at(c))
}

/// `|v_old - (alpha v+ + (1 - alpha) v-)|`.
pub fn mixture_residual(inst: &GuidanceInstance) -> f64 {
    let a = inst.alpha;
    libm::sqrt(
        inst.v_old
            .iter()
            .zip(&inst.v_plus)
            .zip(&inst.v_minus)
            .map(|((o, p), m)| {
                let r = o - (a * p + (1.0 - a) * m);
                r * r
            })
            .sum(),
    )
}

/// Discrete setting for the selective trust-region reward bound.
#[derive(Clone, Debug, PartialEq)]
pub struct TrustRegionInstance {
    pub pi_theta: DiscreteDist,
    pub pi_ref: DiscreteDist,
    pub true_reward: Vec<f64>,
    pub proxy_reward: Vec<f64>,
    /// Membership in the high-uncertainty region.
    pub risky: Vec<bool>,
    pub r_max: f64,
    pub eps_safe: f64,
    pub eps_risk: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `2 KL(pi_theta | risky || pi_ref | risky)`.
    pub l_kl: f64,
    pub risky_mass: f64,
    pub holds: bool,
}

impl TrustRegionInstance {
    /// Checks the bound's premises: both rewards bounded by `r_max`, the
    /// proxy within `eps_safe` outside the risky region, and its mean error
    /// there under `pi_ref` within `eps_risk`.
    pub fn validate(&self) -> Result<()> {
        let n = self.pi_theta.len();
        if [
            self.pi_ref.len(),
            self.true_reward.len(),
            self.proxy_reward.len(),
            self.risky.len(),
        ]
        .iter()
        .any(|&l| l != n)
        {
            return Err(Error::InvalidInstance("all vectors must share the support size"));
        }
        let slack = 1e-12;
        if self
            .true_reward
            .iter()
            .chain(&self.proxy_reward)
            .any(|r| !(r.abs() <= self.r_max + slack))
        {
            return Err(Error::InvalidInstance("rewards must be bounded by r_max"));
        }
        for i in 0..n {
            if !self.risky[i] && (self.proxy_reward[i] - self.true_reward[i]).abs() > self.eps_safe + slack {
                return Err(Error::InvalidInstance(
                    "proxy error outside the risky region exceeds eps_safe",
                ));
            }
        }
        if let Some(cond) = self.pi_ref.conditional(&self.risky) {
            if cond.expect(&self.abs_error()) > self.eps_risk + slack {
                return Err(Error::InvalidInstance("reference risk-region error exceeds eps_risk"));
            }
        } else if self.pi_theta.mass(&self.risky) > 0.0 {
            return Err(Error::InvalidInstance("reference has no mass on the risky region"));
        }
        Ok(())
    }

    fn abs_error(&self) -> Vec<f64> {
        self.proxy_reward
            .iter()
            .zip(&self.true_reward)
            .map(|(a, b)| (a - b).abs())
            .collect()
    }

    /// Random instance of support `n` with `r_max = 1`; `eps_safe` and
    /// `eps_risk` are the tightest values the construction allows plus a
    /// random nonnegative slack.
    pub fn random(n: usize, rng: &mut NoiseStream) -> Result<Self> {
        let pi_theta = DiscreteDist::random(n, 0.0, rng)?;
        let pi_ref = DiscreteDist::random(n, 0.0, rng)?;
        let true_reward: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let risky: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.4).collect();
        let safe_noise = 0.1 * rng.uniform();
        let proxy_reward: Vec<f64> = true_reward
            .iter()
            .zip(&risky)
            .map(|(&r, &u)| {
                if u {
                    rng.uniform_in(-1.0, 1.0)
                } else {
                    (r + rng.uniform_in(-safe_noise, safe_noise)).clamp(-1.0, 1.0)
                }
            })
            .collect();
        let mut inst = Self {
            pi_theta,
            pi_ref,
            true_reward,
            proxy_reward,
            risky,
            r_max: 1.0,
            eps_safe: 0.0,
            eps_risk: 0.0,
        };
        let err = inst.abs_error();
        inst.eps_safe = err
            .iter()
            .zip(&inst.risky)
            .filter(|(_, &u)| !u)
            .map(|(e, _)| *e)
            .fold(0.0, f64::max)
            + 0.01 * rng.uniform();
        inst.eps_risk = inst.pi_ref.conditional(&inst.risky).map_or(0.0, |c| c.expect(&err)) + 0.01 * rng.uniform();
        inst.validate()?;
        Ok(inst)
    }
}

/// Evaluates `E[R*] >= E[R^] - eps_safe - pi(U) (eps_risk + 2 r_max sqrt(L))`
/// under `pi_theta`, with `L` twice the KL between the two policies
/// conditioned on the risky region.
pub fn reward_lower_bound_check(inst: &TrustRegionInstance) -> Result<BoundReport> {
    inst.validate()?;
    let risky_mass = inst.pi_theta.mass(&inst.risky);
    let l_kl = match (
        inst.pi_theta.conditional(&inst.risky),
        inst.pi_ref.conditional(&inst.risky),
    ) {
        (Some(p), Some(q)) => 2.0 * kl_divergence(&p, &q)?,
        _ => 0.0,
    };
    let lhs = inst.pi_theta.expect(&inst.true_reward);
    let rhs = inst.pi_theta.expect(&inst.proxy_reward)
        - inst.eps_safe
        - risky_mass * (inst.eps_risk + 2.0 * inst.r_max * libm::sqrt(l_kl));
    Ok(BoundReport {
        lhs,
        rhs,
        l_kl,
        risky_mass,
        holds: lhs >= rhs - 1e-12,
    })
}
