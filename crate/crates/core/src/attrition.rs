//! Stochastic attrition: Gaussian-CDF weapon rates, closest-enemy targeting
//! and the per-step survival product.
//!
//! Each agent's survival over one step is `PS = Π_k (1 - φ_k·dt)` over every
//! threat `k` currently engaging it. One uniform draw is consumed per agent per
//! step and the agent dies when the draw exceeds `PS`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::AgentState;
use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Rate of fire and range scale of a Gaussian-CDF weapon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeaponParams {
    pub rate: f64,
    pub range: f64,
}

impl WeaponParams {
    pub fn new(rate: f64, range: f64) -> Result<Self> {
        let w = WeaponParams { rate, range };
        w.validate("weapon")?;
        Ok(w)
    }

    pub(crate) fn validate(&self, label: &str) -> Result<()> {
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            return Err(Error::invalid(format!("{label}.rate"), "must be finite and >= 0"));
        }
        if !(self.range > 0.0 && self.range.is_finite()) {
            return Err(Error::invalid(format!("{label}.range"), "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Standard normal CDF, `Φ(z) = erfc(-z/√2) / 2`.
///
/// `erfc` comes from the musl-derived `libm` port, which is accurate to about
/// one ulp; the complementary form keeps full relative precision in the lower
/// tail where the attrition rates live.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Attrition rate `2λΦ(-dist/R)` inflicted by one weapon at distance `dist`.
#[inline]
pub fn gaussian_attrition_rate(dist: f64, w: &WeaponParams) -> f64 {
    2.0 * w.rate * std_normal_cdf(-dist / w.range)
}

/// Closest alive enemy to `shooter`; ties go to the lowest id.
pub fn select_closest_target(shooter: &AgentState, enemies: &[AgentState]) -> Option<u32> {
    closest_by(shooter.pos, enemies.iter().filter(|e| e.alive).map(|e| (e.id, e.pos)))
}

pub(crate) fn closest_by<I>(from: Vec2, candidates: I) -> Option<u32>
where
    I: IntoIterator<Item = (u32, Vec2)>,
{
    let mut best: Option<(f64, u32)> = None;
    for (id, pos) in candidates {
        let d = from.distance_sq(pos);
        best = match best {
            Some((bd, bid)) if bd < d || (bd == d && bid < id) => Some((bd, bid)),
            _ => Some((d, id)),
        };
    }
    best.map(|(_, id)| id)
}

/// One factor `1 - φ·dt` of the survival product. Returns the factor and
/// whether it had to be clamped because `φ·dt >= 1`.
#[inline]
pub fn survival_factor(rate: f64, dt: f64) -> (f64, bool) {
    let p = rate * dt;
    if p >= 1.0 {
        (0.0, true)
    } else {
        (1.0 - p, false)
    }
}

/// `Π_k (1 - φ_k·dt)` over the given rates, clamped to `[0, 1]`.
pub fn survival_probability(rates: &[f64], dt: f64) -> f64 {
    let mut ps = 1.0;
    let mut clamped = false;
    for &r in rates {
        let (f, c) = survival_factor(r, dt);
        ps *= f;
        clamped |= c;
    }
    if clamped {
        log::warn!("attrition rate times dt reached 1 (dt = {dt}); time step too coarse, factor clamped to 0");
    }
    ps
}

/// Draws once from `rng` and reports whether the agent survives this step.
pub fn step_survival(rates: &[f64], dt: f64, rng: &mut RngStream) -> bool {
    let ps = survival_probability(rates, dt);
    rng.uniform() <= ps
}

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `index` under `base`. Keyed hashing rather than sequential
/// draws, so a run's stream does not depend on which runs executed before it.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index.wrapping_mul(SPLITMIX_GAMMA).rotate_left(17))
}

/// Seedable, splittable random stream that counts the draws it has handed out.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    draws: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            draws: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn derive(base: u64, index: u64) -> Self {
        Self::new(derive_seed(base, index))
    }

    /// Independent child stream; does not advance `self`.
    pub fn split(&self, index: u64) -> Self {
        Self::derive(self.seed, index)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of draws consumed so far.
    pub fn position(&self) -> u64 {
        self.draws
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        self.rng.random::<f64>()
    }

    /// Uniform in the open interval `(0, 1)`.
    pub fn open01(&mut self) -> f64 {
        self.draws += 1;
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Exponential variate with the given mean.
    pub fn exponential(&mut self, mean: f64) -> f64 {
        -mean * self.open01().ln()
    }

    /// Uniform point in the disk of radius `radius` around `center`.
    pub fn in_disk(&mut self, center: Vec2, radius: f64) -> Vec2 {
        let r = radius * self.uniform().sqrt();
        let a = std::f64::consts::TAU * self.uniform();
        center + Vec2::from_polar(r, a)
    }
}
