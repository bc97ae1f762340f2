//! Second-order agent dynamics.
//!
//! Every agent obeys `m·r̈ = K·û_vl − B·ṙ + Σ F_pair`, where `û_vl` points from
//! the agent toward its virtual leader. Without interactions the speed relaxes
//! to `V = K/B` on the time scale `τ = m/B`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Distance below which an agent is considered to sit on its virtual leader.
pub const LEADER_EPS: f64 = 1e-6;
/// Separation below which pair forces switch to a fixed-magnitude repulsion.
pub const PAIR_EPS: f64 = 1e-3;
/// Upper bound on the magnitude of any single pair force.
pub const PAIR_FORCE_CAP: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Attacker,
    Defender,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: u32,
    pub side: Side,
    pub pos: Vec2,
    pub vel: Vec2,
    pub alive: bool,
}

impl AgentState {
    pub fn new(id: u32, side: Side, pos: Vec2) -> Self {
        AgentState {
            id,
            side,
            pos,
            vel: Vec2::ZERO,
            alive: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub mass: f64,
    pub thrust: f64,
    pub damping: f64,
    pub dt: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        DynamicsParams {
            mass: 1.0,
            thrust: 1.0,
            damping: 1.0,
            dt: 0.01,
        }
    }
}

impl DynamicsParams {
    pub fn new(mass: f64, thrust: f64, damping: f64, dt: f64) -> Result<Self> {
        let p = DynamicsParams {
            mass,
            thrust,
            damping,
            dt,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be finite and > 0, got {v}")))
            }
        };
        check("mass", self.mass)?;
        check("damping", self.damping)?;
        check("dt", self.dt)?;
        if !(self.thrust >= 0.0 && self.thrust.is_finite()) {
            return Err(Error::invalid("thrust", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Terminal speed `V = K/B`.
    pub fn speed_scale(&self) -> f64 {
        self.thrust / self.damping
    }

    /// Acceleration time scale `τ = m/B`.
    pub fn time_scale(&self) -> f64 {
        self.mass / self.damping
    }
}

/// Cohesion/avoidance distances of the pseudo-force laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceLawParams {
    /// Equilibrium spacing.
    pub d0: f64,
    /// Cohesion cutoff.
    pub d1: f64,
    /// Avoidance range.
    pub dr: f64,
}

impl Default for ForceLawParams {
    fn default() -> Self {
        ForceLawParams {
            d0: 2.0,
            d1: 3.0,
            dr: 6.0,
        }
    }
}

impl ForceLawParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d0 > 0.0 && self.d0 < self.d1 && self.d1.is_finite()) {
            return Err(Error::invalid("d0/d1", "require 0 < d0 < d1"));
        }
        if !(self.dr > 0.0 && self.dr.is_finite()) {
            return Err(Error::invalid("dr", "must be > 0"));
        }
        Ok(())
    }
}

/// Thrust of magnitude `thrust` pointing from `pos` toward `leader`.
#[inline]
pub fn thrust_force(pos: Vec2, leader: Vec2, thrust: f64) -> Vec2 {
    let to_leader = leader - pos;
    let dist = to_leader.norm();
    if dist < LEADER_EPS {
        Vec2::ZERO
    } else {
        to_leader * (thrust / dist)
    }
}

/// `(-rel/|rel|²)(1 - d/|rel|)` inside `cutoff`, zero beyond, capped near contact.
#[inline]
fn inverse_pair_law(rel: Vec2, equilibrium: f64, cutoff: f64) -> Vec2 {
    let r2 = rel.norm_sq();
    if r2 >= cutoff * cutoff {
        return Vec2::ZERO;
    }
    let r = r2.sqrt();
    if r < PAIR_EPS {
        // repulsive along rel; coincident agents have no defined direction
        return if r > 0.0 { rel * (PAIR_FORCE_CAP / r) } else { Vec2::ZERO };
    }
    let f = rel * (-(1.0 - equilibrium / r) / r2);
    let mag = f.norm();
    if mag > PAIR_FORCE_CAP {
        f * (PAIR_FORCE_CAP / mag)
    } else {
        f
    }
}

/// Cohesive pair force on an agent displaced by `rel = r_self − r_other`:
/// repulsive inside `d0`, attractive between `d0` and `d1`, zero beyond.
#[inline]
pub fn leonard_pair_force(rel: Vec2, p: &ForceLawParams) -> Vec2 {
    inverse_pair_law(rel, p.d0, p.d1)
}

/// Avoidance force pushing an agent away from an enemy closer than `dr`.
#[inline]
pub fn avoidance_force(rel: Vec2, dr: f64) -> Vec2 {
    inverse_pair_law(rel, dr, dr)
}

/// Velocity-Verlet integrator with linear damping.
///
/// Positions advance with the full-step acceleration; the velocity update uses
/// the half-step velocity in the damping term. External forces are evaluated
/// once per step and cached for the next one, so the integrator must be reused
/// across the steps of one simulation.
#[derive(Debug, Clone, Default)]
pub struct VelocityVerlet {
    forces: Vec<Vec2>,
    primed: bool,
    steps: u64,
}

impl VelocityVerlet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Whether the next step reuses cached start-of-step forces.
    pub fn is_primed(&self) -> bool {
        self.primed
    }

    /// Drops the cached forces; the next step re-evaluates them first.
    pub fn invalidate(&mut self) {
        self.primed = false;
    }

    /// Advances all alive agents by one step of `p.dt`. `field` writes the
    /// external (non-damping) force for every index of `states`; entries for
    /// dead agents are ignored.
    pub fn step<F>(&mut self, states: &mut [AgentState], mut field: F, p: &DynamicsParams) -> Result<()>
    where
        F: FnMut(&[AgentState], &mut [Vec2]),
    {
        let n = states.len();
        if !self.primed || self.forces.len() != n {
            self.forces.clear();
            self.forces.resize(n, Vec2::ZERO);
            field(states, &mut self.forces);
            self.check(states)?;
            self.primed = true;
        }
        let dt = p.dt;
        let inv_m = 1.0 / p.mass;
        for (s, f) in states.iter_mut().zip(&self.forces) {
            if !s.alive {
                continue;
            }
            let acc = (*f - s.vel * p.damping) * inv_m;
            s.pos += s.vel * dt + acc * (0.5 * dt * dt);
            s.vel += acc * (0.5 * dt);
        }
        self.forces.iter_mut().for_each(|f| *f = Vec2::ZERO);
        field(states, &mut self.forces);
        self.steps += 1;
        self.check(states)?;
        for (s, f) in states.iter_mut().zip(&self.forces) {
            if !s.alive {
                continue;
            }
            let acc = (*f - s.vel * p.damping) * inv_m;
            s.vel += acc * (0.5 * dt);
        }
        Ok(())
    }

    fn check(&self, states: &[AgentState]) -> Result<()> {
        for (s, f) in states.iter().zip(&self.forces) {
            if s.alive && !f.is_finite() {
                return Err(Error::NonFiniteForce {
                    agent: s.id,
                    step: self.steps,
                });
            }
        }
        Ok(())
    }
}

/// Stateless single step: evaluates the force field at the start and end of
/// the step. Prefer [`VelocityVerlet`] inside simulation loops.
pub fn verlet_step<F>(states: &mut [AgentState], field: F, p: &DynamicsParams) -> Result<()>
where
    F: FnMut(&[AgentState], &mut [Vec2]),
{
    VelocityVerlet::new().step(states, field, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-12;

    fn close(a: Vec2, b: Vec2, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn thrust_examples() {
        assert!(close(thrust_force(Vec2::ZERO, Vec2::new(5.0, 0.0), 1.0), Vec2::new(1.0, 0.0), TOL));
        assert!(close(thrust_force(Vec2::new(3.0, 4.0), Vec2::ZERO, 1.0), Vec2::new(-0.6, -0.8), TOL));
        assert_eq!(thrust_force(Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0), 1.0), Vec2::ZERO);
    }

    #[test]
    fn leonard_examples() {
        let p = ForceLawParams::default();
        assert_eq!(leonard_pair_force(Vec2::new(2.0, 0.0), &p), Vec2::ZERO);
        assert_eq!(leonard_pair_force(Vec2::new(0.0, 3.0), &p), Vec2::ZERO);
        assert_eq!(leonard_pair_force(Vec2::new(0.0, 3.5), &p), Vec2::ZERO);
        // -(2.5, 0)/2.5² · (1 - 2/2.5) = (-0.08, 0)
        let f = leonard_pair_force(Vec2::new(2.5, 0.0), &p);
        assert!(close(f, Vec2::new(-0.08, 0.0), TOL), "{f:?}");
        // repulsive inside d0
        assert!(leonard_pair_force(Vec2::new(1.0, 0.0), &p).x > 0.0);
    }

    #[test]
    fn avoidance_examples() {
        assert_eq!(avoidance_force(Vec2::new(6.0, 0.0), 6.0), Vec2::ZERO);
        assert_eq!(avoidance_force(Vec2::new(0.0, 10.0), 6.0), Vec2::ZERO);
        let f = avoidance_force(Vec2::new(3.0, 0.0), 6.0);
        // -(3, 0)/9 · (1 - 6/3) = (1/3, 0)
        assert!(close(f, Vec2::new(1.0 / 3.0, 0.0), TOL), "{f:?}");
    }

    #[test]
    fn near_contact_is_capped_repulsion() {
        let p = ForceLawParams::default();
        let f = leonard_pair_force(Vec2::new(1e-4, 0.0), &p);
        assert!((f.norm() - PAIR_FORCE_CAP).abs() < 1e-9 && f.x > 0.0);
        let g = leonard_pair_force(Vec2::new(0.01, 0.0), &p);
        assert!(g.norm() <= PAIR_FORCE_CAP + 1e-9 && g.x > 0.0);
        assert_eq!(avoidance_force(Vec2::ZERO, 6.0), Vec2::ZERO);
    }

    #[test]
    fn free_flight_step() {
        let mut s = [AgentState::new(0, Side::Attacker, Vec2::ZERO)];
        s[0].vel = Vec2::new(1.0, 0.0);
        let p = DynamicsParams {
            damping: 0.0,
            ..DynamicsParams::default()
        };
        verlet_step(&mut s, |_, _| {}, &DynamicsParams { dt: 0.1, ..p }).unwrap();
        assert!(close(s[0].pos, Vec2::new(0.1, 0.0), TOL));
        assert!(close(s[0].vel, Vec2::new(1.0, 0.0), TOL));
    }

    #[test]
    fn dead_agents_are_untouched() {
        let mut s = [AgentState::new(0, Side::Attacker, Vec2::new(1.0, 2.0))];
        s[0].vel = Vec2::new(3.0, 3.0);
        s[0].alive = false;
        let before = s;
        verlet_step(&mut s, |_, f| f[0] = Vec2::new(5.0, 5.0), &DynamicsParams::default()).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn non_finite_force_aborts() {
        let mut s = [AgentState::new(4, Side::Defender, Vec2::ZERO)];
        let err = verlet_step(&mut s, |_, f| f[0] = Vec2::new(f64::NAN, 0.0), &DynamicsParams::default())
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteForce { agent: 4, .. }));
    }

    #[test]
    fn params_validation() {
        assert!(DynamicsParams::new(1.0, 1.0, 0.0, 0.01).is_err());
        assert!(DynamicsParams::new(0.0, 1.0, 1.0, 0.01).is_err());
        let p = DynamicsParams::new(2.0, 3.0, 4.0, 0.01).unwrap();
        assert_eq!(p.speed_scale(), 0.75);
        assert_eq!(p.time_scale(), 0.5);
        assert!(ForceLawParams { d0: 3.0, d1: 2.0, dr: 6.0 }.validate().is_err());
    }
}
