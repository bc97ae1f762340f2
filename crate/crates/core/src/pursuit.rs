//! Defenders hunting down attackers that scatter from a common origin.
//!
//! Attackers leave the scatter origin at `t = 0` on straight lines with random
//! speed and heading and never manoeuvre. Defenders start clustered at the HVU
//! a distance `D` down range. Every step a global auction assigns defenders to
//! attackers and each defender steers toward the intercept point of its
//! target. An attacker within `R` of any defender is destroyed instantly.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attrition::{derive_seed, RngStream};
use crate::dynamics::{leonard_pair_force, thrust_force, AgentState, DynamicsParams, ForceLawParams, Side, VelocityVerlet};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::params::{as_count, as_switch, switch, Scenario, ScenarioParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PursuitParams {
    pub n_attackers: usize,
    pub n_defenders: usize,
    /// Attacker speeds are uniform on `(0, V_a)`.
    pub attacker_speed: f64,
    /// Defender terminal speed `V_d = K/B`.
    pub defender_speed: f64,
    /// Hard-kill radius `R`.
    pub kill_radius: f64,
    /// Defender acceleration time scale `τ = m/B`.
    pub tau: f64,
    /// Unit length `d`.
    pub unit: f64,
    /// Scatter origin to HVU distance; `None` means `40·d`.
    pub separation: Option<f64>,
    /// Radius of the initial defender disk; `None` means `0.5·√N_d·d`.
    pub formation_radius: Option<f64>,
    pub dt: f64,
    /// Cohesive forces between defenders (off in the reference scenario).
    pub pair_forces: bool,
    /// Time limit; `None` means `100·D/(V_d − V_a)`.
    pub t_max: Option<f64>,
    pub ensemble: usize,
    pub base_seed: u64,
}

impl Default for PursuitParams {
    fn default() -> Self {
        PursuitParams {
            n_attackers: 32,
            n_defenders: 24,
            attacker_speed: 0.4,
            defender_speed: 1.0,
            kill_radius: 1.2,
            tau: 5.0,
            unit: 1.0,
            separation: None,
            formation_radius: None,
            dt: 0.05,
            pair_forces: false,
            t_max: None,
            ensemble: 10,
            base_seed: 0,
        }
    }
}

impl PursuitParams {
    pub fn d(&self) -> f64 {
        self.separation.unwrap_or(40.0 * self.unit)
    }

    pub fn formation(&self) -> f64 {
        self.formation_radius
            .unwrap_or(0.5 * (self.n_defenders as f64).sqrt() * self.unit)
    }

    /// Speed ratio `v = V_d/V_a`.
    pub fn speed_ratio(&self) -> f64 {
        self.defender_speed / self.attacker_speed
    }

    pub fn effective_t_max(&self) -> f64 {
        self.t_max.unwrap_or_else(|| {
            let closing = self.defender_speed - self.attacker_speed;
            if closing > 0.0 {
                100.0 * self.d() / closing
            } else {
                100.0 * self.d() / self.defender_speed
            }
        })
    }

    pub fn hvu(&self) -> Vec2 {
        Vec2::new(self.d(), 0.0)
    }

    /// Defender dynamics with `B = 1`, `K = V_d`, `m = τ`.
    pub fn dynamics(&self) -> DynamicsParams {
        DynamicsParams {
            mass: self.tau,
            thrust: self.defender_speed,
            damping: 1.0,
            dt: self.dt,
        }
    }

    fn force_law(&self) -> ForceLawParams {
        let d0 = 2.0 * self.unit;
        ForceLawParams {
            d0,
            d1: 1.5 * d0,
            dr: 3.0 * d0,
        }
    }
}

const PURSUIT_NAMES: &[&str] = &[
    "N_a",
    "N_d",
    "V_a",
    "V_d",
    "R",
    "tau",
    "d",
    "D",
    "formation_radius",
    "dt",
    "pair_forces",
    "t_max",
];

impl ScenarioParams for PursuitParams {
    const SCENARIO: Scenario = Scenario::Pursuit;

    fn names() -> &'static [&'static str] {
        PURSUIT_NAMES
    }

    fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "N_a" => self.n_attackers as f64,
            "N_d" => self.n_defenders as f64,
            "V_a" => self.attacker_speed,
            "V_d" => self.defender_speed,
            "R" => self.kill_radius,
            "tau" => self.tau,
            "d" => self.unit,
            "D" => self.d(),
            "formation_radius" => self.formation(),
            "dt" => self.dt,
            "pair_forces" => switch(self.pair_forces),
            "t_max" => self.effective_t_max(),
            _ => return None,
        })
    }

    fn set(&mut self, name: &str, v: f64) -> Result<()> {
        match name {
            "N_a" => self.n_attackers = as_count(name, v)?,
            "N_d" => self.n_defenders = as_count(name, v)?,
            "V_a" => self.attacker_speed = v,
            "V_d" => self.defender_speed = v,
            "R" => self.kill_radius = v,
            "tau" => self.tau = v,
            "d" => self.unit = v,
            "D" => self.separation = Some(v),
            "formation_radius" => self.formation_radius = Some(v),
            "dt" => self.dt = v,
            "pair_forces" => self.pair_forces = as_switch(name, v)?,
            "t_max" => self.t_max = Some(v),
            _ => return Err(Self::unknown(name)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be finite and > 0, got {v}")))
            }
        };
        if self.n_attackers < 1 {
            return Err(Error::invalid("N_a", "at least one attacker is required"));
        }
        if self.n_defenders < 1 {
            return Err(Error::invalid("N_d", "at least one defender is required"));
        }
        if !(self.attacker_speed >= 0.0 && self.attacker_speed.is_finite()) {
            return Err(Error::invalid("V_a", "must be finite and >= 0"));
        }
        positive("V_d", self.defender_speed)?;
        positive("R", self.kill_radius)?;
        positive("tau", self.tau)?;
        positive("d", self.unit)?;
        positive("D", self.d())?;
        positive("dt", self.dt)?;
        positive("t_max", self.effective_t_max())?;
        if !(self.formation() >= 0.0) {
            return Err(Error::invalid("formation_radius", "must be >= 0"));
        }
        if self.ensemble < 1 {
            return Err(Error::invalid("ensemble", "must be >= 1"));
        }
        Ok(())
    }
}

/// Constant attacker velocities: speed uniform on `(0, V_a)`, heading uniform
/// on `(−π/4, π/4)` about the HVU direction (+x).
pub fn scatter_attackers(p: &PursuitParams, rng: &mut RngStream) -> Vec<Vec2> {
    (0..p.n_attackers)
        .map(|_| {
            let speed = p.attacker_speed * rng.open01();
            let heading = (2.0 * rng.open01() - 1.0) * std::f64::consts::FRAC_PI_4;
            Vec2::from_polar(speed, heading)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Intercept {
    pub point: Vec2,
    /// Time to intercept; `None` when the target cannot be caught.
    pub time: Option<f64>,
    /// No intercept exists, `point` is the target's current position.
    pub fallback: bool,
}

/// Point where a pursuer moving at `speed` in a straight line meets a target
/// moving at constant velocity: the smallest `t > 0` with
/// `|p + v·t − q| = speed·t`.
pub fn intercept_point(target_pos: Vec2, target_vel: Vec2, pursuer_pos: Vec2, speed: f64) -> Intercept {
    let rel = target_pos - pursuer_pos;
    let c = rel.norm_sq();
    if c == 0.0 {
        return Intercept {
            point: target_pos,
            time: Some(0.0),
            fallback: false,
        };
    }
    let a = target_vel.norm_sq() - speed * speed;
    let b = 2.0 * rel.dot(target_vel);
    let mut best: Option<f64> = None;
    let mut consider = |t: f64| {
        if t > 0.0 && t.is_finite() && best.is_none_or(|bt| t < bt) {
            best = Some(t);
        }
    };
    let scale = target_vel.norm_sq().max(speed * speed);
    if a.abs() <= 1e-14 * scale {
        if b < 0.0 {
            consider(-c / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let q = -0.5 * (b + b.signum() * disc.sqrt());
            if q != 0.0 {
                consider(q / a);
                consider(c / q);
            }
        }
    }
    match best {
        Some(t) => Intercept {
            point: target_pos + target_vel * t,
            time: Some(t),
            fallback: false,
        },
        None => Intercept {
            point: target_pos,
            time: None,
            fallback: true,
        },
    }
}

/// Defender → attacker targeting.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Assignment {
    pub targets: BTreeMap<u32, u32>,
}

/// Index-level auction. Attackers farthest from `origin` pick first, each
/// taking its closest unassigned defender; defenders left over then take their
/// closest attacker. Returns one target index per defender.
pub(crate) fn auction_indices(attackers: &[(u32, Vec2)], defenders: &[(u32, Vec2)], origin: Vec2, out: &mut Vec<Option<usize>>) {
    out.clear();
    out.resize(defenders.len(), None);
    if attackers.is_empty() {
        return;
    }
    let mut order: Vec<usize> = (0..attackers.len()).collect();
    order.sort_by(|&i, &j| {
        let di = attackers[i].1.distance_sq(origin);
        let dj = attackers[j].1.distance_sq(origin);
        dj.total_cmp(&di).then(attackers[i].0.cmp(&attackers[j].0))
    });
    let mut free = defenders.len();
    for &ai in &order {
        if free == 0 {
            break;
        }
        let apos = attackers[ai].1;
        let mut best: Option<(f64, u32, usize)> = None;
        for (k, &(id, pos)) in defenders.iter().enumerate() {
            if out[k].is_some() {
                continue;
            }
            let d = apos.distance_sq(pos);
            if best.is_none_or(|(bd, bid, _)| d < bd || (d == bd && id < bid)) {
                best = Some((d, id, k));
            }
        }
        if let Some((_, _, k)) = best {
            out[k] = Some(ai);
            free -= 1;
        }
    }
    for (k, &(_, pos)) in defenders.iter().enumerate() {
        if out[k].is_none() {
            let mut best: Option<(f64, u32, usize)> = None;
            for (ai, &(id, apos)) in attackers.iter().enumerate() {
                let d = pos.distance_sq(apos);
                if best.is_none_or(|(bd, bid, _)| d < bd || (d == bd && id < bid)) {
                    best = Some((d, id, ai));
                }
            }
            out[k] = best.map(|b| b.2);
        }
    }
}

/// Global auction over the alive agents; see [`auction_indices`].
pub fn auction_assign(attackers: &[AgentState], defenders: &[AgentState], origin: Vec2) -> Assignment {
    let att: Vec<(u32, Vec2)> = attackers.iter().filter(|a| a.alive).map(|a| (a.id, a.pos)).collect();
    let def: Vec<(u32, Vec2)> = defenders.iter().filter(|d| d.alive).map(|d| (d.id, d.pos)).collect();
    let mut idx = Vec::new();
    auction_indices(&att, &def, origin, &mut idx);
    Assignment {
        targets: def
            .iter()
            .zip(&idx)
            .filter_map(|(d, t)| t.map(|ai| (d.0, att[ai].0)))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PursuitOutcome {
    /// Time of the last kill.
    pub t_k: f64,
    pub kills: usize,
    /// Fraction of attackers alive at the end (0 unless timed out).
    pub p_a: f64,
    pub timed_out: bool,
    /// Some defender had no intercept solution and fell back to pure pursuit.
    pub fallback: bool,
}

impl PursuitOutcome {
    pub fn flags(&self) -> Vec<&'static str> {
        let mut f = Vec::new();
        if self.timed_out {
            f.push("timeout");
        }
        if self.fallback {
            f.push("fallback");
        }
        f
    }
}

/// Positions sampled during a run: one row per sample time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PursuitTrace {
    pub times: Vec<f64>,
    pub defenders: Vec<Vec<Vec2>>,
    pub attackers: Vec<Vec<Vec2>>,
    pub attacker_alive: Vec<Vec<bool>>,
    pub attacker_velocities: Vec<Vec2>,
}

#[derive(Debug, Clone)]
pub struct Pursuit {
    params: PursuitParams,
    attackers: Vec<AgentState>,
    defenders: Vec<AgentState>,
    integrator: VelocityVerlet,
    time: f64,
    steps: u64,
    t_k: f64,
    kills: usize,
    fallback: bool,
    outcome: Option<PursuitOutcome>,
    targets: Vec<Option<usize>>,
}

impl Pursuit {
    pub fn new(params: PursuitParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = RngStream::new(seed);
        let vel = scatter_attackers(&params, &mut rng);
        Self::with_rng(params, vel, &mut rng)
    }

    /// Starts a run with given attacker velocities; defender placement still
    /// draws from `seed`.
    pub fn with_attackers(params: PursuitParams, velocities: Vec<Vec2>, seed: u64) -> Result<Self> {
        params.validate()?;
        if velocities.len() != params.n_attackers {
            return Err(Error::invalid("velocities", format!("expected {} entries", params.n_attackers)));
        }
        Self::with_rng(params, velocities, &mut RngStream::new(seed))
    }

    /// Starts a run from explicit attacker velocities and defender positions.
    pub fn with_agents(params: PursuitParams, velocities: Vec<Vec2>, defenders: Vec<Vec2>) -> Result<Self> {
        params.validate()?;
        if velocities.len() != params.n_attackers || defenders.len() != params.n_defenders {
            return Err(Error::invalid("agents", "counts must match N_a and N_d"));
        }
        Self::assemble(params, velocities, defenders)
    }

    fn with_rng(params: PursuitParams, velocities: Vec<Vec2>, rng: &mut RngStream) -> Result<Self> {
        let hvu = params.hvu();
        let rf = params.formation();
        let defenders = (0..params.n_defenders).map(|_| rng.in_disk(hvu, rf)).collect();
        Self::assemble(params, velocities, defenders)
    }

    fn assemble(params: PursuitParams, velocities: Vec<Vec2>, positions: Vec<Vec2>) -> Result<Self> {
        let attackers = velocities
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let mut a = AgentState::new(i as u32, Side::Attacker, Vec2::ZERO);
                a.vel = v;
                a
            })
            .collect();
        let na = params.n_attackers;
        let defenders = positions
            .into_iter()
            .enumerate()
            .map(|(j, pos)| AgentState::new((na + j) as u32, Side::Defender, pos))
            .collect();
        let mut s = Pursuit {
            params,
            attackers,
            defenders,
            integrator: VelocityVerlet::new(),
            time: 0.0,
            steps: 0,
            t_k: 0.0,
            kills: 0,
            fallback: false,
            outcome: None,
            targets: Vec::new(),
        };
        s.resolve_kills();
        s.check_done();
        Ok(s)
    }

    pub fn params(&self) -> &PursuitParams {
        &self.params
    }

    pub fn attackers(&self) -> &[AgentState] {
        &self.attackers
    }

    pub fn defenders(&self) -> &[AgentState] {
        &self.defenders
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn outcome(&self) -> Option<PursuitOutcome> {
        self.outcome
    }

    /// Current defender → attacker targeting.
    pub fn assignment(&self) -> Assignment {
        auction_assign(&self.attackers, &self.defenders, Vec2::ZERO)
    }

    pub fn step(&mut self) -> Result<Option<PursuitOutcome>> {
        if self.outcome.is_some() {
            return Ok(self.outcome);
        }
        let p = &self.params;
        let dt = p.dt;
        let mut eval_times = if self.integrator.is_primed() {
            vec![self.time + dt]
        } else {
            vec![self.time, self.time + dt]
        }
        .into_iter();
        let attackers = &self.attackers;
        let targets = &mut self.targets;
        let fallback = &mut self.fallback;
        let law = p.force_law();
        let field = |defs: &[AgentState], out: &mut [Vec2]| {
            let t = eval_times.next().expect("two force evaluations per step at most");
            let att: Vec<(u32, Vec2)> = attackers
                .iter()
                .filter(|a| a.alive)
                .map(|a| (a.id, a.vel * t))
                .collect();
            let att_vel: Vec<Vec2> = attackers.iter().filter(|a| a.alive).map(|a| a.vel).collect();
            let alive_defs: Vec<usize> = (0..defs.len()).filter(|&k| defs[k].alive).collect();
            let def: Vec<(u32, Vec2)> = alive_defs.iter().map(|&k| (defs[k].id, defs[k].pos)).collect();
            auction_indices(&att, &def, Vec2::ZERO, targets);
            for (slot, &k) in alive_defs.iter().enumerate() {
                let d = &defs[k];
                let mut f = match targets[slot] {
                    Some(ai) => {
                        let ic = intercept_point(att[ai].1, att_vel[ai], d.pos, p.defender_speed);
                        *fallback |= ic.fallback;
                        thrust_force(d.pos, ic.point, p.defender_speed)
                    }
                    None => Vec2::ZERO,
                };
                if p.pair_forces {
                    for &o in &alive_defs {
                        if o != k {
                            f += leonard_pair_force(d.pos - defs[o].pos, &law);
                        }
                    }
                }
                out[k] = f;
            }
        };
        self.integrator.step(&mut self.defenders, field, &p.dynamics())?;
        self.steps += 1;
        self.time = self.steps as f64 * dt;
        let t = self.time;
        for a in &mut self.attackers {
            a.pos = a.vel * t;
        }
        if self.resolve_kills() {
            self.integrator.invalidate();
        }
        self.check_done();
        Ok(self.outcome)
    }

    pub fn run(mut self) -> Result<PursuitOutcome> {
        loop {
            if let Some(o) = self.step()? {
                return Ok(o);
            }
        }
    }

    /// Runs to completion, sampling positions every `every` steps (and at the end).
    pub fn run_traced(mut self, every: usize) -> Result<(PursuitOutcome, PursuitTrace)> {
        let every = every.max(1) as u64;
        let mut trace = PursuitTrace {
            attacker_velocities: self.attackers.iter().map(|a| a.vel).collect(),
            ..Default::default()
        };
        let record = |s: &Self, tr: &mut PursuitTrace| {
            tr.times.push(s.time);
            tr.defenders.push(s.defenders.iter().map(|d| d.pos).collect());
            tr.attackers.push(s.attackers.iter().map(|a| a.pos).collect());
            tr.attacker_alive.push(s.attackers.iter().map(|a| a.alive).collect());
        };
        record(&self, &mut trace);
        loop {
            let done = self.step()?;
            if self.steps % every == 0 || done.is_some() {
                record(&self, &mut trace);
            }
            if let Some(o) = done {
                return Ok((o, trace));
            }
        }
    }

    fn resolve_kills(&mut self) -> bool {
        let r2 = self.params.kill_radius * self.params.kill_radius;
        let mut any = false;
        for a in self.attackers.iter_mut().filter(|a| a.alive) {
            if self.defenders.iter().any(|d| d.alive && d.pos.distance_sq(a.pos) <= r2) {
                a.alive = false;
                self.kills += 1;
                any = true;
            }
        }
        if any {
            self.t_k = self.time;
        }
        any
    }

    fn check_done(&mut self) {
        let alive = self.attackers.iter().filter(|a| a.alive).count();
        let timeout = self.time >= self.params.effective_t_max() * (1.0 - 1e-12);
        if alive == 0 || timeout {
            if timeout && alive > 0 {
                log::warn!(
                    "pursuit: time limit {} reached with {alive} attackers alive",
                    self.params.effective_t_max()
                );
            }
            self.outcome = Some(PursuitOutcome {
                t_k: if alive == 0 { self.t_k } else { self.time },
                kills: self.kills,
                p_a: alive as f64 / self.params.n_attackers as f64,
                timed_out: alive > 0,
                fallback: self.fallback,
            });
        }
    }
}

pub fn run_pursuit(p: &PursuitParams, seed: u64) -> Result<PursuitOutcome> {
    Pursuit::new(p.clone(), seed)?.run()
}

/// Mean `t_k` over `p.ensemble` runs seeded from `p.base_seed`.
pub fn ensemble_tk(p: &PursuitParams) -> Result<f64> {
    p.validate()?;
    let vals: Vec<f64> = (0..p.ensemble as u64)
        .into_par_iter()
        .map(|m| run_pursuit(p, derive_seed(p.base_seed, m)).map(|o| o.t_k))
        .collect::<Result<_>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scatter_support() {
        let p = PursuitParams { n_attackers: 20_000, ..PursuitParams::default() };
        let v = scatter_attackers(&p, &mut RngStream::new(2));
        let mut mean = 0.0;
        for u in &v {
            let s = u.norm();
            assert!(s > 0.0 && s < p.attacker_speed);
            assert!(u.y.atan2(u.x).abs() < std::f64::consts::FRAC_PI_4);
            mean += s;
        }
        mean /= v.len() as f64;
        assert!((mean / (p.attacker_speed / 2.0) - 1.0).abs() < 0.02);
    }

    #[test]
    fn intercept_examples() {
        let ic = intercept_point(Vec2::new(1.0, 0.0), Vec2::ZERO, Vec2::ZERO, 1.0);
        assert!((ic.point - Vec2::new(1.0, 0.0)).norm() < 1e-15);
        let ic = intercept_point(Vec2::new(1.0, 0.0), Vec2::new(1.0, 0.0), Vec2::ZERO, 2.0);
        assert!((ic.time.unwrap() - 1.0).abs() < 1e-15);
        assert!((ic.point - Vec2::new(2.0, 0.0)).norm() < 1e-15);
        let ic = intercept_point(Vec2::new(1.0, 0.0), Vec2::new(3.0, 0.0), Vec2::ZERO, 1.0);
        assert!(ic.fallback && ic.point == Vec2::new(1.0, 0.0));
        let ic = intercept_point(Vec2::new(4.0, 4.0), Vec2::new(1.0, 0.0), Vec2::new(4.0, 4.0), 1.0);
        assert_eq!(ic.point, Vec2::new(4.0, 4.0));
        // equal speeds, target approaching head on
        let ic = intercept_point(Vec2::new(10.0, 0.0), Vec2::new(-1.0, 0.0), Vec2::ZERO, 1.0);
        assert!((ic.time.unwrap() - 5.0).abs() < 1e-12);
    }

    fn a(id: u32, x: f64, y: f64) -> AgentState {
        AgentState::new(id, Side::Attacker, Vec2::new(x, y))
    }

    fn d(id: u32, x: f64, y: f64) -> AgentState {
        AgentState::new(id, Side::Defender, Vec2::new(x, y))
    }

    #[test]
    fn auction_priority_and_surplus() {
        let one = auction_assign(&[a(0, 3.0, 0.0)], &[d(1, 5.0, 0.0)], Vec2::ZERO);
        assert_eq!(one.targets.get(&1), Some(&0));
        // the farther attacker (id 0, radius 10) picks first and takes defender 11
        let atts = [a(0, 10.0, 0.0), a(1, 5.0, 0.0)];
        let defs = [d(10, 6.0, 0.0), d(11, 8.0, 0.0)];
        let asg = auction_assign(&atts, &defs, Vec2::ZERO);
        assert_eq!(asg.targets[&11], 0);
        assert_eq!(asg.targets[&10], 1);
        let asg = auction_assign(&[a(0, 1.0, 0.0)], &[d(1, 0.0, 1.0), d(2, 5.0, 5.0), d(3, -3.0, 0.0)], Vec2::ZERO);
        assert_eq!(asg.targets.len(), 3);
        assert!(asg.targets.values().all(|&t| t == 0));
        assert!(auction_assign(&[], &[d(1, 0.0, 0.0)], Vec2::ZERO).targets.is_empty());
    }

    #[test]
    fn straight_chase_of_a_parked_target() {
        let p = PursuitParams {
            n_attackers: 1,
            n_defenders: 1,
            tau: 1e-3,
            dt: 1e-4,
            kill_radius: 1e-3,
            separation: Some(10.0),
            formation_radius: Some(0.0),
            ..PursuitParams::default()
        };
        let o = Pursuit::with_attackers(p, vec![Vec2::ZERO], 0).unwrap().run().unwrap();
        assert!((o.t_k - 10.0).abs() < 0.02, "{}", o.t_k);
        assert_eq!(o.p_a, 0.0);
    }

    #[test]
    fn kill_at_start() {
        let p = PursuitParams { kill_radius: 50.0, n_attackers: 3, ..PursuitParams::default() };
        let o = run_pursuit(&p, 1).unwrap();
        assert_eq!(o.t_k, 0.0);
        assert_eq!(o.kills, 3);
    }

    #[test]
    fn attackers_fly_straight() {
        let p = PursuitParams { n_attackers: 4, n_defenders: 2, ..PursuitParams::default() };
        let mut s = Pursuit::new(p, 3).unwrap();
        let vel: Vec<Vec2> = s.attackers().iter().map(|a| a.vel).collect();
        for _ in 0..100 {
            s.step().unwrap();
        }
        let t = s.time();
        for (a, v) in s.attackers().iter().zip(&vel) {
            assert_eq!(a.vel, *v);
            assert_eq!(a.pos, *v * t);
        }
    }

    #[test]
    fn all_attackers_are_caught() {
        let p = PursuitParams { n_attackers: 12, n_defenders: 4, ensemble: 3, ..PursuitParams::default() };
        for m in 0..3 {
            let o = run_pursuit(&p, derive_seed(7, m)).unwrap();
            assert_eq!(o.p_a, 0.0);
            assert!(!o.timed_out);
            assert_eq!(o.kills, 12);
        }
        assert_eq!(ensemble_tk(&p).unwrap().to_bits(), ensemble_tk(&p).unwrap().to_bits());
    }

    #[test]
    fn faster_defenders_finish_sooner() {
        let slow = PursuitParams { n_attackers: 16, n_defenders: 8, defender_speed: 0.5, ensemble: 4, ..PursuitParams::default() };
        let fast = PursuitParams { defender_speed: 1.0, ..slow.clone() };
        assert!(ensemble_tk(&fast).unwrap() < ensemble_tk(&slow).unwrap());
    }

    #[test]
    fn trace_has_consistent_shape() {
        let p = PursuitParams { n_attackers: 5, n_defenders: 3, ..PursuitParams::default() };
        let (o, tr) = Pursuit::new(p, 0).unwrap().run_traced(10).unwrap();
        assert_eq!(tr.times.len(), tr.defenders.len());
        assert_eq!(tr.defenders[0].len(), 3);
        assert_eq!(tr.attackers[0].len(), 5);
        assert!((tr.times.last().unwrap() - o.t_k).abs() < 1e-9);
    }

    #[test]
    fn named_parameters() {
        let mut p = PursuitParams::default();
        assert_eq!(p.get("D"), Some(40.0));
        p.set("V_d", 0.5).unwrap();
        assert!((p.speed_ratio() - 1.25).abs() < 1e-15);
        assert!((p.effective_t_max() - 100.0 * 40.0 / 0.1).abs() < 1e-6);
        p.n_defenders = 0;
        assert!(p.validate().is_err());
    }
}
