//! Swarm-versus-swarm engagement around a high-value unit (HVU) at the origin.
//!
//! Attackers start scattered around `(L, 0)` and steer toward the HVU, holding
//! formation with cohesive pair forces and flying around defenders. Defenders
//! start at the HVU and steer toward the attacker centroid; they do not avoid
//! attackers. Each side fires at its closest enemy with a Gaussian-CDF weapon.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attrition::{derive_seed, gaussian_attrition_rate, survival_factor, RngStream, WeaponParams};
use crate::dynamics::{
    avoidance_force, leonard_pair_force, thrust_force, AgentState, DynamicsParams, ForceLawParams, Side,
    VelocityVerlet,
};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::params::{as_count, Scenario, ScenarioParams};
use crate::spatial::CellGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BattleParams {
    pub n_attackers: usize,
    pub n_defenders: usize,
    pub attacker: WeaponParams,
    pub defender: WeaponParams,
    pub forces: ForceLawParams,
    /// Distance `L` from the HVU to the attacker swarm's starting center.
    pub start_distance: f64,
    pub dynamics: DynamicsParams,
    /// Time limit; `None` means `10·L/V`.
    pub t_max: Option<f64>,
    /// An attacker this close to the HVU destroys it.
    pub hvu_radius: f64,
    /// Initial scatter radius is `scatter_scale·√N·d0` for a swarm of `N`.
    pub scatter_scale: f64,
    pub ensemble: usize,
    pub base_seed: u64,
}

impl Default for BattleParams {
    fn default() -> Self {
        BattleParams {
            n_attackers: 40,
            n_defenders: 40,
            attacker: WeaponParams { rate: 1.0, range: 2.0 },
            defender: WeaponParams { rate: 1.0, range: 2.0 },
            forces: ForceLawParams::default(),
            start_distance: 50.0,
            dynamics: DynamicsParams::default(),
            t_max: None,
            hvu_radius: 1.0,
            scatter_scale: 0.5,
            ensemble: 5,
            base_seed: 0,
        }
    }
}

impl BattleParams {
    pub fn effective_t_max(&self) -> f64 {
        self.t_max
            .unwrap_or(10.0 * self.start_distance / self.dynamics.speed_scale())
    }

    pub fn scatter_radius(&self, n: usize) -> f64 {
        self.scatter_scale * (n as f64).sqrt() * self.forces.d0
    }
}

const BATTLE_NAMES: &[&str] = &[
    "N_a",
    "N_d",
    "lambda_a",
    "lambda_d",
    "R_a",
    "R_d",
    "d0",
    "d1",
    "dr",
    "L",
    "mass",
    "thrust",
    "damping",
    "dt",
    "t_max",
    "hvu_radius",
    "scatter_scale",
];

impl ScenarioParams for BattleParams {
    const SCENARIO: Scenario = Scenario::Battle;

    fn names() -> &'static [&'static str] {
        BATTLE_NAMES
    }

    fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "N_a" => self.n_attackers as f64,
            "N_d" => self.n_defenders as f64,
            "lambda_a" => self.attacker.rate,
            "lambda_d" => self.defender.rate,
            "R_a" => self.attacker.range,
            "R_d" => self.defender.range,
            "d0" => self.forces.d0,
            "d1" => self.forces.d1,
            "dr" => self.forces.dr,
            "L" => self.start_distance,
            "mass" => self.dynamics.mass,
            "thrust" => self.dynamics.thrust,
            "damping" => self.dynamics.damping,
            "dt" => self.dynamics.dt,
            "t_max" => self.effective_t_max(),
            "hvu_radius" => self.hvu_radius,
            "scatter_scale" => self.scatter_scale,
            _ => return None,
        })
    }

    fn set(&mut self, name: &str, v: f64) -> Result<()> {
        match name {
            "N_a" => self.n_attackers = as_count(name, v)?,
            "N_d" => self.n_defenders = as_count(name, v)?,
            "lambda_a" => self.attacker.rate = v,
            "lambda_d" => self.defender.rate = v,
            "R_a" => self.attacker.range = v,
            "R_d" => self.defender.range = v,
            "d0" => self.forces.d0 = v,
            "d1" => self.forces.d1 = v,
            "dr" => self.forces.dr = v,
            "L" => self.start_distance = v,
            "mass" => self.dynamics.mass = v,
            "thrust" => self.dynamics.thrust = v,
            "damping" => self.dynamics.damping = v,
            "dt" => self.dynamics.dt = v,
            "t_max" => self.t_max = Some(v),
            "hvu_radius" => self.hvu_radius = v,
            "scatter_scale" => self.scatter_scale = v,
            _ => return Err(Self::unknown(name)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.n_attackers < 1 {
            return Err(Error::invalid("N_a", "at least one attacker is required"));
        }
        self.attacker.validate("attacker")?;
        self.defender.validate("defender")?;
        self.forces.validate()?;
        self.dynamics.validate()?;
        if self.dynamics.thrust <= 0.0 {
            return Err(Error::invalid("thrust", "must be > 0"));
        }
        if !(self.start_distance > 0.0 && self.start_distance.is_finite()) {
            return Err(Error::invalid("L", "must be finite and > 0"));
        }
        if !(self.effective_t_max() > 0.0) {
            return Err(Error::invalid("t_max", "must be > 0"));
        }
        if !(self.hvu_radius >= 0.0) {
            return Err(Error::invalid("hvu_radius", "must be >= 0"));
        }
        if !(self.scatter_scale >= 0.0 && self.scatter_scale.is_finite()) {
            return Err(Error::invalid("scatter_scale", "must be finite and >= 0"));
        }
        if self.ensemble < 1 {
            return Err(Error::invalid("ensemble", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BattleOutcome {
    /// Fraction of attackers alive at termination.
    pub p_a: f64,
    pub hvu_destroyed: bool,
    pub t_end: f64,
    /// Time limit reached with attackers still alive.
    pub stalemate: bool,
    /// Some `λ·dt` factor reached 1 and was clamped.
    pub clamped: bool,
    pub attackers_alive: usize,
    pub defenders_alive: usize,
}

impl BattleOutcome {
    pub fn flags(&self) -> Vec<&'static str> {
        let mut f = Vec::new();
        if self.stalemate {
            f.push("stalemate");
        }
        if self.clamped {
            f.push("clamped");
        }
        f
    }
}

/// Initial layout: attackers `0..N_a` in a disk around `(L, 0)`, defenders
/// `N_a..N_a+N_d` in a disk around the HVU. All at rest and alive.
pub fn init_battle(p: &BattleParams, rng: &mut RngStream) -> Vec<AgentState> {
    let mut states = Vec::with_capacity(p.n_attackers + p.n_defenders);
    let ra = p.scatter_radius(p.n_attackers);
    let center = Vec2::new(p.start_distance, 0.0);
    for i in 0..p.n_attackers {
        states.push(AgentState::new(i as u32, Side::Attacker, rng.in_disk(center, ra)));
    }
    let rd = p.scatter_radius(p.n_defenders);
    for j in 0..p.n_defenders {
        let id = (p.n_attackers + j) as u32;
        states.push(AgentState::new(id, Side::Defender, rng.in_disk(Vec2::ZERO, rd)));
    }
    states
}

/// Reusable force evaluator; keeps the neighbor grid between calls.
#[derive(Debug, Clone, Default)]
struct ForceEval {
    grid: CellGrid,
}

impl ForceEval {
    fn eval(&mut self, states: &[AgentState], p: &BattleParams, defender_leader: Vec2, out: &mut [Vec2]) {
        let fl = &p.forces;
        let cutoff = fl.d1.max(fl.dr);
        self.grid.rebuild(
            cutoff,
            states.iter().enumerate().filter(|(_, s)| s.alive).map(|(i, s)| (i, s.pos)),
        );
        let k = p.dynamics.thrust;
        let d1_sq = fl.d1 * fl.d1;
        let dr_sq = fl.dr * fl.dr;
        for (i, s) in states.iter().enumerate() {
            if !s.alive {
                continue;
            }
            let mut f = match s.side {
                Side::Attacker => thrust_force(s.pos, Vec2::ZERO, k),
                Side::Defender => thrust_force(s.pos, defender_leader, k),
            };
            self.grid.for_each_near(s.pos, |j| {
                if j == i {
                    return;
                }
                let o = &states[j];
                let rel = s.pos - o.pos;
                let r2 = rel.norm_sq();
                match (s.side, o.side) {
                    (a, b) if a == b => {
                        if r2 < d1_sq {
                            f += leonard_pair_force(rel, fl);
                        }
                    }
                    (Side::Attacker, Side::Defender) => {
                        if r2 < dr_sq {
                            f += avoidance_force(rel, fl.dr);
                        }
                    }
                    _ => {}
                }
            });
            out[i] = f;
        }
    }
}

fn attacker_centroid(states: &[AgentState]) -> Option<Vec2> {
    Vec2::centroid(
        states
            .iter()
            .filter(|s| s.alive && s.side == Side::Attacker)
            .map(|s| s.pos),
    )
}

/// External force on every alive agent (damping is applied by the integrator).
/// Defenders steer toward the attacker centroid, or `held_leader` when no
/// attacker is alive.
pub fn battle_forces(states: &[AgentState], p: &BattleParams, held_leader: Vec2) -> Vec<Vec2> {
    let leader = attacker_centroid(states).unwrap_or(held_leader);
    let mut out = vec![Vec2::ZERO; states.len()];
    ForceEval::default().eval(states, p, leader, &mut out);
    out
}

/// A battle in progress. Agents are stored attackers first, indexed by id.
#[derive(Debug, Clone)]
pub struct Battle {
    params: BattleParams,
    states: Vec<AgentState>,
    rng: RngStream,
    integrator: VelocityVerlet,
    forces: ForceEval,
    leader: Vec2,
    time: f64,
    steps: u64,
    clamped: bool,
    survival: Vec<f64>,
    outcome: Option<BattleOutcome>,
}

impl Battle {
    pub fn new(params: BattleParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = RngStream::new(seed);
        let states = init_battle(&params, &mut rng);
        let leader = attacker_centroid(&states).unwrap_or(Vec2::ZERO);
        let n = states.len();
        let mut b = Battle {
            params,
            states,
            rng,
            integrator: VelocityVerlet::new(),
            forces: ForceEval::default(),
            leader,
            time: 0.0,
            steps: 0,
            clamped: false,
            survival: vec![1.0; n],
            outcome: None,
        };
        b.check_termination();
        Ok(b)
    }

    pub fn params(&self) -> &BattleParams {
        &self.params
    }

    pub fn states(&self) -> &[AgentState] {
        &self.states
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn outcome(&self) -> Option<BattleOutcome> {
        self.outcome
    }

    pub fn alive(&self, side: Side) -> usize {
        self.states.iter().filter(|s| s.alive && s.side == side).count()
    }

    /// Advances one time step; returns the outcome once the battle is over.
    pub fn step(&mut self) -> Result<Option<BattleOutcome>> {
        if self.outcome.is_some() {
            return Ok(self.outcome);
        }
        let p = &self.params;
        if let Some(c) = attacker_centroid(&self.states) {
            self.leader = c;
        }
        let leader = self.leader;
        let forces = &mut self.forces;
        self.integrator
            .step(&mut self.states, |s, out| forces.eval(s, p, leader, out), &p.dynamics)?;
        self.steps += 1;
        self.time = self.steps as f64 * p.dynamics.dt;
        self.resolve_attrition();
        // the cached forces include agents that just died
        self.integrator.invalidate();
        self.check_termination();
        Ok(self.outcome)
    }

    pub fn run(mut self) -> Result<BattleOutcome> {
        loop {
            if let Some(o) = self.step()? {
                return Ok(o);
            }
        }
    }

    fn resolve_attrition(&mut self) {
        let p = &self.params;
        let dt = p.dynamics.dt;
        let na = p.n_attackers;
        let (att, def) = self.states.split_at(na);
        self.survival.iter_mut().for_each(|s| *s = 1.0);
        let mut clamped = false;
        let mut fire = |shooter: &AgentState, enemies: &[AgentState], offset: usize, w: &WeaponParams| {
            let mut best: Option<(f64, usize)> = None;
            for (k, e) in enemies.iter().enumerate() {
                if !e.alive {
                    continue;
                }
                let d2 = shooter.pos.distance_sq(e.pos);
                if best.is_none_or(|(bd, _)| d2 < bd) {
                    best = Some((d2, k));
                }
            }
            if let Some((d2, k)) = best {
                let (f, c) = survival_factor(gaussian_attrition_rate(d2.sqrt(), w), dt);
                clamped |= c;
                self.survival[offset + k] *= f;
            }
        };
        for d in def.iter().filter(|s| s.alive) {
            fire(d, att, 0, &p.defender);
        }
        for a in att.iter().filter(|s| s.alive) {
            fire(a, def, na, &p.attacker);
        }
        if clamped && !self.clamped {
            log::warn!("battle: attrition rate times dt reached 1 (dt = {dt}); factors clamped to 0");
        }
        self.clamped |= clamped;
        let mut killed = Vec::new();
        for (i, s) in self.states.iter().enumerate() {
            if s.alive && self.rng.uniform() > self.survival[i] {
                killed.push(i);
            }
        }
        for i in killed {
            self.states[i].alive = false;
        }
    }

    fn check_termination(&mut self) {
        let na = self.params.n_attackers;
        let alive_att = self.alive(Side::Attacker);
        let r2 = self.params.hvu_radius * self.params.hvu_radius;
        let reached = self.states[..na]
            .iter()
            .any(|s| s.alive && s.pos.norm_sq() <= r2);
        let timeout = self.time >= self.params.effective_t_max() * (1.0 - 1e-12);
        if alive_att == 0 || reached || timeout {
            self.outcome = Some(BattleOutcome {
                p_a: alive_att as f64 / na as f64,
                hvu_destroyed: reached,
                t_end: self.time,
                stalemate: timeout && !reached && alive_att > 0,
                clamped: self.clamped,
                attackers_alive: alive_att,
                defenders_alive: self.alive(Side::Defender),
            });
        }
    }
}

pub fn run_battle(p: &BattleParams, seed: u64) -> Result<BattleOutcome> {
    Battle::new(p.clone(), seed)?.run()
}

/// Mean `P_a` over `p.ensemble` runs seeded from `p.base_seed`.
pub fn ensemble_pa(p: &BattleParams) -> Result<f64> {
    p.validate()?;
    let outcomes: Vec<BattleOutcome> = (0..p.ensemble as u64)
        .into_par_iter()
        .map(|m| run_battle(p, derive_seed(p.base_seed, m)))
        .collect::<Result<_>>()?;
    Ok(outcomes.iter().map(|o| o.p_a).sum::<f64>() / outcomes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BattleParams {
        BattleParams {
            n_attackers: 5,
            n_defenders: 5,
            start_distance: 20.0,
            ..BattleParams::default()
        }
    }

    #[test]
    fn layout_is_reproducible() {
        let p = BattleParams::default();
        let a = init_battle(&p, &mut RngStream::new(3));
        let b = init_battle(&p, &mut RngStream::new(3));
        assert_eq!(a, b);
        assert_eq!(a.len(), 80);
        let ra = p.scatter_radius(40);
        for s in &a[..40] {
            assert_eq!(s.side, Side::Attacker);
            assert!(s.pos.distance(Vec2::new(50.0, 0.0)) <= ra);
        }
        for s in &a[40..] {
            assert_eq!(s.side, Side::Defender);
            assert!(s.pos.norm() <= ra);
        }
    }

    #[test]
    fn lone_attacker() {
        let p = BattleParams {
            n_attackers: 1,
            n_defenders: 0,
            ..BattleParams::default()
        };
        let s = init_battle(&p, &mut RngStream::new(0));
        assert_eq!(s.len(), 1);
        assert!(s[0].pos.distance(Vec2::new(50.0, 0.0)) <= p.scatter_radius(1));
        let o = run_battle(&p, 0).unwrap();
        assert_eq!(o.p_a, 1.0);
        assert!(o.hvu_destroyed);
        assert!(!o.stalemate);
    }

    #[test]
    fn defenders_do_not_avoid_attackers() {
        let p = BattleParams::default();
        let mut s = vec![
            AgentState::new(0, Side::Attacker, Vec2::new(3.0, 0.0)),
            AgentState::new(1, Side::Defender, Vec2::new(0.0, 0.0)),
        ];
        s[1].pos = Vec2::ZERO;
        let f = battle_forces(&s, &p, Vec2::ZERO);
        // attacker: thrust toward origin (-1, 0) plus avoidance (+1/3, 0)
        assert!((f[0] - Vec2::new(-1.0 + 1.0 / 3.0, 0.0)).norm() < 1e-12);
        // defender: thrust toward the attacker centroid only
        assert!((f[1] - Vec2::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn equilibrium_pair_feels_only_thrust() {
        let p = BattleParams::default();
        let s = vec![
            AgentState::new(0, Side::Attacker, Vec2::new(30.0, 1.0)),
            AgentState::new(1, Side::Attacker, Vec2::new(30.0, -1.0)),
        ];
        let f = battle_forces(&s, &p, Vec2::ZERO);
        for (st, fi) in s.iter().zip(&f) {
            assert!((*fi - thrust_force(st.pos, Vec2::ZERO, 1.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn defender_thrust_from_rest() {
        let p = BattleParams::default();
        let s = vec![
            AgentState::new(0, Side::Attacker, Vec2::new(10.0, 5.0)),
            AgentState::new(1, Side::Attacker, Vec2::new(10.0, -5.0)),
            AgentState::new(2, Side::Defender, Vec2::ZERO),
        ];
        let f = battle_forces(&s, &p, Vec2::ZERO);
        assert!((f[2] - Vec2::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn no_weapons_means_no_losses() {
        let mut p = small();
        p.attacker.rate = 0.0;
        p.defender.rate = 0.0;
        let o = run_battle(&p, 9).unwrap();
        assert_eq!(o.p_a, 1.0);
        assert_eq!(o.defenders_alive, 5);
        assert!(o.hvu_destroyed);
    }

    #[test]
    fn unopposed_attackers_all_survive() {
        let p = BattleParams {
            n_defenders: 0,
            ..small()
        };
        assert_eq!(run_battle(&p, 1).unwrap().p_a, 1.0);
    }

    #[test]
    fn overwhelming_defense() {
        let p = BattleParams {
            n_attackers: 3,
            n_defenders: 60,
            defender: WeaponParams { rate: 20.0, range: 4.0 },
            attacker: WeaponParams { rate: 0.1, range: 1.0 },
            ensemble: 3,
            ..BattleParams::default()
        };
        assert_eq!(ensemble_pa(&p).unwrap(), 0.0);
    }

    #[test]
    fn ensemble_is_reproducible() {
        let p = BattleParams { ensemble: 3, ..small() };
        assert_eq!(ensemble_pa(&p).unwrap().to_bits(), ensemble_pa(&p).unwrap().to_bits());
    }

    #[test]
    fn timeout_is_flagged() {
        let p = BattleParams {
            t_max: Some(1.0),
            ..small()
        };
        let o = run_battle(&p, 0).unwrap();
        assert!(o.stalemate);
        assert!(o.flags().contains(&"stalemate"));
        assert!((o.t_end - 1.0).abs() < 1e-9);
    }

    #[test]
    fn named_parameters() {
        let mut p = BattleParams::default();
        p.set("R_d", 4.0).unwrap();
        p.set("N_d", 120.0).unwrap();
        assert_eq!(p.defender.range, 4.0);
        assert_eq!(p.get("N_d"), Some(120.0));
        assert_eq!(p.get("t_max"), Some(500.0));
        assert!(p.set("N_d", 2.5).is_err());
        assert!(matches!(p.set("warp", 1.0), Err(Error::UnknownParam { .. })));
        assert_eq!(p.values().len(), BattleParams::names().len());
        p.n_attackers = 0;
        assert!(p.validate().is_err());
    }
}
