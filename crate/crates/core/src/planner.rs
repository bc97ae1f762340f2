//! Minimum-effort defender path planning against scattering attackers.
//!
//! Defender waypoints on a uniform grid over `[0, T]` are the decision
//! variables. The cost is total path length, written with per-interval slack
//! variables `ℓ̄ ≥ |ṙ|` so the objective stays smooth. Speed and acceleration
//! come from forward differences and each attacker's survival probability is
//! capped in the log domain.
//!
//! The inner problem at fixed `T` is solved by a PHR augmented Lagrangian whose
//! subproblems run spectral projected gradient (the only bound is `ℓ̄ ≥ 0`).
//! `T` itself is chosen by golden-section search over `[T_init/2, 2·T_init]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attrition::{derive_seed, std_normal_cdf};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::numeric::golden_section;
use crate::params::{as_count, Scenario, ScenarioParams};
use crate::pursuit::{Pursuit, PursuitParams, PursuitTrace};
use crate::scaling::{fit_powerlaw, predict_ndeff, PowerLawFit};

/// Pairwise kill-rate shape `ρ(r) = λ·Φ((F − a·r²)/σ)`, shared by every pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeaponShape {
    pub lambda: f64,
    pub f: f64,
    pub a: f64,
    pub sigma: f64,
}

impl WeaponShape {
    /// Shape whose rate is `λ/2` at distance `radius`, falling from about
    /// `0.98λ` at contact to about `0.01λ` at `1.5·radius`.
    pub fn from_radius(radius: f64, lambda: f64) -> Self {
        let r2 = radius * radius;
        WeaponShape {
            lambda,
            f: r2,
            a: 1.0,
            sigma: 0.5 * r2,
        }
    }

    #[inline]
    pub fn rate(&self, dist_sq: f64) -> f64 {
        self.lambda * std_normal_cdf((self.f - self.a * dist_sq) / self.sigma)
    }

    /// Rate and its derivative with respect to squared distance.
    #[inline]
    fn rate_and_slope(&self, dist_sq: f64) -> (f64, f64) {
        let z = (self.f - self.a * dist_sq) / self.sigma;
        let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        (self.lambda * std_normal_cdf(z), -self.lambda * pdf * self.a / self.sigma)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("weapon.lambda", "must be finite and >= 0"));
        }
        if !(self.a > 0.0 && self.sigma > 0.0 && self.f.is_finite()) {
            return Err(Error::invalid("weapon", "a and sigma must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerProblem {
    pub defenders: Vec<Vec2>,
    pub attacker_pos: Vec<Vec2>,
    pub attacker_vel: Vec<Vec2>,
    /// Number of intervals `N_T`.
    pub n_t: usize,
    pub v_max: f64,
    pub a_max: f64,
    pub p_max: f64,
    pub weapon: WeaponShape,
    /// Horizon of the initial guess; the search bracket is `[T/2, 2T]`.
    pub t_init: f64,
}

impl PlannerProblem {
    pub fn validate(&self) -> Result<()> {
        if self.defenders.is_empty() {
            return Err(Error::invalid("defenders", "at least one defender is required"));
        }
        if self.attacker_pos.len() != self.attacker_vel.len() {
            return Err(Error::invalid("attackers", "positions and velocities differ in length"));
        }
        if self.n_t < 2 {
            return Err(Error::invalid("N_T", "at least two intervals are required"));
        }
        if !(self.p_max > 0.0 && self.p_max < 1.0) {
            return Err(Error::invalid("p_max", "must lie in (0, 1)"));
        }
        if !(self.v_max > 0.0 && self.a_max > 0.0) {
            return Err(Error::invalid("v_max/a_max", "bounds must be > 0"));
        }
        if !(self.t_init > 0.0 && self.t_init.is_finite()) {
            return Err(Error::invalid("t_init", "must be finite and > 0"));
        }
        self.weapon.validate()
    }

    pub fn n_defenders(&self) -> usize {
        self.defenders.len()
    }

    pub fn n_attackers(&self) -> usize {
        self.attacker_pos.len()
    }

    pub fn attacker_at(&self, i: usize, t: f64) -> Vec2 {
        self.attacker_pos[i] + self.attacker_vel[i] * t
    }
}

/// `log p_i = −Σ_j Σ_{k=1..N_T} ρ(|r_i(kδt) − r_j(kδt)|)·δt` for one attacker
/// given as `(initial position, velocity)`.
pub fn survival_log(defenders: &[Vec<Vec2>], attacker: (Vec2, Vec2), weapon: &WeaponShape, dt: f64) -> f64 {
    let mut s = 0.0;
    for traj in defenders {
        for (k, r) in traj.iter().enumerate().skip(1) {
            let ra = attacker.0 + attacker.1 * (k as f64 * dt);
            s += weapon.rate(r.distance_sq(ra));
        }
    }
    -s * dt
}

/// Forward-difference path length `Σ_k |ṙ_k|·δt`, which is the polyline length.
pub fn path_length(traj: &[Vec2], dt: f64) -> f64 {
    traj.windows(2).map(|w| ((w[1] - w[0]) * (1.0 / dt)).norm() * dt).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_outer: usize,
    pub max_inner: usize,
    /// Residual tolerance of the independent feasibility check.
    pub feas_tol: f64,
    /// Relative tightening of every bound inside the solver.
    pub margin: f64,
    /// Number of horizons evaluated by the outer search; 1 keeps `T_init`.
    pub t_evals: usize,
    /// Extra starts in `plan`, each seeded by re-running the pursuit with only
    /// the first `k` defenders active. The cheapest `k` by start cost are used.
    pub subset_starts: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_outer: 30,
            max_inner: 1500,
            feas_tol: 1e-4,
            margin: 2e-3,
            t_evals: 6,
            subset_starts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerSolution {
    pub t_final: f64,
    /// `N_d` trajectories of `N_T + 1` waypoints, starting at the initial positions.
    pub trajectories: Vec<Vec<Vec2>>,
    /// `ℓ̄_{j,k}`, one row per defender.
    pub slacks: Vec<Vec<f64>>,
    pub log_survival: Vec<f64>,
    pub path_lengths: Vec<f64>,
    pub cost: f64,
    pub converged: bool,
    /// The initial guess was feasible and no better point was found.
    pub kept_init: bool,
    pub outer_iterations: usize,
}

impl PlannerSolution {
    pub fn dt(&self) -> f64 {
        self.t_final / (self.trajectories[0].len() - 1) as f64
    }
}

/// Largest constraint residuals, re-evaluated from the trajectories alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub speed: f64,
    pub accel: f64,
    pub survival: f64,
    /// Attacker with the largest survival residual.
    pub worst_attacker: usize,
    pub slack_gap: f64,
}

impl Feasibility {
    pub fn max_violation(&self) -> f64 {
        self.speed.max(self.accel).max(self.survival).max(0.0)
    }
}

pub fn check_feasibility(problem: &PlannerProblem, trajectories: &[Vec<Vec2>], slacks: Option<&[Vec<f64>]>, t_final: f64) -> Feasibility {
    let dt = t_final / problem.n_t as f64;
    let mut f = Feasibility {
        speed: f64::NEG_INFINITY,
        accel: f64::NEG_INFINITY,
        survival: f64::NEG_INFINITY,
        worst_attacker: 0,
        slack_gap: 0.0,
    };
    for (j, traj) in trajectories.iter().enumerate() {
        let vel: Vec<Vec2> = traj.windows(2).map(|w| (w[1] - w[0]) * (1.0 / dt)).collect();
        for (k, v) in vel.iter().enumerate() {
            f.speed = f.speed.max(v.norm() - problem.v_max);
            if let Some(s) = slacks {
                f.slack_gap = f.slack_gap.max((s[j][k] - v.norm()).abs());
            }
        }
        for w in vel.windows(2) {
            f.accel = f.accel.max(((w[1] - w[0]) * (1.0 / dt)).norm() - problem.a_max);
        }
    }
    let cap = problem.p_max.ln();
    for i in 0..problem.n_attackers() {
        let lp = survival_log(trajectories, (problem.attacker_pos[i], problem.attacker_vel[i]), &problem.weapon, dt);
        if lp - cap > f.survival {
            f.survival = lp - cap;
            f.worst_attacker = i;
        }
    }
    f
}

/// Defenders whose path is longer than `frac` times the mean length of the
/// moving defenders.
pub fn count_deployed(solution: &PlannerSolution, frac: f64) -> usize {
    count_deployed_lengths(&solution.path_lengths, frac)
}

pub fn count_deployed_lengths(lengths: &[f64], frac: f64) -> usize {
    let max = lengths.iter().cloned().fold(0.0, f64::max);
    if max <= 1e-9 {
        return 0;
    }
    let moving: Vec<f64> = lengths.iter().cloned().filter(|&l| l > 1e-6 * max).collect();
    let mean = moving.iter().sum::<f64>() / moving.len() as f64;
    lengths.iter().filter(|&&l| l > frac * mean).count()
}

/// Samples a pursuit trace at `N_T + 1` uniform times over `[0, t_final]`,
/// interpolating linearly and holding the last sample past the end.
pub fn init_from_trace(trace: &PursuitTrace, n_t: usize, t_final: f64) -> Vec<Vec<Vec2>> {
    let nd = trace.defenders.first().map_or(0, |r| r.len());
    let rows: Vec<&[Vec2]> = trace.defenders.iter().map(|r| r.as_slice()).collect();
    (0..nd)
        .map(|j| {
            let track: Vec<Vec2> = rows.iter().map(|r| r[j]).collect();
            resample(&trace.times, &track, n_t, t_final)
        })
        .collect()
}

fn resample(times: &[f64], track: &[Vec2], n_t: usize, t_final: f64) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(n_t + 1);
    let mut seg = 0;
    for k in 0..=n_t {
        let t = t_final * k as f64 / n_t as f64;
        while seg + 1 < times.len() && times[seg + 1] < t {
            seg += 1;
        }
        let p = if seg + 1 >= times.len() || t >= *times.last().unwrap() {
            *track.last().unwrap()
        } else if t <= times[0] {
            track[0]
        } else {
            let w = (t - times[seg]) / (times[seg + 1] - times[seg]);
            track[seg] + (track[seg + 1] - track[seg]) * w
        };
        out.push(p);
    }
    out
}

/// Index bookkeeping for the flat decision vector: waypoints `1..=N_T` of each
/// defender (two coordinates each), then the slacks `ℓ̄_{j,0..N_T}`.
struct Layout {
    nd: usize,
    nt: usize,
}

impl Layout {
    fn len(&self) -> usize {
        self.nd * self.nt * 3
    }

    fn pos(&self, j: usize, k: usize) -> usize {
        debug_assert!(k >= 1);
        2 * (j * self.nt + k - 1)
    }

    fn slack(&self, j: usize, k: usize) -> usize {
        2 * self.nd * self.nt + j * self.nt + k
    }

    fn point(&self, x: &[f64], origin: &[Vec2], j: usize, k: usize) -> Vec2 {
        if k == 0 {
            origin[j]
        } else {
            let i = self.pos(j, k);
            Vec2::new(x[i], x[i + 1])
        }
    }

    fn add(&self, g: &mut [f64], j: usize, k: usize, v: Vec2) {
        if k > 0 {
            let i = self.pos(j, k);
            g[i] += v.x;
            g[i + 1] += v.y;
        }
    }
}

/// Augmented Lagrangian of the fixed-horizon problem.
struct Subproblem<'a> {
    p: &'a PlannerProblem,
    lay: Layout,
    dt: f64,
    /// Attacker positions at `t_k`, row `k` holds every attacker.
    attackers: Vec<Vec<Vec2>>,
    v_cap: f64,
    a_cap: f64,
    log_cap: f64,
    cost_scale: f64,
}

#[derive(Clone)]
struct Multipliers {
    speed: Vec<f64>,
    accel: Vec<f64>,
    slack: Vec<f64>,
    surv: Vec<f64>,
}

impl<'a> Subproblem<'a> {
    fn new(p: &'a PlannerProblem, t_final: f64, margin: f64, cost_scale: f64) -> Self {
        let dt = t_final / p.n_t as f64;
        let attackers = (0..=p.n_t)
            .map(|k| (0..p.n_attackers()).map(|i| p.attacker_at(i, k as f64 * dt)).collect())
            .collect();
        Subproblem {
            p,
            lay: Layout {
                nd: p.n_defenders(),
                nt: p.n_t,
            },
            dt,
            attackers,
            v_cap: p.v_max * (1.0 - margin),
            a_cap: p.a_max * (1.0 - margin),
            log_cap: p.p_max.ln() * (1.0 + margin),
            cost_scale,
        }
    }

    fn multipliers(&self) -> Multipliers {
        let (nd, nt, na) = (self.lay.nd, self.lay.nt, self.p.n_attackers());
        Multipliers {
            speed: vec![0.0; nd * nt],
            accel: vec![0.0; nd * (nt - 1)],
            slack: vec![0.0; nd * nt],
            surv: vec![0.0; na],
        }
    }

    fn encode(&self, traj: &[Vec<Vec2>], slacks: Option<&[Vec<f64>]>) -> Vec<f64> {
        let mut x = vec![0.0; self.lay.len()];
        for (j, t) in traj.iter().enumerate() {
            for k in 1..=self.lay.nt {
                let i = self.lay.pos(j, k);
                x[i] = t[k].x;
                x[i + 1] = t[k].y;
            }
            for k in 0..self.lay.nt {
                let v = (t[k + 1] - t[k]).norm() / self.dt;
                x[self.lay.slack(j, k)] = slacks.map_or(v, |s| s[j][k].max(v));
            }
        }
        x
    }

    fn decode(&self, x: &[f64]) -> (Vec<Vec<Vec2>>, Vec<Vec<f64>>) {
        let traj = (0..self.lay.nd)
            .map(|j| (0..=self.lay.nt).map(|k| self.lay.point(x, &self.p.defenders, j, k)).collect())
            .collect();
        let slacks = (0..self.lay.nd)
            .map(|j| (0..self.lay.nt).map(|k| x[self.lay.slack(j, k)]).collect())
            .collect();
        (traj, slacks)
    }

    /// Visits every scaled constraint `g ≤ 0` with its multiplier slot. The
    /// callback receives the value and a gradient writer.
    fn constraints<F>(&self, x: &[f64], mut visit: F)
    where
        F: FnMut(Slot, f64, &mut dyn FnMut(&mut [f64], f64)),
    {
        let (lay, dt) = (&self.lay, self.dt);
        let origin = &self.p.defenders;
        let v2 = self.v_cap * self.v_cap;
        let a2 = self.a_cap * self.a_cap;
        let vmax2 = self.p.v_max * self.p.v_max;
        for j in 0..lay.nd {
            for k in 0..lay.nt {
                let v = (lay.point(x, origin, j, k + 1) - lay.point(x, origin, j, k)) * (1.0 / dt);
                let gv = (v.norm_sq() - v2) / v2;
                visit(Slot::Speed(j * lay.nt + k), gv, &mut |g, w| {
                    let d = v * (2.0 * w / (v2 * dt));
                    lay.add(g, j, k + 1, d);
                    lay.add(g, j, k, -d);
                });
                let s = x[lay.slack(j, k)];
                let gs = (v.norm_sq() - s * s) / vmax2;
                visit(Slot::Slack(j * lay.nt + k), gs, &mut |g, w| {
                    let d = v * (2.0 * w / (vmax2 * dt));
                    lay.add(g, j, k + 1, d);
                    lay.add(g, j, k, -d);
                    g[lay.slack(j, k)] -= 2.0 * w * s / vmax2;
                });
            }
            for k in 0..lay.nt - 1 {
                let r0 = lay.point(x, origin, j, k);
                let r1 = lay.point(x, origin, j, k + 1);
                let r2 = lay.point(x, origin, j, k + 2);
                let a = (r2 - r1 * 2.0 + r0) * (1.0 / (dt * dt));
                let ga = (a.norm_sq() - a2) / a2;
                visit(Slot::Accel(j * (lay.nt - 1) + k), ga, &mut |g, w| {
                    let d = a * (2.0 * w / (a2 * dt * dt));
                    lay.add(g, j, k + 2, d);
                    lay.add(g, j, k + 1, d * -2.0);
                    lay.add(g, j, k, d);
                });
            }
        }
        let scale = self.p.p_max.ln().abs();
        for i in 0..self.p.n_attackers() {
            let mut s = 0.0;
            for j in 0..lay.nd {
                for k in 1..=lay.nt {
                    let d = lay.point(x, origin, j, k) - self.attackers[k][i];
                    s += self.p.weapon.rate(d.norm_sq());
                }
            }
            let gi = (-s * dt - self.log_cap) / scale;
            visit(Slot::Surv(i), gi, &mut |g, w| {
                for j in 0..lay.nd {
                    for k in 1..=lay.nt {
                        let d = lay.point(x, origin, j, k) - self.attackers[k][i];
                        let (_, slope) = self.p.weapon.rate_and_slope(d.norm_sq());
                        lay.add(g, j, k, d * (-2.0 * slope * dt * w / scale));
                    }
                }
            });
        }
    }

    fn cost(&self, x: &[f64], g: Option<&mut [f64]>) -> f64 {
        let w = self.dt / self.cost_scale;
        let mut f = 0.0;
        let start = self.lay.slack(0, 0);
        for v in &x[start..] {
            f += v * w;
        }
        if let Some(g) = g {
            for gi in &mut g[start..] {
                *gi += w;
            }
        }
        f
    }

    /// PHR augmented Lagrangian value; fills `grad` when given.
    fn lagrangian(&self, x: &[f64], mu: &Multipliers, rho: f64, mut grad: Option<&mut [f64]>) -> f64 {
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let mut val = self.cost(x, grad.as_deref_mut());
        self.constraints(x, |slot, gv, write| {
            let m = mu.get(slot);
            let t = (m + rho * gv).max(0.0);
            val += (t * t - m * m) / (2.0 * rho);
            if t > 0.0 {
                if let Some(g) = grad.as_deref_mut() {
                    write(g, t);
                }
            }
        });
        val
    }

    /// Sets every slack to its exact minimizer of the augmented Lagrangian for
    /// the current waypoints. Slacks are separable, each one minimizing
    /// `c·s + max(0, μ + ρ(q − s²)/m)²/(2ρ)` over `s ≥ 0`.
    fn fill_slacks(&self, x: &mut [f64], mu: &Multipliers, rho: f64) {
        let c = self.dt / self.cost_scale;
        let m = self.p.v_max * self.p.v_max;
        let origin = &self.p.defenders;
        for j in 0..self.lay.nd {
            for k in 0..self.lay.nt {
                let v = (self.lay.point(x, origin, j, k + 1) - self.lay.point(x, origin, j, k)) * (1.0 / self.dt);
                let s = optimal_slack(v.norm_sq(), mu.slack[j * self.lay.nt + k], rho, c, m);
                x[self.lay.slack(j, k)] = s;
            }
        }
    }

    /// Updates multipliers and returns (max violation, complementarity measure).
    fn update(&self, x: &[f64], mu: &mut Multipliers, rho: f64) -> (f64, f64) {
        let mut viol: f64 = 0.0;
        let mut comp: f64 = 0.0;
        let mut next = mu.clone();
        self.constraints(x, |slot, gv, _| {
            let m = mu.get(slot);
            viol = viol.max(gv);
            comp = comp.max(gv.max(-m / rho).abs());
            *next.get_mut(slot) = (m + rho * gv).max(0.0);
        });
        *mu = next;
        (viol, comp)
    }
}

fn optimal_slack(q: f64, mu: f64, rho: f64, c: f64, m: f64) -> f64 {
    let h = |s: f64| {
        let t = (mu + rho * (q - s * s) / m).max(0.0);
        c * s + t * t / (2.0 * rho)
    };
    let hi2 = q + mu * m / rho;
    if hi2 <= 0.0 {
        return 0.0;
    }
    let hi = hi2.sqrt();
    // h' = c − 2s·t(s)/m; 2s·t(s)/m is a hump on [0, hi] peaking at hi/√3
    let pull = |s: f64| 2.0 * s * (mu + rho * (q - s * s) / m) / m;
    let peak = hi / 3f64.sqrt();
    if pull(peak) <= c {
        return 0.0;
    }
    let (mut a, mut b) = (peak, hi);
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if pull(mid) > c {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= 1e-15 * hi {
            break;
        }
    }
    let s = 0.5 * (a + b);
    if h(s) <= h(0.0) {
        s
    } else {
        0.0
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Speed(usize),
    Accel(usize),
    Slack(usize),
    Surv(usize),
}

impl Multipliers {
    fn get(&self, s: Slot) -> f64 {
        match s {
            Slot::Speed(i) => self.speed[i],
            Slot::Accel(i) => self.accel[i],
            Slot::Slack(i) => self.slack[i],
            Slot::Surv(i) => self.surv[i],
        }
    }

    fn get_mut(&mut self, s: Slot) -> &mut f64 {
        match s {
            Slot::Speed(i) => &mut self.speed[i],
            Slot::Accel(i) => &mut self.accel[i],
            Slot::Slack(i) => &mut self.slack[i],
            Slot::Surv(i) => &mut self.surv[i],
        }
    }
}

/// Spectral projected gradient with a nonmonotone Armijo search. Variables
/// from `lower_from` on are clipped at zero.
fn spg<F>(mut fg: F, x: &mut [f64], lower_from: usize, max_iter: usize, tol: f64) -> (f64, bool)
where
    F: FnMut(&[f64], Option<&mut [f64]>) -> f64,
{
    const MEMORY: usize = 10;
    let n = x.len();
    let project = |v: &mut [f64]| {
        for vi in &mut v[lower_from..] {
            *vi = vi.max(0.0);
        }
    };
    project(x);
    let mut g = vec![0.0; n];
    let mut f = fg(x, Some(&mut g));
    let mut history = vec![f];
    let mut trial = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut d = vec![0.0; n];
    let pg_norm = |x: &[f64], g: &[f64]| {
        let mut m: f64 = 0.0;
        for i in 0..n {
            let mut y = x[i] - g[i];
            if i >= lower_from {
                y = y.max(0.0);
            }
            m = m.max((y - x[i]).abs());
        }
        m
    };
    let mut step = 1.0 / pg_norm(x, &g).max(1e-12);
    for _ in 0..max_iter {
        if pg_norm(x, &g) <= tol {
            return (f, true);
        }
        for i in 0..n {
            d[i] = x[i] - step * g[i];
        }
        project(&mut d);
        let mut gd = 0.0;
        for i in 0..n {
            d[i] -= x[i];
            gd += g[i] * d[i];
        }
        if gd >= 0.0 {
            return (f, true);
        }
        let f_ref = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut alpha = 1.0;
        let f_new = loop {
            for i in 0..n {
                trial[i] = x[i] + alpha * d[i];
            }
            let ft = fg(&trial, None);
            if ft <= f_ref + 1e-4 * alpha * gd || alpha < 1e-12 {
                break ft;
            }
            let a_q = -0.5 * gd * alpha * alpha / (ft - f - alpha * gd);
            alpha = if a_q > 0.1 * alpha && a_q < 0.9 * alpha { a_q } else { 0.5 * alpha };
        };
        if alpha < 1e-12 && f_new > f {
            return (f, false);
        }
        fg(&trial, Some(&mut g_new));
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..n {
            let s = trial[i] - x[i];
            ss += s * s;
            sy += s * (g_new[i] - g[i]);
        }
        step = if sy <= 0.0 { 1e6 } else { (ss / sy).clamp(1e-10, 1e6) };
        x.copy_from_slice(&trial);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        history.push(f);
        if history.len() > MEMORY {
            history.remove(0);
        }
    }
    (f, pg_norm(x, &g) <= tol)
}

fn finish(p: &PlannerProblem, t_final: f64, traj: Vec<Vec<Vec2>>, outer: usize, converged: bool, kept_init: bool) -> PlannerSolution {
    let dt = t_final / p.n_t as f64;
    let slacks: Vec<Vec<f64>> = traj
        .iter()
        .map(|t| t.windows(2).map(|w| (w[1] - w[0]).norm() / dt).collect())
        .collect();
    let path_lengths: Vec<f64> = traj.iter().map(|t| path_length(t, dt)).collect();
    let log_survival = (0..p.n_attackers())
        .map(|i| survival_log(&traj, (p.attacker_pos[i], p.attacker_vel[i]), &p.weapon, dt))
        .collect();
    PlannerSolution {
        t_final,
        cost: path_lengths.iter().sum(),
        path_lengths,
        log_survival,
        slacks,
        trajectories: traj,
        converged,
        kept_init,
        outer_iterations: outer,
    }
}

fn validate_init(p: &PlannerProblem, init: &[Vec<Vec2>]) -> Result<()> {
    if init.len() != p.n_defenders() || init.iter().any(|t| t.len() != p.n_t + 1) {
        return Err(Error::invalid("init", format!("expected {} trajectories of {} waypoints", p.n_defenders(), p.n_t + 1)));
    }
    for (t, &d) in init.iter().zip(&p.defenders) {
        if t[0].distance(d) > 1e-9 {
            return Err(Error::invalid("init", "trajectories must start at the defender positions"));
        }
    }
    Ok(())
}

/// Solves with the horizon fixed at `t_final`.
pub fn solve_fixed(p: &PlannerProblem, t_final: f64, init: &[Vec<Vec2>], opts: &SolverOptions) -> Result<PlannerSolution> {
    p.validate()?;
    validate_init(p, init)?;
    let dt = t_final / p.n_t as f64;
    let init_cost: f64 = init.iter().map(|t| path_length(t, dt)).sum();
    let sub = Subproblem::new(p, t_final, opts.margin, init_cost.max(1.0));
    let mut x = sub.encode(init, None);
    let mut mu = sub.multipliers();
    let mut rho = 10.0;
    let n_pos = sub.lay.slack(0, 0);
    let mut best: Option<(f64, Vec<Vec<Vec2>>)> = None;
    let init_feas = check_feasibility(p, init, None, t_final);
    let mut kept_init = false;
    if init_feas.max_violation() <= opts.feas_tol {
        best = Some((init_cost, init.to_vec()));
        kept_init = true;
    }
    let mut prev_comp = f64::INFINITY;
    let mut converged = false;
    let mut outer = 0;
    let mut worst = (0usize, f64::INFINITY);
    for it in 0..opts.max_outer {
        outer = it + 1;
        let inner_tol = (0.1f64.powi(it as i32 + 1)).max(1e-6);
        let mut work = x.clone();
        let mut full_grad = vec![0.0; x.len()];
        let mut pos = x[..n_pos].to_vec();
        let (_, inner_ok) = spg(
            |y, g| {
                work[..n_pos].copy_from_slice(y);
                sub.fill_slacks(&mut work, &mu, rho);
                match g {
                    Some(g) => {
                        let v = sub.lagrangian(&work, &mu, rho, Some(&mut full_grad));
                        g.copy_from_slice(&full_grad[..n_pos]);
                        v
                    }
                    None => sub.lagrangian(&work, &mu, rho, None),
                }
            },
            &mut pos,
            n_pos,
            opts.max_inner,
            inner_tol,
        );
        x[..n_pos].copy_from_slice(&pos);
        sub.fill_slacks(&mut x, &mu, rho);
        let (viol, comp) = sub.update(&x, &mut mu, rho);
        let (traj, _) = sub.decode(&x);
        let feas = check_feasibility(p, &traj, None, t_final);
        if feas.survival < worst.1 {
            worst = (feas.worst_attacker, feas.survival);
        }
        if feas.max_violation() <= opts.feas_tol {
            let cost: f64 = traj.iter().map(|t| path_length(t, dt)).sum();
            if best.as_ref().is_none_or(|b| cost < b.0) {
                best = Some((cost, traj));
                kept_init = false;
            }
            if viol <= 0.0 && comp <= 1e-4 && inner_ok {
                converged = true;
                break;
            }
        }
        if comp > 0.25 * prev_comp {
            rho = (rho * 10.0).min(1e8);
        }
        prev_comp = comp;
    }
    match best {
        Some((_, traj)) => {
            if !converged {
                log::warn!("planner: no convergence after {outer} outer iterations at T = {t_final:.3}; returning the best feasible point");
            }
            Ok(finish(p, t_final, traj, outer, converged, kept_init))
        }
        None => Err(Error::Infeasible {
            attacker: worst.0,
            violation: worst.1,
        }),
    }
}

/// Full solve including the horizon search. Each candidate horizon starts
/// from the best solution so far, resampled in time.
pub fn solve(p: &PlannerProblem, init: &[Vec<Vec2>], opts: &SolverOptions) -> Result<PlannerSolution> {
    p.validate()?;
    validate_init(p, init)?;
    let base = solve_fixed(p, p.t_init, init, opts);
    if opts.t_evals <= 1 {
        return base;
    }
    let mut best = base.as_ref().ok().cloned();
    let mut first_err = base.err();
    let mut seed = best.as_ref().map_or_else(|| init.to_vec(), |b| b.trajectories.clone());
    let mut seed_t = p.t_init;
    let mut evals = 1;
    let penalty = 1e6;
    let objective = |t: f64| -> f64 {
        if evals >= opts.t_evals {
            return f64::INFINITY;
        }
        evals += 1;
        let times: Vec<f64> = (0..=p.n_t).map(|k| seed_t * k as f64 / p.n_t as f64).collect();
        let warm: Vec<Vec<Vec2>> = seed.iter().map(|tr| resample(&times, tr, p.n_t, t)).collect();
        match solve_fixed(p, t, &warm, opts) {
            Ok(s) => {
                let c = s.cost;
                if best.as_ref().is_none_or(|b| c < b.cost) {
                    seed = s.trajectories.clone();
                    seed_t = t;
                    best = Some(s);
                }
                c
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
                penalty
            }
        }
    };
    // The search space is log T so the bracket is symmetric about T_init.
    let mut obj = objective;
    let span = 2f64.ln();
    golden_section(|u| obj(p.t_init * u.exp()), -span, span, 1e-3, opts.t_evals);
    match best {
        Some(b) => Ok(b),
        None => Err(first_err.expect("a failed solve leaves an error")),
    }
}

/// Scenario parameters for a planner instance bootstrapped from a pursuit run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    pub pursuit: PursuitParams,
    pub n_t: usize,
    pub p_max: f64,
    /// Peak kill rate `λ` of the weapon shape.
    pub kill_rate: f64,
    /// Fraction of the mean moving path length below which a defender counts
    /// as parked.
    pub deploy_threshold: f64,
    pub solver: SolverOptions,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            pursuit: PursuitParams {
                n_attackers: 10,
                n_defenders: 10,
                ..PursuitParams::default()
            },
            n_t: 40,
            p_max: 0.05,
            kill_rate: 5.0,
            deploy_threshold: 0.01,
            solver: SolverOptions::default(),
        }
    }
}

const PLANNER_NAMES: &[&str] = &["N_a", "N_d", "V_a", "V_d", "R", "tau", "D", "N_T", "p_max", "lambda", "deploy_threshold", "t_evals", "subset_starts"];

impl ScenarioParams for PlannerParams {
    const SCENARIO: Scenario = Scenario::Planner;

    fn names() -> &'static [&'static str] {
        PLANNER_NAMES
    }

    fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "N_T" => self.n_t as f64,
            "p_max" => self.p_max,
            "lambda" => self.kill_rate,
            "deploy_threshold" => self.deploy_threshold,
            "t_evals" => self.solver.t_evals as f64,
            "subset_starts" => self.solver.subset_starts as f64,
            n if PLANNER_NAMES.contains(&n) => return self.pursuit.get(n),
            _ => return None,
        })
    }

    fn set(&mut self, name: &str, v: f64) -> Result<()> {
        match name {
            "N_T" => self.n_t = as_count(name, v)?,
            "p_max" => self.p_max = v,
            "lambda" => self.kill_rate = v,
            "deploy_threshold" => self.deploy_threshold = v,
            "t_evals" => self.solver.t_evals = as_count(name, v)?,
            "subset_starts" => self.solver.subset_starts = as_count(name, v)?,
            n if PLANNER_NAMES.contains(&n) => self.pursuit.set(n, v)?,
            _ => return Err(Self::unknown(name)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.pursuit.validate()?;
        if self.n_t < 2 {
            return Err(Error::invalid("N_T", "at least two intervals are required"));
        }
        if !(self.p_max > 0.0 && self.p_max < 1.0) {
            return Err(Error::invalid("p_max", "must lie in (0, 1)"));
        }
        if !(self.kill_rate > 0.0 && self.kill_rate.is_finite()) {
            return Err(Error::invalid("lambda", "must be finite and > 0"));
        }
        if !(self.deploy_threshold > 0.0 && self.deploy_threshold < 1.0) {
            return Err(Error::invalid("deploy_threshold", "must lie in (0, 1)"));
        }
        if self.solver.t_evals == 0 {
            return Err(Error::invalid("t_evals", "at least one horizon must be evaluated"));
        }
        Ok(())
    }
}

/// A planner instance together with the pursuit trajectories it starts from.
#[derive(Debug, Clone)]
pub struct Instance {
    pub problem: PlannerProblem,
    pub init: Vec<Vec<Vec2>>,
    pub trace: PursuitTrace,
}

/// Runs the pursuit scenario with `seed` and turns it into a planner problem:
/// `v_max = V_d`, `a_max = 2V_d/τ`, horizon = the kill time.
pub fn instance_from_pursuit(params: &PlannerParams, seed: u64) -> Result<Instance> {
    params.validate()?;
    let pp = &params.pursuit;
    let (out, trace) = Pursuit::new(pp.clone(), seed)?.run_traced(1)?;
    if out.timed_out {
        return Err(Error::Config("pursuit run timed out; the planner needs a completed engagement".into()));
    }
    let t_init = out.t_k.max(pp.dt);
    let problem = PlannerProblem {
        defenders: trace.defenders[0].clone(),
        attacker_pos: vec![Vec2::ZERO; pp.n_attackers],
        attacker_vel: trace.attacker_velocities.clone(),
        n_t: params.n_t,
        v_max: pp.defender_speed,
        a_max: 2.0 * pp.defender_speed / pp.tau,
        p_max: params.p_max,
        weapon: WeaponShape::from_radius(pp.kill_radius, params.kill_rate),
        t_init,
    };
    let init = init_from_trace(&trace, params.n_t, t_init);
    Ok(Instance { problem, init, trace })
}

/// Initial guess in which only the first `k` defenders pursue and the rest
/// stay parked. Returns the trajectories and their horizon.
pub fn subset_start(inst: &Instance, params: &PlannerParams, k: usize) -> Result<(Vec<Vec<Vec2>>, f64)> {
    let nd = inst.problem.n_defenders();
    if k == 0 || k > nd {
        return Err(Error::invalid("k", format!("active count must lie in 1..={nd}")));
    }
    let mut pp = params.pursuit.clone();
    pp.n_defenders = k;
    let run = Pursuit::with_agents(pp.clone(), inst.trace.attacker_velocities.clone(), inst.problem.defenders[..k].to_vec())?;
    let (out, trace) = run.run_traced(1)?;
    if out.timed_out {
        return Err(Error::Config(format!("pursuit with {k} active defenders timed out")));
    }
    let t = out.t_k.max(pp.dt);
    let mut init = init_from_trace(&trace, params.n_t, t);
    init.extend(inst.problem.defenders[k..].iter().map(|&d| vec![d; params.n_t + 1]));
    Ok((init, t))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanOutcome {
    pub problem: PlannerProblem,
    pub solution: PlannerSolution,
    pub init_cost: f64,
    pub init_deployed: usize,
    pub deployed: usize,
}

/// Builds the instance for `seed`, solves it from the full start and from
/// the best subset starts, and keeps the cheapest feasible plan.
pub fn plan(params: &PlannerParams, seed: u64) -> Result<PlanOutcome> {
    let inst = instance_from_pursuit(params, seed)?;
    let nd = inst.problem.n_defenders();
    let dt = inst.problem.t_init / inst.problem.n_t as f64;
    let init_lengths: Vec<f64> = inst.init.iter().map(|t| path_length(t, dt)).collect();

    let mut subsets: Vec<(f64, Vec<Vec<Vec2>>, f64)> = (1..nd)
        .into_par_iter()
        .filter_map(|k| {
            let (init, t) = subset_start(&inst, params, k).ok()?;
            let cost = init.iter().map(|tr| path_length(tr, t / params.n_t as f64)).sum();
            Some((cost, init, t))
        })
        .collect();
    subsets.sort_by(|a, b| a.0.total_cmp(&b.0));
    subsets.truncate(params.solver.subset_starts);

    let mut starts = vec![(inst.init.clone(), inst.problem.t_init)];
    starts.extend(subsets.into_iter().map(|(_, init, t)| (init, t)));
    let results: Vec<Result<PlannerSolution>> = starts
        .into_par_iter()
        .map(|(init, t)| {
            let mut prob = inst.problem.clone();
            prob.t_init = t;
            solve(&prob, &init, &params.solver)
        })
        .collect();
    let mut best: Option<PlannerSolution> = None;
    let mut first_err = None;
    for r in results {
        match r {
            Ok(s) if best.as_ref().is_none_or(|b| s.cost < b.cost) => best = Some(s),
            Ok(_) => {}
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let solution = match (best, first_err) {
        (Some(s), _) => s,
        (None, Some(e)) => return Err(e),
        (None, None) => unreachable!("the full start is always attempted"),
    };
    Ok(PlanOutcome {
        deployed: count_deployed(&solution, params.deploy_threshold),
        init_deployed: count_deployed_lengths(&init_lengths, params.deploy_threshold),
        init_cost: init_lengths.iter().sum(),
        solution,
        problem: inst.problem,
    })
}

/// Defender count at which the effective defender size equals `n_a`, from
/// inverting the `N_d,eff` law.
pub fn off_the_shelf_ndmin(n_a: f64, p: &PursuitParams) -> f64 {
    let unit = predict_ndeff(1.0, p.kill_radius, p.unit, p.speed_ratio(), p.tau, p.attacker_speed);
    (n_a / unit).powf(2.0 / 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentStudy {
    pub n_a: Vec<f64>,
    pub optimized: Vec<f64>,
    pub off_the_shelf: Vec<f64>,
    pub optimized_fit: PowerLawFit,
    pub off_the_shelf_fit: PowerLawFit,
}

/// Mean deployed count over `seeds` instances per attacker count, with power
/// laws fitted for the planner and for the off-the-shelf requirement.
pub fn scaling_exponent_study(n_a: &[usize], params: &PlannerParams, seeds: u64) -> Result<ExponentStudy> {
    if n_a.len() < 4 {
        return Err(Error::InsufficientData("the exponent study needs at least 4 attacker counts".into()));
    }
    let jobs: Vec<(usize, u64)> = n_a.iter().flat_map(|&n| (0..seeds).map(move |s| (n, s))).collect();
    let counts: Vec<usize> = jobs
        .par_iter()
        .map(|&(n, s)| {
            let mut p = params.clone();
            p.pursuit.n_attackers = n;
            plan(&p, derive_seed(params.pursuit.base_seed, s)).map(|o| o.deployed)
        })
        .collect::<Result<_>>()?;
    let x: Vec<f64> = n_a.iter().map(|&n| n as f64).collect();
    let optimized: Vec<f64> = counts
        .chunks(seeds as usize)
        .map(|c| c.iter().sum::<usize>() as f64 / c.len() as f64)
        .collect();
    let off: Vec<f64> = x.iter().map(|&n| off_the_shelf_ndmin(n, &params.pursuit)).collect();
    Ok(ExponentStudy {
        optimized_fit: fit_powerlaw(&x, &optimized)?,
        off_the_shelf_fit: fit_powerlaw(&x, &off)?,
        n_a: x,
        optimized,
        off_the_shelf: off,
    })
}
