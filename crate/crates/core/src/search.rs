//! Cooperative area search by a fleet of AUVs under Poisson attrition.
//!
//! The search area is a `W × H` rectangle with `W = r·θ` (arc length at the
//! stand-off range) and `H = Δ`. It is split into `N` vertical strips, each
//! swept with a lawnmower path. Losses are exponential in distance travelled,
//! so runs are resolved event by event rather than integrated in time.
//!
//! Without communication a strip counts only if its AUV survives to report.
//! With communication everything searched before a loss counts and the
//! survivors re-split the remaining area among themselves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attrition::{derive_seed, RngStream};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::params::{as_count, as_switch, switch, Scenario, ScenarioParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub n: usize,
    /// Sensing range `R_s` (m).
    pub sensing_range: f64,
    /// Communication range `R_c` (m).
    pub comm_range: f64,
    /// Loss rate `λ` (1/s).
    pub loss_rate: f64,
    /// Cruise speed `V` (m/s).
    pub speed: f64,
    /// Battery endurance `B` (s); infinite by default.
    pub battery: f64,
    /// Distance `r` from base to the search area (m).
    pub standoff: f64,
    /// Depth `Δ` of the search area (m).
    pub depth: f64,
    /// Angular width `θ` of the search area (degrees).
    pub theta_deg: f64,
    pub comms: bool,
    /// Whether the transit legs are exposed to attrition.
    pub transit_attrition: bool,
    pub ensemble: usize,
    pub base_seed: u64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            n: 10,
            sensing_range: 10.0,
            comm_range: 1.0,
            loss_rate: 6e-5 * 2.0,
            speed: 2.0,
            battery: f64::INFINITY,
            standoff: 2000.0,
            depth: 1000.0,
            theta_deg: 60.0,
            comms: true,
            transit_attrition: false,
            ensemble: 1000,
            base_seed: 0,
        }
    }
}

impl SearchParams {
    pub fn width(&self) -> f64 {
        self.standoff * self.theta_deg.to_radians()
    }

    pub fn height(&self) -> f64 {
        self.depth
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn aspect(&self) -> f64 {
        self.width() / self.height()
    }

    /// Longitudinal loss rate `λ/V` (1/m).
    pub fn loss_per_length(&self) -> f64 {
        self.loss_rate / self.speed
    }

    /// Round-trip transit length `2·√(r² + Δ²)`.
    pub fn transit_length(&self) -> f64 {
        2.0 * self.standoff.hypot(self.depth)
    }

    /// Path length the battery allows for searching, after the transit legs.
    pub fn search_budget(&self) -> f64 {
        (self.battery * self.speed - self.transit_length()).max(0.0)
    }

    pub fn n_eff(&self) -> f64 {
        compute_neff_search(self.n, self.speed, self.sensing_range, self.loss_rate, self.area(), self.comms)
    }
}

const SEARCH_NAMES: &[&str] = &[
    "N",
    "R_s",
    "R_c",
    "lambda",
    "lambda_over_v",
    "V",
    "battery",
    "r",
    "delta",
    "theta",
    "comms",
    "transit_attrition",
];

impl ScenarioParams for SearchParams {
    const SCENARIO: Scenario = Scenario::Search;

    fn names() -> &'static [&'static str] {
        SEARCH_NAMES
    }

    fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "N" => self.n as f64,
            "R_s" => self.sensing_range,
            "R_c" => self.comm_range,
            "lambda" => self.loss_rate,
            "lambda_over_v" => self.loss_per_length(),
            "V" => self.speed,
            "battery" => self.battery,
            "r" => self.standoff,
            "delta" => self.depth,
            "theta" => self.theta_deg,
            "comms" => switch(self.comms),
            "transit_attrition" => switch(self.transit_attrition),
            _ => return None,
        })
    }

    fn set(&mut self, name: &str, v: f64) -> Result<()> {
        match name {
            "N" => self.n = as_count(name, v)?,
            "R_s" => self.sensing_range = v,
            "R_c" => self.comm_range = v,
            "lambda" => self.loss_rate = v,
            "lambda_over_v" => self.loss_rate = v * self.speed,
            // keeps λ/V fixed when the speed changes
            "V" => {
                let per_length = self.loss_per_length();
                self.speed = v;
                self.loss_rate = per_length * v;
            }
            "battery" => self.battery = v,
            "r" => self.standoff = v,
            "delta" => self.depth = v,
            "theta" => self.theta_deg = v,
            "comms" => self.comms = as_switch(name, v)?,
            "transit_attrition" => self.transit_attrition = as_switch(name, v)?,
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
        if self.n < 1 {
            return Err(Error::invalid("N", "at least one vehicle is required"));
        }
        positive("R_s", self.sensing_range)?;
        positive("V", self.speed)?;
        positive("r", self.standoff)?;
        positive("delta", self.depth)?;
        positive("theta", self.theta_deg)?;
        if !(self.comm_range >= 0.0 && self.comm_range.is_finite()) {
            return Err(Error::invalid("R_c", "must be finite and >= 0"));
        }
        if !(self.loss_rate >= 0.0 && self.loss_rate.is_finite()) {
            return Err(Error::invalid("lambda", "must be finite and >= 0"));
        }
        if !(self.battery > 0.0) {
            return Err(Error::invalid("battery", "must be > 0 (inf for unlimited)"));
        }
        if self.ensemble < 1 {
            return Err(Error::invalid("ensemble", "must be >= 1"));
        }
        Ok(())
    }
}

/// `(V·R_s/(λ·A))·(N − 1)` with communication, `(V·R_s/(λ·A))·N` without.
/// Infinite when `λ = 0`.
pub fn compute_neff_search(n: usize, speed: f64, sensing_range: f64, loss_rate: f64, area: f64, comms: bool) -> f64 {
    let count = if comms { n.saturating_sub(1) } else { n } as f64;
    if loss_rate == 0.0 {
        return if count == 0.0 { 0.0 } else { f64::INFINITY };
    }
    speed * sensing_range / (loss_rate * area) * count
}

/// Axis-aligned strip `[x0, x0 + width] × [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strip {
    pub x0: f64,
    pub width: f64,
    pub height: f64,
}

impl Strip {
    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

/// `N` equal vertical strips covering the search rectangle.
pub fn partition_area(p: &SearchParams) -> Vec<Strip> {
    let w = p.width() / p.n as f64;
    (0..p.n)
        .map(|i| Strip {
            x0: i as f64 * w,
            width: w,
            height: p.height(),
        })
        .collect()
}

/// Which sides of a strip border another vehicle's strip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Neighbors {
    pub left: bool,
    pub right: bool,
}

impl Neighbors {
    pub fn of(index: usize, count: usize) -> Self {
        Neighbors {
            left: index > 0,
            right: index + 1 < count,
        }
    }

    pub const BOTH: Neighbors = Neighbors { left: true, right: true };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPath {
    pub waypoints: Vec<Vec2>,
    pub length: f64,
}

fn sweep_lines(width: f64, sensing_range: f64) -> (usize, f64) {
    let spacing = 2.0 * sensing_range;
    let n = ((width / spacing).ceil() as usize).max(1);
    let margin = (width - (n - 1) as f64 * spacing) / 2.0;
    (n, margin)
}

fn excursion(margin: f64, comm_range: f64) -> f64 {
    (margin - comm_range / 2.0).max(0.0)
}

/// Length of [`lawnmower_path`] without building the waypoints.
pub fn lawnmower_length(strip: &Strip, sensing_range: f64, comm_range: f64, nb: Neighbors) -> f64 {
    let (n, margin) = sweep_lines(strip.width, sensing_range);
    let out = excursion(margin, comm_range);
    let sides = nb.left as usize + nb.right as usize;
    n as f64 * strip.height + (n - 1) as f64 * 2.0 * sensing_range + 2.0 * out * sides as f64
}

/// Boustrophedon sweep of `strip` with lines `2·R_s` apart, centered in the
/// strip. Before the first line and after the last, the vehicle steps out to
/// `R_c/2` from each boundary shared with a neighbor and back.
pub fn lawnmower_path(strip: &Strip, sensing_range: f64, comm_range: f64, nb: Neighbors) -> SweepPath {
    let (n, margin) = sweep_lines(strip.width, sensing_range);
    let out = excursion(margin, comm_range);
    let spacing = 2.0 * sensing_range;
    let line_x = |k: usize| strip.x0 + margin + k as f64 * spacing;
    let mut pts = Vec::with_capacity(2 * n + 4);
    let start = Vec2::new(line_x(0), 0.0);
    pts.push(start);
    if nb.left && out > 0.0 {
        pts.push(Vec2::new(start.x - out, 0.0));
        pts.push(start);
    }
    for k in 0..n {
        let (y0, y1) = if k % 2 == 0 { (0.0, strip.height) } else { (strip.height, 0.0) };
        if k > 0 {
            pts.push(Vec2::new(line_x(k), y0));
        }
        pts.push(Vec2::new(line_x(k), y1));
    }
    let end = *pts.last().expect("at least one line");
    if nb.right && out > 0.0 {
        pts.push(Vec2::new(end.x + out, end.y));
        pts.push(end);
    }
    let length = pts.windows(2).map(|w| w[0].distance(w[1])).sum();
    SweepPath { waypoints: pts, length }
}

/// Distance travelled before loss: exponential with mean `V/λ`, or `None`
/// (never lost) when `λ = 0`.
pub fn sample_death_distance(loss_rate: f64, speed: f64, rng: &mut RngStream) -> Option<f64> {
    (loss_rate > 0.0).then(|| rng.exponential(speed / loss_rate))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchOutcome {
    /// Fraction of the area searched and reported.
    pub p_a: f64,
    pub losses: usize,
    /// The battery, not the path, ended some vehicle's search.
    pub battery_limited: bool,
    /// Some initial strip was narrower than one sweep width.
    pub narrow_strips: bool,
}

impl SearchOutcome {
    pub fn flags(&self) -> Vec<&'static str> {
        let mut f = Vec::new();
        if self.battery_limited {
            f.push("battery_limited");
        }
        if self.narrow_strips {
            f.push("narrow_strips");
        }
        f
    }
}

pub fn simulate_search(p: &SearchParams, seed: u64) -> Result<SearchOutcome> {
    p.validate()?;
    let mut rng = RngStream::new(seed);
    let lives: Vec<Option<f64>> = (0..p.n)
        .map(|_| sample_death_distance(p.loss_rate, p.speed, &mut rng))
        .collect();
    simulate_search_with_deaths(p, &lives)
}

/// Runs the search with given loss distances (`None` = never lost), one per
/// vehicle. Distances count search legs, plus the transit legs when
/// `transit_attrition` is set.
pub fn simulate_search_with_deaths(p: &SearchParams, lives: &[Option<f64>]) -> Result<SearchOutcome> {
    p.validate()?;
    if lives.len() != p.n {
        return Err(Error::invalid("lives", format!("expected {} entries, got {}", p.n, lives.len())));
    }
    let strips = partition_area(p);
    let narrow = strips[0].width < 2.0 * p.sensing_range;
    let leg = if p.transit_attrition { p.transit_length() / 2.0 } else { 0.0 };
    let mut out = if p.comms {
        shared_search(p, lives, leg)
    } else {
        solo_search(p, &strips, lives, leg)
    };
    out.narrow_strips = narrow;
    Ok(out)
}

fn solo_search(p: &SearchParams, strips: &[Strip], lives: &[Option<f64>], leg: f64) -> SearchOutcome {
    let budget = p.search_budget();
    let mut covered = 0.0;
    let mut losses = 0;
    let mut battery_limited = false;
    for (i, (strip, life)) in strips.iter().zip(lives).enumerate() {
        let len = lawnmower_length(strip, p.sensing_range, p.comm_range, Neighbors::of(i, p.n));
        let searched = len.min(budget);
        battery_limited |= budget < len;
        let needed = leg + searched + leg;
        let survives = life.is_none_or(|d| d >= needed);
        if survives {
            covered += if searched >= len { 1.0 } else { searched / len };
        } else {
            losses += 1;
        }
    }
    SearchOutcome {
        p_a: covered / p.n as f64,
        losses,
        battery_limited,
        narrow_strips: false,
    }
}

/// Active vehicle during the shared search: remaining life and battery, in
/// metres of search path.
struct Searcher {
    life: f64,
    battery: f64,
}

fn shared_search(p: &SearchParams, lives: &[Option<f64>], leg: f64) -> SearchOutcome {
    let area = p.area();
    let height = p.height();
    let budget = p.search_budget();
    let mut losses = 0;
    let mut fleet: Vec<Searcher> = Vec::with_capacity(p.n);
    for life in lives {
        match life {
            Some(d) if *d < leg => losses += 1,
            _ => fleet.push(Searcher {
                life: life.map_or(f64::INFINITY, |d| d - leg),
                battery: budget,
            }),
        }
    }
    fleet.retain(|s| s.battery > 0.0);
    let mut remaining = area;
    let mut battery_limited = false;
    while remaining > 0.0 && !fleet.is_empty() {
        let n = fleet.len();
        let share = remaining / n as f64;
        let strip = Strip {
            x0: 0.0,
            width: share / height,
            height,
        };
        // every strip of a phase uses the interior path so the fleet moves in lockstep
        let nb = if n > 1 { Neighbors::BOTH } else { Neighbors::default() };
        let len = lawnmower_length(&strip, p.sensing_range, p.comm_range, nb);
        let step = fleet
            .iter()
            .map(|s| s.life.min(s.battery))
            .fold(len, f64::min);
        if step >= len {
            remaining = 0.0;
            break;
        }
        remaining -= n as f64 * share * (step / len);
        for s in &mut fleet {
            s.life -= step;
            s.battery -= step;
        }
        let before = fleet.len();
        fleet.retain(|s| s.life > 0.0);
        losses += before - fleet.len();
        let before = fleet.len();
        fleet.retain(|s| s.battery > 0.0);
        battery_limited |= fleet.len() < before;
    }
    let remaining = remaining.max(0.0);
    SearchOutcome {
        p_a: 1.0 - remaining / area,
        losses,
        battery_limited,
        narrow_strips: false,
    }
}

/// Mean `P_A` over `p.ensemble` runs seeded from `p.base_seed`.
pub fn ensemble_pa(p: &SearchParams) -> Result<f64> {
    p.validate()?;
    let vals: Vec<f64> = (0..p.ensemble as u64)
        .into_par_iter()
        .map(|m| simulate_search(p, derive_seed(p.base_seed, m)).map(|o| o.p_a))
        .collect::<Result<_>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}
