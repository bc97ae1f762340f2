//! Parameter sweeps: grid expansion, seeded parallel execution and the record
//! file format.
//!
//! A sweep config is TOML:
//!
//! ```toml
//! scenario = "battle"      # battle | search | pursuit | planner
//! ensemble = 5             # runs per grid point
//! base_seed = 1
//! output = "battle.csv"    # optional
//!
//! [fixed]                  # optional single overrides of the defaults
//! R_a = 6.0
//!
//! [grid]                   # every combination is run
//! N_d = [30, 50, 80]
//! R_d = [2.0, 4.0]
//! ```
//!
//! Grid keys are expanded in sorted order with the last key varying fastest,
//! then ensemble members. Run `i` is seeded with `derive_seed(base_seed, i)`.
//!
//! Records are CSV with the columns in [`FIXED_COLUMNS`] followed by every
//! parameter of the scenario. A `<output>.meta.json` file carries the schema
//! version, the sweep config and the crate version. Rows are appended and flushed one
//! at a time, so an interrupted sweep restarts where it stopped.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attrition::derive_seed;
use crate::battle::{run_battle, BattleParams};
use crate::error::{Error, Result};
use crate::params::{Scenario, ScenarioParams};
use crate::planner::{plan, PlannerParams};
use crate::pursuit::{run_pursuit, PursuitParams};
use crate::search::{simulate_search, SearchParams};

pub const SCHEMA_VERSION: u32 = 1;

pub const FIXED_COLUMNS: [&str; 9] = [
    "run_index",
    "point_index",
    "member",
    "scenario",
    "seed",
    "metric",
    "value",
    "wall_time_s",
    "flags",
];

/// Sweeps abort once more than this fraction of runs has failed.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub scenario: Scenario,
    #[serde(default)]
    pub grid: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
    #[serde(default = "one")]
    pub ensemble: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn one() -> usize {
    1
}

impl SweepSpec {
    pub fn new(scenario: Scenario) -> Self {
        SweepSpec {
            scenario,
            grid: BTreeMap::new(),
            fixed: BTreeMap::new(),
            ensemble: 1,
            base_seed: 0,
            output: None,
        }
    }

    pub fn with_grid(mut self, name: &str, values: &[f64]) -> Self {
        self.grid.insert(name.to_string(), values.to_vec());
        self
    }

    pub fn with_fixed(mut self, name: &str, value: f64) -> Self {
        self.fixed.insert(name.to_string(), value);
        self
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SweepSpec = toml::from_str(text)?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("sweep specs always serialize")
    }

    /// Number of grid points.
    pub fn points(&self) -> usize {
        self.grid.values().map(Vec::len).product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ensemble < 1 {
            return Err(Error::Config("ensemble must be at least 1".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("grid must name at least one parameter".into()));
        }
        for (name, values) in &self.grid {
            if values.is_empty() {
                return Err(Error::Config(format!("grid entry `{name}` has no values")));
            }
            if self.fixed.contains_key(name) {
                return Err(Error::Config(format!("`{name}` appears in both grid and fixed")));
            }
        }
        let names = scenario_names(self.scenario);
        for name in self.grid.keys().chain(self.fixed.keys()) {
            if !names.contains(&name.as_str()) {
                return Err(Error::UnknownParam {
                    scenario: self.scenario.to_string(),
                    name: name.clone(),
                });
            }
        }
        Ok(())
    }
}

pub fn scenario_names(s: Scenario) -> &'static [&'static str] {
    match s {
        Scenario::Battle => BattleParams::names(),
        Scenario::Search => SearchParams::names(),
        Scenario::Pursuit => PursuitParams::names(),
        Scenario::Planner => PlannerParams::names(),
    }
}

/// One run of an expanded sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSpec {
    pub run_index: u64,
    pub point_index: u64,
    pub member: u64,
    pub seed: u64,
    /// Fixed overrides followed by this point's grid values.
    pub overrides: Vec<(String, f64)>,
}

pub fn expand_grid(spec: &SweepSpec) -> Result<Vec<RunSpec>> {
    spec.validate()?;
    let keys: Vec<(&String, &Vec<f64>)> = spec.grid.iter().collect();
    let n_points = spec.points();
    let mut runs = Vec::with_capacity(n_points * spec.ensemble);
    for point in 0..n_points {
        let mut rem = point;
        let mut combo = vec![0.0; keys.len()];
        for (slot, (_, vals)) in keys.iter().enumerate().rev() {
            combo[slot] = vals[rem % vals.len()];
            rem /= vals.len();
        }
        let mut overrides: Vec<(String, f64)> = spec.fixed.iter().map(|(k, v)| (k.clone(), *v)).collect();
        overrides.extend(keys.iter().zip(&combo).map(|((k, _), v)| ((*k).clone(), *v)));
        // surface invalid combinations before anything runs
        resolve(spec.scenario, &overrides)?;
        for member in 0..spec.ensemble {
            let run_index = (point * spec.ensemble + member) as u64;
            runs.push(RunSpec {
                run_index,
                point_index: point as u64,
                member: member as u64,
                seed: derive_seed(spec.base_seed, run_index),
                overrides: overrides.clone(),
            });
        }
    }
    Ok(runs)
}

fn apply<P: ScenarioParams + Default>(overrides: &[(String, f64)]) -> Result<P> {
    let mut p = P::default();
    for (k, v) in overrides {
        p.set(k, *v)?;
    }
    p.validate()?;
    Ok(p)
}

/// Full parameter values for a scenario after applying `overrides` to the defaults.
pub fn resolve(s: Scenario, overrides: &[(String, f64)]) -> Result<Vec<(String, f64)>> {
    fn named<P: ScenarioParams>(p: &P) -> Vec<(String, f64)> {
        p.values().into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
    Ok(match s {
        Scenario::Battle => named(&apply::<BattleParams>(overrides)?),
        Scenario::Search => named(&apply::<SearchParams>(overrides)?),
        Scenario::Pursuit => named(&apply::<PursuitParams>(overrides)?),
        Scenario::Planner => named(&apply::<PlannerParams>(overrides)?),
    })
}

/// Metric name reported for each scenario.
pub fn metric_name(s: Scenario) -> &'static str {
    match s {
        Scenario::Battle => "P_a",
        Scenario::Search => "P_A",
        Scenario::Pursuit => "t_k",
        Scenario::Planner => "N_d_min",
    }
}

/// Runs a single scenario instance, returning the metric and its flags.
pub fn run_scenario(s: Scenario, overrides: &[(String, f64)], seed: u64) -> Result<(f64, Vec<String>)> {
    let own = |f: Vec<&'static str>| f.into_iter().map(String::from).collect();
    Ok(match s {
        Scenario::Battle => {
            let o = run_battle(&apply::<BattleParams>(overrides)?, seed)?;
            (o.p_a, own(o.flags()))
        }
        Scenario::Search => {
            let o = simulate_search(&apply::<SearchParams>(overrides)?, seed)?;
            (o.p_a, own(o.flags()))
        }
        Scenario::Pursuit => {
            let o = run_pursuit(&apply::<PursuitParams>(overrides)?, seed)?;
            (o.t_k, own(o.flags()))
        }
        Scenario::Planner => {
            let o = plan(&apply::<PlannerParams>(overrides)?, seed)?;
            let mut flags = Vec::new();
            if !o.solution.converged {
                flags.push("not_converged".to_string());
            }
            (o.deployed as f64, flags)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_index: u64,
    pub point_index: u64,
    pub member: u64,
    pub scenario: Scenario,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    pub wall_time_s: f64,
    pub flags: Vec<String>,
    /// Every scenario parameter, in the scenario's canonical order.
    pub params: Vec<(String, f64)>,
}

impl RunRecord {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    pub fn failed(&self) -> bool {
        self.flags.iter().any(|f| f == "failed")
    }

    /// Equality on everything except wall time, which is the only
    /// nondeterministic field.
    pub fn same_result(&self, other: &RunRecord) -> bool {
        let a = RunRecord { wall_time_s: 0.0, ..self.clone() };
        let b = RunRecord { wall_time_s: 0.0, ..other.clone() };
        a.run_index == b.run_index
            && a.point_index == b.point_index
            && a.member == b.member
            && a.scenario == b.scenario
            && a.seed == b.seed
            && a.metric == b.metric
            && a.value.to_bits() == b.value.to_bits()
            && a.flags == b.flags
            && a.params.len() == b.params.len()
            && a.params.iter().zip(&b.params).all(|(x, y)| x.0 == y.0 && x.1.to_bits() == y.1.to_bits())
    }
}

pub fn execute(spec: &SweepSpec, run: &RunSpec) -> RunRecord {
    let start = Instant::now();
    let params = resolve(spec.scenario, &run.overrides).unwrap_or_default();
    let (value, flags) = match run_scenario(spec.scenario, &run.overrides, run.seed) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("run {} failed: {e}", run.run_index);
            (f64::NAN, vec!["failed".to_string()])
        }
    };
    RunRecord {
        run_index: run.run_index,
        point_index: run.point_index,
        member: run.member,
        scenario: spec.scenario,
        seed: run.seed,
        metric: metric_name(spec.scenario).to_string(),
        value,
        wall_time_s: start.elapsed().as_secs_f64(),
        flags,
        params,
    }
}

pub fn header(s: Scenario) -> Vec<String> {
    FIXED_COLUMNS
        .iter()
        .map(|c| c.to_string())
        .chain(scenario_names(s).iter().map(|n| n.to_string()))
        .collect()
}

fn row(r: &RunRecord) -> Vec<String> {
    let mut out = vec![
        r.run_index.to_string(),
        r.point_index.to_string(),
        r.member.to_string(),
        r.scenario.to_string(),
        r.seed.to_string(),
        r.metric.clone(),
        r.value.to_string(),
        r.wall_time_s.to_string(),
        r.flags.join(";"),
    ];
    out.extend(r.params.iter().map(|(_, v)| v.to_string()));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub columns: Vec<String>,
    pub code_version: String,
    pub created_unix: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<SweepSpec>,
}

pub fn metadata_path(records: &Path) -> PathBuf {
    let mut s = records.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_metadata(path: &Path, scenario: Scenario, spec: Option<&SweepSpec>) -> Result<()> {
    let meta = Metadata {
        schema_version: SCHEMA_VERSION,
        scenario,
        columns: header(scenario),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        spec: spec.cloned(),
    };
    std::fs::write(metadata_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Writes a complete record file (and its metadata), replacing any existing one.
pub fn write_records(path: &Path, scenario: Scenario, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(scenario))?;
    for r in records {
        w.write_record(row(r))?;
    }
    w.flush()?;
    write_metadata(path, scenario, None)
}

fn schema(path: &Path, reason: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads a record file, checking the metadata version when present and the
/// header always.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let meta_path = metadata_path(path);
    if meta_path.exists() {
        let meta: Metadata = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)
            .map_err(|e| schema(path, format!("unreadable metadata: {e}")))?;
        if meta.schema_version != SCHEMA_VERSION {
            return Err(schema(
                path,
                format!("schema version {} is not supported (expected {SCHEMA_VERSION})", meta.schema_version),
            ));
        }
    }
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let head: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    if head.len() < FIXED_COLUMNS.len() || head[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
        return Err(schema(path, "header does not start with the record columns"));
    }
    let param_names = head[FIXED_COLUMNS.len()..].to_vec();
    let mut out = Vec::new();
    let mut scenario_seen: Option<Scenario> = None;
    for rec in rd.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|_| schema(path, format!("bad number `{}` in column {}", field(i), head[i])))
        };
        let int = |i: usize| -> Result<u64> {
            field(i)
                .parse::<u64>()
                .map_err(|_| schema(path, format!("bad integer `{}` in column {}", field(i), head[i])))
        };
        let scenario: Scenario = field(3).parse().map_err(|_| schema(path, format!("unknown scenario `{}`", field(3))))?;
        if scenario_seen.is_none() {
            let want = header(scenario);
            if head != want {
                return Err(schema(path, format!("parameter columns do not match the {scenario} schema")));
            }
            scenario_seen = Some(scenario);
        }
        let flags = if field(8).is_empty() {
            Vec::new()
        } else {
            field(8).split(';').map(String::from).collect()
        };
        let mut params = Vec::with_capacity(param_names.len());
        for (k, name) in param_names.iter().enumerate() {
            params.push((name.clone(), num(FIXED_COLUMNS.len() + k)?));
        }
        out.push(RunRecord {
            run_index: int(0)?,
            point_index: int(1)?,
            member: int(2)?,
            scenario,
            seed: int(4)?,
            metric: field(5).to_string(),
            value: num(6)?,
            wall_time_s: num(7)?,
            flags,
            params,
        });
    }
    Ok(out)
}

/// Drops a torn final line left by an interrupted write.
fn trim_partial_tail(path: &Path) -> Result<()> {
    let mut f = OpenOptions::new().read(true).write(true).open(path)?;
    let len = f.seek(SeekFrom::End(0))?;
    if len == 0 {
        return Ok(());
    }
    let mut good = 0u64;
    let mut pos = 0u64;
    f.seek(SeekFrom::Start(0))?;
    let mut reader = BufReader::new(&f);
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line)?;
        if n == 0 {
            break;
        }
        pos += n as u64;
        if line.last() == Some(&b'\n') {
            good = pos;
        }
    }
    drop(reader);
    if good < len {
        f.set_len(good)?;
    }
    Ok(())
}

/// Executes every run not already present in the output file. Returns the
/// complete record set sorted by run index.
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<Vec<RunRecord>> {
    let runs = expand_grid(spec)?;
    let total = runs.len();
    let mut done: Vec<RunRecord> = Vec::new();
    let mut writer: Option<File> = None;
    if let Some(path) = &spec.output {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        if path.exists() && std::fs::metadata(path)?.len() > 0 {
            trim_partial_tail(path)?;
            done = read_records(path)?;
            if let Some(r) = done.iter().find(|r| r.scenario != spec.scenario) {
                return Err(schema(path, format!("existing records are for scenario {}", r.scenario)));
            }
        } else {
            let mut f = File::create(path)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(header(spec.scenario))?;
            f.write_all(&w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
            f.flush()?;
        }
        write_metadata(path, spec.scenario, Some(spec))?;
        writer = Some(OpenOptions::new().append(true).open(path)?);
    }
    let finished: BTreeSet<u64> = done.iter().map(|r| r.run_index).collect();
    let pending: Vec<&RunSpec> = runs.iter().filter(|r| !finished.contains(&r.run_index)).collect();
    if !finished.is_empty() {
        log::info!("resuming sweep: {} of {total} runs already recorded", finished.len());
    }
    let failures = AtomicUsize::new(done.iter().filter(|r| r.failed()).count());
    let limit = (MAX_FAILURE_FRACTION * total as f64).floor() as usize;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let (tx, rx) = mpsc::channel::<RunRecord>();
    let mut fresh = Vec::with_capacity(pending.len());
    let mut io_error: Option<Error> = None;
    std::thread::scope(|scope| {
        let failures = &failures;
        scope.spawn(move || {
            pool.install(|| {
                pending.par_iter().for_each_with(tx, |tx, run| {
                    if failures.load(Ordering::Relaxed) > limit {
                        return;
                    }
                    let rec = execute(spec, run);
                    if rec.failed() {
                        failures.fetch_add(1, Ordering::Relaxed);
                    }
                    let _ = tx.send(rec);
                });
            });
        });
        for rec in rx {
            if let (Some(f), None) = (writer.as_mut(), io_error.as_ref()) {
                let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
                let bytes = w
                    .write_record(row(&rec))
                    .map_err(Error::from)
                    .and_then(|_| w.into_inner().map_err(|e| Error::Io(e.into_error())));
                if let Err(e) = bytes.and_then(|b| f.write_all(&b).and_then(|_| f.flush()).map_err(Error::from)) {
                    io_error = Some(e);
                }
            }
            fresh.push(rec);
        }
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    done.extend(fresh);
    done.sort_by_key(|r| r.run_index);
    let failed: Vec<&RunRecord> = done.iter().filter(|r| r.failed()).collect();
    if failed.len() > limit {
        let first = failed[0];
        return Err(Error::SweepAborted {
            failed: failed.len(),
            total,
            first: format!("run {} ({:?})", first.run_index, first.params),
        });
    }
    Ok(done)
}

/// Mean metric per grid point, in point order, with that point's parameters.
pub fn point_means(records: &[RunRecord]) -> Vec<(u64, Vec<(String, f64)>, f64)> {
    let mut by_point: BTreeMap<u64, (Vec<(String, f64)>, f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.failed()) {
        let e = by_point.entry(r.point_index).or_insert_with(|| (r.params.clone(), 0.0, 0));
        e.1 += r.value;
        e.2 += 1;
    }
    by_point.into_iter().map(|(k, (p, s, n))| (k, p, s / n as f64)).collect()
}
