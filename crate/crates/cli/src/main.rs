use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use swarmscale::analysis::{collapse_records, curve_label, curves_from_records, natural_axes, MasterCurve, YMap};
use swarmscale::params::{Scenario, ScenarioParams};
use swarmscale::planner::{
    check_feasibility, count_deployed, path_length, plan, solve, PlannerParams, PlannerProblem,
    PlannerSolution, SolverOptions,
};
use swarmscale::scaling::{fit_breakpoint, fit_powerlaw, fit_tanh_threshold};
use swarmscale::sweep::{read_records, resolve, run_scenario, run_sweep, metric_name, SweepSpec};
use swarmscale::{Error, Vec2};

#[derive(Parser)]
#[command(name = "swarmscale", version, about = "Swarm engagement simulator and scaling analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario instance and print its metric.
    Run {
        scenario: Option<String>,
        /// TOML file: optional `scenario` and `seed` keys plus a `[params]` table.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Parameter override, repeatable: `--set N_a=50`.
        #[arg(long = "set", value_name = "NAME=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the result as JSON here as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute a sweep config, appending records to its output CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
        /// Overrides the config's `base_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit every curve in a record file.
    Fit {
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: FitChoice,
        /// Control parameter on the x axis; defaults to the scenario's natural one.
        #[arg(long)]
        x: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rescale the curves of a record file onto master coordinates and score the collapse.
    Collapse {
        input: PathBuf,
        /// Master-curve CSV; the score JSON goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write raw and rescaled curves as plot-ready CSV files.
    PlotData {
        input: PathBuf,
        #[arg(long, default_value = "plot-data")]
        out: PathBuf,
    },
    /// Optimize defender trajectories.
    Plan {
        /// JSON instance: `{"problem": {...}, "init": [[{"x":..,"y":..}, ..], ..], "solver": {...}}`.
        #[arg(long, conflicts_with = "from_pursuit")]
        config: Option<PathBuf>,
        /// Pursuit record file; the instance is rebuilt from one of its rows.
        #[arg(long)]
        from_pursuit: Option<PathBuf>,
        /// Run index of the row used with `--from-pursuit`.
        #[arg(long, default_value_t = 0)]
        row: u64,
        #[arg(long = "set", value_name = "NAME=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output prefix: writes `<out>.trajectories.csv` and `<out>.solution.json`.
        #[arg(long, default_value = "plan")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FitChoice {
    Tanh,
    Breakpoint,
    Powerlaw,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

/// `println!` that ignores a closed stdout.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Run { scenario, config, set, seed, out } => cmd_run(scenario, config, &set, seed, out),
        Command::Sweep { config, workers, seed, out } => cmd_sweep(&config, workers, seed, out),
        Command::Fit { input, kind, x, out } => cmd_fit(&input, kind, x, out),
        Command::Collapse { input, out } => cmd_collapse(&input, out),
        Command::PlotData { input, out } => cmd_plot_data(&input, &out),
        Command::Plan { config, from_pursuit, row, set, seed, out } => cmd_plan(config, from_pursuit, row, &set, seed, &out),
    }
}

fn parse_sets(set: &[String]) -> CliResult<Vec<(String, f64)>> {
    set.iter()
        .map(|s| {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Failure::Config(format!("--set expects NAME=VALUE, got `{s}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Failure::Config(format!("--set {k}: `{v}` is not a number")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    scenario: Option<Scenario>,
    seed: Option<u64>,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn cmd_run(scenario: Option<String>, config: Option<PathBuf>, set: &[String], seed: Option<u64>, out: Option<PathBuf>) -> CliResult<()> {
    let cfg: RunConfig = match &config {
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    let scenario = match (scenario, cfg.scenario) {
        (Some(s), _) => s.parse::<Scenario>()?,
        (None, Some(s)) => s,
        (None, None) => return Err(Failure::Config("no scenario given".into())),
    };
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let mut overrides: Vec<(String, f64)> = cfg.params.into_iter().collect();
    overrides.extend(parse_sets(set)?);
    let params = resolve(scenario, &overrides)?;
    let (value, flags) = run_scenario(scenario, &overrides, seed)?;
    let metric = metric_name(scenario);
    say!("{metric} = {value}");
    if !flags.is_empty() {
        say!("flags: {}", flags.join(","));
    }
    if let Some(out) = out {
        let doc = json!({
            "scenario": scenario,
            "seed": seed,
            "metric": metric,
            "value": value,
            "flags": flags,
            "params": params.into_iter().collect::<BTreeMap<_, _>>(),
        });
        write_text(&out, &serde_json::to_string_pretty(&doc).expect("plain json"))?;
    }
    Ok(())
}

fn cmd_sweep(config: &Path, workers: usize, seed: Option<u64>, out: Option<PathBuf>) -> CliResult<()> {
    let mut spec = SweepSpec::from_toml(&read_text(config)?)?;
    if let Some(s) = seed {
        spec.base_seed = s;
    }
    if let Some(o) = out {
        spec.output = Some(o);
    }
    if spec.output.is_none() {
        spec.output = Some(PathBuf::from(format!("{}_sweep.csv", spec.scenario)));
    }
    if workers == 0 {
        return Err(Failure::Config("--workers must be at least 1".into()));
    }
    let records = run_sweep(&spec, workers)?;
    let failed = records.iter().filter(|r| r.failed()).count();
    say!(
        "{} runs ({} failed) written to {}",
        records.len(),
        failed,
        spec.output.as_ref().expect("set above").display()
    );
    Ok(())
}

fn cmd_fit(input: &Path, kind: FitChoice, x: Option<String>, out: Option<PathBuf>) -> CliResult<()> {
    let records = read_records(input)?;
    let scenario = records
        .first()
        .map(|r| r.scenario)
        .ok_or_else(|| Failure::Config(format!("{} holds no records", input.display())))?;
    let (natural_x, y) = natural_axes(scenario);
    let x = x.unwrap_or_else(|| natural_x.to_string());
    let y = if x == natural_x { y } else { YMap::Metric };
    let curves = curves_from_records(&records, &x, &y)?;
    let fits: Vec<serde_json::Value> = curves
        .iter()
        .map(|c| {
            let fit = match kind {
                FitChoice::Tanh => fit_tanh_threshold(c).map(|f| serde_json::to_value(f).expect("plain json")),
                FitChoice::Breakpoint => fit_breakpoint(c).map(|f| serde_json::to_value(f).expect("plain json")),
                FitChoice::Powerlaw => fit_powerlaw(&c.x, &c.y).map(|f| serde_json::to_value(f).expect("plain json")),
            };
            let mut entry = json!({ "label": curve_label(c, &[&x]), "params": c.params });
            match fit {
                Ok(v) => entry["fit"] = v,
                Err(e) => entry["error"] = json!(e.to_string()),
            }
            entry
        })
        .collect();
    let text = serde_json::to_string_pretty(&json!({ "scenario": scenario, "x": x, "curves": fits })).expect("plain json");
    match out {
        Some(p) => write_text(&p, &text),
        None => {
            say!("{text}");
            Ok(())
        }
    }
}

fn curves_csv(curves: &[MasterCurve]) -> String {
    let mut s = String::from("curve,label,x,y\n");
    for (i, c) in curves.iter().enumerate() {
        for (x, y) in c.x.iter().zip(&c.y) {
            s.push_str(&format!("{i},\"{}\",{x},{y}\n", c.label));
        }
    }
    s
}

fn cmd_collapse(input: &Path, out: Option<PathBuf>) -> CliResult<()> {
    let report = collapse_records(&read_records(input)?)?;
    if let Some(p) = out {
        write_text(&p, &curves_csv(&report.master))?;
    }
    let summary = json!({
        "scenario": report.scenario,
        "scores": report.scores.iter().map(|(k, s)| (k.clone(), s)).collect::<BTreeMap<_, _>>(),
        "naeff_law": report.naeff_law,
        "pooled_fit": report.pooled_fit,
    });
    say!("{}", serde_json::to_string_pretty(&summary).expect("plain json"));
    Ok(())
}

fn cmd_plot_data(input: &Path, out: &Path) -> CliResult<()> {
    let report = collapse_records(&read_records(input)?)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let raw = out.join(format!("{}_raw.csv", report.scenario));
    let master = out.join(format!("{}_master.csv", report.scenario));
    write_text(&raw, &curves_csv(&report.raw))?;
    write_text(&master, &curves_csv(&report.master))?;
    say!("{}\n{}", raw.display(), master.display());
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    problem: PlannerProblem,
    init: Vec<Vec<Vec2>>,
    #[serde(default)]
    solver: Option<SolverOptions>,
    /// Fraction of the mean moving path length below which a defender is parked.
    #[serde(default)]
    deploy_threshold: Option<f64>,
}

#[derive(Serialize)]
struct PlanReport<'a> {
    solution: &'a PlannerSolution,
    init_cost: f64,
    deployed: usize,
    max_violation: f64,
}

fn cmd_plan(config: Option<PathBuf>, from_pursuit: Option<PathBuf>, row: u64, set: &[String], seed: Option<u64>, out: &Path) -> CliResult<()> {
    let (problem, solution, init_cost, threshold) = match config {
        Some(path) => {
            if !set.is_empty() {
                return Err(Failure::Config("--set applies to pursuit-bootstrapped plans only".into()));
            }
            let inst: InstanceFile =
                serde_json::from_str(&read_text(&path)?).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            let dt = inst.problem.t_init / inst.problem.n_t as f64;
            let init_cost = inst.init.iter().map(|t| path_length(t, dt)).sum();
            let opts = inst.solver.unwrap_or_default();
            let sol = solve(&inst.problem, &inst.init, &opts)?;
            let threshold = inst.deploy_threshold.unwrap_or(PlannerParams::default().deploy_threshold);
            (inst.problem, sol, init_cost, threshold)
        }
        None => {
            let mut overrides = Vec::new();
            let mut seed = seed.unwrap_or(0);
            if let Some(path) = from_pursuit {
                let records = read_records(&path)?;
                let rec = records
                    .iter()
                    .find(|r| r.run_index == row)
                    .ok_or_else(|| Failure::Config(format!("{} has no run {row}", path.display())))?;
                if rec.scenario != Scenario::Pursuit {
                    return Err(Failure::Config(format!("{} holds {} records, not pursuit", path.display(), rec.scenario)));
                }
                let shared = PlannerParams::names();
                overrides.extend(rec.params.iter().filter(|(k, _)| shared.contains(&k.as_str())).cloned());
                seed = rec.seed;
            }
            overrides.extend(parse_sets(set)?);
            let mut params = PlannerParams::default();
            for (k, v) in &overrides {
                params.set(k, *v)?;
            }
            params.validate()?;
            let outcome = plan(&params, seed)?;
            (outcome.problem, outcome.solution, outcome.init_cost, params.deploy_threshold)
        }
    };
    let feas = check_feasibility(&problem, &solution.trajectories, None, solution.t_final);
    let deployed = count_deployed(&solution, threshold);
    let dt = solution.t_final / problem.n_t as f64;

    let traj_path = PathBuf::from(format!("{}.trajectories.csv", out.display()));
    let mut csv = String::from("defender,k,t,x,y\n");
    for (j, tr) in solution.trajectories.iter().enumerate() {
        for (k, p) in tr.iter().enumerate() {
            csv.push_str(&format!("{j},{k},{},{},{}\n", k as f64 * dt, p.x, p.y));
        }
    }
    write_text(&traj_path, &csv)?;
    let json_path = PathBuf::from(format!("{}.solution.json", out.display()));
    let report = PlanReport { solution: &solution, init_cost, deployed, max_violation: feas.max_violation() };
    write_text(&json_path, &serde_json::to_string_pretty(&report).expect("plain json"))?;

    say!(
        "J = {:.4} (init {:.4}), deployed = {deployed}, T_final = {:.3}, max violation = {:.2e}",
        solution.cost,
        init_cost,
        solution.t_final,
        feas.max_violation()
    );
    if !solution.converged {
        say!("warning: iteration cap reached; returning the best feasible point");
    }
    Ok(())
}
