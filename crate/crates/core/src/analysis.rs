//! Record post-processing: grouping sweep output into performance curves and
//! mapping each scenario onto its master-curve coordinates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::solve_dense;
use crate::params::Scenario;
use crate::scaling::{
    collapse_score, compute_neff_search, fit_breakpoint_points, fit_tanh_threshold, predict_naeff, predict_ndeff, BreakpointOptions,
    CollapseOptions, CollapseScore, ExpLaw, NaEffLaw, PerformanceCurve, ScalingFit, SpreadScale,
};
use crate::sweep::{point_means, RunRecord};

/// What goes on the y axis of a curve built from records.
#[derive(Debug, Clone, PartialEq)]
pub enum YMap {
    Metric,
    /// Metric divided by the named parameter (e.g. `t_k / N_a`).
    MetricOver(String),
}

/// Groups grid-point means into curves along `x`, one per combination of the
/// remaining parameters. Curves come out in order of their parameters.
pub fn curves_from_records(records: &[RunRecord], x: &str, y: &YMap) -> Result<Vec<PerformanceCurve>> {
    let mut groups: BTreeMap<Vec<(String, u64)>, (BTreeMap<String, f64>, Vec<(f64, f64)>)> = BTreeMap::new();
    for (_, params, mean) in point_means(records) {
        let xv = params
            .iter()
            .find(|(k, _)| k == x)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Config(format!("records have no parameter `{x}`")))?;
        let yv = match y {
            YMap::Metric => mean,
            YMap::MetricOver(name) => {
                let d = params
                    .iter()
                    .find(|(k, _)| k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| Error::Config(format!("records have no parameter `{name}`")))?;
                mean / d
            }
        };
        let rest: Vec<(String, f64)> = params.into_iter().filter(|(k, _)| k != x).collect();
        let key = rest.iter().map(|(k, v)| (k.clone(), v.to_bits())).collect();
        let entry = groups.entry(key).or_insert_with(|| (rest.into_iter().collect(), Vec::new()));
        entry.1.push((xv, yv));
    }
    groups
        .into_values()
        .map(|(params, mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (xs, ys) = pts.into_iter().unzip();
            PerformanceCurve::with_params(xs, ys, params)
        })
        .collect()
}

fn param(c: &PerformanceCurve, name: &str) -> Result<f64> {
    c.params
        .get(name)
        .copied()
        .ok_or_else(|| Error::Config(format!("curve lacks parameter `{name}`")))
}

/// Threshold fit of every battle curve (`P_a` against `N_d`).
pub fn battle_fits(curves: &[PerformanceCurve]) -> Vec<(PerformanceCurve, Result<ScalingFit>)> {
    curves.iter().map(|c| (c.clone(), fit_tanh_threshold(c))).collect()
}

/// Joint least squares `ln(N_a,eff/N_a) = α·ln(λ_a/λ_d) + ln A₀ + k·(R_d/R_a)`
/// over the successfully fitted battle curves.
pub fn fit_naeff_law(fits: &[(PerformanceCurve, f64)]) -> Result<NaEffLaw> {
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for (c, n_eff) in fits {
        let lam = (param(c, "lambda_a")? / param(c, "lambda_d")?).ln();
        let rho = param(c, "R_d")? / param(c, "R_a")?;
        let row = [lam, 1.0, rho];
        let v = (n_eff / param(c, "N_a")?).ln();
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * v;
        }
    }
    let sol = solve_dense(ata, atb).ok_or_else(|| {
        Error::InsufficientData("the fits do not vary both the rate ratio and the range ratio".into())
    })?;
    Ok(NaEffLaw {
        alpha: sol[0],
        amplitude: ExpLaw {
            amplitude: sol[1].exp(),
            rate: sol[2],
        },
    })
}

/// `(N_d/N_a,eff, P_a)` for one battle curve under `law`.
pub fn battle_master(c: &PerformanceCurve, law: &NaEffLaw) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = predict_naeff(param(c, "N_a")?, param(c, "lambda_a")?, param(c, "lambda_d")?, param(c, "R_a")?, param(c, "R_d")?, law);
    Ok((c.x.iter().map(|x| x / n).collect(), c.y.clone()))
}

/// `(N_eff, P_A)` for one search curve along `N`.
pub fn search_master(c: &PerformanceCurve) -> Result<(Vec<f64>, Vec<f64>)> {
    let r = param(c, "r")?;
    let delta = param(c, "delta")?;
    let theta = param(c, "theta")?;
    let area = r * theta.to_radians() * delta;
    let comms = param(c, "comms")? != 0.0;
    let (v, rs, lam) = (param(c, "V")?, param(c, "R_s")?, param(c, "lambda")?);
    let x = c
        .x
        .iter()
        .map(|&n| compute_neff_search(n as usize, v, rs, lam, area, comms))
        .collect();
    Ok((x, c.y.clone()))
}

/// Effective defender size of a pursuit curve.
pub fn pursuit_ndeff(c: &PerformanceCurve) -> Result<f64> {
    let (v_a, v_d) = (param(c, "V_a")?, param(c, "V_d")?);
    Ok(predict_ndeff(param(c, "N_d")?, param(c, "R")?, param(c, "d")?, v_d / v_a, param(c, "tau")?, v_a))
}

/// `(N_a/N_d,eff, t_k·N_d,eff·v/(N_a·d))` for a pursuit curve of `t_k/N_a`
/// against `N_a`.
pub fn pursuit_master(c: &PerformanceCurve) -> Result<(Vec<f64>, Vec<f64>)> {
    let nde = pursuit_ndeff(c)?;
    let v = param(c, "V_d")? / param(c, "V_a")?;
    let d = param(c, "d")?;
    Ok((c.x.iter().map(|n| n / nde).collect(), c.y.iter().map(|y| y * nde * v / d).collect()))
}

/// Two-line fit of all collapsed pursuit points pooled together.
pub fn pursuit_pooled_fit(curves: &[PerformanceCurve], opts: BreakpointOptions) -> Result<ScalingFit> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for c in curves {
        let (u, v) = pursuit_master(c)?;
        x.extend(u);
        y.extend(v);
    }
    fit_breakpoint_points(&x, &y, opts)
}

/// Curve coordinates for `plot-data` and `collapse`: the natural x/y axes of
/// each scenario before and after rescaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasterCurve {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

pub fn curve_label(c: &PerformanceCurve, skip: &[&str]) -> String {
    c.params
        .iter()
        .filter(|(k, _)| !skip.contains(&k.as_str()))
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// The control parameter and y mapping used for each scenario's raw curves.
pub fn natural_axes(s: Scenario) -> (&'static str, YMap) {
    match s {
        Scenario::Battle => ("N_d", YMap::Metric),
        Scenario::Search => ("N", YMap::Metric),
        Scenario::Pursuit => ("N_a", YMap::MetricOver("N_a".into())),
        Scenario::Planner => ("N_a", YMap::Metric),
    }
}

/// Everything `collapse` and `plot-data` report for one record file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseReport {
    pub scenario: Scenario,
    pub raw: Vec<MasterCurve>,
    pub master: Vec<MasterCurve>,
    /// Collapse score per class: `all`, or `comms=0` / `comms=1` for search.
    pub scores: Vec<(String, CollapseScore)>,
    /// Battle only: the fitted `N_a,eff` law.
    pub naeff_law: Option<NaEffLaw>,
    /// Pursuit only: the pooled two-line fit of the collapsed points.
    pub pooled_fit: Option<ScalingFit>,
}

fn to_master(label: String, (x, y): (Vec<f64>, Vec<f64>)) -> MasterCurve {
    MasterCurve { label, x, y }
}

/// Groups `records` into curves, rescales them onto the scenario's master
/// coordinates and scores the collapse.
pub fn collapse_records(records: &[RunRecord]) -> Result<CollapseReport> {
    let scenario = records
        .first()
        .map(|r| r.scenario)
        .ok_or_else(|| Error::InsufficientData("no records".into()))?;
    if records.iter().any(|r| r.scenario != scenario) {
        return Err(Error::Config("records mix several scenarios".into()));
    }
    let (x, y) = natural_axes(scenario);
    let curves = curves_from_records(records, x, &y)?;
    let raw = curves
        .iter()
        .map(|c| to_master(curve_label(c, &[x]), (c.x.clone(), c.y.clone())))
        .collect();
    let mut report = CollapseReport {
        scenario,
        raw,
        master: Vec::new(),
        scores: Vec::new(),
        naeff_law: None,
        pooled_fit: None,
    };
    let linear = CollapseOptions::default();
    match scenario {
        Scenario::Battle => {
            let fitted: Vec<(PerformanceCurve, f64)> = battle_fits(&curves)
                .into_iter()
                .filter_map(|(c, f)| f.ok().map(|f| (c, f.n_eff)))
                .collect();
            let law = fit_naeff_law(&fitted)?;
            report.master = curves
                .iter()
                .map(|c| Ok(to_master(curve_label(c, &[x]), battle_master(c, &law)?)))
                .collect::<Result<_>>()?;
            let score = collapse_score(&curves, |c| battle_master(c, &law).unwrap_or_default(), linear)?;
            report.scores.push(("all".into(), score));
            report.naeff_law = Some(law);
        }
        Scenario::Search => {
            report.master = curves
                .iter()
                .map(|c| Ok(to_master(curve_label(c, &[x]), search_master(c)?)))
                .collect::<Result<_>>()?;
            for comms in [0.0, 1.0] {
                let class: Vec<PerformanceCurve> =
                    curves.iter().filter(|c| c.params.get("comms") == Some(&comms)).cloned().collect();
                if class.len() >= 2 {
                    let score = collapse_score(&class, |c| search_master(c).unwrap_or_default(), linear)?;
                    report.scores.push((format!("comms={comms}"), score));
                }
            }
        }
        Scenario::Pursuit => {
            report.master = curves
                .iter()
                .map(|c| Ok(to_master(curve_label(c, &[x]), pursuit_master(c)?)))
                .collect::<Result<_>>()?;
            let log = CollapseOptions { scale: SpreadScale::Log, ..linear };
            let score = collapse_score(&curves, |c| pursuit_master(c).unwrap_or_default(), log)?;
            report.scores.push(("all".into(), score));
            report.pooled_fit = pursuit_pooled_fit(&curves, BreakpointOptions::default()).ok();
        }
        Scenario::Planner => {
            return Err(Error::Config("planner records have no master curve".into()));
        }
    }
    Ok(report)
}
