//! Dimensional analysis and the fitting pipeline for performance curves.

use std::collections::BTreeMap;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{median, scan_then_refine, solve_dense};

pub use crate::search::compute_neff_search;

/// A model parameter with its exponents over (mass, length, time).
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionedParam {
    pub name: String,
    pub value: f64,
    pub dims: [Rational64; 3],
}

impl DimensionedParam {
    pub fn new(name: impl Into<String>, value: f64, mass: i64, length: i64, time: i64) -> Self {
        DimensionedParam {
            name: name.into(),
            value,
            dims: [mass, length, time].map(Rational64::from_integer),
        }
    }

    pub fn dimensionless(name: impl Into<String>, value: f64) -> Self {
        Self::new(name, value, 0, 0, 0)
    }
}

/// Exact rank of a rational matrix given as rows.
pub fn rational_rank(rows: &[Vec<Rational64>]) -> usize {
    let mut m: Vec<Vec<Rational64>> = rows.to_vec();
    let ncols = m.first().map_or(0, Vec::len);
    let zero = Rational64::from_integer(0);
    let mut rank = 0;
    for col in 0..ncols {
        let Some(piv) = (rank..m.len()).find(|&r| m[r][col] != zero) else {
            continue;
        };
        m.swap(rank, piv);
        let p = m[rank][col];
        for r in 0..m.len() {
            if r != rank && m[r][col] != zero {
                let f = m[r][col] / p;
                for c in col..ncols {
                    let v = m[rank][c];
                    m[r][c] -= f * v;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Number of independent dimensionless groups, `n − rank(D)`.
pub fn count_pi_groups(params: &[DimensionedParam]) -> usize {
    let rows: Vec<Vec<Rational64>> = params.iter().map(|p| p.dims.to_vec()).collect();
    params.len() - rational_rank(&rows)
}

/// Metric `y` sampled at control values `x`, plus the fixed parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerformanceCurve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub params: BTreeMap<String, f64>,
}

impl PerformanceCurve {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        Self::with_params(x, y, BTreeMap::new())
    }

    pub fn with_params(x: Vec<f64>, y: Vec<f64>, params: BTreeMap<String, f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InsufficientData(format!("{} x values but {} y values", x.len(), y.len())));
        }
        if x.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("curve x values must be strictly increasing".into()));
        }
        Ok(PerformanceCurve { x, y, params })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitKind {
    Tanh,
    Breakpoint,
}

/// Effective size extracted from a curve or a pooled set of points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub kind: FitKind,
    pub n_eff: f64,
    /// Breakpoint fits: log-log slopes below and above the knee.
    pub slopes: Vec<f64>,
    /// Breakpoint fits: `ln y` at the knee.
    pub intercept: Option<f64>,
    /// Root of the residual sum of squares (in the fitted space).
    pub residual_norm: f64,
    pub r_squared: f64,
    pub points: usize,
    /// The knee sits at the edge of the admissible range; treat `n_eff` as a bound.
    pub knee_at_edge: bool,
}

/// `½[1 − tanh(ln(x/N_eff))]`, which equals `1/(1 + (x/N_eff)²)`.
pub fn tanh_threshold(x: f64, n_eff: f64) -> f64 {
    0.5 * (1.0 - (x / n_eff).ln().tanh())
}

pub const BRACKET_HIGH: f64 = 0.8;
pub const BRACKET_LOW: f64 = 0.2;

pub fn fit_tanh_threshold(curve: &PerformanceCurve) -> Result<ScalingFit> {
    fit_tanh_points(&curve.x, &curve.y)
}

/// Least-squares fit of [`tanh_threshold`] over one free parameter, `ln N_eff`.
pub fn fit_tanh_points(x: &[f64], y: &[f64]) -> Result<ScalingFit> {
    if x.len() != y.len() || x.len() < 4 {
        return Err(Error::InsufficientData("threshold fit needs at least 4 points".into()));
    }
    if x.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::NonPositiveData);
    }
    let hi = y.iter().cloned().fold(f64::MIN, f64::max);
    let lo = y.iter().cloned().fold(f64::MAX, f64::min);
    if !(hi > BRACKET_HIGH && lo < BRACKET_LOW) {
        return Err(Error::NotBracketed {
            high: BRACKET_HIGH,
            low: BRACKET_LOW,
        });
    }
    let u: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let sse = |c: f64| -> f64 {
        u.iter()
            .zip(y)
            .map(|(&ui, &yi)| {
                let r = 0.5 * (1.0 - (ui - c).tanh()) - yi;
                r * r
            })
            .sum()
    };
    let umin = u.iter().cloned().fold(f64::MAX, f64::min);
    let umax = u.iter().cloned().fold(f64::MIN, f64::max);
    let (c, best) = scan_then_refine(sse, umin - 3.0, umax + 3.0, 600, 1e-13);
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    Ok(ScalingFit {
        kind: FitKind::Tanh,
        n_eff: c.exp(),
        slopes: Vec::new(),
        intercept: None,
        residual_norm: best.sqrt(),
        r_squared: 1.0 - best / sst,
        points: x.len(),
        knee_at_edge: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub amplitude: f64,
    pub exponent: f64,
    /// Standard error of `ln amplitude`.
    pub log_amplitude_se: f64,
    pub exponent_se: f64,
    pub r_squared: f64,
}

impl PowerLawFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * x.powf(self.exponent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LineFit {
    intercept: f64,
    slope: f64,
    intercept_se: f64,
    slope_se: f64,
    sse: f64,
    sst: f64,
}

fn ols(u: &[f64], v: &[f64]) -> Result<LineFit> {
    let n = u.len();
    if n < 3 {
        return Err(Error::InsufficientData("line fit needs at least 3 points".into()));
    }
    let nf = n as f64;
    let ub = u.iter().sum::<f64>() / nf;
    let vb = v.iter().sum::<f64>() / nf;
    let sxx: f64 = u.iter().map(|a| (a - ub).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all x values are identical".into()));
    }
    let sxy: f64 = u.iter().zip(v).map(|(a, b)| (a - ub) * (b - vb)).sum();
    let slope = sxy / sxx;
    let intercept = vb - slope * ub;
    let sse: f64 = u.iter().zip(v).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let sst: f64 = v.iter().map(|b| (b - vb).powi(2)).sum();
    let s2 = sse / (nf - 2.0);
    Ok(LineFit {
        intercept,
        slope,
        intercept_se: (s2 * (1.0 / nf + ub * ub / sxx)).sqrt(),
        slope_se: (s2 / sxx).sqrt(),
        sse,
        sst,
    })
}

/// Ordinary least squares on `(ln x, ln y)`: `y ≈ amplitude·x^exponent`.
pub fn fit_powerlaw(x: &[f64], y: &[f64]) -> Result<PowerLawFit> {
    if x.len() != y.len() {
        return Err(Error::InsufficientData("x and y lengths differ".into()));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::NonPositiveData);
    }
    let u: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let v: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let l = ols(&u, &v)?;
    Ok(PowerLawFit {
        amplitude: l.intercept.exp(),
        exponent: l.slope,
        log_amplitude_se: l.intercept_se,
        exponent_se: l.slope_se,
        r_squared: if l.sst > 0.0 { 1.0 - l.sse / l.sst } else { 1.0 },
    })
}

/// `A(ρ) = amplitude·e^{rate·ρ}` fitted by least squares on `ln A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpLaw {
    pub amplitude: f64,
    pub rate: f64,
}

impl ExpLaw {
    pub const UNIT: ExpLaw = ExpLaw { amplitude: 1.0, rate: 0.0 };

    pub fn eval(&self, rho: f64) -> f64 {
        self.amplitude * (self.rate * rho).exp()
    }
}

pub fn fit_exp_law(rho: &[f64], a: &[f64]) -> Result<ExpLaw> {
    if rho.len() != a.len() {
        return Err(Error::InsufficientData("x and y lengths differ".into()));
    }
    if a.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::NonPositiveData);
    }
    let v: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let l = ols(rho, &v)?;
    Ok(ExpLaw {
        amplitude: l.intercept.exp(),
        rate: l.slope,
    })
}

/// Knee detection settings for [`fit_breakpoint`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakpointOptions {
    /// Minimum slope change between the two segments.
    pub min_slope_change: f64,
    /// The two-segment fit must cut the single-line residual by this factor.
    pub min_improvement: f64,
}

impl Default for BreakpointOptions {
    fn default() -> Self {
        BreakpointOptions {
            min_slope_change: 0.1,
            min_improvement: 0.5,
        }
    }
}

pub fn fit_breakpoint(curve: &PerformanceCurve) -> Result<ScalingFit> {
    fit_breakpoint_points(&curve.x, &curve.y, BreakpointOptions::default())
}

fn hinge_fit(u: &[f64], v: &[f64], b: f64) -> Option<([f64; 3], f64)> {
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for (&ui, &vi) in u.iter().zip(v) {
        let row = [1.0, (ui - b).min(0.0), (ui - b).max(0.0)];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * vi;
        }
    }
    let c = solve_dense(ata, atb)?;
    let sse = u
        .iter()
        .zip(v)
        .map(|(&ui, &vi)| {
            let r = c[0] + c[1] * (ui - b).min(0.0) + c[2] * (ui - b).max(0.0) - vi;
            r * r
        })
        .sum();
    Some((c, sse))
}

/// Continuous two-segment fit in log-log space. The knee is scanned over the
/// range that leaves at least two points on each side, then refined.
/// Points need not be sorted, so pooled (collapsed) data can be fitted.
pub fn fit_breakpoint_points(x: &[f64], y: &[f64], opts: BreakpointOptions) -> Result<ScalingFit> {
    if x.len() != y.len() || x.len() < 6 {
        return Err(Error::InsufficientData("breakpoint fit needs at least 6 points".into()));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::NonPositiveData);
    }
    let u: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let v: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mut sorted = u.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let (lo, hi) = (sorted[1], sorted[n - 2]);
    if !(hi > lo) {
        return Err(Error::InsufficientData("need distinct x values on both sides of the knee".into()));
    }
    let line = ols(&u, &v)?;
    let objective = |b: f64| hinge_fit(&u, &v, b).map_or(f64::INFINITY, |(_, s)| s);
    let (b, _) = scan_then_refine(objective, lo, hi, 400, 1e-12 * (1.0 + hi.abs()));
    let (c, sse) = hinge_fit(&u, &v, b).ok_or(Error::NoBreakpoint)?;
    let scale = v.iter().map(|a| a * a).sum::<f64>().max(1.0);
    let single_is_exact = line.sse <= 1e-20 * scale;
    if single_is_exact
        || (c[1] - c[2]).abs() < opts.min_slope_change
        || sse > opts.min_improvement * line.sse
    {
        return Err(Error::NoBreakpoint);
    }
    let edge_tol = 1e-6 * (hi - lo);
    Ok(ScalingFit {
        kind: FitKind::Breakpoint,
        n_eff: b.exp(),
        slopes: vec![c[1], c[2]],
        intercept: Some(c[0]),
        residual_norm: sse.sqrt(),
        r_squared: if line.sst > 0.0 { 1.0 - sse / line.sst } else { 1.0 },
        points: n,
        knee_at_edge: b - lo <= edge_tol || hi - b <= edge_tol,
    })
}

/// Parameters of `N_a,eff = N_a·(λ_a/λ_d)^α·A(R_d/R_a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaEffLaw {
    pub alpha: f64,
    pub amplitude: ExpLaw,
}

impl Default for NaEffLaw {
    fn default() -> Self {
        NaEffLaw {
            alpha: 0.6,
            amplitude: ExpLaw::UNIT,
        }
    }
}

pub fn predict_naeff(n_a: f64, lambda_a: f64, lambda_d: f64, r_a: f64, r_d: f64, law: &NaEffLaw) -> f64 {
    n_a * (lambda_a / lambda_d).powf(law.alpha) * law.amplitude.eval(r_d / r_a)
}

/// `N_d^{3/2}·(R/d)·e^{4v/5}·e^{τV_a/(8d)}` with `v = V_d/V_a`.
pub fn predict_ndeff(n_d: f64, r: f64, d: f64, v: f64, tau: f64, v_a: f64) -> f64 {
    n_d.powf(1.5) * (r / d) * (0.8 * v).exp() * (tau * v_a / (8.0 * d)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpreadScale {
    /// Spread is `max y − min y`.
    #[default]
    Linear,
    /// Spread is `ln max y − ln min y`.
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseOptions {
    pub bins: usize,
    pub scale: SpreadScale,
}

impl Default for CollapseOptions {
    fn default() -> Self {
        CollapseOptions {
            bins: 25,
            scale: SpreadScale::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseScore {
    /// Median over bins of the inter-curve spread.
    pub score: f64,
    pub max_spread: f64,
    /// `(bin center, spread, curves contributing)` for every scored bin.
    pub bins: Vec<(f64, f64, usize)>,
}

fn interp_log_x(x: &[f64], y: &[f64], at: f64) -> Option<f64> {
    let (first, last) = (*x.first()?, *x.last()?);
    if at < first || at > last {
        return None;
    }
    let k = x.partition_point(|&v| v < at);
    if k == 0 {
        return Some(y[0]);
    }
    if x[k.min(x.len() - 1)] == at {
        return Some(y[k]);
    }
    let (x0, x1) = (x[k - 1].ln(), x[k].ln());
    let t = (at.ln() - x0) / (x1 - x0);
    Some(y[k - 1] + t * (y[k] - y[k - 1]))
}

/// Median inter-curve spread after mapping every curve through `rescale`.
/// Curves are interpolated linearly in `ln x` at log-spaced bin centers; a
/// bin counts when at least two curves cover it.
pub fn collapse_score<F>(curves: &[PerformanceCurve], rescale: F, opts: CollapseOptions) -> Result<CollapseScore>
where
    F: Fn(&PerformanceCurve) -> (Vec<f64>, Vec<f64>),
{
    if curves.len() < 2 {
        return Err(Error::InsufficientData("collapse needs at least 2 curves".into()));
    }
    let mut mapped = Vec::with_capacity(curves.len());
    for c in curves {
        let (x, y) = rescale(c);
        let mut pts: Vec<(f64, f64)> = x.into_iter().zip(y).filter(|(a, _)| *a > 0.0 && a.is_finite()).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|a, b| a.0 == b.0);
        if opts.scale == SpreadScale::Log && pts.iter().any(|p| !(p.1 > 0.0)) {
            return Err(Error::NonPositiveData);
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        mapped.push((xs, ys));
    }
    let lo = mapped.iter().filter_map(|(x, _)| x.first()).cloned().fold(f64::MAX, f64::min);
    let hi = mapped.iter().filter_map(|(x, _)| x.last()).cloned().fold(f64::MIN, f64::max);
    if !(lo <= hi) {
        return Err(Error::NoOverlap);
    }
    let nb = opts.bins.max(2);
    let mut bins = Vec::new();
    for k in 0..nb {
        let at = if hi > lo {
            (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (nb - 1) as f64).exp().clamp(lo, hi)
        } else {
            lo
        };
        let vals: Vec<f64> = mapped.iter().filter_map(|(x, y)| interp_log_x(x, y, at)).collect();
        if vals.len() < 2 {
            continue;
        }
        let max = vals.iter().cloned().fold(f64::MIN, f64::max);
        let min = vals.iter().cloned().fold(f64::MAX, f64::min);
        let spread = match opts.scale {
            SpreadScale::Linear => max - min,
            SpreadScale::Log => max.ln() - min.ln(),
        };
        bins.push((at, spread, vals.len()));
    }
    if bins.is_empty() {
        return Err(Error::NoOverlap);
    }
    let mut spreads: Vec<f64> = bins.iter().map(|b| b.1).collect();
    let max_spread = spreads.iter().cloned().fold(0.0, f64::max);
    Ok(CollapseScore {
        score: median(&mut spreads).expect("nonempty"),
        max_spread,
        bins,
    })
}

/// Identity rescaling for [`collapse_score`].
pub fn unscaled(c: &PerformanceCurve) -> (Vec<f64>, Vec<f64>) {
    (c.x.clone(), c.y.clone())
}
