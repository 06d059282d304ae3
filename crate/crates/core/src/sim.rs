//! Monte Carlo engine: data-generating process, accuracy metric, and size and
//! power study drivers.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bands::{
    bonferroni_band, build_band, critical_value, grid_closed, grid_open_left, pointwise_band, Band,
    CritMethod, FittedEventStudy, KacRiceForm, Side,
};
use crate::error::{Error, Result};
use crate::estimate::estimate_binary;
use crate::honest::{disjoint_flags, inclusion_failures, pre_anticipation_grid, refband_trend, ReferenceBand};
use crate::panel::{Assignment, PanelData};
use crate::rng::{derive_seed, stream};
use crate::special::{bessel_k, gamma};
use crate::spline::SplineCurve;

/// Diagonal jitter added before the Cholesky factorisation.
const GP_JITTER: f64 = 1e-10;
const MAX_DRAW_RETRIES: usize = 100;
/// Offset between the study seed and the training-draw seed.
pub const TRAINING_SEED_XOR: u64 = 0x5EED;

/// σ²(2^{1−ν}/Γ(ν)) x^ν K_ν(x), x = √(2ν)|s − t|/10.
pub fn matern_cov(s: f64, t: f64, sigma2: f64, nu: f64) -> f64 {
    let h = ((s - t) / 10.0).abs();
    if h == 0.0 {
        return sigma2;
    }
    let x = (2.0 * nu).sqrt() * h;
    sigma2 * 2f64.powf(1.0 - nu) / gamma(nu) * x.powf(nu) * bessel_k(nu, x)
}

/// Closed form of the ν = 3/2 kernel: σ²(1 + √3 h)e^{−√3 h}.
pub fn matern32(s: f64, t: f64, sigma2: f64) -> f64 {
    let r = 3f64.sqrt() * ((s - t) / 10.0).abs();
    sigma2 * (1.0 + r) * (-r).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CovKind {
    /// σ² = 2, ν = 3/2 (smooth paths).
    Cov1,
    /// σ² = 2, ν = 2/3 (rough paths).
    Cov2,
}

impl CovKind {
    pub fn sigma2(self) -> f64 {
        2.0
    }

    pub fn nu(self) -> f64 {
        match self {
            Self::Cov1 => 1.5,
            Self::Cov2 => 2.0 / 3.0,
        }
    }

    pub fn cov(self, s: f64, t: f64) -> f64 {
        match self {
            Self::Cov1 => matern32(s, t, self.sigma2()),
            Self::Cov2 => matern_cov(s, t, self.sigma2(), self.nu()),
        }
    }
}

impl FromStr for CovKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cov1" => Ok(Self::Cov1),
            "cov2" => Ok(Self::Cov2),
            _ => Err(Error::InvalidArgument(format!("unknown covariance kind {s:?}"))),
        }
    }
}

impl fmt::Display for CovKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cov1 => "Cov1",
            Self::Cov2 => "Cov2",
        })
    }
}

/// Draws mean-zero Gaussian vectors with a fixed covariance on a grid.
#[derive(Debug, Clone)]
pub struct GpSampler {
    grid: Vec<f64>,
    chol: DMatrix<f64>,
}

impl GpSampler {
    pub fn new(grid: &[f64], cov: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let m = grid.len();
        let k = DMatrix::from_fn(m, m, |i, j| cov(grid[i], grid[j]) + if i == j { GP_JITTER } else { 0.0 });
        let chol = k.cholesky().ok_or(Error::NonPSDKernel)?.l();
        Ok(Self {
            grid: grid.to_vec(),
            chol,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.grid.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.chol * z
    }
}

/// `n` curves (rows) at the grid points.
pub fn sample_gp(grid: &[f64], cov: impl Fn(f64, f64) -> f64, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let sampler = GpSampler::new(grid, cov)?;
    let mut rng = stream(seed, 0);
    let mut out = DMatrix::zeros(n, grid.len());
    for i in 0..n {
        out.row_mut(i).copy_from(&sampler.sample(&mut rng).transpose());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttKind {
    #[serde(rename = "ATT1")]
    Att1,
    #[serde(rename = "ATT2")]
    Att2,
    #[serde(rename = "ATT1*")]
    Att1Star,
    #[serde(rename = "ATT2*")]
    Att2Star,
}

impl AttKind {
    pub fn is_anticipation(self) -> bool {
        matches!(self, Self::Att1Star | Self::Att2Star)
    }
}

impl FromStr for AttKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace("STAR", "*").as_str() {
            "ATT1" => Ok(Self::Att1),
            "ATT2" => Ok(Self::Att2),
            "ATT1*" => Ok(Self::Att1Star),
            "ATT2*" => Ok(Self::Att2Star),
            _ => Err(Error::InvalidArgument(format!("unknown ATT kind {s:?}"))),
        }
    }
}

impl fmt::Display for AttKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Att1 => "ATT1",
            Self::Att2 => "ATT2",
            Self::Att1Star => "ATT1*",
            Self::Att2Star => "ATT2*",
        })
    }
}

/// Upper end of the effect window.
const T_POST_GATE: f64 = 10.0;
/// Anticipation onset of the starred curves.
const ANTICIPATION_ONSET: f64 = -4.0;

fn saturating(x: f64, c: f64) -> f64 {
    let p = x.powf(1.5);
    c * p / (3.0 + p)
}

/// θ_ATT(t) for the given family, scaled by `a`; zero outside its gate.
pub fn att_curve(kind: AttKind, a: f64, t: f64) -> f64 {
    let v = match kind {
        AttKind::Att1 | AttKind::Att2 if t > 0.0 && t <= T_POST_GATE => {
            let base = saturating(t, 3.0);
            if kind == AttKind::Att2 {
                base + 0.3 * (3.0 * t).cos() - 0.3
            } else {
                base
            }
        }
        AttKind::Att1Star | AttKind::Att2Star if t > ANTICIPATION_ONSET && t <= T_POST_GATE => {
            let u = t - ANTICIPATION_ONSET;
            let base = saturating(u, 2.0);
            if kind == AttKind::Att2Star {
                base + 0.3 * (3.0 * u).cos() - 0.3
            } else {
                base
            }
        }
        _ => 0.0,
    };
    a * v
}

/// Time fixed effect 4⁻⁵5⁻⁴[2000(t+10)³ − 150(t+10)⁴ + 3(t+10)⁵].
pub fn phi(t: f64) -> f64 {
    let u = t + 10.0;
    (2000.0 * u.powi(3) - 150.0 * u.powi(4) + 3.0 * u.powi(5)) / (1024.0 * 625.0)
}

/// Selection probability e^{3λ}/(1 + e^{3λ}).
pub fn pi_select(lambda: f64) -> f64 {
    1.0 / (1.0 + (-3.0 * lambda).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub t_pre: f64,
    pub t_post: f64,
    pub att: AttKind,
    pub a: f64,
    /// Slope of the differential trend Δ_DT(t) = slope·t.
    pub dt_slope: f64,
    /// End of the pre-anticipation window used by validation studies.
    pub t_a: f64,
    pub cov: CovKind,
    /// Replaces the kernel's variance σ² = 2 when set.
    #[serde(default)]
    pub sigma2: Option<f64>,
    pub reps: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 200,
            t: 11,
            t_pre: 10.0,
            t_post: 10.0,
            att: AttKind::Att1,
            a: 1.0,
            dt_slope: 0.0,
            t_a: ANTICIPATION_ONSET,
            cov: CovKind::Cov1,
            sigma2: None,
            reps: 500,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::InvalidArgument("n must be at least 4".into()));
        }
        if self.t < 3 {
            return Err(Error::InvalidArgument("T must be at least 3".into()));
        }
        if !(self.t_pre > 0.0 && self.t_post > 0.0) {
            return Err(Error::InvalidArgument("T_pre and T_post must be positive".into()));
        }
        let k0 = self.ref_index_f64();
        if (k0 - k0.round()).abs() > 1e-9 {
            return Err(Error::InvalidArgument("the time grid must contain t = 0".into()));
        }
        if let Some(v) = self.sigma2 {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("sigma2 = {v} must be positive")));
            }
        }
        if self.reps == 0 {
            return Err(Error::InvalidArgument("need at least one replicate".into()));
        }
        Ok(())
    }

    fn ref_index_f64(&self) -> f64 {
        (self.t - 1) as f64 * self.t_pre / (self.t_pre + self.t_post)
    }

    /// Error covariance C_ε(s, t).
    pub fn kernel(&self, s: f64, t: f64) -> f64 {
        let c = self.cov.cov(s, t);
        match self.sigma2 {
            Some(v) => c * v / self.cov.sigma2(),
            None => c,
        }
    }

    pub fn sampler(&self) -> Result<GpSampler> {
        GpSampler::new(&self.grid(), |s, t| self.kernel(s, t))
    }

    /// Grid spacing (T_pre + T_post)/(T − 1).
    pub fn step(&self) -> f64 {
        (self.t_pre + self.t_post) / (self.t - 1) as f64
    }

    /// t_k = −T_pre + (k − 1)·step.
    pub fn grid(&self) -> Vec<f64> {
        (0..self.t).map(|k| -self.t_pre + k as f64 * self.step()).collect()
    }

    /// Integer event-time labels with 0 at t = 0.
    pub fn event_labels(&self) -> Vec<i64> {
        let k0 = self.ref_index_f64().round() as i64;
        (0..self.t as i64).map(|k| k - k0).collect()
    }

    pub fn truth(&self) -> Truth {
        Truth {
            att: self.att,
            a: self.a,
            dt_slope: self.dt_slope,
            delta_ta: att_curve(self.att, self.a, 0.0),
        }
    }

    pub fn with_a(&self, a: f64) -> Self {
        Self { a, ..self.clone() }
    }
}

/// β(t) = θ_ATT(t) − Δ_TA + Δ_DT(t) with Δ_TA = θ_ATT(0), so β(0) = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub att: AttKind,
    pub a: f64,
    pub dt_slope: f64,
    pub delta_ta: f64,
}

impl Truth {
    pub fn eval(&self, t: f64) -> f64 {
        att_curve(self.att, self.a, t) - self.delta_ta + self.dt_slope * t
    }
}

/// Simulated panel plus the true β curve.
pub fn generate_panel(cfg: &SimConfig, seed: u64) -> Result<(PanelData, Truth)> {
    cfg.validate()?;
    let sampler = cfg.sampler()?;
    generate_panel_with(cfg, &sampler, seed)
}

/// As [`generate_panel`] with errors drawn from `sampler`, whose grid must be `cfg.grid()`.
pub fn generate_panel_with(cfg: &SimConfig, sampler: &GpSampler, seed: u64) -> Result<(PanelData, Truth)> {
    let grid = sampler.grid();
    let truth = cfg.truth();
    let beta: Vec<f64> = grid.iter().map(|&t| truth.eval(t)).collect();
    let fe: Vec<f64> = grid.iter().map(|&t| phi(t)).collect();
    let mut rng = stream(seed, 0);
    for _ in 0..MAX_DRAW_RETRIES {
        let lambda: Vec<f64> = (0..cfg.n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let d: Vec<u8> = lambda
            .iter()
            .map(|&l| u8::from(rng.random::<f64>() < pi_select(l)))
            .collect();
        let treated = d.iter().filter(|&&x| x == 1).count();
        if treated == 0 || treated == cfg.n {
            continue;
        }
        let mut y = DMatrix::zeros(cfg.n, grid.len());
        for i in 0..cfg.n {
            let eps = sampler.sample(&mut rng);
            for k in 0..grid.len() {
                y[(i, k)] = beta[k] * d[i] as f64 + lambda[i] + fe[k] + eps[k];
            }
        }
        // zero-padded so generation order equals sorted label order
        let width = (cfg.n - 1).to_string().len();
        let ids = (0..cfg.n).map(|i| format!("u{i:0width$}")).collect();
        let panel = PanelData::new(ids, cfg.event_labels(), y, Assignment::Binary(d), None)?;
        return Ok((panel, truth));
    }
    Err(Error::DegenerateDraw(MAX_DRAW_RETRIES))
}

/// Fits a simulated panel on the continuous time axis.
pub fn fit_sim_panel(cfg: &SimConfig, panel: &PanelData) -> Result<FittedEventStudy> {
    let e = estimate_binary(panel)?;
    FittedEventStudy::with_time_scale(e.estimate, e.covariance, Some(e.influence), cfg.step())
}

/// max_j |β̂̂(t_j) − β(t_j)| over 101 equidistant points of the spline domain.
pub fn metric_q(spline: &SplineCurve, truth: impl Fn(f64) -> f64) -> Result<f64> {
    let (lo, hi) = spline.domain();
    grid_closed(lo, hi, 101)
        .into_iter()
        .map(|t| Ok((spline.eval(t)? - truth(t)).abs()))
        .try_fold(0.0_f64, |m, v: Result<f64>| Ok(m.max(v?)))
}

/// Mean, standard deviation and 95% interval of Q̂ for one design cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub att: AttKind,
    pub cov: CovKind,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub a: f64,
    pub reps: usize,
    pub seed: u64,
    pub mean: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Q̂ for every replicate of one cell, in replicate order.
pub fn accuracy_draws(cfg: &SimConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let sampler = cfg.sampler()?;
    (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let (panel, truth) = generate_panel_with(cfg, &sampler, derive_seed(cfg.seed, r as u64))?;
            let fit = fit_sim_panel(cfg, &panel)?;
            metric_q(&fit.spline, |t| truth.eval(t))
        })
        .collect()
}

pub fn run_accuracy_study(cells: &[SimConfig]) -> Result<Vec<AccuracyCell>> {
    cells
        .iter()
        .map(|cfg| {
            let qs = accuracy_draws(cfg)?;
            let (mean, sd) = mean_sd(&qs);
            let half = 1.96 * sd / (qs.len() as f64).sqrt();
            Ok(AccuracyCell {
                att: cfg.att,
                cov: cfg.cov,
                n: cfg.n,
                t: cfg.t,
                a: cfg.a,
                reps: cfg.reps,
                seed: cfg.seed,
                mean,
                sd,
                ci_lo: mean - half,
                ci_hi: mean + half,
            })
        })
        .collect()
}

/// Band constructions compared in size and power studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BandMethod {
    #[serde(rename = "SCB-PB")]
    ScbPb,
    #[serde(rename = "SCB-MB")]
    ScbMb,
    #[serde(rename = "SCB-KR")]
    ScbKr,
    Naive,
    Bonferroni,
}

impl BandMethod {
    pub const ALL: [BandMethod; 5] = [Self::ScbPb, Self::ScbMb, Self::ScbKr, Self::Naive, Self::Bonferroni];
    /// Methods with an infimum-based variant.
    pub const INF: [BandMethod; 4] = [Self::ScbPb, Self::ScbMb, Self::Naive, Self::Bonferroni];

    pub fn label(self) -> &'static str {
        match self {
            Self::ScbPb => "SCB-PB",
            Self::ScbMb => "SCB-MB",
            Self::ScbKr => "SCB-KR",
            Self::Naive => "Naive",
            Self::Bonferroni => "Bonferroni",
        }
    }

    fn crit_method(self) -> Option<CritMethod> {
        match self {
            Self::ScbPb => Some(CritMethod::ParamBoot),
            Self::ScbMb => Some(CritMethod::MultBoot),
            Self::ScbKr => Some(CritMethod::KacRice),
            _ => None,
        }
    }
}

impl FromStr for BandMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scb-pb" | "pb" => Ok(Self::ScbPb),
            "scb-mb" | "mb" => Ok(Self::ScbMb),
            "scb-kr" | "kr" => Ok(Self::ScbKr),
            "naive" => Ok(Self::Naive),
            "bonferroni" | "bonf" => Ok(Self::Bonferroni),
            _ => Err(Error::InvalidArgument(format!("unknown band method {s:?}"))),
        }
    }
}

impl fmt::Display for BandMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Rejection rates per method over an effect grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub study: String,
    /// Name of the varied parameter ("a" or "S").
    pub effect_name: String,
    pub effects: Vec<f64>,
    pub methods: Vec<BandMethod>,
    /// rates[method][effect].
    pub rates: Vec<Vec<f64>>,
    pub mc_se: Vec<Vec<f64>>,
    pub reps: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
struct PowerRow<'a> {
    study: &'a str,
    method: &'a str,
    effect_name: &'a str,
    effect: f64,
    rate: f64,
    mc_se: f64,
    reps: usize,
}

impl PowerCurve {
    fn from_counts(study: &str, effect_name: &str, effects: Vec<f64>, methods: Vec<BandMethod>, counts: Vec<Vec<usize>>, reps: usize, seed: u64) -> Self {
        let rates: Vec<Vec<f64>> = counts
            .iter()
            .map(|row| row.iter().map(|&c| c as f64 / reps as f64).collect())
            .collect();
        let mc_se = rates
            .iter()
            .map(|row| row.iter().map(|&p| (p * (1.0 - p) / reps as f64).sqrt()).collect())
            .collect();
        Self {
            study: study.into(),
            effect_name: effect_name.into(),
            effects,
            methods,
            rates,
            mc_se,
            reps,
            seed,
        }
    }

    pub fn rate(&self, method: BandMethod, effect_index: usize) -> Option<f64> {
        let m = self.methods.iter().position(|&x| x == method)?;
        self.rates[m].get(effect_index).copied()
    }

    /// One row per method and effect.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for (m, method) in self.methods.iter().enumerate() {
            for (e, &effect) in self.effects.iter().enumerate() {
                out.serialize(PowerRow {
                    study: &self.study,
                    method: method.label(),
                    effect_name: &self.effect_name,
                    effect,
                    rate: self.rates[m][e],
                    mc_se: self.mc_se[m][e],
                    reps: self.reps,
                })
                .map_err(|e| Error::Csv(e.to_string()))?;
            }
        }
        out.flush().map_err(|e| Error::Io(e.to_string()))
    }
}

pub fn write_accuracy_csv<W: std::io::Write>(cells: &[AccuracyCell], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for c in cells {
        out.serialize(c).map_err(|e| Error::Csv(e.to_string()))?;
    }
    out.flush().map_err(|e| Error::Io(e.to_string()))
}

/// Null hypothesis checked in a post-period power study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PowerTest {
    /// H₀: β(t) = 0 on (0, T_post].
    Classical,
    /// H₀: β(t) inside a trend band fixed from an independent training draw.
    Relevance { m: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerStudy {
    pub base: SimConfig,
    pub effects: Vec<f64>,
    pub test: PowerTest,
    pub methods: Vec<BandMethod>,
    pub alpha: f64,
    pub boot_replicates: usize,
    pub kac_rice_form: KacRiceForm,
    pub grid_size: usize,
}

impl PowerStudy {
    pub fn new(base: SimConfig, effects: Vec<f64>, test: PowerTest) -> Self {
        Self {
            base,
            effects,
            test,
            methods: BandMethod::ALL.to_vec(),
            alpha: 0.05,
            boot_replicates: 1000,
            kac_rice_form: KacRiceForm::Corrected,
            grid_size: 100,
        }
    }
}

fn check_study(alpha: f64, effects: &[f64], methods: &[BandMethod]) -> Result<()> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} must lie in (0, 0.5)")));
    }
    if effects.is_empty() || methods.is_empty() {
        return Err(Error::EmptyList);
    }
    Ok(())
}

/// Sup-side band for `method` on `grid`; bootstrap seeds derive from `seed`.
fn sup_band(fit: &FittedEventStudy, method: BandMethod, grid: &[f64], alpha: f64, b: usize, seed: u64, form: KacRiceForm) -> Result<Band> {
    match method.crit_method() {
        Some(cm) => {
            let crit = critical_value(fit, cm, Side::Sup, alpha, grid, b, seed, form)?;
            build_band(fit, &crit, grid)
        }
        None if method == BandMethod::Naive => pointwise_band(fit, grid, alpha),
        None => bonferroni_band(fit, grid, alpha, grid.len()),
    }
}

/// Two-sided (1 − 2α) band for `method` on the pre-anticipation grid.
fn inf_band(fit: &FittedEventStudy, method: BandMethod, grid: &[f64], alpha: f64, b: usize, seed: u64) -> Result<Band> {
    match method {
        BandMethod::ScbPb | BandMethod::ScbMb => {
            let cm = method.crit_method().expect("bootstrap method");
            let crit = critical_value(fit, cm, Side::Inf, alpha, grid, b, seed, KacRiceForm::Corrected)?;
            build_band(fit, &crit, grid)
        }
        BandMethod::ScbKr => Err(Error::InfSideUnsupported),
        BandMethod::Naive => pointwise_band(fit, grid, 2.0 * alpha),
        BandMethod::Bonferroni => bonferroni_band(fit, grid, 2.0 * alpha, grid.len()),
    }
}

/// Trend reference band estimated on the training draw.
pub fn training_trend_band(base: &SimConfig, m: f64) -> Result<ReferenceBand> {
    let cfg = base.with_a(0.0);
    let (panel, _) = generate_panel(&cfg, base.seed ^ TRAINING_SEED_XOR)?;
    let fit = fit_sim_panel(&cfg, &panel)?;
    refband_trend(&fit.spline, m, m)
}

/// Rejection rates of the post-period test over the effect grid.
///
/// Replicate r uses the same random stream for every effect size.
pub fn run_power_study(study: &PowerStudy) -> Result<PowerCurve> {
    let base = &study.base;
    base.validate()?;
    check_study(study.alpha, &study.effects, &study.methods)?;
    let reference = match study.test {
        PowerTest::Classical => ReferenceBand::Constant { lower: 0.0, upper: 0.0 },
        PowerTest::Relevance { m } => training_trend_band(base, m)?,
    };
    let grid = grid_open_left(0.0, base.t_post, study.grid_size);
    let sampler = base.sampler()?;
    let mut counts = vec![vec![0usize; study.effects.len()]; study.methods.len()];
    for (e, &a) in study.effects.iter().enumerate() {
        let cfg = base.with_a(a);
        let rejections: Vec<Vec<bool>> = (0..base.reps)
            .into_par_iter()
            .map(|r| {
                let seed = derive_seed(base.seed, r as u64);
                let (panel, _) = generate_panel_with(&cfg, &sampler, seed)?;
                let fit = fit_sim_panel(&cfg, &panel)?;
                study
                    .methods
                    .iter()
                    .map(|&m| {
                        let band = sup_band(&fit, m, &grid, study.alpha, study.boot_replicates, derive_seed(seed, 1), study.kac_rice_form)?;
                        Ok(disjoint_flags(&band, &reference).into_iter().any(|f| f))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for row in &rejections {
            for (m, &rej) in row.iter().enumerate() {
                counts[m][e] += usize::from(rej);
            }
        }
    }
    let name = match study.test {
        PowerTest::Classical => "classical".to_string(),
        PowerTest::Relevance { m } => format!("relevance_m{m}"),
    };
    Ok(PowerCurve::from_counts(&name, "a", study.effects.clone(), study.methods.clone(), counts, base.reps, base.seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationStudy {
    pub base: SimConfig,
    /// Reference-band half widths S.
    pub s_values: Vec<f64>,
    pub methods: Vec<BandMethod>,
    pub alpha: f64,
    pub boot_replicates: usize,
    pub grid_size: usize,
}

impl ValidationStudy {
    pub fn new(base: SimConfig, s_values: Vec<f64>) -> Self {
        Self {
            base,
            s_values,
            methods: BandMethod::INF.to_vec(),
            alpha: 0.05,
            boot_replicates: 1000,
            grid_size: 101,
        }
    }
}

/// Validation rates of the reference band [−θ(0) + 1 ± S] over the S grid.
///
/// The data do not depend on S, so every replicate's bands are tested
/// against all S values.
pub fn run_validation_study(study: &ValidationStudy) -> Result<PowerCurve> {
    let base = &study.base;
    base.validate()?;
    check_study(study.alpha, &study.s_values, &study.methods)?;
    if study.methods.contains(&BandMethod::ScbKr) {
        return Err(Error::InfSideUnsupported);
    }
    let grid = pre_anticipation_grid(base.t_pre, base.t_a, study.grid_size)?;
    let center = -att_curve(base.att, base.a, 0.0) + 1.0;
    let references: Vec<ReferenceBand> = study
        .s_values
        .iter()
        .map(|&s| ReferenceBand::Constant {
            lower: center - s,
            upper: center + s,
        })
        .collect();
    let sampler = base.sampler()?;
    let outcomes: Vec<Vec<Vec<bool>>> = (0..base.reps)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(base.seed, r as u64);
            let (panel, _) = generate_panel_with(base, &sampler, seed)?;
            let fit = fit_sim_panel(base, &panel)?;
            study
                .methods
                .iter()
                .map(|&m| {
                    let band = inf_band(&fit, m, &grid, study.alpha, study.boot_replicates, derive_seed(seed, 1))?;
                    Ok(references
                        .iter()
                        .map(|rb| !inclusion_failures(&band, rb).into_iter().any(|f| f))
                        .collect())
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![vec![0usize; study.s_values.len()]; study.methods.len()];
    for rep in &outcomes {
        for (m, row) in rep.iter().enumerate() {
            for (e, &v) in row.iter().enumerate() {
                counts[m][e] += usize::from(v);
            }
        }
    }
    Ok(PowerCurve::from_counts("validation", "S", study.s_values.clone(), study.methods.clone(), counts, base.reps, base.seed))
}
