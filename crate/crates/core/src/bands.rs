//! Critical values and confidence bands for the interpolated estimate.
//!
//! All bands have the form β̂̂(t) ± c·se(t) with se(t) = √(Ĉ̂(t,t)/n); they
//! differ only in the critical value c. The two bootstraps draw replicates of
//! β̂ at every observed event time, push them through the same natural-spline
//! basis as β̂̂ and record sup_t or inf_t |T*(t)| over the evaluation grid.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{CovMatrix, Estimation, PointwiseEstimate, StaggeredEstimate};
use crate::rng;
use crate::special::{t_cdf, t_quantile};
use crate::spline::{corr_roughness, natural_cubic_fit, tensor_fit, CovSurface, SplineCurve};

/// Two-point multiplier values (1 ∓ √5)/2.
pub const MULTIPLIER_LOW: f64 = (1.0 - 2.236_067_977_499_79) / 2.0;
pub const MULTIPLIER_HIGH: f64 = (1.0 + 2.236_067_977_499_79) / 2.0;
/// P(multiplier = MULTIPLIER_LOW) = (5 + √5)/10.
pub const MULTIPLIER_LOW_PROB: f64 = (5.0 + 2.236_067_977_499_79) / 10.0;

/// Eigenvalue mass that may be clipped during PSD repair without a warning,
/// relative to the trace.
const PSD_CLIP_WARN: f64 = 1e-6;

/// Draws one two-point multiplier.
pub fn draw_multiplier<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random::<f64>() < MULTIPLIER_LOW_PROB {
        MULTIPLIER_LOW
    } else {
        MULTIPLIER_HIGH
    }
}

/// Estimate plus its spline interpolants: everything a band needs.
#[derive(Debug, Clone)]
pub struct FittedEventStudy {
    pub estimate: PointwiseEstimate,
    pub covariance: CovMatrix,
    /// Influence rows for the multiplier bootstrap; `None` disables it.
    pub influence: Option<DMatrix<f64>>,
    pub spline: SplineCurve,
    pub surface: CovSurface,
    /// Continuous time per event-time unit; knots sit at `event_time * time_scale`.
    pub time_scale: f64,
}

impl FittedEventStudy {
    pub fn new(
        estimate: PointwiseEstimate,
        covariance: CovMatrix,
        influence: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        Self::with_time_scale(estimate, covariance, influence, 1.0)
    }

    /// As [`FittedEventStudy::new`] with knots at `event_time * time_scale`.
    pub fn with_time_scale(
        estimate: PointwiseEstimate,
        covariance: CovMatrix,
        influence: Option<DMatrix<f64>>,
        time_scale: f64,
    ) -> Result<Self> {
        if !(time_scale > 0.0 && time_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("time scale {time_scale} must be positive")));
        }
        if estimate.event_times != covariance.event_times {
            return Err(Error::DimensionMismatch(
                "estimate and covariance use different event times".into(),
            ));
        }
        if let Some(psi) = &influence {
            if psi.ncols() != estimate.event_times.len() {
                return Err(Error::DimensionMismatch("influence matrix columns".into()));
            }
        }
        let knots: Vec<f64> = estimate.times_f64().iter().map(|t| t * time_scale).collect();
        let spline = natural_cubic_fit(&knots, &estimate.beta)?;
        let surface = tensor_fit(&knots, &covariance.cov)?;
        Ok(Self {
            estimate,
            covariance,
            influence,
            spline,
            surface,
            time_scale,
        })
    }

    pub fn from_estimation(e: Estimation) -> Result<Self> {
        Self::new(e.estimate, e.covariance, Some(e.influence))
    }

    pub fn from_staggered(s: &StaggeredEstimate) -> Result<Self> {
        Self::new(
            s.aggregate.clone(),
            s.aggregate_cov.clone(),
            Some(s.aggregate_influence.clone()),
        )
    }

    pub fn n(&self) -> usize {
        self.covariance.n_units
    }

    /// Degrees of freedom n − 1 of the t reference distribution.
    pub fn df(&self) -> f64 {
        (self.n() as f64 - 1.0).max(1.0)
    }

    pub fn domain(&self) -> (f64, f64) {
        self.spline.domain()
    }

    /// Ĉ̂(t,t), clamped at 0.
    pub fn variance(&self, t: f64) -> Result<f64> {
        Ok(self.surface.variance(t)?.max(0.0))
    }

    /// √(Ĉ̂(t,t)/n).
    pub fn se(&self, t: f64) -> Result<f64> {
        Ok((self.variance(t)? / self.n() as f64).sqrt())
    }

    pub fn beta_hat(&self, t: f64) -> Result<f64> {
        self.spline.eval(t)
    }
}

/// `m` equidistant points in (lo, hi]: lo + j(hi − lo)/m, j = 1..m.
pub fn grid_open_left(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    (1..=m).map(|j| lo + (hi - lo) * j as f64 / m as f64).collect()
}

/// `m` equidistant points in [lo, hi].
pub fn grid_closed(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![lo];
    }
    (0..m)
        .map(|j| {
            if j == m - 1 {
                hi
            } else {
                lo + (hi - lo) * j as f64 / (m - 1) as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Sup,
    Inf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CritMethod {
    #[serde(alias = "pb")]
    ParamBoot,
    #[serde(alias = "mb")]
    MultBoot,
    #[serde(alias = "kr")]
    KacRice,
}

impl std::str::FromStr for CritMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "param-boot" | "pb" | "parametric" => Ok(Self::ParamBoot),
            "mult-boot" | "mb" | "multiplier" => Ok(Self::MultBoot),
            "kac-rice" | "kr" => Ok(Self::KacRice),
            _ => Err(Error::InvalidArgument(format!("unknown band method `{s}`"))),
        }
    }
}

impl std::fmt::Display for CritMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ParamBoot => "param-boot",
            Self::MultBoot => "mult-boot",
            Self::KacRice => "kac-rice",
        })
    }
}

/// Tail factor used in the Kac-Rice equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KacRiceForm {
    /// (1 + u²/df)^(−df/2).
    #[default]
    Corrected,
    /// (1 + u/df)^(df/2), increasing in u; kept for comparison only.
    Printed,
}

impl std::str::FromStr for KacRiceForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corrected" => Ok(Self::Corrected),
            "printed" => Ok(Self::Printed),
            _ => Err(Error::InvalidArgument(format!("unknown Kac-Rice form `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub value: f64,
    pub side: Side,
    pub alpha: f64,
    pub method: CritMethod,
    pub domain: (f64, f64),
    /// Bootstrap replicates; `None` for Kac-Rice.
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} must lie in (0, 0.5)")));
    }
    Ok(())
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Quantile level of the bootstrap statistic: 1 − α/2 for sup, 1 − α for inf.
pub fn quantile_level(side: Side, alpha: f64) -> f64 {
    match side {
        Side::Sup => 1.0 - alpha / 2.0,
        Side::Inf => 1.0 - alpha,
    }
}

/// Grid points with usable variance, their knot-basis weights and standard errors.
struct GridProjection {
    weights: DMatrix<f64>,
    se: Vec<f64>,
}

fn project_grid(fit: &FittedEventStudy, grid: &[f64]) -> Result<GridProjection> {
    if grid.is_empty() {
        return Err(Error::DegenerateGrid);
    }
    let ridge = fit.surface.default_ridge();
    let mut kept = Vec::with_capacity(grid.len());
    let mut se = Vec::with_capacity(grid.len());
    for &t in grid {
        let v = fit.surface.variance(t)?;
        if v > ridge {
            kept.push(t);
            se.push((v / fit.n() as f64).sqrt());
        }
    }
    if kept.is_empty() {
        return Err(Error::DegenerateGrid);
    }
    Ok(GridProjection {
        weights: fit.surface.basis().weight_matrix(&kept, 0)?,
        se,
    })
}

fn extreme_stat(v: &DVector<f64>, se: &[f64], side: Side) -> f64 {
    let it = v.iter().zip(se).map(|(x, s)| x.abs() / s);
    match side {
        Side::Sup => it.fold(0.0, f64::max),
        Side::Inf => it.fold(f64::INFINITY, f64::min),
    }
}

/// Symmetric square root factor F with F Fᵀ = Σ after clipping negative
/// eigenvalues at zero.
pub fn psd_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonPSDCovariance);
    }
    let sym = (sigma + sigma.transpose()) * 0.5;
    let trace = sym.trace();
    let eig = sym.symmetric_eigen();
    let clipped: f64 = eig.eigenvalues.iter().filter(|l| **l < 0.0).map(|l| -l).sum();
    if trace <= 0.0 && clipped > 0.0 {
        return Err(Error::NonPSDCovariance);
    }
    if clipped > PSD_CLIP_WARN * trace.abs() {
        warn!("PSD repair clipped eigenvalue mass {clipped:e} (trace {trace:e})");
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let mut f = eig.eigenvectors.clone();
    for (j, mut col) in f.column_iter_mut().enumerate() {
        col *= roots[j];
    }
    Ok(f)
}

fn check_replicates(b: usize) -> Result<()> {
    if b < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 bootstrap replicates, got {b}")));
    }
    Ok(())
}

/// Bootstrap statistics for the parametric bootstrap, one per replicate.
pub fn param_boot_stats(
    fit: &FittedEventStudy,
    side: Side,
    grid: &[f64],
    b: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let proj = project_grid(fit, grid)?;
    let sigma = &fit.covariance.cov / fit.n() as f64;
    let g = &proj.weights * psd_factor(&sigma)?;
    let dim = g.ncols();
    Ok((0..b as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, r);
            let z = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
            extreme_stat(&(&g * z), &proj.se, side)
        })
        .collect())
}

/// Bootstrap statistics for the multiplier bootstrap, one per replicate.
pub fn mult_boot_stats(
    fit: &FittedEventStudy,
    side: Side,
    grid: &[f64],
    b: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let psi = fit
        .influence
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("multiplier bootstrap needs unit residuals".into()))?;
    let proj = project_grid(fit, grid)?;
    let h = &proj.weights * psi.transpose();
    let n = h.ncols();
    Ok((0..b as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, r);
            let m = DVector::from_iterator(n, (0..n).map(|_| draw_multiplier(&mut rng)));
            extreme_stat(&(&h * m), &proj.se, side)
        })
        .collect())
}

fn grid_domain(grid: &[f64]) -> (f64, f64) {
    let lo = grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Parametric-bootstrap critical value over `grid`.
pub fn crit_param_boot(
    fit: &FittedEventStudy,
    side: Side,
    alpha: f64,
    grid: &[f64],
    b: usize,
    seed: u64,
) -> Result<CriticalValue> {
    check_alpha(alpha)?;
    check_replicates(b)?;
    let stats = param_boot_stats(fit, side, grid, b, seed)?;
    Ok(CriticalValue {
        value: quantile(&stats, quantile_level(side, alpha)),
        side,
        alpha,
        method: CritMethod::ParamBoot,
        domain: grid_domain(grid),
        replicates: Some(b),
        seed: Some(seed),
    })
}

/// Multiplier-bootstrap critical value over `grid`.
pub fn crit_mult_boot(
    fit: &FittedEventStudy,
    side: Side,
    alpha: f64,
    grid: &[f64],
    b: usize,
    seed: u64,
) -> Result<CriticalValue> {
    check_alpha(alpha)?;
    check_replicates(b)?;
    let stats = mult_boot_stats(fit, side, grid, b, seed)?;
    Ok(CriticalValue {
        value: quantile(&stats, quantile_level(side, alpha)),
        side,
        alpha,
        method: CritMethod::MultBoot,
        domain: grid_domain(grid),
        replicates: Some(b),
        seed: Some(seed),
    })
}

const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// ∫_lo^hi τ(t) dt, by 8-point Gauss-Legendre on each knot interval.
/// Nodes whose variance falls below the ridge contribute nothing.
pub fn roughness_integral(surface: &CovSurface, domain: (f64, f64)) -> Result<f64> {
    let (lo, hi) = domain;
    let (a, b) = surface.domain();
    if lo < a - 1e-10 || hi > b + 1e-10 || lo > hi {
        return Err(Error::OutOfDomain {
            t: if lo < a { lo } else { hi },
            lo: a,
            hi: b,
        });
    }
    let ridge = surface.default_ridge();
    let mut cuts = vec![lo];
    cuts.extend(surface.basis().knots().iter().copied().filter(|k| *k > lo && *k < hi));
    cuts.push(hi);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        let half = 0.5 * (x1 - x0);
        let mid = 0.5 * (x0 + x1);
        for (node, weight) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
            match corr_roughness(surface, mid + half * node, ridge) {
                Ok(tau) => total += weight * half * tau,
                Err(Error::DegenerateVariance { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(total)
}

fn tail_factor(u: f64, df: f64, form: KacRiceForm) -> f64 {
    match form {
        KacRiceForm::Corrected => (1.0 + u * u / df).powf(-df / 2.0),
        KacRiceForm::Printed => (1.0 + u / df).powf(df / 2.0),
    }
}

/// Solves F(−u; df) + K·g(u; df) = α/4 for u ∈ [0, 50], where
/// K = (1/2π)∫τ. The α/4 target makes P(sup|T| > u) ≈ α/2, the same tail the
/// bootstrap quantile 1 − α/2 controls.
pub fn kac_rice_solve(k: f64, alpha: f64, df: f64, form: KacRiceForm) -> Result<f64> {
    check_alpha(alpha)?;
    let target = alpha / 4.0;
    let h = |u: f64| t_cdf(-u, df) + k * tail_factor(u, df, form) - target;
    let (mut lo, mut hi) = (0.0, 50.0);
    if h(hi) > 0.0 {
        return Err(Error::NoRoot);
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Kac-Rice critical value for the supremum statistic over `domain`.
pub fn crit_kac_rice(
    surface: &CovSurface,
    side: Side,
    alpha: f64,
    domain: (f64, f64),
    df: f64,
    form: KacRiceForm,
) -> Result<CriticalValue> {
    if side == Side::Inf {
        return Err(Error::InfSideUnsupported);
    }
    check_alpha(alpha)?;
    let k = roughness_integral(surface, domain)? / (2.0 * std::f64::consts::PI);
    Ok(CriticalValue {
        value: kac_rice_solve(k, alpha, df, form)?,
        side,
        alpha,
        method: CritMethod::KacRice,
        domain,
        replicates: None,
        seed: None,
    })
}

/// Dispatches to one of the three critical-value methods.
#[allow(clippy::too_many_arguments)]
pub fn critical_value(
    fit: &FittedEventStudy,
    method: CritMethod,
    side: Side,
    alpha: f64,
    grid: &[f64],
    b: usize,
    seed: u64,
    form: KacRiceForm,
) -> Result<CriticalValue> {
    match method {
        CritMethod::ParamBoot => crit_param_boot(fit, side, alpha, grid, b, seed),
        CritMethod::MultBoot => crit_mult_boot(fit, side, alpha, grid, b, seed),
        CritMethod::KacRice => {
            crit_kac_rice(&fit.surface, side, alpha, grid_domain(grid), fit.df(), form)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandKind {
    Pointwise,
    Bonferroni,
    ScbSup,
    ScbInfTwoSided,
    ScbInfPlus,
    ScbInfMinus,
}

impl BandKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pointwise => "pointwise",
            Self::Bonferroni => "bonferroni",
            Self::ScbSup => "scb-sup",
            Self::ScbInfTwoSided => "scb-inf-two-sided",
            Self::ScbInfPlus => "scb-inf-plus",
            Self::ScbInfMinus => "scb-inf-minus",
        }
    }
}

/// JSON has no infinities: unbounded envelopes are written as `null`.
mod unbounded {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    fn ser<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|x| x.is_finite().then_some(*x))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    fn de<'de, D: Deserializer<'de>>(d: D, fill: f64) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?
            .into_iter()
            .map(|x| x.unwrap_or(fill))
            .collect())
    }

    pub mod lower {
        use super::*;
        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            ser(v, s)
        }
        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            de(d, f64::NEG_INFINITY)
        }
    }

    pub mod upper {
        use super::*;
        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            ser(v, s)
        }
        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            de(d, f64::INFINITY)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub kind: BandKind,
    pub grid: Vec<f64>,
    /// β̂̂ on the grid.
    pub estimate: Vec<f64>,
    #[serde(with = "unbounded::lower")]
    pub lower: Vec<f64>,
    #[serde(with = "unbounded::upper")]
    pub upper: Vec<f64>,
    /// Test level the band was built for.
    pub alpha: f64,
    /// Nominal coverage: 1 − α, or 1 − 2α for the two-sided infimum band.
    pub level: f64,
    pub df: f64,
    pub method: Option<CritMethod>,
    pub crit: f64,
    pub seed: Option<u64>,
}

impl Band {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Sub-band at the grid points with t in [lo, hi].
    pub fn restrict(&self, lo: f64, hi: f64) -> Band {
        let keep: Vec<usize> = (0..self.len()).filter(|&j| self.grid[j] >= lo && self.grid[j] <= hi).collect();
        let pick = |v: &[f64]| keep.iter().map(|&j| v[j]).collect::<Vec<_>>();
        Band {
            grid: pick(&self.grid),
            estimate: pick(&self.estimate),
            lower: pick(&self.lower),
            upper: pick(&self.upper),
            ..self.clone()
        }
    }
}

struct Envelope {
    estimate: Vec<f64>,
    se: Vec<f64>,
}

fn envelope(fit: &FittedEventStudy, grid: &[f64]) -> Result<Envelope> {
    let mut estimate = Vec::with_capacity(grid.len());
    let mut se = Vec::with_capacity(grid.len());
    for &t in grid {
        estimate.push(fit.beta_hat(t)?);
        se.push(fit.se(t)?);
    }
    Ok(Envelope { estimate, se })
}

#[allow(clippy::too_many_arguments)]
fn symmetric_band(
    fit: &FittedEventStudy,
    grid: &[f64],
    crit: f64,
    kind: BandKind,
    alpha: f64,
    level: f64,
    method: Option<CritMethod>,
    seed: Option<u64>,
) -> Result<Band> {
    let env = envelope(fit, grid)?;
    let lower = env.estimate.iter().zip(&env.se).map(|(b, s)| b - crit * s).collect();
    let upper = env.estimate.iter().zip(&env.se).map(|(b, s)| b + crit * s).collect();
    Ok(Band {
        kind,
        grid: grid.to_vec(),
        estimate: env.estimate,
        lower,
        upper,
        alpha,
        level,
        df: fit.df(),
        method,
        crit,
        seed,
    })
}

/// β̂̂(t) ± t_{1−α/2, n−1}·se(t).
pub fn pointwise_band(fit: &FittedEventStudy, grid: &[f64], alpha: f64) -> Result<Band> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha}")));
    }
    let crit = t_quantile(1.0 - alpha / 2.0, fit.df());
    symmetric_band(fit, grid, crit, BandKind::Pointwise, alpha, 1.0 - alpha, None, None)
}

/// Pointwise band at per-point level α/m.
pub fn bonferroni_band(fit: &FittedEventStudy, grid: &[f64], alpha: f64, m: usize) -> Result<Band> {
    if m == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument("Bonferroni needs m >= 1 and alpha in (0,1)".into()));
    }
    let crit = t_quantile(1.0 - alpha / (2.0 * m as f64), fit.df());
    symmetric_band(fit, grid, crit, BandKind::Bonferroni, alpha, 1.0 - alpha, None, None)
}

/// Simultaneous band from a critical value: the sup band β̂̂ ± û·se, or the
/// two-sided (1 − 2α) infimum band.
pub fn build_band(fit: &FittedEventStudy, crit: &CriticalValue, grid: &[f64]) -> Result<Band> {
    let (kind, level) = match crit.side {
        Side::Sup => (BandKind::ScbSup, 1.0 - crit.alpha),
        Side::Inf => (BandKind::ScbInfTwoSided, 1.0 - 2.0 * crit.alpha),
    };
    symmetric_band(fit, grid, crit.value, kind, crit.alpha, level, Some(crit.method), crit.seed)
}

/// One-sided (1 − α) infimum band: (−∞, β̂̂ + û·se] for `plus`,
/// [β̂̂ − û·se, ∞) otherwise.
pub fn one_sided_inf_band(
    fit: &FittedEventStudy,
    crit: &CriticalValue,
    grid: &[f64],
    plus: bool,
) -> Result<Band> {
    if crit.side != Side::Inf {
        return Err(Error::InvalidArgument("one-sided bands need an infimum critical value".into()));
    }
    let mut band = build_band(fit, crit, grid)?;
    band.level = 1.0 - crit.alpha;
    if plus {
        band.kind = BandKind::ScbInfPlus;
        band.lower.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
    } else {
        band.kind = BandKind::ScbInfMinus;
        band.upper.iter_mut().for_each(|v| *v = f64::INFINITY);
    }
    Ok(band)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{estimate_binary, EstimatorKind};
    use crate::panel::{Assignment, PanelData};
    use approx::assert_relative_eq;

    #[test]
    fn multiplier_moments_are_exact() {
        let p = MULTIPLIER_LOW_PROB;
        let mean = p * MULTIPLIER_LOW + (1.0 - p) * MULTIPLIER_HIGH;
        let var = p * MULTIPLIER_LOW.powi(2) + (1.0 - p) * MULTIPLIER_HIGH.powi(2);
        assert!(mean.abs() < 1e-15);
        assert_relative_eq!(var, 1.0, epsilon = 1e-15);
        assert_relative_eq!(MULTIPLIER_LOW, (1.0 - 5f64.sqrt()) / 2.0, epsilon = 1e-15);
        assert_relative_eq!(MULTIPLIER_LOW_PROB, (5.0 + 5f64.sqrt()) / 10.0, epsilon = 1e-15);
    }

    #[test]
    fn quantile_type7() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_relative_eq!(quantile(&v, 0.9), 4.6, epsilon = 1e-12);
    }

    #[test]
    fn grids() {
        let g = grid_open_left(0.0, 10.0, 100);
        assert_eq!(g.len(), 100);
        assert_relative_eq!(g[0], 0.1, epsilon = 1e-15);
        assert_eq!(*g.last().unwrap(), 10.0);
        let c = grid_closed(-10.0, -4.0, 101);
        assert_eq!(c[0], -10.0);
        assert_eq!(c[100], -4.0);
    }

    fn synthetic_fit(n: usize, seed: u64) -> FittedEventStudy {
        // independent Gaussian noise around a flat path; T = 7, times −3..3
        let mut r = crate::rng::stream(seed, 9);
        let d: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let y = DMatrix::from_fn(n, 7, |_, j| j as f64 * 0.1 + r.sample::<f64, _>(StandardNormal));
        let p = PanelData::new((0..n).map(|i| i.to_string()).collect(), (-3..=3).collect(), y, Assignment::Binary(d), None).unwrap();
        FittedEventStudy::from_estimation(estimate_binary(&p).unwrap()).unwrap()
    }

    #[test]
    fn pointwise_band_properties() {
        let fit = synthetic_fit(40, 1);
        let grid = grid_closed(-3.0, 3.0, 61);
        let band = pointwise_band(&fit, &grid, 0.05).unwrap();
        let zero = grid.iter().position(|t| *t == 0.0).unwrap();
        assert!((band.upper[zero] - band.lower[zero]).abs() < 1e-12);
        for j in 0..grid.len() {
            assert_relative_eq!(band.upper[j] - band.estimate[j], band.estimate[j] - band.lower[j], epsilon = 1e-12);
            assert!(band.lower[j] <= band.upper[j]);
        }
        let bon1 = bonferroni_band(&fit, &grid, 0.05, 1).unwrap();
        assert_eq!(bon1.lower, band.lower);
        let bon = bonferroni_band(&fit, &grid, 0.05, 100).unwrap();
        assert_relative_eq!(bon.crit, t_quantile(1.0 - 0.0005 / 2.0, fit.df()), epsilon = 1e-12);
        for j in 0..grid.len() {
            if j != zero {
                assert!(bon.upper[j] > band.upper[j]);
            }
        }
    }

    #[test]
    fn large_n_pointwise_multiplier_is_normal() {
        assert!((t_quantile(0.975, 1e7) - 1.96).abs() < 0.01);
    }

    #[test]
    fn bootstraps_are_deterministic_and_dominate_pointwise() {
        let fit = synthetic_fit(60, 2);
        let grid = grid_open_left(0.0, 3.0, 30);
        for method in [CritMethod::ParamBoot, CritMethod::MultBoot] {
            let a = critical_value(&fit, method, Side::Sup, 0.05, &grid, 400, 7, KacRiceForm::Corrected).unwrap();
            let b = critical_value(&fit, method, Side::Sup, 0.05, &grid, 400, 7, KacRiceForm::Corrected).unwrap();
            assert_eq!(a, b);
            assert!(a.value >= 1.96, "{method}: {}", a.value);
            let u01 = critical_value(&fit, method, Side::Sup, 0.01, &grid, 400, 7, KacRiceForm::Corrected).unwrap();
            let u10 = critical_value(&fit, method, Side::Sup, 0.10, &grid, 400, 7, KacRiceForm::Corrected).unwrap();
            assert!(u01.value > a.value && a.value > u10.value);
        }
    }

    #[test]
    fn single_point_parametric_bootstrap_is_normal_quantile() {
        let fit = synthetic_fit(50, 3);
        let u = crit_param_boot(&fit, Side::Sup, 0.05, &[2.0], 20_000, 11).unwrap();
        // P(|Z| > u) = α/2 → u = z_{1−α/4}
        let z = t_quantile(1.0 - 0.05 / 4.0, 1e9);
        assert!((u.value - z).abs() < 0.05, "{} vs {z}", u.value);
    }

    #[test]
    fn multiplier_and_parametric_agree() {
        let fit = synthetic_fit(400, 4);
        let grid = grid_open_left(0.0, 3.0, 30);
        let pb = crit_param_boot(&fit, Side::Sup, 0.05, &grid, 2000, 5).unwrap();
        let mb = crit_mult_boot(&fit, Side::Sup, 0.05, &grid, 2000, 5).unwrap();
        assert!((pb.value / mb.value - 1.0).abs() < 0.10, "{} vs {}", pb.value, mb.value);
    }

    #[test]
    fn kac_rice_zero_roughness_is_t_quantile() {
        for df in [10.0, 199.0] {
            let u = kac_rice_solve(0.0, 0.05, df, KacRiceForm::Corrected).unwrap();
            assert!((u - t_quantile(1.0 - 0.05 / 4.0, df)).abs() < 1e-6);
        }
        assert!(kac_rice_solve(0.5, 0.05, 50.0, KacRiceForm::Printed).is_err());
    }

    #[test]
    fn kac_rice_gaussian_limit() {
        // df → ∞: Φ(−u) + K e^{−u²/2} = α/4
        let k = 0.3;
        let u = kac_rice_solve(k, 0.05, 1e9, KacRiceForm::Corrected).unwrap();
        let lhs = t_cdf(-u, 1e9) + k * (-u * u / 2.0).exp();
        assert!((lhs - 0.0125).abs() < 1e-9);
    }

    #[test]
    fn kac_rice_rejects_inf_side() {
        let fit = synthetic_fit(30, 5);
        assert_eq!(
            crit_kac_rice(&fit.surface, Side::Inf, 0.05, (0.5, 3.0), 29.0, KacRiceForm::Corrected).unwrap_err(),
            Error::InfSideUnsupported
        );
    }

    #[test]
    fn band_shapes() {
        let fit = synthetic_fit(50, 6);
        let grid = grid_closed(0.0, 3.0, 31);
        let crit = crit_param_boot(&fit, Side::Sup, 0.05, &grid, 500, 1).unwrap();
        let band = build_band(&fit, &crit, &grid).unwrap();
        let pw = pointwise_band(&fit, &grid, 0.05).unwrap();
        assert_eq!(band.kind, BandKind::ScbSup);
        assert_eq!(band.lower[0], band.upper[0]);
        for (j, &t) in grid.iter().enumerate() {
            assert_relative_eq!(band.upper[j] - band.lower[j], 2.0 * crit.value * fit.se(t).unwrap(), epsilon = 1e-12);
            assert!(band.lower[j] <= pw.lower[j] && band.upper[j] >= pw.upper[j]);
        }

        let pre = grid_closed(-3.0, -1.0, 21);
        let inf = crit_param_boot(&fit, Side::Inf, 0.05, &pre, 500, 1).unwrap();
        let plus = one_sided_inf_band(&fit, &inf, &pre, true).unwrap();
        assert!(plus.lower.iter().all(|v| *v == f64::NEG_INFINITY));
        assert_relative_eq!(plus.upper[3], fit.beta_hat(pre[3]).unwrap() + inf.value * fit.se(pre[3]).unwrap(), epsilon = 1e-12);
        let json = serde_json::to_string(&plus).unwrap();
        assert!(json.contains("null"));
        let back: Band = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plus);
        let two = build_band(&fit, &inf, &pre).unwrap();
        assert_eq!(two.kind, BandKind::ScbInfTwoSided);
        assert_relative_eq!(two.level, 0.9, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_grid_detected() {
        let fit = synthetic_fit(30, 8);
        assert_eq!(
            crit_param_boot(&fit, Side::Sup, 0.05, &[0.0], 200, 1).unwrap_err(),
            Error::DegenerateGrid
        );
        assert_eq!(fit.estimate.kind, EstimatorKind::Basic);
    }

    #[test]
    fn psd_factor_repairs_small_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0 + 1e-12, 1.0 + 1e-12, 1.0]);
        let f = psd_factor(&m).unwrap();
        assert!((&f * f.transpose() - &m).amax() < 1e-10);
        let bad = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert_eq!(psd_factor(&bad).unwrap_err(), Error::NonPSDCovariance);
    }
}
