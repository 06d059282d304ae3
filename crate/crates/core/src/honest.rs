//! Honest reference bands, relevance and equivalence tests, and the composite
//! event-study report.

use serde::{Deserialize, Serialize};

use crate::bands::{
    build_band, critical_value, grid_closed, grid_open_left, pointwise_band, Band, BandKind,
    CritMethod, CriticalValue, FittedEventStudy, KacRiceForm, Side,
};
use crate::error::{Error, Result};
use crate::estimate::{estimate_binary, staggered_estimate, CovMatrix, PointwiseEstimate, StaggeredSpec};
use crate::panel::{Assignment, PanelData};
use crate::special::t_quantile;
use crate::spline::SplineCurve;

/// Strictness margin for the equivalence inclusion check.
const INCLUSION_TOL: f64 = 1e-12;

/// Resolved reference band [Δ_ℓ(t), Δ_u(t)].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceBand {
    /// Constant band centred at β̂̂(t_A).
    Anticipation {
        t_a: f64,
        s_l: f64,
        s_u: f64,
        center: f64,
        se: f64,
    },
    /// Cone ((TR ∓ M·RM)·t).
    Trend { m_l: f64, m_u: f64, tr: f64, rm: f64 },
    /// Pointwise envelope of its members.
    Union { members: Vec<ReferenceBand> },
    /// Fixed [lower, upper] at every t.
    Constant { lower: f64, upper: f64 },
}

impl ReferenceBand {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Anticipation { .. } => "anticipation",
            Self::Trend { .. } => "trend",
            Self::Union { .. } => "union",
            Self::Constant { .. } => "constant",
        }
    }

    /// (Δ_ℓ(t), Δ_u(t)).
    pub fn bounds(&self, t: f64) -> (f64, f64) {
        match self {
            Self::Anticipation {
                s_l,
                s_u,
                center,
                se,
                ..
            } => (center - s_l * se, center + s_u * se),
            Self::Trend { m_l, m_u, tr, rm } => {
                let a = (tr - m_l * rm) * t;
                let b = (tr + m_u * rm) * t;
                (a.min(b), a.max(b))
            }
            Self::Union { members } => members.iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), m| {
                    let (l, u) = m.bounds(t);
                    (lo.min(l), hi.max(u))
                },
            ),
            Self::Constant { lower, upper } => (*lower, *upper),
        }
    }

    pub fn lower(&self, t: f64) -> f64 {
        self.bounds(t).0
    }

    pub fn upper(&self, t: f64) -> f64 {
        self.bounds(t).1
    }
}

fn check_nonnegative(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} = {v} must be a non-negative number")));
    }
    Ok(())
}

/// β̂̂(t_A) ∓ S·√(Ĉ̂(t_A,t_A)/n), constant in t.
pub fn refband_anticipation(fit: &FittedEventStudy, t_a: f64, s_l: f64, s_u: f64) -> Result<ReferenceBand> {
    check_nonnegative("S_l", s_l)?;
    check_nonnegative("S_u", s_u)?;
    let (lo, _) = fit.domain();
    if !(t_a >= lo && t_a <= 0.0) {
        return Err(Error::InvalidArgument(format!("t_A = {t_a} must lie in [{lo}, 0]")));
    }
    let variance = fit.surface.variance(t_a)?;
    let ridge = fit.surface.default_ridge();
    if !(variance > ridge) {
        return Err(Error::DegenerateVariance { t: t_a, variance, ridge });
    }
    Ok(ReferenceBand::Anticipation {
        t_a,
        s_l,
        s_u,
        center: fit.beta_hat(t_a)?,
        se: (variance / fit.n() as f64).sqrt(),
    })
}

/// Anticipation band with the default S_ℓ = S_u = t_{1−α/2, n−1}.
pub fn refband_anticipation_default(fit: &FittedEventStudy, t_a: f64, alpha: f64) -> Result<ReferenceBand> {
    let s = t_quantile(1.0 - alpha / 2.0, fit.df());
    refband_anticipation(fit, t_a, s, s)
}

/// Differential-trend cone built from the pre-period slope of β̂̂.
///
/// TR = (β̂̂(0) − β̂̂(−T_pre))/T_pre and RM = (1/T_pre)∫_{−T_pre}^0 |β̂̂′|.
pub fn refband_trend(spline: &SplineCurve, m_l: f64, m_u: f64) -> Result<ReferenceBand> {
    check_nonnegative("M_l", m_l)?;
    check_nonnegative("M_u", m_u)?;
    let (lo, _) = spline.domain();
    if lo >= 0.0 {
        return Err(Error::InvalidArgument("no pre-period in the spline domain".into()));
    }
    let t_pre = -lo;
    let tr = (spline.eval(0.0)? - spline.eval(lo)?) / t_pre;
    let rm = spline.abs_deriv_integral(lo, 0.0)? / t_pre;
    Ok(ReferenceBand::Trend { m_l, m_u, tr, rm })
}

/// Pointwise envelope of several reference bands.
pub fn refband_union(bands: &[ReferenceBand]) -> Result<ReferenceBand> {
    match bands {
        [] => Err(Error::EmptyList),
        [one] => Ok(one.clone()),
        _ => Ok(ReferenceBand::Union {
            members: bands.to_vec(),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Relevance,
    Equivalence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: TestKind,
    pub alpha: f64,
    /// Relevance: H₀ of no effect beyond the reference band rejected.
    /// Equivalence: the reference band is validated.
    pub rejected: bool,
    /// Relevance: significant intervals. Equivalence: intervals where inclusion fails.
    pub spans: Vec<(f64, f64)>,
    pub band_kind: BandKind,
    pub refband_kind: String,
}

impl TestResult {
    pub fn validated(&self) -> bool {
        self.test == TestKind::Equivalence && self.rejected
    }
}

fn check_grid(band: &Band, grid: &[f64]) -> Result<()> {
    if band.grid.len() != grid.len()
        || band
            .grid
            .iter()
            .zip(grid)
            .any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b.abs()))
    {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// Maximal runs of flagged grid points, reported as closed grid intervals.
pub fn spans_of(grid: &[f64], flags: &[bool]) -> Vec<(f64, f64)> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (j, &f) in flags.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(j),
            (false, Some(s)) => {
                spans.push((grid[s], grid[j - 1]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((grid[s], grid[flags.len() - 1]));
    }
    spans
}

/// Flags grid points where [lower, upper] and the reference band are disjoint.
pub fn disjoint_flags(band: &Band, reference: &ReferenceBand) -> Vec<bool> {
    band.grid
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let (rl, ru) = reference.bounds(t);
            band.lower[j] > ru || band.upper[j] < rl
        })
        .collect()
}

/// Rejects when the sup band misses the reference band at some grid point.
pub fn relevance_test(scb_sup: &Band, reference: &ReferenceBand, post_grid: &[f64]) -> Result<TestResult> {
    if scb_sup.kind != BandKind::ScbSup {
        return Err(Error::WrongBandKind {
            found: scb_sup.kind.name(),
            expected: BandKind::ScbSup.name(),
        });
    }
    check_grid(scb_sup, post_grid)?;
    let flags = disjoint_flags(scb_sup, reference);
    let spans = spans_of(post_grid, &flags);
    Ok(TestResult {
        test: TestKind::Relevance,
        alpha: scb_sup.alpha,
        rejected: !spans.is_empty(),
        spans,
        band_kind: scb_sup.kind,
        refband_kind: reference.kind_name().into(),
    })
}

/// Flags grid points where the band is not strictly inside the reference band.
/// Zero-width points (t = 0, where the estimate is pinned) are skipped.
pub fn inclusion_failures(band: &Band, reference: &ReferenceBand) -> Vec<bool> {
    band.grid
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            if band.upper[j] - band.lower[j] <= 0.0 {
                return false;
            }
            let (rl, ru) = reference.bounds(t);
            !(band.lower[j] > rl + INCLUSION_TOL && band.upper[j] < ru - INCLUSION_TOL)
        })
        .collect()
}

/// Validates the reference band when the two-sided (1 − 2α) inf band lies
/// strictly inside it at every pre-anticipation grid point.
pub fn equivalence_validate(scb_inf: &Band, reference: &ReferenceBand, pre_grid: &[f64]) -> Result<TestResult> {
    if scb_inf.kind != BandKind::ScbInfTwoSided {
        return Err(Error::WrongBandKind {
            found: scb_inf.kind.name(),
            expected: BandKind::ScbInfTwoSided.name(),
        });
    }
    check_grid(scb_inf, pre_grid)?;
    let flags = inclusion_failures(scb_inf, reference);
    let spans = spans_of(pre_grid, &flags);
    Ok(TestResult {
        test: TestKind::Equivalence,
        alpha: scb_inf.alpha,
        rejected: spans.is_empty(),
        spans,
        band_kind: scb_inf.kind,
        refband_kind: reference.kind_name().into(),
    })
}

/// `m` equidistant points on [−T_pre, t_A].
pub fn pre_anticipation_grid(t_pre: f64, t_a: f64, m: usize) -> Result<Vec<f64>> {
    if t_a < -t_pre {
        return Err(Error::EmptyPreAnticipationWindow { t_a, lo: -t_pre });
    }
    if t_a > 0.0 {
        return Err(Error::InvalidArgument(format!("t_A = {t_a} must not be positive")));
    }
    Ok(grid_closed(-t_pre, t_a, m))
}

/// User-facing reference band specification; resolved against a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RefBandSpec {
    Anticipation {
        t_a: f64,
        #[serde(default)]
        s_l: Option<f64>,
        #[serde(default)]
        s_u: Option<f64>,
    },
    Trend { m_l: f64, m_u: f64 },
    Union { members: Vec<RefBandSpec> },
    Constant { lower: f64, upper: f64 },
}

impl RefBandSpec {
    pub fn resolve(&self, fit: &FittedEventStudy, alpha: f64) -> Result<ReferenceBand> {
        match self {
            Self::Anticipation { t_a, s_l, s_u } => {
                let default = t_quantile(1.0 - alpha / 2.0, fit.df());
                refband_anticipation(fit, *t_a, s_l.unwrap_or(default), s_u.unwrap_or(default))
            }
            Self::Trend { m_l, m_u } => refband_trend(&fit.spline, *m_l, *m_u),
            Self::Union { members } => {
                let resolved = members
                    .iter()
                    .map(|m| m.resolve(fit, alpha))
                    .collect::<Result<Vec<_>>>()?;
                refband_union(&resolved)
            }
            Self::Constant { lower, upper } => {
                if !(lower <= upper) {
                    return Err(Error::InvalidArgument("constant band needs lower <= upper".into()));
                }
                Ok(ReferenceBand::Constant {
                    lower: *lower,
                    upper: *upper,
                })
            }
        }
    }

    /// Largest anticipation time among the components, if any.
    pub fn anticipation_time(&self) -> Option<f64> {
        match self {
            Self::Anticipation { t_a, .. } => Some(*t_a),
            Self::Union { members } => members
                .iter()
                .filter_map(|m| m.anticipation_time())
                .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t)))),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HonestConfig {
    pub alpha: f64,
    pub method: CritMethod,
    #[serde(alias = "B", alias = "b")]
    pub replicates: usize,
    pub seed: u64,
    pub kac_rice_form: KacRiceForm,
    pub refband: RefBandSpec,
    /// End of the pre-anticipation window; defaults to the band's t_A, else 0.
    pub t_a: Option<f64>,
    pub post_grid_size: usize,
    pub pre_grid_size: usize,
    pub plot_grid_size: usize,
}

impl Default for HonestConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            method: CritMethod::ParamBoot,
            replicates: 1000,
            seed: 0,
            kac_rice_form: KacRiceForm::Corrected,
            refband: RefBandSpec::Anticipation {
                t_a: -1.0,
                s_l: None,
                s_u: None,
            },
            t_a: None,
            post_grid_size: 100,
            pre_grid_size: 101,
            plot_grid_size: 201,
        }
    }
}

impl HonestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::InvalidArgument(format!("alpha = {} must lie in (0, 0.5)", self.alpha)));
        }
        if self.replicates < 100 && self.method != CritMethod::KacRice {
            return Err(Error::InvalidArgument("need at least 100 bootstrap replicates".into()));
        }
        if self.post_grid_size == 0 || self.pre_grid_size < 2 || self.plot_grid_size < 2 {
            return Err(Error::InvalidArgument("grid sizes too small".into()));
        }
        Ok(())
    }

    pub fn equivalence_end(&self) -> f64 {
        self.t_a.or_else(|| self.refband.anticipation_time()).unwrap_or(0.0)
    }
}

/// Reference band evaluated on the plotting grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefBandReport {
    pub kind: String,
    pub params: ReferenceBand,
    pub grid: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceReport {
    pub rejected: bool,
    pub spans: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub validated: bool,
    pub spans: Vec<(f64, f64)>,
    pub window: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub alpha: f64,
    pub method: CritMethod,
    /// Method used for the infimum band (Kac-Rice has no infimum variant).
    pub inf_method: CritMethod,
    pub seed: u64,
    pub replicates: usize,
    pub kac_rice_form: KacRiceForm,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub t_pre: f64,
    pub t_post: f64,
}

/// Everything needed to draw and interpret an honest event-study plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HonestEventStudy {
    pub estimate: PointwiseEstimate,
    pub covariance: CovMatrix,
    /// Pointwise (full domain), sup SCB (post period), two-sided inf SCB
    /// (pre-anticipation window).
    pub bands: Vec<Band>,
    pub critical_values: Vec<CriticalValue>,
    pub refband: RefBandReport,
    pub relevance: RelevanceReport,
    pub equivalence: EquivalenceReport,
    pub meta: ReportMeta,
}

impl HonestEventStudy {
    pub fn band(&self, kind: BandKind) -> Option<&Band> {
        self.bands.iter().find(|b| b.kind == kind)
    }
}

/// Builds all bands and runs both tests for `fit`.
pub fn honest_report(fit: &FittedEventStudy, cfg: &HonestConfig) -> Result<HonestEventStudy> {
    cfg.validate()?;
    let (lo, hi) = fit.domain();
    let t_pre = -lo;
    let post_grid = grid_open_left(0.0, hi, cfg.post_grid_size);
    let t_a = cfg.equivalence_end();
    let pre_grid = pre_anticipation_grid(t_pre, t_a, cfg.pre_grid_size)?;
    let plot_grid = grid_closed(lo, hi, cfg.plot_grid_size);

    let sup_crit = critical_value(
        fit,
        cfg.method,
        Side::Sup,
        cfg.alpha,
        &post_grid,
        cfg.replicates,
        cfg.seed,
        cfg.kac_rice_form,
    )?;
    let inf_method = match cfg.method {
        CritMethod::KacRice => CritMethod::ParamBoot,
        m => m,
    };
    let inf_crit = critical_value(
        fit,
        inf_method,
        Side::Inf,
        cfg.alpha,
        &pre_grid,
        cfg.replicates.max(100),
        cfg.seed,
        cfg.kac_rice_form,
    )?;

    let pointwise = pointwise_band(fit, &plot_grid, cfg.alpha)?;
    let sup_band = build_band(fit, &sup_crit, &post_grid)?;
    let inf_band = build_band(fit, &inf_crit, &pre_grid)?;

    let reference = cfg.refband.resolve(fit, cfg.alpha)?;
    let relevance = relevance_test(&sup_band, &reference, &post_grid)?;
    let equivalence = equivalence_validate(&inf_band, &reference, &pre_grid)?;

    let (lower, upper): (Vec<f64>, Vec<f64>) = plot_grid.iter().map(|&t| reference.bounds(t)).unzip();
    Ok(HonestEventStudy {
        estimate: fit.estimate.clone(),
        covariance: fit.covariance.clone(),
        bands: vec![pointwise, sup_band, inf_band],
        critical_values: vec![sup_crit, inf_crit],
        refband: RefBandReport {
            kind: reference.kind_name().into(),
            params: reference,
            grid: plot_grid,
            lower,
            upper,
        },
        relevance: RelevanceReport {
            rejected: relevance.rejected,
            spans: relevance.spans,
        },
        equivalence: EquivalenceReport {
            validated: equivalence.rejected,
            spans: equivalence.spans,
            window: (-t_pre, t_a),
        },
        meta: ReportMeta {
            alpha: cfg.alpha,
            method: cfg.method,
            inf_method,
            seed: cfg.seed,
            replicates: cfg.replicates,
            kac_rice_form: cfg.kac_rice_form,
            n: fit.n(),
            t: fit.estimate.event_times.len(),
            t_pre,
            t_post: hi,
        },
    })
}

/// One row of the plot-data export. Envelopes are empty outside their domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub t: f64,
    pub beta_hat: f64,
    pub se: f64,
    pub pointwise_lower: f64,
    pub pointwise_upper: f64,
    pub sup_lower: Option<f64>,
    pub sup_upper: Option<f64>,
    pub inf_lower: Option<f64>,
    pub inf_upper: Option<f64>,
    pub ref_lower: f64,
    pub ref_upper: f64,
    /// Sup band and reference band are disjoint here.
    pub significant: bool,
    /// Inside the pre-anticipation window but not strictly inside the reference band.
    pub equivalence_failure: bool,
}

/// Evaluates every envelope of `report` on its plotting grid.
pub fn plot_data(fit: &FittedEventStudy, report: &HonestEventStudy) -> Result<Vec<PlotRow>> {
    let grid = &report.refband.grid;
    let reference = &report.refband.params;
    let pointwise = pointwise_band(fit, grid, report.meta.alpha)?;
    let (w_lo, w_hi) = report.equivalence.window;
    let post: Vec<f64> = grid.iter().copied().filter(|&t| t > 0.0).collect();
    let pre: Vec<f64> = grid.iter().copied().filter(|&t| t >= w_lo && t <= w_hi).collect();
    let sup = build_band(fit, &report.critical_values[0], &post)?;
    let inf = build_band(fit, &report.critical_values[1], &pre)?;
    let sig = disjoint_flags(&sup, reference);
    let fail = inclusion_failures(&inf, reference);
    let (mut ip, mut jp) = (0, 0);
    let mut rows = Vec::with_capacity(grid.len());
    for (k, &t) in grid.iter().enumerate() {
        let (ref_lower, ref_upper) = reference.bounds(t);
        let mut row = PlotRow {
            t,
            beta_hat: pointwise.estimate[k],
            se: fit.se(t)?,
            pointwise_lower: pointwise.lower[k],
            pointwise_upper: pointwise.upper[k],
            sup_lower: None,
            sup_upper: None,
            inf_lower: None,
            inf_upper: None,
            ref_lower,
            ref_upper,
            significant: false,
            equivalence_failure: false,
        };
        if t > 0.0 {
            row.sup_lower = Some(sup.lower[ip]);
            row.sup_upper = Some(sup.upper[ip]);
            row.significant = sig[ip];
            ip += 1;
        }
        if t >= w_lo && t <= w_hi {
            row.inf_lower = Some(inf.lower[jp]);
            row.inf_upper = Some(inf.upper[jp]);
            row.equivalence_failure = fail[jp];
            jp += 1;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Writes plot rows as CSV with a fixed column order.
pub fn write_plot_csv<W: std::io::Write>(rows: &[PlotRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| Error::Csv(e.to_string()))?;
    }
    out.flush().map_err(|e| Error::Io(e.to_string()))
}

/// Fits the panel with the estimator its design calls for: basic or FWL for
/// binary treatment, the aggregated group estimator for staggered adoption.
pub fn fit_panel(data: &PanelData) -> Result<FittedEventStudy> {
    match data.assignment() {
        Assignment::Binary(_) => FittedEventStudy::from_estimation(estimate_binary(data)?),
        Assignment::Cohorts(_) => {
            let spec = StaggeredSpec::from_panel(data)?;
            FittedEventStudy::from_staggered(&staggered_estimate(data, &spec)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bands::{crit_param_boot, Side};
    use crate::estimate::estimate_binary;
    use crate::panel::Assignment;
    use crate::spline::natural_cubic_fit;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn band_from(grid: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>, kind: BandKind) -> Band {
        Band {
            kind,
            estimate: lower.iter().zip(&upper).map(|(a, b)| 0.5 * (a + b)).collect(),
            grid,
            lower,
            upper,
            alpha: 0.05,
            level: 0.95,
            df: 99.0,
            method: None,
            crit: 2.0,
            seed: None,
        }
    }

    fn fit_with(n: usize, effect: f64, seed: u64) -> FittedEventStudy {
        let mut r = crate::rng::stream(seed, 2);
        let d: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let y = DMatrix::from_fn(n, 11, |i, j| {
            let t = j as f64 - 5.0;
            let te = if t > 0.0 && d[i] == 1 { effect } else { 0.0 };
            te + 0.3 * r.sample::<f64, _>(StandardNormal)
        });
        let p = PanelData::new((0..n).map(|i| i.to_string()).collect(), (-5..=5).collect(), y, Assignment::Binary(d), None).unwrap();
        FittedEventStudy::from_estimation(estimate_binary(&p).unwrap()).unwrap()
    }

    #[test]
    fn anticipation_band_formula() {
        let fit = fit_with(100, 0.0, 1);
        let band = refband_anticipation(&fit, -2.0, 2.0, 2.0).unwrap();
        let c = fit.beta_hat(-2.0).unwrap();
        let se = fit.se(-2.0).unwrap();
        for t in [-5.0, 0.0, 3.3] {
            assert_relative_eq!(band.lower(t), c - 2.0 * se, epsilon = 1e-14);
            assert_relative_eq!(band.upper(t), c + 2.0 * se, epsilon = 1e-14);
        }
        let zero = refband_anticipation(&fit, -2.0, 0.0, 0.0).unwrap();
        assert_eq!(zero.lower(1.0), zero.upper(1.0));
        assert!(matches!(
            refband_anticipation(&fit, 0.0, 1.0, 1.0),
            Err(Error::DegenerateVariance { .. })
        ));
        let def = refband_anticipation_default(&fit, -2.0, 0.05).unwrap();
        let s = t_quantile(0.975, 99.0);
        assert_relative_eq!(def.upper(0.0) - def.lower(0.0), 2.0 * s * se, epsilon = 1e-12);
    }

    #[test]
    fn anticipation_band_hand_values() {
        let b = ReferenceBand::Anticipation { t_a: -1.0, s_l: 2.0, s_u: 2.0, center: 0.5, se: 0.1 };
        assert_relative_eq!(b.lower(4.0), 0.3, epsilon = 1e-15);
        assert_relative_eq!(b.upper(-4.0), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn trend_band_affine_case() {
        let knots: Vec<f64> = (-10..=10).map(|t| t as f64).collect();
        let vals: Vec<f64> = knots.iter().map(|t| 0.4 * t).collect();
        let s = natural_cubic_fit(&knots, &vals).unwrap();
        let band = refband_trend(&s, 0.5, 0.5).unwrap();
        match &band {
            ReferenceBand::Trend { tr, rm, .. } => {
                assert_relative_eq!(*tr, 0.4, epsilon = 1e-12);
                assert_relative_eq!(*rm, 0.4, epsilon = 1e-12);
            }
            _ => unreachable!(),
        }
        assert_relative_eq!(band.lower(2.0), 0.4, epsilon = 1e-12);
        assert_relative_eq!(band.upper(2.0), 1.2, epsilon = 1e-12);
        assert_relative_eq!(band.lower(-2.0), -1.2, epsilon = 1e-12);
        assert_relative_eq!(band.upper(-2.0), -0.4, epsilon = 1e-12);
        assert_eq!(band.bounds(0.0), (0.0, 0.0));

        let flat = natural_cubic_fit(&knots, &[0.0; 21]).unwrap();
        let band = refband_trend(&flat, 0.5, 0.5).unwrap();
        assert_eq!(band.bounds(7.0), (0.0, 0.0));
    }

    #[test]
    fn trend_rm_bounds_tr() {
        let knots: Vec<f64> = (-10..=10).map(|t| t as f64).collect();
        let vals: Vec<f64> = knots.iter().map(|t| (0.8 * t).sin() * 0.3 + 0.02 * t).collect();
        let s = natural_cubic_fit(&knots, &vals).unwrap();
        if let ReferenceBand::Trend { tr, rm, .. } = refband_trend(&s, 1.0, 1.0).unwrap() {
            assert!(rm >= tr.abs());
        }
    }

    #[test]
    fn union_envelope() {
        let a = ReferenceBand::Constant { lower: 0.3, upper: 0.7 };
        let b = ReferenceBand::Trend { m_l: 0.5, m_u: 0.5, tr: 0.4, rm: 0.4 };
        let u = refband_union(&[a.clone(), b.clone()]).unwrap();
        let (l, h) = u.bounds(1.0);
        assert_relative_eq!(l, 0.2, epsilon = 1e-15);
        assert_relative_eq!(h, 0.7, epsilon = 1e-15);
        let v = refband_union(&[b, a.clone()]).unwrap();
        for t in [-3.0, 0.0, 0.5, 4.0] {
            assert_eq!(u.bounds(t), v.bounds(t));
        }
        assert_eq!(refband_union(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(refband_union(&[]).unwrap_err(), Error::EmptyList);
    }

    #[test]
    fn relevance_cases() {
        let grid = grid_open_left(0.0, 10.0, 100);
        let m = grid.len();
        let reference = ReferenceBand::Constant { lower: -0.2, upper: 0.2 };
        let disjoint = band_from(grid.clone(), vec![0.5; m], vec![1.0; m], BandKind::ScbSup);
        let r = relevance_test(&disjoint, &reference, &grid).unwrap();
        assert!(r.rejected);
        assert_eq!(r.spans, vec![(grid[0], 10.0)]);

        let covering = band_from(grid.clone(), vec![-1.0; m], vec![1.0; m], BandKind::ScbSup);
        let r = relevance_test(&covering, &reference, &grid).unwrap();
        assert!(!r.rejected && r.spans.is_empty());

        // significant only on [5.5, 9]
        let lower: Vec<f64> = grid.iter().map(|&t| if (5.5..=9.0).contains(&t) { 0.3 } else { -0.1 }).collect();
        let partial = band_from(grid.clone(), lower, vec![1.0; m], BandKind::ScbSup);
        let r = relevance_test(&partial, &reference, &grid).unwrap();
        assert_eq!(r.spans.len(), 1);
        assert_relative_eq!(r.spans[0].0, 5.5, epsilon = 1e-12);
        assert_relative_eq!(r.spans[0].1, 9.0, epsilon = 1e-12);

        assert_eq!(relevance_test(&disjoint, &reference, &grid[1..]).unwrap_err(), Error::GridMismatch);
        let wrong = band_from(grid.clone(), vec![0.5; m], vec![1.0; m], BandKind::Pointwise);
        assert!(matches!(relevance_test(&wrong, &reference, &grid), Err(Error::WrongBandKind { .. })));
    }

    #[test]
    fn equivalence_cases() {
        let grid = pre_anticipation_grid(10.0, -4.0, 101).unwrap();
        let m = grid.len();
        let reference = ReferenceBand::Constant { lower: -1.0, upper: 1.0 };
        let inside = band_from(grid.clone(), vec![-0.5; m], vec![0.5; m], BandKind::ScbInfTwoSided);
        let r = equivalence_validate(&inside, &reference, &grid).unwrap();
        assert!(r.validated() && r.spans.is_empty());

        let mut lower = vec![-0.5; m];
        lower[40] = -1.0;
        let touching = band_from(grid.clone(), lower, vec![0.5; m], BandKind::ScbInfTwoSided);
        let r = equivalence_validate(&touching, &reference, &grid).unwrap();
        assert!(!r.validated());
        assert_eq!(r.spans, vec![(grid[40], grid[40])]);

        let mut lower = vec![-0.5; m];
        for v in &mut lower[10..20] {
            *v = -1.3;
        }
        let low_fail = band_from(grid.clone(), lower, vec![0.5; m], BandKind::ScbInfTwoSided);
        let r = equivalence_validate(&low_fail, &reference, &grid).unwrap();
        assert!(!r.rejected);
        assert_eq!(r.spans, vec![(grid[10], grid[19])]);

        assert!(matches!(
            pre_anticipation_grid(10.0, -11.0, 101),
            Err(Error::EmptyPreAnticipationWindow { .. })
        ));
    }

    #[test]
    fn widening_reference_never_adds_rejections() {
        let fit = fit_with(200, 0.15, 3);
        let grid = grid_open_left(0.0, 5.0, 100);
        let crit = crit_param_boot(&fit, Side::Sup, 0.05, &grid, 500, 3).unwrap();
        let band = build_band(&fit, &crit, &grid).unwrap();
        let mut last = usize::MAX;
        for s in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let reference = refband_anticipation(&fit, -1.0, s, s).unwrap();
            let r = relevance_test(&band, &reference, &grid).unwrap();
            let count = disjoint_flags(&band, &reference).iter().filter(|f| **f).count();
            assert!(count <= last);
            assert_eq!(r.rejected, count > 0);
            last = count;
        }
    }

    #[test]
    fn report_structure_and_roundtrip() {
        let fit = fit_with(120, 0.5, 4);
        let cfg = HonestConfig {
            replicates: 300,
            seed: 9,
            refband: RefBandSpec::Anticipation { t_a: -1.0, s_l: Some(2.3), s_u: Some(1.7) },
            ..HonestConfig::default()
        };
        let rep = honest_report(&fit, &cfg).unwrap();
        for kind in [BandKind::Pointwise, BandKind::ScbSup, BandKind::ScbInfTwoSided] {
            assert_eq!(rep.bands.iter().filter(|b| b.kind == kind).count(), 1);
        }
        let sup = rep.band(BandKind::ScbSup).unwrap();
        let inf = rep.band(BandKind::ScbInfTwoSided).unwrap();
        assert_relative_eq!(sup.level, 0.95, epsilon = 1e-15);
        assert_relative_eq!(inf.level, 0.90, epsilon = 1e-15);
        assert_eq!(rep.equivalence.window, (-5.0, -1.0));
        assert_eq!(*inf.grid.last().unwrap(), -1.0);
        assert!(rep.relevance.rejected);
        let json = serde_json::to_string(&rep).unwrap();
        let back: HonestEventStudy = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
        assert_eq!(serde_json::to_string(&back).unwrap(), json);

        let rows = plot_data(&fit, &rep).unwrap();
        assert_eq!(rows.len(), 201);
        let mut buf = Vec::new();
        write_plot_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "t,beta_hat,se,pointwise_lower,pointwise_upper,sup_lower,sup_upper,inf_lower,inf_upper,ref_lower,ref_upper,significant,equivalence_failure"
        );
        assert_eq!(text.lines().count(), 202);
        assert!(rows.iter().filter(|r| r.t <= 0.0).all(|r| r.sup_lower.is_none()));
        assert!(rows.iter().filter(|r| r.t > -1.0).all(|r| r.inf_lower.is_none()));
        assert_eq!(rows.iter().any(|r| r.significant), rep.relevance.rejected);
    }

    #[test]
    fn kac_rice_report_uses_bootstrap_for_inf_band() {
        let fit = fit_with(120, 0.0, 5);
        let cfg = HonestConfig {
            method: CritMethod::KacRice,
            replicates: 200,
            refband: RefBandSpec::Trend { m_l: 1.0, m_u: 1.0 },
            ..HonestConfig::default()
        };
        let rep = honest_report(&fit, &cfg).unwrap();
        assert_eq!(rep.meta.inf_method, CritMethod::ParamBoot);
        assert_eq!(rep.critical_values[0].method, CritMethod::KacRice);
        assert_eq!(rep.equivalence.window, (-5.0, 0.0));
    }
}
