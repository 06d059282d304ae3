//! Requests and computations shared by the command line and the service.

use honest_esp::bands::{
    bonferroni_band, build_band, critical_value, grid_closed, grid_open_left, one_sided_inf_band,
    pointwise_band, Band, CritMethod, CriticalValue, FittedEventStudy, KacRiceForm, Side,
};
use honest_esp::honest::{honest_report, HonestConfig, HonestEventStudy};
use honest_esp::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BandChoice {
    Pointwise,
    Bonferroni,
    #[serde(alias = "pb")]
    #[value(alias = "pb")]
    ParamBoot,
    #[serde(alias = "mb")]
    #[value(alias = "mb")]
    MultBoot,
    #[serde(alias = "kr")]
    #[value(alias = "kr")]
    KacRice,
}

impl BandChoice {
    pub fn crit_method(self) -> Option<CritMethod> {
        match self {
            Self::ParamBoot => Some(CritMethod::ParamBoot),
            Self::MultBoot => Some(CritMethod::MultBoot),
            Self::KacRice => Some(CritMethod::KacRice),
            Self::Pointwise | Self::Bonferroni => None,
        }
    }
}

/// Which infimum band to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InfForm {
    /// Two-sided (1 − 2α) band.
    #[default]
    TwoSided,
    /// [β̂̂ − û·se, ∞).
    Plus,
    /// (−∞, β̂̂ + û·se].
    Minus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandsRequest {
    pub method: BandChoice,
    pub side: Side,
    pub alpha: f64,
    #[serde(alias = "B", alias = "b")]
    pub replicates: usize,
    pub seed: u64,
    pub kac_rice_form: KacRiceForm,
    pub inf_form: InfForm,
    pub grid_lo: Option<f64>,
    pub grid_hi: Option<f64>,
    pub grid_size: Option<usize>,
}

impl Default for BandsRequest {
    fn default() -> Self {
        Self {
            method: BandChoice::ParamBoot,
            side: Side::Sup,
            alpha: 0.05,
            replicates: 1000,
            seed: 0,
            kac_rice_form: KacRiceForm::Corrected,
            inf_form: InfForm::TwoSided,
            grid_lo: None,
            grid_hi: None,
            grid_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandsResponse {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub critical_value: Option<CriticalValue>,
    pub band: Band,
}

/// Evaluation grid: (0, T_post] with 100 points on the sup side and
/// [−T_pre, 0] with 101 points on the inf side, unless overridden.
pub fn band_grid(fit: &FittedEventStudy, req: &BandsRequest) -> Result<Vec<f64>> {
    let (lo, hi) = fit.domain();
    let grid = match (req.side, req.grid_lo, req.grid_hi) {
        (Side::Sup, None, None) => grid_open_left(0.0, hi, req.grid_size.unwrap_or(100)),
        (Side::Sup, l, h) => grid_closed(l.unwrap_or(0.0), h.unwrap_or(hi), req.grid_size.unwrap_or(100)),
        (Side::Inf, l, h) => grid_closed(l.unwrap_or(lo), h.unwrap_or(hi.min(0.0)), req.grid_size.unwrap_or(101)),
    };
    if grid.is_empty() || grid[0] > *grid.last().unwrap() {
        return Err(Error::InvalidArgument("empty band grid".into()));
    }
    Ok(grid)
}

pub fn compute_band(fit: &FittedEventStudy, req: &BandsRequest) -> Result<BandsResponse> {
    if !(req.alpha > 0.0 && req.alpha < 0.5) {
        return Err(Error::InvalidArgument(format!("alpha = {} must lie in (0, 0.5)", req.alpha)));
    }
    let grid = band_grid(fit, req)?;
    // Pointwise-type bands on the inf side use level 1 − 2α like the inf SCB.
    let level_alpha = match req.side {
        Side::Sup => req.alpha,
        Side::Inf => 2.0 * req.alpha,
    };
    match req.method.crit_method() {
        None => {
            let band = if req.method == BandChoice::Pointwise {
                pointwise_band(fit, &grid, level_alpha)?
            } else {
                bonferroni_band(fit, &grid, level_alpha, grid.len())?
            };
            Ok(BandsResponse {
                critical_value: None,
                band,
            })
        }
        Some(cm) => {
            if cm != CritMethod::KacRice && req.replicates < 100 {
                return Err(Error::InvalidArgument("need at least 100 bootstrap replicates".into()));
            }
            let crit = critical_value(fit, cm, req.side, req.alpha, &grid, req.replicates, req.seed, req.kac_rice_form)?;
            let band = match (req.side, req.inf_form) {
                (Side::Inf, InfForm::Plus) => one_sided_inf_band(fit, &crit, &grid, true)?,
                (Side::Inf, InfForm::Minus) => one_sided_inf_band(fit, &crit, &grid, false)?,
                _ => build_band(fit, &crit, &grid)?,
            };
            Ok(BandsResponse {
                critical_value: Some(crit),
                band,
            })
        }
    }
}

pub fn compute_report(fit: &FittedEventStudy, cfg: &HonestConfig) -> Result<HonestEventStudy> {
    honest_report(fit, cfg)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> serde_json::Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}
