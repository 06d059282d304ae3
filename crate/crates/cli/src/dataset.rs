//! A loaded panel with its fitted estimate, shared by the CLI and the service.

use honest_esp::bands::FittedEventStudy;
use honest_esp::estimate::{estimate_binary, staggered_estimate, CovMatrix, PointwiseEstimate, StaggeredSpec};
use honest_esp::panel::{Assignment, PanelData};
use honest_esp::Result;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaggeredSummary {
    pub spec: StaggeredSpec,
    pub group_estimates: Vec<PointwiseEstimate>,
}

/// Response of `estimate`: β̂ and Ĉ at the observed event times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResponse {
    pub design: String,
    pub estimate: PointwiseEstimate,
    pub covariance: CovMatrix,
    /// √(Ĉ(t,t)/n) per event time.
    pub se: Vec<f64>,
    pub time_scale: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub staggered: Option<StaggeredSummary>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub panel: PanelData,
    pub fit: FittedEventStudy,
    pub staggered: Option<StaggeredSummary>,
}

impl Dataset {
    pub fn new(panel: PanelData, time_scale: f64) -> Result<Self> {
        let (fit, staggered) = match panel.assignment() {
            Assignment::Binary(_) => {
                let e = estimate_binary(&panel)?;
                (FittedEventStudy::with_time_scale(e.estimate, e.covariance, Some(e.influence), time_scale)?, None)
            }
            Assignment::Cohorts(_) => {
                let spec = StaggeredSpec::from_panel(&panel)?;
                let s = staggered_estimate(&panel, &spec)?;
                let fit = FittedEventStudy::with_time_scale(
                    s.aggregate.clone(),
                    s.aggregate_cov.clone(),
                    Some(s.aggregate_influence.clone()),
                    time_scale,
                )?;
                let summary = StaggeredSummary {
                    spec,
                    group_estimates: s.groups.iter().map(|g| g.estimation.estimate.clone()).collect(),
                };
                (fit, Some(summary))
            }
        };
        Ok(Self { panel, fit, staggered })
    }

    pub fn design(&self) -> &'static str {
        match (self.panel.assignment(), self.panel.covariates()) {
            (Assignment::Cohorts(_), _) => "staggered",
            (Assignment::Binary(_), Some(_)) => "covariates",
            (Assignment::Binary(_), None) => "binary",
        }
    }

    pub fn estimate_response(&self) -> EstimateResponse {
        let cov = &self.fit.covariance;
        let n = cov.n_units as f64;
        EstimateResponse {
            design: self.design().into(),
            estimate: self.fit.estimate.clone(),
            covariance: cov.clone(),
            se: (0..cov.cov.nrows()).map(|j| (cov.cov[(j, j)].max(0.0) / n).sqrt()).collect(),
            time_scale: self.fit.time_scale,
            staggered: self.staggered.clone(),
        }
    }
}
