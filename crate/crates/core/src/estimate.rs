//! Pointwise DiD estimation at the observed event times.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{demean, two_way_transform, Cohort, DemeanedPanel, PanelData};

const MIN_TREATMENT_SS: f64 = 1e-14;
const FWL_EXPLICIT_MAX_N: usize = 2000;

/// Serializes a matrix as a list of rows.
pub(crate) mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows())
            .map(|i| m.row(i).iter().copied().collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EstimatorKind {
    Basic,
    Fwl,
    StaggeredGroup { group: i64 },
    StaggeredAggregate,
}

/// β̂(t) at the observed event times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseEstimate {
    pub event_times: Vec<i64>,
    pub beta: Vec<f64>,
    pub ref_time: i64,
    pub n_units: usize,
    pub kind: EstimatorKind,
}

impl PointwiseEstimate {
    pub fn times_f64(&self) -> Vec<f64> {
        self.event_times.iter().map(|&t| t as f64).collect()
    }

    pub fn ref_index(&self) -> usize {
        self.event_times.iter().position(|&t| t == 0).expect("reference time present")
    }

    pub fn at(&self, t: i64) -> Option<f64> {
        self.event_times.iter().position(|&s| s == t).map(|i| self.beta[i])
    }
}

/// Ĉ(s,t) on the observed grid. Sampling variance of β̂ is `cov / n_units`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovMatrix {
    pub event_times: Vec<i64>,
    #[serde(with = "matrix_rows")]
    pub cov: DMatrix<f64>,
    pub n_units: usize,
}

fn treatment_ss(d_dot: &DVector<f64>) -> Result<f64> {
    let ss = d_dot.norm_squared();
    if !(ss >= MIN_TREATMENT_SS) {
        return Err(Error::NoTreatmentVariation);
    }
    Ok(ss)
}

fn kind_of(dp: &DemeanedPanel) -> EstimatorKind {
    if dp.n_covariates > 0 {
        EstimatorKind::Fwl
    } else {
        EstimatorKind::Basic
    }
}

/// β̂(t) = (Σ Ḋ_i²)⁻¹ Σ Ḋ_i (Ẏ_i(t) − Ẏ_i(0)), with β̂(0) set to 0.
pub fn did_estimate(dp: &DemeanedPanel) -> Result<PointwiseEstimate> {
    let ss = treatment_ss(&dp.d_dot)?;
    let r = dp.ref_index();
    let y0 = dp.y_dot.column(r);
    let beta = (0..dp.event_times.len())
        .map(|j| {
            if j == r {
                return 0.0;
            }
            let yj = dp.y_dot.column(j);
            let mut acc = 0.0;
            for i in 0..dp.n_units() {
                acc += dp.d_dot[i] * (yj[i] - y0[i]);
            }
            acc / ss
        })
        .collect();
    Ok(PointwiseEstimate {
        event_times: dp.event_times.clone(),
        beta,
        ref_time: 0,
        n_units: dp.n_units(),
        kind: kind_of(dp),
    })
}

/// Residuals Δ₀Ẏ_i(t) = (Ẏ_i(t) − Ẏ_i(0)) − β̂(t) Ḋ_i, n × T. Column 0 is exactly zero.
pub fn residuals(dp: &DemeanedPanel, est: &PointwiseEstimate) -> DMatrix<f64> {
    let r = dp.ref_index();
    DMatrix::from_fn(dp.n_units(), dp.event_times.len(), |i, j| {
        if j == r {
            0.0
        } else {
            (dp.y_dot[(i, j)] - dp.y_dot[(i, r)]) - est.beta[j] * dp.d_dot[i]
        }
    })
}

/// Ĉ(s,t) = [(1/n) Σ Ḋ² Δ₀Ẏ(s) Δ₀Ẏ(t)] · [(1/n) Σ Ḋ²]⁻².
pub fn did_covariance(dp: &DemeanedPanel, est: &PointwiseEstimate) -> Result<CovMatrix> {
    let ss = treatment_ss(&dp.d_dot)?;
    let n = dp.n_units() as f64;
    let res = residuals(dp, est);
    let tn = dp.event_times.len();
    let mean_d2 = ss / n;
    let scale = 1.0 / (n * mean_d2 * mean_d2);
    let d2: Vec<f64> = dp.d_dot.iter().map(|d| d * d).collect();
    let mut cov = DMatrix::zeros(tn, tn);
    for s in 0..tn {
        for t in s..tn {
            let mut acc = 0.0;
            for i in 0..dp.n_units() {
                acc += d2[i] * res[(i, s)] * res[(i, t)];
            }
            cov[(s, t)] = acc * scale;
            cov[(t, s)] = acc * scale;
        }
    }
    Ok(CovMatrix {
        event_times: dp.event_times.clone(),
        cov,
        n_units: dp.n_units(),
    })
}

/// Influence rows ψ_i(t) = Ḋ_i Δ₀Ẏ_i(t) / Σ Ḋ², so that β̂ perturbed by unit
/// weights m_i is β̂ + Σ m_i ψ_i and Σ ψ_i ψ_iᵀ = Ĉ / n.
pub fn influence(dp: &DemeanedPanel, est: &PointwiseEstimate) -> Result<DMatrix<f64>> {
    let ss = treatment_ss(&dp.d_dot)?;
    let mut res = residuals(dp, est);
    for (i, mut row) in res.row_iter_mut().enumerate() {
        row *= dp.d_dot[i] / ss;
    }
    Ok(res)
}

/// Partials the demeaned covariates out of Ḋ and Ẏ.
///
/// Without covariates this is the plain two-way transform.
pub fn fwl_residualize(data: &PanelData) -> Result<DemeanedPanel> {
    let base = two_way_transform(data)?;
    let cov = match data.covariates() {
        Some(c) if !c.names.is_empty() => c,
        _ => return Ok(base),
    };
    let n = data.n_units();
    let k = cov.values.ncols();
    let mut w = cov.values.clone();
    for mut col in w.column_iter_mut() {
        let m = col.sum() / n as f64;
        col.add_scalar_mut(-m);
    }
    if k >= n {
        return Err(Error::RankDeficientCovariates);
    }
    let qr = w.clone().qr();
    let r = qr.r();
    let rmax = (0..k).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if rmax == 0.0 || (0..k).any(|j| r[(j, j)].abs() <= 1e-10 * rmax) {
        return Err(Error::RankDeficientCovariates);
    }
    let q = qr.q();
    let (d_tilde, y_tilde) = if n <= FWL_EXPLICIT_MAX_N {
        let l = DMatrix::identity(n, n) - &q * q.transpose();
        (&l * &base.d_dot, &l * &base.y_dot)
    } else {
        let d = &base.d_dot - &q * (q.transpose() * &base.d_dot);
        let y = &base.y_dot - &q * (q.transpose() * &base.y_dot);
        (d, y)
    };
    if d_tilde.norm_squared() <= 1e-12 * base.d_dot.norm_squared() {
        return Err(Error::ZeroResidualTreatment);
    }
    Ok(DemeanedPanel {
        event_times: base.event_times,
        d_dot: d_tilde,
        y_dot: y_tilde,
        n_covariates: k,
    })
}

/// Estimate, covariance and influence rows for one binary design.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimation {
    pub estimate: PointwiseEstimate,
    pub covariance: CovMatrix,
    /// n × T influence rows (see [`influence`]).
    pub influence: DMatrix<f64>,
}

/// Runs the basic estimator, or the FWL variant when the panel has covariates.
pub fn estimate_binary(data: &PanelData) -> Result<Estimation> {
    let dp = fwl_residualize(data)?;
    estimation_from(&dp)
}

fn estimation_from(dp: &DemeanedPanel) -> Result<Estimation> {
    let estimate = did_estimate(dp)?;
    let covariance = did_covariance(dp, &estimate)?;
    let influence = influence(dp, &estimate)?;
    Ok(Estimation {
        estimate,
        covariance,
        influence,
    })
}

/// Groups, weights and common event window of a staggered design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaggeredSpec {
    pub groups: Vec<i64>,
    pub group_sizes: Vec<usize>,
    /// ŵ_g = n_g / n_𝒢.
    pub weights: Vec<f64>,
    pub window: (i64, i64),
}

impl StaggeredSpec {
    /// Derives the spec from the cohorts present in `data`.
    pub fn from_panel(data: &PanelData) -> Result<Self> {
        let cohorts = data.cohorts().ok_or(Error::NotStaggeredDesign)?;
        let mut groups: Vec<i64> = cohorts
            .iter()
            .filter_map(|c| match c {
                Cohort::Treated(g) => Some(*g),
                Cohort::Never => None,
            })
            .collect();
        groups.sort_unstable();
        groups.dedup();
        Self::for_groups(data, &groups)
    }

    /// Spec restricted to `groups`.
    pub fn for_groups(data: &PanelData, groups: &[i64]) -> Result<Self> {
        let cohorts = data.cohorts().ok_or(Error::NotStaggeredDesign)?;
        if groups.is_empty() {
            return Err(Error::InvalidArgument("no treatment groups".into()));
        }
        if !cohorts.contains(&Cohort::Never) {
            return Err(Error::NoNeverTreated);
        }
        let sizes: Vec<usize> = groups
            .iter()
            .map(|&g| cohorts.iter().filter(|c| **c == Cohort::Treated(g)).count())
            .collect();
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::EmptyGroup(groups[i]));
        }
        let total: usize = sizes.iter().sum();
        let weights = sizes.iter().map(|&s| s as f64 / total as f64).collect();
        let g_min = *groups.iter().min().unwrap();
        let g_max = *groups.iter().max().unwrap();
        let window = (-data.t_pre() - g_min, data.t_post() - g_max);
        if window.0 > -1 || window.1 < 1 {
            return Err(Error::EmptyCommonWindow);
        }
        Ok(Self {
            groups: groups.to_vec(),
            group_sizes: sizes,
            weights,
            window,
        })
    }

    pub fn window_times(&self) -> Vec<i64> {
        (self.window.0..=self.window.1).collect()
    }
}

/// One group's estimate on Ī_g = group g ∪ never-treated, in event time e = t − g.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupEstimate {
    pub group: i64,
    /// Row indices (into the panel) of the units in Ī_g.
    pub units: Vec<usize>,
    pub estimation: Estimation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaggeredEstimate {
    pub spec: StaggeredSpec,
    pub groups: Vec<GroupEstimate>,
    pub aggregate: PointwiseEstimate,
    /// Ĉ_A on the scale of all units in the union of the Ī_g.
    pub aggregate_cov: CovMatrix,
    /// Influence rows of β̂_A over all panel units (zero rows for units
    /// outside every Ī_g), restricted to the common window.
    pub aggregate_influence: DMatrix<f64>,
}

/// Per-group and aggregated estimates for a staggered design.
///
/// β̂_A(e) = Σ_g ŵ_g β̂_g(e) and Var β̂_A(e) = Σ_g ŵ_g² Var β̂_g(e); the
/// aggregate covariance is reported on the scale of the n units that enter
/// some Ī_g, i.e. Ĉ_A = n Σ_g ŵ_g² Ĉ_g / n̄_g with n̄_g = |Ī_g|.
pub fn staggered_estimate(data: &PanelData, spec: &StaggeredSpec) -> Result<StaggeredEstimate> {
    let cohorts = data.cohorts().ok_or(Error::NotStaggeredDesign)?;
    let times = data.event_times();
    let never: Vec<usize> = (0..cohorts.len()).filter(|&i| cohorts[i] == Cohort::Never).collect();
    if never.is_empty() {
        return Err(Error::NoNeverTreated);
    }
    let window = spec.window_times();
    let mut groups = Vec::with_capacity(spec.groups.len());
    for &g in &spec.groups {
        let mut units: Vec<usize> = (0..cohorts.len())
            .filter(|&i| cohorts[i] == Cohort::Treated(g))
            .collect();
        if units.is_empty() {
            return Err(Error::EmptyGroup(g));
        }
        units.extend(never.iter().copied());
        units.sort_unstable();
        let d: Vec<f64> = units
            .iter()
            .map(|&i| if cohorts[i] == Cohort::Treated(g) { 1.0 } else { 0.0 })
            .collect();
        let y = data.outcomes().select_rows(&units);
        let (d_dot, y_dot) = demean(&d, &y);
        let dp = DemeanedPanel {
            event_times: times.iter().map(|t| t - g).collect(),
            d_dot,
            y_dot,
            n_covariates: 0,
        };
        let mut estimation = estimation_from(&dp)?;
        estimation.estimate.kind = EstimatorKind::StaggeredGroup { group: g };
        groups.push(GroupEstimate {
            group: g,
            units,
            estimation,
        });
    }

    let in_some: Vec<bool> = {
        let mut v = vec![false; data.n_units()];
        for ge in &groups {
            for &i in &ge.units {
                v[i] = true;
            }
        }
        v
    };
    let n_total = in_some.iter().filter(|b| **b).count();
    let w_len = window.len();
    let mut beta = vec![0.0; w_len];
    let mut cov = DMatrix::zeros(w_len, w_len);
    let mut infl = DMatrix::zeros(data.n_units(), w_len);
    for (ge, &w) in groups.iter().zip(&spec.weights) {
        let est = &ge.estimation.estimate;
        let cols: Vec<usize> = window
            .iter()
            .map(|e| est.event_times.iter().position(|s| s == e).expect("window inside group range"))
            .collect();
        let n_g = ge.units.len() as f64;
        for (a, &ca) in cols.iter().enumerate() {
            beta[a] += w * est.beta[ca];
            for (b, &cb) in cols.iter().enumerate() {
                cov[(a, b)] += w * w * (n_total as f64 / n_g) * ge.estimation.covariance.cov[(ca, cb)];
            }
            for (r, &i) in ge.units.iter().enumerate() {
                infl[(i, a)] += w * ge.estimation.influence[(r, ca)];
            }
        }
    }
    let ref_a = window.iter().position(|&e| e == 0).unwrap();
    beta[ref_a] = 0.0;
    Ok(StaggeredEstimate {
        spec: spec.clone(),
        groups,
        aggregate: PointwiseEstimate {
            event_times: window.clone(),
            beta,
            ref_time: 0,
            n_units: n_total,
            kind: EstimatorKind::StaggeredAggregate,
        },
        aggregate_cov: CovMatrix {
            event_times: window,
            cov,
            n_units: n_total,
        },
        aggregate_influence: infl,
    })
}

/// Two-way fixed-effects event-study regression with interaction dummies
/// D_i·1{t = s}, s ≠ 0, solved by dense normal equations.
///
/// Shares no code with [`did_estimate`]; it exists to cross-check it.
pub fn twfe_oracle(data: &PanelData) -> Result<PointwiseEstimate> {
    let d = data.treatment().ok_or(Error::NotBinaryDesign)?;
    let n = data.n_units();
    let tn = data.n_times();
    let treated = d.iter().filter(|v| **v == 1).count();
    if treated == 0 || treated == n {
        return Err(Error::NoTreatmentVariation);
    }
    let r = data.ref_index();

    let double_demean = |x: &DMatrix<f64>| -> DMatrix<f64> {
        let row_means: Vec<f64> = (0..n).map(|i| x.row(i).sum() / tn as f64).collect();
        let col_means: Vec<f64> = (0..tn).map(|j| x.column(j).sum() / n as f64).collect();
        let grand = x.sum() / (n * tn) as f64;
        DMatrix::from_fn(n, tn, |i, j| x[(i, j)] - row_means[i] - col_means[j] + grand)
    };

    let y = double_demean(data.outcomes());
    let slots: Vec<usize> = (0..tn).filter(|&j| j != r).collect();
    let regressors: Vec<DMatrix<f64>> = slots
        .iter()
        .map(|&s| {
            let x = DMatrix::from_fn(n, tn, |i, j| if j == s && d[i] == 1 { 1.0 } else { 0.0 });
            double_demean(&x)
        })
        .collect();
    let p = slots.len();
    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = DVector::zeros(p);
    for a in 0..p {
        xty[a] = regressors[a].dot(&y);
        for b in a..p {
            let v = regressors[a].dot(&regressors[b]);
            xtx[(a, b)] = v;
            xtx[(b, a)] = v;
        }
    }
    let coef = xtx.lu().solve(&xty).ok_or(Error::SingularDesign)?;
    if coef.iter().any(|c| !c.is_finite()) {
        return Err(Error::SingularDesign);
    }
    let mut beta = vec![0.0; tn];
    for (a, &s) in slots.iter().enumerate() {
        beta[s] = coef[a];
    }
    Ok(PointwiseEstimate {
        event_times: data.event_times().to_vec(),
        beta,
        ref_time: 0,
        n_units: n,
        kind: EstimatorKind::Basic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{Assignment, Covariates};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn hand_panel() -> PanelData {
        let y = DMatrix::from_row_slice(4, 3, &[
            0.0, 1.0, 3.0, //
            0.0, 2.0, 4.0, //
            0.0, 1.0, 1.5, //
            0.0, 2.0, 2.5,
        ]);
        PanelData::new(
            (0..4).map(|i| i.to_string()).collect(),
            vec![-1, 0, 1],
            y,
            Assignment::Binary(vec![1, 1, 0, 0]),
            None,
        )
        .unwrap()
    }

    #[test]
    fn hand_case_matches_group_mean_did() {
        let p = hand_panel();
        let dp = two_way_transform(&p).unwrap();
        let est = did_estimate(&dp).unwrap();
        // treated mean change 2, control mean change 0.5
        assert_relative_eq!(est.at(1).unwrap(), 2.0 - 0.5, epsilon = 1e-14);
        assert_eq!(est.at(0), Some(0.0));
        assert_relative_eq!(twfe_oracle(&p).unwrap().beta[2], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn hand_case_covariance() {
        let p = hand_panel();
        let dp = two_way_transform(&p).unwrap();
        let est = did_estimate(&dp).unwrap();
        let c = did_covariance(&dp, &est).unwrap();
        // Δ₀Ẏ_i(1) = (ΔY_i − mean ΔY) − 1.5 Ḋ_i with ΔY = (2, 2, 0.5, 0.5), mean 1.25
        let dd = [0.5, 0.5, -0.5, -0.5];
        let dy = [2.0, 2.0, 0.5, 0.5];
        let r: Vec<f64> = (0..4).map(|i| (dy[i] - 1.25) - 1.5 * dd[i]).collect();
        let num: f64 = (0..4).map(|i| dd[i] * dd[i] * r[i] * r[i]).sum::<f64>() / 4.0;
        let den: f64 = dd.iter().map(|d| d * d).sum::<f64>() / 4.0;
        assert_relative_eq!(c.cov[(2, 2)], num / (den * den), epsilon = 1e-14);
        for j in 0..3 {
            assert_eq!(c.cov[(1, j)], 0.0);
            assert_eq!(c.cov[(j, 1)], 0.0);
        }
    }

    #[test]
    fn hand_case_covariance_nonzero() {
        let y = DMatrix::from_row_slice(4, 3, &[
            0.0, 1.0, 3.0, 0.0, 2.0, 5.0, 0.0, 1.0, 1.0, 0.0, 2.0, 2.5,
        ]);
        let p = hand_panel().with_outcomes(y).unwrap();
        let dp = two_way_transform(&p).unwrap();
        let est = did_estimate(&dp).unwrap();
        // ΔY = (2, 3, 0, 0.5): β̂(1) = 2.5 − 0.25 = 2.25
        assert_relative_eq!(est.beta[2], 2.25, epsilon = 1e-14);
        let dd = [0.5, 0.5, -0.5, -0.5];
        let dy = [2.0, 3.0, 0.0, 0.5];
        let m = dy.iter().sum::<f64>() / 4.0;
        let num: f64 = (0..4)
            .map(|i| {
                let r = (dy[i] - m) - 2.25 * dd[i];
                dd[i] * dd[i] * r * r
            })
            .sum::<f64>()
            / 4.0;
        let c = did_covariance(&dp, &est).unwrap();
        assert!(num > 0.0);
        assert_relative_eq!(c.cov[(2, 2)], num / (0.25 * 0.25), epsilon = 1e-13);
    }

    #[test]
    fn influence_reproduces_covariance() {
        let p = random_panel(3, 15, 5);
        let dp = two_way_transform(&p).unwrap();
        let est = did_estimate(&dp).unwrap();
        let c = did_covariance(&dp, &est).unwrap();
        let psi = influence(&dp, &est).unwrap();
        let gram = psi.transpose() * &psi * dp.n_units() as f64;
        assert!((gram - &c.cov).amax() < 1e-12 * c.cov.amax().max(1.0));
    }

    #[test]
    fn no_variation_rejected() {
        let dp = DemeanedPanel {
            event_times: vec![-1, 0, 1],
            d_dot: DVector::zeros(3),
            y_dot: DMatrix::zeros(3, 3),
            n_covariates: 0,
        };
        assert_eq!(did_estimate(&dp).unwrap_err(), Error::NoTreatmentVariation);
    }

    fn random_panel(seed: u64, n: usize, tn: usize) -> PanelData {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, 0);
        let t_pre = rng.random_range(1..tn - 1) as i64;
        let times: Vec<i64> = (0..tn as i64).map(|k| k - t_pre).collect();
        let mut d: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        d[0] = 1;
        d[1] = 0;
        let y = DMatrix::from_fn(n, tn, |_, _| rng.random_range(-3.0..3.0));
        PanelData::new((0..n).map(|i| i.to_string()).collect(), times, y, Assignment::Binary(d), None).unwrap()
    }

    #[test]
    fn matches_twfe_on_random_panels() {
        for seed in 0..30 {
            let p = random_panel(seed, 6 + seed as usize % 15, 3 + seed as usize % 5);
            let a = did_estimate(&two_way_transform(&p).unwrap()).unwrap();
            let b = twfe_oracle(&p).unwrap();
            for (x, y) in a.beta.iter().zip(&b.beta) {
                assert!((x - y).abs() <= 1e-9, "seed {seed}: {x} vs {y}");
            }
        }
    }

    proptest! {
        #[test]
        fn shift_scale_and_relabel(seed in 0u64..1000, c in -5.0f64..5.0, k in 0.1f64..4.0) {
            let p = random_panel(seed, 12, 5);
            let base_dp = two_way_transform(&p).unwrap();
            let base = did_estimate(&base_dp).unwrap();
            let base_c = did_covariance(&base_dp, &base).unwrap();

            let shifted = p.with_outcomes(p.outcomes().add_scalar(c)).unwrap();
            let dp = two_way_transform(&shifted).unwrap();
            let e = did_estimate(&dp).unwrap();
            let cc = did_covariance(&dp, &e).unwrap();
            for j in 0..5 {
                prop_assert!((e.beta[j] - base.beta[j]).abs() < 1e-10);
            }
            prop_assert!((&cc.cov - &base_c.cov).amax() < 1e-9);

            let scaled = p.with_outcomes(p.outcomes() * k).unwrap();
            let dp = two_way_transform(&scaled).unwrap();
            let e = did_estimate(&dp).unwrap();
            let cc = did_covariance(&dp, &e).unwrap();
            for j in 0..5 {
                prop_assert!((e.beta[j] - k * base.beta[j]).abs() < 1e-10 * (1.0 + base.beta[j].abs()));
            }
            prop_assert!((&cc.cov - &base_c.cov * (k * k)).amax() < 1e-9 * (1.0 + base_c.cov.amax()));

            let flipped: Vec<u8> = p.treatment().unwrap().iter().map(|v| 1 - v).collect();
            let f = p.with_treatment(flipped).unwrap();
            let e = did_estimate(&two_way_transform(&f).unwrap()).unwrap();
            for j in 0..5 {
                prop_assert!((e.beta[j] + base.beta[j]).abs() < 1e-10);
            }
        }

        #[test]
        fn covariance_is_psd(seed in 0u64..1000) {
            let p = random_panel(seed, 15, 6);
            let dp = two_way_transform(&p).unwrap();
            let e = did_estimate(&dp).unwrap();
            let c = did_covariance(&dp, &e).unwrap();
            let r = dp.ref_index();
            let keep: Vec<usize> = (0..6).filter(|&j| j != r).collect();
            let sub = c.cov.select_rows(&keep).select_columns(&keep);
            let eig = sub.symmetric_eigen();
            let scale = c.cov.amax().max(1.0);
            prop_assert!(eig.eigenvalues.iter().all(|v| *v >= -1e-10 * scale));
            prop_assert!((&c.cov - c.cov.transpose()).amax() == 0.0);
        }
    }

    fn with_covariates(p: &PanelData, w: DMatrix<f64>) -> PanelData {
        let names = (0..w.ncols()).map(|k| format!("w{k}")).collect();
        p.with_covariates(Some(Covariates { names, values: w })).unwrap()
    }

    #[test]
    fn fwl_without_covariates_is_identity() {
        let p = random_panel(11, 10, 4);
        assert_eq!(fwl_residualize(&p).unwrap(), two_way_transform(&p).unwrap());
    }

    #[test]
    fn fwl_with_orthogonal_covariate_matches_basic() {
        // D = (1,1,0,0,1,1,0,0); w has zero mean, is orthogonal to D and to
        // every outcome column after demeaning.
        let n = 8;
        let d = vec![1, 1, 0, 0, 1, 1, 0, 0];
        let w = DVector::from_vec(vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
        let base = DMatrix::from_fn(n, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 + if d[i] == 1 && j == 2 { 1.0 } else { 0.0 });
        // pair units (0,1),(2,3),… and give both the pair mean so w ⟂ columns
        let y = DMatrix::from_fn(n, 3, |i, j| {
            let a = i - i % 2;
            0.5 * (base[(a, j)] + base[(a + 1, j)])
        });
        let p = PanelData::new((0..n).map(|i| i.to_string()).collect(), vec![-1, 0, 1], y, Assignment::Binary(d), None).unwrap();
        let pw = with_covariates(&p, DMatrix::from_column_slice(n, 1, w.as_slice()));
        let a = did_estimate(&two_way_transform(&p).unwrap()).unwrap();
        let dp = fwl_residualize(&pw).unwrap();
        assert_eq!(dp.n_covariates, 1);
        let b = did_estimate(&dp).unwrap();
        assert_eq!(b.kind, EstimatorKind::Fwl);
        for (x, y) in a.beta.iter().zip(&b.beta) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn fwl_projection_annihilates_covariates() {
        let p = random_panel(5, 30, 4);
        let w = DMatrix::from_fn(30, 2, |i, k| ((i * (k + 3)) % 7) as f64 - 0.3 * k as f64);
        let pw = with_covariates(&p, w.clone());
        let dp = fwl_residualize(&pw).unwrap();
        let mut wd = w.clone();
        for mut col in wd.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
        }
        assert!((wd.transpose() * &dp.d_dot).amax() < 1e-10);
        assert!((wd.transpose() * &dp.y_dot).amax() < 1e-9);
    }

    #[test]
    fn fwl_errors() {
        let p = random_panel(5, 12, 4);
        let w = DMatrix::from_fn(12, 2, |i, k| (i as f64) * (k + 1) as f64);
        assert_eq!(fwl_residualize(&with_covariates(&p, w)).unwrap_err(), Error::RankDeficientCovariates);
        let d: Vec<f64> = p.treatment().unwrap().iter().map(|&v| v as f64).collect();
        let w = DMatrix::from_column_slice(12, 1, &d);
        assert_eq!(fwl_residualize(&with_covariates(&p, w)).unwrap_err(), Error::ZeroResidualTreatment);
    }

    fn staggered_panel(cohorts: Vec<Cohort>, tn: usize, t_pre: i64, seed: u64) -> PanelData {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, 1);
        let n = cohorts.len();
        let y = DMatrix::from_fn(n, tn, |_, _| rng.random_range(-2.0..2.0));
        let times = (0..tn as i64).map(|k| k - t_pre).collect();
        PanelData::new((0..n).map(|i| i.to_string()).collect(), times, y, Assignment::Cohorts(cohorts), None).unwrap()
    }

    #[test]
    fn single_group_at_zero_reduces_to_basic() {
        let cohorts: Vec<Cohort> = (0..10).map(|i| if i % 3 == 0 { Cohort::Treated(0) } else { Cohort::Never }).collect();
        let p = staggered_panel(cohorts.clone(), 6, 3, 2);
        let spec = StaggeredSpec::from_panel(&p).unwrap();
        assert_eq!(spec.weights, vec![1.0]);
        let s = staggered_estimate(&p, &spec).unwrap();

        let d: Vec<u8> = cohorts.iter().map(|c| u8::from(*c == Cohort::Treated(0))).collect();
        let b = p.with_treatment(d).unwrap();
        let e = estimate_binary(&b).unwrap();
        assert_eq!(s.aggregate.event_times, e.estimate.event_times);
        assert_eq!(s.aggregate.beta, e.estimate.beta);
        assert_eq!(s.aggregate_cov.cov, e.covariance.cov);
        assert_eq!(s.aggregate_influence, e.influence);
    }

    #[test]
    fn staggered_weights_and_window() {
        let mut cohorts = vec![Cohort::Never; 6];
        cohorts.extend([Cohort::Treated(-1); 3]);
        cohorts.extend([Cohort::Treated(1); 1]);
        let p = staggered_panel(cohorts, 8, 4, 3);
        let spec = StaggeredSpec::from_panel(&p).unwrap();
        assert_eq!(spec.groups, vec![-1, 1]);
        assert_eq!(spec.group_sizes, vec![3, 1]);
        assert_eq!(spec.weights, vec![0.75, 0.25]);
        // times −4..3: group −1 sees e ∈ [−3, 4], group 1 sees e ∈ [−5, 2]
        assert_eq!(spec.window, (-3, 2));
        let s = staggered_estimate(&p, &spec).unwrap();
        assert_eq!(s.aggregate.event_times, vec![-3, -2, -1, 0, 1, 2]);
        for (a, e) in s.aggregate.event_times.iter().enumerate() {
            let expected: f64 = s
                .groups
                .iter()
                .zip(&spec.weights)
                .map(|(g, w)| w * g.estimation.estimate.at(*e).unwrap())
                .sum();
            assert_relative_eq!(s.aggregate.beta[a], expected, epsilon = 1e-14);
        }
        assert_eq!(s.aggregate_cov.n_units, 10);
    }

    #[test]
    fn identical_group_curves_aggregate_to_that_curve() {
        // group 0 and group 1 units share one outcome path shifted by one period
        let tn = 7;
        let t_pre = 3i64;
        let never_paths = [[0.0, 0.1, 0.3, 0.2, 0.0, -0.1, 0.4], [0.2, 0.0, 0.1, 0.5, 0.3, 0.3, 0.0]];
        let effect = |e: i64| if e > 0 { e as f64 } else { 0.0 };
        let mut rows = Vec::new();
        let mut cohorts = Vec::new();
        for path in &never_paths {
            rows.push(path.to_vec());
            cohorts.push(Cohort::Never);
        }
        for g in [0i64, 1] {
            for shift in [0.0, 1.0] {
                let row: Vec<f64> = (0..tn)
                    .map(|j| {
                        let t = j as i64 - t_pre;
                        0.5 * (never_paths[0][j] + never_paths[1][j]) + shift + effect(t - g)
                    })
                    .collect();
                rows.push(row);
                cohorts.push(Cohort::Treated(g));
            }
        }
        let n = rows.len();
        let y = DMatrix::from_fn(n, tn, |i, j| rows[i][j]);
        let times = (0..tn as i64).map(|k| k - t_pre).collect();
        let p = PanelData::new((0..n).map(|i| i.to_string()).collect(), times, y, Assignment::Cohorts(cohorts), None).unwrap();
        let spec = StaggeredSpec::from_panel(&p).unwrap();
        let s = staggered_estimate(&p, &spec).unwrap();
        for (a, &e) in s.aggregate.event_times.iter().enumerate() {
            assert_relative_eq!(s.aggregate.beta[a], effect(e), epsilon = 1e-12);
        }
    }

    #[test]
    fn calendar_origin_does_not_matter() {
        let mut cohorts = vec![Cohort::Never; 5];
        cohorts.extend([Cohort::Treated(-1); 3]);
        cohorts.extend([Cohort::Treated(1); 2]);
        let p = staggered_panel(cohorts.clone(), 8, 4, 6);
        let shifted_cohorts: Vec<Cohort> = cohorts
            .iter()
            .map(|c| match c {
                Cohort::Treated(g) => Cohort::Treated(g + 2004),
                Cohort::Never => Cohort::Never,
            })
            .collect();
        let years = p.event_times().iter().map(|t| t + 2004).collect();
        let q = PanelData::new(
            (0..10).map(|i| i.to_string()).collect(),
            years,
            p.outcomes().clone(),
            Assignment::Cohorts(shifted_cohorts),
            None,
        )
        .unwrap();
        let a = staggered_estimate(&p, &StaggeredSpec::from_panel(&p).unwrap()).unwrap();
        let b = staggered_estimate(&q, &StaggeredSpec::from_panel(&q).unwrap()).unwrap();
        assert_eq!(a.aggregate.event_times, b.aggregate.event_times);
        assert_eq!(a.aggregate.beta, b.aggregate.beta);
        assert_eq!(a.aggregate_cov.cov, b.aggregate_cov.cov);
    }

    #[test]
    fn staggered_errors() {
        let cohorts = vec![Cohort::Never, Cohort::Never, Cohort::Treated(2), Cohort::Treated(2)];
        let p = staggered_panel(cohorts, 5, 2, 4);
        // times −2..2, g = 2 leaves no post-period
        assert_eq!(StaggeredSpec::from_panel(&p).unwrap_err(), Error::EmptyCommonWindow);
        let cohorts = vec![Cohort::Never, Cohort::Treated(0), Cohort::Treated(0)];
        let p = staggered_panel(cohorts, 3, 1, 4);
        assert_eq!(StaggeredSpec::for_groups(&p, &[0, 1]).unwrap_err(), Error::EmptyGroup(1));
        assert_eq!(StaggeredSpec::from_panel(&hand_panel()).unwrap_err(), Error::NotStaggeredDesign);
    }
}
