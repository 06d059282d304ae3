//! Balanced panel data: ingestion, validation and the cross-section demeaning
//! that feeds every estimator.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Treatment cohort of a unit in a staggered design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cohort {
    /// First treated after reference period `g` (calendar event time).
    Treated(i64),
    Never,
}

/// How units are assigned to treatment.
#[derive(Debug, Clone, PartialEq)]
pub enum Assignment {
    /// Binary treatment indicator per unit.
    Binary(Vec<u8>),
    /// Group (cohort) label per unit.
    Cohorts(Vec<Cohort>),
}

/// Time-invariant unit covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub names: Vec<String>,
    /// n × k
    pub values: DMatrix<f64>,
}

/// Balanced long panel with units sorted by label.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    unit_ids: Vec<String>,
    event_times: Vec<i64>,
    outcomes: DMatrix<f64>,
    assignment: Assignment,
    covariates: Option<Covariates>,
}

impl PanelData {
    /// Builds a panel, checking every invariant. `outcomes` is n × T with
    /// rows in `unit_ids` order and columns in `event_times` order.
    pub fn new(
        unit_ids: Vec<String>,
        event_times: Vec<i64>,
        outcomes: DMatrix<f64>,
        assignment: Assignment,
        covariates: Option<Covariates>,
    ) -> Result<Self> {
        let n = unit_ids.len();
        if outcomes.nrows() != n || outcomes.ncols() != event_times.len() {
            return Err(Error::DimensionMismatch(format!(
                "outcomes are {}x{}, expected {}x{}",
                outcomes.nrows(),
                outcomes.ncols(),
                n,
                event_times.len()
            )));
        }
        validate_times(&event_times, matches!(assignment, Assignment::Cohorts(_)))?;
        if outcomes.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("outcomes must be finite".into()));
        }
        match &assignment {
            Assignment::Binary(d) => {
                if d.len() != n {
                    return Err(Error::DimensionMismatch("treatment length".into()));
                }
                if let Some((i, v)) = d.iter().enumerate().find(|(_, v)| **v > 1) {
                    return Err(Error::NonBinaryTreatment {
                        unit: unit_ids[i].clone(),
                        value: v.to_string(),
                    });
                }
                let treated = d.iter().filter(|v| **v == 1).count();
                if treated == 0 || treated == n {
                    return Err(Error::NoOverlap);
                }
            }
            Assignment::Cohorts(g) => {
                if g.len() != n {
                    return Err(Error::DimensionMismatch("group length".into()));
                }
                if !g.contains(&Cohort::Never) {
                    return Err(Error::NoNeverTreated);
                }
                if !g.iter().any(|c| matches!(c, Cohort::Treated(_))) {
                    return Err(Error::NoOverlap);
                }
            }
        }
        if let Some(cov) = &covariates {
            if cov.values.nrows() != n || cov.values.ncols() != cov.names.len() {
                return Err(Error::DimensionMismatch("covariate matrix".into()));
            }
        }
        Ok(Self {
            unit_ids,
            event_times,
            outcomes,
            assignment,
            covariates,
        })
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn event_times(&self) -> &[i64] {
        &self.event_times
    }

    /// n × T outcome matrix.
    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.outcomes
    }

    pub fn assignment(&self) -> &Assignment {
        &self.assignment
    }

    pub fn covariates(&self) -> Option<&Covariates> {
        self.covariates.as_ref()
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_times(&self) -> usize {
        self.event_times.len()
    }

    pub fn t_pre(&self) -> i64 {
        -self.event_times[0]
    }

    pub fn t_post(&self) -> i64 {
        *self.event_times.last().unwrap()
    }

    /// Column index of reference period 0.
    pub fn ref_index(&self) -> usize {
        (-self.event_times[0]) as usize
    }

    /// Binary treatment indicators, if this is a binary design.
    pub fn treatment(&self) -> Option<&[u8]> {
        match &self.assignment {
            Assignment::Binary(d) => Some(d),
            Assignment::Cohorts(_) => None,
        }
    }

    pub fn cohorts(&self) -> Option<&[Cohort]> {
        match &self.assignment {
            Assignment::Cohorts(g) => Some(g),
            Assignment::Binary(_) => None,
        }
    }

    /// Copy of this panel with a different outcome matrix.
    pub fn with_outcomes(&self, outcomes: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.unit_ids.clone(),
            self.event_times.clone(),
            outcomes,
            self.assignment.clone(),
            self.covariates.clone(),
        )
    }

    /// Copy of this panel with a different binary treatment vector.
    pub fn with_treatment(&self, treatment: Vec<u8>) -> Result<Self> {
        Self::new(
            self.unit_ids.clone(),
            self.event_times.clone(),
            self.outcomes.clone(),
            Assignment::Binary(treatment),
            self.covariates.clone(),
        )
    }

    /// Copy of this panel with covariates attached.
    pub fn with_covariates(&self, covariates: Option<Covariates>) -> Result<Self> {
        Self::new(
            self.unit_ids.clone(),
            self.event_times.clone(),
            self.outcomes.clone(),
            self.assignment.clone(),
            covariates,
        )
    }
}

/// Binary designs need the reference period 0 with at least one period on
/// either side. Cohort designs use calendar time, so only two consecutive
/// periods are required there; the common event window is checked later.
fn validate_times(times: &[i64], staggered: bool) -> Result<()> {
    if times.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::NonConsecutiveTimes);
    }
    if staggered {
        if times.len() < 2 {
            return Err(Error::InsufficientPeriods { t_pre: 0, t_post: 0 });
        }
        return Ok(());
    }
    if !times.contains(&0) {
        return Err(Error::MissingReferencePeriod);
    }
    let t_pre = -times[0];
    let t_post = *times.last().unwrap();
    if t_pre < 1 || t_post < 1 {
        return Err(Error::InsufficientPeriods { t_pre, t_post });
    }
    Ok(())
}

/// Which column carries the treatment information.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentColumn {
    /// Binary 0/1 indicator.
    Treat(String),
    /// Cohort reference period; `inf`, `never`, `NA` or empty for never-treated.
    Group(String),
}

/// Column-name mapping for long-format CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub unit: String,
    pub time: String,
    pub outcome: String,
    pub assignment: AssignmentColumn,
    #[serde(default)]
    pub covariates: Vec<String>,
}

impl CsvSchema {
    pub fn binary(unit: &str, time: &str, outcome: &str, treat: &str) -> Self {
        Self {
            unit: unit.into(),
            time: time.into(),
            outcome: outcome.into(),
            assignment: AssignmentColumn::Treat(treat.into()),
            covariates: Vec::new(),
        }
    }
}

/// Sort key that orders integer labels numerically and everything else
/// lexicographically after them.
fn unit_key(label: &str) -> (u8, i128, String) {
    match label.trim().parse::<i128>() {
        Ok(v) => (0, v, label.to_string()),
        Err(_) => (1, 0, label.to_string()),
    }
}

fn parse_cohort(raw: &str, line: u64) -> Result<Cohort> {
    let s = raw.trim();
    match s.to_ascii_lowercase().as_str() {
        "" | "inf" | "+inf" | "never" | "na" | "nan" => Ok(Cohort::Never),
        _ => s.parse::<i64>().map(Cohort::Treated).map_err(|_| Error::Parse {
            what: "group",
            value: raw.to_string(),
            line,
        }),
    }
}

struct UnitRows {
    cells: BTreeMap<i64, f64>,
    assignment: String,
    covariates: Vec<f64>,
}

/// Reads a long-format CSV panel from any reader.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<PanelData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let unit_col = col(&schema.unit)?;
    let time_col = col(&schema.time)?;
    let outcome_col = col(&schema.outcome)?;
    let assign_col = match &schema.assignment {
        AssignmentColumn::Treat(c) | AssignmentColumn::Group(c) => col(c)?,
    };
    let cov_cols = schema
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;

    let mut units: BTreeMap<(u8, i128, String), UnitRows> = BTreeMap::new();
    let mut times = BTreeSet::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(row_idx as u64 + 2);
        let field = |i: usize| record.get(i).unwrap_or("");
        let unit = field(unit_col).to_string();
        let time: i64 = field(time_col).parse().map_err(|_| Error::Parse {
            what: "time",
            value: field(time_col).to_string(),
            line,
        })?;
        let y: f64 = field(outcome_col).parse().map_err(|_| Error::Parse {
            what: "outcome",
            value: field(outcome_col).to_string(),
            line,
        })?;
        if !y.is_finite() {
            return Err(Error::Parse {
                what: "outcome",
                value: field(outcome_col).to_string(),
                line,
            });
        }
        let assignment = field(assign_col).to_string();
        let covs = cov_cols
            .iter()
            .zip(&schema.covariates)
            .map(|(&c, _)| {
                field(c).parse::<f64>().map_err(|_| Error::Parse {
                    what: "covariate",
                    value: field(c).to_string(),
                    line,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        times.insert(time);
        let entry = units.entry(unit_key(&unit)).or_insert_with(|| UnitRows {
            cells: BTreeMap::new(),
            assignment: assignment.clone(),
            covariates: covs.clone(),
        });
        if entry.cells.insert(time, y).is_some() {
            return Err(Error::DuplicateCell { unit, time });
        }
        if entry.assignment != assignment {
            return Err(Error::TimeVaryingTreatment(unit));
        }
        if let Some(k) = entry
            .covariates
            .iter()
            .zip(&covs)
            .position(|(a, b)| a.to_bits() != b.to_bits())
        {
            return Err(Error::TimeVaryingCovariate {
                unit,
                name: schema.covariates[k].clone(),
            });
        }
    }

    let event_times: Vec<i64> = times.into_iter().collect();
    if event_times.is_empty() {
        return Err(Error::InvalidArgument("panel has no rows".into()));
    }
    validate_times(&event_times, matches!(schema.assignment, AssignmentColumn::Group(_)))?;

    let n = units.len();
    let t_len = event_times.len();
    let mut outcomes = DMatrix::zeros(n, t_len);
    let mut unit_ids = Vec::with_capacity(n);
    let mut binary = Vec::new();
    let mut cohorts = Vec::new();
    let mut cov_values = DMatrix::zeros(n, schema.covariates.len());
    for (i, ((_, _, label), rows)) in units.into_iter().enumerate() {
        for (j, t) in event_times.iter().enumerate() {
            match rows.cells.get(t) {
                Some(&y) => outcomes[(i, j)] = y,
                None => {
                    return Err(Error::UnbalancedPanel {
                        unit: label,
                        time: *t,
                    })
                }
            }
        }
        match &schema.assignment {
            AssignmentColumn::Treat(_) => {
                let v: f64 = rows.assignment.parse().map_err(|_| Error::NonBinaryTreatment {
                    unit: label.clone(),
                    value: rows.assignment.clone(),
                })?;
                if v == 0.0 {
                    binary.push(0)
                } else if v == 1.0 {
                    binary.push(1)
                } else {
                    return Err(Error::NonBinaryTreatment {
                        unit: label,
                        value: rows.assignment,
                    });
                }
            }
            AssignmentColumn::Group(_) => cohorts.push(parse_cohort(&rows.assignment, 0)?),
        }
        for (k, v) in rows.covariates.iter().enumerate() {
            cov_values[(i, k)] = *v;
        }
        unit_ids.push(label);
    }
    let assignment = match schema.assignment {
        AssignmentColumn::Treat(_) => Assignment::Binary(binary),
        AssignmentColumn::Group(_) => Assignment::Cohorts(cohorts),
    };
    let covariates = (!schema.covariates.is_empty()).then(|| Covariates {
        names: schema.covariates.clone(),
        values: cov_values,
    });
    PanelData::new(unit_ids, event_times, outcomes, assignment, covariates)
}

/// Reads a long-format CSV panel from a file.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<PanelData> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file), schema)
}

/// Writes `panel` in the long format accepted by [`read_csv`].
pub fn write_csv<W: Write>(panel: &PanelData, writer: W, schema: &CsvSchema) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let assign_name = match &schema.assignment {
        AssignmentColumn::Treat(c) | AssignmentColumn::Group(c) => c.clone(),
    };
    let mut header = vec![
        schema.unit.clone(),
        schema.time.clone(),
        schema.outcome.clone(),
        assign_name,
    ];
    let cov_names: Vec<String> = panel
        .covariates()
        .map(|c| c.names.clone())
        .unwrap_or_default();
    header.extend(cov_names.iter().cloned());
    w.write_record(&header)?;
    for (i, unit) in panel.unit_ids().iter().enumerate() {
        let assign = match panel.assignment() {
            Assignment::Binary(d) => d[i].to_string(),
            Assignment::Cohorts(g) => match g[i] {
                Cohort::Treated(g) => g.to_string(),
                Cohort::Never => "inf".to_string(),
            },
        };
        for (j, t) in panel.event_times().iter().enumerate() {
            let mut rec = vec![
                unit.clone(),
                t.to_string(),
                panel.outcomes()[(i, j)].to_string(),
                assign.clone(),
            ];
            if let Some(c) = panel.covariates() {
                rec.extend((0..c.names.len()).map(|k| c.values[(i, k)].to_string()));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Cross-section demeaned treatment and outcomes.
///
/// For the two-way transform these are Ḋ and Ẏ; after covariate
/// residualization they hold the projected D̃ and Ỹ instead.
#[derive(Debug, Clone, PartialEq)]
pub struct DemeanedPanel {
    pub event_times: Vec<i64>,
    /// Length n.
    pub d_dot: DVector<f64>,
    /// n × T.
    pub y_dot: DMatrix<f64>,
    /// Number of covariates partialled out (0 for the plain transform).
    pub n_covariates: usize,
}

impl DemeanedPanel {
    pub fn n_units(&self) -> usize {
        self.d_dot.len()
    }

    pub fn ref_index(&self) -> usize {
        (-self.event_times[0]) as usize
    }
}

/// Subtracts column means from `y` and the mean from `d`.
pub(crate) fn demean(d: &[f64], y: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = d.len() as f64;
    let d_mean = d.iter().sum::<f64>() / n;
    let d_dot = DVector::from_iterator(d.len(), d.iter().map(|v| v - d_mean));
    let mut y_dot = y.clone();
    for mut col in y_dot.column_iter_mut() {
        let m = col.sum() / n;
        col.add_scalar_mut(-m);
    }
    (d_dot, y_dot)
}

/// Two-way transform of a binary design.
///
/// Only the cross-section demeaning is materialised: the unit-level time
/// averages cancel in every contrast against the reference period.
pub fn two_way_transform(data: &PanelData) -> Result<DemeanedPanel> {
    let d = data.treatment().ok_or(Error::NotBinaryDesign)?;
    let d: Vec<f64> = d.iter().map(|&v| v as f64).collect();
    let (d_dot, y_dot) = demean(&d, data.outcomes());
    Ok(DemeanedPanel {
        event_times: data.event_times().to_vec(),
        d_dot,
        y_dot,
        n_covariates: 0,
    })
}
