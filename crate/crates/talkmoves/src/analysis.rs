//! Outcome regressions: OLS of a student-outcome variable on a talk move's
//! hourly rate plus instructor and section covariates, with standard errors
//! clustered at the instructor level.
//!
//! Conventions, documented because the variance estimator has several common
//! variants: the cluster-robust sandwich uses the CR1 small-sample factor
//! `(G/(G-1)) * ((N-1)/(N-k))` and two-sided p-values from a t distribution
//! with `G-1` degrees of freedom. With singleton clusters this reduces
//! exactly to HC1.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::annotation::TalkMove;
use crate::inference::SessionFeatures;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("design matrix is rank deficient; collinear columns: {0:?}")]
    RankDeficient(Vec<String>),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("need at least 2 clusters, found {0}")]
    TooFewClusters(usize),
    #[error("p-value {0} outside [0, 1]")]
    Domain(f64),
    #[error("join error: {0}")]
    Join(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Instructor demographic controls (the T matrix). `age_squared` is always
/// derived as `age * age`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstructorCovariates {
    pub female: f64,
    pub first_time: f64,
    pub in_us: f64,
    pub age: f64,
}

impl InstructorCovariates {
    pub fn age_squared(&self) -> f64 {
        self.age * self.age
    }
}

/// Section composition controls (the S matrix); each field is a proportion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionCovariates {
    pub prop_female: f64,
    pub prop_us: f64,
    pub prop_age_22_25: f64,
    pub prop_age_26_30: f64,
    pub prop_age_31_35: f64,
    pub prop_age_36_40: f64,
    pub prop_age_40_plus: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    SubsequentAttendance,
    HelpfulnessRating,
    AssignmentsCompleted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisUnit {
    Transcript,
    Student,
}

impl Outcome {
    pub const ALL: [Outcome; 3] = [
        Outcome::SubsequentAttendance,
        Outcome::HelpfulnessRating,
        Outcome::AssignmentsCompleted,
    ];

    pub fn column(&self) -> &'static str {
        match self {
            Outcome::SubsequentAttendance => "subsequent_attendance",
            Outcome::HelpfulnessRating => "helpfulness_rating",
            Outcome::AssignmentsCompleted => "assignments_completed",
        }
    }

    /// Attendance is measured per transcript; ratings and assignment
    /// completions per student.
    pub fn unit(&self) -> AnalysisUnit {
        match self {
            Outcome::SubsequentAttendance => AnalysisUnit::Transcript,
            _ => AnalysisUnit::Student,
        }
    }
}

/// One (outcome, predictor move) regression to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionSpec {
    pub outcome: Outcome,
    pub predictor_move: TalkMove,
}

/// Full fit output for one regression.
#[derive(Debug, Clone)]
pub struct RegressionResult {
    pub coefficients: BTreeMap<String, f64>,
    pub residuals: Vec<f64>,
    pub clustered_se: BTreeMap<String, f64>,
    pub t_stats: BTreeMap<String, f64>,
    pub p_values: BTreeMap<String, f64>,
    pub stars: BTreeMap<String, &'static str>,
    pub n_obs: usize,
    pub n_clusters: usize,
    /// Set when every residual is zero; SEs are then 0 and p-values NaN.
    pub degenerate_fit: bool,
}

#[derive(Debug)]
pub struct OlsFit {
    /// Design matrix with the intercept column appended.
    pub design: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub coefficients: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
}

/// Least-squares fit via QR. An intercept column is appended automatically;
/// the caller's columns must be linearly independent of it and each other.
pub fn fit_ols(
    x: &DMatrix<f64>,
    column_names: &[String],
    y: &DVector<f64>,
) -> Result<OlsFit, AnalysisError> {
    let n = x.nrows();
    if column_names.len() != x.ncols() {
        return Err(AnalysisError::DimensionMismatch(format!(
            "{} column names for {} columns",
            column_names.len(),
            x.ncols()
        )));
    }
    if y.len() != n {
        return Err(AnalysisError::DimensionMismatch(format!(
            "{} outcomes for {n} rows",
            y.len()
        )));
    }
    let k = x.ncols() + 1;
    if n <= k {
        return Err(AnalysisError::DimensionMismatch(format!(
            "{n} rows is not enough for {k} parameters"
        )));
    }
    let mut design = DMatrix::zeros(n, k);
    design.view_mut((0, 0), (n, x.ncols())).copy_from(x);
    design.column_mut(k - 1).fill(1.0);
    let mut names: Vec<String> = column_names.to_vec();
    names.push("intercept".to_string());

    check_rank(&design, &names)?;

    let qr = design.clone().qr();
    let qty = qr.q().transpose() * y;
    let coefficients = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| AnalysisError::RankDeficient(names.clone()))?;
    let fitted = &design * &coefficients;
    let residuals = y - &fitted;
    Ok(OlsFit {
        design,
        column_names: names,
        coefficients,
        fitted,
        residuals,
    })
}

/// Greedy collinearity check that can name the offending columns: a column is
/// collinear when its residual after projection onto the previously accepted
/// columns is negligible relative to its own norm.
fn check_rank(design: &DMatrix<f64>, names: &[String]) -> Result<(), AnalysisError> {
    let n = design.nrows();
    let tol = 1e-10;
    let mut accepted: Vec<usize> = Vec::new();
    let mut collinear: Vec<String> = Vec::new();
    for j in 0..design.ncols() {
        let col = design.column(j).into_owned();
        let norm = col.norm();
        if norm == 0.0 {
            collinear.push(names[j].clone());
            continue;
        }
        if accepted.is_empty() {
            accepted.push(j);
            continue;
        }
        let mut basis = DMatrix::zeros(n, accepted.len());
        for (bi, &aj) in accepted.iter().enumerate() {
            basis.column_mut(bi).copy_from(&design.column(aj));
        }
        let qr = basis.qr();
        let proj = qr.q() * (qr.q().transpose() * &col);
        let resid = (&col - proj).norm();
        if resid < tol * norm.max(1.0) {
            collinear.push(names[j].clone());
        } else {
            accepted.push(j);
        }
    }
    if collinear.is_empty() {
        Ok(())
    } else {
        Err(AnalysisError::RankDeficient(collinear))
    }
}

pub struct ClusteredInference {
    pub se: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub n_clusters: usize,
    pub degenerate: bool,
}

/// Cluster-robust sandwich variance:
/// `(X'X)^-1 (sum_g X_g' e_g e_g' X_g) (X'X)^-1`, scaled by the CR1 factor
/// `(G/(G-1)) * ((N-1)/(N-k))`. P-values are two-sided from t(G-1).
pub fn cluster_robust_se(
    fit: &OlsFit,
    cluster_ids: &[String],
) -> Result<ClusteredInference, AnalysisError> {
    let n = fit.design.nrows();
    let k = fit.design.ncols();
    if cluster_ids.len() != n {
        return Err(AnalysisError::DimensionMismatch(format!(
            "{} cluster ids for {n} rows",
            cluster_ids.len()
        )));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, id) in cluster_ids.iter().enumerate() {
        groups.entry(id).or_default().push(i);
    }
    let g = groups.len();
    if g < 2 {
        return Err(AnalysisError::TooFewClusters(g));
    }

    let xtx = fit.design.transpose() * &fit.design;
    let bread = xtx
        .try_inverse()
        .ok_or_else(|| AnalysisError::RankDeficient(fit.column_names.clone()))?;

    let mut meat = DMatrix::zeros(k, k);
    for rows in groups.values() {
        let mut score: DVector<f64> = DVector::zeros(k);
        for &i in rows {
            let e = fit.residuals[i];
            for j in 0..k {
                score[j] += fit.design[(i, j)] * e;
            }
        }
        meat += &score * score.transpose();
    }

    let factor =
        (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n as f64 - k as f64));
    let vcov = factor * &bread * meat * &bread;

    // residuals from an exact fit carry rounding noise, so compare against
    // the magnitude of the fitted values rather than literal zero
    let scale = fit.fitted.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
    let degenerate = fit.residuals.iter().all(|&e| e.abs() <= 1e-10 * scale);
    let dist = StudentsT::new(0.0, 1.0, (g - 1) as f64)
        .map_err(|e| AnalysisError::DimensionMismatch(e.to_string()))?;
    let mut se = Vec::with_capacity(k);
    let mut t_stats = Vec::with_capacity(k);
    let mut p_values = Vec::with_capacity(k);
    for j in 0..k {
        let s = vcov[(j, j)].max(0.0).sqrt();
        se.push(s);
        if !degenerate && s > 0.0 {
            let t = fit.coefficients[j] / s;
            t_stats.push(t);
            p_values.push(2.0 * (1.0 - dist.cdf(t.abs())));
        } else {
            t_stats.push(f64::NAN);
            p_values.push(f64::NAN);
        }
    }
    Ok(ClusteredInference {
        se,
        t_stats,
        p_values,
        n_clusters: g,
        degenerate,
    })
}

/// Significance stars: `**` below 0.01, `*` below 0.05, strict inequalities.
pub fn significance_stars(p: f64) -> Result<&'static str, AnalysisError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(AnalysisError::Domain(p));
    }
    Ok(if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    })
}

/// One row of the outcomes/covariates table. Missing fields stay `None` and
/// cause listwise deletion per regression cell.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub session_id: String,
    pub instructor_id: String,
    #[serde(default)]
    pub student_id: Option<String>,
    #[serde(default)]
    pub subsequent_attendance: Option<f64>,
    #[serde(default)]
    pub helpfulness_rating: Option<f64>,
    #[serde(default)]
    pub assignments_completed: Option<f64>,
    #[serde(default)]
    pub female: Option<f64>,
    #[serde(default)]
    pub first_time: Option<f64>,
    #[serde(default)]
    pub in_us: Option<f64>,
    #[serde(default)]
    pub age: Option<f64>,
    #[serde(default)]
    pub prop_female: Option<f64>,
    #[serde(default)]
    pub prop_us: Option<f64>,
    #[serde(default)]
    pub prop_age_22_25: Option<f64>,
    #[serde(default)]
    pub prop_age_26_30: Option<f64>,
    #[serde(default)]
    pub prop_age_31_35: Option<f64>,
    #[serde(default)]
    pub prop_age_36_40: Option<f64>,
    #[serde(default)]
    pub prop_age_40_plus: Option<f64>,
}

impl OutcomeRow {
    fn outcome_value(&self, outcome: Outcome) -> Option<f64> {
        match outcome {
            Outcome::SubsequentAttendance => self.subsequent_attendance,
            Outcome::HelpfulnessRating => self.helpfulness_rating,
            Outcome::AssignmentsCompleted => self.assignments_completed,
        }
    }

    fn covariates(&self) -> Option<(InstructorCovariates, SectionCovariates)> {
        Some((
            InstructorCovariates {
                female: self.female?,
                first_time: self.first_time?,
                in_us: self.in_us?,
                age: self.age?,
            },
            SectionCovariates {
                prop_female: self.prop_female?,
                prop_us: self.prop_us?,
                prop_age_22_25: self.prop_age_22_25?,
                prop_age_26_30: self.prop_age_26_30?,
                prop_age_31_35: self.prop_age_31_35?,
                prop_age_36_40: self.prop_age_36_40?,
                prop_age_40_plus: self.prop_age_40_plus?,
            },
        ))
    }
}

pub fn read_outcomes_csv(path: &Path) -> Result<Vec<OutcomeRow>, AnalysisError> {
    let mut reader = csv::Reader::from_reader(File::open(path)?);
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn write_outcomes_csv(rows: &[OutcomeRow], path: &Path) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub const COVARIATE_NAMES: [&str; 12] = [
    "female",
    "first_time",
    "in_us",
    "age",
    "age_squared",
    "prop_female",
    "prop_us",
    "prop_age_22_25",
    "prop_age_26_30",
    "prop_age_31_35",
    "prop_age_36_40",
    "prop_age_40_plus",
];

/// One entry of the regression table: either a fitted cell or a recorded
/// failure. The stored coefficient is unscaled (per move per hour); the
/// `times_ten` column is a presentation convenience only.
#[derive(Debug, Clone)]
pub struct TableCell {
    pub talk_move: TalkMove,
    pub outcome: Outcome,
    pub dropped_rows: usize,
    pub result: Result<CellResult, String>,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub coefficient: f64,
    pub clustered_se: f64,
    pub p_value: f64,
    pub stars: &'static str,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub times_ten: f64,
    pub full: RegressionResultSummary,
}

/// Named coefficients and SEs for the full model, kept for reporting.
#[derive(Debug, Clone)]
pub struct RegressionResultSummary {
    pub coefficients: BTreeMap<String, f64>,
    pub clustered_se: BTreeMap<String, f64>,
    pub p_values: BTreeMap<String, f64>,
}

/// Fit one regression: outcome on the move's hourly rate plus all covariates,
/// clustered on instructor.
pub fn fit_cell(
    features: &BTreeMap<String, &SessionFeatures>,
    rows: &[OutcomeRow],
    spec: RegressionSpec,
) -> Result<(RegressionResult, usize), AnalysisError> {
    let rate_name = format!("rate_{}", spec.predictor_move);
    let mut x_rows: Vec<[f64; 13]> = Vec::new();
    let mut y = Vec::new();
    let mut clusters = Vec::new();
    let mut dropped = 0usize;
    for row in rows {
        let usable = (|| {
            let feats = features.get(row.session_id.as_str())?;
            let rate = feats.rate_per_hour.get(&spec.predictor_move)?;
            let outcome = row.outcome_value(spec.outcome)?;
            let (t, s) = row.covariates()?;
            Some((
                [
                    *rate,
                    t.female,
                    t.first_time,
                    t.in_us,
                    t.age,
                    t.age_squared(),
                    s.prop_female,
                    s.prop_us,
                    s.prop_age_22_25,
                    s.prop_age_26_30,
                    s.prop_age_31_35,
                    s.prop_age_36_40,
                    s.prop_age_40_plus,
                ],
                outcome,
            ))
        })();
        match usable {
            Some((xs, outcome)) => {
                x_rows.push(xs);
                y.push(outcome);
                clusters.push(row.instructor_id.clone());
            }
            None => dropped += 1,
        }
    }
    if x_rows.is_empty() {
        return Err(AnalysisError::Join(format!(
            "no rows joined for {} x {:?}",
            spec.predictor_move, spec.outcome
        )));
    }

    let n = x_rows.len();
    let mut x = DMatrix::zeros(n, 13);
    for (i, row) in x_rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    let mut names = vec![rate_name];
    names.extend(COVARIATE_NAMES.iter().map(|s| s.to_string()));
    let y = DVector::from_vec(y);

    let fit = fit_ols(&x, &names, &y)?;
    let inference = cluster_robust_se(&fit, &clusters)?;

    let mut coefficients = BTreeMap::new();
    let mut clustered_se = BTreeMap::new();
    let mut t_stats = BTreeMap::new();
    let mut p_values = BTreeMap::new();
    let mut stars = BTreeMap::new();
    for (j, name) in fit.column_names.iter().enumerate() {
        coefficients.insert(name.clone(), fit.coefficients[j]);
        clustered_se.insert(name.clone(), inference.se[j]);
        t_stats.insert(name.clone(), inference.t_stats[j]);
        let p = inference.p_values[j];
        p_values.insert(name.clone(), p);
        stars.insert(name.clone(), if p.is_nan() { "" } else { significance_stars(p)? });
    }
    Ok((
        RegressionResult {
            coefficients,
            residuals: fit.residuals.iter().copied().collect(),
            clustered_se,
            t_stats,
            p_values,
            stars,
            n_obs: n,
            n_clusters: inference.n_clusters,
            degenerate_fit: inference.degenerate,
        },
        dropped,
    ))
}

/// Run one independent regression per (move, outcome) cell. A failing cell is
/// recorded in place; the table is still emitted.
pub fn run_table(
    features: &[SessionFeatures],
    rows: &[OutcomeRow],
    specs: &[RegressionSpec],
) -> Vec<TableCell> {
    let by_session: BTreeMap<String, &SessionFeatures> = features
        .iter()
        .map(|f| (f.session_id.clone(), f))
        .collect();
    specs
        .iter()
        .map(|spec| {
            let rate_name = format!("rate_{}", spec.predictor_move);
            match fit_cell(&by_session, rows, *spec) {
                Ok((result, dropped)) => {
                    let coefficient = result.coefficients[&rate_name];
                    TableCell {
                        talk_move: spec.predictor_move,
                        outcome: spec.outcome,
                        dropped_rows: dropped,
                        result: Ok(CellResult {
                            coefficient,
                            clustered_se: result.clustered_se[&rate_name],
                            p_value: result.p_values[&rate_name],
                            stars: result.stars[&rate_name],
                            n_obs: result.n_obs,
                            n_clusters: result.n_clusters,
                            times_ten: coefficient * 10.0,
                            full: RegressionResultSummary {
                                coefficients: result.coefficients,
                                clustered_se: result.clustered_se,
                                p_values: result.p_values,
                            },
                        }),
                    }
                }
                Err(e) => TableCell {
                    talk_move: spec.predictor_move,
                    outcome: spec.outcome,
                    dropped_rows: 0,
                    result: Err(e.to_string()),
                },
            }
        })
        .collect()
}

/// The default 15-cell grid: five core moves by three outcomes.
pub fn default_specs() -> Vec<RegressionSpec> {
    let mut specs = Vec::new();
    for m in TalkMove::CORE {
        for outcome in Outcome::ALL {
            specs.push(RegressionSpec {
                outcome,
                predictor_move: m,
            });
        }
    }
    specs
}

pub fn write_table_csv(cells: &[TableCell], path: &Path) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record([
        "move",
        "outcome",
        "coefficient",
        "stars",
        "clustered_se",
        "p_value",
        "coefficient_x10",
        "n_obs",
        "n_clusters",
        "dropped_rows",
        "error",
    ])?;
    for cell in cells {
        match &cell.result {
            Ok(r) => w.write_record([
                cell.talk_move.name().to_string(),
                cell.outcome.column().to_string(),
                format!("{}", r.coefficient),
                r.stars.to_string(),
                format!("{}", r.clustered_se),
                format!("{}", r.p_value),
                format!("{}", r.times_ten),
                r.n_obs.to_string(),
                r.n_clusters.to_string(),
                cell.dropped_rows.to_string(),
                String::new(),
            ])?,
            Err(e) => w.write_record([
                cell.talk_move.name().to_string(),
                cell.outcome.column().to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                cell.dropped_rows.to_string(),
                e.clone(),
            ])?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Aligned plain-text table: rows are moves, columns are outcomes, stars
/// attached to coefficients.
pub fn format_table_text(cells: &[TableCell]) -> String {
    let mut grid: BTreeMap<TalkMove, BTreeMap<Outcome, String>> = BTreeMap::new();
    for cell in cells {
        let text = match &cell.result {
            Ok(r) => format!("{:.3}{}", r.coefficient, r.stars),
            Err(_) => "failed".to_string(),
        };
        grid.entry(cell.talk_move).or_default().insert(cell.outcome, text);
    }
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>14} {:>14} {:>14}\n",
        "talk move", "attendance", "rating", "assignments"
    ));
    for (m, row) in grid {
        out.push_str(&format!(
            "{:<16} {:>14} {:>14} {:>14}\n",
            m.name(),
            row.get(&Outcome::SubsequentAttendance).cloned().unwrap_or_default(),
            row.get(&Outcome::HelpfulnessRating).cloned().unwrap_or_default(),
            row.get(&Outcome::AssignmentsCompleted).cloned().unwrap_or_default(),
        ));
    }
    out
}
