//! Regression design assembly and fixed-effects within transformations.
//!
//! A [`RawDesign`] pairs each panel observation with its regressor vector
//! (moment features, optionally region coordinates). The within
//! transformation absorbs the chosen fixed effects by demeaning the response
//! and every regressor; on unbalanced panels the two-way transform is
//! computed by alternating group demeaning until the group means vanish.

use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::MomentFeatures;
use crate::panel::{PanelDataset, Year};
use crate::Scalar;

/// Which fixed effects the model absorbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeKind {
    /// No fixed effects; the design carries an explicit constant column.
    Pooled,
    /// One intercept per region.
    Region,
    /// One intercept per year.
    Time,
    /// Region and year intercepts.
    TwoWay,
}

impl FeKind {
    /// Number of intercept parameters the transform absorbs, given the
    /// distinct region and year counts of the data.
    pub fn absorbed_params(self, n_regions: usize, n_years: usize) -> usize {
        match self {
            FeKind::Pooled => 0,
            FeKind::Region => n_regions,
            FeKind::Time => n_years,
            // One intercept is redundant when both groups are present.
            FeKind::TwoWay => n_regions + n_years - 1,
        }
    }
}

/// One design row; `x` has one entry per named column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRow<S> {
    pub region_id: String,
    pub year: Year,
    pub y: S,
    pub x: Vec<S>,
}

fn validate_rows<S: Scalar>(rows: &[DesignRow<S>], n_columns: usize) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::validation("design has no rows"));
    }
    let mut seen = BTreeSet::new();
    for row in rows {
        if row.x.len() != n_columns {
            return Err(Error::Validation(format!(
                "design row ({}, {}) has {} regressors, expected {}",
                row.region_id,
                row.year,
                row.x.len(),
                n_columns
            )));
        }
        if !row.y.is_finite() || row.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite design entry for ({}, {})",
                row.region_id, row.year
            )));
        }
        if !seen.insert((row.region_id.clone(), row.year)) {
            return Err(Error::Validation(format!(
                "duplicate design row ({}, {})",
                row.region_id, row.year
            )));
        }
    }
    Ok(())
}

fn sort_rows<S>(rows: &mut [DesignRow<S>]) {
    rows.sort_by(|a, b| (&a.region_id, a.year).cmp(&(&b.region_id, b.year)));
}

/// An untransformed design: response and substantive regressors per
/// observed region-year, plus the fixed-effect specification to absorb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDesign<S> {
    kind: FeKind,
    column_names: Vec<String>,
    n_moment_inputs: usize,
    rows: Vec<DesignRow<S>>,
}

impl<S: Scalar> RawDesign<S> {
    pub fn new(
        kind: FeKind,
        column_names: Vec<String>,
        n_moment_inputs: usize,
        mut rows: Vec<DesignRow<S>>,
    ) -> Result<Self> {
        if column_names.is_empty() {
            return Err(Error::validation("design has no regressor columns"));
        }
        if n_moment_inputs == 0 || n_moment_inputs > column_names.len() {
            return Err(Error::validation(
                "moment input count must be in 1..=number of columns",
            ));
        }
        sort_rows(&mut rows);
        validate_rows(&rows, column_names.len())?;
        Ok(RawDesign {
            kind,
            column_names,
            n_moment_inputs,
            rows,
        })
    }

    pub fn kind(&self) -> FeKind {
        self.kind
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// How many leading columns are moment features (the rest are
    /// coordinates or other covariates).
    pub fn n_moment_inputs(&self) -> usize {
        self.n_moment_inputs
    }

    pub fn rows(&self) -> &[DesignRow<S>] {
        &self.rows
    }
}

/// Options for [`assemble_design`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblyOptions {
    pub fe: FeKind,
    /// Append region latitude and longitude as regressors.
    pub include_coords: bool,
    /// Error out on panel/feature mismatches instead of reporting them.
    pub strict: bool,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            fe: FeKind::TwoWay,
            include_coords: false,
            strict: false,
        }
    }
}

/// Cells dropped while joining the panel with the feature table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct AssemblyReport {
    pub n_matched: usize,
    /// Panel observations with no feature row.
    pub obs_without_features: Vec<(String, Year)>,
    /// Feature rows with no panel observation.
    pub features_without_obs: Vec<(String, Year)>,
}

/// Joins panel observations with moment features on (region, year).
///
/// Only cells present on both sides become design rows; one-sided cells are
/// listed in the report, or rejected when `strict` is set.
pub fn assemble_design<S: Scalar>(
    panel: &PanelDataset<S>,
    features: &MomentFeatures<S>,
    options: &AssemblyOptions,
) -> Result<(RawDesign<S>, AssemblyReport)> {
    let mut report = AssemblyReport::default();
    let mut rows = Vec::new();
    let mut matched: BTreeSet<(String, Year)> = BTreeSet::new();
    for obs in panel.observations() {
        let Some(moments) = features.get(&obs.region_id, obs.year) else {
            report
                .obs_without_features
                .push((obs.region_id.clone(), obs.year));
            continue;
        };
        let mut x = moments.to_vec();
        if options.include_coords {
            // Panel invariants guarantee the metadata row exists.
            let meta = panel
                .region_meta(&obs.region_id)
                .expect("observation region has metadata");
            x.push(meta.latitude);
            x.push(meta.longitude);
        }
        matched.insert((obs.region_id.clone(), obs.year));
        rows.push(DesignRow {
            region_id: obs.region_id.clone(),
            year: obs.year,
            y: obs.growth,
            x,
        });
    }
    for feature_row in features.rows() {
        let key = (feature_row.region_id.clone(), feature_row.year);
        if !matched.contains(&key) {
            report.features_without_obs.push(key);
        }
    }
    report.n_matched = rows.len();

    if options.strict
        && (!report.obs_without_features.is_empty() || !report.features_without_obs.is_empty())
    {
        return Err(Error::Validation(format!(
            "panel/feature mismatch: {} observations without features, {} features without observations",
            report.obs_without_features.len(),
            report.features_without_obs.len()
        )));
    }
    if rows.is_empty() {
        return Err(Error::validation(
            "no panel observation has matching features",
        ));
    }

    let mut column_names: Vec<String> = (1..=features.k_max()).map(|k| format!("m{k}")).collect();
    if options.include_coords {
        column_names.push("lat".to_string());
        column_names.push("lon".to_string());
    }
    let design = RawDesign::new(options.fe, column_names, features.k_max(), rows)?;
    Ok((design, report))
}

/// Algorithm for absorbing two-way fixed effects on unbalanced panels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoWayAlgorithm {
    /// Alternate region and year demeaning until all group means vanish.
    /// Exact on unbalanced panels.
    Iterated,
    /// `v - mean_region - mean_year + mean_overall` in one pass. Exact only
    /// on balanced panels.
    SinglePass,
}

/// Options for [`within_transform_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WithinOptions<S> {
    pub algorithm: TwoWayAlgorithm,
    /// Convergence tolerance on group means, relative to column magnitude.
    pub tol: S,
    pub max_sweeps: usize,
}

impl<S: Scalar> Default for WithinOptions<S> {
    fn default() -> Self {
        WithinOptions {
            algorithm: TwoWayAlgorithm::Iterated,
            tol: S::c(1e-10),
            max_sweeps: 1000,
        }
    }
}

/// A design after absorbing fixed effects.
///
/// For pooled designs an explicit `const` column is appended (the within
/// transform of the other kinds removes any intercept instead). Rows stay
/// sorted by (region, year).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedDesign<S> {
    kind: FeKind,
    column_names: Vec<String>,
    n_moment_inputs: usize,
    has_constant: bool,
    n_regions: usize,
    n_years: usize,
    rows: Vec<DesignRow<S>>,
}

impl<S: Scalar> TransformedDesign<S> {
    /// Builds a transformed design directly from rows, for callers that
    /// prepare regression inputs themselves (e.g. plain nonlinear regression
    /// without any panel structure).
    pub fn from_rows(
        kind: FeKind,
        column_names: Vec<String>,
        n_moment_inputs: usize,
        has_constant: bool,
        mut rows: Vec<DesignRow<S>>,
    ) -> Result<Self> {
        if column_names.is_empty() {
            return Err(Error::validation("design has no regressor columns"));
        }
        let n_substantive = column_names.len() - usize::from(has_constant);
        if n_moment_inputs == 0 || n_moment_inputs > n_substantive {
            return Err(Error::validation(
                "moment input count must be in 1..=number of substantive columns",
            ));
        }
        if has_constant {
            let last = column_names.len() - 1;
            if column_names[last] != "const" {
                return Err(Error::validation(
                    "designs with a constant must name the last column \"const\"",
                ));
            }
            if rows.iter().any(|r| r.x.last() != Some(&S::one())) {
                return Err(Error::validation("constant column must be all ones"));
            }
        }
        sort_rows(&mut rows);
        validate_rows(&rows, column_names.len())?;
        let n_regions = rows
            .iter()
            .map(|r| r.region_id.as_str())
            .collect::<BTreeSet<_>>()
            .len();
        let n_years = rows.iter().map(|r| r.year).collect::<BTreeSet<_>>().len();
        Ok(TransformedDesign {
            kind,
            column_names,
            n_moment_inputs,
            has_constant,
            n_regions,
            n_years,
            rows,
        })
    }

    pub fn kind(&self) -> FeKind {
        self.kind
    }

    /// All physical column names, including `const` when present.
    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// Substantive input count J (excludes the constant column).
    pub fn n_inputs(&self) -> usize {
        self.column_names.len() - usize::from(self.has_constant)
    }

    /// How many of the substantive inputs are moment features.
    pub fn n_moment_inputs(&self) -> usize {
        self.n_moment_inputs
    }

    pub fn has_constant(&self) -> bool {
        self.has_constant
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn n_years(&self) -> usize {
        self.n_years
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[DesignRow<S>] {
        &self.rows
    }

    /// Intercept parameters absorbed by the transform that produced this
    /// design; counts toward model degrees of freedom.
    pub fn fe_param_count(&self) -> usize {
        self.kind.absorbed_params(self.n_regions, self.n_years)
    }

    /// Rows of one region (contiguous because rows are sorted).
    pub fn region_rows(&self, region_id: &str) -> &[DesignRow<S>] {
        let start = self
            .rows
            .partition_point(|r| r.region_id.as_str() < region_id);
        let end = self
            .rows
            .partition_point(|r| r.region_id.as_str() <= region_id);
        &self.rows[start..end]
    }

    /// Response vector in row order.
    pub fn y_vector(&self) -> DVector<S> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| r.y))
    }

    /// Full regressor matrix (n x physical columns), `const` included.
    pub fn x_matrix(&self) -> DMatrix<S> {
        let n = self.rows.len();
        let p = self.column_names.len();
        DMatrix::from_fn(n, p, |i, j| self.rows[i].x[j])
    }

    /// Substantive input matrix (n x J), `const` excluded.
    pub fn input_matrix(&self) -> DMatrix<S> {
        let n = self.rows.len();
        let j = self.n_inputs();
        DMatrix::from_fn(n, j, |i, c| self.rows[i].x[c])
    }

    /// Writes the design as CSV: `region_id,year,y_tilde,x1_tilde,...` over
    /// all physical columns.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["region_id".to_string(), "year".to_string(), "y_tilde".to_string()];
        for j in 1..=self.column_names.len() {
            header.push(format!("x{j}_tilde"));
        }
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.region_id.clone(), row.year.to_string(), row.y.to_string()];
            for v in &row.x {
                rec.push(v.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-column working storage for the demeaning passes: column 0 is the
/// response, the rest are regressors.
struct Working<S> {
    cols: Vec<Vec<S>>,
    region_of: Vec<usize>,
    year_of: Vec<usize>,
    n_regions: usize,
    n_years: usize,
}

impl<S: Scalar> Working<S> {
    fn from_design(design: &RawDesign<S>) -> Self {
        let rows = design.rows();
        let n = rows.len();
        let regions: Vec<&str> = {
            let set: BTreeSet<&str> = rows.iter().map(|r| r.region_id.as_str()).collect();
            set.into_iter().collect()
        };
        let years: Vec<Year> = {
            let set: BTreeSet<Year> = rows.iter().map(|r| r.year).collect();
            set.into_iter().collect()
        };
        let region_of = rows
            .iter()
            .map(|r| regions.binary_search(&r.region_id.as_str()).unwrap())
            .collect();
        let year_of = rows
            .iter()
            .map(|r| years.binary_search(&r.year).unwrap())
            .collect();
        let mut cols = vec![Vec::with_capacity(n); design.column_names().len() + 1];
        for row in rows {
            cols[0].push(row.y);
            for (j, &v) in row.x.iter().enumerate() {
                cols[j + 1].push(v);
            }
        }
        Working {
            cols,
            region_of,
            year_of,
            n_regions: regions.len(),
            n_years: years.len(),
        }
    }

    /// Subtracts group means from one column; returns the largest absolute
    /// mean that was removed.
    fn demean_pass(col: &mut [S], group_of: &[usize], n_groups: usize) -> S {
        let mut sums = vec![S::zero(); n_groups];
        let mut counts = vec![0usize; n_groups];
        for (v, &g) in col.iter().zip(group_of) {
            sums[g] += *v;
            counts[g] += 1;
        }
        let mut worst = S::zero();
        for g in 0..n_groups {
            if counts[g] > 0 {
                sums[g] /= S::from_count(counts[g]);
                worst = worst.max(sums[g].abs());
            }
        }
        for (v, &g) in col.iter_mut().zip(group_of) {
            *v -= sums[g];
        }
        worst
    }

    /// Largest absolute group mean currently present in one column.
    fn check_pass(col: &[S], group_of: &[usize], n_groups: usize) -> S {
        let mut sums = vec![S::zero(); n_groups];
        let mut counts = vec![0usize; n_groups];
        for (v, &g) in col.iter().zip(group_of) {
            sums[g] += *v;
            counts[g] += 1;
        }
        let mut worst = S::zero();
        for g in 0..n_groups {
            if counts[g] > 0 {
                worst = worst.max((sums[g] / S::from_count(counts[g])).abs());
            }
        }
        worst
    }
}

/// Absorbs the design's fixed effects with default options.
pub fn within_transform<S: Scalar>(design: &RawDesign<S>) -> Result<TransformedDesign<S>> {
    within_transform_with(design, &WithinOptions::default())
}

/// Absorbs the design's fixed effects.
///
/// Pooled designs pass through unchanged with a `const` column appended.
/// Two-way absorption uses the configured algorithm; the iterated variant
/// fails if the group means have not vanished after `max_sweeps` sweeps.
pub fn within_transform_with<S: Scalar>(
    design: &RawDesign<S>,
    options: &WithinOptions<S>,
) -> Result<TransformedDesign<S>> {
    if !(options.tol > S::zero()) {
        return Err(Error::validation("within tolerance must be > 0"));
    }
    if options.max_sweeps == 0 {
        return Err(Error::validation("max_sweeps must be >= 1"));
    }
    let mut work = Working::from_design(design);
    match design.kind() {
        FeKind::Pooled => {}
        FeKind::Region => {
            for col in &mut work.cols {
                Working::demean_pass(col, &work.region_of, work.n_regions);
            }
        }
        FeKind::Time => {
            for col in &mut work.cols {
                Working::demean_pass(col, &work.year_of, work.n_years);
            }
        }
        FeKind::TwoWay => match options.algorithm {
            TwoWayAlgorithm::SinglePass => {
                for col in &mut work.cols {
                    single_pass_two_way(col, &work.region_of, work.n_regions, &work.year_of, work.n_years);
                }
            }
            TwoWayAlgorithm::Iterated => {
                // Column-magnitude-relative thresholds keep the criterion
                // meaningful at any data scale.
                let thresholds: Vec<S> = work
                    .cols
                    .iter()
                    .map(|col| {
                        let max_abs = col.iter().fold(S::zero(), |m, v| m.max(v.abs()));
                        options.tol * (S::one() + max_abs)
                    })
                    .collect();
                let mut converged = false;
                for _ in 0..options.max_sweeps {
                    for col in &mut work.cols {
                        Working::demean_pass(col, &work.region_of, work.n_regions);
                        Working::demean_pass(col, &work.year_of, work.n_years);
                    }
                    // The year means are zero right after the year pass, so
                    // the residual region means measure the remaining error.
                    converged = work
                        .cols
                        .iter()
                        .zip(&thresholds)
                        .all(|(col, &t)| {
                            Working::check_pass(col, &work.region_of, work.n_regions) <= t
                        });
                    if converged {
                        break;
                    }
                }
                if !converged {
                    return Err(Error::Numerical(format!(
                        "two-way demeaning did not converge within {} sweeps",
                        options.max_sweeps
                    )));
                }
            }
        },
    }

    let mut column_names = design.column_names().to_vec();
    let has_constant = design.kind() == FeKind::Pooled;
    if has_constant {
        column_names.push("const".to_string());
    }
    let rows: Vec<DesignRow<S>> = design
        .rows()
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut x: Vec<S> = (1..work.cols.len()).map(|j| work.cols[j][i]).collect();
            if has_constant {
                x.push(S::one());
            }
            DesignRow {
                region_id: row.region_id.clone(),
                year: row.year,
                y: work.cols[0][i],
                x,
            }
        })
        .collect();
    TransformedDesign::from_rows(
        design.kind(),
        column_names,
        design.n_moment_inputs(),
        has_constant,
        rows,
    )
}

fn single_pass_two_way<S: Scalar>(
    col: &mut [S],
    region_of: &[usize],
    n_regions: usize,
    year_of: &[usize],
    n_years: usize,
) {
    let mut region_sums = vec![(S::zero(), 0usize); n_regions];
    let mut year_sums = vec![(S::zero(), 0usize); n_years];
    let mut total = S::zero();
    for (i, v) in col.iter().enumerate() {
        region_sums[region_of[i]].0 += *v;
        region_sums[region_of[i]].1 += 1;
        year_sums[year_of[i]].0 += *v;
        year_sums[year_of[i]].1 += 1;
        total += *v;
    }
    let overall = total / S::from_count(col.len());
    let region_means: Vec<S> = region_sums
        .iter()
        .map(|(s, n)| if *n > 0 { *s / S::from_count(*n) } else { S::zero() })
        .collect();
    let year_means: Vec<S> = year_sums
        .iter()
        .map(|(s, n)| if *n > 0 { *s / S::from_count(*n) } else { S::zero() })
        .collect();
    for (i, v) in col.iter_mut().enumerate() {
        *v = *v - region_means[region_of[i]] - year_means[year_of[i]] + overall;
    }
}

/// Largest absolute per-region and per-year group means left in the
/// transformed response and substantive regressors. Near zero after an exact
/// within transform of the corresponding kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemeaningDiagnostics<S> {
    pub max_abs_region_mean: S,
    pub max_abs_year_mean: S,
}

pub fn residual_sum_diagnostics<S: Scalar>(design: &TransformedDesign<S>) -> DemeaningDiagnostics<S> {
    let rows = design.rows();
    let regions: Vec<&str> = {
        let set: BTreeSet<&str> = rows.iter().map(|r| r.region_id.as_str()).collect();
        set.into_iter().collect()
    };
    let years: Vec<Year> = {
        let set: BTreeSet<Year> = rows.iter().map(|r| r.year).collect();
        set.into_iter().collect()
    };
    let n_sub = design.n_inputs();
    let mut worst_region = S::zero();
    let mut worst_year = S::zero();
    // Column index 0 denotes y, 1..=n_sub the substantive regressors.
    for c in 0..=n_sub {
        let value = |row: &DesignRow<S>| if c == 0 { row.y } else { row.x[c - 1] };
        let mut region_sums = vec![(S::zero(), 0usize); regions.len()];
        let mut year_sums = vec![(S::zero(), 0usize); years.len()];
        for row in rows {
            let g = regions.binary_search(&row.region_id.as_str()).unwrap();
            let t = years.binary_search(&row.year).unwrap();
            region_sums[g].0 += value(row);
            region_sums[g].1 += 1;
            year_sums[t].0 += value(row);
            year_sums[t].1 += 1;
        }
        for (s, n) in &region_sums {
            worst_region = worst_region.max((*s / S::from_count(*n)).abs());
        }
        for (s, n) in &year_sums {
            worst_year = worst_year.max((*s / S::from_count(*n)).abs());
        }
    }
    DemeaningDiagnostics {
        max_abs_region_mean: worst_region,
        max_abs_year_mean: worst_year,
    }
}
