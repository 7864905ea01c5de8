//! Unbalanced region x year panel data model, ingestion filters, and
//! marginal averages.
//!
//! A [`PanelDataset`] holds the dependent variable (growth rates in
//! percentage points) together with per-region metadata (centroid
//! coordinates). Panels may be unbalanced: not every region is observed in
//! every year.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

/// Calendar years are treated as opaque categorical labels.
pub type Year = i32;

/// Per-region metadata: an opaque identifier plus centroid coordinates in
/// degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMeta<S> {
    pub region_id: String,
    pub latitude: S,
    pub longitude: S,
}

impl<S: Scalar> RegionMeta<S> {
    pub fn new(region_id: impl Into<String>, latitude: S, longitude: S) -> Result<Self> {
        let meta = RegionMeta {
            region_id: region_id.into(),
            latitude,
            longitude,
        };
        meta.validate()?;
        Ok(meta)
    }

    fn validate(&self) -> Result<()> {
        if self.region_id.is_empty() {
            return Err(Error::validation("empty region_id"));
        }
        if !self.latitude.is_finite() || self.latitude.abs() > S::c(90.0) {
            return Err(Error::Validation(format!(
                "region {}: latitude {} outside [-90, 90]",
                self.region_id, self.latitude
            )));
        }
        if !self.longitude.is_finite() || self.longitude.abs() > S::c(180.0) {
            return Err(Error::Validation(format!(
                "region {}: longitude {} outside [-180, 180]",
                self.region_id, self.longitude
            )));
        }
        Ok(())
    }
}

/// One observation of the dependent variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation<S> {
    pub region_id: String,
    pub year: Year,
    /// Real growth rate in percentage points.
    pub growth: S,
}

/// A validated, possibly unbalanced panel.
///
/// Invariants: every observation's `region_id` resolves to a [`RegionMeta`],
/// `(region_id, year)` keys are unique, and all responses are finite.
/// Regions and observations are kept in a canonical sort order so that
/// serialization is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset<S> {
    regions: Vec<RegionMeta<S>>,
    observations: Vec<Observation<S>>,
}

impl<S: Scalar> PanelDataset<S> {
    /// Builds a panel from metadata and observations, validating all
    /// invariants. Input order does not matter; contents are sorted.
    pub fn new(regions: Vec<RegionMeta<S>>, observations: Vec<Observation<S>>) -> Result<Self> {
        let mut regions = regions;
        let mut observations = observations;
        regions.sort_by(|a, b| a.region_id.cmp(&b.region_id));
        observations.sort_by(|a, b| (&a.region_id, a.year).cmp(&(&b.region_id, b.year)));

        let mut known = BTreeSet::new();
        for meta in &regions {
            meta.validate()?;
            if !known.insert(meta.region_id.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate region_id {} in region metadata",
                    meta.region_id
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for obs in &observations {
            if !obs.growth.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite response for ({}, {})",
                    obs.region_id, obs.year
                )));
            }
            if !known.contains(&obs.region_id) {
                return Err(Error::Validation(format!(
                    "unresolvable region_id {} (no metadata row)",
                    obs.region_id
                )));
            }
            if !seen.insert((obs.region_id.clone(), obs.year)) {
                return Err(Error::Validation(format!(
                    "duplicate observation key ({}, {})",
                    obs.region_id, obs.year
                )));
            }
        }
        Ok(PanelDataset {
            regions,
            observations,
        })
    }

    pub fn regions(&self) -> &[RegionMeta<S>] {
        &self.regions
    }

    pub fn observations(&self) -> &[Observation<S>] {
        &self.observations
    }

    pub fn region_meta(&self, region_id: &str) -> Option<&RegionMeta<S>> {
        self.regions
            .binary_search_by(|m| m.region_id.as_str().cmp(region_id))
            .ok()
            .map(|i| &self.regions[i])
    }

    /// Distinct region ids present among the observations, sorted.
    pub fn observed_regions(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self
            .observations
            .iter()
            .map(|o| o.region_id.as_str())
            .collect();
        set.into_iter().collect()
    }

    /// Distinct years present among the observations, sorted.
    pub fn observed_years(&self) -> Vec<Year> {
        let set: BTreeSet<Year> = self.observations.iter().map(|o| o.year).collect();
        set.into_iter().collect()
    }

    /// Number of distinct regions present (R).
    pub fn n_regions(&self) -> usize {
        self.observed_regions().len()
    }

    /// Number of distinct years present (T).
    pub fn n_years(&self) -> usize {
        self.observed_years().len()
    }

    /// The response values keyed by (region, year).
    pub fn response_cells(&self) -> BTreeMap<(String, Year), S> {
        self.observations
            .iter()
            .map(|o| ((o.region_id.clone(), o.year), o.growth))
            .collect()
    }

    /// Marginal averages of the response over the observed cells.
    pub fn marginal_averages(&self) -> Result<MarginalAverages<S>> {
        marginal_averages(&self.response_cells())
    }
}

/// Row, column, and overall means of per-cell values, computed over observed
/// cells only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalAverages<S> {
    /// Mean over the observed years of each region.
    pub region_means: BTreeMap<String, S>,
    /// Mean over the observed regions of each year.
    pub year_means: BTreeMap<Year, S>,
    /// Mean over all observed cells.
    pub overall: S,
    /// Observed-cell count per region.
    pub region_counts: BTreeMap<String, usize>,
    /// Observed-cell count per year.
    pub year_counts: BTreeMap<Year, usize>,
    /// Total number of observed cells.
    pub n_cells: usize,
}

/// Computes marginal averages of arbitrary per-cell values keyed by
/// (region, year). Means use observed cells only; no imputation.
pub fn marginal_averages<S: Scalar>(
    cells: &BTreeMap<(String, Year), S>,
) -> Result<MarginalAverages<S>> {
    if cells.is_empty() {
        return Err(Error::validation("no observed cells"));
    }
    let mut region_sums: BTreeMap<String, (S, usize)> = BTreeMap::new();
    let mut year_sums: BTreeMap<Year, (S, usize)> = BTreeMap::new();
    let mut total = S::zero();
    for ((region, year), &value) in cells {
        let e = region_sums
            .entry(region.clone())
            .or_insert((S::zero(), 0));
        e.0 += value;
        e.1 += 1;
        let e = year_sums.entry(*year).or_insert((S::zero(), 0));
        e.0 += value;
        e.1 += 1;
        total += value;
    }
    let region_means = region_sums
        .iter()
        .map(|(r, (s, n))| (r.clone(), *s / S::from_count(*n)))
        .collect();
    let year_means = year_sums
        .iter()
        .map(|(t, (s, n))| (*t, *s / S::from_count(*n)))
        .collect();
    Ok(MarginalAverages {
        region_means,
        year_means,
        overall: total / S::from_count(cells.len()),
        region_counts: region_sums.iter().map(|(r, (_, n))| (r.clone(), *n)).collect(),
        year_counts: year_sums.iter().map(|(t, (_, n))| (*t, *n)).collect(),
        n_cells: cells.len(),
    })
}

/// Outcome of [`apply_filters`], serialized as the filter report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    /// Observations removed because |growth| >= the trim threshold.
    pub rows_trimmed: usize,
    /// Regions removed for having fewer than `min_periods` surviving
    /// observations.
    pub regions_dropped: usize,
    /// Observations removed together with dropped regions.
    pub rows_dropped_with_regions: usize,
    /// Final number of distinct regions (R).
    pub n_regions: usize,
    /// Final number of distinct years (T).
    pub n_years: usize,
    /// Final observation count.
    pub n_observations: usize,
}

/// Trims extreme growth rates, then drops regions observed in fewer than
/// `min_periods` periods.
///
/// An observation is removed when `|growth| >= max_abs_growth` (the boundary
/// value itself is removed). Region metadata of dropped regions is removed
/// as well.
pub fn apply_filters<S: Scalar>(
    panel: &PanelDataset<S>,
    max_abs_growth: S,
    min_periods: usize,
) -> Result<(PanelDataset<S>, FilterReport)> {
    if !(max_abs_growth > S::zero()) {
        return Err(Error::validation("max_abs_growth must be > 0"));
    }
    if min_periods < 1 {
        return Err(Error::validation("min_periods must be >= 1"));
    }

    let mut surviving: Vec<Observation<S>> = Vec::new();
    let mut rows_trimmed = 0usize;
    for obs in panel.observations() {
        if obs.growth.abs() >= max_abs_growth {
            rows_trimmed += 1;
        } else {
            surviving.push(obs.clone());
        }
    }

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for obs in &surviving {
        *counts.entry(obs.region_id.as_str()).or_insert(0) += 1;
    }
    let kept: BTreeSet<String> = counts
        .iter()
        .filter(|(_, &n)| n >= min_periods)
        .map(|(r, _)| r.to_string())
        .collect();
    let regions_dropped = counts.len() - kept.len();

    let before = surviving.len();
    surviving.retain(|o| kept.contains(&o.region_id));
    let rows_dropped_with_regions = before - surviving.len();

    if surviving.is_empty() {
        return Err(Error::validation("empty dataset after filtering"));
    }

    let regions = panel
        .regions()
        .iter()
        .filter(|m| kept.contains(&m.region_id))
        .cloned()
        .collect();
    let filtered = PanelDataset::new(regions, surviving)?;
    let report = FilterReport {
        rows_trimmed,
        regions_dropped,
        rows_dropped_with_regions,
        n_regions: filtered.n_regions(),
        n_years: filtered.n_years(),
        n_observations: filtered.observations().len(),
    };
    Ok((filtered, report))
}

#[derive(Debug, Deserialize)]
struct RegionRow {
    region_id: String,
    lat: f64,
    lon: f64,
}

#[derive(Debug, Deserialize)]
struct GvaRow {
    region_id: String,
    year: Year,
    growth: f64,
}

/// Loads a panel from the two CSV inputs.
///
/// `gva` must have header `region_id,year,growth` (growth in percentage
/// points); `regions` must have header `region_id,lat,lon` (degrees).
pub fn load_panel<S: Scalar>(gva: impl Read, regions: impl Read) -> Result<PanelDataset<S>> {
    let mut region_rows = Vec::new();
    let mut reader = csv::Reader::from_reader(regions);
    for row in reader.deserialize() {
        let row: RegionRow = row?;
        region_rows.push(RegionMeta {
            region_id: row.region_id,
            latitude: S::c(row.lat),
            longitude: S::c(row.lon),
        });
    }

    let mut obs_rows = Vec::new();
    let mut reader = csv::Reader::from_reader(gva);
    for row in reader.deserialize() {
        let row: GvaRow = row?;
        obs_rows.push(Observation {
            region_id: row.region_id,
            year: row.year,
            growth: S::c(row.growth),
        });
    }
    PanelDataset::new(region_rows, obs_rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(id: &str, lat: f64, lon: f64) -> RegionMeta<f64> {
        RegionMeta::new(id, lat, lon).unwrap()
    }

    fn obs(id: &str, year: Year, growth: f64) -> Observation<f64> {
        Observation {
            region_id: id.to_string(),
            year,
            growth,
        }
    }

    fn two_by_two() -> PanelDataset<f64> {
        PanelDataset::new(
            vec![meta("A", 50.0, 10.0), meta("B", 40.0, -3.0)],
            vec![
                obs("A", 2000, 1.0),
                obs("A", 2001, 2.0),
                obs("B", 2000, 3.0),
                obs("B", 2001, 5.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn minimal_valid_panel() {
        let p = two_by_two();
        assert_eq!(p.n_regions(), 2);
        assert_eq!(p.n_years(), 2);
        assert_eq!(p.observations().len(), 4);
    }

    #[test]
    fn non_finite_response_rejected() {
        let err = PanelDataset::new(vec![meta("A", 0.0, 0.0)], vec![obs("A", 2000, f64::NAN)])
            .unwrap_err();
        assert!(err.to_string().contains("non-finite response"), "{err}");
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = PanelDataset::new(
            vec![meta("A", 0.0, 0.0)],
            vec![obs("A", 2000, 1.0), obs("A", 2000, 2.0)],
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate observation"), "{err}");
    }

    #[test]
    fn unresolvable_region_rejected() {
        let err =
            PanelDataset::new(vec![meta("A", 0.0, 0.0)], vec![obs("B", 2000, 1.0)]).unwrap_err();
        assert!(err.to_string().contains("unresolvable"), "{err}");
    }

    #[test]
    fn unbalanced_panel_accepted() {
        let p = PanelDataset::new(
            vec![meta("A", 0.0, 0.0), meta("B", 0.0, 0.0)],
            vec![obs("A", 2000, 1.0), obs("A", 2001, 2.0), obs("B", 2000, 3.0)],
        )
        .unwrap();
        assert_eq!(p.n_regions(), 2);
        assert_eq!(p.n_years(), 2);
        assert_eq!(p.observations().len(), 3);
    }

    #[test]
    fn coordinates_validated() {
        assert!(RegionMeta::new("A", 91.0, 0.0).is_err());
        assert!(RegionMeta::new("A", 0.0, -181.0).is_err());
        assert!(RegionMeta::new("A", 90.0, 180.0).is_ok());
    }

    #[test]
    fn trim_removes_double_digit_growth() {
        let p = PanelDataset::new(
            vec![meta("A", 0.0, 0.0)],
            vec![obs("A", 2000, 12.3), obs("A", 2001, 9.9), obs("A", 2002, -10.0)],
        )
        .unwrap();
        let (filtered, report) = apply_filters(&p, 10.0, 1).unwrap();
        assert_eq!(report.rows_trimmed, 2);
        assert_eq!(filtered.observations().len(), 1);
        assert_eq!(filtered.observations()[0].growth, 9.9);
    }

    #[test]
    fn min_periods_drops_short_regions() {
        let mut observations = vec![obs("B", 2000, 1.0)];
        for year in 2000..2004 {
            observations.push(obs("A", year, 1.0));
        }
        for year in 2000..2005 {
            observations.push(obs("C", year, 1.0));
        }
        let p = PanelDataset::new(
            vec![meta("A", 0.0, 0.0), meta("B", 0.0, 0.0), meta("C", 0.0, 0.0)],
            observations,
        )
        .unwrap();
        // A has 4 < 5 observations, B has 1, C has 5.
        let (filtered, report) = apply_filters(&p, 10.0, 5).unwrap();
        assert_eq!(report.regions_dropped, 2);
        assert_eq!(filtered.n_regions(), 1);
        assert_eq!(filtered.observed_regions(), vec!["C"]);
        assert!(filtered.region_meta("A").is_none());
    }

    #[test]
    fn filtering_to_empty_errors() {
        let p = PanelDataset::new(vec![meta("A", 0.0, 0.0)], vec![obs("A", 2000, 50.0)]).unwrap();
        let err = apply_filters(&p, 10.0, 1).unwrap_err();
        assert!(err.to_string().contains("empty dataset"), "{err}");
    }

    #[test]
    fn filtering_is_idempotent() {
        let p = PanelDataset::new(
            vec![meta("A", 0.0, 0.0), meta("B", 0.0, 0.0)],
            vec![
                obs("A", 2000, 11.0),
                obs("A", 2001, 2.0),
                obs("A", 2002, -3.0),
                obs("B", 2000, 4.0),
            ],
        )
        .unwrap();
        let (once, _) = apply_filters(&p, 10.0, 2).unwrap();
        let (twice, report) = apply_filters(&once, 10.0, 2).unwrap();
        assert_eq!(once, twice);
        assert_eq!(report.rows_trimmed, 0);
        assert_eq!(report.regions_dropped, 0);
    }

    #[test]
    fn marginal_averages_balanced() {
        let p = two_by_two();
        let avg = p.marginal_averages().unwrap();
        assert_eq!(avg.region_means["A"], 1.5);
        assert_eq!(avg.region_means["B"], 4.0);
        assert_eq!(avg.year_means[&2000], 2.0);
        assert_eq!(avg.year_means[&2001], 3.5);
        assert_eq!(avg.overall, 2.75);
        assert_eq!(avg.n_cells, 4);
    }

    #[test]
    fn marginal_averages_single_cell() {
        let mut cells = BTreeMap::new();
        cells.insert(("A".to_string(), 1), 7.0);
        let avg = marginal_averages(&cells).unwrap();
        assert_eq!(avg.region_means["A"], 7.0);
        assert_eq!(avg.year_means[&1], 7.0);
        assert_eq!(avg.overall, 7.0);
    }

    #[test]
    fn marginal_averages_unbalanced() {
        let mut cells = BTreeMap::new();
        cells.insert(("A".to_string(), 1), 1.0);
        cells.insert(("A".to_string(), 2), 3.0);
        cells.insert(("B".to_string(), 1), 5.0);
        let avg = marginal_averages(&cells).unwrap();
        assert_eq!(avg.region_means["A"], 2.0);
        assert_eq!(avg.region_means["B"], 5.0);
        assert_eq!(avg.year_means[&1], 3.0);
        assert_eq!(avg.year_means[&2], 3.0);
        assert_eq!(avg.overall, 3.0);
        assert_eq!(avg.region_counts["A"], 2);
        assert_eq!(avg.year_counts[&1], 2);
    }

    #[test]
    fn balanced_overall_equals_mean_of_row_and_column_means() {
        let p = two_by_two();
        let avg = p.marginal_averages().unwrap();
        let row_mean: f64 = avg.region_means.values().sum::<f64>() / avg.region_means.len() as f64;
        let col_mean: f64 = avg.year_means.values().sum::<f64>() / avg.year_means.len() as f64;
        assert!((avg.overall - row_mean).abs() < 1e-15);
        assert!((avg.overall - col_mean).abs() < 1e-15);
    }

    #[test]
    fn csv_load_and_roundtrip() {
        let gva = "region_id,year,growth\nA,2000,1.5\nA,2001,-2.25\nB,2000,0.5\n";
        let regions = "region_id,lat,lon\nA,52.5,13.4\nB,41.9,12.5\n";
        let p: PanelDataset<f64> = load_panel(gva.as_bytes(), regions.as_bytes()).unwrap();
        assert_eq!(p.n_regions(), 2);
        assert_eq!(p.region_meta("A").unwrap().latitude, 52.5);

        let json = serde_json::to_string(&p).unwrap();
        let back: PanelDataset<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(p, back);
        assert_eq!(json, serde_json::to_string(&back).unwrap());
    }

    #[test]
    fn csv_malformed_row_reports_line() {
        let gva = "region_id,year,growth\nA,2000,1.5\nA,not_a_year,2.0\n";
        let regions = "region_id,lat,lon\nA,0,0\n";
        let err = load_panel::<f64>(gva.as_bytes(), regions.as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other}"),
        }
    }
}
