//! Empirical moments of daily weather series, aggregated per region-year.
//!
//! The regressors of the panel models are not the raw daily series but its
//! within-year empirical moments: the annual mean `m1` and, for orders
//! `k >= 2`, the population central moments `m_k = (1/n) * sum((x - mean)^k)`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Year;
use crate::Scalar;

/// One daily reading of the driving series (e.g. mean temperature in deg C).
#[derive(Debug, Clone, PartialEq)]
pub struct DailyRecord<S> {
    pub region_id: String,
    pub date: NaiveDate,
    pub value: S,
}

/// The `k`-th empirical moment of a series: the raw mean for `k = 1`, the
/// population central moment `(1/n) * sum((x - mean)^k)` for `k >= 2`.
pub fn moment<S: Scalar>(values: &[S], k: usize) -> Result<S> {
    if k == 0 {
        return Err(Error::validation("moment order must be >= 1"));
    }
    if values.is_empty() {
        return Err(Error::validation("moment of an empty series"));
    }
    let n = S::from_count(values.len());
    let mut sum = S::zero();
    for &v in values {
        sum += v;
    }
    let mean = sum / n;
    if k == 1 {
        return Ok(mean);
    }
    let mut acc = S::zero();
    for &v in values {
        acc += (v - mean).powi(k as i32);
    }
    Ok(acc / n)
}

/// All moments `m1..=m_k_max` of a series, sharing one mean computation.
pub fn moments_up_to<S: Scalar>(values: &[S], k_max: usize) -> Result<Vec<S>> {
    if k_max == 0 {
        return Err(Error::validation("moment order must be >= 1"));
    }
    if values.is_empty() {
        return Err(Error::validation("moment of an empty series"));
    }
    let n = S::from_count(values.len());
    let mut sum = S::zero();
    for &v in values {
        sum += v;
    }
    let mean = sum / n;
    let mut out = vec![mean];
    for k in 2..=k_max {
        let mut acc = S::zero();
        for &v in values {
            acc += (v - mean).powi(k as i32);
        }
        out.push(acc / n);
    }
    Ok(out)
}

/// Moment features of one region-year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow<S> {
    pub region_id: String,
    pub year: Year,
    /// `m1..=mK`, in order.
    pub moments: Vec<S>,
}

/// Moment features for a set of region-years, all of the same order `K`.
///
/// Rows are sorted by `(region_id, year)` and keys are unique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentFeatures<S> {
    k_max: usize,
    rows: Vec<FeatureRow<S>>,
}

impl<S: Scalar> MomentFeatures<S> {
    pub fn new(k_max: usize, rows: Vec<FeatureRow<S>>) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::validation("moment order must be >= 1"));
        }
        if rows.is_empty() {
            return Err(Error::validation("no feature rows"));
        }
        let mut rows = rows;
        rows.sort_by(|a, b| (&a.region_id, a.year).cmp(&(&b.region_id, b.year)));
        let mut seen = BTreeSet::new();
        for row in &rows {
            if row.moments.len() != k_max {
                return Err(Error::Validation(format!(
                    "feature row ({}, {}) has {} moments, expected {}",
                    row.region_id,
                    row.year,
                    row.moments.len(),
                    k_max
                )));
            }
            if row.moments.iter().any(|m| !m.is_finite()) {
                return Err(Error::Validation(format!(
                    "non-finite moment for ({}, {})",
                    row.region_id, row.year
                )));
            }
            if !seen.insert((row.region_id.clone(), row.year)) {
                return Err(Error::Validation(format!(
                    "duplicate feature row ({}, {})",
                    row.region_id, row.year
                )));
            }
        }
        Ok(MomentFeatures { k_max, rows })
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn rows(&self) -> &[FeatureRow<S>] {
        &self.rows
    }

    pub fn get(&self, region_id: &str, year: Year) -> Option<&[S]> {
        self.rows
            .binary_search_by(|r| (r.region_id.as_str(), r.year).cmp(&(region_id, year)))
            .ok()
            .map(|i| self.rows[i].moments.as_slice())
    }
}

/// Options for [`build_features`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureOptions {
    /// Highest moment order `K`; the features are `m1..=mK`.
    pub k_max: usize,
    /// Minimum number of daily readings a region-year must have to be kept.
    pub min_days: usize,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions {
            k_max: 2,
            min_days: 300,
        }
    }
}

/// Coverage of one region-year: readings present vs. calendar days.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCoverage {
    pub region_id: String,
    pub year: Year,
    pub n_days: usize,
    /// Calendar days in that year (365 or 366).
    pub days_in_year: usize,
}

/// Side report of [`build_features`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FeatureReport {
    /// Region-years dropped for having fewer than `min_days` readings.
    pub excluded: Vec<GroupCoverage>,
    /// Region-years kept despite incomplete calendar coverage.
    pub partial: Vec<GroupCoverage>,
    /// Region-years that produced a feature row.
    pub n_groups_kept: usize,
}

fn days_in_year(year: Year) -> usize {
    NaiveDate::from_ymd_opt(year, 12, 31)
        .map(|d| d.ordinal() as usize)
        .unwrap_or(365)
}

/// Groups daily readings by region-year and computes moment features.
///
/// Region-years with fewer than `min_days` readings are excluded and listed
/// in the report; kept region-years with incomplete calendar coverage are
/// listed as partial. Duplicate `(region, date)` readings are rejected.
pub fn build_features<S: Scalar>(
    records: &[DailyRecord<S>],
    options: &FeatureOptions,
) -> Result<(MomentFeatures<S>, FeatureReport)> {
    if options.k_max == 0 {
        return Err(Error::validation("k_max must be >= 1"));
    }
    if options.min_days == 0 {
        return Err(Error::validation("min_days must be >= 1"));
    }
    let mut groups: BTreeMap<(String, Year), Vec<S>> = BTreeMap::new();
    let mut seen: BTreeSet<(String, NaiveDate)> = BTreeSet::new();
    for rec in records {
        if !rec.value.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite reading for ({}, {})",
                rec.region_id, rec.date
            )));
        }
        if !seen.insert((rec.region_id.clone(), rec.date)) {
            return Err(Error::Validation(format!(
                "duplicate daily reading ({}, {})",
                rec.region_id, rec.date
            )));
        }
        groups
            .entry((rec.region_id.clone(), rec.date.year()))
            .or_default()
            .push(rec.value);
    }

    let mut rows = Vec::new();
    let mut report = FeatureReport::default();
    for ((region_id, year), values) in groups {
        let coverage = GroupCoverage {
            region_id: region_id.clone(),
            year,
            n_days: values.len(),
            days_in_year: days_in_year(year),
        };
        if values.len() < options.min_days {
            report.excluded.push(coverage);
            continue;
        }
        if values.len() < coverage.days_in_year {
            report.partial.push(coverage);
        }
        rows.push(FeatureRow {
            region_id,
            year,
            moments: moments_up_to(&values, options.k_max)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::validation(
            "no region-year group reaches the minimum day count",
        ));
    }
    report.n_groups_kept = rows.len();
    Ok((MomentFeatures::new(options.k_max, rows)?, report))
}

/// Reads daily readings from CSV with header `region_id,date,tmean` and
/// ISO-8601 dates.
pub fn read_daily_csv<S: Scalar>(reader: impl Read) -> Result<Vec<DailyRecord<S>>> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    {
        let headers = csv_reader.headers()?;
        let expected = ["region_id", "date", "tmean"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::Validation(format!(
                "expected header region_id,date,tmean, found {:?}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }
    let mut records = Vec::new();
    for row in csv_reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let date: NaiveDate = row[1]
            .parse()
            .map_err(|e| Error::parse(line, format!("invalid date {:?}: {e}", &row[1])))?;
        let value: f64 = row[2]
            .parse()
            .map_err(|e| Error::parse(line, format!("invalid reading {:?}: {e}", &row[2])))?;
        records.push(DailyRecord {
            region_id: row[0].to_string(),
            date,
            value: S::c(value),
        });
    }
    Ok(records)
}

/// Writes daily readings as CSV with header `region_id,date,tmean`.
pub fn write_daily_csv<S: Scalar>(records: &[DailyRecord<S>], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["region_id", "date", "tmean"])?;
    for rec in records {
        w.write_record([
            rec.region_id.as_str(),
            &rec.date.to_string(),
            &rec.value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes features as CSV with header `region_id,year,m1,...,mK`.
pub fn write_features_csv<S: Scalar>(
    features: &MomentFeatures<S>,
    writer: impl Write,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["region_id".to_string(), "year".to_string()];
    for k in 1..=features.k_max() {
        header.push(format!("m{k}"));
    }
    w.write_record(&header)?;
    for row in features.rows() {
        let mut rec = vec![row.region_id.clone(), row.year.to_string()];
        for m in &row.moments {
            rec.push(m.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads features from CSV written by [`write_features_csv`]; the order `K`
/// is inferred from the header.
pub fn read_features_csv<S: Scalar>(reader: impl Read) -> Result<MomentFeatures<S>> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let k_max = {
        let headers = csv_reader.headers()?;
        if headers.len() < 3 || &headers[0] != "region_id" || &headers[1] != "year" {
            return Err(Error::Validation(format!(
                "expected header region_id,year,m1,..., found {:?}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        for (i, name) in headers.iter().skip(2).enumerate() {
            let expected = format!("m{}", i + 1);
            if name != expected {
                return Err(Error::Validation(format!(
                    "expected moment column {expected}, found {name:?}"
                )));
            }
        }
        headers.len() - 2
    };
    let mut rows = Vec::new();
    for row in csv_reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != k_max + 2 {
            return Err(Error::parse(
                line,
                format!("expected {} fields, found {}", k_max + 2, row.len()),
            ));
        }
        let year: Year = row[1]
            .parse()
            .map_err(|e| Error::parse(line, format!("invalid year {:?}: {e}", &row[1])))?;
        let mut moments = Vec::with_capacity(k_max);
        for j in 0..k_max {
            let v: f64 = row[j + 2]
                .parse()
                .map_err(|e| Error::parse(line, format!("invalid moment {:?}: {e}", &row[j + 2])))?;
            moments.push(S::c(v));
        }
        rows.push(FeatureRow {
            region_id: row[0].to_string(),
            year,
            moments,
        });
    }
    MomentFeatures::new(k_max, rows)
}
