//! Synthetic fixture generation.
//!
//! Writes a self-contained directory — daily temperatures, growth panel,
//! region metadata, a ready-to-run `config.toml`, and a `truth.json` with
//! the generating parameters — so the whole pipeline can be exercised
//! end to end against known ground truth.

use std::f64::consts::TAU;
use std::fs;
use std::fs::File;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use clap::ValueEnum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use panelnet::error::{Error, Result};
use panelnet::estimator::{ModelKind, SelectionCriterion};
use panelnet::moments::{moments_up_to, write_daily_csv, DailyRecord};
use panelnet::within::FeKind;

use crate::config::{
    FiltersConfig, FitConfig, InputsConfig, MarginsConfig, ModelConfig, OutputConfig, RunConfig,
    ScenarioConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Growth is linear in the temperature moments.
    Linear,
    /// Growth comes from a small two-unit network on standardized moments.
    Slfn,
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub regions: usize,
    pub years: usize,
    pub seed: u64,
}

// Linear ground truth: growth = B0 + B1*m1 + B2*m2 + noise.
const B0: f64 = 4.9;
const B1: f64 = -0.3;
const B2: f64 = 0.05;

// Network ground truth, applied to (m1, m2) standardized by fixed constants.
// No output intercept: the fitted family has none either, so the generator
// is exactly representable and scenario deltas can be checked against it.
const NET_MEANS: [f64; 2] = [16.0, 41.0];
const NET_SDS: [f64; 2] = [3.0, 12.0];
const NET_THETA0: [f64; 4] = [1.35, -0.9, 0.75, 1.5];
const NET_THETA1: [f64; 2] = [2.2, -1.6];

/// The network fixture's noise-free response at raw moment values.
fn network_truth(m1: f64, m2: f64) -> f64 {
    let z1 = (m1 - NET_MEANS[0]) / NET_SDS[0];
    let z2 = (m2 - NET_MEANS[1]) / NET_SDS[1];
    let mut value = 0.0;
    for h in 0..2 {
        let pre = NET_THETA0[2 * h] * z1 + NET_THETA0[2 * h + 1] * z2;
        value += NET_THETA1[h] / (1.0 + (-pre).exp());
    }
    value
}

pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<()> {
    if spec.regions < 2 || spec.years < 2 {
        return Err(Error::validation("synth needs at least 2 regions and 2 years"));
    }
    fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let regions: Vec<(String, f64, f64)> = (0..spec.regions)
        .map(|r| {
            let lat = 36.0 + rng.random_range(0.0..24.0);
            let lon = -9.0 + rng.random_range(0.0..33.0);
            (format!("R{r:03}"), lat, lon)
        })
        .collect();

    let mut daily: Vec<DailyRecord<f64>> = Vec::new();
    // (region, year, m1, m2)
    let mut cells: Vec<(String, i32, f64, f64)> = Vec::new();
    for (id, lat, _) in &regions {
        // Colder mean temperature at higher latitude, plus a seasonal cycle.
        let base = 22.0 - 0.45 * (lat - 35.0);
        let amplitude = 8.0 + rng.random_range(0.0..2.0);
        for year_index in 0..spec.years {
            let year = 2000 + year_index as i32;
            let mut values = Vec::new();
            let mut date = NaiveDate::from_ymd_opt(year, 1, 1).expect("valid date");
            while date.year() == year {
                let phase = (date.ordinal() as f64 - 120.0) / 365.25 * TAU;
                let value = base + amplitude * phase.sin() + rng.random_range(-4.0..4.0);
                values.push(value);
                daily.push(DailyRecord {
                    region_id: id.clone(),
                    date,
                    value,
                });
                date = date.succ_opt().expect("valid successor");
            }
            let moments = moments_up_to(&values, 2)?;
            cells.push((id.clone(), year, moments[0], moments[1]));
        }
    }

    let growth: Vec<f64> = cells
        .iter()
        .map(|(_, _, m1, m2)| match spec.kind {
            SynthKind::Linear => B0 + B1 * m1 + B2 * m2 + rng.random_range(-2.5..2.5),
            // Low noise: the fixture's point is ground-truth recovery, and
            // the response surface is shallow over the sampled moment range.
            SynthKind::Slfn => network_truth(*m1, *m2) + rng.random_range(-0.25..0.25),
        })
        .collect();

    {
        let mut w = csv::Writer::from_writer(File::create(out_dir.join("regions.csv"))?);
        w.write_record(["region_id", "lat", "lon"])?;
        for (id, lat, lon) in &regions {
            w.write_record([id.clone(), lat.to_string(), lon.to_string()])?;
        }
        w.flush()?;
    }
    {
        let mut w = csv::Writer::from_writer(File::create(out_dir.join("gva.csv"))?);
        w.write_record(["region_id", "year", "growth"])?;
        for ((id, year, _, _), g) in cells.iter().zip(&growth) {
            w.write_record([id.clone(), year.to_string(), g.to_string()])?;
        }
        w.flush()?;
    }
    write_daily_csv(&daily, File::create(out_dir.join("temps.csv"))?)?;

    let truth = match spec.kind {
        SynthKind::Linear => serde_json::json!({
            "kind": "linear",
            "beta0": B0,
            "beta1": B1,
            "beta2": B2,
            "noise_half_width": 2.5,
        }),
        SynthKind::Slfn => serde_json::json!({
            "kind": "slfn",
            "input_means": NET_MEANS,
            "input_sds": NET_SDS,
            "theta0": NET_THETA0,
            "theta1": NET_THETA1,
            "noise_half_width": 0.25,
        }),
    };
    fs::write(
        out_dir.join("truth.json"),
        serde_json::to_string_pretty(&truth)
            .map_err(|e| Error::Validation(format!("cannot encode truth: {e}")))?
            + "\n",
    )?;

    let config = fixture_config(spec);
    let text = toml::to_string_pretty(&config)
        .map_err(|e| Error::Validation(format!("cannot encode config: {e}")))?;
    fs::write(out_dir.join("config.toml"), text)?;
    Ok(())
}

/// The config written next to the fixture; paths are bare filenames so the
/// directory stays relocatable, and outputs land in the same directory.
fn fixture_config(spec: &SynthSpec) -> RunConfig {
    let model = match spec.kind {
        SynthKind::Linear => ModelConfig {
            kind: ModelKind::Linear,
            fe: FeKind::Pooled,
            ..ModelConfig::default()
        },
        // Pooled so the fitted function lives on raw moment coordinates and
        // can be compared against the generator directly.
        SynthKind::Slfn => ModelConfig {
            kind: ModelKind::Slfn,
            fe: FeKind::Pooled,
            n_hidden: Some(2),
            h_candidates: vec![1, 2, 3],
            criterion: SelectionCriterion::Bic,
            ..ModelConfig::default()
        },
    };
    RunConfig {
        inputs: InputsConfig {
            gva: "gva.csv".into(),
            regions: "regions.csv".into(),
            temps: Some("temps.csv".into()),
            features: Some("features.csv".into()),
        },
        filters: FiltersConfig::default(),
        model,
        fit: FitConfig {
            seed: spec.seed,
            ..FitConfig::default()
        },
        margins: MarginsConfig::default(),
        scenario: ScenarioConfig {
            shift: vec![0.0, 0.0],
        },
        output: OutputConfig { dir: ".".into() },
    }
}
