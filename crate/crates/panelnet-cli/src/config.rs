//! Run configuration: a TOML file describing inputs, model, and outputs,
//! plus the handful of command-line overrides.
//!
//! Relative paths inside the file are resolved against the directory the
//! file lives in, so a fixture directory with a `config.toml` is
//! self-contained and can be run from anywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use panelnet::error::{Error, Result};
use panelnet::estimator::{FitOptions, HessianMode, ModelKind, SelectionCriterion};
use panelnet::within::FeKind;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: InputsConfig,
    #[serde(default)]
    pub filters: FiltersConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub margins: MarginsConfig,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputsConfig {
    /// Region-year growth observations (`region_id,year,growth`).
    pub gva: PathBuf,
    /// Region metadata (`region_id,lat,lon`).
    pub regions: PathBuf,
    /// Daily temperature series (`region_id,date,tmean`); needed by `ingest`.
    #[serde(default)]
    pub temps: Option<PathBuf>,
    /// Moment feature table; produced by `ingest`, consumed by everything else.
    #[serde(default)]
    pub features: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiltersConfig {
    /// Trim observations with |growth| at or beyond this (percentage points).
    pub max_abs_growth: f64,
    /// Drop regions with fewer surviving observations than this.
    pub min_periods: usize,
    /// Drop region-years with fewer daily readings than this.
    pub min_days: usize,
}

impl Default for FiltersConfig {
    fn default() -> Self {
        FiltersConfig {
            max_abs_growth: 10.0,
            min_periods: 2,
            min_days: 300,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub fe: FeKind,
    /// Highest moment order used as a regressor.
    pub k_moments: usize,
    /// Append region latitude and longitude as regressors.
    pub location_inputs: bool,
    /// Hidden width for `fit` with a network model.
    pub n_hidden: Option<usize>,
    /// Hidden widths tried by `select`.
    pub h_candidates: Vec<usize>,
    /// Criterion `select` minimizes.
    pub criterion: SelectionCriterion,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Linear,
            fe: FeKind::TwoWay,
            k_moments: 2,
            location_inputs: false,
            n_hidden: None,
            h_candidates: Vec::new(),
            criterion: SelectionCriterion::Bic,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub restarts: usize,
    pub seed: u64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub init_scale: f64,
    pub hessian: HessianMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        let defaults = FitOptions::<f64>::default();
        FitConfig {
            restarts: defaults.restarts,
            seed: defaults.seed,
            max_iterations: defaults.max_iterations,
            gradient_tolerance: defaults.gradient_tolerance,
            step_tolerance: defaults.step_tolerance,
            init_scale: defaults.init_scale,
            hessian: defaults.hessian_mode,
        }
    }
}

impl FitConfig {
    pub fn to_options(&self) -> FitOptions<f64> {
        FitOptions {
            restarts: self.restarts,
            seed: self.seed,
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            step_tolerance: self.step_tolerance,
            init_scale: self.init_scale,
            hessian_mode: self.hessian,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarginsConfig {
    /// Design columns to trace one at a time.
    pub varied: Vec<usize>,
    pub grid_points: usize,
    /// Confidence level for the bands.
    pub level: f64,
    /// Optional direction for a joint (interaction) trace.
    pub direction: Option<Vec<f64>>,
    /// Optional pair of columns for a two-way fitted surface.
    pub contour: Option<[usize; 2]>,
    /// Also write an SVG plot next to each curve CSV.
    pub svg: bool,
}

impl Default for MarginsConfig {
    fn default() -> Self {
        MarginsConfig {
            varied: vec![0],
            grid_points: 101,
            level: 0.95,
            direction: None,
            contour: None,
            svg: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Uniform shift added to every observation's moment inputs, in the
    /// same (within-transformed) units the model was fitted on.
    pub shift: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl RunConfig {
    /// Parses `path` and resolves its relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut config.inputs.gva);
        resolve(base, &mut config.inputs.regions);
        if let Some(p) = config.inputs.temps.as_mut() {
            resolve(base, p);
        }
        if let Some(p) = config.inputs.features.as_mut() {
            resolve(base, p);
        }
        resolve(base, &mut config.output.dir);
        config.validate()?;
        Ok(config)
    }

    /// Applies command-line overrides. Paths given on the command line are
    /// taken as-is (relative to the working directory, like any CLI path).
    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<PathBuf>) {
        if let Some(seed) = seed {
            self.fit.seed = seed;
        }
        if let Some(out) = out {
            self.output.dir = out;
        }
    }

    fn validate(&self) -> Result<()> {
        if self.model.k_moments == 0 {
            return Err(Error::validation("model.k_moments must be >= 1"));
        }
        if self.margins.grid_points < 2 {
            return Err(Error::validation("margins.grid_points must be >= 2"));
        }
        if !(self.margins.level > 0.0 && self.margins.level < 1.0) {
            return Err(Error::validation("margins.level must lie in (0, 1)"));
        }
        Ok(())
    }
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}
