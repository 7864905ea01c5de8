//! The work behind each subcommand: wire files into the library calls and
//! write the outputs (tables, fit JSON, diagnostics, manifests).

use std::fs;
use std::fs::File;
use std::path::{Path, PathBuf};

use panelnet::error::{Error, Result};
use panelnet::estimator::{
    fit_linear, fit_slfn, read_fit_json, select_model, write_fit_json, write_selection_csv,
    FitResult, ModelKind,
};
use panelnet::inference::{
    contour_grid, curve_svg, default_grid_points, interaction_curve, marginal_curve,
    scenario_uniform_shift, write_contour_csv, write_margins_csv, write_scenario_csv,
};
use panelnet::moments::{
    build_features, read_daily_csv, read_features_csv, write_features_csv, FeatureOptions,
    MomentFeatures,
};
use panelnet::panel::{apply_filters, load_panel, FilterReport, PanelDataset};
use panelnet::within::{
    assemble_design, residual_sum_diagnostics, within_transform, AssemblyOptions, AssemblyReport,
    TransformedDesign,
};

use crate::config::RunConfig;
use crate::manifest::write_manifest;

fn open_input(path: &Path) -> Result<File> {
    File::open(path).map_err(|_| Error::Validation(format!("missing input: {}", path.display())))
}

fn ensure_out_dir(config: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&config.output.dir)?;
    Ok(config.output.dir.clone())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Validation(format!("cannot encode {}: {e}", path.display())))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn features_path(config: &RunConfig) -> Result<&Path> {
    config
        .inputs
        .features
        .as_deref()
        .ok_or_else(|| Error::validation("missing input: [inputs].features is not set"))
}

fn load_filtered_panel(config: &RunConfig) -> Result<(PanelDataset<f64>, FilterReport)> {
    let gva = open_input(&config.inputs.gva)?;
    let regions = open_input(&config.inputs.regions)?;
    let panel = load_panel::<f64>(gva, regions)?;
    apply_filters(
        &panel,
        config.filters.max_abs_growth,
        config.filters.min_periods,
    )
}

fn load_features(config: &RunConfig) -> Result<MomentFeatures<f64>> {
    let path = features_path(config)?;
    let features = read_features_csv::<f64>(open_input(path)?)?;
    if features.k_max() != config.model.k_moments {
        return Err(Error::Validation(format!(
            "feature table {} carries moments up to K={}, but the config asks for K={}",
            path.display(),
            features.k_max(),
            config.model.k_moments
        )));
    }
    Ok(features)
}

fn build_design(
    config: &RunConfig,
    panel: &PanelDataset<f64>,
    features: &MomentFeatures<f64>,
) -> Result<(TransformedDesign<f64>, AssemblyReport)> {
    let options = AssemblyOptions {
        fe: config.model.fe,
        include_coords: config.model.location_inputs,
        strict: false,
    };
    let (raw, report) = assemble_design(panel, features, &options)?;
    let design = within_transform(&raw)?;
    Ok((design, report))
}

/// Reads the fit produced by `fit`/`select` and checks it matches the
/// design the config would build.
fn load_fit(config: &RunConfig, fit_path: &Path) -> Result<FitResult<f64>> {
    let fit = read_fit_json::<f64>(open_input(fit_path)?)?;
    if fit.fe_spec != config.model.fe {
        return Err(Error::Validation(format!(
            "{} was estimated with fe = {:?} but the config requests fe = {:?}",
            fit_path.display(),
            fit.fe_spec,
            config.model.fe
        )));
    }
    Ok(fit)
}

/// Builds moment features from the daily temperature series.
pub fn cmd_ingest(config: &RunConfig) -> Result<()> {
    let out = ensure_out_dir(config)?;
    let temps = config
        .inputs
        .temps
        .as_deref()
        .ok_or_else(|| Error::validation("missing input: [inputs].temps is not set"))?;
    let records = read_daily_csv::<f64>(open_input(temps)?)?;
    let options = FeatureOptions {
        k_max: config.model.k_moments,
        min_days: config.filters.min_days,
    };
    let (features, report) = build_features(&records, &options)?;
    write_features_csv(&features, File::create(out.join("features.csv"))?)?;
    write_json(
        &out.join("ingest_report.json"),
        &serde_json::json!({
            "k_moments": config.model.k_moments,
            "min_days": config.filters.min_days,
            "coverage": report,
        }),
    )?;
    write_manifest("ingest", config, &[("temps", temps)], &out)
}

fn fit_inputs<'a>(config: &'a RunConfig) -> Result<Vec<(&'static str, &'a Path)>> {
    Ok(vec![
        ("gva", config.inputs.gva.as_path()),
        ("regions", config.inputs.regions.as_path()),
        ("features", features_path(config)?),
    ])
}

/// Estimates the configured model and writes `fit.json` plus diagnostics.
pub fn cmd_fit(config: &RunConfig) -> Result<()> {
    let out = ensure_out_dir(config)?;
    let (panel, filter_report) = load_filtered_panel(config)?;
    let features = load_features(config)?;
    let (design, assembly_report) = build_design(config, &panel, &features)?;
    let fit = match config.model.kind {
        ModelKind::Linear => fit_linear(&design)?,
        ModelKind::Slfn => {
            let n_hidden = config.model.n_hidden.ok_or_else(|| {
                Error::validation("model.n_hidden must be set for a network fit")
            })?;
            fit_slfn(&design, n_hidden, &config.fit.to_options())?
        }
    };
    write_fit_json(&fit, File::create(out.join("fit.json"))?)?;
    write_fit_diagnostics(&out, &fit, &design, &filter_report, &assembly_report)?;
    write_manifest("fit", config, &fit_inputs(config)?, &out)
}

fn write_fit_diagnostics(
    out: &Path,
    fit: &FitResult<f64>,
    design: &TransformedDesign<f64>,
    filter_report: &FilterReport,
    assembly_report: &AssemblyReport,
) -> Result<()> {
    let demeaning = residual_sum_diagnostics(design);
    write_json(
        &out.join("diagnostics.json"),
        &serde_json::json!({
            "filter": filter_report,
            "assembly": assembly_report,
            "demeaning": demeaning,
            "n": fit.n,
            "df": fit.df,
            "sse": fit.sse,
            "sigma_hat": fit.sigma_hat,
            "aic": fit.aic,
            "bic": fit.bic,
            "converged": fit.converged,
            "warnings": fit.warnings,
        }),
    )
}

/// Compares hidden widths and keeps the winner as `fit.json`.
pub fn cmd_select(config: &RunConfig) -> Result<()> {
    let out = ensure_out_dir(config)?;
    if config.model.kind != ModelKind::Slfn {
        return Err(Error::validation("select requires model.kind = \"slfn\""));
    }
    if config.model.h_candidates.is_empty() {
        return Err(Error::validation("model.h_candidates must be nonempty for select"));
    }
    let (panel, filter_report) = load_filtered_panel(config)?;
    let features = load_features(config)?;
    let (design, assembly_report) = build_design(config, &panel, &features)?;
    let selection = select_model(
        &design,
        &config.model.h_candidates,
        config.model.criterion,
        &config.fit.to_options(),
    )?;
    write_selection_csv(&selection, File::create(out.join("selection.csv"))?)?;
    let best = selection.best();
    write_fit_json(best, File::create(out.join("fit.json"))?)?;
    write_fit_diagnostics(&out, best, &design, &filter_report, &assembly_report)?;
    write_manifest("select", config, &fit_inputs(config)?, &out)
}

/// Marginal-effect curves (and optionally an interaction trace or a fitted
/// surface) around the design means.
pub fn cmd_margins(config: &RunConfig, fit_path: Option<&Path>) -> Result<()> {
    let out = ensure_out_dir(config)?;
    let default_fit = out.join("fit.json");
    let fit_path = fit_path.unwrap_or(&default_fit);
    let fit = load_fit(config, fit_path)?;
    let (panel, _) = load_filtered_panel(config)?;
    let features = load_features(config)?;
    let (design, _) = build_design(config, &panel, &features)?;

    let points = config.margins.grid_points;
    let level = config.margins.level;
    let single = config.margins.varied.len() == 1;
    for &varied in &config.margins.varied {
        let grid = default_grid_points(&design, varied, points)?;
        let curve = marginal_curve(&fit, &design, varied, &grid, level)?;
        let column = design.column_names()[varied].clone();
        let stem = if single {
            "margins".to_string()
        } else {
            format!("margins_{column}")
        };
        write_margins_csv(&curve, File::create(out.join(format!("{stem}.csv")))?)?;
        if config.margins.svg {
            let svg = curve_svg(&curve, &column, "response");
            fs::write(out.join(format!("{stem}.svg")), svg)?;
        }
    }

    if let Some(direction) = &config.margins.direction {
        let grid = direction_grid(&design, direction, points)?;
        let curve = interaction_curve(&fit, &design, direction, &grid, level)?;
        write_margins_csv(&curve, File::create(out.join("interaction.csv"))?)?;
        if config.margins.svg {
            let svg = curve_svg(&curve, "direction scale", "response");
            fs::write(out.join("interaction.svg"), svg)?;
        }
    }

    if let Some([i, j]) = config.margins.contour {
        let grid_i = default_grid_points(&design, i, points)?;
        let grid_j = default_grid_points(&design, j, points)?;
        let surface = contour_grid(&fit, &design, (i, j), &grid_i, &grid_j)?;
        write_contour_csv(&surface, File::create(out.join("contour.csv"))?)?;
    }

    let mut inputs = fit_inputs(config)?;
    inputs.push(("fit", fit_path));
    write_manifest("margins", config, &inputs, &out)
}

/// Scale grid for a direction trace: the central 98% of the per-row
/// projections onto the direction, so the trace spans the data like the
/// single-column grids do.
fn direction_grid(
    design: &TransformedDesign<f64>,
    direction: &[f64],
    n_points: usize,
) -> Result<Vec<f64>> {
    if direction.len() != design.n_inputs() {
        return Err(Error::Validation(format!(
            "margins.direction has {} entries but the design has {} inputs",
            direction.len(),
            design.n_inputs()
        )));
    }
    let norm2: f64 = direction.iter().map(|d| d * d).sum();
    if norm2 == 0.0 {
        return Err(Error::validation("margins.direction must be nonzero"));
    }
    let mut scales: Vec<f64> = design
        .rows()
        .iter()
        .map(|row| {
            row.x
                .iter()
                .zip(direction)
                .map(|(x, d)| x * d)
                .sum::<f64>()
                / norm2
        })
        .collect();
    scales.sort_by(|a, b| a.total_cmp(b));
    let lo = quantile_sorted(&scales, 0.01);
    let hi = quantile_sorted(&scales, 0.99);
    if !(hi > lo) {
        return Err(Error::Numerical(
            "projections onto the direction are all equal; no grid to build".into(),
        ));
    }
    let step = (hi - lo) / (n_points - 1) as f64;
    Ok((0..n_points).map(|k| lo + step * k as f64).collect())
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let position = q * (sorted.len() - 1) as f64;
    let below = position.floor() as usize;
    let above = position.ceil() as usize;
    let weight = position - below as f64;
    sorted[below] * (1.0 - weight) + sorted[above] * weight
}

/// Applies a uniform shift to every observation's moment inputs and reports
/// per-region mean response changes.
pub fn cmd_scenario(
    config: &RunConfig,
    fit_path: Option<&Path>,
    shift_override: Option<Vec<f64>>,
) -> Result<()> {
    let out = ensure_out_dir(config)?;
    let shift = match shift_override {
        Some(shift) => shift,
        None if !config.scenario.shift.is_empty() => config.scenario.shift.clone(),
        None => {
            return Err(Error::validation(
                "no shift given: set [scenario].shift or pass --shift",
            ))
        }
    };
    let default_fit = out.join("fit.json");
    let fit_path = fit_path.unwrap_or(&default_fit);
    let fit = load_fit(config, fit_path)?;
    let (panel, _) = load_filtered_panel(config)?;
    let features = load_features(config)?;
    let (design, _) = build_design(config, &panel, &features)?;
    let result = scenario_uniform_shift(&fit, &design, &shift)?;
    write_scenario_csv(&result, File::create(out.join("scenario.csv"))?)?;
    let mut inputs = fit_inputs(config)?;
    inputs.push(("fit", fit_path));
    write_manifest("scenario", config, &inputs, &out)
}
