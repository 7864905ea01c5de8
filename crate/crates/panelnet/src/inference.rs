//! Pointwise uncertainty for fitted response surfaces: delta-method
//! prediction variances, marginal-effect curves and grids with confidence
//! bands, location-specific curves, and uniform-shift scenario simulation.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::moments::moment;
use crate::panel::RegionMeta;
use crate::within::TransformedDesign;
use crate::Scalar;

/// A fitted curve along one input direction with pointwise confidence
/// bounds. Grid values are in transformed design units, so for within
/// models they read as deviations from the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalCurve<S> {
    /// Index of the varied input; `None` for direction slices.
    pub varied: Option<usize>,
    pub grid: Vec<S>,
    pub fitted: Vec<S>,
    pub lower: Vec<S>,
    pub upper: Vec<S>,
    pub level: S,
    pub warnings: Vec<String>,
}

/// Fitted values over a Cartesian grid in two inputs, other inputs held at
/// their design means. `fitted[a * grid_j.len() + b]` pairs `grid_i[a]`
/// with `grid_j[b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourGrid<S> {
    pub input_i: usize,
    pub input_j: usize,
    pub grid_i: Vec<S>,
    pub grid_j: Vec<S>,
    pub fitted: Vec<S>,
}

impl<S: Scalar> ContourGrid<S> {
    pub fn value(&self, a: usize, b: usize) -> S {
        self.fitted[a * self.grid_j.len() + b]
    }
}

/// Per-region mean predictions under a baseline and a shifted scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRegion<S> {
    pub region_id: String,
    pub baseline: S,
    pub scenario: S,
    pub delta: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult<S> {
    /// The applied shift over the moment inputs, in design units.
    pub shift: Vec<S>,
    pub regions: Vec<ScenarioRegion<S>>,
}

/// Factored inverse Hessian for repeated variance evaluations. Falls back
/// to a Moore-Penrose pseudo-inverse when the Hessian is singular; the
/// fallback is reported so callers can flag affected intervals.
pub struct PredictionVariance<'a, S: Scalar> {
    fit: &'a FitResult<S>,
    inverse: DMatrix<S>,
    used_pseudo_inverse: bool,
}

impl<'a, S: Scalar> PredictionVariance<'a, S> {
    pub fn new(fit: &'a FitResult<S>) -> Result<Self> {
        let h = fit.hessian.to_matrix();
        if h.nrows() != fit.n_explicit_params() {
            return Err(Error::validation("hessian size does not match parameter count"));
        }
        let (inverse, used_pseudo_inverse) = match Cholesky::new(h.clone()) {
            Some(chol) => (chol.inverse(), false),
            None => {
                let svd = h.svd(true, true);
                let max_sv = svd
                    .singular_values
                    .iter()
                    .fold(S::zero(), |a, b| a.max(*b));
                let tol = S::EPS * S::from_count(fit.n_explicit_params()) * max_sv;
                let pinv = svd.pseudo_inverse(tol).map_err(Error::numerical)?;
                (pinv, true)
            }
        };
        Ok(PredictionVariance {
            fit,
            inverse,
            used_pseudo_inverse,
        })
    }

    pub fn used_pseudo_inverse(&self) -> bool {
        self.used_pseudo_inverse
    }

    /// Delta-method variance of the fitted response at `x`:
    /// `sigma_hat^2 * g' H^{-1} g` with `g` the parameter gradient,
    /// clamped to be non-negative.
    pub fn variance(&self, x: &[S]) -> Result<S> {
        let g = DVector::from_vec(self.fit.param_gradient(x)?);
        let quad = (g.transpose() * &self.inverse * &g)[(0, 0)];
        let s2 = self.fit.sigma_hat * self.fit.sigma_hat;
        Ok((s2 * quad).max(S::zero()))
    }
}

/// One-shot delta-method variance of the prediction at `x`.
pub fn prediction_variance<S: Scalar>(fit: &FitResult<S>, x: &[S]) -> Result<S> {
    PredictionVariance::new(fit)?.variance(x)
}

fn check_design_compat<S: Scalar>(fit: &FitResult<S>, design: &TransformedDesign<S>) -> Result<()> {
    if fit.n_inputs() != design.n_inputs() {
        return Err(Error::Validation(format!(
            "fit has {} inputs but design has {}",
            fit.n_inputs(),
            design.n_inputs()
        )));
    }
    Ok(())
}

fn validate_grid<S: Scalar>(grid: &[S]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::validation("grid must be nonempty"));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("grid values must be finite"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::validation("grid must be strictly increasing"));
    }
    Ok(())
}

/// Column means of the substantive inputs (near zero after a within
/// transform).
pub fn design_means<S: Scalar>(design: &TransformedDesign<S>) -> Vec<S> {
    let j = design.n_inputs();
    (0..j)
        .map(|c| {
            let col: Vec<S> = design.rows().iter().map(|r| r.x[c]).collect();
            moment(&col, 1).expect("nonempty column")
        })
        .collect()
}

fn t_quantile<S: Scalar>(level: S, dof: usize) -> Result<S> {
    let lf = level.as_f64();
    if !(lf > 0.0 && lf < 1.0) {
        return Err(Error::validation("confidence level must be in (0, 1)"));
    }
    let dist = StudentsT::new(0.0, 1.0, dof as f64)
        .map_err(|e| Error::numerical(format!("t distribution: {e}")))?;
    Ok(S::c(dist.inverse_cdf(1.0 - (1.0 - lf) / 2.0)))
}

/// Evaluates the fit and its pointwise confidence band over explicit
/// evaluation points.
fn band_over_points<S: Scalar>(
    fit: &FitResult<S>,
    points: &[Vec<S>],
    grid: Vec<S>,
    varied: Option<usize>,
    level: S,
) -> Result<MarginalCurve<S>> {
    let pv = PredictionVariance::new(fit)?;
    let t = t_quantile(level, fit.n - fit.df)?;
    let mut fitted = Vec::with_capacity(points.len());
    let mut lower = Vec::with_capacity(points.len());
    let mut upper = Vec::with_capacity(points.len());
    for x in points {
        let f = fit.predict(x)?;
        let half = t * pv.variance(x)?.sqrt();
        fitted.push(f);
        lower.push(f - half);
        upper.push(f + half);
    }
    let mut warnings = Vec::new();
    if pv.used_pseudo_inverse() {
        warnings.push(
            "singular hessian: confidence intervals use a pseudo-inverse".to_string(),
        );
    }
    Ok(MarginalCurve {
        varied,
        grid,
        fitted,
        lower,
        upper,
        level,
        warnings,
    })
}

/// Marginal-effect-at-the-mean curve: input `varied` sweeps the grid while
/// every other input is held at its design mean.
pub fn marginal_curve<S: Scalar>(
    fit: &FitResult<S>,
    design: &TransformedDesign<S>,
    varied: usize,
    grid: &[S],
    level: S,
) -> Result<MarginalCurve<S>> {
    check_design_compat(fit, design)?;
    if varied >= fit.n_inputs() {
        return Err(Error::Validation(format!(
            "varied input {varied} out of range (J = {})",
            fit.n_inputs()
        )));
    }
    validate_grid(grid)?;
    let means = design_means(design);
    let points: Vec<Vec<S>> = grid
        .iter()
        .map(|&g| {
            let mut x = means.clone();
            x[varied] = g;
            x
        })
        .collect();
    band_over_points(fit, &points, grid.to_vec(), Some(varied), level)
}

/// Curve along `mean + s * direction` for `s` in the grid.
pub fn interaction_curve<S: Scalar>(
    fit: &FitResult<S>,
    design: &TransformedDesign<S>,
    direction: &[S],
    grid: &[S],
    level: S,
) -> Result<MarginalCurve<S>> {
    check_design_compat(fit, design)?;
    if direction.len() != fit.n_inputs() {
        return Err(Error::validation("direction has wrong dimension"));
    }
    if direction.iter().all(|d| *d == S::zero()) {
        return Err(Error::validation("direction must be nonzero"));
    }
    validate_grid(grid)?;
    let means = design_means(design);
    let points: Vec<Vec<S>> = grid
        .iter()
        .map(|&s| {
            means
                .iter()
                .zip(direction)
                .map(|(&m, &d)| m + s * d)
                .collect()
        })
        .collect();
    band_over_points(fit, &points, grid.to_vec(), None, level)
}

/// Fitted values over a two-input Cartesian grid, other inputs at design
/// means.
pub fn contour_grid<S: Scalar>(
    fit: &FitResult<S>,
    design: &TransformedDesign<S>,
    inputs: (usize, usize),
    grid_i: &[S],
    grid_j: &[S],
) -> Result<ContourGrid<S>> {
    check_design_compat(fit, design)?;
    let (i, j) = inputs;
    if i == j {
        return Err(Error::validation("contour inputs must differ"));
    }
    let n_inputs = fit.n_inputs();
    if i >= n_inputs || j >= n_inputs {
        return Err(Error::validation("contour input index out of range"));
    }
    validate_grid(grid_i)?;
    validate_grid(grid_j)?;
    let means = design_means(design);
    let mut fitted = Vec::with_capacity(grid_i.len() * grid_j.len());
    let mut x = means;
    for &vi in grid_i {
        for &vj in grid_j {
            x[i] = vi;
            x[j] = vj;
            fitted.push(fit.predict(&x)?);
        }
    }
    Ok(ContourGrid {
        input_i: i,
        input_j: j,
        grid_i: grid_i.to_vec(),
        grid_j: grid_j.to_vec(),
        fitted,
    })
}

/// Marginal curve with the latitude/longitude inputs pinned to one
/// region's centroid. Requires a design whose inputs end with the two
/// location columns.
pub fn location_curve<S: Scalar>(
    fit: &FitResult<S>,
    design: &TransformedDesign<S>,
    region: &RegionMeta<S>,
    varied: usize,
    grid: &[S],
    level: S,
) -> Result<MarginalCurve<S>> {
    check_design_compat(fit, design)?;
    let j_m = design.n_moment_inputs();
    if design.n_inputs() != j_m + 2 {
        return Err(Error::validation(
            "design has no location inputs (lat, lon columns)",
        ));
    }
    if varied >= j_m {
        return Err(Error::Validation(format!(
            "varied input {varied} must be a moment input (K = {j_m})"
        )));
    }
    validate_grid(grid)?;
    let mut means = design_means(design);
    means[j_m] = region.latitude;
    means[j_m + 1] = region.longitude;
    let points: Vec<Vec<S>> = grid
        .iter()
        .map(|&g| {
            let mut x = means.clone();
            x[varied] = g;
            x
        })
        .collect();
    band_over_points(fit, &points, grid.to_vec(), Some(varied), level)
}

/// Applies a uniform shift to the moment inputs of every observation, in
/// transformed design units, and averages the prediction change per
/// region.
///
/// The shift is added directly in the transformed input space (then scaled
/// by the fit's standardization): a shift uniform across regions would
/// otherwise be absorbed by year demeaning, which would make every uniform
/// scenario a no-op under time effects.
pub fn scenario_uniform_shift<S: Scalar>(
    fit: &FitResult<S>,
    design: &TransformedDesign<S>,
    shift: &[S],
) -> Result<ScenarioResult<S>> {
    check_design_compat(fit, design)?;
    if shift.len() != design.n_moment_inputs() {
        return Err(Error::Validation(format!(
            "shift has dimension {}, expected {} moment inputs",
            shift.len(),
            design.n_moment_inputs()
        )));
    }
    if shift.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("shift values must be finite"));
    }
    let j = design.n_inputs();
    let mut padded = vec![S::zero(); j];
    padded[..shift.len()].copy_from_slice(shift);

    let rows = design.rows();
    let mut regions = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let region_id = rows[start].region_id.clone();
        let mut end = start;
        while end < rows.len() && rows[end].region_id == region_id {
            end += 1;
        }
        let mut baseline = S::zero();
        let mut scenario = S::zero();
        let mut shifted = vec![S::zero(); j];
        for row in &rows[start..end] {
            for c in 0..j {
                shifted[c] = row.x[c] + padded[c];
            }
            baseline += fit.predict(&row.x[..j])?;
            scenario += fit.predict(&shifted)?;
        }
        let count = S::from_count(end - start);
        baseline /= count;
        scenario /= count;
        regions.push(ScenarioRegion {
            region_id,
            baseline,
            scenario,
            delta: scenario - baseline,
        });
        start = end;
    }
    Ok(ScenarioResult {
        shift: shift.to_vec(),
        regions,
    })
}

/// Interpolated `p`-quantile of a sorted sample.
fn quantile_sorted<S: Scalar>(sorted: &[S], p: f64) -> S {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let w = S::c(h - lo as f64);
    sorted[lo] + w * (sorted[hi] - sorted[lo])
}

/// Evenly spaced evaluation grid spanning the central 98% range of an
/// observed input, with the default 101 points.
pub fn default_grid<S: Scalar>(design: &TransformedDesign<S>, input: usize) -> Result<Vec<S>> {
    default_grid_points(design, input, 101)
}

pub fn default_grid_points<S: Scalar>(
    design: &TransformedDesign<S>,
    input: usize,
    n_points: usize,
) -> Result<Vec<S>> {
    if input >= design.n_inputs() {
        return Err(Error::validation("grid input index out of range"));
    }
    if n_points < 2 {
        return Err(Error::validation("grid needs at least 2 points"));
    }
    let mut col: Vec<S> = design.rows().iter().map(|r| r.x[input]).collect();
    col.sort_by(|a, b| a.partial_cmp(b).expect("finite design values"));
    let lo = quantile_sorted(&col, 0.01);
    let hi = quantile_sorted(&col, 0.99);
    if !(hi > lo) {
        return Err(Error::numerical(
            "degenerate input range: cannot build an evaluation grid",
        ));
    }
    let step = (hi - lo) / S::from_count(n_points - 1);
    Ok((0..n_points)
        .map(|k| lo + S::from_count(k) * step)
        .collect())
}

/// Writes a curve as CSV: `grid_value,fit,lower,upper`.
pub fn write_margins_csv<S: Scalar>(curve: &MarginalCurve<S>, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["grid_value", "fit", "lower", "upper"])?;
    for i in 0..curve.grid.len() {
        w.write_record([
            curve.grid[i].to_string(),
            curve.fitted[i].to_string(),
            curve.lower[i].to_string(),
            curve.upper[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a contour grid in long format: `x_i,x_j,fit`.
pub fn write_contour_csv<S: Scalar>(grid: &ContourGrid<S>, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x_i", "x_j", "fit"])?;
    for (a, &vi) in grid.grid_i.iter().enumerate() {
        for (b, &vj) in grid.grid_j.iter().enumerate() {
            w.write_record([
                vi.to_string(),
                vj.to_string(),
                grid.value(a, b).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes per-region scenario results: `region_id,baseline,scenario,delta`.
pub fn write_scenario_csv<S: Scalar>(result: &ScenarioResult<S>, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["region_id", "baseline", "scenario", "delta"])?;
    for r in &result.regions {
        w.write_record([
            r.region_id.clone(),
            r.baseline.to_string(),
            r.scenario.to_string(),
            r.delta.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Renders a curve with its confidence band as a standalone 800x600 SVG
/// line plot.
pub fn curve_svg<S: Scalar>(curve: &MarginalCurve<S>, x_label: &str, y_label: &str) -> String {
    const W: f64 = 800.0;
    const H: f64 = 600.0;
    const L: f64 = 70.0;
    const R: f64 = 770.0;
    const T: f64 = 40.0;
    const B: f64 = 540.0;

    let xs: Vec<f64> = curve.grid.iter().map(|v| v.as_f64()).collect();
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for v in curve.lower.iter().chain(&curve.upper).chain(&curve.fitted) {
        y_min = y_min.min(v.as_f64());
        y_max = y_max.max(v.as_f64());
    }
    let x_min = xs.first().copied().unwrap_or(0.0);
    let x_max = xs.last().copied().unwrap_or(1.0);
    let x_span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let y_span = if y_max > y_min { y_max - y_min } else { 1.0 };
    let px = |x: f64| L + (x - x_min) / x_span * (R - L);
    let py = |y: f64| B - (y - y_min) / y_span * (B - T);

    let polyline = |values: &[S]| -> String {
        values
            .iter()
            .zip(&xs)
            .map(|(v, &x)| format!("{:.2},{:.2}", px(x), py(v.as_f64())))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "  <line x1=\"{L}\" y1=\"{B}\" x2=\"{R}\" y2=\"{B}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "  <line x1=\"{L}\" y1=\"{T}\" x2=\"{L}\" y2=\"{B}\" stroke=\"black\"/>\n"
    ));
    for (values, style) in [
        (&curve.lower, "stroke=\"steelblue\" stroke-dasharray=\"6 4\""),
        (&curve.upper, "stroke=\"steelblue\" stroke-dasharray=\"6 4\""),
        (&curve.fitted, "stroke=\"black\" stroke-width=\"2\""),
    ] {
        svg.push_str(&format!(
            "  <polyline fill=\"none\" {} points=\"{}\"/>\n",
            style,
            polyline(values)
        ));
    }
    // Axis extent labels plus the axis titles.
    svg.push_str(&format!(
        "  <text x=\"{L}\" y=\"{:.0}\" font-size=\"14\" text-anchor=\"middle\">{x_min:.3}</text>\n",
        B + 24.0
    ));
    svg.push_str(&format!(
        "  <text x=\"{R}\" y=\"{:.0}\" font-size=\"14\" text-anchor=\"middle\">{x_max:.3}</text>\n",
        B + 24.0
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.0}\" y=\"{:.0}\" font-size=\"14\" text-anchor=\"end\">{y_min:.3}</text>\n",
        L - 8.0,
        B
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.0}\" y=\"{:.0}\" font-size=\"14\" text-anchor=\"end\">{y_max:.3}</text>\n",
        L - 8.0,
        T + 6.0
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.0}\" y=\"{:.0}\" font-size=\"16\" text-anchor=\"middle\">{x_label}</text>\n",
        (L + R) / 2.0,
        H - 20.0
    ));
    svg.push_str(&format!(
        "  <text x=\"20\" y=\"{:.0}\" font-size=\"16\" text-anchor=\"middle\" transform=\"rotate(-90 20 {:.0})\">{y_label}</text>\n",
        (T + B) / 2.0,
        (T + B) / 2.0
    ));
    svg.push_str("</svg>\n");
    svg
}
