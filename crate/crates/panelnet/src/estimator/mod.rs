//! Model estimation on a transformed design: ordinary least squares for the
//! linear specification, multi-start nonlinear least squares for the
//! network specification, plus degrees-of-freedom bookkeeping, information
//! criteria, Hessian approximations, and hidden-layer-width selection.

pub mod lm;

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::moment;
use crate::slfn::{SlfnParams, SlfnSpec};
use crate::within::{FeKind, TransformedDesign};
use crate::Scalar;
use lm::{LeastSquaresProblem, LmOptions, LmOutcome};

/// How the parameter Hessian is approximated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    /// Cross-product of per-row parameter gradients (J'J). Exact for linear
    /// models, where it equals X'X.
    GaussNewton,
    /// Central finite differences of SSE/2 using function values only.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Slfn,
}

/// Options for [`fit_slfn`] and [`select_model`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions<S> {
    pub restarts: usize,
    pub seed: u64,
    pub max_iterations: usize,
    pub gradient_tolerance: S,
    pub step_tolerance: S,
    /// Scale of the random hidden-weight initialization.
    pub init_scale: S,
    pub hessian_mode: HessianMode,
}

impl<S: Scalar> Default for FitOptions<S> {
    fn default() -> Self {
        FitOptions {
            restarts: 20,
            seed: 0,
            max_iterations: 200,
            gradient_tolerance: S::c(1e-8),
            step_tolerance: S::c(1e-10),
            init_scale: S::one(),
            hessian_mode: HessianMode::GaussNewton,
        }
    }
}

impl<S: Scalar> FitOptions<S> {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::validation("restarts must be >= 1"));
        }
        if self.max_iterations == 0 {
            return Err(Error::validation("max_iterations must be >= 1"));
        }
        if !(self.gradient_tolerance > S::zero()) || !(self.step_tolerance > S::zero()) {
            return Err(Error::validation("tolerances must be > 0"));
        }
        if !(self.init_scale > S::zero()) {
            return Err(Error::validation("init_scale must be > 0"));
        }
        Ok(())
    }

    fn lm_options(&self) -> LmOptions<S> {
        LmOptions {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            step_tolerance: self.step_tolerance,
            ..LmOptions::default()
        }
    }
}

/// Per-column z-score constants applied to network inputs. Stored with the
/// fit so that predictions accept inputs in design units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization<S> {
    pub means: Vec<S>,
    pub sds: Vec<S>,
}

impl<S: Scalar> Standardization<S> {
    pub fn identity(n_inputs: usize) -> Self {
        Standardization {
            means: vec![S::zero(); n_inputs],
            sds: vec![S::one(); n_inputs],
        }
    }

    /// Column means and population standard deviations of the substantive
    /// inputs; zero-variance columns keep scale 1.
    pub fn fit(design: &TransformedDesign<S>) -> Self {
        let j = design.n_inputs();
        let mut means = Vec::with_capacity(j);
        let mut sds = Vec::with_capacity(j);
        for c in 0..j {
            let col: Vec<S> = design.rows().iter().map(|r| r.x[c]).collect();
            // A design always has rows, so the moments exist.
            means.push(moment(&col, 1).expect("nonempty column"));
            let sd = moment(&col, 2).expect("nonempty column").sqrt();
            sds.push(if sd > S::zero() { sd } else { S::one() });
        }
        Standardization { means, sds }
    }

    pub fn n_inputs(&self) -> usize {
        self.means.len()
    }

    pub fn apply_into(&self, x: &[S], out: &mut [S]) {
        for ((o, &v), (&m, &s)) in out
            .iter_mut()
            .zip(x)
            .zip(self.means.iter().zip(&self.sds))
        {
            *o = (v - m) / s;
        }
    }

    pub fn apply(&self, x: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); x.len()];
        self.apply_into(x, &mut out);
        out
    }
}

/// Square matrix stored row-major for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianMatrix<S> {
    pub dim: usize,
    /// Row-major entries, length `dim * dim`.
    pub data: Vec<S>,
}

impl<S: Scalar> HessianMatrix<S> {
    pub fn zeros(dim: usize) -> Self {
        HessianMatrix {
            dim,
            data: vec![S::zero(); dim * dim],
        }
    }

    pub fn from_matrix(m: &DMatrix<S>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "hessian must be square");
        let dim = m.nrows();
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(m[(i, j)]);
            }
        }
        HessianMatrix { dim, data }
    }

    pub fn to_matrix(&self) -> DMatrix<S> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.data[i * self.dim + j])
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.dim + j]
    }
}

/// Outcome of one random restart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary<S> {
    pub restart: usize,
    pub sse: S,
    pub iterations: usize,
    pub converged: bool,
}

/// Estimated mean-function parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub enum FittedParams<S> {
    /// OLS coefficients over the physical design columns (`const` last when
    /// present).
    Linear { beta: Vec<S> },
    Slfn(SlfnParams<S>),
}

/// A fitted model with its diagnostics; serializes to the fit JSON format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct FitResult<S> {
    pub model: ModelKind,
    pub fe_spec: FeKind,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub n_hidden: Option<usize>,
    pub has_constant: bool,
    pub params: FittedParams<S>,
    /// Input z-score constants (network fits only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization<S>>,
    pub sse: S,
    pub n: usize,
    /// Mean-function parameter count including absorbed fixed effects.
    pub df: usize,
    pub sigma_hat: S,
    /// `None` when the criteria are undefined (zero SSE).
    pub aic: Option<S>,
    pub bic: Option<S>,
    pub hessian: HessianMatrix<S>,
    pub restart_summaries: Vec<RestartSummary<S>>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl<S: Scalar> FitResult<S> {
    /// Substantive input dimension J.
    pub fn n_inputs(&self) -> usize {
        match &self.params {
            FittedParams::Linear { beta } => beta.len() - usize::from(self.has_constant),
            FittedParams::Slfn(p) => p.spec().n_inputs,
        }
    }

    /// Number of explicitly estimated parameters (excludes absorbed fixed
    /// effects); the Hessian is this size.
    pub fn n_explicit_params(&self) -> usize {
        match &self.params {
            FittedParams::Linear { beta } => beta.len(),
            FittedParams::Slfn(p) => p.spec().param_count(),
        }
    }

    /// Explicit parameters in flat layout.
    pub fn flat_params(&self) -> Vec<S> {
        match &self.params {
            FittedParams::Linear { beta } => beta.clone(),
            FittedParams::Slfn(p) => p.to_flat(),
        }
    }

    fn check_input(&self, x: &[S]) -> Result<()> {
        if x.len() != self.n_inputs() {
            return Err(Error::Validation(format!(
                "input has dimension {}, expected {}",
                x.len(),
                self.n_inputs()
            )));
        }
        Ok(())
    }

    fn slfn_parts(&self) -> Result<(&SlfnParams<S>, &Standardization<S>)> {
        let FittedParams::Slfn(params) = &self.params else {
            return Err(Error::validation("not a network fit"));
        };
        let std = self
            .standardization
            .as_ref()
            .ok_or_else(|| Error::validation("network fit lacks standardization constants"))?;
        Ok((params, std))
    }

    /// Fitted mean response at a substantive input vector (design units).
    pub fn predict(&self, x: &[S]) -> Result<S> {
        self.check_input(x)?;
        match &self.params {
            FittedParams::Linear { beta } => {
                let mut out = S::zero();
                for (b, v) in beta.iter().zip(x) {
                    out += *b * *v;
                }
                if self.has_constant {
                    out += beta[x.len()];
                }
                Ok(out)
            }
            FittedParams::Slfn(_) => {
                let (params, std) = self.slfn_parts()?;
                params.forward(&std.apply(x))
            }
        }
    }

    /// Gradient of the prediction w.r.t. the explicit parameters, written
    /// to `out` in flat layout.
    pub fn param_gradient_into(&self, x: &[S], out: &mut [S]) -> Result<()> {
        self.check_input(x)?;
        if out.len() != self.n_explicit_params() {
            return Err(Error::validation("gradient buffer has wrong length"));
        }
        match &self.params {
            FittedParams::Linear { .. } => {
                out[..x.len()].copy_from_slice(x);
                if self.has_constant {
                    out[x.len()] = S::one();
                }
                Ok(())
            }
            FittedParams::Slfn(_) => {
                let (params, std) = self.slfn_parts()?;
                params.grad_params_into(&std.apply(x), out)
            }
        }
    }

    pub fn param_gradient(&self, x: &[S]) -> Result<Vec<S>> {
        let mut out = vec![S::zero(); self.n_explicit_params()];
        self.param_gradient_into(x, &mut out)?;
        Ok(out)
    }

    /// Gradient of the prediction w.r.t. the substantive inputs, in design
    /// units (standardization chain rule applied).
    pub fn input_gradient(&self, x: &[S]) -> Result<Vec<S>> {
        self.check_input(x)?;
        match &self.params {
            FittedParams::Linear { beta } => Ok(beta[..x.len()].to_vec()),
            FittedParams::Slfn(_) => {
                let (params, std) = self.slfn_parts()?;
                let mut g = params.grad_input(&std.apply(x))?;
                for (gj, sd) in g.iter_mut().zip(&std.sds) {
                    *gj /= *sd;
                }
                Ok(g)
            }
        }
    }

    /// Prediction with the explicit parameters replaced by `flat`.
    pub fn predict_with_flat(&self, flat: &[S], x: &[S]) -> Result<S> {
        self.check_input(x)?;
        if flat.len() != self.n_explicit_params() {
            return Err(Error::validation("parameter vector has wrong length"));
        }
        match &self.params {
            FittedParams::Linear { .. } => {
                let mut out = S::zero();
                for (b, v) in flat.iter().zip(x) {
                    out += *b * *v;
                }
                if self.has_constant {
                    out += flat[x.len()];
                }
                Ok(out)
            }
            FittedParams::Slfn(_) => {
                let (params, std) = self.slfn_parts()?;
                let replaced = SlfnParams::from_flat(params.spec(), flat)?;
                replaced.forward(&std.apply(x))
            }
        }
    }

    /// Residual sum of squares of this fit's model family under parameters
    /// `flat` on `design`.
    pub fn sse_with_flat(&self, flat: &[S], design: &TransformedDesign<S>) -> Result<S> {
        let j = self.n_inputs();
        let mut acc = S::zero();
        for row in design.rows() {
            let r = self.predict_with_flat(flat, &row.x[..j])? - row.y;
            acc += r * r;
        }
        Ok(acc)
    }

    /// Residuals (fitted minus observed) over a design.
    pub fn residuals(&self, design: &TransformedDesign<S>) -> Result<Vec<S>> {
        let j = self.n_inputs();
        design
            .rows()
            .iter()
            .map(|row| Ok(self.predict(&row.x[..j])? - row.y))
            .collect()
    }
}

/// Gaussian information criteria with `k = df` mean-function parameters:
/// `aic = n ln(2 pi SSE / n) + n + 2 df`, `bic` with `ln(n) df` instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationCriteria<S> {
    pub aic: S,
    pub bic: S,
    /// False when SSE = 0, where both criteria diverge to negative
    /// infinity (the stored values are the infinite sentinels).
    pub defined: bool,
}

pub fn information_criteria<S: Scalar>(
    sse: S,
    n: usize,
    df: usize,
) -> Result<InformationCriteria<S>> {
    if df == 0 {
        return Err(Error::validation("df must be >= 1"));
    }
    if n <= df {
        return Err(Error::Validation(format!(
            "need n > df (n = {n}, df = {df})"
        )));
    }
    if !sse.is_finite() || sse < S::zero() {
        return Err(Error::validation("SSE must be finite and non-negative"));
    }
    if sse == S::zero() {
        let neg_inf = S::c(f64::NEG_INFINITY);
        return Ok(InformationCriteria {
            aic: neg_inf,
            bic: neg_inf,
            defined: false,
        });
    }
    let nf = S::from_count(n);
    let dff = S::from_count(df);
    let base = nf * (S::c(2.0 * std::f64::consts::PI) * sse / nf).ln() + nf;
    Ok(InformationCriteria {
        aic: base + S::c(2.0) * dff,
        bic: base + nf.ln() * dff,
        defined: true,
    })
}

/// Mean-function parameter count of a model specification.
///
/// Linear: one slope per input, plus absorbed fixed effects, plus an
/// intercept in the pooled case. Network: the parameter count of the
/// architecture (hidden biases exist only in the pooled case), plus
/// absorbed fixed effects.
pub fn model_df(
    kind: ModelKind,
    fe: FeKind,
    n_inputs: usize,
    n_hidden: Option<usize>,
    n_regions: usize,
    n_years: usize,
) -> Result<usize> {
    match kind {
        ModelKind::Linear => Ok(n_inputs
            + fe.absorbed_params(n_regions, n_years)
            + usize::from(fe == FeKind::Pooled)),
        ModelKind::Slfn => {
            let h = n_hidden
                .ok_or_else(|| Error::validation("network models need a hidden unit count"))?;
            if h == 0 {
                return Err(Error::validation("hidden unit count must be >= 1"));
            }
            Ok(match fe {
                FeKind::Pooled => (n_inputs + 2) * h,
                _ => (n_inputs + 1) * h + fe.absorbed_params(n_regions, n_years),
            })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn finish<S: Scalar>(
    design: &TransformedDesign<S>,
    model: ModelKind,
    n_hidden: Option<usize>,
    params: FittedParams<S>,
    standardization: Option<Standardization<S>>,
    sse: S,
    df: usize,
    hessian: HessianMatrix<S>,
    restart_summaries: Vec<RestartSummary<S>>,
    mut warnings: Vec<String>,
) -> Result<FitResult<S>> {
    let n = design.n_rows();
    let sigma_hat = (sse / S::from_count(n - df)).sqrt();
    let ic = information_criteria(sse, n, df)?;
    if !ic.defined {
        warnings.push("zero residual sum of squares: information criteria undefined".to_string());
    }
    Ok(FitResult {
        model,
        fe_spec: design.kind(),
        n_hidden,
        has_constant: design.has_constant(),
        params,
        standardization,
        sse,
        n,
        df,
        sigma_hat,
        aic: ic.defined.then_some(ic.aic),
        bic: ic.defined.then_some(ic.bic),
        hessian,
        restart_summaries,
        converged: true,
        warnings,
    })
}

/// Ordinary least squares over the design's physical columns.
pub fn fit_linear<S: Scalar>(design: &TransformedDesign<S>) -> Result<FitResult<S>> {
    let x = design.x_matrix();
    let y = design.y_vector();
    let n = x.nrows();
    let p = x.ncols();
    let df = p + design.fe_param_count();
    if n <= df {
        return Err(Error::Validation(format!(
            "need more observations than parameters (n = {n}, df = {df})"
        )));
    }
    let svd = x.clone().svd(true, true);
    let max_sv = svd
        .singular_values
        .iter()
        .fold(S::zero(), |a, b| a.max(*b));
    let tol = S::EPS * S::from_count(n.max(p)) * max_sv;
    if svd.rank(tol) < p {
        return Err(Error::numerical(
            "design matrix is rank deficient (collinear columns)",
        ));
    }
    let beta = svd
        .solve(&y, tol)
        .map_err(Error::numerical)?;
    let residuals = &x * &beta - &y;
    let sse = residuals.norm_squared();
    let hessian = HessianMatrix::from_matrix(&(x.transpose() * &x));
    finish(
        design,
        ModelKind::Linear,
        None,
        FittedParams::Linear {
            beta: beta.as_slice().to_vec(),
        },
        None,
        sse,
        df,
        hessian,
        Vec::new(),
        Vec::new(),
    )
}

/// Network least-squares residuals over a standardized input table.
struct SlfnProblem<S> {
    spec: SlfnSpec,
    /// Row-major standardized inputs, `n * J`.
    x_rows: Vec<S>,
    y: Vec<S>,
}

impl<S: Scalar> SlfnProblem<S> {
    fn row(&self, i: usize) -> &[S] {
        let j = self.spec.n_inputs;
        &self.x_rows[i * j..(i + 1) * j]
    }
}

impl<S: Scalar> LeastSquaresProblem<S> for SlfnProblem<S> {
    fn n_residuals(&self) -> usize {
        self.y.len()
    }

    fn n_params(&self) -> usize {
        self.spec.param_count()
    }

    fn residuals_into(&self, theta: &[S], out: &mut [S]) -> Result<()> {
        // A non-finite trial point is reported as an infinite residual so
        // the optimizer rejects the step instead of aborting.
        let params = match SlfnParams::from_flat(self.spec, theta) {
            Ok(p) => p,
            Err(_) => {
                out.fill(S::c(f64::INFINITY));
                return Ok(());
            }
        };
        for i in 0..self.y.len() {
            out[i] = params.forward(self.row(i))? - self.y[i];
        }
        Ok(())
    }

    fn jacobian_transpose_into(&self, theta: &[S], out: &mut DMatrix<S>) -> Result<()> {
        let params = SlfnParams::from_flat(self.spec, theta)?;
        let p = self.spec.param_count();
        let slice = out.as_mut_slice();
        for i in 0..self.y.len() {
            // Column i of the p x m matrix is contiguous in column-major
            // storage.
            params.grad_params_into(self.row(i), &mut slice[i * p..(i + 1) * p])?;
        }
        Ok(())
    }
}

fn random_init<S: Scalar>(spec: SlfnSpec, seed: u64, init_scale: S) -> Vec<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sqrt_j = S::from_count(spec.n_inputs).sqrt();
    let sqrt_h = S::from_count(spec.n_hidden).sqrt();
    let mut flat = Vec::with_capacity(spec.param_count());
    for _ in 0..spec.unit_stride() * spec.n_hidden {
        flat.push(S::c(rng.random_range(-1.0..1.0)) * init_scale / sqrt_j);
    }
    for _ in 0..spec.n_hidden {
        flat.push(S::c(rng.random_range(-1.0..1.0)) / sqrt_h);
    }
    flat
}

/// Fits the network model by multi-start damped least squares.
///
/// Restart seeds are drawn from one master stream seeded with
/// `options.seed`, so results are deterministic and the seed sequence of a
/// smaller restart count is a prefix of a larger one. The best converged
/// restart (lowest SSE, ties to the lowest index) wins.
pub fn fit_slfn<S: Scalar>(
    design: &TransformedDesign<S>,
    n_hidden: usize,
    options: &FitOptions<S>,
) -> Result<FitResult<S>> {
    options.validate()?;
    let j = design.n_inputs();
    // Hidden biases only where no transform removed the intercept.
    let spec = SlfnSpec::new(j, n_hidden, design.has_constant())?;
    let df = spec.param_count() + design.fe_param_count();
    let n = design.n_rows();
    if n <= df {
        return Err(Error::Validation(format!(
            "need more observations than parameters (n = {n}, df = {df})"
        )));
    }

    let standardization = Standardization::fit(design);
    let mut x_rows = vec![S::zero(); n * j];
    for (i, row) in design.rows().iter().enumerate() {
        standardization.apply_into(&row.x[..j], &mut x_rows[i * j..(i + 1) * j]);
    }
    let y: Vec<S> = design.rows().iter().map(|r| r.y).collect();
    let problem = SlfnProblem { spec, x_rows, y };

    let mut master = ChaCha8Rng::seed_from_u64(options.seed);
    let seeds: Vec<u64> = (0..options.restarts).map(|_| master.next_u64()).collect();
    let lm_options = options.lm_options();
    let outcomes: Vec<LmOutcome<S>> = seeds
        .par_iter()
        .map(|&seed| {
            let init = random_init(spec, seed, options.init_scale);
            lm::minimize(&problem, &init, &lm_options)
        })
        .collect::<Result<_>>()?;

    let mut best: Option<usize> = None;
    for (i, outcome) in outcomes.iter().enumerate() {
        if outcome.termination.converged()
            && best.is_none_or(|b| outcome.sse < outcomes[b].sse)
        {
            best = Some(i);
        }
    }
    let best = best.ok_or_else(|| {
        Error::numerical(format!("none of the {} restarts converged", options.restarts))
    })?;
    let params = SlfnParams::from_flat(spec, &outcomes[best].theta)?;
    let sse = outcomes[best].sse;

    let restart_summaries = outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| RestartSummary {
            restart: i,
            sse: o.sse,
            iterations: o.iterations,
            converged: o.termination.converged(),
        })
        .collect();

    let mut warnings = Vec::new();
    let weak = params.check_fully_connected(S::c(1e-8));
    if !weak.is_empty() {
        warnings.push(format!(
            "hidden units with near-zero output weight (unidentifiable parametrization): {weak:?}"
        ));
    }

    let mut fit = finish(
        design,
        ModelKind::Slfn,
        Some(n_hidden),
        FittedParams::Slfn(params),
        Some(standardization),
        sse,
        df,
        HessianMatrix::zeros(spec.param_count()),
        restart_summaries,
        warnings,
    )?;
    fit.hessian = hessian(&fit, design, options.hessian_mode)?;
    Ok(fit)
}

/// Hessian approximation of SSE/2 at the fitted parameters.
pub fn hessian<S: Scalar>(
    fit: &FitResult<S>,
    design: &TransformedDesign<S>,
    mode: HessianMode,
) -> Result<HessianMatrix<S>> {
    let p = fit.n_explicit_params();
    let j = fit.n_inputs();
    match mode {
        HessianMode::GaussNewton => {
            let mut a = DMatrix::<S>::zeros(p, p);
            let mut g = vec![S::zero(); p];
            for row in design.rows() {
                fit.param_gradient_into(&row.x[..j], &mut g)?;
                for i in 0..p {
                    for k in 0..p {
                        a[(i, k)] += g[i] * g[k];
                    }
                }
            }
            Ok(HessianMatrix::from_matrix(&a))
        }
        HessianMode::FiniteDifference => {
            let flat = fit.flat_params();
            let half = S::c(0.5);
            let objective = |theta: &[S]| -> Result<S> {
                Ok(half * fit.sse_with_flat(theta, design)?)
            };
            let quarter = S::c(0.25);
            let steps: Vec<S> = flat
                .iter()
                .map(|t| S::EPS.powf(quarter) * (S::one() + t.abs()))
                .collect();
            let mut a = DMatrix::<S>::zeros(p, p);
            for i in 0..p {
                for k in i..p {
                    let eval = |si: S, sk: S| -> Result<S> {
                        let mut theta = flat.clone();
                        theta[i] += si;
                        theta[k] += sk;
                        objective(&theta)
                    };
                    let value = (eval(steps[i], steps[k])? - eval(steps[i], -steps[k])?
                        - eval(-steps[i], steps[k])?
                        + eval(-steps[i], -steps[k])?)
                        / (S::c(4.0) * steps[i] * steps[k]);
                    a[(i, k)] = value;
                    a[(k, i)] = value;
                }
            }
            Ok(HessianMatrix::from_matrix(&a))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionCriterion {
    Aic,
    Bic,
}

/// One row of the hidden-width comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct SelectionRow<S> {
    pub n_hidden: usize,
    pub df: usize,
    pub fit: Option<FitResult<S>>,
    pub error: Option<String>,
}

/// Result of [`select_model`]: the chosen width plus the full table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct Selection<S> {
    pub criterion: SelectionCriterion,
    pub best_n_hidden: usize,
    pub rows: Vec<SelectionRow<S>>,
}

impl<S: Scalar> Selection<S> {
    pub fn best(&self) -> &FitResult<S> {
        self.rows
            .iter()
            .find(|r| r.n_hidden == self.best_n_hidden)
            .and_then(|r| r.fit.as_ref())
            .expect("selection invariant: best row has a fit")
    }
}

/// Fits every candidate hidden width and picks the criterion minimizer.
///
/// Only converged fits with defined criteria are eligible; failed
/// candidates are recorded in the table. Ties go to the earliest candidate.
pub fn select_model<S: Scalar>(
    design: &TransformedDesign<S>,
    h_candidates: &[usize],
    criterion: SelectionCriterion,
    options: &FitOptions<S>,
) -> Result<Selection<S>> {
    if h_candidates.is_empty() {
        return Err(Error::validation("no hidden-width candidates"));
    }
    if h_candidates.iter().any(|&h| h == 0) {
        return Err(Error::validation("hidden unit count must be >= 1"));
    }
    let mut rows = Vec::with_capacity(h_candidates.len());
    for &h in h_candidates {
        let df = model_df(
            ModelKind::Slfn,
            design.kind(),
            design.n_inputs(),
            Some(h),
            design.n_regions(),
            design.n_years(),
        )?;
        let row = match fit_slfn(design, h, options) {
            Ok(fit) => SelectionRow {
                n_hidden: h,
                df,
                fit: Some(fit),
                error: None,
            },
            Err(e) => SelectionRow {
                n_hidden: h,
                df,
                fit: None,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }

    let mut best: Option<(usize, S)> = None;
    for row in &rows {
        let Some(fit) = &row.fit else { continue };
        if !fit.converged {
            continue;
        }
        let value = match criterion {
            SelectionCriterion::Aic => fit.aic,
            SelectionCriterion::Bic => fit.bic,
        };
        let Some(value) = value else { continue };
        if best.is_none_or(|(_, b)| value < b) {
            best = Some((row.n_hidden, value));
        }
    }
    let (best_n_hidden, _) = best.ok_or_else(|| {
        Error::numerical("no hidden-width candidate produced a converged fit")
    })?;
    Ok(Selection {
        criterion,
        best_n_hidden,
        rows,
    })
}

/// Writes the comparison table as CSV: `H,df,aic,bic,sigma_hat,converged`.
pub fn write_selection_csv<S: Scalar>(selection: &Selection<S>, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["H", "df", "aic", "bic", "sigma_hat", "converged"])?;
    for row in &selection.rows {
        let (aic, bic, sigma, converged) = match &row.fit {
            Some(fit) => (
                fit.aic.map_or("-inf".to_string(), |v| v.to_string()),
                fit.bic.map_or("-inf".to_string(), |v| v.to_string()),
                fit.sigma_hat.to_string(),
                fit.converged,
            ),
            None => ("NaN".to_string(), "NaN".to_string(), "NaN".to_string(), false),
        };
        w.write_record([
            row.n_hidden.to_string(),
            row.df.to_string(),
            aic,
            bic,
            sigma,
            converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Serializes a fit to pretty JSON.
pub fn write_fit_json<S: Scalar>(fit: &FitResult<S>, writer: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(writer, fit)
        .map_err(|e| Error::validation(format!("serializing fit: {e}")))
}

/// Reads a fit back from JSON.
pub fn read_fit_json<S: Scalar>(reader: impl Read) -> Result<FitResult<S>> {
    serde_json::from_reader(reader)
        .map_err(|e| Error::parse(e.line() as u64, format!("invalid fit JSON: {e}")))
}
