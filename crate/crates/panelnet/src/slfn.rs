//! Single-hidden-layer network regression function: forward evaluation,
//! analytic parameter gradient (backpropagation), and analytic input
//! gradient.
//!
//! The scalar output is `f(x) = sum_h theta1[h] * phi(z_h)` with
//! `z_h = sum_j theta0[h,j] * x[j]` (plus a per-unit bias weight when
//! enabled) and `phi` the logistic function. There is no output bias.
//!
//! The flat parameter layout is part of the public contract (Hessians and
//! serialized fits index into it): the `theta0` block of hidden unit 0
//! first (its `J` input weights, then its bias weight when enabled), then
//! the block of unit 1, ..., followed by the `H` entries of `theta1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

/// Architecture of the network: input count `J`, hidden-unit count `H`,
/// and whether each hidden unit carries a bias weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlfnSpec {
    #[serde(rename = "J")]
    pub n_inputs: usize,
    #[serde(rename = "H")]
    pub n_hidden: usize,
    pub hidden_bias: bool,
}

impl SlfnSpec {
    pub fn new(n_inputs: usize, n_hidden: usize, hidden_bias: bool) -> Result<Self> {
        if n_inputs == 0 || n_hidden == 0 {
            return Err(Error::validation("network needs at least one input and one hidden unit"));
        }
        Ok(SlfnSpec {
            n_inputs,
            n_hidden,
            hidden_bias,
        })
    }

    /// Weights per hidden unit: `J`, or `J + 1` with a bias.
    pub fn unit_stride(&self) -> usize {
        self.n_inputs + usize::from(self.hidden_bias)
    }

    /// Total parameter count `P`: `(J+1)*H` without biases, `(J+2)*H` with.
    pub fn param_count(&self) -> usize {
        (self.unit_stride() + 1) * self.n_hidden
    }
}

/// Wire form: `{"J":..,"H":..,"hidden_bias":..,"theta0":[..],"theta1":[..]}`
/// with `theta0` flattened unit-major.
#[derive(Serialize, Deserialize)]
struct SlfnParamsWire<S> {
    #[serde(rename = "J")]
    n_inputs: usize,
    #[serde(rename = "H")]
    n_hidden: usize,
    hidden_bias: bool,
    theta0: Vec<S>,
    theta1: Vec<S>,
}

/// Network weights in the flat unit-major layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "SlfnParamsWire<S>",
    into = "SlfnParamsWire<S>",
    bound(serialize = "S: Scalar", deserialize = "S: Scalar")
)]
pub struct SlfnParams<S> {
    spec: SlfnSpec,
    /// Input-to-hidden weights, one `unit_stride` block per hidden unit.
    theta0: Vec<S>,
    /// Hidden-to-output weights, length `H`.
    theta1: Vec<S>,
}

impl<S: Scalar> TryFrom<SlfnParamsWire<S>> for SlfnParams<S> {
    type Error = Error;

    fn try_from(wire: SlfnParamsWire<S>) -> Result<Self> {
        let spec = SlfnSpec::new(wire.n_inputs, wire.n_hidden, wire.hidden_bias)?;
        SlfnParams::new(spec, wire.theta0, wire.theta1)
    }
}

impl<S: Scalar> From<SlfnParams<S>> for SlfnParamsWire<S> {
    fn from(params: SlfnParams<S>) -> Self {
        SlfnParamsWire {
            n_inputs: params.spec.n_inputs,
            n_hidden: params.spec.n_hidden,
            hidden_bias: params.spec.hidden_bias,
            theta0: params.theta0,
            theta1: params.theta1,
        }
    }
}

/// Logistic function, evaluated branch-wise so `exp` never overflows.
pub fn logistic<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

impl<S: Scalar> SlfnParams<S> {
    pub fn new(spec: SlfnSpec, theta0: Vec<S>, theta1: Vec<S>) -> Result<Self> {
        if theta0.len() != spec.unit_stride() * spec.n_hidden {
            return Err(Error::Validation(format!(
                "theta0 has {} weights, expected {}",
                theta0.len(),
                spec.unit_stride() * spec.n_hidden
            )));
        }
        if theta1.len() != spec.n_hidden {
            return Err(Error::Validation(format!(
                "theta1 has {} weights, expected {}",
                theta1.len(),
                spec.n_hidden
            )));
        }
        if theta0.iter().chain(&theta1).any(|w| !w.is_finite()) {
            return Err(Error::validation("non-finite network weight"));
        }
        Ok(SlfnParams {
            spec,
            theta0,
            theta1,
        })
    }

    /// Rebuilds parameters from the flat layout (`theta0` blocks, then
    /// `theta1`).
    pub fn from_flat(spec: SlfnSpec, flat: &[S]) -> Result<Self> {
        if flat.len() != spec.param_count() {
            return Err(Error::Validation(format!(
                "flat parameter vector has length {}, expected {}",
                flat.len(),
                spec.param_count()
            )));
        }
        let split = spec.unit_stride() * spec.n_hidden;
        SlfnParams::new(spec, flat[..split].to_vec(), flat[split..].to_vec())
    }

    /// The flat layout; inverse of [`SlfnParams::from_flat`].
    pub fn to_flat(&self) -> Vec<S> {
        let mut flat = self.theta0.clone();
        flat.extend_from_slice(&self.theta1);
        flat
    }

    pub fn spec(&self) -> SlfnSpec {
        self.spec
    }

    /// Input weights of hidden unit `h` (bias weight last when enabled).
    pub fn unit_weights(&self, h: usize) -> &[S] {
        let stride = self.spec.unit_stride();
        &self.theta0[h * stride..(h + 1) * stride]
    }

    pub fn output_weights(&self) -> &[S] {
        &self.theta1
    }

    fn check_input(&self, x: &[S]) -> Result<()> {
        if x.len() != self.spec.n_inputs {
            return Err(Error::Validation(format!(
                "input has dimension {}, expected {}",
                x.len(),
                self.spec.n_inputs
            )));
        }
        Ok(())
    }

    fn preactivation(&self, h: usize, x: &[S]) -> S {
        let w = self.unit_weights(h);
        let mut z = S::zero();
        for j in 0..self.spec.n_inputs {
            z += w[j] * x[j];
        }
        if self.spec.hidden_bias {
            z += w[self.spec.n_inputs];
        }
        z
    }

    /// Network output at `x`.
    pub fn forward(&self, x: &[S]) -> Result<S> {
        self.check_input(x)?;
        let mut out = S::zero();
        for h in 0..self.spec.n_hidden {
            out += self.theta1[h] * logistic(self.preactivation(h, x));
        }
        Ok(out)
    }

    /// Gradient of the output w.r.t. the flat parameter vector, written to
    /// `out` (length `P`).
    pub fn grad_params_into(&self, x: &[S], out: &mut [S]) -> Result<()> {
        self.check_input(x)?;
        if out.len() != self.spec.param_count() {
            return Err(Error::Validation(format!(
                "gradient buffer has length {}, expected {}",
                out.len(),
                self.spec.param_count()
            )));
        }
        let stride = self.spec.unit_stride();
        let theta1_base = stride * self.spec.n_hidden;
        for h in 0..self.spec.n_hidden {
            let a = logistic(self.preactivation(h, x));
            let d = self.theta1[h] * a * (S::one() - a);
            let base = h * stride;
            for j in 0..self.spec.n_inputs {
                out[base + j] = d * x[j];
            }
            if self.spec.hidden_bias {
                out[base + self.spec.n_inputs] = d;
            }
            out[theta1_base + h] = a;
        }
        Ok(())
    }

    pub fn grad_params(&self, x: &[S]) -> Result<Vec<S>> {
        let mut out = vec![S::zero(); self.spec.param_count()];
        self.grad_params_into(x, &mut out)?;
        Ok(out)
    }

    /// Gradient of the output w.r.t. the input, written to `out`
    /// (length `J`).
    pub fn grad_input_into(&self, x: &[S], out: &mut [S]) -> Result<()> {
        self.check_input(x)?;
        if out.len() != self.spec.n_inputs {
            return Err(Error::Validation(format!(
                "gradient buffer has length {}, expected {}",
                out.len(),
                self.spec.n_inputs
            )));
        }
        out.fill(S::zero());
        for h in 0..self.spec.n_hidden {
            let a = logistic(self.preactivation(h, x));
            let d = self.theta1[h] * a * (S::one() - a);
            let w = self.unit_weights(h);
            for j in 0..self.spec.n_inputs {
                out[j] += d * w[j];
            }
        }
        Ok(())
    }

    pub fn grad_input(&self, x: &[S]) -> Result<Vec<S>> {
        let mut out = vec![S::zero(); self.spec.n_inputs];
        self.grad_input_into(x, &mut out)?;
        Ok(out)
    }

    /// Hidden units whose output weight is below `tol` in magnitude
    /// (0-based indices). Such units make the parametrization
    /// unidentifiable; an empty list is the healthy state.
    pub fn check_fully_connected(&self, tol: S) -> Vec<usize> {
        self.theta1
            .iter()
            .enumerate()
            .filter(|(_, w)| w.abs() < tol)
            .map(|(h, _)| h)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(
        n_inputs: usize,
        hidden_bias: bool,
        theta0: &[f64],
        theta1: &[f64],
    ) -> SlfnParams<f64> {
        let spec = SlfnSpec::new(n_inputs, theta1.len(), hidden_bias).unwrap();
        SlfnParams::new(spec, theta0.to_vec(), theta1.to_vec()).unwrap()
    }

    #[test]
    fn spec_param_count() {
        assert_eq!(SlfnSpec::new(2, 3, false).unwrap().param_count(), 9);
        assert_eq!(SlfnSpec::new(2, 3, true).unwrap().param_count(), 12);
        assert!(SlfnSpec::new(0, 3, false).is_err());
        assert!(SlfnSpec::new(2, 0, false).is_err());
    }

    #[test]
    fn forward_zero_params_is_zero() {
        let p = params(2, false, &[0.0; 4], &[0.0; 2]);
        assert_eq!(p.forward(&[1.0, -3.0]).unwrap(), 0.0);
    }

    #[test]
    fn forward_zero_hidden_weights_halves_theta1() {
        // z = 0 regardless of x, phi(0) = 1/2, output = 2 * 1/2 = 1.
        let p = params(2, false, &[0.0, 0.0], &[2.0]);
        assert_eq!(p.forward(&[5.0, -7.0]).unwrap(), 1.0);
        assert_eq!(p.forward(&[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn forward_symmetric_units_cancel() {
        // Units see identical preactivations 0.3; opposite output weights.
        let p = params(2, false, &[1.0, 0.0, 0.0, 1.0], &[1.0, -1.0]);
        let out = p.forward(&[0.3, 0.3]).unwrap();
        assert!(out.abs() < 1e-15, "{out}");
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let p = params(2, false, &[0.0; 4], &[0.0; 2]);
        assert!(p.forward(&[1.0]).is_err());
        assert!(p.grad_params(&[1.0, 2.0, 3.0]).is_err());
        assert!(p.grad_input(&[1.0]).is_err());
    }

    #[test]
    fn grad_params_zero_network() {
        let p = params(2, false, &[0.0; 4], &[0.0; 2]);
        let g = p.grad_params(&[1.0, 1.0]).unwrap();
        // theta0 gradients vanish (theta1 = 0); theta1 gradients are phi(0).
        assert_eq!(g, vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn grad_params_zero_input_without_bias() {
        let p = params(2, false, &[0.4, -0.3, 0.2, 0.9], &[1.5, -0.7]);
        let g = p.grad_params(&[0.0, 0.0]).unwrap();
        assert_eq!(&g[..4], &[0.0; 4]);
    }

    #[test]
    fn grad_input_zero_params() {
        let p = params(3, false, &[0.0; 3], &[0.0]);
        assert_eq!(p.grad_input(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn grad_input_single_unit_closed_form() {
        let p = params(2, false, &[0.8, -0.5], &[1.7]);
        let x = [0.4, 1.1];
        let z = 0.8 * 0.4 - 0.5 * 1.1;
        let a = logistic(z);
        let d = 1.7 * a * (1.0 - a);
        let g = p.grad_input(&x).unwrap();
        assert!((g[0] - d * 0.8).abs() < 1e-14);
        assert!((g[1] - d * (-0.5)).abs() < 1e-14);
    }

    #[test]
    fn logistic_is_stable_at_extremes() {
        assert_eq!(logistic(800.0f64), 1.0);
        assert_eq!(logistic(-800.0f64), 0.0);
        assert!((logistic(0.0f64) - 0.5).abs() < 1e-16);
        assert!(logistic(f64::MAX).is_finite());
        assert!(logistic(f64::MIN).is_finite());
    }

    #[test]
    fn weakly_connected_units_detected() {
        let p = params(1, false, &[1.0, 2.0], &[0.5, 1e-12]);
        assert_eq!(p.check_fully_connected(1e-8), vec![1]);
        let healthy = params(1, false, &[1.0, 2.0], &[0.5, 0.3]);
        assert!(healthy.check_fully_connected(1e-8).is_empty());
        assert!(p.check_fully_connected(0.0).is_empty());
    }

    #[test]
    fn wire_json_layout() {
        let p = params(2, true, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], &[1.0, -1.0]);
        let json = serde_json::to_value(&p).unwrap();
        assert_eq!(json["J"], 2);
        assert_eq!(json["H"], 2);
        assert_eq!(json["hidden_bias"], true);
        assert_eq!(json["theta0"].as_array().unwrap().len(), 6);
        assert_eq!(json["theta1"].as_array().unwrap().len(), 2);
        let back: SlfnParams<f64> = serde_json::from_value(json).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn wire_json_rejects_bad_lengths() {
        let bad = r#"{"J":2,"H":2,"hidden_bias":false,"theta0":[0.1],"theta1":[1.0,2.0]}"#;
        assert!(serde_json::from_str::<SlfnParams<f64>>(bad).is_err());
    }

    #[test]
    fn flat_layout_orders_unit_blocks_then_output_weights() {
        let p = params(2, true, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[7.0, 8.0]);
        assert_eq!(p.to_flat(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(p.unit_weights(1), &[4.0, 5.0, 6.0]);
    }

    fn arb_network(
        max_inputs: usize,
        max_hidden: usize,
    ) -> impl Strategy<Value = (SlfnParams<f64>, Vec<f64>)> {
        (1..=max_inputs, 1..=max_hidden, proptest::bool::ANY).prop_flat_map(|(j, h, bias)| {
            let spec = SlfnSpec::new(j, h, bias).unwrap();
            let weight = -2.0f64..2.0;
            (
                proptest::collection::vec(weight.clone(), spec.unit_stride() * h),
                proptest::collection::vec(weight.clone(), h),
                proptest::collection::vec(-3.0f64..3.0, j),
            )
                .prop_map(move |(theta0, theta1, x)| {
                    (SlfnParams::new(spec, theta0, theta1).unwrap(), x)
                })
        })
    }

    /// Central finite difference of a scalar function.
    fn central_diff(f: impl Fn(f64) -> f64, at: f64, h: f64) -> f64 {
        (f(at + h) - f(at - h)) / (2.0 * h)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn param_gradient_matches_finite_differences((p, x) in arb_network(3, 4)) {
            let g = p.grad_params(&x).unwrap();
            let flat = p.to_flat();
            for i in 0..flat.len() {
                let fd = central_diff(
                    |v| {
                        let mut perturbed = flat.clone();
                        perturbed[i] = v;
                        SlfnParams::from_flat(p.spec(), &perturbed)
                            .unwrap()
                            .forward(&x)
                            .unwrap()
                    },
                    flat[i],
                    1e-5,
                );
                let err = (g[i] - fd).abs();
                prop_assert!(
                    err <= 1e-6 * g[i].abs().max(fd.abs()) + 1e-10,
                    "param {i}: analytic {} vs fd {fd}",
                    g[i]
                );
            }
        }

        #[test]
        fn input_gradient_matches_finite_differences((p, x) in arb_network(3, 4)) {
            let g = p.grad_input(&x).unwrap();
            for j in 0..x.len() {
                let fd = central_diff(
                    |v| {
                        let mut perturbed = x.clone();
                        perturbed[j] = v;
                        p.forward(&perturbed).unwrap()
                    },
                    x[j],
                    1e-5,
                );
                let err = (g[j] - fd).abs();
                prop_assert!(
                    err <= 1e-6 * g[j].abs().max(fd.abs()) + 1e-10,
                    "input {j}: analytic {} vs fd {fd}",
                    g[j]
                );
            }
        }

        #[test]
        fn hidden_unit_order_is_irrelevant((p, x) in arb_network(3, 4)) {
            let spec = p.spec();
            let stride = spec.unit_stride();
            let h = spec.n_hidden;
            // Rotate the hidden units by one.
            let mut theta0 = Vec::with_capacity(stride * h);
            let mut theta1 = Vec::with_capacity(h);
            for unit in (0..h).map(|u| (u + 1) % h) {
                theta0.extend_from_slice(p.unit_weights(unit));
                theta1.push(p.output_weights()[unit]);
            }
            let rotated = SlfnParams::new(spec, theta0, theta1).unwrap();
            let a = p.forward(&x).unwrap();
            let b = rotated.forward(&x).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn sign_flip_shifts_output_by_output_weight((p, x) in arb_network(3, 4)) {
            prop_assume!(!p.spec().hidden_bias);
            // phi(-z) = 1 - phi(z): negating unit 0's weights on both layers
            // changes the output by exactly -theta1[0].
            let spec = p.spec();
            let mut theta0 = p.to_flat()[..spec.unit_stride() * spec.n_hidden].to_vec();
            let mut theta1 = p.output_weights().to_vec();
            for w in &mut theta0[..spec.unit_stride()] {
                *w = -*w;
            }
            theta1[0] = -theta1[0];
            let flipped = SlfnParams::new(spec, theta0, theta1).unwrap();
            let a = p.forward(&x).unwrap();
            let b = flipped.forward(&x).unwrap();
            prop_assert!((b - (a - p.output_weights()[0])).abs() <= 1e-12 * (1.0 + a.abs()),
                "flip shifted by {} instead of {}", b - a, -p.output_weights()[0]);
        }

        #[test]
        fn output_bounded_by_output_weight_mass((p, x) in arb_network(3, 4)) {
            let bound: f64 = p.output_weights().iter().map(|w| w.abs()).sum();
            let out = p.forward(&x).unwrap();
            prop_assert!(out.abs() <= bound + 1e-12);
        }

        #[test]
        fn flat_roundtrip_is_identity((p, _x) in arb_network(3, 4)) {
            let back = SlfnParams::from_flat(p.spec(), &p.to_flat()).unwrap();
            prop_assert_eq!(p, back);
        }

        #[test]
        fn input_permutation_permutes_input_gradient((p, x) in arb_network(3, 4)) {
            let spec = p.spec();
            prop_assume!(spec.n_inputs >= 2);
            // Swap inputs 0 and 1 together with the matching weights.
            let stride = spec.unit_stride();
            let mut theta0 = p.to_flat()[..stride * spec.n_hidden].to_vec();
            for h in 0..spec.n_hidden {
                theta0.swap(h * stride, h * stride + 1);
            }
            let swapped = SlfnParams::new(spec, theta0, p.output_weights().to_vec()).unwrap();
            let mut x_swapped = x.clone();
            x_swapped.swap(0, 1);
            let g = p.grad_input(&x).unwrap();
            let g_swapped = swapped.grad_input(&x_swapped).unwrap();
            prop_assert!((g[0] - g_swapped[1]).abs() < 1e-12);
            prop_assert!((g[1] - g_swapped[0]).abs() < 1e-12);
        }
    }
}
