//! Two-qubit statevector simulation for the quantum token.
//!
//! Circuit: `|00>` -> `Ry(theta1)` on qubit 1, `Ry(theta2)` on qubit 2 ->
//! `CZ` -> measure `<Z (x) Z>`. The scalar expectation is projected to the
//! model dimension by a trainable affine map. Angles are read from the
//! fused presentation token but treated as constants by the tape, so no
//! gradient reaches the token through this path.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Amplitudes ordered `|00>, |01>, |10>, |11>`; the first label is qubit 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoQubitState(pub [Complex64; 4]);

impl TwoQubitState {
    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|a| a.norm_sqr()).sum()
    }
}

pub fn ry_ry_state(theta1: f64, theta2: f64) -> TwoQubitState {
    let (s1, c1) = (theta1 / 2.0).sin_cos();
    let (s2, c2) = (theta2 / 2.0).sin_cos();
    TwoQubitState([
        Complex64::new(c1 * c2, 0.0),
        Complex64::new(c1 * s2, 0.0),
        Complex64::new(s1 * c2, 0.0),
        Complex64::new(s1 * s2, 0.0),
    ])
}

pub fn apply_cz(state: TwoQubitState) -> TwoQubitState {
    let mut a = state.0;
    a[3] = -a[3];
    TwoQubitState(a)
}

pub fn expect_zz(state: &TwoQubitState) -> f64 {
    let p: Vec<f64> = state.0.iter().map(|a| a.norm_sqr()).collect();
    p[0] - p[1] - p[2] + p[3]
}

/// The full circuit's `<Z (x) Z>`.
pub fn circuit_expectation(theta1: f64, theta2: f64) -> f64 {
    expect_zz(&apply_cz(ry_ry_state(theta1, theta2)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantumTokenParams {
    pub features: [usize; 2],
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn check_features(features: [usize; 2], d_model: usize) -> Result<()> {
    if features[0] == features[1] || features.iter().any(|&f| f >= d_model) {
        return Err(Error::Config(format!(
            "quantum feature indices {features:?} must be distinct and below {d_model}"
        )));
    }
    Ok(())
}

/// Expectation driven by the two selected coordinates, used raw as radians.
pub fn token_expectation(fused_p: &[f64], features: [usize; 2]) -> f64 {
    circuit_expectation(fused_p[features[0]], fused_p[features[1]])
}

/// `e * weight + bias` with `e` from [`token_expectation`].
pub fn quantum_token(fused_p: &[f64], params: &QuantumTokenParams) -> Result<Vec<f64>> {
    check_features(params.features, fused_p.len())?;
    let e = token_expectation(fused_p, params.features);
    Ok(params
        .weight
        .iter()
        .zip(&params.bias)
        .map(|(w, b)| e * w + b)
        .collect())
}
