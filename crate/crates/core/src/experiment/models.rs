//! Built-in models used when no model file is given.

use std::f64::consts::{FRAC_PI_2, SQRT_2};

use crate::apfun::{QpFunction, QpMatrix};
use crate::sde::LinearSdeModel;

fn cos(amp: f64, freq: f64) -> QpFunction {
    QpFunction::cosine(amp, freq, 0.0).expect("valid mode")
}

fn sin(amp: f64, freq: f64) -> QpFunction {
    QpFunction::cosine(amp, freq, -FRAC_PI_2).expect("valid mode")
}

fn c(v: f64) -> QpFunction {
    QpFunction::constant(v)
}

/// `dX = (−X + cos t + cos √2 t) dt + (1 + ½ sin t) dW`.
pub fn two_tone() -> LinearSdeModel {
    LinearSdeModel::scalar(c(-1.0), cos(1.0, 1.0).add(&cos(1.0, SQRT_2)), vec![c(0.0)], vec![c(1.0).add(&sin(0.5, 1.0))])
        .expect("valid model")
}

/// `dX = −X dt + dW`.
pub fn ornstein_uhlenbeck() -> LinearSdeModel {
    LinearSdeModel::scalar(c(-1.0), c(0.0), vec![c(0.0)], vec![c(1.0)]).expect("valid model")
}

/// `dX = (−X + cos t) dt + dW`.
pub fn forced_ou() -> LinearSdeModel {
    LinearSdeModel::scalar(c(-1.0), cos(1.0, 1.0), vec![c(0.0)], vec![c(1.0)]).expect("valid model")
}

/// `dX = (1 + 0.3 cos t) X dt + X dW`.
pub fn expansive_multiplicative() -> LinearSdeModel {
    LinearSdeModel::scalar(c(1.0).add(&cos(0.3, 1.0)), c(0.0), vec![c(1.0)], vec![c(0.0)]).expect("valid model")
}

/// Three-dimensional block model: a damped coordinate with small additive
/// noise and an undamped rotation block forced at frequency √2.
///
/// `A = diag(−1, [[0, −1], [1, 0]])`, `f = (0, 0.2 cos √2 t, 0)`,
/// `g = (0.1, 0, 0)`.
pub fn rotation_block() -> LinearSdeModel {
    let a = QpMatrix::from_constants(3, 3, &[-1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0]).expect("3×3");
    let f = QpMatrix::vector(vec![c(0.0), cos(0.2, SQRT_2), c(0.0)]);
    let b = QpMatrix::zeros(3, 3);
    let g = QpMatrix::vector(vec![c(0.1), c(0.0), c(0.0)]);
    LinearSdeModel::new(a, f, vec![b], vec![g]).expect("valid model")
}
