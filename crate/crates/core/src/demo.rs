//! Bundled demonstration model: orientational dynamics of polar molecules
//! under a periodic driving input, with a slowly varying transport delay.
//!
//! The chain has two states; the first component couples to the *second*
//! delayed state, so the delayed part of the nonlinearity is not triangular.
//! Gains, gamma bounds and initial data below are the canonical values used
//! by the test suites and by the CLI `demo` command.

use crate::exprlang::parse_expression;
use crate::model::{DelayModel, GammaSpec, HistorySpec, TriangularSystem};

/// Base output-injection gain; its companion polynomial `s^2 + 5 s + 5` is
/// Hurwitz.
pub const GAIN: [f64; 2] = [-5.0, -5.0];

/// High-gain parameter used by the demo runs.
pub const EPS: f64 = 0.05;

/// Constant-delay variant.
pub const TAU: f64 = 0.25;

/// Upper bound of the time-varying delay law.
pub const TAU_STAR: f64 = 0.26;

/// Derivative margin of the time-varying delay law.
pub const BETA: f64 = 0.99;

/// Two-state driven chain with delayed state and input coupling.
pub fn polar_molecule_system() -> TriangularSystem {
    TriangularSystem {
        n: 2,
        m: 1,
        f: vec![
            parse_expression("sin(xd2)/12 + x1*cos(ud1)/24").unwrap(),
            parse_expression("xd2/12 + x2/24 + ud1").unwrap(),
        ],
        u: vec![parse_expression("cos(7*t)").unwrap()],
        gamma: GammaSpec::Explicit {
            gamma1: parse_expression("(1+eps)/24").unwrap(),
            gamma2: parse_expression("(1+eps)/12").unwrap(),
            gamma3: parse_expression("1+eps").unwrap(),
        },
        strict_triangular: false,
    }
}

/// Slowly varying transport delay `0.25 + 0.01 cos^2 t`.
pub fn varying_delay() -> DelayModel {
    DelayModel::Varying {
        tau_expr: parse_expression("0.25+0.01*cos(t)^2").unwrap(),
        tau_star: TAU_STAR,
        beta: BETA,
    }
}

/// Constant-delay variant of the same plant.
pub fn constant_delay() -> DelayModel {
    DelayModel::Constant { tau: TAU }
}

/// Initial history: plant frozen at `[-2, 1]`, observer at `[2, 2]`.
pub fn history() -> HistorySpec {
    HistorySpec {
        phi_x: vec![
            parse_expression("-2").unwrap(),
            parse_expression("1").unwrap(),
        ],
        phi_xhat: vec![
            parse_expression("2").unwrap(),
            parse_expression("2").unwrap(),
        ],
    }
}
