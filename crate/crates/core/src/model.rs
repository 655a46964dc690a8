//! Domain model: triangular chain systems with delayed state/input coupling,
//! delay laws, incremental gain bounds and their validation.

use std::collections::BTreeSet;
use std::fmt;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::exprlang::{EvalError, Expression, FnEnv, VarRef};

#[derive(Debug, Clone, Error)]
pub enum ModelError {
    #[error("expression evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("gamma bound is not positive: gamma{index}({eps}) = {value}")]
    GammaNotPositive { index: usize, eps: f64, value: f64 },
    #[error("{0}")]
    Invalid(String),
}

/// Incremental gain bounds `gamma_1, gamma_2, gamma_3` as functions of the
/// high-gain parameter. `Auto` derives all three from a single Lipschitz
/// constant via the geometric sum `k (1 + eps + ... + eps^{n-1})`.
#[derive(Debug, Clone)]
pub enum GammaSpec {
    Explicit {
        gamma1: Expression,
        gamma2: Expression,
        gamma3: Expression,
    },
    Auto {
        k: f64,
    },
}

/// Delay model: a known constant lag, or a time-varying law `tau(t)` with an
/// upper bound `tau_star` and a derivative margin `beta` (`d tau/dt <= 1 - beta`).
#[derive(Debug, Clone)]
pub enum DelayModel {
    Constant {
        tau: f64,
    },
    Varying {
        tau_expr: Expression,
        tau_star: f64,
        beta: f64,
    },
}

impl DelayModel {
    /// Largest lag the model can produce; the prehistory must cover it.
    pub fn max_lag(&self) -> f64 {
        match self {
            DelayModel::Constant { tau } => *tau,
            DelayModel::Varying { tau_star, .. } => *tau_star,
        }
    }

    /// Evaluates the lag at time `t`.
    pub fn lag_at(&self, t: f64) -> Result<f64, ModelError> {
        match self {
            DelayModel::Constant { tau } => Ok(*tau),
            DelayModel::Varying { tau_expr, .. } => {
                let env = FnEnv(|v: VarRef| match v {
                    VarRef::Time => Some(t),
                    _ => None,
                });
                Ok(tau_expr.evaluate(&env)?)
            }
        }
    }
}

/// Chain dynamics `dx_i/dt = x_{i+1} + f_i(x, x_delayed, u, u_delayed)` of
/// dimension `n` with `m` inputs. The `f` expressions draw on the vocabulary
/// `x1..xn, xd1..xdn, u1..um, ud1..udm, t`; the inputs are expressions in `t`.
#[derive(Debug, Clone)]
pub struct TriangularSystem {
    pub n: usize,
    pub m: usize,
    pub f: Vec<Expression>,
    pub u: Vec<Expression>,
    pub gamma: GammaSpec,
    /// When set, validation additionally requires each `f_i` to touch only
    /// the first `i` state components (delayed and undelayed).
    pub strict_triangular: bool,
}

/// Initial history `x(s) = phi_x(s)`, `xhat(s) = phi_xhat(s)` on `[-tau*, 0]`,
/// written as expressions in `s`.
#[derive(Debug, Clone)]
pub struct HistorySpec {
    pub phi_x: Vec<Expression>,
    pub phi_xhat: Vec<Expression>,
}

impl HistorySpec {
    /// Evaluates one of the two history families at `s`.
    pub fn eval(&self, observer: bool, s: f64) -> Result<Vec<f64>, ModelError> {
        let exprs = if observer { &self.phi_xhat } else { &self.phi_x };
        let env = FnEnv(|v: VarRef| match v {
            VarRef::HistTime => Some(s),
            _ => None,
        });
        exprs
            .iter()
            .map(|e| e.evaluate(&env).map_err(ModelError::from))
            .collect()
    }
}

/// A single violated invariant, with the field it belongs to.
#[derive(Debug, Clone)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Validation outcome; empty means the model satisfies every checked invariant.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            field: field.into(),
            message: message.into(),
        });
    }
}

/// Checks the structural invariants of a system/delay pair: `f_i` vanishing
/// at the origin, vocabulary and index bounds, gamma positivity on a small
/// eps sample, and the delay-model constraints. The time-varying delay law is
/// checked numerically on a grid (step 1e-3 over [0, 100]); the derivative
/// bound uses central differences on that grid.
pub fn validate_system(sys: &TriangularSystem, delay: &DelayModel) -> ValidationReport {
    let mut report = ValidationReport::default();

    if sys.n == 0 {
        report.push("system.n", "state dimension must be at least 1");
    }
    if sys.f.len() != sys.n {
        report.push(
            "system.f",
            format!("expected {} components, got {}", sys.n, sys.f.len()),
        );
    }
    if sys.u.len() != sys.m {
        report.push(
            "system.u",
            format!("expected {} input(s), got {}", sys.m, sys.u.len()),
        );
    }

    for (i, f_i) in sys.f.iter().enumerate() {
        let field = format!("system.f[{i}]");
        for var in f_i.free_var_refs() {
            match var {
                VarRef::State(j) | VarRef::DelayedState(j) => {
                    if j > sys.n {
                        report.push(&field, format!("state index {j} exceeds n = {}", sys.n));
                    } else if sys.strict_triangular && j > i + 1 {
                        report.push(
                            &field,
                            format!(
                                "component {} may only depend on the first {} state(s), found {}",
                                i + 1,
                                i + 1,
                                var.name()
                            ),
                        );
                    }
                }
                VarRef::Input(j) | VarRef::DelayedInput(j) => {
                    if j > sys.m {
                        report.push(&field, format!("input index {j} exceeds m = {}", sys.m));
                    }
                }
                VarRef::Time => {}
                VarRef::HistTime | VarRef::Eps => {
                    report.push(&field, format!("variable `{}` is not allowed here", var.name()));
                }
            }
        }
        // f_i(0, 0, 0, 0) = 0
        let zero_env = FnEnv(|v: VarRef| match v {
            VarRef::State(_)
            | VarRef::DelayedState(_)
            | VarRef::Input(_)
            | VarRef::DelayedInput(_)
            | VarRef::Time => Some(0.0),
            _ => None,
        });
        match f_i.evaluate(&zero_env) {
            Ok(v) => {
                if v.abs() > 1e-12 {
                    report.push(&field, format!("f_{}(0,0,0,0) = {v}, expected 0", i + 1));
                }
            }
            Err(e) => report.push(&field, format!("evaluation at the origin failed: {e}")),
        }
    }

    for (j, u_j) in sys.u.iter().enumerate() {
        let field = format!("system.u[{j}]");
        for var in u_j.free_var_refs() {
            if var != VarRef::Time {
                report.push(&field, format!("input expressions may only use `t`, found `{}`", var.name()));
            }
        }
    }

    match &sys.gamma {
        GammaSpec::Auto { k } => {
            if *k < 0.0 {
                report.push("system.gamma.k", "Lipschitz constant must be nonnegative");
            }
        }
        GammaSpec::Explicit { gamma1, gamma2, gamma3 } => {
            for (name, g) in [("gamma1", gamma1), ("gamma2", gamma2), ("gamma3", gamma3)] {
                let field = format!("system.gamma.{name}");
                for var in g.free_var_refs() {
                    if var != VarRef::Eps {
                        report.push(
                            &field,
                            format!("gamma expressions may only use `eps`, found `{}`", var.name()),
                        );
                    }
                }
            }
            for eps in [0.01, 0.1, 1.0] {
                match gamma_eval(&sys.gamma, eps, sys.n.max(1)) {
                    Ok(_) => {}
                    Err(e) => report.push("system.gamma", format!("at eps = {eps}: {e}")),
                }
            }
        }
    }

    match delay {
        DelayModel::Constant { tau } => {
            if !(*tau > 0.0) {
                report.push("delay.tau", format!("constant delay must be positive, got {tau}"));
            }
        }
        DelayModel::Varying { tau_expr, tau_star, beta } => {
            if !(*beta > 0.0 && *beta <= 1.0) {
                report.push("delay.beta", format!("beta = {beta} out of (0, 1]"));
            }
            if !(*tau_star > 0.0) {
                report.push("delay.tau_star", format!("tau_star must be positive, got {tau_star}"));
            }
            for var in tau_expr.free_var_refs() {
                if var != VarRef::Time {
                    report.push(
                        "delay.tau_expr",
                        format!("delay law may only use `t`, found `{}`", var.name()),
                    );
                }
            }
            if report.violations.iter().all(|v| !v.field.starts_with("delay")) {
                let step = 1e-3;
                let samples = 100_000usize;
                let eval = |t: f64| -> Result<f64, ModelError> {
                    let env = FnEnv(|v: VarRef| match v {
                        VarRef::Time => Some(t),
                        _ => None,
                    });
                    Ok(tau_expr.evaluate(&env)?)
                };
                let mut worst_low = f64::INFINITY;
                let mut worst_high = f64::NEG_INFINITY;
                let mut worst_rate = f64::NEG_INFINITY;
                let mut failed = false;
                for k in 0..=samples {
                    let t = k as f64 * step;
                    match (eval(t - step), eval(t), eval(t + step)) {
                        (Ok(prev), Ok(cur), Ok(next)) => {
                            worst_low = worst_low.min(cur);
                            worst_high = worst_high.max(cur);
                            worst_rate = worst_rate.max((next - prev) / (2.0 * step));
                        }
                        _ => {
                            report.push("delay.tau_expr", format!("evaluation failed near t = {t}"));
                            failed = true;
                            break;
                        }
                    }
                }
                if !failed {
                    if worst_low < -1e-12 {
                        report.push("delay.tau_expr", format!("tau(t) dips to {worst_low} < 0"));
                    }
                    if worst_high > *tau_star + 1e-12 {
                        report.push(
                            "delay.tau_expr",
                            format!("tau(t) reaches {worst_high} > tau_star = {tau_star}"),
                        );
                    }
                    if worst_rate > 1.0 - *beta + 1e-9 {
                        report.push(
                            "delay.tau_expr",
                            format!(
                                "d tau/dt reaches {worst_rate}, exceeding 1 - beta = {}",
                                1.0 - *beta
                            ),
                        );
                    }
                }
            }
        }
    }

    report
}

/// Evaluates the three gain bounds at `eps`. In `Auto` mode all three equal
/// `k (1 + eps + ... + eps^{n-1})`.
pub fn gamma_eval(spec: &GammaSpec, eps: f64, n: usize) -> Result<(f64, f64, f64), ModelError> {
    assert!(eps > 0.0, "eps must be positive");
    match spec {
        GammaSpec::Auto { k } => {
            let mut sum = 0.0;
            for i in 0..n {
                sum += eps.powi(i as i32);
            }
            let g = k * sum;
            Ok((g, g, g))
        }
        GammaSpec::Explicit { gamma1, gamma2, gamma3 } => {
            let env = FnEnv(|v: VarRef| match v {
                VarRef::Eps => Some(eps),
                _ => None,
            });
            let out = [gamma1, gamma2, gamma3]
                .iter()
                .enumerate()
                .map(|(idx, g)| {
                    let v = g.evaluate(&env)?;
                    if v <= 0.0 {
                        Err(ModelError::GammaNotPositive {
                            index: idx + 1,
                            eps,
                            value: v,
                        })
                    } else {
                        Ok(v)
                    }
                })
                .collect::<Result<Vec<f64>, ModelError>>()?;
            Ok((out[0], out[1], out[2]))
        }
    }
}

/// Worst case found while sampling the incremental gain inequalities.
#[derive(Debug, Clone)]
pub struct A1Report {
    pub trials: usize,
    pub min_slack: f64,
    pub negative_trials: usize,
    /// 1 or 2, whichever inequality produced the minimum slack.
    pub worst_inequality: u8,
    pub gamma: (f64, f64, f64),
}

impl A1Report {
    /// True when no sampled tuple falsified the declared bounds.
    pub fn not_falsified(&self) -> bool {
        self.min_slack >= 0.0
    }
}

/// Samples the two incremental gain inequalities on random argument tuples
/// drawn from the box `[-radius, radius]` and reports the minimum slack
/// (bound minus increment). A negative slack means the declared gammas do
/// not certify the bounds on the sample; a nonnegative result only means
/// "not falsified on this sample".
///
/// The sampled left sides use the scaled sums `sum_i eps^{i-1} |f_i(..) - f_i(..)|`;
/// the right sides weight plain 1-norms of the argument differences by the
/// gammas (the delayed-input bound keeps its geometric-sum factor, matching
/// the disturbance constant used by the practical-radius computation).
pub fn check_a1_samples(
    sys: &TriangularSystem,
    eps: f64,
    trials: usize,
    radius: f64,
    seed: u64,
) -> Result<A1Report, ModelError> {
    assert!(eps > 0.0, "eps must be positive");
    let n = sys.n;
    let m = sys.m;
    let (g1, g2, g3) = gamma_eval(&sys.gamma, eps, n)?;
    let geo_sum: f64 = (0..n).map(|i| eps.powi(i as i32)).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw_vec = |len: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-radius..=radius)).collect()
    };

    let eval_f = |i: usize,
                  t: f64,
                  x: &[f64],
                  xd: &[f64],
                  u: &[f64],
                  ud: &[f64]|
     -> Result<f64, ModelError> {
        let env = FnEnv(|v: VarRef| match v {
            VarRef::Time => Some(t),
            VarRef::State(j) => x.get(j - 1).copied(),
            VarRef::DelayedState(j) => xd.get(j - 1).copied(),
            VarRef::Input(j) => u.get(j - 1).copied(),
            VarRef::DelayedInput(j) => ud.get(j - 1).copied(),
            _ => None,
        });
        Ok(sys.f[i].evaluate(&env)?)
    };

    let mut min_slack = f64::INFINITY;
    let mut negative_trials = 0usize;
    let mut worst_inequality = 1u8;

    for _ in 0..trials {
        let t = rng.random_range(0.0..=radius.max(1.0));
        let x = draw_vec(n, &mut rng);
        let y = draw_vec(n, &mut rng);
        let xbar = draw_vec(n, &mut rng);
        let ybar = draw_vec(n, &mut rng);
        let u = draw_vec(m, &mut rng);
        let ud_a = draw_vec(m, &mut rng);
        let ud_b = draw_vec(m, &mut rng);

        // inequality 1: both the state and the delayed state vary
        let mut lhs1 = 0.0;
        for i in 0..n {
            let a = eval_f(i, t, &x, &xbar, &u, &ud_a)?;
            let b = eval_f(i, t, &y, &ybar, &u, &ud_a)?;
            lhs1 += eps.powi(i as i32) * (a - b).abs();
        }
        let sum_dx: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
        let sum_dxbar: f64 = xbar.iter().zip(&ybar).map(|(a, b)| (a - b).abs()).sum();
        let rhs1 = g1 * sum_dx + g2 * sum_dxbar;
        let slack1 = rhs1 - lhs1;

        // inequality 2: the delayed state and the delayed input vary
        let mut lhs2 = 0.0;
        for i in 0..n {
            let a = eval_f(i, t, &x, &xbar, &u, &ud_a)?;
            let b = eval_f(i, t, &x, &ybar, &u, &ud_b)?;
            lhs2 += eps.powi(i as i32) * (a - b).abs();
        }
        let du_norm: f64 = ud_a
            .iter()
            .zip(&ud_b)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let rhs2 = g2 * sum_dxbar + g3 * geo_sum * du_norm;
        let slack2 = rhs2 - lhs2;

        let (slack, which) = if slack1 <= slack2 { (slack1, 1) } else { (slack2, 2) };
        if slack < 0.0 {
            negative_trials += 1;
        }
        if slack < min_slack {
            min_slack = slack;
            worst_inequality = which;
        }
    }

    Ok(A1Report {
        trials,
        min_slack,
        negative_trials,
        worst_inequality,
        gamma: (g1, g2, g3),
    })
}

/// Convenience for tests and validation messages: names of the variables a
/// component would be allowed to use under strict triangularity.
pub fn triangular_vocabulary(i: usize, n: usize, m: usize) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    out.insert("t".to_string());
    for j in 1..=i.min(n) {
        out.insert(format!("x{j}"));
        out.insert(format!("xd{j}"));
    }
    for j in 1..=m {
        out.insert(format!("u{j}"));
        out.insert(format!("ud{j}"));
    }
    out
}
