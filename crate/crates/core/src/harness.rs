//! Co-simulation of plant and observer, scaled-error diagnostics, energy
//! functional evaluation, delayed-argument mismatch estimation and envelope
//! verification.

use serde::Serialize;
use thiserror::Error;

use crate::certify::{norm2, scaled_error, CertMode, StabilityCertificate};
use crate::dde::{self, DdeError, DdeSystem, HistoryAccess, Solution};
use crate::exprlang::{EvalError, Expression, FnEnv, VarRef};
use crate::linalg::DenseMatrix;
use crate::model::{DelayModel, HistorySpec, ModelError, TriangularSystem};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Dde(#[from] DdeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("history evaluation failed: {0}")]
    History(EvalError),
    #[error("state escaped the boundedness box at t = {t} (|x|_inf = {norm})")]
    StateEscaped { t: f64, norm: f64 },
    #[error("exponential mode requires a constant delay")]
    ModeNeedsConstantDelay,
    #[error("certificate mode {cert:?} does not match the simulation mode {sim:?}")]
    ModeMismatch { cert: CertMode, sim: CertMode },
    #[error("window [{start}, {end}] is not covered by the trajectory")]
    WindowOutOfRange { start: f64, end: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Base gain and high-gain parameter for the observer.
#[derive(Debug, Clone)]
pub struct ObserverSpec {
    pub gain: Vec<f64>,
    pub eps: f64,
}

/// Component-wise high-gain vector `l_i / eps^i`.
pub fn build_observer_gain(gain: &[f64], eps: f64) -> Vec<f64> {
    assert!(eps > 0.0, "eps must be positive");
    gain.iter()
        .enumerate()
        .map(|(i, l)| l / eps.powi(i as i32 + 1))
        .collect()
}

/// Simulation knobs.
#[derive(Debug, Clone, Copy)]
pub struct SimulationOptions {
    pub t_end: f64,
    pub h: f64,
    /// Boundedness box: the run aborts if `|x(t)|_inf` ever exceeds this.
    pub k_bound: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            t_end: 20.0,
            h: 1e-3,
            k_bound: 1e3,
        }
    }
}

/// Coupled plant/observer run over the stacked state `(x, xhat)`.
#[derive(Debug)]
pub struct SimulationResult {
    pub solution: Solution,
    pub mode: CertMode,
    pub eps: f64,
    pub n: usize,
    /// The delay model the run was produced under.
    pub delay: DelayModel,
    pub error_norms: Vec<f64>,
    pub eta_norms: Vec<f64>,
    /// Supremum of the scaled error over the initial history window.
    pub sup_eta0: f64,
}

impl SimulationResult {
    pub fn times(&self) -> Vec<f64> {
        self.solution.trajectory.times()
    }

    pub fn len(&self) -> usize {
        self.solution.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solution.trajectory.is_empty()
    }

    /// Plant components of the stacked state at node `k`.
    pub fn plant_state(&self, k: usize) -> &[f64] {
        &self.solution.trajectory.states[k][..self.n]
    }

    /// Observer components of the stacked state at node `k`.
    pub fn observer_state(&self, k: usize) -> &[f64] {
        &self.solution.trajectory.states[k][self.n..]
    }
}

struct StackedSystem<'a> {
    sys: &'a TriangularSystem,
    delay: &'a DelayModel,
    gain_eps: Vec<f64>,
    /// Fixed lag used by the observer: the true constant lag in exponential
    /// mode, the upper bound in practical mode.
    observer_lag: f64,
}

impl StackedSystem<'_> {
    fn plant_lag(&self, t: f64) -> Result<f64, DdeError> {
        self.delay.lag_at(t).map_err(|e| DdeError::Rhs {
            t,
            message: e.to_string(),
        })
    }

    fn eval_inputs(&self, t: f64) -> Result<Vec<f64>, DdeError> {
        let env = FnEnv(|v: VarRef| match v {
            VarRef::Time => Some(t),
            _ => None,
        });
        self.sys
            .u
            .iter()
            .map(|u| {
                u.evaluate(&env).map_err(|e| DdeError::Rhs {
                    t,
                    message: e.to_string(),
                })
            })
            .collect()
    }
}

struct ComponentEnv<'a> {
    t: f64,
    x: &'a [f64],
    xd: &'a [f64],
    u: &'a [f64],
    ud: &'a [f64],
}

impl crate::exprlang::EvalEnv for ComponentEnv<'_> {
    fn lookup(&self, var: VarRef) -> Option<f64> {
        match var {
            VarRef::Time => Some(self.t),
            VarRef::State(i) => self.x.get(i - 1).copied(),
            VarRef::DelayedState(i) => self.xd.get(i - 1).copied(),
            VarRef::Input(i) => self.u.get(i - 1).copied(),
            VarRef::DelayedInput(i) => self.ud.get(i - 1).copied(),
            _ => None,
        }
    }
}

impl DdeSystem for StackedSystem<'_> {
    fn dim(&self) -> usize {
        2 * self.sys.n
    }

    fn lags(&self, t: f64, out: &mut Vec<f64>) {
        if let Ok(lag) = self.plant_lag(t) {
            out.push(lag);
        }
        out.push(self.observer_lag);
    }

    fn rhs(
        &self,
        t: f64,
        y: &[f64],
        history: &HistoryAccess<'_>,
        dydt: &mut [f64],
    ) -> Result<(), DdeError> {
        let n = self.sys.n;
        let tau_p = self.plant_lag(t)?;
        if tau_p < 0.0 {
            return Err(DdeError::NegativeLag { t, lag: tau_p });
        }
        let tau_o = self.observer_lag;
        let same_lag = tau_p == tau_o;

        let z_tau_p = history.sample(t - tau_p)?;
        let z_tau_o = if same_lag {
            z_tau_p.clone()
        } else {
            history.sample(t - tau_o)?
        };

        let u_now = self.eval_inputs(t)?;
        let u_del_p = self.eval_inputs(t - tau_p)?;
        let u_del_o = if same_lag {
            u_del_p.clone()
        } else {
            self.eval_inputs(t - tau_o)?
        };

        let wrap = |t: f64, e: EvalError| DdeError::Rhs {
            t,
            message: e.to_string(),
        };

        // x1 is the measured output; the innovation drives the observer rows
        let innovation = y[n] - y[0];
        for i in 0..n {
            let plant_env = ComponentEnv {
                t,
                x: &y[..n],
                xd: &z_tau_p[..n],
                u: &u_now,
                ud: &u_del_p,
            };
            let f_plant = self.sys.f[i].evaluate(&plant_env).map_err(|e| wrap(t, e))?;
            let chain = if i + 1 < n { y[i + 1] } else { 0.0 };
            dydt[i] = chain + f_plant;

            let obs_env = ComponentEnv {
                t,
                x: &y[n..],
                xd: &z_tau_o[n..],
                u: &u_now,
                ud: &u_del_o,
            };
            let f_obs = self.sys.f[i].evaluate(&obs_env).map_err(|e| wrap(t, e))?;
            let chain_obs = if i + 1 < n { y[n + i + 1] } else { 0.0 };
            dydt[n + i] = chain_obs + f_obs + self.gain_eps[i] * innovation;
        }
        Ok(())
    }
}

/// Supremum of `||D(eps) (phi_xhat - phi_x)(s)||` over `[-tau_ref, 0]`,
/// sampled at step `h` (endpoints included).
pub fn sup_eta_norm(
    history: &HistorySpec,
    eps: f64,
    tau_ref: f64,
    h: f64,
) -> Result<f64, HarnessError> {
    let mut sup = 0.0_f64;
    let steps = (tau_ref / h).ceil() as usize;
    for k in 0..=steps {
        let s = (-tau_ref + k as f64 * h).min(0.0);
        let x = history.eval(false, s)?;
        let xh = history.eval(true, s)?;
        let e: Vec<f64> = xh.iter().zip(&x).map(|(a, b)| a - b).collect();
        sup = sup.max(norm2(&scaled_error(eps, &e)));
    }
    // make sure s = 0 is always included even when tau_ref/h is not integral
    let x = history.eval(false, 0.0)?;
    let xh = history.eval(true, 0.0)?;
    let e: Vec<f64> = xh.iter().zip(&x).map(|(a, b)| a - b).collect();
    Ok(sup.max(norm2(&scaled_error(eps, &e))))
}

/// Runs the coupled plant/observer system. In exponential mode the delay must
/// be constant and the observer evaluates the nonlinearity at the true lag;
/// in practical mode the observer uses the fixed upper bound of the delay.
pub fn simulate_plant_observer(
    sys: &TriangularSystem,
    delay: &DelayModel,
    observer: &ObserverSpec,
    history: &HistorySpec,
    mode: CertMode,
    opts: &SimulationOptions,
) -> Result<SimulationResult, HarnessError> {
    let n = sys.n;
    if observer.gain.len() != n {
        return Err(HarnessError::Dimension(format!(
            "gain has {} entries, state dimension is {}",
            observer.gain.len(),
            n
        )));
    }
    if history.phi_x.len() != n || history.phi_xhat.len() != n {
        return Err(HarnessError::Dimension(format!(
            "history must provide {n} components per family"
        )));
    }
    let observer_lag = match (mode, delay) {
        (CertMode::Exponential, DelayModel::Constant { tau }) => *tau,
        (CertMode::Exponential, DelayModel::Varying { .. }) => {
            return Err(HarnessError::ModeNeedsConstantDelay)
        }
        (CertMode::Practical, DelayModel::Constant { tau }) => *tau,
        (CertMode::Practical, DelayModel::Varying { tau_star, .. }) => *tau_star,
    };

    let pre_span = delay.max_lag().max(observer_lag);

    // pre-validate the history expressions on the sampling grid so the
    // infallible prehistory closure below cannot hide an expression error
    {
        let steps = (pre_span / opts.h).ceil() as usize;
        for k in 0..=steps {
            let s = -pre_span + k as f64 * opts.h;
            history.eval(false, s.min(0.0)).map_err(map_history)?;
            history.eval(true, s.min(0.0)).map_err(map_history)?;
        }
    }

    let stacked = StackedSystem {
        sys,
        delay,
        gain_eps: build_observer_gain(&observer.gain, observer.eps),
        observer_lag,
    };

    let hist_clone = history.clone();
    let phi = Box::new(move |s: f64| -> Vec<f64> {
        let mut out = hist_clone
            .eval(false, s)
            .unwrap_or_else(|_| vec![f64::NAN; hist_clone.phi_x.len()]);
        let mut obs = hist_clone
            .eval(true, s)
            .unwrap_or_else(|_| vec![f64::NAN; hist_clone.phi_xhat.len()]);
        out.append(&mut obs);
        out
    });

    let solution = dde::integrate(&stacked, phi, pre_span, (0.0, opts.t_end), opts.h)?;

    // boundedness box on the plant state
    for (k, state) in solution.trajectory.states.iter().enumerate() {
        let norm_inf = state[..n].iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if norm_inf > opts.k_bound {
            return Err(HarnessError::StateEscaped {
                t: solution.trajectory.time(k),
                norm: norm_inf,
            });
        }
    }

    let eps = observer.eps;
    let mut error_norms = Vec::with_capacity(solution.trajectory.len());
    let mut eta_norms = Vec::with_capacity(solution.trajectory.len());
    for state in &solution.trajectory.states {
        let e: Vec<f64> = (0..n).map(|i| state[n + i] - state[i]).collect();
        error_norms.push(norm2(&e));
        eta_norms.push(norm2(&scaled_error(eps, &e)));
    }

    let sup_eta0 = sup_eta_norm(history, eps, pre_span, opts.h)?;

    Ok(SimulationResult {
        solution,
        mode,
        eps,
        n,
        delay: delay.clone(),
        error_norms,
        eta_norms,
        sup_eta0,
    })
}

fn map_history(err: ModelError) -> HarnessError {
    match err {
        ModelError::Eval(e) => HarnessError::History(e),
        other => HarnessError::Model(other),
    }
}

/// Scaled error at an arbitrary time, via dense sampling of the stacked run.
fn eta_at(result: &SimulationResult, t: f64) -> Result<Vec<f64>, DdeError> {
    let n = result.n;
    let z = result.solution.sample(t)?;
    let e: Vec<f64> = (0..n).map(|i| z[n + i] - z[i]).collect();
    Ok(scaled_error(result.eps, &e))
}

/// Energy functional series along the run: the quadratic form plus the
/// exponentially weighted integral of the scaled-error norm over the delay
/// window, composite trapezoid at the trajectory step.
pub fn eval_lkf(
    result: &SimulationResult,
    certificate: &StabilityCertificate,
) -> Result<Vec<f64>, HarnessError> {
    if certificate.mode != result.mode {
        return Err(HarnessError::ModeMismatch {
            cert: certificate.mode,
            sim: result.mode,
        });
    }
    let traj = &result.solution.trajectory;
    let h = traj.h;
    let p = DenseMatrix::from_rows(&certificate.p);
    let sigma = certificate.sigma;
    let tau_ref = certificate.tau_ref();

    let quad = |eta: &[f64]| -> f64 {
        let pv = p.matvec(eta);
        eta.iter().zip(pv.iter()).map(|(a, b)| a * b).sum()
    };

    let mut out = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        let t = traj.time(k);
        // window length: the true lag at t in practical mode, the constant
        // lag in exponential mode; the exponential weight always uses tau_ref
        let window = match certificate.mode {
            CertMode::Exponential => tau_ref,
            CertMode::Practical => result.delay.lag_at(t)?,
        };
        let substeps = (window / h).ceil().max(1.0) as usize;
        let ds = window / substeps as f64;
        let mut integral = 0.0;
        for j in 0..=substeps {
            let s = t - window + j as f64 * ds;
            let eta = eta_at(result, s).map_err(HarnessError::Dde)?;
            let weight = (sigma * (s - t) / tau_ref).exp();
            let term = weight * norm2(&eta).powi(2);
            let w = if j == 0 || j == substeps { 0.5 } else { 1.0 };
            integral += w * term;
        }
        integral *= ds;

        let eta_now = {
            let state = &traj.states[k];
            let e: Vec<f64> = (0..result.n).map(|i| state[result.n + i] - state[i]).collect();
            scaled_error(result.eps, &e)
        };
        out.push(quad(&eta_now) + integral);
    }
    Ok(out)
}

/// Delayed-argument mismatch bounds estimated from a run: `nu1` for the state
/// (`sup ||x(t - tau_star) - x(t - tau(t))||`), `nu2` for the input, `nu` the
/// larger of the two. Hermite-sampled on the trajectory grid over `window`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NuEstimate {
    pub nu1: f64,
    pub nu2: f64,
    pub nu: f64,
}

pub fn estimate_nu(
    result: &SimulationResult,
    delay: &DelayModel,
    u_exprs: &[Expression],
    window: (f64, f64),
) -> Result<NuEstimate, HarnessError> {
    let traj = &result.solution.trajectory;
    let (start, end) = window;
    if start < traj.t0 - 1e-12 || end > traj.end_time() + 1e-9 * traj.h || start > end {
        return Err(HarnessError::WindowOutOfRange { start, end });
    }
    let tau_star = delay.max_lag();
    let n = result.n;

    let eval_u = |t: f64| -> Result<Vec<f64>, HarnessError> {
        let env = FnEnv(|v: VarRef| match v {
            VarRef::Time => Some(t),
            _ => None,
        });
        u_exprs
            .iter()
            .map(|u| u.evaluate(&env).map_err(HarnessError::History))
            .collect()
    };

    let mut nu1 = 0.0_f64;
    let mut nu2 = 0.0_f64;
    let mut k = ((start - traj.t0) / traj.h).ceil() as usize;
    loop {
        let t = traj.time(k);
        if t > end + 1e-9 * traj.h || k >= traj.len() {
            break;
        }
        let tau_t = delay.lag_at(t)?;
        let x_star = result.solution.sample(t - tau_star)?;
        let x_tau = result.solution.sample(t - tau_t)?;
        let dx: Vec<f64> = (0..n).map(|i| x_star[i] - x_tau[i]).collect();
        nu1 = nu1.max(norm2(&dx));

        let u_star = eval_u(t - tau_star)?;
        let u_tau = eval_u(t - tau_t)?;
        let du: Vec<f64> = u_star.iter().zip(&u_tau).map(|(a, b)| a - b).collect();
        nu2 = nu2.max(norm2(&du));
        k += 1;
    }

    Ok(NuEstimate {
        nu1,
        nu2,
        nu: nu1.max(nu2),
    })
}

/// One bound violation: measured error above the certified bound.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnvelopeViolation {
    pub t: f64,
    pub measured: f64,
    pub bound: f64,
}

/// Result of checking a run against the certified envelope (plus radius in
/// practical mode). Failure is data, not an error.
#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeReport {
    pub pass: bool,
    /// Smallest `bound - measured` over the grid.
    pub min_margin: f64,
    pub worst: Option<EnvelopeViolation>,
    pub violations: usize,
    #[serde(skip)]
    pub bounds: Vec<f64>,
    #[serde(skip)]
    pub margins: Vec<f64>,
}

/// Asserts `||e(t_k)|| <= coef exp(-rate t_k) + radius` at every grid point.
pub fn check_envelope(
    result: &SimulationResult,
    certificate: &StabilityCertificate,
) -> Result<EnvelopeReport, HarnessError> {
    if certificate.mode != result.mode {
        return Err(HarnessError::ModeMismatch {
            cert: certificate.mode,
            sim: result.mode,
        });
    }
    let traj = &result.solution.trajectory;
    let mut bounds = Vec::with_capacity(traj.len());
    let mut margins = Vec::with_capacity(traj.len());
    let mut min_margin = f64::INFINITY;
    let mut worst: Option<EnvelopeViolation> = None;
    let mut violations = 0usize;
    for k in 0..traj.len() {
        let t = traj.time(k);
        let bound = certificate.bound_at(t);
        let measured = result.error_norms[k];
        let margin = bound - measured;
        if margin < min_margin {
            min_margin = margin;
        }
        if margin < 0.0 {
            violations += 1;
            let v = EnvelopeViolation { t, measured, bound };
            if worst.map_or(true, |w| margin < w.bound - w.measured) {
                worst = Some(v);
            }
        }
        bounds.push(bound);
        margins.push(margin);
    }
    Ok(EnvelopeReport {
        pass: violations == 0,
        min_margin,
        worst,
        violations,
        bounds,
        margins,
    })
}
