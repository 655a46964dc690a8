//! Observer feasibility certification: evaluates the high-gain feasibility
//! conditions, searches the feasible range of the gain parameter, solves the
//! decay-rate inequality for the largest admissible rate, and packages the
//! resulting envelope and practical-radius constants into a certificate.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{
    companion_char_poly, companion_from_gain, is_hurwitz, solve_lyapunov, DenseMatrix,
    LinalgError, LyapunovConvention,
};
use crate::model::{gamma_eval, DelayModel, GammaSpec, ModelError};

#[derive(Debug, Clone, Error)]
pub enum CertifyError {
    #[error("A_L not Hurwitz for gain {gain:?}")]
    NotHurwitz { gain: Vec<f64> },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("condition LHS negative at eps = {eps} (lhs = {lhs})")]
    ConditionViolated { eps: f64, lhs: f64 },
    #[error("no feasible eps on the scanned grid (0, {eps_max}]")]
    NoFeasibleEpsilon { eps_max: f64 },
    #[error("decay-rate inequality has no positive slack (rhs = {rhs})")]
    SigmaInfeasible { rhs: f64 },
    #[error("practical mode requires the delay bound tau_star and margin beta")]
    MissingDelayBound,
}

/// Which feasibility condition / observer construction a certificate targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertMode {
    /// Constant, known delay; the observer evaluates the nonlinearity at the
    /// true lag and the error converges to zero exponentially.
    Exponential,
    /// Unknown time-varying delay; the observer uses the fixed upper bound
    /// `tau_star` and the error converges to a ball of positive radius.
    Practical,
}

/// Two published forms of the practical-mode feasibility condition. `Strict`
/// divides the quadratic coupling term by the derivative margin `beta`, which
/// is what the decay-rate inequality actually requires in the limit of a
/// vanishing rate; `Paper` keeps the term undivided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condi2Variant {
    Paper,
    Strict,
}

/// Feasibility margin for the exponential mode:
/// `lambda_min/(eps ||P||) - 2 n gamma1 ||P|| - n^2 gamma2^2 ||P||^2 - 1`.
pub fn exponential_condition_lhs(
    lambda_min: f64,
    norm_p: f64,
    n: usize,
    gamma1: f64,
    gamma2: f64,
    eps: f64,
) -> f64 {
    condition_core(lambda_min, norm_p, n, gamma1, gamma2, eps, 1.0) - 1.0
}

/// Feasibility margin for the practical mode; the `Strict` variant divides
/// the quadratic coupling term by `beta`. Organized so that at `beta = 1`
/// the strict value equals `exponential_condition_lhs - 1/4` exactly.
pub fn practical_condition_lhs(
    lambda_min: f64,
    norm_p: f64,
    n: usize,
    gamma1: f64,
    gamma2: f64,
    eps: f64,
    beta: f64,
    variant: Condi2Variant,
) -> f64 {
    let beta_div = match variant {
        Condi2Variant::Paper => 1.0,
        Condi2Variant::Strict => beta,
    };
    (condition_core(lambda_min, norm_p, n, gamma1, gamma2, eps, beta_div) - 1.0) - 0.25
}

fn condition_core(
    lambda_min: f64,
    norm_p: f64,
    n: usize,
    gamma1: f64,
    gamma2: f64,
    eps: f64,
    beta_div: f64,
) -> f64 {
    assert!(eps > 0.0, "eps must be positive");
    let nf = n as f64;
    let coupling = nf * nf * gamma2 * gamma2 * norm_p * norm_p;
    lambda_min / (eps * norm_p) - 2.0 * nf * gamma1 * norm_p - coupling / beta_div
}

/// Condition selector carrying the mode-specific parameters.
#[derive(Debug, Clone, Copy)]
pub enum Condition {
    Exponential,
    Practical { beta: f64, variant: Condi2Variant },
}

impl Condition {
    pub fn lhs(
        &self,
        lambda_min: f64,
        norm_p: f64,
        n: usize,
        gamma1: f64,
        gamma2: f64,
        eps: f64,
    ) -> f64 {
        match self {
            Condition::Exponential => {
                exponential_condition_lhs(lambda_min, norm_p, n, gamma1, gamma2, eps)
            }
            Condition::Practical { beta, variant } => practical_condition_lhs(
                lambda_min, norm_p, n, gamma1, gamma2, eps, *beta, *variant,
            ),
        }
    }
}

/// Outcome of the feasibility scan over the gain parameter.
#[derive(Debug, Clone, Serialize)]
pub struct EpsilonSearch {
    pub feasible: bool,
    /// Critical value where the condition changes sign, when one exists on
    /// the scanned grid; bisected to the requested tolerance.
    pub eps_star: Option<f64>,
    /// `eps_star / 1.3`, or the largest feasible scanned point when the
    /// condition never changes sign.
    pub recommended_eps: f64,
    pub lhs_at_recommended: f64,
}

/// Safety factor between the critical value and the recommendation; keeps the
/// certificate away from the boundary where the decay rate collapses.
const EPS_SAFETY: f64 = 1.3;

/// Scans a 200-point log grid on `(1e-6, eps_max]`, locates the largest sign
/// change of the condition LHS and refines it by bisection.
pub fn find_epsilon_range(
    lambda_min: f64,
    norm_p: f64,
    n: usize,
    gamma: &GammaSpec,
    condition: Condition,
    eps_max: f64,
    tol: f64,
) -> Result<EpsilonSearch, CertifyError> {
    assert!(eps_max > 0.0 && tol > 0.0);
    let lhs_at = |eps: f64| -> Result<f64, CertifyError> {
        let (g1, g2, _) = gamma_eval(gamma, eps, n)?;
        Ok(condition.lhs(lambda_min, norm_p, n, g1, g2, eps))
    };

    const GRID: usize = 200;
    let lo = 1e-6_f64;
    let log_lo = lo.ln();
    let log_hi = eps_max.ln();
    let mut grid = Vec::with_capacity(GRID);
    for i in 0..GRID {
        let frac = i as f64 / (GRID - 1) as f64;
        let eps = (log_lo + frac * (log_hi - log_lo)).exp();
        grid.push((eps, lhs_at(eps)?));
    }

    if grid.iter().all(|(_, lhs)| *lhs <= 0.0) {
        return Err(CertifyError::NoFeasibleEpsilon { eps_max });
    }

    // largest bracket with a + to - transition
    let mut bracket = None;
    for i in (0..GRID - 1).rev() {
        if grid[i].1 > 0.0 && grid[i + 1].1 < 0.0 {
            bracket = Some((grid[i].0, grid[i + 1].0));
            break;
        }
    }

    let eps_star = match bracket {
        Some((mut a, mut b)) => {
            while b - a > tol {
                let mid = 0.5 * (a + b);
                if lhs_at(mid)? > 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            Some(0.5 * (a + b))
        }
        None => None,
    };

    let recommended_eps = match eps_star {
        Some(star) => star / EPS_SAFETY,
        None => {
            // never crosses: recommend the largest scanned feasible point
            grid.iter()
                .rev()
                .find(|(_, lhs)| *lhs > 0.0)
                .map(|(eps, _)| *eps)
                .unwrap()
        }
    };
    let lhs_at_recommended = lhs_at(recommended_eps)?;

    Ok(EpsilonSearch {
        feasible: lhs_at_recommended > 0.0,
        eps_star,
        recommended_eps,
        lhs_at_recommended,
    })
}

/// Decay-rate selector: constant delay uses the lag itself, practical mode
/// uses the upper bound and divides the coupling term by `beta`.
#[derive(Debug, Clone, Copy)]
pub enum SigmaMode {
    Exponential { tau: f64 },
    Practical { tau_star: f64, beta: f64 },
}

/// Solves the decay-rate inequality for the near-maximal admissible rate.
///
/// The left side `g(sigma) = lambda_min sigma / tau + q (e^sigma - 1)` is
/// strictly increasing with `g(0) = 0` (`q` is the beta-adjusted quadratic
/// coupling weight), so the returned value is the bisection solution of
/// `g(sigma) = rhs - tol`; the inequality then holds with slack greater than
/// `tol` at the returned rate, and any smaller rate remains valid.
pub fn find_sigma(
    lambda_min: f64,
    norm_p: f64,
    n: usize,
    gamma1: f64,
    gamma2: f64,
    eps: f64,
    mode: SigmaMode,
    tol: f64,
) -> Result<f64, CertifyError> {
    assert!(tol > 0.0);
    let nf = n as f64;
    let b = 2.0 * nf * gamma2 * norm_p;
    let (tau_ref, beta) = match mode {
        SigmaMode::Exponential { tau } => (tau, 1.0),
        SigmaMode::Practical { tau_star, beta } => (tau_star, beta),
    };
    let q = b * b / (4.0 * beta);
    let base = lambda_min / (eps * norm_p) - 2.0 * nf * gamma1 * norm_p;
    let rhs = match mode {
        SigmaMode::Exponential { .. } => base - 1.0 - q,
        SigmaMode::Practical { .. } => base - 1.25 - q,
    };
    if rhs <= tol {
        return Err(CertifyError::SigmaInfeasible { rhs });
    }
    let g = |sigma: f64| lambda_min * sigma / tau_ref + q * (sigma.exp() - 1.0);
    let target = rhs - tol;

    let mut hi = 1.0_f64;
    while g(hi) < target {
        hi *= 2.0;
        if hi > 1e9 {
            break;
        }
    }
    let mut lo = 0.0_f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.max(1.0) {
            break;
        }
    }
    Ok(lo)
}

/// Error envelope `||e(t)|| <= coef * exp(-rate t)`. `coef_paper` reports the
/// printed-convention conversion `1 / ||D(eps)||`, which does not dominate
/// the scaled error for `eps < 1`; `coef` uses the operator norm of
/// `D(eps)^{-1}` and is the sound bound. Both are exposed.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Envelope {
    pub coef: f64,
    pub rate: f64,
    pub coef_paper: f64,
}

/// Operator norm of `D(eps)^{-1} = diag(1, 1/eps, ..., 1/eps^{n-1})`.
pub fn inv_scaling_norm(n: usize, eps: f64) -> f64 {
    assert!(eps > 0.0);
    1.0_f64.max(eps.powi(-(n as i32 - 1)))
}

/// Operator norm of `D(eps)`.
pub fn scaling_norm(n: usize, eps: f64) -> f64 {
    assert!(eps > 0.0);
    1.0_f64.max(eps.powi(n as i32 - 1))
}

/// Builds the envelope constants from the certificate data and the supremum
/// of the scaled error over the initial history window.
pub fn error_envelope(
    n: usize,
    eps: f64,
    lambda_min: f64,
    norm_p: f64,
    tau_ref: f64,
    sigma: f64,
    sup_eta0: f64,
) -> Envelope {
    let shape = ((norm_p + tau_ref) / lambda_min).sqrt();
    Envelope {
        coef: inv_scaling_norm(n, eps) * shape * sup_eta0,
        rate: sigma / (2.0 * tau_ref),
        coef_paper: shape * sup_eta0 / scaling_norm(n, eps),
    }
}

/// Disturbance constant and certified ball radius for the practical mode.
/// `nu` bounds the delayed-argument mismatch (`max(nu1, nu2)` from the
/// harness estimator or supplied by the user); it is never invented here.
pub fn practical_radius(
    n: usize,
    eps: f64,
    norm_p: f64,
    gamma2: f64,
    gamma3: f64,
    sigma: f64,
    tau_star: f64,
    lambda_min: f64,
    nu: f64,
) -> (f64, f64) {
    assert!(nu >= 0.0, "nu must be nonnegative");
    let geo = if (eps - 1.0).abs() < 1e-15 {
        n as f64
    } else {
        (1.0 - eps.powi(n as i32)) / (1.0 - eps)
    };
    let theta = 2.0 * norm_p * (gamma2 + gamma3) * geo * nu;
    let radius =
        inv_scaling_norm(n, eps) * (2.0 * theta * theta * tau_star / (sigma * lambda_min)).sqrt();
    (theta, radius)
}

/// Complete stability certificate. All stored constants are reproducible
/// from `p`, `eps`, the gammas and the delay data.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityCertificate {
    pub mode: CertMode,
    pub eps: f64,
    pub p: Vec<Vec<f64>>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub sigma: f64,
    /// Exponential-mode quadratic margin at (`sigma`, `eps`); `None` in
    /// practical mode.
    pub a: Option<f64>,
    /// Coupling weight `2 n gamma2 ||P||`.
    pub b: f64,
    /// Practical-mode quadratic margin at (`sigma`, `eps`); `None` in
    /// exponential mode.
    pub c: Option<f64>,
    pub envelope_coef: f64,
    pub envelope_rate: f64,
    pub envelope_coef_paper: f64,
    pub theta: Option<f64>,
    pub radius: Option<f64>,
    pub nu: Option<f64>,
    // provenance needed to recompute everything above
    pub n: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub tau: Option<f64>,
    pub tau_star: Option<f64>,
    pub beta: Option<f64>,
    pub convention: LyapunovConvention,
    pub condi2_variant: Condi2Variant,
    pub condition_lhs: f64,
    pub sup_eta0: f64,
}

impl StabilityCertificate {
    /// Reference lag entering the decay rate: the constant lag in
    /// exponential mode, the upper bound in practical mode.
    pub fn tau_ref(&self) -> f64 {
        match self.mode {
            CertMode::Exponential => self.tau.expect("exponential certificate carries tau"),
            CertMode::Practical => self
                .tau_star
                .expect("practical certificate carries tau_star"),
        }
    }

    /// Envelope plus radius at time `t` (radius contributes 0 when absent).
    pub fn bound_at(&self, t: f64) -> f64 {
        self.envelope_coef * (-self.envelope_rate * t).exp() + self.radius.unwrap_or(0.0)
    }

    /// Re-derives the disturbance constant and radius from a mismatch bound
    /// `nu`, returning the updated certificate. Practical mode only.
    pub fn with_nu(&self, nu: f64) -> StabilityCertificate {
        assert_eq!(self.mode, CertMode::Practical);
        let (theta, radius) = practical_radius(
            self.n,
            self.eps,
            self.lambda_max,
            self.gamma2,
            self.gamma3,
            self.sigma,
            self.tau_star.expect("practical certificate carries tau_star"),
            self.lambda_min,
            nu,
        );
        StabilityCertificate {
            theta: Some(theta),
            radius: Some(radius),
            nu: Some(nu),
            ..self.clone()
        }
    }
}

/// How the gain parameter is chosen when building a certificate.
#[derive(Debug, Clone, Copy)]
pub enum EpsChoice {
    /// Validate the given value.
    Given(f64),
    /// Search `(0, eps_max]` and use the recommended value.
    Auto { eps_max: f64 },
}

/// Inputs to [`build_certificate`].
#[derive(Debug, Clone)]
pub struct CertifyRequest<'a> {
    pub gain: &'a [f64],
    pub eps: EpsChoice,
    pub gamma: &'a GammaSpec,
    pub n: usize,
    pub delay: &'a DelayModel,
    pub convention: LyapunovConvention,
    pub variant: Condi2Variant,
    /// Supremum of the scaled error over the initial history window.
    pub sup_eta0: f64,
    /// Optional mismatch bound for the practical radius.
    pub nu: Option<f64>,
    pub sigma_tol: f64,
}

/// Result of certification: the certificate plus the feasibility scan that
/// produced (or validated) the gain parameter.
#[derive(Debug, Clone)]
pub struct Certification {
    pub certificate: StabilityCertificate,
    pub search: EpsilonSearch,
}

/// Full certification pipeline: Hurwitz test, Lyapunov solve, feasibility
/// check or search, decay-rate solve, envelope and (optionally) radius.
pub fn build_certificate(req: &CertifyRequest<'_>) -> Result<Certification, CertifyError> {
    if req.gain.len() != req.n {
        return Err(CertifyError::Linalg(LinalgError::Dimension(format!(
            "gain has {} entries, state dimension is {}",
            req.gain.len(),
            req.n
        ))));
    }
    let poly = companion_char_poly(req.gain);
    if !is_hurwitz(&poly) {
        return Err(CertifyError::NotHurwitz {
            gain: req.gain.to_vec(),
        });
    }
    let a_l = companion_from_gain(req.gain);
    let lyap = solve_lyapunov(&a_l, req.convention)?;
    let (lambda_min, norm_p) = (lyap.lambda_min, lyap.lambda_max);

    let (mode, condition, tau, tau_star, beta) = match req.delay {
        DelayModel::Constant { tau } => (
            CertMode::Exponential,
            Condition::Exponential,
            Some(*tau),
            None,
            None,
        ),
        DelayModel::Varying { tau_star, beta, .. } => (
            CertMode::Practical,
            Condition::Practical {
                beta: *beta,
                variant: req.variant,
            },
            None,
            Some(*tau_star),
            Some(*beta),
        ),
    };

    let eps_max = match req.eps {
        EpsChoice::Given(eps) => (eps * 4.0).max(1.0),
        EpsChoice::Auto { eps_max } => eps_max,
    };
    let search = find_epsilon_range(
        lambda_min, norm_p, req.n, req.gamma, condition, eps_max, 1e-6,
    )?;
    let eps = match req.eps {
        EpsChoice::Given(eps) => eps,
        EpsChoice::Auto { .. } => search.recommended_eps,
    };

    let (gamma1, gamma2, gamma3) = gamma_eval(req.gamma, eps, req.n)?;
    let condition_lhs = condition.lhs(lambda_min, norm_p, req.n, gamma1, gamma2, eps);
    if condition_lhs <= 0.0 {
        return Err(CertifyError::ConditionViolated {
            eps,
            lhs: condition_lhs,
        });
    }

    let sigma_mode = match mode {
        CertMode::Exponential => SigmaMode::Exponential { tau: tau.unwrap() },
        CertMode::Practical => SigmaMode::Practical {
            tau_star: tau_star.unwrap(),
            beta: beta.unwrap(),
        },
    };
    let sigma = find_sigma(
        lambda_min,
        norm_p,
        req.n,
        gamma1,
        gamma2,
        eps,
        sigma_mode,
        req.sigma_tol.max(1e-9),
    )?;

    let nf = req.n as f64;
    let b = 2.0 * nf * gamma2 * norm_p;
    let tau_ref = tau.or(tau_star).unwrap();
    let (a, c) = match mode {
        CertMode::Exponential => (
            Some(
                lambda_min * (1.0 / (eps * norm_p) - sigma / tau_ref)
                    - 2.0 * nf * gamma1 * norm_p
                    - 1.0,
            ),
            None,
        ),
        CertMode::Practical => (
            None,
            Some(
                lambda_min * (1.0 / (eps * norm_p) - sigma / tau_ref)
                    - 2.0 * nf * gamma1 * norm_p
                    - 1.25,
            ),
        ),
    };

    let env = error_envelope(req.n, eps, lambda_min, norm_p, tau_ref, sigma, req.sup_eta0);

    let (theta, radius, nu) = match (mode, req.nu) {
        (CertMode::Practical, Some(nu)) => {
            let (theta, radius) = practical_radius(
                req.n,
                eps,
                norm_p,
                gamma2,
                gamma3,
                sigma,
                tau_star.unwrap(),
                lambda_min,
                nu,
            );
            (Some(theta), Some(radius), Some(nu))
        }
        _ => (None, None, None),
    };

    let certificate = StabilityCertificate {
        mode,
        eps,
        p: lyap.p.to_rows(),
        lambda_min,
        lambda_max: norm_p,
        sigma,
        a,
        b,
        c,
        envelope_coef: env.coef,
        envelope_rate: env.rate,
        envelope_coef_paper: env.coef_paper,
        theta,
        radius,
        nu,
        n: req.n,
        gamma1,
        gamma2,
        gamma3,
        tau,
        tau_star,
        beta,
        convention: req.convention,
        condi2_variant: req.variant,
        condition_lhs,
        sup_eta0: req.sup_eta0,
    };

    Ok(Certification {
        certificate,
        search,
    })
}

/// Rebuilds the Lyapunov matrix for a gain, for reporting both conventions.
pub fn lyapunov_for_gain(
    gain: &[f64],
    convention: LyapunovConvention,
) -> Result<crate::linalg::LyapunovSolution, CertifyError> {
    let poly = companion_char_poly(gain);
    if !is_hurwitz(&poly) {
        return Err(CertifyError::NotHurwitz {
            gain: gain.to_vec(),
        });
    }
    Ok(solve_lyapunov(&companion_from_gain(gain), convention)?)
}

/// Scaled-error vector `D(eps) e`.
pub fn scaled_error(eps: f64, e: &[f64]) -> Vec<f64> {
    e.iter()
        .enumerate()
        .map(|(i, v)| eps.powi(i as i32) * v)
        .collect()
}

/// Euclidean norm helper used across the harness and tests.
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scaling matrix accessor re-exported for envelope checks.
pub fn scaling_matrix(n: usize, eps: f64) -> DenseMatrix {
    crate::linalg::scaling_matrix(n, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    // reference eigenvalue data for the demo gain
    const LMIN: f64 = 0.1099;
    const LMAX: f64 = 1.1101;
    const G1: f64 = 0.04375; // (1 + 0.05) / 24
    const G2: f64 = 0.0875; // (1 + 0.05) / 12

    #[test]
    fn exponential_condition_demo_value() {
        let lhs = exponential_condition_lhs(LMIN, LMAX, 2, G1, G2, 0.05);
        assert!((lhs - 0.7479944).abs() < 1e-6, "lhs = {lhs}");
        // infeasible further out
        assert!(exponential_condition_lhs(LMIN, LMAX, 2, 1.5 / 24.0, 1.5 / 12.0, 0.5) < 0.0);
    }

    #[test]
    fn exponential_condition_trivial_zero() {
        assert_eq!(exponential_condition_lhs(1.0, 1.0, 3, 0.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn practical_condition_demo_values() {
        let paper = practical_condition_lhs(LMIN, LMAX, 2, G1, G2, 0.05, 0.99, Condi2Variant::Paper);
        assert!((paper - 0.4979944).abs() < 1e-6, "paper = {paper}");
        let strict =
            practical_condition_lhs(LMIN, LMAX, 2, G1, G2, 0.05, 0.99, Condi2Variant::Strict);
        assert!((strict - 0.4976132).abs() < 1e-6, "strict = {strict}");
    }

    #[test]
    fn practical_condition_trivial_zero() {
        let lhs = practical_condition_lhs(1.0, 1.0, 2, 0.0, 0.0, 0.8, 1.0, Condi2Variant::Strict);
        assert!(lhs.abs() < 1e-12);
    }

    #[test]
    fn practical_reduces_to_exponential_at_beta_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let lmin = rng.random_range(0.01..1.0);
            let lmax = lmin + rng.random_range(0.1..3.0);
            let g1 = rng.random_range(0.0..0.5);
            let g2 = rng.random_range(0.0..0.5);
            let eps = rng.random_range(0.01..2.0);
            let n = rng.random_range(1..5);
            let strict =
                practical_condition_lhs(lmin, lmax, n, g1, g2, eps, 1.0, Condi2Variant::Strict);
            let expo = exponential_condition_lhs(lmin, lmax, n, g1, g2, eps);
            assert_eq!(strict, expo - 0.25);
        }
    }

    fn demo_gamma() -> GammaSpec {
        demo::polar_molecule_system().gamma
    }

    #[test]
    fn epsilon_search_demo_practical() {
        let search = find_epsilon_range(
            LMIN,
            LMAX,
            2,
            &demo_gamma(),
            Condition::Practical {
                beta: 0.99,
                variant: Condi2Variant::Strict,
            },
            1.0,
            1e-6,
        )
        .unwrap();
        let star = search.eps_star.expect("sign change expected");
        assert!((0.06..=0.08).contains(&star), "eps_star = {star}");
        assert!((star - 0.0666).abs() < 1e-3);
        assert!(search.feasible);
        assert!(search.recommended_eps < star);
        assert!(search.lhs_at_recommended > 0.0);
    }

    #[test]
    fn epsilon_search_trivial_gamma_free() {
        // gamma = 0: lhs = 1/eps - 1, critical value 1
        let search = find_epsilon_range(
            1.0,
            1.0,
            1,
            &GammaSpec::Auto { k: 0.0 },
            Condition::Exponential,
            2.0,
            1e-9,
        )
        .unwrap();
        let star = search.eps_star.unwrap();
        assert!((star - 1.0).abs() < 1e-8, "eps_star = {star}");
    }

    #[test]
    fn epsilon_search_demo_exponential_covers_given_eps() {
        let search = find_epsilon_range(
            LMIN,
            LMAX,
            2,
            &demo_gamma(),
            Condition::Exponential,
            1.0,
            1e-6,
        )
        .unwrap();
        let star = search.eps_star.unwrap();
        assert!(star > 0.05);
        let lhs = exponential_condition_lhs(LMIN, LMAX, 2, G1, G2, 0.05);
        assert!(lhs > 0.7);
    }

    #[test]
    fn epsilon_search_infeasible_reports_error() {
        // gigantic gammas leave no feasible point
        let gamma = GammaSpec::Auto { k: 1e6 };
        let out = find_epsilon_range(LMIN, LMAX, 2, &gamma, Condition::Exponential, 1.0, 1e-6);
        assert!(matches!(out, Err(CertifyError::NoFeasibleEpsilon { .. })));
    }

    #[test]
    fn sigma_demo_exponential() {
        let sigma = find_sigma(
            LMIN,
            LMAX,
            2,
            G1,
            G2,
            0.05,
            SigmaMode::Exponential { tau: 0.25 },
            1e-9,
        )
        .unwrap();
        assert!((1.3..=1.5).contains(&sigma), "sigma = {sigma}");
        assert!((sigma - 1.429).abs() < 5e-3);
    }

    #[test]
    fn sigma_demo_practical() {
        let sigma = find_sigma(
            LMIN,
            LMAX,
            2,
            G1,
            G2,
            0.05,
            SigmaMode::Practical {
                tau_star: 0.26,
                beta: 0.99,
            },
            1e-9,
        )
        .unwrap();
        assert!((0.9..=1.1).contains(&sigma), "sigma = {sigma}");
        assert!((sigma - 1.018).abs() < 5e-3);
    }

    #[test]
    fn sigma_linear_case_hits_target_exactly() {
        // gamma2 = 0 makes g linear: g(sigma) = sigma for lambda_min = tau = 1,
        // and the rhs is 1/(eps ||P||) - 1 = 1 at eps = 0.5
        let tol = 1e-9;
        let sigma = find_sigma(
            1.0,
            1.0,
            1,
            0.0,
            0.0,
            0.5,
            SigmaMode::Exponential { tau: 1.0 },
            tol,
        )
        .unwrap();
        assert!((sigma - (1.0 - tol)).abs() < 1e-12, "sigma = {sigma}");
    }

    #[test]
    fn sigma_slack_and_overdrive() {
        // returned rate leaves positive slack; 5% more violates the inequality
        for (mode, expect_lo, expect_hi) in [
            (SigmaMode::Exponential { tau: 0.25 }, 1.3, 1.5),
            (
                SigmaMode::Practical {
                    tau_star: 0.26,
                    beta: 0.99,
                },
                0.9,
                1.1,
            ),
        ] {
            let tol = 1e-9;
            let sigma = find_sigma(LMIN, LMAX, 2, G1, G2, 0.05, mode, tol).unwrap();
            assert!(sigma >= expect_lo && sigma <= expect_hi);
            let b = 2.0 * 2.0 * G2 * LMAX;
            let (tau_ref, beta, extra) = match mode {
                SigmaMode::Exponential { tau } => (tau, 1.0, 1.0),
                SigmaMode::Practical { tau_star, beta } => (tau_star, beta, 1.25),
            };
            let q = b * b / (4.0 * beta);
            let g = |s: f64| LMIN * s / tau_ref + q * (s.exp() - 1.0);
            let rhs = LMIN / (0.05 * LMAX) - 2.0 * 2.0 * G1 * LMAX - extra - q;
            assert!(rhs - g(sigma) >= 1e-9, "slack {}", rhs - g(sigma));
            assert!(g(1.05 * sigma) > rhs, "1.05 sigma should violate");
        }
    }

    #[test]
    fn sigma_monotone_left_side() {
        // g is strictly increasing on [0, 10] for random parameter draws
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let lambda_min = rng.random_range(0.01..2.0);
            let tau = rng.random_range(0.05..2.0);
            let q = rng.random_range(0.0..5.0);
            let g = |s: f64| lambda_min * s / tau + q * (s.exp() - 1.0);
            let mut prev = g(0.0);
            assert_eq!(prev, 0.0);
            let mut s = 0.01;
            while s <= 10.0 {
                let cur = g(s);
                assert!(cur > prev, "not increasing at {s}");
                prev = cur;
                s += 0.01;
            }
        }
    }

    #[test]
    fn envelope_demo_rate() {
        let env = error_envelope(2, 0.05, LMIN, LMAX, 0.25, 1.4, 1.0);
        assert!((env.rate - 2.8).abs() < 1e-12);
        assert!(env.coef > env.coef_paper); // 1/||D|| = 1 here, ||D^{-1}|| = 20
        assert!((env.coef / env.coef_paper - 20.0).abs() < 1e-9);
    }

    #[test]
    fn envelope_identity_scaling() {
        let env = error_envelope(3, 1.0, 1.0, 2.0, 0.5, 1.0, 0.7);
        // ||D^{-1}|| = 1, so coef = sqrt((||P|| + tau) / lambda_min) * sup
        assert!((env.coef - (2.5_f64).sqrt() * 0.7).abs() < 1e-12);
        assert_eq!(env.coef, env.coef_paper);
    }

    #[test]
    fn envelope_zero_history() {
        let env = error_envelope(2, 0.05, LMIN, LMAX, 0.25, 1.4, 0.0);
        assert_eq!(env.coef, 0.0);
    }

    #[test]
    fn radius_trivial_cases() {
        let (theta, radius) = practical_radius(2, 0.05, LMAX, G2, 1.05, 1.0, 0.26, LMIN, 0.0);
        assert_eq!(theta, 0.0);
        assert_eq!(radius, 0.0);

        let (theta, _) = practical_radius(2, 1.0, 1.0, 1.0, 1.0, 1.0, 0.26, 0.5, 1.0);
        assert!((theta - 8.0).abs() < 1e-12);
    }

    fn demo_request<'a>(
        gamma: &'a GammaSpec,
        delay: &'a DelayModel,
        gain: &'a [f64],
    ) -> CertifyRequest<'a> {
        CertifyRequest {
            gain,
            eps: EpsChoice::Given(0.05),
            gamma,
            n: 2,
            delay,
            convention: LyapunovConvention::AsWritten,
            variant: Condi2Variant::Strict,
            sup_eta0: 4.0003,
            nu: Some(0.07),
            sigma_tol: 1e-9,
        }
    }

    #[test]
    fn build_certificate_practical_demo() {
        let gamma = demo_gamma();
        let delay = demo::varying_delay();
        let cert = build_certificate(&demo_request(&gamma, &delay, &demo::GAIN))
            .unwrap()
            .certificate;
        assert_eq!(cert.mode, CertMode::Practical);
        assert!((cert.lambda_min - 0.1099).abs() < 5e-4);
        assert!((cert.lambda_max - 1.1101).abs() < 5e-4);
        assert!((0.9..=1.1).contains(&cert.sigma));
        assert!(cert.condition_lhs > 0.49);
        assert!(cert.radius.unwrap() > 0.0);
        assert!(cert.radius.unwrap().is_finite());
        assert!(cert.c.is_some() && cert.a.is_none());
    }

    #[test]
    fn build_certificate_rejects_non_hurwitz_gain() {
        let gamma = demo_gamma();
        let delay = demo::varying_delay();
        let gain = [0.0, 0.0];
        let err = build_certificate(&demo_request(&gamma, &delay, &gain)).unwrap_err();
        assert!(matches!(err, CertifyError::NotHurwitz { .. }));
    }

    #[test]
    fn build_certificate_rejects_infeasible_eps() {
        let gamma = demo_gamma();
        let delay = demo::varying_delay();
        let mut req = demo_request(&gamma, &delay, &demo::GAIN);
        req.eps = EpsChoice::Given(0.5);
        let err = build_certificate(&req).unwrap_err();
        assert!(matches!(err, CertifyError::ConditionViolated { .. }));
    }

    #[test]
    fn certificate_constants_recompute_exactly() {
        let gamma = demo_gamma();
        for (delay, nu) in [
            (demo::varying_delay(), Some(0.07)),
            (demo::constant_delay(), None),
        ] {
            let mut req = demo_request(&gamma, &delay, &demo::GAIN);
            req.nu = nu;
            let cert = build_certificate(&req).unwrap().certificate;

            // rebuild every derived constant from the stored inputs
            let p = DenseMatrix::from_rows(&cert.p);
            let eigs = crate::linalg::symmetric_eigenvalues(&p).unwrap();
            assert!((eigs[0] - cert.lambda_min).abs() < 1e-12);
            assert!((eigs[eigs.len() - 1] - cert.lambda_max).abs() < 1e-12);

            let nf = cert.n as f64;
            let b = 2.0 * nf * cert.gamma2 * cert.lambda_max;
            assert!((b - cert.b).abs() < 1e-12);

            let mode = match cert.mode {
                CertMode::Exponential => SigmaMode::Exponential {
                    tau: cert.tau.unwrap(),
                },
                CertMode::Practical => SigmaMode::Practical {
                    tau_star: cert.tau_star.unwrap(),
                    beta: cert.beta.unwrap(),
                },
            };
            let sigma = find_sigma(
                cert.lambda_min,
                cert.lambda_max,
                cert.n,
                cert.gamma1,
                cert.gamma2,
                cert.eps,
                mode,
                1e-9,
            )
            .unwrap();
            assert!((sigma - cert.sigma).abs() < 1e-12);

            let env = error_envelope(
                cert.n,
                cert.eps,
                cert.lambda_min,
                cert.lambda_max,
                cert.tau_ref(),
                cert.sigma,
                cert.sup_eta0,
            );
            assert!((env.coef - cert.envelope_coef).abs() < 1e-12);
            assert!((env.rate - cert.envelope_rate).abs() < 1e-12);

            if let (Some(theta), Some(radius), Some(nu)) = (cert.theta, cert.radius, cert.nu) {
                let (t2, r2) = practical_radius(
                    cert.n,
                    cert.eps,
                    cert.lambda_max,
                    cert.gamma2,
                    cert.gamma3,
                    cert.sigma,
                    cert.tau_star.unwrap(),
                    cert.lambda_min,
                    nu,
                );
                assert!((t2 - theta).abs() < 1e-12);
                assert!((r2 - radius).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn search_invariant_around_critical_value() {
        let gamma = demo_gamma();
        let search = find_epsilon_range(
            LMIN,
            LMAX,
            2,
            &gamma,
            Condition::Practical {
                beta: 0.99,
                variant: Condi2Variant::Strict,
            },
            1.0,
            1e-6,
        )
        .unwrap();
        let star = search.eps_star.unwrap();
        let lhs = |eps: f64| {
            let (g1, g2, _) = gamma_eval(&gamma, eps, 2).unwrap();
            practical_condition_lhs(LMIN, LMAX, 2, g1, g2, eps, 0.99, Condi2Variant::Strict)
        };
        assert!(lhs(search.recommended_eps) > 0.0);
        assert!(lhs(star * 1.05) < 0.0);
    }
}
