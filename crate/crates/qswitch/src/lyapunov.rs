//! Lyapunov certificates for the direct switching family.
//!
//! Two kinds are built here. The product-defined approximant
//! `V^t(x) = sum_{l<=t} beta^{-2l} max_w ||A_w x||^2` is available for every
//! family whose JSR bracket sits below one; its norm-equivalence constant is
//! computed from the bracket's per-depth norm table. The common quadratic
//! certificate `M_pi^T H M_pi <= beta^2 H` is cheaper to check but only
//! sufficient: the search procedure here can fail on families that do have a
//! certificate, and its failure is reported as such, never as infeasibility.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::jsr::{JsrReport, NormKind};
use crate::policies::StochasticPolicy;
use crate::switching::SwitchingFamily;

/// Tolerance on eigenvalues in positive-semidefiniteness checks.
pub const PSD_TOL: f64 = 1e-10;

/// Default truncation depth for the product-defined approximant.
pub const DEFAULT_TRUNCATION: usize = 8;

/// Default cap on cached product matrices.
pub const DEFAULT_PRODUCT_BUDGET: usize = 1_000_000;

/// Product-defined Lyapunov approximant with certified constants.
///
/// `beta_eps` anchors to the certified JSR upper bracket plus the slack, so
/// every inequality that only needs `beta_eps > JSR` remains sound. `c_eps`
/// comes from the geometric-tail construction: `eta` sits midway between the
/// bracket and `beta_eps`, `K` is the first depth from which the observed
/// per-depth norm geometric means stay at or below `eta` through the explored
/// range, and `C0` collects the pre-`K` transient. Using the bracket instead
/// of the unknown true JSR can only enlarge `K` and `C0`, so the constant is
/// conservative.
#[derive(Clone, Debug)]
pub struct JsrLyapunov {
    modes: Vec<DMatrix<f64>>,
    beta_eps: f64,
    eta: f64,
    c0: f64,
    c_eps: f64,
    t: usize,
    k_threshold: usize,
    /// `products[l]` holds every length-`l` product, `products[0] = [I]`.
    products: Vec<Vec<DMatrix<f64>>>,
}

impl JsrLyapunov {
    pub fn beta_eps(&self) -> f64 {
        self.beta_eps
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn c_eps(&self) -> f64 {
        self.c_eps
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn k_threshold(&self) -> usize {
        self.k_threshold
    }

    pub fn modes(&self) -> &[DMatrix<f64>] {
        &self.modes
    }

    /// Serialize the certificate parameters with stable keys.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "type": "jsr",
            "beta": self.beta_eps,
            "C_eps": self.c_eps,
            "eta": self.eta,
            "C0": self.c0,
            "t": self.t,
            "depth": self.k_threshold,
        })
    }
}

/// Build the approximant constants from a JSR report over the same modes.
///
/// `beta_eps = upper + eps` must stay below one. The per-depth norm table of
/// the report must be long enough for the observed geometric means to settle
/// at or below `eta`; otherwise the slack is too small for the bracket and
/// an error is returned.
pub fn veps_constants(
    modes: &[DMatrix<f64>],
    report: &JsrReport,
    eps: f64,
    t: usize,
    budget: usize,
) -> Result<JsrLyapunov> {
    if modes.is_empty() {
        return Err(Error::InvalidParameter("empty matrix family".into()));
    }
    if report.norm_used != NormKind::Spectral {
        return Err(Error::InvalidParameter(
            "veps_constants needs a spectral-norm JSR report".into(),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let beta_eps = report.upper + eps;
    if !(beta_eps < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "beta_eps = upper + eps = {beta_eps} must be below 1"
        )));
    }
    if report.max_norm_by_depth.is_empty() {
        return Err(Error::InvalidParameter(
            "JSR report carries no per-depth norm table".into(),
        ));
    }
    let eta = (report.upper + beta_eps) / 2.0;

    // K: one past the last explored depth whose geometric mean exceeds eta.
    let mut last_violation = 0usize;
    for (idx, norm) in report.max_norm_by_depth.iter().enumerate() {
        let depth = idx + 1;
        if norm.powf(1.0 / depth as f64) > eta {
            last_violation = depth;
        }
    }
    if last_violation >= report.max_norm_by_depth.len() {
        return Err(Error::InvalidParameter(format!(
            "geometric means stay above eta = {eta} through depth {}; \
             eps too small for the bracket or exploration too shallow",
            report.max_norm_by_depth.len()
        )));
    }
    let k_threshold = last_violation + 1;

    // C0 over lengths 0..K-1; the empty product contributes 1.
    let mut c0: f64 = 1.0;
    for k in 1..k_threshold {
        c0 = c0.max(report.max_norm_by_depth[k - 1] / eta.powi(k as i32));
    }
    let ratio = eta / beta_eps;
    let c_eps = c0 * c0 / (1.0 - ratio * ratio);

    let products = build_products(modes, t, budget)?;
    Ok(JsrLyapunov {
        modes: modes.to_vec(),
        beta_eps,
        eta,
        c0,
        c_eps,
        t,
        k_threshold,
        products,
    })
}

fn build_products(
    modes: &[DMatrix<f64>],
    t: usize,
    budget: usize,
) -> Result<Vec<Vec<DMatrix<f64>>>> {
    let m = modes.len();
    let mut total = 1usize;
    let mut level_size = 1usize;
    for _ in 0..t {
        level_size = level_size.saturating_mul(m);
        total = total.saturating_add(level_size);
        if total > budget {
            return Err(Error::Budget(format!(
                "product cache to depth {t} needs more than {budget} matrices"
            )));
        }
    }
    let n = modes[0].nrows();
    let mut products = vec![vec![DMatrix::identity(n, n)]];
    for l in 1..=t {
        let prev = &products[l - 1];
        let mut level = Vec::with_capacity(prev.len() * m);
        for p in prev {
            for mode in modes {
                level.push(mode * p);
            }
        }
        products.push(level);
    }
    Ok(products)
}

/// Evaluate `V^t(x)` by exact enumeration of the cached products.
pub fn veps_eval(lyap: &JsrLyapunov, x: &DVector<f64>) -> f64 {
    veps_eval_at(lyap, x, lyap.t)
}

/// Evaluate the truncation at `t_eval <= lyap.t()`.
pub fn veps_eval_at(lyap: &JsrLyapunov, x: &DVector<f64>, t_eval: usize) -> f64 {
    assert!(t_eval <= lyap.t, "truncation beyond the cached depth");
    let mut total = 0.0;
    let mut discount = 1.0;
    for level in &lyap.products[..=t_eval] {
        let level_max = level
            .iter()
            .map(|p| (p * x).norm_squared())
            .fold(0.0, f64::max);
        total += discount * level_max;
        discount /= lyap.beta_eps * lyap.beta_eps;
    }
    total
}

/// Max positive violation of the finite-truncation drift inequality
/// `V^{t-1}(M x) <= beta^2 (V^t(x) - ||x||^2)` over the supplied points,
/// checked for every deterministic mode and every supplied stochastic
/// policy. Requires `lyap.t() >= 1`.
pub fn veps_drift_check(
    lyap: &JsrLyapunov,
    family: &SwitchingFamily,
    points: &[DVector<f64>],
    stochastic: &[StochasticPolicy],
) -> Result<f64> {
    if lyap.t == 0 {
        return Err(Error::InvalidParameter(
            "drift check needs truncation depth at least 1".into(),
        ));
    }
    let beta_sq = lyap.beta_eps * lyap.beta_eps;
    let mut extra_modes = Vec::with_capacity(stochastic.len());
    for mu in stochastic {
        extra_modes.push(family.mode_for(mu)?);
    }
    let mut worst: f64 = 0.0;
    for x in points {
        let rhs = beta_sq * (veps_eval_at(lyap, x, lyap.t) - x.norm_squared());
        for mode in lyap.modes.iter().chain(extra_modes.iter()) {
            let lhs = veps_eval_at(lyap, &(mode * x), lyap.t - 1);
            worst = worst.max(lhs - rhs);
        }
    }
    Ok(worst)
}

/// A common quadratic Lyapunov candidate and its verification outcome.
#[derive(Clone, Debug)]
pub struct QuadraticCertificate {
    pub h: DMatrix<f64>,
    pub beta: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub feasible: bool,
}

impl QuadraticCertificate {
    /// Serialize with stable keys; `H` is emitted row-major.
    pub fn to_json(&self) -> serde_json::Value {
        let n = self.h.nrows();
        let rows: Vec<f64> = (0..n)
            .flat_map(|r| (0..n).map(move |c| (r, c)))
            .map(|(r, c)| self.h[(r, c)])
            .collect();
        serde_json::json!({
            "type": "quad",
            "beta": self.beta,
            "H": rows,
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
        })
    }
}

fn symmetric_eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eigen = sym.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in eigen.eigenvalues.iter() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    (lo, hi)
}

/// Verify `M^T H M <= beta^2 H` for every mode, with eigenvalue tolerance
/// [`PSD_TOL`] on the symmetrized residuals. `H` must be symmetric within
/// 1e-12; feasibility additionally needs `lambda_min(H) > 0`.
pub fn quad_verify(
    modes: &[DMatrix<f64>],
    h: &DMatrix<f64>,
    beta: f64,
) -> Result<QuadraticCertificate> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "beta must lie in (0,1), got {beta}"
        )));
    }
    let asym = (h - h.transpose()).amax();
    if asym > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "H asymmetry {asym} exceeds 1e-12"
        )));
    }
    let (lambda_min, lambda_max) = symmetric_eigen_range(h);
    let mut feasible = lambda_min > 0.0;
    if feasible {
        for mode in modes {
            let residual = mode.transpose() * h * mode - h * (beta * beta);
            let (_, hi) = symmetric_eigen_range(&residual);
            if hi > PSD_TOL {
                feasible = false;
                break;
            }
        }
    }
    Ok(QuadraticCertificate {
        h: h.clone(),
        beta,
        lambda_min,
        lambda_max,
        feasible,
    })
}

/// Why one step of the certificate search gave up on a rate.
#[derive(Clone, Debug)]
pub struct QuadSearchAttempt {
    pub beta: f64,
    pub reason: String,
}

/// Outcome of [`quad_search`]. `ProcedureFailed` means this procedure found
/// nothing; it does not mean no certificate exists.
#[derive(Clone, Debug)]
pub enum QuadSearchOutcome {
    Found(QuadraticCertificate),
    ProcedureFailed { attempts: Vec<QuadSearchAttempt> },
}

const QUAD_ITERATION_CAP: usize = 10_000;
const QUAD_DIVERGENCE_LIMIT: f64 = 1e12;

/// Heuristic certificate search: for each rate (tightest first) iterate the
/// averaged map `H <- I + beta^{-2} avg_pi M_pi^T H M_pi` to a fixed point
/// and hand the result to [`quad_verify`]. For a singleton family this is
/// exactly the discrete Lyapunov solve. The averaged fixed point can fail
/// the per-mode verification even when a certificate exists, so a failed
/// search is never evidence of infeasibility.
pub fn quad_search(modes: &[DMatrix<f64>], beta_grid: &[f64]) -> Result<QuadSearchOutcome> {
    if modes.is_empty() {
        return Err(Error::InvalidParameter("empty matrix family".into()));
    }
    let n = modes[0].nrows();
    let mut grid: Vec<f64> = beta_grid.to_vec();
    for beta in &grid {
        if !(*beta > 0.0 && *beta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "beta grid entry {beta} outside (0,1)"
            )));
        }
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));

    let mut attempts = Vec::new();
    for beta in grid {
        let avg = |h: &DMatrix<f64>| -> DMatrix<f64> {
            let mut acc = DMatrix::zeros(n, n);
            for mode in modes {
                acc += mode.transpose() * h * mode;
            }
            DMatrix::identity(n, n) + acc / (modes.len() as f64 * beta * beta)
        };
        let mut h = DMatrix::identity(n, n);
        let mut converged = false;
        for _ in 0..QUAD_ITERATION_CAP {
            let next = avg(&h);
            let delta = (&next - &h).amax();
            let scale = next.amax().max(1.0);
            h = next;
            if h.amax() > QUAD_DIVERGENCE_LIMIT {
                break;
            }
            if delta <= 1e-13 * scale {
                converged = true;
                break;
            }
        }
        if !converged {
            attempts.push(QuadSearchAttempt {
                beta,
                reason: "averaged fixed-point iteration diverged".into(),
            });
            continue;
        }
        // Enforce exact symmetry before verification.
        let h = (&h + h.transpose()) * 0.5;
        let cert = quad_verify(modes, &h, beta)?;
        if cert.feasible {
            return Ok(QuadSearchOutcome::Found(cert));
        }
        attempts.push(QuadSearchAttempt {
            beta,
            reason: "averaged fixed point failed per-mode verification".into(),
        });
    }
    Ok(QuadSearchOutcome::ProcedureFailed { attempts })
}

/// Max eigenvalue violation of `M_mu^T H M_mu <= beta^2 H` over the sampled
/// stochastic policies; the certificate extends from deterministic to
/// stochastic policies, so this should stay at or below [`PSD_TOL`].
pub fn quad_extend_check(
    family: &SwitchingFamily,
    cert: &QuadraticCertificate,
    policies: &[StochasticPolicy],
) -> Result<f64> {
    if !cert.feasible {
        return Err(Error::InvalidParameter(
            "extension check needs a feasible certificate".into(),
        ));
    }
    let beta_sq = cert.beta * cert.beta;
    let mut worst = f64::NEG_INFINITY;
    for mu in policies {
        let mode = family.mode_for(mu)?;
        let residual = mode.transpose() * &cert.h * mode - &cert.h * beta_sq;
        let (_, hi) = symmetric_eigen_range(&residual);
        worst = worst.max(hi);
    }
    Ok(worst)
}
