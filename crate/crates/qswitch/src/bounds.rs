//! Closed-form finite-time bound curves and sample-complexity plans.
//!
//! Everything here is a pure evaluator: no simulation, no certificates are
//! computed. Callers supply the certified constants (`beta_eps`/`C_eps` from
//! the product Lyapunov construction, or the spectrum of a quadratic
//! certificate) and get the bound value at any iteration index. The moment
//! bounds replace the unobservable `V(e_0)` by its computable envelope
//! `C_eps ||e_0||^2`; passing an exactly evaluated truncation value instead
//! is available as the `*_with_v0` variants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shared inputs of every bound: instance data plus the JSR certificate.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BoundParams {
    pub alpha: f64,
    pub gamma: f64,
    pub n_sa: usize,
    /// Sup norm of the initial iterate.
    pub q0_inf: f64,
    pub r_max: f64,
    /// Conditional second-moment bound of the update noise.
    pub w_max: f64,
    /// Trajectory envelope `max(||Q_0||_inf, R_max / (1 - gamma))`.
    pub b_q: f64,
    /// Euclidean norm of the initial error `Q_0 - Q*`.
    pub e0_norm2: f64,
    /// Certified contraction rate, strictly above the family JSR.
    pub beta_eps: f64,
    /// Norm-equivalence constant of the product Lyapunov certificate.
    pub c_eps: f64,
}

impl BoundParams {
    fn check(&self) -> Result<()> {
        if !(self.beta_eps > 0.0 && self.beta_eps < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "beta_eps must lie in (0,1), got {}",
                self.beta_eps
            )));
        }
        if self.c_eps < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "C_eps must be at least 1, got {}",
                self.c_eps
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// `sqrt(|S||A|) (||Q_0||_inf + R_max / (1 - gamma))`: the deterministic
    /// envelope of the initial Euclidean error.
    pub fn init_envelope(&self) -> f64 {
        (self.n_sa as f64).sqrt() * (self.q0_inf + self.r_max / (1.0 - self.gamma))
    }

    /// Markovian disturbance enlargement `(4 (1 + gamma) B_Q)^2`.
    pub fn markov_enlargement(&self) -> f64 {
        (4.0 * (1.0 + self.gamma) * self.b_q).powi(2)
    }
}

/// Quadratic-certificate inputs.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct QuadCertParams {
    pub beta: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `e_0^T H e_0`.
    pub e0_quad: f64,
}

/// Moment and final-iterate values of one bound at one iteration index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundValues {
    /// Bound on the expected Lyapunov value of the error.
    pub moment: f64,
    /// Sup-norm bound using the measured `||e_0||_2`.
    pub final_general: f64,
    /// Sup-norm bound using only deterministic instance data.
    pub final_explicit: f64,
}

/// JSR-certificate bound under i.i.d. sampling: geometric transient at rate
/// `beta_eps^2` plus the constant noise floor.
pub fn veps_bound(p: &BoundParams, k: u64) -> Result<BoundValues> {
    p.check()?;
    Ok(veps_like_bound(p, p.w_max, k))
}

/// Same as [`veps_bound`] with the moment transient started from an exactly
/// evaluated `V(e_0)` instead of the envelope `C_eps ||e_0||^2`.
pub fn veps_bound_with_v0(p: &BoundParams, v0: f64, k: u64) -> Result<BoundValues> {
    p.check()?;
    let mut out = veps_like_bound(p, p.w_max, k);
    let beta_sq = p.beta_eps * p.beta_eps;
    let floor = moment_floor(p, p.w_max);
    out.moment = beta_sq.powi(k as i32) * v0 + floor * (1.0 - beta_sq.powi(k as i32));
    Ok(out)
}

/// Markovian single-trajectory bound: identical shape with the disturbance
/// enlarged by `(4 (1 + gamma) B_Q)^2`.
pub fn markov_bound(p: &BoundParams, k: u64) -> Result<BoundValues> {
    p.check()?;
    Ok(veps_like_bound(p, p.w_max + p.markov_enlargement(), k))
}

fn moment_floor(p: &BoundParams, w_eff: f64) -> f64 {
    let beta_sq = p.beta_eps * p.beta_eps;
    p.alpha * p.alpha * p.c_eps * p.c_eps * w_eff / (1.0 - beta_sq)
}

fn veps_like_bound(p: &BoundParams, w_eff: f64, k: u64) -> BoundValues {
    let beta_sq = p.beta_eps * p.beta_eps;
    let transient = beta_sq.powi(k as i32);
    let moment = transient * (p.c_eps * p.e0_norm2 * p.e0_norm2) + moment_floor(p, w_eff) * (1.0 - transient);
    let final_floor = p.alpha * p.c_eps * (w_eff / (1.0 - beta_sq)).sqrt();
    let beta_k = p.beta_eps.powi(k as i32);
    let final_general = p.c_eps.sqrt() * beta_k * p.e0_norm2 + final_floor;
    let final_explicit = (p.c_eps).sqrt() * p.init_envelope() * beta_k + final_floor;
    BoundValues {
        moment,
        final_general,
        final_explicit,
    }
}

/// Quadratic-certificate bound: transient at rate `beta` with the
/// condition-number prefactor, plus the quadratic noise floor.
pub fn quad_bound(p: &BoundParams, cert: &QuadCertParams, k: u64) -> Result<BoundValues> {
    if !(cert.beta > 0.0 && cert.beta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "certificate beta must lie in (0,1), got {}",
            cert.beta
        )));
    }
    if !(cert.lambda_min > 0.0 && cert.lambda_max >= cert.lambda_min) {
        return Err(Error::InvalidParameter(
            "certificate spectrum must satisfy 0 < lambda_min <= lambda_max".into(),
        ));
    }
    let beta_sq = cert.beta * cert.beta;
    let transient = beta_sq.powi(k as i32);
    let moment = transient * cert.e0_quad
        + p.alpha * p.alpha * cert.lambda_max * p.w_max / (1.0 - beta_sq) * (1.0 - transient);
    let cond = (cert.lambda_max / cert.lambda_min).sqrt();
    let floor =
        p.alpha * (cert.lambda_max * p.w_max / (cert.lambda_min * (1.0 - beta_sq))).sqrt();
    let beta_k = cert.beta.powi(k as i32);
    let final_general = cond * beta_k * p.e0_norm2 + floor;
    let final_explicit =
        cond * (p.n_sa as f64).sqrt() * (p.q0_inf + p.r_max / (1.0 - p.gamma)) * beta_k + floor;
    Ok(BoundValues {
        moment,
        final_general,
        final_explicit,
    })
}

/// Markovian row-sum slack bound: with the slack `eps = alpha d_min (1 -
/// gamma) / 2` the transient decays as `exp(-alpha d_min (1 - gamma) k / 2)`
/// and the floor scales as `sqrt(alpha)`. The caller's `beta_eps` must obey
/// `1 - beta_eps^2 >= alpha d_min (1 - gamma) / 2`, which the slack choice
/// guarantees; it is re-asserted here.
pub fn rowslack_bound(p: &BoundParams, d_min: f64, k: u64) -> Result<f64> {
    p.check()?;
    if !(d_min > 0.0) {
        return Err(Error::InvalidParameter(format!("d_min must be positive, got {d_min}")));
    }
    let gap = p.alpha * d_min * (1.0 - p.gamma);
    if !(gap > 0.0 && gap < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha d_min (1 - gamma) = {gap} must lie in (0,1)"
        )));
    }
    let beta_sq_gap = 1.0 - p.beta_eps * p.beta_eps;
    if beta_sq_gap + 1e-12 < gap / 2.0 {
        return Err(Error::InvalidParameter(format!(
            "1 - beta_eps^2 = {beta_sq_gap} is below the slack gap {}",
            gap / 2.0
        )));
    }
    let w_eff = p.w_max + p.markov_enlargement();
    let transient = p.c_eps.sqrt() * p.init_envelope() * (-gap * k as f64 / 2.0).exp();
    let floor = p.c_eps * (2.0 * p.alpha * w_eff / (d_min * (1.0 - p.gamma))).sqrt();
    Ok(transient + floor)
}

/// Which sample-complexity corollary a plan instantiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComplexityKind {
    /// JSR certificate, i.i.d. sampling, generic rate gap.
    JsrIid,
    /// JSR certificate with the row-sum slack choice of the rate gap.
    JsrRowGap,
    /// Quadratic certificate under the spectral gap condition.
    Quadratic,
    /// JSR certificate on a single Markovian trajectory.
    MarkovSingleTrajectory,
}

/// Extra inputs only some plans need.
#[derive(Clone, Copy, Debug, Default)]
pub struct ComplexityExtras {
    /// Minimum stationary mass; needed by the row-gap and quadratic plans.
    pub d_min: Option<f64>,
    /// Quadratic certificate; needed by the quadratic plan.
    pub quad: Option<QuadCertParams>,
}

/// A step-size / iteration-count pair certified to reach accuracy `delta`,
/// with the bound value obtained by substituting the pair back into the
/// matching bound (always at most `delta` by the half/half split).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SampleComplexityPlan {
    pub kind: ComplexityKind,
    pub delta: f64,
    pub alpha_max: f64,
    pub k_min: u64,
    /// The matching bound evaluated at `(alpha_max, k_min)`.
    pub achieved: f64,
}

/// Compute the `(alpha_max, k_min)` plan for a target accuracy.
///
/// `params.alpha` is ignored; the plan supplies its own step size. The
/// returned plan is self-checked: substituting it into the corollary's own
/// exponential-form bound must come out at or below `delta` (up to 1e-12
/// relative arithmetic slack), otherwise an error is returned.
pub fn sample_complexity(
    kind: ComplexityKind,
    delta: f64,
    params: &BoundParams,
    extras: &ComplexityExtras,
) -> Result<SampleComplexityPlan> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    if !(params.beta_eps < 1.0) {
        return Err(Error::InvalidParameter(
            "beta_eps at or above 1 makes every accuracy unreachable".into(),
        ));
    }
    let gap_sq = 1.0 - params.beta_eps * params.beta_eps;
    let envelope = params.init_envelope();
    let need_d_min = || {
        extras.d_min.ok_or_else(|| {
            Error::InvalidParameter("this plan needs d_min in the extras".into())
        })
    };

    let (alpha_max, k_min, achieved) = match kind {
        ComplexityKind::JsrIid => {
            let alpha = delta * gap_sq.sqrt() / (2.0 * params.c_eps * params.w_max.sqrt());
            let transient_amp = 2.0 * params.c_eps.sqrt() * envelope / delta;
            let k = ((2.0 / gap_sq) * transient_amp.ln()).max(0.0).ceil() as u64;
            let value = params.c_eps.sqrt() * envelope * (-gap_sq * k as f64 / 2.0).exp()
                + alpha * params.c_eps * (params.w_max / gap_sq).sqrt();
            (alpha, k, value)
        }
        ComplexityKind::JsrRowGap => {
            let d_min = need_d_min()?;
            let rate = d_min * (1.0 - params.gamma);
            let alpha =
                rate * delta * delta / (8.0 * params.c_eps * params.c_eps * params.w_max);
            let transient_amp = 2.0 * params.c_eps.sqrt() * envelope / delta;
            let k = ((4.0 / (rate * alpha)) * transient_amp.ln()).max(0.0).ceil() as u64;
            let value = params.c_eps.sqrt() * envelope * (-alpha * rate * k as f64 / 4.0).exp()
                + params.c_eps * (2.0 * alpha * params.w_max / rate).sqrt();
            (alpha, k, value)
        }
        ComplexityKind::Quadratic => {
            let d_min = need_d_min()?;
            let cert = extras.quad.ok_or_else(|| {
                Error::InvalidParameter("the quadratic plan needs certificate params".into())
            })?;
            let rate = d_min * (1.0 - params.gamma);
            let alpha = rate * cert.lambda_min * delta * delta
                / (8.0 * cert.lambda_max * params.w_max);
            // Spectral gap condition of the corollary.
            if cert.beta * cert.beta > 1.0 - alpha * rate / 2.0 {
                return Err(Error::InvalidParameter(format!(
                    "gap condition fails: beta^2 = {} exceeds 1 - alpha d_min (1-gamma)/2 = {}",
                    cert.beta * cert.beta,
                    1.0 - alpha * rate / 2.0
                )));
            }
            let amp = (cert.lambda_max / cert.lambda_min).sqrt() * envelope;
            let k = ((4.0 / (rate * alpha)) * (2.0 * amp / delta).ln()).max(0.0).ceil() as u64;
            let value = amp * (-alpha * rate * k as f64 / 4.0).exp()
                + (2.0 * alpha * cert.lambda_max * params.w_max
                    / (cert.lambda_min * rate))
                    .sqrt();
            (alpha, k, value)
        }
        ComplexityKind::MarkovSingleTrajectory => {
            let w_eff = params.w_max + params.markov_enlargement();
            let alpha = delta * gap_sq.sqrt() / (2.0 * params.c_eps * w_eff.sqrt());
            let transient_amp = 2.0 * params.c_eps.sqrt() * envelope / delta;
            let k = ((2.0 / gap_sq) * transient_amp.ln()).max(0.0).ceil() as u64;
            let value = params.c_eps.sqrt() * envelope * (-gap_sq * k as f64 / 2.0).exp()
                + alpha * params.c_eps * (w_eff / gap_sq).sqrt();
            (alpha, k, value)
        }
    };

    if achieved > delta * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "self-check failed: plan achieves {achieved} > delta {delta}"
        )));
    }
    Ok(SampleComplexityPlan {
        kind,
        delta,
        alpha_max,
        k_min,
        achieved,
    })
}

/// Tag for exportable bound curves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    VepsMoment,
    VepsFinal,
    QuadMoment,
    QuadFinal,
    MarkovMoment,
    MarkovFinal,
    MarkovRowslack,
}

/// A bound evaluated over a grid of iteration indices.
#[derive(Clone, Debug, Serialize)]
pub struct BoundCurve {
    pub kind: BoundKind,
    pub values: Vec<(u64, f64)>,
}

/// Evaluate one bound kind over `ks`. The final-iterate kinds use the
/// explicit (instance-data-only) form.
pub fn bound_curve(
    kind: BoundKind,
    params: &BoundParams,
    quad: Option<&QuadCertParams>,
    d_min: Option<f64>,
    ks: &[u64],
) -> Result<BoundCurve> {
    let mut values = Vec::with_capacity(ks.len());
    for &k in ks {
        let v = match kind {
            BoundKind::VepsMoment => veps_bound(params, k)?.moment,
            BoundKind::VepsFinal => veps_bound(params, k)?.final_explicit,
            BoundKind::QuadMoment => {
                let cert = quad.ok_or_else(|| {
                    Error::InvalidParameter("quad curve needs certificate params".into())
                })?;
                quad_bound(params, cert, k)?.moment
            }
            BoundKind::QuadFinal => {
                let cert = quad.ok_or_else(|| {
                    Error::InvalidParameter("quad curve needs certificate params".into())
                })?;
                quad_bound(params, cert, k)?.final_explicit
            }
            BoundKind::MarkovMoment => markov_bound(params, k)?.moment,
            BoundKind::MarkovFinal => markov_bound(params, k)?.final_explicit,
            BoundKind::MarkovRowslack => {
                let d = d_min.ok_or_else(|| {
                    Error::InvalidParameter("rowslack curve needs d_min".into())
                })?;
                rowslack_bound(params, d, k)?
            }
        };
        values.push((k, v));
    }
    Ok(BoundCurve { kind, values })
}
