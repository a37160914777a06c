//! Switching-system matrices of the error recursion: the direct modes
//! `M_pi = I - alpha D + alpha gamma D P Pi^pi` over all deterministic
//! policies, affine modes `(A_pi, b_pi)` of the greedy parametrization,
//! single-trajectory sample-path modes, the coordinate-sampling bias, and
//! residual checks that verify the exact representations on recorded
//! trajectories.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{Mdp, QVector, SIMPLEX_TOL};
use crate::policies::{
    enumerate_policies, linearize_max, one_hot_policy, pi_matrix, DeterministicPolicy,
    StochasticPolicy,
};

/// Validate a sampling distribution over state-action pairs: strictly
/// positive entries summing to one.
pub fn validate_sampling_distribution(d: &[f64], n_sa: usize) -> Result<f64> {
    if d.len() != n_sa {
        return Err(Error::DimensionMismatch {
            expected: n_sa,
            got: d.len(),
            context: "sampling distribution",
        });
    }
    let mut d_min = f64::INFINITY;
    let mut sum = 0.0;
    for v in d {
        if *v <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sampling distribution must be strictly positive, found {v}"
            )));
        }
        d_min = d_min.min(*v);
        sum += v;
    }
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidParameter(format!(
            "sampling distribution sums to {sum}, not 1"
        )));
    }
    Ok(d_min)
}

/// The direct switching family `{M_pi}` with its step size and sampling
/// diagonal. Also retains `D P` so the mode of any stochastic policy can be
/// rebuilt without the original MDP.
#[derive(Clone, Debug)]
pub struct SwitchingFamily {
    modes: Vec<DMatrix<f64>>,
    policies: Vec<DeterministicPolicy>,
    alpha: f64,
    gamma: f64,
    d: Vec<f64>,
    d_min: f64,
    /// `D * P`, shape `(n_sa, n_states)`.
    dp: DMatrix<f64>,
    n_states: usize,
    n_actions: usize,
}

impl SwitchingFamily {
    /// Build the family over all deterministic policies and check the
    /// nonnegativity and row-sum invariants of every mode.
    pub fn build(mdp: &Mdp, d: &[f64], alpha: f64, policy_cap: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0,1), got {alpha}"
            )));
        }
        let d_min = validate_sampling_distribution(d, mdp.n_sa())?;
        let p = mdp.stacked_p();
        let mut dp = p;
        for (row, weight) in d.iter().enumerate() {
            for col in 0..mdp.n_states() {
                dp[(row, col)] *= *weight;
            }
        }
        let policies = enumerate_policies(mdp.n_states(), mdp.n_actions(), policy_cap)?;
        let mut family = Self {
            modes: Vec::with_capacity(policies.len()),
            policies,
            alpha,
            gamma: mdp.gamma(),
            d: d.to_vec(),
            d_min,
            dp,
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
        };
        let rho_row = family.row_sum_rate();
        for i in 0..family.policies.len() {
            let mu = one_hot_policy(&family.policies[i], mdp.n_actions());
            let mode = family.mode_for(&mu)?;
            for r in 0..mode.nrows() {
                let mut row_sum = 0.0;
                for c in 0..mode.ncols() {
                    let v = mode[(r, c)];
                    if v < -SIMPLEX_TOL {
                        return Err(Error::InvalidParameter(format!(
                            "mode {i} has negative entry {v} at ({r},{c})"
                        )));
                    }
                    row_sum += v;
                }
                if row_sum > rho_row + SIMPLEX_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "mode {i} row {r} sums to {row_sum} > rho_row {rho_row}"
                    )));
                }
            }
            family.modes.push(mode);
        }
        Ok(family)
    }

    pub fn modes(&self) -> &[DMatrix<f64>] {
        &self.modes
    }

    pub fn policies(&self) -> &[DeterministicPolicy] {
        &self.policies
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn n_sa(&self) -> usize {
        self.n_states * self.n_actions
    }

    /// Row-sum rate `rho_row = 1 - alpha d_min (1 - gamma)`, an infinity-norm
    /// bound on every mode of the family.
    pub fn row_sum_rate(&self) -> f64 {
        1.0 - self.alpha * self.d_min * (1.0 - self.gamma)
    }

    /// Direct mode `M_mu = I - alpha D + alpha gamma D P Pi^mu` for an
    /// arbitrary stochastic policy.
    pub fn mode_for(&self, mu: &StochasticPolicy) -> Result<DMatrix<f64>> {
        let n = self.n_sa();
        let pi_m = pi_matrix(mu, self.n_states, self.n_actions)?;
        let mut m = self.alpha * self.gamma * (&self.dp * pi_m);
        for i in 0..n {
            m[(i, i)] += 1.0 - self.alpha * self.d[i];
        }
        Ok(m)
    }
}

/// Direct mode built straight from an MDP. Equals the convex combination of
/// deterministic modes weighted by the hull weights of `mu`.
pub fn direct_mode(
    mdp: &Mdp,
    d: &[f64],
    alpha: f64,
    mu: &StochasticPolicy,
) -> Result<DMatrix<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    validate_sampling_distribution(d, mdp.n_sa())?;
    let n = mdp.n_sa();
    let pi_m = pi_matrix(mu, mdp.n_states(), mdp.n_actions())?;
    let p = mdp.stacked_p();
    let mut m = &p * pi_m;
    for row in 0..n {
        for col in 0..n {
            m[(row, col)] *= alpha * mdp.gamma() * d[row];
        }
        m[(row, row)] += 1.0 - alpha * d[row];
    }
    Ok(m)
}

/// Affine parametrization of one error step under the greedy policy.
#[derive(Clone, Debug)]
pub struct AffineMode {
    /// Drift matrix; identical to the direct mode of the greedy policy.
    pub a: DMatrix<f64>,
    /// Offset `alpha gamma D P (Pi^{pi_Q} - Pi^{pi*}) Q*`.
    pub b: DVector<f64>,
    /// The greedy policy the mode belongs to.
    pub greedy: DeterministicPolicy,
}

/// Affine mode `(A_{pi_Q}, b_{pi_Q})` of the greedy parametrization at `q`.
/// The offset vanishes exactly when the greedy policy is optimal.
pub fn affine_mode(
    mdp: &Mdp,
    d: &[f64],
    alpha: f64,
    q: &QVector,
    q_star: &QVector,
) -> Result<AffineMode> {
    mdp.check_q_dim(q, "affine_mode q")?;
    mdp.check_q_dim(q_star, "affine_mode q_star")?;
    let greedy = DeterministicPolicy::new(mdp.greedy_actions(q), mdp.n_actions())?;
    let optimal = DeterministicPolicy::new(mdp.greedy_actions(q_star), mdp.n_actions())?;
    let mu_greedy = one_hot_policy(&greedy, mdp.n_actions());
    let a = direct_mode(mdp, d, alpha, &mu_greedy)?;
    let pi_g = pi_matrix(&mu_greedy, mdp.n_states(), mdp.n_actions())?;
    let pi_o = pi_matrix(
        &one_hot_policy(&optimal, mdp.n_actions()),
        mdp.n_states(),
        mdp.n_actions(),
    )?;
    let p = mdp.stacked_p();
    let mut b = &p * ((pi_g - pi_o) * q_star.values());
    for (row, weight) in d.iter().enumerate() {
        b[row] *= alpha * mdp.gamma() * weight;
    }
    Ok(AffineMode { a, b, greedy })
}

/// Single-trajectory sample-path mode
/// `I - alpha e_i e_i^T + alpha gamma e_i e_i^T P Pi^mu`: a rank-one update
/// of the identity that only rewrites row `i`.
pub fn markov_mode(
    mdp: &Mdp,
    alpha: f64,
    coord: usize,
    mu: &StochasticPolicy,
) -> Result<DMatrix<f64>> {
    let n = mdp.n_sa();
    if coord >= n {
        return Err(Error::InvalidParameter(format!(
            "coordinate {coord} out of range for {n} state-action pairs"
        )));
    }
    let pi_m = pi_matrix(mu, mdp.n_states(), mdp.n_actions())?;
    let p = mdp.stacked_p();
    let p_pi = &p * pi_m;
    let mut m = DMatrix::identity(n, n);
    m[(coord, coord)] -= alpha;
    for col in 0..n {
        m[(coord, col)] += alpha * mdp.gamma() * p_pi[(coord, col)];
    }
    Ok(m)
}

/// Coordinate-sampling bias `(e_X e_X^T - D)(gamma P Pi^mu - I) e` of the
/// stationary-averaged decomposition. Satisfies
/// `hat M_{X,mu} e = M_mu e + alpha * bias`.
pub fn markov_bias(
    mdp: &Mdp,
    d: &[f64],
    coord: usize,
    mu: &StochasticPolicy,
    e: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = mdp.n_sa();
    if coord >= n {
        return Err(Error::InvalidParameter(format!(
            "coordinate {coord} out of range for {n} state-action pairs"
        )));
    }
    if e.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: e.len(),
            context: "markov_bias error vector",
        });
    }
    validate_sampling_distribution(d, n)?;
    let pi_m = pi_matrix(mu, mdp.n_states(), mdp.n_actions())?;
    let p = mdp.stacked_p();
    // h = (gamma P Pi^mu - I) e
    let mut h = mdp.gamma() * (&p * (pi_m * e));
    h -= e;
    let mut out = DVector::zeros(n);
    for i in 0..n {
        out[i] = -d[i] * h[i];
    }
    out[coord] += h[coord];
    Ok(out)
}

/// One verifiable step of a recorded trajectory: the Q-iterate before the
/// step, the realized noise vector, and (for Markovian runs) the sampled
/// coordinate.
pub struct VerifiableStep<'a> {
    pub q_before: &'a QVector,
    pub q_after: &'a QVector,
    pub noise: &'a DVector<f64>,
    pub coord: usize,
}

/// Max residual of the direct representation
/// `e_{k+1} = M_{mu_k} e_k + alpha w_k` over the supplied steps, with
/// `mu_k` recomputed from `Q_k` by the deterministic linearization.
pub fn verify_direct_representation<'a>(
    mdp: &Mdp,
    d: &[f64],
    alpha: f64,
    q_star: &QVector,
    steps: impl IntoIterator<Item = VerifiableStep<'a>>,
) -> Result<f64> {
    let mut max_residual: f64 = 0.0;
    for step in steps {
        mdp.check_q_dim(step.q_before, "verify_direct_representation")?;
        let mu = linearize_max(mdp, step.q_before, q_star)?;
        let mode = direct_mode(mdp, d, alpha, &mu)?;
        let e_k = step.q_before.values() - q_star.values();
        let e_next = step.q_after.values() - q_star.values();
        let predicted = mode * e_k + alpha * step.noise;
        max_residual = max_residual.max((e_next - predicted).amax());
    }
    Ok(max_residual)
}

/// Max residual of the sample-path representation
/// `e_{k+1} = hat M_{X_k, mu_k} e_k + alpha xi_{k+1}` over the supplied
/// steps.
pub fn verify_markov_representation<'a>(
    mdp: &Mdp,
    alpha: f64,
    q_star: &QVector,
    steps: impl IntoIterator<Item = VerifiableStep<'a>>,
) -> Result<f64> {
    let mut max_residual: f64 = 0.0;
    for step in steps {
        mdp.check_q_dim(step.q_before, "verify_markov_representation")?;
        let mu = linearize_max(mdp, step.q_before, q_star)?;
        let mode = markov_mode(mdp, alpha, step.coord, &mu)?;
        let e_k = step.q_before.values() - q_star.values();
        let e_next = step.q_after.values() - q_star.values();
        let predicted = mode * e_k + alpha * step.noise;
        max_residual = max_residual.max((e_next - predicted).amax());
    }
    Ok(max_residual)
}

/// Export a matrix as CSV rows (one line per row) for inspection.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{}", m[(r, c)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// The two-state single-action instance with uniform transitions whose
/// single direct mode beats the row-sum rate. Returns the MDP, the sampling
/// distribution and the step size.
pub fn rate_gap_instance() -> (Mdp, Vec<f64>, f64) {
    let mdp = Mdp::new(
        2,
        1,
        0.9,
        vec![0.5, 0.5, 0.5, 0.5],
        vec![0.0, 0.0, 0.0, 0.0],
    )
    .expect("static instance is valid");
    (mdp, vec![0.1, 0.9], 0.9)
}
