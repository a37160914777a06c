//! Deterministic and stochastic policies, their `Pi` selection matrices,
//! the exact stochastic-policy linearization of the Bellman maximization
//! error, and convex-hull weights over the deterministic policy set.
//!
//! The linearization is the constructive two-point rule: per state it places
//! mass on the actions with the smallest and largest Q-error so that the
//! averaged error reproduces `V_Q - V*` exactly. Ties always resolve to the
//! lowest action index, which makes the construction deterministic.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mdp::{sa_index, Mdp, QVector, SIMPLEX_TOL};

/// Default cap on `n_actions ^ n_states` for policy enumeration. Covers up
/// to 2 states x 64 actions or 12 states x 2 actions; enumeration beyond
/// this is exponential and almost certainly a configuration mistake.
pub const POLICY_ENUMERATION_CAP: usize = 4096;

/// Rounding window absorbed when the linearization coefficient leaves [0,1].
pub const LAMBDA_CLAMP_WINDOW: f64 = 1e-12;

/// A stationary deterministic policy: one action per state.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DeterministicPolicy {
    actions: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn new(actions: Vec<usize>, n_actions: usize) -> Result<Self> {
        if let Some(a) = actions.iter().find(|a| **a >= n_actions) {
            return Err(Error::InvalidParameter(format!(
                "policy maps to action {a} but only {n_actions} exist"
            )));
        }
        Ok(Self { actions })
    }

    pub fn n_states(&self) -> usize {
        self.actions.len()
    }

    pub fn action(&self, s: usize) -> usize {
        self.actions[s]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }
}

/// A stationary stochastic policy: one action distribution per state.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticPolicy {
    dist: Vec<Vec<f64>>,
}

impl StochasticPolicy {
    pub fn new(dist: Vec<Vec<f64>>) -> Result<Self> {
        for (s, row) in dist.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::InvalidParameter(format!("state {s} has no actions")));
            }
            let mut sum = 0.0;
            for p in row {
                if *p < -SIMPLEX_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "negative action probability {p} at state {s}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidParameter(format!(
                    "action distribution at state {s} sums to {sum}"
                )));
            }
        }
        Ok(Self { dist })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            dist: vec![vec![1.0 / n_actions as f64; n_actions]; n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        self.dist.len()
    }

    pub fn n_actions(&self) -> usize {
        self.dist[0].len()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.dist[s][a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.dist[s]
    }
}

impl From<&DeterministicPolicy> for StochasticPolicy {
    fn from(pi: &DeterministicPolicy) -> Self {
        // One-hot rows; exact in floating point.
        let n_actions = pi.actions.iter().max().map_or(1, |m| m + 1);
        Self {
            dist: pi
                .actions
                .iter()
                .map(|a| {
                    let mut row = vec![0.0; n_actions.max(*a + 1)];
                    row[*a] = 1.0;
                    row
                })
                .collect(),
        }
    }
}

/// One-hot stochastic form of a deterministic policy with explicit width.
pub fn one_hot_policy(pi: &DeterministicPolicy, n_actions: usize) -> StochasticPolicy {
    StochasticPolicy {
        dist: pi
            .actions
            .iter()
            .map(|a| {
                let mut row = vec![0.0; n_actions];
                row[*a] = 1.0;
                row
            })
            .collect(),
    }
}

/// Selection matrix `Pi^mu` of shape `(n_states, n_states * n_actions)`:
/// row `s` has `mu(a|s)` at column `index(s, a)` and zeros elsewhere.
pub fn pi_matrix(mu: &StochasticPolicy, n_states: usize, n_actions: usize) -> Result<DMatrix<f64>> {
    if mu.n_states() != n_states {
        return Err(Error::DimensionMismatch {
            expected: n_states,
            got: mu.n_states(),
            context: "pi_matrix states",
        });
    }
    if mu.n_actions() != n_actions {
        return Err(Error::DimensionMismatch {
            expected: n_actions,
            got: mu.n_actions(),
            context: "pi_matrix actions",
        });
    }
    let mut m = DMatrix::zeros(n_states, n_states * n_actions);
    for s in 0..n_states {
        for a in 0..n_actions {
            m[(s, sa_index(n_states, s, a))] = mu.prob(s, a);
        }
    }
    Ok(m)
}

/// `Pi^pi` for a deterministic policy (one-hot rows).
pub fn pi_matrix_det(
    pi: &DeterministicPolicy,
    n_states: usize,
    n_actions: usize,
) -> Result<DMatrix<f64>> {
    pi_matrix(&one_hot_policy(pi, n_actions), n_states, n_actions)
}

/// Exact stochastic-policy linearization of the Bellman max.
///
/// Returns the policy `mu_Q` with `Pi^{mu_Q} (Q - Q*) = V_Q - V*`
/// componentwise. Per state, the mass sits on the argmin/argmax of the
/// action-wise error (lexicographic ties); the mixing coefficient solves the
/// one-dimensional convex-combination equation and is clamped only inside a
/// 1e-12 rounding window, anything larger is an error because the sandwich
/// bounds are a theorem.
pub fn linearize_max(mdp: &Mdp, q: &QVector, q_star: &QVector) -> Result<StochasticPolicy> {
    mdp.check_q_dim(q, "linearize_max q")?;
    mdp.check_q_dim(q_star, "linearize_max q_star")?;
    let n_states = mdp.n_states();
    let n_actions = mdp.n_actions();
    let v_q = mdp.greedy_values(q);
    let v_star = mdp.greedy_values(q_star);

    let mut dist = vec![vec![0.0; n_actions]; n_states];
    for s in 0..n_states {
        let err = |a: usize| q.get(n_states, s, a) - q_star.get(n_states, s, a);
        let mut a_min = 0;
        let mut a_max = 0;
        for a in 1..n_actions {
            if err(a) < err(a_min) {
                a_min = a;
            }
            if err(a) > err(a_max) {
                a_max = a;
            }
        }
        let e_min = err(a_min);
        let e_max = err(a_max);
        let y = v_q[s] - v_star[s];
        if e_min == e_max {
            dist[s][a_min] = 1.0;
            continue;
        }
        let lambda = (y - e_min) / (e_max - e_min);
        if lambda < -LAMBDA_CLAMP_WINDOW || lambda > 1.0 + LAMBDA_CLAMP_WINDOW {
            return Err(Error::LinearizationOutOfRange { lambda, state: s });
        }
        let lambda = lambda.clamp(0.0, 1.0);
        dist[s][a_max] = lambda;
        dist[s][a_min] += 1.0 - lambda;
    }
    StochasticPolicy::new(dist)
}

/// All deterministic policies in lexicographic order of their action tuples.
pub fn enumerate_policies(
    n_states: usize,
    n_actions: usize,
    cap: usize,
) -> Result<Vec<DeterministicPolicy>> {
    let count = (n_actions as u128).checked_pow(n_states as u32);
    let count = match count {
        Some(c) if c <= cap as u128 => c as usize,
        _ => {
            return Err(Error::Budget(format!(
                "{n_actions}^{n_states} deterministic policies exceed the cap {cap}"
            )))
        }
    };
    let mut out = Vec::with_capacity(count);
    for code in 0..count {
        let mut c = code;
        let mut actions = vec![0usize; n_states];
        for s in (0..n_states).rev() {
            actions[s] = c % n_actions;
            c /= n_actions;
        }
        out.push(DeterministicPolicy { actions });
    }
    Ok(out)
}

/// Convex-hull weights `c_pi(mu) = prod_s mu(pi(s)|s)` over all
/// deterministic policies. They are nonnegative, sum to one, and satisfy
/// `sum_pi c_pi(mu) Pi^pi = Pi^mu`.
pub fn hull_weights(
    mu: &StochasticPolicy,
    cap: usize,
) -> Result<Vec<(DeterministicPolicy, f64)>> {
    let policies = enumerate_policies(mu.n_states(), mu.n_actions(), cap)?;
    Ok(policies
        .into_iter()
        .map(|pi| {
            let w = (0..mu.n_states()).map(|s| mu.prob(s, pi.action(s))).product();
            (pi, w)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_mdp(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> Mdp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Vec::new();
        let mut r = Vec::new();
        for _ in 0..n_states * n_actions {
            let raw: Vec<f64> = (0..n_states)
                .map(|_| -rng.gen_range(1e-12..1.0f64).ln())
                .collect();
            let sum: f64 = raw.iter().sum();
            p.extend(raw.iter().map(|x| x / sum));
            r.extend((0..n_states).map(|_| rng.gen_range(-1.0..1.0)));
        }
        Mdp::new(n_states, n_actions, gamma, p, r).unwrap()
    }

    fn random_policy(n_states: usize, n_actions: usize, rng: &mut impl Rng) -> StochasticPolicy {
        let dist = (0..n_states)
            .map(|_| {
                let raw: Vec<f64> = (0..n_actions)
                    .map(|_| -rng.gen_range(1e-12..1.0f64).ln())
                    .collect();
                let sum: f64 = raw.iter().sum();
                raw.iter().map(|x| x / sum).collect()
            })
            .collect();
        StochasticPolicy::new(dist).unwrap()
    }

    #[test]
    fn pi_matrix_single_state_layout() {
        let mu = StochasticPolicy::new(vec![vec![0.3, 0.7]]).unwrap();
        let m = pi_matrix(&mu, 1, 2).unwrap();
        assert_eq!(m.nrows(), 1);
        assert_eq!(m.ncols(), 2);
        assert_eq!(m[(0, 0)], 0.3);
        assert_eq!(m[(0, 1)], 0.7);
    }

    #[test]
    fn pi_matrix_deterministic_one_hot() {
        let pi = DeterministicPolicy::new(vec![1, 0], 2).unwrap();
        let m = pi_matrix_det(&pi, 2, 2).unwrap();
        // Row s is the standard basis row at index(s, pi(s)).
        for s in 0..2 {
            for col in 0..4 {
                let expect = if col == sa_index(2, s, pi.action(s)) { 1.0 } else { 0.0 };
                assert_eq!(m[(s, col)], expect);
            }
        }
    }

    #[test]
    fn pi_matrix_applies_per_state_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mu = random_policy(2, 2, &mut rng);
        let m = pi_matrix(&mu, 2, 2).unwrap();
        let q = DVector::from_fn(4, |_, _| rng.gen_range(-2.0..2.0));
        let applied = &m * &q;
        for s in 0..2 {
            let oracle: f64 = (0..2).map(|a| mu.prob(s, a) * q[sa_index(2, s, a)]).sum();
            assert_abs_diff_eq!(applied[s], oracle, epsilon = 1e-14);
        }
    }

    #[test]
    fn linearize_zero_error_puts_mass_on_min_action() {
        let mdp = random_mdp(2, 2, 0.8, 10);
        let q_star = mdp.solve_q_star(1e-12).unwrap();
        let mu = linearize_max(&mdp, &q_star, &q_star).unwrap();
        for s in 0..2 {
            assert_eq!(mu.prob(s, 0), 1.0);
            assert_eq!(mu.prob(s, 1), 0.0);
        }
        let pi_m = pi_matrix(&mu, 2, 2).unwrap();
        let zero = &pi_m * (q_star.values() - q_star.values());
        assert!(zero.amax() == 0.0);
    }

    #[test]
    fn linearize_lambda_solves_two_point_equation() {
        let mdp = Mdp::new(1, 2, 0.9, vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
        // e = (-1, 1) with y = V_Q - V* = 0: lambda = (0 - (-1)) / (1 - (-1)) = 1/2.
        let q_star = QVector::from_vector(DVector::from_vec(vec![0.5, -0.5]));
        let q = QVector::from_vector(DVector::from_vec(vec![-0.5, 0.5]));
        let mu = linearize_max(&mdp, &q, &q_star).unwrap();
        assert_abs_diff_eq!(mu.prob(0, 1), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(mu.prob(0, 0), 0.5, epsilon = 1e-15);
        // Endpoints: y = e_max gives lambda = 1, y = e_min gives lambda = 0.
        let zero = QVector::from_vector(DVector::from_vec(vec![0.0, 0.0]));
        let q_hi = QVector::from_vector(DVector::from_vec(vec![-1.0, 1.0]));
        let mu_hi = linearize_max(&mdp, &q_hi, &zero).unwrap();
        assert_eq!(mu_hi.prob(0, 1), 1.0);
        let q_star_lo = QVector::from_vector(DVector::from_vec(vec![1.0, -1.0]));
        let mu_lo = linearize_max(&mdp, &zero, &q_star_lo).unwrap();
        assert_eq!(mu_lo.prob(0, 0), 1.0);
    }

    #[test]
    fn linearize_identity_on_random_inputs() {
        let mdp = random_mdp(3, 3, 0.85, 23);
        let q_star = mdp.solve_q_star(1e-12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..200 {
            let q = QVector::from_vector(DVector::from_fn(mdp.n_sa(), |_, _| {
                rng.gen_range(-5.0..5.0)
            }));
            let mu = linearize_max(&mdp, &q, &q_star).unwrap();
            let pi_m = pi_matrix(&mu, 3, 3).unwrap();
            let lhs = &pi_m * (q.values() - q_star.values());
            let rhs = mdp.greedy_values(&q) - mdp.greedy_values(&q_star);
            assert!((lhs - rhs).amax() <= 1e-12);
        }
    }

    #[test]
    fn linearize_is_deterministic_on_ties() {
        let mdp = random_mdp(2, 3, 0.8, 31);
        let q_star = mdp.solve_q_star(1e-12).unwrap();
        let q = QVector::from_vector(q_star.values().clone());
        let a = linearize_max(&mdp, &q, &q_star).unwrap();
        let b = linearize_max(&mdp, &q, &q_star).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn enumerate_policy_counts() {
        assert_eq!(enumerate_policies(1, 3, 64).unwrap().len(), 3);
        assert_eq!(enumerate_policies(2, 2, 64).unwrap().len(), 4);
        let eight = enumerate_policies(3, 2, 64).unwrap();
        assert_eq!(eight.len(), 8);
        let mut seen = std::collections::HashSet::new();
        for pi in &eight {
            assert!(seen.insert(pi.actions().to_vec()));
        }
        // Lexicographic order over action tuples.
        assert_eq!(eight[0].actions(), &[0, 0, 0]);
        assert_eq!(eight[1].actions(), &[0, 0, 1]);
        assert_eq!(eight[7].actions(), &[1, 1, 1]);
        assert!(enumerate_policies(16, 4, POLICY_ENUMERATION_CAP).is_err());
    }

    #[test]
    fn hull_weights_degenerate_and_uniform() {
        // Deterministic mu: all weight on the matching policy.
        let pi = DeterministicPolicy::new(vec![1, 0], 2).unwrap();
        let mu = one_hot_policy(&pi, 2);
        let weights = hull_weights(&mu, 64).unwrap();
        for (policy, w) in &weights {
            if policy == &pi {
                assert_eq!(*w, 1.0);
            } else {
                assert_eq!(*w, 0.0);
            }
        }
        // Uniform mu on 2x2: all four policies weigh 1/4.
        let mu = StochasticPolicy::uniform(2, 2);
        for (_, w) in hull_weights(&mu, 64).unwrap() {
            assert_abs_diff_eq!(w, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn hull_weights_reconstruct_pi_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mu = random_policy(2, 2, &mut rng);
        let weights = hull_weights(&mu, 64).unwrap();
        let target = pi_matrix(&mu, 2, 2).unwrap();
        let mut recon = DMatrix::zeros(2, 4);
        for (pi, w) in &weights {
            recon += pi_matrix_det(pi, 2, 2).unwrap() * *w;
        }
        assert!((recon - target).amax() <= 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn hull_weights_form_a_distribution(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mu = random_policy(3, 2, &mut rng);
            let weights = hull_weights(&mu, 64).unwrap();
            let total: f64 = weights.iter().map(|(_, w)| *w).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            for (_, w) in &weights {
                prop_assert!(*w >= 0.0);
            }
        }

        #[test]
        fn linearize_respects_sandwich(seed in 0u64..10_000) {
            let mdp = random_mdp(2, 3, 0.8, 47);
            let q_star = mdp.solve_q_star(1e-12).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = QVector::from_vector(DVector::from_fn(mdp.n_sa(), |_, _| {
                rng.gen_range(-3.0..3.0)
            }));
            let v_q = mdp.greedy_values(&q);
            let v_star = mdp.greedy_values(&q_star);
            for s in 0..mdp.n_states() {
                let errs: Vec<f64> = (0..mdp.n_actions())
                    .map(|a| q.get(mdp.n_states(), s, a) - q_star.get(mdp.n_states(), s, a))
                    .collect();
                let y = v_q[s] - v_star[s];
                let lo = errs.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = errs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo - 1e-12 <= y && y <= hi + 1e-12);
            }
            prop_assert!(linearize_max(&mdp, &q, &q_star).is_ok());
        }
    }
}
