//! Finite discounted MDP model with the fixed state-action ordering used by
//! every matrix in this crate, the Bellman optimality operator, and a
//! value-iteration solver for the optimal Q-function.
//!
//! State-action pairs are flattened as `index(s, a) = a * n_states + s`
//! (0-based), so the one-hot vector at `(s, a)` is the Kronecker product of
//! the action and state basis vectors. The stacked transition matrix `P` and
//! the reward vector `R` use the same ordering.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simplex / probability tolerance used by all validators.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Flat index of a state-action pair under the crate-wide ordering.
#[inline]
pub fn sa_index(n_states: usize, s: usize, a: usize) -> usize {
    a * n_states + s
}

/// Inverse of [`sa_index`].
#[inline]
pub fn sa_unindex(n_states: usize, idx: usize) -> (usize, usize) {
    (idx % n_states, idx / n_states)
}

/// A Q-function stored as a flat vector over state-action pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct QVector {
    values: DVector<f64>,
}

impl QVector {
    pub fn zeros(n_sa: usize) -> Self {
        Self {
            values: DVector::zeros(n_sa),
        }
    }

    pub fn from_vector(values: DVector<f64>) -> Self {
        Self { values }
    }

    pub fn from_fn(mdp: &Mdp, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = DVector::zeros(mdp.n_sa());
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                values[sa_index(mdp.n_states, s, a)] = f(s, a);
            }
        }
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn get(&self, n_states: usize, s: usize, a: usize) -> f64 {
        self.values[sa_index(n_states, s, a)]
    }

    pub fn set(&mut self, n_states: usize, s: usize, a: usize, v: f64) {
        self.values[sa_index(n_states, s, a)] = v;
    }

    /// Sup norm of the vector.
    pub fn sup_norm(&self) -> f64 {
        self.values.amax()
    }
}

/// Serialized form of an MDP: `P` and `r` are indexed `[s][a][s']`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpJson {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    #[serde(rename = "P")]
    pub p: Vec<Vec<Vec<f64>>>,
    pub r: Vec<Vec<Vec<f64>>>,
}

/// Finite discounted MDP: transition kernel, rewards, discount.
///
/// Immutable after construction; all operations on it are pure functions.
#[derive(Clone, Debug)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    /// P(s' | s, a) flattened as [(s * n_actions + a) * n_states + s'].
    p: Vec<f64>,
    /// r(s, a, s') with the same layout as `p`.
    r: Vec<f64>,
    gamma: f64,
    r_max: f64,
}

impl Mdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        p: Vec<f64>,
        r: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("state and action counts must be positive".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidMdp(format!("gamma must lie in (0,1), got {gamma}")));
        }
        let expect = n_states * n_actions * n_states;
        if p.len() != expect || r.len() != expect {
            return Err(Error::InvalidMdp(format!(
                "kernel/reward tables must hold {expect} entries, got {} and {}",
                p.len(),
                r.len()
            )));
        }
        let mut r_max: f64 = 0.0;
        for v in &r {
            if !v.is_finite() {
                return Err(Error::InvalidMdp("rewards must be finite".into()));
            }
            r_max = r_max.max(v.abs());
        }
        let mdp = Self {
            n_states,
            n_actions,
            p,
            r,
            gamma,
            r_max,
        };
        for s in 0..n_states {
            for a in 0..n_actions {
                let mut sum = 0.0;
                for s2 in 0..n_states {
                    let v = mdp.p(s, a, s2);
                    if v < 0.0 {
                        return Err(Error::InvalidMdp(format!(
                            "P({s2}|{s},{a}) = {v} is negative"
                        )));
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > SIMPLEX_TOL {
                    return Err(Error::InvalidMdp(format!(
                        "P(.|{s},{a}) sums to {sum}, not 1 within {SIMPLEX_TOL}"
                    )));
                }
            }
        }
        Ok(mdp)
    }

    pub fn from_json_value(json: MdpJson) -> Result<Self> {
        let MdpJson {
            n_states,
            n_actions,
            gamma,
            p,
            r,
        } = json;
        let flatten = |t: &[Vec<Vec<f64>>], name: &str| -> Result<Vec<f64>> {
            if t.len() != n_states {
                return Err(Error::InvalidMdp(format!("{name} must have {n_states} state rows")));
            }
            let mut flat = Vec::with_capacity(n_states * n_actions * n_states);
            for (s, row) in t.iter().enumerate() {
                if row.len() != n_actions {
                    return Err(Error::InvalidMdp(format!(
                        "{name}[{s}] must have {n_actions} action rows"
                    )));
                }
                for (a, inner) in row.iter().enumerate() {
                    if inner.len() != n_states {
                        return Err(Error::InvalidMdp(format!(
                            "{name}[{s}][{a}] must have {n_states} entries"
                        )));
                    }
                    flat.extend_from_slice(inner);
                }
            }
            Ok(flat)
        };
        let p = flatten(&p, "P")?;
        let r = flatten(&r, "r")?;
        Self::new(n_states, n_actions, gamma, p, r)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let json: MdpJson = serde_json::from_str(s)?;
        Self::from_json_value(json)
    }

    pub fn to_json_value(&self) -> MdpJson {
        let nested = |t: &[f64]| -> Vec<Vec<Vec<f64>>> {
            (0..self.n_states)
                .map(|s| {
                    (0..self.n_actions)
                        .map(|a| {
                            (0..self.n_states)
                                .map(|s2| t[(s * self.n_actions + a) * self.n_states + s2])
                                .collect()
                        })
                        .collect()
                })
                .collect()
        };
        MdpJson {
            n_states: self.n_states,
            n_actions: self.n_actions,
            gamma: self.gamma,
            p: nested(&self.p),
            r: nested(&self.r),
        }
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn n_sa(&self) -> usize {
        self.n_states * self.n_actions
    }

    #[inline]
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Largest absolute one-step reward.
    #[inline]
    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.p[(s * self.n_actions + a) * self.n_states + s2]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.r[(s * self.n_actions + a) * self.n_states + s2]
    }

    /// Sup-norm envelope of the optimal Q-function, `R_max / (1 - gamma)`.
    pub fn q_star_envelope(&self) -> f64 {
        self.r_max / (1.0 - self.gamma)
    }

    pub fn check_q_dim(&self, q: &QVector, context: &'static str) -> Result<()> {
        if q.len() != self.n_sa() {
            return Err(Error::DimensionMismatch {
                expected: self.n_sa(),
                got: q.len(),
                context,
            });
        }
        Ok(())
    }

    /// Stacked transition matrix `P` of shape `(n_sa, n_states)`, row
    /// `index(s, a)` holding `P(. | s, a)`.
    pub fn stacked_p(&self) -> DMatrix<f64> {
        let n = self.n_sa();
        DMatrix::from_fn(n, self.n_states, |row, s2| {
            let (s, a) = sa_unindex(self.n_states, row);
            self.p(s, a, s2)
        })
    }

    /// Expected reward vector `R(s,a) = sum_{s'} P(s'|s,a) r(s,a,s')`.
    pub fn expected_reward(&self) -> DVector<f64> {
        let n = self.n_sa();
        DVector::from_fn(n, |row, _| {
            let (s, a) = sa_unindex(self.n_states, row);
            (0..self.n_states)
                .map(|s2| self.p(s, a, s2) * self.reward(s, a, s2))
                .sum()
        })
    }

    /// Per-state greedy values `V_Q(s) = max_a Q(s, a)`.
    pub fn greedy_values(&self, q: &QVector) -> DVector<f64> {
        DVector::from_fn(self.n_states, |s, _| {
            (0..self.n_actions)
                .map(|a| q.get(self.n_states, s, a))
                .fold(f64::NEG_INFINITY, f64::max)
        })
    }

    /// Greedy action per state with lexicographic tie-breaking (lowest index).
    pub fn greedy_actions(&self, q: &QVector) -> Vec<usize> {
        (0..self.n_states)
            .map(|s| {
                let mut best = 0;
                let mut best_v = q.get(self.n_states, s, 0);
                for a in 1..self.n_actions {
                    let v = q.get(self.n_states, s, a);
                    if v > best_v {
                        best = a;
                        best_v = v;
                    }
                }
                best
            })
            .collect()
    }

    /// Bellman optimality operator `F(Q) = R + gamma * P * V_Q`.
    pub fn bellman_optimality(&self, q: &QVector) -> Result<QVector> {
        self.check_q_dim(q, "bellman_optimality")?;
        let v = self.greedy_values(q);
        let mut out = DVector::zeros(self.n_sa());
        for row in 0..self.n_sa() {
            let (s, a) = sa_unindex(self.n_states, row);
            let mut acc = 0.0;
            for s2 in 0..self.n_states {
                acc += self.p(s, a, s2) * (self.reward(s, a, s2) + self.gamma * v[s2]);
            }
            out[row] = acc;
        }
        Ok(QVector::from_vector(out))
    }

    /// Value iteration cap before signalling a mis-specified MDP.
    pub const VALUE_ITERATION_CAP: usize = 1_000_000;

    /// Solve for the optimal Q-function to sup-norm accuracy `tol`.
    ///
    /// Iterates `F` until the sup-norm step falls below
    /// `tol * (1 - gamma) / (2 gamma)`, which guarantees
    /// `||Q - Q*||_inf <= tol` by the standard contraction argument.
    pub fn solve_q_star(&self, tol: f64) -> Result<QVector> {
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
        }
        let threshold = if self.gamma > 0.5 {
            tol * (1.0 - self.gamma) / (2.0 * self.gamma)
        } else {
            // For gamma <= 1/2 the factor (1-gamma)/(2 gamma) >= 1/2; using
            // tol/2 keeps the same guarantee without dividing by tiny gamma.
            tol / 2.0
        };
        let mut q = QVector::zeros(self.n_sa());
        for _ in 0..Self::VALUE_ITERATION_CAP {
            let next = self.bellman_optimality(&q)?;
            let step = (next.values() - q.values()).amax();
            q = next;
            if step < threshold {
                let envelope = self.q_star_envelope();
                debug_assert!(
                    q.sup_norm() <= envelope + tol,
                    "solved Q* exceeds R_max/(1-gamma) envelope"
                );
                return Ok(q);
            }
        }
        Err(Error::NonConvergence(Self::VALUE_ITERATION_CAP))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Random MDP with simplex rows built from normalized exponentials.
    pub(crate) fn random_mdp(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> Mdp {
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

    fn random_q(mdp: &Mdp, scale: f64, rng: &mut impl Rng) -> QVector {
        QVector::from_vector(DVector::from_fn(mdp.n_sa(), |_, _| {
            rng.gen_range(-scale..scale)
        }))
    }

    #[test]
    fn sa_index_round_trip() {
        let n_states = 3;
        for s in 0..n_states {
            for a in 0..4 {
                let idx = sa_index(n_states, s, a);
                assert_eq!(sa_unindex(n_states, idx), (s, a));
            }
        }
        // e_a (x) e_s picks index a * n_states + s.
        assert_eq!(sa_index(3, 2, 1), 5);
    }

    #[test]
    fn expected_reward_constant_on_deterministic_kernel() {
        // Deterministic transition to state 0, reward identically c.
        let c = 0.75;
        let n_states = 2;
        let n_actions = 2;
        let mut p = vec![0.0; n_states * n_actions * n_states];
        let r = vec![c; n_states * n_actions * n_states];
        for s in 0..n_states {
            for a in 0..n_actions {
                p[(s * n_actions + a) * n_states] = 1.0;
            }
        }
        let mdp = Mdp::new(n_states, n_actions, 0.5, p, r).unwrap();
        let expected = mdp.expected_reward();
        for v in expected.iter() {
            assert_abs_diff_eq!(*v, c, epsilon = 1e-15);
        }
    }

    #[test]
    fn expected_reward_uniform_two_state() {
        // Uniform kernel over 2 states, r(s,a,0)=0, r(s,a,1)=1 -> R = 0.5.
        let n_states = 2;
        let n_actions = 2;
        let p = vec![0.5; n_states * n_actions * n_states];
        let mut r = vec![0.0; n_states * n_actions * n_states];
        for s in 0..n_states {
            for a in 0..n_actions {
                r[(s * n_actions + a) * n_states + 1] = 1.0;
            }
        }
        let mdp = Mdp::new(n_states, n_actions, 0.9, p, r).unwrap();
        for v in mdp.expected_reward().iter() {
            assert_abs_diff_eq!(*v, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn expected_reward_matches_brute_force_sum() {
        let mdp = random_mdp(3, 2, 0.8, 7);
        let expected = mdp.expected_reward();
        for s in 0..3 {
            for a in 0..2 {
                let mut acc = 0.0;
                for s2 in 0..3 {
                    acc += mdp.p(s, a, s2) * mdp.reward(s, a, s2);
                }
                assert_abs_diff_eq!(expected[sa_index(3, s, a)], acc, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn bellman_reduces_to_expected_reward_when_gamma_tiny() {
        // gamma = 0 is outside the model; gamma -> 0 scales the lookahead away.
        let mdp = random_mdp(2, 2, 1e-12, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random_q(&mdp, 5.0, &mut rng);
        let f = mdp.bellman_optimality(&q).unwrap();
        let r = mdp.expected_reward();
        assert!((f.values() - r).amax() < 1e-10);
    }

    #[test]
    fn bellman_fixed_point() {
        let mdp = random_mdp(2, 2, 0.9, 5);
        let q_star = mdp.solve_q_star(1e-12).unwrap();
        let f = mdp.bellman_optimality(&q_star).unwrap();
        assert!((f.values() - q_star.values()).amax() < 1e-10);
    }

    #[test]
    fn bellman_matches_componentwise_oracle() {
        let mdp = random_mdp(2, 2, 0.7, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let q = random_q(&mdp, 3.0, &mut rng);
        let f = mdp.bellman_optimality(&q).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                // R(s,a) + gamma * sum_{s'} P(s'|s,a) max_u Q(s',u)
                let mut oracle = 0.0;
                for s2 in 0..2 {
                    let max_u = (0..2)
                        .map(|u| q.get(2, s2, u))
                        .fold(f64::NEG_INFINITY, f64::max);
                    oracle += mdp.p(s, a, s2) * (mdp.reward(s, a, s2) + 0.7 * max_u);
                }
                assert_abs_diff_eq!(f.get(2, s, a), oracle, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn q_star_zero_rewards() {
        let mdp = random_mdp(3, 2, 0.9, 21);
        let zeroed = Mdp::new(
            3,
            2,
            0.9,
            (0..18).map(|i| mdp.p[i]).collect(),
            vec![0.0; 18],
        )
        .unwrap();
        let q_star = zeroed.solve_q_star(1e-10).unwrap();
        assert!(q_star.sup_norm() < 1e-10);
    }

    #[test]
    fn q_star_single_state_geometric_series() {
        let mdp = Mdp::new(1, 1, 0.5, vec![1.0], vec![1.0]).unwrap();
        let q_star = mdp.solve_q_star(1e-10).unwrap();
        assert_abs_diff_eq!(q_star.values()[0], 2.0, epsilon = 1e-9);
    }

    /// Policy-enumeration oracle: solve the linear system for every
    /// deterministic policy and take the componentwise best.
    fn q_star_policy_enumeration(mdp: &Mdp) -> DVector<f64> {
        let n = mdp.n_sa();
        let r = mdp.expected_reward();
        let p = mdp.stacked_p();
        let n_policies = mdp.n_actions().pow(mdp.n_states() as u32);
        let mut best = DVector::from_element(n, f64::NEG_INFINITY);
        for code in 0..n_policies {
            let mut c = code;
            let mut actions = vec![0usize; mdp.n_states()];
            for s in (0..mdp.n_states()).rev() {
                actions[s] = c % mdp.n_actions();
                c /= mdp.n_actions();
            }
            let pi = DMatrix::from_fn(mdp.n_states(), n, |s, col| {
                if col == sa_index(mdp.n_states(), s, actions[s]) {
                    1.0
                } else {
                    0.0
                }
            });
            let system = DMatrix::identity(n, n) - mdp.gamma() * (&p * &pi);
            let q_pi = system.lu().solve(&r).expect("policy system solvable");
            for i in 0..n {
                if q_pi[i] > best[i] {
                    best[i] = q_pi[i];
                }
            }
        }
        best
    }

    #[test]
    fn q_star_matches_policy_enumeration_oracle() {
        let mdp = random_mdp(2, 2, 0.85, 17);
        let tol = 1e-10;
        let q_star = mdp.solve_q_star(tol).unwrap();
        let oracle = q_star_policy_enumeration(&mdp);
        assert!((q_star.values() - oracle).amax() < tol * 10.0);
    }

    #[test]
    fn q_star_respects_envelope() {
        let mdp = random_mdp(3, 3, 0.9, 33);
        let tol = 1e-10;
        let q_star = mdp.solve_q_star(tol).unwrap();
        assert!(q_star.sup_norm() <= mdp.q_star_envelope() + tol);
    }

    #[test]
    fn json_round_trip_and_strictness() {
        let mdp = random_mdp(2, 3, 0.8, 41);
        let json = serde_json::to_string(&mdp.to_json_value()).unwrap();
        let back = Mdp::from_json_str(&json).unwrap();
        assert_eq!(back.n_states(), 2);
        assert_eq!(back.n_actions(), 3);
        for s in 0..2 {
            for a in 0..3 {
                for s2 in 0..2 {
                    assert_eq!(back.p(s, a, s2), mdp.p(s, a, s2));
                    assert_eq!(back.reward(s, a, s2), mdp.reward(s, a, s2));
                }
            }
        }
        // Broken simplex row is rejected.
        let bad = r#"{"n_states":1,"n_actions":1,"gamma":0.9,"P":[[[0.5]]],"r":[[[1.0]]]}"#;
        assert!(Mdp::from_json_str(bad).is_err());
        // Unknown keys are rejected.
        let unknown =
            r#"{"n_states":1,"n_actions":1,"gamma":0.9,"P":[[[1.0]]],"r":[[[1.0]]],"x":3}"#;
        assert!(Mdp::from_json_str(unknown).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bellman_is_gamma_contraction(seed in 0u64..1000, scale in 0.1f64..10.0) {
            let mdp = random_mdp(3, 2, 0.9, 101);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q1 = random_q(&mdp, scale, &mut rng);
            let q2 = random_q(&mdp, scale, &mut rng);
            let f1 = mdp.bellman_optimality(&q1).unwrap();
            let f2 = mdp.bellman_optimality(&q2).unwrap();
            let lhs = (f1.values() - f2.values()).amax();
            let rhs = 0.9 * (q1.values() - q2.values()).amax();
            prop_assert!(lhs <= rhs + 1e-12);
        }

        #[test]
        fn bellman_is_monotone(seed in 0u64..1000) {
            let mdp = random_mdp(3, 2, 0.8, 202);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q1 = random_q(&mdp, 4.0, &mut rng);
            let bump = DVector::from_fn(mdp.n_sa(), |_, _| rng.gen_range(0.0..2.0));
            let q2 = QVector::from_vector(q1.values() + bump);
            let f1 = mdp.bellman_optimality(&q1).unwrap();
            let f2 = mdp.bellman_optimality(&q2).unwrap();
            for i in 0..mdp.n_sa() {
                prop_assert!(f1.values()[i] <= f2.values()[i] + 1e-12);
            }
        }
    }
}
