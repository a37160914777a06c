//! Constant-step-size Q-learning simulation under the i.i.d. observation
//! model and the single-trajectory Markovian model, with exact extraction of
//! the martingale-difference noise at every step.
//!
//! Reproducibility contract: every random draw is a pure function of
//! `(seed, step index)`. Each step builds a fresh counter-based generator
//! stream, so trajectory records can be replayed bit-identically and
//! individual steps can be resampled in isolation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{sa_index, sa_unindex, Mdp, QVector};
use crate::policies::StochasticPolicy;
use crate::switching::validate_sampling_distribution;

/// Derived seed for one Monte-Carlo replication.
#[inline]
pub fn run_seed(master_seed: u64, run_index: u64) -> u64 {
    master_seed ^ run_index
}

/// Generator for one step of one run: an independent stream per step index.
#[inline]
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Inverse-CDF draw from a categorical distribution.
fn sample_categorical(probs: impl Iterator<Item = f64>, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// I.i.d. state-action sampler with a strictly positive distribution.
#[derive(Clone, Debug)]
pub struct IidSampler {
    d: Vec<f64>,
    d_min: f64,
    seed: u64,
}

impl IidSampler {
    pub fn new(d: Vec<f64>, n_sa: usize, seed: u64) -> Result<Self> {
        let d_min = validate_sampling_distribution(&d, n_sa)?;
        Ok(Self { d, d_min, seed })
    }

    pub fn uniform(n_sa: usize, seed: u64) -> Self {
        Self {
            d: vec![1.0 / n_sa as f64; n_sa],
            d_min: 1.0 / n_sa as f64,
            seed,
        }
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Single-trajectory Markovian sampler over state-action pairs.
///
/// The behavior-induced kernel is `P^b(s',a'|s,a) = P(s'|s,a) b(a'|s')`.
/// Construction fails unless the chain is irreducible and aperiodic; the
/// stationary distribution then exists, is unique and strictly positive.
#[derive(Clone, Debug)]
pub struct MarkovSampler {
    behavior: StochasticPolicy,
    kernel: DMatrix<f64>,
    stationary: Vec<f64>,
    seed: u64,
    current: usize,
    initial: usize,
}

impl MarkovSampler {
    pub fn new(mdp: &Mdp, behavior: StochasticPolicy, initial_coord: usize, seed: u64) -> Result<Self> {
        let n = mdp.n_sa();
        if initial_coord >= n {
            return Err(Error::InvalidParameter(format!(
                "initial coordinate {initial_coord} out of range for {n} pairs"
            )));
        }
        if behavior.n_states() != mdp.n_states() || behavior.n_actions() != mdp.n_actions() {
            return Err(Error::DimensionMismatch {
                expected: mdp.n_states(),
                got: behavior.n_states(),
                context: "behavior policy",
            });
        }
        let kernel = DMatrix::from_fn(n, n, |from, to| {
            let (s, a) = sa_unindex(mdp.n_states(), from);
            let (s2, a2) = sa_unindex(mdp.n_states(), to);
            mdp.p(s, a, s2) * behavior.prob(s2, a2)
        });
        let stationary = stationary_distribution(&kernel)?;
        Ok(Self {
            behavior,
            kernel,
            stationary,
            seed,
            current: initial_coord,
            initial: initial_coord,
        })
    }

    pub fn behavior(&self) -> &StochasticPolicy {
        &self.behavior
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    /// Stationary distribution of the behavior-induced chain; this is the
    /// `d` entering the stationary averaged family.
    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn current(&self) -> usize {
        self.current
    }

    pub fn reset(&mut self) {
        self.current = self.initial;
    }
}

/// Stationary distribution of a stochastic matrix (rows sum to one) by a
/// direct linear solve of the balance equations, after an explicit
/// irreducibility and aperiodicity check on the support graph.
pub fn stationary_distribution(kernel: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = kernel.nrows();
    if kernel.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: kernel.ncols(),
            context: "stationary kernel",
        });
    }
    for r in 0..n {
        let mut sum = 0.0;
        for c in 0..n {
            if kernel[(r, c)] < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "kernel entry ({r},{c}) is negative"
                )));
            }
            sum += kernel[(r, c)];
        }
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "kernel row {r} sums to {sum}"
            )));
        }
    }
    check_irreducible_aperiodic(kernel)?;

    // Solve d^T P = d^T with the normalization sum(d) = 1: replace the last
    // balance equation by the normalization row.
    let mut system = DMatrix::zeros(n, n);
    for col in 0..n {
        for row in 0..n {
            // (P^T - I) d = 0, equation `col`.
            system[(col, row)] = kernel[(row, col)] - if row == col { 1.0 } else { 0.0 };
        }
    }
    for row in 0..n {
        system[(n - 1, row)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let d = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::ReducibleChain("balance equations are singular".into()))?;

    let mut out = Vec::with_capacity(n);
    for v in d.iter() {
        if *v < -1e-12 {
            return Err(Error::ReducibleChain(format!(
                "stationary solve produced a negative mass {v}"
            )));
        }
        out.push(v.max(0.0));
    }
    // Residual check of the fixed-point equation in l1.
    let dv = DVector::from_vec(out.clone());
    let residual = (kernel.transpose() * &dv - &dv).abs().sum();
    if residual > 1e-10 {
        return Err(Error::ReducibleChain(format!(
            "stationary residual {residual} exceeds 1e-10"
        )));
    }
    Ok(out)
}

/// Strong connectivity via forward/backward reachability from node 0, and
/// aperiodicity via the gcd of `dist(u) + 1 - dist(v)` over support edges.
fn check_irreducible_aperiodic(kernel: &DMatrix<f64>) -> Result<()> {
    let n = kernel.nrows();
    let reach = |transpose: bool| -> Vec<bool> {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let w = if transpose { kernel[(v, u)] } else { kernel[(u, v)] };
                if w > 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    };
    if reach(false).iter().any(|s| !s) || reach(true).iter().any(|s| !s) {
        return Err(Error::ReducibleChain(
            "support graph is not strongly connected".into(),
        ));
    }
    // BFS levels from node 0.
    let mut dist = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    dist[0] = 0;
    queue.push_back(0usize);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if kernel[(u, v)] > 0.0 && dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let gcd = |mut a: i64, mut b: i64| {
        a = a.abs();
        b = b.abs();
        while b != 0 {
            let t = a % b;
            a = b;
            b = t;
        }
        a
    };
    let mut g: i64 = 0;
    for u in 0..n {
        for v in 0..n {
            if kernel[(u, v)] > 0.0 {
                g = gcd(g, dist[u] as i64 + 1 - dist[v] as i64);
            }
        }
    }
    if g != 1 {
        return Err(Error::ReducibleChain(format!("chain has period {g}")));
    }
    Ok(())
}

/// Noise and boundedness constants of a Q-learning instance.
#[derive(Clone, Copy, Debug)]
pub struct NoiseConstants {
    /// Deterministic bound on the conditional second moment of the noise:
    /// `(R_max + (1 + gamma) B_Q)^2`.
    pub w_max: f64,
    /// Trajectory sup-norm envelope `max(||Q_0||_inf, R_max / (1 - gamma))`.
    pub b_q: f64,
    /// `4 R_max^2 / (1 - gamma)^2`; valid envelope for `w_max` whenever
    /// `||Q_0||_inf <= R_max / (1 - gamma)`.
    pub normalized_envelope: f64,
}

pub fn noise_constant(mdp: &Mdp, q0: &QVector) -> NoiseConstants {
    let b_q = q0.sup_norm().max(mdp.q_star_envelope());
    let w_max = (mdp.r_max() + (1.0 + mdp.gamma()) * b_q).powi(2);
    let normalized_envelope = 4.0 * mdp.r_max().powi(2) / (1.0 - mdp.gamma()).powi(2);
    NoiseConstants {
        w_max,
        b_q,
        normalized_envelope,
    }
}

/// Outcome of one i.i.d. Q-learning step.
pub struct IidStep {
    pub q_next: QVector,
    /// Exact martingale-difference noise `w_k`.
    pub noise: DVector<f64>,
    pub coord: usize,
    pub next_state: usize,
    pub reward: f64,
}

/// One asynchronous update under the i.i.d. observation model; only the
/// sampled coordinate changes, and the returned noise is the sampled one-hot
/// TD vector minus `D (F(Q) - Q)`.
pub fn qlearn_step_iid(
    mdp: &Mdp,
    sampler: &IidSampler,
    q: &QVector,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<IidStep> {
    mdp.check_q_dim(q, "qlearn_step_iid")?;
    let coord = sample_categorical(sampler.d.iter().copied(), rng);
    let (s, a) = sa_unindex(mdp.n_states(), coord);
    let next_state = sample_categorical((0..mdp.n_states()).map(|s2| mdp.p(s, a, s2)), rng);
    let reward = mdp.reward(s, a, next_state);
    let max_next = (0..mdp.n_actions())
        .map(|u| q.get(mdp.n_states(), next_state, u))
        .fold(f64::NEG_INFINITY, f64::max);
    let td = reward + mdp.gamma() * max_next - q.values()[coord];

    let mut q_next = q.clone();
    {
        let idx = coord;
        let v = q_next.values()[idx] + alpha * td;
        let (s, a) = sa_unindex(mdp.n_states(), idx);
        q_next.set(mdp.n_states(), s, a, v);
    }

    let drift = mdp.bellman_optimality(q)?;
    let mut noise = DVector::zeros(mdp.n_sa());
    for i in 0..mdp.n_sa() {
        noise[i] = -sampler.d[i] * (drift.values()[i] - q.values()[i]);
    }
    noise[coord] += td;

    Ok(IidStep {
        q_next,
        noise,
        coord,
        next_state,
        reward,
    })
}

/// Outcome of one Markovian Q-learning step.
pub struct MarkovStep {
    pub q_next: QVector,
    /// Exact one-hot TD deviation `xi_{k+1}`.
    pub noise: DVector<f64>,
    /// The coordinate `X_k` the update was applied at.
    pub coord: usize,
    pub next_coord: usize,
    pub next_state: usize,
    pub reward: f64,
}

/// One asynchronous update driven by the behavior-induced chain. The sampler
/// coordinate advances to `(s_{k+1}, a_{k+1})`.
pub fn qlearn_step_markov(
    mdp: &Mdp,
    sampler: &mut MarkovSampler,
    q: &QVector,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<MarkovStep> {
    mdp.check_q_dim(q, "qlearn_step_markov")?;
    let coord = sampler.current;
    let (s, a) = sa_unindex(mdp.n_states(), coord);
    let next_state = sample_categorical((0..mdp.n_states()).map(|s2| mdp.p(s, a, s2)), rng);
    let reward = mdp.reward(s, a, next_state);
    let next_action = sample_categorical(
        (0..mdp.n_actions()).map(|a2| sampler.behavior.prob(next_state, a2)),
        rng,
    );
    let next_coord = sa_index(mdp.n_states(), next_state, next_action);

    let max_next = (0..mdp.n_actions())
        .map(|u| q.get(mdp.n_states(), next_state, u))
        .fold(f64::NEG_INFINITY, f64::max);
    let td = reward + mdp.gamma() * max_next - q.values()[coord];

    let mut q_next = q.clone();
    {
        let v = q_next.values()[coord] + alpha * td;
        let (s, a) = sa_unindex(mdp.n_states(), coord);
        q_next.set(mdp.n_states(), s, a, v);
    }

    // xi = e_X (Y - E[Y | F]) with E[Y | F] = (F(Q) - Q)_X.
    let drift = mdp.bellman_optimality(q)?;
    let conditional_mean = drift.values()[coord] - q.values()[coord];
    let mut noise = DVector::zeros(mdp.n_sa());
    noise[coord] = td - conditional_mean;

    sampler.current = next_coord;
    Ok(MarkovStep {
        q_next,
        noise,
        coord,
        next_coord,
        next_state,
        reward,
    })
}

/// Which observation model drives a trajectory.
#[derive(Clone, Debug)]
pub enum SamplerKind {
    Iid(IidSampler),
    Markov(MarkovSampler),
}

impl SamplerKind {
    pub fn seed(&self) -> u64 {
        match self {
            SamplerKind::Iid(s) => s.seed(),
            SamplerKind::Markov(s) => s.seed(),
        }
    }

    /// The sampling distribution entering `D` (stationary for Markov runs).
    pub fn d(&self) -> &[f64] {
        match self {
            SamplerKind::Iid(s) => s.d(),
            SamplerKind::Markov(s) => s.stationary(),
        }
    }
}

/// Recording options for [`run_trajectory`].
#[derive(Clone, Copy, Debug)]
pub struct RecordOptions {
    /// Keep per-step Q snapshots and noise vectors (needed for the
    /// representation residual checks). Defaults to on for runs up to 1e5.
    pub keep_steps: bool,
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self { keep_steps: true }
    }
}

/// One recorded step of a trajectory.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub k: usize,
    pub coord: usize,
    pub next_state: usize,
    pub reward: f64,
    /// Q-iterate before this step.
    pub q_before: QVector,
    /// `w_k` for i.i.d. runs, `xi_{k+1}` for Markovian runs.
    pub noise: DVector<f64>,
}

/// A simulated trajectory with summary statistics.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub steps: Vec<StepRecord>,
    /// Final Q-iterate after the last step (initial iterate for 0 steps).
    pub q_final: QVector,
    /// Sup norm of the error per step, index 0 holding the initial error.
    pub err_inf: Vec<f64>,
    /// Euclidean norm of the error per step.
    pub err_2: Vec<f64>,
    pub markovian: bool,
}

/// Run a seeded trajectory, asserting the sup-norm boundedness invariant at
/// every step. The invariant failing aborts the run because it signals an
/// implementation bug, never sampling noise.
pub fn run_trajectory(
    mdp: &Mdp,
    sampler: &mut SamplerKind,
    q0: &QVector,
    q_star: &QVector,
    alpha: f64,
    steps: usize,
    options: RecordOptions,
) -> Result<TrajectoryRecord> {
    mdp.check_q_dim(q0, "run_trajectory q0")?;
    mdp.check_q_dim(q_star, "run_trajectory q_star")?;
    let bound = noise_constant(mdp, q0).b_q;
    // Floating-point slack on the exact convex-combination argument.
    let bound_slack = bound * 1e-12 + 1e-12;
    let seed = sampler.seed();
    let markovian = matches!(sampler, SamplerKind::Markov(_));

    let mut q = q0.clone();
    let mut step_records = Vec::new();
    let mut err_inf = Vec::with_capacity(steps + 1);
    let mut err_2 = Vec::with_capacity(steps + 1);
    let push_err = |q: &QVector, err_inf: &mut Vec<f64>, err_2: &mut Vec<f64>| {
        let e = q.values() - q_star.values();
        err_inf.push(e.amax());
        err_2.push(e.norm());
    };
    push_err(&q, &mut err_inf, &mut err_2);

    for k in 0..steps {
        let mut rng = step_rng(seed, k as u64);
        let (q_next, noise, coord, next_state, reward) = match sampler {
            SamplerKind::Iid(s) => {
                let out = qlearn_step_iid(mdp, s, &q, alpha, &mut rng)?;
                (out.q_next, out.noise, out.coord, out.next_state, out.reward)
            }
            SamplerKind::Markov(s) => {
                let out = qlearn_step_markov(mdp, s, &q, alpha, &mut rng)?;
                (out.q_next, out.noise, out.coord, out.next_state, out.reward)
            }
        };
        if q_next.sup_norm() > bound + bound_slack {
            return Err(Error::InvalidParameter(format!(
                "boundedness invariant violated at step {k}: ||Q|| = {} > {bound}",
                q_next.sup_norm()
            )));
        }
        if options.keep_steps {
            step_records.push(StepRecord {
                k,
                coord,
                next_state,
                reward,
                q_before: q.clone(),
                noise,
            });
        }
        q = q_next;
        push_err(&q, &mut err_inf, &mut err_2);
    }

    Ok(TrajectoryRecord {
        steps: step_records,
        q_final: q,
        err_inf,
        err_2,
        markovian,
    })
}
