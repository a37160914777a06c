//! Certified bracketing of the joint spectral radius of a matrix family.
//!
//! For every product length `k` the classical three-member inequality pins
//! the JSR between `max_w rho(A_w)^{1/k}` and `max_w ||A_w||^{1/k}`; the
//! bracket below is the running best of both sides over all explored depths.
//! Levels are enumerated exactly while the product count fits the budget;
//! deeper levels continue with a pruned beam that can only improve the lower
//! bound, so the interval stays valid regardless of pruning.

use nalgebra::DMatrix;
use serde::Serialize;
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::switching::SwitchingFamily;

/// Norm driving the upper bracket.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum NormKind {
    /// Largest singular value; matches the Euclidean geometry of the
    /// product-defined Lyapunov construction.
    Spectral,
    /// Maximum absolute row sum; useful for row-sum cross-checks.
    Infinity,
}

fn matrix_norm(m: &DMatrix<f64>, kind: NormKind) -> f64 {
    match kind {
        NormKind::Spectral => m.singular_values().iter().cloned().fold(0.0, f64::max),
        NormKind::Infinity => (0..m.nrows())
            .map(|r| (0..m.ncols()).map(|c| m[(r, c)].abs()).sum::<f64>())
            .fold(0.0, f64::max),
    }
}

/// Spectral radius (largest eigenvalue modulus).
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// A certified JSR interval for a bare matrix family.
#[derive(Clone, Debug)]
pub struct JsrBracket {
    /// Best `rho(product)^{1/k}` found; a genuine lower bound on the JSR.
    pub lower: f64,
    /// Best `(max ||product||)^{1/k}` over exactly enumerated depths; a
    /// genuine upper bound on the JSR.
    pub upper: f64,
    /// Deepest product length explored (exact or pruned).
    pub depth: usize,
    /// Deepest exactly enumerated product length; `max_norm_by_depth` covers
    /// exactly these levels.
    pub exact_depth: usize,
    pub norm_used: NormKind,
    /// Word achieving the lower bound, as mode indices in application order.
    pub witness: Vec<usize>,
    /// `max_w ||A_w||` per exactly enumerated length, index 0 = length 1.
    pub max_norm_by_depth: Vec<f64>,
}

/// Lexicographically smallest rotation of a word; spectral radius is
/// invariant under cyclic permutation, so one representative per class is
/// enough for the lower bound.
fn canonical_rotation(word: &[u8]) -> Vec<u8> {
    let k = word.len();
    let mut best: Option<Vec<u8>> = None;
    for shift in 0..k {
        let rotated: Vec<u8> = (0..k).map(|i| word[(i + shift) % k]).collect();
        if best.as_ref().is_none_or(|b| rotated < *b) {
            best = Some(rotated);
        }
    }
    best.unwrap_or_default()
}

/// Bracket the JSR of `modes` by enumerating products up to `max_depth`.
///
/// `budget` caps the total number of matrix products formed. Within it every
/// level is enumerated exactly and contributes to both bracket sides; past
/// it, exploration continues on a norm-pruned beam that contributes lower
/// bound candidates only. Deterministic for fixed inputs.
pub fn jsr_bounds(
    modes: &[DMatrix<f64>],
    max_depth: usize,
    budget: usize,
    norm: NormKind,
) -> Result<JsrBracket> {
    if modes.is_empty() {
        return Err(Error::InvalidParameter("empty matrix family".into()));
    }
    if max_depth == 0 {
        return Err(Error::InvalidParameter("max_depth must be at least 1".into()));
    }
    if modes.len() > u8::MAX as usize {
        return Err(Error::Budget(format!(
            "families beyond {} modes are not supported",
            u8::MAX
        )));
    }
    if modes.len() > budget {
        return Err(Error::Budget(format!(
            "budget {budget} cannot hold the {} depth-1 products",
            modes.len()
        )));
    }
    let n = modes[0].nrows();
    for m in modes {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: m.nrows(),
                context: "jsr family member",
            });
        }
    }

    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    let mut witness: Vec<usize> = Vec::new();
    let mut max_norm_by_depth = Vec::new();
    let mut exact_depth = 0usize;
    let mut depth_reached = 0usize;

    // Current level: products and their words, in deterministic order.
    let mut products: Vec<DMatrix<f64>> = vec![DMatrix::identity(n, n)];
    let mut words: Vec<Vec<u8>> = vec![Vec::new()];
    let mut used: usize = 0;
    let mut exact = true;
    let beam_cap = (budget / (max_depth + 1)).clamp(64, 65_536);

    for depth in 1..=max_depth {
        let next_count = products.len().saturating_mul(modes.len());
        if exact && used + next_count > budget {
            exact = false;
        }

        let mut next_products = Vec::new();
        let mut next_words = Vec::new();
        for (prod, word) in products.iter().zip(words.iter()) {
            for (i, mode) in modes.iter().enumerate() {
                let candidate = mode * prod;
                let mut w = word.clone();
                w.push(i as u8);
                next_products.push(candidate);
                next_words.push(w);
            }
        }
        used += next_products.len();

        // Per-level norm statistics.
        let mut level_max_norm: f64 = 0.0;
        let mut norms = Vec::with_capacity(next_products.len());
        for prod in &next_products {
            let v = matrix_norm(prod, norm);
            norms.push(v);
            level_max_norm = level_max_norm.max(v);
        }

        if exact {
            exact_depth = depth;
            max_norm_by_depth.push(level_max_norm);
            let candidate_upper = level_max_norm.powf(1.0 / depth as f64);
            upper = upper.min(candidate_upper);
        }

        // Lower bound from spectral radii, one evaluation per cyclic class.
        let mut seen = HashSet::new();
        for (prod, word) in next_products.iter().zip(next_words.iter()) {
            if !seen.insert(canonical_rotation(word)) {
                continue;
            }
            let candidate = spectral_radius(prod).powf(1.0 / depth as f64);
            if candidate > lower {
                lower = candidate;
                witness = word.iter().map(|i| *i as usize).collect();
            }
        }
        depth_reached = depth;

        if !exact {
            // Keep only words that can still advance the lower bound;
            // deterministic order: by norm descending, word as tiebreak.
            let threshold = lower * 0.999;
            let mut keep: Vec<usize> = (0..next_products.len())
                .filter(|i| norms[*i].powf(1.0 / depth as f64) >= threshold)
                .collect();
            keep.sort_by(|a, b| {
                norms[*b]
                    .partial_cmp(&norms[*a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| next_words[*a].cmp(&next_words[*b]))
            });
            keep.truncate(beam_cap);
            keep.sort_unstable();
            products = keep.iter().map(|i| next_products[*i].clone()).collect();
            words = keep.iter().map(|i| next_words[*i].clone()).collect();
            if products.is_empty() {
                break;
            }
        } else {
            products = next_products;
            words = next_words;
        }
    }

    if !(lower <= upper + 1e-10) {
        return Err(Error::InvalidParameter(format!(
            "bracket inversion: lower {lower} > upper {upper}; numerical failure"
        )));
    }
    Ok(JsrBracket {
        lower,
        upper,
        depth: depth_reached,
        exact_depth,
        norm_used: norm,
        witness,
        max_norm_by_depth,
    })
}

/// JSR report for a direct switching family: the bracket plus the row-sum
/// comparison rate.
#[derive(Clone, Debug)]
pub struct JsrReport {
    pub lower: f64,
    pub upper: f64,
    pub depth: usize,
    pub exact_depth: usize,
    pub norm_used: NormKind,
    pub rho_row: f64,
    pub witness: Vec<usize>,
    pub max_norm_by_depth: Vec<f64>,
}

impl JsrReport {
    /// Serialize with the stable key set
    /// `{lower, upper, depth, rho_row, witness_word}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "lower": self.lower,
            "upper": self.upper,
            "depth": self.depth,
            "rho_row": self.rho_row,
            "witness_word": self.witness,
        })
    }
}

/// Row-sum rate `1 - alpha d_min (1 - gamma)`, re-asserting that it bounds
/// the infinity norm of every mode.
pub fn row_sum_rate(family: &SwitchingFamily) -> Result<f64> {
    let rate = family.row_sum_rate();
    for (i, mode) in family.modes().iter().enumerate() {
        let inf = matrix_norm(mode, NormKind::Infinity);
        if inf > rate + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "mode {i} infinity norm {inf} exceeds rho_row {rate}"
            )));
        }
    }
    Ok(rate)
}

/// Bracket the JSR of a switching family under the spectral norm.
pub fn jsr_report_for_family(
    family: &SwitchingFamily,
    max_depth: usize,
    budget: usize,
) -> Result<JsrReport> {
    let bracket = jsr_bounds(family.modes(), max_depth, budget, NormKind::Spectral)?;
    let rho_row = row_sum_rate(family)?;
    Ok(JsrReport {
        lower: bracket.lower,
        upper: bracket.upper,
        depth: bracket.depth,
        exact_depth: bracket.exact_depth,
        norm_used: bracket.norm_used,
        rho_row,
        witness: bracket.witness,
        max_norm_by_depth: bracket.max_norm_by_depth,
    })
}

/// Finite-length convex-hull check: products mixing a stochastic-policy mode
/// into the extreme family never exceed the extreme-family maximum norm at
/// equal length. Returns the largest positive violation observed.
pub fn convex_hull_jsr_check(
    family: &SwitchingFamily,
    sampled_policies: &[crate::policies::StochasticPolicy],
    word_len: usize,
    budget: usize,
) -> Result<f64> {
    let extremes = family.modes();
    let m = extremes.len();
    // Exact extreme maxima per length.
    let mut count = 1usize;
    for _ in 0..word_len {
        count = count.saturating_mul(m);
        if count > budget {
            return Err(Error::Budget(format!(
                "{m}^{word_len} extreme words exceed budget {budget}"
            )));
        }
    }
    let n = family.n_sa();
    let mut level: Vec<DMatrix<f64>> = vec![DMatrix::identity(n, n)];
    let mut extreme_max = Vec::with_capacity(word_len);
    for _ in 0..word_len {
        let mut next = Vec::with_capacity(level.len() * m);
        for prod in &level {
            for mode in extremes {
                next.push(mode * prod);
            }
        }
        extreme_max.push(
            next.iter()
                .map(|p| matrix_norm(p, NormKind::Spectral))
                .fold(0.0, f64::max),
        );
        level = next;
    }

    let mut worst: f64 = 0.0;
    for mu in sampled_policies {
        let mixed_mode = family.mode_for(mu)?;
        let alphabet: Vec<&DMatrix<f64>> =
            extremes.iter().chain(std::iter::once(&mixed_mode)).collect();
        let mut count = 1usize;
        for _ in 0..word_len {
            count = count.saturating_mul(alphabet.len());
            if count > budget {
                return Err(Error::Budget(format!(
                    "{}^{word_len} mixed words exceed budget {budget}",
                    alphabet.len()
                )));
            }
        }
        let mut level: Vec<DMatrix<f64>> = vec![DMatrix::identity(n, n)];
        for len in 1..=word_len {
            let mut next = Vec::with_capacity(level.len() * alphabet.len());
            for prod in &level {
                for mode in &alphabet {
                    next.push(*mode * prod);
                }
            }
            for p in &next {
                let v = matrix_norm(p, NormKind::Spectral);
                worst = worst.max(v - extreme_max[len - 1]);
            }
            level = next;
        }
    }
    Ok(worst)
}
