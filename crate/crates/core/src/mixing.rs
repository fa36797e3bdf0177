//! Row-stochastic / column-stochastic mixing pairs, their probability-weighted
//! expectations, Perron vectors, contraction radii, and the constant tables of
//! the convergence analysis.
//!
//! Weight assignment follows the receiver-pulls / sender-pushes rule: row `i`
//! of `A` is uniform over `i`'s in-neighborhood plus itself (so `A` is
//! row-stochastic), and column `i` of `B` is uniform over `i`'s
//! out-neighborhood plus itself (so `B` is column-stochastic).

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digraph::{Digraph, GraphMetrics};

#[derive(Debug, Error)]
pub enum MixingError {
    #[error("graph must be strongly connected")]
    NotStronglyConnected,
    #[error("Perron iteration did not converge: residual {residual:.3e} after {iterations} iterations")]
    PerronNotConverged { residual: f64, iterations: usize },
    #[error("profile sparsity does not match the mixing pair")]
    SparsityMismatch,
    #[error("invalid profile: {0}")]
    BadProfile(String),
}

/// The mixing pair: `A` row-stochastic (model pull), `B` column-stochastic
/// (tracker push). Sparsity is compatible with the graph plus self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingPair {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
}

/// Per-client computation probabilities `p` and per-link communication
/// probabilities `p̂`. The diagonal of `p̂` is pinned to 1 (self-loops are not
/// random events); off-graph entries are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SporadicityProfile {
    pub p: Array1<f64>,
    pub p_hat: Array2<f64>,
}

impl SporadicityProfile {
    /// Validates positivity on the diagonal, the edge set, and `p`.
    pub fn new(g: &Digraph, p: Array1<f64>, p_hat: Array2<f64>) -> Result<Self, MixingError> {
        let m = g.m();
        if p.len() != m || p_hat.nrows() != m || p_hat.ncols() != m {
            return Err(MixingError::BadProfile("dimension mismatch".into()));
        }
        for i in 0..m {
            if !(p[i] > 0.0 && p[i] <= 1.0) {
                return Err(MixingError::BadProfile(format!("p[{i}] = {} not in (0,1]", p[i])));
            }
            if (p_hat[[i, i]] - 1.0).abs() > 1e-12 {
                return Err(MixingError::BadProfile(format!("p_hat[{i},{i}] must be 1")));
            }
            for j in 0..m {
                if i == j {
                    continue;
                }
                let v = p_hat[[i, j]];
                if g.has_edge(i, j) {
                    if !(v > 0.0 && v <= 1.0) {
                        return Err(MixingError::BadProfile(format!(
                            "p_hat[{i},{j}] = {v} not in (0,1]"
                        )));
                    }
                } else if v != 0.0 {
                    return Err(MixingError::BadProfile(format!(
                        "p_hat[{i},{j}] set on a non-edge"
                    )));
                }
            }
        }
        Ok(SporadicityProfile { p, p_hat })
    }

    /// Fully reliable profile: `p ≡ 1`, `p̂ ≡ 1` on the edge set.
    pub fn ones(g: &Digraph) -> Self {
        let m = g.m();
        let mut p_hat = Array2::zeros((m, m));
        for i in 0..m {
            p_hat[[i, i]] = 1.0;
        }
        for (i, j) in g.edges() {
            p_hat[[i, j]] = 1.0;
        }
        SporadicityProfile { p: Array1::from_elem(m, 1.0), p_hat }
    }

    pub fn m(&self) -> usize {
        self.p.len()
    }

    /// Replace all computation probabilities.
    pub fn with_p(mut self, p: Array1<f64>) -> Self {
        assert_eq!(p.len(), self.p.len());
        self.p = p;
        self
    }

    /// Replace all link probabilities on the current sparsity with one value.
    pub fn with_uniform_p_hat(mut self, q: f64) -> Self {
        assert!(q > 0.0 && q <= 1.0);
        let m = self.m();
        for i in 0..m {
            for j in 0..m {
                if i != j && self.p_hat[[i, j]] > 0.0 {
                    self.p_hat[[i, j]] = q;
                }
            }
        }
        self
    }

    /// Smallest link probability over the edge set (1 if there are no edges).
    pub fn min_p_hat(&self) -> f64 {
        let m = self.m();
        let mut out = 1.0f64;
        for i in 0..m {
            for j in 0..m {
                if i != j && self.p_hat[[i, j]] > 0.0 {
                    out = out.min(self.p_hat[[i, j]]);
                }
            }
        }
        out
    }

    pub fn to_json_string(&self) -> String {
        #[derive(Serialize)]
        struct ProfileJson<'a> {
            p: &'a [f64],
            p_hat: Vec<(usize, usize, f64)>,
        }
        let m = self.m();
        let mut triples = Vec::new();
        for i in 0..m {
            for j in 0..m {
                if i != j && self.p_hat[[i, j]] > 0.0 {
                    triples.push((i, j, self.p_hat[[i, j]]));
                }
            }
        }
        serde_json::to_string_pretty(&ProfileJson {
            p: self.p.as_slice().unwrap(),
            p_hat: triples,
        })
        .expect("profile serialization cannot fail")
    }

    pub fn from_json_str(g: &Digraph, text: &str) -> Result<Self, MixingError> {
        #[derive(Deserialize)]
        struct ProfileJson {
            p: Vec<f64>,
            p_hat: Vec<(usize, usize, f64)>,
        }
        let parsed: ProfileJson = serde_json::from_str(text)
            .map_err(|e| MixingError::BadProfile(format!("json: {e}")))?;
        let m = g.m();
        if parsed.p.len() != m {
            return Err(MixingError::BadProfile(format!(
                "p has {} entries, graph has {m} nodes",
                parsed.p.len()
            )));
        }
        let mut p_hat = Array2::zeros((m, m));
        for i in 0..m {
            p_hat[[i, i]] = 1.0;
        }
        for (i, j, v) in parsed.p_hat {
            if i >= m || j >= m || i == j || !g.has_edge(i, j) {
                return Err(MixingError::BadProfile(format!("({i},{j}) is not an edge")));
            }
            p_hat[[i, j]] = v;
        }
        for (i, j) in g.edges() {
            if p_hat[[i, j]] == 0.0 {
                return Err(MixingError::BadProfile(format!("edge ({i},{j}) missing from p_hat")));
            }
        }
        SporadicityProfile::new(g, Array1::from_vec(parsed.p), p_hat)
    }
}

/// Uniform in-neighbor weights for `A`, uniform out-neighbor weights for `B`.
pub fn build_mixing(g: &Digraph) -> Result<MixingPair, MixingError> {
    if !crate::digraph::is_strongly_connected(g) {
        return Err(MixingError::NotStronglyConnected);
    }
    let m = g.m();
    let mut a = Array2::zeros((m, m));
    let mut b = Array2::zeros((m, m));
    for i in 0..m {
        let in_n = g.in_neighbors(i);
        let w = 1.0 / (1.0 + in_n.len() as f64);
        a[[i, i]] = w;
        for j in in_n {
            a[[i, j]] = w;
        }
        let out_n = g.out_neighbors(i);
        let w = 1.0 / (1.0 + out_n.len() as f64);
        b[[i, i]] = w;
        for j in out_n {
            b[[j, i]] = w;
        }
    }
    Ok(MixingPair { a, b })
}

/// Expected mixing matrices `Â = E[Â⁽ᵏ⁾]`, `B̂ = E[B̂⁽ᵏ⁾]`:
/// `â_ij = a_ij p̂_ij` off the diagonal with the diagonal absorbing the
/// residual mass, and likewise for `B̂` column-wise.
pub fn expected_matrices(
    pair: &MixingPair,
    profile: &SporadicityProfile,
) -> (Array2<f64>, Array2<f64>) {
    let m = pair.a.nrows();
    assert_eq!(profile.m(), m, "profile sparsity must match the pair");
    let mut a_hat = Array2::zeros((m, m));
    let mut b_hat = Array2::zeros((m, m));
    for i in 0..m {
        let mut row_mass = 0.0;
        let mut col_mass = 0.0;
        for j in 0..m {
            if j == i {
                continue;
            }
            a_hat[[i, j]] = pair.a[[i, j]] * profile.p_hat[[i, j]];
            row_mass += a_hat[[i, j]];
            b_hat[[j, i]] = pair.b[[j, i]] * profile.p_hat[[j, i]];
            col_mass += b_hat[[j, i]];
        }
        a_hat[[i, i]] = 1.0 - row_mass;
        b_hat[[i, i]] = 1.0 - col_mass;
        assert!(a_hat[[i, i]] >= -1e-12 && b_hat[[i, i]] >= -1e-12);
    }
    (a_hat, b_hat)
}

pub const PERRON_TOL: f64 = 1e-12;

fn perron_iteration_cap(m: usize) -> usize {
    (100.0 * m as f64 * (m as f64).max(2.0).ln()).ceil() as usize + 1000
}

fn l1_normalize(v: &mut Array1<f64>) {
    let s: f64 = v.sum();
    *v /= s;
}

fn left_perron(mat: &Array2<f64>) -> Result<Array1<f64>, MixingError> {
    // power iteration on the transpose with L1 renormalization
    let m = mat.nrows();
    let mut v = Array1::from_elem(m, 1.0 / m as f64);
    let cap = perron_iteration_cap(m);
    let mut residual = f64::INFINITY;
    for it in 0..cap {
        let mut next = mat.t().dot(&v);
        l1_normalize(&mut next);
        residual = next
            .iter()
            .zip(mat.t().dot(&next).iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        v = next;
        if residual <= PERRON_TOL {
            return Ok(v);
        }
        let _ = it;
    }
    Err(MixingError::PerronNotConverged { residual, iterations: cap })
}

/// Stochastic Perron vectors: left eigenvector `φ̂` of `Â` and right
/// eigenvector `π̂` of `B̂` at eigenvalue 1, entries positive, sums 1.
pub fn perron_vectors(
    a_hat: &Array2<f64>,
    b_hat: &Array2<f64>,
) -> Result<(Array1<f64>, Array1<f64>), MixingError> {
    let phi = left_perron(a_hat)?;
    // right eigenvector of B̂ = left eigenvector of B̂ᵀ
    let pi = left_perron(&b_hat.t().to_owned())?;
    Ok((phi, pi))
}

fn min_positive_weighted(w: &Array2<f64>, p_hat: &Array2<f64>) -> f64 {
    // minimum of w_ij * p̂_ij over strictly positive w entries (p̂_ii = 1)
    let m = w.nrows();
    let mut out = f64::INFINITY;
    for i in 0..m {
        for j in 0..m {
            if w[[i, j]] > 0.0 {
                let p = if i == j { 1.0 } else { p_hat[[i, j]] };
                out = out.min(w[[i, j]] * p);
            }
        }
    }
    out
}

fn positive_extrema(w: &Array2<f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &v in w.iter() {
        if v > 0.0 {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

fn is_uniform_complete(w: &Array2<f64>) -> bool {
    let m = w.nrows();
    let u = 1.0 / m as f64;
    w.iter().all(|&v| (v - u).abs() <= 1e-12)
}

/// Conservative contraction radii `ρ̂_A`, `ρ̂_B` of the expected mixing pair.
///
/// General digraph: `ρ̂_A = 1 − min(φ̂) min(a⁺p̂)² / (max(φ̂)² D K)` and the
/// analogous `π̂` form for `ρ̂_B`. The uniform complete graph (all weights
/// `1/m`) uses its exact simplification `ρ̂ = 1 − min(p̂)²`, which the general
/// conservative form does not reduce to.
pub fn contraction_radii(
    pair: &MixingPair,
    profile: &SporadicityProfile,
    phi: &Array1<f64>,
    pi: &Array1<f64>,
    metrics: &GraphMetrics,
) -> (f64, f64) {
    let m = pair.a.nrows();
    if m == 1 {
        return (0.0, 0.0);
    }
    let dk = (metrics.diameter * metrics.edge_utility) as f64;
    let rho_a = if is_uniform_complete(&pair.a) {
        1.0 - profile.min_p_hat().powi(2)
    } else {
        let min_ap = min_positive_weighted(&pair.a, &profile.p_hat);
        let (phi_min, phi_max) = extrema(phi);
        1.0 - phi_min * min_ap.powi(2) / (phi_max.powi(2) * dk)
    };
    let rho_b = if is_uniform_complete(&pair.b) {
        1.0 - profile.min_p_hat().powi(2)
    } else {
        let min_bp = min_positive_weighted(&pair.b, &profile.p_hat);
        let (pi_min, pi_max) = extrema(pi);
        1.0 - pi_min.powi(2) * min_bp.powi(2) / (pi_max.powi(3) * dk)
    };
    debug_assert!((0.0..1.0).contains(&rho_a), "rho_A = {rho_a}");
    debug_assert!((0.0..1.0).contains(&rho_b), "rho_B = {rho_b}");
    (rho_a.max(0.0), rho_b.max(0.0))
}

fn extrema(v: &Array1<f64>) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn max_offdiag_weighted_var(w: &Array2<f64>, p_hat: &Array2<f64>) -> f64 {
    // max over off-diagonal edges of w_ij² p̂_ij (1 − p̂_ij)
    let m = w.nrows();
    let mut out = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            if i != j && w[[i, j]] > 0.0 {
                let p = p_hat[[i, j]];
                out = out.max(w[[i, j]] * w[[i, j]] * p * (1.0 - p));
            }
        }
    }
    out
}

/// Sporadic deviation radii `ρ̂₀,A = 4(m−1)(max φ̂ / min φ̂) max(a² p̂(1−p̂))`
/// and `ρ̂₀,B = 2(m−1)(max π̂ / min π̂) max(b² p̂(1−p̂))`, maxima over edges.
pub fn sporadic_deviation_radii(
    pair: &MixingPair,
    profile: &SporadicityProfile,
    phi: &Array1<f64>,
    pi: &Array1<f64>,
) -> (f64, f64) {
    let m = pair.a.nrows() as f64;
    let (phi_min, phi_max) = extrema(phi);
    let (pi_min, pi_max) = extrema(pi);
    let rho0_a =
        4.0 * (m - 1.0) * (phi_max / phi_min) * max_offdiag_weighted_var(&pair.a, &profile.p_hat);
    let rho0_b =
        2.0 * (m - 1.0) * (pi_max / pi_min) * max_offdiag_weighted_var(&pair.b, &profile.p_hat);
    (rho0_a, rho0_b)
}

/// Unique root in `(0, 1)` of `f(x) = x^power + τ x − τ` by bisection.
/// `f(0) = −τ < 0`, `f(1) = 1 > 0` and `f` increases on `(0, ∞)`.
///
/// Large τ pushes the root within one ulp of 1, where `τx − τ` cancels
/// catastrophically, so the bisection runs on the complement `w = 1 − x`:
/// `g(w) = (1−w)^power − τw` is decreasing with `g(0) = 1`, `g(1) = −τ`.
pub fn root_in_unit_interval(power: i32, tau: f64) -> f64 {
    assert!(tau > 0.0, "tau must be positive");
    let g = |w: f64| (1.0 - w).powi(power) - tau * w;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    1.0 - 0.5 * (lo + hi)
}

/// Communication-probability thresholds `r̂_A`, `r̂_B`: the roots of
/// `x^{2(m+1)} + τ̂_A x − τ̂_A` and `x^{3m+2} + τ̂_B x − τ̂_B`.
/// Also returns `(τ̂_A, τ̂_B)`. For `m = 1` there are no links to constrain
/// and all four values are 0.
pub fn min_comm_probability(pair: &MixingPair, metrics: &GraphMetrics) -> (f64, f64, f64, f64) {
    let m = pair.a.nrows();
    if m == 1 {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let mf = m as f64;
    let dk = (metrics.diameter * metrics.edge_utility) as f64;
    let (a_min, a_max) = positive_extrema(&pair.a);
    let (b_min, b_max) = positive_extrema(&pair.b);
    let tau_a = 16.0 * mf * mf * (mf - 1.0) * dk * a_max.powi(2) / a_min.powi(2 * (m as i32 + 1));
    let tau_b = 4.0 * mf.powi(3) * (mf - 1.0) * dk * b_max.powi(2) / b_min.powi(3 * m as i32 + 2);
    let r_a = root_in_unit_interval(2 * (m as i32 + 1), tau_a);
    let r_b = root_in_unit_interval(3 * m as i32 + 2, tau_b);
    (r_a, r_b, tau_a, tau_b)
}

/// Expected-mixing bundle: the expectations, their Perron vectors, and the
/// four radii, computed once per (pair, profile).
#[derive(Debug, Clone)]
pub struct ExpectedMixing {
    pub a_hat: Array2<f64>,
    pub b_hat: Array2<f64>,
    pub phi: Array1<f64>,
    pub pi: Array1<f64>,
    pub rho_a: f64,
    pub rho_b: f64,
    pub rho0_a: f64,
    pub rho0_b: f64,
}

impl ExpectedMixing {
    pub fn build(
        pair: &MixingPair,
        profile: &SporadicityProfile,
        metrics: &GraphMetrics,
    ) -> Result<Self, MixingError> {
        let (a_hat, b_hat) = expected_matrices(pair, profile);
        let (phi, pi) = perron_vectors(&a_hat, &b_hat)?;
        let (rho_a, rho_b) = contraction_radii(pair, profile, &phi, &pi, metrics);
        let (rho0_a, rho0_b) = sporadic_deviation_radii(pair, profile, &phi, &pi);
        Ok(ExpectedMixing { a_hat, b_hat, phi, pi, rho_a, rho_b, rho0_a, rho0_b })
    }

    pub fn m(&self) -> usize {
        self.phi.len()
    }
}

/// Smoothness, gradient-variance, diversity, dataset and batch parameters of
/// the learning problem (one entry per client).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub l: Vec<f64>,
    pub l_bar: f64,
    pub sigma0: Vec<f64>,
    pub sigma1: Vec<f64>,
    pub delta0: Vec<f64>,
    pub delta1: Vec<f64>,
    pub d: Vec<usize>,
    pub b: Vec<usize>,
}

impl ProblemConstants {
    pub fn m(&self) -> usize {
        self.l.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        let m = self.m();
        for v in [&self.sigma0, &self.sigma1, &self.delta0, &self.delta1] {
            if v.len() != m {
                return Err("constant vector length mismatch".into());
            }
            if v.iter().any(|x| *x < 0.0 || !x.is_finite()) {
                return Err("constants must be nonnegative and finite".into());
            }
        }
        if self.d.len() != m || self.b.len() != m {
            return Err("dataset/batch vector length mismatch".into());
        }
        for i in 0..m {
            if self.b[i] < 1 || self.b[i] > self.d[i] {
                return Err(format!("batch size B[{i}] must satisfy 1 <= B <= D"));
            }
        }
        Ok(())
    }

    /// Batch replacement helper (theory evaluates a specific batch plan).
    pub fn with_batches(mut self, b: Vec<usize>) -> Self {
        assert_eq!(b.len(), self.m());
        self.b = b;
        self
    }

    /// Finite-population variance factor `(1 − B_i/D_i)/B_i`.
    pub fn variance_factor(&self, i: usize) -> f64 {
        let d = self.d[i] as f64;
        let b = self.b[i] as f64;
        (1.0 - b / d) / b
    }
}

/// Element-wise client average of a product of per-client values.
pub(crate) fn overline(terms: impl Iterator<Item = f64>, m: usize) -> f64 {
    terms.sum::<f64>() / m as f64
}

/// The Table-2 constant sheet plus the probability thresholds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constants {
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub kappa4: f64,
    pub kappa5: f64,
    pub kappa6: f64,
    pub kappa7: f64,
    pub kappa8: f64,
    pub kappa9: f64,
    pub kappa10: f64,
    #[serde(rename = "rho_A")]
    pub rho_a: f64,
    #[serde(rename = "rho_B")]
    pub rho_b: f64,
    #[serde(rename = "rho0_A")]
    pub rho0_a: f64,
    #[serde(rename = "rho0_B")]
    pub rho0_b: f64,
    #[serde(rename = "rho_tilde_A")]
    pub rho_tilde_a: f64,
    #[serde(rename = "rho_tilde_B")]
    pub rho_tilde_b: f64,
    #[serde(rename = "tau_A")]
    pub tau_a: f64,
    #[serde(rename = "tau_B")]
    pub tau_b: f64,
    #[serde(rename = "r_A")]
    pub r_a: f64,
    #[serde(rename = "r_B")]
    pub r_b: f64,
}

impl Constants {
    /// Both effective radii strictly inside the unit ball, i.e. the κ₆/κ₇
    /// denominators are positive and the transition system is meaningful.
    pub fn feasible(&self) -> bool {
        self.rho_tilde_a < 1.0 && self.rho_tilde_b < 1.0
    }

    /// `r̂'_B = ½(1 + √max(0, 1 − τ̂'_B))` with
    /// `τ̂'_B = 2m min(π̂)² / (9(m−1) κ₂ Γ₁ max(b⁺)² max(π̂))`.
    /// The per-edge constraint binds at the largest off-diagonal weight of
    /// `B`. Returns 0 for `m = 1` (no links).
    pub fn r_prime_b(&self, pair: &MixingPair, pi: &Array1<f64>, gamma1: f64) -> f64 {
        let m = pair.b.nrows();
        if m == 1 {
            return 0.0;
        }
        let mf = m as f64;
        let (pi_min, pi_max) = extrema(pi);
        let mut b_max_offdiag = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    b_max_offdiag = b_max_offdiag.max(pair.b[[i, j]]);
                }
            }
        }
        let tau_prime = 2.0 * mf * pi_min.powi(2)
            / (9.0 * (mf - 1.0) * self.kappa2 * gamma1 * b_max_offdiag.powi(2) * pi_max);
        0.5 * (1.0 + (1.0 - tau_prime).max(0.0).sqrt())
    }
}

/// Evaluate the full constant sheet from problem constants, expected mixing
/// data, the profile, the pair and the graph metrics. Pure: identical inputs
/// give bit-identical outputs.
pub fn constant_tables(
    pc: &ProblemConstants,
    em: &ExpectedMixing,
    profile: &SporadicityProfile,
    pair: &MixingPair,
    metrics: &GraphMetrics,
) -> Constants {
    let m = em.m();
    let mf = m as f64;
    let (_, phi_max) = extrema(&em.phi);
    let (pi_min, pi_max) = extrema(&em.pi);
    let s = |i: usize| pc.variance_factor(i);
    let p = |i: usize| profile.p[i];

    let kappa1 = (0..m)
        .map(|i| {
            p(i) / em.phi[i]
                * (2.0 * s(i) * pc.sigma1[i].powi(2) * pc.l_bar.powi(2) + 3.0 * pc.l[i].powi(2))
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let kappa2 = 2.0 * overline((0..m).map(|i| pc.sigma1[i].powi(2) * p(i) * s(i)), m)
        + 3.0 * overline((0..m).map(|i| (1.0 - p(i)) * pc.delta1[i].powi(2)), m)
        + 3.0;
    // column-wise average over all m rows; zeros off the edge set contribute 0
    let col_var_avg = |j: usize| {
        overline(
            (0..m).map(|l| {
                let b = pair.b[[l, j]];
                let ph = if l == j { 1.0 } else { profile.p_hat[[l, j]] };
                b * b * ph * (1.0 - ph)
            }),
            m,
        )
    };
    let kappa3 = phi_max
        * (pi_max.powi(2) / pi_min
            + 2.0 * mf * (0..m).map(|j| em.pi[j] * col_var_avg(j)).fold(f64::NEG_INFINITY, f64::max));
    let kappa4 = (0..m)
        .map(|i| {
            p(i) / em.phi[i]
                * (2.0 * s(i) * pc.sigma1[i].powi(2) * pc.l_bar.powi(2) + 5.0 * pc.l[i].powi(2))
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let kappa5 = 2.0
        * overline(
            (0..m).map(|i| {
                p(i) * (2.0 * pc.sigma1[i].powi(2) * s(i)
                    + 5.0 * (1.0 - p(i)) * pc.delta1[i].powi(2))
            }),
            m,
        )
        * pc.l_bar.powi(2)
        + 5.0 * overline((0..m).map(|i| p(i).powi(2) * pc.l[i].powi(2)), m);
    let kappa8 = (0..m)
        .map(|i| {
            p(i) * (2.0 * s(i) * pc.sigma1[i].powi(2) * pc.l_bar.powi(2) + 3.0 * pc.l[i].powi(2))
        })
        .fold(f64::NEG_INFINITY, f64::max);

    let rho_tilde_a = em.rho_a + 2.0 * em.rho0_a;
    let rho_tilde_b = em.rho_b + em.rho0_b;
    let kappa6 = (1.0 + em.rho_a) / (1.0 - rho_tilde_a);
    let kappa7 = 2.0 * (mf + 1.0) * (1.0 + rho_tilde_b) / (1.0 - rho_tilde_b);
    // rho_tilde_b = 0 only in the fully reliable degenerate case; the
    // corresponding loss-descent channel vanishes and kappa9 is unbounded.
    let kappa9 = if rho_tilde_b > 0.0 {
        (mf * (1.0 + 3.0 * em.rho0_b) / (3.0 * kappa7 * rho_tilde_b) + 1.0) * kappa4 * kappa6
            + kappa5 / mf
    } else {
        f64::INFINITY
    };
    let kappa10 = 8.0 / (3.0 * kappa2 * kappa3) * (0..m)
        .map(|i| em.phi[i] * em.pi[i])
        .fold(f64::NEG_INFINITY, f64::max)
        / phi_max;

    let (r_a, r_b, tau_a, tau_b) = min_comm_probability(pair, metrics);

    Constants {
        kappa1,
        kappa2,
        kappa3,
        kappa4,
        kappa5,
        kappa6,
        kappa7,
        kappa8,
        kappa9,
        kappa10,
        rho_a: em.rho_a,
        rho_b: em.rho_b,
        rho0_a: em.rho0_a,
        rho0_b: em.rho0_b,
        rho_tilde_a,
        rho_tilde_b,
        tau_a,
        tau_b,
        r_a,
        r_b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digraph;

    fn three_cycle() -> Digraph {
        // transmissions 0→1→2→0 stored as (receiver, sender)
        Digraph::from_edges(3, [(1, 0), (2, 1), (0, 2)])
    }

    fn check_stochastic(pair_a: &Array2<f64>, pair_b: &Array2<f64>, tol: f64) {
        let m = pair_a.nrows();
        for i in 0..m {
            let row: f64 = (0..m).map(|j| pair_a[[i, j]]).sum();
            assert!((row - 1.0).abs() <= tol, "row {i} sums to {row}");
            let col: f64 = (0..m).map(|j| pair_b[[j, i]]).sum();
            assert!((col - 1.0).abs() <= tol, "col {i} sums to {col}");
        }
    }

    #[test]
    fn complete_graph_weights_are_uniform() {
        let g = Digraph::complete(3);
        let pair = build_mixing(&g).unwrap();
        for v in pair.a.iter().chain(pair.b.iter()) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_node_weights() {
        let g = Digraph::from_edges(1, []);
        let pair = build_mixing(&g).unwrap();
        assert_eq!(pair.a[[0, 0]], 1.0);
        assert_eq!(pair.b[[0, 0]], 1.0);
    }

    #[test]
    fn three_cycle_weights_are_stochastic() {
        let g = three_cycle();
        let pair = build_mixing(&g).unwrap();
        check_stochastic(&pair.a, &pair.b, 1e-15);
        // row 1 of A: 1/2 at node 1 and its single in-neighbor 0
        assert_eq!(pair.a[[1, 1]], 0.5);
        assert_eq!(pair.a[[1, 0]], 0.5);
        // column 0 of B: 1/2 at node 0 and its single out-neighbor 1
        assert_eq!(pair.b[[0, 0]], 0.5);
        assert_eq!(pair.b[[1, 0]], 0.5);
    }

    #[test]
    fn expected_matrices_identity_when_always_on() {
        let g = digraph::generate_rgg(6, 0.7, 11).unwrap();
        let pair = build_mixing(&g).unwrap();
        let profile = SporadicityProfile::ones(&g);
        let (a_hat, b_hat) = expected_matrices(&pair, &profile);
        assert!(a_hat.iter().zip(pair.a.iter()).all(|(x, y)| (x - y).abs() < 1e-15));
        assert!(b_hat.iter().zip(pair.b.iter()).all(|(x, y)| (x - y).abs() < 1e-15));
    }

    #[test]
    fn expected_matrices_complete_uniform_q() {
        let m = 5;
        let q = 0.3;
        let g = Digraph::complete(m);
        let pair = build_mixing(&g).unwrap();
        let profile = SporadicityProfile::ones(&g).with_uniform_p_hat(q);
        let (a_hat, _) = expected_matrices(&pair, &profile);
        let mf = m as f64;
        for i in 0..m {
            for j in 0..m {
                let expected =
                    if i == j { 1.0 - (mf - 1.0) * q / mf } else { q / mf };
                assert!((a_hat[[i, j]] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn expected_matrices_stay_stochastic_under_heterogeneous_profile() {
        let g = digraph::generate_rgg(5, 0.8, 2).unwrap();
        let pair = build_mixing(&g).unwrap();
        let profile = heterogeneous_profile(&g, 21);
        let (a_hat, b_hat) = expected_matrices(&pair, &profile);
        check_stochastic(&a_hat, &b_hat, 1e-14);
    }

    fn heterogeneous_profile(g: &Digraph, seed: u64) -> SporadicityProfile {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = g.m();
        let p = Array1::from_vec((0..m).map(|_| rng.random_range(0.2..1.0)).collect());
        let mut p_hat = Array2::zeros((m, m));
        for i in 0..m {
            p_hat[[i, i]] = 1.0;
        }
        for (i, j) in g.edges() {
            p_hat[[i, j]] = rng.random_range(0.2..1.0);
        }
        SporadicityProfile::new(g, p, p_hat).unwrap()
    }

    /// Dense oracle: φ solves the bordered system (Âᵀ − I) with the last row
    /// replaced by the normalization Σφ = 1. Direct elimination, no
    /// iteration — an independent route to the same eigenvector.
    fn perron_oracle_left(mat: &Array2<f64>) -> Array1<f64> {
        let m = mat.nrows();
        let mut sys = mat.t().to_owned();
        for i in 0..m {
            sys[[i, i]] -= 1.0;
        }
        for j in 0..m {
            sys[[m - 1, j]] = 1.0;
        }
        let mut rhs = Array1::zeros(m);
        rhs[m - 1] = 1.0;
        crate::linalg::solve_dense(&sys, &rhs).expect("simple eigenvalue makes this nonsingular")
    }

    #[test]
    fn perron_uniform_for_doubly_stochastic() {
        let g = Digraph::complete(6);
        let pair = build_mixing(&g).unwrap();
        let profile = SporadicityProfile::ones(&g).with_uniform_p_hat(0.7);
        let (a_hat, b_hat) = expected_matrices(&pair, &profile);
        let (phi, pi) = perron_vectors(&a_hat, &b_hat).unwrap();
        for v in phi.iter().chain(pi.iter()) {
            assert!((v - 1.0 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn perron_single_node() {
        let g = Digraph::from_edges(1, []);
        let pair = build_mixing(&g).unwrap();
        let profile = SporadicityProfile::ones(&g);
        let (a_hat, b_hat) = expected_matrices(&pair, &profile);
        let (phi, pi) = perron_vectors(&a_hat, &b_hat).unwrap();
        assert_eq!(phi[0], 1.0);
        assert_eq!(pi[0], 1.0);
    }

    #[test]
    fn perron_matches_dense_oracle_on_asymmetric_graph() {
        let g = Digraph::from_edges(3, [(1, 0), (2, 1), (0, 2), (0, 1)]);
        assert!(digraph::is_strongly_connected(&g));
        let pair = build_mixing(&g).unwrap();
        let profile = heterogeneous_profile(&g, 5);
        let (a_hat, b_hat) = expected_matrices(&pair, &profile);
        let (phi, pi) = perron_vectors(&a_hat, &b_hat).unwrap();
        let phi_oracle = perron_oracle_left(&a_hat);
        let pi_oracle = perron_oracle_left(&b_hat.t().to_owned());
        for i in 0..3 {
            assert!((phi[i] - phi_oracle[i]).abs() < 1e-9);
            assert!((pi[i] - pi_oracle[i]).abs() < 1e-9);
        }
        // Perron residuals and normalization
        let res_phi =
            (phi.dot(&a_hat) - &phi).iter().map(|v| v.abs()).fold(0.0, f64::max);
        let res_pi =
            (b_hat.dot(&pi) - &pi).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(res_phi <= 1e-10 && res_pi <= 1e-10);
        assert!((phi.sum() - 1.0).abs() < 1e-12 && (pi.sum() - 1.0).abs() < 1e-12);
        assert!(phi.iter().all(|v| *v > 0.0) && pi.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn closed_form_radii_on_complete_graph() {
        let g = Digraph::complete(4);
        let pair = build_mixing(&g).unwrap();
        let gm = digraph::metrics(&g).unwrap();

        let ones = SporadicityProfile::ones(&g);
        let em = ExpectedMixing::build(&pair, &ones, &gm).unwrap();
        assert_eq!(em.rho_a, 0.0);
        assert_eq!(em.rho_b, 0.0);

        let q = 0.6;
        let profile = ones.with_uniform_p_hat(q);
        let em = ExpectedMixing::build(&pair, &profile, &gm).unwrap();
        assert_eq!(em.rho_a, 1.0 - q * q);
        assert_eq!(em.rho_b, 1.0 - q * q);
    }

    #[test]
    fn general_radii_match_scalar_reevaluation() {
        let g = three_cycle();
        let pair = build_mixing(&g).unwrap();
        let gm = digraph::metrics(&g).unwrap();
        let profile = heterogeneous_profile(&g, 13);
        let em = ExpectedMixing::build(&pair, &profile, &gm).unwrap();

        // scalar re-evaluation from raw inputs
        let dk = (gm.diameter * gm.edge_utility) as f64;
        let mut min_ap = f64::INFINITY;
        let mut min_bp = f64::INFINITY;
        for i in 0..3 {
            for j in 0..3 {
                let ph = if i == j { 1.0 } else { profile.p_hat[[i, j]] };
                if pair.a[[i, j]] > 0.0 {
                    min_ap = min_ap.min(pair.a[[i, j]] * ph);
                }
                if pair.b[[i, j]] > 0.0 {
                    min_bp = min_bp.min(pair.b[[i, j]] * ph);
                }
            }
        }
        let (phi_min, phi_max) = extrema(&em.phi);
        let (pi_min, pi_max) = extrema(&em.pi);
        let rho_a = 1.0 - phi_min * min_ap * min_ap / (phi_max * phi_max * dk);
        let rho_b = 1.0 - pi_min * pi_min * min_bp * min_bp / (pi_max.powi(3) * dk);
        assert!((em.rho_a - rho_a).abs() < 1e-15);
        assert!((em.rho_b - rho_b).abs() < 1e-15);
        assert!((0.0..1.0).contains(&em.rho_a) && (0.0..1.0).contains(&em.rho_b));
    }

    #[test]
    fn deviation_radii_vanish_when_links_are_reliable() {
        let g = digraph::generate_rgg(5, 0.8, 4).unwrap();
        let pair = build_mixing(&g).unwrap();
        let gm = digraph::metrics(&g).unwrap();
        let em = ExpectedMixing::build(&pair, &SporadicityProfile::ones(&g), &gm).unwrap();
        assert_eq!(em.rho0_a, 0.0);
        assert_eq!(em.rho0_b, 0.0);
    }

    #[test]
    fn deviation_radii_complete_graph_half_probability() {
        let m = 4;
        let g = Digraph::complete(m);
        let pair = build_mixing(&g).unwrap();
        let gm = digraph::metrics(&g).unwrap();
        let profile = SporadicityProfile::ones(&g).with_uniform_p_hat(0.5);
        let em = ExpectedMixing::build(&pair, &profile, &gm).unwrap();
        let mf = m as f64;
        // 4(m−1)·(1/m²)·0.25 with φ̂ ratio 1
        let expected = (mf - 1.0) / (mf * mf);
        assert!((em.rho0_a - expected).abs() < 1e-12);
        assert!((em.rho0_b - expected / 2.0).abs() < 1e-12);
    }

    #[test]
    fn deviation_radii_match_scalar_oracle() {
        let g = digraph::generate_rgg(5, 0.8, 8).unwrap();
        let pair = build_mixing(&g).unwrap();
        let gm = digraph::metrics(&g).unwrap();
        let profile = heterogeneous_profile(&g, 30);
        let em = ExpectedMixing::build(&pair, &profile, &gm).unwrap();
        let m = 5;
        let mut max_a = 0.0f64;
        let mut max_b = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                let ph = profile.p_hat[[i, j]];
                max_a = max_a.max(pair.a[[i, j]].powi(2) * ph * (1.0 - ph));
                max_b = max_b.max(pair.b[[i, j]].powi(2) * ph * (1.0 - ph));
            }
        }
        let (phi_min, phi_max) = extrema(&em.phi);
        let (pi_min, pi_max) = extrema(&em.pi);
        assert!((em.rho0_a - 4.0 * 4.0 * phi_max / phi_min * max_a).abs() < 1e-14);
        assert!((em.rho0_b - 2.0 * 4.0 * pi_max / pi_min * max_b).abs() < 1e-14);
    }

    #[test]
    fn comm_probability_roots_change_sign_at_the_root() {
        // τ̂ is astronomically large for RGG weights, pinning the root within
        // a few ulps of 1; the bracket test is the meaningful oracle there.
        let g = digraph::generate_rgg(4, 0.9, 6).unwrap();
        let pair = build_mixing(&g).unwrap();
        let gm = digraph::metrics(&g).unwrap();
        let (r_a, r_b, tau_a, tau_b) = min_comm_probability(&pair, &gm);
        let m = 4i32;
        let f_a = |x: f64| x.powi(2 * (m + 1)) + tau_a * x - tau_a;
        let f_b = |x: f64| x.powi(3 * m + 2) + tau_b * x - tau_b;
        assert!(f_a(r_a - 1e-8) < 0.0 && f_a(r_a + 1e-8) > 0.0);
        assert!(f_b(r_b - 1e-8) < 0.0 && f_b(r_b + 1e-8) > 0.0);
    }

    #[test]
    fn extreme_tau_pushes_root_to_one() {
        let r = root_in_unit_interval(8, 1e12);
        assert!(r > 0.999999);
        assert!(r < 1.0);
    }

    #[test]
    fn complete_three_node_root_residual_and_bracket() {
        let g = Digraph::complete(3);
        let pair = build_mixing(&g).unwrap();
        let gm = digraph::metrics(&g).unwrap();
        let (r_a, r_b, tau_a, tau_b) = min_comm_probability(&pair, &gm);
        let f_a = |x: f64| x.powi(8) + tau_a * x - tau_a;
        let f_b = |x: f64| x.powi(11) + tau_b * x - tau_b;
        assert!(f_a(r_a).abs() <= 1e-9, "f_A(r_A) = {:e}", f_a(r_a));
        assert!(f_b(r_b).abs() <= 1e-9, "f_B(r_B) = {:e}", f_b(r_b));
        assert!(f_a(r_a - 1e-8) < 0.0 && f_a(r_a + 1e-8) > 0.0);
    }

    fn toy_pc(m: usize) -> ProblemConstants {
        ProblemConstants {
            l: vec![2.0; m],
            l_bar: 2.0,
            sigma0: vec![0.5; m],
            sigma1: vec![0.0; m],
            delta0: vec![1.0; m],
            delta1: vec![0.7; m],
            d: vec![20; m],
            b: vec![20; m],
        }
    }

    #[test]
    fn kappa2_reduces_to_three() {
        // σ₁ = 0, p ≡ 1: both averaged terms vanish regardless of δ₁
        let g = Digraph::complete(4);
        let pair = build_mixing(&g).unwrap();
        let gm = digraph::metrics(&g).unwrap();
        let profile = SporadicityProfile::ones(&g);
        let em = ExpectedMixing::build(&pair, &profile, &gm).unwrap();
        let c = constant_tables(&toy_pc(4), &em, &profile, &pair, &gm);
        assert_eq!(c.kappa2, 3.0);
    }

    #[test]
    fn reliable_links_make_tilde_equal_hat() {
        let g = digraph::generate_rgg(5, 0.8, 14).unwrap();
        let pair = build_mixing(&g).unwrap();
        let gm = digraph::metrics(&g).unwrap();
        let profile = SporadicityProfile::ones(&g);
        let em = ExpectedMixing::build(&pair, &profile, &gm).unwrap();
        let c = constant_tables(&toy_pc(5), &em, &profile, &pair, &gm);
        assert_eq!(c.rho_tilde_a, c.rho_a);
        assert_eq!(c.rho_tilde_b, c.rho_b);
    }

    #[test]
    fn constant_tables_is_pure() {
        let g = digraph::generate_rgg(5, 0.8, 14).unwrap();
        let pair = build_mixing(&g).unwrap();
        let gm = digraph::metrics(&g).unwrap();
        let profile = heterogeneous_profile(&g, 40);
        let em = ExpectedMixing::build(&pair, &profile, &gm).unwrap();
        let c1 = constant_tables(&toy_pc(5), &em, &profile, &pair, &gm);
        let c2 = constant_tables(&toy_pc(5), &em, &profile, &pair, &gm);
        assert_eq!(c1, c2);
    }

    #[test]
    fn eigenvector_bounds_hold() {
        for seed in [3u64, 9, 27] {
            let g = digraph::generate_rgg(6, 0.7, seed).unwrap();
            let pair = build_mixing(&g).unwrap();
            let gm = digraph::metrics(&g).unwrap();
            let profile = heterogeneous_profile(&g, seed + 100);
            let em = ExpectedMixing::build(&pair, &profile, &gm).unwrap();
            let m = 6i32;
            let min_ap = min_positive_weighted(&pair.a, &profile.p_hat);
            let (phi_min, phi_max) = extrema(&em.phi);
            assert!(phi_min >= min_ap.powi(m) / f64::from(m) - 1e-15);
            assert!(phi_max <= 1.0);
        }
    }

    #[test]
    fn deviation_bound_holds_at_admissible_probabilities() {
        // ρ̂₀,A ≤ (1−ρ̂_A)/4 and ρ̂₀,B ≤ (1−ρ̂_B)/2 when min p̂ ≥ max(r̂_A, r̂_B)
        let g = Digraph::complete(4);
        let pair = build_mixing(&g).unwrap();
        let gm = digraph::metrics(&g).unwrap();
        let (r_a, r_b, _, _) = min_comm_probability(&pair, &gm);
        let q = r_a.max(r_b);
        let profile = SporadicityProfile::ones(&g).with_uniform_p_hat(q);
        let em = ExpectedMixing::build(&pair, &profile, &gm).unwrap();
        assert!(em.rho0_a <= (1.0 - em.rho_a) / 4.0 + 1e-12);
        assert!(em.rho0_b <= (1.0 - em.rho_b) / 2.0 + 1e-12);
    }

    #[test]
    fn profile_json_round_trip() {
        let g = digraph::generate_rgg(5, 0.8, 4).unwrap();
        let profile = heterogeneous_profile(&g, 60);
        let text = profile.to_json_string();
        let back = SporadicityProfile::from_json_str(&g, &text).unwrap();
        assert_eq!(profile, back);
    }
}
