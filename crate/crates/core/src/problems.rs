//! Synthetic learning tasks with exact and mini-batch gradient oracles.
//!
//! Three loss families share one sample-based interface so the mini-batch
//! path is identical everywhere:
//!
//! * `quadratic` — per-sample loss `½(x−c)ᵀQ_i(x−c)` where the sample
//!   feature row is the per-sample center `c`. Local gradients, smoothness
//!   and the global minimizer are closed-form, which makes this the task of
//!   choice for anything that needs exact analysis constants.
//! * `logistic_l2` — binary cross-entropy on ±1 labels plus `λ/2‖x‖²`.
//! * `hinge_l2` — squared hinge (smooth SVM) plus `λ/2‖x‖²`.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg;
use crate::mixing::ProblemConstants;
use crate::sporadic::{RngStreams, StreamKind};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("infeasible partition: {0}")]
    BadPartition(String),
    #[error("invalid dataset file: {0}")]
    BadFile(String),
}

/// Feature matrix, labels, per-client partition, optional holdout split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    /// Disjoint cover of `0..features.nrows()`, one index list per client.
    pub partition: Vec<Vec<usize>>,
    pub holdout: Option<(Array2<f64>, Vec<usize>)>,
}

impl Dataset {
    pub fn num_clients(&self) -> usize {
        self.partition.len()
    }

    pub fn client_size(&self, i: usize) -> usize {
        self.partition[i].len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.partition.iter().map(|p| p.len()).collect()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn validate_partition(&self) -> Result<(), ProblemError> {
        let n = self.features.nrows();
        let mut seen = vec![false; n];
        for (i, cell) in self.partition.iter().enumerate() {
            if cell.is_empty() {
                return Err(ProblemError::BadPartition(format!("client {i} has no samples")));
            }
            for &idx in cell {
                if idx >= n || seen[idx] {
                    return Err(ProblemError::BadPartition(format!(
                        "index {idx} out of range or duplicated"
                    )));
                }
                seen[idx] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(ProblemError::BadPartition("partition does not cover the dataset".into()));
        }
        Ok(())
    }

    /// Mean feature vector of client `i`'s samples.
    pub fn client_mean(&self, i: usize) -> Array1<f64> {
        let mut mean = Array1::zeros(self.dim());
        for &idx in &self.partition[i] {
            mean += &self.features.row(idx);
        }
        mean / self.partition[i].len() as f64
    }

    /// Feature CSV: `f0,...,f{d-1},label`, one row per sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let d = self.dim();
        for j in 0..d {
            out.push_str(&format!("f{j},"));
        }
        out.push_str("label\n");
        for (r, &label) in self.labels.iter().enumerate() {
            for j in 0..d {
                out.push_str(&format!("{},", self.features[[r, j]]));
            }
            out.push_str(&format!("{label}\n"));
        }
        out
    }

    /// Partition sidecar JSON.
    pub fn partition_json(&self) -> String {
        serde_json::json!({ "partition": self.partition }).to_string()
    }

    pub fn from_csv(csv: &str, partition_json: &str) -> Result<Self, ProblemError> {
        let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| ProblemError::BadFile("empty csv".into()))?;
        let d = header.split(',').count() - 1;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (ln, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 1 {
                return Err(ProblemError::BadFile(format!("row {}: wrong field count", ln + 2)));
            }
            for f in &fields[..d] {
                rows.push(
                    f.parse::<f64>()
                        .map_err(|e| ProblemError::BadFile(format!("row {}: {e}", ln + 2)))?,
                );
            }
            labels.push(
                fields[d]
                    .parse::<usize>()
                    .map_err(|e| ProblemError::BadFile(format!("row {}: {e}", ln + 2)))?,
            );
        }
        let n = labels.len();
        let features = Array2::from_shape_vec((n, d), rows)
            .map_err(|e| ProblemError::BadFile(e.to_string()))?;
        #[derive(serde::Deserialize)]
        struct Sidecar {
            partition: Vec<Vec<usize>>,
        }
        let sidecar: Sidecar = serde_json::from_str(partition_json)
            .map_err(|e| ProblemError::BadFile(format!("sidecar: {e}")))?;
        let ds = Dataset { features, labels, partition: sidecar.partition, holdout: None };
        ds.validate_partition()?;
        Ok(ds)
    }
}

/// Loss family with its parameters; all sample-level math lives here.
#[derive(Debug, Clone, PartialEq)]
pub enum LossOracle {
    Quadratic { q: Vec<Array2<f64>> },
    LogisticL2 { lambda: f64 },
    HingeL2 { lambda: f64 },
}

fn pm_label(label: usize) -> f64 {
    if label == 0 {
        -1.0
    } else {
        1.0
    }
}

impl LossOracle {
    pub fn is_classification(&self) -> bool {
        !matches!(self, LossOracle::Quadratic { .. })
    }

    /// Per-sample loss `ℓ(x; ξ)` including the regularizer share.
    pub fn sample_loss(&self, ds: &Dataset, client: usize, sample: usize, x: &Array1<f64>) -> f64 {
        let f = ds.features.row(sample);
        match self {
            LossOracle::Quadratic { q } => {
                let diff = x - &f;
                0.5 * diff.dot(&q[client].dot(&diff))
            }
            LossOracle::LogisticL2 { lambda } => {
                let z = pm_label(ds.labels[sample]) * f.dot(x);
                // ln(1 + e^{-z}) evaluated stably
                let l = (-z).max(0.0) + (1.0 + (-z.abs()).exp()).ln();
                l + 0.5 * lambda * x.dot(x)
            }
            LossOracle::HingeL2 { lambda } => {
                let z = pm_label(ds.labels[sample]) * f.dot(x);
                (1.0 - z).max(0.0).powi(2) + 0.5 * lambda * x.dot(x)
            }
        }
    }

    /// Per-sample gradient `∇ℓ(x; ξ)`.
    pub fn sample_gradient(
        &self,
        ds: &Dataset,
        client: usize,
        sample: usize,
        x: &Array1<f64>,
    ) -> Array1<f64> {
        let f = ds.features.row(sample);
        match self {
            LossOracle::Quadratic { q } => q[client].dot(&(x - &f)),
            LossOracle::LogisticL2 { lambda } => {
                let y = pm_label(ds.labels[sample]);
                let z = y * f.dot(x);
                let sig = 1.0 / (1.0 + z.exp()); // σ(−z)
                let mut g = f.to_owned() * (-y * sig);
                g += &(x * *lambda);
                g
            }
            LossOracle::HingeL2 { lambda } => {
                let y = pm_label(ds.labels[sample]);
                let z = y * f.dot(x);
                let slack = (1.0 - z).max(0.0);
                let mut g = f.to_owned() * (-2.0 * y * slack);
                g += &(x * *lambda);
                g
            }
        }
    }

    /// Exact local loss `F_i(x)`.
    pub fn local_loss(&self, ds: &Dataset, i: usize, x: &Array1<f64>) -> f64 {
        let cell = &ds.partition[i];
        cell.iter().map(|&s| self.sample_loss(ds, i, s, x)).sum::<f64>() / cell.len() as f64
    }

    /// Exact local gradient `∇F_i(x)`; closed-form for the quadratic.
    pub fn local_gradient(&self, ds: &Dataset, i: usize, x: &Array1<f64>) -> Array1<f64> {
        match self {
            LossOracle::Quadratic { q } => q[i].dot(&(x - &ds.client_mean(i))),
            _ => {
                let cell = &ds.partition[i];
                let mut g = Array1::zeros(ds.dim());
                for &s in cell {
                    g += &self.sample_gradient(ds, i, s, x);
                }
                g / cell.len() as f64
            }
        }
    }

    /// Global loss `F(x) = (1/m) Σ F_i(x)`.
    pub fn global_loss(&self, ds: &Dataset, x: &Array1<f64>) -> f64 {
        let m = ds.num_clients();
        (0..m).map(|i| self.local_loss(ds, i, x)).sum::<f64>() / m as f64
    }

    /// Global gradient as the client average of local gradients.
    pub fn global_gradient(&self, ds: &Dataset, x: &Array1<f64>) -> Array1<f64> {
        let m = ds.num_clients();
        let mut g = Array1::zeros(ds.dim());
        for i in 0..m {
            g += &self.local_gradient(ds, i, x);
        }
        g / m as f64
    }

    /// Share of holdout samples classified correctly by `sign(fᵀx)`.
    /// `None` for non-classification tasks or when no holdout exists.
    pub fn holdout_accuracy(&self, ds: &Dataset, x: &Array1<f64>) -> Option<f64> {
        if !self.is_classification() {
            return None;
        }
        let (features, labels) = ds.holdout.as_ref()?;
        let mut correct = 0usize;
        for (r, &label) in labels.iter().enumerate() {
            let score = features.row(r).dot(x);
            if (score >= 0.0) == (pm_label(label) > 0.0) {
                correct += 1;
            }
        }
        Some(correct as f64 / labels.len() as f64)
    }
}

/// A mini-batch stochastic gradient and the indices that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub value: Array1<f64>,
    pub batch_indices: Vec<usize>,
}

/// Uniform sampling without replacement from client `i`'s partition.
/// `b = D_i` uses the whole cell without touching the generator, so the
/// full-batch path is reproducible independently of RNG layout.
pub fn minibatch_gradient(
    oracle: &LossOracle,
    ds: &Dataset,
    i: usize,
    x: &Array1<f64>,
    b: usize,
    rng: &mut ChaCha8Rng,
) -> GradientSample {
    let cell = &ds.partition[i];
    assert!(b >= 1 && b <= cell.len(), "batch size must satisfy 1 <= B <= D");
    let batch_indices: Vec<usize> = if b == cell.len() {
        cell.clone()
    } else {
        // partial Fisher-Yates over a copy of the cell
        let mut pool = cell.clone();
        for t in 0..b {
            let j = rng.random_range(t..pool.len());
            pool.swap(t, j);
        }
        pool.truncate(b);
        pool
    };
    let mut g = Array1::zeros(ds.dim());
    for &s in &batch_indices {
        g += &oracle.sample_gradient(ds, i, s, x);
    }
    g /= b as f64;
    GradientSample { value: g, batch_indices }
}

/// Task recipes for the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskSpec {
    /// Per-client PSD quadratics with eigenvalues in `[0.1, l_target]`.
    Quadratic { l_target: f64 },
    /// Gaussian class blobs (unit noise) with the given center separation.
    Classification { loss: ClassificationLoss, classes: usize, separation: f64, lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassificationLoss {
    Logistic,
    Hinge,
}

fn gaussian_vec(n: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_vec((0..n).map(|_| StandardNormal.sample(rng)).collect())
}

/// Random orthogonal matrix via Gram-Schmidt on a Gaussian sample.
fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    loop {
        let mut cols: Vec<Array1<f64>> = Vec::with_capacity(n);
        let mut ok = true;
        for _ in 0..n {
            let mut v = gaussian_vec(n, rng);
            for c in &cols {
                let proj = v.dot(c);
                v -= &(c * proj);
            }
            let norm = v.dot(&v).sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            cols.push(v / norm);
        }
        if ok {
            let mut q = Array2::zeros((n, n));
            for (j, c) in cols.iter().enumerate() {
                for i in 0..n {
                    q[[i, j]] = c[i];
                }
            }
            return q;
        }
    }
}

/// Deterministic synthetic task: `m` clients, model dimension `n`,
/// `per_client` samples each. Classification tasks also get a 25% holdout.
pub fn make_synthetic(
    spec: &TaskSpec,
    m: usize,
    n: usize,
    per_client: usize,
    seed: u64,
) -> (Dataset, LossOracle) {
    assert!(m >= 1 && n >= 1 && per_client >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = m * per_client;
    match spec {
        TaskSpec::Quadratic { l_target } => {
            assert!(*l_target > 0.1, "l_target must exceed the 0.1 eigenvalue floor");
            let mut q = Vec::with_capacity(m);
            let mut features = Array2::zeros((total, n));
            let mut row = 0usize;
            for _ in 0..m {
                let v = random_orthogonal(n, &mut rng);
                let mut lam = Array2::zeros((n, n));
                for k in 0..n {
                    lam[[k, k]] = rng.random_range(0.1..=*l_target);
                }
                q.push(v.dot(&lam).dot(&v.t()));
                let center = gaussian_vec(n, &mut rng);
                for _ in 0..per_client {
                    let sample = &center + &(gaussian_vec(n, &mut rng) * 0.5);
                    features.row_mut(row).assign(&sample);
                    row += 1;
                }
            }
            let partition =
                (0..m).map(|i| (i * per_client..(i + 1) * per_client).collect()).collect();
            let ds = Dataset { features, labels: vec![0; total], partition, holdout: None };
            (ds, LossOracle::Quadratic { q })
        }
        TaskSpec::Classification { loss, classes, separation, lambda } => {
            assert!(*classes >= 2, "need at least two classes");
            let centers: Vec<Array1<f64>> = if *classes == 2 {
                let u = gaussian_vec(n, &mut rng);
                let u = &u / u.dot(&u).sqrt();
                vec![&u * (-separation / 2.0), &u * (separation / 2.0)]
            } else {
                (0..*classes)
                    .map(|_| {
                        let u = gaussian_vec(n, &mut rng);
                        let norm = u.dot(&u).sqrt();
                        u / norm * (separation / std::f64::consts::SQRT_2)
                    })
                    .collect()
            };
            let sample_rows = |count: usize, rng: &mut ChaCha8Rng| {
                let mut features = Array2::zeros((count, n));
                let mut labels = Vec::with_capacity(count);
                for t in 0..count {
                    let c = t % classes;
                    let x = &centers[c] + &gaussian_vec(n, rng);
                    features.row_mut(t).assign(&x);
                    labels.push(c);
                }
                (features, labels)
            };
            let (features, labels) = sample_rows(total, &mut rng);
            let holdout = sample_rows(total.div_ceil(4), &mut rng);
            let partition =
                (0..m).map(|i| (i * per_client..(i + 1) * per_client).collect()).collect();
            let ds = Dataset { features, labels, partition, holdout: Some(holdout) };
            let oracle = match loss {
                ClassificationLoss::Logistic => LossOracle::LogisticL2 { lambda: *lambda },
                ClassificationLoss::Hinge => LossOracle::HingeL2 { lambda: *lambda },
            };
            (ds, oracle)
        }
    }
}

/// Re-partition by label: client `i` holds classes
/// `{(i·labels_per_client + t) mod C : t < labels_per_client}`, and each
/// class's samples are shuffled (seeded) and split evenly among its holders.
/// `labels_per_client = C` reproduces an IID split, `= 1` the single-label
/// extreme.
pub fn partition_by_labels(
    ds: &Dataset,
    labels_per_client: usize,
    m: usize,
    seed: u64,
) -> Result<Dataset, ProblemError> {
    let classes = ds.labels.iter().copied().max().map(|c| c + 1).unwrap_or(0);
    if labels_per_client < 1 || labels_per_client > classes {
        return Err(ProblemError::BadPartition(format!(
            "labels_per_client must lie in 1..={classes}"
        )));
    }
    // class -> clients holding it
    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for i in 0..m {
        for t in 0..labels_per_client {
            holders[(i * labels_per_client + t) % classes].push(i);
        }
    }
    if holders.iter().any(|h| h.is_empty()) {
        return Err(ProblemError::BadPartition(format!(
            "{m} clients x {labels_per_client} labels cannot cover {classes} classes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut partition: Vec<Vec<usize>> = vec![Vec::new(); m];
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..ds.labels.len()).filter(|&r| ds.labels[r] == c).collect();
        if idx.len() < holders[c].len() {
            return Err(ProblemError::BadPartition(format!(
                "class {c} has {} samples for {} holders",
                idx.len(),
                holders[c].len()
            )));
        }
        // seeded shuffle, then near-even split across the holders
        for t in (1..idx.len()).rev() {
            let j = rng.random_range(0..=t);
            idx.swap(t, j);
        }
        for (slot, &r) in idx.iter().enumerate() {
            partition[holders[c][slot % holders[c].len()]].push(r);
        }
    }
    for cell in &mut partition {
        cell.sort_unstable();
    }
    let out = Dataset {
        features: ds.features.clone(),
        labels: ds.labels.clone(),
        partition,
        holdout: ds.holdout.clone(),
    };
    out.validate_partition()?;
    Ok(out)
}

/// Closed-form minimizer of the global quadratic loss and its value.
pub fn quadratic_minimizer(oracle: &LossOracle, ds: &Dataset) -> (Array1<f64>, f64) {
    let LossOracle::Quadratic { q } = oracle else {
        panic!("quadratic_minimizer requires a quadratic oracle");
    };
    let n = ds.dim();
    let m = ds.num_clients();
    let mut lhs = Array2::zeros((n, n));
    let mut rhs = Array1::zeros(n);
    for i in 0..m {
        lhs += &q[i];
        rhs += &q[i].dot(&ds.client_mean(i));
    }
    let x = linalg::solve_dense(&lhs, &rhs).expect("PSD sum with positive eigenvalue floor");
    let f = oracle.global_loss(ds, &x);
    (x, f)
}

/// Smoothness constant of `F_i` per loss family (spectral bound plus `λ`).
pub fn local_smoothness(oracle: &LossOracle, ds: &Dataset, i: usize) -> f64 {
    match oracle {
        LossOracle::Quadratic { q } => linalg::psd_lambda_max(&q[i], 1e-12, 20_000),
        LossOracle::LogisticL2 { lambda } | LossOracle::HingeL2 { lambda } => {
            let n = ds.dim();
            let cell = &ds.partition[i];
            let mut gram = Array2::zeros((n, n));
            for &s in cell {
                let f = ds.features.row(s);
                for a in 0..n {
                    for b in 0..n {
                        gram[[a, b]] += f[a] * f[b];
                    }
                }
            }
            gram /= cell.len() as f64;
            let factor = match oracle {
                LossOracle::LogisticL2 { .. } => 0.25,
                _ => 2.0,
            };
            factor * linalg::psd_lambda_max(&gram, 1e-12, 20_000) + lambda
        }
    }
}

/// Full-batch gradient descent on the global loss from the origin; returns
/// the best loss seen and its iterate. Reference for optima that have no
/// closed form.
pub fn centralized_reference(
    oracle: &LossOracle,
    ds: &Dataset,
    iters: usize,
) -> (f64, Array1<f64>) {
    let m = ds.num_clients();
    let l_max = (0..m).map(|i| local_smoothness(oracle, ds, i)).fold(f64::NEG_INFINITY, f64::max);
    let eta = 0.9 / l_max.max(1e-9);
    let mut x = Array1::zeros(ds.dim());
    let mut best = oracle.global_loss(ds, &x);
    let mut best_x = x.clone();
    for _ in 0..iters {
        let g = oracle.global_gradient(ds, &x);
        x -= &(g * eta);
        let f = oracle.global_loss(ds, &x);
        if f < best {
            best = f;
            best_x = x.clone();
        }
    }
    (best, best_x)
}

/// Exact population variance of client `i`'s per-sample gradients at `x`,
/// `(1/D_i) Σ_j ‖∇ℓ(x;ξ_j) − ∇F_i(x)‖²`. The finite-population identity
/// `E‖ĝ_B − ∇F_i‖² = popvar · (D−B)/(B(D−1))` turns this into the exact
/// mini-batch variance.
pub fn gradient_population_variance(
    oracle: &LossOracle,
    ds: &Dataset,
    i: usize,
    x: &Array1<f64>,
) -> f64 {
    let mean = oracle.local_gradient(ds, i, x);
    let cell = &ds.partition[i];
    cell.iter()
        .map(|&s| {
            let d = oracle.sample_gradient(ds, i, s, x) - &mean;
            d.dot(&d)
        })
        .sum::<f64>()
        / cell.len() as f64
}

/// Nonnegative least squares for `z ≈ a + b·u` (two parameters): solve the
/// normal equations, clamping a negative coefficient to zero and refitting
/// the other.
fn nnls_affine(u: &[f64], z: &[f64]) -> (f64, f64) {
    let n = u.len() as f64;
    let su: f64 = u.iter().sum();
    let sz: f64 = z.iter().sum();
    let suu: f64 = u.iter().map(|v| v * v).sum();
    let suz: f64 = u.iter().zip(z).map(|(a, b)| a * b).sum();
    let det = n * suu - su * su;
    let (mut a, mut b) = if det.abs() > 1e-12 * (n * suu).max(1.0) {
        ((sz * suu - su * suz) / det, (n * suz - su * sz) / det)
    } else {
        (sz / n, 0.0)
    };
    if b < 0.0 {
        b = 0.0;
        a = sz / n;
    }
    if a < 0.0 {
        a = 0.0;
        b = if suu > 0.0 { (suz / suu).max(0.0) } else { 0.0 };
    }
    (a, b)
}

pub const CONSTANT_FIT_INFLATION: f64 = 1.2;

/// Least-squares fit of `z ≤ a + b·u`, scaled so the bound covers every
/// probe, then inflated by the safety margin.
fn fit_affine_bound(u: &[f64], z: &[f64]) -> (f64, f64) {
    let (a, b) = nnls_affine(u, z);
    let mut cover = 1.0f64;
    for (&ut, &zt) in u.iter().zip(z) {
        if zt <= 1e-300 {
            continue;
        }
        let denom = a + b * ut;
        if denom <= 1e-300 {
            // degenerate fit; fall back to a flat bound at the largest z
            let zmax = z.iter().copied().fold(0.0, f64::max);
            return (zmax * CONSTANT_FIT_INFLATION, 0.0);
        }
        cover = cover.max(zt / denom);
    }
    let scale = cover * CONSTANT_FIT_INFLATION;
    (a * scale, b * scale)
}

/// Empirical analysis constants: exact smoothness per family, and
/// `(σ₀, σ₁)`, `(δ₀, δ₁)` fitted by nonnegative least squares to the
/// variance and diversity bounds over random probe points, inflated by 20%
/// so the fitted inequalities hold on every probe.
pub fn estimate_constants(
    oracle: &LossOracle,
    ds: &Dataset,
    probe_points: usize,
    streams: &RngStreams,
) -> ProblemConstants {
    assert!(probe_points >= 10, "need at least 10 probe points");
    let m = ds.num_clients();
    let n = ds.dim();
    // Half the probes hover around a reference minimizer: the intercepts of
    // the affine bounds bind where the global gradient is small, and a fit
    // that never sees that regime underestimates them.
    let (_, x_ref) = centralized_reference(oracle, ds, 300);
    let far_scales = [0.5, 1.0, 2.0, 4.0];
    let near_scales = [0.0, 0.25, 0.5, 1.0];
    let probes: Vec<Array1<f64>> = (0..probe_points)
        .map(|t| {
            let mut rng = streams.rng(StreamKind::Probe, t as u64, 0);
            let noise = gaussian_vec(n, &mut rng);
            if t % 2 == 0 {
                &x_ref + &(noise * near_scales[(t / 2) % near_scales.len()])
            } else {
                noise * far_scales[(t / 2) % far_scales.len()]
            }
        })
        .collect();

    let l: Vec<f64> = (0..m).map(|i| local_smoothness(oracle, ds, i)).collect();
    let l_bar = l.iter().sum::<f64>() / m as f64;

    let grad_sq: Vec<f64> = probes
        .iter()
        .map(|x| {
            let g = oracle.global_gradient(ds, x);
            g.dot(&g)
        })
        .collect();

    let mut sigma0 = Vec::with_capacity(m);
    let mut sigma1 = Vec::with_capacity(m);
    let mut delta0 = Vec::with_capacity(m);
    let mut delta1 = Vec::with_capacity(m);
    for i in 0..m {
        let d_i = ds.client_size(i) as f64;
        if d_i > 1.5 {
            let z: Vec<f64> = probes
                .iter()
                .map(|x| gradient_population_variance(oracle, ds, i, x) * d_i / (d_i - 1.0))
                .collect();
            let (a, b) = fit_affine_bound(&grad_sq, &z);
            sigma0.push(a.sqrt());
            sigma1.push(b.sqrt());
        } else {
            // single-sample clients always use the exact gradient
            sigma0.push(0.0);
            sigma1.push(0.0);
        }
        let z: Vec<f64> = probes
            .iter()
            .map(|x| {
                let g = oracle.local_gradient(ds, i, x);
                g.dot(&g)
            })
            .collect();
        let (a, b) = fit_affine_bound(&grad_sq, &z);
        delta0.push(a.sqrt());
        delta1.push(b.sqrt());
    }
    let d = ds.sizes();
    let b = d.clone();
    ProblemConstants { l, l_bar, sigma0, sigma1, delta0, delta1, d, b }
}

/// Globally valid constants for the quadratic task, in closed form:
/// `L_i = λmax(Q_i)`, `σ₁ = 0` with `σ₀² = popvar · D/(D−1)` (the quadratic's
/// per-sample gradient spread is independent of `x`), and diversity from
/// `‖Q_i(x−c̄_i)‖² ≤ 2(λmax(Q_i)/λmin(Q̄))²‖∇F(x)‖² + 2‖Q_i(x*−c̄_i)‖²`.
pub fn exact_quadratic_constants(oracle: &LossOracle, ds: &Dataset) -> ProblemConstants {
    let LossOracle::Quadratic { q } = oracle else {
        panic!("exact constants require the quadratic oracle");
    };
    let m = ds.num_clients();
    let n = ds.dim();
    let l: Vec<f64> = (0..m).map(|i| linalg::psd_lambda_max(&q[i], 1e-12, 20_000)).collect();
    let l_bar = l.iter().sum::<f64>() / m as f64;
    let (x_star, _) = quadratic_minimizer(oracle, ds);
    let mut q_bar = Array2::zeros((n, n));
    for qi in q {
        q_bar += qi;
    }
    q_bar /= m as f64;
    let q_bar_min = linalg::psd_lambda_min(&q_bar, 1e-12, 20_000);

    let mut sigma0 = Vec::with_capacity(m);
    let mut delta0 = Vec::with_capacity(m);
    let mut delta1 = Vec::with_capacity(m);
    for i in 0..m {
        let d_i = ds.client_size(i) as f64;
        let popvar = gradient_population_variance(oracle, ds, i, &x_star);
        sigma0.push(if d_i > 1.5 { (popvar * d_i / (d_i - 1.0)).sqrt() } else { 0.0 });
        let dev = q[i].dot(&(&x_star - &ds.client_mean(i)));
        delta0.push((2.0 * dev.dot(&dev)).sqrt());
        delta1.push(std::f64::consts::SQRT_2 * l[i] / q_bar_min);
    }
    let d = ds.sizes();
    let b = d.clone();
    ProblemConstants { l, l_bar, sigma0, sigma1: vec![0.0; m], delta0, delta1, d, b }
}
