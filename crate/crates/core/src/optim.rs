//! The unified sporadic push-pull iteration engine and its baseline
//! instantiations.
//!
//! One step realizes the sporadic mixing matrices from the iteration's link
//! draw and applies
//!
//! ```text
//! X⁺ = Â⁽ᵏ⁾ X − Λ_η B̂⁽ᵏ⁾ Y
//! Y⁺ = B̂⁽ᵏ⁾ Y + Λ_v⁽ᵏ⁺¹⁾ G⁽ᵏ⁺¹⁾ − Λ_v⁽ᵏ⁾ G⁽ᵏ⁾
//! ```
//!
//! where row `i` of `G⁽ᵏ⁺¹⁾` is a fresh mini-batch gradient at `x_i⁽ᵏ⁺¹⁾`,
//! sampled only for clients whose computation event fired; silent clients
//! contribute a zero row and no stale gradient is ever reused. The baselines
//! are schedule choices over the same engine, so their reductions to the
//! sporadic algorithm are exact.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::diagnostics::{self, MetricsTrace, TraceRow};
use crate::digraph::Digraph;
use crate::mixing::{expected_matrices, perron_vectors, MixingError, MixingPair, SporadicityProfile};
use crate::problems::{minibatch_gradient, Dataset, LossOracle};
use crate::sporadic::{realize_matrices, sample_events, EventDraw, RngStreams, Schedule, StreamKind};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("divergence at iteration {iteration}: non-finite state (learning rate too large?)")]
    Diverged { iteration: u64 },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Mixing(#[from] MixingError),
}

/// Algorithm variants as schedule choices over the unified engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Bernoulli computation and communication.
    SpodGt,
    /// Everything every iteration.
    AbPushPull,
    /// Computation every iteration, Bernoulli communication.
    GPushPull,
    /// Computation every iteration, communication every `K` iterations.
    KGt,
    /// Bernoulli computation, communication every iteration.
    SporadicKGt,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::SpodGt => "spod_gt",
            Variant::AbPushPull => "ab_pushpull",
            Variant::GPushPull => "g_pushpull",
            Variant::KGt => "k_gt",
            Variant::SporadicKGt => "sporadic_k_gt",
        }
    }

    pub fn parse(name: &str) -> Option<Variant> {
        Some(match name {
            "spod_gt" => Variant::SpodGt,
            "ab_pushpull" => Variant::AbPushPull,
            "g_pushpull" => Variant::GPushPull,
            "k_gt" => Variant::KGt,
            "sporadic_k_gt" => Variant::SporadicKGt,
            _ => return None,
        })
    }

    /// (computation, communication) schedules; `kgt_interval` only matters
    /// for the periodic baseline.
    pub fn schedules(&self, kgt_interval: u64) -> (Schedule, Schedule) {
        match self {
            Variant::SpodGt => (Schedule::Bernoulli, Schedule::Bernoulli),
            Variant::AbPushPull => (Schedule::Always, Schedule::Always),
            Variant::GPushPull => (Schedule::Always, Schedule::Bernoulli),
            Variant::KGt => {
                (Schedule::Always, Schedule::Periodic { period: kgt_interval.max(1), phase: 0 })
            }
            Variant::SporadicKGt => (Schedule::Bernoulli, Schedule::Always),
        }
    }

    /// Link-probability profile the measurement vectors are computed from:
    /// Bernoulli communication keeps the device profile, always-on (and
    /// periodic) communication mixes with the full matrices.
    pub fn measurement_profile(&self, g: &Digraph, profile: &SporadicityProfile) -> SporadicityProfile {
        match self {
            Variant::SpodGt | Variant::GPushPull => profile.clone(),
            Variant::AbPushPull | Variant::KGt | Variant::SporadicKGt => {
                SporadicityProfile::ones(g).with_p(profile.p.clone())
            }
        }
    }
}

/// Initial model placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum X0Spec {
    Zeros,
    /// One Gaussian model shared by every client.
    SharedGaussian,
    /// Independent Gaussian model per client.
    PerClientGaussian,
}

/// Engine configuration for a single run.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgoConfig {
    pub variant: Variant,
    /// Per-client constant learning rates.
    pub eta: Vec<f64>,
    /// Per-client batch sizes.
    pub batch: Vec<usize>,
    pub max_iter: u64,
    pub log_stride: u64,
    pub x0: X0Spec,
    /// Aggregation interval for the periodic baseline; derived from the
    /// profile when absent.
    pub kgt_interval: Option<u64>,
}

impl AlgoConfig {
    fn validate(&self, ds: &Dataset) -> Result<(), OptimError> {
        let m = ds.num_clients();
        if self.eta.len() != m {
            return Err(OptimError::BadConfig(format!("eta has {} entries for m={m}", self.eta.len())));
        }
        if self.batch.len() != m {
            return Err(OptimError::BadConfig(format!(
                "batch has {} entries for m={m}",
                self.batch.len()
            )));
        }
        if self.eta.iter().any(|&e| !e.is_finite() || e <= 0.0) {
            return Err(OptimError::BadConfig("learning rates must be positive".into()));
        }
        for i in 0..m {
            if self.batch[i] < 1 || self.batch[i] > ds.client_size(i) {
                return Err(OptimError::BadConfig(format!(
                    "batch[{i}] = {} outside 1..={}",
                    self.batch[i],
                    ds.client_size(i)
                )));
            }
        }
        if self.max_iter == 0 || self.log_stride == 0 {
            return Err(OptimError::BadConfig("max_iter and log_stride must be positive".into()));
        }
        Ok(())
    }
}

/// Network state: models `X`, trackers `Y`, and the masked gradients
/// `Λ_v⁽ᵏ⁾ G⁽ᵏ⁾` the next update subtracts.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgoState {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub g_prev_masked: Array2<f64>,
    pub k: u64,
}

impl AlgoState {
    /// `max_d |(1/m)1ᵀY − (1/m)1ᵀΛ_vG|`: the tracking identity residual,
    /// exactly zero up to rounding at every reachable state.
    pub fn tracking_residual(&self) -> f64 {
        let y_bar = self.y.sum_axis(ndarray::Axis(0));
        let g_bar = self.g_prev_masked.sum_axis(ndarray::Axis(0));
        let m = self.x.nrows() as f64;
        y_bar
            .iter()
            .zip(g_bar.iter())
            .map(|(a, b)| ((a - b) / m).abs())
            .fold(0.0, f64::max)
    }

    fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite()) && self.y.iter().all(|v| v.is_finite())
    }
}

fn gaussian_row(n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Array1<f64> {
    Array1::from_vec((0..n).map(|_| StandardNormal.sample(rng)).collect())
}

/// Build the iteration-0 state: place `X`, then for clients whose first
/// computation event fired, sample `g_i⁽⁰⁾` and set `y_i⁽⁰⁾ = g_i⁽⁰⁾`;
/// everyone else starts with a zero tracker.
pub fn init_state(
    oracle: &LossOracle,
    ds: &Dataset,
    x0: X0Spec,
    batch: &[usize],
    draw0: &EventDraw,
    streams: &RngStreams,
) -> AlgoState {
    let m = ds.num_clients();
    let n = ds.dim();
    let mut x = Array2::zeros((m, n));
    match x0 {
        X0Spec::Zeros => {}
        X0Spec::SharedGaussian => {
            let row = gaussian_row(n, &mut streams.rng(StreamKind::Init, 0, 0));
            for i in 0..m {
                x.row_mut(i).assign(&row);
            }
        }
        X0Spec::PerClientGaussian => {
            for i in 0..m {
                x.row_mut(i).assign(&gaussian_row(n, &mut streams.rng(StreamKind::Init, i as u64, 0)));
            }
        }
    }
    let mut y = Array2::zeros((m, n));
    let mut g_masked = Array2::zeros((m, n));
    for i in 0..m {
        if draw0.v[i] == 1.0 {
            let mut rng = streams.rng(StreamKind::Batch, i as u64, 0);
            let g = minibatch_gradient(oracle, ds, i, &x.row(i).to_owned(), batch[i], &mut rng);
            y.row_mut(i).assign(&g.value);
            g_masked.row_mut(i).assign(&g.value);
        }
    }
    AlgoState { x, y, g_prev_masked: g_masked, k: 0 }
}

/// One engine step in matrix form. `draw_k` supplies the iteration's link
/// events; `draw_kplus1` supplies the next computation events whose
/// gradients are evaluated at the freshly descended models.
#[allow(clippy::too_many_arguments)]
pub fn step(
    state: &AlgoState,
    pair: &MixingPair,
    draw_k: &EventDraw,
    draw_kplus1: &EventDraw,
    oracle: &LossOracle,
    ds: &Dataset,
    eta: &[f64],
    batch: &[usize],
    streams: &RngStreams,
) -> Result<AlgoState, OptimError> {
    let m = state.x.nrows();
    let (a_k, b_k) = realize_matrices(pair, draw_k);
    let by = b_k.dot(&state.y);
    let mut x_next = a_k.dot(&state.x);
    for i in 0..m {
        let scaled = &by.row(i) * eta[i];
        let mut row = x_next.row_mut(i);
        row -= &scaled;
    }
    let mut g_next = Array2::zeros(state.x.raw_dim());
    for i in 0..m {
        if draw_kplus1.v[i] == 1.0 {
            let mut rng = streams.rng(StreamKind::Batch, i as u64, state.k + 1);
            let g =
                minibatch_gradient(oracle, ds, i, &x_next.row(i).to_owned(), batch[i], &mut rng);
            g_next.row_mut(i).assign(&g.value);
        }
    }
    let y_next = by + &g_next - &state.g_prev_masked;
    let next = AlgoState { x: x_next, y: y_next, g_prev_masked: g_next, k: state.k + 1 };
    if !next.is_finite() {
        return Err(OptimError::Diverged { iteration: next.k });
    }
    Ok(next)
}

/// Reference two-phase step (per-client aggregation then descent then
/// tracker refresh), algebraically identical to [`step`]. Kept for the
/// equivalence check; not used by [`run`].
#[allow(clippy::too_many_arguments)]
pub fn step_two_phase(
    state: &AlgoState,
    pair: &MixingPair,
    draw_k: &EventDraw,
    draw_kplus1: &EventDraw,
    oracle: &LossOracle,
    ds: &Dataset,
    eta: &[f64],
    batch: &[usize],
    streams: &RngStreams,
) -> Result<AlgoState, OptimError> {
    let m = state.x.nrows();
    let n = state.x.ncols();
    let mut x_half = state.x.clone();
    let mut y_half = state.y.clone();
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            if draw_k.v_hat[[i, j]] == 1.0 {
                let dx = (&state.x.row(j) - &state.x.row(i)) * pair.a[[i, j]];
                let mut row = x_half.row_mut(i);
                row += &dx;
                let dy = &state.y.row(j) * pair.b[[i, j]];
                let mut row = y_half.row_mut(i);
                row += &dy;
            }
            if draw_k.v_hat[[j, i]] == 1.0 {
                let dy = &state.y.row(i) * pair.b[[j, i]];
                let mut row = y_half.row_mut(i);
                row -= &dy;
            }
        }
    }
    let mut x_next = Array2::zeros((m, n));
    for i in 0..m {
        x_next.row_mut(i).assign(&(&x_half.row(i) - &(&y_half.row(i) * eta[i])));
    }
    let mut g_next = Array2::zeros((m, n));
    for i in 0..m {
        if draw_kplus1.v[i] == 1.0 {
            let mut rng = streams.rng(StreamKind::Batch, i as u64, state.k + 1);
            let g =
                minibatch_gradient(oracle, ds, i, &x_next.row(i).to_owned(), batch[i], &mut rng);
            g_next.row_mut(i).assign(&g.value);
        }
    }
    let y_next = y_half + &g_next - &state.g_prev_masked;
    let next = AlgoState { x: x_next, y: y_next, g_prev_masked: g_next, k: state.k + 1 };
    if !next.is_finite() {
        return Err(OptimError::Diverged { iteration: next.k });
    }
    Ok(next)
}

/// Execute `max_iter` steps of the configured variant, logging metrics every
/// `log_stride` iterations (plus the final one). The observer sees every
/// state, logged or not.
#[allow(clippy::too_many_arguments)]
pub fn run(
    cfg: &AlgoConfig,
    g: &Digraph,
    pair: &MixingPair,
    profile: &SporadicityProfile,
    oracle: &LossOracle,
    ds: &Dataset,
    streams: &RngStreams,
    mut observer: impl FnMut(&AlgoState, &EventDraw),
) -> Result<MetricsTrace, OptimError> {
    cfg.validate(ds)?;
    let kgt = cfg.kgt_interval.unwrap_or_else(|| diagnostics::kgt_interval(profile));
    let (comp, comm) = cfg.variant.schedules(kgt);
    let measurement = cfg.variant.measurement_profile(g, profile);
    let (a_hat, b_hat) = expected_matrices(pair, &measurement);
    let (phi, pi) = perron_vectors(&a_hat, &b_hat)?;

    let mut trace = MetricsTrace {
        variant: cfg.variant.name().to_string(),
        master_seed: streams.master_seed(),
        rows: Vec::with_capacity((cfg.max_iter / cfg.log_stride + 2) as usize),
    };
    let mut log_row = |state: &AlgoState, rec: Option<&diagnostics::DelayRecord>, cum: f64| {
        let x_bar = phi.dot(&state.x);
        let grad = oracle.global_gradient(ds, &x_bar);
        let err = diagnostics::consensus_errors(&state.x, &state.y, &phi, &pi);
        trace.rows.push(TraceRow {
            k: state.k,
            loss: oracle.global_loss(ds, &x_bar),
            grad_sq_norm: grad.dot(&grad),
            x_err: err.x_err,
            y_err: err.y_err,
            tau_in: rec.map(|r| r.tau_in).unwrap_or(0.0),
            tau_proc: rec.map(|r| r.tau_proc).unwrap_or(0.0),
            tau_out: rec.map(|r| r.tau_out).unwrap_or(0.0),
            tau_total_cum: cum,
            accuracy: oracle.holdout_accuracy(ds, &x_bar),
        });
    };

    let draw0 = sample_events(comp, comm, g, profile, 0, streams);
    let mut state = init_state(oracle, ds, cfg.x0, &cfg.batch, &draw0, streams);
    observer(&state, &draw0);
    let mut cum_delay = 0.0;
    log_row(&state, None, 0.0);

    let mut draw_k = draw0;
    for k in 0..cfg.max_iter {
        let draw_next = sample_events(comp, comm, g, profile, k + 1, streams);
        let rec = diagnostics::delay_step(&draw_k, profile, g);
        cum_delay += rec.tau_total;
        state = step(&state, pair, &draw_k, &draw_next, oracle, ds, &cfg.eta, &cfg.batch, streams)?;
        observer(&state, &draw_next);
        if (k + 1) % cfg.log_stride == 0 || k + 1 == cfg.max_iter {
            log_row(&state, Some(&rec), cum_delay);
        }
        draw_k = draw_next;
    }
    Ok(trace)
}
