//! Per-iteration participation events and realized sporadic mixing matrices.
//!
//! Randomness is counter-addressed: the generator for a draw is keyed by
//! `(master_seed, stream kind, index, iteration)` through a splitmix-style
//! hash, so any draw can be reproduced without replaying the ones before it
//! and concurrent runs cannot interleave streams.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use crate::digraph::Digraph;
use crate::mixing::{MixingPair, SporadicityProfile};

/// One iteration's participation draw: `v[i] ∈ {0,1}` for gradient
/// computation, `v_hat[[i,j]] ∈ {0,1}` for the link `j → i` (zero off the
/// edge set, never sampled on the diagonal).
#[derive(Debug, Clone, PartialEq)]
pub struct EventDraw {
    pub v: Array1<f64>,
    pub v_hat: Array2<f64>,
}

impl EventDraw {
    pub fn all_on(g: &Digraph) -> Self {
        let m = g.m();
        let mut v_hat = Array2::zeros((m, m));
        for (i, j) in g.edges() {
            v_hat[[i, j]] = 1.0;
        }
        EventDraw { v: Array1::from_elem(m, 1.0), v_hat }
    }
}

/// Stream labels. The numeric tags feed the seed hash, so their values are
/// part of the reproducibility contract — do not renumber.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Compute = 1,
    Link = 2,
    Batch = 3,
    Init = 4,
    Probe = 5,
    Trial = 6,
}

/// Counter-addressed random streams derived from one master seed.
#[derive(Debug, Clone, Copy)]
pub struct RngStreams {
    master_seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl RngStreams {
    pub fn new(master_seed: u64) -> Self {
        RngStreams { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Derived family for an independent scope (e.g. one repeat of a run).
    pub fn child(&self, label: u64) -> Self {
        RngStreams { master_seed: splitmix(self.master_seed ^ splitmix(label)) }
    }

    /// Generator for `(kind, index, iteration)`. Fresh per call: draws at
    /// one address never disturb another address.
    pub fn rng(&self, kind: StreamKind, index: u64, iteration: u64) -> ChaCha8Rng {
        let mut h = self.master_seed;
        for part in [kind as u64, index, iteration] {
            h = splitmix(h ^ splitmix(part));
        }
        ChaCha8Rng::seed_from_u64(h)
    }

    /// Edge index packing for link streams.
    pub fn edge_index(i: usize, j: usize) -> u64 {
        ((i as u64) << 32) | j as u64
    }

    fn bernoulli(&self, kind: StreamKind, index: u64, iteration: u64, p: f64) -> f64 {
        // p = 1 must fire surely so always-on profiles match Always schedules
        if p >= 1.0 {
            return 1.0;
        }
        let mut rng = self.rng(kind, index, iteration);
        if rng.random::<f64>() < p {
            1.0
        } else {
            0.0
        }
    }
}

/// Event schedule for one class of events (computation or communication).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// Draw from the profile's Bernoulli probabilities.
    Bernoulli,
    /// Fire iff `k ≡ phase (mod period)`. `period = 1` is `Always`.
    Periodic { period: u64, phase: u64 },
    Always,
}

impl Schedule {
    fn periodic_on(&self, k: u64) -> Option<bool> {
        match self {
            Schedule::Bernoulli => None,
            Schedule::Periodic { period, phase } => Some(k % period == phase % period),
            Schedule::Always => Some(true),
        }
    }
}

/// Draw the iteration-`k` events under the given schedules.
pub fn sample_events(
    comp: Schedule,
    comm: Schedule,
    g: &Digraph,
    profile: &SporadicityProfile,
    k: u64,
    streams: &RngStreams,
) -> EventDraw {
    let m = g.m();
    let mut v = Array1::zeros(m);
    for i in 0..m {
        v[i] = match comp.periodic_on(k) {
            Some(on) => on as u8 as f64,
            None => streams.bernoulli(StreamKind::Compute, i as u64, k, profile.p[i]),
        };
    }
    let mut v_hat = Array2::zeros((m, m));
    for (i, j) in g.edges() {
        v_hat[[i, j]] = match comm.periodic_on(k) {
            Some(on) => on as u8 as f64,
            None => streams.bernoulli(
                StreamKind::Link,
                RngStreams::edge_index(i, j),
                k,
                profile.p_hat[[i, j]],
            ),
        };
    }
    EventDraw { v, v_hat }
}

/// Realize the sporadic mixing matrices for one draw:
/// `â⁽ᵏ⁾_ij = a_ij v̂_ij` off the diagonal with the row residual on the
/// diagonal, and `b̂⁽ᵏ⁾` with the column residual. Row/column stochastic for
/// every draw, identity when all links are silent.
pub fn realize_matrices(pair: &MixingPair, draw: &EventDraw) -> (Array2<f64>, Array2<f64>) {
    let m = pair.a.nrows();
    let mut a_k = Array2::zeros((m, m));
    let mut b_k = Array2::zeros((m, m));
    for i in 0..m {
        let mut row_mass = 0.0;
        let mut col_mass = 0.0;
        for j in 0..m {
            if j == i {
                continue;
            }
            a_k[[i, j]] = pair.a[[i, j]] * draw.v_hat[[i, j]];
            row_mass += a_k[[i, j]];
            b_k[[j, i]] = pair.b[[j, i]] * draw.v_hat[[j, i]];
            col_mass += b_k[[j, i]];
        }
        a_k[[i, i]] = 1.0 - row_mass;
        b_k[[i, i]] = 1.0 - col_mass;
    }
    (a_k, b_k)
}

/// Draw a participation profile with `Beta(alpha, beta)` probabilities,
/// clamped into `[floor, 1]` to keep every probability strictly positive
/// (delay charges `v/p`, so an unclamped draw near zero is unbounded).
pub const DEFAULT_PROBABILITY_FLOOR: f64 = 0.05;

pub fn sample_profile_beta(
    g: &Digraph,
    alpha: f64,
    beta: f64,
    floor: f64,
    seed: u64,
) -> SporadicityProfile {
    assert!(alpha > 0.0 && beta > 0.0, "Beta parameters must be positive");
    assert!(floor > 0.0 && floor <= 1.0, "floor must lie in (0,1]");
    let dist = rand_distr::Beta::new(alpha, beta).expect("valid parameters");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = g.m();
    let p = Array1::from_vec(
        (0..m).map(|_| dist.sample(&mut rng).clamp(floor, 1.0)).collect::<Vec<f64>>(),
    );
    let mut p_hat = Array2::zeros((m, m));
    for i in 0..m {
        p_hat[[i, i]] = 1.0;
    }
    for (i, j) in g.edges() {
        p_hat[[i, j]] = dist.sample(&mut rng).clamp(floor, 1.0);
    }
    SporadicityProfile::new(g, p, p_hat).expect("clamped samples are valid probabilities")
}
