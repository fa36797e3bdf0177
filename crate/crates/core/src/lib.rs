//! Simulator and analytical toolkit for sporadic gradient tracking (push-pull
//! consensus with Bernoulli client/link participation) over strongly connected
//! directed graphs.
//!
//! The crate has two halves that check each other:
//!
//! * an iteration engine ([`optim`]) that runs the sporadic push-pull update
//!   `X⁺ = Â⁽ᵏ⁾X − Λ_η B̂⁽ᵏ⁾Y`, `Y⁺ = B̂⁽ᵏ⁾Y + Λ_v G⁺ − Λ_v G` and its
//!   always-on / periodic baselines on synthetic tasks ([`problems`]), and
//! * a closed-form layer ([`mixing`], [`diagnostics`]) that computes every
//!   constant of the convergence analysis (Perron vectors, contraction radii,
//!   the κ tables, the 2×2 transition system, learning-rate and participation
//!   constraints) and verifies the analysis inequalities by Monte Carlo.
//!
//! Everything is deterministic in a single master seed: random draws are
//! addressed by `(seed, stream kind, index, iteration)` so replays and
//! thread counts never change results.

pub mod diagnostics;
pub mod digraph;
pub mod linalg;
pub mod mixing;
pub mod optim;
pub mod problems;
pub mod sporadic;

pub use diagnostics::{ConsensusError, DelayRecord, MetricsTrace, PsiSystem, TheoryReport};
pub use digraph::{Digraph, GraphMetrics};
pub use mixing::{Constants, ExpectedMixing, MixingPair, ProblemConstants, SporadicityProfile};
pub use optim::{AlgoConfig, AlgoState, Variant, X0Spec};
pub use problems::{Dataset, LossOracle};
pub use sporadic::{EventDraw, RngStreams, Schedule};
