//! Monte-Carlo verification of the analysis inequalities.
//!
//! A suite instance freezes a reachable network state `(X, Ỹ)` of a small
//! quadratic task (exact constants). Each trial redraws the iteration's
//! randomness — computation events, mini-batches, link events, next-step
//! events — rebuilds `Y = Ỹ + Λ_v G`, applies one engine step, and records
//! every left-hand side of interest. The recorded means are compared against
//! right-hand sides evaluated from the constant sheet; a check passes when
//! `LHS ≤ RHS·(1 + 3σ/RHS + 1e-6)` with `σ` the standard error of the mean.
//!
//! The suite also re-derives the whole constant sheet with an independent
//! scalar-loop implementation and compares it entry by entry, so a corrupted
//! constant fails the run even where the probabilistic margins are wide.

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::digraph::{Digraph, GraphMetrics};
use crate::mixing::{
    build_mixing, constant_tables, root_in_unit_interval, Constants, ExpectedMixing, MixingPair,
    ProblemConstants, SporadicityProfile,
};
use crate::optim;
use crate::problems::{
    exact_quadratic_constants, make_synthetic, minibatch_gradient, Dataset, LossOracle, TaskSpec,
};
use crate::sporadic::{realize_matrices, EventDraw, RngStreams, StreamKind};

/// One verified inequality.
#[derive(Debug, Clone, Serialize)]
pub struct LemmaCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// Standard error of the Monte-Carlo mean on the left-hand side.
    pub sigma: f64,
    /// `RHS·(1 + 3σ/RHS + 1e-6) − LHS`; nonnegative iff the check passes.
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub trials: usize,
    pub checks: Vec<LemmaCheck>,
    pub all_pass: bool,
}

impl CheckReport {
    fn push(&mut self, name: &str, lhs: f64, rhs: f64, sigma: f64) {
        let tolerance = rhs + 3.0 * sigma + 1e-6 * rhs.abs();
        let margin = tolerance - lhs;
        let pass = lhs <= tolerance;
        self.all_pass &= pass;
        self.checks.push(LemmaCheck { name: name.to_string(), lhs, rhs, sigma, margin, pass });
    }
}

/// Frozen instance for the suite: graph, profile, exact problem constants,
/// the constant sheet under test, and a reachable state `(X, Ỹ)` with
/// `1ᵀỸ = 0`.
pub struct SuiteInstance {
    pub g: Digraph,
    pub pair: MixingPair,
    pub profile: SporadicityProfile,
    pub metrics: GraphMetrics,
    pub em: ExpectedMixing,
    pub pc: ProblemConstants,
    pub constants: Constants,
    pub oracle: LossOracle,
    pub ds: Dataset,
    pub eta: Vec<f64>,
    pub x: Array2<f64>,
    pub y_base: Array2<f64>,
}

impl SuiteInstance {
    /// Default 4-client complete-graph instance with genuine sporadicity
    /// (`p̂ ∈ [0.85, 0.95]`, `p ∈ [0.5, 0.9]`), small enough that both
    /// effective radii stay below one.
    pub fn default_check_instance(seed: u64) -> Self {
        Self::complete_quadratic(seed, |edge_rank, n_edges| {
            0.85 + 0.1 * edge_rank as f64 / n_edges.max(1) as f64
        })
    }

    /// Criterion instance: every link probability sits at the admissible
    /// threshold `max(r̂_A, r̂_B)`. The graph is a sparse digraph rather
    /// than the complete one — uniform complete mixing reaches consensus in
    /// a single step, which would leave nothing for the contraction bound
    /// to measure.
    pub fn threshold_instance(seed: u64) -> Self {
        let g = crate::digraph::generate_rgg(4, 0.65, seed).unwrap();
        let probe = Self::quadratic_instance(seed, g.clone(), |_, _| 1.0);
        let q = probe.constants.r_a.max(probe.constants.r_b);
        Self::quadratic_instance(seed, g, move |_, _| q)
    }

    fn complete_quadratic(seed: u64, p_hat_of: impl Fn(usize, usize) -> f64) -> Self {
        Self::quadratic_instance(seed, Digraph::complete(4), p_hat_of)
    }

    fn quadratic_instance(seed: u64, g: Digraph, p_hat_of: impl Fn(usize, usize) -> f64) -> Self {
        let m = g.m();
        let pair = build_mixing(&g).unwrap();
        let metrics = crate::digraph::metrics(&g).unwrap();
        let n_edges = g.num_edges();
        let mut p_hat = Array2::zeros((m, m));
        for i in 0..m {
            p_hat[[i, i]] = 1.0;
        }
        for (rank, (i, j)) in g.edges().enumerate() {
            p_hat[[i, j]] = p_hat_of(rank, n_edges);
        }
        let p = Array1::from_vec((0..m).map(|i| 0.5 + 0.1 * (i % 5) as f64).collect());
        let profile = SporadicityProfile::new(&g, p, p_hat).unwrap();
        let (ds, oracle) = make_synthetic(&TaskSpec::Quadratic { l_target: 2.0 }, m, 3, 12, seed);
        Self::from_parts(g, pair, profile, metrics, ds, oracle, vec![4; m], vec![0.02; m], seed)
            .expect("default instance is feasible")
    }

    /// Build a suite instance from explicit parts. Fails when the effective
    /// radii are not contractive (the main-lemma constants would be
    /// meaningless) or the oracle is not quadratic.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        g: Digraph,
        pair: MixingPair,
        profile: SporadicityProfile,
        metrics: GraphMetrics,
        ds: Dataset,
        oracle: LossOracle,
        batch: Vec<usize>,
        eta: Vec<f64>,
        seed: u64,
    ) -> Result<Self, String> {
        if !matches!(oracle, LossOracle::Quadratic { .. }) {
            return Err("lemma suite requires the quadratic oracle".into());
        }
        let em = ExpectedMixing::build(&pair, &profile, &metrics).map_err(|e| e.to_string())?;
        let pc = exact_quadratic_constants(&oracle, &ds).with_batches(batch.clone());
        let constants = constant_tables(&pc, &em, &profile, &pair, &metrics);
        if !constants.feasible() {
            return Err(format!(
                "instance is not contractive: rho_tilde_A = {:.4}, rho_tilde_B = {:.4} \
                 (raise the link probabilities or densify the graph)",
                constants.rho_tilde_a, constants.rho_tilde_b
            ));
        }

        // reach a state by running a few sporadic steps, then strip the
        // masked gradient so the per-trial tracker can be rebuilt
        let streams = RngStreams::new(seed ^ 0x5157_u64);
        let cfg = optim::AlgoConfig {
            variant: optim::Variant::SpodGt,
            eta: eta.clone(),
            batch,
            max_iter: 3,
            log_stride: 1,
            x0: optim::X0Spec::PerClientGaussian,
            kgt_interval: None,
        };
        let mut last: Option<optim::AlgoState> = None;
        optim::run(&cfg, &g, &pair, &profile, &oracle, &ds, &streams, |state, _| {
            last = Some(state.clone());
        })
        .map_err(|e| e.to_string())?;
        let state = last.unwrap();
        let y_base = &state.y - &state.g_prev_masked;

        Ok(SuiteInstance {
            g,
            pair,
            profile,
            metrics,
            em,
            pc,
            constants,
            oracle,
            ds,
            eta,
            x: state.x,
            y_base,
        })
    }

    pub fn batch(&self) -> Vec<usize> {
        self.pc.b.clone()
    }
}

fn weighted_row_norm_sq(mat: &Array2<f64>, w: &Array1<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..mat.nrows() {
        let r = mat.row(i);
        acc += w[i] * r.dot(&r);
    }
    acc
}

fn x_consensus_err(x: &Array2<f64>, phi: &Array1<f64>) -> f64 {
    let x_bar = phi.dot(x);
    let mut acc = 0.0;
    for i in 0..x.nrows() {
        let d = &x.row(i) - &x_bar;
        acc += phi[i] * d.dot(&d);
    }
    acc
}

fn y_consensus_err(y: &Array2<f64>, pi: &Array1<f64>) -> f64 {
    let m = y.nrows();
    let y_bar = y.sum_axis(ndarray::Axis(0)) / m as f64;
    let mut acc = 0.0;
    for i in 0..m {
        let d = &y.row(i).mapv(|v| v / pi[i]) - &(&y_bar * m as f64);
        acc += pi[i] * d.dot(&d);
    }
    acc
}

#[derive(Default, Clone, Copy)]
struct Acc {
    sum: f64,
    sumsq: f64,
    n: usize,
}

impl Acc {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.sumsq += v * v;
        self.n += 1;
    }
    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }
    /// Standard error of the mean.
    fn sem(&self) -> f64 {
        let n = self.n as f64;
        let var = (self.sumsq / n - (self.sum / n).powi(2)).max(0.0);
        (var / n).sqrt()
    }
}

/// Run every implemented inequality on the instance. `constants` is the
/// sheet under test (normally `inst.constants`; the fault-injection hook
/// passes a corrupted copy).
pub fn lemma_bound_suite(
    inst: &SuiteInstance,
    constants: &Constants,
    trials: usize,
    streams: &RngStreams,
) -> CheckReport {
    assert!(trials >= 100, "Monte-Carlo suite needs a sane trial count");
    let m = inst.g.m();
    let mf = m as f64;
    let c = constants;
    let pc = &inst.pc;
    let em = &inst.em;
    let phi = &em.phi;
    let pi = &em.pi;
    let batch = inst.batch();
    let eta_max = inst.eta.iter().copied().fold(0.0f64, f64::max);

    // fixed quantities of the frozen state
    let x_bar = phi.dot(&inst.x);
    let xerr = x_consensus_err(&inst.x, phi);
    let grad_x_bar = inst.oracle.global_gradient(&inst.ds, &x_bar);
    let gradsq = grad_x_bar.dot(&grad_x_bar);
    let loss0 = inst.oracle.global_loss(&inst.ds, &x_bar);
    let local_grads: Vec<Array1<f64>> =
        (0..m).map(|i| inst.oracle.local_gradient(&inst.ds, i, &inst.x.row(i).to_owned())).collect();
    let grads_at_bar: Vec<Array1<f64>> =
        (0..m).map(|i| inst.oracle.local_gradient(&inst.ds, i, &x_bar)).collect();

    // per-client shorthand
    let s = |i: usize| pc.variance_factor(i);
    let p = |i: usize| inst.profile.p[i];
    let ov = |f: &dyn Fn(usize) -> f64| (0..m).map(f).sum::<f64>() / mf;

    let mut ge1 = Acc::default();
    let mut ge2 = Acc::default();
    let mut ge3 = Acc::default();
    let mut ybar2 = Acc::default();
    let mut ypinorm = Acc::default();
    let mut yerr = Acc::default();
    let mut identity_gap = Acc::default();
    let mut desc3 = Acc::default();
    let mut exp_b_lhs = Acc::default();
    let mut spor_a = Acc::default();
    let mut spor_b = Acc::default();
    let mut te1 = Acc::default();
    let mut te2 = Acc::default();
    let mut te3 = Acc::default();
    let mut xerr2 = Acc::default();
    let mut yerr2 = Acc::default();
    let mut gc = Acc::default();
    let mut loss2 = Acc::default();
    let mut mean_a_k = Array2::<f64>::zeros((m, m));
    let mut mean_b_k = Array2::<f64>::zeros((m, m));

    let n = inst.ds.dim();
    for t in 0..trials {
        let t64 = t as u64;
        // iteration-k computation events and mini-batches
        let mut v1 = vec![0.0f64; m];
        {
            use rand::Rng;
            let mut rng = streams.rng(StreamKind::Trial, 0, t64);
            for (i, v) in v1.iter_mut().enumerate() {
                *v = if rng.random::<f64>() < p(i) { 1.0 } else { 0.0 };
            }
        }
        let mut mg1 = Array2::zeros((m, n));
        for i in 0..m {
            if v1[i] == 1.0 {
                let mut rng = streams.rng(StreamKind::Trial, 100 + i as u64, t64);
                let g = minibatch_gradient(
                    &inst.oracle,
                    &inst.ds,
                    i,
                    &inst.x.row(i).to_owned(),
                    batch[i],
                    &mut rng,
                );
                mg1.row_mut(i).assign(&g.value);
            }
        }
        let y = &inst.y_base + &mg1;
        let g_v_bar = mg1.sum_axis(ndarray::Axis(0)) / mf;

        // gradient-discrepancy chain
        let mut masked_local = Array1::<f64>::zeros(n);
        let mut masked_at_bar = Array1::<f64>::zeros(n);
        for i in 0..m {
            if v1[i] == 1.0 {
                masked_local += &local_grads[i];
                masked_at_bar += &grads_at_bar[i];
            }
        }
        masked_local /= mf;
        masked_at_bar /= mf;
        let d = &g_v_bar - &masked_local;
        ge1.push(d.dot(&d));
        let d = &masked_local - &masked_at_bar;
        ge2.push(d.dot(&d));
        let d = &masked_at_bar - &grad_x_bar;
        ge3.push(d.dot(&d));
        ybar2.push(g_v_bar.dot(&g_v_bar));

        let ypin = weighted_row_norm_sq(&y, &pi.mapv(|v| 1.0 / v));
        let ye = y_consensus_err(&y, pi);
        ypinorm.push(ypin);
        yerr.push(ye);
        identity_gap.push((ypin - (ye + mf * mf * g_v_bar.dot(&g_v_bar))).abs());

        // iteration-k link events
        let mut v_hat = Array2::zeros((m, m));
        {
            use rand::Rng;
            let mut rng = streams.rng(StreamKind::Trial, 1, t64);
            for (i, j) in inst.g.edges() {
                if rng.random::<f64>() < inst.profile.p_hat[[i, j]] {
                    v_hat[[i, j]] = 1.0;
                }
            }
        }
        let draw = EventDraw { v: Array1::from_vec(v1.clone()), v_hat };
        let (a_k, b_k) = realize_matrices(&inst.pair, &draw);
        mean_a_k += &a_k;
        mean_b_k += &b_k;

        // descent deviation: ‖Λ_η B̂⁽ᵏ⁾Y − 1 φ̂ᵀΛ_η B̂⁽ᵏ⁾Y‖²_φ̂
        let by = b_k.dot(&y);
        let mut eta_by = Array2::zeros((m, n));
        for i in 0..m {
            eta_by.row_mut(i).assign(&(&by.row(i) * inst.eta[i]));
        }
        let proj = phi.dot(&eta_by);
        let mut dev = 0.0;
        for i in 0..m {
            let di = &eta_by.row(i) - &proj;
            dev += phi[i] * di.dot(&di);
        }
        desc3.push(dev);

        // expected-matrix contraction on the trial tracker
        let b_hat_y = em.b_hat.dot(&y);
        exp_b_lhs.push(y_consensus_err(&b_hat_y, pi));

        // sporadic contraction
        let a_k_x = a_k.dot(&inst.x);
        let mut lhs = 0.0;
        for i in 0..m {
            let di = &a_k_x.row(i) - &x_bar;
            lhs += phi[i] * di.dot(&di);
        }
        spor_a.push(lhs);
        spor_b.push(y_consensus_err(&b_k.dot(&y), pi));

        // sporadic deviation from the expectation
        let diff = (&a_k - &em.a_hat).dot(&inst.x);
        te1.push(weighted_row_norm_sq(&diff, phi));

        // one full engine step
        let mut x2 = a_k.dot(&inst.x);
        for i in 0..m {
            let scaled = &by.row(i) * inst.eta[i];
            let mut row = x2.row_mut(i);
            row -= &scaled;
        }
        let mut v2 = vec![0.0f64; m];
        {
            use rand::Rng;
            let mut rng = streams.rng(StreamKind::Trial, 2, t64);
            for (i, v) in v2.iter_mut().enumerate() {
                *v = if rng.random::<f64>() < p(i) { 1.0 } else { 0.0 };
            }
        }
        let mut mg2 = Array2::zeros((m, n));
        for i in 0..m {
            if v2[i] == 1.0 {
                let mut rng = streams.rng(StreamKind::Trial, 200 + i as u64, t64);
                let g = minibatch_gradient(
                    &inst.oracle,
                    &inst.ds,
                    i,
                    &x2.row(i).to_owned(),
                    batch[i],
                    &mut rng,
                );
                mg2.row_mut(i).assign(&g.value);
            }
        }
        let y2 = &by + &mg2 - &mg1;

        let x2_bar = phi.dot(&x2);
        let dbar = &x2_bar - &x_bar;
        te2.push(dbar.dot(&dbar));
        let dg = &mg2 - &mg1;
        te3.push(dg.iter().map(|v| v * v).sum());
        xerr2.push(x_consensus_err(&x2, phi));
        yerr2.push(y_consensus_err(&y2, pi));

        // tracker-vs-gradient gap
        let mut gap = 0.0;
        for i in 0..m {
            let di = &b_k.dot(&y).row(i).mapv(|v| v / pi[i]) - &(&grad_x_bar * mf);
            gap += pi[i] * di.dot(&di);
        }
        gc.push(gap);

        loss2.push(inst.oracle.global_loss(&inst.ds, &x2_bar));
    }

    mean_a_k /= trials as f64;
    mean_b_k /= trials as f64;

    let mut report = CheckReport { trials, checks: Vec::new(), all_pass: true };

    // gradient discrepancy chain
    let rhs = ov(&|i| pc.sigma0[i].powi(2) * p(i) * s(i))
        + 2.0 * pc.l_bar.powi(2) / mf
            * (0..m)
                .map(|i| pc.sigma1[i].powi(2) * p(i) * s(i) / phi[i])
                .fold(0.0f64, f64::max)
            * xerr
        + 2.0 * ov(&|i| pc.sigma1[i].powi(2) * p(i) * s(i)) * gradsq;
    report.push("gradient_discrepancy_sampling", ge1.mean(), rhs, ge1.sem());

    let rhs = (0..m).map(|i| p(i) / phi[i] * pc.l[i].powi(2)).fold(0.0f64, f64::max) / mf * xerr;
    report.push("gradient_discrepancy_lipschitz", ge2.mean(), rhs, ge2.sem());

    let rhs = ov(&|i| (1.0 - p(i)) * pc.delta0[i].powi(2))
        + ov(&|i| (1.0 - p(i)) * pc.delta1[i].powi(2)) * gradsq;
    report.push("gradient_discrepancy_participation", ge3.mean(), rhs, ge3.sem());

    // tracker average bound
    let rhs = ov(&|i| pc.sigma0[i].powi(2) * p(i) * s(i))
        + 3.0 * ov(&|i| (1.0 - p(i)) * pc.delta0[i].powi(2))
        + c.kappa1 / mf * xerr
        + c.kappa2 * gradsq;
    report.push("tracker_average_bound", ybar2.mean(), rhs, ybar2.sem());

    // exact norm decomposition
    let rhs = yerr.mean() + mf * mf * ybar2.mean();
    report.push("tracker_norm_identity", ypinorm.mean(), rhs, identity_gap.mean().max(1e-15));

    // descent deviation
    let rhs = c.kappa3 * eta_max.powi(2) * ypinorm.mean();
    report.push("descent_deviation_bound", desc3.mean(), rhs, desc3.sem());

    // expected-matrix contraction (model side is deterministic)
    let a_hat_x = em.a_hat.dot(&inst.x);
    let mut lhs = 0.0;
    for i in 0..m {
        let d = &a_hat_x.row(i) - &x_bar;
        lhs += phi[i] * d.dot(&d);
    }
    report.push("expected_contraction_model", lhs, c.rho_a * xerr, 0.0);
    report.push("expected_contraction_tracker", exp_b_lhs.mean(), c.rho_b * yerr.mean(), exp_b_lhs.sem());

    // sporadic contraction
    report.push(
        "sporadic_contraction_model",
        spor_a.mean(),
        (c.rho_a + c.rho0_a) * xerr,
        spor_a.sem(),
    );
    report.push(
        "sporadic_contraction_tracker",
        spor_b.mean(),
        (c.rho_b + c.rho0_b) * yerr.mean() + mf * mf * c.rho0_b * ybar2.mean(),
        spor_b.sem(),
    );

    // update effects
    report.push("sporadic_model_deviation", te1.mean(), c.rho0_a * xerr, te1.sem());
    let rhs = c.rho0_a * xerr + c.kappa3 * eta_max.powi(2) * ypinorm.mean();
    report.push("average_model_step", te2.mean(), rhs, te2.sem());
    let rhs = 2.0 * mf * ov(&|i| p(i) * (pc.sigma0[i].powi(2) * s(i) + 5.0 * (1.0 - p(i)) * pc.delta0[i].powi(2)))
        + c.kappa4 * (xerr2.mean() + xerr)
        + 3.0 * mf
            * ov(&|i| p(i) * (2.0 * pc.sigma1[i].powi(2) * s(i) + 5.0 * (1.0 - p(i)) * pc.delta1[i].powi(2)))
            * gradsq
        + mf * c.kappa5 * te2.mean();
    report.push("gradient_refresh_bound", te3.mean(), rhs, te3.sem());

    // tracker-vs-gradient gap
    let noise0 = ov(&|i| pc.sigma0[i].powi(2) * p(i) * s(i))
        + 3.0 * ov(&|i| (1.0 - p(i)) * pc.delta0[i].powi(2));
    let rhs = 3.0 * (c.rho_b + c.rho0_b) * yerr.mean()
        + mf * mf * (1.0 + 3.0 * c.rho0_b) * noise0
        + mf * (1.0 + 3.0 * c.rho0_b) * c.kappa1 * xerr
        + mf * mf
            * (2.0 * ov(&|i| pc.sigma1[i].powi(2) * p(i) * s(i))
                + 3.0 * ov(&|i| (1.0 - p(i)) * pc.delta1[i].powi(2))
                + 3.0 * c.rho0_b * c.kappa2)
            * gradsq;
    report.push("tracker_gradient_gap", gc.mean(), rhs, gc.sem());

    // consensus recursions and loss descent
    let sys = super::psi_system(c, pc, em, &inst.profile, &inst.eta);
    let rhs = sys.psi[0][0] * xerr + sys.psi[0][1] * yerr.mean() + sys.gamma[0] * gradsq + sys.omega[0];
    report.push("model_consensus_recursion", xerr2.mean(), rhs, xerr2.sem());
    let rhs = sys.psi[1][0] * xerr + sys.psi[1][1] * yerr.mean() + sys.gamma[1] * gradsq + sys.omega[1];
    report.push("tracker_consensus_recursion", yerr2.mean(), rhs, yerr2.sem());
    let rhs = loss0 - sys.gamma0 * gradsq
        + sys.psi0[0] * xerr
        + sys.psi0[1] * yerr.mean()
        + sys.omega0;
    report.push("loss_descent_recursion", loss2.mean(), rhs, loss2.sem());

    // expected-matrix Monte-Carlo check: element-wise mean within 4σ/√N
    let mut sigma_max = 0.0f64;
    for i in 0..m {
        let mut var_a_diag = 0.0;
        let mut var_b_diag = 0.0;
        for j in 0..m {
            if i == j {
                continue;
            }
            let ph_ij = inst.profile.p_hat[[i, j]];
            let ph_ji = inst.profile.p_hat[[j, i]];
            sigma_max = sigma_max.max(inst.pair.a[[i, j]] * (ph_ij * (1.0 - ph_ij)).sqrt());
            sigma_max = sigma_max.max(inst.pair.b[[i, j]] * (ph_ij * (1.0 - ph_ij)).sqrt());
            var_a_diag += inst.pair.a[[i, j]].powi(2) * ph_ij * (1.0 - ph_ij);
            var_b_diag += inst.pair.b[[j, i]].powi(2) * ph_ji * (1.0 - ph_ji);
        }
        sigma_max = sigma_max.max(var_a_diag.sqrt()).max(var_b_diag.sqrt());
    }
    let band = 4.0 * sigma_max / (trials as f64).sqrt();
    let dev_a =
        (&mean_a_k - &em.a_hat).iter().map(|v| v.abs()).fold(0.0, f64::max);
    let dev_b =
        (&mean_b_k - &em.b_hat).iter().map(|v| v.abs()).fold(0.0, f64::max);
    report.push("expected_matrix_mean_model", dev_a, band, 0.0);
    report.push("expected_matrix_mean_tracker", dev_b, band, 0.0);

    // transition-system consistency against the independent re-evaluation
    let reference = reference_constants(pc, em, &inst.profile, &inst.pair, &inst.metrics);
    let ref_sys = reference_psi_system(&reference, pc, em, &inst.profile, &inst.eta);
    let mut worst_psi = 0.0f64;
    for (got, want) in [
        (sys.psi[0][0], ref_sys.psi[0][0]),
        (sys.psi[0][1], ref_sys.psi[0][1]),
        (sys.psi[1][0], ref_sys.psi[1][0]),
        (sys.psi[1][1], ref_sys.psi[1][1]),
        (sys.gamma[0], ref_sys.gamma[0]),
        (sys.gamma[1], ref_sys.gamma[1]),
        (sys.omega[0], ref_sys.omega[0]),
        (sys.omega[1], ref_sys.omega[1]),
        (sys.psi0[0], ref_sys.psi0[0]),
        (sys.psi0[1], ref_sys.psi0[1]),
        (sys.gamma0, ref_sys.gamma0),
        (sys.omega0, ref_sys.omega0),
    ] {
        let rel = if got == want { 0.0 } else { (got - want).abs() / want.abs().max(1e-300) };
        worst_psi = worst_psi.max(rel);
    }
    report.push("psi_system_consistency", worst_psi, 1e-9, 0.0);

    // constant-sheet consistency against the independent re-evaluation
    let mut worst = 0.0f64;
    for (got, want) in [
        (c.kappa1, reference.kappa1),
        (c.kappa2, reference.kappa2),
        (c.kappa3, reference.kappa3),
        (c.kappa4, reference.kappa4),
        (c.kappa5, reference.kappa5),
        (c.kappa6, reference.kappa6),
        (c.kappa7, reference.kappa7),
        (c.kappa8, reference.kappa8),
        (c.kappa9, reference.kappa9),
        (c.kappa10, reference.kappa10),
        (c.rho_tilde_a, reference.rho_tilde_a),
        (c.rho_tilde_b, reference.rho_tilde_b),
        (c.rho0_a, reference.rho0_a),
        (c.rho0_b, reference.rho0_b),
        (c.tau_a, reference.tau_a),
        (c.tau_b, reference.tau_b),
        (c.r_a, reference.r_a),
        (c.r_b, reference.r_b),
    ] {
        let rel = if got == want { 0.0 } else { (got - want).abs() / want.abs().max(1e-300) };
        worst = worst.max(rel);
    }
    report.push("constants_consistency", worst, 1e-9, 0.0);

    report
}

/// Independent re-evaluation of the constant sheet: scalar loops only, no
/// shared helpers with the primary implementation.
pub fn reference_constants(
    pc: &ProblemConstants,
    em: &ExpectedMixing,
    profile: &SporadicityProfile,
    pair: &MixingPair,
    metrics: &GraphMetrics,
) -> Constants {
    let m = em.m();
    let mf = m as f64;
    let mut phi_min = f64::INFINITY;
    let mut phi_max = f64::NEG_INFINITY;
    let mut pi_min = f64::INFINITY;
    let mut pi_max = f64::NEG_INFINITY;
    for i in 0..m {
        phi_min = phi_min.min(em.phi[i]);
        phi_max = phi_max.max(em.phi[i]);
        pi_min = pi_min.min(em.pi[i]);
        pi_max = pi_max.max(em.pi[i]);
    }

    let sfac =
        |i: usize| (1.0 - pc.b[i] as f64 / pc.d[i] as f64) / pc.b[i] as f64;

    let mut kappa1 = f64::NEG_INFINITY;
    let mut kappa4 = f64::NEG_INFINITY;
    let mut kappa8 = f64::NEG_INFINITY;
    for i in 0..m {
        let variance_part = 2.0 * sfac(i) * pc.sigma1[i] * pc.sigma1[i] * pc.l_bar * pc.l_bar;
        kappa1 = kappa1.max(profile.p[i] / em.phi[i] * (variance_part + 3.0 * pc.l[i] * pc.l[i]));
        kappa4 = kappa4.max(profile.p[i] / em.phi[i] * (variance_part + 5.0 * pc.l[i] * pc.l[i]));
        kappa8 = kappa8.max(profile.p[i] * (variance_part + 3.0 * pc.l[i] * pc.l[i]));
    }

    let mut acc_s1 = 0.0;
    let mut acc_d1 = 0.0;
    let mut acc_mix = 0.0;
    let mut acc_p2l2 = 0.0;
    for i in 0..m {
        acc_s1 += pc.sigma1[i] * pc.sigma1[i] * profile.p[i] * sfac(i);
        acc_d1 += (1.0 - profile.p[i]) * pc.delta1[i] * pc.delta1[i];
        acc_mix += profile.p[i]
            * (2.0 * pc.sigma1[i] * pc.sigma1[i] * sfac(i)
                + 5.0 * (1.0 - profile.p[i]) * pc.delta1[i] * pc.delta1[i]);
        acc_p2l2 += profile.p[i] * profile.p[i] * pc.l[i] * pc.l[i];
    }
    let kappa2 = 2.0 * acc_s1 / mf + 3.0 * acc_d1 / mf + 3.0;
    let kappa5 = 2.0 * acc_mix / mf * pc.l_bar * pc.l_bar + 5.0 * acc_p2l2 / mf;

    let mut col_term = f64::NEG_INFINITY;
    for j in 0..m {
        let mut col = 0.0;
        for l in 0..m {
            let ph = if l == j { 1.0 } else { profile.p_hat[[l, j]] };
            col += pair.b[[l, j]] * pair.b[[l, j]] * ph * (1.0 - ph);
        }
        col_term = col_term.max(em.pi[j] * col / mf);
    }
    let kappa3 = phi_max * (pi_max * pi_max / pi_min + 2.0 * mf * col_term);

    let mut max_var_a = 0.0f64;
    let mut max_var_b = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let ph = profile.p_hat[[i, j]];
            max_var_a = max_var_a.max(pair.a[[i, j]] * pair.a[[i, j]] * ph * (1.0 - ph));
            max_var_b = max_var_b.max(pair.b[[i, j]] * pair.b[[i, j]] * ph * (1.0 - ph));
        }
    }
    let rho0_a = 4.0 * (mf - 1.0) * phi_max / phi_min * max_var_a;
    let rho0_b = 2.0 * (mf - 1.0) * pi_max / pi_min * max_var_b;
    let rho_tilde_a = em.rho_a + 2.0 * rho0_a;
    let rho_tilde_b = em.rho_b + rho0_b;
    let kappa6 = (1.0 + em.rho_a) / (1.0 - rho_tilde_a);
    let kappa7 = 2.0 * (mf + 1.0) * (1.0 + rho_tilde_b) / (1.0 - rho_tilde_b);
    let kappa9 = if rho_tilde_b > 0.0 {
        (mf * (1.0 + 3.0 * rho0_b) / (3.0 * kappa7 * rho_tilde_b) + 1.0) * kappa4 * kappa6
            + kappa5 / mf
    } else {
        f64::INFINITY
    };
    let mut prod_max = f64::NEG_INFINITY;
    for i in 0..m {
        prod_max = prod_max.max(em.phi[i] * em.pi[i]);
    }
    let kappa10 = 8.0 / (3.0 * kappa2 * kappa3) * prod_max / phi_max;

    let (tau_a, tau_b, r_a, r_b) = if m == 1 {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        let mut a_min = f64::INFINITY;
        let mut a_max = f64::NEG_INFINITY;
        let mut b_min = f64::INFINITY;
        let mut b_max = f64::NEG_INFINITY;
        for i in 0..m {
            for j in 0..m {
                if pair.a[[i, j]] > 0.0 {
                    a_min = a_min.min(pair.a[[i, j]]);
                    a_max = a_max.max(pair.a[[i, j]]);
                }
                if pair.b[[i, j]] > 0.0 {
                    b_min = b_min.min(pair.b[[i, j]]);
                    b_max = b_max.max(pair.b[[i, j]]);
                }
            }
        }
        let dk = (metrics.diameter * metrics.edge_utility) as f64;
        let tau_a =
            16.0 * mf * mf * (mf - 1.0) * dk * a_max * a_max / a_min.powi(2 * (m as i32 + 1));
        let tau_b = 4.0 * mf * mf * mf * (mf - 1.0) * dk * b_max * b_max
            / b_min.powi(3 * m as i32 + 2);
        (
            tau_a,
            tau_b,
            root_in_unit_interval(2 * (m as i32 + 1), tau_a),
            root_in_unit_interval(3 * m as i32 + 2, tau_b),
        )
    };

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
        rho0_a,
        rho0_b,
        rho_tilde_a,
        rho_tilde_b,
        tau_a,
        tau_b,
        r_a,
        r_b,
    }
}

/// Independent re-evaluation of the transition-system rows, written as
/// explicit per-client accumulations.
pub fn reference_psi_system(
    c: &Constants,
    pc: &ProblemConstants,
    em: &ExpectedMixing,
    profile: &SporadicityProfile,
    eta: &[f64],
) -> super::PsiSystem {
    let m = em.m();
    let mf = m as f64;
    let mut eta_max = 0.0f64;
    for &e in eta {
        eta_max = eta_max.max(e);
    }
    let e2 = eta_max * eta_max;
    let sfac = |i: usize| (1.0 - pc.b[i] as f64 / pc.d[i] as f64) / pc.b[i] as f64;

    let mut noise0 = 0.0;
    let mut mix1 = 0.0;
    let mut mix0 = 0.0;
    for i in 0..m {
        let p = profile.p[i];
        noise0 += pc.sigma0[i] * pc.sigma0[i] * p * sfac(i)
            + 3.0 * (1.0 - p) * pc.delta0[i] * pc.delta0[i];
        mix1 += p
            * (2.0 * pc.sigma1[i] * pc.sigma1[i] * sfac(i)
                + 5.0 * (1.0 - p) * pc.delta1[i] * pc.delta1[i]);
        mix0 += p
            * (pc.sigma0[i] * pc.sigma0[i] * sfac(i)
                + 5.0 * (1.0 - p) * pc.delta0[i] * pc.delta0[i]);
    }
    noise0 /= mf;
    mix1 /= mf;
    mix0 /= mf;

    let psi11 = (1.0 + c.rho_tilde_a) / 2.0 + mf * c.kappa1 * c.kappa6 * c.kappa3 * e2;
    let psi12 = c.kappa6 * c.kappa3 * e2;
    let gamma1 = mf * mf * c.kappa2 * c.kappa6 * c.kappa3 * e2;
    let omega1 = mf * mf * noise0 * c.kappa6 * c.kappa3 * e2;
    let psi21 = c.kappa7 * c.kappa4 * (1.0 + psi11)
        + c.kappa7 * c.kappa5 * c.kappa3 * c.kappa1 * e2
        + mf * c.kappa7 * c.kappa5 * c.rho0_a;
    let psi22 =
        (1.0 + c.rho_tilde_b) / 2.0 + c.kappa7 * c.kappa4 * psi12 + mf * c.kappa7 * c.kappa5 * c.kappa3 * e2;
    let gamma2 = c.kappa7 * c.kappa4 * gamma1
        + 3.0 * mf * c.kappa7 * mix1
        + mf * c.kappa7 * c.kappa5 * c.kappa3 * c.kappa2 * e2;
    let omega2 = c.kappa7 * c.kappa4 * omega1
        + 2.0 * mf * c.kappa7 * mix0
        + mf * noise0 * c.kappa7 * c.kappa5 * c.kappa3 * e2;

    let mut phi_max = 0.0f64;
    for i in 0..m {
        phi_max = phi_max.max(em.phi[i]);
    }
    let psi01 = 0.5 * (1.0 + 3.0 * c.rho0_b) * c.kappa8 * eta_max;
    let psi02 = 1.5 * phi_max * c.rho_tilde_b / mf * eta_max;
    let mut gamma0 = 0.0;
    let mut omega0 = 0.0;
    for i in 0..m {
        let p = profile.p[i];
        gamma0 += em.phi[i]
            * eta[i]
            * (mf * em.pi[i]
                - 2.0 * pc.sigma1[i] * pc.sigma1[i] * p * sfac(i)
                - 3.0 * (1.0 - p) * pc.delta1[i] * pc.delta1[i]
                - 3.0 * c.rho0_b * c.kappa2);
        omega0 += em.phi[i]
            * eta[i]
            * (pc.sigma0[i] * pc.sigma0[i] * p * sfac(i)
                + 3.0 * (1.0 - p) * pc.delta0[i] * pc.delta0[i]);
    }
    gamma0 *= 0.5;
    omega0 *= 0.5 * (1.0 + 3.0 * c.rho0_b);

    super::PsiSystem {
        psi: [[psi11, psi12], [psi21, psi22]],
        gamma: [gamma1, gamma2],
        omega: [omega1, omega2],
        psi0: [psi01, psi02],
        gamma0,
        omega0,
    }
}
