//! Measurement of every analysis quantity: weighted averages, the two
//! consensus errors, the per-iteration delay model, the 2×2 transition
//! system with its spectral radius, the learning-rate ceiling, the
//! participation constraints, and (in [`lemmas`]) Monte-Carlo verification
//! of the analysis inequalities.

pub mod lemmas;

use ndarray::{Array1, Array2};
use serde::Serialize;
use thiserror::Error;

use crate::digraph::{Digraph, GraphMetrics};
use crate::mixing::{
    overline, Constants, ExpectedMixing, MixingPair, ProblemConstants, SporadicityProfile,
};
use crate::sporadic::EventDraw;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("infeasible sporadicity: {0}")]
    Infeasible(String),
}

/// `x̄_φ = φ̂ᵀX`, `ȳ = (1/m)1ᵀY`, `ḡ_v = (1/m)1ᵀ(Λ_v G)`.
pub fn weighted_averages(
    x: &Array2<f64>,
    y: &Array2<f64>,
    g_masked: &Array2<f64>,
    phi: &Array1<f64>,
) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
    let m = x.nrows() as f64;
    let x_bar = phi.dot(x);
    let y_bar = y.sum_axis(ndarray::Axis(0)) / m;
    let g_bar = g_masked.sum_axis(ndarray::Axis(0)) / m;
    (x_bar, y_bar, g_bar)
}

/// The two components of the consensus-error vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsensusError {
    /// `Σ_i φ̂_i ‖x_i − x̄_φ‖²`
    pub x_err: f64,
    /// `Σ_i π̂_i ‖y_i/π̂_i − m ȳ‖²`
    pub y_err: f64,
}

pub fn consensus_errors(
    x: &Array2<f64>,
    y: &Array2<f64>,
    phi: &Array1<f64>,
    pi: &Array1<f64>,
) -> ConsensusError {
    let m = x.nrows();
    let x_bar = phi.dot(x);
    let y_bar = y.sum_axis(ndarray::Axis(0)) / m as f64;
    let mut x_err = 0.0;
    let mut y_err = 0.0;
    for i in 0..m {
        let dx = &x.row(i) - &x_bar;
        x_err += phi[i] * dx.dot(&dx);
        let dy = &y.row(i).mapv(|v| v / pi[i]) - &(&y_bar * m as f64);
        y_err += pi[i] * dy.dot(&dy);
    }
    ConsensusError { x_err, y_err }
}

/// Per-iteration delay: active events charge the reciprocal of their
/// probability, so a rarely active but slow client amortizes to unit cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelayRecord {
    pub tau_in: f64,
    pub tau_proc: f64,
    pub tau_out: f64,
    pub tau_total: f64,
}

/// `τ̄_in = (1/m) Σ_i (1/|N_i^in|) Σ_j v̂_ij/p̂_ij` over in-links,
/// `τ̄_out` the same over out-links, `τ̄_proc = (1/m) Σ_i v_i/p_i`.
/// A single node has no links and pays no transmission delay.
pub fn delay_step(draw: &EventDraw, profile: &SporadicityProfile, g: &Digraph) -> DelayRecord {
    let m = g.m();
    let mut tau_in = 0.0;
    let mut tau_out = 0.0;
    let mut tau_proc = 0.0;
    for i in 0..m {
        tau_proc += draw.v[i] / profile.p[i];
        let in_n = g.in_neighbors(i);
        if !in_n.is_empty() {
            let s: f64 = in_n.iter().map(|&j| draw.v_hat[[i, j]] / profile.p_hat[[i, j]]).sum();
            tau_in += s / in_n.len() as f64;
        }
        let out_n = g.out_neighbors(i);
        if !out_n.is_empty() {
            let s: f64 = out_n.iter().map(|&j| draw.v_hat[[j, i]] / profile.p_hat[[j, i]]).sum();
            tau_out += s / out_n.len() as f64;
        }
    }
    let mf = m as f64;
    let (tau_in, tau_proc, tau_out) = (tau_in / mf, tau_proc / mf, tau_out / mf);
    DelayRecord { tau_in, tau_proc, tau_out, tau_total: tau_in + tau_proc + tau_out }
}

/// Aggregation interval for the periodic-communication baseline:
/// `K = ⌈(1/m) Σ_i 1/p_i⌉`.
pub fn kgt_interval(profile: &SporadicityProfile) -> u64 {
    let m = profile.m() as f64;
    let mean: f64 = profile.p.iter().map(|&p| 1.0 / p).sum::<f64>() / m;
    mean.ceil() as u64
}

/// One logged iteration of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub k: u64,
    pub loss: f64,
    pub grad_sq_norm: f64,
    pub x_err: f64,
    pub y_err: f64,
    pub tau_in: f64,
    pub tau_proc: f64,
    pub tau_out: f64,
    pub tau_total_cum: f64,
    pub accuracy: Option<f64>,
}

/// Full per-run trace plus run metadata.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsTrace {
    pub variant: String,
    pub master_seed: u64,
    pub rows: Vec<TraceRow>,
}

impl MetricsTrace {
    pub const CSV_HEADER: &'static str =
        "k,loss,grad_sq_norm,x_err,y_err,tau_in,tau_proc,tau_out,tau_total_cum,accuracy";

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let acc = r.accuracy.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.k,
                r.loss,
                r.grad_sq_norm,
                r.x_err,
                r.y_err,
                r.tau_in,
                r.tau_proc,
                r.tau_out,
                r.tau_total_cum,
                acc
            ));
        }
        out
    }

    /// Final cumulative delay (0 for an empty trace).
    pub fn final_delay(&self) -> f64 {
        self.rows.last().map(|r| r.tau_total_cum).unwrap_or(0.0)
    }
}

/// The 2×2 consensus transition system and the loss-descent coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiSystem {
    pub psi: [[f64; 2]; 2],
    pub gamma: [f64; 2],
    pub omega: [f64; 2],
    pub psi0: [f64; 2],
    pub gamma0: f64,
    pub omega0: f64,
}

/// Evaluate the transition system at per-client learning rates `eta`.
pub fn psi_system(
    c: &Constants,
    pc: &ProblemConstants,
    em: &ExpectedMixing,
    profile: &SporadicityProfile,
    eta: &[f64],
) -> PsiSystem {
    let m = em.m();
    let mf = m as f64;
    let eta_max = eta.iter().copied().fold(0.0f64, f64::max);
    let s = |i: usize| pc.variance_factor(i);
    let p = |i: usize| profile.p[i];
    let ov_s0 = overline((0..m).map(|i| pc.sigma0[i].powi(2) * p(i) * s(i)), m);
    let ov_d0 = overline((0..m).map(|i| (1.0 - p(i)) * pc.delta0[i].powi(2)), m);
    let noise0 = ov_s0 + 3.0 * ov_d0;

    let psi11 = (1.0 + c.rho_tilde_a) / 2.0 + mf * c.kappa1 * c.kappa6 * c.kappa3 * eta_max.powi(2);
    let psi12 = c.kappa6 * c.kappa3 * eta_max.powi(2);
    let gamma1 = mf * mf * c.kappa2 * c.kappa6 * c.kappa3 * eta_max.powi(2);
    let omega1 = mf * mf * noise0 * c.kappa6 * c.kappa3 * eta_max.powi(2);

    let psi21 = c.kappa7 * c.kappa4 * (1.0 + psi11)
        + c.kappa7 * c.kappa5 * c.kappa3 * c.kappa1 * eta_max.powi(2)
        + mf * c.kappa7 * c.kappa5 * c.rho0_a;
    let psi22 = (1.0 + c.rho_tilde_b) / 2.0
        + c.kappa7 * c.kappa4 * psi12
        + mf * c.kappa7 * c.kappa5 * c.kappa3 * eta_max.powi(2);
    let ov_mix1 = overline(
        (0..m).map(|i| {
            p(i) * (2.0 * pc.sigma1[i].powi(2) * s(i) + 5.0 * (1.0 - p(i)) * pc.delta1[i].powi(2))
        }),
        m,
    );
    let gamma2 = c.kappa7 * c.kappa4 * gamma1
        + 3.0 * mf * c.kappa7 * ov_mix1
        + mf * c.kappa7 * c.kappa5 * c.kappa3 * c.kappa2 * eta_max.powi(2);
    let ov_mix0 = overline(
        (0..m).map(|i| {
            p(i) * (pc.sigma0[i].powi(2) * s(i) + 5.0 * (1.0 - p(i)) * pc.delta0[i].powi(2))
        }),
        m,
    );
    let omega2 = c.kappa7 * c.kappa4 * omega1
        + 2.0 * mf * c.kappa7 * ov_mix0
        + mf * noise0 * c.kappa7 * c.kappa5 * c.kappa3 * eta_max.powi(2);

    let psi01 = 0.5 * (1.0 + 3.0 * c.rho0_b) * c.kappa8 * eta_max;
    let phi_max = em.phi.iter().copied().fold(0.0f64, f64::max);
    let psi02 = 3.0 * phi_max * c.rho_tilde_b / (2.0 * mf) * eta_max;
    let gamma0 = 0.5
        * mf
        * overline(
            (0..m).map(|i| {
                em.phi[i]
                    * eta[i]
                    * (mf * em.pi[i]
                        - 2.0 * pc.sigma1[i].powi(2) * p(i) * s(i)
                        - 3.0 * (1.0 - p(i)) * pc.delta1[i].powi(2)
                        - 3.0 * c.rho0_b * c.kappa2)
            }),
            m,
        );
    let omega0 = 0.5
        * mf
        * (1.0 + 3.0 * c.rho0_b)
        * overline(
            (0..m).map(|i| {
                em.phi[i]
                    * eta[i]
                    * (pc.sigma0[i].powi(2) * p(i) * s(i)
                        + 3.0 * (1.0 - p(i)) * pc.delta0[i].powi(2))
            }),
            m,
        );

    PsiSystem {
        psi: [[psi11, psi12], [psi21, psi22]],
        gamma: [gamma1, gamma2],
        omega: [omega1, omega2],
        psi0: [psi01, psi02],
        gamma0,
        omega0,
    }
}

/// Closed-form spectral radius of the nonnegative 2×2 transition matrix:
/// `ρ = ½(ψ₁₁ + ψ₂₂ + √((ψ₁₁−ψ₂₂)² + 4ψ₁₂ψ₂₁))`.
pub fn spectral_radius_psi(sys: &PsiSystem) -> f64 {
    let [[a, b], [c, d]] = sys.psi;
    0.5 * (a + d + ((a - d).powi(2) + 4.0 * b * c).sqrt())
}

/// Learning-rate ceiling: the minimum of the three bracketed terms, scaled
/// by `1/(2√κ₃)`. Any rate below it keeps `ρ(Ψ) < 1`.
pub fn lr_ceiling(c: &Constants, m: usize) -> Result<f64, TheoryError> {
    if !c.feasible() {
        return Err(TheoryError::Infeasible(format!(
            "rho_tilde_A = {:.6}, rho_tilde_B = {:.6}; both must be < 1 \
             (communication probabilities below max(r_A, r_B) = {:.6})",
            c.rho_tilde_a,
            c.rho_tilde_b,
            c.r_a.max(c.r_b)
        )));
    }
    let mf = m as f64;
    let shrink_a = (1.0 - c.rho_tilde_a) / (1.0 + c.rho_tilde_a).sqrt();
    let shrink_b = (1.0 - c.rho_tilde_b) / (1.0 + c.rho_tilde_b).sqrt();
    let t1 = shrink_a * shrink_b
        / (4.0 * (mf + 1.0).sqrt() * (2.0 * c.kappa4 + mf * c.kappa5 * c.rho0_a).sqrt());
    let t2 = (1.0 - c.rho_tilde_a).sqrt() / c.kappa5.sqrt();
    let t3 = shrink_b / (2.0 * (mf * (mf + 1.0)).sqrt() * c.kappa5.sqrt());
    Ok(t1.min(t2).min(t3) / (2.0 * c.kappa3.sqrt()))
}

/// Participation constraints and the loss-decrement coefficient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticipationConstraints {
    pub gamma1: f64,
    /// Minimum admissible computation probability per client (0 = any).
    pub p_min: Vec<f64>,
    /// Minimum admissible batch size per client.
    pub b_min: Vec<usize>,
    /// Links must satisfy `p̂ ≥ max(r̂_A, r̂_B, r̂'_B)`.
    pub p_hat_min: f64,
    pub r_prime_b: f64,
    /// Learning-rate bound from the loss-descent argument; `None` when the
    /// corresponding channel vanishes (`ρ̃_B = 0`).
    pub eta_bound: Option<f64>,
    /// Loss-decrement coefficient: descent is at least `q · max(η)` per step.
    pub q: f64,
}

pub fn participation_constraints(
    c: &Constants,
    pc: &ProblemConstants,
    em: &ExpectedMixing,
    pair: &MixingPair,
    rho_psi: f64,
    gamma2: f64,
    gamma3: f64,
) -> ParticipationConstraints {
    assert!(rho_psi < 1.0, "requires a contractive transition matrix");
    assert!(gamma2 > 1.0 && gamma3 > 1.0);
    let m = em.m();
    let mf = m as f64;
    let prod: Vec<f64> = (0..m).map(|i| em.phi[i] * em.pi[i]).collect();
    let prod_min = prod.iter().copied().fold(f64::INFINITY, f64::min);
    let prod_max = prod.iter().copied().fold(0.0f64, f64::max);
    let gamma1 = 1.0
        + 8.0 * gamma3 / mf * (prod_max / prod_min) * gamma2 * c.kappa7 * c.rho_tilde_b
            / (1.0 - rho_psi);

    let p_min: Vec<f64> = (0..m)
        .map(|i| {
            let d1 = pc.delta1[i].powi(2);
            if d1 == 0.0 {
                0.0
            } else {
                (1.0 - mf * em.pi[i] / (9.0 * gamma1 * d1)).max(0.0)
            }
        })
        .collect();
    let b_min: Vec<usize> = (0..m)
        .map(|i| {
            let s1 = pc.sigma1[i].powi(2);
            if s1 == 0.0 {
                1
            } else {
                let d = pc.d[i] as f64;
                let raw = d / (1.0 + mf * em.pi[i] * d / (6.0 * gamma1 * s1));
                (raw.ceil() as usize).clamp(1, pc.d[i])
            }
        })
        .collect();
    let r_prime_b = c.r_prime_b(pair, &em.pi, gamma1);
    let p_hat_min = c.r_a.max(c.r_b).max(r_prime_b);
    let eta_bound = if c.kappa9.is_finite() {
        Some(((1.0 - 1.0 / gamma3) / gamma1 * c.kappa10 / c.kappa9 * (1.0 - rho_psi)).sqrt())
    } else {
        None
    };
    let q = mf * mf / 2.0 * (1.0 - 1.0 / gamma1) * (1.0 - 1.0 / gamma2) / gamma3 * prod_min;
    ParticipationConstraints { gamma1, p_min, b_min, p_hat_min, r_prime_b, eta_bound, q }
}

/// Everything the theory pass produces, serialized as one flat JSON object.
#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub m: usize,
    pub diameter: usize,
    pub edge_utility: usize,
    pub feasible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infeasibility: Option<String>,
    #[serde(flatten)]
    pub constants: Constants,
    #[serde(rename = "r_prime_B")]
    pub r_prime_b: Option<f64>,
    pub phi: Vec<f64>,
    pub pi: Vec<f64>,
    pub eta_max_prop1: Option<f64>,
    pub eta_max_prop2: Option<f64>,
    pub eta_max: Option<f64>,
    pub rho_psi: Option<f64>,
    pub q: Option<f64>,
    pub gamma1: Option<f64>,
    pub gamma2: f64,
    pub gamma3: f64,
    pub p_min: Option<Vec<f64>>,
    pub b_min: Option<Vec<usize>>,
    pub p_hat_min: Option<f64>,
    /// Gap coefficients of the stationarity bound: the η²-weighted term uses
    /// the factor-3 sporadicity average, the constant term the factor-5 one.
    pub gap_eta2_coeff: f64,
    pub gap_const_coeff: f64,
    pub best_loss_seen: Option<f64>,
}

pub struct TheoryContext<'a> {
    pub pair: &'a MixingPair,
    pub profile: &'a SporadicityProfile,
    pub em: &'a ExpectedMixing,
    pub metrics: &'a GraphMetrics,
    pub pc: &'a ProblemConstants,
    pub gamma2: f64,
    pub gamma3: f64,
    pub best_loss_seen: Option<f64>,
}

/// One-pass evaluation: constants, learning-rate ceiling, `ρ(Ψ)` at that
/// ceiling, then the participation constraints and the second learning-rate
/// bound. No fixed-point iteration.
pub fn theory_report(ctx: &TheoryContext) -> TheoryReport {
    let m = ctx.em.m();
    let c = crate::mixing::constant_tables(ctx.pc, ctx.em, ctx.profile, ctx.pair, ctx.metrics);
    let ov_s0 = overline(
        (0..m).map(|i| {
            ctx.pc.sigma0[i].powi(2) * ctx.profile.p[i] * ctx.pc.variance_factor(i)
        }),
        m,
    );
    let ov_d0 =
        overline((0..m).map(|i| (1.0 - ctx.profile.p[i]) * ctx.pc.delta0[i].powi(2)), m);
    let gap_eta2_coeff = ov_s0 + 3.0 * ov_d0;
    let gap_const_coeff = ov_s0 + 5.0 * ov_d0;

    let mut report = TheoryReport {
        m,
        diameter: ctx.metrics.diameter,
        edge_utility: ctx.metrics.edge_utility,
        feasible: c.feasible(),
        infeasibility: None,
        constants: c.clone(),
        r_prime_b: None,
        phi: ctx.em.phi.to_vec(),
        pi: ctx.em.pi.to_vec(),
        eta_max_prop1: None,
        eta_max_prop2: None,
        eta_max: None,
        rho_psi: None,
        q: None,
        gamma1: None,
        gamma2: ctx.gamma2,
        gamma3: ctx.gamma3,
        p_min: None,
        b_min: None,
        p_hat_min: None,
        gap_eta2_coeff,
        gap_const_coeff,
        best_loss_seen: ctx.best_loss_seen,
    };

    let ceiling = match lr_ceiling(&c, m) {
        Ok(v) => v,
        Err(TheoryError::Infeasible(msg)) => {
            report.infeasibility = Some(msg);
            return report;
        }
    };
    let eta = vec![ceiling; m];
    let sys = psi_system(&c, ctx.pc, ctx.em, ctx.profile, &eta);
    let mut rho_psi = spectral_radius_psi(&sys);
    if rho_psi >= 1.0 {
        // knife-edge tie of the min terms; step just inside the ceiling
        let eta = vec![ceiling * 0.999; m];
        rho_psi = spectral_radius_psi(&psi_system(&c, ctx.pc, ctx.em, ctx.profile, &eta));
    }
    let pcs = participation_constraints(
        &c, ctx.pc, ctx.em, ctx.pair, rho_psi, ctx.gamma2, ctx.gamma3,
    );
    report.eta_max_prop1 = Some(ceiling);
    report.eta_max_prop2 = pcs.eta_bound;
    report.eta_max = Some(match pcs.eta_bound {
        Some(b) => ceiling.min(b),
        None => ceiling,
    });
    report.rho_psi = Some(rho_psi);
    report.q = Some(pcs.q);
    report.gamma1 = Some(pcs.gamma1);
    report.r_prime_b = Some(pcs.r_prime_b);
    report.p_hat_min = Some(pcs.p_hat_min);
    report.p_min = Some(pcs.p_min);
    report.b_min = Some(pcs.b_min);
    report
}
