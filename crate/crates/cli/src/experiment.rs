//! Assembling the shared experiment pieces (graph, mixing pair, profile,
//! dataset, oracle) from a configuration and one master seed. All variants
//! and repeats of a run observe these same objects.

use ndarray::Array1;
use spodgt::digraph::{self, Digraph, GraphMetrics};
use spodgt::mixing::{build_mixing, MixingPair, SporadicityProfile};
use spodgt::problems::{
    make_synthetic, partition_by_labels, ClassificationLoss, Dataset, LossOracle, TaskSpec,
};
use spodgt::sporadic::{sample_profile_beta, RngStreams};

use crate::config::RunConfigFile;
use crate::CliError;

// Stream-family labels for seed derivation (part of the output contract).
pub const LABEL_GRAPH: u64 = 11;
pub const LABEL_PROFILE: u64 = 12;
pub const LABEL_DATASET: u64 = 13;
pub const LABEL_PARTITION: u64 = 14;
pub const LABEL_REPEAT_BASE: u64 = 0x1000;

pub struct Experiment {
    pub g: Digraph,
    pub pair: MixingPair,
    pub metrics: GraphMetrics,
    pub profile: SporadicityProfile,
    pub ds: Dataset,
    pub oracle: LossOracle,
}

pub fn build_experiment(cfg: &RunConfigFile) -> Result<Experiment, CliError> {
    let root = RngStreams::new(cfg.master_seed());
    let g = match &cfg.graph.file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("graph.file {path}: {e}")))?;
            let g = Digraph::from_edge_list(&text)
                .map_err(|e| CliError::Config(format!("graph.file {path}: {e}")))?;
            if !digraph::is_strongly_connected(&g) {
                return Err(CliError::Config(format!(
                    "graph.file {path}: graph is not strongly connected"
                )));
            }
            g
        }
        None => digraph::generate_rgg(
            cfg.graph.m,
            cfg.graph.radius,
            root.child(LABEL_GRAPH).master_seed(),
        )
        .map_err(|e| CliError::Config(format!("graph generation: {e}")))?,
    };
    let m = g.m();
    let pair = build_mixing(&g).map_err(|e| CliError::Config(format!("mixing: {e}")))?;
    let metrics = digraph::metrics(&g).map_err(|e| CliError::Config(format!("metrics: {e}")))?;

    let profile = match cfg.profile.kind.as_str() {
        "ones" => SporadicityProfile::ones(&g),
        "uniform" => {
            let p = cfg.profile.p;
            let p_hat = cfg.profile.p_hat;
            let in_unit = |v: f64| v > 0.0 && v <= 1.0;
            if !in_unit(p) || !in_unit(p_hat) {
                return Err(CliError::Config(
                    "profile.p and profile.p_hat must lie in (0, 1]".into(),
                ));
            }
            SporadicityProfile::ones(&g)
                .with_p(Array1::from_elem(m, p))
                .with_uniform_p_hat(p_hat)
        }
        "beta" => sample_profile_beta(
            &g,
            cfg.profile.alpha,
            cfg.profile.beta,
            cfg.profile.floor,
            root.child(LABEL_PROFILE).master_seed(),
        ),
        "file" => {
            let path = cfg.profile.file.as_deref().expect("validated");
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("profile.file {path}: {e}")))?;
            SporadicityProfile::from_json_str(&g, &text)
                .map_err(|e| CliError::Config(format!("profile.file {path}: {e}")))?
        }
        _ => unreachable!("validated"),
    };

    let task = match cfg.problem.kind.as_str() {
        "quadratic" => TaskSpec::Quadratic { l_target: cfg.problem.l_target },
        "logistic" => TaskSpec::Classification {
            loss: ClassificationLoss::Logistic,
            classes: cfg.problem.classes,
            separation: cfg.problem.separation,
            lambda: cfg.problem.lambda,
        },
        "hinge" => TaskSpec::Classification {
            loss: ClassificationLoss::Hinge,
            classes: cfg.problem.classes,
            separation: cfg.problem.separation,
            lambda: cfg.problem.lambda,
        },
        _ => unreachable!("validated"),
    };
    let (mut ds, oracle) = make_synthetic(
        &task,
        m,
        cfg.problem.n,
        cfg.problem.per_client,
        root.child(LABEL_DATASET).master_seed(),
    );
    if cfg.problem.labels_per_client > 0 {
        ds = partition_by_labels(
            &ds,
            cfg.problem.labels_per_client,
            m,
            root.child(LABEL_PARTITION).master_seed(),
        )
        .map_err(|e| CliError::Config(format!("problem.labels_per_client: {e}")))?;
    }
    Ok(Experiment { g, pair, metrics, profile, ds, oracle })
}

/// Resolve the per-client learning rates and batch sizes, applying the
/// shrinking-gap schedule when enabled (batch 0 means full batch).
pub fn resolve_run_parameters(
    cfg: &RunConfigFile,
    exp: &Experiment,
) -> Result<(Vec<f64>, Vec<usize>, SporadicityProfile), CliError> {
    let m = exp.g.m();
    let sizes = exp.ds.sizes();
    if cfg.corollary.enabled {
        let (eta, p, batches) = crate::config::corollary_schedule(
            cfg.run.max_iter,
            cfg.corollary.c_eta,
            cfg.corollary.c_p,
            cfg.corollary.c_batch,
            &sizes,
            cfg.profile.floor,
        );
        let profile = exp.profile.clone().with_p(Array1::from_elem(m, p));
        return Ok((vec![eta; m], batches, profile));
    }
    let eta = cfg.run.eta.resolve(m, "run.eta")?;
    if eta.iter().any(|&e| !e.is_finite() || e <= 0.0) {
        return Err(CliError::Config("run.eta must be positive".into()));
    }
    let mut batch = cfg.run.batch.resolve(m, "run.batch")?;
    for i in 0..m {
        if batch[i] == 0 || batch[i] > sizes[i] {
            batch[i] = sizes[i];
        }
    }
    Ok((eta, batch, exp.profile.clone()))
}

pub fn parse_x0(name: &str) -> spodgt::optim::X0Spec {
    match name {
        "zeros" => spodgt::optim::X0Spec::Zeros,
        "shared_gaussian" => spodgt::optim::X0Spec::SharedGaussian,
        _ => spodgt::optim::X0Spec::PerClientGaussian,
    }
}

/// Stream family for one repeat; shared by every variant so comparisons
/// isolate the algorithm.
pub fn repeat_streams(master_seed: u64, repeat: usize) -> RngStreams {
    RngStreams::new(master_seed).child(LABEL_REPEAT_BASE + repeat as u64)
}
