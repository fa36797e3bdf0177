//! Experiment configuration: one TOML file drives all subcommands.
//! Every field has a default, so a minimal file (or none, for `check`) works.

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub master_seed: Option<u64>,
    pub out_dir: Option<String>,
    #[serde(default)]
    pub graph: GraphSection,
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub profile: ProfileSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub theory: TheorySection,
    #[serde(default)]
    pub check: CheckSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub corollary: CorollarySection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub m: usize,
    pub radius: f64,
    /// Edge-list file; overrides generation when set.
    pub file: Option<String>,
}

impl Default for GraphSection {
    fn default() -> Self {
        GraphSection { m: 10, radius: 0.6, file: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    /// "quadratic" | "logistic" | "hinge"
    pub kind: String,
    pub n: usize,
    pub per_client: usize,
    pub l_target: f64,
    pub classes: usize,
    pub separation: f64,
    pub lambda: f64,
    /// 0 keeps the generator's split; otherwise re-partition by label.
    pub labels_per_client: usize,
}

impl Default for ProblemSection {
    fn default() -> Self {
        ProblemSection {
            kind: "quadratic".into(),
            n: 8,
            per_client: 20,
            l_target: 2.0,
            classes: 2,
            separation: 5.0,
            lambda: 0.01,
            labels_per_client: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSection {
    /// "beta" | "ones" | "uniform" | "file"
    pub kind: String,
    pub alpha: f64,
    pub beta: f64,
    pub floor: f64,
    /// Scalars for the "uniform" kind.
    pub p: f64,
    pub p_hat: f64,
    pub file: Option<String>,
}

impl Default for ProfileSection {
    fn default() -> Self {
        ProfileSection {
            kind: "beta".into(),
            alpha: 0.5,
            beta: 0.5,
            floor: spodgt::sporadic::DEFAULT_PROBABILITY_FLOOR,
            p: 1.0,
            p_hat: 1.0,
            file: None,
        }
    }
}

/// Scalar broadcast over clients, or an explicit per-client list.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PerClient<T> {
    Scalar(T),
    Vector(Vec<T>),
}

impl<T: Copy> PerClient<T> {
    pub fn resolve(&self, m: usize, field: &str) -> Result<Vec<T>, CliError> {
        match self {
            PerClient::Scalar(v) => Ok(vec![*v; m]),
            PerClient::Vector(v) => {
                if v.len() != m {
                    return Err(CliError::Config(format!(
                        "{field}: expected {m} entries, got {}",
                        v.len()
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub variants: Vec<String>,
    pub max_iter: u64,
    pub eta: PerClient<f64>,
    /// Batch sizes; 0 means full batch.
    pub batch: PerClient<usize>,
    pub repeats: usize,
    pub log_stride: u64,
    /// "zeros" | "shared_gaussian" | "per_client_gaussian"
    pub x0: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            variants: vec!["spod_gt".into(), "ab_pushpull".into()],
            max_iter: 2000,
            eta: PerClient::Scalar(0.01),
            batch: PerClient::Scalar(16),
            repeats: 5,
            log_stride: 10,
            x0: "per_client_gaussian".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySection {
    pub gamma2: f64,
    pub gamma3: f64,
    /// Probe points for empirical constant estimation (non-quadratic tasks).
    pub probe_points: usize,
}

impl Default for TheorySection {
    fn default() -> Self {
        TheorySection { gamma2: 2.0, gamma3: 2.0, probe_points: 40 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    pub trials: usize,
    pub eta: f64,
}

impl Default for CheckSection {
    fn default() -> Self {
        CheckSection { trials: 20_000, eta: 0.02 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// "labels_per_client" | "radius" | "m" | "eta"
    pub axis: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorollarySection {
    pub enabled: bool,
    pub c_eta: f64,
    pub c_p: f64,
    pub c_batch: f64,
}

impl Default for CorollarySection {
    fn default() -> Self {
        CorollarySection { enabled: false, c_eta: 0.5, c_p: 1.0, c_batch: 1.0 }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<String>,
    pub graph_file: Option<String>,
    pub log_stride: Option<u64>,
    pub trials: Option<usize>,
    pub jobs: Option<usize>,
}

impl RunConfigFile {
    pub fn from_path(path: &str) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {path}: {e}")))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfigFile =
            toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Built-in configuration for `check` when no file is given: a 4-client
    /// complete graph with genuine but contractive sporadicity on a small
    /// quadratic task.
    pub fn default_check() -> Self {
        let mut cfg = RunConfigFile {
            graph: GraphSection { m: 4, radius: 1.5, file: None },
            problem: ProblemSection {
                kind: "quadratic".into(),
                n: 3,
                per_client: 12,
                ..ProblemSection::default()
            },
            profile: ProfileSection {
                kind: "uniform".into(),
                p: 0.7,
                p_hat: 0.9,
                ..ProfileSection::default()
            },
            ..RunConfigFile::default()
        };
        cfg.run.batch = PerClient::Scalar(4);
        cfg
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(seed) = ov.seed {
            self.master_seed = Some(seed);
        }
        if let Some(dir) = &ov.out_dir {
            self.out_dir = Some(dir.clone());
        }
        if let Some(file) = &ov.graph_file {
            self.graph.file = Some(file.clone());
        }
        if let Some(stride) = ov.log_stride {
            self.run.log_stride = stride;
        }
        if let Some(trials) = ov.trials {
            self.check.trials = trials;
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed.unwrap_or(42)
    }

    pub fn out_dir(&self) -> &str {
        self.out_dir.as_deref().unwrap_or("out")
    }

    fn validate(&self) -> Result<(), CliError> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if self.graph.m == 0 {
            return fail("graph.m must be positive".into());
        }
        if !self.graph.radius.is_finite() || self.graph.radius <= 0.0 {
            return fail("graph.radius must be positive".into());
        }
        match self.problem.kind.as_str() {
            "quadratic" | "logistic" | "hinge" => {}
            other => return fail(format!("problem.kind: unknown kind {other:?}")),
        }
        if self.problem.n == 0 || self.problem.per_client == 0 {
            return fail("problem.n and problem.per_client must be positive".into());
        }
        if self.problem.kind != "quadratic" && self.problem.classes != 2 {
            return fail("problem.classes: classification losses are binary (classes = 2)".into());
        }
        match self.profile.kind.as_str() {
            "beta" | "ones" | "uniform" | "file" => {}
            other => return fail(format!("profile.kind: unknown kind {other:?}")),
        }
        if self.profile.kind == "beta" && !(self.profile.alpha > 0.0 && self.profile.beta > 0.0) {
            return fail("profile.alpha and profile.beta must be positive".into());
        }
        if !(self.profile.floor > 0.0 && self.profile.floor <= 1.0) {
            return fail("profile.floor must lie in (0, 1]".into());
        }
        if self.profile.kind == "file" && self.profile.file.is_none() {
            return fail("profile.file is required for profile.kind = \"file\"".into());
        }
        if self.run.variants.is_empty() {
            return fail("run.variants must not be empty".into());
        }
        for v in &self.run.variants {
            if spodgt::optim::Variant::parse(v).is_none() {
                return fail(format!("run.variants: unknown variant {v:?}"));
            }
        }
        if self.run.max_iter == 0 || self.run.log_stride == 0 {
            return fail("run.max_iter and run.log_stride must be positive".into());
        }
        if self.run.repeats == 0 {
            return fail("run.repeats must be positive".into());
        }
        match self.run.x0.as_str() {
            "zeros" | "shared_gaussian" | "per_client_gaussian" => {}
            other => return fail(format!("run.x0: unknown placement {other:?}")),
        }
        if !(self.theory.gamma2 > 1.0 && self.theory.gamma3 > 1.0) {
            return fail("theory.gamma2 and theory.gamma3 must exceed 1".into());
        }
        if self.check.trials < 100 {
            return fail("check.trials must be at least 100".into());
        }
        if let Some(sweep) = &self.sweep {
            match sweep.axis.as_str() {
                "labels_per_client" | "radius" | "m" | "eta" => {}
                other => return fail(format!("sweep.axis: unknown axis {other:?}")),
            }
            if sweep.values.is_empty() {
                return fail("sweep.values must not be empty".into());
            }
        }
        if self.corollary.enabled
            && !(self.corollary.c_eta > 0.0
                && self.corollary.c_p >= 0.0
                && self.corollary.c_batch > 0.0)
        {
            return fail("corollary coefficients must be positive".into());
        }
        Ok(())
    }
}

/// The shrinking-gap schedule: for a horizon `K`, returns the uniform
/// learning rate `c_eta/√(K+1)`, the computation probability
/// `1 − c_p/√(K+1)` (clamped to the floor), and per-client batch sizes
/// `D/(1 + D/(c_batch √(K+1)))` rounded up.
pub fn corollary_schedule(
    k_total: u64,
    c_eta: f64,
    c_p: f64,
    c_batch: f64,
    sizes: &[usize],
    floor: f64,
) -> (f64, f64, Vec<usize>) {
    let root = ((k_total + 1) as f64).sqrt();
    let eta = c_eta / root;
    let p = (1.0 - c_p / root).clamp(floor, 1.0);
    let batches = sizes
        .iter()
        .map(|&d| {
            let df = d as f64;
            ((df / (1.0 + df / (c_batch * root))).ceil() as usize).clamp(1, d)
        })
        .collect();
    (eta, p, batches)
}
