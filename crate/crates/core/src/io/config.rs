use crate::error::{config_err, Result};
use crate::pdk::{FootprintConstraint, PdkSpec, PenaltyConfig};
use crate::perm::{SplConfig, DEFAULT_EPSILON};
use crate::search::{SearchConfig, SearchSchedule};
use crate::train::{load_dataset, DatasetSource, MatrixFitTask, Task, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Independent random streams derived from the root seed.
pub mod streams {
    pub const SEARCH: u64 = 0;
    pub const TASK: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const SWEEP: u64 = 3;
    pub const LEGALIZE: u64 = 4;
}

/// Stream `stream` of the root seed.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    /// Haar-random unitaries (square only).
    #[default]
    Unitary,
    /// Random matrices with the listed singular values.
    SingularValues,
}

fn one() -> usize {
    1
}

fn default_split() -> f64 {
    0.8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskSpec {
    MatrixFit {
        #[serde(default)]
        targets: TargetKind,
        #[serde(default = "one")]
        count: usize,
        /// Defaults to the mesh size.
        rows: Option<usize>,
        cols: Option<usize>,
        #[serde(default)]
        singular_values: Vec<f64>,
    },
    Classify {
        csv: Option<PathBuf>,
        images: Option<PathBuf>,
        labels: Option<PathBuf>,
        #[serde(default = "default_split")]
        split: f64,
        num_classes: Option<usize>,
    },
}

impl TaskSpec {
    /// Materializes the task; relative dataset paths resolve against `base`.
    pub fn build(&self, k: usize, seed: u64, base: &Path) -> Result<Task> {
        let mut rng = seeded_stream(seed, streams::TASK);
        match self {
            TaskSpec::MatrixFit { targets, count, rows, cols, singular_values } => {
                let (m, n) = (rows.unwrap_or(k), cols.unwrap_or(k));
                let t = match targets {
                    TargetKind::Unitary if m == n => MatrixFitTask::random_unitaries(m, *count, &mut rng)?,
                    TargetKind::Unitary => return Err(config_err("unitary targets must be square")),
                    TargetKind::SingularValues => {
                        if singular_values.is_empty() {
                            return Err(config_err("singular-values targets need `singular_values`"));
                        }
                        MatrixFitTask::with_singular_values(m, n, singular_values, *count, &mut rng)?
                    }
                };
                Ok(Task::MatrixFit(t))
            }
            TaskSpec::Classify { csv, images, labels, split, num_classes } => {
                let source = match (csv, images, labels) {
                    (Some(c), None, None) => DatasetSource::Csv(base.join(c)),
                    (None, Some(i), Some(l)) => DatasetSource::Idx { images: base.join(i), labels: base.join(l) },
                    _ => return Err(config_err("classify needs either `csv` or both `images` and `labels`")),
                };
                Ok(Task::Classify(load_dataset(&source, *split, seed, *num_classes)?))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Phase noise used while retraining.
    pub noise: f64,
    pub sigma_grid: Vec<f64>,
    pub trials: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { noise: 0.02, sigma_grid: vec![0.0, 0.01, 0.02, 0.04, 0.08], trials: 20 }
    }
}

fn default_sample_tries() -> usize {
    1000
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

/// Everything a run needs, read from a TOML document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; the command-line seed takes precedence.
    pub seed: Option<u64>,
    pub k: usize,
    /// Builtin PDK name or path to a PDK document.
    pub pdk: String,
    pub window: FootprintConstraint,
    #[serde(default)]
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub schedule: SearchSchedule,
    #[serde(default)]
    pub spl: SplConfig,
    #[serde(default = "default_sample_tries")]
    pub sample_tries: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub task: TaskSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn parse(source: &str) -> Result<Self> {
        let c: Self = toml::from_str(source).map_err(|e| config_err(e.to_string()))?;
        c.window.validate()?;
        if c.k < 2 {
            return Err(config_err(format!("k must be at least 2, got {}", c.k)));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Resolves the PDK; relative paths resolve against `base`.
    pub fn resolve_pdk(&self, base: &Path) -> Result<PdkSpec> {
        if let Some(p) = PdkSpec::builtin(&self.pdk) {
            return Ok(p);
        }
        PdkSpec::resolve(&base.join(&self.pdk).to_string_lossy())
    }

    pub fn search_config(&self, pdk: PdkSpec) -> SearchConfig {
        SearchConfig {
            k: self.k,
            pdk,
            constraint: self.window.clone(),
            penalty: self.penalty.clone(),
            schedule: self.schedule.clone(),
            spl: self.spl.clone(),
            sample_tries: self.sample_tries,
            epsilon: self.epsilon,
        }
    }

    /// Command-line seed if given, else the document's.
    pub fn effective_seed(&self, cli: Option<u64>) -> Result<u64> {
        cli.or(self.seed).ok_or_else(|| config_err("a seed is required"))
    }

    /// SHA-256 of the canonical JSON form of the parsed document.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
