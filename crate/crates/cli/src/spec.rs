//! Experiment files (TOML).
//!
//! A spec is a TOML document. Relative paths inside it are resolved against
//! the directory holding the file, and the output directory can be re-rooted
//! with the `ILVM_OUTPUT_ROOT` environment variable.

use std::fs;
use std::path::{Path, PathBuf};

use ilvm_core::trainer::PriorDensity;
use ilvm_core::TrainConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const OUTPUT_ROOT_ENV: &str = "ILVM_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot read spec {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse spec: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid spec: {0}")]
    Invalid(String),
    #[error("referenced path does not exist: {0}")]
    MissingPath(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Digits mapped to a 2D latent space with the banana prior.
    Banana,
    /// Linear maps on linear-Gaussian data, compared against PCA.
    LinearPpca,
    /// 1D standard normal data and prior with linear maps.
    GaussianSanity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum DatasetSource {
    Idx { images: PathBuf, labels: PathBuf },
    /// Headerless CSV, one vector per row; optional labels file with one
    /// integer per line.
    Csv { path: PathBuf, labels: Option<PathBuf> },
    Synthetic { samples: usize, generator: Generator },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum Generator {
    /// `x = W f + c + noise · n` with `W` of shape `[dim, factors]` and
    /// standard normal factors `f` and noise `n`. Column `j` of `W` is scaled
    /// by `1 / (j + 1)` so the factor directions have distinct variances.
    LinearGaussian { dim: usize, factors: usize, noise: f64 },
    StandardNormal { dim: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum PriorSpec {
    Banana { rho: f64, samples: usize },
    StandardNormal { samples: usize },
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::Banana {
            rho: 0.95,
            samples: 10_000,
        }
    }
}

impl PriorSpec {
    pub fn samples(&self) -> usize {
        match *self {
            PriorSpec::Banana { samples, .. } | PriorSpec::StandardNormal { samples } => samples,
        }
    }

    pub fn density(&self) -> PriorDensity {
        match *self {
            PriorSpec::Banana { rho, .. } => PriorDensity::Banana { rho },
            PriorSpec::StandardNormal { .. } => PriorDensity::StandardNormal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    /// Fresh prior draws for `mse_z`.
    pub prior_samples: usize,
    pub max_train: usize,
    pub max_test: usize,
    /// Points per axis of the latent decoding grid.
    pub grid: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            prior_samples: 10_000,
            max_train: 10_000,
            max_test: 2_000,
            grid: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentKind,
    pub output: PathBuf,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub evaluation: EvalSpec,
    /// The prior density field is overwritten from `prior`.
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self, SpecError> {
        let mut spec: Self = toml::from_str(text)?;
        spec.train.prior_density = spec.prior.density();
        spec.validate()?;
        Ok(spec)
    }

    /// Reads, validates and resolves relative paths against the file's
    /// directory. Dataset files must exist.
    pub fn load(path: &Path) -> Result<Self, SpecError> {
        let text = fs::read_to_string(path).map_err(|source| SpecError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut spec = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        spec.resolve(base);
        spec.check_paths()?;
        Ok(spec)
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetSource::Idx { images, labels } => {
                join(images);
                join(labels);
            }
            DatasetSource::Csv { path, labels } => {
                join(path);
                if let Some(l) = labels {
                    join(l);
                }
            }
            DatasetSource::Synthetic { .. } => {}
        }
        join(&mut self.output);
    }

    fn check_paths(&self) -> Result<(), SpecError> {
        let paths: Vec<&PathBuf> = match &self.dataset {
            DatasetSource::Idx { images, labels } => vec![images, labels],
            DatasetSource::Csv { path, labels } => std::iter::once(path).chain(labels.as_ref()).collect(),
            DatasetSource::Synthetic { .. } => vec![],
        };
        match paths.into_iter().find(|p| !p.exists()) {
            Some(p) => Err(SpecError::MissingPath(p.clone())),
            None => Ok(()),
        }
    }

    /// Output directory, re-rooted under `root` when given. Only the final
    /// component of the configured output path is kept in that case.
    pub fn output_dir(&self, root: Option<&Path>) -> PathBuf {
        match root {
            Some(r) => r.join(self.output.file_name().unwrap_or(self.output.as_os_str())),
            None => self.output.clone(),
        }
    }

    /// [`Self::output_dir`] with the root taken from `ILVM_OUTPUT_ROOT`.
    pub fn output_dir_from_env(&self) -> PathBuf {
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from);
        self.output_dir(root.as_deref())
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let bad = |m: &str| Err(SpecError::Invalid(m.to_string()));
        self.train.validate().map_err(|e| SpecError::Invalid(e.to_string()))?;
        let latent = self.train.latent_dim;
        if let PriorSpec::Banana { .. } = self.prior {
            if latent != 2 {
                return bad("the banana prior needs latent_dim = 2");
            }
        }
        if self.prior.samples() == 0 || self.evaluation.prior_samples == 0 {
            return bad("prior sample counts must be positive");
        }
        if self.evaluation.max_train == 0 || self.evaluation.max_test == 0 || self.evaluation.grid == 0 {
            return bad("evaluation sizes must be positive");
        }
        if let DatasetSource::Synthetic { samples, generator } = &self.dataset {
            if *samples < 7 {
                return bad("synthetic datasets need at least 7 samples for the 6:1 split");
            }
            match *generator {
                Generator::LinearGaussian { dim, factors, noise } => {
                    if dim == 0 || factors == 0 || factors > dim || !(noise >= 0.0) {
                        return bad("linear-gaussian needs 0 < factors <= dim and noise >= 0");
                    }
                }
                Generator::StandardNormal { dim: 0 } => return bad("dim must be positive"),
                Generator::StandardNormal { .. } => {}
            }
        }
        match self.experiment {
            ExperimentKind::LinearPpca if !self.train.architecture.linear => bad("linear-ppca needs architecture.linear = true"),
            ExperimentKind::GaussianSanity if latent != 1 => bad("gaussian-sanity uses a 1D latent space"),
            _ => Ok(()),
        }
    }
}
