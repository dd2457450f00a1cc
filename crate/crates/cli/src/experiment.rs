//! Running experiments end to end: data, training, evaluation, emission.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};

use ilvm_core::distributions::{banana_transform, correlated_normal, standard_normal_bank, DistributionError};
use ilvm_core::rng::{ids, Stream};
use ilvm_core::trainer::{reconstruction_mse, save_checkpoint, load_checkpoint, write_metrics, MetricRow, TrainError};
use ilvm_core::{Ilvm, SampleBank, Tensor, TensorError, TrainState, Trainer};
use thiserror::Error;

use crate::idx::{load_idx, IdxError};
use crate::pca::{image_basis, max_principal_angle, pca_basis};
use crate::spec::{DatasetSource, ExperimentKind, ExperimentSpec, Generator, PriorSpec, SpecError};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const PRIOR_FILE: &str = "prior_samples.csv";
pub const POSTERIOR_FILE: &str = "posterior_means.csv";
pub const GRID_FILE: &str = "grid_decodings.csv";
pub const EVALUATION_FILE: &str = "evaluation.csv";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {detail}")]
    Parse { path: PathBuf, line: usize, detail: String },
    #[error("checkpoint does not fit the experiment: {0}")]
    Mismatch(String),
}

impl ExperimentError {
    /// Process exit code: 2 for numeric aborts, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Train(TrainError::NonFinite { .. }) => 2,
            ExperimentError::Train(TrainError::Tensor(TensorError::NonFinite { .. })) => 2,
            ExperimentError::Tensor(TensorError::NonFinite { .. }) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Held-out split of a dataset. Labels, when present, are only emitted next
/// to posterior means and never reach training.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: SampleBank,
    pub test: SampleBank,
    pub test_labels: Option<Vec<i64>>,
}

fn read_labels(path: &Path) -> Result<Vec<i64>, ExperimentError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(t.parse().map_err(|e: std::num::ParseIntError| ExperimentError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            detail: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Draws `samples` rows from a synthetic generator.
pub fn synthesize(generator: &Generator, samples: usize, seed: u64) -> Result<SampleBank, ExperimentError> {
    let mut s = Stream::new(seed, ids::SYNTHETIC);
    let data = match *generator {
        Generator::StandardNormal { dim } => s.normal_tensor(samples, dim),
        Generator::LinearGaussian { dim, factors, noise } => {
            let w = s.normal_tensor(dim, factors);
            let offset = s.normal_tensor(1, dim);
            let f = s.normal_tensor(samples, factors);
            let mut x = vec![0.0; samples * dim];
            for (i, row) in x.chunks_mut(dim).enumerate() {
                for (d, v) in row.iter_mut().enumerate() {
                    let signal: f64 = (0..factors).map(|j| w.data()[d * factors + j] * f.data()[i * factors + j] / (j + 1) as f64).sum();
                    *v = signal + offset.data()[d] + noise * s.standard_normal();
                }
            }
            Tensor::matrix(samples, dim, x)?
        }
    };
    Ok(SampleBank::new(data, seed)?)
}

/// Loads the full dataset named by the experiment file, before splitting.
pub fn load_dataset(spec: &ExperimentSpec) -> Result<(SampleBank, Option<Vec<i64>>), ExperimentError> {
    let seed = spec.train.seed;
    match &spec.dataset {
        DatasetSource::Idx { images, labels } => {
            let (bank, labels) = load_idx(images, labels, seed)?;
            Ok((bank, Some(labels.into_iter().map(i64::from).collect())))
        }
        DatasetSource::Csv { path, labels } => {
            let bank = SampleBank::read_csv(File::open(path).map_err(io_err(path))?, seed)?;
            let labels = labels.as_deref().map(read_labels).transpose()?;
            if let Some(l) = &labels {
                if l.len() != bank.count() {
                    return Err(ExperimentError::Mismatch(format!("{} labels for {} rows", l.len(), bank.count())));
                }
            }
            Ok((bank, labels))
        }
        DatasetSource::Synthetic { samples, generator } => Ok((synthesize(generator, *samples, seed)?, None)),
    }
}

/// 6:1 train/test split by a seeded permutation, then capped.
pub fn split_dataset(bank: &SampleBank, labels: Option<&[i64]>, spec: &ExperimentSpec) -> Result<Dataset, ExperimentError> {
    let n = bank.count();
    let n_test = (n / 7).max(1);
    if n_test >= n {
        return Err(SpecError::Invalid(format!("{n} rows are too few for a 6:1 split")).into());
    }
    let mut stream = Stream::new(spec.train.seed, ids::SPLIT);
    let perm = stream.permutation(n);
    let (train_idx, test_idx) = perm.split_at(n - n_test);
    let train_idx = &train_idx[..train_idx.len().min(spec.evaluation.max_train)];
    let test_idx = &test_idx[..test_idx.len().min(spec.evaluation.max_test)];
    let seed = bank.seed();
    Ok(Dataset {
        train: SampleBank::new(bank.samples().gather_rows(train_idx), seed)?,
        test: SampleBank::new(bank.samples().gather_rows(test_idx), seed)?,
        test_labels: labels.map(|l| test_idx.iter().map(|&i| l[i]).collect()),
    })
}

fn prior_draws(prior: &PriorSpec, n: usize, dim: usize, stream: &mut Stream) -> Result<Tensor, ExperimentError> {
    Ok(match *prior {
        PriorSpec::Banana { rho, .. } => banana_transform(&correlated_normal(n, rho, stream)?),
        PriorSpec::StandardNormal { .. } => stream.normal_tensor(n, dim),
    })
}

/// The prior sample bank used for training.
pub fn prior_bank(spec: &ExperimentSpec) -> Result<SampleBank, ExperimentError> {
    let seed = spec.train.seed;
    match spec.prior {
        PriorSpec::Banana { rho, samples } => Ok(ilvm_core::distributions::banana_sample(samples, rho, seed)?),
        PriorSpec::StandardNormal { samples } => Ok(standard_normal_bank(samples, spec.train.latent_dim, seed)?),
    }
}

/// Fresh prior draws for evaluation, from a stream training never touches.
pub fn eval_prior(spec: &ExperimentSpec) -> Result<Tensor, ExperimentError> {
    let mut s = Stream::new(spec.train.seed, ids::EVAL_PRIOR);
    prior_draws(&spec.prior, spec.evaluation.prior_samples, spec.train.latent_dim, &mut s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub mse_x: f64,
    pub mse_z: f64,
    pub test_size: usize,
    pub prior_size: usize,
    /// Largest principal angle (degrees) between the image of a linear
    /// generative map and the data's principal subspace.
    pub principal_angle_deg: Option<f64>,
}

/// Reconstruction errors on the held-out split and on fresh prior draws.
pub fn evaluate(model: &Ilvm, data: &Dataset, prior: &Tensor, linear: bool) -> Result<Evaluation, ExperimentError> {
    let (mse_x, mse_z) = reconstruction_mse(model, data.test.samples(), prior)?;
    let principal_angle_deg = linear.then(|| {
        let k = model.latent_dim();
        let w = model.generative.params.get("w0").expect("linear map weight");
        max_principal_angle(&image_basis(w), &pca_basis(data.train.samples(), k))
    });
    Ok(Evaluation {
        mse_x,
        mse_z,
        test_size: data.test.count(),
        prior_size: prior.rows(),
        principal_angle_deg,
    })
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub metrics: Vec<MetricRow>,
    pub evaluation: Evaluation,
    pub state: TrainState,
}

/// Trains as the experiment file describes and writes every artifact into
/// `out`. `progress` is called with `(steps done, total)` about ten times
/// over the run.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path, mut progress: impl FnMut(u64, u64)) -> Result<RunSummary, ExperimentError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let (bank, labels) = load_dataset(spec)?;
    let data = split_dataset(&bank, labels.as_deref(), spec)?;
    let prior = prior_bank(spec)?;
    let cfg = spec.train.clone();
    let total = cfg.steps;
    let mut trainer = Trainer::new(cfg.clone(), data.train.clone(), Some(prior.clone()))?;
    let chunk = (total / 10).max(1);
    let mut metrics = Vec::new();
    while trainer.step_count() < total {
        let n = chunk.min(total - trainer.step_count());
        metrics.extend(trainer.run(n)?);
        progress(trainer.step_count(), total);
    }
    let state = trainer.into_state();

    write_metrics(&metrics, create(&out.join(METRICS_FILE))?)?;
    save_checkpoint(&out.join(CHECKPOINT_FILE), &cfg, &state)?;
    write_matrix(&out.join(PRIOR_FILE), prior.samples(), "z", None)?;
    let means = state.model.recognition.mean_of(data.test.samples())?;
    write_matrix(&out.join(POSTERIOR_FILE), &means, "z", Some(data.test_labels.as_deref()))?;
    if cfg.latent_dim == 2 {
        write_grid(&out.join(GRID_FILE), &state.model, prior.samples(), spec.evaluation.grid)?;
    }
    let evaluation = evaluate(&state.model, &data, &eval_prior(spec)?, spec.experiment == ExperimentKind::LinearPpca)?;
    write_evaluation(&out.join(EVALUATION_FILE), &evaluation)?;
    Ok(RunSummary {
        output_dir: out.to_path_buf(),
        metrics,
        evaluation,
        state,
    })
}

/// Re-evaluates a saved checkpoint against the data and prior of a spec.
pub fn evaluate_checkpoint(spec: &ExperimentSpec, checkpoint: &Path) -> Result<Evaluation, ExperimentError> {
    let (cfg, state) = load_checkpoint(checkpoint)?;
    let (bank, labels) = load_dataset(spec)?;
    let data = split_dataset(&bank, labels.as_deref(), spec)?;
    if state.model.observed_dim() != bank.dim() || cfg.latent_dim != spec.train.latent_dim {
        return Err(ExperimentError::Mismatch(format!(
            "checkpoint maps {}D data to {}D codes, spec has {}D data and {}D codes",
            state.model.observed_dim(),
            cfg.latent_dim,
            bank.dim(),
            spec.train.latent_dim
        )));
    }
    evaluate(&state.model, &data, &eval_prior(spec)?, cfg.architecture.linear && spec.experiment == ExperimentKind::LinearPpca)
}

fn create(path: &Path) -> Result<BufWriter<File>, ExperimentError> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

/// Rows of `m` under headers `{prefix}1..`, optionally followed by a label
/// column (empty cells when labels are unknown).
fn write_matrix(path: &Path, m: &Tensor, prefix: &str, labels: Option<Option<&[i64]>>) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header: Vec<String> = (1..=m.cols()).map(|j| format!("{prefix}{j}")).collect();
    if labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for i in 0..m.rows() {
        let mut rec: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        match labels {
            Some(Some(l)) => rec.push(l[i].to_string()),
            Some(None) => rec.push(String::new()),
            None => {}
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Empirical quantile of one column by sorting.
fn quantile(m: &Tensor, col: usize, q: f64) -> f64 {
    let mut v: Vec<f64> = (0..m.rows()).map(|i| m.row(i)[col]).collect();
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * q).round() as usize]
}

/// The `n × n` latent grid spanning the 1%–99% range of the prior samples in
/// each coordinate, first coordinate varying slowest.
pub fn latent_grid(prior: &Tensor, n: usize) -> Tensor {
    let axis = |c: usize| {
        let (lo, hi) = (quantile(prior, c, 0.01), quantile(prior, c, 0.99));
        (0..n).map(move |i| if n == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
    };
    let rows: Vec<Vec<f64>> = axis(0).flat_map(|a| axis(1).map(move |b| vec![a, b])).collect();
    Tensor::from_rows(&rows).expect("grid rows share a width")
}

fn write_grid(path: &Path, model: &Ilvm, prior: &Tensor, n: usize) -> Result<(), ExperimentError> {
    let grid = latent_grid(prior, n);
    let decoded = model.generative.mean_of(&grid)?;
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["z1".to_string(), "z2".to_string()];
    header.extend((1..=decoded.cols()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for i in 0..grid.rows() {
        let rec = grid.row(i).iter().chain(decoded.row(i)).map(|v| v.to_string());
        w.write_record(rec)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn write_evaluation(path: &Path, e: &Evaluation) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["metric", "value"])?;
    w.write_record(["mse_x", &e.mse_x.to_string()])?;
    w.write_record(["mse_z", &e.mse_z.to_string()])?;
    w.write_record(["test_size", &e.test_size.to_string()])?;
    w.write_record(["prior_size", &e.prior_size.to_string()])?;
    if let Some(a) = e.principal_angle_deg {
        w.write_record(["principal_angle_deg", &a.to_string()])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Reads an evaluation file back into `(metric, value)` pairs.
pub fn read_evaluation(path: &Path) -> Result<Vec<(String, f64)>, ExperimentError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v = rec[1].parse().map_err(|e: std::num::ParseFloatError| ExperimentError::Parse {
            path: path.to_path_buf(),
            line: out.len() + 2,
            detail: e.to_string(),
        })?;
        out.push((rec[0].to_string(), v));
    }
    Ok(out)
}
