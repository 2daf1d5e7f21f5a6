use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    load_cifar_dir, load_mnist_dir, normalize, synthetic_dataset, CifarVariant, Dataset, Split,
};
use crate::error::{Error, Result};
use crate::harness::config::{DatasetKind, ExperimentSpec};
use crate::interflow::{
    resolve_method_config, save_checkpoint, AttentionMode, BackboneSpec, InterflowModel, Method, ModelSpec,
};
use crate::rng::derive_seed;
use crate::training::{statistics_table, train_epochs, EpochMetrics, RunRecord};

pub const METRICS_FILE: &str = "metrics.csv";
pub const WEIGHTS_FILE: &str = "weights.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SWEEP_FILE: &str = "depth_sweep.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Final attention weights of one run, as written to `weights.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightDump {
    pub method: String,
    /// `absent` (no attention), `fixed` (hard) or `learned`.
    pub attention: String,
    pub branches: usize,
    pub classes: usize,
    /// Learned weights, row-major `n` or `n×C`; empty unless learned.
    pub values: Vec<f64>,
    /// The constant weights of hard attention.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_weights: Option<Vec<f64>>,
    pub seed: u64,
    pub accuracy: f64,
}

impl WeightDump {
    pub fn from_run(model: &InterflowModel, record: &RunRecord) -> Self {
        let (attention, values, fixed_weights) = match &model.attention {
            None => ("absent", Vec::new(), None),
            Some(a) if a.mode == AttentionMode::Hard => ("fixed", Vec::new(), Some(record.final_attention_weights.clone())),
            Some(_) => ("learned", record.final_attention_weights.clone(), None),
        };
        WeightDump {
            method: record.method.clone(),
            attention: attention.into(),
            branches: if model.attention.is_some() { model.branches() } else { 0 },
            classes: model.num_classes(),
            values,
            fixed_weights,
            seed: record.seed,
            accuracy: record.final_test_acc(),
        }
    }

    /// Weights as a `branches × width` grid; width is 1 or the class count.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        let w = self.fixed_weights.as_ref().unwrap_or(&self.values);
        if self.branches == 0 || w.is_empty() {
            return Vec::new();
        }
        w.chunks(w.len() / self.branches).map(<[f64]>::to_vec).collect()
    }
}

/// Loads the train and test splits named by the spec and applies scaling,
/// caps and normalization.
pub fn load_datasets(spec: &ExperimentSpec) -> Result<(Dataset, Dataset)> {
    let dir = || {
        spec.data_dir
            .as_deref()
            .ok_or_else(|| Error::invalid(format!("dataset {} needs data_dir", spec.dataset)))
    };
    let seed = spec.train.seed;
    let (mut train, mut test) = match spec.dataset {
        DatasetKind::Mnist | DatasetKind::Kmnist | DatasetKind::Fmnist => {
            (load_mnist_dir(dir()?, Split::Train)?, load_mnist_dir(dir()?, Split::Test)?)
        }
        DatasetKind::Cifar10 | DatasetKind::Cifar100 => {
            let v = if spec.dataset == DatasetKind::Cifar10 { CifarVariant::Cifar10 } else { CifarVariant::Cifar100 };
            (load_cifar_dir(dir()?, v, Split::Train)?, load_cifar_dir(dir()?, v, Split::Test)?)
        }
        DatasetKind::Synthetic => synthetic_dataset(
            spec.synthetic_kind,
            spec.synthetic_per_class,
            spec.synthetic_classes,
            spec.synthetic_size,
            seed,
        )?,
    };
    if spec.scale < 1.0 {
        train = train.subsample(spec.scale, seed)?;
    }
    if let Some(n) = spec.max_train {
        train = train.shuffled_prefix(n, seed)?;
    }
    if let Some(n) = spec.max_test {
        test = test.shuffled_prefix(n, seed)?;
    }
    normalize(&train, &test, spec.normalize)
}

/// Backbone for the spec: the VGG plan up to depth 13, the extended plain
/// stack beyond, narrowed by `width_divisor`.
pub fn backbone_for(spec: &ExperimentSpec, input_channels: usize) -> Result<BackboneSpec> {
    let depth = match spec.method {
        Method::Deep { depth, .. } => depth,
        _ => spec.depth,
    };
    let b = if depth <= 13 { BackboneSpec::vgg(input_channels, depth)? } else { BackboneSpec::deep(input_channels, depth) };
    Ok(b.narrowed(spec.width_divisor))
}

pub fn build_model(spec: &ExperimentSpec, input_channels: usize, classes: usize) -> Result<InterflowModel> {
    let backbone = backbone_for(spec, input_channels)?;
    let model_spec = ModelSpec::for_method(spec.method, backbone, spec.boundaries.clone(), classes)?;
    InterflowModel::new(model_spec, spec.train.seed)
}

pub fn metrics_csv(per_epoch: &[EpochMetrics]) -> String {
    let mut out = String::from(EpochMetrics::CSV_HEADER);
    out.push('\n');
    for m in per_epoch {
        out.push_str(&m.csv_row());
        out.push('\n');
    }
    out
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn remove_outputs(dir: &Path) {
    for f in [METRICS_FILE, WEIGHTS_FILE, CHECKPOINT_FILE] {
        let _ = fs::remove_file(dir.join(f));
    }
}

/// Trains one experiment and writes `metrics.csv`, `weights.json` and
/// `checkpoint.bin` into the output directory. On failure none of the
/// three files is left behind.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunRecord> {
    let dir = &spec.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    remove_outputs(dir);
    let result = run_inner(spec);
    if result.is_err() {
        remove_outputs(dir);
    }
    result
}

fn run_inner(spec: &ExperimentSpec) -> Result<RunRecord> {
    let (train, test) = load_datasets(spec)?;
    let mut model = build_model(spec, train.image_shape().0, train.num_classes)?;
    let mut record = train_epochs(&mut model, &train, &test, &spec.train)?;
    record.method = spec.method.to_string();

    let dir = &spec.output_dir;
    let dump = WeightDump::from_run(&model, &record);
    let mut json = serde_json::to_string_pretty(&dump)?;
    json.push('\n');
    write(&dir.join(METRICS_FILE), metrics_csv(&record.per_epoch))?;
    write(&dir.join(WEIGHTS_FILE), json)?;
    let cfg = resolve_method_config(spec.method)?;
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &model, Some(&cfg))?;
    Ok(record)
}

/// Runs the specs in order, or on one thread each when `parallel` is set.
/// Results come back in input order either way.
fn run_all(specs: &[ExperimentSpec], parallel: bool) -> Result<Vec<RunRecord>> {
    if !parallel {
        return specs.iter().map(run_experiment).collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = specs.iter().map(|sp| s.spawn(move || run_experiment(sp))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    })
}

/// Trains a plain backbone truncated to each depth and writes
/// `depth_sweep.csv` (`depth,test_accuracy`). Each depth runs in
/// `<output_dir>/depth_<d>` with a seed derived from the base seed and depth.
pub fn depth_sweep(base: &ExperimentSpec, depths: &[usize]) -> Result<Vec<(usize, f64)>> {
    if depths.is_empty() {
        return Err(Error::invalid("no depths to sweep"));
    }
    let specs: Vec<ExperimentSpec> = depths
        .iter()
        .map(|&d| {
            let mut s = base.clone();
            s.method = Method::Normal;
            s.depth = d;
            s.boundaries = None;
            s.train.seed = derive_seed(&[base.train.seed, d as u64]);
            s.output_dir = base.output_dir.join(format!("depth_{d}"));
            s
        })
        .collect();
    let records = run_all(&specs, base.parallel)?;
    let table: Vec<(usize, f64)> = depths.iter().copied().zip(records.iter().map(RunRecord::final_test_acc)).collect();
    let mut csv = String::from("depth,test_accuracy\n");
    for (d, acc) in &table {
        csv.push_str(&format!("{d},{acc}\n"));
    }
    write(&base.output_dir.join(SWEEP_FILE), csv)?;
    Ok(table)
}

/// Runs the spec once per seed in `<output_dir>/run_<i>` (1-based) and
/// writes the statistics table to `summary.csv`. `exclude` holds 1-based
/// run numbers, each adding a `Mean (-k)` / `Var (-k)` row pair.
pub fn repeat_with_seeds(spec: &ExperimentSpec, seeds: &[u64], exclude: &[usize]) -> Result<(Vec<RunRecord>, String)> {
    if seeds.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 repetitions, got {}", seeds.len())));
    }
    if let Some(&k) = exclude.iter().find(|&&k| k == 0 || k > seeds.len()) {
        return Err(Error::invalid(format!("cannot exclude run {k} of {}", seeds.len())));
    }
    let specs: Vec<ExperimentSpec> = seeds
        .iter()
        .enumerate()
        .map(|(i, &seed)| {
            let mut s = spec.clone();
            s.train.seed = seed;
            s.output_dir = run_dir(&spec.output_dir, i + 1);
            s
        })
        .collect();
    let records = run_all(&specs, spec.parallel)?;
    let zero_based: Vec<usize> = exclude.iter().map(|k| k - 1).collect();
    let table = statistics_table(&records, &zero_based)?;
    write(&spec.output_dir.join(SUMMARY_FILE), &table)?;
    Ok((records, table))
}

/// [`repeat_with_seeds`] with seeds `seed, seed+1, …, seed+n−1`.
pub fn repeat_and_summarize(spec: &ExperimentSpec, repetitions: usize, exclude: &[usize]) -> Result<(Vec<RunRecord>, String)> {
    let seeds: Vec<u64> = (0..repetitions as u64).map(|i| spec.train.seed.wrapping_add(i)).collect();
    repeat_with_seeds(spec, &seeds, exclude)
}

pub fn run_dir(base: &Path, run: usize) -> PathBuf {
    base.join(format!("run_{run}"))
}

pub fn read_weight_dump(path: &Path) -> Result<WeightDump> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Coordinate-wise mean of several dumps as a CSV grid: one row per branch,
/// one column per class (or a single `weight` column for scalar modes).
pub fn mean_weight_table(dumps: &[WeightDump]) -> Result<String> {
    let first = dumps.first().ok_or_else(|| Error::invalid("no weight dumps given"))?;
    let grid = first.rows();
    if grid.is_empty() {
        return Err(Error::invalid(format!("method {} has no attention weights", first.method)));
    }
    let mut sum = vec![vec![0.0; grid[0].len()]; grid.len()];
    for d in dumps {
        let rows = d.rows();
        if rows.len() != sum.len() || rows.iter().any(|r| r.len() != sum[0].len()) {
            return Err(Error::invalid("weight dumps have different shapes"));
        }
        for (acc, row) in sum.iter_mut().zip(&rows) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    let width = sum[0].len();
    let mut out = String::from("branch");
    if width == 1 {
        out.push_str(",weight");
    } else {
        for c in 1..=width {
            out.push_str(&format!(",class{c}"));
        }
    }
    out.push('\n');
    for (i, row) in sum.iter().enumerate() {
        out.push_str(&(i + 1).to_string());
        for v in row {
            out.push_str(&format!(",{}", v / dumps.len() as f64));
        }
        out.push('\n');
    }
    Ok(out)
}
