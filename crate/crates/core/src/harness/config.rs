//! `key = value` experiment configuration.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::{NormalizeMode, SyntheticKind};
use crate::error::{Error, Result};
use crate::interflow::Method;
use crate::training::schedule::{TrainConfig, LR_TAIL_EPOCHS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Kmnist,
    Fmnist,
    Cifar10,
    Cifar100,
    Synthetic,
}

impl DatasetKind {
    pub fn needs_files(self) -> bool {
        self != DatasetKind::Synthetic
    }

    /// Default epoch count: 100 for the CIFAR sets, 40 otherwise.
    pub fn default_epochs(self) -> usize {
        match self {
            DatasetKind::Cifar10 | DatasetKind::Cifar100 => 100,
            _ => 40,
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Kmnist => "kmnist",
            DatasetKind::Fmnist => "fmnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Cifar100 => "cifar100",
            DatasetKind::Synthetic => "synthetic",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mnist" => DatasetKind::Mnist,
            "kmnist" => DatasetKind::Kmnist,
            "fmnist" => DatasetKind::Fmnist,
            "cifar10" => DatasetKind::Cifar10,
            "cifar100" => DatasetKind::Cifar100,
            "synthetic" => DatasetKind::Synthetic,
            _ => {
                return Err(Error::invalid(format!(
                    "unknown dataset {s:?} (mnist, kmnist, fmnist, cifar10, cifar100, synthetic)"
                )))
            }
        })
    }
}

/// A fully resolved experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub method: Method,
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Fraction of the training split kept after a seeded shuffle.
    pub scale: f64,
    /// Caps applied after `scale`.
    pub max_train: Option<usize>,
    pub max_test: Option<usize>,
    pub train: TrainConfig,
    /// Backbone depth. VGG truncation for the interflow methods, ignored
    /// for `deep:` methods which carry their own.
    pub depth: usize,
    pub boundaries: Option<Vec<usize>>,
    pub width_divisor: usize,
    pub normalize: NormalizeMode,
    pub synthetic_kind: SyntheticKind,
    pub synthetic_classes: usize,
    pub synthetic_per_class: usize,
    pub synthetic_size: usize,
    /// Run independent experiments of a sweep or repeat concurrently.
    pub parallel: bool,
}

impl ExperimentSpec {
    /// Defaults for `method` on `dataset`.
    pub fn new(method: Method, dataset: DatasetKind) -> Self {
        ExperimentSpec {
            method,
            dataset,
            data_dir: None,
            output_dir: PathBuf::from("runs"),
            scale: 1.0,
            max_train: None,
            max_test: None,
            train: TrainConfig::new(dataset.default_epochs(), 0),
            depth: 13,
            boundaries: None,
            width_divisor: 1,
            normalize: NormalizeMode::UnitRange,
            synthetic_kind: SyntheticKind::Blobs,
            synthetic_classes: 10,
            synthetic_per_class: 50,
            synthetic_size: 16,
            parallel: false,
        }
    }
}

pub const KEYS: &[&str] = &[
    "method",
    "dataset",
    "data_dir",
    "output_dir",
    "out",
    "epochs",
    "batch_size",
    "seed",
    "scale",
    "max_train",
    "max_test",
    "lr_initial",
    "lr_final",
    "lr_drop_epoch",
    "momentum",
    "weight_decay",
    "augment",
    "depth",
    "boundaries",
    "width_divisor",
    "normalize",
    "synthetic_kind",
    "synthetic_classes",
    "synthetic_per_class",
    "synthetic_size",
    "parallel",
];

/// Where a setting came from: a 1-based config line, or the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Origin {
    Line(usize),
    Flag,
}

fn fail(origin: Origin, key: &str, message: String) -> Error {
    match origin {
        Origin::Line(line) => Error::Config { line, message },
        Origin::Flag => Error::invalid(format!("--{key}: {message}")),
    }
}

fn value<T: FromStr>(origin: Origin, key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| fail(origin, key, format!("cannot parse {raw:?} for {key}")))
}

fn list(origin: Origin, key: &str, raw: &str) -> Result<Vec<usize>> {
    raw.split(',').map(|s| value(origin, key, s.trim())).collect()
}

/// Splits the config text into `(key, value, line)` entries. A later
/// setting of a key replaces an earlier one.
fn lex(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            message: format!("expected `key = value`, got {content:?}"),
        })?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(Error::Config {
                line,
                message: format!("unknown key {k:?}"),
            });
        }
        out.push((k.to_string(), v.trim().to_string(), line));
    }
    Ok(out)
}

/// Resolves a config file plus command-line overrides (which win) into a
/// spec with defaults for everything unset.
pub fn parse_config(text: &str, overrides: &[(String, String)]) -> Result<ExperimentSpec> {
    let mut settings: HashMap<String, (String, Origin)> = HashMap::new();
    for (k, v, line) in lex(text)? {
        settings.insert(k, (v, Origin::Line(line)));
    }
    for (k, v) in overrides {
        if !KEYS.contains(&k.as_str()) {
            return Err(Error::invalid(format!("unknown setting --{k}")));
        }
        settings.insert(k.clone(), (v.clone(), Origin::Flag));
    }
    if let Some(out) = settings.remove("out") {
        settings.insert("output_dir".into(), out);
    }
    let get = |k: &str| settings.get(k).map(|(v, o)| (v.as_str(), *o));

    let required = |k: &str| {
        get(k).ok_or_else(|| Error::invalid(format!("`{k}` must be set in the config file or with --{k}")))
    };
    let (m, mo) = required("method")?;
    let method: Method = m.parse().map_err(|e: Error| fail(mo, "method", e.to_string()))?;
    let (d, dorigin) = required("dataset")?;
    let dataset: DatasetKind = d.parse().map_err(|e: Error| fail(dorigin, "dataset", e.to_string()))?;

    let mut spec = ExperimentSpec::new(method, dataset);
    let mut drop_set = false;
    for (key, (raw, origin)) in &settings {
        let (o, k, r) = (*origin, key.as_str(), raw.as_str());
        match k {
            "method" | "dataset" => {}
            "data_dir" => spec.data_dir = Some(PathBuf::from(r)),
            "output_dir" => spec.output_dir = PathBuf::from(r),
            "epochs" => spec.train.epochs = value(o, k, r)?,
            "batch_size" => spec.train.batch_size = value(o, k, r)?,
            "seed" => spec.train.seed = value(o, k, r)?,
            "scale" => spec.scale = value(o, k, r)?,
            "max_train" => spec.max_train = Some(value(o, k, r)?),
            "max_test" => spec.max_test = Some(value(o, k, r)?),
            "lr_initial" => spec.train.lr_initial = value(o, k, r)?,
            "lr_final" => spec.train.lr_final = value(o, k, r)?,
            "lr_drop_epoch" => {
                spec.train.lr_drop_epoch = value(o, k, r)?;
                drop_set = true;
            }
            "momentum" => spec.train.momentum = value(o, k, r)?,
            "weight_decay" => spec.train.weight_decay = value(o, k, r)?,
            "augment" => spec.train.augment = value(o, k, r)?,
            "depth" => spec.depth = value(o, k, r)?,
            "boundaries" => spec.boundaries = Some(list(o, k, r)?),
            "width_divisor" => spec.width_divisor = value(o, k, r)?,
            "normalize" => spec.normalize = r.parse().map_err(|e: Error| fail(o, k, e.to_string()))?,
            "synthetic_kind" => spec.synthetic_kind = r.parse().map_err(|e: Error| fail(o, k, e.to_string()))?,
            "synthetic_classes" => spec.synthetic_classes = value(o, k, r)?,
            "synthetic_per_class" => spec.synthetic_per_class = value(o, k, r)?,
            "synthetic_size" => spec.synthetic_size = value(o, k, r)?,
            "parallel" => spec.parallel = value(o, k, r)?,
            _ => unreachable!("keys are checked against KEYS"),
        }
    }
    if !drop_set {
        spec.train.lr_drop_epoch = spec.train.epochs.saturating_sub(LR_TAIL_EPOCHS);
    }

    let at = |k: &str| get(k).map_or(Origin::Flag, |(_, o)| o);
    if !(spec.scale > 0.0 && spec.scale <= 1.0) {
        return Err(fail(at("scale"), "scale", format!("scale must be in (0, 1], got {}", spec.scale)));
    }
    if spec.width_divisor == 0 {
        return Err(fail(at("width_divisor"), "width_divisor", "width_divisor must be >= 1".into()));
    }
    if let Err(e) = spec.train.validate() {
        let key = ["epochs", "batch_size", "momentum", "weight_decay", "lr_initial", "lr_final", "lr_drop_epoch"]
            .into_iter()
            .find(|k| get(k).is_some())
            .unwrap_or("epochs");
        return Err(fail(at(key), key, e.to_string()));
    }
    if dataset.needs_files() {
        match &spec.data_dir {
            None => {
                return Err(fail(dorigin, "dataset", format!("dataset {dataset} needs data_dir")));
            }
            Some(dir) if !dir.is_dir() => {
                return Err(fail(
                    at("data_dir"),
                    "data_dir",
                    format!("data_dir {} does not exist", dir.display()),
                ));
            }
            Some(_) => {}
        }
    }
    Ok(spec)
}
