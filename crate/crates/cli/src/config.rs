//! Flat `key = value` experiment configuration.
//!
//! Resolution order: profile defaults, then the file, then `--set` overrides.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;
use wdrank_core::data::{self, Dataset, Normalize};
use wdrank_core::training::{GSpec, TrainConfig};

/// Where a config value came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    /// The `index`-th `--set` flag (1-based).
    Flag(usize),
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Flag(n) => write!(f, "--set #{n}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}: unknown key `{key}`")]
    UnknownKey { origin: Origin, key: String },

    #[error("{origin}: `{key}` expects {expected}, got `{value}`")]
    TypeMismatch {
        origin: Origin,
        key: String,
        expected: &'static str,
        value: String,
    },

    #[error("line {line}: missing required key `{key}`{hint}")]
    MissingKey { line: usize, key: &'static str, hint: String },

    #[error("{origin}: malformed entry `{text}`, expected `key = value`")]
    Syntax { origin: Origin, text: String },

    #[error("{origin}: `{key}` already set on line {first}")]
    Duplicate { origin: Origin, key: String, first: usize },

    #[error("{origin}: {message}")]
    Invalid { origin: Origin, message: String },

    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    pub fn kind(&self) -> &'static str {
        match self {
            ConfigError::UnknownKey { .. } => "unknown_key",
            ConfigError::TypeMismatch { .. } => "type_mismatch",
            ConfigError::MissingKey { .. } => "missing_key",
            ConfigError::Syntax { .. } => "config_syntax",
            ConfigError::Duplicate { .. } => "duplicate_key",
            ConfigError::Invalid { .. } => "invalid_config",
            ConfigError::Read { .. } => "io",
        }
    }

    /// Line number the error points at, when it points into the file.
    pub fn line(&self) -> Option<usize> {
        let origin = match self {
            ConfigError::MissingKey { line, .. } => return Some(*line),
            ConfigError::Read { .. } => return None,
            ConfigError::UnknownKey { origin, .. }
            | ConfigError::TypeMismatch { origin, .. }
            | ConfigError::Syntax { origin, .. }
            | ConfigError::Duplicate { origin, .. }
            | ConfigError::Invalid { origin, .. } => origin,
        };
        match origin {
            Origin::Line(n) => Some(*n),
            Origin::Flag(_) => None,
        }
    }
}

/// Hyperparameter presets. `housing` and `mnist` follow the published
/// protocol; `teacher` is a desk-scale preset for synthetic data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Housing,
    Mnist,
    Teacher,
}

impl Profile {
    fn parse(s: &str) -> Option<Profile> {
        match s {
            "housing" => Some(Profile::Housing),
            "mnist" => Some(Profile::Mnist),
            "teacher" => Some(Profile::Teacher),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Csv {
        path: PathBuf,
        target_column: String,
        normalize: Normalize,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Teacher {
        dim: usize,
        samples: usize,
        rank: usize,
        noise_std: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub source: DataSource,
    pub n_train: usize,
    pub n_test: usize,
    /// Seeds the train/test split and the synthetic teacher.
    pub data_seed: u64,
    pub width: usize,
    /// Seed of the Kaiming initialization; `train.seed` drives the shuffles.
    pub init_seed: u64,
    pub train: TrainConfig,
    pub census_bins: usize,
    pub certify: bool,
    pub sweep_mu_v: Vec<f64>,
    pub sweep_batch_size: Vec<usize>,
    pub sweep_seed: Vec<u64>,
}

const KEYS: &[&str] = &[
    "profile",
    "csv",
    "target_column",
    "normalize",
    "minmax_lo",
    "minmax_hi",
    "idx_images",
    "idx_labels",
    "teacher_dim",
    "teacher_samples",
    "teacher_rank",
    "teacher_noise",
    "n_train",
    "n_test",
    "data_seed",
    "width",
    "batch_size",
    "epochs",
    "lr0",
    "decay_factor",
    "decay_period",
    "mu_u",
    "mu_b",
    "mu_v",
    "g",
    "g_a",
    "g_c",
    "seed",
    "init_seed",
    "drop_last",
    "census_bins",
    "certify",
    "sweep_mu_v",
    "sweep_batch_size",
    "sweep_seed",
];

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    origin: Origin,
}

fn split_entry(text: &str, origin: Origin) -> Result<(String, String), ConfigError> {
    let (key, value) = text.split_once('=').ok_or_else(|| ConfigError::Syntax {
        origin,
        text: text.to_string(),
    })?;
    let (key, value) = (key.trim(), value.trim());
    if key.is_empty() {
        return Err(ConfigError::Syntax {
            origin,
            text: text.to_string(),
        });
    }
    if !KEYS.contains(&key) {
        return Err(ConfigError::UnknownKey {
            origin,
            key: key.to_string(),
        });
    }
    Ok((key.to_string(), value.to_string()))
}

struct Entries {
    map: HashMap<String, Entry>,
    last_line: usize,
}

impl Entries {
    fn get(&self, key: &str) -> Option<&Entry> {
        self.map.get(key)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, expected: &'static str) -> Result<Option<T>, ConfigError> {
        let Some(e) = self.get(key) else { return Ok(None) };
        e.value.parse().map(Some).map_err(|_| ConfigError::TypeMismatch {
            origin: e.origin,
            key: key.to_string(),
            expected,
            value: e.value.clone(),
        })
    }

    fn float(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        let v: Option<f64> = self.parse(key, "a real number")?;
        match v {
            Some(x) if !x.is_finite() => Err(self.mismatch(key, "a finite real number")),
            other => Ok(other),
        }
    }

    fn uint(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        self.parse(key, "a non-negative integer")
    }

    fn seed(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.parse(key, "a non-negative integer seed")
    }

    fn boolean(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        self.parse(key, "`true` or `false`")
    }

    fn list<T: std::str::FromStr>(&self, key: &str, expected: &'static str) -> Result<Option<Vec<T>>, ConfigError> {
        let Some(e) = self.get(key) else { return Ok(None) };
        let items: Result<Vec<T>, _> = e
            .value
            .split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<T>())
            .collect();
        match items {
            Ok(v) if !v.is_empty() => Ok(Some(v)),
            _ => Err(self.mismatch(key, expected)),
        }
    }

    fn mismatch(&self, key: &str, expected: &'static str) -> ConfigError {
        let e = &self.map[key];
        ConfigError::TypeMismatch {
            origin: e.origin,
            key: key.to_string(),
            expected,
            value: e.value.clone(),
        }
    }

    fn invalid(&self, key: &str, message: String) -> ConfigError {
        ConfigError::Invalid {
            origin: self.map[key].origin,
            message,
        }
    }

    /// Line a missing dependent key is reported at: the key that needs it.
    fn line_of(&self, key: &str) -> usize {
        match self.get(key).map(|e| e.origin) {
            Some(Origin::Line(n)) => n,
            _ => self.last_line,
        }
    }
}

struct Preset {
    width: usize,
    epochs: usize,
    mu: f64,
    batch_size: usize,
    n_train: usize,
    n_test: usize,
}

fn preset(profile: Profile) -> Preset {
    match profile {
        Profile::Housing => Preset {
            width: 8192,
            epochs: 5000,
            mu: 1e-4,
            batch_size: 16,
            n_train: 1800,
            n_test: 600,
        },
        Profile::Mnist => Preset {
            width: 32768,
            epochs: 2000,
            mu: 1e-6,
            batch_size: 64,
            n_train: 9000,
            n_test: 1000,
        },
        Profile::Teacher => Preset {
            width: 256,
            epochs: 2000,
            mu: 1e-4,
            batch_size: 16,
            n_train: 512,
            n_test: 128,
        },
    }
}

/// Parses config text. `profile` (from a flag) beats a `profile` key;
/// `overrides` are `key=value` strings applied after the file.
pub fn parse_config(text: &str, profile: Option<Profile>, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut map: HashMap<String, Entry> = HashMap::new();
    let mut last_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let origin = Origin::Line(line);
        let (key, value) = split_entry(content, origin)?;
        if let Some(prev) = map.get(&key) {
            if let Origin::Line(first) = prev.origin {
                return Err(ConfigError::Duplicate { origin, key, first });
            }
        }
        map.insert(key, Entry { value, origin });
    }
    for (idx, text) in overrides.iter().enumerate() {
        let origin = Origin::Flag(idx + 1);
        let (key, value) = split_entry(text, origin)?;
        map.insert(key, Entry { value, origin });
    }
    let entries = Entries {
        map,
        last_line: last_line.max(1),
    };
    resolve(&entries, profile)
}

pub fn load_config(path: &Path, profile: Option<Profile>, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, profile, overrides)
}

fn resolve(e: &Entries, profile_flag: Option<Profile>) -> Result<ExperimentConfig, ConfigError> {
    let sources: Vec<&str> = ["csv", "idx_images", "teacher_dim"]
        .into_iter()
        .filter(|k| e.get(k).is_some())
        .collect();
    if sources.len() > 1 {
        // blame whichever source was set last
        let mut by_line = sources.clone();
        by_line.sort_by_key(|k| match e.map[*k].origin {
            Origin::Line(n) => (0, n),
            Origin::Flag(n) => (1, n),
        });
        return Err(e.invalid(
            by_line[1],
            format!("only one data source may be given, found `{}` and `{}`", by_line[0], by_line[1]),
        ));
    }
    let Some(&source_key) = sources.first() else {
        return Err(ConfigError::MissingKey {
            line: e.last_line,
            key: "csv",
            hint: " (or `idx_images` or `teacher_dim`): no data source".into(),
        });
    };

    let profile = match profile_flag {
        Some(p) => p,
        None => match e.get("profile") {
            Some(entry) => Profile::parse(&entry.value).ok_or_else(|| e.mismatch("profile", "`housing`, `mnist` or `teacher`"))?,
            None => match source_key {
                "csv" => Profile::Housing,
                "idx_images" => Profile::Mnist,
                _ => Profile::Teacher,
            },
        },
    };
    let p = preset(profile);

    let n_train = e.uint("n_train")?.unwrap_or(p.n_train);
    let n_test = e.uint("n_test")?.unwrap_or(p.n_test);

    let source = match source_key {
        "csv" => {
            let target_column = match e.get("target_column") {
                Some(t) => t.value.clone(),
                None => {
                    return Err(ConfigError::MissingKey {
                        line: e.line_of("csv"),
                        key: "target_column",
                        hint: " for the csv data source".into(),
                    })
                }
            };
            let normalize = match e.get("normalize").map(|x| x.value.as_str()) {
                None | Some("none") => Normalize::None,
                Some("zscore") => Normalize::ZScore,
                Some("minmax") => Normalize::MinMax {
                    lo: e.float("minmax_lo")?.unwrap_or(-1.0),
                    hi: e.float("minmax_hi")?.unwrap_or(1.0),
                },
                Some(_) => return Err(e.mismatch("normalize", "`none`, `zscore` or `minmax`")),
            };
            DataSource::Csv {
                path: PathBuf::from(&e.get("csv").unwrap().value),
                target_column,
                normalize,
            }
        }
        "idx_images" => {
            let labels = e.get("idx_labels").ok_or_else(|| ConfigError::MissingKey {
                line: e.line_of("idx_images"),
                key: "idx_labels",
                hint: " for the idx data source".into(),
            })?;
            DataSource::Idx {
                images: PathBuf::from(&e.get("idx_images").unwrap().value),
                labels: PathBuf::from(&labels.value),
            }
        }
        _ => {
            let dim = e.uint("teacher_dim")?.unwrap();
            DataSource::Teacher {
                dim,
                samples: e.uint("teacher_samples")?.unwrap_or(n_train + n_test),
                rank: e.uint("teacher_rank")?.unwrap_or(2.min(dim)),
                noise_std: e.float("teacher_noise")?.unwrap_or(0.1),
            }
        }
    };

    let gspec = match e.get("g").map(|x| x.value.as_str()) {
        None | Some("constant") => GSpec::Constant {
            mu_v: e.float("mu_v")?.unwrap_or(1.0),
        },
        Some("affine_y2") => {
            let need = |key: &'static str| -> Result<f64, ConfigError> {
                e.float(key)?.ok_or_else(|| ConfigError::MissingKey {
                    line: e.line_of("g"),
                    key,
                    hint: " for g = affine_y2".into(),
                })
            };
            GSpec::AffineInY2 {
                a: need("g_a")?,
                c: need("g_c")?,
            }
        }
        Some(_) => return Err(e.mismatch("g", "`constant` or `affine_y2`")),
    };

    let seed = e.seed("seed")?.unwrap_or(0);
    let train = TrainConfig {
        batch_size: e.uint("batch_size")?.unwrap_or(p.batch_size),
        epochs: e.uint("epochs")?.unwrap_or(p.epochs),
        lr0: e.float("lr0")?.unwrap_or(1e-4),
        decay_factor: e.float("decay_factor")?.unwrap_or(0.95),
        decay_period: e.uint("decay_period")?.unwrap_or(200),
        mu_u: e.float("mu_u")?.unwrap_or(p.mu),
        mu_b: e.float("mu_b")?.unwrap_or(p.mu),
        gspec,
        seed,
        drop_last: e.boolean("drop_last")?.unwrap_or(true),
    };

    let config = ExperimentConfig {
        profile,
        source,
        n_train,
        n_test,
        data_seed: e.seed("data_seed")?.unwrap_or(0),
        width: e.uint("width")?.unwrap_or(p.width),
        init_seed: e.seed("init_seed")?.unwrap_or(seed),
        train,
        census_bins: e.uint("census_bins")?.unwrap_or(wdrank_core::analysis::DEFAULT_BINS),
        certify: e.boolean("certify")?.unwrap_or(true),
        sweep_mu_v: e.list("sweep_mu_v", "a comma-separated list of reals")?.unwrap_or_default(),
        sweep_batch_size: e
            .list("sweep_batch_size", "a comma-separated list of integers")?
            .unwrap_or_default(),
        sweep_seed: e
            .list("sweep_seed", "a comma-separated list of integer seeds")?
            .unwrap_or_default(),
    };
    check_ranges(e, &config)?;
    Ok(config)
}

fn check_ranges(e: &Entries, c: &ExperimentConfig) -> Result<(), ConfigError> {
    let positive = |key: &str, ok: bool| -> Result<(), ConfigError> {
        match (ok, e.get(key)) {
            (false, Some(_)) => Err(e.invalid(key, format!("`{key}` is out of range"))),
            _ => Ok(()),
        }
    };
    positive("width", c.width >= 1)?;
    positive("n_train", c.n_train >= 1)?;
    positive("census_bins", c.census_bins >= 1)?;
    positive("lr0", c.train.lr0 > 0.0)?;
    positive("decay_factor", c.train.decay_factor > 0.0 && c.train.decay_factor <= 1.0)?;
    positive("decay_period", c.train.decay_period >= 1)?;
    positive("mu_u", c.train.mu_u >= 0.0)?;
    positive("mu_b", c.train.mu_b >= 0.0)?;
    positive("batch_size", c.train.batch_size >= 2)?;
    if let GSpec::Constant { mu_v } = c.train.gspec {
        positive("mu_v", mu_v > 0.0)?;
    }
    if let GSpec::AffineInY2 { a, c: cc } = c.train.gspec {
        positive("g_a", a > 0.0)?;
        positive("g_c", cc >= 0.0)?;
    }
    if let Some(bad) = c.sweep_mu_v.iter().find(|&&m| !(m > 0.0)) {
        return Err(e.invalid("sweep_mu_v", format!("sweep_mu_v values must be positive, got {bad}")));
    }
    if let Some(bad) = c.sweep_batch_size.iter().find(|&&b| b < 2) {
        return Err(e.invalid("sweep_batch_size", format!("sweep_batch_size values must be >= 2, got {bad}")));
    }
    if let DataSource::Teacher { dim, rank, noise_std, .. } = c.source {
        positive("teacher_dim", dim >= 1)?;
        positive("teacher_rank", rank >= 1 && rank <= dim)?;
        positive("teacher_noise", noise_std >= 0.0)?;
    }
    Ok(())
}

impl ExperimentConfig {
    /// Sweep axes, each defaulting to the single configured value.
    pub fn grid(&self) -> Vec<(f64, usize, u64)> {
        let mus = if self.sweep_mu_v.is_empty() {
            match self.train.gspec {
                GSpec::Constant { mu_v } => vec![mu_v],
                _ => vec![f64::NAN],
            }
        } else {
            self.sweep_mu_v.clone()
        };
        let bs = if self.sweep_batch_size.is_empty() {
            vec![self.train.batch_size]
        } else {
            self.sweep_batch_size.clone()
        };
        let seeds = if self.sweep_seed.is_empty() { vec![self.train.seed] } else { self.sweep_seed.clone() };
        let mut out = Vec::new();
        for &mu in &mus {
            for &b in &bs {
                for &s in &seeds {
                    out.push((mu, b, s));
                }
            }
        }
        out
    }

    /// Loads the data source and splits it. Relative paths are resolved
    /// against `data_dir`.
    pub fn load_data(&self, data_dir: Option<&Path>) -> wdrank_core::Result<(Dataset, Dataset)> {
        let resolve = |p: &Path| match data_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        };
        let full = match &self.source {
            DataSource::Csv {
                path,
                target_column,
                normalize,
            } => data::load_csv(resolve(path), target_column, *normalize)?,
            DataSource::Idx { images, labels } => data::load_idx(resolve(images), resolve(labels))?,
            DataSource::Teacher {
                dim,
                samples,
                rank,
                noise_std,
            } => data::synthetic_teacher(*dim, *samples, *rank, *noise_std, self.data_seed)?.dataset,
        };
        data::split(&full, self.n_train, self.n_test, self.data_seed)
    }
}
