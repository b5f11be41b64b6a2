//! Subcommand bodies. Every output path is relative to the caller's output
//! directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use wdrank_core::analysis::{
    self, build_certificate, gradient_census, BatchFamily, BoundReport, CertificateMode, GradientCensus, RankCertificate,
};
use wdrank_core::data::{synthetic_teacher, Dataset};
use wdrank_core::linalg::{frobenius_norm, gaussian_matrix, numerical_rank, singular_values, stable_rank};
use wdrank_core::training::{train, GSpec, TrainLog};
use wdrank_core::TwoLayerNet;

use crate::config::ExperimentConfig;

pub const TRAIN_LOG: &str = "train_log.csv";
pub const CHECKPOINT: &str = "checkpoint.txt";
pub const SWEEP_SUMMARY: &str = "sweep_summary.csv";
pub const SWEEP_HEADER: &str =
    "mu_v,batch_size,seed,final_stable_rank,train_mse,test_mse,gap,epsilon,cert_distance,cert_bound,cert_holds";

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<TwoLayerNet> {
    let file = File::open(path).with_context(|| format!("opening checkpoint {}", path.display()))?;
    Ok(TwoLayerNet::read_checkpoint(std::io::BufReader::new(file))?)
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub epochs: usize,
    pub final_stable_rank: f64,
    pub v_fro: f64,
    pub train_mse: f64,
    pub test_mse: f64,
    pub gap: f64,
    /// Only for integer labels in `[0, 9]`.
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

/// Trains from a fresh initialization and writes the log and checkpoint into `dir`.
pub fn train_run(config: &ExperimentConfig, train_set: &Dataset, test_set: &Dataset, dir: &Path) -> Result<(TwoLayerNet, RunSummary)> {
    let init = TwoLayerNet::kaiming_init(config.width, train_set.input_dim(), config.init_seed)?;
    let (net, log) = train(init, train_set, test_set, &config.train)?;
    write_run(&net, &log, dir)?;
    let gap = analysis::generalization_gap(&net, train_set, test_set)?;
    let summary = RunSummary {
        epochs: log.records.len(),
        final_stable_rank: stable_rank(net.v()).unwrap_or(f64::NAN),
        v_fro: frobenius_norm(net.v()),
        train_mse: gap.train_mse,
        test_mse: gap.test_mse,
        gap: gap.gap,
        train_accuracy: analysis::accuracy_round(&net, train_set).ok(),
        test_accuracy: analysis::accuracy_round(&net, test_set).ok(),
    };
    Ok((net, summary))
}

fn write_run(net: &TwoLayerNet, log: &TrainLog, dir: &Path) -> Result<()> {
    let mut w = create(&dir.join(TRAIN_LOG))?;
    log.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&dir.join(CHECKPOINT))?;
    net.write_checkpoint(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn cmd_train(config: &ExperimentConfig, data_dir: Option<&Path>, out: &Path) -> Result<RunSummary> {
    let (train_set, test_set) = config.load_data(data_dir)?;
    let (_, summary) = train_run(config, &train_set, &test_set, out)?;
    write_json(&out.join("config.json"), config)?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub mu_v: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub final_stable_rank: f64,
    pub train_mse: f64,
    pub test_mse: f64,
    pub gap: f64,
    pub epsilon: f64,
    pub cert_distance: f64,
    pub cert_bound: f64,
    /// `None` when the point failed or certification was disabled.
    pub cert_holds: Option<bool>,
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(mu_v: f64, batch_size: usize, seed: u64, error: String) -> Self {
        SweepRow {
            mu_v,
            batch_size,
            seed,
            final_stable_rank: f64::NAN,
            train_mse: f64::NAN,
            test_mse: f64::NAN,
            gap: f64::NAN,
            epsilon: f64::NAN,
            cert_distance: f64::NAN,
            cert_bound: f64::NAN,
            cert_holds: None,
            error: Some(error),
        }
    }

    fn csv_line(&self) -> String {
        let holds = match (&self.error, self.cert_holds) {
            (Some(_), _) => "error".to_string(),
            (None, Some(h)) => h.to_string(),
            (None, None) => "skipped".to_string(),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.mu_v,
            self.batch_size,
            self.seed,
            self.final_stable_rank,
            self.train_mse,
            self.test_mse,
            self.gap,
            self.epsilon,
            self.cert_distance,
            self.cert_bound,
            holds
        )
    }
}

/// Config of one grid point: the axis values replace `mu_v`, `batch_size`
/// and `seed`; an explicit seed axis also reseeds the initialization.
pub fn point_config(config: &ExperimentConfig, mu_v: f64, batch_size: usize, seed: u64) -> ExperimentConfig {
    let mut c = config.clone();
    if let GSpec::Constant { .. } = c.train.gspec {
        c.train.gspec = GSpec::Constant { mu_v };
    }
    c.train.batch_size = batch_size;
    if !config.sweep_seed.is_empty() {
        c.train.seed = seed;
        c.init_seed = seed;
    }
    c
}

pub fn run_dir(mu_v: f64, batch_size: usize, seed: u64) -> PathBuf {
    PathBuf::from("runs").join(format!("mu_v-{mu_v}_b-{batch_size}_seed-{seed}"))
}

fn certificate_mode(g: GSpec) -> CertificateMode {
    if g.is_constant() {
        CertificateMode::ConstantG { i1: None }
    } else {
        CertificateMode::VariableG { pair: None }
    }
}

fn sweep_point(config: &ExperimentConfig, train_set: &Dataset, test_set: &Dataset, dir: &Path) -> Result<SweepRow> {
    let (net, summary) = train_run(config, train_set, test_set, dir)?;
    let t = &config.train;
    let family = BatchFamily::EpochPartition {
        seed: t.seed,
        epoch: t.epochs.saturating_sub(1),
    };
    let census = gradient_census(&net, train_set, t.batch_size, t.gspec, family, config.census_bins)?;
    let (cert_distance, cert_bound, cert_holds) = if config.certify {
        let cert = build_certificate(&net, train_set, t.batch_size, t.gspec, &certificate_mode(t.gspec), None)?;
        (cert.distance, cert.constant_proof * cert.epsilon, Some(cert.holds_proof))
    } else {
        (f64::NAN, f64::NAN, None)
    };
    let mu_v = match t.gspec {
        GSpec::Constant { mu_v } => mu_v,
        _ => f64::NAN,
    };
    Ok(SweepRow {
        mu_v,
        batch_size: t.batch_size,
        seed: t.seed,
        final_stable_rank: summary.final_stable_rank,
        train_mse: summary.train_mse,
        test_mse: summary.test_mse,
        gap: summary.gap,
        epsilon: census.epsilon,
        cert_distance,
        cert_bound,
        cert_holds,
        error: None,
    })
}

/// Runs every grid point in order. A failing point is recorded in the summary
/// and in `sweep_errors.json` and does not stop the sweep.
pub fn cmd_sweep(config: &ExperimentConfig, data_dir: Option<&Path>, out: &Path) -> Result<Vec<SweepRow>> {
    let (train_set, test_set) = config.load_data(data_dir)?;
    write_json(&out.join("config.json"), config)?;
    let mut summary = create(&out.join(SWEEP_SUMMARY))?;
    writeln!(summary, "{SWEEP_HEADER}")?;
    let mut rows = Vec::new();
    for (mu_v, batch_size, seed) in config.grid() {
        let point = point_config(config, mu_v, batch_size, seed);
        let dir = out.join(run_dir(mu_v, batch_size, seed));
        let row = match sweep_point(&point, &train_set, &test_set, &dir) {
            Ok(row) => row,
            Err(e) => SweepRow::failed(mu_v, batch_size, point.train.seed, format!("{e:#}")),
        };
        writeln!(summary, "{}", row.csv_line())?;
        summary.flush()?;
        rows.push(row);
    }
    let failures: Vec<&SweepRow> = rows.iter().filter(|r| r.error.is_some()).collect();
    if !failures.is_empty() {
        write_json(&out.join("sweep_errors.json"), &failures)?;
    }
    Ok(rows)
}

/// Census family selector for the `census` subcommand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum FamilyKind {
    /// Complete batches of one training epoch.
    Epoch,
    /// Independently drawn batches.
    Random,
    /// The swap family used by the rank certificate.
    Swap,
}

#[derive(Clone, Debug)]
pub struct CensusArgs {
    pub family: FamilyKind,
    pub epoch: Option<usize>,
    pub count: usize,
    pub family_seed: Option<u64>,
    pub i1: usize,
}

#[derive(Debug, Serialize)]
pub struct CensusSummary {
    pub family: BatchFamily,
    pub batches: usize,
    pub epsilon: f64,
    pub mean: f64,
}

pub fn cmd_census(config: &ExperimentConfig, net: &TwoLayerNet, args: &CensusArgs, data_dir: Option<&Path>, out: &Path) -> Result<CensusSummary> {
    let (train_set, _) = config.load_data(data_dir)?;
    let t = &config.train;
    let b = t.batch_size;
    let family = match args.family {
        FamilyKind::Epoch => BatchFamily::EpochPartition {
            seed: args.family_seed.unwrap_or(t.seed),
            epoch: args.epoch.unwrap_or(t.epochs.saturating_sub(1)),
        },
        FamilyKind::Random => BatchFamily::RandomBatches {
            count: args.count,
            seed: args.family_seed.unwrap_or(t.seed),
        },
        FamilyKind::Swap => {
            let others: Vec<usize> = (0..train_set.len()).filter(|&i| i != args.i1).take(2 * (b - 1)).collect();
            if others.len() < 2 * (b - 1) {
                anyhow::bail!("swap family needs at least 2B - 1 = {} samples", 2 * b - 1);
            }
            BatchFamily::SwapFamily {
                p0: others[..b - 1].to_vec(),
                p1: others[b - 1..].to_vec(),
                i1: args.i1,
            }
        }
    };
    let census: GradientCensus = gradient_census(net, &train_set, b, t.gspec, family, config.census_bins)?;
    let mut w = create(&out.join("census.csv"))?;
    census.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&out.join("census_histogram.csv"))?;
    census.histogram.write_csv(&mut w)?;
    w.flush()?;
    let mean = census.norms.iter().sum::<f64>() / census.norms.len().max(1) as f64;
    Ok(CensusSummary {
        family: census.family.clone(),
        batches: census.norms.len(),
        epsilon: census.epsilon,
        mean,
    })
}

#[derive(Debug, Serialize)]
pub struct CertificateSummary {
    pub mode: String,
    pub indices: Vec<usize>,
    pub rank_bound: usize,
    pub epsilon: f64,
    pub distance: f64,
    pub constant_proof: f64,
    pub constant_paper: f64,
    pub bound_proof: f64,
    pub bound_paper: f64,
    pub holds_proof: bool,
    pub holds_paper: bool,
}

impl From<&RankCertificate> for CertificateSummary {
    fn from(c: &RankCertificate) -> Self {
        CertificateSummary {
            mode: c.mode.clone(),
            indices: c.indices.clone(),
            rank_bound: c.rank_bound,
            epsilon: c.epsilon,
            distance: c.distance,
            constant_proof: c.constant_proof,
            constant_paper: c.constant_paper,
            bound_proof: c.constant_proof * c.epsilon,
            bound_paper: c.constant_paper * c.epsilon,
            holds_proof: c.holds_proof,
            holds_paper: c.holds_paper,
        }
    }
}

pub fn cmd_certify(
    config: &ExperimentConfig,
    net: &TwoLayerNet,
    mode: Option<CertificateMode>,
    data_dir: Option<&Path>,
    out: &Path,
) -> Result<CertificateSummary> {
    let (train_set, _) = config.load_data(data_dir)?;
    let t = &config.train;
    let mode = mode.unwrap_or_else(|| certificate_mode(t.gspec));
    let cert = build_certificate(net, &train_set, t.batch_size, t.gspec, &mode, None)?;
    write_json(&out.join("certificate.json"), &cert)?;
    Ok(CertificateSummary::from(&cert))
}

pub fn cmd_verify(path: &Path) -> Result<analysis::CertificateCheck> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cert: RankCertificate = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(analysis::verify_certificate(&cert)?)
}

#[derive(Debug, Serialize)]
pub struct SpectrumSummary {
    pub rows: usize,
    pub cols: usize,
    pub stable_rank: f64,
    pub spectral_norm: f64,
    pub frobenius: f64,
    pub numerical_rank: usize,
    /// Frobenius norm of a same-shape Gaussian matrix with variance 0.01.
    pub gaussian_baseline_frobenius: f64,
}

pub fn cmd_spectrum(net: &TwoLayerNet, baseline_seed: u64, out: &Path) -> Result<SpectrumSummary> {
    let v = net.v();
    let s = singular_values(v);
    let baseline = gaussian_matrix(v.rows(), v.cols(), 0.0, 0.01, baseline_seed)?;
    let base_s = singular_values(&baseline);
    let mut w = create(&out.join("spectrum.csv"))?;
    writeln!(w, "index,singular_value,gaussian_singular_value")?;
    for (i, (a, g)) in s.iter().zip(&base_s).enumerate() {
        writeln!(w, "{i},{a},{g}")?;
    }
    w.flush()?;
    Ok(SpectrumSummary {
        rows: v.rows(),
        cols: v.cols(),
        stable_rank: stable_rank(v).unwrap_or(f64::NAN),
        spectral_norm: s[0],
        frobenius: frobenius_norm(v),
        numerical_rank: numerical_rank(v, 1e-10),
        gaussian_baseline_frobenius: frobenius_norm(&baseline),
    })
}

#[derive(Clone, Debug, clap::Args)]
pub struct BoundsArgs {
    /// Hidden width m.
    #[arg(long)]
    pub m: usize,
    /// Input dimension n.
    #[arg(long)]
    pub n: usize,
    /// Rank k of the low-rank class.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Number of training samples N.
    #[arg(long)]
    pub samples: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Lipschitz constant L of the loss.
    #[arg(long, default_value_t = 1.0)]
    pub l: f64,
    /// Absolute constant C.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
}

pub fn cmd_bounds(a: &BoundsArgs, out: &Path) -> Result<BoundReport> {
    let report = analysis::bound_value(a.m, a.n, a.k, a.samples, a.delta, a.l, a.c)?;
    write_json(&out.join("bounds.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct GenSummary {
    pub samples: usize,
    pub dim: usize,
    pub rank: usize,
    pub csv: PathBuf,
    pub teacher: PathBuf,
}

/// Writes a synthetic-teacher table with columns `x1..xn,y` plus the teacher network.
pub fn cmd_gen_data(dim: usize, samples: usize, rank: usize, noise: f64, seed: u64, out: &Path) -> Result<GenSummary> {
    let data = synthetic_teacher(dim, samples, rank, noise, seed)?;
    let csv = out.join("teacher.csv");
    let mut w = create(&csv)?;
    let header: Vec<String> = (1..=dim).map(|j| format!("x{j}")).chain(["y".to_string()]).collect();
    writeln!(w, "{}", header.join(","))?;
    for i in 0..samples {
        let row: Vec<String> = data
            .dataset
            .input(i)
            .iter()
            .chain([data.dataset.target(i)].iter())
            .map(|v| v.to_string())
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    let teacher = out.join("teacher_checkpoint.txt");
    let mut w = create(&teacher)?;
    data.teacher.write_checkpoint(&mut w)?;
    w.flush()?;
    Ok(GenSummary {
        samples,
        dim,
        rank,
        csv,
        teacher,
    })
}
