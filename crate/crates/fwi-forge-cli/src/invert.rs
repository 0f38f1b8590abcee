//! `invert`: multi-scale FWI over dataset samples, with metric reporting.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use serde::Serialize;

use fwi_forge::dataset::{load_pairs, write_npy, DatasetLayout, Manifest};
use fwi_forge::invert::{
    initial_homogeneous, initial_linear, initial_smoothed, multiscale_fwi, InversionConfig,
};
use fwi_forge::sim::RickerWavelet;
use fwi_forge::{MetricReport, VelocityMap};

use crate::config::{existing_dir, FileConfig};
use crate::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct InvertArgs {
    /// Dataset directory, as written by `generate`.
    data: PathBuf,

    /// Invert only this sample index (0-based). Default: every sample.
    #[arg(long)]
    sample: Option<usize>,

    /// Output directory for inverted maps, loss traces, and summary.json.
    #[arg(long)]
    out: PathBuf,

    /// How the starting model is built from each true map.
    #[arg(long, value_enum)]
    init: Option<InitKind>,

    /// Box-blur kernel width for `--init smoothed` (odd, at least 3).
    #[arg(long)]
    kernel: Option<usize>,

    /// Absorbing-border width override; default: the dataset's geometry.
    #[arg(long)]
    nbc: Option<usize>,

    /// Iteration cap per frequency stage.
    #[arg(long)]
    max_iters: Option<usize>,

    /// Comma-separated low-pass cutoffs in Hz, strictly increasing.
    #[arg(long, value_delimiter = ',')]
    cutoffs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum InitKind {
    /// Constant at the slowest surface velocity of the true map.
    Homogeneous,
    /// Linear ramp from the true surface velocity down to the true bottom.
    Linear,
    /// Box-blurred true map (see --kernel).
    Smoothed,
}

impl InitKind {
    fn parse(s: &str) -> CliResult<InitKind> {
        match s.to_ascii_lowercase().as_str() {
            "homogeneous" => Ok(InitKind::Homogeneous),
            "linear" => Ok(InitKind::Linear),
            "smoothed" => Ok(InitKind::Smoothed),
            other => Err(CliError::usage(format!(
                "unknown init '{other}' (expected homogeneous, linear, or smoothed)"
            ))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            InitKind::Homogeneous => "homogeneous",
            InitKind::Linear => "linear",
            InitKind::Smoothed => "smoothed",
        }
    }

    fn build(self, truth: &VelocityMap, kernel: usize) -> CliResult<VelocityMap> {
        match self {
            InitKind::Homogeneous => Ok(initial_homogeneous(truth)),
            InitKind::Linear => {
                let top = truth.values.row(0).iter().cloned().fold(f64::INFINITY, f64::min);
                let bottom = truth
                    .values
                    .row(truth.nz() - 1)
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max);
                // Version-B stacks can be slower at depth; the ramp builder
                // requires a non-decreasing profile.
                let bottom = bottom.max(top);
                Ok(initial_linear(top, bottom, truth.nz(), truth.nx(), truth.dx)?)
            }
            InitKind::Smoothed => Ok(initial_smoothed(truth, kernel)?),
        }
    }
}

/// Per-sample record in summary.json.
#[derive(Debug, Serialize)]
struct SampleReport {
    index: usize,
    /// Accepted iterations per frequency stage.
    iterations: Vec<usize>,
    wall_time_s: f64,
    initial: MetricReport,
    inverted: MetricReport,
}

#[derive(Debug, Serialize)]
struct Summary {
    family: String,
    n_samples: usize,
    init: String,
    kernel: usize,
    nbc: usize,
    inversion: InversionConfig,
    samples: Vec<SampleReport>,
    aggregate: Aggregate,
}

#[derive(Debug, Serialize)]
struct Aggregate {
    mae_initial: f64,
    mae_inverted: f64,
    rmse_initial: f64,
    rmse_inverted: f64,
    ssim_initial: f64,
    ssim_inverted: f64,
}

impl Aggregate {
    fn over(samples: &[SampleReport]) -> Aggregate {
        let n = samples.len() as f64;
        let mean = |f: &dyn Fn(&SampleReport) -> f64| samples.iter().map(f).sum::<f64>() / n;
        Aggregate {
            mae_initial: mean(&|s| s.initial.mae),
            mae_inverted: mean(&|s| s.inverted.mae),
            rmse_initial: mean(&|s| s.initial.rmse),
            rmse_inverted: mean(&|s| s.inverted.rmse),
            ssim_initial: mean(&|s| s.initial.ssim),
            ssim_inverted: mean(&|s| s.inverted.ssim),
        }
    }
}

pub fn run(args: InvertArgs, file: &FileConfig) -> CliResult {
    existing_dir(&args.data)?;
    let manifest = Manifest::load(&args.data)?;
    let mut layout = DatasetLayout::for_family(
        &args.data,
        manifest.config.family,
        manifest.config.n_layers,
    );
    layout.samples_per_file = manifest.samples_per_file;

    let mut geom = manifest.geometry.clone();
    if let Some(nbc) = args.nbc.or(file.invert.nbc) {
        geom.nbc = nbc;
    }
    geom.validate(manifest.config.nz, manifest.config.nx)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let wavelet = RickerWavelet::standard(geom.source_freq, geom.dt, geom.nt_sim)?;

    let init = match args.init {
        Some(k) => k,
        None => match &file.invert.init {
            Some(s) => InitKind::parse(s)?,
            None => InitKind::Smoothed,
        },
    };
    let kernel = args.kernel.or(file.invert.kernel).unwrap_or(9);

    let mut inversion = InversionConfig::default();
    if let Some(c) = args.cutoffs.or_else(|| file.invert.cutoffs.clone()) {
        inversion.cutoffs = c;
    }
    if let Some(n) = args.max_iters.or(file.invert.max_iters_per_stage) {
        inversion.max_iters_per_stage = n;
    }
    if let Some(s) = file.invert.stop_rel_loss_change {
        inversion.stop_rel_loss_change = s;
    }
    if let Some(s) = file.invert.initial_step {
        inversion.initial_step = s;
    }
    inversion
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;

    fs::create_dir_all(&args.out)
        .map_err(|e| anyhow::anyhow!("cannot create {}: {e}", args.out.display()))?;

    let mut reports = Vec::new();
    let mut n_seen = 0usize;
    for (index, pair) in load_pairs(&args.data, &layout)?.enumerate() {
        let (truth, obs) = pair?;
        n_seen += 1;
        if let Some(only) = args.sample {
            if index != only {
                continue;
            }
        }

        let start = init.build(&truth, kernel)?;
        let t0 = Instant::now();
        let (inverted, trace) = multiscale_fwi(&start, &obs, &geom, &wavelet, &inversion)?;
        let wall = t0.elapsed().as_secs_f64();

        let report = SampleReport {
            index,
            iterations: trace
                .stages
                .iter()
                .map(|s| s.losses.len().saturating_sub(1))
                .collect(),
            wall_time_s: wall,
            initial: MetricReport::for_velocity(&start.values, &truth.values)?,
            inverted: MetricReport::for_velocity(&inverted.values, &truth.values)?,
        };
        eprintln!(
            "sample {index}: ssim {:.4} -> {:.4}, mae {:.4} -> {:.4} ({wall:.1}s)",
            report.initial.ssim, report.inverted.ssim, report.initial.mae, report.inverted.mae
        );

        write_npy(&args.out.join(format!("inverted_{index}.npy")), &inverted.values)?;
        let csv_path = args.out.join(format!("trace_{index}.csv"));
        fs::write(&csv_path, trace.to_csv())
            .map_err(|e| anyhow::anyhow!("cannot write {}: {e}", csv_path.display()))?;
        reports.push(report);
    }

    if reports.is_empty() {
        return Err(match args.sample {
            Some(s) => CliError::usage(format!(
                "--sample {s} out of range: dataset has {n_seen} samples"
            )),
            None => CliError::Runtime(anyhow::anyhow!("dataset holds no samples")),
        });
    }

    let summary = Summary {
        family: manifest.family.clone(),
        n_samples: reports.len(),
        init: init.name().to_string(),
        kernel,
        nbc: geom.nbc,
        inversion,
        aggregate: Aggregate::over(&reports),
        samples: reports,
    };
    let path = args.out.join("summary.json");
    let mut text = serde_json::to_string_pretty(&summary)
        .map_err(|e| anyhow::anyhow!("summary serialization: {e}"))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))?;

    println!(
        "inverted {} samples: mean ssim {:.4} -> {:.4}, mean mae {:.4} -> {:.4}",
        summary.n_samples,
        summary.aggregate.ssim_initial,
        summary.aggregate.ssim_inverted,
        summary.aggregate.mae_initial,
        summary.aggregate.mae_inverted
    );
    Ok(())
}
