//! `generate`: synthesize maps, simulate their gathers, pack a directory.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;

use fwi_forge::sim::RickerWavelet;
use fwi_forge::synth::{synthesize_batch, GeneratorConfig};
use fwi_forge::{forward_model, pack_dataset, AcquisitionGeometry, DatasetLayout};

use crate::config::{parse_family, FileConfig};
use crate::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Family and version, e.g. flatvel-a or curvefault-b.
    #[arg(long)]
    family: Option<String>,

    /// Number of samples.
    #[arg(long)]
    count: Option<usize>,

    /// Master seed. The same seed writes a byte-identical directory.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long)]
    out: PathBuf,

    /// Absorbing-border width in cells.
    #[arg(long)]
    nbc: Option<usize>,

    /// Samples per .npy file.
    #[arg(long)]
    samples_per_file: Option<usize>,
}

pub fn run(args: GenerateArgs, file: &FileConfig) -> CliResult {
    let family_name = args
        .family
        .or_else(|| file.generate.family.clone())
        .ok_or_else(|| CliError::usage("--family is required (flag or config file)"))?;
    let (family, version) = parse_family(&family_name)?;
    let count = args.count.or(file.generate.count).unwrap_or(100);
    if count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    let seed = args.seed.or(file.generate.seed).unwrap_or(0);
    let samples_per_file = args
        .samples_per_file
        .or(file.generate.samples_per_file)
        .unwrap_or(500);
    if samples_per_file == 0 {
        return Err(CliError::usage("--samples-per-file must be at least 1"));
    }

    let config = GeneratorConfig::for_family(family, version, seed);
    let mut geom = AcquisitionGeometry::openfwi();
    if let Some(nbc) = args.nbc.or(file.generate.nbc) {
        geom.nbc = nbc;
    }
    geom.validate(config.nz, config.nx)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let wavelet = RickerWavelet::standard(geom.source_freq, geom.dt, geom.nt_sim)?;

    eprintln!(
        "generating {count} {}-{} samples (seed {seed})",
        family.name(),
        version.name()
    );
    let t0 = Instant::now();
    let maps = synthesize_batch(&config, count)?;
    eprintln!(
        "synthesized {count} maps in {:.2}s",
        t0.elapsed().as_secs_f64()
    );

    let t1 = Instant::now();
    let mut gathers = Vec::with_capacity(count);
    for (i, map) in maps.iter().enumerate() {
        gathers.push(forward_model(map, &geom, &wavelet)?);
        let done = i + 1;
        let rate = (done * geom.sources.len()) as f64 / t1.elapsed().as_secs_f64();
        eprintln!("simulated {done}/{count} ({rate:.2} shots/s)");
    }

    let mut layout = DatasetLayout::for_family(&args.out, family, config.n_layers);
    layout.samples_per_file = samples_per_file;
    let manifest = pack_dataset(&maps, &gathers, &layout, &config, &geom)?;
    println!(
        "wrote {} samples to {} ({} velocity files, {} seismic files)",
        manifest.n_samples,
        args.out.display(),
        manifest.velocity_files.len(),
        manifest.seismic_files.len()
    );
    Ok(())
}
