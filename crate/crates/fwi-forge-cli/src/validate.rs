//! `validate`: checksum, shape, and value-range checks for a packed
//! directory. Checksum or shape or velocity-range violations fail the run;
//! seismic amplitudes are only reported.

use std::path::PathBuf;

use clap::Args;

use fwi_forge::dataset::{read_npy, Manifest};

use crate::config::existing_dir;
use crate::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Dataset directory to check.
    dir: PathBuf,
}

pub fn run(args: ValidateArgs) -> CliResult {
    existing_dir(&args.dir)?;
    let manifest = Manifest::load(&args.dir)?;
    manifest.verify(&args.dir)?;
    let n_files = manifest.velocity_files.len() + manifest.seismic_files.len();
    println!("checksums: ok ({n_files} files)");

    let cfg = &manifest.config;
    let geom = &manifest.geometry;
    let mut violations: Vec<String> = Vec::new();
    let mut vel_samples = 0usize;

    for entry in &manifest.velocity_files {
        let arr = read_npy(&args.dir.join(&entry.name))?;
        let shape = arr.shape().to_vec();
        let want = [entry.samples, 1, cfg.nz, cfg.nx];
        if shape != want {
            violations.push(format!(
                "{}: velocity shape {shape:?}, expected {want:?}",
                entry.name
            ));
            continue;
        }
        vel_samples += shape[0];
        let per_sample = shape[1] * shape[2] * shape[3];
        for (i, v) in arr.iter().enumerate() {
            if !(cfg.vmin..=cfg.vmax).contains(v) {
                violations.push(format!(
                    "{}: sample {} velocity {v} outside [{}, {}]",
                    entry.name,
                    i / per_sample,
                    cfg.vmin,
                    cfg.vmax
                ));
            }
        }
    }

    let mut seis_lo = f64::INFINITY;
    let mut seis_hi = f64::NEG_INFINITY;
    let mut seis_samples = 0usize;
    for entry in &manifest.seismic_files {
        let arr = read_npy(&args.dir.join(&entry.name))?;
        let shape = arr.shape().to_vec();
        let want = [
            entry.samples,
            geom.sources.len(),
            geom.nt_stored,
            geom.receivers.len(),
        ];
        if shape != want {
            violations.push(format!(
                "{}: seismic shape {shape:?}, expected {want:?}",
                entry.name
            ));
            continue;
        }
        seis_samples += shape[0];
        for v in arr.iter() {
            seis_lo = seis_lo.min(*v);
            seis_hi = seis_hi.max(*v);
        }
    }

    if vel_samples != manifest.n_samples && violations.is_empty() {
        violations.push(format!(
            "manifest claims {} samples but files hold {vel_samples}",
            manifest.n_samples
        ));
    }
    if seis_samples != vel_samples && violations.is_empty() {
        violations.push(format!(
            "{vel_samples} velocity samples but {seis_samples} seismic samples"
        ));
    }

    if !violations.is_empty() {
        for v in &violations {
            eprintln!("violation: {v}");
        }
        return Err(CliError::Runtime(anyhow::anyhow!(
            "{} violation(s) in {}",
            violations.len(),
            args.dir.display()
        )));
    }

    println!(
        "shapes: ok ({} samples, velocity ({}, 1, {}, {}), seismic ({}, {}, {}, {}))",
        manifest.n_samples,
        manifest.n_samples,
        cfg.nz,
        cfg.nx,
        manifest.n_samples,
        geom.sources.len(),
        geom.nt_stored,
        geom.receivers.len()
    );
    println!("velocity range: ok (within [{}, {}] m/s)", cfg.vmin, cfg.vmax);
    if seis_lo.is_finite() {
        println!("seismic amplitudes: [{seis_lo:.3}, {seis_hi:.3}] (informational)");
    }
    println!("{}: valid", args.dir.display());
    Ok(())
}
