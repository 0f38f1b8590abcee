//! `analyze`: complexity metrics per map, batch means, and an optional
//! two-directory comparison.

use std::path::{Path, PathBuf};

use clap::Args;
use ndarray::{Axis, Ix4};

use fwi_forge::complexity::{complexity_report, map_complexity, ComplexityOptions, MapComplexity};
use fwi_forge::dataset::{read_npy, Manifest};
use fwi_forge::VelocityMap;

use crate::config::existing_dir;
use crate::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// One dataset directory to score, or two to compare.
    #[arg(required = true, num_args = 1..=2)]
    dirs: Vec<PathBuf>,
}

/// Reads just the velocity files of a packed directory.
fn load_maps(root: &Path) -> CliResult<Vec<VelocityMap>> {
    let manifest = Manifest::load(root)?;
    let mut maps = Vec::new();
    for entry in &manifest.velocity_files {
        let arr = read_npy(&root.join(&entry.name))?;
        let shape = arr.shape().to_vec();
        if arr.ndim() != 4 || shape[1] != 1 {
            return Err(CliError::Runtime(anyhow::anyhow!(
                "{}: velocity batch has shape {shape:?}, expected (batch, 1, nz, nx)",
                entry.name
            )));
        }
        let a4 = arr.into_dimensionality::<Ix4>().expect("checked 4 axes");
        for b in 0..shape[0] {
            let values = a4.index_axis(Axis(0), b).index_axis(Axis(0), 0).to_owned();
            maps.push(VelocityMap::new(values, manifest.config.dx)?);
        }
    }
    if maps.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "{} lists no velocity files",
            root.display()
        )));
    }
    Ok(maps)
}

fn print_dir(root: &Path, maps: &[VelocityMap]) -> CliResult<fwi_forge::ComplexityReport> {
    let opts = ComplexityOptions::default();
    println!("# {}", root.display());
    println!("{}", MapComplexity::CSV_HEADER);
    for (i, map) in maps.iter().enumerate() {
        println!("{}", map_complexity(map, &opts)?.csv_row(i));
    }
    let report = complexity_report(maps)?;
    println!();
    print!("{}", report.kv_table());
    Ok(report)
}

pub fn run(args: AnalyzeArgs) -> CliResult {
    for dir in &args.dirs {
        existing_dir(dir)?;
    }
    let mut reports = Vec::new();
    for (i, dir) in args.dirs.iter().enumerate() {
        if i > 0 {
            println!();
        }
        let maps = load_maps(dir)?;
        reports.push(print_dir(dir, &maps)?);
    }

    if let [a, b] = reports.as_slice() {
        let side = |x: f64, y: f64| if x < y { '<' } else if x > y { '>' } else { '=' };
        println!();
        println!(
            "comparison (a = {}, b = {})",
            args.dirs[0].display(),
            args.dirs[1].display()
        );
        println!("si:      a {:.6} {} b {:.6}", a.si_mean, side(a.si_mean, b.si_mean), b.si_mean);
        println!(
            "gsi:     a {:.6} {} b {:.6}",
            a.gsi_mean,
            side(a.gsi_mean, b.gsi_mean),
            b.gsi_mean
        );
        println!(
            "entropy: a {:.6} {} b {:.6}",
            a.entropy_mean,
            side(a.entropy_mean, b.entropy_mean),
            b.entropy_mean
        );
    }
    Ok(())
}
