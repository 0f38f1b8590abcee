//! Config file loading and the flags > file > defaults resolution rule.

use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use fwi_forge::synth::{Family, Version};

use crate::{CliError, CliResult};

/// Optional TOML file with one table per subcommand. Every field mirrors a
/// flag; explicit flags always win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub generate: GenerateFile,
    #[serde(default)]
    pub invert: InvertFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateFile {
    pub family: Option<String>,
    pub count: Option<usize>,
    pub seed: Option<u64>,
    pub nbc: Option<usize>,
    pub samples_per_file: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvertFile {
    pub init: Option<String>,
    pub kernel: Option<usize>,
    pub nbc: Option<usize>,
    pub cutoffs: Option<Vec<f64>>,
    pub max_iters_per_stage: Option<usize>,
    pub stop_rel_loss_change: Option<f64>,
    pub initial_step: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("bad config {}: {e}", path.display())))
    }
}

/// Parses a combined family-version name such as `flatvel-a` or
/// `CurveFault-B`.
pub fn parse_family(s: &str) -> CliResult<(Family, Version)> {
    let lower = s.to_ascii_lowercase();
    let err = || {
        CliError::usage(format!(
            "unknown family '{s}' (expected one of flatvel-a, flatvel-b, curvevel-a, \
             curvevel-b, flatfault-a, flatfault-b, curvefault-a, curvefault-b)"
        ))
    };
    let (fam, ver) = lower.rsplit_once('-').ok_or_else(err)?;
    let family = Family::from_str(fam).map_err(|_| err())?;
    let version = Version::from_str(ver).map_err(|_| err())?;
    Ok((family, version))
}

/// Builds the global worker pool: `--jobs` wins, then FWI_FORGE_JOBS, then
/// the rayon default (all cores).
pub fn init_thread_pool(jobs: Option<usize>) -> CliResult {
    let jobs = match jobs {
        Some(n) => Some(n),
        None => match std::env::var("FWI_FORGE_JOBS") {
            Ok(v) => Some(v.parse().map_err(|_| {
                CliError::usage(format!("FWI_FORGE_JOBS must be a positive integer, got '{v}'"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("thread pool: {e}")))?;
    }
    Ok(())
}

/// A dataset directory argument: must exist before anything else runs.
pub fn existing_dir(path: &Path) -> CliResult<&Path> {
    if !path.is_dir() {
        return Err(CliError::usage(format!(
            "dataset path {} does not exist or is not a directory",
            path.display()
        )));
    }
    Ok(path)
}
