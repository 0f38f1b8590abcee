//! Procedural velocity-model synthesis.
//!
//! Every map starts as a stack of flat constant-velocity layers and is then
//! deformed by vertical folding and displaced along linear faults:
//!
//! * fold:  `out(x, y) = in(x, y + round(a * sin(2 pi k x / nx) / dx))`
//! * fault: for cells with `y >= f(x)`, sample the original layered map at
//!   `(x + s, y + round(a * sin(2 pi k x / nx) / dx) + s')`; keep the
//!   accumulated map elsewhere.
//!
//! Out-of-range lookups clamp to the nearest available cell, so deformations
//! never invent velocities: a generated map's value set is always a subset
//! of its layer stack's values.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::VelocityMap;

/// Which structural style a batch belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    FlatVel,
    CurveVel,
    FlatFault,
    CurveFault,
}

impl Family {
    pub fn is_curve(self) -> bool {
        matches!(self, Family::CurveVel | Family::CurveFault)
    }

    pub fn is_fault(self) -> bool {
        matches!(self, Family::FlatFault | Family::CurveFault)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::FlatVel => "FlatVel",
            Family::CurveVel => "CurveVel",
            Family::FlatFault => "FlatFault",
            Family::CurveFault => "CurveFault",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "flatvel" => Ok(Family::FlatVel),
            "curvevel" => Ok(Family::CurveVel),
            "flatfault" => Ok(Family::FlatFault),
            "curvefault" => Ok(Family::CurveFault),
            other => Err(Error::config(format!(
                "unknown family '{other}' (expected flatvel, curvevel, flatfault or curvefault)"
            ))),
        }
    }
}

/// How layer velocities are assigned.
///
/// `A`: the stack gets gently faster with depth (first layer drawn from the
/// low end, then positive increments, clipped at `vmax`). `B`: every layer
/// velocity is an independent uniform draw from `[vmin, vmax]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Version {
    A,
    B,
}

impl Version {
    pub fn name(self) -> &'static str {
        match self {
            Version::A => "A",
            Version::B => "B",
        }
    }
}

impl std::str::FromStr for Version {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Version::A),
            "b" => Ok(Version::B),
            other => Err(Error::config(format!(
                "unknown version '{other}' (expected A or B)"
            ))),
        }
    }
}

/// Version-A velocity assignment: first layer within this many m/s above
/// `vmin`, then increments drawn from `VERSION_A_INCREMENT`.
const VERSION_A_TOP_SPAN: f64 = 1000.0;
const VERSION_A_INCREMENT: (f64, f64) = (200.0, 700.0);

/// Fault lines: slope drawn uniformly from this range (cells of depth per
/// cell of offset), anchored at a point drawn from the central portion of
/// the grid.
const FAULT_SLOPE_RANGE: (f64, f64) = (-1.2, 1.2);
const FAULT_ANCHOR_MARGIN: f64 = 0.15;

/// Everything a batch of maps is generated from. Identical configs always
/// produce identical batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub family: Family,
    pub version: Version,
    /// Grid rows (depth cells).
    pub nz: usize,
    /// Grid columns (lateral cells).
    pub nx: usize,
    /// Cell size in meters.
    pub dx: f64,
    /// Number of flat layers in the initial stack (each at least 2 cells).
    pub n_layers: usize,
    /// Fold applications per map; 0 for flat families.
    pub n_folds: usize,
    /// Fault applications per map; 0 for vel families.
    pub n_faults: usize,
    /// Fold amplitude draw range, meters.
    pub amp_range: (f64, f64),
    /// Fold wavenumber draw range, cycles across the map width.
    pub wavenumber_range: (f64, f64),
    /// Fault shift draw range (both axes), cells, inclusive.
    pub shift_range: (i64, i64),
    /// Velocity bounds, m/s.
    pub vmin: f64,
    pub vmax: f64,
    /// Master seed; sample `i` of a batch uses RNG stream `i` of this seed.
    pub seed: u64,
}

impl GeneratorConfig {
    /// Preset for one of the four families on the standard 70x70, 10 m grid
    /// with velocities in `[1500, 4500]` m/s.
    pub fn for_family(family: Family, version: Version, seed: u64) -> Self {
        GeneratorConfig {
            family,
            version,
            nz: 70,
            nx: 70,
            dx: 10.0,
            n_layers: 5,
            n_folds: if family.is_curve() { 2 } else { 0 },
            n_faults: if family.is_fault() { 2 } else { 0 },
            amp_range: (50.0, 150.0),
            wavenumber_range: (0.5, 2.0),
            shift_range: (-10, 10),
            vmin: 1500.0,
            vmax: 4500.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nz < 4 || self.nx < 4 {
            return Err(Error::config(format!(
                "grid too small: {}x{} (need at least 4x4)",
                self.nz, self.nx
            )));
        }
        if !(self.dx.is_finite() && self.dx > 0.0) {
            return Err(Error::config(format!("dx must be positive, got {}", self.dx)));
        }
        if self.n_layers < 2 {
            return Err(Error::config(format!(
                "n_layers must be at least 2, got {}",
                self.n_layers
            )));
        }
        if 2 * self.n_layers > self.nz {
            return Err(Error::config(format!(
                "n_layers={} needs {} rows of 2-cell layers but nz={}",
                self.n_layers,
                2 * self.n_layers,
                self.nz
            )));
        }
        if !self.family.is_curve() && self.n_folds != 0 {
            return Err(Error::config(format!(
                "{} is a flat family; n_folds must be 0, got {}",
                self.family.name(),
                self.n_folds
            )));
        }
        if !self.family.is_fault() && self.n_faults != 0 {
            return Err(Error::config(format!(
                "{} has no faults; n_faults must be 0, got {}",
                self.family.name(),
                self.n_faults
            )));
        }
        let (alo, ahi) = self.amp_range;
        if !(alo.is_finite() && ahi.is_finite()) || alo > ahi || alo < 0.0 {
            return Err(Error::config(format!(
                "amp_range must satisfy 0 <= lo <= hi, got ({alo}, {ahi})"
            )));
        }
        if ahi > self.nz as f64 * self.dx {
            return Err(Error::config(format!(
                "fold amplitude {ahi} m exceeds map depth {} m",
                self.nz as f64 * self.dx
            )));
        }
        let (klo, khi) = self.wavenumber_range;
        if !(klo.is_finite() && khi.is_finite()) || klo > khi || klo < 0.0 {
            return Err(Error::config(format!(
                "wavenumber_range must satisfy 0 <= lo <= hi, got ({klo}, {khi})"
            )));
        }
        if self.shift_range.0 > self.shift_range.1 {
            return Err(Error::config(format!(
                "shift_range lo > hi: ({}, {})",
                self.shift_range.0, self.shift_range.1
            )));
        }
        if !(self.vmin.is_finite() && self.vmax.is_finite()) || self.vmin <= 0.0 || self.vmin >= self.vmax
        {
            return Err(Error::config(format!(
                "need 0 < vmin < vmax, got ({}, {})",
                self.vmin, self.vmax
            )));
        }
        Ok(())
    }
}

/// A linear fault trace `z = slope * x + intercept`, in cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultLine {
    pub slope: f64,
    pub intercept: f64,
}

impl FaultLine {
    pub fn new(slope: f64, intercept: f64) -> Self {
        FaultLine { slope, intercept }
    }

    pub fn depth_at(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

fn clamp_cell(v: i64, n: usize) -> usize {
    v.clamp(0, n as i64 - 1) as usize
}

/// Column-wise vertical shift in cells for a fold of amplitude `a` (meters)
/// and wavenumber `k` (cycles per map width).
fn fold_shift(x: usize, nx: usize, amplitude_m: f64, wavenumber: f64, dx: f64) -> i64 {
    let phase = 2.0 * std::f64::consts::PI * wavenumber * x as f64 / nx as f64;
    (amplitude_m * phase.sin() / dx).round() as i64
}

/// Draws the flat layer stack for `config` using its seed directly (batch
/// generation hands each sample its own stream instead).
pub fn gen_flat_layers(config: &GeneratorConfig) -> Result<VelocityMap> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    gen_flat_layers_with(config, &mut rng)
}

fn gen_flat_layers_with(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<VelocityMap> {
    let n = config.n_layers;
    let nz = config.nz;

    // Thickness: every layer gets its 2-cell minimum, the spare rows are
    // split proportionally to uniform weights.
    let spare = nz - 2 * n;
    let weights: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let total: f64 = weights.iter().sum();
    let mut thickness: Vec<usize> = if total > 0.0 {
        weights
            .iter()
            .map(|w| 2 + (spare as f64 * w / total).floor() as usize)
            .collect()
    } else {
        vec![2; n]
    };
    let mut assigned: usize = thickness.iter().sum();
    let mut i = 0;
    while assigned < nz {
        thickness[i % n] += 1;
        assigned += 1;
        i += 1;
    }

    let velocities: Vec<f64> = match config.version {
        Version::A => {
            let top_hi = (config.vmin + VERSION_A_TOP_SPAN).min(config.vmax);
            let mut v = rng.random_range(config.vmin..=top_hi);
            let mut out = Vec::with_capacity(n);
            out.push(v);
            for _ in 1..n {
                let inc = rng.random_range(VERSION_A_INCREMENT.0..=VERSION_A_INCREMENT.1);
                v = (v + inc).min(config.vmax);
                out.push(v);
            }
            out
        }
        Version::B => (0..n)
            .map(|_| rng.random_range(config.vmin..=config.vmax))
            .collect(),
    };

    let mut values = Array2::zeros((nz, config.nx));
    let mut row = 0;
    for (t, v) in thickness.iter().zip(velocities.iter()) {
        for _ in 0..*t {
            values.row_mut(row).fill(*v);
            row += 1;
        }
    }
    debug_assert_eq!(row, nz);
    VelocityMap::new(values, config.dx)
}

/// Vertical sinusoidal fold: every column is shifted by
/// `round(a * sin(2 pi k x / nx) / dx)` cells, clamping reads to the map.
pub fn apply_fold(map: &VelocityMap, amplitude_m: f64, wavenumber: f64) -> Result<VelocityMap> {
    if !amplitude_m.is_finite() || !wavenumber.is_finite() || wavenumber < 0.0 {
        return Err(Error::config(format!(
            "fold parameters must be finite with k >= 0, got a={amplitude_m}, k={wavenumber}"
        )));
    }
    let (nz, nx) = map.values.dim();
    if amplitude_m.abs() > nz as f64 * map.dx {
        return Err(Error::config(format!(
            "fold amplitude {amplitude_m} m exceeds map depth {} m",
            nz as f64 * map.dx
        )));
    }
    let mut out = Array2::zeros((nz, nx));
    for x in 0..nx {
        let shift = fold_shift(x, nx, amplitude_m, wavenumber, map.dx);
        for y in 0..nz {
            let src = clamp_cell(y as i64 + shift, nz);
            out[[y, x]] = map.values[[src, x]];
        }
    }
    VelocityMap::new(out, map.dx)
}

/// Fault displacement: cells on or below the fault line (`y >= f(x)`) are
/// resampled from `base` (the original layer stack) at
/// `(x + shift_x, y + fold + shift_z)`, where `fold` is the same sinusoidal
/// shift as [`apply_fold`]; cells above the line keep `map`.
pub fn apply_fault(
    map: &VelocityMap,
    base: &VelocityMap,
    fault: &FaultLine,
    shift_x: i64,
    shift_z: i64,
    amplitude_m: f64,
    wavenumber: f64,
) -> Result<VelocityMap> {
    if map.values.dim() != base.values.dim() {
        return Err(Error::ShapeMismatch {
            context: "apply_fault",
            expected: format!("{:?}", map.values.shape()),
            actual: format!("{:?}", base.values.shape()),
        });
    }
    if !fault.slope.is_finite() || !fault.intercept.is_finite() {
        return Err(Error::config("fault line must be finite"));
    }
    if !amplitude_m.is_finite() || !wavenumber.is_finite() || wavenumber < 0.0 {
        return Err(Error::config(format!(
            "fault parameters must be finite with k >= 0, got a={amplitude_m}, k={wavenumber}"
        )));
    }
    let (nz, nx) = map.values.dim();
    let mut out = map.values.clone();
    for x in 0..nx {
        let fold = fold_shift(x, nx, amplitude_m, wavenumber, map.dx);
        let sx = clamp_cell(x as i64 + shift_x, nx);
        let boundary = fault.depth_at(x as f64);
        for y in 0..nz {
            if y as f64 >= boundary {
                let sz = clamp_cell(y as i64 + fold + shift_z, nz);
                out[[y, x]] = base.values[[sz, sx]];
            }
        }
    }
    VelocityMap::new(out, map.dx)
}

/// Generates `count` maps. Sample `i` is produced on RNG stream `i` of the
/// config seed, so batches are reproducible and insensitive to thread count
/// or generation order.
pub fn synthesize_batch(config: &GeneratorConfig, count: usize) -> Result<Vec<VelocityMap>> {
    config.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| synthesize_sample(config, i as u64))
        .collect()
}

/// Generates sample `index` of the batch `config` describes.
pub fn synthesize_sample(config: &GeneratorConfig, index: u64) -> Result<VelocityMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index);

    let c0 = gen_flat_layers_with(config, &mut rng)?;
    let mut map = c0.clone();

    for _ in 0..config.n_folds {
        let a = rng.random_range(config.amp_range.0..=config.amp_range.1);
        let k = rng.random_range(config.wavenumber_range.0..=config.wavenumber_range.1);
        map = apply_fold(&map, a, k)?;
    }

    for _ in 0..config.n_faults {
        let slope = rng.random_range(FAULT_SLOPE_RANGE.0..=FAULT_SLOPE_RANGE.1);
        let x0 = rng.random_range(
            FAULT_ANCHOR_MARGIN * config.nx as f64..=(1.0 - FAULT_ANCHOR_MARGIN) * config.nx as f64,
        );
        let z0 = rng.random_range(
            FAULT_ANCHOR_MARGIN * config.nz as f64..=(1.0 - FAULT_ANCHOR_MARGIN) * config.nz as f64,
        );
        let fault = FaultLine::new(slope, z0 - slope * x0);
        let sx = rng.random_range(config.shift_range.0..=config.shift_range.1);
        let sz = rng.random_range(config.shift_range.0..=config.shift_range.1);
        // The displaced block carries its own sinusoid only in curve
        // families; flat faults shift the stack rigidly.
        let a = if config.family.is_curve() {
            rng.random_range(config.amp_range.0..=config.amp_range.1)
        } else {
            0.0
        };
        let k = rng.random_range(config.wavenumber_range.0..=config.wavenumber_range.1);
        map = apply_fault(&map, &c0, &fault, sx, sz, a, k)?;
    }

    Ok(map)
}
