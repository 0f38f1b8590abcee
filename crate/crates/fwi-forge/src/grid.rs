//! Core containers: velocity maps, shot gathers, acquisition geometry, and
//! the min-max normalization both the metrics and the training-data pipeline
//! are defined on.

use ndarray::{Array, Array2, Array3, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Velocity values in generated maps live in this range (m/s).
pub const VELOCITY_RANGE: (f64, f64) = (1500.0, 4500.0);

/// Amplitude range used when normalizing simulated shot gathers.
pub const SEISMIC_RANGE: (f64, f64) = (-20.0, 60.0);

/// A 2D velocity model. Row index is depth (z), column index is lateral
/// position (x); `values[[z, x]]` is in m/s and `dx` is the cell size in
/// meters (square cells).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityMap {
    pub values: Array2<f64>,
    pub dx: f64,
}

impl VelocityMap {
    /// Builds a map and checks that every velocity is finite and positive.
    pub fn new(values: Array2<f64>, dx: f64) -> Result<Self> {
        if !(dx.is_finite() && dx > 0.0) {
            return Err(Error::config(format!("dx must be positive, got {dx}")));
        }
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::config("velocity map must be non-empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "velocity map".into(),
            });
        }
        if values.iter().any(|&v| v <= 0.0) {
            return Err(Error::config("velocities must be positive"));
        }
        Ok(VelocityMap { values, dx })
    }

    /// Constant-velocity map, mostly useful for tests and initial guesses.
    pub fn constant(nz: usize, nx: usize, dx: f64, velocity: f64) -> Result<Self> {
        VelocityMap::new(Array2::from_elem((nz, nx), velocity), dx)
    }

    pub fn nz(&self) -> usize {
        self.values.nrows()
    }

    pub fn nx(&self) -> usize {
        self.values.ncols()
    }

    pub fn max_velocity(&self) -> f64 {
        self.values.iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn min_velocity(&self) -> f64 {
        self.values.iter().copied().fold(f64::MAX, f64::min)
    }
}

/// A simulated multi-shot record: `traces[[shot, time, receiver]]`, with
/// `dt` the sample interval in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct SeismicGather {
    pub traces: Array3<f64>,
    pub dt: f64,
}

impl SeismicGather {
    pub fn new(traces: Array3<f64>, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::config(format!("dt must be positive, got {dt}")));
        }
        if traces.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "seismic gather".into(),
            });
        }
        Ok(SeismicGather { traces, dt })
    }

    pub fn n_shots(&self) -> usize {
        self.traces.shape()[0]
    }

    pub fn nt(&self) -> usize {
        self.traces.shape()[1]
    }

    pub fn n_receivers(&self) -> usize {
        self.traces.shape()[2]
    }
}

/// Position on the interior grid, in cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPos {
    pub x: usize,
    pub z: usize,
}

impl GridPos {
    pub fn new(x: usize, z: usize) -> Self {
        GridPos { x, z }
    }
}

/// Survey layout plus the simulation clock and absorbing-border settings.
///
/// Positions are interior-grid cell indices; a position at cell `x` sits at
/// `x * dx` meters from the left edge of the map it is paired with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionGeometry {
    pub sources: Vec<GridPos>,
    pub receivers: Vec<GridPos>,
    /// Dominant source frequency in Hz.
    pub source_freq: f64,
    /// Time step in seconds.
    pub dt: f64,
    /// Number of simulated time steps.
    pub nt_sim: usize,
    /// Number of recorded samples per trace (`<= nt_sim`).
    pub nt_stored: usize,
    /// Absorbing-border width in cells on every side.
    pub nbc: usize,
    /// Sponge decay constant; see [`crate::sim::pad_with_sponge`].
    pub sponge_decay: f64,
    /// Global multiplier on the injected source amplitude. Recorded
    /// amplitudes are in arbitrary simulation units; this knob calibrates
    /// them to a target range.
    #[serde(default = "default_source_gain")]
    pub source_gain: f64,
}

fn default_source_gain() -> f64 {
    1.0
}

impl AcquisitionGeometry {
    /// The standard 70x70 survey the public OpenFWI Vel/Fault datasets use:
    /// five sources every 140 m at 10 m depth, one receiver per surface
    /// column at 10 m depth, 15 Hz source, 1 ms sampling, 120-cell sponge.
    pub fn openfwi() -> Self {
        AcquisitionGeometry {
            sources: [1, 15, 29, 43, 57]
                .iter()
                .map(|&x| GridPos::new(x, 1))
                .collect(),
            receivers: (0..70).map(|x| GridPos::new(x, 1)).collect(),
            source_freq: 15.0,
            dt: 1e-3,
            nt_sim: 1001,
            nt_stored: 1000,
            nbc: 120,
            sponge_decay: 3.0,
            source_gain: 1.0,
        }
    }

    /// Checks every invariant against the map the survey will run on.
    pub fn validate(&self, nz: usize, nx: usize) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::Geometry {
                reason: "no sources".into(),
            });
        }
        if self.receivers.is_empty() {
            return Err(Error::Geometry {
                reason: "no receivers".into(),
            });
        }
        for (kind, p) in self
            .sources
            .iter()
            .map(|p| ("source", p))
            .chain(self.receivers.iter().map(|p| ("receiver", p)))
        {
            if p.x >= nx || p.z >= nz {
                return Err(Error::Geometry {
                    reason: format!(
                        "{kind} at ({}, {}) outside interior grid {nx}x{nz}",
                        p.x, p.z
                    ),
                });
            }
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.nt_sim == 0 || self.nt_stored == 0 || self.nt_stored > self.nt_sim {
            return Err(Error::config(format!(
                "need 0 < nt_stored <= nt_sim, got nt_stored={}, nt_sim={}",
                self.nt_stored, self.nt_sim
            )));
        }
        if self.nbc < 2 {
            // The 4th-order stencil reads two cells past the interior.
            return Err(Error::config(format!("nbc must be >= 2, got {}", self.nbc)));
        }
        if !(self.source_freq.is_finite() && self.source_freq > 0.0) {
            return Err(Error::config(format!(
                "source_freq must be positive, got {}",
                self.source_freq
            )));
        }
        if !(self.sponge_decay.is_finite() && self.sponge_decay > 0.0) {
            return Err(Error::config(format!(
                "sponge_decay must be positive, got {}",
                self.sponge_decay
            )));
        }
        if !(self.source_gain.is_finite() && self.source_gain > 0.0) {
            return Err(Error::config(format!(
                "source_gain must be positive, got {}",
                self.source_gain
            )));
        }
        Ok(())
    }
}

/// Affine map of `field` from `[lo, hi]` onto `[-1, 1]`.
///
/// Values outside `[lo, hi]` are not clipped; they land outside `[-1, 1]`
/// proportionally, which keeps the map invertible.
pub fn minmax_normalize<D: Dimension>(
    field: &Array<f64, D>,
    lo: f64,
    hi: f64,
) -> Result<Array<f64, D>> {
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidRange { lo, hi });
    }
    let span = hi - lo;
    Ok(field.mapv(|v| 2.0 * (v - lo) / span - 1.0))
}

/// Inverse of [`minmax_normalize`].
pub fn minmax_denormalize<D: Dimension>(
    field: &Array<f64, D>,
    lo: f64,
    hi: f64,
) -> Result<Array<f64, D>> {
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidRange { lo, hi });
    }
    let span = hi - lo;
    Ok(field.mapv(|v| lo + 0.5 * (v + 1.0) * span))
}

/// Affine map of `field` from `[lo, hi]` onto `[0, 1]`; the complexity
/// metrics are defined on this scale.
pub fn unit_normalize<D: Dimension>(
    field: &Array<f64, D>,
    lo: f64,
    hi: f64,
) -> Result<Array<f64, D>> {
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidRange { lo, hi });
    }
    let span = hi - lo;
    Ok(field.mapv(|v| (v - lo) / span))
}
