//! Acoustic wave propagation on a 2D grid: explicit time stepping with a
//! 2nd-order-in-time, 4th-order-in-space stencil, an exponential sponge
//! absorbing boundary, a Ricker point source, and receiver recording.
//!
//! The damped update is applied in the factored form
//!
//! ```text
//! p_next = damp * (2*(damp*p) + c^2 dt^2 * L4(damp*p)) - damp^2 * p_prev + source
//! ```
//!
//! so a single symmetric damping profile multiplies both time slices. This
//! makes the one-step operator symmetric up to a velocity similarity
//! transform, which buys two properties the rest of the toolkit leans on:
//! source/receiver reciprocity holds to machine precision for undamped
//! cells, and the adjoint pass used for inversion gradients is the exact
//! transpose of this forward pass rather than a continuous-equation
//! approximation.

use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{AcquisitionGeometry, SeismicGather, VelocityMap};

/// Courant limit enforced before any propagation. The von Neumann bound of
/// the 2D 2-4 stencil is sqrt(3/8) ~ 0.6124; this sits just inside it.
pub const COURANT_BOUND: f64 = 0.606;

// Per-axis 4th-order second-derivative weights at offsets 0, +-1, +-2.
const W0: f64 = -5.0 / 2.0;
const W1: f64 = 4.0 / 3.0;
const W2: f64 = -1.0 / 12.0;

/// How often the field is scanned for NaN/Inf during stepping.
const FINITE_CHECK_STRIDE: usize = 128;

/// A Ricker (Mexican-hat) source signature sampled on the simulation clock.
#[derive(Debug, Clone, PartialEq)]
pub struct RickerWavelet {
    pub freq: f64,
    pub dt: f64,
    pub delay: f64,
    pub samples: Vec<f64>,
}

/// Samples `(1 - 2 pi^2 f^2 tau^2) * exp(-pi^2 f^2 tau^2)` with
/// `tau = n*dt - delay`; the peak amplitude 1 lands at `t = delay`.
pub fn ricker(freq: f64, dt: f64, nt: usize, delay: f64) -> Result<RickerWavelet> {
    if !(freq.is_finite() && freq > 0.0) {
        return Err(Error::config(format!("freq must be positive, got {freq}")));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::config(format!("dt must be positive, got {dt}")));
    }
    if nt < 2 {
        return Err(Error::config(format!("need at least 2 samples, got {nt}")));
    }
    if !delay.is_finite() {
        return Err(Error::config("delay must be finite"));
    }
    let samples = (0..nt)
        .map(|n| {
            let tau = n as f64 * dt - delay;
            let a = (std::f64::consts::PI * freq * tau).powi(2);
            (1.0 - 2.0 * a) * (-a).exp()
        })
        .collect();
    Ok(RickerWavelet {
        freq,
        dt,
        delay,
        samples,
    })
}

impl RickerWavelet {
    /// The usual choice: onset near t = 0 via a one-period delay.
    pub fn standard(freq: f64, dt: f64, nt: usize) -> Result<Self> {
        ricker(freq, dt, nt, 1.0 / freq)
    }
}

pub fn courant_number(c_max: f64, dt: f64, dx: f64) -> f64 {
    c_max * dt / dx
}

/// Returns the Courant number `c_max*dt/dx`, or an error when it exceeds
/// [`COURANT_BOUND`] and the explicit scheme would blow up.
pub fn check_stability(map: &VelocityMap, geom: &AcquisitionGeometry) -> Result<f64> {
    let c_max = map.max_velocity();
    let courant = courant_number(c_max, geom.dt, map.dx);
    if courant > COURANT_BOUND {
        return Err(Error::Unstable {
            c_max,
            dt: geom.dt,
            dx: map.dx,
            courant,
            bound: COURANT_BOUND,
        });
    }
    Ok(courant)
}

/// A velocity map extended by `nbc` sponge cells on every side.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedModel {
    /// Interior (original map) dimensions.
    pub nz: usize,
    pub nx: usize,
    pub nbc: usize,
    pub dx: f64,
    /// Edge-replicated velocity, `(nz+2nbc) x (nx+2nbc)`.
    pub padded: Array2<f64>,
    /// Per-cell attenuation in (0, 1]; exactly 1 over the interior.
    pub damping: Array2<f64>,
}

impl PaddedModel {
    pub fn nzp(&self) -> usize {
        self.nz + 2 * self.nbc
    }

    pub fn nxp(&self) -> usize {
        self.nx + 2 * self.nbc
    }
}

/// Extends `map` with an `nbc`-cell absorbing border: velocity replicates
/// the nearest interior cell, and cells `d < nbc` steps from the outer edge
/// are damped by `exp(-(decay*(nbc-d)/nbc)^2)`.
pub fn pad_with_sponge(map: &VelocityMap, nbc: usize, decay: f64) -> Result<PaddedModel> {
    if nbc < 2 {
        // The 4th-order stencil needs a two-cell halo around the interior.
        return Err(Error::Geometry {
            reason: format!("nbc must be at least 2, got {nbc}"),
        });
    }
    if !(decay.is_finite() && decay > 0.0) {
        return Err(Error::config(format!(
            "sponge decay must be positive, got {decay}"
        )));
    }
    let (nz, nx) = (map.nz(), map.nx());
    let (nzp, nxp) = (nz + 2 * nbc, nx + 2 * nbc);
    let padded = Array2::from_shape_fn((nzp, nxp), |(iz, ix)| {
        let z = iz.saturating_sub(nbc).min(nz - 1);
        let x = ix.saturating_sub(nbc).min(nx - 1);
        map.values[[z, x]]
    });
    let damping = Array2::from_shape_fn((nzp, nxp), |(iz, ix)| {
        let d = iz.min(nzp - 1 - iz).min(ix).min(nxp - 1 - ix);
        if d < nbc {
            let w = decay * (nbc - d) as f64 / nbc as f64;
            (-w * w).exp()
        } else {
            1.0
        }
    });
    Ok(PaddedModel {
        nz,
        nx,
        nbc,
        dx: map.dx,
        padded,
        damping,
    })
}

/// Interior pressure history of one shot: `snapshots[m]` is the field at
/// time step m, for m = 0..=nt_sim, restricted to the unpadded grid.
#[derive(Debug, Clone)]
pub struct Wavefield {
    pub nz: usize,
    pub nx: usize,
    pub snapshots: Vec<Array2<f64>>,
}

/// Precomputed flat-array coefficients for one padded model and time step.
struct Kernel {
    nzp: usize,
    nxp: usize,
    nbc: usize,
    damp: Vec<f64>,
    damp2: Vec<f64>,
    /// c^2 dt^2 / dx^2, the Laplacian scale.
    c2dt2dx2: Vec<f64>,
    /// c^2 dt^2, the source-injection scale.
    cdt2: Vec<f64>,
    /// Padded velocity, for the imaging condition's 2/c factor.
    vel: Vec<f64>,
}

impl Kernel {
    fn new(model: &PaddedModel, dt: f64) -> Kernel {
        let n = model.nzp() * model.nxp();
        let mut damp = Vec::with_capacity(n);
        let mut damp2 = Vec::with_capacity(n);
        let mut c2dt2dx2 = Vec::with_capacity(n);
        let mut cdt2 = Vec::with_capacity(n);
        let mut vel = Vec::with_capacity(n);
        let scale = dt * dt / (model.dx * model.dx);
        for (c, d) in model.padded.iter().zip(model.damping.iter()) {
            damp.push(*d);
            damp2.push(d * d);
            c2dt2dx2.push(c * c * scale);
            cdt2.push(c * c * dt * dt);
            vel.push(*c);
        }
        Kernel {
            nzp: model.nzp(),
            nxp: model.nxp(),
            nbc: model.nbc,
            damp,
            damp2,
            c2dt2dx2,
            cdt2,
            vel,
        }
    }

    fn pad_idx(&self, x: usize, z: usize) -> usize {
        (z + self.nbc) * self.nxp + (x + self.nbc)
    }

    /// Forward step body: `next = damp*(2 pd + c2dt2dx2 * L4 pd) - damp2*prev`
    /// over the interior of the padded grid; the outer two rings stay 0.
    fn forward_sweep(&self, pd: &[f64], prev: &[f64], next: &mut [f64]) {
        let nxp = self.nxp;
        for iz in 2..self.nzp - 2 {
            let row = iz * nxp;
            for i in row + 2..row + nxp - 2 {
                let lap = 2.0 * W0 * pd[i]
                    + W1 * (pd[i - 1] + pd[i + 1] + pd[i - nxp] + pd[i + nxp])
                    + W2 * (pd[i - 2] + pd[i + 2] + pd[i - 2 * nxp] + pd[i + 2 * nxp]);
                next[i] = self.damp[i] * (2.0 * pd[i] + self.c2dt2dx2[i] * lap)
                    - self.damp2[i] * prev[i];
            }
        }
    }

    /// Transpose of [`forward_sweep`]: the velocity factor moves inside the
    /// Laplacian, `next = damp*(2 pd + L4(c2dt2dx2 * pd)) - damp2*prev`
    /// with `u = c2dt2dx2 .* pd` precomputed by the caller.
    fn adjoint_sweep(&self, pd: &[f64], u: &[f64], prev: &[f64], next: &mut [f64]) {
        let nxp = self.nxp;
        for iz in 2..self.nzp - 2 {
            let row = iz * nxp;
            for i in row + 2..row + nxp - 2 {
                let lap = 2.0 * W0 * u[i]
                    + W1 * (u[i - 1] + u[i + 1] + u[i - nxp] + u[i + nxp])
                    + W2 * (u[i - 2] + u[i + 2] + u[i - 2 * nxp] + u[i + 2 * nxp]);
                next[i] = self.damp[i] * (2.0 * pd[i] + lap) - self.damp2[i] * prev[i];
            }
        }
    }

    fn ensure_finite(&self, field: &[f64], step: usize) -> Result<()> {
        if field.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: format!("wavefield at step {step}"),
            })
        }
    }
}

fn validate_shot(
    model: &PaddedModel,
    geom: &AcquisitionGeometry,
    wavelet: &RickerWavelet,
    shot_index: usize,
) -> Result<()> {
    geom.validate(model.nz, model.nx)?;
    if geom.nbc != model.nbc {
        return Err(Error::Geometry {
            reason: format!(
                "geometry nbc {} does not match padded model nbc {}",
                geom.nbc, model.nbc
            ),
        });
    }
    if shot_index >= geom.sources.len() {
        return Err(Error::Geometry {
            reason: format!(
                "shot index {shot_index} out of range for {} sources",
                geom.sources.len()
            ),
        });
    }
    if wavelet.samples.len() < geom.nt_sim {
        return Err(Error::config(format!(
            "wavelet has {} samples, simulation needs {}",
            wavelet.samples.len(),
            geom.nt_sim
        )));
    }
    if (wavelet.dt - geom.dt).abs() > 1e-12 * geom.dt.max(1.0) {
        return Err(Error::config(format!(
            "wavelet dt {} does not match geometry dt {}",
            wavelet.dt, geom.dt
        )));
    }
    let c_max = model
        .padded
        .iter()
        .fold(0.0f64, |acc, v| acc.max(*v));
    let courant = courant_number(c_max, geom.dt, model.dx);
    if courant > COURANT_BOUND {
        return Err(Error::Unstable {
            c_max,
            dt: geom.dt,
            dx: model.dx,
            courant,
            bound: COURANT_BOUND,
        });
    }
    Ok(())
}

fn extract_interior(kernel: &Kernel, field: &[f64], nz: usize, nx: usize) -> Array2<f64> {
    Array2::from_shape_fn((nz, nx), |(iz, ix)| field[kernel.pad_idx(ix, iz)])
}

fn shot_core(
    model: &PaddedModel,
    geom: &AcquisitionGeometry,
    wavelet: &RickerWavelet,
    shot_index: usize,
    want_field: bool,
) -> Result<(Array2<f64>, Option<Wavefield>)> {
    validate_shot(model, geom, wavelet, shot_index)?;
    let kernel = Kernel::new(model, geom.dt);
    let n_cells = kernel.nzp * kernel.nxp;
    let src = geom.sources[shot_index];
    let src_idx = kernel.pad_idx(src.x, src.z);
    let rcv_idx: Vec<usize> = geom
        .receivers
        .iter()
        .map(|p| kernel.pad_idx(p.x, p.z))
        .collect();

    let mut prev = vec![0.0; n_cells];
    let mut cur = vec![0.0; n_cells];
    let mut next = vec![0.0; n_cells];
    let mut pd = vec![0.0; n_cells];
    let mut traces = Array2::zeros((geom.nt_stored, rcv_idx.len()));
    let mut snapshots = if want_field {
        let mut s = Vec::with_capacity(geom.nt_sim + 1);
        s.push(Array2::zeros((model.nz, model.nx))); // field at step 0
        s
    } else {
        Vec::new()
    };

    for n in 0..geom.nt_sim {
        for i in 0..n_cells {
            pd[i] = kernel.damp[i] * cur[i];
        }
        kernel.forward_sweep(&pd, &prev, &mut next);
        next[src_idx] += kernel.damp[src_idx]
            * kernel.cdt2[src_idx]
            * geom.source_gain
            * wavelet.samples[n];
        if n < geom.nt_stored {
            for (j, &ri) in rcv_idx.iter().enumerate() {
                traces[[n, j]] = next[ri];
            }
        }
        if want_field {
            snapshots.push(extract_interior(&kernel, &next, model.nz, model.nx));
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
        if n % FINITE_CHECK_STRIDE == FINITE_CHECK_STRIDE - 1 || n + 1 == geom.nt_sim {
            kernel.ensure_finite(&cur, n + 1)?;
        }
    }

    let field = want_field.then(|| Wavefield {
        nz: model.nz,
        nx: model.nx,
        snapshots,
    });
    Ok((traces, field))
}

/// Runs one shot and returns its `(nt_stored, nr)` trace block. Sample k of
/// a trace is the pressure after update k+1, i.e. time `(k+1)*dt`.
pub fn propagate_shot(
    model: &PaddedModel,
    geom: &AcquisitionGeometry,
    wavelet: &RickerWavelet,
    shot_index: usize,
) -> Result<Array2<f64>> {
    shot_core(model, geom, wavelet, shot_index, false).map(|(t, _)| t)
}

/// Like [`propagate_shot`] but also keeps the interior pressure history
/// needed to form inversion gradients.
pub fn propagate_shot_with_field(
    model: &PaddedModel,
    geom: &AcquisitionGeometry,
    wavelet: &RickerWavelet,
    shot_index: usize,
) -> Result<(Array2<f64>, Wavefield)> {
    shot_core(model, geom, wavelet, shot_index, true)
        .map(|(t, f)| (t, f.expect("field requested")))
}

/// Back-propagates a data residual through the exact transpose of the
/// forward scheme and correlates it with the stored forward field, yielding
/// this shot's misfit gradient with respect to velocity, shape `(nz, nx)`.
///
/// `residual` is `(nt_stored, nr)` in the same units as traces. The
/// per-cell imaging condition is `sum_m lambda_m * (2/c) * d2b_m` with
/// `d2b_m` the raw second time difference of the forward field.
pub fn backpropagate_gradient(
    model: &PaddedModel,
    geom: &AcquisitionGeometry,
    residual: &Array2<f64>,
    shot_index: usize,
    field: &Wavefield,
) -> Result<Array2<f64>> {
    geom.validate(model.nz, model.nx)?;
    if shot_index >= geom.sources.len() {
        return Err(Error::Geometry {
            reason: format!(
                "shot index {shot_index} out of range for {} sources",
                geom.sources.len()
            ),
        });
    }
    if residual.dim() != (geom.nt_stored, geom.receivers.len()) {
        return Err(Error::ShapeMismatch {
            context: "residual block",
            expected: format!("{}x{}", geom.nt_stored, geom.receivers.len()),
            actual: format!("{}x{}", residual.dim().0, residual.dim().1),
        });
    }
    if field.nz != model.nz || field.nx != model.nx || field.snapshots.len() != geom.nt_sim + 1 {
        return Err(Error::ShapeMismatch {
            context: "stored wavefield",
            expected: format!("{} snapshots of {}x{}", geom.nt_sim + 1, model.nz, model.nx),
            actual: format!(
                "{} snapshots of {}x{}",
                field.snapshots.len(),
                field.nz,
                field.nx
            ),
        });
    }

    let kernel = Kernel::new(model, geom.dt);
    let n_cells = kernel.nzp * kernel.nxp;
    let rcv_idx: Vec<usize> = geom
        .receivers
        .iter()
        .map(|p| kernel.pad_idx(p.x, p.z))
        .collect();

    // lam_next holds lambda_{m+1}, lam_next2 holds lambda_{m+2}.
    let mut lam_next = vec![0.0; n_cells];
    let mut lam_next2 = vec![0.0; n_cells];
    let mut lam_m = vec![0.0; n_cells];
    let mut pd = vec![0.0; n_cells];
    let mut u = vec![0.0; n_cells];
    let mut grad = Array2::zeros((model.nz, model.nx));

    for m in (1..=geom.nt_sim).rev() {
        for i in 0..n_cells {
            pd[i] = kernel.damp[i] * lam_next[i];
        }
        for i in 0..n_cells {
            u[i] = kernel.c2dt2dx2[i] * pd[i];
        }
        kernel.adjoint_sweep(&pd, &u, &lam_next2, &mut lam_m);
        if m - 1 < geom.nt_stored {
            for (j, &ri) in rcv_idx.iter().enumerate() {
                lam_m[ri] += residual[[m - 1, j]];
            }
        }

        let bm = &field.snapshots[m];
        let bm1 = &field.snapshots[m - 1];
        let bm2 = (m >= 2).then(|| &field.snapshots[m - 2]);
        for iz in 0..model.nz {
            for ix in 0..model.nx {
                let i = kernel.pad_idx(ix, iz);
                let d2 = bm[[iz, ix]] - 2.0 * bm1[[iz, ix]]
                    + bm2.map_or(0.0, |b| b[[iz, ix]]);
                grad[[iz, ix]] += lam_m[i] * 2.0 / kernel.vel[i] * d2;
            }
        }

        std::mem::swap(&mut lam_next2, &mut lam_next);
        std::mem::swap(&mut lam_next, &mut lam_m);
    }
    Ok(grad)
}

/// Simulates every shot of the survey over `map`, in parallel, and
/// assembles the `(ns, nt_stored, nr)` gather. Deterministic: shot order in
/// the output is source order regardless of scheduling.
pub fn forward_model(
    map: &VelocityMap,
    geom: &AcquisitionGeometry,
    wavelet: &RickerWavelet,
) -> Result<SeismicGather> {
    geom.validate(map.nz(), map.nx())?;
    check_stability(map, geom)?;
    let model = pad_with_sponge(map, geom.nbc, geom.sponge_decay)?;
    let shots: Result<Vec<Array2<f64>>> = (0..geom.sources.len())
        .into_par_iter()
        .map(|s| propagate_shot(&model, geom, wavelet, s))
        .collect();
    let shots = shots?;
    let mut traces = Array3::zeros((shots.len(), geom.nt_stored, geom.receivers.len()));
    for (s, block) in shots.iter().enumerate() {
        traces.index_axis_mut(ndarray::Axis(0), s).assign(block);
    }
    Ok(SeismicGather {
        traces,
        dt: geom.dt,
    })
}
