//! Zero-phase low-pass filtering for multi-scale inversion: a 4th-order
//! Butterworth realized as two biquad sections, run forward and backward
//! (filtfilt) with odd-extension padding and steady-state initial
//! conditions so constants pass through exactly and first breaks keep
//! their timing.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::grid::SeismicGather;

/// One normalized second-order section, direct form II transposed.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    /// Butterworth low-pass section with quality factor `q`, cutoff `fc` Hz
    /// at sampling interval `dt`.
    fn lowpass(fc: f64, dt: f64, q: f64) -> Biquad {
        let w0 = 2.0 * std::f64::consts::PI * fc * dt;
        let alpha = w0.sin() / (2.0 * q);
        let cosw = w0.cos();
        let a0 = 1.0 + alpha;
        Biquad {
            b0: (1.0 - cosw) / (2.0 * a0),
            b1: (1.0 - cosw) / a0,
            b2: (1.0 - cosw) / (2.0 * a0),
            a1: -2.0 * cosw / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    /// Filters `x` in place. `scale_zi` seeds the two delay states with
    /// their steady-state response to a constant input of that value, so a
    /// constant signal passes through with no transient.
    fn filt(&self, x: &mut [f64], scale_zi: f64) {
        // Steady state for unit input uses the DC gain, which is exactly 1
        // for these sections (b0+b1+b2 = 1+a1+a2).
        let mut z1 = scale_zi * (1.0 - self.b0);
        let mut z2 = scale_zi * (self.b2 - self.a2);
        for v in x.iter_mut() {
            let xn = *v;
            let y = self.b0 * xn + z1;
            z1 = self.b1 * xn - self.a1 * y + z2;
            z2 = self.b2 * xn - self.a2 * y;
            *v = y;
        }
    }

    /// Output of the zero-input filter whose states are seeded as in
    /// `filt` with `scale_zi` of 1. `filt(x, c)` equals the zero-state
    /// response of `x` plus `c` times this vector.
    fn seed_response(&self, len: usize) -> Vec<f64> {
        let mut g = vec![0.0; len];
        self.filt(&mut g, 1.0);
        g
    }

    /// Magnitude response at frequency `f` Hz for sampling interval `dt`.
    fn magnitude(&self, f: f64, dt: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * f * dt;
        let (c1, s1) = (w.cos(), w.sin());
        let (c2, s2) = ((2.0 * w).cos(), (2.0 * w).sin());
        let num_re = self.b0 + self.b1 * c1 + self.b2 * c2;
        let num_im = -(self.b1 * s1 + self.b2 * s2);
        let den_re = 1.0 + self.a1 * c1 + self.a2 * c2;
        let den_im = -(self.a1 * s1 + self.a2 * s2);
        (num_re * num_re + num_im * num_im).sqrt() / (den_re * den_re + den_im * den_im).sqrt()
    }
}

/// The two sections of a 4th-order Butterworth low-pass: pole-pair quality
/// factors 1/(2 sin(pi/8)) and 1/(2 sin(3 pi/8)).
fn butterworth4(fc: f64, dt: f64) -> Result<[Biquad; 2]> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::config(format!("dt must be positive, got {dt}")));
    }
    let nyquist = 0.5 / dt;
    if !(fc.is_finite() && fc > 0.0 && fc < nyquist) {
        return Err(Error::config(format!(
            "cutoff must lie in (0, {nyquist}) Hz for dt {dt}, got {fc}"
        )));
    }
    let q1 = 1.0 / (2.0 * (std::f64::consts::PI / 8.0).sin());
    let q2 = 1.0 / (2.0 * (3.0 * std::f64::consts::PI / 8.0).sin());
    Ok([Biquad::lowpass(fc, dt, q1), Biquad::lowpass(fc, dt, q2)])
}

/// Combined forward-pass magnitude response of the cascade at `f` Hz.
/// Zero-phase application squares this.
pub fn lowpass_response(fc: f64, dt: f64, f: f64) -> Result<f64> {
    let sections = butterworth4(fc, dt)?;
    Ok(sections[0].magnitude(f, dt) * sections[1].magnitude(f, dt))
}

/// Zero-phase low-pass of one trace: odd-extend, filter forward, filter
/// backward, trim. The result has no phase shift and twice the rolloff of
/// a single pass.
fn filtfilt(sections: &[Biquad; 2], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return x.to_vec();
    }
    // Long enough for the transient of both passes to die inside the pad.
    let padlen = 30.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * padlen);
    for i in 0..padlen {
        ext.push(2.0 * x[0] - x[padlen - i]);
    }
    ext.extend_from_slice(x);
    for i in 0..padlen {
        ext.push(2.0 * x[n - 1] - x[n - 2 - i]);
    }

    for s in sections {
        let first = ext[0];
        s.filt(&mut ext, first);
    }
    ext.reverse();
    for s in sections {
        let first = ext[0];
        s.filt(&mut ext, first);
    }
    ext.reverse();
    ext[padlen..padlen + n].to_vec()
}

/// Transpose of one seeded section: the section is the zero-state Toeplitz
/// filter plus a rank-one term injecting the seed transient from sample 0,
/// so its transpose is the time-reversed zero-state filter plus the dot
/// product with that transient folded back into sample 0.
fn section_transpose(s: &Biquad, y: &mut [f64]) {
    let g = s.seed_response(y.len());
    let q: f64 = g.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
    y.reverse();
    s.filt(y, 0.0);
    y.reverse();
    y[0] += q;
}

/// Exact transpose of `filtfilt` as a linear map. Applying the trim,
/// reversal, section, and extension transposes in reverse order gives the
/// true adjoint of the zero-phase filter, including its pad handling.
fn filtfilt_transpose(sections: &[Biquad; 2], r: &[f64]) -> Vec<f64> {
    let n = r.len();
    if n < 2 {
        return r.to_vec();
    }
    let padlen = 30.min(n - 1);
    let mut y = vec![0.0; n + 2 * padlen];
    y[padlen..padlen + n].copy_from_slice(r);

    y.reverse();
    section_transpose(&sections[1], &mut y);
    section_transpose(&sections[0], &mut y);
    y.reverse();
    section_transpose(&sections[1], &mut y);
    section_transpose(&sections[0], &mut y);

    // Transpose of the odd extension: pad rows read 2*x[edge] - x[mirror],
    // so each pad value feeds the edge sample twice and its mirror once,
    // negated.
    let mut out = vec![0.0; n];
    out.copy_from_slice(&y[padlen..padlen + n]);
    for i in 0..padlen {
        out[0] += 2.0 * y[i];
        out[padlen - i] -= y[i];
        out[n - 1] += 2.0 * y[padlen + n + i];
        out[n - 2 - i] -= y[padlen + n + i];
    }
    out
}

/// Zero-phase low-passes every trace of a `(nt, nr)` block along time.
pub fn lowpass_block(block: &Array2<f64>, cutoff: f64, dt: f64) -> Result<Array2<f64>> {
    let sections = butterworth4(cutoff, dt)?;
    let (nt, nr) = block.dim();
    let mut out = Array2::zeros((nt, nr));
    let mut trace = vec![0.0; nt];
    for r in 0..nr {
        for k in 0..nt {
            trace[k] = block[[k, r]];
        }
        let filtered = filtfilt(&sections, &trace);
        for k in 0..nt {
            out[[k, r]] = filtered[k];
        }
    }
    Ok(out)
}

/// Transpose of [`lowpass_block`] as a linear map on the block. This is
/// the operator that carries data-space residuals back through the filter
/// when differentiating a filtered misfit.
pub fn lowpass_block_transpose(
    block: &Array2<f64>,
    cutoff: f64,
    dt: f64,
) -> Result<Array2<f64>> {
    let sections = butterworth4(cutoff, dt)?;
    let (nt, nr) = block.dim();
    let mut out = Array2::zeros((nt, nr));
    let mut trace = vec![0.0; nt];
    for r in 0..nr {
        for k in 0..nt {
            trace[k] = block[[k, r]];
        }
        let back = filtfilt_transpose(&sections, &trace);
        for k in 0..nt {
            out[[k, r]] = back[k];
        }
    }
    Ok(out)
}

/// Zero-phase low-passes every trace of a gather. Shape and dt preserved.
pub fn lowpass(gather: &SeismicGather, cutoff: f64) -> Result<SeismicGather> {
    let (ns, nt, nr) = gather.traces.dim();
    let mut traces = Array3::zeros((ns, nt, nr));
    for s in 0..ns {
        let block = gather.traces.index_axis(ndarray::Axis(0), s).to_owned();
        let filtered = lowpass_block(&block, cutoff, gather.dt)?;
        traces.index_axis_mut(ndarray::Axis(0), s).assign(&filtered);
    }
    Ok(SeismicGather {
        traces,
        dt: gather.dt,
    })
}
