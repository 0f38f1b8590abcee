//! Map-comparison metrics: MAE, RMSE, and a Gaussian-windowed SSIM.
//!
//! Benchmark convention: velocity maps are min-max normalized onto `[-1, 1]`
//! (see [`crate::grid::minmax_normalize`]) before any of these metrics are
//! computed, so the SSIM dynamic range defaults to `L = 2`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{minmax_normalize, VELOCITY_RANGE};

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>, context: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            context,
            expected: format!("{:?}", a.shape()),
            actual: format!("{:?}", b.shape()),
        });
    }
    Ok(())
}

/// Mean absolute error between two equally shaped fields.
pub fn mae(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    check_same_shape(a, b, "mae")?;
    let n = a.len() as f64;
    Ok(a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n)
}

/// Root mean squared error between two equally shaped fields.
pub fn rmse(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    check_same_shape(a, b, "rmse")?;
    let n = a.len() as f64;
    let mse = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    Ok(mse.sqrt())
}

/// SSIM result. `window` is the side length actually used; `shrunk` is set
/// when the input was smaller than the default 11x11 window and the window
/// was clamped to `min(nz, nx, 11)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimScore {
    pub value: f64,
    pub window: usize,
    pub shrunk: bool,
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - center;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// population (weighted) statistics, and dynamic range `L = 2` for inputs on
/// `[-1, 1]`. Windows are only placed fully inside the field; the score is
/// the plain mean over all such placements.
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>) -> Result<SsimScore> {
    ssim_with_range(a, b, 2.0)
}

/// [`ssim`] with an explicit dynamic range `L`.
pub fn ssim_with_range(a: &Array2<f64>, b: &Array2<f64>, data_range: f64) -> Result<SsimScore> {
    check_same_shape(a, b, "ssim")?;
    if !(data_range.is_finite() && data_range > 0.0) {
        return Err(Error::config(format!(
            "ssim data_range must be positive, got {data_range}"
        )));
    }
    let (nz, nx) = a.dim();
    if nz == 0 || nx == 0 {
        return Err(Error::config("ssim inputs must be non-empty"));
    }
    let win = SSIM_WINDOW.min(nz).min(nx);
    let shrunk = win < SSIM_WINDOW;

    let g = gaussian_window(win, SSIM_SIGMA);
    let c1 = (SSIM_K1 * data_range) * (SSIM_K1 * data_range);
    let c2 = (SSIM_K2 * data_range) * (SSIM_K2 * data_range);

    let mut total = 0.0;
    for i in 0..=(nz - win) {
        for j in 0..=(nx - win) {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for (wi, gi) in g.iter().enumerate() {
                for (wj, gj) in g.iter().enumerate() {
                    let w = gi * gj;
                    let x = a[[i + wi, j + wj]];
                    let y = b[[i + wi, j + wj]];
                    mu_a += w * x;
                    mu_b += w * y;
                    aa += w * x * x;
                    bb += w * y * y;
                    ab += w * x * y;
                }
            }
            let va = aa - mu_a * mu_a;
            let vb = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
            total += s;
        }
    }
    let n_windows = ((nz - win + 1) * (nx - win + 1)) as f64;
    Ok(SsimScore {
        value: total / n_windows,
        window: win,
        shrunk,
    })
}

/// The three benchmark metrics computed together on `[-1, 1]`-normalized
/// fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    pub ssim: f64,
}

impl MetricReport {
    /// Normalizes both maps by the dataset velocity range `[1500, 4500]`
    /// and compares them.
    pub fn for_velocity(predicted: &Array2<f64>, truth: &Array2<f64>) -> Result<MetricReport> {
        let (lo, hi) = VELOCITY_RANGE;
        let p = minmax_normalize(predicted, lo, hi)?;
        let t = minmax_normalize(truth, lo, hi)?;
        Ok(MetricReport {
            mae: mae(&p, &t)?,
            rmse: rmse(&p, &t)?,
            ssim: ssim(&p, &t)?.value,
        })
    }
}
