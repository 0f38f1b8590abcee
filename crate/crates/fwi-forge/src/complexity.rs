//! Map-complexity metrics: spatial information (mean Sobel gradient
//! magnitude), gradient sparsity (fraction of non-flat pixels), and Shannon
//! entropy of the velocity histogram.
//!
//! SI and GSI are computed on maps normalized onto `[0, 1]`; entropy bins
//! raw velocities. The Sobel responses use the classic unnormalized
//! (+-1, +-2) kernels with edge replication, which is the convention the
//! published per-family complexity tables for these datasets follow.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{unit_normalize, VelocityMap, VELOCITY_RANGE};

/// Pixels whose gradient magnitude exceeds this count as "non-flat" in GSI.
pub const GSI_EPS: f64 = 1e-3;

/// Histogram bin width for entropy, m/s. Over `[1500, 4500]` this gives 50
/// bins.
pub const ENTROPY_BIN_WIDTH: f64 = 60.0;

/// Knobs shared by the per-map metrics; the defaults match the dataset
/// conventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityOptions {
    /// Velocity range used both to normalize for SI/GSI and to bin entropy.
    pub vmin: f64,
    pub vmax: f64,
    pub gsi_eps: f64,
    pub bin_width: f64,
}

impl Default for ComplexityOptions {
    fn default() -> Self {
        ComplexityOptions {
            vmin: VELOCITY_RANGE.0,
            vmax: VELOCITY_RANGE.1,
            gsi_eps: GSI_EPS,
            bin_width: ENTROPY_BIN_WIDTH,
        }
    }
}

/// Sobel responses of `field` with edge replication. Returns `(gx, gy)`,
/// where `gx` responds to left-right changes and `gy` to up-down changes;
/// kernels are the classic unnormalized ones, so a unit step produces a
/// peak response of 4.
pub fn sobel_gradients(field: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (nz, nx) = field.dim();
    let at = |i: i64, j: i64| -> f64 {
        let ii = i.clamp(0, nz as i64 - 1) as usize;
        let jj = j.clamp(0, nx as i64 - 1) as usize;
        field[[ii, jj]]
    };
    let mut gx = Array2::zeros((nz, nx));
    let mut gy = Array2::zeros((nz, nx));
    for i in 0..nz as i64 {
        for j in 0..nx as i64 {
            let tl = at(i - 1, j - 1);
            let tc = at(i - 1, j);
            let tr = at(i - 1, j + 1);
            let ml = at(i, j - 1);
            let mr = at(i, j + 1);
            let bl = at(i + 1, j - 1);
            let bc = at(i + 1, j);
            let br = at(i + 1, j + 1);
            gx[[i as usize, j as usize]] = (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl);
            gy[[i as usize, j as usize]] = (bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr);
        }
    }
    (gx, gy)
}

/// Mean Sobel gradient magnitude of a `[0, 1]`-normalized map.
pub fn spatial_information(unit_map: &Array2<f64>) -> f64 {
    let (gx, gy) = sobel_gradients(unit_map);
    let n = unit_map.len() as f64;
    gx.iter()
        .zip(gy.iter())
        .map(|(x, y)| (x * x + y * y).sqrt())
        .sum::<f64>()
        / n
}

/// Fraction of pixels of a `[0, 1]`-normalized map whose Sobel gradient
/// magnitude exceeds `eps`.
pub fn gradient_sparsity_index(unit_map: &Array2<f64>, eps: f64) -> f64 {
    let (gx, gy) = sobel_gradients(unit_map);
    let n = unit_map.len() as f64;
    let hits = gx
        .iter()
        .zip(gy.iter())
        .filter(|(x, y)| (*x * *x + *y * *y).sqrt() > eps)
        .count();
    hits as f64 / n
}

/// Shannon entropy (bits) of the velocity histogram with fixed-width bins
/// over `[vmin, vmax]`; values outside the range fall into the end bins.
pub fn shannon_entropy(values: &Array2<f64>, vmin: f64, vmax: f64, bin_width: f64) -> Result<f64> {
    if !(vmax > vmin) {
        return Err(Error::InvalidRange { lo: vmin, hi: vmax });
    }
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::config(format!(
            "bin_width must be positive, got {bin_width}"
        )));
    }
    let n_bins = ((vmax - vmin) / bin_width).ceil().max(1.0) as usize;
    let mut counts = vec![0usize; n_bins];
    for &v in values.iter() {
        let idx = ((v - vmin) / bin_width).floor();
        let idx = (idx.max(0.0) as usize).min(n_bins - 1);
        counts[idx] += 1;
    }
    let total = values.len() as f64;
    let mut h = 0.0;
    for &c in &counts {
        if c > 0 {
            let p = c as f64 / total;
            h -= p * p.log2();
        }
    }
    Ok(h)
}

/// The three metrics for one map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapComplexity {
    pub si: f64,
    pub gsi: f64,
    pub entropy: f64,
}

impl MapComplexity {
    pub const CSV_HEADER: &'static str = "map_id,si,gsi,entropy";

    pub fn csv_row(&self, map_id: usize) -> String {
        format!("{map_id},{:.6},{:.6},{:.6}", self.si, self.gsi, self.entropy)
    }
}

/// Computes SI, GSI, and entropy for one map.
pub fn map_complexity(map: &VelocityMap, opts: &ComplexityOptions) -> Result<MapComplexity> {
    let unit = unit_normalize(&map.values, opts.vmin, opts.vmax)?;
    Ok(MapComplexity {
        si: spatial_information(&unit),
        gsi: gradient_sparsity_index(&unit, opts.gsi_eps),
        entropy: shannon_entropy(&map.values, opts.vmin, opts.vmax, opts.bin_width)?,
    })
}

/// Batch means of the per-map metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub count: usize,
    pub si_mean: f64,
    pub gsi_mean: f64,
    pub entropy_mean: f64,
}

impl ComplexityReport {
    /// Flat key-value rendering for terminal output and logs.
    pub fn kv_table(&self) -> String {
        format!(
            "maps          {}\nsi_mean       {:.6}\ngsi_mean      {:.6}\nentropy_mean  {:.6}\n",
            self.count, self.si_mean, self.gsi_mean, self.entropy_mean
        )
    }
}

/// Means of [`map_complexity`] over a batch, with the default options.
pub fn complexity_report(maps: &[VelocityMap]) -> Result<ComplexityReport> {
    complexity_report_with(maps, &ComplexityOptions::default())
}

pub fn complexity_report_with(
    maps: &[VelocityMap],
    opts: &ComplexityOptions,
) -> Result<ComplexityReport> {
    if maps.is_empty() {
        return Err(Error::config("complexity report needs at least one map"));
    }
    let mut si = 0.0;
    let mut gsi = 0.0;
    let mut entropy = 0.0;
    for map in maps {
        let c = map_complexity(map, opts)?;
        si += c.si;
        gsi += c.gsi;
        entropy += c.entropy;
    }
    let n = maps.len() as f64;
    Ok(ComplexityReport {
        count: maps.len(),
        si_mean: si / n,
        gsi_mean: gsi / n,
        entropy_mean: entropy / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sobel_of_constant_is_zero() {
        let f = Array2::from_elem((6, 7), 0.4);
        let (gx, gy) = sobel_gradients(&f);
        assert!(gx.iter().all(|v| *v == 0.0));
        assert!(gy.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sobel_of_vertical_step() {
        // Columns 0..3 at 0.0, columns 3.. at 0.5.
        let mut f = Array2::zeros((5, 6));
        for i in 0..5 {
            for j in 3..6 {
                f[[i, j]] = 0.5;
            }
        }
        let (gx, gy) = sobel_gradients(&f);
        assert!(gy.iter().all(|v| *v == 0.0));
        for i in 0..5 {
            for j in 0..6 {
                let expect = if j == 2 || j == 3 { 2.0 } else { 0.0 };
                assert_eq!(gx[[i, j]], expect, "({i},{j})");
            }
        }
    }

    /// Independent clamped-indexing convolution oracle on a random 5x5.
    #[test]
    fn sobel_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = Array2::from_shape_fn((5, 5), |_| rng.random_range(0.0..1.0));
        let (gx, gy) = sobel_gradients(&f);

        let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
        let ky = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
        for i in 0..5i64 {
            for j in 0..5i64 {
                let mut ex = 0.0;
                let mut ey = 0.0;
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        let ii = (i + di).clamp(0, 4) as usize;
                        let jj = (j + dj).clamp(0, 4) as usize;
                        ex += kx[(di + 1) as usize][(dj + 1) as usize] * f[[ii, jj]];
                        ey += ky[(di + 1) as usize][(dj + 1) as usize] * f[[ii, jj]];
                    }
                }
                assert!((gx[[i as usize, j as usize]] - ex).abs() < 1e-9);
                assert!((gy[[i as usize, j as usize]] - ey).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn si_and_gsi_of_constant_are_zero() {
        let f = Array2::from_elem((8, 8), 0.25);
        assert_eq!(spatial_information(&f), 0.0);
        assert_eq!(gradient_sparsity_index(&f, GSI_EPS), 0.0);
    }

    /// SI/GSI/entropy vs independent loop oracles on a random 8x8.
    #[test]
    fn metrics_match_brute_force_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let vals = Array2::from_shape_fn((8, 8), |_| rng.random_range(1500.0..4500.0));
        let map = VelocityMap::new(vals.clone(), 10.0).unwrap();
        let opts = ComplexityOptions::default();
        let got = map_complexity(&map, &opts).unwrap();

        // Oracle: normalize, convolve with clamping, accumulate.
        let unit = vals.mapv(|v| (v - 1500.0) / 3000.0);
        let mut si = 0.0;
        let mut hits = 0usize;
        for i in 0..8i64 {
            for j in 0..8i64 {
                let mut ex = 0.0;
                let mut ey = 0.0;
                let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
                let ky = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        let ii = (i + di).clamp(0, 7) as usize;
                        let jj = (j + dj).clamp(0, 7) as usize;
                        ex += kx[(di + 1) as usize][(dj + 1) as usize] * unit[[ii, jj]];
                        ey += ky[(di + 1) as usize][(dj + 1) as usize] * unit[[ii, jj]];
                    }
                }
                let mag = (ex * ex + ey * ey).sqrt();
                si += mag;
                if mag > 1e-3 {
                    hits += 1;
                }
            }
        }
        si /= 64.0;
        let gsi = hits as f64 / 64.0;

        let mut counts = [0usize; 50];
        for &v in vals.iter() {
            let mut idx = ((v - 1500.0) / 60.0).floor() as i64;
            if idx < 0 {
                idx = 0;
            }
            if idx > 49 {
                idx = 49;
            }
            counts[idx as usize] += 1;
        }
        let mut h = 0.0;
        for c in counts {
            if c > 0 {
                let p = c as f64 / 64.0;
                h -= p * p.log2();
            }
        }

        assert!((got.si - si).abs() < 1e-9, "si {} vs {}", got.si, si);
        assert!((got.gsi - gsi).abs() < 1e-9, "gsi {} vs {}", got.gsi, gsi);
        assert!((got.entropy - h).abs() < 1e-9, "entropy {} vs {}", got.entropy, h);
    }

    #[test]
    fn gsi_of_all_distinct_random_with_zero_eps_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let f = Array2::from_shape_fn((10, 10), |_| rng.random_range(0.0..1.0));
        assert_eq!(gradient_sparsity_index(&f, 0.0), 1.0);
    }

    #[test]
    fn entropy_basics() {
        let constant = Array2::from_elem((10, 10), 2500.0);
        assert_eq!(shannon_entropy(&constant, 1500.0, 4500.0, 60.0).unwrap(), 0.0);

        let mut half = Array2::from_elem((10, 10), 1500.0);
        for i in 0..5 {
            for j in 0..10 {
                half[[i, j]] = 4500.0;
            }
        }
        let h = shannon_entropy(&half, 1500.0, 4500.0, 60.0).unwrap();
        assert!((h - 1.0).abs() < 1e-12, "expected 1 bit, got {h}");
    }

    #[test]
    fn entropy_depends_only_on_bin_occupancy() {
        // Same occupancy pattern through different in-bin values.
        let mut a = Array2::from_elem((4, 4), 1600.0);
        let mut b = Array2::from_elem((4, 4), 1610.0); // same bin as 1600
        for j in 0..4 {
            a[[3, j]] = 2995.0; // bin 24
            b[[3, j]] = 2990.0; // bin 24
        }
        let ha = shannon_entropy(&a, 1500.0, 4500.0, 60.0).unwrap();
        let hb = shannon_entropy(&b, 1500.0, 4500.0, 60.0).unwrap();
        assert_eq!(ha, hb);
    }

    #[test]
    fn report_of_identical_constant_maps_is_zero() {
        let maps: Vec<VelocityMap> = (0..3)
            .map(|_| VelocityMap::constant(8, 8, 10.0, 2500.0).unwrap())
            .collect();
        let r = complexity_report(&maps).unwrap();
        assert_eq!(r.count, 3);
        assert_eq!(r.si_mean, 0.0);
        assert_eq!(r.gsi_mean, 0.0);
        assert_eq!(r.entropy_mean, 0.0);
    }

    #[test]
    fn singleton_report_equals_map_complexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let vals = Array2::from_shape_fn((8, 8), |_| rng.random_range(1500.0..4500.0));
        let map = VelocityMap::new(vals, 10.0).unwrap();
        let c = map_complexity(&map, &ComplexityOptions::default()).unwrap();
        let r = complexity_report(std::slice::from_ref(&map)).unwrap();
        assert_eq!(r.si_mean, c.si);
        assert_eq!(r.gsi_mean, c.gsi);
        assert_eq!(r.entropy_mean, c.entropy);
    }

    #[test]
    fn empty_report_is_an_error() {
        assert!(complexity_report(&[]).is_err());
    }

    proptest! {
        /// All three metrics are invariant under horizontal mirroring.
        #[test]
        fn metrics_are_mirror_invariant(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vals = Array2::from_shape_fn((7, 9), |_| rng.random_range(1500.0..4500.0));
            let mirrored = Array2::from_shape_fn((7, 9), |(i, j)| vals[[i, 8 - j]]);
            let a = VelocityMap::new(vals, 10.0).unwrap();
            let b = VelocityMap::new(mirrored, 10.0).unwrap();
            let opts = ComplexityOptions::default();
            let ca = map_complexity(&a, &opts).unwrap();
            let cb = map_complexity(&b, &opts).unwrap();
            prop_assert!((ca.si - cb.si).abs() < 1e-12);
            prop_assert!((ca.gsi - cb.gsi).abs() < 1e-12);
            prop_assert!((ca.entropy - cb.entropy).abs() < 1e-12);
        }
    }
}
