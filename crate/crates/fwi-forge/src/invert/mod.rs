//! Multi-scale full waveform inversion: frequency-banded least-squares
//! misfit, adjoint-state gradients through the exact transpose of the
//! forward stencil, nonlinear conjugate gradient with a backtracking line
//! search and box projection, and the three standard initial-map builders.

pub mod filter;

use std::time::{Duration, Instant};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{AcquisitionGeometry, SeismicGather, VelocityMap};
use crate::sim::{
    backpropagate_gradient, check_stability, pad_with_sponge, propagate_shot,
    propagate_shot_with_field, RickerWavelet,
};

pub use filter::{lowpass, lowpass_block, lowpass_block_transpose, lowpass_response};

/// Knobs for one inversion run. Defaults follow the published multi-scale
/// recipe: cutoffs (1, 3, 5, 10, 20, 30) Hz and a 0.1% relative-loss stop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    /// Low-pass cutoffs in Hz, strictly increasing, one stage each.
    pub cutoffs: Vec<f64>,
    pub max_iters_per_stage: usize,
    /// Stage stops once |loss_k - loss_{k-1}| / loss_{k-1} drops below this.
    pub stop_rel_loss_change: f64,
    /// First trial step expressed as a velocity change in m/s.
    pub initial_step: f64,
    pub max_step_halvings: usize,
    pub armijo_c1: f64,
    /// Iterates are projected into [lo, hi] m/s after every update.
    pub bounds: (f64, f64),
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            cutoffs: vec![1.0, 3.0, 5.0, 10.0, 20.0, 30.0],
            max_iters_per_stage: 10,
            stop_rel_loss_change: 0.001,
            initial_step: 50.0,
            max_step_halvings: 8,
            armijo_c1: 1e-4,
            bounds: (1500.0, 4500.0),
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cutoffs.is_empty() {
            return Err(Error::config("need at least one cutoff frequency"));
        }
        if !self.cutoffs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("cutoffs must be strictly increasing"));
        }
        if !self.cutoffs.iter().all(|c| c.is_finite() && *c > 0.0) {
            return Err(Error::config("cutoffs must be positive"));
        }
        if !(self.stop_rel_loss_change > 0.0 && self.stop_rel_loss_change < 1.0) {
            return Err(Error::config(format!(
                "stop_rel_loss_change must be in (0, 1), got {}",
                self.stop_rel_loss_change
            )));
        }
        if self.max_iters_per_stage == 0 {
            return Err(Error::config("max_iters_per_stage must be at least 1"));
        }
        if !(self.initial_step.is_finite() && self.initial_step > 0.0) {
            return Err(Error::config("initial_step must be positive"));
        }
        if !(self.bounds.1 > self.bounds.0) {
            return Err(Error::InvalidRange {
                lo: self.bounds.0,
                hi: self.bounds.1,
            });
        }
        Ok(())
    }
}

/// Loss history of one frequency stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub cutoff: f64,
    /// losses[0] is the loss at the stage's starting map; each further
    /// entry is an accepted iterate. Non-increasing.
    pub losses: Vec<f64>,
    /// The stage's stop rule fired (as opposed to the iteration cap).
    pub converged: bool,
    /// The line search failed on the first iteration; the input map was
    /// returned unchanged.
    pub stalled: bool,
}

/// Full record of a multi-scale run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionTrace {
    pub stages: Vec<StageTrace>,
    /// Map after each stage, in stage order.
    pub stage_maps: Vec<VelocityMap>,
    pub wall_time: Duration,
}

impl InversionTrace {
    pub const CSV_HEADER: &'static str = "stage,cutoff_hz,iteration,loss";

    /// One row per recorded loss: `stage,cutoff_hz,iteration,loss`.
    /// Iteration 0 is the stage's starting loss.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for (si, stage) in self.stages.iter().enumerate() {
            for (it, loss) in stage.losses.iter().enumerate() {
                out.push_str(&format!("{si},{},{it},{loss:.12e}\n", stage.cutoff));
            }
        }
        out
    }
}

/// Half the squared sample-wise difference between two gathers.
pub fn misfit_l2(pred: &SeismicGather, obs: &SeismicGather) -> Result<f64> {
    if pred.traces.dim() != obs.traces.dim() {
        let (a, b, c) = pred.traces.dim();
        let (d, e, f) = obs.traces.dim();
        return Err(Error::ShapeMismatch {
            context: "misfit gathers",
            expected: format!("{a}x{b}x{c}"),
            actual: format!("{d}x{e}x{f}"),
        });
    }
    Ok(pred
        .traces
        .iter()
        .zip(obs.traces.iter())
        .map(|(p, o)| (p - o) * (p - o))
        .sum::<f64>()
        * 0.5)
}

fn zero_mask(grad: &mut Array2<f64>) {
    // Rows 0-1 carry the acquisition footprint; the outer ring's padded
    // replicas are not differentiated through, so it is excluded too.
    let (nz, nx) = grad.dim();
    for ix in 0..nx {
        grad[[0, ix]] = 0.0;
        grad[[1, ix]] = 0.0;
        grad[[nz - 1, ix]] = 0.0;
    }
    for iz in 0..nz {
        grad[[iz, 0]] = 0.0;
        grad[[iz, nx - 1]] = 0.0;
    }
}

/// Misfit of `map` against a filtered gather, and its gradient, via one
/// forward-plus-adjoint pass per shot. Shots run in parallel; the reduction
/// is in shot order, so results do not depend on thread count.
fn misfit_and_gradient(
    map: &VelocityMap,
    geom: &AcquisitionGeometry,
    wavelet: &RickerWavelet,
    obs_filtered: &SeismicGather,
    cutoff: f64,
) -> Result<(f64, Array2<f64>)> {
    geom.validate(map.nz(), map.nx())?;
    check_stability(map, geom)?;
    let obs_dim = obs_filtered.traces.dim();
    let want = (geom.sources.len(), geom.nt_stored, geom.receivers.len());
    if obs_dim != want {
        return Err(Error::ShapeMismatch {
            context: "observed gather",
            expected: format!("{}x{}x{}", want.0, want.1, want.2),
            actual: format!("{}x{}x{}", obs_dim.0, obs_dim.1, obs_dim.2),
        });
    }
    let model = pad_with_sponge(map, geom.nbc, geom.sponge_decay)?;

    let per_shot: Result<Vec<(f64, Array2<f64>)>> = (0..geom.sources.len())
        .into_par_iter()
        .map(|s| {
            let (pred, field) = propagate_shot_with_field(&model, geom, wavelet, s)?;
            let pred_f = lowpass_block(&pred, cutoff, geom.dt)?;
            let obs_block = obs_filtered.traces.index_axis(ndarray::Axis(0), s);
            let residual = &pred_f - &obs_block;
            let loss = 0.5 * residual.iter().map(|r| r * r).sum::<f64>();
            let residual_b = lowpass_block_transpose(&residual, cutoff, geom.dt)?;
            let grad = backpropagate_gradient(&model, geom, &residual_b, s, &field)?;
            Ok((loss, grad))
        })
        .collect();

    let mut loss = 0.0;
    let mut grad = Array2::zeros((map.nz(), map.nx()));
    for (l, g) in per_shot? {
        loss += l;
        grad += &g;
    }
    zero_mask(&mut grad);
    Ok((loss, grad))
}

fn misfit_only(
    map: &VelocityMap,
    geom: &AcquisitionGeometry,
    wavelet: &RickerWavelet,
    obs_filtered: &SeismicGather,
    cutoff: f64,
) -> Result<f64> {
    check_stability(map, geom)?;
    let model = pad_with_sponge(map, geom.nbc, geom.sponge_decay)?;
    let per_shot: Result<Vec<f64>> = (0..geom.sources.len())
        .into_par_iter()
        .map(|s| {
            let pred = propagate_shot(&model, geom, wavelet, s)?;
            let pred_f = lowpass_block(&pred, cutoff, geom.dt)?;
            let obs_block = obs_filtered.traces.index_axis(ndarray::Axis(0), s);
            let d = &pred_f - &obs_block;
            Ok(0.5 * d.iter().map(|r| r * r).sum::<f64>())
        })
        .collect();
    Ok(per_shot?.into_iter().sum())
}

/// Gradient of the banded misfit at `map`: per shot, forward-propagate
/// storing the field, form the residual `lowpass(pred) - obs_filtered`,
/// carry it back through the filter's transpose, then back-propagate and
/// correlate. Rows 0-1 and the outer ring of the result are masked to
/// zero.
pub fn gradient_adjoint(
    map: &VelocityMap,
    geom: &AcquisitionGeometry,
    wavelet: &RickerWavelet,
    obs_filtered: &SeismicGather,
    cutoff: f64,
) -> Result<Array2<f64>> {
    misfit_and_gradient(map, geom, wavelet, obs_filtered, cutoff).map(|(_, g)| g)
}

/// Anything the conjugate-gradient loop can descend on.
trait Objective {
    fn loss(&self, x: &Array2<f64>) -> Result<f64>;
    fn loss_grad(&self, x: &Array2<f64>) -> Result<(f64, Array2<f64>)>;
}

struct CgSettings {
    max_iters: usize,
    stop_rel: f64,
    initial_step: f64,
    max_halvings: usize,
    c1: f64,
    bounds: (f64, f64),
}

struct CgOutcome {
    x: Array2<f64>,
    losses: Vec<f64>,
    converged: bool,
    stalled: bool,
}

fn project(x: &mut Array2<f64>, bounds: (f64, f64)) {
    x.mapv_inplace(|v| v.clamp(bounds.0, bounds.1));
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Polak-Ribiere+ nonlinear CG with Armijo backtracking and box projection.
fn minimize<O: Objective>(obj: &O, x0: &Array2<f64>, opt: &CgSettings) -> Result<CgOutcome> {
    let mut x = x0.clone();
    project(&mut x, opt.bounds);
    let (mut f, mut g) = obj.loss_grad(&x)?;
    let mut losses = vec![f];
    if f == 0.0 {
        return Ok(CgOutcome {
            x,
            losses,
            converged: true,
            stalled: false,
        });
    }
    let mut d = -&g;

    for iter in 0..opt.max_iters {
        if dot(&g, &d) >= 0.0 {
            d = -&g; // restart on a non-descent direction
        }
        let d_max = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if d_max == 0.0 {
            return Ok(CgOutcome {
                x,
                losses,
                converged: true,
                stalled: false,
            });
        }

        // Backtracking line search on the projected path; one fallback to
        // steepest descent if the conjugate direction exhausts its budget.
        let mut accepted: Option<(Array2<f64>, f64)> = None;
        let mut tried_steepest = false;
        loop {
            let alpha0 = opt.initial_step / d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut alpha = alpha0;
            for _ in 0..=opt.max_halvings {
                let mut xt = &x + &(alpha * &d);
                project(&mut xt, opt.bounds);
                let ft = obj.loss(&xt)?;
                let step = &xt - &x;
                if ft <= f + opt.c1 * dot(&g, &step) {
                    accepted = Some((xt, ft));
                    break;
                }
                alpha *= 0.5;
            }
            if accepted.is_some() || tried_steepest {
                break;
            }
            let steepest = -&g;
            if steepest == d {
                break;
            }
            d = steepest;
            tried_steepest = true;
        }

        let Some((x_new, f_new)) = accepted else {
            // Nothing acceptable along two directions.
            let stalled = iter == 0;
            return Ok(CgOutcome {
                x,
                losses,
                converged: false,
                stalled,
            });
        };

        let (_, g_new) = obj.loss_grad(&x_new)?;
        let rel = (f - f_new).abs() / f.max(f64::MIN_POSITIVE);
        let beta = (dot(&g_new, &(&g_new - &g)) / dot(&g, &g).max(f64::MIN_POSITIVE)).max(0.0);
        d = -&g_new + &(beta * &d);
        x = x_new;
        f = f_new;
        g = g_new;
        losses.push(f);

        if rel < opt.stop_rel || f == 0.0 {
            return Ok(CgOutcome {
                x,
                losses,
                converged: true,
                stalled: false,
            });
        }
    }
    Ok(CgOutcome {
        x,
        losses,
        converged: false,
        stalled: false,
    })
}

struct StageObjective<'a> {
    dx: f64,
    geom: &'a AcquisitionGeometry,
    wavelet: &'a RickerWavelet,
    obs_filtered: &'a SeismicGather,
    cutoff: f64,
}

impl Objective for StageObjective<'_> {
    fn loss(&self, x: &Array2<f64>) -> Result<f64> {
        let map = VelocityMap::new(x.clone(), self.dx)?;
        misfit_only(&map, self.geom, self.wavelet, self.obs_filtered, self.cutoff)
    }

    fn loss_grad(&self, x: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        let map = VelocityMap::new(x.clone(), self.dx)?;
        misfit_and_gradient(&map, self.geom, self.wavelet, self.obs_filtered, self.cutoff)
    }
}

/// One frequency band of the inversion: CG on the misfit against
/// `obs_filtered`, warm-started at `map0`.
pub fn cg_stage(
    map0: &VelocityMap,
    obs_filtered: &SeismicGather,
    cutoff: f64,
    geom: &AcquisitionGeometry,
    wavelet: &RickerWavelet,
    config: &InversionConfig,
) -> Result<(VelocityMap, StageTrace)> {
    config.validate()?;
    let objective = StageObjective {
        dx: map0.dx,
        geom,
        wavelet,
        obs_filtered,
        cutoff,
    };
    let settings = CgSettings {
        max_iters: config.max_iters_per_stage,
        stop_rel: config.stop_rel_loss_change,
        initial_step: config.initial_step,
        max_halvings: config.max_step_halvings,
        c1: config.armijo_c1,
        bounds: config.bounds,
    };
    let out = minimize(&objective, &map0.values, &settings)?;
    let map = VelocityMap::new(out.x, map0.dx)?;
    Ok((
        map,
        StageTrace {
            cutoff,
            losses: out.losses,
            converged: out.converged,
            stalled: out.stalled,
        },
    ))
}

/// Runs the full frequency schedule: for each cutoff, filter `obs`, run a
/// CG stage warm-started from the previous result.
pub fn multiscale_fwi(
    map0: &VelocityMap,
    obs: &SeismicGather,
    geom: &AcquisitionGeometry,
    wavelet: &RickerWavelet,
    config: &InversionConfig,
) -> Result<(VelocityMap, InversionTrace)> {
    config.validate()?;
    geom.validate(map0.nz(), map0.nx())?;
    let t0 = Instant::now();
    let mut current = map0.clone();
    project(&mut current.values, config.bounds);
    let mut stages = Vec::with_capacity(config.cutoffs.len());
    let mut stage_maps = Vec::with_capacity(config.cutoffs.len());
    for &cutoff in &config.cutoffs {
        let obs_f = lowpass(obs, cutoff)?;
        let (next, trace) = cg_stage(&current, &obs_f, cutoff, geom, wavelet, config)?;
        current = next;
        stages.push(trace);
        stage_maps.push(current.clone());
    }
    Ok((
        current,
        InversionTrace {
            stages,
            stage_maps,
            wall_time: t0.elapsed(),
        },
    ))
}

/// Constant map at the minimum velocity of the surface row.
pub fn initial_homogeneous(truth: &VelocityMap) -> VelocityMap {
    let v0 = truth
        .values
        .row(0)
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    VelocityMap::constant(truth.nz(), truth.nx(), truth.dx, v0)
        .expect("surface velocity of a valid map is valid")
}

/// Velocity growing linearly with depth from `vtop` at row 0 to `vbottom`
/// at the last row, constant across x.
pub fn initial_linear(
    vtop: f64,
    vbottom: f64,
    nz: usize,
    nx: usize,
    dx: f64,
) -> Result<VelocityMap> {
    if !(vbottom >= vtop) {
        return Err(Error::InvalidRange {
            lo: vtop,
            hi: vbottom,
        });
    }
    if nz < 2 {
        return Err(Error::config(format!("need at least 2 rows, got {nz}")));
    }
    let values = Array2::from_shape_fn((nz, nx), |(r, _)| {
        vtop + (vbottom - vtop) * r as f64 / (nz - 1) as f64
    });
    VelocityMap::new(values, dx)
}

/// Box mean filter of the ground truth with an odd kernel and edge
/// replication.
pub fn initial_smoothed(truth: &VelocityMap, kernel: usize) -> Result<VelocityMap> {
    if kernel < 3 || kernel % 2 == 0 {
        return Err(Error::config(format!(
            "smoothing kernel must be odd and at least 3, got {kernel}"
        )));
    }
    let (nz, nx) = (truth.nz(), truth.nx());
    let half = (kernel / 2) as i64;
    let values = Array2::from_shape_fn((nz, nx), |(i, j)| {
        let mut acc = 0.0;
        for di in -half..=half {
            for dj in -half..=half {
                let ii = (i as i64 + di).clamp(0, nz as i64 - 1) as usize;
                let jj = (j as i64 + dj).clamp(0, nx as i64 - 1) as usize;
                acc += truth.values[[ii, jj]];
            }
        }
        acc / (kernel * kernel) as f64
    });
    VelocityMap::new(values, truth.dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridPos;
    use crate::sim::forward_model;
    use ndarray::Array3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn toy_geom(_nz: usize, nx: usize, nt: usize) -> AcquisitionGeometry {
        AcquisitionGeometry {
            sources: vec![GridPos::new(nx / 2, 1)],
            receivers: (0..nx).map(|x| GridPos::new(x, 1)).collect(),
            source_freq: 15.0,
            dt: 1e-3,
            nt_sim: nt,
            nt_stored: nt,
            nbc: 12,
            sponge_decay: 3.0,
            source_gain: 1.0,
        }
    }

    fn two_layer_map(nz: usize, nx: usize, v_top: f64, v_bottom: f64) -> VelocityMap {
        let values = Array2::from_shape_fn((nz, nx), |(i, _)| {
            if i < nz / 2 {
                v_top
            } else {
                v_bottom
            }
        });
        VelocityMap::new(values, 10.0).unwrap()
    }

    #[test]
    fn misfit_basics_and_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = SeismicGather {
            traces: Array3::from_shape_fn((2, 10, 3), |_| rng.random_range(-1.0..1.0)),
            dt: 1e-3,
        };
        let b = SeismicGather {
            traces: Array3::from_shape_fn((2, 10, 3), |_| rng.random_range(-1.0..1.0)),
            dt: 1e-3,
        };
        assert_eq!(misfit_l2(&a, &a).unwrap(), 0.0);

        let ones = SeismicGather {
            traces: Array3::from_elem((2, 10, 3), 1.0),
            dt: 1e-3,
        };
        let zeros = SeismicGather {
            traces: Array3::zeros((2, 10, 3)),
            dt: 1e-3,
        };
        assert_eq!(misfit_l2(&ones, &zeros).unwrap(), 30.0);

        let mut oracle = 0.0;
        for s in 0..2 {
            for k in 0..10 {
                for r in 0..3 {
                    let d = a.traces[[s, k, r]] - b.traces[[s, k, r]];
                    oracle += 0.5 * d * d;
                }
            }
        }
        assert!((misfit_l2(&a, &b).unwrap() - oracle).abs() < 1e-12);

        let short = SeismicGather {
            traces: Array3::zeros((2, 9, 3)),
            dt: 1e-3,
        };
        assert!(misfit_l2(&a, &short).is_err());
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let map = two_layer_map(16, 16, 1600.0, 2100.0);
        let geom = toy_geom(16, 16, 240);
        let w = RickerWavelet::standard(15.0, 1e-3, 240).unwrap();
        let obs = forward_model(&map, &geom, &w).unwrap();
        let obs_f = lowpass(&obs, 20.0).unwrap();
        let g = gradient_adjoint(&map, &geom, &w, &obs_f, 20.0).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    /// Central finite differences of the actual banded misfit, cell by
    /// cell, against the adjoint gradient.
    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        let truth = two_layer_map(20, 20, 1500.0, 2000.0);
        let mut start = initial_smoothed(&truth, 7).unwrap();
        start.values.mapv_inplace(|v| v + 30.0);
        let geom = toy_geom(20, 20, 300);
        let w = RickerWavelet::standard(15.0, 1e-3, 300).unwrap();
        let cutoff = 25.0;
        let obs_f = lowpass(&forward_model(&truth, &geom, &w).unwrap(), cutoff).unwrap();

        let grad = gradient_adjoint(&start, &geom, &w, &obs_f, cutoff).unwrap();
        let loss_at = |m: &VelocityMap| {
            misfit_l2(&lowpass(&forward_model(m, &geom, &w).unwrap(), cutoff).unwrap(), &obs_f)
                .unwrap()
        };

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = 1.0; // 1 m/s central difference
        let mut checked = 0;
        let mut passed = 0;
        while checked < 10 {
            let iz = rng.random_range(2..19usize);
            let ix = rng.random_range(1..19usize);
            checked += 1;
            let mut plus = start.clone();
            plus.values[[iz, ix]] += h;
            let mut minus = start.clone();
            minus.values[[iz, ix]] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let adj = grad[[iz, ix]];
            let denom = fd.abs().max(adj.abs()).max(1e-12);
            if (fd - adj).abs() / denom < 5e-2 {
                passed += 1;
            } else {
                eprintln!("cell ({iz},{ix}): fd {fd:.6e} vs adjoint {adj:.6e}");
            }
        }
        assert!(passed >= 9, "only {passed}/10 cells within tolerance");
    }

    #[test]
    fn gradient_is_linear_in_the_residual() {
        let map = two_layer_map(16, 16, 1600.0, 2100.0);
        let geom = toy_geom(16, 16, 200);
        let w = RickerWavelet::standard(15.0, 1e-3, 200).unwrap();
        let cutoff = 20.0;
        let pred_f = lowpass(&forward_model(&map, &geom, &w).unwrap(), cutoff).unwrap();

        // obs2 doubles the residual of obs1 against this map's prediction.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let noise = Array3::from_shape_fn(pred_f.traces.dim(), |_| rng.random_range(-0.1..0.1));
        let obs1 = SeismicGather {
            traces: &pred_f.traces - &noise,
            dt: geom.dt,
        };
        let obs2 = SeismicGather {
            traces: &pred_f.traces - &(2.0 * &noise),
            dt: geom.dt,
        };
        let g1 = gradient_adjoint(&map, &geom, &w, &obs1, cutoff).unwrap();
        let g2 = gradient_adjoint(&map, &geom, &w, &obs2, cutoff).unwrap();
        let scale = g1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(scale > 0.0);
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((2.0 * a - b).abs() <= 1e-9 * scale);
        }
    }

    /// Analytic diagonal quadratic: CG must hit the minimizer fast.
    struct Quadratic {
        target: Array2<f64>,
        weights: Array2<f64>,
    }

    impl Objective for Quadratic {
        fn loss(&self, x: &Array2<f64>) -> Result<f64> {
            Ok(x.iter()
                .zip(self.target.iter())
                .zip(self.weights.iter())
                .map(|((x, t), w)| 0.5 * w * (x - t) * (x - t))
                .sum())
        }

        fn loss_grad(&self, x: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
            let g = Array2::from_shape_fn(x.dim(), |(i, j)| {
                self.weights[[i, j]] * (x[[i, j]] - self.target[[i, j]])
            });
            Ok((self.loss(x)?, g))
        }
    }

    fn wide_settings(max_iters: usize) -> CgSettings {
        CgSettings {
            max_iters,
            stop_rel: 1e-12,
            initial_step: 50.0,
            max_halvings: 40,
            c1: 1e-4,
            bounds: (-1e9, 1e9),
        }
    }

    #[test]
    fn cg_solves_a_quadratic_to_high_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let target = Array2::from_shape_fn((6, 5), |_| rng.random_range(-40.0..40.0));
        let weights = Array2::from_shape_fn((6, 5), |_| rng.random_range(0.5..4.0));
        let q = Quadratic { target: target.clone(), weights };
        let x0 = Array2::zeros((6, 5));
        let out = minimize(&q, &x0, &wide_settings(50)).unwrap();
        let worst = out
            .x
            .iter()
            .zip(target.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-6, "worst coordinate error {worst}");
        for w in out.losses.windows(2) {
            assert!(w[1] <= w[0], "loss increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn cg_projects_onto_the_box() {
        let target = Array2::from_elem((4, 4), 100.0);
        let weights = Array2::from_elem((4, 4), 1.0);
        let q = Quadratic { target, weights };
        let mut s = wide_settings(50);
        s.bounds = (0.0, 30.0);
        let out = minimize(&q, &Array2::from_elem((4, 4), 10.0), &s).unwrap();
        // Minimizer of the constrained problem is the box face.
        for v in out.x.iter() {
            assert!((*v - 30.0).abs() < 1e-9);
        }
    }

    /// Loss that never improves: the line search must give up on iteration
    /// 0 and hand back the starting map with the stalled flag.
    struct Hostile;

    impl Objective for Hostile {
        fn loss(&self, _x: &Array2<f64>) -> Result<f64> {
            Ok(1.0)
        }

        fn loss_grad(&self, _x: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
            Ok((1.0, Array2::from_elem((3, 3), 1.0)))
        }
    }

    #[test]
    fn exhausted_line_search_on_first_iteration_stalls() {
        let x0 = Array2::from_elem((3, 3), 5.0);
        let out = minimize(&Hostile, &x0, &wide_settings(10)).unwrap();
        assert!(out.stalled);
        assert!(!out.converged);
        assert_eq!(out.x, x0);
        assert_eq!(out.losses, vec![1.0]);
    }

    #[test]
    fn observing_the_start_map_terminates_immediately() {
        let map = two_layer_map(16, 16, 1600.0, 2100.0);
        let geom = toy_geom(16, 16, 200);
        let w = RickerWavelet::standard(15.0, 1e-3, 200).unwrap();
        let obs = forward_model(&map, &geom, &w).unwrap();
        let mut config = InversionConfig::default();
        config.cutoffs = vec![10.0, 20.0];
        config.bounds = (1500.0, 4500.0);
        let (result, trace) = multiscale_fwi(&map, &obs, &geom, &w, &config).unwrap();
        assert_eq!(result.values, map.values);
        for stage in &trace.stages {
            assert_eq!(stage.losses, vec![0.0]);
            assert!(stage.converged);
        }
    }

    #[test]
    fn two_layer_inversion_reduces_loss_and_respects_bounds() {
        let truth = two_layer_map(16, 16, 1600.0, 2200.0);
        let start = initial_homogeneous(&truth);
        let geom = toy_geom(16, 16, 300);
        let w = RickerWavelet::standard(15.0, 1e-3, 300).unwrap();
        let obs = forward_model(&truth, &geom, &w).unwrap();
        let mut config = InversionConfig::default();
        config.cutoffs = vec![5.0, 15.0, 30.0];
        config.max_iters_per_stage = 6;
        config.bounds = (1500.0, 4500.0);

        let (result, trace) = multiscale_fwi(&start, &obs, &geom, &w, &config).unwrap();
        assert_eq!(trace.stages.len(), 3);
        // Compare start and result in the final band; stage losses live in
        // different bands and are not comparable across stages.
        let band = *config.cutoffs.last().unwrap();
        let obs_f = lowpass(&obs, band).unwrap();
        let loss_of = |m: &VelocityMap| {
            misfit_l2(&lowpass(&forward_model(m, &geom, &w).unwrap(), band).unwrap(), &obs_f)
                .unwrap()
        };
        let (first, last) = (loss_of(&start), loss_of(&result));
        assert!(
            last < first,
            "loss did not drop: {first} -> {last}"
        );
        for stage in &trace.stages {
            for w in stage.losses.windows(2) {
                assert!(w[1] <= w[0], "accepted loss increased within a stage");
            }
        }
        for v in result.values.iter() {
            assert!(*v >= 1500.0 && *v <= 4500.0);
        }
        // The stop rule: every stage either converged by the relative-loss
        // test or ran out of iterations.
        for stage in &trace.stages {
            if stage.converged && stage.losses.len() >= 2 {
                let n = stage.losses.len();
                let rel = (stage.losses[n - 2] - stage.losses[n - 1]).abs()
                    / stage.losses[n - 2].max(f64::MIN_POSITIVE);
                assert!(
                    rel < config.stop_rel_loss_change || stage.losses[n - 1] == 0.0,
                    "converged stage's final change {rel} above the stop threshold"
                );
            } else {
                assert!(stage.losses.len() <= config.max_iters_per_stage + 1);
            }
        }
    }

    /// Soft comparison, reported not asserted: multi-scale vs single-stage
    /// at the same total iteration budget.
    #[test]
    fn multiscale_vs_single_stage_report() {
        let truth = two_layer_map(16, 16, 1600.0, 2200.0);
        let start = initial_homogeneous(&truth);
        let geom = toy_geom(16, 16, 300);
        let w = RickerWavelet::standard(15.0, 1e-3, 300).unwrap();
        let obs = forward_model(&truth, &geom, &w).unwrap();

        let mut multi = InversionConfig::default();
        multi.cutoffs = vec![5.0, 15.0, 30.0];
        multi.max_iters_per_stage = 4;
        let mut single = multi.clone();
        single.cutoffs = vec![30.0];
        single.max_iters_per_stage = 12;

        let (_, tm) = multiscale_fwi(&start, &obs, &geom, &w, &multi).unwrap();
        let (_, ts) = multiscale_fwi(&start, &obs, &geom, &w, &single).unwrap();
        // Compare both at the 30 Hz band, where the losses are commensurate.
        let lm = *tm.stages.last().unwrap().losses.last().unwrap();
        let ls = *ts.stages.last().unwrap().losses.last().unwrap();
        println!(
            "multiscale 30 Hz loss {lm:.6e} vs single-stage {ls:.6e} ({})",
            if lm <= ls { "multiscale ahead" } else { "single-stage ahead" }
        );
    }

    #[test]
    fn trace_csv_has_a_row_per_loss() {
        let trace = InversionTrace {
            stages: vec![
                StageTrace {
                    cutoff: 1.0,
                    losses: vec![4.0, 2.0],
                    converged: false,
                    stalled: false,
                },
                StageTrace {
                    cutoff: 3.0,
                    losses: vec![2.0],
                    converged: true,
                    stalled: false,
                },
            ],
            stage_maps: Vec::new(),
            wall_time: Duration::from_secs(1),
        };
        let csv = trace.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "stage,cutoff_hz,iteration,loss");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,1,0,"));
        assert!(lines[3].starts_with("1,3,0,"));
    }

    #[test]
    fn initial_map_builders() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let vals = Array2::from_shape_fn((8, 6), |_| rng.random_range(1500.0..4500.0));
        let truth = VelocityMap::new(vals, 10.0).unwrap();

        let homo = initial_homogeneous(&truth);
        let surface_min = (0..6).map(|j| truth.values[[0, j]]).fold(f64::MAX, f64::min);
        assert!(homo.values.iter().all(|v| *v == surface_min));

        let lin = initial_linear(1500.0, 4500.0, 70, 70, 10.0).unwrap();
        assert_eq!(lin.values[[0, 0]], 1500.0);
        assert_eq!(lin.values[[69, 69]], 4500.0);
        assert!(lin.values[[34, 0]] < 3000.0 && lin.values[[35, 0]] > 3000.0);
        for j in 0..70 {
            for i in 1..70 {
                assert!(lin.values[[i, j]] >= lin.values[[i - 1, j]]);
            }
        }
        assert!(initial_linear(2000.0, 1500.0, 70, 70, 10.0).is_err());

        let c = VelocityMap::constant(5, 5, 10.0, 2500.0).unwrap();
        assert_eq!(initial_smoothed(&c, 3).unwrap().values, c.values);
        assert!(initial_smoothed(&c, 4).is_err());
        assert!(initial_smoothed(&c, 1).is_err());

        // 5x5 delta: kernel-3 mean spreads 1/9 over the 3x3 neighborhood.
        let mut delta = Array2::from_elem((5, 5), 1500.0);
        delta[[2, 2]] = 1509.0;
        let d = VelocityMap::new(delta, 10.0).unwrap();
        let sm = initial_smoothed(&d, 3).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expect = if (1..=3).contains(&i) && (1..=3).contains(&j) {
                    1501.0
                } else {
                    1500.0
                };
                assert!((sm.values[[i, j]] - expect).abs() < 1e-9, "({i},{j})");
            }
        }
        // Range containment for an arbitrary map.
        let sm2 = initial_smoothed(&truth, 5).unwrap();
        assert!(sm2.min_velocity() >= truth.min_velocity() - 1e-9);
        assert!(sm2.max_velocity() <= truth.max_velocity() + 1e-9);
    }

    #[test]
    fn config_validation_rejects_bad_schedules() {
        let mut c = InversionConfig::default();
        c.cutoffs = vec![];
        assert!(c.validate().is_err());
        c.cutoffs = vec![3.0, 3.0];
        assert!(c.validate().is_err());
        c.cutoffs = vec![5.0, 3.0];
        assert!(c.validate().is_err());
        c = InversionConfig::default();
        c.stop_rel_loss_change = 1.5;
        assert!(c.validate().is_err());
        c = InversionConfig::default();
        c.bounds = (4500.0, 1500.0);
        assert!(c.validate().is_err());
        assert!(InversionConfig::default().validate().is_ok());
    }
}
