//! fwi-forge: synthesize subsurface velocity models, simulate seismic shot
//! gathers over them with an acoustic finite-difference engine, score map
//! complexity, package everything as training-ready `.npy` datasets, and
//! invert gathers back to velocity with multi-scale full waveform inversion.

pub mod complexity;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod invert;
pub mod metrics;
pub mod sim;
pub mod synth;

pub use complexity::{
    complexity_report, complexity_report_with, gradient_sparsity_index, map_complexity,
    shannon_entropy, sobel_gradients, spatial_information, ComplexityOptions, ComplexityReport,
    MapComplexity,
};
pub use dataset::{
    load_pairs, pack_dataset, read_npy, write_npy, DatasetLayout, Manifest, NamingScheme,
};
pub use error::{Error, Result};
pub use grid::{
    minmax_denormalize, minmax_normalize, unit_normalize, AcquisitionGeometry, GridPos,
    SeismicGather, VelocityMap, SEISMIC_RANGE, VELOCITY_RANGE,
};
pub use invert::{
    cg_stage, gradient_adjoint, initial_homogeneous, initial_linear, initial_smoothed, lowpass,
    misfit_l2, multiscale_fwi, InversionConfig, InversionTrace, StageTrace,
};
pub use metrics::{mae, rmse, ssim, ssim_with_range, MetricReport, SsimScore};
pub use sim::{
    check_stability, forward_model, pad_with_sponge, propagate_shot, ricker, PaddedModel,
    RickerWavelet, Wavefield, COURANT_BOUND,
};

// The guide's code listings run as doc-tests so the book cannot drift from
// the library. mdbook on its own cannot compile snippets against external
// crates, so the chapters are included here for `cargo test --doc`.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../README.md")]
    pub mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/synthesis.md")]
    pub mod synthesis {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    pub mod simulation {}
    #[doc = include_str!("../../../book/src/complexity.md")]
    pub mod complexity {}
    #[doc = include_str!("../../../book/src/inversion.md")]
    pub mod inversion {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    pub mod datasets {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
