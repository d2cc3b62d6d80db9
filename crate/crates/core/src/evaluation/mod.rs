//! Reconstruction metrics, evaluation protocols and report files.

mod metrics;
mod protocols;

pub use metrics::{
    gaussian_taps, mse, ssim, ssim_range, SSIM_K1, SSIM_K2, SSIM_RANGE_FLOOR, SSIM_SIGMA,
    SSIM_WINDOW,
};
pub use protocols::{
    eval_dynamic, eval_static, interp_baselines, ode_refinement_error, trajectory_frames, write_aggregate_csv,
    write_frame_csv, FrameMetric, InterpFrames, MetricReport, Protocol,
};
