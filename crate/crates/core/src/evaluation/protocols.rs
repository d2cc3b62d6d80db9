use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{mse, ssim};
use crate::datasets::{subsample_indices, TimeSeries};
use crate::error::{Error, Result};
use crate::grid::{normalize, scale, total_mass, ImageGrid};
use crate::joint_training::mass_schedule;
use crate::models::Model;
use crate::ot::{barycenter_interp, SinkhornConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "static")]
    Static,
    #[serde(rename = "dynamic")]
    Dynamic,
    #[serde(rename = "dynamic-heldout")]
    DynamicHeldout,
    #[serde(rename = "interp-l2")]
    InterpL2,
    #[serde(rename = "interp-w2")]
    InterpW2,
    #[serde(rename = "interp-manifold")]
    InterpManifold,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Static => "static",
            Protocol::Dynamic => "dynamic",
            Protocol::DynamicHeldout => "dynamic-heldout",
            Protocol::InterpL2 => "interp-l2",
            Protocol::InterpW2 => "interp-w2",
            Protocol::InterpManifold => "interp-manifold",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Protocol::Static,
            Protocol::Dynamic,
            Protocol::DynamicHeldout,
            Protocol::InterpL2,
            Protocol::InterpW2,
            Protocol::InterpManifold,
        ]
        .into_iter()
        .find(|p| p.as_str() == s)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown protocol {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetric {
    pub series_index: usize,
    pub frame_index: usize,
    pub mse: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub protocol: Protocol,
    pub frames: Vec<FrameMetric>,
    pub mse_mean: f64,
    pub ssim_mean: f64,
    /// Population standard deviation of the per-frame SSIM.
    pub ssim_std: f64,
}

impl MetricReport {
    /// Aggregates are NaN for an empty frame list.
    pub fn new(protocol: Protocol, frames: Vec<FrameMetric>) -> Self {
        let n = frames.len() as f64;
        let mse_mean = frames.iter().map(|f| f.mse).sum::<f64>() / n;
        let ssim_mean = frames.iter().map(|f| f.ssim).sum::<f64>() / n;
        let var = frames
            .iter()
            .map(|f| (f.ssim - ssim_mean).powi(2))
            .sum::<f64>()
            / n;
        Self {
            protocol,
            frames,
            mse_mean,
            ssim_mean,
            ssim_std: var.sqrt(),
        }
    }
}

fn frame_metric(series_index: usize, frame_index: usize, a: &ImageGrid, b: &ImageGrid) -> Result<FrameMetric> {
    Ok(FrameMetric {
        series_index,
        frame_index,
        mse: mse(a, b)?,
        ssim: ssim(a, b)?,
    })
}

/// `decode(encode(I))` against `I` for every frame.
pub fn eval_static(model: &Model, data: &[TimeSeries]) -> Result<MetricReport> {
    let mut out = Vec::new();
    for (i, s) in data.iter().enumerate() {
        let frames: Vec<&ImageGrid> = s.frames().iter().collect();
        let codes = model.encode_batch(&frames)?;
        let recon = model.decode_batch(&codes)?;
        for (j, (r, f)) in recon.iter().zip(s.frames()).enumerate() {
            out.push(frame_metric(i, j, r, f)?);
        }
    }
    Ok(MetricReport::new(Protocol::Static, out))
}

/// Decoded trajectory from each series' first frame, at every frame time.
pub fn trajectory_frames(model: &Model, series: &TimeSeries) -> Result<Vec<ImageGrid>> {
    let first = series
        .frames()
        .first()
        .ok_or_else(|| Error::InvalidConfig("empty series".into()))?;
    let z0 = model.encode(first)?;
    let t0 = series.times()[0];
    let rel: Vec<f64> = series.times().iter().map(|t| t - t0).collect();
    let traj = model.integrate(&z0, &rel)?;
    model.decode_batch(&traj.codes)
}

/// Dynamic reconstruction on all frames, or with `heldout_stride` only on
/// the frames that stride subsampling removed.
pub fn eval_dynamic(
    model: &Model,
    data: &[TimeSeries],
    heldout_stride: Option<usize>,
) -> Result<MetricReport> {
    let mut out = Vec::new();
    for (i, s) in data.iter().enumerate() {
        let recon = trajectory_frames(model, s)?;
        let idx: Vec<usize> = match heldout_stride {
            Some(stride) => subsample_indices(s.len(), stride).1,
            None => (0..s.len()).collect(),
        };
        for j in idx {
            out.push(frame_metric(i, j, &recon[j], &s.frames()[j])?);
        }
    }
    let protocol = if heldout_stride.is_some() {
        Protocol::DynamicHeldout
    } else {
        Protocol::Dynamic
    };
    Ok(MetricReport::new(protocol, out))
}

/// Largest l-infinity change of latent states at frame times when the ODE
/// step is halved.
pub fn ode_refinement_error(model: &Model, data: &[TimeSeries]) -> Result<f64> {
    let mut fine = model.clone();
    fine.arch.ode_step *= 0.5;
    let mut worst: f64 = 0.0;
    for s in data {
        let Some(first) = s.frames().first() else { continue };
        let z0 = model.encode(first)?;
        let t0 = s.times()[0];
        let rel: Vec<f64> = s.times().iter().map(|t| t - t0).collect();
        let a = model.integrate(&z0, &rel)?;
        let b = fine.integrate(&z0, &rel)?;
        for (x, y) in a.codes.iter().zip(&b.codes) {
            for (p, q) in x.values().iter().zip(y.values()) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterpFrames {
    pub l2: Vec<ImageGrid>,
    pub w2: Vec<ImageGrid>,
}

/// Euclidean and mass-scaled Wasserstein interpolation at each `t` in `[0, 1]`.
pub fn interp_baselines(
    frame0: &ImageGrid,
    frame1: &ImageGrid,
    ts: &[f64],
    cfg: &SinkhornConfig,
) -> Result<InterpFrames> {
    if frame0.dims() != frame1.dims() {
        return Err(Error::DimsMismatch {
            expected: frame0.dims(),
            found: frame1.dims(),
        });
    }
    let (h, w) = frame0.dims();
    let (n0, n1) = (normalize(frame0)?, normalize(frame1)?);
    let (m0, m1) = (total_mass(frame0), total_mass(frame1));
    let mut out = InterpFrames {
        l2: Vec::with_capacity(ts.len()),
        w2: Vec::with_capacity(ts.len()),
    };
    for &t in ts {
        let s = mass_schedule(m0, m1, t, 0.0, 1.0)?;
        let v = frame0
            .values()
            .iter()
            .zip(frame1.values())
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        out.l2.push(ImageGrid::from_clamped(h, w, v)?);
        let bary = barycenter_interp(&n0, &n1, t, cfg)?;
        out.w2.push(scale(&bary.measure, s)?);
    }
    Ok(out)
}

/// Per-frame rows: `protocol,regularizer,dataset,frame_index,series_index,mse,ssim`.
pub fn write_frame_csv(path: &Path, rows: &[(&str, &str, &MetricReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "protocol",
        "regularizer",
        "dataset",
        "frame_index",
        "series_index",
        "mse",
        "ssim",
    ])
    .map_err(csv_err)?;
    for (reg, dataset, report) in rows {
        for f in &report.frames {
            w.write_record([
                report.protocol.as_str().to_string(),
                reg.to_string(),
                dataset.to_string(),
                f.frame_index.to_string(),
                f.series_index.to_string(),
                f.mse.to_string(),
                f.ssim.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per report: `regularizer,dataset,mse_mean,ssim_mean,ssim_std`.
pub fn write_aggregate_csv(path: &Path, rows: &[(&str, &str, &MetricReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["regularizer", "dataset", "mse_mean", "ssim_mean", "ssim_std"])
        .map_err(csv_err)?;
    for (reg, dataset, report) in rows {
        w.write_record([
            reg.to_string(),
            dataset.to_string(),
            report.mse_mean.to_string(),
            report.ssim_mean.to_string(),
            report.ssim_std.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}
