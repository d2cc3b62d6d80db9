use std::fs;
use std::path::{Path, PathBuf};

use otflow_core::autodiff::load_checkpoint;
use otflow_core::datasets::{
    generate_gaussian_series, load_dataset, subsample, write_dataset, TimeSeries,
};
use otflow_core::evaluation::{
    eval_dynamic, eval_static, interp_baselines, write_aggregate_csv, write_frame_csv,
    MetricReport, Protocol, SSIM_K1, SSIM_K2, SSIM_RANGE_FLOOR, SSIM_SIGMA, SSIM_WINDOW,
};
use otflow_core::grid::{total_mass, ImageGrid};
use otflow_core::joint_training::{run_training, RegularizerKind, TrainSummary};
use otflow_core::models::Model;
use otflow_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// Run metadata written next to the resolved config by `train`.
pub const RUN_INFO: &str = "run.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub data: PathBuf,
    pub regularizer: RegularizerKind,
}

#[derive(Clone, Debug, Serialize)]
struct SeriesStats {
    series_index: usize,
    frames: usize,
    train_frames: usize,
    mass_min: f64,
    mass_max: f64,
    mass_mean: f64,
}

pub fn cmd_generate(config: Option<&Path>, out: Option<&Path>) -> Result<Vec<TimeSeries>> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(out) = out {
        cfg.output = out.to_path_buf();
    }
    let cfg = cfg.resolve()?;
    let data = generate_gaussian_series(&cfg.dataset.generator)?;
    write_dataset(&cfg.output, &data)?;
    cfg.write(&cfg.output)?;
    Ok(data)
}

pub struct TrainArgs<'a> {
    pub config: Option<&'a Path>,
    pub data: &'a Path,
    pub out: Option<&'a Path>,
    pub reg: Option<RegularizerKind>,
    pub seed: Option<u64>,
}

pub fn cmd_train(args: TrainArgs<'_>) -> Result<(RunConfig, TrainSummary)> {
    let mut cfg = RunConfig::load(args.config)?;
    if let Some(out) = args.out {
        cfg.output = out.to_path_buf();
    }
    if let Some(reg) = args.reg {
        cfg.training.reg = reg;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let cfg = cfg.resolve()?;
    let data = load_dataset(args.data)?;
    let stride = cfg.dataset.subsample_stride;
    let train: Vec<TimeSeries> = data.iter().map(|s| subsample(s, stride).0).collect();

    let run = &cfg.output;
    cfg.write(run)?;
    let info = RunInfo {
        data: args.data.to_path_buf(),
        regularizer: cfg.training.reg,
    };
    fs::write(run.join(RUN_INFO), serde_json::to_string_pretty(&info)? + "\n")?;
    let stats: Vec<SeriesStats> = data
        .iter()
        .zip(&train)
        .enumerate()
        .map(|(i, (s, t))| {
            let masses: Vec<f64> = s.frames().iter().map(total_mass).collect();
            SeriesStats {
                series_index: i,
                frames: s.len(),
                train_frames: t.len(),
                mass_min: masses.iter().copied().fold(f64::INFINITY, f64::min),
                mass_max: masses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mass_mean: masses.iter().sum::<f64>() / masses.len() as f64,
            }
        })
        .collect();
    fs::write(run.join("data_stats.json"), serde_json::to_string_pretty(&stats)? + "\n")?;

    let mut model = Model::new(cfg.architecture.clone(), cfg.seed)?;
    let summary = run_training(&mut model, &train, &cfg.training, run)?;
    Ok((cfg, summary))
}

pub fn load_run_model(run: &Path) -> Result<(RunConfig, Model)> {
    let cfg = RunConfig::read_resolved(run)?;
    let params = load_checkpoint(&run.join("model.ckpt"))?;
    let model = Model::with_params(cfg.architecture.clone(), &params)?;
    Ok((cfg, model))
}

fn read_run_info(run: &Path) -> Result<RunInfo> {
    let path = run.join(RUN_INFO);
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.clone()),
        _ => Error::Io(e),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path,
        reason: e.to_string(),
    })
}

/// Paths of the per-frame and aggregate CSVs that `eval` writes.
pub fn eval_paths(run: &Path, protocol: Protocol) -> (PathBuf, PathBuf) {
    let tag = protocol.as_str();
    (
        run.join(format!("eval_{tag}_frames.csv")),
        run.join(format!("eval_{tag}_aggregate.csv")),
    )
}

pub fn cmd_eval(run: &Path, data_dir: &Path, protocol: Protocol) -> Result<MetricReport> {
    let (cfg, model) = load_run_model(run)?;
    let data = load_dataset(data_dir)?;
    let report = match protocol {
        Protocol::Static => eval_static(&model, &data)?,
        Protocol::Dynamic => eval_dynamic(&model, &data, None)?,
        Protocol::DynamicHeldout => {
            eval_dynamic(&model, &data, Some(cfg.dataset.subsample_stride))?
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "protocol {} is produced by `interpolate`, not `eval`",
                other.as_str()
            )))
        }
    };
    let dataset = data_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| data_dir.display().to_string());
    let reg = cfg.training.reg.as_str();
    let rows = [(reg, dataset.as_str(), &report)];
    let (frames_csv, aggregate_csv) = eval_paths(run, protocol);
    write_frame_csv(&frames_csv, &rows)?;
    write_aggregate_csv(&aggregate_csv, &rows)?;
    let meta = serde_json::json!({
        "protocol": protocol.as_str(),
        "regularizer": reg,
        "dataset": dataset,
        "frames": report.frames.len(),
        "mse_mean": report.mse_mean,
        "ssim_mean": report.ssim_mean,
        "ssim_std": report.ssim_std,
        "ssim": {
            "window": SSIM_WINDOW,
            "sigma": SSIM_SIGMA,
            "k1": SSIM_K1,
            "k2": SSIM_K2,
            "range_floor": SSIM_RANGE_FLOOR,
        },
    });
    fs::write(
        run.join(format!("eval_{}.json", protocol.as_str())),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Manifold,
    L2,
    W2,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Manifold => "manifold",
            Method::L2 => "l2",
            Method::W2 => "w2",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manifold" => Ok(Method::Manifold),
            "l2" => Ok(Method::L2),
            "w2" => Ok(Method::W2),
            _ => Err(Error::InvalidConfig(format!(
                "unknown interpolation method {s:?} (expected manifold, l2 or w2)"
            ))),
        }
    }
}

pub struct InterpArgs<'a> {
    pub run: &'a Path,
    pub data: Option<&'a Path>,
    pub series: usize,
    pub from: usize,
    pub to: usize,
    pub steps: usize,
    pub methods: &'a [Method],
}

/// Frames per method, in the order requested.
pub type InterpOutput = Vec<(Method, Vec<ImageGrid>)>;

/// Directory receiving the frames of one `interpolate` call.
pub fn interp_dir(run: &Path, series: usize, from: usize, to: usize) -> PathBuf {
    run.join("interp").join(format!("series_{series}_{from}_{to}"))
}

pub fn cmd_interpolate(args: InterpArgs<'_>) -> Result<InterpOutput> {
    let cfg = RunConfig::read_resolved(args.run)?;
    let data_dir = match args.data {
        Some(d) => d.to_path_buf(),
        None => read_run_info(args.run)?.data,
    };
    let data = load_dataset(&data_dir)?;
    let series = data.get(args.series).ok_or(Error::IndexOutOfRange {
        index: args.series,
        len: data.len(),
    })?;
    for idx in [args.from, args.to] {
        if idx >= series.len() {
            return Err(Error::IndexOutOfRange {
                index: idx,
                len: series.len(),
            });
        }
    }
    if args.from >= args.to {
        return Err(Error::InvalidConfig(format!(
            "--from {} must precede --to {}",
            args.from, args.to
        )));
    }
    if args.steps < 2 {
        return Err(Error::InvalidConfig("--steps must be at least 2".into()));
    }
    let (t0, t1) = (series.times()[args.from], series.times()[args.to]);
    let taus: Vec<f64> = (0..args.steps)
        .map(|k| k as f64 / (args.steps - 1) as f64)
        .collect();
    let (f0, f1) = (&series.frames()[args.from], &series.frames()[args.to]);

    let mut out: InterpOutput = Vec::new();
    let baselines = if args.methods.iter().any(|m| *m != Method::Manifold) {
        Some(interp_baselines(f0, f1, &taus, &cfg.evaluation.interp)?)
    } else {
        None
    };
    for &method in args.methods {
        let frames = match method {
            Method::Manifold => {
                let (_, model) = load_run_model(args.run)?;
                let z0 = model.encode(f0)?;
                let rel: Vec<f64> = taus.iter().map(|tau| tau * (t1 - t0)).collect();
                let traj = model.integrate(&z0, &rel)?;
                model.decode_batch(&traj.codes)?
            }
            Method::L2 => baselines.as_ref().expect("baselines computed").l2.clone(),
            Method::W2 => baselines.as_ref().expect("baselines computed").w2.clone(),
        };
        out.push((method, frames));
    }

    let dir = interp_dir(args.run, args.series, args.from, args.to);
    fs::create_dir_all(&dir)?;
    for (method, frames) in &out {
        for (k, f) in frames.iter().enumerate() {
            let stem = format!("{}_{k:03}", method.as_str());
            f.write_pgm(dir.join(format!("{stem}.pgm")))?;
            f.write_f32grid(dir.join(format!("{stem}.f32grid")))?;
        }
    }
    let times: Vec<f64> = taus.iter().map(|tau| t0 + tau * (t1 - t0)).collect();
    fs::write(
        dir.join("times.json"),
        serde_json::to_string_pretty(&times)? + "\n",
    )?;
    Ok(out)
}
