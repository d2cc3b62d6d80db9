use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::objective::{BaryCache, Objective};
use super::TrainConfig;
use crate::autodiff::{adam_step, save_checkpoint, AdamState, Tape};
use crate::datasets::TimeSeries;
use crate::error::{Error, Result};
use crate::models::Model;

/// Loss terms evaluated at the parameters an epoch started from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub dynamic: f64,
    pub static_recon: f64,
    pub consistency: f64,
    /// Unweighted; enters the total multiplied by lambda.
    pub regularizer: f64,
    pub regularizer_kind: String,
    pub barycenter_solves: usize,
    pub barycenter_nonconverged: usize,
    pub barycenter_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub records: Vec<EpochRecord>,
    pub epoch_seconds: Vec<f64>,
}

/// Full-batch Adam on the joint objective. `on_epoch` sees every record,
/// the epoch's wall time and the updated model.
pub fn train(
    model: &mut Model,
    data: &[TimeSeries],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, f64, &Model) -> Result<()>,
) -> Result<TrainSummary> {
    let objective = Objective::new(data, cfg, model.arch.ode_step)?;
    let mut adam = AdamState::new(cfg.optimizer, &model.params);
    let mut cache = BaryCache::with_refresh(cfg.target_refresh_every);
    let mut summary = TrainSummary {
        records: Vec::with_capacity(cfg.epochs),
        epoch_seconds: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let (terms, stats) = objective.build(&mut tape, &bound, &mut cache)?;
        let mut grads = tape.backward(terms.total)?;
        let grads: Vec<Vec<f64>> = bound
            .vars()
            .iter()
            .map(|v| grads.take(*v).unwrap_or_default())
            .collect();
        for ((name, _), g) in model.params.iter().zip(&grads) {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name} at epoch {epoch}")));
            }
        }
        let value = |v| tape.value(v).item();
        let record = EpochRecord {
            epoch,
            total: value(terms.total),
            dynamic: value(terms.dynamic),
            static_recon: value(terms.static_recon),
            consistency: value(terms.consistency),
            regularizer: value(terms.regularizer),
            regularizer_kind: cfg.reg.as_str().to_string(),
            barycenter_solves: stats.solves,
            barycenter_nonconverged: stats.nonconverged,
            barycenter_iterations: stats.iterations,
        };
        drop(tape);
        adam_step(&mut model.params, &grads, &mut adam)?;
        let secs = start.elapsed().as_secs_f64();
        on_epoch(&record, secs, model)?;
        summary.records.push(record);
        summary.epoch_seconds.push(secs);
    }
    Ok(summary)
}

/// Trains and writes `log.jsonl`, `timing.jsonl` and `model.ckpt` into `out_dir`.
/// The log carries no wall times, so identical runs give identical logs.
pub fn run_training(
    model: &mut Model,
    data: &[TimeSeries],
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainSummary> {
    fs::create_dir_all(out_dir)?;
    let mut log = BufWriter::new(fs::File::create(out_dir.join("log.jsonl"))?);
    let mut timing = BufWriter::new(fs::File::create(out_dir.join("timing.jsonl"))?);
    let summary = train(model, data, cfg, |rec, secs, _| {
        writeln!(log, "{}", serde_json::to_string(rec)?)?;
        writeln!(
            timing,
            "{}",
            serde_json::json!({ "epoch": rec.epoch, "seconds": secs })
        )?;
        Ok(())
    })?;
    log.flush()?;
    timing.flush()?;
    save_checkpoint(&out_dir.join("model.ckpt"), &model.params)?;
    Ok(summary)
}
