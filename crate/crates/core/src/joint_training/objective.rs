use std::collections::HashMap;

use rayon::prelude::*;

use super::{LossWeights, RegularizerKind, TrainConfig};
use crate::autodiff::{Tape, Tensor, Var};
use crate::datasets::TimeSeries;
use crate::error::{Error, Result};
use crate::grid::{normalize, total_mass, ImageGrid, NormalizedMeasure};
use crate::models::{integrate_on_tape, Model, TapeModel};
use crate::ot::{barycenter_interp, barycenter_interp_warm, BarycenterState, SinkhornConfig};

fn ctx(what: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{what}: {m}")),
        other => other,
    }
}

/// Interior time inside interval `interval` of a group's time grid.
#[derive(Clone, Debug)]
struct Sample {
    interval: usize,
    /// Position within the interval, in (0, 1).
    tau: f64,
    /// Index of the sample time in the group's integration times.
    pos: usize,
    /// Index of `t + delta`, used by the image-space penalty.
    ahead: usize,
    /// Quadrature weight `dt_j / (S T)` divided by the number of series.
    weight: f64,
}

/// Series sharing one time grid, stacked frame-major (`row = j * b + i`).
#[derive(Clone, Debug)]
struct Group {
    series: Vec<usize>,
    frames: Tensor,
    nt: usize,
    times: Vec<f64>,
    frame_pos: Vec<usize>,
    samples: Vec<Sample>,
    delta: f64,
}

impl Group {
    fn b(&self) -> usize {
        self.series.len()
    }
}

/// Scalar handles of each objective term on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Terms {
    pub total: Var,
    pub dynamic: Var,
    pub static_recon: Var,
    pub consistency: Var,
    /// Unweighted temporal regularizer (zero for `RegularizerKind::None`).
    pub regularizer: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BaryStats {
    pub solves: usize,
    pub nonconverged: usize,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
struct Slot {
    state: BarycenterState,
    target: NormalizedMeasure,
}

/// Barycenter targets and warm starts keyed by (group, sample, series).
///
/// Targets are recomputed on every `refresh_every`-th objective evaluation
/// and reused in between; a frozen cache never recomputes stored targets.
#[derive(Clone, Debug)]
pub struct BaryCache {
    slots: HashMap<(usize, usize, usize), Slot>,
    refresh_every: Option<usize>,
    passes: usize,
}

impl Default for BaryCache {
    fn default() -> Self {
        Self::with_refresh(1)
    }
}

impl BaryCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_refresh(every: usize) -> Self {
        Self {
            slots: HashMap::new(),
            refresh_every: Some(every.max(1)),
            passes: 0,
        }
    }

    pub fn freeze(&mut self) {
        self.refresh_every = None;
    }

    /// Whether this pass recomputes existing targets.
    fn begin_pass(&mut self) -> bool {
        let refresh = match self.refresh_every {
            Some(k) => self.passes.is_multiple_of(k),
            None => false,
        };
        self.passes += 1;
        refresh
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// The full training objective over a fixed dataset.
#[derive(Clone, Debug)]
pub struct Objective {
    groups: Vec<Group>,
    dims: (usize, usize),
    weights: LossWeights,
    reg: RegularizerKind,
    ot: SinkhornConfig,
    ode_step: f64,
    n_frames: usize,
}

impl Objective {
    pub fn new(data: &[TimeSeries], cfg: &TrainConfig, ode_step: f64) -> Result<Self> {
        cfg.validate()?;
        let dims = data
            .first()
            .and_then(TimeSeries::dims)
            .ok_or_else(|| Error::InvalidConfig("training needs at least one nonempty series".into()))?;
        for s in data {
            match s.dims() {
                Some(d) if d == dims => {}
                Some(d) => {
                    return Err(Error::DimsMismatch {
                        expected: dims,
                        found: d,
                    })
                }
                None => return Err(Error::InvalidConfig("empty series in training data".into())),
            }
        }
        let mut by_times: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
        for (k, s) in data.iter().enumerate() {
            match by_times.iter_mut().find(|(t, _)| t.as_slice() == s.times()) {
                Some((_, members)) => members.push(k),
                None => by_times.push((s.times().to_vec(), vec![k])),
            }
        }
        let n_series = data.len() as f64;
        let per = cfg.intermediate_samples_per_interval;
        let groups = by_times
            .into_iter()
            .map(|(times, series)| {
                let t0 = times[0];
                let rel: Vec<f64> = times.iter().map(|t| t - t0).collect();
                let nt = rel.len();
                let mut data_rows = Vec::with_capacity(nt * series.len() * dims.0 * dims.1);
                for j in 0..nt {
                    for &i in &series {
                        data_rows.extend_from_slice(data[i].frames()[j].values());
                    }
                }
                let frames = Tensor::matrix(nt * series.len(), dims.0 * dims.1, data_rows)?;
                Ok(plan_group(series, frames, rel, per, n_series))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            groups,
            dims,
            weights: cfg.weights,
            reg: cfg.reg,
            ot: cfg.ot,
            ode_step,
            n_frames: data.iter().map(TimeSeries::len).sum(),
        })
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    /// Records every term on `tape`. Barycenter targets are constants.
    pub fn build<M: TapeModel>(
        &self,
        tape: &mut Tape,
        model: &M,
        cache: &mut BaryCache,
    ) -> Result<(Terms, BaryStats)> {
        let mut dynamic = Vec::new();
        let mut static_recon = Vec::new();
        let mut consistency = Vec::new();
        let mut reg = Vec::new();
        let mut stats = BaryStats::default();
        let refresh = cache.begin_pass();
        for (gi, g) in self.groups.iter().enumerate() {
            let b = g.b();
            let x = tape.constant(g.frames.clone());
            let z_enc = model.encode(tape, x).map_err(ctx("encoder"))?;
            let z0 = tape.slice(z_enc, 0, b)?;
            let states = integrate_on_tape(tape, model, z0, &g.times, self.ode_step)
                .map_err(ctx("latent trajectory"))?;
            let at_frames: Vec<Var> = g.frame_pos.iter().map(|&p| states[p]).collect();
            let traj = tape.concat(&at_frames)?;

            let dec_dyn = model.decode(tape, traj).map_err(ctx("dynamic reconstruction"))?;
            dynamic.push(sq_sum(tape, dec_dyn, x).map_err(ctx("dynamic reconstruction"))?);
            let dec_static = model.decode(tape, z_enc).map_err(ctx("static reconstruction"))?;
            static_recon.push(sq_sum(tape, dec_static, x).map_err(ctx("static reconstruction"))?);
            consistency.push(sq_sum(tape, traj, z_enc).map_err(ctx("latent consistency"))?);

            if g.nt >= 2 && self.reg != RegularizerKind::None {
                let r = self
                    .regularizer(tape, model, g, gi, &states, dec_dyn, cache, refresh, &mut stats)
                    .map_err(ctx("regularizer"))?;
                reg.push(r);
            }
        }
        let inv = 1.0 / self.n_frames as f64;
        let dynamic = scaled_total(tape, &dynamic, inv)?;
        let static_recon = scaled_total(tape, &static_recon, inv)?;
        let consistency = scaled_total(tape, &consistency, inv)?;
        let regularizer = scaled_total(tape, &reg, 1.0)?;

        let w = self.weights;
        let mut total = dynamic;
        for (term, weight) in [
            (static_recon, w.gamma1),
            (consistency, w.gamma2),
            (regularizer, w.lambda),
        ] {
            let t = tape.mul_scalar(term, weight)?;
            total = tape.add(total, t)?;
        }
        Ok((
            Terms {
                total,
                dynamic,
                static_recon,
                consistency,
                regularizer,
            },
            stats,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn regularizer<M: TapeModel>(
        &self,
        tape: &mut Tape,
        model: &M,
        g: &Group,
        gi: usize,
        states: &[Var],
        dec_dyn: Var,
        cache: &mut BaryCache,
        refresh: bool,
        stats: &mut BaryStats,
    ) -> Result<Var> {
        let b = g.b();
        let at: Vec<Var> = g.samples.iter().map(|s| states[s.pos]).collect();
        let zs = tape.concat(&at)?;
        let w: Vec<f64> = g
            .samples
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.weight, b))
            .collect();
        let w_col = tape.constant(Tensor::matrix(w.len(), 1, w)?);

        let rows = match self.reg {
            RegularizerKind::L2Latent => model.eval(tape, zs)?,
            RegularizerKind::L2Image => {
                let ahead: Vec<Var> = g.samples.iter().map(|s| states[s.ahead]).collect();
                let za = tape.concat(&ahead)?;
                let da = model.decode(tape, za)?;
                let d0 = model.decode(tape, zs)?;
                let diff = tape.sub(da, d0)?;
                tape.mul_scalar(diff, 1.0 / g.delta)?
            }
            RegularizerKind::Ot => {
                let pred = model.decode(tape, zs)?;
                let targets = self.ot_targets(tape.value(dec_dyn), g, gi, cache, refresh, stats)?;
                let bary = tape.constant(targets);
                let masses = tape.row_sums(dec_dyn)?;
                let mut cols = Vec::with_capacity(g.samples.len());
                for s in &g.samples {
                    let j = s.interval;
                    let m0 = tape.slice(masses, j * b, (j + 1) * b)?;
                    let m1 = tape.slice(masses, (j + 1) * b, (j + 2) * b)?;
                    let a = tape.mul_scalar(m0, 1.0 - s.tau)?;
                    let c = tape.mul_scalar(m1, s.tau)?;
                    cols.push(tape.add(a, c)?);
                }
                let s_col = tape.concat(&cols)?;
                let target = tape.mul_col(bary, s_col)?;
                tape.sub(pred, target)?
            }
            RegularizerKind::None => unreachable!("no regularizer rows"),
        };
        let sq = tape.square(rows)?;
        let per_row = tape.row_sums(sq)?;
        let weighted = tape.mul(per_row, w_col)?;
        tape.sum(weighted)
    }

    /// Unit-mass barycenter targets for every (sample, series) row.
    fn ot_targets(
        &self,
        dec_dyn: &Tensor,
        g: &Group,
        gi: usize,
        cache: &mut BaryCache,
        refresh: bool,
        stats: &mut BaryStats,
    ) -> Result<Tensor> {
        let b = g.b();
        let (h, w) = self.dims;
        let needs_solve = refresh
            || (0..g.samples.len()).any(|s| (0..b).any(|i| !cache.slots.contains_key(&(gi, s, i))));
        let endpoints: Vec<NormalizedMeasure> = if needs_solve {
            (0..g.nt * b)
                .map(|r| normalize(&ImageGrid::new(h, w, dec_dyn.row(r).to_vec())?))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let tasks: Vec<(usize, usize)> = (0..g.samples.len())
            .flat_map(|s| (0..b).map(move |i| (s, i)))
            .collect();
        let cfg = self.ot;
        let slots = &cache.slots;
        let solved: Vec<Option<Result<(Slot, bool, usize)>>> = tasks
            .par_iter()
            .map(|&(s, i)| {
                let key = (gi, s, i);
                if !refresh && slots.contains_key(&key) {
                    return None;
                }
                let sample = &g.samples[s];
                let j = sample.interval;
                let warm = slots.get(&key).map(|slot| &slot.state);
                let out = barycenter_interp_warm(
                    &endpoints[j * b + i],
                    &endpoints[(j + 1) * b + i],
                    sample.tau,
                    &cfg,
                    warm,
                );
                Some(out.map(|bc| {
                    (
                        Slot {
                            state: bc.state,
                            target: bc.measure,
                        },
                        bc.converged,
                        bc.iterations,
                    )
                }))
            })
            .collect();
        let mut data = Vec::with_capacity(tasks.len() * h * w);
        for (&(s, i), res) in tasks.iter().zip(solved) {
            if let Some(res) = res {
                let (slot, converged, iters) = res?;
                stats.solves += 1;
                stats.iterations += iters;
                if !converged {
                    stats.nonconverged += 1;
                }
                cache.slots.insert((gi, s, i), slot);
            }
            data.extend_from_slice(cache.slots[&(gi, s, i)].target.weights());
        }
        Tensor::matrix(tasks.len(), h * w, data)
    }
}

fn plan_group(
    series: Vec<usize>,
    frames: Tensor,
    rel: Vec<f64>,
    per: usize,
    n_series: f64,
) -> Group {
    let nt = rel.len();
    let span = rel[nt - 1];
    let min_dt = rel
        .windows(2)
        .map(|p| p[1] - p[0])
        .fold(f64::INFINITY, f64::min);
    let delta = if nt >= 2 { min_dt / (per + 1) as f64 } else { 0.0 };

    let mut raw: Vec<(usize, f64, f64, f64, f64)> = Vec::new();
    for j in 0..nt.saturating_sub(1) {
        let dt = rel[j + 1] - rel[j];
        for k in 1..=per {
            let tau = k as f64 / (per + 1) as f64;
            let t = rel[j] + tau * dt;
            raw.push((j, tau, t, t + delta, dt / (per as f64 * span) / n_series));
        }
    }
    let mut all: Vec<f64> = rel.clone();
    for r in &raw {
        all.push(r.2);
        all.push(r.3);
    }
    all.sort_by(f64::total_cmp);
    all.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs().max(1.0));
    let find = |t: f64| {
        all.iter()
            .position(|u| (u - t).abs() <= 1e-9 * t.abs().max(1.0))
            .expect("time present in union")
    };
    let frame_pos = rel.iter().map(|&t| find(t)).collect();
    let samples = raw
        .iter()
        .map(|&(interval, tau, t, ta, weight)| Sample {
            interval,
            tau,
            pos: find(t),
            ahead: find(ta),
            weight,
        })
        .collect();
    Group {
        series,
        frames,
        nt,
        frame_pos,
        samples,
        delta,
        times: all,
    }
}

fn sq_sum(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let s = tape.square(d)?;
    tape.sum(s)
}

fn scaled_total(tape: &mut Tape, parts: &[Var], scale: f64) -> Result<Var> {
    let Some((&first, rest)) = parts.split_first() else {
        return tape.constant_scalar(0.0);
    };
    let mut acc = first;
    for &p in rest {
        acc = tape.add(acc, p)?;
    }
    tape.mul_scalar(acc, scale)
}

/// Value of one objective term and its gradient per parameter (store order).
#[derive(Clone, Debug)]
pub struct LossEval {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
}

fn eval_term(
    model: &Model,
    data: &[TimeSeries],
    cfg: &TrainConfig,
    pick: impl Fn(&Tape, &Terms) -> Result<Var>,
) -> Result<LossEval> {
    let objective = Objective::new(data, cfg, model.arch.ode_step)?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let (terms, _) = objective.build(&mut tape, &bound, &mut BaryCache::new())?;
    let root = pick(&tape, &terms)?;
    let mut grads = tape.backward(root)?;
    Ok(LossEval {
        value: tape.value(root).item(),
        grads: bound
            .vars()
            .iter()
            .map(|v| grads.take(*v).unwrap_or_default())
            .collect(),
    })
}

/// `dynamic + gamma1 static + gamma2 consistency`, averaged over frames.
pub fn data_loss(model: &Model, data: &[TimeSeries], weights: &LossWeights) -> Result<LossEval> {
    let cfg = TrainConfig {
        weights: LossWeights {
            lambda: 0.0,
            ..*weights
        },
        reg: RegularizerKind::None,
        ..TrainConfig::default()
    };
    eval_term(model, data, &cfg, |_, t| Ok(t.total))
}

/// Unweighted transport regularizer with stop-gradient barycenter targets.
pub fn ot_regularizer(model: &Model, data: &[TimeSeries], cfg: &TrainConfig) -> Result<LossEval> {
    let cfg = TrainConfig {
        reg: RegularizerKind::Ot,
        ..cfg.clone()
    };
    eval_term(model, data, &cfg, |_, t| Ok(t.regularizer))
}

/// Unweighted latent-speed or image-speed penalty.
pub fn l2_regularizers(
    model: &Model,
    data: &[TimeSeries],
    kind: RegularizerKind,
    cfg: &TrainConfig,
) -> Result<LossEval> {
    if !matches!(kind, RegularizerKind::L2Latent | RegularizerKind::L2Image) {
        return Err(Error::InvalidConfig(format!(
            "{} is not an l2 regularizer",
            kind.as_str()
        )));
    }
    let cfg = TrainConfig {
        reg: kind,
        ..cfg.clone()
    };
    eval_term(model, data, &cfg, |_, t| Ok(t.regularizer))
}

/// `|| d_t - s(tau) B(n(d0), n(d1), tau) ||^2` for explicit frames.
pub fn interval_penalty(
    d0: &ImageGrid,
    d1: &ImageGrid,
    d_t: &ImageGrid,
    tau: f64,
    cfg: &SinkhornConfig,
) -> Result<f64> {
    let bary = barycenter_interp(&normalize(d0)?, &normalize(d1)?, tau, cfg)?;
    let s = super::mass_schedule(total_mass(d0), total_mass(d1), tau, 0.0, 1.0)?;
    Ok(d_t
        .values()
        .iter()
        .zip(bary.measure.weights())
        .map(|(v, b)| (v - s * b).powi(2))
        .sum())
}
