//! Joint objective over encoder, decoder and latent field, and the training loop.

mod objective;
mod train;

use serde::{Deserialize, Serialize};

pub use objective::{
    data_loss, interval_penalty, l2_regularizers, ot_regularizer, BaryCache, BaryStats,
    LossEval, Objective, Terms,
};
pub use train::{run_training, train, EpochRecord, TrainSummary};

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::ot::SinkhornConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Static reconstruction.
    pub gamma1: f64,
    /// Latent consistency.
    pub gamma2: f64,
    /// Temporal regularizer.
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma1: 1.0,
            gamma2: 1.0,
            lambda: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("lambda", self.lambda),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegularizerKind {
    #[serde(rename = "ot")]
    Ot,
    #[serde(rename = "l2-latent")]
    L2Latent,
    #[serde(rename = "l2-image")]
    L2Image,
    #[serde(rename = "none")]
    None,
}

impl RegularizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RegularizerKind::Ot => "ot",
            RegularizerKind::L2Latent => "l2-latent",
            RegularizerKind::L2Image => "l2-image",
            RegularizerKind::None => "none",
        }
    }
}

impl std::str::FromStr for RegularizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ot" => Ok(Self::Ot),
            "l2-latent" => Ok(Self::L2Latent),
            "l2-image" => Ok(Self::L2Image),
            "none" => Ok(Self::None),
            other => Err(Error::InvalidConfig(format!(
                "unknown regularizer {other:?} (expected ot, l2-latent, l2-image or none)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Seeds parameter initialization.
    pub seed: u64,
    pub weights: LossWeights,
    pub reg: RegularizerKind,
    /// Barycenter settings for the transport regularizer.
    pub ot: SinkhornConfig,
    pub intermediate_samples_per_interval: usize,
    /// Barycenter targets are recomputed every this many epochs.
    pub target_refresh_every: usize,
    pub optimizer: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            seed: 0,
            weights: LossWeights::default(),
            reg: RegularizerKind::Ot,
            ot: SinkhornConfig {
                max_iters: 30,
                ..SinkhornConfig::barycenter_for_grid(32, 32, 1.0)
            },
            intermediate_samples_per_interval: 3,
            target_refresh_every: 5,
            optimizer: AdamConfig {
                lr: 2e-3,
                ..AdamConfig::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.intermediate_samples_per_interval == 0 {
            return Err(Error::InvalidConfig(
                "intermediate_samples_per_interval must be at least 1".into(),
            ));
        }
        if self.target_refresh_every == 0 {
            return Err(Error::InvalidConfig("target_refresh_every must be at least 1".into()));
        }
        self.weights.validate()?;
        self.ot.validate()?;
        self.optimizer.validate()
    }
}

/// Linear interpolation of the endpoint masses `m0` at `t0` and `m1` at `t1`.
pub fn mass_schedule(m0: f64, m1: f64, t: f64, t0: f64, t1: f64) -> Result<f64> {
    if !(t0 < t1 && t0 <= t && t <= t1) {
        return Err(Error::OutOfInterval { t, t0, t1 });
    }
    let tau = (t - t0) / (t1 - t0);
    Ok((1.0 - tau) * m0 + tau * m1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_schedule_cases() {
        assert_eq!(mass_schedule(2.0, 4.0, 1.0, 1.0, 3.0).unwrap(), 2.0);
        assert_eq!(mass_schedule(2.0, 4.0, 1.5, 1.0, 3.0).unwrap(), 2.5);
        for t in [0.0, 0.3, 0.9, 1.0] {
            assert_eq!(mass_schedule(1.75, 1.75, t, 0.0, 1.0).unwrap(), 1.75);
        }
        assert!(matches!(
            mass_schedule(1.0, 2.0, 3.5, 1.0, 3.0),
            Err(Error::OutOfInterval { .. })
        ));
        assert!(mass_schedule(1.0, 2.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn regularizer_names_round_trip() {
        for k in [
            RegularizerKind::Ot,
            RegularizerKind::L2Latent,
            RegularizerKind::L2Image,
            RegularizerKind::None,
        ] {
            assert_eq!(k.as_str().parse::<RegularizerKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.as_str()));
        }
        assert!("l2".parse::<RegularizerKind>().is_err());
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
