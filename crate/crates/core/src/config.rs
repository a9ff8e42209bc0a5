use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boundary::{BoundaryConfig, RefineVariant};
use crate::error::{Error, Result};
use crate::fusion::FusionVariant;
use crate::losses::{LossWeights, Reduction};
use crate::maps::DEFAULT_IGNORE_LABEL;
use crate::window::WindowSize;

impl std::str::FromStr for FusionVariant {
    type Err = Error;

    /// `v2` for adaptive thresholds, `fixed:THETA` for a single threshold.
    fn from_str(s: &str) -> Result<Self> {
        let variant = match s {
            "v2" | "ctcfv2" | "adaptive" => FusionVariant::Adaptive,
            _ => {
                let theta =
                    s.strip_prefix("fixed:").ok_or_else(|| Error::Config(format!("unknown fusion variant {s:?}")))?;
                let theta = theta.parse::<f64>().map_err(|_| Error::Config(format!("bad fixed theta {theta:?}")))?;
                FusionVariant::FixedTheta(theta)
            }
        };
        variant.validate()?;
        Ok(variant)
    }
}

/// Settings shared by every subcommand. Loaded from JSON; missing fields
/// take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub h_window: WindowSize,
    pub v_window: WindowSize,
    pub alpha: f64,
    pub lambda: f64,
    pub snap_radius: usize,
    pub num_classes: Option<usize>,
    pub ignore_label: u8,
    pub sum_mode: bool,
    pub be_variant: RefineVariant,
    pub ctcf_variant: FusionVariant,
    /// Consistency loss on raw logits instead of probabilities.
    pub cc_on_logits: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            h_window: WindowSize::new(400, 256),
            v_window: WindowSize::new(200, 512),
            alpha: 0.3,
            lambda: 0.2,
            snap_radius: 5,
            num_classes: None,
            ignore_label: DEFAULT_IGNORE_LABEL,
            sum_mode: false,
            be_variant: RefineVariant::V2,
            ctcf_variant: FusionVariant::Adaptive,
            cc_on_logits: false,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.boundary().validate()?;
        self.weights().validate()?;
        self.ctcf_variant.validate()?;
        if let Some(c) = self.num_classes {
            if !(1..=255).contains(&c) {
                return Err(Error::Config(format!("num_classes must be in 1..=255, got {c}")));
            }
        }
        Ok(())
    }

    pub fn boundary(&self) -> BoundaryConfig {
        BoundaryConfig { alpha: self.alpha, snap_radius: self.snap_radius }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { lambda: self.lambda }
    }

    pub fn reduction(&self) -> Reduction {
        if self.sum_mode {
            Reduction::Sum
        } else {
            Reduction::Mean
        }
    }

    /// Fails when a declared class count disagrees with the data.
    pub fn check_classes(&self, found: usize) -> Result<()> {
        match self.num_classes {
            Some(c) if c != found => {
                Err(Error::DimensionMismatch(format!("configured for {c} classes but inputs have {found}")))
            }
            _ => Ok(()),
        }
    }
}
