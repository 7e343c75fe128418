//! Run configuration: a TOML file with per-module sections.
//!
//! Precedence is CLI flags over file values over the defaults below; the
//! CLI applies its overrides onto the parsed [`RunConfig`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::AlignConfig;
use crate::barycenter::BarycenterConfig;
use crate::error::{Error, Result};
use crate::image::MeasureSpec;
use crate::learner::TrainConfig;
use crate::sinkhorn::{SinkhornConfig, LOG_DOMAIN_THRESHOLD};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornSection {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Defaults to automatic (on when `epsilon < 1e-2`).
    pub log_domain: Option<bool>,
}

impl Default for SinkhornSection {
    fn default() -> Self {
        let d = SinkhornConfig::default();
        Self {
            epsilon: d.epsilon,
            max_iterations: d.max_iterations,
            tolerance: d.tolerance,
            log_domain: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarycenterSection {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub weight_agents_by_size: bool,
}

impl Default for BarycenterSection {
    fn default() -> Self {
        let d = BarycenterConfig::default();
        Self {
            epsilon: d.epsilon,
            max_iterations: d.max_iterations,
            tolerance: d.tolerance,
            weight_agents_by_size: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureSection {
    /// `subsample` or `histogram`.
    pub mode: String,
    pub subsample_count: usize,
    pub bins: usize,
}

impl Default for MeasureSection {
    fn default() -> Self {
        Self {
            mode: "subsample".into(),
            subsample_count: 250,
            bins: 256,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub n_agents: usize,
    pub participants_per_round: usize,
    /// Defaults to the 2-vs-5 rule (2 when P == N, else 5).
    pub local_epochs: Option<usize>,
    pub rounds: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden_units: usize,
    pub n_classes: usize,
    /// Held-out fraction when no explicit test set is given.
    pub test_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            n_agents: 5,
            participants_per_round: 5,
            local_epochs: None,
            rounds: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            hidden_units: 64,
            n_classes: 10,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub sinkhorn: SinkhornSection,
    pub barycenter: BarycenterSection,
    pub measure: MeasureSection,
    pub train: TrainSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sinkhorn_config().validate()?;
        self.barycenter_config().validate(1)?;
        self.measure_spec()?.validate()?;
        let t = &self.train;
        TrainConfig {
            n_agents: t.n_agents,
            participants_per_round: t.participants_per_round,
            local_epochs: t.local_epochs.unwrap_or(2),
            rounds: t.rounds,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            hidden_units: t.hidden_units,
            n_classes: t.n_classes,
            seed: self.seed,
        }
        .validate()?;
        if !(t.test_fraction > 0.0 && t.test_fraction < 1.0) {
            return Err(Error::validation(format!(
                "test_fraction must be in (0, 1), got {}",
                t.test_fraction
            )));
        }
        Ok(())
    }

    pub fn sinkhorn_config(&self) -> SinkhornConfig {
        SinkhornConfig {
            epsilon: self.sinkhorn.epsilon,
            max_iterations: self.sinkhorn.max_iterations,
            tolerance: self.sinkhorn.tolerance,
            log_domain: self
                .sinkhorn
                .log_domain
                .unwrap_or(self.sinkhorn.epsilon < LOG_DOMAIN_THRESHOLD),
        }
    }

    pub fn barycenter_config(&self) -> BarycenterConfig {
        BarycenterConfig {
            epsilon: self.barycenter.epsilon,
            weights: None,
            max_iterations: self.barycenter.max_iterations,
            tolerance: self.barycenter.tolerance,
        }
    }

    pub fn measure_spec(&self) -> Result<MeasureSpec> {
        match self.measure.mode.as_str() {
            "subsample" => Ok(MeasureSpec::Subsample {
                count: self.measure.subsample_count,
            }),
            "histogram" => Ok(MeasureSpec::Histogram {
                bins: self.measure.bins,
            }),
            other => Err(Error::validation(format!(
                "measure.mode must be subsample or histogram, got {other:?}"
            ))),
        }
    }

    pub fn align_config(&self) -> Result<AlignConfig> {
        Ok(AlignConfig {
            measure: self.measure_spec()?,
            sinkhorn: self.sinkhorn_config(),
            barycenter: self.barycenter_config(),
            weight_agents_by_size: self.barycenter.weight_agents_by_size,
            seed: self.seed,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            n_agents: t.n_agents,
            participants_per_round: t.participants_per_round,
            local_epochs: t.local_epochs.unwrap_or(if t.participants_per_round == t.n_agents {
                2
            } else {
                5
            }),
            rounds: t.rounds,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            hidden_units: t.hidden_units,
            n_classes: t.n_classes,
            seed: self.seed,
        }
    }
}
