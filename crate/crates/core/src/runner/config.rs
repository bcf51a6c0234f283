use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::{EncoderKind, SacConfig};
use crate::channel::{LinkBudgetConfig, RainModel};
use crate::constellation::ConstellationConfig;
use crate::env::{EnvConfig, RetrievalScope, RewardConfig};
use crate::netgraph::GraphParams;
use crate::workload::CatalogConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Soft actor-critic on message-passing embeddings.
    Gtsac,
    /// Soft actor-critic without the graph encoder, fetching from neighbors only.
    SacNeighbor,
    /// Cache the most requested contents of the previous slot.
    Pcf,
    /// No caching; everything comes from the ground cloud.
    Cloud,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Gtsac, Scheme::SacNeighbor, Scheme::Pcf, Scheme::Cloud];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Gtsac => "gtsac",
            Scheme::SacNeighbor => "sac_neighbor",
            Scheme::Pcf => "pcf",
            Scheme::Cloud => "cloud",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Scheme::Gtsac | Scheme::SacNeighbor)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown scheme {s:?}; expected gtsac, sac_neighbor, pcf or cloud")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub scheme: Scheme,
    pub capacity: usize,
    pub requests_per_sat: usize,
    pub episodes: usize,
    #[serde(default = "default_slots")]
    pub slots_per_episode: usize,
    #[serde(default = "default_slot_seconds")]
    pub slot_seconds: f64,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_slots() -> usize {
    50
}

fn default_slot_seconds() -> f64 {
    5.0
}

fn default_eval_episodes() -> usize {
    10
}

/// Full description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub constellation: ConstellationConfig,
    #[serde(default)]
    pub link: LinkBudgetConfig,
    #[serde(default)]
    pub rain: RainModel,
    #[serde(default)]
    pub catalog: CatalogConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub sac: SacConfig,
    #[serde(default)]
    pub graph: GraphParams,
    pub experiment: ExperimentSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        self.sac.validate()?;
        let exp = &self.experiment;
        if exp.episodes == 0 && exp.eval_episodes == 0 {
            return Err(Error::validation("experiment.episodes", "nothing to run"));
        }
        if let Some(r) = self.graph.max_isl_range_km {
            if !(r > 0.0) {
                return Err(Error::validation("graph.max_isl_range_km", "must be > 0"));
            }
        }
        if self.graph.regions.lat_bands == 0 || self.graph.regions.lon_sectors == 0 {
            return Err(Error::validation("graph.regions", "needs at least one band and sector"));
        }
        self.env_config()?.validate()
    }

    /// Environment for this run's scheme.
    pub fn env_config(&self) -> Result<EnvConfig> {
        let exp = &self.experiment;
        let mut graph = self.graph.clone();
        graph.requests_per_sat = exp.requests_per_sat.max(1);
        Ok(EnvConfig {
            constellation: self.constellation.clone(),
            budget: self.link.to_budget(),
            rain: self.rain.clone(),
            user_elevation_deg: self.link.user_elevation_deg,
            catalog: self.catalog.to_catalog()?,
            capacity: exp.capacity,
            requests_per_sat: exp.requests_per_sat,
            slot_seconds: exp.slot_seconds,
            slots_per_episode: exp.slots_per_episode,
            graph,
            reward: self.reward.clone(),
            retrieval: match exp.scheme {
                Scheme::SacNeighbor => RetrievalScope::OneHop,
                _ => RetrievalScope::Network,
            },
        })
    }

    /// Learner settings with the encoder implied by the scheme.
    pub fn sac_config(&self) -> SacConfig {
        let mut sac = self.sac.clone();
        sac.encoder = match self.experiment.scheme {
            Scheme::SacNeighbor => EncoderKind::Flat,
            _ => EncoderKind::Mpnn,
        };
        sac
    }
}

/// Reads, parses and validates a TOML experiment file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_toml(&text, path)
}
