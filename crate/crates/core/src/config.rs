//! Run configuration file (TOML).
//!
//! ```toml
//! shape = 2
//! sampler = "mcmc"
//! min_iets = 2
//! window = 121
//! seed = 7
//!
//! [anchor]
//! enabled = true
//! pse_agg = 0.3
//! sigma2 = 1.0
//!
//! [truncation]
//! tail_bound = 1e-9
//! max_terms = 512
//!
//! [mcmc]
//! iterations = 30000
//! burn_in = 10000
//! proposal_scale = 0.1
//!
//! [sgld]
//! batch_size = 200
//! step_size = 1e-4
//! ```
//!
//! Every key is optional. `seed`, when present, overrides the seeds of the
//! sampler, generator and suppression blocks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::{DEFAULT_MIN_IETS, DEFAULT_WINDOW};
use crate::likelihood::ModelSpec;
use crate::model::{AnchorSpec, TruncationPolicy};
use crate::samplers::{HierarchyPrior, McmcConfig, SamplerKind, SgldConfig};
use crate::sim::{GeneratorSpec, SuppressionSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub shape: u32,
    pub sampler: SamplerKind,
    pub min_iets: usize,
    pub window: u32,
    pub seed: Option<u64>,
    pub anchor: AnchorSpec,
    pub truncation: TruncationPolicy,
    pub prior: HierarchyPrior,
    pub mcmc: McmcConfig,
    pub sgld: SgldConfig,
    pub generator: GeneratorSpec,
    pub suppression: Option<SuppressionSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            shape: 2,
            sampler: SamplerKind::Mcmc,
            min_iets: DEFAULT_MIN_IETS,
            window: DEFAULT_WINDOW,
            seed: None,
            anchor: AnchorSpec::default(),
            truncation: TruncationPolicy::default(),
            prior: HierarchyPrior::default(),
            mcmc: McmcConfig::default(),
            sgld: SgldConfig::default(),
            generator: GeneratorSpec::default(),
            suppression: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        if let Some(seed) = cfg.seed {
            cfg.set_seed(seed);
        }
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.mcmc.seed = seed;
        self.sgld.seed = seed;
        self.generator.seed = seed;
        if let Some(s) = self.suppression.as_mut() {
            s.seed = seed;
        }
    }

    pub fn model(&self) -> ModelSpec {
        ModelSpec { shape: self.shape, anchor: self.anchor, truncation: self.truncation }
    }
}
