use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::scene::{generate_scene, SceneSpec};
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::geometry::PointCloud;
use crate::network::NetworkConfig;
use crate::pipeline::{TrainConfig, VotingConfig};
use crate::scalar::Real;

/// A family of synthetic scenes: scene `i` is generated with `seed + i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub scene: SceneSpec,
    pub num_scenes: usize,
    /// Scenes from this index on are held out for evaluation.
    pub train_scenes: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::desk(),
            num_scenes: 20,
            train_scenes: 16,
            seed: 1,
        }
    }
}

impl DatasetConfig {
    pub fn generate<T: Real>(&self) -> Result<Vec<PointCloud<T>>> {
        (0..self.num_scenes)
            .map(|i| generate_scene(&self.scene, self.seed.wrapping_add(i as u64)))
            .collect()
    }

    /// `(train, test)` split of [`DatasetConfig::generate`].
    pub fn split<T: Real>(&self) -> Result<(Vec<PointCloud<T>>, Vec<PointCloud<T>>)> {
        let mut all = self.generate()?;
        let test = all.split_off(self.train_scenes.min(all.len()));
        Ok((all, test))
    }
}

/// Everything a `train`/`eval`/`ablate` invocation needs, as one JSON file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    pub eval: VotingConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.scene.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        if self.dataset.num_scenes == 0 {
            return Err(Error::Config("dataset needs at least one scene".into()));
        }
        if !(self.eval.sphere_radius > 0.0) {
            return Err(Error::Config("eval sphere_radius must be positive".into()));
        }
        Ok(())
    }
}
