use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acpconv::DEFAULT_NEIGHBORS;
use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, SegmentationModel};
use crate::geometry::{bounds, sphere_crop, GeometryError, PointCloud};
use crate::graph::checkpoint::{load_into, read_checkpoint, write_checkpoint};
use crate::graph::{AdamConfig, Graph, Mode, ParamStore, Tensor};
use crate::network::NetworkConfig;
use crate::pipeline::augment::{augment, AugmentConfig};
use crate::scalar::Real;

/// Number of per-point input channels built by [`input_features`].
pub const INPUT_CHANNELS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub crops_per_epoch: usize,
    pub sphere_radius: f64,
    /// Neighbors per point in every pyramid level.
    pub neighbors: usize,
    pub max_crop_retries: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            decay_factor: 0.5,
            decay_every: 30,
            epochs: 10,
            crops_per_epoch: 20,
            sphere_radius: 1.0,
            neighbors: DEFAULT_NEIGHBORS,
            max_crop_retries: 1000,
            seed: 0,
            augment: AugmentConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("decay_factor", self.decay_factor),
            ("sphere_radius", self.sphere_radius),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
        if self.decay_every == 0 || self.neighbors == 0 || self.max_crop_retries == 0 {
            return Err(Error::Config(
                "decay_every, neighbors and max_crop_retries must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `lr * decay_factor ^ floor(epoch / decay_every)`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.lr * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

/// `[1, r, g, b, z]` per point; missing colors read as zero.
pub fn input_features<T: Real>(cloud: &PointCloud<T>) -> Tensor<T> {
    let mut data = Vec::with_capacity(cloud.len() * INPUT_CHANNELS);
    for i in 0..cloud.len() {
        let c = cloud.colors.as_ref().map_or([T::zero(); 3], |c| c[i]);
        data.extend([T::one(), c[0], c[1], c[2], cloud.positions[i][2]]);
    }
    Tensor::new(&[cloud.len(), INPUT_CHANNELS], data).expect("feature shape")
}

/// One network input: positions relative to the crop center, features and
/// (when known) labels.
#[derive(Clone, Debug)]
pub struct CropSample<T> {
    pub positions: Vec<[T; 3]>,
    pub features: Tensor<T>,
    pub labels: Option<Arc<[usize]>>,
    /// Index of every sample point in its scene.
    pub indices: Vec<usize>,
}

/// Crops a sphere, builds features from absolute heights and colors, then
/// recenters the positions and applies `aug` (if any).
pub fn prepare_crop<T: Real>(
    scene: &PointCloud<T>,
    center: [T; 3],
    radius: T,
    aug: Option<(&AugmentConfig, u64)>,
) -> Result<CropSample<T>, GeometryError> {
    let crop = sphere_crop(scene, center, radius)?;
    let mut cloud = crop.cloud;
    for p in &mut cloud.positions {
        for (x, c) in p.iter_mut().zip(center) {
            *x -= c;
        }
    }
    let abs_z: Vec<T> = crop.indices.iter().map(|&i| scene.positions[i][2]).collect();
    if let Some((cfg, seed)) = aug {
        cloud = augment(&cloud, cfg, seed);
    }
    let mut features = input_features(&cloud);
    for (i, z) in abs_z.into_iter().enumerate() {
        features.data_mut()[i * INPUT_CHANNELS + 4] = z;
    }
    Ok(CropSample {
        positions: cloud.positions,
        features,
        labels: cloud.labels.map(Arc::from),
        indices: crop.indices,
    })
}

/// One optimizer step as written to the metric log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub oa: f64,
    pub lr: f64,
}

impl fmt::Display for StepRecord {
    /// `epoch,step,loss,oa,lr` with shortest round-trip float formatting.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{:?},{:?},{:?}", self.epoch, self.step, self.loss, self.oa, self.lr)
    }
}

/// Model parameters, optimizer state and the sampling stream of one run.
pub struct Trainer<T: Real> {
    pub store: ParamStore<T>,
    pub model: SegmentationModel<T>,
    pub config: TrainConfig,
    rng: ChaCha8Rng,
    step: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(net: &NetworkConfig, fusion: &FusionConfig, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if net.in_channels != INPUT_CHANNELS {
            return Err(Error::Config(format!(
                "training features have {INPUT_CHANNELS} channels, network expects {}",
                net.in_channels
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let model = SegmentationModel::new(&mut store, net, fusion, &mut rng)?;
        Ok(Self {
            store,
            model,
            config: config.clone(),
            rng,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Draws a non-empty random crop from a random scene.
    pub fn sample_crop(&mut self, scenes: &[PointCloud<T>]) -> Result<CropSample<T>> {
        if scenes.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let radius = T::lit(self.config.sphere_radius);
        for _ in 0..self.config.max_crop_retries {
            let scene = &scenes[self.rng.random_range(0..scenes.len())];
            let Some((lo, hi)) = bounds(&scene.positions) else { continue };
            let center: [T; 3] = std::array::from_fn(|a| {
                let (l, h) = (lo[a].as_f64(), hi[a].as_f64());
                T::lit(if h > l { self.rng.random_range(l..=h) } else { l })
            });
            let aug_seed = self.rng.random::<u64>();
            match prepare_crop(scene, center, radius, Some((&self.config.augment, aug_seed))) {
                Ok(sample) => {
                    if sample.labels.is_none() {
                        return Err(Error::Data("training scenes need labels".into()));
                    }
                    return Ok(sample);
                }
                Err(GeometryError::EmptyCrop) => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Err(Error::CropRetriesExhausted {
            attempts: self.config.max_crop_retries,
        })
    }

    /// Forward, cross-entropy, backward and one Adam update on `sample`.
    pub fn step_on(&mut self, sample: &CropSample<T>, epoch: usize) -> Result<StepRecord> {
        let labels = sample
            .labels
            .clone()
            .ok_or_else(|| Error::Data("training sample has no labels".into()))?;
        let pds_seed = self.rng.random::<u64>();
        let pyramids = self.model.pyramids(&sample.positions, self.config.neighbors, pds_seed)?;
        let lr = self.config.lr_at_epoch(epoch);
        let (outcome, loss, oa) = {
            let mut g = Graph::new(&self.store, Mode::Train);
            let x = g.constant(sample.features.clone());
            let out = self.model.forward(&mut g, &pyramids, x)?;
            let loss = self.model.loss(&mut g, &out, Arc::clone(&labels))?;
            let pred = g.value(out.probs).argmax_rows();
            let correct = pred.iter().zip(labels.iter()).filter(|(p, t)| p == t).count();
            let loss_value = g.value(loss).data()[0].as_f64();
            g.backward(loss)?;
            (g.finish(), loss_value, correct as f64 / labels.len() as f64)
        };
        self.store.zero_grads();
        self.store.absorb(&outcome);
        self.config.adam.with_lr(lr).step(&mut self.store)?;
        let record = StepRecord {
            epoch,
            step: self.step,
            loss,
            oa,
            lr,
        };
        self.step += 1;
        Ok(record)
    }

    /// Full schedule: `epochs x crops_per_epoch` random-crop steps.
    pub fn run(&mut self, scenes: &[PointCloud<T>], mut on_step: impl FnMut(&StepRecord)) -> Result<Vec<StepRecord>> {
        let mut log = Vec::with_capacity(self.config.epochs * self.config.crops_per_epoch);
        for epoch in 0..self.config.epochs {
            for _ in 0..self.config.crops_per_epoch {
                let sample = self.sample_crop(scenes)?;
                let rec = self.step_on(&sample, epoch)?;
                on_step(&rec);
                log.push(rec);
            }
        }
        Ok(log)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_checkpoint(&self.store, &mut w, true)?;
        Ok(())
    }
}

/// Rebuilds a model from its configuration and loads stored weights.
pub fn load_model<T: Real>(
    net: &NetworkConfig,
    fusion: &FusionConfig,
    path: impl AsRef<Path>,
) -> Result<(ParamStore<T>, SegmentationModel<T>)> {
    let mut store = ParamStore::new();
    let model = SegmentationModel::new(&mut store, net, fusion, &mut ChaCha8Rng::seed_from_u64(0))?;
    let entries = read_checkpoint(&mut BufReader::new(File::open(path)?))?;
    load_into(&mut store, &entries)?;
    Ok((store, model))
}
