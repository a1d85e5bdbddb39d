use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acpconv::DEFAULT_NEIGHBORS;
use crate::error::{Error, Result};
use crate::fusion::SegmentationModel;
use crate::geometry::{bounds, GeometryError, PointCloud};
use crate::graph::{Graph, Mode, ParamStore};
use crate::pipeline::metrics::{compute_metrics, ConfusionMatrix, Metrics};
use crate::pipeline::train::prepare_crop;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VotingConfig {
    pub sphere_radius: f64,
    /// Lattice spacing of sphere centers; defaults to the radius, which
    /// covers every point since a cube's half-diagonal is below its edge.
    pub stride: Option<f64>,
    pub neighbors: usize,
    pub seed: u64,
}

impl Default for VotingConfig {
    fn default() -> Self {
        Self {
            sphere_radius: 1.0,
            stride: None,
            neighbors: DEFAULT_NEIGHBORS,
            seed: 0,
        }
    }
}

impl VotingConfig {
    pub fn stride(&self) -> f64 {
        self.stride.unwrap_or(self.sphere_radius)
    }
}

/// Regular lattice over the bounding box, from the min corner onward, with
/// enough nodes per axis to reach the max corner.
pub fn lattice_centers<T: Real>(positions: &[[T; 3]], stride: f64) -> Result<Vec<[T; 3]>> {
    if !(stride > 0.0) {
        return Err(Error::Config(format!("voting stride must be positive, got {stride}")));
    }
    let (lo, hi) = bounds(positions).ok_or(GeometryError::EmptySource)?;
    let counts: [usize; 3] =
        std::array::from_fn(|a| ((hi[a].as_f64() - lo[a].as_f64()) / stride).ceil() as usize + 1);
    let mut out = Vec::with_capacity(counts.iter().product());
    for i in 0..counts[0] {
        for j in 0..counts[1] {
            for k in 0..counts[2] {
                let step = [i, j, k];
                out.push(std::array::from_fn(|a| {
                    lo[a] + T::lit(step[a] as f64 * stride)
                }));
            }
        }
    }
    Ok(out)
}

/// Per-point class probabilities averaged over covering spheres.
#[derive(Clone, Debug)]
pub struct VotingResult {
    /// `N x C`, row-major.
    pub probs: Vec<f64>,
    pub num_classes: usize,
    pub predictions: Vec<usize>,
    /// Number of spheres that covered each point.
    pub coverage: Vec<usize>,
}

/// Runs the model (eval mode) on every non-empty sphere of the given centers
/// and averages the probabilities per point.
pub fn predict_at_centers<T: Real>(
    store: &ParamStore<T>,
    model: &SegmentationModel<T>,
    scene: &PointCloud<T>,
    centers: &[[T; 3]],
    cfg: &VotingConfig,
) -> Result<VotingResult> {
    let radius = T::lit(cfg.sphere_radius);
    let c = model.network_config().num_classes;
    let per_crop: Vec<Option<(Vec<usize>, Vec<f64>)>> = centers
        .par_iter()
        .enumerate()
        .map(|(ci, &center)| -> Result<_> {
            let sample = match prepare_crop(scene, center, radius, None) {
                Ok(s) => s,
                Err(GeometryError::EmptyCrop) => return Ok(None),
                Err(e) => return Err(e.into()),
            };
            let seed = cfg.seed.wrapping_add(ci as u64);
            let pyramids = model.pyramids(&sample.positions, cfg.neighbors, seed)?;
            let mut g = Graph::new(store, Mode::Eval);
            let x = g.constant(sample.features);
            let out = model.forward(&mut g, &pyramids, x)?;
            let probs = g.value(out.probs).data().iter().map(|p| p.as_f64()).collect();
            Ok(Some((sample.indices, probs)))
        })
        .collect::<Result<_>>()?;

    let n = scene.len();
    let mut sums = vec![0.0; n * c];
    let mut coverage = vec![0usize; n];
    for (indices, probs) in per_crop.into_iter().flatten() {
        for (row, &i) in indices.iter().enumerate() {
            coverage[i] += 1;
            for k in 0..c {
                sums[i * c + k] += probs[row * c + k];
            }
        }
    }
    let uncovered = coverage.iter().filter(|&&v| v == 0).count();
    if uncovered > 0 {
        return Err(Error::Uncovered { count: uncovered });
    }
    let mut predictions = Vec::with_capacity(n);
    for i in 0..n {
        let row = &mut sums[i * c..(i + 1) * c];
        let inv = 1.0 / coverage[i] as f64;
        row.iter_mut().for_each(|p| *p *= inv);
        let best = (0..c).fold(0, |b, k| if row[k] > row[b] { k } else { b });
        predictions.push(best);
    }
    Ok(VotingResult {
        probs: sums,
        num_classes: c,
        predictions,
        coverage,
    })
}

/// Voting inference over a lattice of spheres with `stride` spacing.
pub fn predict_with_voting<T: Real>(
    store: &ParamStore<T>,
    model: &SegmentationModel<T>,
    scene: &PointCloud<T>,
    cfg: &VotingConfig,
) -> Result<VotingResult> {
    let centers = lattice_centers(&scene.positions, cfg.stride())?;
    predict_at_centers(store, model, scene, &centers, cfg)
}

/// Voting inference on labeled scenes, accumulated into one confusion matrix.
pub fn evaluate_with_voting<T: Real>(
    store: &ParamStore<T>,
    model: &SegmentationModel<T>,
    scenes: &[PointCloud<T>],
    cfg: &VotingConfig,
) -> Result<(Metrics, ConfusionMatrix, Vec<VotingResult>)> {
    let c = model.network_config().num_classes;
    let mut cm = ConfusionMatrix::new(c);
    let mut results = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let labels = scene
            .labels
            .as_ref()
            .ok_or_else(|| Error::Data("evaluation scenes need labels".into()))?;
        let res = predict_with_voting(store, model, scene, cfg)?;
        cm.add_all(labels, &res.predictions)?;
        results.push(res);
    }
    Ok((compute_metrics(&cm)?, cm, results))
}
