use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::PointCloud;
use crate::scalar::Real;

/// Training-time perturbations, applied in field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Rotation about the vertical axis by a uniform angle in `[0, 2pi)`.
    pub rotate: bool,
    pub jitter: bool,
    pub jitter_sigma: f64,
    /// Per-coordinate clip of the jitter offset.
    pub jitter_clip: f64,
    pub scale: bool,
    pub scale_range: [f64; 2],
    pub color_drop: bool,
    pub color_drop_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotate: true,
            jitter: true,
            jitter_sigma: 0.01,
            jitter_clip: 0.05,
            scale: true,
            scale_range: [0.8, 1.2],
            color_drop: true,
            color_drop_prob: 0.2,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            rotate: false,
            jitter: false,
            scale: false,
            color_drop: false,
            ..Self::default()
        }
    }
}

/// Returns a perturbed copy of `cloud`; labels and features are untouched.
pub fn augment<T: Real>(cloud: &PointCloud<T>, cfg: &AugmentConfig, seed: u64) -> PointCloud<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = cloud.clone();
    if cfg.rotate {
        let a = T::lit(rng.random_range(0.0..std::f64::consts::TAU));
        let (s, c) = a.sin_cos();
        for p in &mut out.positions {
            let (x, y) = (p[0], p[1]);
            p[0] = c * x - s * y;
            p[1] = s * x + c * y;
        }
    }
    if cfg.jitter && cfg.jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.jitter_sigma).expect("positive sigma");
        let clip = cfg.jitter_clip.abs();
        for p in &mut out.positions {
            for x in p.iter_mut() {
                *x += T::lit(normal.sample(&mut rng).clamp(-clip, clip));
            }
        }
    }
    if cfg.scale {
        let [lo, hi] = cfg.scale_range;
        let f = T::lit(if hi > lo { rng.random_range(lo..hi) } else { lo });
        for p in &mut out.positions {
            for x in p.iter_mut() {
                *x *= f;
            }
        }
    }
    if cfg.color_drop && rng.random::<f64>() < cfg.color_drop_prob {
        if let Some(colors) = &mut out.colors {
            colors.iter_mut().for_each(|c| *c = [T::zero(); 3]);
        }
    }
    out
}
