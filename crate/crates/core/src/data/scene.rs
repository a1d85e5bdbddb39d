use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::scalar::Real;

pub const FLOOR: usize = 0;
pub const CEILING: usize = 1;
pub const WALL: usize = 2;
pub const COLUMN: usize = 3;
pub const BOARD: usize = 4;
pub const BOX: usize = 5;
pub const NUM_CLASSES: usize = 6;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["floor", "ceiling", "wall", "column", "board", "box"];

/// Mean RGB in `[0, 1]` per class.
pub const CLASS_COLORS: [[f64; 3]; NUM_CLASSES] = [
    [0.55, 0.45, 0.35],
    [0.90, 0.90, 0.85],
    [0.75, 0.75, 0.70],
    [0.60, 0.60, 0.65],
    [0.20, 0.35, 0.25],
    [0.70, 0.30, 0.20],
];

/// Axis-aligned room with optional columns, wall boards and floor boxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    /// Room size along x, y, z in meters.
    pub extent: [f64; 3],
    /// Points per square meter on every surface.
    pub density: f64,
    pub floor: bool,
    pub ceiling: bool,
    pub walls: bool,
    pub columns: usize,
    pub column_radius: [f64; 2],
    pub boards: usize,
    /// Board width and height ranges.
    pub board_size: [[f64; 2]; 2],
    pub boxes: usize,
    /// Box edge length range (all three edges).
    pub box_size: [f64; 2],
    /// Standard deviation of the per-point color noise.
    pub color_noise: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl SceneSpec {
    /// Office-sized room.
    pub fn room() -> Self {
        Self {
            extent: [4.0, 4.0, 3.0],
            density: 500.0,
            floor: true,
            ceiling: true,
            walls: true,
            columns: 1,
            column_radius: [0.15, 0.3],
            boards: 2,
            board_size: [[0.8, 1.6], [0.6, 1.0]],
            boxes: 3,
            box_size: [0.3, 0.8],
            color_noise: 0.03,
        }
    }

    /// Small sparse room of roughly two thousand points.
    pub fn desk() -> Self {
        Self {
            extent: [3.0, 3.0, 2.5],
            density: 40.0,
            ..Self::room()
        }
    }

    /// Only a floor; handy for tests.
    pub fn floor_only(extent: [f64; 2], density: f64) -> Self {
        Self {
            extent: [extent[0], extent[1], 1.0],
            density,
            floor: true,
            ceiling: false,
            walls: false,
            columns: 0,
            boards: 0,
            boxes: 0,
            ..Self::room()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.extent.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(Error::Config(format!("scene extent must be positive, got {:?}", self.extent)));
        }
        if !(self.density > 0.0) || !self.density.is_finite() {
            return Err(Error::Config(format!("scene density must be positive, got {}", self.density)));
        }
        for (name, [lo, hi]) in [
            ("column_radius", self.column_radius),
            ("box_size", self.box_size),
            ("board width", self.board_size[0]),
            ("board height", self.board_size[1]),
        ] {
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] is degenerate")));
            }
        }
        if !(self.color_noise >= 0.0) {
            return Err(Error::Config("color_noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// One sampled surface: its area and a point sampler over `[0,1)^2`.
struct Surface {
    label: usize,
    area: f64,
    place: Box<dyn Fn(f64, f64) -> [f64; 3]>,
}

fn rect(label: usize, origin: [f64; 3], u: [f64; 3], v: [f64; 3]) -> Surface {
    let len = |a: [f64; 3]| (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    Surface {
        label,
        area: len(u) * len(v),
        place: Box::new(move |s, t| {
            [
                origin[0] + s * u[0] + t * v[0],
                origin[1] + s * u[1] + t * v[1],
                origin[2] + s * u[2] + t * v[2],
            ]
        }),
    }
}

fn range<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Samples a labeled room. Each surface receives `round(area * density)`
/// uniform points; colors are the class mean plus clamped Gaussian noise.
pub fn generate_scene<T: Real>(spec: &SceneSpec, seed: u64) -> Result<PointCloud<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let surfaces = layout(spec, &mut rng);
    sample(spec, &surfaces, &mut rng)
}

/// Summed area of every surface the spec lays out with `seed`.
pub fn scene_area(spec: &SceneSpec, seed: u64) -> Result<f64> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(layout(spec, &mut rng).iter().map(|s| s.area).sum())
}

fn layout(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<Surface> {
    let [sx, sy, sz] = spec.extent;
    let mut surfaces = Vec::new();
    if spec.floor {
        surfaces.push(rect(FLOOR, [0.0, 0.0, 0.0], [sx, 0.0, 0.0], [0.0, sy, 0.0]));
    }
    if spec.ceiling {
        surfaces.push(rect(CEILING, [0.0, 0.0, sz], [sx, 0.0, 0.0], [0.0, sy, 0.0]));
    }
    if spec.walls {
        surfaces.push(rect(WALL, [0.0, 0.0, 0.0], [sx, 0.0, 0.0], [0.0, 0.0, sz]));
        surfaces.push(rect(WALL, [0.0, sy, 0.0], [sx, 0.0, 0.0], [0.0, 0.0, sz]));
        surfaces.push(rect(WALL, [0.0, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, sz]));
        surfaces.push(rect(WALL, [sx, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, sz]));
    }
    for _ in 0..spec.columns {
        let r = range(rng, spec.column_radius);
        let cx = range(rng, [r + 0.2 * sx, sx - r - 0.2 * sx]);
        let cy = range(rng, [r + 0.2 * sy, sy - r - 0.2 * sy]);
        surfaces.push(Surface {
            label: COLUMN,
            area: 2.0 * std::f64::consts::PI * r * sz,
            place: Box::new(move |s, t| {
                let a = 2.0 * std::f64::consts::PI * s;
                [cx + r * a.cos(), cy + r * a.sin(), t * sz]
            }),
        });
    }
    const BOARD_GAP: f64 = 0.02;
    for _ in 0..spec.boards {
        let w = range(rng, spec.board_size[0]);
        let h = range(rng, spec.board_size[1]).min(0.9 * sz);
        let z0 = range(rng, [0.3 * sz, (sz - h).max(0.3 * sz)]);
        let side = rng.random_range(0..4usize);
        let along = if side < 2 { sx } else { sy };
        let w = w.min(0.9 * along);
        let a0 = range(rng, [0.05 * along, (along - w).max(0.05 * along)]);
        let (origin, u) = match side {
            0 => ([a0, BOARD_GAP, z0], [w, 0.0, 0.0]),
            1 => ([a0, sy - BOARD_GAP, z0], [w, 0.0, 0.0]),
            2 => ([BOARD_GAP, a0, z0], [0.0, w, 0.0]),
            _ => ([sx - BOARD_GAP, a0, z0], [0.0, w, 0.0]),
        };
        surfaces.push(rect(BOARD, origin, u, [0.0, 0.0, h]));
    }
    for _ in 0..spec.boxes {
        let e = [
            range(rng, spec.box_size),
            range(rng, spec.box_size),
            range(rng, spec.box_size).min(0.9 * sz),
        ];
        let x0 = range(rng, [0.1, (sx - e[0] - 0.1).max(0.1)]);
        let y0 = range(rng, [0.1, (sy - e[1] - 0.1).max(0.1)]);
        let o = [x0, y0, 0.0];
        let (ex, ey, ez) = ([e[0], 0.0, 0.0], [0.0, e[1], 0.0], [0.0, 0.0, e[2]]);
        surfaces.push(rect(BOX, [o[0], o[1], e[2]], ex, ey));
        surfaces.push(rect(BOX, o, ex, ez));
        surfaces.push(rect(BOX, [o[0], o[1] + e[1], 0.0], ex, ez));
        surfaces.push(rect(BOX, o, ey, ez));
        surfaces.push(rect(BOX, [o[0] + e[0], o[1], 0.0], ey, ez));
    }

    surfaces
}

fn sample<T: Real>(spec: &SceneSpec, surfaces: &[Surface], rng: &mut ChaCha8Rng) -> Result<PointCloud<T>> {
    let noise = Normal::new(0.0, spec.color_noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(format!("color noise: {e}")))?;
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut labels = Vec::new();
    for surf in surfaces {
        let count = (surf.area * spec.density).round() as usize;
        for _ in 0..count {
            let p = (surf.place)(rng.random::<f64>(), rng.random::<f64>());
            positions.push(p.map(T::lit));
            let base = CLASS_COLORS[surf.label];
            let c = base.map(|b| {
                let n = if spec.color_noise > 0.0 { noise.sample(rng) } else { 0.0 };
                T::lit((b + n).clamp(0.0, 1.0))
            });
            colors.push(c);
            labels.push(surf.label);
        }
    }
    if positions.is_empty() {
        return Err(Error::Config("scene spec produced no points".into()));
    }
    Ok(PointCloud {
        positions,
        colors: Some(colors),
        labels: Some(labels),
        features: None,
    })
}
