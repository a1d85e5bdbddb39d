use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{GeometryError, PointCloud, SpatialGrid};
use crate::scalar::{dist2, Real};

/// Poisson-disk subsampling by greedy sample elimination.
///
/// Points are visited in a seed-determined random order; a point is accepted
/// iff no already-accepted point lies within distance `r`. The accepted set is
/// maximal: every rejected point is within `r` of an accepted one. Returns the
/// accepted indices in ascending order.
pub fn poisson_disk_subsample_positions<T: Real>(
    positions: &[[T; 3]],
    r: T,
    seed: u64,
) -> Result<Vec<usize>, GeometryError> {
    if !(r >= T::zero()) || !r.is_finite() {
        return Err(GeometryError::InvalidArgument(format!(
            "poisson disk radius must be finite and >= 0, got {r}"
        )));
    }
    if r == T::zero() {
        return Ok((0..positions.len()).collect());
    }
    let mut order: Vec<usize> = (0..positions.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let r2 = r * r;
    let mut accepted_grid = SpatialGrid::new(r);
    let mut accepted = Vec::new();
    for i in order {
        let p = &positions[i];
        let c = accepted_grid.cell_of(p);
        let mut blocked = false;
        'scan: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    for &j in accepted_grid.cell(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        if dist2(p, &positions[j]) <= r2 {
                            blocked = true;
                            break 'scan;
                        }
                    }
                }
            }
        }
        if !blocked {
            accepted_grid.insert(i, p);
            accepted.push(i);
        }
    }
    accepted.sort_unstable();
    Ok(accepted)
}

pub fn poisson_disk_subsample<T: Real>(
    cloud: &PointCloud<T>,
    r: T,
    seed: u64,
) -> Result<Vec<usize>, GeometryError> {
    poisson_disk_subsample_positions(&cloud.positions, r, seed)
}

/// Per-stage subsampling radii `[r, 2r, 4r, ..., r * 2^(levels-1)]`.
pub fn radius_schedule<T: Real>(r: T, levels: usize) -> Result<Vec<T>, GeometryError> {
    if levels == 0 || !(r >= T::zero()) {
        return Err(GeometryError::InvalidArgument(format!(
            "radius schedule needs r >= 0 and at least one level (r={r}, levels={levels})"
        )));
    }
    let two = T::lit(2.0);
    Ok((0..levels).map(|l| r * two.powi(l as i32)).collect())
}
