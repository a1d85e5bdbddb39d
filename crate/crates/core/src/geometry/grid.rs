use std::collections::HashMap;

use crate::scalar::Real;

/// Uniform hash grid: every point sits in exactly one cell,
/// `cell = floor(position / cell_size)` per axis.
#[derive(Clone, Debug)]
pub struct SpatialGrid<T> {
    cell_size: T,
    cells: HashMap<[i64; 3], Vec<usize>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl<T: Real> SpatialGrid<T> {
    pub fn new(cell_size: T) -> Self {
        assert!(cell_size > T::zero(), "cell size must be positive");
        Self {
            cell_size,
            cells: HashMap::new(),
            lo: [i64::MAX; 3],
            hi: [i64::MIN; 3],
        }
    }

    pub fn build(positions: &[[T; 3]], cell_size: T) -> Self {
        let mut g = Self::new(cell_size);
        for (i, p) in positions.iter().enumerate() {
            g.insert(i, p);
        }
        g
    }

    pub fn cell_size(&self) -> T {
        self.cell_size
    }

    pub fn cell_of(&self, p: &[T; 3]) -> [i64; 3] {
        let f = |x: T| (x / self.cell_size).floor().to_i64().unwrap_or(0);
        [f(p[0]), f(p[1]), f(p[2])]
    }

    pub fn insert(&mut self, index: usize, p: &[T; 3]) {
        let c = self.cell_of(p);
        for a in 0..3 {
            self.lo[a] = self.lo[a].min(c[a]);
            self.hi[a] = self.hi[a].max(c[a]);
        }
        self.cells.entry(c).or_default().push(index);
    }

    pub fn cell(&self, c: &[i64; 3]) -> &[usize] {
        self.cells.get(c).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn occupied_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Occupied cell-index bounds (inclusive).
    pub fn cell_bounds(&self) -> ([i64; 3], [i64; 3]) {
        (self.lo, self.hi)
    }

    /// Calls `f` on every cell at Chebyshev distance exactly `ring` from
    /// `center`, clipped to the occupied bounds.
    pub fn for_each_in_ring(&self, center: [i64; 3], ring: i64, mut f: impl FnMut(&[usize])) {
        let (lo, hi) = (self.lo, self.hi);
        let clip = |a: usize| ((center[a] - ring).max(lo[a]), (center[a] + ring).min(hi[a]));
        let (x0, x1) = clip(0);
        let (y0, y1) = clip(1);
        let (z0, z1) = clip(2);
        for x in x0..=x1 {
            let edge_x = (x - center[0]).abs() == ring;
            for y in y0..=y1 {
                let edge_xy = edge_x || (y - center[1]).abs() == ring;
                if edge_xy {
                    for z in z0..=z1 {
                        f(self.cell(&[x, y, z]));
                    }
                } else {
                    for z in [center[2] - ring, center[2] + ring] {
                        if z >= z0 && z <= z1 {
                            f(self.cell(&[x, y, z]));
                        }
                        if ring == 0 {
                            break;
                        }
                    }
                }
            }
        }
    }

    /// True when the block of rings `0..=ring` around `center` spans every
    /// occupied cell.
    pub fn covers_all(&self, center: [i64; 3], ring: i64) -> bool {
        (0..3).all(|a| center[a] - ring <= self.lo[a] && center[a] + ring >= self.hi[a])
    }
}
