//! Persistent uniform-grid bucket index for point-in-ball queries.
//!
//! A ball is registered in every cell its closure meets, so a point query only
//! has to scan the single cell containing the point. Buckets are `im`
//! persistent vectors: cloning an index is O(1) and snapshots share storage.
//! Balls much larger than a cell go to an overflow list scanned on every
//! query instead of being smeared over many cells.

use im::{HashMap, Vector};
use smallvec::SmallVec;

use crate::geometry::Ball;

type CellKey = SmallVec<[i64; 3]>;

/// Balls with radius above this many cell sides go to the overflow list.
const OVERSIZE_FACTOR: f64 = 4.0;

#[derive(Clone, Debug)]
pub struct GridIndex<T: Clone> {
    side: f64,
    buckets: HashMap<CellKey, Vector<T>>,
    oversized: Vector<T>,
}

impl<T: Clone> GridIndex<T> {
    pub fn new(side: f64) -> Self {
        assert!(side > 0.0 && side.is_finite(), "cell side must be positive");
        GridIndex {
            side,
            buckets: HashMap::new(),
            oversized: Vector::new(),
        }
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    fn cell_of(&self, x: &[f64]) -> CellKey {
        x.iter().map(|c| (c / self.side).floor() as i64).collect()
    }

    pub fn insert(&mut self, ball: &Ball, item: T) {
        if ball.radius() > OVERSIZE_FACTOR * self.side {
            self.oversized.push_back(item);
            return;
        }
        // Slightly generous reach so that rounding in the cell bounds can
        // never drop a cell the ball truly meets.
        let reach = ball.radius() * (1.0 + 1e-9) + 1e-12;
        let c = ball.center();
        let lo: CellKey = c.iter().map(|v| ((v - reach) / self.side).floor() as i64).collect();
        let hi: CellKey = c.iter().map(|v| ((v + reach) / self.side).floor() as i64).collect();
        let mut cell = lo.clone();
        loop {
            let mut d2 = 0.0;
            for (k, &v) in cell.iter().zip(c.iter()) {
                let a = *k as f64 * self.side;
                let b = a + self.side;
                let gap = if v < a { a - v } else if v > b { v - b } else { 0.0 };
                d2 += gap * gap;
            }
            if d2 <= reach * reach {
                self.buckets.entry(cell.clone()).or_default().push_back(item.clone());
            }
            // Odometer increment over the box lo..=hi.
            let mut axis = 0;
            loop {
                if axis == cell.len() {
                    return;
                }
                if cell[axis] < hi[axis] {
                    cell[axis] += 1;
                    break;
                }
                cell[axis] = lo[axis];
                axis += 1;
            }
        }
    }

    /// Candidates for balls containing `x`: the bucket of `x`'s cell in
    /// insertion order, followed by the overflow list.
    pub fn candidates<'a>(&'a self, x: &[f64]) -> impl Iterator<Item = &'a T> + 'a {
        let bucket = self.buckets.get(&self.cell_of(x));
        bucket.into_iter().flat_map(|v| v.iter()).chain(self.oversized.iter())
    }

    /// The bucket for `x` only (no overflow list), in insertion order.
    pub fn bucket<'a>(&'a self, x: &[f64]) -> impl Iterator<Item = &'a T> + 'a {
        self.buckets.get(&self.cell_of(x)).into_iter().flat_map(|v| v.iter())
    }

    pub fn has_oversized(&self) -> bool {
        !self.oversized.is_empty()
    }
}
