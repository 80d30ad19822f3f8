use smallvec::SmallVec;

use crate::chain::{Event, Params};
use crate::geometry::{dist2, Ball};
use crate::{Error, Result};

/// Default cap on grid size (cells).
pub const DEFAULT_CELL_BUDGET: u128 = 100_000_000;

/// Frequencies on the cell centres of a regular grid.
#[derive(Clone, Debug)]
pub struct GridField {
    origin: SmallVec<[f64; 3]>,
    spacing: f64,
    shape: SmallVec<[usize; 3]>,
    values: Vec<f64>,
}

impl GridField {
    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn cell_count(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim() as i32)
    }

    /// Riemann sum of `Y`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    /// Riemann sum of `Y` over `B(x, R)`.
    pub fn phi(&self, x: &[f64], radius: f64) -> f64 {
        let mut acc = 0.0;
        self.for_cells_in_ball(x, radius, |i| acc += self.values[i]);
        acc * self.cell_volume()
    }

    /// Value of the cell containing `x`, 0 outside the grid.
    pub fn value_at(&self, x: &[f64]) -> f64 {
        let mut flat = 0;
        for axis in (0..self.dim()).rev() {
            let k = ((x[axis] - self.origin[axis]) / self.spacing).floor();
            if k < 0.0 || k >= self.shape[axis] as f64 {
                return 0.0;
            }
            flat = flat * self.shape[axis] + k as usize;
        }
        self.values[flat]
    }

    fn cell_center(&self, idx: &[usize]) -> SmallVec<[f64; 3]> {
        idx.iter()
            .zip(&self.origin)
            .map(|(&k, o)| o + (k as f64 + 0.5) * self.spacing)
            .collect()
    }

    /// Flat indices of cells whose centre lies in `B(x, r)`.
    fn for_cells_in_ball(&self, x: &[f64], r: f64, mut f: impl FnMut(usize)) {
        let d = self.dim();
        let mut lo: SmallVec<[usize; 3]> = SmallVec::new();
        let mut hi: SmallVec<[usize; 3]> = SmallVec::new();
        for axis in 0..d {
            let a = ((x[axis] - r - self.origin[axis]) / self.spacing - 0.5).ceil().max(0.0);
            let b = ((x[axis] + r - self.origin[axis]) / self.spacing - 0.5).floor();
            if b < 0.0 || a > (self.shape[axis] - 1) as f64 {
                return;
            }
            lo.push(a as usize);
            hi.push((b as usize).min(self.shape[axis] - 1));
            if lo[axis] > hi[axis] {
                return;
            }
        }
        let r2 = r * r;
        let mut idx = lo.clone();
        loop {
            let c = self.cell_center(&idx);
            if dist2(&c, x) <= r2 {
                let mut flat = 0;
                for axis in (0..d).rev() {
                    flat = flat * self.shape[axis] + idx[axis];
                }
                f(flat);
            }
            let mut axis = 0;
            loop {
                if axis == d {
                    return;
                }
                if idx[axis] < hi[axis] {
                    idx[axis] += 1;
                    break;
                }
                idx[axis] = lo[axis];
                axis += 1;
            }
        }
    }
}

/// Replay `events` on every cell centre of a grid of spacing `h` covering the
/// initial blocks and all event balls. Each event uses its recorded outcome.
pub fn grid_replay(params: &Params, events: &[Event], h: f64, budget: u128) -> Result<GridField> {
    let initial = params.initial_field()?;
    if !(h > 0.0 && h <= params.radius / 20.0) {
        return Err(Error::param("h", format!("spacing {h} must lie in (0, R/20]")));
    }
    let d = params.dim;
    let mut lo: SmallVec<[f64; 3]> = SmallVec::from_elem(f64::INFINITY, d);
    let mut hi: SmallVec<[f64; 3]> = SmallVec::from_elem(f64::NEG_INFINITY, d);
    let mut grow = |b: &Ball| {
        for axis in 0..d {
            lo[axis] = lo[axis].min(b.center()[axis] - b.radius());
            hi[axis] = hi[axis].max(b.center()[axis] + b.radius());
        }
    };
    for (b, _) in initial.blocks() {
        grow(b);
    }
    for ev in events {
        grow(&Ball::new(ev.center.clone(), params.radius)?);
    }
    let shape: SmallVec<[usize; 3]> = (0..d).map(|a| ((hi[a] - lo[a]) / h).ceil() as usize + 1).collect();
    let cells: u128 = shape.iter().map(|&n| n as u128).product();
    if cells > budget {
        return Err(Error::GridBudget { cells, budget });
    }
    let mut grid = GridField {
        origin: lo,
        spacing: h,
        shape,
        values: vec![0.0; cells as usize],
    };
    let mut idx: SmallVec<[usize; 3]> = SmallVec::from_elem(0, d);
    for flat in 0..grid.values.len() {
        let mut rest = flat;
        for axis in 0..d {
            idx[axis] = rest % grid.shape[axis];
            rest /= grid.shape[axis];
        }
        let c = grid.cell_center(&idx);
        grid.values[flat] = initial.value_at(&c);
    }
    let u = params.impact;
    let mut touched = Vec::new();
    for ev in events {
        touched.clear();
        grid.for_cells_in_ball(&ev.center, params.radius, |i| touched.push(i));
        let eps = if ev.positive { 1.0 } else { 0.0 };
        for &i in &touched {
            let y = &mut grid.values[i];
            *y += u * (eps - *y);
        }
    }
    Ok(grid)
}
