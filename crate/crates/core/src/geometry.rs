//! Closed balls in `R^d`, finite unions of them, and the exact and Monte Carlo
//! geometry the chain and its diagnostics need.

use std::f64::consts::PI;
use std::ops::Deref;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::exec::{self, Execution};
use crate::rng::{substream, Purpose};
use crate::stats::{Estimate, Welford};
use crate::{Error, Result};

/// Default cap on rejected proposals in [`sample_uniform`].
pub const DEFAULT_MAX_TRIES: u64 = 1_000_000;

/// Default Monte Carlo sample count for volume queries.
pub const DEFAULT_VOLUME_SAMPLES: usize = 100_000;

/// A point of `R^d`; coordinates are stored inline for `d <= 3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(SmallVec<[f64; 3]>);

impl Point {
    pub fn new(coords: &[f64]) -> Self {
        Point(SmallVec::from_slice(coords))
    }

    pub fn origin(dim: usize) -> Self {
        Point(SmallVec::from_elem(0.0, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn distance(&self, other: &[f64]) -> f64 {
        dist2(self, other).sqrt()
    }
}

impl Deref for Point {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Point(SmallVec::from_vec(v))
    }
}

impl<const N: usize> From<[f64; N]> for Point {
    fn from(v: [f64; N]) -> Self {
        Point::new(&v)
    }
}

#[inline]
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Closed ball `{x : |x - center| <= radius}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    center: Point,
    radius: f64,
}

impl Ball {
    pub fn new(center: impl Into<Point>, radius: f64) -> Result<Self> {
        let center = center.into();
        if center.dim() == 0 {
            return Err(Error::ZeroDimension);
        }
        if let Some(&bad) = center.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidCoordinate(bad));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidRadius(radius));
        }
        Ok(Ball { center, radius })
    }

    pub fn center(&self) -> &Point {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        dist2(&self.center, x) <= self.radius * self.radius
    }

    pub fn volume(&self) -> f64 {
        unit_volume(self.dim()) * self.radius.powi(self.dim() as i32)
    }

    pub fn grown(&self, by: f64) -> Ball {
        Ball {
            center: self.center.clone(),
            radius: self.radius + by,
        }
    }

    /// `true` when `self` is a subset of `other`.
    pub fn inside(&self, other: &Ball) -> bool {
        self.center.distance(&other.center) + self.radius <= other.radius * (1.0 + 1e-12)
    }

    /// Interval `[c - r, c + r]`; only meaningful in dimension 1.
    pub fn interval(&self) -> (f64, f64) {
        (self.center[0] - self.radius, self.center[0] + self.radius)
    }
}

/// Volume of the unit ball in dimension `d`, by the two-step recurrence
/// `V_d = 2 pi / d * V_{d-2}` so that small dimensions come out exact.
fn unit_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / d as f64 * unit_volume(d - 2),
    }
}

fn check_dim_radius(d: usize, r: f64) -> Result<()> {
    if d == 0 {
        return Err(Error::ZeroDimension);
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidRadius(r));
    }
    Ok(())
}

/// `pi^{d/2} r^d / Gamma(d/2 + 1)`.
pub fn ball_volume(d: usize, r: f64) -> Result<f64> {
    check_dim_radius(d, r)?;
    Ok(unit_volume(d) * r.powi(d as i32))
}

/// Surface area of the sphere of radius `r`, `d V(r) / r`.
pub fn sphere_area(d: usize, r: f64) -> Result<f64> {
    Ok(d as f64 * ball_volume(d, r)? / r)
}

/// Uniform point in `ball`: uniform direction, radius `r u^{1/d}`.
pub fn uniform_in_ball<R: Rng + ?Sized>(ball: &Ball, rng: &mut R) -> Point {
    let d = ball.dim();
    let mut p = ball.center.clone();
    if d == 1 {
        let u: f64 = rng.random();
        p.coords_mut()[0] += ball.radius * (2.0 * u - 1.0);
        return p;
    }
    let mut dir: SmallVec<[f64; 3]> = SmallVec::from_elem(0.0, d);
    let norm = loop {
        for c in dir.iter_mut() {
            *c = rng.sample(StandardNormal);
        }
        let n2: f64 = dir.iter().map(|c| c * c).sum();
        if n2 > 1e-300 {
            break n2.sqrt();
        }
    };
    let u: f64 = rng.random();
    let rho = ball.radius * u.powf(1.0 / d as f64);
    for (c, v) in p.coords_mut().iter_mut().zip(&dir) {
        *c += rho * v / norm;
    }
    p
}

/// A finite family of balls that can be sampled by volume and queried for
/// cover counts. [`BallUnion`] is the plain implementation; the chain keeps a
/// grid-indexed one for its cluster.
pub trait CoverSet: Sync {
    fn dim(&self) -> usize;
    fn ball_count(&self) -> usize;
    /// Sum of the ball volumes (counting overlaps with multiplicity).
    fn total_ball_volume(&self) -> f64;
    /// The ball whose cumulative-volume slot contains `u`, for `u` in
    /// `[0, total_ball_volume())`.
    fn ball_at_volume(&self, u: f64) -> Ball;
    /// Number of balls containing `x`.
    fn cover_count(&self, x: &[f64]) -> usize;
    /// Count balls containing `x`, stopping early once `stop(count)` holds.
    /// Returns the count reached.
    fn cover_count_until(&self, x: &[f64], stop: &mut dyn FnMut(usize) -> bool) -> usize {
        let _ = stop;
        self.cover_count(x)
    }
    /// Visit every ball, in order.
    fn for_each_ball(&self, f: &mut dyn FnMut(&Ball));
}

/// Finite union of closed balls sharing one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct BallUnion {
    dim: usize,
    balls: Vec<Ball>,
    cumulative: Vec<f64>,
}

impl BallUnion {
    pub fn new(balls: Vec<Ball>) -> Result<Self> {
        let dim = balls.first().ok_or(Error::EmptyUnion)?.dim();
        if let Some(b) = balls.iter().find(|b| b.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: b.dim(),
            });
        }
        let mut acc = 0.0;
        let cumulative = balls
            .iter()
            .map(|b| {
                acc += b.volume();
                acc
            })
            .collect();
        Ok(BallUnion {
            dim,
            balls,
            cumulative,
        })
    }

    pub fn single(ball: Ball) -> Self {
        BallUnion::new(vec![ball]).expect("one ball is a valid union")
    }

    pub fn balls(&self) -> &[Ball] {
        &self.balls
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.balls.iter().any(|b| b.contains(x))
    }

    /// `{x : dist(x, self) <= r}`: every ball grown by `r`.
    pub fn expansion(&self, r: f64) -> Result<BallUnion> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidRadius(r));
        }
        BallUnion::new(self.balls.iter().map(|b| b.grown(r)).collect())
    }
}

impl CoverSet for BallUnion {
    fn dim(&self) -> usize {
        self.dim
    }

    fn ball_count(&self) -> usize {
        self.balls.len()
    }

    fn total_ball_volume(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn ball_at_volume(&self, u: f64) -> Ball {
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.balls[i.min(self.balls.len() - 1)].clone()
    }

    fn cover_count(&self, x: &[f64]) -> usize {
        self.balls.iter().filter(|b| b.contains(x)).count()
    }

    fn cover_count_until(&self, x: &[f64], stop: &mut dyn FnMut(usize) -> bool) -> usize {
        count_until(self.balls.iter().filter(|b| b.contains(x)), stop)
    }

    fn for_each_ball(&self, f: &mut dyn FnMut(&Ball)) {
        self.balls.iter().for_each(f)
    }
}

pub(crate) fn count_until<I: Iterator>(hits: I, stop: &mut dyn FnMut(usize) -> bool) -> usize {
    let mut c = 0;
    for _ in hits {
        c += 1;
        if stop(c) {
            break;
        }
    }
    c
}

/// Same as [`CoverSet::cover_count`] with a dimension check.
pub fn cover_count<S: CoverSet + ?Sized>(set: &S, x: &[f64]) -> Result<usize> {
    if x.len() != set.dim() {
        return Err(Error::DimensionMismatch {
            expected: set.dim(),
            got: x.len(),
        });
    }
    Ok(set.cover_count(x))
}

/// Exact uniform sample on the union: choose a ball with probability
/// proportional to its volume, draw uniformly inside it, keep the point with
/// probability `1 / cover_count`.
pub fn sample_uniform<S, R>(set: &S, rng: &mut R, max_tries: u64) -> Result<Point>
where
    S: CoverSet + ?Sized,
    R: Rng + ?Sized,
{
    let total = set.total_ball_volume();
    let single = set.ball_count() == 1;
    for _ in 0..max_tries {
        let ball = set.ball_at_volume(rng.random::<f64>() * total);
        let x = uniform_in_ball(&ball, rng);
        if single {
            return Ok(x);
        }
        if set.cover_count_until(&x, &mut |c| c >= 2) <= 1 {
            return Ok(x);
        }
        // Keep iff u * k < 1 for the full count k. Since u * c grows with c,
        // the scan may stop at the first c with u * c >= 1.
        let u: f64 = rng.random();
        let reached = set.cover_count_until(&x, &mut |c| u * c as f64 >= 1.0);
        if u * (reached as f64) < 1.0 {
            return Ok(x);
        }
    }
    Err(Error::SamplingExhausted(max_tries))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VolumeMethod {
    Exact1d,
    MonteCarlo { samples: usize },
}

impl Default for VolumeMethod {
    fn default() -> Self {
        VolumeMethod::MonteCarlo {
            samples: DEFAULT_VOLUME_SAMPLES,
        }
    }
}

/// Total length of a union of closed intervals.
pub fn interval_union_length(mut intervals: Vec<(f64, f64)>) -> f64 {
    merge_intervals(&mut intervals);
    intervals.iter().map(|(a, b)| b - a).sum()
}

/// Sort and merge overlapping or touching intervals in place.
pub fn merge_intervals(intervals: &mut Vec<(f64, f64)>) {
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
    for &(a, b) in intervals.iter() {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    *intervals = out;
}

/// Volume of the union. In `d = 1` the exact method merges intervals; the
/// Monte Carlo method averages `1 / cover_count` over volume-weighted mixture
/// samples and scales by the summed ball volume.
pub fn union_volume<S, R>(set: &S, method: VolumeMethod, rng: &mut R) -> Result<Estimate>
where
    S: CoverSet + ?Sized,
    R: Rng + ?Sized,
{
    union_volume_with(set, method, rng, exec::default_execution())
}

pub fn union_volume_with<S, R>(
    set: &S,
    method: VolumeMethod,
    rng: &mut R,
    exec: Execution,
) -> Result<Estimate>
where
    S: CoverSet + ?Sized,
    R: Rng + ?Sized,
{
    match method {
        VolumeMethod::Exact1d => {
            if set.dim() != 1 {
                return Err(Error::ExactRequiresLine(set.dim()));
            }
            let mut intervals = Vec::with_capacity(set.ball_count());
            set.for_each_ball(&mut |b| intervals.push(b.interval()));
            Ok(Estimate::exact(interval_union_length(intervals)))
        }
        VolumeMethod::MonteCarlo { samples } => {
            if samples == 0 {
                return Err(Error::param("samples", "must be positive"));
            }
            let total = set.total_ball_volume();
            if set.ball_count() == 1 {
                return Ok(Estimate::exact(total));
            }
            let base: u64 = rng.random();
            let acc = chunked_mean(exec, samples, base, |r| {
                let ball = set.ball_at_volume(r.random::<f64>() * total);
                let x = uniform_in_ball(&ball, r);
                Ok(1.0 / set.cover_count(&x).max(1) as f64)
            })?;
            Ok(acc.estimate().scale(total))
        }
    }
}

/// Mean of `draw` over `samples` draws, split into fixed chunks each with its
/// own substream of `base`.
pub(crate) fn chunked_mean<F>(exec: Execution, samples: usize, base: u64, draw: F) -> Result<Welford>
where
    F: Fn(&mut crate::rng::StreamRng) -> Result<f64> + Sync + Send,
{
    let plan: Vec<(usize, usize)> = exec::chunks(samples).collect();
    let parts = exec::map_indexed(exec, plan.len(), |i| -> Result<Welford> {
        let (idx, len) = plan[i];
        let mut r = substream(base, Purpose::Chunk, idx as u64);
        let mut w = Welford::new();
        for _ in 0..len {
            w.push(draw(&mut r)?);
        }
        Ok(w)
    });
    let mut acc = Welford::new();
    for p in parts {
        acc.merge(&p?);
    }
    Ok(acc)
}
