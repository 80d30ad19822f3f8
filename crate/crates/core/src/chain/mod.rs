//! The embedded jump chain `(Y_n, Delta_n)`.
//!
//! `Y_n` is never materialised. The state keeps an append-only event log and
//! a grid index from cells of side `R` to the events whose ball meets the
//! cell; the frequency at `x` is recovered by replaying, in order, only the
//! events whose ball contains `x`. All containers are persistent, so cloning a
//! state is O(1) and a pre-step snapshot costs nothing to keep around.

mod clock;
mod coupling;
mod nonspatial;
pub mod record;

use std::sync::Arc;

use im::Vector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{self, dist2, Ball, BallUnion, CoverSet, Point};
use crate::grid::GridIndex;
use crate::rng::{substream, Purpose, StreamRng};
use crate::{Error, Result};

pub use clock::{continuous_query, jump_schedule, ClockSchedule};
pub use coupling::coupled_step;
pub use nonspatial::{nonspatial_run, nonspatial_step, NonspatialOutcome};

/// A ball of constant initial frequency. The default initial field is the
/// single block `a * 1_{B(C0, r0)}`; extra blocks describe the ball-union
/// initial data of the general convergence result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialBlock {
    pub center: Point,
    pub radius: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    #[serde(rename = "d")]
    pub dim: usize,
    /// Event radius `R`.
    #[serde(rename = "R")]
    pub radius: f64,
    /// Impact fraction `U`.
    #[serde(rename = "U")]
    pub impact: f64,
    /// Initial frequency `a`.
    #[serde(rename = "a")]
    pub initial_frequency: f64,
    #[serde(rename = "r0")]
    pub initial_radius: f64,
    #[serde(rename = "C0")]
    pub initial_center: Point,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_initial: Vec<InitialBlock>,
}

impl Params {
    /// Parameters with the initial ball centred at the origin.
    pub fn new(dim: usize, radius: f64, impact: f64, initial_frequency: f64, initial_radius: f64, seed: u64) -> Self {
        Params {
            dim,
            radius,
            impact,
            initial_frequency,
            initial_radius,
            initial_center: Point::origin(dim),
            seed,
            extra_initial: Vec::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_center(mut self, center: impl Into<Point>) -> Self {
        self.initial_center = center.into();
        self
    }

    pub fn with_block(mut self, center: impl Into<Point>, radius: f64, value: f64) -> Self {
        self.extra_initial.push(InitialBlock {
            center: center.into(),
            radius,
            value,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::ZeroDimension);
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::param("R", format!("{} is not > 0", self.radius)));
        }
        if !(self.impact > 0.0 && self.impact < 1.0) {
            return Err(Error::param("U", format!("{} is not in (0, 1)", self.impact)));
        }
        if !(0.0..=1.0).contains(&self.initial_frequency) {
            return Err(Error::param("a", format!("{} is not in [0, 1]", self.initial_frequency)));
        }
        if !(self.initial_radius > 0.0 && self.initial_radius.is_finite()) {
            return Err(Error::param("r0", format!("{} is not > 0", self.initial_radius)));
        }
        if self.initial_center.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: self.initial_center.dim(),
            });
        }
        for b in &self.extra_initial {
            Ball::new(b.center.clone(), b.radius)?;
            if b.center.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: b.center.dim(),
                });
            }
            if !(0.0..=1.0).contains(&b.value) {
                return Err(Error::param("initial block value", format!("{} is not in [0, 1]", b.value)));
            }
        }
        Ok(())
    }

    /// `V(R)`.
    pub fn event_volume(&self) -> f64 {
        geometry::ball_volume(self.dim, self.radius).expect("validated params")
    }

    /// `S(R)`.
    pub fn event_area(&self) -> f64 {
        geometry::sphere_area(self.dim, self.radius).expect("validated params")
    }

    pub fn initial_field(&self) -> Result<InitialField> {
        self.validate()?;
        let mut blocks = vec![(
            Ball::new(self.initial_center.clone(), self.initial_radius)?,
            self.initial_frequency,
        )];
        for b in &self.extra_initial {
            blocks.push((Ball::new(b.center.clone(), b.radius)?, b.value));
        }
        Ok(InitialField { blocks })
    }
}

/// Ball-union initial field; the value at `x` is the largest value among the
/// blocks containing `x`, zero elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialField {
    blocks: Vec<(Ball, f64)>,
}

impl InitialField {
    pub fn blocks(&self) -> &[(Ball, f64)] {
        &self.blocks
    }

    #[inline]
    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.blocks
            .iter()
            .filter(|(b, _)| b.contains(x))
            .map(|&(_, v)| v)
            .fold(0.0, f64::max)
    }

    pub fn union(&self) -> BallUnion {
        BallUnion::new(self.blocks.iter().map(|(b, _)| b.clone()).collect()).expect("non-empty")
    }
}

/// One reproduction event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Step number `n >= 1`.
    #[serde(rename = "n")]
    pub index: usize,
    pub center: Point,
    /// The uniform draw `V_n`.
    pub uniform: f64,
    /// `true` iff `uniform <= freq_at_center`.
    pub positive: bool,
    /// `Y_{n-1}(C_n)`.
    pub freq_at_center: f64,
}

#[derive(Clone, Debug)]
struct CoverEntry {
    index: u32,
    center: Point,
    positive: bool,
}

#[derive(Clone, Debug)]
struct ClusterBall {
    ball: Ball,
    /// Step at which the ball joined the cluster (0 for initial blocks).
    since: usize,
}

/// The cluster `Delta_n` with an index over its `R`-expansion.
#[derive(Clone, Debug)]
pub struct Cluster {
    reach: f64,
    initial: Arc<Vec<f64>>,
    event_volume: f64,
    balls: Vector<ClusterBall>,
    index: GridIndex<u32>,
}

impl Cluster {
    fn new(initial: &InitialField, reach: f64) -> Self {
        let dim = initial.blocks[0].0.dim();
        let mut cumulative = Vec::with_capacity(initial.blocks.len());
        let mut acc = 0.0;
        let mut c = Cluster {
            reach,
            initial: Arc::new(Vec::new()),
            event_volume: geometry::ball_volume(dim, 2.0 * reach).expect("positive radius"),
            balls: Vector::new(),
            index: GridIndex::new(2.0 * reach),
        };
        for (b, _) in &initial.blocks {
            acc += b.grown(reach).volume();
            cumulative.push(acc);
            c.push(b.clone(), 0);
        }
        c.initial = Arc::new(cumulative);
        c
    }

    fn push(&mut self, ball: Ball, since: usize) {
        let id = self.balls.len() as u32;
        self.index.insert(&ball.grown(self.reach), id);
        self.balls.push_back(ClusterBall { ball, since });
    }

    pub fn len(&self) -> usize {
        self.balls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }

    /// Membership in `Delta_n` itself.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.index.candidates(x).any(|&i| self.balls[i as usize].ball.contains(x))
    }

    /// Membership in `Delta_n^R`.
    pub fn expansion_contains(&self, x: &[f64]) -> bool {
        self.expanded().cover_count(x) > 0
    }

    /// The `R`-expansion as a [`CoverSet`] for sampling and volume queries.
    pub fn expanded(&self) -> ClusterView<'_> {
        ClusterView { cluster: self, grow: self.reach }
    }

    /// `Delta_n` itself as a [`CoverSet`].
    pub fn core(&self) -> ClusterView<'_> {
        ClusterView { cluster: self, grow: 0.0 }
    }

    pub fn balls(&self) -> impl Iterator<Item = &Ball> {
        self.balls.iter().map(|b| &b.ball)
    }

    /// `Delta_n` as a plain [`BallUnion`].
    pub fn to_union(&self) -> BallUnion {
        self.union_at(usize::MAX)
    }

    fn union_at(&self, step: usize) -> BallUnion {
        BallUnion::new(self.balls.iter().filter(|b| b.since <= step).map(|b| b.ball.clone()).collect())
            .expect("initial ball is always present")
    }
}

/// The cluster balls grown by either 0 or `R`. The grid index covers the
/// `R`-expanded balls, so it serves both views.
pub struct ClusterView<'a> {
    cluster: &'a Cluster,
    grow: f64,
}

impl ClusterView<'_> {
    fn grown_volumes(&self) -> (f64, usize, f64) {
        let c = self.cluster;
        let n_init = c.initial.len();
        let (init_total, per_event) = if self.grow == 0.0 {
            let t: f64 = c.balls.iter().take(n_init).map(|b| b.ball.volume()).sum();
            (t, c.event_volume / 2f64.powi(self.dim() as i32))
        } else {
            (c.initial.last().copied().unwrap_or(0.0), c.event_volume)
        };
        (init_total, n_init, per_event)
    }

    /// Visit the grown balls registered near `x`.
    pub(crate) fn for_each_candidate(&self, x: &[f64], f: &mut dyn FnMut(&Ball)) {
        let c = self.cluster;
        for &i in c.index.candidates(x) {
            f(&c.balls[i as usize].ball.grown(self.grow));
        }
    }
}

impl CoverSet for ClusterView<'_> {
    fn dim(&self) -> usize {
        self.cluster.balls[0].ball.dim()
    }

    fn ball_count(&self) -> usize {
        self.cluster.balls.len()
    }

    fn total_ball_volume(&self) -> f64 {
        let (init_total, n_init, per_event) = self.grown_volumes();
        init_total + (self.cluster.balls.len() - n_init) as f64 * per_event
    }

    fn ball_at_volume(&self, u: f64) -> Ball {
        let c = self.cluster;
        let (init_total, n_init, per_event) = self.grown_volumes();
        let i = if u < init_total || c.balls.len() == n_init {
            if self.grow == 0.0 {
                let mut acc = 0.0;
                c.balls
                    .iter()
                    .take(n_init)
                    .position(|b| {
                        acc += b.ball.volume();
                        u < acc
                    })
                    .unwrap_or(n_init - 1)
            } else {
                c.initial.partition_point(|&v| v <= u).min(n_init - 1)
            }
        } else {
            let k = ((u - init_total) / per_event) as usize;
            n_init + k.min(c.balls.len() - n_init - 1)
        };
        c.balls[i].ball.grown(self.grow)
    }

    fn cover_count(&self, x: &[f64]) -> usize {
        let c = self.cluster;
        c.index
            .candidates(x)
            .filter(|&&i| {
                let b = &c.balls[i as usize].ball;
                let r = b.radius() + self.grow;
                dist2(b.center(), x) <= r * r
            })
            .count()
    }

    fn cover_count_until(&self, x: &[f64], stop: &mut dyn FnMut(usize) -> bool) -> usize {
        let c = self.cluster;
        let hits = c.index.candidates(x).filter(|&&i| {
            let b = &c.balls[i as usize].ball;
            let r = b.radius() + self.grow;
            dist2(b.center(), x) <= r * r
        });
        geometry::count_until(hits, stop)
    }

    fn for_each_ball(&self, f: &mut dyn FnMut(&Ball)) {
        for b in self.cluster.balls.iter() {
            f(&b.ball.grown(self.grow));
        }
    }
}

/// Random streams driving one trajectory: centres and uniforms come from
/// separate substreams of the root seed.
#[derive(Clone, Debug)]
pub struct ChainRng {
    pub centers: StreamRng,
    pub uniforms: StreamRng,
}

impl ChainRng {
    pub fn new(seed: u64) -> Self {
        ChainRng {
            centers: substream(seed, Purpose::Centers, 0),
            uniforms: substream(seed, Purpose::Uniforms, 0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ChainState {
    params: Arc<Params>,
    initial: Arc<InitialField>,
    step: usize,
    events: Vector<Event>,
    cover: GridIndex<CoverEntry>,
    cluster: Cluster,
    positives: usize,
    last_positive: usize,
    max_tries: u64,
}

impl ChainState {
    /// State at `n = 0`: empty log, cluster equal to the initial ball(s).
    pub fn new(params: Params) -> Result<Self> {
        let initial = params.initial_field()?;
        let cluster = Cluster::new(&initial, params.radius);
        Ok(ChainState {
            cover: GridIndex::new(params.radius),
            params: Arc::new(params),
            initial: Arc::new(initial),
            step: 0,
            events: Vector::new(),
            cluster,
            positives: 0,
            last_positive: 0,
            max_tries: geometry::DEFAULT_MAX_TRIES,
        })
    }

    pub fn with_max_tries(mut self, max_tries: u64) -> Self {
        self.max_tries = max_tries;
        self
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn initial(&self) -> &InitialField {
        &self.initial
    }

    /// Current step `n`.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn events(&self) -> &Vector<Event> {
        &self.events
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    /// `Delta_k` for `k <= n`.
    pub fn cluster_at(&self, k: usize) -> BallUnion {
        self.cluster.union_at(k)
    }

    pub fn positive_count(&self) -> usize {
        self.positives
    }

    /// Index of the last positive event, 0 if there is none.
    pub fn last_positive(&self) -> usize {
        self.last_positive
    }

    /// `Y_n(x)`.
    pub fn evaluate_frequency(&self, x: &[f64]) -> f64 {
        self.frequency_at_step(x, self.step)
    }

    /// `Y_k(x)` for `k <= n`, replaying only covering events with index `<= k`.
    pub fn frequency_at_step(&self, x: &[f64], k: usize) -> f64 {
        debug_assert_eq!(x.len(), self.params.dim);
        let u = self.params.impact;
        let r2 = self.params.radius * self.params.radius;
        // Past the last positive event every update is y <- (1 - U) y, so a
        // value that has reached exactly 0 stays there.
        let last_positive = if k >= self.step { self.last_positive } else { usize::MAX };
        let mut y = self.initial.value_at(x);
        for e in self.cover.bucket(x) {
            if e.index as usize > k || (y == 0.0 && e.index as usize > last_positive) {
                break;
            }
            if dist2(&e.center, x) <= r2 {
                let eps = if e.positive { 1.0 } else { 0.0 };
                y += u * (eps - y);
            }
        }
        y
    }

    /// Indices (in order) of the events whose ball contains `x`.
    pub fn covering_events(&self, x: &[f64]) -> Vec<usize> {
        let r2 = self.params.radius * self.params.radius;
        self.cover
            .bucket(x)
            .filter(|e| dist2(&e.center, x) <= r2)
            .map(|e| e.index as usize)
            .collect()
    }

    /// Draw `C_{n+1}` uniformly on `Delta_n^R`, `V_{n+1}` uniformly on
    /// `[0, 1)`, and apply the event in place.
    pub fn advance(&mut self, rng: &mut ChainRng) -> Result<Event> {
        let center = geometry::sample_uniform(&self.cluster.expanded(), &mut rng.centers, self.max_tries)?;
        let uniform: f64 = rng.uniforms.random();
        self.apply_event(center, uniform)
    }

    /// Persistent form of [`advance`](Self::advance): `self` is left untouched.
    pub fn step_from(&self, rng: &mut ChainRng) -> Result<(ChainState, Event)> {
        let mut next = self.clone();
        let ev = next.advance(rng)?;
        Ok((next, ev))
    }

    /// Apply an event with a given centre and uniform draw. The centre must
    /// lie in `Delta_n^R`.
    pub fn apply_event(&mut self, center: Point, uniform: f64) -> Result<Event> {
        if center.dim() != self.params.dim {
            return Err(Error::DimensionMismatch {
                expected: self.params.dim,
                got: center.dim(),
            });
        }
        if !self.cluster.expansion_contains(&center) {
            return Err(Error::param("center", "event centre outside the R-expansion of the cluster"));
        }
        let freq = self.evaluate_frequency(&center);
        let positive = uniform <= freq;
        let n = self.step + 1;
        let ball = Ball::new(center.clone(), self.params.radius)?;
        self.cover.insert(
            &ball,
            CoverEntry {
                index: n as u32,
                center: center.clone(),
                positive,
            },
        );
        if positive {
            self.cluster.push(ball, n);
            self.positives += 1;
            self.last_positive = n;
        }
        let ev = Event {
            index: n,
            center,
            uniform,
            positive,
            freq_at_center: freq,
        };
        self.events.push_back(ev.clone());
        self.step = n;
        Ok(ev)
    }
}

/// Called after every step with the pre-step state, the event and the
/// post-step state.
pub trait StepObserver {
    fn observe(&mut self, pre: &ChainState, event: &Event, post: &ChainState) -> Result<()>;
}

impl<F> StepObserver for F
where
    F: FnMut(&ChainState, &Event, &ChainState) -> Result<()>,
{
    fn observe(&mut self, pre: &ChainState, event: &Event, post: &ChainState) -> Result<()> {
        self(pre, event, post)
    }
}

/// A trajectory: the current state and the random streams that produced it,
/// so it can be extended deterministically.
#[derive(Clone, Debug)]
pub struct Trajectory {
    state: ChainState,
    rng: ChainRng,
}

impl Trajectory {
    pub fn new(params: Params) -> Result<Self> {
        let rng = ChainRng::new(params.seed);
        Ok(Trajectory {
            state: ChainState::new(params)?,
            rng,
        })
    }

    /// Wrap an existing state (for instance a replayed record). Further steps
    /// draw from fresh streams of the state's seed, so they do not continue
    /// the streams that produced the state.
    pub fn from_state(state: ChainState) -> Self {
        Trajectory {
            rng: ChainRng::new(state.params().seed),
            state,
        }
    }

    pub fn extend(&mut self, steps: usize, observers: &mut [&mut dyn StepObserver]) -> Result<()> {
        for _ in 0..steps {
            if observers.is_empty() {
                self.state.advance(&mut self.rng)?;
            } else {
                let pre = self.state.clone();
                let ev = self.state.advance(&mut self.rng)?;
                for obs in observers.iter_mut() {
                    obs.observe(&pre, &ev, &self.state)?;
                }
            }
        }
        Ok(())
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn into_state(self) -> ChainState {
        self.state
    }

    pub fn params(&self) -> &Params {
        self.state.params()
    }

    pub fn events(&self) -> &Vector<Event> {
        self.state.events()
    }

    /// Last positive index among events `1..=horizon`.
    pub fn last_positive_within(&self, horizon: usize) -> usize {
        self.state
            .events()
            .iter()
            .take(horizon)
            .filter(|e| e.positive)
            .map(|e| e.index)
            .last()
            .unwrap_or(0)
    }
}

/// Run `n_steps` from the initial condition in `params`, calling every
/// observer after each step.
pub fn run(params: Params, n_steps: usize, observers: &mut [&mut dyn StepObserver]) -> Result<Trajectory> {
    let mut t = Trajectory::new(params)?;
    t.extend(n_steps, observers)?;
    Ok(t)
}
