//! Executable versions of the analytic instruments: total mass `M_n`, local
//! averages `Phi_n`, the mass-change identity, the martingale drift, `tau_alpha`,
//! the forbidden region `F_n` with its threshold `psi`, the Lipschitz bound on
//! `Phi_n` and the product bound on late positive events.
//!
//! Every estimator takes a [`Method`]. `Exact1d` works on the piecewise
//! constant oracle field and is exact up to rounding; `MonteCarlo` works in any
//! dimension and reports a standard error. Monte Carlo estimators draw one
//! `u64` from the caller's generator and derive all their substreams from it.

mod freeze;
mod series;
pub mod suite;

use std::cell::OnceCell;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{ChainState, Event, Params};
use crate::exec;
use crate::geometry::{self, chunked_mean, merge_intervals, uniform_in_ball, Ball, CoverSet, Point};
use crate::oracle::PiecewiseField1D;
use crate::rng::StreamRng;
use crate::stats::Estimate;
use crate::{Error, Result};

pub use freeze::{freeze_report, FreezeOptions, FreezeReport};
pub use series::{tau_alpha_estimate, MassSeries, MassTracker, TauAlpha};

pub type Method = geometry::VolumeMethod;

/// Absolute tolerance for exact-mode comparisons.
pub const EXACT_TOL: f64 = 1e-9;
/// Width of the Monte Carlo acceptance gate, in standard errors.
pub const MC_GATE: f64 = 4.0;
/// Inner samples per outer point when estimating `|F_n|` by Monte Carlo.
pub const FORBIDDEN_INNER_SAMPLES: usize = 256;

/// The mass-increment threshold `alpha`, with `0 < alpha < U V(R) / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaConfig {
    pub alpha: f64,
}

impl AlphaConfig {
    pub fn new(alpha: f64, params: &Params) -> Result<Self> {
        let cfg = AlphaConfig { alpha };
        cfg.validate(params)?;
        Ok(cfg)
    }

    /// `alpha = U V(R) / 4`, halfway inside the admissible range.
    pub fn default_for(params: &Params) -> Self {
        AlphaConfig {
            alpha: params.impact * params.event_volume() / 4.0,
        }
    }

    pub fn validate(&self, params: &Params) -> Result<()> {
        let cap = params.impact * params.event_volume() / 2.0;
        if !(self.alpha > 0.0 && self.alpha < cap) {
            return Err(Error::param("alpha", format!("{} must lie in (0, U V(R)/2 = {cap})", self.alpha)));
        }
        Ok(())
    }

    /// `(alpha / U, V(R) - alpha / U)`, the band defining `F_n`.
    pub fn band(&self, params: &Params) -> (f64, f64) {
        let g = self.alpha / params.impact;
        (g, params.event_volume() - g)
    }
}

/// A state together with its exact oracle field, built on first use (or
/// supplied by a caller that maintains it incrementally).
pub struct Snapshot<'a> {
    state: &'a ChainState,
    given: Option<&'a PiecewiseField1D>,
    built: OnceCell<PiecewiseField1D>,
}

impl<'a> Snapshot<'a> {
    pub fn new(state: &'a ChainState) -> Self {
        Snapshot {
            state,
            given: None,
            built: OnceCell::new(),
        }
    }

    /// The caller guarantees that `field` is the field of `state`.
    pub fn with_field(state: &'a ChainState, field: &'a PiecewiseField1D) -> Self {
        Snapshot {
            state,
            given: Some(field),
            built: OnceCell::new(),
        }
    }

    pub fn state(&self) -> &'a ChainState {
        self.state
    }

    pub fn params(&self) -> &'a Params {
        self.state.params()
    }

    pub fn field(&self) -> Result<&PiecewiseField1D> {
        if let Some(f) = self.given {
            return Ok(f);
        }
        if let Some(f) = self.built.get() {
            return Ok(f);
        }
        let f = PiecewiseField1D::from_state(self.state)?;
        Ok(self.built.get_or_init(|| f))
    }

    fn exact_field(&self) -> Result<&PiecewiseField1D> {
        require_line(self.state)?;
        self.field()
    }
}

impl<'a> From<&'a ChainState> for Snapshot<'a> {
    fn from(state: &'a ChainState) -> Self {
        Snapshot::new(state)
    }
}

fn require_line(state: &ChainState) -> Result<()> {
    match state.dim() {
        1 => Ok(()),
        d => Err(Error::ExactRequiresLine(d)),
    }
}

fn mc_samples(method: Method) -> Result<usize> {
    match method {
        Method::MonteCarlo { samples } if samples > 0 => Ok(samples),
        Method::MonteCarlo { .. } => Err(Error::param("samples", "must be positive")),
        Method::Exact1d => unreachable!("exact handled by caller"),
    }
}

fn check_point(state: &ChainState, x: &[f64]) -> Result<()> {
    if x.len() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// `V(R) * mean Y(x + z)` over `z` uniform in `B(0, R)`.
fn mc_ball_average(state: &ChainState, x: &[f64], samples: usize, base: u64, y: impl Fn(&[f64]) -> f64 + Sync + Send) -> Result<Estimate> {
    let p = state.params();
    let ball = Ball::new(Point::new(x), p.radius)?;
    let acc = chunked_mean(exec::default_execution(), samples, base, |r| Ok(y(&uniform_in_ball(&ball, r))))?;
    Ok(acc.estimate().scale(p.event_volume()))
}

/// Total mass `M_n = int Y_n`.
///
/// The Monte Carlo estimator draws from the volume-weighted mixture of the
/// cluster balls and weights each point by `1 / cover count`, which gives an
/// unbiased estimate without first estimating `|Delta_n|`.
pub fn total_mass<R: Rng + ?Sized>(snap: &Snapshot<'_>, method: Method, rng: &mut R) -> Result<Estimate> {
    if method == Method::Exact1d {
        return Ok(Estimate::exact(snap.exact_field()?.exact_mass()));
    }
    let samples = mc_samples(method)?;
    let state = snap.state();
    let core = state.cluster().core();
    let total = core.total_ball_volume();
    let base: u64 = rng.random();
    let acc = chunked_mean(exec::default_execution(), samples, base, |r| {
        let ball = core.ball_at_volume(r.random::<f64>() * total);
        let x = uniform_in_ball(&ball, r);
        Ok(state.evaluate_frequency(&x) / core.cover_count(&x).max(1) as f64)
    })?;
    Ok(acc.estimate().scale(total))
}

/// Local average `Phi_n(x) = int_{B(x,R)} Y_n`.
pub fn local_average<R: Rng + ?Sized>(snap: &Snapshot<'_>, x: &[f64], method: Method, rng: &mut R) -> Result<Estimate> {
    let state = snap.state();
    check_point(state, x)?;
    if method == Method::Exact1d {
        return Ok(Estimate::exact(snap.exact_field()?.exact_phi(x[0], state.params().radius)));
    }
    let samples = mc_samples(method)?;
    mc_ball_average(state, x, samples, rng.random(), |z| state.evaluate_frequency(z))
}

/// `(M_{n+1} - M_n) - U (eps V(R) - Phi_n(C_{n+1}))`.
pub fn mass_change_check<R: Rng + ?Sized>(
    pre: &Snapshot<'_>,
    event: &Event,
    post: &Snapshot<'_>,
    method: Method,
    rng: &mut R,
) -> Result<Estimate> {
    check_transition(pre.state(), event, post.state())?;
    let p = pre.params();
    let eps = if event.positive { 1.0 } else { 0.0 };
    let m_pre = total_mass(pre, method, rng)?;
    let m_post = total_mass(post, method, rng)?;
    let phi = local_average(pre, &event.center, method, rng)?;
    let rhs = phi.scale(-p.impact);
    let residual = m_post.minus(m_pre).minus(Estimate {
        value: p.impact * eps * p.event_volume() + rhs.value,
        stderr: rhs.stderr,
    });
    Ok(residual)
}

fn check_transition(pre: &ChainState, event: &Event, post: &ChainState) -> Result<()> {
    if post.step() != pre.step() + 1 || event.index != post.step() {
        return Err(Error::param(
            "event",
            format!("expected the step {} -> {}, got event {} into step {}", pre.step(), pre.step() + 1, event.index, post.step()),
        ));
    }
    Ok(())
}

/// `E[M_{n+1} - M_n | state] = (U / |Delta_n^R|) int_{Delta_n^R} (Y_n(c) V(R) - Phi_n(c)) dc`.
///
/// Monte Carlo: `U V(R) mean(Y(c) - Y(z))` with `c` uniform on `Delta_n^R` and
/// `z` uniform in `B(c, R)`.
pub fn martingale_drift<R: Rng + ?Sized>(snap: &Snapshot<'_>, method: Method, rng: &mut R) -> Result<Estimate> {
    let state = snap.state();
    let p = state.params();
    if method == Method::Exact1d {
        let field = snap.exact_field()?;
        let mut domain = Vec::new();
        state.cluster().expanded().for_each_ball(&mut |b| domain.push(b.interval()));
        merge_intervals(&mut domain);
        return Ok(Estimate::exact(field.drift_over(&domain, p.radius, p.impact)));
    }
    let samples = mc_samples(method)?;
    let window = state.cluster().expanded();
    let base: u64 = rng.random();
    let acc = chunked_mean(exec::default_execution(), samples, base, |r| {
        let c = geometry::sample_uniform(&window, r, geometry::DEFAULT_MAX_TRIES)?;
        let z = uniform_in_ball(&Ball::new(c.clone(), p.radius)?, r);
        Ok(state.evaluate_frequency(&c) - state.evaluate_frequency(&z))
    })?;
    Ok(acc.estimate().scale(p.impact * p.event_volume()))
}

/// Slack `|y - x| S(R) - (Phi_n(y) - Phi_n(x))`; the bound holds when the
/// slack is nonnegative up to tolerance. Monte Carlo uses common offsets for
/// both points.
pub fn lipschitz_check<R: Rng + ?Sized>(snap: &Snapshot<'_>, x: &[f64], y: &[f64], method: Method, rng: &mut R) -> Result<Estimate> {
    let state = snap.state();
    check_point(state, x)?;
    check_point(state, y)?;
    let p = state.params();
    let bound = geometry::dist2(x, y).sqrt() * p.event_area();
    let diff = if method == Method::Exact1d {
        let f = snap.exact_field()?;
        Estimate::exact(f.exact_phi(y[0], p.radius) - f.exact_phi(x[0], p.radius))
    } else {
        let samples = mc_samples(method)?;
        let origin = Point::origin(p.dim);
        mc_ball_average(state, &origin, samples, rng.random(), |z| {
            let xs: Point = x.iter().zip(z).map(|(a, b)| a + b).collect::<Vec<_>>().into();
            let ys: Point = y.iter().zip(z).map(|(a, b)| a + b).collect::<Vec<_>>().into();
            state.evaluate_frequency(&ys) - state.evaluate_frequency(&xs)
        })?
    };
    Ok(Estimate {
        value: bound - diff.value,
        stderr: diff.stderr,
    })
}

/// Result of checking the dichotomy on one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintOutcome {
    pub delta_mass: Estimate,
    pub phi: Estimate,
    pub positive: bool,
    /// Whether `|Delta M| < alpha`, i.e. whether the dichotomy applies.
    pub applies: bool,
    /// `alpha/U - Phi` after a negative event, `Phi - (V(R) - alpha/U)` after
    /// a positive one.
    pub slack: f64,
    pub pass: bool,
}

/// If `|M_{n+1} - M_n| < alpha` then `eps = 0` forces `Phi_n(C) < alpha/U` and
/// `eps = 1` forces `Phi_n(C) > V(R) - alpha/U`.
///
/// Exact mode measures `Delta M` from the pre- and post-step fields. Monte
/// Carlo estimates `Delta M` as `int_{B(C,R)} (Y_{n+1} - Y_n)` and `Phi_n(C)`
/// from independent substreams; it refuses to classify when the standard
/// error of `Phi` is not small against `alpha/U`.
pub fn constraint_check<R: Rng + ?Sized>(
    pre: &Snapshot<'_>,
    event: &Event,
    cfg: AlphaConfig,
    method: Method,
    rng: &mut R,
) -> Result<ConstraintOutcome> {
    let state = pre.state();
    let p = state.params();
    cfg.validate(p)?;
    check_point(state, &event.center)?;
    let (lo, hi) = cfg.band(p);
    let (delta_mass, phi, tol) = if method == Method::Exact1d {
        let f = pre.exact_field()?;
        let post = f.with_event(event.center[0], p.radius, p.impact, event.positive);
        let dm = Estimate::exact(post.exact_mass() - f.exact_mass());
        (dm, Estimate::exact(f.exact_phi(event.center[0], p.radius)), EXACT_TOL)
    } else {
        let samples = mc_samples(method)?;
        let mut post = state.clone();
        let replayed = post.apply_event(event.center.clone(), event.uniform)?;
        if replayed.positive != event.positive {
            return Err(Error::ReplayMismatch {
                step: event.index,
                what: "sampling outcome differs".into(),
            });
        }
        let dm = mc_ball_average(state, &event.center, samples, rng.random(), |z| {
            post.evaluate_frequency(z) - state.evaluate_frequency(z)
        })?;
        let phi = mc_ball_average(state, &event.center, samples, rng.random(), |z| state.evaluate_frequency(z))?;
        if MC_GATE * phi.stderr >= lo {
            return Err(Error::EstimatorTooNoisy {
                stderr: phi.stderr,
                gap: lo,
            });
        }
        (dm, phi, MC_GATE * phi.stderr)
    };
    let applies = delta_mass.value.abs() < cfg.alpha;
    let slack = if event.positive { phi.value - hi } else { lo - phi.value };
    Ok(ConstraintOutcome {
        delta_mass,
        phi,
        positive: event.positive,
        applies,
        slack,
        pass: !applies || slack > -tol,
    })
}

/// `psi = V((V(R) - 2 alpha / U) / S(R))`.
pub fn psi_threshold(params: &Params, cfg: AlphaConfig) -> Result<f64> {
    cfg.validate(params)?;
    let inner = (params.event_volume() - 2.0 * cfg.alpha / params.impact) / params.event_area();
    geometry::ball_volume(params.dim, inner)
}

/// `|F_n|` with `F_n = {x : alpha/U <= Phi_n(x) <= V(R) - alpha/U}`.
///
/// Exact mode inverts the piecewise linear `Phi` in closed form. Monte Carlo
/// samples the `2R`-expansion of the cluster (outside it `Phi` vanishes) and
/// classifies each outer point with an inner estimate of `Phi` from
/// [`FORBIDDEN_INNER_SAMPLES`] draws, so `samples / FORBIDDEN_INNER_SAMPLES`
/// outer points are used (at least 64). The classification noise adds a
/// boundary bias that the reported standard error does not include.
pub fn forbidden_region_volume<R: Rng + ?Sized>(snap: &Snapshot<'_>, cfg: AlphaConfig, method: Method, rng: &mut R) -> Result<Estimate> {
    let state = snap.state();
    let p = state.params();
    cfg.validate(p)?;
    let (lo, hi) = cfg.band(p);
    if method == Method::Exact1d {
        let profile = snap.exact_field()?.phi_profile(p.radius);
        return Ok(Estimate::exact(profile.measure_between(lo, hi)));
    }
    let samples = mc_samples(method)?;
    let outer = (samples / FORBIDDEN_INNER_SAMPLES).max(64);
    let window = state.cluster().to_union().expansion(2.0 * p.radius)?;
    let total = window.total_ball_volume();
    let base: u64 = rng.random();
    let acc = chunked_mean(exec::default_execution(), outer, base, |r: &mut StreamRng| {
        let ball = window.ball_at_volume(r.random::<f64>() * total);
        let x = uniform_in_ball(&ball, r);
        let k = window.cover_count(&x).max(1) as f64;
        if !state.cluster().expansion_contains(&x) {
            return Ok(0.0);
        }
        let b = Ball::new(x, p.radius)?;
        let mut s = 0.0;
        for _ in 0..FORBIDDEN_INNER_SAMPLES {
            s += state.evaluate_frequency(&uniform_in_ball(&b, r));
        }
        let phi = p.event_volume() * s / FORBIDDEN_INNER_SAMPLES as f64;
        Ok(if (lo..=hi).contains(&phi) { 1.0 / k } else { 0.0 })
    })?;
    Ok(acc.estimate().scale(total))
}

/// The forbidden region seen from one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForbiddenRegionStats {
    pub step: usize,
    pub psi: f64,
    pub f_volume: Estimate,
    /// Whether `C_{n+1}` lies in `F_n`.
    pub center_in_f: bool,
    /// `sup Phi_n`, known exactly only on the line.
    pub sup_phi: Option<f64>,
}

pub fn forbidden_region_stats<R: Rng + ?Sized>(
    pre: &Snapshot<'_>,
    event: &Event,
    cfg: AlphaConfig,
    method: Method,
    rng: &mut R,
) -> Result<ForbiddenRegionStats> {
    let state = pre.state();
    let p = state.params();
    let psi = psi_threshold(p, cfg)?;
    let (lo, hi) = cfg.band(p);
    let f_volume = forbidden_region_volume(pre, cfg, method, rng)?;
    let (phi_c, sup_phi) = if method == Method::Exact1d {
        let profile = pre.exact_field()?.phi_profile(p.radius);
        (profile.value_at(event.center[0]), Some(profile.sup()))
    } else {
        (local_average(pre, &event.center, method, rng)?.value, None)
    };
    Ok(ForbiddenRegionStats {
        step: state.step(),
        psi,
        f_volume,
        center_in_f: (lo..=hi).contains(&phi_c),
        sup_phi,
    })
}

/// `prod_{j=l}^{n} (1 - psi / (|Delta_0^R| + j V(2R)))` with every factor
/// clamped to `[0, 1]`.
pub fn product_bound(params: &Params, cfg: AlphaConfig, delta0_r_volume: f64, l: usize, n: usize) -> Result<f64> {
    let psi = psi_threshold(params, cfg)?;
    let v2r = geometry::ball_volume(params.dim, 2.0 * params.radius)?;
    product_bound_with(psi, delta0_r_volume, v2r, l, n)
}

/// [`product_bound`] for an explicit `psi` and `V(2R)`.
pub fn product_bound_with(psi: f64, delta0_r_volume: f64, v2r: f64, l: usize, n: usize) -> Result<f64> {
    if l > n {
        return Err(Error::param("l", format!("{l} exceeds n = {n}")));
    }
    if !(psi >= 0.0 && delta0_r_volume > 0.0 && v2r > 0.0) {
        return Err(Error::param("psi", "volumes must be positive and psi nonnegative"));
    }
    let mut acc = 1.0;
    for j in l..=n {
        acc *= (1.0 - psi / (delta0_r_volume + j as f64 * v2r)).clamp(0.0, 1.0);
        if acc == 0.0 {
            break;
        }
    }
    Ok(acc)
}

/// `|Delta_0^R| + n V(2R)`, the growth bound for `|Delta_n^R|`.
pub fn growth_bound(delta0_r_volume: f64, params: &Params, n: usize) -> Result<f64> {
    Ok(delta0_r_volume + n as f64 * geometry::ball_volume(params.dim, 2.0 * params.radius)?)
}
