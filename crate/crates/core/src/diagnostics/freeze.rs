use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{mc_samples, AlphaConfig, Method};
use crate::chain::{Params, Trajectory};
use crate::exec;
use crate::geometry::{self, chunked_mean, uniform_in_ball, Ball, Point};
use crate::oracle::PiecewiseField1D;
use crate::rng::{substream, Purpose};
use crate::stats::Estimate;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreezeOptions {
    pub alpha: AlphaConfig,
    pub method: Method,
    /// Random probe points (on top of the ball centres) for `sup Y` when the
    /// field is not known exactly.
    pub probes: usize,
}

impl FreezeOptions {
    /// Exact on the line, Monte Carlo otherwise; default `alpha`.
    pub fn for_params(params: &Params) -> Self {
        FreezeOptions {
            alpha: AlphaConfig::default_for(params),
            method: if params.dim == 1 { Method::Exact1d } else { Method::default() },
            probes: 4096,
        }
    }
}

/// Empirical freeze summary at a finite horizon. Whether `eps_n = 0` holds
/// forever cannot be decided from a finite run; `kappa_hat` is the last
/// positive event seen, and the `*_stable` flags say whether the estimates
/// survive doubling the horizon (present when the trajectory is long enough).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreezeReport {
    pub schema_version: u32,
    pub seed: u64,
    pub n_steps: usize,
    pub kappa_hat: usize,
    pub positives: usize,
    pub sup_freq: f64,
    pub tau_alpha_hat: usize,
    /// Always true: `tau_alpha` is not a stopping time.
    pub tau_alpha_censored: bool,
    pub cluster_volume: Estimate,
    pub kappa_doubled: Option<usize>,
    pub kappa_stable: Option<bool>,
    pub tau_alpha_stable: Option<bool>,
}

fn tau_from(increments: &[f64], alpha: f64) -> usize {
    increments.iter().rposition(|d| d.abs() >= alpha).map_or(0, |n| n + 1)
}

/// Freeze report at `horizon` for a trajectory of at least that length.
pub fn freeze_report(traj: &Trajectory, horizon: usize, opts: &FreezeOptions) -> Result<FreezeReport> {
    let state = traj.state();
    let p = state.params();
    if state.step() < horizon {
        return Err(Error::param("horizon", format!("trajectory has {} steps, fewer than {horizon}", state.step())));
    }
    opts.alpha.validate(p)?;
    let doubled = horizon.checked_mul(2).filter(|&h2| h2 <= state.step() && horizon > 0);
    let upto = doubled.unwrap_or(horizon);
    let events = state.events();
    let eps = |k: usize| if events[k].positive { 1.0 } else { 0.0 };

    let (increments, sup_freq) = if opts.method == Method::Exact1d {
        if p.dim != 1 {
            return Err(Error::ExactRequiresLine(p.dim));
        }
        let mut f = PiecewiseField1D::from_initial(state.initial())?;
        let mut incs = Vec::with_capacity(upto);
        let mut sup = f.max_value();
        for (k, ev) in events.iter().take(upto).enumerate() {
            incs.push(f.event_increment(ev.center[0], p.radius, p.impact, ev.positive));
            f.apply_event(ev.center[0], p.radius, p.impact, ev.positive);
            if k + 1 == horizon {
                sup = f.max_value();
            }
        }
        (incs, sup)
    } else {
        let samples = mc_samples(opts.method)?;
        let mut rng = substream(p.seed, Purpose::Estimator, 1);
        let mut incs = Vec::with_capacity(upto);
        for (k, ev) in events.iter().take(upto).enumerate() {
            // Lemma form U (eps V(R) - Phi_k(C)), with Phi_k from the log prefix.
            let ball = Ball::new(ev.center.clone(), p.radius)?;
            let phi = chunked_mean(exec::default_execution(), samples, rng.random(), |r| {
                Ok(state.frequency_at_step(&uniform_in_ball(&ball, r), k))
            })?;
            incs.push(p.impact * (eps(k) * p.event_volume() - p.event_volume() * phi.mean()));
        }
        let cluster = state.cluster_at(horizon);
        let mut probe = substream(p.seed, Purpose::Probes, horizon as u64);
        let mut sup: f64 = 0.0;
        for b in cluster.balls() {
            sup = sup.max(state.frequency_at_step(b.center(), horizon));
        }
        for _ in 0..opts.probes {
            let x: Point = geometry::sample_uniform(&cluster, &mut probe, geometry::DEFAULT_MAX_TRIES)?;
            sup = sup.max(state.frequency_at_step(&x, horizon));
        }
        (incs, sup)
    };

    let kappa_hat = traj.last_positive_within(horizon);
    let tau = tau_from(&increments[..horizon], opts.alpha.alpha);
    let cluster = state.cluster_at(horizon);
    let volume_method = if p.dim == 1 { Method::Exact1d } else { opts.method };
    let mut vrng = substream(p.seed, Purpose::Estimator, 2);
    let cluster_volume = geometry::union_volume(&cluster, volume_method, &mut vrng)?;
    let kappa_doubled = doubled.map(|h2| traj.last_positive_within(h2));
    Ok(FreezeReport {
        schema_version: crate::chain::record::SCHEMA_VERSION,
        seed: p.seed,
        n_steps: horizon,
        kappa_hat,
        positives: events.iter().take(horizon).filter(|e| e.positive).count(),
        sup_freq: sup_freq.clamp(0.0, 1.0),
        tau_alpha_hat: tau,
        tau_alpha_censored: true,
        cluster_volume,
        kappa_doubled,
        kappa_stable: kappa_doubled.map(|k| k == kappa_hat),
        tau_alpha_stable: doubled.map(|_| tau_from(&increments, opts.alpha.alpha) == tau),
    })
}
