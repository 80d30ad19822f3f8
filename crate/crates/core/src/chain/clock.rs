//! Continuous-time embedding: exponential holding times with rate
//! `lambda(Y_n) = |Delta_n^R|`.

use rand::Rng;
use rand_distr::Exp1;

use super::{ChainState, Cluster};
use crate::geometry::{union_volume, VolumeMethod};
use crate::rng::{substream, Purpose};
use crate::stats::Estimate;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ClockSchedule {
    /// `T_0 = 0 < T_1 < ... < T_n`.
    pub jump_times: Vec<f64>,
    /// `rates[k]` is the rate used for the holding time `T_{k+1} - T_k`.
    pub rates: Vec<Estimate>,
}

impl ClockSchedule {
    pub fn horizon(&self) -> f64 {
        *self.jump_times.last().unwrap()
    }

    /// The `n` with `T_n <= t < T_{n+1}`.
    pub fn step_at(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0) || t >= self.horizon() {
            return Err(Error::BeyondHorizon {
                t,
                horizon: self.horizon(),
            });
        }
        Ok(self.jump_times.partition_point(|&s| s <= t) - 1)
    }
}

/// Jump times for every event recorded in `state`. Exponential draws come
/// from `rng`; Monte Carlo rate estimates use their own per-step substreams,
/// so the sample count does not shift the exponentials.
pub fn jump_schedule<R: Rng + ?Sized>(state: &ChainState, rng: &mut R, method: VolumeMethod) -> Result<ClockSchedule> {
    let params = state.params();
    if matches!(method, VolumeMethod::Exact1d) && params.dim != 1 {
        return Err(Error::ExactRequiresLine(params.dim));
    }
    let mut cluster = Cluster::new(state.initial(), params.radius);
    let mut jump_times = Vec::with_capacity(state.events().len() + 1);
    let mut rates = Vec::with_capacity(state.events().len());
    jump_times.push(0.0);
    let mut t = 0.0;
    let mut rate = None;
    for (k, ev) in state.events().iter().enumerate() {
        let lambda = match rate {
            Some(r) => r,
            None => {
                let mut est_rng = substream(params.seed, Purpose::Estimator, k as u64);
                let r = union_volume(&cluster.expanded(), method, &mut est_rng)?;
                rate = Some(r);
                r
            }
        };
        let e: f64 = rng.sample(Exp1);
        t += e / lambda.value;
        jump_times.push(t);
        rates.push(lambda);
        if ev.positive {
            cluster.push(crate::geometry::Ball::new(ev.center.clone(), params.radius)?, ev.index);
            rate = None;
        }
    }
    Ok(ClockSchedule { jump_times, rates })
}

/// `X_t(x) = Y_n(x)` for `T_n <= t < T_{n+1}`.
pub fn continuous_query(schedule: &ClockSchedule, state: &ChainState, t: f64, x: &[f64]) -> Result<f64> {
    let n = schedule.step_at(t)?;
    Ok(state.frequency_at_step(x, n))
}
