use serde::{Deserialize, Serialize};

use super::{mc_ball_average, mc_samples, total_mass, AlphaConfig, Method, Snapshot};
use crate::chain::{ChainState, Event, StepObserver};
use crate::oracle::PiecewiseField1D;
use crate::rng::{substream, Purpose, StreamRng};
use crate::stats::Estimate;
use crate::Result;

/// Masses `M_0, ..., M_n` and increments `M_{k+1} - M_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassSeries {
    pub method: Method,
    pub masses: Vec<Estimate>,
    pub increments: Vec<Estimate>,
}

impl MassSeries {
    pub fn new(method: Method, initial: Estimate) -> Self {
        MassSeries {
            method,
            masses: vec![initial],
            increments: Vec::new(),
        }
    }

    pub fn push(&mut self, mass: Estimate, increment: Estimate) {
        self.masses.push(mass);
        self.increments.push(increment);
    }

    /// Steps covered.
    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    /// Series restricted to the first `steps` increments.
    pub fn truncated(&self, steps: usize) -> MassSeries {
        let k = steps.min(self.len());
        MassSeries {
            method: self.method,
            masses: self.masses[..=k].to_vec(),
            increments: self.increments[..k].to_vec(),
        }
    }
}

/// Observer that records the mass series of a trajectory.
///
/// Exact mode keeps the oracle field up to date event by event. Monte Carlo
/// mode estimates each `M_{n+1}` on the post-step state and each increment
/// locally as `int_{B(C,R)} (Y_{n+1} - Y_n)`, which is far less noisy than
/// differencing two mass estimates.
pub struct MassTracker {
    field: Option<PiecewiseField1D>,
    series: MassSeries,
    rng: StreamRng,
}

impl MassTracker {
    pub fn new(state: &ChainState, method: Method) -> Result<Self> {
        let mut rng = substream(state.params().seed, Purpose::Estimator, u64::MAX);
        let (field, m0) = if method == Method::Exact1d {
            let f = Snapshot::new(state).exact_field()?.clone();
            let m = f.exact_mass();
            (Some(f), Estimate::exact(m))
        } else {
            (None, total_mass(&Snapshot::new(state), method, &mut rng)?)
        };
        Ok(MassTracker {
            field,
            series: MassSeries::new(method, m0),
            rng,
        })
    }

    pub fn series(&self) -> &MassSeries {
        &self.series
    }

    pub fn into_series(self) -> MassSeries {
        self.series
    }

    /// The current exact field (exact mode only).
    pub fn field(&self) -> Option<&PiecewiseField1D> {
        self.field.as_ref()
    }
}

impl StepObserver for MassTracker {
    fn observe(&mut self, pre: &ChainState, event: &Event, post: &ChainState) -> Result<()> {
        let p = post.params();
        match &mut self.field {
            Some(f) => {
                let inc = f.event_increment(event.center[0], p.radius, p.impact, event.positive);
                f.apply_event(event.center[0], p.radius, p.impact, event.positive);
                self.series.push(Estimate::exact(f.exact_mass()), Estimate::exact(inc));
            }
            None => {
                use rand::Rng;
                let method = self.series.method;
                let samples = mc_samples(method)?;
                let inc = mc_ball_average(pre, &event.center, samples, self.rng.random(), |z| {
                    post.evaluate_frequency(z) - pre.evaluate_frequency(z)
                })?;
                let m = total_mass(&Snapshot::new(post), method, &mut self.rng)?;
                self.series.push(m, inc);
            }
        }
        Ok(())
    }
}

/// `tau_alpha` estimated from a finite series. This is a horizon-censored
/// value: the series says nothing about increments after `horizon`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TauAlpha {
    pub index: usize,
    pub horizon: usize,
}

/// `1 + max{n : |M_{n+1} - M_n| >= alpha}`, or 0 when every increment is
/// below `alpha`.
pub fn tau_alpha_estimate(series: &MassSeries, cfg: AlphaConfig) -> TauAlpha {
    let index = series
        .increments
        .iter()
        .rposition(|inc| inc.value.abs() >= cfg.alpha)
        .map_or(0, |n| n + 1);
    TauAlpha {
        index,
        horizon: series.len(),
    }
}
