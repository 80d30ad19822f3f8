//! Monotone coupling of two chains driven by the same randomness.

use rand::Rng;

use super::{ChainRng, ChainState};
use crate::geometry;
use crate::{Error, Result};

fn check_pair(lower: &ChainState, upper: &ChainState) -> Result<()> {
    let (a, b) = (lower.params(), upper.params());
    if a.dim != b.dim || a.radius != b.radius || a.impact != b.impact {
        return Err(Error::Coupling("chains must share d, R and U".into()));
    }
    let up = upper.cluster().expanded();
    let reach = a.radius;
    for ball in lower.cluster().balls() {
        let grown = ball.grown(reach);
        let mut covered = false;
        up.for_each_candidate(grown.center(), &mut |cand| covered |= grown.inside(cand));
        if !covered {
            return Err(Error::Coupling(
                "upper cluster expansion does not contain the lower one".into(),
            ));
        }
    }
    Ok(())
}

/// Draw `(C, V)` for the upper chain and apply it there; apply the same pair
/// to the lower chain only when `C` falls in the lower chain's `Delta^R`.
/// Outside that set the lower field vanishes on `B(C, R)`, so the thinning
/// loses nothing.
pub fn coupled_step(lower: &ChainState, upper: &ChainState, rng: &mut ChainRng) -> Result<(ChainState, ChainState)> {
    check_pair(lower, upper)?;
    let center = geometry::sample_uniform(&upper.cluster().expanded(), &mut rng.centers, geometry::DEFAULT_MAX_TRIES)?;
    let v: f64 = rng.uniforms.random();
    let mut up = upper.clone();
    up.apply_event(center.clone(), v)?;
    let mut low = lower.clone();
    if low.cluster().expansion_contains(&center) {
        low.apply_event(center, v)?;
    }
    Ok((low, up))
}
