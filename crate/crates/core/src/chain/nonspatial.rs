//! Non-spatial warm-up chain `Z_{n+1} = (1 - U) Z_n + U eps_{n+1}`,
//! `eps_{n+1} ~ Bernoulli(Z_n)`.

use rand::Rng;

pub fn nonspatial_step<R: Rng + ?Sized>(z: f64, impact: f64, rng: &mut R) -> f64 {
    draw(z, impact, rng).0
}

fn draw<R: Rng + ?Sized>(z: f64, impact: f64, rng: &mut R) -> (f64, bool) {
    debug_assert!((0.0..=1.0).contains(&z));
    let u: f64 = rng.random();
    let eps = u < z;
    // Same update form as the spatial chain; keeps 0 and 1 exactly absorbing.
    let next = z + impact * (if eps { 1.0 } else { 0.0 } - z);
    (next, eps)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NonspatialOutcome {
    pub terminal: f64,
    /// Last step `n >= 2` with `eps_n != eps_{n-1}`, 0 if the draws never changed.
    pub last_flip: usize,
}

pub fn nonspatial_run<R: Rng + ?Sized>(z0: f64, impact: f64, steps: usize, rng: &mut R) -> NonspatialOutcome {
    let mut z = z0;
    let mut prev = None;
    let mut last_flip = 0;
    for n in 1..=steps {
        let (next, eps) = draw(z, impact, rng);
        if let Some(p) = prev {
            if p != eps {
                last_flip = n;
            }
        }
        prev = Some(eps);
        z = next;
    }
    NonspatialOutcome { terminal: z, last_flip }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Purpose};
    use crate::stats::Welford;

    #[test]
    fn absorbing_states() {
        let mut rng = substream(0, Purpose::Uniforms, 0);
        for _ in 0..1000 {
            assert_eq!(nonspatial_step(0.0, 0.3, &mut rng), 0.0);
            assert_eq!(nonspatial_step(1.0, 0.3, &mut rng), 1.0);
        }
        let o = nonspatial_run(0.0, 0.5, 100, &mut rng);
        assert_eq!(o, NonspatialOutcome { terminal: 0.0, last_flip: 0 });
    }

    #[test]
    fn one_step_mean_is_input() {
        let mut rng = substream(1, Purpose::Uniforms, 0);
        for (z, u) in [(0.3, 0.5), (0.9, 0.2), (0.05, 0.8)] {
            let w: Welford = (0..200_000).map(|_| nonspatial_step(z, u, &mut rng)).collect();
            assert!(w.estimate().within(z, 4.0, 0.0), "z={z}: {:?}", w.estimate());
        }
    }
}
