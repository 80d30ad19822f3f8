use crate::chain::{ChainState, InitialField};
use crate::geometry::merge_intervals;
use crate::{Error, Result};

/// Relative tolerance below which adjacent positive pieces are merged.
pub const MERGE_TOLERANCE: f64 = 1e-14;

/// Exact piecewise constant field on the line.
///
/// `values[i]` holds on `[breaks[i], breaks[i + 1])`; the field is zero left of
/// the first and right of the last breakpoint. The zero field has no
/// breakpoints at all.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PiecewiseField1D {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseField1D {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Build from breakpoints and interior values; end pieces are implicitly 0.
    pub fn from_parts(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breaks.is_empty() && values.is_empty() {
            return Ok(Self::zero());
        }
        if breaks.len() != values.len() + 1 {
            return Err(Error::param("breaks", "need exactly one more breakpoint than values"));
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::param("breaks", "must be strictly increasing"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::param("values", "must lie in [0, 1]"));
        }
        let mut f = PiecewiseField1D { breaks, values };
        f.normalize();
        Ok(f)
    }

    pub fn from_initial(initial: &InitialField) -> Result<Self> {
        let dim = initial.blocks()[0].0.dim();
        if dim != 1 {
            return Err(Error::ExactRequiresLine(dim));
        }
        let mut breaks: Vec<f64> = initial
            .blocks()
            .iter()
            .flat_map(|(b, _)| {
                let (lo, hi) = b.interval();
                [lo, hi]
            })
            .collect();
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let values = breaks
            .windows(2)
            .map(|w| initial.value_at(&[0.5 * (w[0] + w[1])]))
            .collect();
        let mut f = PiecewiseField1D { breaks, values };
        f.normalize();
        Ok(f)
    }

    /// Replay a whole state's log on its initial field.
    pub fn from_state(state: &ChainState) -> Result<Self> {
        let mut f = Self::from_initial(state.initial())?;
        let p = state.params();
        for ev in state.events() {
            f.apply_event(ev.center[0], p.radius, p.impact, ev.positive);
        }
        Ok(f)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn piece_count(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn value_at(&self, x: f64) -> f64 {
        if self.breaks.is_empty() || x < self.breaks[0] || x >= *self.breaks.last().unwrap() {
            return 0.0;
        }
        self.values[self.breaks.partition_point(|&b| b <= x) - 1]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    fn ensure_break(&mut self, x: f64) -> usize {
        if self.breaks.is_empty() {
            self.breaks.push(x);
            return 0;
        }
        let i = self.breaks.partition_point(|&b| b < x);
        if i < self.breaks.len() && self.breaks[i] == x {
            return i;
        }
        let v = if i == 0 || i == self.breaks.len() { 0.0 } else { self.values[i - 1] };
        self.breaks.insert(i, x);
        if i == 0 {
            self.values.insert(0, 0.0);
        } else if i == self.breaks.len() - 1 {
            self.values.push(0.0);
        } else {
            self.values.insert(i, v);
        }
        i
    }

    /// `Y <- Y + U 1_{[c - R, c + R]} (eps - Y)`.
    pub fn apply_event(&mut self, center: f64, radius: f64, impact: f64, positive: bool) {
        let (lo, hi) = (center - radius, center + radius);
        let i = self.ensure_break(lo);
        let j = self.ensure_break(hi);
        let eps = if positive { 1.0 } else { 0.0 };
        for v in &mut self.values[i..j] {
            *v += impact * (eps - *v);
        }
        self.normalize_around(i.saturating_sub(1), j + 1);
    }

    /// Mass change the event would cause, `U (eps 2R - int_{c-R}^{c+R} Y)`,
    /// computed locally instead of by differencing two total masses.
    pub fn event_increment(&self, center: f64, radius: f64, impact: f64, positive: bool) -> f64 {
        let eps = if positive { 1.0 } else { 0.0 };
        impact * (eps * 2.0 * radius - self.integral(center - radius, center + radius))
    }

    pub fn with_event(&self, center: f64, radius: f64, impact: f64, positive: bool) -> Self {
        let mut f = self.clone();
        f.apply_event(center, radius, impact, positive);
        f
    }

    fn mergeable(a: f64, b: f64) -> bool {
        a == b || (a > 0.0 && b > 0.0 && (a - b).abs() <= MERGE_TOLERANCE * a.max(b))
    }

    /// Local form of [`Self::normalize`] after pieces `from..until` changed:
    /// everything else is already normalised, so the merge pass starts at
    /// `from` and stops at the first unmerged piece at or past `until`. The
    /// result is identical to a full pass.
    fn normalize_around(&mut self, from: usize, until: usize) {
        if self.values.is_empty() {
            self.breaks.clear();
            return;
        }
        let mut breaks = vec![self.breaks[from]];
        let mut values: Vec<f64> = Vec::new();
        let mut k = from;
        while k < self.values.len() {
            let v = self.values[k];
            match values.last() {
                Some(&last) if Self::mergeable(last, v) => {
                    *breaks.last_mut().unwrap() = self.breaks[k + 1];
                }
                Some(_) if k >= until => break,
                _ => {
                    values.push(v);
                    breaks.push(self.breaks[k + 1]);
                }
            }
            k += 1;
        }
        self.values.splice(from..k, values);
        self.breaks.splice(from..=k, breaks);
        while self.values.first() == Some(&0.0) {
            self.values.remove(0);
            self.breaks.remove(0);
        }
        while self.values.last() == Some(&0.0) {
            self.values.pop();
            self.breaks.pop();
        }
        if self.values.is_empty() {
            self.breaks.clear();
        }
    }

    /// Merge equal neighbours and trim zero pieces at both ends.
    fn normalize(&mut self) {
        if self.values.is_empty() {
            self.breaks.clear();
            return;
        }
        let mut breaks = Vec::with_capacity(self.breaks.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.values.len());
        breaks.push(self.breaks[0]);
        for (k, &v) in self.values.iter().enumerate() {
            match values.last() {
                Some(&last) if Self::mergeable(last, v) => {
                    *breaks.last_mut().unwrap() = self.breaks[k + 1];
                }
                _ => {
                    values.push(v);
                    breaks.push(self.breaks[k + 1]);
                }
            }
        }
        let start = values.iter().position(|&v| v != 0.0);
        match start {
            None => {
                breaks.clear();
                values.clear();
            }
            Some(s) => {
                let e = values.iter().rposition(|&v| v != 0.0).unwrap();
                values.truncate(e + 1);
                breaks.truncate(e + 2);
                values.drain(..s);
                breaks.drain(..s);
            }
        }
        self.breaks = breaks;
        self.values = values;
    }

    /// `M = sum value * length`.
    pub fn exact_mass(&self) -> f64 {
        self.values
            .iter()
            .zip(self.breaks.windows(2))
            .map(|(v, w)| v * (w[1] - w[0]))
            .sum()
    }

    /// `int_a^b Y`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a || self.breaks.is_empty() {
            return 0.0;
        }
        let start = self.breaks.partition_point(|&x| x <= a).saturating_sub(1);
        let mut acc = 0.0;
        for k in start..self.values.len() {
            let (l, r) = (self.breaks[k], self.breaks[k + 1]);
            if l >= b {
                break;
            }
            let overlap = r.min(b) - l.max(a);
            if overlap > 0.0 {
                acc += self.values[k] * overlap;
            }
        }
        acc
    }

    /// `Phi(x) = int_{x - R}^{x + R} Y`.
    pub fn exact_phi(&self, x: f64, radius: f64) -> f64 {
        self.integral(x - radius, x + radius)
    }

    /// Closed intervals on which the field is positive.
    pub fn support(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (k, &v) in self.values.iter().enumerate() {
            if v > 0.0 {
                let (l, r) = (self.breaks[k], self.breaks[k + 1]);
                match out.last_mut() {
                    Some(last) if last.1 == l => last.1 = r,
                    _ => out.push((l, r)),
                }
            }
        }
        out
    }

    /// The piecewise linear profile of `Phi` for radius `R`.
    pub fn phi_profile(&self, radius: f64) -> PhiProfile {
        if self.breaks.is_empty() {
            return PhiProfile {
                knots: Vec::new(),
                values: Vec::new(),
            };
        }
        // Prefix integrals at each breakpoint.
        let mut prefix = Vec::with_capacity(self.breaks.len());
        prefix.push(0.0);
        for (k, &v) in self.values.iter().enumerate() {
            let last = *prefix.last().unwrap();
            prefix.push(last + v * (self.breaks[k + 1] - self.breaks[k]));
        }
        let cumulative = |x: f64| -> f64 {
            if x <= self.breaks[0] {
                return 0.0;
            }
            let n = self.breaks.len();
            if x >= self.breaks[n - 1] {
                return prefix[n - 1];
            }
            let k = self.breaks.partition_point(|&b| b <= x) - 1;
            prefix[k] + self.values[k] * (x - self.breaks[k])
        };
        let mut knots: Vec<f64> = self
            .breaks
            .iter()
            .flat_map(|&b| [b - radius, b + radius])
            .collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let values = knots
            .iter()
            .map(|&k| (cumulative(k + radius) - cumulative(k - radius)).max(0.0))
            .collect();
        PhiProfile { knots, values }
    }

    /// `(U / |W|) int_W (Y(c) 2R - Phi(c)) dc` over `W = Supp(Y)^R`.
    pub fn exact_drift(&self, radius: f64, impact: f64) -> f64 {
        let mut domain: Vec<(f64, f64)> = self
            .support()
            .into_iter()
            .map(|(a, b)| (a - radius, b + radius))
            .collect();
        merge_intervals(&mut domain);
        self.drift_over(&domain, radius, impact)
    }

    /// Same integral over an arbitrary disjoint union of intervals `W`; zero
    /// whenever `W` contains `Supp(Y)^R`.
    pub fn drift_over(&self, domain: &[(f64, f64)], radius: f64, impact: f64) -> f64 {
        let width: f64 = domain.iter().map(|(a, b)| b - a).sum();
        if width == 0.0 || self.breaks.is_empty() {
            return 0.0;
        }
        let profile = self.phi_profile(radius);
        let mut local = 0.0;
        let mut averaged = 0.0;
        for &(a, b) in domain {
            local += 2.0 * radius * self.integral(a, b);
            averaged += profile.integral(a, b);
        }
        impact * (local - averaged) / width
    }
}

/// Piecewise linear `Phi`, zero outside `[knots[0], knots[last]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiProfile {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl PhiProfile {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn knot_values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if n == 0 || x <= self.knots[0] || x >= self.knots[n - 1] {
            return 0.0;
        }
        let k = self.knots.partition_point(|&t| t <= x) - 1;
        let (t0, t1) = (self.knots[k], self.knots[k + 1]);
        let s = (x - t0) / (t1 - t0);
        self.values[k] + s * (self.values[k + 1] - self.values[k])
    }

    /// `sup Phi`, attained at a knot.
    pub fn sup(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// `int_a^b Phi`, exact trapezoids on each linear piece.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let n = self.knots.len();
        if n < 2 || b <= a {
            return 0.0;
        }
        let a = a.max(self.knots[0]);
        let b = b.min(self.knots[n - 1]);
        if b <= a {
            return 0.0;
        }
        let start = self.knots.partition_point(|&t| t <= a).saturating_sub(1);
        let mut acc = 0.0;
        for k in start..n - 1 {
            let (t0, t1) = (self.knots[k], self.knots[k + 1]);
            if t0 >= b {
                break;
            }
            let (l, r) = (t0.max(a), t1.min(b));
            if r > l {
                acc += 0.5 * (self.value_at_piece(k, l) + self.value_at_piece(k, r)) * (r - l);
            }
        }
        acc
    }

    fn value_at_piece(&self, k: usize, x: f64) -> f64 {
        let (t0, t1) = (self.knots[k], self.knots[k + 1]);
        self.values[k] + (x - t0) / (t1 - t0) * (self.values[k + 1] - self.values[k])
    }

    /// Intervals where `lo <= Phi <= hi` (requires `lo > 0`), found by
    /// inverting each linear piece in closed form.
    pub fn level_set(&self, lo: f64, hi: f64) -> Vec<(f64, f64)> {
        debug_assert!(lo > 0.0);
        let mut out: Vec<(f64, f64)> = Vec::new();
        for k in 0..self.knots.len().saturating_sub(1) {
            let (t0, t1) = (self.knots[k], self.knots[k + 1]);
            let (p0, p1) = (self.values[k], self.values[k + 1]);
            let (s_lo, s_hi) = if p0 == p1 {
                if (lo..=hi).contains(&p0) {
                    (0.0, 1.0)
                } else {
                    continue;
                }
            } else {
                let a = (lo - p0) / (p1 - p0);
                let b = (hi - p0) / (p1 - p0);
                (a.min(b).max(0.0), a.max(b).min(1.0))
            };
            if s_hi < s_lo {
                continue;
            }
            let (l, r) = (t0 + s_lo * (t1 - t0), t0 + s_hi * (t1 - t0));
            match out.last_mut() {
                Some(last) if l <= last.1 => last.1 = last.1.max(r),
                _ => out.push((l, r)),
            }
        }
        out
    }

    /// `|{x : lo <= Phi(x) <= hi}|`.
    pub fn measure_between(&self, lo: f64, hi: f64) -> f64 {
        self.level_set(lo, hi).iter().map(|(a, b)| b - a).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{run, Params};
    use proptest::prelude::*;

    fn block(lo: f64, hi: f64, v: f64) -> PiecewiseField1D {
        PiecewiseField1D::from_parts(vec![lo, hi], vec![v]).unwrap()
    }

    #[test]
    fn local_normalisation_matches_full_pass() {
        use crate::rng::{substream, Purpose};
        use rand::Rng;
        let mut rng = substream(3, Purpose::Probes, 0);
        for _ in 0..20 {
            let mut f = block(-1.0, 1.0, 1.0);
            for _ in 0..400 {
                let c = rng.random::<f64>() * 6.0 - 3.0;
                let positive = rng.random::<f64>() < 0.4;
                let (lo, hi) = (c - 0.7, c + 0.7);
                let mut full = f.clone();
                let (i, j) = (full.ensure_break(lo), full.ensure_break(hi));
                for v in &mut full.values[i..j] {
                    *v += 0.5 * ((if positive { 1.0 } else { 0.0 }) - *v);
                }
                full.normalize();
                f.apply_event(c, 0.7, 0.5, positive);
                assert_eq!(f, full);
            }
        }
    }

    /// Midpoint Riemann sum of `f` over `[a, b]` with `n` cells.
    fn riemann(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        (0..n).map(|i| f(a + (i as f64 + 0.5) * h)).sum::<f64>() * h
    }

    fn random_field(seed: u64, steps: usize) -> (PiecewiseField1D, Params) {
        let p = Params::new(1, 1.0, 0.5, 1.0, 1.0, seed);
        let t = run(p.clone(), steps, &mut []).unwrap();
        (PiecewiseField1D::from_state(t.state()).unwrap(), p)
    }

    #[test]
    fn negative_event_on_zero_field() {
        let mut f = PiecewiseField1D::zero();
        f.apply_event(0.0, 1.0, 0.5, false);
        assert!(f.is_zero());
        assert!(f.breakpoints().is_empty());
    }

    #[test]
    fn positive_event_on_zero_field() {
        let mut f = PiecewiseField1D::zero();
        f.apply_event(2.0, 1.0, 0.5, true);
        assert_eq!(f.breakpoints(), &[1.0, 3.0]);
        assert_eq!(f.values(), &[0.5]);
        assert_eq!(f.value_at(0.9), 0.0);
        assert_eq!(f.value_at(3.1), 0.0);
    }

    #[test]
    fn event_splits_and_merges() {
        let mut f = block(-1.0, 1.0, 1.0);
        f.apply_event(0.5, 1.0, 0.5, false);
        // The touched part of the zero tail stays zero and is trimmed.
        assert_eq!(f.breakpoints(), &[-1.0, -0.5, 1.0]);
        assert_eq!(f.values(), &[1.0, 0.5]);
        // A disjoint positive event leaves an interior zero gap.
        f.apply_event(5.0, 1.0, 0.5, true);
        assert_eq!(f.values(), &[1.0, 0.5, 0.0, 0.5]);
    }

    #[test]
    fn mass_examples() {
        assert_eq!(block(-2.0, 2.0, 0.5).exact_mass(), 2.0);
        assert_eq!(PiecewiseField1D::zero().exact_mass(), 0.0);
    }

    #[test]
    fn phi_examples() {
        let f = block(-3.0, 3.0, 0.4);
        assert!((f.exact_phi(0.5, 1.0) - 0.8).abs() < 1e-15);
        assert_eq!(f.exact_phi(10.0, 1.0), 0.0);
        let prof = f.phi_profile(1.0);
        for x in [-4.5, -3.7, -2.0, 0.0, 2.2, 3.9] {
            assert!((prof.value_at(x) - f.exact_phi(x, 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn from_parts_validates() {
        assert!(PiecewiseField1D::from_parts(vec![0.0, 1.0], vec![]).is_err());
        assert!(PiecewiseField1D::from_parts(vec![1.0, 0.0], vec![0.5]).is_err());
        assert!(PiecewiseField1D::from_parts(vec![0.0, 1.0], vec![1.5]).is_err());
    }

    #[test]
    fn drift_of_zero_and_single_block() {
        assert_eq!(PiecewiseField1D::zero().exact_drift(1.0, 0.5), 0.0);
        let f = block(-1.0, 1.0, 0.7);
        assert!(f.exact_drift(1.0, 0.5).abs() < 1e-12);
    }

    #[test]
    fn ramp_level_set_matches_closed_form() {
        // Y = 1 on [-L, L]: Phi rises as x + L + R on [-L - R, -L + R].
        let (l, r) = (10.0, 1.0);
        let f = block(-l, l, 1.0);
        let prof = f.phi_profile(r);
        let (lo, hi) = (0.5, 1.5);
        let set = prof.level_set(lo, hi);
        assert_eq!(set.len(), 2);
        assert!((set[0].0 - (-l - r + lo)).abs() < 1e-12);
        assert!((set[0].1 - (-l - r + hi)).abs() < 1e-12);
        assert!((prof.measure_between(lo, hi) - 2.0 * (hi - lo)).abs() < 1e-12);
    }

    #[test]
    fn mass_matches_riemann_sum() {
        let (f, _) = random_field(13, 150);
        let (a, b) = (f.breakpoints()[0], *f.breakpoints().last().unwrap());
        let n = 1_000_000;
        let h = (b - a) / n as f64;
        let q = riemann(|x| f.value_at(x), a, b, n);
        // Each breakpoint costs at most one cell of error.
        assert!((q - f.exact_mass()).abs() <= f.breakpoints().len() as f64 * h);
    }

    #[test]
    fn phi_matches_riemann_sum() {
        let (f, _) = random_field(14, 150);
        for x in [-2.0, -0.3, 0.0, 1.1, 2.4] {
            let n = 200_000;
            let h = 2.0 / n as f64;
            let q = riemann(|z| f.value_at(z), x - 1.0, x + 1.0, n);
            assert!((q - f.exact_phi(x, 1.0)).abs() <= f.breakpoints().len() as f64 * h);
        }
    }

    #[test]
    fn phi_integral_matches_riemann_sum() {
        let (f, _) = random_field(15, 100);
        let prof = f.phi_profile(1.0);
        let (a, b) = (prof.knots()[0], *prof.knots().last().unwrap());
        let q = riemann(|x| prof.value_at(x), a, b, 400_000);
        assert!((q - prof.integral(a, b)).abs() < 1e-6);
        // Fubini: int Phi = 2R M.
        assert!((prof.integral(a, b) - 2.0 * f.exact_mass()).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn events_preserve_range_support_and_piece_bound(
            events in prop::collection::vec((-3.0f64..3.0, any::<bool>()), 0..80),
            u in 0.05f64..0.95,
        ) {
            let mut f = block(-1.0, 1.0, 0.6);
            for (n, &(c, pos)) in events.iter().enumerate() {
                let before = f.support();
                f.apply_event(c, 1.0, u, pos);
                prop_assert!(f.values().iter().all(|v| (0.0..=1.0).contains(v)));
                prop_assert!(f.piece_count() <= 2 * (n + 1) + 2);
                for (a, b) in before {
                    let mid = 0.5 * (a + b);
                    prop_assert!(f.value_at(mid) > 0.0);
                }
            }
        }

        #[test]
        fn breakpoint_insertion_preserves_mass(extra in prop::collection::vec(-3.0f64..3.0, 1..10)) {
            let (f, _) = random_field(3, 40);
            let mut g = f.clone();
            for x in extra {
                g.ensure_break(x);
            }
            prop_assert!((g.exact_mass() - f.exact_mass()).abs() < 1e-12);
        }

        #[test]
        fn mass_is_additive_over_a_cut(cut in -3.0f64..3.0) {
            let (f, _) = random_field(4, 60);
            let lo = f.breakpoints()[0];
            let hi = *f.breakpoints().last().unwrap();
            let total = f.integral(lo, cut.max(lo)) + f.integral(cut.max(lo), hi);
            prop_assert!((total - f.exact_mass()).abs() < 1e-12);
        }
    }
}
