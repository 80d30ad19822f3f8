//! The verification suite: fresh trajectories, every diagnostic check on every
//! (or every `stride`-th) step, one [`CheckRow`] per check.
//!
//! Exact mode (`d = 1`) gates at [`EXACT_TOL`]; Monte Carlo mode gates at
//! [`MC_GATE`] standard errors. Seeds run in parallel; rows come back ordered
//! by seed, then step.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    constraint_check, forbidden_region_stats, growth_bound, lipschitz_check, martingale_drift, mass_change_check,
    total_mass, AlphaConfig, Method, Snapshot, EXACT_TOL, MC_GATE,
};
use crate::chain::record::SCHEMA_VERSION;
use crate::chain::{ChainRng, ChainState, Params};
use crate::exec;
use crate::geometry::{self, Point};
use crate::oracle::PiecewiseField1D;
use crate::rng::{substream, Purpose, StreamRng};
use crate::stats::Estimate;
use crate::{Error, Result};

/// Slack allowed below `psi` when measuring `|F_n|`.
pub const FORBIDDEN_TOL: f64 = 1e-6;
/// Kernel-vs-oracle agreement on the line.
pub const ORACLE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    /// Template; the seed is replaced per trajectory.
    pub params: Params,
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub alpha: AlphaConfig,
    pub method: Method,
    /// Random `(x, y)` pairs per checked step.
    pub lipschitz_pairs: usize,
    /// Probe points for the oracle comparison (exact mode).
    pub oracle_probes: usize,
    /// Check every `stride`-th step (the growth bound and, in exact mode,
    /// the per-step identities are checked on every step regardless).
    pub stride: usize,
}

impl SuiteConfig {
    /// Exact on the line, Monte Carlo otherwise.
    pub fn new(params: Params, seeds: Vec<u64>, steps: usize) -> Self {
        let line = params.dim == 1;
        SuiteConfig {
            alpha: AlphaConfig::default_for(&params),
            method: if line { Method::Exact1d } else { Method::MonteCarlo { samples: 20_000 } },
            lipschitz_pairs: if line { 1 } else { 2 },
            oracle_probes: 64,
            stride: if line { 1 } else { 10 },
            params,
            seeds,
            steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.alpha.validate(&self.params)?;
        if self.seeds.is_empty() {
            return Err(Error::param("seeds", "at least one seed is required"));
        }
        if self.stride == 0 {
            return Err(Error::param("stride", "must be positive"));
        }
        if self.method == Method::Exact1d && self.params.dim != 1 {
            return Err(Error::ExactRequiresLine(self.params.dim));
        }
        if let Method::MonteCarlo { samples: 0 } = self.method {
            return Err(Error::param("mc-samples", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Mass,
    MassChange,
    Drift,
    Lipschitz,
    Constraint,
    ForbiddenRegion,
    Growth,
    Oracle,
}

impl Check {
    pub fn name(self) -> &'static str {
        match self {
            Check::Mass => "mass",
            Check::MassChange => "mass_change",
            Check::Drift => "drift",
            Check::Lipschitz => "lipschitz",
            Check::Constraint => "constraint",
            Check::ForbiddenRegion => "forbidden_region",
            Check::Growth => "growth",
            Check::Oracle => "oracle",
        }
    }
}

/// One check on one step. `slack >= 0` is the pass condition before the
/// tolerance or Monte Carlo gate is applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub schema_version: u32,
    pub seed: u64,
    pub step: usize,
    pub check: Check,
    pub value: f64,
    pub bound: f64,
    pub slack: f64,
    pub stderr: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckCount {
    pub total: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub schema_version: u32,
    pub dim: usize,
    pub method: Method,
    pub trajectories: usize,
    pub steps: usize,
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    /// Monte Carlo constraint checks skipped because `Phi` was too noisy.
    pub skipped: usize,
    pub checks: BTreeMap<String, CheckCount>,
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub rows: Vec<CheckRow>,
    pub summary: SuiteSummary,
}

impl SuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckRow> {
        self.rows.iter().filter(|r| !r.pass)
    }
}

struct Rows {
    seed: u64,
    rows: Vec<CheckRow>,
    skipped: usize,
}

impl Rows {
    /// Row for "`value` stays within `bound`", i.e. `slack = bound - value`.
    fn upper(&mut self, step: usize, check: Check, value: Estimate, bound: f64, tol: f64) {
        let slack = bound - value.value;
        self.push(step, check, value, bound, slack, tol);
    }

    /// Row for "`value` reaches at least `bound`".
    fn lower(&mut self, step: usize, check: Check, value: Estimate, bound: f64, tol: f64) {
        let slack = value.value - bound;
        self.push(step, check, value, bound, slack, tol);
    }

    fn push(&mut self, step: usize, check: Check, value: Estimate, bound: f64, slack: f64, tol: f64) {
        let pass = slack >= -(tol + MC_GATE * value.stderr);
        self.rows.push(CheckRow {
            schema_version: SCHEMA_VERSION,
            seed: self.seed,
            step,
            check,
            value: value.value,
            bound,
            slack,
            stderr: value.stderr,
            pass,
        });
    }
}

fn check_rng(seed: u64, step: usize) -> StreamRng {
    substream(seed, Purpose::Estimator, (1 << 40) + step as u64)
}

/// A point uniform on the `R`-expansion of the cluster, jittered by up to
/// `R` so pairs also probe the region where `Phi` ramps to zero.
fn probe_point(state: &ChainState, r: &mut StreamRng) -> Result<Point> {
    let p = state.params();
    let mut x = geometry::sample_uniform(&state.cluster().expanded(), r, geometry::DEFAULT_MAX_TRIES)?;
    for c in x.coords_mut() {
        *c += (2.0 * r.random::<f64>() - 1.0) * p.radius;
    }
    Ok(x)
}

fn expanded_volume(state: &ChainState, method: Method, r: &mut StreamRng) -> Result<Estimate> {
    geometry::union_volume(&state.cluster().expanded(), method, r)
}

fn run_one(cfg: &SuiteConfig, seed: u64) -> Result<Rows> {
    let params = cfg.params.clone().with_seed(seed);
    let exact = cfg.method == Method::Exact1d;
    let mut out = Rows {
        seed,
        rows: Vec::new(),
        skipped: 0,
    };
    let mut state = ChainState::new(params.clone())?;
    let mut rng = ChainRng::new(seed);
    let mut field = if exact {
        Some(PiecewiseField1D::from_initial(state.initial())?)
    } else {
        None
    };
    let delta0 = {
        let mut r = check_rng(seed, 0);
        let m = if exact { Method::Exact1d } else { Method::default() };
        expanded_volume(&state, m, &mut r)?.value
    };
    let tol = if exact { EXACT_TOL } else { 0.0 };
    for _ in 0..cfg.steps {
        let pre = state.clone();
        let ev = state.advance(&mut rng)?;
        let n = ev.index;
        let mut r = check_rng(seed, n);
        let checked = n % cfg.stride == 0 || n == cfg.steps;

        let growth_method = if exact { Method::Exact1d } else { cfg.method };
        if exact || checked {
            let v = expanded_volume(&state, growth_method, &mut r)?;
            out.upper(n, Check::Growth, v, growth_bound(delta0, &params, n)?, 0.0);
        }

        let post_field = field
            .as_ref()
            .map(|f| f.with_event(ev.center[0], params.radius, params.impact, ev.positive));
        if exact || checked {
            let (pre_s, post_s) = match (&field, &post_field) {
                (Some(a), Some(b)) => (Snapshot::with_field(&pre, a), Snapshot::with_field(&state, b)),
                _ => (Snapshot::new(&pre), Snapshot::new(&state)),
            };
            if exact {
                let m = total_mass(&post_s, cfg.method, &mut r)?;
                out.lower(n, Check::Mass, m, 0.0, tol);
            }
            let res = mass_change_check(&pre_s, &ev, &post_s, cfg.method, &mut r)?;
            out.upper(
                n,
                Check::MassChange,
                Estimate {
                    value: res.value.abs(),
                    stderr: res.stderr,
                },
                0.0,
                tol,
            );
            let drift = martingale_drift(&pre_s, cfg.method, &mut r)?;
            out.upper(
                n,
                Check::Drift,
                Estimate {
                    value: drift.value.abs(),
                    stderr: drift.stderr,
                },
                0.0,
                tol,
            );
            for _ in 0..cfg.lipschitz_pairs {
                let x = probe_point(&pre, &mut r)?;
                let y = probe_point(&pre, &mut r)?;
                let slack = lipschitz_check(&pre_s, &x, &y, cfg.method, &mut r)?;
                let bound = x.distance(&y) * params.event_area();
                out.upper(
                    n,
                    Check::Lipschitz,
                    Estimate {
                        value: bound - slack.value,
                        stderr: slack.stderr,
                    },
                    bound,
                    tol,
                );
            }
            match constraint_check(&pre_s, &ev, cfg.alpha, cfg.method, &mut r) {
                Ok(c) if c.applies => {
                    out.lower(n, Check::Constraint, Estimate { value: c.slack, stderr: c.phi.stderr }, 0.0, tol);
                    if exact {
                        let f = forbidden_region_stats(&pre_s, &ev, cfg.alpha, cfg.method, &mut r)?;
                        let (_, hi) = cfg.alpha.band(&params);
                        if f.sup_phi.is_some_and(|s| s > hi) {
                            let bound = f.psi - FORBIDDEN_TOL;
                            let mut slack = f.f_volume.value - bound;
                            if f.center_in_f {
                                slack = slack.min(-1.0);
                            }
                            out.push(n, Check::ForbiddenRegion, f.f_volume, bound, slack, 0.0);
                        }
                    }
                }
                Ok(_) => {}
                Err(Error::EstimatorTooNoisy { .. }) => out.skipped += 1,
                Err(e) => return Err(e),
            }
            if let (Some(f), true) = (&post_field, checked) {
                let mut worst: f64 = 0.0;
                for _ in 0..cfg.oracle_probes {
                    let x = probe_point(&state, &mut r)?;
                    worst = worst.max((state.evaluate_frequency(&x) - f.value_at(x[0])).abs());
                }
                out.upper(n, Check::Oracle, Estimate::exact(worst), ORACLE_TOL, 0.0);
            }
        }
        field = post_field;
    }
    Ok(out)
}

/// Run every check on fresh trajectories, one per seed.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let parts = exec::map_indexed(exec::default_execution(), cfg.seeds.len(), |i| run_one(cfg, cfg.seeds[i]));
    let mut rows = Vec::new();
    let mut skipped = 0;
    for p in parts {
        let p = p?;
        rows.extend(p.rows);
        skipped += p.skipped;
    }
    let mut checks: BTreeMap<String, CheckCount> = BTreeMap::new();
    for r in &rows {
        let c = checks.entry(r.check.name().to_string()).or_default();
        c.total += 1;
        c.failed += usize::from(!r.pass);
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    let summary = SuiteSummary {
        schema_version: SCHEMA_VERSION,
        dim: cfg.params.dim,
        method: cfg.method,
        trajectories: cfg.seeds.len(),
        steps: cfg.steps,
        total: rows.len(),
        passed: rows.len() - failed,
        failed,
        skipped,
        checks,
    };
    Ok(SuiteReport { rows, summary })
}

/// CSV with a header row; columns follow [`CheckRow`].
pub fn write_csv<W: Write>(rows: &[CheckRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_suite_passes() {
        let cfg = SuiteConfig::new(Params::new(1, 1.0, 0.5, 1.0, 1.0, 0), vec![1, 2], 150);
        let rep = run_suite(&cfg).unwrap();
        assert_eq!(rep.summary.failed, 0, "{:?}", rep.failures().take(5).collect::<Vec<_>>());
        for c in ["mass", "mass_change", "drift", "lipschitz", "growth", "oracle"] {
            assert!(rep.summary.checks[c].total > 0, "{c}");
        }
        assert_eq!(rep.summary.checks["growth"].total, 300);
    }

    #[test]
    fn rows_are_ordered_and_reproducible() {
        let cfg = SuiteConfig::new(Params::new(1, 1.0, 0.5, 1.0, 1.0, 0), vec![7, 3], 30);
        let a = run_suite(&cfg).unwrap();
        let b = run_suite(&cfg).unwrap();
        assert_eq!(a.rows, b.rows);
        assert!(a.rows.iter().take_while(|r| r.seed == 7).count() > 0);
        assert_eq!(a.rows.last().unwrap().seed, 3);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let cfg = SuiteConfig::new(Params::new(1, 1.0, 0.5, 1.0, 1.0, 0), vec![1], 5);
        let rep = run_suite(&cfg).unwrap();
        let mut buf = Vec::new();
        write_csv(&rep.rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "schema_version,seed,step,check,value,bound,slack,stderr,pass");
        assert_eq!(lines.count(), rep.rows.len());
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = SuiteConfig::new(Params::new(2, 1.0, 0.5, 1.0, 1.0, 0), vec![1], 5);
        cfg.method = Method::Exact1d;
        assert!(run_suite(&cfg).is_err());
        cfg.method = Method::MonteCarlo { samples: 100 };
        cfg.seeds.clear();
        assert!(run_suite(&cfg).is_err());
        let mut bad = SuiteConfig::new(Params::new(1, 1.0, 1.5, 1.0, 1.0, 0), vec![1], 5);
        assert!(run_suite(&bad).is_err());
        bad.params.impact = 0.5;
        bad.alpha.alpha = 0.6;
        assert!(run_suite(&bad).is_err());
    }

    #[test]
    fn plane_suite_runs() {
        let mut cfg = SuiteConfig::new(Params::new(2, 1.0, 0.5, 1.0, 1.0, 0), vec![5], 20);
        cfg.method = Method::MonteCarlo { samples: 8192 };
        let rep = run_suite(&cfg).unwrap();
        assert!(rep.summary.total > 0);
        assert_eq!(rep.summary.failed, 0, "{:?}", rep.failures().collect::<Vec<_>>());
    }
}
