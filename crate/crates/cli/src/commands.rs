use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use serde::Serialize;
use slfv_core::chain::{nonspatial_run, record};
use slfv_core::diagnostics::suite::{run_suite, write_csv, SuiteConfig};
use slfv_core::diagnostics::{freeze_report, FreezeOptions, FreezeReport};
use slfv_core::exec;
use slfv_core::rng::{substream, Purpose};
use slfv_core::stats::Welford;
use slfv_core::Trajectory;

use crate::config::{Horizon, RunConfig};
use crate::Failure;

const SCHEMA_VERSION: u32 = record::SCHEMA_VERSION;

pub struct Progress {
    enabled: bool,
    start: Instant,
}

impl Progress {
    pub fn new(enabled: bool) -> Self {
        Progress {
            enabled,
            start: Instant::now(),
        }
    }

    fn note(&self, msg: impl AsRef<str>) {
        if self.enabled {
            eprintln!("[{:7.2}s] {}", self.start.elapsed().as_secs_f64(), msg.as_ref());
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, Failure> {
    fs::create_dir_all(&cfg.out).map_err(|e| Failure::io(format!("{}: {e}", cfg.out.display())))?;
    Ok(&cfg.out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn freeze_options(cfg: &RunConfig, params: &slfv_core::Params) -> Result<FreezeOptions, Failure> {
    Ok(FreezeOptions {
        alpha: cfg.alpha(params)?,
        method: cfg.method(),
        probes: cfg.probes,
    })
}

/// Runs one seed under the configured horizon policy.
fn simulate(cfg: &RunConfig, seed: u64) -> Result<(Trajectory, FreezeReport), Failure> {
    let params = cfg.params(seed)?;
    let opts = freeze_options(cfg, &params)?;
    let mut traj = Trajectory::new(params)?;
    match cfg.horizon {
        Horizon::Fixed => {
            traj.extend(cfg.steps, &mut [])?;
            let report = freeze_report(&traj, cfg.steps, &opts)?;
            Ok((traj, report))
        }
        Horizon::DoubleUntilStable { max } => {
            let mut h = cfg.steps;
            loop {
                let need = 2 * h - traj.state().step();
                traj.extend(need, &mut [])?;
                let report = freeze_report(&traj, h, &opts)?;
                let stable = report.kappa_stable == Some(true) && report.tau_alpha_stable == Some(true);
                if stable || 4 * h > max {
                    return Ok((traj, report));
                }
                h *= 2;
            }
        }
    }
}

pub fn run(cfg: &RunConfig, progress: &Progress) -> Result<(), Failure> {
    cfg.validate()?;
    let seed = match cfg.seeds {
        crate::config::Seeds::Single(s) => s,
        other => return Err(Failure::config(format!("`run` takes a single seed, got {other}"))),
    };
    let dir = out_dir(cfg)?;
    progress.note(format!("run: d={} seed={seed} steps={}", cfg.dim, cfg.steps));
    let (traj, report) = simulate(cfg, seed)?;
    record::write_jsonl(traj.state(), create(&dir.join("events.jsonl"))?)?;
    write_json(&dir.join("freeze.json"), &report)?;
    progress.note(format!(
        "run: {} steps, kappa_hat={} positives={} -> {}",
        traj.state().step(),
        report.kappa_hat,
        report.positives,
        dir.display()
    ));
    Ok(())
}

#[derive(Serialize)]
struct SummaryRow {
    schema_version: u32,
    seed: u64,
    n_steps: usize,
    kappa_hat: usize,
    positives: usize,
    sup_freq: f64,
    tau_alpha_hat: usize,
    cluster_volume: f64,
    cluster_volume_stderr: f64,
    kappa_stable: Option<bool>,
    tau_alpha_stable: Option<bool>,
}

impl From<&FreezeReport> for SummaryRow {
    fn from(r: &FreezeReport) -> Self {
        SummaryRow {
            schema_version: r.schema_version,
            seed: r.seed,
            n_steps: r.n_steps,
            kappa_hat: r.kappa_hat,
            positives: r.positives,
            sup_freq: r.sup_freq,
            tau_alpha_hat: r.tau_alpha_hat,
            cluster_volume: r.cluster_volume.value,
            cluster_volume_stderr: r.cluster_volume.stderr,
            kappa_stable: r.kappa_stable,
            tau_alpha_stable: r.tau_alpha_stable,
        }
    }
}

#[derive(Serialize)]
struct Quantiles {
    min: f64,
    q25: f64,
    median: f64,
    q75: f64,
    max: f64,
    mean: f64,
}

impl Quantiles {
    fn of(mut xs: Vec<f64>) -> Self {
        xs.sort_by(f64::total_cmp);
        let q = |p: f64| xs[((xs.len() - 1) as f64 * p).round() as usize];
        Quantiles {
            min: xs[0],
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            max: xs[xs.len() - 1],
            mean: xs.iter().sum::<f64>() / xs.len() as f64,
        }
    }
}

#[derive(Serialize)]
struct EnsembleSummary {
    schema_version: u32,
    seeds: String,
    runs: usize,
    kappa_hat: Quantiles,
    /// `(lower edge, count)` over ten equal bins of `[0, horizon]`.
    kappa_histogram: Vec<(usize, usize)>,
    kappa_stable_fraction: Option<f64>,
    tau_alpha_stable_fraction: Option<f64>,
    cluster_volume: Quantiles,
    sup_freq: Quantiles,
}

fn stable_fraction(flags: impl Iterator<Item = Option<bool>>) -> Option<f64> {
    let flags: Option<Vec<bool>> = flags.collect();
    flags.map(|f| f.iter().filter(|&&b| b).count() as f64 / f.len() as f64)
}

pub fn ensemble(cfg: &RunConfig, progress: &Progress) -> Result<(), Failure> {
    cfg.validate()?;
    let seeds = cfg.seeds.to_vec();
    if seeds.len() < 2 {
        return Err(Failure::config("`ensemble` needs at least two seeds (--seeds A..B)"));
    }
    let dir = out_dir(cfg)?;
    if cfg.events {
        fs::create_dir_all(dir.join("events"))?;
    }
    progress.note(format!("ensemble: {} seeds ({}), {} steps", seeds.len(), cfg.seeds, cfg.steps));
    let done = AtomicUsize::new(0);
    let tick = (seeds.len() / 10).max(1);
    let results = exec::map_indexed(exec::default_execution(), seeds.len(), |i| {
        let (traj, report) = simulate(cfg, seeds[i])?;
        if cfg.events {
            let path = dir.join("events").join(format!("seed-{}.jsonl", seeds[i]));
            record::write_jsonl(traj.state(), create(&path)?)?;
        }
        let k = done.fetch_add(1, Ordering::Relaxed) + 1;
        if k % tick == 0 {
            progress.note(format!("ensemble: {k}/{} done", seeds.len()));
        }
        Ok::<_, Failure>(report)
    });
    // Fold in seed order; the first failing seed decides the error.
    let reports = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut csv = csv::Writer::from_writer(create(&dir.join("summary.csv"))?);
    let mut jsonl = create(&dir.join("reports.jsonl"))?;
    for r in &reports {
        csv.serialize(SummaryRow::from(r)).map_err(|e| Failure::io(e.to_string()))?;
        serde_json::to_writer(&mut jsonl, r).map_err(|e| Failure::io(e.to_string()))?;
        writeln!(jsonl)?;
    }
    csv.flush()?;
    jsonl.flush()?;

    let horizon = reports.iter().map(|r| r.n_steps).max().unwrap_or(0).max(1);
    let mut hist: Vec<(usize, usize)> = (0..10).map(|b| (b * horizon / 10, 0)).collect();
    for r in &reports {
        hist[(r.kappa_hat * 10 / horizon).min(9)].1 += 1;
    }
    let summary = EnsembleSummary {
        schema_version: SCHEMA_VERSION,
        seeds: cfg.seeds.to_string(),
        runs: reports.len(),
        kappa_hat: Quantiles::of(reports.iter().map(|r| r.kappa_hat as f64).collect()),
        kappa_histogram: hist,
        kappa_stable_fraction: stable_fraction(reports.iter().map(|r| r.kappa_stable)),
        tau_alpha_stable_fraction: stable_fraction(reports.iter().map(|r| r.tau_alpha_stable)),
        cluster_volume: Quantiles::of(reports.iter().map(|r| r.cluster_volume.value).collect()),
        sup_freq: Quantiles::of(reports.iter().map(|r| r.sup_freq).collect()),
    };
    write_json(&dir.join("ensemble.json"), &summary)?;
    progress.note(format!(
        "ensemble: median kappa_hat {} -> {}",
        summary.kappa_hat.median,
        dir.display()
    ));
    Ok(())
}

pub fn verify(cfg: &RunConfig, progress: &Progress) -> Result<(), Failure> {
    cfg.validate()?;
    let params = cfg.params(0)?;
    let mut suite = SuiteConfig::new(params.clone(), cfg.seeds.to_vec(), cfg.steps);
    suite.alpha = cfg.alpha(&params)?;
    suite.method = cfg.method();
    suite.validate()?;
    let dir = out_dir(cfg)?;
    progress.note(format!("verify: d={} seeds {} steps {}", cfg.dim, cfg.seeds, cfg.steps));
    let report = run_suite(&suite)?;
    write_csv(&report.rows, create(&dir.join("verify.csv"))?)?;
    write_json(&dir.join("verify_summary.json"), &report.summary)?;
    let s = &report.summary;
    progress.note(format!("verify: {} checks, {} passed, {} failed, {} skipped", s.total, s.passed, s.failed, s.skipped));
    if s.failed > 0 {
        let first = report.failures().next().expect("failed > 0");
        return Err(Failure::verification(format!(
            "{} failed checks; first: seed {} step {} {} slack {:e}",
            s.failed, first.seed, first.step, first.check.name(), first.slack
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct NonspatialRow {
    schema_version: u32,
    seed: u64,
    terminal: f64,
    last_flip: usize,
}

#[derive(Serialize)]
struct NonspatialSummary {
    schema_version: u32,
    z0: f64,
    impact: f64,
    steps: usize,
    runs: usize,
    mean_terminal: f64,
    stderr: f64,
    /// `|mean - z0| <= 4 stderr`.
    martingale_pass: bool,
    terminal_zero: usize,
    terminal_one: usize,
    settle: usize,
    /// Fraction of runs whose last flip is at or before `settle`.
    no_flip_after_settle: f64,
    last_flip: Quantiles,
}

pub fn nonspatial(cfg: &RunConfig, progress: &Progress) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&cfg.z0) {
        return Err(Failure::config(format!("z0 = {} is not in [0, 1]", cfg.z0)));
    }
    if !(cfg.impact > 0.0 && cfg.impact < 1.0) {
        return Err(Failure::config(format!("U = {} is not in (0, 1)", cfg.impact)));
    }
    let seeds = cfg.seeds.to_vec();
    let dir = out_dir(cfg)?;
    progress.note(format!("nonspatial: z0={} U={} {} seeds x {} steps", cfg.z0, cfg.impact, seeds.len(), cfg.steps));
    let outcomes = exec::map_indexed(exec::default_execution(), seeds.len(), |i| {
        let mut rng = substream(seeds[i], Purpose::Uniforms, 0);
        nonspatial_run(cfg.z0, cfg.impact, cfg.steps, &mut rng)
    });
    let mut csv = csv::Writer::from_writer(create(&dir.join("nonspatial.csv"))?);
    let mut w = Welford::new();
    for (seed, o) in seeds.iter().zip(&outcomes) {
        w.push(o.terminal);
        csv.serialize(NonspatialRow {
            schema_version: SCHEMA_VERSION,
            seed: *seed,
            terminal: o.terminal,
            last_flip: o.last_flip,
        })
        .map_err(|e| Failure::io(e.to_string()))?;
    }
    csv.flush()?;
    let est = w.estimate();
    let summary = NonspatialSummary {
        schema_version: SCHEMA_VERSION,
        z0: cfg.z0,
        impact: cfg.impact,
        steps: cfg.steps,
        runs: outcomes.len(),
        mean_terminal: est.value,
        stderr: est.stderr,
        martingale_pass: est.within(cfg.z0, 4.0, 1e-12),
        terminal_zero: outcomes.iter().filter(|o| o.terminal == 0.0).count(),
        terminal_one: outcomes.iter().filter(|o| o.terminal == 1.0).count(),
        settle: cfg.settle,
        no_flip_after_settle: outcomes.iter().filter(|o| o.last_flip <= cfg.settle).count() as f64 / outcomes.len() as f64,
        last_flip: Quantiles::of(outcomes.iter().map(|o| o.last_flip as f64).collect()),
    };
    write_json(&dir.join("nonspatial.json"), &summary)?;
    progress.note(format!(
        "nonspatial: mean Z_n = {:.5} +- {:.5}, {:.3} settled by step {}",
        summary.mean_terminal, summary.stderr, summary.no_flip_after_settle, cfg.settle
    ));
    if !summary.martingale_pass {
        return Err(Failure::verification(format!(
            "mean terminal value {} is more than 4 stderr from z0 = {}",
            summary.mean_terminal, cfg.z0
        )));
    }
    Ok(())
}
