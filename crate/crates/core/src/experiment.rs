//! Experiment driver behind the command line: validation, sweeps, training
//! and reporting. Every output is a deterministic function of the config
//! and master seed, independent of the worker count.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, RouteSplit, SplitRule};
use crate::channel;
use crate::diffusion::{self, Latent};
use crate::error::{Error, Result};
use crate::losses::{self, Trained};
use crate::metrics::{self, ResourceScenario};
use crate::rng::{derive_seed, seeded};
use crate::scheduler::{self, ActionMenu, PipelineEvaluator, PolicyRow, PolicyTraining};
use crate::schedules::{float17, ChannelNoiseSchedule};
use crate::source::{self, NoiseMode, SemanticSource};
use crate::transceiver::{self, Pipeline, PipelineConfig, TranscriptRecord, Variant};

// independent rng streams under the master seed
const STREAM_REFERENCE: u64 = 0x5245_4600;
const STREAM_DENOISER: u64 = 0x4445_4e00;
const STREAM_POLICY: u64 = 0x504f_4c00;
const STREAM_REPORT: u64 = 0x5245_5000;
const STREAM_VALIDATE: u64 = 0x5641_4c00;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Snr,
    Compute,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Snr => "snr",
            Axis::Compute => "compute",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snr" => Ok(Axis::Snr),
            "compute" => Ok(Axis::Compute),
            other => Err(Error::Config(format!("unknown axis `{other}` (expected snr or compute)"))),
        }
    }
}

/// Runs the structural checks, builds every schedule the experiment will
/// use and checks the closed-form reverse-step identities on random cases.
/// Returns one line per passed check.
pub fn validate(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let mut report = Vec::new();
    cfg.check()?;
    report.push("config structure".to_string());
    let src = cfg.source::<f64>()?;
    report.push(format!("source: {} components in d = {}", src.components().len(), src.dim()));
    let vs = cfg.schedule.variance_schedule::<f64>()?;
    vs.validate()?;
    report.push(format!("variance schedule: T = {}, alpha_bar_T = {:.3e}", vs.steps(), vs.alpha_bar(vs.steps())));

    let menu = cfg.menu()?;
    let mut residuals: Vec<usize> = menu.actions().iter().map(|a| a.t_local).collect();
    for split in [cfg.sweep.snr.route_split, cfg.sweep.compute.route_split] {
        if let RouteSplit::Fixed(t) = split {
            residuals.push(cfg.total_steps - t);
        }
    }
    residuals.sort_unstable();
    residuals.dedup();
    let mut sigmas: Vec<f64> = cfg
        .grid
        .snr_db
        .iter()
        .chain(std::iter::once(&cfg.sweep.compute.snr_db))
        .map(|&snr| channel::snr_to_noise_std(cfg.channel.signal_power, snr))
        .collect::<Result<_>>()?;
    sigmas.push(cfg.denoiser.sigma);
    let mut built = 0;
    for &t_bar in &residuals {
        for &sigma in &sigmas {
            cfg.schedule.channel_schedule(&vs, t_bar, sigma)?.validate()?;
            built += 1;
        }
    }
    report.push(format!("channel schedules: {built} built and validated"));

    let t_bar = cfg.total_steps;
    let sigma = sigmas.iter().copied().fold(0.0, f64::max);
    let cs = cfg.schedule.channel_schedule(&vs, t_bar, sigma)?;
    let mut rng = seeded(derive_seed(cfg.master_seed, &[STREAM_VALIDATE]));
    let (worst_sub, worst_quad) = consistency_suite(&cs, 200, 20, &mut rng)?;
    if worst_sub > 1e-10 {
        return Err(Error::Invariant(format!(
            "noise-form posterior mean disagrees with the closed form by {worst_sub:e}"
        )));
    }
    if worst_quad > 1e-6 {
        return Err(Error::Invariant(format!(
            "closed-form posterior mean disagrees with quadrature by {worst_quad:e}"
        )));
    }
    report.push(format!(
        "posterior identities: substitution {worst_sub:.1e}, quadrature {worst_quad:.1e}"
    ));
    Ok(report)
}

/// Largest deviations of (noise-form vs closed-form posterior mean) over
/// `n_sub` vector cases and (closed form vs quadrature) over `n_quad` scalar
/// cases.
pub fn consistency_suite<R: Rng + ?Sized>(
    cs: &ChannelNoiseSchedule<f64>,
    n_sub: usize,
    n_quad: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let mut worst_sub = 0.0f64;
    for _ in 0..n_sub {
        let t = rng.random_range(1..=cs.t_bar());
        let z0 = Latent::<f64>::standard_normal(4, rng);
        let eps = Latent::<f64>::standard_normal(4, rng);
        if cs.noise_scale(t) == 0.0 {
            continue;
        }
        let z_t = z0.scaled(cs.base().alpha_bar(t).sqrt()).combine(1.0, &eps, cs.noise_scale(t));
        let closed = diffusion::posterior_mean(&z_t, &z0, t, cs)?;
        let noise = diffusion::posterior_mean_from_noise(&z_t, &eps, t, cs)?;
        worst_sub = worst_sub.max(closed.squared_distance(&noise).sqrt());
    }
    let mut worst_quad = 0.0f64;
    for _ in 0..n_quad {
        let t = rng.random_range(1..=cs.t_bar());
        let z_t: f64 = rng.random_range(-3.0..3.0);
        let z0: f64 = rng.random_range(-3.0..3.0);
        let closed = diffusion::posterior_mean(&Latent::new(vec![z_t])?, &Latent::new(vec![z0])?, t, cs)?;
        let quad = source::posterior_mean_bruteforce(cs, z_t, z0, t)?;
        worst_quad = worst_quad.max((closed[0] - quad).abs());
    }
    Ok((worst_sub, worst_quad))
}

/// Scenario points of an axis, in canonical order.
pub fn axis_points(cfg: &ExperimentConfig, axis: Axis) -> Vec<ResourceScenario> {
    let g = &cfg.grid;
    let base = |snr_db, rho_edge, rho_local| ResourceScenario {
        rho_edge,
        rho_local,
        c_edge: g.c_edge,
        c_local: g.c_local,
        snr_db,
        bandwidth_hz: g.bandwidth_hz,
        rate_override: g.rate_override,
    };
    match axis {
        Axis::Snr => g
            .snr_db
            .iter()
            .map(|&snr| base(snr, cfg.sweep.snr.rho_edge, cfg.sweep.snr.rho_local))
            .collect(),
        Axis::Compute => g
            .rho_edge
            .iter()
            .flat_map(|&re| g.rho_local.iter().map(move |&rl| (re, rl)))
            .map(|(re, rl)| base(cfg.sweep.compute.snr_db, re, rl))
            .collect(),
    }
}

/// Modeled latency of a ROUTE split: no link use when the edge does
/// nothing.
pub fn split_latency(t_edge: usize, total: usize, sc: &ResourceScenario, o_bits: u64) -> f64 {
    let bits = if t_edge == 0 { 0 } else { o_bits };
    metrics::transmission_latency(bits, sc)
        + metrics::compute_latency(t_edge, sc.c_edge, sc.rho_edge)
        + metrics::compute_latency(total - t_edge, sc.c_local, sc.rho_local)
}

/// Menu split with the smallest modeled latency; ties toward larger
/// `t_edge`.
pub fn latency_optimal_split(menu: &ActionMenu, sc: &ResourceScenario, o_bits: u64) -> usize {
    let neg: Vec<f64> = menu
        .actions()
        .iter()
        .map(|a| -split_latency(a.t_edge, menu.total(), sc, o_bits))
        .collect();
    menu.actions()[scheduler::argmax_prefer_last(&neg)].t_edge
}

fn payload_bits(cfg: &ExperimentConfig, dim: usize) -> u64 {
    channel::payload_bits_for_dim(cfg.nominal_dim.unwrap_or(dim), cfg.channel.bits_per_element)
}

fn pipeline<'a>(cfg: &ExperimentConfig, src: &'a SemanticSource<f64>) -> Result<Pipeline<'a, f64>> {
    let mut rng = seeded(derive_seed(cfg.master_seed, &[STREAM_REFERENCE]));
    Pipeline::new(src, &cfg.schedule, cfg.reference_draws, &mut rng)
}

fn pipeline_config(cfg: &ExperimentConfig, variant: Variant, t_edge: usize) -> PipelineConfig {
    let mut pc = PipelineConfig::new(variant, t_edge, cfg.total_steps, cfg.channel.clone());
    pc.timeout_s = cfg.timeout_s;
    pc.nominal_dim = cfg.nominal_dim;
    pc
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub point: usize,
    pub snr_db: f64,
    pub rho_edge: f64,
    pub rho_local: f64,
    pub variant: Variant,
    pub t_edge: usize,
    pub runs: usize,
    pub failed: usize,
    pub latency_mean: f64,
    pub latency_sd: f64,
    pub mse_mean: f64,
    pub mse_sd: f64,
    pub component_acc: f64,
    /// Energy distance of the point's outputs to the reference draws,
    /// pooled per label and weighted by label counts.
    pub ensemble_energy: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub axis: Axis,
    pub transcripts: Vec<TranscriptRecord<f64>>,
    pub aggregate: Vec<AggregateRow>,
    /// Runs that raised an error; they appear in the transcripts as failed
    /// rows with NaN metrics.
    pub errors: Vec<String>,
}

/// Runs every variant at every axis point for every seed. Run `(p, s)` is
/// seeded with `derive_seed(master, [p, s])` for all variants, so variants
/// are compared on paired draws.
pub fn sweep(cfg: &ExperimentConfig, axis: Axis, jobs: usize) -> Result<SweepOutput> {
    cfg.check()?;
    let src = cfg.source::<f64>()?;
    let pipe = pipeline(cfg, &src)?;
    let menu = cfg.menu()?;
    let points = axis_points(cfg, axis);
    let bits = payload_bits(cfg, src.dim());
    let split_rule = match axis {
        Axis::Snr => cfg.sweep.snr.route_split,
        Axis::Compute => cfg.sweep.compute.route_split,
    };
    let mut jobs_list = Vec::new();
    for (p, sc) in points.iter().enumerate() {
        for &variant in &cfg.variants {
            let t_edge = match (variant, split_rule) {
                (Variant::Route, RouteSplit::Fixed(t)) => t,
                (Variant::Route, RouteSplit::Rule(SplitRule::LatencyOptimal)) => {
                    latency_optimal_split(&menu, sc, bits)
                }
                _ => 0,
            };
            let pc = pipeline_config(cfg, variant, t_edge);
            for s in 0..cfg.seeds {
                jobs_list.push((p, *sc, pc.clone(), s));
            }
        }
    }

    let run = |(p, sc, pc, s): &(usize, ResourceScenario, PipelineConfig, usize)| {
        let seed = derive_seed(cfg.master_seed, &[*p as u64, *s as u64]);
        let mut rng = seeded(seed);
        let label = src.sample_label(&mut rng);
        match pipe.run(pc, label, sc, seed, &mut rng) {
            Ok(r) => (r, None),
            Err(e) => (failed_record(pc, label, sc, seed, src.dim()), Some(format!("{} seed {seed}: {e}", pc.variant))),
        }
    };
    let results: Vec<(TranscriptRecord<f64>, Option<String>)> = with_jobs(jobs, || {
        jobs_list.par_iter().map(run).collect()
    })?;
    let mut errors = Vec::new();
    let mut transcripts = Vec::with_capacity(results.len());
    for (r, e) in results {
        transcripts.push(r);
        errors.extend(e);
    }

    let mut aggregate = Vec::new();
    for (chunk_index, chunk) in transcripts.chunks(cfg.seeds).enumerate() {
        let p = chunk_index / cfg.variants.len();
        aggregate.push(aggregate_point(p, chunk, &pipe)?);
    }
    Ok(SweepOutput { axis, transcripts, aggregate, errors })
}

fn failed_record(
    pc: &PipelineConfig,
    label: u16,
    sc: &ResourceScenario,
    seed: u64,
    dim: usize,
) -> TranscriptRecord<f64> {
    TranscriptRecord {
        variant: pc.variant,
        label,
        snr_db: sc.snr_db,
        rho_edge: sc.rho_edge,
        rho_local: sc.rho_local,
        t_edge: pc.t_edge,
        t_local: pc.t_local,
        latent: Latent::zeros(dim),
        o_bits: 0,
        latency: metrics::Latency::default(),
        failed: true,
        mse: f64::NAN,
        component_acc: f64::NAN,
        energy_dist: f64::NAN,
        seed,
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

fn aggregate_point(p: usize, runs: &[TranscriptRecord<f64>], pipe: &Pipeline<'_, f64>) -> Result<AggregateRow> {
    let first = &runs[0];
    let ok: Vec<&TranscriptRecord<f64>> = runs.iter().filter(|r| r.mse.is_finite()).collect();
    let latencies: Vec<f64> = ok.iter().map(|r| r.total_latency()).collect();
    let mses: Vec<f64> = ok.iter().map(|r| r.mse).collect();
    let (latency_mean, latency_sd) = mean_sd(&latencies);
    let (mse_mean, mse_sd) = mean_sd(&mses);
    let (component_acc, _) = mean_sd(&ok.iter().map(|r| r.component_acc).collect::<Vec<_>>());
    let mut by_label: BTreeMap<u16, Vec<Vec<f64>>> = BTreeMap::new();
    for r in &ok {
        by_label.entry(r.label).or_default().push(r.latent.as_slice().to_vec());
    }
    let mut ensemble_energy = 0.0;
    for (label, samples) in &by_label {
        let weight = samples.len() as f64 / ok.len() as f64;
        ensemble_energy += weight * pipe.reference(*label)?.energy_distance(samples);
    }
    if ok.is_empty() {
        ensemble_energy = f64::NAN;
    }
    Ok(AggregateRow {
        point: p,
        snr_db: first.snr_db,
        rho_edge: first.rho_edge,
        rho_local: first.rho_local,
        variant: first.variant,
        t_edge: first.t_edge,
        runs: runs.len(),
        failed: runs.iter().filter(|r| r.failed).count(),
        latency_mean,
        latency_sd,
        mse_mean,
        mse_sd,
        component_acc,
        ensemble_energy,
    })
}

fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(f))
}

pub const AGGREGATE_HEADER: [&str; 14] = [
    "point",
    "snr_db",
    "rho_edge",
    "rho_local",
    "variant",
    "t_edge",
    "runs",
    "failed",
    "L_mean",
    "L_sd",
    "mse_mean",
    "mse_sd",
    "component_acc",
    "energy_dist_ensemble",
];

pub fn write_aggregate<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_HEADER)?;
    for r in rows {
        w.write_record([
            r.point.to_string(),
            float17(r.snr_db),
            float17(r.rho_edge),
            float17(r.rho_local),
            r.variant.name().to_string(),
            r.t_edge.to_string(),
            r.runs.to_string(),
            r.failed.to_string(),
            float17(r.latency_mean),
            float17(r.latency_sd),
            float17(r.mse_mean),
            float17(r.mse_sd),
            float17(r.component_acc),
            float17(r.ensemble_energy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `transcripts_<axis>.csv` and `aggregate_<axis>.csv`; returns the
/// two paths.
pub fn write_sweep(out: &SweepOutput, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let t = dir.join(format!("transcripts_{}.csv", out.axis));
    let a = dir.join(format!("aggregate_{}.csv", out.axis));
    transceiver::write_transcripts(&out.transcripts, std::fs::File::create(&t)?)?;
    write_aggregate(&out.aggregate, std::fs::File::create(&a)?)?;
    Ok((t, a))
}

/// Trains the tiny denoiser described by the config.
pub fn train_denoiser(cfg: &ExperimentConfig) -> Result<Trained<f64>> {
    cfg.check()?;
    let src = cfg.source::<f64>()?;
    let vs = cfg.schedule.variance_schedule::<f64>()?;
    let sigma = match cfg.denoiser.mode {
        NoiseMode::Clean => 0.0,
        NoiseMode::Channel => cfg.denoiser.sigma,
    };
    let cs = cfg.schedule.channel_schedule(&vs, vs.steps(), sigma)?;
    let mut rng = seeded(derive_seed(cfg.master_seed, &[STREAM_DENOISER]));
    losses::train_tiny_denoiser(&src, &cs, cfg.denoiser.mode, &cfg.denoiser.train_config()?, &mut rng)
}

/// Writes `denoiser.bin` (with the schedule digest) and `denoiser_curve.csv`.
pub fn write_denoiser(cfg: &ExperimentConfig, trained: &Trained<f64>, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let blob = dir.join("denoiser.bin");
    let curve = dir.join("denoiser_curve.csv");
    std::fs::write(&blob, trained.denoiser.to_bytes(cfg.schedule.digest()))?;
    losses::save_curve_csv(&trained.curve, &curve)?;
    Ok((blob, curve))
}

#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub training: PolicyTraining,
    pub report: Vec<PolicyRow>,
    pub menu: ActionMenu,
}

/// Trains the step-split policy on the scenario grid and compares it with
/// exhaustive search on every state.
pub fn train_policy(cfg: &ExperimentConfig, jobs: usize) -> Result<PolicyOutput> {
    cfg.check()?;
    let src = cfg.source::<f64>()?;
    let pipe = pipeline(cfg, &src)?;
    let menu = cfg.menu()?;
    let channel = cfg.channel.clone();
    let evaluator = PipelineEvaluator {
        pipeline: &pipe,
        grid: &cfg.grid,
        menu: &menu,
        channel,
        lambda_q: cfg.policy.lambda_q,
        timeout_s: cfg.timeout_s,
    };
    let mut rng = seeded(derive_seed(cfg.master_seed, &[STREAM_POLICY]));
    let training = scheduler::train_policy(&evaluator, cfg.grid.len(), menu.len(), &cfg.policy.train_config(), &mut rng)?;
    let report_seed = derive_seed(cfg.master_seed, &[STREAM_REPORT]);
    let report = with_jobs(jobs, || {
        scheduler::policy_report(&training.q, &menu, &evaluator, cfg.policy.n_eval, report_seed)
    })??;
    Ok(PolicyOutput { training, report, menu })
}

/// Writes `qtable.csv`, `policy_report.csv` and `policy_log.csv`.
pub fn write_policy(cfg: &ExperimentConfig, out: &PolicyOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let q = dir.join("qtable.csv");
    let report = dir.join("policy_report.csv");
    let log = dir.join("policy_log.csv");
    out.training.q.write_csv(Some(&cfg.grid), &out.menu, std::fs::File::create(&q)?)?;
    scheduler::write_policy_report(&out.report, Some(&cfg.grid), &out.menu, std::fs::File::create(&report)?)?;
    scheduler::write_training_log(&out.training.log, std::fs::File::create(&log)?)?;
    Ok(vec![q, report, log])
}

/// Per-(scenario, variant) means read back from a transcript CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub snr_db: f64,
    pub rho_edge: f64,
    pub rho_local: f64,
    pub runs: usize,
    pub failure_rate: f64,
    pub latency_mean: f64,
    pub mse_mean: f64,
}

pub fn summarize_transcripts(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("{}: missing column `{name}`", path.display())))
    };
    let (iv, is, ie, il, ilat, ifail, imse) = (
        col("variant")?,
        col("snr_db")?,
        col("rho_edge")?,
        col("rho_local")?,
        col("L_s")?,
        col("failed")?,
        col("mse")?,
    );
    let num = |rec: &csv::StringRecord, i: usize| -> Result<f64> {
        rec[i]
            .parse::<f64>()
            .map_err(|e| Error::Config(format!("{}: column {}: {e}", path.display(), &headers[i])))
    };
    let mut rows: Vec<SummaryRow> = Vec::new();
    let mut sums: Vec<(usize, usize, f64, f64)> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let key = (rec[iv].to_string(), num(&rec, is)?, num(&rec, ie)?, num(&rec, il)?);
        let pos = rows
            .iter()
            .position(|r| (r.variant.as_str(), r.snr_db, r.rho_edge, r.rho_local) == (key.0.as_str(), key.1, key.2, key.3));
        let i = match pos {
            Some(i) => i,
            None => {
                rows.push(SummaryRow {
                    variant: key.0,
                    snr_db: key.1,
                    rho_edge: key.2,
                    rho_local: key.3,
                    runs: 0,
                    failure_rate: 0.0,
                    latency_mean: 0.0,
                    mse_mean: 0.0,
                });
                sums.push((0, 0, 0.0, 0.0));
                rows.len() - 1
            }
        };
        let s = &mut sums[i];
        s.0 += 1;
        if &rec[ifail] == "true" {
            s.1 += 1;
        }
        s.2 += num(&rec, ilat)?;
        s.3 += num(&rec, imse)?;
    }
    for (r, (n, f, l, m)) in rows.iter_mut().zip(sums) {
        r.runs = n;
        r.failure_rate = f as f64 / n as f64;
        r.latency_mean = l / n as f64;
        r.mse_mean = m / n as f64;
    }
    Ok(rows)
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "snr_db", "rho_edge", "rho_local", "runs", "failure_rate", "L_mean", "mse_mean"])?;
    for r in rows {
        w.write_record([
            r.variant.clone(),
            float17(r.snr_db),
            float17(r.rho_edge),
            float17(r.rho_local),
            r.runs.to_string(),
            float17(r.failure_rate),
            float17(r.latency_mean),
            float17(r.mse_mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}
