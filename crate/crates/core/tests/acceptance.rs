//! End-to-end acceptance checks. Runs as a plain binary (no libtest harness)
//! and prints one PASS/FAIL line per criterion.

use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use semdiff::channel::{codec, wire, BitDepth, ChannelConfig, SemanticPayload};
use semdiff::config::ExperimentConfig;
use semdiff::diffusion::{self, NoisePredictor};
use semdiff::experiment::{self, Axis};
use semdiff::losses::{self, Activation, NoiseBatch, TinyDenoiser};
use semdiff::metrics::{self, ResourceScenario};
use semdiff::rng::{derive_seed, seeded, SimRng};
use semdiff::scheduler::{self, PipelineEvaluator};
use semdiff::schedules::{BetaKind, CoefficientForm, GammaShape, ScheduleSpec};
use semdiff::source::{ComponentSpec, NoiseMode};
use semdiff::transceiver::{Pipeline, PipelineConfig, Variant, EXPANSION_FACTOR};
use semdiff::{ChannelNoiseSchedule, Error, Latent, Latent32, OracleDenoiser, SemanticSource, VarianceSchedule};

type Outcome = semdiff::Result<(bool, String)>;

fn random_base(rng: &mut SimRng) -> VarianceSchedule<f64> {
    let steps = rng.random_range(2..=40);
    let kind = if rng.random::<f64>() < 0.75 { BetaKind::Linear } else { BetaKind::Cosine };
    let start = rng.random_range(1e-4..0.02);
    let end = rng.random_range(2.0 * start..0.3);
    VarianceSchedule::build(steps, start, end, kind).expect("random base schedule")
}

fn random_channel(rng: &mut SimRng, max_sigma: f64) -> ChannelNoiseSchedule<f64> {
    let base = random_base(rng);
    let t_bar = rng.random_range(1..=base.steps());
    let sigma = rng.random_range(0.0..max_sigma);
    let shape = if rng.random::<bool>() {
        GammaShape::Linear { start: None }
    } else {
        GammaShape::Proportional
    };
    let form = if rng.random::<bool>() { CoefficientForm::Verbatim } else { CoefficientForm::Homogeneous };
    ChannelNoiseSchedule::build(t_bar, sigma, &base, shape)
        .expect("random channel schedule")
        .with_form(form)
}

/// `E[x | z_t]` for the product `N(z_t; sqrt(alpha) x, v1) N(x; c, v2)`
/// by trapezoid quadrature on a grid fine relative to the product's width.
fn quadrature_posterior_mean(z_t: f64, alpha: f64, v1: f64, c: f64, v2: f64) -> f64 {
    if v2 == 0.0 {
        return c;
    }
    let ra = alpha.sqrt();
    let c1 = z_t / ra;
    let s1 = (v1 / alpha).sqrt();
    let s2 = v2.sqrt();
    let width = (1.0 / (1.0 / (s1 * s1) + 1.0 / v2)).sqrt();
    let h = width / 12.0;
    let lo = c1.min(c) - 14.0 * s1.max(s2);
    let hi = c1.max(c) + 14.0 * s1.max(s2);
    let n = ((hi - lo) / h).ceil().min(4e6) as usize;
    let h = (hi - lo) / n as f64;
    let log_f = |x: f64| -(z_t - ra * x).powi(2) / (2.0 * v1) - (x - c).powi(2) / (2.0 * v2);
    let peak = (0..=n).map(|i| log_f(lo + i as f64 * h)).fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=n {
        let x = lo + i as f64 * h;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        let f = w * (log_f(x) - peak).exp();
        num += f * x;
        den += f;
    }
    num / den
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = seeded(101);
    let mut worst_quad = 0.0f64;
    for _ in 0..500 {
        let cs = random_channel(&mut rng, 1.5);
        let t = rng.random_range(1..=cs.t_bar());
        let z_t = rng.random_range(-3.0..3.0);
        let z0 = rng.random_range(-2.0..2.0);
        let vs = cs.base();
        let alpha = vs.alpha(t);
        let v1 = 1.0 - alpha + cs.sigma_step_sq(t);
        let v2 = 1.0 - vs.alpha_bar(t - 1) + cs.sigma_sq(t - 1);
        let c = vs.alpha_bar(t - 1).sqrt() * z0;
        let expected = quadrature_posterior_mean(z_t, alpha, v1, c, v2);
        let closed = diffusion::posterior_mean(&Latent::new(vec![z_t])?, &Latent::new(vec![z0])?, t, &cs)?;
        worst_quad = worst_quad.max((closed.as_slice()[0] - expected).abs());
    }
    let mut worst_sub = 0.0f64;
    let mut cases = 0;
    while cases < 10_000 {
        let cs = random_channel(&mut rng, 1.5);
        for _ in 0..50 {
            let t = rng.random_range(1..=cs.t_bar());
            let k = cs.noise_scale(t);
            if k == 0.0 {
                continue;
            }
            let z0 = Latent::new((0..3).map(|_| rng.random_range(-2.0..2.0)).collect())?;
            let eps = Latent::standard_normal(3, &mut rng);
            let z_t = z0.combine(cs.base().alpha_bar(t).sqrt(), &eps, k);
            let closed = diffusion::posterior_mean(&z_t, &z0, t, &cs)?;
            let noise_form = diffusion::posterior_mean_from_noise(&z_t, &eps, t, &cs)?;
            worst_sub = worst_sub.max(closed.as_slice().iter().zip(noise_form.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            cases += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Ok((
        worst_quad <= 1e-6 && worst_sub <= 1e-10 && secs < 60.0,
        format!("quadrature max err {worst_quad:.2e} over 500 cases, noise-form max err {worst_sub:.2e} over {cases} cases, {secs:.1}s"),
    ))
}

fn max_abs_diff(a: &Latent<f64>, b: &Latent<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_2() -> Outcome {
    let mut rng = seeded(202);
    let src = SemanticSource::<f64>::from_specs(&[
        ComponentSpec { weight: 0.3, mean: vec![1.0, -0.5, 0.2, 0.0], std: 0.2, label: 0 },
        ComponentSpec { weight: 0.7, mean: vec![-1.0, 0.5, 0.0, 0.8], std: 0.1, label: 1 },
    ])?;
    let mut worst = [0.0f64; 7];
    let names = ["reverse step", "forward step", "posterior mean", "posterior variance", "oracle", "reverse chain", "sigma_bar"];
    let mut cases = 0;
    for _ in 0..60 {
        let base = random_base(&mut rng);
        for form in [CoefficientForm::Verbatim, CoefficientForm::Homogeneous] {
            let cs = ChannelNoiseSchedule::clean(base.steps(), &base)?.with_form(form);
            let clean_oracle = OracleDenoiser::new(&src, &cs, NoiseMode::Clean);
            let channel_oracle = OracleDenoiser::new(&src, &cs, NoiseMode::Channel);
            for _ in 0..10 {
                let t = rng.random_range(1..=base.steps());
                let z = Latent::standard_normal(4, &mut rng).scaled(2.0);
                let eps = Latent::standard_normal(4, &mut rng);
                let seed = rng.random::<u64>();

                let a = diffusion::reverse_step_modified(&z, t, &eps, &cs, &mut seeded(seed))?;
                let b = diffusion::reverse_step_standard(&z, t, &eps, &base, &mut seeded(seed))?;
                worst[0] = worst[0].max(max_abs_diff(&a, &b));

                let a = diffusion::forward_channel_step(&z, t, &cs, &mut seeded(seed))?;
                let b = diffusion::forward_step(&z, t, &base, &mut seeded(seed))?;
                worst[1] = worst[1].max(max_abs_diff(&a, &b));

                // standard DDPM posterior written out directly
                let (al, ab, abp) = (base.alpha(t), base.alpha_bar(t), base.alpha_bar(t - 1));
                let z0 = Latent::standard_normal(4, &mut rng);
                let ddpm = z.combine(al.sqrt() * (1.0 - abp) / (1.0 - ab), &z0, abp.sqrt() * (1.0 - al) / (1.0 - ab));
                worst[2] = worst[2].max(max_abs_diff(&diffusion::posterior_mean(&z, &z0, t, &cs)?, &ddpm));
                let tilde_beta = (1.0 - abp) / (1.0 - ab) * (1.0 - al);
                worst[3] = worst[3].max((cs.constants(t).posterior_variance() - tilde_beta).abs());

                let label = src.sample_label(&mut rng);
                let a = channel_oracle.predict(&z, t, label)?;
                let b = clean_oracle.predict(&z, t, label)?;
                worst[4] = worst[4].max(max_abs_diff(&a, &b));

                let start = Latent::standard_normal(4, &mut rng);
                let a = diffusion::finetune(start.clone(), label, &channel_oracle, &cs, &mut seeded(seed))?;
                let b = diffusion::denoise_standard(start, base.steps(), 0, label, &clean_oracle, &base, &mut seeded(seed))?;
                worst[5] = worst[5].max(max_abs_diff(&a, &b));

                worst[6] = worst[6].max((cs.sigma_bar(t) - base.sigma_bar(t)).abs());
                cases += 1;
            }
        }
    }
    let detail = names
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((worst.iter().all(|&w| w <= 1e-12), format!("{cases} cases per operation; max abs diff: {detail}")))
}

fn criterion_3() -> Outcome {
    let base = ScheduleSpec::default().variance_schedule::<f64>()?;
    let n = 100_000;
    let z0 = 0.7;
    let mut rng = seeded(303);
    let mut ok = true;
    let mut worst_z = 0.0f64;
    for t_bar in [1, 5, 20] {
        for sigma in [0.1, 0.5, 1.0] {
            let cs = ChannelNoiseSchedule::build(t_bar, sigma, &base, GammaShape::Linear { start: None })?;
            // every entry is an independent chain from the same z_0
            let mut z = Latent::new(vec![z0; n])?;
            for t in 1..=t_bar {
                z = diffusion::forward_channel_step(&z, t, &cs, &mut rng)?;
            }
            let mean_expected = base.alpha_bar(t_bar).sqrt() * z0;
            let var_expected = 1.0 - base.alpha_bar(t_bar) + sigma * sigma;
            let xs = z.as_slice();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let z_mean = (mean - mean_expected).abs() / (var_expected / n as f64).sqrt();
            let z_var = (var - var_expected).abs() / (var_expected * (2.0 / (n - 1) as f64).sqrt());
            worst_z = worst_z.max(z_mean).max(z_var);
            ok &= z_mean <= 3.0 && z_var <= 3.0;
        }
    }
    Ok((ok, format!("9 configurations at {n} samples, worst deviation {worst_z:.2} standard errors")))
}

fn criterion_4() -> Outcome {
    let d = 64;
    let mean: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let src = SemanticSource::<f64>::from_specs(&[
        ComponentSpec { weight: 0.5, mean: mean.clone(), std: 0.1, label: 0 },
        ComponentSpec { weight: 0.5, mean: mean.iter().map(|m| -m).collect(), std: 0.1, label: 1 },
    ])?;
    let spec = ScheduleSpec::default();
    let pipe = Pipeline::new(&src, &spec, 1000, &mut seeded(404))?;
    let channel = ChannelConfig::default();
    let route = PipelineConfig::new(Variant::Route, 10, 20, channel.clone());
    let nft = PipelineConfig::new(Variant::NonFineTuning, 10, 20, channel);
    let snrs = [0.0, 5.0, 10.0, 15.0];
    let n = 10_000;
    let n_ensemble = 1000;
    let mut ok = true;
    let mut win_rates = Vec::new();
    let mut mses = Vec::new();
    let mut eds = Vec::new();
    for (p, &snr) in snrs.iter().enumerate() {
        let sc = ResourceScenario { snr_db: snr, ..ResourceScenario::default() };
        let results: Vec<(f64, f64, Vec<f64>)> = (0..n)
            .map(|i| {
                let seed = derive_seed(404, &[p as u64, i as u64]);
                let r = pipe.run(&route, 0, &sc, seed, &mut seeded(seed))?;
                let b = pipe.run(&nft, 0, &sc, seed, &mut seeded(seed))?;
                Ok((r.mse, b.mse, r.latent.into_vec()))
            })
            .collect::<semdiff::Result<_>>()?;
        let wins = results.iter().filter(|(r, b, _)| r < b).count();
        let rate = wins as f64 / n as f64;
        ok &= rate >= 0.95;
        win_rates.push(rate);
        mses.push(results.iter().map(|r| r.0).sum::<f64>() / n as f64);
        let ensemble: Vec<Vec<f64>> = results.into_iter().take(n_ensemble).map(|r| r.2).collect();
        eds.push(pipe.reference(0)?.energy_distance(&ensemble));
    }
    let fidelity: Vec<f64> = eds.iter().map(|e| -e).collect();
    let rho = metrics::spearman(&snrs, &fidelity);
    ok &= rho > 0.0;
    let fmt = |v: &[f64], p: usize| v.iter().map(|x| format!("{x:.*}", p)).collect::<Vec<_>>().join("/");
    Ok((
        ok,
        format!(
            "ROUTE win rate {} at SNR 0/5/10/15 dB; ensemble energy distance {} (Spearman of fidelity vs SNR {rho:.2}); per-run ROUTE MSE {}",
            fmt(&win_rates, 4),
            fmt(&eds, 4),
            fmt(&mses, 5)
        ),
    ))
}

fn criterion_5() -> Outcome {
    let cfg = ExperimentConfig::default();
    let src = cfg.source::<f64>()?;
    let pipe = Pipeline::new(&src, &cfg.schedule, cfg.reference_draws, &mut seeded(505))?;
    let menu = cfg.menu()?;
    let ev = PipelineEvaluator {
        pipeline: &pipe,
        grid: &cfg.grid,
        menu: &menu,
        channel: cfg.channel.clone(),
        lambda_q: 0.0,
        timeout_s: cfg.timeout_s,
    };
    let mut ok = true;
    let mut worst_margin = f64::INFINITY;
    let mut worst_ratio = 0.0f64;
    let mut bits_exact = true;
    for s in 0..cfg.grid.len() {
        let sc = cfg.grid.scenario(cfg.grid.state(s));
        let (best, _) = scheduler::grid_search_optimal(s, &menu, &ev, 4, derive_seed(505, &[s as u64]))?;
        let route = ev.rollout(s, best, &mut seeded(s as u64))?.total_latency();
        let label = src.sample_label(&mut seeded(s as u64));
        let run = |variant, t_edge| {
            let mut pc = PipelineConfig::new(variant, t_edge, cfg.total_steps, cfg.channel.clone());
            pc.nominal_dim = cfg.nominal_dim;
            pipe.run(&pc, label, &sc, 0, &mut seeded(s as u64))
        };
        let edge = run(Variant::EdgeAigc, cfg.total_steps)?;
        let local = run(Variant::LocalAigc, 0)?;
        let margin = edge.total_latency().min(local.total_latency()) - route;
        worst_margin = worst_margin.min(margin);
        ok &= margin >= -1e-12;

        let split = run(Variant::Route, cfg.total_steps / 2)?;
        bits_exact &= edge.o_bits == EXPANSION_FACTOR * split.o_bits;
        let ratio = edge.latency.l1 / split.latency.l1;
        worst_ratio = worst_ratio.max((ratio / EXPANSION_FACTOR as f64 - 1.0).abs());
    }
    ok &= bits_exact && worst_ratio <= 1e-12;
    Ok((
        ok,
        format!(
            "{} grid points, smallest margin min(Edge, Local) - ROUTE = {worst_margin:.3}s; Edge/ROUTE payload bits exact x48: {bits_exact}, L1 ratio rel err {worst_ratio:.1e}",
            cfg.grid.len()
        ),
    ))
}

fn criterion_6() -> Outcome {
    let mut rng = seeded(606);
    let mut worst_rec = 0.0f64;
    let mut worst_end = 0.0f64;
    let mut worst_norm = 0.0f64;
    let mut monotone = true;
    for _ in 0..1000 {
        let mut cs = random_channel(&mut rng, 3.0);
        while cs.sigma() == 0.0 {
            cs = random_channel(&mut rng, 3.0);
        }
        cs.validate()?;
        let vs = cs.base();
        let s2 = cs.sigma() * cs.sigma();
        let mut acc = 0.0;
        for t in 1..=cs.t_bar() {
            acc = vs.alpha(t) * acc + s2 * cs.gamma(t);
            worst_rec = worst_rec.max((cs.sigma_sq(t) - acc).abs() / acc.max(1.0));
            if t >= 2 {
                monotone &= cs.gamma(t) > cs.gamma(t - 1);
            }
        }
        worst_end = worst_end.max((cs.sigma_sq(cs.t_bar()) - s2).abs() / s2);
        let norm: f64 = (1..=cs.t_bar())
            .map(|t| cs.gamma(t) * (t + 1..=cs.t_bar()).map(|j| vs.alpha(j)).product::<f64>())
            .sum();
        worst_norm = worst_norm.max((norm - 1.0).abs());
    }
    let base = ScheduleSpec::default().variance_schedule::<f64>()?;
    let rejected = matches!(
        ChannelNoiseSchedule::build(5, 0.5, &base, GammaShape::Linear { start: Some(0.9) }),
        Err(Error::Infeasible(_))
    );
    Ok((
        worst_rec <= 1e-12 && worst_end <= 1e-12 && worst_norm <= 1e-12 && monotone && rejected,
        format!(
            "1000 schedules: recursion {worst_rec:.1e}, terminal variance {worst_end:.1e}, normalization {worst_norm:.1e}; gamma increasing: {monotone}; infeasible gamma_start rejected: {rejected}"
        ),
    ))
}

fn criterion_7() -> Outcome {
    let mut rng = seeded(707);
    let src = SemanticSource::<f64>::from_specs(&[
        ComponentSpec { weight: 0.4, mean: vec![1.0, -1.0], std: 0.2, label: 0 },
        ComponentSpec { weight: 0.6, mean: vec![-0.5, 0.5], std: 0.1, label: 1 },
    ])?;
    let spec = ScheduleSpec::default();
    let vs = spec.variance_schedule::<f64>()?;
    let cs = spec.channel_schedule(&vs, 20, 0.4)?;
    let mut worst_grad = 0.0f64;
    for i in 0..100 {
        let net = TinyDenoiser::new(2, 8, vec![0, 1], vs.steps(), Activation::Tanh, &mut rng)?;
        let mode = if i % 2 == 0 { NoiseMode::Clean } else { NoiseMode::Channel };
        let batch = NoiseBatch::sample(&src, &cs, mode, 8, &mut rng)?;
        worst_grad = worst_grad.max(losses::grad_check(&net, &batch, &cs)?);
    }

    let point = SemanticSource::<f64>::point_mass(vec![0.5], 0)?;
    let clean = ChannelNoiseSchedule::clean(vs.steps(), &vs)?;
    let cfg = losses::TrainConfig::default();
    let trained = losses::train_tiny_denoiser(&point, &clean, NoiseMode::Clean, &cfg, &mut seeded(7071))?;
    let held_out = NoiseBatch::sample(&point, &clean, NoiseMode::Clean, 4000, &mut seeded(7072))?;
    let l_trained = losses::noise_prediction_loss(&trained.denoiser, &held_out, &clean)?;
    let oracle = OracleDenoiser::new(&point, &clean, NoiseMode::Clean);
    let l_oracle = losses::noise_prediction_loss(&oracle, &held_out, &clean)?;
    let zero = |z: &Latent<f64>, _t: usize, _c: u16| Ok(Latent::zeros(z.dim()));
    let l_zero = losses::noise_prediction_loss(&zero, &held_out, &clean)?;
    let gap = (l_trained - l_oracle) / l_zero;

    let mix = ExperimentConfig::default().source::<f64>()?;
    let sigma0 = spec.channel_schedule(&vs, vs.steps(), 0.0)?;
    let short = losses::TrainConfig { epochs: 30, ..losses::TrainConfig::default() };
    let mut diffs = Vec::new();
    for i in 0..8u64 {
        let seed = derive_seed(7073, &[i]);
        let a = losses::train_tiny_denoiser(&mix, &sigma0, NoiseMode::Channel, &short, &mut seeded(seed))?;
        let b = losses::train_tiny_denoiser(&mix, &sigma0, NoiseMode::Clean, &short, &mut seeded(seed))?;
        diffs.push(a.final_loss() - b.final_loss());
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    // paired t statistic; identical runs have no difference to test
    let t_stat = if sd == 0.0 { if mean == 0.0 { 0.0 } else { f64::INFINITY } } else { mean / (sd / n.sqrt()) };
    // two-sided 5% critical value at 7 degrees of freedom
    let matches = t_stat.abs() < 2.365;

    Ok((
        worst_grad < 1e-4 && gap <= 0.1 && matches,
        format!(
            "grad check max {worst_grad:.1e} over 100 inits; point mass: trained {l_trained:.4}, oracle {l_oracle:.2e}, zero predictor {l_zero:.4}, gap {:.2}% of zero loss; sigma=0 channel vs clean: mean loss diff {mean:.1e}, paired t {t_stat:.2}",
            100.0 * gap
        ),
    ))
}

fn criterion_8() -> Outcome {
    let means = [[1.0, 2.0, 0.5], [3.0, -1.0, 2.5], [0.0, 0.2, 0.1]];
    let toy = |s: usize, a: usize, rng: &mut SimRng| -> semdiff::Result<f64> {
        Ok(means[s][a] + 0.5 * semdiff::rng::standard_normal::<f64, _>(rng))
    };
    let training = scheduler::train_policy(&toy, 3, 3, &scheduler::TrainConfig::new(10_000), &mut seeded(808))?;
    let truth: Vec<usize> = means.iter().map(|row| scheduler::argmax_prefer_last(row)).collect();
    let toy_ok = training.q.policy() == truth;

    let mut cfg = ExperimentConfig::default();
    cfg.policy.n_eval = 1000;
    let out = experiment::train_policy(&cfg, 0)?;
    let worst = out.report.iter().map(|r| r.relative_gap()).fold(0.0, f64::max);
    let agree = out.report.iter().filter(|r| r.policy_action == r.oracle_action).count();
    let policy_mean = out.report.iter().map(|r| r.policy_reward).sum::<f64>() / out.report.len() as f64;
    let oracle_mean = out.report.iter().map(|r| r.oracle_reward).sum::<f64>() / out.report.len() as f64;
    let overall = (policy_mean - oracle_mean).abs() / oracle_mean.abs();
    Ok((
        toy_ok && worst <= 0.05,
        format!(
            "toy policy {:?} vs argmax {truth:?}; default grid: {agree}/{} states agree, worst per-state reward gap {:.2}%, grid-mean gap {:.2}%",
            training.q.policy(),
            out.report.len(),
            100.0 * worst,
            100.0 * overall
        ),
    ))
}

fn criterion_9() -> Outcome {
    let payload = SemanticPayload {
        latent: Latent32::new(vec![0.0, -1.5, 2.25, 1e-3, -0.7, 3.0, 0.125, -2.0])?,
        label: 3,
        residual_step: 10,
        schedule_digest: ScheduleSpec::default().digest(),
    };
    let golden32: &[u8] = include_bytes!("fixtures/payload_v1_b32.bin");
    let golden8: &[u8] = include_bytes!("fixtures/payload_v1_b8.bin");
    let (b32, _) = wire::to_bytes(&payload, BitDepth::B32, 2.5)?;
    let (b8, clipped) = wire::to_bytes(&payload, BitDepth::B8, 2.5)?;
    let back32 = wire::from_bytes::<f32>(golden32, 2.5)?;
    let back8 = wire::from_bytes::<f32>(golden8, 2.5)?;
    let golden_ok = b32 == golden32
        && b8 == golden8
        && clipped == 1
        && back32 == payload
        && wire::to_bytes(&back32, BitDepth::B32, 2.5)?.0 == golden32
        && wire::to_bytes(&back8, BitDepth::B8, 2.5)?.0 == golden8;

    let mut rng = seeded(909);
    let raw: Vec<f32> = (0..100_000)
        .map(|_| loop {
            let x = f32::from_bits(rng.random());
            if x.is_finite() {
                break x;
            }
        })
        .collect();
    let z = Latent::new(raw.clone())?;
    let back: Latent<f32> = codec::decode(&codec::encode(&z, BitDepth::B32, 1.0)?.bytes, BitDepth::B32, 1.0)?;
    let lossless = back.as_slice().iter().zip(&raw).all(|(a, b)| a.to_bits() == b.to_bits());

    let r = 2.5;
    let delta = BitDepth::B8.step(r);
    let xs: Vec<f64> = (0..1_000_000).map(|_| rng.random_range(-1.2 * r..1.2 * r)).collect();
    let z = Latent::new(xs.clone())?;
    let enc = codec::encode(&z, BitDepth::B8, r)?;
    let back: Latent<f64> = codec::decode(&enc.bytes, BitDepth::B8, r)?;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut outside = 0;
    for (&x, &y) in xs.iter().zip(back.as_slice()) {
        let bound = if x.abs() > r {
            outside += 1;
            x.abs() - r + delta / 2.0
        } else {
            delta / 2.0
        };
        worst_excess = worst_excess.max((x - y).abs() - bound);
    }
    let bound_ok = worst_excess <= 1e-12 && enc.clipped == outside;
    Ok((
        golden_ok && lossless && bound_ok,
        format!(
            "golden 32/8-bit byte-exact: {golden_ok}; 32-bit lossless on 1e5 random floats: {lossless}; 8-bit on 1e6 entries: worst error minus bound {worst_excess:.2e}, clipped {} (expected {outside})",
            enc.clipped
        ),
    ))
}

fn criterion_10() -> Outcome {
    let cfg = ExperimentConfig::default();
    let dirs = [tempfile::tempdir()?, tempfile::tempdir()?];
    let mut same = true;
    let mut files = 0;
    for axis in [Axis::Snr, Axis::Compute] {
        let mut outputs = Vec::new();
        for (dir, jobs) in dirs.iter().zip([1, 4]) {
            let out = experiment::sweep(&cfg, axis, jobs)?;
            outputs.push(experiment::write_sweep(&out, dir.path())?);
        }
        let (a, b) = (&outputs[0], &outputs[1]);
        for (x, y) in [(&a.0, &b.0), (&a.1, &b.1)] {
            same &= std::fs::read(x)? == std::fs::read(y)?;
            files += 1;
        }
    }
    Ok((same, format!("{files} CSV files compared across 1 and 4 workers, byte-identical: {same}")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("posterior mean derivation", criterion_1),
        ("sigma = 0 reductions", criterion_2),
        ("stepwise vs single-shot marginal", criterion_3),
        ("fine-tuning efficacy", criterion_4),
        ("latency trend", criterion_5),
        ("schedule bookkeeping", criterion_6),
        ("trainer validity", criterion_7),
        ("scheduler soundness", criterion_8),
        ("wire format", criterion_9),
        ("determinism", criterion_10),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let (pass, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "criterion {:>2} {}: {name} ({detail}) [{:.1}s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
