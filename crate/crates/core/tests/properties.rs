use proptest::prelude::*;
use semdiff::channel::{codec, wire, BitDepth, SemanticPayload};
use semdiff::diffusion;
use semdiff::losses::vae_loss;
use semdiff::metrics::{self, ResourceScenario};
use semdiff::scheduler::{argmax_prefer_last, reward_from};
use semdiff::schedules::{BetaKind, CoefficientForm, GammaShape};
use semdiff::{ChannelNoiseSchedule, Latent, VarianceSchedule};

fn schedule_strategy() -> impl Strategy<Value = ChannelNoiseSchedule<f64>> {
    (
        2usize..60,
        1e-4f64..0.02,
        1.5f64..15.0,
        0.0f64..1.0,
        0.0f64..3.0,
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(steps, start, ratio, frac, sigma, proportional, homogeneous)| {
            let base = VarianceSchedule::build(steps, start, (start * ratio).min(0.5), BetaKind::Linear).unwrap();
            let t_bar = 1 + ((steps - 1) as f64 * frac) as usize;
            let shape = if proportional { GammaShape::Proportional } else { GammaShape::Linear { start: None } };
            let form = if homogeneous { CoefficientForm::Homogeneous } else { CoefficientForm::Verbatim };
            ChannelNoiseSchedule::build(t_bar, sigma, &base, shape).unwrap().with_form(form)
        })
}

fn scenario_strategy() -> impl Strategy<Value = ResourceScenario> {
    (0.05f64..=1.0, 0.05f64..=1.0, 0.01f64..2.0, 0.01f64..4.0, -10.0f64..30.0, 1e5f64..1e8).prop_map(
        |(rho_edge, rho_local, c_edge, c_local, snr_db, bandwidth_hz)| ResourceScenario {
            rho_edge,
            rho_local,
            c_edge,
            c_local,
            snr_db,
            bandwidth_hz,
            rate_override: None,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn accumulated_variance_follows_recursion(cs in schedule_strategy()) {
        cs.validate().unwrap();
        let s2 = cs.sigma() * cs.sigma();
        let mut acc = 0.0;
        for t in 1..=cs.t_bar() {
            acc = cs.base().alpha(t) * acc + s2 * cs.gamma(t);
            prop_assert!((cs.sigma_sq(t) - acc).abs() <= 1e-12 * acc.max(1.0));
        }
        prop_assert!((cs.sigma_sq(cs.t_bar()) - s2).abs() <= 1e-12 * s2.max(1e-300));
    }

    #[test]
    fn noise_form_matches_closed_form(
        cs in schedule_strategy(),
        frac in 0.0f64..1.0,
        z0 in prop::collection::vec(-3.0f64..3.0, 1..6),
        seed in any::<u64>(),
    ) {
        let t = 1 + ((cs.t_bar() - 1) as f64 * frac) as usize;
        let k = cs.noise_scale(t);
        prop_assume!(k != 0.0);
        let z0 = Latent::new(z0).unwrap();
        let eps = Latent::standard_normal(z0.dim(), &mut semdiff::rng::seeded(seed));
        let z_t = z0.combine(cs.base().alpha_bar(t).sqrt(), &eps, k);
        let a = diffusion::posterior_mean(&z_t, &z0, t, &cs).unwrap();
        let b = diffusion::posterior_mean_from_noise(&z_t, &eps, t, &cs).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() <= 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn posterior_variance_is_nonnegative_and_below_prior(cs in schedule_strategy(), frac in 0.0f64..1.0) {
        let t = 1 + ((cs.t_bar() - 1) as f64 * frac) as usize;
        let c = cs.constants(t);
        let v = c.posterior_variance();
        prop_assert!(v >= 0.0);
        prop_assert!(v <= 1.0 - c.alpha_bar_prev + c.sigma_prev_sq + 1e-15);
    }

    #[test]
    fn vae_loss_ignores_item_order(
        items in prop::collection::vec(
            (prop::collection::vec(-2.0f64..2.0, 3), prop::collection::vec(0.1f64..2.0, 3),
             prop::collection::vec(-2.0f64..2.0, 4), prop::collection::vec(-2.0f64..2.0, 4)),
            1..8),
        rotate in 0usize..8,
    ) {
        let split = |v: &[(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)]| {
            (
                v.iter().map(|i| i.0.clone()).collect::<Vec<_>>(),
                v.iter().map(|i| i.1.clone()).collect::<Vec<_>>(),
                v.iter().map(|i| i.2.clone()).collect::<Vec<_>>(),
                v.iter().map(|i| i.3.clone()).collect::<Vec<_>>(),
            )
        };
        let (m, s, o, r) = split(&items);
        let a = vae_loss(&m, &s, &o, &r).unwrap();
        let mut shuffled = items.clone();
        shuffled.rotate_left(rotate % items.len());
        shuffled.reverse();
        let (m, s, o, r) = split(&shuffled);
        let b = vae_loss(&m, &s, &o, &r).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn quantizer_error_within_half_step(
        xs in prop::collection::vec(-10.0f64..10.0, 1..64),
        range in 0.1f64..8.0,
        wide in any::<bool>(),
    ) {
        let depth = if wide { BitDepth::B16 } else { BitDepth::B8 };
        let z = Latent::new(xs.clone()).unwrap();
        let enc = codec::encode(&z, depth, range).unwrap();
        let back: Latent<f64> = codec::decode(&enc.bytes, depth, range).unwrap();
        let delta = depth.step(range);
        let mut outside = 0;
        for (&x, &y) in xs.iter().zip(back.iter()) {
            let bound = if x.abs() > range {
                outside += 1;
                x.abs() - range + delta / 2.0
            } else {
                delta / 2.0
            };
            prop_assert!((x - y).abs() <= bound + 1e-12);
            prop_assert!(y.abs() < range);
        }
        prop_assert_eq!(enc.clipped, outside);
    }

    #[test]
    fn wide_codec_is_lossless(bits in prop::collection::vec(any::<u32>(), 1..64)) {
        let xs: Vec<f32> = bits.into_iter().map(f32::from_bits).filter(|x| x.is_finite()).collect();
        prop_assume!(!xs.is_empty());
        let z = Latent::new(xs.clone()).unwrap();
        let enc = codec::encode(&z, BitDepth::B32, 1.0).unwrap();
        let back: Latent<f32> = codec::decode(&enc.bytes, BitDepth::B32, 1.0).unwrap();
        for (a, b) in xs.iter().zip(back.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn payload_round_trips(
        xs in prop::collection::vec(-100.0f32..100.0, 1..32),
        label in any::<u16>(),
        residual_step in any::<u16>(),
        digest in any::<u64>(),
    ) {
        let payload = SemanticPayload { latent: Latent::new(xs).unwrap(), label, residual_step, schedule_digest: digest };
        let (bytes, clipped) = wire::to_bytes(&payload, BitDepth::B32, 1.0).unwrap();
        prop_assert_eq!(clipped, 0);
        prop_assert_eq!(wire::from_bytes::<f32>(&bytes, 1.0).unwrap(), payload);
    }

    #[test]
    fn latency_terms_are_nonnegative(sc in scenario_strategy(), bits in 0u64..1 << 24, steps in 0usize..50) {
        prop_assert!(metrics::transmission_latency(bits, &sc) >= 0.0);
        prop_assert!(metrics::compute_latency(steps, sc.c_edge, sc.rho_edge) >= 0.0);
        prop_assert!(metrics::compute_latency(steps, sc.c_local, sc.rho_local) >= 0.0);
    }

    #[test]
    fn moving_steps_to_faster_tier_never_slows_compute(sc in scenario_strategy(), total in 1usize..40, k in 0usize..40) {
        let k = k % total;
        let compute = |t_edge: usize| {
            metrics::compute_latency(t_edge, sc.c_edge, sc.rho_edge)
                + metrics::compute_latency(total - t_edge, sc.c_local, sc.rho_local)
        };
        let edge_faster = sc.c_edge / sc.rho_edge <= sc.c_local / sc.rho_local;
        let (before, after) = if edge_faster { (compute(k), compute(k + 1)) } else { (compute(k + 1), compute(k)) };
        prop_assert!(after <= before + 1e-12 * before.max(1.0));
    }

    #[test]
    fn positive_affine_reward_transform_keeps_argmax(
        values in prop::collection::vec(-100.0f64..0.0, 1..10),
        scale in 0.1f64..10.0,
        shift in -50.0f64..50.0,
    ) {
        let moved: Vec<f64> = values.iter().map(|v| scale * v + shift).collect();
        let a = argmax_prefer_last(&values);
        let b = argmax_prefer_last(&moved);
        prop_assert!(a == b || values[a] == values[b]);
    }

    #[test]
    fn reward_decreases_with_latency_and_error(
        l in 0.0f64..100.0, dl in 0.0f64..10.0, mse in 0.0f64..5.0, dm in 0.0f64..5.0, lambda in 0.0f64..100.0,
    ) {
        prop_assert!(reward_from(l + dl, mse, false, lambda) <= reward_from(l, mse, false, lambda));
        prop_assert!(reward_from(l, mse + dm, false, lambda) <= reward_from(l, mse, false, lambda));
        prop_assert!(reward_from(l, mse, true, lambda) < reward_from(l, mse, false, lambda));
    }

    #[test]
    fn spearman_is_bounded_and_symmetric(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30),
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = metrics::spearman(&x, &y);
        prop_assume!(r.is_finite());
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        prop_assert!((r - metrics::spearman(&y, &x)).abs() <= 1e-12);
    }
}
