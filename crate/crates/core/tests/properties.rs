use margin_core::baselines::{fit_histogram, fit_platt, fit_temperature, BaselineKind};
use margin_core::harness::{bootstrap_mean_ci, paired_bootstrap};
use margin_core::metrics::ece;
use margin_core::selection::{selection_suite, Mode};
use margin_core::synthetic::theory::{ewma_unrolled, ewma_weights};
use margin_core::synthetic::{generate, Accuracy, AgentProfile, ConfidenceLaw, ScenarioSpec};
use margin_core::{band_index, select, CalibratorConfig, Pool, Response, TaskResponses};
use proptest::collection::vec;
use proptest::prelude::*;

const EPS: f64 = 1e-6;

fn task(answers: &[(u8, f64)]) -> TaskResponses {
    // class 0 is the correct answer
    let responses = answers
        .iter()
        .enumerate()
        .map(|(i, &(class, confidence))| Response {
            agent: format!("a{i}"),
            answer_class: format!("c{class}"),
            confidence,
            correct: class == 0,
        })
        .collect();
    TaskResponses::new("t", responses).unwrap()
}

fn answers() -> impl Strategy<Value = Vec<(u8, f64)>> {
    vec((0u8..4, 0.0f64..=1.0), 1..7)
}

fn nll(pairs: &[(f64, bool)], map: impl Fn(f64) -> f64) -> f64 {
    pairs
        .iter()
        .map(|&(c, o)| {
            let p = map(c).clamp(1e-300, 1.0 - 1e-16);
            if o {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum()
}

fn logit(c: f64) -> f64 {
    let c = c.clamp(EPS, 1.0 - EPS);
    (c / (1.0 - c)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn calibration_data() -> impl Strategy<Value = Vec<(f64, bool)>> {
    vec((0.01f64..0.99, any::<bool>()), 20..120)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn iterated_update_matches_unrolled_form(
        alpha in 0.001f64..0.999,
        initial in 0.0f64..=1.0,
        outcomes in vec(any::<bool>(), 0..400),
    ) {
        let xs: Vec<f64> = outcomes.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect();
        let mut est = initial;
        for x in &xs {
            est = (1.0 - alpha) * est + alpha * x;
        }
        prop_assert!((est - ewma_unrolled(alpha, initial, &xs)).abs() <= 1e-12);
    }

    #[test]
    fn unrolled_weights_sum_to_one(alpha in 0.001f64..0.999, t in 0usize..3000) {
        let w = ewma_weights(alpha, t);
        prop_assert_eq!(w.len(), t + 1);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn band_state_invariants(
        ops in vec((0usize..3, 0.0f64..=1.0, any::<bool>()), 1..200),
        bands in 1usize..6,
        up in 0.01f64..0.5,
        down in 0.01f64..0.5,
    ) {
        let cfg = CalibratorConfig::default().with_bands(bands).with_rates(up, down);
        let mut pool = Pool::new(cfg).unwrap();
        for (agent, c, o) in ops {
            let id = format!("a{agent}");
            pool.add_agent(&id);
            let before = pool.agent(&id).unwrap().clone();
            pool.observe(&id, c, o).unwrap();
            let after = pool.agent(&id).unwrap();
            let k = band_index(c, bands).unwrap();
            for (j, (b, a)) in before.bands().iter().zip(after.bands()).enumerate() {
                if j == k {
                    prop_assert_eq!(a.n_obs, b.n_obs + 1);
                } else {
                    prop_assert_eq!(a, b);
                }
                prop_assert!((0.0..=1.0).contains(&a.acc_hat));
                prop_assert!((0.0..=1.0).contains(&a.conf_bar));
            }
            let total: u64 = after.bands().iter().map(|b| b.n_obs).sum();
            prop_assert_eq!(after.model_level().n_obs, total);
            let cal = pool.calibrate(&id, c).unwrap();
            prop_assert!((0.0..=1.0).contains(&cal));
        }
    }

    #[test]
    fn observing_one_agent_leaves_others_untouched(
        warmup in vec((0.0f64..=1.0, any::<bool>()), 0..50),
        ops in vec((0.0f64..=1.0, any::<bool>()), 1..100),
    ) {
        let mut pool = Pool::new(CalibratorConfig::default()).unwrap();
        for &(c, o) in &warmup {
            pool.observe("b", c, o).unwrap();
        }
        pool.add_agent("b");
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let before: Vec<u64> = grid.iter().map(|&c| pool.calibrate("b", c).unwrap().to_bits()).collect();
        for (c, o) in ops {
            pool.observe("a", c, o).unwrap();
        }
        let after: Vec<u64> = grid.iter().map(|&c| pool.calibrate("b", c).unwrap().to_bits()).collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn blend_moves_monotonically_from_prior_to_band(
        band_acc in 0.05f64..1.0,
        band_conf in 0.05f64..1.0,
        model_acc in 0.05f64..1.0,
        model_conf in 0.05f64..1.0,
        shrinkage in 1.0f64..500.0,
        mut counts in vec(0u64..5000, 2..20),
    ) {
        counts.sort_unstable();
        let gamma_band = band_acc / band_conf;
        let gamma_prior = model_acc / model_conf;
        let (lo, hi) = (gamma_band.min(gamma_prior), gamma_band.max(gamma_prior));
        let mut prev: Option<f64> = None;
        for n in counts {
            let doc = serde_json::json!({
                "config": {
                    "alpha_up": 0.04, "alpha_down": 0.04, "band_count": 1,
                    "shrinkage": shrinkage, "epsilon": EPS, "prior_source": "model_level"
                },
                "agents": {"a": {
                    "bands": [{"acc_hat": band_acc, "conf_bar": band_conf, "n_obs": n}],
                    "model_level": {"acc_hat": model_acc, "conf_bar": model_conf, "n_obs": n}
                }}
            });
            let pool: Pool = serde_json::from_value(doc).unwrap();
            let g = pool.effective_factor("a", 0).unwrap();
            prop_assert!(g >= lo - 1e-12 && g <= hi + 1e-12);
            if let Some(p) = prev {
                // moves toward the band factor as n grows
                if gamma_band >= gamma_prior {
                    prop_assert!(g >= p - 1e-12);
                } else {
                    prop_assert!(g <= p + 1e-12);
                }
            }
            prev = Some(g);
        }
    }

    #[test]
    fn argmax_ignores_positive_scaling(a in answers(), scale in 1e-3f64..1e3, raw in vec(0.0f64..=1.0, 6)) {
        let t = task(&a);
        let calibrated: Vec<f64> = raw[..a.len()].to_vec();
        let scaled: Vec<f64> = calibrated.iter().map(|c| c * scale).collect();
        let x = select(&t, &calibrated).unwrap();
        let y = select(&t, &scaled).unwrap();
        prop_assert_eq!(x.chosen_answer_class, y.chosen_answer_class);
    }

    #[test]
    fn oracle_dominates_choice(a in answers()) {
        let t = task(&a);
        let r = select(&t, &t.raw_confidences()).unwrap();
        prop_assert!(r.oracle_correct || !r.chosen_correct);
        prop_assert!(r.oracle_correct || !r.majority_correct);
        prop_assert!((0.0..=1.0).contains(&r.random_expected));
    }

    #[test]
    fn suite_oracle_bounds_pass_rate(stream in vec(answers(), 1..40)) {
        let tasks: Vec<TaskResponses> = stream.iter().map(|a| task(a)).collect();
        let mut pool = Pool::new(CalibratorConfig::default()).unwrap();
        for mode in [Mode::Raw, Mode::Margin] {
            let s = selection_suite(&tasks, &mut pool, mode, 10).unwrap();
            prop_assert!(s.oracle >= s.pass_at_1);
            prop_assert!(s.oracle >= s.majority);
        }
    }

    #[test]
    fn ece_is_bounded(preds in vec((0.0f64..=1.0, any::<bool>()), 1..300), bins in 1usize..25) {
        let r = ece(&preds, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.ece));
        prop_assert_eq!(r.reliability.total(), preds.len());
        let single = ece(&preds[..1], bins).unwrap().ece;
        let (c, o) = preds[0];
        let target = if o { 1.0 } else { 0.0 };
        prop_assert!((single - (c - target).abs()).abs() < 1e-12);
    }

    #[test]
    fn temperature_and_platt_are_increasing(data in calibration_data()) {
        let grid: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
        let t = fit_temperature("a", &data, EPS).unwrap();
        let p = fit_platt("a", &data, EPS).unwrap();
        let slope = match p.kind {
            BaselineKind::Platt { slope, .. } => slope,
            _ => unreachable!(),
        };
        for w in grid.windows(2) {
            let (t0, t1) = (t.apply(w[0]), t.apply(w[1]));
            prop_assert!(t1 >= t0);
            if t0 > 1e-9 && t1 < 1.0 - 1e-9 {
                prop_assert!(t1 > t0);
            }
            if slope > 0.0 {
                let (p0, p1) = (p.apply(w[0]), p.apply(w[1]));
                prop_assert!(p1 >= p0);
                if p0 > 1e-9 && p1 < 1.0 - 1e-9 {
                    prop_assert!(p1 > p0);
                }
            }
        }
    }

    #[test]
    fn histogram_is_piecewise_constant(data in calibration_data(), bins in 1usize..15) {
        let h = fit_histogram("a", &data, bins).unwrap();
        let BaselineKind::Histogram { values, .. } = &h.kind else { unreachable!() };
        for (k, v) in values.iter().enumerate() {
            let lo = k as f64 / bins as f64;
            for f in [0.01, 0.5, 0.99] {
                prop_assert_eq!(h.apply(lo + f / bins as f64), *v);
            }
        }
    }

    #[test]
    fn fits_beat_random_parameters(data in calibration_data(), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let t = fit_temperature("a", &data, EPS).unwrap();
        let p = fit_platt("a", &data, EPS).unwrap();
        let fitted_t = nll(&data, |c| t.apply(c));
        let fitted_p = nll(&data, |c| p.apply(c));
        for _ in 0..50 {
            let temp = rng.random_range(0.05f64.ln()..20.0f64.ln()).exp();
            let (a, b) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let nt = nll(&data, |c| sigmoid(logit(c) / temp));
            let np = nll(&data, |c| sigmoid(a * logit(c) + b));
            prop_assert!(fitted_t <= nt + 1e-6 * nt.abs().max(1.0));
            prop_assert!(fitted_p <= np + 1e-6 * np.abs().max(1.0));
        }
    }

    #[test]
    fn fitted_baselines_stay_frozen(data in calibration_data(), probes in vec(0.0f64..=1.0, 1..50)) {
        for fit in [
            fit_temperature("a", &data, EPS).unwrap(),
            fit_platt("a", &data, EPS).unwrap(),
            fit_histogram("a", &data, 10).unwrap(),
        ] {
            let before = serde_json::to_string(&fit).unwrap();
            let first: Vec<f64> = probes.iter().map(|&c| fit.apply(c)).collect();
            let second: Vec<f64> = probes.iter().map(|&c| fit.apply(c)).collect();
            prop_assert_eq!(first, second);
            prop_assert_eq!(before, serde_json::to_string(&fit).unwrap());
        }
    }

    #[test]
    fn generated_agents_do_not_share_draws(seed in any::<u64>(), length in 1usize..200) {
        let profile = |id: &str, theta: f64| {
            AgentProfile::new(id, Accuracy::Fixed(theta), ConfidenceLaw::Uniform { low: 0.2, high: 0.9 })
        };
        let full = ScenarioSpec::new(vec![profile("x", 0.3), profile("y", 0.6), profile("z", 0.8)], length, seed);
        let mut partial = full.clone();
        partial.agents.remove(1);
        let a = generate(&full).unwrap();
        let b = generate(&partial).unwrap();
        let keep: Vec<_> = a.into_iter().filter(|o| o.agent != "y").collect();
        prop_assert_eq!(keep, b);
    }

    #[test]
    fn constant_differences_give_degenerate_interval(
        base in vec(-64i32..64, 1..60),
        shift in -32i32..32,
        seed in any::<u64>(),
    ) {
        // dyadic values keep a - b exact
        let b: Vec<f64> = base.iter().map(|&v| f64::from(v) / 8.0).collect();
        let d = f64::from(shift) / 8.0;
        let a: Vec<f64> = b.iter().map(|v| v + d).collect();
        let r = paired_bootstrap(&a, &b, 200, seed).unwrap();
        prop_assert_eq!((r.delta_mean, r.ci_low, r.ci_high), (d, d, d));
        let same = paired_bootstrap(&b, &b, 200, seed).unwrap();
        prop_assert_eq!((same.delta_mean, same.ci_low, same.ci_high), (0.0, 0.0, 0.0));
    }

    #[test]
    fn bootstrap_interval_is_ordered(values in vec(-1.0f64..1.0, 1..80), seed in any::<u64>()) {
        let (lo, hi) = bootstrap_mean_ci(&values, 300, seed).unwrap();
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= hi);
        prop_assert!(lo >= min - 1e-12 && hi <= max + 1e-12);
    }
}
