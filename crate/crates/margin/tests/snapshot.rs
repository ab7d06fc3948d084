use margin::{load_pool, pool_from_json, pool_to_json, save_pool};
use margin_core::{CalibratorConfig, Pool, PriorSource};
use proptest::collection::vec;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_is_bit_exact(
        ops in vec((0usize..4, 0.0f64..=1.0, any::<bool>()), 0..300),
        alpha in 0.001f64..0.9,
        bands in 1usize..7,
        pool_prior in any::<bool>(),
    ) {
        let prior = if pool_prior { PriorSource::PoolLevel } else { PriorSource::ModelLevel };
        let cfg = CalibratorConfig::symmetric(alpha).with_bands(bands).with_prior(prior);
        let mut pool = Pool::new(cfg).unwrap();
        for (agent, c, o) in ops {
            pool.observe(&format!("agent-{agent}"), c, o).unwrap();
        }
        let text = pool_to_json(&pool).unwrap();
        let back = pool_from_json(&text).unwrap();
        prop_assert_eq!(&back, &pool);
        for ((_, a), (_, b)) in pool.agents().zip(back.agents()) {
            for (x, y) in a.bands().iter().zip(b.bands()) {
                prop_assert_eq!(x.acc_hat.to_bits(), y.acc_hat.to_bits());
                prop_assert_eq!(x.conf_bar.to_bits(), y.conf_bar.to_bits());
            }
        }
        prop_assert_eq!(pool_to_json(&back).unwrap(), text);
    }
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut pool = Pool::new(CalibratorConfig::default()).unwrap();
    pool.observe("a", 0.1 + 0.2, true).unwrap();
    let path = dir.path().join("state.json");
    save_pool(&path, &pool).unwrap();
    assert_eq!(load_pool(&path).unwrap(), pool);
}

#[test]
fn snapshot_layout() {
    let mut pool = Pool::new(CalibratorConfig::default()).unwrap();
    pool.observe("a", 0.9, true).unwrap();
    let v: serde_json::Value = serde_json::from_str(&pool_to_json(&pool).unwrap()).unwrap();
    assert_eq!(v["config"]["band_count"], 3);
    assert_eq!(v["agents"]["a"]["bands"].as_array().unwrap().len(), 3);
    assert_eq!(v["agents"]["a"]["bands"][2]["n_obs"], 1);
    assert_eq!(v["agents"]["a"]["model_level"]["n_obs"], 1);
}

#[test]
fn corrupt_snapshots_are_rejected() {
    let mut pool = Pool::new(CalibratorConfig::default()).unwrap();
    pool.observe("a", 0.9, true).unwrap();
    let text = pool_to_json(&pool).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let mut wrong_k = v.clone();
    wrong_k["config"]["band_count"] = 4.into();
    let mut bad_alpha = v;
    bad_alpha["config"]["alpha_up"] = 1.0.into();
    let mut acc_over = serde_json::from_str::<serde_json::Value>(&text).unwrap();
    acc_over["agents"]["a"]["model_level"]["acc_hat"] = 1.5.into();
    let mut bad_band = serde_json::from_str::<serde_json::Value>(&text).unwrap();
    bad_band["agents"]["a"]["bands"][2]["conf_bar"] = (-0.1).into();
    for doc in [wrong_k, bad_alpha, acc_over, bad_band].map(|v| v.to_string()) {
        assert!(pool_from_json(&doc).is_err(), "{doc}");
    }
}
