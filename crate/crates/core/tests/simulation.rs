use abx_core::*;

fn logit(k: usize) -> PlatformModel {
    logit_scenario(&LogitParams {
        k,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn aa_rejection_rate_matches_level() {
    let m = logit(50).to_aa();
    for (i, alpha) in [0.01, 0.05, 0.1].into_iter().enumerate() {
        let r = 6000;
        let cfg = SimConfig::new(m.clone(), 0.5, 2000, r)
            .with_seed(100 + i as u64)
            .with_alpha(alpha);
        let s = run_replications(&cfg).unwrap();
        let band = 3.0 * (alpha * (1.0 - alpha) / r as f64).sqrt();
        assert!(
            (s.reject_rate - alpha).abs() <= band,
            "alpha={alpha}: {}",
            s.reject_rate
        );
    }
}

#[test]
fn finite_sample_bias_follows_treatment_sign() {
    let pos = logit(20);
    let neg = PlatformModel::new(
        pos.k(),
        pos.lambda(),
        pos.tau_slice().to_vec(),
        pos.p1().to_vec(),
        pos.p0().to_vec(),
    )
    .unwrap();
    for (m, sign) in [(pos, 1.0), (neg, -1.0)] {
        let g = gte(&m).unwrap();
        let cfg = SimConfig::new(m, 0.5, 300, 20_000).with_seed(3);
        let s = run_replications(&cfg).unwrap();
        assert!(sign * (s.mean_gte_hat - g) > 3.0 * s.gte_hat_se);
    }
}

#[test]
fn long_run_mean_is_ade() {
    let m = logit(30);
    let target = ade(&m, 0.5).unwrap();
    let cfg = SimConfig::new(m, 0.5, 50_000, 400)
        .with_seed(5)
        .with_initial(InitialState::ExperimentSteadyState);
    let s = run_replications(&cfg).unwrap();
    assert!((s.mean_gte_hat - target).abs() <= 3.0 * s.gte_hat_se);
}

#[test]
fn analytic_power_tracks_simulation() {
    let m = example_sign_inconsistent_null(100).unwrap();
    let n = 5000;
    let cfg = SimConfig::new(m.clone(), 0.5, n, 8000).with_seed(17);
    let s = run_replications(&cfg).unwrap();
    let analytic = naive_test_power(&m, 0.5, n, 0.05).unwrap();
    assert!((s.reject_rate - analytic).abs() <= 3.0 * s.reject_se + 0.005);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let cfg = SimConfig::new(logit(10), 0.3, 500, 200).with_seed(42);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_replications_detailed(&cfg).unwrap())
    };
    let (a, oa) = run(1);
    let (b, ob) = run(4);
    assert_eq!(oa, ob);
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn summary_json_round_trips_through_serde_value() {
    let cfg = SimConfig::new(logit(5), 0.5, 100, 10).with_seed(1);
    let s = run_replications(&cfg).unwrap();
    let v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
    assert_eq!(v["replications"], 10);
    assert_eq!(v["config"]["N"], 100);
    assert_eq!(v["config"]["model"]["K"], 5);
}
