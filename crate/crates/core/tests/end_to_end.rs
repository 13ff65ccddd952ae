use hetnet_da::experiments::{
    load_config_file, methods_for, read_csv, run_sweep, run_sweep_with_threads, table_to_csv, write_csv, ExperimentSpec,
    Metric, ResultTable, CLASS_LABELS,
};
use proptest::prelude::*;

fn small(metric: Metric, seed: u64) -> ExperimentSpec {
    let mut spec = ExperimentSpec {
        metric,
        trials: 3,
        topologies: 3,
        master_seed: seed,
        ..ExperimentSpec::default()
    };
    spec.base.tau_d = 32;
    spec
}

fn class_rows(table: &ResultTable, value: f64, method: &str) -> Vec<(f64, usize)> {
    CLASS_LABELS
        .iter()
        .map(|c| {
            let r = table.get(value, method, c).expect("row present");
            (r.mean, r.n)
        })
        .collect()
}

#[test]
fn table_shape_follows_sweep_and_methods() {
    let mut spec = small(Metric::Nmse, 4);
    spec.sweep.values = vec![-7.0, 8.0, 23.0];
    let table = run_sweep(&spec).unwrap();
    let methods = methods_for(&spec);
    assert_eq!(table.rows.len(), 3 * methods.len() * CLASS_LABELS.len());
    assert_eq!(table.sweep_values(), spec.sweep.values);
    for r in &table.rows {
        assert_eq!(r.metric, "nmse_db");
        assert_eq!(r.sweep_param, "p_train_dbm");
    }
    // every UE is counted once per trial in the pooled row
    let all = table.get(8.0, "DA", "all").unwrap();
    assert_eq!(all.n, spec.base.num_ue * spec.trials * spec.topologies);
}

#[test]
fn sweep_is_reproducible_and_thread_independent() {
    let spec = small(Metric::Rate, 11);
    let a = table_to_csv(&run_sweep(&spec).unwrap());
    let b = table_to_csv(&run_sweep_with_threads(&spec, 1).unwrap());
    let c = table_to_csv(&run_sweep_with_threads(&spec, 3).unwrap());
    assert_eq!(a, b);
    assert_eq!(a, c);
    let other = table_to_csv(&run_sweep(&small(Metric::Rate, 12)).unwrap());
    assert_ne!(a, other);
}

#[test]
fn sweep_points_share_random_numbers() {
    // one swept value run alone gives the same rows as inside a longer sweep
    let mut spec = small(Metric::Ber, 5);
    spec.sweep.param = "p_data_dbm".into();
    spec.sweep.values = vec![3.0, 13.0];
    let both = run_sweep(&spec).unwrap();
    spec.sweep.values = vec![13.0];
    let one = run_sweep(&spec).unwrap();
    for r in &one.rows {
        let twin = both.get(13.0, &r.method, &r.ue_class).unwrap();
        assert_eq!(twin.mean.to_bits(), r.mean.to_bits(), "{} {}", r.method, r.ue_class);
    }
}

#[test]
fn config_file_to_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"metric": "rate", "trials": 2, "topologies": 2, "tau_d": 16,
            "sweep_param": "p_data_dbm", "sweep_values": [0, 20], "pathloss_model": "three_gpp"}"#,
    )
    .unwrap();
    let spec = load_config_file(&cfg).unwrap();
    let table = run_sweep(&spec).unwrap();
    let out = dir.path().join("rate.csv");
    write_csv(&table, &out).unwrap();
    let back = read_csv(&out).unwrap();
    assert_eq!(back.rows.len(), 2 * 2 * 4);
    assert_eq!(table_to_csv(&back), std::fs::read_to_string(&out).unwrap());

    let dumped = dir.path().join("dump.json");
    std::fs::write(&dumped, spec.to_flat_json().to_string()).unwrap();
    assert_eq!(load_config_file(&dumped).unwrap(), spec);
}

#[test]
fn rates_are_finite_and_non_negative() {
    let table = run_sweep(&small(Metric::Rate, 2)).unwrap();
    for r in table.rows.iter().filter(|r| r.n > 0) {
        assert!(r.mean.is_finite() && r.mean >= 0.0, "{r:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    // The pooled row is the count-weighted mean of the per-class rows.
    #[test]
    fn pooled_row_is_weighted_class_mean(seed in 0u64..1_000, p_data in -7.0f64..23.0) {
        let mut spec = small(Metric::Rate, seed);
        spec.sweep.param = "p_data_dbm".into();
        spec.sweep.values = vec![p_data];
        let table = run_sweep(&spec).unwrap();
        for method in ["PO", "DA"] {
            let rows = class_rows(&table, p_data, method);
            let (all_mean, all_n) = rows[3];
            let n: usize = rows[..3].iter().map(|r| r.1).sum();
            prop_assert_eq!(n, all_n);
            let weighted: f64 = rows[..3].iter().filter(|r| r.1 > 0).map(|r| r.0 * r.1 as f64).sum::<f64>() / n as f64;
            prop_assert!((weighted - all_mean).abs() <= 1e-9 * all_mean.abs().max(1.0));
        }
    }
}
