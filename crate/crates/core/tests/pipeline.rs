use updrs_core::config::RunConfig;
use updrs_core::dataset::{read_csv, write_csv, Dataset};
use updrs_core::eval::{
    parse_summary_csv, render_report, run_baselines_on, run_experiment_on, summary_rows, CvReport, Method, ReportFormat,
};
use updrs_core::synth::{generate, SynthConfig};

fn surrogate() -> Dataset {
    generate(&SynthConfig {
        subjects: 10,
        records: 900,
        seed: 3,
    })
    .unwrap()
}

fn smoke_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::from_toml_str(
        "k_folds = 3\nmax_rows = 300\n[train]\nepochs = 3\n[net]\nunits = 8\nattention_dim = 8\ndense_widths = [8, 4]\n[forest]\nn_trees = 10\n",
    )
    .unwrap();
    cfg.seed = seed;
    cfg
}

fn run(seed: u64) -> CvReport {
    run_experiment_on(&smoke_config(seed), &surrogate()).unwrap()
}

#[test]
fn report_has_every_method_in_every_fold() {
    let r = run(1);
    assert_eq!(r.folds.len(), 3);
    for f in &r.folds {
        let methods: Vec<Method> = f.methods.iter().map(|m| m.method).collect();
        assert_eq!(methods, Method::ALL);
        assert_eq!(f.selected_features.len(), 11);
        assert!(f.selected_features.iter().any(|s| s == "motor_UPDRS"));
        assert_eq!(f.n_train_augmented, 2 * f.n_train);
        assert!(f.epochs_run >= 1 && f.epochs_run <= 3);
        for m in &f.methods {
            assert!(m.train_mse.is_finite() && m.val_mse.is_finite() && m.test_mse.is_finite());
        }
    }
    assert_eq!(r.summary.len(), 5);
    assert_eq!(r.metadata.n_test + r.metadata.n_trainval, 300);
    assert_eq!((r.metadata.sequence_t, r.metadata.sequence_d), (11, 1));
    assert_eq!(r.audit.attention_violations, 0);
    assert!(r.audit.bn_checks > 0 && r.audit.max_bn_batch_mean < 1e-6);
}

#[test]
fn summary_means_match_folds() {
    let r = run(2);
    for (i, m) in Method::ALL.iter().enumerate() {
        let s = r.summary_for(*m).unwrap();
        let v: Vec<f64> = r.folds.iter().map(|f| f.methods[i].test_mse).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!((s.test_mse.mean - mean).abs() < 1e-12);
        assert!((s.test_mse.std - var.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn same_seed_same_report_different_seed_differs() {
    let a = render_report(&run(4), ReportFormat::Json).unwrap();
    let b = render_report(&run(4), ReportFormat::Json).unwrap();
    assert_eq!(a, b);
    let c = render_report(&run(5), ReportFormat::Json).unwrap();
    assert_ne!(a, c);
}

#[test]
fn report_is_independent_of_thread_count() {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| run(6));
    let b = three.install(|| run(6));
    assert_eq!(a, b);
}

#[test]
fn json_and_csv_round_trip() {
    let r = run(7);
    let back: CvReport = serde_json::from_str(&render_report(&r, ReportFormat::Json).unwrap()).unwrap();
    assert_eq!(back, r);
    let rows = parse_summary_csv(&render_report(&r, ReportFormat::Csv).unwrap()).unwrap();
    assert_eq!(rows, summary_rows(&r));
    let text = render_report(&r, ReportFormat::Text).unwrap();
    for m in Method::ALL {
        assert!(text.contains(m.label()));
    }
}

#[test]
fn baselines_fit_the_linear_part_of_the_surrogate() {
    let cfg = RunConfig {
        seed: 3,
        ..Default::default()
    };
    let ds = generate(&SynthConfig {
        subjects: 20,
        records: 3000,
        seed: 8,
    })
    .unwrap();
    let s = run_baselines_on(&cfg, &ds).unwrap();
    let lls = &s[0];
    assert_eq!(lls.method, Method::Lls);
    assert!(lls.test_r2.mean > 0.85, "R² {}", lls.test_r2.mean);
    // CG solves the same normal equations
    assert!((s[1].test_mse.mean - lls.test_mse.mean).abs() < 1e-6);
    for other in &s[2..] {
        assert!((other.test_mse.mean - lls.test_mse.mean).abs() < 0.5);
    }
}

#[test]
fn csv_round_trip_preserves_records() {
    let ds = surrogate();
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf).unwrap();
    assert_eq!(read_csv(buf.as_slice()).unwrap(), ds);
}
