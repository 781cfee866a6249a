use proptest::collection::vec;
use proptest::prelude::*;

use updrs_core::augment::{augment_training_set, jitter, JitterConfig};
use updrs_core::dataset::{holdout_split, kfold_split, kfold_split_grouped, to_sequences, StandardizationStats};
use updrs_core::eval::{mse, r2};
use updrs_core::forest::{fit_forest, FeatureRanking, ForestParams};
use updrs_core::nn::{lstm_cell_forward, softmax, LstmParams};
use updrs_core::optimize::LrSchedule;
use updrs_core::rfe::rfe_select;
use updrs_core::{Matrix, RandomSource};

fn matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = RandomSource::new(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.standard_normal()).collect()).unwrap()
}

fn is_permutation(v: &[usize], n: usize) -> bool {
    let mut s = v.to_vec();
    s.sort_unstable();
    s == (0..n).collect::<Vec<_>>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mse_nonnegative_r2_at_most_one(pairs in vec((-1e3f64..1e3, -1e3f64..1e3), 2..40)) {
        let (y, y_hat): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!(mse(&y, &y_hat).unwrap() >= 0.0);
        if let Ok(r) = r2(&y, &y_hat) {
            prop_assert!(r <= 1.0);
        }
    }

    #[test]
    fn kfold_partitions_rows(n in 2usize..200, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let folds = kfold_split(n, k, &mut RandomSource::new(seed)).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut all_val = Vec::new();
        for f in &folds {
            prop_assert_eq!(f.train.len() + f.val.len(), n);
            prop_assert!(f.train.iter().all(|i| f.val.binary_search(i).is_err()));
            all_val.extend_from_slice(&f.val);
        }
        prop_assert!(is_permutation(&all_val, n));
        let sizes: Vec<usize> = folds.iter().map(|f| f.val.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn grouped_folds_never_split_a_group(groups in vec(0u32..12, 20..120), seed in any::<u64>()) {
        let distinct = groups.iter().collect::<std::collections::BTreeSet<_>>().len();
        prop_assume!(distinct >= 3);
        let folds = kfold_split_grouped(&groups, 3, &mut RandomSource::new(seed)).unwrap();
        for f in &folds {
            for &i in &f.val {
                prop_assert!(f.train.iter().all(|&j| groups[j] != groups[i]));
            }
        }
    }

    #[test]
    fn holdout_is_disjoint_and_complete(n in 2usize..500, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let h = holdout_split(n, frac, &mut RandomSource::new(seed)).unwrap();
        let mut all = h.trainval.clone();
        all.extend_from_slice(&h.test);
        prop_assert!(is_permutation(&all, n));
        prop_assert_eq!(h.test.len(), (n as f64 * frac).round() as usize);
    }

    #[test]
    fn ranking_order_is_sorted_permutation(scores in vec(0.0f64..1.0, 1..30)) {
        let r = FeatureRanking::from_scores(scores.clone());
        prop_assert!(is_permutation(&r.order, scores.len()));
        for w in r.order.windows(2) {
            let (a, b) = (scores[w[0]], scores[w[1]]);
            prop_assert!(a > b || (a == b && w[0] < w[1]));
        }
    }

    #[test]
    fn zero_sigma_jitter_is_identity(rows in 1usize..20, cols in 1usize..6, seed in any::<u64>()) {
        let x = matrix(rows, cols, seed);
        let out = jitter(&x, &vec![0.0; cols], &mut RandomSource::new(seed ^ 1)).unwrap();
        prop_assert_eq!(out, x);
    }

    #[test]
    fn augmentation_keeps_originals_first(rows in 2usize..20, copies in 0usize..4, seed in any::<u64>()) {
        let x = matrix(rows, 3, seed);
        let y: Vec<f64> = (0..rows).map(|i| i as f64).collect();
        let stats = StandardizationStats::fit(&x, None).unwrap();
        let cfg = JitterConfig { sigma_scale: 0.05, copies };
        let (ax, ay) = augment_training_set(&x, &y, &cfg, &stats, &mut RandomSource::new(seed)).unwrap();
        prop_assert_eq!(ax.rows(), rows * (copies + 1));
        prop_assert_eq!(ax.select_rows(&(0..rows).collect::<Vec<_>>()), x);
        for c in 0..=copies {
            prop_assert_eq!(&ay[c * rows..(c + 1) * rows], &y[..]);
        }
    }

    #[test]
    fn standardized_training_columns_are_unit(rows in 3usize..40, cols in 1usize..5, seed in any::<u64>()) {
        let x = matrix(rows, cols, seed);
        let stats = StandardizationStats::fit(&x, None).unwrap();
        prop_assert!(stats.std.iter().all(|&s| s > 0.0));
        let z = stats.apply(&x).unwrap();
        for c in 0..cols {
            let col = z.column(c);
            let m = col.iter().sum::<f64>() / rows as f64;
            prop_assert!(m.abs() < 1e-9);
        }
    }

    #[test]
    fn sequences_have_n_t_d_values(rows in 1usize..30, cols in 1usize..12, seed in any::<u64>()) {
        let s = to_sequences(&matrix(rows, cols, seed)).unwrap();
        prop_assert_eq!(s.data.len(), s.n * s.t * s.d);
        prop_assert_eq!((s.n, s.t, s.d), (rows, cols, 1));
    }

    #[test]
    fn softmax_is_a_distribution(scores in vec(-50.0f64..50.0, 1..40)) {
        let a = softmax(&scores);
        prop_assert!(a.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lstm_gates_stay_in_range(units in 1usize..8, input in 1usize..5, seed in any::<u64>()) {
        let mut rng = RandomSource::new(seed);
        let p = LstmParams::init(units, input, &mut rng);
        let x: Vec<f64> = (0..input).map(|_| rng.standard_normal()).collect();
        let h: Vec<f64> = (0..units).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let c: Vec<f64> = (0..units).map(|_| rng.standard_normal()).collect();
        let s = lstm_cell_forward(&x, &h, &c, &p).unwrap();
        for g in [&s.f, &s.i, &s.o] {
            prop_assert!(g.iter().all(|&v| v > 0.0 && v < 1.0));
        }
        prop_assert!(s.c_tilde.iter().all(|&v| v > -1.0 && v < 1.0));
        prop_assert!(s.h.iter().all(|&v| v.abs() < 1.0));
    }

    #[test]
    fn learning_rate_never_increases(a in 0u64..100_000, b in 0u64..100_000) {
        let s = LrSchedule::default();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(s.lr_at_step(hi) <= s.lr_at_step(lo));
        prop_assert!(s.lr_at_step(lo) <= s.initial);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rfe_partitions_columns(d in 2usize..7, k_off in 0usize..6, seed in any::<u64>()) {
        let k = 1 + k_off % d;
        let x = matrix(40, d, seed);
        let y: Vec<f64> = (0..40).map(|i| x[(i, 0)] - x[(i, d - 1)]).collect();
        let params = ForestParams { n_trees: 10, ..Default::default() };
        let r = rfe_select(&x, &y, k, &params, &mut RandomSource::new(seed)).unwrap();
        prop_assert_eq!(r.selected.len(), k);
        let mut all = r.selected.clone();
        all.extend_from_slice(&r.elimination_order);
        prop_assert!(is_permutation(&all, d));
    }

    #[test]
    fn forest_leaves_predict_within_target_range(seed in any::<u64>()) {
        let x = matrix(50, 3, seed);
        let y: Vec<f64> = (0..50).map(|i| x[(i, 1)] * 2.0).collect();
        let params = ForestParams { n_trees: 5, ..Default::default() };
        let forest = fit_forest(&x, &y, &params, &mut RandomSource::new(seed)).unwrap();
        let (lo, hi) = y.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        let p = forest.predict(&matrix(20, 3, seed ^ 7)).unwrap();
        prop_assert!(p.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }
}
