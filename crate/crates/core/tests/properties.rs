use adherence_core::analytics::{duplicate_analysis, pearson};
use adherence_core::evaluate::{compute_metrics, kfold_split};
use adherence_core::features::{fit_preprocess, transform, TabularDataset};
use adherence_core::learn::{classify, ensemble_predict_proba, fit, KnnConfig, ModelConfig, TreeConfig};
use adherence_core::resample::{resample, ResampleConfig, ResampleMethod};
use adherence_core::session::{extract_windows, label_adherence, Session, SessionKind, SessionSeries};
use chrono::NaiveDate;
use proptest::prelude::*;

fn series(values: &[u8]) -> SessionSeries {
    let monday = NaiveDate::from_ymd_opt(2020, 1, 6).unwrap();
    let sessions = values
        .iter()
        .enumerate()
        .map(|(i, &value)| {
            let week = monday + chrono::Duration::days(7 * (i / 2) as i64);
            let (start, kind) =
                if i % 2 == 0 { (week, SessionKind::MonThu) } else { (week + chrono::Duration::days(4), SessionKind::FriSun) };
            Session { start, kind, value }
        })
        .collect();
    SessionSeries { user_id: "u".into(), sessions }
}

fn dataset(rows: Vec<Vec<f64>>, labels: Vec<u8>, n_dynamic: usize) -> TabularDataset {
    let d = rows[0].len();
    let cols = (0..d).map(|i| format!("c{i}")).collect();
    let data = rows.into_iter().flatten().collect();
    TabularDataset::new(cols, data, labels, n_dynamic).unwrap()
}

fn rows_strategy(max_rows: usize, d: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<u8>)> {
    (4..max_rows).prop_flat_map(move |n| {
        (
            prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), n),
            prop::collection::vec(0u8..2, n),
        )
    })
}

proptest! {
    #[test]
    fn windows_match_naive_slices(values in prop::collection::vec(0u8..5, 0..30)) {
        let got = extract_windows(&series(&values));
        let naive: Vec<&[u8]> = if values.len() >= 15 { values.windows(15).collect() } else { Vec::new() };
        prop_assert_eq!(got.len(), naive.len());
        for (w, slice) in got.iter().zip(naive) {
            prop_assert_eq!(&w.s[..], &slice[..12]);
            let fs: Vec<u8> = slice[12..].iter().map(|&v| u8::from(v > 0)).collect();
            prop_assert_eq!(&w.future[..], &fs[..]);
            prop_assert_eq!(w.label, u8::from(fs.iter().map(|&v| u32::from(v)).sum::<u32>() >= 2));
        }
    }

    #[test]
    fn label_needs_two_active_sessions(fs in prop::array::uniform3(0u8..2)) {
        let expected = u8::from(fs.iter().filter(|&&v| v == 1).count() >= 2);
        prop_assert_eq!(label_adherence(fs).unwrap(), expected);
    }

    #[test]
    fn metric_identities(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..200)) {
        let (y, p): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let m = compute_metrics(&y, &p).unwrap();
        prop_assert!((m.accuracy - (m.tp + m.tn) as f64 / y.len() as f64).abs() < 1e-15);
        if let (Some(se), Some(sp), Some(sc)) = (m.sensitivity, m.specificity, m.score) {
            prop_assert!((sc - (se * sp).sqrt()).abs() < 1e-12);
            let pos = (m.tp + m.fn_) as f64 / y.len() as f64;
            prop_assert!((m.accuracy - (sp * (1.0 - pos) + se * pos)).abs() < 1e-12);
        }
        let same = compute_metrics(&y, &y).unwrap();
        prop_assert_eq!(same.accuracy, 1.0);
        prop_assert!(same.score.is_none_or(|s| s == 1.0));
    }

    #[test]
    fn folds_partition_rows(labels in prop::collection::vec(0u8..2, 10..200), k in 2usize..11, seed in any::<u64>()) {
        let plan = kfold_split(&labels, k, seed).unwrap();
        let mut all: Vec<usize> = plan.folds.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        if plan.stratified {
            let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
            for f in &plan.folds {
                let fp = f.iter().filter(|&&i| labels[i] == 1).count() as f64;
                let expected = pos * f.len() as f64 / labels.len() as f64;
                prop_assert!((fp - expected).abs() <= 1.0 + 1e-9, "{} vs {}", fp, expected);
            }
        }
    }

    #[test]
    fn preprocessing_leaves_no_nulls_and_unit_range((rows, labels) in rows_strategy(40, 4), nulls in prop::collection::vec(any::<bool>(), 160)) {
        let mut rows = rows;
        for (i, r) in rows.iter_mut().enumerate() {
            for (j, v) in r.iter_mut().enumerate() {
                if j > 0 && nulls[(i * 4 + j) % nulls.len()] {
                    *v = f64::NAN;
                }
            }
        }
        let ds = dataset(rows, labels, 1);
        let st = fit_preprocess(&ds).unwrap();
        let out = transform(&ds, &st).unwrap();
        prop_assert_eq!(out.null_count(), 0);
        for j in 1..4 {
            let col: Vec<f64> = out.rows().map(|r| r[j]).collect();
            prop_assert!(col.iter().all(|v| (0.0..=1.0).contains(v)));
            let constant = col.iter().all(|&v| v == col[0]);
            if !constant {
                prop_assert!(col.contains(&0.0) && col.contains(&1.0));
            }
        }
    }

    #[test]
    fn oversamplers_balance_and_keep_originals(
        (rows, labels) in rows_strategy(80, 3),
        method in prop::sample::select(vec![ResampleMethod::Random, ResampleMethod::Smote, ResampleMethod::Adasyn]),
        seed in any::<u64>(),
    ) {
        let ds = dataset(rows, labels, 0);
        let [neg, pos] = ds.class_counts();
        prop_assume!(neg.min(pos) >= 2 && neg != pos);
        let out = resample(&ds, &ResampleConfig::new(method, seed)).unwrap();
        let [n0, n1] = out.class_counts();
        prop_assert!(n0.abs_diff(n1) <= 1);
        prop_assert_eq!(&out.data[..ds.data.len()], &ds.data[..]);
        prop_assert_eq!(&out.labels[..ds.n_rows()], &ds.labels[..]);
        let majority = u8::from(pos > neg);
        prop_assert!(out.labels[ds.n_rows()..].iter().all(|&l| l != majority));
    }

    #[test]
    fn predictions_are_distributions((rows, labels) in rows_strategy(60, 3), k in 1usize..4) {
        let ds = dataset(rows, labels, 0);
        let members = [ModelConfig::Knn(KnnConfig { k }), ModelConfig::Tree(TreeConfig::default()), ModelConfig::Majority];
        let models: Vec<_> = members.iter().map(|c| fit(c, &ds).unwrap()).collect();
        for m in &models {
            for p in m.predict_proba(ds.view()).unwrap() {
                prop_assert!(p[0] >= 0.0 && p[1] >= 0.0 && (p[0] + p[1] - 1.0).abs() < 1e-12);
                prop_assert_eq!(classify(p), u8::from(p[1] > 0.5));
            }
        }
        for p in ensemble_predict_proba(&models, ds.view()).unwrap() {
            prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pearson_is_symmetric_bounded_and_affine_invariant(
        xy in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..50),
        a in 0.1f64..10.0,
        b in -10.0f64..10.0,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        if let (Ok(r), Ok(r2)) = (pearson(&x, &y), pearson(&y, &x)) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            prop_assert!((r - r2).abs() < 1e-12);
            let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((pearson(&ax, &y).unwrap() - r).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicate_counts_survive_permutation(vals in prop::collection::vec((0u8..3, 0u8..3, 0u8..2), 1..80), seed in any::<u64>()) {
        let rows: Vec<Vec<f64>> = vals.iter().map(|&(a, b, _)| vec![f64::from(a), f64::from(b)]).collect();
        let labels: Vec<u8> = vals.iter().map(|v| v.2).collect();
        let ds = dataset(rows.clone(), labels.clone(), 2);
        let report = duplicate_analysis(&ds);
        let total: usize = report.multiplicity_histogram.iter().map(|&(m, c)| m * c).sum();
        prop_assert_eq!(total, ds.n_rows());
        let mut idx: Vec<usize> = (0..rows.len()).collect();
        let mut rng = adherence_core::seed::rng(seed);
        rand::seq::SliceRandom::shuffle(&mut idx[..], &mut rng);
        let shuffled = ds.select_rows(&idx);
        prop_assert_eq!(duplicate_analysis(&shuffled), report);
    }
}
