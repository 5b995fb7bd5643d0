use adherence_core::evaluate::{cross_validate, cross_validate_with, majority_baseline, CvSpec, PreprocessPolicy};
use adherence_core::features::{fit_preprocess, TabularDataset};
use adherence_core::learn::{
    fit, DecisionTree, ForestConfig, KnnConfig, MaxFeatures, ModelConfig, ModelParams, RandomForest, TreeConfig,
};
use adherence_core::resample::{ResampleConfig, ResampleMethod};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Twelve session counts whose last two decide the label, plus noise columns.
fn planted(n: usize, seed: u64) -> TabularDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<String> = (1..=12).map(|i| format!("S{i}")).collect();
    cols.push("age".into());
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let s: Vec<f64> = (0..12).map(|_| f64::from(rng.random_range(0u8..5))).collect();
        let active = u8::from(s[10] > 0.0) + u8::from(s[11] > 0.0);
        let label = u8::from(active == 2 && rng.random::<f64>() < 0.9);
        data.extend(&s);
        data.push(if rng.random::<f64>() < 0.1 { f64::NAN } else { rng.random_range(60.0..90.0) });
        labels.push(label);
    }
    TabularDataset::new(cols, data, labels, 12).unwrap()
}

#[test]
fn validation_rows_never_reach_training() {
    let ds = planted(300, 1);
    let resampler = ResampleConfig::new(ResampleMethod::Smote, 0);
    let model = ModelConfig::Knn(KnnConfig { k: 5 });
    let spec = CvSpec { model: &model, resampler: Some(&resampler), preprocess: PreprocessPolicy::FitPerFold, k: 5, seed: 3 };
    cross_validate_with(&ds, &spec, |a| {
        assert!(a.train_rows.iter().all(|r| a.validation_rows.binary_search(r).is_err()));
        let expected = fit_preprocess(&ds.select_rows(a.train_rows)).unwrap();
        assert_eq!(a.preprocess, Some(&expected), "fold {}", a.fold);
        let ModelParams::Knn(knn) = &a.model.params else { panic!("expected k-NN") };
        assert_eq!(knn.labels, a.fit_set.labels);
        assert_eq!(a.validation_set.n_rows(), a.validation_rows.len());
        assert!(a.fit_set.n_rows() >= a.train_rows.len());
    })
    .unwrap();
}

#[test]
fn majority_stub_matches_class_prior() {
    let ds = planted(500, 2);
    let r = cross_validate(&ds, &ModelConfig::Majority, None, PreprocessPolicy::FitPerFold, 10, 1).unwrap();
    let base = majority_baseline(&ds).unwrap();
    assert!((r.macro_avg.accuracy - base.accuracy).abs() < 0.01);
    assert_eq!(r.pooled.score, Some(0.0));
    let mut seen: Vec<usize> = Vec::new();
    for f in &r.folds {
        seen.push(f.n_validation);
    }
    assert_eq!(seen.iter().sum::<usize>(), ds.n_rows());
}

#[test]
fn planted_signal_forest_beats_baseline() {
    let ds = planted(800, 3);
    let cfg = ModelConfig::Forest(ForestConfig { n_trees: 50, ..Default::default() });
    let r = cross_validate(&ds, &cfg, None, PreprocessPolicy::FitPerFold, 10, 5).unwrap();
    let score = r.pooled.score.unwrap();
    assert!(score > 0.8, "score {score}");
    assert!(r.pooled.accuracy > r.baseline.accuracy);
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let ds = planted(300, 4);
    let cfg = ModelConfig::Forest(ForestConfig { n_trees: 16, ..Default::default() });
    let resampler = ResampleConfig::new(ResampleMethod::Adasyn, 0);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            cross_validate(&ds, &cfg, Some(&resampler), PreprocessPolicy::FitPerFold, 5, 9).unwrap().to_json().unwrap()
        })
    };
    assert_eq!(run(1), run(8));
}

#[test]
fn single_unbootstrapped_tree_equals_plain_tree() {
    let ds = planted(200, 5);
    let forest = RandomForest::fit(
        &ds,
        &ForestConfig { n_trees: 1, bootstrap: false, features_per_split: MaxFeatures::All, ..Default::default() },
    );
    let tree = DecisionTree::fit(&ds, &TreeConfig::default());
    for row in ds.rows() {
        assert_eq!(forest.predict_row(row), tree.predict_row(row));
    }
}

#[test]
fn consistent_data_is_fitted_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rows: Vec<Vec<f64>> = (0..100).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
    let labels: Vec<u8> = (0..100).map(|_| rng.random_range(0..2)).collect();
    let ds = TabularDataset::from_rows((0..4).map(|i| format!("x{i}")).collect(), &rows, labels).unwrap();
    let m = fit(&ModelConfig::Forest(ForestConfig { n_trees: 30, seed: 1, ..Default::default() }), &ds).unwrap();
    assert_eq!(m.predict(ds.view()).unwrap(), ds.labels);
}

#[test]
fn planted_feature_ranks_first_under_any_column_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rows: Vec<Vec<f64>> = (0..150).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
    let labels: Vec<u8> = rows.iter().map(|r| u8::from(r[2] + 0.2 * r[0] > 0.6)).collect();
    let perm = [3, 0, 2, 1];
    let permuted: Vec<Vec<f64>> = rows.iter().map(|r| perm.iter().map(|&j| r[j]).collect()).collect();
    let names = |p: &[usize]| p.iter().map(|j| format!("x{j}")).collect::<Vec<_>>();
    let a = TabularDataset::from_rows(names(&[0, 1, 2, 3]), &rows, labels.clone()).unwrap();
    let b = TabularDataset::from_rows(names(&perm), &permuted, labels).unwrap();
    let cfg = ForestConfig { n_trees: 10, features_per_split: MaxFeatures::All, seed: 2, ..Default::default() };
    let ia = RandomForest::fit(&a, &cfg).feature_importance();
    let ib = RandomForest::fit(&b, &cfg).feature_importance();
    assert!((ia.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!((ib.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let argmax = |v: &[f64]| v.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
    assert_eq!(perm[argmax(&ib)], 2);
    assert_eq!(argmax(&ia), 2);
}
