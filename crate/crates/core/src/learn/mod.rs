//! Classifiers, a soft-voting ensemble and a versioned model file format.

pub mod forest;
pub mod gbt;
pub mod knn;
pub mod mlp;
pub mod tree;

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use forest::{ForestConfig, RandomForest};
pub use gbt::{GbtConfig, GbtModel};
pub use knn::{KnnConfig, KnnModel};
pub use mlp::{EarlyStopping, MlpConfig, MlpModel};
pub use tree::{DecisionTree, MaxFeatures, TreeConfig};

use crate::features::{FeatureView, PreprocessState, TabularDataset};
use crate::float_bits;
use crate::seed::derive_seed;
use crate::{Error, Result};

pub const MODEL_FORMAT: &str = "adherence-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Class decision: 1 iff `p(1) > 0.5`, so an exact tie goes to class 0.
pub fn classify(p: [f64; 2]) -> u8 {
    u8::from(p[1] > 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Majority,
    Knn,
    Tree,
    Forest,
    Gbt,
    Mlp,
    Ensemble,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Majority,
        ModelKind::Knn,
        ModelKind::Tree,
        ModelKind::Forest,
        ModelKind::Gbt,
        ModelKind::Mlp,
        ModelKind::Ensemble,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Majority => "majority",
            ModelKind::Knn => "knn",
            ModelKind::Tree => "tree",
            ModelKind::Forest => "forest",
            ModelKind::Gbt => "gbt",
            ModelKind::Mlp => "mlp",
            ModelKind::Ensemble => "ensemble",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "majority" => Ok(ModelKind::Majority),
            "knn" | "k-nn" => Ok(ModelKind::Knn),
            "tree" => Ok(ModelKind::Tree),
            "forest" | "rf" => Ok(ModelKind::Forest),
            "gbt" | "xgb" | "xgboost" => Ok(ModelKind::Gbt),
            "mlp" => Ok(ModelKind::Mlp),
            "ensemble" => Ok(ModelKind::Ensemble),
            other => Err(Error::InvalidConfig(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    /// Predicts the training class prior for every row.
    Majority,
    Knn(KnnConfig),
    Tree(TreeConfig),
    Forest(ForestConfig),
    Gbt(GbtConfig),
    Mlp(MlpConfig),
    /// Mean of the members' probabilities.
    Ensemble { members: Vec<ModelConfig> },
}

impl ModelConfig {
    /// Default configuration of a kind; an ensemble defaults to forest, k-NN and GBT.
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Majority => ModelConfig::Majority,
            ModelKind::Knn => ModelConfig::Knn(KnnConfig::default()),
            ModelKind::Tree => ModelConfig::Tree(TreeConfig::default()),
            ModelKind::Forest => ModelConfig::Forest(ForestConfig::default()),
            ModelKind::Gbt => ModelConfig::Gbt(GbtConfig::default()),
            ModelKind::Mlp => ModelConfig::Mlp(MlpConfig::default()),
            ModelKind::Ensemble => ModelConfig::Ensemble {
                members: vec![
                    ModelConfig::Forest(ForestConfig::default()),
                    ModelConfig::Knn(KnnConfig::default()),
                    ModelConfig::Gbt(GbtConfig::default()),
                ],
            },
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Majority => ModelKind::Majority,
            ModelConfig::Knn(_) => ModelKind::Knn,
            ModelConfig::Tree(_) => ModelKind::Tree,
            ModelConfig::Forest(_) => ModelKind::Forest,
            ModelConfig::Gbt(_) => ModelKind::Gbt,
            ModelConfig::Mlp(_) => ModelKind::Mlp,
            ModelConfig::Ensemble { .. } => ModelKind::Ensemble,
        }
    }

    /// Copy with every seed replaced; ensemble members get derived seeds.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        match &mut c {
            ModelConfig::Majority | ModelConfig::Knn(_) => {}
            ModelConfig::Tree(t) => t.seed = seed,
            ModelConfig::Forest(f) => f.seed = seed,
            ModelConfig::Gbt(g) => g.seed = seed,
            ModelConfig::Mlp(m) => m.seed = seed,
            ModelConfig::Ensemble { members } => {
                for (i, m) in members.iter_mut().enumerate() {
                    *m = m.with_seed(derive_seed(seed, "ensemble.member", i as u64));
                }
            }
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Majority | ModelConfig::Tree(_) => Ok(()),
            ModelConfig::Knn(k) if k.k == 0 => Err(Error::InvalidConfig("knn: k must be at least 1".into())),
            ModelConfig::Knn(_) => Ok(()),
            ModelConfig::Forest(f) if f.n_trees == 0 => {
                Err(Error::InvalidConfig("forest: n_trees must be at least 1".into()))
            }
            ModelConfig::Forest(_) => Ok(()),
            ModelConfig::Gbt(g) => g.validate(),
            ModelConfig::Mlp(m) => m.validate(),
            ModelConfig::Ensemble { members } if members.is_empty() => {
                Err(Error::InvalidConfig("ensemble needs at least one member".into()))
            }
            ModelConfig::Ensemble { members } => members.iter().try_for_each(ModelConfig::validate),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ModelParams {
    Majority {
        #[serde(with = "float_bits::scalar")]
        p1: f64,
    },
    Knn(KnnModel),
    Tree(DecisionTree),
    Forest(RandomForest),
    Gbt(GbtModel),
    Mlp(MlpModel),
    Ensemble(Vec<TrainedModel>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    /// Feature columns the model was fitted on, in order.
    pub columns: Vec<String>,
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Fits `cfg` on every row of `ds`.
pub fn fit(cfg: &ModelConfig, ds: &TabularDataset) -> Result<TrainedModel> {
    cfg.validate()?;
    if ds.n_rows() == 0 {
        return Err(Error::Empty("training set".into()));
    }
    let need_two = matches!(cfg, ModelConfig::Forest(_) | ModelConfig::Mlp(_));
    if need_two && ds.n_rows() < 2 {
        return Err(Error::InvalidInput(format!("{} needs at least 2 training rows", cfg.kind())));
    }
    let params = match cfg {
        ModelConfig::Majority => {
            let [_, pos] = ds.class_counts();
            ModelParams::Majority { p1: pos as f64 / ds.n_rows() as f64 }
        }
        ModelConfig::Knn(c) => ModelParams::Knn(KnnModel::fit(ds, c)?),
        ModelConfig::Tree(c) => ModelParams::Tree(DecisionTree::fit(ds, c)),
        ModelConfig::Forest(c) => ModelParams::Forest(RandomForest::fit(ds, c)),
        ModelConfig::Gbt(c) => ModelParams::Gbt(GbtModel::fit(ds, c)?),
        ModelConfig::Mlp(c) => ModelParams::Mlp(MlpModel::fit(ds, c)?),
        ModelConfig::Ensemble { members } => {
            ModelParams::Ensemble(members.iter().map(|m| fit(m, ds)).collect::<Result<_>>()?)
        }
    };
    Ok(TrainedModel { columns: ds.columns.clone(), config: cfg.clone(), params })
}

fn from_p1(p1: Vec<f64>) -> Vec<[f64; 2]> {
    p1.into_iter().map(|p| [1.0 - p, p]).collect()
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.config.kind()
    }

    pub fn check_schema(&self, columns: &[String]) -> Result<()> {
        if columns != self.columns.as_slice() {
            return Err(Error::ColumnMismatch(format!(
                "model expects columns [{}], got [{}]",
                self.columns.join(","),
                columns.join(",")
            )));
        }
        Ok(())
    }

    /// `[p(0), p(1)]` per row.
    pub fn predict_proba(&self, x: FeatureView<'_>) -> Result<Vec<[f64; 2]>> {
        self.check_schema(x.columns)?;
        Ok(match &self.params {
            ModelParams::Majority { p1 } => vec![[1.0 - p1, *p1]; x.n_rows()],
            ModelParams::Knn(m) => from_p1(m.predict_p1(x)),
            ModelParams::Tree(t) => from_p1((0..x.n_rows()).map(|i| t.predict_row(x.row(i))).collect()),
            ModelParams::Forest(f) => from_p1(f.predict_p1(x)),
            ModelParams::Gbt(g) => from_p1(g.predict_p1(x)),
            ModelParams::Mlp(m) => m.predict_proba(x),
            ModelParams::Ensemble(members) => ensemble_predict_proba(members, x)?,
        })
    }

    pub fn predict(&self, x: FeatureView<'_>) -> Result<Vec<u8>> {
        Ok(self.predict_proba(x)?.into_iter().map(classify).collect())
    }

    /// Normalised impurity importance of a forest or single tree.
    pub fn feature_importance(&self) -> Result<Vec<f64>> {
        match &self.params {
            ModelParams::Forest(f) => Ok(f.feature_importance()),
            ModelParams::Tree(t) => Ok(RandomForest { trees: vec![t.clone()], n_features: t.n_features }
                .feature_importance()),
            _ => Err(Error::InvalidInput(format!(
                "feature importance needs a fitted forest or tree, not {}",
                self.kind()
            ))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_with(path, None)
    }

    /// Writes the model, optionally bundled with the preprocessing it expects.
    pub fn save_with(&self, path: &Path, preprocess: Option<&PreprocessState>) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_FORMAT_VERSION,
            artifact_version: crate::ARTIFACT_VERSION.to_string(),
            kind: self.kind(),
            model: self.clone(),
            preprocess: preprocess.cloned(),
        };
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &file)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(ModelFile::read(path)?.model)
    }
}

/// On-disk envelope of a trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub artifact_version: String,
    pub kind: ModelKind,
    pub model: TrainedModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocess: Option<PreprocessState>,
}

impl ModelFile {
    /// Reads and validates a model file.
    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let reader = BufReader::new(File::open(path)?);
        let file: ModelFile = serde_json::from_reader(reader)
            .map_err(|e| Error::ModelFormat(format!("{}: {e}", path.display())))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::ModelFormat(format!("unexpected format {:?}", file.format)));
        }
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!("unsupported model version {}", file.version)));
        }
        if file.kind != file.model.kind() {
            return Err(Error::ModelFormat("kind does not match the stored config".into()));
        }
        if let Some(p) = &file.preprocess {
            if p.columns != file.model.columns {
                return Err(Error::ModelFormat("preprocessing columns differ from model columns".into()));
            }
        }
        Ok(file)
    }
}

/// Unweighted mean of the members' probabilities.
pub fn ensemble_predict_proba(models: &[TrainedModel], x: FeatureView<'_>) -> Result<Vec<[f64; 2]>> {
    let Some(first) = models.first() else {
        return Err(Error::Empty("ensemble has no members".into()));
    };
    for m in models {
        first.check_schema(&m.columns)?;
    }
    let mut acc = vec![[0.0, 0.0]; x.n_rows()];
    for m in models {
        for (a, p) in acc.iter_mut().zip(m.predict_proba(x)?) {
            a[0] += p[0];
            a[1] += p[1];
        }
    }
    let k = models.len() as f64;
    Ok(acc.into_iter().map(|[a, b]| [a / k, b / k]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> TabularDataset {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![f64::from(i) / 30.0, f64::from(i % 4)]).collect();
        let labels = (0..30).map(|i| u8::from(i > 17)).collect();
        TabularDataset::from_rows(vec!["a".into(), "b".into()], &rows, labels).unwrap()
    }

    #[test]
    fn classify_tie_goes_to_zero() {
        assert_eq!(classify([0.3, 0.7]), 1);
        assert_eq!(classify([0.5, 0.5]), 0);
        assert_eq!(classify([1.0, 0.0]), 0);
    }

    #[test]
    fn all_kinds_fit_and_give_distributions() {
        let ds = toy();
        let small_mlp = MlpConfig { hidden_layers: vec![4], max_epochs: 3, ..Default::default() };
        let cfgs = vec![
            ModelConfig::Majority,
            ModelConfig::Knn(KnnConfig { k: 3 }),
            ModelConfig::Tree(TreeConfig::default()),
            ModelConfig::Forest(ForestConfig { n_trees: 5, ..Default::default() }),
            ModelConfig::Gbt(GbtConfig { n_rounds: 5, ..Default::default() }),
            ModelConfig::Mlp(small_mlp.clone()),
            ModelConfig::Ensemble {
                members: vec![ModelConfig::Majority, ModelConfig::Knn(KnnConfig { k: 3 })],
            },
        ];
        for cfg in cfgs {
            let m = fit(&cfg, &ds).unwrap();
            for p in m.predict_proba(ds.view()).unwrap() {
                assert!(p[0] >= 0.0 && p[1] >= 0.0 && (p[0] + p[1] - 1.0).abs() < 1e-12, "{cfg:?}");
            }
        }
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let m = fit(&ModelConfig::Majority, &toy()).unwrap();
        let other = TabularDataset::from_rows(vec!["b".into(), "a".into()], &[vec![0.0, 0.0]], vec![0]).unwrap();
        assert!(matches!(m.predict_proba(other.view()), Err(Error::ColumnMismatch(_))));
    }

    #[test]
    fn ensemble_averages_members() {
        let ds = toy();
        let low = TrainedModel {
            columns: ds.columns.clone(),
            config: ModelConfig::Majority,
            params: ModelParams::Majority { p1: 0.2 },
        };
        let high = TrainedModel { params: ModelParams::Majority { p1: 0.8 }, ..low.clone() };
        let p = ensemble_predict_proba(&[low.clone(), high], ds.view()).unwrap();
        assert!((p[0][1] - 0.5).abs() < 1e-15);
        let single = ensemble_predict_proba(std::slice::from_ref(&low), ds.view()).unwrap();
        assert_eq!(single, low.predict_proba(ds.view()).unwrap());
        assert!(ensemble_predict_proba(&[], ds.view()).is_err());
    }

    #[test]
    fn model_file_round_trip_is_exact() {
        let ds = toy();
        let dir = tempfile::tempdir().unwrap();
        for cfg in [
            ModelConfig::Forest(ForestConfig { n_trees: 3, seed: 2, ..Default::default() }),
            ModelConfig::Gbt(GbtConfig { n_rounds: 3, ..Default::default() }),
            ModelConfig::Mlp(MlpConfig { hidden_layers: vec![3], max_epochs: 2, ..Default::default() }),
            ModelConfig::Knn(KnnConfig { k: 2 }),
        ] {
            let m = fit(&cfg, &ds).unwrap();
            let path = dir.path().join(format!("{}.json", m.kind()));
            m.save(&path).unwrap();
            let back = TrainedModel::load(&path).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.predict_proba(ds.view()).unwrap(), m.predict_proba(ds.view()).unwrap());
        }
    }

    #[test]
    fn corrupt_model_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, "{\"format\":\"nope\"}").unwrap();
        assert!(matches!(TrainedModel::load(&path), Err(Error::ModelFormat(_))));
    }

    #[test]
    fn config_parses_from_toml_style_json() {
        let cfg: ModelConfig = serde_json::from_str(r#"{"kind":"forest","n_trees":7}"#).unwrap();
        assert_eq!(cfg, ModelConfig::Forest(ForestConfig { n_trees: 7, ..Default::default() }));
        assert!(serde_json::from_str::<ModelConfig>(r#"{"kind":"forest","bogus":1}"#).is_err());
        assert!("svm".parse::<ModelKind>().is_err());
        assert_eq!("rf".parse::<ModelKind>().unwrap(), ModelKind::Forest);
    }
}
