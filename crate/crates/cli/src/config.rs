//! Experiment configuration: TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use adherence_core::evaluate::PreprocessPolicy;
use adherence_core::features::Variant;
use adherence_core::learn::{ModelConfig, ModelKind};
use adherence_core::resample::{ResampleConfig, ResampleMethod};
use adherence_core::session::LastDateRounding;
use adherence_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_OUT_DIR: &str = "out";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// Directory holding the acquisition, demographics and questionnaire CSVs.
    pub database: Option<PathBuf>,
    /// A built dataset CSV with label column `A`.
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildConfig {
    pub variants: Vec<Variant>,
    pub last_date_rounding: LastDateRounding,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self { variants: Variant::ALL.to_vec(), last_date_rounding: LastDateRounding::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub k: usize,
    pub preprocess: PreprocessPolicy,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { k: 10, preprocess: PreprocessPolicy::FitPerFold }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    /// Histogram bin width for per-user mean window sums.
    pub bin_width: f64,
    /// Duplicated tuples listed individually in the JSON report.
    pub top_duplicates: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self { bin_width: 2.0, top_duplicates: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Global seed; every stage draws from named sub-streams of it.
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub variant: Variant,
    pub input: InputConfig,
    /// Generator settings; `synth.seed` is replaced by the global seed.
    pub synth: SynthConfig,
    pub build: BuildConfig,
    pub model: ModelConfig,
    pub resampler: Option<ResampleConfig>,
    pub cv: CvConfig,
    pub stats: StatsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: None,
            variant: Variant::D0,
            input: InputConfig::default(),
            synth: SynthConfig::default(),
            build: BuildConfig::default(),
            model: ModelConfig::default_for(ModelKind::Forest),
            resampler: None,
            cv: CvConfig::default(),
            stats: StatsConfig::default(),
        }
    }
}

/// Values given on the command line; they win over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub model: Option<ModelKind>,
    /// `Some(None)` disables resampling.
    pub resampler: Option<Option<ResampleMethod>>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(v) = o.variant {
            self.variant = v;
        }
        if let Some(kind) = o.model {
            if self.model.kind() != kind {
                self.model = ModelConfig::default_for(kind);
            }
        }
        if let Some(r) = o.resampler {
            self.resampler = match (r, self.resampler.take()) {
                (None, _) => None,
                (Some(m), Some(cur)) if cur.method == m => Some(cur),
                (Some(m), _) => Some(ResampleConfig::new(m, self.seed)),
            };
        }
        if let Some(out) = &o.out {
            self.out_dir = Some(out.clone());
        }
        self.synth.seed = self.seed;
    }

    /// Checks the parts every command relies on.
    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: adherence_core::Error| CliError::Usage(e.to_string());
        self.model.validate().map_err(usage)?;
        if let Some(r) = &self.resampler {
            r.validate().map_err(usage)?;
        }
        if self.cv.k < 2 {
            return Err(CliError::Usage(format!("cv.k = {} but at least 2 folds are needed", self.cv.k)));
        }
        if self.stats.bin_width.is_nan() || self.stats.bin_width <= 0.0 {
            return Err(CliError::Usage("stats.bin_width must be positive".into()));
        }
        for p in [&self.input.database, &self.input.dataset].into_iter().flatten() {
            if !p.exists() {
                return Err(CliError::Usage(format!("input path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }
}
