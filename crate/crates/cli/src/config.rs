use crate::error::CliError;
use pcmi_core::dataset::{TfidfConfig, DEFAULT_MATCH_THRESHOLD};
use pcmi_core::experiments::pairs::DEFAULT_EXP2_DELTA_H_MIN;
use pcmi_core::lm::http::HttpConfig;
use pcmi_core::lm::ngram::NGramConfig;
use pcmi_core::lm::SamplingConfig;
use pcmi_core::selection::{CalibrationScope, ThresholdConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// In-process n-gram models.
    #[default]
    Oracle,
    /// Previously recorded scores.
    Replay,
    /// A remote LM inference server.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Topical-Chat style conversations file.
    pub corpus: Option<PathBuf>,
    /// Reading sets holding the facts of each conversation.
    pub facts: Option<PathBuf>,
    pub replay_store: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            facts: None,
            replay_store: None,
            output_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationConfig {
    pub data_dir: Option<PathBuf>,
    pub port: u16,
    pub assignment_ttl_secs: u64,
    pub static_dir: Option<PathBuf>,
    pub cors_origins: Vec<String>,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            port: 8080,
            assignment_ttl_secs: 30 * 60,
            static_dir: None,
            cors_origins: Vec::new(),
        }
    }
}

/// The `--config` document. Every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub tfidf: TfidfConfig,
    pub match_threshold: f64,
    /// Train / validation / test shares of the entity split.
    pub split_ratios: [f64; 3],
    pub ngram: NGramConfig,
    pub sampling: SamplingConfig,
    pub thresholds: ThresholdConfig,
    pub calibration_scope: CalibrationScope,
    pub exp2_delta_h_min: f64,
    pub backend: BackendKind,
    pub http: HttpConfig,
    pub annotation: AnnotationConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: PathsConfig::default(),
            tfidf: TfidfConfig::default(),
            match_threshold: DEFAULT_MATCH_THRESHOLD,
            split_ratios: [0.8, 0.1, 0.1],
            ngram: NGramConfig::default(),
            sampling: SamplingConfig::default(),
            thresholds: ThresholdConfig::default(),
            calibration_scope: CalibrationScope::default(),
            exp2_delta_h_min: DEFAULT_EXP2_DELTA_H_MIN,
            backend: BackendKind::default(),
            http: HttpConfig::default(),
            annotation: AnnotationConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = crate::io::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |m: String| Err(CliError::Config(m));
        if !(self.match_threshold.is_finite() && self.match_threshold >= 0.0) {
            return invalid(format!("match_threshold must be non-negative, got {}", self.match_threshold));
        }
        if self.split_ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0))
            || (self.split_ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return invalid(format!("split_ratios must be non-negative and sum to 1, got {:?}", self.split_ratios));
        }
        if !(self.exp2_delta_h_min.is_finite() && self.exp2_delta_h_min >= 0.0) {
            return invalid(format!("exp2_delta_h_min must be non-negative, got {}", self.exp2_delta_h_min));
        }
        if self.tfidf.max_ngram == 0 {
            return invalid("tfidf.max_ngram must be at least 1".into());
        }
        self.ngram.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.sampling.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.thresholds.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.paths.output_dir.join(name)
    }
}
