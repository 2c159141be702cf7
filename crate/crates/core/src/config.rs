//! Pipeline configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modelio::{EndpointKind, ModelEndpointConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
}

/// Counts and switches that shape a benchmark build.
///
/// Defaults reproduce the published configuration: 100K corpus sentences,
/// 100 subjects, 150 actions and places, three contexts per subject and
/// three targets per context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub n_subjects: usize,
    pub n_actions: usize,
    pub n_places: usize,
    /// Contexts kept per subject and target kind.
    pub contexts_per_subject: usize,
    /// Targets kept per context.
    pub targets_per_context: usize,
    /// Multiple-choice option count, gold included.
    pub options: usize,
    pub seed: u64,
    pub corpus_limit: usize,
    /// Per-category candidates handed to the concreteness review.
    pub candidate_pool: usize,
    /// Divide LM log-probabilities by the phrase's word count.
    pub length_normalized: bool,
    /// Images requested per accepted triplet.
    pub images_per_triplet: usize,
    /// Extra generations attempted after a provider refusal.
    pub max_regenerations: usize,
    pub subjective_suffix: String,
    pub cot_suffix: String,
    pub entropy_samples: usize,
    pub entropy_temperature: f64,
    pub eval_temperature: f64,
    pub models: ModelsConfig,
}

/// Model services. Anything left unset falls back to an offline mock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    /// Live LM used for joint probabilities.
    pub lm: Option<ModelEndpointConfig>,
    /// JSON object mapping phrases to base-2 log-probabilities; takes
    /// precedence over `lm`.
    pub lm_table: Option<PathBuf>,
    /// Add-alpha smoothing of the corpus bigram fallback backend.
    pub ngram_alpha: f64,
    pub image: Option<ModelEndpointConfig>,
    /// Prompts containing any of these strings are refused by the mock
    /// image generator.
    pub mock_image_refusals: Vec<String>,
    pub mllm: Vec<ModelEndpointConfig>,
    /// With-image vision-following rate of the simulated offline MLLM.
    pub simulated_vision_rate: f64,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            lm: None,
            lm_table: None,
            ngram_alpha: 0.5,
            image: None,
            mock_image_refusals: Vec::new(),
            mllm: Vec::new(),
            simulated_vision_rate: 0.6,
        }
    }
}

impl ModelsConfig {
    pub fn mllm(&self, id: &str) -> Option<&ModelEndpointConfig> {
        self.mllm.iter().find(|m| m.id == id)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.ngram_alpha > 0.0) {
            return Err(ConfigError::Invalid("models.ngram_alpha must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.simulated_vision_rate) {
            return Err(ConfigError::Invalid(
                "models.simulated_vision_rate must be within [0, 1]".into(),
            ));
        }
        let endpoints = self
            .lm
            .iter()
            .map(|e| (e, EndpointKind::Lm))
            .chain(self.image.iter().map(|e| (e, EndpointKind::Image)))
            .chain(self.mllm.iter().map(|e| (e, EndpointKind::Mllm)));
        for (endpoint, kind) in endpoints {
            if endpoint.kind != kind {
                return Err(ConfigError::Invalid(format!(
                    "endpoint {} has kind {:?}, expected {kind:?}",
                    endpoint.id, endpoint.kind
                )));
            }
            endpoint
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_subjects: 100,
            n_actions: 150,
            n_places: 150,
            contexts_per_subject: 3,
            targets_per_context: 3,
            options: 4,
            seed: 0,
            corpus_limit: 100_000,
            candidate_pool: 1000,
            length_normalized: false,
            images_per_triplet: 1,
            max_regenerations: 2,
            subjective_suffix: "Answer with a single phrase.".to_string(),
            cot_suffix: "Let's think step by step.".to_string(),
            entropy_samples: 16,
            entropy_temperature: 1.0,
            eval_temperature: 0.0,
            models: ModelsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let counts = [
            ("n_subjects", self.n_subjects),
            ("n_actions", self.n_actions),
            ("n_places", self.n_places),
            ("contexts_per_subject", self.contexts_per_subject),
            ("targets_per_context", self.targets_per_context),
            ("corpus_limit", self.corpus_limit),
            ("candidate_pool", self.candidate_pool),
            ("images_per_triplet", self.images_per_triplet),
        ];
        for (name, value) in counts {
            if value < 1 {
                return Err(ConfigError::Invalid(format!("{name} must be at least 1")));
            }
        }
        if self.options < 2 {
            return Err(ConfigError::Invalid("options must be at least 2".into()));
        }
        if self.entropy_samples < 2 {
            return Err(ConfigError::Invalid(
                "entropy_samples must be at least 2".into(),
            ));
        }
        if !(self.entropy_temperature >= 0.0 && self.eval_temperature >= 0.0) {
            return Err(ConfigError::Invalid("temperatures must be >= 0".into()));
        }
        self.models.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }
}
