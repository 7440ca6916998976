//! Run configuration: command-line flags over environment over a TOML file.

use clap::{Args, ValueEnum};
use depa::depa::DEFAULT_THRESHOLD;
use depa::lm::remote::{ENDPOINT_ENV, MODEL_ENV};
use depa::lm::{NgramModel, PerplexityBackend, RemoteBackend, RemoteConfig};
use depa::{DetectorKind, Execution, ScoreTransform, TokenizerStrategy};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

/// Invalid or contradictory configuration; maps to exit code 4.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn conflict(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorArg {
    Depa,
    Onion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerArg {
    BackendNative,
    CodeLexer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformArg {
    Square,
    Identity,
}

/// Keys accepted in the `--config` TOML file. All optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub lm_model: Option<String>,
    pub detector: Option<DetectorArg>,
    pub tokenizer: Option<TokenizerArg>,
    pub threshold: Option<f64>,
    pub transform: Option<TransformArg>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub timeout_secs: Option<u64>,
    pub max_prompt_chars: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| conflict(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| conflict(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// n-gram model file produced by `train-lm`.
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Remote log-prob endpoint (falls back to $DEPA_LM_ENDPOINT).
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,
    /// Model name sent to the endpoint (falls back to $DEPA_LM_MODEL).
    #[arg(long, value_name = "NAME")]
    pub lm_model: Option<String>,
    /// Per-request timeout for the remote backend.
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// Cut remote prompts longer than this from the left.
    #[arg(long)]
    pub max_prompt_chars: Option<usize>,
    /// TOML file with defaults for any of these options.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DetectorArgs {
    #[arg(long, value_enum)]
    pub detector: Option<DetectorArg>,
    /// Token candidates for the onion detector.
    #[arg(long, value_enum)]
    pub tokenizer: Option<TokenizerArg>,
    /// Flag when a score exceeds mean + T * std.
    #[arg(
        long = "T",
        visible_alias = "threshold",
        value_name = "T",
        allow_negative_numbers = true
    )]
    pub threshold: Option<f64>,
    #[arg(long, value_enum)]
    pub transform: Option<TransformArg>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Run on the calling thread only.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendChoice {
    Ngram {
        path: PathBuf,
    },
    Remote {
        endpoint: String,
        model: String,
        timeout_secs: u64,
        max_prompt_chars: Option<usize>,
    },
}

/// Fully resolved settings for commands that run a detector.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub backend: BackendChoice,
    pub detector: DetectorKind,
    pub threshold: f64,
    pub workers: Option<usize>,
    pub execution: Execution,
}

type Env<'a> = &'a dyn Fn(&str) -> Option<String>;

pub fn process_env(key: &str) -> Option<String> {
    std::env::var(key).ok().filter(|v| !v.is_empty())
}

impl BackendArgs {
    pub fn file(&self) -> anyhow::Result<FileConfig> {
        self.config
            .as_deref()
            .map(FileConfig::load)
            .transpose()
            .map(Option::unwrap_or_default)
    }

    /// The first layer (flags, environment, file) that names a backend
    /// decides it; naming both kinds in one layer is a conflict.
    pub fn resolve(&self, file: &FileConfig, env: Env<'_>) -> anyhow::Result<BackendChoice> {
        let layers = [
            (
                "command-line flags",
                self.model.clone(),
                self.endpoint.clone(),
                self.lm_model.clone(),
            ),
            ("environment", None, env(ENDPOINT_ENV), env(MODEL_ENV)),
            (
                "config file",
                file.model.clone(),
                file.endpoint.clone(),
                file.lm_model.clone(),
            ),
        ];
        let lm_model = layers.iter().find_map(|l| l.3.clone());
        for (origin, model, endpoint, _) in layers {
            match (model, endpoint) {
                (Some(_), Some(_)) => {
                    return Err(conflict(format!("{origin} give both a model file and an endpoint")));
                }
                (Some(path), None) => return Ok(BackendChoice::Ngram { path }),
                (None, Some(endpoint)) => {
                    let model = lm_model
                        .ok_or_else(|| conflict(format!("endpoint {endpoint} needs --lm-model or ${MODEL_ENV}")))?;
                    return Ok(BackendChoice::Remote {
                        endpoint,
                        model,
                        timeout_secs: self.timeout_secs.or(file.timeout_secs).unwrap_or(60),
                        max_prompt_chars: self.max_prompt_chars.or(file.max_prompt_chars),
                    });
                }
                (None, None) => {}
            }
        }
        Err(conflict(format!(
            "no backend configured: pass --model or --endpoint (or set ${ENDPOINT_ENV})"
        )))
    }
}

impl DetectorArgs {
    pub fn resolve(&self, file: &FileConfig) -> anyhow::Result<(DetectorKind, f64, Option<usize>, Execution)> {
        let detector = self.detector.or(file.detector).unwrap_or(DetectorArg::Depa);
        let tokenizer = self.tokenizer.or(file.tokenizer);
        let transform = self.transform.or(file.transform);
        let kind = match detector {
            DetectorArg::Depa => {
                if tokenizer.is_some() {
                    return Err(conflict("--tokenizer only applies to the onion detector"));
                }
                DetectorKind::Depa {
                    transform: match transform.unwrap_or(TransformArg::Square) {
                        TransformArg::Square => ScoreTransform::Square,
                        TransformArg::Identity => ScoreTransform::Identity,
                    },
                }
            }
            DetectorArg::Onion => {
                if transform.is_some() {
                    return Err(conflict("--transform only applies to the depa detector"));
                }
                DetectorKind::Onion {
                    tokenizer: match tokenizer.unwrap_or(TokenizerArg::CodeLexer) {
                        TokenizerArg::BackendNative => TokenizerStrategy::BackendNative,
                        TokenizerArg::CodeLexer => TokenizerStrategy::CodeLexer,
                    },
                }
            }
        };
        let threshold = self.threshold.or(file.threshold).unwrap_or(DEFAULT_THRESHOLD);
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(conflict(format!("T must be a positive number, got {threshold}")));
        }
        let workers = self.workers.or(file.workers);
        if workers == Some(0) {
            return Err(conflict("--workers must be at least 1"));
        }
        let execution = if self.sequential {
            if workers.is_some_and(|w| w > 1) {
                return Err(conflict("--sequential contradicts --workers > 1"));
            }
            Execution::Sequential
        } else {
            Execution::Parallel
        };
        Ok((kind, threshold, workers, execution))
    }
}

pub fn run_config(backend: &BackendArgs, detector: &DetectorArgs, env: Env<'_>) -> anyhow::Result<RunConfig> {
    let file = backend.file()?;
    let choice = backend.resolve(&file, env)?;
    let (detector, threshold, workers, execution) = detector.resolve(&file)?;
    Ok(RunConfig {
        backend: choice,
        detector,
        threshold,
        workers,
        execution,
    })
}

pub fn open_backend(choice: &BackendChoice) -> anyhow::Result<Box<dyn PerplexityBackend>> {
    Ok(match choice {
        BackendChoice::Ngram { path } => Box::new(NgramModel::load(path)?),
        BackendChoice::Remote {
            endpoint,
            model,
            timeout_secs,
            max_prompt_chars,
        } => {
            let mut cfg = RemoteConfig::new(endpoint.clone(), model.clone());
            cfg.timeout = Duration::from_secs(*timeout_secs);
            cfg.max_prompt_chars = *max_prompt_chars;
            Box::new(RemoteBackend::new(cfg))
        }
    })
}
