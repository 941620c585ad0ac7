//! Run configuration: a single JSON file plus command-line flag overrides,
//! flags winning. Unknown keys in the file are rejected so a typo cannot
//! silently fall back to a default.

use std::fs;
use std::path::{Path, PathBuf};

use dcmatch_core::encoder::EncoderConfig;
use dcmatch_core::synthetic::SyntheticConfig;
use dcmatch_core::trainer::{TrainConfig, TrainMode};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    pub pos_lexicon: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mode: Option<TrainMode>,
    pub num_classes: Option<usize>,
    pub min_freq: Option<usize>,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub encoder: EncoderOverrides,
    #[serde(default)]
    pub generate: GenerateOverrides,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub max_steps: Option<usize>,
    pub eval_interval: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderOverrides {
    pub hidden_size: Option<usize>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub ff_size: Option<usize>,
    pub max_len: Option<usize>,
    pub dropout: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateOverrides {
    pub train_size: Option<usize>,
    pub dev_size: Option<usize>,
    pub test_size: Option<usize>,
    pub label_mix: Option<Vec<f64>>,
    pub hard_negative_rate: Option<f64>,
    pub hard_positive_rate: Option<f64>,
}

/// Flag values collected by the argument parser; `None` means the flag was
/// not given.
#[derive(Debug, Default, Clone)]
pub struct FlagOverrides {
    pub config: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    pub pos_lexicon: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mode: Option<TrainMode>,
}

/// The merged view a command executes against.
#[derive(Debug, Clone)]
pub struct Settings {
    pub data: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    pub pos_lexicon: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub mode: TrainMode,
    pub num_classes: usize,
    pub min_freq: usize,
    pub train: TrainOverrides,
    pub encoder: EncoderOverrides,
    pub generate: GenerateOverrides,
}

impl Settings {
    pub fn resolve(flags: &FlagOverrides) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(path) => load_file_config(path)?,
            None => FileConfig::default(),
        };
        Ok(Self {
            data: flags.data.clone().or(file.data),
            gazetteer: flags.gazetteer.clone().or(file.gazetteer),
            pos_lexicon: flags.pos_lexicon.clone().or(file.pos_lexicon),
            vocab: flags.vocab.clone().or(file.vocab),
            checkpoint: flags.checkpoint.clone().or(file.checkpoint),
            out: flags.out.clone().or(file.out),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            mode: flags.mode.or(file.mode).unwrap_or(TrainMode::Baseline),
            num_classes: file.num_classes.unwrap_or(2),
            min_freq: file.min_freq.unwrap_or(1),
            train: file.train,
            encoder: file.encoder,
            generate: file.generate,
        })
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        let overrides = &self.train;
        let mut config = TrainConfig { mode: self.mode, seed: self.seed, ..TrainConfig::default() };
        if let Some(v) = overrides.learning_rate {
            config.learning_rate = v;
        }
        if let Some(v) = overrides.beta1 {
            config.beta1 = v;
        }
        if let Some(v) = overrides.beta2 {
            config.beta2 = v;
        }
        if let Some(v) = overrides.weight_decay {
            config.weight_decay = v;
        }
        if let Some(v) = overrides.batch_size {
            config.batch_size = v;
        }
        if let Some(v) = overrides.epochs {
            config.epochs = v;
        }
        if overrides.max_steps.is_some() {
            config.max_steps = overrides.max_steps;
        }
        if let Some(v) = overrides.eval_interval {
            config.eval_interval = v;
        }
        config
    }

    /// Encoder settings for a vocabulary of the given size.
    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        let overrides = &self.encoder;
        let mut config = EncoderConfig::toy(vocab_size);
        config.seed = self.seed;
        if let Some(v) = overrides.hidden_size {
            config.hidden_size = v;
        }
        if let Some(v) = overrides.layers {
            config.layers = v;
        }
        if let Some(v) = overrides.heads {
            config.heads = v;
        }
        if let Some(v) = overrides.ff_size {
            config.ff_size = v;
        }
        if let Some(v) = overrides.max_len {
            config.max_len = v;
        }
        if let Some(v) = overrides.dropout {
            config.dropout = v;
        }
        config
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        let overrides = &self.generate;
        let mut config = SyntheticConfig::new(
            self.num_classes,
            overrides.train_size.unwrap_or(2000),
            overrides.dev_size.unwrap_or(500),
            overrides.test_size.unwrap_or(500),
            self.seed,
        );
        if let Some(mix) = &overrides.label_mix {
            config.label_mix = mix.clone();
        }
        if let Some(v) = overrides.hard_negative_rate {
            config.hard_negative_rate = v;
        }
        if let Some(v) = overrides.hard_positive_rate {
            config.hard_positive_rate = v;
        }
        config
    }
}

fn load_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let body = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&body).map_err(|e| {
        CliError::Config(vec![format!("{}: {e}", path.display())])
    })
}

/// Collects the paths a command requires; reports every missing one at
/// once.
pub struct Requirements<'a> {
    settings: &'a Settings,
    problems: Vec<String>,
}

impl<'a> Requirements<'a> {
    pub fn new(settings: &'a Settings) -> Self {
        Self { settings, problems: Vec::new() }
    }

    pub fn data(&mut self) -> PathBuf {
        self.require(self.settings.data.clone(), "--data")
    }

    pub fn gazetteer(&mut self) -> PathBuf {
        self.require(self.settings.gazetteer.clone(), "--gazetteer")
    }

    pub fn pos_lexicon(&mut self) -> PathBuf {
        self.require(self.settings.pos_lexicon.clone(), "--pos-lexicon")
    }

    pub fn vocab(&mut self) -> PathBuf {
        self.require(self.settings.vocab.clone(), "--vocab")
    }

    pub fn checkpoint(&mut self) -> PathBuf {
        self.require(self.settings.checkpoint.clone(), "--checkpoint")
    }

    pub fn out(&mut self) -> PathBuf {
        self.require(self.settings.out.clone(), "--out")
    }

    fn require(&mut self, value: Option<PathBuf>, flag: &str) -> PathBuf {
        match value {
            Some(path) => path,
            None => {
                self.problems.push(format!("{flag} is required for this command"));
                PathBuf::new()
            }
        }
    }

    pub fn finish(self) -> Result<(), CliError> {
        if self.problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(self.problems))
        }
    }
}
