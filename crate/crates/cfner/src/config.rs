//! Experiment configuration: a flat `key = value` TOML file with
//! hyperparameter defaults matching the training recipe (K=3, delta_1=1,
//! delta_m=0, m=10, lambda_base=2, batch 8, lr 4e-4, teacher/student
//! temperatures 1 and 2).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineKind;
use crate::causal::CurriculumSchedule;
use crate::corpus::SynthSpec;
use crate::error::{CfnerError, Result};
use crate::tagger::EncoderDims;

fn default_fg() -> usize { 1 }
fn default_pg() -> usize { 1 }
fn default_k() -> usize { 3 }
fn default_delta1() -> f64 { 1.0 }
fn default_deltam() -> f64 { 0.0 }
fn default_m() -> usize { 10 }
fn default_lambda_base() -> f64 { 2.0 }
fn default_t_teacher() -> f64 { 1.0 }
fn default_t_student() -> f64 { 2.0 }
fn default_batch_size() -> usize { 8 }
fn default_lr() -> f64 { 4e-4 }
fn default_seeds() -> Vec<u64> { vec![1, 2, 3, 4, 5] }
fn default_baseline() -> BaselineKind { BaselineKind::Cfner }
fn default_dataset() -> String { "synth".to_string() }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// "synth" or a directory containing train/dev/test CoNLL files.
    #[serde(default = "default_dataset")]
    pub dataset: String,
    #[serde(default = "default_baseline")]
    pub baseline: BaselineKind,
    #[serde(default = "default_fg")]
    pub fg: usize,
    #[serde(default = "default_pg")]
    pub pg: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Ablation overrides: neighbors for D^E / D^O anchors. None = `k`.
    #[serde(default)]
    pub k_effect_e: Option<usize>,
    #[serde(default)]
    pub k_effect_o: Option<usize>,
    #[serde(default = "default_delta1")]
    pub delta1: f64,
    #[serde(default = "default_deltam")]
    pub delta_m: f64,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_lambda_base")]
    pub lambda_base: f64,
    #[serde(default = "default_t_teacher")]
    pub t_teacher: f64,
    #[serde(default = "default_t_student")]
    pub t_student: f64,
    /// 0 = rule of thumb: 10 epochs when pg == 1, 20 when pg >= 2.
    #[serde(default)]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Literal reading of the O-token distillation (student restricted
    /// to old labels, KL student-first). Default false: classical
    /// zero-padded teacher-first KL over the full label set, which is
    /// the variant that suppresses new-label drift on O tokens.
    #[serde(default)]
    pub kl_as_written: bool,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_types: usize,
    pub sentences_per_type: usize,
    pub vocab_per_type: usize,
    pub sentence_length: usize,
    pub other_vocab_size: usize,
    pub noise_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let s = SynthSpec::default();
        SynthConfig {
            num_types: s.num_types,
            sentences_per_type: s.sentences_per_type,
            vocab_per_type: s.vocab_per_type,
            sentence_length: s.sentence_length,
            other_vocab_size: s.other_vocab_size,
            noise_rate: s.noise_rate,
        }
    }
}

impl SynthConfig {
    pub fn to_spec(&self) -> SynthSpec {
        SynthSpec {
            num_types: self.num_types,
            sentences_per_type: self.sentences_per_type,
            vocab_per_type: self.vocab_per_type,
            sentence_length: self.sentence_length,
            other_vocab_size: self.other_vocab_size,
            noise_rate: self.noise_rate,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d_embed: usize,
    pub radius: usize,
    pub d_hidden: usize,
    pub d_feature: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        let d = EncoderDims::default();
        EncoderConfig {
            d_embed: d.d_embed,
            radius: d.radius,
            d_hidden: d.d_hidden,
            d_feature: d.d_feature,
        }
    }
}

impl EncoderConfig {
    pub fn to_dims(&self) -> EncoderDims {
        EncoderDims {
            d_embed: self.d_embed,
            radius: self.radius,
            d_hidden: self.d_hidden,
            d_feature: self.d_feature,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config is valid")
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| CfnerError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fg == 0 || self.pg == 0 {
            return Err(CfnerError::InvalidConfig("fg and pg must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(CfnerError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(CfnerError::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if self.t_teacher <= 0.0 || self.t_student <= 0.0 {
            return Err(CfnerError::InvalidConfig(
                "temperatures must be positive".into(),
            ));
        }
        if self.lambda_base < 0.0 {
            return Err(CfnerError::InvalidConfig(
                "lambda_base must be non-negative".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(CfnerError::InvalidConfig("need at least one seed".into()));
        }
        CurriculumSchedule::new(self.delta1, self.delta_m, self.m)?;
        Ok(())
    }

    pub fn curriculum(&self) -> CurriculumSchedule {
        CurriculumSchedule::new(self.delta1, self.delta_m, self.m)
            .expect("validated at load time")
    }

    pub fn k_new(&self) -> usize {
        self.k_effect_e.unwrap_or(self.k)
    }

    pub fn k_other(&self) -> usize {
        self.k_effect_o.unwrap_or(self.k)
    }

    /// Configured epoch count, or the pg-based rule of thumb.
    pub fn epochs_per_step(&self) -> usize {
        if self.epochs > 0 {
            self.epochs
        } else if self.pg == 1 {
            10
        } else {
            20
        }
    }
}
