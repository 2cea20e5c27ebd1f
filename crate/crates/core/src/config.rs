//! Pipeline configuration and the flat key-value config file format.
//!
//! Format: one `section.key = value` per line, `#` comments, unknown keys
//! rejected. Triplets are comma-separated.

use std::collections::BTreeMap;
use std::path::Path;

use crate::dsp::FeatureConfig;
use crate::error::{Error, Result};
use crate::kd::TrainConfig;
use crate::nn::EncoderConfig;
use crate::refine::{ChunkConfig, EmbedderMode, RefinementConfig, SimilarityActivation};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub feature: FeatureConfig,
    pub encoder: EncoderConfig,
    pub chunk: ChunkConfig,
    pub refine: RefinementConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let seed = 42;
        PipelineConfig {
            feature: FeatureConfig::default(),
            encoder: EncoderConfig::default(),
            chunk: ChunkConfig::default(),
            refine: RefinementConfig::for_mode(EmbedderMode::Light),
            train: TrainConfig::toy(seed),
            seed,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.feature.validate()?;
        self.encoder.validate()?;
        self.chunk.validate()?;
        self.refine.validate()?;
        self.train.validate()?;
        if self.feature.feature_dim() != self.encoder.in_dim {
            return Err(Error::Config(format!(
                "feature dim 3*{}-1 = {} does not match encoder in_dim {}",
                self.feature.n_mfcc,
                self.feature.feature_dim(),
                self.encoder.in_dim
            )));
        }
        if self.train.chunk_len != self.chunk.chunk_len {
            return Err(Error::Config(format!(
                "train.chunk_len ({}) must match chunk.chunk_len ({})",
                self.train.chunk_len, self.chunk.chunk_len
            )));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_kv(&text)
    }

    pub fn from_str_kv(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        let map = parse_kv(text)?;
        for (key, value) in &map {
            cfg.apply(key, value)?;
        }
        // the trainer's seed follows the pipeline seed unless set explicitly
        if map.contains_key("seed") && !map.contains_key("train.seed") {
            cfg.train.seed = cfg.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,

            "feature.n_mfcc" => self.feature.n_mfcc = parse(key, value)?,
            "feature.n_mels" => self.feature.n_mels = parse(key, value)?,
            "feature.frame_len_ms" => self.feature.frame_len_ms = parse(key, value)?,
            "feature.hop_ms" => self.feature.hop_ms = parse(key, value)?,
            "feature.fft_size" => self.feature.fft_size = parse(key, value)?,
            "feature.fmin" => self.feature.fmin = parse(key, value)?,
            "feature.fmax" => self.feature.fmax = parse(key, value)?,
            "feature.delta_window" => self.feature.delta_window = parse(key, value)?,
            "feature.mean_normalize" => self.feature.mean_normalize = parse_bool(key, value)?,

            "encoder.in_dim" => self.encoder.in_dim = parse(key, value)?,
            "encoder.block_channels" => self.encoder.block_channels = parse_triplet(key, value)?,
            "encoder.kernels" => self.encoder.kernels = parse_triplet(key, value)?,
            "encoder.se_bottleneck" => self.encoder.se_bottleneck = parse_triplet(key, value)?,
            "encoder.pooled_dim" => self.encoder.pooled_dim = parse(key, value)?,
            "encoder.embed_dim" => self.encoder.embed_dim = parse(key, value)?,

            "chunk.chunk_len" => {
                self.chunk.chunk_len = parse(key, value)?;
                self.train.chunk_len = self.chunk.chunk_len;
            }

            "refine.alpha" => self.refine.alpha = parse(key, value)?,
            "refine.mode" => {
                self.refine.mode = match value {
                    "light" => EmbedderMode::Light,
                    "oracle" => EmbedderMode::Oracle,
                    other => {
                        return Err(Error::Config(format!(
                            "refine.mode must be light or oracle, got {other}"
                        )))
                    }
                }
            }
            "refine.sigmoid_beta" => {
                self.refine.activation = SimilarityActivation::Sigmoid {
                    beta: parse(key, value)?,
                }
            }
            "refine.linear_upsample" => self.refine.linear_upsample = parse_bool(key, value)?,

            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.excerpt_frames" => self.train.excerpt_frames = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.pairs_per_speaker" => self.train.pairs_per_speaker = parse(key, value)?,
            "train.learning_rate" => self.train.adam.learning_rate = parse(key, value)?,
            "train.beta1" => self.train.adam.beta1 = parse(key, value)?,
            "train.beta2" => self.train.adam.beta2 = parse(key, value)?,
            "train.adam_eps" => self.train.adam.eps = parse(key, value)?,
            "train.seed" => self.train.seed = parse(key, value)?,
            "train.n_speakers" => self.train.n_speakers = parse(key, value)?,
            "train.val_fraction" => self.train.val_fraction = parse(key, value)?,
            "train.pitch_jitter" => self.train.pitch_jitter = parse(key, value)?,
            "train.noise_level" => self.train.noise_level = parse(key, value)?,
            "train.template_rank" => self.train.template_rank = parse(key, value)?,
            "train.init_log_tau" => self.train.init_log_tau = parse(key, value)?,
            "train.bn_momentum" => self.train.bn_momentum = parse(key, value)?,
            "train.parallel" => self.train.parallel = parse_bool(key, value)?,

            other => return Err(Error::Config(format!("unknown config key: {other}"))),
        }
        Ok(())
    }

    /// Chunk length in frames for a duration in milliseconds; must divide
    /// evenly into frames at the configured hop.
    pub fn chunk_frames_from_ms(&self, ms: f64) -> Result<usize> {
        let frames = ms / self.feature.hop_ms;
        if (frames - frames.round()).abs() > 1e-9 || frames < 2.0 {
            return Err(Error::Config(format!(
                "chunk length {ms} ms is not a whole number of {} ms frames",
                self.feature.hop_ms
            )));
        }
        Ok(frames.round() as usize)
    }
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value", lineno + 1))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {value}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!(
            "cannot parse {key} = {other} as a boolean"
        ))),
    }
}

fn parse_triplet(key: &str, value: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "{key} needs exactly three comma-separated values"
        )));
    }
    Ok([
        parse(key, parts[0])?,
        parse(key, parts[1])?,
        parse(key, parts[2])?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_consistent() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.feature.feature_dim(), 80);
        assert_eq!(cfg.encoder.in_dim, 80);
        assert_eq!(cfg.chunk.chunk_len, 100);
    }

    #[test]
    fn parses_sections_and_comments() {
        let text = "
# front-end
feature.n_mfcc = 27
refine.alpha = 2.5    # scaled
refine.mode = oracle
train.epochs = 7
seed = 99
";
        let cfg = PipelineConfig::from_str_kv(text).unwrap();
        assert_eq!(cfg.refine.alpha, 2.5);
        assert_eq!(cfg.refine.mode, EmbedderMode::Oracle);
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.train.seed, 99);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = PipelineConfig::from_str_kv("feature.nmfcc = 27").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("nmfcc"));
    }

    #[test]
    fn cross_field_consistency_is_enforced() {
        // 3*20-1 = 59 != 80
        let err = PipelineConfig::from_str_kv("feature.n_mfcc = 20").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn chunk_ms_conversion_requires_whole_frames() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.chunk_frames_from_ms(1000.0).unwrap(), 100);
        assert_eq!(cfg.chunk_frames_from_ms(500.0).unwrap(), 50);
        assert!(cfg.chunk_frames_from_ms(1005.0).is_err());
    }

    #[test]
    fn bad_alpha_fails_validation() {
        let err = PipelineConfig::from_str_kv("refine.alpha = -3").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn triplet_parsing() {
        let text = "
encoder.block_channels = 80, 128, 192
encoder.kernels = 3,5,7
encoder.se_bottleneck = 20,32,48
";
        let cfg = PipelineConfig::from_str_kv(text).unwrap();
        assert_eq!(cfg.encoder.block_channels, [80, 128, 192]);
    }
}
