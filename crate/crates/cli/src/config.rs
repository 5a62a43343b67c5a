//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hcn_core::image::RainConfig;
use hcn_core::network::ModelConfig;
use hcn_core::training::TrainConfig;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key = value, got {text:?}")]
    Syntax { line: usize, text: String },

    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },

    #[error("line {line}: key {key:?} given twice")]
    Duplicate { line: usize, key: String },

    #[error("line {line}: {key}: {detail}")]
    BadValue { line: usize, key: String, detail: String },

    #[error("unknown preset {0:?} (expected toy or paper)")]
    UnknownPreset(String),

    #[error("invalid configuration: {0}")]
    Invalid(String),

    #[error("cannot read {path}: {detail}")]
    Read { path: PathBuf, detail: String },
}

/// Everything a command needs besides its file arguments.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub rain: RainConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Toy,
    Paper,
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "toy" => Ok(Preset::Toy),
            "paper" => Ok(Preset::Paper),
            _ => Err(ConfigError::UnknownPreset(s.to_string())),
        }
    }
}

const TRAIN_KEYS: [&str; 14] = [
    "lr",
    "lr_drops",
    "lr_drop_factor",
    "epochs",
    "batch",
    "crop",
    "alpha_bottom",
    "alpha_middle",
    "alpha_top",
    "beta_half",
    "beta_quarter",
    "lambda",
    "epoch_real",
    "freeze_auxiliary",
];

const RAIN_KEYS: [&str; 5] = [
    "rain_streaks",
    "rain_angle",
    "rain_length",
    "rain_width",
    "rain_intensity",
];

fn model_keys() -> Vec<&'static str> {
    ModelConfig::default().to_pairs().into_iter().map(|(k, _)| k).collect()
}

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        line,
        key: key.to_string(),
        detail: format!("{value:?}: {e}"),
    })
}

fn parse_list(line: usize, key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(line, key, v.trim())).collect()
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (train, channels) = match preset {
            Preset::Toy => (TrainConfig::toy(), 8),
            Preset::Paper => (TrainConfig::paper(), 20),
        };
        let model = ModelConfig {
            channels,
            position_grid: train.crop / 4,
            ..ModelConfig::default()
        };
        RunConfig {
            train,
            model,
            rain: RainConfig::default(),
        }
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored; every key may appear at most once.
    pub fn apply(mut self, text: &str) -> Result<Self, ConfigError> {
        let model_keys = model_keys();
        let mut model_pairs: BTreeMap<String, String> = self
            .model
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: trimmed.to_string(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), line).is_some() {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
            let t = &mut self.train;
            let r = &mut self.rain;
            match key {
                "seed" => t.seed = parse(line, key, value)?,
                "lr" => t.lr = parse(line, key, value)?,
                "lr_drops" => t.lr_drops = parse_list(line, key, value)?,
                "lr_drop_factor" => t.lr_drop_factor = parse(line, key, value)?,
                "epochs" => t.epochs = parse(line, key, value)?,
                "batch" => t.batch = parse(line, key, value)?,
                "crop" => t.crop = parse(line, key, value)?,
                "alpha_bottom" => t.alphas[0] = parse(line, key, value)?,
                "alpha_middle" => t.alphas[1] = parse(line, key, value)?,
                "alpha_top" => t.alphas[2] = parse(line, key, value)?,
                "beta_half" => t.betas[0] = parse(line, key, value)?,
                "beta_quarter" => t.betas[1] = parse(line, key, value)?,
                "lambda" => t.lambda = parse(line, key, value)?,
                "epoch_real" => t.epoch_real = parse(line, key, value)?,
                "freeze_auxiliary" => t.freeze_auxiliary = parse(line, key, value)?,
                "rain_streaks" => r.streak_count = parse(line, key, value)?,
                "rain_angle" => r.angle_deg = parse(line, key, value)?,
                "rain_length" => r.length_px = parse(line, key, value)?,
                "rain_width" => r.width_px = parse(line, key, value)?,
                "rain_intensity" => r.intensity = parse(line, key, value)?,
                k if model_keys.contains(&k) => {
                    model_pairs.insert(k.to_string(), value.to_string());
                    let mut single = BTreeMap::new();
                    single.insert(k.to_string(), value.to_string());
                    ModelConfig::from_pairs(&single).map_err(|e| ConfigError::BadValue {
                        line,
                        key: k.to_string(),
                        detail: e.to_string(),
                    })?;
                }
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.to_string(),
                    })
                }
            }
        }
        self.model = ModelConfig::from_pairs(&model_pairs).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.rain.seed = self.train.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn load(self, path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        self.apply(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.rain.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Every key with its current value, in a fixed order; parsing the dump
    /// reproduces the configuration.
    pub fn dump(&self) -> String {
        let t = &self.train;
        let r = &self.rain;
        let drops: Vec<String> = t.lr_drops.iter().map(usize::to_string).collect();
        let train_values = [
            t.lr.to_string(),
            drops.join(","),
            t.lr_drop_factor.to_string(),
            t.epochs.to_string(),
            t.batch.to_string(),
            t.crop.to_string(),
            t.alphas[0].to_string(),
            t.alphas[1].to_string(),
            t.alphas[2].to_string(),
            t.betas[0].to_string(),
            t.betas[1].to_string(),
            t.lambda.to_string(),
            t.epoch_real.to_string(),
            t.freeze_auxiliary.to_string(),
        ];
        let rain_values = [
            r.streak_count.to_string(),
            r.angle_deg.to_string(),
            r.length_px.to_string(),
            r.width_px.to_string(),
            r.intensity.to_string(),
        ];
        let mut out = format!("seed = {}\n", t.seed);
        for (k, v) in TRAIN_KEYS.iter().zip(&train_values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        for (k, v) in self.model.to_pairs() {
            let _ = writeln!(out, "{k} = {v}");
        }
        for (k, v) in RAIN_KEYS.iter().zip(&rain_values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips() {
        for preset in [Preset::Toy, Preset::Paper] {
            let cfg = RunConfig::preset(preset);
            let back = RunConfig::preset(Preset::Toy).apply(&cfg.dump()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn every_dumped_key_is_accepted_once() {
        let dump = RunConfig::preset(Preset::Toy).dump();
        let keys: Vec<&str> = dump.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), keys.len());
        assert_eq!(keys.len(), 1 + TRAIN_KEYS.len() + model_keys().len() + RAIN_KEYS.len());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let base = || RunConfig::preset(Preset::Toy);
        assert_eq!(
            base().apply("# c\nlr = 1e-3\nbogus = 1\n").unwrap_err(),
            ConfigError::UnknownKey {
                line: 3,
                key: "bogus".into()
            }
        );
        assert!(matches!(
            base().apply("\nlr 0.1\n"),
            Err(ConfigError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            base().apply("batch = four"),
            Err(ConfigError::BadValue { line: 1, .. })
        ));
        assert!(matches!(
            base().apply("mscc = sometimes"),
            Err(ConfigError::BadValue { line: 1, .. })
        ));
        assert!(matches!(
            base().apply("seed = 1\nseed = 2"),
            Err(ConfigError::Duplicate { line: 2, .. })
        ));
        assert!(matches!(base().apply("crop = 20"), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn overrides_apply_on_top_of_preset() {
        let cfg = RunConfig::preset(Preset::Paper)
            .apply("channels = 8\nmscc = none\nlr_drops = 10, 20\nrain_intensity = 0\n")
            .unwrap();
        assert_eq!(cfg.model.channels, 8);
        assert_eq!(cfg.train.lr_drops, vec![10, 20]);
        assert_eq!(cfg.train.crop, 128);
        assert_eq!(cfg.rain.intensity, 0.0);
    }

    #[test]
    fn paper_preset_values() {
        let cfg = RunConfig::preset(Preset::Paper);
        assert_eq!(cfg.train.lr, 0.0005);
        assert_eq!(cfg.train.lr_drops, vec![300, 400]);
        assert_eq!(cfg.train.crop, 128);
        assert_eq!(cfg.train.batch, 12);
        assert_eq!(cfg.model.channels, 20);
        assert_eq!(cfg.train.lambda, 1e-4);
        assert_eq!(cfg.train.alphas, [1.0, 1.0, 1.0]);
        assert_eq!(cfg.train.betas, [0.05, 0.001]);
        assert_eq!(cfg.train.epoch_real, 30);
    }
}
