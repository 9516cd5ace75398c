//! Flat `key = value` run configuration files.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Unknown keys are an error so typos can't silently fall back to defaults.
//! The same key/value pairs are accepted as CLI overrides, and a config can
//! be rendered back out for embedding in checkpoints.

use std::path::{Path, PathBuf};

use crate::data::DatasetKind;
use crate::error::{Result, SmmError};
use crate::schedule::CorruptionKind;
use crate::trainer::{TrainingConfig, VariantKind};

fn bad_value(key: &str, value: &str, expected: &str) -> SmmError {
    SmmError::Config(format!("key `{key}`: expected {expected}, got `{value}`"))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| bad_value(key, value, "a number"))
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse::<u64>()
        .map_err(|_| bad_value(key, value, "a non-negative integer"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad_value(key, value, "true or false")),
    }
}

/// Apply one `key = value` setting to a config in place.
pub fn apply_key(cfg: &mut TrainingConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "variant" => {
            cfg.variant = match value {
                "original" => VariantKind::Original,
                "noisy_target" => VariantKind::NoisyTarget,
                "paired_input" => VariantKind::PairedInput,
                _ => {
                    return Err(bad_value(
                        key,
                        value,
                        "one of original, noisy_target, paired_input",
                    ))
                }
            }
        }
        "corruption" => {
            cfg.corruption = match value {
                "zero_mean" => CorruptionKind::ZeroMean,
                "non_zero_mean" => CorruptionKind::NonZeroMean,
                "spatial_diffusion" => CorruptionKind::SpatialDiffusion {
                    ratio: 0.2,
                    steps_per_t: 1,
                },
                _ => {
                    return Err(bad_value(
                        key,
                        value,
                        "one of zero_mean, non_zero_mean, spatial_diffusion",
                    ))
                }
            }
        }
        "corruption.ratio" => {
            let ratio = parse_f64(key, value)?;
            match &mut cfg.corruption {
                CorruptionKind::SpatialDiffusion { ratio: r, .. } => *r = ratio,
                _ => {
                    return Err(SmmError::Config(
                        "corruption.ratio requires corruption = spatial_diffusion (set it first)"
                            .into(),
                    ))
                }
            }
        }
        "corruption.steps_per_t" => {
            let steps = parse_u64(key, value)? as usize;
            match &mut cfg.corruption {
                CorruptionKind::SpatialDiffusion { steps_per_t, .. } => *steps_per_t = steps,
                _ => {
                    return Err(SmmError::Config(
                        "corruption.steps_per_t requires corruption = spatial_diffusion (set it first)"
                            .into(),
                    ))
                }
            }
        }
        "T" => cfg.t_steps = parse_u64(key, value)? as usize,
        "beta_min" => cfg.beta_min = parse_f64(key, value)?,
        "beta_max" => cfg.beta_max = parse_f64(key, value)?,
        "lr" => cfg.learning_rate = parse_f64(key, value)?,
        "batch_size" => cfg.batch_size = parse_u64(key, value)? as usize,
        "duplicate_fake" => cfg.duplicate_fake = parse_bool(key, value)?,
        "hflip" => cfg.hflip = parse_bool(key, value)?,
        "iterations" => cfg.iterations = parse_u64(key, value)?,
        "seed" => cfg.seed = parse_u64(key, value)?,
        "dataset.kind" => {
            cfg.dataset.kind = match value {
                "gauss8" => DatasetKind::Gauss8 {
                    radius: 0.7,
                    std: 0.05,
                },
                "two_moons" => DatasetKind::TwoMoons { noise: 0.05 },
                "swiss_roll" => DatasetKind::SwissRoll2D { noise: 0.05 },
                "mnist" => DatasetKind::Mnist {
                    path: PathBuf::new(),
                    digit_filter: None,
                },
                _ => {
                    return Err(bad_value(
                        key,
                        value,
                        "one of gauss8, two_moons, swiss_roll, mnist",
                    ))
                }
            }
        }
        "dataset.radius" => match &mut cfg.dataset.kind {
            DatasetKind::Gauss8 { radius, .. } => *radius = parse_f64(key, value)?,
            _ => {
                return Err(SmmError::Config(
                    "dataset.radius applies to dataset.kind = gauss8".into(),
                ))
            }
        },
        "dataset.std" => match &mut cfg.dataset.kind {
            DatasetKind::Gauss8 { std, .. } => *std = parse_f64(key, value)?,
            _ => {
                return Err(SmmError::Config(
                    "dataset.std applies to dataset.kind = gauss8".into(),
                ))
            }
        },
        "dataset.noise" => match &mut cfg.dataset.kind {
            DatasetKind::TwoMoons { noise } | DatasetKind::SwissRoll2D { noise } => {
                *noise = parse_f64(key, value)?
            }
            _ => {
                return Err(SmmError::Config(
                    "dataset.noise applies to two_moons or swiss_roll".into(),
                ))
            }
        },
        "dataset.path" => match &mut cfg.dataset.kind {
            DatasetKind::Mnist { path, .. } => *path = PathBuf::from(value),
            _ => {
                return Err(SmmError::Config(
                    "dataset.path applies to dataset.kind = mnist".into(),
                ))
            }
        },
        "dataset.digit_filter" => match &mut cfg.dataset.kind {
            DatasetKind::Mnist { digit_filter, .. } => {
                if value == "none" {
                    *digit_filter = None;
                } else {
                    let d = parse_u64(key, value)?;
                    if d > 9 {
                        return Err(bad_value(key, value, "a digit 0-9 or none"));
                    }
                    *digit_filter = Some(d as u8);
                }
            }
            _ => {
                return Err(SmmError::Config(
                    "dataset.digit_filter applies to dataset.kind = mnist".into(),
                ))
            }
        },
        "dataset.normalize" => cfg.dataset.normalize = parse_bool(key, value)?,
        _ => return Err(SmmError::Config(format!("unknown config key `{key}`"))),
    }
    Ok(())
}

/// Parse a whole config file body. Settings apply on top of the defaults;
/// the result is validated before being returned.
pub fn parse_config(text: &str) -> Result<TrainingConfig> {
    let mut cfg = TrainingConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            SmmError::Config(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        apply_key(&mut cfg, key.trim(), value.trim())
            .map_err(|e| SmmError::Config(format!("line {}: {e}", lineno + 1)))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<TrainingConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Render a config back to file syntax. Parsing the output reproduces the
/// config (paths and test-only flags are not part of the file format).
pub fn render_config(cfg: &TrainingConfig) -> String {
    let mut out = String::new();
    let variant = match cfg.variant {
        VariantKind::Original => "original",
        VariantKind::NoisyTarget => "noisy_target",
        VariantKind::PairedInput => "paired_input",
    };
    out.push_str(&format!("variant = {variant}\n"));
    match &cfg.corruption {
        CorruptionKind::ZeroMean => out.push_str("corruption = zero_mean\n"),
        CorruptionKind::NonZeroMean => out.push_str("corruption = non_zero_mean\n"),
        CorruptionKind::SpatialDiffusion { ratio, steps_per_t } => {
            out.push_str("corruption = spatial_diffusion\n");
            out.push_str(&format!("corruption.ratio = {ratio}\n"));
            out.push_str(&format!("corruption.steps_per_t = {steps_per_t}\n"));
        }
    }
    out.push_str(&format!("T = {}\n", cfg.t_steps));
    out.push_str(&format!("beta_min = {}\n", cfg.beta_min));
    out.push_str(&format!("beta_max = {}\n", cfg.beta_max));
    out.push_str(&format!("lr = {}\n", cfg.learning_rate));
    out.push_str(&format!("batch_size = {}\n", cfg.batch_size));
    out.push_str(&format!("duplicate_fake = {}\n", cfg.duplicate_fake));
    out.push_str(&format!("hflip = {}\n", cfg.hflip));
    out.push_str(&format!("iterations = {}\n", cfg.iterations));
    out.push_str(&format!("seed = {}\n", cfg.seed));
    match &cfg.dataset.kind {
        DatasetKind::Gauss8 { radius, std } => {
            out.push_str("dataset.kind = gauss8\n");
            out.push_str(&format!("dataset.radius = {radius}\n"));
            out.push_str(&format!("dataset.std = {std}\n"));
        }
        DatasetKind::TwoMoons { noise } => {
            out.push_str("dataset.kind = two_moons\n");
            out.push_str(&format!("dataset.noise = {noise}\n"));
        }
        DatasetKind::SwissRoll2D { noise } => {
            out.push_str("dataset.kind = swiss_roll\n");
            out.push_str(&format!("dataset.noise = {noise}\n"));
        }
        DatasetKind::Mnist { path, digit_filter } => {
            out.push_str("dataset.kind = mnist\n");
            out.push_str(&format!("dataset.path = {}\n", path.display()));
            match digit_filter {
                Some(d) => out.push_str(&format!("dataset.digit_filter = {d}\n")),
                None => out.push_str("dataset.digit_filter = none\n"),
            }
        }
    }
    out.push_str(&format!("dataset.normalize = {}\n", cfg.dataset.normalize));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.t_steps, 10);
        assert_eq!(cfg.learning_rate, 0.0025);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.beta_min, 1e-4);
        assert_eq!(cfg.beta_max, 0.02);
        assert!(!cfg.duplicate_fake);
        assert_eq!(cfg.variant, VariantKind::Original);
    }

    #[test]
    fn parses_full_file_with_comments() {
        let text = "\
# experiment: eight gaussians
variant = noisy_target
corruption = non_zero_mean
T = 100          # longer schedule
lr = 0.001
batch_size = 64
duplicate_fake = true
seed = 9
dataset.kind = gauss8
dataset.radius = 0.5
dataset.std = 0.02
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.variant, VariantKind::NoisyTarget);
        assert_eq!(cfg.corruption, CorruptionKind::NonZeroMean);
        assert_eq!(cfg.t_steps, 100);
        assert_eq!(cfg.learning_rate, 0.001);
        assert_eq!(cfg.batch_size, 64);
        assert!(cfg.duplicate_fake);
        assert_eq!(cfg.seed, 9);
        assert_eq!(
            cfg.dataset.kind,
            DatasetKind::Gauss8 {
                radius: 0.5,
                std: 0.02
            }
        );
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = parse_config("learning_rate = 0.1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown config key"), "{msg}");
        assert!(msg.contains("learning_rate"), "{msg}");
    }

    #[test]
    fn type_error_names_key() {
        let err = parse_config("T = fast\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('T') && msg.contains("fast"), "{msg}");
    }

    #[test]
    fn range_error_rejected_by_validation() {
        assert!(parse_config("batch_size = 0\n").is_err());
        assert!(parse_config("beta_min = 0.5\nbeta_max = 0.1\n").is_err());
    }

    #[test]
    fn spatial_corruption_keys() {
        let cfg = parse_config(
            "corruption = spatial_diffusion\ncorruption.ratio = 0.1\ncorruption.steps_per_t = 3\n",
        )
        .unwrap();
        assert_eq!(
            cfg.corruption,
            CorruptionKind::SpatialDiffusion {
                ratio: 0.1,
                steps_per_t: 3
            }
        );
        // ratio without the kind set first is rejected
        assert!(parse_config("corruption.ratio = 0.1\n").is_err());
    }

    #[test]
    fn render_roundtrips() {
        let text = "variant = paired_input\nT = 7\nseed = 123\ndataset.kind = two_moons\ndataset.noise = 0.1\n";
        let cfg = parse_config(text).unwrap();
        let cfg2 = parse_config(&render_config(&cfg)).unwrap();
        assert_eq!(cfg, cfg2);
    }

    #[test]
    fn missing_equals_reports_line() {
        let err = parse_config("seed = 1\nbogus line\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn mnist_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().display().to_string();
        let text = format!(
            "dataset.kind = mnist\ndataset.path = {path}\ndataset.digit_filter = 7\nhflip = true\n"
        );
        let cfg = parse_config(&text).unwrap();
        assert_eq!(
            cfg.dataset.kind,
            DatasetKind::Mnist {
                path: PathBuf::from(&path),
                digit_filter: Some(7)
            }
        );
        assert!(cfg.hflip);
        // hflip on a vector dataset is rejected
        assert!(parse_config("hflip = true\n").is_err());
    }
}
