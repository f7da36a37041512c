//! Run configuration: a TOML file whose values command-line flags override.
//! The fully resolved form is written next to every output.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mint_core::engine::{MintConfig, TextPrior, UndefinedPolicy};
use mint_core::theory::{LatentParams, Segments};
use serde::{Deserialize, Serialize};

/// Step size used on the synthetic head when none is configured. The
/// library default targets real encoder dumps and barely moves the
/// synthetic head within a stream.
pub const SYNTHETIC_LEARNING_RATE: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub latent: LatentConfig,
    pub sweep: SweepConfig,
    pub adapt: AdaptConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("mint-out"),
            latent: LatentConfig::default(),
            sweep: SweepConfig::default(),
            adapt: AdaptConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentConfig {
    pub d_cls: usize,
    pub d_irr: usize,
    pub d_shift: usize,
    pub d_noise: usize,
    pub mu_norm_sq: f64,
    pub delta_norm_sq: f64,
    pub contamination: f64,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self {
            d_cls: 8,
            d_irr: 32,
            d_shift: 8,
            d_noise: 16,
            mu_norm_sq: 4.0,
            delta_norm_sq: 9.0,
            contamination: 0.3,
        }
    }
}

impl LatentConfig {
    pub fn segments(&self) -> Segments {
        Segments {
            d_cls: self.d_cls,
            d_irr: self.d_irr,
            d_shift: self.d_shift,
            d_noise: self.d_noise,
        }
    }

    pub fn params(&self, severity: f64) -> Result<LatentParams> {
        if self.contamination.is_nan() || self.contamination < 0.0 {
            bail!("contamination must be >= 0");
        }
        Ok(LatentParams::uniform(
            self.segments(),
            self.mu_norm_sq,
            self.delta_norm_sq,
            severity,
        )?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub severities: Vec<f64>,
    pub n_samples: usize,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            severities: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            n_samples: 200_000,
            seeds: vec![0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Synthetic,
    Dump,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub mode: Mode,
    /// Dump to adapt on in dump mode.
    pub input: Option<PathBuf>,
    pub severity: f64,
    /// Stream length in synthetic mode; every batch size sees the same stream.
    pub n_samples: usize,
    pub batch_sizes: Vec<usize>,
    /// Unset means the mode default.
    pub learning_rate: Option<f64>,
    pub k_prior: f64,
    pub text_prior: TextPrior,
    pub use_mean_acc: bool,
    pub use_grad_acc: bool,
    pub use_text_adjust: bool,
    pub on_undefined: UndefinedPolicy,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        let m = MintConfig::default();
        Self {
            mode: Mode::Synthetic,
            input: None,
            severity: 4.0,
            n_samples: 10_000,
            batch_sizes: vec![m.batch_size],
            learning_rate: None,
            k_prior: m.k_prior,
            text_prior: m.text_prior,
            use_mean_acc: m.use_mean_acc,
            use_grad_acc: m.use_grad_acc,
            use_text_adjust: m.use_text_adjust,
            on_undefined: m.on_undefined,
        }
    }
}

impl AdaptConfig {
    pub fn resolve_learning_rate(&mut self) {
        if self.learning_rate.is_none() {
            self.learning_rate = Some(match self.mode {
                Mode::Synthetic => SYNTHETIC_LEARNING_RATE,
                Mode::Dump => MintConfig::default().learning_rate,
            });
        }
    }

    pub fn mint_config(&self, batch_size: usize) -> MintConfig {
        MintConfig {
            learning_rate: self
                .learning_rate
                .unwrap_or(MintConfig::default().learning_rate),
            k_prior: self.k_prior,
            batch_size,
            text_prior: self.text_prior,
            use_mean_acc: self.use_mean_acc,
            use_grad_acc: self.use_grad_acc,
            use_text_adjust: self.use_text_adjust,
            on_undefined: self.on_undefined,
            ..MintConfig::default()
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

/// Write `value` as TOML to `<output>.config.toml`, next to `output`.
pub fn write_sidecar<T: Serialize>(value: &T, output: &Path) -> Result<PathBuf> {
    let mut name = output
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".config.toml");
    let path = output.with_file_name(name);
    std::fs::write(&path, toml::to_string(value)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let mut c = RunConfig::default();
        c.adapt.resolve_learning_rate();
        let back = RunConfig::parse(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = RunConfig::parse(
            "seed = 7\n[sweep]\nseverities = [2.5]\n[adapt]\ntext_prior = \"global\"\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.sweep.severities, vec![2.5]);
        assert_eq!(c.sweep.n_samples, 200_000);
        assert_eq!(c.adapt.text_prior, TextPrior::Global);
        assert_eq!(c.latent, LatentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sead = 1\n").is_err());
        assert!(RunConfig::parse("[latent]\nd_cls = \"x\"\n").is_err());
    }

    #[test]
    fn learning_rate_follows_mode() {
        let mut a = AdaptConfig::default();
        a.resolve_learning_rate();
        assert_eq!(a.learning_rate, Some(SYNTHETIC_LEARNING_RATE));
        let mut d = AdaptConfig {
            mode: Mode::Dump,
            ..AdaptConfig::default()
        };
        d.resolve_learning_rate();
        assert_eq!(d.learning_rate, Some(0.007));
        let mut e = AdaptConfig {
            learning_rate: Some(0.05),
            ..AdaptConfig::default()
        };
        e.resolve_learning_rate();
        assert_eq!(e.mint_config(5).learning_rate, 0.05);
    }
}
