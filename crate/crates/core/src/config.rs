//! Training configuration and its flat `key = value` text form.
//!
//! Blank lines and lines starting with `#` are ignored. Keys:
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `batch_size` | 2 | samples per step |
//! | `iterations` | 1000 | optimizer steps |
//! | `learning_rate` | 1e-4 | step size for all three parameter groups |
//! | `lambda1`, `lambda2`, `lambda3` | 1 | loss weights |
//! | `ablate` | (none) | comma list of `edfpm, fsc, cswp, mpr, mprgd` to disable |
//! | `edfpm`, `fsc`, `cswp`, `mpr`, `mprgd` | on | per-component switch (`on/off`) |
//! | `modalities` | `t1,t2,dwi` | non-contrast inputs |
//! | `phases` | `a,pv,delay` | contrast phases for radiomics |
//! | `seed` | 0 | initialization and batch order |
//! | `checkpoint_every` | 0 | steps between checkpoints, 0 for none |
//! | `optimizer` | `sgd` | `sgd` or `adam` |
//! | `cswp_mode` | `soft` | `hard` or `soft` |
//! | `swap_disc_labels` | false | use fake=0, real=1 in the discriminator loss |
//! | `base_channels` | 64 | first encoder width; the rest scale from it |
//! | `fsc_kernel` | 3 | kernel size of the fusion convolutions |

use std::fmt::Write as _;
use std::path::Path;

use crate::cswp::CswpMode;
use crate::error::{Result, UalError};
use crate::modality::{ModalityCombo, PhaseCombo};
use crate::nn::OptimizerKind;
use crate::objectives::LossWeights;

/// Which framework components are enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablations {
    pub edfpm: bool,
    pub fsc: bool,
    pub cswp: bool,
    pub mpr: bool,
    pub mprgd: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Ablations::FULL
    }
}

impl Ablations {
    pub const FULL: Ablations = Ablations {
        edfpm: true,
        fsc: true,
        cswp: true,
        mpr: true,
        mprgd: true,
    };
    pub const NAMES: [&'static str; 5] = ["edfpm", "fsc", "cswp", "mpr", "mprgd"];

    fn slot(&mut self, name: &str) -> Result<&mut bool> {
        Ok(match name {
            "edfpm" => &mut self.edfpm,
            "fsc" => &mut self.fsc,
            "cswp" => &mut self.cswp,
            "mpr" => &mut self.mpr,
            "mprgd" => &mut self.mprgd,
            other => return Err(UalError::Config(format!("unknown component {other:?} (expected one of {:?})", Self::NAMES))),
        })
    }

    pub fn set(&mut self, name: &str, enabled: bool) -> Result<()> {
        *self.slot(name)? = enabled;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<bool> {
        let mut copy = *self;
        Ok(*copy.slot(name)?)
    }

    /// The full configuration with one component disabled.
    pub fn without(name: &str) -> Result<Ablations> {
        let mut a = Ablations::FULL;
        a.set(name, false)?;
        Ok(a)
    }

    /// Names of the disabled components.
    pub fn disabled(&self) -> Vec<&'static str> {
        Self::NAMES.into_iter().filter(|n| !self.get(n).unwrap()).collect()
    }

    /// Adversarial training is active.
    pub fn adversarial(&self) -> bool {
        self.mprgd
    }

    /// Radiomics feed the discriminator.
    pub fn radiomics(&self) -> bool {
        self.mprgd && self.mpr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub ablations: Ablations,
    pub modalities: ModalityCombo,
    pub phases: PhaseCombo,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub optimizer: OptimizerKind,
    pub cswp_mode: CswpMode,
    pub swap_disc_labels: bool,
    pub base_channels: usize,
    pub fsc_kernel: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 2,
            iterations: 1000,
            learning_rate: 1e-4,
            weights: LossWeights::default(),
            ablations: Ablations::FULL,
            modalities: ModalityCombo::all(),
            phases: PhaseCombo::all(),
            seed: 0,
            checkpoint_every: 0,
            optimizer: OptimizerKind::Sgd,
            cswp_mode: CswpMode::Soft,
            swap_disc_labels: false,
            base_channels: 64,
            fsc_kernel: 3,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(UalError::Config(format!("{key}: expected on/off, got {v:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| UalError::Config(format!("{key}: cannot parse {v:?}")))
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

impl TrainConfig {
    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "iterations" => self.iterations = parse_num(key, v)?,
            "learning_rate" => self.learning_rate = parse_num(key, v)?,
            "lambda1" => self.weights.lambda1 = parse_num(key, v)?,
            "lambda2" => self.weights.lambda2 = parse_num(key, v)?,
            "lambda3" => self.weights.lambda3 = parse_num(key, v)?,
            "ablate" => {
                for name in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    self.ablations.set(name, false)?;
                }
            }
            k @ ("edfpm" | "fsc" | "cswp" | "mpr" | "mprgd") => self.ablations.set(k, parse_bool(k, v)?)?,
            "modalities" => self.modalities = v.parse()?,
            "phases" => self.phases = v.parse()?,
            "seed" => self.seed = parse_num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "optimizer" => self.optimizer = v.parse()?,
            "cswp_mode" => self.cswp_mode = v.parse()?,
            "swap_disc_labels" => self.swap_disc_labels = parse_bool(key, v)?,
            "base_channels" => self.base_channels = parse_num(key, v)?,
            "fsc_kernel" => self.fsc_kernel = parse_num(key, v)?,
            other => return Err(UalError::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Parse a configuration text on top of the defaults.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| UalError::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| UalError::io(path, e))?;
        TrainConfig::parse(&text)
    }

    /// Canonical text form; `parse(to_text())` reproduces the configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(w, "batch_size = {}", self.batch_size);
        let _ = writeln!(w, "iterations = {}", self.iterations);
        let _ = writeln!(w, "learning_rate = {:e}", self.learning_rate);
        let _ = writeln!(w, "lambda1 = {:e}", self.weights.lambda1);
        let _ = writeln!(w, "lambda2 = {:e}", self.weights.lambda2);
        let _ = writeln!(w, "lambda3 = {:e}", self.weights.lambda3);
        for name in Ablations::NAMES {
            let _ = writeln!(w, "{name} = {}", on_off(self.ablations.get(name).unwrap()));
        }
        let _ = writeln!(w, "modalities = {}", self.modalities);
        let _ = writeln!(w, "phases = {}", self.phases);
        let _ = writeln!(w, "seed = {}", self.seed);
        let _ = writeln!(w, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(w, "optimizer = {}", self.optimizer.name());
        let _ = writeln!(w, "cswp_mode = {}", self.cswp_mode.name());
        let _ = writeln!(w, "swap_disc_labels = {}", self.swap_disc_labels);
        let _ = writeln!(w, "base_channels = {}", self.base_channels);
        let _ = writeln!(w, "fsc_kernel = {}", self.fsc_kernel);
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(UalError::Config("batch_size must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(UalError::Config("iterations must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(UalError::Config(format!("learning_rate must be nonnegative, got {}", self.learning_rate)));
        }
        if self.base_channels == 0 {
            return Err(UalError::Config("base_channels must be at least 1".into()));
        }
        if self.fsc_kernel % 2 == 0 {
            return Err(UalError::Config(format!("fsc_kernel must be odd, got {}", self.fsc_kernel)));
        }
        self.weights.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modality::Modality;

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.set("ablate", "fsc, mpr").unwrap();
        cfg.set("modalities", "t1,dwi").unwrap();
        cfg.set("learning_rate", "0.003").unwrap();
        cfg.set("optimizer", "adam").unwrap();
        cfg.set("cswp_mode", "hard").unwrap();
        let back = TrainConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert!(!back.ablations.fsc && !back.ablations.mpr && back.ablations.edfpm);
        assert!(!back.modalities.contains(Modality::T2));
    }

    #[test]
    fn comments_and_errors() {
        let cfg = TrainConfig::parse("# comment\n\nbatch_size = 4\n").unwrap();
        assert_eq!(cfg.batch_size, 4);
        assert!(matches!(TrainConfig::parse("nonsense"), Err(UalError::Config(_))));
        assert!(matches!(TrainConfig::parse("colour = red"), Err(UalError::Config(_))));
        assert!(matches!(TrainConfig::parse("ablate = gan"), Err(UalError::Config(_))));
        assert!(matches!(TrainConfig::parse("modalities = t1,t1"), Err(UalError::Config(_))));
        assert!(TrainConfig::parse("iterations = 0").unwrap().validate().is_err());
    }

    #[test]
    fn ablation_helpers() {
        let a = Ablations::without("mprgd").unwrap();
        assert!(!a.adversarial() && !a.radiomics());
        assert_eq!(a.disabled(), vec!["mprgd"]);
        assert!(Ablations::without("mpr").unwrap().adversarial());
    }
}
