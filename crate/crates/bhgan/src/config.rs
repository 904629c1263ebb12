//! Run configuration: JSON file values overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use bhgan_core::dataset::MaskConfig;
use bhgan_core::{NetConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully resolved settings of a run; echoed into checkpoints and reports.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub net: NetConfig,
    pub mask: MaskConfig,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.net.validate()?;
        self.mask.validate()?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn data_dir(&self) -> Result<&Path> {
        self.data_dir.as_deref().ok_or_else(|| Error::Usage("no data directory given (--data)".into()))
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out_dir.as_deref().ok_or_else(|| Error::Usage("no output directory given (--out)".into()))
    }
}

/// Values given explicitly on the command line; `None` keeps the base.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub iterations: Option<u64>,
    pub learning_rate: Option<f64>,
    pub n_critic: Option<usize>,
    pub clip_c: Option<f64>,
    pub batch_size: Option<usize>,
    pub lambda_rec: Option<f64>,
    pub lambda_adv: Option<f64>,
    pub snapshot_every: Option<u64>,
    pub rms_decay: Option<f64>,
    pub rms_eps: Option<f64>,
    pub gen_width: Option<usize>,
    pub critic_width: Option<usize>,
    pub kernel: Option<usize>,
    pub slope: Option<f64>,
    pub local_size: Option<usize>,
    pub min_cover: Option<f64>,
    pub max_cover: Option<f64>,
    pub min_stripes: Option<usize>,
    pub max_stripes: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Merge the keys present in `patch` into `base`, descending into objects.
fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        set(&mut t.seed, self.seed);
        set(&mut t.iterations, self.iterations);
        set(&mut t.learning_rate, self.learning_rate);
        set(&mut t.n_critic, self.n_critic);
        set(&mut t.clip_c, self.clip_c);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.lambda_rec, self.lambda_rec);
        set(&mut t.lambda_adv, self.lambda_adv);
        set(&mut t.snapshot_every, self.snapshot_every);
        set(&mut t.rms_decay, self.rms_decay);
        set(&mut t.rms_eps, self.rms_eps);
        let n = &mut cfg.net;
        set(&mut n.gen_width, self.gen_width);
        set(&mut n.critic_width, self.critic_width);
        set(&mut n.kernel, self.kernel);
        set(&mut n.slope, self.slope);
        set(&mut n.local_size, self.local_size);
        let m = &mut cfg.mask;
        set(&mut m.min_cover, self.min_cover);
        set(&mut m.max_cover, self.max_cover);
        set(&mut m.min_stripes, self.min_stripes);
        set(&mut m.max_stripes, self.max_stripes);
        if self.data_dir.is_some() {
            cfg.data_dir = self.data_dir.clone();
        }
        if self.out_dir.is_some() {
            cfg.out_dir = self.out_dir.clone();
        }
    }
}

/// `base`, then the keys of the config file, then the flags; validated.
pub fn resolve(base: RunConfig, file: Option<&Path>, flags: &Overrides) -> Result<RunConfig> {
    let mut cfg = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let patch: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
            let mut value = base.to_json();
            merge(&mut value, patch);
            serde_json::from_value(value).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?
        }
        None => base,
    };
    flags.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"iterations": 10, "net": {"gen_width": 8}}"#).unwrap();
        assert_eq!(cfg.train.iterations, 10);
        assert_eq!(cfg.train.learning_rate, 0.01);
        assert_eq!(cfg.net.gen_width, 8);
        assert_eq!(cfg.net.critic_width, 32);
        assert_eq!(cfg.mask, MaskConfig::default());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, r#"{"iterations": 10, "seed": 4, "mask": {"max_cover": 0.35}}"#).unwrap();
        let flags = Overrides { iterations: Some(20), ..Default::default() };
        let cfg = resolve(RunConfig::default(), Some(&path), &flags).unwrap();
        assert_eq!((cfg.train.iterations, cfg.train.seed), (20, 4));
        assert_eq!(cfg.mask.max_cover, 0.35);
        assert_eq!(cfg.mask.min_cover, 0.25);

        let mut base = RunConfig::default();
        base.net.gen_width = 8;
        let cfg = resolve(base, Some(&path), &Overrides::default()).unwrap();
        assert_eq!(cfg.net.gen_width, 8);
    }

    #[test]
    fn invalid_values_rejected() {
        let flags = Overrides { min_cover: Some(0.5), max_cover: Some(0.4), ..Default::default() };
        let err = resolve(RunConfig::default(), None, &flags).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn json_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.train.learning_rate = 0.1 + 0.2;
        cfg.data_dir = Some("d".into());
        let back: RunConfig = serde_json::from_value(cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }
}
