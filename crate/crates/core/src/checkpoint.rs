//! Training checkpoints.
//!
//! Layout: magic `UALC`, little-endian `u32` header length, a JSON header
//! (step, image size, configuration text, optimizer state summary and the
//! parameter-name index), then three tensors in `.uald`-style framing with
//! magic `UAL8` and `f64` payload: parameter values, Adam first moments and
//! Adam second moments (the last two are empty for plain gradient descent).
//! Files are written to a temporary sibling and renamed into place.

use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use crate::config::TrainConfig;
use crate::error::{Result, UalError};
use crate::model::{ModelConfig, UalNetwork};
use crate::nn::{Group, Optimizer, OptimizerKind, ParamSet};

pub const MAGIC: &[u8; 4] = b"UALC";
pub const TENSOR_MAGIC: &[u8; 4] = b"UAL8";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Steps completed.
    pub step: usize,
    pub config: TrainConfig,
    pub height: usize,
    pub width: usize,
    pub params: ParamSet,
    pub optimizer: Optimizer,
}

fn encode_tensor(values: &[f64], out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn ck_err(file: &Path, reason: impl Into<String>) -> UalError {
    UalError::Checkpoint {
        file: file.to_path_buf(),
        reason: reason.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: impl Into<String>) -> UalError {
        ck_err(self.file, reason)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated while reading {what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn tensor(&mut self, what: &str) -> Result<Vec<f64>> {
        if self.take(4, what)? != TENSOR_MAGIC {
            return Err(self.err(format!("{what}: bad tensor magic")));
        }
        let rank = self.u32(what)?;
        let mut n = 1usize;
        for _ in 0..rank {
            n = n.saturating_mul(self.u32(what)?);
        }
        let raw = self.take(n.saturating_mul(8), what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let index: Vec<Value> = self
            .params
            .specs()
            .iter()
            .map(|s| json!({"name": s.name, "shape": s.shape, "group": s.group.name(), "offset": s.offset}))
            .collect();
        let header = json!({
            "step": self.step,
            "height": self.height,
            "width": self.width,
            "config": self.config.to_text(),
            "optimizer": {
                "kind": self.optimizer.kind.name(),
                "lr": self.optimizer.lr,
                "steps": self.optimizer.steps,
            },
            "params": index,
        })
        .to_string();
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.params.len() * 3);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        encode_tensor(self.params.values(), &mut out);
        encode_tensor(&self.optimizer.m, &mut out);
        encode_tensor(&self.optimizer.v, &mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8], file: &Path) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0, file };
        if r.take(4, "magic")? != MAGIC {
            return Err(r.err("bad magic, expected \"UALC\""));
        }
        let hlen = r.u32("header length")?;
        let header: Value = serde_json::from_slice(r.take(hlen, "header")?).map_err(|e| ck_err(file, format!("header is not JSON: {e}")))?;
        let field = |k: &str| header.get(k).ok_or_else(|| ck_err(file, format!("header lacks {k:?}")));
        let as_usize = |v: &Value, k: &str| v.as_u64().map(|x| x as usize).ok_or_else(|| ck_err(file, format!("{k} is not an integer")));
        let step = as_usize(field("step")?, "step")?;
        let height = as_usize(field("height")?, "height")?;
        let width = as_usize(field("width")?, "width")?;
        let config_text = field("config")?.as_str().ok_or_else(|| ck_err(file, "config is not text"))?;
        let config = TrainConfig::parse(config_text).map_err(|e| ck_err(file, format!("stored configuration invalid: {e}")))?;
        let (network, mut params) = UalNetwork::new(ModelConfig::from_train(&config, height, width), config.seed)
            .map_err(|e| ck_err(file, format!("stored configuration invalid: {e}")))?;
        drop(network);
        let index = field("params")?.as_array().ok_or_else(|| ck_err(file, "params index is not a list"))?;
        if index.len() != params.specs().len() {
            return Err(ck_err(file, format!("index lists {} tensors, configuration implies {}", index.len(), params.specs().len())));
        }
        for (entry, spec) in index.iter().zip(params.specs()) {
            let name = entry.get("name").and_then(Value::as_str).unwrap_or("");
            let shape: Vec<usize> = entry
                .get("shape")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_u64).map(|x| x as usize).collect())
                .unwrap_or_default();
            let group = entry.get("group").and_then(Value::as_str).and_then(Group::parse);
            if name != spec.name || shape != spec.shape || group != Some(spec.group) {
                return Err(ck_err(file, format!("tensor {name:?} {shape:?} does not match expected {:?} {:?}", spec.name, spec.shape)));
            }
        }
        let values = r.tensor("parameters")?;
        if values.len() != params.len() {
            return Err(ck_err(file, format!("{} parameter values, expected {}", values.len(), params.len())));
        }
        params.values_mut().copy_from_slice(&values);
        let opt = field("optimizer")?;
        let kind: OptimizerKind = opt
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| ck_err(file, "optimizer kind missing"))?
            .parse()
            .map_err(|e| ck_err(file, format!("{e}")))?;
        let lr = opt.get("lr").and_then(Value::as_f64).ok_or_else(|| ck_err(file, "optimizer lr missing"))?;
        let steps_v = opt.get("steps").and_then(Value::as_array).ok_or_else(|| ck_err(file, "optimizer steps missing"))?;
        let mut steps = [0u64; 3];
        for (s, v) in steps.iter_mut().zip(steps_v) {
            *s = v.as_u64().ok_or_else(|| ck_err(file, "optimizer step is not an integer"))?;
        }
        let m = r.tensor("first moments")?;
        let v = r.tensor("second moments")?;
        let expect = if kind == OptimizerKind::Adam { params.len() } else { 0 };
        if m.len() != expect || v.len() != expect {
            return Err(ck_err(file, format!("optimizer state has {}/{} values, expected {expect}", m.len(), v.len())));
        }
        if r.pos != bytes.len() {
            return Err(ck_err(file, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            step,
            config,
            height,
            width,
            params,
            optimizer: Optimizer { kind, lr, m, v, steps },
        })
    }

    /// Write atomically: temporary sibling file, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| UalError::io(dir, e))?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        fs::write(&tmp, self.to_bytes()).map_err(|e| UalError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| UalError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| UalError::io(path, e))?;
        Checkpoint::from_bytes(&bytes, path)
    }

    /// Rebuild the network this checkpoint's parameters belong to.
    pub fn network(&self) -> Result<UalNetwork> {
        Ok(UalNetwork::new(ModelConfig::from_train(&self.config, self.height, self.width), self.config.seed)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_checkpoint(kind: OptimizerKind) -> Checkpoint {
        let config = TrainConfig {
            base_channels: 1,
            optimizer: kind,
            ..TrainConfig::default()
        };
        let (_, mut params) = UalNetwork::new(ModelConfig::from_train(&config, 32, 32), config.seed).unwrap();
        params.values_mut()[0] = std::f64::consts::PI;
        let mut optimizer = Optimizer::new(kind, 0.5, &params);
        optimizer.steps = [3, 3, 2];
        if let Some(m) = optimizer.m.first_mut() {
            *m = 1e-300;
        }
        Checkpoint {
            step: 7,
            config,
            height: 32,
            width: 32,
            params,
            optimizer,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let c = sample_checkpoint(kind);
            let back = Checkpoint::from_bytes(&c.to_bytes(), Path::new("x.ckpt")).unwrap();
            assert_eq!(back.params, c.params);
            assert_eq!(back.optimizer, c.optimizer);
            assert_eq!(back.config, c.config);
            assert_eq!(back.step, 7);
        }
    }

    #[test]
    fn corruption_names_the_file() {
        let bytes = sample_checkpoint(OptimizerKind::Sgd).to_bytes();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 5], Path::new("broken.ckpt")).unwrap_err();
        assert!(matches!(err, UalError::Checkpoint { .. }));
        assert!(err.to_string().contains("broken.ckpt"));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad, Path::new("m.ckpt")).is_err());
    }

    #[test]
    fn save_is_atomic_rename() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/model.ckpt");
        let c = sample_checkpoint(OptimizerKind::Adam);
        c.save(&p).unwrap();
        assert!(!dir.path().join("sub/model.ckpt.tmp").exists());
        assert_eq!(Checkpoint::load(&p).unwrap().params, c.params);
    }
}
