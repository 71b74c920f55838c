use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::EpochStats;
use super::{Cvae, ModelConfig, CONDITION_DIM};
use crate::error::{Error, Result};
use crate::nn::{Module, ParamKind, Tensor};
use crate::windowing::{ConditionFlags, Standardizer, WindowSample};

const MAGIC: &[u8] = b"VCKPT1\n";
const MAX_HEADER: usize = 16 << 20;

/// A trained model together with everything needed to apply it: the
/// condition standardizer, the enabled features and the loss history.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub model: Cvae<f32>,
    pub standardizer: Standardizer,
    pub flags: ConditionFlags,
    pub history: Vec<EpochStats>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    buffer: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    standardizer: Standardizer,
    flags: ConditionFlags,
    history: Vec<EpochStats>,
    tensors: Vec<TensorEntry>,
}

impl ModelCheckpoint {
    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    /// Stacks windows into a model batch and encodes their condition vectors.
    pub fn batch_inputs(&self, windows: &[&WindowSample]) -> Result<(Tensor<f32>, Vec<f32>)> {
        let cfg = self.config();
        let (c, w) = (cfg.channels, cfg.input_width);
        let mut data = Vec::with_capacity(windows.len() * c * w * w);
        let mut cond = Vec::with_capacity(windows.len() * CONDITION_DIM);
        for win in windows {
            if win.channels != c || win.width != w {
                return Err(Error::shape([c, w, w], [win.channels, win.width, win.width]));
            }
            data.extend_from_slice(&win.pixels);
            cond.extend(self.standardizer.encode(&win.condition, &self.flags).iter().map(|&v| v as f32));
        }
        Ok((Tensor::from_vec(windows.len(), c, w, w, data), cond))
    }

    /// Serializes to `VCKPT1\n`, a little-endian `u32` header length, a JSON
    /// header and the parameters as little-endian `f32` in header order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut model = self.model.clone();
        let mut tensors = Vec::new();
        let mut payload = Vec::new();
        model.visit("", &mut |name, p| {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: p.shape.clone(),
                buffer: p.kind == ParamKind::Buffer,
            });
            for v in &p.value {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        });
        let header = Header {
            config: self.model.config.clone(),
            standardizer: self.standardizer.clone(),
            flags: self.flags,
            history: self.history.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::format("checkpoint header", e.to_string()))?;
        let mut bytes = Vec::with_capacity(MAGIC.len() + 4 + json.len() + payload.len());
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&json);
        bytes.extend_from_slice(&payload);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ctx = path.display().to_string();
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::format(&ctx, "not a model checkpoint (bad magic)"));
        }
        let len = u32::from_le_bytes(bytes[MAGIC.len()..MAGIC.len() + 4].try_into().unwrap()) as usize;
        let start = MAGIC.len() + 4;
        if len > MAX_HEADER || start + len > bytes.len() {
            return Err(Error::format(&ctx, format!("header length {len} exceeds file")));
        }
        let header: Header =
            serde_json::from_slice(&bytes[start..start + len]).map_err(|e| Error::format(&ctx, e.to_string()))?;
        let mut payload = &bytes[start + len..];
        let mut model = Cvae::<f32>::new(header.config)?;
        let mut expected = header.tensors.iter();
        let mut failure: Option<Error> = None;
        model.visit("", &mut |name, p| {
            if failure.is_some() {
                return;
            }
            let Some(entry) = expected.next() else {
                failure = Some(Error::format(&ctx, format!("tensor `{name}` missing")));
                return;
            };
            if entry.name != name || entry.shape != p.shape {
                failure = Some(Error::format(
                    &ctx,
                    format!(
                        "tensor `{}` {:?} does not match model tensor `{name}` {:?}",
                        entry.name, entry.shape, p.shape
                    ),
                ));
                return;
            }
            let n = p.value.len() * 4;
            if payload.len() < n {
                failure = Some(Error::format(&ctx, format!("payload truncated in tensor `{name}`")));
                return;
            }
            for (v, chunk) in p.value.iter_mut().zip(payload[..n].chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().unwrap());
            }
            payload = &payload[n..];
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if expected.next().is_some() || !payload.is_empty() {
            return Err(Error::format(&ctx, "checkpoint has trailing tensors or bytes"));
        }
        Ok(ModelCheckpoint { model, standardizer: header.standardizer, flags: header.flags, history: header.history })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn checkpoint() -> ModelCheckpoint {
        let cfg = ModelConfig { input_width: 16, channels: 3, base_width: 4, seed: 3, ..Default::default() };
        let mut model = Cvae::<f32>::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        model.visit("", &mut |_, p| p.value.iter_mut().for_each(|v| *v += rng.random::<f32>() * 1e-3));
        let rows: Vec<[f64; 5]> = (0..7).map(|i| [i as f64 * 1.1, 30.0 + i as f64, 1.0, 0.3, 0.1 * i as f64]).collect();
        ModelCheckpoint {
            model,
            standardizer: Standardizer::fit(&rows).unwrap(),
            flags: ConditionFlags::default(),
            history: vec![EpochStats { epoch: 0, beta: 0.0, loss: 1.0 / 3.0, sse: 1.0 / 3.0, kl: 0.1 }],
        }
    }

    fn params(m: &Cvae<f32>) -> Vec<(String, Vec<u32>)> {
        let mut out = Vec::new();
        m.clone().visit("", &mut |n, p| out.push((n.to_string(), p.value.iter().map(|v| v.to_bits()).collect())));
        out
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ck = checkpoint();
        let path = dir.path().join("m.ckpt");
        ck.save(&path).unwrap();
        let back = ModelCheckpoint::load(&path).unwrap();
        assert_eq!(params(&ck.model), params(&back.model));
        assert_eq!(ck.standardizer, back.standardizer);
        assert_eq!(ck.history, back.history);
        assert_eq!(ck.model.config, back.model.config);
        back.save(dir.path().join("again.ckpt")).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(dir.path().join("again.ckpt")).unwrap());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        checkpoint().save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(ModelCheckpoint::load(&path), Err(Error::Format { .. })));
        fs::write(&path, b"garbage").unwrap();
        assert!(matches!(ModelCheckpoint::load(&path), Err(Error::Format { .. })));
    }
}
