//! Binary checkpoint format.
//!
//! ```text
//! magic "HCNMSCC1" | u32 version | u32 meta length | meta (key=value lines)
//! u32 entry count | entries: u32 name length, name, u32 rank, rank × u32 dims, u64 byte offset
//! payload: little-endian f32 values, entries back to back
//! ```
//! All integers are little-endian. Offsets are relative to the payload start.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{model_init, CollaborativeModel, ModelConfig, ModelError};
use crate::optim::AdamState;
use crate::tensor::{Shape, Tensor};

const MAGIC: &[u8; 8] = b"HCNMSCC1";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("unknown parameter {0} in checkpoint")]
    UnknownParam(String),

    #[error("shape mismatch for {name}: model expects {expected}, checkpoint has {found}")]
    ShapeMismatch {
        name: String,
        expected: Shape,
        found: Shape,
    },

    #[error("parameter {0} missing from checkpoint")]
    MissingParam(String),

    #[error("malformed checkpoint metadata: {0}")]
    Meta(String),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

type Result<T> = std::result::Result<T, CheckpointError>;

const M_PREFIX: &str = "adam.m.";
const V_PREFIX: &str = "adam.v.";

fn encode(model: &CollaborativeModel, optimizer: Option<&AdamState<f32>>) -> Vec<u8> {
    let mut meta = String::new();
    for (k, v) in model.config.to_pairs() {
        meta.push_str(&format!("{k}={v}\n"));
    }
    let mut entries: Vec<(String, &Tensor<f32>)> =
        model.params.iter().map(|(_, name, t)| (name.to_string(), t)).collect();
    if let Some(opt) = optimizer {
        meta.push_str(&format!(
            "adam.step={}\nadam.beta1={:?}\nadam.beta2={:?}\nadam.eps={:?}\n",
            opt.step, opt.beta1, opt.beta2, opt.eps
        ));
        for (id, name, _) in model.params.iter() {
            entries.push((format!("{M_PREFIX}{name}"), &opt.m[id.index()]));
        }
        for (id, name, _) in model.params.iter() {
            entries.push((format!("{V_PREFIX}{name}"), &opt.v[id.index()]));
        }
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in &entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&4u32.to_le_bytes());
        for d in t.shape().0 {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 4 * t.numel() as u64;
    }
    for (_, t) in &entries {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Truncated(format!("while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

struct Decoded {
    meta: BTreeMap<String, String>,
    entries: Vec<(String, Tensor<f32>)>,
}

fn decode(bytes: &[u8]) -> Result<Decoded> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta_text =
        std::str::from_utf8(r.take(meta_len, "metadata")?).map_err(|e| CheckpointError::Meta(e.to_string()))?;
    let mut meta = BTreeMap::new();
    for line in meta_text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CheckpointError::Meta(format!("line without '=': {line}")))?;
        meta.insert(k.to_string(), v.to_string());
    }

    let count = r.u32("entry count")? as usize;
    let mut headers = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32("entry name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "entry name")?)
            .map_err(|e| CheckpointError::Meta(e.to_string()))?
            .to_string();
        let rank = r.u32("entry rank")?;
        if rank != 4 {
            return Err(CheckpointError::Meta(format!("{name} has rank {rank}, expected 4")));
        }
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            *d = r.u32("entry dims")? as usize;
        }
        let offset = r.u64("entry offset")?;
        headers.push((name, Shape(dims), offset));
    }
    let payload = &bytes[r.pos..];
    let mut entries = Vec::with_capacity(headers.len());
    for (name, shape, offset) in headers {
        let start = usize::try_from(offset).map_err(|_| CheckpointError::Truncated(name.clone()))?;
        let len = shape.numel() * 4;
        let raw = start
            .checked_add(len)
            .and_then(|end| payload.get(start..end))
            .ok_or_else(|| CheckpointError::Truncated(format!("payload of {name}")))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::from_vec(shape, data).expect("sized payload");
        entries.push((name, t));
    }
    Ok(Decoded { meta, entries })
}

fn install(decoded: Decoded, config: &ModelConfig) -> Result<(CollaborativeModel, Option<AdamState<f32>>)> {
    let mut model = model_init(config, 0)?;
    let mut optimizer = AdamState::new(&model.params);
    let mut seen = vec![false; model.params.len()];
    let mut seen_m = vec![false; model.params.len()];
    let mut seen_v = vec![false; model.params.len()];
    for (name, t) in decoded.entries {
        let (base, slot) = if let Some(b) = name.strip_prefix(M_PREFIX) {
            (b, 1)
        } else if let Some(b) = name.strip_prefix(V_PREFIX) {
            (b, 2)
        } else {
            (name.as_str(), 0)
        };
        let id = model
            .params
            .find(base)
            .ok_or_else(|| CheckpointError::UnknownParam(name.clone()))?;
        let expected = model.params.get(id).shape();
        if t.shape() != expected {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                expected,
                found: t.shape(),
            });
        }
        let i = id.index();
        match slot {
            0 => {
                *model.params.get_mut(id) = t;
                seen[i] = true;
            }
            1 => {
                optimizer.m[i] = t;
                seen_m[i] = true;
            }
            _ => {
                optimizer.v[i] = t;
                seen_v[i] = true;
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(CheckpointError::MissingParam(
            model.params.name(model.params.ids().nth(i).expect("index")).to_string(),
        ));
    }
    let has_optimizer = decoded.meta.contains_key("adam.step");
    if !has_optimizer {
        return Ok((model, None));
    }
    for (prefix, flags) in [(M_PREFIX, &seen_m), (V_PREFIX, &seen_v)] {
        if let Some(i) = flags.iter().position(|s| !s) {
            let id = model.params.ids().nth(i).expect("index");
            return Err(CheckpointError::MissingParam(format!(
                "{prefix}{}",
                model.params.name(id)
            )));
        }
    }
    let num = |k: &str| -> Result<f64> {
        decoded
            .meta
            .get(k)
            .ok_or_else(|| CheckpointError::Meta(format!("missing {k}")))?
            .parse()
            .map_err(|e| CheckpointError::Meta(format!("{k}: {e}")))
    };
    optimizer.step = decoded.meta["adam.step"]
        .parse()
        .map_err(|e| CheckpointError::Meta(format!("adam.step: {e}")))?;
    optimizer.beta1 = num("adam.beta1")?;
    optimizer.beta2 = num("adam.beta2")?;
    optimizer.eps = num("adam.eps")?;
    Ok((model, Some(optimizer)))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CheckpointError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn save_checkpoint(
    model: &CollaborativeModel,
    optimizer: Option<&AdamState<f32>>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model, optimizer)).map_err(|e| CheckpointError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Loads a checkpoint, rebuilding the model from its stored configuration.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CollaborativeModel, Option<AdamState<f32>>)> {
    let decoded = decode(&read(path.as_ref())?)?;
    let config = ModelConfig::from_pairs(&decoded.meta)?;
    install(decoded, &config)
}

/// Loads a checkpoint into a model built from `config`, checking every
/// stored shape against it.
pub fn load_checkpoint_into(
    path: impl AsRef<Path>,
    config: &ModelConfig,
) -> Result<(CollaborativeModel, Option<AdamState<f32>>)> {
    let decoded = decode(&read(path.as_ref())?)?;
    install(decoded, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            channels: 3,
            position_grid: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let model = model_init(&small(), 3).unwrap();
        let mut opt = AdamState::new(&model.params);
        opt.step = 17;
        opt.m[0].data_mut()[0] = 0.25;
        opt.v[1].data_mut()[0] = 1e-7;
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        save_checkpoint(&model, Some(&opt), &a).unwrap();
        let (loaded, loaded_opt) = load_checkpoint(&a).unwrap();
        assert_eq!(loaded.params, model.params);
        assert_eq!(loaded_opt.as_ref(), Some(&opt));
        save_checkpoint(&loaded, loaded_opt.as_ref(), &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn round_trip_without_optimizer() {
        let dir = tempfile::tempdir().unwrap();
        let model = model_init(&small(), 4).unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, None, &path).unwrap();
        let (loaded, opt) = load_checkpoint(&path).unwrap();
        assert!(opt.is_none());
        assert_eq!(loaded, model);
    }

    #[test]
    fn corrupted_files_give_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let model = model_init(&small(), 5).unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, None, &path).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadMagic)));

        let mut bad = good.clone();
        bad[8] = 9;
        fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::VersionMismatch { found: 9, .. })
        ));

        fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Truncated(_))));

        fs::write(&path, &good[..40]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Truncated(_))));

        let renamed = good
            .windows(18)
            .position(|w| w == b"bottom.stem.weight")
            .expect("name present");
        let mut bad = good.clone();
        bad[renamed..renamed + 6].copy_from_slice(b"bxttom");
        fs::write(&path, &bad).unwrap();
        match load_checkpoint(&path) {
            Err(CheckpointError::UnknownParam(name)) => assert_eq!(name, "bxttom.stem.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn narrow_checkpoint_into_wide_config_names_the_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let narrow = ModelConfig {
            channels: 8,
            ..ModelConfig::default()
        };
        let model = model_init(&narrow, 0).unwrap();
        let path = dir.path().join("n.ckpt");
        save_checkpoint(&model, None, &path).unwrap();
        match load_checkpoint_into(&path, &ModelConfig::default()) {
            Err(CheckpointError::ShapeMismatch { name, .. }) => assert_eq!(name, "bottom.stem.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
