//! Single-file training snapshots.
//!
//! Layout: `b"PWCK"`, `u32` format version, `u64` header length, a JSON
//! header, raw little-endian `f32` tensor data, and a CRC32 of everything
//! before it. Files are written to a temporary name and renamed into place.

use std::path::{Path, PathBuf};

use patchwork_autograd::{AdamState, Array, Elem};
use serde::{Deserialize, Serialize};

use crate::data::SamplerState;
use crate::error::{Error, Result};
use crate::networks::{ModelBundle, NetConfig};
use crate::nn::ParamSet;

pub const MAGIC: &[u8; 4] = b"PWCK";
pub const FORMAT_VERSION: u32 = 1;

/// Position of a ChaCha generator: enough to continue its exact stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

/// Latest generator-step scalars, repeated in reports until the next one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenScalars {
    pub class_f: f64,
    pub cycle: f64,
    pub total_gen: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub bundle: ModelBundle<f32>,
    /// Adam moments for R, G, D.
    pub adam: [AdamState<f32>; 3],
    pub rng: RngState,
    pub sampler: SamplerState,
    pub gen: GenScalars,
    /// Attribute names in code order.
    pub attributes: Vec<String>,
    /// The training configuration, kept verbatim for provenance.
    pub train_config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    key: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    element: String,
    net: NetConfig,
    iteration: u64,
    adam_steps: [u64; 3],
    rng: RngState,
    sampler: SamplerState,
    gen: GenScalars,
    #[serde(default)]
    attributes: Vec<String>,
    train_config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

const GROUPS: [&str; 3] = ["R", "G", "D"];

fn flatten(c: &Checkpoint) -> Vec<(String, &Array<f32>)> {
    let mut out = Vec::new();
    let sets = [&c.bundle.r, &c.bundle.g, &c.bundle.d];
    for (k, set) in sets.iter().enumerate() {
        let g = GROUPS[k];
        for (name, v) in set.iter() {
            out.push((format!("{g}/{name}"), v));
        }
        for (name, v) in set.names().iter().zip(&c.adam[k].m) {
            out.push((format!("{g}.adam_m/{name}"), v));
        }
        for (name, v) in set.names().iter().zip(&c.adam[k].v) {
            out.push((format!("{g}.adam_v/{name}"), v));
        }
    }
    out
}

pub fn encode(c: &Checkpoint) -> Vec<u8> {
    let tensors = flatten(c);
    let mut data = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (key, v) in &tensors {
        entries.push(TensorEntry {
            key: key.clone(),
            shape: v.shape().to_vec(),
            offset: data.len(),
        });
        f32::write_le(v.data(), &mut data);
    }
    let header = Header {
        element: f32::NAME.to_string(),
        net: c.bundle.config.clone(),
        iteration: c.iteration,
        adam_steps: [c.adam[0].step, c.adam[1].step, c.adam[2].step],
        rng: c.rng,
        sampler: c.sampler,
        gen: c.gen,
        attributes: c.attributes.clone(),
        train_config: c.train_config.clone(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + data.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |msg: &str| Error::Integrity {
        path: path.to_path_buf(),
        message: msg.to_string(),
    };
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Incompatible {
            what: "checkpoint format",
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(bad("checksum mismatch"));
    }
    let hlen = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
    let json = body.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let data = &body[16 + hlen..];
    let header: Header = serde_json::from_slice(json).map_err(|e| bad(&format!("bad header: {e}")))?;
    if header.element != f32::NAME {
        return Err(bad("unsupported element type"));
    }

    let mut tensors = std::collections::HashMap::new();
    for t in &header.tensors {
        let n: usize = t.shape.iter().product();
        let raw = data.get(t.offset..t.offset + 4 * n).ok_or_else(|| bad("tensor out of bounds"))?;
        let values = f32::read_le(raw).ok_or_else(|| bad("bad tensor bytes"))?;
        tensors.insert(t.key.clone(), Array::from_vec(t.shape.clone(), values).unwrap());
    }

    let mut take = |key: String| tensors.remove(&key).ok_or_else(|| bad(&format!("missing tensor {key}")));
    let mut sets: Vec<ParamSet<f32>> = Vec::new();
    let mut adam = Vec::new();
    for (k, g) in GROUPS.iter().enumerate() {
        let mut set = ParamSet::default();
        let mut m = Vec::new();
        let mut v = Vec::new();
        let prefix = format!("{g}/");
        let names: Vec<String> = header
            .tensors
            .iter()
            .filter_map(|t| t.key.strip_prefix(&prefix).map(String::from))
            .collect();
        for name in names {
            set.push(name.clone(), take(format!("{g}/{name}"))?);
            m.push(take(format!("{g}.adam_m/{name}"))?);
            v.push(take(format!("{g}.adam_v/{name}"))?);
        }
        sets.push(set);
        adam.push(AdamState {
            step: header.adam_steps[k],
            m,
            v,
        });
    }
    let d = sets.pop().unwrap();
    let g = sets.pop().unwrap();
    let r = sets.pop().unwrap();
    let adam: [AdamState<f32>; 3] = adam.try_into().unwrap();
    Ok(Checkpoint {
        iteration: header.iteration,
        bundle: ModelBundle {
            config: header.net,
            r,
            g,
            d,
        },
        adam,
        rng: header.rng,
        sampler: header.sampler,
        gen: header.gen,
        attributes: header.attributes,
        train_config: header.train_config,
    })
}

/// Writes atomically: a crash leaves either the old file or the new one.
pub fn save(c: &Checkpoint, path: &Path) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp: PathBuf = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("checkpoint")
    ));
    std::fs::write(&tmp, encode(c)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::init_bundle;

    fn sample() -> Checkpoint {
        let cfg = NetConfig {
            image_size: 16,
            patch_size: 8,
            n_attributes: 2,
            base_channels: 2,
            n_res_blocks: 1,
        };
        let bundle = init_bundle::<f32>(&cfg, 3).unwrap();
        let moments = |p: &ParamSet<f32>, s: f32| AdamState {
            step: 7,
            m: p.values().iter().map(|a| a.map(|x| x * s)).collect(),
            v: p.values().iter().map(|a| a.map(|x| x * x)).collect(),
        };
        Checkpoint {
            iteration: 42,
            adam: [moments(&bundle.r, 0.5), moments(&bundle.g, 0.25), moments(&bundle.d, 2.0)],
            bundle,
            rng: RngState {
                seed: [9; 32],
                stream: 1,
                word_pos: 12345,
            },
            sampler: SamplerState { epoch: 2, cursor: 3 },
            gen: GenScalars {
                class_f: 0.5,
                cycle: 0.1,
                total_gen: -1.0,
            },
            attributes: vec!["A".into(), "B".into()],
            train_config: serde_json::json!({"n_iter": 100}),
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pwck");
        let c = sample();
        save(&c, &p).unwrap();
        assert_eq!(load(&p).unwrap(), c);
        assert_eq!(encode(&c), std::fs::read(&p).unwrap());
    }

    #[test]
    fn corruption_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pwck");
        let mut bytes = encode(&sample());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load(&p), Err(Error::Integrity { .. })));

        let mut bytes = encode(&sample());
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            load(&p),
            Err(Error::Incompatible { found: 99, .. })
        ));

        std::fs::write(&p, b"hello").unwrap();
        assert!(matches!(load(&p), Err(Error::Integrity { .. })));
    }
}
