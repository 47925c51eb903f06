//! Binary checkpoint container.
//!
//! ```text
//! magic      8 bytes   "MIALABCK"
//! version    u32 LE
//! header_len u64 LE
//! header     JSON: model config, adapters, provenance, layer/tensor names and shapes
//! data       every tensor's values as f64 LE, in header order
//! trailer    sha256 of all preceding bytes
//! ```

use std::io::Write;
use std::path::Path;

use anyhow::{bail, ensure, Context};
use mialab_core::model::{Layer, LoraAdapter, ModelCheckpoint, ModelConfig, ParameterSet, Provenance, Seq2Seq};
use mialab_core::numerics::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 8] = b"MIALABCK";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    adapters: Vec<LoraAdapter>,
    provenance: Provenance,
    layers: Vec<LayerEntry>,
}

#[derive(Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn encode(ck: &ModelCheckpoint) -> anyhow::Result<Vec<u8>> {
    let m = &ck.model;
    let header = Header {
        config: m.config.clone(),
        adapters: m.adapters.clone(),
        provenance: ck.provenance.clone(),
        layers: m
            .params
            .layers()
            .iter()
            .map(|l| LayerEntry {
                name: l.name.clone(),
                tensors: l.tensors.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(json.len() + 8 * m.params.param_count() + 52);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in m.params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> anyhow::Result<ModelCheckpoint> {
    ensure!(bytes.len() >= 8 + 4 + 8 + 32, "checkpoint truncated");
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    ensure!(Sha256::digest(body).as_slice() == trailer, "checkpoint checksum mismatch");
    ensure!(&body[..8] == MAGIC, "not a checkpoint file");
    let version = u32::from_le_bytes(body[8..12].try_into()?);
    if version != VERSION {
        bail!("unsupported checkpoint version {version}");
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into()?) as usize;
    let hend = 20usize.checked_add(hlen).filter(|&e| e <= body.len()).context("header length out of range")?;
    let header: Header = serde_json::from_slice(&body[20..hend]).context("checkpoint header")?;
    let mut data = body[hend..].chunks_exact(8);
    ensure!(data.remainder().is_empty(), "tensor data is not a whole number of f64 values");
    let mut params = ParameterSet::new();
    for l in header.layers {
        let mut tensors = Vec::with_capacity(l.tensors.len());
        for t in l.tensors {
            let n: usize = t.shape.iter().product();
            let values: Vec<f64> = data
                .by_ref()
                .take(n)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            ensure!(values.len() == n, "tensor `{}` truncated", t.name);
            tensors.push((t.name, Tensor::new(t.shape, values)?));
        }
        params.push_layer(Layer { name: l.name, tensors })?;
    }
    ensure!(data.next().is_none(), "trailing tensor data");
    let model = Seq2Seq { config: header.config, params, adapters: header.adapters };
    Ok(ModelCheckpoint { model, provenance: header.provenance })
}

pub fn save(path: &Path, ck: &ModelCheckpoint) -> anyhow::Result<()> {
    let bytes = encode(ck)?;
    let mut f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> anyhow::Result<ModelCheckpoint> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode(&bytes).with_context(|| format!("decoding {}", path.display()))
}
