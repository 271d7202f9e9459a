//! Single-file parameter archives (safetensors container) with string metadata.
//!
//! Every archive carries a `format` tag such as `refill-gen-v1`, the model
//! config as JSON under `config`, and a content hash under `checkpoint_id`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::Tensor;
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{self, DTYPE};

pub const FORMAT_KEY: &str = "format";
pub const CONFIG_KEY: &str = "config";
pub const ID_KEY: &str = "checkpoint_id";

pub const GENERATOR_FORMAT: &str = "refill-gen-v1";
pub const CRITIC_FORMAT: &str = "refill-critic-v1";
pub const EXTRACTOR_FORMAT: &str = "refill-ext-v1";
pub const AUX_FORMAT: &str = "refill-aux-v1";
pub const OPTIMIZER_FORMAT: &str = "refill-optim-v1";

#[derive(Debug)]
pub struct Archive {
    pub metadata: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Archive {
    pub fn format(&self) -> Option<&str> {
        self.metadata.get(FORMAT_KEY).map(String::as_str)
    }

    pub fn checkpoint_id(&self) -> Option<&str> {
        self.metadata.get(ID_KEY).map(String::as_str)
    }

    pub fn config<T: serde::de::DeserializeOwned>(&self, path: &Path) -> Result<T> {
        let raw = self
            .metadata
            .get(CONFIG_KEY)
            .ok_or_else(|| Error::checkpoint(path, "no embedded config"))?;
        serde_json::from_str(raw).map_err(|e| Error::checkpoint(path, format!("config: {e}")))
    }
}

fn tensor_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let values = nn::to_vec(t)?;
    Ok(values.iter().flat_map(|v| v.to_le_bytes()).collect())
}

/// Hex prefix of a SHA-256 over names, shapes and raw values.
pub fn content_id(tensors: &[(String, Tensor)]) -> Result<String> {
    let mut sorted: Vec<&(String, Tensor)> = tensors.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut hasher = Sha256::new();
    for (name, t) in sorted {
        hasher.update(name.as_bytes());
        for d in t.dims() {
            hasher.update((*d as u64).to_le_bytes());
        }
        hasher.update(tensor_bytes(t)?);
    }
    Ok(hex::encode(&hasher.finalize()[..8]))
}

/// Writes `tensors` as f64 with `format`, optional config JSON and a content id.
/// Returns the id.
pub fn write_archive(
    path: impl AsRef<Path>,
    format: &str,
    config_json: Option<String>,
    extra: BTreeMap<String, String>,
    tensors: &[(String, Tensor)],
) -> Result<String> {
    let path = path.as_ref();
    let id = content_id(tensors)?;
    let mut metadata: HashMap<String, String> = extra.into_iter().collect();
    metadata.insert(FORMAT_KEY.into(), format.into());
    metadata.insert(ID_KEY.into(), id.clone());
    if let Some(cfg) = config_json {
        metadata.insert(CONFIG_KEY.into(), cfg);
    }
    let buffers = tensors
        .iter()
        .map(|(n, t)| Ok((n.clone(), t.dims().to_vec(), tensor_bytes(t)?)))
        .collect::<Result<Vec<_>>>()?;
    let views = buffers
        .iter()
        .map(|(n, shape, bytes)| {
            TensorView::new(Dtype::F64, shape.clone(), bytes)
                .map(|v| (n.clone(), v))
                .map_err(|e| Error::checkpoint(path, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    safetensors::serialize_to_file(views, Some(metadata), path).map_err(|e| Error::checkpoint(path, e.to_string()))?;
    Ok(id)
}

/// Reads an archive; when `expected_format` is given the `format` tag must match it.
pub fn read_archive(path: impl AsRef<Path>, expected_format: Option<&str>) -> Result<Archive> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| Error::checkpoint(path, e.to_string()))?;
    let metadata: BTreeMap<String, String> = header.metadata().clone().unwrap_or_default().into_iter().collect();
    if let Some(expected) = expected_format {
        let found = metadata.get(FORMAT_KEY).map(String::as_str);
        if found != Some(expected) {
            return Err(Error::checkpoint(
                path,
                format!("expected format `{expected}`, found {found:?}"),
            ));
        }
    }
    let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::checkpoint(path, e.to_string()))?;
    let mut tensors = BTreeMap::new();
    for (name, view) in st.tensors() {
        tensors.insert(name, view_to_tensor(path, &view)?);
    }
    Ok(Archive { metadata, tensors })
}

fn view_to_tensor(path: &Path, view: &TensorView<'_>) -> Result<Tensor> {
    let data = view.data();
    let values: Vec<f64> = match view.dtype() {
        Dtype::F64 => data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
        Dtype::F32 => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect(),
        other => return Err(Error::checkpoint(path, format!("unsupported tensor dtype {other:?}"))),
    };
    Ok(Tensor::from_vec(values, view.shape(), &nn::device())?.to_dtype(DTYPE)?)
}
