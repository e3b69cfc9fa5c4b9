//! Named float32 array container shared by feature caches, Gaussian
//! stores, probe outputs and checkpoints.
//!
//! Files are safetensors with a single metadata entry `lvc-vc` holding a
//! JSON object `{"kind": ..., "version": ..., "meta": ...}`. All arrays are
//! little-endian `F32`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::{Dtype, SafeTensors};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

const META_KEY: &str = "lvc-vc";

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(v: f32) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header<M> {
    kind: String,
    version: u32,
    meta: M,
}

/// Writes arrays plus typed metadata, replacing `path` atomically.
pub fn save<M: Serialize>(
    path: impl AsRef<Path>,
    kind: &str,
    version: u32,
    meta: &M,
    arrays: &BTreeMap<String, Array>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(kind, version, meta, arrays).map_err(|msg| Error::Container {
        path: path.to_path_buf(),
        msg,
    })?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn to_bytes<M: Serialize>(
    kind: &str,
    version: u32,
    meta: &M,
    arrays: &BTreeMap<String, Array>,
) -> std::result::Result<Vec<u8>, String> {
    let header = serde_json::to_string(&Header {
        kind: kind.to_string(),
        version,
        meta,
    })
    .map_err(|e| e.to_string())?;
    let raw: Vec<(String, Vec<u8>, Vec<usize>)> = arrays
        .iter()
        .map(|(name, a)| {
            let bytes = a.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            (name.clone(), bytes, a.shape.clone())
        })
        .collect();
    let views = raw
        .iter()
        .map(|(name, bytes, shape)| {
            safetensors::tensor::TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (name.as_str(), v))
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let info = HashMap::from([(META_KEY.to_string(), header)]);
    safetensors::serialize(views, Some(info)).map_err(|e| e.to_string())
}

pub struct Loaded<M> {
    pub version: u32,
    pub meta: M,
    pub arrays: BTreeMap<String, Array>,
}

impl<M> Loaded<M> {
    pub fn take(&mut self, name: &str) -> Option<Array> {
        self.arrays.remove(name)
    }
}

/// Reads a container and checks its kind tag. Truncated or otherwise
/// malformed files surface as `Error::Container`.
pub fn load<M: DeserializeOwned>(path: impl AsRef<Path>, kind: &str) -> Result<Loaded<M>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let err = |msg: String| Error::Container {
        path: path.to_path_buf(),
        msg,
    };
    let st = SafeTensors::deserialize(&bytes).map_err(|e| err(format!("corrupt file: {e}")))?;
    let (_, metadata) =
        SafeTensors::read_metadata(&bytes).map_err(|e| err(format!("corrupt file: {e}")))?;
    let header_json = metadata
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| err("missing lvc-vc header".into()))?;
    let header: Header<M> =
        serde_json::from_str(header_json).map_err(|e| err(format!("bad header: {e}")))?;
    if header.kind != kind {
        return Err(err(format!(
            "expected a `{kind}` container, found `{}`",
            header.kind
        )));
    }
    let mut arrays = BTreeMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(err(format!("array `{name}` is not f32")));
        }
        let data = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        arrays.insert(name, Array::new(view.shape().to_vec(), data)?);
    }
    Ok(Loaded {
        version: header.version,
        meta: header.meta,
        arrays,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_bit_identical_resave() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.st");
        let p2 = dir.path().join("b.st");
        let mut arrays = BTreeMap::new();
        arrays.insert("x".into(), Array::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-9, 7.0]).unwrap());
        arrays.insert("a".into(), Array::scalar(4.0));
        save(&p1, "test", 3, &vec!["m".to_string()], &arrays).unwrap();
        let loaded: Loaded<Vec<String>> = load(&p1, "test").unwrap();
        assert_eq!(loaded.version, 3);
        assert_eq!(loaded.meta, vec!["m".to_string()]);
        assert_eq!(loaded.arrays, arrays);
        save(&p2, "test", 3, &loaded.meta, &loaded.arrays).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_and_wrong_kind() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.st");
        let mut arrays = BTreeMap::new();
        arrays.insert("x".into(), Array::vector(vec![1.0; 100]));
        save(&p, "test", 1, &(), &arrays).unwrap();
        assert!(matches!(load::<()>(&p, "other"), Err(Error::Container { .. })));
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        let err = load::<()>(&p, "test").err().unwrap();
        assert!(err.to_string().contains("corrupt"), "{err}");
    }
}
