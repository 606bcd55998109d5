use std::fs;
use std::io::Write;
use std::ops::Index;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::tensor::{numel, Element, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named trainable tensors of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.values.iter_mut()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }

    /// Puts every parameter on `g` as a gradient-collecting leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            vars: self.values.iter().map(|t| g.input(t.clone())).collect(),
        }
    }

    /// Puts every parameter on `g` as a constant.
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            vars: self.values.iter().map(|t| g.constant(t.clone())).collect(),
        }
    }

    /// Named tensors for a checkpoint, each name prefixed with `prefix`.
    pub fn export(&self, prefix: &str) -> Vec<(String, Tensor<f32>)> {
        self.iter().map(|(n, t)| (format!("{prefix}{n}"), t.cast())).collect()
    }

    /// Overwrites every parameter from `ckpt`, which must hold each name
    /// (with `prefix`) at the same shape.
    pub fn load_from(&mut self, ckpt: &Checkpoint, prefix: &str) -> Result<()> {
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let key = format!("{prefix}{name}");
            let t = ckpt
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor for layer {key}")))?;
            if t.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "layer {key}: checkpoint shape {:?}, network expects {:?}",
                    t.shape(),
                    value.shape()
                )));
            }
            *value = t.cast();
        }
        Ok(())
    }
}

/// Graph handles of a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl Bound {
    /// Handles for leaves already on a graph, in [`ParamStore`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    /// Gradients after [`Graph::backward`], zero where a parameter was unused.
    pub fn grads<T: Element>(&self, g: &Graph<T>) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v))))
            .collect()
    }
}

const MAGIC: &[u8; 8] = b"ARCKPT01";

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<Entry>,
    meta: serde_json::Value,
}

/// Named `f32` tensors plus free-form metadata.
///
/// On disk: the 8-byte magic `ARCKPT01`, the manifest length as a
/// little-endian `u64`, a JSON manifest listing names and shapes, then every
/// tensor's values as little-endian `f32` in manifest order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = Manifest {
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| Entry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serialises");
        let payload: usize = self.tensors.iter().map(|(_, t)| t.len() * 4).sum();
        let mut out = Vec::with_capacity(16 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes
            .get(16..16 + len)
            .ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest =
            serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
        let mut offset = 16 + len;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            let n = numel(&e.shape);
            let raw = bytes
                .get(offset..offset + 4 * n)
                .ok_or_else(|| Error::Checkpoint(format!("payload of {} is truncated", e.name)))?;
            offset += 4 * n;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((e.name, Tensor::new(&e.shape, data)?));
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Self {
            tensors,
            meta: manifest.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut ps = ParamStore::<f32>::new();
        ps.add("conv.w", Tensor::from_fn(&[2, 3], |i| (i as f32).sin()));
        ps.add("conv.b", Tensor::new(&[2], vec![f32::MIN_POSITIVE, -0.0]).unwrap());
        let ck = Checkpoint {
            tensors: ps.export("g."),
            meta: serde_json::json!({"epoch": 3}),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back.meta["epoch"], 3);
        let mut fresh = ParamStore::<f32>::new();
        fresh.add("conv.w", Tensor::zeros(&[2, 3]));
        fresh.add("conv.b", Tensor::zeros(&[2]));
        fresh.load_from(&back, "g.").unwrap();
        for ((_, a), (_, b)) in ps.iter().zip(fresh.iter()) {
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn shape_mismatch_names_the_layer() {
        let mut ps = ParamStore::<f32>::new();
        ps.add("conv.w", Tensor::zeros(&[2, 3]));
        let ck = Checkpoint {
            tensors: vec![("conv.w".into(), Tensor::zeros(&[3, 2]))],
            meta: serde_json::Value::Null,
        };
        let err = ps.load_from(&ck, "").unwrap_err().to_string();
        assert!(err.contains("conv.w"), "{err}");
        let err = ParamStore::<f32>::new().load_from(&ck, "").map(|_| ());
        assert!(err.is_ok());
        let mut other = ParamStore::<f32>::new();
        other.add("head.b", Tensor::zeros(&[1]));
        assert!(other.load_from(&ck, "").unwrap_err().to_string().contains("head.b"));
    }

    #[test]
    fn corrupt_bytes_are_rejected() {
        let ck = Checkpoint {
            tensors: vec![("a".into(), Tensor::ones(&[4]))],
            meta: serde_json::Value::Null,
        };
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"nonsense-file-contents").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
    }
}
