//! Named-tensor registry with deterministic initialization and a bit-exact
//! on-disk container.
//!
//! Container layout (little endian): magic `EINW`, u32 version = 1,
//! u32 entry count; per entry u16 name length, UTF-8 name, u8 rank,
//! u32 extents, then raw IEEE-754 f32 values.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"EINW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Clone, Debug, Default)]
pub struct ModelWeights<S> {
    entries: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> ModelWeights<S> {
    pub fn new() -> Self {
        ModelWeights { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<S>) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.entries.get(name).ok_or_else(|| Error::MissingWeight { name: name.to_string() })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.entries.get_mut(name).ok_or_else(|| Error::MissingWeight { name: name.to_string() })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.entries.iter()
    }

    /// Running-statistic buffers are serialized and updated but never
    /// trained; everything else is a trainable parameter.
    pub fn is_buffer(name: &str) -> bool {
        name.contains("running_")
    }

    /// Norm scale/shift parameters are exempt from weight decay.
    pub fn is_norm_param(name: &str) -> bool {
        name.ends_with(".gamma") || name.ends_with(".beta")
    }

    pub fn param_names(&self) -> Vec<String> {
        self.entries.keys().filter(|n| !Self::is_buffer(n)).cloned().collect()
    }

    pub fn total_scalars(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    /// Count of trainable scalar parameters (excludes running buffers).
    pub fn param_scalars(&self) -> usize {
        self.entries.iter().filter(|(n, _)| !Self::is_buffer(n)).map(|(_, t)| t.len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ModelWeights<T> {
        let entries = self.entries.iter().map(|(n, t)| (n.clone(), t.cast::<T>())).collect();
        ModelWeights { entries }
    }
}

impl ModelWeights<f32> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(&WEIGHTS_MAGIC);
        buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, tensor) in &self.entries {
            tensor.check_finite("save_weights")?;
            let name_bytes = name.as_bytes();
            if name_bytes.len() > u16::MAX as usize {
                return Err(Error::Format(format!("tensor name too long: {name}")));
            }
            buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
            buf.extend_from_slice(name_bytes);
            buf.push(tensor.rank() as u8);
            for &e in tensor.shape() {
                buf.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != WEIGHTS_MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &magic[..4])));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        if version != WEIGHTS_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not valid UTF-8".to_string()))?;
            let rank = cur.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let raw = cur.take(n * 4)?;
            let mut data = Vec::with_capacity(n);
            for chunk in raw.chunks_exact(4) {
                data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
            }
            entries.insert(name, Tensor::from_vec(&shape, data)?);
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after last entry", bytes.len() - cur.pos)));
        }
        Ok(ModelWeights { entries })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "length error: wanted {} bytes at offset {}, file has {}",
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// deterministic initialization

#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    /// Kaiming-uniform fan-in: `U(−√(6/fan_in), √(6/fan_in))`.
    KaimingUniform { fan_in: usize },
    Const(f64),
}

#[derive(Clone, Debug)]
pub struct WeightSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl WeightSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        WeightSpec { name: name.into(), shape: shape.to_vec(), init }
    }
}

/// FNV-1a mix of the registry seed and the tensor name; every tensor draws
/// from its own generator so branches are seeded independently.
pub fn tensor_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325 ^ seed.wrapping_mul(0x100000001b3);
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn materialize<S: Scalar>(specs: &[WeightSpec], seed: u64) -> ModelWeights<S> {
    let mut weights = ModelWeights::new();
    for spec in specs {
        let n: usize = spec.shape.iter().product();
        let data: Vec<S> = match spec.init {
            Init::Const(v) => vec![S::from_f64(v); n],
            Init::KaimingUniform { fan_in } => {
                let bound = (6.0 / fan_in as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(tensor_seed(seed, &spec.name));
                (0..n).map(|_| S::from_f64(rng.random_range(-bound..bound))).collect()
            }
        };
        weights.insert(spec.name.clone(), Tensor::from_parts(spec.shape.clone(), data));
    }
    weights
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_registry_is_twelve_bytes() {
        let dir = std::env::temp_dir().join("einet_weights_test_empty");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.einw");
        ModelWeights::<f32>::new().save(&path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 12);
        let loaded = ModelWeights::<f32>::load(&path).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = vec![];
        bytes.extend_from_slice(b"XXXX");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        let err = ModelWeights::<f32>::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn truncation_rejected() {
        let mut w = ModelWeights::<f32>::new();
        w.insert("a", Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let dir = std::env::temp_dir().join("einet_weights_test_trunc");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.einw");
        w.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let err = ModelWeights::<f32>::from_bytes(&bytes[..bytes.len() - 2]).unwrap_err();
        match err {
            Error::Format(msg) => assert!(msg.contains("length")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn nan_rejected_at_save() {
        let mut w = ModelWeights::<f32>::new();
        let mut t = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        t.data_mut()[1] = f32::NAN;
        w.insert("a", t);
        let dir = std::env::temp_dir().join("einet_weights_test_nan");
        std::fs::create_dir_all(&dir).unwrap();
        assert!(w.save(&dir.join("nan.einw")).is_err());
    }

    #[test]
    fn same_seed_same_weights() {
        let specs = vec![
            WeightSpec::new("a.w", &[4, 3, 3, 3], Init::KaimingUniform { fan_in: 27 }),
            WeightSpec::new("b.gamma", &[4, 1, 1], Init::Const(1.0)),
        ];
        let w1: ModelWeights<f32> = materialize(&specs, 42);
        let w2: ModelWeights<f32> = materialize(&specs, 42);
        assert_eq!(w1.get("a.w").unwrap(), w2.get("a.w").unwrap());
        let w3: ModelWeights<f32> = materialize(&specs, 43);
        assert_ne!(w1.get("a.w").unwrap(), w3.get("a.w").unwrap());
    }
}
