//! Named-tensor container and its on-disk format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0..4    magic "VIRW"
//! 4..8    version, u32 = 1
//! 8..16   manifest byte length, u64
//! ...     manifest: UTF-8 JSON array of
//!         {name, dtype: "f64"|"f32", shape: [..], offset, byte_len}
//!         offsets relative to the payload start, ascending, non-overlapping
//! ...     payload: raw little-endian elements
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use crate::tensor::{fill_uniform, DType, Element, Tensor};
use crate::{Error, Result, Rng};

pub const MAGIC: [u8; 4] = *b"VIRW";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Default half-width of the uniform initialisation.
pub const INIT_BOUND: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub byte_len: u64,
}

pub fn layer_key(layer: usize, suffix: &str) -> String {
    format!("blocks.{layer}.{suffix}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Uniform,
    Ones,
    Zeros,
}

/// Every tensor a config requires, in a fixed order, with its initialiser.
fn layout(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.model_dim;
    let mut out = vec![
        (
            "patch_embed.weight".to_string(),
            vec![cfg.patch_dim(), d],
            Init::Uniform,
        ),
        ("patch_embed.bias".to_string(), vec![d], Init::Zeros),
        ("pos_embed".to_string(), vec![cfg.num_patches(), d], Init::Uniform),
        ("cls_token".to_string(), vec![1, d], Init::Uniform),
    ];
    for l in 0..cfg.depth {
        let mut push = |suffix: &str, shape: Vec<usize>, init| out.push((layer_key(l, suffix), shape, init));
        push("norm1.gain", vec![d], Init::Ones);
        push("norm1.bias", vec![d], Init::Zeros);
        push("qkv.weight", vec![d, 3 * d], Init::Uniform);
        push("retention_norm.gain", vec![d], Init::Ones);
        push("retention_norm.bias", vec![d], Init::Zeros);
        push("norm2.gain", vec![d], Init::Ones);
        push("norm2.bias", vec![d], Init::Zeros);
        push("mlp.fc1.weight", vec![d, cfg.hidden_dim()], Init::Uniform);
        push("mlp.fc1.bias", vec![cfg.hidden_dim()], Init::Zeros);
        push("mlp.fc2.weight", vec![cfg.hidden_dim(), d], Init::Uniform);
        push("mlp.fc2.bias", vec![d], Init::Zeros);
    }
    out.push(("norm.gain".to_string(), vec![d], Init::Ones));
    out.push(("norm.bias".to_string(), vec![d], Init::Zeros));
    out.push(("head.weight".to_string(), vec![d, cfg.num_classes], Init::Uniform));
    out.push(("head.bias".to_string(), vec![cfg.num_classes], Init::Zeros));
    out
}

/// Required tensor names and shapes for a config.
pub fn expected_shapes(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    layout(cfg).into_iter().map(|(n, s, _)| (n, s)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore<T: Element = f64> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> Default for WeightStore<T> {
    fn default() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }
}

impl<T: Element> WeightStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Seeded initialisation: matrices and embeddings uniform in ±0.02, norm
    /// gains one, biases zero.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        Self::init_uniform(cfg, seed, INIT_BOUND)
    }

    /// Like [`init`](Self::init) with a custom uniform half-width.
    pub fn init_uniform(cfg: &EncoderConfig, seed: u64, bound: f64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(seed);
        let mut store = Self::new();
        for (name, shape, init) in layout(cfg) {
            let t = match init {
                Init::Uniform => fill_uniform(&mut rng, shape, -bound, bound)?,
                Init::Ones => Tensor::ones(shape),
                Init::Zeros => Tensor::zeros(shape),
            };
            store.insert(name, t);
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Option<Tensor<T>> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.tensors.remove(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    /// Fetches `name` and checks its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&Tensor<T>> {
        let t = self.get(name)?;
        if t.shape() != shape {
            return Err(Error::WeightShape {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Checks that every tensor the config needs is present with the right shape.
    pub fn validate(&self, cfg: &EncoderConfig) -> Result<()> {
        cfg.validate()?;
        for (name, shape) in expected_shapes(cfg) {
            self.expect(&name, &shape)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let size = T::DTYPE.size_of() as u64;
        let mut manifest = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            let byte_len = t.len() as u64 * size;
            manifest.push(ManifestEntry {
                name: name.clone(),
                dtype: T::DTYPE.as_str().to_string(),
                shape: t.shape().to_vec(),
                offset,
                byte_len,
            });
            offset += byte_len;
        }
        let manifest = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + offset as usize);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in self.tensors.values() {
            for &x in t.data() {
                x.put_le(&mut out);
            }
        }
        Ok(out)
    }

    /// Parses a container. Stored elements of the other float width are
    /// converted to `T`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::TruncatedHeader(bytes.len()));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::TruncatedHeader(bytes.len()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Version(version));
        }
        let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let payload_start = (HEADER_LEN as u64)
            .checked_add(manifest_len)
            .filter(|&end| end <= bytes.len() as u64)
            .ok_or_else(|| {
                Error::Manifest(format!(
                    "manifest of {manifest_len} bytes extends past end of {}-byte file",
                    bytes.len()
                ))
            })? as usize;
        let entries: Vec<ManifestEntry> =
            serde_json::from_slice(&bytes[HEADER_LEN..payload_start]).map_err(|e| Error::Manifest(e.to_string()))?;

        let mut dtypes = Vec::with_capacity(entries.len());
        let mut end = 0u64;
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            let dtype: DType = e.dtype.parse()?;
            if !seen.insert(e.name.as_str()) {
                return Err(Error::Manifest(format!("duplicate tensor `{}`", e.name)));
            }
            if e.shape.is_empty() || e.shape.contains(&0) {
                return Err(Error::Manifest(format!("`{}` has shape {:?}", e.name, e.shape)));
            }
            let elements = e
                .shape
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
                .ok_or_else(|| Error::Manifest(format!("`{}` shape overflows", e.name)))?;
            if elements.checked_mul(dtype.size_of() as u64) != Some(e.byte_len) {
                return Err(Error::Manifest(format!(
                    "`{}`: byte_len {} does not match shape {:?} of {dtype}",
                    e.name, e.byte_len, e.shape
                )));
            }
            if e.offset < end {
                return Err(Error::Manifest(format!(
                    "`{}` at offset {} overlaps or precedes the previous tensor ending at {end}",
                    e.name, e.offset
                )));
            }
            end = e
                .offset
                .checked_add(e.byte_len)
                .ok_or_else(|| Error::Manifest(format!("`{}` offset overflows", e.name)))?;
            dtypes.push(dtype);
        }

        let payload = &bytes[payload_start..];
        if payload.len() as u64 != end {
            return Err(Error::PayloadLength {
                expected: end,
                actual: payload.len() as u64,
            });
        }

        let mut store = Self::new();
        for (e, dtype) in entries.iter().zip(dtypes) {
            let raw = &payload[e.offset as usize..(e.offset + e.byte_len) as usize];
            let size = dtype.size_of();
            let data: Vec<T> = raw
                .chunks_exact(size)
                .map(|b| match dtype {
                    DType::F64 if T::DTYPE == DType::F64 => T::read_le(b),
                    DType::F32 if T::DTYPE == DType::F32 => T::read_le(b),
                    DType::F64 => T::from_f64(f64::read_le(b)),
                    DType::F32 => T::from_f64(f32::read_le(b) as f64),
                })
                .collect();
            store.insert(e.name.clone(), Tensor::from_vec(e.shape.clone(), data)?);
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_weights<T: Element>(store: &WeightStore<T>, path: impl AsRef<Path>) -> Result<()> {
    store.save(path)
}

pub fn load_weights<T: Element>(path: impl AsRef<Path>) -> Result<WeightStore<T>> {
    WeightStore::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_store() -> WeightStore {
        let mut s = WeightStore::new();
        s.insert("a", Tensor::from_rows(&[[1.0, -2.5], [3.25, 0.0]]));
        s.insert("b", Tensor::from_vec([3], vec![f64::MIN_POSITIVE, -0.0, 7.0]).unwrap());
        s
    }

    fn with_manifest(entries: &[ManifestEntry], payload: &[u8]) -> Vec<u8> {
        let m = serde_json::to_vec(entries).unwrap();
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(m.len() as u64).to_le_bytes());
        out.extend_from_slice(&m);
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn header_layout() {
        let bytes = small_store().to_bytes().unwrap();
        assert_eq!(&bytes[0..4], b"VIRW");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let manifest: Vec<ManifestEntry> = serde_json::from_slice(&bytes[16..16 + mlen]).unwrap();
        assert_eq!(manifest[0].name, "a");
        assert_eq!(manifest[0].offset, 0);
        assert_eq!(manifest[0].byte_len, 32);
        assert_eq!(manifest[1].offset, 32);
        assert_eq!(manifest[1].dtype, "f64");
        assert_eq!(bytes.len(), 16 + mlen + 56);
        assert_eq!(&bytes[16 + mlen..16 + mlen + 8], &1.0f64.to_le_bytes());
    }

    #[test]
    fn round_trip_bit_exact() {
        let s = small_store();
        let back = WeightStore::<f64>::from_bytes(&s.to_bytes().unwrap()).unwrap();
        for ((n1, t1), (n2, t2)) in s.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            let b1: Vec<u64> = t1.data().iter().map(|x| x.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn f32_store_loads_into_f64() {
        let mut s = WeightStore::<f32>::new();
        s.insert("w", Tensor::from_vec([2], vec![0.1f32, -3.0]).unwrap());
        let back = WeightStore::<f64>::from_bytes(&s.to_bytes().unwrap()).unwrap();
        assert_eq!(back.get("w").unwrap().data(), &[0.1f32 as f64, -3.0]);
    }

    #[test]
    fn distinct_errors() {
        let good = small_store().to_bytes().unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(WeightStore::<f64>::from_bytes(&bad), Err(Error::BadMagic(_))));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(WeightStore::<f64>::from_bytes(&bad), Err(Error::Version(2))));

        let bad = &good[..good.len() - 3];
        assert!(matches!(
            WeightStore::<f64>::from_bytes(bad),
            Err(Error::PayloadLength {
                expected: 56,
                actual: 53
            })
        ));

        let entry = |name: &str, dtype: &str, offset| ManifestEntry {
            name: name.into(),
            dtype: dtype.into(),
            shape: vec![2],
            offset,
            byte_len: 16,
        };
        let bad = with_manifest(&[entry("a", "bf16", 0)], &[0; 16]);
        assert!(matches!(WeightStore::<f64>::from_bytes(&bad), Err(Error::UnknownDtype(d)) if d == "bf16"));

        let bad = with_manifest(&[entry("a", "f64", 0), entry("b", "f64", 8)], &[0; 24]);
        assert!(matches!(WeightStore::<f64>::from_bytes(&bad), Err(Error::Manifest(_))));

        assert!(matches!(
            WeightStore::<f64>::from_bytes(b"VIRW\x01"),
            Err(Error::TruncatedHeader(5))
        ));
    }

    #[test]
    fn init_is_deterministic_and_complete() {
        let cfg = EncoderConfig::tiny();
        let a = WeightStore::<f64>::init(&cfg, 3).unwrap();
        let b = WeightStore::<f64>::init(&cfg, 3).unwrap();
        assert_eq!(a, b);
        a.validate(&cfg).unwrap();
        assert_eq!(a.len(), 4 + 11 * cfg.depth + 4);
        let qkv = a.get("blocks.0.qkv.weight").unwrap();
        assert!(qkv.data().iter().all(|x| x.abs() < 0.02));

        let mut c = a.clone();
        c.remove("blocks.1.mlp.fc2.bias");
        assert!(matches!(c.validate(&cfg), Err(Error::MissingWeight(n)) if n == "blocks.1.mlp.fc2.bias"));
    }
}
