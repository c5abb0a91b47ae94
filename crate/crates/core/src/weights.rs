//! Named-tensor container ("DPCW") and seeded initialization.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  b"DPCW"
//! u32    version (1)
//! u32    tensor count
//! per tensor:
//!   u16  name length, then UTF-8 name bytes
//!   u8   dtype tag (0 = f32)
//!   u8   ndim
//!   u32  dims[ndim]
//!   f32  data[product(dims)]
//! ```

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DPCW";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered map of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightContainer {
    tensors: IndexMap<String, Tensor>,
}

impl WeightContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(Error::config(format!("tensor name of {} bytes is too long", name.len())));
        }
        if self.tensors.contains_key(&name) {
            return Err(Error::DuplicateTensor(name));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Sum of element counts over all tensors.
    pub fn total_params(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[DTYPE_F32, t.dims.len() as u8])?;
            for &d in &t.dims {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.data.len() * 4);
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4).ok_or(Error::BadMagic)? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32().ok_or(Error::TruncatedFile)?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let count = r.u32().ok_or(Error::TruncatedFile)?;
        let mut out = WeightContainer::new();
        for _ in 0..count {
            let len = r.u16().ok_or(Error::TruncatedFile)? as usize;
            let name = r.take(len).ok_or(Error::TruncatedFile)?;
            let name = String::from_utf8(name.to_vec())
                .map_err(|_| Error::config("tensor name is not valid UTF-8"))?;
            let dtype = r.u8().ok_or_else(|| Error::TruncatedTensor(name.clone()))?;
            if dtype != DTYPE_F32 {
                return Err(Error::UnsupportedDtype(dtype));
            }
            let ndim = r.u8().ok_or_else(|| Error::TruncatedTensor(name.clone()))? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32().ok_or_else(|| Error::TruncatedTensor(name.clone()))? as usize);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::TruncatedTensor(name.clone()))?;
            let raw = r.take(n).ok_or_else(|| Error::TruncatedTensor(name.clone()))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            out.insert(name, Tensor { dims, data })?;
        }
        if r.pos != bytes.len() {
            return Err(Error::config(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
        );
        self.write_to(&mut f).map_err(|e| Error::io(path, e))?;
        f.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// How a freshly initialized tensor is filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(1 / fan_in)`.
    Uniform { fan_in: usize },
    Const(f32),
}

/// Supplies parameter tensors while a model is being assembled.
pub trait ParamSource {
    fn tensor(&mut self, name: &str, dims: &[usize], init: Init) -> Result<Vec<f32>>;
}

/// Serves tensors from a container, checking shapes and usage.
pub struct Loader<'a> {
    container: &'a WeightContainer,
    used: HashSet<String>,
}

impl<'a> Loader<'a> {
    pub fn new(container: &'a WeightContainer) -> Self {
        Self {
            container,
            used: HashSet::new(),
        }
    }

    /// Fails if the container holds tensors the model never asked for.
    pub fn finish(self) -> Result<()> {
        let extra: Vec<&str> = self
            .container
            .names()
            .filter(|n| !self.used.contains(*n))
            .collect();
        if extra.is_empty() {
            Ok(())
        } else {
            Err(Error::WeightMismatch(format!(
                "unexpected tensors: {}",
                extra.join(", ")
            )))
        }
    }
}

impl ParamSource for Loader<'_> {
    fn tensor(&mut self, name: &str, dims: &[usize], _init: Init) -> Result<Vec<f32>> {
        let t = self
            .container
            .get(name)
            .ok_or_else(|| Error::WeightMismatch(format!("missing tensor `{name}`")))?;
        if t.dims != dims {
            return Err(Error::WeightMismatch(format!(
                "tensor `{name}` has shape {:?}, expected {dims:?}",
                t.dims
            )));
        }
        self.used.insert(name.to_string());
        Ok(t.data.clone())
    }
}

/// Draws fresh tensors from a seeded ChaCha8 stream and records them.
pub struct Initializer {
    rng: ChaCha8Rng,
    pub container: WeightContainer,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            container: WeightContainer::new(),
        }
    }
}

impl ParamSource for Initializer {
    fn tensor(&mut self, name: &str, dims: &[usize], init: Init) -> Result<Vec<f32>> {
        let n: usize = dims.iter().product();
        let data: Vec<f32> = match init {
            Init::Const(v) => vec![v; n],
            Init::Uniform { fan_in } => {
                let a = (1.0 / fan_in.max(1) as f64).sqrt() as f32;
                let dist = Uniform::new_inclusive(-a, a).expect("finite bounds");
                (0..n).map(|_| dist.sample(&mut self.rng)).collect()
            }
        };
        self.container
            .insert(name, Tensor::new(dims.to_vec(), data.clone())?)?;
        Ok(data)
    }
}

/// Fills every tensor with one constant, ignoring the init rule.
pub struct Filled(pub f32);

impl ParamSource for Filled {
    fn tensor(&mut self, _name: &str, dims: &[usize], _init: Init) -> Result<Vec<f32>> {
        Ok(vec![self.0; dims.iter().product()])
    }
}
