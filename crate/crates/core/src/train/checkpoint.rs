//! Named-tensor files: `SSNN`, u32 version, u32 count, then per tensor a
//! u16 name length, the UTF-8 name, u8 rank, u32 dims and f32 values, all
//! little-endian.

use std::collections::HashSet;
use std::path::Path;

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::models::Model;

pub const MAGIC: &[u8; 4] = b"SSNN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "checkpoint",
        msg: msg.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(bad(format!("truncated while reading {what} at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    /// Every parameter and buffer of `model`, in its declaration order.
    pub fn from_model(model: &dyn Model) -> Self {
        Checkpoint {
            tensors: model
                .params()
                .into_iter()
                .map(|p| (p.name.clone(), Tensor::new(p.value.shape().to_vec(), p.value.data().to_vec()).unwrap()))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut seen = HashSet::new();
        for (name, t) in &self.tensors {
            if !seen.insert(name.as_str()) {
                return Err(bad(format!("duplicate tensor name `{name}`")));
            }
            let len = u16::try_from(name.len()).map_err(|_| bad(format!("name `{name}` is too long")))?;
            let rank = u8::try_from(t.shape().len()).map_err(|_| bad(format!("`{name}` has too many dims")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| bad(format!("`{name}` dimension too large")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(bad("bad magic, expected SSNN"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        let mut seen = HashSet::new();
        for i in 0..count {
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| bad(format!("tensor {i} name is not UTF-8")))?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(bad(format!("duplicate tensor name `{name}`")));
            }
            let rank = r.u8("rank")? as usize;
            let shape = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("size overflow"))?;
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| bad("size overflow"))?, &format!("values of `{name}`"))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(shape, data).map_err(|e| bad(format!("`{name}`: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Copies every tensor into the same-named parameter of `model`. All of
    /// the model's tensors must be present with identical shapes, and the
    /// file may not carry extras.
    pub fn apply_to(&self, model: &mut dyn Model) -> Result<()> {
        let mut wanted = HashSet::new();
        for p in model.params() {
            let Some(t) = self.get(&p.name) else {
                return Err(bad(format!("missing tensor `{}`", p.name)));
            };
            if t.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    name: p.name.clone(),
                    expected: p.value.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            wanted.insert(p.name.clone());
        }
        if let Some((extra, _)) = self.tensors.iter().find(|(n, _)| !wanted.contains(n)) {
            return Err(bad(format!("unexpected tensor `{extra}`")));
        }
        for p in model.params_mut() {
            p.value.data_mut().copy_from_slice(self.get(&p.name).unwrap().data());
        }
        Ok(())
    }
}

pub fn save_checkpoint(model: &dyn Model, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_model(model).save(path)
}

/// Reads a checkpoint file into `model`.
pub fn load_checkpoint(model: &mut dyn Model, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::load(path)?.apply_to(model)
}
