//! Binary model checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "XMEC"  u16 version  u32 tensor_count
//! per tensor: u16 name_len, name (utf-8), u32 rank, rank x u32 dims
//! all tensor payloads in manifest order as f64
//! ```

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelDims, MultimodalModel};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"XMEC";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn save_params<T: Scalar>(params: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for (_, _, t) in params.iter() {
        for &x in t.data() {
            out.extend_from_slice(&x.as_f64().to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint<T: Scalar>(model: &MultimodalModel<T>) -> Vec<u8> {
    save_params(&model.params)
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated stream reading {what}: expected {n} bytes at offset {}, found {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn header(&mut self, magic: &[u8; 4], version: u16, kind: &str) -> Result<()> {
        let m = self.take(4, "magic")?;
        if m != magic {
            return Err(Error::Format(format!(
                "{kind}: bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(magic)
            )));
        }
        let v = self.u16("version")?;
        if v != version {
            return Err(Error::Format(format!("{kind}: unsupported version {v}, expected {version}")));
        }
        Ok(())
    }
}

/// Parses a checkpoint into named tensors without interpreting them.
pub fn read_tensors<T: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    let mut r = Reader::new(bytes);
    r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")?;
    let count = r.u32("tensor count")? as usize;
    let mut manifest = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format("tensor name is not utf-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        manifest.push((name, shape));
    }
    let mut out = Vec::with_capacity(manifest.len());
    for (name, shape) in manifest {
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8, &format!("payload of {name}"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes after payload", r.remaining())));
    }
    Ok(out)
}

/// Fills `params` from a checkpoint, requiring identical names and shapes.
pub fn load_params<T: Scalar>(bytes: &[u8], params: &mut ParamStore<T>) -> Result<()> {
    let tensors = read_tensors::<T>(bytes)?;
    if tensors.len() != params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, model expects {}",
            tensors.len(),
            params.len()
        )));
    }
    let ids: Vec<_> = params.iter().map(|(id, n, t)| (id, n.to_string(), t.shape().to_vec())).collect();
    for ((id, name, shape), (cname, t)) in ids.into_iter().zip(tensors) {
        if name != cname || shape != t.shape() {
            return Err(Error::Format(format!(
                "checkpoint tensor {cname} {:?} does not match model tensor {name} {shape:?}",
                t.shape()
            )));
        }
        *params.get_mut(id) = t;
    }
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(bytes: &[u8], config: &ModelConfig, dims: ModelDims) -> Result<MultimodalModel<T>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut model = MultimodalModel::new(config.clone(), dims, &mut rng)?;
    load_params(bytes, &mut model.params)?;
    Ok(model)
}
