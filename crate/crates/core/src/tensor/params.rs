use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::{Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ACDZ";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Param {
    name: String,
    value: Tensor,
    grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named parameter tensors plus accumulated gradients and Adam moments.
///
/// Names are unique and shapes are fixed at creation. Cloning gives a
/// read-only snapshot for rollout workers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    names: BTreeMap<String, ParamId>,
    step: u64,
}

/// Dense per-parameter gradient buffers, aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            grads: store
                .params
                .iter()
                .map(|p| vec![0.0; p.value.len()])
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub(crate) fn add(&mut self, id: ParamId, g: &[f64]) {
        for (o, v) in self.grads[id.0].iter_mut().zip(g) {
            *o += v;
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint does not match parameter manifest: {0}")]
    Manifest(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId, TensorError> {
        if self.names.contains_key(name) {
            return Err(TensorError::Contract(format!(
                "duplicate parameter name {name}"
            )));
        }
        let id = ParamId(self.params.len());
        let n = value.len();
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        self.names.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    /// Mutable access to the values; the shape stays fixed.
    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.params[id.0].value.data_mut()
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// `(name, shape)` for every parameter, in creation order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec()))
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `grads` into the stored gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (p, g) in self.params.iter_mut().zip(&grads.grads) {
            for (o, v) in p.grad.iter_mut().zip(g) {
                *o += v;
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for p in &mut self.params {
                p.grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        norm
    }

    pub(crate) fn adam_update(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for p in &mut self.params {
            let vals = p.value.data_mut();
            for i in 0..vals.len() {
                let g = p.grad[i];
                p.m[i] = beta1 * p.m[i] + (1.0 - beta1) * g;
                p.v[i] = beta2 * p.v[i] + (1.0 - beta2) * g * g;
                let m_hat = p.m[i] / c1;
                let v_hat = p.v[i] / c2;
                vals[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Writes the checkpoint format: magic, version, count, then per
    /// parameter the name, rank, dims and little-endian `f64` values.
    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(p.value.rank() as u32).to_le_bytes())?;
            for d in p.value.shape() {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            for v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    /// Reads a checkpoint into a fresh store (no moments, step 0).
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let count = read_u32(r)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            if len > 1 << 16 {
                return Err(CheckpointError::Malformed(format!("name length {len}")));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| CheckpointError::Malformed("name is not UTF-8".into()))?;
            let rank = read_u32(r)? as usize;
            if rank > 2 {
                return Err(CheckpointError::Malformed(format!(
                    "rank {rank} for {name}"
                )));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            let t =
                Tensor::new(&shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            store
                .add(&name, t)
                .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(CheckpointError::Malformed("trailing bytes".into()));
        }
        Ok(store)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        Self::read_from(&mut &bytes[..])
    }

    /// Atomic save: writes a sibling temp file, then renames it over `path`.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = io::BufWriter::new(fs::File::create(&tmp)?);
            self.write_to(&mut f)?;
            f.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut f = io::BufReader::new(fs::File::open(path)?);
        Self::read_from(&mut f)
    }

    /// Copies values from `other` after checking that both stores have the
    /// same names and shapes in the same order.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<(), CheckpointError> {
        let mine = self.manifest();
        let theirs = other.manifest();
        if mine.len() != theirs.len() {
            return Err(CheckpointError::Manifest(format!(
                "expected {} parameters, found {}",
                mine.len(),
                theirs.len()
            )));
        }
        for (a, b) in mine.iter().zip(&theirs) {
            if a != b {
                return Err(CheckpointError::Manifest(format!(
                    "expected {} {:?}, found {} {:?}",
                    a.0, a.1, b.0, b.1
                )));
            }
        }
        for (p, q) in self.params.iter_mut().zip(&other.params) {
            p.value = q.value.clone();
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
