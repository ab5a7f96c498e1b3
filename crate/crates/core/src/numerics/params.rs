//! Named trainable tensors and the binary checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic   b"MLEDCKPT"
//! version u32
//! step    u64
//! count   u32
//! count × { name_len u32, name utf-8, rows u64, cols u64, rows·cols × f64 }
//! ```

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use super::{NumericsError, Tensor2};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MLEDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct ParamBlock {
    pub value: Tensor2,
    pub grad: Tensor2,
    pub adam_m: Tensor2,
    pub adam_v: Tensor2,
    /// Frozen blocks keep their value through optimizer steps.
    pub frozen: bool,
}

impl ParamBlock {
    fn new(value: Tensor2) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Tensor2::zeros(r, c),
            adam_m: Tensor2::zeros(r, c),
            adam_v: Tensor2::zeros(r, c),
            frozen: false,
        }
    }
}

/// All trainable parameters in insertion order, each with gradient and Adam moment buffers.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    blocks: IndexMap<String, ParamBlock>,
    step_count: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2) -> Result<(), NumericsError> {
        let name = name.into();
        if self.blocks.contains_key(&name) {
            return Err(NumericsError::DuplicateBlock(name));
        }
        self.blocks.insert(name, ParamBlock::new(value));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.blocks.contains_key(name)
    }

    pub fn block(&self, name: &str) -> Result<&ParamBlock, NumericsError> {
        self.blocks
            .get(name)
            .ok_or_else(|| NumericsError::MissingBlock(name.to_string()))
    }

    pub fn block_mut(&mut self, name: &str) -> Result<&mut ParamBlock, NumericsError> {
        self.blocks
            .get_mut(name)
            .ok_or_else(|| NumericsError::MissingBlock(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor2, NumericsError> {
        Ok(&self.block(name)?.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor2, NumericsError> {
        Ok(&mut self.block_mut(name)?.value)
    }

    /// Scalar value of a `1×1` block.
    pub fn scalar(&self, name: &str) -> Result<f64, NumericsError> {
        let v = self.value(name)?;
        if v.shape() != (1, 1) {
            return Err(NumericsError::Shape(format!("block {name} is not a scalar: {:?}", v.shape())));
        }
        Ok(v.data()[0])
    }

    /// Adds `delta` into the named gradient buffer.
    pub fn accumulate_grad(&mut self, name: &str, delta: &Tensor2) -> Result<(), NumericsError> {
        let block = self.block_mut(name)?;
        block
            .grad
            .add_scaled(delta, 1.0)
            .map_err(|_| NumericsError::Shape(format!("gradient for {name} has shape {:?}, block is {:?}", delta.shape(), block.value.shape())))
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<(), NumericsError> {
        self.block_mut(name)?.frozen = frozen;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for b in self.blocks.values_mut() {
            b.grad.fill(0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.blocks.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamBlock)> {
        self.blocks.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamBlock)> {
        self.blocks.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.blocks.values().map(|b| b.value.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub(crate) fn bump_step(&mut self) {
        self.step_count += 1;
    }

    /// Copies values (not gradients or moments) of every block that `other`
    /// also has with the same shape. Returns how many blocks were copied.
    pub fn copy_values_from(&mut self, other: &ParameterStore) -> usize {
        let mut copied = 0;
        for (name, block) in self.blocks.iter_mut() {
            if let Some(src) = other.blocks.get(name) {
                if src.value.same_shape(&block.value) {
                    block.value = src.value.clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    /// True when every block holds bitwise-identical values.
    pub fn values_bitwise_eq(&self, other: &ParameterStore) -> bool {
        self.blocks.len() == other.blocks.len()
            && self.blocks.iter().zip(other.blocks.iter()).all(|((na, a), (nb, b))| {
                na == nb
                    && a.value.shape() == b.value.shape()
                    && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), NumericsError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&self.step_count.to_le_bytes())?;
        w.write_all(&(self.blocks.len() as u32).to_le_bytes())?;
        for (name, block) in &self.blocks {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&(block.value.rows() as u64).to_le_bytes())?;
            w.write_all(&(block.value.cols() as u64).to_le_bytes())?;
            for v in block.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), NumericsError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Reads a checkpoint into a fresh store. Gradients and moments start at zero.
    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self, NumericsError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NumericsError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(NumericsError::Checkpoint(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let step_count = read_u64(&mut r)?;
        let count = read_u32(&mut r)?;
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| NumericsError::Checkpoint("block name is not utf-8".into()))?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            store.insert(name, Tensor2::from_vec(rows, cols, data)?)?;
        }
        store.step_count = step_count;
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self, NumericsError> {
        let file = std::fs::File::open(path)?;
        Self::read_checkpoint(std::io::BufReader::new(file))
    }

    /// Overwrites values from a checkpointed store, requiring the same block layout.
    pub fn restore_values(&mut self, saved: &ParameterStore) -> Result<(), NumericsError> {
        if saved.len() != self.len() {
            return Err(NumericsError::Checkpoint(format!(
                "checkpoint has {} blocks, model has {}",
                saved.len(),
                self.len()
            )));
        }
        for (name, block) in self.blocks.iter_mut() {
            let src = saved.block(name)?;
            if !src.value.same_shape(&block.value) {
                return Err(NumericsError::Checkpoint(format!(
                    "block {name}: checkpoint shape {:?}, model shape {:?}",
                    src.value.shape(),
                    block.value.shape()
                )));
            }
            block.value = src.value.clone();
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
