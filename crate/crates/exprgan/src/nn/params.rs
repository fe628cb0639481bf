//! Named, ordered parameter collections and their on-disk format.
//!
//! The serialized form is the checkpoint contract: a `u32` entry count, then
//! per entry the UTF-8 name, a trainable flag, the shape header, and the
//! data as little-endian 32-bit floats. Entry order is part of the format.

use std::collections::HashMap;
use std::io::{Read, Write};

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Scalar, VarId};

pub struct Param<T> {
    pub name: String,
    pub value: ArrayD<T>,
    pub grad: ArrayD<T>,
    pub trainable: bool,
}

/// Ordered set of named parameter tensors with accumulated gradients.
pub struct ParamSet<T> {
    entries: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: &str, value: ArrayD<T>) -> Result<()> {
        self.add_with(name, value, true)
    }

    /// Adds a non-trainable tensor; excluded from optimizer updates and
    /// gradient-check reports.
    pub fn add_frozen(&mut self, name: &str, value: ArrayD<T>) -> Result<()> {
        self.add_with(name, value, false)
    }

    fn add_with(&mut self, name: &str, value: ArrayD<T>, trainable: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let grad = ArrayD::zeros(value.raw_dim());
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Param { name: name.to_string(), value, grad, trainable });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar elements across all entries.
    pub fn element_count(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.entries.iter_mut()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<T>> {
        Ok(&self.entries[self.index_of(name)?].value)
    }

    pub fn entry(&self, i: usize) -> &Param<T> {
        &self.entries[i]
    }

    pub fn entry_mut(&mut self, i: usize) -> &mut Param<T> {
        &mut self.entries[i]
    }

    /// Registers every entry as a graph leaf, in order, and returns the ids.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<VarId> {
        self.entries.iter().map(|p| g.input(p.value.clone())).collect()
    }

    /// Adds the graph's gradients for `ids` onto the stored gradients.
    pub fn absorb_grads(&mut self, g: &Graph<T>, ids: &[VarId]) {
        assert_eq!(ids.len(), self.entries.len());
        for (p, &id) in self.entries.iter_mut().zip(ids) {
            p.grad += g.grad(id);
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.fill(T::zero());
        }
    }

    pub fn grads_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|p| p.grad.iter().all(|v| v.is_finite()))
    }

    /// Fills trainable weights from N(0, std) and leaves biases (names
    /// ending in `.b`) at zero, matching the usual GAN initialization scale.
    pub fn init_normal(&mut self, std: f64, rng: &mut ChaCha12Rng) {
        for p in &mut self.entries {
            if !p.trainable || p.name.ends_with(".b") {
                continue;
            }
            for v in p.value.iter_mut() {
                // Box-Muller keeps us independent of rand_distr.
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                *v = T::from_f64(z * std);
            }
        }
    }

    /// Byte-exact serialization (little-endian f32 payload).
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for p in &self.entries {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[u8::from(p.trainable)])?;
            let shape = p.value.shape();
            w.write_all(&[shape.len() as u8])?;
            for &d in shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in p.value.iter() {
                w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let count = read_u32(r)? as usize;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let name_len = read_u16(r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Checkpoint("non-UTF-8 parameter name".into()))?;
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag)?;
            let mut ndim = [0u8; 1];
            r.read_exact(&mut ndim)?;
            let mut shape = Vec::with_capacity(ndim[0] as usize);
            for _ in 0..ndim[0] {
                shape.push(read_u32(r)? as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let mut buf = [0u8; 4];
                r.read_exact(&mut buf)?;
                data.push(T::from_f64(f32::from_le_bytes(buf) as f64));
            }
            let value = ArrayD::from_shape_vec(IxDyn(&shape), data)
                .map_err(|e| Error::Checkpoint(format!("bad shape for {name:?}: {e}")))?;
            set.add_with(&name, value, flag[0] != 0)?;
        }
        Ok(set)
    }

    /// True when both sets hold identical names, shapes, flags, and bytes.
    pub fn bit_identical(&self, other: &Self) -> bool {
        let mut a = Vec::new();
        let mut b = Vec::new();
        if self.write_to(&mut a).is_err() || other.write_to(&mut b).is_err() {
            return false;
        }
        a == b
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut set = ParamSet::<f32>::new();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        set.add("a.w", Array2::<f32>::zeros((3, 4)).into_dyn()).unwrap();
        set.add_frozen("a.mask", Array2::<f32>::ones((2, 2)).into_dyn()).unwrap();
        set.init_normal(0.02, &mut rng);
        let mut buf = Vec::new();
        set.write_to(&mut buf).unwrap();
        let back = ParamSet::<f32>::read_from(&mut buf.as_slice()).unwrap();
        assert!(set.bit_identical(&back));
        assert!(!back.entry(1).trainable);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut set = ParamSet::<f32>::new();
        set.add("w", Array2::<f32>::zeros((1, 1)).into_dyn()).unwrap();
        assert!(set.add("w", Array2::<f32>::zeros((1, 1)).into_dyn()).is_err());
    }
}
