//! Binary checkpoint format.
//!
//! Little-endian: magic `P2SC`, format version `u32`, tensor count `u32`, then
//! per tensor a `u16` name length, the UTF-8 name, a dtype tag `u8`
//! (0 = f32, 1 = f64), `ndim` as `u8`, each dim as `u64`, and the raw data.
//! Optimizer state follows the model tensors as `adam.m.<name>`,
//! `adam.v.<name>` and the scalar `adam.step`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"P2SC";
pub const VERSION: u32 = 1;

/// Ordered named tensors, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_model(params: &ParamStore<T>, adam: Option<&AdamState<T>>) -> Self {
        let mut tensors: Vec<(String, Tensor<T>)> = params
            .entries()
            .iter()
            .map(|e| (e.name.clone(), e.value.clone()))
            .collect();
        if let Some(st) = adam {
            let names = params.trainable_names();
            for (n, m) in names.iter().zip(&st.m) {
                tensors.push((format!("adam.m.{n}"), m.clone()));
            }
            for (n, v) in names.iter().zip(&st.v) {
                tensors.push((format!("adam.v.{n}"), v.clone()));
            }
            tensors.push(("adam.step".into(), Tensor::scalar(T::cast(st.step as f64))));
        }
        Checkpoint { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Restores optimizer moments for `params` if the checkpoint carries them.
    pub fn adam_state(&self, params: &ParamStore<T>, lr: f64) -> Result<Option<AdamState<T>>> {
        let Some(step) = self.get("adam.step") else {
            return Ok(None);
        };
        let mut st = AdamState::new(
            params
                .entries()
                .iter()
                .filter(|e| e.trainable)
                .map(|e| e.value.shape()),
            lr,
        );
        st.step = step.data()[0].as_f64() as u64;
        for (i, n) in params.trainable_names().iter().enumerate() {
            for (prefix, slot) in [("adam.m.", &mut st.m[i]), ("adam.v.", &mut st.v[i])] {
                let t = self
                    .get(&format!("{prefix}{n}"))
                    .ok_or_else(|| Error::Checkpoint(format!("missing {prefix}{n}")))?;
                if t.shape() != slot.shape() {
                    return Err(Error::Checkpoint(format!("shape mismatch for {prefix}{n}")));
                }
                *slot = t.clone();
            }
        }
        Ok(Some(st))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            let len = u16::try_from(nb.len())
                .map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(nb);
            out.push(T::DTYPE as u8);
            let ndim = u8::try_from(t.ndim())
                .map_err(|_| Error::Checkpoint(format!("too many dims: {name}")))?;
            out.push(ndim);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match T::DTYPE {
                DType::F32 => {
                    for &v in t.data() {
                        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
                    }
                }
                DType::F64 => {
                    for &v in t.data() {
                        out.extend_from_slice(&v.as_f64().to_le_bytes());
                    }
                }
            }
        }
        Ok(out)
    }

    /// Parses a checkpoint of either dtype, converting to `T`.
    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let r = &mut bytes;
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(read_array(r)?);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(read_array(r)?) as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = u16::from_le_bytes(read_array(r)?) as usize;
            let mut nb = vec![0u8; len];
            read_exact(r, &mut nb)?;
            let name = String::from_utf8(nb).map_err(|_| Error::Checkpoint("non-UTF-8 name".into()))?;
            let [tag] = read_array::<1>(r)?;
            let dtype = DType::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("dtype tag {tag}")))?;
            let [ndim] = read_array::<1>(r)?;
            let mut shape = Vec::with_capacity(ndim as usize);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(read_array(r)?) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let v = match dtype {
                    DType::F32 => f32::from_le_bytes(read_array(r)?) as f64,
                    DType::F64 => f64::from_le_bytes(read_array(r)?),
                };
                data.push(T::cast(v));
            }
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            tensors.push((name, t));
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("truncated checkpoint".into()))
}

fn read_array<const N: usize>(r: &mut &[u8]) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let ck = Checkpoint {
            tensors: vec![("w".to_string(), Tensor::new(vec![2], vec![1.5f32, -2.0]).unwrap())],
        };
        let b = ck.to_bytes().unwrap();
        assert_eq!(&b[0..4], b"P2SC");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u16::from_le_bytes(b[12..14].try_into().unwrap()), 1);
        assert_eq!(b[14], b'w');
        assert_eq!(b[15], 0); // f32
        assert_eq!(b[16], 1); // ndim
        assert_eq!(u64::from_le_bytes(b[17..25].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(b[25..29].try_into().unwrap()), 1.5);
        assert_eq!(b.len(), 33);
        assert_eq!(Checkpoint::<f32>::from_bytes(&b).unwrap(), ck);
    }

    #[test]
    fn rejects_corruption() {
        let ck = Checkpoint {
            tensors: vec![("a".to_string(), Tensor::scalar(1.0f64))],
        };
        let mut b = ck.to_bytes().unwrap();
        assert!(Checkpoint::<f64>::from_bytes(&b[..b.len() - 1]).is_err());
        b[0] = b'X';
        assert!(Checkpoint::<f64>::from_bytes(&b).is_err());
    }

    #[test]
    fn adam_state_round_trip() {
        let mut ps = ParamStore::<f32>::new();
        ps.add("a", Tensor::from_vec(vec![1.0, 2.0]), true);
        ps.add("stat", Tensor::from_vec(vec![0.0]), false);
        let mut st = AdamState::<f32>::new([ps.get(ps.id("a").unwrap()).shape()], 1e-3);
        st.step = 7;
        st.m[0] = Tensor::from_vec(vec![0.1, 0.2]);
        st.v[0] = Tensor::from_vec(vec![0.3, 0.4]);
        let ck = Checkpoint::from_model(&ps, Some(&st));
        let back = Checkpoint::<f32>::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        let st2 = back.adam_state(&ps, 1e-3).unwrap().unwrap();
        assert_eq!(st2.step, 7);
        assert_eq!(st2.m[0], st.m[0]);
        assert_eq!(st2.v[0], st.v[0]);
        assert!(back.get("adam.m.stat").is_none());
    }
}
