//! Named-tensor parameter files.
//!
//! Layout: magic `D2DNN\0\x01\0`, then until end of file a sequence of
//! `{u16 name length, utf-8 name, u8 rank, u32 dims..., f64 data}` records,
//! all little-endian, data row-major.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

pub const PARAM_MAGIC: [u8; 8] = *b"D2DNN\x00\x01\x00";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn vector(name: String, v: &Array1<f64>) -> Self {
        NamedTensor { name, dims: vec![v.len()], data: v.to_vec() }
    }

    pub fn matrix(name: String, m: &Array2<f64>) -> Self {
        NamedTensor { name, dims: vec![m.nrows(), m.ncols()], data: m.iter().copied().collect() }
    }
}

/// Anything with trainable tensors and a serializable state.
pub trait Parameters {
    /// Trainable tensors, in a fixed order shared with the gradient twin.
    fn trainable(&self) -> Vec<&[f64]>;

    fn trainable_mut(&mut self) -> Vec<&mut [f64]>;

    /// Every tensor, running statistics included.
    fn export(&self, prefix: &str, out: &mut Vec<NamedTensor>);

    fn import(&mut self, prefix: &str, tensors: &TensorMap) -> Result<()>;

    fn n_trainable(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }
}

/// Tensors keyed by name, as read from a parameter file.
#[derive(Debug, Clone, Default)]
pub struct TensorMap(pub BTreeMap<String, NamedTensor>);

impl TensorMap {
    fn get(&self, name: &str, dims: &[usize]) -> Result<&NamedTensor> {
        let t = self.0.get(name).ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
        if t.dims != dims {
            return Err(Error::ShapeMismatch(format!("tensor {name} is {:?}, expected {dims:?}", t.dims)));
        }
        Ok(t)
    }

    pub fn load_vector(&self, name: &str, into: &mut Array1<f64>) -> Result<()> {
        let t = self.get(name, &[into.len()])?;
        into.as_slice_mut().unwrap().copy_from_slice(&t.data);
        Ok(())
    }

    pub fn load_matrix(&self, name: &str, into: &mut Array2<f64>) -> Result<()> {
        let t = self.get(name, &[into.nrows(), into.ncols()])?;
        into.as_slice_mut().unwrap().copy_from_slice(&t.data);
        Ok(())
    }
}

pub fn encode_tensors(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut out = PARAM_MAGIC.to_vec();
    for t in tensors {
        let name = t.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name too long: {}", t.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(u8::try_from(t.dims.len()).map_err(|_| Error::Format("tensor rank exceeds 255".into()))?);
        for d in &t.dims {
            let d = u32::try_from(*d).map_err(|_| Error::Format("tensor dim exceeds u32".into()))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        if t.dims.iter().product::<usize>() != t.data.len() {
            return Err(Error::ShapeMismatch(format!("tensor {} data does not match dims", t.name)));
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    if bytes.len() < 8 || bytes[..8] != PARAM_MAGIC {
        return Err(Error::Format("bad parameter file magic".into()));
    }
    let mut pos = 8;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos + n;
        if end > bytes.len() {
            return Err(Error::Format("truncated parameter file".into()));
        }
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    let mut out = Vec::new();
    loop {
        let head = match take(2) {
            Ok(h) => h,
            Err(_) => break,
        };
        let len = u16::from_le_bytes([head[0], head[1]]) as usize;
        let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| Error::Format("tensor name is not utf-8".into()))?;
        let rank = take(1)?[0] as usize;
        let dims = (0..rank)
            .map(|_| take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let data = take(count * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push(NamedTensor { name, dims, data });
    }
    if pos != bytes.len() {
        return Err(Error::Format("trailing bytes in parameter file".into()));
    }
    Ok(out)
}

pub fn tensor_map(tensors: Vec<NamedTensor>) -> TensorMap {
    TensorMap(tensors.into_iter().map(|t| (t.name.clone(), t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_truncation() {
        let ts = vec![
            NamedTensor { name: "a.weight".into(), dims: vec![2, 3], data: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0] },
            NamedTensor { name: "a.bias".into(), dims: vec![2], data: vec![-0.5, 0.25] },
            NamedTensor { name: "scalar".into(), dims: vec![], data: vec![7.0] },
        ];
        let bytes = encode_tensors(&ts).unwrap();
        assert_eq!(&bytes[..8], b"D2DNN\x00\x01\x00");
        assert_eq!(decode_tensors(&bytes).unwrap(), ts);
        assert!(decode_tensors(&bytes[..bytes.len() - 3]).is_err());
        let bad = NamedTensor { name: "x".into(), dims: vec![3], data: vec![1.0] };
        assert!(encode_tensors(&[bad]).is_err());
    }
}
