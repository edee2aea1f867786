//! Flat binary weight files (`CAMFIX1`).
//!
//! All integers are little-endian `u32` unless noted, floats are
//! little-endian `f64`.
//!
//! ```text
//! magic           7 bytes  "CAMFIX1"
//! layer_count     u32
//! input_c/h/w     3 × u32
//! per layer:
//!   kind          u32      0 conv, 1 relu, 2 maxpool, 3 gap, 4 dense, 5 softmax
//!   hyper_a       u32      conv: stride   maxpool: size     other: 0
//!   hyper_b       u32      conv: padding  maxpool: stride   other: 0
//!   rank          u32      conv: 4, dense: 2, other: 0
//!   dims          rank × u32   conv: [c_out, c_in, k, k]; dense: [n_out, n_in]
//!   name_len      u32
//!   name          name_len bytes, UTF-8
//! value_count     u64
//! values          value_count × f64, per parameterised layer in order:
//!                 weights (row-major), then bias (length dims[0])
//! ```

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::model::{Layer, Sequential};
use super::ops::{Conv2d, Dense, OpNode};
use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub const MAGIC: &[u8; 7] = b"CAMFIX1";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn to_bytes(model: &Sequential) -> Vec<u8> {
    let mut out = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, model.layers().len());
    let [_, c, h, w] = model.input_shape();
    for v in [c, h, w] {
        put_u32(&mut out, v);
    }
    for layer in model.layers() {
        let (kind, a, b, dims): (usize, usize, usize, Vec<usize>) = match &layer.op {
            OpNode::Conv(conv) => {
                values.extend_from_slice(conv.weight.data());
                values.extend_from_slice(&conv.bias);
                (0, conv.stride, conv.padding, conv.weight.shape().to_vec())
            }
            OpNode::Relu => (1, 0, 0, vec![]),
            OpNode::MaxPool { size, stride } => (2, *size, *stride, vec![]),
            OpNode::Gap => (3, 0, 0, vec![]),
            OpNode::Dense(d) => {
                values.extend_from_slice(&d.weight);
                values.extend_from_slice(&d.bias);
                (4, 0, 0, vec![d.n_out, d.n_in])
            }
            OpNode::Softmax => (5, 0, 0, vec![]),
        };
        for v in [kind, a, b, dims.len()] {
            put_u32(&mut out, v);
        }
        for d in dims {
            put_u32(&mut out, d);
        }
        put_u32(&mut out, layer.name.len());
        out.extend_from_slice(layer.name.as_bytes());
    }
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(alloc::format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("value count overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Sequential> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("bad magic, expected CAMFIX1".into()));
    }
    let count = r.u32()?;
    let (c, h, w) = (r.u32()?, r.u32()?, r.u32()?);
    let mut headers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let (kind, a, b, rank) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        if rank > 4 {
            return Err(Error::Format(alloc::format!("parameter rank {rank} unsupported")));
        }
        let dims: Vec<usize> = (0..rank).map(|_| r.u32()).collect::<Result<_>>()?;
        let name_len = r.u32()?;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("layer name is not UTF-8".into()))?;
        headers.push((kind, a, b, dims, name));
    }
    let total = r.u64()? as usize;
    let values = r.f64s(total)?;
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after parameter block".into()));
    }
    let mut cursor = 0usize;
    let mut next = |n: usize| -> Result<Vec<f64>> {
        let s = values
            .get(cursor..cursor + n)
            .ok_or_else(|| Error::Format("parameter block shorter than declared shapes".into()))?;
        cursor += n;
        Ok(s.to_vec())
    };
    let mut layers = Vec::with_capacity(headers.len());
    for (kind, a, b, dims, name) in headers {
        let op = match (kind, dims.as_slice()) {
            (0, &[co, ci, k1, k2]) => {
                let weight = Tensor4::from_vec([co, ci, k1, k2], next(co * ci * k1 * k2)?)?;
                OpNode::Conv(Conv2d { weight, bias: next(co)?, stride: a, padding: b })
            }
            (1, []) => OpNode::Relu,
            (2, []) => OpNode::MaxPool { size: a, stride: b },
            (3, []) => OpNode::Gap,
            (4, &[n_out, n_in]) => {
                let weight = next(n_out * n_in)?;
                OpNode::Dense(Dense { n_in, n_out, weight, bias: next(n_out)? })
            }
            (5, []) => OpNode::Softmax,
            _ => return Err(Error::Format(alloc::format!("layer {name}: kind {kind} with shape {dims:?}"))),
        };
        layers.push(Layer { name, op });
    }
    drop(next);
    if cursor != values.len() {
        return Err(Error::Format("parameter block longer than declared shapes".into()));
    }
    Sequential::new([1, c, h, w], layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::fixture_architecture;

    #[test]
    fn round_trip_preserves_model() {
        let model = fixture_architecture(3);
        let bytes = to_bytes(&model);
        assert_eq!(&bytes[..7], b"CAMFIX1");
        assert_eq!(from_bytes(&bytes).unwrap(), model);
        // conv1 40 + conv2 296 + dense 18
        assert_eq!(u64::from_le_bytes(bytes[bytes.len() - 8 * 354 - 8..bytes.len() - 8 * 354].try_into().unwrap()), 354);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = to_bytes(&fixture_architecture(3));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(from_bytes(&longer).is_err());
    }
}
