//! Binary weight checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DPNET1"                     magic, 6 bytes
//! u32 n                        number of layer widths
//! u32 × n                      widths
//! u8                           hidden activation tag (1 = ReLU)
//! u8                           head tag (0 = linear, 1 = 2-class logits)
//! u32 len, len bytes           JSON metadata (may be "{}")
//! f64 × param_count            weights then bias, layer by layer
//! ```

use std::io::{Read, Write};

use super::mlp::{Activation, Head, Mlp};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 6] = b"DPNET1";

pub fn write_checkpoint<T: Scalar, W: Write>(mut w: W, net: &Mlp<T>, meta: &serde_json::Value) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(net.widths().len() as u32).to_le_bytes())?;
    for &width in net.widths() {
        w.write_all(&(width as u32).to_le_bytes())?;
    }
    w.write_all(&[net.activation().tag(), net.head().tag()])?;
    let meta = serde_json::to_vec(meta)?;
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(&meta)?;
    for p in net.params() {
        for v in p.data() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<(Mlp<T>, serde_json::Value)> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(|_| Error::Checkpoint("missing magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {:?}", String::from_utf8_lossy(&magic))));
    }
    let n = read_u32(&mut r)? as usize;
    if !(2..=64).contains(&n) {
        return Err(Error::Checkpoint(format!("implausible layer count {n}")));
    }
    let widths = (0..n).map(|_| read_u32(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let mut tags = [0u8; 2];
    r.read_exact(&mut tags).map_err(|_| Error::Checkpoint("truncated tags".into()))?;
    let activation = Activation::from_tag(tags[0]).ok_or_else(|| Error::Checkpoint("unknown activation".into()))?;
    let head = Head::from_tag(tags[1]).ok_or_else(|| Error::Checkpoint("unknown head".into()))?;
    let meta_len = read_u32(&mut r)? as usize;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta).map_err(|_| Error::Checkpoint("truncated metadata".into()))?;
    let meta: serde_json::Value = serde_json::from_slice(&meta)?;

    let mut params = Vec::new();
    for win in widths.windows(2) {
        for shape in [vec![win[0], win[1]], vec![win[1]]] {
            let len: usize = shape.iter().product();
            let mut buf = vec![0u8; 8 * len];
            r.read_exact(&mut buf).map_err(|_| Error::Checkpoint("truncated parameters".into()))?;
            let data = buf
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            params.push(Tensor::new(shape, data)?);
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok((Mlp::from_parts(widths, params, activation, head)?, meta))
}
