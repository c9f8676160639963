//! Flat binary network format.
//!
//! ```text
//! magic      8 bytes  "ELUNET01"
//! layers     u32
//! per layer  u32 fan_in, u32 fan_out, u32 tag length, tag bytes (UTF-8)
//! weights    f64 per entry, layer by layer, row-major
//! biases     f64 per entry, layer by layer
//! ```
//!
//! All integers and floats are little-endian. Tags are the activation
//! strings accepted on the command line plus `linear` and `softmax`; the
//! loss is implied by the output layer's tag.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::linalg::{Matrix, Vector};
use crate::network::{Layer, LayerActivation, Loss, Network};

pub const MAGIC: &[u8; 8] = b"ELUNET01";

pub fn encode(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    for layer in &net.layers {
        let tag = layer.activation.to_string();
        out.extend_from_slice(&(layer.fan_in() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.fan_out() as u32).to_le_bytes());
        out.extend_from_slice(&(tag.len() as u32).to_le_bytes());
        out.extend_from_slice(tag.as_bytes());
    }
    for layer in &net.layers {
        for v in layer.weights.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for layer in &net.layers {
        for v in layer.bias.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                needed: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Network> {
    let format = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(format("missing ELUNET01 magic".into()));
    }
    let count = r.u32()?;
    if count == 0 {
        return Err(format("zero layers".into()));
    }
    let mut headers = Vec::with_capacity(count);
    for _ in 0..count {
        let fan_in = r.u32()?;
        let fan_out = r.u32()?;
        let tag_len = r.u32()?;
        let tag = std::str::from_utf8(r.take(tag_len)?).map_err(|_| format("tag is not UTF-8".into()))?;
        let activation: LayerActivation = tag.parse().map_err(|e: Error| format(e.to_string()))?;
        headers.push((fan_in, fan_out, activation));
    }
    let mut weights = Vec::with_capacity(count);
    for &(fan_in, fan_out, _) in &headers {
        weights.push(Matrix::new(fan_out, fan_in, r.f64s(fan_in * fan_out)?)?);
    }
    let mut layers = Vec::with_capacity(count);
    for ((_, fan_out, activation), w) in headers.into_iter().zip(weights) {
        let bias = Vector::new(r.f64s(fan_out)?)?;
        layers.push(Layer::new(w, bias, activation)?);
    }
    if r.pos != bytes.len() {
        return Err(format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let loss = match layers.last().unwrap().activation {
        LayerActivation::Softmax => Loss::SoftmaxCrossEntropy,
        LayerActivation::Linear => Loss::MeanSquaredError,
        other => return Err(format(format!("output layer tag `{other}` names no loss"))),
    };
    Network::new(layers, loss)
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    write_atomic(path, &encode(net))
}

pub fn load(path: &Path) -> Result<Network> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
