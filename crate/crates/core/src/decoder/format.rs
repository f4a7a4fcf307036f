//! PLDW weight files.
//!
//! Little-endian layout:
//!
//! ```text
//! "PLDW"             4 bytes
//! version   u32      = 1
//! layers    u32
//! per layer:
//!   rows    u32
//!   cols    u32
//!   act     u8       0 identity, 1 tanh, 2 gelu, 3 elu
//!   pad     [u8; 3]  zero
//!   weights f64 × rows·cols, row-major
//!   biases  f64 × rows
//! ```
//!
//! Nothing may follow the last layer.

use std::io::{Read, Write};

use super::{Activation, DecoderError, DecoderNet, Layer};
use crate::manifold::{Matrix, Vector};

pub const PLDW_MAGIC: [u8; 4] = *b"PLDW";
pub const PLDW_VERSION: u32 = 1;

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecoderError> {
        let end = self.offset.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.offset..end];
                self.offset = end;
                Ok(s)
            }
            None => Err(DecoderError::Truncated {
                offset: self.offset,
                needed: n.saturating_sub(self.bytes.len() - self.offset),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32, DecoderError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, DecoderError> {
        let len = n.checked_mul(8).ok_or(DecoderError::Truncated {
            offset: self.offset,
            needed: usize::MAX,
        })?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parses a PLDW byte stream into a validated decoder.
pub fn load_weights(bytes: &[u8]) -> Result<DecoderNet, DecoderError> {
    let mut cur = Cursor { bytes, offset: 0 };
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != PLDW_MAGIC {
        return Err(DecoderError::BadMagic(magic));
    }
    let version = cur.u32()?;
    if version != PLDW_VERSION {
        return Err(DecoderError::UnsupportedVersion(version));
    }
    let count = cur.u32()? as usize;
    if count == 0 {
        return Err(DecoderError::Empty);
    }
    let mut layers = Vec::with_capacity(count.min(1024));
    for l in 0..count {
        let rows = cur.u32()? as usize;
        let cols = cur.u32()? as usize;
        let head = cur.take(4)?;
        let activation = Activation::from_code(head[0])?;
        if head[1..] != [0, 0, 0] {
            return Err(DecoderError::BadPadding { layer: l });
        }
        if rows == 0 || cols == 0 {
            return Err(DecoderError::EmptyLayer { layer: l });
        }
        let w = cur.f64s(rows.checked_mul(cols).ok_or(DecoderError::EmptyLayer { layer: l })?)?;
        let b = cur.f64s(rows)?;
        layers.push(Layer::new(
            Matrix::from_row_slice(rows, cols, &w),
            Vector::from_vec(b),
            activation,
        ));
    }
    let rest = bytes.len() - cur.offset;
    if rest > 0 {
        return Err(DecoderError::TrailingBytes(rest));
    }
    DecoderNet::new(layers)
}

/// Serialises a decoder; `load_weights(&save_weights(net)) == net`.
pub fn save_weights(net: &DecoderNet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&PLDW_MAGIC);
    out.extend_from_slice(&PLDW_VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        out.extend_from_slice(&(layer.outputs() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.inputs() as u32).to_le_bytes());
        out.extend_from_slice(&[layer.activation.code(), 0, 0, 0]);
        for r in 0..layer.outputs() {
            for c in 0..layer.inputs() {
                out.extend_from_slice(&layer.weights[(r, c)].to_le_bytes());
            }
        }
        for b in layer.bias.iter() {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    out
}

impl DecoderNet {
    pub fn read_from<R: Read>(mut reader: R) -> Result<Self, DecoderError> {
        let mut bytes = Vec::new();
        reader
            .read_to_end(&mut bytes)
            .map_err(|e| DecoderError::Io(e.to_string()))?;
        load_weights(&bytes)
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> Result<(), DecoderError> {
        writer
            .write_all(&save_weights(self))
            .map_err(|e| DecoderError::Io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::Immersion;

    fn identity_bytes() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"PLDW");
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&2u32.to_le_bytes());
        b.extend_from_slice(&2u32.to_le_bytes());
        b.extend_from_slice(&[0, 0, 0, 0]);
        for w in [1.0f64, 0.0, 0.0, 1.0, 0.0, 0.0] {
            b.extend_from_slice(&w.to_le_bytes());
        }
        b
    }

    #[test]
    fn loads_hand_written_identity() {
        let net = load_weights(&identity_bytes()).unwrap();
        assert_eq!(net.forward(&[0.25, -4.0]).unwrap().as_slice(), &[0.25, -4.0]);
        assert_eq!(save_weights(&net), identity_bytes());
    }

    #[test]
    fn rejects_corrupt_streams() {
        let mut bad = identity_bytes();
        bad[0] = b'X';
        assert_eq!(load_weights(&bad), Err(DecoderError::BadMagic(*b"XLDW")));

        let good = identity_bytes();
        assert!(matches!(
            load_weights(&good[..good.len() - 3]),
            Err(DecoderError::Truncated { .. })
        ));

        let mut trailing = identity_bytes();
        trailing.push(0);
        assert_eq!(load_weights(&trailing), Err(DecoderError::TrailingBytes(1)));

        let mut relu = identity_bytes();
        relu[20] = 4;
        assert_eq!(load_weights(&relu), Err(DecoderError::UnknownActivation(4)));

        let mut pad = identity_bytes();
        pad[21] = 1;
        assert_eq!(load_weights(&pad), Err(DecoderError::BadPadding { layer: 0 }));

        let mut version = identity_bytes();
        version[4] = 2;
        assert_eq!(load_weights(&version), Err(DecoderError::UnsupportedVersion(2)));
    }

    #[test]
    fn rejects_broken_dimension_chain() {
        let mut b = Vec::new();
        b.extend_from_slice(b"PLDW");
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&2u32.to_le_bytes());
        for (rows, cols) in [(3u32, 2u32), (2, 4)] {
            b.extend_from_slice(&rows.to_le_bytes());
            b.extend_from_slice(&cols.to_le_bytes());
            b.extend_from_slice(&[1, 0, 0, 0]);
            for _ in 0..(rows * cols + rows) {
                b.extend_from_slice(&0.5f64.to_le_bytes());
            }
        }
        assert!(matches!(
            load_weights(&b),
            Err(DecoderError::DimensionChain { layer: 1, .. })
        ));
    }
}
