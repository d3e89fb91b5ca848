//! `.ten` tensor files: `"ARMT"`, version byte (1), rank byte, rank × u32 LE extents,
//! then the `f32` LE payload. Used for golden files and checkpoints.

use std::fs;
use std::path::Path;

use crate::error::{ArmError, Result};
use crate::tensor::{Tensor, MAX_RANK};

pub const MAGIC: &[u8; 4] = b"ARMT";
pub const VERSION: u8 = 1;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 4 * t.rank() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err("missing ARMT magic".into());
    }
    if bytes[4] != VERSION {
        return Err(format!("unsupported version {}", bytes[4]));
    }
    let rank = bytes[5] as usize;
    if rank > MAX_RANK {
        return Err(format!("rank {rank} exceeds {MAX_RANK}"));
    }
    let header = 6 + 4 * rank;
    if bytes.len() < header {
        return Err("truncated header".into());
    }
    let shape: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let numel: usize = shape.iter().product();
    let payload = &bytes[header..];
    if payload.len() != 4 * numel {
        return Err(format!(
            "payload is {} bytes, shape {shape:?} needs {}",
            payload.len(),
            4 * numel
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(&shape, data).map_err(|e| e.to_string())
}

pub fn save(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| ArmError::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| ArmError::io(path, e))?;
    decode(&bytes).map_err(|msg| ArmError::format(path, msg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let t = Tensor::new(&[2, 1], vec![1.0, -2.5]).unwrap();
        let bytes = encode(&t);
        assert_eq!(
            bytes,
            [
                b'A', b'R', b'M', b'T', 1, 2, 2, 0, 0, 0, 1, 0, 0, 0, 0x00, 0x00, 0x80, 0x3f,
                0x00, 0x00, 0x20, 0xc0
            ]
        );
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode(b"XRMT\x01\x00\0\0\0\0").is_err());
        let mut bytes = encode(&Tensor::ones(&[3]));
        bytes.pop();
        assert!(decode(&bytes).is_err());
        bytes[4] = 2;
        assert!(decode(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn round_trips(shape in prop::collection::vec(1usize..5, 0..=4), seed in any::<u32>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n).map(|i| ((i as u32).wrapping_mul(seed) as f32).sin()).collect();
            let t = Tensor::new(&shape, data).unwrap();
            prop_assert_eq!(decode(&encode(&t)).unwrap(), t);
        }
    }
}
