//! `STNS` tensor files.
//!
//! Layout: the magic bytes `STNS`, a version byte (`1`), a rank byte,
//! `rank` little-endian `u32` dimensions, then the row-major payload as
//! little-endian `f32`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"STNS";
pub const VERSION: u8 = 1;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(6 + 4 * t.ndim() + 4 * t.len());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(u8::try_from(t.ndim()).expect("rank fits in a byte"));
    for &d in t.shape() {
        buf.extend_from_slice(&u32::try_from(d).expect("dimension fits in u32").to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err("missing STNS magic".into());
    }
    if bytes[4] != VERSION {
        return Err(format!("unsupported STNS version {}", bytes[4]));
    }
    let ndim = bytes[5] as usize;
    if ndim == 0 {
        return Err("rank 0 tensors are not representable".into());
    }
    let header = 6 + 4 * ndim;
    if bytes.len() < header {
        return Err("truncated STNS header".into());
    }
    let shape: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let numel: usize = shape.iter().product();
    let payload = &bytes[header..];
    if payload.len() != 4 * numel {
        return Err(format!(
            "payload holds {} bytes, shape {shape:?} needs {}",
            payload.len(),
            4 * numel
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::new(&shape, data).map_err(|e| e.to_string())
}

pub fn write(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|msg| Error::format(path, 0, msg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::new(&[2, 1], vec![1.0, -2.5]).unwrap();
        let bytes = encode(&t);
        let mut expected = b"STNS".to_vec();
        expected.extend_from_slice(&[1, 2, 2, 0, 0, 0, 1, 0, 0, 0]);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(decode(b"NOPE\x01\x01\x01\x00\x00\x00").is_err());
        let mut bytes = encode(&Tensor::ones(&[3]));
        bytes.pop();
        assert!(decode(&bytes).is_err());
        bytes = encode(&Tensor::ones(&[3]));
        bytes[4] = 2;
        assert!(decode(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_exact_for_f32_values(
            dims in proptest::collection::vec(1usize..5, 1..4),
            seed in any::<u32>(),
        ) {
            let n: usize = dims.iter().product();
            let t = Tensor::from_fn(&dims, |i| {
                ((i as f32 + seed as f32 * 0.37).sin() * 100.0) as f64
            });
            prop_assert_eq!(decode(&encode(&t)).unwrap(), t);
            prop_assert_eq!(encode(&Tensor::zeros(&dims)).len(), 6 + 4 * dims.len() + 4 * n);
        }
    }
}
