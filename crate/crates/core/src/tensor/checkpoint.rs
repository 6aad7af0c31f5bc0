//! Binary checkpoint serialization.
//!
//! Layout (all integers little-endian):
//!   magic   8 bytes  "PVTC19D1"
//!   count   u32      number of named tensors
//!   entry*  count times:
//!     name_len u32, name (UTF-8), rank u32, extents rank x u32,
//!     payload numel x f32 (LE bit patterns)
//!
//! Saving the same parameters twice yields byte-identical files; loading
//! restores exact f32 bit patterns.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub fn save(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(b"PVTC19D1");
    let count = u32::try_from(entries.len())
        .map_err(|_| Error::Format("checkpoint holds too many tensors".into()))?;
    buf.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        let name_len = u32::try_from(name_bytes.len())
            .map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name_bytes);
        let shape = tensor.shape();
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &extent in shape {
            let extent = u32::try_from(extent)
                .map_err(|_| Error::Format(format!("extent too large in {name}")))?;
            buf.extend_from_slice(&extent.to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let magic = r.take(8)?;
    if magic != b"PVTC19D1" {
        return Err(Error::Format(format!(
            "not a checkpoint: bad magic {:02x?}",
            &magic
        )));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::Format(format!(
                "implausible tensor rank {rank} for {name}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let extent = r.u32()? as usize;
            if extent == 0 {
                return Err(Error::Format(format!("zero extent in {name}")));
            }
            numel = numel
                .checked_mul(extent)
                .ok_or_else(|| Error::Format(format!("extent overflow in {name}")))?;
            shape.push(extent);
        }
        let raw = r.take(numel * 4)?;
        let mut data = Vec::with_capacity(numel);
        for chunk in raw.chunks_exact(4) {
            data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        entries.push((name, Tensor::raw(shape, data, false)));
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} trailing bytes",
            buf.len() - r.pos
        )));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor)> {
        vec![
            (
                "block.weight".into(),
                Tensor::from_vec(&[2, 3], vec![1.0, -2.5, 0.0, f32::MIN_POSITIVE, 3e7, -0.0])
                    .unwrap(),
            ),
            (
                "block.bias".into(),
                Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap(),
            ),
        ]
    }

    #[test]
    fn roundtrip_preserves_bits_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let entries = sample();
        save(&path, &entries).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.len(), entries.len());
        for ((n0, t0), (n1, t1)) in entries.iter().zip(&loaded) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            for (a, b) in t0.data().iter().zip(t1.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn double_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (p0, p1) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        save(&p0, &sample()).unwrap();
        save(&p1, &sample()).unwrap();
        assert_eq!(std::fs::read(&p0).unwrap(), std::fs::read(&p1).unwrap());
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTMAGIC\x00\x00\x00\x00").unwrap();
        match load(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("magic")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ckpt");
        save(&path, &sample()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&path, &bytes).unwrap();
        match load(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("truncated")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_an_io_error() {
        match load(Path::new("/nonexistent/nowhere.ckpt")) {
            Err(Error::Io { .. }) => {}
            other => panic!("expected io error, got {other:?}"),
        }
    }
}
