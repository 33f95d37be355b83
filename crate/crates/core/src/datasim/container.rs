//! `MMT1` dataset container, all integers and floats little-endian:
//!
//! ```text
//! magic      4 bytes  "MMT1"
//! version    u16      1
//! classes    u32
//! dims       3 × u32  (d_a, d_v, d_l)
//! count      u64
//! per sample:
//!   label    u32
//!   3 × { len u32, len·dim × f32 row-major }
//! ```

use std::io::Write;
use std::path::Path;

use super::{FeatureSeq, MultimodalSample};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MMT1";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub classes: usize,
    pub dims: [usize; 3],
}

pub fn write_dataset(out: &mut impl Write, header: DatasetHeader, samples: &[MultimodalSample]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.classes as u32).to_le_bytes());
    for d in header.dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    out.write_all(&buf)?;
    for s in samples {
        buf.clear();
        buf.extend_from_slice(&(s.label as u32).to_le_bytes());
        for seq in &s.seqs {
            buf.extend_from_slice(&(seq.len as u32).to_le_bytes());
            for v in &seq.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, header: DatasetHeader, samples: &[MultimodalSample]) -> Result<()> {
    let path = path.as_ref();
    for (i, s) in samples.iter().enumerate() {
        let dims = [s.seqs[0].dim, s.seqs[1].dim, s.seqs[2].dim];
        if dims != header.dims || s.label >= header.classes {
            return Err(Error::invalid("dataset", format!("sample {i} does not match header {header:?}")));
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_dataset(&mut w, header, samples).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    sample: Option<u64>,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            let offset = self.bytes.len() as u64;
            return Err(match self.sample {
                Some(sample) => Error::Truncated { offset, sample },
                None => Error::Format {
                    offset,
                    reason: "truncated header".into(),
                },
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_dataset(bytes: &[u8]) -> Result<(DatasetHeader, Vec<MultimodalSample>)> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        sample: None,
    };
    if c.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Format {
            offset: 0,
            reason: "bad magic, expected \"MMT1\"".into(),
        });
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let classes = c.u32()? as usize;
    let dims = [c.u32()? as usize, c.u32()? as usize, c.u32()? as usize];
    let count = u64::from_le_bytes(c.take(8)?.try_into().unwrap());
    let mut samples = Vec::new();
    for index in 0..count {
        c.sample = Some(index);
        let at = c.pos as u64;
        let label = c.u32()? as usize;
        if label >= classes {
            return Err(Error::Format {
                offset: at,
                reason: format!("sample {index}: label {label} outside {classes} classes"),
            });
        }
        let mut seqs = Vec::with_capacity(3);
        for dim in dims {
            let len = c.u32()? as usize;
            let raw = c.take(len * dim * 4)?;
            let values = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            seqs.push(FeatureSeq { len, dim, values });
        }
        let seqs: [FeatureSeq; 3] = seqs.try_into().expect("three modalities");
        samples.push(MultimodalSample { seqs, label });
    }
    if c.pos != bytes.len() {
        return Err(Error::Format {
            offset: c.pos as u64,
            reason: "trailing bytes after last sample".into(),
        });
    }
    Ok((DatasetHeader { classes, dims }, samples))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<MultimodalSample>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_dataset(&bytes)
}
