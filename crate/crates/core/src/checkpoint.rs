//! `MCTP` checkpoint container, little-endian:
//!
//! ```text
//! magic       4 bytes  "MCTP"
//! version     u16      1
//! config      u32 × 20 d, layers, heads, d_k, kernel_sizes[3], max_lens[3],
//!                      classes, ffn_hidden, feature_dims[3], classifier_layers,
//!                      flags (bit 0 γ_b, bit 1 γ_e, bit 2 reconstruction branch),
//!                      metric (0 cmd, 1 cosine, 2 jsd, 3 smooth_l1), cmd_order,
//!                      decoder_blocks
//! ln_eps      f64
//! count       u32      number of parameter tensors
//! per tensor, in canonical order:
//!   numel     u32
//!   values    numel × f32
//! ```
//!
//! Shapes and names are implied by the configuration block.

use std::path::Path;

use tensorlab::Real;

use crate::hfr::{HfrConfig, Metric};
use crate::mct::{ModelConfig, Network};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MCTP";
pub const VERSION: u16 = 1;

const METRICS: [Metric; 4] = [Metric::Cmd, Metric::Cosine, Metric::Jsd, Metric::SmoothL1];

pub fn encode_checkpoint<T: Real>(net: &Network<T>) -> Vec<u8> {
    let cfg = &net.cfg;
    let hfr = net.hfr_cfg.clone().unwrap_or_default();
    let flags = cfg.gamma_b as u32 | (cfg.gamma_e as u32) << 1 | (net.hfr_cfg.is_some() as u32) << 2;
    let metric = METRICS.iter().position(|&m| m == hfr.metric).unwrap() as u32;
    let mut fields = vec![cfg.d, cfg.layers, cfg.heads, cfg.d_k];
    fields.extend(cfg.kernel_sizes);
    fields.extend(cfg.max_lens);
    fields.extend([cfg.classes, cfg.ffn_dim()]);
    fields.extend(cfg.feature_dims);
    fields.push(cfg.classifier_layers);
    let mut out = Vec::with_capacity(64 + 4 * net.store.scalar_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for f in fields {
        out.extend_from_slice(&(f as u32).to_le_bytes());
    }
    for f in [flags, metric, hfr.cmd_order as u32, hfr.decoder_blocks as u32] {
        out.extend_from_slice(&f.to_le_bytes());
    }
    out.extend_from_slice(&cfg.ln_eps.to_le_bytes());
    out.extend_from_slice(&(net.store.len() as u32).to_le_bytes());
    for e in net.store.entries() {
        out.extend_from_slice(&(e.tensor.numel() as u32).to_le_bytes());
        for v in e.tensor.values() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                reason: format!("checkpoint truncated, needed {n} more bytes at {}", self.pos),
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

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Network<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Format {
            offset: 0,
            reason: "bad magic, expected \"MCTP\"".into(),
        });
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            reason: format!("unsupported checkpoint version {version}"),
        });
    }
    let mut f = [0usize; 20];
    for v in &mut f {
        *v = r.u32()? as usize;
    }
    let ln_eps = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let flags = f[16];
    let cfg = ModelConfig {
        d: f[0],
        layers: f[1],
        heads: f[2],
        d_k: f[3],
        kernel_sizes: [f[4], f[5], f[6]],
        max_lens: [f[7], f[8], f[9]],
        classes: f[10],
        ffn_hidden: Some(f[11]),
        feature_dims: [f[12], f[13], f[14]],
        classifier_layers: f[15],
        gamma_b: flags & 1 != 0,
        gamma_e: flags & 2 != 0,
        ln_eps,
    };
    let metric = *METRICS.get(f[17]).ok_or_else(|| Error::Format {
        offset: 74,
        reason: format!("unknown metric code {}", f[17]),
    })?;
    let hfr = (flags & 4 != 0).then_some(HfrConfig {
        metric,
        cmd_order: f[18],
        decoder_blocks: f[19],
    });
    let mut net = Network::<T>::new(cfg, hfr, 0)?;
    let count = r.u32()? as usize;
    if count != net.store.len() {
        return Err(Error::Format {
            offset: r.pos as u64 - 4,
            reason: format!("{count} tensors stored, configuration implies {}", net.store.len()),
        });
    }
    for e in net.store.entries_mut() {
        let at = r.pos as u64;
        let numel = r.u32()? as usize;
        if numel != e.tensor.numel() {
            return Err(Error::Format {
                offset: at,
                reason: format!("{}: {numel} values stored, expected {}", e.name, e.tensor.numel()),
            });
        }
        let raw = r.take(numel * 4)?;
        for (dst, b) in e.tensor.values_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = T::lit(f32::from_le_bytes(b.try_into().unwrap()) as f64);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos as u64,
            reason: "trailing bytes after last tensor".into(),
        });
    }
    Ok(net)
}

pub fn save_checkpoint<T: Real>(path: impl AsRef<Path>, net: &Network<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Network<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
