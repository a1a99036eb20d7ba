//! Binary model checkpoints.
//!
//! Format `HCMD` version 1, little-endian throughout:
//!
//! ```text
//! magic   4 bytes  "HCMD"
//! version u32      1
//! layers  u64      layer count
//! per layer:
//!   d_cell_in, d_net_in, d_out, k_cell, k_net, mode   u64 each
//!   w_pins    d_cell_in * d_out   f64, row-major
//!   w_pinned  d_net_in  * d_out   f64, row-major
//!   w_near    d_cell_in * d_out   f64, row-major
//!   b_pins, b_pinned, b_near      d_out f64 each
//! ```
//!
//! `mode` is 0 for literal, 1 for non-negative. Weights round-trip
//! bit-exactly; trailing bytes are rejected.

use std::fs;
use std::path::Path;

use super::{HeteroConvLayer, Network};
use crate::dense::DenseMatrix;
use crate::drelu::{DreluConfig, DreluMode};
use crate::error::ModelError;

const MAGIC: &[u8; 4] = b"HCMD";
const VERSION: u32 = 1;

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        if self.buf.len() - self.pos < n {
            return Err(ModelError::CorruptSection(format!(
                "file ends inside {what}"
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn dim(&mut self, what: &str) -> Result<usize, ModelError> {
        let v = self.u64(what)?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v > 0 && v < 1 << 32)
            .ok_or_else(|| ModelError::CorruptSection(format!("implausible {what}: {v}")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>, ModelError> {
        let raw = self.take(n * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Writes `net` to `path`, atomically replacing any existing file.
pub fn save_model(net: &Network, path: &Path) -> Result<(), ModelError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    push_u64(&mut buf, net.layers.len() as u64);
    for l in &net.layers {
        let d = l.dims();
        push_u64(&mut buf, d.d_cell_in as u64);
        push_u64(&mut buf, d.d_net_in as u64);
        push_u64(&mut buf, d.d_out as u64);
        push_u64(&mut buf, l.drelu.k_cell as u64);
        push_u64(&mut buf, l.drelu.k_net as u64);
        push_u64(
            &mut buf,
            match l.drelu.mode {
                DreluMode::Literal => 0,
                DreluMode::Nonneg => 1,
            },
        );
        push_f64s(&mut buf, l.w_pins.data());
        push_f64s(&mut buf, l.w_pinned.data());
        push_f64s(&mut buf, l.w_near.data());
        push_f64s(&mut buf, &l.b_pins);
        push_f64s(&mut buf, &l.b_pinned);
        push_f64s(&mut buf, &l.b_near);
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a [`Network`] written by [`save_model`].
pub fn load_model(path: &Path) -> Result<Network, ModelError> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(ModelError::FormatVersionMismatch(format!(
            "bad magic {magic:02x?}, want {MAGIC:02x?}"
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(ModelError::FormatVersionMismatch(format!(
            "version {version}, this build reads {VERSION}"
        )));
    }
    let n_layers = r.u64("layer count")?;
    if n_layers == 0 || n_layers > 64 {
        return Err(ModelError::CorruptSection(format!(
            "implausible layer count {n_layers}"
        )));
    }
    let mut layers = Vec::with_capacity(n_layers as usize);
    for li in 0..n_layers {
        let d_cell_in = r.dim("d_cell_in")?;
        let d_net_in = r.dim("d_net_in")?;
        let d_out = r.dim("d_out")?;
        let k_cell = r.dim("k_cell")?;
        let k_net = r.dim("k_net")?;
        let mode = match r.u64("mode")? {
            0 => DreluMode::Literal,
            1 => DreluMode::Nonneg,
            m => {
                return Err(ModelError::CorruptSection(format!(
                    "unknown drelu mode {m} in layer {li}"
                )))
            }
        };
        let w_pins = DenseMatrix::from_vec(
            d_cell_in,
            d_out,
            r.f64s(d_cell_in * d_out, "w_pins")?,
        )
        .expect("sized to match");
        let w_pinned = DenseMatrix::from_vec(
            d_net_in,
            d_out,
            r.f64s(d_net_in * d_out, "w_pinned")?,
        )
        .expect("sized to match");
        let w_near = DenseMatrix::from_vec(
            d_cell_in,
            d_out,
            r.f64s(d_cell_in * d_out, "w_near")?,
        )
        .expect("sized to match");
        layers.push(HeteroConvLayer {
            w_pins,
            w_pinned,
            w_near,
            b_pins: r.f64s(d_out, "b_pins")?,
            b_pinned: r.f64s(d_out, "b_pinned")?,
            b_near: r.f64s(d_out, "b_near")?,
            drelu: DreluConfig {
                k_cell,
                k_net,
                mode,
            },
        });
    }
    if r.pos != buf.len() {
        return Err(ModelError::CorruptSection(format!(
            "{} trailing bytes after the last layer",
            buf.len() - r.pos
        )));
    }
    Ok(Network { layers })
}
