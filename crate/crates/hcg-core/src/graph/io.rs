//! On-disk graph format.
//!
//! Little-endian layout, magic `HCGR`, version 1:
//!
//! ```text
//! magic        4 bytes  "HCGR"
//! version      u32      1
//! n_cell       u64      node counts
//! n_net        u64
//! d_cell       u64      feature dims
//! d_net        u64
//! x_cell       n_cell * d_cell f64, row-major
//! x_net        n_net  * d_net  f64, row-major
//! per edge type, in the order pins, pinned, near:
//!   num_rows   u64
//!   num_cols   u64
//!   nnz        u64
//!   row_ptr    (num_rows + 1) u64
//!   col_idx    nnz u64
//!   values     nnz f64
//! labels_flag  u64      0 or 1
//! labels       n_cell f64, present iff labels_flag == 1
//! ```
//!
//! Loading checks per-adjacency CSR structure; cross-adjacency properties
//! (dims against node counts, the pins/pinned transpose pairing, finite
//! features) are the job of [`crate::graph::validate`], so a semantically
//! broken file can still be loaded and diagnosed.

use super::csr::CsrAdjacency;
use super::HeteroGraph;
use crate::dense::DenseMatrix;
use crate::error::GraphError;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: [u8; 4] = *b"HCGR";
const VERSION: u32 = 1;

struct Reader<R> {
    inner: R,
    remaining: u64,
}

impl<R: Read> Reader<R> {
    fn take(&mut self, n: u64, what: &str) -> Result<(), GraphError> {
        if self.remaining < n {
            return Err(GraphError::CorruptSection(format!(
                "{what}: need {n} bytes, {} left",
                self.remaining
            )));
        }
        self.remaining -= n;
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32, GraphError> {
        self.take(4, what)?;
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &str) -> Result<u64, GraphError> {
        self.take(8, what)?;
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn usize(&mut self, what: &str) -> Result<usize, GraphError> {
        let v = self.u64(what)?;
        usize::try_from(v)
            .map_err(|_| GraphError::CorruptSection(format!("{what}: {v} exceeds address space")))
    }

    fn u64_vec(&mut self, len: usize, what: &str) -> Result<Vec<usize>, GraphError> {
        self.take(len as u64 * 8, what)?;
        let mut bytes = vec![0u8; len * 8];
        self.inner.read_exact(&mut bytes)?;
        bytes
            .chunks_exact(8)
            .map(|c| {
                let v = u64::from_le_bytes(c.try_into().unwrap());
                usize::try_from(v).map_err(|_| {
                    GraphError::CorruptSection(format!("{what}: {v} exceeds address space"))
                })
            })
            .collect()
    }

    fn f64_vec(&mut self, len: usize, what: &str) -> Result<Vec<f64>, GraphError> {
        self.take(len as u64 * 8, what)?;
        let mut bytes = vec![0u8; len * 8];
        self.inner.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64_slice<W: Write>(w: &mut W, vs: &[f64]) -> std::io::Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_adj<W: Write>(w: &mut W, a: &CsrAdjacency) -> std::io::Result<()> {
    write_u64(w, a.num_rows() as u64)?;
    write_u64(w, a.num_cols() as u64)?;
    write_u64(w, a.nnz() as u64)?;
    for &p in a.row_ptr() {
        write_u64(w, p as u64)?;
    }
    for &c in a.col_idx() {
        write_u64(w, c as u64)?;
    }
    write_f64_slice(w, a.values())
}

fn read_adj<R: Read>(r: &mut Reader<R>, what: &str) -> Result<CsrAdjacency, GraphError> {
    let num_rows = r.usize(what)?;
    let num_cols = r.usize(what)?;
    let nnz = r.usize(what)?;
    let row_ptr = r.u64_vec(num_rows + 1, what)?;
    if row_ptr.last().copied() != Some(nnz) {
        return Err(GraphError::CorruptSection(format!(
            "{what}: row_ptr end {:?} disagrees with nnz {nnz}",
            row_ptr.last()
        )));
    }
    let col_idx = r.u64_vec(nnz, what)?;
    let values = r.f64_vec(nnz, what)?;
    CsrAdjacency::from_parts(num_rows, num_cols, row_ptr, col_idx, values)
        .map_err(|e| GraphError::CorruptSection(format!("{what}: {e}")))
}

/// Serializes a graph; the output round-trips bit-exactly through
/// [`load_graph`].
pub fn save_graph(g: &HeteroGraph, path: &Path) -> Result<(), GraphError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_u64(&mut w, g.n_cell() as u64)?;
    write_u64(&mut w, g.n_net() as u64)?;
    write_u64(&mut w, g.d_cell() as u64)?;
    write_u64(&mut w, g.d_net() as u64)?;
    write_f64_slice(&mut w, g.x_cell().data())?;
    write_f64_slice(&mut w, g.x_net().data())?;
    for edge in crate::graph::EdgeType::ALL {
        write_adj(&mut w, g.adj(edge))?;
    }
    match g.labels() {
        Some(labels) => {
            write_u64(&mut w, 1)?;
            write_f64_slice(&mut w, labels)?;
        }
        None => write_u64(&mut w, 0)?,
    }
    w.flush()?;
    Ok(())
}

/// Reads a graph written by [`save_graph`] and recomputes the cached
/// transposes.
pub fn load_graph(path: &Path) -> Result<HeteroGraph, GraphError> {
    let file = File::open(path)?;
    let remaining = file.metadata()?.len();
    let mut r = Reader {
        inner: BufReader::new(file),
        remaining,
    };

    let mut magic = [0u8; 4];
    r.take(4, "magic")?;
    r.inner.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(GraphError::FormatVersionMismatch(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(GraphError::FormatVersionMismatch(format!(
            "version {version}, this build reads {VERSION}"
        )));
    }

    let n_cell = r.usize("node counts")?;
    let n_net = r.usize("node counts")?;
    let d_cell = r.usize("feature dims")?;
    let d_net = r.usize("feature dims")?;
    let x_cell = DenseMatrix::from_vec(
        n_cell,
        d_cell,
        r.f64_vec(
            n_cell
                .checked_mul(d_cell)
                .ok_or_else(|| GraphError::CorruptSection("cell features overflow".into()))?,
            "cell features",
        )?,
    )
    .map_err(|e| GraphError::CorruptSection(e.to_string()))?;
    let x_net = DenseMatrix::from_vec(
        n_net,
        d_net,
        r.f64_vec(
            n_net
                .checked_mul(d_net)
                .ok_or_else(|| GraphError::CorruptSection("net features overflow".into()))?,
            "net features",
        )?,
    )
    .map_err(|e| GraphError::CorruptSection(e.to_string()))?;

    let pins = read_adj(&mut r, "pins")?;
    let pinned = read_adj(&mut r, "pinned")?;
    let near = read_adj(&mut r, "near")?;

    let labels = match r.u64("labels flag")? {
        0 => None,
        1 => Some(r.f64_vec(n_cell, "labels")?),
        other => {
            return Err(GraphError::CorruptSection(format!(
                "labels flag must be 0 or 1, got {other}"
            )))
        }
    };

    Ok(HeteroGraph::new(x_cell, x_net, pins, pinned, near, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_synthetic, EdgeType, Preset, SyntheticSpec};

    fn sample() -> HeteroGraph {
        generate_synthetic(&SyntheticSpec {
            seed: 9,
            ..SyntheticSpec::preset(Preset::Small).with_scale(0.01)
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.hcgr");
        let g = sample();
        save_graph(&g, &path).unwrap();
        let h = load_graph(&path).unwrap();
        assert!(g.x_cell().bits_eq(h.x_cell()));
        assert!(g.x_net().bits_eq(h.x_net()));
        for edge in EdgeType::ALL {
            assert_eq!(g.adj(edge), h.adj(edge));
            assert_eq!(g.adj_t(edge), h.adj_t(edge));
        }
        assert_eq!(
            g.labels().unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            h.labels().unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.hcgr");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00rest").unwrap();
        assert!(matches!(
            load_graph(&path),
            Err(GraphError::FormatVersionMismatch(_))
        ));
    }

    #[test]
    fn wrong_version_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.hcgr");
        let mut bytes = b"HCGR".to_vec();
        bytes.extend(7u32.to_le_bytes());
        bytes.extend([0u8; 32]);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_graph(&path),
            Err(GraphError::FormatVersionMismatch(_))
        ));
    }

    #[test]
    fn truncated_file_is_a_corrupt_section() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.hcgr");
        save_graph(&sample(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_graph(&path),
            Err(GraphError::CorruptSection(_))
        ));
    }

    #[test]
    fn graph_without_labels_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.hcgr");
        let g = sample();
        let g = HeteroGraph::new(
            g.x_cell().clone(),
            g.x_net().clone(),
            g.adj(EdgeType::Pins).clone(),
            g.adj(EdgeType::Pinned).clone(),
            g.adj(EdgeType::Near).clone(),
            None,
        );
        save_graph(&g, &path).unwrap();
        assert!(load_graph(&path).unwrap().labels().is_none());
    }
}
