//! Per-molecule feature files: a JSON header line followed by the six QMMs as
//! little-endian `f64` in row-major order.
//!
//! ```text
//! ORBQMM1\n
//! <header JSON>\n
//! 6 * n_ao * n_ao little-endian f64
//! ```

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::AoLayout;
use crate::error::{Error, Result};
use crate::scf::{QmmMeta, QmmSet};

const MAGIC: &[u8] = b"ORBQMM1\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    n_ao: usize,
    /// `(atom, n, l, m)` per AO, for readers that do not need the full layout.
    layout_table: Vec<(usize, u32, usize, i32)>,
    matrices: Vec<String>,
    layout: AoLayout,
    meta: QmmMeta,
}

pub fn encode_qmm(qmm: &QmmSet) -> Result<Vec<u8>> {
    let header = Header {
        n_ao: qmm.num_aos(),
        layout_table: qmm.layout.table(),
        matrices: QmmSet::NAMES.iter().map(|s| s.to_string()).collect(),
        layout: qmm.layout.clone(),
        meta: qmm.meta.clone(),
    };
    let n = qmm.num_aos();
    let mut out = MAGIC.to_vec();
    out.extend(serde_json::to_vec(&header)?);
    out.push(b'\n');
    out.reserve(6 * n * n * 8);
    for m in qmm.matrices() {
        for i in 0..n {
            for j in 0..n {
                out.extend_from_slice(&m[(i, j)].to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_qmm(bytes: &[u8], origin: &str) -> Result<QmmSet> {
    let bad = |msg: &str| Error::Shape(format!("{origin}: {msg}"));
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| bad("not a QMM feature file"))?;
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("unterminated header"))?;
    let header: Header = serde_json::from_slice(&rest[..end])?;
    let n = header.n_ao;
    let data = &rest[end + 1..];
    if data.len() != 6 * n * n * 8 || header.layout.num_aos() != n {
        return Err(bad(&format!(
            "{} data bytes for {n} AOs, expected {}",
            data.len(),
            6 * n * n * 8
        )));
    }
    let mut mats = data.chunks_exact(n * n * 8).map(|block| {
        let vals: Vec<f64> = block
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        DMatrix::from_row_slice(n, n, &vals)
    });
    let mut next = || mats.next().expect("six blocks");
    Ok(QmmSet {
        f_alpha: next(),
        f_beta: next(),
        p_alpha: next(),
        p_beta: next(),
        s: next(),
        h_core: next(),
        layout: header.layout,
        meta: header.meta,
    })
}

pub fn write_qmm(path: &Path, qmm: &QmmSet) -> Result<()> {
    fs::write(path, encode_qmm(qmm)?).map_err(|e| Error::io(path, e))
}

pub fn read_qmm(path: &Path) -> Result<QmmSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_qmm(&bytes, &path.display().to_string())
}
