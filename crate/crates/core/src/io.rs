//! Binary exchange of dense inner clutter covariance matrices.
//!
//! Layout (little-endian): the 8-byte magic `DFRCCCM1`, the dimension as
//! `u64`, the range-cell offset `m` as `i64`, then `dim * dim` row-major
//! `(re, im)` pairs of `f64`.

use std::io::{Read, Write};
use std::path::Path;

use crate::radar_scene::{factors_from_dense, InnerCcmFactors};
use crate::{CMatrix, DfrcError, Result, C64};

const MAGIC: &[u8; 8] = b"DFRCCCM1";

pub fn write_dense_ccm<W: Write>(mut out: W, offset: i64, m: &CMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(DfrcError::DimensionMismatch {
            what: "dense CCM columns",
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    out.write_all(MAGIC)?;
    out.write_all(&(m.nrows() as u64).to_le_bytes())?;
    out.write_all(&offset.to_le_bytes())?;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.write_all(&m[(r, c)].re.to_le_bytes())?;
            out.write_all(&m[(r, c)].im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_dense_ccm<R: Read>(mut input: R) -> Result<(i64, CMatrix)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DfrcError::InvalidInput(
            "not a dense CCM file (bad magic)".into(),
        ));
    }
    let mut word = [0u8; 8];
    input.read_exact(&mut word)?;
    let dim = u64::from_le_bytes(word) as usize;
    input.read_exact(&mut word)?;
    let offset = i64::from_le_bytes(word);
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    let expected = dim
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(16))
        .ok_or_else(|| {
            DfrcError::InvalidInput(format!("dense CCM dimension {dim} is too large"))
        })?;
    if body.len() != expected {
        return Err(DfrcError::DimensionMismatch {
            what: "dense CCM payload bytes",
            expected,
            found: body.len(),
        });
    }
    let value =
        |i: usize| f64::from_le_bytes(body[8 * i..8 * i + 8].try_into().expect("8-byte slice"));
    let m = CMatrix::from_fn(dim, dim, |r, c| {
        let k = 2 * (r * dim + c);
        C64::new(value(k), value(k + 1))
    });
    Ok((offset, m))
}

/// Reads a dense CCM file and factors it.
pub fn import_dense_ccm(path: &Path) -> Result<InnerCcmFactors> {
    let file = std::fs::File::open(path)?;
    let (offset, m) = read_dense_ccm(std::io::BufReader::new(file))?;
    factors_from_dense(offset, &m)
}
