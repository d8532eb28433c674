//! Binary container for one Gated-MLP block.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "CATSW1\0\0"
//! 8       4     version (u32 LE) = 1
//! 12      4     d (u32 LE)
//! 16      4     m (u32 LE)
//! 20      3     layout flag per matrix, W_gate, W_up, W_down (0 = row-major, 1 = column-major)
//! 23      ...   f32 LE payloads in storage order: W_gate (d·m), W_up (d·m), W_down (m·d)
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{CatsError, Result};
use crate::kernel::GatedMlpWeights;
use crate::linalg::{Layout, Matrix};

pub const MAGIC: [u8; 8] = *b"CATSW1\0\0";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 23;

fn layout_flag(l: Layout) -> u8 {
    match l {
        Layout::RowMajor => 0,
        Layout::ColumnMajor => 1,
    }
}

pub fn encode(w: &GatedMlpWeights) -> Vec<u8> {
    let mats = [w.w_gate(), w.w_up(), w.w_down()];
    let payload: usize = mats.iter().map(|m| m.as_slice().len() * 4).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(w.d() as u32).to_le_bytes());
    out.extend_from_slice(&(w.m() as u32).to_le_bytes());
    out.extend(mats.iter().map(|m| layout_flag(m.layout())));
    for m in mats {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| CatsError::format(bytes.len() as u64, "file ends inside the header"))
}

pub fn decode(bytes: &[u8]) -> Result<GatedMlpWeights> {
    if bytes.len() < MAGIC.len() {
        return Err(CatsError::format(bytes.len() as u64, "file ends inside the magic"));
    }
    if let Some(i) = (0..MAGIC.len()).find(|&i| bytes[i] != MAGIC[i]) {
        return Err(CatsError::format(i as u64, "bad magic, not a CATSW1 weight file"));
    }
    let version = read_u32(bytes, 8)?;
    if version != VERSION {
        return Err(CatsError::format(8, format!("unsupported version {version}")));
    }
    let d = read_u32(bytes, 12)? as usize;
    let m = read_u32(bytes, 16)? as usize;
    if d == 0 || m == 0 {
        return Err(CatsError::format(12, format!("empty block shape d={d} m={m}")));
    }
    if bytes.len() < HEADER_LEN {
        return Err(CatsError::format(bytes.len() as u64, "file ends inside the header"));
    }
    let mut layouts = [Layout::RowMajor; 3];
    for (i, l) in layouts.iter_mut().enumerate() {
        *l = match bytes[20 + i] {
            0 => Layout::RowMajor,
            1 => Layout::ColumnMajor,
            f => return Err(CatsError::format((20 + i) as u64, format!("invalid layout flag {f}"))),
        };
    }
    let n = d
        .checked_mul(m)
        .filter(|n| n.checked_mul(12).is_some())
        .ok_or_else(|| CatsError::format(12, "block shape overflows"))?;
    let expected = HEADER_LEN + 12 * n;
    if bytes.len() != expected {
        let at = bytes.len().min(expected) as u64;
        return Err(CatsError::format(
            at,
            format!("payload is {} bytes, expected {}", bytes.len() - HEADER_LEN, 12 * n),
        ));
    }
    let floats = |k: usize| -> Vec<f32> {
        let start = HEADER_LEN + 4 * n * k;
        bytes[start..start + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect()
    };
    let gate = Matrix::new(d, m, layouts[0], floats(0))?;
    let up = Matrix::new(d, m, layouts[1], floats(1))?;
    let down = Matrix::new(m, d, layouts[2], floats(2))?;
    GatedMlpWeights::new(
        gate.to_layout(Layout::RowMajor),
        up.to_layout(Layout::ColumnMajor),
        down.to_layout(Layout::RowMajor),
    )
}

pub fn save(w: &GatedMlpWeights, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&encode(w))?;
    f.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<GatedMlpWeights> {
    decode(&std::fs::read(path)?)
}
