//! Binary tensor files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `NTFX` |
//! | 1 | version (1) |
//! | 24 | dims I, J, K as `u64` |
//! | 8 | entry count `u64` |
//! | 32·n | entries `(u64 i, u64 j, u64 k, f64 value)` in canonical order |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dims, Entry, ObservedTensor};
use crate::error::{NtfError, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"NTFX";
pub const TENSOR_VERSION: u8 = 1;

pub fn write_tensor_to<W: Write>(tensor: &ObservedTensor, mut w: W) -> Result<()> {
    let dims = tensor.dims();
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&[TENSOR_VERSION])?;
    for d in [dims.users, dims.items, dims.slots, tensor.len()] {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for e in tensor.entries() {
        w.write_all(&(e.i as u64).to_le_bytes())?;
        w.write_all(&(e.j as u64).to_le_bytes())?;
        w.write_all(&(e.k as u64).to_le_bytes())?;
        w.write_all(&e.value.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_tensor(tensor: &ObservedTensor, path: impl AsRef<Path>) -> Result<()> {
    write_tensor_to(tensor, BufWriter::new(File::create(path)?))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            NtfError::CorruptFile(format!("truncated while reading {what}"))
        }
        _ => NtfError::Io(e),
    })
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn to_index(v: u64, what: &str) -> Result<usize> {
    usize::try_from(v)
        .map_err(|_| NtfError::CorruptFile(format!("{what} {v} does not fit in memory")))
}

pub fn read_tensor_from<R: Read>(mut r: R) -> Result<ObservedTensor> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != TENSOR_MAGIC {
        return Err(NtfError::VersionMismatch(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(TENSOR_MAGIC),
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut version = [0u8; 1];
    read_exact(&mut r, &mut version, "version")?;
    if version[0] != TENSOR_VERSION {
        return Err(NtfError::VersionMismatch(format!(
            "tensor format version {} (supported: {TENSOR_VERSION})",
            version[0]
        )));
    }
    let users = to_index(read_u64(&mut r, "dims")?, "dim")?;
    let items = to_index(read_u64(&mut r, "dims")?, "dim")?;
    let slots = to_index(read_u64(&mut r, "dims")?, "dim")?;
    let count = to_index(read_u64(&mut r, "entry count")?, "entry count")?;
    let dims = Dims::new(users, items, slots);

    let mut entries = Vec::with_capacity(count.min(1 << 20));
    let mut buf = [0u8; 32];
    for n in 0..count {
        read_exact(&mut r, &mut buf, "entries")?;
        let word = |w: usize| u64::from_le_bytes(buf[w * 8..w * 8 + 8].try_into().unwrap());
        let e = Entry::new(
            to_index(word(0), "index")?,
            to_index(word(1), "index")?,
            to_index(word(2), "index")?,
            f64::from_le_bytes(buf[24..32].try_into().unwrap()),
        );
        if !dims.contains(e.i, e.j, e.k) {
            return Err(NtfError::CorruptFile(format!("entry {n} out of bounds")));
        }
        if let Some(prev) = entries.last().map(Entry::key) {
            if prev >= e.key() {
                return Err(NtfError::CorruptFile(format!(
                    "entry {n} breaks canonical order"
                )));
            }
        }
        entries.push(e);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(NtfError::CorruptFile(
            "trailing bytes after last entry".into(),
        ));
    }
    Ok(ObservedTensor::from_sorted_unchecked(dims, entries))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<ObservedTensor> {
    read_tensor_from(BufReader::new(File::open(path)?))
}
