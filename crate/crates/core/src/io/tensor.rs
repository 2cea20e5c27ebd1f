//! Named-tensor records: length-prefixed name, u32 shape, f32 LE payload.
//! The weights file and the standalone tensor container share this layout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"SPKT";
pub const TENSOR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

pub(crate) fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated(format!("unexpected end of file while reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}

pub(crate) fn check_magic(r: &mut impl Read, expected: [u8; 4]) -> Result<()> {
    let mut found = [0u8; 4];
    read_exact(r, &mut found, "magic bytes")?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

pub(crate) fn check_version(r: &mut impl Read, expected: u32) -> Result<()> {
    let found = read_u32(r, "format version")?;
    if found != expected {
        return Err(Error::BadVersion { expected, found });
    }
    Ok(())
}

pub(crate) fn write_record(
    w: &mut impl Write,
    name: &str,
    rows: usize,
    cols: usize,
    values: &[f64],
) -> Result<()> {
    debug_assert_eq!(rows * cols, values.len());
    let name_bytes = name.as_bytes();
    write_u32(w, name_bytes.len() as u32)?;
    w.write_all(name_bytes)?;
    write_u32(w, rows as u32)?;
    write_u32(w, cols as u32)?;
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_record(r: &mut impl Read) -> Result<NamedTensor> {
    let name_len = read_u32(r, "tensor name length")? as usize;
    if name_len > 4096 {
        return Err(Error::Format(format!(
            "implausible tensor name length {name_len}"
        )));
    }
    let mut name_buf = vec![0u8; name_len];
    read_exact(r, &mut name_buf, "tensor name")?;
    let name = String::from_utf8(name_buf)
        .map_err(|_| Error::Format("tensor name is not utf-8".into()))?;
    let rows = read_u32(r, "tensor rows")? as usize;
    let cols = read_u32(r, "tensor cols")? as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format(format!("tensor shape {rows}x{cols} overflows")))?;
    let mut data = Vec::with_capacity(len);
    let mut buf = [0u8; 4];
    for _ in 0..len {
        read_exact(r, &mut buf, &format!("payload of {name}"))?;
        data.push(f32::from_le_bytes(buf));
    }
    Ok(NamedTensor {
        name,
        rows,
        cols,
        data,
    })
}

/// Write a standalone tensor container (magic + version + count + records).
pub fn write_tensor_file(path: &Path, tensors: &[(&str, usize, usize, &[f64])]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&TENSOR_MAGIC)?;
    write_u32(&mut w, TENSOR_VERSION)?;
    write_u32(&mut w, tensors.len() as u32)?;
    for (name, rows, cols, data) in tensors {
        write_record(&mut w, name, *rows, *cols, data)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor_file(path: &Path) -> Result<Vec<NamedTensor>> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, TENSOR_MAGIC)?;
    check_version(&mut r, TENSOR_VERSION)?;
    let count = read_u32(&mut r, "tensor count")? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(read_record(&mut r)?);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after final tensor".into()));
    }
    Ok(out)
}
