//! Little-endian helpers shared by the binary embedding, index and params
//! files.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::embedding::{SliceEntry, SliceLayout};
use crate::error::{Error, Result};

pub(crate) fn corrupt(msg: impl Into<String>) -> Error {
    Error::Format {
        line: 0,
        column: 0,
        message: msg.into(),
    }
}

pub(crate) fn io_err(e: std::io::Error) -> Error {
    corrupt(format!("truncated or unreadable binary data: {e}"))
}

pub(crate) fn write_header<W: Write>(w: &mut W, magic: &[u8; 7], version: u16) -> Result<()> {
    w.write_all(magic).map_err(io_err)?;
    w.write_u16::<LittleEndian>(version).map_err(io_err)
}

pub(crate) fn read_header<R: Read>(r: &mut R, magic: &[u8; 7], version: u16) -> Result<()> {
    let mut got = [0u8; 7];
    r.read_exact(&mut got).map_err(io_err)?;
    if &got != magic {
        return Err(corrupt(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let v = r.read_u16::<LittleEndian>().map_err(io_err)?;
    if v != version {
        return Err(corrupt(format!("unsupported version {v}, expected {version}")));
    }
    Ok(())
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32).map_err(io_err)?;
    w.write_all(s.as_bytes()).map_err(io_err)
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    if len > 1 << 20 {
        return Err(corrupt(format!("string length {len} is implausible")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(io_err)?;
    String::from_utf8(buf).map_err(|_| corrupt("string is not UTF-8"))
}

/// Layout table: u16 count, then per entry (u16 name length, name bytes,
/// u32 offset, u32 width).
pub(crate) fn write_layout<W: Write>(w: &mut W, layout: &SliceLayout) -> Result<()> {
    w.write_u16::<LittleEndian>(layout.entries().len() as u16)
        .map_err(io_err)?;
    for e in layout.entries() {
        w.write_u16::<LittleEndian>(e.slot.len() as u16).map_err(io_err)?;
        w.write_all(e.slot.as_bytes()).map_err(io_err)?;
        w.write_u32::<LittleEndian>(e.offset as u32).map_err(io_err)?;
        w.write_u32::<LittleEndian>(e.width as u32).map_err(io_err)?;
    }
    Ok(())
}

pub(crate) fn read_layout<R: Read>(r: &mut R) -> Result<SliceLayout> {
    let n = r.read_u16::<LittleEndian>().map_err(io_err)? as usize;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.read_u16::<LittleEndian>().map_err(io_err)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(io_err)?;
        let slot = String::from_utf8(buf).map_err(|_| corrupt("slot name is not UTF-8"))?;
        let offset = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
        let width = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
        entries.push(SliceEntry {
            slot,
            offset,
            width,
        });
    }
    SliceLayout::from_entries(entries)
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for &v in values {
        w.write_f32::<LittleEndian>(v as f32).map_err(io_err)?;
    }
    Ok(())
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let v = r.read_f32::<LittleEndian>().map_err(io_err)?;
        if !v.is_finite() {
            return Err(corrupt("non-finite value in matrix"));
        }
        out.push(v as f64);
    }
    Ok(out)
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for &v in values {
        w.write_f64::<LittleEndian>(v).map_err(io_err)?;
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(r.read_f64::<LittleEndian>().map_err(io_err)?);
    }
    Ok(out)
}

pub(crate) fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe).map_err(io_err)? {
        0 => Ok(()),
        _ => Err(corrupt("trailing bytes after payload")),
    }
}
