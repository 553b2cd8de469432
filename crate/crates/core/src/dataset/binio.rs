//! Little-endian primitives shared by the binary containers.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};

pub(crate) fn put_u8(w: &mut impl Write, v: u8) -> Result<()> {
    Ok(w.write_all(&[v])?)
}

pub(crate) fn put_u16(w: &mut impl Write, v: u16) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

pub(crate) fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

pub(crate) fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

pub(crate) fn put_name(w: &mut impl Write, name: &str) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
    put_u16(w, len)?;
    Ok(w.write_all(name.as_bytes())?)
}

pub(crate) fn put_values<T: Scalar>(w: &mut impl Write, values: &[T]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * T::DTYPE.width());
    for &v in values {
        v.write_le(&mut buf);
    }
    Ok(w.write_all(&buf)?)
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated container: {e}")))?;
    Ok(b)
}

pub(crate) fn get_u8(r: &mut impl Read) -> Result<u8> {
    Ok(take::<1>(r)?[0])
}

pub(crate) fn get_u16(r: &mut impl Read) -> Result<u16> {
    Ok(u16::from_le_bytes(take(r)?))
}

pub(crate) fn get_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(take(r)?))
}

pub(crate) fn get_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(take(r)?))
}

pub(crate) fn get_usize(r: &mut impl Read) -> Result<usize> {
    usize::try_from(get_u64(r)?).map_err(|_| Error::Format("dimension exceeds usize".into()))
}

pub(crate) fn get_name(r: &mut impl Read) -> Result<String> {
    let len = get_u16(r)? as usize;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated name: {e}")))?;
    String::from_utf8(b).map_err(|e| Error::Format(format!("name is not UTF-8: {e}")))
}

/// Reads `count` values stored as `dtype`, converting to `T` when the types
/// differ.
pub(crate) fn get_values<T: Scalar>(r: &mut impl Read, dtype: DType, count: usize) -> Result<Vec<T>> {
    let width = dtype.width();
    let bytes = count
        .checked_mul(width)
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    let mut buf = vec![0u8; bytes];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated payload: {e}")))?;
    Ok(match dtype {
        d if d == T::DTYPE => buf.chunks_exact(width).map(T::read_le).collect(),
        DType::F32 => buf
            .chunks_exact(4)
            .map(|c| T::lit(f32::read_le(c) as f64))
            .collect(),
        DType::F64 => buf.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
    })
}

pub(crate) fn get_dtype(r: &mut impl Read) -> Result<DType> {
    let tag = get_u8(r)?;
    DType::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown dtype tag {tag}")))
}

pub(crate) fn expect_magic(r: &mut impl Read, magic: &[u8; 8], version: u32) -> Result<()> {
    let got: [u8; 8] = take(r)?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let v = get_u32(r)?;
    if v != version {
        return Err(Error::Format(format!("unsupported version {v}, expected {version}")));
    }
    Ok(())
}
