//! Parameter checkpoint container.
//!
//! Layout (little endian): `b"DBLF"`, `u32` version, `u32` entry count, then
//! per entry `u32` name length, UTF-8 name, `u8` trainable flag, `u32` rank,
//! `u64` per dimension, and the raw `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::array::DArray;
use super::params::ParamStore;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DBLF";
pub const VERSION: u32 = 1;

pub fn write_params<W: Write>(w: &mut W, store: &ParamStore) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, p) in store.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[u8::from(p.requires_grad)])?;
        w.write_all(&(p.value.ndim() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

pub fn read_params<R: Read>(r: &mut R) -> Result<ParamStore> {
    if &read_array::<4, _>(r)? != MAGIC {
        return Err(Error::Format("not a DBLF checkpoint".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|e| Error::Format(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let trainable = read_array::<1, _>(r)?[0] != 0;
        let rank = read_u32(r)? as usize;
        let shape = (0..rank).map(|_| Ok(u64::from_le_bytes(read_array(r)?) as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| Ok(f64::from_le_bytes(read_array(r)?))).collect::<Result<Vec<_>>>()?;
        let value = DArray::new(shape, data)?;
        if trainable {
            store.add(&name, value)?;
        } else {
            store.add_frozen(&name, value)?;
        }
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_params(&mut w, store)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore> {
    read_params(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut s = ParamStore::new();
        s.add("a", DArray::new(vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap()).unwrap();
        s.add_frozen("meta.delta", DArray::scalar(8.0)).unwrap();
        let mut buf = Vec::new();
        write_params(&mut buf, &s).unwrap();
        let back = read_params(&mut buf.as_slice()).unwrap();
        assert!(back.same_values(&s));
        assert!(!back.param(back.id("meta.delta").unwrap()).requires_grad);
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(matches!(read_params(&mut &b"XXXX\x01\0\0\0"[..]), Err(Error::Format(_))));
        let mut s = ParamStore::new();
        s.add("a", DArray::vector(vec![1.0, 2.0])).unwrap();
        let mut buf = Vec::new();
        write_params(&mut buf, &s).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_params(&mut buf.as_slice()), Err(Error::Format(_))));
    }
}
