//! Binary checkpoint format for a [`ParameterStore`].
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic            8 bytes   "KBQACKPT"
//! version          u32       currently 1
//! parameter count  u32
//! per parameter, in ascending name order:
//!   name length    u32
//!   name           UTF-8 bytes
//!   rank           u32
//!   dims           u64 x rank
//!   adam step      u64
//!   values         f64 x numel   (little-endian IEEE 754)
//!   adam m         f64 x numel
//!   adam v         f64 x numel
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParameterStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"KBQACKPT";
const VERSION: u32 = 1;

impl ParameterStore {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        for (name, param) in self.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let shape = param.value.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            w.write_all(&param.step.to_le_bytes())?;
            write_f64s(&mut w, param.value.data())?;
            write_f64s(&mut w, &param.m)?;
            write_f64s(&mut w, &param.v)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".to_string()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let count = read_u32(&mut r)? as usize;
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|e| Error::Checkpoint(format!("bad parameter name: {e}")))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r)? as usize);
            }
            let step = read_u64(&mut r)?;
            let numel: usize = shape.iter().product();
            let value = Tensor::new(shape, read_f64s(&mut r, numel)?);
            let m = read_f64s(&mut r, numel)?;
            let v = read_f64s(&mut r, numel)?;
            store.register(&name, value)?;
            let param = store.parameter_mut(&name).expect("just registered");
            param.m = m;
            param.v = v;
            param.step = step;
        }
        Ok(store)
    }
}

fn write_f64s(w: &mut impl Write, data: &[f64]) -> Result<()> {
    for x in data {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
