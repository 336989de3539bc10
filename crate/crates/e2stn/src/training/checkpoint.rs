//! Versioned binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic        b"E2STN\0"
//! version      u16 = 1
//! config_len   u32, then that many bytes of config JSON
//! config_hash  u64 (FNV-1a of the config bytes)
//! epoch        u64
//! rng_state    u64
//! n_params     u32
//!   per entry: name_len u32 + UTF-8 name, frozen u8,
//!              ndims u32, dims u32...,
//!              numel f64 values (row-major)
//! adam_step    u64
//! n_moments    u32
//!   per entry: name_len u32 + name, len u32, m f64..., v f64...
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::array::{Array, ParamStore};
use crate::error::{Error, Result};
use crate::training::adam::AdamState;

pub const MAGIC: &[u8; 6] = b"E2STN\0";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x1_0000_0000_01b3);
    }
    hash
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_json: String,
    pub epoch: u64,
    pub rng_state: u64,
    pub params: ParamStore,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn config_hash(&self) -> u64 {
        fnv1a64(self.config_json.as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let cfg = self.config_json.as_bytes();
        out.write_all(&(cfg.len() as u32).to_le_bytes())?;
        out.write_all(cfg)?;
        out.write_all(&self.config_hash().to_le_bytes())?;
        out.write_all(&self.epoch.to_le_bytes())?;
        out.write_all(&self.rng_state.to_le_bytes())?;

        out.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, array, frozen) in self.params.iter() {
            write_name(&mut out, name)?;
            out.write_all(&[frozen as u8])?;
            out.write_all(&(array.shape.len() as u32).to_le_bytes())?;
            for &d in &array.shape {
                out.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in &array.data {
                out.write_all(&v.to_le_bytes())?;
            }
        }

        out.write_all(&self.adam.step.to_le_bytes())?;
        out.write_all(&(self.adam.m.len() as u32).to_le_bytes())?;
        for (name, m) in &self.adam.m {
            let v = self.adam.v.get(name).ok_or_else(|| {
                Error::Training(format!("missing second moment for `{name}`"))
            })?;
            write_name(&mut out, name)?;
            out.write_all(&(m.len() as u32).to_le_bytes())?;
            for x in m {
                out.write_all(&x.to_le_bytes())?;
            }
            for x in v {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = File::open(path).map_err(|e| Error::Format {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let mut r = BufReader::new(file);
        let ferr = |msg: &str| Error::Format {
            path: path.display().to_string(),
            msg: msg.to_string(),
        };

        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(|_| ferr("truncated header"))?;
        if &magic != MAGIC {
            return Err(ferr("bad magic bytes"));
        }
        let version = read_u16(&mut r).map_err(|_| ferr("truncated header"))?;
        if version != CHECKPOINT_VERSION {
            return Err(ferr(&format!("unsupported checkpoint version {version}")));
        }
        let cfg_len = read_u32(&mut r).map_err(|_| ferr("truncated header"))? as usize;
        let mut cfg = vec![0u8; cfg_len];
        r.read_exact(&mut cfg).map_err(|_| ferr("truncated config"))?;
        let config_json = String::from_utf8(cfg).map_err(|_| ferr("config is not UTF-8"))?;
        let stored_hash = read_u64(&mut r).map_err(|_| ferr("truncated header"))?;
        if stored_hash != fnv1a64(config_json.as_bytes()) {
            return Err(ferr("config hash mismatch"));
        }
        let epoch = read_u64(&mut r).map_err(|_| ferr("truncated header"))?;
        let rng_state = read_u64(&mut r).map_err(|_| ferr("truncated header"))?;

        let n_params = read_u32(&mut r).map_err(|_| ferr("truncated params"))?;
        let mut params = ParamStore::new();
        for _ in 0..n_params {
            let name = read_name(&mut r).map_err(|_| ferr("truncated param name"))?;
            let mut fbuf = [0u8; 1];
            r.read_exact(&mut fbuf).map_err(|_| ferr("truncated param"))?;
            let ndims = read_u32(&mut r).map_err(|_| ferr("truncated param"))? as usize;
            let mut shape = Vec::with_capacity(ndims);
            for _ in 0..ndims {
                shape.push(read_u32(&mut r).map_err(|_| ferr("truncated param"))? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = vec![0.0; numel];
            read_f64s(&mut r, &mut data).map_err(|_| ferr("truncated param data"))?;
            params.insert_with_frozen(&name, Array::new(shape, data)?, fbuf[0] != 0);
        }

        let mut adam = AdamState::new();
        adam.step = read_u64(&mut r).map_err(|_| ferr("truncated optimizer state"))?;
        let n_moments = read_u32(&mut r).map_err(|_| ferr("truncated optimizer state"))?;
        for _ in 0..n_moments {
            let name = read_name(&mut r).map_err(|_| ferr("truncated moment name"))?;
            let len = read_u32(&mut r).map_err(|_| ferr("truncated moment"))? as usize;
            let mut m = vec![0.0; len];
            read_f64s(&mut r, &mut m).map_err(|_| ferr("truncated moment data"))?;
            let mut v = vec![0.0; len];
            read_f64s(&mut r, &mut v).map_err(|_| ferr("truncated moment data"))?;
            adam.m.insert(name.clone(), m);
            adam.v.insert(name, v);
        }

        Ok(Checkpoint {
            config_json,
            epoch,
            rng_state,
            params,
            adam,
        })
    }
}

fn write_name(out: &mut impl Write, name: &str) -> Result<()> {
    out.write_all(&(name.len() as u32).to_le_bytes())?;
    out.write_all(name.as_bytes())?;
    Ok(())
}

fn read_name(r: &mut impl Read) -> std::io::Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(String::from_utf8_lossy(&buf).into_owned())
}

fn read_u16(r: &mut impl Read) -> std::io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, out: &mut [f64]) -> std::io::Result<()> {
    let mut b = [0u8; 8];
    for v in out.iter_mut() {
        r.read_exact(&mut b)?;
        *v = f64::from_le_bytes(b);
    }
    Ok(())
}
