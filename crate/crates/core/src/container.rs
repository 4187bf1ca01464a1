//! Self-describing little-endian binary container of named arrays.
//!
//! Layout: 4-byte magic, `u32` version, `u32` entry count, then per entry
//! `u32` name length, UTF-8 name, dtype byte (0 = f64, 1 = u64, 2 = text),
//! `u32` rank, `u64` dims, payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkernel::Tensor;

/// Cap on a single payload so a corrupt header cannot trigger a huge allocation.
const MAX_ELEMENTS: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    F64 { shape: Vec<usize>, data: Vec<f64> },
    U64 { shape: Vec<usize>, data: Vec<u64> },
    Text(String),
}

impl Value {
    pub fn from_tensor(t: &Tensor) -> Self {
        Value::F64 {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }

    pub fn scalar_u64(v: u64) -> Self {
        Value::U64 {
            shape: vec![1],
            data: vec![v],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub magic: [u8; 4],
    pub version: u32,
    entries: Vec<(String, Value)>,
}

impl Container {
    pub fn new(magic: [u8; 4], version: u32) -> Self {
        Self {
            magic,
            version,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Value) {
        self.entries.push((name.into(), value));
    }

    pub fn entries(&self) -> &[(String, Value)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Result<&Value> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::format(format!("missing entry '{name}'")))
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        match self.get(name)? {
            Value::F64 { shape, data } => {
                Tensor::new(shape.clone(), data.clone()).map_err(|e| Error::format(e.to_string()))
            }
            _ => Err(Error::format(format!("entry '{name}' is not f64"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<(Vec<usize>, Vec<u64>)> {
        match self.get(name)? {
            Value::U64 { shape, data } => Ok((shape.clone(), data.clone())),
            _ => Err(Error::format(format!("entry '{name}' is not u64"))),
        }
    }

    pub fn u64_scalar(&self, name: &str) -> Result<u64> {
        let (_, data) = self.u64s(name)?;
        match data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::format(format!("entry '{name}' is not a scalar"))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name)? {
            Value::Text(s) => Ok(s),
            _ => Err(Error::format(format!("entry '{name}' is not text"))),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.magic)?;
        w.write_all(&self.version.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, value) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let (dtype, shape): (u8, Vec<usize>) = match value {
                Value::F64 { shape, .. } => (0, shape.clone()),
                Value::U64 { shape, .. } => (1, shape.clone()),
                Value::Text(s) => (2, vec![s.len()]),
            };
            w.write_all(&[dtype])?;
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for d in &shape {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            match value {
                Value::F64 { data, .. } => {
                    for v in data {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                Value::U64 { data, .. } => {
                    for v in data {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                Value::Text(s) => w.write_all(s.as_bytes())?,
            }
        }
        Ok(())
    }

    /// Reads a container, checking the magic and exact version.
    pub fn read_from<R: Read>(r: &mut R, magic: [u8; 4], version: u32) -> Result<Self> {
        let mut m = [0u8; 4];
        read_exact(r, &mut m)?;
        if m != magic {
            return Err(Error::format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(&magic)
            )));
        }
        let found = read_u32(r)?;
        if found != version {
            return Err(Error::format(format!(
                "version {found} is not supported (expected {version})"
            )));
        }
        let count = read_u32(r)?;
        let mut c = Container::new(magic, version);
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            if name_len > 4096 {
                return Err(Error::format("entry name too long"));
            }
            let mut name = vec![0u8; name_len];
            read_exact(r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::format("entry name is not UTF-8"))?;
            let mut dtype = [0u8; 1];
            read_exact(r, &mut dtype)?;
            let rank = read_u32(r)? as usize;
            if rank > 8 {
                return Err(Error::format(format!("entry '{name}' has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut n: u64 = 1;
            for _ in 0..rank {
                let d = read_u64(r)?;
                n = n
                    .checked_mul(d)
                    .filter(|&n| n <= MAX_ELEMENTS)
                    .ok_or_else(|| Error::format(format!("entry '{name}' is too large")))?;
                shape.push(d as usize);
            }
            let n = n as usize;
            let value = match dtype[0] {
                0 => {
                    let mut data = Vec::with_capacity(n);
                    for _ in 0..n {
                        data.push(f64::from_le_bytes(read_array(r)?));
                    }
                    Value::F64 { shape, data }
                }
                1 => {
                    let mut data = Vec::with_capacity(n);
                    for _ in 0..n {
                        data.push(read_u64(r)?);
                    }
                    Value::U64 { shape, data }
                }
                2 => {
                    if rank != 1 {
                        return Err(Error::format(format!("text entry '{name}' must be rank 1")));
                    }
                    let mut bytes = vec![0u8; n];
                    read_exact(r, &mut bytes)?;
                    Value::Text(
                        String::from_utf8(bytes).map_err(|_| Error::format(format!("entry '{name}' is not UTF-8")))?,
                    )
                }
                d => return Err(Error::format(format!("entry '{name}' has unknown dtype {d}"))),
            };
            c.entries.push((name, value));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::format("trailing bytes after last entry"));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, magic: [u8; 4], version: u32) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r, magic, version).map_err(|e| match e {
            Error::Format { reason, .. } => Error::Format {
                path: Some(path.to_path_buf()),
                reason,
            },
            other => other,
        })
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format("truncated file"),
        _ => Error::Io(e),
    })
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    read_exact(r, &mut b)?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}
