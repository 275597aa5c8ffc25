//! Binary checkpoints.
//!
//! ```text
//! magic "TOMCKPT\0" | version u32 | descriptor (u32 len + UTF-8)
//! params  : u64 count, then arrays
//! buffers : u64 count, then arrays
//! optimizer flag u8; if 1: step u64, epoch u64, lr f64, m arrays, v arrays
//! sha256 of everything above (32 bytes)
//! ```
//! An array is a name (u32 len + UTF-8), a u64 length and that many f32 LE
//! values. All integers are little endian.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TOMCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    /// Training epochs completed when the checkpoint was taken.
    pub epoch: u64,
    pub lr: f64,
    pub m: Vec<NamedArray>,
    pub v: Vec<NamedArray>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub descriptor: String,
    pub params: Vec<NamedArray>,
    pub buffers: Vec<NamedArray>,
    pub optimizer: Option<OptimizerState>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_arrays(out: &mut Vec<u8>, arrays: &[NamedArray]) {
    out.extend_from_slice(&(arrays.len() as u64).to_le_bytes());
    for a in arrays {
        put_str(out, &a.name);
        out.extend_from_slice(&(a.values.len() as u64).to_le_bytes());
        for v in &a.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format("checkpoint", format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| Error::format("checkpoint", format!("implausible length {n}")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::format("checkpoint", "name is not UTF-8"))
    }

    fn arrays(&mut self) -> Result<Vec<NamedArray>> {
        let count = self.len()?;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let name = self.string()?;
            let n = self.len()?;
            let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format("checkpoint", "overflow"))?)?;
            let values = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            out.push(NamedArray { name, values });
        }
        Ok(out)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.descriptor);
        put_arrays(&mut out, &self.params);
        put_arrays(&mut out, &self.buffers);
        match &self.optimizer {
            None => out.push(0),
            Some(o) => {
                out.push(1);
                out.extend_from_slice(&o.step.to_le_bytes());
                out.extend_from_slice(&o.epoch.to_le_bytes());
                out.extend_from_slice(&o.lr.to_le_bytes());
                put_arrays(&mut out, &o.m);
                put_arrays(&mut out, &o.v);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 {
            return Err(Error::format("checkpoint", "file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum("checkpoint".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let descriptor = r.string()?;
        let params = r.arrays()?;
        let buffers = r.arrays()?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let epoch = r.u64()?;
                let lr = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
                let m = r.arrays()?;
                let v = r.arrays()?;
                Some(OptimizerState { step, epoch, lr, m, v })
            }
            f => return Err(Error::format("checkpoint", format!("bad optimizer flag {f}"))),
        };
        if r.pos != body.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(Checkpoint {
            descriptor,
            params,
            buffers,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        match fs::read(path) {
            Ok(bytes) => Self::from_bytes(&bytes),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(Error::MissingCheckpoint(path.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }
}
