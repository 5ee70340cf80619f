//! Checkpoint container: magic `SLCC`, a `u32` version, then array
//! records until a trailing CRC32 of everything before it. A record is
//! `u32` name length, UTF-8 name, `u8` dtype code, `u32` rank, `u64`
//! extents, `u8` trainable flag, and the little-endian payload. All
//! integers are little-endian.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{DType, Scalar};

pub const MAGIC: &[u8; 4] = b"SLCC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DTypeCode {
    F32 = 0,
    F64 = 1,
    U64 = 2,
    U8 = 3,
}

impl DTypeCode {
    fn from_u8(c: u8) -> Result<Self> {
        Ok(match c {
            0 => DTypeCode::F32,
            1 => DTypeCode::F64,
            2 => DTypeCode::U64,
            3 => DTypeCode::U8,
            _ => return Err(Error::Checkpoint(format!("unknown dtype code {c}"))),
        })
    }

    pub fn size(self) -> usize {
        match self {
            DTypeCode::F32 => 4,
            DTypeCode::F64 | DTypeCode::U64 => 8,
            DTypeCode::U8 => 1,
        }
    }

    fn of<T: Scalar>() -> Self {
        match T::DTYPE {
            DType::F32 => DTypeCode::F32,
            DType::F64 => DTypeCode::F64,
        }
    }
}

/// One named array with its raw little-endian payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub name: String,
    pub dtype: DTypeCode,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub payload: Vec<u8>,
}

impl Record {
    pub fn scalars<T: Scalar>(name: impl Into<String>, shape: &[usize], trainable: bool, data: &[T]) -> Self {
        let mut payload = Vec::with_capacity(data.len() * T::DTYPE.size());
        for &v in data {
            v.write_le(&mut payload);
        }
        Record {
            name: name.into(),
            dtype: DTypeCode::of::<T>(),
            shape: shape.to_vec(),
            trainable,
            payload,
        }
    }

    pub fn u64s(name: impl Into<String>, data: &[u64]) -> Self {
        Record {
            name: name.into(),
            dtype: DTypeCode::U64,
            shape: vec![data.len()],
            trainable: false,
            payload: data.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn bytes(name: impl Into<String>, data: &[u8]) -> Self {
        Record {
            name: name.into(),
            dtype: DTypeCode::U8,
            shape: vec![data.len()],
            trainable: false,
            payload: data.to_vec(),
        }
    }

    fn expect(&self, dtype: DTypeCode) -> Result<()> {
        if self.dtype != dtype {
            return Err(Error::Checkpoint(format!(
                "array {} has dtype {:?}, expected {dtype:?}",
                self.name, self.dtype
            )));
        }
        Ok(())
    }

    pub fn to_scalars<T: Scalar>(&self) -> Result<Vec<T>> {
        self.expect(DTypeCode::of::<T>())?;
        Ok(self.payload.chunks_exact(T::DTYPE.size()).map(T::read_le).collect())
    }

    pub fn to_u64s(&self) -> Result<Vec<u64>> {
        self.expect(DTypeCode::U64)?;
        Ok(self
            .payload
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn to_bytes(&self) -> Result<&[u8]> {
        self.expect(DTypeCode::U8)?;
        Ok(&self.payload)
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn encode(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.dtype as u8);
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &e in &r.shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        out.push(r.trainable as u8);
        out.extend_from_slice(&r.payload);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    if bytes.len() < 12 {
        return Err(Error::Checkpoint("file too short to be a checkpoint".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint(
            "checksum mismatch (corrupt or truncated file)".into(),
        ));
    }
    let mut cur = Cursor { buf: body, pos: 8 };
    let mut out = Vec::new();
    while cur.pos < body.len() {
        let name_len = cur.u32("name length")? as usize;
        let name = String::from_utf8(cur.take(name_len, "name")?.to_vec())
            .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
        let dtype = DTypeCode::from_u8(cur.u8("dtype")?)?;
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(cur.u64("extent")? as usize);
        }
        let trainable = match cur.u8("trainable flag")? {
            0 => false,
            1 => true,
            f => return Err(Error::Checkpoint(format!("bad trainable flag {f} on {name}"))),
        };
        let n = shape
            .iter()
            .try_fold(dtype.size(), |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::Checkpoint(format!("array {name} is impossibly large")))?;
        let payload = cur.take(n, &name)?.to_vec();
        out.push(Record {
            name,
            dtype,
            shape,
            trainable,
            payload,
        });
    }
    Ok(out)
}

/// Writes via a temporary sibling and a rename, so readers never see a
/// partial file.
pub fn write_checkpoint(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    let bytes = encode(records);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
