//! NTA1 named-tensor archives.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "NTA1"  u32 count
//! count × { u16 name_len, name (UTF-8), u8 rank, rank × u64 dim, numel × f32 }
//! ```
//!
//! Entries are written in name order. Readers reject trailing bytes.

use std::fs;
use std::path::Path;

use crate::models::Parameters;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NTA1";

pub fn encode(params: &Parameters) -> Result<Vec<u8>> {
    let payload: usize = params.iter().map(|(n, t)| 2 + n.len() + 1 + 8 * t.rank() + 4 * t.numel()).sum();
    let mut out = Vec::with_capacity(8 + payload);
    out.extend_from_slice(MAGIC);
    let count = u32::try_from(params.len()).map_err(|_| Error::Contract("too many tensors for one archive".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in params.iter() {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Contract(format!("tensor name of {} bytes is too long", name.len())))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Contract(format!("`{name}` has rank {}", t.rank())))?;
        out.push(rank);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Parameters> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected `NTA1`"));
    }
    let count = r.u32("entry count")?;
    let mut params = Parameters::new();
    for _ in 0..count {
        let start = r.pos;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::format(start + 2, "tensor name is not UTF-8"))?
            .to_string();
        let rank_at = r.pos;
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let at = r.pos;
            let d = r.u64("dimension")?;
            if d == 0 {
                return Err(Error::format(at, format!("`{name}` has a zero extent")));
            }
            let d = usize::try_from(d).map_err(|_| Error::format(at, "extent overflows"))?;
            numel = numel.checked_mul(d).ok_or_else(|| Error::format(at, "element count overflows"))?;
            shape.push(d);
        }
        let bytes = numel.checked_mul(4).ok_or_else(|| Error::format(rank_at, "payload size overflows"))?;
        let raw = r.take(bytes, "payload")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::format(rank_at, e.to_string()))?;
        if params.insert(name.clone(), t).is_some() {
            return Err(Error::format(start, format!("duplicate tensor name `{name}`")));
        }
    }
    if r.pos != buf.len() {
        return Err(Error::format(r.pos, format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(params)
}

pub fn write_archive(params: &Parameters, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(params)?).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<Parameters> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
