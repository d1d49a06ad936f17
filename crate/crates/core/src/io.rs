//! Little-endian binary formats.
//!
//! * `.etsr` tensor: `"ETSR"`, u32 version, u8 dtype (0 = f32, 1 = f64), u32 rank,
//!   rank x u32 dims, row-major payload.
//! * `.evt` events: `"EVNT"`, u32 version, u32 count, u16 H, u16 W, f64 t0, f64 t1,
//!   then `count` records of `{f64 t, u16 x, u16 y, i8 polarity, i8 pad}`.
//! * checkpoint: `"EDCK"`, u32 version, u32 param count, then per parameter
//!   `{u16 name length, utf-8 name, u8 dtype, u32 rank, dims, payload}`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::events::{Event, EventStream};
use crate::tensor::{DType, Tensor, MAX_RANK};

pub const TENSOR_MAGIC: &[u8; 4] = b"ETSR";
pub const EVENTS_MAGIC: &[u8; 4] = b"EVNT";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EDCK";
pub const FORMAT_VERSION: u32 = 1;

struct LeReader<R> {
    inner: R,
}

impl<R: Read> LeReader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf)?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn i8(&mut self) -> Result<i8> {
        Ok(i8::from_le_bytes(self.bytes()?))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let found = self.bytes::<4>()?;
        if &found != magic {
            return Err(Error::Format(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&found)
            )));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn expect_end(&mut self) -> Result<()> {
        let mut extra = [0u8; 1];
        match self.inner.read(&mut extra)? {
            0 => Ok(()),
            _ => Err(Error::Format("trailing bytes after payload".into())),
        }
    }
}

fn write_tensor_body(w: &mut impl Write, t: &Tensor) -> Result<()> {
    w.write_all(&[t.dtype().tag()])?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    match t.dtype() {
        DType::F32 => {
            for &v in t.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        DType::F64 => {
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_tensor_body(r: &mut LeReader<impl Read>) -> Result<Tensor> {
    let dtype = DType::from_tag(r.u8()?)?;
    let rank = r.u32()? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("rank {rank} out of range")));
    }
    let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let numel: usize = shape.iter().product();
    let data = match dtype {
        DType::F32 => (0..numel).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?,
        DType::F64 => (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?,
    };
    let t = Tensor::new(&shape, data).map_err(|e| Error::Format(e.to_string()))?;
    Ok(match dtype {
        DType::F32 => t.into_f32(),
        DType::F64 => t,
    })
}

pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    write_tensor_body(w, t)
}

pub fn read_tensor(r: impl Read) -> Result<Tensor> {
    let mut r = LeReader { inner: r };
    r.header(TENSOR_MAGIC)?;
    let t = read_tensor_body(&mut r)?;
    r.expect_end()?;
    Ok(t)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    read_tensor(BufReader::new(File::open(path)?))
}

pub fn write_events(w: &mut impl Write, s: &EventStream) -> Result<()> {
    let count = u32::try_from(s.len()).map_err(|_| Error::Format("too many events".into()))?;
    let (t0, t1) = s.window();
    w.write_all(EVENTS_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    w.write_all(&s.height().to_le_bytes())?;
    w.write_all(&s.width().to_le_bytes())?;
    w.write_all(&t0.to_le_bytes())?;
    w.write_all(&t1.to_le_bytes())?;
    for e in s.events() {
        w.write_all(&e.t.to_le_bytes())?;
        w.write_all(&e.x.to_le_bytes())?;
        w.write_all(&e.y.to_le_bytes())?;
        w.write_all(&e.polarity.to_le_bytes())?;
        w.write_all(&[0u8])?;
    }
    Ok(())
}

pub fn read_events(r: impl Read) -> Result<EventStream> {
    let mut r = LeReader { inner: r };
    r.header(EVENTS_MAGIC)?;
    let count = r.u32()? as usize;
    let (h, w) = (r.u16()?, r.u16()?);
    let (t0, t1) = (r.f64()?, r.f64()?);
    let mut events = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let t = r.f64()?;
        let (x, y) = (r.u16()?, r.u16()?);
        let polarity = r.i8()?;
        let _pad = r.i8()?;
        events.push(Event { t, x, y, polarity });
    }
    r.expect_end()?;
    EventStream::new(h, w, t0, t1, events).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_events(path: impl AsRef<Path>, s: &EventStream) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_events(&mut w, s)?;
    w.flush()?;
    Ok(())
}

pub fn load_events(path: impl AsRef<Path>) -> Result<EventStream> {
    read_events(BufReader::new(File::open(path)?))
}

pub fn write_checkpoint<'a>(w: &mut impl Write, params: impl ExactSizeIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let count = u32::try_from(params.len()).map_err(|_| Error::Format("too many parameters".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for (name, t) in params {
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_tensor_body(w, t)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: impl Read) -> Result<Vec<(String, Tensor)>> {
    let mut r = LeReader { inner: r };
    r.header(CHECKPOINT_MAGIC)?;
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let mut name = vec![0u8; len];
        r.inner.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(format!("parameter name: {e}")))?;
        out.push((name, read_tensor_body(&mut r)?));
    }
    r.expect_end()?;
    Ok(out)
}
