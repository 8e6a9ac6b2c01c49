//! Binary and CSV encodings of models, wavefields and shot records.
//!
//! Model files: magic `WARI`, `u32 nx`, `u32 nz`, `f64 dx, dz, x0, z0`, then
//! `nx·nz` little-endian `f64` values in storage order (z fastest).
//! Wavefield files use the same header followed by `u32 blocks` and each
//! block as interleaved `(re, im)` pairs. Shot files: magic `WARI`,
//! `u32 n_r`, `u32 n_s`, `f64 frequency`, then `n_r·n_s` interleaved
//! `(re, im)` pairs, receiver fastest.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::helmholtz::{ShotData, Wavefield};
use crate::scalar::{Real, C};

pub const MAGIC: &[u8; 4] = b"WARI";

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64<T: Real>(out: &mut Vec<u8>, v: T) {
    out.extend_from_slice(&v.as_f64().to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Result<Self> {
        if buf.len() < 4 || &buf[..4] != MAGIC {
            return Err(Error::Format("missing WARI magic".into()));
        }
        Ok(Self { buf, pos: 4 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(Error::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn grid_header<T: Real>(grid: &Grid2D<T>) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, grid.nx)?;
    put_u32(&mut out, grid.nz)?;
    for v in [grid.dx, grid.dz, grid.x0, grid.z0] {
        put_f64(&mut out, v);
    }
    Ok(out)
}

fn read_grid<T: Real>(r: &mut Reader) -> Result<Grid2D<T>> {
    let (nx, nz) = (r.u32()?, r.u32()?);
    let (dx, dz, x0, z0) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    Grid2D::with_origin(nx, nz, T::of(dx), T::of(dz), T::of(x0), T::of(z0))
}

/// Encodes one real value per node.
pub fn encode_field<T: Real>(grid: &Grid2D<T>, values: &[T]) -> Result<Vec<u8>> {
    if values.len() != grid.len() {
        return Err(Error::Shape { expected: grid.len(), got: values.len() });
    }
    let mut out = grid_header(grid)?;
    out.reserve(8 * values.len());
    for &v in values {
        put_f64(&mut out, v);
    }
    Ok(out)
}

pub fn decode_field<T: Real>(buf: &[u8]) -> Result<(Grid2D<T>, Vec<T>)> {
    let mut r = Reader::new(buf)?;
    let grid = read_grid(&mut r)?;
    let values = (0..grid.len()).map(|_| r.f64().map(T::of)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok((grid, values))
}

pub fn field_to_csv<T: Real>(grid: &Grid2D<T>, values: &[T]) -> String {
    let mut s = String::from("ix,iz,x,z,value\n");
    for (i, v) in values.iter().enumerate() {
        let (ix, iz) = grid.coords_of(i);
        let (x, z) = grid.position(ix, iz);
        s += &format!("{ix},{iz},{x},{z},{v:.17e}\n");
    }
    s
}

pub fn encode_wavefield<T: Real>(u: &Wavefield<T>) -> Result<Vec<u8>> {
    let mut out = grid_header(u.grid())?;
    put_u32(&mut out, u.blocks())?;
    for z in u.as_slice() {
        put_f64(&mut out, z.re);
        put_f64(&mut out, z.im);
    }
    Ok(out)
}

pub fn decode_wavefield<T: Real>(buf: &[u8]) -> Result<Wavefield<T>> {
    let mut r = Reader::new(buf)?;
    let grid = read_grid(&mut r)?;
    let blocks = r.u32()?;
    let data = (0..grid.len() * blocks)
        .map(|_| Ok(C::new(T::of(r.f64()?), T::of(r.f64()?))))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Wavefield::from_vec(grid, blocks, data)
}

pub fn encode_shots<T: Real>(d: &ShotData<T>, frequency: T) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, d.n_receivers())?;
    put_u32(&mut out, d.blocks())?;
    put_f64(&mut out, frequency);
    for z in d.as_slice() {
        put_f64(&mut out, z.re);
        put_f64(&mut out, z.im);
    }
    Ok(out)
}

/// Returns the records and their frequency in Hz.
pub fn decode_shots<T: Real>(buf: &[u8]) -> Result<(ShotData<T>, T)> {
    let mut r = Reader::new(buf)?;
    let (n_r, n_s) = (r.u32()?, r.u32()?);
    let freq = T::of(r.f64()?);
    let data = (0..n_r * n_s)
        .map(|_| Ok(C::new(T::of(r.f64()?), T::of(r.f64()?))))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok((ShotData::from_vec(n_r, n_s, data)?, freq))
}

pub fn write_bytes(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

pub fn read_bytes(path: &std::path::Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}
