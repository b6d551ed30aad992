//! Little-endian binary files: skinning templates, skinning grids and
//! contact maps. Each starts with a four-byte magic and a `u32` version.

use std::path::Path;

use graspsplat_core::contact::{AccumulatedContact, AccumulationMode, ContactMap};
use graspsplat_core::math::Aabb;
use graspsplat_core::skinning::{SkinningGrid, WeightedTemplate};
use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::fsio::read_bytes;

pub const TEMPLATE_MAGIC: &[u8; 4] = b"GSTP";
pub const GRID_MAGIC: &[u8; 4] = b"GSGD";
pub const CONTACT_MAGIC: &[u8; 4] = b"GSCT";
pub const VERSION: u32 = 1;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn header(magic: &[u8; 4]) -> Self {
        let mut w = Writer(magic.to_vec());
        w.u32(VERSION);
        w
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.0.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn open(path: &'a Path, bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        let mut r = Reader { path, bytes, at: 0 };
        if r.take(4)? != magic {
            return Err(Error::format(path, format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        Ok(r)
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "file is truncated"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
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
    fn count(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).ok().filter(|n| *n <= self.bytes.len() * 8).ok_or_else(|| Error::format(self.path, format!("implausible count {v}")))
    }
    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn finish(self) -> Result<()> {
        if self.at != self.bytes.len() {
            return Err(Error::format(self.path, format!("{} trailing bytes", self.bytes.len() - self.at)));
        }
        Ok(())
    }
    fn core<T>(&self, r: graspsplat_core::Result<T>) -> Result<T> {
        r.map_err(|source| Error::InvalidFile { path: self.path.to_path_buf(), source })
    }
}

/// Header `M, B` as `u64`, then `M x 3` positions and `M x B` weights as
/// `f32`.
pub fn encode_template(t: &WeightedTemplate) -> Vec<u8> {
    let mut w = Writer::header(TEMPLATE_MAGIC);
    w.u64(t.points.len() as u64);
    w.u64(t.bones as u64);
    for p in &t.points {
        p.iter().for_each(|v| w.f32(*v));
    }
    t.weights.iter().for_each(|v| w.f32(*v));
    w.0
}

pub fn decode_template(path: &Path, bytes: &[u8]) -> Result<WeightedTemplate> {
    let mut r = Reader::open(path, bytes, TEMPLATE_MAGIC)?;
    let (m, b) = (r.count()?, r.count()?);
    let mut points = Vec::with_capacity(m);
    for _ in 0..m {
        points.push(Vector3::new(r.f32()?, r.f32()?, r.f32()?));
    }
    let weights = (0..m * b).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let t = WeightedTemplate::new(points, weights, b);
    Reader { path, bytes, at: 0 }.core(t)
}

pub fn read_template(path: &Path) -> Result<WeightedTemplate> {
    decode_template(path, &read_bytes(path)?)
}

/// Dims and bone count as `u64`, bounds as `f64`, then the distinct weight
/// rows (`u64` count, `f32` values) and one `u32` row index per voxel.
pub fn encode_grid(g: &SkinningGrid) -> Vec<u8> {
    let mut w = Writer::header(GRID_MAGIC);
    g.dims().iter().for_each(|d| w.u64(*d as u64));
    w.u64(g.bone_count() as u64);
    let b = g.bounds();
    b.min.iter().chain(b.max.iter()).for_each(|v| w.f64(*v));
    w.u64((g.palette().len() / g.bone_count().max(1)) as u64);
    g.palette().iter().for_each(|v| w.f32(*v));
    g.voxel_rows().iter().for_each(|v| w.u32(*v));
    w.0
}

pub fn decode_grid(path: &Path, bytes: &[u8]) -> Result<SkinningGrid> {
    let mut r = Reader::open(path, bytes, GRID_MAGIC)?;
    let dims = [r.count()?, r.count()?, r.count()?];
    let bones = r.count()?;
    let min = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
    let max = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
    let rows = r.count()?;
    let palette = (0..rows * bones).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    let voxels = dims.iter().try_fold(1usize, |a, d| a.checked_mul(*d));
    let voxels = voxels.ok_or_else(|| Error::format(path, "grid dims overflow"))?;
    let voxel_rows = (0..voxels).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let g = SkinningGrid::from_palette(dims, Aabb::new(min, max), bones, palette, voxel_rows);
    Reader { path, bytes, at: 0 }.core(g)
}

pub fn read_grid(path: &Path) -> Result<SkinningGrid> {
    decode_grid(path, &read_bytes(path)?)
}

/// A contact file holds either one frame or an accumulation.
#[derive(Debug, Clone, PartialEq)]
pub enum ContactFile {
    Instantaneous(ContactMap),
    Accumulated(AccumulatedContact),
}

const KIND_INSTANTANEOUS: u8 = 0;
const KIND_ACCUMULATED: u8 = 1;

fn mode_code(m: AccumulationMode) -> u8 {
    match m {
        AccumulationMode::Intensity => 0,
        AccumulationMode::Distance => 1,
    }
}

/// Kind and mode bytes, `N_hand`, `N_object` as `u64`, `tau` as `f64`,
/// frame count `u64`, then per side: one flag byte per Gaussian, `f64`
/// values and (accumulated only) `u64` hit counts.
pub fn encode_contact(c: &ContactFile) -> Vec<u8> {
    let mut w = Writer::header(CONTACT_MAGIC);
    match c {
        ContactFile::Instantaneous(m) => {
            w.u8(KIND_INSTANTANEOUS);
            w.u8(0);
            w.u64(m.hand_flags.len() as u64);
            w.u64(m.object_flags.len() as u64);
            w.f64(m.tau);
            w.u64(1);
            for (flags, values) in [(&m.hand_flags, &m.hand_values), (&m.object_flags, &m.object_values)] {
                flags.iter().for_each(|f| w.u8(*f as u8));
                values.iter().for_each(|v| w.f64(*v));
            }
        }
        ContactFile::Accumulated(a) => {
            w.u8(KIND_ACCUMULATED);
            w.u8(mode_code(a.mode));
            w.u64(a.hand_values.len() as u64);
            w.u64(a.object_values.len() as u64);
            w.f64(a.tau);
            w.u64(a.frames);
            for (hits, values) in [(&a.hand_hits, &a.hand_values), (&a.object_hits, &a.object_values)] {
                hits.iter().for_each(|h| w.u8((*h > 0) as u8));
                values.iter().for_each(|v| w.f64(*v));
                hits.iter().for_each(|h| w.u64(*h));
            }
        }
    }
    w.0
}

pub fn decode_contact(path: &Path, bytes: &[u8]) -> Result<ContactFile> {
    let mut r = Reader::open(path, bytes, CONTACT_MAGIC)?;
    let kind = r.u8()?;
    let mode = match r.u8()? {
        0 => AccumulationMode::Intensity,
        1 => AccumulationMode::Distance,
        m => return Err(Error::format(path, format!("unknown accumulation mode {m}"))),
    };
    let (nh, no) = (r.count()?, r.count()?);
    let tau = r.f64()?;
    let frames = r.u64()?;
    let flags = |r: &mut Reader, n: usize| {
        (0..n)
            .map(|_| match r.u8()? {
                0 => Ok(false),
                1 => Ok(true),
                f => Err(Error::format(r.path, format!("flag byte {f}"))),
            })
            .collect::<Result<Vec<_>>>()
    };
    let values = |r: &mut Reader, n: usize| (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>();
    let hits = |r: &mut Reader, n: usize| (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>();
    let out = match kind {
        KIND_INSTANTANEOUS => {
            let (hand_flags, hand_values) = (flags(&mut r, nh)?, values(&mut r, nh)?);
            let (object_flags, object_values) = (flags(&mut r, no)?, values(&mut r, no)?);
            ContactFile::Instantaneous(ContactMap { tau, hand_flags, hand_values, object_flags, object_values })
        }
        KIND_ACCUMULATED => {
            let hf = flags(&mut r, nh)?;
            let (hand_values, hand_hits) = (values(&mut r, nh)?, hits(&mut r, nh)?);
            let of = flags(&mut r, no)?;
            let (object_values, object_hits) = (values(&mut r, no)?, hits(&mut r, no)?);
            let consistent = |f: &[bool], h: &[u64]| f.iter().zip(h).all(|(f, h)| *f == (*h > 0));
            if !consistent(&hf, &hand_hits) || !consistent(&of, &object_hits) {
                return Err(Error::format(path, "contact flags disagree with hit counts"));
            }
            ContactFile::Accumulated(AccumulatedContact {
                tau,
                mode,
                frames,
                hand_values,
                hand_hits,
                object_values,
                object_hits,
            })
        }
        k => return Err(Error::format(path, format!("unknown contact kind {k}"))),
    };
    r.finish()?;
    Ok(out)
}

pub fn read_contact(path: &Path) -> Result<ContactFile> {
    decode_contact(path, &read_bytes(path)?)
}
