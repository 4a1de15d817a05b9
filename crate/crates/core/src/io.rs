//! The NDIV volume format and PGM slice export.
//!
//! Layout: the 4 magic bytes `NDIV`, a little-endian `u32` header length, a
//! UTF-8 JSON header `{elem, shape, axes, spacing}`, then the raw row-major
//! little-endian payload. Booleans are stored as one byte each (0 or 1).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Buffer, ElemKind, NdImage};

pub const MAGIC: &[u8; 4] = b"NDIV";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub elem: ElemKind,
    pub shape: Vec<usize>,
    pub axes: String,
    pub spacing: Option<Vec<f64>>,
}

/// Axis letters used when the caller does not name them.
pub fn default_axes(ndim: usize) -> String {
    match ndim {
        1 => "X".into(),
        2 => "YX".into(),
        3 => "ZYX".into(),
        4 => "CZYX".into(),
        n => (0..n).map(|i| char::from(b'A' + i as u8)).collect(),
    }
}

pub fn write_volume(path: impl AsRef<Path>, img: &NdImage) -> Result<()> {
    write_volume_with_axes(path, img, &default_axes(img.ndim()))
}

pub fn write_volume_with_axes(path: impl AsRef<Path>, img: &NdImage, axes: &str) -> Result<()> {
    let bytes = encode(img, axes)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<NdImage> {
    Ok(read_volume_with_axes(path)?.0)
}

pub fn read_volume_with_axes(path: impl AsRef<Path>) -> Result<(NdImage, String)> {
    decode(&fs::read(path)?)
}

/// Serializes an image into NDIV bytes.
pub fn encode(img: &NdImage, axes: &str) -> Result<Vec<u8>> {
    if axes.chars().count() != img.ndim() {
        return Err(Error::HeaderMismatch(format!("axes {axes:?} for a {}-D image", img.ndim())));
    }
    let header = VolumeHeader {
        elem: img.elem(),
        shape: img.shape().to_vec(),
        axes: axes.to_string(),
        spacing: img.spacing().map(|s| s.to_vec()),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::HeaderMismatch(e.to_string()))?;
    let mut out = Vec::with_capacity(8 + json.len() + img.len() * img.elem().size_bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    match img.buffer() {
        Buffer::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Buffer::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Buffer::Label(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Buffer::Bool(v) => out.extend(v.iter().map(|&b| b as u8)),
    }
    Ok(out)
}

/// Parses NDIV bytes; returns the image and its axis letters.
pub fn decode(bytes: &[u8]) -> Result<(NdImage, String)> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let hend = 8usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::HeaderMismatch(format!("header length {hlen} exceeds file size")))?;
    let header: VolumeHeader =
        serde_json::from_slice(&bytes[8..hend]).map_err(|e| Error::HeaderMismatch(e.to_string()))?;
    if header.axes.chars().count() != header.shape.len() {
        return Err(Error::HeaderMismatch(format!("axes {:?} vs shape {:?}", header.axes, header.shape)));
    }
    if header.shape.is_empty() || header.shape.contains(&0) {
        return Err(Error::HeaderMismatch(format!("invalid shape {:?}", header.shape)));
    }
    let payload = &bytes[hend..];
    let n: usize = header.shape.iter().product();
    let expected = n * header.elem.size_bytes();
    if payload.len() != expected {
        return Err(Error::TruncatedPayload { expected, found: payload.len() });
    }
    let buffer = match header.elem {
        ElemKind::F32 => {
            Buffer::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        }
        ElemKind::U16 => {
            Buffer::U16(payload.chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().unwrap())).collect())
        }
        ElemKind::Label => {
            Buffer::Label(payload.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
        }
        ElemKind::Bool => Buffer::Bool(payload.iter().map(|&b| b != 0).collect()),
    };
    let mut img = NdImage::new(header.shape, buffer)?;
    if let Some(s) = header.spacing {
        img = img.with_spacing(s).map_err(|_| Error::HeaderMismatch("invalid spacing".into()))?;
    }
    Ok((img, header.axes))
}

/// Writes one plane of a 3-D image (or a whole 2-D image, `index` 0) as an
/// 8-bit binary PGM with min-max scaling.
pub fn export_slice(img: &NdImage, axis: usize, index: usize, path: impl AsRef<Path>) -> Result<()> {
    let (h, w, plane) = slice_plane(img, axis, index)?;
    let (lo, hi) = plane.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(l, u), &v| (l.min(v), u.max(v)));
    let range = hi - lo;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(plane.iter().map(|&v| if range > 0.0 { ((v - lo) / range * 255.0).round() as u8 } else { 0 }));
    fs::write(path, out)?;
    Ok(())
}

fn slice_plane(img: &NdImage, axis: usize, index: usize) -> Result<(usize, usize, Vec<f32>)> {
    let v = img.values_f32();
    let s = img.shape();
    match s.len() {
        2 if index == 0 => Ok((s[0], s[1], v.into_owned())),
        3 if axis < 3 && index < s[axis] => {
            let keep: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
            let (h, w) = (s[keep[0]], s[keep[1]]);
            let mut plane = Vec::with_capacity(h * w);
            let mut c = [0usize; 3];
            c[axis] = index;
            for i in 0..h {
                for j in 0..w {
                    c[keep[0]] = i;
                    c[keep[1]] = j;
                    plane.push(v[(c[0] * s[1] + c[1]) * s[2] + c[2]]);
                }
            }
            Ok((h, w, plane))
        }
        _ => Err(Error::BadShape(format!("cannot take slice {index} along axis {axis} of shape {s:?}"))),
    }
}
