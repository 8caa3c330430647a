//! Raw planar YUV files.
//!
//! Each frame is stored as Y, then Cb, then Cr, row by row with no padding.
//! 8-bit samples take one byte; deeper samples take a 16-bit little-endian
//! word with only the low `bit_depth` bits significant.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::frame::{check_geometry, max_sample, ChromaFormat, Frame};
use crate::error::{Error, Result};

/// Geometry shared by every frame of a raw YUV file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct YuvGeometry {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
    pub format: ChromaFormat,
}

impl YuvGeometry {
    pub fn new(width: usize, height: usize, bit_depth: u8, format: ChromaFormat) -> Self {
        YuvGeometry {
            width,
            height,
            bit_depth,
            format,
        }
    }

    pub fn of(frame: &Frame) -> Self {
        YuvGeometry::new(frame.width(), frame.height(), frame.bit_depth(), frame.format())
    }

    pub fn frame_bytes(&self) -> usize {
        Frame::byte_size(self.width, self.height, self.bit_depth, self.format)
    }

    fn validate(&self) -> Result<()> {
        check_geometry(self.width, self.height, self.bit_depth, self.format)
    }
}

/// Decode `frame_count` frames from an in-memory raw buffer.
pub fn decode_frames(bytes: &[u8], geom: &YuvGeometry, frame_count: usize) -> Result<Vec<Frame>> {
    geom.validate()?;
    let frame_bytes = geom.frame_bytes();
    let needed = frame_bytes * frame_count;
    if bytes.len() < needed {
        return Err(Error::Truncated(format!(
            "{frame_count} frame(s) of {}x{} {}-bit {} need {needed} bytes, got {}",
            geom.width,
            geom.height,
            geom.bit_depth,
            geom.format,
            bytes.len()
        )));
    }
    let (cw, ch) = geom.format.chroma_dims(geom.width, geom.height);
    let lens = [geom.width * geom.height, cw * ch, cw * ch];
    let wide = geom.bit_depth > 8;
    let max = max_sample(geom.bit_depth);

    let mut frames = Vec::with_capacity(frame_count);
    for (index, chunk) in bytes[..needed].chunks_exact(frame_bytes).enumerate() {
        let mut offset = 0;
        let mut planes: [Vec<u16>; 3] = Default::default();
        for (p, &len) in planes.iter_mut().zip(&lens) {
            *p = if wide {
                let raw = &chunk[offset..offset + 2 * len];
                offset += 2 * len;
                raw.chunks_exact(2)
                    .map(|b| u16::from_le_bytes([b[0], b[1]]))
                    .collect()
            } else {
                let raw = &chunk[offset..offset + len];
                offset += len;
                raw.iter().map(|&b| b as u16).collect()
            };
            if let Some(s) = p.iter().find(|&&s| s > max) {
                return Err(Error::Range(format!(
                    "frame {index}: sample {s} exceeds {}-bit maximum {max}",
                    geom.bit_depth
                )));
            }
        }
        frames.push(Frame::new(
            geom.width,
            geom.height,
            geom.bit_depth,
            geom.format,
            planes,
        )?);
    }
    Ok(frames)
}

/// Encode frames into the raw planar layout.
pub fn encode_frames(frames: &[Frame]) -> Result<Vec<u8>> {
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let geom = YuvGeometry::of(first);
    let mut out = Vec::with_capacity(geom.frame_bytes() * frames.len());
    for f in frames {
        if YuvGeometry::of(f) != geom {
            return Err(Error::Dimension(format!(
                "mixed geometries in one file: {:?} vs {:?}",
                YuvGeometry::of(f),
                geom
            )));
        }
        for plane in f.planes() {
            if geom.bit_depth > 8 {
                for &s in plane {
                    out.extend_from_slice(&s.to_le_bytes());
                }
            } else {
                out.extend(plane.iter().map(|&s| s as u8));
            }
        }
    }
    Ok(out)
}

pub fn read_yuv(path: impl AsRef<Path>, geom: &YuvGeometry, frame_count: usize) -> Result<Vec<Frame>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_frames(&bytes, geom, frame_count)
}

/// Number of whole frames a file of geometry `geom` holds.
pub fn count_frames(path: impl AsRef<Path>, geom: &YuvGeometry) -> Result<usize> {
    let path = path.as_ref();
    let len = fs::metadata(path).map_err(|e| Error::io(path, e))?.len() as usize;
    Ok(len / geom.frame_bytes())
}

pub fn write_yuv(path: impl AsRef<Path>, frames: &[Frame]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_frames(frames)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}
