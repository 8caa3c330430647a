use std::fmt;

use crate::error::{Error, Result};

/// Chroma sampling layout of a [`Frame`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChromaFormat {
    YCbCr420,
    YCbCr444,
}

impl ChromaFormat {
    /// Chroma plane dimensions for a luma plane of `width` x `height`.
    pub fn chroma_dims(self, width: usize, height: usize) -> (usize, usize) {
        match self {
            ChromaFormat::YCbCr420 => (width / 2, height / 2),
            ChromaFormat::YCbCr444 => (width, height),
        }
    }
}

impl fmt::Display for ChromaFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChromaFormat::YCbCr420 => f.write_str("420"),
            ChromaFormat::YCbCr444 => f.write_str("444"),
        }
    }
}

impl std::str::FromStr for ChromaFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "420" | "yuv420" | "ycbcr420" => Ok(ChromaFormat::YCbCr420),
            "444" | "yuv444" | "ycbcr444" => Ok(ChromaFormat::YCbCr444),
            other => Err(Error::Input(format!("unknown chroma format `{other}`"))),
        }
    }
}

/// Planar YCbCr picture with 8- or 10-bit unsigned samples.
///
/// Plane 0 is luma; planes 1 and 2 are Cb and Cr. All invariants (sample
/// range, even dimensions for 4:2:0, plane sizes) are checked on construction
/// and cannot be broken afterwards because the planes are only exposed
/// immutably.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    bit_depth: u8,
    format: ChromaFormat,
    planes: [Vec<u16>; 3],
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("bit_depth", &self.bit_depth)
            .field("format", &self.format)
            .finish_non_exhaustive()
    }
}

pub(crate) fn check_geometry(
    width: usize,
    height: usize,
    bit_depth: u8,
    format: ChromaFormat,
) -> Result<()> {
    if !(bit_depth == 8 || bit_depth == 10) {
        return Err(Error::Input(format!("unsupported bit depth {bit_depth}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Dimension(format!("empty frame {width}x{height}")));
    }
    if format == ChromaFormat::YCbCr420 && (width % 2 != 0 || height % 2 != 0) {
        return Err(Error::Dimension(format!(
            "4:2:0 frames need even dimensions, got {width}x{height}"
        )));
    }
    Ok(())
}

impl Frame {
    pub fn new(
        width: usize,
        height: usize,
        bit_depth: u8,
        format: ChromaFormat,
        planes: [Vec<u16>; 3],
    ) -> Result<Self> {
        check_geometry(width, height, bit_depth, format)?;
        let (cw, ch) = format.chroma_dims(width, height);
        let expected = [width * height, cw * ch, cw * ch];
        let max = max_sample(bit_depth);
        for (i, (plane, len)) in planes.iter().zip(expected).enumerate() {
            if plane.len() != len {
                return Err(Error::Dimension(format!(
                    "plane {i} has {} samples, expected {len}",
                    plane.len()
                )));
            }
            if let Some(s) = plane.iter().find(|&&s| s > max) {
                return Err(Error::Range(format!(
                    "plane {i} sample {s} exceeds {bit_depth}-bit maximum {max}"
                )));
            }
        }
        Ok(Frame {
            width,
            height,
            bit_depth,
            format,
            planes,
        })
    }

    /// A frame with every plane filled with `value` (clamped to the range).
    pub fn filled(
        width: usize,
        height: usize,
        bit_depth: u8,
        format: ChromaFormat,
        value: [u16; 3],
    ) -> Result<Self> {
        check_geometry(width, height, bit_depth, format)?;
        let (cw, ch) = format.chroma_dims(width, height);
        let max = max_sample(bit_depth);
        let planes = [
            vec![value[0].min(max); width * height],
            vec![value[1].min(max); cw * ch],
            vec![value[2].min(max); cw * ch],
        ];
        Ok(Frame {
            width,
            height,
            bit_depth,
            format,
            planes,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn format(&self) -> ChromaFormat {
        self.format
    }

    pub fn max_value(&self) -> u16 {
        max_sample(self.bit_depth)
    }

    pub fn plane(&self, index: usize) -> &[u16] {
        &self.planes[index]
    }

    pub fn planes(&self) -> &[Vec<u16>; 3] {
        &self.planes
    }

    pub fn into_planes(self) -> [Vec<u16>; 3] {
        self.planes
    }

    /// Width and height of plane `index`.
    pub fn plane_dims(&self, index: usize) -> (usize, usize) {
        if index == 0 {
            (self.width, self.height)
        } else {
            self.format.chroma_dims(self.width, self.height)
        }
    }

    pub fn same_geometry(&self, other: &Frame) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bit_depth == other.bit_depth
            && self.format == other.format
    }

    /// Number of bytes one frame occupies in the raw planar file layout.
    pub fn byte_size(width: usize, height: usize, bit_depth: u8, format: ChromaFormat) -> usize {
        let (cw, ch) = format.chroma_dims(width, height);
        let bytes_per_sample = if bit_depth > 8 { 2 } else { 1 };
        (width * height + 2 * cw * ch) * bytes_per_sample
    }
}

pub fn max_sample(bit_depth: u8) -> u16 {
    ((1u32 << bit_depth) - 1) as u16
}

/// Round-half-up quantization of a nonnegative real to an integer sample,
/// after clamping into `[0, max]`.
#[inline]
pub fn quantize(value: f64, max: u16) -> u16 {
    let v = value.clamp(0.0, max as f64);
    (v + 0.5).floor() as u16
}
