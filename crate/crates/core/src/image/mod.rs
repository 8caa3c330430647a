//! Frames, tensors, chroma conversion and raw YUV file I/O.
//!
//! Frames carry integer samples; tensors carry normalized floats in `[0, 1]`
//! for the network. Every float-to-integer conversion in the crate goes
//! through [`quantize`], which clamps and rounds half up.

mod frame;
mod tensor;
pub mod yuv;

pub use frame::{max_sample, quantize, ChromaFormat, Frame};
pub use tensor::{Plane, Real, Tensor3};

use crate::error::{Error, Result};

/// Upsample 4:2:0 chroma to 4:4:4 by replicating each chroma sample into its
/// 2x2 co-located luma positions.
pub fn convert_420_to_444(f: &Frame) -> Result<Frame> {
    if f.format() != ChromaFormat::YCbCr420 {
        return Err(Error::Format(format!(
            "expected a 4:2:0 frame, got {}",
            f.format()
        )));
    }
    let (w, h) = (f.width(), f.height());
    let cw = w / 2;
    let replicate = |src: &[u16]| {
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            let row = &src[(y / 2) * cw..(y / 2 + 1) * cw];
            out.extend((0..w).map(|x| row[x / 2]));
        }
        out
    };
    let planes = [
        f.plane(0).to_vec(),
        replicate(f.plane(1)),
        replicate(f.plane(2)),
    ];
    Frame::new(w, h, f.bit_depth(), ChromaFormat::YCbCr444, planes)
}

/// Downsample 4:4:4 chroma to 4:2:0; each output sample is the round-half-up
/// mean of its 2x2 source block.
pub fn convert_444_to_420(f: &Frame) -> Result<Frame> {
    if f.format() != ChromaFormat::YCbCr444 {
        return Err(Error::Format(format!(
            "expected a 4:4:4 frame, got {}",
            f.format()
        )));
    }
    let (w, h) = (f.width(), f.height());
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::Dimension(format!(
            "4:2:0 conversion needs even dimensions, got {w}x{h}"
        )));
    }
    let (cw, ch) = (w / 2, h / 2);
    let average = |src: &[u16]| {
        let mut out = Vec::with_capacity(cw * ch);
        for y in 0..ch {
            for x in 0..cw {
                let s = src[2 * y * w + 2 * x] as u32
                    + src[2 * y * w + 2 * x + 1] as u32
                    + src[(2 * y + 1) * w + 2 * x] as u32
                    + src[(2 * y + 1) * w + 2 * x + 1] as u32;
                // round-half-up of s / 4
                out.push(((s + 2) / 4) as u16);
            }
        }
        out
    };
    let planes = [f.plane(0).to_vec(), average(f.plane(1)), average(f.plane(2))];
    Frame::new(w, h, f.bit_depth(), ChromaFormat::YCbCr420, planes)
}

/// Return `f` in 4:4:4, converting if needed.
pub fn to_444(f: &Frame) -> Result<Frame> {
    match f.format() {
        ChromaFormat::YCbCr444 => Ok(f.clone()),
        ChromaFormat::YCbCr420 => convert_420_to_444(f),
    }
}

/// Normalize a 4:4:4 frame into a 3-channel tensor: `sample / (2^bit_depth - 1)`.
pub fn frame_to_tensor(f: &Frame) -> Result<Tensor3<f32>> {
    if f.format() != ChromaFormat::YCbCr444 {
        return Err(Error::Format(format!(
            "network tensors need 4:4:4 frames, got {}",
            f.format()
        )));
    }
    let scale = 1.0 / f.max_value() as f64;
    let data = f
        .planes()
        .iter()
        .flat_map(|p| p.iter().map(move |&s| (s as f64 * scale) as f32))
        .collect();
    Tensor3::new(3, f.height(), f.width(), data)
}

/// Clamp a 3-channel tensor into `[0, 1]`, scale to `bit_depth` and round
/// half up into a 4:4:4 frame.
pub fn tensor_to_frame<T: Real>(t: &Tensor3<T>, bit_depth: u8) -> Result<Frame> {
    if t.channels() != 3 {
        return Err(Error::Shape(format!(
            "frames need 3 channels, tensor has {}",
            t.channels()
        )));
    }
    let max = max_sample(bit_depth);
    let planes = [0, 1, 2].map(|c| {
        t.channel(c)
            .iter()
            .map(|v| {
                let v = v.as_f64();
                let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
                quantize(v * max as f64, max)
            })
            .collect::<Vec<_>>()
    });
    Frame::new(
        t.width(),
        t.height(),
        bit_depth,
        ChromaFormat::YCbCr444,
        planes,
    )
}

/// Float copy of plane `index` of a frame, in sample units.
pub fn frame_plane<T: Real>(f: &Frame, index: usize) -> Plane<T> {
    let (w, h) = f.plane_dims(index);
    Plane {
        width: w,
        height: h,
        data: f.plane(index).iter().map(|&s| T::of(s as f64)).collect(),
    }
}
