//! Separable 2x down- and up-sampling with Lanczos3, Bicubic and Bilinear
//! kernels.
//!
//! Geometry follows pixel-center alignment. Down-sampling output pixel `i`
//! is centered on source position `2i + 0.5` and the kernel is stretched by
//! the scale factor; up-sampling output pixel `j` is centered on
//! `(j - 0.5) / 2` with the kernel at its natural width. Taps falling outside
//! the plane read the nearest edge sample, and every output's weights are
//! renormalized to sum to one.
//!
//! All filtering runs in `f64`. Because resampling is linear, each
//! [`Resampler2d`] also exposes its transpose, which is what backpropagation
//! through a resampling step needs.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::{frame_plane, quantize, Frame, Plane, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FilterKind {
    Lanczos3,
    Bicubic,
    Bilinear,
}

impl FilterKind {
    pub const ALL: [FilterKind; 3] = [FilterKind::Lanczos3, FilterKind::Bicubic, FilterKind::Bilinear];

    /// Kernel support radius at scale 1.
    pub fn radius(self) -> f64 {
        match self {
            FilterKind::Lanczos3 => 3.0,
            FilterKind::Bicubic => 2.0,
            FilterKind::Bilinear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Lanczos3 => "lanczos3",
            FilterKind::Bicubic => "bicubic",
            FilterKind::Bilinear => "bilinear",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lanczos3" | "lanczos" | "l3" => Ok(FilterKind::Lanczos3),
            "bicubic" | "cubic" => Ok(FilterKind::Bicubic),
            "bilinear" | "linear" => Ok(FilterKind::Bilinear),
            other => Err(Error::Input(format!("unknown filter `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Down,
    Up,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "down" => Ok(Direction::Down),
            "up" => Ok(Direction::Up),
            other => Err(Error::Input(format!("unknown direction `{other}`"))),
        }
    }
}

#[inline]
fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Keys cubic convolution kernel with `a = -0.5`.
#[inline]
fn keys_cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

pub fn kernel_weight(kind: FilterKind, x: f64) -> f64 {
    match kind {
        FilterKind::Lanczos3 => {
            if x.abs() < 3.0 {
                sinc(x) * sinc(x / 3.0)
            } else {
                0.0
            }
        }
        FilterKind::Bicubic => keys_cubic(x),
        FilterKind::Bilinear => (1.0 - x.abs()).max(0.0),
    }
}

/// One output sample's taps: `(clamped source index, normalized weight)`.
type TapList = Vec<(usize, f64)>;

/// Tap table for resampling one axis by a factor of two.
#[derive(Clone, Debug, PartialEq)]
pub struct Taps1d {
    src_len: usize,
    taps: Vec<TapList>,
}

impl Taps1d {
    pub fn new(kind: FilterKind, direction: Direction, src_len: usize) -> Self {
        let (dst_len, scale) = match direction {
            Direction::Down => (src_len / 2, 2.0),
            Direction::Up => (src_len * 2, 1.0),
        };
        let support = kind.radius() * scale;
        let taps = (0..dst_len)
            .map(|i| {
                let center = match direction {
                    Direction::Down => 2.0 * i as f64 + 0.5,
                    Direction::Up => (i as f64 - 0.5) / 2.0,
                };
                let lo = (center - support).floor() as isize;
                let hi = (center + support).ceil() as isize;
                let mut list: TapList = (lo..=hi)
                    .filter_map(|k| {
                        let w = kernel_weight(kind, (k as f64 - center) / scale);
                        (w != 0.0).then(|| (k.clamp(0, src_len as isize - 1) as usize, w))
                    })
                    .collect();
                let sum: f64 = list.iter().map(|t| t.1).sum();
                for t in &mut list {
                    t.1 /= sum;
                }
                list
            })
            .collect();
        Taps1d { src_len, taps }
    }

    pub fn src_len(&self) -> usize {
        self.src_len
    }

    pub fn dst_len(&self) -> usize {
        self.taps.len()
    }

    /// Normalized taps of output sample `i`.
    pub fn taps(&self, i: usize) -> &[(usize, f64)] {
        &self.taps[i]
    }
}

/// Separable 2-D resampler for a fixed source size.
#[derive(Clone, Debug, PartialEq)]
pub struct Resampler2d {
    horizontal: Taps1d,
    vertical: Taps1d,
}

impl Resampler2d {
    pub fn new(kind: FilterKind, direction: Direction, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!("cannot resample {width}x{height}")));
        }
        if direction == Direction::Down && (width % 2 != 0 || height % 2 != 0) {
            return Err(Error::Dimension(format!(
                "2x down-sampling needs even dimensions, got {width}x{height}"
            )));
        }
        Ok(Resampler2d {
            horizontal: Taps1d::new(kind, direction, width),
            vertical: Taps1d::new(kind, direction, height),
        })
    }

    pub fn src_dims(&self) -> (usize, usize) {
        (self.horizontal.src_len(), self.vertical.src_len())
    }

    pub fn dst_dims(&self) -> (usize, usize) {
        (self.horizontal.dst_len(), self.vertical.dst_len())
    }

    /// Apply to a row-major `src` of the source size.
    pub fn apply<T: Real>(&self, src: &[T]) -> Vec<T> {
        let (sw, sh) = self.src_dims();
        let (dw, dh) = self.dst_dims();
        debug_assert_eq!(src.len(), sw * sh);

        let mut rows = vec![0.0f64; sh * dw];
        for y in 0..sh {
            let srow = &src[y * sw..(y + 1) * sw];
            let drow = &mut rows[y * dw..(y + 1) * dw];
            for (x, out) in drow.iter_mut().enumerate() {
                *out = self
                    .horizontal
                    .taps(x)
                    .iter()
                    .map(|&(k, w)| w * srow[k].as_f64())
                    .sum();
            }
        }

        let mut out = vec![0.0f64; dh * dw];
        for y in 0..dh {
            let orow = &mut out[y * dw..(y + 1) * dw];
            for &(k, w) in self.vertical.taps(y) {
                let irow = &rows[k * dw..(k + 1) * dw];
                for (o, &v) in orow.iter_mut().zip(irow) {
                    *o += w * v;
                }
            }
        }
        out.into_iter().map(T::of).collect()
    }

    /// Apply the transposed linear map: destination-sized input, source-sized output.
    pub fn apply_transpose<T: Real>(&self, dst: &[T]) -> Vec<T> {
        let (sw, sh) = self.src_dims();
        let (dw, dh) = self.dst_dims();
        debug_assert_eq!(dst.len(), dw * dh);

        let mut rows = vec![0.0f64; sh * dw];
        for y in 0..dh {
            let grow = &dst[y * dw..(y + 1) * dw];
            for &(k, w) in self.vertical.taps(y) {
                let trow = &mut rows[k * dw..(k + 1) * dw];
                for (t, &g) in trow.iter_mut().zip(grow) {
                    *t += w * g.as_f64();
                }
            }
        }

        let mut out = vec![0.0f64; sh * sw];
        for y in 0..sh {
            let trow = &rows[y * dw..(y + 1) * dw];
            let orow = &mut out[y * sw..(y + 1) * sw];
            for (x, &g) in trow.iter().enumerate() {
                for &(k, w) in self.horizontal.taps(x) {
                    orow[k] += w * g;
                }
            }
        }
        out.into_iter().map(T::of).collect()
    }

    pub fn apply_plane<T: Real>(&self, plane: &Plane<T>) -> Result<Plane<T>> {
        if (plane.width, plane.height) != self.src_dims() {
            return Err(Error::Dimension(format!(
                "resampler built for {:?}, plane is {}x{}",
                self.src_dims(),
                plane.width,
                plane.height
            )));
        }
        let (dw, dh) = self.dst_dims();
        Plane::new(dw, dh, self.apply(&plane.data))
    }
}

pub fn downsample2x<T: Real>(plane: &Plane<T>, kind: FilterKind) -> Result<Plane<T>> {
    Resampler2d::new(kind, Direction::Down, plane.width, plane.height)?.apply_plane(plane)
}

pub fn upsample2x<T: Real>(plane: &Plane<T>, kind: FilterKind) -> Result<Plane<T>> {
    Resampler2d::new(kind, Direction::Up, plane.width, plane.height)?.apply_plane(plane)
}

/// Resample every plane of a frame by 2x, re-quantizing each sample.
pub fn resample_frame(f: &Frame, direction: Direction, kind: FilterKind) -> Result<Frame> {
    let (w, h) = match direction {
        Direction::Down => {
            let (cw, ch) = f.plane_dims(1);
            if f.width() % 2 != 0 || f.height() % 2 != 0 || cw % 2 != 0 || ch % 2 != 0 {
                return Err(Error::Dimension(format!(
                    "{} frame {}x{} cannot be halved with even plane sizes",
                    f.format(),
                    f.width(),
                    f.height()
                )));
            }
            (f.width() / 2, f.height() / 2)
        }
        Direction::Up => (f.width() * 2, f.height() * 2),
    };
    let max = f.max_value();
    let mut planes: [Vec<u16>; 3] = Default::default();
    for (i, out) in planes.iter_mut().enumerate() {
        let src = frame_plane::<f64>(f, i);
        let dst = match direction {
            Direction::Down => downsample2x(&src, kind)?,
            Direction::Up => upsample2x(&src, kind)?,
        };
        *out = dst.data.iter().map(|&v| quantize(v, max)).collect();
    }
    Frame::new(w, h, f.bit_depth(), f.format(), planes)
}
