use std::fmt;

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating point element type used by tensors and planes.
///
/// Inference runs in `f32`; training and gradient checks run in `f64`.
pub trait Real: Float + Default + Send + Sync + fmt::Debug + 'static {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// A single 2-D array of samples in row-major order.
#[derive(Clone, PartialEq)]
pub struct Plane<T = f32> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T> fmt::Debug for Plane<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Plane({}x{})", self.width, self.height)
    }
}

impl<T: Real> Plane<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "plane {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Plane {
            width,
            height,
            data: vec![T::zero(); width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn cast<U: Real>(&self) -> Plane<U> {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Channel-major 3-D array: all of channel 0, then channel 1, and so on.
#[derive(Clone, PartialEq)]
pub struct Tensor3<T = f32> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T> fmt::Debug for Tensor3<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor3({}x{}x{})",
            self.channels, self.height, self.width
        )
    }
}

impl<T: Real> Tensor3<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "tensor {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Tensor3 {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor3 {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Self {
        Tensor3 {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_planes(planes: &[Plane<T>]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::Shape("no planes".into()))?;
        let (w, h) = (first.width, first.height);
        let mut data = Vec::with_capacity(planes.len() * w * h);
        for p in planes {
            if p.width != w || p.height != h {
                return Err(Error::Shape(format!(
                    "plane {}x{} does not match {w}x{h}",
                    p.width, p.height
                )));
            }
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor3 {
            channels: planes.len(),
            height: h,
            width: w,
            data,
        })
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn channel_plane(&self, c: usize) -> Plane<T> {
        Plane {
            width: self.width,
            height: self.height,
            data: self.channel(c).to_vec(),
        }
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor3<U> {
        Tensor3 {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Copy of the `width` x `height` window with top-left corner `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Self> {
        if x + width > self.width || y + height > self.height {
            return Err(Error::Dimension(format!(
                "crop {width}x{height} at ({x},{y}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(self.channels * width * height);
        for c in 0..self.channels {
            let ch = self.channel(c);
            for row in y..y + height {
                let start = row * self.width + x;
                data.extend_from_slice(&ch[start..start + width]);
            }
        }
        Ok(Tensor3 {
            channels: self.channels,
            height,
            width,
            data,
        })
    }

    /// Rotate every channel counter-clockwise by `quarter_turns` x 90 degrees.
    pub fn rotate90(&self, quarter_turns: u8) -> Self {
        let k = quarter_turns % 4;
        if k == 0 {
            return self.clone();
        }
        let (h, w) = (self.height, self.width);
        let (oh, ow) = if k % 2 == 1 { (w, h) } else { (h, w) };
        let mut out = Tensor3::zeros(self.channels, oh, ow);
        for c in 0..self.channels {
            for y in 0..h {
                for x in 0..w {
                    let (ny, nx) = match k {
                        1 => (w - 1 - x, y),
                        2 => (h - 1 - y, w - 1 - x),
                        _ => (x, h - 1 - y),
                    };
                    out.set(c, ny, nx, self.get(c, y, x));
                }
            }
        }
        out
    }

    /// Stack tensors of equal spatial size along the channel axis.
    pub fn concat(parts: &[&Tensor3<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let (h, w) = (first.height, first.width);
        let mut channels = 0;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        for p in parts {
            if p.height != h || p.width != w {
                return Err(Error::Shape(format!(
                    "concat spatial mismatch {}x{} vs {h}x{w}",
                    p.height, p.width
                )));
            }
            channels += p.channels;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor3 {
            channels,
            height: h,
            width: w,
            data,
        })
    }

    /// Inverse of [`Tensor3::concat`]: split into pieces with the given channel counts.
    pub fn split(&self, channel_counts: &[usize]) -> Result<Vec<Self>> {
        if channel_counts.iter().sum::<usize>() != self.channels {
            return Err(Error::Shape(format!(
                "split {:?} does not add up to {} channels",
                channel_counts, self.channels
            )));
        }
        let n = self.plane_len();
        let mut offset = 0;
        Ok(channel_counts
            .iter()
            .map(|&c| {
                let t = Tensor3 {
                    channels: c,
                    height: self.height,
                    width: self.width,
                    data: self.data[offset * n..(offset + c) * n].to_vec(),
                };
                offset += c;
                t
            })
            .collect())
    }

    pub fn add_assign(&mut self, other: &Tensor3<T>) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "add {:?} + {:?}",
                self.shape(),
                other.shape()
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor3<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}
