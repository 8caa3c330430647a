use crate::error::{Error, Result};
use crate::image::{Real, Tensor3};

/// One convolution layer: weights in `(out, in, kh, kw)` order plus a bias
/// per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T = f32> {
    pub name: String,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn zeros(
        name: impl Into<String>,
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        ConvParams {
            name: name.into(),
            out_channels,
            in_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            weights: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn param_count(&self) -> usize {
        self.weight_len() + self.out_channels
    }

    #[inline]
    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> T {
        self.weights[((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.weight_len() {
            return Err(Error::weights(
                &self.name,
                format!("{} weights, expected {}", self.weights.len(), self.weight_len()),
            ));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::weights(
                &self.name,
                format!("{} biases, expected {}", self.bias.len(), self.out_channels),
            ));
        }
        if self.stride == 0 {
            return Err(Error::weights(&self.name, "zero stride"));
        }
        if let Some(v) = self.weights.iter().chain(&self.bias).find(|v| !v.is_finite()) {
            return Err(Error::weights(&self.name, format!("non-finite parameter {v:?}")));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ConvParams<U> {
        ConvParams {
            name: self.name.clone(),
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            kernel_h: self.kernel_h,
            kernel_w: self.kernel_w,
            stride: self.stride,
            weights: self.weights.iter().map(|v| U::of(v.as_f64())).collect(),
            bias: self.bias.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Output size and leading pad of a "same" convolution along one axis.
///
/// The output has `ceil(len / stride)` samples; when the total padding is
/// odd the extra sample goes after the data.
#[inline]
pub fn same_padding(len: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(len);
    (out, total / 2)
}

/// Range of output positions `o` for which `o * stride + k - pad` lands
/// inside `[0, len)`.
#[inline]
pub(crate) fn valid_range(out: usize, len: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
    // o * stride + k >= pad
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // o * stride + k - pad <= len - 1
    let hi = if len + pad > k {
        ((len + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Zero-padded "same" 2-D convolution with per-channel bias.
///
/// Products accumulate in `f64` regardless of `T`.
pub fn conv2d<T: Real>(x: &Tensor3<T>, p: &ConvParams<T>) -> Result<Tensor3<T>> {
    if x.channels() != p.in_channels {
        return Err(Error::Shape(format!(
            "layer `{}` expects {} input channels, got {}",
            p.name,
            p.in_channels,
            x.channels()
        )));
    }
    let (h, w, s) = (x.height(), x.width(), p.stride);
    let (oh, pt) = same_padding(h, p.kernel_h, s);
    let (ow, pl) = same_padding(w, p.kernel_w, s);
    let mut out = Tensor3::zeros(p.out_channels, oh, ow);
    let mut acc = vec![0.0f64; oh * ow];

    for o in 0..p.out_channels {
        acc.fill(p.bias[o].as_f64());
        for i in 0..p.in_channels {
            let plane = x.channel(i);
            for ky in 0..p.kernel_h {
                let (oy0, oy1) = valid_range(oh, h, ky, pt, s);
                for kx in 0..p.kernel_w {
                    let wv = p.weight(o, i, ky, kx).as_f64();
                    let (ox0, ox1) = valid_range(ow, w, kx, pl, s);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - pt;
                        let row = &plane[iy * w..(iy + 1) * w];
                        let arow = &mut acc[oy * ow + ox0..oy * ow + ox1];
                        if s == 1 {
                            let src = &row[ox0 + kx - pl..ox1 + kx - pl];
                            for (a, &v) in arow.iter_mut().zip(src) {
                                *a += wv * v.as_f64();
                            }
                        } else {
                            for (j, a) in arow.iter_mut().enumerate() {
                                *a += wv * row[(ox0 + j) * s + kx - pl].as_f64();
                            }
                        }
                    }
                }
            }
        }
        for (dst, &a) in out.channel_mut(o).iter_mut().zip(&acc) {
            *dst = T::of(a);
        }
    }
    Ok(out)
}

#[inline]
pub fn lrelu<T: Real>(v: T, slope: T) -> T {
    if v >= T::zero() {
        v
    } else {
        slope * v
    }
}

pub fn leaky_relu<T: Real>(x: &Tensor3<T>, slope: T) -> Tensor3<T> {
    let mut out = x.clone();
    leaky_relu_in_place(&mut out, slope);
    out
}

pub fn leaky_relu_in_place<T: Real>(x: &mut Tensor3<T>, slope: T) {
    for v in x.data_mut() {
        *v = lrelu(*v, slope);
    }
}
