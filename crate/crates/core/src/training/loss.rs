//! Training objective: reconstruction distortion after bicubic up-sampling,
//! plus a rate surrogate that keeps the learned low-resolution block close
//! to a Lanczos3 down-sample in both MSE and MS-SSIM.

use crate::error::{Error, Result};
use crate::image::{Plane, Real, Tensor3};
use crate::metrics::msssim::{ms_ssim, ms_ssim_with_grad};
use crate::resample::{Direction, FilterKind, Resampler2d};

/// Scales used for MS-SSIM on 48x48 blocks; five would not fit the window.
pub const LOSS_MSSSIM_SCALES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of the rate surrogate against distortion.
    pub rate_weight: f64,
    /// Weight of the MS-SSIM term inside the rate surrogate.
    pub msssim_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rate_weight: 30.0,
            msssim_weight: 1.0 / 6.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    /// MSE between the original block and the bicubic up-sampled output.
    pub distortion: f64,
    /// MSE between the Lanczos3 down-sampled original and the output.
    pub rate_mse: f64,
    /// One minus MS-SSIM between the same pair, averaged over channels.
    pub rate_msssim: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn new(distortion: f64, rate_mse: f64, rate_msssim: f64, w: &LossWeights) -> Self {
        LossTerms {
            distortion,
            rate_mse,
            rate_msssim,
            total: distortion + w.rate_weight * (rate_mse + w.msssim_weight * rate_msssim),
        }
    }

    /// Component-wise mean; `total` stays the weighted sum of the means.
    pub fn mean(terms: &[LossTerms], w: &LossWeights) -> LossTerms {
        let n = terms.len().max(1) as f64;
        let sum = |f: fn(&LossTerms) -> f64| terms.iter().map(f).sum::<f64>() / n;
        LossTerms::new(sum(|t| t.distortion), sum(|t| t.rate_mse), sum(|t| t.rate_msssim), w)
    }
}

/// Resamplers shared by every evaluation of the loss on one block size.
#[derive(Clone, Debug)]
pub struct LossOperators {
    up: Resampler2d,
    down: Resampler2d,
}

impl LossOperators {
    /// Operators for `size` x `size` originals.
    pub fn new(size: usize) -> Result<Self> {
        Ok(LossOperators {
            up: Resampler2d::new(FilterKind::Bicubic, Direction::Up, size / 2, size / 2)?,
            down: Resampler2d::new(FilterKind::Lanczos3, Direction::Down, size, size)?,
        })
    }

    fn check(&self, x: &Tensor3<f64>, y: &Tensor3<f64>) -> Result<()> {
        let (w, h) = self.down.src_dims();
        let (lw, lh) = self.down.dst_dims();
        if x.shape() != (3, h, w) || y.shape() != (3, lh, lw) {
            return Err(Error::Shape(format!(
                "loss expects 3x{h}x{w} and 3x{lh}x{lw}, got {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        Ok(())
    }

    fn evaluate(
        &self,
        x: &Tensor3<f64>,
        y: &Tensor3<f64>,
        weights: &LossWeights,
        want_grad: bool,
    ) -> Result<(LossTerms, Option<Tensor3<f64>>)> {
        self.check(x, y)?;
        let (lw, lh) = self.down.dst_dims();
        let n_full = x.data().len() as f64;
        let n_low = y.data().len() as f64;
        let mut distortion = 0.0;
        let mut rate_mse = 0.0;
        let mut msssim_sum = 0.0;
        let mut grad = want_grad.then(|| Tensor3::zeros(3, lh, lw));

        for c in 0..3 {
            let xc = x.channel(c);
            let yc = y.channel(c);
            let up = self.up.apply(yc);
            let l3 = self.down.apply(xc);

            let resid_up: Vec<f64> = up.iter().zip(xc).map(|(u, o)| u - o).collect();
            distortion += resid_up.iter().map(|r| r * r).sum::<f64>();
            let resid_low: Vec<f64> = yc.iter().zip(&l3).map(|(v, t)| v - t).collect();
            rate_mse += resid_low.iter().map(|r| r * r).sum::<f64>();

            let target = Plane::new(lw, lh, l3)?;
            let test = Plane::new(lw, lh, yc.to_vec())?;
            if let Some(g) = grad.as_mut() {
                let (s, gs) = ms_ssim_with_grad(&target, &test, LOSS_MSSSIM_SCALES, 1.0)?;
                msssim_sum += s;
                let back = self.up.apply_transpose(&resid_up);
                let rate_scale = weights.rate_weight;
                let gc = g.channel_mut(c);
                for i in 0..gc.len() {
                    gc[i] = 2.0 * back[i] / n_full
                        + rate_scale
                            * (2.0 * resid_low[i] / n_low - weights.msssim_weight * gs.data[i] / 3.0);
                }
            } else {
                msssim_sum += ms_ssim(&target, &test, LOSS_MSSSIM_SCALES, 1.0)?;
            }
        }
        let terms = LossTerms::new(
            distortion / n_full,
            rate_mse / n_low,
            1.0 - msssim_sum / 3.0,
            weights,
        );
        Ok((terms, grad))
    }

    pub fn loss<T: Real>(&self, x: &Tensor3<T>, y: &Tensor3<T>, weights: &LossWeights) -> Result<LossTerms> {
        Ok(self.evaluate(&x.cast(), &y.cast(), weights, false)?.0)
    }

    /// Loss terms and the gradient of `total` with respect to `y`.
    pub fn loss_with_grad(
        &self,
        x: &Tensor3<f64>,
        y: &Tensor3<f64>,
        weights: &LossWeights,
    ) -> Result<(LossTerms, Tensor3<f64>)> {
        let (t, g) = self.evaluate(x, y, weights, true)?;
        Ok((t, g.expect("gradient requested")))
    }
}

/// Loss of a learned down-sample `y_cnn` of the original block `x_orig`.
pub fn loss_dsnet<T: Real>(x_orig: &Tensor3<T>, y_cnn: &Tensor3<T>, weights: &LossWeights) -> Result<LossTerms> {
    LossOperators::new(x_orig.width())?.loss(x_orig, y_cnn, weights)
}
