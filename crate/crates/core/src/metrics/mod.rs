//! Quality, rate and complexity measurements.

pub mod bdrate;
pub mod msssim;
pub mod psnr;
pub mod timing;

pub use bdrate::{bd_rate, RdCurve, RdPoint};
pub use msssim::{ms_ssim, ms_ssim_with_grad};
pub use psnr::{psnr_luma, psnr_luma_sequence, Psnr};
pub use timing::{Stage, StageTimings, TimingRatios};
