//! Peak signal-to-noise ratio over the luma plane.

use std::fmt;

use crate::error::{Error, Result};
use crate::image::Frame;

/// A PSNR measurement. Identical inputs have no finite PSNR and are reported
/// as [`Psnr::Lossless`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Db(f64),
    Lossless,
}

impl Psnr {
    pub fn from_mse(mse: f64, max: f64) -> Self {
        if mse == 0.0 {
            Psnr::Lossless
        } else {
            Psnr::Db(10.0 * (max * max / mse).log10())
        }
    }

    /// Finite value in dB, `None` when lossless.
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Db(v) => Some(v),
            Psnr::Lossless => None,
        }
    }

    pub fn is_lossless(self) -> bool {
        matches!(self, Psnr::Lossless)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.6}"),
            Psnr::Lossless => f.write_str("inf"),
        }
    }
}

fn check_pair(reference: &Frame, test: &Frame) -> Result<()> {
    if reference.width() != test.width()
        || reference.height() != test.height()
        || reference.bit_depth() != test.bit_depth()
    {
        return Err(Error::Dimension(format!(
            "cannot compare {}x{} {}-bit with {}x{} {}-bit",
            reference.width(),
            reference.height(),
            reference.bit_depth(),
            test.width(),
            test.height(),
            test.bit_depth()
        )));
    }
    Ok(())
}

fn luma_sse(reference: &Frame, test: &Frame) -> u64 {
    reference
        .plane(0)
        .iter()
        .zip(test.plane(0))
        .map(|(&a, &b)| {
            let d = a as i64 - b as i64;
            (d * d) as u64
        })
        .sum()
}

pub fn psnr_luma(reference: &Frame, test: &Frame) -> Result<Psnr> {
    check_pair(reference, test)?;
    let n = (reference.width() * reference.height()) as f64;
    let mse = luma_sse(reference, test) as f64 / n;
    Ok(Psnr::from_mse(mse, reference.max_value() as f64))
}

/// Luma PSNR of a whole sequence, from the mean squared error pooled over
/// every frame.
pub fn psnr_luma_sequence(reference: &[Frame], test: &[Frame]) -> Result<Psnr> {
    if reference.len() != test.len() || reference.is_empty() {
        return Err(Error::Input(format!(
            "sequence lengths {} and {} differ or are empty",
            reference.len(),
            test.len()
        )));
    }
    let mut sse = 0u64;
    let mut n = 0usize;
    for (r, t) in reference.iter().zip(test) {
        check_pair(r, t)?;
        sse += luma_sse(r, t);
        n += r.width() * r.height();
    }
    Ok(Psnr::from_mse(sse as f64 / n as f64, reference[0].max_value() as f64))
}
