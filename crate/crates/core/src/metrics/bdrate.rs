//! Bjontegaard delta rate between two rate-PSNR curves.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::Psnr;

/// Minimum number of points on a curve; one per QP in the standard setup.
pub const MIN_POINTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdPoint {
    /// kbps for video, bits for single images.
    pub bitrate: f64,
    pub psnr_db: f64,
}

impl RdPoint {
    pub fn new(bitrate: f64, psnr_db: f64) -> Result<Self> {
        if !(bitrate > 0.0 && bitrate.is_finite()) {
            return Err(Error::Input(format!("bitrate must be positive and finite, got {bitrate}")));
        }
        if !psnr_db.is_finite() {
            return Err(Error::Input(format!("PSNR must be finite, got {psnr_db}")));
        }
        Ok(RdPoint { bitrate, psnr_db })
    }

    /// `None` for a lossless measurement, which has no place on a fitted curve.
    pub fn from_psnr(bitrate: f64, psnr: Psnr) -> Option<Result<Self>> {
        psnr.db().map(|db| RdPoint::new(bitrate, db))
    }
}

/// Rate-distortion points sorted by bitrate, with PSNR strictly increasing
/// along with rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RdCurve {
    points: Vec<RdPoint>,
}

impl RdCurve {
    pub fn new(mut points: Vec<RdPoint>) -> Result<Self> {
        if points.len() < MIN_POINTS {
            return Err(Error::Input(format!(
                "a curve needs at least {MIN_POINTS} points, got {}",
                points.len()
            )));
        }
        for p in &points {
            RdPoint::new(p.bitrate, p.psnr_db)?;
        }
        points.sort_by(|a, b| a.bitrate.total_cmp(&b.bitrate));
        for pair in points.windows(2) {
            if pair[1].bitrate <= pair[0].bitrate || pair[1].psnr_db <= pair[0].psnr_db {
                return Err(Error::Input(format!(
                    "curve is not monotone: ({}, {}) then ({}, {})",
                    pair[0].bitrate, pair[0].psnr_db, pair[1].bitrate, pair[1].psnr_db
                )));
            }
        }
        Ok(RdCurve { points })
    }

    pub fn points(&self) -> &[RdPoint] {
        &self.points
    }

    pub fn psnr_range(&self) -> (f64, f64) {
        (self.points[0].psnr_db, self.points[self.points.len() - 1].psnr_db)
    }

    /// Parse whitespace-separated `bitrate psnr` lines, or `qp bitrate psnr`
    /// lines as written by the pipeline. Blank lines and `#` comments are
    /// skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split_whitespace()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
            let (rate, psnr) = match fields.as_slice() {
                [r, p] | [_, r, p] => (*r, *p),
                _ => {
                    return Err(Error::Format(format!(
                        "line {}: expected 2 or 3 columns, got {}",
                        n + 1,
                        fields.len()
                    )))
                }
            };
            // lossless points are written as `inf` and not fitted
            if psnr == f64::INFINITY {
                continue;
            }
            points.push(RdPoint::new(rate, psnr)?);
        }
        RdCurve::new(points)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RdCurve::parse(&text)
    }
}

impl fmt::Display for RdCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.points {
            writeln!(f, "{} {}", p.bitrate, p.psnr_db)?;
        }
        Ok(())
    }
}

/// Cubic in a normalized abscissa `t = (psnr - center) / scale`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LogRateFit {
    pub coeffs: [f64; 4],
    pub center: f64,
    pub scale: f64,
}

impl LogRateFit {
    /// Exact integral over `[lo, hi]` in PSNR units.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        let anti = |q: f64| {
            let t = (q - self.center) / self.scale;
            let c = &self.coeffs;
            t * (c[0] + t * (c[1] / 2.0 + t * (c[2] / 3.0 + t * c[3] / 4.0)))
        };
        self.scale * (anti(hi) - anti(lo))
    }
}

/// Least-squares cubic fit of `log10(bitrate)` against PSNR.
pub(crate) fn fit_log_rate(curve: &RdCurve) -> Result<LogRateFit> {
    let pts = curve.points();
    let n = pts.len() as f64;
    let center = pts.iter().map(|p| p.psnr_db).sum::<f64>() / n;
    let (lo, hi) = curve.psnr_range();
    let scale = (hi - lo) / 2.0;
    let a = DMatrix::from_fn(pts.len(), 4, |r, c| ((pts[r].psnr_db - center) / scale).powi(c as i32));
    let b = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.bitrate.log10()));
    let x = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::Internal(format!("cubic fit failed: {e}")))?;
    Ok(LogRateFit {
        coeffs: [x[0], x[1], x[2], x[3]],
        center,
        scale,
    })
}

/// Average bitrate difference of `test` relative to `anchor`, in percent,
/// over the PSNR interval both curves cover. Negative means `test` needs
/// fewer bits for the same quality.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<f64> {
    let (a_lo, a_hi) = anchor.psnr_range();
    let (t_lo, t_hi) = test.psnr_range();
    let lo = a_lo.max(t_lo);
    let hi = a_hi.min(t_hi);
    if hi <= lo {
        return Err(Error::Range(format!(
            "PSNR ranges [{a_lo}, {a_hi}] and [{t_lo}, {t_hi}] do not overlap"
        )));
    }
    let fa = fit_log_rate(anchor)?;
    let ft = fit_log_rate(test)?;
    let avg_diff = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
    Ok((10f64.powf(avg_diff) - 1.0) * 100.0)
}
