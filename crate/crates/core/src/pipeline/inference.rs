//! Whole-frame DSNet down-sampling by overlapping tiles.

use crate::dsnet::{bilinear_base, dsnet_forward_batch, ModelWeights};
use crate::error::{Error, Result};
use crate::image::{frame_plane, frame_to_tensor, quantize, to_444, ChromaFormat, Frame, Tensor3};
use crate::resample::{downsample2x, FilterKind};
use crate::tiling::{aggregate_tiles, extract_tiles, Tile, BLOCK_OVERLAP, BLOCK_SIZE};

/// The learned part of a 2x DSNet down-sample of a 3-channel tensor.
///
/// The network runs on 96x96 tiles overlapping by 8 pixels. Each tile's
/// residual (its output minus the tile's own bilinear base) is averaged back
/// onto the half-resolution grid.
pub fn dsnet_residual_tensor(x: &Tensor3<f32>, weights: &ModelWeights<f32>) -> Result<Tensor3<f32>> {
    let (tiles, grid) = extract_tiles(x, BLOCK_SIZE, BLOCK_OVERLAP)?;
    let half = grid.halved()?;
    let inputs: Vec<Tensor3<f32>> = tiles.iter().map(|t| t.data.clone()).collect();
    let outputs = dsnet_forward_batch(&inputs, weights)?;
    let residuals = tiles
        .iter()
        .zip(outputs)
        .map(|(tile, mut out)| {
            let base = bilinear_base(&tile.data)?;
            for (o, b) in out.data_mut().iter_mut().zip(base.data()) {
                *o -= *b;
            }
            Ok(Tile {
                origin: (tile.origin.0 / 2, tile.origin.1 / 2),
                data: out,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_tiles(&residuals, &half)
}

/// Down-sample a 3-channel tensor by 2 with DSNet: the tiled residual plus
/// the bilinear down-sample of the whole tensor, so the base has no seams.
pub fn dsnet_downsample_tensor(x: &Tensor3<f32>, weights: &ModelWeights<f32>) -> Result<Tensor3<f32>> {
    let mut result = dsnet_residual_tensor(x, weights)?;
    result.add_assign(&bilinear_base(x)?)?;
    Ok(result)
}

/// Down-sample a frame by 2 with DSNet, keeping its chroma format.
///
/// The network sees the frame as 4:4:4. Its residual is added, in sample
/// units, to the bilinear down-sample of each plane at the plane's own
/// resolution; for 4:2:0 the chroma residual is first averaged over 2x2.
/// Each sample is quantized once, so zero weights reproduce the bilinear
/// filter exactly.
pub fn dsnet_downsample_frame(frame: &Frame, weights: &ModelWeights<f32>) -> Result<Frame> {
    if frame.width() % 2 != 0 || frame.height() % 2 != 0 {
        return Err(Error::Dimension(format!(
            "cannot halve a {}x{} frame",
            frame.width(),
            frame.height()
        )));
    }
    if frame.format() == ChromaFormat::YCbCr420 && ((frame.width() / 2) % 2 != 0 || (frame.height() / 2) % 2 != 0) {
        return Err(Error::Dimension(format!(
            "half-resolution 4:2:0 frame would be {}x{}, which has no whole chroma grid",
            frame.width() / 2,
            frame.height() / 2
        )));
    }
    let residual = dsnet_residual_tensor(&frame_to_tensor(&to_444(frame)?)?, weights)?;
    let (rw, rh) = (residual.width(), residual.height());
    let max = frame.max_value();
    let scale = max as f64;
    let mut planes: [Vec<u16>; 3] = Default::default();
    for (c, out) in planes.iter_mut().enumerate() {
        let base = downsample2x(&frame_plane::<f64>(frame, c), FilterKind::Bilinear)?;
        let res = residual.channel(c);
        let at = |x: usize, y: usize| res[y * rw + x] as f64;
        let subsampled = base.width != rw;
        *out = (0..base.height)
            .flat_map(|y| (0..base.width).map(move |x| (x, y)))
            .map(|(x, y)| {
                let r = if subsampled {
                    (at(2 * x, 2 * y) + at(2 * x + 1, 2 * y) + at(2 * x, 2 * y + 1) + at(2 * x + 1, 2 * y + 1)) / 4.0
                } else {
                    at(x, y)
                };
                quantize(base.get(x, y) + r * scale, max)
            })
            .collect();
    }
    debug_assert!(rh == frame.height() / 2);
    Frame::new(rw, rh, frame.bit_depth(), frame.format(), planes)
}
