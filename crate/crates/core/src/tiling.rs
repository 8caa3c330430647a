//! Overlapping block segmentation and re-aggregation.
//!
//! Frames are cut into square tiles whose origins advance by
//! `tile_size - overlap`; the last tile on each axis is pulled back so that
//! its far edge sits on the frame edge. Aggregation averages every
//! contribution to a pixel, accumulating in `f64` in grid order so the result
//! does not depend on the order tiles are handed back.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{frame_to_tensor, to_444, Frame, Real, Tensor3};

/// Network input block size.
pub const BLOCK_SIZE: usize = 96;
/// Overlap between neighbouring input blocks.
pub const BLOCK_OVERLAP: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileGrid {
    pub frame_width: usize,
    pub frame_height: usize,
    pub tile_size: usize,
    pub overlap: usize,
    /// Tile top-left corners, row-major.
    pub origins: Vec<(usize, usize)>,
}

fn axis_origins(len: usize, tile: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut pos = 0;
    loop {
        let origin = pos.min(len - tile);
        out.push(origin);
        if origin + tile >= len {
            return out;
        }
        pos += stride;
    }
}

impl TileGrid {
    pub fn new(frame_width: usize, frame_height: usize, tile_size: usize, overlap: usize) -> Result<Self> {
        if overlap >= tile_size {
            return Err(Error::Input(format!(
                "overlap {overlap} must be smaller than tile size {tile_size}"
            )));
        }
        if frame_width < tile_size || frame_height < tile_size {
            return Err(Error::Dimension(format!(
                "frame {frame_width}x{frame_height} is smaller than a {tile_size}x{tile_size} tile"
            )));
        }
        let stride = tile_size - overlap;
        let xs = axis_origins(frame_width, tile_size, stride);
        let ys = axis_origins(frame_height, tile_size, stride);
        let origins = ys
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
            .collect();
        Ok(TileGrid {
            frame_width,
            frame_height,
            tile_size,
            overlap,
            origins,
        })
    }

    pub fn stride(&self) -> usize {
        self.tile_size - self.overlap
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// The same grid with every coordinate halved, for 2x down-sampled tiles.
    pub fn halved(&self) -> Result<Self> {
        let even = |v: usize| v % 2 == 0;
        if !(even(self.frame_width) && even(self.frame_height) && even(self.tile_size) && even(self.overlap))
            || self.origins.iter().any(|&(x, y)| !even(x) || !even(y))
        {
            return Err(Error::Dimension(
                "tile grid has odd coordinates and cannot be halved".into(),
            ));
        }
        Ok(TileGrid {
            frame_width: self.frame_width / 2,
            frame_height: self.frame_height / 2,
            tile_size: self.tile_size / 2,
            overlap: self.overlap / 2,
            origins: self.origins.iter().map(|&(x, y)| (x / 2, y / 2)).collect(),
        })
    }

    /// Number of tiles covering each pixel, row-major.
    pub fn coverage(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.frame_width * self.frame_height];
        for &(ox, oy) in &self.origins {
            for y in oy..oy + self.tile_size {
                for c in &mut counts[y * self.frame_width + ox..y * self.frame_width + ox + self.tile_size] {
                    *c += 1;
                }
            }
        }
        counts
    }
}

/// A tile's content together with where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Tile<T = f32> {
    pub origin: (usize, usize),
    pub data: Tensor3<T>,
}

pub fn extract_tiles<T: Real>(
    frame: &Tensor3<T>,
    tile_size: usize,
    overlap: usize,
) -> Result<(Vec<Tile<T>>, TileGrid)> {
    let grid = TileGrid::new(frame.width(), frame.height(), tile_size, overlap)?;
    let tiles = grid
        .origins
        .iter()
        .map(|&(x, y)| {
            Ok(Tile {
                origin: (x, y),
                data: frame.crop(x, y, tile_size, tile_size)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((tiles, grid))
}

/// Average overlapping tiles back into one tensor.
///
/// Every grid origin must be supplied exactly once; tiles may arrive in any
/// order.
pub fn aggregate_tiles<T: Real>(tiles: &[Tile<T>], grid: &TileGrid) -> Result<Tensor3<T>> {
    if tiles.len() != grid.len() {
        return Err(Error::Input(format!(
            "{} tiles supplied for a grid of {}",
            tiles.len(),
            grid.len()
        )));
    }
    let mut slots: Vec<Option<&Tile<T>>> = vec![None; grid.len()];
    for tile in tiles {
        let index = grid
            .origins
            .iter()
            .position(|&o| o == tile.origin)
            .ok_or_else(|| Error::Input(format!("tile origin {:?} is not on the grid", tile.origin)))?;
        if slots[index].replace(tile).is_some() {
            return Err(Error::Input(format!("duplicate tile at {:?}", tile.origin)));
        }
    }

    let channels = tiles[0].data.channels();
    let (w, h, size) = (grid.frame_width, grid.frame_height, grid.tile_size);
    let mut sum = vec![0.0f64; channels * w * h];
    let mut count = vec![0u32; w * h];
    for tile in slots.into_iter().flatten() {
        if tile.data.shape() != (channels, size, size) {
            return Err(Error::Shape(format!(
                "tile at {:?} is {:?}, expected ({channels}, {size}, {size})",
                tile.origin,
                tile.data.shape()
            )));
        }
        let (ox, oy) = tile.origin;
        for c in 0..channels {
            let src = tile.data.channel(c);
            let plane = &mut sum[c * w * h..(c + 1) * w * h];
            for ty in 0..size {
                let row = &mut plane[(oy + ty) * w + ox..(oy + ty) * w + ox + size];
                for (acc, v) in row.iter_mut().zip(&src[ty * size..(ty + 1) * size]) {
                    *acc += v.as_f64();
                }
            }
        }
        for ty in 0..size {
            for n in &mut count[(oy + ty) * w + ox..(oy + ty) * w + ox + size] {
                *n += 1;
            }
        }
    }
    if let Some(gap) = count.iter().position(|&n| n == 0) {
        return Err(Error::Internal(format!(
            "pixel ({}, {}) is not covered by any tile",
            gap % w,
            gap / w
        )));
    }
    let data = sum
        .iter()
        .enumerate()
        .map(|(i, &s)| T::of(s / count[i % (w * h)] as f64))
        .collect();
    Tensor3::new(channels, h, w, data)
}

/// Sample `count` training blocks of `block` x `block` pixels from `frames`.
///
/// Frame, position and a rotation by a multiple of 90 degrees are drawn from a
/// generator seeded with `seed`; blocks are returned as 4:4:4 tensors.
pub fn extract_training_blocks(
    frames: &[Frame],
    block: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Tensor3<f32>>> {
    if frames.is_empty() {
        return Err(Error::Input("no frames to extract training blocks from".into()));
    }
    if let Some(f) = frames.iter().find(|f| f.width() < block || f.height() < block) {
        return Err(Error::Dimension(format!(
            "frame {}x{} is smaller than a {block}x{block} block",
            f.width(),
            f.height()
        )));
    }
    let tensors = frames
        .iter()
        .map(|f| frame_to_tensor(&to_444(f)?))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let t = &tensors[rng.gen_range(0..tensors.len())];
            let x = rng.gen_range(0..=t.width() - block);
            let y = rng.gen_range(0..=t.height() - block);
            let turns = rng.gen_range(0..4u8);
            Ok(t.crop(x, y, block, block)?.rotate90(turns))
        })
        .collect()
}
