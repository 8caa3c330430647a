//! DSNet: a residual dense network that maps a 96x96 YCbCr 4:4:4 block to a
//! 48x48 block.
//!
//! Evaluation order:
//!
//! 1. `down`: 3x3 stride-2 conv + LReLU, giving `D0`.
//! 2. `shallow`: 3x3 conv + LReLU, giving `F0`.
//! 3. RDB chain. RDB 1 reads `F0`; RDB `i > 1` reads
//!    `LReLU(cascade.i(concat(D0, G1..G(i-1))))`. `Gi` is the output of RDB `i`.
//! 4. `rl1`: 1x1 conv + LReLU over `concat(D0, G1..GN)`, plus `F0`.
//! 5. `rl2`: 3x3 conv + LReLU.
//! 6. `final`: linear 3x3 conv to three channels, the residual.
//! 7. Output = residual + bilinear 2x down-sample of the input.
//!
//! Inside an RDB, every 3x3 conv + LReLU reads the block input concatenated
//! with all earlier layer outputs; a linear 1x1 fusion maps back to the base
//! width and the block input is added.

mod layers;
mod weights;

pub use layers::{conv2d, leaky_relu, leaky_relu_in_place, lrelu, same_padding, ConvParams};
pub use weights::{
    cascade_name, load_weights, rdb_conv_name, rdb_fusion_name, save_weights, DsNetConfig, LayerSpec,
    ModelWeights,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Real, Tensor3};
use crate::resample::{Direction, FilterKind, Resampler2d};
use crate::tiling::BLOCK_SIZE;

/// Output side length of the network.
pub const OUTPUT_SIZE: usize = BLOCK_SIZE / 2;

/// Activations of one residual dense block.
#[derive(Clone, Debug)]
pub struct RdbTrace<T> {
    pub input: Tensor3<T>,
    /// Pre-activation output of every dense layer.
    pub pre: Vec<Tensor3<T>>,
    /// `concat(input, act_1, .., act_L)`.
    pub dense: Tensor3<T>,
    pub output: Tensor3<T>,
}

/// Every intermediate value of a forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    pub input: Tensor3<T>,
    pub down_pre: Tensor3<T>,
    pub d0: Tensor3<T>,
    pub shallow_pre: Tensor3<T>,
    pub f0: Tensor3<T>,
    /// Input and pre-activation of `cascade.i`, indexed by `i - 2`.
    pub cascades: Vec<(Tensor3<T>, Tensor3<T>)>,
    pub rdbs: Vec<RdbTrace<T>>,
    pub rl1_input: Tensor3<T>,
    pub rl1_pre: Tensor3<T>,
    pub skip: Tensor3<T>,
    pub rl2_pre: Tensor3<T>,
    pub rl2: Tensor3<T>,
    pub output: Tensor3<T>,
}

fn conv_act<T: Real>(x: &Tensor3<T>, p: &ConvParams<T>, slope: T) -> Result<(Tensor3<T>, Tensor3<T>)> {
    let pre = conv2d(x, p)?;
    let act = leaky_relu(&pre, slope);
    Ok((pre, act))
}

/// [`rdb_forward`] keeping the intermediates needed for backprop.
pub fn rdb_traced<T: Real>(
    x: &Tensor3<T>,
    convs: &[&ConvParams<T>],
    fusion: &ConvParams<T>,
    slope: T,
) -> Result<RdbTrace<T>> {
    let mut dense = x.clone();
    let mut pre = Vec::with_capacity(convs.len());
    for conv in convs {
        let (z, a) = conv_act(&dense, conv, slope)?;
        dense = Tensor3::concat(&[&dense, &a])?;
        pre.push(z);
    }
    let mut output = conv2d(&dense, fusion)?;
    output.add_assign(x)?;
    Ok(RdbTrace {
        input: x.clone(),
        pre,
        dense,
        output,
    })
}

/// One residual dense block: dense 3x3 conv + LReLU stages, 1x1 fusion, local skip.
pub fn rdb_forward<T: Real>(
    x: &Tensor3<T>,
    convs: &[&ConvParams<T>],
    fusion: &ConvParams<T>,
    slope: T,
) -> Result<Tensor3<T>> {
    Ok(rdb_traced(x, convs, fusion, slope)?.output)
}

/// The convolutions of RDB `index` (1-based).
pub fn rdb_params<T: Real>(w: &ModelWeights<T>, index: usize) -> Result<(Vec<&ConvParams<T>>, &ConvParams<T>)> {
    let convs = (1..=w.config().rdb_layers)
        .map(|k| w.layer(&rdb_conv_name(index, k)))
        .collect::<Result<Vec<_>>>()?;
    Ok((convs, w.layer(&rdb_fusion_name(index))?))
}

/// Bilinear 2x down-sample of every channel.
pub fn bilinear_base<T: Real>(x: &Tensor3<T>) -> Result<Tensor3<T>> {
    let r = Resampler2d::new(FilterKind::Bilinear, Direction::Down, x.width(), x.height())?;
    let (w, h) = r.dst_dims();
    let mut out = Vec::with_capacity(x.channels() * w * h);
    for c in 0..x.channels() {
        out.extend(r.apply(x.channel(c)));
    }
    Tensor3::new(x.channels(), h, w, out)
}

fn check_input<T: Real>(x: &Tensor3<T>) -> Result<()> {
    if x.shape() != (3, BLOCK_SIZE, BLOCK_SIZE) {
        return Err(Error::Shape(format!(
            "DSNet input must be 3x{BLOCK_SIZE}x{BLOCK_SIZE}, got {:?}",
            x.shape()
        )));
    }
    Ok(())
}

/// Forward pass keeping every activation.
pub fn forward_traced<T: Real>(x: &Tensor3<T>, w: &ModelWeights<T>) -> Result<Trace<T>> {
    check_input(x)?;
    let cfg = w.config();
    let slope = T::of(cfg.lrelu_slope);

    let (down_pre, d0) = conv_act(x, w.layer("down")?, slope)?;
    let (shallow_pre, f0) = conv_act(&d0, w.layer("shallow")?, slope)?;

    let mut cascades = Vec::with_capacity(cfg.num_rdb.saturating_sub(1));
    let mut rdbs: Vec<RdbTrace<T>> = Vec::with_capacity(cfg.num_rdb);
    for i in 1..=cfg.num_rdb {
        let input = if i == 1 {
            f0.clone()
        } else {
            let mut parts = vec![&d0];
            parts.extend(rdbs.iter().map(|r| &r.output));
            let cat = Tensor3::concat(&parts)?;
            let (pre, act) = conv_act(&cat, w.layer(&cascade_name(i))?, slope)?;
            cascades.push((cat, pre));
            act
        };
        let (convs, fusion) = rdb_params(w, i)?;
        rdbs.push(rdb_traced(&input, &convs, fusion, slope)?);
    }

    let mut parts = vec![&d0];
    parts.extend(rdbs.iter().map(|r| &r.output));
    let rl1_input = Tensor3::concat(&parts)?;
    let (rl1_pre, mut skip) = conv_act(&rl1_input, w.layer("rl1")?, slope)?;
    skip.add_assign(&f0)?;
    let (rl2_pre, rl2) = conv_act(&skip, w.layer("rl2")?, slope)?;
    let mut output = conv2d(&rl2, w.layer("final")?)?;
    output.add_assign(&bilinear_base(x)?)?;

    Ok(Trace {
        input: x.clone(),
        down_pre,
        d0,
        shallow_pre,
        f0,
        cascades,
        rdbs,
        rl1_input,
        rl1_pre,
        skip,
        rl2_pre,
        rl2,
        output,
    })
}

/// Map a 3x96x96 block to its learned 3x48x48 down-sampled version.
pub fn dsnet_forward<T: Real>(x: &Tensor3<T>, w: &ModelWeights<T>) -> Result<Tensor3<T>> {
    Ok(forward_traced(x, w)?.output)
}

/// Run [`dsnet_forward`] over many blocks. Output order matches input order
/// and each result is independent of scheduling.
pub fn dsnet_forward_batch<T: Real>(blocks: &[Tensor3<T>], w: &ModelWeights<T>) -> Result<Vec<Tensor3<T>>> {
    blocks.par_iter().map(|b| dsnet_forward(b, w)).collect()
}
