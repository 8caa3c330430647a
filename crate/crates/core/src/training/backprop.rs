//! Reverse-mode gradients through the DSNet forward trace.

use crate::dsnet::{
    cascade_name, rdb_conv_name, rdb_fusion_name, same_padding, ConvParams, ModelWeights, RdbTrace, Trace,
};
use crate::error::{Error, Result};
use crate::image::Tensor3;

/// Gradient of a convolution's parameters, laid out like [`ConvParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

fn valid_range(out: usize, len: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if len + pad > k {
        ((len + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Backward pass of [`crate::dsnet::conv2d`] given the layer input `x` and
/// the gradient `grad_out` of its output. The input gradient is only
/// computed when `need_input_grad` is set.
pub fn conv2d_backward(
    x: &Tensor3<f64>,
    p: &ConvParams<f64>,
    grad_out: &Tensor3<f64>,
    need_input_grad: bool,
) -> Result<(Option<Tensor3<f64>>, ConvGrad)> {
    let (h, w, s) = (x.height(), x.width(), p.stride);
    let (oh, pt) = same_padding(h, p.kernel_h, s);
    let (ow, pl) = same_padding(w, p.kernel_w, s);
    if x.channels() != p.in_channels || grad_out.shape() != (p.out_channels, oh, ow) {
        return Err(Error::Shape(format!(
            "backward of `{}`: input {:?}, output gradient {:?}",
            p.name,
            x.shape(),
            grad_out.shape()
        )));
    }
    let mut gw = vec![0.0; p.weight_len()];
    let gb: Vec<f64> = (0..p.out_channels).map(|o| grad_out.channel(o).iter().sum()).collect();
    let mut gx = need_input_grad.then(|| Tensor3::zeros(p.in_channels, h, w));

    for o in 0..p.out_channels {
        let g = grad_out.channel(o);
        for i in 0..p.in_channels {
            let plane = x.channel(i);
            for ky in 0..p.kernel_h {
                let (oy0, oy1) = valid_range(oh, h, ky, pt, s);
                for kx in 0..p.kernel_w {
                    let (ox0, ox1) = valid_range(ow, w, kx, pl, s);
                    if ox0 >= ox1 {
                        continue;
                    }
                    let widx = ((o * p.in_channels + i) * p.kernel_h + ky) * p.kernel_w + kx;
                    let wv = p.weights[widx];
                    let mut acc = 0.0;
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - pt;
                        let grow = &g[oy * ow + ox0..oy * ow + ox1];
                        if s == 1 {
                            let xrow = &plane[iy * w + ox0 + kx - pl..iy * w + ox1 + kx - pl];
                            acc += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                            if let Some(gx) = gx.as_mut() {
                                let dst = &mut gx.channel_mut(i)[iy * w + ox0 + kx - pl..iy * w + ox1 + kx - pl];
                                for (d, &gv) in dst.iter_mut().zip(grow) {
                                    *d += wv * gv;
                                }
                            }
                        } else {
                            for (j, &gv) in grow.iter().enumerate() {
                                let ix = iy * w + (ox0 + j) * s + kx - pl;
                                acc += gv * plane[ix];
                                if let Some(gx) = gx.as_mut() {
                                    gx.channel_mut(i)[ix] += wv * gv;
                                }
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    Ok((gx, ConvGrad { weights: gw, bias: gb }))
}

/// Gradient through a leaky ReLU, given its pre-activation input.
pub fn leaky_relu_backward(pre: &Tensor3<f64>, grad: &Tensor3<f64>, slope: f64) -> Tensor3<f64> {
    let data = pre
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&z, &g)| if z >= 0.0 { g } else { slope * g })
        .collect();
    Tensor3::new(pre.channels(), pre.height(), pre.width(), data).expect("same shape as input")
}

fn add_into(dst: &mut Tensor3<f64>, src: &Tensor3<f64>) -> Result<()> {
    dst.add_assign(src)
}

fn accumulate(grads: &mut ModelWeights<f64>, name: &str, g: &ConvGrad) -> Result<()> {
    let (w, b) = grads.layer_mut(name)?;
    w.iter_mut().zip(&g.weights).for_each(|(a, v)| *a += v);
    b.iter_mut().zip(&g.bias).for_each(|(a, v)| *a += v);
    Ok(())
}

/// Conv + LReLU backward: accumulate parameter gradients and return the
/// input gradient when asked.
fn conv_act_backward(
    weights: &ModelWeights<f64>,
    grads: &mut ModelWeights<f64>,
    name: &str,
    input: &Tensor3<f64>,
    pre: &Tensor3<f64>,
    grad_act: &Tensor3<f64>,
    need_input_grad: bool,
) -> Result<Option<Tensor3<f64>>> {
    let slope = weights.config().lrelu_slope;
    let g_pre = leaky_relu_backward(pre, grad_act, slope);
    let (gx, gp) = conv2d_backward(input, weights.layer(name)?, &g_pre, need_input_grad)?;
    accumulate(grads, name, &gp)?;
    Ok(gx)
}

/// Backward through RDB `index`, adding its parameter gradients to `grads`;
/// returns the gradient of its input.
pub fn rdb_backward(
    weights: &ModelWeights<f64>,
    grads: &mut ModelWeights<f64>,
    index: usize,
    trace: &RdbTrace<f64>,
    grad_out: &Tensor3<f64>,
) -> Result<Tensor3<f64>> {
    let cfg = weights.config();
    let (base, growth) = (cfg.base_channels, cfg.rdb_growth);
    let fusion = rdb_fusion_name(index);
    let (g_dense, gp) = conv2d_backward(&trace.dense, weights.layer(&fusion)?, grad_out, true)?;
    accumulate(grads, &fusion, &gp)?;
    let mut g_dense = g_dense.expect("input gradient requested");

    for k in (1..=cfg.rdb_layers).rev() {
        let width = base + (k - 1) * growth;
        let parts = g_dense.split(&[width, growth])?;
        let (mut g_prev, g_act) = (parts[0].clone(), &parts[1]);
        let input = trace.dense.split(&[width, trace.dense.channels() - width])?.swap_remove(0);
        let gx = conv_act_backward(
            weights,
            grads,
            &rdb_conv_name(index, k),
            &input,
            &trace.pre[k - 1],
            g_act,
            true,
        )?
        .expect("input gradient requested");
        add_into(&mut g_prev, &gx)?;
        g_dense = g_prev;
    }
    // the local skip adds the block input directly
    add_into(&mut g_dense, grad_out)?;
    Ok(g_dense)
}

/// Gradient of `sum(grad_out * output)` with respect to every parameter,
/// given the trace of the forward pass that produced `output`.
pub fn dsnet_backward(
    weights: &ModelWeights<f64>,
    trace: &Trace<f64>,
    grad_out: &Tensor3<f64>,
) -> Result<ModelWeights<f64>> {
    if grad_out.shape() != trace.output.shape() {
        return Err(Error::Shape(format!(
            "output gradient {:?} does not match output {:?}",
            grad_out.shape(),
            trace.output.shape()
        )));
    }
    let cfg = *weights.config();
    let b = cfg.base_channels;
    let mut grads = weights.zeros_like();

    // output = final(rl2) + bilinear(input); the base path has no parameters
    let (g_rl2, gp) = conv2d_backward(&trace.rl2, weights.layer("final")?, grad_out, true)?;
    accumulate(&mut grads, "final", &gp)?;
    let g_skip = conv_act_backward(
        weights,
        &mut grads,
        "rl2",
        &trace.skip,
        &trace.rl2_pre,
        &g_rl2.expect("input gradient requested"),
        true,
    )?
    .expect("input gradient requested");

    // skip = LReLU(rl1(concat(D0, G1..GN))) + F0
    let mut g_f0 = g_skip.clone();
    let g_cat = conv_act_backward(weights, &mut grads, "rl1", &trace.rl1_input, &trace.rl1_pre, &g_skip, true)?
        .expect("input gradient requested");
    let mut parts = g_cat.split(&vec![b; cfg.num_rdb + 1])?.into_iter();
    let mut g_d0 = parts.next().expect("D0 slice");
    let mut g_rdb: Vec<Tensor3<f64>> = parts.collect();

    for i in (1..=cfg.num_rdb).rev() {
        let g_in = rdb_backward(weights, &mut grads, i, &trace.rdbs[i - 1], &g_rdb[i - 1])?;
        if i == 1 {
            add_into(&mut g_f0, &g_in)?;
        } else {
            let (cat, pre) = &trace.cascades[i - 2];
            let g_cat = conv_act_backward(weights, &mut grads, &cascade_name(i), cat, pre, &g_in, true)?
                .expect("input gradient requested");
            let mut pieces = g_cat.split(&vec![b; i])?.into_iter();
            add_into(&mut g_d0, &pieces.next().expect("D0 slice"))?;
            for (j, piece) in pieces.enumerate() {
                add_into(&mut g_rdb[j], &piece)?;
            }
        }
    }

    let g = conv_act_backward(weights, &mut grads, "shallow", &trace.d0, &trace.shallow_pre, &g_f0, true)?
        .expect("input gradient requested");
    add_into(&mut g_d0, &g)?;
    conv_act_backward(weights, &mut grads, "down", &trace.input, &trace.down_pre, &g_d0, false)?;
    Ok(grads)
}
