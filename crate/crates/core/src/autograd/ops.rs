//! Differentiable operations. Backward closures are expressed through these
//! same operations so that second-order gradients are available, with the
//! exception of [`pixel_norm`] (first order only; it never sits inside the
//! critic).

use super::{is_grad_enabled, BackwardCtx, Var};
use crate::error::{Error, Result};
use crate::tensor::{kernels, Tensor};

fn need(ctx: &BackwardCtx<'_>, i: usize) -> bool {
    ctx.needs[i]
}

fn unwrap<T>(r: Result<T>) -> T {
    r.expect("backward shapes are consistent with the forward pass")
}

pub fn add(a: &Var, b: &Var) -> Result<Var> {
    let value = a.value().zip_map(b.value(), |x, y| x + y)?;
    Ok(Var::from_op(value, vec![a.clone(), b.clone()], |ctx| {
        vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]
    }))
}

pub fn sub(a: &Var, b: &Var) -> Result<Var> {
    let value = a.value().zip_map(b.value(), |x, y| x - y)?;
    Ok(Var::from_op(value, vec![a.clone(), b.clone()], |ctx| {
        let gb = need(ctx, 1).then(|| scale(ctx.grad, -1.0));
        vec![Some(ctx.grad.clone()), gb]
    }))
}

/// Elementwise product.
pub fn mul(a: &Var, b: &Var) -> Result<Var> {
    let value = a.value().zip_map(b.value(), |x, y| x * y)?;
    Ok(Var::from_op(value, vec![a.clone(), b.clone()], |ctx| {
        let ga = need(ctx, 0).then(|| unwrap(mul(ctx.grad, &ctx.inputs[1])));
        let gb = need(ctx, 1).then(|| unwrap(mul(ctx.grad, &ctx.inputs[0])));
        vec![ga, gb]
    }))
}

pub fn scale(a: &Var, s: f32) -> Var {
    affine(a, s, 0.0)
}

/// `s * a + c`.
pub fn affine(a: &Var, s: f32, c: f32) -> Var {
    let value = a.value().map(|x| s * x + c);
    Var::from_op(value, vec![a.clone()], move |ctx| vec![Some(scale(ctx.grad, s))])
}

/// `(1 - alpha) * a + alpha * b`.
pub fn lerp(a: &Var, b: &Var, alpha: f32) -> Result<Var> {
    add(&scale(a, 1.0 - alpha), &scale(b, alpha))
}

pub fn square(a: &Var) -> Var {
    unwrap(mul(a, a))
}

/// Sum of all elements, shape `[1]`.
pub fn sum_all(a: &Var) -> Var {
    let value = Tensor::scalar(a.value().sum());
    let shape = a.shape().to_vec();
    Var::from_op(value, vec![a.clone()], move |ctx| {
        vec![Some(unwrap(expand_scalar(ctx.grad, &shape)))]
    })
}

pub fn mean_all(a: &Var) -> Var {
    let n = a.value().numel().max(1) as f32;
    scale(&sum_all(a), 1.0 / n)
}

/// Broadcast a single value to `shape`.
pub fn expand_scalar(a: &Var, shape: &[usize]) -> Result<Var> {
    if a.value().numel() != 1 {
        return Err(Error::shape("expand_scalar needs a single value"));
    }
    let value = Tensor::full(shape, a.value().item());
    let src_shape = a.shape().to_vec();
    Ok(Var::from_op(value, vec![a.clone()], move |ctx| {
        vec![Some(unwrap(reshape(&sum_all(ctx.grad), &src_shape)))]
    }))
}

/// Sum over all axes but the first, shape `[N]`.
pub fn sum_per_sample(a: &Var) -> Result<Var> {
    let value = kernels::sum_per_sample(a.value())?;
    let shape = a.shape().to_vec();
    Ok(Var::from_op(value, vec![a.clone()], move |ctx| {
        vec![Some(unwrap(expand_per_sample(ctx.grad, &shape)))]
    }))
}

pub fn expand_per_sample(a: &Var, shape: &[usize]) -> Result<Var> {
    let value = kernels::expand_per_sample(a.value(), shape)?;
    Ok(Var::from_op(value, vec![a.clone()], |ctx| {
        vec![Some(unwrap(sum_per_sample(ctx.grad)))]
    }))
}

pub fn sqrt(a: &Var) -> Var {
    let value = a.value().map(f32::sqrt);
    Var::from_op(value, vec![a.clone()], |ctx| {
        let half_inv = scale(&recip(ctx.output), 0.5);
        vec![Some(unwrap(mul(ctx.grad, &half_inv)))]
    })
}

pub fn recip(a: &Var) -> Var {
    let value = a.value().map(|x| 1.0 / x);
    Var::from_op(value, vec![a.clone()], |ctx| {
        let d = scale(&square(ctx.output), -1.0);
        vec![Some(unwrap(mul(ctx.grad, &d)))]
    })
}

pub fn tanh(a: &Var) -> Var {
    let value = a.value().map(f32::tanh);
    Var::from_op(value, vec![a.clone()], |ctx| {
        let d = affine(&square(ctx.output), -1.0, 1.0);
        vec![Some(unwrap(mul(ctx.grad, &d)))]
    })
}

/// `max(x, slope * x)`; the derivative at exactly zero is `slope`.
pub fn leaky_relu(x: &Var, slope: f32) -> Var {
    let value = x.value().map(|v| if v > 0.0 { v } else { slope * v });
    Var::from_op(value, vec![x.clone()], move |ctx| {
        vec![Some(unwrap(leaky_relu_grad(ctx.grad, &ctx.inputs[0], slope)))]
    })
}

/// `grad * leaky_relu'(x)`. Piecewise constant in `x`, so only `grad`
/// receives a gradient.
pub fn leaky_relu_grad(grad: &Var, x: &Var, slope: f32) -> Result<Var> {
    let value = grad
        .value()
        .zip_map(x.value(), |g, v| if v > 0.0 { g } else { slope * g })?;
    Ok(Var::from_op(value, vec![grad.clone(), x.clone()], move |ctx| {
        vec![Some(unwrap(leaky_relu_grad(ctx.grad, &ctx.inputs[1], slope))), None]
    }))
}

pub fn conv2d(x: &Var, w: &Var, padding: usize) -> Result<Var> {
    let value = kernels::conv2d(x.value(), w.value(), padding)?;
    Ok(Var::from_op(value, vec![x.clone(), w.clone()], move |ctx| {
        let (x, w) = (&ctx.inputs[0], &ctx.inputs[1]);
        let gx = need(ctx, 0).then(|| unwrap(conv2d_input_grad(ctx.grad, w, padding, x.shape())));
        let gw = need(ctx, 1).then(|| unwrap(conv2d_weight_grad(x, ctx.grad, padding, w.shape())));
        vec![gx, gw]
    }))
}

/// Transposed convolution computing the input gradient of [`conv2d`].
pub fn conv2d_input_grad(g: &Var, w: &Var, padding: usize, input_shape: &[usize]) -> Result<Var> {
    let value = kernels::conv2d_input_grad(g.value(), w.value(), padding, input_shape)?;
    Ok(Var::from_op(value, vec![g.clone(), w.clone()], move |ctx| {
        let (g, w) = (&ctx.inputs[0], &ctx.inputs[1]);
        let gg = need(ctx, 0).then(|| unwrap(conv2d(ctx.grad, w, padding)));
        let gw = need(ctx, 1).then(|| unwrap(conv2d_weight_grad(ctx.grad, g, padding, w.shape())));
        vec![gg, gw]
    }))
}

/// Weight gradient of [`conv2d`], bilinear in `(x, g)`.
pub fn conv2d_weight_grad(x: &Var, g: &Var, padding: usize, weight_shape: &[usize]) -> Result<Var> {
    let value = kernels::conv2d_weight_grad(x.value(), g.value(), padding, weight_shape)?;
    Ok(Var::from_op(value, vec![x.clone(), g.clone()], move |ctx| {
        let (x, g) = (&ctx.inputs[0], &ctx.inputs[1]);
        let gx = need(ctx, 0).then(|| unwrap(conv2d_input_grad(g, ctx.grad, padding, x.shape())));
        let gg = need(ctx, 1).then(|| unwrap(conv2d(x, ctx.grad, padding)));
        vec![gx, gg]
    }))
}

pub fn add_channel_bias(x: &Var, b: &Var) -> Result<Var> {
    let value = kernels::add_channel_bias(x.value(), b.value())?;
    Ok(Var::from_op(value, vec![x.clone(), b.clone()], |ctx| {
        let gb = need(ctx, 1).then(|| unwrap(sum_channels(ctx.grad)));
        vec![Some(ctx.grad.clone()), gb]
    }))
}

pub fn sum_channels(x: &Var) -> Result<Var> {
    let value = kernels::sum_channels(x.value())?;
    let shape = x.shape().to_vec();
    Ok(Var::from_op(value, vec![x.clone()], move |ctx| {
        vec![Some(unwrap(broadcast_channels(ctx.grad, &shape)))]
    }))
}

pub fn broadcast_channels(x: &Var, shape: &[usize]) -> Result<Var> {
    let value = kernels::broadcast_channels(x.value(), shape)?;
    Ok(Var::from_op(value, vec![x.clone()], |ctx| {
        vec![Some(unwrap(sum_channels(ctx.grad)))]
    }))
}

pub fn matmul(a: &Var, b: &Var) -> Result<Var> {
    let value = kernels::matmul(a.value(), b.value())?;
    Ok(Var::from_op(value, vec![a.clone(), b.clone()], |ctx| {
        let (a, b) = (&ctx.inputs[0], &ctx.inputs[1]);
        let ga = need(ctx, 0).then(|| unwrap(matmul(ctx.grad, &unwrap(transpose(b)))));
        let gb = need(ctx, 1).then(|| unwrap(matmul(&unwrap(transpose(a)), ctx.grad)));
        vec![ga, gb]
    }))
}

pub fn transpose(a: &Var) -> Result<Var> {
    let value = kernels::transpose2d(a.value())?;
    Ok(Var::from_op(value, vec![a.clone()], |ctx| {
        vec![Some(unwrap(transpose(ctx.grad)))]
    }))
}

pub fn reshape(a: &Var, shape: &[usize]) -> Result<Var> {
    let value = a.value().reshape(shape)?;
    let src = a.shape().to_vec();
    Ok(Var::from_op(value, vec![a.clone()], move |ctx| {
        vec![Some(unwrap(reshape(ctx.grad, &src)))]
    }))
}

/// `[N, C, H, W] -> [N, C*H*W]`.
pub fn flatten(a: &Var) -> Result<Var> {
    let n = *a.shape().first().ok_or_else(|| Error::shape("flatten of a scalar"))?;
    let rest = a.value().numel() / n.max(1);
    reshape(a, &[n, rest])
}

pub fn upsample_nearest2x(x: &Var) -> Result<Var> {
    let value = kernels::upsample_nearest2x(x.value())?;
    Ok(Var::from_op(value, vec![x.clone()], |ctx| {
        vec![Some(scale(&unwrap(downsample_avg2x(ctx.grad)), 4.0))]
    }))
}

pub fn downsample_avg2x(x: &Var) -> Result<Var> {
    let value = kernels::downsample_avg2x(x.value())?;
    Ok(Var::from_op(value, vec![x.clone()], |ctx| {
        vec![Some(scale(&unwrap(upsample_nearest2x(ctx.grad)), 0.25))]
    }))
}

pub fn concat_channels(xs: &[&Var]) -> Result<Var> {
    let values: Vec<&Tensor> = xs.iter().map(|v| v.value()).collect();
    let value = kernels::concat_channels(&values)?;
    let widths: Vec<usize> = xs.iter().map(|v| v.shape()[1]).collect();
    let inputs = xs.iter().map(|&v| v.clone()).collect();
    Ok(Var::from_op(value, inputs, move |ctx| {
        let mut offset = 0;
        widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let g = need(ctx, i).then(|| unwrap(slice_channels(ctx.grad, offset, w)));
                offset += w;
                g
            })
            .collect()
    }))
}

pub fn slice_channels(x: &Var, offset: usize, len: usize) -> Result<Var> {
    let value = kernels::slice_channels(x.value(), offset, len)?;
    let total = x.shape()[1];
    Ok(Var::from_op(value, vec![x.clone()], move |ctx| {
        vec![Some(unwrap(pad_channels(ctx.grad, offset, total)))]
    }))
}

pub fn pad_channels(x: &Var, offset: usize, total: usize) -> Result<Var> {
    let value = kernels::pad_channels(x.value(), offset, total)?;
    let len = x.shape()[1];
    Ok(Var::from_op(value, vec![x.clone()], move |ctx| {
        vec![Some(unwrap(slice_channels(ctx.grad, offset, len)))]
    }))
}

/// Mean over the batch axis, shape `[1, ...]`.
pub fn mean_batch(x: &Var) -> Result<Var> {
    let value = kernels::mean_batch(x.value())?;
    let n = x.shape()[0];
    Ok(Var::from_op(value, vec![x.clone()], move |ctx| {
        vec![Some(scale(&unwrap(repeat_batch(ctx.grad, n)), 1.0 / n as f32))]
    }))
}

pub fn repeat_batch(x: &Var, n: usize) -> Result<Var> {
    let value = kernels::repeat_batch(x.value(), n)?;
    Ok(Var::from_op(value, vec![x.clone()], move |ctx| {
        vec![Some(scale(&unwrap(mean_batch(ctx.grad)), n as f32))]
    }))
}

/// Pixelwise feature normalization. Its backward is first order only.
pub fn pixel_norm(x: &Var, eps: f32) -> Result<Var> {
    let value = kernels::pixel_norm(x.value(), eps)?;
    Ok(Var::from_op(value, vec![x.clone()], move |ctx| {
        assert!(
            !is_grad_enabled(),
            "second-order gradients through pixel_norm are not supported"
        );
        let g = unwrap(kernels::pixel_norm_backward(ctx.inputs[0].value(), ctx.grad.value(), eps));
        vec![Some(Var::constant(g))]
    }))
}
