//! Layer primitives: convolution, ReLU, 2x2 max-pool, nearest
//! up-sampling, channel concatenation and sigmoid, each with its exact
//! backward pass. All functions are pure; identical inputs produce
//! bitwise-identical outputs.

use super::{PoolIndex, Shape, Tensor};
use crate::error::{Error, Result};

/// 2-D convolution with zero-padded borders.
///
/// `w` has shape (out_channels, in_channels, kh, kw) and `b` one entry per
/// output channel. The output spatial size is
/// `(h + 2*pad - kh) / stride + 1`; the division must be exact.
pub fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &[f64],
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.c != ws.c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {} channels but kernel expects {}", xs.c, ws.c),
        ));
    }
    if b.len() != ws.n {
        return Err(Error::shape(
            "conv2d",
            format!("bias length {} != out_channels {}", b.len(), ws.n),
        ));
    }
    if stride == 0 {
        return Err(Error::shape("conv2d", "stride must be >= 1".to_string()));
    }
    let (oh, ow) = conv_out_dims(xs, ws, stride, pad)?;
    let os = Shape::new(xs.n, ws.n, oh, ow);
    let mut y = Tensor::zeros(os);

    for n in 0..xs.n {
        for o in 0..ws.n {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b[o];
                    for c in 0..xs.c {
                        for kh in 0..ws.h {
                            let ih = (i * stride + kh) as isize - pad as isize;
                            if ih < 0 || ih >= xs.h as isize {
                                continue;
                            }
                            for kw in 0..ws.w {
                                let iw = (j * stride + kw) as isize - pad as isize;
                                if iw < 0 || iw >= xs.w as isize {
                                    continue;
                                }
                                acc += x.at(n, c, ih as usize, iw as usize) * w.at(o, c, kh, kw);
                            }
                        }
                    }
                    y.set(n, o, i, j, acc);
                }
            }
        }
    }
    Ok(y)
}

/// Gradients of [`conv2d_forward`] with respect to input, kernel and bias.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let (xs, ws) = (x.shape(), w.shape());
    let (oh, ow) = conv_out_dims(xs, ws, stride, pad)?;
    let expect = Shape::new(xs.n, ws.n, oh, ow);
    if dy.shape() != expect {
        return Err(Error::shape(
            "conv2d_backward",
            format!("dy has shape {}, expected {}", dy.shape(), expect),
        ));
    }

    let mut dx = Tensor::zeros(xs);
    let mut dw = Tensor::zeros(ws);
    let mut db = vec![0.0; ws.n];

    for n in 0..xs.n {
        for o in 0..ws.n {
            for i in 0..oh {
                for j in 0..ow {
                    let g = dy.at(n, o, i, j);
                    db[o] += g;
                    if g == 0.0 {
                        continue;
                    }
                    for c in 0..xs.c {
                        for kh in 0..ws.h {
                            let ih = (i * stride + kh) as isize - pad as isize;
                            if ih < 0 || ih >= xs.h as isize {
                                continue;
                            }
                            for kw in 0..ws.w {
                                let iw = (j * stride + kw) as isize - pad as isize;
                                if iw < 0 || iw >= xs.w as isize {
                                    continue;
                                }
                                let (ih, iw) = (ih as usize, iw as usize);
                                let wi = ws.idx(o, c, kh, kw);
                                let xi = xs.idx(n, c, ih, iw);
                                dw.data_mut()[wi] += g * x.data()[xi];
                                dx.data_mut()[xi] += g * w.data()[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((dx, dw, db))
}

fn conv_out_dims(xs: Shape, ws: Shape, stride: usize, pad: usize) -> Result<(usize, usize)> {
    let span_h = xs.h + 2 * pad;
    let span_w = xs.w + 2 * pad;
    if span_h < ws.h || span_w < ws.w {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {}x{} larger than padded input {span_h}x{span_w}", ws.h, ws.w),
        ));
    }
    if (span_h - ws.h) % stride != 0 || (span_w - ws.w) % stride != 0 {
        return Err(Error::shape(
            "conv2d",
            format!(
                "stride {stride} does not evenly tile padded input {span_h}x{span_w} with kernel {}x{}",
                ws.h, ws.w
            ),
        ));
    }
    Ok(((span_h - ws.h) / stride + 1, (span_w - ws.w) / stride + 1))
}

/// y = max(x, 0), elementwise.
pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

/// dx = dy where x > 0, else 0. Exactly zero input routes zero gradient.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if x.shape() != dy.shape() {
        return Err(Error::shape(
            "relu_backward",
            format!("{} vs {}", x.shape(), dy.shape()),
        ));
    }
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    Ok(dx)
}

/// 2x2 max-pooling with stride 2. Spatial dims must be even. Ties break
/// toward the lowest flat index within the window, so the backward pass is
/// deterministic.
pub fn maxpool2x2(x: &Tensor) -> Result<(Tensor, PoolIndex)> {
    let s = x.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::shape(
            "maxpool2x2",
            format!("spatial dims must be even, got {}x{}", s.h, s.w),
        ));
    }
    let os = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut y = Tensor::zeros(os);
    let mut argmax = vec![0u8; os.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for i in 0..os.h {
                for j in 0..os.w {
                    let mut best = f64::NEG_INFINITY;
                    let mut win = 0u8;
                    for (k, (dh, dw)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                        let v = x.at(n, c, 2 * i + dh, 2 * j + dw);
                        if v > best {
                            best = v;
                            win = k as u8;
                        }
                    }
                    y.set(n, c, i, j, best);
                    argmax[os.idx(n, c, i, j)] = win;
                }
            }
        }
    }
    Ok((
        y,
        PoolIndex {
            out_shape: os,
            argmax,
        },
    ))
}

/// Route each pooled gradient back to the cell that won its window.
pub fn maxpool2x2_backward(idx: &PoolIndex, dy: &Tensor) -> Result<Tensor> {
    if dy.shape() != idx.out_shape {
        return Err(Error::shape(
            "maxpool2x2_backward",
            format!("dy has shape {}, expected {}", dy.shape(), idx.out_shape),
        ));
    }
    let os = idx.out_shape;
    let xs = Shape::new(os.n, os.c, os.h * 2, os.w * 2);
    let mut dx = Tensor::zeros(xs);
    for n in 0..os.n {
        for c in 0..os.c {
            for i in 0..os.h {
                for j in 0..os.w {
                    let win = idx.argmax[os.idx(n, c, i, j)] as usize;
                    let (dh, dw) = (win / 2, win % 2);
                    let xi = xs.idx(n, c, 2 * i + dh, 2 * j + dw);
                    dx.data_mut()[xi] += dy.at(n, c, i, j);
                }
            }
        }
    }
    Ok(dx)
}

/// Nearest-neighbor 2x upsampling: each input cell becomes a 2x2 block.
pub fn upsample2x_nearest(x: &Tensor) -> Tensor {
    let s = x.shape();
    let os = Shape::new(s.n, s.c, s.h * 2, s.w * 2);
    let mut y = Tensor::zeros(os);
    for n in 0..s.n {
        for c in 0..s.c {
            for i in 0..s.h {
                for j in 0..s.w {
                    let v = x.at(n, c, i, j);
                    y.set(n, c, 2 * i, 2 * j, v);
                    y.set(n, c, 2 * i, 2 * j + 1, v);
                    y.set(n, c, 2 * i + 1, 2 * j, v);
                    y.set(n, c, 2 * i + 1, 2 * j + 1, v);
                }
            }
        }
    }
    y
}

/// Adjoint of [`upsample2x_nearest`]: sum each 2x2 block of dy.
pub fn upsample2x_backward(dy: &Tensor) -> Result<Tensor> {
    let s = dy.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::shape(
            "upsample2x_backward",
            format!("dy spatial dims must be even, got {}x{}", s.h, s.w),
        ));
    }
    let os = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut dx = Tensor::zeros(os);
    for n in 0..os.n {
        for c in 0..os.c {
            for i in 0..os.h {
                for j in 0..os.w {
                    let sum = dy.at(n, c, 2 * i, 2 * j)
                        + dy.at(n, c, 2 * i, 2 * j + 1)
                        + dy.at(n, c, 2 * i + 1, 2 * j)
                        + dy.at(n, c, 2 * i + 1, 2 * j + 1);
                    dx.set(n, c, i, j, sum);
                }
            }
        }
    }
    Ok(dx)
}

/// Concatenate along the channel axis, `a`'s channels first.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(Error::shape(
            "concat_channels",
            format!("{} vs {} (n/h/w must agree)", sa, sb),
        ));
    }
    let os = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let mut y = Tensor::zeros(os);
    let plane = sa.h * sa.w;
    for n in 0..sa.n {
        for c in 0..sa.c {
            let src = sa.idx(n, c, 0, 0);
            let dst = os.idx(n, c, 0, 0);
            y.data_mut()[dst..dst + plane].copy_from_slice(&a.data()[src..src + plane]);
        }
        for c in 0..sb.c {
            let src = sb.idx(n, c, 0, 0);
            let dst = os.idx(n, sa.c + c, 0, 0);
            y.data_mut()[dst..dst + plane].copy_from_slice(&b.data()[src..src + plane]);
        }
    }
    Ok(y)
}

/// Split a concatenated gradient back into the two channel groups.
pub fn concat_backward(dy: &Tensor, a_channels: usize) -> Result<(Tensor, Tensor)> {
    let s = dy.shape();
    if a_channels == 0 || a_channels >= s.c {
        return Err(Error::shape(
            "concat_backward",
            format!("cannot split {} channels at {a_channels}", s.c),
        ));
    }
    let sa = Shape::new(s.n, a_channels, s.h, s.w);
    let sb = Shape::new(s.n, s.c - a_channels, s.h, s.w);
    let mut da = Tensor::zeros(sa);
    let mut db = Tensor::zeros(sb);
    let plane = s.h * s.w;
    for n in 0..s.n {
        for c in 0..sa.c {
            let src = s.idx(n, c, 0, 0);
            let dst = sa.idx(n, c, 0, 0);
            da.data_mut()[dst..dst + plane].copy_from_slice(&dy.data()[src..src + plane]);
        }
        for c in 0..sb.c {
            let src = s.idx(n, sa.c + c, 0, 0);
            let dst = sb.idx(n, c, 0, 0);
            db.data_mut()[dst..dst + plane].copy_from_slice(&dy.data()[src..src + plane]);
        }
    }
    Ok((da, db))
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = if *v >= 0.0 {
            1.0 / (1.0 + (-*v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        };
    }
    y
}

/// dx = dy * y * (1 - y), taking the forward output `y`.
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if y.shape() != dy.shape() {
        return Err(Error::shape(
            "sigmoid_backward",
            format!("{} vs {}", y.shape(), dy.shape()),
        ));
    }
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        *d *= v * (1.0 - v);
    }
    Ok(dx)
}
