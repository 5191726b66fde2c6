//! Forward and backward passes for the individual layers.
//!
//! Tensors are flat `f64` slices in row-major order with the channel axis
//! outermost: an image is `c * h * w`, a 3D block is `c * d * h * w`.
//! Shapes are part of each function's contract and violations panic; the
//! model layer validates user-facing dimensions before calling in.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

/// 3x3 cross-correlation with zero padding 1; spatial size is preserved.
/// `wgt` is `co * ci * 3 * 3`, `bias` is `co`.
pub fn conv2d_forward(
    x: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    wgt: &[f64],
    bias: &[f64],
    co: usize,
) -> Vec<f64> {
    assert_eq!(x.len(), ci * h * w, "conv2d input size");
    assert_eq!(wgt.len(), co * ci * 9, "conv2d weight size");
    assert_eq!(bias.len(), co, "conv2d bias size");
    let mut y = vec![0.0; co * h * w];
    for o in 0..co {
        for i in 0..ci {
            let k = &wgt[(o * ci + i) * 9..(o * ci + i) * 9 + 9];
            let xc = &x[i * h * w..(i + 1) * h * w];
            let yc = &mut y[o * h * w..(o + 1) * h * w];
            for r in 0..h {
                for c in 0..w {
                    let mut acc = 0.0;
                    for dr in 0..3usize {
                        let rr = r as isize + dr as isize - 1;
                        if rr < 0 || rr >= h as isize {
                            continue;
                        }
                        for dc in 0..3usize {
                            let cc = c as isize + dc as isize - 1;
                            if cc < 0 || cc >= w as isize {
                                continue;
                            }
                            acc += k[dr * 3 + dc] * xc[rr as usize * w + cc as usize];
                        }
                    }
                    yc[r * w + c] += acc;
                }
            }
        }
        let yc = &mut y[o * h * w..(o + 1) * h * w];
        yc.iter_mut().for_each(|v| *v += bias[o]);
    }
    y
}

/// Gradients of `conv2d_forward`; returns `(dx, dw, db)`.
pub fn conv2d_backward(
    x: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    wgt: &[f64],
    co: usize,
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    assert_eq!(dy.len(), co * h * w, "conv2d upstream size");
    let mut dx = vec![0.0; ci * h * w];
    let mut dw = vec![0.0; co * ci * 9];
    let mut db = vec![0.0; co];
    for o in 0..co {
        let dyc = &dy[o * h * w..(o + 1) * h * w];
        db[o] += dyc.iter().sum::<f64>();
        for i in 0..ci {
            let k = &wgt[(o * ci + i) * 9..(o * ci + i) * 9 + 9];
            let xc = &x[i * h * w..(i + 1) * h * w];
            let dxc = &mut dx[i * h * w..(i + 1) * h * w];
            let dk = &mut dw[(o * ci + i) * 9..(o * ci + i) * 9 + 9];
            for r in 0..h {
                for c in 0..w {
                    let g = dyc[r * w + c];
                    if g == 0.0 {
                        continue;
                    }
                    for dr in 0..3usize {
                        let rr = r as isize + dr as isize - 1;
                        if rr < 0 || rr >= h as isize {
                            continue;
                        }
                        for dc in 0..3usize {
                            let cc = c as isize + dc as isize - 1;
                            if cc < 0 || cc >= w as isize {
                                continue;
                            }
                            let xi = rr as usize * w + cc as usize;
                            dk[dr * 3 + dc] += g * xc[xi];
                            dxc[xi] += g * k[dr * 3 + dc];
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// 3x3x3 cross-correlation with zero padding 1; `wgt` is `co * ci * 27`.
pub fn conv3d_forward(
    x: &[f64],
    ci: usize,
    d: usize,
    h: usize,
    w: usize,
    wgt: &[f64],
    bias: &[f64],
    co: usize,
) -> Vec<f64> {
    assert_eq!(x.len(), ci * d * h * w, "conv3d input size");
    assert_eq!(wgt.len(), co * ci * 27, "conv3d weight size");
    assert_eq!(bias.len(), co, "conv3d bias size");
    let plane = h * w;
    let vol = d * plane;
    let mut y = vec![0.0; co * vol];
    for o in 0..co {
        for i in 0..ci {
            let k = &wgt[(o * ci + i) * 27..(o * ci + i) * 27 + 27];
            let xc = &x[i * vol..(i + 1) * vol];
            let yc = &mut y[o * vol..(o + 1) * vol];
            for z in 0..d {
                for r in 0..h {
                    for c in 0..w {
                        let mut acc = 0.0;
                        for dz in 0..3usize {
                            let zz = z as isize + dz as isize - 1;
                            if zz < 0 || zz >= d as isize {
                                continue;
                            }
                            for dr in 0..3usize {
                                let rr = r as isize + dr as isize - 1;
                                if rr < 0 || rr >= h as isize {
                                    continue;
                                }
                                for dc in 0..3usize {
                                    let cc = c as isize + dc as isize - 1;
                                    if cc < 0 || cc >= w as isize {
                                        continue;
                                    }
                                    acc += k[(dz * 3 + dr) * 3 + dc]
                                        * xc[zz as usize * plane
                                            + rr as usize * w
                                            + cc as usize];
                                }
                            }
                        }
                        yc[z * plane + r * w + c] += acc;
                    }
                }
            }
        }
        let yc = &mut y[o * vol..(o + 1) * vol];
        yc.iter_mut().for_each(|v| *v += bias[o]);
    }
    y
}

/// Gradients of `conv3d_forward`; returns `(dx, dw, db)`.
pub fn conv3d_backward(
    x: &[f64],
    ci: usize,
    d: usize,
    h: usize,
    w: usize,
    wgt: &[f64],
    co: usize,
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = h * w;
    let vol = d * plane;
    assert_eq!(dy.len(), co * vol, "conv3d upstream size");
    let mut dx = vec![0.0; ci * vol];
    let mut dw = vec![0.0; co * ci * 27];
    let mut db = vec![0.0; co];
    for o in 0..co {
        let dyc = &dy[o * vol..(o + 1) * vol];
        db[o] += dyc.iter().sum::<f64>();
        for i in 0..ci {
            let k = &wgt[(o * ci + i) * 27..(o * ci + i) * 27 + 27];
            let xc = &x[i * vol..(i + 1) * vol];
            let dxc = &mut dx[i * vol..(i + 1) * vol];
            let dk = &mut dw[(o * ci + i) * 27..(o * ci + i) * 27 + 27];
            for z in 0..d {
                for r in 0..h {
                    for c in 0..w {
                        let g = dyc[z * plane + r * w + c];
                        if g == 0.0 {
                            continue;
                        }
                        for dz in 0..3usize {
                            let zz = z as isize + dz as isize - 1;
                            if zz < 0 || zz >= d as isize {
                                continue;
                            }
                            for dr in 0..3usize {
                                let rr = r as isize + dr as isize - 1;
                                if rr < 0 || rr >= h as isize {
                                    continue;
                                }
                                for dc in 0..3usize {
                                    let cc = c as isize + dc as isize - 1;
                                    if cc < 0 || cc >= w as isize {
                                        continue;
                                    }
                                    let xi = zz as usize * plane
                                        + rr as usize * w
                                        + cc as usize;
                                    dk[(dz * 3 + dr) * 3 + dc] += g * xc[xi];
                                    dxc[xi] += g * k[(dz * 3 + dr) * 3 + dc];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// 2x2x2 max pooling with stride 2; trailing odd planes are dropped.
/// Returns the pooled block and the argmax index of each output cell in the
/// input slice.
pub fn maxpool3d_forward(
    x: &[f64],
    c: usize,
    d: usize,
    h: usize,
    w: usize,
) -> (Vec<f64>, Vec<usize>, [usize; 3]) {
    assert_eq!(x.len(), c * d * h * w, "maxpool3d input size");
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    assert!(od > 0 && oh > 0 && ow > 0, "maxpool3d extent too small");
    let plane = h * w;
    let vol = d * plane;
    let mut y = vec![0.0; c * od * oh * ow];
    let mut arg = vec![0usize; y.len()];
    for ch in 0..c {
        for z in 0..od {
            for r in 0..oh {
                for col in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut bi = 0;
                    for dz in 0..2 {
                        for dr in 0..2 {
                            for dc in 0..2 {
                                let xi = ch * vol
                                    + (2 * z + dz) * plane
                                    + (2 * r + dr) * w
                                    + (2 * col + dc);
                                if x[xi] > best {
                                    best = x[xi];
                                    bi = xi;
                                }
                            }
                        }
                    }
                    let yi = ((ch * od + z) * oh + r) * ow + col;
                    y[yi] = best;
                    arg[yi] = bi;
                }
            }
        }
    }
    (y, arg, [od, oh, ow])
}

pub fn maxpool3d_backward(dy: &[f64], arg: &[usize], x_len: usize) -> Vec<f64> {
    assert_eq!(dy.len(), arg.len(), "maxpool3d upstream size");
    let mut dx = vec![0.0; x_len];
    for (g, &i) in dy.iter().zip(arg) {
        dx[i] += g;
    }
    dx
}

/// Pseudorandom pooling interval lengths along one axis.
///
/// An extent `n` with ratio `rho` in (1, 2] is cut into `floor(n / rho)`
/// contiguous intervals whose lengths are `base = floor(n / n_out)` or
/// `base + 1`, with exactly enough long intervals to sum to `n`; the order
/// of lengths is a seeded shuffle. With `rho = 2` on an even extent every
/// interval has length 2, reproducing plain 2x2 pooling.
pub fn fmp_intervals(extent: usize, ratio: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    assert!(ratio > 1.0 && ratio <= 2.0, "pool ratio must be in (1, 2]");
    let n_out = (extent as f64 / ratio).floor() as usize;
    assert!(n_out >= 1, "pool input extent {extent} too small for ratio {ratio}");
    let base = extent / n_out;
    let n_long = extent - base * n_out;
    let mut lens: Vec<usize> = Vec::with_capacity(n_out);
    lens.extend(std::iter::repeat(base + 1).take(n_long));
    lens.extend(std::iter::repeat(base).take(n_out - n_long));
    lens.shuffle(rng);
    lens
}

/// Number of pooled cells `fmp_intervals` produces for one axis.
pub fn fmp_out(extent: usize, ratio: f64) -> usize {
    (extent as f64 / ratio).floor() as usize
}

/// Fractional max pooling over a `c * h * w` block using per-axis interval
/// lengths. Returns the pooled block and argmax indices into the input.
pub fn fmp_forward(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    row_lens: &[usize],
    col_lens: &[usize],
) -> (Vec<f64>, Vec<usize>) {
    assert_eq!(x.len(), c * h * w, "fmp input size");
    assert_eq!(row_lens.iter().sum::<usize>(), h, "row intervals must cover the axis");
    assert_eq!(col_lens.iter().sum::<usize>(), w, "column intervals must cover the axis");
    let (oh, ow) = (row_lens.len(), col_lens.len());
    let mut row_start = Vec::with_capacity(oh);
    let mut acc = 0;
    for &l in row_lens {
        row_start.push(acc);
        acc += l;
    }
    let mut col_start = Vec::with_capacity(ow);
    acc = 0;
    for &l in col_lens {
        col_start.push(acc);
        acc += l;
    }
    let mut y = vec![0.0; c * oh * ow];
    let mut arg = vec![0usize; y.len()];
    for ch in 0..c {
        for (r, (&r0, &rl)) in row_start.iter().zip(row_lens).enumerate() {
            for (col, (&c0, &cl)) in col_start.iter().zip(col_lens).enumerate() {
                let mut best = f64::NEG_INFINITY;
                let mut bi = 0;
                for rr in r0..r0 + rl {
                    for cc in c0..c0 + cl {
                        let xi = ch * h * w + rr * w + cc;
                        if x[xi] > best {
                            best = x[xi];
                            bi = xi;
                        }
                    }
                }
                let yi = (ch * oh + r) * ow + col;
                y[yi] = best;
                arg[yi] = bi;
            }
        }
    }
    (y, arg)
}

pub fn fmp_backward(dy: &[f64], arg: &[usize], x_len: usize) -> Vec<f64> {
    assert_eq!(dy.len(), arg.len(), "fmp upstream size");
    let mut dx = vec![0.0; x_len];
    for (g, &i) in dy.iter().zip(arg) {
        dx[i] += g;
    }
    dx
}

/// Fully connected layer `y = W x + b` with `w` stored `n_out * n_in`
/// row-major.
pub fn dense_forward(x: &[f64], w: &[f64], b: &[f64], n_out: usize) -> Vec<f64> {
    let n_in = x.len();
    assert_eq!(w.len(), n_out * n_in, "dense weight size");
    assert_eq!(b.len(), n_out, "dense bias size");
    let mut y = Vec::with_capacity(n_out);
    for o in 0..n_out {
        let row = &w[o * n_in..(o + 1) * n_in];
        y.push(row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b[o]);
    }
    y
}

/// Gradients of `dense_forward`; returns `(dx, dw, db)`.
pub fn dense_backward(x: &[f64], w: &[f64], n_out: usize, dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n_in = x.len();
    assert_eq!(dy.len(), n_out, "dense upstream size");
    let mut dx = vec![0.0; n_in];
    let mut dw = vec![0.0; n_out * n_in];
    for o in 0..n_out {
        let g = dy[o];
        let row = &w[o * n_in..(o + 1) * n_in];
        let drow = &mut dw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            dx[i] += g * row[i];
            drow[i] += g * x[i];
        }
    }
    (dx, dw, dy.to_vec())
}

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub fn relu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), dy.len(), "relu upstream size");
    x.iter()
        .zip(dy)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect()
}

/// Shared per-slice linear map followed by an average over slices.
///
/// `x` holds `l` rows of `f_in` features; every row goes through the same
/// `f_out x f_in` dense map and the `l` outputs are averaged into one
/// `f_out` vector, so the result is invariant to slice order.
pub fn fuse1x1_forward(x: &[f64], l: usize, f_in: usize, w: &[f64], b: &[f64], f_out: usize) -> Vec<f64> {
    assert_eq!(x.len(), l * f_in, "fuse input size");
    assert!(l > 0, "fuse needs at least one slice");
    let mut y = vec![0.0; f_out];
    for s in 0..l {
        let row = dense_forward(&x[s * f_in..(s + 1) * f_in], w, b, f_out);
        for (acc, v) in y.iter_mut().zip(&row) {
            *acc += v;
        }
    }
    let inv = 1.0 / l as f64;
    y.iter_mut().for_each(|v| *v *= inv);
    y
}

/// Gradients of `fuse1x1_forward`; returns `(dx, dw, db)`.
pub fn fuse1x1_backward(
    x: &[f64],
    l: usize,
    f_in: usize,
    w: &[f64],
    f_out: usize,
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    assert_eq!(dy.len(), f_out, "fuse upstream size");
    let inv = 1.0 / l as f64;
    let dslice: Vec<f64> = dy.iter().map(|g| g * inv).collect();
    let mut dx = vec![0.0; l * f_in];
    let mut dw = vec![0.0; f_out * f_in];
    let mut db = vec![0.0; f_out];
    for s in 0..l {
        let (dxs, dws, dbs) = dense_backward(&x[s * f_in..(s + 1) * f_in], w, f_out, &dslice);
        dx[s * f_in..(s + 1) * f_in].copy_from_slice(&dxs);
        for (a, v) in dw.iter_mut().zip(&dws) {
            *a += v;
        }
        for (a, v) in db.iter_mut().zip(&dbs) {
            *a += v;
        }
    }
    (dx, dw, db)
}

/// Numerically stable binary cross-entropy on a logit.
///
/// Returns `(loss, dloss/dlogit)`; the gradient is `sigmoid(logit) - y`.
pub fn bce_with_logits(logit: f64, y: bool) -> (f64, f64) {
    let t = if y { 1.0 } else { 0.0 };
    let loss = logit.max(0.0) - logit * t + (-logit.abs()).exp().ln_1p();
    let p = sigmoid(logit);
    (loss, p - t)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
