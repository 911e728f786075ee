//! Forward and backward kernels on raw tensors. The tape wires these
//! together; they are also usable on their own for inference.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::invalid(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

/// `out[b,o] = sum_i x[b,i] * w[i,o] + bias[o]`.
pub fn dense_forward(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    check_rank("dense", x, 2)?;
    check_rank("dense", w, 2)?;
    let (batch, n_in) = (x.shape()[0], x.shape()[1]);
    let n_out = w.shape()[1];
    if w.shape()[0] != n_in {
        return Err(Error::ShapeMismatch {
            op: "dense",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    if bias.shape() != [n_out] {
        return Err(Error::ShapeMismatch {
            op: "dense bias",
            left: w.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    let (xd, wd, bd) = (x.data(), w.data(), bias.data());
    let mut out = vec![0.0; batch * n_out];
    for b in 0..batch {
        let row = &mut out[b * n_out..(b + 1) * n_out];
        row.copy_from_slice(bd);
        for i in 0..n_in {
            let xv = xd[b * n_in + i];
            if xv == 0.0 {
                continue;
            }
            let wrow = &wd[i * n_out..(i + 1) * n_out];
            for (o, wv) in row.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    Tensor::new(vec![batch, n_out], out)
}

/// Returns `(dx, dw, dbias)`.
pub fn dense_backward(x: &Tensor, w: &Tensor, grad: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (batch, n_in) = (x.shape()[0], x.shape()[1]);
    let n_out = w.shape()[1];
    let (xd, wd) = (x.data(), w.data());
    let mut dx = vec![0.0; batch * n_in];
    let mut dw = vec![0.0; n_in * n_out];
    let mut db = vec![0.0; n_out];
    for b in 0..batch {
        let g = &grad[b * n_out..(b + 1) * n_out];
        for (d, gv) in db.iter_mut().zip(g) {
            *d += gv;
        }
        for i in 0..n_in {
            let wrow = &wd[i * n_out..(i + 1) * n_out];
            dx[b * n_in + i] = wrow.iter().zip(g).map(|(a, c)| a * c).sum();
            let xv = xd[b * n_in + i];
            if xv != 0.0 {
                let dwrow = &mut dw[i * n_out..(i + 1) * n_out];
                for (d, gv) in dwrow.iter_mut().zip(g) {
                    *d += xv * gv;
                }
            }
        }
    }
    (dx, dw, db)
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

fn conv_geom(x: &Tensor, k: &Tensor, bias: &Tensor, pad: usize) -> Result<ConvGeom> {
    check_rank("conv2d", x, 4)?;
    check_rank("conv2d", k, 4)?;
    let [batch, c_in, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [c_out, kc, kh, kw] = [k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]];
    if kc != c_in {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: x.shape().to_vec(),
            right: k.shape().to_vec(),
        });
    }
    if bias.shape() != [c_out] {
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            left: k.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    if kh > ph || kw > pw || kh == 0 || kw == 0 {
        return Err(Error::invalid(
            "conv2d",
            format!("kernel {kh}x{kw} does not fit padded input {ph}x{pw}"),
        ));
    }
    Ok(ConvGeom {
        batch,
        c_in,
        c_out,
        h,
        w,
        kh,
        kw,
        pad,
        ph,
        pw,
        oh: ph - kh + 1,
        ow: pw - kw + 1,
    })
}

fn pad_planes(x: &Tensor, g: &ConvGeom) -> Vec<f64> {
    if g.pad == 0 {
        return x.data().to_vec();
    }
    let mut out = vec![0.0; g.batch * g.c_in * g.ph * g.pw];
    let xd = x.data();
    for plane in 0..g.batch * g.c_in {
        for y in 0..g.h {
            let src = &xd[(plane * g.h + y) * g.w..(plane * g.h + y + 1) * g.w];
            let start = (plane * g.ph + y + g.pad) * g.pw + g.pad;
            out[start..start + g.w].copy_from_slice(src);
        }
    }
    out
}

/// Stride-1 cross-correlation over a zero-padded input.
pub fn conv2d_forward(x: &Tensor, k: &Tensor, bias: &Tensor, pad: usize) -> Result<Tensor> {
    let g = conv_geom(x, k, bias, pad)?;
    let padded = pad_planes(x, &g);
    let kd = k.data();
    let plane_out = g.oh * g.ow;
    let mut out = vec![0.0; g.batch * g.c_out * plane_out];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let o = &mut out[(b * g.c_out + co) * plane_out..(b * g.c_out + co + 1) * plane_out];
            o.fill(bias.data()[co]);
            for ci in 0..g.c_in {
                let src = &padded[(b * g.c_in + ci) * g.ph * g.pw..(b * g.c_in + ci + 1) * g.ph * g.pw];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let kv = kd[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx];
                        for oy in 0..g.oh {
                            let srow = &src[(oy + ky) * g.pw + kx..(oy + ky) * g.pw + kx + g.ow];
                            let orow = &mut o[oy * g.ow..(oy + 1) * g.ow];
                            for (ov, sv) in orow.iter_mut().zip(srow) {
                                *ov += kv * sv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.batch, g.c_out, g.oh, g.ow], out)
}

/// Returns `(dx, dkernels, dbias)`.
pub fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    bias: &Tensor,
    pad: usize,
    grad: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let g = conv_geom(x, k, bias, pad)?;
    let padded = pad_planes(x, &g);
    let kd = k.data();
    let plane_out = g.oh * g.ow;
    let plane_pad = g.ph * g.pw;
    let mut dpad = vec![0.0; g.batch * g.c_in * plane_pad];
    let mut dk = vec![0.0; kd.len()];
    let mut db = vec![0.0; g.c_out];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let go = &grad[(b * g.c_out + co) * plane_out..(b * g.c_out + co + 1) * plane_out];
            db[co] += go.iter().sum::<f64>();
            for ci in 0..g.c_in {
                let base = (b * g.c_in + ci) * plane_pad;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let kidx = ((co * g.c_in + ci) * g.kh + ky) * g.kw + kx;
                        let kv = kd[kidx];
                        let mut acc = 0.0;
                        for oy in 0..g.oh {
                            let off = base + (oy + ky) * g.pw + kx;
                            let grow = &go[oy * g.ow..(oy + 1) * g.ow];
                            let srow = &padded[off..off + g.ow];
                            acc += grow.iter().zip(srow).map(|(a, c)| a * c).sum::<f64>();
                            let drow = &mut dpad[off..off + g.ow];
                            for (d, gv) in drow.iter_mut().zip(grow) {
                                *d += kv * gv;
                            }
                        }
                        dk[kidx] += acc;
                    }
                }
            }
        }
    }
    let dx = if g.pad == 0 {
        dpad
    } else {
        let mut dx = vec![0.0; g.batch * g.c_in * g.h * g.w];
        for plane in 0..g.batch * g.c_in {
            for y in 0..g.h {
                let start = (plane * g.ph + y + g.pad) * g.pw + g.pad;
                dx[(plane * g.h + y) * g.w..(plane * g.h + y + 1) * g.w]
                    .copy_from_slice(&dpad[start..start + g.w]);
            }
        }
        dx
    };
    Ok((dx, dk, db))
}

/// 2x2 stride-2 max pooling. Also returns, for every output cell, the flat
/// input index of the first maximum in row-major window order.
pub fn maxpool2x2_forward(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    check_rank("maxpool2x2", x, 4)?;
    let [batch, ch, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(
            "maxpool2x2",
            format!("spatial dims {h}x{w} must be even"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = Vec::with_capacity(batch * ch * oh * ow);
    let mut argmax = Vec::with_capacity(batch * ch * oh * ow);
    for plane in 0..batch * ch {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![batch, ch, oh, ow], out)?, argmax))
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Mean over the batch of `-log softmax(logits)[label]`, plus the softmax
/// probabilities (needed for the gradient).
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    check_rank("softmax_cross_entropy", logits, 2)?;
    let (batch, classes) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != batch {
        return Err(Error::invalid(
            "softmax_cross_entropy",
            format!("{} labels for batch of {batch}", labels.len()),
        ));
    }
    if batch == 0 {
        return Err(Error::invalid("softmax_cross_entropy", "empty batch"));
    }
    let mut probs = Vec::with_capacity(batch * classes);
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: classes,
            });
        }
        let row = logits.row(b);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        total += log_z - row[label];
        probs.extend(row.iter().map(|z| (z - max).exp() / sum_exp));
    }
    Ok((total / batch as f64, probs))
}

/// Index of the largest logit per row (first on ties).
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let n = logits.shape()[0];
    (0..n)
        .map(|b| {
            let row = logits.row(b);
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
