//! Layer primitives on single tensors. Channel-major `[channels × length]`
//! layout for sequence ops, `[batch × classes]` for the loss.

use super::gemm::{gemm, View};
use super::{NumericsError, Prng, Tensor};

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NumericsError {
    NumericsError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(shape_err("matmul", a, b));
    }
    let mut out = vec![0.0; m * n];
    gemm(
        1.0,
        View::new(a.data(), m, k),
        View::new(b.data(), k, n),
        0.0,
        &mut out,
        n,
    );
    Ok(Tensor::from_raw(vec![m, n], out))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    if a.shape() != b.shape() {
        return Err(shape_err("add", a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_raw(a.shape().to_vec(), data))
}

pub fn scale(a: &Tensor, factor: f64) -> Tensor {
    Tensor::from_raw(a.shape().to_vec(), a.data().iter().map(|x| x * factor).collect())
}

pub fn relu(a: &Tensor) -> Tensor {
    Tensor::from_raw(a.shape().to_vec(), a.data().iter().map(|&x| x.max(0.0)).collect())
}

/// Gradient of `relu` at input `x` given upstream `dy`.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor, NumericsError> {
    if x.shape() != dy.shape() {
        return Err(shape_err("relu_backward", x, dy));
    }
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor::from_raw(x.shape().to_vec(), data))
}

/// Stacks `[c_i × len]` tensors along the channel axis, in operand order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor, NumericsError> {
    let first = parts
        .first()
        .ok_or_else(|| NumericsError::Invalid("concat of zero tensors".into()))?;
    let (_, len) = first.dims2("concat_channels")?;
    let mut channels = 0;
    let mut data = Vec::new();
    for p in parts {
        let (c, l) = p.dims2("concat_channels")?;
        if l != len {
            return Err(shape_err("concat_channels", first, p));
        }
        channels += c;
        data.extend_from_slice(p.data());
    }
    Ok(Tensor::from_raw(vec![channels, len], data))
}

/// Inverse of [`concat_channels`]: splits `[Σc × len]` into the given channel counts.
pub fn split_channels(t: &Tensor, counts: &[usize]) -> Result<Vec<Tensor>, NumericsError> {
    let (c, len) = t.dims2("split_channels")?;
    if counts.iter().sum::<usize>() != c || counts.contains(&0) {
        return Err(NumericsError::Shape {
            op: "split_channels",
            left: t.shape().to_vec(),
            right: counts.to_vec(),
        });
    }
    let mut at = 0;
    Ok(counts
        .iter()
        .map(|&n| {
            let part = t.data()[at * len..(at + n) * len].to_vec();
            at += n;
            Tensor::from_raw(vec![n, len], part)
        })
        .collect())
}

/// Zero-padding scheme for [`conv1d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output length `ceil(len / stride)`, padding split left-low.
    Same,
    Valid,
}

/// Output length and left padding of a 1-D convolution.
pub fn conv_geometry(
    len: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize), NumericsError> {
    if stride == 0 || kernel == 0 {
        return Err(NumericsError::Invalid(
            "stride and kernel width must be positive".into(),
        ));
    }
    match padding {
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(len);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if kernel > len {
                return Err(NumericsError::Shape {
                    op: "conv1d",
                    left: vec![len],
                    right: vec![kernel],
                });
            }
            Ok(((len - kernel) / stride + 1, 0))
        }
    }
}

fn conv_dims(x: &Tensor, w: &Tensor) -> Result<(usize, usize, usize, usize), NumericsError> {
    let (c_in, len) = x.dims2("conv1d")?;
    let &[c_out, wc_in, k] = w.shape() else {
        return Err(shape_err("conv1d", x, w));
    };
    if wc_in != c_in {
        return Err(shape_err("conv1d", x, w));
    }
    Ok((c_in, len, c_out, k))
}

/// 1-D cross-correlation of `x: [c_in × len]` with `w: [c_out × c_in × k]`.
pub fn conv1d(x: &Tensor, w: &Tensor, stride: usize, padding: Padding) -> Result<Tensor, NumericsError> {
    let (c_in, len, c_out, k) = conv_dims(x, w)?;
    let (out_len, left) = conv_geometry(len, k, stride, padding)?;
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0; c_out * out_len];
    for co in 0..c_out {
        for t in 0..out_len {
            let mut acc = 0.0;
            for ci in 0..c_in {
                for j in 0..k {
                    let pos = (t * stride + j) as isize - left as isize;
                    if pos >= 0 && (pos as usize) < len {
                        acc += wd[(co * c_in + ci) * k + j] * xd[ci * len + pos as usize];
                    }
                }
            }
            out[co * out_len + t] = acc;
        }
    }
    Ok(Tensor::from_raw(vec![c_out, out_len], out))
}

/// Gradients of [`conv1d`] with respect to its input and kernel.
pub fn conv1d_backward(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    padding: Padding,
    dy: &Tensor,
) -> Result<(Tensor, Tensor), NumericsError> {
    let (c_in, len, c_out, k) = conv_dims(x, w)?;
    let (out_len, left) = conv_geometry(len, k, stride, padding)?;
    if dy.shape() != [c_out, out_len] {
        return Err(shape_err("conv1d_backward", dy, w));
    }
    let (xd, wd, gd) = (x.data(), w.data(), dy.data());
    let mut dx = vec![0.0; c_in * len];
    let mut dw = vec![0.0; c_out * c_in * k];
    for co in 0..c_out {
        for t in 0..out_len {
            let g = gd[co * out_len + t];
            for ci in 0..c_in {
                for j in 0..k {
                    let pos = (t * stride + j) as isize - left as isize;
                    if pos >= 0 && (pos as usize) < len {
                        let p = pos as usize;
                        dx[ci * len + p] += g * wd[(co * c_in + ci) * k + j];
                        dw[(co * c_in + ci) * k + j] += g * xd[ci * len + p];
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_raw(vec![c_in, len], dx),
        Tensor::from_raw(w.shape().to_vec(), dw),
    ))
}

/// Non-overlapping average pooling with window = `stride`; a trailing partial
/// window is averaged over its actual size.
pub fn avgpool1d(x: &Tensor, stride: usize) -> Result<Tensor, NumericsError> {
    let (c, len) = x.dims2("avgpool1d")?;
    if stride == 0 {
        return Err(NumericsError::Invalid("stride must be positive".into()));
    }
    let out_len = len.div_ceil(stride);
    let mut out = vec![0.0; c * out_len];
    for ch in 0..c {
        let row = &x.data()[ch * len..(ch + 1) * len];
        for (t, window) in row.chunks(stride).enumerate() {
            out[ch * out_len + t] = window.iter().sum::<f64>() / window.len() as f64;
        }
    }
    Ok(Tensor::from_raw(vec![c, out_len], out))
}

pub fn avgpool1d_backward(dy: &Tensor, len: usize, stride: usize) -> Result<Tensor, NumericsError> {
    let (c, out_len) = dy.dims2("avgpool1d_backward")?;
    if stride == 0 || len.div_ceil(stride) != out_len {
        return Err(NumericsError::Shape {
            op: "avgpool1d_backward",
            left: dy.shape().to_vec(),
            right: vec![len, stride],
        });
    }
    let mut dx = vec![0.0; c * len];
    for ch in 0..c {
        for (t, window) in dx[ch * len..(ch + 1) * len].chunks_mut(stride).enumerate() {
            let g = dy.data()[ch * out_len + t] / window.len() as f64;
            window.iter_mut().for_each(|v| *v = g);
        }
    }
    Ok(Tensor::from_raw(vec![c, len], dx))
}

/// Row-wise softmax of a slice holding `rows × cols` logits, in place.
pub(crate) fn softmax_rows(data: &mut [f64], cols: usize) {
    for row in data.chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

/// Row-wise softmax with max-subtraction.
pub fn softmax(y: &Tensor) -> Result<Tensor, NumericsError> {
    let (_, c) = y.dims2("softmax")?;
    let mut data = y.data().to_vec();
    softmax_rows(&mut data, c);
    Ok(Tensor::from_raw(y.shape().to_vec(), data))
}

/// Summed cross-entropy of logits against class indices.
///
/// Returns the loss summed over rows and its gradient `softmax(y) - onehot`.
pub(crate) fn cross_entropy_indices(logits: &[f64], classes: usize, targets: &[usize]) -> (f64, Vec<f64>) {
    let mut probs = logits.to_vec();
    softmax_rows(&mut probs, classes);
    let mut loss = 0.0;
    for (row, &t) in probs.chunks_mut(classes).zip(targets) {
        // log-softmax via the max-shifted logits keeps this finite for p -> 0
        loss -= row[t].max(f64::MIN_POSITIVE).ln();
        row[t] -= 1.0;
    }
    (loss, probs)
}

/// Softmax cross-entropy summed over all rows, with its gradient w.r.t. the logits.
///
/// `targets` holds one-hot (or, more generally, probability) rows.
pub fn cross_entropy(y: &Tensor, targets: &Tensor) -> Result<(f64, Tensor), NumericsError> {
    let (_, c) = y.dims2("cross_entropy")?;
    if y.shape() != targets.shape() {
        return Err(shape_err("cross_entropy", y, targets));
    }
    let mut grad = y.data().to_vec();
    let mut loss = 0.0;
    for (row, target) in grad.chunks_mut(c).zip(targets.data().chunks(c)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for (v, &l) in row.iter_mut().zip(target) {
            let log_p = *v - max - log_sum;
            loss -= l * log_p;
            *v = log_p.exp() - l;
        }
    }
    Ok((loss, Tensor::from_raw(y.shape().to_vec(), grad)))
}

/// Inverted dropout. Returns the output and the per-element scale mask
/// (0 or `1/(1-rate)`), which is also the backward multiplier.
pub fn dropout(x: &Tensor, rate: f64, training: bool, rng: &mut Prng) -> Result<(Tensor, Vec<f64>), NumericsError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NumericsError::Invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), vec![1.0; x.len()]));
    }
    let mask = dropout_mask(x.len(), rate, rng);
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((Tensor::from_raw(x.shape().to_vec(), data), mask))
}

pub(crate) fn dropout_mask(n: usize, rate: f64, rng: &mut Prng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n).map(|_| if rng.next_f64() < rate { 0.0 } else { keep }).collect()
}
