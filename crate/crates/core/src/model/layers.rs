//! Batched layer kernels over parameter slices.
//!
//! Sequence activations are row-major matrices whose row `s * len + t` holds
//! the channels of sample `s` at position `t`. Inputs may be column blocks of
//! a wider buffer, hence the explicit row strides.

use crate::numerics::gemm::{gemm, View};
use crate::numerics::{
    conv_geometry, lstm_pointwise, lstm_pointwise_backward, GradBuffer, Padding, ParamId, ParamSet, Parameter, Prng,
    Tensor,
};

use super::ModelError;

/// Uniform(±√(6 / (fan_in + fan_out))).
pub(crate) fn xavier(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Prng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| (2.0 * rng.next_f64() - 1.0) * bound).collect();
    Tensor::new(shape.to_vec(), data).expect("finite init")
}

fn add_bias(y: &mut [f64], rows: usize, cols: usize, rs: usize, bias: &[f64]) {
    for r in 0..rows {
        y[r * rs..r * rs + cols].iter_mut().zip(bias).for_each(|(v, b)| *v += b);
    }
}

fn bias_grad(dy: &[f64], rows: usize, cols: usize, rs: usize, db: &mut [f64]) {
    for r in 0..rows {
        db.iter_mut().zip(&dy[r * rs..r * rs + cols]).for_each(|(g, d)| *g += d);
    }
}

/// `y = x · w + b` with `w: [n_in × n_out]`.
#[derive(Clone, Debug)]
pub(crate) struct Affine {
    pub w: ParamId,
    pub b: ParamId,
    pub n_in: usize,
    pub n_out: usize,
}

impl Affine {
    pub fn build(
        set: &mut ParamSet,
        name: &str,
        n_in: usize,
        n_out: usize,
        rng: &mut Prng,
    ) -> Result<Self, ModelError> {
        let w = set.add(format!("{name}.w"), xavier(&[n_in, n_out], n_in, n_out, rng))?;
        let b = set.add(format!("{name}.b"), Tensor::zeros(&[n_out]))?;
        Ok(Self { w, b, n_in, n_out })
    }

    pub fn forward(&self, p: &[Parameter], x: &[f64], rows: usize) -> Vec<f64> {
        let mut y = vec![0.0; rows * self.n_out];
        gemm(
            1.0,
            View::new(x, rows, self.n_in),
            View::new(p[self.w.0].value.data(), self.n_in, self.n_out),
            0.0,
            &mut y,
            self.n_out,
        );
        add_bias(&mut y, rows, self.n_out, self.n_out, p[self.b.0].value.data());
        y
    }

    /// Accumulates weight gradients; returns `dx` when asked.
    pub fn backward(
        &self,
        p: &[Parameter],
        g: &mut GradBuffer,
        x: &[f64],
        dy: &[f64],
        rows: usize,
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        gemm(
            1.0,
            View::new(x, rows, self.n_in).t(),
            View::new(dy, rows, self.n_out),
            1.0,
            g.get_mut(self.w),
            self.n_out,
        );
        bias_grad(dy, rows, self.n_out, self.n_out, g.get_mut(self.b));
        want_dx.then(|| {
            let mut dx = vec![0.0; rows * self.n_in];
            gemm(
                1.0,
                View::new(dy, rows, self.n_out),
                View::new(p[self.w.0].value.data(), self.n_in, self.n_out).t(),
                0.0,
                &mut dx,
                self.n_in,
            );
            dx
        })
    }
}

/// 1-D convolution along positions, `w: [c_out × c_in × k]`, computed as
/// im2col followed by one matrix product.
#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        set: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        rng: &mut Prng,
    ) -> Result<Self, ModelError> {
        let w = set.add(format!("{name}.w"), xavier(&[c_out, c_in, k], c_in * k, c_out * k, rng))?;
        let b = set.add(format!("{name}.b"), Tensor::zeros(&[c_out]))?;
        Ok(Self {
            w,
            b,
            c_in,
            c_out,
            k,
            stride,
        })
    }

    pub fn geometry(&self, len: usize) -> (usize, usize) {
        conv_geometry(len, self.k, self.stride, Padding::Same).expect("positive kernel and stride")
    }

    fn window(&self, len: usize, to: usize, j: usize) -> Option<usize> {
        let (_, left) = self.geometry(len);
        let pos = (to * self.stride + j) as isize - left as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }

    /// Writes the output into `y` (row stride `rsy`) and returns the im2col
    /// matrix for the backward pass.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        p: &[Parameter],
        x: &[f64],
        rsx: usize,
        batch: usize,
        len: usize,
        y: &mut [f64],
        rsy: usize,
    ) -> Vec<f64> {
        let (out_len, _) = self.geometry(len);
        let width = self.c_in * self.k;
        let mut cols = vec![0.0; batch * out_len * width];
        for s in 0..batch {
            for to in 0..out_len {
                let row = &mut cols[(s * out_len + to) * width..(s * out_len + to + 1) * width];
                for j in 0..self.k {
                    if let Some(pos) = self.window(len, to, j) {
                        let src = &x[(s * len + pos) * rsx..(s * len + pos) * rsx + self.c_in];
                        for (ci, v) in src.iter().enumerate() {
                            row[ci * self.k + j] = *v;
                        }
                    }
                }
            }
        }
        let rows = batch * out_len;
        gemm(
            1.0,
            View::new(&cols, rows, width),
            View::new(p[self.w.0].value.data(), self.c_out, width).t(),
            0.0,
            y,
            rsy,
        );
        add_bias(y, rows, self.c_out, rsy, p[self.b.0].value.data());
        cols
    }

    /// Accumulates kernel gradients and, if `dx` is given, adds the input
    /// gradient into it (row stride `rsdx`).
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        p: &[Parameter],
        g: &mut GradBuffer,
        cols: &[f64],
        batch: usize,
        len: usize,
        dy: &[f64],
        rsdy: usize,
        dx: Option<(&mut [f64], usize)>,
    ) {
        let (out_len, _) = self.geometry(len);
        let width = self.c_in * self.k;
        let rows = batch * out_len;
        let dyv = View::strided(dy, rows, self.c_out, rsdy);
        gemm(
            1.0,
            dyv.t(),
            View::new(cols, rows, width),
            1.0,
            g.get_mut(self.w),
            width,
        );
        bias_grad(dy, rows, self.c_out, rsdy, g.get_mut(self.b));
        let Some((dx, rsdx)) = dx else { return };
        let mut dcols = vec![0.0; rows * width];
        gemm(
            1.0,
            dyv,
            View::new(p[self.w.0].value.data(), self.c_out, width),
            0.0,
            &mut dcols,
            width,
        );
        for s in 0..batch {
            for to in 0..out_len {
                let row = &dcols[(s * out_len + to) * width..(s * out_len + to + 1) * width];
                for j in 0..self.k {
                    if let Some(pos) = self.window(len, to, j) {
                        let dst = &mut dx[(s * len + pos) * rsdx..(s * len + pos) * rsdx + self.c_in];
                        for (ci, v) in dst.iter_mut().enumerate() {
                            *v += row[ci * self.k + j];
                        }
                    }
                }
            }
        }
    }
}

/// Average pooling with window = stride; partial trailing windows average
/// over their actual size.
#[allow(clippy::too_many_arguments)]
pub(crate) fn avgpool_forward(
    x: &[f64],
    rsx: usize,
    batch: usize,
    len: usize,
    ch: usize,
    stride: usize,
    y: &mut [f64],
    rsy: usize,
) {
    let out_len = len.div_ceil(stride);
    for s in 0..batch {
        for to in 0..out_len {
            let (lo, hi) = (to * stride, ((to + 1) * stride).min(len));
            let dst = &mut y[(s * out_len + to) * rsy..(s * out_len + to) * rsy + ch];
            dst.fill(0.0);
            for t in lo..hi {
                dst.iter_mut().zip(&x[(s * len + t) * rsx..]).for_each(|(d, v)| *d += v);
            }
            let inv = 1.0 / (hi - lo) as f64;
            dst.iter_mut().for_each(|d| *d *= inv);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn avgpool_backward(
    dy: &[f64],
    rsdy: usize,
    batch: usize,
    len: usize,
    ch: usize,
    stride: usize,
    dx: &mut [f64],
    rsdx: usize,
) {
    let out_len = len.div_ceil(stride);
    for s in 0..batch {
        for to in 0..out_len {
            let (lo, hi) = (to * stride, ((to + 1) * stride).min(len));
            let inv = 1.0 / (hi - lo) as f64;
            let src = &dy[(s * out_len + to) * rsdy..(s * out_len + to) * rsdy + ch];
            for t in lo..hi {
                dx[(s * len + t) * rsdx..(s * len + t) * rsdx + ch]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, v)| *d += v * inv);
            }
        }
    }
}

/// LSTM unrolled over the positions of each sample, zero initial state.
#[derive(Clone, Debug)]
pub(crate) struct SeqLstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub hidden: usize,
}

/// Forward caches of [`SeqLstm`], all laid out like the activations.
#[derive(Clone, Debug)]
pub(crate) struct LstmTape {
    /// Gate activations, `rows × 4h`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    /// Hidden states, `rows × h`; also the layer output.
    pub h: Vec<f64>,
}

impl SeqLstm {
    /// Forget-gate bias starts at +1.
    pub fn build(
        set: &mut ParamSet,
        name: &str,
        c_in: usize,
        hidden: usize,
        rng: &mut Prng,
    ) -> Result<Self, ModelError> {
        let wx = set.add(format!("{name}.wx"), xavier(&[c_in, 4 * hidden], c_in, 4 * hidden, rng))?;
        let wh = set.add(
            format!("{name}.wh"),
            xavier(&[hidden, 4 * hidden], hidden, 4 * hidden, rng),
        )?;
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(1.0);
        let bias = set.add(
            format!("{name}.bias"),
            Tensor::new(vec![4 * hidden], b).expect("finite"),
        )?;
        Ok(Self {
            wx,
            wh,
            bias,
            c_in,
            hidden,
        })
    }

    pub fn forward(&self, p: &[Parameter], x: &[f64], rsx: usize, batch: usize, len: usize) -> LstmTape {
        let (h4, hd) = (4 * self.hidden, self.hidden);
        let rows = batch * len;
        let mut gates = vec![0.0; rows * h4];
        gemm(
            1.0,
            View::strided(x, rows, self.c_in, rsx),
            View::new(p[self.wx.0].value.data(), self.c_in, h4),
            0.0,
            &mut gates,
            h4,
        );
        add_bias(&mut gates, rows, h4, h4, p[self.bias.0].value.data());
        let mut c = vec![0.0; rows * hd];
        let mut tanh_c = vec![0.0; rows * hd];
        let mut h = vec![0.0; rows * hd];
        let zeros = vec![0.0; hd];
        let wh = View::new(p[self.wh.0].value.data(), hd, h4);
        for t in 0..len {
            if t > 0 {
                let h_prev = View::strided(&h[(t - 1) * hd..], batch, hd, len * hd);
                gemm(1.0, h_prev, wh, 1.0, &mut gates[t * h4..], len * h4);
            }
            for s in 0..batch {
                let r = s * len + t;
                let (before, cell) = c.split_at_mut(r * hd);
                let c_prev = if t == 0 { &zeros[..] } else { &before[(r - 1) * hd..] };
                lstm_pointwise(
                    &mut gates[r * h4..(r + 1) * h4],
                    c_prev,
                    &mut cell[..hd],
                    &mut tanh_c[r * hd..(r + 1) * hd],
                    &mut h[r * hd..(r + 1) * hd],
                    hd,
                );
            }
        }
        LstmTape { gates, c, tanh_c, h }
    }

    /// `dh` is the gradient of every hidden state (`rows × h`, contiguous).
    /// Accumulates weight gradients and optionally adds the input gradient
    /// into `dx` (row stride `rsdx`).
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        p: &[Parameter],
        g: &mut GradBuffer,
        x: &[f64],
        rsx: usize,
        batch: usize,
        len: usize,
        tape: &LstmTape,
        dh: &[f64],
        dx: Option<(&mut [f64], usize)>,
    ) {
        let (h4, hd) = (4 * self.hidden, self.hidden);
        let rows = batch * len;
        let mut dgates = vec![0.0; rows * h4];
        let mut dh_rec = vec![0.0; batch * hd];
        let mut dc = vec![0.0; batch * hd];
        let mut dh_t = vec![0.0; hd];
        let zeros = vec![0.0; hd];
        let wh = View::new(p[self.wh.0].value.data(), hd, h4);
        for t in (0..len).rev() {
            for s in 0..batch {
                let r = s * len + t;
                for u in 0..hd {
                    dh_t[u] = dh[r * hd + u] + dh_rec[s * hd + u];
                }
                let c_prev = if t == 0 {
                    &zeros[..]
                } else {
                    &tape.c[(r - 1) * hd..r * hd]
                };
                lstm_pointwise_backward(
                    &tape.gates[r * h4..(r + 1) * h4],
                    c_prev,
                    &tape.tanh_c[r * hd..(r + 1) * hd],
                    &dh_t,
                    &mut dc[s * hd..(s + 1) * hd],
                    &mut dgates[r * h4..(r + 1) * h4],
                    hd,
                );
            }
            if t > 0 {
                let dg_t = View::strided(&dgates[t * h4..], batch, h4, len * h4);
                gemm(1.0, dg_t, wh.t(), 0.0, &mut dh_rec, hd);
                let h_prev = View::strided(&tape.h[(t - 1) * hd..], batch, hd, len * hd);
                gemm(1.0, h_prev.t(), dg_t, 1.0, g.get_mut(self.wh), h4);
            }
        }
        let dgv = View::new(&dgates, rows, h4);
        gemm(
            1.0,
            View::strided(x, rows, self.c_in, rsx).t(),
            dgv,
            1.0,
            g.get_mut(self.wx),
            h4,
        );
        bias_grad(&dgates, rows, h4, h4, g.get_mut(self.bias));
        if let Some((dx, rsdx)) = dx {
            gemm(
                1.0,
                dgv,
                View::new(p[self.wx.0].value.data(), self.c_in, h4).t(),
                1.0,
                dx,
                rsdx,
            );
        }
    }
}
