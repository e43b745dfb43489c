//! LSTM cell with input, forget, candidate and output gates.
//!
//! Gate pre-activations are laid out `[i | f | g | o]` along the `4·hidden`
//! axis of `wx: [input × 4h]`, `wh: [h × 4h]` and `bias: [4h]`.

use super::gemm::{gemm, View};
use super::{NumericsError, Tensor};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Turns gate pre-activations (`rows × 4h`, in place) into activations and
/// computes the new cell and hidden states.
pub(crate) fn lstm_pointwise(
    gates: &mut [f64],
    c_prev: &[f64],
    c: &mut [f64],
    tanh_c: &mut [f64],
    h: &mut [f64],
    hidden: usize,
) {
    for (r, row) in gates.chunks_mut(4 * hidden).enumerate() {
        let (ifg, o) = row.split_at_mut(3 * hidden);
        let (i, fg) = ifg.split_at_mut(hidden);
        let (f, g) = fg.split_at_mut(hidden);
        let base = r * hidden;
        for u in 0..hidden {
            i[u] = sigmoid(i[u]);
            f[u] = sigmoid(f[u]);
            g[u] = g[u].tanh();
            o[u] = sigmoid(o[u]);
            let cell = f[u] * c_prev[base + u] + i[u] * g[u];
            let tc = cell.tanh();
            c[base + u] = cell;
            tanh_c[base + u] = tc;
            h[base + u] = o[u] * tc;
        }
    }
}

/// Backward of [`lstm_pointwise`].
///
/// `dc` carries the cell-state gradient from the following step on entry and
/// the gradient w.r.t. `c_prev` on exit. Writes gate pre-activation gradients
/// into `dgates`.
pub(crate) fn lstm_pointwise_backward(
    gates: &[f64],
    c_prev: &[f64],
    tanh_c: &[f64],
    dh: &[f64],
    dc: &mut [f64],
    dgates: &mut [f64],
    hidden: usize,
) {
    for (r, (row, drow)) in gates.chunks(4 * hidden).zip(dgates.chunks_mut(4 * hidden)).enumerate() {
        let base = r * hidden;
        for u in 0..hidden {
            let (i, f, g, o) = (row[u], row[hidden + u], row[2 * hidden + u], row[3 * hidden + u]);
            let k = base + u;
            let tc = tanh_c[k];
            let d_o = dh[k] * tc;
            let dcell = dc[k] + dh[k] * o * (1.0 - tc * tc);
            drow[u] = dcell * g * i * (1.0 - i);
            drow[hidden + u] = dcell * c_prev[k] * f * (1.0 - f);
            drow[2 * hidden + u] = dcell * i * (1.0 - g * g);
            drow[3 * hidden + u] = d_o * o * (1.0 - o);
            dc[k] = dcell * f;
        }
    }
}

/// Trainable tensors of one LSTM cell.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmWeights {
    pub wx: Tensor,
    pub wh: Tensor,
    pub bias: Tensor,
}

impl LstmWeights {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            wx: Tensor::zeros(&[input, 4 * hidden]),
            wh: Tensor::zeros(&[hidden, 4 * hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.wx.shape()[0]
    }

    pub fn hidden_size(&self) -> usize {
        self.wh.shape()[0]
    }

    fn validate(&self) -> Result<(), NumericsError> {
        let h = self.hidden_size();
        let ok = self.wx.rank() == 2
            && self.wx.shape()[1] == 4 * h
            && self.wh.shape() == [h, 4 * h]
            && self.bias.shape() == [4 * h];
        if ok {
            Ok(())
        } else {
            Err(NumericsError::Shape {
                op: "lstm_cell",
                left: self.wx.shape().to_vec(),
                right: self.wh.shape().to_vec(),
            })
        }
    }
}

/// Output of one cell step, retaining what the backward pass needs.
#[derive(Clone, Debug)]
pub struct LstmCellStep {
    pub h: Tensor,
    pub c: Tensor,
    x: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LstmCellGrads {
    pub dx: Tensor,
    pub dh_prev: Tensor,
    pub dc_prev: Tensor,
    pub dwx: Tensor,
    pub dwh: Tensor,
    pub dbias: Tensor,
}

/// One step for a batch: `x: [b × input]`, `h_prev, c_prev: [b × hidden]`.
///
/// `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
pub fn lstm_cell_forward(
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
    w: &LstmWeights,
) -> Result<LstmCellStep, NumericsError> {
    w.validate()?;
    let (b, input) = x.dims2("lstm_cell")?;
    let hidden = w.hidden_size();
    if input != w.input_size() {
        return Err(NumericsError::Shape {
            op: "lstm_cell",
            left: x.shape().to_vec(),
            right: w.wx.shape().to_vec(),
        });
    }
    for state in [h_prev, c_prev] {
        if state.shape() != [b, hidden] {
            return Err(NumericsError::Shape {
                op: "lstm_cell",
                left: state.shape().to_vec(),
                right: w.wh.shape().to_vec(),
            });
        }
    }
    let g4 = 4 * hidden;
    let mut gates: Vec<f64> = w.bias.data().repeat(b);
    gemm(
        1.0,
        View::new(x.data(), b, input),
        View::new(w.wx.data(), input, g4),
        1.0,
        &mut gates,
        g4,
    );
    gemm(
        1.0,
        View::new(h_prev.data(), b, hidden),
        View::new(w.wh.data(), hidden, g4),
        1.0,
        &mut gates,
        g4,
    );
    let mut c = vec![0.0; b * hidden];
    let mut tanh_c = vec![0.0; b * hidden];
    let mut h = vec![0.0; b * hidden];
    lstm_pointwise(&mut gates, c_prev.data(), &mut c, &mut tanh_c, &mut h, hidden);
    Ok(LstmCellStep {
        h: Tensor::from_raw(vec![b, hidden], h),
        c: Tensor::from_raw(vec![b, hidden], c),
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        gates,
        tanh_c,
    })
}

/// Gradients of a cell step given upstream `dh` and `dc` (both `[b × hidden]`).
pub fn lstm_cell_backward(
    w: &LstmWeights,
    step: &LstmCellStep,
    dh: &Tensor,
    dc: &Tensor,
) -> Result<LstmCellGrads, NumericsError> {
    let (b, hidden) = step.h.dims2("lstm_cell_backward")?;
    if dh.shape() != step.h.shape() || dc.shape() != step.h.shape() {
        return Err(NumericsError::Shape {
            op: "lstm_cell_backward",
            left: dh.shape().to_vec(),
            right: step.h.shape().to_vec(),
        });
    }
    let input = w.input_size();
    let g4 = 4 * hidden;
    let mut dc_prev = dc.data().to_vec();
    let mut dgates = vec![0.0; b * g4];
    lstm_pointwise_backward(
        &step.gates,
        step.c_prev.data(),
        &step.tanh_c,
        dh.data(),
        &mut dc_prev,
        &mut dgates,
        hidden,
    );
    let dg = View::new(&dgates, b, g4);
    let mut dx = vec![0.0; b * input];
    gemm(1.0, dg, View::new(w.wx.data(), input, g4).t(), 0.0, &mut dx, input);
    let mut dh_prev = vec![0.0; b * hidden];
    gemm(
        1.0,
        dg,
        View::new(w.wh.data(), hidden, g4).t(),
        0.0,
        &mut dh_prev,
        hidden,
    );
    let mut dwx = vec![0.0; input * g4];
    gemm(1.0, View::new(step.x.data(), b, input).t(), dg, 0.0, &mut dwx, g4);
    let mut dwh = vec![0.0; hidden * g4];
    gemm(1.0, View::new(step.h_prev.data(), b, hidden).t(), dg, 0.0, &mut dwh, g4);
    let mut dbias = vec![0.0; g4];
    for row in dgates.chunks(g4) {
        dbias.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    Ok(LstmCellGrads {
        dx: Tensor::from_raw(vec![b, input], dx),
        dh_prev: Tensor::from_raw(vec![b, hidden], dh_prev),
        dc_prev: Tensor::from_raw(vec![b, hidden], dc_prev),
        dwx: Tensor::from_raw(vec![input, g4], dwx),
        dwh: Tensor::from_raw(vec![hidden, g4], dwh),
        dbias: Tensor::from_raw(vec![g4], dbias),
    })
}
