//! Comparison networks sharing the classifier contract: a two-layer
//! perceptron, a tanh recurrence and a plain LSTM over the 23 inputs.

use serde::{Deserialize, Serialize};

use super::layers::{xavier, Affine, LstmTape, SeqLstm};
use super::ModelError;
use crate::encoder::FEATURE_LEN;
use crate::numerics::gemm::{gemm, View};
use crate::numerics::{GradBuffer, ParamId, ParamSet, Parameter, Prng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Dnn,
    Rnn,
    Lstm,
}

impl BaselineKind {
    pub fn default_hidden(self) -> usize {
        match self {
            BaselineKind::Dnn => 64,
            BaselineKind::Rnn | BaselineKind::Lstm => 128,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Dnn => "dnn",
            BaselineKind::Rnn => "rnn",
            BaselineKind::Lstm => "lstm",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    /// Width of both hidden layers (dnn) or of the recurrent state.
    pub hidden: usize,
    pub input_len: usize,
    pub classes: usize,
    pub seed: u64,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind, classes: usize, seed: u64) -> Self {
        Self {
            kind,
            hidden: kind.default_hidden(),
            input_len: FEATURE_LEN,
            classes,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.classes < 2 {
            return Err(ModelError::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.hidden == 0 || self.input_len == 0 {
            return Err(ModelError::Config("hidden and input_len must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Dnn {
    layers: [Affine; 3],
}

#[derive(Clone, Debug)]
pub(crate) struct DnnTape {
    x: Vec<f64>,
    z: [Vec<f64>; 2],
    a: [Vec<f64>; 2],
}

impl Dnn {
    pub fn build(set: &mut ParamSet, cfg: &BaselineConfig, rng: &mut Prng) -> Result<Self, ModelError> {
        let h = cfg.hidden;
        Ok(Self {
            layers: [
                Affine::build(set, "dnn.fc0", cfg.input_len, h, rng)?,
                Affine::build(set, "dnn.fc1", h, h, rng)?,
                Affine::build(set, "dnn.fc2", h, cfg.classes, rng)?,
            ],
        })
    }

    pub fn forward(&self, p: &[Parameter], x: &[f64], batch: usize) -> (Vec<f64>, DnnTape) {
        let z0 = self.layers[0].forward(p, x, batch);
        let a0: Vec<f64> = z0.iter().map(|v| v.max(0.0)).collect();
        let z1 = self.layers[1].forward(p, &a0, batch);
        let a1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
        let logits = self.layers[2].forward(p, &a1, batch);
        (
            logits,
            DnnTape {
                x: x.to_vec(),
                z: [z0, z1],
                a: [a0, a1],
            },
        )
    }

    pub fn backward(&self, p: &[Parameter], g: &mut GradBuffer, tape: &DnnTape, dlogits: &[f64], batch: usize) {
        let mut d = self.layers[2]
            .backward(p, g, &tape.a[1], dlogits, batch, true)
            .expect("requested");
        for i in (0..2).rev() {
            d.iter_mut().zip(&tape.z[i]).for_each(|(d, z)| {
                if *z <= 0.0 {
                    *d = 0.0
                }
            });
            let input = if i == 0 { &tape.x } else { &tape.a[0] };
            match self.layers[i].backward(p, g, input, &d, batch, i > 0) {
                Some(next) => d = next,
                None => break,
            }
        }
    }
}

/// `h_t = tanh(x_t · wx + h_{t-1} · wh + b)` over the scalar inputs, classifier
/// on the last state.
#[derive(Clone, Debug)]
pub(crate) struct Rnn {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
    hidden: usize,
    len: usize,
    head: Affine,
}

#[derive(Clone, Debug)]
pub(crate) struct RnnTape {
    x: Vec<f64>,
    /// Hidden states, time-major `len × batch × hidden`.
    h: Vec<f64>,
}

impl Rnn {
    pub fn build(set: &mut ParamSet, cfg: &BaselineConfig, rng: &mut Prng) -> Result<Self, ModelError> {
        let h = cfg.hidden;
        let wx = set.add("rnn.wx", xavier(&[1, h], 1, h, rng))?;
        let wh = set.add("rnn.wh", xavier(&[h, h], h, h, rng))?;
        let b = set.add("rnn.b", Tensor::zeros(&[h]))?;
        let head = Affine::build(set, "rnn.head", h, cfg.classes, rng)?;
        Ok(Self {
            wx,
            wh,
            b,
            hidden: h,
            len: cfg.input_len,
            head,
        })
    }

    pub fn forward(&self, p: &[Parameter], x: &[f64], batch: usize) -> (Vec<f64>, RnnTape) {
        let hd = self.hidden;
        let (wx, wh, b) = (
            p[self.wx.0].value.data(),
            p[self.wh.0].value.data(),
            p[self.b.0].value.data(),
        );
        let mut h = vec![0.0; self.len * batch * hd];
        for t in 0..self.len {
            let (prev, cur) = h.split_at_mut(t * batch * hd);
            let cur = &mut cur[..batch * hd];
            for s in 0..batch {
                let xv = x[s * self.len + t];
                for u in 0..hd {
                    cur[s * hd + u] = xv * wx[u] + b[u];
                }
            }
            if t > 0 {
                gemm(
                    1.0,
                    View::new(&prev[(t - 1) * batch * hd..], batch, hd),
                    View::new(wh, hd, hd),
                    1.0,
                    cur,
                    hd,
                );
            }
            cur.iter_mut().for_each(|v| *v = v.tanh());
        }
        let last = &h[(self.len - 1) * batch * hd..];
        let logits = self.head.forward(p, last, batch);
        (logits, RnnTape { x: x.to_vec(), h })
    }

    pub fn backward(&self, p: &[Parameter], g: &mut GradBuffer, tape: &RnnTape, dlogits: &[f64], batch: usize) {
        let hd = self.hidden;
        let last = &tape.h[(self.len - 1) * batch * hd..];
        let mut dh = self.head.backward(p, g, last, dlogits, batch, true).expect("requested");
        let wh = p[self.wh.0].value.data();
        let mut da = vec![0.0; batch * hd];
        for t in (0..self.len).rev() {
            let h_t = &tape.h[t * batch * hd..(t + 1) * batch * hd];
            for k in 0..batch * hd {
                da[k] = dh[k] * (1.0 - h_t[k] * h_t[k]);
            }
            {
                let dwx = g.get_mut(self.wx);
                for s in 0..batch {
                    let xv = tape.x[s * self.len + t];
                    for u in 0..hd {
                        dwx[u] += xv * da[s * hd + u];
                    }
                }
            }
            let db = g.get_mut(self.b);
            for s in 0..batch {
                db.iter_mut().zip(&da[s * hd..(s + 1) * hd]).for_each(|(g, d)| *g += d);
            }
            if t > 0 {
                let h_prev = View::new(&tape.h[(t - 1) * batch * hd..], batch, hd);
                gemm(1.0, h_prev.t(), View::new(&da, batch, hd), 1.0, g.get_mut(self.wh), hd);
                gemm(
                    1.0,
                    View::new(&da, batch, hd),
                    View::new(wh, hd, hd).t(),
                    0.0,
                    &mut dh,
                    hd,
                );
            }
        }
    }
}

/// One LSTM over the scalar inputs, classifier on the last hidden state.
#[derive(Clone, Debug)]
pub(crate) struct LstmBaseline {
    lstm: SeqLstm,
    len: usize,
    head: Affine,
}

#[derive(Clone, Debug)]
pub(crate) struct LstmBaselineTape {
    x: Vec<f64>,
    lstm: LstmTape,
    last: Vec<f64>,
}

impl LstmBaseline {
    pub fn build(set: &mut ParamSet, cfg: &BaselineConfig, rng: &mut Prng) -> Result<Self, ModelError> {
        Ok(Self {
            lstm: SeqLstm::build(set, "lstm.cell", 1, cfg.hidden, rng)?,
            len: cfg.input_len,
            head: Affine::build(set, "lstm.head", cfg.hidden, cfg.classes, rng)?,
        })
    }

    pub fn forward(&self, p: &[Parameter], x: &[f64], batch: usize) -> (Vec<f64>, LstmBaselineTape) {
        let hd = self.lstm.hidden;
        let lstm = self.lstm.forward(p, x, 1, batch, self.len);
        let last: Vec<f64> = (0..batch)
            .flat_map(|s| {
                let r = s * self.len + self.len - 1;
                lstm.h[r * hd..(r + 1) * hd].to_vec()
            })
            .collect();
        let logits = self.head.forward(p, &last, batch);
        (
            logits,
            LstmBaselineTape {
                x: x.to_vec(),
                lstm,
                last,
            },
        )
    }

    pub fn backward(
        &self,
        p: &[Parameter],
        g: &mut GradBuffer,
        tape: &LstmBaselineTape,
        dlogits: &[f64],
        batch: usize,
    ) {
        let hd = self.lstm.hidden;
        let dlast = self
            .head
            .backward(p, g, &tape.last, dlogits, batch, true)
            .expect("requested");
        let mut dh = vec![0.0; batch * self.len * hd];
        for s in 0..batch {
            let r = s * self.len + self.len - 1;
            dh[r * hd..(r + 1) * hd].copy_from_slice(&dlast[s * hd..(s + 1) * hd]);
        }
        self.lstm
            .backward(p, g, &tape.x, 1, batch, self.len, &tape.lstm, &dh, None);
    }
}
