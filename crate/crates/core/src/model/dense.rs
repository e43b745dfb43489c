//! The densely connected LSTM network.

use serde::{Deserialize, Serialize};

use super::layers::{avgpool_backward, avgpool_forward, Affine, Conv, LstmTape, SeqLstm};
use super::ModelError;
use crate::encoder::FEATURE_LEN;
use crate::numerics::{dropout_mask, GradBuffer, ParamSet, Parameter, Prng};

/// Layer widths and switches of the densely connected LSTM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenseLstmConfig {
    pub input_len: usize,
    pub stem_channels: usize,
    /// Channels each block layer adds.
    pub growth: usize,
    pub block_layers: [usize; 2],
    pub final_hidden: usize,
    pub classes: usize,
    pub dropout_rate: f64,
    /// Transition output channels as a fraction of its input channels.
    pub compression: f64,
    /// `false` feeds each block layer only its predecessor's output.
    pub dense: bool,
    pub seed: u64,
}

impl Default for DenseLstmConfig {
    fn default() -> Self {
        Self {
            input_len: FEATURE_LEN,
            stem_channels: 64,
            growth: 64,
            block_layers: [4, 8],
            final_hidden: 512,
            classes: 2,
            dropout_rate: 0.2,
            compression: 0.5,
            dense: true,
            seed: 0,
        }
    }
}

impl DenseLstmConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.block_layers != [4, 8] {
            return bad(format!("block_layers must be [4, 8], got {:?}", self.block_layers));
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.input_len == 0 || self.stem_channels == 0 || self.growth == 0 || self.final_hidden == 0 {
            return bad("input_len, stem_channels, growth and final_hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return bad(format!("compression {} outside (0, 1]", self.compression));
        }
        Ok(())
    }

    /// Input channels of block layer `i` (0-based) given the block's input width.
    pub fn layer_input_channels(&self, block_input: usize, i: usize) -> usize {
        match (self.dense, i) {
            (true, _) => block_input + i * self.growth,
            (false, 0) => block_input,
            (false, _) => self.growth,
        }
    }

    /// Channels leaving a block of `layers` layers.
    pub fn block_output_channels(&self, block_input: usize, layers: usize) -> usize {
        if self.dense {
            block_input + layers * self.growth
        } else {
            self.growth
        }
    }

    pub fn transition_channels(&self) -> usize {
        let c = self.block_output_channels(self.stem_channels, self.block_layers[0]);
        ((c as f64 * self.compression).floor() as usize).max(1)
    }

    /// Sequence lengths inside the first and second block.
    pub fn lengths(&self) -> (usize, usize) {
        let l1 = self.input_len.div_ceil(2);
        (l1, l1.div_ceil(2))
    }

    /// Width of the flattened final-LSTM output fed to the classifier.
    pub fn flatten_dim(&self) -> usize {
        self.lengths().1 * self.final_hidden
    }
}

#[derive(Clone, Debug)]
struct DenseLayer {
    lstm: SeqLstm,
    conv: Conv,
    in_start: usize,
    out_start: usize,
}

#[derive(Clone, Debug)]
struct Block {
    layers: Vec<DenseLayer>,
    /// Columns of the block's feature buffer.
    width: usize,
    len: usize,
    out_start: usize,
    out_width: usize,
}

#[derive(Clone, Debug)]
struct LayerTape {
    lstm: LstmTape,
    cols: Vec<f64>,
    z: Vec<f64>,
    mask: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
struct BlockTape {
    feat: Vec<f64>,
    layers: Vec<LayerTape>,
}

impl Block {
    #[allow(clippy::too_many_arguments)]
    fn build(
        set: &mut ParamSet,
        name: &str,
        cfg: &DenseLstmConfig,
        c0: usize,
        n_layers: usize,
        len: usize,
        rng: &mut Prng,
    ) -> Result<Self, ModelError> {
        let g = cfg.growth;
        let mut layers = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let c_in = cfg.layer_input_channels(c0, i);
            let in_start = if cfg.dense || i == 0 { 0 } else { c0 + (i - 1) * g };
            let lstm = SeqLstm::build(set, &format!("{name}.layer{i}.lstm"), c_in, g, rng)?;
            let conv = Conv::build(set, &format!("{name}.layer{i}.conv"), g, g, 2, 1, rng)?;
            layers.push(DenseLayer {
                lstm,
                conv,
                in_start,
                out_start: c0 + i * g,
            });
        }
        let width = c0 + n_layers * g;
        let (out_start, out_width) = if cfg.dense { (0, width) } else { (width - g, g) };
        Ok(Self {
            layers,
            width,
            len,
            out_start,
            out_width,
        })
    }

    /// `feat` arrives with the block input in its leading columns.
    fn forward(
        &self,
        p: &[Parameter],
        mut feat: Vec<f64>,
        batch: usize,
        rate: f64,
        rng: Option<&mut Prng>,
    ) -> BlockTape {
        let (w, len) = (self.width, self.len);
        let mut rng = rng;
        let mut tapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let g = layer.conv.c_out;
            let lstm = layer.lstm.forward(p, &feat[layer.in_start..], w, batch, len);
            let mut z = vec![0.0; batch * len * g];
            let cols = layer.conv.forward(p, &lstm.h, g, batch, len, &mut z, g);
            let mask = match rng.as_deref_mut() {
                Some(r) if rate > 0.0 => Some(dropout_mask(z.len(), rate, r)),
                _ => None,
            };
            for r in 0..batch * len {
                let dst = &mut feat[r * w + layer.out_start..r * w + layer.out_start + g];
                for (u, d) in dst.iter_mut().enumerate() {
                    let k = r * g + u;
                    let a = z[k].max(0.0);
                    *d = mask.as_ref().map_or(a, |m| a * m[k]);
                }
            }
            tapes.push(LayerTape { lstm, cols, z, mask });
        }
        BlockTape { feat, layers: tapes }
    }

    /// `dfeat` holds the gradient w.r.t. the block output columns on entry and
    /// w.r.t. every column (including the block input) on exit.
    fn backward(&self, p: &[Parameter], grads: &mut GradBuffer, tape: &BlockTape, dfeat: &mut [f64], batch: usize) {
        let (w, len) = (self.width, self.len);
        for (layer, lt) in self.layers.iter().zip(&tape.layers).rev() {
            let g = layer.conv.c_out;
            let mut dz = vec![0.0; batch * len * g];
            for r in 0..batch * len {
                for u in 0..g {
                    let k = r * g + u;
                    if lt.z[k] > 0.0 {
                        let m = lt.mask.as_ref().map_or(1.0, |m| m[k]);
                        dz[k] = dfeat[r * w + layer.out_start + u] * m;
                    }
                }
            }
            let mut dh = vec![0.0; batch * len * g];
            layer
                .conv
                .backward(p, grads, &lt.cols, batch, len, &dz, g, Some((&mut dh, g)));
            layer.lstm.backward(
                p,
                grads,
                &tape.feat[layer.in_start..],
                w,
                batch,
                len,
                &lt.lstm,
                &dh,
                Some((&mut dfeat[layer.in_start..], w)),
            );
        }
    }
}

/// Stem conv, two dense blocks around a transition, a final LSTM unrolled
/// over the remaining positions and an affine classifier on its flattened
/// hidden states.
#[derive(Clone, Debug)]
pub(crate) struct DenseNet {
    cfg: DenseLstmConfig,
    stem: Conv,
    block1: Block,
    transition: Conv,
    block2: Block,
    final_lstm: SeqLstm,
    head: Affine,
}

#[derive(Clone, Debug)]
pub(crate) struct DenseTape {
    stem_cols: Vec<f64>,
    b1: BlockTape,
    trans_cols: Vec<f64>,
    b2: BlockTape,
    final_lstm: LstmTape,
}

impl DenseNet {
    pub fn build(set: &mut ParamSet, cfg: &DenseLstmConfig, rng: &mut Prng) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (l1, l2) = cfg.lengths();
        let stem = Conv::build(set, "stem", 1, cfg.stem_channels, 3, 2, rng)?;
        let block1 = Block::build(set, "block1", cfg, cfg.stem_channels, cfg.block_layers[0], l1, rng)?;
        let ct = cfg.transition_channels();
        let transition = Conv::build(set, "transition", block1.out_width, ct, 1, 1, rng)?;
        let block2 = Block::build(set, "block2", cfg, ct, cfg.block_layers[1], l2, rng)?;
        let final_lstm = SeqLstm::build(set, "final.lstm", block2.out_width, cfg.final_hidden, rng)?;
        let head = Affine::build(set, "head", cfg.flatten_dim(), cfg.classes, rng)?;
        Ok(Self {
            cfg: cfg.clone(),
            stem,
            block1,
            transition,
            block2,
            final_lstm,
            head,
        })
    }

    pub fn forward(&self, p: &[Parameter], x: &[f64], batch: usize, rng: Option<&mut Prng>) -> (Vec<f64>, DenseTape) {
        let (l0, b1, b2) = (self.cfg.input_len, &self.block1, &self.block2);
        let rate = self.cfg.dropout_rate;
        let mut rng = rng;
        let mut feat1 = vec![0.0; batch * b1.len * b1.width];
        let stem_cols = self.stem.forward(p, x, 1, batch, l0, &mut feat1, b1.width);
        let b1t = b1.forward(p, feat1, batch, rate, rng.as_deref_mut());

        let ct = self.transition.c_out;
        let mut y = vec![0.0; batch * b1.len * ct];
        let trans_cols = self
            .transition
            .forward(p, &b1t.feat[b1.out_start..], b1.width, batch, b1.len, &mut y, ct);
        let mut feat2 = vec![0.0; batch * b2.len * b2.width];
        avgpool_forward(&y, ct, batch, b1.len, ct, 2, &mut feat2, b2.width);
        let b2t = b2.forward(p, feat2, batch, rate, rng);

        let final_lstm = self
            .final_lstm
            .forward(p, &b2t.feat[b2.out_start..], b2.width, batch, b2.len);
        let logits = self.head.forward(p, &final_lstm.h, batch);
        let tape = DenseTape {
            stem_cols,
            b1: b1t,
            trans_cols,
            b2: b2t,
            final_lstm,
        };
        (logits, tape)
    }

    pub fn backward(&self, p: &[Parameter], grads: &mut GradBuffer, tape: &DenseTape, dlogits: &[f64], batch: usize) {
        let (b1, b2) = (&self.block1, &self.block2);
        let dflat = self
            .head
            .backward(p, grads, &tape.final_lstm.h, dlogits, batch, true)
            .expect("requested");
        let mut dfeat2 = vec![0.0; batch * b2.len * b2.width];
        self.final_lstm.backward(
            p,
            grads,
            &tape.b2.feat[b2.out_start..],
            b2.width,
            batch,
            b2.len,
            &tape.final_lstm,
            &dflat,
            Some((&mut dfeat2[b2.out_start..], b2.width)),
        );
        b2.backward(p, grads, &tape.b2, &mut dfeat2, batch);

        let ct = self.transition.c_out;
        let mut dy = vec![0.0; batch * b1.len * ct];
        avgpool_backward(&dfeat2, b2.width, batch, b1.len, ct, 2, &mut dy, ct);
        let mut dfeat1 = vec![0.0; batch * b1.len * b1.width];
        self.transition.backward(
            p,
            grads,
            &tape.trans_cols,
            batch,
            b1.len,
            &dy,
            ct,
            Some((&mut dfeat1[b1.out_start..], b1.width)),
        );
        b1.backward(p, grads, &tape.b1, &mut dfeat1, batch);
        self.stem.backward(
            p,
            grads,
            &tape.stem_cols,
            batch,
            self.cfg.input_len,
            &dfeat1,
            b1.width,
            None,
        );
    }
}
