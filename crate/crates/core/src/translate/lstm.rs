//! LSTM-family models: the encoder-decoder (`LSTM-ED`) and the two
//! single-network baselines (`LSTM-Mean`, `LSTM-SS`).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{select_token, Feed, Variant};
use crate::cells::{lstm_step, lstm_step_backward, LstmCellParams, LstmStep};
use crate::error::{invalid, Result};
use crate::numkit::{axpy, visit_child, visit_child_mut, Matrix, ParamSet};
use crate::vocab::TokenId;

/// Stacked LSTM layers; layer `l + 1` reads the hidden state of layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack {
    pub layers: Vec<LstmCellParams>,
}

/// Hidden and cell state of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StackState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl StackState {
    pub fn zeros(depth: usize, hidden_dim: usize) -> Self {
        Self {
            h: vec![vec![0.0; hidden_dim]; depth],
            c: vec![vec![0.0; hidden_dim]; depth],
        }
    }
}

impl LstmStack {
    pub fn zeros(input_dim: usize, hidden_dim: usize, depth: usize) -> Self {
        let layers = (0..depth)
            .map(|l| LstmCellParams::zeros(if l == 0 { input_dim } else { hidden_dim }, hidden_dim))
            .collect();
        Self { layers }
    }

    pub fn random<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, depth: usize, rng: &mut R) -> Self {
        let layers = (0..depth)
            .map(|l| LstmCellParams::random(if l == 0 { input_dim } else { hidden_dim }, hidden_dim, rng))
            .collect();
        Self { layers }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].hidden_dim()
    }

    /// Advances every layer by one step, updating `state` in place.
    pub fn step(&self, x: &[f64], state: &mut StackState) -> Result<Vec<LstmStep>> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut input = x.to_vec();
        for (l, cell) in self.layers.iter().enumerate() {
            let s = lstm_step(&input, &state.h[l], &state.c[l], cell)?;
            state.h[l].clone_from(&s.h);
            state.c[l].clone_from(&s.c);
            input.clone_from(&s.h);
            caches.push(s);
        }
        Ok(caches)
    }

    /// Backward through one stacked step. `carry` holds the gradients on
    /// the state after this step on entry and before it on return.
    pub fn step_backward(
        &self,
        caches: &[LstmStep],
        dh_top: &[f64],
        carry: &mut StackState,
        grads: &mut LstmStack,
    ) -> Result<Vec<f64>> {
        let mut from_above = dh_top.to_vec();
        for l in (0..self.layers.len()).rev() {
            let mut dh = core::mem::take(&mut carry.h[l]);
            axpy(1.0, &from_above, &mut dh);
            let back = lstm_step_backward(&caches[l], &self.layers[l], &dh, &carry.c[l], &mut grads.layers[l])?;
            carry.h[l] = back.dh_prev;
            carry.c[l] = back.dc_prev;
            from_above = back.dx;
        }
        Ok(from_above)
    }
}

impl ParamSet for LstmStack {
    fn for_each(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        for (l, cell) in self.layers.iter().enumerate() {
            visit_child(&format!("layer{l}"), cell, f);
        }
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        for (l, cell) in self.layers.iter_mut().enumerate() {
            visit_child_mut(&format!("layer{l}"), cell, f);
        }
    }
}

/// Parameters shared by the three LSTM variants.
///
/// * `LSTM-ED`: `encoder` reads the features; its final `(h, c)` per layer
///   initializes `decoder`, whose input is the previous token embedding.
/// * `LSTM-Mean`: no encoder; every decoder step reads
///   `[mean(features); emb(ŷ_{q-1})]` from a zero state.
/// * `LSTM-SS`: no encoder; the decoder first consumes `[x_t; 0]` for every
///   frame, then continues on `[0; emb(ŷ_{q-1})]`.
///
/// Scores are `s_q = W h_q` for the top-layer decoder state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmSeq2Seq {
    variant: Variant,
    feature_dim: usize,
    pub encoder: Option<LstmStack>,
    pub decoder: LstmStack,
    /// `(C+3) × D_emb`
    pub embedding: Matrix,
    /// `W`: `(C+3) × D_h`
    pub output: Matrix,
}

impl LstmSeq2Seq {
    fn decoder_input_dim(variant: Variant, input_dim: usize, embedding_dim: usize) -> usize {
        match variant {
            Variant::LstmEd => embedding_dim,
            _ => input_dim + embedding_dim,
        }
    }

    pub fn zeros(variant: Variant, input_dim: usize, hidden_dim: usize, embedding_dim: usize, output_dim: usize, depth: usize) -> Self {
        debug_assert!(variant != Variant::GruAa);
        let encoder = (variant == Variant::LstmEd).then(|| LstmStack::zeros(input_dim, hidden_dim, depth));
        let dec_in = Self::decoder_input_dim(variant, input_dim, embedding_dim);
        Self {
            variant,
            feature_dim: input_dim,
            encoder,
            decoder: LstmStack::zeros(dec_in, hidden_dim, depth),
            embedding: Matrix::zeros(output_dim, embedding_dim),
            output: Matrix::zeros(output_dim, hidden_dim),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn random<R: Rng + ?Sized>(
        variant: Variant,
        input_dim: usize,
        hidden_dim: usize,
        embedding_dim: usize,
        output_dim: usize,
        depth: usize,
        rng: &mut R,
    ) -> Self {
        debug_assert!(variant != Variant::GruAa);
        let bound = 1.0 / crate::numkit::sqrt(hidden_dim as f64);
        let encoder = (variant == Variant::LstmEd).then(|| LstmStack::random(input_dim, hidden_dim, depth, rng));
        let dec_in = Self::decoder_input_dim(variant, input_dim, embedding_dim);
        Self {
            variant,
            feature_dim: input_dim,
            encoder,
            decoder: LstmStack::random(dec_in, hidden_dim, depth, rng),
            embedding: Matrix::uniform(output_dim, embedding_dim, 1.0, rng),
            output: Matrix::uniform(output_dim, hidden_dim, bound, rng),
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn input_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.decoder.hidden_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.output.rows()
    }

    pub fn depth(&self) -> usize {
        self.decoder.depth()
    }

    fn check_features(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.feature_dim {
            return Err(invalid!(
                "features have dimension {}, model expects {}",
                features.cols(),
                self.feature_dim
            ));
        }
        Ok(())
    }

    /// Runs the reading phase: the encoder for `LSTM-ED`, the frame-consuming
    /// steps of the single network for `LSTM-SS`, nothing for `LSTM-Mean`.
    pub(crate) fn read(&self, features: &Matrix) -> Result<(Vec<Vec<LstmStep>>, StackState)> {
        self.check_features(features)?;
        let depth = self.depth();
        let mut state = StackState::zeros(depth, self.hidden_dim());
        let mut steps = Vec::new();
        match self.variant {
            Variant::LstmEd => {
                let enc = self.encoder.as_ref().expect("LSTM-ED has an encoder");
                for x in features.row_iter() {
                    steps.push(enc.step(x, &mut state)?);
                }
            }
            Variant::LstmSs => {
                let mut input = vec![0.0; self.decoder.input_dim()];
                for x in features.row_iter() {
                    input[..self.feature_dim].copy_from_slice(x);
                    steps.push(self.decoder.step(&input, &mut state)?);
                }
            }
            _ => {}
        }
        Ok((steps, state))
    }

    fn mean_frame(features: &Matrix) -> Vec<f64> {
        let mut mean = vec![0.0; features.cols()];
        for x in features.row_iter() {
            axpy(1.0, x, &mut mean);
        }
        let n = features.rows() as f64;
        mean.iter_mut().for_each(|v| *v /= n);
        mean
    }

    pub(crate) fn decode(&self, init: StackState, mean: Option<&[f64]>, feed: &Feed<'_>) -> Result<Vec<LstmDecoderStep>> {
        let num_classes = self.output_dim() - 3;
        let mut state = init;
        let mut steps: Vec<LstmDecoderStep> = Vec::new();
        let max_steps = feed.max_steps();
        let mut input = vec![0.0; self.decoder.input_dim()];
        if let Some(m) = mean {
            input[..m.len()].copy_from_slice(m);
        }
        let emb_offset = input.len() - self.embedding_dim();
        while steps.len() < max_steps {
            let q = steps.len();
            let token = match steps.last() {
                None => num_classes,
                Some(prev) => feed.next_input(q, select_token(&prev.scores, num_classes)),
            };
            input[emb_offset..].copy_from_slice(self.embedding.row(token));
            let caches = self.decoder.step(&input, &mut state)?;
            let scores = self.output.matvec(&caches[caches.len() - 1].h);
            let stop = feed.stops_after(&scores, num_classes);
            steps.push(LstmDecoderStep { token, caches, scores });
            if stop {
                break;
            }
        }
        Ok(steps)
    }

    pub(crate) fn forward(&self, features: &Matrix, feed: &Feed<'_>) -> Result<LstmTrace> {
        let (reader, state) = self.read(features)?;
        let mean = (self.variant == Variant::LstmMean).then(|| Self::mean_frame(features));
        let decoder = self.decode(state, mean.as_deref(), feed)?;
        Ok(LstmTrace {
            frames: features.rows(),
            reader,
            decoder,
        })
    }

    pub(crate) fn backward(&self, trace: &LstmTrace, d_scores: &[Vec<f64>], grads: &mut LstmSeq2Seq) -> Result<Matrix> {
        if d_scores.len() != trace.decoder.len() {
            return Err(invalid!(
                "{} score gradients for {} decoder steps",
                d_scores.len(),
                trace.decoder.len()
            ));
        }
        let depth = self.depth();
        let hidden = self.hidden_dim();
        let emb_dim = self.embedding_dim();
        let mut carry = StackState::zeros(depth, hidden);
        let mut d_mean = vec![0.0; self.feature_dim];
        for (step, ds) in trace.decoder.iter().zip(d_scores).rev() {
            let top = &step.caches[depth - 1].h;
            grads.output.add_outer(ds, top);
            let mut dh_top = vec![0.0; hidden];
            self.output.tmatvec_acc(ds, &mut dh_top);
            let dx = self.decoder.step_backward(&step.caches, &dh_top, &mut carry, &mut grads.decoder)?;
            let split = dx.len() - emb_dim;
            axpy(1.0, &dx[split..], grads.embedding.row_mut(step.token));
            if self.variant == Variant::LstmMean {
                axpy(1.0, &dx[..split], &mut d_mean);
            }
        }
        let mut d_features = Matrix::zeros(trace.frames, self.feature_dim);
        match self.variant {
            Variant::LstmEd => {
                let enc = self.encoder.as_ref().expect("LSTM-ED has an encoder");
                let genc = grads.encoder.as_mut().expect("LSTM-ED gradients have an encoder");
                let zero_top = vec![0.0; hidden];
                for (t, caches) in trace.reader.iter().enumerate().rev() {
                    let dx = enc.step_backward(caches, &zero_top, &mut carry, genc)?;
                    d_features.row_mut(t).copy_from_slice(&dx);
                }
            }
            Variant::LstmSs => {
                let zero_top = vec![0.0; hidden];
                for (t, caches) in trace.reader.iter().enumerate().rev() {
                    let dx = self.decoder.step_backward(caches, &zero_top, &mut carry, &mut grads.decoder)?;
                    d_features.row_mut(t).copy_from_slice(&dx[..self.feature_dim]);
                }
            }
            _ => {
                let n = trace.frames as f64;
                for t in 0..trace.frames {
                    d_features.row_mut(t).iter_mut().zip(&d_mean).for_each(|(d, m)| *d = m / n);
                }
            }
        }
        Ok(d_features)
    }
}

impl ParamSet for LstmSeq2Seq {
    fn for_each(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        if let Some(enc) = &self.encoder {
            visit_child("encoder", enc, f);
        }
        visit_child("decoder", &self.decoder, f);
        f("embedding", &self.embedding);
        f("output", &self.output);
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        if let Some(enc) = &mut self.encoder {
            visit_child_mut("encoder", enc, f);
        }
        visit_child_mut("decoder", &mut self.decoder, f);
        f("embedding", &mut self.embedding);
        f("output", &mut self.output);
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LstmDecoderStep {
    pub token: TokenId,
    pub caches: Vec<LstmStep>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LstmTrace {
    pub frames: usize,
    pub reader: Vec<Vec<LstmStep>>,
    pub decoder: Vec<LstmDecoderStep>,
}
