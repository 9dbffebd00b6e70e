//! GRU encoder-decoder with additive attention over the encoder states.
//!
//! Decoder step `q` (1-based), with `ŷ₀ = SOS` and `h^g₀ = h_T`:
//!
//! ```text
//! β_i   = tanh([h_i; h^g_{q-1}]ᵀ W_att) · Vᵀ
//! α     = softmax(β)
//! c     = Σ_i α_i h_i
//! h^g_q = GRU([emb(ŷ_{q-1}); c], h^g_{q-1})
//! s_q   = U [h^g_q; c; emb(ŷ_{q-1})]
//! ```

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{select_token, Feed};
use crate::cells::{gru_step, gru_step_backward, GruCellParams, GruStep};
use crate::error::{invalid, Result};
use crate::numkit::{axpy, dot, softmax_unchecked, tanh, visit_child, visit_child_mut, Matrix, ParamSet};
use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq)]
pub struct GruAaSeq2Seq {
    /// `D_in → D_h`
    pub encoder: GruCellParams,
    /// `D_emb + D_h → D_h`
    pub decoder: GruCellParams,
    /// `W_emb`, one row per token: `(C+3) × D_emb`.
    pub embedding: Matrix,
    /// `W_att`: `2D_h × D_h`. The top half multiplies encoder states, the
    /// bottom half the decoder state.
    pub attention: Matrix,
    /// `V`: `1 × D_h`.
    pub attention_vector: Matrix,
    /// `U`: `(C+3) × (2D_h + D_emb)`.
    pub output: Matrix,
}

impl GruAaSeq2Seq {
    pub fn zeros(input_dim: usize, hidden_dim: usize, embedding_dim: usize, output_dim: usize) -> Self {
        Self {
            encoder: GruCellParams::zeros(input_dim, hidden_dim),
            decoder: GruCellParams::zeros(embedding_dim + hidden_dim, hidden_dim),
            embedding: Matrix::zeros(output_dim, embedding_dim),
            attention: Matrix::zeros(2 * hidden_dim, hidden_dim),
            attention_vector: Matrix::zeros(1, hidden_dim),
            output: Matrix::zeros(output_dim, 2 * hidden_dim + embedding_dim),
        }
    }

    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        embedding_dim: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / crate::numkit::sqrt(hidden_dim as f64);
        Self {
            encoder: GruCellParams::random(input_dim, hidden_dim, rng),
            decoder: GruCellParams::random(embedding_dim + hidden_dim, hidden_dim, rng),
            embedding: Matrix::uniform(output_dim, embedding_dim, 1.0, rng),
            attention: Matrix::uniform(2 * hidden_dim, hidden_dim, bound, rng),
            attention_vector: Matrix::uniform(1, hidden_dim, bound, rng),
            output: Matrix::uniform(output_dim, 2 * hidden_dim + embedding_dim, bound, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.hidden_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.output.rows()
    }

    /// `A h` for the encoder half `A` of `W_att` (`Aᵀ h` in column form).
    fn key(&self, h: &[f64]) -> Vec<f64> {
        let d = self.hidden_dim();
        let mut out = vec![0.0; d];
        for (r, &hr) in h.iter().enumerate() {
            axpy(hr, self.attention.row(r), &mut out);
        }
        out
    }

    fn query(&self, h_dec: &[f64]) -> Vec<f64> {
        let d = self.hidden_dim();
        let mut out = vec![0.0; d];
        for (r, &hr) in h_dec.iter().enumerate() {
            axpy(hr, self.attention.row(d + r), &mut out);
        }
        out
    }

    /// Attention weights of every encoder state for decoder state `h_dec`.
    pub fn attention_weights(&self, states: &[Vec<f64>], h_dec: &[f64]) -> Result<Vec<f64>> {
        let d = self.hidden_dim();
        if states.is_empty() {
            return Err(invalid!("attention over an empty encoder sequence"));
        }
        if h_dec.len() != d || states.iter().any(|h| h.len() != d) {
            return Err(invalid!("attention states must have dimension {d}"));
        }
        let keys: Vec<Vec<f64>> = states.iter().map(|h| self.key(h)).collect();
        Ok(self.attend(&keys, &self.query(h_dec)).0)
    }

    /// Returns `(α, tanh activations per encoder step)`.
    fn attend(&self, keys: &[Vec<f64>], query: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let v = self.attention_vector.as_slice();
        let mut acts = Vec::with_capacity(keys.len());
        let mut beta = Vec::with_capacity(keys.len());
        for key in keys {
            let a: Vec<f64> = key.iter().zip(query).map(|(k, q)| tanh(k + q)).collect();
            beta.push(dot(&a, v));
            acts.push(a);
        }
        (softmax_unchecked(&beta), acts)
    }

    pub fn encode(&self, features: &Matrix) -> Result<Vec<GruStep>> {
        if features.cols() != self.input_dim() {
            return Err(invalid!(
                "features have dimension {}, model expects {}",
                features.cols(),
                self.input_dim()
            ));
        }
        let mut h = vec![0.0; self.hidden_dim()];
        let mut steps = Vec::with_capacity(features.rows());
        for x in features.row_iter() {
            let s = gru_step(x, &h, &self.encoder)?;
            h.clone_from(&s.h);
            steps.push(s);
        }
        Ok(steps)
    }

    /// Runs the decoder from encoder states `states` and initial decoder
    /// state `h0`.
    pub(crate) fn decode(&self, states: &[Vec<f64>], h0: &[f64], feed: &Feed<'_>) -> Result<Vec<DecoderStep>> {
        let num_classes = self.output_dim() - 3;
        let sos = num_classes;
        let keys: Vec<Vec<f64>> = states.iter().map(|h| self.key(h)).collect();
        let mut h_prev = h0.to_vec();
        let mut steps: Vec<DecoderStep> = Vec::new();
        let max_steps = feed.max_steps();
        while steps.len() < max_steps {
            let q = steps.len();
            let token = match steps.last() {
                None => sos,
                Some(prev) => feed.next_input(q, select_token(&prev.scores, num_classes)),
            };
            let (alpha, acts) = self.attend(&keys, &self.query(&h_prev));
            let mut context = vec![0.0; self.hidden_dim()];
            for (a, h) in alpha.iter().zip(states) {
                axpy(*a, h, &mut context);
            }
            let emb = self.embedding.row(token);
            let input = [emb, context.as_slice()].concat();
            let gru = gru_step(&input, &h_prev, &self.decoder)?;
            let readout = [gru.h.as_slice(), context.as_slice(), emb].concat();
            let scores = self.output.matvec(&readout);
            let stop = feed.stops_after(&scores, num_classes);
            let h_before = core::mem::replace(&mut h_prev, gru.h.clone());
            steps.push(DecoderStep {
                token,
                h_prev: h_before,
                acts,
                alpha,
                gru,
                readout,
                scores,
            });
            if stop {
                break;
            }
        }
        Ok(steps)
    }

    pub(crate) fn forward(&self, features: &Matrix, feed: &Feed<'_>) -> Result<GruAaTrace> {
        let encoder = self.encode(features)?;
        let states: Vec<Vec<f64>> = encoder.iter().map(|s| s.h.clone()).collect();
        let h_last = states[states.len() - 1].clone();
        let decoder = self.decode(&states, &h_last, feed)?;
        Ok(GruAaTrace { encoder, decoder })
    }

    /// Backpropagates per-step score gradients through decoder, attention
    /// and encoder. Returns the gradient with respect to the input features.
    pub(crate) fn backward(
        &self,
        trace: &GruAaTrace,
        d_scores: &[Vec<f64>],
        grads: &mut GruAaSeq2Seq,
    ) -> Result<Matrix> {
        if d_scores.len() != trace.decoder.len() {
            return Err(invalid!(
                "{} score gradients for {} decoder steps",
                d_scores.len(),
                trace.decoder.len()
            ));
        }
        let d = self.hidden_dim();
        let de_dim = self.embedding_dim();
        let t_len = trace.encoder.len();
        let states: Vec<&[f64]> = trace.encoder.iter().map(|s| s.h.as_slice()).collect();
        let mut d_states = vec![vec![0.0; d]; t_len];
        let mut d_keys = vec![vec![0.0; d]; t_len];
        let mut carry = vec![0.0; d];
        let v = self.attention_vector.as_slice();
        for (step, ds) in trace.decoder.iter().zip(d_scores).rev() {
            grads.output.add_outer(ds, &step.readout);
            let mut d_readout = vec![0.0; step.readout.len()];
            self.output.tmatvec_acc(ds, &mut d_readout);
            let mut dh = carry.clone();
            axpy(1.0, &d_readout[..d], &mut dh);
            let mut d_context = d_readout[d..2 * d].to_vec();
            let mut d_emb = d_readout[2 * d..].to_vec();

            let back = gru_step_backward(&step.gru, &self.decoder, &dh, &mut grads.decoder)?;
            axpy(1.0, &back.dx[..de_dim], &mut d_emb);
            axpy(1.0, &back.dx[de_dim..], &mut d_context);
            carry = back.dh_prev;
            axpy(1.0, &d_emb, grads.embedding.row_mut(step.token));

            // context = Σ α_i h_i
            let d_alpha: Vec<f64> = states.iter().map(|h| dot(h, &d_context)).collect();
            for (ds_i, &a) in d_states.iter_mut().zip(&step.alpha) {
                axpy(a, &d_context, ds_i);
            }
            // α = softmax(β)
            let mean: f64 = step.alpha.iter().zip(&d_alpha).map(|(a, g)| a * g).sum();
            let mut d_query = vec![0.0; d];
            for i in 0..t_len {
                let d_beta = step.alpha[i] * (d_alpha[i] - mean);
                if d_beta == 0.0 {
                    continue;
                }
                let acts = &step.acts[i];
                axpy(d_beta, acts, grads.attention_vector.as_mut_slice());
                let d_pre: Vec<f64> = acts
                    .iter()
                    .zip(v)
                    .map(|(a, vk)| d_beta * vk * (1.0 - a * a))
                    .collect();
                axpy(1.0, &d_pre, &mut d_query);
                axpy(1.0, &d_pre, &mut d_keys[i]);
            }
            for (r, &hr) in step.h_prev.iter().enumerate() {
                axpy(hr, &d_query, grads.attention.row_mut(d + r));
                carry[r] += dot(self.attention.row(d + r), &d_query);
            }
        }

        // key_i = A h_i is shared by every decoder step.
        for (i, dk) in d_keys.iter().enumerate() {
            for (r, &hr) in states[i].iter().enumerate() {
                axpy(hr, dk, grads.attention.row_mut(r));
                d_states[i][r] += dot(self.attention.row(r), dk);
            }
        }
        // h^g_0 = h_T
        axpy(1.0, &carry, &mut d_states[t_len - 1]);
        let mut d_features = Matrix::zeros(t_len, self.input_dim());
        let mut dh = vec![0.0; d];
        for (i, step) in trace.encoder.iter().enumerate().rev() {
            axpy(1.0, &d_states[i], &mut dh);
            let back = gru_step_backward(step, &self.encoder, &dh, &mut grads.encoder)?;
            d_features.row_mut(i).copy_from_slice(&back.dx);
            dh = back.dh_prev;
        }
        Ok(d_features)
    }
}

impl ParamSet for GruAaSeq2Seq {
    fn for_each(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        visit_child("encoder", &self.encoder, f);
        visit_child("decoder", &self.decoder, f);
        f("embedding", &self.embedding);
        f("attention", &self.attention);
        f("attention_vector", &self.attention_vector);
        f("output", &self.output);
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        visit_child_mut("encoder", &mut self.encoder, f);
        visit_child_mut("decoder", &mut self.decoder, f);
        f("embedding", &mut self.embedding);
        f("attention", &mut self.attention);
        f("attention_vector", &mut self.attention_vector);
        f("output", &mut self.output);
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DecoderStep {
    pub token: TokenId,
    pub h_prev: Vec<f64>,
    pub acts: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub gru: GruStep,
    pub readout: Vec<f64>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct GruAaTrace {
    pub encoder: Vec<GruStep>,
    pub decoder: Vec<DecoderStep>,
}
