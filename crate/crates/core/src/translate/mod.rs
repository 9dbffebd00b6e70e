//! The four translation models and greedy decoding.
//!
//! | variant     | reads features with            | decoder                         |
//! |-------------|--------------------------------|---------------------------------|
//! | `LSTM-Mean` | temporal mean, every step      | stacked LSTM                    |
//! | `LSTM-SS`   | the same stacked LSTM, frame by frame | continues on its own outputs |
//! | `LSTM-ED`   | LSTM encoder, final `(h, c)`   | LSTM initialized from encoder   |
//! | `GRU-AA`    | GRU encoder, all states        | GRU with additive attention     |
//!
//! Every decoder starts from `SOS`, feeds back its own argmax token and
//! stops after emitting `EOS` or after `max_decode_len` steps. Token
//! selection only considers class ids and `EOS`, so `SOS` and `PAD` are never
//! emitted; ties go to the lowest id.

mod gru_aa;
mod lstm;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

pub use gru_aa::GruAaSeq2Seq;
pub use lstm::{LstmSeq2Seq, LstmStack, StackState};

use crate::error::{invalid, Error, Result};
use crate::numkit::{argmax, axpy, Matrix, ParamSet};
use crate::vocab::TokenId;

/// Encoder input: `T` frames of dimension `D_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub id: String,
    pub frames: Matrix,
}

impl FeatureSequence {
    pub fn new(id: impl Into<String>, frames: Matrix) -> Self {
        Self { id: id.into(), frames }
    }

    pub fn from_rows(id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        Ok(Self::new(id, Matrix::from_rows(rows)?))
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    LstmMean,
    LstmSs,
    LstmEd,
    GruAa,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::LstmMean, Variant::LstmSs, Variant::LstmEd, Variant::GruAa];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::LstmMean => "lstm-mean",
            Variant::LstmSs => "lstm-ss",
            Variant::LstmEd => "lstm-ed",
            Variant::GruAa => "gru-aa",
        }
    }

    pub fn has_attention(self) -> bool {
        self == Variant::GruAa
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid!("unknown model variant `{s}` (expected lstm-mean, lstm-ss, lstm-ed or gru-aa)"))
    }
}

/// Shape of a model. `output_dim` is `C + 3`; `depth` is the number of
/// stacked LSTM layers (must be 1 for `GRU-AA`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub output_dim: usize,
    pub depth: usize,
}

impl ModelDims {
    pub fn num_classes(&self) -> usize {
        self.output_dim - 3
    }

    fn validate(&self, variant: Variant) -> Result<()> {
        let ModelDims { input_dim, hidden_dim, embedding_dim, output_dim, depth } = *self;
        if input_dim == 0 || hidden_dim == 0 || embedding_dim == 0 || depth == 0 {
            return Err(invalid!("model dimensions must be positive: {self:?}"));
        }
        if output_dim < 4 {
            return Err(invalid!("output dimension {output_dim} leaves no action class (need C + 3 with C >= 1)"));
        }
        if variant == Variant::GruAa && depth != 1 {
            return Err(invalid!("gru-aa uses single-layer cells, got depth {depth}"));
        }
        Ok(())
    }
}

/// Selects the emitted token from a score vector over `C + 3` ids: the
/// argmax over classes and `EOS` (ties to the lowest id).
pub fn select_token(scores: &[f64], num_classes: usize) -> TokenId {
    let best_class = argmax(&scores[..num_classes]);
    if scores[num_classes + 1] > scores[best_class] {
        num_classes + 1
    } else {
        best_class
    }
}

/// How the decoder chooses its next input token.
#[derive(Debug, Clone, Copy)]
pub enum Feed<'a> {
    /// Feed back the selected token; stop after `EOS` or `max_len` steps.
    Greedy { max_len: usize },
    /// Run exactly `targets.len()` steps (targets end with `EOS`). Step `q`
    /// reads `targets[q-1]` when `forcing[q]` is set, otherwise the token
    /// selected at step `q-1`.
    Targets { targets: &'a [TokenId], forcing: &'a [bool] },
}

impl Feed<'_> {
    fn max_steps(&self) -> usize {
        match self {
            Feed::Greedy { max_len } => *max_len,
            Feed::Targets { targets, .. } => targets.len(),
        }
    }

    fn next_input(&self, q: usize, predicted: TokenId) -> TokenId {
        match self {
            Feed::Greedy { .. } => predicted,
            Feed::Targets { targets, forcing } => {
                if forcing[q] {
                    targets[q - 1]
                } else {
                    predicted
                }
            }
        }
    }

    fn stops_after(&self, scores: &[f64], num_classes: usize) -> bool {
        match self {
            Feed::Greedy { .. } => select_token(scores, num_classes) == num_classes + 1,
            Feed::Targets { .. } => false,
        }
    }
}

/// `α_{i,q}`: encoder steps as rows, decoder steps as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub weights: Matrix,
}

/// Pre-softmax decoder scores, one row of `C + 3` per generated step.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSequence {
    pub steps: Matrix,
}

impl ScoreSequence {
    pub fn len(&self) -> usize {
        self.steps.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Emitted tokens, `EOS` stripped.
    pub tokens: Vec<TokenId>,
    pub step_scores: ScoreSequence,
    /// Present for `GRU-AA` only.
    pub attention: Option<AttentionTrace>,
}

/// Encoder states plus the final state used to initialize the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// `h_1 … h_T` (top layer for stacked LSTMs).
    pub states: Vec<Vec<f64>>,
    /// Final hidden state per layer.
    pub final_hidden: Vec<Vec<f64>>,
    /// Final cell state per layer (LSTM only).
    pub final_cell: Option<Vec<Vec<f64>>>,
}

/// Forward values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace(TraceInner);

#[derive(Debug, Clone)]
enum TraceInner {
    Lstm(lstm::LstmTrace),
    GruAa(gru_aa::GruAaTrace),
}

impl Trace {
    pub fn num_steps(&self) -> usize {
        match &self.0 {
            TraceInner::Lstm(t) => t.decoder.len(),
            TraceInner::GruAa(t) => t.decoder.len(),
        }
    }

    pub fn step_scores(&self, q: usize) -> &[f64] {
        match &self.0 {
            TraceInner::Lstm(t) => &t.decoder[q].scores,
            TraceInner::GruAa(t) => &t.decoder[q].scores,
        }
    }

    /// Token read by the decoder at each step (`SOS` first).
    pub fn inputs(&self) -> Vec<TokenId> {
        match &self.0 {
            TraceInner::Lstm(t) => t.decoder.iter().map(|s| s.token).collect(),
            TraceInner::GruAa(t) => t.decoder.iter().map(|s| s.token).collect(),
        }
    }

    pub fn scores(&self) -> Result<ScoreSequence> {
        let rows: Vec<Vec<f64>> = (0..self.num_steps()).map(|q| self.step_scores(q).to_vec()).collect();
        Ok(ScoreSequence { steps: Matrix::from_rows(&rows)? })
    }

    pub fn attention(&self) -> Option<AttentionTrace> {
        match &self.0 {
            TraceInner::Lstm(_) => None,
            TraceInner::GruAa(t) => {
                let alphas: Vec<&[f64]> = t.decoder.iter().map(|s| s.alpha.as_slice()).collect();
                Some(attention_matrix(t.encoder.len(), &alphas))
            }
        }
    }

    fn into_prediction(self, num_classes: usize) -> Result<Prediction> {
        let scores: Vec<&[f64]> = (0..self.num_steps()).map(|q| self.step_scores(q)).collect();
        build_prediction(num_classes, &scores, self.attention())
    }
}

fn attention_matrix(frames: usize, alphas: &[&[f64]]) -> AttentionTrace {
    let mut w = Matrix::zeros(frames, alphas.len());
    for (q, alpha) in alphas.iter().enumerate() {
        for (i, &a) in alpha.iter().enumerate() {
            w.set(i, q, a);
        }
    }
    AttentionTrace { weights: w }
}

fn build_prediction(num_classes: usize, scores: &[&[f64]], attention: Option<AttentionTrace>) -> Result<Prediction> {
    let eos = num_classes + 1;
    let tokens = scores
        .iter()
        .map(|s| select_token(s, num_classes))
        .take_while(|&t| t != eos)
        .collect();
    let rows: Vec<f64> = scores.concat();
    Ok(Prediction {
        tokens,
        step_scores: ScoreSequence {
            steps: Matrix::from_vec(scores.len(), num_classes + 3, rows)?,
        },
        attention,
    })
}

/// One model variant and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Seq2SeqModel {
    Lstm(LstmSeq2Seq),
    GruAa(GruAaSeq2Seq),
}

impl Seq2SeqModel {
    /// Randomly initialized model (weights uniform in `±1/√D_h`, biases 0).
    pub fn new<R: Rng + ?Sized>(variant: Variant, dims: ModelDims, rng: &mut R) -> Result<Self> {
        dims.validate(variant)?;
        let ModelDims { input_dim, hidden_dim, embedding_dim, output_dim, depth } = dims;
        Ok(match variant {
            Variant::GruAa => Seq2SeqModel::GruAa(GruAaSeq2Seq::random(input_dim, hidden_dim, embedding_dim, output_dim, rng)),
            v => Seq2SeqModel::Lstm(LstmSeq2Seq::random(v, input_dim, hidden_dim, embedding_dim, output_dim, depth, rng)),
        })
    }

    /// All-zero model of the given shape.
    pub fn zeros(variant: Variant, dims: ModelDims) -> Result<Self> {
        dims.validate(variant)?;
        let ModelDims { input_dim, hidden_dim, embedding_dim, output_dim, depth } = dims;
        Ok(match variant {
            Variant::GruAa => Seq2SeqModel::GruAa(GruAaSeq2Seq::zeros(input_dim, hidden_dim, embedding_dim, output_dim)),
            v => Seq2SeqModel::Lstm(LstmSeq2Seq::zeros(v, input_dim, hidden_dim, embedding_dim, output_dim, depth)),
        })
    }

    pub fn variant(&self) -> Variant {
        match self {
            Seq2SeqModel::Lstm(m) => m.variant(),
            Seq2SeqModel::GruAa(_) => Variant::GruAa,
        }
    }

    pub fn dims(&self) -> ModelDims {
        match self {
            Seq2SeqModel::Lstm(m) => ModelDims {
                input_dim: m.input_dim(),
                hidden_dim: m.hidden_dim(),
                embedding_dim: m.embedding_dim(),
                output_dim: m.output_dim(),
                depth: m.depth(),
            },
            Seq2SeqModel::GruAa(m) => ModelDims {
                input_dim: m.input_dim(),
                hidden_dim: m.hidden_dim(),
                embedding_dim: m.embedding_dim(),
                output_dim: m.output_dim(),
                depth: 1,
            },
        }
    }

    pub fn num_classes(&self) -> usize {
        self.dims().num_classes()
    }

    pub fn eos(&self) -> TokenId {
        self.num_classes() + 1
    }

    /// Runs the model on `features` under `feed`, keeping everything the
    /// backward pass needs.
    pub fn forward(&self, features: &Matrix, feed: Feed<'_>) -> Result<Trace> {
        match &feed {
            Feed::Greedy { max_len } if *max_len == 0 => {
                return Err(invalid!("max_decode_len must be at least 1"));
            }
            Feed::Targets { targets, forcing } => {
                if targets.is_empty() {
                    return Err(invalid!("a target feed needs at least the EOS step"));
                }
                if forcing.len() < targets.len() {
                    return Err(invalid!(
                        "{} forcing draws for {} decoder steps",
                        forcing.len(),
                        targets.len()
                    ));
                }
                let out = self.dims().output_dim;
                if let Some(t) = targets.iter().find(|&&t| t >= out) {
                    return Err(invalid!("target token {t} out of range for {out} outputs"));
                }
            }
            _ => {}
        }
        Ok(Trace(match self {
            Seq2SeqModel::Lstm(m) => TraceInner::Lstm(m.forward(features, &feed)?),
            Seq2SeqModel::GruAa(m) => TraceInner::GruAa(m.forward(features, &feed)?),
        }))
    }

    /// Backpropagates gradients on the per-step scores of `trace`,
    /// accumulating parameter gradients into `grads` (a model of the same
    /// shape). Returns the gradient with respect to the input features.
    pub fn backward(&self, trace: &Trace, d_scores: &[Vec<f64>], grads: &mut Seq2SeqModel) -> Result<Matrix> {
        match (self, &trace.0, grads) {
            (Seq2SeqModel::Lstm(m), TraceInner::Lstm(t), Seq2SeqModel::Lstm(g)) => m.backward(t, d_scores, g),
            (Seq2SeqModel::GruAa(m), TraceInner::GruAa(t), Seq2SeqModel::GruAa(g)) => m.backward(t, d_scores, g),
            _ => Err(Error::InvalidState("trace or gradients belong to a different model variant".into())),
        }
    }

    /// Encoder pass of `LSTM-ED` and `GRU-AA`.
    pub fn encode(&self, features: &FeatureSequence) -> Result<EncoderOutput> {
        match self {
            Seq2SeqModel::GruAa(m) => {
                let steps = m.encode(&features.frames)?;
                let states: Vec<Vec<f64>> = steps.into_iter().map(|s| s.h).collect();
                let last = states[states.len() - 1].clone();
                Ok(EncoderOutput {
                    states,
                    final_hidden: alloc::vec![last],
                    final_cell: None,
                })
            }
            Seq2SeqModel::Lstm(m) if m.variant() == Variant::LstmEd => {
                let (steps, state) = m.read(&features.frames)?;
                let states = steps.into_iter().map(|mut s| s.pop().expect("non-empty stack").h).collect();
                Ok(EncoderOutput {
                    states,
                    final_hidden: state.h,
                    final_cell: Some(state.c),
                })
            }
            Seq2SeqModel::Lstm(m) => Err(Error::Unsupported(alloc::format!(
                "{} has no separate encoder; use forward_baseline",
                m.variant()
            ))),
        }
    }

    /// Attention weights over encoder states `states` for decoder state
    /// `h_dec` (`GRU-AA` only).
    pub fn attention(&self, states: &[Vec<f64>], h_dec: &[f64]) -> Result<Vec<f64>> {
        match self {
            Seq2SeqModel::GruAa(m) => m.attention_weights(states, h_dec),
            Seq2SeqModel::Lstm(m) => Err(Error::Unsupported(alloc::format!("{} has no attention", m.variant()))),
        }
    }

    /// Greedy decoding from an [`EncoderOutput`] (`LSTM-ED`, `GRU-AA`).
    pub fn decode_greedy(&self, encoded: &EncoderOutput, max_decode_len: usize) -> Result<Prediction> {
        if max_decode_len == 0 {
            return Err(invalid!("max_decode_len must be at least 1"));
        }
        let feed = Feed::Greedy { max_len: max_decode_len };
        let num_classes = self.num_classes();
        match self {
            Seq2SeqModel::GruAa(m) => {
                let d = m.hidden_dim();
                if encoded.states.is_empty() || encoded.states.iter().any(|h| h.len() != d) {
                    return Err(invalid!("encoder states must be non-empty with dimension {d}"));
                }
                let h0 = encoded.final_hidden.first().ok_or_else(|| invalid!("missing final hidden state"))?;
                let steps = m.decode(&encoded.states, h0, &feed)?;
                let scores: Vec<&[f64]> = steps.iter().map(|s| s.scores.as_slice()).collect();
                let alphas: Vec<&[f64]> = steps.iter().map(|s| s.alpha.as_slice()).collect();
                build_prediction(num_classes, &scores, Some(attention_matrix(encoded.states.len(), &alphas)))
            }
            Seq2SeqModel::Lstm(m) if m.variant() == Variant::LstmEd => {
                let cell = encoded
                    .final_cell
                    .clone()
                    .ok_or_else(|| invalid!("LSTM-ED decoding needs the final cell state"))?;
                if encoded.final_hidden.len() != m.depth() || cell.len() != m.depth() {
                    return Err(invalid!("encoder state depth does not match the decoder"));
                }
                let init = StackState { h: encoded.final_hidden.clone(), c: cell };
                let steps = m.decode(init, None, &feed)?;
                let scores: Vec<&[f64]> = steps.iter().map(|s| s.scores.as_slice()).collect();
                build_prediction(num_classes, &scores, None)
            }
            Seq2SeqModel::Lstm(m) => Err(Error::Unsupported(alloc::format!(
                "{} has no separate encoder; use forward_baseline",
                m.variant()
            ))),
        }
    }

    /// Forward pass of the `LSTM-Mean` and `LSTM-SS` baselines.
    pub fn forward_baseline(&self, features: &FeatureSequence, max_decode_len: usize) -> Result<Prediction> {
        match self.variant() {
            Variant::LstmMean | Variant::LstmSs => self.predict(features, max_decode_len),
            v => Err(Error::Unsupported(alloc::format!("{v} is not a baseline variant"))),
        }
    }

    /// Greedy prediction for any variant.
    pub fn predict(&self, features: &FeatureSequence, max_decode_len: usize) -> Result<Prediction> {
        self.predict_frames(&features.frames, max_decode_len)
    }

    pub fn predict_frames(&self, frames: &Matrix, max_decode_len: usize) -> Result<Prediction> {
        let trace = self.forward(frames, Feed::Greedy { max_len: max_decode_len })?;
        trace.into_prediction(self.num_classes())
    }
}

impl ParamSet for Seq2SeqModel {
    fn for_each(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        match self {
            Seq2SeqModel::Lstm(m) => m.for_each(f),
            Seq2SeqModel::GruAa(m) => m.for_each(f),
        }
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        match self {
            Seq2SeqModel::Lstm(m) => m.for_each_mut(f),
            Seq2SeqModel::GruAa(m) => m.for_each_mut(f),
        }
    }
}

/// `c = Σ_j α_j h_j`.
pub fn context_vector(states: &[Vec<f64>], alpha: &[f64]) -> Result<Vec<f64>> {
    if states.len() != alpha.len() {
        return Err(invalid!("{} attention weights for {} encoder states", alpha.len(), states.len()));
    }
    let d = states.first().map_or(0, Vec::len);
    if states.iter().any(|h| h.len() != d) {
        return Err(invalid!("encoder states have inconsistent dimensions"));
    }
    let mut c = alloc::vec![0.0; d];
    for (h, &a) in states.iter().zip(alpha) {
        axpy(a, h, &mut c);
    }
    Ok(c)
}

#[cfg(test)]
mod tests;
