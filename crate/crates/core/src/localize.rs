//! Frame-level action scores read off a trained GRU-AA model's attention:
//! each decoding step's class distribution is spread over the timeline by
//! its attention weights and sampled at 25 equidistant frames.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::metrics::frame_map;
use crate::numkit::{argmax, softmax_unchecked, Matrix};
use crate::synthdata::Sample;
use crate::translate::{Prediction, Seq2SeqModel, Variant};

pub const GRID_FRAMES: usize = 25;

/// How a decoding step's class distribution reaches an encoder step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoringRule {
    /// `score(t, c) = (1/Q) Σ_q α_{t,q} · softmax(s_q)[c]`.
    #[default]
    AttentionMass,
    /// Each encoder step takes the distribution of the step attending to it
    /// most, scaled by that weight.
    NearestStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationGrid {
    /// `25 × C` frame scores.
    pub scores: Matrix,
    /// Encoder step sampled for each grid row.
    pub timestamps: Vec<usize>,
}

/// Encoder steps `round((2t + 1) · T / 50)` for `t = 0 … 24` with ties
/// rounded down, clamped to `T − 1`. Strictly increasing once `T ≥ 25`.
pub fn grid_timestamps(frames: usize) -> Vec<usize> {
    let half = 2 * GRID_FRAMES;
    (0..GRID_FRAMES)
        .map(|t| (((2 * t + 1) * frames + GRID_FRAMES - 1) / half).min(frames.saturating_sub(1)))
        .collect()
}

/// Grid from a finished prediction (its attention trace and step scores).
pub fn grid_from_prediction(prediction: &Prediction, num_classes: usize, rule: ScoringRule) -> Result<LocalizationGrid> {
    let attention = prediction
        .attention
        .as_ref()
        .ok_or_else(|| Error::Unsupported("localization needs an attention trace".into()))?;
    let alpha = &attention.weights;
    let (frames, steps) = alpha.shape();
    if steps != prediction.step_scores.len() {
        return Err(invalid!("{steps} attention columns for {} score rows", prediction.step_scores.len()));
    }
    let dists: Vec<Vec<f64>> = prediction.step_scores.steps.row_iter().map(softmax_unchecked).collect();
    let timestamps = grid_timestamps(frames);
    let mut scores = Matrix::zeros(GRID_FRAMES, num_classes);
    for (row, &t) in timestamps.iter().enumerate() {
        let weights = alpha.row(t);
        let out = scores.row_mut(row);
        match rule {
            ScoringRule::AttentionMass => {
                let inv_q = 1.0 / steps as f64;
                for (q, &a) in weights.iter().enumerate() {
                    for (o, &p) in out.iter_mut().zip(&dists[q][..num_classes]) {
                        *o += inv_q * a * p;
                    }
                }
            }
            ScoringRule::NearestStep => {
                let q = argmax(weights);
                for (o, &p) in out.iter_mut().zip(&dists[q][..num_classes]) {
                    *o = weights[q] * p;
                }
            }
        }
    }
    Ok(LocalizationGrid { scores, timestamps })
}

/// Greedy decoding with attention tracing, turned into a frame grid.
pub fn localize(model: &Seq2SeqModel, features: &Matrix, max_decode_len: usize) -> Result<LocalizationGrid> {
    localize_with(model, features, max_decode_len, ScoringRule::AttentionMass)
}

pub fn localize_with(model: &Seq2SeqModel, features: &Matrix, max_decode_len: usize, rule: ScoringRule) -> Result<LocalizationGrid> {
    if model.variant() != Variant::GruAa {
        return Err(Error::Unsupported(alloc::format!("{} has no attention to localize with", model.variant())));
    }
    let prediction = model.predict_frames(features, max_decode_len)?;
    grid_from_prediction(&prediction, model.num_classes(), rule)
}

/// Frame labels of a grid: the class of the segment holding each timestamp.
fn grid_labels(sample: &Sample, timestamps: &[usize], num_classes: usize) -> Result<Vec<Vec<bool>>> {
    if sample.boundaries.is_empty() {
        return Err(invalid!("sample {} has no boundaries", sample.features.id));
    }
    timestamps
        .iter()
        .map(|&t| {
            let seg = sample
                .boundaries
                .iter()
                .find(|s| s.start <= t && t < s.end)
                .ok_or_else(|| invalid!("frame {t} of {} lies outside every segment", sample.features.id))?;
            let mut row = vec![false; num_classes];
            *row.get_mut(seg.class).ok_or_else(|| invalid!("segment class {} out of range", seg.class))? = true;
            Ok(row)
        })
        .collect()
}

/// Pooled frame mAP of `grids` against the samples' boundaries.
pub fn evaluate_localization(grids: &[LocalizationGrid], samples: &[Sample]) -> Result<f64> {
    if grids.len() != samples.len() || grids.is_empty() {
        return Err(invalid!("{} grids for {} samples", grids.len(), samples.len()));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (g, s) in grids.iter().zip(samples) {
        labels.extend(grid_labels(s, &g.timestamps, g.scores.cols())?);
        scores.extend(g.scores.row_iter().map(<[f64]>::to_vec));
    }
    frame_map(&scores, &labels)
}

/// Random baseline: the grid rows of all videos pooled and permuted.
pub fn shuffled_grids<R: Rng + ?Sized>(grids: &[LocalizationGrid], rng: &mut R) -> Vec<LocalizationGrid> {
    let mut rows: Vec<Vec<f64>> = grids.iter().flat_map(|g| g.scores.row_iter().map(<[f64]>::to_vec)).collect();
    rows.shuffle(rng);
    let mut rows = rows.into_iter();
    grids
        .iter()
        .map(|g| {
            let mine: Vec<Vec<f64>> = rows.by_ref().take(g.scores.rows()).collect();
            LocalizationGrid {
                scores: Matrix::from_rows(&mine).expect("rows keep their width"),
                timestamps: g.timestamps.clone(),
            }
        })
        .collect()
}
