//! Finite-difference self-test over every differentiable piece: the two
//! cells, the full loss of each translation variant and the joint caption
//! pipeline. Instances are small (`T ≤ 6`, `p ≤ 3`, dims ≤ 8) and seeded.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::caption::{joint_loss, CaptionPipeline, ScoreInput};
use crate::cells::{gru_step, gru_step_backward, lstm_step, lstm_step_backward, GruCellParams, LstmCellParams};
use crate::error::Result;
use crate::numkit::{dot, grad_check, GradCheckReport, Matrix, ParamSet};
use crate::train::{init_model, sequence_loss};
use crate::translate::{ModelDims, Variant};

pub const GRAD_CHECK_EPS: f64 = 1e-5;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub report: GradCheckReport,
}

impl GradCheckEntry {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRAD_CHECK_TOLERANCE
    }
}

const STEPS: usize = 5;

fn probe_vectors(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| Matrix::uniform(1, d, 1.0, rng).into_vec()).collect()
}

/// `L = Σ_t w_t · h_t + v · c_T` over a chain of LSTM steps.
fn lstm_cell_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dx, dh) = (3, 4);
    let params = LstmCellParams::random(dx, dh, &mut rng);
    let xs = probe_vectors(&mut rng, STEPS, dx);
    let ws = probe_vectors(&mut rng, STEPS, dh);
    let v = probe_vectors(&mut rng, 1, dh).remove(0);
    let mut probe = params.clone();
    grad_check(
        |theta| {
            probe.load_flat(theta)?;
            let (mut h, mut c) = (vec![0.0; dh], vec![0.0; dh]);
            let mut steps = Vec::with_capacity(STEPS);
            let mut loss = 0.0;
            for (x, w) in xs.iter().zip(&ws) {
                let s = lstm_step(x, &h, &c, &probe)?;
                loss += dot(w, &s.h);
                h.clone_from(&s.h);
                c.clone_from(&s.c);
                steps.push(s);
            }
            loss += dot(&v, &c);
            let mut grads = probe.zeros_like();
            let (mut carry_h, mut carry_c) = (vec![0.0; dh], v.clone());
            for (s, w) in steps.iter().zip(&ws).rev() {
                let up: Vec<f64> = w.iter().zip(&carry_h).map(|(a, b)| a + b).collect();
                let back = lstm_step_backward(s, &probe, &up, &carry_c, &mut grads)?;
                carry_h = back.dh_prev;
                carry_c = back.dc_prev;
            }
            Ok((loss, grads.flatten()))
        },
        &params.flatten(),
        GRAD_CHECK_EPS,
    )
}

/// `L = Σ_t w_t · h_t` over a chain of GRU steps.
fn gru_cell_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dx, dh) = (3, 4);
    let params = GruCellParams::random(dx, dh, &mut rng);
    let xs = probe_vectors(&mut rng, STEPS, dx);
    let ws = probe_vectors(&mut rng, STEPS, dh);
    let mut probe = params.clone();
    grad_check(
        |theta| {
            probe.load_flat(theta)?;
            let mut h = vec![0.0; dh];
            let mut steps = Vec::with_capacity(STEPS);
            let mut loss = 0.0;
            for (x, w) in xs.iter().zip(&ws) {
                let s = gru_step(x, &h, &probe)?;
                loss += dot(w, &s.h);
                h.clone_from(&s.h);
                steps.push(s);
            }
            let mut grads = probe.zeros_like();
            let mut carry = vec![0.0; dh];
            for (s, w) in steps.iter().zip(&ws).rev() {
                let up: Vec<f64> = w.iter().zip(&carry).map(|(a, b)| a + b).collect();
                carry = gru_step_backward(s, &probe, &up, &mut grads)?.dh_prev;
            }
            Ok((loss, grads.flatten()))
        },
        &params.flatten(),
        GRAD_CHECK_EPS,
    )
}

/// Full teacher-forced loss (mixed forcing draws) of one variant with
/// `T = 6`, `p = 3`.
fn model_check(variant: Variant, seed: u64) -> Result<GradCheckReport> {
    let dims = ModelDims {
        input_dim: 4,
        hidden_dim: 6,
        embedding_dim: 5,
        output_dim: 7,
        depth: if variant == Variant::GruAa { 1 } else { 2 },
    };
    let model = init_model(variant, dims, seed)?;
    let x = Matrix::uniform(6, 4, 1.0, &mut ChaCha8Rng::seed_from_u64(seed + 1));
    let target = [2, 0, 3];
    let forcing = [true, true, false, true];
    let mut probe = model.clone();
    grad_check(
        |theta| {
            probe.load_flat(theta)?;
            let (l, g) = sequence_loss(&probe, &x, &target, &forcing)?;
            Ok((l, g.flatten()))
        },
        &model.flatten(),
        GRAD_CHECK_EPS,
    )
}

/// Caption loss through both stages with `T = 5`, at most 3 stage-1 steps
/// and a 4-word caption.
fn pipeline_check(seed: u64, score_input: ScoreInput) -> Result<GradCheckReport> {
    let d1 = ModelDims { input_dim: 3, hidden_dim: 5, embedding_dim: 4, output_dim: 6, depth: 1 };
    let stage1 = init_model(Variant::GruAa, d1, seed)?;
    let d2 = CaptionPipeline::stage2_dims(&stage1, 6, 4, 5);
    let stage2 = init_model(Variant::GruAa, d2, seed + 1)?;
    let pipeline = CaptionPipeline::new(stage1, stage2, score_input)?;
    let x = Matrix::uniform(5, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(seed + 2));
    let caption = [0, 1, 4, 2];
    let forcing = [true, true, false, true, true];
    let mut probe = pipeline.clone();
    grad_check(
        |theta| {
            probe.load_flat(theta)?;
            let (l, g) = joint_loss(&probe, &x, &caption, &forcing, 3)?;
            Ok((l, g.flatten()))
        },
        &pipeline.flatten(),
        GRAD_CHECK_EPS,
    )
}

/// Runs every check with instances derived from `seed`.
pub fn run_grad_checks(seed: u64) -> Result<Vec<GradCheckEntry>> {
    let entry = |name: &str, report| GradCheckEntry { name: String::from(name), report };
    let mut out = vec![
        entry("lstm-cell", lstm_cell_check(seed)?),
        entry("gru-cell", gru_cell_check(seed)?),
    ];
    for v in Variant::ALL {
        out.push(entry(v.as_str(), model_check(v, seed)?));
    }
    out.push(entry("caption-pipeline", pipeline_check(seed, ScoreInput::Raw)?));
    out.push(entry("caption-pipeline-softmax", pipeline_check(seed, ScoreInput::Softmax)?));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        for seed in [0, 1] {
            let entries = run_grad_checks(seed).unwrap();
            assert_eq!(entries.len(), 8);
            for e in &entries {
                assert!(e.passed(), "seed {seed}: {} {:?}", e.name, e.report);
            }
        }
    }
}
