//! Two-stage captioning: a feature→action GRU-AA model emits score vectors,
//! which a second GRU-AA model translates into words. Stage 1 is pretrained
//! on action sequences, then both stages are trained jointly on the caption
//! loss with gradients flowing through the score vectors.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::metrics::bleu;
use crate::numkit::{cross_entropy, cross_entropy_grad, softmax_unchecked, visit_child, visit_child_mut, Matrix, ParamSet};
use crate::train::{default_max_decode_len, fit, train, EpochLog, Example, Objective, TrainOutcome, TrainingConfig};
use crate::translate::{Feed, ModelDims, ScoreSequence, Seq2SeqModel, Trace, Variant};
use crate::vocab::TokenId;

/// What stage 2 reads from each stage-1 step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreInput {
    /// Pre-softmax scores.
    #[default]
    Raw,
    /// Softmax-normalized scores.
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionPipeline {
    /// Features → actions.
    pub stage1: Seq2SeqModel,
    /// Score vectors → words; input dimension equals stage 1's output.
    pub stage2: Seq2SeqModel,
    pub score_input: ScoreInput,
}

impl CaptionPipeline {
    pub fn new(stage1: Seq2SeqModel, stage2: Seq2SeqModel, score_input: ScoreInput) -> Result<Self> {
        if stage1.variant() != Variant::GruAa || stage2.variant() != Variant::GruAa {
            return Err(invalid!("both caption stages must be gru-aa models"));
        }
        if stage2.dims().input_dim != stage1.dims().output_dim {
            return Err(invalid!(
                "stage 2 reads {} inputs but stage 1 emits {} scores",
                stage2.dims().input_dim,
                stage1.dims().output_dim
            ));
        }
        Ok(Self { stage1, stage2, score_input })
    }

    /// Stage-2 shape matching `stage1` for a word vocabulary of
    /// `num_words` entries.
    pub fn stage2_dims(stage1: &Seq2SeqModel, hidden_dim: usize, embedding_dim: usize, num_words: usize) -> ModelDims {
        ModelDims {
            input_dim: stage1.dims().output_dim,
            hidden_dim,
            embedding_dim,
            output_dim: num_words + 3,
            depth: 1,
        }
    }

    fn stage2_input(&self, scores: &Matrix) -> Matrix {
        match self.score_input {
            ScoreInput::Raw => scores.clone(),
            ScoreInput::Softmax => {
                let rows: Vec<f64> = scores.row_iter().flat_map(softmax_unchecked).collect();
                Matrix::from_vec(scores.rows(), scores.cols(), rows).expect("shape preserved")
            }
        }
    }

    /// Maps a gradient on stage-2 inputs back to stage-1 scores.
    fn input_grad_to_scores(&self, scores: &Matrix, d_input: &Matrix) -> Vec<Vec<f64>> {
        match self.score_input {
            ScoreInput::Raw => d_input.row_iter().map(<[f64]>::to_vec).collect(),
            ScoreInput::Softmax => scores
                .row_iter()
                .zip(d_input.row_iter())
                .map(|(s, dp)| {
                    let p = softmax_unchecked(s);
                    let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
                    p.iter().zip(dp).map(|(pi, di)| pi * (di - inner)).collect()
                })
                .collect(),
        }
    }
}

impl ParamSet for CaptionPipeline {
    fn for_each(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        visit_child("stage1", &self.stage1, f);
        visit_child("stage2", &self.stage2, f);
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        visit_child_mut("stage1", &mut self.stage1, f);
        visit_child_mut("stage2", &mut self.stage2, f);
    }
}

/// Greedy stage-1 decoding that keeps the per-step score vectors (the `EOS`
/// step included). Argmax only decides termination and the next input.
pub fn stage1_scores(pipeline: &CaptionPipeline, features: &Matrix, max_decode_len: usize) -> Result<ScoreSequence> {
    Ok(pipeline.stage1.predict_frames(features, max_decode_len)?.step_scores)
}

/// Word ids generated for `features`.
pub fn caption(pipeline: &CaptionPipeline, features: &Matrix, max_actions: usize, max_words: usize) -> Result<Vec<TokenId>> {
    let scores = stage1_scores(pipeline, features, max_actions)?;
    let input = pipeline.stage2_input(&scores.steps);
    Ok(pipeline.stage2.predict_frames(&input, max_words)?.tokens)
}

/// One captioning pair with its action sequence.
#[derive(Debug, Clone, Copy)]
pub struct CaptionExample<'a> {
    pub features: &'a Matrix,
    pub actions: &'a [TokenId],
    pub caption: &'a [TokenId],
}

fn caption_targets(caption: &[TokenId], output_dim: usize) -> Result<Vec<TokenId>> {
    let w = output_dim - 3;
    if let Some(t) = caption.iter().find(|&&t| t >= w) {
        return Err(invalid!("word id {t} outside a vocabulary of {w}"));
    }
    let mut out = caption.to_vec();
    out.push(w + 1);
    Ok(out)
}

struct JointForward {
    trace1: Trace,
    scores: Matrix,
    trace2: Trace,
    targets: Vec<TokenId>,
}

fn joint_forward(
    pipeline: &CaptionPipeline,
    features: &Matrix,
    caption: &[TokenId],
    forcing: &[bool],
    max_actions: usize,
) -> Result<JointForward> {
    let targets = caption_targets(caption, pipeline.stage2.dims().output_dim)?;
    let trace1 = pipeline.stage1.forward(features, Feed::Greedy { max_len: max_actions })?;
    let scores = trace1.scores()?.steps;
    let input = pipeline.stage2_input(&scores);
    let trace2 = pipeline.stage2.forward(&input, Feed::Targets { targets: &targets, forcing })?;
    Ok(JointForward { trace1, scores, trace2, targets })
}

/// Caption cross-entropy of the whole pipeline; gradients of both stages,
/// scaled by `scale`, are added into `grads`.
pub fn accumulate_joint_loss(
    pipeline: &CaptionPipeline,
    features: &Matrix,
    caption: &[TokenId],
    forcing: &[bool],
    max_actions: usize,
    grads: &mut CaptionPipeline,
    scale: f64,
) -> Result<f64> {
    let fw = joint_forward(pipeline, features, caption, forcing, max_actions)?;
    let mut loss = 0.0;
    let mut d_words = Vec::with_capacity(fw.targets.len());
    for (q, &y) in fw.targets.iter().enumerate() {
        let (l, mut g) = cross_entropy_grad(fw.trace2.step_scores(q), y);
        loss += l;
        g.iter_mut().for_each(|x| *x *= scale);
        d_words.push(g);
    }
    let d_input = pipeline.stage2.backward(&fw.trace2, &d_words, &mut grads.stage2)?;
    let d_scores = pipeline.input_grad_to_scores(&fw.scores, &d_input);
    pipeline.stage1.backward(&fw.trace1, &d_scores, &mut grads.stage1)?;
    Ok(loss)
}

/// Loss and gradients of one caption through both stages.
pub fn joint_loss(
    pipeline: &CaptionPipeline,
    features: &Matrix,
    caption: &[TokenId],
    forcing: &[bool],
    max_actions: usize,
) -> Result<(f64, CaptionPipeline)> {
    let mut grads = pipeline.zeros_like();
    let loss = accumulate_joint_loss(pipeline, features, caption, forcing, max_actions, &mut grads, 1.0)?;
    Ok((loss, grads))
}

fn forced_joint_loss(pipeline: &CaptionPipeline, features: &Matrix, caption: &[TokenId], max_actions: usize) -> Result<f64> {
    let forcing = vec![true; caption.len() + 1];
    let fw = joint_forward(pipeline, features, caption, &forcing, max_actions)?;
    let mut loss = 0.0;
    for (q, &y) in fw.targets.iter().enumerate() {
        loss += cross_entropy(fw.trace2.step_scores(q), y)?;
    }
    Ok(loss)
}

/// Phase budgets for [`train_pipeline`].
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionTrainingConfig {
    /// Stage-1 pretraining on action sequences.
    pub stage1: TrainingConfig,
    /// Joint training on captions.
    pub joint: TrainingConfig,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub pipeline: CaptionPipeline,
    pub stage1_log: Vec<EpochLog>,
    pub joint_log: Vec<EpochLog>,
    pub max_actions: usize,
    pub max_words: usize,
}

struct Joint<'a, 'b> {
    train: &'a [CaptionExample<'b>],
    val: &'a [CaptionExample<'b>],
    max_actions: usize,
    max_words: usize,
}

impl Objective<CaptionPipeline> for Joint<'_, '_> {
    fn len(&self) -> usize {
        self.train.len()
    }

    fn target_len(&self, i: usize) -> usize {
        self.train[i].caption.len()
    }

    fn accumulate(&self, p: &CaptionPipeline, batch: &[usize], forcing: &[Vec<bool>], grads: &mut CaptionPipeline) -> Result<f64> {
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for (&i, draws) in batch.iter().zip(forcing) {
            let e = &self.train[i];
            total += accumulate_joint_loss(p, e.features, e.caption, draws, self.max_actions, grads, scale)?;
        }
        Ok(total)
    }

    fn forced(&self, p: &CaptionPipeline, i: usize) -> Result<f64> {
        forced_joint_loss(p, self.train[i].features, self.train[i].caption, self.max_actions)
    }

    fn validate(&self, p: &CaptionPipeline) -> Result<(f64, f64)> {
        let mut loss = 0.0;
        let mut predicted = Vec::with_capacity(self.val.len());
        for e in self.val {
            loss += forced_joint_loss(p, e.features, e.caption, self.max_actions)?;
            predicted.push(caption(p, e.features, self.max_actions, self.max_words)?);
        }
        let refs: Vec<Vec<TokenId>> = self.val.iter().map(|e| e.caption.to_vec()).collect();
        Ok((loss / self.val.len() as f64, bleu(&predicted, &refs, 1)?.value))
    }
}

fn check_captions(set: &[CaptionExample<'_>]) -> Result<()> {
    if set.is_empty() {
        return Err(invalid!("captioning needs non-empty training and validation sets"));
    }
    if let Some(k) = set.iter().position(|e| e.caption.is_empty()) {
        return Err(invalid!("example {k} has no caption"));
    }
    Ok(())
}

/// Feature→action pairs of a caption set.
pub fn action_examples<'a>(set: &[CaptionExample<'a>]) -> Vec<Example<'a>> {
    set.iter().map(|e| Example { features: e.features, target: e.actions }).collect()
}

/// Feature→caption pairs of a caption set.
pub fn word_examples<'a>(set: &[CaptionExample<'a>]) -> Vec<Example<'a>> {
    set.iter().map(|e| Example { features: e.features, target: e.caption }).collect()
}

/// Pretrains stage 1 on actions, then trains both stages on captions.
pub fn train_pipeline(
    pipeline: CaptionPipeline,
    train_set: &[CaptionExample<'_>],
    val_set: &[CaptionExample<'_>],
    config: &CaptionTrainingConfig,
) -> Result<PipelineOutcome> {
    check_captions(train_set)?;
    check_captions(val_set)?;
    let (tr_actions, va_actions) = (action_examples(train_set), action_examples(val_set));
    let max_actions = config.stage1.max_decode_len.unwrap_or_else(|| default_max_decode_len(&tr_actions));
    let stage1 = train(pipeline.stage1, &tr_actions, &va_actions, &config.stage1)?;

    let max_words = config.joint.max_decode_len.unwrap_or_else(|| {
        2 * (train_set.iter().map(|e| e.caption.len()).max().unwrap_or(0) + 1)
    });
    let pipeline = CaptionPipeline { stage1: stage1.model, ..pipeline };
    let objective = Joint { train: train_set, val: val_set, max_actions, max_words };
    let TrainOutcome { model, log, .. } = fit(pipeline, &objective, &config.joint, 2)?;
    Ok(PipelineOutcome { pipeline: model, stage1_log: stage1.log, joint_log: log, max_actions, max_words })
}

/// Direct feature→caption GRU-AA baseline trained on the captions alone.
pub fn train_direct(
    model: Seq2SeqModel,
    train_set: &[CaptionExample<'_>],
    val_set: &[CaptionExample<'_>],
    config: &TrainingConfig,
) -> Result<TrainOutcome<Seq2SeqModel>> {
    check_captions(train_set)?;
    check_captions(val_set)?;
    if model.variant() != Variant::GruAa {
        return Err(Error::Unsupported("the direct caption baseline is a gru-aa model".into()));
    }
    train(model, &word_examples(train_set), &word_examples(val_set), config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::grad_check;
    use crate::train::init_model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pipeline(seed: u64, score_input: ScoreInput) -> CaptionPipeline {
        let d1 = ModelDims { input_dim: 3, hidden_dim: 4, embedding_dim: 3, output_dim: 5, depth: 1 };
        let s1 = init_model(Variant::GruAa, d1, seed).unwrap();
        let d2 = CaptionPipeline::stage2_dims(&s1, 5, 3, 4);
        let s2 = init_model(Variant::GruAa, d2, seed + 100).unwrap();
        CaptionPipeline::new(s1, s2, score_input).unwrap()
    }

    fn frames(t: usize, seed: u64) -> Matrix {
        Matrix::uniform(t, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn stage1_scores_agree_with_greedy_decoding() {
        for seed in 0..20 {
            let p = pipeline(seed, ScoreInput::Raw);
            let x = frames(5, seed);
            let s = stage1_scores(&p, &x, 6).unwrap();
            let pred = p.stage1.predict_frames(&x, 6).unwrap();
            assert!(s.len() == pred.tokens.len() || s.len() == pred.tokens.len() + 1);
            for (q, &tok) in pred.tokens.iter().enumerate() {
                assert_eq!(crate::translate::select_token(s.steps.row(q), 2), tok);
            }
            assert_eq!(s, stage1_scores(&p, &x, 6).unwrap());
        }
    }

    #[test]
    fn constant_eos_stage2_gives_empty_caption() {
        let mut p = pipeline(1, ScoreInput::Raw);
        if let Seq2SeqModel::GruAa(m) = &mut p.stage2 {
            // Only the SOS embedding is non-zero and it drives the EOS row.
            let (sos, eos) = (m.output_dim() - 3, m.output_dim() - 2);
            m.output.fill(0.0);
            m.embedding.fill(0.0);
            m.embedding.set(sos, 0, 1.0);
            m.output.set(eos, 2 * m.hidden_dim(), 10.0);
        }
        assert!(caption(&p, &frames(4, 2), 5, 6).unwrap().is_empty());
    }

    #[test]
    fn mismatched_stages_are_rejected() {
        let p = pipeline(1, ScoreInput::Raw);
        let bad = init_model(
            Variant::GruAa,
            ModelDims { input_dim: 4, hidden_dim: 4, embedding_dim: 3, output_dim: 7, depth: 1 },
            2,
        )
        .unwrap();
        assert!(CaptionPipeline::new(p.stage1.clone(), bad, ScoreInput::Raw).is_err());
    }

    #[test]
    fn joint_gradients_match_finite_differences() {
        for (seed, input) in [(3u64, ScoreInput::Raw), (4, ScoreInput::Softmax)] {
            let p = pipeline(seed, input);
            let x = frames(5, seed);
            let caption = [0, 3, 1, 2];
            let forcing = [true, true, false, true, true];
            let mut probe = p.clone();
            let report = grad_check(
                |theta| {
                    probe.load_flat(theta)?;
                    let (l, g) = joint_loss(&probe, &x, &caption, &forcing, 3)?;
                    Ok((l, g.flatten()))
                },
                &p.flatten(),
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{input:?}: {report:?}");
        }
    }

    #[test]
    fn zero_joint_rate_keeps_stage1() {
        let mut xs = Vec::new();
        for k in 0..8 {
            xs.push(frames(4, k));
        }
        let acts: Vec<Vec<TokenId>> = (0..8).map(|k| vec![k % 2, (k + 1) % 2]).collect();
        let caps: Vec<Vec<TokenId>> = acts.iter().map(|a| a.iter().map(|&x| x + 1).collect()).collect();
        let ex: Vec<CaptionExample<'_>> = (0..8)
            .map(|k| CaptionExample { features: &xs[k], actions: &acts[k], caption: &caps[k] })
            .collect();
        let base = TrainingConfig { hidden_dim: 4, embedding_dim: 3, batch_size: 2, epochs: 1, seed: 3, ..TrainingConfig::default() };
        let config = CaptionTrainingConfig {
            stage1: base.clone(),
            joint: TrainingConfig { learning_rate: 0.0, ..base.clone() },
        };
        let p = pipeline(5, ScoreInput::Raw);
        let out = train_pipeline(p.clone(), &ex[..6], &ex[6..], &config).unwrap();
        let stage1_only = train(
            p.stage1.clone(),
            &action_examples(&ex[..6]),
            &action_examples(&ex[6..]),
            &base,
        )
        .unwrap();
        assert_eq!(out.pipeline.stage1, stage1_only.model);
        assert_eq!(out.pipeline.stage2, p.stage2);

        let empty: Vec<TokenId> = Vec::new();
        let missing = [CaptionExample { features: &xs[0], actions: &acts[0], caption: &empty }];
        assert!(train_pipeline(p, &missing, &ex[6..], &config).is_err());
    }
}
