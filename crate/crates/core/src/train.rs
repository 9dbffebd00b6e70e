//! Teacher-forced cross-entropy training with Adam, length-bucketed padded
//! mini-batches, gradient clipping and early stopping on validation loss.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::metrics::bleu;
use crate::numkit::{cross_entropy, cross_entropy_grad, sqrt, Matrix, ParamSet};
use crate::translate::{Feed, ModelDims, Seq2SeqModel, Variant};
use crate::vocab::TokenId;

/// Whether the teacher-forcing coin is thrown once per sequence or once per
/// decoder step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ForcingGranularity {
    #[default]
    PerSequence,
    PerStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub teacher_forcing_prob: f64,
    pub patience: usize,
    pub seed: u64,
    pub desk_scale: bool,
    pub forcing: ForcingGranularity,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    /// Stacked layers of the `LSTM-Mean` and `LSTM-SS` baselines.
    pub baseline_depth: usize,
    /// Decoding cap for validation; defaults to twice the longest training
    /// target plus EOS.
    pub max_decode_len: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 512,
            embedding_dim: 512,
            batch_size: 32,
            epochs: 10,
            learning_rate: 1e-3,
            teacher_forcing_prob: 0.5,
            patience: 3,
            seed: 0,
            desk_scale: false,
            forcing: ForcingGranularity::PerSequence,
            clip_norm: 5.0,
            baseline_depth: 2,
            max_decode_len: None,
        }
    }
}

impl TrainingConfig {
    /// Small dimensions for fast runs: hidden 64, embedding 32, batch 8,
    /// 20 epochs.
    pub fn desk() -> Self {
        Self::default().with_desk_scale()
    }

    pub fn with_desk_scale(mut self) -> Self {
        self.desk_scale = true;
        self.hidden_dim = 64;
        self.embedding_dim = 32;
        self.batch_size = 8;
        self.epochs = 20;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_dim", self.hidden_dim),
            ("embedding_dim", self.embedding_dim),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("patience", self.patience),
            ("baseline_depth", self.baseline_depth),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(invalid!("{name} must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid!("learning_rate must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing_prob) {
            return Err(invalid!("teacher_forcing_prob must lie in [0, 1]"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(invalid!("clip_norm must be positive"));
        }
        if self.max_decode_len == Some(0) {
            return Err(invalid!("max_decode_len must be at least 1"));
        }
        Ok(())
    }

    /// Model shape for `variant` under this configuration.
    pub fn model_dims(&self, variant: Variant, input_dim: usize, output_dim: usize) -> ModelDims {
        let depth = match variant {
            Variant::LstmMean | Variant::LstmSs => self.baseline_depth,
            Variant::LstmEd | Variant::GruAa => 1,
        };
        ModelDims {
            input_dim,
            hidden_dim: self.hidden_dim,
            embedding_dim: self.embedding_dim,
            output_dim,
            depth,
        }
    }
}

/// Randomly initialized model drawn from a generator seeded with `seed`.
pub fn init_model(variant: Variant, dims: ModelDims, seed: u64) -> Result<Seq2SeqModel> {
    Seq2SeqModel::new(variant, dims, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// One training pair.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: &'a Matrix,
    /// Class ids, optionally followed by `PAD`.
    pub target: &'a [TokenId],
}

/// `2 · (longest target + 1)`.
pub fn default_max_decode_len(examples: &[Example<'_>]) -> usize {
    2 * (examples.iter().map(|e| e.target.len()).max().unwrap_or(0) + 1)
}

/// Decoder targets `y_1 … y_p, EOS` with trailing `PAD` masked off.
fn decoder_targets(target: &[TokenId], output_dim: usize) -> Result<Vec<TokenId>> {
    let c = output_dim - 3;
    let pad = c + 2;
    let p = target.iter().position(|&t| t == pad).unwrap_or(target.len());
    if target[p..].iter().any(|&t| t != pad) {
        return Err(invalid!("PAD may only appear at the end of a target"));
    }
    if let Some(t) = target[..p].iter().find(|&&t| t >= c) {
        return Err(invalid!("target token {t} is not an action class (C = {c})"));
    }
    let mut out = Vec::with_capacity(p + 1);
    out.extend_from_slice(&target[..p]);
    out.push(c + 1);
    Ok(out)
}

/// Summed cross-entropy of one sequence; gradients are added into `grads`
/// scaled by `scale`.
pub fn accumulate_sequence_loss(
    model: &Seq2SeqModel,
    features: &Matrix,
    target: &[TokenId],
    forcing: &[bool],
    grads: &mut Seq2SeqModel,
    scale: f64,
) -> Result<f64> {
    let targets = decoder_targets(target, model.dims().output_dim)?;
    let trace = model.forward(features, Feed::Targets { targets: &targets, forcing })?;
    let mut loss = 0.0;
    let mut d_scores = Vec::with_capacity(targets.len());
    for (q, &y) in targets.iter().enumerate() {
        let (l, mut g) = cross_entropy_grad(trace.step_scores(q), y);
        loss += l;
        g.iter_mut().for_each(|x| *x *= scale);
        d_scores.push(g);
    }
    model.backward(&trace, &d_scores, grads)?;
    Ok(loss)
}

/// Loss and parameter gradients of one sequence. The decoder runs `p + 1`
/// steps (targets then `EOS`); `forcing[q]` selects the ground-truth
/// previous token at step `q`. `PAD` positions contribute nothing.
pub fn sequence_loss(
    model: &Seq2SeqModel,
    features: &Matrix,
    target: &[TokenId],
    forcing: &[bool],
) -> Result<(f64, Seq2SeqModel)> {
    let mut grads = model.zeros_like();
    let loss = accumulate_sequence_loss(model, features, target, forcing, &mut grads, 1.0)?;
    Ok((loss, grads))
}

/// Fully teacher-forced loss, forward only.
pub fn forced_loss(model: &Seq2SeqModel, features: &Matrix, target: &[TokenId]) -> Result<f64> {
    let targets = decoder_targets(target, model.dims().output_dim)?;
    let forcing = vec![true; targets.len()];
    let trace = model.forward(features, Feed::Targets { targets: &targets, forcing: &forcing })?;
    let mut loss = 0.0;
    for (q, &y) in targets.iter().enumerate() {
        loss += cross_entropy(trace.step_scores(q), y)?;
    }
    Ok(loss)
}

pub fn mean_forced_loss(model: &Seq2SeqModel, examples: &[Example<'_>]) -> Result<f64> {
    if examples.is_empty() {
        return Err(invalid!("no examples to evaluate"));
    }
    let mut sum = 0.0;
    for e in examples {
        sum += forced_loss(model, e.features, e.target)?;
    }
    Ok(sum / examples.len() as f64)
}

/// Greedy predictions (EOS stripped) for every example.
pub fn predict_all(model: &Seq2SeqModel, examples: &[Example<'_>], max_decode_len: usize) -> Result<Vec<Vec<TokenId>>> {
    examples
        .iter()
        .map(|e| Ok(model.predict_frames(e.features, max_decode_len)?.tokens))
        .collect()
}

/// Adam with bias-corrected moments (`β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`).
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(learning_rate: f64, param_count: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn step(&mut self, params: &mut dyn ParamSet, grads: &dyn ParamSet) -> Result<()> {
        let g = grads.flatten();
        if g.len() != self.m.len() || params.param_count() != g.len() {
            return Err(invalid!("optimizer state, parameters and gradients differ in size"));
        }
        self.t = self.t.saturating_add(1);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        let c1 = 1.0 - libm::pow(b1, f64::from(self.t));
        let c2 = 1.0 - libm::pow(b2, f64::from(self.t));
        for i in 0..g.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
        }
        let mut i = 0;
        let (m, v) = (&self.m, &self.v);
        params.for_each_mut(&mut |_, p| {
            for x in p.as_mut_slice() {
                *x -= lr * (m[i] / c1) / (sqrt(v[i] / c2) + eps);
                i += 1;
            }
        });
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut dyn ParamSet, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    grads.for_each(&mut |_, m| sq += m.as_slice().iter().map(|x| x * x).sum::<f64>());
    let norm = sqrt(sq);
    if norm > max_norm {
        let s = max_norm / norm;
        grads.for_each_mut(&mut |_, m| m.as_mut_slice().iter_mut().for_each(|x| *x *= s));
    }
    norm
}

/// Mini-batches of example indices: shuffled, stably sorted by target
/// length, cut into chunks and the chunk order shuffled.
pub fn make_batches<R: Rng + ?Sized>(lengths: &[usize], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| lengths[i]);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

/// Right-pads every target of a batch with `pad` to the longest length.
pub fn pad_batch(targets: &[&[TokenId]], pad: TokenId) -> Vec<Vec<TokenId>> {
    let longest = targets.iter().map(|t| t.len()).max().unwrap_or(0);
    targets
        .iter()
        .map(|t| {
            let mut v = t.to_vec();
            v.resize(longest, pad);
            v
        })
        .collect()
}

/// Teacher-forcing draws for a decoder of `steps` steps.
pub fn draw_forcing<R: Rng + ?Sized>(steps: usize, prob: f64, granularity: ForcingGranularity, rng: &mut R) -> Vec<bool> {
    match granularity {
        ForcingGranularity::PerSequence => vec![rng.random::<f64>() < prob; steps],
        ForcingGranularity::PerStep => (0..steps).map(|_| rng.random::<f64>() < prob).collect(),
    }
}

/// One row of the loss log. Epoch 0 evaluates the initial parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_bleu1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<P> {
    /// Parameters at the best validation loss.
    pub model: P,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Training-set hooks for [`fit`].
pub(crate) trait Objective<P> {
    /// Number of training items.
    fn len(&self) -> usize;
    /// Target length of item `i` (used for bucketing and forcing draws).
    fn target_len(&self, i: usize) -> usize;
    /// Summed loss of a batch; gradients of the batch-mean loss are added
    /// into `grads`. `forcing[k]` holds the draws for `batch[k]`.
    fn accumulate(&self, params: &P, batch: &[usize], forcing: &[Vec<bool>], grads: &mut P) -> Result<f64>;
    /// Fully teacher-forced training loss of item `i`.
    fn forced(&self, params: &P, i: usize) -> Result<f64>;
    /// `(validation loss, validation BLEU-1)`.
    fn validate(&self, params: &P) -> Result<(f64, f64)>;
}

pub(crate) fn fit<P, O>(mut params: P, objective: &O, config: &TrainingConfig, stream: u64) -> Result<TrainOutcome<P>>
where
    P: ParamSet + Clone,
    O: Objective<P>,
{
    config.validate()?;
    let n = objective.len();
    if n == 0 {
        return Err(invalid!("the training set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let lengths: Vec<usize> = (0..n).map(|i| objective.target_len(i)).collect();

    let mut initial = 0.0;
    for i in 0..n {
        initial += objective.forced(&params, i)?;
    }
    let (val_loss, val_bleu1) = objective.validate(&params)?;
    let mut log = vec![EpochLog { epoch: 0, train_loss: initial / n as f64, val_loss, val_bleu1 }];
    let mut best = (val_loss, 0usize, params.clone());

    let mut adam = Adam::new(config.learning_rate, params.param_count());
    let mut grads = params.zeros_like();
    for epoch in 1..=config.epochs {
        let mut total = 0.0;
        for batch in make_batches(&lengths, config.batch_size, &mut rng) {
            grads.zero();
            let forcing: Vec<Vec<bool>> = batch
                .iter()
                .map(|&i| draw_forcing(lengths[i] + 1, config.teacher_forcing_prob, config.forcing, &mut rng))
                .collect();
            total += objective.accumulate(&params, &batch, &forcing, &mut grads)?;
            clip_global_norm(&mut grads, config.clip_norm);
            adam.step(&mut params, &grads)?;
        }
        if !params.all_finite() {
            return Err(crate::Error::InvalidState(alloc::format!("parameters diverged in epoch {epoch}")));
        }
        let (val_loss, val_bleu1) = objective.validate(&params)?;
        log.push(EpochLog { epoch, train_loss: total / n as f64, val_loss, val_bleu1 });
        if val_loss < best.0 {
            best = (val_loss, epoch, params.clone());
        } else if epoch - best.1 >= config.patience {
            break;
        }
    }
    Ok(TrainOutcome { model: best.2, log, best_epoch: best.1 })
}

struct Translation<'a, 'b> {
    train: &'a [Example<'b>],
    val: &'a [Example<'b>],
    pad: TokenId,
    max_decode_len: usize,
}

impl Objective<Seq2SeqModel> for Translation<'_, '_> {
    fn len(&self) -> usize {
        self.train.len()
    }

    fn target_len(&self, i: usize) -> usize {
        self.train[i].target.len()
    }

    fn accumulate(&self, model: &Seq2SeqModel, batch: &[usize], forcing: &[Vec<bool>], grads: &mut Seq2SeqModel) -> Result<f64> {
        let members: Vec<&[TokenId]> = batch.iter().map(|&i| self.train[i].target).collect();
        let padded = pad_batch(&members, self.pad);
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for ((&i, target), draws) in batch.iter().zip(&padded).zip(forcing) {
            // Masked steps never run; the draws only need to cover the
            // padded length.
            let mut draws = draws.clone();
            draws.resize(draws.len().max(target.len() + 1), false);
            total += accumulate_sequence_loss(model, self.train[i].features, target, &draws, grads, scale)?;
        }
        Ok(total)
    }

    fn forced(&self, model: &Seq2SeqModel, i: usize) -> Result<f64> {
        forced_loss(model, self.train[i].features, self.train[i].target)
    }

    fn validate(&self, model: &Seq2SeqModel) -> Result<(f64, f64)> {
        let loss = mean_forced_loss(model, self.val)?;
        let predicted = predict_all(model, self.val, self.max_decode_len)?;
        let references: Vec<Vec<TokenId>> = self.val.iter().map(|e| e.target.to_vec()).collect();
        Ok((loss, bleu(&predicted, &references, 1)?.value))
    }
}

/// Trains `model` on `train` with early stopping on `val`; returns the
/// best-validation parameters and the loss log.
pub fn train(model: Seq2SeqModel, train: &[Example<'_>], val: &[Example<'_>], config: &TrainingConfig) -> Result<TrainOutcome<Seq2SeqModel>> {
    if train.is_empty() || val.is_empty() {
        return Err(invalid!("training needs non-empty training and validation sets"));
    }
    let pad = model.num_classes() + 2;
    let max_decode_len = config.max_decode_len.unwrap_or_else(|| default_max_decode_len(train));
    let objective = Translation { train, val, pad, max_decode_len };
    fit(model, &objective, config, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{grad_check, ln};
    use proptest::prelude::{prop_assert, proptest};

    fn dims(variant: Variant) -> ModelDims {
        ModelDims {
            input_dim: 3,
            hidden_dim: 4,
            embedding_dim: 3,
            output_dim: 6,
            depth: if variant == Variant::GruAa { 1 } else { 2 },
        }
    }

    fn frames(t: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::uniform(t, 3, 1.0, &mut rng)
    }

    #[test]
    fn uniform_scores_give_log_uniform_loss() {
        for variant in Variant::ALL {
            let model = Seq2SeqModel::zeros(variant, dims(variant)).unwrap();
            let target = [0, 2, 1, 1];
            let (loss, _) = sequence_loss(&model, &frames(5, 1), &target, &[true; 5]).unwrap();
            assert!((loss - 5.0 * ln(6.0)).abs() < 1e-12);
            let (empty, _) = sequence_loss(&model, &frames(5, 1), &[], &[true]).unwrap();
            assert!((empty - ln(6.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn pad_positions_are_masked() {
        let model = init_model(Variant::GruAa, dims(Variant::GruAa), 3).unwrap();
        let x = frames(4, 2);
        let (a, ga) = sequence_loss(&model, &x, &[1, 0], &[true; 3]).unwrap();
        let (b, gb) = sequence_loss(&model, &x, &[1, 0, 5, 5], &[true; 5]).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
        assert!(sequence_loss(&model, &x, &[1, 5, 0], &[true; 4]).is_err());
        assert!(sequence_loss(&model, &x, &[3], &[true; 2]).is_err());
    }

    #[test]
    fn full_loss_gradients_match_finite_differences() {
        for variant in Variant::ALL {
            for (seed, forcing) in [(1u64, [true; 4]), (2, [true, false, true, false])] {
                let model = init_model(variant, dims(variant), seed).unwrap();
                let x = frames(6, seed + 10);
                let target = [2, 0, 1];
                let mut probe = model.clone();
                let report = grad_check(
                    |theta| {
                        probe.load_flat(theta)?;
                        let (l, g) = sequence_loss(&probe, &x, &target, &forcing)?;
                        Ok((l, g.flatten()))
                    },
                    &model.flatten(),
                    1e-5,
                )
                .unwrap();
                assert!(report.max_rel_error < 1e-4, "{variant}: {report:?}");
            }
        }
    }

    fn toy_set(n: usize, seed: u64) -> (Vec<Matrix>, Vec<Vec<TokenId>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let p = rng.random_range(1..=3);
            let y: Vec<TokenId> = (0..p).map(|_| rng.random_range(0..3)).collect();
            let mut rows = Vec::new();
            for &c in &y {
                for _ in 0..2 {
                    let mut r = vec![0.0; 3];
                    r[c] = 1.0;
                    rows.push(r);
                }
            }
            xs.push(Matrix::from_rows(&rows).unwrap());
            ys.push(y);
        }
        (xs, ys)
    }

    fn examples<'a>(xs: &'a [Matrix], ys: &'a [Vec<TokenId>]) -> Vec<Example<'a>> {
        xs.iter().zip(ys).map(|(features, t)| Example { features, target: t }).collect()
    }

    fn small_config() -> TrainingConfig {
        TrainingConfig {
            hidden_dim: 4,
            embedding_dim: 3,
            batch_size: 4,
            epochs: 2,
            seed: 9,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (xs, ys) = toy_set(12, 1);
        let ex = examples(&xs, &ys);
        let model = init_model(Variant::GruAa, dims(Variant::GruAa), 4).unwrap();
        let config = TrainingConfig { learning_rate: 0.0, epochs: 1, ..small_config() };
        let out = train(model.clone(), &ex[..8], &ex[8..], &config).unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.log.len(), 2);
    }

    #[test]
    fn same_seed_same_log() {
        let (xs, ys) = toy_set(16, 2);
        let ex = examples(&xs, &ys);
        let run = || {
            let model = init_model(Variant::LstmEd, dims(Variant::LstmEd), 5).unwrap();
            train(model, &ex[..12], &ex[12..], &small_config()).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.model, b.model);
        for (x, y) in a.log.iter().zip(&b.log) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
            assert_eq!(x.val_loss.to_bits(), y.val_loss.to_bits());
        }
    }

    #[test]
    fn training_reduces_validation_loss() {
        let (xs, ys) = toy_set(80, 3);
        let ex = examples(&xs, &ys);
        let d = ModelDims { hidden_dim: 12, embedding_dim: 6, ..dims(Variant::GruAa) };
        let model = init_model(Variant::GruAa, d, 6).unwrap();
        let config = TrainingConfig { epochs: 15, learning_rate: 1e-2, ..small_config() };
        let out = train(model, &ex[..64], &ex[64..], &config).unwrap();
        let first = out.log[0].val_loss;
        let best = out.log[out.best_epoch].val_loss;
        assert!(best < 0.5 * first, "{:?}", out.log);
    }

    #[test]
    fn config_errors() {
        let model = init_model(Variant::GruAa, dims(Variant::GruAa), 1).unwrap();
        assert!(train(model.clone(), &[], &[], &small_config()).is_err());
        let (xs, ys) = toy_set(4, 1);
        let ex = examples(&xs, &ys);
        let bad = TrainingConfig { teacher_forcing_prob: 1.5, ..small_config() };
        assert!(train(model.clone(), &ex[..2], &ex[2..], &bad).is_err());
        let bad = TrainingConfig { batch_size: 0, ..small_config() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn desk_scale_dimensions() {
        let c = TrainingConfig::desk();
        assert_eq!((c.hidden_dim, c.embedding_dim, c.batch_size, c.epochs), (64, 32, 8, 20));
        let p = TrainingConfig::default();
        assert_eq!((p.hidden_dim, p.embedding_dim, p.batch_size, p.epochs), (512, 512, 32, 10));
        assert_eq!(p.learning_rate, 1e-3);
        assert_eq!(p.teacher_forcing_prob, 0.5);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = Seq2SeqModel::zeros(Variant::GruAa, dims(Variant::GruAa)).unwrap();
        g.for_each_mut(&mut |_, m| m.fill(1.0));
        let before = clip_global_norm(&mut g, 5.0);
        assert!(before > 5.0);
        let after = sqrt(g.flatten().iter().map(|x| x * x).sum());
        assert!((after - 5.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn batches_partition_and_bucket(lengths in proptest::collection::vec(0usize..6, 1..40), size in 1usize..7, seed in 0u64..50) {
            let batches = make_batches(&lengths, size, &mut ChaCha8Rng::seed_from_u64(seed));
            let mut seen: Vec<usize> = batches.concat();
            seen.sort_unstable();
            prop_assert!(seen == (0..lengths.len()).collect::<Vec<_>>());
            prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= size));
            // Length ranges of different batches never interleave.
            let mut spans: Vec<(usize, usize)> = batches
                .iter()
                .map(|b| (b.iter().map(|&i| lengths[i]).min().unwrap(), b.iter().map(|&i| lengths[i]).max().unwrap()))
                .collect();
            spans.sort_unstable();
            prop_assert!(spans.windows(2).all(|w| w[0].1 <= w[1].0));
        }

        #[test]
        fn loss_is_finite(seed in 0u64..30, p in 0usize..4) {
            let model = init_model(Variant::GruAa, dims(Variant::GruAa), seed).unwrap();
            let target: Vec<TokenId> = (0..p).map(|i| i % 3).collect();
            let (l, g) = sequence_loss(&model, &frames(4, seed), &target, &vec![false; p + 1]).unwrap();
            prop_assert!(l.is_finite() && l > 0.0 && g.all_finite());
        }
    }
}
