//! Command-line commands.
//!
//! Each `cmd_*` function takes a resolved [`RunConfig`], writes its files
//! under `out` and returns what it computed, so the same code serves the
//! binary and the tests. Files read by a command come from `data` (dataset
//! splits) and `checkpoint`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use actseq_core::caption::{
    caption, train_pipeline, CaptionExample, CaptionPipeline, CaptionTrainingConfig, PipelineOutcome,
};
use actseq_core::diagnostics::{run_grad_checks, GradCheckEntry, GRAD_CHECK_TOLERANCE};
use actseq_core::localize::{evaluate_localization, localize, shuffled_grids, LocalizationGrid};
use actseq_core::metrics::{bleu, mean_accuracy, mean_rouge_l, MetricReport};
use actseq_core::synthdata::{action_vocabulary, generate_splits, word_vocabulary, Sample};
use actseq_core::train::{default_max_decode_len, init_model, predict_all, train, Example, TrainOutcome};
use actseq_core::translate::{Seq2SeqModel, Variant};
use actseq_core::vocab::{TokenId, Vocabulary};
use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, ModelCheckpoint, PipelineCheckpoint};
use crate::config::{FileConfig, Overrides, RunConfig};
use crate::dataset::{self, Dataset};
use crate::external;
use crate::report::{self, loss_log_to_csv, metrics_to_jsonl};

pub const SPLIT_FILES: [&str; 3] = ["train.txt", "val.txt", "test.txt"];
pub const MODEL_FILE: &str = "model.ckpt";
pub const PIPELINE_FILE: &str = "pipeline.ckpt";

#[derive(Debug, Parser)]
#[command(name = "actseq", version, about = "Translate video feature sequences into action sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Subcommand, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Write train/val/test splits (synthetic, or ingested with --features and --labels).
    GenData,
    /// Train a model on the train split, early-stopping on val.
    Train,
    /// Report BLEU-1, BLEU-2 and accuracy of a checkpoint on the test split.
    Eval,
    /// Train the two-stage caption pipeline (or load --checkpoint) and caption the test split.
    Caption,
    /// Dump 25-frame localization grids for the test split and report frame mAP.
    Localize,
    /// Finite-difference check of every gradient; fails if any relative error reaches 1e-4.
    GradCheck,
}

#[derive(Debug, Args, Default)]
pub struct Flags {
    /// TOML file with flat keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// lstm-mean, lstm-ss, lstm-ed or gru-aa.
    #[arg(long, global = true, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Hidden 64, embedding 32, batch 8, 20 epochs.
    #[arg(long, global = true)]
    pub desk_scale: bool,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Directory holding train.txt, val.txt and test.txt (defaults to --out).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// External features file for gen-data.
    #[arg(long, global = true)]
    pub features: Option<PathBuf>,
    /// External labels file for gen-data.
    #[arg(long, global = true)]
    pub labels: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: actseq_core::Error| e.to_string())
}

impl Flags {
    pub fn resolve(self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let flags = Overrides {
            seed: self.seed,
            variant: self.variant,
            desk_scale: self.desk_scale,
            out: self.out,
            data: self.data,
            checkpoint: self.checkpoint,
            features: self.features,
            labels: self.labels,
        };
        Ok(RunConfig::resolve(file, flags)?)
    }
}

/// Parses `args`, runs the command and returns the text to print.
pub fn run<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let config = cli.flags.resolve()?;
    match cli.command {
        Command::GenData => cmd_gen_data(&config).map(|d| {
            let counts: Vec<String> = d.iter().map(|s| s.samples.len().to_string()).collect();
            format!("wrote {} samples to {}\n", counts.join("/"), config.out.display())
        }),
        Command::Train => cmd_train(&config).map(|o| {
            let best = &o.log[o.best_epoch];
            format!(
                "best epoch {} (val loss {}, val BLEU-1 {:.2}); wrote {}\n",
                best.epoch,
                best.val_loss,
                best.val_bleu1,
                config.out.join(MODEL_FILE).display()
            )
        }),
        Command::Eval => cmd_eval(&config).map(|r| metrics_to_jsonl(&r)),
        Command::Caption => cmd_caption(&config).map(|r| metrics_to_jsonl(&r.reports)),
        Command::Localize => cmd_localize(&config).map(|r| metrics_to_jsonl(&r.reports)),
        Command::GradCheck => {
            let entries = cmd_grad_check(&config)?;
            let mut text = String::new();
            for e in &entries {
                let verdict = if e.passed() { "ok" } else { "FAIL" };
                writeln!(text, "{:<26} max rel error {:.3e}  {verdict}", e.name, e.report.max_rel_error).unwrap();
            }
            if let Some(bad) = entries.iter().find(|e| !e.passed()) {
                bail!("{text}gradient check `{}` exceeds {GRAD_CHECK_TOLERANCE:e}", bad.name);
            }
            Ok(text)
        }
    }
}

fn create_out(config: &RunConfig) -> Result<&Path> {
    std::fs::create_dir_all(&config.out).with_context(|| format!("creating {}", config.out.display()))?;
    Ok(&config.out)
}

/// Splits an ingested dataset in the configured train/val/test proportions,
/// keeping file order.
fn split_external(data: Dataset, (a, b, c): (usize, usize, usize)) -> Result<[Dataset; 3]> {
    let n = data.samples.len();
    let total = a + b + c;
    let n_train = n * a / total;
    let n_val = n * b / total;
    ensure!(
        n_train > 0 && n_val > 0 && n_train + n_val < n,
        "{n} ingested videos are too few to split {a}:{b}:{c}"
    );
    let mut rest = data.samples;
    let test = rest.split_off(n_train + n_val);
    let val = rest.split_off(n_train);
    let with = |samples| Dataset { actions: data.actions.clone(), words: None, samples };
    Ok([with(rest), with(val), with(test)])
}

pub fn cmd_gen_data(config: &RunConfig) -> Result<[Dataset; 3]> {
    let sets = match (&config.features, &config.labels) {
        (Some(f), Some(l)) => split_external(external::load(f, l)?, config.split)?,
        (None, None) => {
            let spec = &config.synthetic;
            let (a, b, c) = config.split;
            let s = generate_splits(spec, a, b, c)?;
            let actions = action_vocabulary(spec.num_classes)?;
            let words = word_vocabulary(spec.num_classes)?;
            let with = |samples| Dataset { actions: actions.clone(), words: Some(words.clone()), samples };
            [with(s.train), with(s.val), with(s.test)]
        }
        _ => bail!("--features and --labels must be given together"),
    };
    let out = create_out(config)?;
    for (set, name) in sets.iter().zip(SPLIT_FILES) {
        dataset::save(set, &out.join(name))?;
    }
    Ok(sets)
}

fn load_split(config: &RunConfig, index: usize) -> Result<Dataset> {
    let path = config.data.join(SPLIT_FILES[index]);
    let d = dataset::load(&path)?;
    ensure!(!d.samples.is_empty(), "{} holds no samples", path.display());
    Ok(d)
}

fn check_compatible(reference: &Dataset, other: &Dataset, what: &str) -> Result<()> {
    ensure!(
        reference.actions == other.actions && reference.words == other.words,
        "the {what} split has different vocabularies from the training split"
    );
    ensure!(
        reference.input_dim() == other.input_dim() && other.samples.iter().all(|s| Some(s.features.dim()) == reference.input_dim()),
        "the {what} split has a different feature dimension"
    );
    Ok(())
}

fn examples(set: &Dataset) -> Vec<Example<'_>> {
    set.samples.iter().map(|s| Example { features: &s.features.frames, target: &s.actions }).collect()
}

fn caption_examples(set: &Dataset) -> Vec<CaptionExample<'_>> {
    set.samples
        .iter()
        .map(|s| CaptionExample { features: &s.features.frames, actions: &s.actions, caption: &s.caption })
        .collect()
}

pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome<Seq2SeqModel>> {
    let tr = load_split(config, 0)?;
    let va = load_split(config, 1)?;
    check_compatible(&tr, &va, "validation")?;
    let t = &config.training;
    let dims = t.model_dims(config.variant, tr.input_dim().expect("non-empty"), tr.actions.output_dim());
    let model = init_model(config.variant, dims, config.seed)?;
    let (tr_ex, va_ex) = (examples(&tr), examples(&va));
    let outcome = train(model, &tr_ex, &va_ex, t)?;
    let out = create_out(config)?;
    let ckpt = ModelCheckpoint {
        model: outcome.model.clone(),
        vocab_fingerprint: tr.actions.fingerprint(),
        max_decode_len: t.max_decode_len.unwrap_or_else(|| default_max_decode_len(&tr_ex)),
    };
    checkpoint::save_model(&ckpt, &out.join(MODEL_FILE))?;
    report::write(&out.join("loss.csv"), &loss_log_to_csv(&outcome.log))?;
    Ok(outcome)
}

fn checkpoint_path(config: &RunConfig, default: &str) -> PathBuf {
    config.checkpoint.clone().unwrap_or_else(|| config.out.join(default))
}

fn load_checked_model(config: &RunConfig, vocab: &Vocabulary, input_dim: Option<usize>) -> Result<ModelCheckpoint> {
    let ckpt = checkpoint::load_model(&checkpoint_path(config, MODEL_FILE))?;
    ensure!(
        ckpt.vocab_fingerprint == vocab.fingerprint(),
        "checkpoint was trained on a different action vocabulary"
    );
    ensure!(
        Some(ckpt.model.dims().input_dim) == input_dim,
        "checkpoint reads {}-dimensional features, the data has {:?}",
        ckpt.model.dims().input_dim,
        input_dim
    );
    Ok(ckpt)
}

/// Table-style metrics of predicted against true sequences.
pub fn translation_metrics(predicted: &[Vec<TokenId>], truth: &[Vec<TokenId>]) -> Result<Vec<MetricReport>> {
    Ok(vec![bleu(predicted, truth, 1)?, bleu(predicted, truth, 2)?, mean_accuracy(predicted, truth)?])
}

pub fn cmd_eval(config: &RunConfig) -> Result<Vec<MetricReport>> {
    let te = load_split(config, 2)?;
    let ckpt = load_checked_model(config, &te.actions, te.input_dim())?;
    let ex = examples(&te);
    let predicted = predict_all(&ckpt.model, &ex, ckpt.max_decode_len)?;
    let truth: Vec<Vec<TokenId>> = te.samples.iter().map(|s| s.actions.clone()).collect();
    let reports = translation_metrics(&predicted, &truth)?;
    report::write(&create_out(config)?.join("eval.jsonl"), &metrics_to_jsonl(&reports))?;
    Ok(reports)
}

#[derive(Debug, Clone)]
pub struct CaptionRun {
    pub captions: Vec<Vec<TokenId>>,
    pub reports: Vec<MetricReport>,
    /// Training logs, absent when the pipeline came from a checkpoint.
    pub training: Option<PipelineOutcome>,
}

fn train_caption_pipeline(config: &RunConfig, words: &Vocabulary) -> Result<PipelineOutcome> {
    let tr = load_split(config, 0)?;
    let va = load_split(config, 1)?;
    check_compatible(&tr, &va, "validation")?;
    let mut stage1_cfg = config.training.clone();
    stage1_cfg.epochs = config.stage1_epochs;
    let mut joint_cfg = config.training.clone();
    joint_cfg.epochs = config.training.epochs - config.stage1_epochs;
    let dims = stage1_cfg.model_dims(Variant::GruAa, tr.input_dim().expect("non-empty"), tr.actions.output_dim());
    let stage1 = init_model(Variant::GruAa, dims, config.seed)?;
    let d2 = CaptionPipeline::stage2_dims(&stage1, joint_cfg.hidden_dim, joint_cfg.embedding_dim, words.len());
    let stage2 = init_model(Variant::GruAa, d2, config.seed.wrapping_add(1))?;
    let pipeline = CaptionPipeline::new(stage1, stage2, config.score_input)?;
    let budgets = CaptionTrainingConfig { stage1: stage1_cfg, joint: joint_cfg };
    Ok(train_pipeline(pipeline, &caption_examples(&tr), &caption_examples(&va), &budgets)?)
}

/// Caption metrics: BLEU-1 to BLEU-4 and ROUGE-L.
pub fn caption_metrics(predicted: &[Vec<TokenId>], truth: &[Vec<TokenId>]) -> Result<Vec<MetricReport>> {
    let mut reports = Vec::with_capacity(5);
    for n in 1..=4 {
        reports.push(bleu(predicted, truth, n)?);
    }
    reports.push(mean_rouge_l(predicted, truth)?);
    Ok(reports)
}

pub fn cmd_caption(config: &RunConfig) -> Result<CaptionRun> {
    let te = load_split(config, 2)?;
    let words = te.words.clone().context("the test split has no caption vocabulary")?;
    let (ckpt, training) = match &config.checkpoint {
        Some(path) => (checkpoint::load_pipeline(path)?, None),
        None => {
            let outcome = train_caption_pipeline(config, &words)?;
            let ckpt = PipelineCheckpoint {
                pipeline: outcome.pipeline.clone(),
                action_fingerprint: te.actions.fingerprint(),
                word_fingerprint: words.fingerprint(),
                max_actions: outcome.max_actions,
                max_words: outcome.max_words,
            };
            (ckpt, Some(outcome))
        }
    };
    ensure!(
        ckpt.action_fingerprint == te.actions.fingerprint() && ckpt.word_fingerprint == words.fingerprint(),
        "pipeline was trained on different vocabularies"
    );
    ensure!(
        Some(ckpt.pipeline.stage1.dims().input_dim) == te.input_dim(),
        "pipeline reads features of a different dimension"
    );
    let captions = te
        .samples
        .iter()
        .map(|s| caption(&ckpt.pipeline, &s.features.frames, ckpt.max_actions, ckpt.max_words))
        .collect::<Result<Vec<_>, _>>()?;
    let truth: Vec<Vec<TokenId>> = te.samples.iter().map(|s| s.caption.clone()).collect();
    let reports = caption_metrics(&captions, &truth)?;

    let out = create_out(config)?;
    if let Some(o) = &training {
        checkpoint::save_pipeline(&ckpt, &out.join(PIPELINE_FILE))?;
        report::write(&out.join("loss_stage1.csv"), &loss_log_to_csv(&o.stage1_log))?;
        report::write(&out.join("loss_joint.csv"), &loss_log_to_csv(&o.joint_log))?;
    }
    let mut text = String::new();
    for (s, c) in te.samples.iter().zip(&captions) {
        writeln!(text, "{}\t{}", s.features.id, words.decode(c)?.join(" ")).unwrap();
    }
    report::write(&out.join("captions.txt"), &text)?;
    report::write(&out.join("caption.jsonl"), &metrics_to_jsonl(&reports))?;
    Ok(CaptionRun { captions, reports, training })
}

#[derive(Debug, Clone)]
pub struct LocalizeRun {
    pub grids: Vec<LocalizationGrid>,
    /// `mAP` then `mAP-shuffled`.
    pub reports: Vec<MetricReport>,
}

/// `id T` then one `timestamp score...` row per grid frame.
pub fn grids_to_text(grids: &[LocalizationGrid], samples: &[Sample]) -> String {
    let mut out = String::new();
    for (g, s) in grids.iter().zip(samples) {
        writeln!(out, "{} {}", s.features.id, s.features.len()).unwrap();
        for (t, row) in g.timestamps.iter().zip(g.scores.row_iter()) {
            writeln!(out, "{t} {}", crate::text::join_floats(row)).unwrap();
        }
    }
    out
}

/// Stream of the shuffled-baseline generator; training uses lower streams.
const SHUFFLE_STREAM: u64 = 3;

pub fn localization_metrics(grids: &[LocalizationGrid], samples: &[Sample], seed: u64) -> Result<Vec<MetricReport>> {
    let n = grids.len() * actseq_core::localize::GRID_FRAMES;
    let map = evaluate_localization(grids, samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SHUFFLE_STREAM);
    let shuffled = evaluate_localization(&shuffled_grids(grids, &mut rng), samples)?;
    Ok(vec![MetricReport::new("mAP", map, n), MetricReport::new("mAP-shuffled", shuffled, n)])
}

pub fn cmd_localize(config: &RunConfig) -> Result<LocalizeRun> {
    let te = load_split(config, 2)?;
    ensure!(
        te.samples.iter().all(|s| !s.boundaries.is_empty()),
        "localization needs segment boundaries for every test sample"
    );
    let ckpt = load_checked_model(config, &te.actions, te.input_dim())?;
    let grids = te
        .samples
        .iter()
        .map(|s| localize(&ckpt.model, &s.features.frames, ckpt.max_decode_len))
        .collect::<Result<Vec<_>, _>>()?;
    let reports = localization_metrics(&grids, &te.samples, config.seed)?;
    let out = create_out(config)?;
    report::write(&out.join("grids.txt"), &grids_to_text(&grids, &te.samples))?;
    report::write(&out.join("localize.jsonl"), &metrics_to_jsonl(&reports))?;
    Ok(LocalizeRun { grids, reports })
}

pub fn cmd_grad_check(config: &RunConfig) -> Result<Vec<GradCheckEntry>> {
    let entries = run_grad_checks(config.seed)?;
    ensure!(entries.iter().all(|e| e.report.max_rel_error.is_finite()), "non-finite gradient check");
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses_global_flags_after_the_command() {
        let cli = Cli::try_parse_from(["actseq", "train", "--variant", "lstm-mean", "--desk-scale", "--seed", "4"]).unwrap();
        assert_eq!(cli.command, Command::Train);
        assert_eq!(cli.flags.variant, Some(Variant::LstmMean));
        assert!(cli.flags.desk_scale);
        assert_eq!(cli.flags.seed, Some(4));
    }

    #[test]
    fn unknown_variant_is_a_usage_error() {
        assert!(Cli::try_parse_from(["actseq", "train", "--variant", "lstm"]).is_err());
    }

    #[test]
    fn external_split_keeps_proportions() {
        let text: String = (0..12).map(|i| format!("v{i} 1 1\n{i}\n")).collect();
        let labels: String = (0..12).map(|i| format!("v{i} a\n")).collect();
        let d = external::assemble(external::parse_features(&text).unwrap(), external::parse_labels(&labels).unwrap()).unwrap();
        let [a, b, c] = split_external(d, (2000, 500, 500)).unwrap();
        assert_eq!((a.samples.len(), b.samples.len(), c.samples.len()), (8, 2, 2));
        assert_eq!(c.samples[0].features.id, "v10");
    }
}
