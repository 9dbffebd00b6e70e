//! Run configuration.
//!
//! Values are layered: built-in defaults, then the desk-scale preset when
//! requested, then the TOML file, then command-line flags. The file holds
//! flat keys only; unknown keys are errors.
//!
//! ```toml
//! seed = 7
//! variant = "gru-aa"
//! desk_scale = true
//! epochs = 10
//! num_classes = 10
//! ```

use std::path::{Path, PathBuf};

use actseq_core::caption::ScoreInput;
use actseq_core::synthdata::{SyntheticSpec, Transitions, DESK_SPLIT};
use actseq_core::train::{ForcingGranularity, TrainingConfig};
use actseq_core::translate::Variant;
use serde::Deserialize;

use crate::FormatError;

/// Keys accepted in a config file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub variant: Option<String>,
    pub desk_scale: Option<bool>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,

    pub hidden_dim: Option<usize>,
    pub embedding_dim: Option<usize>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub teacher_forcing_prob: Option<f64>,
    pub patience: Option<usize>,
    /// `"per-sequence"` or `"per-step"`.
    pub forcing: Option<String>,
    pub clip_norm: Option<f64>,
    pub baseline_depth: Option<usize>,
    pub max_decode_len: Option<usize>,

    pub num_classes: Option<usize>,
    pub input_dim: Option<usize>,
    pub p_min: Option<usize>,
    pub p_max: Option<usize>,
    pub d_min: Option<usize>,
    pub d_max: Option<usize>,
    /// Defaults to `separation / 8`.
    pub noise_sigma: Option<f64>,
    pub separation: Option<f64>,
    /// `"uniform"` or `"uniform-no-repeat"`.
    pub transitions: Option<String>,
    pub train_count: Option<usize>,
    pub val_count: Option<usize>,
    pub test_count: Option<usize>,

    /// Epochs of action pretraining before joint caption training; the
    /// rest of `epochs` goes to the joint phase.
    pub stage1_epochs: Option<usize>,
    /// `"raw"` or `"softmax"`.
    pub score_input: Option<String>,
}

impl FileConfig {
    pub fn from_toml(text: &str) -> Result<Self, FormatError> {
        toml::from_str(text).map_err(|e| FormatError::Invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        toml::from_str(&text).map_err(|e| FormatError::Invalid(format!("{}: {e}", path.display())))
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub desk_scale: bool,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: Variant,
    pub out: PathBuf,
    pub data: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub training: TrainingConfig,
    pub synthetic: SyntheticSpec,
    pub split: (usize, usize, usize),
    pub stage1_epochs: usize,
    pub score_input: ScoreInput,
}

fn choice<T: Copy>(key: &str, value: &str, options: &[(&str, T)]) -> Result<T, FormatError> {
    options.iter().find(|(n, _)| *n == value).map(|(_, v)| *v).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        FormatError::Invalid(format!("{key} must be one of {}, got `{value}`", names.join(", ")))
    })
}

impl RunConfig {
    pub fn resolve(file: FileConfig, flags: Overrides) -> Result<Self, FormatError> {
        let seed = flags.seed.or(file.seed).unwrap_or(0);
        let variant = match (flags.variant, &file.variant) {
            (Some(v), _) => v,
            (None, Some(s)) => s.parse()?,
            (None, None) => Variant::GruAa,
        };

        let mut t = TrainingConfig::default();
        if flags.desk_scale || file.desk_scale == Some(true) {
            t = t.with_desk_scale();
        }
        macro_rules! take {
            ($dst:expr, $($key:ident),*) => { $( if let Some(v) = file.$key { $dst.$key = v; } )* };
        }
        take!(t, hidden_dim, embedding_dim, batch_size, epochs, learning_rate, teacher_forcing_prob, patience, clip_norm, baseline_depth);
        t.max_decode_len = file.max_decode_len.or(t.max_decode_len);
        if let Some(f) = &file.forcing {
            t.forcing = choice(
                "forcing",
                f,
                &[("per-sequence", ForcingGranularity::PerSequence), ("per-step", ForcingGranularity::PerStep)],
            )?;
        }
        t.seed = seed;
        t.validate()?;

        let mut s = SyntheticSpec::desk(seed);
        take!(s, num_classes, input_dim, p_min, p_max, d_min, d_max, separation);
        s.noise_sigma = file.noise_sigma.unwrap_or(s.separation / 8.0);
        match file.transitions.as_deref() {
            None | Some("uniform-no-repeat") => {}
            Some("uniform") => s.transitions = Transitions::Uniform,
            Some(other) => {
                return Err(FormatError::Invalid(format!(
                    "transitions must be one of uniform, uniform-no-repeat, got `{other}`"
                )))
            }
        }
        s.validate()?;

        let split = (
            file.train_count.unwrap_or(DESK_SPLIT.0),
            file.val_count.unwrap_or(DESK_SPLIT.1),
            file.test_count.unwrap_or(DESK_SPLIT.2),
        );
        if split.0 == 0 || split.1 == 0 || split.2 == 0 {
            return Err(FormatError::Invalid("train_count, val_count and test_count must be positive".into()));
        }

        let stage1_epochs = file.stage1_epochs.unwrap_or(t.epochs.div_ceil(2));
        if stage1_epochs == 0 || stage1_epochs >= t.epochs {
            return Err(FormatError::Invalid(format!(
                "stage1_epochs must lie in [1, epochs - 1] (epochs = {})",
                t.epochs
            )));
        }
        let score_input = match &file.score_input {
            Some(v) => choice("score_input", v, &[("raw", ScoreInput::Raw), ("softmax", ScoreInput::Softmax)])?,
            None => ScoreInput::Raw,
        };

        let out = flags.out.or(file.out).unwrap_or_else(|| PathBuf::from("."));
        Ok(Self {
            seed,
            variant,
            data: flags.data.or(file.data).unwrap_or_else(|| out.clone()),
            out,
            checkpoint: flags.checkpoint.or(file.checkpoint),
            features: flags.features.or(file.features),
            labels: flags.labels.or(file.labels),
            training: t,
            synthetic: s,
            split,
            stage1_epochs,
            score_input,
        })
    }
}
