//! Model and pipeline checkpoints.
//!
//! ```text
//! actseq-checkpoint 1
//! model <variant> <input> <hidden> <embedding> <output> <depth>
//! vocab <action fingerprint, hex>
//! decode <max_len>
//! params <count>
//! param <name> <rows> <cols>       # repeated; rows follow
//! ```
//!
//! A pipeline checkpoint replaces the `model` line with `pipeline <raw|softmax>`
//! plus `stage1 ...` and `stage2 ...` shape lines, and carries two
//! fingerprints (actions, words) and two decoding caps.

use std::fmt::Write as _;
use std::path::Path;

use actseq_core::caption::{CaptionPipeline, ScoreInput};
use actseq_core::numkit::{Matrix, ParamSet};
use actseq_core::translate::{ModelDims, Seq2SeqModel, Variant};

use crate::text::{join_floats, Lines, ParseError};
use crate::FormatError;

const MAGIC: &str = "actseq-checkpoint";
const VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub model: Seq2SeqModel,
    pub vocab_fingerprint: u64,
    pub max_decode_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineCheckpoint {
    pub pipeline: CaptionPipeline,
    pub action_fingerprint: u64,
    pub word_fingerprint: u64,
    pub max_actions: usize,
    pub max_words: usize,
}

fn shape_fields(model: &Seq2SeqModel) -> String {
    let d = model.dims();
    format!("{} {} {} {} {} {}", model.variant(), d.input_dim, d.hidden_dim, d.embedding_dim, d.output_dim, d.depth)
}

fn write_params(out: &mut String, params: &dyn ParamSet) {
    writeln!(out, "params {}", params.names().len()).unwrap();
    params.for_each(&mut |name, m| {
        writeln!(out, "param {name} {} {}", m.rows(), m.cols()).unwrap();
        for row in m.row_iter() {
            out.push_str(&join_floats(row));
            out.push('\n');
        }
    });
}

fn score_input_name(s: ScoreInput) -> &'static str {
    match s {
        ScoreInput::Raw => "raw",
        ScoreInput::Softmax => "softmax",
    }
}

pub fn model_to_text(ckpt: &ModelCheckpoint) -> String {
    let mut out = format!("{MAGIC} {VERSION}\n");
    writeln!(out, "model {}", shape_fields(&ckpt.model)).unwrap();
    writeln!(out, "vocab {:016x}", ckpt.vocab_fingerprint).unwrap();
    writeln!(out, "decode {}", ckpt.max_decode_len).unwrap();
    write_params(&mut out, &ckpt.model);
    out
}

pub fn pipeline_to_text(ckpt: &PipelineCheckpoint) -> String {
    let p = &ckpt.pipeline;
    let mut out = format!("{MAGIC} {VERSION}\n");
    writeln!(out, "pipeline {}", score_input_name(p.score_input)).unwrap();
    writeln!(out, "stage1 {}", shape_fields(&p.stage1)).unwrap();
    writeln!(out, "stage2 {}", shape_fields(&p.stage2)).unwrap();
    writeln!(out, "vocab {:016x} {:016x}", ckpt.action_fingerprint, ckpt.word_fingerprint).unwrap();
    writeln!(out, "decode {} {}", ckpt.max_actions, ckpt.max_words).unwrap();
    write_params(&mut out, p);
    out
}

fn parse_shape(lines: &Lines<'_>, fields: &[&str]) -> Result<(Variant, ModelDims), ParseError> {
    if fields.len() != 6 {
        return Err(lines.error("expected `<variant> <input> <hidden> <embedding> <output> <depth>`"));
    }
    let variant: Variant = fields[0].parse().map_err(|e: actseq_core::Error| lines.error(e.to_string()))?;
    let n = lines.parse_all::<usize>(&fields[1..], 5, "dimensions")?;
    let dims = ModelDims { input_dim: n[0], hidden_dim: n[1], embedding_dim: n[2], output_dim: n[3], depth: n[4] };
    Ok((variant, dims))
}

fn parse_fingerprints(lines: &Lines<'_>, fields: &[&str], n: usize) -> Result<Vec<u64>, ParseError> {
    if fields.len() != n {
        return Err(lines.error(format!("expected {n} fingerprints")));
    }
    fields
        .iter()
        .map(|f| u64::from_str_radix(f, 16).map_err(|_| lines.error(format!("bad fingerprint `{f}`"))))
        .collect()
}

/// Reads the parameter block into `target`, whose names and shapes it must
/// match in order.
fn read_params(lines: &mut Lines<'_>, target: &mut dyn ParamSet) -> Result<(), ParseError> {
    let count = {
        let f = lines.keyword("params")?;
        lines.parse_all::<usize>(&f, 1, "parameter count")?[0]
    };
    let expected = target.names();
    if count != expected.len() {
        return Err(lines.error(format!("{count} parameters listed, the model has {}", expected.len())));
    }
    let mut parsed = Vec::with_capacity(count);
    for want in &expected {
        let head = lines.keyword("param")?;
        if head.len() != 3 {
            return Err(lines.error("expected `param <name> <rows> <cols>`"));
        }
        if head[0] != want {
            return Err(lines.error(format!("expected parameter `{want}`, found `{}`", head[0])));
        }
        let rows: usize = lines.parse(head[1], "row count")?;
        let cols: usize = lines.parse(head[2], "column count")?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let row = lines.expect_line("a parameter row")?;
            let fields: Vec<&str> = row.split_whitespace().collect();
            data.extend(lines.parse_all::<f64>(&fields, cols, "values")?);
        }
        parsed.push(Matrix::from_vec(rows, cols, data).map_err(|e| lines.error(e.to_string()))?);
    }
    let mut mismatch = None;
    let mut it = parsed.into_iter();
    target.for_each_mut(&mut |name, m| {
        let p = it.next().expect("count checked");
        if p.shape() != m.shape() {
            mismatch.get_or_insert_with(|| format!("`{name}` is {:?}, the model expects {:?}", p.shape(), m.shape()));
        } else {
            *m = p;
        }
    });
    match mismatch {
        Some(msg) => Err(lines.error(msg)),
        None => Ok(()),
    }
}

fn header(lines: &mut Lines<'_>) -> Result<(), ParseError> {
    if lines.keyword(MAGIC)? != [VERSION] {
        return Err(lines.error("unsupported checkpoint version"));
    }
    Ok(())
}

fn finish(lines: &mut Lines<'_>) -> Result<(), ParseError> {
    match lines.next_line() {
        Some(_) => Err(lines.error("unexpected content after the parameters")),
        None => Ok(()),
    }
}

pub fn model_from_text(text: &str) -> Result<ModelCheckpoint, ParseError> {
    let mut lines = Lines::new(text);
    header(&mut lines)?;
    let (variant, dims) = {
        let f = lines.keyword("model")?;
        parse_shape(&lines, &f)?
    };
    let mut model = Seq2SeqModel::zeros(variant, dims).map_err(|e| lines.error(e.to_string()))?;
    let vocab_fingerprint = {
        let f = lines.keyword("vocab")?;
        parse_fingerprints(&lines, &f, 1)?[0]
    };
    let max_decode_len = {
        let f = lines.keyword("decode")?;
        lines.parse_all::<usize>(&f, 1, "decoding cap")?[0]
    };
    read_params(&mut lines, &mut model)?;
    finish(&mut lines)?;
    Ok(ModelCheckpoint { model, vocab_fingerprint, max_decode_len })
}

pub fn pipeline_from_text(text: &str) -> Result<PipelineCheckpoint, ParseError> {
    let mut lines = Lines::new(text);
    header(&mut lines)?;
    let score_input = match lines.keyword("pipeline")?.as_slice() {
        ["raw"] => ScoreInput::Raw,
        ["softmax"] => ScoreInput::Softmax,
        _ => return Err(lines.error("expected `pipeline raw` or `pipeline softmax`")),
    };
    let mut stage = |name: &str| -> Result<Seq2SeqModel, ParseError> {
        let f = lines.keyword(name)?;
        let (variant, dims) = parse_shape(&lines, &f)?;
        Seq2SeqModel::zeros(variant, dims).map_err(|e| lines.error(e.to_string()))
    };
    let (stage1, stage2) = (stage("stage1")?, stage("stage2")?);
    let mut pipeline = CaptionPipeline::new(stage1, stage2, score_input).map_err(|e| lines.error(e.to_string()))?;
    let fp = {
        let f = lines.keyword("vocab")?;
        parse_fingerprints(&lines, &f, 2)?
    };
    let caps = {
        let f = lines.keyword("decode")?;
        lines.parse_all::<usize>(&f, 2, "decoding caps")?
    };
    read_params(&mut lines, &mut pipeline)?;
    finish(&mut lines)?;
    Ok(PipelineCheckpoint {
        pipeline,
        action_fingerprint: fp[0],
        word_fingerprint: fp[1],
        max_actions: caps[0],
        max_words: caps[1],
    })
}

fn read(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))
}

pub fn save_model(ckpt: &ModelCheckpoint, path: &Path) -> Result<(), FormatError> {
    std::fs::write(path, model_to_text(ckpt)).map_err(|e| FormatError::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelCheckpoint, FormatError> {
    model_from_text(&read(path)?).map_err(|e| FormatError::parse(path, e))
}

pub fn save_pipeline(ckpt: &PipelineCheckpoint, path: &Path) -> Result<(), FormatError> {
    std::fs::write(path, pipeline_to_text(ckpt)).map_err(|e| FormatError::io(path, e))
}

pub fn load_pipeline(path: &Path) -> Result<PipelineCheckpoint, FormatError> {
    pipeline_from_text(&read(path)?).map_err(|e| FormatError::parse(path, e))
}
