//! Dataset files.
//!
//! ```text
//! actseq-dataset 1
//! actions walk run ...            # action vocabulary, in id order
//! words the person then ...       # caption vocabulary, in id order
//! samples <N>
//! sample <id> <T> <D_in>          # repeated N times:
//! <D_in decimals>                 #   T feature rows
//! actions <names...>
//! caption <words...>              #   may be empty
//! boundaries <start>:<end>:<name> ...   # may be empty
//! ```
//!
//! Feature values use the shortest decimal that reads back to the same
//! `f64`, so saving and loading is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use actseq_core::numkit::Matrix;
use actseq_core::synthdata::{Sample, Segment};
use actseq_core::translate::FeatureSequence;
use actseq_core::vocab::{ActionVocabulary, Vocabulary, WordVocabulary};

use crate::text::{join_floats, Lines, ParseError};
use crate::FormatError;

const MAGIC: &str = "actseq-dataset";
const VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub actions: ActionVocabulary,
    pub words: Option<WordVocabulary>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn input_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.features.dim())
    }
}

pub fn to_text(dataset: &Dataset) -> Result<String, FormatError> {
    let mut out = String::new();
    let words = dataset.words.as_ref().map(|w| w.names().join(" ")).unwrap_or_default();
    writeln!(out, "{MAGIC} {VERSION}").unwrap();
    writeln!(out, "actions {}", dataset.actions.names().join(" ")).unwrap();
    writeln!(out, "words {words}").unwrap();
    writeln!(out, "samples {}", dataset.samples.len()).unwrap();
    for s in &dataset.samples {
        let f = &s.features;
        if f.id.is_empty() || f.id.contains(char::is_whitespace) {
            return Err(FormatError::Invalid(format!("sample id {:?} is empty or has whitespace", f.id)));
        }
        writeln!(out, "sample {} {} {}", f.id, f.len(), f.dim()).unwrap();
        for row in f.frames.row_iter() {
            out.push_str(&join_floats(row));
            out.push('\n');
        }
        writeln!(out, "actions {}", dataset.actions.decode(&s.actions)?.join(" ")).unwrap();
        let caption = match (&dataset.words, s.caption.is_empty()) {
            (_, true) => String::new(),
            (Some(w), false) => w.decode(&s.caption)?.join(" "),
            (None, false) => return Err(FormatError::Invalid("captions need a word vocabulary".into())),
        };
        writeln!(out, "caption {caption}").unwrap();
        let segs: Vec<String> = s
            .boundaries
            .iter()
            .map(|b| Ok(format!("{}:{}:{}", b.start, b.end, dataset.actions.name(b.class)?)))
            .collect::<Result<_, actseq_core::Error>>()?;
        writeln!(out, "boundaries {}", segs.join(" ")).unwrap();
    }
    Ok(out)
}

fn vocab(lines: &Lines<'_>, names: Vec<&str>) -> Result<Vocabulary, ParseError> {
    Vocabulary::new(names).map_err(|e| lines.error(e.to_string()))
}

pub fn from_text(text: &str) -> Result<Dataset, ParseError> {
    let mut lines = Lines::new(text);
    let header = lines.keyword(MAGIC)?;
    if header != [VERSION] {
        return Err(lines.error(format!("unsupported dataset version {header:?}")));
    }
    let actions = {
        let names = lines.keyword("actions")?;
        vocab(&lines, names)?
    };
    let words = {
        let names = lines.keyword("words")?;
        if names.is_empty() { None } else { Some(vocab(&lines, names)?) }
    };
    let n: usize = {
        let f = lines.keyword("samples")?;
        lines.parse_all::<usize>(&f, 1, "sample count")?[0]
    };
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let head = lines.keyword("sample")?;
        if head.len() != 3 {
            return Err(lines.error("expected `sample <id> <T> <D_in>`"));
        }
        let id = head[0].to_string();
        let t: usize = lines.parse(head[1], "frame count")?;
        let d: usize = lines.parse(head[2], "feature dimension")?;
        if t == 0 || d == 0 {
            return Err(lines.error("a sample needs at least one frame of positive dimension"));
        }
        let mut data = Vec::with_capacity(t * d);
        for _ in 0..t {
            let row = lines.expect_line("a feature row")?;
            let fields: Vec<&str> = row.split_whitespace().collect();
            data.extend(lines.parse_all::<f64>(&fields, d, "feature values")?);
        }
        let frames = Matrix::from_vec(t, d, data).map_err(|e| lines.error(e.to_string()))?;
        let names = lines.keyword("actions")?;
        let acts = actions.encode(&names).map_err(|e| lines.error(e.to_string()))?;
        let cap_words = lines.keyword("caption")?;
        let caption = match (&words, cap_words.is_empty()) {
            (_, true) => Vec::new(),
            (Some(w), false) => w.encode(&cap_words).map_err(|e| lines.error(e.to_string()))?,
            (None, false) => return Err(lines.error("caption given but the dataset has no word vocabulary")),
        };
        let mut boundaries = Vec::new();
        for seg in lines.keyword("boundaries")? {
            let parts: Vec<&str> = seg.splitn(3, ':').collect();
            if parts.len() != 3 {
                return Err(lines.error(format!("segment `{seg}` is not start:end:class")));
            }
            boundaries.push(Segment {
                start: lines.parse(parts[0], "segment start")?,
                end: lines.parse(parts[1], "segment end")?,
                class: actions.id(parts[2]).map_err(|e| lines.error(e.to_string()))?,
            });
        }
        let sample = Sample { features: FeatureSequence::new(id, frames), actions: acts, caption, boundaries };
        if !sample.boundaries.is_empty() {
            sample.check_boundaries().map_err(|e| lines.error(e.to_string()))?;
        }
        samples.push(sample);
    }
    if lines.next_line().is_some() {
        return Err(lines.error("unexpected content after the last sample"));
    }
    Ok(Dataset { actions, words, samples })
}

pub fn save(dataset: &Dataset, path: &Path) -> Result<(), FormatError> {
    std::fs::write(path, to_text(dataset)?).map_err(|e| FormatError::io(path, e))
}

pub fn load(path: &Path) -> Result<Dataset, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    from_text(&text).map_err(|e| FormatError::parse(path, e))
}
