//! Precomputed features from outside the synthetic generator.
//!
//! Features file: blocks of a header line `[id] T D_in` followed by `T`
//! rows of `D_in` decimals. Blocks without an id are named `v000000`,
//! `v000001`, ... by position.
//!
//! Labels file: one line per video, `id action action ...`.
//!
//! The action vocabulary is the sorted set of label names.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use actseq_core::numkit::Matrix;
use actseq_core::synthdata::Sample;
use actseq_core::translate::FeatureSequence;
use actseq_core::vocab::Vocabulary;

use crate::dataset::Dataset;
use crate::text::{Lines, ParseError};
use crate::FormatError;

pub fn parse_features(text: &str) -> Result<Vec<FeatureSequence>, ParseError> {
    let mut lines = Lines::new(text);
    let mut out = Vec::new();
    let mut dim = None;
    while let Some(header) = lines.next_line() {
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (id, t, d) = match fields.as_slice() {
            [t, d] => (format!("v{:06}", out.len()), *t, *d),
            [id, t, d] => (id.to_string(), *t, *d),
            _ => return Err(lines.error("expected a block header `[id] T D_in`")),
        };
        let t: usize = lines.parse(t, "frame count")?;
        let d: usize = lines.parse(d, "feature dimension")?;
        if t == 0 || d == 0 {
            return Err(lines.error("frame count and dimension must be positive"));
        }
        if *dim.get_or_insert(d) != d {
            return Err(lines.error(format!("dimension {d} differs from the first block's {}", dim.unwrap())));
        }
        let mut data = Vec::with_capacity(t * d);
        for _ in 0..t {
            let row = lines.expect_line("a feature row")?;
            let fields: Vec<&str> = row.split_whitespace().collect();
            data.extend(lines.parse_all::<f64>(&fields, d, "feature values")?);
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(lines.error("feature values must be finite"));
        }
        out.push(FeatureSequence::new(id, Matrix::from_vec(t, d, data).expect("sized above")));
    }
    Ok(out)
}

/// `(id, action names)` per line.
pub fn parse_labels(text: &str) -> Result<Vec<(String, Vec<String>)>, ParseError> {
    let mut lines = Lines::new(text);
    let mut out = Vec::new();
    while let Some(line) = lines.next_line() {
        let mut fields = line.split_whitespace();
        let id = fields.next().expect("line is non-empty").to_string();
        let names: Vec<String> = fields.map(str::to_string).collect();
        if names.is_empty() {
            return Err(lines.error(format!("video `{id}` has no actions")));
        }
        out.push((id, names));
    }
    Ok(out)
}

/// Pairs features with labels; every video needs exactly one label line.
pub fn assemble(features: Vec<FeatureSequence>, labels: Vec<(String, Vec<String>)>) -> Result<Dataset, FormatError> {
    let names: BTreeSet<&str> = labels.iter().flat_map(|(_, n)| n.iter().map(String::as_str)).collect();
    let actions = Vocabulary::new(names)?;
    let mut by_id: HashMap<String, Vec<String>> = HashMap::with_capacity(labels.len());
    for (id, names) in labels {
        if by_id.insert(id.clone(), names).is_some() {
            return Err(FormatError::Invalid(format!("video `{id}` is labelled twice")));
        }
    }
    let mut samples = Vec::with_capacity(features.len());
    for f in features {
        let names = by_id
            .remove(&f.id)
            .ok_or_else(|| FormatError::Invalid(format!("video `{}` has no labels", f.id)))?;
        let acts = actions.encode(&names)?;
        samples.push(Sample { features: f, actions: acts, caption: Vec::new(), boundaries: Vec::new() });
    }
    if let Some(id) = by_id.keys().min() {
        return Err(FormatError::Invalid(format!("labels given for unknown video `{id}`")));
    }
    Ok(Dataset { actions, words: None, samples })
}

pub fn load(features: &Path, labels: &Path) -> Result<Dataset, FormatError> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| FormatError::io(p, e));
    let f = parse_features(&read(features)?).map_err(|e| FormatError::parse(features, e))?;
    let l = parse_labels(&read(labels)?).map_err(|e| FormatError::parse(labels, e))?;
    assemble(f, l)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FEATURES: &str = "a 2 3\n0.1 0.2 0.3\n1 2 3\n1 3\n-1 0 1e-3\n";
    const LABELS: &str = "a run walk\nv000001 walk\n";

    #[test]
    fn blocks_with_and_without_ids() {
        let f = parse_features(FEATURES).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!((f[0].id.as_str(), f[0].len(), f[0].dim()), ("a", 2, 3));
        assert_eq!(f[1].id, "v000001");
        assert_eq!(f[1].frames.row(0), &[-1.0, 0.0, 1e-3]);
    }

    #[test]
    fn truncated_block_reports_end_offset() {
        let cut = "a 3 2\n1 2\n3 4\n";
        let err = parse_features(cut).unwrap_err();
        assert_eq!(err.offset, cut.len());
        assert!(err.message.contains("ends"), "{err}");
    }

    #[test]
    fn short_row_reports_its_line() {
        let err = parse_features("a 2 2\n1 2\n3\n").unwrap_err();
        assert_eq!((err.line, err.offset), (3, 10));
    }

    #[test]
    fn assembles_sorted_vocabulary() {
        let d = assemble(parse_features(FEATURES).unwrap(), parse_labels(LABELS).unwrap()).unwrap();
        assert_eq!(d.actions.names(), ["run", "walk"]);
        assert_eq!(d.samples[0].actions, vec![0, 1]);
        assert_eq!(d.samples[1].actions, vec![1]);
    }

    #[test]
    fn unmatched_labels_are_errors() {
        let f = parse_features(FEATURES).unwrap();
        assert!(assemble(f.clone(), parse_labels("a run\n").unwrap()).is_err());
        assert!(assemble(f, parse_labels("a run\nv000001 run\nzz run\n").unwrap()).is_err());
    }
}
