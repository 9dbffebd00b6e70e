//! Metric records (JSON lines) and loss logs (CSV).

use std::path::Path;

use actseq_core::metrics::MetricReport;
use actseq_core::train::EpochLog;
use serde::{Deserialize, Serialize};

use crate::FormatError;

pub const LOSS_LOG_HEADER: &str = "epoch,train_loss,val_loss,val_bleu1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    metric: String,
    value: f64,
    count: usize,
}

/// One `{"metric":..,"value":..,"count":..}` object per line.
pub fn metrics_to_jsonl(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let rec = Record { metric: r.metric.clone(), value: r.value, count: r.count };
        out.push_str(&serde_json::to_string(&rec).expect("plain record serializes"));
        out.push('\n');
    }
    out
}

pub fn metrics_from_jsonl(text: &str) -> Result<Vec<MetricReport>, FormatError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let r: Record = serde_json::from_str(l)
                .map_err(|e| FormatError::Invalid(format!("metric record {}: {e}", i + 1)))?;
            Ok(MetricReport::new(r.metric, r.value, r.count))
        })
        .collect()
}

/// Header row then one row per epoch; floats in shortest round-trip form.
pub fn loss_log_to_csv(log: &[EpochLog]) -> String {
    let mut out = format!("{LOSS_LOG_HEADER}\n");
    for e in log {
        out.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.val_bleu1));
    }
    out
}

pub fn write(path: &Path, contents: &str) -> Result<(), FormatError> {
    std::fs::write(path, contents).map_err(|e| FormatError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_round_trip() {
        let reports = vec![MetricReport::new("BLEU-1", 1.0 / 3.0, 500), MetricReport::new("accuracy", 100.0, 2)];
        let text = metrics_to_jsonl(&reports);
        assert_eq!(text.lines().next().unwrap(), r#"{"metric":"BLEU-1","value":0.3333333333333333,"count":500}"#);
        assert_eq!(metrics_from_jsonl(&text).unwrap(), reports);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(metrics_from_jsonl(r#"{"metric":"a","value":1,"count":1,"x":0}"#).is_err());
    }

    #[test]
    fn loss_log_rows() {
        let log = [EpochLog { epoch: 0, train_loss: 2.5, val_loss: 0.1, val_bleu1: 40.0 }];
        assert_eq!(loss_log_to_csv(&log), "epoch,train_loss,val_loss,val_bleu1\n0,2.5,0.1,40\n");
    }
}
