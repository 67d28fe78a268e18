//! Metric rows, their CSV encoding, and run comparisons.

use std::fmt::Write as _;
use std::ops::Range;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "round,protocol,dataset,seed,train_loss,train_acc,test_loss,test_acc,wall_ms";

pub const NODE_METRICS_HEADER: &str =
    "round,protocol,dataset,seed,node,byzantine,train_loss,train_acc,test_loss,test_acc";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub protocol: String,
    pub dataset: String,
    pub seed: u64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub wall_ms: u64,
}

/// Evaluation of one DFL node's local model.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRow {
    pub round: usize,
    pub protocol: String,
    pub dataset: String,
    pub seed: u64,
    pub node: usize,
    pub byzantine: bool,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

/// 17 significant digits; parses back to the same `f64`.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::with_capacity(64 + rows.len() * 128);
    s.push_str(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.round,
            r.protocol,
            r.dataset,
            r.seed,
            format_real(r.train_loss),
            format_real(r.train_acc),
            format_real(r.test_loss),
            format_real(r.test_acc),
            r.wall_ms
        );
    }
    s
}

pub fn node_metrics_csv(rows: &[NodeRow]) -> String {
    let mut s = String::with_capacity(96 + rows.len() * 128);
    s.push_str(NODE_METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.round,
            r.protocol,
            r.dataset,
            r.seed,
            r.node,
            u8::from(r.byzantine),
            format_real(r.train_loss),
            format_real(r.train_acc),
            format_real(r.test_loss),
            format_real(r.test_acc)
        );
    }
    s
}

/// Parses text produced by [`metrics_csv`].
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => {
            return Err(Error::format(
                "metrics csv",
                format!("unexpected header {:?}", other.unwrap_or("")),
            ))
        }
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| Error::format("metrics csv", format!("row {}: {what}", i + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad("expected 9 fields"));
            }
            let real = |s: &str| s.parse::<f64>().map_err(|_| bad("bad real"));
            Ok(MetricsRow {
                round: f[0].parse().map_err(|_| bad("bad round"))?,
                protocol: f[1].to_string(),
                dataset: f[2].to_string(),
                seed: f[3].parse().map_err(|_| bad("bad seed"))?,
                train_loss: real(f[4])?,
                train_acc: real(f[5])?,
                test_loss: real(f[6])?,
                test_acc: real(f[7])?,
                wall_ms: f[8].parse().map_err(|_| bad("bad wall_ms"))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRow {
    pub round: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

/// `other - base`, round by round.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub base: String,
    pub other: String,
    pub deltas: Vec<DeltaRow>,
    /// Final test accuracy of `other` minus that of `base`.
    pub final_acc_gap: f64,
}

pub fn compare_tables(base: &[MetricsRow], other: &[MetricsRow]) -> Result<Comparison> {
    if base.is_empty() || base.len() != other.len() {
        return Err(Error::InvalidArgument(format!(
            "round grids differ: {} rows vs {} rows",
            base.len(),
            other.len()
        )));
    }
    let mut deltas = Vec::with_capacity(base.len());
    for (a, b) in base.iter().zip(other) {
        if a.round != b.round {
            return Err(Error::InvalidArgument(format!(
                "round grids differ: {} vs {}",
                a.round, b.round
            )));
        }
        deltas.push(DeltaRow {
            round: a.round,
            train_loss: b.train_loss - a.train_loss,
            train_acc: b.train_acc - a.train_acc,
            test_loss: b.test_loss - a.test_loss,
            test_acc: b.test_acc - a.test_acc,
        });
    }
    let last = deltas.last().expect("non-empty");
    Ok(Comparison {
        base: base[0].protocol.clone(),
        other: other[0].protocol.clone(),
        final_acc_gap: last.test_acc,
        deltas,
    })
}

/// Population standard deviation of the round-to-round change in test
/// accuracy over rows whose round lies in `window`.
pub fn accuracy_volatility(rows: &[MetricsRow], window: Range<usize>) -> f64 {
    let acc: Vec<f64> = rows
        .iter()
        .filter(|r| window.contains(&r.round))
        .map(|r| r.test_acc)
        .collect();
    let diffs: Vec<f64> = acc.windows(2).map(|w| w[1] - w[0]).collect();
    if diffs.is_empty() {
        return 0.0;
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    (diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n).sqrt()
}
