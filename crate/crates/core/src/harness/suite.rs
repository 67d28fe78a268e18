//! The four-protocol comparison bundles.

use super::config::{AttackName, DatasetKind, ResolvedConfig, RunConfig, ValueSource};
use super::run::{run_experiment, RunOptions};
use super::metrics::{MetricsRow, NodeRow};
use crate::error::{Error, Result};
use crate::protocols::ProtocolKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// 1000 train / 1000 test samples, 300 rounds, attack in `[0, 200)`.
    Desk,
    /// Full datasets, 1000 rounds, attack in `[0, 600)`.
    Full,
}

impl Scale {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "desk" => Some(Scale::Desk),
            "full" => Some(Scale::Full),
            _ => None,
        }
    }
}

pub fn parse_attack(s: &str) -> Option<AttackName> {
    match s {
        "none" => Some(AttackName::None),
        "bitflip" => Some(AttackName::BitFlip),
        "gaussian" => Some(AttackName::Gaussian),
        _ => None,
    }
}

/// Settings shared by the four runs of a bundle, before user overrides.
pub fn suite_entries(dataset: DatasetKind, attack: AttackName, scale: Scale) -> Vec<(String, String)> {
    let attack = match attack {
        AttackName::None => "none",
        AttackName::BitFlip => "bitflip",
        AttackName::Gaussian => "gaussian",
    };
    let mut e = vec![("dataset", dataset.name()), ("attack", attack)];
    if scale == Scale::Desk {
        e.extend([("rounds", "300"), ("attack_end", "200")]);
        if dataset != DatasetKind::OlivettiCsv {
            e.extend([("max_train_samples", "1000"), ("max_test_samples", "1000")]);
        }
    }
    e.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// One resolved config per protocol, in `ProtocolKind::ALL` order.
pub fn suite_configs(
    dataset: DatasetKind,
    attack: AttackName,
    scale: Scale,
    overrides: &[(String, String)],
) -> Result<Vec<ResolvedConfig>> {
    ProtocolKind::ALL
        .iter()
        .map(|p| {
            let mut entries: Vec<(String, String, ValueSource)> = suite_entries(dataset, attack, scale)
                .into_iter()
                .map(|(k, v)| (k, v, ValueSource::Suite))
                .collect();
            entries.push(("protocol".into(), p.name().into(), ValueSource::Suite));
            entries.extend(overrides.iter().map(|(k, v)| (k.clone(), v.clone(), ValueSource::Override)));
            RunConfig::resolve(&entries)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SuiteOutput {
    pub rows: Vec<MetricsRow>,
    pub node_rows: Vec<NodeRow>,
    pub manifest: serde_json::Value,
}

/// Runs the bundle and concatenates the four tables in protocol order.
pub fn run_suite(configs: &[ResolvedConfig], opts: &RunOptions) -> Result<SuiteOutput> {
    if configs.is_empty() {
        return Err(Error::InvalidArgument("empty suite".into()));
    }
    let mut rows = Vec::new();
    let mut node_rows = Vec::new();
    let mut runs = serde_json::Map::new();
    for c in configs {
        let out = run_experiment(c, opts)?;
        rows.extend(out.rows);
        node_rows.extend(out.node_rows);
        runs.insert(c.config.protocol.name().to_string(), out.manifest);
    }
    Ok(SuiteOutput {
        rows,
        node_rows,
        manifest: serde_json::Value::Object(runs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_bundle_settings() {
        let cfgs = suite_configs(DatasetKind::Mnist, AttackName::BitFlip, Scale::Desk, &[]).unwrap();
        assert_eq!(cfgs.len(), 4);
        let c = &cfgs[2].config;
        assert_eq!((c.rounds, c.attack_end, c.max_train_samples), (300, 200, Some(1000)));
        assert_eq!(c.protocol, ProtocolKind::PdmmCfl);
        assert_eq!(cfgs[0].sources["rounds"], ValueSource::Suite);
    }

    #[test]
    fn quadratic_bundle_runs() {
        let o = [("rounds".to_string(), "5".to_string())];
        let cfgs = suite_configs(DatasetKind::Quadratic, AttackName::Gaussian, Scale::Full, &o).unwrap();
        let out = run_suite(&cfgs, &RunOptions::default()).unwrap();
        assert_eq!(out.rows.len(), 20);
        let labels: std::collections::BTreeSet<&str> = out.rows.iter().map(|r| r.protocol.as_str()).collect();
        assert_eq!(labels.len(), 4);
    }
}
