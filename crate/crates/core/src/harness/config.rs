//! Run configuration: flat `key = value` files, command-line overrides and
//! dataset-dependent defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::adversary::{AttackKind, AttackTarget, ByzantineSelection};
use crate::error::{Error, Result};
use crate::protocols::{DflSchedule, ProtocolKind, ProtocolSettings, SolverKind, WarmStart};
use crate::topology::default_radius;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum DatasetKind {
    Mnist,
    FashionMnist,
    OlivettiCsv,
    Quadratic,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::FashionMnist => "fashion_mnist",
            DatasetKind::OlivettiCsv => "olivetti_csv",
            DatasetKind::Quadratic => "quadratic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            DatasetKind::Mnist,
            DatasetKind::FashionMnist,
            DatasetKind::OlivettiCsv,
            DatasetKind::Quadratic,
        ]
        .into_iter()
        .find(|d| d.name() == s)
    }

    /// Environment variable naming the default IDX directory.
    pub fn dir_env(self) -> Option<&'static str> {
        match self {
            DatasetKind::Mnist => Some("FEDPDMM_MNIST_DIR"),
            DatasetKind::FashionMnist => Some("FEDPDMM_FASHION_MNIST_DIR"),
            _ => None,
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a resolved value came from; echoed in the run manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueSource {
    /// The published experimental setup.
    PublishedSetup,
    /// A default chosen by this implementation.
    ChosenDefault,
    ConfigFile,
    /// Fixed by a comparison bundle.
    Suite,
    Override,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AttackName {
    None,
    BitFlip,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub protocol: ProtocolKind,
    pub n_clients: usize,
    pub rounds: usize,
    pub local_steps: usize,
    pub eta: f64,
    pub c: f64,
    pub sigma: f64,
    pub attack: AttackName,
    pub byzantine_count: usize,
    pub byzantine_selection: ByzantineSelection,
    pub attack_start: usize,
    pub attack_end: usize,
    pub attack_target: AttackTarget,
    pub radius: Option<f64>,
    pub seed: u64,
    pub topology_seed: Option<u64>,
    pub max_train_samples: Option<usize>,
    pub max_test_samples: Option<usize>,
    pub eval_every: usize,
    pub node_eval_every: usize,
    pub hidden_dim: usize,
    pub batch_size: usize,
    pub test_fraction: f64,
    pub warm_start: WarmStart,
    pub literal_dual_lag: bool,
    pub dfl_schedule: DflSchedule,
    pub solver: SolverKind,
    pub quadratic_dim: usize,
    pub data_dir: Option<PathBuf>,
    pub features_csv: Option<PathBuf>,
    pub labels_csv: Option<PathBuf>,
    pub num_classes: usize,
    pub record_wall_time: bool,
}

/// Every key accepted in a config file, in manifest order.
pub const KEYS: &[&str] = &[
    "dataset",
    "protocol",
    "n_clients",
    "rounds",
    "local_steps",
    "eta",
    "c",
    "sigma",
    "attack",
    "byzantine_count",
    "byzantine_selection",
    "attack_start",
    "attack_end",
    "attack_target",
    "radius",
    "seed",
    "topology_seed",
    "max_train_samples",
    "max_test_samples",
    "eval_every",
    "node_eval_every",
    "hidden_dim",
    "batch_size",
    "test_fraction",
    "warm_start",
    "literal_dual_lag",
    "dfl_schedule",
    "solver",
    "quadratic_dim",
    "data_dir",
    "features_csv",
    "labels_csv",
    "num_classes",
    "record_wall_time",
];

const PUBLISHED: &[&str] = &[
    "n_clients",
    "rounds",
    "local_steps",
    "eta",
    "sigma",
    "attack",
    "byzantine_count",
    "attack_start",
    "attack_end",
];

impl RunConfig {
    /// Defaults for `dataset` with `protocol`.
    pub fn defaults(dataset: DatasetKind, protocol: ProtocolKind) -> Self {
        let olivetti = dataset == DatasetKind::OlivettiCsv;
        RunConfig {
            dataset,
            protocol,
            n_clients: 10,
            rounds: 1000,
            local_steps: 10,
            eta: if olivetti { 0.04 } else { 0.05 },
            c: 0.2,
            sigma: if olivetti { 0.2 } else { 0.1 },
            attack: AttackName::BitFlip,
            byzantine_count: 2,
            byzantine_selection: ByzantineSelection::Highest,
            attack_start: 0,
            attack_end: 600,
            attack_target: AttackTarget::Message,
            radius: None,
            seed: 1,
            topology_seed: None,
            max_train_samples: None,
            max_test_samples: None,
            eval_every: 1,
            node_eval_every: 10,
            hidden_dim: if olivetti { 64 } else { 200 },
            batch_size: 0,
            test_fraction: 0.2,
            warm_start: WarmStart::Previous,
            literal_dual_lag: false,
            dfl_schedule: DflSchedule::Colored,
            solver: SolverKind::GradientDescent,
            quadratic_dim: 5,
            data_dir: None,
            features_csv: None,
            labels_csv: None,
            num_classes: 40,
            record_wall_time: false,
        }
    }

    /// Builds a config from `(key, value, source)` entries applied in order
    /// over the dataset defaults. Reports every bad entry and every violated
    /// constraint at once.
    pub fn resolve(entries: &[(String, String, ValueSource)]) -> Result<ResolvedConfig> {
        let mut errors = Vec::new();
        let mut dataset = DatasetKind::Mnist;
        let mut protocol = ProtocolKind::PdmmCfl;
        for (k, v, _) in entries {
            match k.as_str() {
                "dataset" => match DatasetKind::parse(v) {
                    Some(d) => dataset = d,
                    None => errors.push(format!(
                        "dataset: unknown value {v:?} (mnist, fashion_mnist, olivetti_csv, quadratic)"
                    )),
                },
                "protocol" => match ProtocolKind::parse(v) {
                    Some(p) => protocol = p,
                    None => errors.push(format!(
                        "protocol: unknown value {v:?} (fedavg_cfl, fedavg_dfl, pdmm_cfl, pdmm_dfl)"
                    )),
                },
                _ => {}
            }
        }
        let mut cfg = RunConfig::defaults(dataset, protocol);
        let mut sources: BTreeMap<&'static str, ValueSource> = KEYS
            .iter()
            .map(|&k| {
                let s = if PUBLISHED.contains(&k) {
                    ValueSource::PublishedSetup
                } else {
                    ValueSource::ChosenDefault
                };
                (k, s)
            })
            .collect();
        for (k, v, src) in entries {
            match KEYS.iter().find(|&&known| known == k) {
                None => errors.push(format!("{k}: unknown key")),
                Some(&key) => {
                    if let Err(e) = cfg.set(key, v.trim()) {
                        errors.push(format!("{key}: {e}"));
                    }
                    sources.insert(key, *src);
                }
            }
        }
        errors.extend(cfg.violations());
        if errors.is_empty() {
            Ok(ResolvedConfig {
                config: cfg,
                sources,
            })
        } else {
            Err(Error::Config(errors))
        }
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "dataset" | "protocol" => {}
            "n_clients" => self.n_clients = parse_num(v)?,
            "rounds" => self.rounds = parse_num(v)?,
            "local_steps" => self.local_steps = parse_num(v)?,
            "eta" => self.eta = parse_num(v)?,
            "c" => self.c = parse_num(v)?,
            "sigma" => self.sigma = parse_num(v)?,
            "attack" => {
                self.attack = match v {
                    "none" => AttackName::None,
                    "bitflip" => AttackName::BitFlip,
                    "gaussian" => AttackName::Gaussian,
                    _ => return Err(format!("unknown value {v:?} (none, bitflip, gaussian)")),
                }
            }
            "byzantine_count" => self.byzantine_count = parse_num(v)?,
            "byzantine_selection" => {
                self.byzantine_selection = match v {
                    "highest" => ByzantineSelection::Highest,
                    "random" => ByzantineSelection::Random,
                    _ => return Err(format!("unknown value {v:?} (highest, random)")),
                }
            }
            "attack_start" => self.attack_start = parse_num(v)?,
            "attack_end" => self.attack_end = parse_num(v)?,
            "attack_target" => {
                self.attack_target = match v {
                    "model" => AttackTarget::Model,
                    "message" => AttackTarget::Message,
                    _ => return Err(format!("unknown value {v:?} (model, message)")),
                }
            }
            "radius" => self.radius = parse_opt(v)?,
            "seed" => self.seed = parse_num(v)?,
            "topology_seed" => self.topology_seed = parse_opt(v)?,
            "max_train_samples" => self.max_train_samples = parse_opt(v)?,
            "max_test_samples" => self.max_test_samples = parse_opt(v)?,
            "eval_every" => self.eval_every = parse_num(v)?,
            "node_eval_every" => self.node_eval_every = parse_num(v)?,
            "hidden_dim" => self.hidden_dim = parse_num(v)?,
            "batch_size" => self.batch_size = parse_num(v)?,
            "test_fraction" => self.test_fraction = parse_num(v)?,
            "warm_start" => {
                self.warm_start = match v {
                    "anchor" => WarmStart::Anchor,
                    "previous" => WarmStart::Previous,
                    _ => return Err(format!("unknown value {v:?} (anchor, previous)")),
                }
            }
            "literal_dual_lag" => self.literal_dual_lag = parse_bool(v)?,
            "dfl_schedule" => {
                self.dfl_schedule = match v {
                    "colored" => DflSchedule::Colored,
                    "jacobi" => DflSchedule::Jacobi,
                    _ => return Err(format!("unknown value {v:?} (colored, jacobi)")),
                }
            }
            "solver" => {
                self.solver = match v {
                    "gd" => SolverKind::GradientDescent,
                    "exact" => SolverKind::Exact,
                    _ => return Err(format!("unknown value {v:?} (gd, exact)")),
                }
            }
            "quadratic_dim" => self.quadratic_dim = parse_num(v)?,
            "data_dir" => self.data_dir = parse_path(v),
            "features_csv" => self.features_csv = parse_path(v),
            "labels_csv" => self.labels_csv = parse_path(v),
            "num_classes" => self.num_classes = parse_num(v)?,
            "record_wall_time" => self.record_wall_time = parse_bool(v)?,
            _ => unreachable!("key list and setter disagree on {key}"),
        }
        Ok(())
    }

    /// All violated constraints, one message per field.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                v.push(msg);
            }
        };
        check(self.n_clients >= 1, "n_clients: must be at least 1".into());
        check(self.rounds >= 1, "rounds: must be at least 1".into());
        check(self.local_steps >= 1, "local_steps: must be at least 1".into());
        check(
            self.eta > 0.0 && self.eta.is_finite(),
            format!("eta: must be positive and finite, got {}", self.eta),
        );
        check(
            self.c > 0.0 && self.c.is_finite(),
            format!("c: must be positive and finite, got {}", self.c),
        );
        check(
            self.sigma > 0.0 && self.sigma.is_finite(),
            format!("sigma: must be positive and finite, got {}", self.sigma),
        );
        check(
            self.byzantine_count <= self.n_clients,
            format!(
                "byzantine_count: {} exceeds n_clients {}",
                self.byzantine_count, self.n_clients
            ),
        );
        check(
            self.attack_start <= self.attack_end,
            format!(
                "attack_end: {} precedes attack_start {}",
                self.attack_end, self.attack_start
            ),
        );
        if let Some(r) = self.radius {
            check(
                r > 0.0 && r.is_finite(),
                format!("radius: must be positive, got {r}"),
            );
        }
        if !self.protocol.is_centralized() {
            check(
                self.n_clients >= 2,
                "n_clients: a peer graph needs at least 2 nodes".into(),
            );
        }
        check(self.eval_every >= 1, "eval_every: must be at least 1".into());
        check(self.hidden_dim >= 1, "hidden_dim: must be at least 1".into());
        check(
            self.test_fraction > 0.0 && self.test_fraction < 1.0,
            format!("test_fraction: must lie in (0, 1), got {}", self.test_fraction),
        );
        check(
            self.max_train_samples != Some(0),
            "max_train_samples: must be positive".into(),
        );
        check(
            self.max_test_samples != Some(0),
            "max_test_samples: must be positive".into(),
        );
        check(self.quadratic_dim >= 1, "quadratic_dim: must be at least 1".into());
        check(self.num_classes >= 1, "num_classes: must be at least 1".into());
        if self.dataset != DatasetKind::Quadratic {
            check(
                self.solver == SolverKind::GradientDescent,
                "solver: exact is only available for the quadratic dataset".into(),
            );
        }
        if self.dataset == DatasetKind::OlivettiCsv {
            check(
                self.features_csv.is_some(),
                "features_csv: required for olivetti_csv".into(),
            );
            check(
                self.labels_csv.is_some(),
                "labels_csv: required for olivetti_csv".into(),
            );
        }
        v
    }

    pub fn settings(&self) -> ProtocolSettings {
        ProtocolSettings {
            local_steps: self.local_steps,
            eta: self.eta,
            c: self.c,
            warm_start: self.warm_start,
            literal_dual_lag: self.literal_dual_lag,
            dfl_schedule: self.dfl_schedule,
            solver: self.solver,
        }
    }

    pub fn attack_kind(&self) -> AttackKind {
        match self.attack {
            AttackName::None => AttackKind::None,
            AttackName::BitFlip => AttackKind::BitFlip,
            AttackName::Gaussian => AttackKind::GaussianNoise { sigma: self.sigma },
        }
    }

    pub fn resolved_radius(&self) -> f64 {
        self.radius.unwrap_or_else(|| default_radius(self.n_clients))
    }

    /// Value of `key` as it would be written in a config file.
    pub fn value_of(&self, key: &str) -> String {
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
        }
        fn path(v: &Option<PathBuf>) -> String {
            v.as_ref().map_or_else(|| "auto".to_string(), |p| p.display().to_string())
        }
        match key {
            "dataset" => self.dataset.name().into(),
            "protocol" => self.protocol.name().into(),
            "n_clients" => self.n_clients.to_string(),
            "rounds" => self.rounds.to_string(),
            "local_steps" => self.local_steps.to_string(),
            "eta" => self.eta.to_string(),
            "c" => self.c.to_string(),
            "sigma" => self.sigma.to_string(),
            "attack" => match self.attack {
                AttackName::None => "none",
                AttackName::BitFlip => "bitflip",
                AttackName::Gaussian => "gaussian",
            }
            .into(),
            "byzantine_count" => self.byzantine_count.to_string(),
            "byzantine_selection" => match self.byzantine_selection {
                ByzantineSelection::Highest => "highest",
                ByzantineSelection::Random => "random",
            }
            .into(),
            "attack_start" => self.attack_start.to_string(),
            "attack_end" => self.attack_end.to_string(),
            "attack_target" => match self.attack_target {
                AttackTarget::Model => "model",
                AttackTarget::Message => "message",
            }
            .into(),
            "radius" => opt(&self.radius),
            "seed" => self.seed.to_string(),
            "topology_seed" => opt(&self.topology_seed),
            "max_train_samples" => opt(&self.max_train_samples),
            "max_test_samples" => opt(&self.max_test_samples),
            "eval_every" => self.eval_every.to_string(),
            "node_eval_every" => self.node_eval_every.to_string(),
            "hidden_dim" => self.hidden_dim.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "test_fraction" => self.test_fraction.to_string(),
            "warm_start" => match self.warm_start {
                WarmStart::Anchor => "anchor",
                WarmStart::Previous => "previous",
            }
            .into(),
            "literal_dual_lag" => self.literal_dual_lag.to_string(),
            "dfl_schedule" => match self.dfl_schedule {
                DflSchedule::Colored => "colored",
                DflSchedule::Jacobi => "jacobi",
            }
            .into(),
            "solver" => match self.solver {
                SolverKind::GradientDescent => "gd",
                SolverKind::Exact => "exact",
            }
            .into(),
            "quadratic_dim" => self.quadratic_dim.to_string(),
            "data_dir" => path(&self.data_dir),
            "features_csv" => path(&self.features_csv),
            "labels_csv" => path(&self.labels_csv),
            "num_classes" => self.num_classes.to_string(),
            "record_wall_time" => self.record_wall_time.to_string(),
            _ => String::new(),
        }
    }
}

/// A validated config plus the provenance of every field.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub config: RunConfig,
    pub sources: BTreeMap<&'static str, ValueSource>,
}

impl ResolvedConfig {
    pub fn from_config(config: RunConfig) -> Result<Self> {
        let errors = config.violations();
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let defaults = RunConfig::defaults(config.dataset, config.protocol);
        let sources = KEYS
            .iter()
            .map(|&k| {
                let s = if config.value_of(k) != defaults.value_of(k) {
                    ValueSource::Override
                } else if PUBLISHED.contains(&k) {
                    ValueSource::PublishedSetup
                } else {
                    ValueSource::ChosenDefault
                };
                (k, s)
            })
            .collect();
        Ok(ResolvedConfig { config, sources })
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("cannot parse {v:?}: {e}"))
}

fn parse_opt<T: std::str::FromStr>(v: &str) -> std::result::Result<Option<T>, String>
where
    T::Err: fmt::Display,
{
    if v == "auto" || v.is_empty() {
        Ok(None)
    } else {
        parse_num(v).map(Some)
    }
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn parse_path(v: &str) -> Option<PathBuf> {
    (v != "auto" && !v.is_empty()).then(|| PathBuf::from(v))
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are
/// skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => {
                out.push((k.trim().to_string(), v.trim().to_string()))
            }
            _ => errors.push(format!("line {}: expected key = value, got {raw:?}", n + 1)),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::Config(errors))
    }
}

/// Reads a config file and applies `overrides` on top of it.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<ResolvedConfig> {
    let mut entries = Vec::new();
    if let Some(p) = path {
        let text = fs::read_to_string(p)
            .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", p.display())]))?;
        entries.extend(
            parse_config_text(&text)?
                .into_iter()
                .map(|(k, v)| (k, v, ValueSource::ConfigFile)),
        );
    }
    entries.extend(
        overrides
            .iter()
            .map(|(k, v)| (k.clone(), v.clone(), ValueSource::Override)),
    );
    RunConfig::resolve(&entries)
}
