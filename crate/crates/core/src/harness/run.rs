use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde_json::json;

use super::config::{AttackName, DatasetKind, ResolvedConfig, RunConfig};
use super::metrics::{compare_tables, Comparison, MetricsRow, NodeRow};
use crate::adversary::{select_byzantine, AttackSpec};
use crate::data::{
    load_idx, load_matrix_csv, make_quadratic, partition_iid, split_train_test,
    QuadraticProblem,
};
use crate::error::{Error, Result};
use crate::model::{evaluate, init_params, Batch, MlpShape, ParamVector};
use crate::protocols::{
    init_protocol, step, AdversaryHook, NodeObjective, ObjectiveSource, ProtocolState,
};
use crate::seed::{names, SeedStreams};
use crate::topology::{make_random_geometric, make_star, NodeId, Topology};

/// Identifies the build in run manifests.
pub const BUILD_ID: &str = env!("FEDPDMM_BUILD_ID");

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads for per-client work; `None` uses every core.
    pub threads: Option<usize>,
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    pub node_rows: Vec<NodeRow>,
    pub state: ProtocolState,
    pub byzantine: BTreeSet<NodeId>,
    pub manifest: serde_json::Value,
}

enum Workload {
    Mlp {
        shape: MlpShape,
        shards: Vec<Batch>,
        train: Batch,
        test: Batch,
        summary: serde_json::Value,
    },
    Quadratic(QuadraticProblem),
}

const IDX_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Directory holding the IDX files for `dataset`: the configured path, else
/// the dataset's environment variable, else `data/<dataset>`.
pub fn idx_dir(cfg: &RunConfig) -> PathBuf {
    if let Some(d) = &cfg.data_dir {
        return d.clone();
    }
    if let Some(var) = cfg.dataset.dir_env() {
        if let Some(v) = std::env::var_os(var) {
            return PathBuf::from(v);
        }
    }
    PathBuf::from("data").join(cfg.dataset.name())
}

fn idx_file(dir: &Path, name: &str) -> Result<PathBuf> {
    let plain = dir.join(name);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(Error::io(
        &plain,
        std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file (or .gz) not found"),
    ))
}

fn shuffle_rng(streams: &SeedStreams, purpose: u64) -> crate::seed::StreamRng {
    streams.keyed(names::SHUFFLE, &[purpose])
}

fn load_workload(cfg: &RunConfig, streams: &SeedStreams) -> Result<Workload> {
    let (train, test, source) = match cfg.dataset {
        DatasetKind::Quadratic => {
            let mut rng = streams.stream("quadratic");
            return Ok(Workload::Quadratic(make_quadratic(
                cfg.n_clients,
                cfg.quadratic_dim,
                &mut rng,
            )?));
        }
        DatasetKind::Mnist | DatasetKind::FashionMnist => {
            let dir = idx_dir(cfg);
            let files: Vec<PathBuf> = IDX_FILES
                .iter()
                .map(|f| idx_file(&dir, f))
                .collect::<Result<_>>()?;
            let train = load_idx(&files[0], &files[1])?;
            let test = load_idx(&files[2], &files[3])?;
            (train, test, dir.display().to_string())
        }
        DatasetKind::OlivettiCsv => {
            let f = cfg.features_csv.as_ref().expect("validated");
            let l = cfg.labels_csv.as_ref().expect("validated");
            let all = load_matrix_csv(f, l, cfg.num_classes)?;
            let (train, test) = split_train_test(&all, cfg.test_fraction, &mut shuffle_rng(streams, 3))?;
            (train, test, f.display().to_string())
        }
    };
    let num_classes = train.num_classes().max(test.num_classes());
    let train = match cfg.max_train_samples {
        Some(m) => train.truncate_shuffled(m, &mut shuffle_rng(streams, 0)),
        None => train,
    };
    let test = match cfg.max_test_samples {
        Some(m) => test.truncate_shuffled(m, &mut shuffle_rng(streams, 1)),
        None => test,
    };
    let shape = MlpShape::new(train.input_dim(), cfg.hidden_dim, num_classes)?;
    let shards = partition_iid(train.len(), cfg.n_clients, &mut shuffle_rng(streams, 2))?;
    let summary = json!({
        "source": source,
        "train_samples": train.len(),
        "test_samples": test.len(),
        "input_dim": train.input_dim(),
        "num_classes": num_classes,
        "shard_sizes": shards.iter().map(|s| s.indices.len()).collect::<Vec<_>>(),
    });
    Ok(Workload::Mlp {
        shards: shards.iter().map(|s| train.batch_for(&s.indices)).collect(),
        train: train.to_batch(),
        test: test.to_batch(),
        shape,
        summary,
    })
}

struct Objectives<'a> {
    workload: &'a Workload,
    n_clients: usize,
    batch_size: usize,
    local_steps: usize,
    streams: SeedStreams,
}

impl ObjectiveSource for Objectives<'_> {
    fn objective(&self, node: NodeId, round: usize) -> NodeObjective<'_> {
        if node.0 >= self.n_clients {
            return NodeObjective::Zero;
        }
        match self.workload {
            Workload::Quadratic(p) => NodeObjective::Quadratic(p.target(node.0)),
            Workload::Mlp { shape, shards, .. } => {
                let batch = &shards[node.0];
                let step_batches = (self.batch_size > 0 && self.batch_size < batch.len()).then(|| {
                    let mut rng = self
                        .streams
                        .keyed(names::BATCH, &[node.0 as u64, round as u64]);
                    (0..self.local_steps)
                        .map(|_| {
                            let rows = sample(&mut rng, batch.len(), self.batch_size).into_vec();
                            batch.select(&rows)
                        })
                        .collect()
                });
                NodeObjective::Shard {
                    shape,
                    batch,
                    step_batches,
                }
            }
        }
    }
}

struct Eval {
    train_loss: f64,
    train_acc: f64,
    test_loss: f64,
    test_acc: f64,
}

fn quadratic_objective(p: &QuadraticProblem, w: &ParamVector) -> f64 {
    let n = p.n_nodes() as f64;
    p.targets()
        .iter()
        .map(|a| {
            let d = w.distance(a).expect("same dimension");
            0.5 * d * d
        })
        .sum::<f64>()
        / n
}

fn eval_model(workload: &Workload, w: &ParamVector, spread: f64) -> Result<Eval> {
    match workload {
        Workload::Quadratic(p) => Ok(Eval {
            train_loss: quadratic_objective(p, w),
            train_acc: 0.0,
            test_loss: spread,
            test_acc: 0.0,
        }),
        Workload::Mlp {
            shape, train, test, ..
        } => {
            let (tr, te) = rayon::join(|| evaluate(w, shape, train), || evaluate(w, shape, test));
            let (tr, te) = (tr?, te?);
            Ok(Eval {
                train_loss: tr.loss,
                train_acc: tr.accuracy,
                test_loss: te.loss,
                test_acc: te.accuracy,
            })
        }
    }
}

/// Model whose metrics form the headline curve: the server model for CFL,
/// the mean of the honest nodes' models for DFL.
pub fn reference_model(state: &ProtocolState, byzantine: &BTreeSet<NodeId>) -> Result<ParamVector> {
    if let Some(s) = &state.server {
        return Ok(s.w.clone());
    }
    let honest: Vec<&ParamVector> = state
        .nodes
        .iter()
        .filter(|n| !byzantine.contains(&n.id))
        .map(|n| &n.w)
        .collect();
    if honest.is_empty() {
        ParamVector::mean(state.nodes.iter().map(|n| &n.w))
    } else {
        ParamVector::mean(honest)
    }
}

/// Largest distance from the optimum over the server and honest nodes.
fn quadratic_spread(p: &QuadraticProblem, state: &ProtocolState, byzantine: &BTreeSet<NodeId>) -> f64 {
    let honest = state
        .nodes
        .iter()
        .filter(|n| !byzantine.contains(&n.id))
        .map(|n| &n.w);
    p.consensus_error(honest.chain(state.server.iter().map(|s| &s.w)))
}

fn build_topology(cfg: &RunConfig, streams: &SeedStreams) -> Result<Topology> {
    if cfg.protocol.is_centralized() {
        make_star(cfg.n_clients)
    } else {
        let seed = cfg
            .topology_seed
            .unwrap_or_else(|| streams.derived_u64(names::TOPOLOGY));
        make_random_geometric(cfg.n_clients, cfg.resolved_radius(), seed)
    }
}

/// Runs one experiment end to end.
pub fn run_experiment(resolved: &ResolvedConfig, opts: &RunOptions) -> Result<RunOutput> {
    let cfg = &resolved.config;
    let streams = SeedStreams::new(cfg.seed);
    let workload = load_workload(cfg, &streams)?;
    let topology = build_topology(cfg, &streams)?;
    let byzantine = if cfg.attack == AttackName::None {
        BTreeSet::new()
    } else {
        select_byzantine(cfg.n_clients, cfg.byzantine_count, cfg.byzantine_selection, &streams)?
    };
    let attack = AttackSpec {
        kind: cfg.attack_kind(),
        byzantine: byzantine.clone(),
        active_rounds: cfg.attack_start..cfg.attack_end,
        target: cfg.attack_target,
    };
    attack.validate(cfg.n_clients, topology.server())?;

    let init = match &workload {
        Workload::Quadratic(p) => ParamVector::zeros(p.dim()),
        Workload::Mlp { shape, .. } => init_params(shape, &mut streams.stream(names::INIT)),
    };
    let mut state = init_protocol(cfg.protocol, &topology, &init)?;
    let settings = cfg.settings();
    let source = Objectives {
        workload: &workload,
        n_clients: cfg.n_clients,
        batch_size: cfg.batch_size,
        local_steps: cfg.local_steps,
        streams,
    };
    let hook = AdversaryHook {
        spec: &attack,
        streams: &streams,
    };
    let protocol = cfg.protocol.name().to_string();
    let dataset = cfg.dataset.name().to_string();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;

    let (rows, node_rows) = pool.install(|| -> Result<_> {
        let started = Instant::now();
        let mut rows = Vec::with_capacity(cfg.rounds / cfg.eval_every + 1);
        let mut node_rows = Vec::new();
        for t in 0..cfg.rounds {
            step(&mut state, &source, &settings, hook)?;
            let last = t + 1 == cfg.rounds;
            if (t + 1) % cfg.eval_every == 0 || last {
                let spread = match &workload {
                    Workload::Quadratic(p) => quadratic_spread(p, &state, &byzantine),
                    Workload::Mlp { .. } => 0.0,
                };
                let e = eval_model(&workload, &reference_model(&state, &byzantine)?, spread)?;
                rows.push(MetricsRow {
                    round: t,
                    protocol: protocol.clone(),
                    dataset: dataset.clone(),
                    seed: cfg.seed,
                    train_loss: e.train_loss,
                    train_acc: e.train_acc,
                    test_loss: e.test_loss,
                    test_acc: e.test_acc,
                    wall_ms: if cfg.record_wall_time {
                        started.elapsed().as_millis() as u64
                    } else {
                        0
                    },
                });
            }
            let node_due = cfg.node_eval_every > 0 && ((t + 1) % cfg.node_eval_every == 0 || last);
            if state.server.is_none() && node_due {
                let evals: Vec<Eval> = state
                    .nodes
                    .par_iter()
                    .map(|n| {
                        let spread = match &workload {
                            Workload::Quadratic(p) => p.optimum().distance(&n.w)?,
                            Workload::Mlp { .. } => 0.0,
                        };
                        eval_model(&workload, &n.w, spread)
                    })
                    .collect::<Result<_>>()?;
                for (n, e) in state.nodes.iter().zip(evals) {
                    node_rows.push(NodeRow {
                        round: t,
                        protocol: protocol.clone(),
                        dataset: dataset.clone(),
                        seed: cfg.seed,
                        node: n.id.0,
                        byzantine: byzantine.contains(&n.id),
                        train_loss: e.train_loss,
                        train_acc: e.train_acc,
                        test_loss: e.test_loss,
                        test_acc: e.test_acc,
                    });
                }
            }
        }
        Ok((rows, node_rows))
    })?;

    let data_summary = match &workload {
        Workload::Quadratic(p) => json!({
            "nodes": p.n_nodes(),
            "dim": p.dim(),
        }),
        Workload::Mlp { summary, .. } => summary.clone(),
    };
    let manifest = manifest(resolved, &topology, &byzantine, data_summary);
    Ok(RunOutput {
        rows,
        node_rows,
        state,
        byzantine,
        manifest,
    })
}

fn manifest(
    resolved: &ResolvedConfig,
    topology: &Topology,
    byzantine: &BTreeSet<NodeId>,
    data: serde_json::Value,
) -> serde_json::Value {
    let cfg = &resolved.config;
    let config: serde_json::Map<String, serde_json::Value> = super::config::KEYS
        .iter()
        .map(|&k| {
            (
                k.to_string(),
                json!({ "value": cfg.value_of(k), "source": resolved.sources[k] }),
            )
        })
        .collect();
    json!({
        "build": BUILD_ID,
        "config": config,
        "topology": {
            "nodes": topology.n(),
            "server": topology.server().map(|s| s.0),
            "radius": (!cfg.protocol.is_centralized()).then(|| cfg.resolved_radius()),
            "edges": topology.edges(),
        },
        "byzantine": byzantine.iter().map(|b| b.0).collect::<Vec<_>>(),
        "data": data,
    })
}

/// Runs every config and compares each against the first. All configs must
/// share dataset and seed, and produce the same round grid.
pub fn compare_runs(cfgs: &[ResolvedConfig], opts: &RunOptions) -> Result<Vec<Comparison>> {
    let Some(first) = cfgs.first() else {
        return Err(Error::InvalidArgument("no configs to compare".into()));
    };
    for c in cfgs {
        if c.config.dataset != first.config.dataset || c.config.seed != first.config.seed {
            return Err(Error::InvalidArgument(
                "compared runs must share dataset and seed".into(),
            ));
        }
    }
    let runs: Vec<Vec<MetricsRow>> = cfgs
        .iter()
        .map(|c| run_experiment(c, opts).map(|o| o.rows))
        .collect::<Result<_>>()?;
    runs.iter().map(|r| compare_tables(&runs[0], r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ValueSource;
    use crate::protocols::ProtocolKind;

    fn quad(protocol: &str, extra: &[(&str, &str)]) -> ResolvedConfig {
        let e: Vec<(String, String, ValueSource)> = [
            ("dataset", "quadratic"),
            ("protocol", protocol),
            ("attack", "none"),
            ("rounds", "300"),
            ("solver", "exact"),
        ]
        .iter()
        .chain(extra)
        .map(|(k, v)| (k.to_string(), v.to_string(), ValueSource::Override))
        .collect();
        RunConfig::resolve(&e).unwrap()
    }

    #[test]
    fn quadratic_pdmm_cfl_reaches_consensus() {
        let out = run_experiment(&quad("pdmm_cfl", &[]), &RunOptions::default()).unwrap();
        assert_eq!(out.rows.len(), 300);
        assert!(out.rows.last().unwrap().test_loss < 1e-8);
        assert!(out.rows.windows(2).all(|w| w[0].round < w[1].round));
    }

    #[test]
    fn eval_grid_includes_last_round() {
        let out = run_experiment(&quad("fedavg_dfl", &[("rounds", "7"), ("eval_every", "3")]), &RunOptions::default())
            .unwrap();
        let rounds: Vec<usize> = out.rows.iter().map(|r| r.round).collect();
        assert_eq!(rounds, vec![2, 5, 6]);
        assert!(!out.node_rows.is_empty());
    }

    #[test]
    fn identical_configs_compare_to_zero() {
        let c = quad("pdmm_dfl", &[("rounds", "20")]);
        let cmp = compare_runs(&[c.clone(), c], &RunOptions::default()).unwrap();
        assert!(cmp[1].deltas.iter().all(|d| d.train_loss == 0.0 && d.test_loss == 0.0));
    }

    #[test]
    fn compare_rejects_different_seeds() {
        let a = quad("pdmm_cfl", &[("rounds", "5")]);
        let b = quad("pdmm_cfl", &[("rounds", "5"), ("seed", "2")]);
        assert!(compare_runs(&[a, b], &RunOptions::default()).is_err());
    }

    #[test]
    fn missing_idx_directory_is_a_data_error() {
        let mut cfg = RunConfig::defaults(DatasetKind::Mnist, ProtocolKind::FedAvgCfl);
        cfg.data_dir = Some(PathBuf::from("/nonexistent/fedpdmm"));
        let r = ResolvedConfig::from_config(cfg).unwrap();
        let err = run_experiment(&r, &RunOptions::default()).unwrap_err();
        assert_eq!(err.category(), crate::error::ErrorCategory::Data);
    }

    #[test]
    fn manifest_records_topology_and_sources() {
        let out = run_experiment(&quad("pdmm_dfl", &[("rounds", "2")]), &RunOptions::default()).unwrap();
        let m = &out.manifest;
        assert_eq!(m["config"]["rounds"]["source"], "override");
        assert_eq!(m["config"]["c"]["source"], "chosen-default");
        assert_eq!(m["topology"]["nodes"], 10);
        assert!(m["topology"]["edges"].as_array().unwrap().len() >= 9);
    }
}
