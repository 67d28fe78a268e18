//! The four protocol engines: FedAvg and PDMM, each over a star (CFL) or a
//! peer graph (DFL). Every engine advances shared state by one synchronous
//! round.
//!
//! Per-node work inside a phase runs on the rayon pool of the caller. Results
//! are collected in node order and every reduction runs in ascending node id,
//! so the outcome does not depend on the thread count.
//!
//! PDMM transmissions: after its primal update node `i` sends
//! `y_{i|j} = 2 w_i - y_{j|i}` to each neighbour `j`, where `y_{j|i}` is the
//! anchor it holds from `j`. The CFL server is a node with a zero objective,
//! whose prox is exactly the mean of its anchors.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{AttackSpec, AttackTarget, Corruption};
use crate::error::{Error, Result};
use crate::localsolve::{
    local_gd, prox_gd, prox_quadratic_multi, prox_zero, ProxProblem, QuadraticObjective,
    ShardObjective,
};
use crate::model::{Batch, MlpShape, ParamVector};
use crate::seed::SeedStreams;
use crate::topology::{NodeId, Topology, TopologyKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtocolKind {
    FedAvgCfl,
    FedAvgDfl,
    PdmmCfl,
    PdmmDfl,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 4] = [
        ProtocolKind::FedAvgCfl,
        ProtocolKind::FedAvgDfl,
        ProtocolKind::PdmmCfl,
        ProtocolKind::PdmmDfl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::FedAvgCfl => "fedavg_cfl",
            ProtocolKind::FedAvgDfl => "fedavg_dfl",
            ProtocolKind::PdmmCfl => "pdmm_cfl",
            ProtocolKind::PdmmDfl => "pdmm_dfl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_centralized(self) -> bool {
        matches!(self, ProtocolKind::FedAvgCfl | ProtocolKind::PdmmCfl)
    }

    pub fn is_pdmm(self) -> bool {
        matches!(self, ProtocolKind::PdmmCfl | ProtocolKind::PdmmDfl)
    }
}

/// Where the gradient-descent prox starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WarmStart {
    /// The mean of the node's anchors (the received variable itself for a
    /// single anchor).
    Anchor,
    /// The node's local model from the previous round.
    Previous,
}

/// Update order of PDMM on a peer graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DflSchedule {
    /// Colour classes of the greedy colouring update in turn; a class sees
    /// messages sent by earlier classes in the same round.
    Colored,
    /// All nodes update from the previous round's messages.
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverKind {
    /// `local_steps` full-batch gradient steps of size `eta`.
    GradientDescent,
    /// Closed-form minimizer; quadratic and zero objectives only.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSettings {
    pub local_steps: usize,
    pub eta: f64,
    pub c: f64,
    pub warm_start: WarmStart,
    /// Reflect the server (or a later-phase node) against the anchor it
    /// held at the start of the round rather than the one just received.
    pub literal_dual_lag: bool,
    pub dfl_schedule: DflSchedule,
    pub solver: SolverKind,
}

impl Default for ProtocolSettings {
    fn default() -> Self {
        ProtocolSettings {
            local_steps: 10,
            eta: 0.05,
            c: 0.2,
            warm_start: WarmStart::Previous,
            literal_dual_lag: false,
            dfl_schedule: DflSchedule::Colored,
            solver: SolverKind::GradientDescent,
        }
    }
}

/// A node's local loss for one round.
pub enum NodeObjective<'a> {
    Shard {
        shape: &'a MlpShape,
        batch: &'a Batch,
        step_batches: Option<Vec<Batch>>,
    },
    Quadratic(&'a ParamVector),
    Zero,
}

impl NodeObjective<'_> {
    fn solve_prox(
        &self,
        anchors: &[&ParamVector],
        start: &ParamVector,
        settings: &ProtocolSettings,
    ) -> Result<ParamVector> {
        match (self, settings.solver) {
            (NodeObjective::Zero, _) => prox_zero(anchors),
            (NodeObjective::Quadratic(a), SolverKind::Exact) => {
                prox_quadratic_multi(a, anchors, settings.c)
            }
            (NodeObjective::Quadratic(a), SolverKind::GradientDescent) => prox_gd(
                &ProxProblem {
                    objective: &QuadraticObjective { target: a },
                    anchors,
                    c: settings.c,
                },
                start,
                settings.local_steps,
                settings.eta,
            ),
            (NodeObjective::Shard { .. }, SolverKind::Exact) => Err(Error::InvalidArgument(
                "the exact solver has no closed form for the MLP objective".into(),
            )),
            (
                NodeObjective::Shard {
                    shape,
                    batch,
                    step_batches,
                },
                SolverKind::GradientDescent,
            ) => prox_gd(
                &ProxProblem {
                    objective: &ShardObjective {
                        shape,
                        batch,
                        step_batches: step_batches.as_deref(),
                    },
                    anchors,
                    c: settings.c,
                },
                start,
                settings.local_steps,
                settings.eta,
            ),
        }
    }

    fn solve_local(&self, start: &ParamVector, settings: &ProtocolSettings) -> Result<ParamVector> {
        match (self, settings.solver) {
            (NodeObjective::Zero, _) => Ok(start.clone()),
            (NodeObjective::Quadratic(a), SolverKind::Exact) => Ok((*a).clone()),
            (NodeObjective::Quadratic(a), SolverKind::GradientDescent) => local_gd(
                &QuadraticObjective { target: a },
                start,
                settings.local_steps,
                settings.eta,
            ),
            (NodeObjective::Shard { .. }, SolverKind::Exact) => Err(Error::InvalidArgument(
                "the exact solver has no closed form for the MLP objective".into(),
            )),
            (
                NodeObjective::Shard {
                    shape,
                    batch,
                    step_batches,
                },
                SolverKind::GradientDescent,
            ) => local_gd(
                &ShardObjective {
                    shape,
                    batch,
                    step_batches: step_batches.as_deref(),
                },
                start,
                settings.local_steps,
                settings.eta,
            ),
        }
    }
}

/// Supplies each node's objective for a round.
pub trait ObjectiveSource: Sync {
    fn objective(&self, node: NodeId, round: usize) -> NodeObjective<'_>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: NodeId,
    pub w: ParamVector,
    /// Latest variable received from each neighbour (`y_{j|i}`).
    pub duals: BTreeMap<NodeId, ParamVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub w: ParamVector,
    /// Latest `y_{i|s}` received from each client.
    pub duals: BTreeMap<NodeId, ParamVector>,
}

/// Complete state of one protocol run.
///
/// For CFL, `nodes` holds the clients and `server` the aggregator. For DFL,
/// `nodes` holds every graph node and `server` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolState {
    pub kind: ProtocolKind,
    pub topology: Topology,
    pub server: Option<ServerState>,
    pub nodes: Vec<ClientState>,
    pub round: usize,
}

/// One directed transmission, recorded for audit.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageRecord {
    pub from: NodeId,
    pub to: NodeId,
    pub corrupted: bool,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub round: usize,
    pub messages: Vec<MessageRecord>,
}

/// Attack schedule plus the streams its noise is drawn from.
#[derive(Debug, Clone, Copy)]
pub struct AdversaryHook<'a> {
    pub spec: &'a AttackSpec,
    pub streams: &'a SeedStreams,
}

impl AdversaryHook<'_> {
    fn corruption(&self, round: usize, node: NodeId, dim: usize) -> Option<Corruption> {
        self.spec.corruption(round, node, dim, self.streams)
    }
}

/// Sets every model to `init` and every dual variable to zero.
///
/// `topology` must be a star for CFL kinds; its server becomes the
/// aggregator and the remaining nodes the clients.
pub fn init_protocol(
    kind: ProtocolKind,
    topology: &Topology,
    init: &ParamVector,
) -> Result<ProtocolState> {
    let zero = ParamVector::zeros(init.len());
    let node_state = |i: usize, neighbors: &[NodeId]| ClientState {
        id: NodeId(i),
        w: init.clone(),
        duals: neighbors.iter().map(|&j| (j, zero.clone())).collect(),
    };
    if kind.is_centralized() {
        let server = topology.server().ok_or_else(|| {
            Error::InvalidArgument(format!("{} requires a star topology", kind.name()))
        })?;
        if server.0 != topology.n() - 1 {
            return Err(Error::InvalidArgument(
                "the CFL server must carry the highest node id".into(),
            ));
        }
        let n_clients = topology.n() - 1;
        let nodes = (0..n_clients).map(|i| node_state(i, &[server])).collect();
        Ok(ProtocolState {
            kind,
            topology: topology.clone(),
            server: Some(ServerState {
                w: init.clone(),
                duals: (0..n_clients).map(|i| (NodeId(i), zero.clone())).collect(),
            }),
            nodes,
            round: 0,
        })
    } else {
        let nodes = (0..topology.n())
            .map(|i| node_state(i, topology.neighbors_of(i)))
            .collect();
        Ok(ProtocolState {
            kind,
            topology: topology.clone(),
            server: None,
            nodes,
            round: 0,
        })
    }
}

fn diverged(round: usize, node: NodeId, err: Error) -> Error {
    match err {
        Error::NonFiniteGradient { step } => Error::Divergence {
            round,
            node: node.0,
            detail: format!("non-finite gradient at local step {step}"),
        },
        other => other,
    }
}

fn ensure_finite(v: &ParamVector, round: usize, node: NodeId, what: &str) -> Result<()> {
    match v.first_non_finite() {
        None => Ok(()),
        Some(k) => Err(Error::Divergence {
            round,
            node: node.0,
            detail: format!("{what} has non-finite entry {} at index {k}", v[k]),
        }),
    }
}

/// Advances `state` by one round of its protocol.
pub fn step(
    state: &mut ProtocolState,
    source: &dyn ObjectiveSource,
    settings: &ProtocolSettings,
    adversary: AdversaryHook<'_>,
) -> Result<RoundOutcome> {
    let outcome = match state.kind {
        ProtocolKind::FedAvgCfl => fedavg_cfl_round(state, source, settings, adversary),
        ProtocolKind::FedAvgDfl => fedavg_dfl_round(state, source, settings, adversary),
        ProtocolKind::PdmmCfl => pdmm_cfl_round(state, source, settings, adversary),
        ProtocolKind::PdmmDfl => pdmm_dfl_round(state, source, settings, adversary),
    }?;
    state.round += 1;
    Ok(outcome)
}

fn require_kind(state: &ProtocolState, kind: ProtocolKind) -> Result<()> {
    if state.kind != kind {
        return Err(Error::InvalidArgument(format!(
            "state belongs to {}, not {}",
            state.kind.name(),
            kind.name()
        )));
    }
    Ok(())
}

/// Clients run local gradient descent from the global model; the server
/// averages the (possibly corrupted) uploads with uniform weights.
pub fn fedavg_cfl_round(
    state: &mut ProtocolState,
    source: &dyn ObjectiveSource,
    settings: &ProtocolSettings,
    adversary: AdversaryHook<'_>,
) -> Result<RoundOutcome> {
    require_kind(state, ProtocolKind::FedAvgCfl)?;
    let round = state.round;
    let server_id = state.topology.server().expect("CFL state has a star");
    let server = state.server.as_ref().expect("CFL state has a server");
    let global = &server.w;

    let results: Vec<(ParamVector, ParamVector, bool)> = state
        .nodes
        .par_iter()
        .map(|node| {
            let w = source
                .objective(node.id, round)
                .solve_local(global, settings)
                .map_err(|e| diverged(round, node.id, e))?;
            let (sent, corrupted) = match adversary.corruption(round, node.id, w.len()) {
                Some(c) => (c.apply(&w), true),
                None => (w.clone(), false),
            };
            ensure_finite(&sent, round, node.id, "upload")?;
            Ok((w, sent, corrupted))
        })
        .collect::<Result<_>>()?;

    let mut messages = Vec::with_capacity(2 * results.len());
    for (node, (_, sent, corrupted)) in state.nodes.iter().zip(&results) {
        messages.push(MessageRecord {
            from: node.id,
            to: server_id,
            corrupted: *corrupted,
            norm: sent.l2_norm(),
        });
    }
    let aggregate = ParamVector::mean(results.iter().map(|(_, sent, _)| sent))?;
    ensure_finite(&aggregate, round, server_id, "aggregate")?;
    for (node, (w, _, _)) in state.nodes.iter_mut().zip(results) {
        node.w = w;
        messages.push(MessageRecord {
            from: server_id,
            to: node.id,
            corrupted: false,
            norm: aggregate.l2_norm(),
        });
    }
    state.server.as_mut().expect("CFL state has a server").w = aggregate;
    Ok(RoundOutcome { round, messages })
}

/// Every node runs local gradient descent from its own model, sends the
/// result to its neighbours, and replaces its model with the mean of its own
/// update and everything it received.
pub fn fedavg_dfl_round(
    state: &mut ProtocolState,
    source: &dyn ObjectiveSource,
    settings: &ProtocolSettings,
    adversary: AdversaryHook<'_>,
) -> Result<RoundOutcome> {
    require_kind(state, ProtocolKind::FedAvgDfl)?;
    let round = state.round;

    let results: Vec<(ParamVector, ParamVector, bool)> = state
        .nodes
        .par_iter()
        .map(|node| {
            let w = source
                .objective(node.id, round)
                .solve_local(&node.w, settings)
                .map_err(|e| diverged(round, node.id, e))?;
            let (sent, corrupted) = match adversary.corruption(round, node.id, w.len()) {
                Some(c) => (c.apply(&w), true),
                None => (w.clone(), false),
            };
            ensure_finite(&sent, round, node.id, "broadcast")?;
            Ok((w, sent, corrupted))
        })
        .collect::<Result<_>>()?;

    let topology = &state.topology;
    let mut messages = Vec::new();
    let new_models: Vec<ParamVector> = (0..state.nodes.len())
        .into_par_iter()
        .map(|i| {
            let neighbors = topology.neighbors_of(i);
            let mut ids: Vec<usize> = neighbors.iter().map(|j| j.0).collect();
            ids.push(i);
            ids.sort_unstable();
            ParamVector::mean(ids.iter().map(|&k| {
                if k == i {
                    &results[k].0
                } else {
                    &results[k].1
                }
            }))
        })
        .collect::<Result<_>>()?;
    for (i, node) in state.nodes.iter().enumerate() {
        for &j in topology.neighbors_of(i) {
            messages.push(MessageRecord {
                from: node.id,
                to: j,
                corrupted: results[i].2,
                norm: results[i].1.l2_norm(),
            });
        }
    }
    for (node, w) in state.nodes.iter_mut().zip(new_models) {
        node.w = w;
    }
    Ok(RoundOutcome { round, messages })
}

/// Primal update of one PDMM node followed by the reflected messages it
/// sends. `reflect_against` supplies the anchor each message reflects.
struct PdmmNodeResult {
    w: ParamVector,
    outgoing: Vec<(NodeId, ParamVector)>,
    corrupted: bool,
}

fn pdmm_node_update(
    node: &ClientState,
    objective: NodeObjective<'_>,
    reflect_against: &BTreeMap<NodeId, ParamVector>,
    settings: &ProtocolSettings,
    adversary: AdversaryHook<'_>,
    round: usize,
) -> Result<PdmmNodeResult> {
    let anchors: Vec<&ParamVector> = node.duals.values().collect();
    let start = match settings.warm_start {
        WarmStart::Previous => node.w.clone(),
        WarmStart::Anchor => ParamVector::mean(anchors.iter().copied())?,
    };
    let w = objective
        .solve_prox(&anchors, &start, settings)
        .map_err(|e| diverged(round, node.id, e))?;
    ensure_finite(&w, round, node.id, "local model")?;

    let corruption = adversary.corruption(round, node.id, w.len());
    let model_attack = adversary.spec.target == AttackTarget::Model;
    let transmitted = match (&corruption, model_attack) {
        (Some(c), true) => c.apply(&w),
        _ => w.clone(),
    };
    let mut outgoing = Vec::with_capacity(reflect_against.len());
    for (&j, anchor) in reflect_against {
        let mut y = transmitted.reflect(anchor)?;
        if let (Some(c), false) = (&corruption, model_attack) {
            y = c.apply(&y);
        }
        ensure_finite(&y, round, node.id, "dual message")?;
        outgoing.push((j, y));
    }
    Ok(PdmmNodeResult {
        w,
        outgoing,
        corrupted: corruption.is_some(),
    })
}

/// PDMM with a central aggregator.
///
/// Each client solves its prox anchored at `y_{s|i}` and sends
/// `y_{i|s} = 2 w_i - y_{s|i}`; the server sets `w_s` to the mean of the
/// `y_{i|s}` and returns `y_{s|i} = 2 w_s - y_{i|s}`.
pub fn pdmm_cfl_round(
    state: &mut ProtocolState,
    source: &dyn ObjectiveSource,
    settings: &ProtocolSettings,
    adversary: AdversaryHook<'_>,
) -> Result<RoundOutcome> {
    require_kind(state, ProtocolKind::PdmmCfl)?;
    let round = state.round;
    let server_id = state.topology.server().expect("CFL state has a star");

    let results: Vec<PdmmNodeResult> = state
        .nodes
        .par_iter()
        .map(|node| {
            pdmm_node_update(
                node,
                source.objective(node.id, round),
                &node.duals,
                settings,
                adversary,
                round,
            )
        })
        .collect::<Result<_>>()?;

    let mut messages = Vec::with_capacity(2 * results.len());
    let server = state.server.as_mut().expect("CFL state has a server");
    let previous = settings.literal_dual_lag.then(|| server.duals.clone());
    for (node, r) in state.nodes.iter().zip(&results) {
        let (to, y) = &r.outgoing[0];
        debug_assert_eq!(*to, server_id);
        messages.push(MessageRecord {
            from: node.id,
            to: server_id,
            corrupted: r.corrupted,
            norm: y.l2_norm(),
        });
        server.duals.insert(node.id, y.clone());
    }
    let received: Vec<&ParamVector> = server.duals.values().collect();
    server.w = prox_zero(&received)?;
    ensure_finite(&server.w, round, server_id, "server model")?;
    let reflect_against = previous.as_ref().unwrap_or(&server.duals);
    let replies: Vec<(NodeId, ParamVector)> = reflect_against
        .iter()
        .map(|(&i, y)| Ok((i, server.w.reflect(y)?)))
        .collect::<Result<_>>()?;

    for ((node, r), (i, reply)) in state.nodes.iter_mut().zip(results).zip(replies) {
        debug_assert_eq!(node.id, i);
        ensure_finite(&reply, round, server_id, "server dual")?;
        messages.push(MessageRecord {
            from: server_id,
            to: i,
            corrupted: false,
            norm: reply.l2_norm(),
        });
        node.w = r.w;
        node.duals.insert(server_id, reply);
    }
    Ok(RoundOutcome { round, messages })
}

/// PDMM restricted to graph neighbours.
///
/// Node `i` solves its prox against all anchors `y_{j|i}` (penalty gradient
/// `c * sum_j (w - y_{j|i})`) and sends `y_{i|j} = 2 w_i - y_{j|i}` to each
/// neighbour. See [`DflSchedule`] for the update order.
pub fn pdmm_dfl_round(
    state: &mut ProtocolState,
    source: &dyn ObjectiveSource,
    settings: &ProtocolSettings,
    adversary: AdversaryHook<'_>,
) -> Result<RoundOutcome> {
    require_kind(state, ProtocolKind::PdmmDfl)?;
    if let TopologyKind::Star { server } = state.topology.kind() {
        if adversary.spec.byzantine.contains(&server) {
            return Err(Error::InvalidArgument("the hub cannot be Byzantine".into()));
        }
    }
    let round = state.round;
    let phases = match settings.dfl_schedule {
        DflSchedule::Colored => state.topology.color_classes(),
        DflSchedule::Jacobi => vec![(0..state.nodes.len()).collect()],
    };
    let start_of_round: Option<Vec<BTreeMap<NodeId, ParamVector>>> = settings
        .literal_dual_lag
        .then(|| state.nodes.iter().map(|n| n.duals.clone()).collect());

    let mut messages = Vec::new();
    for phase in phases {
        let nodes = &state.nodes;
        let results: Vec<PdmmNodeResult> = phase
            .par_iter()
            .map(|&i| {
                let node = &nodes[i];
                let reflect_against = start_of_round.as_ref().map_or(&node.duals, |s| &s[i]);
                pdmm_node_update(
                    node,
                    source.objective(node.id, round),
                    reflect_against,
                    settings,
                    adversary,
                    round,
                )
            })
            .collect::<Result<_>>()?;
        for (&i, r) in phase.iter().zip(results) {
            for (j, y) in r.outgoing {
                messages.push(MessageRecord {
                    from: NodeId(i),
                    to: j,
                    corrupted: r.corrupted,
                    norm: y.l2_norm(),
                });
                state.nodes[j.0].duals.insert(NodeId(i), y);
            }
            state.nodes[i].w = r.w;
        }
    }
    Ok(RoundOutcome { round, messages })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{AttackKind, AttackTarget};
    use crate::data::{make_quadratic, QuadraticProblem};
    use crate::topology::{make_random_geometric, make_star, default_radius};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Quad<'a> {
        problem: &'a QuadraticProblem,
        hub: Option<usize>,
    }

    impl ObjectiveSource for Quad<'_> {
        fn objective(&self, node: NodeId, _round: usize) -> NodeObjective<'_> {
            if Some(node.0) == self.hub {
                NodeObjective::Zero
            } else {
                NodeObjective::Quadratic(self.problem.target(node.0))
            }
        }
    }

    struct Zeros;

    impl ObjectiveSource for Zeros {
        fn objective(&self, _node: NodeId, _round: usize) -> NodeObjective<'_> {
            NodeObjective::Zero
        }
    }

    fn no_attack() -> AttackSpec {
        AttackSpec::none()
    }

    fn hook<'a>(spec: &'a AttackSpec, streams: &'a SeedStreams) -> AdversaryHook<'a> {
        AdversaryHook { spec, streams }
    }

    fn exact(c: f64) -> ProtocolSettings {
        ProtocolSettings {
            c,
            solver: SolverKind::Exact,
            ..ProtocolSettings::default()
        }
    }

    fn scalars(values: &[f64]) -> QuadraticProblem {
        QuadraticProblem::from_targets(values.iter().map(|&v| ParamVector::new(vec![v])).collect())
            .unwrap()
    }

    #[test]
    fn fedavg_two_clients_average() {
        let problem = scalars(&[1.0, 3.0]);
        let t = make_star(2).unwrap();
        let mut s = init_protocol(ProtocolKind::FedAvgCfl, &t, &ParamVector::zeros(1)).unwrap();
        let spec = no_attack();
        let streams = SeedStreams::new(0);
        let out = step(&mut s, &Quad { problem: &problem, hub: None }, &exact(0.2), hook(&spec, &streams)).unwrap();
        assert_eq!(s.server.unwrap().w.as_slice(), &[2.0]);
        assert_eq!(out.messages.len(), 4);
    }

    #[test]
    fn fedavg_negating_one_of_two_identical_updates_cancels() {
        let problem = scalars(&[1.5, 1.5]);
        let t = make_star(2).unwrap();
        let mut s = init_protocol(ProtocolKind::FedAvgCfl, &t, &ParamVector::zeros(1)).unwrap();
        let spec = AttackSpec {
            kind: AttackKind::BitFlip,
            byzantine: [NodeId(1)].into(),
            active_rounds: 0..1,
            target: AttackTarget::Model,
        };
        let streams = SeedStreams::new(0);
        step(&mut s, &Quad { problem: &problem, hub: None }, &exact(0.2), hook(&spec, &streams)).unwrap();
        assert_eq!(s.server.unwrap().w.as_slice(), &[0.0]);
    }

    #[test]
    fn fedavg_dfl_path_graph_only_mixes_neighbours() {
        let problem = scalars(&[0.0, 3.0, 300.0]);
        let t = Topology::from_edges(3, TopologyKind::Peer, &[(0, 1), (1, 2)]).unwrap();
        let mut s = init_protocol(ProtocolKind::FedAvgDfl, &t, &ParamVector::zeros(1)).unwrap();
        let spec = no_attack();
        let streams = SeedStreams::new(0);
        let out = step(&mut s, &Quad { problem: &problem, hub: None }, &exact(0.2), hook(&spec, &streams)).unwrap();
        assert_eq!(s.nodes[0].w.as_slice(), &[1.5]);
        assert_eq!(s.nodes[1].w.as_slice(), &[101.0]);
        assert_eq!(out.messages.len(), 4);
    }

    #[test]
    fn fedavg_dfl_complete_graph_matches_cfl() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let problem = make_quadratic(4, 3, &mut rng).unwrap();
        let settings = ProtocolSettings {
            solver: SolverKind::GradientDescent,
            ..ProtocolSettings::default()
        };
        let spec = no_attack();
        let streams = SeedStreams::new(0);
        let w0 = ParamVector::new(vec![0.1, 0.2, 0.3]);
        let complete: Vec<(usize, usize)> =
            (0..4).flat_map(|i| (i + 1..4).map(move |j| (i, j))).collect();
        let peer = Topology::from_edges(4, TopologyKind::Peer, &complete).unwrap();
        let mut dfl = init_protocol(ProtocolKind::FedAvgDfl, &peer, &w0).unwrap();
        let mut cfl = init_protocol(ProtocolKind::FedAvgCfl, &make_star(4).unwrap(), &w0).unwrap();
        let src = Quad { problem: &problem, hub: None };
        step(&mut dfl, &src, &settings, hook(&spec, &streams)).unwrap();
        step(&mut cfl, &src, &settings, hook(&spec, &streams)).unwrap();
        let global = cfl.server.unwrap().w;
        for n in &dfl.nodes {
            assert_eq!(n.w.to_bytes(), global.to_bytes());
        }
    }

    #[test]
    fn pdmm_single_client_relations() {
        let problem = scalars(&[4.0]);
        let t = make_star(1).unwrap();
        let mut s = init_protocol(ProtocolKind::PdmmCfl, &t, &ParamVector::zeros(1)).unwrap();
        let spec = no_attack();
        let streams = SeedStreams::new(0);
        let y_si = s.nodes[0].duals[&NodeId(1)].clone();
        step(&mut s, &Quad { problem: &problem, hub: None }, &exact(0.5), hook(&spec, &streams)).unwrap();
        let server = s.server.as_ref().unwrap();
        let y_is = &server.duals[&NodeId(0)];
        assert_eq!(y_is, &s.nodes[0].w.reflect(&y_si).unwrap());
        assert_eq!(&server.w, y_is);
    }

    #[test]
    fn pdmm_zero_objectives_anchor_identically() {
        let t = make_star(3).unwrap();
        let w0 = ParamVector::new(vec![1.0, -2.0]);
        let mut s = init_protocol(ProtocolKind::PdmmCfl, &t, &w0).unwrap();
        s.server.as_mut().unwrap().w = ParamVector::new(vec![7.0, 7.0]);
        let spec = no_attack();
        let streams = SeedStreams::new(0);
        step(&mut s, &Zeros, &exact(1.0), hook(&spec, &streams)).unwrap();
        let first = &s.nodes[0].duals[&NodeId(3)];
        assert!(s.nodes.iter().all(|n| &n.duals[&NodeId(3)] == first));
    }

    #[test]
    fn pdmm_cfl_quadratic_reaches_mean() {
        let problem = scalars(&[1.0, 2.0, 3.0]);
        let t = make_star(3).unwrap();
        let mut s = init_protocol(ProtocolKind::PdmmCfl, &t, &ParamVector::zeros(1)).unwrap();
        let spec = no_attack();
        let streams = SeedStreams::new(0);
        let src = Quad { problem: &problem, hub: None };
        for _ in 0..300 {
            step(&mut s, &src, &exact(0.5), hook(&spec, &streams)).unwrap();
        }
        assert!((s.server.as_ref().unwrap().w[0] - 2.0).abs() < 1e-8);
        assert!(problem.consensus_error(s.nodes.iter().map(|n| &n.w)) < 1e-8);
    }

    #[test]
    fn pdmm_dfl_two_nodes_reach_mean() {
        let problem = scalars(&[-1.0, 5.0]);
        let t = Topology::from_edges(2, TopologyKind::Peer, &[(0, 1)]).unwrap();
        let spec = no_attack();
        let streams = SeedStreams::new(0);
        let src = Quad { problem: &problem, hub: None };
        for schedule in [DflSchedule::Colored, DflSchedule::Jacobi] {
            let mut s = init_protocol(ProtocolKind::PdmmDfl, &t, &ParamVector::zeros(1)).unwrap();
            let settings = ProtocolSettings {
                dfl_schedule: schedule,
                ..exact(1.0)
            };
            for _ in 0..200 {
                step(&mut s, &src, &settings, hook(&spec, &streams)).unwrap();
            }
            assert!(problem.consensus_error(s.nodes.iter().map(|n| &n.w)) < 1e-8, "{schedule:?}");
        }
    }

    #[test]
    fn pdmm_dfl_on_rgg_reaches_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let problem = make_quadratic(10, 5, &mut rng).unwrap();
        let t = make_random_geometric(10, default_radius(10), 3).unwrap();
        let mut s = init_protocol(ProtocolKind::PdmmDfl, &t, &ParamVector::zeros(5)).unwrap();
        let spec = no_attack();
        let streams = SeedStreams::new(0);
        let src = Quad { problem: &problem, hub: None };
        for _ in 0..500 {
            step(&mut s, &src, &exact(0.5), hook(&spec, &streams)).unwrap();
        }
        assert!(problem.consensus_error(s.nodes.iter().map(|n| &n.w)) < 1e-8);
    }

    #[test]
    fn star_dfl_with_zero_hub_equals_cfl() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let problem = make_quadratic(5, 3, &mut rng).unwrap();
        let t = make_star(5).unwrap();
        let w0 = ParamVector::new(vec![0.5, 0.0, -0.5]);
        let settings = ProtocolSettings {
            solver: SolverKind::GradientDescent,
            warm_start: WarmStart::Previous,
            ..ProtocolSettings::default()
        };
        let spec = AttackSpec {
            kind: AttackKind::GaussianNoise { sigma: 0.3 },
            byzantine: [NodeId(3), NodeId(4)].into(),
            active_rounds: 0..20,
            target: AttackTarget::Message,
        };
        let streams = SeedStreams::new(9);
        let mut cfl = init_protocol(ProtocolKind::PdmmCfl, &t, &w0).unwrap();
        let mut dfl = init_protocol(ProtocolKind::PdmmDfl, &t, &w0).unwrap();
        let cfl_src = Quad { problem: &problem, hub: None };
        let dfl_src = Quad { problem: &problem, hub: Some(5) };
        for _ in 0..40 {
            step(&mut cfl, &cfl_src, &settings, hook(&spec, &streams)).unwrap();
            step(&mut dfl, &dfl_src, &settings, hook(&spec, &streams)).unwrap();
            let server = cfl.server.as_ref().unwrap();
            assert_eq!(server.w.to_bytes(), dfl.nodes[5].w.to_bytes());
            for i in 0..5 {
                assert_eq!(cfl.nodes[i].w.to_bytes(), dfl.nodes[i].w.to_bytes());
                assert_eq!(cfl.nodes[i].duals, dfl.nodes[i].duals);
                assert_eq!(server.duals[&NodeId(i)], dfl.nodes[5].duals[&NodeId(i)]);
            }
        }
    }

    #[test]
    fn init_copies_model_and_zeroes_duals() {
        let w0 = ParamVector::new(vec![0.25, -1.0]);
        let t = make_star(3).unwrap();
        let s = init_protocol(ProtocolKind::PdmmCfl, &t, &w0).unwrap();
        assert!(s.nodes.iter().all(|n| n.w == w0));
        assert_eq!(s.server.as_ref().unwrap().w, w0);
        assert!(s.nodes.iter().all(|n| n.duals.values().all(|y| y.l2_norm() == 0.0)));
        assert_eq!(s, init_protocol(ProtocolKind::PdmmCfl, &t, &w0).unwrap());
        let peer = Topology::from_edges(3, TopologyKind::Peer, &[(0, 1), (1, 2)]).unwrap();
        assert!(init_protocol(ProtocolKind::PdmmCfl, &peer, &w0).is_err());
    }

    #[test]
    fn divergence_reports_round_and_node() {
        let problem = scalars(&[0.0, 0.0]);
        let t = make_star(2).unwrap();
        let mut s = init_protocol(ProtocolKind::FedAvgCfl, &t, &ParamVector::new(vec![1.0])).unwrap();
        let settings = ProtocolSettings {
            eta: 1e200,
            solver: SolverKind::GradientDescent,
            ..ProtocolSettings::default()
        };
        let spec = no_attack();
        let streams = SeedStreams::new(0);
        let err = step(&mut s, &Quad { problem: &problem, hub: None }, &settings, hook(&spec, &streams))
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { round: 0, node: 0, .. }), "{err}");
    }
}
