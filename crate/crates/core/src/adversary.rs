//! Byzantine clients: who attacks, during which rounds, and how a payload
//! is corrupted.

use std::collections::BTreeSet;
use std::ops::Range;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::seed::{names, SeedStreams};
use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AttackKind {
    None,
    BitFlip,
    GaussianNoise { sigma: f64 },
}

/// Which quantity a Byzantine client corrupts.
///
/// `Model` corrupts the local model before any outgoing value is derived
/// from it. `Message` corrupts each transmitted value. The two coincide for
/// FedAvg, whose message is the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackTarget {
    Model,
    Message,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ByzantineSelection {
    /// The `k` clients with the highest ids.
    Highest,
    /// `k` clients drawn from the seeded byzantine stream.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub byzantine: BTreeSet<NodeId>,
    /// Half-open window of 0-based global round indices.
    pub active_rounds: Range<usize>,
    pub target: AttackTarget,
}

/// How one Byzantine transmission is altered.
#[derive(Debug, Clone, PartialEq)]
pub enum Corruption {
    Negate,
    AddNoise(ParamVector),
}

impl Corruption {
    pub fn apply(&self, payload: &ParamVector) -> ParamVector {
        match self {
            Corruption::Negate => bit_flip(payload),
            Corruption::AddNoise(e) => payload.add(e).expect("noise drawn at payload length"),
        }
    }
}

impl AttackSpec {
    pub fn none() -> Self {
        AttackSpec {
            kind: AttackKind::None,
            byzantine: BTreeSet::new(),
            active_rounds: 0..0,
            target: AttackTarget::Message,
        }
    }

    /// Checks the spec against a client population. `server`, if any, must
    /// not be Byzantine.
    pub fn validate(&self, n_clients: usize, server: Option<NodeId>) -> Result<()> {
        if let AttackKind::GaussianNoise { sigma } = self.kind {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "gaussian noise needs sigma > 0, got {sigma}"
                )));
            }
        }
        for b in &self.byzantine {
            if Some(*b) == server {
                return Err(Error::InvalidArgument("the server cannot be Byzantine".into()));
            }
            if b.0 >= n_clients {
                return Err(Error::InvalidArgument(format!(
                    "byzantine node {b} is not a client (0..{n_clients})"
                )));
            }
        }
        Ok(())
    }

    pub fn is_active(&self, round: usize, node: NodeId) -> bool {
        !matches!(self.kind, AttackKind::None)
            && self.active_rounds.contains(&round)
            && self.byzantine.contains(&node)
    }

    /// The corruption `node` applies in `round`, or `None` for honest
    /// behaviour. Noise comes from the stream keyed by `(node, round)`.
    pub fn corruption(
        &self,
        round: usize,
        node: NodeId,
        dim: usize,
        streams: &SeedStreams,
    ) -> Option<Corruption> {
        if !self.is_active(round, node) {
            return None;
        }
        match self.kind {
            AttackKind::None => None,
            AttackKind::BitFlip => Some(Corruption::Negate),
            AttackKind::GaussianNoise { sigma } => {
                let mut rng = attack_rng(streams, node, round);
                Some(Corruption::AddNoise(gaussian_noise(dim, sigma, &mut rng)))
            }
        }
    }
}

fn attack_rng(streams: &SeedStreams, node: NodeId, round: usize) -> crate::seed::StreamRng {
    streams.keyed(names::ATTACK, &[node.0 as u64, round as u64])
}

/// `-w`, component-wise IEEE negation.
pub fn bit_flip(w: &ParamVector) -> ParamVector {
    w.negate()
}

fn gaussian_noise<R: Rng + ?Sized>(dim: usize, sigma: f64, rng: &mut R) -> ParamVector {
    let normal = Normal::new(0.0, sigma).expect("sigma validated positive");
    ParamVector::new((0..dim).map(|_| normal.sample(rng)).collect())
}

/// `w + e` with `e_k ~ N(0, sigma^2)` i.i.d.
pub fn gaussian_attack<R: Rng + ?Sized>(w: &ParamVector, sigma: f64, rng: &mut R) -> ParamVector {
    let e = gaussian_noise(w.len(), sigma, rng);
    w.add(&e).expect("same length")
}

/// Returns `payload` untouched unless `client` is Byzantine and `round` is
/// inside the attack window.
pub fn interpose(
    spec: &AttackSpec,
    round: usize,
    client: NodeId,
    payload: &ParamVector,
    streams: &SeedStreams,
) -> ParamVector {
    match spec.corruption(round, client, payload.len(), streams) {
        Some(c) => c.apply(payload),
        None => payload.clone(),
    }
}

/// Picks `count` Byzantine clients out of `0..n_clients`.
pub fn select_byzantine(
    n_clients: usize,
    count: usize,
    selection: ByzantineSelection,
    streams: &SeedStreams,
) -> Result<BTreeSet<NodeId>> {
    if count > n_clients {
        return Err(Error::InvalidArgument(format!(
            "cannot pick {count} Byzantine clients out of {n_clients}"
        )));
    }
    Ok(match selection {
        ByzantineSelection::Highest => (n_clients - count..n_clients).map(NodeId).collect(),
        ByzantineSelection::Random => {
            let mut rng = streams.stream(names::BYZANTINE);
            sample(&mut rng, n_clients, count).into_iter().map(NodeId).collect()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec())
    }

    fn flip_spec() -> AttackSpec {
        AttackSpec {
            kind: AttackKind::BitFlip,
            byzantine: [NodeId(8), NodeId(9)].into(),
            active_rounds: 0..600,
            target: AttackTarget::Model,
        }
    }

    #[test]
    fn bit_flip_example() {
        let w = pv(&[1.5, -2.0, 0.0]);
        let f = bit_flip(&w);
        assert_eq!(f.as_slice(), &[-1.5, 2.0, -0.0]);
        assert_eq!(bit_flip(&f).to_bytes(), w.to_bytes());
        assert_eq!(f.l2_norm(), w.l2_norm());
    }

    #[test]
    fn window_is_half_open() {
        let s = flip_spec();
        let streams = SeedStreams::new(0);
        let w = pv(&[1.0, 2.0]);
        assert_eq!(interpose(&s, 600, NodeId(9), &w, &streams), w);
        assert_eq!(interpose(&s, 599, NodeId(9), &w, &streams), w.negate());
        assert_eq!(interpose(&s, 0, NodeId(8), &w, &streams), w.negate());
    }

    #[test]
    fn honest_pass_through_is_bit_exact() {
        let s = flip_spec();
        let streams = SeedStreams::new(0);
        let w = pv(&[-0.0, 1e-300, 3.25]);
        assert_eq!(interpose(&s, 10, NodeId(0), &w, &streams).to_bytes(), w.to_bytes());
    }

    #[test]
    fn gaussian_is_keyed_by_client_and_round() {
        let s = AttackSpec {
            kind: AttackKind::GaussianNoise { sigma: 0.1 },
            ..flip_spec()
        };
        let streams = SeedStreams::new(4);
        let w = ParamVector::zeros(16);
        let a = interpose(&s, 3, NodeId(9), &w, &streams);
        let b = interpose(&s, 3, NodeId(9), &w, &streams);
        let c = interpose(&s, 4, NodeId(9), &w, &streams);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn validation() {
        let mut s = flip_spec();
        assert!(s.validate(10, Some(NodeId(10))).is_ok());
        s.byzantine.insert(NodeId(10));
        assert!(s.validate(10, Some(NodeId(10))).is_err());
        let g = AttackSpec {
            kind: AttackKind::GaussianNoise { sigma: 0.0 },
            ..flip_spec()
        };
        assert!(g.validate(10, None).is_err());
    }

    #[test]
    fn byzantine_selection() {
        let streams = SeedStreams::new(1);
        let top = select_byzantine(10, 2, ByzantineSelection::Highest, &streams).unwrap();
        assert_eq!(top, [NodeId(8), NodeId(9)].into());
        let r1 = select_byzantine(10, 3, ByzantineSelection::Random, &streams).unwrap();
        let r2 = select_byzantine(10, 3, ByzantineSelection::Random, &streams).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.len(), 3);
        assert!(select_byzantine(2, 3, ByzantineSelection::Highest, &streams).is_err());
    }
}
