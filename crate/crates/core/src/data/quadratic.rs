use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::ParamVector;

/// Per-node objectives `f_i(w) = 0.5 * |w - a_i|^2`.
///
/// The minimizer of the sum is the mean of the targets, which makes these
/// problems exact oracles for consensus.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem {
    targets: Vec<ParamVector>,
    optimum: ParamVector,
}

impl QuadraticProblem {
    pub fn from_targets(targets: Vec<ParamVector>) -> Result<Self> {
        let optimum = ParamVector::mean(targets.iter())?;
        Ok(Self { targets, optimum })
    }

    pub fn targets(&self) -> &[ParamVector] {
        &self.targets
    }

    pub fn target(&self, node: usize) -> &ParamVector {
        &self.targets[node]
    }

    pub fn optimum(&self) -> &ParamVector {
        &self.optimum
    }

    pub fn dim(&self) -> usize {
        self.optimum.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.targets.len()
    }

    /// Largest node distance from the global optimum.
    pub fn consensus_error<'a, I>(&self, models: I) -> f64
    where
        I: IntoIterator<Item = &'a ParamVector>,
    {
        models
            .into_iter()
            .map(|w| w.distance(&self.optimum).unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    }
}

/// Targets drawn from a standard normal.
pub fn make_quadratic<R: Rng + ?Sized>(
    n_nodes: usize,
    dim: usize,
    rng: &mut R,
) -> Result<QuadraticProblem> {
    if n_nodes == 0 || dim == 0 {
        return Err(Error::InvalidArgument(
            "quadratic problem needs at least one node and one dimension".into(),
        ));
    }
    let targets = (0..n_nodes)
        .map(|_| ParamVector::new((0..dim).map(|_| rng.sample(StandardNormal)).collect()))
        .collect();
    QuadraticProblem::from_targets(targets)
}
