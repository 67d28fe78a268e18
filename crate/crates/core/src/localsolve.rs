//! Proximal local solvers.
//!
//! A node's primal update minimizes
//!
//! ```text
//! f(w) + sum_j (c / 2) * |w - y_j|^2
//! ```
//!
//! over its anchors `y_j`. [`prox_gd`] runs a fixed number of full gradient
//! steps and is what the experiments use; the closed forms below are exact
//! and serve as oracles (and as the solver for zero-objective relay nodes).

use crate::error::{Error, Result};
use crate::model::{loss_and_grad_into, Batch, MlpShape, ParamVector};

/// A differentiable local loss. `step` is the index of the gradient step
/// within one solve; full-batch objectives ignore it.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn loss_and_grad_into(&self, w: &ParamVector, step: usize, grad: &mut [f64]) -> Result<f64>;
}

/// `f(w) = 0.5 * |w - target|^2`
#[derive(Debug, Clone, Copy)]
pub struct QuadraticObjective<'a> {
    pub target: &'a ParamVector,
}

impl Objective for QuadraticObjective<'_> {
    fn dim(&self) -> usize {
        self.target.len()
    }

    fn loss_and_grad_into(&self, w: &ParamVector, _step: usize, grad: &mut [f64]) -> Result<f64> {
        if w.len() != self.target.len() {
            return Err(Error::LengthMismatch {
                expected: self.target.len(),
                actual: w.len(),
            });
        }
        let mut loss = 0.0;
        for ((g, wv), a) in grad.iter_mut().zip(w.iter()).zip(self.target.iter()) {
            let r = wv - a;
            *g = r;
            loss += 0.5 * r * r;
        }
        Ok(loss)
    }
}

/// `f ≡ 0`, used for relay nodes that hold no data.
#[derive(Debug, Clone, Copy)]
pub struct ZeroObjective {
    pub dim: usize,
}

impl Objective for ZeroObjective {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss_and_grad_into(&self, _w: &ParamVector, _step: usize, grad: &mut [f64]) -> Result<f64> {
        grad.fill(0.0);
        Ok(0.0)
    }
}

/// Mean cross-entropy of the MLP over one client's samples.
///
/// With `step_batches` set, gradient step `s` uses `step_batches[s %
/// len]` instead of the full shard.
#[derive(Debug, Clone, Copy)]
pub struct ShardObjective<'a> {
    pub shape: &'a MlpShape,
    pub batch: &'a Batch,
    pub step_batches: Option<&'a [Batch]>,
}

impl Objective for ShardObjective<'_> {
    fn dim(&self) -> usize {
        self.shape.param_count()
    }

    fn loss_and_grad_into(&self, w: &ParamVector, step: usize, grad: &mut [f64]) -> Result<f64> {
        let batch = match self.step_batches {
            Some(b) if !b.is_empty() => &b[step % b.len()],
            _ => self.batch,
        };
        loss_and_grad_into(w, self.shape, batch, grad)
    }
}

/// A local objective tied to its anchors by a quadratic penalty of weight `c`.
pub struct ProxProblem<'a> {
    pub objective: &'a dyn Objective,
    pub anchors: &'a [&'a ParamVector],
    pub c: f64,
}

/// Runs `steps` gradient-descent iterations on the penalized objective from
/// `start`. With `c == 0` the penalty is skipped entirely, which makes this
/// bit-identical to [`local_gd`].
pub fn prox_gd(
    problem: &ProxProblem<'_>,
    start: &ParamVector,
    steps: usize,
    eta: f64,
) -> Result<ParamVector> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("eta must be positive, got {eta}")));
    }
    if !(problem.c >= 0.0 && problem.c.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "penalty c must be non-negative, got {}",
            problem.c
        )));
    }
    let d = problem.objective.dim();
    if start.len() != d {
        return Err(Error::LengthMismatch {
            expected: d,
            actual: start.len(),
        });
    }
    if let Some(bad) = problem.anchors.iter().find(|y| y.len() != d) {
        return Err(Error::LengthMismatch {
            expected: d,
            actual: bad.len(),
        });
    }

    let c = problem.c;
    let penalized = c != 0.0 && !problem.anchors.is_empty();
    // sum_j c (w - y_j) = c (k w - sum_j y_j)
    let k = problem.anchors.len() as f64;
    let anchor_sum = if penalized {
        let mut s = (*problem.anchors[0]).clone();
        for y in &problem.anchors[1..] {
            for (sv, yv) in s.iter_mut().zip(y.iter()) {
                *sv += yv;
            }
        }
        s
    } else {
        ParamVector::zeros(0)
    };
    let mut w = start.clone();
    let mut grad = vec![0.0; d];
    for step in 0..steps {
        problem.objective.loss_and_grad_into(&w, step, &mut grad)?;
        let mut finite = true;
        if penalized {
            for ((wv, g), sv) in w.iter_mut().zip(&grad).zip(anchor_sum.iter()) {
                let g = g + c * (k * *wv - sv);
                finite &= g.is_finite();
                *wv -= eta * g;
            }
        } else {
            for (wv, g) in w.iter_mut().zip(&grad) {
                finite &= g.is_finite();
                *wv -= eta * g;
            }
        }
        if !finite {
            return Err(Error::NonFiniteGradient { step });
        }
    }
    Ok(w)
}

/// Plain gradient descent on `f`: the FedAvg local update.
pub fn local_gd(
    objective: &dyn Objective,
    start: &ParamVector,
    steps: usize,
    eta: f64,
) -> Result<ParamVector> {
    prox_gd(
        &ProxProblem {
            objective,
            anchors: &[],
            c: 0.0,
        },
        start,
        steps,
        eta,
    )
}

/// Exact minimizer of `0.5|w - a|^2 + (c/2)|w - y|^2`, i.e. `(a + c y) / (1 + c)`.
pub fn prox_quadratic(a: &ParamVector, y: &ParamVector, c: f64) -> Result<ParamVector> {
    prox_quadratic_multi(a, &[y], c)
}

/// Exact minimizer of `0.5|w - a|^2 + sum_j (c/2)|w - y_j|^2`, i.e.
/// `(a + c * sum_j y_j) / (1 + c k)`.
pub fn prox_quadratic_multi(a: &ParamVector, anchors: &[&ParamVector], c: f64) -> Result<ParamVector> {
    if anchors.is_empty() {
        return Ok(a.clone());
    }
    let mut sum = (*anchors[0]).clone();
    for y in &anchors[1..] {
        sum.axpy(1.0, y)?;
    }
    if sum.len() != a.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: sum.len(),
        });
    }
    let denom = 1.0 + c * anchors.len() as f64;
    Ok(ParamVector::new(
        a.iter()
            .zip(sum.iter())
            .map(|(av, s)| (av + c * s) / denom)
            .collect(),
    ))
}

/// Exact minimizer for a zero objective: the mean of the anchors,
/// independent of `c > 0`.
pub fn prox_zero(anchors: &[&ParamVector]) -> Result<ParamVector> {
    ParamVector::mean(anchors.iter().copied())
}
