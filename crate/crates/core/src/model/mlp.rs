//! Two-layer perceptron: `input -> ReLU hidden -> softmax output`, trained
//! with mean cross-entropy.
//!
//! Parameters live in one flat [`ParamVector`] laid out as
//!
//! ```text
//! [ W1 (input_dim x hidden_dim, input-major) | b1 | W2 (hidden_dim x output_dim) | b2 ]
//! ```
//!
//! Input-major `W1` makes both the forward pass and the first-layer gradient
//! contiguous row updates, one per non-zero input feature.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Batch, ParamVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

/// Mean loss and accuracy over an evaluated batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub accuracy: f64,
}

struct Layers<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
}

impl MlpShape {
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "MLP dimensions must be positive, got ({input_dim}, {hidden_dim}, {output_dim})"
            )));
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            output_dim,
        })
    }

    pub fn param_count(&self) -> usize {
        self.input_dim * self.hidden_dim
            + self.hidden_dim
            + self.hidden_dim * self.output_dim
            + self.output_dim
    }

    /// Index ranges of the bias blocks, `(b1, b2)`.
    pub fn bias_ranges(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let b1 = self.input_dim * self.hidden_dim;
        let w2 = b1 + self.hidden_dim;
        let b2 = w2 + self.hidden_dim * self.output_dim;
        (b1..w2, b2..b2 + self.output_dim)
    }

    fn split<'a>(&self, w: &'a [f64]) -> Layers<'a> {
        let (w1, rest) = w.split_at(self.input_dim * self.hidden_dim);
        let (b1, rest) = rest.split_at(self.hidden_dim);
        let (w2, b2) = rest.split_at(self.hidden_dim * self.output_dim);
        Layers { w1, b1, w2, b2 }
    }

    fn check_params(&self, w: &ParamVector) -> Result<()> {
        if w.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                expected: self.param_count(),
                actual: w.len(),
            });
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.input_dim() != self.input_dim {
            return Err(Error::InvalidArgument(format!(
                "batch width {} does not match input_dim {}",
                batch.input_dim(),
                self.input_dim
            )));
        }
        if let Some(&bad) = batch.labels().iter().find(|&&l| l >= self.output_dim) {
            return Err(Error::Range(format!(
                "label {bad} outside 0..{}",
                self.output_dim
            )));
        }
        Ok(())
    }
}

/// Uniform `[-1, 1) / sqrt(fan_in)` weights, zero biases.
pub fn init_params<R: Rng + ?Sized>(shape: &MlpShape, rng: &mut R) -> ParamVector {
    let mut w = ParamVector::zeros(shape.param_count());
    let s1 = 1.0 / (shape.input_dim as f64).sqrt();
    let s2 = 1.0 / (shape.hidden_dim as f64).sqrt();
    let (b1, b2) = shape.bias_ranges();
    for v in &mut w[..b1.start] {
        *v = rng.random_range(-1.0..1.0) * s1;
    }
    for v in &mut w[b1.end..b2.start] {
        *v = rng.random_range(-1.0..1.0) * s2;
    }
    w
}

/// Rows per column block in the backward pass.
const BLOCK: usize = 64;

/// `acc += x_0 * r_0 + x_1 * r_1 + ...`, adding the terms one at a time in
/// the given order. Up to eight terms share each pass over `acc`.
#[inline]
fn accumulate<'a, I>(acc: &mut [f64], terms: I)
where
    I: IntoIterator<Item = (f64, &'a [f64])>,
{
    let mut it = terms.into_iter();
    let mut buf: [(f64, &[f64]); 8] = [(0.0, &[]); 8];
    loop {
        let mut k = 0;
        while k < 8 {
            match it.next() {
                Some(t) => buf[k] = t,
                None => break,
            }
            k += 1;
        }
        match k {
            8 => pass::<8>(acc, &buf),
            0 => return,
            _ => {
                for t in &buf[..k] {
                    pass::<1>(acc, std::slice::from_ref(t));
                }
                return;
            }
        }
    }
}

#[inline(always)]
fn pass<const K: usize>(acc: &mut [f64], terms: &[(f64, &[f64])]) {
    let n = acc.len();
    let xs: [f64; K] = std::array::from_fn(|j| terms[j].0);
    let rs: [&[f64]; K] = std::array::from_fn(|j| &terms[j].1[..n]);
    for i in 0..n {
        let mut a = acc[i];
        for j in 0..K {
            a += xs[j] * rs[j][i];
        }
        acc[i] = a;
    }
}

/// Post-ReLU hidden activations of row `r`.
fn hidden_row(layers: &Layers<'_>, shape: &MlpShape, batch: &Batch, r: usize, hidden: &mut [f64]) {
    let h_dim = shape.hidden_dim;
    hidden.copy_from_slice(layers.b1);
    accumulate(
        hidden,
        batch
            .row(r)
            .map(|(p, x)| (x, &layers.w1[p * h_dim..(p + 1) * h_dim])),
    );
    for h in hidden.iter_mut() {
        if *h <= 0.0 {
            *h = 0.0;
        }
    }
}

fn output_logits(layers: &Layers<'_>, shape: &MlpShape, hidden: &[f64], logits: &mut [f64]) {
    logits.copy_from_slice(layers.b2);
    let o_dim = shape.output_dim;
    for (h, &hv) in hidden.iter().enumerate() {
        if hv != 0.0 {
            let wrow = &layers.w2[h * o_dim..(h + 1) * o_dim];
            for (z, wv) in logits.iter_mut().zip(wrow) {
                *z += hv * wv;
            }
        }
    }
}

/// Calls `each(row, logits)` for every row of `batch` in order.
fn for_each_output<F: FnMut(usize, &[f64])>(layers: &Layers<'_>, shape: &MlpShape, batch: &Batch, mut each: F) {
    let mut hidden = vec![0.0; shape.hidden_dim];
    let mut logits = vec![0.0; shape.output_dim];
    for r in 0..batch.len() {
        hidden_row(layers, shape, batch, r, &mut hidden);
        output_logits(layers, shape, &hidden, &mut logits);
        each(r, &logits);
    }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Lowest index among the maxima.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Class probabilities, one row of `output_dim` entries per sample.
pub fn forward(w: &ParamVector, shape: &MlpShape, batch: &Batch) -> Result<Vec<Vec<f64>>> {
    shape.check_params(w)?;
    if batch.input_dim() != shape.input_dim {
        return Err(Error::InvalidArgument(format!(
            "batch width {} does not match input_dim {}",
            batch.input_dim(),
            shape.input_dim
        )));
    }
    let layers = shape.split(w);
    let mut out = Vec::with_capacity(batch.len());
    for_each_output(&layers, shape, batch, |_, logits| {
        let lse = log_sum_exp(logits);
        out.push(logits.iter().map(|z| (z - lse).exp()).collect());
    });
    Ok(out)
}

/// Mean cross-entropy over `batch` and its gradient with respect to `w`.
pub fn loss_and_grad(
    w: &ParamVector,
    shape: &MlpShape,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    let mut grad = ParamVector::zeros(shape.param_count());
    let loss = loss_and_grad_into(w, shape, batch, &mut grad)?;
    Ok((loss, grad))
}

/// As [`loss_and_grad`], overwriting `grad` in place.
pub fn loss_and_grad_into(
    w: &ParamVector,
    shape: &MlpShape,
    batch: &Batch,
    grad: &mut [f64],
) -> Result<f64> {
    shape.check_params(w)?;
    shape.check_batch(batch)?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if grad.len() != shape.param_count() {
        return Err(Error::LengthMismatch {
            expected: shape.param_count(),
            actual: grad.len(),
        });
    }
    grad.fill(0.0);

    let layers = shape.split(w);
    let (h_dim, o_dim) = (shape.hidden_dim, shape.output_dim);
    let n = batch.len();
    let inv_n = 1.0 / n as f64;

    let (gw1, rest) = grad.split_at_mut(shape.input_dim * h_dim);
    let (gb1, rest) = rest.split_at_mut(h_dim);
    let (gw2, gb2) = rest.split_at_mut(h_dim * o_dim);

    let block = BLOCK.min(n);
    let mut hidden = vec![0.0; h_dim];
    let mut delta_hidden = vec![0.0; block * h_dim];
    let mut logits = vec![0.0; o_dim];
    let mut delta_out = vec![0.0; o_dim];
    let mut total = 0.0;

    for start in (0..n).step_by(BLOCK) {
        let m = BLOCK.min(n - start);
        for s in 0..m {
            hidden_row(&layers, shape, batch, start + s, &mut hidden);
            let hrow = &hidden[..];
            let drow = &mut delta_hidden[s * h_dim..(s + 1) * h_dim];
            output_logits(&layers, shape, hrow, &mut logits);
            let label = batch.labels()[start + s];
            let lse = log_sum_exp(&logits);
            total += lse - logits[label];

            for (d, z) in delta_out.iter_mut().zip(&logits) {
                *d = (z - lse).exp();
            }
            delta_out[label] -= 1.0;
            for d in delta_out.iter_mut() {
                *d *= inv_n;
            }

            for (g, d) in gb2.iter_mut().zip(&delta_out) {
                *g += d;
            }
            for h in 0..h_dim {
                let hv = hrow[h];
                if hv > 0.0 {
                    let wrow = &layers.w2[h * o_dim..(h + 1) * o_dim];
                    let grow = &mut gw2[h * o_dim..(h + 1) * o_dim];
                    let mut back = 0.0;
                    for o in 0..o_dim {
                        grow[o] += hv * delta_out[o];
                        back += wrow[o] * delta_out[o];
                    }
                    drow[h] = back;
                } else {
                    drow[h] = 0.0;
                }
            }
            for (g, d) in gb1.iter_mut().zip(drow.iter()) {
                *g += d;
            }
        }
        let cols = batch.column_block(start..start + m);
        for p in 0..shape.input_dim {
            accumulate(
                &mut gw1[p * h_dim..(p + 1) * h_dim],
                cols.column(p)
                    .map(|(r, x)| (x, &delta_hidden[r * h_dim..(r + 1) * h_dim])),
            );
        }
    }
    Ok(total * inv_n)
}

/// Mean cross-entropy and accuracy.
///
/// The predicted class is the lowest index among the maximal logits, so a
/// tie counts as correct only when the true class is that lowest index.
pub fn evaluate(w: &ParamVector, shape: &MlpShape, batch: &Batch) -> Result<LossReport> {
    shape.check_params(w)?;
    shape.check_batch(batch)?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
    }
    let layers = shape.split(w);
    let mut total = 0.0;
    let mut correct = 0usize;
    for_each_output(&layers, shape, batch, |r, logits| {
        let label = batch.labels()[r];
        total += log_sum_exp(logits) - logits[label];
        if argmax(logits) == label {
            correct += 1;
        }
    });
    let n = batch.len() as f64;
    Ok(LossReport {
        loss: total / n,
        accuracy: correct as f64 / n,
    })
}
