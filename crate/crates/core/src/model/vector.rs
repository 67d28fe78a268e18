use std::io::{Read, Write};
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// Flat real-valued parameter vector.
///
/// Local models, the global model and every PDMM transmission variable share
/// this type. All reductions run left to right in the order given, so the
/// same inputs always produce the same bits.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

/// Magic prefix of the binary checkpoint format.
pub const PARAM_MAGIC: [u8; 4] = *b"PVEC";

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    fn check_len(&self, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_len(other)?;
        Ok(Self(self.iter().zip(other.iter()).map(|(a, b)| a + b).collect()))
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_len(other)?;
        Ok(Self(self.iter().zip(other.iter()).map(|(a, b)| a - b).collect()))
    }

    pub fn scale(&self, k: f64) -> ParamVector {
        Self(self.iter().map(|a| a * k).collect())
    }

    pub fn negate(&self) -> ParamVector {
        Self(self.iter().map(|a| -a).collect())
    }

    /// `self += k * x`
    pub fn axpy(&mut self, k: f64, x: &ParamVector) -> Result<()> {
        self.check_len(x)?;
        for (a, b) in self.0.iter_mut().zip(x.iter()) {
            *a += k * b;
        }
        Ok(())
    }

    /// `2 * self - other`, the reflection every PDMM transmission uses.
    pub fn reflect(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_len(other)?;
        Ok(Self(
            self.iter()
                .zip(other.iter())
                .map(|(w, y)| 2.0 * w - y)
                .collect(),
        ))
    }

    pub fn l2_norm(&self) -> f64 {
        self.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &ParamVector) -> Result<f64> {
        self.check_len(other)?;
        Ok(self
            .iter()
            .zip(other.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.iter().position(|v| !v.is_finite())
    }

    /// Arithmetic mean, summed in slice order and divided by the count.
    pub fn mean<'a, I>(items: I) -> Result<ParamVector>
    where
        I: IntoIterator<Item = &'a ParamVector>,
    {
        let mut iter = items.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InvalidArgument("mean of an empty list".into()))?;
        let mut acc = first.clone();
        let mut count = 1usize;
        for v in iter {
            acc.check_len(v)?;
            for (a, b) in acc.0.iter_mut().zip(v.iter()) {
                *a += b;
            }
            count += 1;
        }
        let n = count as f64;
        for a in acc.0.iter_mut() {
            *a /= n;
        }
        Ok(acc)
    }

    /// Checkpoint layout: `b"PVEC"`, `u64` LE element count, then each
    /// element as an `f64` LE.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(&PARAM_MAGIC)?;
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        for v in self.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + 8 * self.len());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<ParamVector> {
        let ctx = "parameter checkpoint";
        let mut magic = [0u8; 4];
        input
            .read_exact(&mut magic)
            .map_err(|e| Error::format(ctx, format!("missing header: {e}")))?;
        if magic != PARAM_MAGIC {
            return Err(Error::format(ctx, format!("bad magic {magic:02x?}")));
        }
        let mut len = [0u8; 8];
        input
            .read_exact(&mut len)
            .map_err(|e| Error::format(ctx, format!("missing length: {e}")))?;
        let len = u64::from_le_bytes(len) as usize;
        let mut raw = Vec::new();
        input
            .read_to_end(&mut raw)
            .map_err(|e| Error::format(ctx, e.to_string()))?;
        if raw.len() != len * 8 {
            return Err(Error::LengthMismatch {
                expected: len * 8,
                actual: raw.len(),
            });
        }
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(ParamVector(values))
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}
