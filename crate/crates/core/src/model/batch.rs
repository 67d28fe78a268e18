use crate::error::{Error, Result};

/// Labeled samples stored as compressed sparse rows.
///
/// Pixel data is mostly zeros, and the MLP only touches first-layer weight
/// rows for non-zero inputs, so the forward and backward passes iterate over
/// stored entries only. Exact zeros are dropped at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    input_dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    labels: Vec<usize>,
}

impl Batch {
    /// Builds a batch from row-major dense features.
    pub fn from_dense(features: &[f64], input_dim: usize, labels: &[usize]) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be positive".into()));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::LengthMismatch {
                expected: labels.len() * input_dim,
                actual: features.len(),
            });
        }
        let mut batch = Batch::empty(input_dim);
        for (row, &label) in features.chunks_exact(input_dim).zip(labels) {
            batch.push_row(row, label);
        }
        Ok(batch)
    }

    pub(crate) fn empty(input_dim: usize) -> Self {
        Batch {
            input_dim,
            row_ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub(crate) fn push_row(&mut self, row: &[f64], label: usize) {
        debug_assert_eq!(row.len(), self.input_dim);
        for (p, &x) in row.iter().enumerate() {
            if x != 0.0 {
                self.cols.push(p as u32);
                self.vals.push(x);
            }
        }
        self.row_ptr.push(self.cols.len());
        self.labels.push(label);
    }

    /// A new batch holding the given rows of `self`, in the given order.
    pub fn select(&self, rows: &[usize]) -> Batch {
        let mut out = Batch::empty(self.input_dim);
        for &r in rows {
            let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
            out.cols.extend_from_slice(&self.cols[lo..hi]);
            out.vals.extend_from_slice(&self.vals[lo..hi]);
            out.row_ptr.push(out.cols.len());
            out.labels.push(self.labels[r]);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Rows `rows` re-indexed from zero and stored by column. Entries within
    /// a column keep ascending row order.
    pub(crate) fn column_block(&self, rows: std::ops::Range<usize>) -> ColumnBlock {
        let (lo, hi) = (self.row_ptr[rows.start], self.row_ptr[rows.end]);
        let mut col_ptr = vec![0usize; self.input_dim + 1];
        for &c in &self.cols[lo..hi] {
            col_ptr[c as usize + 1] += 1;
        }
        for p in 0..self.input_dim {
            col_ptr[p + 1] += col_ptr[p];
        }
        let mut next = col_ptr.clone();
        let mut row_idx = vec![0u32; hi - lo];
        let mut vals = vec![0.0; hi - lo];
        for (local, r) in rows.enumerate() {
            for (c, v) in self.row(r) {
                let k = next[c];
                row_idx[k] = local as u32;
                vals[k] = v;
                next[c] += 1;
            }
        }
        ColumnBlock {
            col_ptr,
            rows: row_idx,
            vals,
        }
    }

    /// Non-zero `(column, value)` pairs of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[lo..hi]
            .iter()
            .zip(&self.vals[lo..hi])
            .map(|(&c, &v)| (c as usize, v))
    }
}

/// Compressed sparse columns of a contiguous run of rows.
pub(crate) struct ColumnBlock {
    pub col_ptr: Vec<usize>,
    pub rows: Vec<u32>,
    pub vals: Vec<f64>,
}

impl ColumnBlock {
    /// `(row, value)` pairs stored in column `p`.
    pub fn column(&self, p: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.col_ptr[p], self.col_ptr[p + 1]);
        self.rows[lo..hi]
            .iter()
            .zip(&self.vals[lo..hi])
            .map(|(&r, &v)| (r as usize, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drops_zeros_and_keeps_labels() {
        let b = Batch::from_dense(&[0.0, 1.0, 0.5, 0.0], 2, &[3, 4]).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.row(0).collect::<Vec<_>>(), vec![(1, 1.0)]);
        assert_eq!(b.row(1).collect::<Vec<_>>(), vec![(0, 0.5)]);
        assert_eq!(b.labels(), &[3, 4]);
    }

    #[test]
    fn select_reorders() {
        let b = Batch::from_dense(&[1.0, 0.0, 0.0, 2.0], 2, &[0, 1]).unwrap();
        let s = b.select(&[1, 0, 1]);
        assert_eq!(s.labels(), &[1, 0, 1]);
        assert_eq!(s.row(2).collect::<Vec<_>>(), vec![(1, 2.0)]);
    }

    #[test]
    fn column_block_transposes_a_row_range() {
        #[rustfmt::skip]
        let dense = [
            0.0, 1.0, 2.0,
            3.0, 0.0, 4.0,
            0.0, 5.0, 6.0,
            7.0, 0.0, 0.0,
        ];
        let b = Batch::from_dense(&dense, 3, &[0, 0, 0, 0]).unwrap();
        let cb = b.column_block(1..4);
        assert_eq!(cb.column(0).collect::<Vec<_>>(), vec![(0, 3.0), (2, 7.0)]);
        assert_eq!(cb.column(1).collect::<Vec<_>>(), vec![(1, 5.0)]);
        assert_eq!(cb.column(2).collect::<Vec<_>>(), vec![(0, 4.0), (1, 6.0)]);
        let empty = b.column_block(2..2);
        assert!((0..3).all(|p| empty.column(p).next().is_none()));
    }

    #[test]
    fn rejects_ragged_input() {
        assert!(Batch::from_dense(&[1.0, 2.0, 3.0], 2, &[0, 1]).is_err());
    }
}
