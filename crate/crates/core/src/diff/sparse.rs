use serde::{Deserialize, Serialize};

/// Compressed sparse rows. Column indices within a row are strictly increasing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseRows {
    pub cols: usize,
    offsets: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseRows {
    pub fn new(cols: usize) -> Self {
        SparseRows {
            cols,
            offsets: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Appends a row; `entries` must be sorted by column with no duplicates.
    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (u32, f64)>) {
        let start = self.indices.len();
        for (c, v) in entries {
            debug_assert!((c as usize) < self.cols, "column {c} out of range");
            debug_assert!(self.indices.len() == start || *self.indices.last().unwrap() < c);
            self.indices.push(c);
            self.values.push(v);
        }
        self.offsets.push(self.indices.len());
    }

    /// Builds binary rows from sorted index sets.
    pub fn from_index_sets<'a>(cols: usize, sets: impl IntoIterator<Item = &'a [u32]>) -> Self {
        let mut s = SparseRows::new(cols);
        for set in sets {
            s.push_row(set.iter().map(|&c| (c, 1.0)));
        }
        s
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row_indices(&self, r: usize) -> &[u32] {
        &self.indices[self.offsets[r]..self.offsets[r + 1]]
    }

    pub fn row_values(&self, r: usize) -> &[f64] {
        &self.values[self.offsets[r]..self.offsets[r + 1]]
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.row_indices(r)
            .iter()
            .zip(self.row_values(r))
            .map(|(&c, &v)| (c as usize, v))
    }

    /// Writes row `r` into a dense, zero-initialised slice.
    pub fn scatter_row(&self, r: usize, out: &mut [f64]) {
        for (c, v) in self.row(r) {
            out[c] += v;
        }
    }
}
