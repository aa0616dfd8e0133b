//! Compressed sparse row storage shared by the count, RCA and advantage matrices.

use serde::{Deserialize, Serialize};

/// Row-major compressed sparse matrix. Column indices within a row are
/// strictly increasing; absent entries are structural zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Csr<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Copy> Csr<T> {
    /// Builds from `(row, col, value)` triplets. Triplets must be sorted by
    /// `(row, col)` with no duplicates.
    pub fn from_sorted_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, T)>,
    ) -> Self {
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet ({r},{c}) out of bounds");
            if let Some(prev) = last {
                assert!(prev < (r, c), "triplets not strictly sorted");
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Csr {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_len(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    pub fn get(&self, r: usize, c: usize) -> Option<T> {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .binary_search(&c)
            .ok()
            .map(|i| self.values[span.start + i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn map<U: Copy>(&self, mut f: impl FnMut(usize, usize, T) -> U) -> Csr<U> {
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.rows {
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                values.push(f(r, self.col_idx[i], self.values[i]));
            }
        }
        Csr {
            rows: self.rows,
            cols: self.cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values,
        }
    }

    /// Keeps entries for which `keep` holds, then restricts to the given row
    /// and column maps (`None` drops the row/column).
    pub fn filter_remap(
        &self,
        mut keep: impl FnMut(T) -> bool,
        row_map: &[Option<usize>],
        col_map: &[Option<usize>],
        new_rows: usize,
        new_cols: usize,
    ) -> Csr<T> {
        let triplets = self.iter().filter_map(|(r, c, v)| {
            if !keep(v) {
                return None;
            }
            Some((row_map[r]?, col_map[c]?, v))
        });
        // Maps are order-preserving, so triplets stay sorted.
        Csr::from_sorted_triplets(new_rows, new_cols, triplets.collect::<Vec<_>>())
    }

    /// Column-major view as a CSR of the transpose.
    pub fn transpose(&self) -> Csr<T> {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values: Vec<Option<T>> = vec![None; self.nnz()];
        for r in 0..self.rows {
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[i];
                let slot = next[c];
                next[c] += 1;
                col_idx[slot] = r;
                values[slot] = Some(self.values[i]);
            }
        }
        Csr {
            rows: self.cols,
            cols: self.rows,
            row_ptr,
            col_idx,
            values: values.into_iter().map(|v| v.expect("filled")).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_round_trips() {
        let m = Csr::from_sorted_triplets(2, 3, vec![(0, 0, 1u64), (0, 2, 5), (1, 1, 7)]);
        let t = m.transpose();
        assert_eq!(t.rows(), 3);
        assert_eq!(t.get(2, 0), Some(5));
        assert_eq!(t.get(1, 1), Some(7));
        assert_eq!(t.get(0, 1), None);
        assert_eq!(t.transpose(), m);
    }

    #[test]
    #[should_panic]
    fn rejects_unsorted_triplets() {
        Csr::from_sorted_triplets(2, 2, vec![(1, 0, 1u8), (0, 1, 1)]);
    }
}
