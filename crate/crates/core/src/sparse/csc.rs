use crate::scalar::Scalar;

/// Coordinate-format accumulator. Duplicate entries are summed on conversion.
#[derive(Debug, Clone)]
pub struct Triplets<T> {
    nrows: usize,
    ncols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Scalar> Triplets<T> {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self::with_capacity(nrows, ncols, 0)
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            rows: Vec::with_capacity(cap),
            cols: Vec::with_capacity(cap),
            vals: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, val: T) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.rows.push(row);
        self.cols.push(col);
        self.vals.push(val);
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn clear(&mut self) {
        self.rows.clear();
        self.cols.clear();
        self.vals.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.rows
            .iter()
            .zip(&self.cols)
            .zip(&self.vals)
            .map(|((&r, &c), &v)| (r, c, v))
    }

    /// Compress to CSC with sorted row indices. Explicit zeros are kept so the
    /// pattern does not depend on the values.
    pub fn to_csc(&self) -> CscMatrix<T> {
        let mut count = vec![0usize; self.ncols + 1];
        for &c in &self.cols {
            count[c + 1] += 1;
        }
        for j in 0..self.ncols {
            count[j + 1] += count[j];
        }
        let nnz = self.vals.len();
        let mut next = count.clone();
        let mut ri = vec![0usize; nnz];
        let mut rv = vec![T::zero(); nnz];
        for k in 0..nnz {
            let c = self.cols[k];
            let dst = next[c];
            next[c] += 1;
            ri[dst] = self.rows[k];
            rv[dst] = self.vals[k];
        }
        let mut col_ptr = Vec::with_capacity(self.ncols + 1);
        let mut row_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        col_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for j in 0..self.ncols {
            let (s, e) = (count[j], count[j + 1]);
            order.clear();
            order.extend(s..e);
            order.sort_by_key(|&p| ri[p]);
            let mut last: Option<usize> = None;
            for &p in &order {
                if last == Some(ri[p]) {
                    let v = values.last_mut().expect("entry pushed");
                    *v = *v + rv[p];
                } else {
                    row_idx.push(ri[p]);
                    values.push(rv[p]);
                    last = Some(ri[p]);
                }
            }
            col_ptr.push(row_idx.len());
        }
        CscMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            col_ptr,
            row_idx,
            values,
        }
    }
}

/// Compressed sparse column matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix<T> {
    pub nrows: usize,
    pub ncols: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> CscMatrix<T> {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let (s, e) = (self.col_ptr[j], self.col_ptr[j + 1]);
        self.row_idx[s..e]
            .iter()
            .zip(&self.values[s..e])
            .map(|(&i, &v)| (i, v))
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (s, e) = (self.col_ptr[j], self.col_ptr[j + 1]);
        match self.row_idx[s..e].binary_search(&i) {
            Ok(p) => self.values[s + p],
            Err(_) => T::zero(),
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        for (j, &xj) in x.iter().enumerate().take(self.ncols) {
            for (i, v) in self.column(j) {
                y[i] = y[i] + v * xj;
            }
        }
        y
    }

    pub fn max_abs(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::zero(); self.ncols]; self.nrows];
        for j in 0..self.ncols {
            for (i, v) in self.column(j) {
                d[i][j] = d[i][j] + v;
            }
        }
        d
    }

    /// Symmetric adjacency (off-diagonal pattern of `A + A^T`), sorted and deduplicated.
    pub fn symmetric_adjacency(&self) -> Vec<Vec<usize>> {
        assert_eq!(self.nrows, self.ncols, "adjacency needs a square matrix");
        let n = self.ncols;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for j in 0..n {
            for (i, _) in self.column(j) {
                if i != j {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let mut t = Triplets::<f64>::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(1, 0, 2.0);
        t.push(0, 0, 3.0);
        t.push(1, 1, -1.0);
        let a = t.to_csc();
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(0, 0), 4.0);
        assert_eq!(a.get(1, 0), 2.0);
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.mul_vec(&[1.0, 1.0]), vec![4.0, 1.0]);
    }
}
