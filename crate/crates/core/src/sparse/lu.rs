use super::csc::CscMatrix;
use crate::scalar::Scalar;

/// Failed pivot: column `col` (in the original numbering) had no usable pivot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingularPivot {
    pub col: usize,
}

/// `L U = P A Q` with `L` unit lower triangular. `P` is stored as the inverse
/// row permutation `pinv`, `Q` as the column order `q`.
#[derive(Debug, Clone)]
pub struct LuFactors<T> {
    n: usize,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<T>,
    up: Vec<usize>,
    ui: Vec<usize>,
    ux: Vec<T>,
    pinv: Vec<usize>,
    q: Vec<usize>,
}

const UNSET: usize = usize::MAX;

impl<T: Scalar> LuFactors<T> {
    /// Factorize square `a` with column order `q`.
    ///
    /// `diag_tol` in (0, 1] is the threshold for keeping the diagonal entry as
    /// pivot: it is used whenever `|a_jj| >= diag_tol * max_i |a_ij|` over the
    /// not-yet-pivoted rows. Pivots at or below `zero_tol` count as singular.
    pub fn factor(
        a: &CscMatrix<T>,
        q: &[usize],
        diag_tol: T,
        zero_tol: T,
    ) -> Result<Self, SingularPivot> {
        let n = a.ncols;
        assert_eq!(a.nrows, n, "LU needs a square matrix");
        assert_eq!(q.len(), n);
        let est = 4 * a.nnz() + n;
        let mut lp = Vec::with_capacity(n + 1);
        let mut li: Vec<usize> = Vec::with_capacity(est);
        let mut lx: Vec<T> = Vec::with_capacity(est);
        let mut up = Vec::with_capacity(n + 1);
        let mut ui: Vec<usize> = Vec::with_capacity(est);
        let mut ux: Vec<T> = Vec::with_capacity(est);
        let mut pinv = vec![UNSET; n];
        let mut x = vec![T::zero(); n];
        let mut xi = vec![0usize; n];
        let mut stack = vec![0usize; n];
        let mut pstack = vec![0usize; n];
        let mut marked = vec![false; n];

        for k in 0..n {
            lp.push(li.len());
            up.push(ui.len());
            let col = q[k];

            // reach: nonzero pattern of L \ A(:, col), in topological order xi[top..n]
            let mut top = n;
            for p in a.col_ptr[col]..a.col_ptr[col + 1] {
                let j = a.row_idx[p];
                if !marked[j] {
                    top = dfs(
                        j, &lp, &li, &pinv, top, &mut xi, &mut stack, &mut pstack, &mut marked,
                    );
                }
            }
            for &j in &xi[top..n] {
                marked[j] = false;
            }

            // sparse triangular solve
            for &j in &xi[top..n] {
                x[j] = T::zero();
            }
            for p in a.col_ptr[col]..a.col_ptr[col + 1] {
                x[a.row_idx[p]] = a.values[p];
            }
            for px in top..n {
                let j = xi[px];
                let jj = pinv[j];
                if jj == UNSET {
                    continue;
                }
                // column jj of L: unit diagonal first, then strictly lower entries
                let xj = x[j];
                let end = if jj + 1 < lp.len() { lp[jj + 1] } else { li.len() };
                for p in lp[jj] + 1..end {
                    let i = li[p];
                    x[i] = x[i] - lx[p] * xj;
                }
            }

            // pivot search
            let mut ipiv = UNSET;
            let mut amax = -T::one();
            for &i in &xi[top..n] {
                if pinv[i] == UNSET {
                    let t = x[i].abs();
                    if t > amax {
                        amax = t;
                        ipiv = i;
                    }
                } else {
                    ui.push(pinv[i]);
                    ux.push(x[i]);
                }
            }
            if ipiv == UNSET || !(amax > zero_tol) {
                return Err(SingularPivot { col });
            }
            if pinv[col] == UNSET && x[col].abs() >= amax * diag_tol {
                ipiv = col;
            }
            let pivot = x[ipiv];
            ui.push(k);
            ux.push(pivot);
            pinv[ipiv] = k;
            li.push(ipiv);
            lx.push(T::one());
            for &i in &xi[top..n] {
                if pinv[i] == UNSET {
                    li.push(i);
                    lx.push(x[i] / pivot);
                }
                x[i] = T::zero();
            }
        }
        lp.push(li.len());
        up.push(ui.len());
        for r in li.iter_mut() {
            *r = pinv[*r];
        }
        Ok(Self {
            n,
            lp,
            li,
            lx,
            up,
            ui,
            ux,
            pinv,
            q: q.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn fill(&self) -> usize {
        self.lx.len() + self.ux.len()
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            y[self.pinv[i]] = b[i];
        }
        for j in 0..n {
            let yj = y[j];
            for p in self.lp[j] + 1..self.lp[j + 1] {
                y[self.li[p]] = y[self.li[p]] - self.lx[p] * yj;
            }
        }
        for j in (0..n).rev() {
            let last = self.up[j + 1] - 1;
            y[j] = y[j] / self.ux[last];
            let yj = y[j];
            for p in self.up[j]..last {
                y[self.ui[p]] = y[self.ui[p]] - self.ux[p] * yj;
            }
        }
        let mut x = vec![T::zero(); n];
        for k in 0..n {
            x[self.q[k]] = y[k];
        }
        x
    }
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    start: usize,
    lp: &[usize],
    li: &[usize],
    pinv: &[usize],
    mut top: usize,
    xi: &mut [usize],
    stack: &mut [usize],
    pstack: &mut [usize],
    marked: &mut [bool],
) -> usize {
    let mut head: isize = 0;
    stack[0] = start;
    while head >= 0 {
        let h = head as usize;
        let j = stack[h];
        let jj = pinv[j];
        if !marked[j] {
            marked[j] = true;
            pstack[h] = if jj == UNSET { 0 } else { lp[jj] };
        }
        let end = if jj == UNSET {
            0
        } else if jj + 1 < lp.len() {
            lp[jj + 1]
        } else {
            li.len()
        };
        let mut done = true;
        let mut p = pstack[h];
        while p < end {
            let i = li[p];
            if !marked[i] {
                pstack[h] = p;
                head += 1;
                stack[head as usize] = i;
                done = false;
                break;
            }
            p += 1;
        }
        if done {
            head -= 1;
            top -= 1;
            xi[top] = j;
        }
    }
    top
}
