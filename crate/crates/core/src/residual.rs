use crate::scalar::Scalar;

/// A small group of residual rows over a local variable vector, with analytic
/// first and second derivatives.
///
/// Jacobians are row-major `n_rows x n_vars`. `hessian` accumulates
/// `sum_r lambda[r] * d2 res_r / dx2` into a row-major `n_vars x n_vars` buffer
/// (both triangles).
pub trait LocalResidual<T: Scalar> {
    fn n_vars(&self) -> usize;
    fn n_rows(&self) -> usize;
    fn eval(&self, x: &[T], out: &mut [T]);
    fn jacobian(&self, x: &[T], jac: &mut [T]);
    fn hessian(&self, x: &[T], lambda: &[T], hess: &mut [T]);

    /// Residuals with no curvature skip Hessian assembly.
    fn is_affine(&self) -> bool {
        false
    }

    fn residuals(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_rows()];
        self.eval(x, &mut out);
        out
    }

    fn dense_jacobian(&self, x: &[T]) -> Vec<T> {
        let mut jac = vec![T::zero(); self.n_rows() * self.n_vars()];
        self.jacobian(x, &mut jac);
        jac
    }

    fn dense_hessian(&self, x: &[T], lambda: &[T]) -> Vec<T> {
        let n = self.n_vars();
        let mut h = vec![T::zero(); n * n];
        self.hessian(x, lambda, &mut h);
        h
    }
}

/// Add `v` at `(i, j)` and `(j, i)` of a row-major square buffer.
#[inline]
pub(crate) fn add_sym<T: Scalar>(h: &mut [T], n: usize, i: usize, j: usize, v: T) {
    h[i * n + j] = h[i * n + j] + v;
    if i != j {
        h[j * n + i] = h[j * n + i] + v;
    }
}
