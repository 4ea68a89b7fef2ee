use crate::der::{BatteryCircuit, Dispatch, PvCircuit, SocTrapezoid};
use crate::residual::{add_sym, LocalResidual};
use crate::scalar::Scalar;

/// Nodal KCL over `[vr_l.., vi_l.., (nr, ni)]` for the buses `l` adjacent to
/// `k` (including `k`). With an RTU, its measurement circuit
/// `(g + jb) V_k + n` is drawn at the bus.
#[derive(Debug, Clone, PartialEq)]
pub struct KclBlock<T> {
    /// `(G_kl, B_kl)` in the order of the voltage slots.
    pub admittance: Vec<(T, T)>,
    /// Position of the bus itself among the neighbours.
    pub own: usize,
    /// Feature-transformed RTU `(g_z, b_z)`; `None` at zero-injection buses.
    pub rtu: Option<(T, T)>,
}

impl<T: Scalar> KclBlock<T> {
    fn m(&self) -> usize {
        self.admittance.len()
    }
}

impl<T: Scalar> LocalResidual<T> for KclBlock<T> {
    fn n_vars(&self) -> usize {
        2 * self.m() + if self.rtu.is_some() { 2 } else { 0 }
    }

    fn n_rows(&self) -> usize {
        2
    }

    fn eval(&self, x: &[T], out: &mut [T]) {
        let m = self.m();
        let (mut rr, mut ri) = (T::zero(), T::zero());
        for (l, &(g, b)) in self.admittance.iter().enumerate() {
            let (vr, vi) = (x[l], x[m + l]);
            rr = rr + g * vr - b * vi;
            ri = ri + g * vi + b * vr;
        }
        if let Some((g, b)) = self.rtu {
            let (vr, vi) = (x[self.own], x[m + self.own]);
            rr = rr + g * vr - b * vi + x[2 * m];
            ri = ri + g * vi + b * vr + x[2 * m + 1];
        }
        out[0] = rr;
        out[1] = ri;
    }

    fn jacobian(&self, _x: &[T], jac: &mut [T]) {
        let m = self.m();
        let n = self.n_vars();
        jac.iter_mut().for_each(|v| *v = T::zero());
        for (l, &(g, b)) in self.admittance.iter().enumerate() {
            jac[l] = g;
            jac[m + l] = -b;
            jac[n + l] = b;
            jac[n + m + l] = g;
        }
        if let Some((g, b)) = self.rtu {
            let k = self.own;
            jac[k] = jac[k] + g;
            jac[m + k] = jac[m + k] - b;
            jac[n + k] = jac[n + k] + b;
            jac[n + m + k] = jac[n + m + k] + g;
            jac[2 * m] = T::one();
            jac[n + 2 * m + 1] = T::one();
        }
    }

    fn hessian(&self, _x: &[T], _lambda: &[T], _h: &mut [T]) {}

    fn is_affine(&self) -> bool {
        true
    }
}

/// `x - target - n` over `[x, n]`: a voltage source with a measurement noise in
/// series, used for the reference bus magnitude. Without `n` the value is pinned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pin<T> {
    pub target: T,
    pub noisy: bool,
}

impl<T: Scalar> LocalResidual<T> for Pin<T> {
    fn n_vars(&self) -> usize {
        if self.noisy {
            2
        } else {
            1
        }
    }

    fn n_rows(&self) -> usize {
        1
    }

    fn eval(&self, x: &[T], out: &mut [T]) {
        out[0] = x[0] - self.target - if self.noisy { x[1] } else { T::zero() };
    }

    fn jacobian(&self, _x: &[T], jac: &mut [T]) {
        jac[0] = T::one();
        if self.noisy {
            jac[1] = -T::one();
        }
    }

    fn hessian(&self, _x: &[T], _lambda: &[T], _h: &mut [T]) {}

    fn is_affine(&self) -> bool {
        true
    }
}

/// Inverter power balance at a DER's point of interconnection, written with
/// the POI's RTU measurement circuit current: the converter injects
/// `I_b = -((g + jb) V + n)`.
///
/// Variables `[v_dc, i_dc, vr, vi, nr, ni]`. `dc_gain` multiplies the DC
/// product and `ac_gain` the delivered AC power `-P_rtu`, so
/// `r_p = dc_gain s i v - ac_gain P_ac`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling<T> {
    pub g: T,
    pub b: T,
    /// DC watts (one unit) to per-unit plant power.
    pub dc_to_pu: T,
    pub dc_gain: T,
    pub ac_gain: T,
}

impl<T: Scalar> Coupling<T> {
    pub fn pv(g: T, b: T, dc_to_pu: T, eta_inv: T) -> Self {
        Self {
            g,
            b,
            dc_to_pu,
            dc_gain: eta_inv,
            ac_gain: T::one(),
        }
    }

    pub fn battery(g: T, b: T, dc_to_pu: T, eta_inv: T, eta_rec: T, dispatch: Dispatch) -> Self {
        let (dc_gain, ac_gain) = match dispatch {
            Dispatch::Discharging => (eta_inv, T::one()),
            Dispatch::Charging => (T::one(), eta_rec),
        };
        Self {
            g,
            b,
            dc_to_pu,
            dc_gain,
            ac_gain,
        }
    }
}

impl<T: Scalar> LocalResidual<T> for Coupling<T> {
    fn n_vars(&self) -> usize {
        6
    }

    fn n_rows(&self) -> usize {
        2
    }

    fn eval(&self, x: &[T], out: &mut [T]) {
        let (v, i, vr, vi, nr, ni) = (x[0], x[1], x[2], x[3], x[4], x[5]);
        let m2 = vr * vr + vi * vi;
        out[0] = self.dc_gain * self.dc_to_pu * i * v + self.ac_gain * (self.g * m2 + nr * vr + ni * vi);
        out[1] = self.b * m2 - nr * vi + ni * vr;
    }

    fn jacobian(&self, x: &[T], jac: &mut [T]) {
        let (v, i, vr, vi, nr, ni) = (x[0], x[1], x[2], x[3], x[4], x[5]);
        let two = T::of(2.0);
        let c = self.dc_gain * self.dc_to_pu;
        let a = self.ac_gain;
        jac[0] = c * i;
        jac[1] = c * v;
        jac[2] = a * (two * self.g * vr + nr);
        jac[3] = a * (two * self.g * vi + ni);
        jac[4] = a * vr;
        jac[5] = a * vi;
        jac[6] = T::zero();
        jac[7] = T::zero();
        jac[8] = two * self.b * vr + ni;
        jac[9] = two * self.b * vi - nr;
        jac[10] = -vi;
        jac[11] = vr;
    }

    fn hessian(&self, _x: &[T], lambda: &[T], h: &mut [T]) {
        let two = T::of(2.0);
        let (lp, lq) = (lambda[0], lambda[1]);
        let a = self.ac_gain * lp;
        add_sym(h, 6, 0, 1, lp * self.dc_gain * self.dc_to_pu);
        add_sym(h, 6, 2, 2, a * two * self.g + lq * two * self.b);
        add_sym(h, 6, 3, 3, a * two * self.g + lq * two * self.b);
        add_sym(h, 6, 2, 4, a);
        add_sym(h, 6, 3, 5, a);
        add_sym(h, 6, 2, 5, lq);
        add_sym(h, 6, 3, 4, -lq);
    }
}

/// Every residual family the estimator assembles.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockModel<T> {
    Kcl(KclBlock<T>),
    Pin(Pin<T>),
    Pv(PvCircuit<T>),
    Battery(BatteryCircuit<T>),
    Soc(SocTrapezoid<T>),
    Coupling(Coupling<T>),
}

macro_rules! dispatch {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            BlockModel::Kcl($m) => $e,
            BlockModel::Pin($m) => $e,
            BlockModel::Pv($m) => $e,
            BlockModel::Battery($m) => $e,
            BlockModel::Soc($m) => $e,
            BlockModel::Coupling($m) => $e,
        }
    };
}

impl<T: Scalar> LocalResidual<T> for BlockModel<T> {
    fn n_vars(&self) -> usize {
        dispatch!(self, m => m.n_vars())
    }

    fn n_rows(&self) -> usize {
        dispatch!(self, m => m.n_rows())
    }

    fn eval(&self, x: &[T], out: &mut [T]) {
        dispatch!(self, m => m.eval(x, out))
    }

    fn jacobian(&self, x: &[T], jac: &mut [T]) {
        dispatch!(self, m => m.jacobian(x, jac))
    }

    fn hessian(&self, x: &[T], lambda: &[T], h: &mut [T]) {
        dispatch!(self, m => m.hessian(x, lambda, h))
    }

    fn is_affine(&self) -> bool {
        dispatch!(self, m => m.is_affine())
    }
}
