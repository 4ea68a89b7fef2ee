//! AC grid equivalent-circuit model.
//!
//! Buses carry rectangular per-unit voltages. Branches are pi-models with a
//! series admittance `g + jb` and total line charging `shunt_b` split evenly
//! between both ends. Currents in nodal residuals follow the load convention:
//! a current *drawn* at a bus adds to the sum of currents leaving it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Pq,
    Pv,
    Slack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de> + Default"))]
pub struct Bus<T> {
    pub id: usize,
    pub kind: BusKind,
    /// Voltage (initial guess or solution), per-unit.
    pub v_real: T,
    pub v_imag: T,
    /// Net generation minus load `(P, Q)`, per-unit. `None` for buses with
    /// neither generation nor load.
    pub injection: Option<(T, T)>,
    /// Fixed shunt admittance at the bus, per-unit (MATPOWER `Gs`, `Bs` / baseMVA).
    #[serde(default)]
    pub shunt_g: T,
    #[serde(default)]
    pub shunt_b: T,
    /// Regulated voltage magnitude for generator buses.
    #[serde(default)]
    pub v_set: Option<T>,
}

impl<T: Scalar> Bus<T> {
    pub fn new(id: usize) -> Self {
        Self {
            id,
            kind: BusKind::Pq,
            v_real: T::one(),
            v_imag: T::zero(),
            injection: None,
            shunt_g: T::zero(),
            shunt_b: T::zero(),
            v_set: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de> + Default"))]
pub struct Branch<T> {
    pub from: usize,
    pub to: usize,
    pub g: T,
    pub b: T,
    /// Total line-charging susceptance; half is placed at each end.
    #[serde(default)]
    pub shunt_b: T,
}

impl<T: Scalar> Branch<T> {
    /// Branch from series impedance `r + jx`.
    pub fn from_impedance(from: usize, to: usize, r: T, x: T, shunt_b: T) -> Self {
        let d = r * r + x * x;
        Self {
            from,
            to,
            g: r / d,
            b: -x / d,
            shunt_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de> + Default"))]
pub struct GridCase<T> {
    pub base_mva: T,
    pub buses: Vec<Bus<T>>,
    pub branches: Vec<Branch<T>>,
    pub rtu_buses: BTreeSet<usize>,
    pub zero_injection_buses: BTreeSet<usize>,
    #[serde(skip)]
    index: BTreeMap<usize, usize>,
}

impl<T: Scalar> GridCase<T> {
    /// Build and validate a case. Buses with an injection get an RTU, all
    /// others are zero-injection.
    pub fn new(base_mva: T, buses: Vec<Bus<T>>, branches: Vec<Branch<T>>) -> Result<Self> {
        let rtu: BTreeSet<usize> = buses
            .iter()
            .filter(|b| b.injection.is_some())
            .map(|b| b.id)
            .collect();
        let zi: BTreeSet<usize> = buses
            .iter()
            .filter(|b| b.injection.is_none())
            .map(|b| b.id)
            .collect();
        Self::with_placement(base_mva, buses, branches, rtu, zi)
    }

    pub fn with_placement(
        base_mva: T,
        buses: Vec<Bus<T>>,
        branches: Vec<Branch<T>>,
        rtu_buses: BTreeSet<usize>,
        zero_injection_buses: BTreeSet<usize>,
    ) -> Result<Self> {
        let mut case = Self {
            base_mva,
            buses,
            branches,
            rtu_buses,
            zero_injection_buses,
            index: BTreeMap::new(),
        };
        case.reindex()?;
        case.validate()?;
        Ok(case)
    }

    fn reindex(&mut self) -> Result<()> {
        self.index.clear();
        for (k, b) in self.buses.iter().enumerate() {
            if self.index.insert(b.id, k).is_some() {
                return Err(Error::DuplicateBus(b.id));
            }
        }
        Ok(())
    }

    /// Restore the id index after deserialization.
    pub fn rebuild(mut self) -> Result<Self> {
        self.reindex()?;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if !(self.base_mva > T::zero()) {
            return Err(Error::InvalidParameter("base_mva must be positive".into()));
        }
        for br in &self.branches {
            for id in [br.from, br.to] {
                if !self.index.contains_key(&id) {
                    return Err(Error::UnknownBus(id));
                }
            }
            if br.g == T::zero() && br.b == T::zero() {
                return Err(Error::ZeroAdmittanceBranch {
                    from: br.from,
                    to: br.to,
                });
            }
        }
        if let Some(&id) = self.rtu_buses.intersection(&self.zero_injection_buses).next() {
            return Err(Error::InvalidParameter(format!(
                "bus {id} is both RTU-measured and zero-injection"
            )));
        }
        for &id in self.rtu_buses.iter().chain(&self.zero_injection_buses) {
            if !self.index.contains_key(&id) {
                return Err(Error::UnknownBus(id));
            }
        }
        Ok(())
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Position of bus `id` in `buses`.
    pub fn index_of(&self, id: usize) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownBus(id))
    }

    pub fn bus(&self, id: usize) -> Result<&Bus<T>> {
        Ok(&self.buses[self.index_of(id)?])
    }

    pub fn slack_index(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.kind == BusKind::Slack)
    }

    pub fn has_rtu(&self, id: usize) -> bool {
        self.rtu_buses.contains(&id)
    }

    /// Mark bus `id` as measured (e.g. a DER point of interconnection).
    pub fn mark_measured(&mut self, id: usize) -> Result<()> {
        self.index_of(id)?;
        self.zero_injection_buses.remove(&id);
        self.rtu_buses.insert(id);
        Ok(())
    }

    /// Append a bus connected to `parent` through a new branch; returns its id.
    pub fn add_tie_bus(&mut self, parent: usize, r: T, x: T) -> Result<usize> {
        let p = self.index_of(parent)?;
        let id = self.buses.iter().map(|b| b.id).max().unwrap_or(0) + 1;
        let mut bus = Bus::new(id);
        bus.v_real = self.buses[p].v_real;
        bus.v_imag = self.buses[p].v_imag;
        self.buses.push(bus);
        self.branches
            .push(Branch::from_impedance(parent, id, r, x, T::zero()));
        self.zero_injection_buses.insert(id);
        self.reindex()?;
        Ok(id)
    }

    /// `copies` replicas of this case, renumbered by blocks of `stride` ids,
    /// chained by tie lines between bus `tie_bus` of consecutive replicas.
    /// Only the first replica keeps its slack bus; the others become PV buses.
    pub fn tiled(&self, copies: usize, tie_bus: usize, r: T, x: T) -> Result<Self> {
        self.index_of(tie_bus)?;
        let stride = self.buses.iter().map(|b| b.id).max().unwrap_or(0) + 1;
        let mut buses = Vec::with_capacity(self.buses.len() * copies);
        let mut branches = Vec::new();
        let mut rtu = BTreeSet::new();
        let mut zi = BTreeSet::new();
        for c in 0..copies {
            let off = c * stride;
            for b in &self.buses {
                let mut nb = b.clone();
                nb.id += off;
                if c > 0 && nb.kind == BusKind::Slack {
                    nb.kind = BusKind::Pv;
                }
                buses.push(nb);
            }
            for br in &self.branches {
                let mut nb = br.clone();
                nb.from += off;
                nb.to += off;
                branches.push(nb);
            }
            rtu.extend(self.rtu_buses.iter().map(|id| id + off));
            zi.extend(self.zero_injection_buses.iter().map(|id| id + off));
            if c > 0 {
                branches.push(Branch::from_impedance(
                    tie_bus + off - stride,
                    tie_bus + off,
                    r,
                    x,
                    T::zero(),
                ));
            }
        }
        Self::with_placement(self.base_mva, buses, branches, rtu, zi)
    }

    pub fn voltages(&self) -> (Vec<T>, Vec<T>) {
        (
            self.buses.iter().map(|b| b.v_real).collect(),
            self.buses.iter().map(|b| b.v_imag).collect(),
        )
    }
}

/// Nodal admittance matrix by bus position, one sorted row per bus with the
/// diagonal included.
#[derive(Debug, Clone, PartialEq)]
pub struct Admittance<T> {
    rows: Vec<Vec<(usize, T, T)>>,
}

impl<T: Scalar> Admittance<T> {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// `(column, G, B)` entries of row `k`.
    pub fn row(&self, k: usize) -> &[(usize, T, T)] {
        &self.rows[k]
    }

    pub fn get(&self, k: usize, l: usize) -> (T, T) {
        match self.rows[k].binary_search_by_key(&l, |e| e.0) {
            Ok(p) => (self.rows[k][p].1, self.rows[k][p].2),
            Err(_) => (T::zero(), T::zero()),
        }
    }

    /// Current leaving bus `k` into the network, `(Y V)_k`.
    pub fn current(&self, k: usize, vr: &[T], vi: &[T]) -> (T, T) {
        self.rows[k]
            .iter()
            .fold((T::zero(), T::zero()), |(ir, ii), &(l, g, b)| {
                (ir + g * vr[l] - b * vi[l], ii + g * vi[l] + b * vr[l])
            })
    }
}

/// Stamp the nodal admittance. Parallel branches add up; a bus with no
/// incident branch is an error.
pub fn build_admittance<T: Scalar>(case: &GridCase<T>) -> Result<Admittance<T>> {
    let n = case.n_buses();
    let mut acc: Vec<BTreeMap<usize, (T, T)>> = vec![BTreeMap::new(); n];
    let mut degree = vec![0usize; n];
    let half = T::of(0.5);
    let add = |acc: &mut Vec<BTreeMap<usize, (T, T)>>, k: usize, l: usize, g: T, b: T| {
        let e = acc[k].entry(l).or_insert((T::zero(), T::zero()));
        e.0 = e.0 + g;
        e.1 = e.1 + b;
    };
    for br in &case.branches {
        let f = case.index_of(br.from)?;
        let t = case.index_of(br.to)?;
        degree[f] += 1;
        degree[t] += 1;
        add(&mut acc, f, f, br.g, br.b + half * br.shunt_b);
        add(&mut acc, t, t, br.g, br.b + half * br.shunt_b);
        add(&mut acc, f, t, -br.g, -br.b);
        add(&mut acc, t, f, -br.g, -br.b);
    }
    for (k, bus) in case.buses.iter().enumerate() {
        if degree[k] == 0 {
            return Err(Error::DisconnectedBus(bus.id));
        }
        if bus.shunt_g != T::zero() || bus.shunt_b != T::zero() {
            add(&mut acc, k, k, bus.shunt_g, bus.shunt_b);
        }
    }
    Ok(Admittance {
        rows: acc
            .into_iter()
            .map(|m| m.into_iter().map(|(l, (g, b))| (l, g, b)).collect())
            .collect(),
    })
}

/// Conductance and susceptance equivalent of an RTU `(P, Q, |V|)` reading.
pub fn feature_transform<T: Scalar>(p_z: T, q_z: T, v_z: T) -> Result<(T, T)> {
    if !(v_z > T::zero()) {
        return Err(Error::InvalidVoltageMagnitude(v_z.as_f64()));
    }
    let v2 = v_z * v_z;
    Ok((p_z / v2, q_z / v2))
}

/// RTU measurement circuit residual: the modelled current
/// `(g_z + j b_z) V + n` minus the circuit current `i`. Affine in every argument
/// once `g_z`, `b_z` are fixed.
#[allow(clippy::too_many_arguments)]
pub fn rtu_injection_residual<T: Scalar>(
    v_real: T,
    v_imag: T,
    g_z: T,
    b_z: T,
    n_real: T,
    n_imag: T,
    i_real: T,
    i_imag: T,
) -> (T, T) {
    (
        g_z * v_real - b_z * v_imag + n_real - i_real,
        g_z * v_imag + b_z * v_real + n_imag - i_imag,
    )
}

/// KCL at bus `id`: current leaving into the network plus every current drawn
/// by attached devices (injections enter with negative sign).
pub fn grid_kcl_residual<T: Scalar>(
    case: &GridCase<T>,
    y: &Admittance<T>,
    id: usize,
    vr: &[T],
    vi: &[T],
    drawn: &[(T, T)],
) -> Result<(T, T)> {
    let k = case.index_of(id)?;
    let (mut rr, mut ri) = y.current(k, vr, vi);
    for &(a, b) in drawn {
        rr = rr + a;
        ri = ri + b;
    }
    Ok((rr, ri))
}

/// Current drawn by a constant-power load `(P, Q)` at voltage `V`.
pub fn load_current<T: Scalar>(p: T, q: T, v_real: T, v_imag: T) -> Result<(T, T)> {
    let m2 = v_real * v_real + v_imag * v_imag;
    if !(m2 > T::zero()) {
        return Err(Error::SingularLoadCurrent);
    }
    Ok(((p * v_real + q * v_imag) / m2, (p * v_imag - q * v_real) / m2))
}

/// Partial derivatives of [`load_current`] with respect to `(v_real, v_imag)`:
/// `[[dir/dvr, dir/dvi], [dii/dvr, dii/dvi]]`.
pub fn load_current_jacobian<T: Scalar>(p: T, q: T, vr: T, vi: T) -> Result<[[T; 2]; 2]> {
    let m2 = vr * vr + vi * vi;
    if !(m2 > T::zero()) {
        return Err(Error::SingularLoadCurrent);
    }
    let two = T::of(2.0);
    let m4 = m2 * m2;
    let nr = p * vr + q * vi;
    let ni = p * vi - q * vr;
    Ok([
        [(p * m2 - nr * two * vr) / m4, (q * m2 - nr * two * vi) / m4],
        [(-q * m2 - ni * two * vr) / m4, (p * m2 - ni * two * vi) / m4],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus() -> GridCase<f64> {
        let mut b1 = Bus::new(1);
        b1.kind = BusKind::Slack;
        b1.injection = Some((0.0, 0.0));
        let b2 = Bus::new(2);
        GridCase::new(
            100.0,
            vec![b1, b2],
            vec![Branch {
                from: 1,
                to: 2,
                g: 1.0,
                b: -10.0,
                shunt_b: 0.0,
            }],
        )
        .unwrap()
    }

    #[test]
    fn single_branch_stamp() {
        let y = build_admittance(&two_bus()).unwrap();
        assert_eq!(y.get(0, 0), (1.0, -10.0));
        assert_eq!(y.get(1, 1), (1.0, -10.0));
        assert_eq!(y.get(0, 1), (-1.0, 10.0));
        assert_eq!(y.get(1, 0), (-1.0, 10.0));
    }

    #[test]
    fn ring_diagonal_is_twice_branch() {
        let buses = (1..=3).map(Bus::<f64>::new).collect();
        let br = |f, t| Branch {
            from: f,
            to: t,
            g: 2.0,
            b: -8.0,
            shunt_b: 0.0,
        };
        let case = GridCase::new(100.0, buses, vec![br(1, 2), br(2, 3), br(3, 1)]).unwrap();
        let y = build_admittance(&case).unwrap();
        for k in 0..3 {
            assert_eq!(y.get(k, k), (4.0, -16.0));
        }
    }

    #[test]
    fn parallel_branches_sum_and_isolated_bus_fails() {
        let mut case = two_bus();
        case.branches.push(case.branches[0].clone());
        let y = build_admittance(&case).unwrap();
        assert_eq!(y.get(0, 1), (-2.0, 20.0));

        let buses = vec![Bus::<f64>::new(1), Bus::new(2), Bus::new(3)];
        let case = GridCase::new(
            100.0,
            buses,
            vec![Branch {
                from: 1,
                to: 2,
                g: 1.0,
                b: -1.0,
                shunt_b: 0.0,
            }],
        )
        .unwrap();
        assert!(matches!(
            build_admittance(&case),
            Err(Error::DisconnectedBus(3))
        ));
    }

    #[test]
    fn case_invariants() {
        let bad = GridCase::new(
            100.0,
            vec![Bus::<f64>::new(1)],
            vec![Branch {
                from: 1,
                to: 7,
                g: 1.0,
                b: 0.0,
                shunt_b: 0.0,
            }],
        );
        assert!(matches!(bad, Err(Error::UnknownBus(7))));
        assert!(GridCase::<f64>::new(0.0, vec![Bus::new(1)], vec![]).is_err());
        assert!(matches!(
            GridCase::<f64>::new(1.0, vec![Bus::new(1), Bus::new(1)], vec![]),
            Err(Error::DuplicateBus(1))
        ));
    }

    #[test]
    fn feature_transform_examples() {
        assert_eq!(feature_transform(1.0, 0.5, 1.0).unwrap(), (1.0, 0.5));
        assert_eq!(feature_transform(0.0, 0.0, 0.97).unwrap(), (0.0, 0.0));
        let (g, b) = feature_transform(0.8f64, -0.2, 1.02).unwrap();
        // 0.8 / 1.0404, -0.2 / 1.0404
        assert!((g - 0.768935024990388).abs() < 1e-15);
        assert!((b + 0.192233756247597).abs() < 1e-15);
        assert!(feature_transform(1.0, 0.0, 0.0).is_err());
        assert!(feature_transform(1.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn rtu_residual_examples() {
        assert_eq!(
            rtu_injection_residual(1.0, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
            (0.0, 0.0)
        );
        // V = 1 + 0j, g = 1, b = 0.5 implies current (1, 0.5)
        let r = rtu_injection_residual(1.0, 0.0, 1.0, 0.5, 0.0, 0.0, 1.0, 0.5);
        assert_eq!(r, (0.0, 0.0));
    }

    #[test]
    fn load_current_examples() {
        assert_eq!(load_current(1.0, 0.0, 1.0, 0.0).unwrap(), (1.0, 0.0));
        assert_eq!(load_current(0.0, 1.0, 1.0, 0.0).unwrap(), (0.0, -1.0));
        let (ir, ii) = load_current(0.9, 0.3, 0.98, 0.05).unwrap();
        let m2 = 0.98f64 * 0.98 + 0.05 * 0.05;
        assert!((ir - (0.9 * 0.98 + 0.3 * 0.05) / m2).abs() < 1e-15);
        assert!((ii - (0.9 * 0.05 - 0.3 * 0.98) / m2).abs() < 1e-15);
        // drawn complex power equals (P, Q)
        let s_p = 0.98 * ir + 0.05 * ii;
        let s_q = 0.05 * ir - 0.98 * ii;
        assert!((s_p - 0.9).abs() < 1e-14 && (s_q - 0.3).abs() < 1e-14);
        assert!(matches!(
            load_current(1.0, 1.0, 0.0, 0.0),
            Err(Error::SingularLoadCurrent)
        ));
    }

    #[test]
    fn flat_voltages_have_zero_kcl() {
        let case = two_bus();
        let y = build_admittance(&case).unwrap();
        let vr = vec![1.02, 1.02];
        let vi = vec![0.1, 0.1];
        let r = grid_kcl_residual(&case, &y, 2, &vr, &vi, &[]).unwrap();
        assert!(r.0.abs() < 1e-15 && r.1.abs() < 1e-15);
        assert!(grid_kcl_residual(&case, &y, 9, &vr, &vi, &[]).is_err());
    }
}
