use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::der::{ConverterKind, InverterCurve, W_PER_MW};
use crate::error::{Error, Result};
use crate::estimator::blocks::BlockModel;
use crate::residual::LocalResidual;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Voltage,
    State,
    Noise,
    Parameter,
}

/// A local variable of a block: either an unknown or a fixed value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slot<T> {
    Var(usize),
    Fixed(T),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub label: String,
    pub model: BlockModel<T>,
    pub slots: Vec<Slot<T>>,
    /// First constraint row.
    pub row: usize,
}

impl<T: Scalar> Block<T> {
    pub fn gather(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend(self.slots.iter().map(|s| match *s {
            Slot::Var(j) => x[j],
            Slot::Fixed(v) => v,
        }));
    }
}

/// How a converter efficiency held in a coupling block is refreshed from an estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaLink<T> {
    pub block: usize,
    pub curve: InverterCurve<T>,
    /// Units aggregated behind the converter (DC watts to plant watts).
    pub scale: T,
    /// Plant watts per per-unit AC power.
    pub base_w: T,
}

/// Equality-constrained weighted least squares
/// `min sum_j w_j x_j^2  s.t.  h(x) = 0`, with `h` stacked from blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationProblem<T> {
    pub names: Vec<String>,
    pub kinds: Vec<VarKind>,
    pub weights: Vec<T>,
    pub initial: Vec<T>,
    pub blocks: Vec<Block<T>>,
    pub n_rows: usize,
    /// `(variable, a)` for diode junction voltages, for step limiting.
    pub diode_limits: Vec<(usize, T)>,
    pub eta_links: Vec<EtaLink<T>>,
    pub unknown_params: Vec<(String, usize)>,
    index: BTreeMap<String, usize>,
}

impl<T: Scalar> Default for EstimationProblem<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            kinds: Vec::new(),
            weights: Vec::new(),
            initial: Vec::new(),
            blocks: Vec::new(),
            n_rows: 0,
            diode_limits: Vec::new(),
            eta_links: Vec::new(),
            unknown_params: Vec::new(),
            index: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> EstimationProblem<T> {
    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn add_var(&mut self, name: String, kind: VarKind, weight: T, init: T) -> usize {
        let j = self.names.len();
        debug_assert!(!self.index.contains_key(&name), "duplicate variable {name}");
        self.index.insert(name.clone(), j);
        self.names.push(name);
        self.kinds.push(kind);
        self.weights.push(weight);
        self.initial.push(init);
        j
    }

    pub fn add_block(&mut self, label: String, model: BlockModel<T>, slots: Vec<Slot<T>>) -> usize {
        debug_assert_eq!(model.n_vars(), slots.len());
        let row = self.n_rows;
        self.n_rows += model.n_rows();
        self.blocks.push(Block {
            label,
            model,
            slots,
            row,
        });
        self.blocks.len() - 1
    }

    pub fn var(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn value(&self, x: &[T], name: &str) -> Option<T> {
        self.var(name).map(|j| x[j])
    }

    pub fn objective(&self, x: &[T]) -> T {
        self.weights
            .iter()
            .zip(x)
            .filter(|(w, _)| **w != T::zero())
            .map(|(&w, &v)| w * v * v)
            .sum()
    }

    /// Stacked constraint residuals.
    pub fn constraints(&self, x: &[T]) -> Vec<T> {
        let mut h = vec![T::zero(); self.n_rows];
        let mut local = Vec::new();
        for b in &self.blocks {
            b.gather(x, &mut local);
            let r = b.model.n_rows();
            b.model.eval(&local, &mut h[b.row..b.row + r]);
        }
        h
    }

    /// Block owning constraint row `row`.
    pub fn block_of_row(&self, row: usize) -> Option<&Block<T>> {
        self.blocks
            .iter()
            .find(|b| row >= b.row && row < b.row + b.model.n_rows())
    }

    /// Fail on any unknown parameter whose constraint-Jacobian column is
    /// identically zero at `x`.
    pub fn check_identifiable(&self, x: &[T]) -> Result<()> {
        if self.unknown_params.is_empty() {
            return Ok(());
        }
        let mut touched = vec![false; self.n_vars()];
        let mut local = Vec::new();
        for b in &self.blocks {
            b.gather(x, &mut local);
            let jac = b.model.dense_jacobian(&local);
            let nv = b.slots.len();
            for (c, s) in b.slots.iter().enumerate() {
                if let Slot::Var(j) = *s {
                    if (0..b.model.n_rows()).any(|r| jac[r * nv + c] != T::zero()) {
                        touched[j] = true;
                    }
                }
            }
        }
        for (name, j) in &self.unknown_params {
            if !touched[*j] {
                return Err(Error::UnidentifiableParameter(name.clone()));
            }
        }
        Ok(())
    }

    /// Re-evaluate every converter efficiency at the power implied by `x`.
    pub fn refresh_efficiencies(&mut self, x: &[T]) -> Result<()> {
        let mut local = Vec::new();
        for link in &self.eta_links {
            let block = &mut self.blocks[link.block];
            block.gather(x, &mut local);
            let BlockModel::Coupling(c) = &mut block.model else {
                continue;
            };
            let (v, i, vr, vi, nr, ni) = (local[0], local[1], local[2], local[3], local[4], local[5]);
            match link.curve.kind {
                ConverterKind::Inversion => {
                    let p = (link.scale * i * v).max(T::zero());
                    c.dc_gain = link.curve.efficiency(p)?;
                }
                ConverterKind::Rectification => {
                    let p_ac = -(c.g * (vr * vr + vi * vi) + nr * vr + ni * vi);
                    c.ac_gain = link.curve.efficiency((p_ac * link.base_w).abs())?;
                }
            }
        }
        Ok(())
    }
}

/// Plant watts per per-unit power on `base_mva`.
pub fn base_watts<T: Scalar>(base_mva: T) -> T {
    base_mva * T::of(W_PER_MW)
}
