//! Simulation front end: a device graph plus options becomes a propagator
//! whose output columns are expressed in the product or dressed basis, with
//! gradients of any loss on those columns.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adjoint::{backprop, eigenvector_gradient, forward_store_all, GradientMode};
use crate::composite::{assemble, computational_indices, dressed_spectrum, CompositeSystem, DressedSpectrum, SystemOptions};
use crate::device::{resolve_params, Atom, DeviceGraph, ParameterSet};
use crate::error::{Error, Result};
use crate::linalg::{CMat, ZERO};
use crate::state::StateBatch;
use crate::trotter::{TrotterOrder, TrotterPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// Bare product states of the truncated qudits.
    Product,
    /// Dressed eigenstates of the idle Hamiltonian, labelled by bare states.
    Eigen,
}

impl FromStr for Basis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" => Ok(Self::Product),
            "eigen" => Ok(Self::Eigen),
            other => Err(Error::Parameter(format!("unknown basis {other:?} (expected product or eigen)"))),
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Product => "product",
            Self::Eigen => "eigen",
        })
    }
}

/// Which labels are propagated as initial columns.
#[derive(Clone, Debug, PartialEq)]
pub enum Columns {
    /// Labels with every qudit in 0 or 1.
    Computational,
    All,
    Labels(Vec<usize>),
}

#[derive(Clone, Debug)]
pub struct EvolveOptions {
    pub system: SystemOptions,
    pub t0: f64,
    pub tg: f64,
    pub astep: usize,
    pub order: TrotterOrder,
    pub basis: Basis,
    pub columns: Columns,
}

impl EvolveOptions {
    pub fn new(tg: f64, astep: usize) -> Self {
        Self {
            system: SystemOptions {
                derivatives: true,
                ..SystemOptions::default()
            },
            t0: 0.0,
            tg,
            astep,
            order: TrotterOrder::Second,
            basis: Basis::Product,
            columns: Columns::Computational,
        }
    }

    pub fn truncated_dim(mut self, d: usize) -> Self {
        self.system.truncated_dim = d;
        self
    }

    pub fn order(mut self, order: TrotterOrder) -> Self {
        self.order = order;
        self
    }

    pub fn basis(mut self, basis: Basis) -> Self {
        self.basis = basis;
        self
    }

    pub fn columns(mut self, columns: Columns) -> Self {
        self.columns = columns;
        self
    }
}

#[derive(Clone, Debug)]
pub struct Simulator {
    pub graph: DeviceGraph,
    pub sys: CompositeSystem,
    pub plan: TrotterPlan,
    pub basis: Basis,
    pub spectrum: Option<DressedSpectrum>,
    /// Flat labels of the propagated columns.
    pub labels: Vec<usize>,
}

/// Result of a forward run.
#[derive(Clone, Debug)]
pub struct Evolution {
    /// Final states in the product basis, one column per label.
    pub final_states: StateBatch,
    /// `matrix[r, s]` = amplitude of label `r` (in the chosen basis) in the
    /// evolved column `s`.
    pub matrix: CMat,
}

impl Simulator {
    pub fn new(g: &DeviceGraph, opts: &EvolveOptions) -> Result<Self> {
        let sys = assemble(g, &opts.system)?;
        let plan = TrotterPlan::new(&sys, opts.t0, opts.tg, opts.astep, opts.order)?;
        let spectrum = match opts.basis {
            Basis::Product => None,
            Basis::Eigen => Some(dressed_spectrum(&sys)?),
        };
        let dim = sys.total_dim();
        let labels = match &opts.columns {
            Columns::Computational => computational_indices(&sys.dims),
            Columns::All => (0..dim).collect(),
            Columns::Labels(l) => {
                if let Some(&bad) = l.iter().find(|&&x| x >= dim) {
                    return Err(Error::Shape(format!("label {bad} outside a space of dimension {dim}")));
                }
                l.clone()
            }
        };
        Ok(Self {
            graph: g.clone(),
            sys,
            plan,
            basis: opts.basis,
            spectrum,
            labels,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.sys.dims
    }

    pub fn initial_states(&self) -> StateBatch {
        match &self.spectrum {
            None => StateBatch::basis(&self.sys.dims, &self.labels),
            Some(spec) => {
                let dim = self.sys.total_dim();
                let mut b = StateBatch::zeros(&self.sys.dims, self.labels.len());
                for (c, &l) in self.labels.iter().enumerate() {
                    b.data[c * dim..(c + 1) * dim].copy_from_slice(spec.vectors.column(l).as_slice());
                }
                b
            }
        }
    }

    /// Propagate arbitrary product-basis states.
    pub fn evolve_states(&self, initial: &StateBatch) -> Result<StateBatch> {
        let mut psi = initial.clone();
        self.plan.evolve(&self.sys, &mut psi)?;
        Ok(psi)
    }

    /// Express product-basis states in the simulator's basis.
    pub fn project(&self, states: &StateBatch) -> CMat {
        let m = states.to_matrix();
        match &self.spectrum {
            None => m,
            Some(spec) => spec.vectors.adjoint() * m,
        }
    }

    pub fn run(&self) -> Result<Evolution> {
        let final_states = self.evolve_states(&self.initial_states())?;
        let matrix = self.project(&final_states);
        Ok(Evolution { final_states, matrix })
    }

    /// Gradient of a loss with respect to atoms, given
    /// `g = dL/d conj(matrix)` of the same shape as `Evolution::matrix`.
    pub fn atom_gradient(&self, evo: &Evolution, g: &CMat, atoms: &[Atom], mode: GradientMode) -> Result<Vec<f64>> {
        let dim = self.sys.total_dim();
        if g.nrows() != dim || g.ncols() != self.labels.len() {
            return Err(Error::Shape(format!(
                "loss gradient is {}x{}, expected {}x{}",
                g.nrows(),
                g.ncols(),
                dim,
                self.labels.len()
            )));
        }
        let seed = match &self.spectrum {
            None => g.clone(),
            Some(spec) => &spec.vectors * g,
        };
        let seed = StateBatch::from_matrix(&self.sys.dims, &seed);
        let stored = match mode {
            GradientMode::Adjoint => None,
            GradientMode::StoreAll => Some(forward_store_all(&self.sys, &self.plan, &self.initial_states())?),
        };
        let bp = backprop(&self.sys, &self.plan, &evo.final_states, &seed, atoms, stored.as_deref())?;
        let mut grad = bp.gradient;
        if let Some(spec) = &self.spectrum {
            // labels whose dressed vector enters the loss: propagated columns and rows of g
            let mut involved: Vec<usize> = self.labels.clone();
            for r in 0..dim {
                if !involved.contains(&r) && g.row(r).iter().any(|z| *z != ZERO) {
                    involved.push(r);
                }
            }
            let psi = evo.final_states.to_matrix();
            let adj = bp.adjoint.to_matrix();
            let mut weights = CMat::zeros(dim, involved.len());
            for (j, &l) in involved.iter().enumerate() {
                let mut w = weights.column_mut(j);
                if let Some(s) = self.labels.iter().position(|&x| x == l) {
                    w += adj.column(s);
                }
                for s in 0..self.labels.len() {
                    let gs = g[(l, s)];
                    if gs != ZERO {
                        w += psi.column(s) * gs.conj();
                    }
                }
            }
            let extra = eigenvector_gradient(&self.sys, spec, atoms, &involved, &weights)?;
            for (a, b) in grad.iter_mut().zip(extra) {
                *a += b;
            }
        }
        Ok(grad)
    }

    /// Gradient with respect to the entries of `theta` (nominal values).
    pub fn param_gradient(&self, evo: &Evolution, g: &CMat, theta: &ParameterSet, mode: GradientMode) -> Result<Vec<f64>> {
        let (atoms, map) = param_atoms(&self.graph, theta)?;
        let ga = self.atom_gradient(evo, g, &atoms, mode)?;
        Ok(map
            .iter()
            .map(|terms| terms.iter().map(|&(a, w)| ga[a] * w).sum())
            .collect())
    }
}

/// Distinct atoms touched by `theta` and, per entry, `(atom index, weight)`
/// pairs where the weight converts effective to nominal energies.
pub fn param_atoms(g: &DeviceGraph, theta: &ParameterSet) -> Result<(Vec<Atom>, Vec<Vec<(usize, f64)>>)> {
    let resolved = resolve_params(g, theta)?;
    let mut atoms: Vec<Atom> = Vec::new();
    let mut map = Vec::with_capacity(resolved.len());
    for targets in resolved {
        let mut terms = Vec::with_capacity(targets.len());
        for atom in targets {
            let idx = match atoms.iter().position(|&a| a == atom) {
                Some(i) => i,
                None => {
                    atoms.push(atom);
                    atoms.len() - 1
                }
            };
            let w = match atom {
                Atom::Energy { node, field } => g.nodes[node].factor(field),
                _ => 1.0,
            };
            terms.push((idx, w));
        }
        map.push(terms);
    }
    Ok((atoms, map))
}

/// Rows and columns of `matrix` belonging to computational labels.
pub fn computational_block(sim: &Simulator, matrix: &CMat) -> Result<CMat> {
    let comp = computational_indices(sim.dims());
    let cols: Vec<usize> = comp
        .iter()
        .map(|l| {
            sim.labels
                .iter()
                .position(|x| x == l)
                .ok_or_else(|| Error::Shape(format!("computational label {l} was not propagated")))
        })
        .collect::<Result<_>>()?;
    Ok(CMat::from_fn(comp.len(), cols.len(), |r, c| matrix[(comp[r], cols[c])]))
}

/// Scatter a gradient on the computational block back to the full
/// `dim x columns` shape.
pub fn embed_computational_gradient(sim: &Simulator, g_block: &CMat) -> Result<CMat> {
    let comp = computational_indices(sim.dims());
    let dim = sim.sys.total_dim();
    let mut g = CMat::zeros(dim, sim.labels.len());
    for (c, l) in comp.iter().enumerate() {
        let col = sim
            .labels
            .iter()
            .position(|x| x == l)
            .ok_or_else(|| Error::Shape(format!("computational label {l} was not propagated")))?;
        for (r, &row) in comp.iter().enumerate() {
            g[(row, col)] = g_block[(r, c)];
        }
    }
    Ok(g)
}
