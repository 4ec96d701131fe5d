//! Composite N-qudit system: local terms, dense assembly, dressed spectrum.

use crate::device::{Atom, CouplingKind, DeviceGraph, EnergyField, OperatorType, PulseSpec};
use crate::error::{Error, Result};
use crate::linalg::{diag, fix_column_phases, hermitian_eigen, kron, CMat, C64, ZERO};
use crate::pulse;
use crate::qubit::{build_fluxonium, FluxoniumParams, TruncatedDerivative, TruncatedQubit, DEFAULT_DIM_FULL};

pub const DEFAULT_DENSE_LIMIT: usize = 4096;

#[derive(Clone, Debug)]
pub struct SystemOptions {
    pub truncated_dim: usize,
    pub dim_full: usize,
    pub dense_limit: usize,
    /// Also compute derivatives of every local term with respect to the
    /// circuit energies.
    pub derivatives: bool,
}

impl Default for SystemOptions {
    fn default() -> Self {
        Self {
            truncated_dim: 3,
            dim_full: DEFAULT_DIM_FULL,
            dense_limit: DEFAULT_DENSE_LIMIT,
            derivatives: false,
        }
    }
}

impl SystemOptions {
    pub fn with_dim(truncated_dim: usize) -> Self {
        Self {
            truncated_dim,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    /// Time-dependent coefficient of drive `index` in `CompositeSystem::drives`.
    Drive(usize),
}

#[derive(Clone, Debug)]
pub struct LocalTerm {
    /// Ascending, distinct site indices.
    pub sites: Vec<usize>,
    /// Operator on the tensor product of the sites, site order as listed.
    pub matrix: CMat,
    pub coeff: Coefficient,
}

#[derive(Clone, Debug)]
pub struct Drive {
    pub node: usize,
    pub pulse: usize,
    pub spec: PulseSpec,
}

impl Drive {
    pub fn coefficient(&self, t: C64) -> C64 {
        pulse::coefficient(&self.spec, t)
    }
}

#[derive(Clone, Debug)]
pub struct EdgeTerm {
    pub a: usize,
    pub b: usize,
    pub capacitive: f64,
    pub inductive: f64,
}

#[derive(Clone, Debug)]
pub struct CompositeSystem {
    pub names: Vec<String>,
    pub dims: Vec<usize>,
    pub qudits: Vec<TruncatedQubit>,
    /// One 1-body term per node (index = node) followed by one 2-body term
    /// per edge.
    pub static_terms: Vec<LocalTerm>,
    pub drive_terms: Vec<LocalTerm>,
    pub drives: Vec<Drive>,
    pub edges: Vec<EdgeTerm>,
    /// Per node, derivatives with respect to (ec, ej, el).
    pub derivatives: Option<Vec<[TruncatedDerivative; 3]>>,
    pub dense_limit: usize,
}

fn field_slot(field: EnergyField) -> usize {
    match field {
        EnergyField::Ec => 0,
        EnergyField::Ej => 1,
        EnergyField::El => 2,
    }
}

pub fn assemble(g: &DeviceGraph, opts: &SystemOptions) -> Result<CompositeSystem> {
    g.validate()?;
    let d = opts.truncated_dim;
    let mut qudits = Vec::with_capacity(g.nodes.len());
    let mut derivatives = opts.derivatives.then(Vec::new);
    for spec in g.nodes.values() {
        let q = build_fluxonium(FluxoniumParams::from_spec(spec), opts.dim_full)?;
        qudits.push(q.truncate(d)?);
        if let Some(ds) = derivatives.as_mut() {
            ds.push([
                q.truncated_derivative(d, EnergyField::Ec)?,
                q.truncated_derivative(d, EnergyField::Ej)?,
                q.truncated_derivative(d, EnergyField::El)?,
            ]);
        }
    }
    let mut static_terms: Vec<LocalTerm> = qudits
        .iter()
        .enumerate()
        .map(|(i, q)| LocalTerm {
            sites: vec![i],
            matrix: q.h_d.clone(),
            coeff: Coefficient::Constant(1.0),
        })
        .collect();
    let mut edges = Vec::with_capacity(g.edges.len());
    for e in &g.edges {
        let ia = g.node_index(&e.a).expect("validated");
        let ib = g.node_index(&e.b).expect("validated");
        let (a, b) = if ia < ib { (ia, ib) } else { (ib, ia) };
        let term = EdgeTerm {
            a,
            b,
            capacitive: e.coupling.capacitive,
            inductive: e.coupling.inductive,
        };
        static_terms.push(LocalTerm {
            sites: vec![a, b],
            matrix: edge_matrix(&qudits[a], &qudits[b], term.capacitive, term.inductive),
            coeff: Coefficient::Constant(1.0),
        });
        edges.push(term);
    }
    let mut drives = Vec::new();
    let mut drive_terms = Vec::new();
    for (node, spec) in g.nodes.values().enumerate() {
        for (k, p) in spec.pulses.iter().enumerate() {
            let op = match p.operator_type {
                OperatorType::PhiOperator => qudits[node].phi_d.clone(),
                OperatorType::NOperator => qudits[node].n_d.clone(),
            };
            drive_terms.push(LocalTerm {
                sites: vec![node],
                matrix: op,
                coeff: Coefficient::Drive(drives.len()),
            });
            drives.push(Drive {
                node,
                pulse: k,
                spec: p.clone(),
            });
        }
    }
    Ok(CompositeSystem {
        names: g.node_names(),
        dims: vec![d; qudits.len()],
        qudits,
        static_terms,
        drive_terms,
        drives,
        edges,
        derivatives,
        dense_limit: opts.dense_limit,
    })
}

fn edge_matrix(qa: &TruncatedQubit, qb: &TruncatedQubit, jc: f64, sl: f64) -> CMat {
    kron(&qa.n_d, &qb.n_d) * C64::new(jc, 0.0) + kron(&qa.phi_d, &qb.phi_d) * C64::new(sl, 0.0)
}

/// Embed an operator acting on `sites` into the full tensor-product space.
pub fn embed(op: &CMat, sites: &[usize], dims: &[usize]) -> CMat {
    let total: usize = dims.iter().product();
    let strides = strides(dims);
    let local_dims: Vec<usize> = sites.iter().map(|&s| dims[s]).collect();
    let local: usize = local_dims.iter().product();
    assert_eq!(op.nrows(), local);
    // offset of each local basis state inside the full index
    let offsets: Vec<usize> = (0..local)
        .map(|l| {
            let mut rem = l;
            let mut off = 0;
            for (k, &s) in sites.iter().enumerate().rev() {
                off += (rem % local_dims[k]) * strides[s];
                rem /= local_dims[k];
            }
            off
        })
        .collect();
    let mut out = CMat::zeros(total, total);
    for col in 0..total {
        let mut lc = 0;
        for (k, &s) in sites.iter().enumerate() {
            lc = lc * local_dims[k] + (col / strides[s]) % dims[s];
        }
        let base = col - offsets[lc];
        for lr in 0..local {
            let v = op[(lr, lc)];
            if v != ZERO {
                out[(base + offsets[lr], col)] += v;
            }
        }
    }
    out
}

pub fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

pub fn flat_index(label: &[usize], dims: &[usize]) -> usize {
    label.iter().zip(dims).fold(0, |acc, (&l, &d)| acc * d + l)
}

pub fn unflatten(mut index: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for k in (0..dims.len()).rev() {
        out[k] = index % dims[k];
        index /= dims[k];
    }
    out
}

/// Flat indices of the labels whose entries are all 0 or 1, in label order.
pub fn computational_indices(dims: &[usize]) -> Vec<usize> {
    let n = dims.len();
    (0..1usize << n)
        .map(|bits| {
            let label: Vec<usize> = (0..n).map(|k| (bits >> (n - 1 - k)) & 1).collect();
            flat_index(&label, dims)
        })
        .collect()
}

impl CompositeSystem {
    pub fn n_sites(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    fn check_dense(&self) -> Result<usize> {
        let total = self.total_dim();
        if total > self.dense_limit {
            return Err(Error::DimensionLimit {
                dim: total,
                limit: self.dense_limit,
            });
        }
        Ok(total)
    }

    /// Dense Hamiltonian; drives are included when a time is given.
    pub fn dense_hamiltonian(&self, t: Option<f64>) -> Result<CMat> {
        let total = self.check_dense()?;
        let mut h = CMat::zeros(total, total);
        for term in &self.static_terms {
            h += embed(&term.matrix, &term.sites, &self.dims);
        }
        if let Some(t) = t {
            for term in &self.drive_terms {
                let c = self.term_coefficient(term, C64::new(t, 0.0));
                if c != ZERO {
                    h += embed(&term.matrix, &term.sites, &self.dims) * c;
                }
            }
        }
        Ok(h)
    }

    pub fn term_coefficient(&self, term: &LocalTerm, t: C64) -> C64 {
        match term.coeff {
            Coefficient::Constant(c) => C64::new(c, 0.0),
            Coefficient::Drive(k) => self.drives[k].coefficient(t),
        }
    }

    fn derivative(&self, node: usize, field: EnergyField) -> Result<&TruncatedDerivative> {
        let ds = self.derivatives.as_ref().ok_or_else(|| {
            Error::Numerical("system was assembled without derivative information".into())
        })?;
        Ok(&ds[node][field_slot(field)])
    }

    /// Derivative of a static term's matrix with respect to `atom`
    /// (effective energies), or `None` when it does not depend on it.
    pub fn static_term_derivative(&self, index: usize, atom: Atom) -> Result<Option<CMat>> {
        let n = self.n_sites();
        if index < n {
            return Ok(match atom {
                Atom::Energy { node, field } if node == index => Some(diag(&self.derivative(node, field)?.dh)),
                _ => None,
            });
        }
        let e = &self.edges[index - n];
        let (qa, qb) = (&self.qudits[e.a], &self.qudits[e.b]);
        Ok(match atom {
            Atom::Coupling { edge, kind } if edge == index - n => Some(match kind {
                CouplingKind::Capacitive => kron(&qa.n_d, &qb.n_d),
                CouplingKind::Inductive => kron(&qa.phi_d, &qb.phi_d),
            }),
            Atom::Energy { node, field } if node == e.a || node == e.b => {
                let dq = self.derivative(node, field)?;
                let jc = C64::new(e.capacitive, 0.0);
                let sl = C64::new(e.inductive, 0.0);
                Some(if node == e.a {
                    kron(&dq.dn, &qb.n_d) * jc + kron(&dq.dphi, &qb.phi_d) * sl
                } else {
                    kron(&qa.n_d, &dq.dn) * jc + kron(&qa.phi_d, &dq.dphi) * sl
                })
            }
            _ => None,
        })
    }

    /// Derivative of a drive operator with respect to `atom`.
    pub fn drive_operator_derivative(&self, drive: usize, atom: Atom) -> Result<Option<CMat>> {
        let dr = &self.drives[drive];
        Ok(match atom {
            Atom::Energy { node, field } if node == dr.node => {
                let dq = self.derivative(node, field)?;
                Some(match dr.spec.operator_type {
                    OperatorType::PhiOperator => dq.dphi.clone(),
                    OperatorType::NOperator => dq.dn.clone(),
                })
            }
            _ => None,
        })
    }

    /// Dense derivative of the idle Hamiltonian with respect to `atom`.
    pub fn dense_static_derivative(&self, atom: Atom) -> Result<CMat> {
        let total = self.check_dense()?;
        let mut out = CMat::zeros(total, total);
        for (i, term) in self.static_terms.iter().enumerate() {
            if let Some(m) = self.static_term_derivative(i, atom)? {
                out += embed(&m, &term.sites, &self.dims);
            }
        }
        Ok(out)
    }

    /// Atoms the system depends on, in a fixed order.
    pub fn atoms(&self) -> Vec<Atom> {
        let mut out = Vec::new();
        for node in 0..self.n_sites() {
            for field in EnergyField::ALL {
                out.push(Atom::Energy { node, field });
            }
        }
        for edge in 0..self.edges.len() {
            for kind in [CouplingKind::Capacitive, CouplingKind::Inductive] {
                out.push(Atom::Coupling { edge, kind });
            }
        }
        for dr in &self.drives {
            for field in crate::device::PulseField::ALL {
                out.push(Atom::Pulse {
                    node: dr.node,
                    pulse: dr.pulse,
                    field,
                });
            }
        }
        out
    }

    pub fn drive_index(&self, node: usize, pulse: usize) -> Option<usize> {
        self.drives.iter().position(|d| d.node == node && d.pulse == pulse)
    }
}

/// Dressed spectrum of the idle system with bare-label assignment.
#[derive(Clone, Debug)]
pub struct DressedSpectrum {
    pub dims: Vec<usize>,
    /// Eigenvalues in ascending order.
    pub eigvals: Vec<f64>,
    /// `label_to_eig[label]` is the eigenvalue index assigned to a label.
    pub label_to_eig: Vec<usize>,
    /// Eigenvectors in label order, phases fixed.
    pub vectors: CMat,
    /// Energy of each label (not ground referenced).
    pub label_energies: Vec<f64>,
    /// Overlap of each label's dressed state with its bare state.
    pub overlaps: Vec<f64>,
}

/// Rank-N tensor of ground-referenced dressed energies.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl EnergyTensor {
    pub fn get(&self, label: &[usize]) -> f64 {
        self.data[flat_index(label, &self.dims)]
    }
}

pub fn dressed_spectrum(sys: &CompositeSystem) -> Result<DressedSpectrum> {
    let h = sys.dense_hamiltonian(None)?;
    let (eigvals, vecs) = hermitian_eigen(&h);
    let dim = eigvals.len();
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for e in 0..dim {
        for label in 0..dim {
            let ov = vecs[(label, e)].norm_sqr();
            if ov >= 0.25 {
                candidates.push((ov, label, e));
            }
        }
    }
    candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut label_to_eig = vec![usize::MAX; dim];
    let mut eig_taken = vec![false; dim];
    let mut overlaps = vec![0.0; dim];
    for (ov, label, e) in candidates {
        if label_to_eig[label] == usize::MAX && !eig_taken[e] {
            label_to_eig[label] = e;
            eig_taken[e] = true;
            overlaps[label] = ov;
        }
    }
    if let Some(label) = label_to_eig.iter().position(|&e| e == usize::MAX) {
        let best = (0..dim)
            .filter(|&e| !eig_taken[e])
            .map(|e| (e, vecs[(label, e)].norm_sqr()))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        return Err(Error::Assignment(format!(
            "bare label {:?} has no dressed state with overlap >= 0.25 (best unassigned: {:?})",
            unflatten(label, &sys.dims),
            best
        )));
    }
    let mut vectors = CMat::zeros(dim, dim);
    for (label, &e) in label_to_eig.iter().enumerate() {
        vectors.set_column(label, &vecs.column(e));
    }
    fix_column_phases(&mut vectors);
    let label_energies = label_to_eig.iter().map(|&e| eigvals[e]).collect();
    Ok(DressedSpectrum {
        dims: sys.dims.clone(),
        eigvals,
        label_to_eig,
        vectors,
        label_energies,
        overlaps,
    })
}

impl DressedSpectrum {
    pub fn energy_tensor(&self) -> EnergyTensor {
        let e0 = self.label_energies[0];
        EnergyTensor {
            dims: self.dims.clone(),
            data: self.label_energies.iter().map(|e| e - e0).collect(),
        }
    }

    /// Derivative of every label energy for a dense `dH`.
    pub fn energy_derivatives(&self, dh: &CMat) -> Vec<f64> {
        (0..self.label_energies.len())
            .map(|l| {
                let v = self.vectors.column(l);
                (v.adjoint() * dh * v)[(0, 0)].re
            })
            .collect()
    }
}

pub fn energy_tensor(sys: &CompositeSystem) -> Result<EnergyTensor> {
    Ok(dressed_spectrum(sys)?.energy_tensor())
}

pub fn eigenbasis(sys: &CompositeSystem) -> Result<CMat> {
    Ok(dressed_spectrum(sys)?.vectors)
}

/// Flat label indices `(00, 11, 10, 01)` on `pair`, others in ground.
pub fn zz_labels(dims: &[usize], pair: (usize, usize)) -> [usize; 4] {
    let mk = |a: usize, b: usize| {
        let mut l = vec![0; dims.len()];
        l[pair.0] = a;
        l[pair.1] = b;
        flat_index(&l, dims)
    };
    [mk(0, 0), mk(1, 1), mk(1, 0), mk(0, 1)]
}

pub fn static_zz(e: &EnergyTensor, pair: (usize, usize)) -> f64 {
    let [g, both, a, b] = zz_labels(&e.dims, pair);
    e.data[g] + e.data[both] - e.data[a] - e.data[b]
}
