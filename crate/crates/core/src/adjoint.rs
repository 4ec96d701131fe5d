//! Local continuous adjoint: gradients of a loss on the final states with
//! respect to every Hamiltonian parameter in one reverse sweep.
//!
//! The reverse sweep walks the stages backwards. It reconstructs the state
//! before each stage with the inverse stage exponential and propagates the
//! adjoint state with the stage adjoint. Each stage's contribution to every
//! parameter is `2 Re tr(dA B)` with `B = L(A, R)`, the Fréchet derivative
//! of the stage exponential applied to the local outer product `R` of state
//! and adjoint. Static stages have a fixed `A`, so their `R` is summed over
//! steps and a single Fréchet derivative is taken at the end.

use crate::composite::{CompositeSystem, Coefficient, DressedSpectrum};
use crate::device::{Atom, PulseField};
use crate::error::{Error, Result};
use crate::linalg::{expm, expm_frechet, trace_product, CMat, C64, I, ZERO};
use crate::pulse;
use crate::state::StateBatch;
use crate::trotter::TrotterPlan;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientMode {
    /// Reconstruct states by inverse stage exponentials.
    Adjoint,
    /// Keep every intermediate state from the forward pass.
    StoreAll,
}

/// Derivative data of one group for the requested atoms.
#[derive(Clone, Debug, Default)]
struct GroupDerivatives {
    /// `(atom index, d static_matrix / d atom)`.
    statics: Vec<(usize, CMat)>,
    /// `(drive term, atom index, d operator / d atom)`.
    operators: Vec<(usize, usize, CMat)>,
    /// `(drive term, field, atom index)` for envelope parameters.
    coefficients: Vec<(usize, PulseField, usize)>,
}

impl GroupDerivatives {
    fn is_empty(&self) -> bool {
        self.statics.is_empty() && self.operators.is_empty() && self.coefficients.is_empty()
    }
}

fn group_derivatives(sys: &CompositeSystem, plan: &TrotterPlan, atoms: &[Atom]) -> Result<Vec<GroupDerivatives>> {
    let mut out = Vec::with_capacity(plan.groups.len());
    for g in &plan.groups {
        let mut gd = GroupDerivatives::default();
        for (ai, &atom) in atoms.iter().enumerate() {
            let mut total: Option<CMat> = None;
            for &t in &g.static_terms {
                if let Some(m) = sys.static_term_derivative(t, atom)? {
                    total = Some(match total {
                        Some(acc) => acc + m,
                        None => m,
                    });
                }
            }
            if let Some(m) = total {
                gd.statics.push((ai, m));
            }
            for &k in &g.drive_terms {
                let Coefficient::Drive(d) = sys.drive_terms[k].coeff else {
                    continue;
                };
                if let Some(m) = sys.drive_operator_derivative(d, atom)? {
                    gd.operators.push((k, ai, m));
                }
                if let Atom::Pulse { node, pulse, field } = atom {
                    let dr = &sys.drives[d];
                    if dr.node == node && dr.pulse == pulse {
                        gd.coefficients.push((k, field, ai));
                    }
                }
            }
        }
        out.push(gd);
    }
    Ok(out)
}

fn field_slot(field: PulseField) -> usize {
    PulseField::ALL.iter().position(|&f| f == field).expect("listed")
}

/// Accumulate `2 Re tr(dA B)` for every atom the group depends on, where
/// `dA = scale * dH` and the drives are evaluated at `t`.
fn accumulate(
    sys: &CompositeSystem,
    gd: &GroupDerivatives,
    scale: C64,
    t: Option<C64>,
    b: &CMat,
    grad: &mut [f64],
) {
    for (ai, m) in &gd.statics {
        grad[*ai] += 2.0 * (scale * trace_product(m, b)).re;
    }
    let Some(t) = t else { return };
    for (k, ai, m) in &gd.operators {
        let c = sys.term_coefficient(&sys.drive_terms[*k], t);
        if c != ZERO {
            grad[*ai] += 2.0 * (scale * c * trace_product(m, b)).re;
        }
    }
    for (k, field, ai) in &gd.coefficients {
        let term = &sys.drive_terms[*k];
        let Coefficient::Drive(d) = term.coeff else { continue };
        let dc = pulse::coefficient_gradient(&sys.drives[d].spec, t)[field_slot(*field)];
        if dc != ZERO {
            grad[*ai] += 2.0 * (scale * dc * trace_product(&term.matrix, b)).re;
        }
    }
}

/// Outcome of a reverse sweep.
#[derive(Clone, Debug)]
pub struct Backprop {
    /// `dL/d atom` for the requested atoms, initial states held fixed.
    pub gradient: Vec<f64>,
    /// Adjoint states propagated back to the start time.
    pub adjoint: StateBatch,
    /// Initial states reconstructed by the reverse sweep.
    pub initial: StateBatch,
}

/// Forward pass keeping the state before every stage of every step.
pub fn forward_store_all(sys: &CompositeSystem, plan: &TrotterPlan, initial: &StateBatch) -> Result<Vec<StateBatch>> {
    let mut psi = initial.clone();
    let mut out = Vec::new();
    for step in 0..plan.astep {
        for k in plan.step_stages(step) {
            out.push(psi.clone());
            let layout = &plan.groups[plan.stages[k].group].layout;
            psi.apply(layout, &plan.stage_unitary(sys, k, step));
        }
        if !psi.all_finite() {
            return Err(Error::NonFinite { step });
        }
    }
    out.push(psi);
    Ok(out)
}

/// Reverse sweep from the final states and the loss seed `dL/d psi*`.
///
/// In `StoreAll` mode `stored` must hold the output of `forward_store_all`.
pub fn backprop(
    sys: &CompositeSystem,
    plan: &TrotterPlan,
    final_states: &StateBatch,
    seed: &StateBatch,
    atoms: &[Atom],
    stored: Option<&[StateBatch]>,
) -> Result<Backprop> {
    if seed.data.len() != final_states.data.len() {
        return Err(Error::Shape(format!(
            "seed has {} columns, final states have {}",
            seed.ncols, final_states.ncols
        )));
    }
    let derivs = group_derivatives(sys, plan, atoms)?;
    let mut grad = vec![0.0; atoms.len()];
    let mut psi = final_states.clone();
    let mut adj = seed.clone();
    let mut r_static: Vec<Option<CMat>> = vec![None; plan.stages.len()];
    let mut cursor = stored.map(|s| s.len() - 1);
    for step in (0..plan.astep).rev() {
        for k in plan.step_stages(step).rev() {
            let st = &plan.stages[k];
            let group = &plan.groups[st.group];
            let layout = &group.layout;
            let gd = &derivs[st.group];
            let scale = -I * st.coeff * plan.dt;
            match st.static_exp() {
                Some(e) => {
                    match (stored, cursor.as_mut()) {
                        (Some(s), Some(c)) => {
                            *c -= 1;
                            psi.clone_from(&s[*c]);
                        }
                        _ => psi.apply(layout, &e.inverse),
                    }
                    if !gd.is_empty() {
                        let r = psi.local_outer(&adj, layout);
                        match &mut r_static[k] {
                            Some(acc) => *acc += r,
                            slot => *slot = Some(r),
                        }
                    }
                    adj.apply(layout, &e.forward.adjoint());
                }
                None => {
                    let a = plan.generator(sys, k, step);
                    match (stored, cursor.as_mut()) {
                        (Some(s), Some(c)) => {
                            *c -= 1;
                            psi.clone_from(&s[*c]);
                        }
                        _ => psi.apply(layout, &expm(&-&a)),
                    }
                    let u = if gd.is_empty() {
                        expm(&a)
                    } else {
                        let r = psi.local_outer(&adj, layout);
                        let (u, b) = expm_frechet(&a, &r);
                        accumulate(sys, gd, scale, Some(plan.stage_time(k, step)), &b, &mut grad);
                        u
                    };
                    adj.apply(layout, &u.adjoint());
                }
            }
        }
        if !psi.all_finite() || !adj.all_finite() {
            return Err(Error::NonFinite { step });
        }
    }
    for (k, r) in r_static.into_iter().enumerate() {
        let Some(r) = r else { continue };
        let st = &plan.stages[k];
        let e = st.static_exp().expect("static stage");
        let b = e.frechet(&r);
        accumulate(sys, &derivs[st.group], -I * st.coeff * plan.dt, None, &b, &mut grad);
    }
    Ok(Backprop {
        gradient: grad,
        adjoint: adj,
        initial: psi,
    })
}

/// Contribution of the dressed eigenvector derivatives to the gradient.
///
/// `weights[:, j]` is the vector `c_l` multiplying `dv_l` for label
/// `labels[j]`; the contribution is `2 Re sum_l c_l^dagger dv_l`. The
/// eigenvector derivative keeps the pinned component real.
pub fn eigenvector_gradient(
    sys: &CompositeSystem,
    spec: &DressedSpectrum,
    atoms: &[Atom],
    labels: &[usize],
    weights: &CMat,
) -> Result<Vec<f64>> {
    let v = &spec.vectors;
    let dim = v.nrows();
    let energies = &spec.label_energies;
    let spread = energies.iter().fold(0.0f64, |m, e| m.max(e.abs())).max(1.0);
    let cw = v.adjoint() * weights;
    let pins: Vec<usize> = labels.iter().map(|&l| crate::linalg::pinned_component(v, l)).collect();
    let mut out = vec![0.0; atoms.len()];
    for (ai, &atom) in atoms.iter().enumerate() {
        if matches!(atom, Atom::Pulse { .. }) {
            continue;
        }
        let dh = sys.dense_static_derivative(atom)?;
        if dh.iter().all(|z| *z == ZERO) {
            continue;
        }
        let m = v.adjoint() * dh * v;
        let mut total = 0.0;
        for (j, &l) in labels.iter().enumerate() {
            let mut acc = ZERO;
            let mut pinned = ZERO;
            let pin = pins[j];
            for mu in 0..dim {
                if mu == l {
                    continue;
                }
                let gap = energies[l] - energies[mu];
                if m[(mu, l)] == ZERO {
                    continue;
                }
                if gap.abs() < 1e-10 * spread {
                    return Err(Error::Degenerate(format!(
                        "dressed labels {l} and {mu} are degenerate; eigenvector derivative undefined"
                    )));
                }
                let coef = m[(mu, l)] / gap;
                acc += cw[(mu, j)].conj() * coef;
                pinned += v[(pin, mu)] * coef;
            }
            let alpha = -pinned.im / v[(pin, l)].re;
            acc += I * alpha * cw[(l, j)].conj();
            total += 2.0 * acc.re;
        }
        out[ai] = total;
    }
    Ok(out)
}

/// Central finite-difference estimate of a scalar function's gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], steps: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = steps[i];
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Memory and time overhead of a gradient evaluation relative to the
/// forward simulation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Overhead {
    /// Time of forward plus gradient over time of forward alone.
    pub time: f64,
    /// Peak memory of forward plus gradient over peak memory of forward alone.
    pub memory: f64,
}

/// Wall time and peak extra heap of one run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measurement {
    pub seconds: f64,
    pub peak_bytes: usize,
}

impl Overhead {
    /// `gradient` is the measurement of the forward plus gradient run.
    pub fn from_runs(forward: Measurement, gradient: Measurement) -> Self {
        Self {
            time: gradient.seconds / forward.seconds,
            memory: gradient.peak_bytes as f64 / forward.peak_bytes as f64,
        }
    }
}

/// Derivative of a stage exponential `exp(-i c dt H_g(t))` with respect to
/// `atom`, as a local operator on the stage's sites.
pub fn stage_param_derivative(
    sys: &CompositeSystem,
    plan: &TrotterPlan,
    stage: usize,
    step: usize,
    atom: Atom,
) -> Result<CMat> {
    let st = &plan.stages[stage];
    let group = &plan.groups[st.group];
    let n = group.layout.local;
    let gd = &group_derivatives(sys, plan, &[atom])?[st.group];
    if gd.is_empty() {
        return Ok(CMat::zeros(n, n));
    }
    let t = plan.stage_time(stage, step);
    let mut dh = CMat::zeros(n, n);
    for (_, m) in &gd.statics {
        dh += m;
    }
    for (k, _, m) in &gd.operators {
        dh += m * sys.term_coefficient(&sys.drive_terms[*k], t);
    }
    for (k, field, _) in &gd.coefficients {
        let term = &sys.drive_terms[*k];
        if let Coefficient::Drive(d) = term.coeff {
            dh += &term.matrix * pulse::coefficient_gradient(&sys.drives[d].spec, t)[field_slot(*field)];
        }
    }
    let scale = -I * st.coeff * plan.dt;
    let a = plan.generator(sys, stage, step);
    Ok(expm_frechet(&a, &(dh * scale)).1)
}
