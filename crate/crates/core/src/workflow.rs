//! End-to-end workflows on fluxonium chains: dressed frequencies, the
//! cross-resonance pulse guess, static ZZ cancellation, pulse optimization
//! and the control / device pattern loop.

use std::f64::consts::PI;

use serde::Serialize;

use crate::adjoint::GradientMode;
use crate::composite::{assemble, dressed_spectrum, energy_tensor, static_zz, zz_labels, SystemOptions};
use crate::device::{
    apply_deviations, bind_params, extract_params, Atom, CouplingKind, DeviceGraph, OperatorType, ParameterSet,
    PulseField, PulseSpec, PulseType, QubitSpec,
};
use crate::error::{Error, Result};
use crate::evolve::{computational_block, embed_computational_gradient, EvolveOptions, Simulator};
use crate::linalg::CMat;
use crate::objectives::{compensated_infidelity, Compensation, CompensationMode, CompensationOptions};
use crate::optim::{device_step, minimize, MinimizeOptions, MinimizeResult, DEVICE_RATE};

const TWO_PI: f64 = 2.0 * PI;

/// Effective cross-resonance coupling assumed by the initial pulse guess.
pub const J_EFF: f64 = 0.01 * TWO_PI;

/// Shared mark and inductive energy (GHz) of the repeating three-qubit pattern.
pub const PATTERN: [(&str, f64); 3] = [("grey", 0.9), ("blue", 1.0), ("green", 1.1)];

#[derive(Clone, Debug, PartialEq)]
pub struct ChainOptions {
    pub n: usize,
    pub capacitive: f64,
    pub inductive: f64,
    /// Relative standard deviation of the fabrication spread; zero for none.
    pub relative_std: f64,
    pub seed: u64,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            n: 3,
            capacitive: 0.02 * TWO_PI,
            inductive: -0.002 * TWO_PI,
            relative_std: 0.0,
            seed: 0,
        }
    }
}

/// Open chain `q1 - q2 - ... - qn` of sweet-spot fluxonia tiled with `PATTERN`.
pub fn fluxonium_chain(opts: &ChainOptions) -> Result<DeviceGraph> {
    if opts.n == 0 {
        return Err(Error::Parameter("a chain needs at least one qubit".into()));
    }
    let mut g = DeviceGraph::new();
    for i in 0..opts.n {
        let (mark, el) = PATTERN[i % PATTERN.len()];
        let spec = QubitSpec::fluxonium(TWO_PI, 4.0 * TWO_PI, el * TWO_PI, PI).with_mark(mark);
        g.add_node(&format!("q{}", i + 1), spec)?;
    }
    for i in 1..opts.n {
        g.add_edge(&format!("q{i}"), &format!("q{}", i + 1), opts.capacitive, opts.inductive)?;
    }
    if opts.relative_std > 0.0 {
        g = apply_deviations(&g, opts.seed, opts.relative_std)?;
    }
    Ok(g)
}

/// Dressed 0-1 frequency of every node with all others in the ground state.
pub fn dressed_frequencies(g: &DeviceGraph, truncated_dim: usize) -> Result<Vec<f64>> {
    let sys = assemble(g, &SystemOptions::with_dim(truncated_dim))?;
    let e = energy_tensor(&sys)?;
    let ground = e.get(&vec![0; sys.n_sites()]);
    Ok((0..sys.n_sites())
        .map(|k| {
            let mut label = vec![0; sys.n_sites()];
            label[k] = 1;
            e.get(&label) - ground
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CrPair {
    pub control: usize,
    pub target: usize,
    pub length: f64,
}

/// Cosine CR pulse on the control's phase operator at the target frequency,
/// with the area that rotates the target by pi/2 at coupling `J_EFF`.
pub fn cr_pulse(control_freq: f64, target_freq: f64, length: f64) -> PulseSpec {
    let detuning = (control_freq - target_freq).abs();
    PulseSpec {
        amp: PI / 2.0 * detuning / J_EFF / length,
        omega_d: target_freq,
        phase: 0.0,
        length,
        pulse_type: PulseType::Cos,
        operator_type: OperatorType::PhiOperator,
        delay: 0.0,
        t_ramp: None,
    }
}

/// Add a CR pulse for every pair, guessed from the graph's dressed spectrum.
pub fn create_cr_pulses(g: &DeviceGraph, pairs: &[CrPair], truncated_dim: usize) -> Result<DeviceGraph> {
    let n = g.nodes.len();
    for p in pairs {
        if p.control >= n || p.target >= n || p.control == p.target {
            return Err(Error::Parameter(format!(
                "CR pair ({}, {}) is invalid for {n} qubits",
                p.control, p.target
            )));
        }
    }
    let f = dressed_frequencies(g, truncated_dim)?;
    let names = g.node_names();
    let mut out = g.clone();
    for p in pairs {
        out.add_pulse(&names[p.control], cr_pulse(f[p.control], f[p.target], p.length))?;
    }
    Ok(out)
}

/// Static ZZ of `pair` with every edge's capacitive strength set to `jc`,
/// squared in kHz^2, and its derivative in `jc`.
pub fn zz_objective(g: &DeviceGraph, pair: (usize, usize), truncated_dim: usize, jc: f64) -> Result<(f64, f64)> {
    let mut g = g.clone();
    for e in g.edges.iter_mut() {
        e.coupling.capacitive = jc;
    }
    let sys = assemble(
        &g,
        &SystemOptions {
            derivatives: true,
            ..SystemOptions::with_dim(truncated_dim)
        },
    )?;
    let spec = dressed_spectrum(&sys)?;
    let zeta = static_zz(&spec.energy_tensor(), pair);
    let [a, b, c, d] = zz_labels(&sys.dims, pair);
    let mut dzeta = 0.0;
    for edge in 0..g.edges.len() {
        let dh = sys.dense_static_derivative(Atom::Coupling {
            edge,
            kind: CouplingKind::Capacitive,
        })?;
        let de = spec.energy_derivatives(&dh);
        dzeta += de[a] + de[b] - de[c] - de[d];
    }
    let scale = 1e6 / TWO_PI;
    let z = zeta * scale;
    Ok((z * z, 2.0 * z * scale * dzeta))
}

#[derive(Clone, Debug)]
pub struct ZzResult {
    /// Optimal unified capacitive strength in rad/ns.
    pub capacitive: f64,
    /// Residual static ZZ in rad/ns.
    pub zeta: f64,
    pub optimizer: MinimizeResult,
}

pub fn minimize_static_zz(
    g: &DeviceGraph,
    pair: (usize, usize),
    truncated_dim: usize,
    x0: f64,
    opts: &MinimizeOptions,
) -> Result<ZzResult> {
    let r = minimize(
        |x| {
            let (v, d) = zz_objective(g, pair, truncated_dim, x[0])?;
            Ok((v, vec![d]))
        },
        &[x0],
        opts,
    )?;
    let zeta = r.fun.sqrt() * TWO_PI / 1e6;
    Ok(ZzResult {
        capacitive: r.x[0],
        zeta,
        optimizer: r,
    })
}

/// Gate-synthesis problem: a device with pulses, an evolution setup and a
/// target on the computational subspace.
#[derive(Clone, Debug)]
pub struct GateProblem {
    pub graph: DeviceGraph,
    pub evolve: EvolveOptions,
    pub target: CMat,
    pub compensation: CompensationMode,
    pub share_params: bool,
    pub unify_coupling: bool,
    /// Pulses rebuilt when controls are reinitialized.
    pub cr: Vec<CrPair>,
}

#[derive(Clone, Debug)]
pub struct GateEvaluation {
    pub infidelity: f64,
    /// Gradient with respect to the requested entries, in their order.
    pub gradient: Vec<f64>,
    pub compensation: Compensation,
}

impl GateProblem {
    pub fn params(&self) -> Result<ParameterSet> {
        extract_params(&self.graph, self.share_params, self.unify_coupling)
    }

    /// Infidelity at `theta` and its gradient with respect to the entries of `wrt`.
    pub fn evaluate(&self, theta: &ParameterSet, wrt: Option<&ParameterSet>, comp: &CompensationOptions) -> Result<GateEvaluation> {
        let g = bind_params(&self.graph, theta)?;
        let sim = Simulator::new(&g, &self.evolve)?;
        let evo = sim.run()?;
        let u = computational_block(&sim, &evo.matrix)?;
        let (infidelity, seed, compensation) = compensated_infidelity(&u, &self.target, self.compensation, comp)?;
        let gradient = match wrt {
            Some(w) if !w.is_empty() => {
                let g_full = embed_computational_gradient(&sim, &seed)?;
                sim.param_gradient(&evo, &g_full, w, GradientMode::Adjoint)?
            }
            _ => Vec::new(),
        };
        Ok(GateEvaluation {
            infidelity,
            gradient,
            compensation,
        })
    }

    /// Problem whose pulses are regenerated from the spectrum at `theta`.
    pub fn reinitialized(&self, theta: &ParameterSet) -> Result<(GateProblem, ParameterSet)> {
        let mut g = bind_params(&self.graph, theta)?;
        g.clear_pulses();
        let g = create_cr_pulses(&g, &self.cr, self.evolve.system.truncated_dim)?;
        let problem = GateProblem {
            graph: g,
            ..self.clone()
        };
        let theta = problem.params()?;
        Ok((problem, theta))
    }
}

/// Entries of `theta` that are pulse parameters of one of the `fields`.
pub fn control_params(theta: &ParameterSet, fields: &[PulseField]) -> ParameterSet {
    theta.filter(|k| {
        !ParameterSet::is_device_key(k)
            && k.rsplit_once('.')
                .and_then(|(_, f)| PulseField::parse(f))
                .is_some_and(|f| fields.contains(&f))
    })
}

#[derive(Clone, Debug)]
pub struct ControlOptions {
    pub fields: Vec<PulseField>,
    pub minimize: MinimizeOptions,
    pub compensation: CompensationOptions,
}

impl Default for ControlOptions {
    fn default() -> Self {
        Self {
            fields: vec![PulseField::Amp, PulseField::OmegaD, PulseField::Phase],
            minimize: MinimizeOptions::default(),
            compensation: CompensationOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ControlResult {
    pub theta: ParameterSet,
    pub infidelity: f64,
    pub optimizer: MinimizeResult,
    pub compensation: Compensation,
}

/// Minimize the compensated infidelity over the pulse entries selected by
/// `opts.fields`, other entries held at `theta0`.
///
/// The compensation search starts from all restarts once; later
/// evaluations warm-start from the previous optimum.
pub fn optimize_controls(problem: &GateProblem, theta0: &ParameterSet, opts: &ControlOptions) -> Result<ControlResult> {
    let wrt = control_params(theta0, &opts.fields);
    if wrt.is_empty() {
        return Err(Error::Parameter("no pulse parameters to optimize".into()));
    }
    let assemble_theta = |x: &[f64]| -> Result<ParameterSet> {
        let mut theta = theta0.clone();
        for (e, &v) in wrt.entries.iter().zip(x) {
            theta.set(&e.key, v)?;
        }
        Ok(theta)
    };
    let mut warm: Option<Vec<f64>> = None;
    let comp_opts = |warm: &Option<Vec<f64>>| match warm {
        None => opts.compensation.clone(),
        Some(w) => CompensationOptions {
            restarts: 0,
            warm_start: Some(w.clone()),
            ..opts.compensation.clone()
        },
    };
    let r = minimize(
        |x| {
            let theta = assemble_theta(x)?;
            let ev = problem.evaluate(&theta, Some(&wrt), &comp_opts(&warm))?;
            if !ev.compensation.angles.is_empty() {
                warm = Some(ev.compensation.angles.clone());
            }
            Ok((ev.infidelity, ev.gradient))
        },
        &wrt.values(),
        &opts.minimize,
    )?;
    let theta = assemble_theta(&r.x)?;
    let ev = problem.evaluate(&theta, None, &opts.compensation)?;
    Ok(ControlResult {
        theta,
        infidelity: ev.infidelity,
        optimizer: r,
        compensation: ev.compensation,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WorkflowStage {
    /// Optimize pulses, optionally regenerating them from the spectrum first.
    Controls { reinitialize: bool },
    /// One explicit gradient step on the qubit energies.
    Device { rate: f64 },
}

/// Optimize controls, step the device energies, then re-optimize freshly
/// guessed controls.
pub fn standard_stages() -> Vec<WorkflowStage> {
    vec![
        WorkflowStage::Controls { reinitialize: false },
        WorkflowStage::Device { rate: DEVICE_RATE },
        WorkflowStage::Controls { reinitialize: true },
    ]
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientEntry {
    pub key: String,
    pub value: f64,
    pub gradient: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StageReport {
    pub stage: WorkflowStage,
    /// Objective per optimizer iteration; before and after for a device step.
    pub trace: Vec<f64>,
    pub objective: f64,
    /// Energy gradients used by a device step.
    pub gradients: Vec<GradientEntry>,
}

#[derive(Clone, Debug, Serialize)]
pub struct WorkflowReport {
    pub baseline: f64,
    pub stages: Vec<StageReport>,
    #[serde(skip)]
    pub theta: ParameterSet,
}

/// Energy entries of `theta` with the gradient of the infidelity at `theta`.
pub fn device_gradients(problem: &GateProblem, theta: &ParameterSet, comp: &CompensationOptions) -> Result<(f64, Vec<GradientEntry>)> {
    let energies = theta.filter(ParameterSet::is_energy_key);
    let ev = problem.evaluate(theta, Some(&energies), comp)?;
    let entries = energies
        .entries
        .iter()
        .zip(&ev.gradient)
        .map(|(e, &g)| GradientEntry {
            key: e.key.clone(),
            value: e.value,
            gradient: g,
        })
        .collect();
    Ok((ev.infidelity, entries))
}

pub fn pattern_workflow(problem: &GateProblem, stages: &[WorkflowStage], opts: &ControlOptions) -> Result<WorkflowReport> {
    let mut problem = problem.clone();
    let mut theta = problem.params()?;
    let baseline = problem.evaluate(&theta, None, &opts.compensation)?.infidelity;
    let mut reports = Vec::with_capacity(stages.len());
    for &stage in stages {
        let report = match stage {
            WorkflowStage::Controls { reinitialize } => {
                if reinitialize {
                    (problem, theta) = problem.reinitialized(&theta)?;
                }
                let r = optimize_controls(&problem, &theta, opts)?;
                log::info!("control stage: {} -> {}", r.optimizer.trace[0], r.infidelity);
                theta = r.theta;
                StageReport {
                    stage,
                    trace: r.optimizer.trace,
                    objective: r.infidelity,
                    gradients: Vec::new(),
                }
            }
            WorkflowStage::Device { rate } => {
                let (before, gradients) = device_gradients(&problem, &theta, &opts.compensation)?;
                let mut full = vec![0.0; theta.len()];
                for e in &gradients {
                    full[theta.position(&e.key).expect("filtered from theta")] = e.gradient;
                }
                theta = device_step(&theta, &full, rate)?;
                let after = problem.evaluate(&theta, None, &opts.compensation)?.infidelity;
                log::info!("device step: {before} -> {after}");
                StageReport {
                    stage,
                    trace: vec![before, after],
                    objective: after,
                    gradients,
                }
            }
        };
        reports.push(report);
    }
    Ok(WorkflowReport {
        baseline,
        stages: reports,
        theta,
    })
}
