#![allow(dead_code)]

use std::f64::consts::PI;

use fluxgrad::composite::embed;
use fluxgrad::device::{OperatorType, PulseType};
use fluxgrad::linalg::{expm, expm_frechet, CMat, C64};
use fluxgrad::evolve::{computational_block, embed_computational_gradient};
use fluxgrad::objectives::gate_infidelity;
use fluxgrad::{
    bind_params, extract_params, parse_gate, Basis, DeviceGraph, EvolveOptions, GradientMode, ParameterSet, PulseSpec,
    QubitSpec, Result, Simulator, TrotterOrder,
};

pub const TP: f64 = 2.0 * PI;

pub fn cos_pulse(amp: f64, omega_d: f64, phase: f64, length: f64, delay: f64) -> PulseSpec {
    PulseSpec {
        amp,
        omega_d,
        phase,
        length,
        pulse_type: PulseType::Cos,
        operator_type: OperatorType::PhiOperator,
        delay,
        t_ramp: None,
    }
}

/// Two coupled fluxonium qubits with one drive on the first.
pub fn driven_pair() -> DeviceGraph {
    let mut g = DeviceGraph::new();
    g.add_node("q1", QubitSpec::fluxonium(TP, 4.0 * TP, 0.9 * TP, PI)).unwrap();
    g.add_node("q2", QubitSpec::fluxonium(TP, 4.0 * TP, 1.0 * TP, PI)).unwrap();
    g.add_edge("q1", "q2", 0.02 * TP, -0.002 * TP).unwrap();
    g.add_pulse("q1", cos_pulse(0.3, 0.55 * TP, 0.2, 8.87, 0.53)).unwrap();
    g
}

/// Open chain of `n` fluxonium qubits, each driven near its own 0-1 line.
pub fn driven_chain(n: usize, length: f64) -> DeviceGraph {
    let mut g = DeviceGraph::new();
    for i in 0..n {
        let el = [0.9, 1.0, 1.1][i % 3];
        g.add_node(&format!("q{}", i + 1), QubitSpec::fluxonium(TP, 4.0 * TP, el * TP, PI))
            .unwrap();
    }
    for i in 1..n {
        g.add_edge(&format!("q{i}"), &format!("q{}", i + 1), 0.02 * TP, -0.002 * TP)
            .unwrap();
    }
    for i in 0..n {
        let f = [0.50, 0.58, 0.66][i % 3] * TP;
        g.add_pulse(&format!("q{}", i + 1), cos_pulse(0.4 + 0.05 * i as f64, f, 0.1 * i as f64, length, 0.13))
            .unwrap();
    }
    g
}

/// Product-basis propagator columns from a dense fourth-order Magnus
/// integrator with `steps` steps.
pub fn magnus_reference(sim: &Simulator, t0: f64, tg: f64, steps: usize) -> CMat {
    let h = (tg - t0) / steps as f64;
    let c = 3f64.sqrt() / 6.0;
    let dim = sim.sys.total_dim();
    let mut u = CMat::identity(dim, dim);
    let minus_i = C64::new(0.0, -1.0);
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        let a1 = sim.sys.dense_hamiltonian(Some(t + (0.5 - c) * h)).unwrap() * minus_i;
        let a2 = sim.sys.dense_hamiltonian(Some(t + (0.5 + c) * h)).unwrap() * minus_i;
        let comm = &a2 * &a1 - &a1 * &a2;
        let omega = (&a1 + &a2) * C64::new(h / 2.0, 0.0) + comm * C64::new(3f64.sqrt() / 12.0 * h * h, 0.0);
        u = expm(&omega) * u;
    }
    CMat::from_fn(dim, sim.labels.len(), |r, col| u[(r, sim.labels[col])])
}

fn stencil<F: Fn(f64) -> CMat>(f: F, h: f64) -> CMat {
    const W: [(f64, f64); 6] = [
        (-3.0, -1.0),
        (-2.0, 9.0),
        (-1.0, -45.0),
        (1.0, 45.0),
        (2.0, -9.0),
        (3.0, 1.0),
    ];
    let mut acc: Option<CMat> = None;
    for (s, w) in W {
        let term = f(s * h) * C64::new(w / (60.0 * h), 0.0);
        acc = Some(match acc {
            None => term,
            Some(a) => a + term,
        });
    }
    acc.unwrap()
}

/// Gradient of a loss with seed `seed = dL/d conj(matrix)` by the dense
/// chain rule over every stored stage.
///
/// Stage-generator derivatives come from a sixth-order stencil over
/// rebuilt simulators and go through the exponential by the exact
/// Fréchet derivative. Product basis only.
pub fn dense_chain_rule(g0: &DeviceGraph, theta: &ParameterSet, opts: &EvolveOptions, seed: &CMat) -> Vec<f64> {
    let sim = Simulator::new(&bind_params(g0, theta).unwrap(), opts).unwrap();
    let plan = &sim.plan;
    let dims = sim.dims().to_vec();
    let dim = sim.sys.total_dim();
    let schedule: Vec<(usize, usize)> = (0..plan.astep)
        .flat_map(|step| plan.step_stages(step).map(move |k| (k, step)))
        .collect();
    let sites = |k: usize| plan.groups[plan.stages[k].group].sites.clone();

    let mut states = Vec::with_capacity(schedule.len() + 1);
    let mut gens = Vec::with_capacity(schedule.len());
    let mut u = CMat::from_fn(dim, sim.labels.len(), |r, c| if r == sim.labels[c] { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
    for &(k, step) in &schedule {
        states.push(u.clone());
        let a = plan.generator(&sim.sys, k, step);
        u = embed(&expm(&a), &sites(k), &dims) * u;
        gens.push(a);
    }

    let x0 = theta.values();
    let mut grad = vec![0.0; x0.len()];
    for (i, g_out) in grad.iter_mut().enumerate() {
        let h = 1e-3 * x0[i].abs().max(0.1);
        let perturbed = |dx: f64| -> Simulator {
            let mut x = x0.clone();
            x[i] += dx;
            Simulator::new(&bind_params(g0, &theta.with_values(&x)).unwrap(), opts).unwrap()
        };
        let sims: Vec<(f64, Simulator)> = [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]
            .iter()
            .map(|&s| (s * h, perturbed(s * h)))
            .collect();
        let mut lambda = seed.clone();
        let mut total = 0.0;
        for (idx, &(k, step)) in schedule.iter().enumerate().rev() {
            let da = stencil(
                |dx| {
                    let s = &sims.iter().find(|(d, _)| *d == dx).unwrap().1;
                    s.plan.generator(&s.sys, k, step)
                },
                h,
            );
            let (w, dw) = expm_frechet(&gens[idx], &da);
            let dw_full = embed(&dw, &sites(k), &dims);
            let w_full = embed(&w, &sites(k), &dims);
            let contrib = (lambda.adjoint() * (dw_full * &states[idx])).trace();
            total += 2.0 * contrib.re;
            lambda = w_full.adjoint() * lambda;
        }
        *g_out = total;
    }
    grad
}

/// Richardson-extrapolated central differences.
pub fn richardson_fd(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], rel_step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut central = |i: usize, h: f64| -> f64 {
        probe[i] = x[i] + h;
        let up = f(&probe).unwrap();
        probe[i] = x[i] - h;
        let down = f(&probe).unwrap();
        probe[i] = x[i];
        (up - down) / (2.0 * h)
    };
    (0..x.len())
        .map(|i| {
            let h = rel_step * x[i].abs().max(1.0);
            let d1 = central(i, h);
            let d2 = central(i, h / 2.0);
            (4.0 * d2 - d1) / 3.0
        })
        .collect()
}

/// Componentwise relative error, with `floor` guarding components that vanish.
pub fn rel_errors(a: &[f64], b: &[f64], floor: f64) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .collect()
}

pub fn max(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Least-squares slope of `ln err` against `ln dt`.
pub fn log_slope(dts: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Propagator error against a Magnus reference with step `dt_min / 20`, per
/// step count, and the fitted error-vs-dt slope.
pub fn trotter_errors(g: &DeviceGraph, d: usize, tg: f64, asteps: &[usize], order: TrotterOrder) -> (Vec<f64>, f64) {
    let probe = Simulator::new(g, &EvolveOptions::new(tg, 1).truncated_dim(d)).unwrap();
    let finest = *asteps.iter().max().unwrap();
    let reference = magnus_reference(&probe, 0.0, tg, 20 * finest);
    let errs: Vec<f64> = asteps
        .iter()
        .map(|&n| {
            let sim = Simulator::new(g, &EvolveOptions::new(tg, n).truncated_dim(d).order(order)).unwrap();
            fluxgrad::linalg::max_abs(&(sim.run().unwrap().matrix - &reference))
        })
        .collect();
    let dts: Vec<f64> = asteps.iter().map(|&n| tg / n as f64).collect();
    let s = log_slope(&dts, &errs);
    (errs, s)
}

/// Haar-distributed unitary from the QR decomposition of a Ginibre matrix.
pub fn random_unitary(rng: &mut impl rand::Rng, d: usize) -> CMat {
    use rand_distr::{Distribution, StandardNormal};
    let z = CMat::from_fn(d, d, |_, _| {
        C64::new(StandardNormal.sample(&mut *rng), StandardNormal.sample(&mut *rng))
    });
    let qr = z.qr();
    let (q, r) = (qr.q(), qr.r());
    let phases = CMat::from_diagonal(&nalgebra::DVector::from_fn(d, |i, _| {
        let x = r[(i, i)];
        x / x.norm()
    }));
    q * phases
}

/// Average gate fidelity from the unitary operator basis `X^a Z^b`:
/// `(sum_j tr(T U_j^dag T^dag E(U_j)) + D^2) / (D^2 (D + 1))` with `E(X) = U X U^dag`.
pub fn operator_basis_fidelity(u: &CMat, target: &CMat) -> f64 {
    let d = u.nrows();
    let omega = C64::from_polar(1.0, 2.0 * PI / d as f64);
    let shift = CMat::from_fn(d, d, |r, c| if r == (c + 1) % d { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
    let clock = CMat::from_diagonal(&nalgebra::DVector::from_fn(d, |j, _| omega.powu(j as u32)));
    let mut total = C64::new(0.0, 0.0);
    let mut xa = CMat::identity(d, d);
    for _ in 0..d {
        let mut op = xa.clone();
        for _ in 0..d {
            let channel = u * &op * u.adjoint();
            total += (target * op.adjoint() * target.adjoint() * channel).trace();
            op = &op * &clock;
        }
        xa = &shift * xa;
    }
    let df = d as f64;
    (total.re + df * df) / (df * df * (df + 1.0))
}

pub fn weights(dim: usize, cols: usize) -> CMat {
    CMat::from_fn(dim, cols, |r, c| {
        C64::new(((r * 7 + c * 3) % 5) as f64 - 2.0, ((r + 2 * c) % 3) as f64 - 1.0)
    })
}

/// `|<W, M>|^2` with its seed `W <W, M>`.
pub fn overlap_loss(m: &CMat, w: &CMat) -> (f64, CMat) {
    let z = (w.adjoint() * m).trace();
    (z.norm_sqr(), w * z)
}

/// Per-key relative error of the adjoint gradient against each oracle.
pub struct OracleErrors {
    pub key: String,
    pub fd: f64,
    pub store_all: f64,
    /// Product basis only.
    pub dense: Option<f64>,
}

/// Adjoint gradient of an overlap loss checked against Richardson finite
/// differences, the store-all mode and, in the product basis, the dense
/// chain rule. Errors are relative with a floor of `1e-6` of the largest
/// oracle component.
pub fn oracle_comparison(graph: &DeviceGraph, opts: &EvolveOptions) -> Vec<OracleErrors> {
    let theta = extract_params(graph, false, false).unwrap();
    let sim = Simulator::new(graph, opts).unwrap();
    let w = weights(sim.sys.total_dim(), sim.labels.len());
    let evo = sim.run().unwrap();
    let (_, seed) = overlap_loss(&evo.matrix, &w);
    let adjoint = sim.param_gradient(&evo, &seed, &theta, GradientMode::Adjoint).unwrap();
    let store = sim.param_gradient(&evo, &seed, &theta, GradientMode::StoreAll).unwrap();
    let loss = |x: &[f64]| -> Result<f64> {
        let s = Simulator::new(&bind_params(graph, &theta.with_values(x))?, opts)?;
        Ok(overlap_loss(&s.run()?.matrix, &w).0)
    };
    let fd = richardson_fd(loss, &theta.values(), 1e-4);
    let dense = (opts.basis == Basis::Product).then(|| dense_chain_rule(graph, &theta, opts, &seed));
    let rel = |want: &[f64]| rel_errors(&adjoint, want, 1e-6 * max(want));
    let (e_fd, e_store) = (rel(&fd), rel(&store));
    let e_dense = dense.as_deref().map(rel);
    theta
        .keys()
        .enumerate()
        .map(|(i, k)| OracleErrors {
            key: k.to_string(),
            fd: e_fd[i],
            store_all: e_store[i],
            dense: e_dense.as_ref().map(|d| d[i]),
        })
        .collect()
}

/// Per-key relative error of the X on six qubits gate-infidelity gradient
/// against Richardson finite differences.
pub fn x6_gradient_errors() -> Vec<(String, f64)> {
    let graph = driven_chain(6, 12.5);
    let theta = extract_params(&graph, false, false).unwrap();
    let opts = EvolveOptions::new(12.0, 60).truncated_dim(2).order(TrotterOrder::Second);
    let target = parse_gate("x(q1)*x(q2)*x(q3)*x(q4)*x(q5)*x(q6)", &graph.node_names()).unwrap();
    let infidelity = |g: &DeviceGraph| -> Result<(f64, Simulator, fluxgrad::Evolution, CMat)> {
        let sim = Simulator::new(g, &opts)?;
        let evo = sim.run()?;
        let (l, seed) = gate_infidelity(&computational_block(&sim, &evo.matrix)?, &target)?;
        let seed = embed_computational_gradient(&sim, &seed)?;
        Ok((l, sim, evo, seed))
    };
    let (_, sim, evo, seed) = infidelity(&graph).unwrap();
    let grad = sim.param_gradient(&evo, &seed, &theta, GradientMode::Adjoint).unwrap();
    let fd = richardson_fd(
        |x| Ok(infidelity(&bind_params(&graph, &theta.with_values(x))?)?.0),
        &theta.values(),
        1e-4,
    );
    theta
        .keys()
        .map(str::to_string)
        .zip(rel_errors(&grad, &fd, 1e-6 * max(&fd)))
        .collect()
}
