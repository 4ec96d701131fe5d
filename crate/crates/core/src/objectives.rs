//! Gate and state objectives with their adjoint seeds, and single-qubit
//! compensation of simulated gates.
//!
//! Seeds are `dL/d conj(X)` for the matrix or state `X` the loss reads.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kron, CMat, C64, I, ONE, ZERO};
use crate::optim::{minimize, MinimizeOptions};

fn check_square_pair(u: &CMat, target: &CMat) -> Result<usize> {
    let d = target.nrows();
    if target.ncols() != d || u.nrows() != d || u.ncols() != d {
        return Err(Error::Shape(format!(
            "simulated {}x{} vs target {}x{}",
            u.nrows(),
            u.ncols(),
            target.nrows(),
            target.ncols()
        )));
    }
    Ok(d)
}

/// Average gate fidelity of the channel `X -> M X M^dagger`,
/// `M = target^dagger u`: `(|tr M|^2 + D) / (D (D + 1))`.
pub fn average_gate_fidelity(u: &CMat, target: &CMat) -> Result<f64> {
    let d = check_square_pair(u, target)? as f64;
    let z = (target.adjoint() * u).trace();
    Ok((z.norm_sqr() + d) / (d * (d + 1.0)))
}

/// Infidelity `1 - F` and its seed with respect to `conj(u)`.
pub fn gate_infidelity(u: &CMat, target: &CMat) -> Result<(f64, CMat)> {
    let d = check_square_pair(u, target)? as f64;
    let z = (target.adjoint() * u).trace();
    let norm = d * (d + 1.0);
    Ok((1.0 - (z.norm_sqr() + d) / norm, target * (-z / norm)))
}

/// `1 - |(1/S) sum_s <t_s|g_s>|^2` over the columns, and its seed.
pub fn composite_state_cost(states: &CMat, targets: &CMat) -> Result<(f64, CMat)> {
    if states.shape() != targets.shape() || states.ncols() == 0 {
        return Err(Error::Shape(format!("states {:?} vs targets {:?}", states.shape(), targets.shape())));
    }
    let s = states.ncols() as f64;
    let t = (targets.adjoint() * states).trace() / s;
    Ok((1.0 - t.norm_sqr(), targets * (-t / s)))
}

/// `1 - |<t|g>|^2` and its seed `-<t|g> t`.
pub fn target_state_infidelity(state: &[C64], target: &[C64]) -> Result<(f64, Vec<C64>)> {
    if state.len() != target.len() {
        return Err(Error::Shape(format!("state of length {} vs target {}", state.len(), target.len())));
    }
    let ov: C64 = target.iter().zip(state).map(|(t, g)| t.conj() * g).sum();
    Ok((1.0 - ov.norm_sqr(), target.iter().map(|t| -ov * t).collect()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompensationMode {
    NoComp,
    /// Arbitrary single-qubit unitaries before and after.
    ArbitSingle,
    /// Z rotations before and after.
    Zrot,
}

impl CompensationMode {
    fn angles_per_qubit(self) -> usize {
        match self {
            Self::NoComp => 0,
            Self::ArbitSingle => 3,
            Self::Zrot => 1,
        }
    }
}

impl FromStr for CompensationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no_comp" => Ok(Self::NoComp),
            "arbit_single" => Ok(Self::ArbitSingle),
            "zrot" => Ok(Self::Zrot),
            other => Err(Error::Parameter(format!(
                "unknown compensation {other:?} (expected no_comp, arbit_single or zrot)"
            ))),
        }
    }
}

impl fmt::Display for CompensationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NoComp => "no_comp",
            Self::ArbitSingle => "arbit_single",
            Self::Zrot => "zrot",
        })
    }
}

fn rz(a: f64) -> CMat {
    let h = C64::new(0.0, -a / 2.0).exp();
    CMat::from_row_slice(2, 2, &[h, ZERO, ZERO, h.conj()])
}

fn rx(b: f64) -> CMat {
    let (s, c) = (b / 2.0).sin_cos();
    CMat::from_row_slice(2, 2, &[C64::new(c, 0.0), C64::new(0.0, -s), C64::new(0.0, -s), C64::new(c, 0.0)])
}

fn pauli_z() -> CMat {
    CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

fn pauli_x() -> CMat {
    CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

/// Single-qubit rotation and its angle derivatives.
fn rotation(mode: CompensationMode, angles: &[f64]) -> (CMat, Vec<CMat>) {
    let half = -I * 0.5;
    match mode {
        CompensationMode::NoComp => (CMat::identity(2, 2), vec![]),
        CompensationMode::Zrot => {
            let r = rz(angles[0]);
            let d = pauli_z() * half * &r;
            (r, vec![d])
        }
        CompensationMode::ArbitSingle => {
            let (a, b, g) = (rz(angles[0]), rx(angles[1]), rz(angles[2]));
            let k = &a * &b * &g;
            let da = pauli_z() * half * &k;
            let db = &a * (pauli_x() * half) * &b * &g;
            let dg = &k * (pauli_z() * half);
            (k, vec![da, db, dg])
        }
    }
}

fn tensor(factors: &[CMat]) -> CMat {
    factors.iter().skip(1).fold(factors[0].clone(), |acc, f| kron(&acc, f))
}

#[derive(Clone, Debug)]
pub struct Compensation {
    pub fidelity: f64,
    /// Angles for the qubits before, then after; per qubit as the mode lists them.
    pub angles: Vec<f64>,
    pub before: CMat,
    pub after: CMat,
    /// `after * u * before`.
    pub compensated: CMat,
    pub converged: bool,
}

/// Left-multiply by `k` acting on qubit `q` (site 0 most significant).
fn apply_rows(m: &mut CMat, k: &CMat, n: usize, q: usize) {
    let bit = 1 << (n - 1 - q);
    let (k00, k01, k10, k11) = (k[(0, 0)], k[(0, 1)], k[(1, 0)], k[(1, 1)]);
    let rows = m.nrows();
    for col in m.as_mut_slice().chunks_mut(rows) {
        for i in (0..col.len()).filter(|i| i & bit == 0) {
            let (x0, x1) = (col[i], col[i | bit]);
            col[i] = k00 * x0 + k01 * x1;
            col[i | bit] = k10 * x0 + k11 * x1;
        }
    }
}

/// Right-multiply by `k` acting on qubit `q`.
fn apply_cols(m: &mut CMat, k: &CMat, n: usize, q: usize) {
    let bit = 1 << (n - 1 - q);
    let (k00, k01, k10, k11) = (k[(0, 0)], k[(0, 1)], k[(1, 0)], k[(1, 1)]);
    for j in (0..m.ncols()).filter(|j| j & bit == 0) {
        for r in 0..m.nrows() {
            let (x0, x1) = (m[(r, j)], m[(r, j | bit)]);
            m[(r, j)] = x0 * k00 + x1 * k10;
            m[(r, j | bit)] = x0 * k01 + x1 * k11;
        }
    }
}

/// Overlap `z = tr(target^dagger K_a u K_b)` and its angle gradient, in
/// the `angles` layout.
fn overlap_and_gradient(u: &CMat, target: &CMat, mode: CompensationMode, n: usize, angles: &[f64]) -> (C64, Vec<C64>) {
    let m = mode.angles_per_qubit();
    let d = u.nrows();
    let before: Vec<_> = (0..n).map(|q| rotation(mode, &angles[q * m..(q + 1) * m])).collect();
    let after: Vec<_> = (0..n).map(|q| rotation(mode, &angles[(n + q) * m..(n + q + 1) * m])).collect();
    let mut full = u.clone();
    for q in 0..n {
        apply_rows(&mut full, &after[q].0, n, q);
        apply_cols(&mut full, &before[q].0, n, q);
    }
    let z: C64 = target.iter().zip(full.iter()).map(|(t, x)| t.conj() * x).sum();
    let mut grad = vec![ZERO; 2 * n * m];
    for q in 0..n {
        let bit = 1 << (n - 1 - q);
        // p[a][b] = <target rows (a, rest) | full rows (b, rest)>, q likewise on columns
        let mut p = [[ZERO; 2]; 2];
        let mut r = [[ZERO; 2]; 2];
        for c in 0..d {
            for i in (0..d).filter(|i| i & bit == 0) {
                let (t0, t1) = (target[(i, c)].conj(), target[(i | bit, c)].conj());
                let (f0, f1) = (full[(i, c)], full[(i | bit, c)]);
                p[0][0] += t0 * f0;
                p[0][1] += t0 * f1;
                p[1][0] += t1 * f0;
                p[1][1] += t1 * f1;
            }
        }
        for j in (0..d).filter(|j| j & bit == 0) {
            for row in 0..d {
                let (t0, t1) = (target[(row, j)].conj(), target[(row, j | bit)].conj());
                let (f0, f1) = (full[(row, j)], full[(row, j | bit)]);
                r[0][0] += t0 * f0;
                r[0][1] += t1 * f0;
                r[1][0] += t0 * f1;
                r[1][1] += t1 * f1;
            }
        }
        // dK_a = embed(dk k^dagger) K_a, dK_b = K_b embed(k^dagger dk)
        let (kb, dkb) = &before[q];
        let (ka, dka) = &after[q];
        for j in 0..m {
            let e = &dka[j] * ka.adjoint();
            let f = kb.adjoint() * &dkb[j];
            let mut ga = ZERO;
            let mut gb = ZERO;
            for a in 0..2 {
                for b in 0..2 {
                    ga += e[(a, b)] * p[a][b];
                    gb += f[(a, b)] * r[a][b];
                }
            }
            grad[q * m + j] = gb;
            grad[(n + q) * m + j] = ga;
        }
    }
    (z, grad)
}

/// Dense `(K_b, K_a)` for the given angles.
fn compensation_gates(mode: CompensationMode, n: usize, angles: &[f64]) -> (CMat, CMat) {
    let m = mode.angles_per_qubit();
    let kb: Vec<CMat> = (0..n).map(|q| rotation(mode, &angles[q * m..(q + 1) * m]).0).collect();
    let ka: Vec<CMat> = (0..n).map(|q| rotation(mode, &angles[(n + q) * m..(n + q + 1) * m]).0).collect();
    (tensor(&kb), tensor(&ka))
}

#[derive(Clone, Debug)]
pub struct CompensationOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// Extra starting point tried before the identity and random starts.
    pub warm_start: Option<Vec<f64>>,
}

impl Default for CompensationOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iter: 500,
            seed: 0,
            warm_start: None,
        }
    }
}

/// Maximize the average gate fidelity over single-qubit unitaries applied
/// before and after `u`.
pub fn compensated_fidelity(u: &CMat, target: &CMat, mode: CompensationMode, opts: &CompensationOptions) -> Result<Compensation> {
    let d = check_square_pair(u, target)?;
    if !d.is_power_of_two() {
        return Err(Error::Shape(format!("dimension {d} is not a power of two")));
    }
    let n = d.trailing_zeros() as usize;
    let df = d as f64;
    let norm = df * (df + 1.0);
    let m = mode.angles_per_qubit();
    let count = 2 * n * m;
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (z, dz) = overlap_and_gradient(u, target, mode, n, x);
        let f = (z.norm_sqr() + df) / norm;
        let g = dz.iter().map(|w| -2.0 * (z.conj() * w).re / norm).collect();
        Ok((1.0 - f, g))
    };
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = &opts.warm_start {
        if w.len() != count {
            return Err(Error::Shape(format!("warm start has {} angles, expected {count}", w.len())));
        }
        starts.push(w.clone());
    }
    starts.push(vec![0.0; count]);
    if count > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for _ in 0..opts.restarts {
            starts.push((0..count).map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)).collect());
        }
    }
    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    for x0 in starts {
        let (value, x, ok) = if count == 0 {
            (objective(&x0)?.0, x0, true)
        } else {
            let r = minimize(
                objective,
                &x0,
                &MinimizeOptions {
                    max_iter: opts.max_iter,
                    gtol: 1e-11,
                    ftol: 1e-15,
                    ..Default::default()
                },
            )?;
            (r.fun, r.x, r.converged)
        };
        if best.as_ref().is_none_or(|b| value < b.0) {
            best = Some((value, x, ok));
        }
    }
    let (value, angles, converged) = best.expect("at least one start");
    if !converged {
        log::warn!("compensation search stopped at its iteration budget");
    }
    let (before, after) = compensation_gates(mode, n, &angles);
    let compensated = &after * u * &before;
    Ok(Compensation {
        fidelity: 1.0 - value,
        angles,
        before,
        after,
        compensated,
        converged,
    })
}

/// Infidelity after compensation and its seed with respect to `conj(u)`,
/// holding the optimal single-qubit gates fixed.
pub fn compensated_infidelity(u: &CMat, target: &CMat, mode: CompensationMode, opts: &CompensationOptions) -> Result<(f64, CMat, Compensation)> {
    let comp = compensated_fidelity(u, target, mode, opts)?;
    let d = target.nrows() as f64;
    let norm = d * (d + 1.0);
    let z = (target.adjoint() * &comp.compensated).trace();
    let seed = comp.after.adjoint() * target * comp.before.adjoint() * (-z / norm);
    Ok((1.0 - comp.fidelity, seed, comp))
}

/// Gate named like `cnot(q1,q2)`, `x(q3)`, `cz(a,b)` or `i` on the
/// computational space of the listed nodes, in node order.
pub fn parse_gate(spec: &str, nodes: &[String]) -> Result<CMat> {
    let n = nodes.len();
    let mut total = CMat::identity(1 << n, 1 << n);
    for part in spec.split('*').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, args) = match part.split_once('(') {
            Some((name, rest)) => {
                let inner = rest
                    .strip_suffix(')')
                    .ok_or_else(|| Error::Parameter(format!("unbalanced gate spec {part:?}")))?;
                (name.trim().to_ascii_lowercase(), inner.split(',').map(str::trim).collect::<Vec<_>>())
            }
            None => (part.to_ascii_lowercase(), vec![]),
        };
        let idx = |a: &str| {
            nodes
                .iter()
                .position(|x| x == a)
                .ok_or_else(|| Error::UnknownKey(format!("gate qubit {a}")))
        };
        let single = |m: CMat, q: usize| -> CMat {
            let mut f: Vec<CMat> = (0..n).map(|_| CMat::identity(2, 2)).collect();
            f[q] = m;
            tensor(&f)
        };
        let gate = match (name.as_str(), args.as_slice()) {
            ("i", []) => CMat::identity(1 << n, 1 << n),
            ("x", [q]) => single(pauli_x(), idx(q)?),
            ("z", [q]) => single(pauli_z(), idx(q)?),
            ("cnot" | "cx", [c, t]) | ("cz", [c, t]) => {
                let (c, t) = (idx(c)?, idx(t)?);
                if c == t {
                    return Err(Error::Parameter(format!("gate {part:?} uses one qubit twice")));
                }
                let dim = 1usize << n;
                let mut m = CMat::zeros(dim, dim);
                for col in 0..dim {
                    let cbit = (col >> (n - 1 - c)) & 1;
                    if name == "cz" {
                        let tbit = (col >> (n - 1 - t)) & 1;
                        m[(col, col)] = if cbit == 1 && tbit == 1 { -ONE } else { ONE };
                    } else {
                        let row = if cbit == 1 { col ^ (1 << (n - 1 - t)) } else { col };
                        m[(row, col)] = ONE;
                    }
                }
                m
            }
            _ => return Err(Error::Parameter(format!("unknown gate {part:?}"))),
        };
        total = gate * total;
    }
    Ok(total)
}
