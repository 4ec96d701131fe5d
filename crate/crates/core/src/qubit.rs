//! Single fluxonium Hamiltonian, its eigenbasis, and derivatives of the
//! truncated operators with respect to the circuit energies.
//!
//! The Fock basis is that of the LC oscillator centred on the inductive
//! minimum, so the oscillator coordinate `s (a + a^dag)` is the inductive
//! branch phase `phi + phi_ext`. That branch phase is the operator exported
//! for couplings and drives.

use nalgebra::DVector;

use crate::device::{EnergyField, QubitSpec};
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, to_complex, CMat, RMat, C64};

pub const DEFAULT_DIM_FULL: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluxoniumParams {
    pub ec: f64,
    pub ej: f64,
    pub el: f64,
    pub phiext: f64,
}

impl FluxoniumParams {
    pub fn from_spec(spec: &QubitSpec) -> Self {
        Self {
            ec: spec.effective(EnergyField::Ec),
            ej: spec.effective(EnergyField::Ej),
            el: spec.effective(EnergyField::El),
            phiext: spec.phiext,
        }
    }

    fn check(&self) -> Result<()> {
        for (name, v) in [("ec", self.ec), ("el", self.el)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.ej.is_finite() && self.ej >= 0.0) {
            return Err(Error::Parameter(format!("ej must be non-negative, got {}", self.ej)));
        }
        if !self.phiext.is_finite() {
            return Err(Error::Parameter("phiext must be finite".into()));
        }
        Ok(())
    }
}

/// Full-basis operators of one fluxonium and their eigensystem.
#[derive(Clone, Debug)]
pub struct QubitOperators {
    pub params: FluxoniumParams,
    pub dim_full: usize,
    /// Oscillator length `(2 E_C / E_L)^{1/4}`.
    pub s: f64,
    pub h: RMat,
    /// Charge operator; purely imaginary in this basis.
    pub n_op: CMat,
    /// Branch phase `phi + phi_ext`.
    pub phi_op: RMat,
    pub eigvals: Vec<f64>,
    pub eigvecs: RMat,
    x0_sq: RMat,
    p0_sq: RMat,
    /// `i (a^dag - a)` divided by `i`, so that `P0 = i * p0_im`.
    p0_im: RMat,
    cos_phi: RMat,
    /// Eigen-decomposition of the position operator `a + a^dag`.
    mu: Vec<f64>,
    w: RMat,
}

pub fn build_fluxonium(params: FluxoniumParams, dim_full: usize) -> Result<QubitOperators> {
    params.check()?;
    if dim_full < 10 {
        return Err(Error::Parameter(format!("dim_full must be at least 10, got {dim_full}")));
    }
    let n = dim_full;
    let mut a = RMat::zeros(n, n);
    for k in 1..n {
        a[(k - 1, k)] = (k as f64).sqrt();
    }
    let at = a.transpose();
    let x0 = &a + &at;
    let p0_im = &at - &a;
    let x0_sq = &x0 * &x0;
    // P0 = i (a^dag - a), P0^2 = -(a^dag - a)^2
    let p0_sq = -(&p0_im * &p0_im);
    let s = (2.0 * params.ec / params.el).powf(0.25);
    let (mu, w) = symmetric_eigen(&x0);
    let cos_diag = DVector::from_iterator(n, mu.iter().map(|&m| (s * m - params.phiext).cos()));
    let cos_phi = &w * RMat::from_diagonal(&cos_diag) * w.transpose();
    let h = &p0_sq * (params.ec / (s * s)) + &x0_sq * (0.5 * params.el * s * s) - &cos_phi * params.ej;
    let h = (&h + h.transpose()) * 0.5;
    let (eigvals, mut eigvecs) = symmetric_eigen(&h);
    fix_real_phases(&mut eigvecs);
    let n_op = p0_im.map(|v| C64::new(0.0, v / (2.0 * s)));
    let phi_op = &x0 * s;
    Ok(QubitOperators {
        params,
        dim_full: n,
        s,
        h,
        n_op,
        phi_op,
        eigvals,
        eigvecs,
        x0_sq,
        p0_sq,
        p0_im,
        cos_phi,
        mu,
        w,
    })
}

fn fix_real_phases(v: &mut RMat) {
    for j in 0..v.ncols() {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..v.nrows() {
            let a = v[(i, j)].abs();
            if a > best_abs + 1e-12 {
                best_abs = a;
                best = i;
            }
        }
        if v[(best, j)] < 0.0 {
            v.column_mut(j).neg_mut();
        }
    }
}

/// Low-energy block of a single qubit in its own eigenbasis.
#[derive(Clone, Debug)]
pub struct TruncatedQubit {
    pub dim: usize,
    /// Ground-referenced eigenenergies.
    pub energies: Vec<f64>,
    pub h_d: CMat,
    pub n_d: CMat,
    pub phi_d: CMat,
}

/// Derivative of a truncated qubit with respect to one circuit energy.
#[derive(Clone, Debug)]
pub struct TruncatedDerivative {
    pub dh: Vec<f64>,
    pub dn: CMat,
    pub dphi: CMat,
}

impl QubitOperators {
    pub fn truncate(&self, d: usize) -> Result<TruncatedQubit> {
        if d < 2 || d > self.dim_full {
            return Err(Error::Parameter(format!(
                "truncated dimension {d} outside [2, {}]",
                self.dim_full
            )));
        }
        if d < self.dim_full && (self.eigvals[d] - self.eigvals[d - 1]).abs() < 1e-10 {
            return Err(Error::Degenerate(format!(
                "levels {} and {d} coincide at the truncation boundary",
                d - 1
            )));
        }
        let v = self.eigvecs.columns(0, d).into_owned();
        let e0 = self.eigvals[0];
        let energies: Vec<f64> = self.eigvals[..d].iter().map(|e| e - e0).collect();
        let vc = to_complex(&v);
        let n_d = vc.adjoint() * &self.n_op * &vc;
        let phi_d = to_complex(&(v.transpose() * &self.phi_op * &v));
        Ok(TruncatedQubit {
            dim: d,
            h_d: crate::linalg::diag(&energies),
            energies,
            n_d,
            phi_d,
        })
    }

    fn ds(&self, field: EnergyField) -> f64 {
        let p = &self.params;
        match field {
            EnergyField::Ec => self.s / (4.0 * p.ec),
            EnergyField::Ej => 0.0,
            EnergyField::El => -self.s / (4.0 * p.el),
        }
    }

    /// `dH/d(field)` in the full basis.
    pub fn dh_full(&self, field: EnergyField) -> RMat {
        let p = &self.params;
        let s = self.s;
        if field == EnergyField::Ej {
            return -&self.cos_phi;
        }
        let sin_mu = DVector::from_iterator(
            self.dim_full,
            self.mu.iter().map(|&m| m * (s * m - p.phiext).sin()),
        );
        let dh_ds = &self.p0_sq * (-2.0 * p.ec / (s * s * s))
            + &self.x0_sq * (p.el * s)
            + &self.w * RMat::from_diagonal(&sin_mu) * self.w.transpose() * p.ej;
        let direct = match field {
            EnergyField::Ec => &self.p0_sq / (s * s),
            EnergyField::El => &self.x0_sq * (0.5 * s * s),
            EnergyField::Ej => unreachable!(),
        };
        direct + dh_ds * self.ds(field)
    }

    /// `dH/d(phi_ext)` in the full basis.
    pub fn dh_dphiext(&self) -> RMat {
        let p = &self.params;
        let sin_d = DVector::from_iterator(
            self.dim_full,
            self.mu.iter().map(|&m| (self.s * m - p.phiext).sin()),
        );
        &self.w * RMat::from_diagonal(&sin_d) * self.w.transpose() * (-p.ej)
    }

    /// Hellmann-Feynman derivatives of the lowest `k` eigenvalues.
    pub fn eigenvalue_derivatives(&self, dh: &RMat, k: usize) -> Vec<f64> {
        (0..k)
            .map(|j| {
                let v = self.eigvecs.column(j);
                (v.transpose() * dh * v)[(0, 0)]
            })
            .collect()
    }

    /// Exact derivative of the truncated qubit (energies and operators)
    /// with respect to one circuit energy, by first-order perturbation
    /// theory over the whole basis.
    pub fn truncated_derivative(&self, d: usize, field: EnergyField) -> Result<TruncatedDerivative> {
        let nf = self.dim_full;
        let wm = &self.eigvecs;
        let hm = wm.transpose() * self.dh_full(field) * wm;
        let mut c = RMat::zeros(nf, d);
        for k in 0..d {
            for m in 0..nf {
                if m == k {
                    continue;
                }
                let gap = self.eigvals[k] - self.eigvals[m];
                if gap.abs() < 1e-10 {
                    return Err(Error::Degenerate(format!(
                        "single-qubit levels {m} and {k} are degenerate"
                    )));
                }
                c[(m, k)] = hm[(m, k)] / gap;
            }
        }
        let de0 = hm[(0, 0)];
        let dh: Vec<f64> = (0..d).map(|k| hm[(k, k)] - de0).collect();
        let ds_over_s = self.ds(field) / self.s;

        let phi_e = wm.transpose() * &self.phi_op * wm;
        let wd = wm.columns(0, d);
        let explicit_phi = wd.transpose() * &self.phi_op * wd * ds_over_s;
        let dphi = c.transpose() * phi_e.columns(0, d) + phi_e.rows(0, d) * &c + explicit_phi;

        // n = i * p0_im / (2 s); work with the real matrix p0_im / (2 s)
        let n_re = &self.p0_im / (2.0 * self.s);
        let n_e = wm.transpose() * &n_re * wm;
        let explicit_n = wd.transpose() * &n_re * wd * (-ds_over_s);
        let dn_re = c.transpose() * n_e.columns(0, d) + n_e.rows(0, d) * &c + explicit_n;

        Ok(TruncatedDerivative {
            dh,
            dn: dn_re.map(|v| C64::new(0.0, v)),
            dphi: to_complex(&dphi),
        })
    }
}

/// Bare 0-1 transition frequency and its gradient with respect to
/// (ec, ej, el, phiext).
pub fn f01_with_gradient(params: FluxoniumParams, dim_full: usize) -> Result<(f64, [f64; 4])> {
    let q = build_fluxonium(params, dim_full)?;
    let f01 = q.eigvals[1] - q.eigvals[0];
    let mut grad = [0.0; 4];
    for (slot, field) in grad.iter_mut().zip(EnergyField::ALL) {
        let de = q.eigenvalue_derivatives(&q.dh_full(field), 2);
        *slot = de[1] - de[0];
    }
    let de = q.eigenvalue_derivatives(&q.dh_dphiext(), 2);
    grad[3] = de[1] - de[0];
    Ok((f01, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermiticity_error, max_abs};
    use std::f64::consts::PI;

    const TP: f64 = 2.0 * PI;

    fn fluxonium_2() -> FluxoniumParams {
        FluxoniumParams {
            ec: TP,
            ej: 4.0 * TP,
            el: TP,
            phiext: PI,
        }
    }

    #[test]
    fn harmonic_limit_has_equal_gaps() {
        let p = FluxoniumParams {
            ec: 1.3,
            ej: 0.0,
            el: 0.7,
            phiext: 0.0,
        };
        let q = build_fluxonium(p, 60).unwrap();
        let w = (8.0f64 * p.ec * p.el).sqrt();
        for k in 1..6 {
            let gap = q.eigvals[k] - q.eigvals[k - 1];
            assert!((gap - w).abs() < 1e-8 * w, "gap {k}: {gap} vs {w}");
        }
    }

    #[test]
    fn flux_parity_symmetry() {
        let a = build_fluxonium(fluxonium_2(), 60).unwrap();
        let b = build_fluxonium(FluxoniumParams { phiext: -PI, ..fluxonium_2() }, 60).unwrap();
        for k in 0..8 {
            assert!((a.eigvals[k] - b.eigvals[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn operators_are_hermitian_and_basis_orthonormal() {
        let q = build_fluxonium(fluxonium_2(), 60).unwrap();
        assert!(hermiticity_error(&to_complex(&q.h)) < 1e-12 * max_abs(&to_complex(&q.h)));
        let gram = q.eigvecs.transpose() * &q.eigvecs;
        assert!((gram - RMat::identity(60, 60)).abs().max() < 1e-10);
        assert!(q.eigvals.windows(2).all(|w| w[0] <= w[1]));
        let t = q.truncate(4).unwrap();
        assert!(hermiticity_error(&t.n_d) < 1e-12);
        assert!(hermiticity_error(&t.phi_d) < 1e-12);
        assert_eq!(t.h_d[(0, 0)].re, 0.0);
    }

    #[test]
    fn sweet_spot_parity_zeroes_charge_diagonal() {
        let t = build_fluxonium(fluxonium_2(), 60).unwrap().truncate(5).unwrap();
        for k in 0..5 {
            assert!(t.n_d[(k, k)].norm() < 1e-10);
            assert!(t.phi_d[(k, k)].norm() < 1e-10);
        }
    }

    #[test]
    fn full_truncation_preserves_spectrum() {
        let q = build_fluxonium(fluxonium_2(), 20).unwrap();
        let t = q.truncate(20).unwrap();
        for k in 0..20 {
            assert!((t.energies[k] - (q.eigvals[k] - q.eigvals[0])).abs() < 1e-12);
        }
    }

    #[test]
    fn convergence_in_basis_size() {
        for el in [0.9, 1.0, 1.1] {
            let p = FluxoniumParams { el: el * TP, ..fluxonium_2() };
            let a = build_fluxonium(p, 60).unwrap();
            let b = build_fluxonium(p, 80).unwrap();
            for k in 0..5 {
                let da = a.eigvals[k] - a.eigvals[0];
                let db = b.eigvals[k] - b.eigvals[0];
                assert!((da - db).abs() < 1e-9, "el {el} level {k}: {}", (da - db).abs());
            }
        }
    }

    #[test]
    fn truncated_derivatives_match_finite_differences() {
        let base = FluxoniumParams {
            ec: 1.1 * TP,
            ej: 3.7 * TP,
            el: 0.95 * TP,
            phiext: PI,
        };
        let d = 3;
        let q = build_fluxonium(base, 50).unwrap();
        for field in EnergyField::ALL {
            let an = q.truncated_derivative(d, field).unwrap();
            let h = 1e-5;
            let shifted = |sign: f64| {
                let mut p = base;
                match field {
                    EnergyField::Ec => p.ec += sign * h,
                    EnergyField::Ej => p.ej += sign * h,
                    EnergyField::El => p.el += sign * h,
                }
                build_fluxonium(p, 50).unwrap().truncate(d).unwrap()
            };
            let (up, dn) = (shifted(1.0), shifted(-1.0));
            let fd_n = (&up.n_d - &dn.n_d) / C64::new(2.0 * h, 0.0);
            let fd_phi = (&up.phi_d - &dn.phi_d) / C64::new(2.0 * h, 0.0);
            assert!(max_abs(&(fd_n - &an.dn)) < 1e-6, "{field:?} dn");
            assert!(max_abs(&(fd_phi - &an.dphi)) < 1e-6, "{field:?} dphi");
            for k in 0..d {
                let fd = (up.energies[k] - dn.energies[k]) / (2.0 * h);
                assert!((fd - an.dh[k]).abs() < 1e-6, "{field:?} dh[{k}]");
            }
        }
    }

    #[test]
    fn f01_gradient_matches_finite_differences() {
        let base = FluxoniumParams { phiext: 2.6, ..fluxonium_2() };
        let (_, g) = f01_with_gradient(base, 40).unwrap();
        let h = 1e-5;
        for k in 0..4 {
            let mut up = base;
            let mut dn = base;
            match k {
                0 => { up.ec += h; dn.ec -= h; }
                1 => { up.ej += h; dn.ej -= h; }
                2 => { up.el += h; dn.el -= h; }
                _ => { up.phiext += h; dn.phiext -= h; }
            }
            let fd = (f01_with_gradient(up, 40).unwrap().0 - f01_with_gradient(dn, 40).unwrap().0) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + g[k].abs()), "component {k}: {fd} vs {}", g[k]);
        }
    }
}
