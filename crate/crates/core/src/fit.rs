//! Fitting single-fluxonium parameters to a measured spectroscopy map by
//! minimizing the Kullback–Leibler divergence between the data and a
//! Lorentzian line model centred on the 0-1 transition.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{minimize, MinimizeOptions, MinimizeResult};
use crate::qubit::{f01_with_gradient, FluxoniumParams};

pub const FIT_DIM_FULL: usize = 40;

/// Normalized intensity on a grid: `p[ix][ie]` at `(x[ix], eps[ie])`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumData {
    pub x: Vec<f64>,
    pub eps: Vec<f64>,
    pub p: Vec<Vec<f64>>,
}

impl SpectrumData {
    /// Build a grid from `(x, eps, value)` triples covering every grid point
    /// once; values are normalized to sum to one.
    pub fn from_triples(rows: &[(f64, f64, f64)]) -> Result<Self> {
        let mut x: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let mut eps: Vec<f64> = rows.iter().map(|r| r.1).collect();
        for v in [&mut x, &mut eps] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        if x.len() * eps.len() != rows.len() {
            return Err(Error::Shape(format!(
                "{} rows do not form a full {}x{} grid",
                rows.len(),
                x.len(),
                eps.len()
            )));
        }
        let mut p = vec![vec![f64::NAN; eps.len()]; x.len()];
        for &(xv, ev, val) in rows {
            let ix = x.binary_search_by(|v| v.total_cmp(&xv)).expect("present");
            let ie = eps.binary_search_by(|v| v.total_cmp(&ev)).expect("present");
            if !p[ix][ie].is_nan() {
                return Err(Error::Shape(format!("duplicate grid point ({xv}, {ev})")));
            }
            p[ix][ie] = val;
        }
        let mut data = Self { x, eps, p };
        data.normalize()?;
        Ok(data)
    }

    pub fn normalize(&mut self) -> Result<()> {
        if self.p.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Parameter("intensities must be finite and non-negative".into()));
        }
        let total: f64 = self.p.iter().flatten().sum();
        if total <= 0.0 {
            return Err(Error::Parameter("intensities sum to zero".into()));
        }
        for v in self.p.iter_mut().flatten() {
            *v /= total;
        }
        Ok(())
    }

    pub fn triples(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.x.len() * self.eps.len());
        for (ix, &x) in self.x.iter().enumerate() {
            for (ie, &e) in self.eps.iter().enumerate() {
                out.push((x, e, self.p[ix][ie]));
            }
        }
        out
    }
}

/// Model parameters; the external flux is `a x + b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub ec: f64,
    pub ej: f64,
    pub el: f64,
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub c: f64,
}

impl FitParams {
    pub const NAMES: [&'static str; 7] = ["ec", "ej", "el", "a", "b", "lambda", "c"];

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.ec, self.ej, self.el, self.a, self.b, self.lambda, self.c]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            ec: v[0],
            ej: v[1],
            el: v[2],
            a: v[3],
            b: v[4],
            lambda: v[5],
            c: v[6],
        }
    }

    fn qubit(&self, phiext: f64) -> FluxoniumParams {
        FluxoniumParams {
            ec: self.ec,
            ej: self.ej,
            el: self.el,
            phiext,
        }
    }
}

/// `f01` and its derivatives `(ec, ej, el, phiext)` for every grid column.
fn transitions(x: &[f64], params: &FitParams, dim_full: usize) -> Result<Vec<(f64, [f64; 4])>> {
    x.par_iter()
        .map(|&xv| f01_with_gradient(params.qubit(params.a * xv + params.b), dim_full))
        .collect()
}

/// Unnormalized model value `lambda / ((eps - f)^2 + lambda^2) + c`.
fn line(eps: f64, f: f64, lambda: f64, c: f64) -> f64 {
    let u = eps - f;
    lambda / (u * u + lambda * lambda) + c
}

/// Model intensities on the data grid, normalized to one.
pub fn model(data: &SpectrumData, params: &FitParams, dim_full: usize) -> Result<Vec<Vec<f64>>> {
    let f = transitions(&data.x, params, dim_full)?;
    let mut q: Vec<Vec<f64>> = f
        .iter()
        .map(|(f01, _)| data.eps.iter().map(|&e| line(e, *f01, params.lambda, params.c)).collect())
        .collect();
    let z: f64 = q.iter().flatten().sum();
    for v in q.iter_mut().flatten() {
        *v /= z;
    }
    Ok(q)
}

/// KL divergence `sum P ln(P / Q)` and its gradient in `FitParams::NAMES` order.
pub fn kl_objective(data: &SpectrumData, params: &FitParams, dim_full: usize) -> Result<(f64, [f64; 7])> {
    if !(params.lambda > 0.0) {
        return Err(Error::Parameter(format!("line width must be positive, got {}", params.lambda)));
    }
    let f = transitions(&data.x, params, dim_full)?;
    let (lam, c) = (params.lambda, params.c);
    let mut z = 0.0;
    let mut dz = [0.0; 7];
    let mut cross = 0.0;
    let mut dcross = [0.0; 7];
    let mut mass = 0.0;
    for (ix, (f01, df)) in f.iter().enumerate() {
        let xv = data.x[ix];
        for (ie, &e) in data.eps.iter().enumerate() {
            let u = e - f01;
            let den = u * u + lam * lam;
            let q = lam / den + c;
            if !(q > 0.0) {
                return Err(Error::Numerical(format!(
                    "model intensity vanishes at ({xv}, {e}); the background must be positive"
                )));
            }
            // dq/df and dq/d(lambda, c)
            let dq_df = 2.0 * lam * u / (den * den);
            let dq = [
                dq_df * df[0],
                dq_df * df[1],
                dq_df * df[2],
                dq_df * df[3] * xv,
                dq_df * df[3],
                (u * u - lam * lam) / (den * den),
                1.0,
            ];
            z += q;
            for k in 0..7 {
                dz[k] += dq[k];
            }
            let pv = data.p[ix][ie];
            if pv > 0.0 {
                mass += pv;
                cross += pv * (pv / q).ln();
                for k in 0..7 {
                    dcross[k] -= pv * dq[k] / q;
                }
            }
        }
    }
    let value = cross + mass * z.ln();
    let mut grad = [0.0; 7];
    for k in 0..7 {
        grad[k] = dcross[k] + mass * dz[k] / z;
    }
    Ok((value, grad))
}

/// Synthetic map from known parameters.
pub fn synthetic_spectrum(params: &FitParams, x: &[f64], eps: &[f64], dim_full: usize) -> Result<SpectrumData> {
    let data = SpectrumData {
        x: x.to_vec(),
        eps: eps.to_vec(),
        p: vec![vec![0.0; eps.len()]; x.len()],
    };
    let p = model(&data, params, dim_full)?;
    Ok(SpectrumData { p, ..data })
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: FitParams,
    pub objective: f64,
    pub optimizer: MinimizeResult,
}

/// Minimize the KL divergence from `init`. Energies and the line width are
/// kept positive and the background non-negative.
pub fn fit_spectrum(data: &SpectrumData, init: &FitParams, opts: &MinimizeOptions, dim_full: usize) -> Result<FitResult> {
    let tiny = 1e-9;
    let inf = f64::INFINITY;
    let mut opts = opts.clone();
    opts.bounds = Some(vec![
        (tiny, inf),
        (0.0, inf),
        (tiny, inf),
        (-inf, inf),
        (-inf, inf),
        (tiny, inf),
        (tiny, inf),
    ]);
    let r = minimize(
        |v| {
            let (value, g) = kl_objective(data, &FitParams::from_slice(v), dim_full)?;
            Ok((value, g.to_vec()))
        },
        &init.to_vec(),
        &opts,
    )?;
    Ok(FitResult {
        params: FitParams::from_slice(&r.x),
        objective: r.fun,
        optimizer: r,
    })
}
