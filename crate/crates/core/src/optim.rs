//! Box-constrained limited-memory quasi-Newton minimization and the
//! explicit device-parameter update step.

use std::collections::VecDeque;

use crate::device::ParameterSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct MinimizeOptions {
    pub max_iter: usize,
    /// Stop when the projected gradient's largest component falls below this.
    pub gtol: f64,
    /// Stop when `(f_prev - f) / max(|f_prev|, |f|, 1) <= ftol`.
    pub ftol: f64,
    pub memory: usize,
    /// Per-coordinate `(lower, upper)`; use infinities for free coordinates.
    pub bounds: Option<Vec<(f64, f64)>>,
    pub max_evals: usize,
    pub logging: bool,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            gtol: 1e-8,
            ftol: 1e-12,
            memory: 10,
            bounds: None,
            max_evals: 5000,
            logging: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub fun: f64,
    pub grad: Vec<f64>,
    pub nit: usize,
    pub nfev: usize,
    pub converged: bool,
    pub message: String,
    /// Best objective after each iteration, starting with `f(x0)`.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project(x: &mut [f64], bounds: Option<&[(f64, f64)]>) {
    if let Some(b) = bounds {
        for (v, &(lo, hi)) in x.iter_mut().zip(b) {
            *v = v.clamp(lo, hi);
        }
    }
}

/// Components of the gradient that can still move the iterate.
fn projected_gradient(x: &[f64], g: &[f64], bounds: Option<&[(f64, f64)]>) -> Vec<f64> {
    match bounds {
        None => g.to_vec(),
        Some(b) => x
            .iter()
            .zip(g)
            .zip(b)
            .map(|((&xi, &gi), &(lo, hi))| {
                if (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0) {
                    0.0
                } else {
                    gi
                }
            })
            .collect(),
    }
}

fn finite(f: f64, g: &[f64]) -> bool {
    f.is_finite() && g.iter().all(|v| v.is_finite())
}

struct Point {
    alpha: f64,
    f: f64,
    slope: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

/// Strong-Wolfe line search on `[0, alpha_max]`. Non-finite or failed
/// evaluations are treated as failing the sufficient-decrease test.
fn wolfe_search(
    eval: &mut impl FnMut(f64) -> Result<Option<Point>>,
    f0: f64,
    d0: f64,
    alpha_init: f64,
    alpha_max: f64,
) -> Result<Option<Point>> {
    let armijo = |p: &Point| p.f <= f0 + C1 * p.alpha * d0;
    let mut prev = Point {
        alpha: 0.0,
        f: f0,
        slope: d0,
        x: vec![],
        g: vec![],
    };
    let mut alpha = alpha_init;
    for i in 0..30 {
        let Some(p) = eval(alpha)? else {
            return Ok(Some(prev).filter(|p| p.alpha > 0.0));
        };
        if !armijo(&p) || (i > 0 && p.f >= prev.f) {
            return zoom(eval, f0, d0, prev, p);
        }
        if p.slope.abs() <= -C2 * d0 {
            return Ok(Some(p));
        }
        if p.slope >= 0.0 {
            let hi = Point { x: vec![], g: vec![], ..prev };
            return zoom(eval, f0, d0, p, hi);
        }
        if alpha >= alpha_max {
            return Ok(Some(p));
        }
        alpha = (2.0 * alpha).min(alpha_max);
        prev = p;
    }
    Ok(Some(prev).filter(|p| p.alpha > 0.0))
}

fn zoom(
    eval: &mut impl FnMut(f64) -> Result<Option<Point>>,
    f0: f64,
    d0: f64,
    mut lo: Point,
    mut hi: Point,
) -> Result<Option<Point>> {
    for _ in 0..40 {
        let (a, b) = (lo.alpha, hi.alpha);
        let width = (b - a).abs();
        if width < 1e-14 * a.abs().max(b.abs()).max(1e-300) {
            break;
        }
        let mut trial = 0.5 * (a + b);
        if hi.f.is_finite() && hi.slope.is_finite() {
            // cubic interpolation from values and slopes at both ends
            let d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (a - b);
            let disc = d1 * d1 - lo.slope * hi.slope;
            if disc >= 0.0 {
                let d2 = (b - a).signum() * disc.sqrt();
                let c = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
                let (l, h) = (a.min(b), a.max(b));
                if c.is_finite() && c > l + 0.1 * width && c < h - 0.1 * width {
                    trial = c;
                }
            }
        }
        let Some(p) = eval(trial)? else { break };
        if p.f > f0 + C1 * p.alpha * d0 || p.f >= lo.f {
            hi = p;
        } else {
            if p.slope.abs() <= -C2 * d0 {
                return Ok(Some(p));
            }
            if p.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = Point { x: vec![], g: vec![], ..lo };
                lo = p;
            } else {
                lo = p;
            }
        }
    }
    Ok(Some(lo).filter(|p| p.alpha > 0.0))
}

/// Minimize `f`, which returns the value and gradient at a point.
///
/// An error at the starting point is returned; an error at a trial point
/// rejects that step like a non-finite value.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &MinimizeOptions) -> Result<MinimizeResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let bounds = opts.bounds.as_deref();
    if let Some(b) = bounds {
        if b.len() != n {
            return Err(Error::Shape(format!("{} bounds for {} variables", b.len(), n)));
        }
    }
    let mut x = x0.to_vec();
    project(&mut x, bounds);
    let (mut fx, mut gx) = f(&x)?;
    let mut nfev = 1;
    if !finite(fx, &gx) {
        return Err(Error::Numerical(format!("objective is not finite at the starting point ({fx})")));
    }
    let mut trace = vec![fx];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut message = String::from("iteration limit reached");
    let mut converged = false;
    let mut nit = 0;
    while nit < opts.max_iter {
        let pg = projected_gradient(&x, &gx, bounds);
        if pg.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= opts.gtol {
            message = "projected gradient below tolerance".into();
            converged = true;
            break;
        }
        // two-loop recursion on the free coordinates
        let free: Vec<bool> = pg.iter().zip(&gx).map(|(p, g)| *p != 0.0 || *g == 0.0).collect();
        let mut q: Vec<f64> = pg.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for i in 0..n {
                q[i] -= a * y[i];
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            for v in q.iter_mut() {
                *v *= gamma;
            }
        } else {
            let gnorm = dot(&pg, &pg).sqrt();
            let scale = 1.0 / gnorm.max(1.0);
            for v in q.iter_mut() {
                *v *= scale;
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for i in 0..n {
                q[i] += s[i] * (a - b);
            }
        }
        let mut d: Vec<f64> = q.iter().zip(&free).map(|(v, &fr)| if fr { -v } else { 0.0 }).collect();
        if let Some(b) = bounds {
            for i in 0..n {
                if (x[i] >= b[i].1 && d[i] > 0.0) || (x[i] <= b[i].0 && d[i] < 0.0) {
                    d[i] = 0.0;
                }
            }
        }
        if dot(&d, &pg) >= 0.0 {
            history.clear();
            d = pg.iter().map(|v| -v).collect();
        }
        // largest step keeping the iterate inside the box
        let mut alpha_max = f64::INFINITY;
        if let Some(b) = bounds {
            for i in 0..n {
                if d[i] > 0.0 && b[i].1.is_finite() {
                    alpha_max = alpha_max.min((b[i].1 - x[i]) / d[i]);
                } else if d[i] < 0.0 && b[i].0.is_finite() {
                    alpha_max = alpha_max.min((b[i].0 - x[i]) / d[i]);
                }
            }
        }
        if !(alpha_max > 0.0) {
            history.clear();
            message = "no feasible descent direction".into();
            break;
        }
        let d0 = dot(&gx, &d);
        let remaining = opts.max_evals.saturating_sub(nfev);
        let mut evals = 0;
        let mut eval = |alpha: f64| -> Result<Option<Point>> {
            if evals >= remaining {
                return Ok(None);
            }
            evals += 1;
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            project(&mut trial, bounds);
            let (ft, gt) = match f(&trial) {
                Ok(v) => v,
                Err(e) => {
                    log::debug!("trial point rejected: {e}");
                    (f64::NAN, vec![f64::NAN; n])
                }
            };
            let slope = dot(&gt, &d);
            Ok(Some(Point {
                alpha,
                f: if finite(ft, &gt) { ft } else { f64::INFINITY },
                slope: if finite(ft, &gt) { slope } else { f64::NAN },
                x: trial,
                g: gt,
            }))
        };
        let mut found = wolfe_search(&mut eval, fx, d0, 1.0f64.min(alpha_max), alpha_max)?;
        if let Some(p) = &found {
            // secant step on the directional slope; exact for quadratics
            if p.slope.abs() > 0.1 * d0.abs() && p.slope != d0 {
                let alpha = p.alpha * d0 / (d0 - p.slope);
                if alpha > 0.0 && alpha < alpha_max && (alpha - p.alpha).abs() > 1e-6 * p.alpha {
                    if let Some(q) = eval(alpha)? {
                        if q.f < p.f && q.f <= fx + C1 * q.alpha * d0 {
                            found = Some(q);
                        }
                    }
                }
            }
        }
        nfev += evals;
        let Some(pt) = found else {
            if !history.is_empty() {
                history.clear();
                continue;
            }
            message = "line search could not reduce the objective".into();
            converged = pg.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= opts.gtol.sqrt();
            break;
        };
        let s: Vec<f64> = pt.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let (xn, fnew, gnew) = (pt.x, pt.f, pt.g);
        nit += 1;
        let y: Vec<f64> = gnew.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) && sy > 0.0 {
            history.push_back((s, y, 1.0 / sy));
            if history.len() > opts.memory {
                history.pop_front();
            }
        }
        let reduction = (fx - fnew) / fx.abs().max(fnew.abs()).max(1.0);
        x = xn;
        fx = fnew;
        gx = gnew;
        trace.push(fx);
        if opts.logging {
            log::info!("iter {nit:4}  f = {fx:.10e}");
        }
        if reduction <= opts.ftol {
            message = "relative reduction below tolerance".into();
            converged = true;
            break;
        }
        if nfev >= opts.max_evals {
            message = "evaluation limit reached".into();
            break;
        }
    }
    Ok(MinimizeResult {
        x,
        fun: fx,
        grad: gx,
        nit,
        nfev,
        converged,
        message,
        trace,
    })
}

/// Learning rate of the explicit device update, in (rad/ns)^2: 0.01 GHz^2.
pub const DEVICE_RATE: f64 = 0.01 * (2.0 * std::f64::consts::PI) * (2.0 * std::f64::consts::PI);

/// One gradient-descent step on the E_C / E_J / E_L entries; other entries
/// (couplings, pulses) are left as they are.
pub fn device_step(theta: &ParameterSet, grad: &[f64], rate: f64) -> Result<ParameterSet> {
    if grad.len() != theta.len() {
        return Err(Error::Shape(format!("{} gradient entries for {} parameters", grad.len(), theta.len())));
    }
    let mut out = theta.clone();
    for (e, g) in out.entries.iter_mut().zip(grad) {
        if ParameterSet::is_energy_key(&e.key) {
            e.value -= rate * g;
        }
    }
    Ok(out)
}
