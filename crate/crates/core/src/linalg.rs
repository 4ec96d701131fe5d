//! Small dense linear-algebra kernels used throughout the simulator.
//!
//! Everything here works on `nalgebra` dynamic matrices. The matrices are
//! small (single-qubit bases, d^k local blocks, composite systems up to a few
//! thousand states), so plain dense algorithms are appropriate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type RMat = DMatrix<f64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn to_complex(m: &RMat) -> CMat {
    m.map(|x| C64::new(x, 0.0))
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn diag(values: &[f64]) -> CMat {
    CMat::from_diagonal(&DVector::from_iterator(
        values.len(),
        values.iter().map(|&v| C64::new(v, 0.0)),
    ))
}

/// Frobenius inner product tr(A B) without forming the product.
pub fn trace_product(a: &CMat, b: &CMat) -> C64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = ZERO;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

pub fn hermiticity_error(m: &CMat) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn norm1(m: &CMat) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Eigen-decomposition of a real symmetric matrix with ascending eigenvalues.
pub fn symmetric_eigen(m: &RMat) -> (Vec<f64>, RMat) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = RMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Eigen-decomposition of a Hermitian matrix with ascending eigenvalues.
///
/// Purely real input is routed through the real solver so the eigenvectors
/// come back real.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    if m.iter().all(|z| z.im == 0.0) {
        let (vals, vecs) = symmetric_eigen(&m.map(|z| z.re));
        return (vals, to_complex(&vecs));
    }
    let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Rotate each column so that its largest-magnitude component is real and
/// positive. Ties are broken by the lowest index.
pub fn fix_column_phases(v: &mut CMat) {
    for j in 0..v.ncols() {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..v.nrows() {
            let a = v[(i, j)].norm();
            // 1e-12 slack keeps the choice stable against rounding between equal entries
            if a > best_abs + 1e-12 {
                best_abs = a;
                best = i;
            }
        }
        if best_abs > 0.0 {
            let phase = v[(best, j)] / best_abs;
            let rot = phase.conj();
            for i in 0..v.nrows() {
                v[(i, j)] *= rot;
            }
        }
    }
}

/// Index of the component the phase convention pins for column `j`.
pub fn pinned_component(v: &CMat, j: usize) -> usize {
    let mut best = 0;
    let mut best_abs = -1.0;
    for i in 0..v.nrows() {
        let a = v[(i, j)].norm();
        if a > best_abs + 1e-12 {
            best_abs = a;
            best = i;
        }
    }
    best
}

/// Complex `exp(z) - 1` without cancellation for small `z`.
pub fn expm1_c(z: C64) -> C64 {
    let (s, co) = z.im.sin_cos();
    let em1 = z.re.exp_m1();
    let half = (z.im * 0.5).sin();
    C64::new(em1 * co - 2.0 * half * half, (em1 + 1.0) * s)
}

/// First divided difference of `exp` at `a`, `b`: (e^a - e^b)/(a - b).
pub fn exp_divided_difference(a: C64, b: C64) -> C64 {
    let z = a - b;
    if z.norm() < 1e-6 {
        // series in z around b, accurate to O(z^4)
        b.exp() * (ONE + z * 0.5 + z * z / 6.0 + z * z * z / 24.0)
    } else {
        b.exp() * expm1_c(z) / z
    }
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [f64; 5] = [
    1.495585217958292e-2,
    2.539398330063230e-1,
    9.504178996162932e-1,
    2.097847961257068e0,
    5.371920351148152e0,
];

fn scaled(m: &CMat, s: f64) -> CMat {
    m * C64::new(s, 0.0)
}

fn pade_low(a: &CMat, b: &[f64]) -> (CMat, CMat) {
    let n = a.nrows();
    let ident = CMat::identity(n, n);
    let a2 = a * a;
    let mut u = scaled(&ident, b[1]);
    let mut v = scaled(&ident, b[0]);
    let mut pow = ident;
    let m = b.len() - 1;
    let mut k = 2;
    while k <= m {
        pow = &pow * &a2;
        v += scaled(&pow, b[k]);
        if k + 1 <= m {
            u += scaled(&pow, b[k + 1]);
        }
        k += 2;
    }
    (a * u, v)
}

fn pade13(a: &CMat) -> (CMat, CMat) {
    let b = &PADE13;
    let n = a.nrows();
    let ident = CMat::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = scaled(&a6, b[13]) + scaled(&a4, b[11]) + scaled(&a2, b[9]);
    let u = a * (&a6 * inner_u
        + scaled(&a6, b[7])
        + scaled(&a4, b[5])
        + scaled(&a2, b[3])
        + scaled(&ident, b[1]));
    let inner_v = scaled(&a6, b[12]) + scaled(&a4, b[10]) + scaled(&a2, b[8]);
    let v = &a6 * inner_v
        + scaled(&a6, b[6])
        + scaled(&a4, b[4])
        + scaled(&a2, b[2])
        + scaled(&ident, b[0]);
    (u, v)
}

/// Matrix exponential by scaling and squaring with a Padé approximant
/// (Higham 2005 degree selection).
pub fn expm(a: &CMat) -> CMat {
    let n = a.nrows();
    if n == 0 {
        return a.clone();
    }
    let nrm = norm1(a);
    let (u, v, squarings) = if nrm <= THETA[0] {
        let (u, v) = pade_low(a, &PADE3);
        (u, v, 0)
    } else if nrm <= THETA[1] {
        let (u, v) = pade_low(a, &PADE5);
        (u, v, 0)
    } else if nrm <= THETA[2] {
        let (u, v) = pade_low(a, &PADE7);
        (u, v, 0)
    } else if nrm <= THETA[3] {
        let (u, v) = pade_low(a, &PADE9);
        (u, v, 0)
    } else {
        let s = (nrm / THETA[4]).log2().ceil().max(0.0) as i32;
        let scaled_a = scaled(a, 0.5f64.powi(s));
        let (u, v) = pade13(&scaled_a);
        (u, v, s)
    };
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .unwrap_or_else(|| CMat::from_element(n, n, C64::new(f64::NAN, f64::NAN)));
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// Fréchet derivative of the matrix exponential, `L(A, E)`, together with
/// `exp(A)`, from the block-triangular identity
/// `exp([[A, E], [0, A]]) = [[exp(A), L(A, E)], [0, exp(A)]]`.
pub fn expm_frechet(a: &CMat, e: &CMat) -> (CMat, CMat) {
    let n = a.nrows();
    let na = norm1(a);
    let ne = norm1(e);
    if ne == 0.0 {
        return (expm(a), CMat::zeros(n, n));
    }
    // L is linear in E; bring E to the scale of A so the Padé selection is driven by A.
    let target = if na > 0.0 { na } else { 1.0 };
    let k = target / ne;
    let mut block = CMat::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(a);
    block.view_mut((n, n), (n, n)).copy_from(a);
    block.view_mut((0, n), (n, n)).copy_from(&scaled(e, k));
    let big = expm(&block);
    let ea = big.view((0, 0), (n, n)).into_owned();
    let l = big.view((0, n), (n, n)).into_owned() * C64::new(1.0 / k, 0.0);
    (ea, l)
}

/// Exponential of `-i * scale * H` for Hermitian `H` given its eigensystem,
/// with the divided-difference table needed for Fréchet derivatives.
#[derive(Clone, Debug)]
pub struct HermitianExp {
    pub vectors: CMat,
    /// Exponents `-i * scale * lambda_k`.
    pub exponents: Vec<C64>,
    pub forward: CMat,
    pub inverse: CMat,
    /// `dd[j, k]` = divided difference of exp between exponents j and k.
    pub dd: CMat,
}

impl HermitianExp {
    pub fn new(values: &[f64], vectors: &CMat, scale: C64) -> Self {
        let n = values.len();
        let exponents: Vec<C64> = values.iter().map(|&l| -I * scale * l).collect();
        let fwd = CMat::from_diagonal(&DVector::from_iterator(
            n,
            exponents.iter().map(|z| z.exp()),
        ));
        let inv = CMat::from_diagonal(&DVector::from_iterator(
            n,
            exponents.iter().map(|z| (-z).exp()),
        ));
        let vd = vectors.adjoint();
        let forward = vectors * fwd * &vd;
        let inverse = vectors * inv * &vd;
        let dd = CMat::from_fn(n, n, |j, k| exp_divided_difference(exponents[j], exponents[k]));
        Self {
            vectors: vectors.clone(),
            exponents,
            forward,
            inverse,
            dd,
        }
    }

    /// `L(A, E)` for `A = -i * scale * H` and the direction `E` (already
    /// including the `-i * scale` factor).
    pub fn frechet(&self, e: &CMat) -> CMat {
        let vd = self.vectors.adjoint();
        let inner = &vd * e * &self.vectors;
        let hadamard = inner.component_mul(&self.dd);
        &self.vectors * hadamard * vd
    }
}

/// Solve a small dense linear system, reporting singular matrices.
pub fn solve(a: &CMat, b: &CMat) -> Result<CMat> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Numerical("singular matrix in linear solve".into()))
}
