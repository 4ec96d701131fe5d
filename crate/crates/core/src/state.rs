//! Batched rank-N state tensors and local operator application.
//!
//! A batch stores `ncols` states of the composite space column by column.
//! Within a column the flat index is row-major over sites (site 0 most
//! significant), matching `composite::flat_index`.

use rayon::prelude::*;

use crate::composite::strides;
use crate::linalg::{CMat, C64, ZERO};

/// Columns per parallel work item. Fixed so reductions do not depend on the
/// thread count.
const CHUNK_COLUMNS: usize = 4;
/// Below this many amplitudes the batch is processed on the calling thread.
const PARALLEL_THRESHOLD: usize = 1 << 15;

/// Index bookkeeping for an operator on a subset of sites.
#[derive(Clone, Debug)]
pub struct SiteLayout {
    pub sites: Vec<usize>,
    pub local: usize,
    /// Offset of each local basis state relative to a base index.
    pub offsets: Vec<usize>,
    /// Flat indices with every listed site in state 0.
    pub bases: Vec<usize>,
}

impl SiteLayout {
    pub fn new(dims: &[usize], sites: &[usize]) -> Self {
        let st = strides(dims);
        let local_dims: Vec<usize> = sites.iter().map(|&s| dims[s]).collect();
        let local: usize = local_dims.iter().product();
        let offsets = (0..local)
            .map(|l| {
                let mut rem = l;
                let mut off = 0;
                for (k, &s) in sites.iter().enumerate().rev() {
                    off += (rem % local_dims[k]) * st[s];
                    rem /= local_dims[k];
                }
                off
            })
            .collect();
        let total: usize = dims.iter().product();
        let bases = (0..total)
            .filter(|&i| sites.iter().all(|&s| (i / st[s]) % dims[s] == 0))
            .collect();
        Self {
            sites: sites.to_vec(),
            local,
            offsets,
            bases,
        }
    }

    /// `col <- U col` with `u` in row-major order.
    pub fn apply_column(&self, u: &[C64], col: &mut [C64], scratch: &mut [C64]) {
        let n = self.local;
        for &b in &self.bases {
            for (l, &off) in self.offsets.iter().enumerate() {
                scratch[l] = col[b + off];
            }
            for (r, &off) in self.offsets.iter().enumerate() {
                let row = &u[r * n..(r + 1) * n];
                let mut acc = ZERO;
                for l in 0..n {
                    acc += row[l] * scratch[l];
                }
                col[b + off] = acc;
            }
        }
    }

    /// `r[j, k] += sum over the other sites of psi[j] conj(a[k])`, row-major.
    pub fn accumulate_outer(&self, psi: &[C64], a: &[C64], r: &mut [C64]) {
        let n = self.local;
        for &b in &self.bases {
            for (j, &oj) in self.offsets.iter().enumerate() {
                let p = psi[b + oj];
                if p == ZERO {
                    continue;
                }
                let row = &mut r[j * n..(j + 1) * n];
                for (k, &ok) in self.offsets.iter().enumerate() {
                    row[k] += p * a[b + ok].conj();
                }
            }
        }
    }
}

fn row_major(u: &CMat) -> Vec<C64> {
    let n = u.nrows();
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            out.push(u[(r, c)]);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateBatch {
    pub dims: Vec<usize>,
    pub dim: usize,
    pub ncols: usize,
    pub data: Vec<C64>,
}

impl StateBatch {
    pub fn zeros(dims: &[usize], ncols: usize) -> Self {
        let dim = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            dim,
            ncols,
            data: vec![ZERO; dim * ncols],
        }
    }

    /// Unit vectors `e_i` for the given flat indices.
    pub fn basis(dims: &[usize], indices: &[usize]) -> Self {
        let mut b = Self::zeros(dims, indices.len());
        for (c, &i) in indices.iter().enumerate() {
            b.data[c * b.dim + i] = C64::new(1.0, 0.0);
        }
        b
    }

    pub fn from_matrix(dims: &[usize], m: &CMat) -> Self {
        let dim: usize = dims.iter().product();
        assert_eq!(m.nrows(), dim);
        Self {
            dims: dims.to_vec(),
            dim,
            ncols: m.ncols(),
            data: m.as_slice().to_vec(),
        }
    }

    pub fn to_matrix(&self) -> CMat {
        CMat::from_column_slice(self.dim, self.ncols, &self.data)
    }

    pub fn column(&self, c: usize) -> &[C64] {
        &self.data[c * self.dim..(c + 1) * self.dim]
    }

    pub fn column_mut(&mut self, c: usize) -> &mut [C64] {
        &mut self.data[c * self.dim..(c + 1) * self.dim]
    }

    fn parallel(&self) -> bool {
        self.data.len() >= PARALLEL_THRESHOLD && self.ncols > 1
    }

    /// Apply a local operator to every column.
    pub fn apply(&mut self, layout: &SiteLayout, u: &CMat) {
        let u = row_major(u);
        let dim = self.dim;
        let n = layout.local;
        if self.parallel() {
            self.data.par_chunks_mut(dim * CHUNK_COLUMNS).for_each(|chunk| {
                let mut scratch = vec![ZERO; n];
                for col in chunk.chunks_mut(dim) {
                    layout.apply_column(&u, col, &mut scratch);
                }
            });
        } else {
            let mut scratch = vec![ZERO; n];
            for col in self.data.chunks_mut(dim) {
                layout.apply_column(&u, col, &mut scratch);
            }
        }
    }

    /// Local outer product `R[j, k] = sum psi[j] conj(a[k])` over columns and
    /// the sites outside the layout.
    pub fn local_outer(&self, other: &StateBatch, layout: &SiteLayout) -> CMat {
        assert_eq!(self.data.len(), other.data.len());
        let n = layout.local;
        let dim = self.dim;
        let span = dim * CHUNK_COLUMNS;
        let partial = |(p, a): (&[C64], &[C64])| {
            let mut r = vec![ZERO; n * n];
            for (pc, ac) in p.chunks(dim).zip(a.chunks(dim)) {
                layout.accumulate_outer(pc, ac, &mut r);
            }
            r
        };
        let partials: Vec<Vec<C64>> = if self.parallel() {
            self.data
                .par_chunks(span)
                .zip(other.data.par_chunks(span))
                .map(partial)
                .collect()
        } else {
            self.data.chunks(span).zip(other.data.chunks(span)).map(partial).collect()
        };
        let mut total = vec![ZERO; n * n];
        for p in partials {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        CMat::from_row_slice(n, n, &total)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Euclidean norm of each column.
    pub fn norms(&self) -> Vec<f64> {
        self.data
            .chunks(self.dim)
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .collect()
    }

    pub fn max_abs_diff(&self, other: &StateBatch) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).norm()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composite::embed;
    use crate::linalg::max_abs;
    use proptest::prelude::*;

    fn matrix(n: usize, m: usize, seed: u64) -> CMat {
        let mut s = seed.wrapping_add(0x9E3779B97F4A7C15);
        let mut next = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        CMat::from_fn(n, m, |_, _| C64::new(next(), next()))
    }

    proptest! {
        #[test]
        fn local_apply_equals_dense_embedding(
            dims in prop::collection::vec(2usize..4, 2..5),
            pick in 0usize..64,
            seed in 0u64..1000,
            ncols in 1usize..4,
        ) {
            let n = dims.len();
            let a = pick % n;
            let b = (a + 1 + pick / n % (n - 1)) % n;
            let sites = if pick % 3 == 0 { vec![a] } else { let mut s = vec![a, b]; s.sort(); s };
            let local: usize = sites.iter().map(|&s| dims[s]).product();
            let u = matrix(local, local, seed);
            let layout = SiteLayout::new(&dims, &sites);
            let total: usize = dims.iter().product();
            let psi = matrix(total, ncols, seed + 1);
            let mut batch = StateBatch::from_matrix(&dims, &psi);
            batch.apply(&layout, &u);
            let want = embed(&u, &sites, &dims) * &psi;
            prop_assert!(max_abs(&(batch.to_matrix() - want)) < 1e-12);
        }

        #[test]
        fn local_outer_is_trace_dual_of_apply(
            seed in 0u64..1000,
            two in prop::bool::ANY,
        ) {
            // tr(E R) = sum_cols a^dagger (E psi) for any local E
            let dims = [3, 2, 3];
            let sites = if two { vec![0, 2] } else { vec![1] };
            let layout = SiteLayout::new(&dims, &sites);
            let psi = StateBatch::from_matrix(&dims, &matrix(18, 3, seed));
            let a = StateBatch::from_matrix(&dims, &matrix(18, 3, seed + 7));
            let e = matrix(layout.local, layout.local, seed + 3);
            let r = psi.local_outer(&a, &layout);
            let lhs = crate::linalg::trace_product(&e, &r);
            let rhs = (a.to_matrix().adjoint() * embed(&e, &sites, &dims) * psi.to_matrix()).trace();
            prop_assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn parallel_path_matches_sequential() {
        let dims = [4, 4, 4, 4, 4];
        let total = 1024;
        let psi = matrix(total, 40, 5);
        let u = matrix(16, 16, 6);
        let layout = SiteLayout::new(&dims, &[1, 3]);
        let mut par = StateBatch::from_matrix(&dims, &psi);
        assert!(par.parallel());
        par.apply(&layout, &u);
        let mut seq = CMat::zeros(total, 40);
        for c in 0..40 {
            let mut single = StateBatch::from_matrix(&dims, &psi.columns(c, 1).into_owned());
            single.apply(&layout, &u);
            seq.set_column(c, &single.to_matrix().column(0));
        }
        assert_eq!(par.to_matrix(), seq);
        let r1 = par.local_outer(&par, &layout);
        let r2 = par.local_outer(&par, &layout);
        assert_eq!(r1, r2);
    }
}
