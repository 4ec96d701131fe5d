//! Trotter–Suzuki propagation over local Hamiltonian groups.
//!
//! The Hamiltonian is split into one group per site (its static diagonal
//! plus any drives on that site) and one group per edge. A step of length
//! `dt` is a product of stage exponentials `exp(-i c dt H_g(t))` where the
//! stage coefficient `c` may be complex. Drives are sampled at the midpoint
//! of the sub-interval a stage covers.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::composite::CompositeSystem;
use crate::contraction::{greedy_path, local_operator_network};
use crate::error::{Error, Result};
use crate::linalg::{expm, hermitian_eigen, CMat, HermitianExp, C64, I, ZERO};
use crate::state::{SiteLayout, StateBatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrotterOrder {
    #[serde(rename = "1")]
    First,
    #[serde(rename = "2")]
    Second,
    /// Fourth order from two second-order steps with complex fractions.
    #[serde(rename = "4j")]
    FourthComplex,
    /// Fourth order Suzuki–Yoshida composition with real fractions.
    #[serde(rename = "4")]
    Fourth,
}

impl TrotterOrder {
    pub fn nominal_order(self) -> u32 {
        match self {
            Self::First => 1,
            Self::Second => 2,
            Self::FourthComplex | Self::Fourth => 4,
        }
    }

    /// Sub-step fractions of the second-order sweeps in each step of the
    /// repeating cycle; empty for first order. The complex pair alternates
    /// its order between consecutive steps so every two steps form a
    /// palindromic composition.
    fn fractions(self) -> Vec<Vec<C64>> {
        match self {
            Self::First => vec![],
            Self::Second => vec![vec![C64::new(1.0, 0.0)]],
            Self::FourthComplex => {
                let p = C64::new(0.5, -(3.0f64.sqrt()) / 6.0);
                vec![vec![p, p.conj()], vec![p.conj(), p]]
            }
            Self::Fourth => {
                let p = 1.0 / (2.0 - 2.0f64.cbrt());
                vec![vec![C64::new(p, 0.0), C64::new(1.0 - 2.0 * p, 0.0), C64::new(p, 0.0)]]
            }
        }
    }
}

impl FromStr for TrotterOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Self::First),
            "2" => Ok(Self::Second),
            "4j" => Ok(Self::FourthComplex),
            "4" => Ok(Self::Fourth),
            other => Err(Error::Parameter(format!("unknown trotter order {other:?} (expected 1, 2, 4j or 4)"))),
        }
    }
}

impl fmt::Display for TrotterOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::First => "1",
            Self::Second => "2",
            Self::FourthComplex => "4j",
            Self::Fourth => "4",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Group {
    pub sites: Vec<usize>,
    /// Indices into `CompositeSystem::static_terms`.
    pub static_terms: Vec<usize>,
    /// Indices into `CompositeSystem::drive_terms`.
    pub drive_terms: Vec<usize>,
    pub static_matrix: CMat,
    pub layout: SiteLayout,
    eigen: (Vec<f64>, CMat),
}

impl Group {
    pub fn is_static(&self) -> bool {
        self.drive_terms.is_empty()
    }

    /// Local Hamiltonian of the group at time `t`.
    pub fn hamiltonian(&self, sys: &CompositeSystem, t: C64) -> CMat {
        let mut h = self.static_matrix.clone();
        for &k in &self.drive_terms {
            let term = &sys.drive_terms[k];
            let c = sys.term_coefficient(term, t);
            if c != ZERO {
                h += &term.matrix * c;
            }
        }
        h
    }
}

#[derive(Clone, Debug)]
pub struct Stage {
    pub group: usize,
    pub coeff: C64,
    /// Sampling time within the step, as a fraction of `dt`.
    pub offset: C64,
    exp: Option<HermitianExp>,
}

impl Stage {
    pub fn static_exp(&self) -> Option<&HermitianExp> {
        self.exp.as_ref()
    }
}

#[derive(Clone, Debug)]
pub struct TrotterPlan {
    pub order: TrotterOrder,
    pub t0: f64,
    pub tg: f64,
    pub astep: usize,
    pub dt: f64,
    pub groups: Vec<Group>,
    /// Stages of every step in the repeating cycle, in application order.
    pub stages: Vec<Stage>,
    /// Stage ranges of the steps in the cycle; step `k` uses entry
    /// `k % cycle.len()`.
    pub cycle: Vec<Range<usize>>,
    /// Contraction cost of each stage for a single state.
    pub stage_flops: Vec<f64>,
}

fn sweep(n_groups: usize, coeff: C64, offset: C64, reverse: bool) -> Vec<(usize, C64, C64)> {
    let mut out: Vec<(usize, C64, C64)> = (0..n_groups).map(|g| (g, coeff, offset)).collect();
    if reverse {
        out.reverse();
    }
    out
}

fn raw_stages(order: TrotterOrder, n_groups: usize) -> Vec<Vec<(usize, C64, C64)>> {
    if order == TrotterOrder::First {
        return vec![sweep(n_groups, C64::new(1.0, 0.0), C64::new(0.5, 0.0), false)];
    }
    order
        .fractions()
        .into_iter()
        .map(|fracs| {
            let mut out = Vec::new();
            let mut start = ZERO;
            for f in fracs {
                out.extend(sweep(n_groups, f * 0.5, start + f * 0.25, false));
                out.extend(sweep(n_groups, f * 0.5, start + f * 0.75, true));
                start += f;
            }
            out
        })
        .collect()
}

impl TrotterPlan {
    pub fn new(sys: &CompositeSystem, t0: f64, tg: f64, astep: usize, order: TrotterOrder) -> Result<Self> {
        if astep == 0 {
            return Err(Error::Parameter("astep must be at least 1".into()));
        }
        if !(tg > t0) {
            return Err(Error::Parameter(format!("final time {tg} must exceed start time {t0}")));
        }
        let dt = (tg - t0) / astep as f64;
        let n = sys.n_sites();
        let mut groups: Vec<Group> = Vec::new();
        for (i, term) in sys.static_terms.iter().enumerate() {
            if let Some(g) = groups.iter_mut().find(|g| g.sites == term.sites) {
                g.static_terms.push(i);
                g.static_matrix += &term.matrix * sys.term_coefficient(term, ZERO);
                continue;
            }
            groups.push(Group {
                sites: term.sites.clone(),
                static_terms: vec![i],
                drive_terms: vec![],
                static_matrix: &term.matrix * sys.term_coefficient(term, ZERO),
                layout: SiteLayout::new(&sys.dims, &term.sites),
                eigen: (vec![], CMat::zeros(0, 0)),
            });
        }
        for (k, term) in sys.drive_terms.iter().enumerate() {
            let g = groups
                .iter_mut()
                .find(|g| g.sites == term.sites)
                .ok_or_else(|| Error::Shape(format!("drive on sites {:?} has no matching group", term.sites)))?;
            g.drive_terms.push(k);
        }
        for g in &mut groups {
            g.eigen = hermitian_eigen(&g.static_matrix);
        }
        let mut stages: Vec<Stage> = Vec::new();
        let mut cycle = Vec::new();
        for step in raw_stages(order, groups.len()) {
            let begin = stages.len();
            for (group, coeff, offset) in step {
                if stages.len() > begin {
                    let last = stages.last_mut().expect("non-empty");
                    if last.group == group && groups[group].is_static() {
                        last.coeff += coeff;
                        continue;
                    }
                }
                stages.push(Stage {
                    group,
                    coeff,
                    offset,
                    exp: None,
                });
            }
            cycle.push(begin..stages.len());
        }
        for st in &mut stages {
            let g = &groups[st.group];
            if g.is_static() {
                st.exp = Some(HermitianExp::new(&g.eigen.0, &g.eigen.1, st.coeff * dt));
            }
        }
        let stage_flops = stages
            .iter()
            .map(|st| {
                let (inputs, output, sizes) = local_operator_network(n, &groups[st.group].sites, &sys.dims);
                greedy_path(&inputs, &output, &sizes).flops
            })
            .collect();
        Ok(Self {
            order,
            t0,
            tg,
            astep,
            dt,
            groups,
            stages,
            cycle,
            stage_flops,
        })
    }

    /// Plan with the step count nearest to `(tg - t0) / dt`.
    pub fn with_dt(sys: &CompositeSystem, t0: f64, tg: f64, dt: f64, order: TrotterOrder) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
        }
        let astep = ((tg - t0) / dt).round().max(1.0) as usize;
        Self::new(sys, t0, tg, astep, order)
    }

    pub fn stage_time(&self, stage: usize, step: usize) -> C64 {
        (self.stages[stage].offset + step as f64) * self.dt + self.t0
    }

    /// Generator `A = -i c dt H_g(t)` of a stage.
    pub fn generator(&self, sys: &CompositeSystem, stage: usize, step: usize) -> CMat {
        let st = &self.stages[stage];
        let h = self.groups[st.group].hamiltonian(sys, self.stage_time(stage, step));
        h * (-I * st.coeff * self.dt)
    }

    pub fn stage_unitary(&self, sys: &CompositeSystem, stage: usize, step: usize) -> CMat {
        match &self.stages[stage].exp {
            Some(e) => e.forward.clone(),
            None => expm(&self.generator(sys, stage, step)),
        }
    }

    pub fn stage_inverse(&self, sys: &CompositeSystem, stage: usize, step: usize) -> CMat {
        match &self.stages[stage].exp {
            Some(e) => e.inverse.clone(),
            None => expm(&-self.generator(sys, stage, step)),
        }
    }

    /// Indices into `stages` applied during `step`.
    pub fn step_stages(&self, step: usize) -> Range<usize> {
        self.cycle[step % self.cycle.len()].clone()
    }

    /// Apply one full step to a batch.
    pub fn apply_step(&self, sys: &CompositeSystem, step: usize, psi: &mut StateBatch) {
        for k in self.step_stages(step) {
            let st = &self.stages[k];
            match &st.exp {
                Some(e) => psi.apply(&self.groups[st.group].layout, &e.forward),
                None => psi.apply(&self.groups[st.group].layout, &self.stage_unitary(sys, k, step)),
            }
        }
    }

    /// Propagate a batch from `t0` to `tg` in place.
    pub fn evolve(&self, sys: &CompositeSystem, psi: &mut StateBatch) -> Result<()> {
        for step in 0..self.astep {
            self.apply_step(sys, step, psi);
            if !psi.all_finite() {
                return Err(Error::NonFinite { step });
            }
        }
        Ok(())
    }

    pub fn flops_per_step(&self, ncols: usize) -> f64 {
        let total: f64 = self.stage_flops.iter().sum();
        total / self.cycle.len() as f64 * ncols as f64
    }
}
