//! Weighted stability problems `K a = λ W a`, their Morse index and nullity,
//! and Sylvester-invariance checks.
//!
//! Lattice operators are materialized into a sparse matrix by probing with
//! colored unit vectors: every operator here couples a site only to sites
//! within one step per axis, so sites whose coordinates agree modulo 3 never
//! share a row.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::field::{GaugeField, LatticeForm};
use crate::functional::{Background, FormKind, PExponent};
use crate::lattice::Domain;

/// Positive weight per site.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    domain: Arc<Domain>,
    w: Vec<f64>,
}

impl WeightField {
    pub fn new(domain: &Arc<Domain>, w: Vec<f64>) -> Result<Self> {
        check_dim(domain.site_count(), w.len())?;
        if let Some((site, &value)) = w.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::NonPositiveWeight { site, value });
        }
        Ok(Self { domain: domain.clone(), w })
    }

    pub fn constant(domain: &Arc<Domain>, c: f64) -> Result<Self> {
        Self::new(domain, vec![c; domain.site_count()])
    }

    pub fn from_fn(domain: &Arc<Domain>, f: impl Fn([f64; 4]) -> f64) -> Result<Self> {
        Self::new(domain, (0..domain.site_count()).map(|s| f(domain.coord(s))).collect())
    }

    /// Independent uniform values in `[lo, hi]`.
    pub fn random(domain: &Arc<Domain>, lo: f64, hi: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::new(domain, (0..domain.site_count()).map(|_| rng.random_range(lo..=hi)).collect())
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }
}

/// Compressed sparse rows, symmetric by construction of the callers.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSym {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut offsets = vec![0];
        let (mut cols, mut vals) = (Vec::new(), Vec::new());
        for i in 0..n {
            for j in 0..n {
                if m[(i, j)] != 0.0 {
                    cols.push(j);
                    vals.push(m[(i, j)]);
                }
            }
            offsets.push(cols.len());
        }
        Self { n, offsets, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// Entry lookup; columns are sorted within each row.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.offsets[i]..self.offsets[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `max |A_ij - B_ij|` over the union of both patterns.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - other.get(i, j)).abs());
            }
            for (j, v) in other.row(i) {
                worst = worst.max((v - self.get(i, j)).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// `max |S_ij - S_ji|` relative to `max |S_ij|`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                scale = scale.max(v.abs());
                let t = self.get(j, i);
                worst = worst.max((v - t).abs());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mass {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl Mass {
    fn dim(&self) -> usize {
        match self {
            Mass::Diagonal(d) => d.len(),
            Mass::Dense(m) => m.nrows(),
        }
    }

    fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        match self {
            Mass::Diagonal(d) => y.iter_mut().zip(d).zip(x).for_each(|((y, d), x)| *y = d * x),
            Mass::Dense(m) => {
                let r = m * DVector::from_column_slice(x);
                y.copy_from_slice(r.as_slice());
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Mass::Diagonal(d) => {
                if d.iter().all(|v| *v > 0.0 && v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::MassNotPositive)
                }
            }
            Mass::Dense(m) => {
                if m.nrows() != m.ncols() {
                    return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
                }
                if symmetry_defect(m) > 1e-10 || m.clone().cholesky().is_none() {
                    return Err(Error::MassNotPositive);
                }
                Ok(())
            }
        }
    }
}

fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).amax() / scale
}

/// Dofs are the Lie-algebra components of the 1-form at interior sites,
/// site-major then direction then algebra index.
#[derive(Debug, Clone, PartialEq)]
pub struct DofLayout {
    pub domain: Arc<Domain>,
    pub sites: Vec<usize>,
    pub dim: usize,
}

impl DofLayout {
    pub fn interior(domain: &Arc<Domain>, dim: usize) -> Self {
        Self { domain: domain.clone(), sites: domain.interior_sites(), dim }
    }

    #[inline]
    pub fn width(&self) -> usize {
        4 * self.dim
    }

    pub fn len(&self) -> usize {
        self.sites.len() * self.width()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn scatter(&self, x: &[f64]) -> LatticeForm {
        let mut f = LatticeForm::zeros(&self.domain, 1, self.dim).unwrap();
        let w = self.width();
        for (k, &s) in self.sites.iter().enumerate() {
            f.site_mut(s).copy_from_slice(&x[k * w..(k + 1) * w]);
        }
        f
    }

    pub fn gather(&self, f: &LatticeForm) -> Vec<f64> {
        let w = self.width();
        let mut out = vec![0.0; self.len()];
        for (k, &s) in self.sites.iter().enumerate() {
            out[k * w..(k + 1) * w].copy_from_slice(f.site(s));
        }
        out
    }
}

/// `xᵀ S x = form(x)` and `xᵀ M x = ∫ |x|² w`.
#[derive(Debug, Clone)]
pub struct StabilityProblem {
    pub stiffness: SparseSym,
    pub mass: Mass,
    pub layout: Option<DofLayout>,
}

impl StabilityProblem {
    pub fn new(stiffness: SparseSym, mass: Mass) -> Result<Self> {
        check_dim(stiffness.dim(), mass.dim())?;
        mass.validate()?;
        let defect = stiffness.symmetry_defect();
        if defect > 1e-10 {
            return Err(Error::OutOfRange { name: "stiffness symmetry defect", value: defect, reason: "must be below 1e-10".into() });
        }
        Ok(Self { stiffness, mass, layout: None })
    }

    pub fn from_dense(stiffness: &DMatrix<f64>, mass: Mass) -> Result<Self> {
        Self::new(SparseSym::from_dense(stiffness), mass)
    }

    pub fn dofs(&self) -> usize {
        self.stiffness.dim()
    }

    /// Same stiffness with another mass.
    pub fn with_mass(&self, mass: Mass) -> Result<Self> {
        check_dim(self.dofs(), mass.dim())?;
        mass.validate()?;
        Ok(Self { stiffness: self.stiffness.clone(), mass, layout: self.layout.clone() })
    }

    /// Same stiffness with a diagonal mass `h⁴ w(s)` from a lattice weight.
    pub fn reweighted(&self, weight: &WeightField) -> Result<Self> {
        let layout = self.layout.as_ref().ok_or(Error::DomainMismatch)?;
        if **weight.domain() != *layout.domain {
            return Err(Error::DomainMismatch);
        }
        self.with_mass(lattice_mass(layout, weight))
    }

    pub fn stiffness_form(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; x.len()];
        self.stiffness.mul_vec(x, &mut y);
        crate::algebra::lie::dot(x, &y)
    }

    pub fn mass_form(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; x.len()];
        self.mass.mul_vec(x, &mut y);
        crate::algebra::lie::dot(x, &y)
    }
}

fn lattice_mass(layout: &DofLayout, weight: &WeightField) -> Mass {
    let cell = layout.domain.cell();
    let w = layout.width();
    let mut d = Vec::with_capacity(layout.len());
    for &s in &layout.sites {
        d.extend(std::iter::repeat_n(cell * weight.values()[s], w));
    }
    Mass::Diagonal(d)
}

/// Smallest modulus `m >= 3` usable for coloring along one axis.
fn color_modulus(dom: &Domain) -> usize {
    if !dom.is_periodic() {
        return 3;
    }
    (3..=dom.n()).find(|m| dom.n() % m == 0).unwrap()
}

fn neighbours_within_one(dom: &Domain, s: usize) -> Vec<usize> {
    let mut out = vec![s];
    for mu in 0..4 {
        let mut next = Vec::with_capacity(out.len() * 3);
        for &t in &out {
            next.push(t);
            if let Some(u) = dom.shift(t, mu, 1) {
                next.push(u);
            }
            if let Some(u) = dom.shift(t, mu, -1) {
                next.push(u);
            }
        }
        out = next;
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Materialize a lattice operator `apply` (1-forms to 1-forms, pairing
/// `h⁴ Σ`) on the interior dofs.
pub fn materialize(layout: &DofLayout, apply: impl Fn(&LatticeForm) -> Result<LatticeForm>) -> Result<SparseSym> {
    let dom = &layout.domain;
    let m = color_modulus(dom);
    let color = |s: usize| dom.multi_index(s).iter().fold(0, |c, i| c * m + i % m);
    let ncolors = m.pow(4);
    let w = layout.width();
    let mut slot = vec![usize::MAX; dom.site_count()];
    for (k, &s) in layout.sites.iter().enumerate() {
        slot[s] = k;
    }
    // for every dof site, its dof neighbours keyed by color
    let neigh: Vec<Vec<(usize, usize)>> = layout
        .sites
        .iter()
        .map(|&s| {
            neighbours_within_one(dom, s)
                .into_iter()
                .filter(|&t| slot[t] != usize::MAX)
                .map(|t| (color(t), slot[t]))
                .collect()
        })
        .collect();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); layout.len()];
    let cell = dom.cell();
    let mut by_color: Vec<Vec<usize>> = vec![Vec::new(); ncolors];
    for &s in &layout.sites {
        by_color[color(s)].push(s);
    }
    for (c, members) in by_color.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        for comp in 0..w {
            let mut probe = LatticeForm::zeros(dom, 1, layout.dim)?;
            for &s in members {
                probe.site_mut(s)[comp] = 1.0;
            }
            let out = apply(&probe)?;
            for (k, &s) in layout.sites.iter().enumerate() {
                let Some(&(_, col_site)) = neigh[k].iter().find(|(cc, _)| *cc == c) else {
                    continue;
                };
                let vals = out.site(s);
                for (j, &v) in vals.iter().enumerate() {
                    if v != 0.0 {
                        rows[k * w + j].push((col_site * w + comp, cell * v));
                    }
                }
            }
        }
    }
    let mut offsets = vec![0];
    let (mut cols, mut vals) = (Vec::new(), Vec::new());
    for mut r in rows {
        r.sort_unstable_by_key(|e| e.0);
        for (c, v) in r {
            cols.push(c);
            vals.push(v);
        }
        offsets.push(cols.len());
    }
    Ok(SparseSym { n: layout.len(), offsets, cols, vals })
}

/// Weak-form assembly of the chosen quadratic form against the weight pairing.
pub fn assemble(a: &GaugeField, p: PExponent, weight: &WeightField, form: FormKind) -> Result<StabilityProblem> {
    if **weight.domain() != **a.domain() {
        return Err(Error::DomainMismatch);
    }
    let bg = Background::new(a, p);
    assemble_background(&bg, weight, form)
}

pub fn assemble_background(bg: &Background, weight: &WeightField, form: FormKind) -> Result<StabilityProblem> {
    let layout = DofLayout::interior(bg.domain(), bg.field.algebra().dim());
    let stiffness = assemble_local(bg, &layout, form);
    let mut problem = StabilityProblem::new(stiffness, lattice_mass(&layout, weight))?;
    problem.layout = Some(layout);
    Ok(problem)
}

/// Sites that can share a row with `s`: offsets `0`, `±e_μ` and `e_μ - e_ν`.
fn coupling_sites(dom: &Domain, s: usize) -> Vec<usize> {
    let mut out = vec![s];
    for mu in 0..4 {
        for step in [1, -1] {
            if let Some(t) = dom.shift(s, mu, step) {
                out.push(t);
                for nu in 0..4 {
                    if nu != mu {
                        if let Some(u) = dom.shift(t, nu, -step) {
                            out.push(u);
                        }
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Per-kind coefficients: derivative term, whether it carries the ρ kernel,
/// gauge-fixing term (`None`: absent; `Some(true)`: ρ-weighted), curvature term.
fn form_coefficients(kind: FormKind, p: f64) -> (f64, bool, Option<bool>, f64) {
    match kind {
        FormKind::Q => (p, true, None, p),
        FormKind::QOverP => (1.0, true, None, 1.0),
        FormKind::QFrak => (p, true, Some(true), p),
        FormKind::QFrakNormalized => (1.0, true, Some(true), 1.0),
        FormKind::QCal => (1.0, false, Some(false), 1.0),
    }
}

/// Element-by-element assembly: each inside site contributes
/// `Jᵀ H J` for the local maps `a ↦ d_A a(s)` and `a ↦ d_A^* a(s)` plus the
/// pointwise curvature block.  Agrees with [`materialize`] applied to
/// `Background::apply`.
pub fn assemble_local(bg: &Background, layout: &DofLayout, kind: FormKind) -> SparseSym {
    let dom = &layout.domain;
    let alg = bg.field.algebra();
    let dim = alg.dim();
    let w = layout.width();
    let p = bg.p.value();
    let (cu, weighted, gauge, cc) = form_coefficients(kind, p);
    let inv_h = 1.0 / dom.h();
    let cell = dom.cell();
    let masks2 = crate::algebra::forms::multi_indices(2);

    let mut slot = vec![usize::MAX; dom.site_count()];
    for (k, &s) in layout.sites.iter().enumerate() {
        slot[s] = k;
    }
    let neigh: Vec<Vec<usize>> = layout.sites.iter().map(|&s| coupling_sites(dom, s)).collect();
    let mut blocks: Vec<Vec<f64>> = neigh.iter().map(|n| vec![0.0; n.len() * w * w]).collect();
    let mut add = |row_site: usize, col_site: usize, local: &DMatrix<f64>, r0: usize, c0: usize| {
        let (k, l) = (slot[row_site], slot[col_site]);
        if k == usize::MAX || l == usize::MAX {
            return;
        }
        let j = neigh[k].iter().position(|&t| t == col_site).expect("coupling outside stencil");
        let b = &mut blocks[k][j * w * w..(j + 1) * w * w];
        for r in 0..w {
            for c in 0..w {
                b[r * w + c] += local[(r0 + r, c0 + c)];
            }
        }
    };

    let mut ju = DMatrix::<f64>::zeros(6 * dim, 5 * w);
    let mut jv = DMatrix::<f64>::zeros(dim, 5 * w);
    let mut hu = DMatrix::<f64>::zeros(6 * dim, 6 * dim);
    let mut cb = DMatrix::<f64>::zeros(w, w);
    for s in 0..dom.site_count() {
        if !dom.is_inside(s) {
            continue;
        }
        let fwd: Vec<Option<usize>> = std::iter::once(Some(s)).chain((0..4).map(|mu| dom.shift(s, mu, 1))).collect();
        let bwd: Vec<Option<usize>> = std::iter::once(Some(s)).chain((0..4).map(|mu| dom.shift(s, mu, -1))).collect();
        let has_dof = |v: &[Option<usize>]| v.iter().any(|t| t.is_some_and(|t| slot[t] != usize::MAX));
        let av = bg.field.form().site(s);
        let fs = bg.curvature.site(s);
        let rho = bg.rho[s];

        if has_dof(&fwd) {
            ju.fill(0.0);
            for (i, &m) in masks2.iter().enumerate() {
                let mu = m.trailing_zeros() as usize;
                let nu = 7 - m.leading_zeros() as usize;
                for x in 0..dim {
                    let r = i * dim + x;
                    ju[(r, (1 + mu) * w + nu * dim + x)] += inv_h;
                    ju[(r, nu * dim + x)] -= inv_h;
                    ju[(r, (1 + nu) * w + mu * dim + x)] -= inv_h;
                    ju[(r, mu * dim + x)] += inv_h;
                }
                for &(a, b, c, f) in alg.structure_constants() {
                    ju[(i * dim + c, nu * dim + b)] += f * av[mu * dim + a];
                    ju[(i * dim + c, mu * dim + b)] -= f * av[nu * dim + a];
                }
            }
            hu.fill(0.0);
            let t = bg.curvature.norms()[s].powi(2);
            let (scale, k) = if weighted { (cu * rho, (p - 2.0) / (1.0 + t)) } else { (cu, 0.0) };
            for r in 0..6 * dim {
                for c in 0..6 * dim {
                    hu[(r, c)] = scale * (k * fs[r] * fs[c] + if r == c { 1.0 } else { 0.0 });
                }
            }
            let local = ju.transpose() * &hu * &ju * cell;
            for (bi, ti) in fwd.iter().enumerate() {
                for (bj, tj) in fwd.iter().enumerate() {
                    if let (Some(ti), Some(tj)) = (ti, tj) {
                        add(*ti, *tj, &local, bi * w, bj * w);
                    }
                }
            }
        }

        if let Some(weighted_gauge) = gauge {
            if has_dof(&bwd) {
                jv.fill(0.0);
                for mu in 0..4 {
                    for x in 0..dim {
                        jv[(x, mu * dim + x)] -= inv_h;
                        jv[(x, (1 + mu) * w + mu * dim + x)] += inv_h;
                    }
                    for &(a, b, c, f) in alg.structure_constants() {
                        jv[(c, mu * dim + b)] -= f * av[mu * dim + a];
                    }
                }
                let g = if weighted_gauge { rho } else { 1.0 };
                let local = jv.transpose() * &jv * (g * cell);
                for (bi, ti) in bwd.iter().enumerate() {
                    for (bj, tj) in bwd.iter().enumerate() {
                        if let (Some(ti), Some(tj)) = (ti, tj) {
                            add(*ti, *tj, &local, bi * w, bj * w);
                        }
                    }
                }
            }
        }

        if slot[s] != usize::MAX {
            // (C a)_ν = Σ_μ ρ [F_μν, a_μ]
            cb.fill(0.0);
            for (i, &m) in masks2.iter().enumerate() {
                let mu = m.trailing_zeros() as usize;
                let nu = 7 - m.leading_zeros() as usize;
                for &(a, b, c, f) in alg.structure_constants() {
                    let v = cc * rho * f * fs[i * dim + a] * cell;
                    cb[(nu * dim + c, mu * dim + b)] += v;
                    cb[(mu * dim + c, nu * dim + b)] -= v;
                }
            }
            add(s, s, &cb, 0, 0);
        }
    }

    let mut offsets = vec![0];
    let (mut cols, mut vals) = (Vec::new(), Vec::new());
    for (k, n) in neigh.iter().enumerate() {
        let mut order: Vec<usize> = (0..n.len()).collect();
        order.sort_by_key(|&j| slot[n[j]]);
        for r in 0..w {
            for &j in &order {
                let l = slot[n[j]];
                if l == usize::MAX {
                    continue;
                }
                for c in 0..w {
                    let v = blocks[k][j * w * w + r * w + c];
                    if v != 0.0 {
                        cols.push(l * w + c);
                        vals.push(v);
                    }
                }
            }
            offsets.push(cols.len());
        }
    }
    SparseSym { n: layout.len(), offsets, cols, vals }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOptions {
    /// Number of lowest eigenvalues to report.
    pub k: usize,
    /// Zero threshold; `None` uses `1e-7 max |λ|` over the computed values.
    pub tol_zero: Option<f64>,
    pub dense_threshold: usize,
    pub max_iterations: usize,
    /// Relative residual tolerance of the iterative solver.
    pub residual_tol: f64,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { k: 20, tol_zero: None, dense_threshold: 6000, max_iterations: 500, residual_tol: 1e-9, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceSweep {
    pub tol_zero: f64,
    pub index: usize,
    pub nullity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub method: String,
    pub dofs: usize,
    pub iterations: usize,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub eigenvalues: Vec<f64>,
    pub index: usize,
    pub nullity: usize,
    pub extended_index: usize,
    pub tol_zero: f64,
    /// Counts at `tol_zero × 10` and `tol_zero / 10`.
    pub sweep: Vec<ToleranceSweep>,
    /// Every computed eigenvalue was at or below `tol_zero`, so the true
    /// extended index may be larger than reported.
    pub index_saturated: bool,
    pub solver: SolverInfo,
}

pub fn count(eigs: &[f64], tol: f64) -> (usize, usize) {
    let index = eigs.iter().filter(|l| **l < -tol).count();
    let nullity = eigs.iter().filter(|l| l.abs() <= tol).count();
    (index, nullity)
}

fn report(all: Vec<f64>, k: usize, tol_zero: Option<f64>, full: bool, solver: SolverInfo) -> SpectralReport {
    let kk = k.min(all.len());
    let shown = all[..kk].to_vec();
    let tol = tol_zero.unwrap_or_else(|| 1e-7 * shown.iter().fold(0.0f64, |m, l| m.max(l.abs())));
    let counted: &[f64] = if full { &all } else { &shown };
    let (index, nullity) = count(counted, tol);
    let sweep = [tol * 10.0, tol / 10.0]
        .iter()
        .map(|&t| {
            let (index, nullity) = count(counted, t);
            ToleranceSweep { tol_zero: t, index, nullity }
        })
        .collect();
    let index_saturated = !full && counted.iter().all(|l| *l <= tol);
    SpectralReport { eigenvalues: shown, index, nullity, extended_index: index + nullity, tol_zero: tol, sweep, index_saturated, solver }
}

/// Lowest generalized eigenvalues of `S x = λ M x`.
pub fn solve(problem: &StabilityProblem, opts: &SolveOptions) -> Result<SpectralReport> {
    let n = problem.dofs();
    if opts.k > n {
        return Err(Error::OutOfRange { name: "k", value: opts.k as f64, reason: format!("exceeds dof count {n}") });
    }
    if n <= opts.dense_threshold {
        let eigs = dense_eigenvalues(problem)?;
        let info = SolverInfo { method: "dense".into(), dofs: n, iterations: 0, max_residual: 0.0 };
        Ok(report(eigs, opts.k, opts.tol_zero, true, info))
    } else {
        let (eigs, iterations, max_residual) = lobpcg(problem, opts.k, opts)?;
        let info = SolverInfo { method: "lobpcg".into(), dofs: n, iterations, max_residual };
        Ok(report(eigs, opts.k, opts.tol_zero, false, info))
    }
}

/// All generalized eigenvalues, ascending, by reduction to a standard
/// symmetric problem.
pub fn dense_eigenvalues(problem: &StabilityProblem) -> Result<Vec<f64>> {
    let s = problem.stiffness.to_dense();
    let n = s.nrows();
    let c = match &problem.mass {
        Mass::Diagonal(d) => {
            let r: Vec<f64> = d.iter().map(|v| 1.0 / v.sqrt()).collect();
            DMatrix::from_fn(n, n, |i, j| s[(i, j)] * r[i] * r[j])
        }
        Mass::Dense(m) => {
            let l = m.clone().cholesky().ok_or(Error::MassNotPositive)?.l();
            let y = l.solve_lower_triangular(&s).ok_or(Error::MassNotPositive)?;
            let c = l.solve_lower_triangular(&y.transpose()).ok_or(Error::MassNotPositive)?;
            (&c + c.transpose()) * 0.5
        }
    };
    let fm = faer::Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let mut eigs = fm
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|_| Error::SolverNonConvergence { iterations: 0, residuals: vec![] })?;
    eigs.sort_by(f64::total_cmp);
    Ok(eigs)
}

/// Orthonormalize the columns of `s` in the M inner product, dropping
/// numerically dependent directions.  Returns the basis with its M-image.
fn m_orthonormalize(problem: &StabilityProblem, s: &DMatrix<f64>, ms: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let g = s.transpose() * ms;
    let g = (&g + g.transpose()) * 0.5;
    let eig = SymmetricEigen::new(g);
    let top = eig.eigenvalues.amax();
    let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > 1e-12 * top).collect();
    let mut c = DMatrix::zeros(s.ncols(), keep.len());
    for (col, &i) in keep.iter().enumerate() {
        let sc = 1.0 / eig.eigenvalues[i].sqrt();
        c.set_column(col, &(eig.eigenvectors.column(i) * sc));
    }
    let _ = problem;
    (s * &c, ms * &c)
}

fn apply_block(problem: &StabilityProblem, x: &DMatrix<f64>, mass: bool) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    let mut y = vec![0.0; x.nrows()];
    for j in 0..x.ncols() {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        if mass {
            problem.mass.mul_vec(&col, &mut y);
        } else {
            problem.stiffness.mul_vec(&col, &mut y);
        }
        out.set_column(j, &DVector::from_column_slice(&y));
    }
    out
}

/// Block LOBPCG for the `k` lowest eigenpairs with a Jacobi preconditioner.
/// Returns the eigenvalues, iteration count and worst relative residual.
fn lobpcg(problem: &StabilityProblem, k: usize, opts: &SolveOptions) -> Result<(Vec<f64>, usize, f64)> {
    let n = problem.dofs();
    let m = (k + k.div_ceil(4).max(2)).min(n);
    let diag = problem.stiffness.diagonal();
    let mdiag: Vec<f64> = match &problem.mass {
        Mass::Diagonal(d) => d.clone(),
        Mass::Dense(mm) => mm.diagonal().iter().copied().collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let x0 = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
    let (mut x, mut mx) = m_orthonormalize(problem, &x0, &apply_block(problem, &x0, true));
    let mut ax = apply_block(problem, &x, false);
    let mut p: Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> = None;
    let mut lambda = DVector::zeros(m);
    let mut scale: f64 = 0.0;
    let mut residuals = vec![f64::INFINITY; k];
    for it in 0..opts.max_iterations {
        // Rayleigh-Ritz on the current block
        let g = x.transpose() * &ax;
        let eig = SymmetricEigen::new((&g + g.transpose()) * 0.5);
        let order = sorted_order(&eig.eigenvalues);
        let c = DMatrix::from_fn(x.ncols(), m.min(x.ncols()), |i, j| eig.eigenvectors[(i, order[j])]);
        x = &x * &c;
        ax = &ax * &c;
        mx = &mx * &c;
        lambda = DVector::from_fn(c.ncols(), |j, _| eig.eigenvalues[order[j]]);
        scale = scale.max(lambda.amax());
        let mut r = &ax - &mx * DMatrix::from_diagonal(&lambda);
        residuals = (0..k)
            .map(|j| r.column(j).norm() / (scale.max(f64::MIN_POSITIVE) * mx.column(j).norm()))
            .collect();
        if residuals.iter().all(|v| *v < opts.residual_tol) {
            let mut out: Vec<f64> = lambda.iter().copied().take(k).collect();
            out.sort_by(f64::total_cmp);
            return Ok((out, it, residuals.iter().copied().fold(0.0, f64::max)));
        }
        for j in 0..r.ncols() {
            for i in 0..n {
                let shifted = diag[i] - lambda[j].min(0.0) * mdiag[i];
                r[(i, j)] /= shifted.abs().max(1e-300);
            }
        }
        // keep the correction M-orthogonal to the current block
        let mut w = r;
        let mw = apply_block(problem, &w, true);
        w -= &x * (mx.transpose() * &w);
        let _ = mw;
        let mut basis = DMatrix::zeros(n, 0);
        basis = hcat(&basis, &x);
        basis = hcat(&basis, &w);
        if let Some((pp, _, _)) = &p {
            basis = hcat(&basis, pp);
        }
        // unit columns first: W and P shrink with the residual
        for mut col in basis.column_iter_mut() {
            let nrm = col.norm();
            if nrm > 0.0 {
                col /= nrm;
            }
        }
        let mb = apply_block(problem, &basis, true);
        let (q, _) = m_orthonormalize(problem, &basis, &mb);
        // a second pass restores orthogonality lost to the Gram squaring
        let mq = apply_block(problem, &q, true);
        let (q, mq) = m_orthonormalize(problem, &q, &mq);
        let aq = apply_block(problem, &q, false);
        let g = q.transpose() * &aq;
        let eig = SymmetricEigen::new((&g + g.transpose()) * 0.5);
        scale = scale.max(eig.eigenvalues.amax());
        let order = sorted_order(&eig.eigenvalues);
        let take = m.min(q.ncols());
        let c = DMatrix::from_fn(q.ncols(), take, |i, j| eig.eigenvectors[(i, order[j])]);
        let xn = &q * &c;
        let axn = &aq * &c;
        let mxn = &mq * &c;
        let proj = mx.transpose() * &xn;
        let pn = &xn - &x * &proj;
        let apn = &axn - &ax * &proj;
        let mpn = &mxn - &mx * &proj;
        p = Some((pn, apn, mpn));
        x = xn;
        ax = axn;
        mx = mxn;
    }
    let _ = lambda;
    Err(Error::SolverNonConvergence { iterations: opts.max_iterations, residuals })
}

fn sorted_order(v: &DVector<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    idx
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(b.nrows(), a.ncols() + b.ncols());
    if a.ncols() > 0 {
        out.columns_mut(0, a.ncols()).copy_from(a);
    }
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SylvesterReport {
    pub index: usize,
    pub nullity: usize,
    pub per_weight: Vec<SpectralReport>,
}

/// Solve the same stiffness against every mass and require identical
/// (index, nullity).
pub fn sylvester_invariance(problem: &StabilityProblem, masses: &[Mass], opts: &SolveOptions) -> Result<SylvesterReport> {
    if masses.len() < 2 {
        return Err(Error::OutOfRange { name: "weights", value: masses.len() as f64, reason: "need at least 2".into() });
    }
    let mut per_weight = Vec::with_capacity(masses.len());
    for m in masses {
        per_weight.push(solve(&problem.with_mass(m.clone())?, opts)?);
    }
    let first = (per_weight[0].index, per_weight[0].nullity);
    let diffs: Vec<String> = per_weight
        .iter()
        .enumerate()
        .filter(|(_, r)| (r.index, r.nullity) != first)
        .map(|(i, r)| format!("weight {i}: (index, nullity) = ({}, {}) vs ({}, {})", r.index, r.nullity, first.0, first.1))
        .collect();
    if !diffs.is_empty() {
        return Err(Error::SylvesterMismatch(diffs.join("; ")));
    }
    Ok(SylvesterReport { index: first.0, nullity: first.1, per_weight })
}

/// Lattice convenience: one stiffness, several site weights.
pub fn sylvester_invariance_lattice(
    problem: &StabilityProblem,
    weights: &[WeightField],
    opts: &SolveOptions,
) -> Result<SylvesterReport> {
    let layout = problem.layout.as_ref().ok_or(Error::DomainMismatch)?;
    let masses: Vec<Mass> = weights.iter().map(|w| lattice_mass(layout, w)).collect();
    sylvester_invariance(problem, &masses, opts)
}

/// Worst case of `|⟨F, [a ∧ a]⟩| / (|F| |a|²)` for an algebra with inner
/// product `-c tr`: `|[x, y]| ≤ √(2/c) |x||y|` and the 2-form pairing adds
/// `2 √(3/8)`.
pub fn bracket_pairing_constant(scale: f64) -> f64 {
    (3.0 / scale).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub lambda_min: f64,
    /// `sup ρ|F| / w` over inside sites.
    pub mu0_fit: f64,
    /// `λ_min ≥ -c μ₀` with the algebraic constant c of the bracket pairing.
    pub bound: f64,
    pub passes: bool,
}

pub fn spectrum_lower_bound_check(
    a: &GaugeField,
    p: PExponent,
    weight: &WeightField,
    form: FormKind,
    opts: &SolveOptions,
) -> Result<LowerBoundReport> {
    let bg = Background::new(a, p);
    let dom = bg.domain();
    let mut mu0: f64 = 0.0;
    for s in 0..dom.site_count() {
        if dom.is_inside(s) {
            mu0 = mu0.max(bg.rho[s] * bg.curvature.norms()[s] / weight.values()[s]);
        }
    }
    let problem = assemble_background(&bg, weight, form)?;
    let rep = solve(&problem, &SolveOptions { k: opts.k.min(problem.dofs()).max(1), ..opts.clone() })?;
    let lambda_min = rep.eigenvalues[0];
    let bound = -bracket_pairing_constant(a.algebra().scale()) * mu0;
    Ok(LowerBoundReport { lambda_min, mu0_fit: mu0, bound, passes: lambda_min >= bound - 1e-12 * bound.abs().max(1.0) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Algebra;

    fn diag_problem(s: &[f64]) -> StabilityProblem {
        StabilityProblem::from_dense(&DMatrix::from_diagonal(&DVector::from_row_slice(s)), Mass::Diagonal(vec![1.0; s.len()]))
            .unwrap()
    }

    #[test]
    fn diagonal_examples() {
        let r = solve(&diag_problem(&[-1.0, 2.0, 3.0]), &SolveOptions { k: 3, ..Default::default() }).unwrap();
        assert_eq!((r.index, r.nullity, r.extended_index), (1, 0, 1));
        assert_eq!(r.eigenvalues, vec![-1.0, 2.0, 3.0]);
        let id = diag_problem(&[1.0; 5]);
        let masses = vec![Mass::Diagonal(vec![1.0; 5]), Mass::Diagonal(vec![0.1, 2.0, 3.0, 4.0, 5.0]), Mass::Diagonal(vec![7.0; 5])];
        let rep = sylvester_invariance(&id, &masses, &SolveOptions { k: 5, ..Default::default() }).unwrap();
        assert_eq!((rep.index, rep.nullity), (0, 0));
        let neg = diag_problem(&[-4.0, 1.0, 2.0]);
        let masses = vec![Mass::Diagonal(vec![1.0; 3]), Mass::Diagonal(vec![1e-3, 5.0, 0.2]), Mass::Diagonal(vec![9.0, 9.0, 1.0])];
        let rep = sylvester_invariance(&neg, &masses, &SolveOptions { k: 3, ..Default::default() }).unwrap();
        assert_eq!(rep.index, 1);
        assert!(solve(&neg, &SolveOptions { k: 4, ..Default::default() }).is_err());
    }

    #[test]
    fn invalid_inputs() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(StabilityProblem::from_dense(&s, Mass::Diagonal(vec![1.0, 1.0])).is_err());
        let s = DMatrix::identity(2, 2);
        assert!(matches!(StabilityProblem::from_dense(&s, Mass::Diagonal(vec![1.0, 0.0])), Err(Error::MassNotPositive)));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(StabilityProblem::from_dense(&s, Mass::Dense(m)), Err(Error::MassNotPositive)));
        let dom = Arc::new(Domain::torus(4, 1.0).unwrap());
        assert!(matches!(WeightField::constant(&dom, 0.0), Err(Error::NonPositiveWeight { .. })));
    }

    #[test]
    fn lobpcg_matches_dense() {
        let n = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // sparse-ish symmetric: 1-D Laplacian plus random diagonal with a few negatives
        let mut s = DMatrix::zeros(n, n);
        for i in 0..n {
            s[(i, i)] = 2.0 + rng.random_range(-0.5..0.5) - if i % 50 == 0 { 3.0 } else { 0.0 };
            if i + 1 < n {
                s[(i, i + 1)] = -1.0;
                s[(i + 1, i)] = -1.0;
            }
        }
        let mass = Mass::Diagonal((0..n).map(|_| rng.random_range(0.5..2.0)).collect());
        let prob = StabilityProblem::from_dense(&s, mass).unwrap();
        let dense = dense_eigenvalues(&prob).unwrap();
        let opts = SolveOptions { k: 8, dense_threshold: 10, ..Default::default() };
        let rep = solve(&prob, &opts).unwrap();
        assert_eq!(rep.solver.method, "lobpcg");
        for (a, b) in rep.eigenvalues.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-8, "{a} {b}");
        }
        let negatives = dense.iter().filter(|l| **l < -rep.tol_zero).count();
        assert_eq!(rep.index, negatives.min(8));
        assert_eq!(rep.index_saturated, negatives >= 8);
    }

    #[test]
    fn flat_torus_harmonic_forms() {
        let alg = Arc::new(Algebra::su2());
        let dom = Arc::new(Domain::torus(4, 0.5).unwrap());
        let a = GaugeField::zero(&alg, &dom);
        let w = WeightField::constant(&dom, 1.0).unwrap();
        let prob = assemble(&a, PExponent::two(), &w, FormKind::QCal).unwrap();
        assert_eq!(prob.dofs(), 12 * 256);
        let rep = solve(&prob, &SolveOptions { k: 20, dense_threshold: 0, residual_tol: 1e-8, ..Default::default() }).unwrap();
        assert_eq!(rep.index, 0);
        assert_eq!(rep.nullity, 12);
        // constant 1-forms are exactly harmonic
        let layout = prob.layout.as_ref().unwrap();
        let c = LatticeForm::from_fn(&dom, 1, 3, |_, _, o| o[5] = 1.0).unwrap();
        assert!(prob.stiffness_form(&layout.gather(&c)).abs() < 1e-12);
    }

    #[test]
    fn assembly_reproduces_the_forms() {
        let alg = Arc::new(Algebra::su2());
        let dom = Arc::new(Domain::ball(0.9, 0.25).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = GaugeField::from_fn(&alg, &dom, |_, x, o| {
            for (i, v) in o.iter_mut().enumerate() {
                *v = (x[i % 4] * (i as f64 + 1.0)).sin() * 0.8;
            }
        })
        .unwrap();
        let w = WeightField::random(&dom, 0.5, 2.0, 4).unwrap();
        let p = PExponent::new(2.4).unwrap();
        let bg = Background::new(&a, p);
        for kind in [FormKind::Q, FormKind::QFrak, FormKind::QCal] {
            let prob = assemble(&a, p, &w, kind).unwrap();
            let layout = prob.layout.clone().unwrap();
            assert!(prob.stiffness.symmetry_defect() < 1e-12);
            for _ in 0..5 {
                let x: Vec<f64> = (0..prob.dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let form = layout.scatter(&x);
                let want = bg.eval(kind, &form).unwrap();
                let got = prob.stiffness_form(&x);
                assert!((want - got).abs() < 1e-10 * want.abs(), "{kind:?}: {want} {got}");
                let mass: f64 = layout
                    .sites
                    .iter()
                    .map(|&s| w.values()[s] * crate::algebra::lie::dot(form.site(s), form.site(s)))
                    .sum::<f64>()
                    * dom.cell();
                assert!((prob.mass_form(&x) - mass).abs() < 1e-12 * mass);
            }
        }
    }

    #[test]
    fn local_assembly_matches_probing() {
        let alg = Arc::new(Algebra::su2());
        let dom = Arc::new(Domain::torus(6, 0.4).unwrap());
        let a = GaugeField::from_fn(&alg, &dom, |_, x, o| {
            for (i, v) in o.iter_mut().enumerate() {
                *v = (x[(i + 1) % 4] * (i as f64 + 0.5)).cos() * 0.6;
            }
        })
        .unwrap();
        let bg = Background::new(&a, PExponent::new(2.7).unwrap());
        let layout = DofLayout::interior(&dom, 3);
        assert!(layout.len() > 100);
        for kind in [FormKind::Q, FormKind::QOverP, FormKind::QFrak, FormKind::QFrakNormalized, FormKind::QCal] {
            let fast = assemble_local(&bg, &layout, kind);
            let slow = materialize(&layout, |x| bg.apply(kind, x)).unwrap();
            assert!(fast.max_abs_diff(&slow) < 1e-11 * slow.max_abs(), "{kind:?}");
        }
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn eigenvalues_ignore_dof_order(seed in any::<u64>(), n in 2usize..24) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let s = &g + g.transpose();
            let mass: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let sp = DMatrix::from_fn(n, n, |i, j| s[(perm[i], perm[j])]);
            let mp: Vec<f64> = perm.iter().map(|&i| mass[i]).collect();
            let a = dense_eigenvalues(&StabilityProblem::from_dense(&s, Mass::Diagonal(mass)).unwrap()).unwrap();
            let b = dense_eigenvalues(&StabilityProblem::from_dense(&sp, Mass::Diagonal(mp)).unwrap()).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-10 * (1.0 + x.abs()));
            }
        }
    }
}
