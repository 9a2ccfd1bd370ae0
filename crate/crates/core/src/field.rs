//! Lattice differential forms and the discrete covariant calculus.
//!
//! `d` uses forward differences and `d_star` is its exact adjoint for the
//! pairing `h⁴ Σ_s ⟨·,·⟩` over all box sites.  Values outside a box read as
//! zero.  Covariant operators add pointwise brackets at the same site, so
//! `covariant_d_star` is also the exact adjoint of `covariant_d`.

use std::sync::{Arc, LazyLock};

use crate::algebra::forms::{hodge_star_slice, index_of, multi_indices, wedge_sign, BINOM4};
use crate::algebra::lie::{dot, Algebra, CMatrix};
use crate::error::{check_dim, Error, Result};
use crate::lattice::Domain;

pub mod snapshot;

/// Terms `(out component, μ, in component, sign)` of `e^μ ∧ e^I` for each
/// input degree k.
static EXT_TERMS: LazyLock<[Vec<(usize, usize, usize, f64)>; 4]> = LazyLock::new(|| {
    let mut t: [Vec<(usize, usize, usize, f64)>; 4] = Default::default();
    for (k, terms) in t.iter_mut().enumerate() {
        for (i, &m) in multi_indices(k).iter().enumerate() {
            for mu in 0..4 {
                let s = wedge_sign(1 << mu, m);
                if s != 0.0 {
                    terms.push((index_of(m | (1 << mu)), mu, i, s));
                }
            }
        }
    }
    t
});

pub(crate) fn ext_terms(k: usize) -> &'static [(usize, usize, usize, f64)] {
    &EXT_TERMS[k]
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeForm {
    domain: Arc<Domain>,
    degree: usize,
    dim: usize,
    data: Vec<f64>,
}

/// A test direction for the variations: a Lie-valued 1-form.
pub type Perturbation = LatticeForm;

impl LatticeForm {
    pub fn zeros(domain: &Arc<Domain>, degree: usize, dim: usize) -> Result<Self> {
        if degree > 4 {
            return Err(Error::InvalidDegree(degree));
        }
        let len = domain.site_count() * BINOM4[degree] * dim;
        Ok(Self { domain: domain.clone(), degree, dim, data: vec![0.0; len] })
    }

    pub fn from_data(domain: &Arc<Domain>, degree: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if degree > 4 {
            return Err(Error::InvalidDegree(degree));
        }
        check_dim(domain.site_count() * BINOM4[degree] * dim, data.len())?;
        Ok(Self { domain: domain.clone(), degree, dim, data })
    }

    /// Samples `f(x, out)` at every box site; `out` has `binom(4,k) * dim` slots.
    pub fn from_fn(
        domain: &Arc<Domain>,
        degree: usize,
        dim: usize,
        mut f: impl FnMut(usize, [f64; 4], &mut [f64]),
    ) -> Result<Self> {
        let mut form = Self::zeros(domain, degree, dim)?;
        let w = form.site_width();
        for s in 0..domain.site_count() {
            f(s, domain.coord(s), &mut form.data[s * w..(s + 1) * w]);
        }
        Ok(form)
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn site_width(&self) -> usize {
        BINOM4[self.degree] * self.dim
    }

    #[inline]
    pub fn site(&self, s: usize) -> &[f64] {
        let w = self.site_width();
        &self.data[s * w..(s + 1) * w]
    }

    #[inline]
    pub fn site_mut(&mut self, s: usize) -> &mut [f64] {
        let w = self.site_width();
        &mut self.data[s * w..(s + 1) * w]
    }

    #[inline]
    pub fn comp(&self, s: usize, i: usize) -> &[f64] {
        let w = self.site_width();
        let o = s * w + i * self.dim;
        &self.data[o..o + self.dim]
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if !Arc::ptr_eq(&self.domain, &other.domain) && *self.domain != *other.domain {
            return Err(Error::DomainMismatch);
        }
        check_dim(self.degree, other.degree)?;
        check_dim(self.dim, other.dim)
    }

    /// Discrete L² pairing `h⁴ Σ_s ⟨α(s), β(s)⟩` over all box sites.
    pub fn pairing(&self, other: &Self) -> Result<f64> {
        self.same_shape(other)?;
        let w = self.site_width();
        Ok(self
            .domain
            .sum_all((0..self.domain.site_count()).map(|s| dot(&self.data[s * w..(s + 1) * w], &other.data[s * w..(s + 1) * w]))))
    }

    pub fn norm_l2(&self) -> f64 {
        self.pairing(self).unwrap().sqrt()
    }

    /// Pointwise |ω(s)|² at every site.
    pub fn pointwise_norm_sq(&self) -> Vec<f64> {
        (0..self.domain.site_count()).map(|s| dot(self.site(s), self.site(s))).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        let mut out = self.clone();
        out.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += c * b);
        Ok(out)
    }

    /// Zero every site for which `keep` is false.
    pub fn masked(&self, keep: impl Fn(usize) -> bool) -> Self {
        let mut out = self.clone();
        let w = self.site_width();
        for s in 0..self.domain.site_count() {
            if !keep(s) {
                out.data[s * w..(s + 1) * w].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        out
    }

    /// Multiply each site by a scalar field value.
    pub fn weighted(&self, w: &[f64]) -> Self {
        let mut out = self.clone();
        let width = self.site_width();
        for (s, c) in w.iter().enumerate() {
            out.data[s * width..(s + 1) * width].iter_mut().for_each(|v| *v *= c);
        }
        out
    }

    pub fn hodge_star(&self) -> Self {
        let mut out = Self::zeros(&self.domain, 4 - self.degree, self.dim).unwrap();
        let (wi, wo) = (self.site_width(), out.site_width());
        for s in 0..self.domain.site_count() {
            hodge_star_slice(self.degree, self.dim, &self.data[s * wi..(s + 1) * wi], &mut out.data[s * wo..(s + 1) * wo]);
        }
        out
    }
}

/// Exterior derivative by forward differences, antisymmetrized.
pub fn d(w: &LatticeForm) -> Result<LatticeForm> {
    if w.degree > 3 {
        return Err(Error::DegreeOverflow { k: w.degree, l: 1 });
    }
    let dom = &w.domain;
    let mut out = LatticeForm::zeros(dom, w.degree + 1, w.dim)?;
    let (wi, wo, dim) = (w.site_width(), out.site_width(), w.dim);
    let inv_h = 1.0 / dom.h();
    for s in 0..dom.site_count() {
        for &(o, mu, i, sign) in ext_terms(w.degree) {
            let here = &w.data[s * wi + i * dim..s * wi + (i + 1) * dim];
            let next = dom.shift(s, mu, 1).map(|t| &w.data[t * wi + i * dim..t * wi + (i + 1) * dim]);
            let dst = &mut out.data[s * wo + o * dim..s * wo + (o + 1) * dim];
            for a in 0..dim {
                let fwd = next.map_or(0.0, |n| n[a]);
                dst[a] += sign * (fwd - here[a]) * inv_h;
            }
        }
    }
    Ok(out)
}

/// Exact adjoint of [`d`]: backward differences with zero reads outside the box.
pub fn d_star(b: &LatticeForm) -> Result<LatticeForm> {
    if b.degree == 0 {
        return Err(Error::InvalidDegree(0));
    }
    let dom = &b.domain;
    let mut out = LatticeForm::zeros(dom, b.degree - 1, b.dim)?;
    let (wi, wo, dim) = (b.site_width(), out.site_width(), b.dim);
    let inv_h = 1.0 / dom.h();
    for s in 0..dom.site_count() {
        for &(j, mu, i, sign) in ext_terms(b.degree - 1) {
            let here = &b.data[s * wi + j * dim..s * wi + (j + 1) * dim];
            let prev = dom.shift(s, mu, -1).map(|t| &b.data[t * wi + j * dim..t * wi + (j + 1) * dim]);
            let dst = &mut out.data[s * wo + i * dim..s * wo + (i + 1) * dim];
            for a in 0..dim {
                let bwd = prev.map_or(0.0, |p| p[a]);
                dst[a] -= sign * (here[a] - bwd) * inv_h;
            }
        }
    }
    Ok(out)
}

/// A Lie-valued connection 1-form on a lattice domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeField {
    algebra: Arc<Algebra>,
    form: LatticeForm,
}

impl GaugeField {
    pub fn new(algebra: &Arc<Algebra>, form: LatticeForm) -> Result<Self> {
        check_dim(1, form.degree)?;
        check_dim(algebra.dim(), form.dim)?;
        Ok(Self { algebra: algebra.clone(), form })
    }

    pub fn zero(algebra: &Arc<Algebra>, domain: &Arc<Domain>) -> Self {
        Self { algebra: algebra.clone(), form: LatticeForm::zeros(domain, 1, algebra.dim()).unwrap() }
    }

    pub fn from_fn(
        algebra: &Arc<Algebra>,
        domain: &Arc<Domain>,
        f: impl FnMut(usize, [f64; 4], &mut [f64]),
    ) -> Result<Self> {
        Self::new(algebra, LatticeForm::from_fn(domain, 1, algebra.dim(), f)?)
    }

    pub fn algebra(&self) -> &Arc<Algebra> {
        &self.algebra
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.form.domain
    }

    pub fn form(&self) -> &LatticeForm {
        &self.form
    }

    pub fn form_mut(&mut self) -> &mut LatticeForm {
        &mut self.form
    }

    pub fn into_form(self) -> LatticeForm {
        self.form
    }

    /// `A + t a`.
    pub fn perturbed(&self, t: f64, a: &LatticeForm) -> Result<Self> {
        Ok(Self { algebra: self.algebra.clone(), form: self.form.axpy(t, a)? })
    }

    pub fn perturbation_zeros(&self) -> LatticeForm {
        LatticeForm::zeros(self.domain(), 1, self.algebra.dim()).unwrap()
    }
}

/// Pointwise graded bracket `[A ∧ ω]` added into `out` with factor `c`.
fn bracket_wedge_acc(alg: &Algebra, a: &LatticeForm, w: &LatticeForm, c: f64, out: &mut LatticeForm) {
    let dim = w.dim;
    let (wa, ww, wo) = (a.site_width(), w.site_width(), out.site_width());
    for s in 0..w.domain.site_count() {
        let asite = &a.data[s * wa..(s + 1) * wa];
        let wsite = &w.data[s * ww..(s + 1) * ww];
        let osite = &mut out.data[s * wo..(s + 1) * wo];
        for &(o, mu, i, sign) in ext_terms(w.degree) {
            alg.bracket_acc(
                &asite[mu * dim..(mu + 1) * dim],
                &wsite[i * dim..(i + 1) * dim],
                c * sign,
                &mut osite[o * dim..(o + 1) * dim],
            );
        }
    }
}

fn check_pair(a: &GaugeField, w: &LatticeForm) -> Result<()> {
    if !Arc::ptr_eq(a.domain(), &w.domain) && **a.domain() != *w.domain {
        return Err(Error::DomainMismatch);
    }
    check_dim(a.algebra.dim(), w.dim)
}

/// `d_A ω = dω + [A ∧ ω]`.
pub fn covariant_d(a: &GaugeField, w: &LatticeForm) -> Result<LatticeForm> {
    check_pair(a, w)?;
    let mut out = d(w)?;
    bracket_wedge_acc(&a.algebra, &a.form, w, 1.0, &mut out);
    Ok(out)
}

/// `d_A^* ω = d^* ω - ⋆[A ∧ ⋆ω]`.
pub fn covariant_d_star(a: &GaugeField, w: &LatticeForm) -> Result<LatticeForm> {
    check_pair(a, w)?;
    let mut out = d_star(w)?;
    let sw = w.hodge_star();
    let mut br = LatticeForm::zeros(&w.domain, sw.degree + 1, w.dim)?;
    bracket_wedge_acc(&a.algebra, &a.form, &sw, 1.0, &mut br);
    let sbr = br.hodge_star();
    out.data.iter_mut().zip(&sbr.data).for_each(|(o, v)| *o -= v);
    Ok(out)
}

/// Lattice curvature with its cached pointwise norm.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureField {
    form: LatticeForm,
    norms: Vec<f64>,
}

impl CurvatureField {
    pub fn new(form: LatticeForm) -> Result<Self> {
        check_dim(2, form.degree)?;
        let norms = form.pointwise_norm_sq().into_iter().map(f64::sqrt).collect();
        Ok(Self { form, norms })
    }

    pub fn form(&self) -> &LatticeForm {
        &self.form
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.form.domain
    }

    /// Cached |F| per site.
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn site(&self, s: usize) -> &[f64] {
        self.form.site(s)
    }
}

/// `F_{μν} = D⁺_μ A_ν - D⁺_ν A_μ + [A_μ, A_ν]`, i.e. `dA + ½[A ∧ A]`.
pub fn curvature(a: &GaugeField) -> CurvatureField {
    let mut f = d(&a.form).expect("1-forms always have a derivative");
    bracket_wedge_acc(&a.algebra, &a.form, &a.form, 0.5, &mut f);
    CurvatureField::new(f).unwrap()
}

/// Group-valued field, one unitary matrix per site.
#[derive(Debug, Clone)]
pub struct GaugeTransform {
    domain: Arc<Domain>,
    values: Vec<CMatrix>,
}

impl GaugeTransform {
    pub fn new(domain: &Arc<Domain>, values: Vec<CMatrix>) -> Result<Self> {
        check_dim(domain.site_count(), values.len())?;
        for (s, g) in values.iter().enumerate() {
            let n = g.nrows();
            let defect = (g.adjoint() * g - CMatrix::identity(n, n)).iter().map(|z| z.norm()).fold(0.0, f64::max);
            if !(defect <= 1e-12) {
                return Err(Error::NonUnitary { site: s, defect });
            }
        }
        Ok(Self { domain: domain.clone(), values })
    }

    pub fn constant(domain: &Arc<Domain>, g: CMatrix) -> Result<Self> {
        Self::new(domain, vec![g; domain.site_count()])
    }

    /// `g(x) = exp(φ(x))` for a Lie-algebra-valued function φ.
    pub fn exp_of(
        algebra: &Algebra,
        domain: &Arc<Domain>,
        mut phi: impl FnMut([f64; 4], &mut [f64]),
    ) -> Result<Self> {
        let mut buf = vec![0.0; algebra.dim()];
        let values = (0..domain.site_count())
            .map(|s| {
                buf.iter_mut().for_each(|v| *v = 0.0);
                phi(domain.coord(s), &mut buf);
                algebra.slice_to_matrix(&buf).exp()
            })
            .collect();
        Self::new(domain, values)
    }

    pub fn value(&self, s: usize) -> &CMatrix {
        &self.values[s]
    }
}

/// `A^g = g⁻¹ A g + g⁻¹ D⁺g`, with the logarithmic derivative projected on
/// the algebra.  Out-of-box neighbours contribute no derivative.
pub fn gauge_transform(a: &GaugeField, g: &GaugeTransform) -> Result<GaugeField> {
    if !Arc::ptr_eq(a.domain(), &g.domain) && **a.domain() != *g.domain {
        return Err(Error::DomainMismatch);
    }
    let alg = &a.algebra;
    check_dim(alg.matrix_size(), g.values[0].nrows())?;
    let dom = a.domain();
    let dim = alg.dim();
    let mut out = a.perturbation_zeros();
    let inv_h = 1.0 / dom.h();
    let mut tmp = vec![0.0; dim];
    for s in 0..dom.site_count() {
        let gs = &g.values[s];
        let ginv = gs.adjoint();
        for mu in 0..4 {
            let src = &a.form.site(s)[mu * dim..(mu + 1) * dim];
            alg.conjugate_into(gs, src, &mut tmp);
            if let Some(t) = dom.shift(s, mu, 1) {
                let dg = (&g.values[t] - gs) * crate::algebra::Complex64::new(inv_h, 0.0);
                let m = &ginv * dg;
                let mut proj = vec![0.0; dim];
                alg.project_into(&m, &mut proj);
                tmp.iter_mut().zip(&proj).for_each(|(x, p)| *x += p);
            }
            out.site_mut(s)[mu * dim..(mu + 1) * dim].copy_from_slice(&tmp);
        }
    }
    GaugeField::new(alg, out)
}

/// `h⁴ Σ f(s)` over inside sites.
pub fn integrate(domain: &Domain, f: &[f64]) -> f64 {
    domain.integrate(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::lie::su2_standard_generators;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_form(rng: &mut ChaCha8Rng, dom: &Arc<Domain>, k: usize, dim: usize) -> LatticeForm {
        LatticeForm::from_fn(dom, k, dim, |_, _, out| out.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0)))
            .unwrap()
    }

    fn torus() -> Arc<Domain> {
        Arc::new(Domain::torus(4, 0.7).unwrap())
    }

    #[test]
    fn d_of_constant_and_linear() {
        let dom = Arc::new(Domain::ball(1.0, 0.25).unwrap());
        let c = LatticeForm::from_fn(&dom, 0, 1, |_, _, o| o[0] = 3.0).unwrap();
        let dc = d(&c).unwrap();
        for s in dom.interior_sites() {
            assert!(dc.site(s).iter().all(|v| v.abs() < 1e-14));
        }
        let x = LatticeForm::from_fn(&dom, 0, 1, |_, x, o| o[0] = x[0]).unwrap();
        let dx = d(&x).unwrap();
        for s in dom.interior_sites() {
            assert!((dx.site(s)[0] - 1.0).abs() < 1e-12);
            assert!(dx.site(s)[1..].iter().all(|v| v.abs() < 1e-12));
        }
        assert!(d(&LatticeForm::zeros(&dom, 4, 1).unwrap()).is_err());
        assert!(d_star(&x).is_err());
    }

    #[test]
    fn torus_exactness_and_adjointness() {
        let dom = torus();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 0..3 {
            let w = random_form(&mut rng, &dom, k, 3);
            let dd = d(&d(&w).unwrap()).unwrap();
            assert!(dd.data().iter().all(|v| v.abs() < 1e-12));
            let b = random_form(&mut rng, &dom, k + 2, 3);
            let ss = d_star(&d_star(&b).unwrap()).unwrap();
            assert!(ss.data().iter().all(|v| v.abs() < 1e-12));
        }
        for k in 0..4 {
            let a = random_form(&mut rng, &dom, k, 3);
            let b = random_form(&mut rng, &dom, k + 1, 3);
            let lhs = d(&a).unwrap().pairing(&b).unwrap();
            let rhs = a.pairing(&d_star(&b).unwrap()).unwrap();
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()), "k={k}");
        }
        let c = LatticeForm::from_fn(&dom, 1, 3, |_, _, o| o.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64)).unwrap();
        assert!(d_star(&c).unwrap().data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn box_adjointness_with_zero_extension() {
        let dom = Arc::new(Domain::annulus(0.3, 1.0, 0.25).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_form(&mut rng, &dom, 1, 3);
        let b = random_form(&mut rng, &dom, 2, 3);
        let lhs = d(&a).unwrap().pairing(&b).unwrap();
        let rhs = a.pairing(&d_star(&b).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-11 * lhs.abs().max(1.0));
    }

    #[test]
    fn covariant_adjointness_is_exact() {
        let alg = Arc::new(Algebra::su2());
        let dom = torus();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = GaugeField::new(&alg, random_form(&mut rng, &dom, 1, 3)).unwrap();
        for k in 0..4 {
            let w = random_form(&mut rng, &dom, k, 3);
            let b = random_form(&mut rng, &dom, k + 1, 3);
            let lhs = covariant_d(&a, &w).unwrap().pairing(&b).unwrap();
            let rhs = w.pairing(&covariant_d_star(&a, &b).unwrap()).unwrap();
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()), "k={k}: {lhs} {rhs}");
        }
    }

    #[test]
    fn zero_and_abelian_reductions() {
        let alg = Arc::new(Algebra::su2());
        let dom = torus();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let w = random_form(&mut rng, &dom, 1, 3);
        let zero = GaugeField::zero(&alg, &dom);
        assert_eq!(covariant_d(&zero, &w).unwrap(), d(&w).unwrap());
        assert_eq!(covariant_d_star(&zero, &w).unwrap(), d_star(&w).unwrap());
        // everything along T_2
        let line = |rng: &mut ChaCha8Rng, k| {
            LatticeForm::from_fn(&dom, k, 3, |_, _, o| {
                for c in o.chunks_mut(3) {
                    c[1] = rng.random_range(-1.0..1.0);
                }
            })
            .unwrap()
        };
        let a = GaugeField::new(&alg, line(&mut rng, 1)).unwrap();
        let w = line(&mut rng, 2);
        let cd = covariant_d(&a, &w).unwrap();
        let plain = d(&w).unwrap();
        assert!(cd.data().iter().zip(plain.data()).all(|(x, y)| (x - y).abs() < 1e-15));
        let cs = covariant_d_star(&a, &w).unwrap();
        let plain = d_star(&w).unwrap();
        assert!(cs.data().iter().zip(plain.data()).all(|(x, y)| (x - y).abs() < 1e-15));
    }

    #[test]
    fn curvature_examples() {
        let alg = Arc::new(Algebra::su2());
        let dom = Arc::new(Domain::ball(1.0, 0.25).unwrap());
        let f = curvature(&GaugeField::zero(&alg, &dom));
        assert!(f.norms().iter().all(|v| *v == 0.0));
        // A = x² dx¹ along T_1 (0-based: x[1] dx^0)
        let a = GaugeField::from_fn(&alg, &dom, |_, x, o| o[0] = x[1]).unwrap();
        let f = curvature(&a);
        for s in dom.interior_sites() {
            let c = f.site(s);
            // F_{01} = -D_1 A_0 = -1 along T_1
            assert!((c[0] + 1.0).abs() < 1e-12);
            assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn curvature_matches_matrix_formula() {
        let alg = Arc::new(Algebra::su2());
        let dom = torus();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = GaugeField::new(&alg, random_form(&mut rng, &dom, 1, 3)).unwrap();
        let f = curvature(&a);
        let da = d(a.form()).unwrap();
        for s in 0..dom.site_count() {
            for (i, &m) in multi_indices(2).iter().enumerate() {
                let idx: Vec<usize> = (0..4).filter(|b| m & (1 << b) != 0).collect();
                let (mu, nu) = (idx[0], idx[1]);
                let am = alg.slice_to_matrix(&a.form().site(s)[mu * 3..mu * 3 + 3]);
                let an = alg.slice_to_matrix(&a.form().site(s)[nu * 3..nu * 3 + 3]);
                let comm = &am * &an - &an * &am;
                let want = alg.slice_to_matrix(da.comp(s, i)) + comm;
                let got = alg.slice_to_matrix(f.form().comp(s, i));
                assert!((want - got).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-12);
            }
        }
    }

    #[test]
    fn constant_gauge_conjugates_curvature() {
        let alg = Arc::new(Algebra::su2());
        let dom = torus();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let a = GaugeField::new(&alg, random_form(&mut rng, &dom, 1, 3)).unwrap();
        let t = su2_standard_generators();
        let g = (&t[0] * crate::algebra::Complex64::new(0.7, 0.0) + &t[2] * crate::algebra::Complex64::new(-1.3, 0.0)).exp();
        let gt = GaugeTransform::constant(&dom, g.clone()).unwrap();
        let ag = gauge_transform(&a, &gt).unwrap();
        let f = curvature(&a);
        let fg = curvature(&ag);
        let mut tmp = vec![0.0; 3];
        for s in 0..dom.site_count() {
            assert!((f.norms()[s] - fg.norms()[s]).abs() < 1e-12);
            for i in 0..6 {
                alg.conjugate_into(&g, f.form().comp(s, i), &mut tmp);
                for a in 0..3 {
                    assert!((tmp[a] - fg.form().comp(s, i)[a]).abs() < 1e-12);
                }
            }
        }
        let id = GaugeTransform::constant(&dom, CMatrix::identity(2, 2)).unwrap();
        let same = gauge_transform(&a, &id).unwrap();
        assert!(same.form().data().iter().zip(a.form().data()).all(|(x, y)| (x - y).abs() < 1e-14));
        let bad = CMatrix::identity(2, 2) * crate::algebra::Complex64::new(1.1, 0.0);
        assert!(matches!(GaugeTransform::constant(&dom, bad), Err(Error::NonUnitary { .. })));
    }

    #[test]
    fn integrate_is_linear() {
        let dom = Arc::new(Domain::ball(1.0, 0.2).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let f: Vec<f64> = (0..dom.site_count()).map(|_| rng.random()).collect();
        let g: Vec<f64> = (0..dom.site_count()).map(|_| rng.random()).collect();
        let fg: Vec<f64> = f.iter().zip(&g).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
        let lhs = integrate(&dom, &fg);
        let rhs = 2.0 * integrate(&dom, &f) - 3.0 * integrate(&dom, &g);
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_form(seed: u64, dom: &Arc<Domain>, k: usize) -> LatticeForm {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LatticeForm::from_fn(dom, k, 3, |_, _, o| o.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0))).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn torus_d_squares_to_zero_and_is_adjoint(seed in any::<u64>(), k in 0usize..=2, h in 0.1..2.0f64) {
            let dom = Arc::new(Domain::torus(4, h).unwrap());
            let w = random_form(seed, &dom, k);
            let dd = d(&d(&w).unwrap()).unwrap();
            let scale = w.data().iter().fold(0.0f64, |m, v| m.max(v.abs())) / (h * h);
            prop_assert!(dd.data().iter().all(|v| v.abs() <= 1e-13 * scale));
            let b = random_form(seed ^ 1, &dom, k + 1);
            let lhs = d(&w).unwrap().pairing(&b).unwrap();
            let rhs = w.pairing(&d_star(&b).unwrap()).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (lhs.abs() + rhs.abs() + 1.0));
        }
    }
}
