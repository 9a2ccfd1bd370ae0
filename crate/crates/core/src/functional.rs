//! The p-Yang-Mills energy on a lattice, its variations and quadratic forms,
//! and a gradient-flow minimizer.
//!
//! The discrete curvature is exactly quadratic in the field, so the second
//! derivative of `ym_p_energy(A + t a)` at `t = 0` equals `q(A, a, p)` for
//! every A, not only at critical points.  All integrals run over inside sites.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::algebra::forms::{hodge_star_slice, index_of, wedge_sign};
use crate::algebra::lie::dot;
use crate::error::{Error, Result};
use crate::field::{covariant_d, covariant_d_star, curvature, d, CurvatureField, GaugeField, LatticeForm};
use crate::lattice::{Domain, NeumaierSum};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PExponent(f64);

impl PExponent {
    pub fn new(p: f64) -> Result<Self> {
        if (2.0..3.0).contains(&p) {
            Ok(Self(p))
        } else {
            Err(Error::OutOfRange { name: "p", value: p, reason: "need 2 <= p < 3".into() })
        }
    }

    pub fn two() -> Self {
        Self(2.0)
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PExponent {
    type Error = Error;
    fn try_from(p: f64) -> Result<Self> {
        Self::new(p)
    }
}

impl From<PExponent> for f64 {
    fn from(p: PExponent) -> f64 {
        p.0
    }
}

/// Scalar kernels as functions of `t = |Ω|²`.
pub mod kernels {
    /// `H = (1 + t)^{p/2}`.
    #[inline]
    pub fn h(t: f64, p: f64) -> f64 {
        (0.5 * p * t.ln_1p()).exp()
    }

    /// `H - 1`, accurate for small t.
    #[inline]
    pub fn h_excess(t: f64, p: f64) -> f64 {
        (0.5 * p * t.ln_1p()).exp_m1()
    }

    /// `ρ = (1 + t)^{(p-2)/2}`.
    #[inline]
    pub fn rho(t: f64, p: f64) -> f64 {
        (0.5 * (p - 2.0) * t.ln_1p()).exp()
    }

    /// `V(Ω) = √ρ Ω`, written into `out`.
    pub fn v(omega: &[f64], p: f64, out: &mut [f64]) {
        let t: f64 = omega.iter().map(|x| x * x).sum();
        let s = rho(t, p).sqrt();
        out.iter_mut().zip(omega).for_each(|(o, x)| *o = s * x);
    }
}

/// `ρ(F)` at every site.
pub fn rho_field(f: &CurvatureField, p: PExponent) -> Vec<f64> {
    f.norms().iter().map(|n| kernels::rho(n * n, p.value())).collect()
}

pub fn ym_p_energy(a: &GaugeField, p: PExponent) -> f64 {
    energy_of_curvature(&curvature(a), p)
}

pub fn energy_of_curvature(f: &CurvatureField, p: PExponent) -> f64 {
    let dom = f.domain();
    dom.volume() + energy_excess(f, p)
}

/// `∫ (H(F) - 1)`, the energy above the domain volume.
pub fn energy_excess(f: &CurvatureField, p: PExponent) -> f64 {
    let dom = f.domain();
    let ex: Vec<f64> = f.norms().iter().map(|n| kernels::h_excess(n * n, p.value())).collect();
    dom.integrate(&ex)
}

/// Plain Yang-Mills energy `∫ |F|²`.
pub fn ym_energy(a: &GaugeField) -> f64 {
    let f = curvature(a);
    let sq: Vec<f64> = f.norms().iter().map(|n| n * n).collect();
    f.domain().integrate(&sq)
}

/// Perturbations must vanish off the interior sites of a bounded domain.
pub fn check_support(a: &LatticeForm) -> Result<()> {
    let dom = a.domain();
    for s in 0..dom.site_count() {
        if !dom.is_interior(s) && a.site(s).iter().any(|v| *v != 0.0) {
            return Err(Error::SupportViolation { site: s });
        }
    }
    Ok(())
}

fn inside_mask(dom: &Domain) -> impl Fn(usize) -> bool + '_ {
    move |s| dom.is_inside(s)
}

/// `∫ w ⟨α, β⟩` over inside sites.
fn weighted_pairing(dom: &Domain, w: Option<&[f64]>, x: &LatticeForm, y: &LatticeForm) -> f64 {
    let mut acc = NeumaierSum::default();
    for s in 0..dom.site_count() {
        if dom.is_inside(s) {
            let v = dot(x.site(s), y.site(s));
            acc.add(w.map_or(v, |w| w[s] * v));
        }
    }
    acc.value() * dom.cell()
}

/// `p ∫ ρ(F) ⟨F, d_A a⟩`.
pub fn first_variation(a: &GaugeField, pert: &LatticeForm, p: PExponent) -> Result<f64> {
    let f = curvature(a);
    let da = covariant_d(a, pert)?;
    let rho = rho_field(&f, p);
    Ok(p.value() * weighted_pairing(a.domain(), Some(&rho), f.form(), &da))
}

/// `d_A^*(ρ F)` with the curvature restricted to inside sites; the L²
/// gradient of the energy is `p` times this field.
pub fn el_field(a: &GaugeField, f: &CurvatureField, p: PExponent) -> LatticeForm {
    let dom = a.domain();
    let rho = rho_field(f, p);
    let rf = f.form().weighted(&rho).masked(inside_mask(dom));
    covariant_d_star(a, &rf).expect("shapes agree by construction")
}

/// L² norm over interior sites.
pub fn interior_norm(w: &LatticeForm) -> f64 {
    let dom = w.domain();
    let mut acc = NeumaierSum::default();
    for s in 0..dom.site_count() {
        if dom.is_interior(s) {
            acc.add(dot(w.site(s), w.site(s)));
        }
    }
    (acc.value() * dom.cell()).sqrt()
}

/// L² norm over inside sites.
pub fn inside_norm(w: &LatticeForm) -> f64 {
    let dom = w.domain();
    weighted_pairing(dom, None, w, w).sqrt()
}

#[derive(Debug, Clone)]
pub struct ElResidual {
    /// Divergence form `d_A^*(ρ F)`.
    pub field: LatticeForm,
    /// Its L² norm over interior sites.
    pub norm: f64,
    /// Non-divergence form `d_A^* F - ((p-2)/2) ⋆(d|F|² ∧ ⋆F) / (1 + |F|²)`.
    pub nondivergence: LatticeForm,
    /// L² norm over interior sites of `field - ρ nondivergence`.
    pub split_defect: f64,
}

pub fn el_residual(a: &GaugeField, p: PExponent) -> ElResidual {
    let f = curvature(a);
    let field = el_field(a, &f, p);
    let norm = interior_norm(&field);
    let nondivergence = nondivergence_form(a, &f, p);
    let rho = rho_field(&f, p);
    let defect = field.axpy(-1.0, &nondivergence.weighted(&rho)).unwrap();
    ElResidual { field, norm, nondivergence, split_defect: interior_norm(&defect) }
}

fn nondivergence_form(a: &GaugeField, f: &CurvatureField, p: PExponent) -> LatticeForm {
    let dom = a.domain();
    let dim = a.algebra().dim();
    let fm = f.form().masked(inside_mask(dom));
    let mut out = covariant_d_star(a, &fm).unwrap();
    let sq = LatticeForm::from_data(dom, 0, 1, f.norms().iter().map(|n| n * n).collect()).unwrap();
    let grad = d(&sq).unwrap();
    let c = 0.5 * (p.value() - 2.0);
    let mut star_f = vec![0.0; 6 * dim];
    let mut three = vec![0.0; 4 * dim];
    let mut one = vec![0.0; 4 * dim];
    let masks2 = crate::algebra::forms::multi_indices(2);
    for s in 0..dom.site_count() {
        if !dom.is_inside(s) {
            continue;
        }
        hodge_star_slice(2, dim, f.site(s), &mut star_f);
        three.iter_mut().for_each(|v| *v = 0.0);
        let g = grad.site(s);
        for (j, &m) in masks2.iter().enumerate() {
            for mu in 0..4 {
                let sign = wedge_sign(1 << mu, m);
                if sign == 0.0 {
                    continue;
                }
                let o = index_of(m | (1 << mu));
                for x in 0..dim {
                    three[o * dim + x] += sign * g[mu] * star_f[j * dim + x];
                }
            }
        }
        hodge_star_slice(3, dim, &three, &mut one);
        let t = f.norms()[s].powi(2);
        let k = c / (1.0 + t);
        out.site_mut(s).iter_mut().zip(&one).for_each(|(o, v)| *o -= k * v);
    }
    out
}

/// Which quadratic form to evaluate or assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormKind {
    /// The second variation, including the overall factor p.
    Q,
    /// `Q / p`.
    QOverP,
    /// `Q + ∫ ρ |d_A^* a|²`.
    QFrak,
    /// `Q / p + ∫ ρ |d_A^* a|²`, the normalization under which the form
    /// coincides with `QCal` at p = 2.
    QFrakNormalized,
    /// `∫ |d_A a|² + |d_A^* a|² + ρ ⟨F, [a ∧ a]⟩`.
    QCal,
}

/// Precomputed background data shared by evaluations and operator products.
#[derive(Debug, Clone)]
pub struct Background {
    pub field: GaugeField,
    pub curvature: CurvatureField,
    pub rho: Vec<f64>,
    pub p: PExponent,
}

impl Background {
    pub fn new(field: &GaugeField, p: PExponent) -> Self {
        let curvature = curvature(field);
        let rho = rho_field(&curvature, p);
        Self { field: field.clone(), curvature, rho, p }
    }

    pub fn domain(&self) -> &Arc<Domain> {
        self.field.domain()
    }

    /// `∫ ρ ⟨F, [a ∧ a]⟩` with the graded bracket.
    fn bracket_term(&self, a: &LatticeForm, weighted: bool) -> f64 {
        let ca = self.curvature_action(a, weighted);
        let dom = self.domain();
        dom.sum_all((0..dom.site_count()).map(|s| dot(ca.site(s), a.site(s))))
    }

    /// `(C a)_ν = Σ_μ ρ [F_{μν}, a_μ]` on inside sites; `⟨a, C a⟩ = ∫ ρ ⟨F, [a ∧ a]⟩`.
    pub fn curvature_action(&self, a: &LatticeForm, weighted: bool) -> LatticeForm {
        let dom = self.domain();
        let alg = self.field.algebra();
        let dim = alg.dim();
        let mut out = LatticeForm::zeros(dom, 1, dim).unwrap();
        let masks2 = crate::algebra::forms::multi_indices(2);
        for s in 0..dom.site_count() {
            if !dom.is_inside(s) {
                continue;
            }
            let w = if weighted { self.rho[s] } else { 1.0 };
            let fs = self.curvature.site(s);
            let asite = a.site(s);
            let osite = out.site_mut(s);
            for (i, &m) in masks2.iter().enumerate() {
                let mu = m.trailing_zeros() as usize;
                let nu = 7 - m.leading_zeros() as usize;
                let fc = &fs[i * dim..(i + 1) * dim];
                // F_{μν} with μ < ν: contributes [F_{μν}, a_μ] to ν and [F_{νμ}, a_ν] to μ
                alg.bracket_acc(fc, &asite[mu * dim..(mu + 1) * dim], w, &mut osite[nu * dim..(nu + 1) * dim]);
                alg.bracket_acc(fc, &asite[nu * dim..(nu + 1) * dim], -w, &mut osite[mu * dim..(mu + 1) * dim]);
            }
        }
        out
    }

    /// Derivative part of the second variation before the factor p:
    /// `ρ (d_A a + (p-2) ⟨F, d_A a⟩ F / (1 + |F|²))` on inside sites.
    fn hessian_flux(&self, da: &LatticeForm) -> LatticeForm {
        let dom = self.domain();
        let pm2 = self.p.value() - 2.0;
        let mut out = da.clone();
        for s in 0..dom.site_count() {
            let site = out.site_mut(s);
            if !dom.is_inside(s) {
                site.iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            let fs = self.curvature.site(s);
            let t = self.curvature.norms()[s].powi(2);
            let c = pm2 * dot(fs, da.site(s)) / (1.0 + t);
            let r = self.rho[s];
            site.iter_mut().zip(fs).for_each(|(v, f)| *v = r * (*v + c * f));
        }
        out
    }

    /// `∫ ρ |d_A^* a|²`.
    fn gauge_fix_term(&self, a: &LatticeForm, weighted: bool) -> Result<f64> {
        let ds = covariant_d_star(&self.field, a)?;
        Ok(weighted_pairing(self.domain(), weighted.then_some(&self.rho[..]), &ds, &ds))
    }

    /// The second variation including the factor p.
    pub fn q(&self, a: &LatticeForm) -> Result<f64> {
        let da = covariant_d(&self.field, a)?;
        let flux = self.hessian_flux(&da);
        let dom = self.domain();
        let deriv = dom.sum_all((0..dom.site_count()).map(|s| dot(flux.site(s), da.site(s))));
        Ok(self.p.value() * (deriv + self.bracket_term(a, true)))
    }

    pub fn eval(&self, kind: FormKind, a: &LatticeForm) -> Result<f64> {
        let p = self.p.value();
        Ok(match kind {
            FormKind::Q => self.q(a)?,
            FormKind::QOverP => self.q(a)? / p,
            FormKind::QFrak => self.q(a)? + self.gauge_fix_term(a, true)?,
            FormKind::QFrakNormalized => self.q(a)? / p + self.gauge_fix_term(a, true)?,
            FormKind::QCal => {
                let da = covariant_d(&self.field, a)?;
                weighted_pairing(self.domain(), None, &da, &da)
                    + self.gauge_fix_term(a, false)?
                    + self.bracket_term(a, true)
            }
        })
    }

    /// `K a` with `⟨a, K a⟩ = eval(kind, a)` in the pairing `h⁴ Σ_s`.
    pub fn apply(&self, kind: FormKind, a: &LatticeForm) -> Result<LatticeForm> {
        let p = self.p.value();
        let dom = self.domain();
        let hess = |scale: f64| -> Result<LatticeForm> {
            let da = covariant_d(&self.field, a)?;
            let flux = self.hessian_flux(&da);
            let mut out = covariant_d_star(&self.field, &flux)?;
            let ca = self.curvature_action(a, true);
            out = out.axpy(1.0, &ca)?;
            Ok(out.scaled(scale))
        };
        let gauge = |weighted: bool| -> Result<LatticeForm> {
            let ds = covariant_d_star(&self.field, a)?;
            let ds = if weighted { ds.weighted(&self.rho) } else { ds };
            covariant_d(&self.field, &ds.masked(|s| dom.is_inside(s)))
        };
        match kind {
            FormKind::Q => hess(p),
            FormKind::QOverP => hess(1.0),
            FormKind::QFrak => hess(p)?.axpy(1.0, &gauge(true)?),
            FormKind::QFrakNormalized => hess(1.0)?.axpy(1.0, &gauge(true)?),
            FormKind::QCal => {
                let da = covariant_d(&self.field, a)?.masked(|s| dom.is_inside(s));
                let lap = covariant_d_star(&self.field, &da)?;
                lap.axpy(1.0, &gauge(false)?)?.axpy(1.0, &self.curvature_action(a, true))
            }
        }
    }
}

pub fn q(a: &GaugeField, pert: &LatticeForm, p: PExponent) -> Result<f64> {
    check_support(pert)?;
    Background::new(a, p).q(pert)
}

pub fn q_over_p(a: &GaugeField, pert: &LatticeForm, p: PExponent) -> Result<f64> {
    Ok(q(a, pert, p)? / p.value())
}

pub fn q_frak(a: &GaugeField, pert: &LatticeForm, p: PExponent) -> Result<f64> {
    check_support(pert)?;
    Background::new(a, p).eval(FormKind::QFrak, pert)
}

pub fn q_frak_normalized(a: &GaugeField, pert: &LatticeForm, p: PExponent) -> Result<f64> {
    check_support(pert)?;
    Background::new(a, p).eval(FormKind::QFrakNormalized, pert)
}

pub fn q_cal(a: &GaugeField, pert: &LatticeForm, p: PExponent) -> Result<f64> {
    check_support(pert)?;
    Background::new(a, p).eval(FormKind::QCal, pert)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum StepPolicy {
    /// Trial step `1 / (1 + sup ρ|F|)`.
    CurvatureScaled,
    /// Barzilai-Borwein trial step from the last two gradients.
    BarzilaiBorwein,
    Fixed { step: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowOptions {
    pub steps: usize,
    pub policy: StepPolicy,
    /// Stop once the residual norm drops below this; `None` uses
    /// `1e-6 (1 + ‖F‖)`.
    pub target: Option<f64>,
    pub max_backtracks: usize,
    pub armijo: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { steps: 200, policy: StepPolicy::CurvatureScaled, target: None, max_backtracks: 40, armijo: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub step: usize,
    pub energy: f64,
    pub residual_norm: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone)]
pub struct FlowResult {
    pub field: GaugeField,
    pub log: Vec<FlowRecord>,
    pub converged: bool,
    pub target: f64,
}

/// Critical-point acceptance threshold `1e-6 (1 + ‖F‖_{L²})`.
pub fn acceptance_threshold(f: &CurvatureField) -> f64 {
    let sq: Vec<f64> = f.norms().iter().map(|n| n * n).collect();
    1e-6 * (1.0 + f.domain().integrate(&sq).sqrt())
}

/// Gradient descent on the energy over interior-site degrees of freedom with
/// Armijo backtracking.  Energies in the log are nonincreasing.
pub fn flow(a0: &GaugeField, p: PExponent, opts: &FlowOptions) -> Result<FlowResult> {
    let dom = a0.domain().clone();
    let interior = |s: usize| dom.is_interior(s);
    let mut a = a0.clone();
    let mut f = curvature(&a);
    let mut energy = energy_excess(&f, p);
    let mut grad = el_field(&a, &f, p).scaled(p.value()).masked(interior);
    let mut gnorm = interior_norm(&grad);
    let target = opts.target.unwrap_or_else(|| acceptance_threshold(&f));
    let mut log = vec![FlowRecord { step: 0, energy: energy + dom.volume(), residual_norm: gnorm / p.value(), step_size: 0.0 }];
    let mut prev: Option<(LatticeForm, LatticeForm, f64)> = None;
    let mut last_step = f64::INFINITY;
    for step in 1..=opts.steps {
        if gnorm / p.value() < target {
            return Ok(FlowResult { field: a, log, converged: true, target });
        }
        let mut tau = match opts.policy {
            StepPolicy::CurvatureScaled => {
                let rho = rho_field(&f, p);
                let sup = f.norms().iter().zip(&rho).map(|(n, r)| n * r).fold(0.0, f64::max);
                (1.0 / (1.0 + sup)).min(2.0 * last_step)
            }
            StepPolicy::BarzilaiBorwein => match &prev {
                Some((a_old, g_old, tau_old)) => {
                    let sd = a.form().axpy(-1.0, a_old)?;
                    let yd = grad.axpy(-1.0, g_old)?;
                    let sy = sd.pairing(&yd)?;
                    if sy > 0.0 {
                        sd.pairing(&sd)? / sy
                    } else {
                        2.0 * tau_old
                    }
                }
                None => {
                    let rho = rho_field(&f, p);
                    let sup = f.norms().iter().zip(&rho).map(|(n, r)| n * r).fold(0.0, f64::max);
                    (1.0 / (1.0 + sup)).min(dom.h() * dom.h() / (16.0 * p.value()))
                }
            },
            StepPolicy::Fixed { step } => step,
        };
        let g2 = gnorm * gnorm;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial = a.perturbed(-tau, &grad)?;
            let ft = curvature(&trial);
            let et = energy_excess(&ft, p);
            if et <= energy - opts.armijo * tau * g2 {
                accepted = Some((trial, ft, et));
                break;
            }
            tau *= 0.5;
        }
        let Some((trial, ft, et)) = accepted else {
            let worst = energy_excess(&curvature(&a.perturbed(-tau, &grad)?), p);
            return Err(Error::Divergence {
                step,
                backtracks: opts.max_backtracks,
                from: energy + dom.volume(),
                to: worst + dom.volume(),
            });
        };
        prev = Some((a.form().clone(), grad.clone(), tau));
        last_step = tau;
        a = trial;
        f = ft;
        energy = et;
        grad = el_field(&a, &f, p).scaled(p.value()).masked(interior);
        gnorm = interior_norm(&grad);
        log.push(FlowRecord { step, energy: energy + dom.volume(), residual_norm: gnorm / p.value(), step_size: tau });
    }
    let converged = gnorm / p.value() < target;
    Ok(FlowResult { field: a, log, converged, target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Algebra;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_field(rng: &mut ChaCha8Rng, alg: &Arc<Algebra>, dom: &Arc<Domain>, amp: f64) -> GaugeField {
        let side = dom.n() as f64 * dom.h();
        let k = 2.0 * std::f64::consts::PI / side;
        let coef: Vec<[f64; 3]> = (0..12 * 3).map(|_| [rng.random_range(-amp..amp), rng.random_range(0.0..6.3), rng.random_range(0.0..4.0)]).collect();
        GaugeField::from_fn(alg, dom, |_, x, o| {
            for (i, v) in o.iter_mut().enumerate() {
                let [c, ph, ax] = coef[i];
                *v = c * (k * (x[ax as usize % 4] + 0.5 * x[(i + 1) % 4]) + ph).sin();
            }
        })
        .unwrap()
    }

    fn random_pert(rng: &mut ChaCha8Rng, dom: &Arc<Domain>, dim: usize) -> LatticeForm {
        LatticeForm::from_fn(dom, 1, dim, |s, _, o| {
            if dom.is_interior(s) {
                o.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            }
        })
        .unwrap()
    }

    #[test]
    fn p_range() {
        assert!(PExponent::new(1.9).is_err());
        assert!(PExponent::new(3.0).is_err());
        assert!(PExponent::new(2.0).is_ok());
        let p: PExponent = serde_json::from_str("2.5").unwrap();
        assert_eq!(p.value(), 2.5);
        assert!(serde_json::from_str::<PExponent>("3.5").is_err());
    }

    #[test]
    fn kernel_identities() {
        for t in [0.0, 1e-8, 0.3, 5.0, 1e6] {
            for p in [2.0, 2.4, 2.9] {
                assert!(kernels::h(t, p) >= 1.0);
                assert!(kernels::rho(t, p) >= 1.0);
                let h1 = kernels::h(t, p) - 1.0;
                assert!((kernels::h_excess(t, p) - h1).abs() <= 1e-12 * (1.0 + h1));
            }
        }
        let om = [0.3, -1.2, 0.5];
        let mut v = [0.0; 3];
        kernels::v(&om, 2.5, &mut v);
        let t: f64 = om.iter().map(|x| x * x).sum();
        let vv: f64 = v.iter().map(|x| x * x).sum();
        assert!((vv - kernels::rho(t, 2.5) * t).abs() < 1e-14);
    }

    #[test]
    fn flat_field_energy_and_variation() {
        let alg = Arc::new(Algebra::su2());
        let dom = Arc::new(Domain::torus(4, 0.25).unwrap());
        let a = GaugeField::zero(&alg, &dom);
        for p in [2.0, 2.5] {
            let p = PExponent::new(p).unwrap();
            assert_eq!(ym_p_energy(&a, p), 1.0);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let pert = random_pert(&mut rng, &dom, 3);
            assert_eq!(first_variation(&a, &pert, p).unwrap(), 0.0);
            assert_eq!(el_residual(&a, p).norm, 0.0);
        }
    }

    #[test]
    fn energy_monotone_in_p() {
        let alg = Arc::new(Algebra::su2());
        let dom = Arc::new(Domain::torus(6, 0.5).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = smooth_field(&mut rng, &alg, &dom, 0.8);
        let es: Vec<f64> = [2.0, 2.2, 2.5, 2.9].iter().map(|&p| ym_p_energy(&a, PExponent::new(p).unwrap())).collect();
        assert!(es.windows(2).all(|w| w[1] > w[0]), "{es:?}");
        assert!(es[0] > dom.volume());
    }

    #[test]
    fn first_variation_matches_central_difference() {
        let alg = Arc::new(Algebra::su2());
        let dom = Arc::new(Domain::torus(6, 0.4).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in [2.0, 2.3, 2.8] {
            let p = PExponent::new(p).unwrap();
            let a = smooth_field(&mut rng, &alg, &dom, 1.0);
            let pert = random_pert(&mut rng, &dom, 3);
            let t = 1e-4;
            let ep = energy_excess(&curvature(&a.perturbed(t, &pert).unwrap()), p);
            let em = energy_excess(&curvature(&a.perturbed(-t, &pert).unwrap()), p);
            let fd = (ep - em) / (2.0 * t);
            let an = first_variation(&a, &pert, p).unwrap();
            assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0), "{fd} {an}");
            // the gradient field represents the same derivative
            let g = el_field(&a, &curvature(&a), p).scaled(p.value());
            assert!((g.pairing(&pert).unwrap() - an).abs() < 1e-10 * an.abs().max(1.0));
        }
    }

    #[test]
    fn q_is_the_exact_second_derivative() {
        let alg = Arc::new(Algebra::su2());
        let dom = Arc::new(Domain::torus(6, 0.4).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in [2.0, 2.6] {
            let p = PExponent::new(p).unwrap();
            let a = smooth_field(&mut rng, &alg, &dom, 1.0);
            let pert = random_pert(&mut rng, &dom, 3);
            let t = 1e-3;
            let e = |s: f64| energy_excess(&curvature(&a.perturbed(s, &pert).unwrap()), p);
            let fd = (-e(2.0 * t) + 16.0 * e(t) - 30.0 * e(0.0) + 16.0 * e(-t) - e(-2.0 * t)) / (12.0 * t * t);
            let qv = q(&a, &pert, p).unwrap();
            assert!((fd - qv).abs() < 1e-4 * qv.abs(), "{fd} {qv}");
        }
    }

    #[test]
    fn quadratic_forms_homogeneity_symmetry_and_ordering() {
        let alg = Arc::new(Algebra::su2());
        let dom = Arc::new(Domain::torus(4, 0.5).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = smooth_field(&mut rng, &alg, &dom, 1.2);
        let p = PExponent::new(2.5).unwrap();
        let bg = Background::new(&a, p);
        let x = random_pert(&mut rng, &dom, 3);
        let y = random_pert(&mut rng, &dom, 3);
        assert_eq!(bg.q(&x.scaled(0.0)).unwrap(), 0.0);
        let q1 = bg.q(&x).unwrap();
        assert!((bg.q(&x.scaled(-3.0)).unwrap() - 9.0 * q1).abs() < 1e-10 * q1.abs());
        for kind in [FormKind::Q, FormKind::QOverP, FormKind::QFrak, FormKind::QFrakNormalized, FormKind::QCal] {
            // polarization symmetry through the operator
            let kx = bg.apply(kind, &x).unwrap();
            let ky = bg.apply(kind, &y).unwrap();
            let (xy, yx) = (kx.pairing(&y).unwrap(), ky.pairing(&x).unwrap());
            assert!((xy - yx).abs() < 1e-12 * (xy.abs() + 1.0), "{kind:?}");
            let v = bg.eval(kind, &x).unwrap();
            assert!((kx.pairing(&x).unwrap() - v).abs() < 1e-10 * v.abs(), "{kind:?}");
        }
        let qf = bg.eval(FormKind::QFrak, &x).unwrap();
        assert!(qf - q1 >= 0.0);
        assert!(bg.eval(FormKind::QCal, &x).unwrap() <= bg.eval(FormKind::QFrakNormalized, &x).unwrap());
        let bg2 = Background::new(&a, PExponent::two());
        let (c, n) = (bg2.eval(FormKind::QCal, &x).unwrap(), bg2.eval(FormKind::QFrakNormalized, &x).unwrap());
        assert!((c - n).abs() < 1e-12 * c.abs());
    }

    #[test]
    fn support_is_enforced_on_boxes() {
        let alg = Arc::new(Algebra::su2());
        let dom = Arc::new(Domain::ball(1.0, 0.25).unwrap());
        let a = GaugeField::zero(&alg, &dom);
        let bad = LatticeForm::from_fn(&dom, 1, 3, |_, _, o| o[0] = 1.0).unwrap();
        assert!(matches!(q(&a, &bad, PExponent::two()), Err(Error::SupportViolation { .. })));
    }

    #[test]
    fn split_defect_is_first_order() {
        let alg = Arc::new(Algebra::su2());
        let p = PExponent::new(2.5).unwrap();
        let mut defects = Vec::new();
        for n in [8, 16] {
            let h = 4.0 / n as f64;
            let dom = Arc::new(Domain::torus(n, h).unwrap());
            let k = 2.0 * std::f64::consts::PI / 4.0;
            let a = GaugeField::from_fn(&alg, &dom, |_, x, o| {
                o[0] = 0.7 * (k * x[1]).sin();
                o[4] = 0.5 * (k * x[2] + 0.3).cos();
                o[8] = 0.6 * (k * x[3]).sin() * (k * x[0]).cos();
                o[11] = 0.4 * (k * x[0]).cos();
            })
            .unwrap();
            let r = el_residual(&a, p);
            defects.push(r.split_defect / r.norm);
        }
        assert!(defects[1] < 0.65 * defects[0], "{defects:?}");
    }

    #[test]
    fn flow_fixed_point_and_monotone_energy() {
        let alg = Arc::new(Algebra::su2());
        let dom = Arc::new(Domain::ball(1.0, 0.25).unwrap());
        let flat = GaugeField::zero(&alg, &dom);
        let r = flow(&flat, PExponent::two(), &FlowOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.log.len(), 1);
        assert_eq!(r.field, flat);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a0 = GaugeField::new(&alg, random_pert(&mut rng, &dom, 3).scaled(0.5)).unwrap();
        for policy in [StepPolicy::CurvatureScaled, StepPolicy::BarzilaiBorwein] {
            let opts = FlowOptions { steps: 60, policy, ..Default::default() };
            let r = flow(&a0, PExponent::new(2.4).unwrap(), &opts).unwrap();
            assert!(r.log.windows(2).all(|w| w[1].energy <= w[0].energy));
            assert!(r.log.last().unwrap().residual_norm < 0.1 * r.log[0].residual_norm, "{policy:?}");
        }
    }
}
