//! Neck-region constants, weight functions, radial supersolution checks and
//! the lattice Hardy/Gaffney/positivity diagnostics.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::algebra::forms::CurvatureEndo;
use crate::algebra::lie::dot;
use crate::error::{Error, Result};
use crate::field::{d, d_star, CurvatureField, GaugeField, LatticeForm};
use crate::functional::{q_frak_normalized, PExponent};
use crate::lattice::{norm, Domain, NeumaierSum};
use crate::quadrature::radial_integral;

pub mod sweep;

fn check_p(p: f64) -> Result<f64> {
    PExponent::new(p).map(|p| p.value())
}

/// Kato-Yau constant `max(2 - p/2 + 1/(2(p-1)), 1)`.
pub fn mu(p: f64) -> Result<f64> {
    let p = check_p(p)?;
    Ok((2.0 - 0.5 * p + 0.5 / (p - 1.0)).max(1.0))
}

/// `(p-1)(2-γ)_+`.
pub fn kappa(p: f64, gamma: f64) -> f64 {
    (p - 1.0) * (2.0 - gamma).max(0.0)
}

/// `2(p-1)(1-β)_+`.
pub fn kappa_beta(p: f64, beta: f64) -> f64 {
    2.0 * (p - 1.0) * (1.0 - beta).max(0.0)
}

fn bochner_denominator(p: f64, c: f64) -> f64 {
    let e = p - 2.0;
    1.0 - c * e - e * e
}

/// `γ(p) = 2 - μ(p)(1 - C(p-2) - (p-2)²)/(p-1)`.
pub fn gamma_p(p: f64, c: f64) -> Result<f64> {
    let mu = mu(p)?;
    if c < 0.0 {
        return Err(Error::OutOfRange { name: "C", value: c, reason: "need C >= 0".into() });
    }
    let den = bochner_denominator(p, c);
    let g = 2.0 - mu * den / (p - 1.0);
    if den <= 0.0 || !(g > 0.0 && g < 2.0) {
        return Err(Error::OutOfRange {
            name: "p",
            value: p,
            reason: format!("1 - C(p-2) - (p-2)^2 = {den:.3e} leaves gamma = {g:.3e} outside (0, 2) for C = {c}"),
        });
    }
    Ok(g)
}

/// Closed-form nonnegative roots `δ₋ ≤ δ₊` of `X(2-X) - 2(p-2)X(X+1) - ε`.
pub fn delta_pm(eps: f64, p: f64) -> Result<(f64, f64)> {
    let p = check_p(p)?;
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::OutOfRange { name: "eps", value: eps, reason: "need 0 <= eps < 1".into() });
    }
    let a = 1.0 + 2.0 * (p - 2.0);
    let disc = 1.0 - eps * a / (3.0 - p).powi(2);
    if disc < 0.0 {
        return Err(Error::Discriminant(disc));
    }
    let base = (3.0 - p) / a;
    Ok((base * (1.0 - disc.sqrt()), base * (1.0 + disc.sqrt())))
}

/// `X(2-X) - 2(p-2)X(X+1) - ε`.
pub fn supersolution_polynomial(x: f64, eps: f64, p: f64) -> f64 {
    x * (2.0 - x) - 2.0 * (p - 2.0) * x * (x + 1.0) - eps
}

/// The same roots located by bisection on the polynomial, as an oracle for
/// the closed form.
pub fn delta_roots_numeric(eps: f64, p: f64) -> Result<(f64, f64)> {
    let p = check_p(p)?;
    let e = p - 2.0;
    let a = 1.0 + 2.0 * e;
    let peak = (1.0 - e) / a;
    let f = |x: f64| supersolution_polynomial(x, eps, p);
    if f(peak) < 0.0 {
        return Err(Error::Discriminant(f(peak)));
    }
    let bisect = |mut lo: f64, mut hi: f64| {
        // f(lo) <= 0 <= f(hi) or the reverse; keep the sign pattern
        let rising = f(lo) <= f(hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if (f(mid) <= 0.0) == rising {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let minus = if f(0.0) == 0.0 { 0.0 } else { bisect(0.0, peak) };
    let far = peak + (peak * peak + 1.0).sqrt() + 2.0;
    Ok((minus, bisect(peak, far)))
}

/// `σ± = (1 + 1/γ)δ± - 2`.
pub fn sigma_pm(eps: f64, p: f64, c: f64) -> Result<(f64, f64)> {
    let g = gamma_p(p, c)?;
    let (dm, dp) = delta_pm(eps, p)?;
    let k = 1.0 + 1.0 / g;
    Ok((k * dm - 2.0, k * dp - 2.0))
}

/// `ε_p = 4 - δ₊(0,p)/γ(p)`.
pub fn eps_p(p: f64, c: f64) -> Result<f64> {
    let g = gamma_p(p, c)?;
    let (_, dp) = delta_pm(0.0, p)?;
    Ok(4.0 - dp / g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NeckConstants {
    pub p: f64,
    pub eps: f64,
    pub mu: f64,
    pub kappa_gamma: f64,
    pub gamma: f64,
    pub delta_minus: f64,
    pub delta_plus: f64,
    pub sigma_minus: f64,
    pub sigma_plus: f64,
    pub eps_p: f64,
    pub bochner_c: f64,
}

impl NeckConstants {
    pub fn new(p: f64, eps: f64, bochner_c: f64) -> Result<Self> {
        let gamma = gamma_p(p, bochner_c)?;
        let (delta_minus, delta_plus) = delta_pm(eps, p)?;
        let (sigma_minus, sigma_plus) = sigma_pm(eps, p, bochner_c)?;
        Ok(Self {
            p,
            eps,
            mu: mu(p)?,
            kappa_gamma: kappa(p, gamma),
            gamma,
            delta_minus,
            delta_plus,
            sigma_minus,
            sigma_plus,
            eps_p: eps_p(p, bochner_c)?,
            bochner_c,
        })
    }

    /// `(name, value)` pairs in a fixed order, for long-format tables.
    pub fn named(&self) -> [(&'static str, f64); 9] {
        [
            ("mu", self.mu),
            ("kappa_gamma", self.kappa_gamma),
            ("gamma", self.gamma),
            ("delta_minus", self.delta_minus),
            ("delta_plus", self.delta_plus),
            ("sigma_minus", self.sigma_minus),
            ("sigma_plus", self.sigma_plus),
            ("eps_p", self.eps_p),
            ("bochner_c", self.bochner_c),
        ]
    }
}

/// `(1/t²)((t/R)² + (r/t)^{2-ε_p})` at radius t.
#[inline]
pub fn omega_radial(eps_p: f64, big_r: f64, r: f64, t: f64) -> f64 {
    ((t / big_r).powi(2) + (r / t).powf(2.0 - eps_p)) / (t * t)
}

fn annulus_radius(big_r: f64, r: f64, x: [f64; 4]) -> Result<f64> {
    if !(r > 0.0 && r < big_r) {
        return Err(Error::RegionOrdering(format!("need 0 < r = {r} < R = {big_r}")));
    }
    let t = norm(x);
    if t < r || t > big_r {
        return Err(Error::OutOfRange { name: "|x|", value: t, reason: format!("outside [{r}, {big_r}]") });
    }
    Ok(t)
}

/// `ω_{p,R,r}(x)` for `r ≤ |x| ≤ R`.
pub fn weight_omega(p: f64, bochner_c: f64, big_r: f64, r: f64, x: [f64; 4]) -> Result<f64> {
    let t = annulus_radius(big_r, r, x)?;
    Ok(omega_radial(eps_p(p, bochner_c)?, big_r, r, t))
}

/// `ω_{R,r} = ω_{2,R,r}`.
pub fn weight_omega2(big_r: f64, r: f64, x: [f64; 4]) -> Result<f64> {
    let t = annulus_radius(big_r, r, x)?;
    Ok(omega_radial(0.0, big_r, r, t))
}

/// Radial form of the three-piece weight `ω_{η,k}` at `t = |x - q|`.
pub fn omega_eta_k_radial(eta: f64, delta: f64, t: f64) -> f64 {
    let e2 = eta * eta;
    if t >= eta {
        (1.0 + (delta / e2).powi(2)) / e2
    } else if t >= delta / eta {
        ((t / eta).powi(2) + (delta / (eta * t)).powi(2)) / (t * t)
    } else {
        let s = 1.0 + t * t / (delta * delta);
        (e2 / (delta * delta)) * ((delta / e2).powi(2) + (1.0 + 1.0 / e2).powi(2) / (s * s))
    }
}

/// `ω_{η,k}(x)` about the origin; requires `0 < δ_k < η²`.
pub fn weight_omega_eta_k(eta: f64, delta: f64, x: [f64; 4]) -> Result<f64> {
    if !(eta > 0.0 && delta > 0.0 && delta < eta * eta) {
        return Err(Error::RegionOrdering(format!("need 0 < delta = {delta} < eta^2 = {}", eta * eta)));
    }
    Ok(omega_eta_k_radial(eta, delta, norm(x)))
}

/// The limit `ω_{η,∞} = 1/η²`.
pub fn omega_eta_inf(eta: f64) -> f64 {
    1.0 / (eta * eta)
}

/// The rescaled limit `ω̂_{η,∞}(π)` seen by the bubble.
pub fn omega_hat_eta_inf(eta: f64, x: [f64; 4]) -> f64 {
    let t = norm(x);
    if t >= 1.0 / eta {
        (1.0 + 1.0 / (t * t)).powi(2) / (eta * eta)
    } else {
        (1.0 + eta * eta).powi(2) / (eta * eta)
    }
}

/// `ρ^{σ+2} ℒ'_{p,ε} ρ^{-σ} = σ(2-σ) - ε + (p-2)σ(tr 𝒜 - (σ+2)𝒜_xx)`.
pub fn supersolution_value(p: f64, eps: f64, sigma: f64, trace: f64, along: f64) -> f64 {
    sigma * (2.0 - sigma) - eps + (p - 2.0) * sigma * (trace - (sigma + 2.0) * along)
}

/// Geometric grid of n points on `[a, b]`.
pub fn log_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..n).map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SupersolutionReport {
    pub p: f64,
    pub eps: f64,
    pub sigma: f64,
    /// Minimum over the grid and the admissible corners `(tr, 𝒜_xx)` of
    /// `ℒ'_{p,ε} ρ^{-σ}`.
    pub min_value: f64,
    /// The same minimum rescaled by `ρ^{σ+2}`; equals the lower-bound
    /// polynomial `σ(2-σ) - ε - 2(p-2)σ(σ+1)`.
    pub min_scaled: f64,
    pub nonnegative: bool,
    /// Supplied curvature endomorphisms whose 𝒜-term left the proven interval.
    pub endo_violations: usize,
    /// Smallest distance from the 𝒜-term to either end of the interval.
    pub endo_worst_margin: f64,
}

const CORNERS: [(f64, f64); 3] = [(0.0, 0.0), (2.0, 0.0), (2.0, 2.0)];

/// Evaluates `ℒ'_{p,ε} ρ^{-σ}` on the radial grid at the extreme admissible
/// 𝒜 (`0 ≤ 𝒜_xx ≤ tr 𝒜 ≤ 2`) and checks the two-sided 𝒜-term bounds on the
/// supplied endomorphisms along a fixed set of directions.
pub fn supersolution_check(
    p: f64,
    eps: f64,
    sigma: f64,
    radii: &[f64],
    endos: &[CurvatureEndo],
) -> Result<SupersolutionReport> {
    check_p(p)?;
    if sigma < 0.0 {
        return Err(Error::OutOfRange { name: "sigma", value: sigma, reason: "need sigma >= 0".into() });
    }
    let mut min_value = f64::INFINITY;
    let mut min_scaled = f64::INFINITY;
    for &rho in radii {
        for &(tr, axx) in &CORNERS {
            let v = supersolution_value(p, eps, sigma, tr, axx);
            min_scaled = min_scaled.min(v);
            min_value = min_value.min(rho.powf(-sigma - 2.0) * v);
        }
    }
    let scale = 1.0 + sigma * sigma + eps;
    let nonnegative = min_scaled >= -1e-12 * scale;

    let lo = -2.0 * (p - 2.0) * sigma * (sigma + 1.0);
    let hi = 2.0 * (p - 2.0) * sigma;
    let dirs: [[f64; 4]; 6] = [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [1.0, 1.0, 1.0, 1.0],
        [1.0, -2.0, 0.5, 3.0],
    ];
    let mut endo_violations = 0;
    let mut endo_worst_margin = f64::INFINITY;
    for e in endos {
        for x in &dirs {
            let term = (p - 2.0) * sigma * (e.trace() - (sigma + 2.0) * e.along(*x));
            let margin = (term - lo).min(hi - term);
            endo_worst_margin = endo_worst_margin.min(margin);
            if margin < -1e-12 * scale {
                endo_violations += 1;
            }
        }
    }
    Ok(SupersolutionReport { p, eps, sigma, min_value, min_scaled, nonnegative, endo_violations, endo_worst_margin })
}

#[derive(Debug, Clone, Serialize)]
pub struct DyadicProfile {
    /// Inner radii ρ of the shells `B_{2ρ} \ B_ρ`.
    pub radii: Vec<f64>,
    /// `‖F‖_{L²}` on each shell.
    pub energies: Vec<f64>,
    pub sup: f64,
}

fn dyadic_radii(r: f64, big_r: f64) -> Result<Vec<f64>> {
    if !(r > 0.0 && 2.0 * r < big_r) {
        return Err(Error::RegionOrdering(format!("need 0 < 2r < R (r = {r}, R = {big_r})")));
    }
    let mut out = vec![r];
    while 4.0 * out[out.len() - 1] <= big_r * (1.0 + 1e-12) {
        let last = out[out.len() - 1];
        out.push(2.0 * last);
    }
    Ok(out)
}

impl DyadicProfile {
    fn from_energies(radii: Vec<f64>, sq: Vec<f64>) -> Self {
        let energies: Vec<f64> = sq.into_iter().map(|e| e.max(0.0).sqrt()).collect();
        let sup = energies.iter().cloned().fold(0.0, f64::max);
        Self { radii, energies, sup }
    }
}

/// Shell energies of a lattice curvature about `center` for ρ = r, 2r, …
/// with `2ρ ≤ R`.
pub fn dyadic_profile(f: &CurvatureField, center: [f64; 4], r: f64, big_r: f64) -> Result<DyadicProfile> {
    let radii = dyadic_radii(r, big_r)?;
    let dom = f.domain();
    let mut acc: Vec<NeumaierSum> = vec![NeumaierSum::default(); radii.len()];
    for s in 0..dom.site_count() {
        if !dom.is_inside(s) {
            continue;
        }
        let t = dist(dom.coord(s), center);
        if t < r || t >= 2.0 * radii[radii.len() - 1] {
            continue;
        }
        let j = ((t / r).log2().floor() as usize).min(radii.len() - 1);
        acc[j].add(f.norms()[s].powi(2));
    }
    let sq = acc.iter().map(|a| a.value() * dom.cell()).collect();
    Ok(DyadicProfile::from_energies(radii, sq))
}

/// Shell energies of a radially symmetric curvature with `|F|²(t)` given.
pub fn dyadic_profile_radial(density: impl Fn(f64) -> f64, r: f64, big_r: f64) -> Result<DyadicProfile> {
    let radii = dyadic_radii(r, big_r)?;
    let sq = radii.iter().map(|&rho| radial_integral(rho, 2.0 * rho, &density)).collect();
    Ok(DyadicProfile::from_energies(radii, sq))
}

fn dist(x: [f64; 4], y: [f64; 4]) -> f64 {
    norm([x[0] - y[0], x[1] - y[1], x[2] - y[2], x[3] - y[3]])
}

fn check_thickness(r: f64, big_r: f64) -> Result<()> {
    if !(r > 0.0 && big_r >= 16.0 * r) {
        return Err(Error::AnnulusTooThin(format!("R/r = {} < 16 leaves fewer than 4 dyadic shells", big_r / r)));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct PointwiseBound {
    /// `‖F‖_{L²(B_{2R} \ B_{r/2})}`.
    pub energy: f64,
    /// `sup |F| / (E ω_{p,R,r})` over the annulus.
    pub constant: f64,
    pub eps_p: f64,
}

/// Fits the constant in `|F| ≤ C E ω_{p,R,r}` on lattice sites of `B_R \ B_r`.
pub fn pointwise_bound_check(
    f: &CurvatureField,
    center: [f64; 4],
    p: f64,
    bochner_c: f64,
    r: f64,
    big_r: f64,
) -> Result<PointwiseBound> {
    check_thickness(r, big_r)?;
    let ep = eps_p(p, bochner_c)?;
    let dom = f.domain();
    let mut energy = NeumaierSum::default();
    let mut constant: f64 = 0.0;
    let mut samples = Vec::new();
    for s in 0..dom.site_count() {
        if !dom.is_inside(s) {
            continue;
        }
        let t = dist(dom.coord(s), center);
        let n = f.norms()[s];
        if (0.5 * r..=2.0 * big_r).contains(&t) {
            energy.add(n * n);
        }
        if (r..=big_r).contains(&t) {
            samples.push((t, n));
        }
    }
    let e = (energy.value() * dom.cell()).sqrt();
    if e > 0.0 {
        for (t, n) in samples {
            constant = constant.max(n / (e * omega_radial(ep, big_r, r, t)));
        }
    }
    Ok(PointwiseBound { energy: e, constant, eps_p: ep })
}

/// The same fit for a radial profile `|F|(t)`, sampled on `n` log-spaced radii.
pub fn pointwise_bound_radial(
    modulus: impl Fn(f64) -> f64,
    p: f64,
    bochner_c: f64,
    r: f64,
    big_r: f64,
    n: usize,
) -> Result<PointwiseBound> {
    check_thickness(r, big_r)?;
    let ep = eps_p(p, bochner_c)?;
    let e = radial_integral(0.5 * r, 2.0 * big_r, |t| modulus(t).powi(2)).sqrt();
    let mut constant: f64 = 0.0;
    if e > 0.0 {
        for t in log_grid(r, big_r, n) {
            constant = constant.max(modulus(t) / (e * omega_radial(ep, big_r, r, t)));
        }
    }
    Ok(PointwiseBound { energy: e, constant, eps_p: ep })
}

/// Samples of the neck weights and the dyadic energies of a radial profile.
#[derive(Debug, Clone, Serialize)]
pub struct NeckProfile {
    pub r: f64,
    pub big_r: f64,
    pub p: f64,
    pub eps_p: f64,
    pub radii: Vec<f64>,
    pub omega_p: Vec<f64>,
    pub omega_2: Vec<f64>,
    pub dyadic: DyadicProfile,
}

impl NeckProfile {
    pub fn radial(
        p: f64,
        bochner_c: f64,
        r: f64,
        big_r: f64,
        n: usize,
        density: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        if !(r > 0.0 && 4.0 * r < big_r) {
            return Err(Error::RegionOrdering(format!("need 0 < 4r < R (r = {r}, R = {big_r})")));
        }
        let ep = eps_p(p, bochner_c)?;
        let radii = log_grid(r, big_r, n);
        let omega_p = radii.iter().map(|&t| omega_radial(ep, big_r, r, t)).collect();
        let omega_2 = radii.iter().map(|&t| omega_radial(0.0, big_r, r, t)).collect();
        let dyadic = dyadic_profile_radial(density, r, big_r)?;
        Ok(Self { r, big_r, p, eps_p: ep, radii, omega_p, omega_2, dyadic })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PositivityRatio {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

impl PositivityRatio {
    pub(crate) fn new(lhs: f64, rhs: f64) -> Self {
        Self { lhs, rhs, ratio: lhs / rhs }
    }
}

fn check_annulus_support(a: &LatticeForm, center: [f64; 4], r: f64, big_r: f64) -> Result<()> {
    let dom = a.domain();
    for s in 0..dom.site_count() {
        if a.site(s).iter().all(|v| *v == 0.0) {
            continue;
        }
        let t = dist(dom.coord(s), center);
        if !dom.is_interior(s) || t < r || t > big_r {
            return Err(Error::SupportViolation { site: s });
        }
    }
    Ok(())
}

/// `∫ |a|² ω_{R,r}(x - q)` over inside sites.
fn weighted_mass(a: &LatticeForm, center: [f64; 4], r: f64, big_r: f64) -> f64 {
    let dom = a.domain();
    let mut acc = NeumaierSum::default();
    for s in 0..dom.site_count() {
        let v = a.site(s);
        if v.iter().all(|x| *x == 0.0) {
            continue;
        }
        let t = dist(dom.coord(s), center);
        acc.add(dot(v, v) * omega_radial(0.0, big_r, r, t));
    }
    acc.value() * dom.cell()
}

/// Lattice form of the neck-positivity ratio:
/// `∫ ρ(|d_A a|² + |d_A^* a|² + ⟨F, [a∧a]⟩)` against `∫ |a|² ω_{R,r}`.
pub fn neck_positivity_check(
    a: &GaugeField,
    p: PExponent,
    pert: &LatticeForm,
    center: [f64; 4],
    r: f64,
    big_r: f64,
) -> Result<PositivityRatio> {
    check_annulus_support(pert, center, r, big_r)?;
    let lhs = q_frak_normalized(a, pert, p)?;
    Ok(PositivityRatio::new(lhs, weighted_mass(pert, center, r, big_r)))
}

/// `(∫ |a|² ω_{R,r}, ‖da‖² + ‖d*a‖²)` for a perturbation supported in the annulus.
pub fn gaffney_hardy_neck(pert: &LatticeForm, center: [f64; 4], r: f64, big_r: f64) -> Result<(f64, f64)> {
    check_annulus_support(pert, center, r, big_r)?;
    let da = d(pert)?;
    let dsa = d_star(pert)?;
    let rhs = da.pairing(&da)? + dsa.pairing(&dsa)?;
    Ok((weighted_mass(pert, center, r, big_r), rhs))
}

/// `Σ_{μ,ν} ‖∂⁺_μ a_ν‖²` with forward differences; reads outside a box are zero.
pub fn full_gradient_sq(a: &LatticeForm) -> f64 {
    let dom = a.domain();
    let w = a.site_width();
    let h = dom.h();
    let mut acc = NeumaierSum::default();
    for s in 0..dom.site_count() {
        let here = a.site(s);
        for mu in 0..4 {
            let next = dom.shift(s, mu, 1).map(|t| a.site(t));
            for i in 0..w {
                let v = (next.map_or(0.0, |n| n[i]) - here[i]) / h;
                acc.add(v * v);
            }
        }
    }
    acc.value() * dom.cell()
}

/// `|‖da‖² + ‖d*a‖² - ‖∇a‖²|` relative to `‖∇a‖²`; exactly zero in exact
/// arithmetic on a torus and for interior-supported forms on a box.
pub fn gaffney_defect(a: &LatticeForm) -> Result<f64> {
    let da = d(a)?;
    let dsa = d_star(a)?;
    let lhs = da.pairing(&da)? + dsa.pairing(&dsa)?;
    let grad = full_gradient_sq(a);
    Ok((lhs - grad).abs() / grad.max(f64::MIN_POSITIVE))
}

/// A compactly supported bump `Σ_m c_m (1 - |x - x_m|²/w_m²)³_+`.
#[derive(Debug, Clone, Serialize)]
pub struct Bump {
    pub centers: Vec<[f64; 4]>,
    pub widths: Vec<f64>,
    pub coeffs: Vec<f64>,
}

impl Bump {
    pub fn eval(&self, x: [f64; 4]) -> f64 {
        let mut v = 0.0;
        for ((c, w), a) in self.centers.iter().zip(&self.widths).zip(&self.coeffs) {
            let s = 1.0 - dist(x, *c).powi(2) / (w * w);
            if s > 0.0 {
                v += a * s * s * s;
            }
        }
        v
    }

    /// Random bump whose support stays inside the open ball of radius `reach`.
    pub fn random(rng: &mut impl Rng, reach: f64, min_width: f64) -> Self {
        let m = rng.random_range(1..=3);
        let mut b = Bump { centers: vec![], widths: vec![], coeffs: vec![] };
        for _ in 0..m {
            let w = rng.random_range(min_width..=(0.5 * reach).max(min_width));
            let room = (reach - w).max(0.0);
            // one center in three sits on the origin cell
            let c = if rng.random_range(0..3) == 0 {
                [0.0; 4]
            } else {
                let dir: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let n = norm(dir).max(1e-12);
                let t = rng.random_range(0.0..=1.0) * room;
                dir.map(|v| v / n * t)
            };
            b.centers.push(c);
            b.widths.push(w);
            b.coeffs.push(rng.random_range(-1.0..1.0));
        }
        b
    }

    fn reach(&self) -> f64 {
        self.centers.iter().zip(&self.widths).map(|(c, w)| norm(*c) + w).fold(0.0, f64::max)
    }
}

/// `(∫ f²/|x|², ‖df‖²)` for a bump sampled on the domain.
pub fn hardy_sides(dom: &Domain, f: &Bump) -> (f64, f64) {
    let h = dom.h();
    let reach = f.reach() + 2.0 * h;
    let mut lhs = NeumaierSum::default();
    let mut rhs = NeumaierSum::default();
    let n = dom.n();
    let lo = |c: f64| {
        let i = ((c - reach) / h + n as f64 / 2.0 - 0.5).floor().max(0.0) as usize;
        i.min(n)
    };
    let hi = |c: f64| (((c + reach) / h + n as f64 / 2.0 + 0.5).ceil().max(0.0) as usize).min(n);
    let (a, b) = (lo(0.0), hi(0.0));
    for i0 in a..b {
        for i1 in a..b {
            for i2 in a..b {
                for i3 in a..b {
                    let s = dom.index([i0, i1, i2, i3]);
                    let x = dom.coord(s);
                    let v = f.eval(x);
                    if v != 0.0 {
                        lhs.add(v * v / norm(x).powi(2));
                    }
                    for mu in 0..4 {
                        let mut y = x;
                        y[mu] += h;
                        let g = (f.eval(y) - v) / h;
                        rhs.add(g * g);
                    }
                }
            }
        }
    }
    (lhs.value() * dom.cell(), rhs.value() * dom.cell())
}

#[derive(Debug, Clone, Serialize)]
pub struct HardyReport {
    pub samples: usize,
    pub h: f64,
    pub worst_ratio: f64,
    pub mean_ratio: f64,
    pub worst: Bump,
}

/// Discrete Hardy ratios `∫ f²/|x|² / ∫ |df|²` on random bumps in `B_1`.
pub fn hardy_battery(samples: usize, h: f64, seed: u64) -> Result<HardyReport> {
    let dom = Arc::new(Domain::ball(1.0, h)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_ratio = f64::NEG_INFINITY;
    let mut worst = None;
    let mut total = 0.0;
    for _ in 0..samples {
        let b = Bump::random(&mut rng, 1.0 - 2.0 * h, 3.0 * h);
        let (lhs, rhs) = hardy_sides(&dom, &b);
        let ratio = if rhs > 0.0 { lhs / rhs } else { 0.0 };
        total += ratio;
        if ratio > worst_ratio {
            worst_ratio = ratio;
            worst = Some(b);
        }
    }
    Ok(HardyReport {
        samples,
        h,
        worst_ratio,
        mean_ratio: total / samples.max(1) as f64,
        worst: worst.unwrap_or(Bump { centers: vec![], widths: vec![], coeffs: vec![] }),
    })
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn vieta_on_the_admissible_grid(p in 2.0..2.99f64, frac in 0.0..1.0f64) {
            let a = 1.0 + 2.0 * (p - 2.0);
            let eps = (frac * (3.0 - p).powi(2) / a).min(0.999);
            let (dm, dp) = delta_pm(eps, p).unwrap();
            prop_assert!((dm + dp - 2.0 * (3.0 - p) / a).abs() < 1e-12);
            prop_assert!((dm * dp - eps / a).abs() < 1e-12);
            prop_assert!(dm <= dp && dm >= 0.0);
        }

        #[test]
        fn constants_approach_their_values_at_two(t in 1e-9..1e-4f64) {
            let k = NeckConstants::new(2.0 + t, 0.0, 1.0).unwrap();
            // the slowest constant, σ₊, moves at rate ≈ 50 near p = 2
            let tol = 100.0 * t;
            prop_assert!((k.gamma - 0.5).abs() < tol);
            prop_assert!((k.mu - 1.5).abs() < tol);
            prop_assert!(k.delta_minus.abs() < tol && (k.delta_plus - 2.0).abs() < tol);
            prop_assert!((k.sigma_minus + 2.0).abs() < tol && (k.sigma_plus - 4.0).abs() < tol);
            prop_assert!(k.eps_p.abs() < tol);
        }

        #[test]
        fn omega_eta_k_is_continuous_at_region_boundaries(eta in 0.05..0.9f64, j in 1u32..20) {
            let delta = eta * eta * 0.5f64.powi(j as i32);
            for edge in [delta / eta, eta] {
                let (lo, hi) = (omega_eta_k_radial(eta, delta, edge * (1.0 - 1e-9)), omega_eta_k_radial(eta, delta, edge * (1.0 + 1e-9)));
                prop_assert!((lo - hi).abs() <= 1e-6 * lo.abs().max(hi.abs()), "{edge}: {lo} vs {hi}");
            }
        }
    }
}
