//! BPST instantons, glued bubbles, bubbling families and their energy, scale
//! and index bookkeeping.
//!
//! Continuum su(2) potentials are carried as imaginary-quaternion 3-vectors
//! per direction, with quaternion units `i_a ↦ -iσ_a = √(2c) T_a`, so a
//! component `q` has algebra coefficients `√(2c) q` and `|X|² = 2c |q|²`.
//! The commutator of imaginary quaternions is `[u, v] = 2 u × v`.

use std::f64::consts::{LN_2, PI};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::algebra::lie::Algebra;
use crate::error::{Error, Result};
use crate::field::{CurvatureField, GaugeField, LatticeForm};
use crate::functional::{flow, FlowOptions, FormKind, PExponent};
use crate::lattice::{norm, Domain, NeumaierSum};
use crate::neck::{omega_eta_inf, omega_eta_k_radial, omega_hat_eta_inf};
use crate::quadrature::{gauss_legendre, radial_integral, LogRule};
use crate::spectral::{assemble, solve, SolveOptions, SpectralReport, WeightField};

pub type QVec = [f64; 3];
pub type QPotential = [QVec; 4];
/// Components ordered 01, 02, 03, 12, 13, 23.
pub type QCurvature = [QVec; 6];

const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Minimum resolution `λ / h` accepted when sampling a bubble on a lattice.
pub const MIN_SCALE_RATIO: f64 = 4.0;

fn qmul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

fn conj(a: [f64; 4]) -> [f64; 4] {
    [a[0], -a[1], -a[2], -a[3]]
}

fn im(a: [f64; 4]) -> QVec {
    [a[1], a[2], a[3]]
}

#[inline]
pub fn cross(a: QVec, b: QVec) -> QVec {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn dot3(a: QVec, b: QVec) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub4(x: [f64; 4], y: [f64; 4]) -> [f64; 4] {
    [x[0] - y[0], x[1] - y[1], x[2] - y[2], x[3] - y[3]]
}

/// `ū v u` for a unit quaternion u.
fn conjugate_by(u: [f64; 4], v: QVec) -> QVec {
    im(qmul(qmul(conj(u), [0.0, v[0], v[1], v[2]]), u))
}

fn unit(mu: usize) -> [f64; 4] {
    let mut e = [0.0; 4];
    e[mu] = 1.0;
    e
}

/// `Im(ȳ e_μ) / s` per direction.
fn im_ybar_dy(y: [f64; 4], s: f64) -> QPotential {
    std::array::from_fn(|mu| im(qmul(conj(y), unit(mu))).map(|v| v / s))
}

/// Quintic smoothstep cutoff: 1 on [0,1], 0 on [2,∞), C² at both ends.
pub fn cutoff(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        let t = s - 1.0;
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

pub fn cutoff_derivative(s: f64) -> f64 {
    if s <= 1.0 || s >= 2.0 {
        0.0
    } else {
        let t = s - 1.0;
        -30.0 * t * t * (1.0 - t) * (1.0 - t)
    }
}

/// A smooth su(2) potential on R⁴.
pub trait ContinuumField: Sync {
    fn potential(&self, x: [f64; 4]) -> QPotential;
    /// Local length scale, used to size finite-difference steps.
    fn length_scale(&self, x: [f64; 4]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BubbleSpec {
    pub center: [f64; 4],
    pub scale: f64,
    /// Unit quaternion u; the bubble is conjugated by `u⁻¹ · u`.
    #[serde(default = "identity_quaternion")]
    pub orientation: [f64; 4],
}

fn identity_quaternion() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl BubbleSpec {
    pub fn new(center: [f64; 4], scale: f64) -> Result<Self> {
        Self::oriented(center, scale, identity_quaternion())
    }

    pub fn oriented(center: [f64; 4], scale: f64, orientation: [f64; 4]) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::OutOfRange { name: "lambda", value: scale, reason: "need lambda > 0".into() });
        }
        let n = norm(orientation);
        if !(n > 0.0) {
            return Err(Error::OutOfRange { name: "orientation", value: n, reason: "need a nonzero quaternion".into() });
        }
        Ok(Self { center, scale, orientation: orientation.map(|v| v / n) })
    }
}

/// Regular-gauge charge-1 instanton `Im(ȳ dy)/(|y|² + λ²)`, `y = x - q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bpst(pub BubbleSpec);

impl ContinuumField for Bpst {
    fn potential(&self, x: [f64; 4]) -> QPotential {
        let b = &self.0;
        let y = sub4(x, b.center);
        let a = im_ybar_dy(y, norm(y).powi(2) + b.scale * b.scale);
        a.map(|v| conjugate_by(b.orientation, v))
    }

    fn length_scale(&self, x: [f64; 4]) -> f64 {
        (norm(sub4(x, self.0.center)).powi(2) + self.0.scale.powi(2)).sqrt()
    }
}

/// `|F|²` of a BPST of scale λ at distance t, in the c = 1 normalization.
pub fn bpst_density(lambda: f64, t: f64) -> f64 {
    48.0 * lambda.powi(4) / (t * t + lambda * lambda).powi(4)
}

/// `∫_{B_ρ} |F|²` of a BPST, c = 1: `8π²(1 - 3s² + 2s³)`, `s = λ²/(ρ²+λ²)`.
pub fn bpst_enclosed_energy(lambda: f64, rho: f64) -> f64 {
    let s = lambda * lambda / (rho * rho + lambda * lambda);
    8.0 * PI * PI * (1.0 - 3.0 * s * s + 2.0 * s * s * s)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Flat;

impl ContinuumField for Flat {
    fn potential(&self, _x: [f64; 4]) -> QPotential {
        [[0.0; 3]; 4]
    }

    fn length_scale(&self, _x: [f64; 4]) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackgroundSpec {
    #[default]
    Flat,
    Instanton { center: [f64; 4], scale: f64 },
}

impl BackgroundSpec {
    fn potential(&self, x: [f64; 4]) -> QPotential {
        match *self {
            BackgroundSpec::Flat => [[0.0; 3]; 4],
            BackgroundSpec::Instanton { center, scale } => {
                Bpst(BubbleSpec { center, scale, orientation: identity_quaternion() }).potential(x)
            }
        }
    }

    fn length_scale(&self, x: [f64; 4]) -> f64 {
        match *self {
            BackgroundSpec::Flat => f64::INFINITY,
            BackgroundSpec::Instanton { center, scale } => (norm(sub4(x, center)).powi(2) + scale * scale).sqrt(),
        }
    }

    /// Total `∫|F|²` in the c = 1 normalization.
    pub fn energy(&self) -> f64 {
        match self {
            BackgroundSpec::Flat => 0.0,
            BackgroundSpec::Instanton { .. } => 8.0 * PI * PI,
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, BackgroundSpec::Flat)
    }
}

/// A bubble glued into a background at cutoff radius η:
/// `Ad_{u⁻¹}[(1 - χ λ²/(r²+λ²)) ω_q + (1 - χ) Ad_{g⁻¹} A_bg]` with
/// `χ = cutoff(r/η)`, `g = y/|y|` and `ω_q = g⁻¹dg`.  Inside `B_η(q)` this is
/// the pure regular-gauge bubble; outside `B_{2η}(q)` it is the background
/// in the gauge `g u`.  Scale 0 gives the bubble-free limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GluedBubble {
    pub bubble: BubbleSpec,
    pub eta: f64,
    pub background: BackgroundSpec,
}

impl GluedBubble {
    pub fn new(background: BackgroundSpec, bubble: BubbleSpec, eta: f64) -> Result<Self> {
        if bubble.scale > eta / 4.0 {
            return Err(Error::ScaleSeparation { lambda: bubble.scale, eta });
        }
        Ok(Self { bubble, eta, background })
    }

    /// The field with the bubble removed (λ → 0), in the same gauge.
    pub fn limit(&self) -> Self {
        Self { bubble: BubbleSpec { scale: 0.0, ..self.bubble }, ..*self }
    }

    /// `(1 - χ) A_bg`, gauge equivalent to the limit and smooth at q.
    pub fn limit_smooth(&self) -> impl ContinuumField + '_ {
        CutBackground(self)
    }

    /// Radial profile `φ` with `A = φ ω` for a flat background.
    pub fn profile(&self, t: f64) -> f64 {
        let l2 = self.bubble.scale.powi(2);
        if l2 == 0.0 {
            return 1.0;
        }
        1.0 - cutoff(t / self.eta) * l2 / (t * t + l2)
    }

    fn profile_derivative(&self, t: f64) -> f64 {
        let l2 = self.bubble.scale.powi(2);
        let s = t * t + l2;
        -cutoff_derivative(t / self.eta) / self.eta * l2 / s + cutoff(t / self.eta) * 2.0 * t * l2 / (s * s)
    }

    /// `|F|²(t)` on a flat background from the radial ansatz
    /// `6φ'²/t² + 24φ²(1-φ)²/t⁴`, c = 1.
    pub fn radial_density(&self, t: f64) -> f64 {
        let l = self.bubble.scale;
        if t < 1e-3 * l {
            // Taylor limit at the center of the regular-gauge bubble
            return bpst_density(l, t);
        }
        let f = self.profile(t);
        let df = self.profile_derivative(t);
        6.0 * df * df / (t * t) + 24.0 * (f * (1.0 - f)).powi(2) / t.powi(4)
    }
}

impl ContinuumField for GluedBubble {
    fn potential(&self, x: [f64; 4]) -> QPotential {
        let b = &self.bubble;
        let y = sub4(x, b.center);
        let r = norm(y);
        let chi = cutoff(r / self.eta);
        let mut out = [[0.0; 3]; 4];
        if r > 0.0 {
            let omega = im_ybar_dy(y, r * r);
            let phi = self.profile(r);
            let g = y.map(|v| v / r);
            let bg = if chi < 1.0 && !self.background.is_flat() { Some(self.background.potential(x)) } else { None };
            for mu in 0..4 {
                let mut v = omega[mu].map(|w| phi * w);
                if let Some(bg) = &bg {
                    let t = conjugate_by(g, bg[mu]);
                    for a in 0..3 {
                        v[a] += (1.0 - chi) * t[a];
                    }
                }
                out[mu] = conjugate_by(b.orientation, v);
            }
        }
        out
    }

    fn length_scale(&self, x: [f64; 4]) -> f64 {
        let r = norm(sub4(x, self.bubble.center));
        let core = (r * r + self.bubble.scale.powi(2)).sqrt();
        core.min(self.eta).min(self.background.length_scale(x))
    }
}

struct CutBackground<'a>(&'a GluedBubble);

impl ContinuumField for CutBackground<'_> {
    fn potential(&self, x: [f64; 4]) -> QPotential {
        let g = self.0;
        let chi = cutoff(norm(sub4(x, g.bubble.center)) / g.eta);
        g.background.potential(x).map(|v| v.map(|w| (1.0 - chi) * w))
    }

    fn length_scale(&self, x: [f64; 4]) -> f64 {
        self.0.eta.min(self.0.background.length_scale(x))
    }
}

/// Curvature `∂_μA_ν - ∂_νA_μ + 2 A_μ × A_ν` by fourth-order central
/// differences with step `1e-3` of the local length scale.
pub fn curvature_fd(field: &impl ContinuumField, x: [f64; 4]) -> QCurvature {
    let s = 1e-3 * field.length_scale(x);
    let mut grad = [[[0.0; 3]; 4]; 4]; // grad[mu][nu] = ∂_μ A_ν
    for mu in 0..4 {
        let at = |k: f64| {
            let mut y = x;
            y[mu] += k * s;
            field.potential(y)
        };
        let (p2, p1, m1, m2) = (at(2.0), at(1.0), at(-1.0), at(-2.0));
        for nu in 0..4 {
            for a in 0..3 {
                grad[mu][nu][a] = (-p2[nu][a] + 8.0 * p1[nu][a] - 8.0 * m1[nu][a] + m2[nu][a]) / (12.0 * s);
            }
        }
    }
    let a = field.potential(x);
    std::array::from_fn(|i| {
        let (mu, nu) = PAIRS[i];
        let c = cross(a[mu], a[nu]);
        std::array::from_fn(|k| grad[mu][nu][k] - grad[nu][mu][k] + 2.0 * c[k])
    })
}

/// `|F|² = 2c Σ_{μ<ν} |F_μν|²`.
pub fn curvature_sq(f: &QCurvature, c: f64) -> f64 {
    2.0 * c * f.iter().map(|v| dot3(*v, *v)).sum::<f64>()
}

/// The lattice curvature at site x: forward differences with spacing h and
/// the bracket at x, matching `field::curvature` on sampled data.
pub fn lattice_curvature_at(field: &impl ContinuumField, x: [f64; 4], h: f64) -> QCurvature {
    let a = field.potential(x);
    let shifted: [QPotential; 4] = std::array::from_fn(|mu| {
        let mut y = x;
        y[mu] += h;
        field.potential(y)
    });
    std::array::from_fn(|i| {
        let (mu, nu) = PAIRS[i];
        let c = cross(a[mu], a[nu]);
        std::array::from_fn(|k| {
            (shifted[mu][nu][k] - a[nu][k]) / h - (shifted[nu][mu][k] - a[mu][k]) / h + 2.0 * c[k]
        })
    })
}

fn check_su2(alg: &Algebra) -> Result<f64> {
    if alg.matrix_size() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: alg.matrix_size() });
    }
    Ok(alg.scale())
}

/// Samples a continuum potential at every box site, shifted so that the
/// lattice origin sits at `origin`.
pub fn sample(
    field: &impl ContinuumField,
    alg: &Arc<Algebra>,
    domain: &Arc<Domain>,
    origin: [f64; 4],
) -> Result<GaugeField> {
    let c = check_su2(alg)?;
    let k = (2.0 * c).sqrt();
    GaugeField::from_fn(alg, domain, |_, x, out| {
        let a = field.potential([x[0] + origin[0], x[1] + origin[1], x[2] + origin[2], x[3] + origin[3]]);
        for mu in 0..4 {
            for i in 0..3 {
                out[mu * 3 + i] = k * a[mu][i];
            }
        }
    })
}

fn check_resolution(scale: f64, h: f64) -> Result<()> {
    if scale < MIN_SCALE_RATIO * h {
        return Err(Error::UnderResolved { scale, h, min_ratio: MIN_SCALE_RATIO });
    }
    Ok(())
}

/// Regular-gauge BPST of scale λ centered at `center`, sampled on the lattice.
pub fn bpst(lambda: f64, center: [f64; 4], alg: &Arc<Algebra>, domain: &Arc<Domain>) -> Result<GaugeField> {
    let spec = BubbleSpec::new(center, lambda)?;
    check_resolution(lambda, domain.h())?;
    sample(&Bpst(spec), alg, domain, [0.0; 4])
}

/// Lattice gluing of a bubble into a sampled background.  Outside
/// `B_{2η}(q)` the result is the background in the singular gauge `g u`,
/// which is a lattice approximation of a gauge transform, not a bitwise copy.
pub fn glue(background: &GaugeField, bubble: &BubbleSpec, eta: f64) -> Result<GaugeField> {
    if bubble.scale > eta / 4.0 {
        return Err(Error::ScaleSeparation { lambda: bubble.scale, eta });
    }
    let alg = background.algebra().clone();
    let c = check_su2(&alg)?;
    let dom = background.domain().clone();
    check_resolution(bubble.scale, dom.h())?;
    let k = (2.0 * c).sqrt();
    let shape = GluedBubble { bubble: *bubble, eta, background: BackgroundSpec::Flat };
    let src = background.form();
    GaugeField::from_fn(&alg, &dom, |s, x, out| {
        let y = sub4(x, bubble.center);
        let r = norm(y);
        let chi = cutoff(r / eta);
        let mut bubble_part = shape.potential(x);
        if r > 0.0 && chi < 1.0 {
            let g = y.map(|v| v / r);
            let site = src.site(s);
            for mu in 0..4 {
                let bg = [site[mu * 3] / k, site[mu * 3 + 1] / k, site[mu * 3 + 2] / k];
                let t = conjugate_by(bubble.orientation, conjugate_by(g, bg));
                for a in 0..3 {
                    bubble_part[mu][a] += (1.0 - chi) * t[a];
                }
            }
        }
        for mu in 0..4 {
            for i in 0..3 {
                out[mu * 3 + i] = k * bubble_part[mu][i];
            }
        }
    })
}

/// `∫_{|x| < R} |F|²` of the lattice curvature of a sampled continuum field,
/// streamed over the cell-centered sites of a ball without storing the field.
pub fn lattice_energy_stream(field: &impl ContinuumField, c: f64, radius: f64, h: f64) -> f64 {
    let half = (radius / h).ceil() as usize + 1;
    let n = 2 * half;
    let coord = |i: usize| (i as f64 + 0.5 - half as f64) * h;
    let mut acc = NeumaierSum::default();
    for i0 in 0..n {
        let x0 = coord(i0);
        for i1 in 0..n {
            let x1 = coord(i1);
            if x0 * x0 + x1 * x1 >= radius * radius {
                continue;
            }
            for i2 in 0..n {
                let x2 = coord(i2);
                let r3 = x0 * x0 + x1 * x1 + x2 * x2;
                if r3 >= radius * radius {
                    continue;
                }
                let mut shell = 0.0;
                for i3 in 0..n {
                    let x3 = coord(i3);
                    if r3 + x3 * x3 >= radius * radius {
                        continue;
                    }
                    let f = lattice_curvature_at(field, [x0, x1, x2, x3], h);
                    shell += curvature_sq(&f, c);
                }
                acc.add(shell);
            }
        }
    }
    acc.value() * h.powi(4)
}

/// Quadrature on the unit sphere S³ in Hopf coordinates
/// `(cos ψ cos ξ₁, cos ψ sin ξ₁, sin ψ cos ξ₂, sin ψ sin ξ₂)` with measure
/// `sin ψ cos ψ dψ dξ₁ dξ₂`.  Weights sum to 2π².
#[derive(Debug, Clone)]
pub struct SphereRule {
    pub dirs: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    pub fn hopf(n_psi: usize, n_xi: usize) -> Self {
        let (gx, gw) = gauss_legendre(n_psi);
        let mut dirs = Vec::new();
        let mut weights = Vec::new();
        let dxi = 2.0 * PI / n_xi as f64;
        for (x, w) in gx.iter().zip(&gw) {
            let psi = 0.25 * PI * (x + 1.0);
            let wpsi = 0.25 * PI * w * psi.sin() * psi.cos();
            for i in 0..n_xi {
                // stagger the two circles so no node sits on a coordinate axis
                let a = (i as f64 + 0.5) * dxi;
                for j in 0..n_xi {
                    let b = (j as f64 + 0.25) * dxi;
                    dirs.push([psi.cos() * a.cos(), psi.cos() * a.sin(), psi.sin() * b.cos(), psi.sin() * b.sin()]);
                    weights.push(wpsi * dxi * dxi);
                }
            }
        }
        Self { dirs, weights }
    }
}

/// `∫_{a ≤ |x-q| ≤ b} g(x) dx` on log-spaced radial panels times a sphere rule.
pub fn shell_integral(center: [f64; 4], a: f64, b: f64, panels_per_octave: usize, sphere: &SphereRule, g: impl Fn([f64; 4]) -> f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let panels = (((b / a).log2() * panels_per_octave as f64).ceil() as usize).max(1);
    let rule = LogRule::new(a, b, panels, 8);
    let mut acc = NeumaierSum::default();
    for (t, wt) in rule.nodes.iter().zip(&rule.weights) {
        let mut s = 0.0;
        for (d, w) in sphere.dirs.iter().zip(&sphere.weights) {
            let x = [center[0] + t * d[0], center[1] + t * d[1], center[2] + t * d[2], center[3] + t * d[3]];
            s += w * g(x);
        }
        acc.add(wt * t.powi(3) * s);
    }
    acc.value()
}

/// Smallest radius δ with `∫_{B(q,δ)} |F|² ≥ ε₀/2`, searched over the
/// distances of inside lattice sites from q.
pub fn detect_bubble_scale(f: &CurvatureField, q: [f64; 4], eps0: f64) -> Result<f64> {
    let dom = f.domain();
    let mut sites: Vec<(f64, f64)> = (0..dom.site_count())
        .filter(|&s| dom.is_inside(s))
        .map(|s| (norm(sub4(dom.coord(s), q)), f.norms()[s].powi(2) * dom.cell()))
        .collect();
    sites.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cumulative = Vec::with_capacity(sites.len());
    let mut acc = NeumaierSum::default();
    for (_, e) in &sites {
        acc.add(*e);
        cumulative.push(acc.value());
    }
    let half = 0.5 * eps0;
    let total = cumulative.last().copied().unwrap_or(0.0);
    if !(total >= half) || half <= 0.0 {
        return Err(Error::NoBubble { total, half });
    }
    // cumulative energy is monotone in the radius, so bisect
    let i = cumulative.partition_point(|e| *e < half);
    Ok(sites[i].0)
}

/// The same scale for a radial density `|F|²(t)`, bisecting the enclosed
/// energy on `(0, r_max]`.
pub fn detect_bubble_scale_radial(density: impl Fn(f64) -> f64, eps0: f64, r_max: f64) -> Result<f64> {
    let enclosed = |rho: f64| radial_integral(0.0, rho, &density);
    let half = 0.5 * eps0;
    let total = enclosed(r_max);
    if !(total >= half) || half <= 0.0 {
        return Err(Error::NoBubble { total, half });
    }
    let (mut lo, mut hi) = (0.0, r_max);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if enclosed(mid) >= half {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(hi)
}

/// How the exponent approaches 2 along a family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PSchedule {
    /// `p_k = 2 + 1/log(1/δ_k)`: the product `(p_k - 2) log(1/δ_k)` is 1.
    #[default]
    LogInverse,
    /// `p_k = 2 + 1/√log(1/δ_k)`: the product grows without bound.
    SqrtLogInverse,
}

/// Bubbles of scale `δ_k = 2^{-k} η²` glued at cutoff η into a background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BubblingFamily {
    pub eta: f64,
    #[serde(default)]
    pub background: BackgroundSpec,
    pub centers: Vec<[f64; 4]>,
    #[serde(default)]
    pub orientations: Vec<[f64; 4]>,
    #[serde(default)]
    pub schedule: PSchedule,
}

impl BubblingFamily {
    /// One bubble at the origin on a flat background.
    pub fn default_family(eta: f64) -> Self {
        Self {
            eta,
            background: BackgroundSpec::Flat,
            centers: vec![[0.0; 4]],
            orientations: vec![],
            schedule: PSchedule::LogInverse,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::OutOfRange { name: "eta", value: self.eta, reason: "need 0 < eta < 1".into() });
        }
        for (i, a) in self.centers.iter().enumerate() {
            for b in &self.centers[i + 1..] {
                let sep = norm(sub4(*a, *b));
                if sep < 4.0 * self.eta {
                    return Err(Error::RegionOrdering(format!(
                        "bubble centers {sep} apart overlap their gluing regions (need >= 4 eta)"
                    )));
                }
            }
        }
        if !self.orientations.is_empty() && self.orientations.len() != self.centers.len() {
            return Err(Error::DimensionMismatch { expected: self.centers.len(), got: self.orientations.len() });
        }
        Ok(())
    }

    pub fn delta(&self, k: u32) -> f64 {
        self.eta * self.eta * 0.5f64.powi(k as i32)
    }

    pub fn p(&self, k: u32) -> f64 {
        let l = (1.0 / self.delta(k)).ln();
        match self.schedule {
            PSchedule::LogInverse => 2.0 + 1.0 / (k as f64 * LN_2 + (self.eta * self.eta).ln().abs()),
            PSchedule::SqrtLogInverse => 2.0 + 1.0 / l.sqrt(),
        }
    }

    pub fn bubbles(&self, k: u32) -> Result<Vec<BubbleSpec>> {
        let delta = self.delta(k);
        self.centers
            .iter()
            .enumerate()
            .map(|(i, c)| BubbleSpec::oriented(*c, delta, self.orientations.get(i).copied().unwrap_or(identity_quaternion())))
            .collect()
    }

    /// The glued field around bubble i at index k.
    pub fn glued(&self, k: u32, i: usize) -> Result<GluedBubble> {
        self.validate()?;
        let b = self.bubbles(k)?[i];
        GluedBubble::new(self.background, b, self.eta)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyIdentity {
    pub k: u32,
    pub total: f64,
    pub background: f64,
    pub bubbles: Vec<f64>,
    pub defect: f64,
}

fn sphere_default() -> SphereRule {
    SphereRule::hopf(8, 16)
}

/// `∫_{B_{2η}(q)} (|F_1|² - |F_2|²)` by quadrature, with finite-difference curvature.
fn local_energy_difference(f1: &impl ContinuumField, f2: &impl ContinuumField, q: [f64; 4], lo: f64, eta: f64, c: f64) -> f64 {
    let sphere = sphere_default();
    shell_integral(q, lo, 2.0 * eta, 6, &sphere, |x| {
        curvature_sq(&curvature_fd(f1, x), c) - curvature_sq(&curvature_fd(f2, x), c)
    })
}

/// Total energy at index k against the limit energy plus one `8π²c` per
/// bubble.  On a flat background the glued fields are patches of radial
/// profiles; on an instanton background the energy inside each `B_{2η}(q)`
/// is integrated by quadrature and the exact background energy is used
/// outside, where the glued field is gauge equivalent to the background.
pub fn energy_identity_check(family: &BubblingFamily, k: u32, c: f64) -> Result<EnergyIdentity> {
    family.validate()?;
    let bubble_energy = 8.0 * PI * PI * c;
    let n = family.centers.len();
    let bg_total = family.background.energy() * c;
    if n == 0 {
        return Ok(EnergyIdentity { k, total: bg_total, background: bg_total, bubbles: vec![], defect: 0.0 });
    }
    let mut total = bg_total;
    let mut limit = bg_total;
    for i in 0..n {
        let g = family.glued(k, i)?;
        if family.background.is_flat() {
            total += c * radial_integral(0.0, 2.0 * family.eta, |t| g.radial_density(t));
        } else {
            let lim = g.limit();
            let bg = BackgroundOnly(family.background);
            let lo = 1e-4 * g.bubble.scale;
            total += local_energy_difference(&g, &bg, g.bubble.center, lo, family.eta, c);
            limit += local_energy_difference(&lim, &bg, g.bubble.center, lo, family.eta, c);
        }
    }
    let bubbles = vec![bubble_energy; n];
    let defect = (total - limit - bubble_energy * n as f64).abs();
    Ok(EnergyIdentity { k, total, background: limit, bubbles, defect })
}

struct BackgroundOnly(BackgroundSpec);

impl ContinuumField for BackgroundOnly {
    fn potential(&self, x: [f64; 4]) -> QPotential {
        self.0.potential(x)
    }

    fn length_scale(&self, x: [f64; 4]) -> f64 {
        self.0.length_scale(x).min(1.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PScheduleRow {
    pub k: u32,
    pub p: f64,
    pub delta: f64,
    pub detected: f64,
    pub product_prescribed: f64,
    pub product_detected: f64,
    /// `∫_{B(q,δ)} |F|²` on the detected ball.
    pub holder_lhs: f64,
    /// `(∫_{B(q,δ)} |F|^p)^{2/p} vol(B)^{(p-2)/p}`.
    pub holder_rhs: f64,
    pub holder_ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PScheduleReport {
    pub bound: f64,
    pub rows: Vec<PScheduleRow>,
    pub admissible: bool,
}

/// Enclosed energy `∫_{B(q,ρ)} |F_k|^s` about bubble i, with `|F|` the norm
/// in normalization c.
fn enclosed_power(family: &BubblingFamily, g: &GluedBubble, rho: f64, s: f64, c: f64) -> f64 {
    if family.background.is_flat() {
        radial_integral(0.0, rho, |t| (c * g.radial_density(t)).powf(0.5 * s))
    } else {
        let sphere = sphere_default();
        let lo = 1e-4 * g.bubble.scale.min(rho);
        let core = (PI * PI / 2.0) * lo.powi(4) * (c * bpst_density(g.bubble.scale, 0.0)).powf(0.5 * s);
        core + shell_integral(g.bubble.center, lo, rho, 6, &sphere, |x| curvature_sq(&curvature_fd(g, x), c).powf(0.5 * s))
    }
}

/// Detected scale of bubble i at index k.
pub fn family_bubble_scale(family: &BubblingFamily, k: u32, i: usize, eps0: f64, c: f64) -> Result<f64> {
    let g = family.glued(k, i)?;
    let r_max = 2.0 * family.eta;
    let half = 0.5 * eps0;
    let total = enclosed_power(family, &g, r_max, 2.0, c);
    if !(total >= half) || half <= 0.0 {
        return Err(Error::NoBubble { total, half });
    }
    let (mut lo, mut hi) = (0.0, r_max);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if enclosed_power(family, &g, mid, 2.0, c) >= half {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(hi)
}

/// `(p_k - 2) log(1/δ_k)` with prescribed and detected scales, and the
/// Hölder step `∫_B |F|² ≤ (∫_B |F|^p)^{2/p} |B|^{(p-2)/p}` on each detected ball.
pub fn p_schedule_check(family: &BubblingFamily, ks: &[u32], bound: f64, eps0: f64, c: f64) -> Result<PScheduleReport> {
    let mut rows = Vec::new();
    for &k in ks {
        let p = family.p(k);
        let delta = family.delta(k);
        let detected = family_bubble_scale(family, k, 0, eps0, c)?;
        let g = family.glued(k, 0)?;
        let holder_lhs = enclosed_power(family, &g, detected, 2.0, c);
        let vol = 0.5 * PI * PI * detected.powi(4);
        let holder_rhs = enclosed_power(family, &g, detected, p, c).powf(2.0 / p) * vol.powf((p - 2.0) / p);
        rows.push(PScheduleRow {
            k,
            p,
            delta,
            detected,
            product_prescribed: (p - 2.0) * (1.0 / delta).ln(),
            product_detected: (p - 2.0) * (1.0 / detected).ln(),
            holder_lhs,
            holder_rhs,
            holder_ok: holder_lhs <= holder_rhs * (1.0 + 1e-10),
        });
    }
    // the prescribed product equals the bound by construction, up to rounding
    let tol = bound.abs() * 1e-12;
    let admissible = rows.iter().all(|r| r.product_detected <= bound + tol && r.product_prescribed <= bound + tol);
    Ok(PScheduleReport { bound, rows, admissible })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexOptions {
    /// Bubble scale over lattice spacing at each k.
    pub lambda_over_h: f64,
    /// Dirichlet ball radius in lattice spacings.
    pub sites_per_radius: f64,
    /// Flow steps applied for the relaxed family.
    pub flow_steps: usize,
    /// Absolute nullity tolerance for the fixed-tolerance mode.
    pub fixed_tol: f64,
    /// Form whose counts enter the table.  The default is `Q/p + ∫ρ|d_A^* a|²`,
    /// whose extended index is the one in the upper bound; `QCal` drops ρ
    /// from the gradient terms and only matches the limits when ρ → 1 on
    /// the bubble.
    pub form: FormKind,
    pub solve: SolveOptions,
}

impl Default for IndexOptions {
    fn default() -> Self {
        Self {
            lambda_over_h: MIN_SCALE_RATIO,
            sites_per_radius: 6.0,
            flow_steps: 5,
            fixed_tol: 1e-8,
            form: FormKind::QFrakNormalized,
            // sign counts only need eigenvalues resolved well away from zero
            solve: SolveOptions { k: 8, residual_tol: 1e-6, ..SolveOptions::default() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyVariant {
    Glued,
    FlowRelaxed,
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexCounts {
    pub index: usize,
    pub nullity: usize,
    pub extended_index: usize,
    pub nullity_fixed: usize,
    pub extended_fixed: usize,
    pub lowest: Vec<f64>,
    pub dofs: usize,
}

impl IndexCounts {
    fn from_report(rep: &SpectralReport, fixed_tol: f64) -> Self {
        let (index_fixed, nullity_fixed) = crate::spectral::count(&rep.eigenvalues, fixed_tol);
        Self {
            index: rep.index,
            nullity: rep.nullity,
            extended_index: rep.extended_index,
            nullity_fixed,
            extended_fixed: index_fixed + nullity_fixed,
            lowest: rep.eigenvalues.iter().take(4).copied().collect(),
            dofs: rep.solver.dofs,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexRow {
    pub k: u32,
    pub p: f64,
    pub delta: f64,
    pub h: f64,
    pub counts: Option<IndexCounts>,
    /// `ind(A_k) ≥ ind(A_∞) + ind(bubble)`.
    pub lower_ok: bool,
    /// `ind⁰(A_k) ≤ ind⁰(A_∞) + ind⁰(bubble)`, adaptive tolerance.
    pub upper_ok: bool,
    /// The same with the fixed tolerance.
    pub upper_ok_fixed: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexTable {
    pub variant: FamilyVariant,
    pub background: IndexCounts,
    pub bubble: IndexCounts,
    pub rows: Vec<IndexRow>,
}

impl IndexTable {
    /// Both inequalities hold on every row that was computed.
    pub fn holds(&self) -> bool {
        self.rows.iter().filter(|r| r.counts.is_some()).all(|r| r.lower_ok && r.upper_ok && r.upper_ok_fixed)
    }
}

fn spectrum_counts(
    a: &GaugeField,
    p: PExponent,
    weight: impl Fn([f64; 4]) -> f64,
    opts: &IndexOptions,
) -> Result<IndexCounts> {
    let w = WeightField::from_fn(a.domain(), weight)?;
    let problem = assemble(a, p, &w, opts.form)?;
    let rep = solve(&problem, &opts.solve)?;
    Ok(IndexCounts::from_report(&rep, opts.fixed_tol))
}

/// Index, nullity and extended index of `opts.form` with weight `ω_{η,k}` on a
/// Dirichlet ball around the first bubble at each k, next to the limits:
/// the background near q with weight `ω_{η,∞}` and the unit bubble with
/// weight `ω̂_{η,∞}`.  The ball has `sites_per_radius` lattice spacings of
/// `δ_k / lambda_over_h`, so it follows the bubble scale.
pub fn index_semicontinuity_experiment(
    family: &BubblingFamily,
    alg: &Arc<Algebra>,
    ks: &[u32],
    variant: FamilyVariant,
    opts: &IndexOptions,
) -> Result<IndexTable> {
    family.validate()?;
    if family.centers.is_empty() {
        return Err(Error::InvalidDomain("index experiment needs at least one bubble".into()));
    }
    let eta = family.eta;
    let q = family.centers[0];

    // background limit near q, on a ball of radius η
    let h_bg = eta / opts.sites_per_radius;
    let dom_bg = Arc::new(Domain::ball(eta, h_bg)?);
    let g0 = family.glued(ks.first().copied().unwrap_or(1), 0)?;
    let bg_field = sample(&g0.limit_smooth(), alg, &dom_bg, q)?;
    let background = spectrum_counts(&bg_field, PExponent::two(), |_| omega_eta_inf(eta), opts)?;

    // rescaled bubble limit: unit instanton
    let h_b = 1.0 / opts.lambda_over_h;
    let dom_b = Arc::new(Domain::ball(opts.sites_per_radius * h_b, h_b)?);
    let b_field = bpst(1.0, [0.0; 4], alg, &dom_b)?;
    let bubble = spectrum_counts(&b_field, PExponent::two(), |x| omega_hat_eta_inf(eta, x), opts)?;

    let mut rows = Vec::new();
    for &k in ks {
        let p = family.p(k);
        let delta = family.delta(k);
        let h = delta / opts.lambda_over_h;
        let computed = (|| -> Result<IndexCounts> {
            let pe = PExponent::new(p)?;
            let g = family.glued(k, 0)?;
            let dom = Arc::new(Domain::ball(opts.sites_per_radius * h, h)?);
            check_resolution(delta, h)?;
            let mut a = sample(&g, alg, &dom, q)?;
            if variant == FamilyVariant::FlowRelaxed {
                let fo = FlowOptions { steps: opts.flow_steps, ..FlowOptions::default() };
                a = flow(&a, pe, &fo)?.field;
            }
            spectrum_counts(&a, pe, |x| omega_eta_k_radial(eta, delta, norm(x)), opts)
        })();
        let row = match computed {
            Ok(c) => IndexRow {
                k,
                p,
                delta,
                h,
                lower_ok: c.index >= background.index + bubble.index,
                upper_ok: c.extended_index <= background.extended_index + bubble.extended_index,
                upper_ok_fixed: c.extended_fixed <= background.extended_fixed + bubble.extended_fixed,
                counts: Some(c),
                error: None,
            },
            Err(e) => IndexRow {
                k,
                p,
                delta,
                h,
                counts: None,
                lower_ok: false,
                upper_ok: false,
                upper_ok_fixed: false,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    Ok(IndexTable { variant, background, bubble, rows })
}

/// Lattice perturbation from a continuum 1-form given in quaternion components.
pub fn sample_perturbation(
    alg: &Algebra,
    domain: &Arc<Domain>,
    f: impl Fn([f64; 4]) -> QPotential,
) -> Result<LatticeForm> {
    let k = (2.0 * check_su2(alg)?).sqrt();
    LatticeForm::from_fn(domain, 1, 3, |_, x, out| {
        let a = f(x);
        for mu in 0..4 {
            for i in 0..3 {
                out[mu * 3 + i] = k * a[mu][i];
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::curvature;
    use crate::functional::ym_energy;

    #[test]
    fn bpst_curvature_matches_closed_form() {
        let b = Bpst(BubbleSpec::oriented([0.1, -0.2, 0.3, 0.0], 0.7, [0.3, 0.1, -0.5, 0.8]).unwrap());
        for x in [[0.0, 0.0, 0.0, 0.0], [0.5, 0.2, -1.0, 0.3], [2.0, 1.0, 0.0, -3.0]] {
            let f = curvature_fd(&b, x);
            let t = norm(sub4(x, b.0.center));
            let exact = bpst_density(0.7, t);
            assert!((curvature_sq(&f, 1.0) / exact - 1.0).abs() < 1e-8, "{x:?}");
        }
        assert!((bpst_enclosed_energy(1.0, 1e8) / (8.0 * PI * PI) - 1.0).abs() < 1e-14);
        let q = radial_integral(0.0, 3.0, |t| bpst_density(1.3, t));
        assert!((q / bpst_enclosed_energy(1.3, 3.0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn glued_field_radial_ansatz_and_regions() {
        let b = BubbleSpec::new([0.2, 0.0, 0.0, 0.0], 0.01).unwrap();
        let g = GluedBubble::new(BackgroundSpec::Flat, b, 0.2).unwrap();
        for t in [0.001, 0.01, 0.05, 0.21, 0.3, 0.39, 0.5] {
            let x = [0.2 + t * 0.5, t * 0.5, t * 0.5, t * 0.5];
            let fd = curvature_sq(&curvature_fd(&g, x), 1.0);
            assert!((fd - g.radial_density(t)).abs() < 1e-7 * g.radial_density(t).max(1e-3), "t = {t}: {fd} vs {}", g.radial_density(t));
        }
        // inside B_η the field is the pure bubble
        let pure = Bpst(b);
        let x = [0.25, 0.01, -0.02, 0.1];
        let (u, v) = (g.potential(x), pure.potential(x));
        for mu in 0..4 {
            for i in 0..3 {
                assert!((u[mu][i] - v[mu][i]).abs() < 1e-13 * v[mu][i].abs().max(1.0));
            }
        }
        // outside B_{2η} the curvature vanishes
        let far = [1.0, 0.5, 0.0, 0.0];
        assert!(curvature_sq(&curvature_fd(&g, far), 1.0) < 1e-16);
        assert!(matches!(GluedBubble::new(BackgroundSpec::Flat, b, 0.03), Err(Error::ScaleSeparation { .. })));
    }

    #[test]
    fn glued_background_gauge_equivalence_outside() {
        let bg = BackgroundSpec::Instanton { center: [0.0; 4], scale: 1.0 };
        let b = BubbleSpec::oriented([1.5, 0.0, 0.0, 0.0], 0.01, [0.5, 0.5, 0.5, 0.5]).unwrap();
        let g = GluedBubble::new(bg, b, 0.2).unwrap();
        let bgf = BackgroundOnly(bg);
        for x in [[0.0, 0.3, 0.1, 0.0], [1.5, 0.5, 0.0, 0.0], [3.0, -1.0, 2.0, 0.5]] {
            let a = curvature_sq(&curvature_fd(&g, x), 1.0);
            let e = curvature_sq(&curvature_fd(&bgf, x), 1.0);
            assert!((a - e).abs() < 1e-8 * e.max(1e-6), "{x:?}: {a} vs {e}");
        }
    }

    #[test]
    fn stream_matches_lattice_energy() {
        let alg = Arc::new(Algebra::su2());
        let dom = Arc::new(Domain::ball(2.0, 0.25).unwrap());
        let field = Bpst(BubbleSpec::new([0.0; 4], 1.0).unwrap());
        let a = sample(&field, &alg, &dom, [0.0; 4]).unwrap();
        let lattice = ym_energy(&a);
        let stream = lattice_energy_stream(&field, 1.0, 2.0, 0.25);
        assert!((lattice - stream).abs() < 1e-10 * lattice, "{lattice} vs {stream}");
        let scaled = Arc::new(Algebra::su_scaled(2, 2.0).unwrap());
        let a2 = sample(&field, &scaled, &dom, [0.0; 4]).unwrap();
        assert!((ym_energy(&a2) - 2.0 * lattice).abs() < 1e-9 * lattice);
    }

    #[test]
    fn bpst_sampling_and_scaling() {
        let alg = Arc::new(Algebra::su2());
        let dom = Arc::new(Domain::ball(1.0, 0.25).unwrap());
        assert!(matches!(bpst(0.5, [0.0; 4], &alg, &dom), Err(Error::UnderResolved { .. })));
        // λ^{-1} scaling: A_λ(x) = λ^{-1} A_1(x/λ)
        let (a1, a2) = (Bpst(BubbleSpec::new([0.0; 4], 1.0).unwrap()), Bpst(BubbleSpec::new([0.0; 4], 0.3).unwrap()));
        let x = [0.1, 0.2, -0.05, 0.3];
        let u = a1.potential(x.map(|v| v / 0.3));
        let v = a2.potential(x);
        for mu in 0..4 {
            for i in 0..3 {
                assert!((v[mu][i] - u[mu][i] / 0.3).abs() < 1e-13);
            }
        }
        let e1 = lattice_energy_stream(&a1, 1.0, 3.0, 0.25);
        let e2 = lattice_energy_stream(&a2, 1.0, 0.9, 0.075);
        assert!((e1 - e2).abs() < 1e-9 * e1);
    }

    #[test]
    fn sphere_rule_integrates_low_harmonics() {
        let s = SphereRule::hopf(12, 12);
        assert!((s.weights.iter().sum::<f64>() - 2.0 * PI * PI).abs() < 1e-12);
        let coarse = SphereRule::hopf(4, 8);
        assert!((coarse.weights.iter().sum::<f64>() / (2.0 * PI * PI) - 1.0).abs() < 1e-5);
        // ∫ θ_0² dΩ = 2π²/4
        let q: f64 = s.dirs.iter().zip(&s.weights).map(|(d, w)| w * d[0] * d[0]).sum();
        assert!((q - PI * PI / 2.0).abs() < 1e-12);
        let q: f64 = s.dirs.iter().zip(&s.weights).map(|(d, w)| w * d[0] * d[2]).sum();
        assert!(q.abs() < 1e-13);
    }

    #[test]
    fn bubble_scale_detection() {
        // ε₀/2 = 4π² is reached where 1 - 3s² + 2s³ = 1/2, i.e. s = 1/2, ρ = λ
        let lambda = 0.4;
        let rho = detect_bubble_scale_radial(|t| bpst_density(lambda, t), 8.0 * PI * PI, 10.0).unwrap();
        assert!((rho - lambda).abs() < 1e-10);
        let alg = Arc::new(Algebra::su2());
        let dom = Arc::new(Domain::ball(2.0, 0.1).unwrap());
        let a = bpst(lambda, [0.0; 4], &alg, &dom).unwrap();
        let f = curvature(&a);
        let eps0 = 8.0 * PI * PI * 0.9;
        let target = detect_bubble_scale_radial(|t| bpst_density(lambda, t), eps0, 2.0).unwrap();
        let found = detect_bubble_scale(&f, [0.0; 4], eps0).unwrap();
        assert!((found - target).abs() < 2.0 * 0.1, "{found} vs {target}");
        assert!(detect_bubble_scale(&f, [0.0; 4], 0.5 * eps0).unwrap() <= found);
        let zero = curvature(&GaugeField::zero(&alg, &dom));
        assert!(matches!(detect_bubble_scale(&zero, [0.0; 4], 1.0), Err(Error::NoBubble { .. })));
    }

    #[test]
    fn default_family_bookkeeping() {
        let fam = BubblingFamily::default_family(0.5);
        let defects: Vec<f64> = (1..=6).map(|k| energy_identity_check(&fam, k, 1.0).unwrap().defect).collect();
        assert!(defects.windows(2).all(|w| w[1] < w[0]), "{defects:?}");
        assert!(defects[5] < 1e-3);
        let rep = p_schedule_check(&fam, &[1, 2, 3, 4], 2.0, 1.0, 1.0).unwrap();
        assert!(rep.admissible);
        for r in &rep.rows {
            assert!((r.product_prescribed - 1.0).abs() < 1e-12);
            assert!(r.holder_ok);
        }
        let ratios: Vec<f64> = rep.rows.iter().map(|r| r.detected / r.delta).collect();
        assert!(ratios.windows(2).all(|w| (w[1] / w[0] - 1.0).abs() < 1e-3), "{ratios:?}");
        let sqrt = BubblingFamily { schedule: PSchedule::SqrtLogInverse, ..fam.clone() };
        let prods: Vec<f64> = [2u32, 8, 32].iter().map(|&k| (sqrt.p(k) - 2.0) * (1.0 / sqrt.delta(k)).ln()).collect();
        assert!(prods.windows(2).all(|w| w[1] > w[0]));
        let none = BubblingFamily { centers: vec![], ..fam.clone() };
        assert_eq!(energy_identity_check(&none, 3, 1.0).unwrap().defect, 0.0);
        let two = BubblingFamily { centers: vec![[0.0; 4], [3.0, 0.0, 0.0, 0.0]], ..fam };
        let one = energy_identity_check(&BubblingFamily::default_family(0.5), 3, 1.0).unwrap();
        let both = energy_identity_check(&two, 3, 1.0).unwrap();
        assert!((both.defect - 2.0 * one.defect).abs() < 1e-9);
    }
}
