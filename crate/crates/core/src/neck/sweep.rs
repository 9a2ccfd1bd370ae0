//! Neck-lengthening sweeps on glued bubbles: dyadic profiles, Lorentz
//! quantization ratios, the pointwise weight bound and continuum
//! neck positivity against random compactly supported perturbations.
//!
//! The positivity integrals are evaluated by quadrature in log-radius times
//! a Hopf sphere rule.  Perturbations are sums of radial bumps
//! `β((ln t - t_j)/ln 2) Y_j(θ)` along one coordinate direction and one
//! algebra direction, with `Y_j ∈ {1, θ_0, …, θ_3}` and `β(s) = (1 - s²)³`,
//! so every term is supported in one octave inside `[r, R]`.

use std::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{omega_radial, pointwise_bound_radial, DyadicProfile, PointwiseBound};
use crate::error::{Error, Result};
use crate::instanton::{
    cross, curvature_fd, curvature_sq, dot3, shell_integral, BackgroundSpec, BubbleSpec, ContinuumField, GluedBubble,
    QCurvature, QPotential, SphereRule,
};
use crate::lorentz::{neck_quantization_radial, QuantizationReport};
use crate::quadrature::LogRule;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeckSweepOptions {
    /// Outer neck radius, equal to the gluing cutoff η.
    pub big_r: f64,
    /// Levels j with `r = R / 2^j`.
    pub levels: Vec<u32>,
    /// Bubble scale as a fraction of r.
    pub lambda_over_r: f64,
    pub p: f64,
    pub bochner_c: f64,
    /// Algebra normalization c.
    pub c: f64,
    /// Random perturbations per sweep point.
    pub samples: usize,
    /// Bump terms per perturbation.
    pub terms: usize,
    pub seed: u64,
    /// Gate on the dyadic sup for the quantization hypotheses.
    pub eps_gate: f64,
    pub panels_per_octave: usize,
    pub sphere_psi: usize,
    pub sphere_xi: usize,
}

impl Default for NeckSweepOptions {
    fn default() -> Self {
        Self {
            big_r: 0.5,
            levels: vec![3, 4, 5, 6],
            lambda_over_r: 1.0 / 16.0,
            p: 2.0,
            bochner_c: 1.0,
            c: 1.0,
            samples: 50,
            terms: 6,
            seed: 0,
            eps_gate: 0.1,
            panels_per_octave: 4,
            sphere_psi: 5,
            sphere_xi: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PositivityStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NeckSweepRow {
    pub level: u32,
    pub r: f64,
    pub big_r: f64,
    pub lambda: f64,
    pub quantization: QuantizationReport,
    /// The dyadic sup is below the configured gate.
    pub gate_ok: bool,
    /// Present when `R ≥ 16 r`.
    pub pointwise: Option<PointwiseBound>,
    pub positivity: PositivityStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct NeckSweep {
    pub rows: Vec<NeckSweepRow>,
    /// Smallest positivity ratio over the sweep.
    pub c0_fit: f64,
    /// `max / min` of the L^{2,∞} and L^{2,1} ratios across the sweep.
    pub weak_ratio_spread: f64,
    pub l21_ratio_spread: f64,
    /// `max / min` of the fitted pointwise constant.
    pub pointwise_spread: f64,
    pub dip: DipProfile,
}

fn spread(v: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = v.fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if lo > 0.0 && lo.is_finite() {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Quadrature points of `r ≤ |x - q| ≤ R` carrying the field data needed by
/// the second variation.
struct NeckPoint {
    t: f64,
    theta: [f64; 4],
    weight: f64,
    a: QPotential,
    f: QCurvature,
    rho: f64,
    omega: f64,
}

struct NeckQuadrature {
    points: Vec<NeckPoint>,
    r: f64,
    big_r: f64,
    p: f64,
    c: f64,
}

impl NeckQuadrature {
    fn new(field: &impl ContinuumField, center: [f64; 4], r: f64, big_r: f64, p: f64, c: f64, opts: &NeckSweepOptions) -> Self {
        let octaves = (big_r / r).log2();
        let panels = ((octaves * opts.panels_per_octave as f64).ceil() as usize).max(1);
        let radial = LogRule::new(r, big_r, panels, 6);
        let sphere = SphereRule::hopf(opts.sphere_psi, opts.sphere_xi);
        let mut points = Vec::with_capacity(radial.nodes.len() * sphere.dirs.len());
        for (&t, &wt) in radial.nodes.iter().zip(&radial.weights) {
            for (d, &wd) in sphere.dirs.iter().zip(&sphere.weights) {
                let x = std::array::from_fn(|i| center[i] + t * d[i]);
                let f = curvature_fd(field, x);
                let fsq = curvature_sq(&f, c);
                points.push(NeckPoint {
                    t,
                    theta: *d,
                    weight: wt * wd * t.powi(3),
                    a: field.potential(x),
                    f,
                    rho: crate::functional::kernels::rho(fsq, p),
                    omega: omega_radial(0.0, big_r, r, t),
                });
            }
        }
        Self { points, r, big_r, p, c }
    }

    /// `(∫ ρ(|d_A a|² + (p-2)⟨F, d_A a⟩²/(1+|F|²) + |d_A^* a|² + ⟨F, [a∧a]⟩), ∫ |a|² ω_{R,r})`.
    fn sides(&self, pert: &Perturbation) -> (f64, f64) {
        let (mut lhs, mut rhs) = (0.0, 0.0);
        let k = 2.0 * self.c;
        for pt in &self.points {
            let (a, da) = pert.eval(pt);
            let mut mass = 0.0;
            for mu in 0..4 {
                mass += dot3(a[mu], a[mu]);
            }
            if mass == 0.0 {
                continue;
            }
            // (d_A a)_{μν} = ∂_μ a_ν - ∂_ν a_μ + 2(A_μ × a_ν - A_ν × a_μ)
            let mut dsq = 0.0;
            let mut f_da = 0.0;
            let mut bracket = 0.0;
            let mut fsq = 0.0;
            for (i, &(mu, nu)) in PAIRS.iter().enumerate() {
                let (c1, c2) = (cross(pt.a[mu], a[nu]), cross(pt.a[nu], a[mu]));
                let v: [f64; 3] = std::array::from_fn(|j| da[mu][nu][j] - da[nu][mu][j] + 2.0 * (c1[j] - c2[j]));
                dsq += dot3(v, v);
                f_da += dot3(pt.f[i], v);
                bracket += dot3(pt.f[i], cross(a[mu], a[nu]));
                fsq += dot3(pt.f[i], pt.f[i]);
            }
            // d_A^* a = -Σ_μ (∂_μ a_μ + 2 A_μ × a_μ)
            let mut ds = [0.0; 3];
            for mu in 0..4 {
                let c = cross(pt.a[mu], a[mu]);
                for j in 0..3 {
                    ds[j] -= da[mu][mu][j] + 2.0 * c[j];
                }
            }
            let fn2 = k * fsq;
            let integrand = k * dsq
                + (self.p - 2.0) * (k * f_da).powi(2) / (1.0 + fn2)
                + k * dot3(ds, ds)
                + k * 4.0 * bracket;
            lhs += pt.weight * pt.rho * integrand;
            rhs += pt.weight * k * mass * pt.omega;
        }
        (lhs, rhs)
    }
}

const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

#[derive(Debug, Clone, Copy)]
struct BumpTerm {
    log_center: f64,
    harmonic: usize,
    direction: usize,
    generator: usize,
    coeff: f64,
}

/// A random compactly supported su(2)-valued 1-form in the neck.
#[derive(Debug, Clone)]
struct Perturbation {
    terms: Vec<BumpTerm>,
}

fn bump(s: f64) -> (f64, f64) {
    if s.abs() >= 1.0 {
        (0.0, 0.0)
    } else {
        let u = 1.0 - s * s;
        (u * u * u, -6.0 * s * u * u)
    }
}

impl Perturbation {
    fn random(rng: &mut ChaCha8Rng, r: f64, big_r: f64, terms: usize) -> Self {
        let (lo, hi) = (r.ln() + LN_2, big_r.ln() - LN_2);
        let terms = (0..terms)
            .map(|_| BumpTerm {
                log_center: if hi > lo { rng.random_range(lo..hi) } else { 0.5 * (lo + hi) },
                harmonic: rng.random_range(0..5),
                direction: rng.random_range(0..4),
                generator: rng.random_range(0..3),
                coeff: rng.sample(StandardNormal),
            })
            .collect();
        Self { terms }
    }

    /// Values `a_μ` and derivatives `∂_ν a_μ` indexed `[ν][μ]`.
    fn eval(&self, pt: &NeckPoint) -> (QPotential, [[[f64; 3]; 4]; 4]) {
        let mut a = [[0.0; 3]; 4];
        let mut da = [[[0.0; 3]; 4]; 4];
        let lt = pt.t.ln();
        for term in &self.terms {
            let (b, db) = bump((lt - term.log_center) / LN_2);
            if b == 0.0 && db == 0.0 {
                continue;
            }
            let (y, grad_y): (f64, [f64; 4]) = match term.harmonic {
                0 => (1.0, [0.0; 4]),
                h => {
                    let k = h - 1;
                    let th = pt.theta[k];
                    (th, std::array::from_fn(|i| ((i == k) as u8 as f64 - th * pt.theta[i]) / pt.t))
                }
            };
            let s = b * y;
            let ds: [f64; 4] = std::array::from_fn(|i| db / (LN_2 * pt.t) * pt.theta[i] * y + b * grad_y[i]);
            a[term.direction][term.generator] += term.coeff * s;
            for nu in 0..4 {
                da[nu][term.direction][term.generator] += term.coeff * ds[nu];
            }
        }
        (a, da)
    }
}

/// Dyadic energies around a bubble glued into a unit instanton background:
/// the bubble dominates the inner shells, the background the outer ones, and
/// the neck in between carries less energy than either end.
#[derive(Debug, Clone, Serialize)]
pub struct DipProfile {
    pub lambda: f64,
    pub eta: f64,
    pub profile: DyadicProfile,
    pub dips: bool,
}

pub fn neck_dip_profile(lambda: f64, eta: f64, c: f64) -> Result<DipProfile> {
    let bg = BackgroundSpec::Instanton { center: [0.0; 4], scale: 1.0 };
    let g = GluedBubble::new(bg, BubbleSpec::new([0.0; 4], lambda)?, eta)?;
    let sphere = SphereRule::hopf(6, 12);
    let mut radii = vec![lambda];
    while radii[radii.len() - 1] * 2.0 < 1.0 {
        let last = radii[radii.len() - 1];
        radii.push(2.0 * last);
    }
    let energies: Vec<f64> = radii
        .iter()
        .map(|&rho| shell_integral([0.0; 4], rho, 2.0 * rho, 6, &sphere, |x| curvature_sq(&curvature_fd(&g, x), c)).sqrt())
        .collect();
    let n = energies.len();
    let interior_min = energies[1..n - 1].iter().cloned().fold(f64::INFINITY, f64::min);
    let dips = n >= 3 && interior_min < energies[0] && interior_min < energies[n - 1];
    let sup = energies.iter().cloned().fold(0.0, f64::max);
    Ok(DipProfile { lambda, eta, profile: DyadicProfile { radii, energies, sup }, dips })
}

/// One sweep point: the flat-background glued bubble at the origin with
/// scale `lambda_over_r · r` and cutoff `η = R`.
pub fn neck_sweep_point(level: u32, opts: &NeckSweepOptions) -> Result<NeckSweepRow> {
    let big_r = opts.big_r;
    let r = big_r / 2f64.powi(level as i32);
    if !(4.0 * r < big_r) {
        return Err(Error::AnnulusTooThin(format!("level {level} gives R/r = {}", big_r / r)));
    }
    let lambda = opts.lambda_over_r * r;
    let glued = GluedBubble::new(BackgroundSpec::Flat, BubbleSpec::new([0.0; 4], lambda)?, big_r)?;
    let c = opts.c;
    let modulus = |t: f64| (c * glued.radial_density(t)).sqrt();
    let quantization = neck_quantization_radial(modulus, r, big_r, 64 * (level as usize + 1))?;
    let gate_ok = quantization.dyadic.sup <= opts.eps_gate;
    let pointwise = if big_r >= 16.0 * r {
        Some(pointwise_bound_radial(modulus, opts.p, opts.bochner_c, r, big_r, 400)?)
    } else {
        None
    };
    let quad = NeckQuadrature::new(&glued, [0.0; 4], r, big_r, opts.p, c, opts);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (level as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut ratios = Vec::with_capacity(opts.samples);
    while ratios.len() < opts.samples {
        let pert = Perturbation::random(&mut rng, quad.r, quad.big_r, opts.terms);
        let (lhs, rhs) = quad.sides(&pert);
        if rhs > 0.0 {
            ratios.push(lhs / rhs);
        }
    }
    let positivity = PositivityStats {
        min: ratios.iter().cloned().fold(f64::INFINITY, f64::min),
        mean: ratios.iter().sum::<f64>() / ratios.len().max(1) as f64,
        max: ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(NeckSweepRow { level, r, big_r, lambda, quantization, gate_ok, pointwise, positivity })
}

pub fn neck_sweep(opts: &NeckSweepOptions) -> Result<NeckSweep> {
    let mut levels = opts.levels.clone();
    levels.sort_unstable();
    levels.dedup();
    let rows = levels.iter().map(|&j| neck_sweep_point(j, opts)).collect::<Result<Vec<_>>>()?;
    let c0_fit = rows.iter().map(|r| r.positivity.min).fold(f64::INFINITY, f64::min);
    let weak_ratio_spread = spread(rows.iter().map(|r| r.quantization.ratio_weak));
    let l21_ratio_spread = spread(rows.iter().map(|r| r.quantization.ratio_l21));
    let pointwise_spread = spread(rows.iter().filter_map(|r| r.pointwise.as_ref().map(|p| p.constant)));
    let dip = neck_dip_profile(1.0 / 64.0, 0.125, opts.c)?;
    Ok(NeckSweep { rows, c0_fit, weak_ratio_spread, l21_ratio_spread, pointwise_spread, dip })
}

/// `∫_{r ≤ |x| ≤ R} |a|² ω_{R,r}` against `‖da‖² + ‖d*a‖²` for random
/// perturbations on a flat neck, by the same quadrature.
pub fn continuum_gaffney_hardy(r: f64, big_r: f64, samples: usize, seed: u64) -> Vec<(f64, f64)> {
    let opts = NeckSweepOptions::default();
    let quad = NeckQuadrature::new(&crate::instanton::Flat, [0.0; 4], r, big_r, 2.0, 1.0, &opts);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| {
            let pert = Perturbation::random(&mut rng, r, big_r, opts.terms);
            let (lhs, rhs) = quad.sides(&pert);
            (rhs, lhs)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perturbation_gradient_matches_difference_quotient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pert = Perturbation::random(&mut rng, 0.01, 1.0, 8);
        let point = |x: [f64; 4]| {
            let t = crate::lattice::norm(x);
            NeckPoint {
                t,
                theta: x.map(|v| v / t),
                weight: 0.0,
                a: [[0.0; 3]; 4],
                f: [[0.0; 3]; 6],
                rho: 1.0,
                omega: 0.0,
            }
        };
        let x = [0.05, -0.08, 0.02, 0.11];
        let (_, da) = pert.eval(&point(x));
        let s = 1e-6;
        for nu in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[nu] += s;
            xm[nu] -= s;
            let (ap, _) = pert.eval(&point(xp));
            let (am, _) = pert.eval(&point(xm));
            for mu in 0..4 {
                for j in 0..3 {
                    let fd = (ap[mu][j] - am[mu][j]) / (2.0 * s);
                    assert!((fd - da[nu][mu][j]).abs() < 1e-5 * (1.0 + fd.abs()), "{nu} {mu} {j}");
                }
            }
        }
    }

    #[test]
    fn flat_neck_quadrature_is_homogeneous_and_positive() {
        let pairs = continuum_gaffney_hardy(0.01, 1.0, 10, 4);
        for (mass, grad) in &pairs {
            assert!(*mass > 0.0 && *grad > 0.0);
            assert!(grad / mass > 0.05, "{grad} / {mass}");
        }
    }

    #[test]
    fn sweep_point_reports() {
        let opts = NeckSweepOptions { samples: 8, ..NeckSweepOptions::default() };
        let row = neck_sweep_point(4, &opts).unwrap();
        assert!(row.gate_ok);
        assert!(row.positivity.min > 0.0);
        assert!(row.pointwise.is_some());
        assert!(neck_sweep_point(1, &opts).is_err());
        let dip = neck_dip_profile(1.0 / 64.0, 0.125, 1.0).unwrap();
        assert!(dip.dips, "{:?}", dip.profile.energies);
    }
}
