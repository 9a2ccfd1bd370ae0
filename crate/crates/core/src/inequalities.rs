//! Fuzzed checks of the standalone algebraic lemmas, the lattice Kato-Yau
//! and Bochner chain-rule checks, and the JSON scorecard that collects them.
//!
//! Every fuzz check reports the worst relative margin `(rhs - lhs) / scale`
//! together with the sample that produced it.  A sample is a violation when
//! its margin falls below `-FUZZ_SLACK`, which only absorbs rounding.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algebra::forms::{curvature_endo, multi_indices, GForm};
use crate::algebra::lie::Algebra;
use crate::error::Result;
use crate::field::{curvature, d, d_star, GaugeField, LatticeForm};
use crate::functional::kernels;
use crate::instanton::{dot3, lattice_curvature_at, Bpst, BubbleSpec, ContinuumField, QCurvature};
use crate::lattice::Domain;
use crate::neck::{gaffney_defect, hardy_battery, kappa, kappa_beta, mu};

pub const FUZZ_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FuzzConfig {
    pub samples: usize,
    /// Magnitudes are `10^U(log_min, log_max)`.
    pub log_min: f64,
    pub log_max: f64,
    pub seed: u64,
    pub p_grid: Vec<f64>,
    /// Largest vector dimension for the pairing and kernel checks.
    pub max_dim: usize,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        Self { samples: 100_000, log_min: -6.0, log_max: 6.0, seed: 0, p_grid: vec![2.0, 2.25, 2.5, 2.75, 3.0], max_dim: 18 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub samples: usize,
    pub violations: usize,
    pub worst_margin: f64,
    /// Parameters of the worst sample.
    pub witness: Vec<f64>,
    pub pass: bool,
}

struct Tracker {
    name: String,
    samples: usize,
    violations: usize,
    worst_margin: f64,
    witness: Vec<f64>,
}

impl Tracker {
    fn new(name: &str) -> Self {
        Self { name: name.into(), samples: 0, violations: 0, worst_margin: f64::INFINITY, witness: vec![] }
    }

    /// Records `lhs ≤ rhs` with margin `(rhs - lhs) / scale`.
    fn record(&mut self, lhs: f64, rhs: f64, scale: f64, witness: impl FnOnce() -> Vec<f64>) {
        self.samples += 1;
        let s = if scale > 0.0 { scale } else { 1.0 };
        let margin = (rhs - lhs) / s;
        if !(margin >= -FUZZ_SLACK) {
            self.violations += 1;
        }
        if !(margin >= self.worst_margin) {
            self.worst_margin = margin;
            self.witness = witness();
        }
    }

    fn finish(self) -> CheckReport {
        CheckReport {
            pass: self.violations == 0,
            name: self.name,
            samples: self.samples,
            violations: self.violations,
            worst_margin: self.worst_margin,
            witness: self.witness,
        }
    }
}

struct Sampler {
    rng: ChaCha8Rng,
    log_min: f64,
    log_max: f64,
}

impl Sampler {
    fn new(cfg: &FuzzConfig, salt: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ salt), log_min: cfg.log_min, log_max: cfg.log_max }
    }

    fn magnitude(&mut self) -> f64 {
        10f64.powf(self.rng.random_range(self.log_min..=self.log_max))
    }

    fn vector(&mut self, dim: usize) -> Vec<f64> {
        let dir: Vec<f64> = (0..dim).map(|_| self.rng.sample(StandardNormal)).collect();
        let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let m = self.magnitude();
        dir.into_iter().map(|x| x / n * m).collect()
    }

    /// A second vector that is sometimes a small relative perturbation of `u`.
    fn partner(&mut self, u: &[f64]) -> Vec<f64> {
        match self.rng.random_range(0..4) {
            0 => {
                let e = 10f64.powf(self.rng.random_range(-8.0..0.0));
                let w = self.vector(u.len());
                let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                let un = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                u.iter().zip(&w).map(|(a, b)| a + e * un * b / wn).collect()
            }
            1 => u.iter().map(|x| -x).collect(),
            _ => self.vector(u.len()),
        }
    }

    fn p(&mut self, cfg: &FuzzConfig) -> f64 {
        if self.rng.random_bool(0.5) && !cfg.p_grid.is_empty() {
            cfg.p_grid[self.rng.random_range(0..cfg.p_grid.len())]
        } else {
            self.rng.random_range(2.0..=3.0)
        }
    }
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

/// `½|u - v|^{2α+2}` and `⟨(1+|u|²)^α u - (1+|v|²)^α v, u - v⟩` with the
/// rounding scale of the right side.
pub fn monotone_pairing_sides(u: &[f64], v: &[f64], alpha: f64) -> (f64, f64, f64) {
    let (ku, kv) = ((norm_sq(u)).ln_1p() * alpha, (norm_sq(v)).ln_1p() * alpha);
    let (ku, kv) = (ku.exp(), kv.exp());
    let w = sub(u, v);
    let dn = norm_sq(&w).sqrt();
    let lhs = 0.5 * dn.powf(2.0 * alpha + 2.0);
    let rhs: f64 = u.iter().zip(v).zip(&w).map(|((a, b), c)| (ku * a - kv * b) * c).sum();
    let scale = (ku * norm_sq(u).sqrt() + kv * norm_sq(v).sqrt()) * dn;
    (lhs, rhs, scale.max(lhs))
}

/// Monotone pairing for α ∈ [0, 1/2], sampled through its two
/// specializations `α = (p-2)/2` and `α = (p-2)/4` with p ∈ [2, 3] and on a
/// uniform α grid.
pub fn check_monotone_pairing(cfg: &FuzzConfig) -> CheckReport {
    let mut t = Tracker::new("monotone_pairing");
    let mut s = Sampler::new(cfg, 1);
    for i in 0..cfg.samples {
        let dim = s.rng.random_range(1..=cfg.max_dim.max(1));
        let alpha = match i % 3 {
            0 => (s.p(cfg) - 2.0) / 2.0,
            1 => (s.p(cfg) - 2.0) / 4.0,
            _ => s.rng.random_range(0.0..=0.5),
        };
        let u = s.vector(dim);
        let v = s.partner(&u);
        let (lhs, rhs, scale) = monotone_pairing_sides(&u, &v, alpha);
        t.record(lhs, rhs, scale, || vec![alpha, norm_sq(&u).sqrt(), norm_sq(&v).sqrt(), dim as f64]);
    }
    t.finish()
}

/// `(a+b)^β ≤ a^β + b^β` for β ∈ [0,1] and `(a+b)^β ≤ 2^{β-1}(a^β + b^β)` for β ∈ [1,4].
pub fn check_power_subadditivity(cfg: &FuzzConfig) -> CheckReport {
    let mut t = Tracker::new("power_subadditivity");
    let mut s = Sampler::new(cfg, 2);
    for i in 0..cfg.samples {
        let (a, b) = (s.magnitude(), if s.rng.random_bool(0.1) { 0.0 } else { s.magnitude() });
        if i % 2 == 0 {
            let beta = s.rng.random_range(0.0..=1.0);
            let (lhs, rhs) = ((a + b).powf(beta), a.powf(beta) + b.powf(beta));
            t.record(lhs, rhs, rhs, || vec![a, b, beta]);
        } else {
            let beta = s.rng.random_range(1.0..=4.0);
            let (lhs, rhs) = ((a + b).powf(beta), 2f64.powf(beta - 1.0) * (a.powf(beta) + b.powf(beta)));
            t.record(lhs, rhs, rhs, || vec![a, b, beta]);
        }
    }
    t.finish()
}

/// `|V(a) - V(b)| ≤ 2 max(√ρ(a), √ρ(b)) |a - b|` for vectors, and
/// `H(a - b) ≤ √2 (H(a) + b^p)` for a, b ≥ 0.
pub fn check_v_h_kernels(cfg: &FuzzConfig) -> [CheckReport; 2] {
    let mut tv = Tracker::new("v_kernel_lipschitz");
    let mut th = Tracker::new("h_kernel_bound");
    let mut s = Sampler::new(cfg, 3);
    for _ in 0..cfg.samples {
        let p = s.p(cfg);
        let dim = s.rng.random_range(1..=cfg.max_dim.max(1));
        let a = s.vector(dim);
        let b = s.partner(&a);
        let (mut va, mut vb) = (vec![0.0; dim], vec![0.0; dim]);
        kernels::v(&a, p, &mut va);
        kernels::v(&b, p, &mut vb);
        let lhs = norm_sq(&sub(&va, &vb)).sqrt();
        let ra = kernels::rho(norm_sq(&a), p).sqrt();
        let rb = kernels::rho(norm_sq(&b), p).sqrt();
        let rhs = 2.0 * ra.max(rb) * norm_sq(&sub(&a, &b)).sqrt();
        let scale = (norm_sq(&va).sqrt() + norm_sq(&vb).sqrt()).max(rhs);
        tv.record(lhs, rhs, scale, || vec![p, norm_sq(&a).sqrt(), norm_sq(&b).sqrt()]);

        let (x, y) = (s.magnitude(), if s.rng.random_bool(0.1) { 0.0 } else { s.magnitude() });
        let h = |z: f64| kernels::h(z * z, p);
        let lhs = h(x - y);
        let rhs = 2f64.sqrt() * (h(x) + y.powf(p));
        th.record(lhs, rhs, rhs, || vec![p, x, y]);
    }
    [tv.finish(), th.finish()]
}

/// `𝒜 ≥ 0`, `𝒜 ≤ |F|²/(1+|F|²)` and `tr 𝒜 = 2|F|²/(1+|F|²)` on random
/// su(2) and su(3) curvatures.
pub fn check_curvature_endo_bounds(cfg: &FuzzConfig) -> [CheckReport; 2] {
    let mut tb = Tracker::new("curvature_endo_bounds");
    let mut tt = Tracker::new("curvature_endo_trace");
    let mut s = Sampler::new(cfg, 4);
    for i in 0..cfg.samples {
        let dim = if i % 2 == 0 { 3 } else { 8 };
        let f = GForm::from_coeffs(2, dim, s.vector(6 * dim)).unwrap();
        let n2 = f.norm_sq();
        let a = curvature_endo(&f).unwrap();
        let top = n2 / (1.0 + n2);
        let e = a.eigenvalues();
        let (lo, hi) = e.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        tb.record(-lo, 0.0, top.max(1e-300), || vec![n2, lo]);
        tb.record(hi, top, top.max(1e-300), || vec![n2, hi]);
        let tr = a.trace();
        let want = 2.0 * top;
        tt.record((tr - want).abs(), 0.0, want.max(1e-300), || vec![n2, tr, want]);
    }
    [tb.finish(), tt.finish()]
}

/// `|ι_X ω|² + |X ∧ ω|² = |X|² |ω|²` for Lie-valued forms of degree 1 to 3.
pub fn check_wedge_identity(cfg: &FuzzConfig) -> CheckReport {
    let mut t = Tracker::new("wedge_identity");
    let mut s = Sampler::new(cfg, 5);
    for i in 0..cfg.samples {
        let k = 1 + i % 3;
        let dim = 3;
        let w = GForm::from_coeffs(k, dim, s.vector(multi_indices(k).len() * dim)).unwrap();
        let xv = s.vector(4);
        let x = [xv[0], xv[1], xv[2], xv[3]];
        let lhs = w.interior(x).unwrap().norm_sq() + w.wedge_vector(x).unwrap().norm_sq();
        let rhs = norm_sq(&xv) * w.norm_sq();
        t.record((lhs - rhs).abs(), 0.0, rhs.max(1e-300), || vec![k as f64, lhs, rhs]);
    }
    t.finish()
}

/// `f(Q) = Q(1+Q)^{p/2-1} + (2 - (1+Q)^{p/2})/p`.
pub fn f_kernel(q: f64, p: f64) -> f64 {
    q * (1.0 + q).powf(0.5 * p - 1.0) + (2.0 - (1.0 + q).powf(0.5 * p)) / p
}

/// `f(Q)/(1+Q)^{p/2}` written in `t = 1/(1+Q)`: `1 - t + (2 t^{p/2} - 1)/p`.
pub fn f_h_ratio(q: f64, p: f64) -> f64 {
    let t = 1.0 / (1.0 + q);
    1.0 - t + (2.0 * t.powf(0.5 * p) - 1.0) / p
}

/// `1/p ≤ f/H ≤ (p-1)/p`, `1/3 ≤ f/H ≤ 2/3`, and monotonicity in t on a fine grid.
pub fn check_f_h_comparison(cfg: &FuzzConfig) -> [CheckReport; 3] {
    let mut tp = Tracker::new("f_h_ratio_p");
    let mut t3 = Tracker::new("f_h_ratio_thirds");
    let mut tm = Tracker::new("f_h_ratio_monotone");
    let mut s = Sampler::new(cfg, 6);
    for i in 0..cfg.samples {
        let p = s.p(cfg);
        let q = if i % 100 == 0 { 0.0 } else { s.magnitude() };
        let direct = f_kernel(q, p) / kernels::h(q, p);
        let r = f_h_ratio(q, p);
        // the closed form in t and the direct quotient agree where no cancellation occurs
        let r = if q < 1e3 { direct } else { r };
        tp.record(1.0 / p, r, 1.0, || vec![p, q, r]);
        tp.record(r, (p - 1.0) / p, 1.0, || vec![p, q, r]);
        t3.record(1.0 / 3.0, r, 1.0, || vec![p, q, r]);
        t3.record(r, 2.0 / 3.0, 1.0, || vec![p, q, r]);
    }
    for &p in &cfg.p_grid {
        let n = 10_000;
        let mut prev = f_h_ratio(0.0, p);
        for j in 1..=n {
            // t decreases from 1 to 0 as Q grows, so the ratio must not decrease
            let t = 1.0 - j as f64 / n as f64;
            let q = if t > 0.0 { 1.0 / t - 1.0 } else { f64::INFINITY };
            let r = if q.is_finite() { f_h_ratio(q, p) } else { 1.0 - 1.0 / p };
            tm.record(prev, r, 1.0, || vec![p, q]);
            prev = r;
        }
    }
    [tp.finish(), t3.finish(), tm.finish()]
}

/// Exact coefficient algebra of the Bochner power estimate:
/// `κ_β(p, β) = 0` for β ≥ 1, nonincreasing in β, `κ(p, γ) = κ_β(p, γ/2)`,
/// and `|dφ|² + (p-2)⟨dφ, 𝒜 dφ⟩ ≤ (p-1)|dφ|²` on random curvatures.
pub fn check_bochner_coefficients(cfg: &FuzzConfig) -> CheckReport {
    let mut t = Tracker::new("bochner_coefficients");
    let mut s = Sampler::new(cfg, 7);
    for _ in 0..cfg.samples / 10 {
        let p = s.p(cfg);
        let beta = s.rng.random_range(0.0..3.0);
        let b2 = beta + s.rng.random_range(0.0..1.0);
        t.record(kappa_beta(p, b2), kappa_beta(p, beta), 1.0, || vec![p, beta, b2]);
        if beta >= 1.0 {
            t.record(kappa_beta(p, beta).abs(), 0.0, 1.0, || vec![p, beta]);
        }
        let gamma = 2.0 * beta;
        t.record((kappa(p, gamma) - kappa_beta(p, beta)).abs(), 0.0, 1.0, || vec![p, gamma]);
        let f = GForm::from_coeffs(2, 3, s.vector(18)).unwrap();
        let a = curvature_endo(&f).unwrap();
        let dv = s.vector(4);
        let dphi = [dv[0], dv[1], dv[2], dv[3]];
        let ad = a.apply(dphi);
        let quad: f64 = (0..4).map(|i| dphi[i] * ad[i]).sum();
        let g2 = norm_sq(&dv);
        t.record(g2 + (p - 2.0) * quad, (p - 1.0) * g2, (p - 1.0) * g2, || vec![p, g2, quad]);
    }
    t.finish()
}

/// `|d|F|| ≤ |∇_A F|` at random points of random polynomial potentials,
/// with both sides by central differences.
pub fn check_kato(cfg: &FuzzConfig) -> CheckReport {
    struct Poly {
        lin: [[[f64; 4]; 3]; 4],
        quad: [[[f64; 4]; 3]; 4],
    }
    impl ContinuumField for Poly {
        fn potential(&self, x: [f64; 4]) -> [[f64; 3]; 4] {
            std::array::from_fn(|mu| {
                std::array::from_fn(|a| {
                    (0..4).map(|i| self.lin[mu][a][i] * x[i] + self.quad[mu][a][i] * x[i] * x[(i + 1) % 4]).sum()
                })
            })
        }
        fn length_scale(&self, _x: [f64; 4]) -> f64 {
            1.0
        }
    }
    let mut t = Tracker::new("kato");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 8);
    let mut g = || rng.random_range(-1.0..1.0);
    for _ in 0..(cfg.samples / 100).max(1) {
        let field = Poly {
            lin: std::array::from_fn(|_| std::array::from_fn(|_| std::array::from_fn(|_| g()))),
            quad: std::array::from_fn(|_| std::array::from_fn(|_| std::array::from_fn(|_| g()))),
        };
        let x = [g(), g(), g(), g()];
        let s = 1e-4;
        let f0 = crate::instanton::curvature_fd(&field, x);
        let n0 = curvature_norm(&f0, 1.0);
        let a = field.potential(x);
        let (mut dn2, mut grad2) = (0.0, 0.0);
        for mu in 0..4 {
            let at = |k: f64| {
                let mut y = x;
                y[mu] += k * s;
                crate::instanton::curvature_fd(&field, y)
            };
            let (fp, fm) = (at(1.0), at(-1.0));
            dn2 += ((curvature_norm(&fp, 1.0) - curvature_norm(&fm, 1.0)) / (2.0 * s)).powi(2);
            for i in 0..6 {
                let c = crate::instanton::cross(a[mu], f0[i]);
                let v: [f64; 3] = std::array::from_fn(|j| (fp[i][j] - fm[i][j]) / (2.0 * s) + 2.0 * c[j]);
                grad2 += 2.0 * dot3(v, v);
            }
        }
        let _ = n0;
        // finite differences of nested finite differences carry ~1e-7 relative noise
        t.record(dn2.sqrt(), grad2.sqrt() * (1.0 + 1e-6), grad2.sqrt().max(1e-300), || x.to_vec());
    }
    t.finish()
}

fn curvature_norm(f: &QCurvature, c: f64) -> f64 {
    crate::instanton::curvature_sq(f, c).sqrt()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct KatoYauLevel {
    pub h: f64,
    pub sites: usize,
    /// Sites with `μ|d|F||² > |∇_A F|²` before any allowance.
    pub raw_violations: usize,
    /// `max_s (μ|d|F||² - |∇_A F|²)_+ / max_s |∇_A F|²`.
    pub allowance: f64,
    pub max_grad_sq: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KatoYauReport {
    pub p: f64,
    pub mu: f64,
    pub stencil: KatoStencil,
    pub levels: Vec<KatoYauLevel>,
    /// Successive allowance ratios under halving of h.
    pub ratios: Vec<f64>,
    pub pass: bool,
}

/// Per-site Kato-Yau excess from `F` at x and at `x ± h e_μ`, with
/// `∇_μ F ≈ (F(x + h e_μ) - F(x - h e_μ))/2h + [A_μ(x), F(x)]`.
fn kato_yau_site(f0: &QCurvature, plus: &[QCurvature; 4], minus: &[QCurvature; 4], a: &[[f64; 3]; 4], h: f64, c: f64, mu_p: f64) -> (f64, f64) {
    let (mut dn2, mut grad2) = (0.0, 0.0);
    for mu in 0..4 {
        dn2 += ((curvature_norm(&plus[mu], c) - curvature_norm(&minus[mu], c)) / (2.0 * h)).powi(2);
        for i in 0..6 {
            let cr = crate::instanton::cross(a[mu], f0[i]);
            let v: [f64; 3] = std::array::from_fn(|j| (plus[mu][i][j] - minus[mu][i][j]) / (2.0 * h) + 2.0 * cr[j]);
            grad2 += 2.0 * c * dot3(v, v);
        }
    }
    (mu_p * dn2 - grad2, grad2)
}

/// Kato-Yau excess of the lattice curvature of a BPST on the ball of radius
/// `radius_over_lambda · λ` at spacing `λ / lambda_over_h`, streamed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KatoStencil {
    /// Plaquette curvature from forward differences; first order.
    Plaquette,
    /// Central differences of A with the bracket at the same point; second order.
    Centered,
}

fn centered_curvature_at(field: &impl ContinuumField, x: [f64; 4], h: f64) -> QCurvature {
    let a = field.potential(x);
    let at = |mu: usize, k: f64| {
        let mut y = x;
        y[mu] += k * h;
        field.potential(y)
    };
    let plus: [_; 4] = std::array::from_fn(|mu| at(mu, 1.0));
    let minus: [_; 4] = std::array::from_fn(|mu| at(mu, -1.0));
    std::array::from_fn(|i| {
        let (mu, nu) = PAIRS[i];
        let c = crate::instanton::cross(a[mu], a[nu]);
        std::array::from_fn(|k| {
            (plus[mu][nu][k] - minus[mu][nu][k] - plus[nu][mu][k] + minus[nu][mu][k]) / (2.0 * h) + 2.0 * c[k]
        })
    })
}

const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

pub fn kato_yau_bpst_level(lambda_over_h: f64, radius_over_lambda: f64, p: f64, c: f64, stencil: KatoStencil) -> Result<KatoYauLevel> {
    let mu_p = mu(p)?;
    let field = Bpst(BubbleSpec::new([0.0; 4], 1.0)?);
    let h = 1.0 / lambda_over_h;
    let radius = radius_over_lambda;
    let half = (radius / h).ceil() as usize + 1;
    let coord = |i: usize| (i as f64 + 0.5 - half as f64) * h;
    let (mut worst, mut max_grad, mut sites, mut raw) = (0.0f64, 0.0f64, 0usize, 0usize);
    for i0 in 0..2 * half {
        for i1 in 0..2 * half {
            for i2 in 0..2 * half {
                for i3 in 0..2 * half {
                    let x = [coord(i0), coord(i1), coord(i2), coord(i3)];
                    if crate::lattice::norm(x) >= radius {
                        continue;
                    }
                    let curv = |y: [f64; 4]| match stencil {
                        KatoStencil::Plaquette => lattice_curvature_at(&field, y, h),
                        KatoStencil::Centered => centered_curvature_at(&field, y, h),
                    };
                    let f0 = curv(x);
                    let shifted = |k: f64| -> [QCurvature; 4] {
                        std::array::from_fn(|mu| {
                            let mut y = x;
                            y[mu] += k * h;
                            curv(y)
                        })
                    };
                    let (excess, g2) = kato_yau_site(&f0, &shifted(1.0), &shifted(-1.0), &field.potential(x), h, c, mu_p);
                    sites += 1;
                    if excess > 0.0 {
                        raw += 1;
                        worst = worst.max(excess);
                    }
                    max_grad = max_grad.max(g2);
                }
            }
        }
    }
    Ok(KatoYauLevel { h, sites, raw_violations: raw, allowance: worst / max_grad.max(f64::MIN_POSITIVE), max_grad_sq: max_grad })
}

/// The same excess on a lattice field (plaquette stencil) at interior sites
/// whose backward neighbours are interior too.
pub fn kato_yau_lattice(a: &GaugeField, p: f64) -> Result<KatoYauLevel> {
    let mu_p = mu(p)?;
    let f = curvature(a);
    let dom = a.domain();
    let alg = a.algebra();
    let dim = alg.dim();
    let h = dom.h();
    let (mut worst, mut max_grad, mut sites, mut raw) = (0.0f64, 0.0f64, 0usize, 0usize);
    let mut v = vec![0.0; dim];
    'sites: for s in dom.interior_sites() {
        let mut nb = [(0, 0); 4];
        for (mu, slot) in nb.iter_mut().enumerate() {
            match (dom.shift(s, mu, 1), dom.shift(s, mu, -1)) {
                (Some(t), Some(b)) if dom.is_interior(b) => *slot = (t, b),
                _ => continue 'sites,
            }
        }
        let fs = f.site(s);
        let (mut dn2, mut grad2) = (0.0, 0.0);
        for (mu, &(t, b)) in nb.iter().enumerate() {
            dn2 += ((f.norms()[t] - f.norms()[b]) / (2.0 * h)).powi(2);
            let am = &a.form().site(s)[mu * dim..(mu + 1) * dim];
            let (ft, fb) = (f.site(t), f.site(b));
            for i in 0..6 {
                for k in 0..dim {
                    v[k] = (ft[i * dim + k] - fb[i * dim + k]) / (2.0 * h);
                }
                alg.bracket_acc(am, &fs[i * dim..(i + 1) * dim], 1.0, &mut v);
                grad2 += v.iter().map(|x| x * x).sum::<f64>();
            }
        }
        let excess = mu_p * dn2 - grad2;
        sites += 1;
        if excess > 0.0 {
            raw += 1;
            worst = worst.max(excess);
        }
        max_grad = max_grad.max(grad2);
    }
    Ok(KatoYauLevel { h, sites, raw_violations: raw, allowance: worst / max_grad.max(f64::MIN_POSITIVE), max_grad_sq: max_grad })
}

/// Kato-Yau on BPST at the given resolutions; passes when every halving of h
/// shrinks the allowance by at least `min_ratio`, or the allowance is already
/// below `floor`.
pub fn check_kato_yau(
    resolutions: &[f64],
    radius_over_lambda: f64,
    p: f64,
    c: f64,
    stencil: KatoStencil,
    min_ratio: f64,
    floor: f64,
) -> Result<KatoYauReport> {
    let levels = resolutions
        .iter()
        .map(|&r| kato_yau_bpst_level(r, radius_over_lambda, p, c, stencil))
        .collect::<Result<Vec<_>>>()?;
    let ratios: Vec<f64> = levels.windows(2).map(|w| w[0].allowance / w[1].allowance.max(f64::MIN_POSITIVE)).collect();
    let pass = levels.windows(2).zip(&ratios).all(|(w, r)| w[1].allowance <= floor || *r >= min_ratio);
    Ok(KatoYauReport { p, mu: mu(p)?, stencil, levels, ratios, pass })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChainRuleLevel {
    pub h: f64,
    /// Max over interior sites of `|lhs - rhs| / max |rhs|`.
    pub defect: f64,
}

/// Chain rule `ℒ_p φ^β = βφ^{β-1} ℒ_p φ + β(1-β)φ^{β-2}(|dφ|² + (p-2)⟨dφ, 𝒜dφ⟩)`
/// with `ℒ_p u = d^*((id + (p-2)𝒜) du)` for `φ = 1 + |x|²` and a fixed
/// curvature, both sides assembled independently on the lattice.
pub fn bochner_chain_rule_level(h: f64, p: f64, beta: f64, f: &GForm) -> Result<ChainRuleLevel> {
    let dom = Arc::new(Domain::ball(1.0, h)?);
    let a = curvature_endo(f)?;
    let m = |v: [f64; 4]| {
        let av = a.apply(v);
        std::array::from_fn::<f64, 4, _>(|i| v[i] + (p - 2.0) * av[i])
    };
    let lp = |u: &LatticeForm| -> Result<LatticeForm> {
        let du = d(u)?;
        let mut flux = du.clone();
        for s in 0..dom.site_count() {
            let g = du.site(s);
            let mg = m([g[0], g[1], g[2], g[3]]);
            flux.site_mut(s).copy_from_slice(&mg);
        }
        d_star(&flux)
    };
    let phi = LatticeForm::from_fn(&dom, 0, 1, |_, x, out| out[0] = 1.0 + crate::lattice::norm(x).powi(2))?;
    let phib = LatticeForm::from_fn(&dom, 0, 1, |_, x, out| out[0] = (1.0 + crate::lattice::norm(x).powi(2)).powf(beta))?;
    let lhs = lp(&phib)?;
    let lphi = lp(&phi)?;
    let dphi = d(&phi)?;
    let (mut worst, mut top) = (0.0f64, 0.0f64);
    // interior sites two layers in, so every stencil reads genuine samples
    for s in dom.interior_sites() {
        if (0..4).any(|mu| dom.shift(s, mu, -1).is_none_or(|t| !dom.is_interior(t))) {
            continue;
        }
        let ph = phi.site(s)[0];
        let g = dphi.site(s);
        let gv = [g[0], g[1], g[2], g[3]];
        let ag = a.apply(gv);
        let quad: f64 = (0..4).map(|i| gv[i] * ag[i]).sum();
        let g2: f64 = gv.iter().map(|x| x * x).sum();
        let rhs = beta * ph.powf(beta - 1.0) * lphi.site(s)[0] + beta * (1.0 - beta) * ph.powf(beta - 2.0) * (g2 + (p - 2.0) * quad);
        worst = worst.max((lhs.site(s)[0] - rhs).abs());
        top = top.max(rhs.abs());
    }
    Ok(ChainRuleLevel { h, defect: worst / top.max(f64::MIN_POSITIVE) })
}

#[derive(Debug, Clone, Serialize)]
pub struct Scorecard {
    pub config: FuzzConfig,
    pub checks: Vec<CheckReport>,
    pub kato_yau: Option<KatoYauReport>,
    pub chain_rule: Vec<ChainRuleLevel>,
    pub hardy_worst_ratio: f64,
    pub hardy_h: f64,
    pub gaffney_torus_defect: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatteryOptions {
    pub fuzz: FuzzConfig,
    /// BPST resolutions λ/h for the Kato-Yau refinement; empty skips it.
    pub kato_yau_resolutions: Vec<f64>,
    pub hardy_samples: usize,
    pub hardy_h: f64,
}

impl Default for BatteryOptions {
    fn default() -> Self {
        Self { fuzz: FuzzConfig::default(), kato_yau_resolutions: vec![4.0, 8.0], hardy_samples: 1000, hardy_h: 1.0 / 16.0 }
    }
}

/// The whole battery.
pub fn run_battery(opts: &BatteryOptions) -> Result<Scorecard> {
    let cfg = &opts.fuzz;
    let mut checks = vec![check_monotone_pairing(cfg), check_power_subadditivity(cfg)];
    checks.extend(check_v_h_kernels(cfg));
    checks.extend(check_curvature_endo_bounds(cfg));
    checks.push(check_wedge_identity(cfg));
    checks.extend(check_f_h_comparison(cfg));
    checks.push(check_bochner_coefficients(cfg));
    checks.push(check_kato(cfg));
    let kato_yau = if opts.kato_yau_resolutions.len() >= 2 {
        Some(check_kato_yau(&opts.kato_yau_resolutions, 2.0, 2.0, 1.0, KatoStencil::Centered, 1.8, 1e-10)?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 9);
    let f = GForm::from_coeffs(2, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let chain_rule = [0.1, 0.05]
        .iter()
        .map(|&h| bochner_chain_rule_level(h, 2.5, 0.5, &f))
        .collect::<Result<Vec<_>>>()?;
    let hardy = hardy_battery(opts.hardy_samples, opts.hardy_h, cfg.seed)?;
    let gaffney_torus_defect = torus_gaffney_defect(cfg.seed)?;
    let pass = checks.iter().all(|c| c.pass)
        && kato_yau.as_ref().is_none_or(|k| k.pass)
        && chain_rule.windows(2).all(|w| w[1].defect < w[0].defect)
        && hardy.worst_ratio <= 1.0 + opts.hardy_h
        && gaffney_torus_defect < 1e-12;
    Ok(Scorecard {
        config: cfg.clone(),
        checks,
        kato_yau,
        chain_rule,
        hardy_worst_ratio: hardy.worst_ratio,
        hardy_h: opts.hardy_h,
        gaffney_torus_defect,
        pass,
    })
}

/// Discrete Gaffney identity defect for a random Lie-valued 1-form on an 8⁴ torus.
pub fn torus_gaffney_defect(seed: u64) -> Result<f64> {
    let dom = Arc::new(Domain::torus(8, 0.25)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 10);
    let data: Vec<f64> = (0..dom.site_count() * 12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a = LatticeForm::from_data(&dom, 1, 3, data)?;
    gaffney_defect(&a)
}

/// Convenience for tests and the CLI: an su(2) algebra with normalization c.
pub fn su2(c: f64) -> Result<Arc<Algebra>> {
    Ok(Arc::new(Algebra::su_scaled(2, c)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FuzzConfig {
        FuzzConfig { samples: 5_000, ..FuzzConfig::default() }
    }

    #[test]
    fn pairing_examples() {
        let (l, r, _) = monotone_pairing_sides(&[2.0], &[0.0], 0.0);
        assert_eq!((l, r), (2.0, 4.0));
        let (l, r, _) = monotone_pairing_sides(&[1.0, 2.0], &[1.0, 2.0], 0.3);
        assert_eq!((l, r), (0.0, 0.0));
        assert!(check_monotone_pairing(&small()).pass);
    }

    #[test]
    fn pairing_fails_beyond_one_half() {
        // u = -v large: ½ 2^{2α+2} |u|^{2α+2} against 4 (1+|u|²)^α |u|²
        let u = [1e4];
        let (l, r, _) = monotone_pairing_sides(&u, &[-1e4], 0.75);
        assert!(l > r);
    }

    #[test]
    fn fuzz_checks_pass() {
        let cfg = small();
        assert!(check_power_subadditivity(&cfg).pass);
        for c in check_v_h_kernels(&cfg) {
            assert!(c.pass, "{c:?}");
        }
        for c in check_curvature_endo_bounds(&cfg) {
            assert!(c.pass, "{c:?}");
        }
        assert!(check_wedge_identity(&cfg).pass);
        for c in check_f_h_comparison(&cfg) {
            assert!(c.pass, "{c:?}");
        }
        assert!(check_bochner_coefficients(&cfg).pass);
        let k = check_kato(&cfg);
        assert!(k.pass, "{k:?}");
    }

    #[test]
    fn f_h_endpoints() {
        for p in [2.0, 2.5, 3.0] {
            assert!((f_kernel(0.0, p) - 1.0 / p).abs() < 1e-15);
            assert!((f_h_ratio(0.0, p) - 1.0 / p).abs() < 1e-15);
        }
        assert!((f_h_ratio(1e12, 2.0) - 0.5).abs() < 1e-11);
        assert!((f_kernel(0.7, 2.4) / kernels::h(0.7, 2.4) - f_h_ratio(0.7, 2.4)).abs() < 1e-14);
    }

    #[test]
    fn chain_rule_converges_and_trivializes_at_beta_one() {
        let f = GForm::from_coeffs(2, 3, (0..18).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let coarse = bochner_chain_rule_level(0.1, 2.5, 0.5, &f).unwrap();
        let fine = bochner_chain_rule_level(0.05, 2.5, 0.5, &f).unwrap();
        assert!(fine.defect < 0.6 * coarse.defect, "{coarse:?} {fine:?}");
        let one = bochner_chain_rule_level(0.1, 2.5, 1.0, &f).unwrap();
        assert!(one.defect < 1e-12);
    }

    #[test]
    fn kato_yau_lattice_agrees_with_stream() {
        let alg = su2(1.0).unwrap();
        let dom = Arc::new(Domain::ball(2.0 + 3.0 / 4.0, 0.25).unwrap());
        let a = crate::instanton::bpst(1.0, [0.0; 4], &alg, &dom).unwrap();
        let lat = kato_yau_lattice(&a, 2.0).unwrap();
        let stream = kato_yau_bpst_level(4.0, 2.0, 2.0, 1.0, KatoStencil::Plaquette).unwrap();
        assert!(lat.max_grad_sq > 0.0 && stream.max_grad_sq > 0.0);
        assert!((lat.max_grad_sq / stream.max_grad_sq - 1.0).abs() < 1e-9, "{lat:?} {stream:?}");
    }

    #[test]
    fn torus_gaffney() {
        assert!(torus_gaffney_defect(1).unwrap() < 1e-12);
    }
}
