//! Lattice domains in R⁴: periodic tori and Dirichlet balls/annuli.
//!
//! Sites sit at cell centers `x_i = (i + 1/2 - n/2) h`, so the grid is
//! symmetric about the origin and no site sits exactly at 0.  Site indices are
//! row-major with axis 0 slowest.  Ball and annulus domains are boxes with an
//! inside mask; everything outside the box reads as zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extra layers of sites kept around a ball so that the zero collar is
/// always represented inside the box.
pub const COLLAR: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainKind {
    Torus { side: f64 },
    Ball { radius: f64 },
    Annulus { inner: f64, outer: f64 },
}

const INSIDE: u8 = 1;
const INTERIOR: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    kind: DomainKind,
    n: usize,
    h: f64,
    flags: Vec<u8>,
}

impl Domain {
    /// Periodic torus with `n` sites per axis and spacing `h` (side `n h`).
    pub fn torus(n: usize, h: f64) -> Result<Self> {
        check_spacing(h)?;
        if n < 4 {
            return Err(Error::InvalidDomain(format!("torus needs at least 4 sites per axis, got {n}")));
        }
        let mut d = Self { kind: DomainKind::Torus { side: n as f64 * h }, n, h, flags: Vec::new() };
        d.flags = vec![INSIDE | INTERIOR; d.site_count()];
        Ok(d)
    }

    pub fn ball(radius: f64, h: f64) -> Result<Self> {
        check_spacing(h)?;
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidDomain(format!("ball radius must be positive, got {radius}")));
        }
        Self::boxed(DomainKind::Ball { radius }, radius, h)
    }

    pub fn annulus(inner: f64, outer: f64, h: f64) -> Result<Self> {
        check_spacing(h)?;
        if !(inner > 0.0 && inner < outer && outer.is_finite()) {
            return Err(Error::InvalidDomain(format!("annulus needs 0 < r < R, got r = {inner}, R = {outer}")));
        }
        Self::boxed(DomainKind::Annulus { inner, outer }, outer, h)
    }

    pub fn from_kind(kind: DomainKind, h: f64) -> Result<Self> {
        match kind {
            DomainKind::Torus { side } => {
                let n = (side / h).round() as usize;
                if ((n as f64) * h - side).abs() > 1e-9 * side {
                    return Err(Error::InvalidDomain(format!("torus side {side} is not a multiple of h = {h}")));
                }
                Self::torus(n, h)
            }
            DomainKind::Ball { radius } => Self::ball(radius, h),
            DomainKind::Annulus { inner, outer } => Self::annulus(inner, outer, h),
        }
    }

    fn boxed(kind: DomainKind, outer: f64, h: f64) -> Result<Self> {
        let half = (outer / h).ceil() as usize + COLLAR;
        let n = 2 * half;
        if n < 4 {
            return Err(Error::InvalidDomain("fewer than 4 sites per axis".into()));
        }
        let mut d = Self { kind, n, h, flags: Vec::new() };
        let count = d.site_count();
        let mut flags = vec![0u8; count];
        for (s, f) in flags.iter_mut().enumerate() {
            if d.contains_point(d.coord(s)) {
                *f = INSIDE;
            }
        }
        for s in 0..count {
            if flags[s] & INSIDE == 0 {
                continue;
            }
            let all = (0..4).all(|mu| {
                [1i64, -1].iter().all(|&st| d.shift(s, mu, st).is_some_and(|t| flags[t] & INSIDE != 0))
            });
            if all {
                flags[s] |= INTERIOR;
            }
        }
        d.flags = flags;
        Ok(d)
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn site_count(&self) -> usize {
        self.n.pow(4)
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self.kind, DomainKind::Torus { .. })
    }

    /// Cell measure h⁴.
    pub fn cell(&self) -> f64 {
        self.h.powi(4)
    }

    pub fn contains_point(&self, x: [f64; 4]) -> bool {
        let r = norm(x);
        match self.kind {
            DomainKind::Torus { .. } => true,
            DomainKind::Ball { radius } => r < radius,
            DomainKind::Annulus { inner, outer } => r > inner && r < outer,
        }
    }

    /// Site carries an energy/quadrature contribution.
    #[inline]
    pub fn is_inside(&self, s: usize) -> bool {
        self.flags[s] & INSIDE != 0
    }

    /// Site carries free perturbation degrees of freedom: inside, and so are
    /// all eight lattice neighbours.
    #[inline]
    pub fn is_interior(&self, s: usize) -> bool {
        self.flags[s] & INTERIOR != 0
    }

    pub fn interior_sites(&self) -> Vec<usize> {
        (0..self.site_count()).filter(|&s| self.is_interior(s)).collect()
    }

    pub fn inside_sites(&self) -> Vec<usize> {
        (0..self.site_count()).filter(|&s| self.is_inside(s)).collect()
    }

    #[inline]
    pub fn index(&self, i: [usize; 4]) -> usize {
        ((i[0] * self.n + i[1]) * self.n + i[2]) * self.n + i[3]
    }

    #[inline]
    pub fn multi_index(&self, s: usize) -> [usize; 4] {
        let n = self.n;
        [s / (n * n * n), (s / (n * n)) % n, (s / n) % n, s % n]
    }

    #[inline]
    pub fn axis_coord(&self, i: usize) -> f64 {
        (i as f64 + 0.5 - self.n as f64 / 2.0) * self.h
    }

    #[inline]
    pub fn coord(&self, s: usize) -> [f64; 4] {
        self.multi_index(s).map(|i| self.axis_coord(i))
    }

    #[inline]
    pub fn stride(&self, mu: usize) -> usize {
        self.n.pow(3 - mu as u32)
    }

    /// Neighbour `s + step e_μ`; wraps on the torus, `None` outside a box.
    #[inline]
    pub fn shift(&self, s: usize, mu: usize, step: i64) -> Option<usize> {
        let n = self.n as i64;
        let stride = self.stride(mu) as i64;
        let i = (s as i64 / stride) % n;
        let j = i + step;
        if (0..n).contains(&j) {
            Some((s as i64 + step * stride) as usize)
        } else if self.is_periodic() {
            let j = j.rem_euclid(n);
            Some((s as i64 + (j - i) * stride) as usize)
        } else {
            None
        }
    }

    /// Volume of the inside region as seen by the quadrature.
    pub fn volume(&self) -> f64 {
        self.flags.iter().filter(|f| **f & INSIDE != 0).count() as f64 * self.cell()
    }

    /// Riemann sum `h⁴ Σ f(s)` over inside sites, compensated.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        let mut acc = NeumaierSum::default();
        for (s, v) in f.iter().enumerate() {
            if self.is_inside(s) {
                acc.add(*v);
            }
        }
        acc.value() * self.cell()
    }

    /// Riemann sum over every box site, the pairing under which `d` and
    /// `d_star` are exact adjoints.
    pub fn sum_all(&self, f: impl Iterator<Item = f64>) -> f64 {
        let mut acc = NeumaierSum::default();
        for v in f {
            acc.add(v);
        }
        acc.value() * self.cell()
    }

    pub fn spec(&self) -> DomainSpec {
        DomainSpec { kind: self.kind, n: self.n, h: self.h }
    }
}

/// Serializable descriptor from which a domain is rebuilt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    #[serde(flatten)]
    pub kind: DomainKind,
    pub n: usize,
    pub h: f64,
}

impl DomainSpec {
    pub fn build(&self) -> Result<Domain> {
        let d = Domain::from_kind(self.kind, self.h)?;
        if d.n != self.n {
            return Err(Error::InvalidDomain(format!("descriptor says n = {}, rebuilt n = {}", self.n, d.n)));
        }
        Ok(d)
    }
}

fn check_spacing(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidDomain(format!("spacing must be positive, got {h}")))
    }
}

#[inline]
pub fn norm(x: [f64; 4]) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + x[3] * x[3]).sqrt()
}

/// Compensated (Neumaier) summation: deterministic and accurate regardless
/// of the order of magnitudes encountered.
#[derive(Debug, Default, Clone, Copy)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(Domain::torus(3, 1.0).is_err());
        assert!(Domain::torus(4, 0.0).is_err());
        assert!(Domain::annulus(1.0, 1.0, 0.1).is_err());
        assert!(Domain::annulus(-1.0, 1.0, 0.1).is_err());
        assert!(Domain::ball(1.0, -0.1).is_err());
    }

    #[test]
    fn torus_volume_and_wrap() {
        let d = Domain::torus(6, 0.5).unwrap();
        let ones = vec![1.0; d.site_count()];
        assert!((d.integrate(&ones) - 3f64.powi(4)).abs() < 1e-12);
        let s = d.index([5, 0, 2, 3]);
        assert_eq!(d.shift(s, 0, 1), Some(d.index([0, 0, 2, 3])));
        assert_eq!(d.shift(s, 1, -1), Some(d.index([5, 5, 2, 3])));
        assert_eq!(d.multi_index(s), [5, 0, 2, 3]);
    }

    #[test]
    fn box_shift_and_masks() {
        let d = Domain::ball(1.0, 0.25).unwrap();
        assert_eq!(d.n(), 2 * (4 + COLLAR));
        let s = d.index([0, 3, 3, 3]);
        assert_eq!(d.shift(s, 0, -1), None);
        // coordinates symmetric about the origin
        assert!((d.axis_coord(0) + d.axis_coord(d.n() - 1)).abs() < 1e-15);
        for s in 0..d.site_count() {
            if d.is_interior(s) {
                assert!(d.is_inside(s));
            }
            if d.is_inside(s) {
                assert!(norm(d.coord(s)) < 1.0);
            }
        }
    }

    #[test]
    fn unit_ball_volume_converges() {
        let exact = std::f64::consts::PI.powi(2) / 2.0;
        let mut errs = Vec::new();
        for h in [0.2, 0.1, 0.05] {
            let d = Domain::ball(1.0, h).unwrap();
            errs.push((d.volume() - exact).abs() / exact);
        }
        assert!(errs[2] < 0.02, "{errs:?}");
        assert!(errs[2] < errs[0]);
    }

    #[test]
    fn neumaier_beats_naive() {
        let mut s = NeumaierSum::default();
        for v in [1e16, 1.0, -1e16, 1.0] {
            s.add(v);
        }
        assert_eq!(s.value(), 2.0);
    }
}
