//! Exterior algebra of R⁴ with coefficients in a Lie algebra (or in R).
//!
//! Multi-indices are bitmasks over {0,1,2,3} stored in lexicographic order of
//! increasing indices, so the 2-form components are ordered
//! 01, 02, 03, 12, 13, 23.  Coefficients of a form of degree k over an algebra
//! of dimension `dim` are laid out as `[component][lie index]`.  Real forms use
//! `dim = 1`.

use std::sync::LazyLock;

use nalgebra::Matrix4;

use super::lie::{dot, Algebra, CMatrix, LieElement};
use crate::error::{check_dim, Error, Result};

pub const BINOM4: [usize; 5] = [1, 4, 6, 4, 1];

struct Tables {
    by_degree: [Vec<u8>; 5],
    position: [usize; 16],
}

static TABLES: LazyLock<Tables> = LazyLock::new(|| {
    let mut by_degree: [Vec<u8>; 5] = Default::default();
    let mut masks: Vec<u8> = (0u8..16).collect();
    // lexicographic order of the sorted index lists
    masks.sort_by_key(|m| {
        let idx: Vec<u8> = (0..4).filter(|i| m & (1 << i) != 0).collect();
        idx
    });
    let mut position = [0usize; 16];
    for m in masks {
        let k = m.count_ones() as usize;
        position[m as usize] = by_degree[k].len();
        by_degree[k].push(m);
    }
    Tables { by_degree, position }
});

/// Bitmasks of the increasing multi-indices of degree k, in storage order.
pub fn multi_indices(k: usize) -> &'static [u8] {
    &TABLES.by_degree[k]
}

/// Storage position of a multi-index within its degree.
pub fn index_of(mask: u8) -> usize {
    TABLES.position[mask as usize]
}

/// Index list of a mask, increasing.
pub fn mask_indices(mask: u8) -> Vec<usize> {
    (0..4).filter(|i| mask & (1 << i) != 0).collect()
}

/// Sign with `e^A ∧ e^B = sign · e^{A ∪ B}`, zero when the sets overlap.
pub fn wedge_sign(a: u8, b: u8) -> f64 {
    if a & b != 0 {
        return 0.0;
    }
    let mut inversions = 0;
    for i in 0..4 {
        if a & (1 << i) != 0 {
            inversions += (b & ((1u8 << i) - 1)).count_ones();
        }
    }
    if inversions % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `⋆ e^I = sign · e^{I^c}`; returns (storage index of I^c, sign).
pub fn star_target(mask: u8) -> (usize, f64) {
    let c = !mask & 0xF;
    (index_of(c), wedge_sign(mask, c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GForm {
    pub degree: usize,
    pub dim: usize,
    pub coeffs: Vec<f64>,
}

impl GForm {
    pub fn zero(degree: usize, dim: usize) -> Result<Self> {
        if degree > 4 {
            return Err(Error::InvalidDegree(degree));
        }
        Ok(Self { degree, dim, coeffs: vec![0.0; BINOM4[degree] * dim] })
    }

    pub fn from_coeffs(degree: usize, dim: usize, coeffs: Vec<f64>) -> Result<Self> {
        if degree > 4 {
            return Err(Error::InvalidDegree(degree));
        }
        check_dim(BINOM4[degree] * dim, coeffs.len())?;
        Ok(Self { degree, dim, coeffs })
    }

    pub fn from_components(degree: usize, comps: &[LieElement]) -> Result<Self> {
        if degree > 4 {
            return Err(Error::InvalidDegree(degree));
        }
        check_dim(BINOM4[degree], comps.len())?;
        let dim = comps.first().map_or(0, |c| c.dim());
        let mut coeffs = Vec::with_capacity(comps.len() * dim);
        for c in comps {
            check_dim(dim, c.dim())?;
            coeffs.extend_from_slice(&c.coeffs);
        }
        Ok(Self { degree, dim, coeffs })
    }

    /// Real form with a single component set to one: `e^I`.
    pub fn basis(mask: u8) -> Self {
        let k = mask.count_ones() as usize;
        let mut f = Self::zero(k, 1).unwrap();
        f.coeffs[index_of(mask)] = 1.0;
        f
    }

    /// Real 1-form from a vector.
    pub fn covector(x: [f64; 4]) -> Self {
        Self { degree: 1, dim: 1, coeffs: x.to_vec() }
    }

    /// Real 1-form `X^μ dx^μ` tensored with a Lie element.
    pub fn component(&self, i: usize) -> &[f64] {
        &self.coeffs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn component_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.coeffs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.coeffs, &self.coeffs)
    }

    pub fn inner(&self, other: &Self) -> Result<f64> {
        check_dim(self.degree, other.degree)?;
        check_dim(self.dim, other.dim)?;
        Ok(dot(&self.coeffs, &other.coeffs))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { degree: self.degree, dim: self.dim, coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }

    pub fn hodge_star(&self) -> Self {
        let mut out = Self::zero(4 - self.degree, self.dim).unwrap();
        hodge_star_slice(self.degree, self.dim, &self.coeffs, &mut out.coeffs);
        out
    }

    /// Contraction `ι_X ω`.
    pub fn interior(&self, x: [f64; 4]) -> Result<Self> {
        if self.degree == 0 {
            return Err(Error::InvalidDegree(0));
        }
        let mut out = Self::zero(self.degree - 1, self.dim)?;
        for (i, &m) in multi_indices(self.degree).iter().enumerate() {
            let idx = mask_indices(m);
            for (pos, &mu) in idx.iter().enumerate() {
                let sign = if pos % 2 == 0 { 1.0 } else { -1.0 };
                let j = index_of(m & !(1 << mu));
                for a in 0..self.dim {
                    out.coeffs[j * self.dim + a] += sign * x[mu] * self.coeffs[i * self.dim + a];
                }
            }
        }
        Ok(out)
    }

    /// `X ∧ ω` for a real 1-form X built from a vector.
    pub fn wedge_vector(&self, x: [f64; 4]) -> Result<Self> {
        wedge_real(&GForm::covector(x), self)
    }
}

fn check_degrees(k: usize, l: usize) -> Result<()> {
    if k + l > 4 {
        Err(Error::DegreeOverflow { k, l })
    } else {
        Ok(())
    }
}

/// Generic graded product over all component pairs; `pair` accumulates
/// `sign * (ω_J ⋅ τ_K)` into the output component.
fn wedge_with<F>(w: &GForm, t: &GForm, out_dim: usize, mut pair: F) -> Result<GForm>
where
    F: FnMut(f64, &[f64], &[f64], &mut [f64]),
{
    check_degrees(w.degree, t.degree)?;
    let mut out = GForm::zero(w.degree + t.degree, out_dim)?;
    for (i, &mj) in multi_indices(w.degree).iter().enumerate() {
        for (j, &mk) in multi_indices(t.degree).iter().enumerate() {
            let s = wedge_sign(mj, mk);
            if s == 0.0 {
                continue;
            }
            let o = index_of(mj | mk);
            pair(s, w.component(i), t.component(j), out.component_mut(o));
        }
    }
    Ok(out)
}

/// Real form times a (real or Lie-valued) form.
pub fn wedge_real(x: &GForm, w: &GForm) -> Result<GForm> {
    check_dim(1, x.dim)?;
    wedge_with(x, w, w.dim, |s, a, b, out| {
        for (o, v) in out.iter_mut().zip(b) {
            *o += s * a[0] * v;
        }
    })
}

/// Scalar pairing `Σ sign ⟨ω_J, τ_K⟩ e^{J∪K}`; the result is a real form.
pub fn wedge_scalar(w: &GForm, t: &GForm) -> Result<GForm> {
    check_dim(w.dim, t.dim)?;
    wedge_with(w, t, 1, |s, a, b, out| out[0] += s * dot(a, b))
}

/// Graded bracket `[ω ∧ τ] = Σ sign [ω_J, τ_K] e^{J∪K}`.
/// For a 1-form `a`, `[a ∧ a]_{μν} = 2 [a_μ, a_ν]`.
pub fn wedge_bracket(alg: &Algebra, w: &GForm, t: &GForm) -> Result<GForm> {
    check_dim(alg.dim(), w.dim)?;
    check_dim(alg.dim(), t.dim)?;
    wedge_with(w, t, alg.dim(), |s, a, b, out| alg.bracket_acc(a, b, s, out))
}

/// Form with matrix coefficients, the value of a matrix-product wedge.
#[derive(Debug, Clone)]
pub struct MatrixForm {
    pub degree: usize,
    pub comps: Vec<CMatrix>,
}

/// Matrix-product wedge `Σ sign ω_J τ_K e^{J∪K}` in the defining representation.
/// For a 1-form `a`, `(a ∧ a)_{μν} = [a_μ, a_ν]`.
pub fn wedge_matrix(alg: &Algebra, w: &GForm, t: &GForm) -> Result<MatrixForm> {
    check_dim(alg.dim(), w.dim)?;
    check_dim(alg.dim(), t.dim)?;
    check_degrees(w.degree, t.degree)?;
    let k = w.degree + t.degree;
    let n = alg.matrix_size();
    let mut comps = vec![CMatrix::zeros(n, n); BINOM4[k]];
    for (i, &mj) in multi_indices(w.degree).iter().enumerate() {
        for (j, &mk) in multi_indices(t.degree).iter().enumerate() {
            let s = wedge_sign(mj, mk);
            if s == 0.0 {
                continue;
            }
            let prod = alg.slice_to_matrix(w.component(i)) * alg.slice_to_matrix(t.component(j));
            comps[index_of(mj | mk)] += prod * super::lie::Complex64::new(s, 0.0);
        }
    }
    Ok(MatrixForm { degree: k, comps })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    MatrixProduct,
    Bracket,
    ScalarPair,
}

#[derive(Debug, Clone)]
pub enum WedgeValue {
    Matrix(MatrixForm),
    Lie(GForm),
    Real(GForm),
}

pub fn wedge(alg: &Algebra, w: &GForm, t: &GForm, pairing: Pairing) -> Result<WedgeValue> {
    match pairing {
        Pairing::MatrixProduct => wedge_matrix(alg, w, t).map(WedgeValue::Matrix),
        Pairing::Bracket => wedge_bracket(alg, w, t).map(WedgeValue::Lie),
        Pairing::ScalarPair => wedge_scalar(w, t).map(WedgeValue::Real),
    }
}

pub(crate) fn hodge_star_slice(degree: usize, dim: usize, src: &[f64], dst: &mut [f64]) {
    for (i, &m) in multi_indices(degree).iter().enumerate() {
        let (j, s) = star_target(m);
        for a in 0..dim {
            dst[j * dim + a] = s * src[i * dim + a];
        }
    }
}

/// The symmetric endomorphism `𝒜^{αβ} = ⟨dx^α ∧ ⋆F, dx^β ∧ ⋆F⟩ / (1 + |F|²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureEndo {
    pub matrix: Matrix4<f64>,
}

impl CurvatureEndo {
    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// `𝒜^{αβ} x_α x_β / |x|²`.
    pub fn along(&self, x: [f64; 4]) -> f64 {
        let v = nalgebra::Vector4::from(x);
        let n2 = v.norm_squared();
        if n2 == 0.0 {
            return 0.0;
        }
        (v.transpose() * self.matrix * v)[(0, 0)] / n2
    }

    pub fn eigenvalues(&self) -> [f64; 4] {
        let e = self.matrix.symmetric_eigenvalues();
        [e[0], e[1], e[2], e[3]]
    }

    pub fn apply(&self, x: [f64; 4]) -> [f64; 4] {
        let v = self.matrix * nalgebra::Vector4::from(x);
        [v[0], v[1], v[2], v[3]]
    }
}

pub fn curvature_endo(f: &GForm) -> Result<CurvatureEndo> {
    if f.degree != 2 {
        return Err(Error::InvalidDegree(f.degree));
    }
    Ok(CurvatureEndo { matrix: curvature_endo_slice(&f.coeffs, f.dim) })
}

pub(crate) fn curvature_endo_slice(f: &[f64], dim: usize) -> Matrix4<f64> {
    let mut sf = vec![0.0; 6 * dim];
    hodge_star_slice(2, dim, f, &mut sf);
    let mut rows: [Vec<f64>; 4] = Default::default();
    for (alpha, row) in rows.iter_mut().enumerate() {
        *row = vec![0.0; 4 * dim];
        for (i, &m) in multi_indices(2).iter().enumerate() {
            let s = wedge_sign(1 << alpha, m);
            if s == 0.0 {
                continue;
            }
            let o = index_of(m | (1 << alpha));
            for a in 0..dim {
                row[o * dim + a] += s * sf[i * dim + a];
            }
        }
    }
    let denom = 1.0 + dot(f, f);
    let mut m = Matrix4::zeros();
    for a in 0..4 {
        for b in a..4 {
            let v = dot(&rows[a], &rows[b]) / denom;
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    m
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn form(k: usize, dim: usize, scale: f64) -> impl Strategy<Value = GForm> {
        prop::collection::vec(-1.0..1.0f64, BINOM4[k] * dim)
            .prop_map(move |c| GForm::from_coeffs(k, dim, c.into_iter().map(|v| v * scale).collect()).unwrap())
    }

    fn pair() -> impl Strategy<Value = (GForm, GForm)> {
        (0usize..=4, 0usize..=4)
            .prop_filter("degrees fit in 4", |(k, l)| k + l <= 4)
            .prop_flat_map(|(k, l)| (form(k, 3, 1.0), form(l, 3, 1.0)))
    }

    proptest! {
        #[test]
        fn scalar_wedge_is_graded_commutative((w, t) in pair()) {
            let a = wedge_scalar(&w, &t).unwrap();
            let b = wedge_scalar(&t, &w).unwrap();
            let sign = if (w.degree * t.degree) % 2 == 0 { 1.0 } else { -1.0 };
            for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
                prop_assert!((x - sign * y).abs() < 1e-14);
            }
        }

        #[test]
        fn hodge_star_is_an_isometric_involution(k in 0usize..=4, seed in any::<u64>()) {
            let coeffs: Vec<f64> = (0..BINOM4[k] * 3).map(|i| ((seed.wrapping_add(i as u64) % 1000) as f64 / 500.0) - 1.0).collect();
            let w = GForm::from_coeffs(k, 3, coeffs).unwrap();
            let s = w.hodge_star();
            prop_assert!((s.norm_sq() - w.norm_sq()).abs() < 1e-14 * (1.0 + w.norm_sq()));
            let sign = if (k * (4 - k)) % 2 == 0 { 1.0 } else { -1.0 };
            prop_assert_eq!(s.hodge_star().coeffs, w.scaled(sign).coeffs);
        }

        #[test]
        fn curvature_endo_is_psd_and_contracting(f in form(2, 3, 1.0), log_scale in -6.0..6.0f64) {
            let f = f.scaled(10f64.powf(log_scale));
            let e = curvature_endo(&f).unwrap().eigenvalues();
            for l in e {
                prop_assert!(l >= -1e-12 && l <= 1.0 + 1e-12, "{e:?}");
            }
        }
    }
}
