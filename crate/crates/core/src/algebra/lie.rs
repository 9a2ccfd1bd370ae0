//! Matrix Lie algebras su(n) in an orthonormal real basis.
//!
//! The inner product is `<X, Y> = -c tr(XY)` in the defining representation.
//! The default `c = 1` is the normalization under which a charge-one
//! instanton carries curvature energy 8π²; see the README for the discussion
//! of the alternative `c = 2`.

use nalgebra::DMatrix;
pub type Complex64 = nalgebra::Complex<f64>;

use crate::error::{check_dim, Error, Result};

pub type CMatrix = DMatrix<Complex64>;

#[derive(Debug, Clone, PartialEq)]
pub struct LieElement {
    pub coeffs: Vec<f64>,
}

impl LieElement {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn zero(dim: usize) -> Self {
        Self { coeffs: vec![0.0; dim] }
    }

    pub fn basis(dim: usize, a: usize) -> Self {
        let mut e = Self::zero(dim);
        e.coeffs[a] = 1.0;
        e
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self {
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
        })
    }
}

/// su(n) with an orthonormal basis and precomputed structure constants.
#[derive(Debug, Clone)]
pub struct Algebra {
    n: usize,
    scale: f64,
    basis: Vec<CMatrix>,
    /// Nonzero structure constants `(a, b, c, f)` with `[T_a, T_b] = sum_c f T_c`.
    structure: Vec<(usize, usize, usize, f64)>,
}

impl PartialEq for Algebra {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.scale == other.scale
    }
}

impl Algebra {
    pub fn su2() -> Self {
        Self::su(2).expect("su(2) is always constructible")
    }

    pub fn su(n: usize) -> Result<Self> {
        Self::su_scaled(n, 1.0)
    }

    /// su(n) with inner product `-scale * tr(XY)`.
    pub fn su_scaled(n: usize, scale: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::OutOfRange {
                name: "n",
                value: n as f64,
                reason: "su(n) needs n >= 2".into(),
            });
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::OutOfRange {
                name: "scale",
                value: scale,
                reason: "inner product scale must be positive".into(),
            });
        }
        let s = 1.0 / (2.0 * scale).sqrt();
        let basis: Vec<CMatrix> = gell_mann(n)
            .into_iter()
            .map(|l| l * Complex64::new(0.0, -s))
            .collect();
        let dim = basis.len();
        let mut structure = Vec::new();
        for a in 0..dim {
            for b in 0..dim {
                if a == b {
                    continue;
                }
                let comm = &basis[a] * &basis[b] - &basis[b] * &basis[a];
                for (c, tc) in basis.iter().enumerate() {
                    let f = -scale * (&comm * tc).trace().re;
                    if f.abs() > 1e-13 {
                        structure.push((a, b, c, f));
                    }
                }
            }
        }
        Ok(Self { n, scale, basis, structure })
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn matrix_size(&self) -> usize {
        self.n
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn basis_matrix(&self, a: usize) -> &CMatrix {
        &self.basis[a]
    }

    pub fn structure_constants(&self) -> &[(usize, usize, usize, f64)] {
        &self.structure
    }

    pub fn element(&self, coeffs: Vec<f64>) -> Result<LieElement> {
        check_dim(self.dim(), coeffs.len())?;
        Ok(LieElement { coeffs })
    }

    pub fn to_matrix(&self, x: &LieElement) -> Result<CMatrix> {
        check_dim(self.dim(), x.dim())?;
        Ok(self.slice_to_matrix(&x.coeffs))
    }

    pub(crate) fn slice_to_matrix(&self, x: &[f64]) -> CMatrix {
        let mut m = CMatrix::zeros(self.n, self.n);
        for (c, t) in x.iter().zip(&self.basis) {
            if *c != 0.0 {
                m += t * Complex64::new(*c, 0.0);
            }
        }
        m
    }

    /// Orthogonal projection of an arbitrary complex matrix onto the algebra.
    pub fn from_matrix(&self, m: &CMatrix) -> Result<LieElement> {
        check_dim(self.n, m.nrows())?;
        check_dim(self.n, m.ncols())?;
        let mut out = vec![0.0; self.dim()];
        self.project_into(m, &mut out);
        Ok(LieElement { coeffs: out })
    }

    pub(crate) fn project_into(&self, m: &CMatrix, out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(&self.basis) {
            // -c Re tr(T M) picks out the anti-hermitian traceless part
            let mut tr = Complex64::new(0.0, 0.0);
            for i in 0..self.n {
                for j in 0..self.n {
                    tr += t[(i, j)] * m[(j, i)];
                }
            }
            *o = -self.scale * tr.re;
        }
    }

    pub fn bracket(&self, x: &LieElement, y: &LieElement) -> Result<LieElement> {
        check_dim(self.dim(), x.dim())?;
        check_dim(self.dim(), y.dim())?;
        let mut out = vec![0.0; self.dim()];
        self.bracket_acc(&x.coeffs, &y.coeffs, 1.0, &mut out);
        Ok(LieElement { coeffs: out })
    }

    pub fn inner(&self, x: &LieElement, y: &LieElement) -> Result<f64> {
        check_dim(self.dim(), x.dim())?;
        check_dim(self.dim(), y.dim())?;
        Ok(dot(&x.coeffs, &y.coeffs))
    }

    /// `out += s [x, y]` on raw coefficient slices.
    #[inline]
    pub(crate) fn bracket_acc(&self, x: &[f64], y: &[f64], s: f64, out: &mut [f64]) {
        for &(a, b, c, f) in &self.structure {
            out[c] += s * f * x[a] * y[b];
        }
    }

    /// Coefficients of `g^{-1} X g` for a unitary `g`.
    pub(crate) fn conjugate_into(&self, g: &CMatrix, x: &[f64], out: &mut [f64]) {
        let m = self.slice_to_matrix(x);
        let c = g.adjoint() * m * g;
        self.project_into(&c, out);
    }

    pub fn exp(&self, x: &LieElement) -> Result<CMatrix> {
        Ok(self.to_matrix(x)?.exp())
    }
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Hermitian generalized Gell-Mann matrices with `tr(l_a l_b) = 2 δ_ab`.
/// For n = 2 the order is the Pauli triple σ1, σ2, σ3.
fn gell_mann(n: usize) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(n * n - 1);
    let one = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    for j in 0..n {
        for k in (j + 1)..n {
            let mut s = CMatrix::zeros(n, n);
            s[(j, k)] = one;
            s[(k, j)] = one;
            out.push(s);
            let mut a = CMatrix::zeros(n, n);
            a[(j, k)] = -i;
            a[(k, j)] = i;
            out.push(a);
        }
    }
    for l in 1..n {
        let norm = (2.0 / (l * (l + 1)) as f64).sqrt();
        let mut d = CMatrix::zeros(n, n);
        for j in 0..l {
            d[(j, j)] = Complex64::new(norm, 0.0);
        }
        d[(l, l)] = Complex64::new(-(l as f64) * norm, 0.0);
        out.push(d);
    }
    out
}

/// The standard su(2) generators `-i σ_a / 2`, which satisfy `[t_1, t_2] = t_3`.
pub fn su2_standard_generators() -> [CMatrix; 3] {
    let p = gell_mann(2);
    let h = Complex64::new(0.0, -0.5);
    [&p[0] * h, &p[1] * h, &p[2] * h]
}

/// Quaternion `x0 + x1 i + x2 j + x3 k` as an SU(2) matrix, with `i_a -> -i σ_a`.
pub fn quaternion_matrix(x: [f64; 4]) -> CMatrix {
    let c = |re: f64, im: f64| Complex64::new(re, im);
    CMatrix::from_row_slice(
        2,
        2,
        &[c(x[0], -x[3]), c(-x[2], -x[1]), c(x[2], -x[1]), c(x[0], x[3])],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_abs(m: &CMatrix) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn standard_generators_close_on_epsilon() {
        let t = su2_standard_generators();
        let comm = &t[0] * &t[1] - &t[1] * &t[0];
        assert!(max_abs(&(comm - &t[2])) < 1e-15);
        let comm = &t[1] * &t[2] - &t[2] * &t[1];
        assert!(max_abs(&(comm - &t[0])) < 1e-15);
    }

    #[test]
    fn bracket_of_standard_generators_in_coefficients() {
        let alg = Algebra::su2();
        let t = su2_standard_generators();
        let t1 = alg.from_matrix(&t[0]).unwrap();
        let t2 = alg.from_matrix(&t[1]).unwrap();
        let t3 = alg.from_matrix(&t[2]).unwrap();
        let b = alg.bracket(&t1, &t2).unwrap();
        for a in 0..3 {
            assert!((b.coeffs[a] - t3.coeffs[a]).abs() < 1e-14);
        }
        // standard generators have norm^2 1/2 under -tr, 1 under -2tr
        assert!((alg.inner(&t1, &t1).unwrap() - 0.5).abs() < 1e-14);
        let alg2 = Algebra::su_scaled(2, 2.0).unwrap();
        let s1 = alg2.from_matrix(&t[0]).unwrap();
        let s2 = alg2.from_matrix(&t[1]).unwrap();
        assert!((alg2.inner(&s1, &s1).unwrap() - 1.0).abs() < 1e-14);
        assert!(alg2.inner(&s1, &s2).unwrap().abs() < 1e-14);
    }

    #[test]
    fn basis_is_orthonormal_by_trace() {
        for (n, c) in [(2, 1.0), (2, 2.0), (3, 1.0)] {
            let alg = Algebra::su_scaled(n, c).unwrap();
            for a in 0..alg.dim() {
                let ta = alg.basis_matrix(a);
                // anti-hermitian and traceless
                assert!(max_abs(&(ta + ta.adjoint())) < 1e-15);
                assert!(ta.trace().norm() < 1e-15);
                for b in 0..alg.dim() {
                    let ip = -c * (ta * alg.basis_matrix(b)).trace().re;
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((ip - want).abs() < 1e-14, "n={n} a={a} b={b} ip={ip}");
                }
            }
        }
    }

    #[test]
    fn bracket_matches_matrix_commutator_and_jacobi() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [2, 3] {
            let alg = Algebra::su(n).unwrap();
            for _ in 0..100 {
                let mut r = || alg.element((0..alg.dim()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
                let (x, y, z) = (r(), r(), r());
                let (mx, my, mz) = (
                    alg.to_matrix(&x).unwrap(),
                    alg.to_matrix(&y).unwrap(),
                    alg.to_matrix(&z).unwrap(),
                );
                let comm = &mx * &my - &my * &mx;
                let b = alg.to_matrix(&alg.bracket(&x, &y).unwrap()).unwrap();
                assert!(max_abs(&(comm - b)) < 1e-13);
                let jac = alg
                    .bracket(&x, &alg.bracket(&y, &z).unwrap())
                    .unwrap()
                    .add(&alg.bracket(&y, &alg.bracket(&z, &x).unwrap()).unwrap())
                    .unwrap()
                    .add(&alg.bracket(&z, &alg.bracket(&x, &y).unwrap()).unwrap())
                    .unwrap();
                assert!(jac.norm_sq().sqrt() < 1e-13);
                // direct matrix-evaluated Jacobi
                let c = |a: &CMatrix, b: &CMatrix| a * b - b * a;
                let mj = c(&mx, &c(&my, &mz)) + c(&my, &c(&mz, &mx)) + c(&mz, &c(&mx, &my));
                assert!(max_abs(&mj) < 1e-13);
                // ad-invariance
                let lhs = alg.inner(&alg.bracket(&x, &y).unwrap(), &z).unwrap();
                let rhs = -alg.inner(&y, &alg.bracket(&x, &z).unwrap()).unwrap();
                assert!((lhs - rhs).abs() < 1e-13);
                assert!(alg.inner(&x, &alg.bracket(&x, &y).unwrap()).unwrap().abs() < 1e-13);
                assert!(alg.bracket(&x, &x).unwrap().norm_sq() < 1e-28);
            }
        }
    }

    #[test]
    fn inner_matches_trace_and_zero_case() {
        let alg = Algebra::su2();
        let x = alg.element(vec![0.3, -1.2, 0.5]).unwrap();
        let y = alg.element(vec![2.0, 0.1, -0.7]).unwrap();
        let tr = -(alg.to_matrix(&x).unwrap() * alg.to_matrix(&y).unwrap()).trace().re;
        assert!((alg.inner(&x, &y).unwrap() - tr).abs() < 1e-14);
        assert_eq!(alg.inner(&LieElement::zero(3), &y).unwrap(), 0.0);
        assert!(alg.inner(&x, &LieElement::zero(2)).is_err());
        assert!(alg.bracket(&x, &LieElement::zero(8)).is_err());
    }

    #[test]
    fn quaternion_units_map_to_twice_standard_generators() {
        let t = su2_standard_generators();
        for a in 0..3 {
            let mut x = [0.0; 4];
            x[a + 1] = 1.0;
            let q = quaternion_matrix(x);
            assert!(max_abs(&(q - &t[a] * Complex64::new(2.0, 0.0))) < 1e-15);
        }
        // unit quaternions are unitary with determinant one
        let q = quaternion_matrix([0.5, 0.5, -0.5, 0.5]);
        let id = CMatrix::identity(2, 2);
        assert!(max_abs(&(q.adjoint() * &q - id)) < 1e-15);
        assert!((q.determinant() - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn exp_is_unitary() {
        let alg = Algebra::su(3).unwrap();
        let x = alg.element((0..8).map(|i| 0.3 * i as f64 - 1.0).collect()).unwrap();
        let g = alg.exp(&x).unwrap();
        let id = CMatrix::identity(3, 3);
        assert!(max_abs(&(g.adjoint() * &g - id)) < 1e-12);
    }
}
