//! Dense complex operators, state vectors and the SU(N) generator basis.
//!
//! Everything downstream (models, integrators, phase response) works on the
//! types defined here. Matrices are dense `nalgebra` matrices; the design
//! envelope is N up to a few hundred.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Tolerance applied when a Hermitian tag is requested for a matrix.
pub const HERMITIAN_TOL: f64 = 1e-12;

fn check_dim(n: usize) -> Result<()> {
    if n < 2 {
        Err(Error::InvalidDimension(n))
    } else {
        Ok(())
    }
}

/// A pure state |psi> in an N-dimensional Hilbert space.
#[derive(Clone, Debug, PartialEq)]
pub struct Ket(CVector);

impl Ket {
    /// Wraps raw amplitudes without normalizing.
    pub fn new(amplitudes: CVector) -> Result<Self> {
        check_dim(amplitudes.len())?;
        Ok(Ket(amplitudes))
    }

    /// Wraps and normalizes raw amplitudes.
    pub fn normalized(amplitudes: CVector) -> Result<Self> {
        let mut k = Ket::new(amplitudes)?;
        k.normalize()?;
        Ok(k)
    }

    pub fn from_slice(amplitudes: &[C64]) -> Result<Self> {
        Ket::normalized(CVector::from_column_slice(amplitudes))
    }

    /// Computational basis state |index>.
    pub fn basis(n: usize, index: usize) -> Result<Self> {
        check_dim(n)?;
        if index >= n {
            return Err(Error::InvalidParameter(format!(
                "basis index {index} out of range for dimension {n}"
            )));
        }
        let mut v = CVector::zeros(n);
        v[index] = ONE;
        Ok(Ket(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.0
    }

    pub fn amplitudes_mut(&mut self) -> &mut CVector {
        &mut self.0
    }

    pub fn into_inner(self) -> CVector {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.0.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroVector);
        }
        self.0.unscale_mut(n);
        Ok(())
    }

    /// <self|other>
    pub fn inner(&self, other: &Ket) -> C64 {
        self.0.dotc(&other.0)
    }

    /// |<self|other>|, insensitive to global phase.
    pub fn overlap(&self, other: &Ket) -> f64 {
        self.inner(other).norm()
    }

    /// |self><self|
    pub fn projector(&self) -> CMatrix {
        &self.0 * self.0.adjoint()
    }
}

/// Dense N x N operator with an advisory Hermitian tag.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    mat: CMatrix,
    hermitian: bool,
}

impl Operator {
    pub fn new(mat: CMatrix) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimensionMismatch {
                expected: mat.nrows(),
                found: mat.ncols(),
            });
        }
        check_dim(mat.nrows())?;
        Ok(Operator {
            mat,
            hermitian: false,
        })
    }

    /// Builds an operator tagged Hermitian; fails if the matrix is not.
    pub fn hermitian(mat: CMatrix) -> Result<Self> {
        let mut op = Operator::new(mat)?;
        let err = op.hermiticity_error();
        if err >= HERMITIAN_TOL {
            return Err(Error::NonHermitian(err));
        }
        op.hermitian = true;
        Ok(op)
    }

    pub fn identity(n: usize) -> Result<Self> {
        check_dim(n)?;
        Ok(Operator {
            mat: CMatrix::identity(n, n),
            hermitian: true,
        })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        check_dim(n)?;
        Ok(Operator {
            mat: CMatrix::zeros(n, n),
            hermitian: true,
        })
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Result<Self> {
        let v = CVector::from_iterator(diag.len(), diag.iter().map(|&d| C64::new(d, 0.0)));
        check_dim(v.len())?;
        Ok(Operator {
            mat: CMatrix::from_diagonal(&v),
            hermitian: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    /// Re-checks Hermiticity numerically and updates the tag.
    pub fn retag(mut self) -> Self {
        self.hermitian = self.hermiticity_error() < HERMITIAN_TOL;
        self
    }

    /// max_ij |A - A^dag|
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in i..n {
                let d = (self.mat[(i, j)] - self.mat[(j, i)].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    pub fn dagger(&self) -> Operator {
        Operator {
            mat: self.mat.adjoint(),
            hermitian: self.hermitian,
        }
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    pub fn scale(&self, s: f64) -> Operator {
        Operator {
            mat: &self.mat * C64::new(s, 0.0),
            hermitian: self.hermitian,
        }
    }

    pub fn scale_complex(&self, s: C64) -> Operator {
        Operator {
            mat: &self.mat * s,
            hermitian: self.hermitian && s.im == 0.0,
        }
    }

    /// [self, other]
    pub fn commutator(&self, other: &Operator) -> Operator {
        Operator {
            mat: &self.mat * &other.mat - &other.mat * &self.mat,
            hermitian: false,
        }
    }

    pub fn apply(&self, psi: &Ket) -> Result<CVector> {
        same_dim(self.dim(), psi.dim())?;
        Ok(&self.mat * psi.amplitudes())
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.mat.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator {
            mat: &self.mat + &rhs.mat,
            hermitian: self.hermitian && rhs.hermitian,
        }
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        Operator {
            mat: &self.mat - &rhs.mat,
            hermitian: self.hermitian && rhs.hermitian,
        }
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator {
            mat: &self.mat * &rhs.mat,
            hermitian: false,
        }
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        Operator {
            mat: -&self.mat,
            hermitian: self.hermitian,
        }
    }
}

fn same_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(Error::DimensionMismatch { expected, found })
    } else {
        Ok(())
    }
}

/// Truncated bosonic annihilation operator: a[m, m+1] = sqrt(m+1).
pub fn make_annihilation(n_levels: usize) -> Result<Operator> {
    check_dim(n_levels)?;
    let mut mat = CMatrix::zeros(n_levels, n_levels);
    for m in 0..n_levels - 1 {
        mat[(m, m + 1)] = C64::new(((m + 1) as f64).sqrt(), 0.0);
    }
    Operator::new(mat)
}

/// Spin-j matrices in the Sz eigenbasis ordered m = j, j-1, ..., -j.
///
/// The ladder operators follow the `(Sx +/- i Sy)/sqrt(2)` convention, so
/// `sp` is the textbook raising operator divided by sqrt(2).
#[derive(Clone, Debug)]
pub struct SpinOperators {
    pub sx: Operator,
    pub sy: Operator,
    pub sz: Operator,
    pub sp: Operator,
    pub sm: Operator,
}

pub fn make_spin(two_j: usize) -> Result<SpinOperators> {
    if two_j < 1 {
        return Err(Error::InvalidDimension(two_j + 1));
    }
    let n = two_j + 1;
    let j = two_j as f64 / 2.0;
    let m_of = |i: usize| j - i as f64;

    let mut raise = CMatrix::zeros(n, n);
    for i in 1..n {
        // <m+1| J+ |m> with m = m_of(i), m+1 = m_of(i-1)
        let m = m_of(i);
        raise[(i - 1, i)] = C64::new((j * (j + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
    }
    let lower = raise.adjoint();
    let sx = (&raise + &lower) * C64::new(0.5, 0.0);
    let sy = (&raise - &lower) * C64::new(0.0, -0.5);
    let sz = CMatrix::from_diagonal(&CVector::from_iterator(
        n,
        (0..n).map(|i| C64::new(m_of(i), 0.0)),
    ));
    let inv_sqrt2 = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let sp = (&sx + &sy * I) * inv_sqrt2;
    let sm = (&sx - &sy * I) * inv_sqrt2;

    Ok(SpinOperators {
        sx: Operator::hermitian(sx)?,
        sy: Operator::hermitian(sy)?,
        sz: Operator::hermitian(sz)?,
        sp: Operator::new(sp)?,
        sm: Operator::new(sm)?,
    })
}

/// Which family of the generalized Gell-Mann construction a generator
/// belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneratorKind {
    Symmetric,
    Antisymmetric,
    Diagonal,
}

/// Trace-orthonormal basis of su(N): N^2 - 1 traceless Hermitian matrices.
///
/// Ordering is fixed: all symmetric off-diagonal generators in lexicographic
/// (j, k) order, then the antisymmetric ones in the same pair order, then
/// the N - 1 diagonal ones. Index labels are 0-based.
#[derive(Clone, Debug)]
pub struct GeneratorBasis {
    n: usize,
    generators: Vec<Operator>,
    labels: Vec<(GeneratorKind, usize, usize)>,
}

impl GeneratorBasis {
    pub fn new(n: usize) -> Result<Self> {
        check_dim(n)?;
        let count = n * n - 1;
        let mut generators = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;

        for j in 0..n {
            for k in j + 1..n {
                let mut m = CMatrix::zeros(n, n);
                m[(j, k)] = C64::new(inv_sqrt2, 0.0);
                m[(k, j)] = C64::new(inv_sqrt2, 0.0);
                generators.push(Operator {
                    mat: m,
                    hermitian: true,
                });
                labels.push((GeneratorKind::Symmetric, j, k));
            }
        }
        for j in 0..n {
            for k in j + 1..n {
                let mut m = CMatrix::zeros(n, n);
                m[(j, k)] = C64::new(0.0, -inv_sqrt2);
                m[(k, j)] = C64::new(0.0, inv_sqrt2);
                generators.push(Operator {
                    mat: m,
                    hermitian: true,
                });
                labels.push((GeneratorKind::Antisymmetric, k, j));
            }
        }
        for j in 1..n {
            let jf = j as f64;
            let norm = (jf * (jf + 1.0)).sqrt();
            let mut m = CMatrix::zeros(n, n);
            for l in 0..j {
                m[(l, l)] = C64::new(1.0 / norm, 0.0);
            }
            m[(j, j)] = C64::new(-jf / norm, 0.0);
            generators.push(Operator {
                mat: m,
                hermitian: true,
            });
            labels.push((GeneratorKind::Diagonal, j - 1, j - 1));
        }

        Ok(GeneratorBasis {
            n,
            generators,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    pub fn generators(&self) -> &[Operator] {
        &self.generators
    }

    pub fn get(&self, l: usize) -> Option<&Operator> {
        self.generators.get(l)
    }

    pub fn label(&self, l: usize) -> Option<(GeneratorKind, usize, usize)> {
        self.labels.get(l).copied()
    }

    /// Generator index for a label; inverse of [`GeneratorBasis::label`].
    pub fn index_of(&self, kind: GeneratorKind, j: usize, k: usize) -> Option<usize> {
        self.labels.iter().position(|&lab| lab == (kind, j, k))
    }

    /// Sum_l coeffs[l] E_l
    pub fn reconstruct(&self, coeffs: &[f64]) -> Result<Operator> {
        same_dim(self.len(), coeffs.len())?;
        let mut m = CMatrix::zeros(self.n, self.n);
        for (g, &c) in self.generators.iter().zip(coeffs) {
            if c != 0.0 {
                m += &g.mat * C64::new(c, 0.0);
            }
        }
        Ok(Operator {
            mat: m,
            hermitian: true,
        })
    }
}

pub fn make_generator_basis(n: usize) -> Result<GeneratorBasis> {
    GeneratorBasis::new(n)
}

/// <psi|O|psi>
pub fn expectation(psi: &Ket, op: &Operator) -> Result<C64> {
    same_dim(op.dim(), psi.dim())?;
    let v = psi.amplitudes();
    let ov = &op.mat * v;
    let mut e = v.dotc(&ov);
    if op.hermitian {
        e.im = 0.0;
    }
    Ok(e)
}

/// Index of the largest-magnitude amplitude; ties resolve to the lowest index.
pub fn gauge_pivot(v: &CVector) -> usize {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        let m = z.norm_sqr();
        if m > best_mag {
            best = i;
            best_mag = m;
        }
    }
    best
}

/// Removes the global phase so the largest-magnitude amplitude is real and
/// nonnegative.
pub fn gauge_fix(psi: &Ket) -> Result<Ket> {
    let v = psi.amplitudes();
    let p = gauge_pivot(v);
    let pivot = v[p];
    let mag = pivot.norm();
    if mag == 0.0 || !mag.is_finite() {
        return Err(Error::ZeroVector);
    }
    let phase = pivot.conj() / mag;
    let mut out = v * phase;
    out[p] = C64::new(out[p].norm(), 0.0);
    Ok(Ket(out))
}

/// Tr[A^dag B]
pub fn hs_inner(a: &Operator, b: &Operator) -> Result<C64> {
    same_dim(a.dim(), b.dim())?;
    Ok(a.mat.iter().zip(b.mat.iter()).map(|(x, y)| x.conj() * y).sum())
}

#[derive(Serialize, Deserialize)]
struct OperatorJson {
    n: usize,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl Serialize for Operator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.dim();
        let rows = |f: fn(&C64) -> f64| -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| (0..n).map(|j| f(&self.mat[(i, j)])).collect())
                .collect()
        };
        OperatorJson {
            n,
            re: rows(|z| z.re),
            im: rows(|z| z.im),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Operator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = OperatorJson::deserialize(d)?;
        if j.re.len() != j.n || j.im.len() != j.n {
            return Err(D::Error::custom("row count does not match n"));
        }
        let mut mat = CMatrix::zeros(j.n, j.n);
        for i in 0..j.n {
            if j.re[i].len() != j.n || j.im[i].len() != j.n {
                return Err(D::Error::custom("column count does not match n"));
            }
            for k in 0..j.n {
                mat[(i, k)] = C64::new(j.re[i][k], j.im[i][k]);
            }
        }
        Operator::new(mat)
            .map(Operator::retag)
            .map_err(D::Error::custom)
    }
}

/// Serialized form of a ket: separate real and imaginary arrays.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct KetJson {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl From<&Ket> for KetJson {
    fn from(k: &Ket) -> Self {
        KetJson {
            re: k.0.iter().map(|z| z.re).collect(),
            im: k.0.iter().map(|z| z.im).collect(),
        }
    }
}

impl TryFrom<&KetJson> for Ket {
    type Error = Error;
    fn try_from(j: &KetJson) -> Result<Ket> {
        same_dim(j.re.len(), j.im.len())?;
        Ket::new(CVector::from_iterator(
            j.re.len(),
            j.re.iter().zip(&j.im).map(|(&r, &i)| C64::new(r, i)),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn annihilation_two_levels() {
        let a = make_annihilation(2).unwrap();
        assert_eq!(a.matrix()[(0, 1)], c(1.0, 0.0));
        assert_eq!(a.matrix()[(0, 0)], ZERO);
        assert_eq!(a.matrix()[(1, 0)], ZERO);
        assert_eq!(a.matrix()[(1, 1)], ZERO);
    }

    #[test]
    fn number_operator_is_diagonal() {
        let a = make_annihilation(4).unwrap();
        let n = &a.dagger() * &a;
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { i as f64 } else { 0.0 };
                assert!((n.matrix()[(i, j)] - c(want, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn truncated_commutator_breaks_in_top_level() {
        let a = make_annihilation(4).unwrap();
        let comm = a.commutator(&a.dagger());
        let want = [1.0, 1.0, 1.0, -3.0];
        for i in 0..4 {
            for j in 0..4 {
                let w = if i == j { want[i] } else { 0.0 };
                assert!((comm.matrix()[(i, j)] - c(w, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn annihilation_rejects_small_dimension() {
        assert!(matches!(
            make_annihilation(1),
            Err(Error::InvalidDimension(1))
        ));
    }

    #[test]
    fn spin_half_sz() {
        let s = make_spin(1).unwrap();
        assert_eq!(s.sz.matrix()[(0, 0)], c(0.5, 0.0));
        assert_eq!(s.sz.matrix()[(1, 1)], c(-0.5, 0.0));
    }

    #[test]
    fn spin_algebra_closes() {
        for two_j in 1..=5 {
            let s = make_spin(two_j).unwrap();
            let lhs = s.sx.commutator(&s.sy);
            let rhs = s.sz.scale_complex(I);
            let diff = (lhs.matrix() - rhs.matrix()).camax();
            assert!(diff < 1e-12, "two_j={two_j} diff={diff}");
        }
    }

    #[test]
    fn spin_three_halves_sz() {
        let s = make_spin(3).unwrap();
        let want = [1.5, 0.5, -0.5, -1.5];
        for (i, w) in want.iter().enumerate() {
            assert_eq!(s.sz.matrix()[(i, i)], c(*w, 0.0));
        }
    }

    #[test]
    fn ladder_convention_scaled_by_inverse_sqrt2() {
        let s = make_spin(1).unwrap();
        // textbook S+ for spin-1/2 is |up><down| with unit coefficient
        assert!((s.sp.matrix()[(0, 1)] - c(std::f64::consts::FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
        assert!((s.sm.matrix()[(1, 0)] - c(std::f64::consts::FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn su2_basis_is_pauli_over_sqrt2() {
        let b = make_generator_basis(2).unwrap();
        assert_eq!(b.len(), 3);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let sx = CMatrix::from_row_slice(2, 2, &[ZERO, c(r, 0.0), c(r, 0.0), ZERO]);
        let sy = CMatrix::from_row_slice(2, 2, &[ZERO, c(0.0, -r), c(0.0, r), ZERO]);
        let sz = CMatrix::from_row_slice(2, 2, &[c(r, 0.0), ZERO, ZERO, c(-r, 0.0)]);
        for (g, want) in b.generators().iter().zip([sx, sy, sz]) {
            assert!((g.matrix() - want).camax() < 1e-15);
        }
    }

    #[test]
    fn su3_last_generator_is_lambda8() {
        let b = make_generator_basis(3).unwrap();
        assert_eq!(b.len(), 8);
        let e8 = b.get(7).unwrap().matrix();
        // lambda_8 / sqrt(2) = diag(1, 1, -2) / sqrt(6)
        let s6 = 6.0_f64.sqrt();
        assert!((e8[(0, 0)].re - 1.0 / s6).abs() < 1e-15);
        assert!((e8[(1, 1)].re - 1.0 / s6).abs() < 1e-15);
        assert!((e8[(2, 2)].re + 2.0 / s6).abs() < 1e-15);
    }

    #[test]
    fn basis_orthonormal_hermitian_traceless() {
        for n in 2..=8 {
            let b = make_generator_basis(n).unwrap();
            assert_eq!(b.len(), n * n - 1);
            for (m, em) in b.generators().iter().enumerate() {
                assert!(em.hermiticity_error() < 1e-12);
                assert!(em.trace().norm() < 1e-12);
                for (k, ek) in b.generators().iter().enumerate() {
                    let ip = hs_inner(em, ek).unwrap();
                    let want = if m == k { 1.0 } else { 0.0 };
                    assert!((ip - c(want, 0.0)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn index_map_round_trips() {
        let b = make_generator_basis(4).unwrap();
        for l in 0..b.len() {
            let (kind, j, k) = b.label(l).unwrap();
            assert_eq!(b.index_of(kind, j, k), Some(l));
        }
    }

    #[test]
    fn expectation_examples() {
        let a = make_annihilation(2).unwrap();
        let num = (&a.dagger() * &a).retag();
        let vac = Ket::basis(2, 0).unwrap();
        assert_eq!(expectation(&vac, &num).unwrap(), ZERO);

        let x = (&a + &a.dagger()).retag();
        let plus = Ket::from_slice(&[ONE, ONE]).unwrap();
        let e = expectation(&plus, &x).unwrap();
        assert!(close(e.re, 1.0, 1e-14) && e.im == 0.0);
    }

    #[test]
    fn expectation_dimension_mismatch() {
        let a = make_annihilation(3).unwrap();
        let k = Ket::basis(2, 0).unwrap();
        assert!(matches!(
            expectation(&k, &a),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gauge_fix_examples() {
        let phase = C64::from_polar(1.0, 0.7);
        let k = Ket::new(CVector::from_vec(vec![phase, ZERO, ZERO])).unwrap();
        let g = gauge_fix(&k).unwrap();
        assert!((g.amplitudes()[0] - ONE).norm() < 1e-15);
        let gg = gauge_fix(&g).unwrap();
        assert_eq!(g, gg);
    }

    #[test]
    fn gauge_fix_zero_vector() {
        let k = Ket::new(CVector::zeros(3)).unwrap();
        assert!(matches!(gauge_fix(&k), Err(Error::ZeroVector)));
    }

    #[test]
    fn hs_inner_identity_against_generators() {
        let b = make_generator_basis(3).unwrap();
        let id = Operator::identity(3).unwrap();
        for g in b.generators() {
            assert!(hs_inner(&id, g).unwrap().norm() < 1e-15);
        }
    }

    #[test]
    fn operator_json_shape() {
        let a = make_annihilation(2).unwrap();
        let v = serde_json::to_value(&a).unwrap();
        assert_eq!(v["n"], 2);
        assert_eq!(v["re"][0][1], 1.0);
        let back: Operator = serde_json::from_value(v).unwrap();
        assert_eq!(back.matrix(), a.matrix());
    }

    #[test]
    fn hermitian_constructor_rejects() {
        let a = make_annihilation(3).unwrap();
        assert!(matches!(
            Operator::hermitian(a.into_matrix()),
            Err(Error::NonHermitian(_))
        ));
    }
}
