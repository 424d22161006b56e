//! Small numerical kernels shared by the integrators.

use nalgebra::SymmetricEigen;

use crate::operator::{CMatrix, CVector, C64, ZERO};

/// A matrix prepared for repeated matrix-vector products.
///
/// Ladder-operator models are mostly banded, so matrices with few nonzeros
/// are stored row-compressed; the public API stays dense.
#[derive(Clone, Debug)]
pub enum CompiledOp {
    Dense(CMatrix),
    Sparse {
        n: usize,
        row_start: Vec<usize>,
        cols: Vec<usize>,
        vals: Vec<C64>,
    },
}

impl CompiledOp {
    pub fn new(m: &CMatrix) -> Self {
        let n = m.nrows();
        let nnz = m.iter().filter(|z| **z != ZERO).count();
        if n >= 8 && nnz * 4 <= n * n {
            let mut row_start = Vec::with_capacity(n + 1);
            let mut cols = Vec::with_capacity(nnz);
            let mut vals = Vec::with_capacity(nnz);
            row_start.push(0);
            for i in 0..n {
                for j in 0..n {
                    let z = m[(i, j)];
                    if z != ZERO {
                        cols.push(j);
                        vals.push(z);
                    }
                }
                row_start.push(cols.len());
            }
            CompiledOp::Sparse {
                n,
                row_start,
                cols,
                vals,
            }
        } else {
            CompiledOp::Dense(m.clone())
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CompiledOp::Dense(m) => m.nrows(),
            CompiledOp::Sparse { n, .. } => *n,
        }
    }

    /// y = A x
    pub fn apply(&self, x: &CVector, y: &mut CVector) {
        match self {
            CompiledOp::Dense(m) => y.gemv(C64::new(1.0, 0.0), m, x, ZERO),
            CompiledOp::Sparse {
                n,
                row_start,
                cols,
                vals,
            } => {
                for i in 0..*n {
                    let mut acc = ZERO;
                    for idx in row_start[i]..row_start[i + 1] {
                        acc += vals[idx] * x[cols[idx]];
                    }
                    y[i] = acc;
                }
            }
        }
    }

    /// y += alpha A x
    pub fn apply_add(&self, alpha: C64, x: &CVector, y: &mut CVector) {
        match self {
            CompiledOp::Dense(m) => y.gemv(alpha, m, x, C64::new(1.0, 0.0)),
            CompiledOp::Sparse {
                n,
                row_start,
                cols,
                vals,
            } => {
                for i in 0..*n {
                    let mut acc = ZERO;
                    for idx in row_start[i]..row_start[i + 1] {
                        acc += vals[idx] * x[cols[idx]];
                    }
                    y[i] += alpha * acc;
                }
            }
        }
    }
}

/// Eigenvalues (ascending) and eigenvectors (columns) of a Hermitian matrix.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Largest |eigenvalue| of a Hermitian matrix.
pub fn hermitian_norm(m: &CMatrix) -> f64 {
    let (vals, _) = hermitian_eigen(m);
    vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// Matrix square root of a positive semidefinite Hermitian matrix, with
/// negative eigenvalues clipped to zero.
pub fn psd_sqrt(m: &CMatrix) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(m);
    let n = m.nrows();
    let mut out = CMatrix::zeros(n, n);
    for (k, &v) in vals.iter().enumerate() {
        if v <= 0.0 {
            continue;
        }
        let col = vecs.column(k);
        out += (&col * col.adjoint()) * C64::new(v.sqrt(), 0.0);
    }
    out
}

/// exp(-i t H) for Hermitian H via eigendecomposition.
pub fn unitary_exp(h: &CMatrix, t: f64) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(h);
    let n = h.nrows();
    let phases = CVector::from_iterator(n, vals.iter().map(|&v| C64::from_polar(1.0, -t * v)));
    let scaled = CMatrix::from_fn(n, n, |r, c| vecs[(r, c)] * phases[c]);
    scaled * vecs.adjoint()
}

/// Fills `v` with a normalized random state from the given RNG.
pub fn random_state<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> CVector {
    use rand_distr::{Distribution, StandardNormal};
    let mut v = CVector::from_fn(n, |_, _| {
        C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
    });
    let nrm = v.norm();
    v.unscale_mut(nrm);
    v
}

/// Random Hermitian matrix with Gaussian entries.
pub fn random_hermitian<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    use rand_distr::{Distribution, StandardNormal};
    let g = CMatrix::from_fn(n, n, |_, _| {
        C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
    });
    (&g + g.adjoint()) * C64::new(0.5, 0.0)
}

/// Brent's method for a root of `f` in [a, b] given f(a) and f(b) of
/// opposite sign (or one of them zero).
pub fn brent_root<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
    xtol: f64,
    max_iter: usize,
) -> f64 {
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    let (mut c, mut fc) = (b, fb);
    let (mut d, mut e) = (b - a, b - a);
    for _ in 0..max_iter {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return b;
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    b
}
