//! Traceless Hermitian representations of the SSE noise and drift terms and
//! their coordinates in the su(N) generator basis.

use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::dynamics::SseKernel;
use crate::error::{Error, Result};
use crate::models::LindbladModel;
use crate::operator::{CMatrix, CVector, GeneratorBasis, GeneratorKind, Ket, Operator, C64, I};

/// Largest imaginary part tolerated on a trace coefficient.
pub const IMAGINARY_TOL: f64 = 1e-8;
/// Largest |Tr| accepted as traceless.
pub const TRACE_TOL: f64 = 1e-8;

/// Real coordinates of a traceless Hermitian operator, in generator order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    pub g: Vec<f64>,
}

impl CoefficientVector {
    pub fn zeros(len: usize) -> Self {
        CoefficientVector { g: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.g
    }

    pub fn norm(&self) -> f64 {
        self.g.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.g.iter().zip(other).map(|(a, b)| a * b).sum()
    }
}

/// H = i u psi^dag - i psi u^dag with u the part of `u` orthogonal to psi,
/// so that -i H psi = u_perp and Tr H = 0.
fn hermitian_from_tangent(psi: &CVector, u: &CVector) -> CMatrix {
    let u_perp = u - psi * psi.dotc(u);
    let a = &u_perp * psi.adjoint() * I;
    &a + a.adjoint()
}

fn check_ket(psi: &Ket, n: usize) -> Result<()> {
    if psi.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: psi.dim(),
        });
    }
    Ok(())
}

/// H_k = i (L - <L>) |psi><psi| + h.c.
pub fn noise_hermitian(l: &Operator, psi: &Ket) -> Result<Operator> {
    check_ket(psi, l.dim())?;
    let v = psi.amplitudes();
    let lpsi = l.matrix() * v;
    Operator::hermitian(hermitian_from_tangent(v, &lpsi))
}

/// Hermitian generator of the deterministic drift: -i H_A psi equals the
/// component of the noise-free Stratonovich drift orthogonal to psi.
pub fn drift_hermitian(psi: &Ket, model: &LindbladModel) -> Result<Operator> {
    check_ket(psi, model.n)?;
    let kern = SseKernel::new(model);
    let mut ws = kern.workspace();
    let v = psi.amplitudes();
    let mut f = CVector::zeros(model.n);
    kern.strat_drift(v, &mut f, &mut ws);
    Operator::hermitian(hermitian_from_tangent(v, &f))
}

/// Tr[A E_l] for every generator, read off the matrix entries directly.
pub fn generator_traces(a: &CMatrix, basis: &GeneratorBasis) -> Result<Vec<C64>> {
    let n = basis.dim();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.nrows(),
        });
    }
    let s = C64::new(FRAC_1_SQRT_2, 0.0);
    let out = (0..basis.len())
        .map(|l| match basis.label(l).expect("index within basis") {
            (GeneratorKind::Symmetric, j, k) => (a[(j, k)] + a[(k, j)]) * s,
            // label (k, j) with j < k: E[j,k] = -i/sqrt2, E[k,j] = i/sqrt2
            (GeneratorKind::Antisymmetric, k, j) => (a[(j, k)] - a[(k, j)]) * I * s,
            (GeneratorKind::Diagonal, d, _) => {
                let j = d + 1;
                let jf = j as f64;
                let head: C64 = (0..j).map(|i| a[(i, i)]).sum();
                (head - a[(j, j)] * jf) / (jf * (jf + 1.0)).sqrt()
            }
        })
        .collect();
    Ok(out)
}

fn real_coefficients(traces: Vec<C64>) -> Result<CoefficientVector> {
    let worst = traces.iter().fold(0.0_f64, |m, z| m.max(z.im.abs()));
    if worst > IMAGINARY_TOL {
        return Err(Error::ImaginaryResidue(worst));
    }
    Ok(CoefficientVector {
        g: traces.into_iter().map(|z| z.re).collect(),
    })
}

/// g_l = Tr[H E_l] for a traceless Hermitian H.
pub fn decompose_traceless(h: &Operator, basis: &GeneratorBasis) -> Result<CoefficientVector> {
    let tr = h.trace();
    if tr.norm() > TRACE_TOL {
        return Err(Error::NotTraceless(tr.norm()));
    }
    real_coefficients(generator_traces(h.matrix(), basis)?)
}

/// f_l = Tr[(Hp - Tr[Hp]/N) E_l]; the trace part only shifts the global phase.
pub fn perturbation_coeffs(hp: &Operator, basis: &GeneratorBasis) -> Result<CoefficientVector> {
    let err = hp.hermiticity_error();
    if err >= crate::operator::HERMITIAN_TOL {
        return Err(Error::NonHermitian(err));
    }
    let n = hp.dim();
    let shift = hp.trace() / n as f64;
    let traceless = hp.matrix() - CMatrix::identity(n, n) * shift;
    real_coefficients(generator_traces(&traceless, basis)?)
}

/// sum_l g_l (-i E_l) psi
pub fn generator_action(basis: &GeneratorBasis, g: &[f64], psi: &CVector) -> Result<CVector> {
    let h = basis.reconstruct(g)?;
    Ok(h.matrix() * psi * (-I))
}

/// Coefficients g_{k,l} of every noise channel at psi, one row per channel.
pub fn noise_coefficients(
    model: &LindbladModel,
    psi: &Ket,
    basis: &GeneratorBasis,
) -> Result<Vec<CoefficientVector>> {
    model
        .jumps
        .iter()
        .map(|l| decompose_traceless(&noise_hermitian(l, psi)?, basis))
        .collect()
}
