//! Integrators for the master equation, the deterministic limit-cycle
//! equation and the diffusive stochastic Schrödinger equation.
//!
//! All state-dependent expectation values are taken with respect to the
//! normalized state, so the deterministic (Stratonovich) drift conserves the
//! norm exactly for any input norm.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, hermitian_norm, CompiledOp};
use crate::models::LindbladModel;
use crate::operator::{CMatrix, CVector, Ket, C64, I, ONE, ZERO};

/// Density operator rho, Hermitian with unit trace.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator(CMatrix);

impl DensityOperator {
    /// Wraps a matrix after checking Hermiticity (1e-10), trace (1e-8) and
    /// positivity (min eigenvalue >= -1e-8).
    pub fn new(m: CMatrix) -> Result<Self> {
        let rho = DensityOperator(m);
        rho.validate()?;
        Ok(rho)
    }

    /// Wraps without validation; used for intermediate sums.
    pub fn new_unchecked(m: CMatrix) -> Self {
        DensityOperator(m)
    }

    pub fn pure(psi: &Ket) -> Self {
        let v = psi.amplitudes();
        let n2 = v.norm_squared();
        DensityOperator((v * v.adjoint()) / C64::new(n2, 0.0))
    }

    pub fn maximally_mixed(n: usize) -> Self {
        DensityOperator(CMatrix::identity(n, n) / C64::new(n as f64, 0.0))
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.0;
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::InvalidState("matrix is not square".into()));
        }
        let herm = (m - m.adjoint()).camax();
        if herm > 1e-10 {
            return Err(Error::InvalidState(format!("not Hermitian ({herm:e})")));
        }
        let tr = m.trace();
        if (tr - ONE).norm() > 1e-8 {
            return Err(Error::InvalidState(format!("trace {tr} != 1")));
        }
        let (vals, _) = hermitian_eigen(m);
        if vals[0] < -1e-8 {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {:e}",
                vals[0]
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    /// Tr[O rho]
    pub fn expect(&self, op: &CMatrix) -> C64 {
        (op * &self.0).trace()
    }

    /// (1/2) ||rho - sigma||_1
    pub fn trace_distance(&self, other: &DensityOperator) -> f64 {
        let (vals, _) = hermitian_eigen(&(&self.0 - &other.0));
        0.5 * vals.iter().map(|v| v.abs()).sum::<f64>()
    }
}

fn check_model_dim(model: &LindbladModel, n: usize) -> Result<()> {
    if model.n != n {
        Err(Error::DimensionMismatch {
            expected: model.n,
            found: n,
        })
    } else {
        Ok(())
    }
}

/// -i[H, rho] + sum_k D[L_k] rho
pub fn lindblad_rhs(rho: &DensityOperator, model: &LindbladModel) -> Result<CMatrix> {
    check_model_dim(model, rho.dim())?;
    Ok(MasterKernel::new(model).rhs(rho.matrix()))
}

struct MasterKernel {
    k: CMatrix,
    jumps: Vec<CMatrix>,
}

impl MasterKernel {
    fn new(model: &LindbladModel) -> Self {
        let n = model.n;
        let mut k = model.hamiltonian.matrix() * (-I);
        for l in &model.jumps {
            k -= l.matrix().adjoint() * l.matrix() * C64::new(0.5, 0.0);
        }
        let _ = n;
        MasterKernel {
            k,
            jumps: model.jumps.iter().map(|l| l.matrix().clone()).collect(),
        }
    }

    fn rhs(&self, rho: &CMatrix) -> CMatrix {
        let kr = &self.k * rho;
        let mut out = &kr + kr.adjoint();
        for l in &self.jumps {
            out += l * rho * l.adjoint();
        }
        out
    }
}

/// Largest of ||H|| and sum_k ||L_k^dag L_k|| (spectral norms).
pub fn stiffness(model: &LindbladModel) -> f64 {
    let h = hermitian_norm(model.hamiltonian.matrix());
    let d: f64 = model
        .jumps
        .iter()
        .map(|l| hermitian_norm(&(l.matrix().adjoint() * l.matrix())))
        .sum();
    h.max(d)
}

/// Propagates rho0 to t_end with classical RK4 on the operator-form
/// generator. The step must resolve the fastest rate
/// (dt * stiffness < 0.1); trace drift above 1e-6 is reported as an
/// instability.
pub fn evolve_master(
    rho0: &DensityOperator,
    model: &LindbladModel,
    t_end: f64,
    dt: f64,
) -> Result<DensityOperator> {
    check_model_dim(model, rho0.dim())?;
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need dt > 0 and t_end >= 0 (dt={dt}, t_end={t_end})"
        )));
    }
    if t_end == 0.0 {
        return Ok(rho0.clone());
    }
    let s = stiffness(model);
    if dt * s >= 0.1 {
        return Err(Error::Stability(format!(
            "dt={dt} does not resolve the fastest rate {s}"
        )));
    }
    let kern = MasterKernel::new(model);
    let steps = (t_end / dt).ceil() as usize;
    let h = C64::new(t_end / steps as f64, 0.0);
    let half = h * 0.5;
    let mut rho = rho0.matrix().clone();
    for step in 0..steps {
        let k1 = kern.rhs(&rho);
        let k2 = kern.rhs(&(&rho + &k1 * half));
        let k3 = kern.rhs(&(&rho + &k2 * half));
        let k4 = kern.rhs(&(&rho + &k3 * h));
        rho += (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * (h / 6.0);
        if step % 64 == 0 || step + 1 == steps {
            let tr = rho.trace();
            if !tr.re.is_finite() || (tr - ONE).norm() > 1e-6 {
                return Err(Error::Stability(format!(
                    "trace drift {:e} at step {step}",
                    (tr - ONE).norm()
                )));
            }
        }
    }
    rho = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
    Ok(DensityOperator(rho))
}

/// Column-major vectorized generator: vec(A rho B) = (B^T kron A) vec(rho).
pub fn liouvillian(model: &LindbladModel) -> CMatrix {
    let n = model.n;
    let kern = MasterKernel::new(model);
    let id = CMatrix::identity(n, n);
    let mut s = id.kronecker(&kern.k) + kern.k.map(|z| z.conj()).kronecker(&id);
    for l in &kern.jumps {
        s += l.map(|z| z.conj()).kronecker(l);
    }
    s
}

/// Steady state of the master equation. Small systems (N <= 10) solve the
/// null space of the vectorized generator directly; larger ones are
/// relaxed by RK4 until the generator residual is below 1e-10.
pub fn steady_state(model: &LindbladModel) -> Result<DensityOperator> {
    let n = model.n;
    if n <= 10 {
        let mut s = liouvillian(model);
        let dim = n * n;
        // replace the first row with the trace functional
        for c in 0..dim {
            s[(0, c)] = ZERO;
        }
        for i in 0..n {
            s[(0, i + i * n)] = ONE;
        }
        let mut b = CVector::zeros(dim);
        b[0] = ONE;
        let x = s
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Stability("steady state is not unique".into()))?;
        let rho = DMatrix::from_column_slice(n, n, x.as_slice());
        let rho = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
        let tr = rho.trace();
        return DensityOperator::new(rho / tr);
    }
    let dt = 0.05 / stiffness(model).max(1e-12);
    let kern = MasterKernel::new(model);
    let mut rho = DensityOperator::maximally_mixed(n);
    let chunk = (1.0 / model.min_rate().min(1.0)).max(1.0);
    for _ in 0..10_000 {
        rho = evolve_master(&rho, model, chunk, dt)?;
        let res = kern.rhs(rho.matrix()).camax();
        if res < 1e-10 {
            return Ok(rho);
        }
    }
    Err(Error::Stability("steady state relaxation did not converge".into()))
}

/// Operators of a model compiled for fast repeated drift evaluation.
#[derive(Clone, Debug)]
pub struct SseKernel {
    n: usize,
    /// -iH - (1/2) sum (L^dag L + L^2): constant part of the Stratonovich drift
    a0_strat: CompiledOp,
    /// -iH - (1/2) sum L^dag L: constant part of the Ito drift
    a0_ito: CompiledOp,
    jumps: Vec<CompiledOp>,
    jumps_dag: Vec<CompiledOp>,
    hamiltonian: CompiledOp,
}

/// Per-channel moments of the current state (normalized expectations).
#[derive(Clone, Copy, Debug, Default)]
pub struct ChannelMoments {
    pub mean_l: C64,
    pub mean_ldl: f64,
    pub mean_l2: C64,
}

impl ChannelMoments {
    /// <X> = <L + L^dag>
    pub fn quadrature(&self) -> f64 {
        2.0 * self.mean_l.re
    }
}

/// Scratch buffers for one integration thread.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub(crate) lpsi: Vec<CVector>,
    pub(crate) tmp: CVector,
    pub(crate) moments: Vec<ChannelMoments>,
    pub(crate) k: [CVector; 4],
    pub(crate) stage: CVector,
    pub(crate) noise: CVector,
}

impl Workspace {
    pub fn new(n: usize, m: usize) -> Self {
        let z = CVector::zeros(n);
        Workspace {
            lpsi: vec![z.clone(); m],
            tmp: z.clone(),
            moments: vec![ChannelMoments::default(); m],
            k: [z.clone(), z.clone(), z.clone(), z.clone()],
            stage: z.clone(),
            noise: z,
        }
    }

    pub fn moments(&self) -> &[ChannelMoments] {
        &self.moments
    }
}

impl SseKernel {
    pub fn new(model: &LindbladModel) -> Self {
        let h = model.hamiltonian.matrix();
        let mut a0_ito = h * (-I);
        let mut a0_strat = a0_ito.clone();
        for l in &model.jumps {
            let lm = l.matrix();
            let ldl = lm.adjoint() * lm;
            let l2 = lm * lm;
            a0_ito -= &ldl * C64::new(0.5, 0.0);
            a0_strat -= (ldl + l2) * C64::new(0.5, 0.0);
        }
        SseKernel {
            n: model.n,
            a0_strat: CompiledOp::new(&a0_strat),
            a0_ito: CompiledOp::new(&a0_ito),
            jumps: model.jumps.iter().map(|l| CompiledOp::new(l.matrix())).collect(),
            jumps_dag: model
                .jumps
                .iter()
                .map(|l| CompiledOp::new(&l.matrix().adjoint()))
                .collect(),
            hamiltonian: CompiledOp::new(h),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn num_channels(&self) -> usize {
        self.jumps.len()
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::new(self.n, self.jumps.len())
    }

    /// Computes L_k psi and the channel moments. `with_l2` additionally
    /// evaluates <L^2>.
    pub fn compute_moments(&self, psi: &CVector, ws: &mut Workspace, with_l2: bool) {
        let inv_n2 = 1.0 / psi.norm_squared();
        for k in 0..self.jumps.len() {
            self.jumps[k].apply(psi, &mut ws.lpsi[k]);
            let lpsi = &ws.lpsi[k];
            let mean_l = psi.dotc(lpsi) * inv_n2;
            let mean_ldl = lpsi.norm_squared() * inv_n2;
            let mean_l2 = if with_l2 {
                self.jumps_dag[k].apply(psi, &mut ws.tmp);
                ws.tmp.dotc(lpsi) * inv_n2
            } else {
                ZERO
            };
            ws.moments[k] = ChannelMoments {
                mean_l,
                mean_ldl,
                mean_l2,
            };
        }
    }

    /// Deterministic (noise-removed Stratonovich) drift:
    /// [-iH_eff + sum (1/2)<L^dag L> + <X>(L - <X>/2) + (1/4)(-2L^2 + <L^2> + <L^dag 2>)] psi
    pub fn strat_drift(&self, psi: &CVector, out: &mut CVector, ws: &mut Workspace) {
        self.compute_moments(psi, ws, true);
        self.strat_drift_from_moments(psi, out, ws);
    }

    fn strat_drift_from_moments(&self, psi: &CVector, out: &mut CVector, ws: &Workspace) {
        self.a0_strat.apply(psi, out);
        let mut c = 0.0;
        for (lpsi, m) in ws.lpsi.iter().zip(&ws.moments) {
            let x = m.quadrature();
            out.axpy(C64::new(x, 0.0), lpsi, ONE);
            c += 0.5 * m.mean_ldl - 0.5 * x * x + 0.5 * m.mean_l2.re;
        }
        out.axpy(C64::new(c, 0.0), psi, ONE);
    }

    /// Ito drift: [-iH_eff + sum (<X>/2)(L - <X>/4)] psi
    pub fn ito_drift(&self, psi: &CVector, out: &mut CVector, ws: &mut Workspace) {
        self.compute_moments(psi, ws, false);
        self.ito_drift_from_moments(psi, out, ws);
    }

    fn ito_drift_from_moments(&self, psi: &CVector, out: &mut CVector, ws: &Workspace) {
        self.a0_ito.apply(psi, out);
        let mut c = 0.0;
        for (lpsi, m) in ws.lpsi.iter().zip(&ws.moments) {
            let x = m.quadrature();
            out.axpy(C64::new(0.5 * x, 0.0), lpsi, ONE);
            c -= 0.125 * x * x;
        }
        out.axpy(C64::new(c, 0.0), psi, ONE);
    }

    /// Ito-to-Stratonovich correction bracket for channel k:
    /// [L^2 - <X>L + (3/4)<X>^2 - (1/2)<XL> - (1/2)<L^dag X>] psi, added to `out`
    /// with weight `alpha`. Requires moments with `<L^2>`.
    fn add_p_bracket(&self, alpha: f64, psi: &CVector, out: &mut CVector, ws: &mut Workspace) {
        for k in 0..self.jumps.len() {
            let m = ws.moments[k];
            let x = m.quadrature();
            self.jumps[k].apply(&ws.lpsi[k], &mut ws.tmp);
            out.axpy(C64::new(alpha, 0.0), &ws.tmp, ONE);
            out.axpy(C64::new(-alpha * x, 0.0), &ws.lpsi[k], ONE);
            // <XL> + <L^dag X> = <L^2> + <L^dag 2> + 2<L^dag L>
            let c = 0.75 * x * x - m.mean_l2.re - m.mean_ldl;
            out.axpy(C64::new(alpha * c, 0.0), psi, ONE);
        }
    }

    /// Drift of the general-p SSE (stochastic terms evaluated at t + p dt):
    /// Ito drift minus p times the correction bracket.
    pub fn general_p_drift(&self, psi: &CVector, p: f64, out: &mut CVector, ws: &mut Workspace) {
        self.compute_moments(psi, ws, true);
        self.ito_drift_from_moments(psi, out, ws);
        self.add_p_bracket(-p, psi, out, ws);
    }

    /// Sum_k (L_k - <X_k>/2) psi dW_k into `out` (overwrites).
    fn noise_from_moments(&self, psi: &CVector, dw: &[f64], out: &mut CVector, ws: &Workspace) {
        out.fill(ZERO);
        for ((lpsi, m), &w) in ws.lpsi.iter().zip(&ws.moments).zip(dw) {
            out.axpy(C64::new(w, 0.0), lpsi, ONE);
            out.axpy(C64::new(-0.5 * m.quadrature() * w, 0.0), psi, ONE);
        }
    }

    /// Noise vector of a single channel: (L_k - <X_k>/2) psi.
    pub fn noise_vector(&self, k: usize, psi: &CVector, ws: &mut Workspace) -> CVector {
        self.compute_moments(psi, ws, false);
        let x = ws.moments[k].quadrature();
        &ws.lpsi[k] - psi * C64::new(0.5 * x, 0.0)
    }

    /// One classical RK4 step of the deterministic dynamics.
    pub fn rk4_step(&self, psi: &mut CVector, dt: f64, ws: &mut Workspace) {
        let h = C64::new(dt, 0.0);
        let half = C64::new(0.5 * dt, 0.0);
        let mut k = std::mem::replace(&mut ws.k, Default::default());
        let mut stage = std::mem::take(&mut ws.stage);

        self.strat_drift(psi, &mut k[0], ws);
        stage.copy_from(psi);
        stage.axpy(half, &k[0], ONE);
        self.strat_drift(&stage, &mut k[1], ws);
        stage.copy_from(psi);
        stage.axpy(half, &k[1], ONE);
        self.strat_drift(&stage, &mut k[2], ws);
        stage.copy_from(psi);
        stage.axpy(h, &k[2], ONE);
        self.strat_drift(&stage, &mut k[3], ws);

        let sixth = h / 6.0;
        psi.axpy(sixth, &k[0], ONE);
        psi.axpy(sixth * 2.0, &k[1], ONE);
        psi.axpy(sixth * 2.0, &k[2], ONE);
        psi.axpy(sixth, &k[3], ONE);

        ws.k = k;
        ws.stage = stage;
    }

    /// Integrates the deterministic dynamics for `steps` RK4 steps of size dt.
    pub fn integrate(&self, psi: &mut CVector, dt: f64, steps: usize, ws: &mut Workspace) {
        for _ in 0..steps {
            self.rk4_step(psi, dt, ws);
        }
    }

    /// Euler–Maruyama step of the Ito SSE.
    pub fn ito_step(&self, psi: &mut CVector, dw: &[f64], dt: f64, renormalize: bool, ws: &mut Workspace) {
        let mut drift = std::mem::take(&mut ws.k[0]);
        let mut noise = std::mem::take(&mut ws.noise);
        self.ito_drift(psi, &mut drift, ws);
        self.noise_from_moments(psi, dw, &mut noise, ws);
        psi.axpy(C64::new(dt, 0.0), &drift, ONE);
        *psi += &noise;
        if renormalize {
            let nrm = psi.norm();
            psi.unscale_mut(nrm);
        }
        ws.k[0] = drift;
        ws.noise = noise;
    }

    /// Stochastic Heun step of the Stratonovich SSE (same dW for predictor
    /// and corrector).
    pub fn heun_step(&self, psi: &mut CVector, dw: &[f64], dt: f64, ws: &mut Workspace) {
        let mut f0 = std::mem::take(&mut ws.k[0]);
        let mut f1 = std::mem::take(&mut ws.k[1]);
        let mut g0 = std::mem::take(&mut ws.k[2]);
        let mut g1 = std::mem::take(&mut ws.k[3]);
        let mut pred = std::mem::take(&mut ws.stage);
        let h = C64::new(dt, 0.0);

        self.strat_drift(psi, &mut f0, ws);
        self.noise_from_moments(psi, dw, &mut g0, ws);
        pred.copy_from(psi);
        pred.axpy(h, &f0, ONE);
        pred += &g0;

        self.strat_drift(&pred, &mut f1, ws);
        self.noise_from_moments(&pred, dw, &mut g1, ws);
        let half_h = h * 0.5;
        psi.axpy(half_h, &f0, ONE);
        psi.axpy(half_h, &f1, ONE);
        psi.axpy(C64::new(0.5, 0.0), &g0, ONE);
        psi.axpy(C64::new(0.5, 0.0), &g1, ONE);

        ws.k = [f0, f1, g0, g1];
        ws.stage = pred;
    }

    /// Step of the general-p SSE: the drift and noise are evaluated at the
    /// intermediate point psi + p * (Ito Euler increment). p = 0 is exactly
    /// the Euler–Maruyama step.
    pub fn general_p_step(
        &self,
        psi: &mut CVector,
        dw: &[f64],
        dt: f64,
        p: f64,
        renormalize: bool,
        ws: &mut Workspace,
    ) {
        if p == 0.0 {
            self.ito_step(psi, dw, dt, renormalize, ws);
            return;
        }
        let mut drift = std::mem::take(&mut ws.k[0]);
        let mut noise = std::mem::take(&mut ws.noise);
        let mut mid = std::mem::take(&mut ws.stage);
        let h = C64::new(dt, 0.0);

        self.ito_drift(psi, &mut drift, ws);
        self.noise_from_moments(psi, dw, &mut noise, ws);
        mid.copy_from(psi);
        mid.axpy(h * p, &drift, ONE);
        mid.axpy(C64::new(p, 0.0), &noise, ONE);

        self.general_p_drift(&mid, p, &mut drift, ws);
        self.noise_from_moments(&mid, dw, &mut noise, ws);
        psi.axpy(h, &drift, ONE);
        *psi += &noise;
        if renormalize {
            let nrm = psi.norm();
            psi.unscale_mut(nrm);
        }
        ws.k[0] = drift;
        ws.noise = noise;
        ws.stage = mid;
    }

    /// <psi|H|psi> / <psi|psi>
    pub fn energy(&self, psi: &CVector, ws: &mut Workspace) -> f64 {
        self.hamiltonian.apply(psi, &mut ws.tmp);
        (psi.dotc(&ws.tmp) / psi.norm_squared()).re
    }
}

/// Deterministic limit-cycle drift d|psi>/dt for a single state.
pub fn deterministic_drift(psi: &Ket, model: &LindbladModel) -> Result<CVector> {
    check_model_dim(model, psi.dim())?;
    let kern = SseKernel::new(model);
    let mut ws = kern.workspace();
    let mut out = CVector::zeros(model.n);
    kern.strat_drift(psi.amplitudes(), &mut out, &mut ws);
    Ok(out)
}

fn check_noise(model: &LindbladModel, dw: &[f64]) -> Result<()> {
    if dw.len() != model.num_channels() {
        Err(Error::DimensionMismatch {
            expected: model.num_channels(),
            found: dw.len(),
        })
    } else {
        Ok(())
    }
}

/// One Euler–Maruyama step of the Ito SSE.
pub fn step_sse_ito(
    psi: &Ket,
    model: &LindbladModel,
    dw: &[f64],
    dt: f64,
    renormalize: bool,
) -> Result<Ket> {
    check_model_dim(model, psi.dim())?;
    check_noise(model, dw)?;
    let kern = SseKernel::new(model);
    let mut ws = kern.workspace();
    let mut v = psi.amplitudes().clone();
    kern.ito_step(&mut v, dw, dt, renormalize, &mut ws);
    Ket::new(v)
}

/// One stochastic Heun step of the Stratonovich SSE.
pub fn step_sse_stratonovich(psi: &Ket, model: &LindbladModel, dw: &[f64], dt: f64) -> Result<Ket> {
    check_model_dim(model, psi.dim())?;
    check_noise(model, dw)?;
    let kern = SseKernel::new(model);
    let mut ws = kern.workspace();
    let mut v = psi.amplitudes().clone();
    kern.heun_step(&mut v, dw, dt, &mut ws);
    Ket::new(v)
}

/// One step of the SSE with stochastic terms evaluated at t + p dt.
pub fn step_sse_general_p(
    psi: &Ket,
    model: &LindbladModel,
    dw: &[f64],
    dt: f64,
    p: f64,
    renormalize: bool,
) -> Result<Ket> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("p must lie in [0, 1], got {p}")));
    }
    check_model_dim(model, psi.dim())?;
    check_noise(model, dw)?;
    let kern = SseKernel::new(model);
    let mut ws = kern.workspace();
    let mut v = psi.amplitudes().clone();
    kern.general_p_step(&mut v, dw, dt, p, renormalize, &mut ws);
    Ket::new(v)
}

/// Norm change rate d<psi|psi>/dt of the deterministic part of the general-p
/// SSE, evaluated through the closed form in terms of channel moments.
pub fn general_p_norm_rate(psi: &Ket, model: &LindbladModel, p: f64) -> Result<f64> {
    check_model_dim(model, psi.dim())?;
    let kern = SseKernel::new(model);
    let mut ws = kern.workspace();
    kern.compute_moments(psi.amplitudes(), &mut ws, false);
    let n2 = psi.amplitudes().norm_squared();
    Ok(ws
        .moments
        .iter()
        .map(|m| {
            let x = m.quadrature();
            0.25 * x * x - m.mean_ldl - p * (0.5 * x * x - 2.0 * m.mean_ldl)
        })
        .sum::<f64>()
        * n2)
}

/// Counter-based RNG stream for trajectory `index` of an ensemble seeded
/// with `seed`. Streams are independent of evaluation order.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Fills `dw` with independent N(0, dt) increments.
pub fn draw_increments<R: Rng + ?Sized>(rng: &mut R, dt: f64, dw: &mut [f64]) {
    let s = dt.sqrt();
    for w in dw.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *w = z * s;
    }
}

/// Per-channel Wiener increments for a whole trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRealization {
    pub dt: f64,
    /// increments[step][channel]
    pub increments: Vec<Vec<f64>>,
}

impl NoiseRealization {
    pub fn generate(seed: u64, index: u64, steps: usize, channels: usize, dt: f64) -> Self {
        let mut rng = trajectory_rng(seed, index);
        let increments = (0..steps)
            .map(|_| {
                let mut dw = vec![0.0; channels];
                draw_increments(&mut rng, dt, &mut dw);
                dw
            })
            .collect();
        NoiseRealization { dt, increments }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ItoEuler,
    StratonovichHeun,
    GeneralP(f64),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    #[serde(default)]
    pub trajectory_index: u64,
    pub renormalize_each_step: bool,
    pub scheme: Scheme,
    /// Record every n-th step (and the initial state).
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default)]
    pub record_states: bool,
}

fn one() -> usize {
    1
}

impl TrajectoryConfig {
    pub fn new(dt: f64, t_end: f64, seed: u64, scheme: Scheme) -> Self {
        TrajectoryConfig {
            dt,
            t_end,
            seed,
            trajectory_index: 0,
            renormalize_each_step: !matches!(scheme, Scheme::StratonovichHeun),
            scheme,
            record_every: 1,
            record_states: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.t_end > 0.0) || self.record_every == 0 {
            return Err(Error::InvalidParameter(format!(
                "trajectory config needs dt > 0, t_end > 0, record_every >= 1 (dt={}, t_end={})",
                self.dt, self.t_end
            )));
        }
        if let Scheme::GeneralP(p) = self.scheme {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("p must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }
}

/// Recorded trajectory. `currents[i][k]` is the homodyne current
/// J_k = <X_k> + dW_k/dt over the step ending at `times[i]` (the entry at
/// t = 0 is the bare expectation value).
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Ket>,
    pub currents: Vec<Vec<f64>>,
}

/// Advances the state by one step of the configured scheme.
pub fn advance(
    kern: &SseKernel,
    scheme: Scheme,
    renormalize: bool,
    psi: &mut CVector,
    dw: &[f64],
    dt: f64,
    ws: &mut Workspace,
) {
    match scheme {
        Scheme::ItoEuler => kern.ito_step(psi, dw, dt, renormalize, ws),
        Scheme::StratonovichHeun => {
            kern.heun_step(psi, dw, dt, ws);
            if renormalize {
                let nrm = psi.norm();
                psi.unscale_mut(nrm);
            }
        }
        Scheme::GeneralP(p) => kern.general_p_step(psi, dw, dt, p, renormalize, ws),
    }
}

/// Simulates one SSE trajectory with homodyne currents.
pub fn simulate_trajectory(
    psi0: &Ket,
    model: &LindbladModel,
    cfg: &TrajectoryConfig,
) -> Result<Trajectory> {
    check_model_dim(model, psi0.dim())?;
    cfg.validate()?;
    let kern = SseKernel::new(model);
    let mut ws = kern.workspace();
    let mut rng = trajectory_rng(cfg.seed, cfg.trajectory_index);
    let m = model.num_channels();
    let mut dw = vec![0.0; m];
    let mut psi = psi0.amplitudes().clone();
    let steps = cfg.steps();

    let mut out = Trajectory::default();
    kern.compute_moments(&psi, &mut ws, false);
    out.times.push(0.0);
    out.currents
        .push(ws.moments.iter().map(|mm| mm.quadrature()).collect());
    if cfg.record_states {
        out.states.push(Ket::new(psi.clone())?);
    }

    for step in 1..=steps {
        draw_increments(&mut rng, cfg.dt, &mut dw);
        kern.compute_moments(&psi, &mut ws, false);
        let x: Vec<f64> = ws.moments.iter().map(|mm| mm.quadrature()).collect();
        advance(&kern, cfg.scheme, cfg.renormalize_each_step, &mut psi, &dw, cfg.dt, &mut ws);
        if psi.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Divergence { step });
        }
        if step % cfg.record_every == 0 {
            out.times.push(step as f64 * cfg.dt);
            out.currents
                .push(x.iter().zip(&dw).map(|(xk, w)| xk + w / cfg.dt).collect());
            if cfg.record_states {
                out.states.push(Ket::new(psi.clone())?);
            }
        }
    }
    Ok(out)
}

/// Mean of |psi><psi| over `n_traj` independent trajectories at `t_end`.
/// Trajectory i uses RNG stream i, so the result does not depend on the
/// number of worker threads.
pub fn ensemble_mean_density(
    psi0: &Ket,
    model: &LindbladModel,
    scheme: Scheme,
    renormalize: bool,
    dt: f64,
    t_end: f64,
    n_traj: usize,
    seed: u64,
) -> Result<DensityOperator> {
    check_model_dim(model, psi0.dim())?;
    let kern = SseKernel::new(model);
    let steps = (t_end / dt).round().max(1.0) as usize;
    let m = model.num_channels();
    let finals: Vec<Result<CMatrix>> = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut ws = kern.workspace();
            let mut rng = trajectory_rng(seed, i as u64);
            let mut dw = vec![0.0; m];
            let mut psi = psi0.amplitudes().clone();
            for step in 1..=steps {
                draw_increments(&mut rng, dt, &mut dw);
                advance(&kern, scheme, renormalize, &mut psi, &dw, dt, &mut ws);
                if step % 256 == 0 && !psi[0].re.is_finite() {
                    return Err(Error::Divergence { step });
                }
            }
            let n2 = psi.norm_squared();
            Ok((&psi * psi.adjoint()) / C64::new(n2, 0.0))
        })
        .collect();
    let n = model.n;
    let mut acc = CMatrix::zeros(n, n);
    for f in finals {
        acc += f?;
    }
    Ok(DensityOperator::new_unchecked(acc / C64::new(n_traj as f64, 0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_hermitian, random_state};
    use crate::models::{build_bitflip_qubit, build_qubit, pauli, LindbladModel, ModelConfig};
    use crate::operator::{make_annihilation, Operator};

    fn damping_model(gamma: f64) -> LindbladModel {
        let a = make_annihilation(2).unwrap();
        LindbladModel {
            name: "damping".into(),
            n: 2,
            hamiltonian: Operator::zeros(2).unwrap(),
            jumps: vec![a.scale(gamma.sqrt())],
            rates: vec![gamma],
            config: ModelConfig::new("damping", &[], None),
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn amplitude_damping_rhs() {
        let g = 0.7;
        let model = damping_model(g);
        let rho = DensityOperator::pure(&Ket::basis(2, 1).unwrap());
        let d = lindblad_rhs(&rho, &model).unwrap();
        assert!((d[(0, 0)] - C64::new(g, 0.0)).norm() < 1e-15);
        assert!((d[(1, 1)] - C64::new(-g, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn rhs_is_traceless_for_random_states() {
        let mut r = rng(5);
        for name in ["vdp_cluster", "qubit", "spin1_thermal", "spin32", "bitflip", "lambda"] {
            let model = LindbladModel::from_config(&ModelConfig::preset(name).unwrap()).unwrap();
            let g = random_hermitian(model.n, &mut r);
            let rho = DensityOperator::new_unchecked(&g * g.adjoint());
            let d = lindblad_rhs(&rho, &model).unwrap();
            assert!(d.trace().norm() < 1e-10, "{name}");
        }
    }

    #[test]
    fn evolve_master_decay_matches_exponential() {
        let g = 0.5;
        let model = damping_model(g);
        let rho0 = DensityOperator::pure(&Ket::basis(2, 1).unwrap());
        assert_eq!(evolve_master(&rho0, &model, 0.0, 0.01).unwrap(), rho0);
        let rho = evolve_master(&rho0, &model, 3.0, 0.01).unwrap();
        assert!((rho.matrix()[(1, 1)].re - (-g * 3.0_f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn evolve_master_rejects_coarse_step() {
        let model = damping_model(1.0);
        let rho0 = DensityOperator::maximally_mixed(2);
        assert!(matches!(
            evolve_master(&rho0, &model, 1.0, 0.5),
            Err(Error::Stability(_))
        ));
    }

    #[test]
    fn qubit_steady_state_is_generator_null_vector() {
        let model = build_qubit(3.0, 0.1, 0.05).unwrap();
        let rho = steady_state(&model).unwrap();
        let d = lindblad_rhs(&rho, &model).unwrap();
        assert!(d.camax() < 1e-12);
        // analytic: populations in ratio gamma_plus : gamma_minus
        let p_up = rho.matrix()[(0, 0)].re;
        assert!((p_up - 0.1 / 0.15).abs() < 1e-10);
    }

    #[test]
    fn drift_without_jumps_is_schrodinger() {
        let mut model = build_qubit(1.3, 0.0, 0.0).unwrap();
        model.jumps.clear();
        model.rates.clear();
        let psi = Ket::new(random_state(2, &mut rng(9))).unwrap();
        let d = deterministic_drift(&psi, &model).unwrap();
        let want = model.hamiltonian.matrix() * psi.amplitudes() * (-I);
        assert!((d - want).camax() < 1e-14);
    }

    #[test]
    fn drift_preserves_norm() {
        let mut r = rng(11);
        for name in ["vdp_cluster", "qubit", "spin1_thermal", "spin32", "bitflip", "lambda"] {
            let model = LindbladModel::from_config(&ModelConfig::preset(name).unwrap()).unwrap();
            for _ in 0..10 {
                let psi = Ket::new(random_state(model.n, &mut r)).unwrap();
                let d = deterministic_drift(&psi, &model).unwrap();
                assert!(psi.amplitudes().dotc(&d).re.abs() < 1e-10, "{name}");
            }
        }
    }

    #[test]
    fn bitflip_drift_closed_form() {
        // For L = sqrt(g) sigma_x the Stratonovich drift reduces to
        // [-i w sz + 2 g <sx> sx - 2 g <sx>^2] psi.
        let (w, g) = (1.1, 0.3);
        let model = build_bitflip_qubit(w, g).unwrap();
        let (sx, _, sz) = pauli();
        let mut r = rng(2);
        for _ in 0..5 {
            let psi = Ket::new(random_state(2, &mut r)).unwrap();
            let v = psi.amplitudes();
            let ex = v.dotc(&(&sx * v)).re;
            let want = (&sz * v) * C64::new(0.0, -w) + (&sx * v) * C64::new(2.0 * g * ex, 0.0)
                - v * C64::new(2.0 * g * ex * ex, 0.0);
            let got = deterministic_drift(&psi, &model).unwrap();
            assert!((got - want).camax() < 1e-13);
        }
    }

    #[test]
    fn bitflip_noise_term() {
        let model = build_bitflip_qubit(1.0, 0.4).unwrap();
        let (sx, _, _) = pauli();
        let psi = Ket::new(random_state(2, &mut rng(4))).unwrap();
        let v = psi.amplitudes();
        let ex = v.dotc(&(&sx * v)).re;
        let want = ((&sx * v) - v * C64::new(ex, 0.0)) * C64::new(0.4_f64.sqrt(), 0.0);
        let kern = SseKernel::new(&model);
        let mut ws = kern.workspace();
        assert!((kern.noise_vector(0, v, &mut ws) - want).camax() < 1e-14);
    }

    #[test]
    fn zero_noise_steps() {
        let mut model = build_qubit(0.8, 0.0, 0.0).unwrap();
        model.jumps.clear();
        model.rates.clear();
        let psi = Ket::new(random_state(2, &mut rng(1))).unwrap();
        let dt = 1e-3;
        let ito = step_sse_ito(&psi, &model, &[], dt, false).unwrap();
        let want = psi.amplitudes() + model.hamiltonian.matrix() * psi.amplitudes() * C64::new(0.0, -dt);
        assert!((ito.amplitudes() - want).camax() < 1e-15);

        let model = build_qubit(0.8, 0.1, 0.2).unwrap();
        let heun = step_sse_stratonovich(&psi, &model, &[0.0, 0.0], dt).unwrap();
        let kern = SseKernel::new(&model);
        let mut ws = kern.workspace();
        let mut f0 = CVector::zeros(2);
        kern.strat_drift(psi.amplitudes(), &mut f0, &mut ws);
        let pred = psi.amplitudes() + &f0 * C64::new(dt, 0.0);
        let mut f1 = CVector::zeros(2);
        kern.strat_drift(&pred, &mut f1, &mut ws);
        let want = psi.amplitudes() + (f0 + f1) * C64::new(0.5 * dt, 0.0);
        assert!((heun.amplitudes() - want).camax() < 1e-15);
    }

    #[test]
    fn general_p_zero_is_bitwise_ito() {
        let model = LindbladModel::from_config(&ModelConfig::preset("vdp_cluster").unwrap()).unwrap();
        let psi = Ket::new(random_state(model.n, &mut rng(8))).unwrap();
        let dw = [0.013, -0.021];
        let a = step_sse_ito(&psi, &model, &dw, 1e-3, true).unwrap();
        let b = step_sse_general_p(&psi, &model, &dw, 1e-3, 0.0, true).unwrap();
        assert_eq!(a, b);
        assert!(step_sse_general_p(&psi, &model, &dw, 1e-3, 1.5, true).is_err());
    }

    #[test]
    fn general_p_half_drift_is_stratonovich() {
        let model = LindbladModel::from_config(&ModelConfig::preset("spin32").unwrap()).unwrap();
        let kern = SseKernel::new(&model);
        let mut ws = kern.workspace();
        let psi = random_state(model.n, &mut rng(21));
        let mut a = CVector::zeros(model.n);
        let mut b = CVector::zeros(model.n);
        kern.general_p_drift(&psi, 0.5, &mut a, &mut ws);
        kern.strat_drift(&psi, &mut b, &mut ws);
        assert!((a - b).camax() < 1e-12);
    }

    #[test]
    fn ito_mean_norm_change_is_second_order() {
        // With two-point increments dW = +/- sqrt(dt), the averaged squared
        // norm after one unnormalized Euler step is exactly 1 + |a|^2 dt^2.
        let model = build_bitflip_qubit(1.0, 0.5).unwrap();
        let kern = SseKernel::new(&model);
        let mut ws = kern.workspace();
        let psi = random_state(2, &mut rng(31));
        let mut a = CVector::zeros(2);
        kern.ito_drift(&psi, &mut a, &mut ws);
        for dt in [1e-2, 1e-3] {
            let mut mean = 0.0;
            for s in [1.0, -1.0] {
                let mut v = psi.clone();
                kern.ito_step(&mut v, &[s * f64::sqrt(dt)], dt, false, &mut ws);
                mean += 0.5 * v.norm_squared();
            }
            let want = 1.0 + a.norm_squared() * dt * dt;
            assert!((mean - want).abs() < 1e-13, "dt={dt}: {mean} vs {want}");
        }
    }

    #[test]
    fn trajectory_is_reproducible() {
        let model = LindbladModel::from_config(&ModelConfig::preset("qubit").unwrap()).unwrap();
        let psi0 = Ket::basis(2, 0).unwrap();
        let cfg = TrajectoryConfig::new(1e-2, 2.0, 42, Scheme::StratonovichHeun);
        let a = simulate_trajectory(&psi0, &model, &cfg).unwrap();
        let b = simulate_trajectory(&psi0, &model, &cfg).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.currents, b.currents);
        assert_eq!(a.times.len(), 201);
    }

    #[test]
    fn unitary_trajectory_conserves_energy() {
        let mut model = build_qubit(2.0, 0.0, 0.0).unwrap();
        model.jumps.clear();
        model.rates.clear();
        let psi0 = Ket::new(random_state(2, &mut rng(3))).unwrap();
        let mut cfg = TrajectoryConfig::new(1e-3, 5.0, 1, Scheme::StratonovichHeun);
        cfg.renormalize_each_step = true;
        let tr = simulate_trajectory(&psi0, &model, &cfg).unwrap();
        let kern = SseKernel::new(&model);
        let mut ws = kern.workspace();
        let e0 = kern.energy(tr.states[0].amplitudes(), &mut ws);
        for s in &tr.states {
            assert!((kern.energy(s.amplitudes(), &mut ws) - e0).abs() < 1e-8);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let model = build_qubit(1.0, 0.1, 0.1).unwrap();
        let mut psi0 = CVector::zeros(2);
        psi0[0] = C64::new(f64::NAN, 0.0);
        let cfg = TrajectoryConfig::new(1e-2, 1.0, 0, Scheme::ItoEuler);
        let r = simulate_trajectory(&Ket::new(psi0).unwrap(), &model, &cfg);
        assert!(matches!(r, Err(Error::Divergence { step: 1 })));
    }

    #[test]
    fn noise_realization_is_reproducible() {
        let a = NoiseRealization::generate(7, 3, 100, 2, 1e-2);
        let b = NoiseRealization::generate(7, 3, 100, 2, 1e-2);
        let c = NoiseRealization::generate(7, 4, 100, 2, 1e-2);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
