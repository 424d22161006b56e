//! Limit cycles of the deterministic pure-state dynamics, their constant
//! frequency phase, and the isochron phase function.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{SseKernel, Workspace};
use crate::error::{Error, Result};
use crate::linalg::{brent_root, hermitian_norm};
use crate::models::{LindbladModel, ModelConfig};
use crate::operator::{gauge_fix, CVector, Ket, KetJson, C64, I, ONE};

/// Overlap threshold 1 - f(T) below which a return counts as periodic.
pub const PERIOD_THRESHOLD: f64 = 1e-6;
/// Minimum isochron endpoint fidelity to the cycle.
pub const ISOCHRON_FIDELITY: f64 = 1.0 - 1e-4;
const FIXED_POINT_TOL: f64 = 1e-10;
const FIXED_POINT_STEPS: usize = 1000;
const RETURN_DISTANCE_TOL: f64 = 1e-10;
const ISOCHRON_TARGET: f64 = 1e-7;
const MAX_ISOCHRON_PERIODS: usize = 2000;

/// Numerical settings for [`find_limit_cycle`]. `None` fields take
/// model-derived defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CycleOptions {
    pub n_grid: usize,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub t_relax: Option<f64>,
    /// Longest period searched for.
    #[serde(default)]
    pub max_period: Option<f64>,
    #[serde(default)]
    pub isochron_periods: Option<usize>,
}

impl Default for CycleOptions {
    fn default() -> Self {
        CycleOptions {
            n_grid: 512,
            dt: None,
            t_relax: None,
            max_period: None,
            isochron_periods: None,
        }
    }
}

impl CycleOptions {
    pub fn with_grid(n_grid: usize) -> Self {
        CycleOptions {
            n_grid,
            ..Default::default()
        }
    }
}

/// ||H|| + sum_k ||L_k^dag L_k||, a bound on the drift's rate scale.
pub fn spectral_scale(model: &LindbladModel) -> f64 {
    hermitian_norm(model.hamiltonian.matrix())
        + model
            .jumps
            .iter()
            .map(|l| hermitian_norm(&(l.matrix().adjoint() * l.matrix())))
            .sum::<f64>()
}

pub fn default_dt(model: &LindbladModel) -> f64 {
    0.5 / spectral_scale(model).max(1e-12)
}

/// Twenty relaxation times of the slowest nonzero channel rate.
pub fn default_t_relax(model: &LindbladModel) -> f64 {
    let r = model.min_rate();
    if r.is_finite() {
        20.0 / r
    } else {
        200.0
    }
}

/// Generic starting state with amplitudes (1 + 0.3i)/(1 + i)-like weights,
/// off every symmetric subspace of the catalog models.
pub fn default_initial_state(n: usize) -> Result<Ket> {
    Ket::normalized(CVector::from_fn(n, |i, _| C64::new(1.0 / (1.0 + i as f64), 0.3)))
}

/// Result of matching a state to the nearest point of the cycle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseMatch {
    pub theta: f64,
    /// |<psi0(theta)|psi>|
    pub fidelity: f64,
    /// ||psi - e^{i a} psi0(theta)|| minimized over a
    pub distance: f64,
}

/// A periodic solution of the deterministic dynamics sampled at
/// theta_i = 2 pi i / n_grid. Sample i+1 is obtained from sample i by
/// exactly `substeps` RK4 steps of size `step`.
#[derive(Clone, Debug)]
pub struct LimitCycle {
    model: LindbladModel,
    kernel: SseKernel,
    period: f64,
    omega: f64,
    step: f64,
    substeps: usize,
    samples: Vec<Ket>,
    floquet_multiplier: f64,
    isochron_periods: usize,
}

fn wrap(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

fn normalized(mut v: CVector) -> CVector {
    let n = v.norm();
    v.unscale_mut(n);
    v
}

fn ortho_drift(psi: &CVector, f: &CVector) -> f64 {
    let c = psi.dotc(f) / psi.norm_squared();
    (f - psi * c).norm()
}

/// d/dtau (1/2)|<a|phi>|^2 = Re(<phi|a><a|F(phi)>)
fn overlap_slope(a: &CVector, phi: &CVector, f: &CVector) -> f64 {
    (a.dotc(phi).conj() * a.dotc(f)).re
}

struct Relaxer<'a> {
    kern: &'a SseKernel,
    ws: Workspace,
    prev: CVector,
    quiet: usize,
    steps: usize,
}

impl<'a> Relaxer<'a> {
    fn new(kern: &'a SseKernel) -> Self {
        Relaxer {
            kern,
            ws: kern.workspace(),
            prev: CVector::zeros(kern.dim()),
            quiet: 0,
            steps: 0,
        }
    }

    /// One RK4 step, tracking how long the drift orthogonal to the state has
    /// stayed below the fixed-point tolerance.
    fn step(&mut self, psi: &mut CVector, dt: f64) -> Result<()> {
        self.prev.copy_from(psi);
        self.kern.rk4_step(psi, dt, &mut self.ws);
        self.steps += 1;
        if psi.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Divergence { step: self.steps });
        }
        if ortho_drift(&self.prev, &self.ws.k[0]) < FIXED_POINT_TOL {
            self.quiet += 1;
            if self.quiet >= FIXED_POINT_STEPS {
                return Err(Error::NoCycle);
            }
        } else {
            self.quiet = 0;
        }
        if self.steps % 1024 == 0 {
            let n = psi.norm();
            psi.unscale_mut(n);
        }
        Ok(())
    }
}

/// Whole steps of `max_step` followed by one shorter step, so that advancing
/// by a multiple of the sampling step reproduces the sampling grid.
fn rk4_advance(kern: &SseKernel, psi: &mut CVector, time: f64, max_step: f64, ws: &mut Workspace) {
    if time <= 0.0 {
        return;
    }
    let mut whole = (time / max_step).floor();
    let mut rest = time - whole * max_step;
    if rest > max_step * (1.0 - 1e-12) {
        whole += 1.0;
        rest = 0.0;
    }
    for _ in 0..whole as usize {
        kern.rk4_step(psi, max_step, ws);
    }
    if rest > 1e-12 * max_step {
        kern.rk4_step(psi, rest, ws);
    }
}

fn sweep(
    kern: &SseKernel,
    start: &CVector,
    n_grid: usize,
    substeps: usize,
    step: f64,
    ws: &mut Workspace,
) -> (Vec<CVector>, CVector) {
    let mut states = Vec::with_capacity(n_grid);
    let mut v = start.clone();
    for _ in 0..n_grid {
        states.push(v.clone());
        for _ in 0..substeps {
            kern.rk4_step(&mut v, step, ws);
        }
    }
    (states, v)
}

struct PeriodEstimate {
    anchor: CVector,
    period: f64,
}

fn detect_period(
    relax: &mut Relaxer,
    start: &CVector,
    dt: f64,
    window: f64,
) -> Result<PeriodEstimate> {
    let kern = relax.kern;
    let mut ws = kern.workspace();
    let mut drift = CVector::zeros(kern.dim());
    let anchor = normalized(start.clone());
    let mut ring = [start.clone(), start.clone(), start.clone()];
    let mut f = [1.0, 1.0, 1.0];
    let mut min_f: f64 = 1.0;
    let steps = (window / dt).ceil() as usize;
    for j in 1..=steps {
        ring.rotate_left(1);
        f.rotate_left(1);
        ring[2] = ring[1].clone();
        relax.step(&mut ring[2], dt)?;
        f[2] = anchor.dotc(&ring[2]).norm() / ring[2].norm();
        min_f = min_f.min(f[2]);
        let moved = min_f < 1.0 - PERIOD_THRESHOLD;
        if !(j >= 2 && moved && f[1] > f[0] && f[1] >= f[2]) {
            continue;
        }
        // refine the overlap maximum inside [t_{j-2}, t_j]
        let base = ring[0].clone();
        let t0 = (j - 2) as f64 * dt;
        let mut slope = |tau: f64, ws: &mut Workspace| {
            let mut phi = base.clone();
            rk4_advance(kern, &mut phi, tau, dt, ws);
            kern.strat_drift(&phi, &mut drift, ws);
            (overlap_slope(&anchor, &phi, &drift), phi)
        };
        let (ga, _) = slope(0.0, &mut ws);
        let (gb, _) = slope(2.0 * dt, &mut ws);
        let tau = if ga > 0.0 && gb < 0.0 {
            brent_root(|t| slope(t, &mut ws).0, 0.0, 2.0 * dt, ga, gb, 1e-15 * window.max(1.0), 200)
        } else {
            dt
        };
        let (_, phi) = slope(tau, &mut ws);
        let defect = 1.0 - anchor.dotc(&phi).norm() / phi.norm();
        if defect < PERIOD_THRESHOLD {
            return Ok(PeriodEstimate {
                anchor,
                period: t0 + tau,
            });
        }
    }
    if min_f >= 1.0 - PERIOD_THRESHOLD {
        return Err(Error::NoCycle);
    }
    Err(Error::PeriodNotFound {
        threshold: PERIOD_THRESHOLD,
        window,
    })
}

/// Relaxes `psi_init` onto the attracting cycle of the deterministic
/// dynamics, measures its period and stores `n_grid` samples equally spaced
/// in time. The phase origin is the point of maximal <X_1>.
pub fn find_limit_cycle(
    model: &LindbladModel,
    psi_init: &Ket,
    opts: &CycleOptions,
) -> Result<LimitCycle> {
    if psi_init.dim() != model.n {
        return Err(Error::DimensionMismatch {
            expected: model.n,
            found: psi_init.dim(),
        });
    }
    if opts.n_grid < 64 {
        return Err(Error::InvalidParameter(format!(
            "n_grid must be at least 64, got {}",
            opts.n_grid
        )));
    }
    let dt = opts.dt.unwrap_or_else(|| default_dt(model));
    let t_relax = opts.t_relax.unwrap_or_else(|| default_t_relax(model));
    let window = opts.max_period.unwrap_or_else(|| default_t_relax(model));
    if !(dt > 0.0) || !(t_relax >= 0.0) || !(window > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need dt > 0, t_relax >= 0 and a positive search window (dt={dt}, t_relax={t_relax})"
        )));
    }

    let kern = SseKernel::new(model);
    let mut relax = Relaxer::new(&kern);
    let mut psi = normalized(psi_init.amplitudes().clone());
    for _ in 0..(t_relax / dt).ceil() as usize {
        relax.step(&mut psi, dt)?;
    }

    let est = detect_period(&mut relax, &psi, dt, window)?;
    let n_grid = opts.n_grid;
    let mut period = est.period;
    let mut anchor = est.anchor;
    let mut ws = kern.workspace();
    let grid = |period: f64| {
        let substeps = (period / (n_grid as f64 * dt)).ceil().max(1.0) as usize;
        (substeps, period / (n_grid * substeps) as f64)
    };
    // Match the period to the sampling step and keep relaxing until one
    // period on the sampling grid returns onto its own start.
    for _ in 0..100 {
        let (substeps, step) = grid(period);
        let (states, mut end) = sweep(&kern, &anchor, n_grid, substeps, step, &mut ws);
        let trial = LimitCycle::raw(model, &kern, period, step, substeps, &states)?;
        // compare one sample past the return so the match is measured
        // against the orbit leaving the anchor
        for _ in 0..substeps {
            kern.rk4_step(&mut end, step, &mut ws);
        }
        let m = trial.nearest_phase(&end);
        let shift = phase_diff(m.theta, trial.spacing());
        period *= TAU / (TAU + shift);
        if m.distance < RETURN_DISTANCE_TOL {
            if shift.abs() < 1e-12 {
                break;
            }
            continue;
        }
        // relax on the sampling step
        anchor = end;
        let extra = (0.25 * t_relax).max(10.0 * period);
        for _ in 0..(extra / period).ceil() as usize {
            for _ in 0..n_grid * substeps {
                kern.rk4_step(&mut anchor, step, &mut ws);
            }
            anchor = normalized(anchor);
            if !anchor.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::Divergence { step: 0 });
            }
        }
    }
    let (substeps, step) = grid(period);

    // locate the maximum of <X_1> along the cycle
    let mut origin = normalized(anchor);
    if let Some(l1) = model.jumps.first() {
        let x1 = l1.matrix() + l1.matrix().adjoint();
        let quad = |v: &CVector| v.dotc(&(&x1 * v)).re / v.norm_squared();
        let mut states = Vec::with_capacity(n_grid);
        let mut v = origin.clone();
        for _ in 0..n_grid {
            states.push(v.clone());
            for _ in 0..substeps {
                kern.rk4_step(&mut v, step, &mut ws);
            }
        }
        let vals: Vec<f64> = states.iter().map(quad).collect();
        let (imax, vmax) = vals
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc });
        let vmin = vals.iter().copied().fold(f64::INFINITY, f64::min);
        if vmax - vmin > 1e-9 {
            let base = states[(imax + n_grid - 1) % n_grid].clone();
            let span = 2.0 * period / n_grid as f64;
            let mut drift = CVector::zeros(model.n);
            let mut slope = |tau: f64, ws: &mut Workspace| {
                let mut phi = base.clone();
                rk4_advance(&kern, &mut phi, tau, step, ws);
                kern.strat_drift(&phi, &mut drift, ws);
                (2.0 * phi.dotc(&(&x1 * &drift)).re / phi.norm_squared(), phi)
            };
            let (ga, _) = slope(0.0, &mut ws);
            let (gb, _) = slope(span, &mut ws);
            let tau = if ga > 0.0 && gb < 0.0 {
                brent_root(|t| slope(t, &mut ws).0, 0.0, span, ga, gb, 1e-14 * period, 200)
            } else {
                0.5 * span
            };
            origin = normalized(slope(tau, &mut ws).1);
        }
    }

    let mut samples = Vec::with_capacity(n_grid);
    let mut v = origin;
    for _ in 0..n_grid {
        samples.push(gauge_fix(&Ket::new(normalized(v.clone()))?)?);
        for _ in 0..substeps {
            kern.rk4_step(&mut v, step, &mut ws);
        }
    }

    let mut lc = LimitCycle {
        model: model.clone(),
        kernel: kern.clone(),
        period,
        omega: TAU / period,
        step,
        substeps,
        samples,
        floquet_multiplier: 0.0,
        isochron_periods: 1,
    };
    lc.floquet_multiplier = lc.estimate_floquet_multiplier();
    lc.isochron_periods = opts
        .isochron_periods
        .unwrap_or_else(|| periods_for_multiplier(lc.floquet_multiplier));
    Ok(lc)
}

/// Smallest n with mu^n below the isochron convergence target.
pub fn periods_for_multiplier(mu: f64) -> usize {
    if !(mu > ISOCHRON_TARGET) {
        return 1;
    }
    if mu >= 1.0 {
        return MAX_ISOCHRON_PERIODS;
    }
    ((ISOCHRON_TARGET.ln() / mu.ln()).ceil() as usize).clamp(1, MAX_ISOCHRON_PERIODS)
}

impl LimitCycle {
    fn raw(
        model: &LindbladModel,
        kern: &SseKernel,
        period: f64,
        step: f64,
        substeps: usize,
        states: &[CVector],
    ) -> Result<Self> {
        let samples = states
            .iter()
            .map(|v| gauge_fix(&Ket::new(normalized(v.clone()))?))
            .collect::<Result<Vec<_>>>()?;
        Ok(LimitCycle {
            model: model.clone(),
            kernel: kern.clone(),
            period,
            omega: TAU / period,
            step,
            substeps,
            samples,
            floquet_multiplier: 0.0,
            isochron_periods: 1,
        })
    }

    /// Rebuilds a cycle from stored samples.
    pub fn from_parts(
        model: LindbladModel,
        period: f64,
        step: f64,
        substeps: usize,
        samples: Vec<Ket>,
        floquet_multiplier: f64,
        isochron_periods: usize,
    ) -> Result<Self> {
        if samples.len() < 2 || substeps == 0 || isochron_periods == 0 {
            return Err(Error::InvalidParameter(
                "a limit cycle needs at least two samples and positive step counts".into(),
            ));
        }
        if samples.iter().any(|s| s.dim() != model.n) {
            return Err(Error::DimensionMismatch {
                expected: model.n,
                found: samples.iter().map(Ket::dim).find(|&d| d != model.n).unwrap_or(0),
            });
        }
        let want = period / (samples.len() * substeps) as f64;
        if !(period > 0.0) || (step - want).abs() > 1e-9 * want {
            return Err(Error::InvalidParameter(format!(
                "step {step} inconsistent with period {period} over {} samples",
                samples.len()
            )));
        }
        Ok(LimitCycle {
            kernel: SseKernel::new(&model),
            model,
            period,
            omega: TAU / period,
            step: want,
            substeps,
            samples,
            floquet_multiplier,
            isochron_periods,
        })
    }

    pub fn model(&self) -> &LindbladModel {
        &self.model
    }

    pub fn kernel(&self) -> &SseKernel {
        &self.kernel
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn n_grid(&self) -> usize {
        self.samples.len()
    }

    /// Grid spacing in phase, 2 pi / n_grid.
    pub fn spacing(&self) -> f64 {
        TAU / self.samples.len() as f64
    }

    pub fn theta(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    pub fn samples(&self) -> &[Ket] {
        &self.samples
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn floquet_multiplier(&self) -> f64 {
        self.floquet_multiplier
    }

    pub fn isochron_periods(&self) -> usize {
        self.isochron_periods
    }

    pub fn set_isochron_periods(&mut self, n: usize) {
        self.isochron_periods = n.max(1);
    }

    /// Integrates the deterministic dynamics for `time` with steps no longer
    /// than the sampling step.
    pub fn advance(&self, psi: &mut CVector, time: f64, ws: &mut Workspace) {
        rk4_advance(&self.kernel, psi, time, self.step, ws);
    }

    /// Integrates for exactly `periods` periods on the sampling step grid.
    pub fn advance_periods(&self, psi: &mut CVector, periods: usize, ws: &mut Workspace) {
        for _ in 0..periods * self.samples.len() * self.substeps {
            self.kernel.rk4_step(psi, self.step, ws);
        }
    }

    /// psi0(theta) obtained by integrating from the preceding grid sample.
    pub fn state_at(&self, theta: f64) -> Ket {
        let pos = wrap(theta) / self.spacing();
        let i = (pos.floor() as usize).min(self.samples.len() - 1);
        let frac = pos - i as f64;
        if frac < 1e-14 {
            return self.samples[i].clone();
        }
        let mut ws = self.kernel.workspace();
        let mut v = self.samples[i].amplitudes().clone();
        self.advance(&mut v, frac * self.period / self.samples.len() as f64, &mut ws);
        gauge_fix(&Ket::new(normalized(v)).expect("finite state")).expect("nonzero state")
    }

    /// Linear interpolation between neighbouring samples after aligning
    /// their global phase; exact at grid points.
    pub fn sample_cycle(&self, theta: f64) -> Ket {
        let n = self.samples.len();
        let pos = wrap(theta) / self.spacing();
        let i = (pos.floor() as usize).min(n - 1);
        let frac = pos - i as f64;
        if frac == 0.0 {
            return self.samples[i].clone();
        }
        let a = self.samples[i].amplitudes();
        let b = self.samples[(i + 1) % n].amplitudes();
        let ov = a.dotc(b);
        let align = if ov.norm() > 0.0 { ov.conj() / ov.norm() } else { ONE };
        let v = a * C64::new(1.0 - frac, 0.0) + b * (align * frac);
        gauge_fix(&Ket::new(normalized(v)).expect("finite state")).expect("nonzero state")
    }

    /// Nearest point of the cycle: coarse search over the samples followed
    /// by a root search of the overlap slope between the neighbours.
    pub fn nearest_phase(&self, psi: &CVector) -> PhaseMatch {
        let n = self.samples.len();
        let v = normalized(psi.clone());
        let (best, _) = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| (i, s.amplitudes().dotc(&v).norm()))
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        let left = (best + n - 1) % n;
        let right = (best + 1) % n;
        let dtau = self.period / n as f64;
        let mut ws = self.kernel.workspace();
        let mut drift = CVector::zeros(self.model.n);
        let mut slope_at = |phi: &CVector, ws: &mut Workspace| {
            self.kernel.strat_drift(phi, &mut drift, ws);
            overlap_slope(&v, phi, &drift)
        };
        let base = self.samples[left].amplitudes().clone();
        let ga = slope_at(&base, &mut ws);
        let gb = slope_at(self.samples[right].amplitudes(), &mut ws);
        let tau = if ga > 0.0 && gb < 0.0 {
            brent_root(
                |t| {
                    let mut phi = base.clone();
                    self.advance(&mut phi, t, &mut ws);
                    slope_at(&phi, &mut ws)
                },
                0.0,
                2.0 * dtau,
                ga,
                gb,
                1e-14 * self.period,
                200,
            )
        } else {
            dtau
        };
        let mut phi = base;
        self.advance(&mut phi, tau, &mut ws);
        let phi = normalized(phi);
        let ov = phi.dotc(&v);
        let fidelity = ov.norm();
        let align = if fidelity > 0.0 { ov / fidelity } else { ONE };
        let distance = (&v - &phi * align).norm();
        PhaseMatch {
            theta: wrap(left as f64 * self.spacing() + self.omega * tau),
            fidelity,
            distance,
        }
    }

    /// Theta(psi): phase of the cycle point reached after integrating psi
    /// for an integer number of periods.
    pub fn isochron_phase(&self, psi: &Ket, n_periods: Option<usize>) -> Result<f64> {
        self.isochron_phase_vec(psi.amplitudes(), n_periods)
    }

    pub fn isochron_phase_vec(&self, psi: &CVector, n_periods: Option<usize>) -> Result<f64> {
        if psi.len() != self.model.n {
            return Err(Error::DimensionMismatch {
                expected: self.model.n,
                found: psi.len(),
            });
        }
        let nrm = psi.norm();
        if !(nrm > 0.0) || !nrm.is_finite() {
            return Err(Error::ZeroVector);
        }
        let mut v = psi / C64::new(nrm, 0.0);
        let mut ws = self.kernel.workspace();
        self.advance_periods(&mut v, n_periods.unwrap_or(self.isochron_periods), &mut ws);
        let m = self.nearest_phase(&v);
        if !(m.fidelity >= ISOCHRON_FIDELITY) {
            return Err(Error::NotConverged {
                fidelity: m.fidelity,
            });
        }
        Ok(m.theta)
    }

    /// |<psi0(theta_i)| U(T) |psi0(theta_i)>| for a stored sample.
    pub fn return_fidelity(&self, i: usize) -> f64 {
        let mut ws = self.kernel.workspace();
        let s = self.samples[i % self.samples.len()].amplitudes();
        let mut v = s.clone();
        self.advance_periods(&mut v, 1, &mut ws);
        s.dotc(&v).norm() / v.norm()
    }

    /// Largest transverse Floquet multiplier, from a finite-difference
    /// monodromy matrix with the phase, gauge and norm directions factored out.
    pub fn estimate_floquet_multiplier(&self) -> f64 {
        let n = self.model.n;
        let s0 = self.samples[0].amplitudes().clone();
        let mut ws = self.kernel.workspace();
        let mut drift = CVector::zeros(n);
        self.kernel.strat_drift(&s0, &mut drift, &mut ws);
        let to_real = |v: &CVector| {
            DVector::from_iterator(2 * n, v.iter().map(|z| z.re).chain(v.iter().map(|z| z.im)))
        };
        let to_complex =
            |x: &DVector<f64>| CVector::from_fn(n, |i, _| C64::new(x[i], x[i + n]));
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(2 * n);
        let push = |mut x: DVector<f64>, basis: &mut Vec<DVector<f64>>| {
            for _ in 0..2 {
                for b in basis.iter() {
                    let c = b.dot(&x);
                    x.axpy(-c, b, 1.0);
                }
            }
            let nrm = x.norm();
            if nrm > 1e-8 {
                basis.push(x / nrm);
            }
        };
        push(to_real(&s0), &mut basis);
        push(to_real(&(&s0 * I)), &mut basis);
        push(to_real(&drift), &mut basis);
        let fixed = basis.len();
        for i in 0..2 * n {
            push(DVector::from_fn(2 * n, |r, _| if r == i { 1.0 } else { 0.0 }), &mut basis);
        }
        let q = &basis[fixed..];
        if q.is_empty() {
            return 0.0;
        }
        let h = 1e-6;
        let mut base = s0.clone();
        self.advance_periods(&mut base, 1, &mut ws);
        let ov = s0.dotc(&base);
        let align = if ov.norm() > 0.0 { ov.conj() / ov.norm() } else { ONE };
        let base = to_real(&(base * align));
        let mut jq = Vec::with_capacity(q.len());
        for col in q {
            let mut v = &s0 + to_complex(col) * C64::new(h, 0.0);
            self.advance_periods(&mut v, 1, &mut ws);
            jq.push((to_real(&(v * align)) - &base) / h);
        }
        let m = DMatrix::from_fn(q.len(), q.len(), |r, c| q[r].dot(&jq[c]));
        m.complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
            .min(1.0)
    }

    pub fn to_json(&self) -> LimitCycleJson {
        LimitCycleJson {
            model: self.model.config.clone(),
            period: self.period,
            omega: self.omega,
            n_grid: self.samples.len(),
            step: self.step,
            substeps: self.substeps,
            floquet_multiplier: self.floquet_multiplier,
            isochron_periods: self.isochron_periods,
            samples: self.samples.iter().map(KetJson::from).collect(),
        }
    }

    pub fn from_json(j: &LimitCycleJson) -> Result<Self> {
        let model = LindbladModel::from_config(&j.model)?;
        if j.samples.len() != j.n_grid {
            return Err(Error::GridMismatch(format!(
                "n_grid {} but {} samples",
                j.n_grid,
                j.samples.len()
            )));
        }
        let samples = j
            .samples
            .iter()
            .map(Ket::try_from)
            .collect::<Result<Vec<_>>>()?;
        LimitCycle::from_parts(
            model,
            j.period,
            j.step,
            j.substeps,
            samples,
            j.floquet_multiplier,
            j.isochron_periods,
        )
    }
}

/// Serialized limit cycle (lc.json).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LimitCycleJson {
    pub model: ModelConfig,
    #[serde(rename = "T")]
    pub period: f64,
    pub omega: f64,
    pub n_grid: usize,
    pub step: f64,
    pub substeps: usize,
    pub floquet_multiplier: f64,
    pub isochron_periods: usize,
    pub samples: Vec<KetJson>,
}

pub fn sample_cycle(lc: &LimitCycle, theta: f64) -> Ket {
    lc.sample_cycle(theta)
}

pub fn isochron_phase(lc: &LimitCycle, psi: &Ket, n_periods: usize) -> Result<f64> {
    lc.isochron_phase(psi, Some(n_periods))
}

/// Signed phase difference a - b wrapped into (-pi, pi].
pub fn phase_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > std::f64::consts::PI {
        d - TAU
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_qubit, ModelConfig};

    fn qubit_cycle(n_grid: usize) -> LimitCycle {
        let model = build_qubit(3.0, 0.1, 0.05).unwrap();
        let psi = Ket::normalized(CVector::from_vec(vec![ONE, ONE])).unwrap();
        find_limit_cycle(&model, &psi, &CycleOptions::with_grid(n_grid)).unwrap()
    }

    #[test]
    fn phase_diff_wraps() {
        assert!((phase_diff(0.1, TAU - 0.1) - 0.2).abs() < 1e-12);
        assert!((phase_diff(TAU - 0.1, 0.1) + 0.2).abs() < 1e-12);
        assert_eq!(phase_diff(std::f64::consts::PI, 0.0), std::f64::consts::PI);
    }

    #[test]
    fn qubit_cycle_is_periodic() {
        let lc = qubit_cycle(64);
        assert!((lc.omega() * lc.period() - TAU).abs() < 1e-12);
        for i in [0, 17, 40] {
            assert!(lc.return_fidelity(i) > 1.0 - 1e-7);
        }
        let n = lc.n_grid();
        for i in 0..n {
            let a = lc.samples()[i].amplitudes();
            let b = lc.samples()[(i + 1) % n].amplitudes();
            assert!(a.dotc(b).norm() > 0.999);
        }
    }

    #[test]
    fn sampling_is_exact_on_grid_and_periodic() {
        let lc = qubit_cycle(64);
        assert_eq!(lc.sample_cycle(lc.theta(5)), lc.samples()[5]);
        let a = lc.sample_cycle(1.234);
        let b = lc.sample_cycle(1.234 + TAU);
        assert!((a.amplitudes() - b.amplitudes()).camax() < 1e-12);
    }

    #[test]
    fn isochron_identity_on_cycle() {
        let lc = qubit_cycle(64);
        for i in [0, 9, 33, 63] {
            let th = lc.isochron_phase(&lc.samples()[i], None).unwrap();
            assert!(phase_diff(th, lc.theta(i)).abs() < lc.spacing() * 1e-2, "{i}: {th}");
        }
    }

    #[test]
    fn spin1_zero_temperature_has_no_cycle() {
        let cfg = ModelConfig::new(
            "spin1",
            &[("delta", 2.0), ("gamma_plus", 0.01), ("gamma_minus", 0.005)],
            None,
        );
        let model = LindbladModel::from_config(&cfg).unwrap();
        let psi = Ket::normalized(CVector::from_vec(vec![ONE, ONE, ONE])).unwrap();
        let r = find_limit_cycle(&model, &psi, &CycleOptions::with_grid(64));
        assert!(matches!(r, Err(Error::NoCycle)), "{r:?}");
    }

    #[test]
    fn json_round_trip() {
        let lc = qubit_cycle(64);
        let j = lc.to_json();
        let text = serde_json::to_string(&j).unwrap();
        let back: LimitCycleJson = serde_json::from_str(&text).unwrap();
        assert_eq!(back, j);
        let lc2 = LimitCycle::from_json(&back).unwrap();
        assert_eq!(lc2.samples(), lc.samples());
        assert_eq!(lc2.period(), lc.period());
    }

    #[test]
    fn rejects_coarse_grid() {
        let model = build_qubit(3.0, 0.1, 0.05).unwrap();
        let psi = Ket::basis(2, 0).unwrap();
        assert!(find_limit_cycle(&model, &psi, &CycleOptions::with_grid(16)).is_err());
    }
}
