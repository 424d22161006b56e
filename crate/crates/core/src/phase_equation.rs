//! The reduced one-dimensional phase SDE: construction from the limit cycle
//! and PRC table, Ito/Stratonovich stepping, and stationary histograms.

use std::f64::consts::TAU;
use std::io::Write;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::analysis::Histogram;
use crate::dynamics::{draw_increments, trajectory_rng};
use crate::error::{Error, Result};
use crate::io::fmt_float;
use crate::lie_decomp::{decompose_traceless, noise_hermitian, perturbation_coeffs};
use crate::limit_cycle::LimitCycle;
use crate::models::LindbladModel;
use crate::operator::{GeneratorBasis, Operator};
use crate::prc::PRCTable;

/// Periodic cubic spline on a uniform grid over [0, 2pi).
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicSpline {
    h: f64,
    y: Vec<f64>,
    m: Vec<f64>,
}

fn fft(values: &[f64], inverse: bool) -> Vec<Complex<f64>> {
    let n = values.len();
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft_in_place(&mut buf, inverse);
    debug_assert_eq!(buf.len(), n);
    buf
}

fn fft_in_place(buf: &mut [Complex<f64>], inverse: bool) {
    let mut planner = FftPlanner::new();
    let plan = if inverse {
        planner.plan_fft_inverse(buf.len())
    } else {
        planner.plan_fft_forward(buf.len())
    };
    plan.process(buf);
}

/// Signed wavenumber of FFT bin k, with the Nyquist bin mapped to 0.
fn wavenumber(k: usize, n: usize) -> f64 {
    if 2 * k == n {
        0.0
    } else if 2 * k < n {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// d/dtheta of a periodic sequence sampled uniformly on [0, 2pi).
pub fn spectral_derivative(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let mut c = fft(values, false);
    for (k, z) in c.iter_mut().enumerate() {
        *z *= Complex::new(0.0, wavenumber(k, n));
    }
    fft_in_place(&mut c, true);
    c.iter().map(|z| z.re / n as f64).collect()
}

impl PeriodicSpline {
    pub fn new(y: &[f64]) -> Self {
        let n = y.len();
        let h = TAU / n as f64;
        // M_{i-1} + 4 M_i + M_{i+1} = 6 (y_{i-1} - 2 y_i + y_{i+1}) / h^2 is
        // circulant, so it is diagonal in Fourier space.
        let rhs: Vec<f64> = (0..n)
            .map(|i| 6.0 * (y[(i + n - 1) % n] - 2.0 * y[i] + y[(i + 1) % n]) / (h * h))
            .collect();
        let mut c = fft(&rhs, false);
        for (k, z) in c.iter_mut().enumerate() {
            *z /= 4.0 + 2.0 * (TAU * k as f64 / n as f64).cos();
        }
        fft_in_place(&mut c, true);
        PeriodicSpline {
            h,
            y: y.to_vec(),
            m: c.iter().map(|z| z.re / n as f64).collect(),
        }
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let n = self.y.len();
        let x = theta.rem_euclid(TAU) / self.h;
        let i = (x.floor() as usize).min(n - 1);
        let t = (x - i as f64) * self.h;
        let j = (i + 1) % n;
        let (h, s) = (self.h, self.h - t);
        (self.m[i] * s * s * s + self.m[j] * t * t * t) / (6.0 * h)
            + (self.y[i] - self.m[i] * h * h / 6.0) * s / h
            + (self.y[j] - self.m[j] * h * h / 6.0) * t / h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseScheme {
    /// Euler-Maruyama on the Ito form.
    Ito,
    /// Heun predictor-corrector on the Stratonovich form.
    Stratonovich,
}

/// d theta = [omega + p(theta)] dt + sum_k Y_k(theta) o dW_k
#[derive(Clone, Debug)]
pub struct PhaseSDE {
    omega: f64,
    theta: Vec<f64>,
    y: Vec<Vec<f64>>,
    dy: Vec<Vec<f64>>,
    perturb: Option<Vec<f64>>,
    y_spline: Vec<PeriodicSpline>,
    dy_spline: Vec<PeriodicSpline>,
    p_spline: Option<PeriodicSpline>,
}

/// On-disk form of a [`PhaseSDE`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSdeJson {
    pub omega: f64,
    pub theta: Vec<f64>,
    #[serde(rename = "Y")]
    pub y: Vec<Vec<f64>>,
    #[serde(rename = "dY")]
    pub dy: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb: Option<Vec<f64>>,
}

impl PhaseSDE {
    /// Builds the SDE from per-channel Y tables on the uniform grid
    /// theta_i = 2 pi i / n; derivatives are spectral.
    pub fn new(omega: f64, y: Vec<Vec<f64>>, perturb: Option<Vec<f64>>) -> Result<Self> {
        let n = match (y.first(), &perturb) {
            (Some(row), _) => row.len(),
            (None, Some(p)) => p.len(),
            (None, None) => 64,
        };
        let dy = y.iter().map(|row| spectral_derivative(row)).collect();
        Self::with_derivatives(omega, n, y, dy, perturb)
    }

    fn with_derivatives(
        omega: f64,
        n: usize,
        y: Vec<Vec<f64>>,
        dy: Vec<Vec<f64>>,
        perturb: Option<Vec<f64>>,
    ) -> Result<Self> {
        if n < 4 {
            return Err(Error::GridMismatch(format!("phase grid needs at least 4 points, got {n}")));
        }
        let lens_ok = y.iter().chain(dy.iter()).chain(perturb.iter()).all(|r| r.len() == n) && y.len() == dy.len();
        if !lens_ok {
            return Err(Error::GridMismatch("Y, dY and perturbation tables must share one grid".into()));
        }
        if !omega.is_finite() || y.iter().chain(dy.iter()).chain(perturb.iter()).flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("phase SDE tables must be finite".into()));
        }
        Ok(PhaseSDE {
            omega,
            theta: (0..n).map(|i| TAU * i as f64 / n as f64).collect(),
            y_spline: y.iter().map(|r| PeriodicSpline::new(r)).collect(),
            dy_spline: dy.iter().map(|r| PeriodicSpline::new(r)).collect(),
            p_spline: perturb.as_deref().map(PeriodicSpline::new),
            y,
            dy,
            perturb,
        })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn num_channels(&self) -> usize {
        self.y.len()
    }

    pub fn y_table(&self) -> &[Vec<f64>] {
        &self.y
    }

    pub fn dy_table(&self) -> &[Vec<f64>] {
        &self.dy
    }

    pub fn perturbation(&self) -> Option<&[f64]> {
        self.perturb.as_deref()
    }

    pub fn y(&self, k: usize, theta: f64) -> f64 {
        self.y_spline[k].eval(theta)
    }

    pub fn dy(&self, k: usize, theta: f64) -> f64 {
        self.dy_spline[k].eval(theta)
    }

    fn perturb_at(&self, theta: f64) -> f64 {
        self.p_spline.as_ref().map_or(0.0, |s| s.eval(theta))
    }

    /// omega plus the perturbation drift.
    pub fn drift_stratonovich(&self, theta: f64) -> f64 {
        self.omega + self.perturb_at(theta)
    }

    /// omega + (1/2) sum_k Y_k dY_k/dtheta plus the perturbation drift.
    pub fn drift_ito(&self, theta: f64) -> f64 {
        let corr: f64 = (0..self.y.len()).map(|k| self.y(k, theta) * self.dy(k, theta)).sum();
        self.drift_stratonovich(theta) + 0.5 * corr
    }

    /// Largest |drift| over the grid, for step-size checks.
    pub fn max_drift(&self) -> f64 {
        self.theta
            .iter()
            .map(|&t| self.drift_ito(t).abs().max(self.drift_stratonovich(t).abs()))
            .fold(0.0, f64::max)
    }

    fn noise_sum(&self, theta: f64, dw: &[f64]) -> f64 {
        self.y_spline.iter().zip(dw).map(|(s, w)| s.eval(theta) * w).sum()
    }

    /// One step without wrapping; returns the phase increment.
    pub fn increment(&self, theta: f64, dw: &[f64], dt: f64, scheme: PhaseScheme) -> f64 {
        match scheme {
            PhaseScheme::Ito => self.drift_ito(theta) * dt + self.noise_sum(theta, dw),
            PhaseScheme::Stratonovich => {
                let a0 = self.drift_stratonovich(theta);
                let b0 = self.noise_sum(theta, dw);
                let pred = theta + a0 * dt + b0;
                0.5 * (a0 + self.drift_stratonovich(pred)) * dt + 0.5 * (b0 + self.noise_sum(pred, dw))
            }
        }
    }

    pub fn to_json(&self) -> PhaseSdeJson {
        PhaseSdeJson {
            omega: self.omega,
            theta: self.theta.clone(),
            y: self.y.clone(),
            dy: self.dy.clone(),
            perturb: self.perturb.clone(),
        }
    }

    pub fn from_json(j: &PhaseSdeJson) -> Result<Self> {
        let n = j.theta.len();
        for (i, &t) in j.theta.iter().enumerate() {
            if (t - TAU * i as f64 / n as f64).abs() > 1e-9 {
                return Err(Error::GridMismatch(format!("theta[{i}] = {t} is not on the uniform grid")));
            }
        }
        Self::with_derivatives(j.omega, n, j.y.clone(), j.dy.clone(), j.perturb.clone())
    }
}

/// One step of the phase equation, wrapped to [0, 2pi).
pub fn step_phase(sde: &PhaseSDE, theta: f64, dw: &[f64], dt: f64, scheme: PhaseScheme) -> Result<f64> {
    if dw.len() != sde.num_channels() {
        return Err(Error::DimensionMismatch {
            expected: sde.num_channels(),
            found: dw.len(),
        });
    }
    let next = theta + sde.increment(theta, dw, dt, scheme);
    if !next.is_finite() {
        return Err(Error::Divergence { step: 0 });
    }
    Ok(next.rem_euclid(TAU))
}

/// Grid stride of the PRC table inside the limit-cycle grid.
fn table_stride(lc: &LimitCycle, table: &PRCTable) -> Result<usize> {
    let (n, m) = (lc.n_grid(), table.n_theta());
    if m == 0 || n % m != 0 {
        return Err(Error::GridMismatch(format!(
            "PRC grid of {m} phases does not divide the limit-cycle grid of {n}"
        )));
    }
    let stride = n / m;
    for (i, &t) in table.theta.iter().enumerate() {
        if (t - lc.theta(i * stride)).abs() > 1e-9 {
            return Err(Error::GridMismatch(format!(
                "PRC phase {t} does not match limit-cycle phase {}",
                lc.theta(i * stride)
            )));
        }
    }
    Ok(stride)
}

fn check_model(lc: &LimitCycle, model: &LindbladModel, basis: &GeneratorBasis, table: &PRCTable) -> Result<()> {
    let n = lc.model().n;
    if model.n != n || basis.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if model.n != n { model.n } else { basis.dim() },
        });
    }
    if table.n_generators() != basis.len() {
        return Err(Error::GridMismatch(format!(
            "PRC table has {} generators, basis has {}",
            table.n_generators(),
            basis.len()
        )));
    }
    Ok(())
}

/// g_{k,l}(theta_i) for every table phase and channel: [i][k][l].
pub fn noise_coefficient_table(
    lc: &LimitCycle,
    model: &LindbladModel,
    basis: &GeneratorBasis,
    table: &PRCTable,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let stride = table_stride(lc, table)?;
    (0..table.n_theta())
        .map(|i| {
            let psi = &lc.samples()[i * stride];
            model
                .jumps
                .iter()
                .map(|l| Ok(decompose_traceless(&noise_hermitian(l, psi)?, basis)?.g))
                .collect()
        })
        .collect()
}

/// CSV with columns theta, k, l, g.
pub fn write_coefficients_csv<W: Write>(w: W, theta: &[f64], g: &[Vec<Vec<f64>>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["theta", "k", "l", "g"])?;
    for (t, rows) in theta.iter().zip(g) {
        for (k, row) in rows.iter().enumerate() {
            for (l, v) in row.iter().enumerate() {
                out.write_record([fmt_float(*t), k.to_string(), l.to_string(), fmt_float(*v)])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Y_k(theta) = sum_l Z_l(theta) g_{k,l}(theta) on the PRC grid.
pub fn build_phase_sde(
    lc: &LimitCycle,
    table: &PRCTable,
    model: &LindbladModel,
    basis: &GeneratorBasis,
) -> Result<PhaseSDE> {
    check_model(lc, model, basis, table)?;
    let g = noise_coefficient_table(lc, model, basis, table)?;
    let m = model.num_channels();
    let y = (0..m)
        .map(|k| {
            (0..table.n_theta())
                .map(|i| table.z[i].iter().zip(&g[i][k]).map(|(z, c)| z * c).sum())
                .collect()
        })
        .collect();
    PhaseSDE::new(lc.omega(), y, None)
}

/// Adds eps sum_l f_{p,l} Z_l(theta) to the drift.
pub fn add_perturbation(
    sde: &PhaseSDE,
    hp: &Operator,
    eps: f64,
    table: &PRCTable,
    basis: &GeneratorBasis,
) -> Result<PhaseSDE> {
    let f = perturbation_coeffs(hp, basis)?;
    if table.n_theta() != sde.theta.len() {
        return Err(Error::GridMismatch(format!(
            "PRC table has {} phases, SDE grid has {}",
            table.n_theta(),
            sde.theta.len()
        )));
    }
    let mut p: Vec<f64> = table.combine(&f.g)?.into_iter().map(|z| eps * z).collect();
    if let Some(old) = &sde.perturb {
        for (a, b) in p.iter_mut().zip(old) {
            *a += b;
        }
    }
    PhaseSDE::with_derivatives(sde.omega, sde.theta.len(), sde.y.clone(), sde.dy.clone(), Some(p))
}

/// Ensemble settings for phase-equation simulations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSimConfig {
    pub n_traj: usize,
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
    pub n_bins: usize,
    pub scheme: PhaseScheme,
    /// Fraction of each trajectory discarded as transient.
    #[serde(default = "default_discard")]
    pub discard: f64,
}

fn default_discard() -> f64 {
    0.2
}

impl PhaseSimConfig {
    pub fn new(n_traj: usize, t_end: f64, dt: f64, seed: u64, n_bins: usize) -> Self {
        PhaseSimConfig {
            n_traj,
            t_end,
            dt,
            seed,
            n_bins,
            scheme: PhaseScheme::Ito,
            discard: default_discard(),
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }

    fn validate(&self, sde: &PhaseSDE) -> Result<()> {
        if self.n_traj == 0 || self.n_bins == 0 || !(self.dt > 0.0) || !(self.t_end > self.dt) {
            return Err(Error::InvalidParameter(format!(
                "phase simulation needs n_traj, n_bins >= 1 and 0 < dt < t_end (dt={}, t_end={})",
                self.dt, self.t_end
            )));
        }
        if !(0.0..1.0).contains(&self.discard) {
            return Err(Error::InvalidParameter(format!("discard fraction {} not in [0, 1)", self.discard)));
        }
        if self.dt * sde.max_drift() >= 0.1 {
            return Err(Error::InvalidParameter(format!(
                "dt = {} too large: dt * max|drift| = {} must stay below 0.1",
                self.dt,
                self.dt * sde.max_drift()
            )));
        }
        Ok(())
    }
}

/// Runs trajectory `index`, feeding every post-transient phase to `visit`;
/// returns the unwrapped phase advance over the recorded window.
fn run_phase_trajectory<F: FnMut(f64)>(sde: &PhaseSDE, cfg: &PhaseSimConfig, index: u64, mut visit: F) -> Result<f64> {
    let mut rng = trajectory_rng(cfg.seed, index);
    let mut theta = rand::Rng::random::<f64>(&mut rng) * TAU;
    let mut dw = vec![0.0; sde.num_channels()];
    let steps = cfg.steps();
    let skip = (cfg.discard * steps as f64).floor() as usize;
    let mut advance = 0.0;
    for step in 1..=steps {
        draw_increments(&mut rng, cfg.dt, &mut dw);
        let d = sde.increment(theta, &dw, cfg.dt, cfg.scheme);
        if !d.is_finite() {
            return Err(Error::Divergence { step });
        }
        theta = (theta + d).rem_euclid(TAU);
        if step > skip {
            advance += d;
            visit(theta);
        }
    }
    Ok(advance)
}

/// Stationary histogram of the phase over [0, 2pi), pooled over trajectories
/// after discarding the transient. Trajectory i uses RNG stream i.
pub fn stationary_distribution(sde: &PhaseSDE, cfg: &PhaseSimConfig) -> Result<Histogram> {
    cfg.validate(sde)?;
    let n_bins = cfg.n_bins;
    let counts = (0..cfg.n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let mut c = vec![0u64; n_bins];
            run_phase_trajectory(sde, cfg, i, |th| c[Histogram::bin_index(th, n_bins)] += 1)?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = vec![0u64; n_bins];
    for c in &counts {
        for (t, x) in total.iter_mut().zip(c) {
            *t += x;
        }
    }
    Histogram::from_counts(&total)
}

/// Ensemble-mean d theta / dt (unwrapped) over the post-transient window.
pub fn mean_frequency(sde: &PhaseSDE, cfg: &PhaseSimConfig) -> Result<f64> {
    cfg.validate(sde)?;
    let steps = cfg.steps();
    let window = (steps - (cfg.discard * steps as f64).floor() as usize) as f64 * cfg.dt;
    let advances = (0..cfg.n_traj as u64)
        .into_par_iter()
        .map(|i| run_phase_trajectory(sde, cfg, i, |_| {}))
        .collect::<Result<Vec<_>>>()?;
    Ok(advances.iter().sum::<f64>() / (advances.len() as f64 * window))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| TAU * i as f64 / n as f64).collect()
    }

    #[test]
    fn spectral_derivative_of_trig() {
        let t = grid(64);
        let y: Vec<f64> = t.iter().map(|x| (3.0 * x).sin() + 0.5 * x.cos()).collect();
        let d = spectral_derivative(&y);
        for (x, v) in t.iter().zip(&d) {
            assert!((v - (3.0 * (3.0 * x).cos() - 0.5 * x.sin())).abs() < 1e-12);
        }
    }

    #[test]
    fn spline_interpolates_and_wraps() {
        let t = grid(64);
        let y: Vec<f64> = t.iter().map(|x| (2.0 * x).cos()).collect();
        let s = PeriodicSpline::new(&y);
        for (x, v) in t.iter().zip(&y) {
            assert!((s.eval(*x) - v).abs() < 1e-13);
        }
        for x in [0.05, 1.234, 6.2] {
            assert!((s.eval(x) - (2.0 * x).cos()).abs() < 1e-5);
            assert!((s.eval(x) - s.eval(x + TAU)).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_step_is_rigid_rotation() {
        let sde = PhaseSDE::new(1.3, vec![], None).unwrap();
        let th = step_phase(&sde, 6.2, &[], 0.1, PhaseScheme::Stratonovich).unwrap();
        assert!((th - (6.2 + 0.13 - TAU)).abs() < 1e-15);
        assert_eq!(sde.drift_ito(0.4), 1.3);
    }

    #[test]
    fn constant_noise_has_no_ito_correction() {
        let sde = PhaseSDE::new(1.0, vec![vec![0.3; 32]], None).unwrap();
        for x in [0.0, 1.0, 5.0] {
            assert!((sde.drift_ito(x) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn ito_correction_integrates_to_zero() {
        let t = grid(128);
        let y: Vec<f64> = t.iter().map(|x| 0.4 * x.sin() + 0.2 * (2.0 * x).cos() + 0.1).collect();
        let sde = PhaseSDE::new(1.0, vec![y], None).unwrap();
        let n = 4096;
        let integral: f64 = (0..n)
            .map(|i| sde.drift_ito(TAU * i as f64 / n as f64) - 1.0)
            .sum::<f64>()
            * TAU
            / n as f64;
        assert!(integral.abs() < 1e-8, "{integral}");
    }

    #[test]
    fn json_round_trip() {
        let t = grid(16);
        let y: Vec<f64> = t.iter().map(|x| x.sin()).collect();
        let sde = PhaseSDE::new(2.0, vec![y], Some(vec![0.01; 16])).unwrap();
        let text = serde_json::to_string(&sde.to_json()).unwrap();
        let back = PhaseSDE::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.to_json(), sde.to_json());
    }

    #[test]
    fn rejects_coarse_step() {
        let sde = PhaseSDE::new(10.0, vec![], None).unwrap();
        let cfg = PhaseSimConfig::new(2, 10.0, 0.05, 1, 16);
        assert!(matches!(stationary_distribution(&sde, &cfg), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn histogram_is_reproducible_and_normalized() {
        let t = grid(32);
        let y: Vec<f64> = t.iter().map(|x| 0.3 * x.sin()).collect();
        let sde = PhaseSDE::new(1.0, vec![y], None).unwrap();
        let cfg = PhaseSimConfig::new(8, 20.0, 0.01, 42, 32);
        let a = stationary_distribution(&sde, &cfg).unwrap();
        let b = stationary_distribution(&sde, &cfg).unwrap();
        assert_eq!(a, b);
        assert!((a.total_mass() - 1.0).abs() < 1e-12);
    }
}
