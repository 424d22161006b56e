//! Validation tools: phase histograms, fidelity, density reconstruction from
//! a phase distribution, phase-space quasiprobabilities and the classical
//! van der Pol reference.

use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{draw_increments, trajectory_rng, DensityOperator, Scheme, SseKernel, TrajectoryConfig};
use crate::error::{Error, Result};
use crate::io::fmt_float;
use crate::limit_cycle::LimitCycle;
use crate::linalg::{hermitian_eigen, psd_sqrt};
use crate::models::{LindbladModel, ModelConfig};
use crate::operator::{CMatrix, CVector, Ket, C64};

/// Phase histogram over [0, 2pi) with densities in 1/rad.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn bin_index(theta: f64, n_bins: usize) -> usize {
        let x = theta.rem_euclid(TAU) / TAU * n_bins as f64;
        (x as usize).min(n_bins - 1)
    }

    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if counts.is_empty() || total == 0 {
            return Err(Error::InvalidParameter("histogram needs at least one sample".into()));
        }
        let width = TAU / counts.len() as f64;
        Ok(Histogram {
            density: counts.iter().map(|&c| c as f64 / (total as f64 * width)).collect(),
        })
    }

    pub fn from_samples<I: IntoIterator<Item = f64>>(samples: I, n_bins: usize) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::InvalidParameter("n_bins must be positive".into()));
        }
        let mut counts = vec![0u64; n_bins];
        for th in samples {
            counts[Self::bin_index(th, n_bins)] += 1;
        }
        Self::from_counts(&counts)
    }

    /// Normalizes arbitrary nonnegative bin weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || !(total > 0.0) || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidParameter("histogram weights must be nonnegative with positive sum".into()));
        }
        let width = TAU / weights.len() as f64;
        Ok(Histogram {
            density: weights.iter().map(|w| w / (total * width)).collect(),
        })
    }

    pub fn uniform(n_bins: usize) -> Self {
        Histogram {
            density: vec![1.0 / TAU; n_bins],
        }
    }

    pub fn n_bins(&self) -> usize {
        self.density.len()
    }

    pub fn width(&self) -> f64 {
        TAU / self.density.len() as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.width()
    }

    pub fn total_mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.width()
    }

    pub fn max_density(&self) -> f64 {
        self.density.iter().copied().fold(0.0, f64::max)
    }

    /// CSV with columns theta (bin centre), density.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["theta", "density"])?;
        for (i, p) in self.density.iter().enumerate() {
            out.write_record([fmt_float(self.center(i)), fmt_float(*p)])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            #[allow(dead_code)]
            theta: f64,
            density: f64,
        }
        let mut density = Vec::new();
        for rec in csv::Reader::from_reader(r).deserialize::<Row>() {
            density.push(rec?.density);
        }
        if density.is_empty() {
            return Err(Error::Parse("histogram CSV has no rows".into()));
        }
        Ok(Histogram { density })
    }
}

/// Total-variation distance (1/2) sum |P1 - P2| dtheta.
pub fn compare_distributions(h1: &Histogram, h2: &Histogram) -> Result<f64> {
    if h1.n_bins() != h2.n_bins() {
        return Err(Error::BinningMismatch(h1.n_bins(), h2.n_bins()));
    }
    let s: f64 = h1.density.iter().zip(&h2.density).map(|(a, b)| (a - b).abs()).sum();
    Ok(0.5 * s * h1.width())
}

fn clipped_psd(rho: &DensityOperator, label: &str) -> Result<CMatrix> {
    let (vals, _) = hermitian_eigen(rho.matrix());
    if let Some(v) = vals.iter().find(|v| **v < -1e-6) {
        return Err(Error::InvalidState(format!("{label} has eigenvalue {v:e}")));
    }
    Ok(rho.matrix().clone())
}

/// Uhlmann fidelity (Tr sqrt(sqrt(rho1) rho2 sqrt(rho1)))^2.
pub fn fidelity(rho1: &DensityOperator, rho2: &DensityOperator) -> Result<f64> {
    if rho1.dim() != rho2.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho1.dim(),
            found: rho2.dim(),
        });
    }
    let a = clipped_psd(rho1, "first state")?;
    let b = clipped_psd(rho2, "second state")?;
    let s = psd_sqrt(&a);
    let m = &s * b * &s;
    let (vals, _) = hermitian_eigen(&m);
    let tr: f64 = vals.iter().map(|v| v.max(0.0).sqrt()).sum();
    Ok((tr * tr).clamp(0.0, 1.0))
}

/// rho_re = sum_i P_i dtheta |psi0(theta_i)><psi0(theta_i)| at bin centres.
pub fn reconstruct_density(hist: &Histogram, lc: &LimitCycle) -> Result<DensityOperator> {
    let n = lc.model().n;
    let w = hist.width();
    let mut rho = CMatrix::zeros(n, n);
    for (i, &p) in hist.density.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let psi = lc.state_at(hist.center(i));
        let v = psi.amplitudes();
        rho += v * v.adjoint() * C64::new(p * w, 0.0);
    }
    let tr = rho.trace().re;
    if !(tr > 0.0) {
        return Err(Error::InvalidState("reconstructed state has zero trace".into()));
    }
    rho /= C64::new(tr, 0.0);
    DensityOperator::new((&rho + rho.adjoint()) * C64::new(0.5, 0.0))
}

/// Histogram of nearest-cycle phases of the states of SSE trajectories.
/// Trajectory i uses RNG stream i; the first `discard` fraction of each
/// trajectory is skipped and every `stride`-th later state is binned.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsePhaseConfig {
    pub n_traj: usize,
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
    pub n_bins: usize,
    pub stride: usize,
    pub discard: f64,
    pub scheme: Scheme,
    /// Integrate each sampled state for this many periods before matching
    /// (isochron phase); 0 uses the nearest cycle point directly.
    pub isochron_periods: usize,
}

/// `model` drives the trajectories and may differ from the cycle's model by
/// a perturbation.
pub fn sse_phase_histogram(lc: &LimitCycle, model: &LindbladModel, psi0: &Ket, cfg: &SsePhaseConfig) -> Result<Histogram> {
    if model.n != lc.model().n || psi0.dim() != model.n {
        return Err(Error::DimensionMismatch {
            expected: lc.model().n,
            found: model.n.max(psi0.dim()),
        });
    }
    if cfg.n_traj == 0 || cfg.stride == 0 || !(0.0..1.0).contains(&cfg.discard) {
        return Err(Error::InvalidParameter("SSE histogram needs n_traj, stride >= 1 and discard in [0, 1)".into()));
    }
    let tc = TrajectoryConfig::new(cfg.dt, cfg.t_end, cfg.seed, cfg.scheme);
    let steps = tc.steps();
    let skip = (cfg.discard * steps as f64).floor() as usize;
    let kern = SseKernel::new(model);
    let iso_kern = lc.kernel();
    let m = model.num_channels();
    let n_bins = cfg.n_bins;
    let counts = (0..cfg.n_traj as u64)
        .into_par_iter()
        .map(|idx| {
            let mut rng = trajectory_rng(cfg.seed, idx);
            let mut ws = kern.workspace();
            let mut iso_ws = iso_kern.workspace();
            let mut dw = vec![0.0; m];
            let mut psi = psi0.amplitudes().clone();
            let mut c = vec![0u64; n_bins];
            for step in 1..=steps {
                draw_increments(&mut rng, cfg.dt, &mut dw);
                crate::dynamics::advance(&kern, cfg.scheme, tc.renormalize_each_step, &mut psi, &dw, cfg.dt, &mut ws);
                if psi.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(Error::Divergence { step });
                }
                if step > skip && (step - skip) % cfg.stride == 0 {
                    let th = if cfg.isochron_periods > 0 {
                        let mut v = &psi / C64::new(psi.norm(), 0.0);
                        lc.advance_periods(&mut v, cfg.isochron_periods, &mut iso_ws);
                        lc.nearest_phase(&v).theta
                    } else {
                        lc.nearest_phase(&psi).theta
                    };
                    c[Histogram::bin_index(th, n_bins)] += 1;
                }
            }
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

/// Rectangular phase-space grid; `values[row][col]` is at (x[col], p[row]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpaceGrid {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// Set when the top basis level carries population above 1e-3.
    #[serde(default)]
    pub truncation_warning: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub nx: usize,
    pub np: usize,
}

impl GridSpec {
    /// 201 x 201 points over +-(sqrt(2N) + 2) in both quadratures.
    pub fn default_for(n_levels: usize) -> Self {
        let r = (2.0 * n_levels as f64).sqrt() + 2.0;
        GridSpec {
            x_min: -r,
            x_max: r,
            p_min: -r,
            p_max: r,
            nx: 201,
            np: 201,
        }
    }

    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![lo];
        }
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.np == 0 || !(self.x_max >= self.x_min) || !(self.p_max >= self.p_min) {
            return Err(Error::InvalidParameter("grid needs nx, np >= 1 and ordered ranges".into()));
        }
        Ok(())
    }
}

impl PhaseSpaceGrid {
    fn evaluate<F: Fn(f64, f64) -> f64 + Sync>(spec: &GridSpec, f: F) -> Result<Self> {
        spec.validate()?;
        let x = GridSpec::axis(spec.x_min, spec.x_max, spec.nx);
        let p = GridSpec::axis(spec.p_min, spec.p_max, spec.np);
        let values = p.par_iter().map(|&pv| x.iter().map(|&xv| f(xv, pv)).collect()).collect();
        Ok(PhaseSpaceGrid {
            x,
            p,
            values,
            truncation_warning: false,
        })
    }

    /// Trapezoidal integral over the grid.
    pub fn integral(&self) -> f64 {
        let weights = |axis: &[f64]| -> Vec<f64> {
            let n = axis.len();
            if n < 2 {
                return vec![0.0; n];
            }
            let h = (axis[n - 1] - axis[0]) / (n - 1) as f64;
            (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h }).collect()
        };
        let (wx, wp) = (weights(&self.x), weights(&self.p));
        self.values
            .iter()
            .zip(&wp)
            .map(|(row, a)| row.iter().zip(&wx).map(|(v, b)| v * a * b).sum::<f64>())
            .sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// CSV with columns x, p, value.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "p", "value"])?;
        for (pv, row) in self.p.iter().zip(&self.values) {
            for (xv, v) in self.x.iter().zip(row) {
                out.write_record([fmt_float(*xv), fmt_float(*pv), fmt_float(*v)])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn top_population(rho: &DensityOperator) -> f64 {
    let n = rho.dim();
    rho.matrix()[(n - 1, n - 1)].re
}

/// Generalized Laguerre polynomials L_k^a(x) for k = 0..=kmax.
fn laguerre_all(kmax: usize, a: f64, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(kmax + 1);
    out.push(1.0);
    if kmax >= 1 {
        out.push(1.0 + a - x);
    }
    for k in 1..kmax {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + a - x) * out[k] - (kf + a) * out[k - 1]) / (kf + 1.0);
        out.push(next);
    }
    out
}

/// Wigner function in the truncated Fock basis, alpha = (x + i p) / sqrt 2.
pub fn wigner(rho: &DensityOperator, spec: &GridSpec) -> Result<PhaseSpaceGrid> {
    let n = rho.dim();
    let r = rho.matrix();
    let mut grid = PhaseSpaceGrid::evaluate(spec, |x, p| {
        let alpha = C64::new(x, p) * std::f64::consts::FRAC_1_SQRT_2;
        let b = 4.0 * alpha.norm_sqr();
        let mut w = 0.0;
        for d in 0..n {
            // L_m^d(b) for m = 0..n-1-d
            let lag = laguerre_all(n - 1 - d, d as f64, b);
            let two_alpha_d = (alpha * 2.0).powu(d as u32);
            // sqrt(m!/(m+d)!)
            let mut ratio = 1.0 / (1..=d).map(|k| k as f64).product::<f64>().sqrt();
            for m in 0..n - d {
                if m > 0 {
                    ratio *= (m as f64 / (m + d) as f64).sqrt();
                }
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                let term = r[(m, m + d)] * two_alpha_d * (sign * ratio * lag[m]);
                w += if d == 0 { term.re } else { 2.0 * term.re };
            }
        }
        w * (-0.5 * b).exp() / PI
    })?;
    grid.truncation_warning = top_population(rho) > 1e-3;
    Ok(grid)
}

/// Husimi Q = <alpha|rho|alpha>/pi with the coherent state truncated to N levels.
pub fn husimi_q(rho: &DensityOperator, spec: &GridSpec) -> Result<PhaseSpaceGrid> {
    let n = rho.dim();
    let r = rho.matrix();
    let mut grid = PhaseSpaceGrid::evaluate(spec, |x, p| {
        let alpha = C64::new(x, p) * std::f64::consts::FRAC_1_SQRT_2;
        let mut c = CVector::zeros(n);
        let mut amp = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
        for k in 0..n {
            if k > 0 {
                amp *= alpha / (k as f64).sqrt();
            }
            c[k] = amp;
        }
        c.dotc(&(r * &c)).re / PI
    })?;
    grid.truncation_warning = top_population(rho) > 1e-3;
    Ok(grid)
}

/// Spin-coherent-state Husimi function (2j+1)/(4 pi) <theta,phi|rho|theta,phi>
/// with basis index i carrying m = j - i. Rows are polar angles in [0, pi],
/// columns azimuths in [0, 2pi); stored in `p` and `x` respectively.
pub fn husimi_spin(rho: &DensityOperator, n_theta: usize, n_phi: usize) -> Result<PhaseSpaceGrid> {
    if n_theta < 2 || n_phi < 1 {
        return Err(Error::InvalidParameter("spin Husimi grid needs n_theta >= 2 and n_phi >= 1".into()));
    }
    let n = rho.dim();
    let two_j = n - 1;
    let r = rho.matrix();
    let binom: Vec<f64> = (0..n)
        .map(|k| {
            let mut b = 1.0;
            for i in 0..k {
                b *= (two_j - i) as f64 / (i + 1) as f64;
            }
            b.sqrt()
        })
        .collect();
    let spec = GridSpec {
        x_min: 0.0,
        x_max: TAU * (n_phi as f64 - 1.0).max(0.0) / n_phi as f64,
        p_min: 0.0,
        p_max: PI,
        nx: n_phi,
        np: n_theta,
    };
    PhaseSpaceGrid::evaluate(&spec, |phi, theta| {
        let (c, s) = ((0.5 * theta).cos(), (0.5 * theta).sin());
        let v = CVector::from_fn(n, |k, _| {
            C64::from_polar(binom[k] * c.powi((two_j - k) as i32) * s.powi(k as i32), k as f64 * phi)
        });
        v.dotc(&(r * &v)).re * n as f64 / (4.0 * PI)
    })
}

/// Classical-limit van der Pol reference: d alpha/dt = i delta alpha +
/// (eps/2) alpha - gamma_2d |alpha|^2 alpha with eps = gamma_1g - gamma_1d.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiclassicalVdp {
    pub epsilon: f64,
    pub gamma_2d: f64,
    pub gamma_1g: f64,
    pub delta: f64,
    /// r* = sqrt(eps / (2 gamma_2d)), the radius in |alpha|.
    pub radius: f64,
    /// sqrt(2) r*, the amplitude in x.
    pub amplitude: f64,
    /// Rotation rate of the cycle.
    pub omega: f64,
}

impl SemiclassicalVdp {
    /// Phase response to a unit displacement of x for theta = -arg(alpha)
    /// (or +arg for negative detuning): -sin(theta) / A_c.
    pub fn reference_prc(&self, theta: f64) -> f64 {
        -theta.sin() / self.amplitude
    }

    /// Mean photon number on the classical cycle.
    pub fn photon_number(&self) -> f64 {
        self.radius * self.radius
    }
}

pub fn semiclassical_vdp(cfg: &ModelConfig) -> Result<SemiclassicalVdp> {
    if cfg.model != "qvdp" {
        return Err(Error::InvalidParameter(format!("semiclassical reference needs a qvdp model, got '{}'", cfg.model)));
    }
    let g1g = cfg.params.get("gamma_1g").copied().unwrap_or(0.0);
    let g1d = cfg.params.get("gamma_1d").copied().unwrap_or(0.0);
    let g2d = cfg.params.get("gamma_2d").copied().unwrap_or(0.0);
    let delta = cfg.params.get("delta").copied().unwrap_or(0.0);
    let eps = g1g - g1d;
    if !(eps > 0.0) || !(g2d > 0.0) {
        return Err(Error::NoCycle);
    }
    let radius = (eps / (2.0 * g2d)).sqrt();
    Ok(SemiclassicalVdp {
        epsilon: eps,
        gamma_2d: g2d,
        gamma_1g: g1g,
        delta,
        radius,
        amplitude: std::f64::consts::SQRT_2 * radius,
        omega: delta.abs(),
    })
}

/// RMS deviation of the per-period phase advance from 2pi for the
/// classical-limit equation with additive noise sqrt(gamma_1g) o xi(t)
/// on Re alpha, started on the cycle.
pub fn classical_phase_diffusion(vdp: &SemiclassicalVdp, n_periods: usize, dt: f64, seed: u64) -> Result<f64> {
    if !(vdp.omega > 0.0) || n_periods == 0 || !(dt > 0.0) {
        return Err(Error::InvalidParameter("phase diffusion needs a rotating cycle, n_periods >= 1, dt > 0".into()));
    }
    let period = TAU / vdp.omega;
    let steps = (period / dt).round() as usize;
    let h = period / steps as f64;
    let rot = if vdp.delta >= 0.0 { 1.0 } else { -1.0 } * vdp.omega;
    let f = |a: C64| C64::new(0.0, rot) * a + a * (0.5 * vdp.epsilon) - a * (vdp.gamma_2d * a.norm_sqr());
    let mut rng = trajectory_rng(seed, 0);
    let mut dw = [0.0];
    let mut a = C64::new(vdp.radius, 0.0);
    let mut sq = 0.0;
    let amp = vdp.gamma_1g.sqrt();
    for _ in 0..n_periods {
        let start = a.arg();
        let mut turned = 0.0;
        for _ in 0..steps {
            draw_increments(&mut rng, h, &mut dw);
            let noise = C64::new(amp * dw[0], 0.0);
            let pred = a + f(a) * h + noise;
            let next = a + (f(a) + f(pred)) * (0.5 * h) + noise;
            turned += (next / a).arg();
            a = next;
        }
        let _ = start;
        let dev = turned.abs() - TAU;
        sq += dev * dev;
    }
    Ok((sq / n_periods as f64).sqrt())
}

/// Least-squares fit of z ~ A sin(theta + phi0); returns (A, phi0, R^2).
pub fn fit_sinusoid(theta: &[f64], z: &[f64]) -> Result<(f64, f64, f64)> {
    if theta.len() != z.len() || theta.len() < 3 {
        return Err(Error::InvalidParameter("sinusoid fit needs at least 3 matching points".into()));
    }
    let (mut ss, mut cc, mut sc, mut zs, mut zc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&t, &v) in theta.iter().zip(z) {
        let (s, c) = t.sin_cos();
        ss += s * s;
        cc += c * c;
        sc += s * c;
        zs += v * s;
        zc += v * c;
    }
    let det = ss * cc - sc * sc;
    if det.abs() < 1e-300 {
        return Err(Error::InvalidParameter("degenerate phase samples".into()));
    }
    // z = a sin + b cos
    let a = (zs * cc - zc * sc) / det;
    let b = (zc * ss - zs * sc) / det;
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let ss_tot: f64 = z.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = theta
        .iter()
        .zip(z)
        .map(|(&t, &v)| (v - a * t.sin() - b * t.cos()).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 };
    Ok((a.hypot(b), b.atan2(a), r2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_state;
    use crate::operator::make_annihilation;
    use rand::SeedableRng;

    fn coherent(n: usize, beta: C64) -> Ket {
        let mut v = CVector::zeros(n);
        let mut amp = C64::new((-0.5 * beta.norm_sqr()).exp(), 0.0);
        for k in 0..n {
            if k > 0 {
                amp *= beta / (k as f64).sqrt();
            }
            v[k] = amp;
        }
        Ket::normalized(v).unwrap()
    }

    #[test]
    fn histogram_normalization_and_tv() {
        let h = Histogram::from_samples([0.1, 0.2, 3.0, 6.28, 7.0], 8).unwrap();
        assert!((h.total_mass() - 1.0).abs() < 1e-12);
        assert_eq!(compare_distributions(&h, &h).unwrap(), 0.0);
        let a = Histogram::from_counts(&[1, 0, 0, 0]).unwrap();
        let b = Histogram::from_counts(&[0, 0, 5, 0]).unwrap();
        assert!((compare_distributions(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            compare_distributions(&a, &Histogram::uniform(5)),
            Err(Error::BinningMismatch(4, 5))
        ));
    }

    #[test]
    fn fidelity_basic_cases() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = Ket::new(random_state(4, &mut rng)).unwrap();
        let b = Ket::new(random_state(4, &mut rng)).unwrap();
        let (ra, rb) = (DensityOperator::pure(&a), DensityOperator::pure(&b));
        assert!((fidelity(&ra, &ra).unwrap() - 1.0).abs() < 1e-8);
        let ov = a.overlap(&b);
        assert!((fidelity(&ra, &rb).unwrap() - ov * ov).abs() < 1e-8);
        let e0 = DensityOperator::pure(&Ket::basis(4, 0).unwrap());
        let e1 = DensityOperator::pure(&Ket::basis(4, 1).unwrap());
        assert!(fidelity(&e0, &e1).unwrap() < 1e-12);
        let mix = DensityOperator::maximally_mixed(4);
        assert!((fidelity(&ra, &mix).unwrap() - fidelity(&mix, &ra).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn vacuum_wigner_and_q() {
        let vac = DensityOperator::pure(&Ket::basis(6, 0).unwrap());
        let spec = GridSpec {
            x_min: 0.0,
            x_max: 0.0,
            p_min: 0.0,
            p_max: 0.0,
            nx: 1,
            np: 1,
        };
        assert!((wigner(&vac, &spec).unwrap().values[0][0] - 1.0 / PI).abs() < 1e-12);
        assert!((husimi_q(&vac, &spec).unwrap().values[0][0] - 1.0 / PI).abs() < 1e-12);
    }

    #[test]
    fn coherent_state_wigner_is_gaussian() {
        let beta = C64::new(1.0, -0.5);
        let rho = DensityOperator::pure(&coherent(30, beta));
        let spec = GridSpec {
            x_min: -1.0,
            x_max: 3.0,
            p_min: -2.0,
            p_max: 1.0,
            nx: 9,
            np: 7,
        };
        let g = wigner(&rho, &spec).unwrap();
        for (pv, row) in g.p.iter().zip(&g.values) {
            for (xv, w) in g.x.iter().zip(row) {
                let alpha = C64::new(*xv, *pv) * std::f64::consts::FRAC_1_SQRT_2;
                let exact = (-2.0 * (alpha - beta).norm_sqr()).exp() / PI;
                assert!((w - exact).abs() < 1e-10, "{w} vs {exact}");
            }
        }
    }

    #[test]
    fn wigner_normalized_and_fock_symmetric() {
        let rho = DensityOperator::pure(&Ket::basis(5, 2).unwrap());
        let g = wigner(&rho, &GridSpec::default_for(5)).unwrap();
        assert!((g.integral() - 1.0).abs() < 0.05);
        let spec = GridSpec {
            x_min: -3.0,
            x_max: 3.0,
            p_min: -3.0,
            p_max: 3.0,
            nx: 3,
            np: 3,
        };
        let s = wigner(&rho, &spec).unwrap();
        // (+-3, 0) and (0, +-3) share a radius
        let vals = [s.values[1][0], s.values[1][2], s.values[0][1], s.values[2][1]];
        for v in vals {
            assert!((v - vals[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn spin_husimi_of_top_state() {
        let rho = DensityOperator::pure(&Ket::basis(3, 0).unwrap());
        let g = husimi_spin(&rho, 41, 8).unwrap();
        assert!((g.values[0][0] - 3.0 / (4.0 * PI)).abs() < 1e-12);
        assert!(g.values[40][3].abs() < 1e-12);
        assert!(g.min() >= 0.0);
    }

    #[test]
    fn semiclassical_radius() {
        let cfg = ModelConfig::new("qvdp", &[("delta", 1.0), ("gamma_1g", 20.0), ("gamma_2d", 1.0)], Some(40));
        let v = semiclassical_vdp(&cfg).unwrap();
        assert!((v.radius - 10f64.sqrt()).abs() < 1e-12);
        assert!((v.amplitude - (20.0f64).sqrt()).abs() < 1e-12);
        let r = v.radius;
        assert!((0.5 * v.epsilon * r - v.gamma_2d * r.powi(3)).abs() < 1e-12);
        let bad = ModelConfig::new("qvdp", &[("gamma_1g", 0.1), ("gamma_1d", 0.2), ("gamma_2d", 1.0)], Some(10));
        assert!(matches!(semiclassical_vdp(&bad), Err(Error::NoCycle)));
    }

    #[test]
    fn classical_limit_is_nearly_deterministic() {
        let cfg = ModelConfig::new("qvdp", &[("delta", 1.0), ("gamma_1g", 1e-3), ("gamma_2d", 5e-6)], Some(3));
        let v = semiclassical_vdp(&cfg).unwrap();
        assert!((v.radius - 10.0).abs() < 1e-9);
        let d = classical_phase_diffusion(&v, 50, 0.01, 7).unwrap();
        assert!(d < 1e-2, "{d}");
    }

    #[test]
    fn sinusoid_fit_recovers_parameters() {
        let th: Vec<f64> = (0..64).map(|i| TAU * i as f64 / 64.0).collect();
        let z: Vec<f64> = th.iter().map(|t| 0.7 * (t + 0.4).sin()).collect();
        let (a, phi, r2) = fit_sinusoid(&th, &z).unwrap();
        assert!((a - 0.7).abs() < 1e-12 && (phi - 0.4).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn q_is_nonnegative_for_thermal_like_state() {
        let a = make_annihilation(6).unwrap();
        let num = a.matrix().adjoint() * a.matrix();
        let w: Vec<f64> = (0..6).map(|k| (-0.7 * k as f64).exp()).collect();
        let z: f64 = w.iter().sum();
        let rho = DensityOperator::new(CMatrix::from_fn(6, 6, |i, j| {
            if i == j {
                C64::new(w[i] / z, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }))
        .unwrap();
        let q = husimi_q(&rho, &GridSpec::default_for(6)).unwrap();
        assert!(q.min() >= 0.0);
        assert!(rho.expect(&num).re > 0.0);
    }
}
