//! Phase response curves: generator PRCs from unitary kicks, the direct
//! method for arbitrary Hermitian perturbations, and the real chart used to
//! parameterize pure states.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_float;
use crate::linalg::hermitian_eigen;
use crate::limit_cycle::{phase_diff, LimitCycle};
use crate::operator::{CMatrix, CVector, GeneratorBasis, Ket, Operator, C64, I};

pub const DEFAULT_EPS: f64 = 1e-4;

/// exp(-i t H) applied through a cached eigendecomposition.
#[derive(Clone, Debug)]
pub struct Kick {
    vals: Vec<f64>,
    vecs: CMatrix,
}

impl Kick {
    pub fn new(h: &Operator) -> Result<Self> {
        let err = h.hermiticity_error();
        if err >= crate::operator::HERMITIAN_TOL {
            return Err(Error::NonHermitian(err));
        }
        let (vals, vecs) = hermitian_eigen(h.matrix());
        Ok(Kick { vals, vecs })
    }

    pub fn apply(&self, psi: &CVector, t: f64) -> CVector {
        let mut c = self.vecs.ad_mul(psi);
        for (z, &v) in c.iter_mut().zip(&self.vals) {
            *z *= C64::from_polar(1.0, -t * v);
        }
        &self.vecs * c
    }
}

/// How a full generator table is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrcMethod {
    /// One pair of unitary kicks per generator.
    Generator,
    /// Isochron gradient along the 2N - 2 real directions transverse to
    /// norm and global phase, contracted with -i E_l psi0.
    Chart,
}

/// Finite-difference settings for PRC evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrcOptions {
    pub eps: f64,
    pub method: PrcMethod,
    /// Combine eps and eps/2 central differences to cancel the O(eps^2) term.
    pub richardson: bool,
    pub isochron_periods: Option<usize>,
}

impl Default for PrcOptions {
    fn default() -> Self {
        PrcOptions {
            eps: DEFAULT_EPS,
            method: PrcMethod::Chart,
            richardson: false,
            isochron_periods: None,
        }
    }
}

impl PrcOptions {
    pub fn with_eps(eps: f64) -> Self {
        PrcOptions {
            eps,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(1e-6..=1e-2).contains(&self.eps) {
            return Err(Error::InvalidParameter(format!(
                "PRC step eps must lie in [1e-6, 1e-2], got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

fn central_difference(lc: &LimitCycle, kick: &Kick, psi0: &CVector, eps: f64, periods: Option<usize>) -> Result<f64> {
    let plus = lc.isochron_phase_vec(&kick.apply(psi0, eps), periods)?;
    let minus = lc.isochron_phase_vec(&kick.apply(psi0, -eps), periods)?;
    Ok(phase_diff(plus, minus) / (2.0 * eps))
}

fn kicked_response(lc: &LimitCycle, kick: &Kick, theta: f64, opts: &PrcOptions) -> Result<f64> {
    opts.validate()?;
    let psi0 = lc.state_at(theta).into_inner();
    let z = central_difference(lc, kick, &psi0, opts.eps, opts.isochron_periods)?;
    if !opts.richardson {
        return Ok(z);
    }
    let half = central_difference(lc, kick, &psi0, 0.5 * opts.eps, opts.isochron_periods)?;
    Ok((4.0 * half - z) / 3.0)
}

/// Orthonormal basis (complex) of the orthogonal complement of psi; with
/// their i-multiples these span the 2N - 2 real transverse directions.
pub fn transverse_basis(psi: &CVector) -> Vec<CVector> {
    let n = psi.len();
    let mut basis: Vec<CVector> = vec![psi / C64::new(psi.norm(), 0.0)];
    for j in 0..n {
        let mut v = CVector::zeros(n);
        v[j] = C64::new(1.0, 0.0);
        for _ in 0..2 {
            for b in &basis {
                let c = b.dotc(&v);
                v -= b * c;
            }
        }
        let nrm = v.norm();
        if nrm > 1e-8 && basis.len() < n {
            basis.push(v / C64::new(nrm, 0.0));
        }
    }
    basis.remove(0);
    basis
}

fn isochron_difference(lc: &LimitCycle, psi0: &CVector, dir: &CVector, eps: f64, periods: Option<usize>) -> Result<f64> {
    let step = dir * C64::new(eps, 0.0);
    let plus = lc.isochron_phase_vec(&(psi0 + &step), periods)?;
    let minus = lc.isochron_phase_vec(&(psi0 - &step), periods)?;
    Ok(phase_diff(plus, minus) / (2.0 * eps))
}

/// Gradient w of the isochron phase at psi0(theta): for a tangent vector v,
/// dTheta = Re<w|v>. Returns (psi0, w).
pub fn phase_gradient(lc: &LimitCycle, theta: f64, opts: &PrcOptions) -> Result<(CVector, CVector)> {
    opts.validate()?;
    let psi0 = lc.state_at(theta).into_inner();
    let mut w = CVector::zeros(psi0.len());
    for u in transverse_basis(&psi0) {
        let iu = &u * I;
        let mut parts = [0.0; 2];
        for (slot, dir) in parts.iter_mut().zip([&u, &iu]) {
            let z = isochron_difference(lc, &psi0, dir, opts.eps, opts.isochron_periods)?;
            *slot = if opts.richardson {
                let half = isochron_difference(lc, &psi0, dir, 0.5 * opts.eps, opts.isochron_periods)?;
                (4.0 * half - z) / 3.0
            } else {
                z
            };
        }
        w += u * C64::new(parts[0], parts[1]);
    }
    Ok((psi0, w))
}

/// Z_l(theta) = d Theta(exp(-i eps E_l) psi0(theta)) / d eps at eps = 0.
pub fn prc_generator(lc: &LimitCycle, basis: &GeneratorBasis, l: usize, theta: f64, opts: &PrcOptions) -> Result<f64> {
    check_basis(lc, basis)?;
    let e = basis.get(l).ok_or_else(|| {
        Error::InvalidParameter(format!("generator index {l} out of range (basis has {})", basis.len()))
    })?;
    kicked_response(lc, &Kick::new(e)?, theta, opts)
}

/// Z_p(theta) for an arbitrary Hermitian perturbation H_p.
pub fn prc_direct(lc: &LimitCycle, hp: &Operator, theta: f64, opts: &PrcOptions) -> Result<f64> {
    if hp.dim() != lc.model().n {
        return Err(Error::DimensionMismatch {
            expected: lc.model().n,
            found: hp.dim(),
        });
    }
    kicked_response(lc, &Kick::new(hp)?, theta, opts)
}

fn check_basis(lc: &LimitCycle, basis: &GeneratorBasis) -> Result<()> {
    if basis.dim() != lc.model().n {
        return Err(Error::DimensionMismatch {
            expected: lc.model().n,
            found: basis.dim(),
        });
    }
    Ok(())
}

fn theta_grid(n_theta: usize) -> Vec<f64> {
    (0..n_theta).map(|i| TAU * i as f64 / n_theta as f64).collect()
}

/// Direct-method PRC of one perturbation on a uniform phase grid.
pub fn prc_direct_curve(lc: &LimitCycle, hp: &Operator, n_theta: usize, opts: &PrcOptions) -> Result<(Vec<f64>, Vec<f64>)> {
    opts.validate()?;
    let kick = Kick::new(hp)?;
    let grid = theta_grid(n_theta);
    let z = grid
        .par_iter()
        .map(|&th| {
            kicked_response(lc, &kick, th, opts).map_err(|e| Error::PrcEvaluation {
                theta: th,
                index: 0,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((grid, z))
}

/// Z_l(theta_i) for every grid phase and generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PRCTable {
    pub theta: Vec<f64>,
    /// Row-major: z[i][l].
    pub z: Vec<Vec<f64>>,
    pub eps: f64,
}

pub fn prc_table(lc: &LimitCycle, basis: &GeneratorBasis, n_theta: usize, opts: &PrcOptions) -> Result<PRCTable> {
    check_basis(lc, basis)?;
    opts.validate()?;
    if n_theta < 64 {
        return Err(Error::InvalidParameter(format!("n_theta must be at least 64, got {n_theta}")));
    }
    let grid = theta_grid(n_theta);
    let m = basis.len();
    let flat = match opts.method {
        PrcMethod::Generator => {
            let kicks = basis.generators().iter().map(Kick::new).collect::<Result<Vec<_>>>()?;
            (0..n_theta * m)
                .into_par_iter()
                .map(|idx| {
                    let (i, l) = (idx / m, idx % m);
                    kicked_response(lc, &kicks[l], grid[i], opts).map_err(|e| Error::PrcEvaluation {
                        theta: grid[i],
                        index: l,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        PrcMethod::Chart => {
            let rows = grid
                .par_iter()
                .map(|&th| {
                    let (psi0, w) = phase_gradient(lc, th, opts).map_err(|e| Error::PrcEvaluation {
                        theta: th,
                        index: 0,
                        source: Box::new(e),
                    })?;
                    Ok(basis
                        .generators()
                        .iter()
                        .map(|e| w.dotc(&(e.matrix() * &psi0 * (-I))).re)
                        .collect::<Vec<f64>>())
                })
                .collect::<Result<Vec<_>>>()?;
            rows.concat()
        }
    };
    Ok(PRCTable {
        theta: grid,
        z: flat.chunks(m).map(|c| c.to_vec()).collect(),
        eps: opts.eps,
    })
}

#[derive(Deserialize)]
struct PrcRow {
    theta: f64,
    l: usize,
    #[serde(rename = "Z")]
    z: f64,
}

impl PRCTable {
    pub fn n_theta(&self) -> usize {
        self.theta.len()
    }

    pub fn n_generators(&self) -> usize {
        self.z.first().map_or(0, |r| r.len())
    }

    pub fn column(&self, l: usize) -> Vec<f64> {
        self.z.iter().map(|r| r[l]).collect()
    }

    /// sum_l f_l Z_l(theta_i) for each grid phase.
    pub fn combine(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.n_generators() {
            return Err(Error::DimensionMismatch {
                expected: self.n_generators(),
                found: f.len(),
            });
        }
        Ok(self
            .z
            .iter()
            .map(|r| r.iter().zip(f).map(|(z, c)| z * c).sum())
            .collect())
    }

    /// CSV with columns theta, l, Z.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["theta", "l", "Z"])?;
        for (i, row) in self.z.iter().enumerate() {
            let th = fmt_float(self.theta[i]);
            for (l, &z) in row.iter().enumerate() {
                out.write_record([th.as_str(), &l.to_string(), &fmt_float(z)])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, eps: f64) -> Result<Self> {
        let mut rows: Vec<PrcRow> = Vec::new();
        for rec in csv::Reader::from_reader(r).deserialize() {
            rows.push(rec?);
        }
        let m = rows.iter().map(|r| r.l + 1).max().unwrap_or(0);
        if m == 0 || rows.len() % m != 0 {
            return Err(Error::Parse(format!("PRC table has {} rows for {m} generators", rows.len())));
        }
        let mut theta = Vec::with_capacity(rows.len() / m);
        let mut z = Vec::with_capacity(rows.len() / m);
        for chunk in rows.chunks(m) {
            if chunk.iter().enumerate().any(|(l, r)| r.l != l || r.theta != chunk[0].theta) {
                return Err(Error::Parse("PRC rows must be grouped by theta with l = 0..M-1".into()));
            }
            theta.push(chunk[0].theta);
            z.push(chunk.iter().map(|r| r.z).collect());
        }
        Ok(PRCTable { theta, z, eps })
    }
}

/// (r_1..r_{N-1}, phi_1..phi_{N-1}): moduli and phases relative to the last
/// component. Phases of zero amplitudes are set to 0.
pub fn project_real(psi: &Ket) -> Result<Vec<f64>> {
    let v = psi.amplitudes();
    let n = v.len();
    let reference = v[n - 1];
    if reference.norm() < 1e-12 {
        return Err(Error::GaugeReference(reference.norm()));
    }
    let arg_ref = reference.arg();
    let mut out = vec![0.0; 2 * (n - 1)];
    for i in 0..n - 1 {
        let r = v[i].norm();
        out[i] = r;
        if r > 0.0 {
            out[n - 1 + i] = (v[i].arg() - arg_ref).rem_euclid(TAU);
        }
    }
    Ok(out)
}

/// Inverse of [`project_real`] with the last amplitude real and positive.
pub fn embed_real(x: &[f64]) -> Result<Ket> {
    if x.is_empty() || x.len() % 2 != 0 {
        return Err(Error::InvalidParameter(format!("chart vector length {} must be even and positive", x.len())));
    }
    let m = x.len() / 2;
    let s: f64 = x[..m].iter().map(|r| r * r).sum();
    if !(s <= 1.0 + 1e-12) || x[..m].iter().any(|r| *r < 0.0) {
        return Err(Error::InvalidParameter("chart moduli must be nonnegative with sum of squares at most 1".into()));
    }
    let last = (1.0 - s).max(0.0).sqrt();
    if last < 1e-12 {
        return Err(Error::GaugeReference(last));
    }
    let mut v = CVector::zeros(m + 1);
    for i in 0..m {
        v[i] = C64::from_polar(x[i], x[m + i]);
    }
    v[m] = C64::new(last, 0.0);
    Ket::normalized(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit_cycle::{find_limit_cycle, CycleOptions};
    use crate::linalg::{random_hermitian, random_state, unitary_exp};
    use crate::models::{LindbladModel, ModelConfig};
    use rand::SeedableRng;

    fn qubit_cycle() -> LimitCycle {
        let model = LindbladModel::from_config(&ModelConfig::preset("qubit").unwrap()).unwrap();
        let psi = Ket::normalized(CVector::from_vec(vec![C64::new(1.0, 0.0); 2])).unwrap();
        find_limit_cycle(&model, &psi, &CycleOptions::with_grid(128)).unwrap()
    }

    #[test]
    fn kick_matches_matrix_exponential() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let h = random_hermitian(4, &mut rng);
        let psi = random_state(4, &mut rng);
        let k = Kick::new(&Operator::hermitian(h.clone()).unwrap()).unwrap();
        assert!((k.apply(&psi, 0.3) - unitary_exp(&h, 0.3) * &psi).norm() < 1e-13);
    }

    #[test]
    fn chart_round_trip_and_gauge_invariance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for n in 2..6 {
            let psi = Ket::new(random_state(n, &mut rng)).unwrap();
            let x = project_real(&psi).unwrap();
            assert_eq!(x.len(), 2 * n - 2);
            let rotated = Ket::new(psi.amplitudes() * C64::from_polar(1.0, 1.3)).unwrap();
            let y = project_real(&rotated).unwrap();
            for (a, b) in x.iter().zip(&y) {
                let d = (a - b).abs();
                assert!(d < 1e-12 || (d - TAU).abs() < 1e-12);
            }
            let back = embed_real(&x).unwrap();
            assert!((back.overlap(&psi) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn chart_degenerate_and_reference_errors() {
        let top = Ket::basis(3, 2).unwrap();
        assert_eq!(project_real(&top).unwrap(), vec![0.0; 4]);
        assert!(matches!(project_real(&Ket::basis(3, 0).unwrap()), Err(Error::GaugeReference(_))));
    }

    #[test]
    fn zero_perturbation_and_identity_give_zero() {
        let lc = qubit_cycle();
        let opts = PrcOptions::default();
        assert_eq!(prc_direct(&lc, &Operator::zeros(2).unwrap(), 0.7, &opts).unwrap(), 0.0);
        let z = prc_direct(&lc, &Operator::identity(2).unwrap(), 0.7, &opts).unwrap();
        assert!(z.abs() < 1e-6, "{z}");
    }

    #[test]
    fn direct_is_linear_in_generators() {
        let lc = qubit_cycle();
        let basis = GeneratorBasis::new(2).unwrap();
        let f = [0.3, -0.7, 0.5];
        let hp = basis.reconstruct(&f).unwrap();
        let opts = PrcOptions::default();
        for &th in &[0.0, 1.0, 4.0] {
            let direct = prc_direct(&lc, &hp, th, &opts).unwrap();
            let sum: f64 = (0..3).map(|l| f[l] * prc_generator(&lc, &basis, l, th, &opts).unwrap()).sum();
            assert!((direct - sum).abs() < 1e-4, "{direct} vs {sum}");
        }
    }

    #[test]
    fn chart_table_matches_generator_kicks() {
        let model = LindbladModel::from_config(&ModelConfig::preset("bitflip").unwrap()).unwrap();
        let psi = Ket::normalized(CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.5, 0.2)])).unwrap();
        let lc = find_limit_cycle(&model, &psi, &CycleOptions::with_grid(128)).unwrap();
        let basis = GeneratorBasis::new(2).unwrap();
        let chart = prc_table(&lc, &basis, 64, &PrcOptions::default()).unwrap();
        let opts = PrcOptions {
            method: PrcMethod::Generator,
            ..Default::default()
        };
        for i in [0, 21, 50] {
            for l in 0..3 {
                let z = prc_generator(&lc, &basis, l, chart.theta[i], &opts).unwrap();
                assert!((z - chart.z[i][l]).abs() < 1e-4, "{z} vs {}", chart.z[i][l]);
            }
        }
    }

    #[test]
    fn rejects_bad_eps() {
        let lc = qubit_cycle();
        let basis = GeneratorBasis::new(2).unwrap();
        assert!(prc_generator(&lc, &basis, 0, 0.0, &PrcOptions::with_eps(0.5)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = PRCTable {
            theta: vec![0.0, 0.1 + 1e-17, 0.2],
            z: vec![vec![1.0, -2.5], vec![0.125, 1.0 / 3.0], vec![1e-300, 7.0]],
            eps: 1e-4,
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("theta,l,Z\n"));
        assert_eq!(PRCTable::read_csv(&buf[..], 1e-4).unwrap(), t);
    }
}
