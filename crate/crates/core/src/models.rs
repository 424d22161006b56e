//! Catalog of Lindblad models.
//!
//! Rates are folded into the jump operators (`L_k = sqrt(gamma) O_k`), and
//! zero-rate channels are dropped unless every channel of a model has zero
//! rate, in which case they are kept so the model still has M >= 1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{make_annihilation, make_spin, CMatrix, Operator, C64, I, ONE, ZERO};

/// Names accepted by [`LindbladModel::from_config`].
pub const CATALOG: &[(&str, &str)] = &[
    ("qvdp", "quantum van der Pol oscillator in a rotating frame (truncated Fock space)"),
    ("qubit", "two-level system with pumping and damping"),
    ("spin1", "spin-1 oscillator with thermal pumping and damping"),
    ("spin32", "spin-3/2 oscillator"),
    ("bitflip", "qubit with bit-flip noise"),
    ("lambda", "three-level Lambda atom"),
];

/// JSON model config: `{"model": name, "params": {...}, "n_levels": N}`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub model: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_levels: Option<usize>,
}

/// Names accepted by [`ModelConfig::preset`].
pub const PRESETS: [&str; 10] = [
    "vdp_ring", "vdp_squeezed", "vdp_cluster", "vdp_deep", "vdp_classical", "qubit", "spin1_thermal", "spin32", "bitflip", "lambda",
];

impl ModelConfig {
    pub fn new(model: &str, params: &[(&str, f64)], n_levels: Option<usize>) -> Self {
        ModelConfig {
            model: model.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            n_levels,
        }
    }

    fn get(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }

    fn require(&self, key: &str) -> Result<f64> {
        self.params.get(key).copied().ok_or_else(|| {
            Error::InvalidParameter(format!("model '{}' requires '{key}'", self.model))
        })
    }

    /// Reference parameter sets, all in units of
    /// the two-photon loss rate (van der Pol) or as stated for spins.
    pub fn preset(name: &str) -> Result<Self> {
        let vdp = |g1g: f64, eta: f64, n: usize| {
            ModelConfig::new(
                "qvdp",
                &[
                    ("delta", 1.0),
                    ("omega", 0.0),
                    ("eta", eta),
                    ("lambda", 0.0),
                    ("gamma_1g", g1g),
                    ("gamma_1d", 0.0),
                    ("gamma_2d", 1.0),
                ],
                Some(n),
            )
        };
        Ok(match name {
            "vdp_ring" => vdp(0.1, 0.0, 6),
            "vdp_squeezed" => vdp(0.1, -0.2, 6),
            "vdp_cluster" => vdp(0.5, 0.0, 6),
            "vdp_deep" => vdp(0.1, 0.0, 4),
            "vdp_classical" => ModelConfig::new(
                "qvdp",
                &[("delta", 1.0), ("gamma_1g", 0.1), ("gamma_1d", 0.0), ("gamma_2d", 0.005)],
                Some(40),
            ),
            "qubit" => ModelConfig::new(
                "qubit",
                &[("delta", 3.0), ("gamma_plus", 0.1), ("gamma_minus", 0.05)],
                None,
            ),
            "spin1_thermal" => ModelConfig::new(
                "spin1",
                &[
                    ("delta", 2.0),
                    ("gamma_plus", 0.01),
                    ("gamma_minus", 0.005),
                    ("n_plus", 0.2),
                    ("n_minus", 0.3),
                ],
                None,
            ),
            "spin32" => ModelConfig::new(
                "spin32",
                &[
                    ("delta", 2.0 * std::f64::consts::PI),
                    ("gamma_plus", 1.0),
                    ("gamma_minus", 0.1),
                ],
                None,
            ),
            "bitflip" => ModelConfig::new("bitflip", &[("omega", 1.0), ("gamma", 0.1)], None),
            "lambda" => ModelConfig::new(
                "lambda",
                &[
                    ("omega_0", 0.0),
                    ("omega_1", 3.0),
                    ("omega_2", 5.0),
                    ("gamma_1", 1.0),
                    ("gamma_2", 0.1),
                    ("phi", std::f64::consts::FRAC_PI_4),
                    ("eta", 0.0),
                    ("alpha", std::f64::consts::FRAC_PI_3),
                ],
                None,
            ),
            other => return Err(Error::UnknownModel(other.to_string())),
        })
    }
}

/// H plus jump operators, with the parameters that produced them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LindbladModel {
    pub name: String,
    pub n: usize,
    pub hamiltonian: Operator,
    pub jumps: Vec<Operator>,
    /// Rate prefactor folded into each jump operator.
    pub rates: Vec<f64>,
    pub config: ModelConfig,
}

fn check_rate(name: &str, v: f64) -> Result<f64> {
    if !(v >= 0.0) || !v.is_finite() {
        Err(Error::InvalidParameter(format!(
            "rate '{name}' must be finite and nonnegative, got {v}"
        )))
    } else {
        Ok(v)
    }
}

impl LindbladModel {
    pub(crate) fn assemble(
        name: &str,
        hamiltonian: CMatrix,
        channels: Vec<(f64, CMatrix)>,
        config: ModelConfig,
    ) -> Result<Self> {
        let hamiltonian = Operator::hermitian(hamiltonian)?;
        let n = hamiltonian.dim();
        let all_zero = channels.iter().all(|(r, _)| *r == 0.0);
        let mut jumps = Vec::new();
        let mut rates = Vec::new();
        for (rate, op) in channels {
            if rate == 0.0 && !all_zero {
                continue;
            }
            if op.nrows() != n || op.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: op.nrows(),
                });
            }
            jumps.push(Operator::new(op * C64::new(rate.sqrt(), 0.0))?.retag());
            rates.push(rate);
        }
        Ok(LindbladModel {
            name: name.to_string(),
            n,
            hamiltonian,
            jumps,
            rates,
            config,
        })
    }

    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        match cfg.model.as_str() {
            "qvdp" => build_qvdp(
                &QvdpParams {
                    delta: cfg.get("delta", 1.0),
                    omega: cfg.get("omega", 0.0),
                    eta: cfg.get("eta", 0.0),
                    lambda: cfg.get("lambda", 0.0),
                    gamma_1g: cfg.require("gamma_1g")?,
                    gamma_1d: cfg.get("gamma_1d", 0.0),
                    gamma_2d: cfg.get("gamma_2d", 1.0),
                },
                cfg.n_levels.unwrap_or(6),
            ),
            "qubit" => build_qubit(
                cfg.require("delta")?,
                cfg.require("gamma_plus")?,
                cfg.require("gamma_minus")?,
            ),
            "spin1" => build_spin1(
                cfg.require("delta")?,
                cfg.require("gamma_plus")?,
                cfg.require("gamma_minus")?,
                cfg.get("n_plus", 0.0),
                cfg.get("n_minus", 0.0),
            ),
            "spin32" => build_spin32(
                cfg.require("delta")?,
                cfg.require("gamma_plus")?,
                cfg.require("gamma_minus")?,
            ),
            "bitflip" => build_bitflip_qubit(cfg.require("omega")?, cfg.require("gamma")?),
            "lambda" => build_lambda_atom(&LambdaParams {
                omegas: [
                    cfg.get("omega_0", 0.0),
                    cfg.require("omega_1")?,
                    cfg.require("omega_2")?,
                ],
                gamma_1: cfg.require("gamma_1")?,
                gamma_2: cfg.require("gamma_2")?,
                phi: cfg.get("phi", 0.0),
                eta: cfg.get("eta", 0.0),
                alpha: cfg.get("alpha", 0.0),
            }),
            other => Err(Error::UnknownModel(other.to_string())),
        }
    }

    pub fn num_channels(&self) -> usize {
        self.jumps.len()
    }

    /// Largest rate prefactor among the channels.
    pub fn max_rate(&self) -> f64 {
        self.rates.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest nonzero rate prefactor.
    pub fn min_rate(&self) -> f64 {
        self.rates
            .iter()
            .copied()
            .filter(|&r| r > 0.0)
            .fold(f64::INFINITY, f64::min)
    }

    /// Same model with `H -> H + eps * Hp`.
    pub fn with_perturbation(&self, hp: &Operator, eps: f64) -> Result<Self> {
        if hp.dim() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: hp.dim(),
            });
        }
        let err = hp.hermiticity_error();
        if err >= crate::operator::HERMITIAN_TOL {
            return Err(Error::NonHermitian(err));
        }
        let mut out = self.clone();
        out.hamiltonian = Operator::hermitian(self.hamiltonian.matrix() + hp.matrix() * C64::new(eps, 0.0))?;
        Ok(out)
    }
}

/// Parameters of the rotating-frame quantum van der Pol oscillator.
#[derive(Clone, Copy, Debug)]
pub struct QvdpParams {
    pub delta: f64,
    pub omega: f64,
    pub eta: f64,
    pub lambda: f64,
    pub gamma_1g: f64,
    pub gamma_1d: f64,
    pub gamma_2d: f64,
}

/// H = -delta a^dag a + i omega (a^dag - a) + i eta (a^2 e^{-i lambda} - a^dag^2 e^{i lambda}),
/// jumps sqrt(g1g) a^dag, sqrt(g1d) a, sqrt(g2d) a^2.
pub fn build_qvdp(p: &QvdpParams, n_levels: usize) -> Result<LindbladModel> {
    if n_levels < 3 {
        return Err(Error::InvalidParameter(format!(
            "van der Pol model needs n_levels >= 3, got {n_levels}"
        )));
    }
    let g1g = check_rate("gamma_1g", p.gamma_1g)?;
    let g1d = check_rate("gamma_1d", p.gamma_1d)?;
    let g2d = check_rate("gamma_2d", p.gamma_2d)?;
    for (k, v) in [("delta", p.delta), ("omega", p.omega), ("eta", p.eta), ("lambda", p.lambda)] {
        if !v.is_finite() {
            return Err(Error::InvalidParameter(format!("'{k}' must be finite")));
        }
    }
    let a = make_annihilation(n_levels)?.into_matrix();
    let ad = a.adjoint();
    let a2 = &a * &a;
    let ad2 = &ad * &ad;
    let num = &ad * &a;
    let sq = C64::from_polar(1.0, -p.lambda);
    let h = &num * C64::new(-p.delta, 0.0)
        + (&ad - &a) * (I * p.omega)
        + (&a2 * sq - &ad2 * sq.conj()) * (I * p.eta);
    let config = ModelConfig::new(
        "qvdp",
        &[
            ("delta", p.delta),
            ("omega", p.omega),
            ("eta", p.eta),
            ("lambda", p.lambda),
            ("gamma_1g", p.gamma_1g),
            ("gamma_1d", p.gamma_1d),
            ("gamma_2d", p.gamma_2d),
        ],
        Some(n_levels),
    );
    LindbladModel::assemble(
        "qvdp",
        h,
        vec![(g1g, ad), (g1d, a), (g2d, a2)],
        config,
    )
}

/// H = delta Sz, jumps sqrt(g+) S+, sqrt(g-) S- (spin-1/2).
pub fn build_qubit(delta: f64, gamma_plus: f64, gamma_minus: f64) -> Result<LindbladModel> {
    let gp = check_rate("gamma_plus", gamma_plus)?;
    let gm = check_rate("gamma_minus", gamma_minus)?;
    let s = make_spin(1)?;
    let config = ModelConfig::new(
        "qubit",
        &[("delta", delta), ("gamma_plus", gamma_plus), ("gamma_minus", gamma_minus)],
        None,
    );
    LindbladModel::assemble(
        "qubit",
        s.sz.matrix() * C64::new(delta, 0.0),
        vec![(gp, s.sp.into_matrix()), (gm, s.sm.into_matrix())],
        config,
    )
}

/// Spin-1 with thermal channels: g+(1+n+) D[S+Sz], g-(1+n-) D[S-Sz],
/// g+ n+ D[Sz S-], g- n- D[Sz S+].
pub fn build_spin1(
    delta: f64,
    gamma_plus: f64,
    gamma_minus: f64,
    n_plus: f64,
    n_minus: f64,
) -> Result<LindbladModel> {
    let gp = check_rate("gamma_plus", gamma_plus)?;
    let gm = check_rate("gamma_minus", gamma_minus)?;
    let np = check_rate("n_plus", n_plus)?;
    let nm = check_rate("n_minus", n_minus)?;
    let s = make_spin(2)?;
    let (sp, sm, sz) = (s.sp.matrix(), s.sm.matrix(), s.sz.matrix());
    let config = ModelConfig::new(
        "spin1",
        &[
            ("delta", delta),
            ("gamma_plus", gamma_plus),
            ("gamma_minus", gamma_minus),
            ("n_plus", n_plus),
            ("n_minus", n_minus),
        ],
        None,
    );
    LindbladModel::assemble(
        "spin1",
        sz * C64::new(delta, 0.0),
        vec![
            (gp * (1.0 + np), sp * sz),
            (gm * (1.0 + nm), sm * sz),
            (gp * np, sz * sm),
            (gm * nm, sz * sp),
        ],
        config,
    )
}

/// Spin-3/2: H = delta Sz, jumps sqrt(g+) S+Sz, sqrt(g-) S-Sz.
pub fn build_spin32(delta: f64, gamma_plus: f64, gamma_minus: f64) -> Result<LindbladModel> {
    let gp = check_rate("gamma_plus", gamma_plus)?;
    let gm = check_rate("gamma_minus", gamma_minus)?;
    let s = make_spin(3)?;
    let (sp, sm, sz) = (s.sp.matrix(), s.sm.matrix(), s.sz.matrix());
    let config = ModelConfig::new(
        "spin32",
        &[("delta", delta), ("gamma_plus", gamma_plus), ("gamma_minus", gamma_minus)],
        None,
    );
    LindbladModel::assemble(
        "spin32",
        sz * C64::new(delta, 0.0),
        vec![(gp, sp * sz), (gm, sm * sz)],
        config,
    )
}

pub fn pauli() -> (CMatrix, CMatrix, CMatrix) {
    let sx = CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]);
    let sy = CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]);
    let sz = CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]);
    (sx, sy, sz)
}

/// H = omega sigma_z, single jump sqrt(gamma) sigma_x.
pub fn build_bitflip_qubit(omega: f64, gamma: f64) -> Result<LindbladModel> {
    let g = check_rate("gamma", gamma)?;
    let (sx, _, sz) = pauli();
    let config = ModelConfig::new("bitflip", &[("omega", omega), ("gamma", gamma)], None);
    LindbladModel::assemble("bitflip", sz * C64::new(omega, 0.0), vec![(g, sx)], config)
}

#[derive(Clone, Copy, Debug)]
pub struct LambdaParams {
    pub omegas: [f64; 3],
    pub gamma_1: f64,
    pub gamma_2: f64,
    pub phi: f64,
    pub eta: f64,
    pub alpha: f64,
}

/// H = sum_i w_i |i><i|,
/// L1 = sqrt(g1)(cos phi |0><2| + e^{i eta} sin phi |1><2|),
/// L2 = sqrt(g2)(cos alpha |0><1| + sin alpha |1><0|).
pub fn build_lambda_atom(p: &LambdaParams) -> Result<LindbladModel> {
    let g1 = check_rate("gamma_1", p.gamma_1)?;
    let g2 = check_rate("gamma_2", p.gamma_2)?;
    let mut h = CMatrix::zeros(3, 3);
    for (i, w) in p.omegas.iter().enumerate() {
        h[(i, i)] = C64::new(*w, 0.0);
    }
    let mut l1 = CMatrix::zeros(3, 3);
    l1[(0, 2)] = C64::new(p.phi.cos(), 0.0);
    l1[(1, 2)] = C64::from_polar(p.phi.sin(), p.eta);
    let mut l2 = CMatrix::zeros(3, 3);
    l2[(0, 1)] = C64::new(p.alpha.cos(), 0.0);
    l2[(1, 0)] = C64::new(p.alpha.sin(), 0.0);
    let config = ModelConfig::new(
        "lambda",
        &[
            ("omega_0", p.omegas[0]),
            ("omega_1", p.omegas[1]),
            ("omega_2", p.omegas[2]),
            ("gamma_1", p.gamma_1),
            ("gamma_2", p.gamma_2),
            ("phi", p.phi),
            ("eta", p.eta),
            ("alpha", p.alpha),
        ],
        None,
    );
    LindbladModel::assemble("lambda", h, vec![(g1, l1), (g2, l2)], config)
}
