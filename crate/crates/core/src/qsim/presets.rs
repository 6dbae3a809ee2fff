//! Named noise models, SPAM configurations and sequence lengths of the
//! reference experiments, plus a compact text syntax for noise.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{projector, Channel, GateSet, NoiseModel, SpamAssignment, SpamConfig, Unitary};
use crate::error::{validation, Error, Result};
use crate::protocols::{ProtocolId, ProtocolSpec};
use crate::qsim::Experiment;
use crate::C64;

/// Depolarizing strength giving `p = 0.9998`.
pub const DEPOLARIZING_S: f64 = 0.0002;
/// Dephasing strength paired with [`DEPHASED_OVERROTATION_EPS`].
pub const DEPHASED_OVERROTATION_S: f64 = 0.000028954;
pub const DEPHASED_OVERROTATION_EPS: f64 = 0.01;
/// Pure overrotation amount giving `p = 0.9998`.
pub const OVERROTATION_EPS: f64 = 0.011132;
/// The value as printed in the source, which yields `p = 0.9802`.
pub const OVERROTATION_EPS_PRINTED: f64 = 0.11132;

/// Sequence lengths of the standard RB comparisons.
pub const RB_LENGTHS: [u64; 10] = [1, 100, 200, 500, 1000, 2000, 5000, 10000, 20000, 50000];
/// Sequence lengths of the multi-modal example.
pub const PATHOLOGICAL_LENGTHS: [u64; 6] = [1, 2, 5, 20, 50, 100];
pub const LRB_LENGTHS: [u64; 12] = [1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 768, 1024];

/// Gate-independent or gate-dependent noise by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum NoiseSpec {
    Noiseless,
    Depolarizing { s: f64 },
    Dephasing { s: f64 },
    /// Dephasing after a per-gate transverse overrotation.
    DephasedOverrotation { s: f64, eps: f64 },
    /// Per-gate transverse overrotation (z-rotations exempt).
    Overrotation { eps: f64 },
    /// `ρ -> Tr(ρ)(p1 |ψ><ψ| + p2 I/2) + (1 - p1 - p2) ρ` with
    /// `|ψ> = exp(-0.05i (X + Y))|0>`.
    Reset { p1: f64, p2: f64 },
    /// Leakage extension of dephasing `s` after a z-rotation by `alpha_deg`.
    Dle { l1: f64, l2: f64, s: f64, alpha_deg: f64 },
}

impl NoiseSpec {
    pub fn build(&self, gateset: &GateSet) -> Result<NoiseModel> {
        let d = gateset.dim();
        let need_qubit = || if d == 2 { Ok(()) } else { validation(format!("{self} needs a qubit gate set (dimension {d})")) };
        Ok(match *self {
            NoiseSpec::Noiseless => NoiseModel::noiseless(d),
            NoiseSpec::Depolarizing { s } => NoiseModel::gate_independent(Channel::depolarizing(d, s)?),
            NoiseSpec::Dephasing { s } => {
                need_qubit()?;
                NoiseModel::gate_independent(Channel::dephasing(s)?)
            }
            NoiseSpec::DephasedOverrotation { s, eps } => {
                need_qubit()?;
                let deph = Channel::dephasing(s)?;
                NoiseModel::per_gate(gateset, |_, g| Ok(deph.after(&Channel::overrotation(g, eps, true)?)))?
            }
            NoiseSpec::Overrotation { eps } => NoiseModel::per_gate(gateset, |_, g| Channel::overrotation(g, eps, true))?,
            NoiseSpec::Reset { p1, p2 } => {
                need_qubit()?;
                NoiseModel::gate_independent(Channel::reset_mixture(p1, p2, &reset_state())?)
            }
            NoiseSpec::Dle { l1, l2, s, alpha_deg } => {
                if d != 3 {
                    return validation(format!("DLE noise needs a qubit plus one leakage level (dimension {d})"));
                }
                let base = Channel::dephasing(s)?.after(&Channel::unitary(&Unitary::rz(alpha_deg.to_radians())));
                NoiseModel::gate_independent(Channel::dle(&base, l1, l2, 1)?)
            }
        })
    }
}

/// `exp(-0.05i (X + Y))|0>`.
pub fn reset_state() -> Vec<C64> {
    let u = Unitary::rotation([1.0, 1.0, 0.0], 0.1 * 2f64.sqrt()).expect("valid rotation");
    (0..2).map(|r| u.matrix()[(r, 0)]).collect()
}

fn numbers(s: &str, n: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| Error::Validation(format!("{x:?} is not a number"))))
        .collect::<Result<_>>()?;
    if v.len() != n {
        return validation(format!("expected {n} comma-separated values, got {}", v.len()));
    }
    Ok(v)
}

/// `name[:a,b,...]`, e.g. `depolarizing:0.0002`, `overrotation`,
/// `reset:0.9,0.001` or `dle:0.001,0.0015,0.003,0.1`. Omitted values take
/// the reference constants.
impl FromStr for NoiseSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a)),
            None => (s.trim(), None),
        };
        let get = |n: usize, default: &[f64]| -> Result<Vec<f64>> { args.map_or_else(|| Ok(default.to_vec()), |a| numbers(a, n)) };
        Ok(match name {
            "noiseless" | "none" => NoiseSpec::Noiseless,
            "depolarizing" => NoiseSpec::Depolarizing { s: get(1, &[DEPOLARIZING_S])?[0] },
            "dephasing" => NoiseSpec::Dephasing { s: get(1, &[DEPHASED_OVERROTATION_S])?[0] },
            "dephased-overrotation" => {
                let v = get(2, &[DEPHASED_OVERROTATION_S, DEPHASED_OVERROTATION_EPS])?;
                NoiseSpec::DephasedOverrotation { s: v[0], eps: v[1] }
            }
            "overrotation" => NoiseSpec::Overrotation { eps: get(1, &[OVERROTATION_EPS])?[0] },
            "reset" => {
                let v = get(2, &[0.9, 0.001])?;
                NoiseSpec::Reset { p1: v[0], p2: v[1] }
            }
            "dle" => {
                let v = get(4, &[0.001, 0.0015, 0.003, 0.1])?;
                NoiseSpec::Dle { l1: v[0], l2: v[1], s: v[2], alpha_deg: v[3] }
            }
            other => return validation(format!("unknown noise model {other:?}")),
        })
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseSpec::Noiseless => write!(f, "noiseless"),
            NoiseSpec::Depolarizing { s } => write!(f, "depolarizing:{s}"),
            NoiseSpec::Dephasing { s } => write!(f, "dephasing:{s}"),
            NoiseSpec::DephasedOverrotation { s, eps } => write!(f, "dephased-overrotation:{s},{eps}"),
            NoiseSpec::Overrotation { eps } => write!(f, "overrotation:{eps}"),
            NoiseSpec::Reset { p1, p2 } => write!(f, "reset:{p1},{p2}"),
            NoiseSpec::Dle { l1, l2, s, alpha_deg } => write!(f, "dle:{l1},{l2},{s},{alpha_deg}"),
        }
    }
}

/// Reference SPAM: `ρ = |0><0|`, `E = 0.99 |0><0|`; for LRB the two
/// preparations carry `1e-4` and `5e-4` leaked population and the
/// measurement is `|0><0|`.
pub fn default_spam(protocol: &ProtocolSpec) -> Result<SpamAssignment> {
    let d = protocol.gateset().dim();
    if protocol.id() != ProtocolId::Lrb {
        return Ok(SpamAssignment::uniform(SpamConfig::basis(d, 0, 0, 0.99)?));
    }
    let leaked = [1e-4, 5e-4];
    let effect = projector(d, 0);
    let mut spam = SpamAssignment::uniform(SpamConfig::ideal(d));
    for e in protocol.experiments() {
        let Experiment::Label(l) = e else { continue };
        let i: usize = l.split(',').nth(1).and_then(|v| v.parse().ok()).unwrap_or(0);
        let w = leaked.get(i).copied().unwrap_or(0.0);
        spam = spam.with(e.clone(), SpamConfig::mixed_prep(d, i, 1.0 - w, d - 1, effect.clone())?);
    }
    Ok(spam)
}

/// Default sequence lengths for a protocol.
pub fn default_lengths(protocol: &ProtocolSpec) -> Vec<u64> {
    match protocol.id() {
        ProtocolId::Lrb => LRB_LENGTHS.to_vec(),
        ProtocolId::Unitarity => vec![1, 2, 5, 10, 20, 50, 100, 200],
        _ => RB_LENGTHS.to_vec(),
    }
}

/// `⌈1/(1 - F)⌉` for average gate fidelity `F < 1`.
pub fn max_length_heuristic(fidelity: f64) -> Result<u64> {
    if !(fidelity < 1.0 && fidelity >= 0.0) {
        return validation(format!("the 1/(1-F) heuristic needs 0 <= F < 1 (got {fidelity})"));
    }
    Ok((1.0 / (1.0 - fidelity)).ceil() as u64)
}
