//! RB+ protocols: experiment types, allowable sequences and tying functions.

mod leakage;
pub mod tying;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::qsim::{Experiment, GateSet, Unitary};

pub use leakage::leakage_seepage;
pub use tying::{
    lambda1, lambda2, lrb_fidelity, lrb_mu1_from_fidelity, tying_dihedral, tying_irb, tying_lrb, tying_rb,
    tying_unitarity, LeakageLimit, LrbGrad, LrbTerms, LEAKAGE_EPS,
};

/// Protocol identifiers accepted on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolId {
    Rb,
    Irb,
    Unitarity,
    Dihedral,
    Lrb,
}

impl ProtocolId {
    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolId::Rb => "rb",
            ProtocolId::Irb => "irb",
            ProtocolId::Unitarity => "unitarity",
            ProtocolId::Dihedral => "dihedral",
            ProtocolId::Lrb => "lrb",
        }
    }
}

impl fmt::Display for ProtocolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProtocolId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rb" => Ok(ProtocolId::Rb),
            "irb" => Ok(ProtocolId::Irb),
            "unitarity" => Ok(ProtocolId::Unitarity),
            "dihedral" => Ok(ProtocolId::Dihedral),
            "lrb" => Ok(ProtocolId::Lrb),
            other => validation(format!("unknown protocol id {other:?}")),
        }
    }
}

/// Support of one tying parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamDomain {
    /// `x ∈ [0, 1]`.
    Unit,
    /// `x + x[base] ∈ [0, 1]`, i.e. `x ∈ [-x[base], 1 - x[base]]`.
    OffsetOf(usize),
    /// Leakage rate: the pair at `(first, first + 1)` lies on the
    /// 3-simplex `L1, L2 >= 0`, `L1 + L2 <= 1`.
    Leakage { first: usize },
}

/// How LRB treats the leaked-population fractions `p_i`.
#[derive(Clone, Debug, PartialEq)]
pub enum LeakedPopulation {
    /// Known from SPAM characterization.
    Fixed(Vec<f64>),
    /// Free tying parameters in `[0, 1]`.
    Free,
}

#[derive(Clone, Debug)]
enum Kind {
    Rb,
    Irb { gate: usize },
    Unitarity,
    Dihedral { x: usize, z: usize },
    Lrb { d1: usize, lambdas: usize, inits: usize, pops: LeakedPopulation },
}

/// A protocol: gate set, experiment types, sequence sampler, tying function.
#[derive(Clone, Debug)]
pub struct ProtocolSpec {
    kind: Kind,
    gateset: Arc<GateSet>,
    experiments: Vec<Experiment>,
    names: Vec<String>,
    domains: Vec<ParamDomain>,
}

impl ProtocolSpec {
    /// Standard RB, parameters `(p, A, B)`, single experiment `e = 0`.
    pub fn rb(gateset: Arc<GateSet>) -> Self {
        Self {
            kind: Kind::Rb,
            gateset,
            experiments: vec![Experiment::Index(0)],
            names: names(&["p", "A", "B"]),
            domains: vec![ParamDomain::Unit; 3],
        }
    }

    /// Interleaved RB with the 0-based gate index `gate` interleaved.
    /// Experiments are `0` (reference) and `gate + 1`; parameters
    /// `(p0, p_r, A, B)`.
    pub fn irb(gateset: Arc<GateSet>, gate: usize) -> Result<Self> {
        if gate >= gateset.len() {
            return validation("interleaved gate index out of range");
        }
        Ok(Self {
            kind: Kind::Irb { gate },
            gateset,
            experiments: vec![Experiment::Index(0), Experiment::Index(gate as u32 + 1)],
            names: names(&["p0", "p_r", "A", "B"]),
            domains: vec![ParamDomain::Unit; 4],
        })
    }

    /// Unitarity benchmarking, second-moment parameters `(u, A, B)`.
    pub fn unitarity(gateset: Arc<GateSet>) -> Self {
        Self {
            kind: Kind::Unitarity,
            gateset,
            experiments: vec![Experiment::Index(0)],
            names: names(&["u", "A", "B"]),
            domains: vec![ParamDomain::Unit, ParamDomain::Unit, ParamDomain::OffsetOf(1)],
        }
    }

    /// Dihedral benchmarking on a gate set containing `X` and `Z`.
    /// Parameters `(p_X, p_Z, A, B_X, B_Z)`.
    pub fn dihedral(gateset: Arc<GateSet>) -> Result<Self> {
        let x = gateset
            .index_of(&Unitary::pauli_x())
            .ok_or_else(|| Error::Validation("dihedral gate set must contain X".into()))?;
        let z = gateset
            .index_of(&Unitary::pauli_z())
            .ok_or_else(|| Error::Validation("dihedral gate set must contain Z".into()))?;
        Ok(Self {
            kind: Kind::Dihedral { x, z },
            gateset,
            experiments: vec![Experiment::from("X"), Experiment::from("Z")],
            names: names(&["p_X", "p_Z", "A", "B_X", "B_Z"]),
            domains: vec![
                ParamDomain::Unit,
                ParamDomain::Unit,
                ParamDomain::Unit,
                ParamDomain::OffsetOf(2),
                ParamDomain::OffsetOf(2),
            ],
        })
    }

    /// Leakage RB on `d1 + d2` levels with `lambdas` measurement effects and
    /// `inits` initial states; experiments are labelled `"λ,i"`.
    ///
    /// Parameter layout: `L1, L2, mu1`, then `A_λ`, `B_λ`, `C_{i,λ}`
    /// (row-major in `i`), then `p_i` when they are free.
    pub fn lrb(
        gateset: Arc<GateSet>,
        d1: usize,
        lambdas: usize,
        inits: usize,
        pops: LeakedPopulation,
    ) -> Result<Self> {
        if d1 < 2 || lambdas == 0 || inits == 0 {
            return validation("LRB needs d1 >= 2 and at least one effect and initial state");
        }
        if gateset.dim() <= d1 {
            return validation("LRB gate set must act on a space larger than the computational subspace");
        }
        if let LeakedPopulation::Fixed(p) = &pops {
            if p.len() != inits || p.iter().any(|v| !(0.0..1.0).contains(v)) {
                return validation("fixed leaked populations must be one value in [0, 1) per initial state");
            }
        }
        let mut names = names(&["L1", "L2", "mu1"]);
        let mut domains = vec![ParamDomain::Leakage { first: 0 }, ParamDomain::Leakage { first: 0 }, ParamDomain::Unit];
        for l in 0..lambdas {
            names.push(format!("A_{l}"));
        }
        for l in 0..lambdas {
            names.push(format!("B_{l}"));
        }
        for i in 0..inits {
            for l in 0..lambdas {
                names.push(format!("C_{i}_{l}"));
            }
        }
        if pops == LeakedPopulation::Free {
            for i in 0..inits {
                names.push(format!("p_{i}"));
            }
        }
        domains.resize(names.len(), ParamDomain::Unit);
        let mut experiments = Vec::new();
        for l in 0..lambdas {
            for i in 0..inits {
                experiments.push(Experiment::Label(format!("{l},{i}")));
            }
        }
        Ok(Self { kind: Kind::Lrb { d1, lambdas, inits, pops }, gateset, experiments, names, domains })
    }

    /// Builds a protocol from its string id with the default gate sets.
    pub fn from_id(id: ProtocolId) -> Result<Self> {
        let c12 = Arc::new(GateSet::clifford12());
        match id {
            ProtocolId::Rb => Ok(Self::rb(c12)),
            ProtocolId::Irb => {
                let gs = c12;
                let h = gs.index_of(&Unitary::pauli_x()).unwrap_or(1);
                Self::irb(gs, h)
            }
            ProtocolId::Unitarity => Ok(Self::unitarity(c12)),
            ProtocolId::Dihedral => Self::dihedral(Arc::new(GateSet::dihedral(4)?)),
            ProtocolId::Lrb => Self::lrb(
                Arc::new(c12.embedded(3)?),
                2,
                1,
                2,
                LeakedPopulation::Fixed(vec![1e-4, 5e-4]),
            ),
        }
    }

    pub fn id(&self) -> ProtocolId {
        match self.kind {
            Kind::Rb => ProtocolId::Rb,
            Kind::Irb { .. } => ProtocolId::Irb,
            Kind::Unitarity => ProtocolId::Unitarity,
            Kind::Dihedral { .. } => ProtocolId::Dihedral,
            Kind::Lrb { .. } => ProtocolId::Lrb,
        }
    }

    pub fn gateset(&self) -> &GateSet {
        &self.gateset
    }

    pub fn experiments(&self) -> &[Experiment] {
        &self.experiments
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_domains(&self) -> &[ParamDomain] {
        &self.domains
    }

    pub fn num_params(&self) -> usize {
        self.names.len()
    }

    /// The moment order tied by this protocol.
    pub fn moment_order(&self) -> u32 {
        match self.kind {
            Kind::Unitarity => 2,
            _ => 1,
        }
    }

    /// Index of the decay parameter of main interest (`p`, `u`, `L1`, ...).
    pub fn primary_param(&self) -> usize {
        0
    }

    fn experiment_index(&self, e: &Experiment) -> Result<usize> {
        self.experiments
            .iter()
            .position(|x| x == e)
            .ok_or_else(|| Error::InvalidExperiment(format!("{e} for protocol {}", self.id())))
    }

    /// Sequence length `ℓ(M, e)`.
    pub fn sequence_length(&self, m: u64, e: &Experiment) -> Result<usize> {
        let k = self.experiment_index(e)?;
        let m = m as usize;
        Ok(match self.kind {
            Kind::Irb { .. } if k == 1 => 2 * m + 1,
            Kind::Unitarity => m,
            _ => m + 1,
        })
    }

    /// Draws one allowable sequence of gate indices (0-based).
    pub fn sample_sequence<R: Rng + ?Sized>(&self, m: u64, e: &Experiment, rng: &mut R) -> Result<Vec<usize>> {
        if m < 1 {
            return validation("sequence length M must be at least 1");
        }
        let k = self.experiment_index(e)?;
        let g = &*self.gateset;
        let r = g.len();
        let mut seq = Vec::with_capacity(self.sequence_length(m, e)?);
        match self.kind {
            Kind::Irb { gate } if k == 1 => {
                for _ in 0..m {
                    seq.push(rng.random_range(0..r));
                    seq.push(gate);
                }
            }
            _ => {
                for _ in 0..m {
                    seq.push(rng.random_range(0..r));
                }
            }
        }
        match self.kind {
            Kind::Unitarity => {}
            Kind::Dihedral { x, z } => {
                let target = if k == 0 { x } else { z };
                let terminal = if rng.random_bool(0.5) { 0 } else { target };
                let inv = g.inverse(g.compose_sequence(&seq));
                seq.push(g.compose(terminal, inv));
            }
            _ => seq.push(g.inverse(g.compose_sequence(&seq))),
        }
        Ok(seq)
    }

    /// Every allowable sequence for `(M, e)` with its probability, in
    /// lexicographic order of the free gates. Fails above `cap` sequences.
    pub fn enumerate_sequences(&self, m: u64, e: &Experiment, cap: usize) -> Result<Vec<(Vec<usize>, f64)>> {
        let k = self.experiment_index(e)?;
        let g = &*self.gateset;
        let r = g.len();
        let terminals: Vec<usize> = match self.kind {
            Kind::Dihedral { x, z } => vec![0, if k == 0 { x } else { z }],
            _ => vec![0],
        };
        let count = (r as f64).powi(m as i32) * terminals.len() as f64;
        if count > cap as f64 {
            return Err(Error::EnumerationCap { count, cap });
        }
        let weight = 1.0 / count;
        let mut out = Vec::with_capacity(count as usize);
        let mut digits = vec![0usize; m as usize];
        loop {
            let mut seq = Vec::with_capacity(2 * m as usize + 1);
            for &d in &digits {
                seq.push(d);
                if let Kind::Irb { gate } = self.kind {
                    if k == 1 {
                        seq.push(gate);
                    }
                }
            }
            match self.kind {
                Kind::Unitarity => out.push((seq, weight)),
                _ => {
                    let inv = g.inverse(g.compose_sequence(&seq));
                    for &t in &terminals {
                        let mut s = seq.clone();
                        s.push(g.compose(t, inv));
                        out.push((s, weight));
                    }
                }
            }
            // odometer increment
            let mut pos = 0;
            loop {
                if pos == digits.len() {
                    return Ok(out);
                }
                digits[pos] += 1;
                if digits[pos] < r {
                    break;
                }
                digits[pos] = 0;
                pos += 1;
            }
        }
    }

    /// Whether `x` lies in the tying-parameter box.
    pub fn params_valid(&self, x: &[f64]) -> bool {
        if x.len() != self.num_params() || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        self.domains.iter().enumerate().all(|(k, d)| match *d {
            ParamDomain::Unit => (0.0..=1.0).contains(&x[k]),
            ParamDomain::OffsetOf(b) => (0.0..=1.0).contains(&(x[k] + x[b])),
            ParamDomain::Leakage { first } => {
                x[first] >= 0.0 && x[first + 1] >= 0.0 && x[first] + x[first + 1] <= 1.0
            }
        })
    }

    /// Tying function `T(t, M, e, x)`.
    pub fn tying(&self, t: u32, m: u64, e: &Experiment, x: &[f64]) -> Result<f64> {
        if t != self.moment_order() {
            return Err(Error::UnsupportedMoment(t));
        }
        if x.len() != self.num_params() {
            return validation(format!("expected {} tying parameters, got {}", self.num_params(), x.len()));
        }
        let mut grad = vec![0.0; x.len()];
        self.tying_grad(m, e, x, &mut grad, LeakageLimit::Error)
    }

    /// Value of the tied moment and its gradient (written into `grad`,
    /// which is overwritten) with respect to the tying parameters.
    pub fn tying_grad(&self, m: u64, e: &Experiment, x: &[f64], grad: &mut [f64], limit: LeakageLimit) -> Result<f64> {
        let k = self.experiment_index(e)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        match &self.kind {
            Kind::Rb => {
                let (v, g) = tying::tying_rb_grad(m, x[0], x[1], x[2]);
                grad[..3].copy_from_slice(&g);
                Ok(v)
            }
            Kind::Irb { .. } => {
                let (v, g) = tying::tying_rb_grad(m, x[k], x[2], x[3]);
                grad[k] = g[0];
                grad[2] = g[1];
                grad[3] = g[2];
                Ok(v)
            }
            Kind::Unitarity => {
                let (v, g) = tying::tying_unitarity_grad(m, x[0], x[1], x[2]);
                grad[..3].copy_from_slice(&g);
                Ok(v)
            }
            Kind::Dihedral { .. } => {
                let (v, g) = tying::tying_dihedral_grad(m, x[k], x[2], x[3 + k]);
                grad[k] = g[0];
                grad[2] = g[1];
                grad[3 + k] = g[2];
                Ok(v)
            }
            Kind::Lrb { lambdas, inits, pops, .. } => {
                let (l, i) = (k / inits, k % inits);
                let ia = 3 + l;
                let ib = 3 + lambdas + l;
                let ic = 3 + 2 * lambdas + i * lambdas + l;
                let ip = 3 + 2 * lambdas + inits * lambdas + i;
                let p = match pops {
                    LeakedPopulation::Fixed(v) => v[i],
                    LeakedPopulation::Free => x[ip],
                };
                let terms = LrbTerms { l1: x[0], l2: x[1], mu1: x[2], a: x[ia], b: x[ib], c: x[ic], p };
                let (v, g) = tying::tying_lrb_grad(m, &terms, limit)?;
                grad[0] = g.l1;
                grad[1] = g.l2;
                grad[2] = g.mu1;
                grad[ia] += g.a;
                grad[ib] += g.b;
                grad[ic] += g.c;
                if *pops == LeakedPopulation::Free {
                    grad[ip] += g.p;
                }
                Ok(v)
            }
        }
    }

    /// Computational-subspace dimension for LRB.
    pub fn lrb_d1(&self) -> Option<usize> {
        match self.kind {
            Kind::Lrb { d1, .. } => Some(d1),
            _ => None,
        }
    }
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}
