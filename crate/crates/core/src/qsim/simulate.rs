use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DatasetRecord, Experiment, GateSet, NoiseModel, NoiseOrder, SpamConfig};
use crate::error::{validation, Error, Result};
use crate::linalg;
use crate::protocols::ProtocolSpec;
use crate::{CMatrix, C64};

/// Survival probabilities within this distance of `[0, 1]` are clamped.
pub const CLAMP_TOL: f64 = 1e-9;
/// Default cap on the number of sequences enumerated exactly.
pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

/// SPAM configuration per experiment type, with a shared default.
#[derive(Clone, Debug)]
pub struct SpamAssignment {
    default: SpamConfig,
    per_experiment: BTreeMap<Experiment, SpamConfig>,
}

impl SpamAssignment {
    pub fn uniform(spam: SpamConfig) -> Self {
        Self { default: spam, per_experiment: BTreeMap::new() }
    }

    pub fn with(mut self, e: Experiment, spam: SpamConfig) -> Self {
        self.per_experiment.insert(e, spam);
        self
    }

    pub fn get(&self, e: &Experiment) -> &SpamConfig {
        self.per_experiment.get(e).unwrap_or(&self.default)
    }
}

impl From<SpamConfig> for SpamAssignment {
    fn from(spam: SpamConfig) -> Self {
        Self::uniform(spam)
    }
}

/// Options for [`simulate_dataset`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationOptions {
    /// Shuffle the output record order (seeded).
    pub shuffle: bool,
    /// Number of random, uninverted noisy gates applied to the initial state
    /// before every sequence, lowering the effective SPAM constant `A`.
    pub burn_in_gates: usize,
}

/// `out = S v` for a column-major square superoperator.
fn matvec(s: &CMatrix, v: &[C64], out: &mut [C64]) {
    let n = v.len();
    let data = s.as_slice();
    out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
    for (j, &vj) in v.iter().enumerate() {
        if vj.re == 0.0 && vj.im == 0.0 {
            continue;
        }
        let col = &data[j * n..(j + 1) * n];
        for (o, &sij) in out.iter_mut().zip(col) {
            *o += sij * vj;
        }
    }
}

fn clamp_survival(q: f64) -> Result<f64> {
    if !q.is_finite() || q < -CLAMP_TOL || q > 1.0 + CLAMP_TOL {
        return Err(Error::InternalConsistency(format!("survival probability {q} outside [0, 1]")));
    }
    Ok(q.clamp(0.0, 1.0))
}

/// Noisy gate superoperators, precomputed when the noise does not depend on
/// the sequence position.
#[derive(Clone, Debug)]
pub struct Simulator<'a> {
    gateset: &'a GateSet,
    noise: &'a NoiseModel,
    cached: Option<Vec<CMatrix>>,
}

impl<'a> Simulator<'a> {
    pub fn new(gateset: &'a GateSet, noise: &'a NoiseModel) -> Result<Self> {
        noise.validate(gateset, 4)?;
        let cached = match noise.kind() {
            super::NoiseKind::PositionDependent => None,
            _ => Some((0..gateset.len()).map(|r| noisy_superop(gateset, noise, r, 0)).collect()),
        };
        if let Some(count) = noise.gate_count() {
            if count != gateset.len() {
                return validation("gate-dependent noise does not cover the gate set");
            }
        }
        Ok(Self { gateset, noise, cached })
    }

    pub fn gateset(&self) -> &GateSet {
        self.gateset
    }

    fn superop(&self, r: usize, k: usize) -> std::borrow::Cow<'_, CMatrix> {
        match &self.cached {
            Some(c) => std::borrow::Cow::Borrowed(&c[r]),
            None => std::borrow::Cow::Owned(noisy_superop(self.gateset, self.noise, r, k)),
        }
    }

    /// Output state (vectorized) of a noisy gate sequence applied to `rho`.
    pub fn evolve(&self, seq: &[usize], rho: &CMatrix) -> Result<Vec<C64>> {
        let r = self.gateset.len();
        if let Some(bad) = seq.iter().find(|&&j| j >= r) {
            return validation(format!("gate index {bad} out of range for {r} gates"));
        }
        if rho.nrows() != self.gateset.dim() {
            return validation("state dimension does not match the gate set");
        }
        let mut v: Vec<C64> = linalg::vectorize(rho).iter().copied().collect();
        let mut w = v.clone();
        for (k, &j) in seq.iter().enumerate() {
            matvec(&self.superop(j, k), &v, &mut w);
            std::mem::swap(&mut v, &mut w);
        }
        Ok(v)
    }

    /// `Tr[E G~_{j_K} ... G~_{j_1}(rho)]`.
    pub fn survival(&self, seq: &[usize], spam: &SpamConfig) -> Result<f64> {
        let v = self.evolve(seq, spam.rho())?;
        clamp_survival(linalg::expectation(spam.effect(), &nalgebra::DVector::from_vec(v)))
    }

    /// Exact mean survival over uniformly random RB-type sequences of length
    /// `M` (closed by the protocol's terminal gates), computed by a transfer
    /// recursion over (ideal composite, accumulated state) pairs in
    /// `O(M R^2 d^4)` time. Unitarity-type protocols are not supported.
    pub fn mean_survival(&self, protocol: &ProtocolSpec, m: u64, e: &Experiment, spam: &SpamConfig) -> Result<f64> {
        use crate::protocols::ProtocolId;
        let g = self.gateset;
        let r = g.len();
        let n = g.dim() * g.dim();
        let id = protocol.id();
        if id == ProtocolId::Unitarity {
            return validation("mean_survival needs an inverting protocol");
        }
        let interleaved = match id {
            ProtocolId::Irb => protocol.sequence_length(m, e)? == 2 * m as usize + 1,
            _ => false,
        };
        let inter_gate = if interleaved {
            match e {
                Experiment::Index(k) => *k as usize - 1,
                _ => return Err(Error::InvalidExperiment(e.to_string())),
            }
        } else {
            0
        };
        let zero = C64::new(0.0, 0.0);
        let mut acc = vec![vec![zero; n]; r];
        let mut live = vec![false; r];
        acc[0] = linalg::vectorize(spam.rho()).iter().copied().collect();
        live[0] = true;
        let mut buf = vec![zero; n];
        let mut pos = 0usize;
        let weight = C64::new(1.0 / r as f64, 0.0);
        for _ in 0..m {
            let mut next = vec![vec![zero; n]; r];
            let mut next_live = vec![false; r];
            for c in (0..r).filter(|&c| live[c]) {
                for j in 0..r {
                    let s = self.superop(j, pos);
                    matvec(&s, &acc[c], &mut buf);
                    let mut c2 = g.compose(j, c);
                    if interleaved {
                        let s2 = self.superop(inter_gate, pos + 1);
                        let tmp = buf.clone();
                        matvec(&s2, &tmp, &mut buf);
                        c2 = g.compose(inter_gate, c2);
                    }
                    for (a, b) in next[c2].iter_mut().zip(&buf) {
                        *a += weight * b;
                    }
                    next_live[c2] = true;
                }
            }
            pos += if interleaved { 2 } else { 1 };
            acc = next;
            live = next_live;
        }
        let terminals: Vec<usize> = match (id, e) {
            (ProtocolId::Dihedral, Experiment::Label(l)) => {
                let gate = if l == "X" { super::Unitary::pauli_x() } else { super::Unitary::pauli_z() };
                vec![0, g.index_of(&gate).ok_or_else(|| Error::InvalidExperiment(l.clone()))?]
            }
            _ => vec![0],
        };
        let mut total = 0.0;
        for c in (0..r).filter(|&c| live[c]) {
            for &t in &terminals {
                let last = g.compose(t, g.inverse(c));
                matvec(&self.superop(last, pos), &acc[c], &mut buf);
                total += linalg::expectation(spam.effect(), &nalgebra::DVector::from_column_slice(&buf))
                    / terminals.len() as f64;
            }
        }
        clamp_survival(total)
    }
}

fn noisy_superop(gateset: &GateSet, noise: &NoiseModel, r: usize, k: usize) -> CMatrix {
    let gate = linalg::conjugation(gateset.gate(r).matrix());
    let chan = noise.channel(r, k);
    match noise.order() {
        NoiseOrder::BeforeGate => gate * chan.superop(),
        NoiseOrder::AfterGate => chan.superop() * gate,
    }
}

/// Survival probability `Tr[E G~_{j_K} ... G~_{j_1}(rho)]` of one sequence.
pub fn survival_probability(seq: &[usize], gateset: &GateSet, noise: &NoiseModel, spam: &SpamConfig) -> Result<f64> {
    Simulator::new(gateset, noise)?.survival(seq, spam)
}

/// Simulates `Q ~ Binomial(N, q)` for `I` random sequences at every
/// `(M, e)`. Each record draws from its own seeded stream, so the output is
/// identical for a given seed regardless of thread count.
#[allow(clippy::too_many_arguments)]
pub fn simulate_dataset(
    protocol: &ProtocolSpec,
    noise: &NoiseModel,
    spam: &SpamAssignment,
    m_list: &[u64],
    sequences: u32,
    shots: u64,
    seed: u64,
    options: SimulationOptions,
) -> Result<Vec<DatasetRecord>> {
    if m_list.is_empty() || sequences == 0 || shots == 0 {
        return validation("need a nonempty M list, I >= 1 and N >= 1");
    }
    let sim = Simulator::new(protocol.gateset(), noise)?;
    let mut jobs = Vec::new();
    for &m in m_list {
        for e in protocol.experiments() {
            for i in 0..sequences {
                jobs.push((m, e.clone(), i));
            }
        }
    }
    let mut records = jobs
        .par_iter()
        .enumerate()
        .map(|(idx, (m, e, i))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(idx as u64 + 1);
            let mut seq = Vec::with_capacity(options.burn_in_gates);
            let r = protocol.gateset().len();
            for _ in 0..options.burn_in_gates {
                seq.push(rng.random_range(0..r));
            }
            seq.extend(protocol.sample_sequence(*m, e, &mut rng)?);
            let q = sim.survival(&seq, spam.get(e))?;
            let count = Binomial::new(shots, q)
                .map_err(|err| Error::InternalConsistency(format!("binomial({shots}, {q}): {err}")))?
                .sample(&mut rng);
            DatasetRecord::binomial(*m, e.clone(), *i, shots, count)
        })
        .collect::<Result<Vec<_>>>()?;
    if options.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        records.shuffle(&mut rng);
    }
    Ok(records)
}

/// Survival probabilities of freshly drawn sequences (for histograms and
/// Monte Carlo moment estimates).
pub fn sample_survivals(
    protocol: &ProtocolSpec,
    noise: &NoiseModel,
    spam: &SpamConfig,
    m: u64,
    e: &Experiment,
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let sim = Simulator::new(protocol.gateset(), noise)?;
    (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let seq = protocol.sample_sequence(m, e, &mut rng)?;
            sim.survival(&seq, spam)
        })
        .collect()
}

/// A finite distribution of survival probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDistribution {
    /// `(q_j, Pr(j))`, sorted by `q_j`, atoms closer than `1e-12` merged.
    pub atoms: Vec<(f64, f64)>,
}

impl SurvivalDistribution {
    pub fn moment(&self, t: u32) -> f64 {
        self.atoms.iter().map(|(q, w)| w * q.powi(t as i32)).sum()
    }

    pub fn variance(&self) -> f64 {
        let m1 = self.moment(1);
        self.atoms.iter().map(|(q, w)| w * (q - m1).powi(2)).sum()
    }
}

/// Exact survival distribution `S_{M,e}` by enumerating every allowable
/// sequence; fails when there are more than `cap` of them.
pub fn enumerate_survival_distribution(
    protocol: &ProtocolSpec,
    noise: &NoiseModel,
    spam: &SpamConfig,
    m: u64,
    e: &Experiment,
    cap: usize,
) -> Result<SurvivalDistribution> {
    let seqs = protocol.enumerate_sequences(m, e, cap)?;
    let sim = Simulator::new(protocol.gateset(), noise)?;
    let mut raw = seqs
        .par_iter()
        .map(|(s, w)| Ok((sim.survival(s, spam)?, *w)))
        .collect::<Result<Vec<(f64, f64)>>>()?;
    raw.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    for (q, w) in raw {
        match atoms.last_mut() {
            Some(last) if (q - last.0).abs() < 1e-12 => last.1 += w,
            _ => atoms.push((q, w)),
        }
    }
    Ok(SurvivalDistribution { atoms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::ProtocolSpec;
    use crate::qsim::{Channel, SpamConfig};
    use std::sync::Arc;

    fn rb() -> ProtocolSpec {
        ProtocolSpec::rb(Arc::new(GateSet::clifford12()))
    }

    #[test]
    fn identity_sequence_noiseless() {
        let p = rb();
        let spam = SpamConfig::basis(2, 0, 0, 0.99).unwrap();
        let noise = NoiseModel::noiseless(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let seq = p.sample_sequence(17, &Experiment::Index(0), &mut rng).unwrap();
        let q = survival_probability(&seq, p.gateset(), &noise, &spam).unwrap();
        assert!((q - 0.99).abs() < 1e-12);
    }

    #[test]
    fn depolarizing_closed_form() {
        let p = rb();
        let s = 0.01;
        let noise = NoiseModel::gate_independent(Channel::depolarizing(2, s).unwrap());
        let spam = SpamConfig::ideal(2);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for m in [1u64, 5, 40] {
            let seq = p.sample_sequence(m, &Experiment::Index(0), &mut rng).unwrap();
            let q = survival_probability(&seq, p.gateset(), &noise, &spam).unwrap();
            let f = (1.0 - s).powi(m as i32 + 1);
            assert!((q - (f + (1.0 - f) * 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn clamp_rejects_large_violations() {
        assert_eq!(clamp_survival(1.0 + 1e-12).unwrap(), 1.0);
        assert_eq!(clamp_survival(-5e-10).unwrap(), 0.0);
        assert!(matches!(clamp_survival(1.0 + 1e-6), Err(Error::InternalConsistency(_))));
    }

    #[test]
    fn noiseless_single_shot_all_succeed() {
        let p = rb();
        let recs = simulate_dataset(
            &p,
            &NoiseModel::noiseless(2),
            &SpamConfig::ideal(2).into(),
            &[1, 3, 10],
            4,
            1,
            5,
            SimulationOptions::default(),
        )
        .unwrap();
        assert_eq!(recs.len(), 12);
        assert!(recs.iter().all(|r| r.counts() == Some((1, 1))));
    }

    #[test]
    fn simulation_is_deterministic() {
        let p = rb();
        let noise = NoiseModel::gate_independent(Channel::depolarizing(2, 0.05).unwrap());
        let spam: SpamAssignment = SpamConfig::basis(2, 0, 0, 0.99).unwrap().into();
        let run = |seed| simulate_dataset(&p, &noise, &spam, &[1, 10], 5, 30, seed, SimulationOptions::default()).unwrap();
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn depolarizing_enumeration_is_single_atom() {
        let p = rb();
        let noise = NoiseModel::gate_independent(Channel::depolarizing(2, 0.02).unwrap());
        let spam = SpamConfig::ideal(2);
        for m in 1..=2 {
            let d = enumerate_survival_distribution(&p, &noise, &spam, m, &Experiment::Index(0), 1000).unwrap();
            assert_eq!(d.atoms.len(), 1);
            assert!(d.variance() < 1e-20);
            let f = 0.98f64.powi(m as i32 + 1);
            assert!((d.atoms[0].0 - (f + (1.0 - f) / 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn transfer_recursion_matches_enumeration() {
        let p = rb();
        let gs = p.gateset().clone();
        let noise = NoiseModel::per_gate(&gs, |_, g| Channel::overrotation(g, 0.2, true)).unwrap();
        let spam = SpamConfig::basis(2, 0, 0, 0.99).unwrap();
        let sim = Simulator::new(&gs, &noise).unwrap();
        for m in 1..=3 {
            let e = Experiment::Index(0);
            let exact = enumerate_survival_distribution(&p, &noise, &spam, m, &e, 10_000).unwrap().moment(1);
            let fast = sim.mean_survival(&p, m, &e, &spam).unwrap();
            assert!((exact - fast).abs() < 1e-12, "M={m}: {exact} vs {fast}");
        }
    }

    #[test]
    fn transfer_recursion_handles_interleaving() {
        let gs = Arc::new(GateSet::clifford12());
        let p = ProtocolSpec::irb(gs.clone(), 5).unwrap();
        let noise = NoiseModel::per_gate(&gs, |_, g| Channel::overrotation(g, 0.15, true)).unwrap();
        let spam = SpamConfig::basis(2, 0, 0, 0.99).unwrap();
        let sim = Simulator::new(&gs, &noise).unwrap();
        for e in p.experiments() {
            let exact = enumerate_survival_distribution(&p, &noise, &spam, 2, e, 10_000).unwrap().moment(1);
            let fast = sim.mean_survival(&p, 2, e, &spam).unwrap();
            assert!((exact - fast).abs() < 1e-12);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let p = rb();
        let err = enumerate_survival_distribution(
            &p,
            &NoiseModel::noiseless(2),
            &SpamConfig::ideal(2),
            6,
            &Experiment::Index(0),
            DEFAULT_ENUMERATION_CAP,
        )
        .unwrap_err();
        assert!(matches!(err, Error::EnumerationCap { .. }));
    }
}
