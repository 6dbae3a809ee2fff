use std::collections::VecDeque;

use super::Unitary;
use crate::error::{validation, Error, Result};

/// Tolerance for matching group elements modulo global phase.
pub const GROUP_TOL: f64 = 1e-10;

/// An ordered, phase-canonicalized finite group of unitaries.
///
/// Index 0 is always the identity. Products and inverses are precomputed
/// into tables so sequence composition never touches matrices.
#[derive(Clone, Debug)]
pub struct GateSet {
    gates: Vec<Unitary>,
    /// `mul[a][b]` is the index of `G_a G_b`.
    mul: Vec<Vec<usize>>,
    inv: Vec<usize>,
}

impl GateSet {
    /// Closure of `generators` under multiplication modulo global phase,
    /// enumerated breadth-first with the identity first.
    pub fn generate(generators: &[Unitary], max_size: usize) -> Result<Self> {
        let Some(first) = generators.first() else {
            return validation("at least one generator is required");
        };
        let d = first.dim();
        for g in generators {
            if g.dim() != d {
                return validation("generators must share one dimension");
            }
            Unitary::new(g.matrix().clone())?;
        }
        let mut gates = vec![Unitary::identity(d)];
        let mut queue = VecDeque::from([0usize]);
        while let Some(idx) = queue.pop_front() {
            for g in generators {
                let candidate = g.mul(&gates[idx]).canonical();
                if find(&gates, &candidate).is_none() {
                    if gates.len() >= max_size {
                        return Err(Error::GroupTooLarge(max_size));
                    }
                    gates.push(candidate);
                    queue.push_back(gates.len() - 1);
                }
            }
        }
        Self::from_elements(gates)
    }

    /// Builds the tables for an explicit element list; fails unless the list
    /// is closed under products and inverses.
    pub fn from_elements(gates: Vec<Unitary>) -> Result<Self> {
        if gates.is_empty() {
            return validation("gate set is empty");
        }
        let gates: Vec<Unitary> = gates.iter().map(Unitary::canonical).collect();
        let r = gates.len();
        let identity = Unitary::identity(gates[0].dim());
        let Some(id_idx) = find(&gates, &identity) else {
            return Err(Error::NotAGroup("identity is missing".into()));
        };
        let mut mul = vec![vec![0usize; r]; r];
        for a in 0..r {
            for b in 0..r {
                let prod = gates[a].mul(&gates[b]);
                mul[a][b] = find(&gates, &prod).ok_or_else(|| {
                    Error::NotAGroup(format!("product of elements {a} and {b} is not in the set"))
                })?;
            }
        }
        let mut inv = vec![0usize; r];
        for a in 0..r {
            inv[a] = (0..r)
                .find(|&b| mul[a][b] == id_idx)
                .ok_or_else(|| Error::NotAGroup(format!("element {a} has no inverse")))?;
        }
        let mut set = Self { gates, mul, inv };
        if id_idx != 0 {
            set = set.reindex_identity_first(id_idx);
        }
        Ok(set)
    }

    fn reindex_identity_first(self, id_idx: usize) -> Self {
        let mut order: Vec<usize> = (0..self.gates.len()).collect();
        order.swap(0, id_idx);
        let gates = order.iter().map(|&i| self.gates[i].clone()).collect();
        Self::from_elements(gates).expect("reordering a valid group stays valid")
    }

    /// The 12-element subgroup `<Z, sqrt(Z) H>` of the qubit Clifford group.
    pub fn clifford12() -> Self {
        let s_h = Unitary::sqrt_z().mul(&Unitary::hadamard());
        Self::generate(&[Unitary::pauli_z(), s_h], 64).expect("subgroup generation")
    }

    /// The 24-element single-qubit Clifford group `<H, S>`.
    pub fn clifford24() -> Self {
        Self::generate(&[Unitary::hadamard(), Unitary::sqrt_z()], 64).expect("clifford generation")
    }

    /// Dihedral group `<exp(i pi Z / j), X>`.
    pub fn dihedral(j: u32) -> Result<Self> {
        if j == 0 {
            return validation("dihedral order parameter must be positive");
        }
        let zj = Unitary::rz(-2.0 * std::f64::consts::PI / j as f64);
        Self::generate(&[zj, Unitary::pauli_x()], 4 * j as usize + 8)
    }

    /// Each element embedded block-diagonally as `G (+) I` on a larger space.
    pub fn embedded(&self, total_dim: usize) -> Result<Self> {
        let gates = self.gates.iter().map(|g| g.embed(total_dim)).collect::<Result<Vec<_>>>()?;
        Ok(Self { gates, mul: self.mul.clone(), inv: self.inv.clone() })
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.gates[0].dim()
    }

    pub fn gate(&self, idx: usize) -> &Unitary {
        &self.gates[idx]
    }

    pub fn gates(&self) -> &[Unitary] {
        &self.gates
    }

    /// Index of `G_a G_b`.
    pub fn compose(&self, a: usize, b: usize) -> usize {
        self.mul[a][b]
    }

    pub fn inverse(&self, a: usize) -> usize {
        self.inv[a]
    }

    /// Index of the ideal composite `G_{j_K} ... G_{j_1}` of a sequence.
    pub fn compose_sequence(&self, seq: &[usize]) -> usize {
        seq.iter().fold(0, |acc, &j| self.mul[j][acc])
    }

    /// Index of the element equal to `u` modulo phase, if any.
    pub fn index_of(&self, u: &Unitary) -> Option<usize> {
        find(&self.gates, &u.canonical())
    }
}

fn find(gates: &[Unitary], u: &Unitary) -> Option<usize> {
    gates.iter().position(|g| g.approx_eq_up_to_phase(u, GROUP_TOL))
}
