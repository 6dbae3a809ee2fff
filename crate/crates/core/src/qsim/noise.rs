use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Channel, GateSet};
use crate::error::{validation, Result};

/// Broad noise categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    GateIndependent,
    GateDependent,
    PositionDependent,
}

/// Where the noise channel sits relative to its ideal gate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseOrder {
    /// `G~_r = G_r o E_r`: noise acts first, then the ideal gate.
    #[default]
    BeforeGate,
    /// `G~_r = E_r o G_r`: ideal gate first, then noise.
    AfterGate,
}

/// User hook for gate- and position-dependent noise: `(gate, position) -> channel`.
pub type PositionNoiseFn = dyn Fn(usize, usize) -> Channel + Send + Sync;

#[derive(Clone)]
enum Source {
    Independent(Channel),
    Dependent(Vec<Channel>),
    Position(Arc<PositionNoiseFn>),
}

/// Assignment of a noise channel to every (gate index, sequence position).
#[derive(Clone)]
pub struct NoiseModel {
    source: Source,
    order: NoiseOrder,
}

impl fmt::Debug for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NoiseModel")
            .field("kind", &self.kind())
            .field("order", &self.order)
            .finish()
    }
}

impl NoiseModel {
    pub fn gate_independent(channel: Channel) -> Self {
        Self { source: Source::Independent(channel), order: NoiseOrder::default() }
    }

    pub fn gate_dependent(channels: Vec<Channel>) -> Result<Self> {
        if channels.is_empty() {
            return validation("gate-dependent noise needs one channel per gate");
        }
        let d = channels[0].dim();
        if channels.iter().any(|c| c.dim() != d) {
            return validation("gate-dependent channels must share one dimension");
        }
        Ok(Self { source: Source::Dependent(channels), order: NoiseOrder::default() })
    }

    /// Per-gate channels `builder(r, G_r)` for every element of a gate set.
    pub fn per_gate<F>(gateset: &GateSet, builder: F) -> Result<Self>
    where
        F: Fn(usize, &super::Unitary) -> Result<Channel>,
    {
        let channels = gateset
            .gates()
            .iter()
            .enumerate()
            .map(|(r, g)| builder(r, g))
            .collect::<Result<Vec<_>>>()?;
        Self::gate_dependent(channels)
    }

    pub fn position_dependent(f: Arc<PositionNoiseFn>) -> Self {
        Self { source: Source::Position(f), order: NoiseOrder::default() }
    }

    pub fn noiseless(d: usize) -> Self {
        Self::gate_independent(Channel::identity(d))
    }

    pub fn with_order(mut self, order: NoiseOrder) -> Self {
        self.order = order;
        self
    }

    pub fn order(&self) -> NoiseOrder {
        self.order
    }

    pub fn kind(&self) -> NoiseKind {
        match self.source {
            Source::Independent(_) => NoiseKind::GateIndependent,
            Source::Dependent(_) => NoiseKind::GateDependent,
            Source::Position(_) => NoiseKind::PositionDependent,
        }
    }

    /// Channel applied with gate `r` at (0-based) position `k`.
    pub fn channel(&self, r: usize, k: usize) -> Cow<'_, Channel> {
        match &self.source {
            Source::Independent(c) => Cow::Borrowed(c),
            Source::Dependent(cs) => Cow::Borrowed(&cs[r]),
            Source::Position(f) => Cow::Owned(f(r, k)),
        }
    }

    /// Number of gates covered by a gate-dependent assignment.
    pub(crate) fn gate_count(&self) -> Option<usize> {
        match &self.source {
            Source::Dependent(cs) => Some(cs.len()),
            _ => None,
        }
    }

    /// The single channel of a gate-independent model.
    pub fn independent_channel(&self) -> Option<&Channel> {
        match &self.source {
            Source::Independent(c) => Some(c),
            _ => None,
        }
    }

    /// Validates every reachable channel (position-dependent hooks are
    /// probed at the first `probe_positions` positions).
    pub fn validate(&self, gateset: &GateSet, probe_positions: usize) -> Result<()> {
        let d = gateset.dim();
        let check = |c: &Channel| -> Result<()> {
            if c.dim() != d {
                return validation(format!("noise channel dim {} does not match gate dim {d}", c.dim()));
            }
            c.check_cptp()
        };
        match &self.source {
            Source::Independent(c) => check(c),
            Source::Dependent(cs) => {
                if cs.len() != gateset.len() {
                    return validation(format!(
                        "gate-dependent noise has {} channels for {} gates",
                        cs.len(),
                        gateset.len()
                    ));
                }
                cs.iter().try_for_each(check)
            }
            Source::Position(f) => {
                for k in 0..probe_positions {
                    for r in 0..gateset.len() {
                        check(&f(r, k))?;
                    }
                }
                Ok(())
            }
        }
    }
}
