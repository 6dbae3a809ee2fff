use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};

/// Experiment-type label: a small integer (RB, IRB, unitarity) or a name
/// (dihedral `"X"`/`"Z"`, LRB `"λ,i"`).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Experiment {
    Index(u32),
    Label(String),
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment::Index(0)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Experiment::Index(k) => write!(f, "{k}"),
            Experiment::Label(s) => f.write_str(s),
        }
    }
}

impl From<u32> for Experiment {
    fn from(k: u32) -> Self {
        Experiment::Index(k)
    }
}

impl From<&str> for Experiment {
    fn from(s: &str) -> Self {
        Experiment::Label(s.to_string())
    }
}

/// Observed data for one sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Observation {
    Binomial {
        #[serde(rename = "N")]
        n: u64,
        #[serde(rename = "Q")]
        q: u64,
    },
    /// Referenced photon counts: bright `X`, dark `Y`, signal `Z`.
    Nv {
        #[serde(rename = "X")]
        x: u64,
        #[serde(rename = "Y")]
        y: u64,
        #[serde(rename = "Z")]
        z: u64,
    },
}

/// One observation `Q_{M,e,i}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    #[serde(rename = "M")]
    pub m: u64,
    pub e: Experiment,
    pub i: u32,
    #[serde(flatten)]
    pub obs: Observation,
}

impl DatasetRecord {
    pub fn binomial(m: u64, e: Experiment, i: u32, n: u64, q: u64) -> Result<Self> {
        let r = Self { m, e, i, obs: Observation::Binomial { n, q } };
        r.validate()?;
        Ok(r)
    }

    pub fn nv(m: u64, e: Experiment, i: u32, x: u64, y: u64, z: u64) -> Result<Self> {
        let r = Self { m, e, i, obs: Observation::Nv { x, y, z } };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return validation("sequence length M must be at least 1");
        }
        if let Observation::Binomial { n, q } = self.obs {
            if q > n {
                return validation(format!("Q = {q} exceeds N = {n}"));
            }
        }
        Ok(())
    }

    /// `(N, Q)` for binomial records.
    pub fn counts(&self) -> Option<(u64, u64)> {
        match self.obs {
            Observation::Binomial { n, q } => Some((n, q)),
            Observation::Nv { .. } => None,
        }
    }

    /// `(X, Y, Z)` for NV records.
    pub fn nv_counts(&self) -> Option<(u64, u64, u64)> {
        match self.obs {
            Observation::Nv { x, y, z } => Some((x, y, z)),
            Observation::Binomial { .. } => None,
        }
    }

    pub fn cell(&self) -> (u64, Experiment) {
        (self.m, self.e.clone())
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<W: Write>(records: &[DatasetRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a JSON-lines dataset, skipping blank lines.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<DatasetRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: DatasetRecord = serde_json::from_str(&line)
            .map_err(|e| crate::Error::Validation(format!("line {}: {e}", lineno + 1)))?;
        r.validate()?;
        records.push(r);
    }
    Ok(records)
}

/// Record indices grouped by `(M, e)` cell, in sorted cell order.
pub fn group_by_cell(records: &[DatasetRecord]) -> BTreeMap<(u64, Experiment), Vec<usize>> {
    let mut cells: BTreeMap<(u64, Experiment), Vec<usize>> = BTreeMap::new();
    for (k, r) in records.iter().enumerate() {
        cells.entry(r.cell()).or_default().push(k);
    }
    cells
}
