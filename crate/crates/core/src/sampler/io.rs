use std::io::{Read, Write};

use super::PosteriorChains;
use crate::error::{Error, Result};

/// Writes `chain,draw,<params...>` rows, one per draw.
pub fn write_chains_csv<W: Write>(chains: &PosteriorChains, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["chain".to_string(), "draw".to_string()];
    header.extend(chains.names.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (c, draws) in chains.draws.iter().enumerate() {
        for (i, d) in draws.iter().enumerate() {
            let mut row = vec![c.to_string(), i.to_string()];
            row.extend(d.iter().map(|v| format!("{v:e}")));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a chains CSV as written by [`write_chains_csv`].
pub fn read_chains_csv<R: Read>(input: R) -> Result<PosteriorChains> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.len() < 3 || &header[0] != "chain" || &header[1] != "draw" {
        return Err(Error::Validation("chains CSV must start with chain,draw columns".into()));
    }
    let names: Vec<String> = header.iter().skip(2).map(String::from).collect();
    let mut draws: Vec<Vec<Vec<f64>>> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |what: &str| Error::Validation(format!("row {}: {what}", line + 2));
        if rec.len() != header.len() {
            return Err(bad("wrong number of fields"));
        }
        let c: usize = rec[0].parse().map_err(|_| bad("chain index is not an integer"))?;
        let row: Vec<f64> = rec.iter().skip(2).map(|v| v.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad("non-numeric value"))?;
        if c > draws.len() {
            return Err(bad("chains must be numbered consecutively from 0"));
        }
        if c == draws.len() {
            draws.push(Vec::new());
        }
        draws[c].push(row);
    }
    if draws.is_empty() {
        return Err(Error::Validation("chains CSV has no draws".into()));
    }
    let stats = vec![Default::default(); draws.len()];
    Ok(PosteriorChains { names, draws, stats, warnings: Vec::new() })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Validation(format!("CSV error: {e}"))
}
