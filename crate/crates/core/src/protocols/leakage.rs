use crate::error::{validation, Result};
use crate::linalg::{self, c};
use crate::qsim::Channel;
use crate::CMatrix;

fn block_projector(d: usize, lo: usize, hi: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    for k in lo..hi {
        m[(k, k)] = c(1.0, 0.0);
    }
    m
}

/// Leakage `L1 = 1 - Tr[I1 E(I1/d1)]` and seepage `L2 = Tr[I1 E(I2/d2)]`
/// of a channel on `X1 (+) X2`, with `X1` spanned by the first `d1` levels.
pub fn leakage_seepage(channel: &Channel, d1: usize, d2: usize) -> Result<(f64, f64)> {
    let d = channel.dim();
    if d1 == 0 || d2 == 0 || d1 + d2 != d {
        return validation(format!("channel dim {d} is not d1 + d2 = {} + {}", d1, d2));
    }
    let p1 = block_projector(d, 0, d1);
    let p2 = block_projector(d, d1, d);
    let out1 = channel.apply(&(&p1 * c(1.0 / d1 as f64, 0.0)));
    let out2 = channel.apply(&(&p2 * c(1.0 / d2 as f64, 0.0)));
    let l1 = 1.0 - linalg::trace(&(&p1 * out1)).re;
    let l2 = linalg::trace(&(&p1 * out2)).re;
    let clip = |v: f64| if v.abs() < 1e-14 { 0.0 } else { v };
    Ok((clip(l1), clip(l2)))
}
