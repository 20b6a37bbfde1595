//! Width selection for plain networks under a parameter budget.

use super::ArchKind;
use crate::error::{config_err, Result};

/// Parameter count of a plain network with `depth` hidden layers of `width`.
pub fn simple_ff_param_count(in_dim: usize, depth: usize, width: usize, out_dim: usize) -> usize {
    let first = in_dim * width + width;
    let inner = depth.saturating_sub(1) * (width * width + width);
    let last = width * out_dim + out_dim;
    first + inner + last
}

/// Largest width whose plain-network count does not exceed `budget`.
pub fn match_param_budget(
    kind: ArchKind,
    depth: usize,
    in_dim: usize,
    out_dim: usize,
    budget: usize,
) -> Result<usize> {
    if kind != ArchKind::SimpleFF {
        return config_err(format!(
            "budget matching sizes SimpleFF networks, not {kind}"
        ));
    }
    if depth == 0 || in_dim == 0 || out_dim == 0 {
        return config_err("budget matching needs depth, in_dim and out_dim ≥ 1");
    }
    let count = |w| simple_ff_param_count(in_dim, depth, w, out_dim);
    if count(1) > budget {
        return config_err(format!(
            "budget {budget} is below the width-1 count {}",
            count(1)
        ));
    }
    let mut lo = 1usize;
    let mut hi = 2usize;
    while count(hi) <= budget {
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if count(mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
