//! Poisson log-likelihood over a sparse design matrix.
//!
//! Every contribution rate is linear in the packed parameters, so the
//! objective is `Σ_c s_c log(x_c·θ) - x_c·θ` (the `log s!` constant is
//! dropped). Evaluation splits rows into fixed chunks whose partial sums are
//! added in chunk order, and the gradient is one column dot product per
//! coordinate; both are therefore bitwise independent of the thread count.

mod cache;
mod design;
mod index;

use rayon::prelude::*;

pub use cache::{decode_design, encode_design, load_cached_design, save_cached_design, CacheKey};
pub use design::{build_design, DesignMatrix};
pub use index::{Cell, ParameterIndex};

use crate::error::{Error, Result};
use crate::kernel::RATE_FLOOR;

const ROW_CHUNK: usize = 2048;

fn check_dim(x: &DesignMatrix, theta: &[f64]) -> Result<()> {
    if theta.len() != x.n_coords() {
        return Err(Error::DimensionMismatch {
            expected: x.n_coords(),
            actual: theta.len(),
        });
    }
    Ok(())
}

#[inline]
fn row_term(s: f64, lambda: f64) -> f64 {
    let log_term = if s == 0.0 {
        0.0
    } else {
        s * lambda.max(RATE_FLOOR).ln()
    };
    log_term - lambda
}

/// `Σ_c s_c log(max(λ_c, floor)) - λ_c`.
pub fn log_likelihood(x: &DesignMatrix, theta: &[f64]) -> Result<f64> {
    check_dim(x, theta)?;
    let n = x.n_rows();
    let partials: Vec<f64> = (0..n.div_ceil(ROW_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * ROW_CHUNK;
            let hi = (lo + ROW_CHUNK).min(n);
            (lo..hi)
                .map(|r| row_term(x.scores[r], x.row_dot(r, theta)))
                .sum::<f64>()
        })
        .collect();
    Ok(partials.iter().sum())
}

/// `Xᵀ (s / max(λ, floor) - 1)`.
pub fn gradient(x: &DesignMatrix, theta: &[f64]) -> Result<Vec<f64>> {
    Ok(value_and_gradient(x, theta)?.1)
}

/// Log-likelihood and its gradient from one pass over the rates.
pub fn value_and_gradient(x: &DesignMatrix, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dim(x, theta)?;
    let n = x.n_rows();
    let chunks: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(ROW_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * ROW_CHUNK;
            let hi = (lo + ROW_CHUNK).min(n);
            let mut value = 0.0;
            let mut resid = Vec::with_capacity(hi - lo);
            for r in lo..hi {
                let s = x.scores[r];
                let lambda = x.row_dot(r, theta);
                value += row_term(s, lambda);
                resid.push(if s == 0.0 {
                    -1.0
                } else {
                    s / lambda.max(RATE_FLOOR) - 1.0
                });
            }
            (value, resid)
        })
        .collect();
    let mut value = 0.0;
    let mut resid = Vec::with_capacity(n);
    for (v, r) in chunks {
        value += v;
        resid.extend(r);
    }
    let grad = (0..x.n_coords())
        .into_par_iter()
        .with_min_len(256)
        .map(|j| x.col_dot(j, &resid))
        .collect();
    Ok((value, grad))
}
