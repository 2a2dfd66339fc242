use std::collections::HashMap;

use rayon::prelude::*;

use super::index::ParameterIndex;
use crate::event_model::{Dataset, ItemId};
use crate::kernel::Kernel;

/// Sparse linear map from packed parameters to contribution rates.
///
/// Row `c` holds `x_c` with `λ_c = x_c · θ`; rows are stored CSR with
/// strictly increasing columns, and a CSC copy serves the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    pub(crate) n_coords: usize,
    pub(crate) row_ptr: Vec<usize>,
    pub(crate) cols: Vec<u32>,
    pub(crate) vals: Vec<f64>,
    pub(crate) scores: Vec<f64>,
    pub(crate) col_ptr: Vec<usize>,
    pub(crate) col_rows: Vec<u32>,
    pub(crate) col_vals: Vec<f64>,
}

impl DesignMatrix {
    /// Assemble from CSR parts, deriving the column copy.
    pub fn from_csr(
        n_coords: usize,
        row_ptr: Vec<usize>,
        cols: Vec<u32>,
        vals: Vec<f64>,
        scores: Vec<f64>,
    ) -> Self {
        let mut col_ptr = vec![0usize; n_coords + 1];
        for &c in &cols {
            col_ptr[c as usize + 1] += 1;
        }
        for j in 0..n_coords {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut next = col_ptr.clone();
        let mut col_rows = vec![0u32; cols.len()];
        let mut col_vals = vec![0.0; cols.len()];
        for r in 0..scores.len() {
            for k in row_ptr[r]..row_ptr[r + 1] {
                let j = cols[k] as usize;
                col_rows[next[j]] = r as u32;
                col_vals[next[j]] = vals[k];
                next[j] += 1;
            }
        }
        DesignMatrix {
            n_coords,
            row_ptr,
            cols,
            vals,
            scores,
            col_ptr,
            col_rows,
            col_vals,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.scores.len()
    }

    pub fn n_coords(&self) -> usize {
        self.n_coords
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Entries of row `r` as `(coordinate, coefficient)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .zip(&self.vals[span])
            .map(|(&c, &v)| (c as usize, v))
    }

    #[inline]
    pub(crate) fn row_dot(&self, r: usize, theta: &[f64]) -> f64 {
        let mut acc = 0.0;
        for k in self.row_ptr[r]..self.row_ptr[r + 1] {
            acc += self.vals[k] * theta[self.cols[k] as usize];
        }
        acc
    }

    #[inline]
    pub(crate) fn col_dot(&self, j: usize, r: &[f64]) -> f64 {
        let mut acc = 0.0;
        for k in self.col_ptr[j]..self.col_ptr[j + 1] {
            acc += self.col_vals[k] * r[self.col_rows[k] as usize];
        }
        acc
    }

    /// Euclidean norm of every column.
    pub fn column_norms(&self) -> Vec<f64> {
        (0..self.n_coords)
            .map(|j| {
                self.col_vals[self.col_ptr[j]..self.col_ptr[j + 1]]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// `λ = Xθ`.
    pub fn rates(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.n_rows())
            .into_par_iter()
            .with_min_len(1024)
            .map(|r| self.row_dot(r, theta))
            .collect()
    }
}

/// One chronological sweep over a user's timeline.
///
/// Per learned item the kernel sum `Σ_i κ(t - t_i)` is kept at the time of
/// the last processed event and decayed multiplicatively when time advances.
/// Contributions at time `t` see only learning strictly before `t`.
fn user_rows(
    d: &Dataset,
    kernel: Kernel,
    idx: &ParameterIndex,
    learning: &[usize],
    contributions: &[usize],
) -> Vec<(usize, Vec<(u32, f64)>)> {
    let mut out = Vec::with_capacity(contributions.len());
    let mut learned: Vec<(ItemId, f64)> = Vec::new();
    let mut slot_of: HashMap<ItemId, usize> = HashMap::new();
    let mut now = f64::NEG_INFINITY;
    let (mut li, mut ci) = (0, 0);

    let advance = |learned: &mut Vec<(ItemId, f64)>, now: &mut f64, t: f64| {
        if t > *now {
            if now.is_finite() {
                let factor = kernel.eval(t - *now);
                for entry in learned.iter_mut() {
                    entry.1 *= factor;
                }
            }
            *now = t;
        }
    };

    while ci < contributions.len() {
        let c = &d.contributions[contributions[ci]];
        // Learning at exactly the contribution time waits until after it.
        if li < learning.len() && d.learning_events[learning[li]].time < c.time {
            let e = &d.learning_events[learning[li]];
            advance(&mut learned, &mut now, e.time);
            match slot_of.get(&e.item) {
                Some(&s) => learned[s].1 += 1.0,
                None => {
                    slot_of.insert(e.item, learned.len());
                    learned.push((e.item, 1.0));
                }
            }
            li += 1;
            continue;
        }
        advance(&mut learned, &mut now, c.time);

        let topics = &d.item(c.item).topics;
        let norm = topics.total_weight();
        let mut row: Vec<(u32, f64)> = Vec::new();
        for (a, w) in topics.iter() {
            let share = w / norm;
            if let Some(j) = idx.alpha(c.user, a) {
                row.push((j as u32, share));
            }
            if let Some(j) = idx.mu(c.user, a) {
                let v = c.time * share;
                if v != 0.0 {
                    row.push((j as u32, v));
                }
            }
        }
        for &(item, sum) in &learned {
            if sum == 0.0 {
                continue;
            }
            let learned_topics = &d.item(item).topics;
            for (slot, a) in learned_topics.topics().enumerate() {
                let w = topics.weight(a);
                if w == 0.0 {
                    continue;
                }
                if let Some(j) = idx.knowledge_slot(item, slot) {
                    row.push((j as u32, sum * w / norm));
                }
            }
        }
        row.sort_unstable_by_key(|&(j, _)| j);
        out.push((contributions[ci], row));
        ci += 1;
    }
    out
}

/// Build the design matrix of `d` under `kernel` for the coordinates of `idx`.
///
/// Users are swept in parallel; rows land in contribution order, so the
/// output does not depend on the number of worker threads.
pub fn build_design(d: &Dataset, kernel: Kernel, idx: &ParameterIndex) -> DesignMatrix {
    let per_user = d.by_user();
    let parts: Vec<Vec<(usize, Vec<(u32, f64)>)>> = per_user
        .par_iter()
        .map(|ev| user_rows(d, kernel, idx, &ev.learning, &ev.contributions))
        .collect();

    let n = d.contributions.len();
    let mut lens = vec![0usize; n];
    for part in &parts {
        for (r, row) in part {
            lens[*r] = row.len();
        }
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    for &l in &lens {
        row_ptr.push(row_ptr.last().unwrap() + l);
    }
    let nnz = *row_ptr.last().unwrap();
    let mut cols = vec![0u32; nnz];
    let mut vals = vec![0.0; nnz];
    for part in parts {
        for (r, row) in part {
            for (k, (j, v)) in row.into_iter().enumerate() {
                cols[row_ptr[r] + k] = j;
                vals[row_ptr[r] + k] = v;
            }
        }
    }
    let scores = d.contributions.iter().map(|c| c.score).collect();
    DesignMatrix::from_csr(idx.len(), row_ptr, cols, vals, scores)
}
