//! TopK input-activation sparsity and the column-skipping matvec.

use std::cmp::Ordering;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::tensor_store::WeightMatrix;

/// Kept coordinates of one projection input and the masked vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKResult {
    /// Ascending indices of the kept entries; exactly `K` of them.
    pub kept_indices: Vec<usize>,
    /// Input with every non-kept entry set to zero.
    pub sparse_input: Vec<f64>,
    /// `1 − K/d_in`.
    pub sparsity: f64,
}

impl TopKResult {
    pub fn k(&self) -> usize {
        self.kept_indices.len()
    }

    pub fn d_in(&self) -> usize {
        self.sparse_input.len()
    }
}

/// Larger magnitude first, lower index on ties.
fn by_magnitude(h: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| h[b].abs().total_cmp(&h[a].abs()).then(a.cmp(&b))
}

/// Indices of the `k` largest magnitudes, in selection order (unsorted).
fn select_top(h: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..h.len()).collect();
    if k == 0 {
        idx.clear();
        return idx;
    }
    if k < idx.len() {
        // The comparator is a total order, so the partition is unique and
        // matches a full sort.
        idx.select_nth_unstable_by(k - 1, by_magnitude(h));
        idx.truncate(k);
    }
    idx
}

fn check_input(h: &[f64], k: usize) -> Result<()> {
    if k > h.len() {
        return Err(domain(format!("K = {k} exceeds input width {}", h.len())));
    }
    if let Some(pos) = h.iter().position(|v| !v.is_finite()) {
        return Err(domain(format!("non-finite activation at index {pos}")));
    }
    Ok(())
}

/// Keeps the `K` largest-magnitude entries of `h`; ties go to the lower index.
pub fn topk_mask(h: &[f64], k: usize) -> Result<TopKResult> {
    check_input(h, k)?;
    let mut kept = select_top(h, k);
    kept.sort_unstable();
    let mut sparse_input = vec![0.0; h.len()];
    for &i in &kept {
        sparse_input[i] = h[i];
    }
    let sparsity = if h.is_empty() { 0.0 } else { 1.0 - k as f64 / h.len() as f64 };
    Ok(TopKResult { kept_indices: kept, sparse_input, sparsity })
}

/// Reference selection by full sort, for cross-checking [`topk_mask`].
pub fn topk_mask_by_sort(h: &[f64], k: usize) -> Result<TopKResult> {
    check_input(h, k)?;
    let mut order: Vec<usize> = (0..h.len()).collect();
    order.sort_by(by_magnitude(h));
    let mut kept = order[..k].to_vec();
    kept.sort_unstable();
    let mut sparse_input = vec![0.0; h.len()];
    for &i in &kept {
        sparse_input[i] = h[i];
    }
    let sparsity = if h.is_empty() { 0.0 } else { 1.0 - k as f64 / h.len() as f64 };
    Ok(TopKResult { kept_indices: kept, sparse_input, sparsity })
}

/// `W·h̃` accumulated over the kept columns only, in ascending column order.
///
/// Each output is summed left to right with one accumulator, so the result is
/// bit-identical to [`dense_project`] applied to the masked input.
pub fn masked_project(w: &WeightMatrix, r: &TopKResult) -> Result<Vec<f64>> {
    if r.sparse_input.len() != w.cols() {
        return Err(domain(format!(
            "`{}` expects input width {}, got {}",
            w.name(),
            w.cols(),
            r.sparse_input.len()
        )));
    }
    let kept = &r.kept_indices;
    let vals: Vec<f64> = kept.iter().map(|&j| r.sparse_input[j]).collect();
    let cols = w.cols();
    let data = w.values();
    let mut out = vec![0.0; w.rows()];

    // Four rows at a time: independent accumulators, same per-row order.
    let mut chunks = out.chunks_exact_mut(4);
    let mut row = 0;
    for chunk in &mut chunks {
        let (r0, r1, r2, r3) = (
            &data[row * cols..],
            &data[(row + 1) * cols..],
            &data[(row + 2) * cols..],
            &data[(row + 3) * cols..],
        );
        let (mut a0, mut a1, mut a2, mut a3) = (0.0, 0.0, 0.0, 0.0);
        for (&j, &v) in kept.iter().zip(&vals) {
            a0 += r0[j] * v;
            a1 += r1[j] * v;
            a2 += r2[j] * v;
            a3 += r3[j] * v;
        }
        chunk.copy_from_slice(&[a0, a1, a2, a3]);
        row += 4;
    }
    for slot in chunks.into_remainder() {
        let r0 = &data[row * cols..(row + 1) * cols];
        let mut acc = 0.0;
        for (&j, &v) in kept.iter().zip(&vals) {
            acc += r0[j] * v;
        }
        *slot = acc;
        row += 1;
    }
    Ok(out)
}

/// Applies [`masked_project`] to a batch, preserving order.
pub fn masked_project_batch(w: &WeightMatrix, batch: &[TopKResult]) -> Result<Vec<Vec<f64>>> {
    batch.par_iter().map(|r| masked_project(w, r)).collect()
}

/// Plain `W·h` with ascending column order and one accumulator per row.
pub fn dense_project(w: &WeightMatrix, h: &[f64]) -> Result<Vec<f64>> {
    if h.len() != w.cols() {
        return Err(domain(format!("`{}` expects input width {}, got {}", w.name(), w.cols(), h.len())));
    }
    Ok((0..w.rows())
        .map(|i| {
            let mut acc = 0.0;
            for (a, b) in w.row(i).iter().zip(h) {
                acc += a * b;
            }
            acc
        })
        .collect())
}

/// `‖h − T_K(h)‖₂`, the norm of the entries TopK drops.
pub fn truncation_error(h: &[f64], k: usize) -> Result<f64> {
    check_input(h, k)?;
    let mut mags: Vec<f64> = h.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    Ok(mags[k..].iter().map(|m| m * m).sum::<f64>().sqrt())
}

/// One row of a [`timed_project`] table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub d_in: usize,
    pub d_out: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub sparsity: f64,
    pub median_ns: u128,
    pub dense_ns: u128,
    pub speedup: f64,
    pub correct: bool,
}

fn median(mut xs: Vec<u128>) -> u128 {
    xs.sort_unstable();
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2
    }
}

/// Wall-clock comparison of the masked matvec against the dense one.
///
/// Every repeat's output is checked against the dense product of the masked
/// vector; the `correct` flag records whether all of them matched.
pub fn timed_project(w: &WeightMatrix, h: &[f64], k_list: &[usize], repeats: usize) -> Result<Vec<TimingRow>> {
    if repeats == 0 {
        return Err(domain("repeats must be at least 1"));
    }
    if h.len() != w.cols() {
        return Err(domain(format!("`{}` expects input width {}, got {}", w.name(), w.cols(), h.len())));
    }
    let dense_ns = median(
        (0..repeats)
            .map(|_| {
                let t = Instant::now();
                let y = dense_project(w, h).expect("shape checked");
                std::hint::black_box(y);
                t.elapsed().as_nanos()
            })
            .collect(),
    );

    let mut rows = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let mut times = Vec::with_capacity(repeats);
        let mut correct = true;
        for _ in 0..repeats {
            let t = Instant::now();
            let r = topk_mask(h, k)?;
            let y = masked_project(w, &r)?;
            times.push(t.elapsed().as_nanos());
            let reference = dense_project(w, &r.sparse_input)?;
            correct &= y.iter().zip(&reference).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        let median_ns = median(times);
        rows.push(TimingRow {
            d_in: w.cols(),
            d_out: w.rows(),
            k,
            sparsity: 1.0 - k as f64 / w.cols() as f64,
            median_ns,
            dense_ns,
            speedup: dense_ns as f64 / median_ns.max(1) as f64,
            correct,
        });
    }
    Ok(rows)
}

pub fn write_timing_csv<W: Write>(out: W, rows: &[TimingRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}
