//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
}

/// Explicit Gram matrix `WᵀW` (cols × cols, row-major).
pub fn gram(values: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut g = vec![0.0; cols * cols];
    for i in 0..cols {
        for j in 0..cols {
            let mut acc = 0.0;
            for r in 0..rows {
                acc += values[r * cols + i] * values[r * cols + j];
            }
            g[i * cols + j] = acc;
        }
    }
    g
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, ascending.
/// Sweeps until the off-diagonal Frobenius norm drops below `1e-12 · trace`.
pub fn jacobi_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut a = a.to_vec();
    let trace: f64 = (0..n).map(|i| a[i * n + i].abs()).sum();
    let tol = 1e-12 * trace.max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off < tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Textbook Hill estimate on an ascending sequence, no quantization.
pub fn hill_reference(ascending: &[f64], k: usize) -> f64 {
    let n = ascending.len();
    let lref = ascending[n - k - 1];
    let sum: f64 = (1..=k).map(|i| (ascending[n - i] / lref).ln()).sum();
    1.0 + k as f64 / sum
}

/// Ascending `j^(−1/(α−1))` spectrum for `j = 1..n`.
pub fn powerlaw_ascending(n: usize, alpha: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (1..=n).map(|j| (j as f64).powf(-1.0 / (alpha - 1.0))).collect();
    v.reverse();
    v
}

/// I.i.d. Pareto draws with survival `P(X > x) = x^(−a)` for `x ≥ 1`, sorted ascending.
pub fn pareto_sorted(n: usize, tail_index: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = r.random::<f64>();
            (1.0 - u).powf(-1.0 / tail_index)
        })
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Brute force `max_j j^{1/p} |y|_(j)` with an insertion sort.
pub fn weak_lp_brute(y: &[f64], p: f64) -> f64 {
    let mut mags: Vec<f64> = Vec::new();
    for v in y {
        let m = v.abs();
        let pos = mags.iter().position(|&x| x < m).unwrap_or(mags.len());
        mags.insert(pos, m);
    }
    let mut best = 0.0f64;
    for (i, m) in mags.iter().enumerate() {
        best = best.max(((i + 1) as f64).powf(1.0 / p) * m);
    }
    best
}

/// Kept index set by full sort on (|h| descending, index ascending).
pub fn topk_reference(h: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..h.len()).collect();
    idx.sort_by(|&a, &b| h[b].abs().partial_cmp(&h[a].abs()).unwrap().then(a.cmp(&b)));
    let mut kept = idx[..k].to_vec();
    kept.sort_unstable();
    kept
}

/// Dense `W·h` with ascending column order.
pub fn matvec(values: &[f64], rows: usize, cols: usize, h: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| {
            let mut acc = 0.0;
            for c in 0..cols {
                acc += values[r * cols + c] * h[c];
            }
            acc
        })
        .collect()
}

/// Plain bisection for `Σ min(η·raw, clamp)·d = S·Σd`.
pub fn eta_bisection(raw: &[f64], d: &[f64], clamp: f64, s: f64) -> f64 {
    let target = s * d.iter().sum::<f64>();
    let f = |eta: f64| raw.iter().zip(d).map(|(r, w)| (eta * r).min(clamp) * w).sum::<f64>() - target;
    let (mut lo, mut hi) = (0.0, 1.0);
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Affine raw sparsities with the equal-α midpoint fallback.
pub fn raw_sparsities(alphas: &[f64], s1: f64, s2: f64) -> Vec<f64> {
    let lo = alphas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = alphas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    alphas
        .iter()
        .map(|a| if hi > lo { (a - lo) / (hi - lo) * (s2 - s1) + s1 } else { 0.5 * (s1 + s2) })
        .collect()
}
