//! Per-projection sparsity budgets from heavy-tail exponents.
//!
//! Each projection gets a raw ratio that is affine in its exponent,
//! `raw = (α − α_min)/(α_max − α_min)·(s2 − s1) + s1`, so heavier tails
//! (smaller `α`) are sparsified less. A single factor `η` then rescales the
//! ratios so that the parameter-weighted mean sparsity equals the global
//! target `S`, with each ratio capped at `clamp_max`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::spectral::SpectrumRecord;
use crate::tensor_store::{ProjKey, ProjKind, WeightMatrix};

const BISECTION_ITERS: usize = 60;

/// Allocation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationConfig {
    pub global_sparsity: f64,
    pub s1: f64,
    pub s2: f64,
    pub clamp_max: f64,
}

impl AllocationConfig {
    pub const DEFAULT_CLAMP: f64 = 0.99;

    /// Band `[0.8·S, 1.2·S]` around the target with the default ceiling.
    pub fn with_target(global_sparsity: f64) -> Self {
        Self {
            global_sparsity,
            s1: 0.8 * global_sparsity,
            s2: 1.2 * global_sparsity,
            clamp_max: Self::DEFAULT_CLAMP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Self { global_sparsity: s, s1, s2, clamp_max } = *self;
        if !(0.0..1.0).contains(&s) {
            return Err(domain(format!("global sparsity must lie in [0, 1), got {s}")));
        }
        if !(s1 >= 0.0 && s2 >= s1 && s2.is_finite()) {
            return Err(domain(format!("need 0 <= s1 <= s2, got s1 = {s1}, s2 = {s2}")));
        }
        if !(clamp_max > 0.0 && clamp_max <= 1.0) {
            return Err(domain(format!("clamp must lie in (0, 1], got {clamp_max}")));
        }
        Ok(())
    }
}

/// Input width and parameter count of a projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjDims {
    pub d_in: usize,
    pub params: usize,
}

impl ProjDims {
    pub fn of(w: &WeightMatrix) -> Self {
        Self { d_in: w.cols(), params: w.params() }
    }
}

/// Dimension table keyed by projection.
pub fn dims_of(matrices: &[WeightMatrix]) -> BTreeMap<ProjKey, ProjDims> {
    matrices.iter().map(|w| (w.key(), ProjDims::of(w))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub layer: usize,
    pub proj: ProjKind,
    /// Fitted exponent; absent for uniform plans.
    #[serde(default)]
    pub alpha: Option<f64>,
    pub d_in: usize,
    pub params: usize,
    /// Ratio from the affine rule, before `η` and the ceiling.
    #[serde(skip)]
    pub raw_s: f64,
    pub s: f64,
    #[serde(rename = "K")]
    pub k: usize,
}

impl PlanEntry {
    pub fn key(&self) -> ProjKey {
        ProjKey::new(self.layer, self.proj)
    }

    /// Sparsity realized by the integer `K`.
    pub fn realized_sparsity(&self) -> f64 {
        1.0 - self.k as f64 / self.d_in as f64
    }
}

/// Per-projection sparsities and keep counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub global_sparsity: f64,
    pub eta: f64,
    /// Parameter-weighted sparsity realized by the integer `K` values.
    #[serde(rename = "achieved")]
    pub achieved_s: f64,
    pub entries: Vec<PlanEntry>,
}

impl AllocationPlan {
    pub fn entry(&self, key: ProjKey) -> Option<&PlanEntry> {
        self.entries.iter().find(|e| e.key() == key)
    }

    pub fn keep_counts(&self) -> BTreeMap<ProjKey, usize> {
        self.entries.iter().map(|e| (e.key(), e.k)).collect()
    }

    /// `Σ s·d / Σ d` over the continuous ratios, before rounding to `K`.
    pub fn continuous_sparsity(&self) -> f64 {
        weighted_mean(self.entries.iter().map(|e| (e.s, e.params)))
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut plan: AllocationPlan =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("plan file: {e}")))?;
        for e in &mut plan.entries {
            e.raw_s = f64::NAN;
            if e.k > e.d_in {
                return Err(Error::Format(format!("plan entry {}: K = {} exceeds d_in = {}", e.key(), e.k, e.d_in)));
            }
        }
        Ok(plan)
    }
}

fn weighted_mean(items: impl Iterator<Item = (f64, usize)>) -> f64 {
    let (num, den) = items.fold((0.0, 0.0), |(n, d), (s, w)| (n + s * w as f64, d + w as f64));
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Parameter-weighted sparsity realized by integer keep counts.
pub fn achieved_sparsity(entries: &[PlanEntry]) -> f64 {
    weighted_mean(entries.iter().map(|e| (e.realized_sparsity(), e.params)))
}

/// Keep count `round((1 − s)·d_in)`, halves rounded up.
pub fn keep_count(s: f64, d_in: usize) -> usize {
    let k = ((1.0 - s) * d_in as f64 + 0.5).floor();
    (k.max(0.0) as usize).min(d_in)
}

/// Solves `Σ min(η·raw_i, clamp)·d_i = target` for `η`.
///
/// Returns `None` when the target is out of reach.
fn solve_eta(raw: &[f64], weights: &[f64], clamp: f64, target: f64) -> Option<f64> {
    let total_positive: f64 = raw.iter().zip(weights).filter(|(r, _)| **r > 0.0).map(|(_, w)| w).sum();
    if target <= 0.0 {
        return Some(0.0);
    }
    if target > clamp * total_positive * (1.0 + 1e-12) {
        return None;
    }
    let budget = |eta: f64| -> f64 { raw.iter().zip(weights).map(|(r, w)| (eta * r).min(clamp) * w).sum() };

    let weighted_raw: f64 = raw.iter().zip(weights).map(|(r, w)| r * w).sum();
    let unclamped = target / weighted_raw;
    let max_raw = raw.iter().cloned().fold(0.0, f64::max);
    if unclamped * max_raw <= clamp {
        return Some(unclamped);
    }

    // Some entries saturate. Bracket the root, bisect, then solve exactly on
    // the active set the bisection settled on.
    let min_pos = raw.iter().cloned().filter(|r| *r > 0.0).fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (unclamped, clamp / min_pos);
    let tol = 1e-12 * weights.iter().sum::<f64>();
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        let resid = budget(mid) - target;
        if resid.abs() < tol {
            lo = mid;
            hi = mid;
            break;
        }
        if resid < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let eta = 0.5 * (lo + hi);

    let (mut clamped_mass, mut free_mass) = (0.0, 0.0);
    for (r, w) in raw.iter().zip(weights) {
        if eta * r >= clamp {
            clamped_mass += clamp * w;
        } else {
            free_mass += r * w;
        }
    }
    if free_mass > 0.0 {
        let exact = (target - clamped_mass) / free_mass;
        if (budget(exact) - target).abs() <= (budget(eta) - target).abs() {
            return Some(exact);
        }
    }
    Some(eta)
}

fn finish(global_sparsity: f64, eta: f64, entries: Vec<PlanEntry>) -> AllocationPlan {
    let achieved_s = achieved_sparsity(&entries);
    AllocationPlan { global_sparsity, eta, achieved_s, entries }
}

/// Allocates per-projection sparsities from fitted exponents.
///
/// `dims` must hold the input width and parameter count of every record's
/// projection. Records are expected to have unique keys; plan entries follow
/// the record order.
pub fn allocate(
    records: &[SpectrumRecord],
    dims: &BTreeMap<ProjKey, ProjDims>,
    cfg: &AllocationConfig,
) -> Result<AllocationPlan> {
    let alphas: Vec<(ProjKey, f64)> = records.iter().map(|r| (r.source, r.alpha)).collect();
    allocate_alphas(&alphas, dims, cfg)
}

/// [`allocate`] on bare `(key, α)` pairs.
pub fn allocate_alphas(
    alphas: &[(ProjKey, f64)],
    dims: &BTreeMap<ProjKey, ProjDims>,
    cfg: &AllocationConfig,
) -> Result<AllocationPlan> {
    cfg.validate()?;
    if alphas.is_empty() {
        return Err(domain("allocation needs at least one projection"));
    }
    let mut seen = BTreeSet::new();
    for (key, alpha) in alphas {
        if !alpha.is_finite() {
            return Err(domain(format!("{key}: exponent {alpha} is not finite")));
        }
        if !seen.insert(*key) {
            return Err(domain(format!("duplicate projection key {key}")));
        }
    }
    let dim_of = |key: &ProjKey| -> Result<ProjDims> {
        let d = dims.get(key).copied().ok_or_else(|| domain(format!("no dimensions for {key}")))?;
        if d.d_in == 0 || d.params == 0 {
            return Err(domain(format!("{key}: zero-sized projection")));
        }
        Ok(d)
    };
    let entry_dims: Vec<ProjDims> = alphas.iter().map(|(k, _)| dim_of(k)).collect::<Result<_>>()?;

    let s_target = cfg.global_sparsity;
    let alpha_min = alphas.iter().map(|(_, a)| *a).fold(f64::INFINITY, f64::min);
    let alpha_max = alphas.iter().map(|(_, a)| *a).fold(f64::NEG_INFINITY, f64::max);

    if alpha_max == alpha_min {
        // No spread to exploit: every projection gets the target itself.
        let raw = 0.5 * (cfg.s1 + cfg.s2);
        if s_target > cfg.clamp_max {
            return Err(Error::Infeasible { target: s_target, reachable: cfg.clamp_max, min_clamp: s_target });
        }
        let eta = if raw > 0.0 { s_target / raw } else { 1.0 };
        let entries = alphas
            .iter()
            .zip(&entry_dims)
            .map(|((key, alpha), d)| PlanEntry {
                layer: key.layer,
                proj: key.proj,
                alpha: Some(*alpha),
                d_in: d.d_in,
                params: d.params,
                raw_s: raw,
                s: s_target,
                k: keep_count(s_target, d.d_in),
            })
            .collect();
        return Ok(finish(s_target, eta, entries));
    }

    let raw: Vec<f64> = alphas
        .iter()
        .map(|(_, a)| (a - alpha_min) / (alpha_max - alpha_min) * (cfg.s2 - cfg.s1) + cfg.s1)
        .collect();
    let weights: Vec<f64> = entry_dims.iter().map(|d| d.params as f64).collect();
    let total: f64 = weights.iter().sum();
    let target = s_target * total;

    let eta = solve_eta(&raw, &weights, cfg.clamp_max, target).ok_or_else(|| {
        let positive: f64 = raw.iter().zip(&weights).filter(|(r, _)| **r > 0.0).map(|(_, w)| w).sum();
        Error::Infeasible {
            target: s_target,
            reachable: cfg.clamp_max * positive / total,
            min_clamp: if positive > 0.0 { target / positive } else { f64::INFINITY },
        }
    })?;

    let entries = alphas
        .iter()
        .zip(&entry_dims)
        .zip(&raw)
        .map(|(((key, alpha), d), &r)| {
            let s = (eta * r).min(cfg.clamp_max);
            PlanEntry {
                layer: key.layer,
                proj: key.proj,
                alpha: Some(*alpha),
                d_in: d.d_in,
                params: d.params,
                raw_s: r,
                s,
                k: keep_count(s, d.d_in),
            }
        })
        .collect();
    Ok(finish(s_target, eta, entries))
}

/// Uniform baseline: every projection gets sparsity `S`.
pub fn uniform_plan(dims: &BTreeMap<ProjKey, ProjDims>, global_sparsity: f64) -> Result<AllocationPlan> {
    if !(0.0..1.0).contains(&global_sparsity) {
        return Err(domain(format!("global sparsity must lie in [0, 1), got {global_sparsity}")));
    }
    let entries = dims
        .iter()
        .map(|(key, d)| PlanEntry {
            layer: key.layer,
            proj: key.proj,
            alpha: None,
            d_in: d.d_in,
            params: d.params,
            raw_s: global_sparsity,
            s: global_sparsity,
            k: keep_count(global_sparsity, d.d_in),
        })
        .collect();
    Ok(finish(global_sparsity, 1.0, entries))
}

/// Real-valued keep count `(√ln(d_out/δ) / ε)^{2(α−1)/(α−2)}` before rounding
/// and capping.
pub fn theoretical_k_raw(alpha: f64, epsilon: f64, d_out: usize, delta: f64) -> Result<f64> {
    if !(alpha > 2.0) || !alpha.is_finite() {
        return Err(domain(format!("α must be finite and > 2, got {alpha}")));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(domain(format!("ε must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain(format!("δ must lie in (0, 1), got {delta}")));
    }
    if d_out == 0 {
        return Err(domain("d_out must be positive"));
    }
    let base = (d_out as f64 / delta).ln().sqrt() / epsilon;
    let exponent = 2.0 * (alpha - 1.0) / (alpha - 2.0);
    Ok(base.powf(exponent))
}

/// Keep count that makes the TopK truncation error of a weak-`ℓ_{2(α−1)}`
/// activation at most `ε`, as an integer in `[1, d_out]`.
pub fn theoretical_k(alpha: f64, epsilon: f64, d_out: usize, delta: f64) -> Result<usize> {
    let raw = theoretical_k_raw(alpha, epsilon, d_out, delta)?;
    let k = raw.ceil();
    Ok(if k >= d_out as f64 { d_out } else { (k as usize).max(1) })
}
