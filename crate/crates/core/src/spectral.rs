//! Empirical spectral density of `X = WᵀW` and the Hill tail exponent.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg;
use crate::tensor_store::{ProjKey, ProjKind, WeightMatrix};

/// Eigenvalues at or below `ZERO_FILTER · λ_max` are treated as zero by the
/// Hill fit.
pub const ZERO_FILTER: f64 = 1e-12;

/// Default share of the positive spectrum used as the Hill tail sample.
pub const DEFAULT_K_FRACTION: f64 = 0.5;

/// Resolution of the log-ratios summed by [`hill_alpha`].
///
/// Each `ln(λ_{n-i+1}/λ_{n-k})` is rounded to a multiple of `2^-24` and the
/// terms are summed as integers. The sum is then exact and independent of
/// summation order, and rescaling the spectrum by any constant reproduces the
/// same exponent bit for bit (the rescaled ratios differ from the originals
/// by a few ulps, far below one quantum).
const LOG_RATIO_SCALE: f64 = 16_777_216.0; // 2^24

/// Spectrum of one projection's correlation matrix with its Hill fit.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRecord {
    pub name: String,
    pub source: ProjKey,
    /// Output width of the source matrix.
    pub d_out: usize,
    /// Ascending eigenvalues of `WᵀW`, negatives clamped to zero.
    pub eigenvalues: Vec<f64>,
    pub n: usize,
    pub alpha: f64,
    pub k_used: usize,
    pub lambda_ref: f64,
    pub lambda_max: f64,
}

/// A matrix whose spectrum could not be fitted.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumFailure {
    pub name: String,
    pub source: ProjKey,
    pub d_out: usize,
    pub n: usize,
    pub reason: String,
}

pub type AnalysisOutcome = std::result::Result<SpectrumRecord, SpectrumFailure>;

/// Output of [`hill_alpha`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HillFit {
    pub alpha: f64,
    pub lambda_ref: f64,
}

/// Eigenvalues of `WᵀW` in ascending order, computed as squared singular
/// values of `W`.
///
/// The result always has `d_in` entries: when `d_out < d_in` the trailing
/// `d_in - d_out` eigenvalues are exact zeros.
pub fn correlation_spectrum(w: &WeightMatrix) -> Result<Vec<f64>> {
    if w.values().iter().any(|v| !v.is_finite()) {
        return Err(domain(format!("`{}` contains non-finite values", w.name())));
    }
    let sv = linalg::singular_values(w.values(), w.rows(), w.cols())?;
    let mut eig: Vec<f64> = sv.iter().map(|s| (s * s).max(0.0)).collect();
    eig.resize(w.cols(), 0.0);
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Hill estimate `α = 1 + k / Σ_{i=1..k} ln(λ_{n-i+1} / λ_{n-k})` on an
/// ascending spectrum.
pub fn hill_alpha(eigenvalues: &[f64], k: usize) -> Result<HillFit> {
    let n = eigenvalues.len();
    if n < 2 || k == 0 || k >= n {
        return Err(domain(format!("hill tail size k = {k} outside [1, {}]", n.saturating_sub(1))));
    }
    if eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(domain("spectrum contains non-finite values"));
    }
    if eigenvalues.windows(2).any(|w| w[1] < w[0]) {
        return Err(domain("spectrum must be sorted ascending"));
    }
    let lambda_ref = eigenvalues[n - k - 1];
    if !(lambda_ref > 0.0) {
        return Err(domain(format!("reference eigenvalue λ_(n-k) = {lambda_ref} is not positive")));
    }
    let units: i128 = eigenvalues[n - k..]
        .iter()
        .map(|&lambda| ((lambda / lambda_ref).ln() * LOG_RATIO_SCALE).round() as i128)
        .sum();
    if units <= 0 {
        return Err(Error::DegenerateSpectrum(format!(
            "top {k} eigenvalues all equal the reference {lambda_ref}"
        )));
    }
    let log_sum = units as f64 / LOG_RATIO_SCALE;
    Ok(HillFit { alpha: 1.0 + k as f64 / log_sum, lambda_ref })
}

/// Number of eigenvalues above the zero filter.
pub fn positive_count(ascending: &[f64]) -> usize {
    let Some(&lambda_max) = ascending.last() else { return 0 };
    if !(lambda_max > 0.0) {
        return 0;
    }
    let threshold = ZERO_FILTER * lambda_max;
    ascending.iter().filter(|&&l| l > threshold).count()
}

/// Spectrum plus Hill fit for one matrix.
pub fn analyze_matrix(w: &WeightMatrix, k_fraction: f64) -> Result<SpectrumRecord> {
    if !(k_fraction > 0.0 && k_fraction < 1.0) {
        return Err(domain(format!("k_fraction must lie in (0, 1), got {k_fraction}")));
    }
    let eigenvalues = correlation_spectrum(w)?;
    let n = eigenvalues.len();
    let n_pos = positive_count(&eigenvalues);
    if n_pos < 2 {
        return Err(Error::DegenerateSpectrum(format!(
            "`{}` has {n_pos} eigenvalue(s) above the zero filter",
            w.name()
        )));
    }
    let k = ((k_fraction * n_pos as f64).floor() as usize).clamp(1, n_pos - 1);
    let fit = hill_alpha(&eigenvalues[n - n_pos..], k)?;
    Ok(SpectrumRecord {
        name: w.name().to_string(),
        source: w.key(),
        d_out: w.rows(),
        lambda_max: eigenvalues[n - 1],
        eigenvalues,
        n,
        alpha: fit.alpha,
        k_used: k,
        lambda_ref: fit.lambda_ref,
    })
}

/// Analyzes every matrix, keeping input order. A matrix that fails does not
/// abort the batch; its slot holds the failure instead.
pub fn analyze_all(matrices: &[WeightMatrix], k_fraction: f64) -> Result<Vec<AnalysisOutcome>> {
    if !(k_fraction > 0.0 && k_fraction < 1.0) {
        return Err(domain(format!("k_fraction must lie in (0, 1), got {k_fraction}")));
    }
    Ok(matrices
        .par_iter()
        .map(|w| {
            analyze_matrix(w, k_fraction).map_err(|e| SpectrumFailure {
                name: w.name().to_string(),
                source: w.key(),
                d_out: w.rows(),
                n: w.cols(),
                reason: e.to_string(),
            })
        })
        .collect())
}

/// Prefix sums of a spectrum sorted descending, for repeated energy queries.
#[derive(Debug, Clone)]
pub struct EnergyProfile {
    prefix: Vec<f64>,
}

impl EnergyProfile {
    pub fn new(eigenvalues: &[f64]) -> Result<Self> {
        if eigenvalues.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(domain("eigenvalues must be finite and non-negative"));
        }
        let mut desc = eigenvalues.to_vec();
        desc.sort_by(|a, b| b.total_cmp(a));
        let mut prefix = Vec::with_capacity(desc.len() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for v in desc {
            acc += v;
            prefix.push(acc);
        }
        if !(acc > 0.0) {
            return Err(domain("spectrum has no positive eigenvalue"));
        }
        Ok(Self { prefix })
    }

    pub fn len(&self) -> usize {
        self.prefix.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Energy fraction in the top `⌈q·n⌉` eigenvalues.
    pub fn capture(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(domain(format!("q must lie in (0, 1], got {q}")));
        }
        let n = self.len();
        let x = q * n as f64;
        // Guard against `0.3 * 10 = 3.0000000000000004` rounding up to 4.
        let m = if (x - x.round()).abs() <= 1e-9 * x.max(1.0) { x.round() } else { x.ceil() };
        let m = (m as usize).clamp(1, n);
        if m == n {
            return Ok(1.0);
        }
        Ok(self.prefix[m] / self.prefix[n])
    }
}

/// Top-`q` spectral energy capture ratio `R(q) = Σ_{j ≤ ⌈qn⌉} λ_(j) / Σ λ_j`.
pub fn energy_capture(eigenvalues: &[f64], q: f64) -> Result<f64> {
    EnergyProfile::new(eigenvalues)?.capture(q)
}

/// Weak-`ℓ_p` quasi-norm `max_j j^{1/p} |y|_(j)` over the decreasing
/// rearrangement of `|y|`. Returns 0 for an empty vector.
pub fn weak_lp_norm(y: &[f64], p: f64) -> f64 {
    debug_assert!(p > 0.0);
    let mut mags: Vec<f64> = y.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    mags.iter()
        .enumerate()
        .map(|(i, m)| ((i + 1) as f64).powf(1.0 / p) * m)
        .fold(0.0, f64::max)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// One line of the spectra JSON-lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumLine {
    pub layer: usize,
    pub proj: ProjKind,
    pub name: String,
    pub n: usize,
    pub d_out: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k_used: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda_ref: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl SpectrumLine {
    pub fn key(&self) -> ProjKey {
        ProjKey::new(self.layer, self.proj)
    }

    pub fn is_failure(&self) -> bool {
        self.error.is_some() || self.alpha.is_none()
    }
}

impl From<&AnalysisOutcome> for SpectrumLine {
    fn from(outcome: &AnalysisOutcome) -> Self {
        match outcome {
            Ok(r) => SpectrumLine {
                layer: r.source.layer,
                proj: r.source.proj,
                name: r.name.clone(),
                n: r.n,
                d_out: r.d_out,
                alpha: Some(r.alpha),
                k_used: Some(r.k_used),
                lambda_ref: Some(r.lambda_ref),
                lambda_max: Some(r.lambda_max),
                error: None,
            },
            Err(f) => SpectrumLine {
                layer: f.source.layer,
                proj: f.source.proj,
                name: f.name.clone(),
                n: f.n,
                d_out: f.d_out,
                alpha: None,
                k_used: None,
                lambda_ref: None,
                lambda_max: None,
                error: Some(f.reason.clone()),
            },
        }
    }
}

pub fn write_jsonl<W: Write>(mut out: W, outcomes: &[AnalysisOutcome]) -> Result<()> {
    for o in outcomes {
        serde_json::to_writer(&mut out, &SpectrumLine::from(o))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<SpectrumLine>> {
    let mut lines = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SpectrumLine = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("spectra line {}: {e}", i + 1)))?;
        lines.push(parsed);
    }
    Ok(lines)
}
