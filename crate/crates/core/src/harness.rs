//! Desk-scale end-to-end experiment on synthetic layer stacks.
//!
//! Each layer composes the seven projections into a proxy block with no
//! softmax or cache:
//!
//! ```text
//! a = (W_q·T(h) + W_k·T(h) + W_v·T(h)) / 3
//! h ← h + W_o·T(a)
//! u = swish(W_gate·T(h)) ⊙ (W_up·T(h))
//! h ← h + W_down·T(u)
//! ```
//!
//! where `T` is the TopK mask with that projection's own `K`. The dense pass
//! runs the same code with `K = d_in`, so a zero-sparsity plan reproduces it
//! bit for bit.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{allocate_alphas, dims_of, uniform_plan, AllocationConfig, AllocationPlan};
use crate::error::{domain, Result};
use crate::sparsify::{masked_project, topk_mask};
use crate::spectral::SpectrumRecord;
use crate::tensor_store::{synth_powerlaw_matrix, ProjKey, ProjKind, WeightMatrix};

/// Shapes and target exponents of a synthetic stack.
#[derive(Debug, Clone, PartialEq)]
pub struct StackSpec {
    pub layers: usize,
    /// `(d_out, d_in)` per projection kind.
    pub shapes: BTreeMap<ProjKind, (usize, usize)>,
    pub alpha_profile: BTreeMap<ProjKey, f64>,
    pub seed: u64,
}

impl StackSpec {
    /// Square attention projections of width `d_model`; gate/up widen to
    /// `4·d_model` and down maps back.
    pub fn standard_shapes(d_model: usize) -> BTreeMap<ProjKind, (usize, usize)> {
        let wide = 4 * d_model;
        ProjKind::BLOCK
            .iter()
            .map(|&p| {
                let shape = match p {
                    ProjKind::Gate | ProjKind::Up => (wide, d_model),
                    ProjKind::Down => (d_model, wide),
                    _ => (d_model, d_model),
                };
                (p, shape)
            })
            .collect()
    }

    /// One exponent for every attention projection and another for every
    /// MLP projection.
    pub fn two_tier(layers: usize, d_model: usize, alpha_attn: f64, alpha_mlp: f64, seed: u64) -> Self {
        let alpha_profile = (0..layers)
            .flat_map(|l| {
                ProjKind::BLOCK
                    .iter()
                    .map(move |&p| (ProjKey::new(l, p), if p.is_attention() { alpha_attn } else { alpha_mlp }))
            })
            .collect();
        Self { layers, shapes: Self::standard_shapes(d_model), alpha_profile, seed }
    }

    pub fn d_model(&self) -> usize {
        self.shapes.get(&ProjKind::Q).map_or(0, |s| s.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(domain("stack needs at least one layer"));
        }
        let shape = |p: ProjKind| self.shapes.get(&p).copied().ok_or_else(|| domain(format!("no shape for `{p}`")));
        let (d, _) = shape(ProjKind::Q)?;
        let (m, _) = shape(ProjKind::Gate)?;
        if d < 2 || m < 2 {
            return Err(domain(format!("widths must be at least 2, got d_model = {d}, mlp = {m}")));
        }
        for p in ProjKind::BLOCK {
            let want = match p {
                ProjKind::Gate | ProjKind::Up => (m, d),
                ProjKind::Down => (d, m),
                _ => (d, d),
            };
            if shape(p)? != want {
                return Err(domain(format!("`{p}` shape {:?} does not compose, expected {want:?}", shape(p)?)));
            }
        }
        for l in 0..self.layers {
            for p in ProjKind::BLOCK {
                let key = ProjKey::new(l, p);
                match self.alpha_profile.get(&key) {
                    Some(a) if a.is_finite() && *a > 2.0 => {}
                    Some(a) => return Err(domain(format!("{key}: target α = {a} must be > 2"))),
                    None => return Err(domain(format!("{key}: no target α"))),
                }
            }
        }
        if self.alpha_profile.len() != self.layers * ProjKind::BLOCK.len() {
            return Err(domain("α profile names projections outside the stack"));
        }
        Ok(())
    }
}

/// LLaMA-style tensor name for a stack projection.
pub fn stack_name(key: ProjKey) -> String {
    let group = if key.proj.is_attention() { "self_attn" } else { "mlp" };
    format!("model.layers.{}.{group}.{}_proj.weight", key.layer, key.proj)
}

fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Synthetic stack in layer-major, block order. Each matrix draws from its
/// own seed, so entries do not depend on build order.
pub fn build_stack(spec: &StackSpec) -> Result<Vec<WeightMatrix>> {
    spec.validate()?;
    let keys: Vec<ProjKey> = (0..spec.layers)
        .flat_map(|l| ProjKind::BLOCK.iter().map(move |&p| ProjKey::new(l, p)))
        .collect();
    keys.par_iter()
        .map(|&key| {
            let (rows, cols) = spec.shapes[&key.proj];
            let tag = (key.layer as u64) << 8 | key.proj as u64;
            let w = synth_powerlaw_matrix(rows, cols, spec.alpha_profile[&key], mix(spec.seed, tag))?;
            Ok(w.renamed(stack_name(key)))
        })
        .collect()
}

/// Validated view of a stack as layers of seven projections.
#[derive(Debug, Clone)]
pub struct StackView<'a> {
    layers: Vec<[&'a WeightMatrix; 7]>,
    d_model: usize,
}

impl<'a> StackView<'a> {
    pub fn new(stack: &'a [WeightMatrix]) -> Result<Self> {
        let mut by_key: BTreeMap<ProjKey, &WeightMatrix> = BTreeMap::new();
        for w in stack {
            if w.proj() == ProjKind::Other {
                return Err(domain(format!("`{}` is not a block projection", w.name())));
            }
            if by_key.insert(w.key(), w).is_some() {
                return Err(domain(format!("duplicate projection {}", w.key())));
            }
        }
        let n_layers = by_key.keys().map(|k| k.layer + 1).max().unwrap_or(0);
        if n_layers == 0 {
            return Err(domain("empty stack"));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let get = |p: ProjKind| {
                by_key.get(&ProjKey::new(l, p)).copied().ok_or_else(|| domain(format!("stack is missing {l}.{p}")))
            };
            layers.push([
                get(ProjKind::Q)?,
                get(ProjKind::K)?,
                get(ProjKind::V)?,
                get(ProjKind::O)?,
                get(ProjKind::Gate)?,
                get(ProjKind::Up)?,
                get(ProjKind::Down)?,
            ]);
        }
        let d = layers[0][0].rows();
        let m = layers[0][4].rows();
        for layer in &layers {
            for w in layer {
                let want = match w.proj() {
                    ProjKind::Gate | ProjKind::Up => (m, d),
                    ProjKind::Down => (d, m),
                    _ => (d, d),
                };
                if (w.rows(), w.cols()) != want {
                    return Err(domain(format!(
                        "`{}` has shape [{}, {}], expected {want:?}",
                        w.name(),
                        w.rows(),
                        w.cols()
                    )));
                }
            }
        }
        Ok(Self { layers, d_model: d })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn keys(&self) -> impl Iterator<Item = ProjKey> + '_ {
        self.layers.iter().flat_map(|l| l.iter().map(|w| w.key()))
    }

    /// Keep counts for every projection, checked against the stack.
    pub fn keep_counts(&self, plan: &AllocationPlan) -> Result<Vec<[usize; 7]>> {
        let counts = plan.keep_counts();
        let missing: Vec<String> = self.keys().filter(|k| !counts.contains_key(k)).map(|k| k.to_string()).collect();
        if !missing.is_empty() {
            return Err(domain(format!("plan has no entry for {}", missing.join(", "))));
        }
        self.layers
            .iter()
            .map(|layer| {
                let mut ks = [0; 7];
                for (slot, w) in ks.iter_mut().zip(layer) {
                    let k = counts[&w.key()];
                    if k > w.cols() {
                        return Err(domain(format!("{}: K = {k} exceeds d_in = {}", w.key(), w.cols())));
                    }
                    *slot = k;
                }
                Ok(ks)
            })
            .collect()
    }

    pub fn dense_keep_counts(&self) -> Vec<[usize; 7]> {
        self.layers.iter().map(|layer| layer.map(|w| w.cols())).collect()
    }

    /// Hidden state after every layer for one input vector.
    fn forward_one(&self, keeps: &[[usize; 7]], h0: &[f64]) -> Result<Vec<Vec<f64>>> {
        let project = |w: &WeightMatrix, x: &[f64], k: usize| masked_project(w, &topk_mask(x, k)?);
        let mut h = h0.to_vec();
        let mut trace = Vec::with_capacity(self.layers.len());
        for (layer, ks) in self.layers.iter().zip(keeps) {
            let q = project(layer[0], &h, ks[0])?;
            let k = project(layer[1], &h, ks[1])?;
            let v = project(layer[2], &h, ks[2])?;
            let a: Vec<f64> = q.iter().zip(&k).zip(&v).map(|((q, k), v)| (q + k + v) / 3.0).collect();
            let o = project(layer[3], &a, ks[3])?;
            h.iter_mut().zip(&o).for_each(|(h, o)| *h += o);

            let g = project(layer[4], &h, ks[4])?;
            let up = project(layer[5], &h, ks[5])?;
            let u: Vec<f64> = g.iter().zip(&up).map(|(g, up)| swish(*g) * up).collect();
            let down = project(layer[6], &u, ks[6])?;
            h.iter_mut().zip(&down).for_each(|(h, d)| *h += d);
            trace.push(h.clone());
        }
        Ok(trace)
    }

    /// Per-layer hidden states for a batch: `trace[layer][sample]`.
    pub fn forward(&self, keeps: &[[usize; 7]], inputs: &[Vec<f64>]) -> Result<Vec<Vec<Vec<f64>>>> {
        if keeps.len() != self.layers.len() {
            return Err(domain("one keep-count row per layer required"));
        }
        if let Some(bad) = inputs.iter().find(|x| x.len() != self.d_model) {
            return Err(domain(format!("input width {} does not match d_model = {}", bad.len(), self.d_model)));
        }
        let per_sample: Vec<Vec<Vec<f64>>> =
            inputs.par_iter().map(|x| self.forward_one(keeps, x)).collect::<Result<_>>()?;
        Ok((0..self.layers.len())
            .map(|l| per_sample.iter().map(|t| t[l].clone()).collect())
            .collect())
    }
}

/// `g·σ(g)` with `σ` the logistic function.
pub fn swish(g: f64) -> f64 {
    g / (1.0 + (-g).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dense,
    Uniform,
    Acttail,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dense => "dense",
            Method::Uniform => "uniform",
            Method::Acttail => "acttail",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Output error of one sparsified pass against the dense pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub method: Method,
    #[serde(rename = "S")]
    pub global_sparsity: f64,
    pub seed: u64,
    pub layer_mse: Vec<f64>,
    pub final_mse: f64,
    pub rel_err: f64,
    pub cosine: f64,
    #[serde(rename = "achieved_S")]
    pub achieved_s: f64,
}

fn compare(
    method: Method,
    global_sparsity: f64,
    seed: u64,
    achieved_s: f64,
    dense: &[Vec<Vec<f64>>],
    trace: &[Vec<Vec<f64>>],
) -> ExperimentResult {
    let mse = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        let (mut sum, mut n) = (0.0, 0usize);
        for (x, y) in a.iter().zip(b) {
            for (p, q) in x.iter().zip(y) {
                sum += (p - q) * (p - q);
                n += 1;
            }
        }
        if n == 0 { 0.0 } else { sum / n as f64 }
    };
    let layer_mse: Vec<f64> = dense.iter().zip(trace).map(|(d, t)| mse(d, t)).collect();
    let (last_dense, last) = (dense.last().expect("non-empty stack"), trace.last().expect("non-empty stack"));
    let (mut diff, mut norm) = (0.0, 0.0);
    let mut cos_sum = 0.0;
    for (d, t) in last_dense.iter().zip(last) {
        let (mut dot, mut nd, mut nt) = (0.0, 0.0, 0.0);
        for (p, q) in d.iter().zip(t) {
            diff += (p - q) * (p - q);
            norm += p * p;
            dot += p * q;
            nd += p * p;
            nt += q * q;
        }
        cos_sum += if nd == 0.0 && nt == 0.0 { 1.0 } else { dot / (nd.sqrt() * nt.sqrt()) };
    }
    let n = last_dense.len().max(1) as f64;
    ExperimentResult {
        method,
        global_sparsity,
        seed,
        final_mse: *layer_mse.last().expect("non-empty stack"),
        layer_mse,
        rel_err: if norm > 0.0 { (diff / norm).sqrt() } else { diff.sqrt() },
        cosine: cos_sum / n,
        achieved_s,
    }
}

/// Runs one plan against the dense pass on the same inputs.
pub fn run_experiment(
    stack: &[WeightMatrix],
    plan: &AllocationPlan,
    inputs: &[Vec<f64>],
    method: Method,
    seed: u64,
) -> Result<ExperimentResult> {
    let view = StackView::new(stack)?;
    let keeps = view.keep_counts(plan)?;
    let dense = view.forward(&view.dense_keep_counts(), inputs)?;
    let trace = view.forward(&keeps, inputs)?;
    Ok(compare(method, plan.global_sparsity, seed, plan.achieved_s, &dense, &trace))
}

/// Dense, uniform and ActTail rows for the given plans, sharing one dense
/// pass. The uniform baseline is built at the ActTail plan's target.
pub fn evaluate_plan(
    stack: &[WeightMatrix],
    plan: &AllocationPlan,
    inputs: &[Vec<f64>],
    seed: u64,
) -> Result<Vec<ExperimentResult>> {
    let view = StackView::new(stack)?;
    let uniform = uniform_plan(&dims_of(stack), plan.global_sparsity)?;
    let dense = view.forward(&view.dense_keep_counts(), inputs)?;
    let mut rows = vec![compare(Method::Dense, plan.global_sparsity, seed, 0.0, &dense, &dense)];
    for (method, p) in [(Method::Uniform, &uniform), (Method::Acttail, plan)] {
        let trace = view.forward(&view.keep_counts(p)?, inputs)?;
        rows.push(compare(method, p.global_sparsity, seed, p.achieved_s, &dense, &trace));
    }
    Ok(rows)
}

/// Seeded standard Gaussian batch.
pub fn gaussian_inputs(batch: usize, d_model: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..batch).map(|_| (0..d_model).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

/// Default evaluation batch size.
pub const DEFAULT_BATCH: usize = 64;

/// Full sparsity × seed grid. Rows are ordered by `S`, then seed, then
/// method; the dense pass is shared across `S` for a seed.
pub fn sweep(
    stack: &[WeightMatrix],
    alphas: &[(ProjKey, f64)],
    s_grid: &[f64],
    seeds: &[u64],
    batch: usize,
) -> Result<Vec<ExperimentResult>> {
    if s_grid.is_empty() || seeds.is_empty() || batch == 0 {
        return Err(domain("sweep needs a non-empty sparsity grid, seed list and batch"));
    }
    let view = StackView::new(stack)?;
    let dims = dims_of(stack);
    let plans: Vec<(AllocationPlan, AllocationPlan)> = s_grid
        .iter()
        .map(|&s| Ok((uniform_plan(&dims, s)?, allocate_alphas(alphas, &dims, &AllocationConfig::with_target(s))?)))
        .collect::<Result<_>>()?;
    let per_seed: Vec<Vec<Vec<ExperimentResult>>> = seeds
        .par_iter()
        .map(|&seed| {
            let inputs = gaussian_inputs(batch, view.d_model(), seed);
            let dense = view.forward(&view.dense_keep_counts(), &inputs)?;
            s_grid
                .iter()
                .zip(&plans)
                .map(|(&s, (uniform, acttail))| {
                    let mut rows = vec![compare(Method::Dense, s, seed, 0.0, &dense, &dense)];
                    for (method, p) in [(Method::Uniform, uniform), (Method::Acttail, acttail)] {
                        let trace = view.forward(&view.keep_counts(p)?, &inputs)?;
                        rows.push(compare(method, s, seed, p.achieved_s, &dense, &trace));
                    }
                    Ok(rows)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(s_grid.len() * seeds.len() * 3);
    for si in 0..s_grid.len() {
        for seed_rows in &per_seed {
            out.extend(seed_rows[si].iter().cloned());
        }
    }
    Ok(out)
}

/// Describes every place where an error metric drops as `S` grows for a
/// fixed method and seed. Empty when degradation is monotone.
pub fn monotonicity_violations(rows: &[ExperimentResult]) -> Vec<String> {
    let mut groups: BTreeMap<(Method, u64), Vec<&ExperimentResult>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.method != Method::Dense) {
        groups.entry((r.method, r.seed)).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((method, seed), mut g) in groups {
        g.sort_by(|a, b| a.global_sparsity.total_cmp(&b.global_sparsity));
        for pair in g.windows(2) {
            if pair[1].final_mse < pair[0].final_mse {
                out.push(format!(
                    "{method} seed {seed}: final_mse fell from {} at S = {} to {} at S = {}",
                    pair[0].final_mse, pair[0].global_sparsity, pair[1].final_mse, pair[1].global_sparsity
                ));
            }
        }
    }
    out
}

/// `(MSE_uniform − MSE_acttail) / MSE_uniform` per `(seed, S)`.
pub fn relative_gaps(rows: &[ExperimentResult]) -> BTreeMap<(u64, u64), f64> {
    let mut uniform = BTreeMap::new();
    let mut acttail = BTreeMap::new();
    for r in rows {
        let key = (r.seed, r.global_sparsity.to_bits());
        match r.method {
            Method::Uniform => uniform.insert(key, r.final_mse),
            Method::Acttail => acttail.insert(key, r.final_mse),
            Method::Dense => None,
        };
    }
    uniform
        .into_iter()
        .filter_map(|(k, u)| acttail.get(&k).map(|a| (k, if u > 0.0 { (u - a) / u } else { 0.0 })))
        .collect()
}

fn layer_count(rows: &[ExperimentResult]) -> usize {
    rows.iter().map(|r| r.layer_mse.len()).max().unwrap_or(0)
}

pub fn write_results_csv<W: Write>(out: W, rows: &[ExperimentResult]) -> Result<()> {
    let layers = layer_count(rows);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = vec!["method".into(), "S".into(), "seed".into()];
    header.extend((0..layers).map(|l| format!("layer{l}_mse")));
    header.extend(["final_mse", "rel_err", "cosine", "achieved_S"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.method.to_string(), r.global_sparsity.to_string(), r.seed.to_string()];
        rec.extend((0..layers).map(|l| r.layer_mse.get(l).map_or(String::new(), |v| v.to_string())));
        rec.extend([r.final_mse, r.rel_err, r.cosine, r.achieved_s].map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_results_json<W: Write>(mut out: W, rows: &[ExperimentResult]) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, rows)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// One row of the α-versus-sparsity table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaSparsityRow {
    /// Position in layer-then-module order, for plotting.
    pub index: usize,
    pub layer: usize,
    pub proj: ProjKind,
    pub alpha: f64,
    pub s: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub d_in: usize,
    pub group: &'static str,
}

/// Joins fitted exponents with plan sparsities, ordered by layer then
/// module type.
pub fn alpha_sparsity_report(records: &[SpectrumRecord], plan: &AllocationPlan) -> Result<Vec<AlphaSparsityRow>> {
    let pairs: Vec<(ProjKey, f64)> = records.iter().map(|r| (r.source, r.alpha)).collect();
    alpha_sparsity_rows(&pairs, plan)
}

/// [`alpha_sparsity_report`] on bare `(key, α)` pairs.
pub fn alpha_sparsity_rows(pairs: &[(ProjKey, f64)], plan: &AllocationPlan) -> Result<Vec<AlphaSparsityRow>> {
    let alphas: BTreeMap<ProjKey, f64> = pairs.iter().copied().collect();
    if alphas.len() != pairs.len() {
        return Err(domain("duplicate projection among spectrum records"));
    }
    let plan_keys: BTreeSet<ProjKey> = plan.entries.iter().map(|e| e.key()).collect();
    let record_keys: BTreeSet<ProjKey> = alphas.keys().copied().collect();
    if plan_keys != record_keys {
        let only_rec: Vec<String> = record_keys.difference(&plan_keys).map(|k| k.to_string()).collect();
        let only_plan: Vec<String> = plan_keys.difference(&record_keys).map(|k| k.to_string()).collect();
        return Err(domain(format!(
            "key mismatch: records only [{}], plan only [{}]",
            only_rec.join(", "),
            only_plan.join(", ")
        )));
    }
    let mut entries: Vec<_> = plan.entries.iter().collect();
    entries.sort_by_key(|e| e.key());
    Ok(entries
        .into_iter()
        .enumerate()
        .map(|(index, e)| AlphaSparsityRow {
            index,
            layer: e.layer,
            proj: e.proj,
            alpha: alphas[&e.key()],
            s: e.s,
            k: e.k,
            d_in: e.d_in,
            group: if e.proj.is_attention() {
                "attn"
            } else if e.proj.is_mlp() {
                "mlp"
            } else {
                "other"
            },
        })
        .collect())
}

pub fn write_alpha_sparsity_tsv<W: Write>(out: W, rows: &[AlphaSparsityRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
