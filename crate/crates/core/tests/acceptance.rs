//! Acceptance suite. Runs every criterion, prints one line each and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use acttail::allocation::{allocate_alphas, dims_of, AllocationConfig, AllocationPlan, ProjDims};
use acttail::harness::{build_stack, sweep, Method, StackSpec};
use acttail::tensor_store::TensorFileIndex;
use acttail::theory::{check_k_rule, check_karamata, check_stechkin, check_weak_lp_membership, KRuleConfig, WeakLpConfig};
use acttail::{
    analyze_all, hill_alpha, load_tensor_file, masked_project, save_tensor_file, topk_mask, ProjKey, ProjKind,
    WeightMatrix,
};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    o.detail = format!("{}; {:.2} s", o.detail, took.as_secs_f64());
    if let Some(limit) = limit {
        if took > limit {
            o.pass = false;
            o.detail = format!("{} exceeds {:.0} s", o.detail, limit.as_secs_f64());
        }
    }
    o
}

const KINDS: [ProjKind; 7] =
    [ProjKind::Q, ProjKind::K, ProjKind::V, ProjKind::O, ProjKind::Gate, ProjKind::Up, ProjKind::Down];

fn hill_recovery() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for alpha in [2.5, 3.0, 4.0] {
        let sample = common::pareto_sorted(10_000, alpha - 1.0, 20_240_601);
        let got = hill_alpha(&sample, 1000).expect("hill").alpha;
        worst = worst.max((got - alpha).abs());
        parts.push(format!("{alpha}->{got:.4}"));
    }
    outcome(worst <= 0.15, format!("{}; max |err| {worst:.4}", parts.join(", ")))
}

fn hill_scale_invariance() -> Outcome {
    let mut r = common::rng(77);
    let mut mismatches = 0;
    for _ in 0..100 {
        let n = r.random_range(20..400);
        let mut spec: Vec<f64> = (0..n).map(|_| (r.random::<f64>() * 8.0 - 4.0).exp()).collect();
        spec.sort_by(f64::total_cmp);
        let k = r.random_range(1..n);
        let base = hill_alpha(&spec, k).expect("hill").alpha;
        for c in [1e-6, 1.0, 1e6] {
            let scaled: Vec<f64> = spec.iter().map(|v| v * c).collect();
            if hill_alpha(&scaled, k).expect("hill").alpha.to_bits() != base.to_bits() {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("{mismatches} bitwise mismatches over 300 comparisons"))
}

fn stechkin_suite() -> Outcome {
    let d = 4096;
    let grid = [1, 4, 16, 64, 256, 1024, 2048, 4096];
    let mut violations = 0.0;
    let mut finite = 0.0;
    let mut worst: f64 = 0.0;
    for p in [2.5, 3.0, 4.0, 6.0] {
        let r = check_stechkin(p, d, &grid, 1000, 11).expect("stechkin");
        violations += r.parameters["violations"];
        finite += r.parameters["finite_violations"];
        worst = worst.max(r.measured);
    }
    outcome(
        violations == 0.0,
        format!("{violations} violations of 32000 checks, max err/bound {worst:.3}, finite-envelope violations {finite}"),
    )
}

fn karamata() -> Outcome {
    let reports = check_karamata(&[2.5, 3.0, 4.0, 2.1], 100_000, (0.01, 0.3)).expect("karamata");
    let mut ok = true;
    let mut parts = Vec::new();
    for r in &reports {
        let alpha = r.parameters["alpha"];
        let tol = if alpha < 2.2 { 0.1 } else { 0.05 };
        let near_pole = r.flags.iter().any(|f| f == "near-pole");
        ok &= (r.measured - r.predicted).abs() <= tol && near_pole == (alpha < 2.2);
        parts.push(format!("α={alpha}: {:.4} vs {:.4}", r.measured, r.predicted));
    }
    outcome(ok, parts.join(", "))
}

fn weak_lp() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for alpha in [3.0, 4.0, 6.0] {
        let r = check_weak_lp_membership(&WeakLpConfig::new(alpha, 4096, 200, 0.05, 5)).expect("weak-lp");
        ok &= (r.measured - r.predicted).abs() <= 0.1;
        parts.push(format!("α={alpha}: slope {:.3} vs {:.3}", r.measured, r.predicted));
    }
    outcome(ok, parts.join(", "))
}

fn k_rule() -> Outcome {
    let r = check_k_rule(&KRuleConfig::new(vec![3.0], vec![0.25], 4096, 0.05, 1000, 13)).expect("k-rule");
    let r = &r[0];
    outcome(
        r.measured >= 0.95,
        format!("coverage {:.3} at K = {}, flags [{}]", r.measured, r.parameters["k"], r.flags.join(",")),
    )
}

fn budget_identity(corpus: &mut Vec<AllocationPlan>) -> Outcome {
    let mut r = common::rng(2024);
    let mut worst: f64 = 0.0;
    let mut clamped_configs = 0;
    for case in 0..100 {
        let n = r.random_range(2..40);
        let mut dims = BTreeMap::new();
        let mut alphas = Vec::new();
        for i in 0..n {
            let key = ProjKey::new(i / 7, KINDS[i % 7]);
            let d_in = r.random_range(16..4096);
            let d_out = r.random_range(16..4096);
            dims.insert(key, ProjDims { d_in, params: d_in * d_out });
            alphas.push((key, r.random_range(2.05..8.0)));
        }
        let s = r.random_range(0.3..0.9);
        let mut cfg = AllocationConfig::with_target(s);
        // Every other configuration gets a ceiling that binds.
        if case % 2 == 0 {
            let top = (1.2 * s).min(0.99);
            cfg.clamp_max = s + r.random_range(0.05..0.5) * (top - s);
        }
        let plan = match allocate_alphas(&alphas, &dims, &cfg) {
            Ok(p) => p,
            Err(e) => return outcome(false, format!("case {case}: {e}")),
        };
        let (num, den) = plan
            .entries
            .iter()
            .fold((0.0, 0.0), |(a, b), e| (a + e.s * e.params as f64, b + e.params as f64));
        worst = worst.max((num / den - s).abs());
        if plan.entries.iter().any(|e| e.s == cfg.clamp_max) {
            clamped_configs += 1;
        }
        corpus.push(plan);
    }
    outcome(
        worst < 1e-9 && clamped_configs > 0,
        format!("max |Σs·d/Σd − S| {worst:.2e}; {clamped_configs} of 100 configurations hit the ceiling"),
    )
}

fn monotonicity(corpus: &[AllocationPlan]) -> Outcome {
    let mut pairs = 0usize;
    let mut bad = 0usize;
    for plan in corpus {
        for a in &plan.entries {
            for b in &plan.entries {
                let (Some(x), Some(y)) = (a.alpha, b.alpha) else { continue };
                if x <= y {
                    pairs += 1;
                    if a.s > b.s {
                        bad += 1;
                    }
                }
            }
        }
    }
    outcome(bad == 0 && pairs > 0, format!("{bad} inversions over {pairs} ordered pairs in {} plans", corpus.len()))
}

fn topk_oracle() -> Outcome {
    let mut r = common::rng(99);
    let mut worst: f64 = 0.0;
    let mut card_bad = 0;
    for _ in 0..1000 {
        let rows = r.random_range(1..64);
        let cols = r.random_range(1..128);
        let k = r.random_range(1..=cols);
        let values = common::gaussian_vec(&mut r, rows * cols);
        let mut h = common::gaussian_vec(&mut r, cols);
        // Some inputs carry exact ties.
        if r.random_bool(0.2) {
            for v in h.iter_mut() {
                *v = (*v * 2.0).round() / 2.0;
            }
        }
        let w = WeightMatrix::new("w", rows, cols, values.clone()).expect("matrix");
        let mask = topk_mask(&h, k).expect("mask");
        let kept = common::topk_reference(&h, k);
        if mask.k() != k || mask.kept_indices != kept {
            card_bad += 1;
        }
        let mut masked = vec![0.0; cols];
        for &i in &kept {
            masked[i] = h[i];
        }
        let want = common::matvec(&values, rows, cols, &masked);
        let got = masked_project(&w, &mask).expect("project");
        for (g, e) in got.iter().zip(&want) {
            worst = worst.max((g - e).abs());
        }
    }
    outcome(worst <= 1e-12 && card_bad == 0, format!("max |diff| {worst:.2e}; {card_bad} mask mismatches"))
}

fn end_to_end(corpus: &mut Vec<AllocationPlan>) -> Outcome {
    let s_grid = [0.6, 0.7, 0.8];
    let mut wins = [0usize; 3];
    let mut widening = 0;
    let mut rows_all = Vec::new();
    for seed in 0..10u64 {
        let stack = build_stack(&StackSpec::two_tier(4, 256, 2.5, 4.0, seed)).expect("stack");
        let records: Vec<_> = analyze_all(&stack, 0.5).expect("analyze").into_iter().map(|r| r.expect("record")).collect();
        let alphas: Vec<(ProjKey, f64)> = records.iter().map(|r| (r.source, r.alpha)).collect();
        for &s in &s_grid {
            corpus.push(allocate_alphas(&alphas, &dims_of(&stack), &AllocationConfig::with_target(s)).expect("plan"));
        }
        let rows = sweep(&stack, &alphas, &s_grid, &[1000 + seed], 64).expect("sweep");
        let mse = |m: Method, s: f64| {
            rows.iter().find(|r| r.method == m && r.global_sparsity == s).expect("row").final_mse
        };
        let gap = |s: f64| (mse(Method::Uniform, s) - mse(Method::Acttail, s)) / mse(Method::Uniform, s);
        for (i, &s) in s_grid.iter().enumerate() {
            if mse(Method::Acttail, s) < mse(Method::Uniform, s) {
                wins[i] += 1;
            }
        }
        if gap(0.8) > gap(0.6) {
            widening += 1;
        }
        rows_all.push((gap(0.6), gap(0.8)));
    }
    let gaps: Vec<String> = rows_all.iter().map(|(a, b)| format!("{a:.3}/{b:.3}")).collect();
    outcome(
        wins.iter().all(|&w| w >= 9) && widening >= 7,
        format!(
            "wins at S=0.6/0.7/0.8: {}/{}/{} of 10; widening {widening} of 10; gaps 0.6/0.8 [{}]",
            wins[0],
            wins[1],
            wins[2],
            gaps.join(" ")
        ),
    )
}

fn run_pipeline(dir: &Path) -> Result<(), String> {
    let steps: [&[&str]; 4] = [
        &["synth", "--seed", "21", "--layers", "2", "--d-model", "64"],
        &["analyze", "stack.safetensors", "--keep-spectra"],
        &["allocate", "spectra.jsonl", "--global-sparsity", "0.7"],
        &["sparsify-eval", "stack.safetensors", "plan.json", "--seed", "5", "--batch", "16"],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_acttail"))
            .current_dir(dir)
            .env_remove("ACTTAIL_THREADS")
            .env_remove("RUST_LOG")
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{}: {}", args[0], String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .expect("dir")
        .map(|e| e.expect("entry").path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).expect("read")))
        .collect()
}

fn determinism(corpus: &mut Vec<AllocationPlan>) -> Outcome {
    let (a, b) = (tempfile::tempdir().expect("tmp"), tempfile::tempdir().expect("tmp"));
    for d in [&a, &b] {
        if let Err(e) = run_pipeline(d.path()) {
            return outcome(false, e);
        }
    }
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    match AllocationPlan::from_json(&String::from_utf8_lossy(&sa["plan.json"])) {
        Ok(plan) => corpus.push(plan),
        Err(e) => return outcome(false, format!("plan.json: {e}")),
    }
    let names: Vec<&str> = sa.keys().map(String::as_str).collect();
    outcome(sa == sb && sa.len() >= 5, format!("artifacts [{}] identical: {}", names.join(", "), sa == sb))
}

fn tensor_round_trip() -> Outcome {
    let mut r = common::rng(50);
    let mut mats = Vec::new();
    for i in 0..50 {
        let (rows, cols) = (r.random_range(1..48), r.random_range(1..48));
        let mut values = common::gaussian_vec(&mut r, rows * cols);
        values[0] = [0.0, -0.0, f64::MIN_POSITIVE, 5e-324, f64::MAX][i % 5];
        let name = if i % 2 == 0 {
            format!("model.layers.{}.{}", i / 14, ["self_attn.q_proj.weight", "mlp.up_proj.weight"][i % 4 / 2])
        } else {
            format!("extra.{i}")
        };
        mats.push(WeightMatrix::new(format!("{name}.{i}"), rows, cols, values).expect("matrix"));
    }
    let dir = tempfile::tempdir().expect("tmp");
    let (first, second) = (dir.path().join("a.safetensors"), dir.path().join("b.safetensors"));
    save_tensor_file(&mats, &first).expect("save");
    let back = load_tensor_file(&first).expect("load");
    save_tensor_file(&back, &second).expect("save");

    let bytes = std::fs::read(&first).expect("read");
    let index = TensorFileIndex::parse(&bytes).expect("index");
    let mut mismatched = 0;
    for m in &mats {
        let entry = index.entries.iter().find(|e| e.name == m.name()).expect("entry");
        let payload = &bytes[index.payload_start + entry.begin..index.payload_start + entry.end];
        let want: Vec<u8> = m.values().iter().flat_map(|v| v.to_le_bytes()).collect();
        if payload != want.as_slice() || entry.shape != [m.rows(), m.cols()] {
            mismatched += 1;
        }
    }
    let same_matrices = back.len() == 50
        && mats.iter().all(|m| {
            back.iter().any(|b| {
                b.name() == m.name()
                    && b.values().iter().zip(m.values()).all(|(x, y)| x.to_bits() == y.to_bits())
                    && (b.rows(), b.cols()) == (m.rows(), m.cols())
            })
        });
    let same_file = bytes == std::fs::read(&second).expect("read");
    outcome(
        mismatched == 0 && same_matrices && same_file,
        format!("{mismatched} payload mismatches; loaded identical: {same_matrices}; re-save identical: {same_file}"),
    )
}

fn main() {
    let secs = Duration::from_secs;
    let mut corpus = Vec::new();
    let results = vec![
        ("hill-recovery", timed(Some(secs(1)), hill_recovery)),
        ("hill-scale-invariance", timed(None, hill_scale_invariance)),
        ("stechkin-suite", timed(Some(secs(10)), stechkin_suite)),
        ("karamata-slope", timed(Some(secs(5)), karamata)),
        ("weak-lp-membership", timed(Some(secs(30)), weak_lp)),
        ("k-rule-coverage", timed(None, k_rule)),
        ("budget-identity", timed(None, || budget_identity(&mut corpus))),
        ("end-to-end-direction", timed(Some(secs(120)), || end_to_end(&mut corpus))),
        ("determinism", timed(None, || determinism(&mut corpus))),
        ("monotonicity", timed(None, || monotonicity(&corpus))),
        ("topk-oracle", timed(None, topk_oracle)),
        ("tensor-round-trip", timed(None, tensor_round_trip)),
    ];
    let order = [1, 2, 3, 4, 5, 6, 7, 10, 11, 8, 9, 12];
    let mut sorted: Vec<_> = order.iter().zip(results).collect();
    sorted.sort_by_key(|(n, _)| **n);
    let mut failed = 0;
    for (n, (name, o)) in &sorted {
        println!("criterion {n:>2} {name:<22} {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", sorted.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
