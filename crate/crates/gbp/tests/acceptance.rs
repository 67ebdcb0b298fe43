//! Acceptance gate: the ten properties this crate promises, each printed as a
//! single PASS/FAIL line (run with `--nocapture` to see them all).

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gbp::classifier::{self, LabeledSplit, TrainConfig};
use gbp::estimator::{
    combine, make_weights, plan_parameters, write_embedding, EmbeddingMatrix, EmbeddingMeta,
    PropagationConfig, WeightKind,
};
use gbp::features::{normalize, FeatureMatrix};
use gbp::graph::{Graph, NodeSet};
use gbp::oracle;
use gbp::push::{push, push_count_bound, push_with_budget};
use gbp::synth;
use gbp::walks::sample_walks;

fn report(name: &str, pass: bool, detail: &str) {
    println!("acceptance {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn config(
    level_count: usize,
    r: f64,
    kind: &WeightKind,
    r_max: f64,
    n_r: u32,
    seed: u64,
    targets: NodeSet,
    denormalize: bool,
) -> PropagationConfig {
    PropagationConfig {
        level_count,
        conv_exponent: r,
        weights: make_weights(kind, level_count).unwrap(),
        push_threshold: r_max,
        walks_per_node: n_r,
        seed,
        targets,
        denormalize,
    }
}

fn estimate(g: &Graph, x: &FeatureMatrix, cfg: &PropagationConfig) -> EmbeddingMatrix {
    let seed = normalize(x, g, cfg.conv_exponent).unwrap();
    let state = push(g, &seed, cfg.level_count, cfg.push_threshold).unwrap();
    let walks =
        sample_walks(g, &cfg.targets, cfg.walks_per_node, cfg.level_count, cfg.seed).unwrap();
    combine(&state, &walks, g, cfg).unwrap()
}

/// 1. Deterministic regime: with a vanishing threshold and no walks, the
/// estimate reproduces the dense reference to 1e-8 on 50 random graphs.
#[test]
fn a01_exactness_in_the_deterministic_regime() {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..50u64 {
        let g = synth::er_graph(100, 8.0, 1000 + i).unwrap();
        let x = synth::uniform_features(100, 4, -1.0, 1.0, 2000 + i).unwrap();
        let r = [0.0, 0.5, 1.0][(i % 3) as usize];
        let kind = WeightKind::Ppr { alpha: 0.2 };
        let cfg = config(4, r, &kind, 1e-12, 0, i, NodeSet::all(&g), true);
        let e = estimate(&g, &x, &cfg);
        let exact =
            oracle::exact_propagate(&g, x.values(), 4, 4, r, cfg.weights.weights()).unwrap();
        for (a, b) in e.values().iter().zip(exact.combined()) {
            worst = worst.max((a - b).abs());
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    report(
        "01 deterministic-exactness",
        worst < 1e-8 && elapsed < 10.0,
        &format!("max |estimate - reference| = {worst:.3e} over 50 graphs in {elapsed:.2}s"),
    );
}

/// 2. Conservation: the push identity T = D^r(Q + Σ (D⁻¹A)^{ℓ−t} R) holds at
/// arbitrary interruption points, not just at completion.
#[test]
fn a02_conservation_under_interruption() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for run in 0..10u64 {
        let g = synth::er_graph(100, 7.0, 300 + run).unwrap();
        let x = synth::uniform_features(100, 3, 0.0, 1.0, 400 + run).unwrap();
        let r = [0.0, 0.37, 0.5, 1.0][(run % 4) as usize];
        let seed = normalize(&x, &g, r).unwrap();
        let full = push(&g, &seed, 4, 1e-3).unwrap();
        let scale = full.exceeded_count().max(3);
        for _ in 0..20 {
            let budget = rng.random_range(0..=scale);
            let state = push_with_budget(&g, &seed, 4, 1e-3, budget).unwrap();
            let residual =
                oracle::invariant_residual(&g, seed.values(), 3, r, &state).unwrap();
            worst = worst.max(residual);
        }
    }
    report(
        "02 conservation",
        worst < 1e-10,
        &format!("max invariant residual {worst:.3e} over 200 interruption points"),
    );
}

/// 3. Reserve sandwich: with non-negative features the scaled reserves stay
/// within [T − d^r(ℓ+1)·r_max, T + 1e-12] entrywise at every level.
#[test]
fn a03_reserve_sandwich_on_nonnegative_features() {
    let mut violations = 0usize;
    let mut checked = 0usize;
    for (fixture, r) in [(0u64, 0.0), (1, 0.5), (2, 1.0)] {
        let g = synth::er_graph(200, 8.0, 500 + fixture).unwrap();
        let x = synth::uniform_features(200, 3, 0.0, 1.0, 600 + fixture).unwrap();
        let r_max = 1e-3;
        let seed = normalize(&x, &g, r).unwrap();
        let state = push(&g, &seed, 4, r_max).unwrap();
        let d_r = g.degree_power(r);
        let mut level_exact = seed.values().to_vec();
        for level in 0..=4usize {
            if level > 0 {
                level_exact = oracle::transition_apply(&g, &level_exact, 3);
            }
            let reserve = state.reserve_dense(level);
            for u in 0..200 {
                let slack = d_r[u] * (level as f64 + 1.0) * r_max;
                for k in 0..3 {
                    let t = d_r[u] * level_exact[u * 3 + k];
                    let q = d_r[u] * reserve[u * 3 + k];
                    checked += 1;
                    if !(t - slack <= q && q <= t + 1e-12) {
                        violations += 1;
                    }
                }
            }
        }
    }
    report(
        "03 reserve-sandwich",
        violations == 0,
        &format!("{violations} violations over {checked} (node, column, level) triples"),
    );
}

/// 4. Unbiasedness: over K=1000 walk seeds the per-entry mean estimate stays
/// within 4σ̂/√K of the exact value; flagged entries are re-tested at K=10000.
#[test]
fn a04_unbiasedness_over_walk_seeds() {
    let g = synth::er_graph(100, 8.0, 700).unwrap();
    let x = synth::uniform_features(100, 3, 0.0, 1.0, 701).unwrap();
    let targets = NodeSet::new((0..20).collect());
    let kind = WeightKind::Ppr { alpha: 0.2 };
    let base = config(4, 0.5, &kind, 1e-2, 16, 0, targets.clone(), false);

    let seed_matrix = normalize(&x, &g, base.conv_exponent).unwrap();
    let state = push(&g, &seed_matrix, base.level_count, base.push_threshold).unwrap();
    let exact = oracle::exact_estimate(
        &g,
        &seed_matrix,
        base.level_count,
        base.conv_exponent,
        base.weights.weights(),
        &targets,
        false,
    )
    .unwrap();

    let sweep = |first_seed: u64, k: u32| -> (Vec<f64>, Vec<f64>) {
        let entries = exact.len();
        let mut mean = vec![0.0; entries];
        let mut m2 = vec![0.0; entries];
        for i in 0..k {
            let cfg = PropagationConfig { seed: first_seed + i as u64, ..base.clone() };
            let walks =
                sample_walks(&g, &targets, cfg.walks_per_node, cfg.level_count, cfg.seed)
                    .unwrap();
            let e = combine(&state, &walks, &g, &cfg).unwrap();
            for (j, &v) in e.values().iter().enumerate() {
                let delta = v - mean[j];
                mean[j] += delta / (i as f64 + 1.0);
                m2[j] += delta * (v - mean[j]);
            }
        }
        let kf = k as f64;
        let sd: Vec<f64> = m2.iter().map(|&s| (s / (kf - 1.0)).sqrt()).collect();
        (mean, sd)
    };

    let k1 = 1000u32;
    let (mean, sd) = sweep(1, k1);
    let flagged: Vec<usize> = (0..exact.len())
        .filter(|&j| (mean[j] - exact[j]).abs() > 4.0 * sd[j] / (k1 as f64).sqrt() + 1e-9)
        .collect();

    let mut still_bad = 0usize;
    if !flagged.is_empty() {
        let k2 = 10_000u32;
        let (mean2, sd2) = sweep(1_000_000, k2);
        for &j in &flagged {
            if (mean2[j] - exact[j]).abs() > 4.0 * sd2[j] / (k2 as f64).sqrt() + 1e-9 {
                still_bad += 1;
            }
        }
    }
    let pass_fraction = 1.0 - still_bad as f64 / exact.len() as f64;
    report(
        "04 unbiasedness",
        pass_fraction >= 0.999,
        &format!(
            "{} of {} entries flagged at K=1000, {} confirmed off at K=10000",
            flagged.len(),
            exact.len(),
            still_bad
        ),
    );
}

/// 5. Error-budget tail: with planned (r_max, n_r) from ε, the fraction of
/// entries beyond d(s)^r·ε stays within the 1/n tail at 95% confidence
/// aggregated over 20 runs.
#[test]
fn a05_error_budget_tail_bound() {
    let g = synth::er_graph(500, 8.0, 800).unwrap();
    let x = synth::uniform_features(500, 4, 0.0, 1.0, 801).unwrap();
    let targets = NodeSet::new((0..100).collect());
    let epsilon = 0.05;
    let planned = plan_parameters(&g, &targets, 4, epsilon).unwrap();
    let kind = WeightKind::Ppr { alpha: 0.2 };
    let base = config(
        4,
        0.5,
        &kind,
        planned.push_threshold,
        planned.walks_per_node,
        0,
        targets.clone(),
        false,
    );

    let seed_matrix = normalize(&x, &g, base.conv_exponent).unwrap();
    let state = push(&g, &seed_matrix, base.level_count, base.push_threshold).unwrap();
    let exact = oracle::exact_estimate(
        &g,
        &seed_matrix,
        base.level_count,
        base.conv_exponent,
        base.weights.weights(),
        &targets,
        false,
    )
    .unwrap();
    let d_r = g.degree_power(base.conv_exponent);

    let runs = 20u64;
    let mut total_violations = 0u64;
    for run in 0..runs {
        let cfg = PropagationConfig { seed: 10_000 + run, ..base.clone() };
        let walks =
            sample_walks(&g, &targets, cfg.walks_per_node, cfg.level_count, cfg.seed).unwrap();
        let e = combine(&state, &walks, &g, &cfg).unwrap();
        for (i, &s) in targets.ids().iter().enumerate() {
            for k in 0..4 {
                let dev = (e.values()[i * 4 + k] - exact[i * 4 + k]).abs();
                if dev > d_r[s as usize] * epsilon {
                    total_violations += 1;
                }
            }
        }
    }
    let total_entries = runs * targets.len() as u64 * 4;
    let p = 1.0 / g.node_count() as f64;
    let allowed = (total_entries as f64 * p
        + 1.645 * (total_entries as f64 * p * (1.0 - p)).sqrt())
    .ceil() as u64;
    report(
        "05 error-budget-tail",
        total_violations <= allowed,
        &format!(
            "{total_violations} of {total_entries} entries beyond d^r*eps \
             (allowed {allowed}; planned r_max={:.4e}, n_r={})",
            planned.push_threshold, planned.walks_per_node
        ),
    );
}

/// 6. Cost caps: threshold-exceeding push entries never pass ceil(L·F/r_max),
/// and the walk-step counter equals |V_t|·n_r·L exactly.
#[test]
fn a06_cost_caps() {
    let mut ok = true;
    let mut detail = String::new();
    for (i, r_max) in [1e-2, 1e-3].into_iter().enumerate() {
        let g = synth::er_graph(300, 8.0, 900 + i as u64).unwrap();
        let x = synth::uniform_features(300, 3, 0.0, 1.0, 901).unwrap();
        let seed = normalize(&x, &g, 0.5).unwrap();
        let state = push(&g, &seed, 4, r_max).unwrap();
        let cap = push_count_bound(4, 3, r_max);
        if state.exceeded_count() > cap {
            ok = false;
        }
        detail.push_str(&format!(
            "r_max={r_max}: exceeded {} <= cap {cap}; ",
            state.exceeded_count()
        ));

        let targets = NodeSet::new((0..150).collect());
        let walks = sample_walks(&g, &targets, 7, 4, 5).unwrap();
        let expected = 150 * 7 * 4;
        if walks.steps_taken() != expected {
            ok = false;
        }
        detail.push_str(&format!("steps {} == {expected}; ", walks.steps_taken()));
    }
    report("06 cost-caps", ok, detail.trim_end_matches("; "));
}

/// 7. Column sums: non-negative seeds keep every reserve column at total mass
/// at most 1 (+1e-12) on every level.
#[test]
fn a07_reserve_column_sums() {
    let mut worst: f64 = f64::NEG_INFINITY;
    for (i, r) in [0.0, 0.5, 1.0].into_iter().enumerate() {
        let g = synth::er_graph(250, 7.0, 950 + i as u64).unwrap();
        let x = synth::uniform_features(250, 3, 0.0, 1.0, 951).unwrap();
        let seed = normalize(&x, &g, r).unwrap();
        let state = push(&g, &seed, 4, 5e-4).unwrap();
        for level in 0..=4 {
            for k in 0..3 {
                let sum: f64 =
                    state.reserve_entries(level, k).iter().map(|&(_, v)| v).sum();
                worst = worst.max(sum);
            }
        }
    }
    report(
        "07 reserve-column-sums",
        worst <= 1.0 + 1e-12,
        &format!("max column sum {worst:.12}"),
    );
}

/// 8. Determinism: identical seeds produce byte-identical embedding files
/// under thread pools of size 1, 2, and 8.
#[test]
fn a08_byte_identical_across_thread_pools() {
    let g = synth::er_graph(150, 6.0, 1100).unwrap();
    let x = synth::uniform_features(150, 3, -1.0, 1.0, 1101).unwrap();
    let kind = WeightKind::Ppr { alpha: 0.15 };
    let cfg = config(3, 0.5, &kind, 1e-3, 5, 77, NodeSet::all(&g), true);
    let mut blobs: Vec<Vec<u8>> = Vec::new();
    for threads in [1usize, 2, 8] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let e = pool.install(|| estimate(&g, &x, &cfg));
        let mut bytes = Vec::new();
        write_embedding(&e, &mut bytes).unwrap();
        blobs.push(bytes);
    }
    let pass = blobs[0] == blobs[1] && blobs[0] == blobs[2];
    report(
        "08 determinism",
        pass,
        &format!("{} bytes, pools of 1/2/8 threads", blobs[0].len()),
    );
}

/// 9. End-to-end on a planted partition: propagation lifts noisy one-hot
/// block indicators to >= 0.95 test accuracy with 100 train labels, while the
/// same head on raw features is asserted to stay at <= 0.75.
#[test]
fn a09_end_to_end_planted_partition() {
    let started = Instant::now();
    let n = 2000usize;
    let (g, blocks) = synth::sbm(n, 2, 0.02, 0.002, 1200).unwrap();
    let x = synth::noisy_onehot(&blocks, 2, 0.1, 1201).unwrap();

    let kind = WeightKind::Ppr { alpha: 0.1 };
    let cfg = config(4, 0.5, &kind, 1e-5, 0, 3, NodeSet::all(&g), true);
    let propagated = estimate(&g, &x, &cfg);

    let meta = EmbeddingMeta {
        config_digest: "raw-features".into(),
        denormalized: true,
        column_norms: vec![1.0, 1.0],
        level_count: 0,
        conv_exponent: 0.0,
        push_threshold: 1.0,
        walks_per_node: 0,
        seed: 0,
        weights: vec![1.0],
    };
    let raw =
        EmbeddingMatrix::new((0..n as u64).collect(), 2, x.values().to_vec(), meta).unwrap();

    // stratified split: 50 train + 100 val per block, the rest test
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut counts = [0usize; 2];
    for (u, &b) in blocks.iter().enumerate() {
        let c = &mut counts[b as usize];
        match *c {
            0..=49 => train.push(u as u64),
            50..=149 => val.push(u as u64),
            _ => test.push(u as u64),
        }
        *c += 1;
    }
    let labels = blocks.iter().enumerate().map(|(u, &b)| (u as u64, b as usize)).collect();
    let split = LabeledSplit::new(train, val, test, labels, 2).unwrap();
    let tc = TrainConfig { seed: 7, ..TrainConfig::default() };

    let accuracy = |e: &EmbeddingMatrix| {
        let (model, _) = classifier::train(e, &split, &tc).unwrap();
        let (_, acc) = classifier::evaluate(&model, e, &split.test, &split.labels).unwrap();
        acc
    };
    let propagated_acc = accuracy(&propagated);
    let raw_acc = accuracy(&raw);
    let elapsed = started.elapsed().as_secs_f64();

    report(
        "09 end-to-end-planted-partition",
        propagated_acc >= 0.95 && raw_acc <= 0.75 && elapsed < 60.0,
        &format!(
            "propagated test accuracy {propagated_acc:.4} (need >= 0.95), \
             raw {raw_acc:.4} (need <= 0.75), {elapsed:.1}s"
        ),
    );
}

/// 10. Gradient check: analytic gradients match central differences to 1e-6
/// relative, with and without a hidden layer.
#[test]
fn a10_gradient_check() {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        worst = worst.max(classifier::gradient_check(5, 4, 3, 0, seed));
        worst = worst.max(classifier::gradient_check(5, 4, 3, 8, 100 + seed));
    }
    report(
        "10 gradient-check",
        worst < 1e-6,
        &format!("max relative error {worst:.3e} over 10 random instances"),
    );
}
