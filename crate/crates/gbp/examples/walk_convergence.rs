//! Monte-Carlo error as a function of n_r: the sampled transition fractions
//! S^(ℓ)(s,·) approach the exact walk distribution (D^{−1}A)^ℓ rows at the
//! usual 1/√n_r rate, and the combined estimate follows.

use gbp::estimator::WeightKind;
use gbp::graph::NodeSet;
use gbp::walks::expected_transition;
use gbp::{combine, make_weights, normalize, oracle, push, sample_walks, synth};
use gbp::{PropagationConfig, Result};

fn main() -> Result<()> {
    let n = 400;
    let level_count = 3;
    let g = synth::er_graph(n, 8.0, 11)?;
    let x = synth::uniform_features(n, 4, 0.0, 1.0, 12)?;
    let targets = NodeSet::new((0..25).collect());

    let seed = normalize(&x, &g, 0.5)?;
    let state = push(&g, &seed, level_count, 1e-2)?;
    let exact_rows = expected_transition(&g, &targets, level_count)?;
    let weights = make_weights(&WeightKind::Ppr { alpha: 0.2 }, level_count)?;
    let exact_p = oracle::exact_estimate(&g, &seed, level_count, 0.5, weights.weights(), &targets, false)?;

    println!("{:>6}  {:>16}  {:>16}", "n_r", "max |S - exact|", "max |P^ - P|");
    for n_r in [1u32, 4, 16, 64, 256, 1024] {
        let walks = sample_walks(&g, &targets, n_r, level_count, 1000 + n_r as u64)?;
        let mut s_err: f64 = 0.0;
        for (level, per_target) in exact_rows.iter().enumerate() {
            for (i, row) in per_target.iter().enumerate() {
                for (u, &p) in row.iter().enumerate() {
                    s_err = s_err.max((walks.fraction(i, level, u as u32) - p).abs());
                }
            }
        }

        let cfg = PropagationConfig {
            level_count,
            conv_exponent: 0.5,
            weights: weights.clone(),
            push_threshold: 1e-2,
            walks_per_node: n_r,
            seed: 1000 + n_r as u64,
            targets: targets.clone(),
            denormalize: false,
        };
        let e = combine(&state, &walks, &g, &cfg)?;
        let p_err = e
            .values()
            .iter()
            .zip(&exact_p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);

        println!("{n_r:>6}  {s_err:>16.3e}  {p_err:>16.3e}");
    }
    println!("\n(quadrupling n_r should roughly halve both columns)");
    Ok(())
}
