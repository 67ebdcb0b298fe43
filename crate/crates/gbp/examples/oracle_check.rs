//! The conservation identity behind the push phase, watched step by step:
//! at *any* interruption point the reserves plus walk-propagated residues
//! reconstruct the exact level values, so the float residual of
//!
//!   T^(ℓ) = D^r · ( Q^(ℓ) + Σ_{t≤ℓ} (D^{−1}A)^{ℓ−t} R^(t) )
//!
//! stays at machine precision while the reserve mass grows monotonically.

use gbp::oracle::invariant_residual;
use gbp::{normalize, push, push_with_budget, synth, Result};

fn main() -> Result<()> {
    let n = 500;
    let level_count = 4;
    let g = synth::er_graph(n, 8.0, 51)?;
    let x = synth::uniform_features(n, 3, 0.0, 1.0, 52)?;
    let seed = normalize(&x, &g, 0.5)?;

    let full = push(&g, &seed, level_count, 1e-4)?;
    println!(
        "full push: {} threshold-exceeding entries, all residues now below r_max = 1e-4\n",
        full.exceeded_count()
    );

    println!("{:>8}  {:>10}  {:>18}  {:>16}", "budget", "pushes", "reserve entries", "invariant resid");
    for budget in [0u64, 1, 10, 100, 1_000, 10_000, u64::MAX] {
        let state = push_with_budget(&g, &seed, level_count, 1e-4, budget)?;
        let entries: usize =
            (0..=level_count).map(|l| (0..3).map(|k| state.reserve_entries(l, k).len()).sum::<usize>()).sum();
        let residual = invariant_residual(&g, seed.values(), 3, 0.5, &state)?;
        let shown = if budget == u64::MAX { "∞".to_string() } else { budget.to_string() };
        println!("{shown:>8}  {:>10}  {entries:>18}  {residual:>16.3e}", state.push_count());
    }
    println!("\n(the identity is exact for interrupted runs too — the residual never grows)");
    Ok(())
}
