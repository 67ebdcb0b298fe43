//! Reverse-push cost accounting: how the number of threshold-exceeding
//! entries scales as r_max shrinks, against the L·F/r_max cap, plus the
//! per-level footprint of the sparse state.

use gbp::{normalize, push, push_count_bound, synth, Result};

fn main() -> Result<()> {
    let n = 500;
    let level_count = 4;
    let cols = 8;
    let g = synth::er_graph(n, 12.0, 21)?;
    let x = synth::uniform_features(n, cols, 0.0, 1.0, 22)?;
    let seed = normalize(&x, &g, 0.5)?;

    println!("{:>8}  {:>10}  {:>12}  {:>10}  {:>9}", "r_max", "exceeded", "cap L*F/rmax", "pushes", "complete");
    for r_max in [3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5] {
        let state = push(&g, &seed, level_count, r_max)?;
        println!(
            "{:>8.0e}  {:>10}  {:>12}  {:>10}  {:>9}",
            r_max,
            state.exceeded_count(),
            push_count_bound(level_count, cols, r_max),
            state.push_count(),
            state.completed()
        );
    }

    let r_max = 1e-4;
    let state = push(&g, &seed, level_count, r_max)?;
    println!("\nper-level sparse footprint at r_max = {r_max:.0e} (column 0):");
    println!("{:>6}  {:>10}  {:>10}  {:>14}", "level", "reserves", "residues", "max |residue|");
    for level in 0..=level_count {
        let reserves = state.reserve_entries(level, 0).len();
        let residues = state.residue_entries(level, 0).len();
        let max_res = state
            .residue_entries(level, 0)
            .iter()
            .map(|&(_, v)| v.abs())
            .fold(0.0f64, f64::max);
        println!("{level:>6}  {reserves:>10}  {residues:>10}  {max_res:>14.3e}");
    }
    println!("\n(every remaining residue is at most r_max once the push completes)");
    Ok(())
}
