//! On-disk formats: whitespace edge lists, the binary graph cache, the
//! binary embedding format, and the TSV export — all round-tripped through
//! memory buffers.

use gbp::estimator::{read_embedding, read_embedding_tsv, write_embedding_tsv, WeightKind};
use gbp::graph::{load_cache, load_edge_list, save_cache, write_edge_list, NodeSet};
use gbp::{combine, make_weights, normalize, push, sample_walks, synth, write_embedding};
use gbp::{PropagationConfig, Result};

fn main() -> Result<()> {
    // Edge list text: one "u v" pair per line, labels need not be contiguous.
    let text = "10 20\n20 30\n30 10\n40 40\n";
    let g = load_edge_list(text.as_bytes())?;
    println!("edge list: {} nodes, {} edges (self-loops added)", g.node_count(), g.edge_count());

    let mut round = Vec::new();
    write_edge_list(&g, &mut round)?;
    let g2 = load_edge_list(round.as_slice())?;
    println!("text round trip preserves labels: {}", (0..4).all(|u| g.label_of(u) == g2.label_of(u)));

    // Binary cache: adjacency snapshot that skips text parsing on reload.
    let mut cache = Vec::new();
    save_cache(&g, &mut cache)?;
    let g3 = load_cache(cache.as_slice())?;
    println!("binary cache: {} bytes, neighbors preserved: {}", cache.len(), g3.neighbors(0) == g.neighbors(0));

    // Embedding: run a small pipeline, then write/read the binary format.
    let big = synth::er_graph(300, 6.0, 5)?;
    let x = synth::uniform_features(300, 3, -1.0, 1.0, 6)?;
    let cfg = PropagationConfig {
        level_count: 3,
        conv_exponent: 0.5,
        weights: make_weights(&WeightKind::Ppr { alpha: 0.2 }, 3)?,
        push_threshold: 1e-3,
        walks_per_node: 8,
        seed: 1,
        targets: NodeSet::new((0..50).collect()),
        denormalize: true,
    };
    let seed = normalize(&x, &big, cfg.conv_exponent)?;
    let state = push(&big, &seed, cfg.level_count, cfg.push_threshold)?;
    let walks = sample_walks(&big, &cfg.targets, cfg.walks_per_node, cfg.level_count, cfg.seed)?;
    let e = combine(&state, &walks, &big, &cfg)?;

    let mut blob = Vec::new();
    write_embedding(&e, &mut blob)?;
    let back = read_embedding(blob.as_slice())?;
    println!(
        "embedding: {} bytes for {}x{}, bit-exact round trip: {}, digest in metadata: {}",
        blob.len(),
        e.rows(),
        e.cols(),
        back == e,
        &back.meta().config_digest[..16]
    );

    // TSV export: "row_id<TAB>v0<TAB>v1..." — readable, loses the metadata.
    let mut tsv = Vec::new();
    write_embedding_tsv(&e, &mut tsv)?;
    let text_back = read_embedding_tsv(tsv.as_slice(), e.meta().clone())?;
    println!(
        "tsv: {} bytes, values preserved: {}",
        tsv.len(),
        text_back.values() == e.values()
    );
    println!("first tsv line: {}", String::from_utf8_lossy(&tsv).lines().next().unwrap_or(""));
    Ok(())
}
