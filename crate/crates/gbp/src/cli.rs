//! Command-line front door: precompute embeddings, verify runs against the
//! dense oracle, benchmark with operation counters, train the head.
//!
//! Option resolution is layered per key: command-line flag > config file
//! (`--config`, "key=value" lines) > default, with `GBP_THREADS` acting as
//! the default layer for `--threads`. The weight-scheme keys (alpha /
//! last-hop / weights) are resolved as a group: whichever layer sets any of
//! them supplies the whole scheme, so a `--last-hop` flag cleanly overrides
//! an `alpha=` line in the config file.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 validation/verification.

use std::env;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::classifier::{self, LabeledSplit, TrainConfig};
use crate::error::Error;
use crate::estimator::{
    combine, make_weights, plan_parameters, read_embedding, write_embedding,
    write_embedding_tsv, EmbeddingMatrix, PropagationConfig, WeightKind,
};
use crate::features::{load_features, normalize, FeatureMatrix, NormalizedResidueSeed};
use crate::graph::{load_cache, load_edge_list, Graph, NodeSet};
use crate::oracle;
use crate::push::{push, push_count_bound, PushState};
use crate::walks::{sample_walks, WalkFrequencies};

#[derive(Debug)]
pub enum CliError {
    /// Missing/contradictory options: exit 1 with a usage hint.
    Usage(String),
    /// Anything from the library: exit via [`Error::exit_code`].
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(Error::Io(e))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "gbp", version, about = "bidirectional propagation embeddings for graph learning")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute an embedding file plus a run manifest
    Precompute(PrecomputeArgs),
    /// Check a small-graph run against the dense oracle
    Verify(VerifyArgs),
    /// Run the pipeline and report counters and timings
    Bench(BenchArgs),
    /// Train the classifier head on a precomputed embedding
    Train(TrainArgs),
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// config file with "key=value" lines; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// graph file: whitespace edge list, or a GBPG binary cache
    #[arg(long)]
    graph: Option<PathBuf>,
    /// feature matrix file
    #[arg(long)]
    features: Option<PathBuf>,
    /// target nodes: a file with one node id per line, or "all"
    #[arg(long)]
    targets: Option<String>,
    /// number of propagation levels
    #[arg(long = "L")]
    level_count: Option<usize>,
    /// convolution exponent in [0,1]
    #[arg(long)]
    r: Option<f64>,
    /// push threshold r_max
    #[arg(long)]
    rmax: Option<f64>,
    /// random walks per target node
    #[arg(long)]
    nr: Option<u32>,
    /// master seed for the walk phase
    #[arg(long)]
    seed: Option<u64>,
    /// PPR weights w_l = alpha*(1-alpha)^l
    #[arg(long)]
    alpha: Option<f64>,
    /// put all weight on the last level
    #[arg(long, action = ArgAction::SetTrue)]
    last_hop: bool,
    /// comma-separated custom weights w_0,...,w_L
    #[arg(long)]
    weights: Option<String>,
    /// scale output columns back by their feature-column norms
    #[arg(long, action = ArgAction::SetTrue)]
    denormalize: bool,
    /// worker threads (default: GBP_THREADS, then all cores)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct PrecomputeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// output path; ".tsv" suffix selects text output, anything else GBPE
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// repeat the run over this many seeds and test the empirical mean
    #[arg(long)]
    trials: Option<u32>,
    /// plan (r_max, n_r) from this error budget and test the tail bound
    #[arg(long)]
    epsilon: Option<f64>,
    /// compare the run against a previously written embedding file
    #[arg(long)]
    compare: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// write the run manifest here
    #[arg(long)]
    out: Option<PathBuf>,
    /// fail (exit 3) if any counter exceeds its theoretical cap
    #[arg(long, action = ArgAction::SetTrue)]
    assert_bounds: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// GBPE embedding file
    #[arg(long)]
    embedding: PathBuf,
    /// label file: "row_id<TAB>class" lines
    #[arg(long)]
    labels: PathBuf,
    /// split file prefix: <prefix>.train / .val / .test, one row id per line
    #[arg(long)]
    splits: PathBuf,
    /// metrics TSV path (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    /// hidden layer width (0 = plain logistic regression)
    #[arg(long, default_value_t = 0)]
    hidden: usize,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Entry point for the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let env_threads = env::var("GBP_THREADS").ok();
    let result = match cli.command {
        Command::Precompute(args) => cmd_precompute(args, env_threads.as_deref()),
        Command::Verify(args) => cmd_verify(args, env_threads.as_deref()),
        Command::Bench(args) => cmd_bench(args, env_threads.as_deref()),
        Command::Train(args) => cmd_train(args),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `gbp <command> --help` for usage");
            1
        }
        Err(CliError::Lib(e)) => {
            eprintln!("error: {e}");
            i32::from(e.exit_code())
        }
    }
}

/// One option layer; `None` means "not set at this layer".
#[derive(Debug, Clone, Default, PartialEq)]
struct RawOptions {
    graph: Option<PathBuf>,
    features: Option<PathBuf>,
    targets: Option<String>,
    level_count: Option<usize>,
    conv_exponent: Option<f64>,
    push_threshold: Option<f64>,
    walks_per_node: Option<u32>,
    seed: Option<u64>,
    alpha: Option<f64>,
    last_hop: Option<bool>,
    weights: Option<Vec<f64>>,
    out: Option<PathBuf>,
    denormalize: Option<bool>,
    threads: Option<usize>,
}

impl RawOptions {
    fn from_flags(c: &CommonArgs) -> crate::Result<RawOptions> {
        Ok(RawOptions {
            graph: c.graph.clone(),
            features: c.features.clone(),
            targets: c.targets.clone(),
            level_count: c.level_count,
            conv_exponent: c.r,
            push_threshold: c.rmax,
            walks_per_node: c.nr,
            seed: c.seed,
            alpha: c.alpha,
            last_hop: if c.last_hop { Some(true) } else { None },
            weights: c.weights.as_deref().map(parse_weight_list).transpose()?,
            out: None,
            denormalize: if c.denormalize { Some(true) } else { None },
            threads: c.threads,
        })
    }

    fn sets_weight_scheme(&self) -> bool {
        self.alpha.is_some() || self.last_hop == Some(true) || self.weights.is_some()
    }

    /// Per-key precedence: `self` wins over `base`. Weight-scheme keys move
    /// as one group.
    fn merge_over(mut self, base: RawOptions) -> RawOptions {
        if !self.sets_weight_scheme() {
            self.alpha = base.alpha;
            self.last_hop = base.last_hop;
            self.weights = base.weights;
        }
        RawOptions {
            graph: self.graph.or(base.graph),
            features: self.features.or(base.features),
            targets: self.targets.or(base.targets),
            level_count: self.level_count.or(base.level_count),
            conv_exponent: self.conv_exponent.or(base.conv_exponent),
            push_threshold: self.push_threshold.or(base.push_threshold),
            walks_per_node: self.walks_per_node.or(base.walks_per_node),
            seed: self.seed.or(base.seed),
            alpha: self.alpha,
            last_hop: self.last_hop,
            weights: self.weights,
            out: self.out.or(base.out),
            denormalize: self.denormalize.or(base.denormalize),
            threads: self.threads.or(base.threads),
        }
    }
}

fn parse_weight_list(s: &str) -> crate::Result<Vec<f64>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::validation(format!("bad weight value {tok:?}")))
        })
        .collect()
}

fn parse_bool(value: &str, line: usize) -> crate::Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(Error::parse(line, format!("expected true/false, got {other:?}"))),
    }
}

/// Parse a "key=value" config file. Keys mirror the long flags.
fn parse_config_file(path: &Path) -> crate::Result<RawOptions> {
    let reader = BufReader::new(File::open(path)?);
    let mut opts = RawOptions::default();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(lineno, "expected key=value"))?;
        let key = key.trim();
        let value = value.trim();
        let bad_num = |what: &str| Error::parse(lineno, format!("bad {what} value {value:?}"));
        match key {
            "graph" => opts.graph = Some(PathBuf::from(value)),
            "features" => opts.features = Some(PathBuf::from(value)),
            "targets" => opts.targets = Some(value.to_string()),
            "L" => opts.level_count = Some(value.parse().map_err(|_| bad_num("L"))?),
            "r" => opts.conv_exponent = Some(value.parse().map_err(|_| bad_num("r"))?),
            "rmax" => opts.push_threshold = Some(value.parse().map_err(|_| bad_num("rmax"))?),
            "nr" => opts.walks_per_node = Some(value.parse().map_err(|_| bad_num("nr"))?),
            "seed" => opts.seed = Some(value.parse().map_err(|_| bad_num("seed"))?),
            "alpha" => opts.alpha = Some(value.parse().map_err(|_| bad_num("alpha"))?),
            "last-hop" => opts.last_hop = Some(parse_bool(value, lineno)?),
            "weights" => opts.weights = Some(parse_weight_list(value)?),
            "out" => opts.out = Some(PathBuf::from(value)),
            "denormalize" => opts.denormalize = Some(parse_bool(value, lineno)?),
            "threads" => opts.threads = Some(value.parse().map_err(|_| bad_num("threads"))?),
            other => {
                return Err(Error::parse(lineno, format!("unknown config key {other:?}")))
            }
        }
    }
    Ok(opts)
}

/// Fully resolved propagation-run options (paths still unopened).
#[derive(Debug, Clone, PartialEq)]
struct ResolvedRun {
    graph: PathBuf,
    features: PathBuf,
    targets: String,
    level_count: usize,
    conv_exponent: f64,
    push_threshold: Option<f64>,
    walks_per_node: u32,
    seed: u64,
    weight_kind: WeightKind,
    denormalize: bool,
    threads: Option<usize>,
    out: Option<PathBuf>,
}

fn resolve(
    common: &CommonArgs,
    out_flag: Option<PathBuf>,
    env_threads: Option<&str>,
    rmax_required: bool,
) -> CliResult<ResolvedRun> {
    let mut flags = RawOptions::from_flags(common)?;
    flags.out = out_flag;
    let file = match &common.config {
        Some(path) => parse_config_file(path)?,
        None => RawOptions::default(),
    };
    let mut merged = flags.merge_over(file);
    if merged.threads.is_none() {
        if let Some(s) = env_threads {
            let s = s.trim();
            if !s.is_empty() {
                merged.threads = Some(s.parse().map_err(|_| {
                    Error::validation(format!("GBP_THREADS must be an integer, got {s:?}"))
                })?);
            }
        }
    }

    let missing = |flag: &str| CliError::Usage(format!("missing --{flag} (flag or config file)"));
    let weight_kind = match (merged.alpha, merged.last_hop == Some(true), merged.weights.clone()) {
        (Some(alpha), false, None) => WeightKind::Ppr { alpha },
        (None, true, None) => WeightKind::LastHop,
        (None, false, Some(weights)) => WeightKind::Custom { weights },
        (None, false, None) => {
            return Err(CliError::Usage(
                "choose a weight scheme: --alpha, --last-hop, or --weights".into(),
            ))
        }
        _ => {
            return Err(CliError::Usage(
                "choose exactly one of --alpha, --last-hop, --weights".into(),
            ))
        }
    };
    let resolved = ResolvedRun {
        graph: merged.graph.ok_or_else(|| missing("graph"))?,
        features: merged.features.ok_or_else(|| missing("features"))?,
        targets: merged.targets.unwrap_or_else(|| "all".to_string()),
        level_count: merged.level_count.ok_or_else(|| missing("L"))?,
        conv_exponent: merged.conv_exponent.ok_or_else(|| missing("r"))?,
        push_threshold: merged.push_threshold,
        walks_per_node: merged.walks_per_node.unwrap_or(0),
        seed: merged.seed.unwrap_or(0),
        weight_kind,
        denormalize: merged.denormalize.unwrap_or(false),
        threads: merged.threads,
        out: merged.out,
    };
    if rmax_required && resolved.push_threshold.is_none() {
        return Err(missing("rmax"));
    }
    Ok(resolved)
}

fn load_graph(path: &Path) -> crate::Result<Graph> {
    let mut reader = BufReader::new(File::open(path)?);
    let head = reader.fill_buf()?;
    if head.starts_with(b"GBPG") {
        load_cache(reader)
    } else {
        load_edge_list(reader)
    }
}

fn load_targets(spec: &str, g: &Graph) -> crate::Result<NodeSet> {
    if spec == "all" {
        return Ok(NodeSet::all(g));
    }
    let reader = BufReader::new(File::open(spec)?);
    let mut ids = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let label: u64 = line
            .parse()
            .map_err(|_| Error::parse(idx + 1, format!("bad target id {line:?}")))?;
        let id = g.resolve_label(label).ok_or_else(|| {
            Error::validation(format!("target node {label} is not in the graph"))
        })?;
        ids.push(id);
    }
    Ok(NodeSet::new(ids))
}

struct LoadedInputs {
    g: Graph,
    x: FeatureMatrix,
    targets: NodeSet,
}

fn load_inputs(run: &ResolvedRun) -> crate::Result<LoadedInputs> {
    let g = load_graph(&run.graph)?;
    let x = load_features(BufReader::new(File::open(&run.features)?), g.node_count())?;
    let targets = load_targets(&run.targets, &g)?;
    Ok(LoadedInputs { g, x, targets })
}

fn build_config(run: &ResolvedRun, targets: NodeSet) -> crate::Result<PropagationConfig> {
    let weights = make_weights(&run.weight_kind, run.level_count)?;
    Ok(PropagationConfig {
        level_count: run.level_count,
        conv_exponent: run.conv_exponent,
        weights,
        push_threshold: run
            .push_threshold
            .ok_or_else(|| Error::validation("no push threshold resolved"))?,
        walks_per_node: run.walks_per_node,
        seed: run.seed,
        targets,
        denormalize: run.denormalize,
    })
}

struct PipelineRun {
    seed_matrix: NormalizedResidueSeed,
    state: PushState,
    walks: WalkFrequencies,
    embedding: EmbeddingMatrix,
    walk_ms: u64,
    push_ms: u64,
    combine_ms: u64,
}

/// The three phases under one thread pool, per-phase wall clocks attached.
fn execute_pipeline(
    g: &Graph,
    x: &FeatureMatrix,
    cfg: &PropagationConfig,
    threads: Option<usize>,
) -> crate::Result<PipelineRun> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::validation(format!("thread pool: {e}")))?;
    pool.install(|| {
        let seed_matrix = normalize(x, g, cfg.conv_exponent)?;
        let t = Instant::now();
        let state = push(g, &seed_matrix, cfg.level_count, cfg.push_threshold)?;
        let push_ms = t.elapsed().as_millis() as u64;
        let t = Instant::now();
        let walks =
            sample_walks(g, &cfg.targets, cfg.walks_per_node, cfg.level_count, cfg.seed)?;
        let walk_ms = t.elapsed().as_millis() as u64;
        let t = Instant::now();
        let embedding = combine(&state, &walks, g, cfg)?;
        let combine_ms = t.elapsed().as_millis() as u64;
        Ok(PipelineRun { seed_matrix, state, walks, embedding, walk_ms, push_ms, combine_ms })
    })
}

/// Everything needed to audit a run; written as pretty JSON next to outputs.
/// Wall-clock fields are excluded from all digests.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub graph: String,
    pub features: String,
    pub targets: String,
    pub out: Option<String>,
    pub node_count: usize,
    pub edge_count: usize,
    pub target_count: usize,
    pub feature_count: usize,
    pub level_count: usize,
    pub conv_exponent: f64,
    pub push_threshold: f64,
    pub walks_per_node: u32,
    pub seed: u64,
    pub weight_kind: WeightKind,
    pub weights: Vec<f64>,
    pub denormalize: bool,
    pub threads: Option<usize>,
    pub config_digest: String,
    pub walk_count: u64,
    pub walk_steps: u64,
    pub push_count: u64,
    pub exceeded_count: u64,
    pub walk_ms: u64,
    pub push_ms: u64,
    pub combine_ms: u64,
    pub embedding_digest: Option<String>,
}

fn build_manifest(
    command: &str,
    run: &ResolvedRun,
    g: &Graph,
    cfg: &PropagationConfig,
    pipe: &PipelineRun,
    embedding_digest: Option<String>,
) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        graph: run.graph.display().to_string(),
        features: run.features.display().to_string(),
        targets: run.targets.clone(),
        out: run.out.as_ref().map(|p| p.display().to_string()),
        node_count: g.node_count(),
        edge_count: g.edge_count(),
        target_count: cfg.targets.len(),
        feature_count: pipe.embedding.cols(),
        level_count: cfg.level_count,
        conv_exponent: cfg.conv_exponent,
        push_threshold: cfg.push_threshold,
        walks_per_node: cfg.walks_per_node,
        seed: cfg.seed,
        weight_kind: cfg.weights.kind.clone(),
        weights: cfg.weights.weights().to_vec(),
        denormalize: cfg.denormalize,
        threads: run.threads,
        config_digest: cfg.digest(g),
        walk_count: cfg.targets.len() as u64 * cfg.walks_per_node as u64,
        walk_steps: pipe.walks.steps_taken(),
        push_count: pipe.state.push_count(),
        exceeded_count: pipe.state.exceeded_count(),
        walk_ms: pipe.walk_ms,
        push_ms: pipe.push_ms,
        combine_ms: pipe.combine_ms,
        embedding_digest,
    }
}

fn write_manifest(manifest: &RunManifest, path: &Path) -> crate::Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::validation(format!("manifest serialization: {e}")))?;
    let mut f = File::create(path)?;
    f.write_all(json.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

fn is_tsv(path: &Path) -> bool {
    path.extension().map_or(false, |e| e == "tsv")
}

fn embedding_bytes(e: &EmbeddingMatrix, tsv: bool) -> crate::Result<Vec<u8>> {
    let mut bytes = Vec::new();
    if tsv {
        write_embedding_tsv(e, &mut bytes)?;
    } else {
        write_embedding(e, &mut bytes)?;
    }
    Ok(bytes)
}

fn digest_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn cmd_precompute(args: PrecomputeArgs, env_threads: Option<&str>) -> CliResult<()> {
    let mut run = resolve(&args.common, args.out, env_threads, true)?;
    let out = run
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("missing --out (flag or config file)".into()))?;
    run.out = Some(out.clone());
    let inputs = load_inputs(&run)?;
    let cfg = build_config(&run, inputs.targets)?;
    let mut pipe = execute_pipeline(&inputs.g, &inputs.x, &cfg, run.threads)?;
    pipe.embedding.relabel_rows(&inputs.g);

    let bytes = embedding_bytes(&pipe.embedding, is_tsv(&out))?;
    std::fs::write(&out, &bytes).map_err(Error::from)?;
    let digest = digest_hex(&bytes);
    let manifest = build_manifest("precompute", &run, &inputs.g, &cfg, &pipe, Some(digest.clone()));
    let manifest_path = manifest_path_for(&out);
    write_manifest(&manifest, &manifest_path)?;
    println!(
        "precompute: wrote {} ({} rows x {} cols), manifest {}, digest {}",
        out.display(),
        pipe.embedding.rows(),
        pipe.embedding.cols(),
        manifest_path.display(),
        digest,
    );
    Ok(())
}

fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn cmd_bench(args: BenchArgs, env_threads: Option<&str>) -> CliResult<()> {
    let run = resolve(&args.common, None, env_threads, true)?;
    let inputs = load_inputs(&run)?;
    let cfg = build_config(&run, inputs.targets)?;
    let pipe = execute_pipeline(&inputs.g, &inputs.x, &cfg, run.threads)?;

    let cap = push_count_bound(cfg.level_count, pipe.embedding.cols(), cfg.push_threshold);
    let neighbor_cap = cap.saturating_mul(inputs.g.max_degree() as u64);
    let expected_steps =
        cfg.targets.len() as u64 * cfg.walks_per_node as u64 * cfg.level_count as u64;
    println!(
        "bench: push_count={} (cap {}), exceeded={} (cap {}), walk_steps={} (expected {}), \
         push_ms={} walk_ms={} combine_ms={}",
        pipe.state.push_count(),
        neighbor_cap,
        pipe.state.exceeded_count(),
        cap,
        pipe.walks.steps_taken(),
        expected_steps,
        pipe.push_ms,
        pipe.walk_ms,
        pipe.combine_ms,
    );
    if let Some(out) = &args.out {
        let manifest = build_manifest("bench", &run, &inputs.g, &cfg, &pipe, None);
        write_manifest(&manifest, out)?;
        println!("bench: wrote manifest {}", out.display());
    }
    if args.assert_bounds {
        let mut failures = Vec::new();
        if pipe.state.exceeded_count() > cap {
            failures.push(format!(
                "exceeded-entry count {} above cap {cap}",
                pipe.state.exceeded_count()
            ));
        }
        if pipe.state.push_count() > neighbor_cap {
            failures.push(format!(
                "push count {} above cap {neighbor_cap}",
                pipe.state.push_count()
            ));
        }
        if pipe.walks.steps_taken() != expected_steps {
            failures.push(format!(
                "walk steps {} != |V_t|*n_r*L = {expected_steps}",
                pipe.walks.steps_taken()
            ));
        }
        if !failures.is_empty() {
            return Err(Error::validation(failures.join("; ")).into());
        }
        println!("bench: bounds ok");
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs, env_threads: Option<&str>) -> CliResult<()> {
    let need_base = args.epsilon.is_none() || args.trials.is_some() || args.compare.is_some();
    let run = resolve(&args.common, None, env_threads, need_base)?;
    let inputs = load_inputs(&run)?;
    let mut failures: Vec<String> = Vec::new();

    if let Some(rmax) = run.push_threshold {
        let cfg = build_config(&run, inputs.targets.clone())?;
        let pipe = execute_pipeline(&inputs.g, &inputs.x, &cfg, run.threads)?;
        let exact = oracle::exact_estimate(
            &inputs.g,
            &pipe.seed_matrix,
            cfg.level_count,
            cfg.conv_exponent,
            cfg.weights.weights(),
            &cfg.targets,
            cfg.denormalize,
        )?;
        let max_err = pipe
            .embedding
            .values()
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        println!("verify: max_abs_error={max_err:.3e}");

        let residual = oracle::invariant_residual(
            &inputs.g,
            pipe.seed_matrix.values(),
            pipe.seed_matrix.cols(),
            cfg.conv_exponent,
            &pipe.state,
        )?;
        println!("verify: conservation_residual={residual:.3e}");
        if residual >= 1e-10 {
            failures.push(format!("conservation residual {residual:.3e} >= 1e-10"));
        }

        // deterministic regime: reserves alone must replicate the oracle
        if cfg.walks_per_node == 0 && rmax <= 1e-10 && max_err >= 1e-8 {
            failures.push(format!("deterministic-regime max error {max_err:.3e} >= 1e-8"));
        }

        if let Some(trials) = args.trials {
            if trials < 2 {
                return Err(CliError::Usage("--trials needs at least 2 runs".into()));
            }
            let entries = pipe.embedding.values().len();
            let mut mean = vec![0.0f64; entries];
            let mut m2 = vec![0.0f64; entries];
            for k in 0..trials {
                let cfg_k = PropagationConfig {
                    seed: run.seed.wrapping_add(k as u64),
                    ..cfg.clone()
                };
                let pipe_k = execute_pipeline(&inputs.g, &inputs.x, &cfg_k, run.threads)?;
                for (i, &v) in pipe_k.embedding.values().iter().enumerate() {
                    let delta = v - mean[i];
                    mean[i] += delta / (k as f64 + 1.0);
                    m2[i] += delta * (v - mean[i]);
                }
            }
            let kf = trials as f64;
            let mut violations = 0usize;
            let mut worst: f64 = 0.0;
            for i in 0..entries {
                let sd = (m2[i] / (kf - 1.0)).sqrt();
                let tol = 4.0 * sd / kf.sqrt() + 1e-9;
                let dev = (mean[i] - exact[i]).abs();
                worst = worst.max(dev);
                if dev > tol {
                    violations += 1;
                }
            }
            let allowed = entries as f64 * 0.001;
            println!(
                "verify: trials={trials} mean_violations={violations}/{entries} \
                 (allowed {allowed:.1}), worst_mean_deviation={worst:.3e}"
            );
            if violations as f64 > allowed {
                failures.push(format!(
                    "empirical mean off for {violations}/{entries} entries"
                ));
            }
        }

        if let Some(compare) = &args.compare {
            let theirs = read_embedding(BufReader::new(File::open(compare)?))?;
            let mut mine = pipe.embedding.clone();
            mine.relabel_rows(&inputs.g);
            let same_ids = mine.row_ids() == theirs.row_ids();
            let same_bits = mine.values().len() == theirs.values().len()
                && mine
                    .values()
                    .iter()
                    .zip(theirs.values())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if same_ids && same_bits {
                println!("verify: compare ok ({} rows bit-identical)", mine.rows());
            } else {
                failures.push(format!("{} does not match this run", compare.display()));
            }
        }
    }

    if let Some(epsilon) = args.epsilon {
        let planned = plan_parameters(&inputs.g, &inputs.targets, run.level_count, epsilon)?;
        let weights = make_weights(&run.weight_kind, run.level_count)?;
        let cfg = PropagationConfig {
            level_count: run.level_count,
            conv_exponent: run.conv_exponent,
            weights,
            push_threshold: planned.push_threshold,
            walks_per_node: planned.walks_per_node,
            seed: run.seed,
            targets: inputs.targets.clone(),
            denormalize: run.denormalize,
        };
        let pipe = execute_pipeline(&inputs.g, &inputs.x, &cfg, run.threads)?;
        let exact = oracle::exact_estimate(
            &inputs.g,
            &pipe.seed_matrix,
            cfg.level_count,
            cfg.conv_exponent,
            cfg.weights.weights(),
            &cfg.targets,
            cfg.denormalize,
        )?;
        let d_r = inputs.g.degree_power(cfg.conv_exponent);
        let cols = pipe.embedding.cols();
        let mut over = 0usize;
        for (i, &s) in cfg.targets.ids().iter().enumerate() {
            for k in 0..cols {
                let dev = (pipe.embedding.values()[i * cols + k] - exact[i * cols + k]).abs();
                if dev > d_r[s as usize] * epsilon {
                    over += 1;
                }
            }
        }
        let entries = cfg.targets.len() * cols;
        let p = 1.0 / inputs.g.node_count() as f64;
        // one-sided 95% normal bound on a Binomial(entries, 1/n) count
        let allowed = (entries as f64 * p
            + 1.645 * (entries as f64 * p * (1.0 - p)).sqrt())
        .ceil();
        println!(
            "verify: epsilon={epsilon} rmax={:.3e} nr={} tail_violations={over}/{entries} (allowed {allowed})",
            planned.push_threshold, planned.walks_per_node
        );
        if (over as f64) > allowed {
            failures.push(format!(
                "error-budget tail: {over}/{entries} entries over d^r*epsilon"
            ));
        }
    }

    if failures.is_empty() {
        println!("verify: ok");
        Ok(())
    } else {
        Err(Error::validation(failures.join("; ")).into())
    }
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let embedding = read_embedding(BufReader::new(File::open(&args.embedding)?))?;
    let labels = classifier::load_labels(BufReader::new(File::open(&args.labels)?))?;

    let split_path = |ext: &str| {
        let mut name = args.splits.file_name().map(|s| s.to_os_string()).unwrap_or_default();
        name.push(ext);
        args.splits.with_file_name(name)
    };
    let train_ids =
        classifier::load_split_ids(BufReader::new(File::open(split_path(".train"))?))?;
    let read_optional = |path: PathBuf| -> crate::Result<Vec<u64>> {
        match File::open(&path) {
            Ok(f) => classifier::load_split_ids(BufReader::new(f)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    };
    let val_ids = read_optional(split_path(".val"))?;
    let test_ids = read_optional(split_path(".test"))?;

    let class_count = labels.values().max().map_or(0, |&c| c + 1);
    let split = LabeledSplit::new(train_ids, val_ids, test_ids, labels, class_count)?;
    let cfg = TrainConfig {
        batch_size: args.batch_size,
        learning_rate: args.lr,
        max_epochs: args.epochs,
        l2: args.l2,
        hidden: args.hidden,
        dropout: args.dropout,
        seed: args.seed,
    };
    let (model, metrics) = classifier::train(&embedding, &split, &cfg)?;

    let mut table = String::from("epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc\n");
    for m in &metrics {
        let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
        table.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{}\t{}\n",
            m.epoch,
            m.train_loss,
            m.train_accuracy,
            fmt_opt(m.val_loss),
            fmt_opt(m.val_accuracy),
        ));
    }
    match &args.out {
        Some(path) => {
            std::fs::write(path, table).map_err(Error::from)?;
            println!("train: wrote {} epochs of metrics to {}", metrics.len(), path.display());
        }
        None => print!("{table}"),
    }
    if !split.test.is_empty() {
        let (_, acc) = classifier::evaluate(&model, &embedding, &split.test, &split.labels)?;
        println!("test_accuracy\t{acc:.4}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn common() -> CommonArgs {
        CommonArgs::default()
    }

    fn write_config(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn config_file_round_trip() {
        let f = write_config(
            "# run settings\ngraph = g.txt\nfeatures=f.txt\ntargets = all\nL=4\nr = 0.5\n\
             rmax=1e-4\nnr = 3\nseed=7\nalpha=0.1\nout=e.gbpe\ndenormalize=true\nthreads=2\n",
        );
        let opts = parse_config_file(f.path()).unwrap();
        assert_eq!(opts.level_count, Some(4));
        assert_eq!(opts.conv_exponent, Some(0.5));
        assert_eq!(opts.push_threshold, Some(1e-4));
        assert_eq!(opts.walks_per_node, Some(3));
        assert_eq!(opts.seed, Some(7));
        assert_eq!(opts.alpha, Some(0.1));
        assert_eq!(opts.denormalize, Some(true));
        assert_eq!(opts.threads, Some(2));
        assert_eq!(opts.out, Some(PathBuf::from("e.gbpe")));
    }

    #[test]
    fn config_file_rejects_unknown_keys_and_bad_values() {
        let f = write_config("graph=g\nbogus=1\n");
        assert!(matches!(
            parse_config_file(f.path()),
            Err(Error::Parse { line: 2, .. })
        ));
        let f = write_config("L=notanumber\n");
        assert!(matches!(
            parse_config_file(f.path()),
            Err(Error::Parse { line: 1, .. })
        ));
        let f = write_config("just a line\n");
        assert!(matches!(
            parse_config_file(f.path()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn precedence_flag_beats_file_beats_default() {
        let f = write_config(
            "graph=file_g\nfeatures=file_f\nL=3\nr=0.25\nrmax=0.01\nseed=11\nalpha=0.2\n",
        );
        let mut c = common();
        c.config = Some(f.path().to_path_buf());
        c.seed = Some(99); // flag wins over file
        c.rmax = Some(0.5);
        let run = resolve(&c, None, None, true).unwrap();
        assert_eq!(run.seed, 99);
        assert_eq!(run.push_threshold, Some(0.5));
        assert_eq!(run.level_count, 3); // file wins over (absent) flag
        assert_eq!(run.conv_exponent, 0.25);
        assert_eq!(run.graph, PathBuf::from("file_g"));
        assert_eq!(run.walks_per_node, 0); // default
        assert_eq!(run.targets, "all"); // default
        assert!(!run.denormalize); // default
    }

    #[test]
    fn weight_scheme_resolves_as_a_group() {
        let f = write_config("graph=g\nfeatures=f\nL=2\nr=0\nrmax=0.1\nalpha=0.3\n");
        // file alone: ppr
        let mut c = common();
        c.config = Some(f.path().to_path_buf());
        let run = resolve(&c, None, None, true).unwrap();
        assert_eq!(run.weight_kind, WeightKind::Ppr { alpha: 0.3 });
        // flag layer overrides the whole group
        let mut c = common();
        c.config = Some(f.path().to_path_buf());
        c.last_hop = true;
        let run = resolve(&c, None, None, true).unwrap();
        assert_eq!(run.weight_kind, WeightKind::LastHop);
        // custom list parses
        let mut c = common();
        c.config = Some(f.path().to_path_buf());
        c.weights = Some("0.5, 0.25,0.25".into());
        let run = resolve(&c, None, None, true).unwrap();
        assert_eq!(
            run.weight_kind,
            WeightKind::Custom { weights: vec![0.5, 0.25, 0.25] }
        );
    }

    #[test]
    fn weight_scheme_conflicts_and_absence_are_usage_errors() {
        let mut c = common();
        c.graph = Some("g".into());
        c.features = Some("f".into());
        c.level_count = Some(2);
        c.r = Some(0.0);
        c.rmax = Some(0.1);
        assert!(matches!(
            resolve(&c, None, None, true),
            Err(CliError::Usage(_))
        ));
        c.alpha = Some(0.1);
        c.last_hop = true;
        assert!(matches!(
            resolve(&c, None, None, true),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn missing_required_keys_are_usage_errors() {
        let mut c = common();
        c.alpha = Some(0.1);
        match resolve(&c, None, None, true) {
            Err(CliError::Usage(msg)) => assert!(msg.contains("--graph"), "{msg}"),
            other => panic!("expected usage error, got {other:?}"),
        }
    }

    #[test]
    fn env_threads_sits_below_flag_and_file() {
        let mut c = common();
        c.graph = Some("g".into());
        c.features = Some("f".into());
        c.level_count = Some(1);
        c.r = Some(0.0);
        c.rmax = Some(0.1);
        c.alpha = Some(0.5);
        let run = resolve(&c, None, Some("4"), true).unwrap();
        assert_eq!(run.threads, Some(4));
        c.threads = Some(2);
        let run = resolve(&c, None, Some("4"), true).unwrap();
        assert_eq!(run.threads, Some(2));
        c.threads = None;
        assert!(matches!(
            resolve(&c, None, Some("four"), true),
            Err(CliError::Lib(Error::Validation(_)))
        ));
        let run = resolve(&c, None, Some(""), true).unwrap();
        assert_eq!(run.threads, None);
    }

    #[test]
    fn manifest_paths_and_tsv_detection() {
        assert_eq!(
            manifest_path_for(Path::new("/tmp/e.gbpe")),
            PathBuf::from("/tmp/e.gbpe.manifest.json")
        );
        assert!(is_tsv(Path::new("x.tsv")));
        assert!(!is_tsv(Path::new("x.gbpe")));
    }
}
