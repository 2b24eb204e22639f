//! Command-line front end for the online-hashing pipeline.
//!
//! Five subcommands cover the full loop: `synth` generates a labeled
//! dataset, `init-hash` fits the fixed binary hash from a bootstrap sample,
//! `stream` feeds labeled points through the online learner and emits the
//! similarity model plus the hashed database, `query` ranks records for a
//! query file, and `eval` scores a query set against its ground-truth
//! labels.
//!
//! Every command that writes a primary artifact also writes
//! `<artifact>.manifest.json` recording the tool version, the build id, all
//! parameters, and SHA-256 checksums of inputs and outputs. Manifests hold
//! no timestamps, so rerunning a command with identical inputs reproduces
//! identical files.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 unreadable or
//! malformed data, 4 artifacts that do not fit each other.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use ohsl::eval::{mean_average_precision, synth_dataset, GroundTruth, SynthConfig};
use ohsl::io;
use ohsl::{
    build_multi_index, default_segments, hamming_topk, linear_scan_topk, multi_index_topk,
    query_weights, train_itq, CodeDatabase, Error, HashModel, ItqConfig, MultiIndex,
    NormExponent, SearchHit, SimilarityKind, SimilarityModel, TargetCodebook,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(
    name = "ohsl",
    version,
    long_version = concat!(env!("CARGO_PKG_VERSION"), " (", env!("OHSL_BUILD_GIT"), ")"),
    about = "Online similarity learning over fixed binary hash codes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-label dataset (features + labels)
    Synth(SynthArgs),
    /// Fit the fixed hash on the first rows of a feature file
    InitHash(InitHashArgs),
    /// Stream labeled points through the online learner
    Stream(StreamArgs),
    /// Rank database records for each query
    Query(QueryArgs),
    /// Score retrieval quality of a query set with known labels
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of classes
    #[arg(long, default_value_t = 8)]
    classes: usize,
    /// Feature dimensionality
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Number of records
    #[arg(long, default_value_t = 10_000)]
    points: usize,
    /// Noise scale around the class prototypes
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    /// Fewest labels per record
    #[arg(long, default_value_t = 1)]
    min_labels: usize,
    /// Most labels per record
    #[arg(long, default_value_t = 3)]
    max_labels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output feature file (binary)
    #[arg(long)]
    features: PathBuf,
    /// Output label file (one comma-separated line per record)
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args)]
struct InitHashArgs {
    /// Feature file (binary or CSV)
    #[arg(long)]
    features: PathBuf,
    /// Code length in bits
    #[arg(long, default_value_t = 32)]
    bits: usize,
    /// Bootstrap rows used to fit the hash
    #[arg(long, default_value_t = 300)]
    sample: usize,
    /// Rotation refinement iterations
    #[arg(long, default_value_t = 50)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output hash-model file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StreamArgs {
    /// Feature file (binary or CSV)
    #[arg(long)]
    features: PathBuf,
    /// Label file; an empty line marks an unlabeled record
    #[arg(long)]
    labels: PathBuf,
    /// Hash model fitted by init-hash
    #[arg(long)]
    hash_model: PathBuf,
    /// Update aggressiveness
    #[arg(long = "C", default_value_t = 0.01)]
    c: f64,
    /// Code rows as a multiple of the hash bit count
    #[arg(long, default_value_t = 3)]
    l_mult: usize,
    /// Points per timing chunk
    #[arg(long, default_value_t = 1000)]
    chunk: usize,
    /// Number of classes; default is the largest label id + 1
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Norm exponent of the update step size (1 or 2)
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    pa_norm_exponent: u8,
    /// Train the code-space (symmetric) variant instead
    #[arg(long)]
    symmetric: bool,
    /// Add a per-point ingest cost (ms) to reported chunk times
    #[arg(long, num_args = 0..=1, default_missing_value = "3.97", value_name = "MS_PER_POINT")]
    simulate_io: Option<f64>,
    /// Output similarity-model file
    #[arg(long)]
    out_model: PathBuf,
    /// Output code-database file
    #[arg(long)]
    out_db: PathBuf,
    /// Optional per-chunk cost table (TSV)
    #[arg(long)]
    cost_tsv: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Engine {
    /// Weighted-Hamming linear scan
    Scan,
    /// Weighted-Hamming scan pruned by the segment index
    MultiIndex,
    /// Plain Hamming distance on hashed queries
    Hamming,
    /// Hash the query, then score codes against codes
    Sym,
}

impl Engine {
    fn name(self) -> &'static str {
        match self {
            Engine::Scan => "scan",
            Engine::MultiIndex => "multi-index",
            Engine::Hamming => "hamming",
            Engine::Sym => "sym",
        }
    }
}

#[derive(Args)]
struct QueryArgs {
    /// Code-database file
    #[arg(long)]
    db: PathBuf,
    /// Similarity-model file
    #[arg(long)]
    model: PathBuf,
    /// Query feature file (binary or CSV)
    #[arg(long)]
    queries: PathBuf,
    /// Results per query
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, value_enum, default_value_t = Engine::Scan)]
    engine: Engine,
    /// Hash model; required by the hamming and sym engines
    #[arg(long, required_if_eq_any([("engine", "hamming"), ("engine", "sym")]))]
    hash_model: Option<PathBuf>,
    /// Segment count for the multi-index engine (default: bits / 8)
    #[arg(long)]
    segments: Option<usize>,
    /// Write the ranking table here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Code-database file
    #[arg(long)]
    db: PathBuf,
    /// Similarity-model file
    #[arg(long)]
    model: PathBuf,
    /// Query feature file (binary or CSV)
    #[arg(long)]
    queries: PathBuf,
    /// Ground-truth labels of the queries
    #[arg(long)]
    query_labels: PathBuf,
    /// Cutoff for precision@k
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, value_enum, default_value_t = Engine::Scan)]
    engine: Engine,
    /// Hash model; required by the hamming and sym engines
    #[arg(long, required_if_eq_any([("engine", "hamming"), ("engine", "sym")]))]
    hash_model: Option<PathBuf>,
    /// Write the metric table here as well as stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::InitHash(args) => cmd_init_hash(args),
        Command::Stream(args) => cmd_stream(args),
        Command::Query(args) => cmd_query(args),
        Command::Eval(args) => cmd_eval(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}

/// 2 = usage/configuration, 3 = unreadable or malformed data,
/// 4 = artifacts that do not fit each other.
fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) | Error::CodebookExhausted(_) | Error::NotPowerOfTwo(_) => 2,
        Error::Format { .. }
        | Error::Parse { .. }
        | Error::Io(_)
        | Error::NonFinite { .. }
        | Error::InsufficientSample { .. }
        | Error::RankDeficient { .. }
        | Error::EmptyLabels
        | Error::DegenerateInput => 3,
        Error::Incompatible(_)
        | Error::DimensionMismatch { .. }
        | Error::CodeLengthMismatch { .. }
        | Error::StaleIndex { .. }
        | Error::UnknownClass(_) => 4,
    }
}

// ---------------------------------------------------------------------------
// Run manifests
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    build: &'static str,
    command: &'static str,
    parameters: BTreeMap<&'static str, String>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(command: &'static str) -> Self {
        RunManifest {
            tool: "ohsl",
            version: env!("CARGO_PKG_VERSION"),
            build: env!("OHSL_BUILD_GIT"),
            command,
            parameters: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn param(&mut self, key: &'static str, value: impl ToString) {
        self.parameters.insert(key, value.to_string());
    }

    fn input(&mut self, path: &Path) -> ohsl::Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path) -> ohsl::Result<()> {
        self.outputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Writes `<primary>.manifest.json` next to the command's main artifact.
    fn write_next_to(&self, primary: &Path) -> ohsl::Result<()> {
        let path = PathBuf::from(format!("{}.manifest.json", primary.display()));
        let body = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, body + "\n")?;
        Ok(())
    }
}

fn sha256_file(path: &Path) -> ohsl::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_synth(args: SynthArgs) -> ohsl::Result<()> {
    let cfg = SynthConfig {
        num_classes: args.classes,
        dim: args.dim,
        points: args.points,
        min_labels: args.min_labels,
        max_labels: args.max_labels,
        noise: args.noise,
        seed: args.seed,
    };
    let dataset = synth_dataset(&cfg)?;
    io::write_features_ohfv(&args.features, &dataset.features)?;
    io::write_labels(&args.labels, &dataset.labels)?;

    let mut manifest = RunManifest::new("synth");
    manifest.param("classes", args.classes);
    manifest.param("dim", args.dim);
    manifest.param("points", args.points);
    manifest.param("noise", args.noise);
    manifest.param("min_labels", args.min_labels);
    manifest.param("max_labels", args.max_labels);
    manifest.param("seed", args.seed);
    manifest.output(&args.features)?;
    manifest.output(&args.labels)?;
    manifest.write_next_to(&args.features)?;

    eprintln!(
        "synth: wrote {} records of dim {} to {}",
        dataset.len(),
        args.dim,
        args.features.display()
    );
    Ok(())
}

fn cmd_init_hash(args: InitHashArgs) -> ohsl::Result<()> {
    let features = io::read_features(&args.features)?;
    if features.len() < args.sample {
        return Err(Error::InsufficientSample {
            needed: args.sample,
            got: features.len(),
        });
    }
    let model = train_itq(
        &features[..args.sample],
        &ItqConfig {
            bits: args.bits,
            iterations: args.iterations,
            seed: args.seed,
        },
    )?;
    io::write_hash_model(&args.out, &model)?;

    let mut manifest = RunManifest::new("init-hash");
    manifest.param("bits", args.bits);
    manifest.param("sample", args.sample);
    manifest.param("iterations", args.iterations);
    manifest.param("seed", args.seed);
    manifest.input(&args.features)?;
    manifest.output(&args.out)?;
    manifest.write_next_to(&args.out)?;

    eprintln!(
        "init-hash: fitted {} bits on {} rows, wrote {}",
        args.bits,
        args.sample,
        args.out.display()
    );
    Ok(())
}

fn cmd_stream(args: StreamArgs) -> ohsl::Result<()> {
    if args.l_mult == 0 {
        return Err(Error::InvalidConfig("--l-mult must be at least 1".into()));
    }
    if args.chunk == 0 {
        return Err(Error::InvalidConfig("--chunk must be at least 1".into()));
    }
    let features = io::read_features(&args.features)?;
    let labels = io::read_labels(&args.labels)?;
    if features.len() != labels.len() {
        return Err(Error::Incompatible(format!(
            "{} feature rows but {} label lines",
            features.len(),
            labels.len()
        )));
    }
    let hash = io::read_hash_model(&args.hash_model)?;
    if let Some(x) = features.first() {
        if x.len() != hash.input_dim() {
            return Err(Error::Incompatible(format!(
                "features are {}-dimensional but the hash expects {}",
                x.len(),
                hash.input_dim()
            )));
        }
    }
    let bits = hash.bits();
    let classes = match args.classes {
        Some(c) => c,
        None => labels
            .iter()
            .flatten()
            .copied()
            .max()
            .map(|m| m as usize + 1)
            .ok_or(Error::EmptyLabels)?,
    };
    let rows = args.l_mult * bits;
    let codebook = TargetCodebook::new(classes, rows, args.seed)?;
    let exponent = match args.pa_norm_exponent {
        1 => NormExponent::One,
        _ => NormExponent::Two,
    };
    let dim = features.first().map_or(hash.input_dim(), |x| x.len());
    let mut model = if args.symmetric {
        SimilarityModel::new_symmetric(rows, bits, args.c)?
    } else {
        SimilarityModel::new(rows, dim, bits, args.c)?
    }
    .with_norm_exponent(exponent);

    let mut db = CodeDatabase::new(bits);
    for (x, ls) in features.iter().zip(labels.iter()) {
        let code = hash.encode(x)?;
        db.append(&code, ls)?;
    }

    let mut per_chunk_ms: Vec<f64> = Vec::new();
    let mut chunk_ms = 0.0;
    let mut in_chunk = 0usize;
    let mut labeled = 0usize;
    for (x, ls) in features.iter().zip(labels.iter()) {
        if !ls.is_empty() {
            let start = Instant::now();
            model.observe(x, ls, &hash, &codebook)?;
            chunk_ms += start.elapsed().as_secs_f64() * 1e3;
            labeled += 1;
        }
        if let Some(io_ms) = args.simulate_io {
            chunk_ms += io_ms;
        }
        in_chunk += 1;
        if in_chunk == args.chunk {
            per_chunk_ms.push(chunk_ms);
            chunk_ms = 0.0;
            in_chunk = 0;
        }
    }
    if in_chunk > 0 {
        per_chunk_ms.push(chunk_ms);
    }

    io::write_similarity_model(&args.out_model, &model, &codebook)?;
    io::write_database(&args.out_db, &db)?;
    if let Some(path) = &args.cost_tsv {
        let mut table = String::from("chunk\tms\n");
        for (i, ms) in per_chunk_ms.iter().enumerate() {
            let _ = writeln!(table, "{i}\t{ms}");
        }
        std::fs::write(path, table)?;
    }

    let mut manifest = RunManifest::new("stream");
    manifest.param("C", args.c);
    manifest.param("l_mult", args.l_mult);
    manifest.param("chunk", args.chunk);
    manifest.param("classes", classes);
    manifest.param("seed", args.seed);
    manifest.param("pa_norm_exponent", args.pa_norm_exponent);
    manifest.param("symmetric", args.symmetric);
    if let Some(io_ms) = args.simulate_io {
        manifest.param("simulate_io_ms", io_ms);
    }
    manifest.input(&args.features)?;
    manifest.input(&args.labels)?;
    manifest.input(&args.hash_model)?;
    manifest.output(&args.out_model)?;
    manifest.output(&args.out_db)?;
    manifest.write_next_to(&args.out_model)?;

    let total_ms: f64 = per_chunk_ms.iter().sum();
    eprintln!(
        "stream: {} points ({labeled} labeled) in {} chunks, learner time {:.1} ms total",
        features.len(),
        per_chunk_ms.len(),
        total_ms
    );
    Ok(())
}

/// Everything a ranking engine needs, loaded and cross-checked once.
struct RankContext {
    db: CodeDatabase,
    model: SimilarityModel,
    hash: Option<HashModel>,
    index: Option<MultiIndex>,
}

impl RankContext {
    fn load(
        db_path: &Path,
        model_path: &Path,
        hash_path: Option<&PathBuf>,
        engine: Engine,
        segments: Option<usize>,
    ) -> ohsl::Result<Self> {
        let db = io::read_database(db_path)?;
        let (model, _codebook) = io::read_similarity_model(model_path)?;
        if model.code_bits() != db.bits() {
            return Err(Error::Incompatible(format!(
                "model scores {}-bit codes but the database holds {}-bit codes",
                model.code_bits(),
                db.bits()
            )));
        }
        let hash = hash_path.map(io::read_hash_model).transpose()?;
        if let Some(h) = &hash {
            if h.bits() != db.bits() {
                return Err(Error::Incompatible(format!(
                    "hash produces {} bits but the database holds {}-bit codes",
                    h.bits(),
                    db.bits()
                )));
            }
        }
        if engine == Engine::Sym && model.kind() != SimilarityKind::Symmetric {
            return Err(Error::Incompatible(
                "engine sym needs a model trained with --symmetric".into(),
            ));
        }
        let index = if engine == Engine::MultiIndex {
            let m = segments.unwrap_or_else(|| default_segments(db.bits()));
            Some(build_multi_index(&db, m)?)
        } else {
            None
        };
        Ok(RankContext {
            db,
            model,
            hash,
            index,
        })
    }

    fn rank(&self, engine: Engine, q: &DVector<f64>, k: usize) -> ohsl::Result<Vec<SearchHit>> {
        match engine {
            Engine::Scan => {
                let w = query_weights(self.model.m(), q)?;
                linear_scan_topk(&w, &self.db, k)
            }
            Engine::MultiIndex => {
                let w = query_weights(self.model.m(), q)?;
                multi_index_topk(self.index.as_ref().unwrap(), &w, &self.db, k)
            }
            Engine::Hamming => {
                let hash = self.hash.as_ref().unwrap();
                hamming_topk(&hash.encode(q)?, &self.db, k)
            }
            Engine::Sym => {
                let hash = self.hash.as_ref().unwrap();
                let code = hash.encode(q)?;
                let signs = DVector::from_fn(code.len(), |i, _| code.sign(i));
                let w = query_weights(self.model.m(), &signs)?;
                linear_scan_topk(&w, &self.db, k)
            }
        }
    }
}

fn cmd_query(args: QueryArgs) -> ohsl::Result<()> {
    let ctx = RankContext::load(
        &args.db,
        &args.model,
        args.hash_model.as_ref(),
        args.engine,
        args.segments,
    )?;
    let queries = io::read_features(&args.queries)?;

    let mut table = String::from("query\trank\tid\tscore\n");
    for (qi, q) in queries.iter().enumerate() {
        for (rank, hit) in ctx.rank(args.engine, q, args.k)?.iter().enumerate() {
            let _ = writeln!(table, "{qi}\t{}\t{}\t{}", rank + 1, hit.id, hit.score);
        }
    }

    match &args.out {
        Some(path) => {
            std::fs::write(path, &table)?;
            let mut manifest = RunManifest::new("query");
            manifest.param("k", args.k);
            manifest.param("engine", args.engine.name());
            if let Some(m) = args.segments {
                manifest.param("segments", m);
            }
            manifest.input(&args.db)?;
            manifest.input(&args.model)?;
            manifest.input(&args.queries)?;
            if let Some(h) = &args.hash_model {
                manifest.input(h)?;
            }
            manifest.output(path)?;
            manifest.write_next_to(path)?;
        }
        None => print!("{table}"),
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> ohsl::Result<()> {
    let ctx = RankContext::load(
        &args.db,
        &args.model,
        args.hash_model.as_ref(),
        args.engine,
        None,
    )?;
    let queries = io::read_features(&args.queries)?;
    let mut query_labels = io::read_labels(&args.query_labels)?;
    if queries.len() != query_labels.len() {
        return Err(Error::Incompatible(format!(
            "{} queries but {} label lines",
            queries.len(),
            query_labels.len()
        )));
    }
    for set in &mut query_labels {
        set.sort_unstable();
        set.dedup();
    }
    let db_labels: Vec<Vec<u32>> = (0..ctx.db.len()).map(|p| ctx.db.labels(p).to_vec()).collect();
    let gt = GroundTruth::build(&query_labels, &db_labels);

    let mut rankings: Vec<Vec<u32>> = Vec::with_capacity(queries.len());
    for q in &queries {
        let hits = ctx.rank(args.engine, q, ctx.db.len())?;
        rankings.push(hits.iter().map(|h| h.id).collect());
    }
    let map = mean_average_precision(&rankings, &gt)?;

    let k = args.k.min(ctx.db.len()).max(1);
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    let mut precision_sum = 0.0;
    for (qi, ranking) in rankings.iter().enumerate() {
        let relevant = gt.relevant(qi);
        if relevant.is_empty() {
            skipped += 1;
            continue;
        }
        evaluated += 1;
        let hits = ranking
            .iter()
            .take(k)
            .filter(|id| relevant.binary_search(id).is_ok())
            .count();
        precision_sum += hits as f64 / k as f64;
    }
    let precision = if evaluated > 0 {
        precision_sum / evaluated as f64
    } else {
        0.0
    };

    let mut table = String::from("metric\tvalue\n");
    let _ = writeln!(table, "map\t{map}");
    let _ = writeln!(table, "precision_at_{k}\t{precision}");
    let _ = writeln!(table, "queries_evaluated\t{evaluated}");
    let _ = writeln!(table, "queries_skipped\t{skipped}");
    print!("{table}");

    if let Some(path) = &args.out {
        std::fs::write(path, &table)?;
        let mut manifest = RunManifest::new("eval");
        manifest.param("k", args.k);
        manifest.param("engine", args.engine.name());
        manifest.input(&args.db)?;
        manifest.input(&args.model)?;
        manifest.input(&args.queries)?;
        manifest.input(&args.query_labels)?;
        if let Some(h) = &args.hash_model {
            manifest.input(h)?;
        }
        manifest.output(path)?;
        manifest.write_next_to(path)?;
    }
    Ok(())
}
