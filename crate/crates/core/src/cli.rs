//! Command-line front end: `train`, `encode`, `search`, `eval`, `inspect`.
//!
//! Exit codes: 0 on success, 1 for usage errors (bad or inconsistent
//! flags), 2 for data errors (unreadable or malformed files, failed
//! training).

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dictionary::DictConfig;
use crate::encoder::{encode_batch, train_isch, train_itq, train_lsh, HashModel, Method};
use crate::error::Error;
use crate::io;
use crate::rotation::RotationConfig;
use crate::search::{
    mean_average_precision, precision_at_k, search_batch, write_results_tsv,
    RetrievalResult, DEFAULT_PRECISION_KS,
};
use crate::seed::{self, stream};
use crate::spectral::ModelParams;

#[derive(Debug, Parser)]
#[command(name = "isch", version, about = "Implicit sparse code hashing and Hamming retrieval")]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a hash model from a vector file.
    Train(TrainArgs),
    /// Encode vectors into a binary code file.
    Encode(EncodeArgs),
    /// Rank database codes for each query code by Hamming distance.
    Search(SearchArgs),
    /// Score search results against class labels.
    Eval(EvalArgs),
    /// Print the header of a model, code or vector file.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Isch,
    Lsh,
    Itq,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Isch => Method::Isch,
            MethodArg::Lsh => Method::Lsh,
            MethodArg::Itq => Method::Itq,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "isch")]
    pub method: MethodArg,
    /// Training vectors (ISCHVEC1 or fvecs).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Code length m.
    #[arg(long)]
    pub bits: usize,
    /// Rotation blocks Q; must divide --bits.
    #[arg(long, default_value_t = 1)]
    pub blocks: usize,
    /// Laplace scale of the sparse-code prior.
    #[arg(long, default_value_t = 0.12)]
    pub tau: f64,
    /// Lasso weight; the noise variance is eta × tau.
    #[arg(long, default_value_t = 0.05)]
    pub eta: f64,
    /// Level-one cluster count (required for isch).
    #[arg(long)]
    pub k1: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub levels: usize,
    /// Proxy dimension for clustering (default min(d, 256)).
    #[arg(long)]
    pub proxy_dim: Option<usize>,
    /// Clusters smaller than this are not split (default 4 × k1).
    #[arg(long)]
    pub min_split: Option<usize>,
    #[arg(long, default_value_t = 25)]
    pub kmeans_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub kmeans_tol: f64,
    #[arg(long, default_value_t = 50)]
    pub rotation_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub rotation_tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    /// Database codes.
    #[arg(long)]
    pub db: PathBuf,
    /// Query codes.
    #[arg(long)]
    pub queries: PathBuf,
    /// Results per query (default: the whole database).
    #[arg(long)]
    pub k: Option<usize>,
    /// Output TSV: query_id, rank, db_id, distance.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// TSV written by `search`.
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub db_labels: PathBuf,
    #[arg(long)]
    pub query_labels: PathBuf,
    /// Precision cut-offs (repeatable; default 10 and 500 where available).
    #[arg(long = "k")]
    pub ks: Vec<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    #[arg(long, conflicts_with_all = ["codes", "vectors"])]
    pub model: Option<PathBuf>,
    #[arg(long, conflicts_with = "vectors")]
    pub codes: Option<PathBuf>,
    #[arg(long)]
    pub vectors: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(Error::Io(e))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Run a parsed command line, writing the human-readable report to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.threads {
        Some(0) => Err(usage("--threads must be positive")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| usage(format!("cannot build thread pool: {e}")))?;
            let mut report = Vec::new();
            let status = pool.install(|| dispatch(cli.command, &mut report));
            out.write_all(&report)?;
            status
        }
        None => dispatch(cli.command, out),
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Train(a) => cmd_train(&a, out),
        Command::Encode(a) => cmd_encode(&a, out),
        Command::Search(a) => cmd_search(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Inspect(a) => cmd_inspect(&a, out),
    }
}

fn write_atomically(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes)?;
    Ok(())
}

/// Flag checks that need no input data.
fn check_train_flags(a: &TrainArgs) -> CliResult<()> {
    if a.bits == 0 {
        return Err(usage("--bits must be positive"));
    }
    if a.blocks == 0 || !a.bits.is_multiple_of(a.blocks) {
        return Err(usage(format!(
            "--bits {} is not divisible by --blocks {}",
            a.bits, a.blocks
        )));
    }
    if Method::from(a.method) == Method::Isch {
        ModelParams::new(a.tau, a.eta, a.bits, a.blocks).map_err(|e| usage(e.to_string()))?;
        match a.k1 {
            None => return Err(usage("--k1 is required for --method isch")),
            Some(0) => return Err(usage("--k1 must be positive")),
            Some(_) => {}
        }
        if a.levels == 0 {
            return Err(usage("--levels must be positive"));
        }
    } else if a.blocks != 1 {
        return Err(usage("--blocks applies only to --method isch"));
    }
    if a.rotation_iters == 0 || a.kmeans_iters == 0 {
        return Err(usage("iteration counts must be positive"));
    }
    Ok(())
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    check_train_flags(a)?;
    let x = io::read_vectors(&a.input)?;
    let (n, d) = (x.rows(), x.cols());
    let rotation = RotationConfig {
        max_sweeps: a.rotation_iters,
        rel_tol: a.rotation_tol,
    };
    let method = Method::from(a.method);
    writeln!(out, "method: {}", method.name())?;
    writeln!(out, "vectors: n = {n}, d = {d}")?;

    let model: HashModel = match method {
        Method::Isch => {
            let params = ModelParams::new(a.tau, a.eta, a.bits, a.blocks)
                .map_err(|e| usage(e.to_string()))?;
            let k1 = a.k1.expect("checked above");
            let base = DictConfig::new(k1, d);
            let dict = DictConfig {
                levels: a.levels,
                proxy_dim: a.proxy_dim.unwrap_or(base.proxy_dim),
                min_split: a.min_split.unwrap_or(base.min_split),
                seed: seed::derive(a.seed, &[stream::DICTIONARY]),
                kmeans_iters: a.kmeans_iters,
                kmeans_tol: a.kmeans_tol,
                ..base
            };
            dict.validate(d).map_err(|e| usage(e.to_string()))?;
            let trained = train_isch(&x, &params, &dict, &rotation, a.seed)?;
            let r = &trained.report;
            writeln!(
                out,
                "dictionary: k = {} atoms (per level: {:?}, bound {})",
                r.dict_size,
                r.dict_level_sizes,
                dict.max_atoms()
            )?;
            writeln!(
                out,
                "code: m = {}, Q = {}, l = {}",
                params.bits, params.blocks, params.block_len
            )?;
            for (j, rot) in r.rotations.iter().enumerate() {
                writeln!(
                    out,
                    "block {j}: quantization error {:.6e} -> {:.6e} ({} sweeps)",
                    rot.history[0],
                    rot.final_error(),
                    rot.history.len() - 1
                )?;
            }
            let (hi, lo) = r
                .singular_values
                .iter()
                .fold((0.0f64, f64::INFINITY), |(h, l), &s| (h.max(s), l.min(s)));
            writeln!(
                out,
                "spectral: singular values in [{lo:.6e}, {hi:.6e}], peak lambda {:.6e}, block overlap {:.6}, low-gain rows {}",
                params.peak_lambda(),
                r.block_overlap,
                r.low_gain_rows.len()
            )?;
            trained.model
        }
        Method::Lsh => {
            writeln!(out, "code: m = {}", a.bits)?;
            train_lsh(&x, a.bits, a.seed)?
        }
        Method::Itq => {
            if a.bits > d {
                return Err(usage(format!("--bits {} exceeds dimension {d} for itq", a.bits)));
            }
            let (model, fit) = train_itq(&x, a.bits, &rotation, a.seed)?;
            writeln!(out, "code: m = {}", a.bits)?;
            writeln!(
                out,
                "rotation: quantization error {:.6e} -> {:.6e} ({} sweeps)",
                fit.history[0],
                fit.final_error(),
                fit.history.len() - 1
            )?;
            model
        }
    };
    write_atomically(&a.out, &io::encode_model(&model)?)?;
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

pub fn cmd_encode(a: &EncodeArgs, out: &mut dyn Write) -> CliResult<()> {
    let model = io::read_model(&a.model)?;
    let x = io::read_vectors(&a.input)?;
    if x.cols() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: x.cols(),
        }
        .into());
    }
    let codes = encode_batch(&model, &x)?;
    write_atomically(&a.out, &io::encode_codes(&codes)?)?;
    writeln!(
        out,
        "encoded {} vectors into {}-bit codes: {}",
        codes.len(),
        codes.bits(),
        a.out.display()
    )?;
    Ok(())
}

pub fn cmd_search(a: &SearchArgs, out: &mut dyn Write) -> CliResult<()> {
    if a.k == Some(0) {
        return Err(usage("--k must be positive"));
    }
    let db = io::read_codes(&a.db)?;
    let queries = io::read_codes(&a.queries)?;
    if db.bits() != queries.bits() {
        return Err(Error::DimensionMismatch {
            expected: db.bits(),
            found: queries.bits(),
        }
        .into());
    }
    if let Some(k) = a.k {
        if k > db.len() {
            return Err(usage(format!("--k {k} exceeds database size {}", db.len())));
        }
    }
    let results = search_batch(&db, &queries, a.k)?;
    let mut buf = Vec::new();
    write_results_tsv(&mut buf, &results)?;
    write_atomically(&a.out, &buf)?;
    writeln!(
        out,
        "searched {} queries against {} codes: {}",
        queries.len(),
        db.len(),
        a.out.display()
    )?;
    Ok(())
}

/// Parse search output back into per-query rankings, ordered by query id.
pub fn parse_results_tsv(text: &str) -> crate::Result<Vec<RetrievalResult>> {
    let mut by_query: BTreeMap<usize, Vec<(usize, usize, u32)>> = BTreeMap::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |reason: String| Error::format("results file", format!("line {}: {reason}", line_no + 1));
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let num = |s: &str| s.trim().parse::<usize>().map_err(|e| bad(e.to_string()));
        let (q, rank, id) = (num(fields[0])?, num(fields[1])?, num(fields[2])?);
        let dist = u32::try_from(num(fields[3])?).map_err(|e| bad(e.to_string()))?;
        by_query.entry(q).or_default().push((rank, id, dist));
    }
    Ok(by_query
        .into_iter()
        .map(|(query_id, mut rows)| {
            rows.sort_unstable();
            RetrievalResult {
                query_id,
                ranked_ids: rows.iter().map(|r| r.1).collect(),
                distances: rows.iter().map(|r| r.2).collect(),
            }
        })
        .collect())
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    if a.ks.contains(&0) {
        return Err(usage("--k must be positive"));
    }
    let results = parse_results_tsv(&fs::read_to_string(&a.results)?)?;
    let db_labels = io::read_labels(&a.db_labels)?;
    let query_labels = io::read_labels(&a.query_labels)?;
    if results.is_empty() {
        return Err(Error::format("results file", "no rankings").into());
    }
    for r in &results {
        if r.query_id >= query_labels.len() {
            return Err(Error::format(
                "query labels",
                format!("no label for query {}", r.query_id),
            )
            .into());
        }
        if let Some(&id) = r.ranked_ids.iter().find(|&&id| id >= db_labels.len()) {
            return Err(Error::format("database labels", format!("no label for item {id}")).into());
        }
    }
    let shortest = results.iter().map(|r| r.ranked_ids.len()).min().unwrap_or(0);
    let ks: Vec<usize> = if a.ks.is_empty() {
        DEFAULT_PRECISION_KS
            .iter()
            .copied()
            .filter(|&k| k <= shortest)
            .collect()
    } else {
        if let Some(&k) = a.ks.iter().find(|&&k| k > shortest) {
            return Err(Error::format(
                "results file",
                format!("precision@{k} needs {k} results per query, found {shortest}"),
            )
            .into());
        }
        a.ks.clone()
    };
    writeln!(out, "queries: {}", results.len())?;
    for k in ks {
        let mean = results
            .iter()
            .map(|r| precision_at_k(r, &db_labels, query_labels.get(r.query_id), k))
            .sum::<f64>()
            / results.len() as f64;
        writeln!(out, "precision@{k}: {mean:.6}")?;
    }
    if results.iter().all(|r| r.ranked_ids.len() == db_labels.len()) {
        let relevant: Vec<HashSet<usize>> = results
            .iter()
            .map(|r| db_labels.matching(query_labels.get(r.query_id)))
            .collect();
        let map = mean_average_precision(&results, &relevant)?;
        writeln!(out, "mAP: {map:.6}")?;
    } else {
        writeln!(out, "mAP: skipped (rankings do not cover the whole database)")?;
    }
    Ok(())
}

pub fn cmd_inspect(a: &InspectArgs, out: &mut dyn Write) -> CliResult<()> {
    if let Some(path) = &a.model {
        let m = io::read_model(path)?;
        writeln!(out, "model: {}", path.display())?;
        writeln!(out, "method: {}", m.method.name())?;
        writeln!(out, "d = {}, m = {}, Q = {}, l = {}", m.dim(), m.bits(), m.blocks, m.block_len())?;
        if let Some(p) = m.params {
            writeln!(out, "tau = {}, sigma^2 = {}, eta = {}", p.tau, p.sigma_sq, p.eta)?;
        }
        writeln!(
            out,
            "seed = {}, dictionary size = {}, k1 = {}",
            m.meta.seed, m.meta.dict_size, m.meta.k1
        )?;
    } else if let Some(path) = &a.codes {
        let c = io::read_codes(path)?;
        writeln!(out, "codes: {}", path.display())?;
        writeln!(out, "n = {}, m = {}, words per code = {}", c.len(), c.bits(), c.words_per_code())?;
    } else if let Some(path) = &a.vectors {
        let x = io::read_vectors(path)?;
        writeln!(out, "vectors: {}", path.display())?;
        writeln!(out, "n = {}, d = {}", x.rows(), x.cols())?;
    } else {
        return Err(usage("inspect needs one of --model, --codes, --vectors"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("isch").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn indivisible_bits_is_usage_error() {
        let cli = parse(&[
            "train", "--input", "/nonexistent", "--out", "/nonexistent/m", "--bits", "63",
            "--blocks", "4", "--k1", "8",
        ]);
        let err = run(cli, &mut Vec::new()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn missing_input_is_data_error() {
        let cli = parse(&[
            "train", "--input", "/nonexistent", "--out", "/nonexistent/m", "--bits", "64",
            "--blocks", "4", "--k1", "8",
        ]);
        assert_eq!(run(cli, &mut Vec::new()).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn isch_requires_k1() {
        let cli = parse(&["train", "--input", "x", "--out", "y", "--bits", "8"]);
        assert_eq!(run(cli, &mut Vec::new()).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn results_tsv_parsing() {
        let parsed = parse_results_tsv("1\t2\t5\t3\n1\t1\t4\t0\n0\t1\t2\t1\n").unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].query_id, 0);
        assert_eq!(parsed[1].ranked_ids, vec![4, 5]);
        assert_eq!(parsed[1].distances, vec![0, 3]);
        assert!(parse_results_tsv("1\t2\t3\n").is_err());
    }
}
