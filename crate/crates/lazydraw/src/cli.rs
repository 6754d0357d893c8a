//! Command-line interface: dataset plumbing, index lifecycle, experiment
//! commands, and the benchmark harness.
//!
//! Every command that writes an output also writes `<out>.manifest.json`
//! with the argv, input checksums, seed, and output checksums. `rerun`
//! replays a manifest into a scratch directory and verifies the outputs
//! reproduce bit-for-bit, timing columns excluded.
//!
//! Exit codes: 0 success, 2 usage errors, 3 data errors.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;

use crate::data::{
    gen_synthetic, load_dataset, normalize_rows, read_csv, read_fvecs, save_dataset, write_csv,
    write_fvecs, Synthetic,
};
use crate::error::{Error, Result};
use crate::estimators::{estimate_expectation, estimate_partition};
use crate::learn::{train, GradientBackend, LearnConfig};
use crate::manifest::{manifest_path, stable_sha256_hex, FileStamp, RunManifest};
use crate::mips::{
    build_ivf, build_lsh_ladder, index_info, load_index, save_index, ExactProvider, Index,
    IvfProvider, LshConfig, LshProvider, TopKProvider,
};
use crate::model::{
    exact_expectation, exact_partition, exact_sample, score_all, Dataset, Query,
};
use crate::rng::derive_rng;
use crate::sampler::{fixed_b_sample, lazy_sample, tv_upper_bound};
use crate::walk::{run_walk, WalkConfig, WalkSampler};

#[derive(Parser)]
#[command(
    name = "lazydraw",
    version,
    about = "Sublinear sampling and estimation for large discrete log-linear models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    Gen(GenArgs),
    /// Convert fvecs or CSV vectors into a dataset file.
    Ingest(IngestArgs),
    /// Convert a dataset file to fvecs or CSV.
    Export(ExportArgs),
    /// Build a top-k index over a dataset.
    IndexBuild(IndexBuildArgs),
    /// Print the header and parameters of an index file.
    IndexInfo(IndexInfoArgs),
    /// Draw samples and write the empirical frequencies.
    Sample(SampleArgs),
    /// Estimate the log partition function.
    Partition(PartitionArgs),
    /// Estimate the expectation of a bounded statistic.
    Expect(ExpectArgs),
    /// Fit parameters by gradient ascent and write the training curve.
    Learn(LearnArgs),
    /// Run the softmax-kernel random walk and write visit counts.
    Walk(WalkArgs),
    /// Evaluate the total-variation upper bound for a top-k set.
    Tvbound(TvboundArgs),
    /// Time the fast path against the brute-force baseline.
    Bench(BenchArgs),
    /// Replay a run manifest and verify outputs reproduce.
    Rerun(RerunArgs),
}

/// Entry point for the binary. Returns the process exit code.
pub fn main_from_env() -> i32 {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    run(&argv)
}

/// Parses and executes one invocation. `argv` excludes the program name.
pub fn run(argv: &[String]) -> i32 {
    let full = std::iter::once("lazydraw".to_string()).chain(argv.iter().cloned());
    let cli = match Cli::try_parse_from(full) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidParameter { .. } => 2,
                _ => 3,
            }
        }
    }
}

fn dispatch(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::Gen(args) => cmd_gen(args, argv),
        Command::Ingest(args) => cmd_ingest(args, argv),
        Command::Export(args) => cmd_export(args, argv),
        Command::IndexBuild(args) => cmd_index_build(args, argv),
        Command::IndexInfo(args) => cmd_index_info(args),
        Command::Sample(args) => cmd_sample(args, argv),
        Command::Partition(args) => cmd_partition(args, argv),
        Command::Expect(args) => cmd_expect(args, argv),
        Command::Learn(args) => cmd_learn(args, argv),
        Command::Walk(args) => cmd_walk(args, argv),
        Command::Tvbound(args) => cmd_tvbound(args, argv),
        Command::Bench(args) => cmd_bench(args, argv),
        Command::Rerun(args) => cmd_rerun(args),
    }
}

// ---------------------------------------------------------------- helpers

fn parse_floats(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|field| {
            field
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid("theta", format!("not a number: {field:?}")))
        })
        .collect()
}

fn parse_ids(text: &str) -> Result<Vec<u32>> {
    text.split(',')
        .map(|field| {
            field
                .trim()
                .parse::<u32>()
                .map_err(|_| Error::invalid("train_ids", format!("not an id: {field:?}")))
        })
        .collect()
}

/// Writes CSV rows; `rows` are pre-joined lines without the newline.
fn write_rows(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut emit = |line: &str| -> Result<()> {
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))
    };
    emit(header)?;
    for row in rows {
        emit(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Args)]
struct QueryFlags {
    /// Comma-separated theta components.
    #[arg(long, value_name = "FLOATS", conflicts_with = "theta_row")]
    theta: Option<String>,
    /// Use a dataset row as theta.
    #[arg(long, value_name = "ID")]
    theta_row: Option<u32>,
    /// Score scale multiplier (must be > 0).
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
}

impl QueryFlags {
    fn build(&self, dataset: &Dataset) -> Result<Query> {
        match (&self.theta, self.theta_row) {
            (Some(text), None) => Query::with_scale(parse_floats(text)?, self.scale),
            (None, Some(row)) => Query::from_row(dataset, row as usize, self.scale),
            _ => Err(Error::invalid(
                "theta",
                "provide exactly one of --theta or --theta-row",
            )),
        }
    }
}

#[derive(Args)]
struct IndexFlags {
    /// Prebuilt index file; exact scan when absent.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Probe count for IVF indexes.
    #[arg(long, default_value_t = 8)]
    n_probe: usize,
}

impl IndexFlags {
    fn load(&self, dataset: &Dataset) -> Result<Option<Index>> {
        self.index
            .as_deref()
            .map(|path| load_index(path, dataset))
            .transpose()
    }
}

fn provider_for<'a>(
    dataset: &'a Dataset,
    index: Option<&'a Index>,
    n_probe: usize,
) -> Box<dyn TopKProvider + Sync + 'a> {
    match index {
        None => Box::new(ExactProvider::new(dataset)),
        Some(Index::Ivf(ivf)) => Box::new(IvfProvider::new(ivf, dataset, n_probe)),
        Some(Index::Lsh(lsh)) => Box::new(LshProvider::new(lsh, dataset)),
    }
}

struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

fn manifest_start(command: &str, argv: &[String]) -> ManifestBuilder {
    ManifestBuilder {
        manifest: RunManifest::new(command, argv.to_vec()),
        started: Instant::now(),
    }
}

impl ManifestBuilder {
    fn dataset(mut self, path: &Path) -> Result<Self> {
        self.manifest.dataset = Some(FileStamp::for_path(path)?);
        Ok(self)
    }

    fn index(mut self, path: Option<&Path>) -> Result<Self> {
        if let Some(path) = path {
            self.manifest.index = Some(FileStamp::for_path(path)?);
        }
        Ok(self)
    }

    fn seed(mut self, seed: u64) -> Self {
        self.manifest.seed = Some(seed);
        self
    }

    /// Stamps the outputs and writes the manifest next to the first one.
    fn finish(mut self, outputs: &[&Path]) -> Result<()> {
        for out in outputs {
            self.manifest.outputs.push(FileStamp::for_path(out)?);
        }
        self.manifest.duration_seconds = self.started.elapsed().as_secs_f64();
        self.manifest.save(&manifest_path(outputs[0]))
    }
}

// --------------------------------------------------------------- commands

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    /// gaussian-unit | planted:<m> | heavy-tail
    #[arg(long)]
    dist: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_dist(text: &str) -> Result<Synthetic> {
    if text == "gaussian-unit" {
        return Ok(Synthetic::GaussianUnit);
    }
    if text == "heavy-tail" {
        return Ok(Synthetic::HeavyTail);
    }
    if let Some(m) = text.strip_prefix("planted:") {
        let m = m
            .parse::<usize>()
            .map_err(|_| Error::invalid("dist", format!("bad cluster count in {text:?}")))?;
        return Ok(Synthetic::PlantedClusters { m });
    }
    Err(Error::invalid(
        "dist",
        format!("unknown distribution {text:?}; use gaussian-unit, planted:<m>, or heavy-tail"),
    ))
}

fn cmd_gen(args: GenArgs, argv: &[String]) -> Result<()> {
    let builder = manifest_start("gen", argv).seed(args.seed);
    let dataset = gen_synthetic(args.n, args.d, parse_dist(&args.dist)?, args.seed)?;
    save_dataset(&dataset, &args.out)?;
    builder.finish(&[&args.out])
}

#[derive(Copy, Clone, PartialEq, ValueEnum)]
enum VectorFormat {
    Fvecs,
    Csv,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    format: VectorFormat,
    /// Scale each row to unit Euclidean norm.
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_ingest(args: IngestArgs, argv: &[String]) -> Result<()> {
    let builder = manifest_start("ingest", argv);
    let mut dataset = match args.format {
        VectorFormat::Fvecs => read_fvecs(&args.input)?,
        VectorFormat::Csv => read_csv(&args.input)?,
    };
    if args.normalize {
        dataset = normalize_rows(&dataset)?;
    }
    save_dataset(&dataset, &args.out)?;
    builder.finish(&[&args.out])
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    format: VectorFormat,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_export(args: ExportArgs, argv: &[String]) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let builder = manifest_start("export", argv).dataset(&args.dataset)?;
    match args.format {
        VectorFormat::Fvecs => write_fvecs(&dataset, &args.out)?,
        VectorFormat::Csv => write_csv(&dataset, &args.out)?,
    }
    builder.finish(&[&args.out])
}

#[derive(Copy, Clone, PartialEq, ValueEnum)]
enum IndexKindArg {
    Ivf,
    Lsh,
}

#[derive(Args)]
struct IndexBuildArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    kind: IndexKindArg,
    /// IVF centroid count; 0 picks ceil(sqrt(n)).
    #[arg(long, default_value_t = 0)]
    n_c: usize,
    /// IVF k-means iterations.
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// LSH score-gap target.
    #[arg(long, default_value_t = 0.2)]
    c: f64,
    /// LSH failure budget per retrieval.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Largest k the LSH ladder certifies.
    #[arg(long, default_value_t = 100)]
    k_max: usize,
    /// LSH hash length override.
    #[arg(long)]
    bits: Option<u32>,
    /// LSH cap on tables per instance.
    #[arg(long, default_value_t = 64)]
    max_tables: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_index_build(args: IndexBuildArgs, argv: &[String]) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let builder = manifest_start("index-build", argv)
        .dataset(&args.dataset)?
        .seed(args.seed);
    let index = match args.kind {
        IndexKindArg::Ivf => {
            let n_c = if args.n_c == 0 {
                (dataset.len() as f64).sqrt().ceil() as usize
            } else {
                args.n_c
            };
            Index::Ivf(build_ivf(&dataset, n_c, args.iters, args.seed)?)
        }
        IndexKindArg::Lsh => {
            let mut config = LshConfig::new(args.c, args.delta, args.k_max);
            config.bits = args.bits;
            config.max_tables = args.max_tables;
            config.seed = args.seed;
            Index::Lsh(build_lsh_ladder(&dataset, &config)?)
        }
    };
    save_index(&index, &args.out)?;
    builder.finish(&[&args.out])
}

#[derive(Args)]
struct IndexInfoArgs {
    #[arg(long)]
    index: PathBuf,
}

fn cmd_index_info(args: IndexInfoArgs) -> Result<()> {
    let info = index_info(&args.index)?;
    println!(
        "kind={} n={} d={} {}",
        info.kind.name(),
        info.n,
        info.d,
        info.summary
    );
    Ok(())
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    index: IndexFlags,
    #[command(flatten)]
    query: QueryFlags,
    /// Retrieval size.
    #[arg(long)]
    k: usize,
    /// Expected tail exceedances; fixes the cutoff instead of adapting it.
    #[arg(long)]
    l: Option<u64>,
    /// Score-gap allowance when the provider certifies none.
    #[arg(long)]
    gap_c: Option<f64>,
    #[arg(long, default_value_t = 1)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_sample(args: SampleArgs, argv: &[String]) -> Result<()> {
    if args.trials == 0 {
        return Err(Error::invalid("trials", "must be >= 1"));
    }
    let dataset = load_dataset(&args.dataset)?;
    let builder = manifest_start("sample", argv)
        .dataset(&args.dataset)?
        .index(args.index.index.as_deref())?
        .seed(args.seed);
    let index = args.index.load(&dataset)?;
    let provider = provider_for(&dataset, index.as_ref(), args.index.n_probe);
    let query = args.query.build(&dataset)?;

    let mut counts = vec![0u64; dataset.len()];
    for trial in 0..args.trials {
        let mut rng = derive_rng(args.seed, trial);
        let trace = match args.l {
            None => lazy_sample(&dataset, &query, provider.as_ref(), args.k, args.gap_c, &mut rng)?,
            Some(l) => fixed_b_sample(
                &dataset,
                &query,
                provider.as_ref(),
                args.k,
                l,
                args.gap_c,
                &mut rng,
            )?,
        };
        counts[trace.chosen_id as usize] += 1;
    }
    let rows = counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(id, &c)| {
        format!("{id},{c},{}", c as f64 / args.trials as f64)
    });
    write_rows(&args.out, "id,count,frequency", rows)?;
    builder.finish(&[&args.out])
}

#[derive(Args)]
struct PartitionArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    index: IndexFlags,
    #[command(flatten)]
    query: QueryFlags,
    #[arg(long)]
    k: usize,
    /// Tail draws.
    #[arg(long)]
    l: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_partition(args: PartitionArgs, argv: &[String]) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let builder = manifest_start("partition", argv)
        .dataset(&args.dataset)?
        .index(args.index.index.as_deref())?
        .seed(args.seed);
    let index = args.index.load(&dataset)?;
    let provider = provider_for(&dataset, index.as_ref(), args.index.n_probe);
    let query = args.query.build(&dataset)?;
    let mut rng = derive_rng(args.seed, 0);
    let est = estimate_partition(&dataset, &query, provider.as_ref(), args.k, args.l, &mut rng)?;
    write_rows(
        &args.out,
        "log_z_hat,shift,mantissa,k,l,touched,exact_fallback",
        [format!(
            "{},{},{},{},{},{},{}",
            est.value, est.shift, est.mantissa, est.k, est.l, est.touched, est.exact_fallback
        )],
    )?;
    println!("log_z_hat={}", est.value);
    builder.finish(&[&args.out])
}

#[derive(Args)]
struct ExpectArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    index: IndexFlags,
    #[command(flatten)]
    query: QueryFlags,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    l: u64,
    /// File of statistic values, one per dataset row.
    #[arg(long, conflicts_with = "f_feature")]
    f_file: Option<PathBuf>,
    /// Use a feature column as the statistic.
    #[arg(long)]
    f_feature: Option<usize>,
    /// Bound on |f|; defaults to the max observed magnitude.
    #[arg(long)]
    c_bound: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn load_statistic(dataset: &Dataset, args: &ExpectArgs) -> Result<Vec<f64>> {
    match (&args.f_file, args.f_feature) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let values: Vec<f64> = text
                .lines()
                .filter(|line| !line.trim().is_empty())
                .map(|line| {
                    line.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::invalid("f_file", format!("not a number: {line:?}")))
                })
                .collect::<Result<_>>()?;
            Ok(values)
        }
        (None, Some(j)) => {
            if j >= dataset.dim() {
                return Err(Error::invalid(
                    "f_feature",
                    format!("column {j} out of range for d = {}", dataset.dim()),
                ));
            }
            Ok((0..dataset.len()).map(|i| dataset.row(i)[j] as f64).collect())
        }
        _ => Err(Error::invalid(
            "f_file",
            "provide exactly one of --f-file or --f-feature",
        )),
    }
}

fn cmd_expect(args: ExpectArgs, argv: &[String]) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let builder = manifest_start("expect", argv)
        .dataset(&args.dataset)?
        .index(args.index.index.as_deref())?
        .seed(args.seed);
    let index = args.index.load(&dataset)?;
    let provider = provider_for(&dataset, index.as_ref(), args.index.n_probe);
    let query = args.query.build(&dataset)?;
    let f = load_statistic(&dataset, &args)?;
    let c_bound = match args.c_bound {
        Some(c) => c,
        None => f.iter().fold(0.0f64, |acc, v| acc.max(v.abs())),
    };
    let mut rng = derive_rng(args.seed, 0);
    let est = estimate_expectation(
        &dataset,
        &query,
        &f,
        c_bound,
        provider.as_ref(),
        args.k,
        args.l,
        &mut rng,
    )?;
    write_rows(
        &args.out,
        "f_hat,c_bound,k,l,touched,exact_fallback",
        [format!(
            "{},{},{},{},{},{}",
            est.value, c_bound, est.k, est.l, est.touched, est.exact_fallback
        )],
    )?;
    println!("f_hat={}", est.value);
    builder.finish(&[&args.out])
}

#[derive(Copy, Clone, PartialEq, ValueEnum)]
enum BackendArg {
    Exact,
    Lazy,
    TopkOnly,
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    index: IndexFlags,
    /// Comma-separated training row ids.
    #[arg(long)]
    train_ids: String,
    #[arg(long)]
    iterations: usize,
    #[arg(long, default_value_t = 10.0)]
    lr0: f64,
    #[arg(long, default_value_t = 1000)]
    halving_period: usize,
    #[arg(long, value_enum)]
    backend: BackendArg,
    /// Retrieval size for the lazy and topk-only backends.
    #[arg(long)]
    k: Option<usize>,
    /// Tail draws for the lazy backend.
    #[arg(long)]
    l: Option<u64>,
    #[arg(long)]
    gap_c: Option<f64>,
    #[arg(long, default_value_t = 100)]
    eval_period: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training-curve CSV.
    #[arg(long)]
    out: PathBuf,
    /// Optional final-theta output, one component per line.
    #[arg(long)]
    theta_out: Option<PathBuf>,
}

fn cmd_learn(args: LearnArgs, argv: &[String]) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let builder = manifest_start("learn", argv)
        .dataset(&args.dataset)?
        .index(args.index.index.as_deref())?
        .seed(args.seed);
    let index = args.index.load(&dataset)?;
    let provider = provider_for(&dataset, index.as_ref(), args.index.n_probe);

    let need_k = || args.k.ok_or_else(|| Error::invalid("k", "required by this backend"));
    let backend = match args.backend {
        BackendArg::Exact => GradientBackend::Exact,
        BackendArg::Lazy => GradientBackend::Lazy {
            k: need_k()?,
            l: args.l.ok_or_else(|| Error::invalid("l", "required by the lazy backend"))?,
            gap_c: args.gap_c,
        },
        BackendArg::TopkOnly => GradientBackend::TopkOnly { k: need_k()? },
    };
    let config = LearnConfig {
        train_ids: parse_ids(&args.train_ids)?,
        iterations: args.iterations,
        lr0: args.lr0,
        halving_period: args.halving_period,
        backend,
        eval_period: args.eval_period,
        seed: args.seed,
    };
    let result = train(&dataset, &config, provider.as_ref())?;

    let backend_name = backend.name();
    let rows = result.curve.iter().map(|p| {
        format!(
            "{},{},{},{}",
            p.iteration,
            p.mean_log_likelihood,
            (p.grad_seconds * 1e9).round() as u64,
            backend_name
        )
    });
    write_rows(
        &args.out,
        "iteration,mean_log_likelihood,grad_wall_time_ns,backend",
        rows,
    )?;
    let mut outputs: Vec<&Path> = vec![&args.out];
    if let Some(theta_out) = &args.theta_out {
        write_rows(
            theta_out,
            "theta",
            result.theta.iter().map(|v| format!("{v}")),
        )?;
        outputs.push(theta_out);
    }
    println!(
        "final_mean_log_likelihood={}",
        result.curve.last().map(|p| p.mean_log_likelihood).unwrap_or(f64::NAN)
    );
    builder.finish(&outputs)
}

#[derive(Copy, Clone, PartialEq, ValueEnum)]
enum WalkSamplerArg {
    Exact,
    Lazy,
    FixedB,
}

#[derive(Args)]
struct WalkArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    index: IndexFlags,
    #[arg(long)]
    steps: u64,
    #[arg(long)]
    tau: f64,
    #[arg(long, value_enum)]
    sampler: WalkSamplerArg,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    l: Option<u64>,
    #[arg(long)]
    gap_c: Option<f64>,
    /// Defaults to 1% of steps.
    #[arg(long)]
    burn_in: Option<u64>,
    /// Record every thin-th post-burn-in state.
    #[arg(long, default_value_t = 1)]
    thin: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_walk(args: WalkArgs, argv: &[String]) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let builder = manifest_start("walk", argv)
        .dataset(&args.dataset)?
        .index(args.index.index.as_deref())?
        .seed(args.seed);
    let index = args.index.load(&dataset)?;
    let provider = provider_for(&dataset, index.as_ref(), args.index.n_probe);

    let need_k = || args.k.ok_or_else(|| Error::invalid("k", "required by this sampler"));
    let sampler = match args.sampler {
        WalkSamplerArg::Exact => WalkSampler::Exact,
        WalkSamplerArg::Lazy => WalkSampler::Lazy { k: need_k()?, gap_c: args.gap_c },
        WalkSamplerArg::FixedB => WalkSampler::FixedB {
            k: need_k()?,
            l: args.l.ok_or_else(|| Error::invalid("l", "required by the fixed-b sampler"))?,
            gap_c: args.gap_c,
        },
    };
    let mut config = WalkConfig::new(args.steps, args.tau, sampler, args.seed);
    if let Some(burn_in) = args.burn_in {
        config.burn_in = burn_in;
    }
    config.thin = args.thin;
    let stats = run_walk(&dataset, &config, provider.as_ref())?;

    let rows = stats
        .visit_counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(id, &c)| format!("{id},{c}"));
    write_rows(&args.out, "id,count", rows)?;
    println!(
        "steps={} burn_in={} mean_step_seconds={}",
        stats.steps, stats.burn_in, stats.mean_step_seconds
    );
    builder.finish(&[&args.out])
}

#[derive(Args)]
struct TvboundArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    index: IndexFlags,
    #[command(flatten)]
    query: QueryFlags,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_tvbound(args: TvboundArgs, argv: &[String]) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let builder = manifest_start("tvbound", argv)
        .dataset(&args.dataset)?
        .index(args.index.index.as_deref())?;
    let index = args.index.load(&dataset)?;
    let provider = provider_for(&dataset, index.as_ref(), args.index.n_probe);
    let query = args.query.build(&dataset)?;
    let full = score_all(&dataset, &query)?;
    let top = provider.top_k(&query, args.k)?;
    let bound = tv_upper_bound(&full, &top);
    write_rows(&args.out, "k,bound", [format!("{},{bound}", args.k)])?;
    println!("bound={bound}");
    builder.finish(&[&args.out])
}

// ------------------------------------------------------------------ bench

#[derive(Copy, Clone, PartialEq, Debug, ValueEnum)]
pub enum BenchMode {
    Sample,
    Partition,
    Expect,
}

/// Benchmark knobs shared by the command and the library entry point.
#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub mode: BenchMode,
    pub k: usize,
    /// Tail draws for partition/expect; ignored by sample mode.
    pub l: u64,
    /// Gap allowance for sample mode when the provider has no certificate.
    pub gap_c: Option<f64>,
    pub queries: usize,
    pub seed: u64,
    pub scale: f64,
    /// Feature column used as the statistic in expect mode.
    pub f_feature: usize,
    /// Run the baseline in both slots to calibrate harness overhead.
    pub self_benchmark: bool,
    pub threads: usize,
}

/// Per-query timings plus their means, all in seconds.
#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub baseline_seconds: Vec<f64>,
    pub fast_seconds: Vec<f64>,
    pub mean_baseline_seconds: f64,
    pub mean_fast_seconds: f64,
}

impl BenchOutcome {
    pub fn speedup(&self) -> f64 {
        self.mean_baseline_seconds / self.mean_fast_seconds
    }

    /// Queries needed before an index build cost is repaid by the per-query
    /// saving; infinite when the fast path is not faster.
    pub fn crossover_queries(&self, build_seconds: f64) -> f64 {
        let saving = self.mean_baseline_seconds - self.mean_fast_seconds;
        if saving > 0.0 {
            build_seconds / saving
        } else {
            f64::INFINITY
        }
    }
}

/// Times the fast path against the brute-force baseline over queries drawn
/// uniformly from the dataset rows. Deterministic in everything but the
/// recorded wall times; `threads > 1` splits the query loop.
pub fn run_bench(
    dataset: &Dataset,
    provider: &(dyn TopKProvider + Sync),
    options: &BenchOptions,
) -> Result<BenchOutcome> {
    if options.queries == 0 {
        return Err(Error::invalid("queries", "must be >= 1"));
    }
    if options.threads == 0 {
        return Err(Error::invalid("threads", "must be >= 1"));
    }
    let f: Vec<f64> = if options.mode == BenchMode::Expect {
        if options.f_feature >= dataset.dim() {
            return Err(Error::invalid(
                "f_feature",
                format!("column {} out of range for d = {}", options.f_feature, dataset.dim()),
            ));
        }
        (0..dataset.len())
            .map(|i| dataset.row(i)[options.f_feature] as f64)
            .collect()
    } else {
        Vec::new()
    };
    let c_bound = f.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);

    let one_query = |qi: usize| -> Result<(f64, f64)> {
        let mut rng = derive_rng(options.seed, qi as u64);
        let row = rng.random_range(0..dataset.len());
        let query = Query::from_row(dataset, row, options.scale)?;

        let baseline = Instant::now();
        match options.mode {
            BenchMode::Sample => {
                exact_sample(dataset, &query, &mut rng)?;
            }
            BenchMode::Partition => {
                exact_partition(dataset, &query)?;
            }
            BenchMode::Expect => {
                exact_expectation(dataset, &query, &f, c_bound)?;
            }
        }
        let baseline_seconds = baseline.elapsed().as_secs_f64();

        let fast = Instant::now();
        if options.self_benchmark {
            match options.mode {
                BenchMode::Sample => {
                    exact_sample(dataset, &query, &mut rng)?;
                }
                BenchMode::Partition => {
                    exact_partition(dataset, &query)?;
                }
                BenchMode::Expect => {
                    exact_expectation(dataset, &query, &f, c_bound)?;
                }
            }
        } else {
            match options.mode {
                BenchMode::Sample => {
                    lazy_sample(dataset, &query, provider, options.k, options.gap_c, &mut rng)?;
                }
                BenchMode::Partition => {
                    estimate_partition(dataset, &query, provider, options.k, options.l, &mut rng)?;
                }
                BenchMode::Expect => {
                    estimate_expectation(
                        dataset, &query, &f, c_bound, provider, options.k, options.l, &mut rng,
                    )?;
                }
            }
        }
        Ok((baseline_seconds, fast.elapsed().as_secs_f64()))
    };

    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(options.queries);
    if options.threads == 1 {
        for qi in 0..options.queries {
            pairs.push(one_query(qi)?);
        }
    } else {
        let chunk = options.queries.div_ceil(options.threads);
        let results: Vec<Result<Vec<(f64, f64)>>> = std::thread::scope(|scope| {
            (0..options.threads)
                .map(|t| {
                    let one_query = &one_query;
                    scope.spawn(move || {
                        let lo = t * chunk;
                        let hi = ((t + 1) * chunk).min(options.queries);
                        (lo..hi).map(one_query).collect()
                    })
                })
                .collect::<Vec<_>>()
                .into_iter()
                .map(|handle| handle.join().expect("bench thread panicked"))
                .collect()
        });
        for part in results {
            pairs.extend(part?);
        }
    }

    let (baseline_seconds, fast_seconds): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(BenchOutcome {
        mean_baseline_seconds: mean(&baseline_seconds),
        mean_fast_seconds: mean(&fast_seconds),
        baseline_seconds,
        fast_seconds,
    })
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    mode: BenchMode,
    #[arg(long)]
    k: usize,
    /// Tail draws for partition/expect modes; defaults to k.
    #[arg(long)]
    l: Option<u64>,
    /// Gap allowance for sample mode with an uncertified index.
    #[arg(long)]
    gap_c: Option<f64>,
    #[arg(long, default_value_t = 100)]
    queries: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    f_feature: usize,
    /// Time the baseline against itself instead of the fast path.
    #[arg(long)]
    self_benchmark: bool,
    /// Worker threads for the query loop; 1 gives clean latency numbers.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Index built in-process and included in the amortized report:
    /// exact | ivf | lsh.
    #[arg(long, default_value = "exact")]
    index_kind: String,
    #[arg(long, default_value_t = 0)]
    n_c: usize,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, default_value_t = 8)]
    n_probe: usize,
    #[arg(long, default_value_t = 0.2)]
    c: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Per-query CSV; the summary lands next to it as <stem>-summary.csv.
    #[arg(long)]
    out: PathBuf,
}

fn cmd_bench(args: BenchArgs, argv: &[String]) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let builder = manifest_start("bench", argv)
        .dataset(&args.dataset)?
        .seed(args.seed);

    let build_started = Instant::now();
    let index = match args.index_kind.as_str() {
        "exact" => None,
        "ivf" => {
            let n_c = if args.n_c == 0 {
                (dataset.len() as f64).sqrt().ceil() as usize
            } else {
                args.n_c
            };
            Some(Index::Ivf(build_ivf(&dataset, n_c, args.iters, args.seed)?))
        }
        "lsh" => {
            let mut config = LshConfig::new(args.c, args.delta, args.k.max(1));
            config.seed = args.seed;
            Some(Index::Lsh(build_lsh_ladder(&dataset, &config)?))
        }
        other => {
            return Err(Error::invalid(
                "index_kind",
                format!("unknown kind {other:?}; use exact, ivf, or lsh"),
            ))
        }
    };
    let build_seconds = build_started.elapsed().as_secs_f64();
    let provider = provider_for(&dataset, index.as_ref(), args.n_probe);

    let options = BenchOptions {
        mode: args.mode,
        k: args.k,
        l: args.l.unwrap_or(args.k as u64),
        gap_c: args.gap_c,
        queries: args.queries,
        seed: args.seed,
        scale: args.scale,
        f_feature: args.f_feature,
        self_benchmark: args.self_benchmark,
        threads: args.threads,
    };
    let outcome = run_bench(&dataset, provider.as_ref(), &options)?;

    let rows = (0..options.queries).map(|qi| {
        format!(
            "{qi},{},{}",
            outcome.baseline_seconds[qi], outcome.fast_seconds[qi]
        )
    });
    write_rows(&args.out, "query,baseline_seconds,fast_seconds", rows)?;

    let stem = args.out.file_stem().unwrap_or_default().to_string_lossy();
    let summary_path = args.out.with_file_name(format!("{stem}-summary.csv"));
    write_rows(
        &summary_path,
        "build_seconds,mean_baseline_seconds,mean_fast_seconds,speedup_from_timing,crossover_queries_from_timing",
        [format!(
            "{build_seconds},{},{},{},{}",
            outcome.mean_baseline_seconds,
            outcome.mean_fast_seconds,
            outcome.speedup(),
            outcome.crossover_queries(build_seconds)
        )],
    )?;
    println!(
        "build_seconds={build_seconds} mean_baseline_seconds={} mean_fast_seconds={} speedup={} crossover_queries={}",
        outcome.mean_baseline_seconds,
        outcome.mean_fast_seconds,
        outcome.speedup(),
        outcome.crossover_queries(build_seconds)
    );
    builder.finish(&[&args.out, &summary_path])
}

// ------------------------------------------------------------------ rerun

#[derive(Args)]
struct RerunArgs {
    /// Manifest to replay.
    #[arg(long)]
    manifest: PathBuf,
    /// Keep the scratch outputs instead of deleting them.
    #[arg(long)]
    keep: bool,
}

fn cmd_rerun(args: RerunArgs) -> Result<()> {
    let recorded = RunManifest::load(&args.manifest)?;
    if recorded.command == "rerun" {
        return Err(Error::invalid("manifest", "cannot replay a rerun"));
    }
    if recorded.outputs.is_empty() {
        return Err(Error::invalid("manifest", "manifest records no outputs"));
    }

    // Inputs must still be what the manifest saw.
    for stamp in recorded.dataset.iter().chain(recorded.index.iter()) {
        let current = crate::manifest::sha256_hex(Path::new(&stamp.path))?;
        if current != stamp.sha256 {
            return Err(Error::MalformedFile {
                path: args.manifest.clone(),
                reason: format!("input {} changed since the recorded run", stamp.path),
                offset: 0,
            });
        }
    }

    let scratch = std::env::temp_dir().join(format!(
        "lazydraw-rerun-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0)
    ));
    std::fs::create_dir_all(&scratch).map_err(|e| Error::io(&scratch, e))?;

    // Redirect every recorded output path to the scratch directory.
    let mut remapped: Vec<(String, PathBuf)> = Vec::new();
    for (i, stamp) in recorded.outputs.iter().enumerate() {
        let name = Path::new(&stamp.path)
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("output-{i}"));
        remapped.push((stamp.path.clone(), scratch.join(name)));
    }
    let argv: Vec<String> = recorded
        .argv
        .iter()
        .map(|arg| {
            for (old, new) in &remapped {
                if arg == old {
                    return new.display().to_string();
                }
            }
            arg.clone()
        })
        .collect();

    let full = std::iter::once("lazydraw".to_string()).chain(argv.iter().cloned());
    let cli = Cli::try_parse_from(full)
        .map_err(|e| Error::invalid("manifest", format!("recorded argv does not parse: {e}")))?;
    dispatch(cli.command, &argv)?;

    let mut mismatches = Vec::new();
    for (stamp, (_, new_path)) in recorded.outputs.iter().zip(&remapped) {
        let fresh = stable_sha256_hex(new_path)?;
        let status = if fresh == stamp.stable_sha256 { "ok" } else { "MISMATCH" };
        println!("{status} {}", stamp.path);
        if fresh != stamp.stable_sha256 {
            mismatches.push(stamp.path.clone());
        }
    }
    if !args.keep {
        let _ = std::fs::remove_dir_all(&scratch);
    } else {
        println!("scratch outputs kept in {}", scratch.display());
    }
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(Error::MalformedFile {
            path: args.manifest.clone(),
            reason: format!("{} output(s) did not reproduce: {}", mismatches.len(), mismatches.join(", ")),
            offset: 0,
        })
    }
}
