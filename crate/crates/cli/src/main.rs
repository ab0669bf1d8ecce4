use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use zsax::bench::{run_workload, BenchMode, FillStats, QueryKind, WorkloadSpec};
use zsax::extsort::MemoryBudget;
use zsax::search::linear_scan;
use zsax::storage::{write_raw_file, RawFile};
use zsax::tree::{build_tree, TREE_MAGIC};
use zsax::trie::{build_trie, TRIE_MAGIC};
use zsax::{
    Answer, DataSeries, IoContext, IoSnapshot, LsmIndex, LsmLayout, LsmParams, Query, RandomWalk, SummaryConfig,
    TreeIndex, TreeParams, TrieIndex, TrieParams, WindowSpec, WindowStrategy,
};

/// Distance slack when comparing an answer against the linear scan.
const ORACLE_TOLERANCE: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "zsax", version, about = "Sortable-summary data series indexes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a random-walk dataset.
    Generate(GenerateArgs),
    /// Build an index over a dataset.
    Build(BuildArgs),
    /// Run queries against a built index.
    Query(QueryArgs),
    /// Run an interleaved insert/query workload.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 256)]
    length: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Store explicit timestamps with every series.
    #[arg(long)]
    timestamps: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Mode {
    Tree,
    Trie,
    Lsm,
    Tp,
}

impl From<Mode> for BenchMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Tree => BenchMode::Tree,
            Mode::Trie => BenchMode::Trie,
            Mode::Lsm => BenchMode::Lsm,
            Mode::Tp => BenchMode::Tp,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Kind {
    Approx,
    Exact,
    Window,
}

impl From<Kind> for QueryKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Approx => QueryKind::Approx,
            Kind::Exact => QueryKind::Exact,
            Kind::Window => QueryKind::Window,
        }
    }
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long, default_value_t = 16)]
    segments: usize,
    #[arg(long, default_value_t = 8)]
    cardinality_bits: u8,
    #[arg(long, default_value_t = 2000)]
    leaf_size: usize,
    #[arg(long, default_value_t = 0.97)]
    fill: f64,
    /// Store series inside the index instead of offsets into the dataset.
    #[arg(long)]
    materialized: bool,
    #[arg(long, default_value_t = 2)]
    size_ratio: u32,
    /// LSM buffer capacity.
    #[arg(long, default_value_t = 1000)]
    buffer_records: usize,
    /// Records the external sort may hold in memory.
    #[arg(long, default_value_t = 100_000)]
    memory_records: usize,
    /// Records per instrumented block.
    #[arg(long, default_value_t = 1000)]
    block_records: u64,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Index file for tree and trie, directory for lsm and tp.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    index: IndexArgs,
    /// Write the report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    /// Index file or LSM directory.
    #[arg(long)]
    index: PathBuf,
    /// Dataset the index was built from. Needed by non-materialized tree
    /// and trie indexes and by the oracle.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// A dataset file of queries, or a number of random walks to draw.
    #[arg(long, default_value = "100")]
    queries: String,
    /// Seed for drawn queries.
    #[arg(long, default_value_t = 2)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Kind::Exact)]
    kind: Kind,
    #[arg(long, default_value_t = 1)]
    radius: usize,
    #[arg(long)]
    window: Option<u64>,
    #[arg(long, default_value_t = WindowStrategy::Btp)]
    window_strategy: WindowStrategy,
    /// Cross-check every answer against a linear scan of the dataset.
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value_t = 1000)]
    block_records: u64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 10_000)]
    initial: usize,
    #[arg(long, default_value_t = 1000)]
    batch: usize,
    #[arg(long, default_value_t = 10)]
    batches: usize,
    #[arg(long, default_value_t = 100)]
    queries: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Lsm)]
    mode: Mode,
    #[arg(long, value_enum, default_value_t = Kind::Exact)]
    kind: Kind,
    #[arg(long, default_value_t = 1)]
    radius: usize,
    #[arg(long)]
    window: Option<u64>,
    #[arg(long, default_value_t = WindowStrategy::Btp)]
    window_strategy: WindowStrategy,
    #[arg(long, default_value_t = 256)]
    length: usize,
    #[command(flatten)]
    index: IndexArgs,
    /// Query with indexed series instead of fresh random walks.
    #[arg(long)]
    indexed_queries: bool,
    #[arg(long)]
    no_oracle: bool,
    /// Scratch directory; a temporary one by default.
    #[arg(long)]
    work_dir: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct BuildReport {
    mode: String,
    count: u64,
    leaves: usize,
    run_count: usize,
    build_ms_advisory: f64,
    build_io: IoSnapshot,
    leaf_fill: FillStats,
    /// Leaves per tenth of capacity; the last bucket holds full leaves.
    fill_histogram: [usize; 11],
}

#[derive(Serialize)]
struct QueryRow {
    query: usize,
    distance: f64,
    timestamp: u64,
    visited_records: u64,
    records_fetched: u64,
    candidates: u64,
    runs_touched: u64,
    io: IoSnapshot,
    oracle_distance: Option<f64>,
    mismatch: bool,
}

#[derive(Serialize)]
struct QueryReport {
    index: String,
    kind: String,
    radius: usize,
    window: Option<u64>,
    strategy: Option<String>,
    count: usize,
    oracle_mismatches: u64,
    mean_distance: f64,
    mean_visited_records: f64,
    mean_records_fetched: f64,
    query_ms_advisory: f64,
    io: IoSnapshot,
    queries: Vec<QueryRow>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.cmd {
        Cmd::Generate(a) => generate(a).map(|_| ExitCode::SUCCESS),
        Cmd::Build(a) => build(a).map(|_| ExitCode::SUCCESS),
        Cmd::Query(a) => query(a),
        Cmd::Bench(a) => bench(a),
    }
}

fn emit(report: &impl Serialize, to: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    match to {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => writeln!(std::io::stdout().lock(), "{text}")?,
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> anyhow::Result<()> {
    let ctx = IoContext::with_default_blocks(a.length);
    let header = write_raw_file(&a.out, a.length, a.timestamps, RandomWalk::new(a.count, a.length, a.seed)?, &ctx)?;
    eprintln!("wrote {} series of length {} to {}", header.count, header.length, a.out.display());
    Ok(())
}

fn histogram(fill: &[(usize, usize)]) -> [usize; 11] {
    let mut h = [0; 11];
    for &(n, cap) in fill {
        h[(n * 10 / cap.max(1)).min(10)] += 1;
    }
    h
}

fn build(a: BuildArgs) -> anyhow::Result<()> {
    let raw = RawFile::open(&a.dataset, &IoContext::with_default_blocks(2))?;
    let length = raw.series_len();
    drop(raw);
    let ctx = IoContext::new(a.index.block_records, length)?;
    let summary = SummaryConfig::new(a.index.segments, a.index.cardinality_bits, length)?;
    let budget = MemoryBudget::new(a.index.memory_records)?;
    let tree =
        TreeParams { summary, leaf_size: a.index.leaf_size, fill: a.index.fill, materialized: a.index.materialized };
    let work = a.out.with_extension("work");
    let start = Instant::now();
    let (count, fill, run_count) = match a.mode {
        Mode::Tree => {
            std::fs::create_dir_all(&work)?;
            let raw = Arc::new(RawFile::open(&a.dataset, &ctx)?);
            let t = build_tree(raw, &a.out, tree, budget, &work, &ctx)?;
            let l = t.params().leaf_size;
            (t.len(), t.leaf_fill()?.into_iter().map(|c| (c, l)).collect::<Vec<_>>(), 1)
        }
        Mode::Trie => {
            std::fs::create_dir_all(&work)?;
            let raw = Arc::new(RawFile::open(&a.dataset, &ctx)?);
            let params = TrieParams { summary, leaf_size: a.index.leaf_size, materialized: a.index.materialized };
            let t = build_trie(raw, &a.out, params, budget, &work, &ctx)?;
            let l = params.leaf_size;
            let fill = t.nodes().iter().filter(|n| n.leaf).map(|n| (n.count as usize, n.page_count as usize * l)).collect();
            (t.len(), fill, 1)
        }
        Mode::Lsm | Mode::Tp => {
            let layout =
                if a.mode == Mode::Tp { LsmLayout::Partitioned } else { LsmLayout::Leveled { ratio: a.index.size_ratio } };
            let params = LsmParams { tree, buffer_records: a.index.buffer_records, layout };
            let idx = LsmIndex::bulk_load(&a.out, &a.dataset, params, budget, &ctx)?;
            let l = tree.leaf_size;
            let mut fill = Vec::new();
            for t in idx.run_trees() {
                fill.extend(t.leaf_fill()?.into_iter().map(|c| (c, l)));
            }
            (idx.len(), fill, idx.run_count())
        }
    };
    let elapsed = start.elapsed();
    if work.exists() {
        std::fs::remove_dir_all(&work).ok();
    }
    let report = BuildReport {
        mode: BenchMode::from(a.mode).to_string(),
        count,
        leaves: fill.len(),
        run_count,
        build_ms_advisory: elapsed.as_secs_f64() * 1e3,
        build_io: ctx.stats().snapshot(),
        leaf_fill: FillStats::from_leaves(&fill),
        fill_histogram: histogram(&fill),
    };
    emit(&report, a.report.as_deref())
}

enum Opened {
    Tree(TreeIndex),
    Trie(TrieIndex),
    Lsm(Box<LsmIndex>),
}

impl Opened {
    fn open(path: &Path, dataset: Option<&Path>, ctx: &IoContext) -> anyhow::Result<Self> {
        if path.is_dir() {
            return Ok(Opened::Lsm(Box::new(LsmIndex::open(path, ctx)?)));
        }
        let mut magic = [0u8; 4];
        std::io::Read::read_exact(&mut File::open(path).with_context(|| format!("opening {}", path.display()))?, &mut magic)
            .with_context(|| format!("reading {}", path.display()))?;
        let raw = dataset.map(|d| RawFile::open(d, ctx).map(Arc::new)).transpose()?;
        // a materialized index refuses a raw file, so only hand it over when asked for
        let needs_raw = |e: &zsax::Error| matches!(e, zsax::Error::ConfigMismatch(_)) && raw.is_some();
        if &magic == TREE_MAGIC {
            match TreeIndex::open(path, None, ctx) {
                Err(e) if needs_raw(&e) => Ok(Opened::Tree(TreeIndex::open(path, raw.clone(), ctx)?)),
                r => Ok(Opened::Tree(r?)),
            }
        } else if &magic == TRIE_MAGIC {
            match TrieIndex::open(path, None, ctx) {
                Err(e) if needs_raw(&e) => Ok(Opened::Trie(TrieIndex::open(path, raw.clone(), ctx)?)),
                r => Ok(Opened::Trie(r?)),
            }
        } else {
            bail!("{} is neither a tree nor a trie index", path.display())
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Opened::Tree(_) => "tree",
            Opened::Trie(_) => "trie",
            Opened::Lsm(_) => "lsm",
        }
    }

    fn summary(&self) -> SummaryConfig {
        match self {
            Opened::Tree(t) => t.params().summary,
            Opened::Trie(t) => t.header().params.summary,
            Opened::Lsm(l) => l.params().tree.summary,
        }
    }

    fn now(&self) -> u64 {
        match self {
            Opened::Tree(t) => t.now(),
            Opened::Trie(t) => t.header().max_ts,
            Opened::Lsm(l) => l.now(),
        }
    }

    fn search(&self, q: &DataSeries, a: &QueryArgs) -> anyhow::Result<Answer> {
        let mut query = Query::new(q.clone());
        Ok(match (a.kind, self) {
            (Kind::Approx, Opened::Tree(t)) => t.approx_search(&query, a.radius)?,
            (Kind::Approx, Opened::Trie(t)) => t.approx_search(&query)?,
            (Kind::Approx, Opened::Lsm(l)) => l.approx_search(&query, a.radius)?,
            (Kind::Exact, Opened::Tree(t)) => t.exact_search(&query, a.radius)?,
            (Kind::Exact, Opened::Trie(t)) => t.exact_search(&query)?,
            (Kind::Exact, Opened::Lsm(l)) => l.exact_search(&query, a.radius)?,
            (Kind::Window, idx) => {
                let w = a.window.context("--kind window needs --window")?;
                match idx {
                    Opened::Tree(t) if a.window_strategy == WindowStrategy::Pp => t.window_query_pp(&query, a.radius, w)?,
                    Opened::Tree(t) => t.exact_search(&query.with_window(w)?, a.radius)?,
                    Opened::Trie(t) => {
                        query = query.with_window(w)?;
                        t.exact_search(&query)?
                    }
                    Opened::Lsm(l) => l.window_query(&query, a.radius, WindowSpec::new(w, a.window_strategy)?)?,
                }
            }
        })
    }
}

fn read_dataset(path: &Path, ctx: &IoContext) -> anyhow::Result<Vec<DataSeries>> {
    let raw = RawFile::open(path, ctx)?;
    raw.scan().map(|r| r.map(|(_, s)| s).map_err(Into::into)).collect()
}

fn query(a: QueryArgs) -> anyhow::Result<ExitCode> {
    if a.kind == Kind::Window && a.window.is_none() {
        bail!("--kind window needs --window");
    }
    let probe = IoContext::with_default_blocks(2);
    let opened = Opened::open(&a.index, a.dataset.as_deref(), &probe)?;
    let length = opened.summary().length;
    drop(opened);
    let ctx = IoContext::new(a.block_records, length)?;
    let idx = Opened::open(&a.index, a.dataset.as_deref(), &ctx)?;

    let queries: Vec<DataSeries> = match a.queries.parse::<usize>() {
        Ok(n) => RandomWalk::new(n, length, a.seed)?.collect(),
        Err(_) => read_dataset(Path::new(&a.queries), &IoContext::with_default_blocks(length))?,
    };
    if let Some(q) = queries.iter().find(|q| q.len() != length) {
        bail!(zsax::Error::ConfigMismatch(format!("query of length {} against an index of length {length}", q.len())));
    }

    let oracle = if a.oracle {
        let path = match (&a.dataset, &idx) {
            (Some(d), _) => d.clone(),
            (None, Opened::Lsm(l)) if l.dir().join("raw.log").exists() => l.dir().join("raw.log"),
            _ => bail!("--oracle needs --dataset"),
        };
        Some(read_dataset(&path, &IoContext::with_default_blocks(length))?)
    } else {
        None
    };
    let floor = match a.kind {
        Kind::Window => idx.now().saturating_sub(a.window.unwrap_or(0)),
        _ => 0,
    };

    let start = Instant::now();
    let mut rows = Vec::with_capacity(queries.len());
    for (i, q) in queries.iter().enumerate() {
        let before = ctx.stats().snapshot();
        let ans = idx.search(q, &a)?;
        let io = ctx.stats().snapshot().since(&before);
        let oracle_distance = oracle.as_ref().and_then(|data| linear_scan(q, data, floor)).map(|(_, d)| d);
        let mismatch = a.kind != Kind::Approx
            && oracle_distance.is_some_and(|d| (d - ans.neighbor.distance).abs() > ORACLE_TOLERANCE);
        rows.push(QueryRow {
            query: i,
            distance: ans.neighbor.distance,
            timestamp: ans.neighbor.timestamp,
            visited_records: ans.stats.visited_records,
            records_fetched: ans.stats.records_fetched,
            candidates: ans.stats.candidates,
            runs_touched: ans.stats.runs_touched,
            io,
            oracle_distance,
            mismatch,
        });
    }
    let elapsed = start.elapsed();
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&QueryRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let report = QueryReport {
        index: idx.name().into(),
        kind: a.kind.to_possible_value().map(|v| v.get_name().to_owned()).unwrap_or_default(),
        radius: a.radius,
        window: a.window.filter(|_| a.kind == Kind::Window),
        strategy: (a.kind == Kind::Window).then(|| a.window_strategy.to_string()),
        count: rows.len(),
        oracle_mismatches: rows.iter().filter(|r| r.mismatch).count() as u64,
        mean_distance: mean(|r| r.distance),
        mean_visited_records: mean(|r| r.visited_records as f64),
        mean_records_fetched: mean(|r| r.records_fetched as f64),
        query_ms_advisory: elapsed.as_secs_f64() * 1e3,
        io: ctx.stats().snapshot(),
        queries: rows,
    };
    emit(&report, a.report.as_deref())?;
    Ok(if report.oracle_mismatches > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn bench(a: BenchArgs) -> anyhow::Result<ExitCode> {
    let spec = WorkloadSpec {
        initial_count: a.initial,
        insert_batch_size: a.batch,
        batches: a.batches,
        queries: a.queries,
        query_kind: a.kind.into(),
        window: a.window,
        strategy: a.window_strategy,
        radius: a.radius,
        seed: a.seed,
        length: a.length,
        segments: a.index.segments,
        bits: a.index.cardinality_bits,
        leaf_size: a.index.leaf_size,
        fill: a.index.fill,
        materialized: a.index.materialized,
        buffer_records: a.index.buffer_records,
        size_ratio: a.index.size_ratio,
        memory_records: a.index.memory_records,
        block_records: a.index.block_records,
        indexed_queries: a.indexed_queries,
        oracle: !a.no_oracle,
    };
    let scratch;
    let work = match &a.work_dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            d.as_path()
        }
        None => {
            scratch = tempfile::tempdir()?;
            scratch.path()
        }
    };
    let report = run_workload(&spec, a.mode.into(), work)?;
    if let Some(p) = &a.json {
        std::fs::write(p, report.to_json()? + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &a.csv {
        let file = File::create(p).with_context(|| format!("writing {}", p.display()))?;
        report.write_csv(BufWriter::new(file))?;
    }
    let mut out = std::io::stdout().lock();
    writeln!(out, "mode {} final_count {} runs {}", report.mode, report.final_count, report.run_count)?;
    for p in &report.phases {
        writeln!(
            out,
            "phase {:<10} {:>10.1} ms  read {:>8} written {:>8} seeks {:>8}",
            p.name, p.wall_ms_advisory, p.io.blocks_read, p.io.blocks_written, p.io.random_seeks
        )?;
    }
    writeln!(
        out,
        "queries {} mean distance {:.4} mean visited {:.1} mean fetched {:.1} oracle mismatches {}",
        report.queries.len(),
        report.mean_distance,
        report.mean_visited_records,
        report.mean_records_fetched,
        report.oracle_mismatches
    )?;
    Ok(if report.oracle_mismatches > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
}
