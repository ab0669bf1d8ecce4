//! Interleaved insert/query workloads and their reports.
//!
//! A workload bulk-loads `initial_count` random walks, then alternates query
//! gaps with insert batches: gap 0, batch 1, gap 1, ..., batch B, gap B. The
//! total query count is spread evenly over the B + 1 gaps.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extsort::MemoryBudget;
use crate::lsm::{LsmIndex, LsmLayout, LsmParams, WindowSpec, WindowStrategy};
use crate::search::{linear_scan, Answer};
use crate::series::{DataSeries, Query, RandomWalk};
use crate::storage::{write_raw_file, IoContext, IoSnapshot, RawFile, RawWriter};
use crate::summarization::SummaryConfig;
use crate::tree::{build_tree, TreeIndex, TreeParams};
use crate::trie::{build_trie, TrieIndex, TrieParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Approx,
    Exact,
    Window,
}

/// Index under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    /// Tree rebuilt from the full dataset after every batch; window
    /// queries post-process.
    Tree,
    /// Trie rebuilt after every batch.
    Trie,
    /// Leveled LSM; window queries use the configured strategy.
    Lsm,
    /// One partition per buffer flush; window queries search partitions
    /// independently.
    Tp,
}

impl std::fmt::Display for BenchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BenchMode::Tree => "tree",
            BenchMode::Trie => "trie",
            BenchMode::Lsm => "lsm",
            BenchMode::Tp => "tp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub initial_count: usize,
    pub insert_batch_size: usize,
    pub batches: usize,
    /// Total queries over all gaps.
    pub queries: usize,
    pub query_kind: QueryKind,
    pub window: Option<u64>,
    pub strategy: WindowStrategy,
    pub radius: usize,
    pub seed: u64,
    pub length: usize,
    pub segments: usize,
    pub bits: u8,
    pub leaf_size: usize,
    pub fill: f64,
    pub materialized: bool,
    pub buffer_records: usize,
    pub size_ratio: u32,
    pub memory_records: usize,
    pub block_records: u64,
    /// Draw queries from the indexed series instead of fresh random walks.
    pub indexed_queries: bool,
    /// Check every answer against a linear scan.
    pub oracle: bool,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            initial_count: 10_000,
            insert_batch_size: 1_000,
            batches: 10,
            queries: 100,
            query_kind: QueryKind::Exact,
            window: None,
            strategy: WindowStrategy::Btp,
            radius: 1,
            seed: 1,
            length: 256,
            segments: 16,
            bits: 8,
            leaf_size: 2000,
            fill: 0.97,
            materialized: false,
            buffer_records: 1000,
            size_ratio: 2,
            memory_records: 100_000,
            block_records: 1000,
            indexed_queries: false,
            oracle: true,
        }
    }
}

impl WorkloadSpec {
    pub fn final_count(&self) -> usize {
        self.initial_count + self.batches * self.insert_batch_size
    }

    pub fn summary(&self) -> Result<SummaryConfig> {
        SummaryConfig::new(self.segments, self.bits, self.length)
    }

    pub fn tree_params(&self) -> Result<TreeParams> {
        let p = TreeParams { summary: self.summary()?, leaf_size: self.leaf_size, fill: self.fill, materialized: self.materialized };
        p.validate()?;
        Ok(p)
    }

    pub fn lsm_params(&self, mode: BenchMode) -> Result<LsmParams> {
        let layout = if mode == BenchMode::Tp { LsmLayout::Partitioned } else { LsmLayout::Leveled { ratio: self.size_ratio } };
        let p = LsmParams { tree: self.tree_params()?, buffer_records: self.buffer_records, layout };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.summary()?;
        if self.initial_count == 0 {
            return Err(Error::Config("initial count must be at least 1".into()));
        }
        if self.batches > 0 && self.insert_batch_size == 0 {
            return Err(Error::Config("insert batches must hold at least one series".into()));
        }
        if self.radius == 0 {
            return Err(Error::Config("radius must be at least 1".into()));
        }
        if self.query_kind == QueryKind::Window && self.window.is_none_or(|w| w == 0) {
            return Err(Error::Config("window queries need a window of at least 1".into()));
        }
        MemoryBudget::new(self.memory_records)?;
        IoContext::new(self.block_records, self.length)?;
        Ok(())
    }

    /// Queries run in gap `g`.
    pub fn queries_in_gap(&self, g: usize) -> usize {
        let gaps = self.batches + 1;
        (g + 1) * self.queries / gaps - g * self.queries / gaps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub name: String,
    /// Wall-clock time; machine dependent, not reproducible.
    pub wall_ms_advisory: f64,
    pub io: IoSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub gap: usize,
    pub query: usize,
    pub distance: f64,
    pub timestamp: u64,
    pub visited_records: u64,
    pub records_fetched: u64,
    pub candidates: u64,
    pub runs_touched: u64,
    pub oracle_distance: Option<f64>,
    /// Answer distance over oracle distance (approximate queries).
    pub ratio: Option<f64>,
    pub mismatch: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FillStats {
    pub leaves: usize,
    pub min_entries: usize,
    pub max_entries: usize,
    pub mean_entries: f64,
    /// Entries over leaf capacity, all leaves included.
    pub utilization: f64,
}

impl FillStats {
    /// `leaves` holds (entries, capacity) per leaf.
    pub fn from_leaves(leaves: &[(usize, usize)]) -> Self {
        if leaves.is_empty() {
            return Self::default();
        }
        let entries: usize = leaves.iter().map(|l| l.0).sum();
        let capacity: usize = leaves.iter().map(|l| l.1).sum();
        Self {
            leaves: leaves.len(),
            min_entries: leaves.iter().map(|l| l.0).min().unwrap(),
            max_entries: leaves.iter().map(|l| l.0).max().unwrap(),
            mean_entries: entries as f64 / leaves.len() as f64,
            utilization: entries as f64 / capacity as f64,
        }
    }

    pub fn of_tree(tree: &TreeIndex) -> Result<Self> {
        let l = tree.params().leaf_size;
        Ok(Self::from_leaves(&tree.leaf_fill()?.into_iter().map(|c| (c, l)).collect::<Vec<_>>()))
    }

    pub fn of_trie(trie: &TrieIndex) -> Self {
        let l = trie.header().params.leaf_size;
        let leaves: Vec<_> =
            trie.nodes().iter().filter(|n| n.leaf).map(|n| (n.count as usize, n.page_count as usize * l)).collect();
        Self::from_leaves(&leaves)
    }

    pub fn of_lsm(lsm: &LsmIndex) -> Result<Self> {
        let l = lsm.params().tree.leaf_size;
        let mut leaves = Vec::new();
        for t in lsm.run_trees() {
            leaves.extend(t.leaf_fill()?.into_iter().map(|c| (c, l)));
        }
        Ok(Self::from_leaves(&leaves))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub mode: BenchMode,
    pub spec: WorkloadSpec,
    pub final_count: u64,
    pub run_count: usize,
    pub leaf_fill: FillStats,
    pub build_io: IoSnapshot,
    pub insert_io: IoSnapshot,
    pub query_io: IoSnapshot,
    pub oracle_mismatches: u64,
    pub mean_distance: f64,
    pub mean_visited_records: f64,
    pub mean_records_fetched: f64,
    pub phases: Vec<PhaseReport>,
    pub queries: Vec<QueryRecord>,
}

/// Header of [`BenchReport::write_csv`].
pub const CSV_COLUMNS: &[&str] = &[
    "mode",
    "gap",
    "query",
    "distance",
    "timestamp",
    "visited_records",
    "records_fetched",
    "candidates",
    "runs_touched",
    "oracle_distance",
    "ratio",
    "mismatch",
];

impl BenchReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// One row per query.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let err = |e: csv::Error| Error::Config(format!("csv: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS).map_err(err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for q in &self.queries {
            w.write_record([
                self.mode.to_string(),
                q.gap.to_string(),
                q.query.to_string(),
                q.distance.to_string(),
                q.timestamp.to_string(),
                q.visited_records.to_string(),
                q.records_fetched.to_string(),
                q.candidates.to_string(),
                q.runs_touched.to_string(),
                opt(q.oracle_distance),
                opt(q.ratio),
                q.mismatch.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", None, e))
    }

    /// The report with every wall-clock field zeroed.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for p in &mut r.phases {
            p.wall_ms_advisory = 0.0;
        }
        r
    }
}

enum Live {
    Tree(TreeIndex),
    Trie(TrieIndex),
    Lsm(Box<LsmIndex>),
}

struct Runner<'a> {
    spec: &'a WorkloadSpec,
    mode: BenchMode,
    dir: PathBuf,
    ctx: IoContext,
    budget: MemoryBudget,
    data: Vec<DataSeries>,
    raw_path: PathBuf,
    generation: usize,
}

impl Runner<'_> {
    fn build_static(&mut self) -> Result<Live> {
        let raw = Arc::new(RawFile::open(&self.raw_path, &self.ctx)?);
        let work = self.dir.join("tmp");
        std::fs::create_dir_all(&work).map_err(|e| Error::io(&work, None, e))?;
        self.generation += 1;
        let path = self.dir.join(format!("index-{}", self.generation));
        let live = match self.mode {
            BenchMode::Tree => Live::Tree(build_tree(raw, &path, self.spec.tree_params()?, self.budget, &work, &self.ctx)?),
            BenchMode::Trie => {
                let p = TrieParams { summary: self.spec.summary()?, leaf_size: self.spec.leaf_size, materialized: self.spec.materialized };
                Live::Trie(build_trie(raw, &path, p, self.budget, &work, &self.ctx)?)
            }
            BenchMode::Lsm | BenchMode::Tp => unreachable!(),
        };
        if self.generation > 1 {
            let old = self.dir.join(format!("index-{}", self.generation - 1));
            std::fs::remove_file(&old).map_err(|e| Error::io(&old, None, e))?;
        }
        Ok(live)
    }

    fn build(&mut self) -> Result<Live> {
        match self.mode {
            BenchMode::Tree | BenchMode::Trie => self.build_static(),
            BenchMode::Lsm | BenchMode::Tp => Ok(Live::Lsm(Box::new(LsmIndex::bulk_load(
                self.dir.join("lsm"),
                &self.raw_path,
                self.spec.lsm_params(self.mode)?,
                self.budget,
                &self.ctx,
            )?))),
        }
    }

    fn insert(&mut self, live: Live, batch: Vec<DataSeries>) -> Result<Live> {
        match live {
            Live::Lsm(mut lsm) => {
                for s in &batch {
                    lsm.insert(s.clone())?;
                }
                self.data.extend(batch);
                Ok(Live::Lsm(lsm))
            }
            other => {
                drop(other);
                let mut w = RawWriter::append_to(&self.raw_path, &self.ctx)?;
                for s in &batch {
                    w.append_series(s)?;
                }
                w.finish()?;
                self.data.extend(batch);
                self.build_static()
            }
        }
    }

    fn query(&self, live: &Live, series: &DataSeries) -> Result<Answer> {
        let spec = self.spec;
        let q = Query::new(series.clone());
        match (live, spec.query_kind) {
            (Live::Tree(t), QueryKind::Approx) => t.approx_search(&q, spec.radius),
            (Live::Tree(t), QueryKind::Exact) => t.exact_search(&q, spec.radius),
            (Live::Tree(t), QueryKind::Window) => t.window_query_pp(&q, spec.radius, spec.window.unwrap()),
            (Live::Trie(t), QueryKind::Approx) => t.approx_search(&q),
            (Live::Trie(t), QueryKind::Exact) => t.exact_search(&q),
            (Live::Trie(t), QueryKind::Window) => t.exact_search(&q.with_window(spec.window.unwrap())?),
            (Live::Lsm(l), QueryKind::Approx) => l.approx_search(&q, spec.radius),
            (Live::Lsm(l), QueryKind::Exact) => l.exact_search(&q, spec.radius),
            (Live::Lsm(l), QueryKind::Window) => {
                let strategy = if self.mode == BenchMode::Tp { WindowStrategy::Tp } else { spec.strategy };
                l.window_query(&q, spec.radius, WindowSpec::new(spec.window.unwrap(), strategy)?)
            }
        }
    }
}

fn phase<T>(ctx: &IoContext, name: String, phases: &mut Vec<PhaseReport>, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let before = ctx.stats().snapshot();
    let start = Instant::now();
    let out = f()?;
    phases.push(PhaseReport {
        name,
        wall_ms_advisory: start.elapsed().as_secs_f64() * 1e3,
        io: ctx.stats().snapshot().since(&before),
    });
    Ok(out)
}

fn sum_io<'a>(phases: impl Iterator<Item = &'a PhaseReport>) -> IoSnapshot {
    phases.fold(IoSnapshot::default(), |a, p| IoSnapshot {
        blocks_read: a.blocks_read + p.io.blocks_read,
        blocks_written: a.blocks_written + p.io.blocks_written,
        records_fetched: a.records_fetched + p.io.records_fetched,
        random_seeks: a.random_seeks + p.io.random_seeks,
    })
}

/// Runs `spec` against `mode`, keeping every file under `work_dir`.
pub fn run_workload(spec: &WorkloadSpec, mode: BenchMode, work_dir: &Path) -> Result<BenchReport> {
    spec.validate()?;
    std::fs::create_dir_all(work_dir).map_err(|e| Error::io(work_dir, None, e))?;
    let ctx = IoContext::new(spec.block_records, spec.length)?;
    let mut runner = Runner {
        spec,
        mode,
        dir: work_dir.to_path_buf(),
        budget: MemoryBudget::new(spec.memory_records)?,
        data: RandomWalk::new(spec.initial_count, spec.length, spec.seed)?.collect(),
        raw_path: work_dir.join("data.raw"),
        generation: 0,
        ctx: ctx.clone(),
    };
    let mut phases = Vec::new();
    phase(&ctx, "generate".into(), &mut phases, || write_raw_file(&runner.raw_path, spec.length, true, runner.data.clone(), &ctx))?;
    let mut live = phase(&ctx, "build".into(), &mut phases, || runner.build())?;

    let mut inserts = if spec.batches > 0 {
        Some(RandomWalk::new(spec.batches * spec.insert_batch_size, spec.length, spec.seed.wrapping_add(1))?.starting_at(spec.initial_count as u64 + 1))
    } else {
        None
    };
    let mut fresh = if spec.queries > 0 && !spec.indexed_queries {
        Some(RandomWalk::new(spec.queries, spec.length, spec.seed.wrapping_add(2))?)
    } else {
        None
    };
    let mut pick = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(3));

    let mut records = Vec::new();
    for gap in 0..=spec.batches {
        let n = spec.queries_in_gap(gap);
        let now = runner.data.len() as u64;
        let floor = match (spec.query_kind, spec.window) {
            (QueryKind::Window, Some(w)) if w < now => now - w,
            _ => 0,
        };
        let mut batch = Vec::with_capacity(n);
        for _ in 0..n {
            let s = match &mut fresh {
                Some(w) => w.next().expect("sized to the total"),
                None => {
                    let i = pick.random_range(0..runner.data.len());
                    DataSeries::new(runner.data[i].values.clone())
                }
            };
            batch.push(s);
        }
        phase(&ctx, format!("query-{gap}"), &mut phases, || {
            for s in &batch {
                let answer = runner.query(&live, s)?;
                let oracle = if spec.oracle { linear_scan(s, &runner.data, floor).map(|(_, d)| d) } else { None };
                let d = answer.neighbor.distance;
                let (ratio, mismatch) = match (spec.query_kind, oracle) {
                    (QueryKind::Approx, Some(o)) => (Some(if o > 0.0 { d / o } else if d == 0.0 { 1.0 } else { f64::INFINITY }), d < o - 1e-6),
                    (_, Some(o)) => (None, (d - o).abs() > 1e-6),
                    (_, None) => (None, false),
                };
                let st = answer.stats;
                records.push(QueryRecord {
                    gap,
                    query: records.len(),
                    distance: d,
                    timestamp: answer.neighbor.timestamp,
                    visited_records: st.visited_records,
                    records_fetched: st.records_fetched,
                    candidates: st.candidates,
                    runs_touched: st.runs_touched,
                    oracle_distance: oracle,
                    ratio,
                    mismatch,
                });
            }
            Ok(())
        })?;
        if gap < spec.batches {
            let batch: Vec<_> = inserts.as_mut().unwrap().by_ref().take(spec.insert_batch_size).collect();
            live = phase(&ctx, format!("insert-{}", gap + 1), &mut phases, || runner.insert(live, batch))?;
        }
    }

    let (leaf_fill, run_count) = match &live {
        Live::Tree(t) => (FillStats::of_tree(t)?, 1),
        Live::Trie(t) => (FillStats::of_trie(t), 1),
        Live::Lsm(l) => (FillStats::of_lsm(l)?, l.run_count()),
    };
    let mean = |f: &dyn Fn(&QueryRecord) -> f64| {
        if records.is_empty() {
            0.0
        } else {
            records.iter().map(f).sum::<f64>() / records.len() as f64
        }
    };
    Ok(BenchReport {
        mode,
        spec: spec.clone(),
        final_count: runner.data.len() as u64,
        run_count,
        leaf_fill,
        build_io: sum_io(phases.iter().filter(|p| p.name == "build")),
        insert_io: sum_io(phases.iter().filter(|p| p.name.starts_with("insert"))),
        query_io: sum_io(phases.iter().filter(|p| p.name.starts_with("query"))),
        oracle_mismatches: records.iter().filter(|r| r.mismatch).count() as u64,
        mean_distance: mean(&|r| r.distance),
        mean_visited_records: mean(&|r| r.visited_records as f64),
        mean_records_fetched: mean(&|r| r.records_fetched as f64),
        phases,
        queries: records,
    })
}
