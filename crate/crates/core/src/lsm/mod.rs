//! Log-structured index for streaming inserts: an in-memory buffer flushed
//! into immutable sorted runs, runs sort-merged level by level, and window
//! queries over the most recent insertions.
//!
//! Directory layout: `MANIFEST.json`, one `run-NNNNNN.ctre` tree file per
//! run and, for non-materialized indexes, `raw.log` holding every inserted
//! series.

mod manifest;
mod window;

pub use manifest::{LsmLayout, Manifest, ManifestParams, RunEntry, MANIFEST_FILE};
pub use window::{WindowSpec, WindowStrategy};

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::extsort::{KWayMerge, MemoryBudget};
use crate::record::{Payload, SortRecord};
use crate::search::{Answer, Best, Neighbor, SearchStats, WindowFilter};
use crate::series::{squared_distance, DataSeries, Query};
use crate::storage::{IoContext, RawFile, RawWriter};
use crate::summarization::Summarizer;
use crate::tree::{build_tree, build_tree_from_sorted, finish, TreeIndex, TreeParams};

const RAW_LOG: &str = "raw.log";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsmParams {
    pub tree: TreeParams,
    /// Buffer capacity M in records.
    pub buffer_records: usize,
    pub layout: LsmLayout,
}

impl Default for LsmParams {
    fn default() -> Self {
        Self { tree: TreeParams::default(), buffer_records: 1000, layout: LsmLayout::default() }
    }
}

impl LsmParams {
    pub fn validate(&self) -> Result<()> {
        self.tree.validate()?;
        if self.buffer_records == 0 {
            return Err(Error::Config("buffer must hold at least one record".into()));
        }
        if let LsmLayout::Leveled { ratio } = self.layout {
            if ratio < 2 {
                return Err(Error::Config(format!("size ratio must be at least 2, got {ratio}")));
            }
        }
        Ok(())
    }

    /// Entries level `i` may hold: `M·rⁱ`.
    pub fn capacity(&self, level: u32) -> u64 {
        let ratio = match self.layout {
            LsmLayout::Leveled { ratio } => ratio as u64,
            LsmLayout::Partitioned => 1,
        };
        (self.buffer_records as u64).saturating_mul(ratio.saturating_pow(level))
    }

    fn to_manifest(self) -> ManifestParams {
        ManifestParams {
            summary: self.tree.summary,
            leaf_size: self.tree.leaf_size,
            fill: self.tree.fill,
            materialized: self.tree.materialized,
            buffer_records: self.buffer_records,
            layout: self.layout,
        }
    }

    fn from_manifest(m: &ManifestParams) -> Self {
        Self {
            tree: TreeParams { summary: m.summary, leaf_size: m.leaf_size, fill: m.fill, materialized: m.materialized },
            buffer_records: m.buffer_records,
            layout: m.layout,
        }
    }
}

#[derive(Debug)]
struct Run {
    entry: RunEntry,
    tree: TreeIndex,
}

#[derive(Debug, Clone)]
struct Buffered {
    series: DataSeries,
    offset: u64,
}

struct RawLog {
    writer: RawWriter,
    reader: Arc<RawFile>,
}

impl RawLog {
    /// Publishes everything appended so far to a fresh reader.
    fn refresh(&mut self, ctx: &IoContext) -> Result<()> {
        self.writer.sync()?;
        if self.reader.len() != self.writer.count() {
            self.reader = Arc::new(RawFile::open(self.writer.path(), ctx)?);
        }
        Ok(())
    }
}

pub struct LsmIndex {
    dir: PathBuf,
    params: LsmParams,
    ctx: IoContext,
    summarizer: Summarizer,
    manifest: Manifest,
    /// Newest first.
    runs: Vec<Run>,
    buffer: Vec<Buffered>,
    raw: Option<RawLog>,
    max_ts: u64,
    merge_counts: HashMap<u64, u32>,
    flushes: u64,
    merges: u64,
}

impl std::fmt::Debug for LsmIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LsmIndex")
            .field("dir", &self.dir)
            .field("params", &self.params)
            .field("runs", &self.manifest.runs)
            .field("buffered", &self.buffer.len())
            .field("max_ts", &self.max_ts)
            .finish()
    }
}

impl LsmIndex {
    /// Creates an empty index in `dir`.
    pub fn create(dir: impl AsRef<Path>, params: LsmParams, ctx: &IoContext) -> Result<Self> {
        params.validate()?;
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, None, e))?;
        if dir.join(MANIFEST_FILE).exists() {
            return Err(Error::Config(format!("{} already holds an index", dir.display())));
        }
        let raw = if params.tree.materialized {
            None
        } else {
            let path = dir.join(RAW_LOG);
            let mut writer = RawWriter::create(&path, params.tree.summary.length, true, ctx)?;
            writer.sync()?;
            Some(RawLog { reader: Arc::new(RawFile::open(&path, ctx)?), writer })
        };
        let manifest = Manifest::new(params.to_manifest(), raw.as_ref().map(|_| RAW_LOG.to_string()));
        manifest.store(&dir)?;
        Ok(Self {
            summarizer: Summarizer::new(params.tree.summary)?,
            dir,
            params,
            ctx: ctx.clone(),
            manifest,
            runs: Vec::new(),
            buffer: Vec::new(),
            raw,
            max_ts: 0,
            merge_counts: HashMap::new(),
            flushes: 0,
            merges: 0,
        })
    }

    /// Sorts a whole dataset externally and installs it as one run on the
    /// smallest level that can hold it.
    pub fn bulk_load(
        dir: impl AsRef<Path>,
        dataset: impl AsRef<Path>,
        params: LsmParams,
        budget: MemoryBudget,
        ctx: &IoContext,
    ) -> Result<Self> {
        let mut idx = Self::create(dir, params, ctx)?;
        let source = RawFile::open(dataset, ctx)?;
        if source.series_len() != params.tree.summary.length {
            return Err(Error::ConfigMismatch(format!(
                "dataset holds series of length {}, configuration expects {}",
                source.series_len(),
                params.tree.summary.length
            )));
        }
        if source.is_empty() {
            return Ok(idx);
        }
        let source = match &mut idx.raw {
            Some(log) => {
                let mut last = 0;
                for r in source.scan() {
                    let (_, s) = r?;
                    if s.timestamp <= last {
                        return Err(Error::TimestampOrder { expected: last + 1, got: s.timestamp });
                    }
                    last = s.timestamp;
                    log.writer.append_series(&s)?;
                }
                log.refresh(ctx)?;
                Arc::clone(&log.reader)
            }
            None => Arc::new(source),
        };
        let work = idx.work_dir()?;
        let name = idx.next_run_name();
        let tree = build_tree(source, idx.dir.join(&name), params.tree, budget, &work, ctx)?;
        let level = match params.layout {
            LsmLayout::Leveled { .. } => (0..).find(|l| params.capacity(*l) >= tree.len()).unwrap(),
            LsmLayout::Partitioned => 0,
        };
        idx.max_ts = tree.header().max_ts;
        idx.runs.push(Run { entry: run_entry(name, level, &tree), tree });
        idx.commit()?;
        Ok(idx)
    }

    /// Reopens an index. Inserts that were still buffered when it was last
    /// used are gone.
    pub fn open(dir: impl AsRef<Path>, ctx: &IoContext) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let manifest = Manifest::load(&dir)?;
        let params = LsmParams::from_manifest(&manifest.params);
        params.validate()?;
        let raw = match (&manifest.raw_log, params.tree.materialized) {
            (Some(name), false) => {
                let path = dir.join(name);
                let writer = RawWriter::recover(&path, ctx)?;
                Some(RawLog { reader: Arc::new(RawFile::open(&path, ctx)?), writer })
            }
            (None, true) => None,
            _ => return Err(Error::Manifest("raw log presence does not match index mode".into())),
        };
        let mut runs = Vec::with_capacity(manifest.runs.len());
        for entry in &manifest.runs {
            let tree = TreeIndex::open(dir.join(&entry.path), raw.as_ref().map(|r| Arc::clone(&r.reader)), ctx)?;
            if tree.header().checksum != entry.checksum || tree.len() != entry.count {
                return Err(Error::Manifest(format!("run {} does not match its manifest entry", entry.path)));
            }
            runs.push(Run { entry: entry.clone(), tree });
        }
        Ok(Self {
            summarizer: Summarizer::new(params.tree.summary)?,
            max_ts: manifest.max_ts,
            dir,
            params,
            ctx: ctx.clone(),
            manifest,
            runs,
            buffer: Vec::new(),
            raw,
            merge_counts: HashMap::new(),
            flushes: 0,
            merges: 0,
        })
    }

    fn work_dir(&self) -> Result<PathBuf> {
        let w = self.dir.join("tmp");
        std::fs::create_dir_all(&w).map_err(|e| Error::io(&w, None, e))?;
        Ok(w)
    }

    fn next_run_name(&mut self) -> String {
        let name = format!("run-{:06}.ctre", self.manifest.next_seq);
        self.manifest.next_seq += 1;
        name
    }

    fn commit(&mut self) -> Result<()> {
        self.runs.sort_by_key(|r| std::cmp::Reverse(r.entry.max_ts));
        self.manifest.runs = self.runs.iter().map(|r| r.entry.clone()).collect();
        self.manifest.max_ts = self.runs.iter().map(|r| r.entry.max_ts).max().unwrap_or(0);
        self.manifest.store(&self.dir)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn params(&self) -> &LsmParams {
        &self.params
    }

    /// Most recent timestamp, buffered inserts included.
    pub fn now(&self) -> u64 {
        self.max_ts
    }

    pub fn len(&self) -> u64 {
        self.runs.iter().map(|r| r.entry.count).sum::<u64>() + self.buffer.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn run_count(&self) -> usize {
        self.runs.len()
    }

    /// Manifest entries, newest first.
    pub fn runs(&self) -> &[RunEntry] {
        &self.manifest.runs
    }

    pub fn run_trees(&self) -> impl Iterator<Item = &TreeIndex> {
        self.runs.iter().map(|r| &r.tree)
    }

    pub fn flush_count(&self) -> u64 {
        self.flushes
    }

    pub fn merge_count(&self) -> u64 {
        self.merges
    }

    /// Merges each entry took part in during this session, keyed by
    /// timestamp.
    pub fn merge_counts(&self) -> &HashMap<u64, u32> {
        &self.merge_counts
    }

    pub fn max_merge_count(&self) -> u32 {
        self.merge_counts.values().copied().max().unwrap_or(0)
    }

    /// Adds `series` with the next timestamp. A nonzero timestamp on the
    /// series must equal that value.
    pub fn insert(&mut self, series: DataSeries) -> Result<u64> {
        if series.len() != self.params.tree.summary.length {
            return Err(Error::LengthMismatch { expected: self.params.tree.summary.length, actual: series.len() });
        }
        let ts = self.max_ts + 1;
        if series.timestamp != 0 && series.timestamp != ts {
            return Err(Error::TimestampOrder { expected: ts, got: series.timestamp });
        }
        let series = DataSeries { timestamp: ts, ..series };
        let offset = match &mut self.raw {
            Some(log) => log.writer.append_series(&series)?,
            None => 0,
        };
        self.buffer.push(Buffered { series, offset });
        self.max_ts = ts;
        if self.buffer.len() >= self.params.buffer_records {
            self.flush()?;
        }
        Ok(ts)
    }

    /// Runs merged with the buffer and the level the result goes to.
    fn placement(&self) -> (Vec<usize>, u32) {
        match self.params.layout {
            LsmLayout::Partitioned => (Vec::new(), 0),
            LsmLayout::Leveled { .. } => {
                let mut acc = self.buffer.len() as u64;
                let mut merged = Vec::new();
                for level in 0.. {
                    let here: Vec<usize> = (0..self.runs.len()).filter(|i| self.runs[*i].entry.level == level).collect();
                    let size: u64 = here.iter().map(|i| self.runs[*i].entry.count).sum();
                    if acc + size <= self.params.capacity(level) {
                        merged.extend(here);
                        return (merged, level);
                    }
                    acc += size;
                    merged.extend(here);
                }
                unreachable!()
            }
        }
    }

    /// Seals the buffer into a run, merging lower levels as needed.
    pub fn flush(&mut self) -> Result<()> {
        if self.buffer.is_empty() {
            return Ok(());
        }
        let materialized = self.params.tree.materialized;
        let mut records = Vec::with_capacity(self.buffer.len());
        for b in &self.buffer {
            let payload = if materialized { Payload::inline(&b.series) } else { Payload::Offset(b.offset) };
            records.push(SortRecord { key: self.summarizer.key(&b.series)?, timestamp: b.series.timestamp, payload });
        }
        records.sort_unstable();
        if let Some(log) = &mut self.raw {
            log.refresh(&self.ctx)?;
        }

        let (merged, level) = self.placement();
        let name = self.next_run_name();
        let path = self.dir.join(&name);
        let count = records.len() as u64 + merged.iter().map(|i| self.runs[*i].entry.count).sum::<u64>();
        {
            let mut inputs: Vec<Box<dyn Iterator<Item = Result<SortRecord>> + '_>> = vec![Box::new(records.into_iter().map(Ok))];
            for i in &merged {
                inputs.push(Box::new(self.runs[*i].tree.records()));
            }
            build_tree_from_sorted(&path, self.params.tree, count, KWayMerge::new(inputs), &self.ctx)?;
        }
        let tree = TreeIndex::open(&path, self.raw.as_ref().map(|r| Arc::clone(&r.reader)), &self.ctx)?;

        if !merged.is_empty() {
            for b in &self.buffer {
                *self.merge_counts.entry(b.series.timestamp).or_default() += 1;
            }
            for i in &merged {
                for ts in self.runs[*i].tree.snapshot().timestamps() {
                    *self.merge_counts.entry(*ts).or_default() += 1;
                }
            }
            self.merges += 1;
        }

        let mut old = Vec::new();
        for i in merged.into_iter().rev() {
            old.push(self.runs.remove(i));
        }
        self.runs.push(Run { entry: run_entry(name, level, &tree), tree });
        self.commit()?;
        for r in old {
            let p = r.tree.path().to_path_buf();
            drop(r);
            std::fs::remove_file(&p).map_err(|e| Error::io(&p, None, e))?;
        }
        self.buffer.clear();
        self.flushes += 1;
        Ok(())
    }

    fn scan_buffer(&self, query: &DataSeries, filter: WindowFilter, best: &mut Best, stats: &mut SearchStats) {
        for b in &self.buffer {
            if !filter.admits(b.series.timestamp) {
                continue;
            }
            stats.visited_records += 1;
            let distance = squared_distance(&query.values, &b.series.values).sqrt();
            best.offer(Neighbor { distance, timestamp: b.series.timestamp, locator: b.offset, series: b.series.clone() });
        }
    }

    fn check_query(&self, query: &DataSeries) -> Result<()> {
        if query.len() != self.params.tree.summary.length {
            return Err(Error::ConfigMismatch(format!(
                "query length {} but index holds series of length {}",
                query.len(),
                self.params.tree.summary.length
            )));
        }
        Ok(())
    }

    /// Buffer scan plus a per-run approximate search. With `skip`, runs
    /// entirely older than the window are left out.
    fn approx_into(
        &self,
        query: &DataSeries,
        radius: usize,
        filter: WindowFilter,
        skip: bool,
        best: &mut Best,
        stats: &mut SearchStats,
    ) -> Result<()> {
        self.scan_buffer(query, filter, best, stats);
        for run in &self.runs {
            if skip && run.entry.max_ts <= filter.floor() {
                continue;
            }
            stats.runs_touched += 1;
            run.tree.approx_into(query, radius, filter, best, stats)?;
        }
        Ok(())
    }

    pub fn approx_search(&self, q: &Query, radius: usize) -> Result<Answer> {
        self.check_query(&q.series)?;
        let filter = WindowFilter::before(self.now(), q.window);
        let mut best = Best::default();
        let mut stats = SearchStats::default();
        self.approx_into(&q.series, radius, filter, true, &mut best, &mut stats)?;
        finish(best, stats, self.is_empty(), q.window)
    }

    /// Exact search; a window on the query is answered with
    /// [`WindowStrategy::Btp`].
    pub fn exact_search(&self, q: &Query, radius: usize) -> Result<Answer> {
        match q.window {
            Some(w) => self.window_query(q, radius, WindowSpec::new(w, WindowStrategy::Btp)?),
            None => self.search_runs(&q.series, radius, WindowFilter::None, None),
        }
    }

    /// Approximate seed, then a summary scan of every run newest to oldest
    /// with the best-so-far carried along.
    fn search_runs(&self, query: &DataSeries, radius: usize, filter: WindowFilter, window: Option<u64>) -> Result<Answer> {
        self.check_query(query)?;
        let skip = matches!(filter, WindowFilter::Before { .. });
        let mut best = Best::default();
        let mut stats = SearchStats::default();
        self.approx_into(query, radius, filter, skip, &mut best, &mut stats)?;
        for run in &self.runs {
            if skip && run.entry.max_ts <= filter.floor() {
                continue;
            }
            run.tree.sims_into(query, filter, &mut best, &mut stats)?;
        }
        finish(best, stats, self.is_empty(), window)
    }

    pub fn window_query(&self, q: &Query, radius: usize, spec: WindowSpec) -> Result<Answer> {
        self.check_query(&q.series)?;
        let w = Some(spec.window);
        match spec.strategy {
            WindowStrategy::Btp => self.search_runs(&q.series, radius, WindowFilter::before(self.now(), w), w),
            WindowStrategy::Pp => self.search_runs(&q.series, radius, WindowFilter::after(self.now(), w), w),
            WindowStrategy::Tp => {
                let filter = WindowFilter::before(self.now(), w);
                let mut best = Best::default();
                let mut stats = SearchStats::default();
                self.scan_buffer(&q.series, filter, &mut best, &mut stats);
                for run in &self.runs {
                    if run.entry.max_ts <= filter.floor() {
                        continue;
                    }
                    let mut local = Best::default();
                    stats.runs_touched += 1;
                    run.tree.approx_into(&q.series, radius, filter, &mut local, &mut stats)?;
                    run.tree.sims_into(&q.series, filter, &mut local, &mut stats)?;
                    best.merge(local);
                }
                finish(best, stats, self.is_empty(), w)
            }
        }
    }
}

fn run_entry(path: String, level: u32, tree: &TreeIndex) -> RunEntry {
    let h = tree.header();
    RunEntry { path, level, min_ts: h.min_ts, max_ts: h.max_ts, count: h.count, checksum: h.checksum }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::linear_scan;
    use crate::series::RandomWalk;
    use crate::storage::write_raw_file;
    use crate::summarization::SummaryConfig;

    fn params(m: usize, layout: LsmLayout, materialized: bool) -> LsmParams {
        LsmParams {
            tree: TreeParams { summary: SummaryConfig::new(8, 4, 32).unwrap(), leaf_size: 16, fill: 1.0, materialized },
            buffer_records: m,
            layout,
        }
    }

    fn ctx() -> IoContext {
        IoContext::new(16, 32).unwrap()
    }

    fn check_structure(idx: &LsmIndex) {
        let runs = idx.runs();
        for w in runs.windows(2) {
            assert!(w[0].min_ts > w[1].max_ts, "runs overlap in time: {runs:?}");
        }
        if let LsmLayout::Leveled { .. } = idx.params.layout {
            for w in runs.windows(2) {
                assert!(w[0].level < w[1].level);
            }
            for r in runs {
                assert!(r.count <= idx.params.capacity(r.level));
            }
        }
    }

    #[test]
    fn capacities_double() {
        let p = params(4, LsmLayout::default(), false);
        for l in 0..10 {
            assert_eq!(p.capacity(l + 1), 2 * p.capacity(l));
        }
        assert_eq!(p.capacity(0), 4);
    }

    #[test]
    fn four_inserts_one_flush() {
        let dir = tempfile::tempdir().unwrap();
        let mut idx = LsmIndex::create(dir.path().join("i"), params(4, LsmLayout::default(), false), &ctx()).unwrap();
        for s in RandomWalk::new(4, 32, 1).unwrap() {
            idx.insert(s).unwrap();
        }
        assert_eq!(idx.run_count(), 1);
        assert_eq!(idx.runs()[0].level, 0);
        assert_eq!(idx.buffered(), 0);
        assert_eq!(idx.max_merge_count(), 0);
    }

    #[test]
    fn leveling_behaves_like_a_binary_counter() {
        let dir = tempfile::tempdir().unwrap();
        let mut idx = LsmIndex::create(dir.path().join("i"), params(4, LsmLayout::default(), false), &ctx()).unwrap();
        let mut shapes = Vec::new();
        for s in RandomWalk::new(64, 32, 2).unwrap() {
            idx.insert(DataSeries { timestamp: 0, ..s }).unwrap();
            if idx.buffered() == 0 {
                check_structure(&idx);
                let n = idx.len() / 4;
                assert_eq!(idx.run_count() as u32, n.count_ones(), "after {n} flushes");
                let bound = (n as f64).log2().ceil() as usize + 1;
                assert!(idx.run_count() <= bound);
                shapes.push(idx.runs().iter().map(|r| r.level).collect::<Vec<_>>());
            }
        }
        assert_eq!(shapes[3], vec![2]);
        assert_eq!(shapes[4], vec![0, 2]);
        assert_eq!(idx.max_merge_count(), 4);
        assert!(idx.merge_counts().values().all(|c| *c <= 4));
        assert!(!idx.dir().join("run-000000.ctre").exists());
    }

    #[test]
    fn sixteen_inserts_bound() {
        let dir = tempfile::tempdir().unwrap();
        let mut idx = LsmIndex::create(dir.path().join("i"), params(4, LsmLayout::default(), true), &ctx()).unwrap();
        for s in RandomWalk::new(16, 32, 3).unwrap() {
            idx.insert(s).unwrap();
        }
        assert!(idx.run_count() <= 3);
        assert!(idx.max_merge_count() <= 2);
    }

    #[test]
    fn timestamps_must_follow() {
        let dir = tempfile::tempdir().unwrap();
        let mut idx = LsmIndex::create(dir.path().join("i"), params(4, LsmLayout::default(), false), &ctx()).unwrap();
        let mut w = RandomWalk::new(3, 32, 4).unwrap();
        assert_eq!(idx.insert(w.next().unwrap()).unwrap(), 1);
        let bad = DataSeries { timestamp: 7, ..w.next().unwrap() };
        assert!(matches!(idx.insert(bad), Err(Error::TimestampOrder { expected: 2, got: 7 })));
    }

    #[test]
    fn read_your_writes_against_oracle() {
        for mat in [false, true] {
            let dir = tempfile::tempdir().unwrap();
            let mut idx = LsmIndex::create(dir.path().join("i"), params(8, LsmLayout::default(), mat), &ctx()).unwrap();
            let data: Vec<_> = RandomWalk::new(150, 32, 5).unwrap().collect();
            let queries: Vec<_> = RandomWalk::new(30, 32, 6).unwrap().collect();
            for (i, s) in data.iter().enumerate() {
                idx.insert(s.clone()).unwrap();
                if i % 5 == 0 {
                    let q = &queries[i % 30];
                    let got = idx.exact_search(&Query::new(q.clone()), 1).unwrap();
                    let (j, d) = linear_scan(q, &data[..=i], 0).unwrap();
                    assert!((got.neighbor.distance - d).abs() < 1e-9);
                    assert_eq!(got.neighbor.timestamp, data[j].timestamp);
                    let own = idx.approx_search(&Query::new(s.clone()), 1).unwrap();
                    assert_eq!(own.neighbor.distance, 0.0);
                }
            }
            check_structure(&idx);
        }
    }

    fn loaded(n: usize, m: usize, layout: LsmLayout) -> (tempfile::TempDir, IoContext, Vec<DataSeries>, LsmIndex) {
        let dir = tempfile::tempdir().unwrap();
        let ctx = ctx();
        let data: Vec<_> = RandomWalk::new(n, 32, 7).unwrap().collect();
        let raw = dir.path().join("d.raw");
        write_raw_file(&raw, 32, false, data.clone(), &ctx).unwrap();
        let idx = LsmIndex::bulk_load(dir.path().join("i"), &raw, params(m, layout, false), MemoryBudget::new(100).unwrap(), &ctx).unwrap();
        (dir, ctx, data, idx)
    }

    #[test]
    fn bulk_load_is_one_run_equal_to_a_tree() {
        let (dir, ctx, data, idx) = loaded(500, 16, LsmLayout::default());
        assert_eq!(idx.run_count(), 1);
        assert_eq!(idx.runs()[0].level, 5);
        assert_eq!(idx.now(), 500);
        let raw = Arc::new(RawFile::open(dir.path().join("d.raw"), &ctx).unwrap());
        let tree = build_tree(raw, dir.path().join("t.ctre"), idx.params.tree, MemoryBudget::new(100).unwrap(), dir.path(), &ctx).unwrap();
        for q in RandomWalk::new(10, 32, 8).unwrap() {
            let q = Query::new(q);
            let a = idx.exact_search(&q, 1).unwrap();
            let b = tree.exact_search(&q, 1).unwrap();
            assert_eq!(a.neighbor.distance, b.neighbor.distance);
            assert_eq!(a.neighbor.timestamp, b.neighbor.timestamp);
            assert_eq!(idx.approx_search(&q, 1).unwrap().neighbor.distance, tree.approx_search(&q, 1).unwrap().neighbor.distance);
        }
        assert_eq!(data.len(), 500);
    }

    #[test]
    fn window_strategies_agree_with_oracle() {
        for layout in [LsmLayout::default(), LsmLayout::Partitioned] {
            let (_dir, _ctx, mut data, mut idx) = loaded(300, 50, layout);
            for s in RandomWalk::new(230, 32, 9).unwrap().starting_at(301) {
                idx.insert(s.clone()).unwrap();
                data.push(s);
            }
            assert_eq!(idx.buffered(), 30);
            for (k, q) in RandomWalk::new(12, 32, 10).unwrap().enumerate() {
                let w = [1u64, 20, 50, 120, 400, 1000][k % 6];
                let floor = idx.now().saturating_sub(w);
                let (j, d) = linear_scan(&q, &data, floor).unwrap();
                let mut fetched = Vec::new();
                for strategy in [WindowStrategy::Btp, WindowStrategy::Tp, WindowStrategy::Pp] {
                    let a = idx.window_query(&Query::new(q.clone()), 1, WindowSpec::new(w, strategy).unwrap()).unwrap();
                    assert!((a.neighbor.distance - d).abs() < 1e-9, "{strategy} w={w}");
                    assert_eq!(a.neighbor.timestamp, data[j].timestamp, "{strategy} w={w}");
                    fetched.push(a.stats.records_fetched);
                }
                assert!(fetched[0] <= fetched[2], "{fetched:?}");
                if w == 1 {
                    assert_eq!(data[j].timestamp, idx.now());
                }
            }
        }
    }

    #[test]
    fn btp_skips_runs_outside_the_window() {
        let (_dir, _ctx, _data, mut idx) = loaded(400, 50, LsmLayout::Partitioned);
        for s in RandomWalk::new(100, 32, 11).unwrap().starting_at(401) {
            idx.insert(s).unwrap();
        }
        assert_eq!(idx.run_count(), 3);
        let q = Query::new(RandomWalk::new(1, 32, 12).unwrap().next().unwrap()).with_window(50).unwrap();
        let a = idx.exact_search(&q, 1).unwrap();
        assert_eq!(a.stats.runs_touched, 1);
        let tp = idx.window_query(&q, 1, WindowSpec::new(50, WindowStrategy::Tp).unwrap()).unwrap();
        assert_eq!(tp.stats.runs_touched, 1);
        let tp2 = idx.window_query(&q, 1, WindowSpec::new(60, WindowStrategy::Tp).unwrap()).unwrap();
        assert_eq!(tp2.stats.runs_touched, 2);
    }

    #[test]
    fn reopen_keeps_flushed_runs() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = ctx();
        let p = params(10, LsmLayout::default(), false);
        let data: Vec<_> = RandomWalk::new(35, 32, 13).unwrap().collect();
        {
            let mut idx = LsmIndex::create(dir.path().join("i"), p, &ctx).unwrap();
            for s in &data {
                idx.insert(s.clone()).unwrap();
            }
            assert_eq!(idx.buffered(), 5);
        }
        let mut idx = LsmIndex::open(dir.path().join("i"), &ctx).unwrap();
        assert_eq!(idx.len(), 30);
        assert_eq!(idx.now(), 30);
        check_structure(&idx);
        let q = Query::new(data[7].clone());
        assert_eq!(idx.exact_search(&q, 1).unwrap().neighbor.timestamp, 8);
        assert!(idx.insert(data[31].clone()).is_err());
        assert_eq!(idx.insert(data[30].clone()).unwrap(), 31);
    }

    #[test]
    fn empty_index_and_empty_window() {
        let dir = tempfile::tempdir().unwrap();
        let idx = LsmIndex::create(dir.path().join("i"), params(4, LsmLayout::default(), false), &ctx()).unwrap();
        let q = Query::new(RandomWalk::new(1, 32, 1).unwrap().next().unwrap());
        assert!(matches!(idx.exact_search(&q, 1), Err(Error::EmptyIndex)));
        assert!(LsmIndex::create(dir.path().join("i"), params(4, LsmLayout::default(), false), &ctx()).is_err());
    }
}
