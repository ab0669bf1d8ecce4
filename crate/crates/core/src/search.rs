//! Search results, per-query counters, the in-memory summary snapshot and
//! the scan of in-memory summarizations shared by every index.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::series::{squared_distance, DataSeries};
use crate::summarization::{restore_sum, InvSaxKey, MindistTable, SummaryConfig};
use crate::sweep;

/// A search answer.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub distance: f64,
    pub timestamp: u64,
    /// Raw-file offset for non-materialized indexes, otherwise the record's
    /// position in its index.
    pub locator: u64,
    pub series: DataSeries,
}

impl Neighbor {
    fn rank(&self) -> (f64, u64, u64) {
        (self.distance, self.timestamp, self.locator)
    }
}

/// Per-query counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    /// Euclidean distance evaluations.
    pub visited_records: u64,
    /// Records whose series was read from storage.
    pub records_fetched: u64,
    /// Entries that survived lower-bound pruning.
    pub candidates: u64,
    /// Runs or partitions searched.
    pub runs_touched: u64,
}

impl SearchStats {
    pub fn add(&mut self, o: &SearchStats) {
        self.visited_records += o.visited_records;
        self.records_fetched += o.records_fetched;
        self.candidates += o.candidates;
        self.runs_touched += o.runs_touched;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Answer {
    pub neighbor: Neighbor,
    pub stats: SearchStats,
}

/// Best-so-far. Ties on distance go to the lower timestamp, then the lower
/// locator.
#[derive(Debug, Clone, Default)]
pub struct Best {
    pub current: Option<Neighbor>,
}

impl Best {
    pub fn distance(&self) -> f64 {
        self.current.as_ref().map_or(f64::INFINITY, |n| n.distance)
    }

    pub fn offer(&mut self, candidate: Neighbor) {
        let better = match &self.current {
            None => true,
            Some(b) => candidate.rank().partial_cmp(&b.rank()) == Some(std::cmp::Ordering::Less),
        };
        if better {
            self.current = Some(candidate);
        }
    }

    pub fn merge(&mut self, other: Best) {
        if let Some(n) = other.current {
            self.offer(n);
        }
    }
}

/// Timestamp restriction applied during a search. A record is inside the
/// window when its timestamp is greater than `floor`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowFilter {
    None,
    /// Drop out-of-window entries using the in-memory timestamps, before
    /// any fetch.
    Before { floor: u64 },
    /// Fetch first, then discard out-of-window records.
    After { floor: u64 },
}

impl WindowFilter {
    /// Window of the `window` most recent insertions up to `now`.
    pub fn before(now: u64, window: Option<u64>) -> Self {
        match window {
            Some(w) if w < now => WindowFilter::Before { floor: now - w },
            _ => WindowFilter::None,
        }
    }

    pub fn after(now: u64, window: Option<u64>) -> Self {
        match window {
            Some(w) if w < now => WindowFilter::After { floor: now - w },
            _ => WindowFilter::None,
        }
    }

    pub fn floor(&self) -> u64 {
        match self {
            WindowFilter::None => 0,
            WindowFilter::Before { floor } | WindowFilter::After { floor } => *floor,
        }
    }

    pub fn admits(&self, ts: u64) -> bool {
        ts > self.floor()
    }
}

/// In-memory summaries aligned with on-disk record order.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    segments: usize,
    symbols: Vec<u16>,
    timestamps: Vec<u64>,
    locators: Vec<u64>,
}

impl Snapshot {
    pub fn new(segments: usize) -> Self {
        Self { segments, ..Default::default() }
    }

    pub fn push(&mut self, key: &InvSaxKey, cfg: &SummaryConfig, timestamp: u64, locator: u64) -> Result<()> {
        let start = self.symbols.len();
        self.symbols.resize(start + self.segments, 0);
        crate::summarization::restore_symbols_into(key, cfg.segments, cfg.bits as usize, &mut self.symbols[start..]);
        debug_assert_eq!(restore_sum(key, cfg)?.symbols, self.symbols[start..]);
        self.timestamps.push(timestamp);
        self.locators.push(locator);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn symbols(&self, i: usize) -> &[u16] {
        &self.symbols[i * self.segments..(i + 1) * self.segments]
    }

    pub fn all_symbols(&self) -> &[u16] {
        &self.symbols
    }

    pub fn timestamps(&self) -> &[u64] {
        &self.timestamps
    }

    pub fn locators(&self) -> &[u64] {
        &self.locators
    }

    /// Positions admitted by `filter` when it can be applied from memory.
    pub fn admitted(&self, filter: WindowFilter) -> Option<Vec<usize>> {
        match filter {
            WindowFilter::Before { floor } => {
                Some(self.timestamps.iter().enumerate().filter(|(_, t)| **t > floor).map(|(i, _)| i).collect())
            }
            _ => None,
        }
    }
}

/// Exact search over one snapshot, tightening `best`.
///
/// Every entry whose lower bound is below the best-so-far becomes a
/// candidate; candidates are fetched in ascending locator order (the
/// physical order on disk) and re-checked against the current best before
/// each fetch.
pub fn sims<F>(
    snapshot: &Snapshot,
    table: &MindistTable,
    query: &DataSeries,
    filter: WindowFilter,
    best: &mut Best,
    stats: &mut SearchStats,
    mut fetch: F,
) -> Result<()>
where
    F: FnMut(usize) -> Result<DataSeries>,
{
    let selected = snapshot.admitted(filter);
    let bounds = sweep::mindists(table, snapshot.all_symbols(), selected.as_deref());
    let bsf = best.distance();
    let mut candidates: Vec<(usize, f64)> = match &selected {
        None => bounds.iter().enumerate().filter(|(_, b)| **b < bsf).map(|(i, b)| (i, *b)).collect(),
        Some(sel) => sel.iter().zip(&bounds).filter(|(_, b)| **b < bsf).map(|(i, b)| (*i, *b)).collect(),
    };
    candidates.sort_by_key(|(i, _)| snapshot.locators[*i]);
    stats.candidates += candidates.len() as u64;
    for (i, bound) in candidates {
        if bound >= best.distance() {
            continue;
        }
        let series = fetch(i)?;
        stats.records_fetched += 1;
        if !filter.admits(series.timestamp) {
            continue;
        }
        stats.visited_records += 1;
        let distance = squared_distance(&query.values, &series.values).sqrt();
        best.offer(Neighbor { distance, timestamp: series.timestamp, locator: snapshot.locators[i], series });
    }
    Ok(())
}

/// Brute-force nearest neighbor; the oracle for every exact search.
/// Returns the index into `data` and the distance.
pub fn linear_scan(query: &DataSeries, data: &[DataSeries], floor: u64) -> Option<(usize, f64)> {
    let eval = |(i, s): (usize, &DataSeries)| {
        if s.timestamp <= floor && floor > 0 {
            return None;
        }
        let mut acc = 0.0;
        for (a, b) in query.values.iter().zip(&s.values) {
            acc += (a - b) * (a - b);
        }
        Some((acc.sqrt(), s.timestamp, i))
    };
    let pick = |a: Option<(f64, u64, usize)>, b: Option<(f64, u64, usize)>| match (a, b) {
        (None, x) | (x, None) => x,
        (Some(x), Some(y)) => Some(if (y.0, y.1, y.2) < (x.0, x.1, x.2) { y } else { x }),
    };
    #[cfg(feature = "parallel")]
    let found = {
        use rayon::prelude::*;
        data.par_iter().enumerate().map(eval).reduce(|| None, pick)
    };
    #[cfg(not(feature = "parallel"))]
    let found = data.iter().enumerate().map(eval).fold(None, pick);
    found.map(|(d, _, i)| (i, d))
}
