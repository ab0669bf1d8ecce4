//! Lower-bound sweeps over in-memory summaries.
//!
//! With the `parallel` feature the entries are split into contiguous chunks
//! processed by rayon workers; the output keeps entry order and every value
//! is computed by the same expression, so both paths are bit-identical.

use crate::summarization::MindistTable;

/// Mindists of `symbols` (row-major, `table.segments()` per entry) on the
/// calling thread.
pub fn mindists_sequential(table: &MindistTable, symbols: &[u16]) -> Vec<f64> {
    symbols.chunks_exact(table.segments()).map(|s| table.eval(s)).collect()
}

/// Mindists of the selected entries only, in selection order.
pub fn mindists_selected_sequential(table: &MindistTable, symbols: &[u16], selected: &[usize]) -> Vec<f64> {
    let w = table.segments();
    selected.iter().map(|&i| table.eval(&symbols[i * w..(i + 1) * w])).collect()
}

#[cfg(feature = "parallel")]
const MIN_CHUNK: usize = 4096;

#[cfg(feature = "parallel")]
pub fn mindists_parallel(table: &MindistTable, symbols: &[u16]) -> Vec<f64> {
    use rayon::prelude::*;
    let w = table.segments();
    if symbols.len() / w < 2 * MIN_CHUNK {
        return mindists_sequential(table, symbols);
    }
    symbols.par_chunks_exact(w).with_min_len(MIN_CHUNK).map(|s| table.eval(s)).collect()
}

#[cfg(feature = "parallel")]
pub fn mindists_selected_parallel(table: &MindistTable, symbols: &[u16], selected: &[usize]) -> Vec<f64> {
    use rayon::prelude::*;
    if selected.len() < 2 * MIN_CHUNK {
        return mindists_selected_sequential(table, symbols, selected);
    }
    let w = table.segments();
    selected.par_iter().with_min_len(MIN_CHUNK).map(|&i| table.eval(&symbols[i * w..(i + 1) * w])).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn mindists_parallel(table: &MindistTable, symbols: &[u16]) -> Vec<f64> {
    mindists_sequential(table, symbols)
}

#[cfg(not(feature = "parallel"))]
pub fn mindists_selected_parallel(table: &MindistTable, symbols: &[u16], selected: &[usize]) -> Vec<f64> {
    mindists_selected_sequential(table, symbols, selected)
}

/// The sweep used by searches.
pub fn mindists(table: &MindistTable, symbols: &[u16], selected: Option<&[usize]>) -> Vec<f64> {
    match selected {
        None => mindists_parallel(table, symbols),
        Some(sel) => mindists_selected_parallel(table, symbols, sel),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::RandomWalk;
    use crate::summarization::{Summarizer, SummaryConfig};

    #[test]
    fn parallel_is_bit_identical() {
        let sm = Summarizer::new(SummaryConfig::default()).unwrap();
        let mut symbols = Vec::new();
        for s in RandomWalk::new(20_000, 256, 1).unwrap() {
            symbols.extend(sm.word(&s).unwrap().symbols);
        }
        let q = RandomWalk::new(1, 256, 2).unwrap().next().unwrap();
        let t = sm.mindist_table(&q).unwrap();
        let a = mindists_sequential(&t, &symbols);
        let b = mindists_parallel(&t, &symbols);
        assert_eq!(a.len(), 20_000);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        let sel: Vec<usize> = (0..20_000).step_by(2).collect();
        let c = mindists_selected_parallel(&t, &symbols, &sel);
        assert!(sel.iter().zip(&c).all(|(i, y)| a[*i].to_bits() == y.to_bits()));
    }
}
