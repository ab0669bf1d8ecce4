use super::{BreakpointTable, PaaWord, SaxWord};
use crate::error::{Error, Result};

#[inline]
fn gap(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if v < lo {
        lo - v
    } else if v > hi {
        v - hi
    } else {
        0.0
    }
}

/// Lower bound on the Euclidean distance between a query (given by its PAA)
/// and any series whose SAX word is `word`.
pub fn mindist(query: &PaaWord, word: &SaxWord, table: &BreakpointTable, n: usize) -> Result<f64> {
    let w = query.means.len();
    if w != word.segments() || word.bits != table.bits() || w == 0 {
        return Err(Error::ShapeMismatch(format!(
            "query has {w} segments, word has {} segments of {} bits, table has {} bits",
            word.segments(),
            word.bits,
            table.bits()
        )));
    }
    let sum: f64 = query
        .means
        .iter()
        .zip(&word.symbols)
        .map(|(v, s)| {
            let g = gap(*v, table.region(*s));
            g * g
        })
        .sum();
    Ok((n as f64 / w as f64).sqrt() * sum.sqrt())
}

/// Per-query table of squared gaps so that the sweep over many words is a
/// table lookup per segment. Results are bit-identical to [`mindist`].
#[derive(Debug, Clone)]
pub struct MindistTable {
    segments: usize,
    card: usize,
    scale: f64,
    gaps: Vec<f64>,
}

impl MindistTable {
    pub fn new(query: &PaaWord, table: &BreakpointTable, n: usize) -> Result<Self> {
        let w = query.means.len();
        if w == 0 {
            return Err(Error::ShapeMismatch("query has no segments".into()));
        }
        let card = table.cardinality();
        let mut gaps = Vec::with_capacity(w * card);
        for v in &query.means {
            for s in 0..card {
                let g = gap(*v, table.region(s as u16));
                gaps.push(g * g);
            }
        }
        Ok(Self { segments: w, card, scale: (n as f64 / w as f64).sqrt(), gaps })
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    #[inline]
    pub fn eval(&self, symbols: &[u16]) -> f64 {
        debug_assert_eq!(symbols.len(), self.segments);
        let mut sum = 0.0;
        for (j, s) in symbols.iter().enumerate() {
            sum += self.gaps[j * self.card + *s as usize];
        }
        self.scale * sum.sqrt()
    }
}
