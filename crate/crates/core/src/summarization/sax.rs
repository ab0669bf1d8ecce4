use super::{BreakpointTable, SummaryConfig};
use crate::error::{Error, Result};
use crate::series::DataSeries;

/// Per-segment means.
#[derive(Debug, Clone, PartialEq)]
pub struct PaaWord {
    pub means: Vec<f64>,
}

/// One symbol per segment; symbol value is the region's rank, lowest first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SaxWord {
    pub symbols: Vec<u16>,
    pub bits: u8,
}

impl SaxWord {
    pub fn new(symbols: Vec<u16>, bits: u8) -> Result<Self> {
        let limit = 1u32 << bits;
        if let Some(s) = symbols.iter().find(|s| **s as u32 >= limit) {
            return Err(Error::ShapeMismatch(format!("symbol {s} does not fit in {bits} bits")));
        }
        Ok(Self { symbols, bits })
    }

    pub fn segments(&self) -> usize {
        self.symbols.len()
    }
}

pub fn paa(series: &DataSeries, cfg: &SummaryConfig) -> Result<PaaWord> {
    if series.len() != cfg.length {
        return Err(Error::ShapeMismatch(format!("series length {} but config expects {}", series.len(), cfg.length)));
    }
    if !cfg.length.is_multiple_of(cfg.segments) {
        return Err(Error::ShapeMismatch(format!("{} samples cannot split into {} segments", cfg.length, cfg.segments)));
    }
    let seg = cfg.segment_len();
    let means = series.values.chunks_exact(seg).map(|c| c.iter().sum::<f64>() / seg as f64).collect();
    Ok(PaaWord { means })
}

pub fn sax(paa: &PaaWord, table: &BreakpointTable) -> SaxWord {
    SaxWord { symbols: paa.means.iter().map(|m| table.symbol(*m)).collect(), bits: table.bits() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::RandomWalk;

    #[test]
    fn exact_segment_means() {
        let cfg = SummaryConfig::new(2, 2, 4).unwrap();
        let p = paa(&DataSeries::new(vec![1.0, 1.0, 3.0, 3.0]), &cfg).unwrap();
        assert_eq!(p.means, vec![1.0, 3.0]);
        let p = paa(&DataSeries::new(vec![2.5; 4]), &cfg).unwrap();
        assert_eq!(p.means, vec![2.5, 2.5]);
    }

    #[test]
    fn matches_loop_oracle() {
        let cfg = SummaryConfig::default();
        for s in RandomWalk::new(20, 256, 8).unwrap() {
            let p = paa(&s, &cfg).unwrap();
            for j in 0..16 {
                let mut acc = 0.0;
                for i in 0..16 {
                    acc += s.values[j * 16 + i];
                }
                assert!((p.means[j] - acc / 16.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn shape_mismatch() {
        let cfg = SummaryConfig::new(2, 2, 4).unwrap();
        assert!(matches!(paa(&DataSeries::new(vec![1.0; 6]), &cfg), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn symbols_from_breakpoints() {
        let t = BreakpointTable::gaussian(2).unwrap();
        let w = sax(&PaaWord { means: vec![-10.0, 0.5, 0.0, 0.7] }, &t);
        assert_eq!(w.symbols, vec![0, 2, 2, 3]);
    }

    #[test]
    fn word_rejects_oversized_symbols() {
        assert!(SaxWord::new(vec![8], 3).is_err());
        assert!(SaxWord::new(vec![7], 3).is_ok());
    }
}
