use crate::error::{Error, Result};

/// Standard-normal inverse CDF.
///
/// Acklam's rational approximation; relative error below 1.2e-9 on (0, 1).
/// The upper tail mirrors the lower one, so `inverse_normal_cdf(1 - p)` is
/// exactly `-inverse_normal_cdf(p)` whenever `1 - p` is exact.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00, 3.754408661907416e+00];
    const P_LOW: f64 = 0.02425;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let tail = |p: f64| {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail(p)
    } else if p > 1.0 - P_LOW {
        -tail(1.0 - p)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// The 2^c − 1 cut points splitting N(0,1) into equiprobable regions.
#[derive(Debug, Clone, PartialEq)]
pub struct BreakpointTable {
    bits: u8,
    cuts: Vec<f64>,
}

impl BreakpointTable {
    pub fn gaussian(bits: u8) -> Result<Self> {
        if !(1..=16).contains(&bits) {
            return Err(Error::Config(format!("bits per segment must be in 1..=16, got {bits}")));
        }
        let card = 1usize << bits;
        let cuts = (1..card).map(|i| inverse_normal_cdf(i as f64 / card as f64)).collect();
        Ok(Self { bits, cuts })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn cardinality(&self) -> usize {
        self.cuts.len() + 1
    }

    /// Symbol of value `v`: symbol k covers `[cuts[k-1], cuts[k])`.
    #[inline]
    pub fn symbol(&self, v: f64) -> u16 {
        self.cuts.partition_point(|c| *c <= v) as u16
    }

    /// Region `[lo, hi)` of `symbol`, with infinite outer edges.
    #[inline]
    pub fn region(&self, symbol: u16) -> (f64, f64) {
        let k = symbol as usize;
        let lo = if k == 0 { f64::NEG_INFINITY } else { self.cuts[k - 1] };
        let hi = if k >= self.cuts.len() { f64::INFINITY } else { self.cuts[k] };
        (lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    // Frozen from an independent high-precision evaluation of the normal quantile.
    const C3_GOLDEN: [f64; 7] = [
        -1.1503493803760079,
        -0.6744897501960817,
        -0.3186393639643752,
        0.0,
        0.3186393639643752,
        0.6744897501960817,
        1.1503493803760079,
    ];

    #[test]
    fn one_bit_is_the_median() {
        assert_eq!(BreakpointTable::gaussian(1).unwrap().cuts(), &[0.0]);
    }

    #[test]
    fn two_bits_quartiles() {
        let t = BreakpointTable::gaussian(2).unwrap();
        assert_eq!(t.cuts().len(), 3);
        assert!((t.cuts()[0] + 0.6744897501960817).abs() < 1e-8);
        assert_eq!(t.cuts()[1], 0.0);
        assert!((t.cuts()[2] - 0.6744897501960817).abs() < 1e-8);
    }

    #[test]
    fn three_bits_golden() {
        let t = BreakpointTable::gaussian(3).unwrap();
        for (a, b) in t.cuts().iter().zip(C3_GOLDEN) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert_eq!(t.cuts()[3], 0.0);
    }

    #[test]
    fn eight_bits_against_statrs_quantile() {
        let normal = Normal::standard();
        let t = BreakpointTable::gaussian(8).unwrap();
        assert_eq!(t.cuts().len(), 255);
        for (i, c) in t.cuts().iter().enumerate() {
            let expected = normal.inverse_cdf((i + 1) as f64 / 256.0);
            assert!((c - expected).abs() < 1e-8, "cut {i}: {c} vs {expected}");
        }
    }

    #[test]
    fn tables_are_increasing_and_symmetric() {
        for bits in 1..=12u8 {
            let t = BreakpointTable::gaussian(bits).unwrap();
            let cuts = t.cuts();
            assert!(cuts.windows(2).all(|w| w[0] < w[1]), "bits {bits}");
            for i in 0..cuts.len() {
                assert!((cuts[i] + cuts[cuts.len() - 1 - i]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn symbol_convention() {
        let t = BreakpointTable::gaussian(2).unwrap();
        assert_eq!(t.symbol(-10.0), 0);
        assert_eq!(t.symbol(0.5), 2);
        assert_eq!(t.symbol(0.0), 2);
        assert_eq!(t.symbol(10.0), 3);
        assert_eq!(t.region(0).0, f64::NEG_INFINITY);
        assert_eq!(t.region(3).1, f64::INFINITY);
    }

    #[test]
    fn rejects_bad_widths() {
        assert!(BreakpointTable::gaussian(0).is_err());
        assert!(BreakpointTable::gaussian(17).is_err());
    }
}
