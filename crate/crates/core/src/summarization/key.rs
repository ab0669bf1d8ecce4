use std::cmp::Ordering;
use std::fmt;

use super::{SaxWord, SummaryConfig};
use crate::error::{Error, Result};

pub const MAX_KEY_BITS: usize = 256;
pub const MAX_KEY_BYTES: usize = MAX_KEY_BITS / 8;

/// Bit-interleaved SAX word: the most significant bit of every segment
/// first, then every second bit, and so on.
///
/// The `bits`-wide integer is stored right-aligned in `bits.div_ceil(8)`
/// big-endian bytes, so bytewise order is numeric order.
#[derive(Clone, Copy)]
pub struct InvSaxKey {
    bytes: [u8; MAX_KEY_BYTES],
    bits: u16,
}

impl InvSaxKey {
    pub fn zero(bits: usize) -> Self {
        assert!(bits <= MAX_KEY_BITS && bits > 0);
        Self { bytes: [0; MAX_KEY_BYTES], bits: bits as u16 }
    }

    pub fn from_bytes(bytes: &[u8], bits: usize) -> Result<Self> {
        if bits == 0 || bits > MAX_KEY_BITS || bytes.len() != bits.div_ceil(8) {
            return Err(Error::WidthMismatch { expected: bits, actual: bytes.len() * 8 });
        }
        let mut key = Self::zero(bits);
        key.bytes[..bytes.len()].copy_from_slice(bytes);
        let pad = bytes.len() * 8 - bits;
        if pad > 0 && bytes[0] >> (8 - pad) != 0 {
            return Err(Error::WidthMismatch { expected: bits, actual: bytes.len() * 8 });
        }
        Ok(key)
    }

    /// Key from the low bits of a `u128`; handy for small widths.
    pub fn from_u128(value: u128, bits: usize) -> Self {
        assert!(bits <= 128);
        let mut key = Self::zero(bits);
        for p in 0..bits {
            key.set_bit(p, (value >> (bits - 1 - p)) & 1 == 1);
        }
        key
    }

    pub fn to_u128(&self) -> Option<u128> {
        if self.bits > 128 {
            return None;
        }
        Some((0..self.width()).fold(0u128, |acc, p| (acc << 1) | self.bit(p) as u128))
    }

    pub fn width(&self) -> usize {
        self.bits as usize
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes[..self.width().div_ceil(8)]
    }

    #[inline]
    fn pad(&self) -> usize {
        self.width().div_ceil(8) * 8 - self.width()
    }

    /// Bit `p`, counted from the most significant end of the key.
    #[inline]
    pub fn bit(&self, p: usize) -> bool {
        let abs = p + self.pad();
        (self.bytes[abs / 8] >> (7 - abs % 8)) & 1 == 1
    }

    #[inline]
    pub fn set_bit(&mut self, p: usize, on: bool) {
        let abs = p + self.pad();
        let mask = 1u8 << (7 - abs % 8);
        if on {
            self.bytes[abs / 8] |= mask;
        } else {
            self.bytes[abs / 8] &= !mask;
        }
    }

    /// Number of leading bits shared with `other`.
    pub fn common_prefix_len(&self, other: &Self) -> usize {
        let pad = self.pad();
        for (i, (a, b)) in self.as_bytes().iter().zip(other.as_bytes()).enumerate() {
            let x = a ^ b;
            if x != 0 {
                return (i * 8 + x.leading_zeros() as usize).saturating_sub(pad).min(self.width());
            }
        }
        self.width()
    }

    /// This key with every bit at or after `len` cleared.
    pub fn truncated(&self, len: usize) -> Self {
        let mut out = *self;
        for p in len..self.width() {
            out.set_bit(p, false);
        }
        out
    }

    pub fn starts_with(&self, prefix: &Self, len: usize) -> bool {
        self.common_prefix_len(prefix) >= len
    }
}

impl PartialEq for InvSaxKey {
    fn eq(&self, other: &Self) -> bool {
        self.bits == other.bits && self.as_bytes() == other.as_bytes()
    }
}

impl Eq for InvSaxKey {}

impl std::hash::Hash for InvSaxKey {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.bits.hash(state);
        self.as_bytes().hash(state);
    }
}

impl PartialOrd for InvSaxKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for InvSaxKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bits.cmp(&other.bits).then_with(|| self.as_bytes().cmp(other.as_bytes()))
    }
}

impl fmt::Debug for InvSaxKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "InvSaxKey(")?;
        for p in 0..self.width() {
            write!(f, "{}", self.bit(p) as u8)?;
        }
        write!(f, ")")
    }
}

/// Interleaves the bits of `word`: output position `i*w + j` holds bit `i`
/// (most significant first) of segment `j`.
pub fn invert_sum(word: &SaxWord) -> InvSaxKey {
    let w = word.segments();
    let c = word.bits as usize;
    let mut key = InvSaxKey::zero(w * c);
    for i in 0..c {
        let shift = c - 1 - i;
        for (j, sym) in word.symbols.iter().enumerate() {
            if (sym >> shift) & 1 == 1 {
                key.set_bit(i * w + j, true);
            }
        }
    }
    key
}

pub fn restore_sum(key: &InvSaxKey, cfg: &SummaryConfig) -> Result<SaxWord> {
    let w = cfg.segments;
    let c = cfg.bits as usize;
    if key.width() != w * c {
        return Err(Error::WidthMismatch { expected: w * c, actual: key.width() });
    }
    let mut symbols = vec![0u16; w];
    for i in 0..c {
        for (j, sym) in symbols.iter_mut().enumerate() {
            *sym = (*sym << 1) | key.bit(i * w + j) as u16;
        }
    }
    Ok(SaxWord { symbols, bits: cfg.bits })
}

/// Restores just the symbols into `out` (length w); used on the hot load path.
pub(crate) fn restore_symbols_into(key: &InvSaxKey, w: usize, c: usize, out: &mut [u16]) {
    out.iter_mut().for_each(|s| *s = 0);
    for i in 0..c {
        for (j, sym) in out.iter_mut().enumerate() {
            *sym = (*sym << 1) | key.bit(i * w + j) as u16;
        }
    }
}
