//! Index entries and their fixed-width on-disk encoding.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::series::DataSeries;
use crate::summarization::InvSaxKey;

/// Where an entry's series lives.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Byte offset of the record in the raw file.
    Offset(u64),
    /// The series itself, stored as f32 samples.
    Inline(Vec<f32>),
}

impl Payload {
    pub fn inline(series: &DataSeries) -> Self {
        Payload::Inline(series.values.iter().map(|v| *v as f32).collect())
    }

    pub fn offset(&self) -> Option<u64> {
        match self {
            Payload::Offset(o) => Some(*o),
            Payload::Inline(_) => None,
        }
    }

    pub fn series(&self, timestamp: u64) -> Option<DataSeries> {
        match self {
            Payload::Offset(_) => None,
            Payload::Inline(v) => Some(DataSeries::with_timestamp(v.iter().map(|x| *x as f64).collect(), timestamp)),
        }
    }
}

impl Eq for Payload {}

impl Ord for Payload {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Payload::Offset(a), Payload::Offset(b)) => a.cmp(b),
            (Payload::Inline(a), Payload::Inline(b)) => {
                for (x, y) in a.iter().zip(b) {
                    match x.total_cmp(y) {
                        Ordering::Equal => {}
                        o => return o,
                    }
                }
                a.len().cmp(&b.len())
            }
            (Payload::Offset(_), Payload::Inline(_)) => Ordering::Less,
            (Payload::Inline(_), Payload::Offset(_)) => Ordering::Greater,
        }
    }
}

impl PartialOrd for Payload {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One index entry. Ordered by key, then timestamp, then payload.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SortRecord {
    pub key: InvSaxKey,
    pub timestamp: u64,
    pub payload: Payload,
}

/// Fixed-width encoding of [`SortRecord`]:
/// `key (big-endian, key_bytes) | timestamp u64 | offset u64 or n f32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordLayout {
    pub key_bits: usize,
    /// Series length for inline payloads; `None` for offsets.
    pub inline_len: Option<usize>,
}

impl RecordLayout {
    pub fn offsets(key_bits: usize) -> Self {
        Self { key_bits, inline_len: None }
    }

    pub fn inline(key_bits: usize, length: usize) -> Self {
        Self { key_bits, inline_len: Some(length) }
    }

    pub fn materialized(&self) -> bool {
        self.inline_len.is_some()
    }

    pub fn key_bytes(&self) -> usize {
        self.key_bits.div_ceil(8)
    }

    pub fn width(&self) -> usize {
        self.key_bytes() + 8 + self.inline_len.map_or(8, |n| n * 4)
    }

    pub fn encode(&self, rec: &SortRecord, out: &mut [u8]) -> Result<()> {
        let kb = self.key_bytes();
        if rec.key.width() != self.key_bits {
            return Err(Error::WidthMismatch { expected: self.key_bits, actual: rec.key.width() });
        }
        out[..kb].copy_from_slice(rec.key.as_bytes());
        out[kb..kb + 8].copy_from_slice(&rec.timestamp.to_le_bytes());
        let body = &mut out[kb + 8..self.width()];
        match (&rec.payload, self.inline_len) {
            (Payload::Offset(o), None) => body.copy_from_slice(&o.to_le_bytes()),
            (Payload::Inline(v), Some(n)) if v.len() == n => {
                for (chunk, x) in body.chunks_exact_mut(4).zip(v) {
                    chunk.copy_from_slice(&x.to_le_bytes());
                }
            }
            _ => return Err(Error::ShapeMismatch("payload does not match record layout".into())),
        }
        Ok(())
    }

    pub fn decode(&self, bytes: &[u8]) -> Result<SortRecord> {
        let kb = self.key_bytes();
        let key = InvSaxKey::from_bytes(&bytes[..kb], self.key_bits)?;
        let timestamp = u64::from_le_bytes(bytes[kb..kb + 8].try_into().unwrap());
        let body = &bytes[kb + 8..self.width()];
        let payload = match self.inline_len {
            None => Payload::Offset(u64::from_le_bytes(body.try_into().unwrap())),
            Some(_) => Payload::Inline(body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
        };
        Ok(SortRecord { key, timestamp, payload })
    }

    /// Key only, without decoding the payload.
    pub fn decode_key(&self, bytes: &[u8]) -> Result<InvSaxKey> {
        InvSaxKey::from_bytes(&bytes[..self.key_bytes()], self.key_bits)
    }

    pub fn decode_timestamp(&self, bytes: &[u8]) -> u64 {
        let kb = self.key_bytes();
        u64::from_le_bytes(bytes[kb..kb + 8].try_into().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_roundtrip_both_modes() {
        let key = InvSaxKey::from_u128(0b1011_0000_1111, 12);
        let lay = RecordLayout::offsets(12);
        assert_eq!(lay.width(), 2 + 8 + 8);
        let rec = SortRecord { key, timestamp: 77, payload: Payload::Offset(1234) };
        let mut buf = vec![0u8; lay.width()];
        lay.encode(&rec, &mut buf).unwrap();
        assert_eq!(&buf[..2], &[0b0000_1011, 0b0000_1111]);
        assert_eq!(lay.decode(&buf).unwrap(), rec);

        let lay = RecordLayout::inline(12, 3);
        let rec = SortRecord { key, timestamp: 1, payload: Payload::Inline(vec![0.5, -1.0, 2.0]) };
        let mut buf = vec![0u8; lay.width()];
        lay.encode(&rec, &mut buf).unwrap();
        assert_eq!(lay.decode(&buf).unwrap(), rec);
        assert_eq!(lay.decode_timestamp(&buf), 1);

        let wrong = SortRecord { key, timestamp: 1, payload: Payload::Offset(0) };
        assert!(lay.encode(&wrong, &mut buf).is_err());
    }

    #[test]
    fn order_is_key_then_timestamp_then_payload() {
        let k1 = InvSaxKey::from_u128(1, 8);
        let k2 = InvSaxKey::from_u128(2, 8);
        let r = |k, t, o| SortRecord { key: k, timestamp: t, payload: Payload::Offset(o) };
        let mut v = vec![r(k2, 1, 0), r(k1, 5, 9), r(k1, 5, 3), r(k1, 2, 100)];
        v.sort();
        assert_eq!(v, vec![r(k1, 2, 100), r(k1, 5, 3), r(k1, 5, 9), r(k2, 1, 0)]);
    }
}
