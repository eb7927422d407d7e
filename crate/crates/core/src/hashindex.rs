//! Buckets keyed by the leading bits of each hash code.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::dataset::PatchId;
use crate::fmt::hex_bits;
use crate::klsh::HashCode;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Entry {
    pub patch_id: PatchId,
    pub code: HashCode,
}

/// Entries sharing a code prefix, sorted by `(code, patch_id)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bucket {
    pub key: u64,
    pub entries: Vec<Entry>,
}

impl Bucket {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.entries
            .windows(2)
            .all(|w| (w[0].code, w[0].patch_id) < (w[1].code, w[1].patch_id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashTable {
    prefix_len: u32,
    buckets: BTreeMap<u64, Bucket>,
    total: usize,
}

/// Default prefix length: half the code length, at least 1.
pub fn default_prefix_len(code_len: u32) -> u32 {
    (code_len / 2).max(1)
}

/// Groups `(patch_id, code)` pairs by the leading `prefix_len` bits.
pub fn build_table(ids: &[PatchId], codes: &[HashCode], prefix_len: u32) -> Result<HashTable> {
    if ids.len() != codes.len() {
        return Err(Error::Contract(format!("{} ids for {} codes", ids.len(), codes.len())));
    }
    if prefix_len == 0 {
        return Err(Error::Config("prefix length must be at least 1".into()));
    }
    if let Some(first) = codes.first() {
        if let Some(bad) = codes.iter().find(|c| c.len() != first.len()) {
            return Err(Error::Contract(format!(
                "mixed code lengths {} and {}",
                first.len(),
                bad.len()
            )));
        }
        if prefix_len > first.len() {
            return Err(Error::Config(format!(
                "prefix length {prefix_len} exceeds code length {}",
                first.len()
            )));
        }
    } else if prefix_len > crate::klsh::MAX_BITS {
        return Err(Error::Config(format!("prefix length {prefix_len} out of range")));
    }

    let mut buckets: BTreeMap<u64, Bucket> = BTreeMap::new();
    for (&patch_id, &code) in ids.iter().zip(codes) {
        let key = code.prefix(prefix_len);
        buckets
            .entry(key)
            .or_insert_with(|| Bucket {
                key,
                entries: Vec::new(),
            })
            .entries
            .push(Entry { patch_id, code });
    }
    for b in buckets.values_mut() {
        b.entries.sort_by_key(|e| (e.code, e.patch_id));
        if let Some(w) = b.entries.windows(2).find(|w| w[0].patch_id == w[1].patch_id) {
            return Err(Error::Contract(format!("patch id {} appears twice", w[0].patch_id)));
        }
    }
    Ok(HashTable {
        prefix_len,
        buckets,
        total: ids.len(),
    })
}

impl HashTable {
    pub fn prefix_len(&self) -> u32 {
        self.prefix_len
    }

    pub fn total_entries(&self) -> usize {
        self.total
    }

    pub fn num_buckets(&self) -> usize {
        self.buckets.len()
    }

    pub fn bucket(&self, key: u64) -> Option<&Bucket> {
        self.buckets.get(&key)
    }

    pub fn key_hex(&self, key: u64) -> String {
        hex_bits(key, self.prefix_len)
    }

    /// Buckets in ascending key order.
    pub fn read_buckets(&self) -> impl ExactSizeIterator<Item = &Bucket> + '_ {
        self.buckets.values()
    }

    /// Audit dump: `bucket_key_hex,patch_id,code_hex`.
    pub fn write_dump_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        writeln!(buf, "bucket_key_hex,patch_id,code_hex").expect("write to Vec");
        for b in self.read_buckets() {
            let key = self.key_hex(b.key);
            for e in &b.entries {
                writeln!(buf, "{key},{},{}", e.patch_id, e.code.to_hex()).expect("write to Vec");
            }
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyReport {
    pub buckets: usize,
    pub min: usize,
    pub max: usize,
    pub median: f64,
    pub mean: f64,
    /// `(bucket size, number of buckets with that size)`, ascending by size.
    pub histogram: Vec<(usize, usize)>,
}

pub fn bucket_stats(table: &HashTable) -> OccupancyReport {
    let mut sizes: Vec<usize> = table.read_buckets().map(Bucket::len).collect();
    sizes.sort_unstable();
    let n = sizes.len();
    let mut histogram: Vec<(usize, usize)> = Vec::new();
    for &s in &sizes {
        match histogram.last_mut() {
            Some((size, count)) if *size == s => *count += 1,
            _ => histogram.push((s, 1)),
        }
    }
    let median = match n {
        0 => 0.0,
        _ if n % 2 == 1 => sizes[n / 2] as f64,
        _ => (sizes[n / 2 - 1] + sizes[n / 2]) as f64 / 2.0,
    };
    OccupancyReport {
        buckets: n,
        min: sizes.first().copied().unwrap_or(0),
        max: sizes.last().copied().unwrap_or(0),
        median,
        mean: if n == 0 { 0.0 } else { table.total_entries() as f64 / n as f64 },
        histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn codes(values: &[u64], len: u32) -> Vec<HashCode> {
        values.iter().map(|&v| HashCode::new(v, len).unwrap()).collect()
    }

    #[test]
    fn identical_codes_share_a_bucket() {
        let t = build_table(&[0, 1, 2, 3, 4], &codes(&[0xabcd; 5], 16), 8).unwrap();
        assert_eq!(t.num_buckets(), 1);
        assert_eq!(t.read_buckets().next().unwrap().len(), 5);
        let s = bucket_stats(&t);
        assert_eq!((s.buckets, s.min, s.max), (1, 5, 5));
    }

    #[test]
    fn empty_table() {
        let t = build_table(&[], &[], 8).unwrap();
        assert_eq!(t.num_buckets(), 0);
        assert_eq!(t.read_buckets().count(), 0);
        let s = bucket_stats(&t);
        assert_eq!(s.buckets, 0);
        assert!(s.histogram.is_empty());
    }

    #[test]
    fn two_bit_prefix_grouping() {
        let t = build_table(&[0, 1, 2, 3], &codes(&[0b0000, 0b0101, 0b0110, 0b1100], 4), 2).unwrap();
        let keys: Vec<u64> = t.read_buckets().map(|b| b.key).collect();
        assert_eq!(keys, vec![0b00, 0b01, 0b11]);
        let b01: Vec<u64> = t.bucket(0b01).unwrap().entries.iter().map(|e| e.code.value()).collect();
        assert_eq!(b01, vec![0b0101, 0b0110]);
        assert_eq!(t.bucket(0b11).unwrap().entries[0].code.value(), 0b1100);
        assert_eq!(t.key_hex(0b11), "3");
    }

    #[test]
    fn single_bucket_sequence() {
        let t = build_table(&[7], &codes(&[1], 4), 4).unwrap();
        let all: Vec<&Bucket> = t.read_buckets().collect();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].entries[0].patch_id, 7);
    }

    #[test]
    fn stats_of_sizes_one_two_three() {
        let t = build_table(&[0, 1, 2, 3, 4, 5], &codes(&[0, 4, 4, 8, 8, 8], 4), 2).unwrap();
        let s = bucket_stats(&t);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.median, 2.0);
        assert_eq!(s.histogram, vec![(1, 1), (2, 1), (3, 1)]);
    }

    #[test]
    fn prefix_range_is_checked() {
        let c = codes(&[1, 2], 4);
        assert!(matches!(build_table(&[0, 1], &c, 0), Err(Error::Config(_))));
        assert!(matches!(build_table(&[0, 1], &c, 5), Err(Error::Config(_))));
        assert!(build_table(&[0, 1], &c, 4).is_ok());
    }

    #[test]
    fn dump_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        let t = build_table(&[3, 1], &codes(&[0x12, 0x12], 8), 4).unwrap();
        t.write_dump_csv(&path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "bucket_key_hex,patch_id,code_hex\n1,1,12\n1,3,12\n"
        );
    }

    proptest! {
        #[test]
        fn partition_and_order(
            values in prop::collection::vec(0u64..256, 0..200),
            prefix in 1u32..=8,
        ) {
            let ids: Vec<u64> = (0..values.len() as u64).rev().collect();
            let c = codes(&values, 8);
            let t = build_table(&ids, &c, prefix).unwrap();
            let mut seen: Vec<u64> = Vec::new();
            for b in t.read_buckets() {
                prop_assert!(!b.is_empty());
                prop_assert!(b.is_sorted());
                for e in &b.entries {
                    prop_assert_eq!(e.code.prefix(prefix), b.key);
                    seen.push(e.patch_id);
                }
            }
            prop_assert_eq!(seen.len(), values.len());
            seen.sort_unstable();
            let mut expected = ids.clone();
            expected.sort_unstable();
            prop_assert_eq!(seen, expected);
            prop_assert_eq!(build_table(&ids, &c, prefix).unwrap(), t);
        }
    }
}
