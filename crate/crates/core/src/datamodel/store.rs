//! Write-once summary store with a self-describing binary file format.
//!
//! Numeric fields round-trip bit-for-bit: floats are stored as raw IEEE-754
//! bits, never re-parsed from text.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{DataError, DayRange, RangeSummary};

const MAGIC: &[u8; 8] = b"XDSTORE\n";
const SCHEMA_VERSION: u32 = 1;

/// Key for metric summaries: (experiment, variant, metric, range).
pub type SummaryKey = (String, String, String, DayRange);
/// Key for metric-free user-count records: (experiment, variant, range).
pub type CountKey = (String, String, DayRange);

/// Keyed map of range summaries plus per-range user-count records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SummaryStore {
    summaries: BTreeMap<SummaryKey, RangeSummary>,
    user_counts: BTreeMap<CountKey, u64>,
}

impl SummaryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len_summaries(&self) -> usize {
        self.summaries.len()
    }

    pub fn len_user_counts(&self) -> usize {
        self.user_counts.len()
    }

    /// Inserts a summary; keys are write-once.
    pub fn insert_summary(&mut self, summary: RangeSummary) -> Result<(), DataError> {
        let key = (
            summary.experiment_id.clone(),
            summary.variant.clone(),
            summary.metric_id.clone(),
            summary.range,
        );
        if self.summaries.contains_key(&key) {
            return Err(DataError::DuplicateKey(format!(
                "{}/{}/{}/{}",
                key.0, key.1, key.2, key.3
            )));
        }
        self.summaries.insert(key, summary);
        Ok(())
    }

    /// Inserts a metric-free user count; keys are write-once.
    pub fn insert_user_count(
        &mut self,
        experiment_id: &str,
        variant: &str,
        range: DayRange,
        n: u64,
    ) -> Result<(), DataError> {
        let key = (experiment_id.to_string(), variant.to_string(), range);
        if self.user_counts.contains_key(&key) {
            return Err(DataError::DuplicateKey(format!(
                "{}/{}/{}",
                key.0, key.1, key.2
            )));
        }
        self.user_counts.insert(key, n);
        Ok(())
    }

    pub fn summary(
        &self,
        experiment_id: &str,
        variant: &str,
        metric_id: &str,
        range: DayRange,
    ) -> Option<&RangeSummary> {
        self.summaries.get(&(
            experiment_id.to_string(),
            variant.to_string(),
            metric_id.to_string(),
            range,
        ))
    }

    pub fn user_count(&self, experiment_id: &str, variant: &str, range: DayRange) -> Option<u64> {
        self.user_counts
            .get(&(experiment_id.to_string(), variant.to_string(), range))
            .copied()
    }

    pub fn summaries(&self) -> impl Iterator<Item = &RangeSummary> {
        self.summaries.values()
    }

    pub fn persist(&self, path: &Path) -> Result<(), DataError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&SCHEMA_VERSION.to_le_bytes())?;

        w.write_all(&(self.summaries.len() as u64).to_le_bytes())?;
        for s in self.summaries.values() {
            write_str(&mut w, &s.experiment_id)?;
            write_str(&mut w, &s.variant)?;
            write_str(&mut w, &s.metric_id)?;
            w.write_all(&s.range.start.to_le_bytes())?;
            w.write_all(&s.range.end.to_le_bytes())?;
            w.write_all(&s.n.to_le_bytes())?;
            w.write_all(&s.sum.to_bits().to_le_bytes())?;
            w.write_all(&s.sum_sq.to_bits().to_le_bytes())?;
        }

        w.write_all(&(self.user_counts.len() as u64).to_le_bytes())?;
        for ((experiment, variant, range), n) in &self.user_counts {
            write_str(&mut w, experiment)?;
            write_str(&mut w, variant)?;
            w.write_all(&range.start.to_le_bytes())?;
            w.write_all(&range.end.to_le_bytes())?;
            w.write_all(&n.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(DataError::CorruptStore("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != SCHEMA_VERSION {
            return Err(DataError::SchemaVersion {
                found: version,
                expected: SCHEMA_VERSION,
            });
        }

        let mut store = SummaryStore::new();
        let n_summaries = read_u64(&mut r)?;
        for _ in 0..n_summaries {
            let experiment_id = read_str(&mut r)?;
            let variant = read_str(&mut r)?;
            let metric_id = read_str(&mut r)?;
            let start = read_u32(&mut r)?;
            let end = read_u32(&mut r)?;
            let n = read_u64(&mut r)?;
            let sum = f64::from_bits(read_u64(&mut r)?);
            let sum_sq = f64::from_bits(read_u64(&mut r)?);
            store.insert_summary(RangeSummary {
                experiment_id,
                variant,
                metric_id,
                range: DayRange::new(start, end)?,
                n,
                sum,
                sum_sq,
            })?;
        }
        let n_counts = read_u64(&mut r)?;
        for _ in 0..n_counts {
            let experiment = read_str(&mut r)?;
            let variant = read_str(&mut r)?;
            let start = read_u32(&mut r)?;
            let end = read_u32(&mut r)?;
            let n = read_u64(&mut r)?;
            store.insert_user_count(&experiment, &variant, DayRange::new(start, end)?, n)?;
        }
        Ok(store)
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, DataError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, DataError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_str<R: Read>(r: &mut R) -> Result<String, DataError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 24 {
        return Err(DataError::CorruptStore(format!("string length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| DataError::CorruptStore(e.to_string()))
}
