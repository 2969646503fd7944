//! Dataset manifest: one JSON record per line.
//!
//! The line format is self-describing; the exact field names
//! (`patch_ref`, `label`, `stain`, `paired_ref`, `split`, `source_id`,
//! `center_row`, `center_col`) are part of the contract and covered by a
//! schema test.

use std::collections::HashMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use crate::domain::{SampleRecord, Split};
use crate::error::{Error, Result};

/// File-backed collection of sample records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn new(records: Vec<SampleRecord>) -> Self {
        DatasetManifest { records }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::Unreadable {
            path: path.to_path_buf(),
            source: e,
        })?;
        let reader = std::io::BufReader::new(file);
        let mut records = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SampleRecord = serde_json::from_str(&line).map_err(|e| {
                Error::Manifest(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            records.push(record);
        }
        Ok(DatasetManifest { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        let mut w = BufWriter::new(file);
        for record in &self.records {
            serde_json::to_writer(&mut w, record)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Checks that `source_id -> split` is single-valued over the manifest.
    /// Returns the offending source ids, empty when the partition is clean.
    pub fn split_leaks(&self) -> Vec<String> {
        let mut seen: HashMap<&str, Split> = HashMap::new();
        let mut leaks = Vec::new();
        for r in &self.records {
            match seen.get(r.source_id.as_str()) {
                Some(&s) if s != r.split => leaks.push(r.source_id.clone()),
                Some(_) => {}
                None => {
                    seen.insert(&r.source_id, r.split);
                }
            }
        }
        leaks.sort();
        leaks.dedup();
        leaks
    }

    /// Index from patch_ref to record position.
    pub fn ref_index(&self) -> HashMap<&str, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.patch_ref.as_str(), i))
            .collect()
    }
}
