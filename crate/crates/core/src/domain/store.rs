//! Patch file IO and the instrumented corpus store.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use image::{ImageBuffer, Rgb};
use ndarray::Array3;

use crate::domain::{DatasetManifest, Patch, SampleRecord, StainDomain};
use crate::error::{Error, Result};

/// Writes `(H, W, 3)` pixels in `[0,1]` as an 8-bit RGB PNG.
pub fn save_patch_pixels(path: impl AsRef<Path>, pixels: &Array3<f64>) -> Result<()> {
    let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
    let mut img = ImageBuffer::<Rgb<u8>, Vec<u8>>::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = Rgb([
                quantize(pixels[[y, x, 0]]),
                quantize(pixels[[y, x, 1]]),
                quantize(pixels[[y, x, 2]]),
            ]);
            img.put_pixel(x as u32, y as u32, px);
        }
    }
    img.save(path.as_ref())?;
    Ok(())
}

/// Reads an 8-bit RGB PNG into `(H, W, 3)` reals in `[0,1]`.
pub fn load_patch_pixels(path: impl AsRef<Path>) -> Result<Array3<f64>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::Unreadable {
        path: path.to_path_buf(),
        source: e,
    })?;
    let img = image::load_from_memory(&bytes)?.into_rgb8();
    let (w, h) = img.dimensions();
    let mut pixels = Array3::zeros((h as usize, w as usize, 3));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            pixels[[y as usize, x as usize, c]] = f64::from(px[c]) / 255.0;
        }
    }
    Ok(pixels)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// A manifest plus the directory its patch refs are relative to.
///
/// All patch loads go through the store. Pair lookups are counted so that
/// scenario-isolation contracts ("the unpaired path never reads
/// `paired_ref`") can be asserted by tests rather than taken on faith.
#[derive(Debug)]
pub struct CorpusStore {
    root: PathBuf,
    manifest: DatasetManifest,
    by_ref: HashMap<String, usize>,
    pair_reads: AtomicUsize,
}

impl CorpusStore {
    pub fn new(root: impl Into<PathBuf>, manifest: DatasetManifest) -> Self {
        let by_ref = manifest
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.patch_ref.clone(), i))
            .collect();
        CorpusStore {
            root: root.into(),
            manifest,
            by_ref,
            pair_reads: AtomicUsize::new(0),
        }
    }

    /// Loads the manifest at `root/manifest.jsonl`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let manifest = DatasetManifest::load(root.join("manifest.jsonl"))?;
        Ok(CorpusStore::new(root, manifest))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    /// Loads the patch a record points at, stamping stain and provenance
    /// from the record.
    pub fn load_patch(&self, record: &SampleRecord) -> Result<Patch> {
        let pixels = load_patch_pixels(self.root.join(&record.patch_ref))?;
        Patch::new(
            pixels,
            record.stain,
            record.source_id.clone(),
            (record.center_row, record.center_col),
        )
    }

    /// Resolves a record's aligned counterpart in the other stain.
    ///
    /// Increments the pair-read counter; callers that must never touch
    /// pairing are audited through [`CorpusStore::pair_reads`].
    pub fn paired_record(&self, record: &SampleRecord) -> Result<&SampleRecord> {
        self.pair_reads.fetch_add(1, Ordering::Relaxed);
        let paired_ref = record.paired_ref.as_deref().ok_or_else(|| {
            Error::Precondition(format!(
                "record `{}` has no paired_ref (double-stained counterpart required)",
                record.patch_ref
            ))
        })?;
        let idx = self.by_ref.get(paired_ref).ok_or_else(|| {
            Error::Manifest(format!("paired_ref `{paired_ref}` not found in manifest"))
        })?;
        Ok(&self.manifest.records[*idx])
    }

    /// Loads the aligned counterpart patch.
    pub fn load_paired_patch(&self, record: &SampleRecord) -> Result<Patch> {
        let paired = self.paired_record(record)?.clone();
        self.load_patch(&paired)
    }

    /// Number of pair lookups performed through this store.
    pub fn pair_reads(&self) -> usize {
        self.pair_reads.load(Ordering::Relaxed)
    }

    pub fn record_by_ref(&self, patch_ref: &str) -> Option<&SampleRecord> {
        self.by_ref.get(patch_ref).map(|&i| &self.manifest.records[i])
    }
}

/// Unique patch identity used when a record is not at hand (feature maps,
/// prediction files): source id plus slide-frame center.
pub fn patch_identity(source_id: &str, center: (i64, i64), stain: StainDomain) -> String {
    format!("{source_id}@{},{}:{}", center.0, center.1, stain.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_exact_on_the_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.png");
        let mut pixels = Array3::zeros((8, 8, 3));
        for (i, v) in pixels.iter_mut().enumerate() {
            *v = f64::from((i % 256) as u8) / 255.0;
        }
        save_patch_pixels(&path, &pixels).unwrap();
        let loaded = load_patch_pixels(&path).unwrap();
        assert_eq!(loaded, pixels);
    }

    #[test]
    fn missing_file_is_an_unreadable_error() {
        let err = load_patch_pixels("/nonexistent/p.png").unwrap_err();
        assert!(matches!(err, Error::Unreadable { .. }));
    }
}
