//! Inference over trained generators: stain translation and deep-feature
//! extraction.

use std::path::Path;

use ndarray::Array3;

use crate::domain::{patch_identity, FeatureMap, Patch, StainDomain};
use crate::error::{Error, Result};
use crate::nets::{
    chw_to_hwc, patch_to_input, peek_meta, Checkpoint, CheckpointMeta, Generator, GeneratorSpec,
    Scalar,
};
use crate::par;

/// A generator loaded from a checkpoint, with its direction metadata.
/// Networks may be stored in either precision; inference dispatches on the
/// checkpoint's dtype.
pub enum GeneratorHandle {
    F32(Box<Generator<f32>>, CheckpointMeta),
    F64(Box<Generator<f64>>, CheckpointMeta),
}

impl GeneratorHandle {
    pub fn meta(&self) -> &CheckpointMeta {
        match self {
            GeneratorHandle::F32(_, m) | GeneratorHandle::F64(_, m) => m,
        }
    }

    pub fn direction(&self) -> Result<(StainDomain, StainDomain)> {
        let meta = self.meta();
        match (meta.from_stain, meta.to_stain) {
            (Some(f), Some(t)) => Ok((f, t)),
            _ => Err(Error::BadCheckpoint {
                path: Default::default(),
                reason: "generator checkpoint lacks direction metadata".into(),
            }),
        }
    }

    fn translate_one(&self, patch: &Patch, to: StainDomain) -> Result<Patch> {
        match self {
            GeneratorHandle::F32(g, _) => g.forward_patch(patch, to).map(|(p, _)| p),
            GeneratorHandle::F64(g, _) => g.forward_patch(patch, to).map(|(p, _)| p),
        }
    }

    /// Encoder-only pass: the deep feature tap in `(H, W, C)` order. The
    /// values are identical to the tap of a full forward pass (single code
    /// path through the encoder).
    fn features_one(&self, patch: &Patch) -> Array3<f64> {
        fn run<T: Scalar>(g: &Generator<T>, patch: &Patch) -> Array3<f64> {
            let x = patch_to_input::<T>(patch);
            chw_to_hwc(&g.encoder.forward_infer(&x))
        }
        match self {
            GeneratorHandle::F32(g, _) => run(g, patch),
            GeneratorHandle::F64(g, _) => run(g, patch),
        }
    }
}

/// Loads a generator checkpoint, verifying kind, spec fingerprint, and
/// dtype.
pub fn load_generator(path: impl AsRef<Path>) -> Result<GeneratorHandle> {
    let path = path.as_ref();
    let meta = peek_meta(path)?;
    if meta.kind != "generator" {
        return Err(Error::BadCheckpoint {
            path: path.to_path_buf(),
            reason: format!("expected a generator checkpoint, found kind `{}`", meta.kind),
        });
    }
    let spec: GeneratorSpec = serde_json::from_value(meta.spec.clone())?;
    match meta.dtype.as_str() {
        "f32" => {
            let ckpt: Checkpoint<f32> = Checkpoint::load(path)?;
            ckpt.verify_fingerprint(&spec.fingerprint())?;
            let mut gen = Generator::build(&spec, 0);
            ckpt.apply_to(&mut gen)?;
            Ok(GeneratorHandle::F32(Box::new(gen), ckpt.meta))
        }
        "f64" => {
            let ckpt: Checkpoint<f64> = Checkpoint::load(path)?;
            ckpt.verify_fingerprint(&spec.fingerprint())?;
            let mut gen = Generator::build(&spec, 0);
            ckpt.apply_to(&mut gen)?;
            Ok(GeneratorHandle::F64(Box::new(gen), ckpt.meta))
        }
        other => Err(Error::BadCheckpoint {
            path: path.to_path_buf(),
            reason: format!("unknown dtype `{other}`"),
        }),
    }
}

/// Translates patches to the checkpoint's target stain. Deterministic,
/// order-preserving; every input must carry the source stain.
pub fn translate(handle: &GeneratorHandle, patches: &[Patch]) -> Result<Vec<Patch>> {
    let (from, to) = handle.direction()?;
    for p in patches {
        if p.stain != from {
            return Err(Error::StainMismatch {
                expected: from.to_string(),
                got: p.stain.to_string(),
            });
        }
    }
    let results: Vec<Result<Patch>> =
        par::map(patches, |p| handle.translate_one(p, to));
    results.into_iter().collect()
}

/// Extracts the deep GAN feature layer for real H&E patches through an
/// HE->PHH3 generator. One 25x25x256 map per patch, in input order.
pub fn extract_features(handle: &GeneratorHandle, patches: &[Patch]) -> Result<Vec<FeatureMap>> {
    let (from, to) = handle.direction()?;
    if (from, to) != (StainDomain::He, StainDomain::Phh3) {
        return Err(Error::Precondition(format!(
            "feature extraction requires an HE->PHH3 generator, got {from}->{to}"
        )));
    }
    for p in patches {
        if p.stain != StainDomain::He {
            return Err(Error::StainMismatch {
                expected: StainDomain::He.to_string(),
                got: p.stain.to_string(),
            });
        }
    }
    let results: Vec<Result<FeatureMap>> = par::map(patches, |p| {
        let tap = handle.features_one(p);
        FeatureMap::new(tap, patch_identity(&p.source_id, p.center, p.stain))
    });
    results.into_iter().collect()
}

/// Writes feature maps to a single self-describing binary file
/// (JSON header with ids and shape, then little-endian f64 data).
pub fn save_feature_maps(path: impl AsRef<Path>, maps: &[FeatureMap]) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let header = serde_json::json!({
        "count": maps.len(),
        "shape": [crate::domain::FEATURE_SIDE, crate::domain::FEATURE_SIDE, crate::domain::FEATURE_CHANNELS],
        "ids": maps.iter().map(|m| m.origin_patch.clone()).collect::<Vec<_>>(),
    });
    let header_bytes = serde_json::to_vec(&header)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(b"SBFEAT01")?;
    f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    f.write_all(&header_bytes)?;
    for m in maps {
        let mut buf = Vec::new();
        f64::write_le_bytes(m.values.as_slice().expect("standard layout"), &mut buf);
        f.write_all(&buf)?;
    }
    f.flush()?;
    Ok(())
}

/// Reads feature maps written by [`save_feature_maps`].
pub fn load_feature_maps(path: impl AsRef<Path>) -> Result<Vec<FeatureMap>> {
    use std::io::Read;
    let path = path.as_ref();
    let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| {
        Error::Unreadable {
            path: path.to_path_buf(),
            source: e,
        }
    })?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != b"SBFEAT01" {
        return Err(Error::Serde("bad feature file magic".into()));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)?;
    let mut header_bytes = vec![0u8; u64::from_le_bytes(len_bytes) as usize];
    f.read_exact(&mut header_bytes)?;
    let header: serde_json::Value = serde_json::from_slice(&header_bytes)?;
    let ids: Vec<String> = serde_json::from_value(header["ids"].clone())?;
    let side = crate::domain::FEATURE_SIDE;
    let ch = crate::domain::FEATURE_CHANNELS;
    let mut maps = Vec::with_capacity(ids.len());
    for id in ids {
        let mut bytes = vec![0u8; side * side * ch * 8];
        f.read_exact(&mut bytes)?;
        let values = f64::read_le_bytes(&bytes)?;
        let arr = Array3::from_shape_vec((side, side, ch), values)
            .map_err(|e| Error::Serde(e.to_string()))?;
        maps.push(FeatureMap::new(arr, id)?);
    }
    Ok(maps)
}
