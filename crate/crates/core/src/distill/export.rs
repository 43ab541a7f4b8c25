use std::path::Path;

use super::store::LogitStore;
use crate::audio::{load_wav, Frontend};
use crate::augment::center_crop;
use crate::data::{Manifest, Split};
use crate::error::{Error, Result};
use crate::models::ModelGraph;
use crate::tensor::Tensor;

const EXPORT_BATCH: usize = 32;

/// Evaluation-mode logits for every clip of `split` (all clips when `None`),
/// using a center crop of `crop_len` samples when given.
pub fn export_logits(
    model: &mut ModelGraph,
    frontend: &Frontend,
    manifest: &Manifest,
    split: Option<Split>,
    crop_len: Option<usize>,
) -> Result<LogitStore> {
    let records: Vec<_> = manifest
        .records()
        .iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .collect();
    let mut store = LogitStore::new(model.spec.n_classes())?;
    for chunk in records.chunks(EXPORT_BATCH) {
        let mut feats = Vec::with_capacity(chunk.len());
        for r in chunk {
            let path = manifest.resolve(r);
            if !path.exists() {
                return Err(Error::MissingClip(path.display().to_string()));
            }
            let mut w = load_wav(&path)?;
            if let Some(c) = crop_len {
                w = center_crop(&w, c)?;
            }
            feats.push(frontend.log_mel(&w)?.values);
        }
        let logits = model.predict(&Tensor::stack(&feats)?)?;
        for (i, r) in chunk.iter().enumerate() {
            store.insert(r.clip_path.clone(), logits.row(i).to_vec())?;
        }
    }
    Ok(store)
}

pub fn import_logits(path: &Path) -> Result<LogitStore> {
    LogitStore::load(path)
}
