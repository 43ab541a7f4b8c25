use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, Split};
use crate::distill::LogitStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall_acc: f64,
    pub per_device_acc: BTreeMap<String, f64>,
    /// `None` when the split has no unseen-device clips.
    pub unseen_acc: Option<f64>,
    pub n_clips: usize,
    pub run_ids: Vec<u64>,
    pub epoch_window: Vec<usize>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Scores one prediction per clip of `split`, looked up by clip id.
pub fn evaluate_predictions<'a>(
    manifest: &Manifest,
    split: Split,
    predict: impl Fn(&str) -> Option<&'a [f32]>,
) -> Result<MetricsReport> {
    let unseen = manifest.unseen_devices();
    let mut per_device: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let (mut correct, mut total) = (0usize, 0usize);
    let (mut u_correct, mut u_total) = (0usize, 0usize);
    for r in manifest.split(split) {
        let row = predict(&r.clip_path).ok_or_else(|| Error::MissingClip(r.clip_path.clone()))?;
        let hit = argmax(row) == r.label();
        let e = per_device.entry(r.device.clone()).or_default();
        e.0 += hit as usize;
        e.1 += 1;
        correct += hit as usize;
        total += 1;
        if unseen.contains(r.device.as_str()) {
            u_correct += hit as usize;
            u_total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Config(format!("split {split} is empty")));
    }
    Ok(MetricsReport {
        overall_acc: correct as f64 / total as f64,
        per_device_acc: per_device
            .into_iter()
            .map(|(d, (c, n))| (d, c as f64 / n as f64))
            .collect(),
        unseen_acc: (u_total > 0).then(|| u_correct as f64 / u_total as f64),
        n_clips: total,
        run_ids: Vec::new(),
        epoch_window: Vec::new(),
    })
}

pub fn evaluate_store(store: &LogitStore, manifest: &Manifest, split: Split) -> Result<MetricsReport> {
    evaluate_predictions(manifest, split, |id| store.get(id))
}

/// Arithmetic mean of several evaluations, carrying the run and epoch labels.
pub fn aggregate_reports(reports: &[MetricsReport], run_ids: Vec<u64>, epoch_window: Vec<usize>) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("nothing to aggregate".into()));
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mut per_device = BTreeMap::new();
    for d in reports[0].per_device_acc.keys() {
        per_device.insert(d.clone(), mean(&|r| r.per_device_acc.get(d).copied().unwrap_or(0.0)));
    }
    let unseen: Vec<f64> = reports.iter().filter_map(|r| r.unseen_acc).collect();
    Ok(MetricsReport {
        overall_acc: mean(&|r| r.overall_acc),
        per_device_acc: per_device,
        unseen_acc: (!unseen.is_empty()).then(|| unseen.iter().sum::<f64>() / unseen.len() as f64),
        n_clips: reports[0].n_clips,
        run_ids,
        epoch_window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClipRecord;

    #[test]
    fn ties_break_low() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn missing_prediction_is_an_error() {
        let m = Manifest::new(
            ".",
            vec![ClipRecord {
                clip_path: "a".into(),
                scene: "bus".into(),
                device: "a".into(),
                split: Split::Val,
            }],
        )
        .unwrap();
        let store = LogitStore::new(10).unwrap();
        assert!(matches!(evaluate_store(&store, &m, Split::Val), Err(Error::MissingClip(_))));
    }
}
