//! Dataset manifests, the synthetic scene/device corpus and device-aware metrics.

mod manifest;
mod metrics;
mod toy;

pub use manifest::{scene_index, ClipRecord, Manifest, Split, SCENES};
pub use metrics::{aggregate_reports, argmax, evaluate_predictions, evaluate_store, MetricsReport};
pub use toy::{device_names, generate_toy_dataset, ToyConfig};
