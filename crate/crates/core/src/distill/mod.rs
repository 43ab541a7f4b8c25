//! Knowledge-distillation loss, teacher logit stores and logit ensembling.

mod export;
mod loss;
mod store;

pub use export::{export_logits, import_logits};
pub use loss::{
    cross_entropy, cross_entropy_value, kd_loss, kd_loss_value, tau_gradient_scale_check, DistillConfig, TauCheck,
    TauPoint,
};
pub use store::{ensemble_logits, LogitStore, LOGIT_MAGIC};
