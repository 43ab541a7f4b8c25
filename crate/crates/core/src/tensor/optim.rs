use super::Tensor;
use crate::error::{Error, Result};

/// Linear warmup to `base_lr`, then cosine decay to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f32,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn constant(lr: f32) -> Self {
        LrSchedule {
            base_lr: lr,
            warmup_steps: 0,
            total_steps: 0,
        }
    }

    pub fn lr_at(&self, step: usize) -> f32 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f32 / self.warmup_steps as f32;
        }
        if self.total_steps <= self.warmup_steps {
            return self.base_lr;
        }
        let progress = ((step - self.warmup_steps) as f64
            / (self.total_steps - self.warmup_steps) as f64)
            .min(1.0);
        (self.base_lr as f64 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())) as f32
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct Slot {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Adam with bias correction. One state slot per parameter, matched by position.
pub struct Adam {
    cfg: AdamConfig,
    schedule: LrSchedule,
    slots: Vec<Slot>,
    step: usize,
}

impl Adam {
    pub fn new<'a>(
        cfg: AdamConfig,
        schedule: LrSchedule,
        params: impl IntoIterator<Item = &'a Tensor>,
    ) -> Self {
        let slots = params
            .into_iter()
            .map(|p| Slot {
                m: vec![0.0; p.numel()],
                v: vec![0.0; p.numel()],
            })
            .collect();
        Adam {
            cfg,
            schedule,
            slots,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f32 {
        self.schedule.lr_at(self.step)
    }

    /// Applies one update using each parameter's stored gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if params.len() != self.slots.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer holds {} state slots but got {} parameters",
                self.slots.len(),
                params.len()
            )));
        }
        let lr = self.schedule.lr_at(self.step);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        for (p, slot) in params.iter_mut().zip(&mut self.slots) {
            if slot.m.len() != p.numel() {
                return Err(Error::shape(
                    "adam",
                    format!("state slot has {} entries, parameter {}", slot.m.len(), p.numel()),
                ));
            }
            let grad = p
                .grad()
                .ok_or_else(|| Error::Autodiff("parameter without gradient".into()))?
                .to_vec();
            for (((w, g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(&mut slot.m)
                .zip(&mut slot.v)
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
            p.ensure_finite("adam")?;
        }
        Ok(())
    }
}
