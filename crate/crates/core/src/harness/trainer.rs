use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Role, TrainConfig};
use crate::audio::{load_wav, Frontend, Waveform};
use crate::augment::{
    center_crop, dir_augment_batch, freq_mixstyle_taped, load_ir_bank, shifted_crop, synthetic_ir_bank, DirConfig,
    FmsConfig,
};
use crate::data::{aggregate_reports, evaluate_store, Manifest, MetricsReport, Split};
use crate::distill::{cross_entropy, kd_loss, LogitStore};
use crate::error::{Error, Result};
use crate::models::{assert_budget, count_complexity, save_model, Budget, ModelComplexity, ModelGraph, ModelSpec};
use crate::seed::derive;
use crate::tensor::{Adam, AdamConfig, LrSchedule, Tape, Tensor};

const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub run: usize,
    pub seed: u64,
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub lr: f32,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub checkpoints: Vec<PathBuf>,
}

impl RunSummary {
    /// Mean training loss over the first epoch.
    pub fn initial_loss(&self) -> f64 {
        self.epochs.first().map_or(f64::NAN, |e| e.train_loss)
    }

    /// Mean training loss over the last epoch.
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.train_loss)
    }

    pub fn window(&self, last_k: usize) -> &[EpochRecord] {
        &self.epochs[self.epochs.len().saturating_sub(last_k)..]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub arch: String,
    pub params: u64,
    pub macs: u64,
    pub last_k: usize,
    pub runs: Vec<RunSummary>,
    /// Overall accuracy of every evaluation inside the aggregation window.
    pub window_accs: Vec<f64>,
    pub aggregate: MetricsReport,
}

impl TrainSummary {
    pub fn from_runs(arch: &str, complexity: &ModelComplexity, last_k: usize, runs: Vec<RunSummary>) -> Result<Self> {
        let window: Vec<&EpochRecord> = runs.iter().flat_map(|r| r.window(last_k)).collect();
        let reports: Vec<MetricsReport> = window.iter().map(|e| e.report.clone()).collect();
        let run_ids = runs.iter().map(|r| r.seed).collect();
        let epochs = runs
            .first()
            .map(|r| r.window(last_k).iter().map(|e| e.epoch).collect())
            .unwrap_or_default();
        let aggregate = aggregate_reports(&reports, run_ids, epochs)?;
        Ok(TrainSummary {
            arch: arch.to_string(),
            params: complexity.params,
            macs: complexity.macs,
            last_k,
            window_accs: reports.iter().map(|r| r.overall_acc).collect(),
            aggregate,
            runs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

pub struct TrainOutcome {
    pub summary: TrainSummary,
    /// Final-epoch model of every run.
    pub models: Vec<ModelGraph>,
}

/// Complexity of `spec` on a one-second clip; errors when it breaks the budget.
pub fn check_student_budget(spec: &ModelSpec, frontend: &Frontend) -> Result<ModelComplexity> {
    let c = count_complexity(&spec.build(0)?, &frontend.config().input_shape(1.0))?;
    let report = assert_budget(&c, Budget::default());
    if !report.passed() {
        return Err(Error::Budget(format!("student {}: {report}", spec.arch_name())));
    }
    Ok(c)
}

struct Prepared {
    frontend: Frontend,
    crop_len: usize,
    train_waves: Vec<Waveform>,
    train_ids: Vec<String>,
    train_labels: Vec<usize>,
    val_feats: Vec<Tensor>,
    val_ids: Vec<String>,
    manifest: Manifest,
    teacher: Option<LogitStore>,
    dir: DirConfig,
    fms: FmsConfig,
}

fn load_clip(manifest: &Manifest, r: &crate::data::ClipRecord) -> Result<Waveform> {
    let path = manifest.resolve(r);
    if !path.exists() {
        return Err(Error::MissingClip(path.display().to_string()));
    }
    load_wav(&path)
}

fn prepare(cfg: &TrainConfig) -> Result<Prepared> {
    let frontend = Frontend::new(cfg.data.frontend.clone())?;
    let manifest = Manifest::load(&cfg.data.manifest)?;
    let mut train_waves = Vec::new();
    let (mut train_ids, mut train_labels) = (Vec::new(), Vec::new());
    for r in manifest.split(Split::Train) {
        train_waves.push(load_clip(&manifest, r)?);
        train_ids.push(r.clip_path.clone());
        train_labels.push(r.label());
    }
    if train_waves.is_empty() {
        return Err(Error::Config("manifest has no training clips".into()));
    }
    let mut val_waves = Vec::new();
    let mut val_ids = Vec::new();
    for r in manifest.split(Split::Val) {
        val_waves.push(load_clip(&manifest, r)?);
        val_ids.push(r.clip_path.clone());
    }
    let shortest = train_waves.iter().chain(&val_waves).map(Waveform::len).min().unwrap_or(0);
    let crop_len = match cfg.train.crop_seconds {
        Some(s) => (s * cfg.data.frontend.sample_rate as f64).round() as usize,
        None => shortest,
    };
    if crop_len > shortest || crop_len < cfg.data.frontend.n_fft {
        return Err(Error::Config(format!(
            "crop of {crop_len} samples does not fit clips of {shortest} samples and n_fft {}",
            cfg.data.frontend.n_fft
        )));
    }
    let val_feats = val_waves
        .iter()
        .map(|w| frontend.log_mel(&center_crop(w, crop_len)?).map(|s| s.values))
        .collect::<Result<Vec<_>>>()?;

    let n_classes = cfg.model.spec.n_classes();
    let teacher = match &cfg.distill.teacher_logits {
        Some(p) => {
            let store = LogitStore::load(p)?;
            if store.class_count() != n_classes {
                return Err(Error::ClassCount {
                    expected: n_classes,
                    found: store.class_count(),
                });
            }
            if let Some(id) = train_ids.iter().find(|id| !store.contains(id)) {
                return Err(Error::MissingClip(format!("teacher logits lack {id}")));
            }
            Some(store)
        }
        None => None,
    };
    let dg = cfg.augment.resolve(cfg.model.role);
    let bank = match &cfg.augment.ir_dir {
        Some(d) => load_ir_bank(d)?,
        None => synthetic_ir_bank(cfg.augment.ir_seed),
    };
    Ok(Prepared {
        frontend,
        crop_len,
        train_waves,
        train_ids,
        train_labels,
        val_feats,
        val_ids,
        manifest,
        teacher,
        dir: DirConfig::new(dg.dir_p, bank)?,
        fms: FmsConfig::new(dg.fms_alpha, dg.fms_p)?,
    })
}

fn evaluate_val(model: &mut ModelGraph, prep: &Prepared) -> Result<MetricsReport> {
    let mut store = LogitStore::new(model.spec.n_classes())?;
    for (feats, ids) in prep.val_feats.chunks(EVAL_BATCH).zip(prep.val_ids.chunks(EVAL_BATCH)) {
        let logits = model.predict(&Tensor::stack(feats)?)?;
        for (i, id) in ids.iter().enumerate() {
            store.insert(id.clone(), logits.row(i).to_vec())?;
        }
    }
    evaluate_store(&store, &prep.manifest, Split::Val)
}

fn train_one(
    cfg: &TrainConfig,
    prep: &Prepared,
    run: usize,
    seed: u64,
    out_dir: Option<&Path>,
    log: &mut Option<BufWriter<File>>,
) -> Result<(RunSummary, ModelGraph)> {
    let mut model = cfg.model.spec.build(derive(seed, &[0]))?;
    let t = &cfg.train;
    let n = prep.train_waves.len();
    let steps_per_epoch = n.div_ceil(t.batch_size);
    let schedule = LrSchedule {
        base_lr: t.lr,
        warmup_steps: t.warmup_epochs * steps_per_epoch,
        total_steps: t.epochs * steps_per_epoch,
    };
    let mut opt = Adam::new(AdamConfig::default(), schedule, model.parameters());
    let distill = cfg.distill.config()?;
    let k = model.spec.n_classes();
    let run_dir = out_dir.map(|d| d.join(format!("run{run}")));
    if let Some(d) = &run_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    let mut epochs = Vec::with_capacity(t.epochs);
    let mut checkpoints = Vec::new();
    let mut tape = Tape::new();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..t.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(seed, &[1, epoch as u64])));
        let lr = opt.current_lr();
        let mut loss_sum = 0.0f64;
        for (b, idx) in order.chunks(t.batch_size).enumerate() {
            let bseed = derive(seed, &[2, epoch as u64, b as u64]);
            let mut crop_rng = ChaCha8Rng::seed_from_u64(derive(bseed, &[0]));
            let crops = idx
                .iter()
                .map(|&i| shifted_crop(&prep.train_waves[i], prep.crop_len, &mut crop_rng))
                .collect::<Result<Vec<_>>>()?;
            let crops = dir_augment_batch(&crops, &prep.dir, derive(bseed, &[1]))?;
            let feats = crops
                .iter()
                .map(|w| prep.frontend.log_mel(w).map(|s| s.values))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = idx.iter().map(|&i| prep.train_labels[i]).collect();

            tape.reset();
            let x = tape.constant(Tensor::stack(&feats)?);
            let mut fms_rng = ChaCha8Rng::seed_from_u64(derive(bseed, &[2]));
            let x = freq_mixstyle_taped(&mut tape, x, &prep.fms, &mut fms_rng)?;
            let out = model.forward(&mut tape, x, true)?;
            let loss = match &prep.teacher {
                Some(store) => {
                    let mut rows = Vec::with_capacity(idx.len() * k);
                    for &i in idx {
                        rows.extend_from_slice(store.get(&prep.train_ids[i]).expect("checked in prepare"));
                    }
                    let zt = Tensor::new(vec![idx.len(), k], rows)?;
                    kd_loss(&mut tape, out.logits, Some(&zt), &labels, &distill)?
                }
                None => cross_entropy(&mut tape, out.logits, &labels)?,
            };
            loss_sum += tape.value(loss).data()[0] as f64 * idx.len() as f64;
            tape.backward(loss)?;
            model.collect_grads(&tape, &out.params)?;
            opt.step(&mut model.parameters_mut())?;
        }

        let report = evaluate_val(&mut model, prep)?;
        let record = EpochRecord {
            run,
            seed,
            epoch: epoch + 1,
            train_loss: loss_sum / n as f64,
            lr,
            report,
        };
        log::info!(
            "run {run} epoch {}: loss {:.4} val {:.4}",
            record.epoch,
            record.train_loss,
            record.report.overall_acc
        );
        if let Some(w) = log.as_mut() {
            let line = serde_json::to_string(&record).map_err(|e| Error::Config(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io("metrics.jsonl", e))?;
        }
        epochs.push(record);
        if let Some(d) = &run_dir {
            if epoch + t.last_k >= t.epochs {
                let path = d.join(format!("epoch{:03}.ckpt", epoch + 1));
                save_model(&path, &model, prep.frontend.config())?;
                checkpoints.push(path);
            }
        }
    }
    Ok((
        RunSummary {
            run,
            seed,
            epochs,
            checkpoints,
        },
        model,
    ))
}

/// Trains run `run` with seed `train.seed + run`; used by the matrix to keep
/// each seed an independent job.
pub fn train_run(cfg: &TrainConfig, run: usize, out_dir: Option<&Path>) -> Result<(RunSummary, ModelGraph)> {
    let frontend = Frontend::new(cfg.data.frontend.clone())?;
    if cfg.model.role == Role::Student {
        check_student_budget(&cfg.model.spec, &frontend)?;
    }
    let prep = prepare(cfg)?;
    let mut log = open_log(out_dir)?;
    let out = train_one(cfg, &prep, run, cfg.train.seed + run as u64, out_dir, &mut log)?;
    flush(log)?;
    Ok(out)
}

fn open_log(out_dir: Option<&Path>) -> Result<Option<BufWriter<File>>> {
    out_dir
        .map(|d| {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            let p = d.join("metrics.jsonl");
            File::create(&p).map(BufWriter::new).map_err(|e| Error::io(p, e))
        })
        .transpose()
}

fn flush(log: Option<BufWriter<File>>) -> Result<()> {
    if let Some(mut w) = log {
        w.flush().map_err(|e| Error::io("metrics.jsonl", e))?;
    }
    Ok(())
}

/// Runs every configured seed, then aggregates the last `last_k` evaluations
/// of all runs. Students over the complexity budget are refused up front.
pub fn train(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let frontend = Frontend::new(cfg.data.frontend.clone())?;
    let complexity = if cfg.model.role == Role::Student {
        check_student_budget(&cfg.model.spec, &frontend)?
    } else {
        count_complexity(&cfg.model.spec.build(0)?, &frontend.config().input_shape(1.0))?
    };
    let prep = prepare(cfg)?;
    let mut log = open_log(out_dir)?;
    let mut runs = Vec::with_capacity(cfg.train.runs);
    let mut models = Vec::with_capacity(cfg.train.runs);
    for r in 0..cfg.train.runs {
        let (summary, model) = train_one(cfg, &prep, r, cfg.train.seed + r as u64, out_dir, &mut log)?;
        runs.push(summary);
        models.push(model);
    }
    flush(log)?;
    let summary = TrainSummary::from_runs(cfg.model.spec.arch_name(), &complexity, cfg.train.last_k, runs)?;
    if let Some(d) = out_dir {
        summary.save(&d.join("summary.json"))?;
    }
    Ok(TrainOutcome { summary, models })
}

/// Crop length the trainer uses for `cfg`, for matching exports.
pub(crate) fn crop_len_for(cfg: &TrainConfig) -> Option<usize> {
    cfg.train
        .crop_seconds
        .map(|s| (s * cfg.data.frontend.sample_rate as f64).round() as usize)
}
