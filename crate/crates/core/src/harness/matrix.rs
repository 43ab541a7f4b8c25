use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{AugmentSection, DataSection, DgPreset, DistillSection, ModelSection, Role, TrainConfig, TrainSection};
use super::trainer::{check_student_budget, crop_len_for, train, RunSummary, TrainSummary};
use crate::audio::Frontend;
use crate::data::{evaluate_store, Manifest, Split};
use crate::distill::{ensemble_logits, export_logits, LogitStore};
use crate::error::{Error, Result};
use crate::models::{count_complexity, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSpec {
    pub name: String,
    #[serde(flatten)]
    pub model: ModelSpec,
}

/// Externally produced logit stores for one DG preset, one file per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportSpec {
    pub name: String,
    pub preset: DgPreset,
    pub paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub name: String,
    /// Teacher or import names.
    pub members: Vec<String>,
    /// All matrix presets when absent.
    pub presets: Option<Vec<DgPreset>>,
}

fn default_student_preset() -> DgPreset {
    DgPreset::Dirfms
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub seeds: Vec<u64>,
    pub presets: Vec<DgPreset>,
    #[serde(default = "default_student_preset")]
    pub student_preset: DgPreset,
    #[serde(default, rename = "teacher")]
    pub teachers: Vec<TeacherSpec>,
    #[serde(default, rename = "import")]
    pub imports: Vec<ImportSpec>,
    #[serde(default, rename = "ensemble")]
    pub ensembles: Vec<EnsembleSpec>,
    pub student: ModelSpec,
    #[serde(default)]
    pub train: TrainSection,
    /// Student training settings; `train` when absent.
    pub student_train: Option<TrainSection>,
    #[serde(default)]
    pub distill: DistillSection,
    pub data: DataSection,
}

impl MatrixSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a spec file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut spec.data.manifest);
        for imp in &mut spec.imports {
            imp.paths.iter_mut().for_each(rebase);
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum LogitSource {
    Trained { teacher: String, preset: DgPreset, seed: u64 },
    Imported { name: String, preset: DgPreset, path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Job {
    TrainTeacher { teacher: String, preset: DgPreset, seed: u64 },
    ExportLogits { teacher: String, preset: DgPreset, seed: u64 },
    Ensemble { name: String, sources: Vec<LogitSource> },
    TrainStudent { ensemble: String },
}

impl Job {
    pub fn is_teacher_training(&self) -> bool {
        matches!(self, Job::TrainTeacher { .. })
    }
}

/// Expands the spec into an ordered job list without touching the filesystem.
pub fn plan(spec: &MatrixSpec) -> Result<Vec<Job>> {
    if spec.seeds.is_empty() || spec.presets.is_empty() {
        return Err(Error::Config("matrix needs at least one seed and one preset".into()));
    }
    let presets: BTreeSet<DgPreset> = spec.presets.iter().copied().collect();
    let mut names = BTreeSet::new();
    for n in spec.teachers.iter().map(|t| &t.name).chain(spec.imports.iter().map(|i| &i.name)) {
        names.insert(n.as_str());
    }
    if let Some(t) = spec.teachers.iter().find(|t| spec.imports.iter().any(|i| i.name == t.name)) {
        return Err(Error::Config(format!("{} is both a teacher and an import", t.name)));
    }
    for imp in &spec.imports {
        if !presets.contains(&imp.preset) {
            return Err(Error::Config(format!("import {} uses undefined DG preset {}", imp.name, imp.preset)));
        }
    }

    let mut jobs = Vec::new();
    for t in &spec.teachers {
        for &preset in &spec.presets {
            for &seed in &spec.seeds {
                jobs.push(Job::TrainTeacher {
                    teacher: t.name.clone(),
                    preset,
                    seed,
                });
                jobs.push(Job::ExportLogits {
                    teacher: t.name.clone(),
                    preset,
                    seed,
                });
            }
        }
    }

    let ensembles = if spec.ensembles.is_empty() {
        vec![EnsembleSpec {
            name: "ensemble".into(),
            members: names.iter().map(|s| s.to_string()).collect(),
            presets: None,
        }]
    } else {
        spec.ensembles.clone()
    };
    for e in &ensembles {
        let e_presets = e.presets.clone().unwrap_or_else(|| spec.presets.clone());
        let mut sources = Vec::new();
        for m in &e.members {
            if !names.contains(m.as_str()) {
                return Err(Error::Config(format!("ensemble {} references unknown model {m}", e.name)));
            }
            for &preset in &e_presets {
                if !presets.contains(&preset) {
                    return Err(Error::Config(format!("ensemble {} uses undefined DG preset {preset}", e.name)));
                }
                if spec.teachers.iter().any(|t| &t.name == m) {
                    sources.extend(spec.seeds.iter().map(|&seed| LogitSource::Trained {
                        teacher: m.clone(),
                        preset,
                        seed,
                    }));
                    continue;
                }
                let imp: Vec<&ImportSpec> = spec.imports.iter().filter(|i| &i.name == m && i.preset == preset).collect();
                if imp.is_empty() || imp.iter().all(|i| i.paths.is_empty()) {
                    return Err(Error::Config(format!("no imported logit store for {m} under preset {preset}")));
                }
                for i in imp {
                    sources.extend(i.paths.iter().map(|p| LogitSource::Imported {
                        name: m.clone(),
                        preset,
                        path: p.clone(),
                    }));
                }
            }
        }
        if sources.is_empty() {
            return Err(Error::Config(format!("ensemble {} has no members", e.name)));
        }
        jobs.push(Job::Ensemble {
            name: e.name.clone(),
            sources,
        });
        jobs.push(Job::TrainStudent {
            ensemble: e.name.clone(),
        });
    }
    Ok(jobs)
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub kind: String,
    pub name: String,
    pub arch: String,
    pub preset: String,
    pub members: usize,
    pub params: Option<u64>,
    pub macs: Option<u64>,
    pub evaluations: usize,
    pub val_acc: Option<f64>,
    pub unseen_acc: Option<f64>,
    /// Overall accuracies that `val_acc` averages.
    pub window_accs: Vec<f64>,
}

fn teacher_dir(out: &Path, teacher: &str, preset: DgPreset, seed: u64) -> PathBuf {
    out.join("teachers").join(format!("{teacher}-{preset}-s{seed}"))
}

fn source_path(out: &Path, s: &LogitSource) -> PathBuf {
    match s {
        LogitSource::Trained { teacher, preset, seed } => teacher_dir(out, teacher, *preset, *seed).join("logits.dflg"),
        LogitSource::Imported { path, .. } => path.clone(),
    }
}

fn teacher_config(spec: &MatrixSpec, model: &ModelSpec, preset: DgPreset, seed: u64) -> TrainConfig {
    TrainConfig {
        model: ModelSection {
            role: Role::Teacher,
            spec: model.clone(),
        },
        distill: DistillSection::default(),
        augment: AugmentSection {
            preset,
            ..Default::default()
        },
        train: TrainSection {
            seed,
            runs: 1,
            ..spec.train.clone()
        },
        data: spec.data.clone(),
    }
}

fn opt(v: Option<impl ToString>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| x.to_string())
}

fn fmt_acc(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

fn write_tables(rows: &[ResultRow], out: &Path) -> Result<()> {
    let csv_path = out.join("results.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record([
        "kind", "name", "arch", "preset", "members", "params", "macs", "evaluations", "val_acc", "unseen_acc",
    ])?;
    for r in rows {
        w.write_record([
            r.kind.clone(),
            r.name.clone(),
            r.arch.clone(),
            r.preset.clone(),
            r.members.to_string(),
            opt(r.params),
            opt(r.macs),
            r.evaluations.to_string(),
            fmt_acc(r.val_acc),
            fmt_acc(r.unseen_acc),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", 100.0 * x));
    let mut md = String::from(
        "| Kind | Model | Arch | DG | Members | Params | MMACs | Evals | Val. Acc. (%) | Unseen Acc. (%) |\n\
         |---|---|---|---|---:|---:|---:|---:|---:|---:|\n",
    );
    for r in rows {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.kind,
            r.name,
            r.arch,
            r.preset,
            r.members,
            opt(r.params),
            r.macs.map_or_else(|| "n/a".to_string(), |m| format!("{:.2}", m as f64 / 1e6)),
            r.evaluations,
            pct(r.val_acc),
            pct(r.unseen_acc)
        );
    }
    let md_path = out.join("results.md");
    std::fs::write(&md_path, md).map_err(|e| Error::io(&md_path, e))?;

    let json_path = out.join("results.json");
    let json = serde_json::to_string_pretty(rows).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))
}

/// Executes the plan sequentially and writes `results.csv`, `results.md` and
/// `results.json` under `out`. Table rows are assembled from job artifacts.
pub fn run_matrix(spec: &MatrixSpec, out: &Path) -> Result<Vec<ResultRow>> {
    let jobs = plan(spec)?;
    let frontend = Frontend::new(spec.data.frontend.clone())?;
    if jobs.iter().any(|j| matches!(j, Job::TrainStudent { .. })) {
        check_student_budget(&spec.student, &frontend)?;
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let manifest = Manifest::load(&spec.data.manifest)?;
    let teacher_spec = |name: &str| {
        spec.teachers
            .iter()
            .find(|t| t.name == name)
            .map(|t| &t.model)
            .ok_or_else(|| Error::Config(format!("unknown teacher {name}")))
    };
    let mut ensemble_rows = Vec::new();
    let mut student_rows = Vec::new();
    let mut pending_models = std::collections::BTreeMap::new();

    for job in &jobs {
        match job {
            Job::TrainTeacher { teacher, preset, seed } => {
                let cfg = teacher_config(spec, teacher_spec(teacher)?, *preset, *seed);
                let dir = teacher_dir(out, teacher, *preset, *seed);
                log::info!("training teacher {teacher} {preset} seed {seed}");
                let mut outcome = train(&cfg, Some(&dir))?;
                pending_models.insert((teacher.clone(), *preset, *seed), outcome.models.remove(0));
            }
            Job::ExportLogits { teacher, preset, seed } => {
                let cfg = teacher_config(spec, teacher_spec(teacher)?, *preset, *seed);
                let mut model = pending_models
                    .remove(&(teacher.clone(), *preset, *seed))
                    .ok_or_else(|| Error::Config(format!("export before training of {teacher}")))?;
                let store = export_logits(&mut model, &frontend, &manifest, None, crop_len_for(&cfg))?;
                store.save(&teacher_dir(out, teacher, *preset, *seed).join("logits.dflg"))?;
            }
            Job::Ensemble { name, sources } => {
                let stores = sources
                    .iter()
                    .map(|s| {
                        let p = source_path(out, s);
                        if !p.exists() {
                            return Err(Error::Config(format!("missing logit store {}", p.display())));
                        }
                        LogitStore::load(&p)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let ens = ensemble_logits(&stores)?;
                let dir = out.join("ensembles");
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                ens.save(&dir.join(format!("{name}.dflg")))?;
                let covered = manifest.split(Split::Val).all(|r| ens.contains(&r.clip_path));
                let report = if covered {
                    Some(evaluate_store(&ens, &manifest, Split::Val)?)
                } else {
                    None
                };
                let presets: BTreeSet<String> = sources
                    .iter()
                    .map(|s| match s {
                        LogitSource::Trained { preset, .. } | LogitSource::Imported { preset, .. } => preset.to_string(),
                    })
                    .collect();
                ensemble_rows.push(ResultRow {
                    kind: "ensemble".into(),
                    name: name.clone(),
                    arch: "ensemble".into(),
                    preset: presets.into_iter().collect::<Vec<_>>().join("+"),
                    members: sources.len(),
                    params: None,
                    macs: None,
                    evaluations: report.is_some() as usize,
                    val_acc: report.as_ref().map(|r| r.overall_acc),
                    unseen_acc: report.as_ref().and_then(|r| r.unseen_acc),
                    window_accs: report.iter().map(|r| r.overall_acc).collect(),
                });
            }
            Job::TrainStudent { ensemble } => {
                let members = ensemble_rows.iter().find(|r| &r.name == ensemble).map_or(0, |r| r.members);
                let cfg = TrainConfig {
                    model: ModelSection {
                        role: Role::Student,
                        spec: spec.student.clone(),
                    },
                    distill: DistillSection {
                        teacher_logits: Some(out.join("ensembles").join(format!("{ensemble}.dflg"))),
                        ..spec.distill.clone()
                    },
                    augment: AugmentSection {
                        preset: spec.student_preset,
                        ..Default::default()
                    },
                    train: spec.student_train.clone().unwrap_or_else(|| spec.train.clone()),
                    data: spec.data.clone(),
                };
                log::info!("training student on {ensemble}");
                let dir = out.join("students").join(ensemble);
                train(&cfg, Some(&dir))?;
                let s = TrainSummary::load(&dir.join("summary.json"))?;
                student_rows.push(ResultRow {
                    kind: "student".into(),
                    name: format!("student<{ensemble}>"),
                    arch: s.arch.clone(),
                    preset: spec.student_preset.to_string(),
                    members,
                    params: Some(s.params),
                    macs: Some(s.macs),
                    evaluations: s.window_accs.len(),
                    val_acc: Some(s.aggregate.overall_acc),
                    unseen_acc: s.aggregate.unseen_acc,
                    window_accs: s.window_accs,
                });
            }
        }
    }

    let mut rows = Vec::new();
    for t in &spec.teachers {
        for &preset in &spec.presets {
            let runs = spec
                .seeds
                .iter()
                .enumerate()
                .map(|(i, &seed)| {
                    let s = TrainSummary::load(&teacher_dir(out, &t.name, preset, seed).join("summary.json"))?;
                    Ok(s.runs.into_iter().map(move |r| RunSummary { run: i, ..r }))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect::<Vec<_>>();
            let complexity = count_complexity(&t.model.build(0)?, &frontend.config().input_shape(1.0))?;
            let agg = TrainSummary::from_runs(t.model.arch_name(), &complexity, spec.train.last_k, runs)?;
            let path = out.join("teachers").join(format!("{}-{preset}.summary.json", t.name));
            agg.save(&path)?;
            rows.push(ResultRow {
                kind: "teacher".into(),
                name: t.name.clone(),
                arch: t.model.arch_name().into(),
                preset: preset.to_string(),
                members: 1,
                params: Some(agg.params),
                macs: Some(agg.macs),
                evaluations: agg.window_accs.len(),
                val_acc: Some(agg.aggregate.overall_acc),
                unseen_acc: agg.aggregate.unseen_acc,
                window_accs: agg.window_accs,
            });
        }
    }
    rows.extend(ensemble_rows);
    rows.extend(student_rows);
    write_tables(&rows, out)?;
    Ok(rows)
}
