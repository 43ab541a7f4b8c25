use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kdasc::audio::{Frontend, FrontendConfig};
use kdasc::data::{evaluate_store, generate_toy_dataset, Manifest, Split, ToyConfig};
use kdasc::distill::{ensemble_logits, export_logits, import_logits};
use kdasc::harness::{run_matrix, train, MatrixSpec, Role, TrainConfig};
use kdasc::models::{
    assert_budget, count_complexity, load_model, Budget, CpmConfig, CprConfig, ModelSpec,
};

#[derive(Parser)]
#[command(name = "kdasc", version, about = "Knowledge distillation for low-complexity acoustic scene classifiers")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic scene/device dataset.
    GenData(GenData),
    /// Train a model from a TOML config.
    Train(TrainArgs),
    /// Train a student on teacher logits.
    Distill(DistillArgs),
    /// Write a model's logits for a manifest split.
    ExportLogits(ExportArgs),
    /// Average several logit stores.
    EnsembleLogits(EnsembleArgs),
    /// Accuracy report for a model or a logit store.
    Evaluate(EvaluateArgs),
    /// Per-layer parameter and MAC table with the budget verdict.
    CountComplexity(ComplexityArgs),
    /// Run a teacher/ensemble/student experiment matrix.
    Matrix(MatrixArgs),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    n_scenes: usize,
    #[arg(long, default_value_t = 9)]
    n_devices: usize,
    #[arg(long, default_value_t = 3)]
    n_unseen: usize,
    #[arg(long, default_value_t = 4)]
    clips_per_cell: usize,
    #[arg(long, default_value_t = 1)]
    val_per_cell: usize,
    #[arg(long, default_value_t = 32_000)]
    sample_rate: u32,
    #[arg(long, default_value_t = 1.0)]
    seconds: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Independent runs with consecutive seeds.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DistillArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Overrides `[distill] teacher_logits`.
    #[arg(long)]
    teacher_logits: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// train, val or all.
    #[arg(long, default_value = "all")]
    split: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    crop_seconds: Option<f64>,
}

#[derive(Args)]
struct EnsembleArgs {
    #[arg(required = true)]
    stores: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, conflicts_with = "logits", required_unless_present = "logits")]
    model: Option<PathBuf>,
    #[arg(long)]
    logits: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "val")]
    split: String,
    #[arg(long)]
    crop_seconds: Option<f64>,
}

#[derive(Args)]
struct ComplexityArgs {
    /// Read the model and frontend from a training config.
    #[arg(long, conflicts_with = "arch")]
    config: Option<PathBuf>,
    /// cpm or cpr.
    #[arg(long, default_value = "cpm")]
    arch: String,
    #[arg(long, default_value_t = 32)]
    base_channels: usize,
    #[arg(long, default_value_t = 3)]
    expansion_rate: usize,
    #[arg(long, default_value_t = 2.3)]
    channels_multiplier: f32,
    #[arg(long)]
    mel_bins: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    seconds: f64,
    /// Machine-readable output.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct MatrixArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_split(s: &str) -> Result<Option<Split>> {
    if s == "all" {
        return Ok(None);
    }
    Ok(Some(s.parse()?))
}

fn load_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(r) = args.runs {
        cfg.train.runs = r;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn run_train(cfg: &TrainConfig, out: &Path) -> Result<()> {
    let outcome = train(cfg, Some(out))?;
    let s = &outcome.summary;
    for r in &s.runs {
        println!(
            "run {} (seed {}): loss {:.4} -> {:.4}",
            r.run,
            r.seed,
            r.initial_loss(),
            r.final_loss()
        );
    }
    println!(
        "{} evaluations (runs x last {} epochs): val acc {:.4}, unseen acc {}",
        s.window_accs.len(),
        s.last_k,
        s.aggregate.overall_acc,
        s.aggregate.unseen_acc.map_or("n/a".into(), |u| format!("{u:.4}"))
    );
    Ok(())
}

fn crop(seconds: Option<f64>, fe: &FrontendConfig) -> Option<usize> {
    seconds.map(|s| (s * fe.sample_rate as f64).round() as usize)
}

fn count(args: &ComplexityArgs) -> Result<bool> {
    let (spec, mut frontend) = match &args.config {
        Some(p) => {
            let cfg = TrainConfig::load(p)?;
            (cfg.model.spec, cfg.data.frontend)
        }
        None => {
            let spec = match args.arch.as_str() {
                "cpm" => ModelSpec::Cpm(CpmConfig {
                    base_channels: args.base_channels,
                    expansion_rate: args.expansion_rate,
                    channels_multiplier: args.channels_multiplier,
                    n_classes: 10,
                }),
                "cpr" => ModelSpec::Cpr(CprConfig::with_base(args.base_channels)),
                other => bail!("unknown architecture {other:?}"),
            };
            (spec, FrontendConfig::default())
        }
    };
    if let Some(m) = args.mel_bins {
        frontend.mel_bins = m;
    }
    let c = count_complexity(&spec.build(0)?, &frontend.input_shape(args.seconds))?;
    let report = assert_budget(&c, Budget::default());
    if args.csv {
        let mut w = csv::Writer::from_writer(std::io::stdout());
        w.write_record(["name", "kind", "out_shape", "params", "macs"])?;
        for l in &c.layers {
            let shape = l.out_shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            w.write_record([l.name.as_str(), l.kind, &shape, &l.params.to_string(), &l.macs.to_string()])?;
        }
        w.write_record(["total", "", "", &c.params.to_string(), &c.macs.to_string()])?;
        w.flush()?;
    } else {
        println!("{:<32} {:<7} {:<16} {:>10} {:>12}", "layer", "kind", "out shape", "params", "MACs");
        for l in &c.layers {
            let shape = l.out_shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            println!("{:<32} {:<7} {:<16} {:>10} {:>12}", l.name, l.kind, shape, l.params, l.macs);
        }
        println!("{:<57} {:>10} {:>12}", "total", c.params, c.macs);
        println!("{report}");
    }
    Ok(report.passed())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Command::GenData(a) => {
            let cfg = ToyConfig {
                seed: a.seed,
                n_scenes: a.n_scenes,
                n_devices: a.n_devices,
                n_unseen: a.n_unseen,
                clips_per_cell: a.clips_per_cell,
                val_per_cell: a.val_per_cell,
                sample_rate: a.sample_rate,
                seconds: a.seconds,
            };
            let m = generate_toy_dataset(&cfg, &a.out)?;
            println!("wrote {} clips to {}", m.records().len(), a.out.display());
        }
        Command::Train(a) => {
            let cfg = load_config(&a)?;
            run_train(&cfg, &a.out)?;
        }
        Command::Distill(a) => {
            let mut cfg = load_config(&a.train)?;
            if let Some(p) = a.teacher_logits {
                cfg.distill.teacher_logits = Some(p);
            }
            if cfg.distill.teacher_logits.is_none() {
                bail!("distillation needs teacher logits ([distill] teacher_logits or --teacher-logits)");
            }
            cfg.model.role = Role::Student;
            run_train(&cfg, &a.train.out)?;
        }
        Command::ExportLogits(a) => {
            let (mut model, fe) = load_model(&a.model)?;
            let manifest = Manifest::load(&a.manifest)?;
            let frontend = Frontend::new(fe.clone())?;
            let store = export_logits(&mut model, &frontend, &manifest, parse_split(&a.split)?, crop(a.crop_seconds, &fe))?;
            store.save(&a.out)?;
            println!("wrote {} entries (K={}) to {}", store.len(), store.class_count(), a.out.display());
        }
        Command::EnsembleLogits(a) => {
            let stores = a
                .stores
                .iter()
                .map(|p| import_logits(p).with_context(|| format!("reading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let ens = ensemble_logits(&stores)?;
            ens.save(&a.out)?;
            println!("averaged {} stores over {} clips into {}", stores.len(), ens.len(), a.out.display());
        }
        Command::Evaluate(a) => {
            let manifest = Manifest::load(&a.manifest)?;
            let split = parse_split(&a.split)?.context("evaluate needs --split train or val")?;
            let store = match (&a.model, &a.logits) {
                (Some(m), _) => {
                    let (mut model, fe) = load_model(m)?;
                    let frontend = Frontend::new(fe.clone())?;
                    export_logits(&mut model, &frontend, &manifest, Some(split), crop(a.crop_seconds, &fe))?
                }
                (None, Some(l)) => import_logits(l)?,
                (None, None) => bail!("pass --model or --logits"),
            };
            let report = evaluate_store(&store, &manifest, split)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::CountComplexity(a) => {
            if !count(&a)? {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Matrix(a) => {
            let spec = MatrixSpec::load(&a.spec)?;
            let rows = run_matrix(&spec, &a.out)?;
            println!("{} result rows written to {}", rows.len(), a.out.join("results.csv").display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
