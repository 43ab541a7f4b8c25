//! Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
//! Built without the libtest harness so the lines are never captured.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use kdasc::audio::FrontendConfig;
use kdasc::augment::{apply_fms, fft_convolve, synthetic_ir_bank};
use kdasc::data::{evaluate_store, ClipRecord, Manifest, Split, SCENES};
use kdasc::distill::{
    cross_entropy_value, ensemble_logits, kd_loss, kd_loss_value, DistillConfig, LogitStore,
};
use kdasc::harness::{run_matrix, MatrixSpec, TrainSummary};
use kdasc::models::{assert_budget, count_complexity, Budget, CpmConfig, CprConfig, ModelSpec};
use kdasc::tensor::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::reference::direct_convolve;
use common::{gradcheck, max_abs_diff, rel_err, to_f32, to_f64, uniform};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within_time(start: Instant, limit: Duration, detail: String) -> Outcome {
    let t = start.elapsed();
    ensure!(t < limit, "{detail}; took {t:.2?} (limit {limit:?})");
    Ok(format!("{detail}; {t:.2?}"))
}

fn ladder() -> Outcome {
    let start = Instant::now();
    let targets = [128e3, 450e3, 1e6, 4e6, 8e6];
    let cpm = [32, 64, 96, 184, 264];
    let cpr = [32, 56, 88, 168, 232];
    let mut notes = Vec::new();
    for (i, &target) in targets.iter().enumerate() {
        for spec in [
            ModelSpec::Cpm(CpmConfig::with_base(cpm[i])),
            ModelSpec::Cpr(CprConfig::with_base(cpr[i])),
        ] {
            let p = spec.build(0).map_err(|e| e.to_string())?.param_count() as f64;
            let dev = p / target - 1.0;
            ensure!(
                dev.abs() <= 0.15,
                "{}@{}: {p} params is {:+.1}% from {target}",
                spec.arch_name(),
                spec.base_channels(),
                100.0 * dev
            );
            notes.push(format!("{}{}={:+.1}%", spec.arch_name(), spec.base_channels(), 100.0 * dev));
        }
    }
    within_time(start, Duration::from_secs(5), notes.join(" "))
}

fn student_budget() -> Outcome {
    let start = Instant::now();
    let shape = FrontendConfig::default().input_shape(1.0);
    let report = |cfg: CpmConfig| -> Result<_, String> {
        let g = ModelSpec::Cpm(cfg).build(0).map_err(|e| e.to_string())?;
        let c = count_complexity(&g, &shape).map_err(|e| e.to_string())?;
        Ok((c.params, c.macs, assert_budget(&c, Budget::default())))
    };
    let (p, m, student) = report(CpmConfig::student())?;
    ensure!(student.passed(), "default student fails: {student}");
    ensure!(p <= 128_000 && m <= 30_000_000, "student {p} params {m} MACs");
    let (p64, m64, big) = report(CpmConfig::with_base(64))?;
    ensure!(!big.passed(), "64-channel variant passes with {p64} params {m64} MACs");
    within_time(
        start,
        Duration::from_secs(1),
        format!("student {p} params {m} MACs passes; bc64 {p64} params {m64} MACs fails"),
    )
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let cases = gradcheck::suite();
    let worst = cases
        .iter()
        .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
        .ok_or("empty suite")?;
    let failing: Vec<_> = cases
        .iter()
        .filter(|c| !(c.rel_err < gradcheck::TOL) || !(c.forward_err < 1e-4))
        .map(|c| format!("{}[seed {}] grad {:.2e} fwd {:.2e}", c.name, c.seed, c.rel_err, c.forward_err))
        .collect();
    ensure!(failing.is_empty(), "{}", failing.join("; "));
    within_time(
        start,
        Duration::from_secs(120),
        format!("{} checks, worst {} at {:.2e}", cases.len(), worst.name, worst.rel_err),
    )
}

fn degeneracies() -> Outcome {
    let (n, k) = (6, 10);
    let zs = uniform(1, n * k).iter().map(|v| 4.0 * v).collect::<Vec<_>>();
    let zt = uniform(2, n * k).iter().map(|v| 4.0 * v).collect::<Vec<_>>();
    let labels: Vec<usize> = (0..n).map(|i| (7 * i) % k).collect();
    let mut worst_ce = 0.0f64;
    for tau in [1.0, 2.0, 5.0] {
        let cfg = DistillConfig::new(1.0, tau).unwrap();
        let (kd, _) = kd_loss_value(&zs, Some(&zt), k, &labels, &cfg).map_err(|e| e.to_string())?;
        let (ce, _) = cross_entropy_value(&zs, k, &labels).map_err(|e| e.to_string())?;
        worst_ce = worst_ce.max((kd - ce).abs());
        // Independent cross-entropy.
        let mut oracle = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = &zs[r * k..(r + 1) * k];
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            oracle += lse - row[y];
        }
        worst_ce = worst_ce.max((kd - oracle / n as f64).abs());
    }
    ensure!(worst_ce <= 1e-9, "lambda=1 differs from cross-entropy by {worst_ce:e}");

    let mut worst_self = 0.0f64;
    for tau in [1.0, 2.0, 5.0] {
        let cfg = DistillConfig::new(0.0, tau).unwrap();
        let mut tape = Tape::new();
        let s = tape.leaf(&Tensor::param(vec![n, k], to_f32(&zs)).unwrap());
        let t = Tensor::new(vec![n, k], to_f32(&zs)).unwrap();
        let l = kd_loss(&mut tape, s, Some(&t), &labels, &cfg).map_err(|e| e.to_string())?;
        worst_self = worst_self.max(tape.value(l).data()[0].abs() as f64);
    }
    ensure!(worst_self < 1e-7, "z_S = z_T gives loss {worst_self:e}");

    // The τ²-scaled gradient tends to (centered z_S − centered z_T) / K.
    let (s1, t1) = (to_f32(&zs[..k]), to_f32(&zt[..k]));
    let center = |z: &[f32]| {
        let m = z.iter().map(|&v| v as f64).sum::<f64>() / k as f64;
        z.iter().map(|&v| v as f64 - m).collect::<Vec<_>>()
    };
    let (cs, ct) = (center(&s1), center(&t1));
    let limit: Vec<f64> = (0..k).map(|j| (cs[j] - ct[j]) / k as f64).collect();
    let tau = 100.0;
    let mut tape = Tape::new();
    let s = tape.leaf(&Tensor::param(vec![1, k], s1).unwrap());
    let t = Tensor::new(vec![1, k], t1).unwrap();
    let l = kd_loss(&mut tape, s, Some(&t), &[0], &DistillConfig::new(0.0, tau).unwrap())
        .map_err(|e| e.to_string())?;
    tape.backward(l).map_err(|e| e.to_string())?;
    let g = to_f64(tape.grad(s).ok_or("no gradient")?);
    let err = rel_err(&g, &limit);
    ensure!(err < 0.05, "tau=100 gradient is {:.2}% from the limit", 100.0 * err);
    Ok(format!(
        "|KD(lambda=1)-CE| {worst_ce:.1e}; self-distill {worst_self:.1e}; tau=100 rel err {:.3}%",
        100.0 * err
    ))
}

fn augmentation() -> Outcome {
    let shape = vec![4, 1, 8, 50];
    let n = shape.iter().product();
    let data: Vec<f32> = uniform(3, n)
        .iter()
        .enumerate()
        .map(|(i, v)| (v * (1.0 + (i / 50) as f64 * 0.3) + (i / 400) as f64) as f32)
        .collect();
    let x = Tensor::new(shape.clone(), data).unwrap();
    let id: Vec<usize> = (0..4).collect();
    let perm = vec![2, 0, 3, 1];
    let a = apply_fms(&x, 1.0, &perm).map_err(|e| e.to_string())?;
    let b = apply_fms(&x, 0.37, &id).map_err(|e| e.to_string())?;
    let e_lambda = max_abs_diff(a.data(), x.data());
    let e_perm = max_abs_diff(b.data(), x.data());
    ensure!(e_lambda <= 1e-5, "lambda=1 changes input by {e_lambda:e}");
    ensure!(e_perm <= 1e-5, "identity permutation changes input by {e_perm:e}");

    let lambda = 0.3;
    let y = apply_fms(&x, lambda, &perm).map_err(|e| e.to_string())?;
    let stats = |t: &Tensor| -> Vec<(f64, f64)> {
        t.data()
            .chunks(50)
            .map(|r| {
                let m = r.iter().map(|&v| v as f64).sum::<f64>() / 50.0;
                let s = (r.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / 50.0).sqrt();
                (m, s)
            })
            .collect()
    };
    let (sx, sy) = (stats(&x), stats(&y));
    let mut e_stats = 0.0f64;
    for i in 0..4 {
        for f in 0..8 {
            let (m, s) = sx[i * 8 + f];
            let (mo, so) = sx[perm[i] * 8 + f];
            let (my, sy_) = sy[i * 8 + f];
            e_stats = e_stats
                .max((my - (lambda * m + (1.0 - lambda) * mo)).abs())
                .max((sy_ - (lambda * s + (1.0 - lambda) * so)).abs());
        }
    }
    ensure!(e_stats <= 1e-4, "mixed statistics off by {e_stats:e}");

    let signal = to_f32(&uniform(4, 4000).iter().map(|v| 0.5 * v).collect::<Vec<_>>());
    let mut e_dir = 0.0f32;
    for ir in synthetic_ir_bank(9) {
        let fast = fft_convolve(&signal, &ir);
        let slow = to_f32(&direct_convolve(&to_f64(&signal), &to_f64(&ir)));
        e_dir = e_dir.max(max_abs_diff(&fast, &slow));
    }
    ensure!(e_dir <= 1e-5, "FFT convolution differs from direct by {e_dir:e}");
    let mut e_delta = 0.0f32;
    for delta in [vec![1.0f32], vec![1.0, 0.0, 0.0, 0.0, 0.0]] {
        e_delta = e_delta.max(max_abs_diff(&fft_convolve(&signal, &delta), &signal));
    }
    ensure!(e_delta <= 1e-6, "delta impulse changes signal by {e_delta:e}");
    Ok(format!(
        "FMS identity {:.1e}/{:.1e}, stats {e_stats:.1e}; DIR {e_dir:.1e}, delta {e_delta:.1e}",
        e_lambda, e_perm
    ))
}

fn random_store(seed: u64, ids: &[String], k: usize) -> LogitStore {
    let mut s = LogitStore::new(k).unwrap();
    for (i, id) in ids.iter().enumerate() {
        s.insert(id.clone(), to_f32(&uniform(seed * 1000 + i as u64, k).iter().map(|v| 5.0 * v).collect::<Vec<_>>()))
            .unwrap();
    }
    s
}

fn ensemble() -> Outcome {
    let k = 10;
    let ids: Vec<String> = (0..25).map(|i| format!("clip{i:02}.wav")).collect();
    let stores: Vec<LogitStore> = (1..=4).map(|s| random_store(s, &ids, k)).collect();
    let ens = ensemble_logits(&stores).map_err(|e| e.to_string())?;
    let mut e_mean = 0.0f64;
    for id in &ids {
        let got = ens.get(id).ok_or("missing id")?;
        for j in 0..k {
            // Logits are stored as f32, so the oracle is rounded to f32 too.
            let brute = stores.iter().map(|s| s.get(id).unwrap()[j] as f64).sum::<f64>() / stores.len() as f64;
            e_mean = e_mean.max((got[j] as f64 - brute as f32 as f64).abs());
        }
    }
    ensure!(e_mean <= 1e-7, "ensemble differs from brute-force mean by {e_mean:e}");

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let mut shuffled = stores.clone();
        shuffled.shuffle(&mut rng);
        let other = ensemble_logits(&shuffled).map_err(|e| e.to_string())?;
        ensure!(other == ens, "ensemble depends on member order");
    }
    let single = &stores[0];
    let dup = ensemble_logits(&[single.clone(), single.clone(), single.clone()]).map_err(|e| e.to_string())?;
    let mut e_idem = 0.0f32;
    for (id, row) in single.iter() {
        e_idem = e_idem.max(max_abs_diff(dup.get(id).ok_or("missing id")?, row));
    }
    ensure!(e_idem <= 1e-7, "duplicated store changes logits by {e_idem:e}");
    Ok(format!("mean err {e_mean:.1e}; order-invariant over 10 shuffles; idempotent err {e_idem:.1e}"))
}

fn metrics() -> Outcome {
    let rec = |p: &str, scene: &str, dev: &str, split| ClipRecord {
        clip_path: p.into(),
        scene: scene.into(),
        device: dev.into(),
        split,
    };
    let records = vec![
        rec("t1.wav", SCENES[0], "a", Split::Train),
        rec("t2.wav", SCENES[1], "b", Split::Train),
        rec("v1.wav", SCENES[0], "a", Split::Val),
        rec("v2.wav", SCENES[1], "a", Split::Val),
        rec("v3.wav", SCENES[2], "b", Split::Val),
        rec("v4.wav", SCENES[3], "b", Split::Val),
        rec("v5.wav", SCENES[4], "s4", Split::Val),
        rec("v6.wav", SCENES[5], "s5", Split::Val),
    ];
    let m = Manifest::new(".", records.clone()).map_err(|e| e.to_string())?;
    let one_hot = |c: usize| (0..10).map(|j| if j == c { 1.0 } else { 0.0 }).collect::<Vec<f32>>();
    // v4 and v6 are predicted as the wrong class.
    let wrong: BTreeMap<&str, usize> = [("v4.wav", 9), ("v6.wav", 0)].into();
    let mut store = LogitStore::new(10).unwrap();
    let mut perfect = LogitStore::new(10).unwrap();
    for r in records.iter().filter(|r| r.split == Split::Val) {
        let pred = wrong.get(r.clip_path.as_str()).copied().unwrap_or(r.label());
        store.insert(r.clip_path.clone(), one_hot(pred)).unwrap();
        perfect.insert(r.clip_path.clone(), one_hot(r.label())).unwrap();
    }
    let rep = evaluate_store(&store, &m, Split::Val).map_err(|e| e.to_string())?;
    ensure!(rep.overall_acc == 4.0 / 6.0, "overall {}", rep.overall_acc);
    ensure!(rep.unseen_acc == Some(0.5), "unseen {:?}", rep.unseen_acc);
    let best = evaluate_store(&perfect, &m, Split::Val).map_err(|e| e.to_string())?;
    ensure!(best.overall_acc == 1.0 && best.unseen_acc == Some(1.0), "perfect store {best:?}");
    Ok(format!(
        "overall {:.4} unseen {:.4}; oracle {:.1}/{:.1}",
        rep.overall_acc,
        rep.unseen_acc.unwrap(),
        best.overall_acc,
        best.unseen_acc.unwrap()
    ))
}

fn last_k_accs(metrics_jsonl: &Path, k: usize) -> Result<Vec<f64>, String> {
    let text = fs::read_to_string(metrics_jsonl).map_err(|e| format!("{}: {e}", metrics_jsonl.display()))?;
    let accs: Vec<f64> = text
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).map_err(|e| e.to_string())?;
            v["report"]["overall_acc"].as_f64().ok_or_else(|| "no overall_acc".to_string())
        })
        .collect::<Result<_, _>>()?;
    ensure!(accs.len() >= k, "{} has {} epochs", metrics_jsonl.display(), accs.len());
    Ok(accs[accs.len() - k..].to_vec())
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = common::toy::write_dataset(dir.path(), &common::toy::toy_config(0));
    let spec = MatrixSpec::from_toml(&common::toy::matrix_toml(&manifest, 12, 20)).map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("run_a"), dir.path().join("run_b"));
    run_matrix(&spec, &a).map_err(|e| e.to_string())?;
    run_matrix(&spec, &b).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30 * 60), "two matrix runs took {elapsed:.0?}");

    let csv_a = fs::read(a.join("results.csv")).map_err(|e| e.to_string())?;
    let csv_b = fs::read(b.join("results.csv")).map_err(|e| e.to_string())?;
    ensure!(csv_a == csv_b, "results.csv differs between identical runs");

    let mut summaries = Vec::new();
    for group in ["teachers", "students"] {
        for entry in fs::read_dir(a.join(group)).map_err(|e| e.to_string())? {
            let p = entry.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                summaries.push(p);
            }
        }
    }
    summaries.sort();
    ensure!(summaries.len() == 4, "expected 3 teachers and 1 student, found {summaries:?}");
    let mut worst_ratio = 0.0f64;
    for d in &summaries {
        let s = TrainSummary::load(&d.join("summary.json")).map_err(|e| e.to_string())?;
        for r in &s.runs {
            let ratio = r.final_loss() / r.initial_loss();
            ensure!(
                ratio < 0.5,
                "{} run {}: loss {:.4} -> {:.4}",
                d.display(),
                r.run,
                r.initial_loss(),
                r.final_loss()
            );
            worst_ratio = worst_ratio.max(ratio);
        }
    }

    let mut stored = Vec::new();
    for seed in 0..3 {
        stored.extend(last_k_accs(&a.join(format!("teachers/cpr-small-DIRFMS-s{seed}/metrics.jsonl")), 4)?);
    }
    ensure!(stored.len() == 12, "{} stored evaluations", stored.len());
    let oracle = stored.iter().sum::<f64>() / 12.0;
    let results: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("results.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let teacher = results
        .as_array()
        .and_then(|rows| rows.iter().find(|r| r["kind"] == "teacher"))
        .ok_or("no teacher row")?;
    ensure!(teacher["evaluations"] == 12, "teacher row has {} evaluations", teacher["evaluations"]);
    let reported = teacher["val_acc"].as_f64().ok_or("no val_acc")?;
    let diff = (reported - oracle).abs();
    ensure!(diff <= 1e-9, "aggregate {reported} vs mean of stored evaluations {oracle}");
    Ok(format!(
        "bitwise identical results.csv; worst loss ratio {worst_ratio:.3}; aggregate {reported:.6} (diff {diff:.1e}); {elapsed:.1?}"
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("complexity ladder", ladder),
        ("student budget", student_budget),
        ("gradient suite", gradient_suite),
        ("distillation loss degeneracies", degeneracies),
        ("augmentation oracles", augmentation),
        ("ensemble oracle", ensemble),
        ("metrics oracle", metrics),
        ("end-to-end determinism and learning", end_to_end),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .map(String::as_str)
                .or(p.downcast_ref::<&str>().copied())
                .unwrap_or("unknown panic");
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                println!("criterion {}: FAIL {name}: {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    if !failed.is_empty() {
        println!("failing criteria: {failed:?}");
        std::process::exit(1);
    }
}
