//! Subcommand implementations. Each returns a JSON summary for stdout.

use std::path::{Path, PathBuf};
use std::time::Instant;

use metaldc::adapt::{fast_adapt, AdaptConfig, AdaptVariant};
use metaldc::data::{DatasetKind, Episode};
use metaldc::experiment::{
    evaluate_hdc, evaluate_ldc, mean_std, summarize, train_hdc, train_ldc, Benchmark, Method, ResultRow, Trainer,
};
use metaldc::fault::{robustness_sweep, Target};
use metaldc::hdc::{HdcModel, HDC_MAGIC};
use metaldc::ldc::{BakedModel, LdcModel, SizeReport, LDC_MAGIC};
use metaldc::meta::MetaConfig;
use metaldc::numerics::derive_seed;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{dataset_name, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::report::{self, write_bytes, write_csv, write_json};
use crate::svg::{line_chart, Series};

/// A trained LDC model with the run it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub config_hash: String,
    pub dataset: DatasetKind,
    pub trainer: String,
    pub seed: u64,
    pub model: LdcModel<f32>,
}

pub fn trainer_name(t: Trainer) -> &'static str {
    match t {
        Trainer::Meta => "meta",
        Trainer::Supervised => "supervised",
        Trainer::Hdc => "hdc",
    }
}

fn representative(t: Trainer) -> Method {
    match t {
        Trainer::Meta => Method::Metaldc,
        Trainer::Supervised => Method::PretrainedLdc,
        Trainer::Hdc => Method::HdcRetrain,
    }
}

pub fn checkpoint_path(dir: &Path, t: Trainer, seed: u64) -> PathBuf {
    dir.join(format!("{}-seed{seed}.json", trainer_name(t)))
}

pub fn baked_path(dir: &Path, t: Trainer, seed: u64) -> PathBuf {
    dir.join(format!("{}-seed{seed}.ldc", trainer_name(t)))
}

pub fn hdc_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("hdc-seed{seed}.hdc"))
}

/// LDC trainers needed by the configured methods, in a fixed order.
fn ldc_trainers(methods: &[Method]) -> Vec<Trainer> {
    [Trainer::Meta, Trainer::Supervised]
        .into_iter()
        .filter(|t| methods.iter().any(|m| m.trainer() == *t))
        .collect()
}

pub fn load_benchmark(cfg: &ExperimentConfig) -> Result<Benchmark> {
    Ok(Benchmark::load(cfg.dataset, &cfg.data, cfg.tasks.clone())?)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn check_shape(bench: &Benchmark, n: usize, c: usize, what: &str) -> Result<()> {
    let (want_n, want_c) = (bench.train.n_features(), bench.ways());
    if n != want_n || c != want_c {
        return Err(CliError::Compat(format!(
            "{what} has {n} features and {c} classes, the {} benchmark needs {want_n} and {want_c}",
            dataset_name(bench.kind)
        )));
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path, bench: &Benchmark) -> Result<Checkpoint> {
    let bytes = read(path)?;
    let ck: Checkpoint = serde_json::from_slice(&bytes)?;
    ck.model.validate()?;
    check_shape(bench, ck.model.n_features(), ck.model.n_classes(), &path.display().to_string())?;
    Ok(ck)
}

fn load_hdc(path: &Path, bench: &Benchmark) -> Result<HdcModel> {
    let model = HdcModel::from_bytes(&read(path)?)?;
    check_shape(bench, model.n_features(), model.n_classes(), &path.display().to_string())?;
    Ok(model)
}

/// Trains every LDC trainer the methods need, for every seed.
pub fn meta_train(cfg: &ExperimentConfig) -> Result<Value> {
    let bench = load_benchmark(cfg)?;
    let hash = cfg.hash();
    report::ensure_dir(&cfg.out_dir)?;
    let trainers = ldc_trainers(&cfg.methods);
    if trainers.is_empty() {
        return Err(CliError::Usage("no LDC method configured; use hdc-train for hdc-retrain".into()));
    }
    let mut trace = Vec::new();
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        for &t in &trainers {
            let rep = train_ldc(&bench, representative(t), cfg.ldc, &cfg.meta, seed)?;
            let ck = Checkpoint {
                config_hash: hash.clone(),
                dataset: cfg.dataset,
                trainer: trainer_name(t).into(),
                seed,
                model: rep.model,
            };
            write_json(&checkpoint_path(&cfg.out_dir, t, seed), &ck)?;
            write_bytes(&baked_path(&cfg.out_dir, t, seed), &ck.model.bake().to_bytes())?;
            for r in &rep.trace {
                trace.push((trainer_name(t), seed, r.clone()));
            }
            runs.push(json!({
                "trainer": trainer_name(t),
                "seed": seed,
                "outer_steps": rep.trace.len(),
                "final_outer_loss": rep.trace.last().map(|r| r.mean_outer_loss),
                "wall_time_secs": rep.wall_time_secs,
            }));
        }
    }
    let rows: Vec<_> = trace
        .iter()
        .map(|(t, seed, r)| report::TraceRow {
            config_hash: &hash,
            trainer: t,
            seed: *seed,
            outer_step: r.outer_step,
            mean_inner_loss: r.mean_inner_loss,
            mean_outer_loss: r.mean_outer_loss,
        })
        .collect();
    write_csv(&cfg.out_dir.join("trace.csv"), &rows)?;
    Ok(json!({ "command": "meta-train", "config_hash": hash, "out_dir": cfg.out_dir, "runs": runs }))
}

pub fn hdc_train(cfg: &ExperimentConfig) -> Result<Value> {
    let bench = load_benchmark(cfg)?;
    let hash = cfg.hash();
    report::ensure_dir(&cfg.out_dir)?;
    let mut rows_data = Vec::new();
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let start = Instant::now();
        let (model, rep) = train_hdc(&bench, &cfg.hdc, seed)?;
        write_bytes(&hdc_path(&cfg.out_dir, seed), &model.to_bytes())?;
        for (e, &a) in rep.epoch_accuracy.iter().enumerate() {
            rows_data.push((seed, e, a));
        }
        runs.push(json!({
            "seed": seed,
            "retrain_updates": rep.updates,
            "final_train_accuracy": rep.epoch_accuracy.last(),
            "wall_time_secs": start.elapsed().as_secs_f64(),
        }));
    }
    let rows: Vec<_> = rows_data
        .iter()
        .map(|&(seed, epoch, train_accuracy)| report::HdcTraceRow {
            config_hash: &hash,
            seed,
            epoch,
            train_accuracy,
        })
        .collect();
    write_csv(&cfg.out_dir.join("hdc_trace.csv"), &rows)?;
    Ok(json!({ "command": "hdc-train", "config_hash": hash, "out_dir": cfg.out_dir, "runs": runs }))
}

/// Models and their deployed, possibly adapted, forms for one seed.
struct SeedEval {
    rows: Vec<ResultRow>,
    ldc: Vec<(Method, Vec<BakedModel>)>,
    hdc: Option<Vec<HdcModel>>,
}

fn evaluate_seed(cfg: &ExperimentConfig, bench: &Benchmark, episodes: &[Episode], seed: u64) -> Result<SeedEval> {
    let mut out = SeedEval {
        rows: Vec::new(),
        ldc: Vec::new(),
        hdc: None,
    };
    for &method in &cfg.methods {
        match method.trainer() {
            Trainer::Hdc => {
                let model = load_hdc(&hdc_path(&cfg.out_dir, seed), bench)?;
                let (rows, deployed) = evaluate_hdc(&model, bench, episodes, &cfg.hdc, cfg.adapt.shots, seed)?;
                out.rows.extend(rows);
                out.hdc = Some(deployed);
            }
            t => {
                let ck = load_checkpoint(&checkpoint_path(&cfg.out_dir, t, seed), bench)?;
                let (rows, adapted) = evaluate_ldc(&ck.model, method, episodes, &cfg.adapt, cfg.meta.shots, seed)?;
                out.rows.extend(rows);
                out.ldc.push((method, adapted.into_iter().map(|r| r.baked).collect()));
            }
        }
    }
    Ok(out)
}

fn mean_by_x(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs.into_iter()
        .map(|x| {
            let ys: Vec<f64> = points.iter().filter(|p| p.0 == x).map(|p| p.1).collect();
            (x, mean_std(&ys).0)
        })
        .collect()
}

pub fn evaluate(cfg: &ExperimentConfig) -> Result<Value> {
    let bench = load_benchmark(cfg)?;
    let hash = cfg.hash();
    report::ensure_dir(&cfg.out_dir)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let episodes = bench.episodes(cfg.adapt.shots, seed)?;
        rows.extend(evaluate_seed(cfg, &bench, &episodes, seed)?.rows);
    }
    let summary = summarize(&rows);
    let csv_rows: Vec<_> = rows
        .iter()
        .map(|r| report::ResultCsvRow {
            config_hash: &hash,
            method: r.method.name(),
            task_index: r.task_index,
            task: &r.task,
            k: r.k,
            m: r.m,
            seed: r.seed,
            accuracy: r.accuracy,
        })
        .collect();
    write_csv(&cfg.out_dir.join("results.csv"), &csv_rows)?;
    let timing: Vec<_> = rows
        .iter()
        .map(|r| report::TimingRow {
            config_hash: &hash,
            method: r.method.name(),
            task_index: r.task_index,
            seed: r.seed,
            adapt_time_secs: r.adapt_time_secs,
        })
        .collect();
    write_csv(&cfg.out_dir.join("timing.csv"), &timing)?;
    let summary_rows: Vec<_> = summary
        .iter()
        .map(|s| report::SummaryRow {
            config_hash: &hash,
            method: s.method.name(),
            task_index: s.task_index,
            task: &s.task,
            mean_accuracy: s.mean,
            std_accuracy: s.std,
            runs: s.runs,
        })
        .collect();
    write_csv(&cfg.out_dir.join("summary.csv"), &summary_rows)?;
    let series: Vec<Series> = cfg
        .methods
        .iter()
        .map(|&m| Series {
            name: m.name().into(),
            points: summary.iter().filter(|s| s.method == m).map(|s| ((s.task_index + 1) as f64, s.mean)).collect(),
        })
        .collect();
    let title = format!("{} query accuracy per task", dataset_name(cfg.dataset));
    write_bytes(&cfg.out_dir.join("evaluate.svg"), line_chart(&title, "task", "accuracy", &series).as_bytes())?;
    let stable: Vec<_> = rows.iter().map(|r| ResultRow { adapt_time_secs: 0.0, ..r.clone() }).collect();
    write_json(&cfg.out_dir.join("results.json"), &json!({ "config_hash": hash, "rows": stable, "summary": summary }))?;
    let means: serde_json::Map<String, Value> = cfg
        .methods
        .iter()
        .filter_map(|&m| metaldc::experiment::method_mean(&rows, m).map(|v| (m.name().to_string(), json!(v))))
        .collect();
    Ok(json!({ "command": "evaluate", "config_hash": hash, "synthetic_data": bench.synthetic, "mean_accuracy": means }))
}

/// Adapts one checkpoint to one evaluation task and saves the deployed model.
pub fn adapt(cfg: &ExperimentConfig, model: &Path, task: usize, variant: AdaptVariant) -> Result<Value> {
    let bench = load_benchmark(cfg)?;
    let ck = load_checkpoint(model, &bench)?;
    report::ensure_dir(&cfg.out_dir)?;
    let seed = cfg.seeds[0];
    let episodes = bench.episodes(cfg.adapt.shots, seed)?;
    let ep = episodes.get(task).ok_or_else(|| {
        CliError::Usage(format!("task {task} out of range; the benchmark has {} evaluation tasks", episodes.len()))
    })?;
    let acfg = AdaptConfig { variant, ..cfg.adapt };
    let r = fast_adapt(&ck.model, ep, &acfg)?;
    let stem = model.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let out = cfg.out_dir.join(format!("{stem}-task{task}-adapted.ldc"));
    write_bytes(&out, &r.baked.to_bytes())?;
    Ok(json!({
        "command": "adapt",
        "task": ep.task.label(),
        "variant": variant,
        "seed": seed,
        "query_accuracy": r.query_accuracy,
        "support_accuracy": r.support_accuracy,
        "support_encodings": r.support_encodings,
        "deployable": r.deployable,
        "wall_time_secs": r.wall_time_secs,
        "model": out,
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sweep {
    K,
    M,
}

impl Sweep {
    fn name(self) -> &'static str {
        match self {
            Sweep::K => "k",
            Sweep::M => "m",
        }
    }
}

/// A checkpoint from `meta-train` if it matches the config, else a fresh run.
fn trained_model(cfg: &ExperimentConfig, bench: &Benchmark, meta: &MetaConfig, t: Trainer, seed: u64) -> Result<LdcModel<f32>> {
    if *meta == cfg.meta {
        let path = checkpoint_path(&cfg.out_dir, t, seed);
        if path.exists() {
            let ck = load_checkpoint(&path, bench)?;
            if ck.config_hash == cfg.hash() {
                return Ok(ck.model);
            }
        }
    }
    Ok(train_ldc(bench, representative(t), cfg.ldc, meta, seed)?.model)
}

/// K sweeps retrain for every grid point; M sweeps reuse one model per seed.
/// Both score the first evaluation task.
pub fn ablate(cfg: &ExperimentConfig, sweep: Sweep) -> Result<Value> {
    let bench = load_benchmark(cfg)?;
    let hash = cfg.hash();
    report::ensure_dir(&cfg.out_dir)?;
    let methods = cfg.ldc_methods();
    if methods.is_empty() {
        return Err(CliError::Usage("ablation needs at least one LDC method".into()));
    }
    let grid = match sweep {
        Sweep::K => &cfg.ablation.k_grid,
        Sweep::M => &cfg.ablation.m_grid,
    };
    if grid.is_empty() || grid.contains(&0) {
        return Err(CliError::Config {
            path: format!("ablation.{}_grid", sweep.name()),
            message: "grid must be nonempty and positive".into(),
        });
    }
    let mut cells = Vec::new();
    for &seed in &cfg.seeds {
        let mut fixed = Vec::new();
        if sweep == Sweep::M {
            for t in ldc_trainers(&methods) {
                fixed.push((t, trained_model(cfg, &bench, &cfg.meta, t, seed)?));
            }
        }
        for &v in grid {
            let (k, m) = match sweep {
                Sweep::K => (v, cfg.adapt.shots),
                Sweep::M => (cfg.meta.shots, v),
            };
            let mut models = Vec::new();
            if sweep == Sweep::K {
                let meta = MetaConfig { shots: k, ..cfg.meta.clone() };
                for t in ldc_trainers(&methods) {
                    models.push((t, trained_model(cfg, &bench, &meta, t, seed)?));
                }
            }
            let models = if sweep == Sweep::K { &models } else { &fixed };
            let episodes = bench.episodes(m, seed)?;
            let first = &episodes[..1];
            let acfg = AdaptConfig { shots: m, ..cfg.adapt };
            for &method in &methods {
                let model = &models.iter().find(|(t, _)| *t == method.trainer()).expect("trainer trained").1;
                let (rows, _) = evaluate_ldc(model, method, first, &acfg, k, seed)?;
                cells.push((v, method, seed, rows[0].accuracy));
            }
        }
    }
    let rows: Vec<_> = cells
        .iter()
        .map(|&(value, method, seed, accuracy)| report::AblationRow {
            config_hash: &hash,
            sweep: sweep.name(),
            value,
            method: method.name(),
            seed,
            accuracy,
        })
        .collect();
    let name = sweep.name();
    write_csv(&cfg.out_dir.join(format!("ablate-{name}.csv")), &rows)?;
    let series: Vec<Series> = methods
        .iter()
        .map(|&m| Series {
            name: m.name().into(),
            points: mean_by_x(&cells.iter().filter(|c| c.1 == m).map(|c| (c.0 as f64, c.3)).collect::<Vec<_>>()),
        })
        .collect();
    let title = format!("{} accuracy vs {}", dataset_name(cfg.dataset), name.to_uppercase());
    write_bytes(
        &cfg.out_dir.join(format!("ablate-{name}.svg")),
        line_chart(&title, &name.to_uppercase(), "accuracy", &series).as_bytes(),
    )?;
    let curves: serde_json::Map<String, Value> =
        series.iter().map(|s| (s.name.clone(), json!(s.points))).collect();
    Ok(json!({ "command": "ablate", "sweep": name, "config_hash": hash, "curves": curves }))
}

/// Bit-error sweep over the deployed model of every method. Trials use the
/// same corruption seeds for every method of a run seed.
pub fn robustness(cfg: &ExperimentConfig) -> Result<Value> {
    let bench = load_benchmark(cfg)?;
    let hash = cfg.hash();
    report::ensure_dir(&cfg.out_dir)?;
    let mut cells = Vec::new();
    for &seed in &cfg.seeds {
        let episodes = bench.episodes(cfg.adapt.shots, seed)?;
        let eval = evaluate_seed(cfg, &bench, &episodes, seed)?;
        let fault = metaldc::fault::FaultConfig {
            seed: derive_seed(cfg.fault.seed, seed),
            ..cfg.fault.clone()
        };
        for (method, baked) in &eval.ldc {
            let targets: Vec<_> = baked.iter().zip(&episodes).map(|(m, e)| Target { model: m, query: &e.query }).collect();
            for row in robustness_sweep(&targets, &fault)? {
                cells.push((*method, seed, row));
            }
        }
        if let Some(hdc) = &eval.hdc {
            let targets: Vec<_> = hdc.iter().zip(&episodes).map(|(m, e)| Target { model: m, query: &e.query }).collect();
            for row in robustness_sweep(&targets, &fault)? {
                cells.push((Method::HdcRetrain, seed, row));
            }
        }
    }
    let rows: Vec<_> = cells
        .iter()
        .map(|(method, seed, r)| report::RobustnessRow {
            config_hash: &hash,
            model_variant: method.name(),
            seed: *seed,
            p: r.p,
            mean_acc: r.mean_accuracy,
            std_acc: r.std_accuracy,
            trials: r.trials,
        })
        .collect();
    write_csv(&cfg.out_dir.join("robustness.csv"), &rows)?;
    let series: Vec<Series> = cfg
        .methods
        .iter()
        .map(|&m| Series {
            name: m.name().into(),
            points: mean_by_x(&cells.iter().filter(|c| c.0 == m).map(|c| (c.2.p, c.2.mean_accuracy)).collect::<Vec<_>>()),
        })
        .collect();
    let title = format!("{} accuracy under bit errors", dataset_name(cfg.dataset));
    write_bytes(&cfg.out_dir.join("robustness.svg"), line_chart(&title, "flip probability", "accuracy", &series).as_bytes())?;
    let curves: serde_json::Map<String, Value> =
        series.iter().map(|s| (s.name.clone(), json!(s.points))).collect();
    Ok(json!({ "command": "robustness", "config_hash": hash, "curves": curves }))
}

/// Size breakdown of a serialized `LDC1` or `HDC1` file.
pub fn model_size(path: &Path) -> Result<Value> {
    let bytes = read(path)?;
    let (format, shape, rep): (&str, [usize; 4], SizeReport) = match bytes.get(..4) {
        Some(m) if m == LDC_MAGIC => {
            let b = BakedModel::from_bytes(&bytes)?;
            ("LDC1", [b.n_features(), b.dim(), b.n_classes(), b.levels()], b.size_report())
        }
        Some(m) if m == HDC_MAGIC => {
            let h = HdcModel::from_bytes(&bytes)?;
            ("HDC1", [h.n_features(), h.dim(), h.n_classes(), h.levels()], h.size_report())
        }
        _ => return Err(metaldc::Error::Format(format!("{}: not an LDC1 or HDC1 file", path.display())).into()),
    };
    let kb = |b: usize| json!({ "kb_1000": b as f64 / 1000.0, "kib_1024": b as f64 / 1024.0 });
    Ok(json!({
        "command": "model size",
        "file": path,
        "format": format,
        "n_features": shape[0],
        "dim": shape[1],
        "classes": shape[2],
        "levels": shape[3],
        "file_bytes": rep.file_bytes(),
        "header_bytes": rep.header_bytes,
        "lut_bytes": rep.lut_bytes,
        "feature_bytes": rep.feature_bytes,
        "class_bytes": rep.class_bytes,
        "payload_bytes": rep.payload_bytes(),
        "feature_class_bytes": rep.feature_class_bytes(),
        "payload_kb": kb(rep.payload_bytes()),
        "feature_class_kb": kb(rep.feature_class_bytes()),
    }))
}
