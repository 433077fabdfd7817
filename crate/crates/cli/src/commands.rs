use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Serialize};

use bika::datasets::{load_cifar_dir, load_mnist_dir, split_train_val, Dataset};
use bika::eval::evaluate_model;
use bika::model::format::{encode, load_model, sidecar_json, sidecar_path};
use bika::model::{ArchName, Architecture};
use bika::sim::compare::{compare_engines_on, random_input};
use bika::sim::{parse_array, simulate_model, ArrayConfig, PeKind, Workload, WorkloadSpec};
use bika::threshold_math::{
    decompose as decompose_fn, mixed_max_abs_error, quantize_mix, PiecewiseConstantFn,
};
use bika::trainer::{self, evaluate_shadow, verify_export, ShadowModel, TrainConfig};
use bika::{Exec, IntTensor};

use crate::config::{parse_lr, FileConfig};
use crate::exit::{self, CliError};
use crate::manifest::ManifestBuilder;
use crate::Common;

const DEFAULT_OUT: &str = "out";

fn out_dir(flag: &Option<PathBuf>, file: &FileConfig) -> PathBuf {
    flag.clone()
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

/// A preset name or the path of an architecture JSON file.
fn resolve_arch(s: &str) -> Result<Architecture, CliError> {
    let p = Path::new(s);
    if p.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(p)
            .map_err(|e| CliError::config(format!("cannot read {s}: {e}")))?;
        let arch: Architecture = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid architecture {s}: {e}")))?;
        arch.validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        return Ok(arch);
    }
    let name = ArchName::from_str(s).map_err(|e| CliError::config(e.to_string()))?;
    Architecture::preset(name).map_err(|e| CliError::config(e.to_string()))
}

struct Data {
    train: Dataset,
    test: Dataset,
    dir: PathBuf,
}

fn load_data(mnist: Option<&PathBuf>, cifar: Option<&PathBuf>) -> Result<Data, CliError> {
    let (dir, loaded) = match (mnist, cifar) {
        (Some(_), Some(_)) => {
            return Err(CliError::config("give either --mnist or --cifar, not both"))
        }
        (Some(d), None) => (d, load_mnist_dir(d)),
        (None, Some(d)) => (d, load_cifar_dir(d)),
        (None, None) => {
            return Err(CliError::config(
                "a dataset directory is required (--mnist or --cifar)",
            ))
        }
    };
    if !dir.is_dir() {
        return Err(CliError::data(format!(
            "dataset directory {} does not exist",
            dir.display()
        )));
    }
    let (train, test) = loaded.map_err(|e| CliError::data(e.to_string()))?;
    Ok(Data {
        train,
        test,
        dir: dir.clone(),
    })
}

fn check_input(arch: &Architecture, d: &Dataset) -> Result<(), CliError> {
    if arch.input.accepts(&d.image_shape()) {
        Ok(())
    } else {
        Err(CliError::config(format!(
            "architecture {} expects input {:?}, dataset images are {:?}",
            arch.name,
            arch.input.shape,
            d.image_shape()
        )))
    }
}

fn exec_for(sequential: bool) -> Exec {
    if sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Preset (tfc, sfc, lfc, cnv) or architecture JSON file [default: tfc]
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    mnist: Option<PathBuf>,
    #[arg(long)]
    cifar: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// One learning rate per third of the run, e.g. 1e-3,5e-4,1e-4
    #[arg(long, value_parser = parse_lr)]
    lr: Option<[f64; 3]>,
    #[arg(long)]
    seed: Option<u64>,
    /// Disable the 8-bit accumulator clamp
    #[arg(long)]
    no_saturate: bool,
    /// Softmax temperature on final sums
    #[arg(long)]
    temperature: Option<f64>,
    /// Share of the training split held out for validation [default: 1/6 for MNIST, 0.1 for CIFAR-10]
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Train on only the first N training samples
    #[arg(long)]
    train_limit: Option<usize>,
    /// Single-threaded execution
    #[arg(long)]
    sequential: bool,
    #[command(flatten)]
    common: Common,
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let file = FileConfig::load_opt(a.common.config.as_deref())?;
    let defaults = TrainConfig::default();
    let arch_s = a
        .arch
        .clone()
        .or(file.arch.clone())
        .unwrap_or_else(|| "tfc".into());
    let arch = resolve_arch(&arch_s)?;
    let mnist = a.mnist.clone().or(file.mnist.clone());
    let cifar = a.cifar.clone().or(file.cifar.clone());
    let saturate = if a.no_saturate {
        false
    } else {
        file.saturate.unwrap_or(true)
    };
    let sequential = a.sequential || file.sequential.unwrap_or(false);
    // 10000 of 60000 MNIST images, 5000 of 50000 CIFAR-10 images
    let default_val = if cifar.is_some() && mnist.is_none() {
        0.1
    } else {
        1.0 / 6.0
    };
    let val_fraction = a.val_fraction.or(file.val_fraction).unwrap_or(default_val);
    let train_limit = a.train_limit.or(file.train_limit);
    let cfg = TrainConfig {
        epochs: a.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        batch_size: a.batch.or(file.batch).unwrap_or(defaults.batch_size),
        learning_rates: a.lr.or(file.lr).unwrap_or(defaults.learning_rates),
        seed: a.seed.or(file.seed).unwrap_or(defaults.seed),
        saturate_in_training: saturate,
        temperature: a
            .temperature
            .or(file.temperature)
            .unwrap_or(defaults.temperature),
        ..defaults
    };
    cfg.validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(CliError::config(format!(
            "validation fraction must be in [0, 1), got {val_fraction}"
        )));
    }
    let out = out_dir(&a.common.out, &file);
    let resolved = FileConfig {
        arch: Some(arch_s.clone()),
        mnist: mnist.clone(),
        cifar: cifar.clone(),
        out: Some(out.clone()),
        epochs: Some(cfg.epochs),
        batch: Some(cfg.batch_size),
        lr: Some(cfg.learning_rates),
        seed: Some(cfg.seed),
        saturate: Some(saturate),
        temperature: Some(cfg.temperature),
        val_fraction: Some(val_fraction),
        train_limit,
        sequential: Some(sequential),
        ..Default::default()
    };
    let mut manifest = ManifestBuilder::start("train", resolved, Some(cfg.seed));

    let data = load_data(mnist.as_ref(), cifar.as_ref())?;
    check_input(&arch, &data.train)?;
    manifest.input(&data.dir)?;
    if Path::new(&arch_s).is_file() {
        manifest.input(Path::new(&arch_s))?;
    }
    let (mut train_set, val_set) = if val_fraction > 0.0 {
        let (t, v) = split_train_val(&data.train, val_fraction, cfg.seed)
            .map_err(|e| CliError::data(e.to_string()))?;
        (t, Some(v))
    } else {
        (data.train.clone(), None)
    };
    if let Some(n) = train_limit {
        train_set = train_set.take(n);
    }

    let exec = exec_for(sequential);
    let (shadow, mut report) =
        trainer::train_with_progress(&arch, &train_set, val_set.as_ref(), &cfg, exec, |e| {
            let val = e
                .val_accuracy
                .map(|v| format!(" val_acc {v:.4}"))
                .unwrap_or_default();
            eprintln!(
                "epoch {:>3}  lr {:.0e}  loss {:.4}  train_acc {:.4}{val}  ({:.1}s)",
                e.epoch, e.learning_rate, e.train_loss, e.train_accuracy, e.wall_seconds
            );
        })
        .map_err(|e| match e {
            bika::Error::Diverged { .. } => CliError::new(exit::DIVERGED, e.to_string()),
            other => CliError::from_core(other),
        })?;
    let test_acc = evaluate_shadow(&shadow, &data.test, exec)?;
    report.final_test_accuracy = Some(test_acc);

    manifest.output(&out.join("shadow.json"), to_json(&shadow))?;
    manifest.output(&out.join("train_report.json"), report.to_json() + "\n")?;
    manifest.output(&out.join("train_report.csv"), report.to_csv())?;
    manifest.finish(&out)?;
    println!("test accuracy: {test_acc:.4}");
    println!("checkpoint: {}", out.join("shadow.json").display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Shadow checkpoint written by `train`
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Serialize)]
struct ExportSummary {
    model: String,
    sidecar: String,
    #[serde(flatten)]
    equivalence: trainer::EquivalenceSummary,
    passed: bool,
}

pub fn export(a: ExportArgs) -> Result<(), CliError> {
    let file = FileConfig::load_opt(a.common.config.as_deref())?;
    let ckpt = a
        .checkpoint
        .clone()
        .or(file.checkpoint.clone())
        .ok_or_else(|| CliError::config("--checkpoint is required"))?;
    let out = out_dir(&a.common.out, &file);
    let resolved = FileConfig {
        checkpoint: Some(ckpt.clone()),
        out: Some(out.clone()),
        ..Default::default()
    };
    let mut manifest = ManifestBuilder::start("export", resolved, None);
    manifest
        .input(&ckpt)
        .map_err(|e| e.with_code(exit::MALFORMED_MODEL))?;

    let text = std::fs::read_to_string(&ckpt).map_err(|e| {
        CliError::new(
            exit::MALFORMED_MODEL,
            format!("cannot read {}: {e}", ckpt.display()),
        )
    })?;
    let shadow: ShadowModel = serde_json::from_str(&text).map_err(|e| {
        CliError::new(
            exit::MALFORMED_MODEL,
            format!("invalid checkpoint {}: {e}", ckpt.display()),
        )
    })?;
    let shadow = ShadowModel::from_layers(shadow.arch, shadow.layers, shadow.saturate)
        .map_err(|e| CliError::new(exit::MALFORMED_MODEL, e.to_string()))?;
    let model = trainer::export(&shadow).map_err(|e| match e {
        bika::Error::NonFinite { .. } => {
            println!("equivalence: FAIL ({e})");
            CliError::new(exit::EQUIVALENCE, e.to_string())
        }
        other => CliError::from_core(other),
    })?;

    let (lo, hi) = verification_range(&shadow);
    let summary = verify_export(&shadow, &model, lo, hi);
    if !summary.passed() {
        println!(
            "equivalence: FAIL ({} of {} connections)",
            summary.mismatches, summary.connections
        );
        return Err(CliError::new(
            exit::EQUIVALENCE,
            "exported thresholds disagree with the shadow model",
        ));
    }

    let model_path = out.join("model.bika");
    manifest.output(&model_path, encode(&model)?)?;
    let sidecar = sidecar_path(&model_path);
    manifest.output(&sidecar, sidecar_json(&model)?)?;
    let report = ExportSummary {
        model: model_path.display().to_string(),
        sidecar: sidecar.display().to_string(),
        equivalence: summary.clone(),
        passed: true,
    };
    manifest.output(&out.join("export.json"), to_json(&report))?;
    manifest.finish(&out)?;
    println!("equivalence: PASS ({} connections)", summary.connections);
    println!("model: {}", model_path.display());
    Ok(())
}

/// Every activation a connection can see: pixels and clamped sums fit in
/// `[-256, 255]`; without the clamp sums reach the largest fan-in.
fn verification_range(shadow: &ShadowModel) -> (i32, i32) {
    let mut span = 256i32;
    if !shadow.saturate {
        let widest = shadow
            .threshold_layers()
            .map(|t| t.kind.fan_in())
            .max()
            .unwrap_or(0) as i32;
        span = span.max(widest);
    }
    (-span, span - 1)
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model file written by `export`
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    mnist: Option<PathBuf>,
    #[arg(long)]
    cifar: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Serialize)]
struct EvalReport {
    model: String,
    arch: String,
    samples: usize,
    correct: usize,
    accuracy: f64,
    ops: bika::model::OpCounter,
}

fn load_model_file(path: &Path) -> Result<bika::BikaModel, CliError> {
    load_model(path)
        .map_err(|e| CliError::new(exit::MALFORMED_MODEL, format!("{}: {e}", path.display())))
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let file = FileConfig::load_opt(a.common.config.as_deref())?;
    let model_path = a
        .model
        .clone()
        .or(file.model.clone())
        .ok_or_else(|| CliError::config("--model is required"))?;
    let mnist = a.mnist.clone().or(file.mnist.clone());
    let cifar = a.cifar.clone().or(file.cifar.clone());
    let sequential = a.sequential || file.sequential.unwrap_or(false);
    let out = out_dir(&a.common.out, &file);
    let resolved = FileConfig {
        model: Some(model_path.clone()),
        mnist: mnist.clone(),
        cifar: cifar.clone(),
        sequential: Some(sequential),
        out: Some(out.clone()),
        ..Default::default()
    };
    let mut manifest = ManifestBuilder::start("eval", resolved, None);
    let model = load_model_file(&model_path)?;
    manifest.input(&model_path)?;
    let data = load_data(mnist.as_ref(), cifar.as_ref())?;
    manifest.input(&data.dir)?;
    check_input(&model.architecture(), &data.test)?;
    let r = evaluate_model(&model, &data.test, exec_for(sequential))?;
    let report = EvalReport {
        model: model_path.display().to_string(),
        arch: model.arch_name().to_string(),
        samples: r.samples,
        correct: r.correct,
        accuracy: r.accuracy,
        ops: r.ops,
    };
    manifest.output(&out.join("eval.json"), to_json(&report))?;
    let csv = format!(
        "samples,correct,accuracy,comparisons,additions,multiplications\n{},{},{},{},{},{}\n",
        r.samples, r.correct, r.accuracy, r.ops.comparisons, r.ops.additions, r.ops.multiplications
    );
    manifest.output(&out.join("eval.csv"), csv)?;
    manifest.finish(&out)?;
    println!("accuracy: {:.4}", r.accuracy);
    Ok(())
}

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    /// JSON file with `boundaries` and `outputs`
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FunctionFile {
    boundaries: Vec<f64>,
    outputs: Vec<f64>,
}

#[derive(Serialize)]
struct DecomposeOutput {
    alphas: Vec<f64>,
    thresholds: Vec<f64>,
    /// Unit thresholds after integer quantization; 0 when every weight rounds
    /// to zero.
    m: usize,
    /// Worst deviation of the quantized form from the function.
    max_abs_error: f64,
}

pub fn decompose(a: DecomposeArgs) -> Result<(), CliError> {
    let file = FileConfig::load_opt(a.common.config.as_deref())?;
    let input = a
        .input
        .clone()
        .or(file.input.clone())
        .ok_or_else(|| CliError::config("--in is required"))?;
    let out = out_dir(&a.common.out, &file);
    let resolved = FileConfig {
        input: Some(input.clone()),
        out: Some(out.clone()),
        ..Default::default()
    };
    let mut manifest = ManifestBuilder::start("decompose", resolved, None);
    manifest.input(&input)?;
    let text = std::fs::read_to_string(&input)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", input.display())))?;
    let ff: FunctionFile = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("invalid function {}: {e}", input.display())))?;
    let f = PiecewiseConstantFn::new(ff.boundaries, ff.outputs)
        .map_err(|e| CliError::config(e.to_string()))?;
    let set = decompose_fn(&f);
    let mixed = match quantize_mix(&set) {
        Ok(m) => Some(m),
        Err(bika::Error::EmptyMix) => None,
        Err(e) => return Err(e.into()),
    };
    let result = DecomposeOutput {
        alphas: set.alphas(),
        thresholds: set.thresholds(),
        m: mixed.as_ref().map_or(0, |m| m.m()),
        max_abs_error: mixed_max_abs_error(&f, mixed.as_ref()),
    };
    let json = to_json(&result);
    manifest.output(&out.join("decompose.json"), &json)?;
    manifest.finish(&out)?;
    print!("{json}");
    Ok(())
}

#[derive(Args, Debug)]
pub struct SimArgs {
    /// BiKA model file
    #[arg(long)]
    model: Option<PathBuf>,
    /// Baseline workload JSON `{kind, dims, seed}`
    #[arg(long)]
    workload: Option<PathBuf>,
    /// Processing element: bika, bnn or qnn (must match the model)
    #[arg(long)]
    engine: Option<String>,
    /// Array size RxC [default: 8x8]
    #[arg(long)]
    array: Option<String>,
    /// Take inputs from this MNIST test set instead of seeded noise
    #[arg(long)]
    mnist: Option<PathBuf>,
    #[arg(long)]
    cifar: Option<PathBuf>,
    /// First test image
    #[arg(long)]
    index: Option<usize>,
    /// Batch size in images [default: 1]
    #[arg(long)]
    images: Option<usize>,
    /// Seed for noise inputs
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

pub fn sim(a: SimArgs) -> Result<(), CliError> {
    let file = FileConfig::load_opt(a.common.config.as_deref())?;
    let model_path = a.model.clone().or(file.model.clone());
    let workload_path = a.workload.clone().or(file.workload.clone());
    let engine = a.engine.clone().or(file.engine.clone());
    let array = a
        .array
        .clone()
        .or(file.array.clone())
        .unwrap_or_else(|| "8x8".into());
    let mnist = a.mnist.clone().or(file.mnist.clone());
    let cifar = a.cifar.clone().or(file.cifar.clone());
    let index = a.index.or(file.index).unwrap_or(0);
    let images = a.images.or(file.images).unwrap_or(1);
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let out = out_dir(&a.common.out, &file);
    let (rows, cols) = parse_array(&array).map_err(|e| CliError::config(e.to_string()))?;
    if images == 0 {
        return Err(CliError::config("--images must be at least 1"));
    }
    let resolved = FileConfig {
        model: model_path.clone(),
        workload: workload_path.clone(),
        engine: engine.clone(),
        array: Some(array.clone()),
        mnist: mnist.clone(),
        cifar: cifar.clone(),
        index: Some(index),
        images: Some(images),
        seed: Some(seed),
        out: Some(out.clone()),
        ..Default::default()
    };
    let mut manifest = ManifestBuilder::start("sim", resolved, Some(seed));

    let model;
    let baseline;
    let (workload, arch) = match (&model_path, &workload_path) {
        (Some(p), None) => {
            model = load_model_file(p)?;
            manifest.input(p)?;
            (Workload::Bika(&model), model.architecture())
        }
        (None, Some(p)) => {
            manifest.input(p)?;
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?;
            let spec: WorkloadSpec = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("invalid workload {}: {e}", p.display())))?;
            baseline = spec.build().map_err(|e| CliError::config(e.to_string()))?;
            (Workload::Baseline(&baseline), baseline.arch.clone())
        }
        _ => {
            return Err(CliError::config(
                "give exactly one of --model or --workload",
            ))
        }
    };
    let pe = match &engine {
        Some(s) => PeKind::from_str(s).map_err(|e| CliError::config(e.to_string()))?,
        None => workload.pe_kind(),
    };
    if pe != workload.pe_kind() {
        return Err(CliError::config(format!(
            "engine {pe} cannot run a {} workload",
            workload.pe_kind()
        )));
    }

    let batch = if mnist.is_some() || cifar.is_some() {
        let data = load_data(mnist.as_ref(), cifar.as_ref())?;
        manifest.input(&data.dir)?;
        check_input(&arch, &data.test)?;
        if index + images > data.test.len() {
            return Err(CliError::data(format!(
                "images {index}..{} exceed the {} test samples",
                index + images,
                data.test.len()
            )));
        }
        let xs: Vec<IntTensor> = (index..index + images)
            .map(|i| data.test.image(i))
            .collect();
        IntTensor::batch(&xs)?
    } else {
        if arch.input.shape.contains(&0) {
            return Err(CliError::config(
                "noise inputs need a known input shape; pass --mnist or --cifar",
            ));
        }
        let xs = (0..images)
            .map(|i| {
                random_input(&arch, seed.wrapping_add(i as u64))
                    .and_then(|t| Ok(t.unbatch()?.remove(0)))
            })
            .collect::<bika::Result<Vec<_>>>()?;
        IntTensor::batch(&xs)?
    };

    let cfg = ArrayConfig::new(pe).with_array(rows, cols);
    let report = simulate_model(&cfg, workload, &batch)?;
    manifest.output(&out.join("sim.json"), report.to_json() + "\n")?;
    manifest.output(&out.join("sim.csv"), report.to_csv())?;
    manifest.finish(&out)?;
    println!(
        "{}: {} cycles, {:.3} us at {} MHz on {}x{} ({} multiplications)",
        report.engine,
        report.total_cycles,
        report.latency_us,
        report.clock_mhz,
        rows,
        cols,
        report.ops.multiplications
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// tfc, sfc or lfc [default: tfc]
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Array size RxC [default: 8x8]
    #[arg(long)]
    array: Option<String>,
    #[command(flatten)]
    common: Common,
}

pub fn compare(a: CompareArgs) -> Result<(), CliError> {
    let file = FileConfig::load_opt(a.common.config.as_deref())?;
    let arch_s = a
        .arch
        .clone()
        .or(file.arch.clone())
        .unwrap_or_else(|| "tfc".into());
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let array = a
        .array
        .clone()
        .or(file.array.clone())
        .unwrap_or_else(|| "8x8".into());
    let out = out_dir(&a.common.out, &file);
    let name = ArchName::from_str(&arch_s).map_err(|e| CliError::config(e.to_string()))?;
    if !matches!(name, ArchName::Tfc | ArchName::Sfc | ArchName::Lfc) {
        return Err(CliError::config(format!(
            "compare supports tfc, sfc and lfc, got {name}"
        )));
    }
    let (rows, cols) = parse_array(&array).map_err(|e| CliError::config(e.to_string()))?;
    let resolved = FileConfig {
        arch: Some(arch_s),
        seed: Some(seed),
        array: Some(array),
        out: Some(out.clone()),
        ..Default::default()
    };
    let mut manifest = ManifestBuilder::start("compare", resolved, Some(seed));
    let c = compare_engines_on(name, seed, rows, cols)?;
    manifest.output(&out.join("compare.json"), c.to_json() + "\n")?;
    let csv = c.to_csv();
    manifest.output(&out.join("compare.csv"), &csv)?;
    manifest.finish(&out)?;
    print!("{csv}");
    println!(
        "qnn/bika cycles {:.3}, qnn/bika latency {:.3}, bika/bnn latency {:.3}",
        c.qnn_over_bika_cycles, c.qnn_over_bika_latency, c.bika_over_bnn_latency
    );
    Ok(())
}
