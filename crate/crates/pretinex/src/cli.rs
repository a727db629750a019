//! Command implementations behind the `pretinex` binary.
//!
//! Exit codes: 2 argument/configuration errors, 3 I/O errors, 4 training
//! divergence, 5 corrupt model files. Diagnostics go to stderr; data and
//! reports go to stdout.

use crate::enhance::{enhance_with_maps, EnhanceConfig};
use crate::error::{Error, Result};
use crate::image_io::{read_rgb_png, write_rgb_png};
use crate::metrics::{psnr, ssim, EvalRecord};
use crate::net::serial::read_model;
use crate::net::TrainConfig;
use crate::progressive::{
    infer_maps, load_stage_models, save_stage_models, train_progressive, ProgressiveConfig,
    StageModels, StageReport,
};
use crate::synth::crf::{default_crfs, resolve_crf, Crf};
use crate::synth::dataset::{
    build_dataset, load_split, read_manifest, RecordMeta, DESK_PATCH_COUNT, MANIFEST_NAME,
};
use serde::Deserialize;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Flat JSON config file; any flag given on the command line wins over
/// the file. Unknown keys are rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub count: Option<usize>,
    pub k: Option<usize>,
    pub iters_per_stage: Option<u64>,
    pub batch_size: Option<usize>,
    pub base_lr: Option<f32>,
    pub momentum: Option<f32>,
    pub weight_decay: Option<f32>,
    pub stride: Option<usize>,
    pub epsilon_div: Option<f32>,
    pub guided_radius: Option<usize>,
    pub guided_eps: Option<f32>,
    pub denoise_threshold_factor: Option<f32>,
    pub denoise_block: Option<usize>,
    pub threads: Option<usize>,
    pub crf: Option<Vec<String>>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }
}

fn pick<T: Copy>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn resolve_crfs(names: &[String], file: &FileConfig) -> Result<Vec<Crf>> {
    let names: Vec<String> = if !names.is_empty() {
        names.to_vec()
    } else if let Some(from_file) = &file.crf {
        from_file.clone()
    } else {
        return Ok(default_crfs());
    };
    names.iter().map(|n| resolve_crf(n)).collect()
}

pub struct SynthArgs {
    pub images: PathBuf,
    pub out: PathBuf,
    pub count: Option<usize>,
    pub seed: Option<u64>,
    pub crf: Vec<String>,
    pub desk: bool,
    pub config: Option<PathBuf>,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let count = if args.desk {
        DESK_PATCH_COUNT
    } else {
        args.count.or(file.count).ok_or_else(|| {
            Error::Argument("give --count, or --desk for the 2,500-patch default".into())
        })?
    };
    let seed = pick(args.seed, file.seed, 0);
    let crfs = resolve_crfs(&args.crf, &file)?;
    let records = build_dataset(&args.images, count, seed, &args.out, &crfs)?;
    let train = records.iter().filter(|r| r.split == "train").count();
    println!(
        "wrote {} patches ({} train / {} test) to {}",
        records.len(),
        train,
        records.len() - train,
        args.out.display()
    );
    Ok(())
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub k: Option<usize>,
    pub iters_per_stage: Option<u64>,
    pub seed: Option<u64>,
    pub desk: bool,
    pub config: Option<PathBuf>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let k = pick(args.k, file.k, 4);
    let iters = if args.desk && args.iters_per_stage.is_none() {
        2_000
    } else {
        pick(args.iters_per_stage, file.iters_per_stage, 50_000)
    };
    let cfg = TrainConfig {
        iterations: iters,
        batch_size: pick(None, file.batch_size, 128),
        base_lr: pick(None, file.base_lr, 0.005),
        momentum: pick(None, file.momentum, 0.9),
        weight_decay: pick(None, file.weight_decay, 5e-6),
        seed: pick(args.seed, file.seed, 0),
    };
    let prog = ProgressiveConfig {
        k_iterations: k,
        stride: pick(None, file.stride, 16),
        ..ProgressiveConfig::default()
    };
    let (base, records) = read_manifest(&args.data)?;
    let train_split = load_split(&base, &records, "train")?;
    let test_split = load_split(&base, &records, "test").unwrap_or_default();

    let (models, reports) = train_progressive(&train_split, &test_split, &cfg, &prog, true)?;
    save_stage_models(&args.out, &models, &cfg)?;
    write_loss_csv(&args.out.join("losses.csv"), &reports)?;
    for r in &reports {
        let last = r.curve.last().map(|p| p.mean_loss).unwrap_or(f64::NAN);
        if r.test_mse.is_nan() {
            println!("stage {}: final train loss {last:.6}", r.label);
        } else {
            println!("stage {}: final train loss {last:.6}, test mse {:.6}", r.label, r.test_mse);
        }
    }
    println!("wrote {} stage pairs to {}", models.k(), args.out.display());
    Ok(())
}

fn write_loss_csv(path: &Path, reports: &[StageReport]) -> Result<()> {
    let mut f =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    writeln!(f, "iteration,stage,loss,lr").map_err(|e| Error::io(path, e))?;
    for r in reports {
        for p in &r.curve {
            writeln!(f, "{},{},{},{}", p.iteration, r.label, p.mean_loss, p.lr)
                .map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

pub struct EnhanceArgs {
    pub model: PathBuf,
    pub input: PathBuf,
    pub output: PathBuf,
    pub k: Option<usize>,
    pub no_denoise: bool,
    pub threads: Option<usize>,
    pub config: Option<PathBuf>,
}

fn enhance_config(file: &FileConfig, denoise: bool) -> EnhanceConfig {
    let d = EnhanceConfig::default();
    EnhanceConfig {
        epsilon_div: pick(None, file.epsilon_div, d.epsilon_div),
        guided_radius: pick(None, file.guided_radius, d.guided_radius),
        guided_eps: pick(None, file.guided_eps, d.guided_eps),
        denoise_threshold_factor: pick(
            None,
            file.denoise_threshold_factor,
            d.denoise_threshold_factor,
        ),
        denoise_block: pick(None, file.denoise_block, d.denoise_block),
        denoise,
    }
}

fn check_k(models: &StageModels, k: usize) -> Result<()> {
    if k > models.k() {
        return Err(Error::Argument(format!(
            "k = {k} requested but the model directory provides stages 1..={}",
            models.k()
        )));
    }
    if k == 0 && models.nm_independent.is_none() {
        return Err(Error::Argument(
            "k = 0 needs nm_stage0.prtx, which this model directory does not provide".into(),
        ));
    }
    Ok(())
}

pub fn cmd_enhance(args: &EnhanceArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let (models, manifest) = load_stage_models(&args.model)?;
    let k = args.k.unwrap_or(manifest.k);
    check_k(&models, k)?;
    let prog = ProgressiveConfig {
        k_iterations: manifest.k,
        stride: manifest.stride,
        patch_size: manifest.patch_size,
    };
    let threads = pick(args.threads, file.threads, 1);
    let image = read_rgb_png(&args.input)?;
    let cfg = enhance_config(&file, !args.no_denoise);
    let (lmap, nmap) = infer_maps(&models, &image, &prog, k, threads)?;
    let enhanced = enhance_with_maps(&image, &lmap, &nmap, &cfg)?;
    write_rgb_png(&args.output, &enhanced)?;
    println!("wrote {}", args.output.display());
    Ok(())
}

pub struct EvalArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub k_sweep: Option<String>,
    pub report: Option<PathBuf>,
    pub threads: Option<usize>,
    pub config: Option<PathBuf>,
}

fn parse_sweep(s: &str) -> Result<Vec<usize>> {
    let parse = |v: &str| -> Result<usize> {
        v.trim()
            .parse()
            .map_err(|_| Error::Argument(format!("bad k value {v:?} in sweep")))
    };
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (parse(a)?, parse(b)?);
        if a > b {
            return Err(Error::Argument(format!("empty k sweep {s:?}")));
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(parse).collect()
}

/// Enhances every test record at each requested k and aggregates PSNR /
/// SSIM into the report rows.
pub fn evaluate_manifest(
    models: &StageModels,
    prog: &ProgressiveConfig,
    base: &Path,
    records: &[RecordMeta],
    ks: &[usize],
    cfg: &EnhanceConfig,
    threads: usize,
) -> Result<Vec<EvalRecord>> {
    let test: Vec<&RecordMeta> = records.iter().filter(|r| r.split == "test").collect();
    if test.is_empty() {
        return Err(Error::Argument("manifest has no test split".into()));
    }
    let mut rows = Vec::with_capacity(test.len() * ks.len());
    for r in &test {
        let low = read_rgb_png(&base.join(&r.low_path))?;
        let clean = read_rgb_png(&base.join(&r.clean_path))?;
        for &k in ks {
            let (lmap, nmap) = infer_maps(models, &low, prog, k, threads)?;
            let enhanced = enhance_with_maps(&low, &lmap, &nmap, cfg)?;
            rows.push(EvalRecord {
                name: r.low_path.clone(),
                k,
                psnr: psnr(&enhanced, &clean, 1.0)?,
                ssim: ssim(&enhanced, &clean)?,
            });
        }
    }
    Ok(rows)
}

/// Per-k mean PSNR / SSIM summary, in sweep order.
pub fn summarize(rows: &[EvalRecord], ks: &[usize]) -> Vec<(usize, f64, f64)> {
    ks.iter()
        .map(|&k| {
            let of_k: Vec<&EvalRecord> = rows.iter().filter(|r| r.k == k).collect();
            let n = of_k.len().max(1) as f64;
            let mean_psnr = of_k.iter().map(|r| r.psnr).sum::<f64>() / n;
            let mean_ssim = of_k.iter().map(|r| r.ssim).sum::<f64>() / n;
            (k, mean_psnr, mean_ssim)
        })
        .collect()
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let (models, manifest) = load_stage_models(&args.model)?;
    let ks = match &args.k_sweep {
        Some(s) => parse_sweep(s)?,
        None => (0..=manifest.k).collect(),
    };
    for &k in &ks {
        check_k(&models, k)?;
    }
    let prog = ProgressiveConfig {
        k_iterations: manifest.k,
        stride: manifest.stride,
        patch_size: manifest.patch_size,
    };
    let threads = pick(args.threads, file.threads, 1);
    let (base, records) = read_manifest(&args.data)?;
    let cfg = enhance_config(&file, true);
    let rows = evaluate_manifest(&models, &prog, &base, &records, &ks, &cfg, threads)?;

    if let Some(report) = &args.report {
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(report).map_err(|e| Error::io(report, e))?,
        );
        for row in &rows {
            let line = serde_json::to_string(row)
                .map_err(|e| Error::Config(format!("serializing report row: {e}")))?;
            writeln!(f, "{line}").map_err(|e| Error::io(report, e))?;
        }
    }
    println!("k,mean_psnr,mean_ssim");
    for (k, p, s) in summarize(&rows, &ks) {
        println!("{k},{p:.4},{s:.4}");
    }
    Ok(())
}

pub fn cmd_inspect(model: &Path) -> Result<()> {
    let raw = read_model(model)?;
    println!("network: {}-Net, stage {}", raw.kind.label(), raw.stage);
    println!("layers:");
    let mut total = 0usize;
    for l in &raw.layers {
        let count = l.weights.len() + l.bias.len();
        total += count;
        println!("  {}  {} -> {}  ({count} params)", l.name, l.c_in, l.c_out);
    }
    println!("total parameters: {total}");
    println!("checksum: ok");
    Ok(())
}

/// Maps error categories onto stable process exit codes.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Argument(_) | Error::Config(_) | Error::Shape { .. } => 2,
        Error::Io { .. } | Error::Image { .. } => 3,
        Error::NonFinite { .. } | Error::Training(_) => 4,
        Error::ModelFormat(_) => 5,
    }
}

/// Convenience used by tests: dataset dir -> manifest path.
pub fn manifest_path(dataset_dir: &Path) -> PathBuf {
    dataset_dir.join(MANIFEST_NAME)
}
