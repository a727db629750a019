//! Dataset construction: random crops of source images pushed through the
//! camera pipeline, written as PNG pairs plus a JSON-lines manifest.

use super::bayer::BayerPhase;
use super::crf::Crf;
use super::pipeline::{noise_gt, synthesize_lowlight, SynthParams};
use crate::error::{Error, Result};
use crate::image_io::{read_rgb_png, write_rgb_png};
use crate::net::PATCH_SIZE;
use crate::tensor::{Shape4, Tensor};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

pub const SIGMA_S_MAX: f32 = 0.16;
pub const SIGMA_C_MAX: f32 = 0.06;
/// Desk-scale patch count: 1/100 of the full 250k regime.
pub const DESK_PATCH_COUNT: usize = 2_500;

/// One manifest line. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RecordMeta {
    pub clean_path: String,
    pub low_path: String,
    pub t: f32,
    pub sigma_eff: f32,
    pub sigma_s: f32,
    pub sigma_c: f32,
    pub crf: String,
    pub phase: String,
    pub split: String,
}

/// Dataset-level metadata, written next to the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub seed: u64,
    pub count: usize,
    pub patch: usize,
    pub crfs: Vec<String>,
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";
pub const INFO_NAME: &str = "dataset.json";

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e.eq_ignore_ascii_case("png")).unwrap_or(false))
        .collect();
    paths.sort();
    Ok(paths)
}

fn load_sources(image_dir: &Path, min_size: usize) -> Result<Vec<Tensor>> {
    let mut sources = Vec::new();
    for path in list_pngs(image_dir)? {
        match read_rgb_png(&path) {
            Ok(img) => {
                let s = img.shape();
                if s.h >= min_size && s.w >= min_size {
                    sources.push(img);
                } else {
                    eprintln!(
                        "warning: skipping {} ({}x{} smaller than {min_size})",
                        path.display(),
                        s.h,
                        s.w
                    );
                }
            }
            Err(e) => eprintln!("warning: skipping unreadable image: {e}"),
        }
    }
    if sources.is_empty() {
        return Err(Error::Argument(format!(
            "no usable source images (8-bit RGB PNG, at least {min_size}x{min_size}) in {}",
            image_dir.display()
        )));
    }
    Ok(sources)
}

fn crop(img: &Tensor, y0: usize, x0: usize, size: usize) -> Tensor {
    let mut out = Tensor::zeros(Shape4::new(1, 3, size, size));
    for c in 0..3 {
        for y in 0..size {
            let src = &img.plane(0, c)[(y0 + y) * img.shape().w + x0..][..size];
            out.plane_mut(0, c)[y * size..(y + 1) * size].copy_from_slice(src);
        }
    }
    out
}

/// Builds `count` records of size `patch` into `out_dir`: every patch
/// draws t ~ U[0,1], sigma_s ~ U[0,0.16], sigma_c ~ U[0,0.06], a CRF and
/// a Bayer phase uniformly, using a per-patch rng seeded with
/// seed + index. Every fifth record lands in the test split (exact 80/20).
pub fn build_dataset_sized(
    image_dir: &Path,
    count: usize,
    seed: u64,
    out_dir: &Path,
    crfs: &[Crf],
    patch: usize,
) -> Result<Vec<RecordMeta>> {
    if count == 0 {
        return Err(Error::Argument("patch count must be positive".into()));
    }
    if crfs.is_empty() {
        return Err(Error::Argument("need at least one CRF".into()));
    }
    if patch < 2 || patch % 2 != 0 {
        return Err(Error::Argument(format!("patch size must be even, got {patch}")));
    }
    let sources = load_sources(image_dir, patch)?;
    let clean_dir = out_dir.join("clean");
    let low_dir = out_dir.join("low");
    std::fs::create_dir_all(&clean_dir).map_err(|e| Error::io(&clean_dir, e))?;
    std::fs::create_dir_all(&low_dir).map_err(|e| Error::io(&low_dir, e))?;

    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = StdRng::seed_from_u64(seed.wrapping_add(i as u64));
        let img = &sources[rng.random_range(0..sources.len())];
        let s = img.shape();
        let y0 = rng.random_range(0..=s.h - patch);
        let x0 = rng.random_range(0..=s.w - patch);
        let clean = crop(img, y0, x0, patch);

        let t: f32 = rng.random();
        let sigma_s: f32 = rng.random_range(0.0..=SIGMA_S_MAX);
        let sigma_c: f32 = rng.random_range(0.0..=SIGMA_C_MAX);
        let crf = &crfs[rng.random_range(0..crfs.len())];
        let phase = BayerPhase::ALL[rng.random_range(0..4)];
        let noise_seed: u64 = rng.random();

        let params = SynthParams { t, sigma_s, sigma_c, crf, phase, seed: noise_seed };
        let (low, low_noiseless) = synthesize_lowlight(&clean, &params)?;
        let sigma_eff = noise_gt(&low, &low_noiseless)?;

        let clean_rel = format!("clean/{i:05}.png");
        let low_rel = format!("low/{i:05}.png");
        write_rgb_png(&out_dir.join(&clean_rel), &clean)?;
        write_rgb_png(&out_dir.join(&low_rel), &low)?;

        records.push(RecordMeta {
            clean_path: clean_rel,
            low_path: low_rel,
            t,
            sigma_eff,
            sigma_s,
            sigma_c,
            crf: crf.name.clone(),
            phase: phase.name().to_string(),
            split: if (i + 1) % 5 == 0 { "test".into() } else { "train".into() },
        });
    }

    write_manifest(out_dir, &records)?;
    let info = DatasetInfo {
        seed,
        count,
        patch,
        crfs: crfs.iter().map(|c| c.name.clone()).collect(),
    };
    let info_path = out_dir.join(INFO_NAME);
    let mut f = std::fs::File::create(&info_path).map_err(|e| Error::io(&info_path, e))?;
    serde_json::to_writer_pretty(&mut f, &info)
        .map_err(|e| Error::Config(format!("writing {}: {e}", info_path.display())))?;
    f.write_all(b"\n").map_err(|e| Error::io(&info_path, e))?;
    Ok(records)
}

/// The standard 32x32 training dataset builder.
pub fn build_dataset(
    image_dir: &Path,
    count: usize,
    seed: u64,
    out_dir: &Path,
    crfs: &[Crf],
) -> Result<Vec<RecordMeta>> {
    build_dataset_sized(image_dir, count, seed, out_dir, crfs, PATCH_SIZE)
}

fn write_manifest(out_dir: &Path, records: &[RecordMeta]) -> Result<()> {
    let path = out_dir.join(MANIFEST_NAME);
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?,
    );
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::Config(format!("serializing manifest record: {e}")))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Reads a JSON-lines manifest; `base` (the manifest's directory) resolves
/// the relative paths.
pub fn read_manifest(path: &Path) -> Result<(PathBuf, Vec<RecordMeta>)> {
    let base = path
        .parent()
        .map(|p| p.to_path_buf())
        .ok_or_else(|| Error::Argument(format!("manifest path {} has no parent", path.display())))?;
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (ln, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RecordMeta = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("manifest line {}: {e}", ln + 1)))?;
        records.push(r);
    }
    if records.is_empty() {
        return Err(Error::Argument(format!("manifest {} is empty", path.display())));
    }
    Ok((base, records))
}

/// A patch loaded for training: the low-light input plus both regression
/// targets.
#[derive(Debug, Clone)]
pub struct LoadedPatch {
    pub low: Tensor,
    pub t: f32,
    pub sigma_eff: f32,
}

/// Loads the low-light patches of one split ("train" or "test") into
/// memory, re-normalized to [0, 1].
pub fn load_split(base: &Path, records: &[RecordMeta], split: &str) -> Result<Vec<LoadedPatch>> {
    let mut out = Vec::new();
    for r in records.iter().filter(|r| r.split == split) {
        let low = read_rgb_png(&base.join(&r.low_path))?;
        let s = low.shape();
        if s.h != PATCH_SIZE || s.w != PATCH_SIZE {
            return Err(Error::shape(
                format!("patch {}", r.low_path),
                format!("{PATCH_SIZE}x{PATCH_SIZE}"),
                s,
            ));
        }
        out.push(LoadedPatch { low, t: r.t, sigma_eff: r.sigma_eff });
    }
    if out.is_empty() {
        return Err(Error::Argument(format!("manifest has no {split:?} records")));
    }
    Ok(out)
}
