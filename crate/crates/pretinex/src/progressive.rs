//! The K-stage mutually reinforced schedule: IM and NM pairs trained
//! alternately, each stage consuming the frozen estimate of the previous
//! one as its fourth input channel, plus cascaded inference over patches
//! and sliding-window map construction for whole images.

use crate::error::{Error, Result};
use crate::net::eval::Evaluator;
use crate::net::serial::{params_from_raw, read_model, write_model};
use crate::net::train::{derive_seed, train, LossPoint, TrainingSet};
use crate::net::{build_im_net, build_nm_net, ModelParams, NetKind, NetworkSpec, TrainConfig, PATCH_SIZE};
use crate::synth::dataset::LoadedPatch;
use crate::tensor::ops::bilinear_resize;
use crate::tensor::{Shape4, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

pub const INPUT_CHANNELS: usize = 4;

#[derive(Debug, Clone)]
pub struct ProgressiveConfig {
    /// Number of IM/NM alternations (the paper's iteration count).
    pub k_iterations: usize,
    /// Sliding-window stride for map construction, in pixels.
    pub stride: usize,
    pub patch_size: usize,
}

impl Default for ProgressiveConfig {
    fn default() -> Self {
        ProgressiveConfig { k_iterations: 4, stride: 16, patch_size: PATCH_SIZE }
    }
}

impl ProgressiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.k_iterations) {
            return Err(Error::Config(format!(
                "k must lie in 1..=8, got {}",
                self.k_iterations
            )));
        }
        if self.patch_size != PATCH_SIZE {
            return Err(Error::Config(format!(
                "patch size is fixed at {PATCH_SIZE}, got {}",
                self.patch_size
            )));
        }
        if self.stride == 0 || self.stride > self.patch_size {
            return Err(Error::Config(format!(
                "stride must lie in 1..={}, got {}",
                self.patch_size, self.stride
            )));
        }
        Ok(())
    }
}

/// One trained stage: the illumination net and the noise net that
/// consumed its output.
#[derive(Debug, Clone)]
pub struct StagePair {
    pub im: ModelParams,
    pub nm: ModelParams,
}

/// All parameters produced by progressive training. `nm_independent` is
/// the extra zero-feedback noise net used by the k = 0 (no cascade)
/// ablation; it is not part of the K stage pairs.
#[derive(Debug, Clone)]
pub struct StageModels {
    pub stages: Vec<StagePair>,
    pub nm_independent: Option<ModelParams>,
    pub stride: usize,
    pub patch_size: usize,
    pub seed: u64,
}

impl StageModels {
    pub fn k(&self) -> usize {
        self.stages.len()
    }
}

/// Per-network training summary (in-memory only; wall time never lands in
/// any artifact).
#[derive(Debug, Clone)]
pub struct StageReport {
    /// "im1", "nm1", ..., "nm0" for the independent noise net.
    pub label: String,
    pub curve: Vec<LossPoint>,
    pub seconds: f64,
    /// Held-out MSE on the test split (NaN when no test split given).
    pub test_mse: f64,
}

/// Training samples for one stage: low-light RGB patches plus a constant
/// feedback channel per patch.
struct StageSet<'a> {
    patches: &'a [LoadedPatch],
    feedback: &'a [f32],
    targets: Vec<f32>,
}

impl TrainingSet for StageSet<'_> {
    fn len(&self) -> usize {
        self.patches.len()
    }

    fn fill_input(&self, idx: usize, into: &mut Tensor) {
        fill_stage_input(&self.patches[idx].low, self.feedback[idx], into);
    }

    fn target(&self, idx: usize) -> f32 {
        self.targets[idx]
    }
}

fn fill_stage_input(low: &Tensor, feedback: f32, into: &mut Tensor) {
    debug_assert_eq!(into.shape().c, INPUT_CHANNELS);
    let hw = low.shape().hw();
    into.data_mut()[..3 * hw].copy_from_slice(low.data());
    for v in &mut into.data_mut()[3 * hw..4 * hw] {
        *v = feedback;
    }
}

/// Runs one network over a patch list with per-patch feedback values.
fn predict_all(
    spec: &NetworkSpec,
    params: &ModelParams,
    patches: &[LoadedPatch],
    feedback: &[f32],
) -> Result<Vec<f32>> {
    let mut ev = Evaluator::new(spec)?;
    let mut input = Tensor::zeros(spec.input_shape());
    patches
        .iter()
        .zip(feedback)
        .map(|(p, &fb)| {
            fill_stage_input(&p.low, fb, &mut input);
            ev.forward(&input, params)
        })
        .collect()
}

fn mse(pred: &[f32], target: impl Iterator<Item = f32>) -> f64 {
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (&p, t) in pred.iter().zip(target) {
        sum += (p as f64 - t as f64).powi(2);
        n += 1;
    }
    sum / n.max(1) as f64
}

fn train_one(
    spec: &NetworkSpec,
    patches: &[LoadedPatch],
    feedback: &[f32],
    targets: Vec<f32>,
    cfg: &TrainConfig,
    label: &str,
    seed_tag: &str,
) -> Result<(ModelParams, Vec<LossPoint>, f64)> {
    let set = StageSet { patches, feedback, targets };
    let started = Instant::now();
    // all stages of one network kind share init and shuffle seeds, so
    // differences between consecutive stages isolate the feedback effect
    let cfg = TrainConfig { seed: derive_seed(cfg.seed, seed_tag), ..cfg.clone() };
    let (params, curve) = train(spec, &set, &cfg)?;
    let seconds = started.elapsed().as_secs_f64();
    // progress sanity: the final averaged window must improve on the first
    let first = curve.first().map(|p| p.mean_loss).unwrap_or(f64::NAN);
    let last = curve.last().map(|p| p.mean_loss).unwrap_or(f64::NAN);
    if !(last.is_finite() && first.is_finite()) || (curve.len() > 1 && last > first) {
        return Err(Error::Training(format!(
            "stage {label}: training made no progress (first window {first:.6}, last {last:.6})"
        )));
    }
    Ok((params, curve, seconds))
}

/// Trains the full K-stage cascade. Stage 1's illumination net sees a
/// zero feedback channel; every later net sees the frozen predictions of
/// its predecessor on the same training patches. When
/// `with_independent_nm` is set, an extra noise net is trained with zero
/// feedback for the no-cascade ablation.
pub fn train_progressive(
    train_split: &[LoadedPatch],
    test_split: &[LoadedPatch],
    cfg: &TrainConfig,
    prog: &ProgressiveConfig,
    with_independent_nm: bool,
) -> Result<(StageModels, Vec<StageReport>)> {
    prog.validate()?;
    cfg.validate()?;
    if train_split.is_empty() {
        return Err(Error::Argument("progressive training needs a non-empty train split".into()));
    }
    let im_spec = build_im_net(INPUT_CHANNELS);
    let nm_spec = build_nm_net(INPUT_CHANNELS);

    let mut reports = Vec::new();
    let mut stages = Vec::new();
    // feedback carried between stages: sigma estimates into IM, t into NM
    let mut fb_train = vec![0.0f32; train_split.len()];
    let mut fb_test = vec![0.0f32; test_split.len()];

    for k in 1..=prog.k_iterations {
        let label = format!("im{k}");
        let targets: Vec<f32> = train_split.iter().map(|p| p.t).collect();
        let (im, curve, seconds) =
            train_one(&im_spec, train_split, &fb_train, targets, cfg, &label, "im")?;
        let t_train = predict_all(&im_spec, &im, train_split, &fb_train)?;
        let t_test = predict_all(&im_spec, &im, test_split, &fb_test)?;
        let test_mse = if test_split.is_empty() {
            f64::NAN
        } else {
            mse(&t_test, test_split.iter().map(|p| p.t))
        };
        reports.push(StageReport { label, curve, seconds, test_mse });

        let label = format!("nm{k}");
        let targets: Vec<f32> = train_split.iter().map(|p| p.sigma_eff).collect();
        let (nm, curve, seconds) =
            train_one(&nm_spec, train_split, &t_train, targets, cfg, &label, "nm")?;
        let s_train = predict_all(&nm_spec, &nm, train_split, &t_train)?;
        let s_test = predict_all(&nm_spec, &nm, test_split, &t_test)?;
        let test_mse = if test_split.is_empty() {
            f64::NAN
        } else {
            mse(&s_test, test_split.iter().map(|p| p.sigma_eff))
        };
        reports.push(StageReport { label, curve, seconds, test_mse });

        fb_train = s_train;
        fb_test = s_test;
        stages.push(StagePair { im, nm });
    }

    let nm_independent = if with_independent_nm {
        let zeros_train = vec![0.0f32; train_split.len()];
        let zeros_test = vec![0.0f32; test_split.len()];
        let targets: Vec<f32> = train_split.iter().map(|p| p.sigma_eff).collect();
        let (nm0, curve, seconds) =
            train_one(&nm_spec, train_split, &zeros_train, targets, cfg, "nm0", "nm")?;
        let test_mse = if test_split.is_empty() {
            f64::NAN
        } else {
            let s_test = predict_all(&nm_spec, &nm0, test_split, &zeros_test)?;
            mse(&s_test, test_split.iter().map(|p| p.sigma_eff))
        };
        reports.push(StageReport { label: "nm0".into(), curve, seconds, test_mse });
        Some(nm0)
    } else {
        None
    };

    let models = StageModels {
        stages,
        nm_independent,
        stride: prog.stride,
        patch_size: prog.patch_size,
        seed: cfg.seed,
    };
    Ok((models, reports))
}

/// Reusable cascade executor for 3-channel patches.
pub struct CascadeRunner {
    im_eval: Evaluator,
    nm_eval: Evaluator,
    input: Tensor,
}

impl CascadeRunner {
    pub fn new() -> Result<Self> {
        let im_spec = build_im_net(INPUT_CHANNELS);
        let nm_spec = build_nm_net(INPUT_CHANNELS);
        let im_eval = Evaluator::new(&im_spec)?;
        let nm_eval = Evaluator::new(&nm_spec)?;
        let input = Tensor::zeros(im_spec.input_shape());
        Ok(CascadeRunner { im_eval, nm_eval, input })
    }

    /// Runs IM_1 -> NM_1 -> ... -> IM_k -> NM_k on one RGB patch. k = 0
    /// runs the no-cascade pair: IM_1 and the independent NM, both with a
    /// zero feedback channel.
    pub fn infer(&mut self, models: &StageModels, patch: &Tensor, k: usize) -> Result<(f32, f32)> {
        let s = patch.shape();
        if s.n != 1 || s.c != 3 || s.h != PATCH_SIZE || s.w != PATCH_SIZE {
            return Err(Error::shape("infer_patch", format!("1x3x{PATCH_SIZE}x{PATCH_SIZE}"), s));
        }
        if k > models.k() {
            return Err(Error::Argument(format!(
                "k = {k} exceeds the trained cascade depth {}",
                models.k()
            )));
        }
        if k == 0 {
            let nm0 = models.nm_independent.as_ref().ok_or_else(|| {
                Error::Argument(
                    "k = 0 needs the independent noise net (nm_stage0), which this model \
                     directory does not provide"
                        .into(),
                )
            })?;
            fill_stage_input(patch, 0.0, &mut self.input);
            let t = self.im_eval.forward(&self.input, &models.stages[0].im)?;
            fill_stage_input(patch, 0.0, &mut self.input);
            let sigma = self.nm_eval.forward(&self.input, nm0)?;
            return Ok((t, sigma));
        }
        let mut t = 0.0f32;
        let mut sigma = 0.0f32;
        for stage in &models.stages[..k] {
            fill_stage_input(patch, sigma, &mut self.input);
            t = self.im_eval.forward(&self.input, &stage.im)?;
            fill_stage_input(patch, t, &mut self.input);
            sigma = self.nm_eval.forward(&self.input, &stage.nm)?;
        }
        Ok((t, sigma))
    }
}

/// Cascaded per-patch inference; see [`CascadeRunner::infer`].
pub fn infer_patch(models: &StageModels, patch: &Tensor, k: usize) -> Result<(f32, f32)> {
    if k == 0 || k > models.k() {
        return Err(Error::Argument(format!("k must lie in 1..={}, got {k}", models.k())));
    }
    CascadeRunner::new()?.infer(models, patch, k)
}

/// Window start offsets covering `dim`: the stride grid plus one clamped
/// start when the grid stops short of the border.
pub fn window_starts(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut starts: Vec<usize> =
        (0..).map(|i| i * stride).take_while(|s| s + patch <= dim).collect();
    if let Some(&last) = starts.last() {
        if last + patch < dim {
            starts.push(dim - patch);
        }
    }
    starts
}

fn extract_window(image: &Tensor, y0: usize, x0: usize, size: usize, into: &mut Tensor) {
    let w = image.shape().w;
    for c in 0..3 {
        let src = image.plane(0, c);
        let dst = into.plane_mut(0, c);
        for y in 0..size {
            dst[y * size..(y + 1) * size]
                .copy_from_slice(&src[(y0 + y) * w + x0..(y0 + y) * w + x0 + size]);
        }
    }
}

/// Slides a patch window over the image, runs the cascade per window,
/// assembles coarse estimate grids, and bilinearly resizes them to full
/// resolution. The illumination map is clamped to [1e-3, 1], the noise
/// map to [0, 1]. `threads` > 1 splits the windows across worker threads
/// (the grid assembly is deterministic regardless).
pub fn infer_maps(
    models: &StageModels,
    image: &Tensor,
    prog: &ProgressiveConfig,
    k: usize,
    threads: usize,
) -> Result<(crate::enhance::IlluminationMap, crate::enhance::NoiseLevelMap)> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape("infer_maps", "1x3xHxW", s));
    }
    let patch = prog.patch_size;
    if s.h < patch || s.w < patch {
        return Err(Error::Argument(format!(
            "image {}x{} is smaller than one {patch}x{patch} window",
            s.h, s.w
        )));
    }
    let ys = window_starts(s.h, patch, prog.stride);
    let xs = window_starts(s.w, patch, prog.stride);
    let (gh, gw) = (ys.len(), xs.len());
    let cells: Vec<(usize, usize)> =
        (0..gh).flat_map(|gy| (0..gw).map(move |gx| (gy, gx))).collect();

    let run_range = |range: &[(usize, usize)]| -> Result<Vec<(f32, f32)>> {
        let mut runner = CascadeRunner::new()?;
        let mut window = Tensor::zeros(Shape4::new(1, 3, patch, patch));
        range
            .iter()
            .map(|&(gy, gx)| {
                extract_window(image, ys[gy], xs[gx], patch, &mut window);
                runner.infer(models, &window, k)
            })
            .collect()
    };

    let results: Vec<(f32, f32)> = if threads <= 1 || cells.len() < 2 {
        run_range(&cells)?
    } else {
        let workers = threads.min(cells.len());
        let per = cells.len().div_ceil(workers);
        let chunks: Vec<&[(usize, usize)]> = cells.chunks(per).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> =
                chunks.into_iter().map(|c| scope.spawn(move || run_range(c))).collect();
            let mut all = Vec::with_capacity(cells.len());
            for h in handles {
                let part = h.join().map_err(|_| {
                    Error::Argument("window inference worker panicked".into())
                })??;
                all.extend(part);
            }
            Ok::<_, Error>(all)
        })?
    };

    let mut t_grid = Tensor::zeros(Shape4::new(1, 1, gh, gw));
    let mut s_grid = Tensor::zeros(Shape4::new(1, 1, gh, gw));
    for (&(gy, gx), &(t, sigma)) in cells.iter().zip(&results) {
        *t_grid.at_mut(0, 0, gy, gx) = t;
        *s_grid.at_mut(0, 0, gy, gx) = sigma;
    }
    let lmap = bilinear_resize(&t_grid, (s.h, s.w))?;
    let nmap = bilinear_resize(&s_grid, (s.h, s.w))?;
    Ok((crate::enhance::IlluminationMap::new(lmap)?, crate::enhance::NoiseLevelMap::new(nmap)?))
}

// --- directory persistence -------------------------------------------------

/// Stage directory metadata, stored as manifest.json next to the model
/// files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageManifest {
    pub k: usize,
    pub stride: usize,
    pub patch_size: usize,
    pub seed: u64,
    pub iters_per_stage: u64,
    pub batch_size: usize,
    pub independent_nm: bool,
}

pub const STAGE_MANIFEST_NAME: &str = "manifest.json";

pub fn stage_file_name(kind: NetKind, stage: usize) -> String {
    match kind {
        NetKind::Im => format!("im_stage{stage}.prtx"),
        NetKind::Nm => format!("nm_stage{stage}.prtx"),
    }
}

/// Writes im_stage{1..K}.prtx, nm_stage{1..K}.prtx, the optional
/// nm_stage0.prtx, and manifest.json into `dir`.
pub fn save_stage_models(
    dir: &Path,
    models: &StageModels,
    cfg: &TrainConfig,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let im_spec = build_im_net(INPUT_CHANNELS);
    let nm_spec = build_nm_net(INPUT_CHANNELS);
    for (i, pair) in models.stages.iter().enumerate() {
        let stage = i + 1;
        write_model(&dir.join(stage_file_name(NetKind::Im, stage)), &im_spec, &pair.im, stage as u8)?;
        write_model(&dir.join(stage_file_name(NetKind::Nm, stage)), &nm_spec, &pair.nm, stage as u8)?;
    }
    if let Some(nm0) = &models.nm_independent {
        write_model(&dir.join(stage_file_name(NetKind::Nm, 0)), &nm_spec, nm0, 0)?;
    }
    let manifest = StageManifest {
        k: models.k(),
        stride: models.stride,
        patch_size: models.patch_size,
        seed: models.seed,
        iters_per_stage: cfg.iterations,
        batch_size: cfg.batch_size,
        independent_nm: models.nm_independent.is_some(),
    };
    let path = dir.join(STAGE_MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("serializing stage manifest: {e}")))?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

/// Loads a stage directory written by [`save_stage_models`].
pub fn load_stage_models(dir: &Path) -> Result<(StageModels, StageManifest)> {
    let manifest_path = dir.join(STAGE_MANIFEST_NAME);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: StageManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("stage manifest {}: {e}", manifest_path.display())))?;
    let im_spec = build_im_net(INPUT_CHANNELS);
    let nm_spec = build_nm_net(INPUT_CHANNELS);
    let mut stages = Vec::with_capacity(manifest.k);
    for stage in 1..=manifest.k {
        let im_raw = read_model(&dir.join(stage_file_name(NetKind::Im, stage)))?;
        let nm_raw = read_model(&dir.join(stage_file_name(NetKind::Nm, stage)))?;
        if im_raw.stage as usize != stage || nm_raw.stage as usize != stage {
            return Err(Error::ModelFormat(format!(
                "stage index mismatch in stage {stage} files"
            )));
        }
        stages.push(StagePair {
            im: params_from_raw(&im_raw, &im_spec)?,
            nm: params_from_raw(&nm_raw, &nm_spec)?,
        });
    }
    let nm_independent = if manifest.independent_nm {
        let raw = read_model(&dir.join(stage_file_name(NetKind::Nm, 0)))?;
        Some(params_from_raw(&raw, &nm_spec)?)
    } else {
        None
    };
    Ok((
        StageModels {
            stages,
            nm_independent,
            stride: manifest.stride,
            patch_size: manifest.patch_size,
            seed: manifest.seed,
        },
        manifest,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn tiny_patches(n: usize, seed: u64) -> Vec<LoadedPatch> {
        let mut rng = StdRng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let t: f32 = rng.random();
                let data: Vec<f32> =
                    (0..3 * 32 * 32).map(|_| rng.random::<f32>() * t).collect();
                LoadedPatch {
                    low: Tensor::from_vec(Shape4::new(1, 3, 32, 32), data).unwrap(),
                    t,
                    sigma_eff: 0.1 * (1.0 - t),
                }
            })
            .collect()
    }

    fn micro_cfg(seed: u64) -> TrainConfig {
        TrainConfig { iterations: 30, batch_size: 4, seed, ..TrainConfig::default() }
    }

    #[test]
    fn k1_trains_one_pair_with_one_way_coupling() {
        let train = tiny_patches(8, 1);
        let prog = ProgressiveConfig { k_iterations: 1, ..ProgressiveConfig::default() };
        let (models, reports) =
            train_progressive(&train, &[], &micro_cfg(2), &prog, false).unwrap();
        assert_eq!(models.k(), 1);
        assert!(models.nm_independent.is_none());
        assert_eq!(
            reports.iter().map(|r| r.label.as_str()).collect::<Vec<_>>(),
            vec!["im1", "nm1"]
        );
    }

    #[test]
    fn cascade_is_prefix_stable() {
        // adding stage k+1 must not change the k-round answer
        let train = tiny_patches(8, 3);
        let prog2 = ProgressiveConfig { k_iterations: 2, ..ProgressiveConfig::default() };
        let prog3 = ProgressiveConfig { k_iterations: 3, ..ProgressiveConfig::default() };
        let (m2, _) = train_progressive(&train, &[], &micro_cfg(5), &prog2, false).unwrap();
        let (m3, _) = train_progressive(&train, &[], &micro_cfg(5), &prog3, false).unwrap();
        let patch = tiny_patches(1, 9)[0].low.clone();
        let a = infer_patch(&m2, &patch, 2).unwrap();
        let b = infer_patch(&m3, &patch, 2).unwrap();
        assert_eq!(a, b);
        // and identical inputs give identical outputs
        assert_eq!(infer_patch(&m3, &patch, 3).unwrap(), infer_patch(&m3, &patch, 3).unwrap());
    }

    #[test]
    fn k_bounds_are_enforced() {
        let train = tiny_patches(6, 4);
        let prog = ProgressiveConfig { k_iterations: 1, ..ProgressiveConfig::default() };
        let (models, _) = train_progressive(&train, &[], &micro_cfg(6), &prog, false).unwrap();
        let patch = tiny_patches(1, 10)[0].low.clone();
        assert!(infer_patch(&models, &patch, 0).is_err());
        assert!(infer_patch(&models, &patch, 2).is_err());
        // k = 0 through the runner needs the independent net
        let mut runner = CascadeRunner::new().unwrap();
        assert!(runner.infer(&models, &patch, 0).is_err());
    }

    #[test]
    fn window_layout_examples() {
        assert_eq!(window_starts(32, 32, 16), vec![0]);
        assert_eq!(window_starts(128, 32, 16), vec![0, 16, 32, 48, 64, 80, 96]);
        // 129 px: the stride grid leaves one uncovered column, so a
        // clamped start at 97 is appended
        assert_eq!(window_starts(129, 32, 16), vec![0, 16, 32, 48, 64, 80, 96, 97]);
        assert_eq!(window_starts(33, 32, 16), vec![0, 1]);
    }

    #[test]
    fn maps_on_single_window_image_are_constant() {
        let train = tiny_patches(6, 11);
        let prog = ProgressiveConfig { k_iterations: 1, ..ProgressiveConfig::default() };
        let (models, _) = train_progressive(&train, &[], &micro_cfg(12), &prog, false).unwrap();
        let image = tiny_patches(1, 13)[0].low.clone();
        let (lmap, nmap) = infer_maps(&models, &image, &prog, 1, 1).unwrap();
        let l0 = lmap.as_tensor().data()[0];
        assert!(lmap.as_tensor().data().iter().all(|&v| v == l0));
        let n0 = nmap.as_tensor().data()[0];
        assert!(nmap.as_tensor().data().iter().all(|&v| v == n0));
        assert!(lmap.as_tensor().data().iter().all(|&v| v >= 1e-3));
    }

    #[test]
    fn multithreaded_maps_match_single_thread() {
        let train = tiny_patches(6, 14);
        let prog = ProgressiveConfig { k_iterations: 1, ..ProgressiveConfig::default() };
        let (models, _) = train_progressive(&train, &[], &micro_cfg(15), &prog, false).unwrap();
        let mut rng = StdRng::seed_from_u64(16);
        let data: Vec<f32> = (0..3 * 64 * 64).map(|_| rng.random()).collect();
        let image = Tensor::from_vec(Shape4::new(1, 3, 64, 64), data).unwrap();
        let (l1, n1) = infer_maps(&models, &image, &prog, 1, 1).unwrap();
        let (l4, n4) = infer_maps(&models, &image, &prog, 1, 4).unwrap();
        assert_eq!(l1.as_tensor(), l4.as_tensor());
        assert_eq!(n1.as_tensor(), n4.as_tensor());
    }

    #[test]
    fn image_smaller_than_patch_is_rejected() {
        let train = tiny_patches(6, 17);
        let prog = ProgressiveConfig { k_iterations: 1, ..ProgressiveConfig::default() };
        let (models, _) = train_progressive(&train, &[], &micro_cfg(18), &prog, false).unwrap();
        let image = Tensor::zeros(Shape4::new(1, 3, 16, 16));
        assert!(infer_maps(&models, &image, &prog, 1, 1).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let train = tiny_patches(8, 19);
        let prog = ProgressiveConfig { k_iterations: 2, ..ProgressiveConfig::default() };
        let cfg = micro_cfg(20);
        let (models, _) = train_progressive(&train, &[], &cfg, &prog, true).unwrap();
        let dir = std::env::temp_dir()
            .join(format!("pretinex_stages_{}", std::process::id()));
        std::fs::remove_dir_all(&dir).ok();
        save_stage_models(&dir, &models, &cfg).unwrap();
        // K = 2 with the ablation net: 4 stage files + nm_stage0 + manifest
        assert!(dir.join("im_stage1.prtx").exists());
        assert!(dir.join("im_stage2.prtx").exists());
        assert!(dir.join("nm_stage1.prtx").exists());
        assert!(dir.join("nm_stage2.prtx").exists());
        assert!(dir.join("nm_stage0.prtx").exists());
        let (back, manifest) = load_stage_models(&dir).unwrap();
        assert_eq!(manifest.k, 2);
        assert_eq!(back.k(), 2);
        let patch = tiny_patches(1, 21)[0].low.clone();
        assert_eq!(
            infer_patch(&models, &patch, 2).unwrap(),
            infer_patch(&back, &patch, 2).unwrap()
        );
        let mut ra = CascadeRunner::new().unwrap();
        let mut rb = CascadeRunner::new().unwrap();
        assert_eq!(
            ra.infer(&models, &patch, 0).unwrap(),
            rb.infer(&back, &patch, 0).unwrap()
        );
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn stage_one_im_feedback_channel_is_zero() {
        // the contract is structural: the first IM stage trains and
        // infers with an all-zero fourth channel
        let mut input = Tensor::zeros(Shape4::new(1, 4, 32, 32));
        let patch = tiny_patches(1, 22)[0].low.clone();
        fill_stage_input(&patch, 0.0, &mut input);
        assert!(input.plane(0, 3).iter().all(|&v| v == 0.0));
        assert_eq!(input.plane(0, 0), patch.plane(0, 0));
    }
}
