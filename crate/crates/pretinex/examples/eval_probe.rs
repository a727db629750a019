// eval-side probe against models saved by desk_probe: sweeps the
// denoiser threshold factor and re-runs the k-sweep and the
// constant-noise ablation without retraining
use pretinex::enhance::{enhance_with_maps, EnhanceConfig, NoiseLevelMap};
use pretinex::metrics::psnr;
use pretinex::progressive::{infer_maps, load_stage_models, ProgressiveConfig, StageModels};
use pretinex::synth::scenes::generate_scene;
use pretinex::synth::{default_crfs, synthesize_lowlight, BayerPhase, SynthParams};
use pretinex::tensor::{Shape4, Tensor};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn eval_images(t_hi: f32, ss_lo: f32, sc_lo: f32, size: usize) -> Vec<(Tensor, Tensor, f32)> {
    let crfs = default_crfs();
    let mut rng = StdRng::seed_from_u64(4242);
    let mut images = Vec::new();
    for i in 0..50u64 {
        let clean = generate_scene(size, size, 100_000 + i);
        let t: f32 = rng.random_range(0.1..t_hi);
        let params = SynthParams {
            t,
            sigma_s: rng.random_range(ss_lo..0.16),
            sigma_c: rng.random_range(sc_lo..0.06),
            crf: &crfs[(i % 2) as usize],
            phase: BayerPhase::ALL[(i % 4) as usize],
            seed: 7_000 + i,
        };
        let (low, _) = synthesize_lowlight(&clean, &params).unwrap();
        images.push((clean, low, t));
    }
    images
}

fn mean_psnr(
    models: &StageModels,
    prog: &ProgressiveConfig,
    images: &[(Tensor, Tensor, f32)],
    k: usize,
    cfg: &EnhanceConfig,
    const_level: Option<f32>,
) -> f64 {
    let mut total = 0.0;
    for (clean, low, _) in images {
        let (lmap, nmap) = infer_maps(models, low, prog, k, 1).unwrap();
        let nmap = match const_level {
            Some(level) => {
                let s = low.shape();
                NoiseLevelMap::new(Tensor::filled(Shape4::new(1, 1, s.h, s.w), level)).unwrap()
            }
            None => nmap,
        };
        let enhanced = enhance_with_maps(low, &lmap, &nmap, cfg).unwrap();
        total += psnr(&enhanced, clean, 1.0).unwrap();
    }
    total / images.len() as f64
}

fn main() {
    let saved = std::env::temp_dir().join("pretinex_probe_models");
    let (models, manifest) = load_stage_models(&saved).unwrap();
    let prog = ProgressiveConfig {
        k_iterations: manifest.k,
        stride: manifest.stride,
        patch_size: manifest.patch_size,
    };
    let args: Vec<String> = std::env::args().skip(1).collect();
    let factor: f32 = args.first().and_then(|v| v.parse().ok()).unwrap_or(2.7);
    let t_hi: f32 = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(0.9);
    let ss_lo: f32 = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(0.0);
    let sc_lo: f32 = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(0.0);
    let size: usize = args.get(4).and_then(|v| v.parse().ok()).unwrap_or(64);
    println!("eval set: t in [0.1,{t_hi}], ss in [{ss_lo},0.16], sc in [{sc_lo},0.06], size {size}");
    let images = eval_images(t_hi, ss_lo, sc_lo, size);
    let cfg = EnhanceConfig { denoise_threshold_factor: factor, ..EnhanceConfig::default() };
    println!("--- at factor {factor} ---");
    let means: Vec<f64> =
        (0..=5).map(|k| mean_psnr(&models, &prog, &images, k, &cfg, None)).collect();
    println!("k sweep: {:?}", means.iter().map(|m| (m * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    let best = means[1..=4].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "gain = {:.3} dB (need >= 0.3); |d54| = {:.3} vs |d21| = {:.3}",
        best - means[0],
        (means[5] - means[4]).abs(),
        (means[2] - means[1]).abs()
    );
    let nm_mean = means[4];
    print!("pre-amp constants @k4:");
    let mut best_const = f64::NEG_INFINITY;
    for level in [0.0f32, 0.04, 0.08, 0.12, 0.16, 0.20] {
        let m = mean_psnr(&models, &prog, &images, 4, &cfg, Some(level));
        print!(" {level}:{m:.2}");
        best_const = best_const.max(m);
    }
    println!();
    println!("NM vs best const: {:.3} dB (need >= -0.2)", nm_mean - best_const);
}
