// full desk-scale probe: K = 5 progressive training plus the directional
// quality measurements, for tuning the benchmark before freezing it
use pretinex::enhance::{enhance_with_maps, EnhanceConfig, NoiseLevelMap};
use pretinex::metrics::psnr;
use pretinex::net::TrainConfig;
use pretinex::progressive::{
    infer_maps, load_stage_models, save_stage_models, train_progressive, CascadeRunner,
    ProgressiveConfig, StageModels,
};
use pretinex::synth::dataset::{build_dataset, load_split, MANIFEST_NAME};
use pretinex::synth::scenes::{generate_scene, write_scene_dir};
use pretinex::synth::{default_crfs, read_manifest, synthesize_lowlight, BayerPhase, SynthParams};
use pretinex::tensor::{Shape4, Tensor};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::time::Instant;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va.sqrt() * vb.sqrt())
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
    let root = std::env::temp_dir().join("pretinex_desk_probe");
    std::fs::remove_dir_all(&root).ok();
    let scenes = root.join("scenes");
    write_scene_dir(&scenes, 22, 256, 256, 11).unwrap();
    let crfs = default_crfs();
    build_dataset(&scenes, 2500, 42, &root.join("data"), &crfs).unwrap();
    let (base, records) =
        read_manifest(&root.join("data").join(MANIFEST_NAME)).unwrap();
    let train = load_split(&base, &records, "train").unwrap();
    let test = load_split(&base, &records, "test").unwrap();

    let cfg = TrainConfig { iterations: 2000, batch_size: 128, seed: 7, ..TrainConfig::default() };
    let probe_k: usize = std::env::var("PROBE_K").ok().and_then(|v| v.parse().ok()).unwrap_or(5);
    let prog = ProgressiveConfig { k_iterations: probe_k, ..ProgressiveConfig::default() };
    let saved = std::env::temp_dir().join("pretinex_probe_models");
    let models = if std::env::var("PROBE_REUSE").is_ok() && saved.join("manifest.json").exists() {
        println!("reusing saved models from {}", saved.display());
        load_stage_models(&saved).unwrap().0
    } else {
        let t0 = Instant::now();
        let (models, reports) = train_progressive(&train, &test, &cfg, &prog, true).unwrap();
        println!("K=5 training: {:.0}s total", t0.elapsed().as_secs_f64());
        for r in &reports {
            println!(
                "  {}: loss {:.6}, test mse {:.6}, {:.0}s",
                r.label,
                r.curve.last().unwrap().mean_loss,
                r.test_mse,
                r.seconds
            );
        }
        save_stage_models(&saved, &models, &cfg).unwrap();
        models
    };

    // criterion 6
    let mut runner = CascadeRunner::new().unwrap();
    let (mut ts, mut ths, mut ss, mut shs) = (vec![], vec![], vec![], vec![]);
    for p in &test {
        let (th, sh) = runner.infer(&models, &p.low, 1).unwrap();
        ts.push(p.t as f64);
        ths.push(th as f64);
        ss.push(p.sigma_eff as f64);
        shs.push(sh as f64);
    }
    println!("IM1 r = {:.4}, NM1 r = {:.4}", pearson(&ts, &ths), pearson(&ss, &shs));

    // eval images
    let mut rng = StdRng::seed_from_u64(4242);
    let mut images = Vec::new();
    for i in 0..50u64 {
        let clean = generate_scene(64, 64, 100_000 + i);
        let t: f32 = rng.random_range(0.1..0.9);
        let params = SynthParams {
            t,
            sigma_s: rng.random_range(0.0..0.16),
            sigma_c: rng.random_range(0.0..0.06),
            crf: &crfs[(i % 2) as usize],
            phase: BayerPhase::ALL[(i % 4) as usize],
            seed: 7_000 + i,
        };
        let (low, _) = synthesize_lowlight(&clean, &params).unwrap();
        images.push((clean, low, t));
    }

    // criterion 7
    let ecfg = EnhanceConfig::default();
    let t0 = Instant::now();
    let kmax = models.k();
    let means: Vec<f64> = (0..=kmax).map(|k| mean_psnr(&models, &prog, &images, k, &ecfg, None)).collect();
    println!("k sweep took {:.0}s", t0.elapsed().as_secs_f64());
    println!("mean PSNR by k: {means:?}");
    let best = means[1..means.len().min(5)].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("gain best(1..4)-k0 = {:.3} dB (need >= 0.3)", best - means[0]);
    if kmax >= 5 {
        println!(
            "|d54| = {:.3} vs |d21| = {:.3}",
            (means[5] - means[4]).abs(),
            (means[2] - means[1]).abs()
        );
    }

    // estimate stability
    if kmax >= 5 {
        let (mut d21, mut d54) = (0.0f64, 0.0f64);
        for p in &test {
            let t1 = runner.infer(&models, &p.low, 1).unwrap().0 as f64;
            let t2 = runner.infer(&models, &p.low, 2).unwrap().0 as f64;
            let t4 = runner.infer(&models, &p.low, 4).unwrap().0 as f64;
            let t5 = runner.infer(&models, &p.low, 5).unwrap().0 as f64;
            d21 += (t2 - t1).abs();
            d54 += (t5 - t4).abs();
        }
        println!("estimate stability: |d54| = {:.4} vs |d21| = {:.4}", d54 / 500.0, d21 / 500.0);
    }

    // criterion 8, reading (a): constant substituted before amplification
    let nm_mean = mean_psnr(&models, &prog, &images, kmax.min(4), &ecfg, None);
    print!("NM-guided {nm_mean:.2} dB; pre-amp constants:");
    let mut best_const = f64::NEG_INFINITY;
    for level in [0.0f32, 0.04, 0.08, 0.12, 0.16, 0.20] {
        let m = mean_psnr(&models, &prog, &images, 4, &ecfg, Some(level));
        print!(" {level}:{m:.2}");
        best_const = best_const.max(m);
    }
    println!();
    println!("(a) NM vs best pre-amp const: {:.3} dB (need >= -0.2)", nm_mean - best_const);

    // reading (b): constant as the final denoiser level (no amplification)
    let mut best_const_b = f64::NEG_INFINITY;
    print!("final-level constants:");
    for level in [0.0f32, 0.04, 0.08, 0.12, 0.16, 0.20] {
        let mut total = 0.0;
        for (clean, low, _) in &images {
            let (lmap, _) = infer_maps(&models, low, &prog, 4, 1).unwrap();
            let sdim = low.shape();
            // bypass amplification: hand the pipeline a map that lands at
            // `level` after division by the smoothed L
            let smoothed = {
                use pretinex::enhance::guided_filter;
                use pretinex::image_io::luminance;
                let g = luminance(low).unwrap();
                let f = guided_filter(lmap.as_tensor(), &g, ecfg.guided_radius, ecfg.guided_eps).unwrap();
                pretinex::enhance::IlluminationMap::new(f).unwrap()
            };
            let mut pre = Tensor::zeros(Shape4::new(1, 1, sdim.h, sdim.w));
            for (v, &l) in pre.data_mut().iter_mut().zip(smoothed.as_tensor().data()) {
                *v = level * l.max(ecfg.epsilon_div);
            }
            let cmap = NoiseLevelMap::new(pre).unwrap();
            let enhanced = enhance_with_maps(low, &lmap, &cmap, &ecfg).unwrap();
            total += psnr(&enhanced, clean, 1.0).unwrap();
        }
        let m = total / images.len() as f64;
        print!(" {level}:{m:.2}");
        best_const_b = best_const_b.max(m);
    }
    println!();
    println!("(b) NM vs best final const: {:.3} dB (need >= -0.2)", nm_mean - best_const_b);

    // criterion 9 timing
    let clean = generate_scene(128, 128, 777);
    let params = SynthParams {
        t: 0.35,
        sigma_s: 0.08,
        sigma_c: 0.03,
        crf: &crfs[0],
        phase: BayerPhase::Rggb,
        seed: 99,
    };
    let (low128, _) = synthesize_lowlight(&clean, &params).unwrap();
    let mut low = Tensor::zeros(Shape4::new(1, 3, 129, 129));
    for c in 0..3 {
        for y in 0..129 {
            for x in 0..129 {
                *low.at_mut(0, c, y, x) = low128.at(0, c, y.min(127), x.min(127));
            }
        }
    }
    for round in 0..3 {
        let t0 = Instant::now();
        let (lmap, nmap) = infer_maps(&models, &low, &prog, 4, 1).unwrap();
        let _ = enhance_with_maps(&low, &lmap, &nmap, &ecfg).unwrap();
        println!("129x129 K=4 enhance round {round}: {:.3}s", t0.elapsed().as_secs_f64());
    }
    std::fs::remove_dir_all(&root).ok();
}
