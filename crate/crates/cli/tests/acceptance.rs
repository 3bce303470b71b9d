//! Acceptance criteria, run in order with one PASS/FAIL line each.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use ndarray::Array2;
use spikediff::config::RunConfig;
use spikediff::dataset::RegionLabel;
use spikediff::diffusion::{
    make_schedule, DenoiserConfig, DenoiserParams, LatentAeConfig, LatentAeParams, DEFAULT_BETA_HI, DEFAULT_BETA_LO,
};
use spikediff::hvae::{gauss_kl, GaussianStats, HvaeConfig, HvaeParams};
use spikediff::nn::Parameters;
use spikediff::pipeline::{
    ablate_regions, compare_flat_vae, generate_data, run_decoding, shuffle_responses, train_image_models, ImageModels,
    SemanticConfig, SemanticFeatureModel, Split, SyntheticData,
};
use spikediff::ppm::Image;
use spikediff::regression::{ridge_fit_with, RidgeOptions};
use spikediff::rng;

type Check = std::result::Result<String, String>;

const SEEDS: [u64; 3] = [0, 1, 2];
const PIPELINE: [&str; 8] =
    ["gen-data", "psth", "train-hvae", "train-diffusion", "fit-stage1", "fit-stage2", "reconstruct", "eval"];

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_time(started: Instant, limit: Duration, detail: String) -> Check {
    let took = started.elapsed();
    ensure(took < limit, format!("{detail}; {:.1}s of {}s allowed", took.as_secs_f64(), limit.as_secs()))
}

fn ridge_oracle() -> Check {
    let t0 = Instant::now();
    let raw = RidgeOptions { standardize: false, fit_intercept: false };
    let mut worst = 0.0f64;
    for case in 0..25u64 {
        let n = 21 + (case as usize * 13) % 30;
        let u = 1 + (case as usize * 7) % 20;
        let lambda = [1e-3, 0.1, 5.0][case as usize % 3];
        let mut r = rng::stream(case, 0xAC);
        let x = Array2::from_shape_vec((n, u), rng::gaussian_vec(&mut r, n * u)).unwrap();
        let y = Array2::from_shape_vec((n, 4), rng::gaussian_vec(&mut r, n * 4)).unwrap();
        let m = ridge_fit_with(x.view(), y.view(), lambda, raw).map_err(|e| e.to_string())?;
        let w = common::normal_equations(&x, &y, lambda * n as f64);
        worst = worst.max(common::rel_err(&m.weights, &w));
    }
    let ok = worst <= 1e-8;
    within_time(t0, Duration::from_secs(5), format!("worst relative error {worst:.2e} over 25 instances"))
        .and_then(|d| ensure(ok, d))
}

fn image_batch(n: usize, h: usize, w: usize, seed: u64) -> Vec<Image> {
    let mut r = rng::stream(seed, 0);
    (0..n)
        .map(|_| Image::new(h, w, 1, rng::gaussian_vec(&mut r, h * w).iter().map(|g| 0.5 + 0.2 * g.tanh()).collect()).unwrap())
        .collect()
}

fn gradients() -> Check {
    let t0 = Instant::now();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut record = |model: &'static str, report: Vec<(String, f64)>| {
        let w = report.iter().map(|(_, e)| *e).fold(0.0, f64::max);
        worst.insert(model, w);
    };

    let mut hv = HvaeParams::new(
        HvaeConfig { height: 2, width: 2, channels: 1, widths: vec![2, 3], enc_hidden: 3, dec_hidden: 3 },
        11,
    )
    .unwrap();
    for (i, t) in hv.tensors_mut().into_iter().enumerate() {
        t.mapv_inplace(|v| v * 1.5 + 0.05 * ((i % 3) as f64 - 1.0));
    }
    let imgs = image_batch(2, 2, 2, 1);
    let refs: Vec<&Image> = imgs.iter().collect();
    let (_, g) = hv.loss_and_grad(&refs, 42).unwrap();
    record("hvae", common::gradcheck(&hv, &g, 1e-5, 1e-8, |q| q.loss_and_grad(&refs, 42).unwrap().0));

    let ae = LatentAeParams::new(LatentAeConfig { height: 4, width: 8, channels: 1, latent_channels: 2, hidden: 5 }, 3).unwrap();
    let imgs = image_batch(3, 4, 8, 2);
    let refs: Vec<&Image> = imgs.iter().collect();
    let (_, g) = ae.loss_and_grad(&refs).unwrap();
    record("autoencoder", common::gradcheck(&ae, &g, 1e-5, 1e-8, |q| q.loss_and_grad(&refs).unwrap().0));

    let cfg = SemanticConfig { hidden: 4, feature_len: 3, ..SemanticConfig::default() };
    let sem = SemanticFeatureModel::new(9, 3, &cfg, 5).unwrap();
    let imgs = image_batch(4, 3, 3, 3);
    let refs: Vec<&Image> = imgs.iter().collect();
    let labels = [0, 2, 1, 2];
    let (_, g) = sem.loss_and_grad(&refs, &labels).unwrap();
    record("semantic", common::gradcheck(&sem, &g, 1e-5, 1e-8, |q| q.loss_and_grad(&refs, &labels).unwrap().0));

    let mut den = DenoiserParams::new(DenoiserConfig { latent_len: 3, cond_len: 2, time_dim: 4, hidden: 5 }, 8).unwrap();
    den.output.w.mapv_inplace(|v| v * 10.0);
    let sched = make_schedule(10, 1e-3, 0.2).unwrap();
    let mut r = rng::stream(4, 0);
    let mut mat = |rows, cols| Array2::from_shape_vec((rows, cols), rng::gaussian_vec(&mut r, rows * cols)).unwrap();
    let (z0, eps, c) = (mat(3, 3), mat(3, 3), mat(3, 2));
    let ts = [1, 6, 10];
    let (_, g) = den.loss_and_grad(&z0, &ts, &eps, &c, &sched).unwrap();
    record("denoiser", common::gradcheck(&den, &g, 1e-5, 1e-8, |q| q.loss_and_grad(&z0, &ts, &eps, &c, &sched).unwrap().0));

    let detail = worst.iter().map(|(m, e)| format!("{m} {e:.1e}")).collect::<Vec<_>>().join(", ");
    let ok = worst.values().all(|e| *e <= 1e-4);
    within_time(t0, Duration::from_secs(60), format!("worst relative error per model: {detail}")).and_then(|d| ensure(ok, d))
}

fn diffusion_fidelity() -> Check {
    let t0 = Instant::now();
    let sched = make_schedule(50, DEFAULT_BETA_LO, DEFAULT_BETA_HI).unwrap();
    let n = 20_000usize;
    let nf = n as f64;
    let sv = (2.0 / (nf - 1.0)).sqrt();
    let mut worst_z = 0.0f64;
    for t in [1, 25, 50] {
        let ((mi, vi), (mj, vj)) = common::forward_moments(&sched, 1.5, t, n, 7);
        worst_z = worst_z.max((mi - mj).abs() / (vi / nf + vj / nf).sqrt());
        worst_z = worst_z.max((vi - vj).abs() / (sv * (vi * vi + vj * vj).sqrt()));
        // z0 ~ N(0, 1) must stay at unit variance
        let mut r = rng::stream(3, t as u64);
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                let z0 = spikediff::diffusion::LatentImage::flat(vec![rng::gaussian(&mut r)]);
                spikediff::diffusion::forward_jump(&z0, t, &[rng::gaussian(&mut r)], &sched).unwrap().values[0]
            })
            .collect();
        worst_z = worst_z.max((common::variance(&samples) - 1.0).abs() / sv);
    }
    within_time(t0, Duration::from_secs(30), format!("largest deviation {worst_z:.2} sigma (limit 4)"))
        .and_then(|d| ensure(worst_z <= 4.0, d))
}

fn kl_closed_forms() -> Check {
    let g = |m: f64, v: f64| GaussianStats { mean: ndarray::arr1(&[m]), log_var: ndarray::arr1(&[v.ln()]) };
    let cases = [(g(0.0, 1.0), 0.0), (g(1.0, 1.0), 0.5), (g(0.0, 2.0), (1.0 - 2f64.ln()) / 2.0)];
    let mut worst = 0.0f64;
    for (q, want) in cases {
        worst = worst.max((gauss_kl(&q, &g(0.0, 1.0)).map_err(|e| e.to_string())? - want).abs());
    }
    ensure(worst <= 1e-9, format!("worst absolute error {worst:.1e}"))
}

/// Artifacts of the default CLI pipeline, produced once and shared.
struct DefaultRun {
    out: PathBuf,
    elapsed: Duration,
}

fn spikediff(cmd: &str, args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_spikediff")).arg(cmd).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("`spikediff {cmd}` failed: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn default_run(scratch: &Path, cache: &Mutex<Option<Arc<DefaultRun>>>) -> std::result::Result<Arc<DefaultRun>, String> {
    let mut slot = cache.lock().unwrap();
    if let Some(r) = slot.as_ref() {
        return Ok(r.clone());
    }
    let out = scratch.join("default");
    let t0 = Instant::now();
    for cmd in PIPELINE {
        spikediff(cmd, &["--out", out.to_str().unwrap()])?;
    }
    let run = Arc::new(DefaultRun { out, elapsed: t0.elapsed() });
    *slot = Some(run.clone());
    Ok(run)
}

fn manifest_wiring(run: &DefaultRun) -> Check {
    let text = std::fs::read_to_string(run.out.join("manifests/reconstruct.json")).map_err(|e| e.to_string())?;
    let m: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let t_start = m["img2img_t_start"].as_u64();
    let weights = m["conditioning_weights"].clone();
    let ok = t_start == Some(37) && m["diffusion_steps"].as_u64() == Some(50) && weights == serde_json::json!([0.6, 0.4]);
    ensure(ok, format!("t_start {t_start:?} of {}, weights {weights}", m["diffusion_steps"]))
}

fn hierarchy_beats_flat() -> Check {
    let t0 = Instant::now();
    let mut lines = Vec::new();
    let mut wins = 0;
    for seed in SEEDS {
        let cfg = RunConfig { seed, ..RunConfig::default() };
        let data = generate_data(&cfg, seed).map_err(|e| e.to_string())?;
        let split = Split::blocked(cfg.data.frames, cfg.data.train_fraction).map_err(|e| e.to_string())?;
        let c = compare_flat_vae(&data, &split, &cfg, seed).map_err(|e| e.to_string())?;
        if !c.params_matched {
            return Err(format!("seed {seed}: parameter ratio {:.3} is not matched", c.param_ratio));
        }
        wins += (c.hierarchical.heldout_mse < c.flat.heldout_mse) as usize;
        lines.push(format!("seed {seed} {:.5} vs {:.5}", c.hierarchical.heldout_mse, c.flat.heldout_mse));
    }
    let detail = format!("{wins}/3 wins ({})", lines.join("; "));
    within_time(t0, Duration::from_secs(600), detail).and_then(|d| ensure(wins == 3, d))
}

type SeedCache = Mutex<BTreeMap<u64, Arc<(SyntheticData, ImageModels)>>>;

fn seed_models(seed: u64, cache: &SeedCache) -> std::result::Result<Arc<(SyntheticData, ImageModels)>, String> {
    if let Some(hit) = cache.lock().unwrap().get(&seed) {
        return Ok(hit.clone());
    }
    let cfg = RunConfig { seed, ..RunConfig::default() };
    let data = generate_data(&cfg, seed).map_err(|e| e.to_string())?;
    let split = Split::blocked(cfg.data.frames, cfg.data.train_fraction).map_err(|e| e.to_string())?;
    let models = train_image_models(&data.movie, &split, &cfg, seed).map_err(|e| e.to_string())?;
    let entry = Arc::new((data, models));
    cache.lock().unwrap().insert(seed, entry.clone());
    Ok(entry)
}

fn region_ablation(cache: &SeedCache) -> Check {
    let t0 = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in SEEDS {
        let cfg = RunConfig { seed, ..RunConfig::default() };
        let info = &cfg.encoding.region_information;
        let info_of = |r: &RegionLabel| info.get(r).copied().unwrap_or(0.0);
        let high = *RegionLabel::ALL.iter().max_by(|a, b| info_of(a).total_cmp(&info_of(b))).unwrap();
        let zero = *RegionLabel::ALL.iter().find(|r| info_of(r) == 0.0).ok_or("no zero-information region")?;
        let entry = seed_models(seed, cache)?;
        let split = Split::blocked(cfg.data.frames, cfg.data.train_fraction).map_err(|e| e.to_string())?;
        let mut subsets: Vec<Vec<RegionLabel>> = RegionLabel::ALL.iter().map(|r| vec![*r]).collect();
        subsets.push(RegionLabel::ALL.to_vec());
        let rows = ablate_regions(&entry.0, &entry.1, &split, &cfg, &subsets, seed).map_err(|e| e.to_string())?;
        let id = |i: usize| rows[i].final_metrics.identification;
        let idx = |r: RegionLabel| RegionLabel::ALL.iter().position(|x| *x == r).unwrap();
        let best_single = (0..RegionLabel::ALL.len()).map(id).fold(f64::NEG_INFINITY, f64::max);
        let all = id(RegionLabel::ALL.len());
        let (hi, lo) = (id(idx(high)), id(idx(zero)));
        ok &= hi >= lo + 0.15 && all >= best_single - 0.02;
        lines.push(format!("seed {seed} {} {hi:.3} vs {} {lo:.3}, all {all:.3} vs best {best_single:.3}", high.code(), zero.code()));
    }
    within_time(t0, Duration::from_secs(900), lines.join("; ")).and_then(|d| ensure(ok, d))
}

fn null_safety(cache: &SeedCache) -> Check {
    let cfg = RunConfig::default();
    let entry = seed_models(cfg.seed, cache)?;
    let (data, models) = (&entry.0, &entry.1);
    let split = Split::blocked(cfg.data.frames, cfg.data.train_fraction).map_err(|e| e.to_string())?;
    let shuffled = shuffle_responses(&data.responses, 0x5EED);
    let run = run_decoding(&shuffled, &data.movie, models, &split, &cfg, cfg.seed).map_err(|e| e.to_string())?;
    let truths: Vec<Image> = split.test.iter().map(|&i| data.movie.frames[i].clone()).collect();
    let perms = cfg.eval.permutations;
    let latent = run.latent_null(perms, 1).map_err(|e| e.to_string())?;
    let ident = run.identification_null(&truths, perms, 2).map_err(|e| e.to_string())?;
    ensure(
        perms == 1000 && latent.inside() && ident.inside(),
        format!(
            "latent r {:.3} in [{:.3}, {:.3}], identification {:.3} in [{:.3}, {:.3}], {perms} permutations",
            latent.observed, latent.null_lo, latent.null_hi, ident.observed, ident.null_lo, ident.null_hi
        ),
    )
}

fn read_long_metric(path: &Path, experiment: &str, metric: &str) -> std::result::Result<f64, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    text.lines()
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|f| f.len() == 5 && f[0] == experiment && f[1] == "all" && f[2] == "all" && f[3] == metric)
        .and_then(|f| f[4].parse().ok())
        .ok_or_else(|| format!("{experiment}/{metric} missing from {}", path.display()))
}

fn two_stage_benefit(run: &DefaultRun) -> Check {
    let eval = run.out.join("metrics/eval.csv");
    let get = |e: &str, m: &str| read_long_metric(&eval, e, m);
    let (r1, rf) = (get("stage1", "mean_correlation")?, get("final", "mean_correlation")?);
    let (s1, sf) = (get("stage1", "semantic_accuracy")?, get("final", "semantic_accuracy")?);
    let summary = std::fs::read_to_string(run.out.join("metrics/eval_summary.csv")).map_err(|e| e.to_string())?;
    let layout: f64 = summary
        .lines()
        .find_map(|l| l.strip_prefix("final_vs_stage1_downsampled_correlation,"))
        .and_then(|rest| rest.split(',').next()?.parse().ok())
        .ok_or("downsampled correlation missing")?;
    ensure(
        (rf > r1 || sf > s1) && layout >= 0.5,
        format!("pixel r {r1:.3} -> {rf:.3}, semantic accuracy {s1:.3} -> {sf:.3}, 4x layout r {layout:.3}"),
    )
}

fn files_under(root: &Path, dirs: &[&str]) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for d in dirs {
        let mut stack = vec![root.join(d)];
        while let Some(dir) = stack.pop() {
            for e in std::fs::read_dir(&dir).into_iter().flatten().flatten() {
                let p = e.path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push(p.strip_prefix(root).unwrap().to_path_buf());
                }
            }
        }
    }
    out.sort();
    out
}

fn reproducibility(run: &DefaultRun, scratch: &Path) -> Check {
    let again = scratch.join("rerun");
    for cmd in PIPELINE {
        let manifest = run.out.join(format!("manifests/{cmd}.json"));
        spikediff(cmd, &["--config", manifest.to_str().unwrap(), "--out", again.to_str().unwrap()])?;
    }
    let files = files_under(&run.out, &["metrics", "images"]);
    let differing: Vec<_> = files
        .iter()
        .filter(|f| std::fs::read(run.out.join(f)).ok() != std::fs::read(again.join(f)).ok())
        .collect();
    let images = files.iter().filter(|f| f.starts_with("images")).count();
    let ok = differing.is_empty() && images > 0 && run.elapsed < Duration::from_secs(1200);
    ensure(
        ok,
        format!(
            "{} of {} metrics/image files differ on manifest re-run; default pipeline took {:.1}s of 1200s",
            differing.len(),
            files.len(),
            run.elapsed.as_secs_f64()
        ),
    )
}

fn main() {
    let scratch = tempfile::tempdir().expect("temp dir");
    let pipeline_cache = Mutex::new(None);
    let seed_cache: SeedCache = Mutex::new(BTreeMap::new());
    let with_run = |f: &dyn Fn(&DefaultRun) -> Check| default_run(scratch.path(), &pipeline_cache).and_then(|r| f(&r));

    let criteria: Vec<(&str, Box<dyn Fn() -> Check + '_>)> = vec![
        ("ridge matches normal-equations oracle", Box::new(ridge_oracle)),
        ("gradients match finite differences", Box::new(gradients)),
        ("forward steps match closed-form jump", Box::new(diffusion_fidelity)),
        ("Gaussian KL closed forms", Box::new(kl_closed_forms)),
        ("manifest records t_start 37 and weights 0.6/0.4", Box::new(|| with_run(&manifest_wiring))),
        ("hierarchical VAE beats flat VAE", Box::new(hierarchy_beats_flat)),
        ("region ablation ordering", Box::new(|| region_ablation(&seed_cache))),
        ("shuffled responses stay inside the null", Box::new(|| null_safety(&seed_cache))),
        ("two-stage benefit and layout preservation", Box::new(|| with_run(&two_stage_benefit))),
        ("manifest re-run is bit-identical", Box::new(|| with_run(&|r| reproducibility(r, scratch.path())))),
    ];

    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = check();
        let secs = t0.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failed += outcome.is_err() as usize;
        println!("criterion {:>2} {tag}: {name} | {detail} [{secs:.1}s]", i + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
