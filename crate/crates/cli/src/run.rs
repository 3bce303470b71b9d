use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use spikediff::config::RunConfig;
use spikediff::dataset::{
    load_spike_file, psth, psth_csv_string, read_movie_dir, spike_csv_string, RegionLabel, ResponseMatrix,
    SessionRecording, StimulusMovie,
};
use spikediff::diffusion::{train_autoencoder, train_denoiser, DenoiserParams, LatentAeParams};
use spikediff::hvae::{reconstruction_mse, train_hvae, HvaeParams};
use spikediff::manifest::{sha256_file, Manifest};
use spikediff::matfile;
use spikediff::nn::Parameters;
use spikediff::pipeline::{
    self, ablate_regions, compare_flat_vae, evaluate, fit_stage1, fit_stage2, generate_data, reconstruct,
    responses_for, stage2_settings, ImageModels, MetricsTable, SemanticFeatureModel, Split, Stage1Model,
    Stage2Model, SyntheticData,
};
use spikediff::ppm::{self, Image};
use spikediff::regression::{CvReport, RidgeModel};
use spikediff::{rng, Error, Result};

use crate::Common;

const MOVIE_DIR: &str = "data/movie";
const SPIKE_DIR: &str = "data/spikes";
const HVAE: &str = "models/hvae.spkd";
const SEMANTIC: &str = "models/semantic.spkd";
const AUTOENCODER: &str = "models/autoencoder.spkd";
const DENOISER: &str = "models/denoiser.spkd";
const STAGE1: &str = "models/stage1_ridge.spkd";
const STAGE2_VISION: &str = "models/stage2_vision_ridge.spkd";
const STAGE2_TEXT: &str = "models/stage2_text_ridge.spkd";
const STAGE1_IMAGES: &str = "images/stage1";
const FINAL_IMAGES: &str = "images/final";

/// Which subcommand produces an artifact, for missing-artifact hints.
fn producer(rel: &str) -> &'static str {
    match rel {
        r if r.starts_with("data/") => "gen-data",
        r if r.starts_with(HVAE) => "train-hvae",
        r if r.starts_with(STAGE1) => "fit-stage1",
        r if r.starts_with("models/stage2") => "fit-stage2",
        r if r.starts_with("models/") => "train-diffusion",
        r if r.starts_with("images/") => "reconstruct",
        _ => "an upstream command",
    }
}

struct Run {
    root: PathBuf,
    cfg: RunConfig,
    manifest: Manifest,
    /// Output digests recorded by earlier manifests, consulted under `--verify`.
    recorded: Option<BTreeMap<String, (String, String)>>,
}

pub fn execute(command: &str, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let root = common.out.clone();
    let manifest_path = root.join(format!("manifests/{command}.json"));
    if manifest_path.exists() {
        return Err(Error::AlreadyExists(manifest_path));
    }
    let recorded = if common.verify { Some(recorded_outputs(&root)?) } else { None };
    let mut run = Run { manifest: Manifest::new(command, &cfg)?, root, cfg, recorded };
    match command {
        "gen-data" => gen_data(&mut run)?,
        "psth" => cmd_psth(&mut run)?,
        "train-hvae" => train_hvae_cmd(&mut run)?,
        "fit-stage1" => fit_stage1_cmd(&mut run)?,
        "fit-stage2" => fit_stage2_cmd(&mut run)?,
        "train-diffusion" => train_diffusion_cmd(&mut run)?,
        "reconstruct" => reconstruct_cmd(&mut run)?,
        "ablate" => ablate_cmd(&mut run)?,
        "compare-vae" => compare_vae_cmd(&mut run)?,
        "eval" => eval_cmd(&mut run)?,
        other => return Err(Error::Validation(format!("unknown command {other}"))),
    }
    run.manifest.save(&manifest_path)?;
    eprintln!("wrote {}", manifest_path.display());
    Ok(())
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let text = match &common.config {
        None => String::new(),
        Some(p) if p.extension().is_some_and(|e| e == "json") => Manifest::load(p)?.config.to_toml_string(),
        Some(p) => {
            let bytes = matfile::read_artifact(p)?;
            String::from_utf8(bytes).map_err(|_| Error::Validation(format!("{} is not UTF-8", p.display())))?
        }
    };
    let mut overrides = common.set.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    RunConfig::from_toml_with_overrides(&text, &overrides)
}

fn recorded_outputs(root: &Path) -> Result<BTreeMap<String, (String, String)>> {
    let mut out = BTreeMap::new();
    let dir = root.join("manifests");
    let Ok(entries) = fs::read_dir(&dir) else {
        return Ok(out);
    };
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths.into_iter().filter(|p| p.extension().is_some_and(|e| e == "json")) {
        let m = Manifest::load(&p)?;
        for (rel, hash) in m.outputs {
            out.insert(rel, (hash, m.command.clone()));
        }
    }
    Ok(out)
}

impl Run {
    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Registers an input file: checks it exists, verifies it when asked, and
    /// records its digest.
    fn input(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if !p.exists() {
            return Err(Error::MissingArtifact {
                path: p,
                hint: format!("run `spikediff {}` with the same --out first", producer(rel)),
            });
        }
        let hash = sha256_file(&p)?;
        if let Some(rec) = &self.recorded {
            match rec.get(rel) {
                Some((want, _)) if *want == hash => {}
                Some((_, by)) => {
                    return Err(Error::Validation(format!("{} changed since `{by}` wrote it", p.display())));
                }
                None => {
                    return Err(Error::Validation(format!("{} is not recorded in any manifest", p.display())));
                }
            }
        }
        self.manifest.inputs.insert(rel.to_string(), hash);
        Ok(p)
    }

    fn model_input(&mut self, rel: &str) -> Result<PathBuf> {
        self.input(&format!("{rel}.json"))?;
        self.input(rel)
    }

    fn output(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        matfile::write_new(&self.path(rel), bytes)?;
        self.manifest.add_output(&self.root, rel)
    }

    /// Records a model container and its sidecar after `save` wrote them.
    fn saved_model(&mut self, rel: &str) -> Result<()> {
        self.manifest.add_output(&self.root, rel)?;
        self.manifest.add_output(&self.root, &format!("{rel}.json"))
    }

    fn split(&self) -> Result<Split> {
        Split::blocked(self.cfg.data.frames, self.cfg.data.train_fraction)
    }

    fn movie(&mut self) -> Result<StimulusMovie> {
        self.input(&format!("{MOVIE_DIR}/onsets.csv"))?;
        let movie = read_movie_dir(&self.path(MOVIE_DIR), self.cfg.data.channels)?;
        for i in 0..movie.len() {
            self.input(&format!("{MOVIE_DIR}/frame_{i:06}.ppm"))?;
        }
        if movie.len() != self.cfg.data.frames {
            return Err(Error::Validation(format!(
                "movie has {} frames but the config expects {}",
                movie.len(),
                self.cfg.data.frames
            )));
        }
        Ok(movie)
    }

    fn recordings(&mut self) -> Result<Vec<SessionRecording>> {
        let dir = self.path(SPIKE_DIR);
        let entries = fs::read_dir(&dir).map_err(|_| Error::MissingArtifact {
            path: dir.clone(),
            hint: "run `spikediff gen-data` with the same --out first".into(),
        })?;
        let mut names: Vec<String> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".csv"))
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(Error::MissingArtifact { path: dir, hint: "no spike files; run `spikediff gen-data` first".into() });
        }
        names
            .iter()
            .map(|n| {
                let p = self.input(&format!("{SPIKE_DIR}/{n}"))?;
                load_spike_file(&p)
            })
            .collect()
    }

    fn responses(&mut self, movie: &StimulusMovie) -> Result<(Vec<SessionRecording>, ResponseMatrix)> {
        let recs = self.recordings()?;
        let r = responses_for(&recs, movie, self.cfg.encoding.latency_s)?;
        Ok((recs, r))
    }

    fn hvae(&mut self) -> Result<HvaeParams> {
        let p = self.model_input(HVAE)?;
        HvaeParams::load(&p)
    }

    fn image_models(&mut self) -> Result<ImageModels> {
        let hvae = self.hvae()?;
        let p = self.model_input(SEMANTIC)?;
        let semantic = SemanticFeatureModel::load(&p)?;
        let p = self.model_input(AUTOENCODER)?;
        let ae = LatentAeParams::load(&p)?;
        let p = self.model_input(DENOISER)?;
        let denoiser = DenoiserParams::load(&p)?;
        Ok(ImageModels {
            hvae: Arc::new(hvae),
            ae: Arc::new(ae),
            semantic: Arc::new(semantic),
            denoiser: Arc::new(denoiser),
            schedule: self.cfg.schedule()?,
        })
    }
}

fn gen_data(run: &mut Run) -> Result<()> {
    let data = generate_data(&run.cfg, run.cfg.seed)?;
    let mut onsets = String::from("frame_index,onset_s,label\n");
    for (i, (frame, onset)) in data.movie.frames.iter().zip(&data.movie.frame_onsets).enumerate() {
        run.output(&format!("{MOVIE_DIR}/frame_{i:06}.ppm"), &ppm::encode(frame))?;
        let label = data.movie.frame_labels.as_ref().map(|l| l[i].to_string()).unwrap_or_default();
        writeln!(onsets, "{i},{onset:.9},{label}").expect("string write");
    }
    run.output(&format!("{MOVIE_DIR}/onsets.csv"), onsets.as_bytes())?;
    for rec in &data.recordings {
        run.output(&format!("{SPIKE_DIR}/{}.csv", rec.session_id), spike_csv_string(rec).as_bytes())?;
    }
    eprintln!(
        "{} frames, {} sessions, {} responsive units",
        data.movie.len(),
        data.recordings.len(),
        data.responses.unit_count()
    );
    Ok(())
}

fn cmd_psth(run: &mut Run) -> Result<()> {
    let movie = run.movie()?;
    let recs = run.recordings()?;
    let merged = SessionRecording {
        session_id: "all".into(),
        units: recs.into_iter().flat_map(|r| r.units).collect(),
    };
    let p = run.cfg.psth.clone();
    let onsets: Vec<f64> = movie.frame_onsets.iter().step_by(p.trial_stride).copied().collect();
    let mut summary = String::from("region,peak_bin_lo_s,peak_mean_count,baseline_mean_count\n");
    for region in RegionLabel::ALL {
        let h = match psth(&merged, region, &onsets, (p.window_lo_s, p.window_hi_s), p.bin_width_s) {
            Ok(h) => h,
            Err(Error::EmptySelection(_)) => continue,
            Err(e) => return Err(e),
        };
        run.output(&format!("metrics/psth_{}.csv", region.code()), psth_csv_string(&h).as_bytes())?;
        let (peak_i, peak) = h
            .mean_counts
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
        let pre: Vec<f64> = h.mean_counts.iter().zip(&h.bin_edges).filter(|(_, &e)| e < 0.0).map(|(c, _)| *c).collect();
        let baseline = if pre.is_empty() { f64::NAN } else { pre.iter().sum::<f64>() / pre.len() as f64 };
        writeln!(summary, "{},{},{},{}", region.code(), h.bin_edges[peak_i], peak, baseline).expect("string write");
    }
    run.output("metrics/psth_summary.csv", summary.as_bytes())
}

fn loss_csv(curve: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in curve.iter().enumerate() {
        writeln!(s, "{i},{l}").expect("string write");
    }
    s
}

fn split_frames(movie: &StimulusMovie, idx: &[usize]) -> Vec<Image> {
    idx.iter().map(|&i| movie.frames[i].clone()).collect()
}

fn train_hvae_cmd(run: &mut Run) -> Result<()> {
    let movie = run.movie()?;
    let split = run.split()?;
    let seed = run.cfg.seed;
    let mut p = HvaeParams::new(run.cfg.hvae_config(), rng::mix(seed, 0x11))?;
    let curve = train_hvae(&mut p, &split_frames(&movie, &split.train), &run.cfg.hvae_sgd(rng::mix(seed, 0x12)))?;
    let mse = reconstruction_mse(&p, &split_frames(&movie, &split.test))?;
    p.save(&run.path(HVAE))?;
    run.saved_model(HVAE)?;
    run.output("metrics/hvae_loss.csv", loss_csv(&curve).as_bytes())?;
    let summary = format!("metric,value\nparams,{}\nheldout_reconstruction_mse,{mse}\n", p.param_count());
    run.output("metrics/hvae.csv", summary.as_bytes())?;
    eprintln!("held-out reconstruction MSE {mse:.5}");
    Ok(())
}

fn cv_csv(name: &str, cv: &CvReport) -> String {
    let mut s = String::new();
    for (l, m) in cv.lambda_grid.iter().zip(&cv.mean_mse) {
        writeln!(s, "{name},{l},{m},{}", (*l == cv.selected_lambda) as u8).expect("string write");
    }
    s
}

fn fit_stage1_cmd(run: &mut Run) -> Result<()> {
    let movie = run.movie()?;
    let (_, responses) = run.responses(&movie)?;
    let hvae = Arc::new(run.hvae()?);
    let split = run.split()?;
    let c = &run.cfg;
    let m = fit_stage1(&responses, &movie, hvae, c.hvae.k, &c.ridge.lambda_grid, c.ridge.folds, &split)?;
    m.ridge.save(&run.path(STAGE1))?;
    run.saved_model(STAGE1)?;
    let mut csv = String::from("target,lambda,mean_cv_mse,selected\n");
    csv += &cv_csv("stage1_latents", m.cv.as_ref().expect("fresh fit has a report"));
    run.output("metrics/stage1_cv.csv", csv.as_bytes())
}

fn train_diffusion_cmd(run: &mut Run) -> Result<()> {
    let movie = run.movie()?;
    let split = run.split()?;
    let cfg = run.cfg.clone();
    let seed = cfg.seed;
    let sem = pipeline::train_semantic(&movie, &split, &cfg, seed)?;
    let mut ae = LatentAeParams::new(cfg.ae_config(), rng::mix(seed, 0x31))?;
    let train = split_frames(&movie, &split.train);
    let ae_curve = train_autoencoder(&mut ae, &train, &cfg.ae_sgd(rng::mix(seed, 0x32)))?;
    let test = split_frames(&movie, &split.test);
    let mut ae_mse = 0.0;
    for img in &test {
        let r = spikediff::diffusion::ae_decode(&ae, &spikediff::diffusion::ae_encode(&ae, img)?)?;
        ae_mse += pipeline::metrics::mse(&r.data, &img.data);
    }
    ae_mse /= test.len() as f64;
    let cond = pipeline::ground_truth_conditioning(&movie, &split.train, &sem, &cfg)?;
    let latents = ae.encode_matrix(&train.iter().collect::<Vec<_>>())?;
    let mut den = DenoiserParams::new(cfg.denoiser_config(), rng::mix(seed, 0x41))?;
    let den_curve = train_denoiser(&mut den, &latents, &cond, &cfg.schedule()?, &cfg.denoiser_sgd(rng::mix(seed, 0x42)))?;
    sem.save(&run.path(SEMANTIC))?;
    run.saved_model(SEMANTIC)?;
    ae.save(&run.path(AUTOENCODER))?;
    run.saved_model(AUTOENCODER)?;
    den.save(&run.path(DENOISER))?;
    run.saved_model(DENOISER)?;
    run.output("metrics/autoencoder_loss.csv", loss_csv(&ae_curve).as_bytes())?;
    run.output("metrics/denoiser_loss.csv", loss_csv(&den_curve).as_bytes())?;
    let summary = format!(
        "metric,value\nsemantic_heldout_accuracy,{}\nautoencoder_heldout_mse,{ae_mse}\n",
        sem.accuracy
    );
    run.output("metrics/diffusion.csv", summary.as_bytes())?;
    eprintln!("semantic accuracy {:.3}, autoencoder MSE {ae_mse:.5}", sem.accuracy);
    Ok(())
}

fn fit_stage2_cmd(run: &mut Run) -> Result<()> {
    let movie = run.movie()?;
    let (_, responses) = run.responses(&movie)?;
    let models = run.image_models()?;
    let split = run.split()?;
    let m = fit_stage2(
        &responses,
        &movie,
        &models.semantic,
        models.denoiser.clone(),
        models.ae.clone(),
        models.schedule.clone(),
        &stage2_settings(&run.cfg),
        &split,
    )?;
    m.vision.save(&run.path(STAGE2_VISION))?;
    run.saved_model(STAGE2_VISION)?;
    m.text.save(&run.path(STAGE2_TEXT))?;
    run.saved_model(STAGE2_TEXT)?;
    let mut csv = String::from("target,lambda,mean_cv_mse,selected\n");
    csv += &cv_csv("vision_features", m.vision_cv.as_ref().expect("fresh fit has a report"));
    csv += &cv_csv("text_features", m.text_cv.as_ref().expect("fresh fit has a report"));
    run.output("metrics/stage2_cv.csv", csv.as_bytes())
}

fn loaded_stages(run: &mut Run, models: &ImageModels) -> Result<(Stage1Model, Stage2Model)> {
    let p = run.model_input(STAGE1)?;
    let s1 = Stage1Model { ridge: RidgeModel::load(&p)?, cv: None, hvae: models.hvae.clone(), k: run.cfg.hvae.k };
    let p = run.model_input(STAGE2_VISION)?;
    let vision = RidgeModel::load(&p)?;
    let p = run.model_input(STAGE2_TEXT)?;
    let text = RidgeModel::load(&p)?;
    let d = &run.cfg.diffusion;
    let s2 = Stage2Model {
        vision,
        text,
        vision_cv: None,
        text_cv: None,
        denoiser: models.denoiser.clone(),
        ae: models.ae.clone(),
        schedule: models.schedule.clone(),
        strength: d.strength,
        w_vision: d.w_vision,
        w_text: d.w_text,
    };
    Ok((s1, s2))
}

fn reconstruct_cmd(run: &mut Run) -> Result<()> {
    let movie = run.movie()?;
    let (_, responses) = run.responses(&movie)?;
    let models = run.image_models()?;
    let (s1, s2) = loaded_stages(run, &models)?;
    let split = run.split()?;
    let x = split.test_rows(&responses.values);
    let rec = reconstruct(&s1, &s2, &x, rng::mix(run.cfg.seed, 0x51))?;
    for (k, &frame) in split.test.iter().enumerate() {
        run.output(&format!("{STAGE1_IMAGES}/frame_{frame:06}.ppm"), &ppm::encode(&rec.stage1[k]))?;
        run.output(&format!("{FINAL_IMAGES}/frame_{frame:06}.ppm"), &ppm::encode(&rec.final_images[k]))?;
    }
    eprintln!("reconstructed {} held-out frames", split.test.len());
    Ok(())
}

fn metrics_rows(out: &mut String, experiment: &str, subset: &str, m: &MetricsTable, frames: &[usize]) {
    for (pm, frame) in m.per_image.iter().zip(frames) {
        let mut row = |metric: &str, v: String| writeln!(out, "{experiment},{subset},{frame},{metric},{v}").expect("string write");
        row("correlation", pm.correlation.to_string());
        row("mse", pm.mse.to_string());
        row("psnr", pm.psnr.to_string());
        if let Some(l) = pm.predicted_label {
            row("predicted_label", l.to_string());
        }
    }
    let mut agg = |metric: &str, v: f64| writeln!(out, "{experiment},{subset},all,{metric},{v}").expect("string write");
    agg("mean_correlation", m.mean_correlation());
    agg("mean_mse", m.mean_mse());
    agg("mean_psnr", m.mean_psnr());
    agg("identification", m.identification);
    if let Some(a) = m.semantic_accuracy {
        agg("semantic_accuracy", a);
    }
}

const METRICS_HEADER: &str = "experiment,subset,frame,metric,value\n";

fn read_images(run: &mut Run, dir: &str, frames: &[usize]) -> Result<Vec<Image>> {
    frames
        .iter()
        .map(|f| {
            let p = run.input(&format!("{dir}/frame_{f:06}.ppm"))?;
            ppm::decode(&matfile::read_artifact(&p)?, run.cfg.data.channels)
        })
        .collect()
}

fn eval_cmd(run: &mut Run) -> Result<()> {
    let movie = run.movie()?;
    let (_, responses) = run.responses(&movie)?;
    let split = run.split()?;
    let hvae = Arc::new(run.hvae()?);
    let p = run.model_input(SEMANTIC)?;
    let sem = SemanticFeatureModel::load(&p)?;
    let p = run.model_input(STAGE1)?;
    let s1 = Stage1Model { ridge: RidgeModel::load(&p)?, cv: None, hvae: hvae.clone(), k: run.cfg.hvae.k };
    let stage1 = read_images(run, STAGE1_IMAGES, &split.test)?;
    let finals = read_images(run, FINAL_IMAGES, &split.test)?;
    let truths = split_frames(&movie, &split.test);
    let labels: Option<Vec<usize>> = movie.frame_labels.as_ref().map(|l| split.test.iter().map(|&i| l[i]).collect());
    let m1 = evaluate(&stage1, &truths, labels.as_deref(), Some(&sem))?;
    let mf = evaluate(&finals, &truths, labels.as_deref(), Some(&sem))?;
    let mut csv = String::from(METRICS_HEADER);
    metrics_rows(&mut csv, "stage1", "all", &m1, &split.test);
    metrics_rows(&mut csv, "final", "all", &mf, &split.test);
    run.output("metrics/eval.csv", csv.as_bytes())?;

    let x = split.test_rows(&responses.values);
    let pred = s1.predict_latents(&x)?;
    let truth = hvae.extract_latent_matrix(&truths.iter().collect::<Vec<_>>(), s1.k)?;
    let perms = run.cfg.eval.permutations;
    let seed = rng::mix(run.cfg.seed, 0x9E);
    let latent = pipeline::metrics::latent_correlation_null(&pred, &truth, perms, seed)?;
    let ident = pipeline::metrics::identification_null(&finals, &truths, perms, seed)?;
    let layout = pipeline::metrics::downsampled_correlation(&finals, &stage1, 4)?;
    let mut s = String::from("statistic,observed,null_lo_95,null_hi_95,p_value\n");
    for (name, t) in [("stage1_latent_correlation", &latent), ("final_identification", &ident)] {
        writeln!(s, "{name},{},{},{},{}", t.observed, t.null_lo, t.null_hi, t.p_value).expect("string write");
    }
    writeln!(s, "final_vs_stage1_downsampled_correlation,{layout},,,").expect("string write");
    run.output("metrics/eval_summary.csv", s.as_bytes())?;
    eprintln!(
        "stage-1 r={:.3} id={:.3}; final r={:.3} id={:.3}",
        m1.mean_correlation(),
        m1.identification,
        mf.mean_correlation(),
        mf.identification
    );
    Ok(())
}

fn synthetic(run: &mut Run) -> Result<SyntheticData> {
    let movie = run.movie()?;
    let (recordings, responses) = run.responses(&movie)?;
    Ok(SyntheticData { movie, recordings, responses })
}

fn ablate_cmd(run: &mut Run) -> Result<()> {
    let data = synthetic(run)?;
    let models = run.image_models()?;
    let split = run.split()?;
    let subsets = run.cfg.ablation_subsets();
    let rows = ablate_regions(&data, &models, &split, &run.cfg, &subsets, run.cfg.seed)?;
    let mut csv = String::from(METRICS_HEADER);
    let mut summary = String::from(
        "subset,units,latent_correlation,stage1_identification,final_identification,final_correlation,final_semantic_accuracy\n",
    );
    let mut seen = BTreeSet::new();
    for r in &rows {
        let name = r.name();
        if !seen.insert(name.clone()) {
            continue;
        }
        metrics_rows(&mut csv, "stage1", &name, &r.stage1, &split.test);
        metrics_rows(&mut csv, "final", &name, &r.final_metrics, &split.test);
        writeln!(
            summary,
            "{name},{},{},{},{},{},{}",
            r.units,
            r.latent_correlation,
            r.stage1.identification,
            r.final_metrics.identification,
            r.final_metrics.mean_correlation(),
            r.final_metrics.semantic_accuracy.map(|a| a.to_string()).unwrap_or_default()
        )
        .expect("string write");
        eprintln!("{name:>8}: identification {:.3}", r.final_metrics.identification);
    }
    run.output("metrics/ablation.csv", csv.as_bytes())?;
    run.output("metrics/ablation_summary.csv", summary.as_bytes())
}

fn compare_vae_cmd(run: &mut Run) -> Result<()> {
    let data = synthetic(run)?;
    let split = run.split()?;
    let report = compare_flat_vae(&data, &split, &run.cfg, run.cfg.seed)?;
    let mut csv = String::from(
        "model,widths,params,heldout_mse,stage1_correlation,stage1_identification,latent_correlation\n",
    );
    for (name, s) in [("hierarchical", &report.hierarchical), ("flat", &report.flat)] {
        let widths = s.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(
            csv,
            "{name},{widths},{},{},{},{},{}",
            s.params, s.heldout_mse, s.stage1_correlation, s.stage1_identification, s.latent_correlation
        )
        .expect("string write");
    }
    run.output("metrics/compare_vae.csv", csv.as_bytes())?;
    let json = serde_json::to_string_pretty(&report)?;
    run.output("metrics/compare_vae.json", json.as_bytes())?;
    eprintln!(
        "hierarchical MSE {:.5} vs flat {:.5} (param ratio {:.3})",
        report.hierarchical.heldout_mse, report.flat.heldout_mse, report.param_ratio
    );
    Ok(())
}
