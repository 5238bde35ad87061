use std::fs;
use std::path::{Path, PathBuf};

use msgnet::checkpoint::{load_checkpoint, save_checkpoint};
use msgnet::datakit::{
    apply_degradation, compute_offset_limits, compute_stats_report, import_darklabel, load_image, save_image,
    synth_dataset, write_annotations, Degradation, DegradationSpec, SynthOptions,
};
use msgnet::detector::{
    build_msgnet, predict_set, run_detector_ablation, train_detector, Detector, LabeledSet, LossReport,
};
use msgnet::evalkit::{evaluate_map, full_matrix, read_predictions, write_ablation_csv, write_predictions, ImagePredictions};
use msgnet::labels::SceneClass;
use msgnet::sgie::{enhancement_psnr, scene_accuracy, train_discriminator, train_enhancer, Sgie};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::RunConfig;
use crate::data::{base_dir, load_pairs, load_set, read_records, write_jsonl, LoadedSet, PairRecord};
use crate::error::{CliError, CliResult};

pub const SCENE_KIND: &str = "scene_discriminator";
pub const SGIE_KIND: &str = "sgie";
pub const DETECTOR_KIND: &str = "detector";

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Scene label that matches a degradation.
fn degraded_scene(d: &Degradation) -> SceneClass {
    match d {
        Degradation::Fog(_) => SceneClass::Foggy,
        Degradation::Rain(_) => SceneClass::Rainy,
        Degradation::Lowlight(_) => SceneClass::Light,
        Degradation::LightFogHybrid { .. } => SceneClass::Hybrid,
    }
}

pub fn analyze(config: &RunConfig, out: &Path) -> CliResult<()> {
    let ann = RunConfig::require(&config.data.annotations, "data.annotations")?;
    let records = read_records(ann)?;
    let report = compute_stats_report(&records);
    report.write(out)?;
    match compute_offset_limits(&records) {
        Ok(l) => write_json(&out.join("offset_limits.json"), &json!({ "r_x": l.r_x(), "r_y": l.r_y(), "r": l.r() }))?,
        Err(e) => log::warn!("no offset limits derived: {e}"),
    }
    log::info!("analyzed {} images / {} objects", report.images, report.objects);
    Ok(())
}

type PairItem<'a> = (String, &'a msgnet_autograd::Tensor, SceneClass);

/// Saves clean references under `clean/` and writes `pairs.jsonl`; degraded
/// images are expected under `degraded_dir/` with the same file name.
fn write_pairs(out: &Path, items: &[PairItem<'_>], degraded_dir: &str) -> CliResult<()> {
    create_dir(&out.join("clean"))?;
    let mut pairs = Vec::with_capacity(items.len());
    for (file, clean, scene) in items {
        save_image(out.join("clean").join(file), clean)?;
        pairs.push(PairRecord {
            clean: format!("clean/{file}"),
            degraded: format!("{degraded_dir}/{file}"),
            scene: *scene,
        });
    }
    write_jsonl(&out.join("pairs.jsonl"), &pairs)
}

fn file_name(path: &str) -> String {
    Path::new(path)
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}

/// Degrades every annotated image with `degrade`, writing the clean /
/// degraded pair set plus annotations pointing at the degraded copies.
pub fn degrade(config: &RunConfig, out: &Path) -> CliResult<()> {
    let seed = config.require_seed()?;
    let ann = RunConfig::require(&config.data.annotations, "data.annotations")?;
    let root = config.data.image_root.clone().unwrap_or_else(|| base_dir(ann));
    let records = read_records(ann)?;
    let scene = degraded_scene(&config.degrade.degradation);
    create_dir(&out.join("degraded"))?;
    let mut cleans = Vec::with_capacity(records.len());
    let mut out_records = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let clean = load_image(root.join(&rec.image))?;
        let spec = DegradationSpec {
            seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(config.degrade.seed).wrapping_add(i as u64),
            ..config.degrade
        };
        let file = file_name(&rec.image);
        save_image(out.join("degraded").join(&file), &apply_degradation(&clean, &spec)?)?;
        out_records.push(msgnet::datakit::ImageRecord {
            image: format!("degraded/{file}"),
            scene,
            ..rec.clone()
        });
        cleans.push((file, clean));
    }
    let items: Vec<PairItem<'_>> = cleans.iter().map(|(f, c)| (f.clone(), c, scene)).collect();
    write_pairs(out, &items, "degraded")?;
    write_annotations(out.join("annotations.jsonl"), &out_records)?;
    log::info!("degraded {} images as {}", records.len(), scene.as_str());
    Ok(())
}

/// Renders a synthetic scene set: observed images with annotations, plus
/// clean references and pairs for the degraded scenes.
pub fn synth(config: &RunConfig, out: &Path) -> CliResult<()> {
    let seed = config.require_seed()?;
    let s = &config.synth;
    let opts = SynthOptions::new(s.width, s.height, s.max_objects).with_min_side(s.min_side);
    let samples = synth_dataset(s.count, &opts, &s.scenes, seed)?;
    create_dir(&out.join("images"))?;
    let mut records = Vec::with_capacity(samples.len());
    for smp in &samples {
        save_image(out.join("images").join(&smp.record.image), &smp.image)?;
        records.push(msgnet::datakit::ImageRecord {
            image: format!("images/{}", smp.record.image),
            ..smp.record.clone()
        });
    }
    write_annotations(out.join("annotations.jsonl"), &records)?;
    // Clear-weather scenes have no degradation to undo, so they form no pair.
    let items: Vec<PairItem<'_>> = samples
        .iter()
        .filter(|smp| !matches!(smp.record.scene, SceneClass::Sunny | SceneClass::Cloudy))
        .map(|smp| (smp.record.image.clone(), &smp.clean, smp.record.scene))
        .collect();
    write_pairs(out, &items, "images")?;
    log::info!("rendered {} synthetic images", samples.len());
    Ok(())
}

pub fn convert_darklabel(config: &RunConfig, out: &Path) -> CliResult<()> {
    let d = &config.darklabel;
    let csv = RunConfig::require(&d.csv, "darklabel.csv")?;
    let text = fs::read_to_string(csv).map_err(|e| CliError::io(csv, e))?;
    let records = import_darklabel(&text, &d.image_template, d.width, d.height, d.scene)?;
    write_annotations(out.join("annotations.jsonl"), &records)?;
    log::info!("converted {} frames", records.len());
    Ok(())
}

fn new_sgie(config: &RunConfig, seed: u64) -> CliResult<Sgie> {
    Ok(Sgie::new(config.detector.sgie.clone(), &mut ChaCha8Rng::seed_from_u64(seed))?)
}

fn loss_csv(losses: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{i},{l:.8}\n"));
    }
    s
}

pub fn train_scene(config: &RunConfig, out: &Path) -> CliResult<()> {
    let seed = config.require_seed()?;
    let set = load_set(config, 1)?;
    let [train, val, test] = set.split(config.data.split, seed)?;
    let sgie = new_sgie(config, seed)?;
    let labels = |s: &LoadedSet| s.records.iter().map(|r| r.scene).collect::<Vec<_>>();
    let log = train_discriminator(&sgie.discriminator, &train.images, &labels(&train), &config.scene.settings(seed))?;
    let acc = |s: &LoadedSet| scene_accuracy(&sgie.discriminator, &s.images, &labels(s));
    let metrics = json!({
        "train_accuracy": acc(&train)?,
        "val_accuracy": acc(&val)?,
        "test_accuracy": acc(&test)?,
        "final_loss": log.last().copied(),
    });
    log::info!("scene accuracy: {metrics}");
    save_checkpoint(out.join("scene.ckpt"), SCENE_KIND, &config.detector.sgie, &sgie.discriminator)?;
    write_text(&out.join("loss_log.csv"), &loss_csv(&log))?;
    write_json(&out.join("metrics.json"), &metrics)
}

/// Seeded shuffle of the pairs, cut by the train / validation ratios.
fn split_pairs<T: Clone>(items: &[T], ratios: [f64; 3], seed: u64) -> (Vec<T>, Vec<T>) {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [n_train, n_val, _] = msgnet::datakit::split::apportion(items.len(), ratios);
    let pick = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    (pick(&idx[..n_train]), pick(&idx[n_train..n_train + n_val]))
}

pub fn train_enhancer_cmd(config: &RunConfig, out: &Path) -> CliResult<()> {
    let seed = config.require_seed()?;
    let scene_ckpt = RunConfig::require(&config.checkpoints.scene, "checkpoints.scene")?;
    let sgie = new_sgie(config, seed)?;
    load_checkpoint(scene_ckpt, SCENE_KIND, &config.detector.sgie, &sgie.discriminator)?;
    let pairs = load_pairs(config)?;
    let (train, val) = split_pairs(&pairs, config.data.split, seed);
    let log = train_enhancer(&sgie, &train, &config.enhancer.settings(seed))?;
    let eval = if val.is_empty() { &train } else { &val };
    let (enhanced, degraded) = enhancement_psnr(&sgie, eval)?;
    let metrics = json!({
        "psnr_enhanced": enhanced,
        "psnr_degraded": degraded,
        "psnr_gain_db": enhanced - degraded,
        "eval_pairs": eval.len(),
        "final_loss": log.last().copied(),
    });
    log::info!("enhancement: {metrics}");
    save_checkpoint(out.join("sgie.ckpt"), SGIE_KIND, &config.detector.sgie, &sgie)?;
    write_text(&out.join("loss_log.csv"), &loss_csv(&log))?;
    write_json(&out.join("metrics.json"), &metrics)
}

fn attach_sgie(config: &RunConfig, model: &Detector) -> CliResult<()> {
    match (&model.sgie, &config.checkpoints.sgie) {
        (Some(s), Some(p)) => load_checkpoint(p, SGIE_KIND, &config.detector.sgie, s)?,
        (Some(_), None) => log::warn!("detector.use_sgie is set but checkpoints.sgie is not; the enhancer is untrained"),
        _ => {}
    }
    Ok(())
}

fn build_detector(config: &RunConfig, seed: u64) -> CliResult<Detector> {
    Ok(build_msgnet(config.detector.clone(), &mut ChaCha8Rng::seed_from_u64(seed))?)
}

fn detector_loss_csv(log: &[LossReport]) -> String {
    let mut s = String::from("step,classification_loss,box_loss,total\n");
    for (i, r) in log.iter().enumerate() {
        s.push_str(&format!("{i},{:.8},{:.8},{:.8}\n", r.classification_loss, r.box_loss, r.total));
    }
    s
}

/// Maps predictions on resized images back to original coordinates.
fn rescale_predictions(preds: &mut [ImagePredictions], set: &LoadedSet) {
    for (p, &(sx, sy)) in preds.iter_mut().zip(&set.scale) {
        for d in &mut p.detections {
            d.bbox = d.bbox.scaled(sx, sy);
        }
    }
}

pub fn train_detector_cmd(config: &RunConfig, out: &Path) -> CliResult<()> {
    let seed = config.require_seed()?;
    let set = load_set(config, config.detector.max_stride())?;
    let [train, val, _] = set.split(config.data.split, seed)?;
    let model = build_detector(config, seed)?;
    attach_sgie(config, &model)?;
    let settings = config.train.settings(train.images.len(), seed);
    let objects: Vec<_> = train.records.iter().map(|r| r.objects.clone()).collect();
    log::info!("training detector for {} steps on {} images", settings.steps, train.images.len());
    let log = train_detector(&model, &train.images, &objects, &settings)?;
    let mut metrics = json!({ "steps": log.len(), "final_loss": log.last() });
    if !val.images.is_empty() {
        let preds = predict_set(&model, LabeledSet { images: &val.images, records: &val.records }, settings.batch_size)?;
        metrics["val"] = serde_json::to_value(evaluate_map(&preds, &val.records)?)?;
    }
    save_checkpoint(out.join("detector.ckpt"), DETECTOR_KIND, &config.detector, &model)?;
    write_text(&out.join("loss_log.csv"), &detector_loss_csv(&log))?;
    write_json(&out.join("metrics.json"), &metrics)
}

/// Scores a predictions file, or runs a detector checkpoint first.
pub fn eval(config: &RunConfig, out: &Path) -> CliResult<()> {
    let ann = RunConfig::require(&config.data.annotations, "data.annotations")?;
    let gt = read_records(ann)?;
    let preds = match (&config.data.predictions, &config.checkpoints.detector) {
        (Some(p), _) => read_predictions(p)?,
        (None, Some(ckpt)) => {
            let set = load_set(config, config.detector.max_stride())?;
            let model = build_detector(config, config.seed.unwrap_or(0))?;
            load_checkpoint(ckpt, DETECTOR_KIND, &config.detector, &model)?;
            let mut preds = predict_set(&model, LabeledSet { images: &set.images, records: &set.records }, 8)?;
            rescale_predictions(&mut preds, &set);
            write_predictions(out.join("predictions.jsonl"), &preds)?;
            preds
        }
        (None, None) => {
            return Err(CliError::config(
                "data.predictions",
                "eval needs data.predictions or checkpoints.detector",
            ))
        }
    };
    let metrics = evaluate_map(&preds, &gt)?;
    log::info!("mAP@[.5:.95] = {:.4}, mAP@.5 = {:.4}", metrics.map_50_95, metrics.map_50);
    write_json(&out.join("metrics.json"), &serde_json::to_value(&metrics)?)
}

pub fn ablate(config: &RunConfig, out: &Path) -> CliResult<()> {
    let seed = config.require_seed()?;
    let set = load_set(config, config.detector.max_stride())?;
    let [train, val, _] = set.split(config.data.split, seed)?;
    let val = if val.images.is_empty() { &train } else { &val };
    let pretrained = match &config.checkpoints.sgie {
        Some(p) => {
            let s = new_sgie(config, seed)?;
            load_checkpoint(p, SGIE_KIND, &config.detector.sgie, &s)?;
            Some(s)
        }
        None => None,
    };
    let settings = config.train.settings(train.images.len(), seed);
    let rows = run_detector_ablation(
        &config.detector,
        &full_matrix(),
        &settings,
        LabeledSet { images: &train.images, records: &train.records },
        LabeledSet { images: &val.images, records: &val.records },
        pretrained.as_ref(),
        seed,
    )?;
    for r in &rows {
        log::info!("{:?}: mAP {:.4} (delta {:+.4})", r.flags, r.map_50_95, r.delta);
    }
    write_ablation_csv(out.join("ablation.csv"), &rows)?;
    Ok(())
}

pub fn output_dir(config: &RunConfig) -> CliResult<PathBuf> {
    let out = config.output_dir.clone();
    create_dir(&out)?;
    Ok(out)
}
