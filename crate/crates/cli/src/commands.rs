//! Subcommand implementations. Every command reads its settings from a
//! [`RunSpec`], rejects unknown keys, and is deterministic in the `seed` key.

use crate::runspec::RunSpec;
use anyhow::{anyhow, bail, Context, Result};
use chrono::{Duration, TimeZone, Utc};
use floodseg_core::datagen::{
    corrupt_weak_label, generate_scene, AugmentConfig, CorruptMode, Manifest, SampleRecord,
    SceneParams, SourceTag,
};
use floodseg_core::eval::{
    confusion, ece, infer_10m, pooled_iou, predict_water_probs, probs_to_mask, render_mask_png,
    render_probs_png, write_report, ReportRow,
};
use floodseg_core::io::{read_mask, read_raster, write_mask, write_raster};
use floodseg_core::labeling::{
    dilate_cloud_mask, improve_weak_label, otsu_segment, weak_label_from_ndwi, OccurrenceMap,
};
use floodseg_core::model::{load_checkpoint, SegNetConfig};
use floodseg_core::raster::{cloud_fraction, ndwi, normalize_s1, normalize_s2, ClassMask, Raster};
use floodseg_core::trainer::{
    distill_student, train_supervised, train_teacher, write_run_dir, DistillDataset,
    DistillSample, LabeledDataset, LossKind, TrainConfig,
};
use floodseg_core::{derive_seed, CoreError};
use std::path::{Path, PathBuf};

const SCENE_KEYS: &[&str] = &[
    "water_amount",
    "river_width",
    "n_flood_lobes",
    "lobe_radius",
    "cloud_cover",
    "speckle_looks",
    "s1_texture_db",
    "s2_noise",
    "occ_river",
    "occ_lobe",
    "occ_background",
];

const TRAIN_KEYS: &[&str] = &[
    "lr0",
    "weight_decay",
    "momentum",
    "total_steps",
    "lr_power",
    "batch",
    "loss",
    "seed",
    "eval_every",
    "w_inner",
    "w_outer",
    "tversky_alpha",
    "tversky_beta",
    "tversky_gamma",
    "base_width",
    "skip_strides",
    "aug",
    "flip",
    "crop_lo",
    "crop_hi",
    "jitter_sigma",
];

pub fn synth_keys() -> Vec<&'static str> {
    let mut keys = vec!["out_dir", "n_scenes", "size", "seed", "source"];
    keys.extend_from_slice(SCENE_KEYS);
    keys
}

pub fn weaklabel_keys() -> Vec<&'static str> {
    vec![
        "manifest",
        "out_dir",
        "improve",
        "occ_threshold",
        "cloud_dilate",
        "corrupt",
        "severity",
        "seed",
    ]
}

pub fn otsu_keys() -> Vec<&'static str> {
    vec!["manifest", "out_dir", "band"]
}

pub fn train_keys() -> Vec<&'static str> {
    let mut keys = vec!["train_manifest", "val_manifest", "out_dir", "bands"];
    keys.extend_from_slice(TRAIN_KEYS);
    keys
}

pub fn teacher_keys() -> Vec<&'static str> {
    let mut keys = vec!["train_manifest", "val_manifest", "out_dir"];
    keys.extend_from_slice(TRAIN_KEYS);
    keys
}

pub fn distill_keys() -> Vec<&'static str> {
    let mut keys = vec![
        "teacher_ckpt",
        "manifest_a",
        "manifest_b",
        "val_manifest",
        "out_dir",
    ];
    keys.extend_from_slice(TRAIN_KEYS);
    keys
}

pub fn eval_keys() -> Vec<&'static str> {
    vec![
        "ckpt",
        "manifest",
        "out_dir",
        "split",
        "protocol",
        "render",
    ]
}

pub fn render_keys() -> Vec<&'static str> {
    vec!["input", "out", "band"]
}

pub fn gradcheck_keys() -> Vec<&'static str> {
    vec!["seeds", "size", "tol"]
}

fn scene_params(spec: &RunSpec) -> Result<SceneParams> {
    let d = SceneParams::default();
    Ok(SceneParams {
        water_amount: spec.parse_or("water_amount", d.water_amount)?,
        river_width: spec.parse_or("river_width", d.river_width)?,
        n_flood_lobes: spec.parse_or("n_flood_lobes", d.n_flood_lobes)?,
        lobe_radius: spec.parse_or("lobe_radius", d.lobe_radius)?,
        cloud_cover: spec.parse_or("cloud_cover", d.cloud_cover)?,
        speckle_looks: spec.parse_or("speckle_looks", d.speckle_looks)?,
        s1_texture_db: spec.parse_or("s1_texture_db", d.s1_texture_db)?,
        s2_noise: spec.parse_or("s2_noise", d.s2_noise)?,
        occ_river: spec.parse_or("occ_river", d.occ_river)?,
        occ_lobe: spec.parse_or("occ_lobe", d.occ_lobe)?,
        occ_background: spec.parse_or("occ_background", d.occ_background)?,
    })
}

fn train_config(spec: &RunSpec) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        lr0: spec.parse_or("lr0", d.lr0)?,
        weight_decay: spec.parse_or("weight_decay", d.weight_decay)?,
        momentum: spec.parse_or("momentum", d.momentum)?,
        total_steps: spec.parse_or("total_steps", d.total_steps)?,
        lr_power: spec.parse_or("lr_power", d.lr_power)?,
        batch: spec.parse_or("batch", d.batch)?,
        loss: LossKind::parse(spec.str_or("loss", d.loss.name()))?,
        seed: spec.parse_or("seed", d.seed)?,
        eval_every: spec.parse_or("eval_every", d.eval_every)?,
        w_inner: spec.parse_or("w_inner", d.w_inner)?,
        w_outer: spec.parse_or("w_outer", d.w_outer)?,
        tversky_alpha: spec.parse_or("tversky_alpha", d.tversky_alpha)?,
        tversky_beta: spec.parse_or("tversky_beta", d.tversky_beta)?,
        tversky_gamma: spec.parse_or("tversky_gamma", d.tversky_gamma)?,
    })
}

fn model_config(spec: &RunSpec, in_channels: usize, seed: u64) -> Result<SegNetConfig> {
    let strides_raw = spec.str_or("skip_strides", "4,2");
    let skip_strides = strides_raw
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| anyhow!("skip_strides: bad entry '{s}': {e}"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SegNetConfig::new(
        in_channels,
        spec.parse_or("base_width", 4usize)?,
        skip_strides,
        derive_seed(seed, 0x0de1),
    ))
}

fn augment_config(spec: &RunSpec) -> Result<AugmentConfig> {
    if !spec.bool_or("aug", true)? {
        return Ok(AugmentConfig::off());
    }
    let d = AugmentConfig::default();
    let flip = spec.bool_or("flip", true)?;
    Ok(AugmentConfig {
        flip_h: flip,
        flip_v: flip,
        crop_scale_range: (
            spec.parse_or("crop_lo", d.crop_scale_range.0)?,
            spec.parse_or("crop_hi", d.crop_scale_range.1)?,
        ),
        jitter_sigma: spec.parse_or("jitter_sigma", d.jitter_sigma)?,
    })
}

fn parse_source(s: &str) -> Result<SourceTag> {
    match s {
        "handlabel" => Ok(SourceTag::HandLabel),
        "weak_sen1floods11-like" => Ok(SourceTag::WeakSen1Floods11Like),
        "weak_floods208-like" => Ok(SourceTag::WeakFloods208Like),
        other => bail!("unknown source tag '{other}'"),
    }
}

pub fn cmd_synth(spec: &RunSpec) -> Result<()> {
    spec.check_keys(&synth_keys())?;
    let out_dir = spec.path("out_dir")?;
    let n_scenes: usize = spec.require("n_scenes")?.parse().context("n_scenes")?;
    let size = spec.parse_or("size", 64usize)?;
    let seed = spec.parse_or("seed", 0u64)?;
    let source = parse_source(spec.str_or("source", "handlabel"))?;
    let params = scene_params(spec)?;

    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CoreError::io(&out_dir, e))?;
    let t0 = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
    let mut manifest = Manifest::default();
    for i in 0..n_scenes {
        let scene = generate_scene::<f32>(derive_seed(seed, i as u64), size, &params)?;
        let id = format!("scene_{i:04}");
        write_raster(&scene.s1, out_dir.join(format!("{id}_s1.fsr")))?;
        write_raster(&scene.s2, out_dir.join(format!("{id}_s2.fsr")))?;
        write_raster(
            scene.occurrence.raster(),
            out_dir.join(format!("{id}_occ.fsr")),
        )?;
        write_mask(&scene.truth, out_dir.join(format!("{id}_truth.fsm")))?;
        write_mask(&scene.cloud, out_dir.join(format!("{id}_cloud.fsm")))?;
        manifest.records.push(SampleRecord {
            scene_id: id.clone(),
            source,
            s1_path: format!("{id}_s1.fsr"),
            s2_path: format!("{id}_s2.fsr"),
            label_path: format!("{id}_truth.fsm"),
            occurrence_path: format!("{id}_occ.fsr"),
            cloud_path: format!("{id}_cloud.fsm"),
            timestamp: t0 + Duration::hours(i as i64),
            cloud_fraction: cloud_fraction(&scene.cloud),
        });
    }
    manifest.write_csv(out_dir.join("manifest.csv"))?;
    println!("synth: wrote {n_scenes} scenes to {}", out_dir.display());
    Ok(())
}

/// Path of `target` as stored in a manifest that lives in `dir`.
fn manifest_relative(dir: &Path, target: &Path) -> String {
    match target.strip_prefix(dir) {
        Ok(rel) => rel.display().to_string(),
        Err(_) => std::fs::canonicalize(target)
            .unwrap_or_else(|_| target.to_path_buf())
            .display()
            .to_string(),
    }
}

pub fn cmd_weaklabel(spec: &RunSpec) -> Result<()> {
    spec.check_keys(&weaklabel_keys())?;
    let manifest_path = spec.path("manifest")?;
    let out_dir = spec.path("out_dir")?;
    let improve = spec.bool_or("improve", false)?;
    let occ_threshold = spec.parse_or("occ_threshold", 0.5f64)?;
    let cloud_dilate = spec.parse_or("cloud_dilate", 2usize)?;
    let corrupt = spec.str_or("corrupt", "none").to_string();
    let severity = spec.parse_or("severity", 0.6f64)?;
    let seed = spec.parse_or("seed", 0u64)?;
    let mode = match corrupt.as_str() {
        "none" => None,
        other => Some(CorruptMode::parse(other)?),
    };

    let manifest = Manifest::read_csv(&manifest_path)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| CoreError::io(&out_dir, e))?;
    let mut out_manifest = Manifest::default();
    for (i, rec) in manifest.records.iter().enumerate() {
        let s2: Raster<f32> = read_raster(manifest.resolve(&manifest_path, &rec.s2_path))?;
        let cloud = read_mask(manifest.resolve(&manifest_path, &rec.cloud_path))?;
        let dilated = dilate_cloud_mask(&cloud, cloud_dilate);
        let nd = ndwi(&s2)?;
        let mut weak = weak_label_from_ndwi(&nd, &dilated)?;
        if let Some(mode) = mode {
            weak = corrupt_weak_label(&weak, mode, severity, derive_seed(seed, i as u64))?;
        }
        if improve {
            let occ_raster: Raster<f32> =
                read_raster(manifest.resolve(&manifest_path, &rec.occurrence_path))?;
            let occ = OccurrenceMap::new(&occ_raster)?;
            weak = improve_weak_label(&weak, &occ, occ_threshold)?;
        }
        let label_name = format!("{}_weak.fsm", rec.scene_id);
        write_mask(&weak, out_dir.join(&label_name))?;
        let mut out_rec = rec.clone();
        out_rec.s1_path =
            manifest_relative(&out_dir, &manifest.resolve(&manifest_path, &rec.s1_path));
        out_rec.s2_path =
            manifest_relative(&out_dir, &manifest.resolve(&manifest_path, &rec.s2_path));
        out_rec.occurrence_path = manifest_relative(
            &out_dir,
            &manifest.resolve(&manifest_path, &rec.occurrence_path),
        );
        out_rec.cloud_path =
            manifest_relative(&out_dir, &manifest.resolve(&manifest_path, &rec.cloud_path));
        out_rec.label_path = label_name;
        out_manifest.records.push(out_rec);
    }
    out_manifest.write_csv(out_dir.join("manifest.csv"))?;
    println!(
        "weaklabel: labeled {} scenes into {}",
        out_manifest.records.len(),
        out_dir.display()
    );
    Ok(())
}

pub fn cmd_otsu(spec: &RunSpec) -> Result<()> {
    spec.check_keys(&otsu_keys())?;
    let manifest_path = spec.path("manifest")?;
    let out_dir = spec.path("out_dir")?;
    let band = spec.str_or("band", "VV");

    let manifest = Manifest::read_csv(&manifest_path)?;
    if manifest.records.is_empty() {
        bail!(CoreError::Data("otsu: empty manifest".into()));
    }
    std::fs::create_dir_all(&out_dir).map_err(|e| CoreError::io(&out_dir, e))?;
    let mut counts = Vec::new();
    let mut probs_all: Vec<f32> = Vec::new();
    let mut truth_all = Vec::new();
    for rec in &manifest.records {
        let s1: Raster<f32> = read_raster(manifest.resolve(&manifest_path, &rec.s1_path))?;
        let truth = read_mask(manifest.resolve(&manifest_path, &rec.label_path))?;
        let pred = otsu_segment(&s1, band)?;
        write_mask(&pred, out_dir.join(format!("{}_otsu.fsm", rec.scene_id)))?;
        counts.push(confusion(&pred, &truth)?);
        probs_all.extend(pred.codes().iter().map(|&c| {
            if c == floodseg_core::raster::Code::Water {
                1.0f32
            } else {
                0.0
            }
        }));
        truth_all.extend_from_slice(truth.codes());
    }
    let iou = pooled_iou(&counts)?;
    let pooled_truth = ClassMask::new(truth_all.len(), 1, truth_all)?;
    let ece_val = ece(&probs_all, &pooled_truth, 10)?;
    let total = counts
        .iter()
        .fold(floodseg_core::eval::ConfusionCounts::default(), |mut a, c| {
            a.add(c);
            a
        });
    write_report(
        &[ReportRow {
            split: "otsu".into(),
            n_images: manifest.records.len(),
            tp: total.tp,
            fp: total.fp,
            fn_: total.fn_,
            tn: total.tn,
            iou,
            ece: ece_val,
        }],
        out_dir.join("report.csv"),
    )?;
    println!("otsu: iou={iou:.4} ece={ece_val:.4}");
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bands {
    S1,
    S1S2,
}

impl Bands {
    fn parse(s: &str) -> Result<Bands> {
        match s {
            "s1" => Ok(Bands::S1),
            "s1s2" => Ok(Bands::S1S2),
            other => bail!(CoreError::Config(format!("unknown bands '{other}'"))),
        }
    }

    fn channels(self) -> usize {
        match self {
            Bands::S1 => 2,
            Bands::S1S2 => 6,
        }
    }
}

fn stacked_input(
    manifest: &Manifest,
    manifest_path: &Path,
    rec: &SampleRecord,
    bands: Bands,
) -> Result<Raster<f32>> {
    let s1: Raster<f32> = read_raster(manifest.resolve(manifest_path, &rec.s1_path))?;
    let s1n = normalize_s1(&s1)?;
    match bands {
        Bands::S1 => Ok(s1n),
        Bands::S1S2 => {
            let s2: Raster<f32> = read_raster(manifest.resolve(manifest_path, &rec.s2_path))?;
            let s2n = normalize_s2(&s2)?;
            let mut stacked = s1n.bands().to_vec();
            stacked.extend(s2n.bands().to_vec());
            Ok(Raster::new(
                s1n.width(),
                s1n.height(),
                s1n.resolution_m(),
                stacked,
            )?)
        }
    }
}

fn load_labeled(manifest_path: &Path, bands: Bands) -> Result<LabeledDataset<f32>> {
    let manifest = Manifest::read_csv(manifest_path)?;
    let mut ds = LabeledDataset::default();
    for rec in &manifest.records {
        let input = stacked_input(&manifest, manifest_path, rec, bands)?;
        let label = read_mask(manifest.resolve(manifest_path, &rec.label_path))?;
        ds.samples.push((input, label));
    }
    Ok(ds)
}

fn load_distill(manifest_path: &Path) -> Result<DistillDataset<f32>> {
    let manifest = Manifest::read_csv(manifest_path)?;
    let mut ds = DistillDataset::default();
    for rec in &manifest.records {
        let s1 = stacked_input(&manifest, manifest_path, rec, Bands::S1)?;
        let stacked = stacked_input(&manifest, manifest_path, rec, Bands::S1S2)?;
        let valid = vec![true; s1.width() * s1.height()];
        ds.samples.push(DistillSample { s1, stacked, valid });
    }
    Ok(ds)
}

pub fn cmd_train(spec: &RunSpec) -> Result<()> {
    spec.check_keys(&train_keys())?;
    let bands = Bands::parse(spec.str_or("bands", "s1"))?;
    let config = train_config(spec)?;
    let model = model_config(spec, bands.channels(), config.seed)?;
    let train = load_labeled(&spec.path("train_manifest")?, bands)?;
    let val = load_labeled(&spec.path("val_manifest")?, bands)?;
    let aug = augment_config(spec)?;
    let outcome = train_supervised(&config, &model, &train, &val, &aug)?;
    write_run_dir(spec.path("out_dir")?, &spec.echo(), &outcome)?;
    println!(
        "train: best_step={} best_val_iou={:.4}",
        outcome.history.best_step, outcome.history.best_val_iou
    );
    Ok(())
}

pub fn cmd_teacher(spec: &RunSpec) -> Result<()> {
    spec.check_keys(&teacher_keys())?;
    let config = train_config(spec)?;
    let model = model_config(spec, 6, config.seed)?;
    let train = load_labeled(&spec.path("train_manifest")?, Bands::S1S2)?;
    let val = load_labeled(&spec.path("val_manifest")?, Bands::S1S2)?;
    let aug = augment_config(spec)?;
    let outcome = train_teacher(&config, &model, &train, &val, &aug)?;
    write_run_dir(spec.path("out_dir")?, &spec.echo(), &outcome)?;
    println!(
        "teacher: best_step={} best_val_iou={:.4}",
        outcome.history.best_step, outcome.history.best_val_iou
    );
    Ok(())
}

pub fn cmd_distill(spec: &RunSpec) -> Result<()> {
    spec.check_keys(&distill_keys())?;
    let config = train_config(spec)?;
    let student = model_config(spec, 2, config.seed)?;
    let teacher = load_checkpoint::<f32>(&spec.path("teacher_ckpt")?)?;
    let source_a = load_distill(&spec.path("manifest_a")?)?;
    let source_b = load_distill(&spec.path("manifest_b")?)?;
    let val = match spec.path_opt("val_manifest") {
        Some(p) => Some(load_labeled(&p, Bands::S1)?),
        None => None,
    };
    let aug = augment_config(spec)?;
    let outcome = distill_student(
        &teacher,
        &config,
        &student,
        &source_a,
        &source_b,
        val.as_ref(),
        &aug,
    )?;
    write_run_dir(spec.path("out_dir")?, &spec.echo(), &outcome)?;
    println!(
        "distill: best_step={} best_val_iou={:.4}",
        outcome.history.best_step, outcome.history.best_val_iou
    );
    Ok(())
}

pub fn cmd_eval(spec: &RunSpec) -> Result<()> {
    spec.check_keys(&eval_keys())?;
    let manifest_path = spec.path("manifest")?;
    let out_dir = spec.path("out_dir")?;
    let split = spec.str_or("split", "test").to_string();
    let protocol = spec.str_or("protocol", "native").to_string();
    let render = spec.bool_or("render", false)?;
    let net = load_checkpoint::<f32>(&spec.path("ckpt")?)?;
    let bands = match net.config().in_channels {
        2 => Bands::S1,
        6 => Bands::S1S2,
        n => bail!(CoreError::Config(format!(
            "checkpoint has unsupported channel count {n}"
        ))),
    };

    let manifest = Manifest::read_csv(&manifest_path)?;
    if manifest.records.is_empty() {
        bail!(CoreError::Data("eval: empty manifest".into()));
    }
    std::fs::create_dir_all(&out_dir).map_err(|e| CoreError::io(&out_dir, e))?;
    let mut counts = Vec::new();
    let mut probs_all: Vec<f32> = Vec::new();
    let mut truth_all = Vec::new();
    for rec in &manifest.records {
        let input = stacked_input(&manifest, &manifest_path, rec, bands)?;
        let probs = match protocol.as_str() {
            "native" => predict_water_probs(&net, &input)?,
            "10m" => infer_10m(&net, &input)?.band("p_water")?.to_vec(),
            other => bail!(CoreError::Config(format!("unknown protocol '{other}'"))),
        };
        let truth = read_mask(manifest.resolve(&manifest_path, &rec.label_path))?;
        let pred = probs_to_mask(&probs, input.width(), input.height())?;
        counts.push(confusion(&pred, &truth)?);
        if render {
            render_mask_png(&pred, out_dir.join(format!("{}_pred.png", rec.scene_id)))?;
            render_probs_png(
                &probs,
                input.width(),
                input.height(),
                out_dir.join(format!("{}_probs.png", rec.scene_id)),
            )?;
        }
        probs_all.extend_from_slice(&probs);
        truth_all.extend_from_slice(truth.codes());
    }
    let iou = pooled_iou(&counts)?;
    let pooled_truth = ClassMask::new(truth_all.len(), 1, truth_all)?;
    let ece_val = ece(&probs_all, &pooled_truth, 10)?;
    let total = counts
        .iter()
        .fold(floodseg_core::eval::ConfusionCounts::default(), |mut a, c| {
            a.add(c);
            a
        });
    write_report(
        &[ReportRow {
            split: split.clone(),
            n_images: manifest.records.len(),
            tp: total.tp,
            fp: total.fp,
            fn_: total.fn_,
            tn: total.tn,
            iou,
            ece: ece_val,
        }],
        out_dir.join("report.csv"),
    )?;
    println!("eval: split={split} iou={iou:.4} ece={ece_val:.4}");
    Ok(())
}

pub fn cmd_render(spec: &RunSpec) -> Result<()> {
    spec.check_keys(&render_keys())?;
    let input = spec.path("input")?;
    let out: PathBuf = spec.path("out")?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
        }
    }
    match input.extension().and_then(|e| e.to_str()) {
        Some("fsm") => {
            let mask = read_mask(&input)?;
            render_mask_png(&mask, &out)?;
        }
        Some("fsr") => {
            let raster: Raster<f32> = read_raster(&input)?;
            let band_name = match spec.get("band") {
                Some(b) => b.to_string(),
                None => raster.bands()[0].0.clone(),
            };
            render_probs_png(
                raster.band(&band_name)?,
                raster.width(),
                raster.height(),
                &out,
            )?;
        }
        _ => bail!(CoreError::Config(
            "render input must be a .fsm or .fsr file".into()
        )),
    }
    println!("render: wrote {}", out.display());
    Ok(())
}

pub fn cmd_gradcheck(spec: &RunSpec) -> Result<()> {
    spec.check_keys(&gradcheck_keys())?;
    let seeds = spec.parse_or("seeds", 20u64)?;
    let size = spec.parse_or("size", 16usize)?;
    let tol = spec.parse_or("tol", 1e-3f64)?;
    let report = crate::gradcheck::run_gradcheck(seeds, size)?;
    println!("gradcheck: net max rel err        = {:.3e}", report.net_max);
    println!("gradcheck: weighted_ce max rel err = {:.3e}", report.ce_max);
    println!("gradcheck: distill_kd max rel err  = {:.3e}", report.kd_max);
    println!(
        "gradcheck: tversky_focal max rel err = {:.3e}",
        report.tversky_max
    );
    if report.worst() > tol {
        bail!(CoreError::Contract(format!(
            "gradient check failed: worst {:.3e} > tol {tol:.3e}",
            report.worst()
        )));
    }
    println!("gradcheck: ok (tol {tol:.1e}, {seeds} seeds)");
    Ok(())
}
