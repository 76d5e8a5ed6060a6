//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;

use serde::Serialize;

use einet::backbone::BackboneConfig;
use einet::data::images::{normalize_for_panel, save_gray};
use einet::data::letterbox::letterbox;
use einet::data::synth::{generate_synthetic, Regime, SyntheticConfig};
use einet::data::{class_name, load_dataset, Dataset, Split, CLASS_NAMES};
use einet::detector::{
    count_params, estimate_flops, DetectorSession, ModelConfig, Variant, VariantConfig, DEFAULT_DEMO_CONF,
    DEFAULT_NMS_IOU,
};
use einet::eval::{
    bench_frames_from_dataset, class_stats, coco_map, dataset_ground_truth, fps_benchmark, run_inference_threaded,
    GtBox,
};
use einet::fusion::{background_mask_level0, feature_panels, masked_mean_abs};
use einet::head::{format_detection, parse_detections, BBox, Detection, HeadConfig};
use einet::tpe::TemporalWindow;
use einet::train::{format_loss_history, train_loop, TrainConfig};
use einet::{Error, ModelWeights, Result};

use crate::config::{write_run_echo, Overlay};
use crate::{BenchArgs, DumpFeaturesArgs, EvalArgs, GenArgs, GradcheckArgs, InferArgs, ModelArgs, StatsArgs, TrainArgs};

fn parse_triple(text: &str, what: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad {what} entry '{p}'"))))
        .collect::<Result<_>>()?;
    if parts.len() != 3 {
        return Err(Error::Config(format!("{what} needs exactly 3 comma-separated values")));
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn resolve_model(model: &ModelArgs, overlay: &Overlay) -> Result<ModelConfig> {
    let default = BackboneConfig::default();
    let stem = overlay.resolve("stem", &model.stem, default.stem_channels)?;
    let stages = match overlay.resolve_opt("stages", &model.stages)? {
        Some(text) => parse_triple(&text, "stages")?,
        None => default.stage_channels,
    };
    let blocks = match overlay.resolve_opt("blocks", &model.blocks)? {
        Some(text) => parse_triple(&text, "blocks")?,
        None => default.blocks_per_stage,
    };
    let backbone = BackboneConfig { stem_channels: stem, stage_channels: stages, blocks_per_stage: blocks };
    backbone.validate()?;
    Ok(ModelConfig { backbone, head: HeadConfig::default() })
}

fn resolve_variant(
    variant: &Option<String>,
    window: &Option<String>,
    include_current_residual: bool,
    overlay: &Overlay,
) -> Result<VariantConfig> {
    let variant = Variant::parse(&overlay.resolve("variant", variant, "full".to_string())?)?;
    let window = TemporalWindow::parse(&overlay.resolve("window", window, "f".to_string())?)?;
    Ok(VariantConfig { variant, window, include_current_residual })
}

#[derive(Serialize)]
struct ModelEcho {
    stem: usize,
    stages: [usize; 3],
    blocks: [usize; 3],
    classes: usize,
}

impl ModelEcho {
    fn of(mc: &ModelConfig) -> Self {
        ModelEcho {
            stem: mc.backbone.stem_channels,
            stages: mc.backbone.stage_channels,
            blocks: mc.backbone.blocks_per_stage,
            classes: mc.head.num_classes,
        }
    }
}

// ---------------------------------------------------------------------------
// gen

pub fn gen(args: GenArgs) -> Result<ExitCode> {
    let overlay = Overlay::load(args.common.config.as_ref())?;
    let defaults = SyntheticConfig::default();
    let cfg = SyntheticConfig {
        regime: Regime::parse(&overlay.resolve("regime", &args.regime, "day".to_string())?)?,
        num_videos: overlay.resolve("videos", &args.videos, defaults.num_videos)?,
        train_videos: overlay.resolve("train_videos", &args.train_videos, defaults.train_videos)?,
        frames_per_video: overlay.resolve("frames_per_video", &args.frames_per_video, defaults.frames_per_video)?,
        image_size: overlay.resolve("image_size", &args.image_size, defaults.image_size)?,
        objects_per_video: (
            overlay.resolve("objects_min", &args.objects_min, defaults.objects_per_video.0)?,
            overlay.resolve("objects_max", &args.objects_max, defaults.objects_per_video.1)?,
        ),
        seed: overlay.resolve("seed", &args.seed, defaults.seed)?,
    };
    cfg.validate()?;

    #[derive(Serialize)]
    struct Echo<'a> {
        subcommand: &'a str,
        regime: &'a str,
        videos: usize,
        train_videos: usize,
        frames_per_video: usize,
        image_size: usize,
        objects_min: usize,
        objects_max: usize,
        seed: u64,
    }
    write_run_echo(
        &args.common.out,
        &Echo {
            subcommand: "gen",
            regime: cfg.regime.as_str(),
            videos: cfg.num_videos,
            train_videos: cfg.train_videos,
            frames_per_video: cfg.frames_per_video,
            image_size: cfg.image_size,
            objects_min: cfg.objects_per_video.0,
            objects_max: cfg.objects_per_video.1,
            seed: cfg.seed,
        },
    )?;

    let manifest = generate_synthetic(&cfg, &args.common.out)?;
    let mut per_class = [0usize; 7];
    for r in &manifest.records {
        per_class[r.class_id] += 1;
    }
    println!(
        "generated {} videos x {} frames ({} object instances) under {}",
        cfg.num_videos,
        cfg.frames_per_video,
        manifest.records.len(),
        args.common.out.display()
    );
    for (i, name) in CLASS_NAMES.iter().enumerate() {
        println!("  {name:>14}: {}", per_class[i]);
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// train

pub fn train(args: TrainArgs) -> Result<ExitCode> {
    let overlay = Overlay::load(args.common.config.as_ref())?;
    let mc = resolve_model(&args.model, &overlay)?;
    let vc = resolve_variant(&args.variant, &args.window, args.include_current_residual, &overlay)?;
    let defaults = TrainConfig::default();
    let tc = TrainConfig {
        epochs: overlay.resolve("epochs", &args.epochs, 30)?,
        batch_size: overlay.resolve("batch_size", &args.batch_size, defaults.batch_size)?,
        lr: overlay.resolve("lr", &args.lr, defaults.lr)?,
        final_lr: overlay.resolve("final_lr", &args.final_lr, defaults.final_lr)?,
        momentum: defaults.momentum,
        weight_decay: defaults.weight_decay,
        seed: overlay.resolve("seed", &args.seed, 0)?,
        horizontal_flip: !args.no_flip,
        flip_probability: overlay.resolve("flip_probability", &args.flip_probability, defaults.flip_probability)?,
        input_size: overlay.resolve("input_size", &args.input_size, defaults.input_size)?,
    };
    tc.validate()?;
    let split = Split::parse(&overlay.resolve("split", &args.split, "train".to_string())?)?;

    #[derive(Serialize)]
    struct Echo<'a> {
        subcommand: &'a str,
        dataset: String,
        split: &'a str,
        variant: &'a str,
        window: String,
        include_current_residual: bool,
        model: ModelEcho,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        final_lr: f64,
        momentum: f64,
        weight_decay: f64,
        seed: u64,
        horizontal_flip: bool,
        flip_probability: f64,
        input_size: usize,
    }
    write_run_echo(
        &args.common.out,
        &Echo {
            subcommand: "train",
            dataset: args.dataset.display().to_string(),
            split: split.as_str(),
            variant: vc.variant.as_str(),
            window: vc.window.to_string(),
            include_current_residual: vc.include_current_residual,
            model: ModelEcho::of(&mc),
            epochs: tc.epochs,
            batch_size: tc.batch_size,
            lr: tc.lr,
            final_lr: tc.final_lr,
            momentum: tc.momentum,
            weight_decay: tc.weight_decay,
            seed: tc.seed,
            horizontal_flip: tc.horizontal_flip,
            flip_probability: tc.flip_probability,
            input_size: tc.input_size,
        },
    )?;

    let dataset = load_dataset(&args.dataset, split)?;
    let (weights, history) = train_loop::<f32>(&dataset, &mc, &vc, &tc, |epoch, loss| {
        println!("epoch {epoch}: loss {loss:.6}");
    })?;
    weights.save(&args.common.out.join("weights.einw"))?;
    std::fs::write(args.common.out.join("loss_history.csv"), format_loss_history(&history))?;
    println!(
        "trained {} for {} epochs ({} params) -> {}",
        vc.variant,
        tc.epochs,
        count_params(&weights, &mc, &vc)?,
        args.common.out.join("weights.einw").display()
    );
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// infer

pub fn infer(args: InferArgs) -> Result<ExitCode> {
    let overlay = Overlay::load(args.common.config.as_ref())?;
    let mc = resolve_model(&args.model, &overlay)?;
    let vc = resolve_variant(&args.variant, &args.window, args.include_current_residual, &overlay)?;
    let split = Split::parse(&overlay.resolve("split", &args.split, "test".to_string())?)?;
    let conf = overlay.resolve("conf", &args.conf, DEFAULT_DEMO_CONF)?;
    let nms_iou = overlay.resolve("nms_iou", &args.nms_iou, DEFAULT_NMS_IOU)?;
    let input_size = overlay.resolve("input_size", &args.input_size, 64usize)?;
    let threads = overlay.resolve("threads", &args.common.threads, 1usize)?;
    if !(0.0..=1.0).contains(&conf) {
        return Err(Error::Config(format!("conf must be in [0,1], got {conf}")));
    }
    if !(0.0 < nms_iou && nms_iou < 1.0) {
        return Err(Error::Config(format!("nms_iou must be in (0,1), got {nms_iou}")));
    }

    #[derive(Serialize)]
    struct Echo<'a> {
        subcommand: &'a str,
        dataset: String,
        split: &'a str,
        weights: String,
        variant: &'a str,
        window: String,
        include_current_residual: bool,
        model: ModelEcho,
        conf: f64,
        nms_iou: f64,
        input_size: usize,
        threads: usize,
    }
    write_run_echo(
        &args.common.out,
        &Echo {
            subcommand: "infer",
            dataset: args.dataset.display().to_string(),
            split: split.as_str(),
            weights: args.weights.display().to_string(),
            variant: vc.variant.as_str(),
            window: vc.window.to_string(),
            include_current_residual: vc.include_current_residual,
            model: ModelEcho::of(&mc),
            conf,
            nms_iou,
            input_size,
            threads,
        },
    )?;

    let weights = ModelWeights::<f32>::load(&args.weights)?;
    let dataset = load_dataset(&args.dataset, split)?;
    let mut session = DetectorSession::new(mc, vc, &weights);
    session.conf_threshold = conf;
    session.nms_iou = nms_iou;
    let dets = run_inference_threaded(&session, &dataset, input_size, threads)?;

    let mut lines = String::new();
    let mut count = 0usize;
    for (frame_id, frame_dets) in &dets {
        for d in frame_dets {
            lines.push_str(&format_detection(frame_id, d));
            lines.push('\n');
            count += 1;
        }
    }
    let path = args.common.out.join("detections.txt");
    std::fs::write(&path, lines)?;
    println!("{count} detections over {} frames -> {}", dets.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// eval

pub fn eval(args: EvalArgs) -> Result<ExitCode> {
    let overlay = Overlay::load(args.common.config.as_ref())?;
    let split = Split::parse(&overlay.resolve("split", &args.split, "test".to_string())?)?;

    #[derive(Serialize)]
    struct Echo<'a> {
        subcommand: &'a str,
        dataset: String,
        split: &'a str,
        dets: String,
    }
    write_run_echo(
        &args.common.out,
        &Echo {
            subcommand: "eval",
            dataset: args.dataset.display().to_string(),
            split: split.as_str(),
            dets: args.dets.display().to_string(),
        },
    )?;

    let dataset = load_dataset(&args.dataset, split)?;
    let gts = dataset_ground_truth(&dataset);
    let text = std::fs::read_to_string(&args.dets)?;
    let mut dets: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for (frame_id, det) in parse_detections(&text)? {
        dets.entry(frame_id).or_default().push(det);
    }
    let result = coco_map(&dets, &gts);

    let mut table = format!("{:<16}{:>10}{:>10}\n", "", "AP50(%)", "AP(%)");
    table.push_str(&format!("{:<16}{:>10.2}{:>10.2}\n", "all", result.ap50 * 100.0, result.ap * 100.0));
    let mut csv = String::from("class,ap50,ap,gt_count\n");
    for (class_id, entry) in result.per_class.iter().enumerate() {
        if let Some(c) = entry {
            let ap = c.ap_per_threshold.iter().sum::<f64>() / 10.0;
            table.push_str(&format!(
                "{:<16}{:>10.2}{:>10.2}\n",
                class_name(class_id),
                c.ap_per_threshold[0] * 100.0,
                ap * 100.0
            ));
            csv.push_str(&format!("{},{:.6},{:.6},{}\n", class_name(class_id), c.ap_per_threshold[0], ap, c.gt_count));
        }
    }
    csv.push_str(&format!("all,{:.6},{:.6},{}\n", result.ap50, result.ap, result.gt_count));
    print!("{table}");
    std::fs::write(args.common.out.join("eval.txt"), &table)?;
    std::fs::write(args.common.out.join("eval.csv"), &csv)?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// bench

pub fn bench(args: BenchArgs) -> Result<ExitCode> {
    let overlay = Overlay::load(args.common.config.as_ref())?;
    let mc = resolve_model(&args.model, &overlay)?;
    let vc = resolve_variant(&args.variant, &args.window, args.include_current_residual, &overlay)?;
    let split = Split::parse(&overlay.resolve("split", &args.split, "test".to_string())?)?;
    let input_size = overlay.resolve("input_size", &args.input_size, 64usize)?;
    let warmup = overlay.resolve("warmup", &args.warmup, 2usize)?;
    let runs = overlay.resolve("runs", &args.runs, 3usize)?;
    let frames = overlay.resolve("frames", &args.frames, 8usize)?;
    if runs == 0 {
        return Err(Error::Config("runs must be >= 1".to_string()));
    }

    #[derive(Serialize)]
    struct Echo<'a> {
        subcommand: &'a str,
        dataset: String,
        split: &'a str,
        weights: String,
        variant: &'a str,
        window: String,
        model: ModelEcho,
        input_size: usize,
        warmup: usize,
        runs: usize,
        frames: usize,
    }
    write_run_echo(
        &args.common.out,
        &Echo {
            subcommand: "bench",
            dataset: args.dataset.display().to_string(),
            split: split.as_str(),
            weights: args.weights.display().to_string(),
            variant: vc.variant.as_str(),
            window: vc.window.to_string(),
            model: ModelEcho::of(&mc),
            input_size,
            warmup,
            runs,
            frames,
        },
    )?;

    let weights = ModelWeights::<f32>::load(&args.weights)?;
    let dataset = load_dataset(&args.dataset, split)?;
    let bench_frames = bench_frames_from_dataset(&dataset, &vc, frames)?;
    let session = DetectorSession::new(mc.clone(), vc.clone(), &weights);
    let report = fps_benchmark(&session, &bench_frames, input_size, warmup, runs)?;
    println!(
        "{}: {:.2} ± {:.2} fps over {} frames x {} runs (params {}, gflops {:.4})",
        vc.variant,
        report.mean_fps,
        report.std_fps,
        report.frames,
        runs,
        count_params(&weights, &mc, &vc)?,
        estimate_flops(&mc, &vc, input_size)? as f64 / 1e9,
    );
    let mut csv = String::from("run,fps\n");
    for (i, fps) in report.per_run_fps.iter().enumerate() {
        csv.push_str(&format!("{i},{fps:.3}\n"));
    }
    csv.push_str(&format!("mean,{:.3}\nstd,{:.3}\n", report.mean_fps, report.std_fps));
    std::fs::write(args.common.out.join("bench.csv"), csv)?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// gradcheck

pub fn gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let overlay = Overlay::load(args.common.config.as_ref())?;
    let h = overlay.resolve("h", &args.h, 1e-3)?;
    let tol = overlay.resolve("tol", &args.tol, 1e-3)?;
    if h <= 0.0 || tol <= 0.0 {
        return Err(Error::Config("h and tol must be positive".to_string()));
    }

    #[derive(Serialize)]
    struct Echo<'a> {
        subcommand: &'a str,
        h: f64,
        tol: f64,
    }
    write_run_echo(&args.common.out, &Echo { subcommand: "gradcheck", h, tol })?;

    let suite = einet::gradcheck::module_suite(h)?;
    let mut csv = String::from("module,h,max_rel_err\n");
    let mut ok = true;
    for entry in &suite {
        let pass = entry.max_rel_err < tol;
        ok &= pass;
        println!(
            "{:<20} h={:<8.0e} max_rel_err={:<12.3e} {}",
            entry.module,
            entry.h,
            entry.max_rel_err,
            if pass { "PASS" } else { "FAIL" }
        );
        csv.push_str(&format!("{},{:.0e},{:.6e}\n", entry.module, entry.h, entry.max_rel_err));
    }
    std::fs::write(args.common.out.join("gradcheck.csv"), csv)?;
    if ok {
        println!("all modules under {tol:.0e}");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("gradient check FAILED");
        Ok(ExitCode::from(1))
    }
}

// ---------------------------------------------------------------------------
// stats

pub fn stats(args: StatsArgs) -> Result<ExitCode> {
    let overlay = Overlay::load(args.common.config.as_ref())?;
    let _ = overlay;

    #[derive(Serialize)]
    struct Echo<'a> {
        subcommand: &'a str,
        dataset: String,
    }
    write_run_echo(&args.common.out, &Echo { subcommand: "stats", dataset: args.dataset.display().to_string() })?;

    let train = load_dataset(&args.dataset, Split::Train)?;
    let test = load_dataset(&args.dataset, Split::Test)?;
    let stats = class_stats(&[("train", &train), ("test", &test)]);
    print!("{}", stats.to_table());
    std::fs::write(args.common.out.join("stats.txt"), stats.to_table())?;
    std::fs::write(args.common.out.join("stats.csv"), stats.to_csv())?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// dump-features

pub fn dump_features(args: DumpFeaturesArgs) -> Result<ExitCode> {
    let overlay = Overlay::load(args.common.config.as_ref())?;
    let mc = resolve_model(&args.model, &overlay)?;
    let split = Split::parse(&overlay.resolve("split", &args.split, "test".to_string())?)?;
    let input_size = overlay.resolve("input_size", &args.input_size, 64usize)?;
    let id = overlay.resolve_opt("id", &args.id)?;

    let dataset = load_dataset(&args.dataset, split)?;
    let frame = match &id {
        Some(id) => dataset
            .frames()
            .find(|f| &f.frame_id == id)
            .ok_or_else(|| Error::Input(format!("frame id '{id}' not in split '{}'", split.as_str())))?,
        None => dataset
            .frames()
            .next()
            .ok_or_else(|| Error::Input("dataset split is empty".to_string()))?,
    };

    #[derive(Serialize)]
    struct Echo<'a> {
        subcommand: &'a str,
        dataset: String,
        split: &'a str,
        id: &'a str,
        weights: String,
        model: ModelEcho,
        input_size: usize,
    }
    write_run_echo(
        &args.common.out,
        &Echo {
            subcommand: "dump-features",
            dataset: args.dataset.display().to_string(),
            split: split.as_str(),
            id: &frame.frame_id,
            weights: args.weights.display().to_string(),
            model: ModelEcho::of(&mc),
            input_size,
        },
    )?;

    let weights = ModelWeights::<f32>::load(&args.weights)?;
    let rgb_src = einet::data::images::load_rgb::<f32>(&frame.rgb_path)?;
    let t_src = einet::data::images::load_thermal::<f32>(&frame.thermal_path)?;
    let (rgb, tf) = letterbox(&rgb_src, input_size)?;
    let (thermal, _) = letterbox(&t_src, input_size)?;
    let panels = feature_panels(&rgb, &thermal, &weights, &mc.backbone)?;

    let out = &args.common.out;
    save_gray(&out.join("rgb_input.png"), &normalize_for_panel(&panels.rgb_input))?;
    save_gray(&out.join("rgb_feature.png"), &normalize_for_panel(&panels.rgb_feature))?;
    save_gray(&out.join("thermal_inactive.png"), &normalize_for_panel(&panels.thermal_inactive))?;
    save_gray(&out.join("denoised.png"), &normalize_for_panel(&panels.denoised))?;

    // background = stride-8 cells untouched by any ground-truth box
    let boxes: Vec<BBox> = frame
        .annotation
        .objects
        .iter()
        .map(|o| {
            tf.apply_box(&BBox::new(o.bbox[0] as f64, o.bbox[1] as f64, o.bbox[2] as f64, o.bbox[3] as f64))
        })
        .collect();
    let mask = background_mask_level0(&boxes, input_size);
    let raw_maa = masked_mean_abs(&panels.rgb_feature, &mask)?;
    let denoised_maa = masked_mean_abs(&panels.denoised, &mask)?;
    let line = format!("background_maa raw={raw_maa:.6} denoised={denoised_maa:.6}");
    println!("{line}");
    std::fs::write(out.join("background_maa.txt"), line + "\n")?;
    println!("panels written under {}", out.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------

/// Shared by tests: ground truth of a dataset in eval form.
#[allow(dead_code)]
pub fn ground_truth_of(root: &Path, split: Split) -> Result<(Dataset, BTreeMap<String, Vec<GtBox>>)> {
    let ds = load_dataset(root, split)?;
    let gts = dataset_ground_truth(&ds);
    Ok((ds, gts))
}
