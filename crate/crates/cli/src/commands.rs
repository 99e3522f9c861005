use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use graspkp::annotations::{group_by_image, read_grasps, read_lines};
use graspkp::dataset::{classify_annotation, coverage_ratio, CoverageRecord, FilterReport};
use graspkp::evaluator::{evaluate_dataset, MatchCriteria, Policy};
use graspkp::gktb::{read_bundle, read_stacks, write_bundle};
use graspkp::scoring::score_grasps;
use graspkp::selfcheck::{check_all_losses, check_loss, round_trip, GradCheckConfig, LossName};
use graspkp::simulation::{run_trials, BinPickingConfig, DetectorKind, SceneConfig};
use graspkp::{
    decode_bundle, encode_targets, ideal_bundle, DecodeConfig, DepthImage, EncoderConfig, GripperModel2D, HeatmapBundle, Profile,
    ProfileName,
};

use crate::{
    DecodeArgs, DetectorArg, EncodeArgs, EncodeMode, EvaluateArgs, FilterArgs, GradcheckArgs, GroupArgs, LossArg,
    Outcome, PolicyArg, ScoreArgs, SelftestArgs, SimulateArgs,
};

/// Image id for records that carry none.
const DEFAULT_IMAGE_ID: &str = "default";

/// Image size matching the profile's heatmap size at R = 4.
fn default_image_size(profile: ProfileName) -> usize {
    match profile {
        ProfileName::Cornell => 227,
        ProfileName::Ajd => 512,
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn emit<W: Write, S: Serialize>(out: &mut W, value: &S) -> Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn load_bundle(path: &Path, profile: &Profile) -> Result<HeatmapBundle> {
    let bundle = read_bundle(open(path)?).with_context(|| format!("reading bundle {}", path.display()))?;
    if bundle.num_classes != profile.num_classes || bundle.downsample_ratio != profile.downsample_ratio {
        bail!(
            "bundle has {} classes at ratio {}, but profile {} expects {} at ratio {}",
            bundle.num_classes,
            bundle.downsample_ratio,
            profile.name,
            profile.num_classes,
            profile.downsample_ratio
        );
    }
    Ok(bundle)
}

pub fn encode(a: &EncodeArgs) -> Result<Outcome> {
    let profile = Profile::named(a.profile.into());
    let side = default_image_size(profile.name);
    let (h, w) = (a.height.unwrap_or(side), a.width.unwrap_or(side));
    if h == 0 || w == 0 {
        bail!("image dimensions must be positive");
    }
    let grasps = read_grasps::<f64, _>(open(&a.annotations)?)
        .with_context(|| format!("reading {}", a.annotations.display()))?;
    let cfg = EncoderConfig::new(profile.num_classes, profile.downsample_ratio, h, w);
    let (bundle, kept) = match a.mode {
        EncodeMode::Targets => {
            let t = encode_targets(&grasps, &cfg)?;
            let n = t.keypoints.len();
            (t.bundle, n)
        }
        EncodeMode::Ideal => (ideal_bundle(&grasps, &cfg, a.seed)?, grasps.len()),
    };
    let sink = File::create(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let bytes = write_bundle(&bundle, BufWriter::new(sink))?;
    let mode = match a.mode {
        EncodeMode::Targets => "targets",
        EncodeMode::Ideal => "ideal",
    };
    let summary = json!({
        "profile": profile.name,
        "mode": mode,
        "seed": a.seed,
        "image": [h, w],
        "heatmap": [bundle.height(), bundle.width()],
        "annotations": grasps.len(),
        "encoded": kept,
        "bytes": bytes,
    });
    emit(&mut io::stdout().lock(), &summary)?;
    Ok(Outcome::Success)
}

pub fn decode(a: &DecodeArgs) -> Result<Outcome> {
    let profile = Profile::named(a.profile.into());
    let bundle = load_bundle(&a.bundle, &profile)?;
    let cfg = DecodeConfig {
        k: a.k,
        suppress_non_maxima: !a.no_nms,
    };
    let (left, right) = decode_bundle::<f64>(&bundle, &cfg);
    let mut out = BufWriter::new(io::stdout().lock());
    emit(&mut out, &json!({"metadata": {"command": "decode", "profile": profile.name, "k": a.k, "nms": !a.no_nms}}))?;
    for kp in left.iter().chain(&right) {
        emit(&mut out, kp)?;
    }
    out.flush()?;
    Ok(Outcome::Success)
}

pub fn group(a: &GroupArgs) -> Result<Outcome> {
    let profile = Profile::named(a.profile.into());
    let mut thresholds = profile.thresholds;
    let mut overrides = serde_json::Map::new();
    let mut set = |name: &str, value: Option<f64>, slot: &mut f64| {
        if let Some(v) = value {
            *slot = v;
            overrides.insert(name.to_string(), json!(v));
        }
    };
    set("rho_embed", a.rho_embed, &mut thresholds.rho_embed);
    set("rho_cen", a.rho_cen, &mut thresholds.rho_cen);
    set("tau_orient", a.tau_orient, &mut thresholds.tau_orient);
    if a.top != thresholds.max_output {
        overrides.insert("top".into(), json!(a.top));
    }
    if a.k != graspkp::DEFAULT_TOP_K {
        overrides.insert("k".into(), json!(a.k));
    }
    thresholds.max_output = a.top;
    for (name, v) in [("rho-embed", thresholds.rho_embed), ("rho-cen", thresholds.rho_cen), ("tau-orient", thresholds.tau_orient)] {
        if !v.is_finite() || v < 0.0 {
            bail!("--{name} must be a nonnegative finite number, got {v}");
        }
    }
    let bundle = load_bundle(&a.bundle, &profile)?;
    let decode = DecodeConfig {
        k: a.k,
        suppress_non_maxima: true,
    };
    let ranked = graspkp::group::<f64>(&bundle, &thresholds, &decode);
    let mut out = BufWriter::new(io::stdout().lock());
    let meta = json!({"metadata": {
        "command": "group",
        "profile": profile.name,
        "thresholds": thresholds,
        "k": a.k,
        "top": a.top,
        "overrides": overrides,
    }});
    emit(&mut out, &meta)?;
    for (rank, r) in ranked.iter().enumerate() {
        let mut rec = json!({
            "x": r.grasp.x,
            "y": r.grasp.y,
            "theta_deg": r.grasp.theta.to_degrees(),
            "w": r.grasp.w,
            "h": Value::Null,
            "rank": rank,
            "class_index": r.candidate.class_index,
            "center_score": r.candidate.center_score,
            "keypoint_score": r.candidate.keypoint_score(),
            "theta_discrete_deg": r.candidate.theta_discrete.to_degrees(),
        });
        if let Some(id) = &a.image_id {
            rec["image_id"] = json!(id);
        }
        emit(&mut out, &rec)?;
    }
    out.flush()?;
    Ok(Outcome::Success)
}

pub fn evaluate(a: &EvaluateArgs) -> Result<Outcome> {
    let profile = Profile::named(a.profile.into());
    let load = |path: &Path| -> Result<BTreeMap<String, Vec<graspkp::Grasp>>> {
        let lines = read_lines::<f64, _>(open(path)?).with_context(|| format!("reading {}", path.display()))?;
        Ok(group_by_image(lines, DEFAULT_IMAGE_ID))
    };
    let preds = load(&a.pred)?;
    let truths = load(&a.truth)?;
    let policy = match a.policy {
        PolicyArg::Top1 => Policy::Top1,
        PolicyArg::TopN => Policy::TopN(a.top),
    };
    let criteria = MatchCriteria::for_profile(&profile);
    let report = evaluate_dataset(&preds, &truths, &criteria, policy)?;
    emit(&mut io::stdout().lock(), &report)?;
    Ok(Outcome::Success)
}

fn load_depth(path: &Path) -> Result<DepthImage> {
    let file = read_stacks(open(path)?).with_context(|| format!("reading depth {}", path.display()))?;
    let single = |name: &str| -> Result<Option<graspkp::Grid2D>> {
        match file.stack(name) {
            None => Ok(None),
            Some(s) if s.grids.len() == 1 => Ok(Some(s.grids[0].clone())),
            Some(s) => bail!("plane `{name}` has {} channels, expected 1", s.grids.len()),
        }
    };
    let depth = single("depth")?.context("depth file has no `depth` plane")?.to_scalar::<f64>();
    let image = match single("surface")? {
        Some(surface) => DepthImage::new(depth, surface.to_scalar())?,
        None => DepthImage::flat_surface(depth)?,
    };
    Ok(image)
}

pub fn score(a: &ScoreArgs) -> Result<Outcome> {
    let grasps = read_grasps::<f64, _>(open(&a.grasps)?).with_context(|| format!("reading {}", a.grasps.display()))?;
    let image = load_depth(&a.depth)?;
    let model: GripperModel2D = match &a.gripper {
        Some(p) => serde_json::from_reader(open(p)?).with_context(|| format!("parsing gripper {}", p.display()))?,
        None => GripperModel2D::default(),
    };
    model.validate()?;
    let scored = score_grasps(&grasps, &image, &model);
    let mut out = BufWriter::new(io::stdout().lock());
    emit(&mut out, &json!({"metadata": {"command": "score", "gripper": model}}))?;
    for s in &scored {
        let mut rec = json!({
            "x": s.grasp.x,
            "y": s.grasp.y,
            "theta_deg": s.grasp.theta.to_degrees(),
            "w": s.grasp.w,
            "h": s.grasp.h,
            "input_rank": s.rank,
            "total": s.total,
        });
        if let Some(sc) = s.score {
            rec["collision"] = json!(sc.collision);
            rec["occupancy"] = json!(sc.occupancy);
            rec["height"] = json!(sc.height);
        }
        if let Some(e) = &s.error {
            rec["error"] = json!(e);
        }
        emit(&mut out, &rec)?;
    }
    out.flush()?;
    Ok(Outcome::Success)
}

pub fn simulate(a: &SimulateArgs) -> Result<Outcome> {
    let detector = match a.detector {
        DetectorArg::Oracle => DetectorKind::Oracle,
        DetectorArg::Pipeline => DetectorKind::Pipeline,
        DetectorArg::AlwaysFail => DetectorKind::AlwaysFail,
    };
    let config = BinPickingConfig {
        top_k: a.top,
        max_attempts: a.max_attempts,
        ..BinPickingConfig::default()
    };
    let scene = SceneConfig::default();
    let logs = run_trials(a.seed, a.objects, a.trials, detector, a.profile.into(), &scene, &config)?;
    let mut out = BufWriter::new(io::stdout().lock());
    emit(&mut out, &json!({"metadata": {
        "command": "simulate-binpick",
        "seed": a.seed,
        "objects": a.objects,
        "trials": a.trials,
        "detector": detector,
        "profile": ProfileName::from(a.profile),
        "config": config,
        "scene": scene,
    }}))?;
    for log in &logs {
        emit(&mut out, log)?;
    }
    let n = logs.len().max(1) as f64;
    let attempts: usize = logs.iter().map(|l| l.attempts.len()).sum();
    let successes: usize = logs.iter().map(|l| l.successes).sum();
    emit(&mut out, &json!({"summary": {
        "trials": logs.len(),
        "attempts": attempts,
        "successes": successes,
        "success_rate_percent": if attempts == 0 { 0.0 } else { 100.0 * successes as f64 / attempts as f64 },
        "mean_percent_cleared": logs.iter().map(|l| l.percent_cleared).sum::<f64>() / n,
    }}))?;
    out.flush()?;
    Ok(Outcome::Success)
}

pub fn filter(a: &FilterArgs) -> Result<Outcome> {
    let mut masks: Vec<_> = fs::read_dir(&a.masks)
        .with_context(|| format!("cannot list {}", a.masks.display()))?
        .collect::<io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "gktb"))
        .collect();
    masks.sort();
    let mut records = Vec::with_capacity(masks.len());
    let mut missing = Vec::new();
    for mask_path in &masks {
        let id = mask_path.file_stem().and_then(|s| s.to_str()).context("mask file name is not UTF-8")?.to_string();
        let ann_path = a.annotations.join(format!("{id}.jsonl"));
        if !ann_path.exists() {
            missing.push(id);
            continue;
        }
        let file = read_stacks(open(mask_path)?).with_context(|| format!("reading mask {}", mask_path.display()))?;
        let mask = match (file.stack("mask"), file.stacks.as_slice()) {
            (Some(s), _) if s.grids.len() == 1 => &s.grids[0],
            (None, [only]) if only.grids.len() == 1 => &only.grids[0],
            _ => bail!("{} must hold a single `mask` plane", mask_path.display()),
        };
        let grasps = read_grasps::<f64, _>(open(&ann_path)?).with_context(|| format!("reading {}", ann_path.display()))?;
        let ratio = coverage_ratio(&grasps, mask).with_context(|| format!("image {id}"))?;
        records.push(CoverageRecord {
            image_id: id,
            ratio,
            decision: classify_annotation(ratio).decision,
        });
    }
    if !missing.is_empty() {
        bail!("no annotation file for masks: {}", missing.join(", "));
    }
    let report = FilterReport::new(records);
    let sink = File::create(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let mut w = BufWriter::new(sink);
    serde_json::to_writer_pretty(&mut w, &report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    emit(
        &mut io::stdout().lock(),
        &json!({"images": report.records.len(), "kept": report.kept, "removed": report.removed, "review": report.review}),
    )?;
    Ok(Outcome::Success)
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<Outcome> {
    let cfg = GradCheckConfig {
        seed: a.seed,
        points: a.points,
        step: a.step,
        tolerance: a.tol,
    };
    let summaries = match a.loss {
        LossArg::All => check_all_losses(&cfg)?,
        one => {
            let name = match one {
                LossArg::Detection => LossName::Detection,
                LossArg::Offset => LossName::Offset,
                LossArg::Pull => LossName::Pull,
                LossArg::Push => LossName::Push,
                _ => LossName::Total,
            };
            vec![check_loss(name, &cfg)?]
        }
    };
    let passed = summaries.iter().all(|s| s.passed);
    emit(&mut io::stdout().lock(), &json!({"config": cfg, "losses": summaries, "passed": passed}))?;
    Ok(if passed { Outcome::Success } else { Outcome::CheckFailed })
}

pub fn selftest(a: &SelftestArgs) -> Result<Outcome> {
    let trips: Vec<_> = [ProfileName::Cornell, ProfileName::Ajd]
        .into_iter()
        .map(|p| {
            let side = default_image_size(p);
            round_trip(&Profile::named(p), (side, side), a.sets, a.seed)
        })
        .collect();
    let cfg = GradCheckConfig {
        seed: a.seed,
        points: 20,
        ..GradCheckConfig::default()
    };
    let losses = check_all_losses(&cfg)?;
    let passed = trips.iter().all(|t| t.passed) && losses.iter().all(|l| l.passed);
    emit(&mut io::stdout().lock(), &json!({"round_trip": trips, "gradients": losses, "passed": passed}))?;
    if !passed {
        eprintln!("selftest failed");
    }
    Ok(if passed { Outcome::Success } else { Outcome::CheckFailed })
}
