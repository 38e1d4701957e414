use crate::CliError;
use orchard_core::geometry::CameraMatrix;
use orchard_core::io::colmap::{default_frame_pattern, read_colmap_with_pattern};
use orchard_core::io::detections::stride_sample;
use orchard_core::io::mot16::{
    degrade_rows, detections_from_rows, labeled_from_rows, read_mot16, write_mot16, Mot16Row,
};
use orchard_core::io::scene::write_scene_dir;
use orchard_core::metrics::{filter_gt_visibility, hota, HotaReport, LabeledBox};
use orchard_core::regressor::{
    filter_by_ratio, fit_preprocess, kfold_cv, r2, read_tree_records, train_mlp, CvReport, MlpArch, TrainHyper,
};
use orchard_core::simulator::{generate_scene, SceneConfig};
use orchard_core::sphere::RansacParams;
use orchard_core::tracker::{result_to_labeled, run, TrackerConfig};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

fn internal(msg: impl std::fmt::Display) -> CliError {
    CliError::Internal(msg.to_string())
}

fn input(msg: impl std::fmt::Display) -> CliError {
    CliError::Input(msg.to_string())
}

pub fn simulate(
    out: &Path,
    config: Option<&Path>,
    spheres: Option<usize>,
    frames: Option<usize>,
    explicit_seed: Option<u64>,
    resolved_seed: u64,
) -> Result<(), CliError> {
    let mut cfg = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(input)?;
            serde_json::from_str::<SceneConfig>(&text).map_err(|e| input(format!("{}: {e}", path.display())))?
        }
        None => SceneConfig { seed: resolved_seed, ..SceneConfig::default() },
    };
    if explicit_seed.is_some() {
        cfg.seed = resolved_seed;
    }
    if let Some(n) = spheres {
        cfg.n_spheres = n;
    }
    if let Some(n) = frames {
        cfg.n_frames = n;
    }
    let scene = generate_scene(&cfg).map_err(input)?;
    write_scene_dir(out, &scene)?;
    println!(
        "scene written to {}: {} spheres ({} visible in gt), {} frames, {} gt boxes",
        out.display(),
        scene.spheres.len(),
        scene.visible_sphere_count(),
        cfg.n_frames,
        scene.gt_boxes.len()
    );
    Ok(())
}

pub fn degrade(gt: &Path, rate: f64, out: &Path, seed: u64) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(input(format!("--rate must lie in [0, 1], got {rate}")));
    }
    let rows = read_mot16(gt)?;
    let kept = degrade_rows(&rows, rate, seed);
    write_mot16(out, &kept)?;
    println!("kept {}/{} boxes at rate {rate} (seed {seed})", kept.len(), rows.len());
    Ok(())
}

pub struct TrackArgs {
    pub dets: PathBuf,
    pub cameras: PathBuf,
    pub images: PathBuf,
    pub out: PathBuf,
    pub summary: Option<PathBuf>,
    pub relocalization: bool,
    pub ray_correction: f64,
    pub max_geom_error: f64,
    pub inliers_ratio: f64,
    pub max_iters: usize,
    pub min_track_len: usize,
    pub reloc_min_iou: f64,
    pub frame_pattern: Option<String>,
    pub stride: Option<usize>,
}

#[derive(Serialize)]
struct TrackSummary {
    count: usize,
    total_tracks: usize,
    nil_tracks: usize,
    frames: usize,
    relocalization: bool,
}

pub fn track(args: TrackArgs) -> Result<(), CliError> {
    let pattern = match &args.frame_pattern {
        Some(p) => regex::Regex::new(p).map_err(|e| input(format!("--frame-pattern: {e}")))?,
        None => default_frame_pattern(),
    };
    let model = read_colmap_with_pattern(&args.cameras, &args.images, &pattern)?;
    for w in &model.warnings {
        eprintln!("warning: {w}");
    }
    if model.cams.is_empty() {
        return Err(input("no camera poses found"));
    }
    let rows = read_mot16(&args.dets)?;

    let cam_max = model.cams.keys().next_back().copied().unwrap_or(0);
    let det_max = rows.iter().map(|r| r.frame).max().unwrap_or(0);
    let n_frames = cam_max.max(det_max);
    let mut seq = detections_from_rows(&rows, Some(n_frames));
    let mut cams = model.cams;

    if let Some(stride) = args.stride.filter(|&s| s > 1) {
        let frames: Vec<usize> = (1..=n_frames).collect();
        let mapping = stride_sample(&frames, stride)?;
        let mut new_seq = Vec::with_capacity(mapping.len());
        let mut new_cams: BTreeMap<usize, CameraMatrix> = BTreeMap::new();
        for &(new, orig) in &mapping {
            let mut dets = seq[orig - 1].clone();
            dets.frame = new;
            new_seq.push(dets);
            if let Some(cam) = cams.get(&orig) {
                new_cams.insert(new, CameraMatrix::new(*cam.matrix(), new).map_err(internal)?);
            }
        }
        seq = new_seq;
        cams = new_cams;
    }

    let cfg = TrackerConfig {
        ransac: RansacParams {
            max_geom_error: args.max_geom_error,
            inliers_ratio: args.inliers_ratio,
            max_iters: args.max_iters,
            min_track_len: args.min_track_len,
        },
        ray_correction: args.ray_correction,
        f_focal: model.focal,
        image_width: model.image_width,
        image_height: model.image_height,
        reloc_min_iou: args.reloc_min_iou,
        relocalization: args.relocalization,
    };
    let result = run(&seq, &cams, &cfg).map_err(input)?;

    let pred_rows: Vec<Mot16Row> =
        result_to_labeled(&result).iter().map(|b| Mot16Row::from_labeled(b, 1.0)).collect();
    write_mot16(&args.out, &pred_rows)?;
    let summary = TrackSummary {
        count: result.count,
        total_tracks: result.tracks.len(),
        nil_tracks: result.tracks.iter().filter(|t| t.id.is_none()).count(),
        frames: seq.len(),
        relocalization: args.relocalization,
    };
    if let Some(path) = &args.summary {
        std::fs::write(path, serde_json::to_string_pretty(&summary).map_err(internal)?).map_err(internal)?;
    }
    println!(
        "tracked {} frames: {} fruits counted ({} tracks total, {} provisional)",
        summary.frames, summary.count, summary.total_tracks, summary.nil_tracks
    );
    Ok(())
}

fn load_eval_pair(pred: &Path, gt: &Path, min_visibility: f64) -> Result<(Vec<LabeledBox>, Vec<LabeledBox>), CliError> {
    let pred_rows = read_mot16(pred)?;
    let gt_rows = read_mot16(gt)?;
    let pred = labeled_from_rows(&pred_rows)?;
    let gt = filter_gt_visibility(&labeled_from_rows(&gt_rows)?, min_visibility);
    Ok((pred, gt))
}

fn score_line(name: &str, r: &HotaReport) -> String {
    format!(
        "{name},{:.5},{:.5},{:.5},{:.5},{},{},{:.5}",
        r.hota, r.deta, r.assa, r.mota, r.counting.cbyt, r.counting.cbyt_gt, r.counting.relative_error
    )
}

const REPORT_HEADER: &str = "Sequence,HOTA,DetA,AssA,MOTA,CbyT,CbyT-GT,RelErr";

pub fn eval(
    pred: &Path,
    gt: &Path,
    out_json: Option<&Path>,
    out_csv: Option<&Path>,
    min_visibility: f64,
) -> Result<(), CliError> {
    let (pred_boxes, gt_boxes) = load_eval_pair(pred, gt, min_visibility)?;
    let report = hota(&pred_boxes, &gt_boxes).map_err(input)?;
    let name = pred.file_stem().and_then(|s| s.to_str()).unwrap_or("sequence").to_string();
    if let Some(path) = out_json {
        std::fs::write(path, serde_json::to_string_pretty(&report).map_err(internal)?).map_err(internal)?;
    }
    if let Some(path) = out_csv {
        let csv = format!("{REPORT_HEADER}\n{}\n", score_line(&name, &report));
        std::fs::write(path, csv).map_err(internal)?;
    }
    println!(
        "HOTA {:.5}  DetA {:.5}  AssA {:.5}  MOTA {:.5}  CbyT {}/{} (rel err {:.2}%)",
        report.hota,
        report.deta,
        report.assa,
        report.mota,
        report.counting.cbyt,
        report.counting.cbyt_gt,
        100.0 * report.counting.relative_error
    );
    Ok(())
}

pub fn report(seqs: &[String], out: &Path, min_visibility: f64) -> Result<(), CliError> {
    if seqs.is_empty() {
        return Err(input("at least one --seq NAME=PRED,GT is required"));
    }
    let mut csv = format!("{REPORT_HEADER}\n");
    let mut pooled_pred: Vec<LabeledBox> = Vec::new();
    let mut pooled_gt: Vec<LabeledBox> = Vec::new();
    let mut frame_offset = 0usize;
    let mut gt_id_offset = 0u32;
    let mut pred_id_offset = 0u32;

    for spec in seqs {
        let (name, paths) = spec
            .split_once('=')
            .ok_or_else(|| input(format!("--seq '{spec}' is not NAME=PRED,GT")))?;
        let (pred_path, gt_path) = paths
            .split_once(',')
            .ok_or_else(|| input(format!("--seq '{spec}' is not NAME=PRED,GT")))?;
        let (pred_boxes, gt_boxes) =
            load_eval_pair(Path::new(pred_path), Path::new(gt_path), min_visibility)?;
        let r = hota(&pred_boxes, &gt_boxes).map_err(|e| input(format!("{name}: {e}")))?;
        csv.push_str(&score_line(name, &r));
        csv.push('\n');

        let max_frame = pred_boxes.iter().chain(&gt_boxes).map(|b| b.frame).max().unwrap_or(0);
        let max_pred_id = pred_boxes.iter().map(|b| b.track_id).max().unwrap_or(0);
        let max_gt_id = gt_boxes.iter().map(|b| b.track_id).max().unwrap_or(0);
        let shift = |boxes: &[LabeledBox], id_off: u32| -> Vec<LabeledBox> {
            boxes
                .iter()
                .map(|b| LabeledBox {
                    frame: b.frame + frame_offset,
                    track_id: b.track_id + id_off,
                    ..b.clone()
                })
                .collect()
        };
        pooled_pred.extend(shift(&pred_boxes, pred_id_offset));
        pooled_gt.extend(shift(&gt_boxes, gt_id_offset));
        frame_offset += max_frame;
        pred_id_offset += max_pred_id;
        gt_id_offset += max_gt_id;
    }

    let all = hota(&pooled_pred, &pooled_gt).map_err(input)?;
    csv.push_str(&score_line("All", &all));
    csv.push('\n');
    std::fs::write(out, &csv).map_err(internal)?;
    println!(
        "report for {} sequences written to {} (All: HOTA {:.5}, rel err {:.2}%)",
        seqs.len(),
        out.display(),
        all.hota,
        100.0 * all.counting.relative_error
    );
    Ok(())
}

pub struct RegressArgs {
    pub records: PathBuf,
    pub ratio_threshold: f64,
    pub hidden: String,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub test_fraction: f64,
    pub cv_grid: Option<String>,
    pub out_metrics: Option<PathBuf>,
    pub out_predictions: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Serialize)]
struct RegressMetrics {
    n_records: usize,
    n_complete: usize,
    n_after_ratio: usize,
    n_train: usize,
    n_test: usize,
    ratio_threshold: f64,
    hidden: Vec<usize>,
    r2_train: f64,
    r2_test: f64,
    skipped_zero_gt: Vec<String>,
    oov_values: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cv: Option<CvReport>,
}

fn parse_arch(spec: &str) -> Result<MlpArch, CliError> {
    let trimmed = spec.trim();
    if trimmed.is_empty() {
        return Ok(MlpArch { hidden: vec![] });
    }
    let hidden = trimmed
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| input(format!("bad layer width '{s}'"))))
        .collect::<Result<Vec<_>, _>>()?;
    if hidden.iter().any(|&w| w == 0) {
        return Err(input("layer widths must be positive"));
    }
    Ok(MlpArch { hidden })
}

pub fn regress(args: RegressArgs) -> Result<(), CliError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let records = read_tree_records(&args.records)?;
    let complete: Vec<_> = records.iter().filter(|r| r.is_complete()).cloned().collect();
    let dropped_incomplete = records.len() - complete.len();
    if dropped_incomplete > 0 {
        eprintln!("warning: {dropped_incomplete} records dropped (missing dimensions or counts)");
    }
    let filtered = filter_by_ratio(&complete, args.ratio_threshold);
    for id in &filtered.skipped {
        eprintln!("warning: record {id} skipped (zero manual count)");
    }
    let kept = filtered.kept;
    if kept.len() < 10 {
        return Err(input(format!("need at least 10 usable records, got {}", kept.len())));
    }

    let mut order: Vec<usize> = (0..kept.len()).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    order.shuffle(&mut rng);
    let n_test = ((kept.len() as f64 * args.test_fraction).round() as usize).clamp(2, kept.len() - 2);
    let (test_idx, train_idx) = order.split_at(n_test);
    let train: Vec<_> = train_idx.iter().map(|&i| kept[i].clone()).collect();
    let test: Vec<_> = test_idx.iter().map(|&i| kept[i].clone()).collect();

    let plan = fit_preprocess(&train).map_err(input)?;
    let xs: Vec<Vec<f64>> = train.iter().map(|r| plan.transform(r)).collect();
    let ys: Vec<f64> = train.iter().map(|r| r.target()).collect();
    let arch = parse_arch(&args.hidden)?;
    let hyper = TrainHyper {
        lr: args.lr,
        momentum: args.momentum,
        epochs: args.epochs,
        batch: args.batch,
        seed: args.seed,
    };
    let model = train_mlp(&xs, &ys, &arch, &hyper).map_err(input)?;

    let mut oov_values: Vec<String> = Vec::new();
    let mut predict = |r: &orchard_core::regressor::TreeRecord| -> f64 {
        let (features, oov) = plan.transform_with_report(r);
        for o in oov {
            if !oov_values.contains(&o) {
                oov_values.push(o);
            }
        }
        model.predict(&features)
    };
    let train_pred: Vec<f64> = train.iter().map(&mut predict).collect();
    let test_pred: Vec<f64> = test.iter().map(&mut predict).collect();
    let train_actual: Vec<f64> = train.iter().map(|r| r.target()).collect();
    let test_actual: Vec<f64> = test.iter().map(|r| r.target()).collect();
    let r2_train = r2(&train_pred, &train_actual).map_err(input)?;
    let r2_test = r2(&test_pred, &test_actual).map_err(input)?;
    for o in &oov_values {
        eprintln!("warning: out-of-vocabulary value {o}");
    }

    let cv = match &args.cv_grid {
        Some(grid) => {
            let archs = grid.split(';').map(parse_arch).collect::<Result<Vec<_>, _>>()?;
            Some(kfold_cv(&kept, &archs, 10, 0.05, &hyper).map_err(input)?)
        }
        None => None,
    };

    if let Some(path) = &args.out_predictions {
        let mut csv = String::from("id,predicted,actual\n");
        for (r, p) in test.iter().zip(&test_pred) {
            csv.push_str(&format!("{},{:.3},{}\n", r.id, p, r.target()));
        }
        std::fs::write(path, csv).map_err(internal)?;
    }
    let metrics = RegressMetrics {
        n_records: records.len(),
        n_complete: complete.len(),
        n_after_ratio: kept.len(),
        n_train: train.len(),
        n_test: test.len(),
        ratio_threshold: args.ratio_threshold,
        hidden: arch.hidden.clone(),
        r2_train,
        r2_test,
        skipped_zero_gt: filtered.skipped,
        oov_values,
        cv,
    };
    if let Some(path) = &args.out_metrics {
        std::fs::write(path, serde_json::to_string_pretty(&metrics).map_err(internal)?).map_err(internal)?;
    }
    println!(
        "trained on {} trees, tested on {}: R2 train {:.3}, test {:.3}",
        metrics.n_train, metrics.n_test, r2_train, r2_test
    );
    Ok(())
}

