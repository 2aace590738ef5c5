//! Acceptance gate: nine end-to-end criteria, one PASS/FAIL line each.
//! Exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use crowdcrop::annomodel::{
    parse_dataset, serialize_dataset, Dataset, PersonAnnotation, SourceScene, Split,
};
use crowdcrop::evaluator::{f1, match_and_score, Detection, DetectionSet};
use crowdcrop::exec::Execution;
use crowdcrop::geometry::{
    from_crop_coords, iou, person_scale, to_crop_coords, BBox, Keypoint, Rect,
};
use crowdcrop::sampler::{sample_dataset, CropRecord, CropStats, GenerationConfig, Resolution};
use crowdcrop::scenegen::{generate_scene, SceneGenParams};
use crowdcrop::spindex::SceneIndex;
use crowdcrop::stats::{dataset_stats, image_occlusion, relative_difference, DatasetStats};
use crowdcrop::synth::raster::{decode_png, Pattern, PixelRect, ProceduralRaster};
use crowdcrop::synth::{
    assign_splits, bucket_key, emit_dataset, extract_raster, EmitOptions, RunManifest,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_crowdcrop");

struct Gate {
    results: Vec<(String, bool)>,
}

impl Gate {
    fn record(&mut self, name: &str, outcome: Result<String, String>) {
        let (ok, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        self.results.push((name.to_string(), ok));
    }
}

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(name: &str, value: f64, target: f64, tol: f64) -> Result<String, String> {
    let s = format!("{name} {value:.4} (target {target} ± {tol})");
    if (value - target).abs() <= tol {
        Ok(s)
    } else {
        Err(s)
    }
}

fn cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn load(path: &Path) -> Dataset {
    parse_dataset(&read(path)).expect("emitted dataset parses")
}

fn union(a: &Dataset, b: &Dataset) -> Dataset {
    let mut d = a.clone();
    d.images.extend(b.images.iter().cloned());
    d.annotations.extend(b.annotations.iter().cloned());
    d
}

/// Workspace shared by criteria 1, 2, 5 and 7.
struct Run {
    dir: PathBuf,
    scenes: PathBuf,
    seconds: f64,
}

fn reference_run(root: &Path) -> Result<Run, String> {
    let scenes_dir = root.join("scenes");
    let start = Instant::now();
    let s = scenes_dir.to_str().unwrap();
    let (code, err) = cli(&["synth-scenes", "--count", "20", "--seed", "1", "--out", s]);
    check(code == 0, format!("synth-scenes exited {code}: {err}"))?;
    let scenes = scenes_dir.join("scenes.json");
    let out = root.join("run_w1");
    let (code, err) = cli(&[
        "generate",
        "--scenes",
        scenes.to_str().unwrap(),
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
        "--annotations-only",
        "--workers",
        "1",
    ]);
    check(code == 0, format!("generate exited {code}: {err}"))?;
    Ok(Run {
        dir: out,
        scenes,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn criterion_1(run: &Run) -> Result<String, String> {
    let train = load(&run.dir.join("annotations/train.json"));
    let val = load(&run.dir.join("annotations/val.json"));
    let all = union(&train, &val);
    let s = dataset_stats(&all).map_err(|e| e.to_string())?;
    let sc = s.scale_summary.ok_or("no persons")?;
    let max_persons = all
        .annotations_by_image()
        .iter()
        .map(|(_, a)| a.len())
        .max()
        .unwrap_or(0);
    let parts = [
        within("persons/image", s.persons_per_image_mean, 9.33, 0.9),
        within("avg IoU", s.avg_iou, 0.33, 0.05),
        within("empty", s.empty_fraction, 0.04, 0.01),
        within("median scale", sc.median, 0.216, 0.05),
        within("q1", sc.q1, 0.126, 0.06),
        within("q3", sc.q3, 0.373, 0.06),
    ];
    let mut msg: Vec<String> = parts
        .iter()
        .map(|p| p.clone().unwrap_or_else(|e| e))
        .collect();
    msg.push(format!("max persons {max_persons}"));
    msg.push(format!("images {}", s.image_count));
    msg.push(format!("{:.1}s", run.seconds));
    let ok = parts.iter().all(Result::is_ok)
        && max_persons <= 30
        && s.image_count == 2000
        && run.seconds <= 300.0;
    let text = msg.join(", ");
    if ok {
        Ok(text)
    } else {
        Err(text)
    }
}

fn criterion_2(root: &Path, run: &Run) -> Result<String, String> {
    let scenes = run.scenes.to_str().unwrap();
    let mut outs = Vec::new();
    for (name, workers) in [("run_w8a", "8"), ("run_w8b", "8")] {
        let out = root.join(name);
        let (code, err) = cli(&[
            "generate",
            "--scenes",
            scenes,
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
            "--annotations-only",
            "--workers",
            workers,
        ]);
        check(code == 0, format!("generate exited {code}: {err}"))?;
        outs.push(out);
    }
    let files = [
        "annotations/train.json",
        "annotations/val.json",
        "manifest.json",
    ];
    for f in files {
        let bytes = |d: &Path| std::fs::read(d.join(f)).unwrap();
        check(
            bytes(&outs[0]) == bytes(&outs[1]),
            format!("{f} differs between identical runs"),
        )?;
        check(
            bytes(&run.dir) == bytes(&outs[0]),
            format!("{f} differs between 1 and 8 workers"),
        )?;
    }

    // Library-level check of the accepted-crop records themselves.
    let scene_set: Vec<SourceScene> = (1..=4)
        .map(|i| {
            generate_scene(
                &SceneGenParams {
                    seed: i,
                    ..Default::default()
                },
                i,
            )
            .unwrap()
        })
        .collect();
    let cfg = GenerationConfig {
        dataset_size: 300,
        ..GenerationConfig::panda_pose()
    };
    let crops = |workers, exec| -> Vec<CropRecord> {
        Execution::Parallel.with_workers(Some(workers), || {
            sample_dataset(&scene_set, &cfg, exec).unwrap()
        })
    };
    let serial = crops(1, Execution::Serial);
    check(
        serial == crops(1, Execution::Parallel),
        "1-worker crop set differs",
    )?;
    check(
        serial == crops(8, Execution::Parallel),
        "8-worker crop set differs",
    )?;
    Ok("annotations and manifest byte-identical across reruns and 1/8 workers; crop records identical".into())
}

/// Covered unit cells of a box with corners on a half-pixel grid.
fn half_grid_cells(b: &BBox) -> std::collections::HashSet<(i64, i64)> {
    let (x0, y0) = ((2.0 * b.x) as i64, (2.0 * b.y) as i64);
    let (x1, y1) = ((2.0 * b.right()) as i64, (2.0 * b.bottom()) as i64);
    (x0..x1)
        .flat_map(|x| (y0..y1).map(move |y| (x, y)))
        .collect()
}

fn criterion_3() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let half = |rng: &mut ChaCha8Rng, lo: i32, hi: i32| rng.random_range(lo..hi) as f64 / 2.0;
    let mut worst_iou = 0.0f64;
    for _ in 0..1000 {
        let a = BBox::new(
            half(&mut rng, 0, 80),
            half(&mut rng, 0, 80),
            half(&mut rng, 1, 40),
            half(&mut rng, 1, 40),
        );
        let b = BBox::new(
            half(&mut rng, 0, 80),
            half(&mut rng, 0, 80),
            half(&mut rng, 1, 40),
            half(&mut rng, 1, 40),
        );
        let (ca, cb) = (half_grid_cells(&a), half_grid_cells(&b));
        let inter = ca.intersection(&cb).count() as f64;
        let oracle = inter / (ca.len() as f64 + cb.len() as f64 - inter);
        worst_iou = worst_iou.max((iou(&a, &b) - oracle).abs());
    }
    check(
        worst_iou <= 1e-12,
        format!("IoU deviates from raster oracle by {worst_iou:e}"),
    )?;

    let mut worst_rt = 0.0f64;
    for _ in 0..10_000 {
        let w = rng.random_range(480.0..3840.0f64).round();
        let crop = Rect::new(
            rng.random_range(0.0..20_000.0f64).floor(),
            rng.random_range(0.0..10_000.0f64).floor(),
            w,
            (w * 0.75).round(),
        );
        let out_w = rng.random_range(64.0..4000.0);
        let out_h = out_w * 0.75;
        let p = Keypoint::new(
            crop.x + rng.random::<f64>() * crop.w,
            crop.y + rng.random::<f64>() * crop.h,
            2,
        );
        let back = from_crop_coords(to_crop_coords(p, &crop, out_w, out_h), &crop, out_w, out_h);
        worst_rt = worst_rt.max((back.x - p.x).abs()).max((back.y - p.y).abs());
    }
    check(
        worst_rt <= 1e-6,
        format!("remap round trip off by {worst_rt:e} px"),
    )?;
    Ok(format!("IoU max error {worst_iou:e} on 1000 pairs; remap max error {worst_rt:e} px on 10000 points"))
}

fn criterion_4() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (w, h) = (10_000.0, 7_000.0);
    let boxes: Vec<BBox> = (0..1000)
        .map(|_| {
            let bw = rng.random_range(5.0..400.0);
            let bh = rng.random_range(5.0..600.0);
            BBox::new(
                rng.random_range(0.0..w - bw),
                rng.random_range(0.0..h - bh),
                bw,
                bh,
            )
        })
        .collect();
    let mut total = 0;
    for cell in [w / 64.0, 37.0, 1500.0] {
        let index = SceneIndex::from_boxes(boxes.clone(), w, h, cell);
        let mut wrng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..1000 {
            let ww = wrng.random_range(1.0..4000.0);
            let wh = wrng.random_range(1.0..3000.0);
            let win = Rect::new(
                wrng.random_range(-100.0..w),
                wrng.random_range(-100.0..h),
                ww,
                wh,
            );
            let brute: Vec<usize> = (0..boxes.len())
                .filter(|&i| boxes[i].intersects(&win))
                .collect();
            let got = index.query(&win);
            check(
                got == brute,
                format!("cell {cell}: window {win:?} mismatch"),
            )?;
            total += brute.len();
        }
    }
    Ok(format!("3 cell sizes x 1000 windows exact ({total} hits)"))
}

fn crop_stats_of(img_w: f64, img_h: f64, anns: &[&PersonAnnotation]) -> CropStats {
    let boxes: Vec<BBox> = anns.iter().map(|a| a.bbox).collect();
    CropStats {
        person_count: boxes.len() as u32,
        occlusion: image_occlusion(&boxes),
        scales: boxes
            .iter()
            .map(|b| person_scale(b, img_w, img_h))
            .collect(),
        is_empty: boxes.is_empty(),
    }
}

fn criterion_5(run: &Run) -> Result<String, String> {
    let train = load(&run.dir.join("annotations/train.json"));
    let val = load(&run.dir.join("annotations/val.json"));
    let (st, sv) = (dataset_stats(&train).unwrap(), dataset_stats(&val).unwrap());
    let pairs = |s: &DatasetStats| {
        let q = s.scale_summary.unwrap();
        [
            s.persons_per_image_mean,
            s.avg_iou,
            s.empty_fraction,
            q.q1,
            q.median,
            q.q3,
        ]
    };
    let names = ["persons/image", "avg IoU", "empty", "q1", "median", "q3"];
    let diffs: Vec<f64> = pairs(&st)
        .iter()
        .zip(pairs(&sv))
        .map(|(a, b)| relative_difference(*a, b))
        .collect();
    let worst = diffs.iter().cloned().fold(0.0, f64::max);
    let worst_name = names[diffs.iter().position(|&d| d == worst).unwrap()];

    let mut buckets: BTreeMap<_, (usize, usize)> = BTreeMap::new();
    for (d, is_train) in [(&train, true), (&val, false)] {
        for (img, anns) in d.annotations_by_image() {
            let key = bucket_key(&crop_stats_of(img.width as f64, img.height as f64, &anns));
            let e = buckets.entry(key).or_default();
            if is_train {
                e.0 += 1
            } else {
                e.1 += 1
            }
        }
    }
    let off = buckets
        .iter()
        .map(|(_, (t, v))| (*t as f64 - 0.8 * (t + v) as f64).abs())
        .fold(0.0, f64::max);
    let msg = format!(
        "worst relative difference {:.2}% ({worst_name}); {} buckets, max deviation {off:.2} crops",
        100.0 * worst,
        buckets.len()
    );
    check(worst <= 0.05 && off <= 1.0, msg.clone())?;
    Ok(msg)
}

/// Independent OKS with the published COCO keypoint sigmas.
#[allow(clippy::needless_range_loop)]
fn oracle_oks(d: &Detection, g: &PersonAnnotation) -> f64 {
    const S: [f64; 17] = [
        0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072, 0.062, 0.062, 0.107, 0.107,
        0.087, 0.087, 0.089, 0.089,
    ];
    let mut sum = 0.0;
    let mut n = 0.0;
    for k in 0..17 {
        if g.keypoints[k].v > 0 {
            let dx = d.keypoints[k].x - g.keypoints[k].x;
            let dy = d.keypoints[k].y - g.keypoints[k].y;
            let var = (2.0 * S[k]) * (2.0 * S[k]);
            sum += (-(dx * dx + dy * dy) / var / (g.area + f64::EPSILON) / 2.0).exp();
            n += 1.0;
        }
    }
    sum / n
}

fn max_matching(m: &[Vec<f64>], t: f64, d: usize, used: &mut [bool]) -> usize {
    if d == m.len() {
        return 0;
    }
    let mut best = max_matching(m, t, d + 1, used);
    for g in 0..used.len() {
        if !used[g] && m[d][g] >= t {
            used[g] = true;
            best = best.max(1 + max_matching(m, t, d + 1, used));
            used[g] = false;
        }
    }
    best
}

fn eval_person(id: u64, image_id: u64, rng: &mut ChaCha8Rng) -> PersonAnnotation {
    let (x, y) = (rng.random_range(0.0..300.0), rng.random_range(0.0..200.0));
    let (w, h) = (rng.random_range(30.0..80.0), rng.random_range(80.0..200.0));
    let kps = std::array::from_fn(|_| {
        Keypoint::new(x + rng.random::<f64>() * w, y + rng.random::<f64>() * h, 2)
    });
    PersonAnnotation::new(id, image_id, BBox::new(x, y, w, h), kps)
}

fn criterion_6() -> Result<String, String> {
    // F1 identity against the published columns.
    let table2 = [
        (64.8, 69.6, 67.1),
        (66.3, 70.7, 68.4),
        (50.6, 59.2, 54.6),
        (48.9, 56.8, 52.6),
    ];
    let table3 = [
        (20.2, 24.0, 21.9),
        (21.1, 25.1, 23.4),
        (31.4, 38.7, 34.7),
        (34.6, 44.0, 38.7),
        (36.5, 44.0, 39.9),
        (41.3, 49.9, 45.2),
    ];
    for (ap, ar, want) in [table2[0], table2[2], table3[2], table3[5]] {
        let got = f1(ap, ar);
        check(
            (got - want).abs() <= 0.1,
            format!("f1({ap}, {ar}) = {got:.3}, want {want} ± 0.1"),
        )?;
    }
    let mut worst_row = 0.0f64;
    for (ap, ar, want) in table2.iter().chain(&table3) {
        worst_row = worst_row.max((f1(*ap, *ar) - want).abs());
    }
    check(
        worst_row <= 0.6,
        format!("table F1 column off by {worst_row:.3}"),
    )?;

    // Greedy protocol against an exhaustive best matching.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut differing, mut compared) = (0usize, 0usize);
    for fixture in 0..200u64 {
        let n_gt = rng.random_range(1..=6);
        let n_dt = rng.random_range(1..=6);
        let gts: Vec<PersonAnnotation> =
            (0..n_gt).map(|i| eval_person(i + 1, 1, &mut rng)).collect();
        let dets: Vec<Detection> = (0..n_dt)
            .map(|_| {
                let g = &gts[rng.random_range(0..gts.len())];
                let j: f64 = rng.random_range(0.0..15.0);
                Detection {
                    keypoints: std::array::from_fn(|k| {
                        Keypoint::new(
                            g.keypoints[k].x + rng.random_range(-j..=j),
                            g.keypoints[k].y + rng.random_range(-j..=j),
                            2,
                        )
                    }),
                    score: rng.random_range(0.01..1.0),
                }
            })
            .collect();
        let mut d = Dataset::new();
        d.images
            .push(crowdcrop::annomodel::ImageRecord::new(1, 640, 480, "1.png"));
        d.annotations = gts.clone();
        let mut set = DetectionSet::default();
        for det in &dets {
            set.push(1, det.clone());
        }
        let r = match_and_score(&set, &d, 20, Execution::Serial).map_err(|e| e.to_string())?;
        let m: Vec<Vec<f64>> = dets
            .iter()
            .map(|d| gts.iter().map(|g| oracle_oks(d, g)).collect())
            .collect();
        for row in &r.per_threshold {
            let best = max_matching(&m, row.threshold, 0, &mut vec![false; gts.len()]);
            compared += 1;
            if row.true_positives != best {
                differing += 1;
                eprintln!(
                    "fixture {fixture} t={}: greedy {} TP, exhaustive {best} TP",
                    row.threshold, row.true_positives
                );
                check(
                    row.true_positives < best && best - row.true_positives <= 1,
                    format!(
                        "fixture {fixture}: greedy {} vs exhaustive {best}",
                        row.true_positives
                    ),
                )?;
            }
        }
    }

    // Perfect detections.
    let mut d = Dataset::new();
    for img in 1..=3u64 {
        d.images.push(crowdcrop::annomodel::ImageRecord::new(
            img,
            640,
            480,
            format!("{img}.png"),
        ));
        for k in 0..4 {
            d.annotations.push(eval_person(img * 10 + k, img, &mut rng));
        }
    }
    let r = match_and_score(&DetectionSet::perfect(&d), &d, 20, Execution::Parallel)
        .map_err(|e| e.to_string())?;
    check(
        r.ap == 100.0 && r.ar == 100.0 && r.f1 == 100.0,
        format!("perfect fixture scored AP {} AR {} F1 {}", r.ap, r.ar, r.f1),
    )?;
    Ok(format!(
        "4 published F1 values within 0.1; worst table row {worst_row:.3}; greedy differs from exhaustive in {differing}/{compared} threshold evaluations; perfect = 100"
    ))
}

fn criterion_7(run: &Run, root: &Path) -> Result<String, String> {
    let mut checked = 0;
    let mut null_persons = 0;
    let mut files: Vec<PathBuf> = ["train", "val"]
        .iter()
        .map(|s| run.dir.join(format!("annotations/{s}.json")))
        .collect();

    // A scene set whose sources include null-keypoint persons.
    let mut scenes: Vec<SourceScene> = (1..=2)
        .map(|i| {
            let p = SceneGenParams {
                seed: 100 + i,
                ..Default::default()
            };
            generate_scene(&p, i).unwrap()
        })
        .collect();
    for s in &mut scenes {
        for p in s.persons.iter_mut().step_by(5) {
            p.keypoints = [Keypoint::UNLABELED; 17];
        }
    }
    let cfg = GenerationConfig {
        dataset_size: 200,
        ..GenerationConfig::panda_pose()
    };
    let crops = sample_dataset(&scenes, &cfg, Execution::Parallel).map_err(|e| e.to_string())?;
    let out = root.join("nulls");
    let opts = EmitOptions {
        out_dir: &out,
        extension: "png",
        annotations_only: true,
        downscale_to: None,
        exec: Execution::Parallel,
    };
    let splits = assign_splits(&crops, cfg.split_fractions);
    emit_dataset(&crops, &splits, &scenes, &ProceduralRaster, &cfg, &opts)
        .map_err(|e| e.to_string())?;
    files.extend(
        ["train", "val"]
            .iter()
            .map(|s| out.join(format!("annotations/{s}.json"))),
    );

    for f in &files {
        let text = read(f);
        let d = parse_dataset(&text).map_err(|e| format!("{}: {e}", f.display()))?;
        check(
            serialize_dataset(&d) == text,
            format!("{}: parse/serialize is not the identity", f.display()),
        )?;
        let raw: serde_json::Value = serde_json::from_str(&text).unwrap();
        for a in raw["annotations"].as_array().unwrap() {
            if a["num_keypoints"].as_u64() == Some(0) {
                null_persons += 1;
                let kps = a["keypoints"].as_array().unwrap();
                check(
                    kps.len() == 51 && kps.iter().all(|v| v.as_f64() == Some(0.0)),
                    format!(
                        "{}: null-keypoint person {} has non-zero triplets",
                        f.display(),
                        a["id"]
                    ),
                )?;
            }
        }
        checked += 1;
    }
    check(null_persons > 0, "no null-keypoint persons were emitted")?;
    let manifest: RunManifest =
        serde_json::from_str(&read(&run.dir.join("manifest.json"))).map_err(|e| e.to_string())?;
    for split in Split::ALL {
        let recomputed =
            dataset_stats(&load(&run.dir.join(format!("annotations/{split}.json")))).ok();
        check(
            manifest.splits[&split] == recomputed,
            format!("manifest {split} stats differ from recomputed stats"),
        )?;
    }
    Ok(format!("{checked} emitted files round-trip; {null_persons} null-keypoint persons with zeroed triplets; manifest stats reproduced"))
}

fn criterion_8(root: &Path) -> Result<String, String> {
    // Pass-through: an emitted run with images, compared pixel by pixel.
    let scene = generate_scene(
        &SceneGenParams {
            seed: 8,
            n_persons: 300,
            ..Default::default()
        },
        1,
    )
    .unwrap();
    let scenes = vec![scene];
    let cfg = GenerationConfig {
        dataset_size: 12,
        max_res: Resolution {
            width: 960,
            height: 720,
        },
        ..GenerationConfig::panda_pose()
    };
    let crops = sample_dataset(&scenes, &cfg, Execution::Parallel).map_err(|e| e.to_string())?;
    let out = root.join("raster");
    let opts = EmitOptions {
        out_dir: &out,
        extension: "png",
        annotations_only: false,
        downscale_to: None,
        exec: Execution::Parallel,
    };
    let splits = assign_splits(&crops, cfg.split_fractions);
    emit_dataset(&crops, &splits, &scenes, &ProceduralRaster, &cfg, &opts)
        .map_err(|e| e.to_string())?;
    let pattern = Pattern::from_uri(&scenes[0].uri).unwrap();
    for c in &crops {
        let split = splits.split_of(c.id).unwrap_or(Split::Train);
        let path = out.join(crowdcrop::synth::image_file_name(split, c.id, "png"));
        let got = decode_png("emitted", &path).map_err(|e| e.to_string())?;
        let r = &c.source_rect;
        let expected = pattern.render(PixelRect {
            x: r.x as u32,
            y: r.y as u32,
            w: r.w as u32,
            h: r.h as u32,
        });
        check(
            got == expected,
            format!("crop {} is not pixel-identical", c.id),
        )?;
    }

    // 2:1 downscale of checkerboards: each output pixel is the rounded
    // mean of its 2x2 source block.
    let mut pixels = 0;
    for cell in [1u32, 2, 3] {
        let uri = format!("checker:{cell}");
        let pattern = Pattern::from_uri(&uri).unwrap();
        let rec = CropRecord {
            id: 1,
            scene_id: 1,
            source_rect: Rect::new(6.0, 4.0, 96.0, 72.0),
            output_size: Resolution {
                width: 48,
                height: 36,
            },
            stats: CropStats {
                person_count: 0,
                occlusion: 0.0,
                scales: vec![],
                is_empty: true,
            },
            person_ids: vec![],
        };
        let small = extract_raster(&rec, &uri, &ProceduralRaster)
            .map_err(|e| e.to_string())?
            .unwrap();
        for y in 0..36 {
            for x in 0..48 {
                let mut sum = 0.0;
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    sum += pattern.pixel(6 + 2 * x + dx, 4 + 2 * y + dy)[0] as f64;
                }
                let want = (sum / 4.0).round() as u8;
                check(
                    small.pixel(x, y) == [want; 3],
                    format!("checker {cell}: pixel ({x}, {y})"),
                )?;
                pixels += 1;
            }
        }
    }
    Ok(format!(
        "{} emitted crops pixel-identical; {pixels} downscaled pixels match",
        crops.len()
    ))
}

fn criterion_9(root: &Path) -> Result<String, String> {
    let scenes_dir = root.join("sparse");
    let (code, err) = cli(&[
        "synth-scenes",
        "--count",
        "3",
        "--out",
        scenes_dir.to_str().unwrap(),
        "--set",
        "n_persons=200",
    ]);
    check(code == 0, format!("synth-scenes exited {code}: {err}"))?;
    let config = root.join("infeasible.json");
    std::fs::write(
        &config,
        r#"{"persons_min": 20, "persons_mean_target": 50, "persons_max": 60, "empty_fraction_target": 0, "dataset_size": 200}"#,
    )
    .unwrap();
    let start = Instant::now();
    let (code, err) = cli(&[
        "generate",
        "--scenes",
        scenes_dir.join("scenes.json").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "7",
        "--out",
        root.join("infeasible_out").to_str().unwrap(),
        "--annotations-only",
    ]);
    check(code == 2, format!("exit code {code}, want 2: {err}"))?;
    let snapshot = err
        .split_once("accepted-crop statistics at termination:")
        .map(|(_, s)| s.trim())
        .ok_or("no stats snapshot on stderr")?;
    let stats: Option<DatasetStats> = serde_json::from_str(snapshot).map_err(|e| e.to_string())?;
    let stats = stats.ok_or("snapshot is empty")?;
    check(
        !root.join("infeasible_out/manifest.json").exists(),
        "manifest written for a failed run",
    )?;
    Ok(format!(
        "exit 2 after {} accepted crops (mean {:.1} persons) in {:.1}s",
        stats.image_count,
        stats.persons_per_image_mean,
        start.elapsed().as_secs_f64()
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let mut gate = Gate { results: vec![] };

    let run = reference_run(root);
    match &run {
        Ok(run) => {
            gate.record("C1 distribution targeting", criterion_1(run));
            gate.record("C2 determinism", criterion_2(root, run));
        }
        Err(e) => {
            gate.record("C1 distribution targeting", Err(e.clone()));
            gate.record("C2 determinism", Err(e.clone()));
        }
    }
    gate.record("C3 geometry oracles", criterion_3());
    gate.record("C4 spatial index", criterion_4());
    match &run {
        Ok(run) => gate.record("C5 split matching", criterion_5(run)),
        Err(e) => gate.record("C5 split matching", Err(e.clone())),
    }
    gate.record("C6 evaluator protocol", criterion_6());
    match &run {
        Ok(run) => gate.record("C7 serialization", criterion_7(run, root)),
        Err(e) => gate.record("C7 serialization", Err(e.clone())),
    }
    gate.record("C8 raster correctness", criterion_8(root));
    gate.record("C9 infeasibility signaling", criterion_9(root));

    let failed: Vec<&str> = gate
        .results
        .iter()
        .filter(|r| !r.1)
        .map(|r| r.0.as_str())
        .collect();
    println!(
        "acceptance: {}/{} criteria passed",
        gate.results.len() - failed.len(),
        gate.results.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
