//! OKS keypoint evaluation: AP, AR and F1 over the ten COCO thresholds.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::annomodel::{Dataset, PersonAnnotation, NUM_KEYPOINTS};
use crate::exec::Execution;
use crate::geometry::{Keypoint, V_VISIBLE};

/// COCO keypoint sigmas (person_keypoints, 2017 release), in the canonical
/// keypoint order. The falloff constant of keypoint `i` is `2 * SIGMAS[i]`.
pub const SIGMAS: [f64; NUM_KEYPOINTS] = [
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072, 0.062, 0.062, 0.107, 0.107,
    0.087, 0.087, 0.089, 0.089,
];

pub const NUM_THRESHOLDS: usize = 10;

/// `0.50, 0.55, ..., 0.95`, each the correctly rounded decimal.
pub fn oks_thresholds() -> [f64; NUM_THRESHOLDS] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

const RECALL_POINTS: usize = 101;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("ground truth {0} has no labeled keypoints (unmatched-able ground truth)")]
    UnmatchableGroundTruth(u64),
    #[error("detection file: {0}")]
    Parse(String),
    #[error("detection for image {0}, which is not in the ground truth")]
    UnknownImage(u64),
    #[error("detection on image {0} has a non-finite score")]
    NonFiniteScore(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub keypoints: [Keypoint; NUM_KEYPOINTS],
    pub score: f64,
}

/// Detections per image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionSet {
    pub by_image: BTreeMap<u64, Vec<Detection>>,
}

impl DetectionSet {
    pub fn push(&mut self, image_id: u64, d: Detection) {
        self.by_image.entry(image_id).or_default().push(d);
    }

    pub fn len(&self) -> usize {
        self.by_image.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Detections that reproduce every labeled ground truth with score 1.
    pub fn perfect(gts: &Dataset) -> Self {
        let mut set = Self::default();
        for a in &gts.annotations {
            if a.num_keypoints() > 0 {
                set.push(
                    a.image_id,
                    Detection {
                        keypoints: a.keypoints,
                        score: 1.0,
                    },
                );
            }
        }
        set
    }
}

/// Parses a COCO results file: an array of
/// `{"image_id", "keypoints": [x, y, v] * 17, "score"}` records.
pub fn parse_detections(text: &str) -> Result<DetectionSet, EvalError> {
    let root: Value = serde_json::from_str(text).map_err(|e| EvalError::Parse(e.to_string()))?;
    let items = root
        .as_array()
        .ok_or_else(|| EvalError::Parse("expected a JSON array".into()))?;
    let mut set = DetectionSet::default();
    for (i, item) in items.iter().enumerate() {
        let field = |name: &str| {
            item.get(name)
                .ok_or_else(|| EvalError::Parse(format!("record {i}: missing `{name}`")))
        };
        let image_id = field("image_id")?.as_u64().ok_or_else(|| {
            EvalError::Parse(format!(
                "record {i}: `image_id` must be a non-negative integer"
            ))
        })?;
        let score = field("score")?
            .as_f64()
            .ok_or_else(|| EvalError::Parse(format!("record {i}: `score` must be a number")))?;
        let flat = field("keypoints")?
            .as_array()
            .filter(|a| a.len() == 3 * NUM_KEYPOINTS)
            .ok_or_else(|| {
                EvalError::Parse(format!("record {i}: `keypoints` must hold 51 numbers"))
            })?;
        let nums: Vec<f64> = flat
            .iter()
            .map(|v| v.as_f64())
            .collect::<Option<_>>()
            .ok_or_else(|| EvalError::Parse(format!("record {i}: non-numeric keypoint")))?;
        let keypoints = std::array::from_fn(|k| Keypoint {
            x: nums[3 * k],
            y: nums[3 * k + 1],
            v: V_VISIBLE,
        });
        set.push(image_id, Detection { keypoints, score });
    }
    Ok(set)
}

/// Object keypoint similarity of a predicted skeleton against a ground truth.
pub fn oks(det: &[Keypoint; NUM_KEYPOINTS], gt: &PersonAnnotation) -> Result<f64, EvalError> {
    let area = gt.area + f64::EPSILON;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((d, g), sigma) in det.iter().zip(&gt.keypoints).zip(SIGMAS) {
        if !g.is_labeled() {
            continue;
        }
        let kappa = 2.0 * sigma;
        let d2 = (d.x - g.x).powi(2) + (d.y - g.y).powi(2);
        sum += (-d2 / (2.0 * area * kappa * kappa)).exp();
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::UnmatchableGroundTruth(gt.id));
    }
    Ok(sum / n as f64)
}

pub fn f1(ap: f64, ar: f64) -> f64 {
    if ap + ar > 0.0 {
        2.0 * ap * ar / (ap + ar)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    /// Percent.
    pub precision: f64,
    /// Percent.
    pub recall: f64,
    pub true_positives: usize,
    pub false_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ap: f64,
    pub ar: f64,
    pub f1: f64,
    pub ground_truths: usize,
    pub detections: usize,
    pub per_threshold: Vec<ThresholdRow>,
}

/// Keeps the `max_dets` highest-scoring detections, ties in input order.
fn top_detections(dets: &[Detection], max_dets: usize) -> Vec<&Detection> {
    let mut v: Vec<&Detection> = dets.iter().collect();
    v.sort_by(|a, b| b.score.total_cmp(&a.score));
    v.truncate(max_dets);
    v
}

/// OKS matrix `[det][gt]` for one image.
pub fn oks_matrix(dets: &[&Detection], gts: &[&PersonAnnotation]) -> Vec<Vec<f64>> {
    dets.iter()
        .map(|d| {
            gts.iter()
                .map(|g| oks(&d.keypoints, g).expect("labeled ground truth"))
                .collect()
        })
        .collect()
}

/// Greedy one-to-one matching: detections in order, each taking the
/// unmatched ground truth of highest OKS (first on ties) if it reaches `t`.
pub fn greedy_match(matrix: &[Vec<f64>], n_gts: usize, t: f64) -> Vec<bool> {
    let mut taken = vec![false; n_gts];
    matrix
        .iter()
        .map(|row| {
            let mut best: Option<usize> = None;
            for (g, &o) in row.iter().enumerate() {
                if !taken[g] && o >= t && best.is_none_or(|b| o > row[b]) {
                    best = Some(g);
                }
            }
            if let Some(g) = best {
                taken[g] = true;
            }
            best.is_some()
        })
        .collect()
}

struct ImageMatches {
    scores: Vec<f64>,
    /// `[threshold][det]`.
    tp: Vec<Vec<bool>>,
    gts: usize,
}

pub fn match_and_score(
    dets: &DetectionSet,
    gts: &Dataset,
    max_dets: usize,
    exec: Execution,
) -> Result<EvalResult, EvalError> {
    let image_ids: HashSet<u64> = gts.images.iter().map(|i| i.id).collect();
    for (&id, ds) in &dets.by_image {
        if !image_ids.contains(&id) {
            return Err(EvalError::UnknownImage(id));
        }
        if ds.iter().any(|d| !d.score.is_finite()) {
            return Err(EvalError::NonFiniteScore(id));
        }
    }
    let thresholds = oks_thresholds();
    let grouped = gts.annotations_by_image();
    let empty = Vec::new();
    let per_image = exec.map(&grouped, |(img, anns)| {
        let labeled: Vec<&PersonAnnotation> = anns
            .iter()
            .copied()
            .filter(|a| a.num_keypoints() > 0)
            .collect();
        let kept = top_detections(dets.by_image.get(&img.id).unwrap_or(&empty), max_dets);
        let matrix = oks_matrix(&kept, &labeled);
        ImageMatches {
            scores: kept.iter().map(|d| d.score).collect(),
            tp: thresholds
                .iter()
                .map(|&t| greedy_match(&matrix, labeled.len(), t))
                .collect(),
            gts: labeled.len(),
        }
    });

    let n_gts: usize = per_image.iter().map(|m| m.gts).sum();
    // Global score order; a stable sort keeps image order on ties.
    let mut order: Vec<(usize, usize)> = per_image
        .iter()
        .enumerate()
        .flat_map(|(i, m)| (0..m.scores.len()).map(move |j| (i, j)))
        .collect();
    order.sort_by(|a, b| per_image[b.0].scores[b.1].total_cmp(&per_image[a.0].scores[a.1]));

    let mut rows = Vec::with_capacity(NUM_THRESHOLDS);
    for (ti, &t) in thresholds.iter().enumerate() {
        let flags: Vec<bool> = order.iter().map(|&(i, j)| per_image[i].tp[ti][j]).collect();
        let (precision, recall, tp) = interpolated_precision(&flags, n_gts);
        rows.push(ThresholdRow {
            threshold: t,
            precision: 100.0 * precision,
            recall: 100.0 * recall,
            true_positives: tp,
            false_positives: flags.len() - tp,
        });
    }
    let ap = rows.iter().map(|r| r.precision).sum::<f64>() / NUM_THRESHOLDS as f64;
    let ar = rows.iter().map(|r| r.recall).sum::<f64>() / NUM_THRESHOLDS as f64;
    Ok(EvalResult {
        ap,
        ar,
        f1: f1(ap, ar),
        ground_truths: n_gts,
        detections: order.len(),
        per_threshold: rows,
    })
}

/// 101-point interpolated precision, final recall and TP count of a ranked
/// list of TP flags. No ground truth yields zeros.
fn interpolated_precision(flags: &[bool], n_gts: usize) -> (f64, f64, usize) {
    let tp_total = flags.iter().filter(|&&f| f).count();
    if n_gts == 0 || flags.is_empty() {
        return (0.0, 0.0, tp_total);
    }
    let mut rc = Vec::with_capacity(flags.len());
    let mut pr = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (k, &f) in flags.iter().enumerate() {
        tp += f as usize;
        rc.push(tp as f64 / n_gts as f64);
        pr.push(tp as f64 / (k + 1) as f64);
    }
    for k in (1..pr.len()).rev() {
        if pr[k] > pr[k - 1] {
            pr[k - 1] = pr[k];
        }
    }
    let mut sum = 0.0;
    for r in 0..RECALL_POINTS {
        let level = r as f64 / (RECALL_POINTS - 1) as f64;
        let idx = rc.partition_point(|&v| v < level);
        if idx < pr.len() {
            sum += pr[idx];
        }
    }
    (sum / RECALL_POINTS as f64, *rc.last().unwrap(), tp_total)
}
