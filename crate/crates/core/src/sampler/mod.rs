//! Constrained semi-random crop sampling.
//!
//! Each output slot draws crop proposals from its own random stream and runs
//! them through an accept/reject rule that compares the running dataset
//! statistics before and after adding the candidate. Proposals of a slot
//! are generated and evaluated in parallel batches; decisions are taken
//! sequentially in proposal order, so any worker count yields the same
//! accepted set.

mod config;

pub use config::{
    AspectRatio, ConfigError, GenerationConfig, Resolution, SplitFractions, Tolerances, Weights,
    PANDA_POSE_JSON,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annomodel::SourceScene;
use crate::exec::Execution;
use crate::geometry::{person_scale, Rect};
use crate::rng::{stream, Domain, StreamRng};
use crate::spindex::{default_cell_size, SceneIndex};
use crate::stats::{DatasetStats, FiveNumber, StatsAccumulator};
use crate::synth::{include_person, remap_person};

/// Proposals evaluated together before decisions are taken.
const PROPOSAL_BATCH: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum SampleError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no source scenes")]
    NoScenes,
    #[error("scene {scene_id} ({width}x{height}) is smaller than the minimum crop resolution")]
    SceneTooSmall {
        scene_id: u64,
        width: u32,
        height: u32,
    },
    #[error("proposal budget of {budget} exhausted for slot {slot} (scene {scene_id}); targets look infeasible")]
    BudgetExhausted {
        slot: usize,
        scene_id: u64,
        budget: usize,
        /// Statistics of the crops accepted so far, `None` before the first one.
        snapshot: Option<DatasetStats>,
    },
}

/// Statistics of one candidate crop, measured in crop coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropStats {
    pub person_count: u32,
    pub occlusion: f64,
    pub scales: Vec<f64>,
    pub is_empty: bool,
}

/// An accepted crop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropRecord {
    pub id: u64,
    pub scene_id: u64,
    /// Integer-aligned window in native scene pixels.
    pub source_rect: Rect,
    pub output_size: Resolution,
    pub stats: CropStats,
    /// Ids of the included scene persons, in scene order.
    pub person_ids: Vec<u64>,
}

/// A scene with its spatial index and crop-width strata.
#[derive(Debug, Clone)]
pub struct SceneContext<'a> {
    pub scene: &'a SourceScene,
    pub index: SceneIndex,
    /// Inclusive `[lo, hi]` width range per stratum.
    pub strata: Vec<(f64, f64)>,
    pub stratum_probs: Vec<f64>,
    pub max_width: f64,
    min_width: f64,
}

impl<'a> SceneContext<'a> {
    pub fn new(scene: &'a SourceScene, cfg: &GenerationConfig) -> Result<Self, SampleError> {
        let too_small = SampleError::SceneTooSmall {
            scene_id: scene.id,
            width: scene.width,
            height: scene.height,
        };
        if scene.width < cfg.min_res.width || scene.height < cfg.min_res.height {
            return Err(too_small);
        }
        let ar = cfg.aspect_ratio;
        let min_w = cfg.min_res.width as f64;
        let mut max_w = (cfg.max_res.width.min(scene.width)) as f64;
        while max_w > min_w && ar.height_for(max_w) > scene.height as f64 {
            max_w -= 1.0;
        }
        if ar.height_for(max_w) > scene.height as f64 {
            return Err(too_small);
        }

        let (strata, stratum_probs) = width_strata(scene, cfg, min_w, max_w);
        let cell = cfg.cell_size.unwrap_or_else(|| default_cell_size(scene));
        Ok(Self {
            scene,
            index: SceneIndex::build(scene, cell),
            strata,
            stratum_probs,
            max_width: max_w,
            min_width: min_w,
        })
    }
}

/// Crop-width strata steering the person-scale distribution.
///
/// Stratum `k` holds the widths at which a person of the scene's median size
/// lands between consecutive points of the scale target; its probability is
/// the target mass between those points.
fn width_strata(
    scene: &SourceScene,
    cfg: &GenerationConfig,
    min_w: f64,
    max_w: f64,
) -> (Vec<(f64, f64)>, Vec<f64>) {
    let full = (vec![(min_w, max_w)], vec![1.0]);
    let Some(target) = cfg.scale_target else {
        return full;
    };
    if scene.persons.is_empty() {
        return full;
    }
    let mut areas: Vec<f64> = scene.persons.iter().map(|p| p.bbox.area()).collect();
    areas.sort_unstable_by(f64::total_cmp);
    let ref_size = areas[areas.len() / 2].sqrt();
    (
        scaled_strata(ref_size, &target, cfg, min_w, max_w),
        vec![0.25; 4],
    )
}

/// Width ranges at which a person of linear size `ref_size` lands between
/// consecutive points of `target`: scale = ref_size / (w * sqrt(h / w)).
fn scaled_strata(
    ref_size: f64,
    target: &FiveNumber,
    cfg: &GenerationConfig,
    min_w: f64,
    max_w: f64,
) -> Vec<(f64, f64)> {
    let width_at = |scale: f64| ref_size / (scale * cfg.aspect_ratio.ratio().sqrt());
    target
        .as_array()
        .windows(2)
        .map(|p| {
            let lo = width_at(p[1]).clamp(min_w, max_w);
            let hi = width_at(p[0]).clamp(min_w, max_w);
            (lo, hi)
        })
        .collect()
}

/// Draws one crop window. Deterministic given the rng state.
///
/// Anchored proposals size the crop from the anchor person, so that person
/// lands in the drawn scale stratum; free proposals use the scene median.
pub fn propose_crop(
    ctx: &SceneContext<'_>,
    cfg: &GenerationConfig,
    anchor_prob: f64,
    rng: &mut StreamRng,
) -> Rect {
    let scene = ctx.scene;
    let u: f64 = rng.random();
    let mut k = 0;
    let mut acc = ctx.stratum_probs[0];
    while u >= acc && k + 1 < ctx.strata.len() {
        k += 1;
        acc += ctx.stratum_probs[k];
    }
    let anchored = !scene.persons.is_empty() && rng.random::<f64>() < anchor_prob;
    let anchor = anchored.then(|| &scene.persons[rng.random_range(0..scene.persons.len())].bbox);

    let (lo, hi) = match (anchor, &cfg.scale_target) {
        (Some(p), Some(t)) => {
            scaled_strata(p.area().sqrt(), t, cfg, ctx.min_width, ctx.max_width)[k]
        }
        _ => ctx.strata[k],
    };
    let w = if hi > lo {
        rng.random_range(lo.ln()..=hi.ln()).exp().round()
    } else {
        lo.round()
    }
    .clamp(ctx.min_width, ctx.max_width);
    let h = cfg.aspect_ratio.height_for(w);

    let (sw, sh) = (scene.width as f64, scene.height as f64);
    let (x, y) = if let Some(p) = anchor {
        let cx = p.x + rng.random::<f64>() * p.w;
        let cy = p.y + rng.random::<f64>() * p.h;
        (
            (cx - 0.5 * w).round().clamp(0.0, sw - w),
            (cy - 0.5 * h).round().clamp(0.0, sh - h),
        )
    } else {
        (
            rng.random_range(0..=(sw - w) as u64) as f64,
            rng.random_range(0..=(sh - h) as u64) as f64,
        )
    };
    Rect::new(x, y, w, h)
}

/// Measures a candidate window. Returns the stats and the positions of the
/// included persons in `scene.persons`.
pub fn evaluate_crop(
    ctx: &SceneContext<'_>,
    rect: &Rect,
    cfg: &GenerationConfig,
) -> (CropStats, Vec<usize>) {
    let candidates = ctx.index.query(rect);
    let mut included = Vec::new();
    let mut boxes = Vec::new();
    for i in candidates {
        let p = &ctx.scene.persons[i];
        if include_person(p, rect, cfg.inclusion_fraction) {
            included.push(i);
            boxes.push(remap_person(p, rect, rect.w, rect.h).bbox);
        }
    }
    let scales: Vec<f64> = boxes
        .iter()
        .map(|b| person_scale(b, rect.w, rect.h))
        .collect();
    let stats = CropStats {
        person_count: included.len() as u32,
        occlusion: crate::stats::image_occlusion(&boxes),
        is_empty: included.is_empty(),
        scales,
    };
    (stats, included)
}

// ---------------------------------------------------------------------------
// Acceptance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// The deviation score decreases.
    AcceptImproves,
    /// Every controlled statistic stays within tolerance.
    AcceptWithinBand,
    /// Exploration coin.
    AcceptExplore,
    /// Empty-quota slot received a person-free crop.
    AcceptEmptyQuota,
    RejectHardConstraint,
    RejectNotImproving,
}

impl Decision {
    pub fn is_accept(self) -> bool {
        matches!(
            self,
            Decision::AcceptImproves
                | Decision::AcceptWithinBand
                | Decision::AcceptExplore
                | Decision::AcceptEmptyQuota
        )
    }
}

/// Names of the controlled statistics, in deviation-vector order.
pub const CONTROLLED: [&str; 7] = [
    "persons_mean",
    "avg_iou",
    "empty_fraction",
    "scale_mass_0",
    "scale_mass_1",
    "scale_mass_2",
    "scale_mass_3",
];

/// Running aggregates of the accepted crops.
#[derive(Debug, Clone, Default)]
pub struct RunningState {
    crops: u64,
    persons: u64,
    empty: u64,
    multi: u64,
    occlusion_sum: f64,
    scale_bins: [u64; 4],
    acc: StatsAccumulator,
}

fn scale_bin(s: f64, cfg: &GenerationConfig) -> usize {
    match cfg.scale_target {
        None => 0,
        Some(t) if s < t.q1 => 0,
        Some(t) if s < t.median => 1,
        Some(t) if s < t.q3 => 2,
        Some(_) => 3,
    }
}

impl RunningState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn crops(&self) -> u64 {
        self.crops
    }

    pub fn push(&mut self, s: &CropStats, cfg: &GenerationConfig) {
        self.crops += 1;
        self.persons += s.person_count as u64;
        if s.is_empty {
            self.empty += 1;
        }
        if s.person_count >= 2 {
            self.multi += 1;
            self.occlusion_sum += s.occlusion;
        }
        for &v in &s.scales {
            self.scale_bins[scale_bin(v, cfg)] += 1;
        }
        self.acc.push_image(s.occlusion, &s.scales);
    }

    pub fn snapshot(&self) -> Option<DatasetStats> {
        self.acc.finalize().ok()
    }

    pub fn accumulator(&self) -> &StatsAccumulator {
        &self.acc
    }

    /// Normalized deviations `|value - target| / tolerance` of the controlled
    /// statistics after optionally adding `extra`. Undefined statistics
    /// (no multi-person crop yet, no persons yet) contribute `None`.
    pub fn deviations(
        &self,
        extra: Option<&CropStats>,
        cfg: &GenerationConfig,
    ) -> [Option<f64>; 7] {
        let mut s = self.clone_counts();
        if let Some(c) = extra {
            s.crops += 1;
            s.persons += c.person_count as u64;
            s.empty += c.is_empty as u64;
            if c.person_count >= 2 {
                s.multi += 1;
                s.occlusion_sum += c.occlusion;
            }
            for &v in &c.scales {
                s.scale_bins[scale_bin(v, cfg)] += 1;
            }
        }
        let tol = cfg.tolerances;
        let mut out = [None; 7];
        if s.crops == 0 {
            return out;
        }
        let n = s.crops as f64;
        out[0] = Some((s.persons as f64 / n - cfg.persons_mean_target).abs() / tol.persons_mean);
        if s.multi > 0 {
            out[1] =
                Some((s.occlusion_sum / s.multi as f64 - cfg.target_avg_iou).abs() / tol.avg_iou);
        }
        out[2] = Some((s.empty as f64 / n - cfg.empty_fraction_target).abs() / tol.empty_fraction);
        if cfg.scale_target.is_some() && s.persons > 0 {
            for k in 0..4 {
                let mass = s.scale_bins[k] as f64 / s.persons as f64;
                out[3 + k] = Some((mass - 0.25).abs() / tol.scale_mass);
            }
        }
        out
    }

    fn clone_counts(&self) -> Counts {
        Counts {
            crops: self.crops,
            persons: self.persons,
            empty: self.empty,
            multi: self.multi,
            occlusion_sum: self.occlusion_sum,
            scale_bins: self.scale_bins,
        }
    }
}

struct Counts {
    crops: u64,
    persons: u64,
    empty: u64,
    multi: u64,
    occlusion_sum: f64,
    scale_bins: [u64; 4],
}

/// Weighted deviation score; `+inf` before any crop is accepted.
pub fn score(devs: &[Option<f64>; 7], cfg: &GenerationConfig) -> f64 {
    if devs[0].is_none() {
        return f64::INFINITY;
    }
    let w = cfg.weights;
    let weights = [
        w.persons_mean,
        w.avg_iou,
        w.empty_fraction,
        w.scale_mass,
        w.scale_mass,
        w.scale_mass,
        w.scale_mass,
    ];
    devs.iter()
        .zip(weights)
        .map(|(d, w)| d.map_or(0.0, |d| w * d))
        .sum()
}

/// Accept/reject rule for a regular slot.
pub fn accept(
    stats: &CropStats,
    running: &RunningState,
    cfg: &GenerationConfig,
    rng: &mut StreamRng,
) -> Decision {
    let explore = rng.random::<f64>() < cfg.explore_prob;
    // Empty crops come only from the empty quota.
    let too_few = stats.person_count < cfg.persons_min.max(1);
    if stats.person_count > cfg.persons_max || too_few {
        return Decision::RejectHardConstraint;
    }
    let before = score(&running.deviations(None, cfg), cfg);
    let after_devs = running.deviations(Some(stats), cfg);
    if score(&after_devs, cfg) < before {
        Decision::AcceptImproves
    } else if after_devs.iter().all(|d| d.is_none_or(|d| d <= 1.0)) {
        Decision::AcceptWithinBand
    } else if explore {
        Decision::AcceptExplore
    } else {
        Decision::RejectNotImproving
    }
}

// ---------------------------------------------------------------------------
// End-to-end sampling
// ---------------------------------------------------------------------------

/// One line of the sampling log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotTrace {
    pub slot: usize,
    pub scene_id: u64,
    pub empty_slot: bool,
    pub proposals: usize,
    pub decision: Decision,
    pub deviations_before: [Option<f64>; 7],
    pub deviations_after: [Option<f64>; 7],
}

#[derive(Debug, Clone)]
pub struct SampleRun {
    pub crops: Vec<CropRecord>,
    pub trace: Vec<SlotTrace>,
    pub running: RunningState,
}

/// Smooth weighted round-robin over scenes, weighted by pixel area.
pub fn scene_schedule(scenes: &[SourceScene], slots: usize) -> Vec<usize> {
    let weights: Vec<i128> = scenes
        .iter()
        .map(|s| s.width as i128 * s.height as i128)
        .collect();
    let total: i128 = weights.iter().sum();
    let mut current = vec![0i128; scenes.len()];
    (0..slots)
        .map(|_| {
            for (c, w) in current.iter_mut().zip(&weights) {
                *c += w;
            }
            let mut pick = 0;
            for i in 1..current.len() {
                if current[i] > current[pick] {
                    pick = i;
                }
            }
            current[pick] -= total;
            pick
        })
        .collect()
}

/// `true` for the slots reserved to person-free crops, spread evenly.
pub fn empty_slots(slots: usize, fraction: f64) -> Vec<bool> {
    let quota = (fraction * slots as f64 - 1e-9).ceil().max(0.0) as usize;
    let quota = quota.min(slots);
    (0..slots)
        .map(|i| (i + 1) * quota / slots > i * quota / slots)
        .collect()
}

pub fn sample_dataset(
    scenes: &[SourceScene],
    cfg: &GenerationConfig,
    exec: Execution,
) -> Result<Vec<CropRecord>, SampleError> {
    sample_dataset_traced(scenes, cfg, exec).map(|r| r.crops)
}

pub fn sample_dataset_traced(
    scenes: &[SourceScene],
    cfg: &GenerationConfig,
    exec: Execution,
) -> Result<SampleRun, SampleError> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(SampleError::NoScenes);
    }
    let contexts = exec
        .map_range(scenes.len(), |i| SceneContext::new(&scenes[i], cfg))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let n = cfg.dataset_size;
    let schedule = scene_schedule(scenes, n);
    let empties = empty_slots(n, cfg.empty_fraction_target);
    let mut running = RunningState::new();
    let mut crops = Vec::with_capacity(n);
    let mut trace = Vec::with_capacity(n);

    for slot in 0..n {
        let ctx = &contexts[schedule[slot]];
        let empty_slot = empties[slot];
        let anchor = if empty_slot { 0.0 } else { cfg.anchor_prob };
        let before = running.deviations(None, cfg);
        let mut chosen = None;
        let mut start = 0;
        'batches: while start < cfg.proposal_budget {
            let len = PROPOSAL_BATCH.min(cfg.proposal_budget - start);
            let batch = exec.map_range(len, |j| {
                let k = start + j;
                let mut rng = stream(cfg.seed, Domain::Proposal, slot as u64, k as u64);
                let rect = propose_crop(ctx, cfg, anchor, &mut rng);
                let (stats, included) = evaluate_crop(ctx, &rect, cfg);
                (rect, stats, included)
            });
            for (j, (rect, stats, included)) in batch.into_iter().enumerate() {
                let k = start + j;
                let decision = if empty_slot {
                    if stats.is_empty {
                        Decision::AcceptEmptyQuota
                    } else {
                        Decision::RejectHardConstraint
                    }
                } else {
                    let mut rng = stream(cfg.seed, Domain::Accept, slot as u64, k as u64);
                    accept(&stats, &running, cfg, &mut rng)
                };
                if decision.is_accept() {
                    chosen = Some((k + 1, decision, rect, stats, included));
                    break 'batches;
                }
            }
            start += len;
        }

        let Some((proposals, decision, rect, stats, included)) = chosen else {
            return Err(SampleError::BudgetExhausted {
                slot,
                scene_id: ctx.scene.id,
                budget: cfg.proposal_budget,
                snapshot: running.snapshot(),
            });
        };
        let after = running.deviations(Some(&stats), cfg);
        running.push(&stats, cfg);
        trace.push(SlotTrace {
            slot,
            scene_id: ctx.scene.id,
            empty_slot,
            proposals,
            decision,
            deviations_before: before,
            deviations_after: after,
        });
        crops.push(CropRecord {
            id: slot as u64 + 1,
            scene_id: ctx.scene.id,
            source_rect: rect,
            output_size: Resolution {
                width: rect.w as u32,
                height: rect.h as u32,
            },
            person_ids: included.iter().map(|&i| ctx.scene.persons[i].id).collect(),
            stats,
        });
    }
    Ok(SampleRun {
        crops,
        trace,
        running,
    })
}
