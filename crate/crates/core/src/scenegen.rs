//! Synthetic ultra-high-resolution scenes for desk-scale testing.
//!
//! Persons are placed by a mixture of Gaussian clusters and a uniform
//! background process. Heights are log-normal around a median that grows
//! with the vertical position (`perspective` is the ratio of the median at
//! the bottom edge to the median at the top edge, geometric in between),
//! so crops near the bottom of a scene see larger people.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::annomodel::{PersonAnnotation, SourceScene, NUM_KEYPOINTS};
use crate::geometry::{BBox, Keypoint, Rect, V_OCCLUDED, V_VISIBLE};
use crate::rng::{stream, Domain};
use crate::synth::pixel_rect;
use crate::synth::raster::{Pattern, PixelBlock};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneGenParams {
    pub width: u32,
    pub height: u32,
    pub n_persons: usize,
    pub cluster_count: usize,
    /// Std-dev of person offsets around a cluster center, in units of the
    /// local median person height.
    pub cluster_spread: f64,
    /// Share of persons drawn from clusters; the rest are uniform.
    pub cluster_fraction: f64,
    /// Median person height as a fraction of the scene height.
    pub size_median_frac: f64,
    /// Log-normal sigma of person height.
    pub size_sigma: f64,
    /// Part of `size_sigma` that varies between members of one cluster; the
    /// rest is shared by the cluster, so neighbours have similar sizes.
    pub size_jitter: f64,
    pub perspective: f64,
    /// Median box width / height.
    pub person_aspect: f64,
    /// Keypoint jitter as a fraction of the box size.
    pub keypoint_jitter: f64,
    pub seed: u64,
}

impl Default for SceneGenParams {
    fn default() -> Self {
        Self {
            width: 10_000,
            height: 7_000,
            n_persons: 500,
            cluster_count: 30,
            cluster_spread: 0.2,
            cluster_fraction: 0.6,
            size_median_frac: 0.02,
            size_sigma: 0.5,
            size_jitter: 0.15,
            perspective: 4.0,
            person_aspect: 0.42,
            keypoint_jitter: 0.04,
            seed: 1,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid scene parameters: {0}")]
pub struct SceneGenError(pub String);

impl SceneGenParams {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), SceneGenError> {
        let fail = |m: &str| Err(SceneGenError(m.to_string()));
        if self.width == 0 || self.height == 0 {
            return fail("scene dimensions must be positive");
        }
        if !(0.0..=1.0).contains(&self.cluster_fraction) {
            return fail("cluster_fraction must lie in [0, 1]");
        }
        if self.cluster_fraction > 0.0 && self.cluster_count == 0 && self.n_persons > 0 {
            return fail("clustered persons need cluster_count >= 1");
        }
        if !(self.cluster_spread >= 0.0)
            || !(self.size_sigma >= 0.0)
            || !(self.keypoint_jitter >= 0.0)
        {
            return fail("spreads must be non-negative");
        }
        if !(0.0..=self.size_sigma).contains(&self.size_jitter) {
            return fail("size_jitter must lie in [0, size_sigma]");
        }
        if !(self.size_median_frac > 0.0 && self.size_median_frac < 1.0) {
            return fail("size_median_frac must lie in (0, 1)");
        }
        if !(self.perspective > 0.0) || !(self.person_aspect > 0.0) {
            return fail("perspective and person_aspect must be positive");
        }
        Ok(())
    }

    /// Median person height at vertical position `y`.
    pub fn median_height_at(&self, y: f64) -> f64 {
        let t = (y / self.height as f64).clamp(0.0, 1.0) - 0.5;
        self.size_median_frac * self.height as f64 * self.perspective.powf(t)
    }
}

/// Normalized `(x, y)` of the 17 keypoints of a standing, camera-facing person.
const POSE_TEMPLATE: [(f64, f64); NUM_KEYPOINTS] = [
    (0.50, 0.07),
    (0.55, 0.05),
    (0.45, 0.05),
    (0.60, 0.07),
    (0.40, 0.07),
    (0.72, 0.21),
    (0.28, 0.21),
    (0.80, 0.37),
    (0.20, 0.37),
    (0.82, 0.51),
    (0.18, 0.51),
    (0.63, 0.52),
    (0.37, 0.52),
    (0.62, 0.73),
    (0.38, 0.73),
    (0.62, 0.95),
    (0.38, 0.95),
];

/// Persons ids are `scene_id * 1_000_000 + k` for `k` in `1..=n_persons`.
pub fn generate_scene(
    params: &SceneGenParams,
    scene_id: u64,
) -> Result<SourceScene, SceneGenError> {
    params.validate()?;
    if params.n_persons >= 1_000_000 {
        return Err(SceneGenError("at most 999999 persons per scene".into()));
    }
    let (sw, sh) = (params.width as f64, params.height as f64);
    let mut rng = stream(params.seed, Domain::Scene, scene_id, 0);
    let shared_sigma = (params.size_sigma.powi(2) - params.size_jitter.powi(2))
        .max(0.0)
        .sqrt();
    let clusters: Vec<(f64, f64, f64)> = (0..params.cluster_count)
        .map(|_| {
            let cx = rng.random_range(0.05..0.95) * sw;
            let cy = rng.random_range(0.05..0.95) * sh;
            let z: f64 = StandardNormal.sample(&mut rng);
            (cx, cy, (shared_sigma * z).exp())
        })
        .collect();
    let n_clustered = (params.n_persons as f64 * params.cluster_fraction).round() as usize;

    let mut persons = Vec::with_capacity(params.n_persons);
    for k in 0..params.n_persons {
        let mut rng = stream(params.seed, Domain::ScenePerson, scene_id, k as u64);
        let (cx, cy, size_factor, sigma) = if k < n_clustered {
            let (mx, my, f) = clusters[k % clusters.len()];
            let spread = params.cluster_spread * params.median_height_at(my);
            let (dx, dy) = if spread > 0.0 {
                let n = Normal::new(0.0, spread).expect("finite spread");
                (n.sample(&mut rng), n.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            (mx + dx, my + dy, f, params.size_jitter)
        } else {
            (
                rng.random::<f64>() * sw,
                rng.random::<f64>() * sh,
                1.0,
                params.size_sigma,
            )
        };
        let z: f64 = StandardNormal.sample(&mut rng);
        let h =
            (params.median_height_at(cy) * size_factor * (sigma * z).exp()).clamp(4.0, 0.5 * sh);
        let za: f64 = StandardNormal.sample(&mut rng);
        let w = (h * params.person_aspect * (0.1 * za).exp()).clamp(2.0, sw);
        let x = (cx - 0.5 * w).clamp(0.0, sw - w);
        let y = (cy - 0.5 * h).clamp(0.0, sh - h);
        let bbox = BBox::new(x, y, w, h);

        let mirrored = rng.random::<bool>();
        let mut keypoints = [Keypoint::UNLABELED; NUM_KEYPOINTS];
        for (kp, &(tx, ty)) in keypoints.iter_mut().zip(POSE_TEMPLATE.iter()) {
            let tx = if mirrored { 1.0 - tx } else { tx };
            let jx: f64 = StandardNormal.sample(&mut rng);
            let jy: f64 = StandardNormal.sample(&mut rng);
            let nx = (tx + params.keypoint_jitter * jx).clamp(0.0, 1.0);
            let ny = (ty + params.keypoint_jitter * jy).clamp(0.0, 1.0);
            let v = if rng.random::<f64>() < 0.85 {
                V_VISIBLE
            } else {
                V_OCCLUDED
            };
            *kp = Keypoint::new(x + nx * w, y + ny * h, v);
        }
        persons.push(PersonAnnotation::new(
            scene_id * 1_000_000 + k as u64 + 1,
            scene_id,
            bbox,
            keypoints,
        ));
    }
    Ok(SourceScene {
        id: scene_id,
        width: params.width,
        height: params.height,
        uri: format!("procedural:{}", params.seed),
        persons,
    })
}

/// Scenes `1..=count` with seeds `first_seed..first_seed + count`.
pub fn generate_scenes(
    params: &SceneGenParams,
    first_seed: u64,
    count: usize,
) -> Result<Vec<SourceScene>, SceneGenError> {
    (0..count)
        .map(|i| {
            let p = SceneGenParams {
                seed: first_seed + i as u64,
                ..params.clone()
            };
            generate_scene(&p, i as u64 + 1)
        })
        .collect()
}

/// Pixels of a procedural scene inside `rect`.
pub fn procedural_raster(scene: &SourceScene, rect: &Rect) -> Option<PixelBlock> {
    Pattern::from_uri(&scene.uri).map(|p| p.render(pixel_rect(rect)))
}
