//! Turns accepted crops into a dataset: person inclusion and remapping,
//! stratified split assignment, raster extraction and COCO emission.

pub mod raster;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annomodel::{
    serialize_dataset, Dataset, ImageRecord, PersonAnnotation, SourceScene, Split,
};
use crate::exec::Execution;
use crate::geometry::{box_to_crop_coords, clip_box, to_crop_coords, Keypoint, Rect};
use crate::sampler::{CropRecord, CropStats, GenerationConfig, Resolution, SplitFractions};
use crate::stats::{dataset_stats, DatasetStats};

use raster::{resize_bilinear, write_png, PixelBlock, PixelRect, RasterError, RasterSource};

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("crop {crop_id} references unknown scene {scene_id}")]
    UnknownScene { crop_id: u64, scene_id: u64 },
    #[error("crop {crop_id} references unknown person {person_id}")]
    UnknownPerson { crop_id: u64, person_id: u64 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A person belongs to a crop when its box overlaps the crop and either a
/// labeled keypoint lies inside the crop or at least `min_fraction` of the
/// box area does.
pub fn include_person(p: &PersonAnnotation, crop: &Rect, min_fraction: f64) -> bool {
    let clipped = clip_box(&p.bbox, crop);
    if clipped.bbox.is_none() {
        return false;
    }
    p.keypoints
        .iter()
        .any(|k| k.is_labeled() && crop.contains_point(k.x, k.y))
        || clipped.inside_fraction >= min_fraction
}

/// Re-expresses an included person in the coordinates of `crop` resized to
/// `out_w × out_h`. Keypoints leaving the output image become unlabeled;
/// the box is clipped to the crop. Ids are kept.
pub fn remap_person(p: &PersonAnnotation, crop: &Rect, out_w: f64, out_h: f64) -> PersonAnnotation {
    let clipped = clip_box(&p.bbox, crop).bbox.unwrap_or(p.bbox);
    let bbox = box_to_crop_coords(&clipped, crop, out_w, out_h);
    let mut keypoints = p.keypoints;
    for k in keypoints.iter_mut() {
        if !k.is_labeled() {
            *k = Keypoint::UNLABELED;
            continue;
        }
        let m = to_crop_coords(*k, crop, out_w, out_h);
        *k = if (0.0..=out_w).contains(&m.x) && (0.0..=out_h).contains(&m.y) {
            m
        } else {
            Keypoint::UNLABELED
        };
    }
    PersonAnnotation {
        id: p.id,
        image_id: p.image_id,
        category_id: p.category_id,
        area: bbox.area(),
        bbox,
        keypoints,
        extra: p.extra.clone(),
    }
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/// Stratification key: (person-count bin of width 3, median-scale bin of
/// width 0.1, occlusion bin of width 0.1).
pub type BucketKey = (u32, u32, u32);

pub fn bucket_key(s: &CropStats) -> BucketKey {
    let median = if s.scales.is_empty() {
        0.0
    } else {
        let mut v = s.scales.clone();
        v.sort_unstable_by(f64::total_cmp);
        crate::stats::quantile_sorted(&v, 0.5)
    };
    (
        s.person_count / 3,
        (median / 0.1).floor() as u32,
        (s.occlusion / 0.1).floor() as u32,
    )
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub by_crop: BTreeMap<u64, Split>,
}

impl SplitAssignment {
    pub fn split_of(&self, crop_id: u64) -> Option<Split> {
        self.by_crop.get(&crop_id).copied()
    }

    pub fn count(&self, split: Split) -> usize {
        self.by_crop.values().filter(|&&s| s == split).count()
    }
}

/// Within each bucket, crops ordered by id go to whichever split is furthest
/// behind its proportional share; ties go to the larger fraction.
pub fn assign_splits(crops: &[CropRecord], fractions: SplitFractions) -> SplitAssignment {
    let mut buckets: BTreeMap<BucketKey, Vec<u64>> = BTreeMap::new();
    for c in crops {
        buckets.entry(bucket_key(&c.stats)).or_default().push(c.id);
    }
    let shares = [(Split::Train, fractions.train), (Split::Val, fractions.val)];
    let mut by_crop = BTreeMap::new();
    for ids in buckets.values_mut() {
        ids.sort_unstable();
        let mut counts = [0usize; 2];
        for (j, &id) in ids.iter().enumerate() {
            let due = |k: usize| shares[k].1 * (j + 1) as f64 - counts[k] as f64;
            let (d0, d1) = (due(0), due(1));
            let pick = if d0 > d1 || (d0 == d1 && shares[0].1 >= shares[1].1) {
                0
            } else {
                1
            };
            counts[pick] += 1;
            by_crop.insert(id, shares[pick].0);
        }
    }
    SplitAssignment { by_crop }
}

// ---------------------------------------------------------------------------
// Raster extraction
// ---------------------------------------------------------------------------

pub fn pixel_rect(r: &Rect) -> PixelRect {
    PixelRect {
        x: r.x as u32,
        y: r.y as u32,
        w: r.w as u32,
        h: r.h as u32,
    }
}

/// Reads the crop at native resolution and bilinearly downsizes it when the
/// output is smaller. `Ok(None)` when the source has no pixels.
pub fn extract_raster(
    crop: &CropRecord,
    scene_uri: &str,
    src: &dyn RasterSource,
) -> Result<Option<PixelBlock>, RasterError> {
    let Some(block) = src.read_region(scene_uri, pixel_rect(&crop.source_rect))? else {
        return Ok(None);
    };
    let out = crop.output_size;
    if out.width == block.width && out.height == block.height {
        Ok(Some(block))
    } else {
        Ok(Some(resize_bilinear(&block, out.width, out.height)))
    }
}

/// Shrinks output sizes to `target` for crops larger than it.
pub fn apply_downscale(crops: &mut [CropRecord], target: Resolution) {
    for c in crops {
        if c.source_rect.w > target.width as f64 {
            c.output_size = target;
        }
    }
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

/// Run record written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: GenerationConfig,
    pub crop_count: usize,
    pub annotations_only: bool,
    pub downscale_to: Option<Resolution>,
    /// Per-split statistics; `None` for an empty split.
    pub splits: BTreeMap<Split, Option<DatasetStats>>,
}

pub struct EmitOptions<'a> {
    pub out_dir: &'a Path,
    pub extension: &'a str,
    pub annotations_only: bool,
    pub downscale_to: Option<Resolution>,
    pub exec: Execution,
}

pub fn image_file_name(split: Split, crop_id: u64, ext: &str) -> String {
    format!("{split}/{crop_id}.{ext}")
}

/// Builds the per-split datasets. Annotation ids run sequentially over crops
/// in id order.
pub fn build_datasets(
    crops: &[CropRecord],
    splits: &SplitAssignment,
    scenes: &[SourceScene],
    ext: &str,
) -> Result<BTreeMap<Split, Dataset>, SynthError> {
    let scene_by_id: HashMap<u64, &SourceScene> = scenes.iter().map(|s| (s.id, s)).collect();
    let person_index: HashMap<u64, HashMap<u64, usize>> = scenes
        .iter()
        .map(|s| {
            (
                s.id,
                s.persons
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (p.id, i))
                    .collect(),
            )
        })
        .collect();
    let mut out: BTreeMap<Split, Dataset> =
        Split::ALL.iter().map(|&s| (s, Dataset::new())).collect();
    let mut next_ann = 1u64;
    let mut ordered: Vec<&CropRecord> = crops.iter().collect();
    ordered.sort_by_key(|c| c.id);
    for c in ordered {
        let split = splits.split_of(c.id).unwrap_or(Split::Train);
        let scene = scene_by_id
            .get(&c.scene_id)
            .ok_or(SynthError::UnknownScene {
                crop_id: c.id,
                scene_id: c.scene_id,
            })?;
        let index = &person_index[&c.scene_id];
        let d = out.get_mut(&split).expect("all splits present");
        let mut img = ImageRecord::new(
            c.id,
            c.output_size.width,
            c.output_size.height,
            image_file_name(split, c.id, ext),
        );
        img.split = Some(split);
        d.images.push(img);
        let (ow, oh) = (c.output_size.width as f64, c.output_size.height as f64);
        for pid in &c.person_ids {
            let &i = index.get(pid).ok_or(SynthError::UnknownPerson {
                crop_id: c.id,
                person_id: *pid,
            })?;
            let mut a = remap_person(&scene.persons[i], &c.source_rect, ow, oh);
            a.id = next_ann;
            a.image_id = c.id;
            next_ann += 1;
            d.annotations.push(a);
        }
    }
    Ok(out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SynthError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

/// Writes `annotations/{train,val}.json`, the crop images (unless
/// annotations-only) and `manifest.json` under `opts.out_dir`.
pub fn emit_dataset(
    crops: &[CropRecord],
    splits: &SplitAssignment,
    scenes: &[SourceScene],
    src: &dyn RasterSource,
    cfg: &GenerationConfig,
    opts: &EmitOptions<'_>,
) -> Result<RunManifest, SynthError> {
    let out = opts.out_dir;
    let ann_dir = out.join("annotations");
    std::fs::create_dir_all(&ann_dir).map_err(io_err(&ann_dir))?;
    let datasets = build_datasets(crops, splits, scenes, opts.extension)?;

    if !opts.annotations_only {
        for split in Split::ALL {
            let dir = out.join(split.as_str());
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        let uris: HashMap<u64, &str> = scenes.iter().map(|s| (s.id, s.uri.as_str())).collect();
        let results = opts.exec.map(crops, |c| -> Result<(), SynthError> {
            let uri = uris.get(&c.scene_id).ok_or(SynthError::UnknownScene {
                crop_id: c.id,
                scene_id: c.scene_id,
            })?;
            if let Some(block) = extract_raster(c, uri, src)? {
                let split = splits.split_of(c.id).unwrap_or(Split::Train);
                let path = out.join(image_file_name(split, c.id, opts.extension));
                write_png(&path, &block)?;
            }
            Ok(())
        });
        results.into_iter().collect::<Result<Vec<()>, _>>()?;
    }

    let mut split_stats = BTreeMap::new();
    for (split, d) in &datasets {
        let path = ann_dir.join(format!("{split}.json"));
        write_atomic(&path, serialize_dataset(d).as_bytes())?;
        split_stats.insert(*split, dataset_stats(d).ok());
    }

    let manifest = RunManifest {
        tool: TOOL_NAME.to_string(),
        version: TOOL_VERSION.to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        crop_count: crops.len(),
        annotations_only: opts.annotations_only,
        downscale_to: opts.downscale_to,
        splits: split_stats,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_atomic(&out.join("manifest.json"), text.as_bytes())?;
    Ok(manifest)
}
