//! Distribution statistics: persons per image, occlusion (average IoU),
//! person-scale five-number summary and the empty-image fraction.
//!
//! Accumulators are exact and order independent: occlusion values are summed
//! in 2^-62 fixed point and scales are kept as a multiset, so merging shards
//! in any grouping finalizes to bit-identical results.

use serde::{Deserialize, Serialize};

use crate::annomodel::Dataset;
use crate::exec::Execution;
use crate::geometry::{iou, person_scale, BBox};
use crate::rng::mix;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("no images")]
    NoImages,
    #[error("accumulators use different scale-sample policies")]
    PolicyMismatch,
}

/// Mean IoU over all overlapping pairs; 0 with fewer than two boxes or no overlap.
pub fn image_occlusion(boxes: &[BBox]) -> f64 {
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (i, a) in boxes.iter().enumerate() {
        for b in &boxes[i + 1..] {
            let v = iou(a, b);
            if v > 0.0 {
                sum += v;
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        sum / pairs as f64
    }
}

/// Linear-interpolation (Type 7) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    pub fn from_sorted(sorted: &[f64]) -> Self {
        Self {
            min: sorted[0],
            q1: quantile_sorted(sorted, 0.25),
            median: quantile_sorted(sorted, 0.5),
            q3: quantile_sorted(sorted, 0.75),
            max: sorted[sorted.len() - 1],
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.min, self.q1, self.median, self.q3, self.max]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub image_count: u64,
    pub person_count: u64,
    pub persons_per_image_mean: f64,
    pub avg_iou: f64,
    /// `None` when the dataset holds no persons.
    pub scale_summary: Option<FiveNumber>,
    pub empty_fraction: f64,
}

/// Bounds on how many scales an accumulator keeps exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalePolicy {
    pub exact_limit: usize,
    pub sample_size: usize,
}

impl Default for ScalePolicy {
    fn default() -> Self {
        Self {
            exact_limit: 10_000_000,
            sample_size: 1_000_000,
        }
    }
}

const FIXED_ONE: f64 = (1u64 << 62) as f64;

fn to_fixed(v: f64) -> u128 {
    (v.clamp(0.0, 1.0) * FIXED_ONE).round() as u128
}

/// Mergeable running statistics.
///
/// Beyond `exact_limit` scales the accumulator keeps a bottom-k sample keyed
/// by a hash of the value bits, which is still merge-order independent.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsAccumulator {
    policy: ScalePolicy,
    image_count: u64,
    person_count: u64,
    empty_count: u64,
    multi_count: u64,
    occlusion_fixed: u128,
    scales: Vec<f64>,
    sampled: bool,
}

impl Default for StatsAccumulator {
    fn default() -> Self {
        Self::new(ScalePolicy::default())
    }
}

impl StatsAccumulator {
    pub fn new(policy: ScalePolicy) -> Self {
        Self {
            policy,
            image_count: 0,
            person_count: 0,
            empty_count: 0,
            multi_count: 0,
            occlusion_fixed: 0,
            scales: Vec::new(),
            sampled: false,
        }
    }

    pub fn image_count(&self) -> u64 {
        self.image_count
    }

    pub fn person_count(&self) -> u64 {
        self.person_count
    }

    /// Adds one image given its occlusion and person scales.
    pub fn push_image(&mut self, occlusion: f64, scales: &[f64]) {
        self.image_count += 1;
        self.person_count += scales.len() as u64;
        match scales.len() {
            0 => self.empty_count += 1,
            1 => {}
            _ => {
                self.multi_count += 1;
                self.occlusion_fixed += to_fixed(occlusion);
            }
        }
        self.scales.extend_from_slice(scales);
        self.compact();
    }

    /// Adds one image from its person boxes, expressed in image coordinates.
    pub fn push_boxes(&mut self, boxes: &[BBox], width: f64, height: f64) {
        let scales: Vec<f64> = boxes
            .iter()
            .map(|b| person_scale(b, width, height))
            .collect();
        self.push_image(image_occlusion(boxes), &scales);
    }

    fn sample_key(v: f64) -> u64 {
        mix(v.to_bits())
    }

    /// Keeps the `k` values with the smallest sample keys.
    fn settle(values: &mut Vec<f64>, k: usize) {
        values.sort_unstable_by_key(|v| (Self::sample_key(*v), v.to_bits()));
        values.truncate(k);
    }

    fn compact(&mut self) {
        if !self.sampled && self.scales.len() <= self.policy.exact_limit {
            return;
        }
        if !self.sampled || self.scales.len() > 2 * self.policy.sample_size {
            Self::settle(&mut self.scales, self.policy.sample_size);
            self.sampled = true;
        }
    }

    pub fn merge(mut self, other: &StatsAccumulator) -> Result<StatsAccumulator, StatsError> {
        if self.policy != other.policy {
            return Err(StatsError::PolicyMismatch);
        }
        self.image_count += other.image_count;
        self.person_count += other.person_count;
        self.empty_count += other.empty_count;
        self.multi_count += other.multi_count;
        self.occlusion_fixed += other.occlusion_fixed;
        self.scales.extend_from_slice(&other.scales);
        self.sampled |= other.sampled;
        self.compact();
        if self.sampled {
            Self::settle(&mut self.scales, self.policy.sample_size);
        }
        Ok(self)
    }

    pub fn finalize(&self) -> Result<DatasetStats, StatsError> {
        if self.image_count == 0 {
            return Err(StatsError::NoImages);
        }
        let scale_summary = if self.scales.is_empty() {
            None
        } else {
            let mut sorted = self.scales.clone();
            if self.sampled {
                Self::settle(&mut sorted, self.policy.sample_size);
            }
            sorted.sort_unstable_by(f64::total_cmp);
            Some(FiveNumber::from_sorted(&sorted))
        };
        let avg_iou = if self.multi_count == 0 {
            0.0
        } else {
            (self.occlusion_fixed as f64 / FIXED_ONE) / self.multi_count as f64
        };
        Ok(DatasetStats {
            image_count: self.image_count,
            person_count: self.person_count,
            persons_per_image_mean: self.person_count as f64 / self.image_count as f64,
            avg_iou,
            scale_summary,
            empty_fraction: self.empty_count as f64 / self.image_count as f64,
        })
    }
}

/// Accumulates every image of `d`.
pub fn accumulate(d: &Dataset, exec: Execution) -> StatsAccumulator {
    let groups = d.annotations_by_image();
    let per_image = exec.map(&groups, |(img, anns)| {
        let boxes: Vec<BBox> = anns.iter().map(|a| a.bbox).collect();
        let (w, h) = (img.width as f64, img.height as f64);
        let scales: Vec<f64> = boxes.iter().map(|b| person_scale(b, w, h)).collect();
        (image_occlusion(&boxes), scales)
    });
    let mut acc = StatsAccumulator::default();
    for (occ, scales) in &per_image {
        acc.push_image(*occ, scales);
    }
    acc
}

pub fn dataset_stats(d: &Dataset) -> Result<DatasetStats, StatsError> {
    accumulate(d, Execution::default()).finalize()
}

/// Relative difference `|a - b| / max(|a|, |b|)`, 0 when both are 0.
pub fn relative_difference(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

/// ASCII table of five-number summaries, one row per labeled stats block.
pub fn boxplot_table(rows: &[(String, &DatasetStats)]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<20} {:>7} {:>8} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>6}\n",
        "dataset", "images", "persons", "p/img", "avgIoU", "min", "q1", "median", "q3", "max"
    ));
    for (name, s) in rows {
        let f = s.scale_summary.map(|f| f.as_array());
        let col = |i: usize| f.map_or("-".to_string(), |a| format!("{:.3}", a[i]));
        out.push_str(&format!(
            "{:<20} {:>7} {:>8} {:>7.2} {:>7.3} {:>7} {:>7} {:>7} {:>7} {:>6}\n",
            name,
            s.image_count,
            s.person_count,
            s.persons_per_image_mean,
            s.avg_iou,
            col(0),
            col(1),
            col(2),
            col(3),
            col(4)
        ));
        if let Some(a) = f {
            out.push_str(&format!("{:<20} {}\n", "", scale_bar(&a, 50)));
        }
    }
    out
}

/// One-line box plot over the [0, 1] scale axis.
fn scale_bar(five: &[f64; 5], width: usize) -> String {
    let pos = |v: f64| ((v.clamp(0.0, 1.0) * (width - 1) as f64).round()) as usize;
    let mut line = vec![' '; width];
    let (lo, q1, med, q3, hi) = (
        pos(five[0]),
        pos(five[1]),
        pos(five[2]),
        pos(five[3]),
        pos(five[4]),
    );
    for c in line.iter_mut().take(hi + 1).skip(lo) {
        *c = '-';
    }
    for c in line.iter_mut().take(q3 + 1).skip(q1) {
        *c = '=';
    }
    line[lo] = '|';
    line[hi] = '|';
    line[med] = '#';
    format!("[{}]", line.into_iter().collect::<String>())
}
