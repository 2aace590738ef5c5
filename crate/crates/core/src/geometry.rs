//! Axis-aligned box and keypoint arithmetic.
//!
//! All coordinates are continuous pixels with the origin at the top-left
//! corner of the source image. Rounding to integers only happens when crop
//! windows are proposed (see `sampler`) and at raster extraction.

use serde::{Deserialize, Serialize};

/// Visibility flag of an unlabeled keypoint.
pub const V_UNLABELED: u8 = 0;
/// Visibility flag of a labeled but occluded keypoint.
pub const V_OCCLUDED: u8 = 1;
/// Visibility flag of a labeled, visible keypoint.
pub const V_VISIBLE: u8 = 2;

/// An axis-aligned box `(x, y, w, h)` with `x, y` the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Crop windows share the box representation.
pub type Rect = BBox;

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    /// `true` when width and height are strictly positive and finite.
    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0
    }

    #[inline]
    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    /// Closed-interval point containment.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x && x <= self.right() && y >= self.y && y <= self.bottom()
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    /// Positive-area overlap test; boxes that only share an edge do not intersect.
    #[inline]
    pub fn intersects(&self, other: &BBox) -> bool {
        self.x < other.right()
            && other.x < self.right()
            && self.y < other.bottom()
            && other.y < self.bottom()
    }

    /// Intersection rectangle, `None` when the overlap has no area.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 > x0 && y1 > y0 {
            Some(BBox::new(x0, y0, x1 - x0, y1 - y0))
        } else {
            None
        }
    }

    fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw > 0.0 && ih > 0.0 {
            iw * ih
        } else {
            0.0
        }
    }
}

/// A single annotated keypoint. `v` is 0 (unlabeled), 1 (occluded) or 2 (visible).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub v: u8,
}

impl Keypoint {
    /// Builds a keypoint; unlabeled points are normalized to `(0, 0, 0)`.
    pub fn new(x: f64, y: f64, v: u8) -> Self {
        if v == V_UNLABELED {
            Self::UNLABELED
        } else {
            Self { x, y, v }
        }
    }

    pub const UNLABELED: Keypoint = Keypoint {
        x: 0.0,
        y: 0.0,
        v: V_UNLABELED,
    };

    #[inline]
    pub fn is_labeled(&self) -> bool {
        self.v > V_UNLABELED
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Linear size of a person relative to its image: `sqrt(box area / image area)`, capped at 1.
pub fn person_scale(bbox: &BBox, image_w: f64, image_h: f64) -> f64 {
    let image_area = image_w * image_h;
    (bbox.area().min(image_area) / image_area).sqrt()
}

/// Maps a source-image point into the output image of `crop` resized to `out_w × out_h`.
/// No clamping is applied.
pub fn to_crop_coords(p: Keypoint, crop: &Rect, out_w: f64, out_h: f64) -> Keypoint {
    let sx = out_w / crop.w;
    let sy = out_h / crop.h;
    Keypoint {
        x: (p.x - crop.x) * sx,
        y: (p.y - crop.y) * sy,
        v: p.v,
    }
}

/// Inverse of [`to_crop_coords`].
pub fn from_crop_coords(p: Keypoint, crop: &Rect, out_w: f64, out_h: f64) -> Keypoint {
    let sx = out_w / crop.w;
    let sy = out_h / crop.h;
    Keypoint {
        x: p.x / sx + crop.x,
        y: p.y / sy + crop.y,
        v: p.v,
    }
}

/// Maps a source-image box into output coordinates, clamped to `[0, out_w] × [0, out_h]`.
pub fn box_to_crop_coords(b: &BBox, crop: &Rect, out_w: f64, out_h: f64) -> BBox {
    let sx = out_w / crop.w;
    let sy = out_h / crop.h;
    let x = ((b.x - crop.x) * sx).clamp(0.0, out_w);
    let y = ((b.y - crop.y) * sy).clamp(0.0, out_h);
    let w = (b.w * sx).min(out_w - x);
    let h = (b.h * sy).min(out_h - y);
    BBox::new(x, y, w, h)
}

/// Result of clipping a person box against a crop window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clipped {
    /// Intersection in source coordinates, `None` when disjoint.
    pub bbox: Option<BBox>,
    /// Intersection area divided by the box area.
    pub inside_fraction: f64,
}

pub fn clip_box(bbox: &BBox, crop: &Rect) -> Clipped {
    match bbox.intersection(crop) {
        Some(inter) => Clipped {
            bbox: Some(inter),
            inside_fraction: (inter.area() / bbox.area()).min(1.0),
        },
        None => Clipped {
            bbox: None,
            inside_fraction: 0.0,
        },
    }
}
