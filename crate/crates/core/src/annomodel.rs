//! Scenes, person annotations and datasets, with COCO-keypoint JSON I/O.
//!
//! Unknown fields on the top-level object, images and annotations are kept
//! verbatim and written back on serialization. Unlabeled keypoints are
//! normalized to `(0, 0, 0)` on ingestion, so a parsed dataset always
//! serializes back to itself.

use std::collections::{HashMap, HashSet};

use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::geometry::{BBox, Keypoint};

pub const NUM_KEYPOINTS: usize = 17;

/// Keypoint order of the 17-point person skeleton.
pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Limb connectivity, 1-based keypoint indices.
pub const SKELETON: [[u32; 2]; 19] = [
    [16, 14],
    [14, 12],
    [17, 15],
    [15, 13],
    [12, 13],
    [6, 12],
    [7, 13],
    [6, 7],
    [6, 8],
    [7, 9],
    [8, 10],
    [9, 11],
    [2, 3],
    [1, 2],
    [1, 3],
    [2, 4],
    [3, 5],
    [4, 6],
    [5, 7],
];

pub const PERSON_CATEGORY_ID: u64 = 1;

#[derive(Debug, thiserror::Error)]
pub enum AnnoError {
    #[error("malformed JSON at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("schema error in {location}: field `{field}` {reason}")]
    Schema {
        location: String,
        field: String,
        reason: String,
    },
    #[error("annotation {annotation_id} references unknown image {image_id}")]
    DanglingImage { annotation_id: u64, image_id: u64 },
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u64 },
}

impl AnnoError {
    fn schema(location: impl Into<String>, field: &str, reason: impl Into<String>) -> Self {
        AnnoError::Schema {
            location: location.into(),
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Val];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One person instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub keypoints: [Keypoint; NUM_KEYPOINTS],
    pub area: f64,
    pub extra: Map<String, Value>,
}

impl PersonAnnotation {
    pub fn new(id: u64, image_id: u64, bbox: BBox, keypoints: [Keypoint; NUM_KEYPOINTS]) -> Self {
        Self {
            id,
            image_id,
            category_id: PERSON_CATEGORY_ID,
            area: bbox.area(),
            bbox,
            keypoints,
            extra: Map::new(),
        }
    }

    /// Number of labeled keypoints (`v > 0`).
    pub fn num_keypoints(&self) -> usize {
        self.keypoints.iter().filter(|k| k.is_labeled()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub file_name: String,
    pub split: Option<Split>,
    pub extra: Map<String, Value>,
}

impl ImageRecord {
    pub fn new(id: u64, width: u32, height: u32, file_name: impl Into<String>) -> Self {
        Self {
            id,
            width,
            height,
            file_name: file_name.into(),
            split: None,
            extra: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<PersonAnnotation>,
    /// Category objects, kept verbatim.
    pub categories: Vec<Value>,
    /// Unknown top-level fields (`info`, `licenses`, ...).
    pub extra: Map<String, Value>,
}

/// The single `person` category with the 17-point skeleton.
pub fn person_category() -> Value {
    serde_json::json!({
        "id": PERSON_CATEGORY_ID,
        "name": "person",
        "supercategory": "person",
        "keypoints": KEYPOINT_NAMES,
        "skeleton": SKELETON,
    })
}

impl Dataset {
    /// Empty dataset carrying the person category.
    pub fn new() -> Self {
        Self {
            categories: vec![person_category()],
            ..Self::default()
        }
    }

    /// Annotations grouped by image, in image order.
    pub fn annotations_by_image(&self) -> Vec<(&ImageRecord, Vec<&PersonAnnotation>)> {
        let mut by_id: HashMap<u64, Vec<&PersonAnnotation>> = HashMap::new();
        for a in &self.annotations {
            by_id.entry(a.image_id).or_default().push(a);
        }
        self.images
            .iter()
            .map(|img| (img, by_id.remove(&img.id).unwrap_or_default()))
            .collect()
    }

    /// Checks id uniqueness, referential integrity and per-annotation invariants.
    pub fn validate(&self) -> Result<(), AnnoError> {
        let mut image_ids = HashSet::with_capacity(self.images.len());
        for img in &self.images {
            if !image_ids.insert(img.id) {
                return Err(AnnoError::DuplicateId {
                    kind: "image",
                    id: img.id,
                });
            }
        }
        let mut ann_ids = HashSet::with_capacity(self.annotations.len());
        for a in &self.annotations {
            if !ann_ids.insert(a.id) {
                return Err(AnnoError::DuplicateId {
                    kind: "annotation",
                    id: a.id,
                });
            }
            if !image_ids.contains(&a.image_id) {
                return Err(AnnoError::DanglingImage {
                    annotation_id: a.id,
                    image_id: a.image_id,
                });
            }
            let loc = format!("annotation {}", a.id);
            if !a.bbox.is_valid() {
                return Err(AnnoError::schema(
                    loc,
                    "bbox",
                    "must have positive width and height",
                ));
            }
            if !(a.area.is_finite() && a.area > 0.0) {
                return Err(AnnoError::schema(loc, "area", "must be positive"));
            }
        }
        Ok(())
    }
}

/// An ultra-high-resolution source image with its person annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceScene {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub uri: String,
    pub persons: Vec<PersonAnnotation>,
}

impl SourceScene {
    pub fn bounds(&self) -> BBox {
        BBox::new(0.0, 0.0, self.width as f64, self.height as f64)
    }

    pub fn validate(&self) -> Result<(), AnnoError> {
        let bounds = self.bounds();
        let mut ids = HashSet::with_capacity(self.persons.len());
        for p in &self.persons {
            if !ids.insert(p.id) {
                return Err(AnnoError::DuplicateId {
                    kind: "person",
                    id: p.id,
                });
            }
            if !p.bbox.is_valid() || !p.bbox.intersects(&bounds) {
                return Err(AnnoError::schema(
                    format!("scene {} person {}", self.id, p.id),
                    "bbox",
                    "must intersect the scene",
                ));
            }
        }
        Ok(())
    }
}

/// Each image of `d` becomes a scene; `file_name` is used as the raster uri.
pub fn scenes_from_dataset(d: Dataset) -> Result<Vec<SourceScene>, AnnoError> {
    let mut index: HashMap<u64, usize> = HashMap::with_capacity(d.images.len());
    let mut scenes: Vec<SourceScene> = Vec::with_capacity(d.images.len());
    for img in d.images {
        index.insert(img.id, scenes.len());
        scenes.push(SourceScene {
            id: img.id,
            width: img.width,
            height: img.height,
            uri: img.file_name,
            persons: Vec::new(),
        });
    }
    for a in d.annotations {
        let slot = *index.get(&a.image_id).ok_or(AnnoError::DanglingImage {
            annotation_id: a.id,
            image_id: a.image_id,
        })?;
        scenes[slot].persons.push(a);
    }
    for s in &scenes {
        s.validate()?;
    }
    Ok(scenes)
}

pub fn scenes_to_dataset(scenes: &[SourceScene]) -> Dataset {
    let mut d = Dataset::new();
    for s in scenes {
        d.images
            .push(ImageRecord::new(s.id, s.width, s.height, s.uri.clone()));
        d.annotations.extend(s.persons.iter().cloned());
    }
    d
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

struct Obj<'a> {
    location: String,
    map: &'a Map<String, Value>,
}

impl<'a> Obj<'a> {
    fn new(location: String, v: &'a Value) -> Result<Self, AnnoError> {
        match v {
            Value::Object(map) => Ok(Self { location, map }),
            _ => Err(AnnoError::schema(location, "<self>", "must be an object")),
        }
    }

    fn field(&self, name: &str) -> Result<&'a Value, AnnoError> {
        self.map
            .get(name)
            .ok_or_else(|| AnnoError::schema(&self.location, name, "is missing"))
    }

    fn err(&self, name: &str, reason: &str) -> AnnoError {
        AnnoError::schema(&self.location, name, reason)
    }

    fn u64(&self, name: &str) -> Result<u64, AnnoError> {
        self.field(name)?
            .as_u64()
            .ok_or_else(|| self.err(name, "must be a non-negative integer"))
    }

    fn f64(&self, name: &str) -> Result<f64, AnnoError> {
        self.field(name)?
            .as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| self.err(name, "must be a finite number"))
    }

    fn str(&self, name: &str) -> Result<&'a str, AnnoError> {
        self.field(name)?
            .as_str()
            .ok_or_else(|| self.err(name, "must be a string"))
    }

    fn array(&self, name: &str) -> Result<&'a Vec<Value>, AnnoError> {
        self.field(name)?
            .as_array()
            .ok_or_else(|| self.err(name, "must be an array"))
    }

    fn numbers(&self, name: &str, len: usize) -> Result<Vec<f64>, AnnoError> {
        let arr = self.array(name)?;
        if arr.len() != len {
            return Err(self.err(
                name,
                &format!("must have {len} elements, found {}", arr.len()),
            ));
        }
        arr.iter()
            .map(|v| v.as_f64().filter(|x| x.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| self.err(name, "must contain finite numbers"))
    }

    fn rest(&self, known: &[&str]) -> Map<String, Value> {
        self.map
            .iter()
            .filter(|(k, _)| !known.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

const IMAGE_FIELDS: [&str; 5] = ["id", "width", "height", "file_name", "split"];
const ANNOTATION_FIELDS: [&str; 8] = [
    "id",
    "image_id",
    "category_id",
    "bbox",
    "keypoints",
    "num_keypoints",
    "area",
    "iscrowd",
];
const TOP_FIELDS: [&str; 3] = ["images", "annotations", "categories"];

fn parse_image(i: usize, v: &Value) -> Result<ImageRecord, AnnoError> {
    let o = Obj::new(format!("images[{i}]"), v)?;
    let dim = |name: &str| -> Result<u32, AnnoError> {
        let d = o.u64(name)?;
        u32::try_from(d)
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| o.err(name, "must be in 1..=u32::MAX"))
    };
    let split = match o.map.get("split") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            serde_json::from_value::<Split>(v.clone())
                .map_err(|_| o.err("split", "must be \"train\" or \"val\""))?,
        ),
    };
    Ok(ImageRecord {
        id: o.u64("id")?,
        width: dim("width")?,
        height: dim("height")?,
        file_name: o.str("file_name")?.to_string(),
        split,
        extra: o.rest(&IMAGE_FIELDS),
    })
}

fn parse_annotation(i: usize, v: &Value) -> Result<PersonAnnotation, AnnoError> {
    let o = Obj::new(format!("annotations[{i}]"), v)?;
    let b = o.numbers("bbox", 4)?;
    let bbox = BBox::new(b[0], b[1], b[2], b[3]);
    if !bbox.is_valid() {
        return Err(o.err("bbox", "must have positive width and height"));
    }
    let flat = o.numbers("keypoints", 3 * NUM_KEYPOINTS)?;
    let mut keypoints = [Keypoint::UNLABELED; NUM_KEYPOINTS];
    for (k, t) in keypoints.iter_mut().zip(flat.chunks_exact(3)) {
        let v = t[2];
        if !(v == 0.0 || v == 1.0 || v == 2.0) {
            return Err(o.err("keypoints", "visibility flags must be 0, 1 or 2"));
        }
        *k = Keypoint::new(t[0], t[1], v as u8);
    }
    let num = o.u64("num_keypoints")?;
    let labeled = keypoints.iter().filter(|k| k.is_labeled()).count() as u64;
    if num != labeled {
        return Err(o.err(
            "num_keypoints",
            &format!("is {num} but {labeled} keypoints are labeled"),
        ));
    }
    let area = o.f64("area")?;
    if area <= 0.0 {
        return Err(o.err("area", "must be positive"));
    }
    match o.map.get("iscrowd") {
        None => {}
        Some(v) if v.as_u64() == Some(0) => {}
        Some(_) => return Err(o.err("iscrowd", "crowd regions are not supported")),
    }
    let extra = o.rest(&ANNOTATION_FIELDS);
    Ok(PersonAnnotation {
        id: o.u64("id")?,
        image_id: o.u64("image_id")?,
        category_id: match o.map.get("category_id") {
            None => PERSON_CATEGORY_ID,
            Some(_) => o.u64("category_id")?,
        },
        bbox,
        keypoints,
        area,
        extra,
    })
}

/// Parses a COCO-keypoint JSON document.
pub fn parse_dataset(json_text: &str) -> Result<Dataset, AnnoError> {
    let root: Value = serde_json::from_str(json_text).map_err(|e| AnnoError::Syntax {
        offset: byte_offset(json_text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let top = Obj::new("<root>".to_string(), &root)?;
    let images = top
        .array("images")?
        .iter()
        .enumerate()
        .map(|(i, v)| parse_image(i, v))
        .collect::<Result<Vec<_>, _>>()?;
    let annotations = top
        .array("annotations")?
        .iter()
        .enumerate()
        .map(|(i, v)| parse_annotation(i, v))
        .collect::<Result<Vec<_>, _>>()?;
    let categories = top.array("categories")?.clone();
    let d = Dataset {
        images,
        annotations,
        categories,
        extra: top.rest(&TOP_FIELDS),
    };
    d.validate()?;
    Ok(d)
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

struct FlatKeypoints<'a>(&'a [Keypoint; NUM_KEYPOINTS]);

impl Serialize for FlatKeypoints<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(3 * NUM_KEYPOINTS))?;
        for k in self.0 {
            let k = Keypoint::new(k.x, k.y, k.v);
            if k.is_labeled() {
                seq.serialize_element(&k.x)?;
                seq.serialize_element(&k.y)?;
            } else {
                seq.serialize_element(&0)?;
                seq.serialize_element(&0)?;
            }
            seq.serialize_element(&k.v)?;
        }
        seq.end()
    }
}

#[derive(Serialize)]
struct ImageOut<'a> {
    id: u64,
    width: u32,
    height: u32,
    file_name: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
    #[serde(flatten)]
    extra: &'a Map<String, Value>,
}

#[derive(Serialize)]
struct AnnotationOut<'a> {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    keypoints: FlatKeypoints<'a>,
    num_keypoints: usize,
    area: f64,
    iscrowd: u8,
    #[serde(flatten)]
    extra: &'a Map<String, Value>,
}

#[derive(Serialize)]
struct DatasetOut<'a> {
    #[serde(flatten)]
    extra: &'a Map<String, Value>,
    images: Vec<ImageOut<'a>>,
    annotations: Vec<AnnotationOut<'a>>,
    categories: &'a [Value],
}

/// Serializes to compact COCO-keypoint JSON; floats use the shortest round-trip form.
pub fn serialize_dataset(d: &Dataset) -> String {
    let out = DatasetOut {
        extra: &d.extra,
        images: d
            .images
            .iter()
            .map(|i| ImageOut {
                id: i.id,
                width: i.width,
                height: i.height,
                file_name: &i.file_name,
                split: i.split,
                extra: &i.extra,
            })
            .collect(),
        annotations: d
            .annotations
            .iter()
            .map(|a| AnnotationOut {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: [a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h],
                keypoints: FlatKeypoints(&a.keypoints),
                num_keypoints: a.num_keypoints(),
                area: a.area,
                iscrowd: 0,
                extra: &a.extra,
            })
            .collect(),
        categories: &d.categories,
    };
    serde_json::to_string(&out).expect("dataset values are always serializable")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kp_json(points: &[(f64, f64, u8)]) -> String {
        let mut flat = Vec::new();
        for i in 0..NUM_KEYPOINTS {
            let (x, y, v) = points.get(i).copied().unwrap_or((0.0, 0.0, 0));
            flat.push(format!("{x},{y},{v}"));
        }
        format!("[{}]", flat.join(","))
    }

    fn doc(annotations: &str) -> String {
        format!(
            r#"{{"info":{{"v":1}},"images":[{{"id":1,"width":640,"height":480,"file_name":"a.png"}}],
               "annotations":[{annotations}],"categories":[{{"id":1,"name":"person"}}]}}"#
        )
    }

    #[test]
    fn minimal_file_parses() {
        let d = parse_dataset(&doc("")).unwrap();
        assert_eq!(d.images.len(), 1);
        assert!(d.annotations.is_empty());
        assert_eq!(d.extra["info"]["v"], 1);
    }

    #[test]
    fn null_keypoint_annotation() {
        let a = format!(
            r#"{{"id":5,"image_id":1,"category_id":1,"bbox":[1,2,30,40],"keypoints":{},"num_keypoints":0,"area":1200,"iscrowd":0}}"#,
            kp_json(&[])
        );
        let d = parse_dataset(&doc(&a)).unwrap();
        let p = &d.annotations[0];
        assert_eq!(p.num_keypoints(), 0);
        assert!(p.keypoints.iter().all(|k| k.v == 0));
    }

    #[test]
    fn inconsistent_num_keypoints_is_schema_error() {
        let a = format!(
            r#"{{"id":5,"image_id":1,"bbox":[1,2,30,40],"keypoints":{},"num_keypoints":3,"area":1200}}"#,
            kp_json(&[(5.0, 6.0, 2)])
        );
        match parse_dataset(&doc(&a)) {
            Err(AnnoError::Schema { field, .. }) => assert_eq!(field, "num_keypoints"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_named() {
        let a = format!(
            r#"{{"id":5,"image_id":1,"keypoints":{},"num_keypoints":0,"area":1200}}"#,
            kp_json(&[])
        );
        match parse_dataset(&doc(&a)) {
            Err(AnnoError::Schema {
                field, location, ..
            }) => {
                assert_eq!(field, "bbox");
                assert_eq!(location, "annotations[0]");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn dangling_image_id() {
        let a = format!(
            r#"{{"id":5,"image_id":9,"bbox":[1,2,30,40],"keypoints":{},"num_keypoints":0,"area":1200}}"#,
            kp_json(&[])
        );
        assert!(matches!(
            parse_dataset(&doc(&a)),
            Err(AnnoError::DanglingImage {
                annotation_id: 5,
                image_id: 9
            })
        ));
    }

    #[test]
    fn syntax_error_reports_byte_offset() {
        let text = "{\"images\": [1,\n  2,, 3]}";
        match parse_dataset(text) {
            Err(AnnoError::Syntax { offset, .. }) => assert_eq!(&text[offset..offset + 1], ","),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn crowd_regions_rejected() {
        let a = format!(
            r#"{{"id":5,"image_id":1,"bbox":[1,2,30,40],"keypoints":{},"num_keypoints":0,"area":1200,"iscrowd":1}}"#,
            kp_json(&[])
        );
        assert!(matches!(
            parse_dataset(&doc(&a)),
            Err(AnnoError::Schema { .. })
        ));
    }

    #[test]
    fn empty_dataset_serializes_with_empty_arrays() {
        let text = serialize_dataset(&Dataset::default());
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["images"], Value::Array(vec![]));
        assert_eq!(v["annotations"], Value::Array(vec![]));
        assert_eq!(v["categories"], Value::Array(vec![]));
    }

    #[test]
    fn unlabeled_keypoint_written_as_zeros() {
        let mut kps = [Keypoint::UNLABELED; NUM_KEYPOINTS];
        // bypass the normalizing constructor to simulate a stray coordinate
        kps[0] = Keypoint {
            x: 12.3,
            y: 4.5,
            v: 0,
        };
        kps[1] = Keypoint::new(7.0, 8.5, 2);
        let mut d = Dataset::new();
        d.images.push(ImageRecord::new(1, 100, 100, "x.png"));
        d.annotations.push(PersonAnnotation::new(
            1,
            1,
            BBox::new(0.0, 0.0, 10.0, 20.0),
            kps,
        ));
        let v: Value = serde_json::from_str(&serialize_dataset(&d)).unwrap();
        let flat = v["annotations"][0]["keypoints"].as_array().unwrap();
        assert_eq!(flat[0], 0);
        assert_eq!(flat[1], 0);
        assert_eq!(flat[2], 0);
        assert_eq!(flat[3].as_f64(), Some(7.0));
        assert_eq!(v["annotations"][0]["num_keypoints"], 1);
    }

    #[test]
    fn unknown_fields_survive_round_trip() {
        let a = format!(
            r#"{{"id":5,"image_id":1,"bbox":[1,2,30,40],"keypoints":{},"num_keypoints":1,"area":1200,"track":"abc"}}"#,
            kp_json(&[(3.25, 4.0, 1)])
        );
        let d = parse_dataset(&doc(&a)).unwrap();
        assert_eq!(d.annotations[0].extra["track"], "abc");
        let again = parse_dataset(&serialize_dataset(&d)).unwrap();
        assert_eq!(again, d);
    }
}
