//! Uniform-grid index over a scene's person boxes.
//!
//! Cells are stored densely in CSR form (`starts` / `entries`). A person is
//! listed in every cell its box overlaps with positive area; queries filter
//! candidates with the exact box test, so results never contain false
//! positives.

use crate::annomodel::SourceScene;
use crate::geometry::{BBox, Rect};

#[derive(Debug, Clone)]
pub struct SceneIndex {
    cell_size: f64,
    cols: usize,
    rows: usize,
    starts: Vec<u32>,
    entries: Vec<u32>,
    boxes: Vec<BBox>,
}

/// Default cell size: one sixty-fourth of the scene width.
pub fn default_cell_size(scene: &SourceScene) -> f64 {
    (scene.width as f64 / 64.0).max(1.0)
}

impl SceneIndex {
    /// Builds an index whose entries are positions in `scene.persons`.
    pub fn build(scene: &SourceScene, cell_size: f64) -> Self {
        let boxes: Vec<BBox> = scene.persons.iter().map(|p| p.bbox).collect();
        Self::from_boxes(boxes, scene.width as f64, scene.height as f64, cell_size)
    }

    pub fn from_boxes(boxes: Vec<BBox>, width: f64, height: f64, cell_size: f64) -> Self {
        assert!(cell_size > 0.0, "cell size must be positive");
        let cols = ((width / cell_size).ceil() as usize).max(1);
        let rows = ((height / cell_size).ceil() as usize).max(1);
        let mut index = Self {
            cell_size,
            cols,
            rows,
            starts: Vec::new(),
            entries: Vec::new(),
            boxes,
        };

        let mut counts = vec![0u32; cols * rows + 1];
        for b in &index.boxes {
            if let Some((c0, c1, r0, r1)) = index.cell_span(b) {
                for r in r0..=r1 {
                    for c in c0..=c1 {
                        counts[r * cols + c + 1] += 1;
                    }
                }
            }
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut fill = counts.clone();
        let mut entries = vec![0u32; *counts.last().unwrap_or(&0) as usize];
        for (id, b) in index.boxes.iter().enumerate() {
            if let Some((c0, c1, r0, r1)) = index.cell_span(b) {
                for r in r0..=r1 {
                    for c in c0..=c1 {
                        let slot = &mut fill[r * cols + c];
                        entries[*slot as usize] = id as u32;
                        *slot += 1;
                    }
                }
            }
        }
        index.starts = counts;
        index.entries = entries;
        index
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Inclusive cell range overlapped with positive area, clamped to the grid.
    fn cell_span(&self, b: &BBox) -> Option<(usize, usize, usize, usize)> {
        let span = |lo: f64, hi: f64, n: usize| -> Option<(usize, usize)> {
            let first = (lo / self.cell_size).floor().max(0.0);
            let last = ((hi / self.cell_size).ceil() - 1.0).min(n as f64 - 1.0);
            if hi <= 0.0 || first > last {
                None
            } else {
                Some((first as usize, last as usize))
            }
        };
        let (c0, c1) = span(b.x, b.right(), self.cols)?;
        let (r0, r1) = span(b.y, b.bottom(), self.rows)?;
        Some((c0, c1, r0, r1))
    }

    /// Entries of one cell.
    pub fn cell(&self, col: usize, row: usize) -> &[u32] {
        let i = row * self.cols + col;
        &self.entries[self.starts[i] as usize..self.starts[i + 1] as usize]
    }

    /// Sorted, duplicate-free positions of the boxes intersecting `window`.
    pub fn query(&self, window: &Rect) -> Vec<usize> {
        let mut out = Vec::new();
        self.query_into(window, &mut out);
        out
    }

    pub fn query_into(&self, window: &Rect, out: &mut Vec<usize>) {
        out.clear();
        let Some((c0, c1, r0, r1)) = self.cell_span(window) else {
            return;
        };
        for r in r0..=r1 {
            for c in c0..=c1 {
                for &id in self.cell(c, r) {
                    let b = &self.boxes[id as usize];
                    if !b.intersects(window) {
                        continue;
                    }
                    // report each box once: from the cell holding the
                    // top-left corner of its overlap with the window
                    let ox = b.x.max(window.x);
                    let oy = b.y.max(window.y);
                    let home_c =
                        ((ox / self.cell_size).floor().max(0.0) as usize).min(self.cols - 1);
                    let home_r =
                        ((oy / self.cell_size).floor().max(0.0) as usize).min(self.rows - 1);
                    if home_c.max(c0) == c && home_r.max(r0) == r {
                        out.push(id as usize);
                    }
                }
            }
        }
        out.sort_unstable();
    }
}
