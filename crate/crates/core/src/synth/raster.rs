//! Pixel sources and resampling.
//!
//! Downscaling uses plain separable bilinear interpolation with half-pixel
//! centers: output pixel `i` samples source coordinate
//! `(i + 0.5) * src / dst - 0.5`, clamped to the valid range, and the result
//! is rounded half away from zero. A 2:1 reduction therefore averages each
//! 2×2 source block exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::rng::mix;

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("cannot decode raster for scene `{uri}`: {message}")]
    Decode { uri: String, message: String },
    #[error("region {x},{y} {w}x{h} lies outside scene `{uri}`")]
    OutOfBounds {
        uri: String,
        x: u32,
        y: u32,
        w: u32,
        h: u32,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Integer pixel window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// Row-major RGB8 pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelBlock {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl PixelBlock {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn sub_block(&self, r: PixelRect) -> PixelBlock {
        let mut out = PixelBlock::new(r.w, r.h);
        let row = r.w as usize * 3;
        for yy in 0..r.h {
            let src = ((r.y + yy) as usize * self.width as usize + r.x as usize) * 3;
            let dst = yy as usize * row;
            out.data[dst..dst + row].copy_from_slice(&self.data[src..src + row]);
        }
        out
    }

    /// Copies `src` into this block with its top-left corner at `(x, y)`.
    fn blit(&mut self, src: &PixelBlock, x: u32, y: u32) {
        let row = src.width as usize * 3;
        for yy in 0..src.height {
            let s = yy as usize * row;
            let d = ((y + yy) as usize * self.width as usize + x as usize) * 3;
            self.data[d..d + row].copy_from_slice(&src.data[s..s + row]);
        }
    }
}

/// Where scene pixels come from.
pub trait RasterSource: Sync {
    /// Reads `rect` of the scene at `uri`. `Ok(None)` means no pixels are
    /// available (annotations-only mode).
    fn read_region(&self, uri: &str, rect: PixelRect) -> Result<Option<PixelBlock>, RasterError>;
}

/// Produces no pixels.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullRaster;

impl RasterSource for NullRaster {
    fn read_region(&self, _uri: &str, _rect: PixelRect) -> Result<Option<PixelBlock>, RasterError> {
        Ok(None)
    }
}

/// Deterministic function of absolute pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pattern {
    /// Per-pixel hash of `(seed, x, y)`.
    Hash { seed: u64 },
    /// `high` on odd cells, `low` on even cells.
    Checkerboard { cell: u32, low: u8, high: u8 },
}

impl Pattern {
    /// Recognizes `procedural:<seed>` and `checker:<cell>` uris.
    pub fn from_uri(uri: &str) -> Option<Pattern> {
        if let Some(seed) = uri.strip_prefix("procedural:") {
            return seed.parse().ok().map(|seed| Pattern::Hash { seed });
        }
        if let Some(cell) = uri.strip_prefix("checker:") {
            return cell
                .parse()
                .ok()
                .filter(|&c| c > 0)
                .map(|cell| Pattern::Checkerboard {
                    cell,
                    low: 0,
                    high: 255,
                });
        }
        None
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        match *self {
            Pattern::Hash { seed } => {
                let h = mix(seed ^ mix(((x as u64) << 32) | y as u64));
                [h as u8, (h >> 8) as u8, (h >> 16) as u8]
            }
            Pattern::Checkerboard { cell, low, high } => {
                let v = if ((x / cell) + (y / cell)) % 2 == 1 {
                    high
                } else {
                    low
                };
                [v, v, v]
            }
        }
    }

    pub fn render(&self, r: PixelRect) -> PixelBlock {
        let mut out = PixelBlock::new(r.w, r.h);
        for yy in 0..r.h {
            for xx in 0..r.w {
                out.set_pixel(xx, yy, self.pixel(r.x + xx, r.y + yy));
            }
        }
        out
    }
}

/// Procedural scenes only; other uris are decode errors.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProceduralRaster;

impl RasterSource for ProceduralRaster {
    fn read_region(&self, uri: &str, rect: PixelRect) -> Result<Option<PixelBlock>, RasterError> {
        let pattern = Pattern::from_uri(uri).ok_or_else(|| RasterError::Decode {
            uri: uri.to_string(),
            message: "not a procedural raster uri".into(),
        })?;
        Ok(Some(pattern.render(rect)))
    }
}

/// Tile layout written next to tiled scene rasters as `tiles.json`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileLayout {
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
}

pub const TILE_LAYOUT_FILE: &str = "tiles.json";

pub fn tile_file_name(row: u32, col: u32) -> String {
    format!("tile_{row}_{col}.png")
}

/// Reads procedural uris directly and everything else from disk, relative
/// to `root`. A uri naming a directory is read as a tile set (`tiles.json`
/// plus `tile_<row>_<col>.png`); any other uri must be a PNG file.
#[derive(Debug, Clone)]
pub struct SceneRaster {
    pub root: PathBuf,
}

impl SceneRaster {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn read_tiled(
        &self,
        uri: &str,
        dir: &Path,
        rect: PixelRect,
    ) -> Result<PixelBlock, RasterError> {
        let layout_path = dir.join(TILE_LAYOUT_FILE);
        let text = std::fs::read_to_string(&layout_path).map_err(|source| RasterError::Io {
            path: layout_path.clone(),
            source,
        })?;
        let layout: TileLayout = serde_json::from_str(&text).map_err(|e| RasterError::Decode {
            uri: uri.to_string(),
            message: e.to_string(),
        })?;
        check_bounds(uri, rect, layout.width, layout.height)?;
        let ts = layout.tile_size;
        let mut out = PixelBlock::new(rect.w, rect.h);
        for row in rect.y / ts..=(rect.y + rect.h - 1) / ts {
            for col in rect.x / ts..=(rect.x + rect.w - 1) / ts {
                let tile = decode_png(uri, &dir.join(tile_file_name(row, col)))?;
                let (tx, ty) = (col * ts, row * ts);
                let x0 = rect.x.max(tx);
                let y0 = rect.y.max(ty);
                let x1 = (rect.x + rect.w).min(tx + tile.width);
                let y1 = (rect.y + rect.h).min(ty + tile.height);
                if x1 <= x0 || y1 <= y0 {
                    continue;
                }
                let part = tile.sub_block(PixelRect {
                    x: x0 - tx,
                    y: y0 - ty,
                    w: x1 - x0,
                    h: y1 - y0,
                });
                out.blit(&part, x0 - rect.x, y0 - rect.y);
            }
        }
        Ok(out)
    }
}

fn check_bounds(uri: &str, r: PixelRect, width: u32, height: u32) -> Result<(), RasterError> {
    if r.w == 0
        || r.h == 0
        || r.x as u64 + r.w as u64 > width as u64
        || r.y as u64 + r.h as u64 > height as u64
    {
        return Err(RasterError::OutOfBounds {
            uri: uri.to_string(),
            x: r.x,
            y: r.y,
            w: r.w,
            h: r.h,
        });
    }
    Ok(())
}

impl RasterSource for SceneRaster {
    fn read_region(&self, uri: &str, rect: PixelRect) -> Result<Option<PixelBlock>, RasterError> {
        if let Some(p) = Pattern::from_uri(uri) {
            return Ok(Some(p.render(rect)));
        }
        let path = self.root.join(uri);
        if path.is_dir() {
            return self.read_tiled(uri, &path, rect).map(Some);
        }
        let full = decode_png(uri, &path)?;
        check_bounds(uri, rect, full.width, full.height)?;
        Ok(Some(full.sub_block(rect)))
    }
}

/// Decodes an 8-bit PNG into RGB.
pub fn decode_png(uri: &str, path: &Path) -> Result<PixelBlock, RasterError> {
    let decode_err = |message: String| RasterError::Decode {
        uri: uri.to_string(),
        message,
    };
    let file = File::open(path).map_err(|e| decode_err(format!("{}: {e}", path.display())))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| decode_err(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| decode_err("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| decode_err(e.to_string()))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(decode_err("unexpanded palette".into())),
    };
    let mut out = PixelBlock::new(info.width, info.height);
    for (i, px) in buf[..info.buffer_size()].chunks_exact(channels).enumerate() {
        let rgb = if channels < 3 {
            [px[0], px[0], px[0]]
        } else {
            [px[0], px[1], px[2]]
        };
        out.data[i * 3..i * 3 + 3].copy_from_slice(&rgb);
    }
    Ok(out)
}

pub fn write_png(path: &Path, block: &PixelBlock) -> Result<(), RasterError> {
    let io_err = |source| RasterError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), block.width, block.height);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let encode_err = |e: png::EncodingError| RasterError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    };
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(&block.data).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}

/// Source sample positions and weights along one axis.
fn axis_taps(src: u32, dst: u32) -> Vec<(usize, usize, f64)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src as usize - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Separable bilinear resize to `out_w × out_h`.
pub fn resize_bilinear(src: &PixelBlock, out_w: u32, out_h: u32) -> PixelBlock {
    if src.width == out_w && src.height == out_h {
        return src.clone();
    }
    let xs = axis_taps(src.width, out_w);
    let ys = axis_taps(src.height, out_h);
    // horizontal pass
    let mut tmp = vec![0.0f64; out_w as usize * src.height as usize * 3];
    for y in 0..src.height as usize {
        let row = &src.data[y * src.width as usize * 3..(y + 1) * src.width as usize * 3];
        for (ox, &(x0, x1, f)) in xs.iter().enumerate() {
            for c in 0..3 {
                let a = row[x0 * 3 + c] as f64;
                let b = row[x1 * 3 + c] as f64;
                tmp[(y * out_w as usize + ox) * 3 + c] = a * (1.0 - f) + b * f;
            }
        }
    }
    // vertical pass
    let mut out = PixelBlock::new(out_w, out_h);
    for (oy, &(y0, y1, f)) in ys.iter().enumerate() {
        for ox in 0..out_w as usize {
            for c in 0..3 {
                let a = tmp[(y0 * out_w as usize + ox) * 3 + c];
                let b = tmp[(y1 * out_w as usize + ox) * 3 + c];
                let v = a * (1.0 - f) + b * f;
                out.data[(oy * out_w as usize + ox) * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}
