//! PNG figures: sample grids, segmentation and entropy maps, metric curves.
//!
//! Grid axis 0 runs along image columns and axis 1 along image rows. 3-D
//! grids become a row of axis-2 slices.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use crate::data::write_atomic;
use crate::error::{Result, VamohError};
use crate::pointcloud::GridSpec;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// How tiles are arranged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    /// Tiles per row of the figure.
    pub columns: usize,
    /// Pixels per grid cell along each side.
    pub scale: u32,
    /// Background pixels between tiles.
    pub padding: u32,
}

impl Default for Layout {
    fn default() -> Self {
        Self { columns: 8, scale: 1, padding: 0 }
    }
}

/// Colours of segments 1..=10; further indices get evenly spread hues.
pub const SEGMENT_PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

const BACKGROUND: [u8; 3] = [255, 255, 255];

/// Colour of segment `index` (numbered from 1).
pub fn segment_color(index: usize) -> [u8; 3] {
    if (1..=SEGMENT_PALETTE.len()).contains(&index) {
        return SEGMENT_PALETTE[index - 1];
    }
    let hue = (index as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    let (r, g, b) = match hue as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [(r * 200.0) as u8 + 25, (g * 200.0) as u8 + 25, (b * 200.0) as u8 + 25]
}

/// Monochrome ramp from black (`0`) to white (`1`).
pub fn ramp_color(t: f64) -> [u8; 3] {
    let v = to_byte(t);
    [v, v, v]
}

fn to_byte(t: f64) -> u8 {
    if t.is_nan() {
        0
    } else {
        (t.clamp(0.0, 1.0) * 255.0).round() as u8
    }
}

/// One tile: cell colours in grid flat order.
type Tile = Vec<[u8; 3]>;

fn tile_extent(grid: &GridSpec) -> Result<(usize, usize, usize)> {
    match grid.shape() {
        [w, h] => Ok((*w, *h, 1)),
        [w, h, d] => Ok((*w, *h, *d)),
        s => Err(VamohError::Dimension(format!("only 2-D and 3-D grids can be rendered, got {s:?}"))),
    }
}

fn compose(tiles: &[Tile], grid: &GridSpec, layout: Layout) -> Result<RgbImage> {
    if tiles.is_empty() {
        return Err(VamohError::InvalidParameter("nothing to render".into()));
    }
    if layout.columns == 0 || layout.scale == 0 {
        return Err(VamohError::InvalidParameter("layout needs positive columns and scale".into()));
    }
    let (w, h, d) = tile_extent(grid)?;
    if let Some(t) = tiles.iter().find(|t| t.len() != grid.num_points()) {
        return Err(VamohError::Dimension(format!("tile of {} cells for a grid of {}", t.len(), grid.num_points())));
    }
    let s = layout.scale;
    let tile_w = (w * d) as u32 * s;
    let tile_h = h as u32 * s;
    let cols = layout.columns.min(tiles.len()) as u32;
    let rows = tiles.len().div_ceil(layout.columns) as u32;
    let pad = layout.padding;
    let width = cols * tile_w + (cols - 1) * pad;
    let height = rows * tile_h + (rows - 1) * pad;
    let mut img = RgbImage::from_pixel(width, height, Rgb(BACKGROUND));
    for (t, tile) in tiles.iter().enumerate() {
        let ox = (t as u32 % cols) * (tile_w + pad);
        let oy = (t as u32 / cols) * (tile_h + pad);
        for (flat, &color) in tile.iter().enumerate() {
            let idx = grid.unravel(flat);
            let slice = idx.get(2).copied().unwrap_or(0);
            let px = ((slice * w + idx[0]) as u32) * s;
            let py = idx[1] as u32 * s;
            for dy in 0..s {
                for dx in 0..s {
                    img.put_pixel(ox + px + dx, oy + py + dy, Rgb(color));
                }
            }
        }
    }
    Ok(img)
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| VamohError::Format(format!("png encoding: {e}")))?;
    write_atomic(path, &buf.into_inner())
}

/// Renders feature sets (values in `[0, 1]`, one or three channels) on `grid`.
pub fn render_samples<T: Scalar>(samples: &[Matrix<T>], grid: &GridSpec, layout: Layout) -> Result<RgbImage> {
    let channels = samples.first().map_or(0, Matrix::cols);
    let tiles: Result<Vec<Tile>> = samples
        .iter()
        .map(|m| {
            if m.cols() != channels || m.rows() != grid.num_points() {
                return Err(VamohError::Dimension(format!(
                    "sample of shape {:?} among samples of {} cells and {} channels",
                    m.shape(),
                    grid.num_points(),
                    channels
                )));
            }
            Ok((0..m.rows())
                .map(|r| {
                    let row = m.row(r);
                    match channels {
                        3 => [to_byte(row[0].as_f64()), to_byte(row[1].as_f64()), to_byte(row[2].as_f64())],
                        _ => ramp_color(row[0].as_f64()),
                    }
                })
                .collect())
        })
        .collect();
    if !(channels == 1 || channels == 3) {
        return Err(VamohError::Dimension(format!("cannot render {channels} channels")));
    }
    compose(&tiles?, grid, layout)
}

/// Renders segmentation maps (indices from 1) with the fixed palette.
pub fn render_segmentation(maps: &[Vec<usize>], grid: &GridSpec, layout: Layout) -> Result<RgbImage> {
    let tiles: Vec<Tile> = maps.iter().map(|m| m.iter().map(|&k| segment_color(k)).collect()).collect();
    compose(&tiles, grid, layout)
}

/// Renders entropy maps on the ramp, with `[0, ln K]` mapped to black..white.
pub fn render_entropy<T: Scalar>(maps: &[Vec<T>], k: usize, grid: &GridSpec, layout: Layout) -> Result<RgbImage> {
    let max = (k.max(1) as f64).ln();
    let tiles: Vec<Tile> = maps
        .iter()
        .map(|m| m.iter().map(|&h| ramp_color(if max > 0.0 { h.as_f64() / max } else { 0.0 })).collect())
        .collect();
    compose(&tiles, grid, layout)
}

/// Line plot of `values` against their index on a white canvas.
pub fn render_curve(values: &[f64], width: u32, height: u32) -> Result<RgbImage> {
    if width < 2 || height < 2 {
        return Err(VamohError::InvalidParameter("curve canvas must be at least 2×2".into()));
    }
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let mut img = RgbImage::from_pixel(width, height, Rgb(BACKGROUND));
    if finite.is_empty() {
        return Ok(img);
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = values.len();
    let point = |i: usize, v: f64| {
        let x = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
        let y = (v - lo) / span;
        ((x * (width - 1) as f64).round() as i64, ((1.0 - y) * (height - 1) as f64).round() as i64)
    };
    let color = Rgb(SEGMENT_PALETTE[0]);
    let mut prev: Option<(i64, i64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            prev = None;
            continue;
        }
        let p = point(i, v);
        let from = prev.unwrap_or(p);
        let steps = (p.0 - from.0).abs().max((p.1 - from.1).abs()).max(1);
        for s in 0..=steps {
            let x = from.0 + (p.0 - from.0) * s / steps;
            let y = from.1 + (p.1 - from.1) * s / steps;
            img.put_pixel(x as u32, y as u32, color);
        }
        prev = Some(p);
    }
    Ok(img)
}

pub fn save_samples<T: Scalar>(samples: &[Matrix<T>], grid: &GridSpec, layout: Layout, path: &Path) -> Result<()> {
    save_png(&render_samples(samples, grid, layout)?, path)
}

pub fn save_segmentation(maps: &[Vec<usize>], grid: &GridSpec, layout: Layout, path: &Path) -> Result<()> {
    save_png(&render_segmentation(maps, grid, layout)?, path)
}

pub fn save_entropy<T: Scalar>(maps: &[Vec<T>], k: usize, grid: &GridSpec, layout: Layout, path: &Path) -> Result<()> {
    save_png(&render_entropy(maps, k, grid, layout)?, path)
}

pub fn save_curve(values: &[f64], path: &Path) -> Result<()> {
    save_png(&render_curve(values, 320, 200)?, path)
}
