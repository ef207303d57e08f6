//! Renders a level assignment onto a real image and measures PSNR.
//!
//! Each tile is area-averaged down to its ladder scale, rounded to 8 bits,
//! then bilinearly interpolated back to the original tile size. Both steps
//! use exact integer arithmetic, so results do not depend on evaluation
//! order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::hetnet::ResolutionLadder;
use crate::scene::{TileGrid, TileId};
use crate::significance::SignificanceMap;
use crate::transcode::LevelAssignment;

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image is {got_w}x{got_h} but the grid expects {want_w}x{want_h}")]
    GridMismatch { got_w: u32, got_h: u32, want_w: u32, want_h: u32 },
    #[error("images differ in shape: {0}x{1}x{2} vs {3}x{4}x{5}")]
    ShapeMismatch(u32, u32, u8, u32, u32, u8),
    #[error("buffer of {got} bytes does not match {width}x{height}x{channels}")]
    BadBuffer { got: usize, width: u32, height: u32, channels: u8 },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(u8),
    #[error("significance weights over the tiles sum to zero")]
    ZeroWeight,
    #[error("image I/O failed for {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// 8-bit interleaved raster with 1 or 3 channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        if data.len() != width as usize * height as usize * channels as usize {
            return Err(ImageError::BadBuffer { got: data.len(), width, height, channels });
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self, ImageError> {
        Self::new(width, height, channels, vec![value; width as usize * height as usize * channels as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    fn index(&self, x: u32, y: u32, c: u8) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize + c as usize
    }

    pub fn sample(&self, x: u32, y: u32, c: u8) -> u8 {
        self.data[self.index(x, y, c)]
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let path = path.as_ref();
        let io = |source| ImageError::Io { path: path.display().to_string(), source };
        let img =
            image::ImageReader::open(path).map_err(|e| io(image::ImageError::IoError(e)))?.decode().map_err(io)?;
        match img {
            image::DynamicImage::ImageLuma8(buf) => {
                let (w, h) = buf.dimensions();
                Self::new(w, h, 1, buf.into_raw())
            }
            other => {
                let buf = other.to_rgb8();
                let (w, h) = buf.dimensions();
                Self::new(w, h, 3, buf.into_raw())
            }
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        let color = if self.channels == 1 { image::ExtendedColorType::L8 } else { image::ExtendedColorType::Rgb8 };
        image::save_buffer_with_format(path, &self.data, self.width, self.height, color, image::ImageFormat::Png)
            .map_err(|source| ImageError::Io { path: path.display().to_string(), source })
    }

    fn same_shape(&self, other: &Self) -> Result<(), ImageError> {
        if self.width != other.width || self.height != other.height || self.channels != other.channels {
            return Err(ImageError::ShapeMismatch(
                self.width,
                self.height,
                self.channels,
                other.width,
                other.height,
                other.channels,
            ));
        }
        Ok(())
    }
}

/// Side length of a tile dimension after scaling; never below one pixel.
pub fn scaled_len(len: u32, scale: f64) -> u32 {
    ((len as f64 * scale).round() as u32).clamp(1, len)
}

#[inline]
fn round_div(num: u64, den: u64) -> u8 {
    ((2 * num + den) / (2 * den)).min(255) as u8
}

/// Overlap weights of source pixels (length `src`) against destination
/// pixels (length `dst`) on a common axis scaled by `src * dst`.
fn area_weights(src: u32, dst: u32) -> Vec<Vec<(u32, u64)>> {
    (0..dst)
        .map(|x| {
            let lo = x as u64 * src as u64;
            let hi = lo + src as u64;
            let first = (lo / dst as u64) as u32;
            let last = ((hi - 1) / dst as u64) as u32;
            (first..=last)
                .filter_map(|i| {
                    let a = lo.max(i as u64 * dst as u64);
                    let b = hi.min((i as u64 + 1) * dst as u64);
                    (b > a).then_some((i, b - a))
                })
                .collect()
        })
        .collect()
}

/// Bilinear taps `(i0, w0, i1, w1)` over denominator `2 * dst` for each of
/// `dst` output pixels sampling a `src`-long axis with aligned pixel centres.
fn bilinear_taps(src: u32, dst: u32) -> (Vec<(u32, u64, u32, u64)>, u64) {
    let den = 2 * dst as u64;
    let taps = (0..dst)
        .map(|x| {
            let num = (2 * x as i64 + 1) * src as i64 - dst as i64;
            let (mut i0, mut rem) = if num <= 0 { (0u64, 0u64) } else { (num as u64 / den, num as u64 % den) };
            if i0 >= src as u64 - 1 {
                i0 = src as u64 - 1;
                rem = 0;
            }
            let i1 = (i0 + 1).min(src as u64 - 1);
            (i0 as u32, den - rem, i1 as u32, rem)
        })
        .collect();
    (taps, den)
}

/// Area-average downscale of a `w × h × ch` buffer to `dw × dh`.
pub fn downscale_area(src: &[u8], w: u32, h: u32, ch: u8, dw: u32, dh: u32) -> Vec<u8> {
    let wx = area_weights(w, dw);
    let wy = area_weights(h, dh);
    let ch = ch as usize;
    // horizontal pass keeps exact integer sums
    let mut horiz = vec![0u64; dw as usize * h as usize * ch];
    for y in 0..h as usize {
        for (x, taps) in wx.iter().enumerate() {
            for c in 0..ch {
                let mut s = 0u64;
                for &(i, o) in taps {
                    s += o * src[(y * w as usize + i as usize) * ch + c] as u64;
                }
                horiz[(y * dw as usize + x) * ch + c] = s;
            }
        }
    }
    let den = w as u64 * h as u64;
    let mut out = vec![0u8; dw as usize * dh as usize * ch];
    for (y, taps) in wy.iter().enumerate() {
        for x in 0..dw as usize {
            for c in 0..ch {
                let mut s = 0u64;
                for &(j, o) in taps {
                    s += o * horiz[(j as usize * dw as usize + x) * ch + c];
                }
                out[(y * dw as usize + x) * ch + c] = round_div(s, den);
            }
        }
    }
    out
}

/// Bilinear upscale of a `w × h × ch` buffer to `dw × dh`.
pub fn upscale_bilinear(src: &[u8], w: u32, h: u32, ch: u8, dw: u32, dh: u32) -> Vec<u8> {
    let (tx, dx) = bilinear_taps(w, dw);
    let (ty, dy) = bilinear_taps(h, dh);
    let ch = ch as usize;
    let at = |x: u32, y: u32, c: usize| src[(y as usize * w as usize + x as usize) * ch + c] as u64;
    let mut out = vec![0u8; dw as usize * dh as usize * ch];
    for (y, &(y0, wy0, y1, wy1)) in ty.iter().enumerate() {
        for (x, &(x0, wx0, x1, wx1)) in tx.iter().enumerate() {
            for c in 0..ch {
                let s = wy0 * (wx0 * at(x0, y0, c) + wx1 * at(x1, y0, c))
                    + wy1 * (wx0 * at(x0, y1, c) + wx1 * at(x1, y1, c));
                out[(y * dw as usize + x) * ch + c] = round_div(s, dx * dy);
            }
        }
    }
    out
}

fn extract_tile(img: &RasterImage, rect: (u32, u32, u32, u32)) -> Vec<u8> {
    let (x0, y0, w, h) = rect;
    let ch = img.channels as usize;
    let mut out = Vec::with_capacity(w as usize * h as usize * ch);
    for y in y0..y0 + h {
        let start = img.index(x0, y, 0);
        out.extend_from_slice(&img.data[start..start + w as usize * ch]);
    }
    out
}

fn write_tile(img: &mut RasterImage, rect: (u32, u32, u32, u32), pixels: &[u8]) {
    let (x0, y0, w, h) = rect;
    let row = w as usize * img.channels as usize;
    for (dy, y) in (y0..y0 + h).enumerate() {
        let start = img.index(x0, y, 0);
        img.data[start..start + row].copy_from_slice(&pixels[dy * row..(dy + 1) * row]);
    }
}

/// Round-trips one tile buffer through `scale`.
pub fn resample_tile(pixels: &[u8], w: u32, h: u32, ch: u8, scale: f64) -> Vec<u8> {
    if scale >= 1.0 {
        return pixels.to_vec();
    }
    let dw = scaled_len(w, scale);
    let dh = scaled_len(h, scale);
    let small = downscale_area(pixels, w, h, ch, dw, dh);
    upscale_bilinear(&small, dw, dh, ch, w, h)
}

/// Renders every assigned tile at its level. Tiles without a level are
/// copied unchanged.
pub fn apply_levels(
    image: &RasterImage,
    grid: &TileGrid,
    assignment: &LevelAssignment,
    ladder: &ResolutionLadder,
) -> Result<RasterImage, ImageError> {
    if image.width != grid.frame_width() || image.height != grid.frame_height() {
        return Err(ImageError::GridMismatch {
            got_w: image.width,
            got_h: image.height,
            want_w: grid.frame_width(),
            want_h: grid.frame_height(),
        });
    }
    let mut out = image.clone();
    for (tile, level) in assignment.iter() {
        if !grid.contains(tile) {
            continue;
        }
        let scale = ladder.scale(level);
        if scale >= 1.0 {
            continue;
        }
        let rect = grid.pixel_rect(tile);
        let pixels = extract_tile(image, rect);
        let rendered = resample_tile(&pixels, rect.2, rect.3, image.channels, scale);
        write_tile(&mut out, rect, &rendered);
    }
    Ok(out)
}

fn psnr_from_sse(sse: u64, samples: u64) -> f64 {
    if sse == 0 || samples == 0 {
        return PSNR_CAP_DB;
    }
    let mse = sse as f64 / samples as f64;
    (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP_DB)
}

fn sse(a: &[u8], b: &[u8]) -> u64 {
    a.iter().zip(b).map(|(&x, &y)| (x as i64 - y as i64).pow(2) as u64).sum()
}

/// `10·log10(255² / MSE)` over every sample; identical images give
/// [`PSNR_CAP_DB`].
pub fn psnr(a: &RasterImage, b: &RasterImage) -> Result<f64, ImageError> {
    a.same_shape(b)?;
    Ok(psnr_from_sse(sse(&a.data, &b.data), a.data.len() as u64))
}

pub fn tile_psnr(a: &RasterImage, b: &RasterImage, grid: &TileGrid) -> Result<BTreeMap<TileId, f64>, ImageError> {
    a.same_shape(b)?;
    Ok(grid
        .tiles()
        .map(|t| {
            let rect = grid.pixel_rect(t);
            let ta = extract_tile(a, rect);
            let tb = extract_tile(b, rect);
            (t, psnr_from_sse(sse(&ta, &tb), ta.len() as u64))
        })
        .collect())
}

/// `Σ W(t)·psnr(t) / Σ W(t)` over the tiles in `per_tile`; tiles without a
/// weight count as zero.
pub fn weighted_psnr(per_tile: &BTreeMap<TileId, f64>, sig: &SignificanceMap) -> Result<f64, ImageError> {
    let (num, den) = per_tile.iter().fold((0.0, 0.0), |(n, d), (t, p)| {
        let w = sig.weight_or_zero(*t);
        (n + w * p, d + w)
    });
    if den <= 0.0 {
        return Err(ImageError::ZeroWeight);
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityResult {
    pub per_tile_psnr_db: BTreeMap<TileId, f64>,
    pub psnr_db: f64,
    pub weighted_psnr_db: f64,
}

impl QualityResult {
    pub fn evaluate(
        source: &RasterImage,
        rendered: &RasterImage,
        grid: &TileGrid,
        weights: &SignificanceMap,
    ) -> Result<Self, ImageError> {
        let per_tile = tile_psnr(source, rendered, grid)?;
        Ok(Self {
            psnr_db: psnr(source, rendered)?,
            weighted_psnr_db: weighted_psnr(&per_tile, weights)?,
            per_tile_psnr_db: per_tile,
        })
    }
}

/// Grayscale tile map: darker is more significant, unweighted tiles are white.
pub fn significance_heatmap(map: &SignificanceMap, grid: &TileGrid, cell_px: u32) -> RasterImage {
    let max = map.max();
    let w = grid.cols() as u32 * cell_px;
    let h = grid.rows() as u32 * cell_px;
    let mut img = RasterImage::filled(w, h, 1, 255).expect("valid heatmap shape");
    for (t, weight) in map.iter() {
        let shade = if max > 0.0 { 255.0 - 255.0 * weight / max } else { 255.0 };
        let v = shade.round().clamp(0.0, 255.0) as u8;
        for y in t.row as u32 * cell_px..(t.row as u32 + 1) * cell_px {
            for x in t.col as u32 * cell_px..(t.col as u32 + 1) * cell_px {
                let i = img.index(x, y, 0);
                img.data[i] = v;
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetnet::Level;
    use proptest::prelude::*;

    fn gradient(w: u32, h: u32, ch: u8) -> RasterImage {
        let data = (0..h)
            .flat_map(|y| {
                (0..w).flat_map(move |x| (0..ch).map(move |c| ((x * 7 + y * 13 + c as u32 * 29) % 256) as u8))
            })
            .collect();
        RasterImage::new(w, h, ch, data).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = gradient(16, 16, 3);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let base = RasterImage::filled(8, 8, 1, 100).unwrap();
        let plus = RasterImage::filled(8, 8, 1, 101).unwrap();
        assert!((psnr(&base, &plus).unwrap() - 48.1308).abs() < 1e-4);
        let other = gradient(8, 4, 1);
        assert!(matches!(psnr(&base, &other), Err(ImageError::ShapeMismatch(..))));
    }

    #[test]
    fn top_level_is_identity() {
        let img = gradient(64, 48, 3);
        let grid = TileGrid::new(64, 48, 3, 4).unwrap();
        let a = LevelAssignment::uniform(grid.tiles(), Level(5));
        assert_eq!(apply_levels(&img, &grid, &a, &ResolutionLadder::standard()).unwrap(), img);
    }

    #[test]
    fn constant_image_survives_any_level() {
        let img = RasterImage::filled(70, 45, 3, 173).unwrap();
        let grid = TileGrid::new(70, 45, 3, 4).unwrap();
        let ladder = ResolutionLadder::standard();
        for l in 1..=5 {
            let a = LevelAssignment::uniform(grid.tiles(), Level(l));
            assert_eq!(apply_levels(&img, &grid, &a, &ladder).unwrap(), img);
        }
    }

    #[test]
    fn grid_mismatch_rejected() {
        let img = gradient(10, 10, 1);
        let grid = TileGrid::new(20, 10, 1, 2).unwrap();
        let a = LevelAssignment::new();
        assert!(matches!(
            apply_levels(&img, &grid, &a, &ResolutionLadder::standard()),
            Err(ImageError::GridMismatch { .. })
        ));
    }

    #[test]
    fn weighted_psnr_examples() {
        let per_tile: BTreeMap<TileId, f64> =
            [(TileId::new(0, 0), 30.0), (TileId::new(0, 1), 40.0)].into_iter().collect();
        let uniform: SignificanceMap = per_tile.keys().map(|t| (*t, 0.7)).collect();
        assert!((weighted_psnr(&per_tile, &uniform).unwrap() - 35.0).abs() < 1e-12);
        let one: BTreeMap<TileId, f64> = [(TileId::new(0, 0), 31.5)].into_iter().collect();
        assert!((weighted_psnr(&one, &uniform).unwrap() - 31.5).abs() < 1e-12);
        assert!(matches!(weighted_psnr(&per_tile, &SignificanceMap::new()), Err(ImageError::ZeroWeight)));
    }

    #[test]
    fn heatmap_shades() {
        let grid = TileGrid::new(4, 2, 1, 2).unwrap();
        let m: SignificanceMap = [(TileId::new(0, 0), 2.0), (TileId::new(0, 1), 1.0)].into_iter().collect();
        let h = significance_heatmap(&m, &grid, 2);
        assert_eq!((h.width(), h.height()), (4, 2));
        assert_eq!(h.sample(0, 0, 0), 0);
        assert_eq!(h.sample(3, 1, 0), 128);
    }

    #[test]
    fn png_round_trip() {
        let dir = std::env::temp_dir().join(format!("tilecast-png-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        for ch in [1, 3] {
            let img = gradient(13, 9, ch);
            let p = dir.join(format!("g{ch}.png"));
            img.save_png(&p).unwrap();
            assert_eq!(RasterImage::load_png(&p).unwrap(), img);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn output_dims_preserved(w in 4u32..40, h in 4u32..40, rows in 1usize..4, cols in 1usize..4, l in 1u8..=5, seed in any::<u8>()) {
            let mut img = gradient(w, h, 1);
            img.data_mut().iter_mut().for_each(|v| *v = v.wrapping_add(seed));
            let grid = TileGrid::new(w, h, rows, cols).unwrap();
            let out = apply_levels(&img, &grid, &LevelAssignment::uniform(grid.tiles(), Level(l)), &ResolutionLadder::standard()).unwrap();
            prop_assert_eq!((out.width(), out.height(), out.channels()), (w, h, 1));
        }
    }
}
