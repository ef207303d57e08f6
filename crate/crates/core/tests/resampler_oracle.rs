//! Reference resampler in exact rational arithmetic, evaluated directly in 2-D
//! from the pixel-area and half-pixel-centre definitions, checked against the
//! separable integer implementation on every tile of the bundled image.

use std::path::Path;

use tilecast_core::image_quality::{resample_tile, scaled_len, RasterImage};
use tilecast_core::scene::TileGrid;
use tilecast_core::ResolutionLadder;

/// `floor(num / den + 1/2)`, clamped to a byte.
fn round_half_up(num: i128, den: i128) -> u8 {
    ((2 * num + den).div_euclid(2 * den)).clamp(0, 255) as u8
}

/// Overlap of `[a0, a1)` and `[b0, b1)`.
fn overlap(a0: i128, a1: i128, b0: i128, b1: i128) -> i128 {
    (a1.min(b1) - a0.max(b0)).max(0)
}

fn area_reference(src: &[u8], w: u32, h: u32, ch: usize, dw: u32, dh: u32) -> Vec<u8> {
    let (w, h, dw, dh) = (w as i128, h as i128, dw as i128, dh as i128);
    let mut out = Vec::new();
    for y in 0..dh {
        for x in 0..dw {
            // Destination pixel covers [x*w, (x+1)*w) x [y*h, (y+1)*h) in units
            // where a source pixel is dw wide and dh tall.
            for c in 0..ch {
                let mut num = 0i128;
                for sy in 0..h {
                    let oy = overlap(y * h, (y + 1) * h, sy * dh, (sy + 1) * dh);
                    if oy == 0 {
                        continue;
                    }
                    for sx in 0..w {
                        let ox = overlap(x * w, (x + 1) * w, sx * dw, (sx + 1) * dw);
                        num += ox * oy * src[((sy * w + sx) as usize) * ch + c] as i128;
                    }
                }
                out.push(round_half_up(num, w * h));
            }
        }
    }
    out
}

/// Source coordinate of destination pixel `x` as `(index, frac_num)` over
/// denominator `2 * dst`, clamped to the edge pixels.
fn source_coord(x: i128, src: i128, dst: i128) -> (i128, i128) {
    let num = (2 * x + 1) * src - dst;
    let den = 2 * dst;
    if num <= 0 {
        return (0, 0);
    }
    let (i, r) = (num / den, num % den);
    if i >= src - 1 {
        (src - 1, 0)
    } else {
        (i, r)
    }
}

fn bilinear_reference(src: &[u8], w: u32, h: u32, ch: usize, dw: u32, dh: u32) -> Vec<u8> {
    let (w, h, dw, dh) = (w as i128, h as i128, dw as i128, dh as i128);
    let px = |x: i128, y: i128, c: usize| src[((y * w + x) as usize) * ch + c] as i128;
    let mut out = Vec::new();
    for y in 0..dh {
        let (y0, fy) = source_coord(y, h, dh);
        let y1 = (y0 + 1).min(h - 1);
        for x in 0..dw {
            let (x0, fx) = source_coord(x, w, dw);
            let x1 = (x0 + 1).min(w - 1);
            for c in 0..ch {
                let (dx, dy) = (2 * dw, 2 * dh);
                let num = (dx - fx) * (dy - fy) * px(x0, y0, c)
                    + fx * (dy - fy) * px(x1, y0, c)
                    + (dx - fx) * fy * px(x0, y1, c)
                    + fx * fy * px(x1, y1, c);
                out.push(round_half_up(num, dx * dy));
            }
        }
    }
    out
}

fn tile_pixels(img: &RasterImage, rect: (u32, u32, u32, u32)) -> Vec<u8> {
    let (x0, y0, w, h) = rect;
    let mut out = Vec::new();
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            for c in 0..img.channels() {
                out.push(img.sample(x, y, c));
            }
        }
    }
    out
}

#[test]
fn bundled_image_matches_reference_at_every_level() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/case_study.png");
    let img = RasterImage::load_png(path).unwrap();
    let grid = TileGrid::new(img.width(), img.height(), 8, 8).unwrap();
    let ch = img.channels() as usize;
    let ladder = ResolutionLadder::standard();
    for level in ladder.levels().iter().filter(|l| l.scale < 1.0) {
        for t in grid.tiles() {
            let rect = grid.pixel_rect(t);
            let (w, h) = (rect.2, rect.3);
            let pixels = tile_pixels(&img, rect);
            let (dw, dh) = (scaled_len(w, level.scale), scaled_len(h, level.scale));
            let small = area_reference(&pixels, w, h, ch, dw, dh);
            let want = bilinear_reference(&small, dw, dh, ch, w, h);
            let got = resample_tile(&pixels, w, h, img.channels(), level.scale);
            assert!(got == want, "tile {t} at {} differs from the reference", level.name);
        }
    }
}

#[test]
fn odd_sizes_match_reference() {
    let (w, h) = (13u32, 7u32);
    let src: Vec<u8> = (0..w * h).map(|i| ((i * 37 + 11) % 256) as u8).collect();
    for scale in [0.15, 0.25, 0.5, 0.75] {
        let (dw, dh) = (scaled_len(w, scale), scaled_len(h, scale));
        let small = area_reference(&src, w, h, 1, dw, dh);
        let want = bilinear_reference(&small, dw, dh, 1, w, h);
        assert_eq!(resample_tile(&src, w, h, 1, scale), want, "scale {scale}");
    }
}
