//! In-memory baseline JPEG round-trip simulation.
//!
//! The pixel-level effects of JPEG are reproduced without producing a
//! bitstream: full-range BT.601 RGB -> YCbCr, 8x8 DCT-II per plane,
//! quantization with the Annex-K tables scaled by the conventional quality
//! map, dequantization, inverse DCT and conversion back. Chroma is kept at
//! full resolution and entropy coding is skipped; neither changes pixels.

use crate::error::{Error, Result};
use crate::image_buf::ImageBuffer;

#[rustfmt::skip]
const LUMA_TABLE: [u32; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[rustfmt::skip]
const CHROMA_TABLE: [u32; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Scales a base table for `quality` in [1, 100]: factor `5000 / q` below
/// 50, `200 - 2q` from 50 up, entries `(base * factor + 50) / 100` in
/// integer arithmetic, clamped to [1, 255].
pub fn scaled_table(base: &[u32; 64], quality: u32) -> [f64; 64] {
    let factor = if quality < 50 { 5000 / quality } else { 200 - 2 * quality };
    let mut out = [0.0; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b * factor + 50) / 100).clamp(1, 255) as f64;
    }
    out
}

fn dct_cos_table() -> [[f64; 8]; 8] {
    let mut t = [[0.0; 8]; 8];
    for (u, row) in t.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            *v = ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    t
}

fn scale_factor(u: usize) -> f64 {
    if u == 0 {
        std::f64::consts::FRAC_1_SQRT_2
    } else {
        1.0
    }
}

/// Forward DCT-II of one 8x8 block (JPEG normalization).
pub fn dct_block(block: &[f64; 64], cos: &[[f64; 8]; 8]) -> [f64; 64] {
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            let mut acc = 0.0;
            for y in 0..8 {
                for x in 0..8 {
                    acc += block[y * 8 + x] * cos[u][x] * cos[v][y];
                }
            }
            out[v * 8 + u] = 0.25 * scale_factor(u) * scale_factor(v) * acc;
        }
    }
    out
}

/// Inverse DCT of one 8x8 block.
pub fn idct_block(coeffs: &[f64; 64], cos: &[[f64; 8]; 8]) -> [f64; 64] {
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            let mut acc = 0.0;
            for v in 0..8 {
                for u in 0..8 {
                    acc += scale_factor(u)
                        * scale_factor(v)
                        * coeffs[v * 8 + u]
                        * cos[u][x]
                        * cos[v][y];
                }
            }
            out[y * 8 + x] = 0.25 * acc;
        }
    }
    out
}

/// Quantize/dequantize one coefficient block in place.
fn quantize_block(coeffs: &mut [f64; 64], table: &[f64; 64]) {
    for (c, q) in coeffs.iter_mut().zip(table) {
        *c = (*c / q).round() * q;
    }
}

/// Runs one plane (values around [-128, 127] after level shift) through the
/// block transform chain. The plane is padded to a multiple of 8 by edge
/// replication.
fn process_plane(plane: &[f64], w: usize, h: usize, table: &[f64; 64]) -> Vec<f64> {
    let cos = dct_cos_table();
    let bw = w.div_ceil(8);
    let bh = h.div_ceil(8);
    let mut out = vec![0.0; w * h];
    for by in 0..bh {
        for bx in 0..bw {
            let mut block = [0.0f64; 64];
            for y in 0..8 {
                for x in 0..8 {
                    let sx = (bx * 8 + x).min(w - 1);
                    let sy = (by * 8 + y).min(h - 1);
                    block[y * 8 + x] = plane[sy * w + sx] - 128.0;
                }
            }
            let mut coeffs = dct_block(&block, &cos);
            quantize_block(&mut coeffs, table);
            let rec = idct_block(&coeffs, &cos);
            for y in 0..8 {
                for x in 0..8 {
                    let dx = bx * 8 + x;
                    let dy = by * 8 + y;
                    if dx < w && dy < h {
                        out[dy * w + dx] = rec[y * 8 + x] + 128.0;
                    }
                }
            }
        }
    }
    out
}

/// Simulated encode/decode at the given quality.
pub fn jpeg_roundtrip(img: &ImageBuffer, quality: u32) -> Result<ImageBuffer> {
    if !(1..=100).contains(&quality) {
        return Err(Error::validation(format!("jpeg quality {quality} outside [1, 100]")));
    }
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    let mut y_plane = vec![0.0; n];
    let mut cb_plane = vec![0.0; n];
    let mut cr_plane = vec![0.0; n];
    for (i, px) in img.data().chunks(3).enumerate() {
        let (r, g, b) = (px[0] * 255.0, px[1] * 255.0, px[2] * 255.0);
        y_plane[i] = 0.299 * r + 0.587 * g + 0.114 * b;
        cb_plane[i] = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
        cr_plane[i] = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
    }

    let luma_q = scaled_table(&LUMA_TABLE, quality);
    let chroma_q = scaled_table(&CHROMA_TABLE, quality);
    let y_plane = process_plane(&y_plane, w, h, &luma_q);
    let cb_plane = process_plane(&cb_plane, w, h, &chroma_q);
    let cr_plane = process_plane(&cr_plane, w, h, &chroma_q);

    let mut out = ImageBuffer::new(w, h);
    let data = out.data_mut();
    for i in 0..n {
        let (yv, cb, cr) = (y_plane[i], cb_plane[i] - 128.0, cr_plane[i] - 128.0);
        let r = yv + 1.402 * cr;
        let g = yv - 0.344136 * cb - 0.714136 * cr;
        let b = yv + 1.772 * cb;
        data[i * 3] = (r / 255.0).clamp(0.0, 1.0);
        data[i * 3 + 1] = (g / 255.0).clamp(0.0, 1.0);
        data[i * 3 + 2] = (b / 255.0).clamp(0.0, 1.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;

    #[test]
    fn quality_out_of_range_is_rejected() {
        let img = ImageBuffer::new(8, 8);
        assert!(jpeg_roundtrip(&img, 0).is_err());
        assert!(jpeg_roundtrip(&img, 101).is_err());
    }

    #[test]
    fn mid_gray_survives_any_quality() {
        let img = ImageBuffer::filled(24, 16, [0.5; 3]);
        for quality in [1, 30, 50, 75, 95, 100] {
            let out = jpeg_roundtrip(&img, quality).unwrap();
            for (a, b) in out.data().iter().zip(img.data()) {
                assert!((a - b).abs() <= 1.0 / 255.0, "quality {quality}");
            }
        }
    }

    #[test]
    fn single_block_matches_direct_dct_oracle() {
        // 8x8 gray block; oracle applies the same DCT/quantize/IDCT chain
        // with independently written loops.
        let mut rng = crate::rng::stream(4, "jpegtest", 0);
        let values: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let img = ImageBuffer::from_fn(8, 8, |x, y| {
            let v = values[y * 8 + x];
            [v, v, v]
        });
        let quality = 42;
        let out = jpeg_roundtrip(&img, quality).unwrap();

        // oracle on the luma plane (gray input: Y = value*255, Cb = Cr = 128,
        // whose blocks quantize to exactly zero after the level shift)
        let table = scaled_table(&LUMA_TABLE, quality);
        let mut coeffs = [0.0f64; 64];
        for v in 0..8 {
            for u in 0..8 {
                let mut acc = 0.0;
                for y in 0..8 {
                    for x in 0..8 {
                        let f = values[y * 8 + x] * 255.0 - 128.0;
                        acc += f
                            * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos()
                            * ((2 * y + 1) as f64 * v as f64 * std::f64::consts::PI / 16.0).cos();
                    }
                }
                let cu = if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
                let cv = if v == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
                coeffs[v * 8 + u] = (0.25 * cu * cv * acc / table[v * 8 + u]).round() * table[v * 8 + u];
            }
        }
        for y in 0..8 {
            for x in 0..8 {
                let mut acc = 0.0;
                for v in 0..8 {
                    for u in 0..8 {
                        let cu = if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
                        let cv = if v == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
                        acc += cu
                            * cv
                            * coeffs[v * 8 + u]
                            * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos()
                            * ((2 * y + 1) as f64 * v as f64 * std::f64::consts::PI / 16.0).cos();
                    }
                }
                let expected = ((0.25 * acc + 128.0) / 255.0).clamp(0.0, 1.0);
                let got = out.get(x, y)[0];
                assert!((got - expected).abs() < 1e-6, "({x},{y}): {got} vs {expected}");
            }
        }
    }

    #[test]
    fn dct_idct_round_trip_without_quantization() {
        let cos = dct_cos_table();
        let mut rng = crate::rng::stream(4, "jpegtest", 1);
        let mut block = [0.0f64; 64];
        for v in &mut block {
            *v = rng.random::<f64>() * 255.0 - 128.0;
        }
        let rec = idct_block(&dct_block(&block, &cos), &cos);
        for (a, b) in block.iter().zip(&rec) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
