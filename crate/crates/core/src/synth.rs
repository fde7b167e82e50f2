//! Procedural multispectral scenes for tests and demos.
//!
//! A few latent texture fields (smooth value noise plus piecewise-constant
//! cells) are mixed into correlated bands; the pan image is the band mean and
//! the multispectral input is the reference degraded by 4.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::{RasterImage, DEFAULT_RADIOMETRIC_MAX};
use crate::training::wald_degrade;

const LATENTS: usize = 3;
const RATIO: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// Single-band image at full resolution.
    pub pan: RasterImage,
    /// Multispectral input at a quarter of the pan resolution.
    pub ms: RasterImage,
    /// Multispectral image at the pan resolution.
    pub reference: RasterImage,
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(w: usize, h: usize, cell: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gw = w / cell + 2;
    let gh = h / cell + 2;
    let grid: Vec<f64> = (0..gw * gh).map(|_| rng.gen::<f64>()).collect();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let gy = y / cell;
        let ty = smoothstep((y % cell) as f64 / cell as f64);
        for x in 0..w {
            let gx = x / cell;
            let tx = smoothstep((x % cell) as f64 / cell as f64);
            let at = |i: usize, j: usize| grid[j * gw + i];
            let top = at(gx, gy) * (1.0 - tx) + at(gx + 1, gy) * tx;
            let bot = at(gx, gy + 1) * (1.0 - tx) + at(gx + 1, gy + 1) * tx;
            out[y * w + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

// Nearest-seed cells with a random level each: sharp edges like field borders.
fn cells(w: usize, h: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let seeds: Vec<(f64, f64, f64)> = (0..count)
        .map(|_| {
            (
                rng.gen::<f64>() * w as f64,
                rng.gen::<f64>() * h as f64,
                rng.gen::<f64>(),
            )
        })
        .collect();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut best = (f64::INFINITY, 0.0);
            for &(sx, sy, v) in &seeds {
                let d = (px - sx).powi(2) + (py - sy).powi(2);
                if d < best.0 {
                    best = (d, v);
                }
            }
            out[y * w + x] = best.1;
        }
    }
    out
}

fn latent(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut field = vec![0.0; w * h];
    let mut amp = 0.5;
    let mut cell = (w.min(h) / 2).max(4);
    while cell >= 2 {
        let n = value_noise(w, h, cell, rng);
        field.iter_mut().zip(&n).for_each(|(f, v)| *f += amp * v);
        amp *= 0.5;
        cell /= 2;
    }
    let c = cells(w, h, (w * h / 256).max(4), rng);
    field
        .iter_mut()
        .zip(&c)
        .for_each(|(f, v)| *f = 0.5 * *f + 0.5 * v);
    field
}

/// Scene with a `width`×`height` pan image and `bands` spectral bands.
pub fn synthetic_scene(
    width: usize,
    height: usize,
    bands: usize,
    seed: u64,
) -> Result<SyntheticScene> {
    if bands == 0 {
        return Err(Error::Shape("scene needs at least one band".into()));
    }
    if width == 0 || height == 0 || !width.is_multiple_of(RATIO) || !height.is_multiple_of(RATIO) {
        return Err(Error::Dimension(format!(
            "scene size {width}x{height} must be a positive multiple of {RATIO}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fields: Vec<Vec<f64>> = (0..LATENTS)
        .map(|_| latent(width, height, &mut rng))
        .collect();
    // Positive mixing weights keep the bands correlated, as in real sensors.
    let mix: Vec<[f64; LATENTS]> = (0..bands)
        .map(|_| {
            let mut row = [0.0; LATENTS];
            row.iter_mut().for_each(|v| *v = rng.gen_range(0.2..1.0));
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            row
        })
        .collect();
    let n = width * height;
    let mut planes: Vec<Vec<f64>> = mix
        .iter()
        .map(|row| {
            (0..n)
                .map(|i| (0..LATENTS).map(|l| row[l] * fields[l][i]).sum())
                .collect()
        })
        .collect();

    let lo = planes
        .iter()
        .flatten()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = planes
        .iter()
        .flatten()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    for p in &mut planes {
        p.iter_mut()
            .for_each(|v| *v = 0.05 + 0.9 * (*v - lo) / span);
    }
    let pan: Vec<f32> = (0..n)
        .map(|i| (planes.iter().map(|p| p[i]).sum::<f64>() / bands as f64) as f32)
        .collect();
    let planes: Vec<Vec<f32>> = planes
        .into_iter()
        .map(|p| p.into_iter().map(|v| v as f32).collect())
        .collect();

    let reference = RasterImage::from_planes(width, height, &planes, DEFAULT_RADIOMETRIC_MAX)?;
    let pan = RasterImage::new(width, height, 1, pan, DEFAULT_RADIOMETRIC_MAX)?;
    let ms = wald_degrade(&reference, RATIO)?;
    Ok(SyntheticScene { pan, ms, reference })
}
