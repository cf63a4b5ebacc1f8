use rand::Rng;
use rand_distr::{StandardNormal, Uniform};

use super::resize::cubic;
use crate::{Error, Kernel2D, Result};

/// Isotropic Gaussian sampled at integer offsets from the center, unit sum.
pub fn gaussian_kernel(size: usize, std: f64) -> Result<Kernel2D> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::range(format!("kernel size must be odd, got {size}")));
    }
    if !(std > 0.0) {
        return Err(Error::range(format!("std must be positive, got {std}")));
    }
    let c = (size / 2) as f64;
    let profile: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * std * std)).exp()
        })
        .collect();
    let mut weights = Vec::with_capacity(size * size);
    for a in &profile {
        for b in &profile {
            weights.push(a * b);
        }
    }
    Kernel2D::new(size, size, weights)?.normalized()
}

/// Per-step standard deviation of the heading change at intensity 1.
const MOTION_TURN_STD: f64 = 0.3;
const MOTION_STEP: f64 = 0.5;

/// Random camera-shake kernel.
///
/// A trajectory of `2 * (size - 1)` half-pixel steps is traced with a heading
/// that performs a Gaussian random walk whose step deviation is scaled by
/// `intensity`. The path is shrunk if needed to fit the `size x size` window,
/// centered, and splatted bilinearly. Because each step moves at most half a
/// pixel, the support is always 8-connected. `intensity = 0` gives a straight
/// horizontal line through the center row.
pub fn motion_kernel<R: Rng + ?Sized>(
    size: usize,
    intensity: f64,
    rng: &mut R,
) -> Result<Kernel2D> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::range(format!("kernel size must be odd, got {size}")));
    }
    if !(0.0..=1.0).contains(&intensity) {
        return Err(Error::range(format!(
            "intensity must lie in [0, 1], got {intensity}"
        )));
    }
    if size == 1 {
        return Ok(Kernel2D::delta());
    }

    let n_steps = 2 * (size - 1);
    let mut heading = if intensity > 0.0 {
        let u: f64 = rng.sample(Uniform::new_inclusive(-1.0, 1.0).unwrap());
        intensity * std::f64::consts::PI * u
    } else {
        0.0
    };
    let mut path = Vec::with_capacity(n_steps + 1);
    let (mut x, mut y) = (0.0f64, 0.0f64);
    path.push((x, y));
    for _ in 0..n_steps {
        x += MOTION_STEP * heading.cos();
        y += MOTION_STEP * heading.sin();
        path.push((x, y));
        if intensity > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            heading += intensity * MOTION_TURN_STD * z;
        }
    }

    let (min_x, max_x) = min_max(path.iter().map(|p| p.0));
    let (min_y, max_y) = min_max(path.iter().map(|p| p.1));
    let extent = (max_x - min_x).max(max_y - min_y);
    let room = (size - 1) as f64;
    let scale = if extent > room { room / extent } else { 1.0 };
    let center = (size / 2) as f64;
    let (mid_x, mid_y) = ((min_x + max_x) / 2.0, (min_y + max_y) / 2.0);

    let mut weights = vec![0.0; size * size];
    for &(px, py) in &path {
        let col = center + (px - mid_x) * scale;
        let row = center + (py - mid_y) * scale;
        splat(&mut weights, size, row, col);
    }
    Kernel2D::new(size, size, weights)?.normalized()
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

fn splat(weights: &mut [f64], size: usize, row: f64, col: f64) {
    let max = (size - 1) as f64;
    let row = row.clamp(0.0, max);
    let col = col.clamp(0.0, max);
    let (r0, c0) = (row.floor(), col.floor());
    let (fr, fc) = (row - r0, col - c0);
    let (r0, c0) = (r0 as usize, c0 as usize);
    for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
        for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
            let w = wr * wc;
            if w > 0.0 {
                weights[(r0 + dr) * size + (c0 + dc)] += w;
            }
        }
    }
}

/// Separable approximation of bicubic downsampling by `sf` as a blur kernel
/// of width `4 * sf + 1`, sampled from the `a = -0.5` cubic stretched by `sf`.
pub fn bicubic_approx_kernel(sf: usize) -> Result<Kernel2D> {
    if sf == 0 {
        return Err(Error::range("scale factor must be >= 1"));
    }
    let n = 4 * sf + 1;
    let c = (2 * sf) as f64;
    let profile: Vec<f64> = (0..n).map(|i| cubic((i as f64 - c) / sf as f64)).collect();
    let mut weights = Vec::with_capacity(n * n);
    for a in &profile {
        for b in &profile {
            weights.push(a * b);
        }
    }
    Kernel2D::new(n, n, weights)?.normalized()
}
