//! Bicubic resampling by integer factors with periodic boundaries.
//!
//! Each axis is a sparse linear map stored as per-output tap lists, so the
//! adjoint needed by gradient-based solvers is exact.

use crate::{Error, Image, Result};

const CUBIC_A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let a = CUBIC_A;
    if ax <= 1.0 {
        (a + 2.0) * ax * ax * ax - (a + 3.0) * ax * ax + 1.0
    } else if ax < 2.0 {
        a * ax * ax * ax - 5.0 * a * ax * ax + 8.0 * a * ax - 4.0 * a
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeDirection {
    Down,
    Up,
}

/// One axis of a resampling operator.
#[derive(Clone, Debug)]
pub(crate) struct AxisResampler {
    n_in: usize,
    taps: Vec<Vec<(usize, f64)>>,
}

impl AxisResampler {
    pub(crate) fn new(n_in: usize, sf: usize, dir: ResizeDirection) -> Self {
        let s = sf as f64;
        let n_out = match dir {
            ResizeDirection::Down => n_in / sf,
            ResizeDirection::Up => n_in * sf,
        };
        let taps = (0..n_out)
            .map(|i| {
                let mut row: Vec<(usize, f64)> = Vec::new();
                let (center, stretch) = match dir {
                    ResizeDirection::Down => ((i as f64 + 0.5) * s - 0.5, s),
                    ResizeDirection::Up => ((i as f64 + 0.5) / s - 0.5, 1.0),
                };
                let reach = 2.0 * stretch;
                let lo = (center - reach).ceil() as isize;
                let hi = (center + reach).floor() as isize;
                for j in lo..=hi {
                    let w = cubic((center - j as f64) / stretch);
                    if w == 0.0 {
                        continue;
                    }
                    let idx = j.rem_euclid(n_in as isize) as usize;
                    match row.iter_mut().find(|(k, _)| *k == idx) {
                        Some(entry) => entry.1 += w,
                        None => row.push((idx, w)),
                    }
                }
                let total: f64 = row.iter().map(|t| t.1).sum();
                for t in &mut row {
                    t.1 /= total;
                }
                row
            })
            .collect();
        Self { n_in, taps }
    }

    fn n_out(&self) -> usize {
        self.taps.len()
    }

    fn apply(&self, src: &[f64], dst: &mut [f64], stride_in: usize, stride_out: usize) {
        for (i, row) in self.taps.iter().enumerate() {
            dst[i * stride_out] = row.iter().map(|&(j, w)| w * src[j * stride_in]).sum();
        }
    }

    fn apply_adjoint(&self, src: &[f64], dst: &mut [f64], stride_in: usize, stride_out: usize) {
        for j in 0..self.n_in {
            dst[j * stride_out] = 0.0;
        }
        for (i, row) in self.taps.iter().enumerate() {
            let v = src[i * stride_in];
            for &(j, w) in row {
                dst[j * stride_out] += w * v;
            }
        }
    }

    /// Dense `n_out x n_in` matrix, for tests.
    #[cfg(test)]
    pub(crate) fn dense(&self) -> Vec<Vec<f64>> {
        self.taps
            .iter()
            .map(|row| {
                let mut r = vec![0.0; self.n_in];
                for &(j, w) in row {
                    r[j] += w;
                }
                r
            })
            .collect()
    }
}

/// Separable 2-D resampler: rows then columns.
#[derive(Clone, Debug)]
pub(crate) struct Resampler {
    rows: AxisResampler,
    cols: AxisResampler,
}

impl Resampler {
    pub(crate) fn new(height: usize, width: usize, sf: usize, dir: ResizeDirection) -> Self {
        Self {
            rows: AxisResampler::new(height, sf, dir),
            cols: AxisResampler::new(width, sf, dir),
        }
    }

    pub(crate) fn apply(&self, x: &Image) -> Image {
        let (c, h, w) = x.shape();
        let (ho, wo) = (self.rows.n_out(), self.cols.n_out());
        let mut out = Image::zeros(c, ho, wo);
        let mut tmp = vec![0.0; h * wo];
        for ch in 0..c {
            let src = x.channel(ch);
            for r in 0..h {
                self.cols.apply(
                    &src[r * w..(r + 1) * w],
                    &mut tmp[r * wo..(r + 1) * wo],
                    1,
                    1,
                );
            }
            let dst = out.channel_mut(ch);
            for col in 0..wo {
                self.rows.apply(&tmp[col..], &mut dst[col..], wo, wo);
            }
        }
        out
    }

    pub(crate) fn apply_adjoint(&self, y: &Image) -> Image {
        let (c, ho, wo) = y.shape();
        let (h, w) = (self.rows.n_in, self.cols.n_in);
        let mut out = Image::zeros(c, h, w);
        let mut tmp = vec![0.0; h * wo];
        for ch in 0..c {
            let src = y.channel(ch);
            for col in 0..wo {
                self.rows
                    .apply_adjoint(&src[col..], &mut tmp[col..], wo, wo);
            }
            let dst = out.channel_mut(ch);
            for r in 0..h {
                self.cols.apply_adjoint(
                    &tmp[r * wo..(r + 1) * wo],
                    &mut dst[r * w..(r + 1) * w],
                    1,
                    1,
                );
            }
        }
        debug_assert_eq!(ho, self.rows.n_out());
        out
    }
}

/// Bicubic resize by an integer factor. Downscaling widens the filter by `sf`
/// (antialiased) and requires both dimensions to be divisible by `sf`.
pub fn bicubic_resize(x: &Image, sf: usize, dir: ResizeDirection) -> Result<Image> {
    if sf == 0 {
        return Err(Error::range("scale factor must be >= 1"));
    }
    let (_, h, w) = x.shape();
    if dir == ResizeDirection::Down && (h % sf != 0 || w % sf != 0) {
        return Err(Error::shape(format!(
            "{h}x{w} image is not divisible by scale factor {sf}"
        )));
    }
    if sf == 1 {
        return Ok(x.clone());
    }
    Ok(Resampler::new(h, w, sf, dir).apply(x))
}

pub(crate) fn bicubic_adjoint(y: &Image, sf: usize, dir: ResizeDirection) -> Image {
    if sf == 1 {
        return y.clone();
    }
    let (_, h, w) = y.shape();
    let (hi, wi) = match dir {
        ResizeDirection::Down => (h * sf, w * sf),
        ResizeDirection::Up => (h / sf, w / sf),
    };
    Resampler::new(hi, wi, sf, dir).apply_adjoint(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(c: usize, h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(c, h, w, |_, _, _| rng.random::<f64>())
    }

    #[test]
    fn cubic_endpoints() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert_eq!(cubic(-1.0), 0.0);
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn unit_factor_is_identity() {
        let x = random_image(2, 5, 7, 1);
        for dir in [ResizeDirection::Down, ResizeDirection::Up] {
            assert_eq!(bicubic_resize(&x, 1, dir).unwrap(), x);
        }
        // the generic path also degenerates to the identity
        let r = Resampler::new(5, 7, 1, ResizeDirection::Down).apply(&x);
        assert!(r.max_abs_diff(&x).unwrap() < 1e-15);
    }

    #[test]
    fn constant_is_preserved() {
        let x = Image::filled(1, 12, 12, 0.3);
        for sf in [2, 3, 4] {
            for dir in [ResizeDirection::Down, ResizeDirection::Up] {
                let y = bicubic_resize(&x, sf, dir).unwrap();
                assert!(y.data().iter().all(|v| (v - 0.3).abs() < 1e-14));
            }
        }
    }

    #[test]
    fn down_requires_divisible_dims() {
        let x = Image::zeros(1, 7, 8);
        assert!(matches!(
            bicubic_resize(&x, 2, ResizeDirection::Down),
            Err(Error::ShapeMismatch(_))
        ));
    }

    /// Explicit matrix from the cubic formula with periodic wrap and
    /// row normalization, built without the tap machinery.
    fn dense_down_matrix(n: usize, sf: usize) -> Vec<Vec<f64>> {
        let s = sf as f64;
        (0..n / sf)
            .map(|i| {
                let u = (i as f64 + 0.5) * s - 0.5;
                let mut row = vec![0.0; n];
                for j in -(4 * n as isize)..(4 * n as isize) {
                    let w = cubic((u - j as f64) / s);
                    row[j.rem_euclid(n as isize) as usize] += w;
                }
                let t: f64 = row.iter().sum();
                row.iter().map(|v| v / t).collect()
            })
            .collect()
    }

    #[test]
    fn ramp_down_matches_dense_matrix() {
        let x = Image::from_fn(1, 8, 8, |_, y, x| (y * 8 + x) as f64 / 63.0);
        let got = bicubic_resize(&x, 2, ResizeDirection::Down).unwrap();
        let m = dense_down_matrix(8, 2);
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for a in 0..8 {
                    for b in 0..8 {
                        acc += m[i][a] * m[j][b] * x.get(0, a, b);
                    }
                }
                assert!((got.get(0, i, j) - acc).abs() < 1e-12);
            }
        }
        let axis = AxisResampler::new(8, 2, ResizeDirection::Down).dense();
        for (r1, r2) in axis.iter().zip(&m) {
            for (a, b) in r1.iter().zip(r2) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn adjoint_identity(seed in any::<u64>(), sf in 1usize..4, up in any::<bool>()) {
            let dir = if up { ResizeDirection::Up } else { ResizeDirection::Down };
            let (h, w) = (4 * sf, 2 * sf);
            let (ih, iw) = if up { (h / sf, w / sf) } else { (h, w) };
            let x = random_image(2, ih, iw, seed);
            let ax = bicubic_resize(&x, sf, dir).unwrap();
            let y = random_image(2, ax.height(), ax.width(), seed ^ 7);
            let aty = bicubic_adjoint(&y, sf, dir);
            prop_assert_eq!(aty.shape(), x.shape());
            let lhs = ax.dot(&y).unwrap();
            let rhs = x.dot(&aty).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
        }
    }
}
