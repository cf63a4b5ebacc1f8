//! Dense reference constructions for verifying the fast solvers.
//!
//! Everything here builds operators as explicit matrices straight from their
//! definitions (periodic index arithmetic, the cubic formula) and solves the
//! normal equations by Gaussian elimination. Memory is `O((h*w)^2)`, so these
//! are only meant for images of a few hundred pixels.

use crate::degrade::{cubic, Mask};
use crate::{Error, Image, Kernel2D, Result};

/// Largest plane (in pixels) the dense routines accept.
pub const MAX_DENSE_PIXELS: usize = 1024;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn mul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.at(k, j);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.at(i, j) * v[j]).sum())
            .collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                *out.at_mut(j, i) = self.at(i, j);
            }
        }
        out
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows * other.rows, self.cols * other.cols);
        for a in 0..self.rows {
            for b in 0..self.cols {
                let s = self.at(a, b);
                for c in 0..other.rows {
                    for d in 0..other.cols {
                        *out.at_mut(a * other.rows + c, b * other.cols + d) = s * other.at(c, d);
                    }
                }
            }
        }
        out
    }
}

fn check_size(n: usize) -> Result<()> {
    if n > MAX_DENSE_PIXELS {
        return Err(Error::range(format!(
            "dense oracle limited to {MAX_DENSE_PIXELS} pixels, got {n}"
        )));
    }
    Ok(())
}

/// Circulant blur matrix: output pixel `(i, j)` gathers
/// `k[a][b] * x[(i - a + ca) mod h][(j - b + cb) mod w]`.
pub fn blur_matrix(k: &Kernel2D, h: usize, w: usize) -> Result<DenseMatrix> {
    check_size(h * w)?;
    let (ca, cb) = (k.height() / 2, k.width() / 2);
    let mut m = DenseMatrix::zeros(h * w, h * w);
    for i in 0..h {
        for j in 0..w {
            for a in 0..k.height() {
                for b in 0..k.width() {
                    let si =
                        (i as isize - a as isize + ca as isize).rem_euclid(h as isize) as usize;
                    let sj =
                        (j as isize - b as isize + cb as isize).rem_euclid(w as isize) as usize;
                    *m.at_mut(i * w + j, si * w + sj) += k.get(a, b);
                }
            }
        }
    }
    Ok(m)
}

/// Keeps pixel `(sf * i, sf * j)`.
pub fn decimation_matrix(h: usize, w: usize, sf: usize) -> Result<DenseMatrix> {
    check_size(h * w)?;
    let (ho, wo) = (h / sf, w / sf);
    let mut m = DenseMatrix::zeros(ho * wo, h * w);
    for i in 0..ho {
        for j in 0..wo {
            *m.at_mut(i * wo + j, (i * sf) * w + j * sf) = 1.0;
        }
    }
    Ok(m)
}

/// One axis of periodic, normalized bicubic downscaling by `sf`.
pub fn bicubic_down_axis(n: usize, sf: usize) -> DenseMatrix {
    let s = sf as f64;
    let mut m = DenseMatrix::zeros(n / sf, n);
    for i in 0..n / sf {
        let u = (i as f64 + 0.5) * s - 0.5;
        let mut row = vec![0.0; n];
        for j in -(4 * n as isize)..(4 * n as isize) {
            row[j.rem_euclid(n as isize) as usize] += cubic((u - j as f64) / s);
        }
        let total: f64 = row.iter().sum();
        for (j, v) in row.into_iter().enumerate() {
            *m.at_mut(i, j) = v / total;
        }
    }
    m
}

pub fn bicubic_down_matrix(h: usize, w: usize, sf: usize) -> Result<DenseMatrix> {
    check_size(h * w)?;
    Ok(bicubic_down_axis(h, sf).kron(&bicubic_down_axis(w, sf)))
}

/// One axis of periodic bicubic upscaling by `sf`.
pub fn bicubic_up_axis(n: usize, sf: usize) -> DenseMatrix {
    let s = sf as f64;
    let mut m = DenseMatrix::zeros(n * sf, n);
    for i in 0..n * sf {
        let u = (i as f64 + 0.5) / s - 0.5;
        let mut row = vec![0.0; n];
        for j in -(4 * n as isize)..(4 * n as isize) {
            row[j.rem_euclid(n as isize) as usize] += cubic(u - j as f64);
        }
        let total: f64 = row.iter().sum();
        for (j, v) in row.into_iter().enumerate() {
            *m.at_mut(i, j) = v / total;
        }
    }
    m
}

pub fn bicubic_up_matrix(h: usize, w: usize, sf: usize) -> Result<DenseMatrix> {
    check_size(h * w * sf * sf)?;
    Ok(bicubic_up_axis(h, sf).kron(&bicubic_up_axis(w, sf)))
}

pub fn mask_matrix(mask: &Mask) -> Result<DenseMatrix> {
    let n = mask.height() * mask.width();
    check_size(n)?;
    let mut m = DenseMatrix::zeros(n, n);
    for i in 0..n {
        *m.at_mut(i, i) = mask.weight(i);
    }
    Ok(m)
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows;
    if a.cols != n || b.len() != n {
        return Err(Error::shape("solve needs a square system"));
    }
    let mut m = a.data.clone();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .unwrap();
        if m[pivot * n + col].abs() < 1e-300 {
            return Err(Error::NumericalInstability("singular system".into()));
        }
        if pivot != col {
            for k in 0..n {
                m.swap(col * n + k, pivot * n + k);
            }
            rhs.swap(col, pivot);
        }
        let p = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / p;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[r * n + k] -= f * m[col * n + k];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r * n + k] * x[k]).sum();
        x[r] = (rhs[r] - s) / m[r * n + r];
    }
    Ok(x)
}

/// Minimizer of `‖y − H x‖² + ρ ‖x − z‖²`, one channel at a time.
pub fn dense_prox(h: &DenseMatrix, y: &Image, z: &Image, rho: f64) -> Result<Image> {
    let ht = h.transpose();
    let mut normal = ht.mul(h);
    for i in 0..normal.rows {
        *normal.at_mut(i, i) += rho;
    }
    let mut out = z.clone();
    for c in 0..z.channels() {
        let hty = ht.mul_vec(y.channel(c));
        let rhs: Vec<f64> = hty
            .iter()
            .zip(z.channel(c))
            .map(|(a, b)| a + rho * b)
            .collect();
        let x = solve(&normal, &rhs)?;
        out.channel_mut(c).copy_from_slice(&x);
    }
    Ok(out)
}

/// `‖y − H x‖² + ρ ‖x − z‖²` summed over channels.
pub fn dense_objective(h: &DenseMatrix, y: &Image, x: &Image, z: &Image, rho: f64) -> f64 {
    let mut total = 0.0;
    for c in 0..x.channels() {
        let hx = h.mul_vec(x.channel(c));
        total += hx
            .iter()
            .zip(y.channel(c))
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>();
        total += rho
            * x.channel(c)
                .iter()
                .zip(z.channel(c))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
    }
    total
}

/// Applies a dense per-channel operator to an image.
pub fn dense_apply(h: &DenseMatrix, x: &Image, out_h: usize, out_w: usize) -> Image {
    let mut out = Image::zeros(x.channels(), out_h, out_w);
    for c in 0..x.channels() {
        let v = h.mul_vec(x.channel(c));
        out.channel_mut(c).copy_from_slice(&v);
    }
    out
}
