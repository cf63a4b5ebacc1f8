//! Data-consistency subproblem `argmin_x ‖y − H x‖² + ρ ‖x − z‖²`.
//!
//! Closed forms exist for masking, circular blur and blur-plus-decimation.
//! Bicubic super-resolution has no exact closed form and is handled either
//! through the kernel approximation or by back-projection. A single
//! gradient step works for any operator.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::degrade::{
    bicubic_approx_kernel, bicubic_resize, zero_upsample, DegradationModel, DownFilter, Mask,
    Operator, ResizeDirection,
};
use crate::image::{fft2, ifft2_checked, Spectrum};
use crate::{Error, Image, Kernel2D, Result};

/// Relative imaginary residue tolerated after an inverse FFT.
pub const IMAG_TOL: f64 = 1e-6;

/// How super-resolution subproblems are solved when `H` is bicubic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SrSolver {
    /// Closed form with the bicubic blur approximated by a kernel.
    Closed,
    /// Iterative back-projection.
    Ibp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxOptions {
    pub sr: SrSolver,
    pub ibp_gamma: f64,
    pub ibp_iters: usize,
    /// Replace every closed form by one gradient step.
    pub gradient_only: bool,
}

impl Default for ProxOptions {
    fn default() -> Self {
        Self {
            sr: SrSolver::Closed,
            ibp_gamma: 1.0,
            ibp_iters: 5,
            gradient_only: false,
        }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::range(format!(
            "rho must be positive and finite, got {rho}"
        )));
    }
    Ok(())
}

/// `z + (y − z) / (1 + ρ)`.
pub fn prox_identity(y: &Image, z0: &Image, rho: f64) -> Result<Image> {
    check_rho(rho)?;
    z0.zip_map(y, |z, y| z + (y - z) / (1.0 + rho))
}

/// Elementwise `(M y + ρ z) / (M + ρ)`, evaluated as `z + M (y − z) / (M + ρ)`
/// so that dropped pixels return `z` bit-for-bit.
pub fn prox_inpaint(y: &Image, mask: &Mask, z0: &Image, rho: f64) -> Result<Image> {
    check_rho(rho)?;
    mask.check_image(y)?;
    y.ensure_same_shape(z0, "prox_inpaint")?;
    let mut out = z0.clone();
    for c in 0..z0.channels() {
        let yc = y.channel(c);
        for (i, v) in out.channel_mut(c).iter_mut().enumerate() {
            let m = mask.weight(i);
            *v += m * (yc[i] - *v) / (m + rho);
        }
    }
    Ok(out)
}

/// `F⁻¹[(conj(K) F(y) + ρ F(z)) / (|K|² + ρ)]` under periodic boundaries.
pub fn prox_deblur_fft(y: &Image, k: &Kernel2D, z0: &Image, rho: f64) -> Result<Image> {
    check_rho(rho)?;
    y.ensure_same_shape(z0, "prox_deblur_fft")?;
    let (c, h, w) = z0.shape();
    let otf = k.otf(h, w)?;
    let fy = fft2(y);
    let fz = fft2(z0);
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for ((a, b), kf) in fy.channel(ch).iter().zip(fz.channel(ch)).zip(&otf) {
            data.push((kf.conj() * a + rho * b) / (kf.norm_sqr() + rho));
        }
    }
    ifft2_checked(&Spectrum::new(c, h, w, data)?, IMAG_TOL)
}

/// Closed-form solution for `H = S K` (circular blur, then keep every
/// `sf`-th pixel), using the aliasing structure of the decimated spectrum.
pub fn prox_sr_closed(y: &Image, k: &Kernel2D, sf: usize, z0: &Image, rho: f64) -> Result<Image> {
    check_rho(rho)?;
    if sf == 0 {
        return Err(Error::range("scale factor must be >= 1"));
    }
    let (c, h, w) = z0.shape();
    if h % sf != 0 || w % sf != 0 {
        return Err(Error::shape(format!("{h}x{w} is not divisible by {sf}")));
    }
    let (hb, wb) = (h / sf, w / sf);
    if y.shape() != (c, hb, wb) {
        return Err(Error::shape(format!(
            "measurement {:?} does not match {:?} downscaled by {sf}",
            y.shape(),
            (c, h, w)
        )));
    }
    let otf = k.otf(h, w)?;
    let fy = fft2(&zero_upsample(y, sf));
    let fz = fft2(z0);
    let blocks = (sf * sf) as f64;

    // mean over the sf² aliases of each low-resolution frequency
    let alias_mean = |v: &dyn Fn(usize) -> Complex64, r: usize, q: usize| -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for a in 0..sf {
            for b in 0..sf {
                acc += v((a * hb + r) * w + b * wb + q);
            }
        }
        acc / blocks
    };
    let k_energy: Vec<f64> = (0..hb * wb)
        .map(|i| alias_mean(&|j| Complex64::new(otf[j].norm_sqr(), 0.0), i / wb, i % wb).re)
        .collect();

    let mut data = vec![Complex64::new(0.0, 0.0); c * h * w];
    for ch in 0..c {
        let d: Vec<Complex64> = fy
            .channel(ch)
            .iter()
            .zip(fz.channel(ch))
            .zip(&otf)
            .map(|((a, b), kf)| kf.conj() * a + rho * b)
            .collect();
        let mut ratio = vec![Complex64::new(0.0, 0.0); hb * wb];
        for r in 0..hb {
            for q in 0..wb {
                let kd = alias_mean(&|j| otf[j] * d[j], r, q);
                ratio[r * wb + q] = kd / (k_energy[r * wb + q] + rho);
            }
        }
        let out = &mut data[ch * h * w..(ch + 1) * h * w];
        for u in 0..h {
            for v in 0..w {
                let j = u * w + v;
                let t = ratio[(u % hb) * wb + v % wb];
                out[j] = (d[j] - otf[j].conj() * t) / rho;
            }
        }
    }
    ifft2_checked(&Spectrum::new(c, h, w, data)?, IMAG_TOL)
}

/// Iterative back-projection for bicubic super-resolution:
/// `x ← x + γ / (1 + ρ) · up(y − down(x))`, starting from `z`.
pub fn prox_sr_ibp(
    y: &Image,
    sf: usize,
    z0: &Image,
    rho: f64,
    gamma: f64,
    iters: usize,
) -> Result<Image> {
    check_rho(rho)?;
    let step = gamma / (1.0 + rho);
    let mut x = z0.clone();
    for _ in 0..iters {
        let r = y.sub(&bicubic_resize(&x, sf, ResizeDirection::Down)?)?;
        x.add_scaled(&bicubic_resize(&r, sf, ResizeDirection::Up)?, step)?;
    }
    Ok(x)
}

/// One gradient step on the data term: `z + (1/ρ) Hᵀ(y − H z)`.
pub fn prox_gradient_step(
    y: &Image,
    model: &DegradationModel,
    z0: &Image,
    rho: f64,
) -> Result<Image> {
    check_rho(rho)?;
    let r = y.sub(&model.forward(z0)?)?;
    let mut out = z0.clone();
    out.add_scaled(&model.adjoint(&r)?, 1.0 / rho)?;
    Ok(out)
}

/// Dispatches to the solver that fits the operator.
pub fn solve(
    model: &DegradationModel,
    y: &Image,
    z0: &Image,
    rho: f64,
    opts: &ProxOptions,
) -> Result<Image> {
    if opts.gradient_only {
        return prox_gradient_step(y, model, z0, rho);
    }
    match model.operator() {
        Operator::Identity => prox_identity(y, z0, rho),
        Operator::Blur(k) => prox_deblur_fft(y, k, z0, rho),
        Operator::Inpaint(m) => prox_inpaint(y, m, z0, rho),
        Operator::Downsample { sf, filter } => match filter {
            DownFilter::Kernel(k) => prox_sr_closed(y, k, *sf, z0, rho),
            DownFilter::Bicubic => match opts.sr {
                SrSolver::Closed => prox_sr_closed(y, &bicubic_approx_kernel(*sf)?, *sf, z0, rho),
                SrSolver::Ibp => prox_sr_ibp(y, *sf, z0, rho, opts.ibp_gamma, opts.ibp_iters),
            },
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{gaussian_kernel, motion_kernel, BoxSpec};
    use crate::oracle::{
        blur_matrix, decimation_matrix, dense_objective, dense_prox, mask_matrix, DenseMatrix,
    };
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(c: usize, h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(c, h, w, |_, _, _| rng.random::<f64>())
    }

    fn random_kernel(size: usize, seed: u64) -> Kernel2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = (0..size * size).map(|_| rng.random::<f64>()).collect();
        Kernel2D::new(size, size, w).unwrap().normalized().unwrap()
    }

    #[test]
    fn deblur_matches_dense_oracle() {
        for (seed, ks) in [(1u64, 3usize), (2, 5), (3, 4)] {
            let k = random_kernel(ks, seed);
            let x = random_image(2, 8, 6, seed);
            let y = random_image(2, 8, 6, seed + 100);
            let rho = 0.3;
            let fast = prox_deblur_fft(&y, &k, &x, rho).unwrap();
            let dense = dense_prox(&blur_matrix(&k, 8, 6).unwrap(), &y, &x, rho).unwrap();
            assert!(fast.max_abs_diff(&dense).unwrap() < 1e-10);
        }
    }

    #[test]
    fn sr_closed_matches_dense_oracle() {
        for (sf, h, w, ks) in [
            (2usize, 8usize, 8usize, 3usize),
            (3, 9, 6, 5),
            (2, 6, 10, 4),
        ] {
            let k = random_kernel(ks, sf as u64);
            let hm = decimation_matrix(h, w, sf)
                .unwrap()
                .mul(&blur_matrix(&k, h, w).unwrap());
            let z = random_image(2, h, w, 11);
            let y = random_image(2, h / sf, w / sf, 12);
            for rho in [0.01, 0.7, 5.0] {
                let fast = prox_sr_closed(&y, &k, sf, &z, rho).unwrap();
                let dense = dense_prox(&hm, &y, &z, rho).unwrap();
                assert!(
                    fast.max_abs_diff(&dense).unwrap() < 1e-9,
                    "sf={sf} rho={rho}"
                );
            }
        }
    }

    #[test]
    fn inpaint_matches_dense_oracle_and_literal_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Mask::random(6, 5, 0.4, &mut rng).unwrap();
        let z = random_image(3, 6, 5, 1);
        let y = m.apply(&random_image(3, 6, 5, 2)).unwrap();
        let fast = prox_inpaint(&y, &m, &z, 0.2).unwrap();
        let dense = dense_prox(&mask_matrix(&m).unwrap(), &y, &z, 0.2).unwrap();
        assert!(fast.max_abs_diff(&dense).unwrap() < 1e-12);
        for c in 0..3 {
            for i in 0..30 {
                let mw = m.weight(i);
                let lit = (mw * y.channel(c)[i] + 0.2 * z.channel(c)[i]) / (mw + 0.2);
                assert!((fast.channel(c)[i] - lit).abs() <= 4.0 * f64::EPSILON);
                if mw == 0.0 {
                    assert_eq!(fast.channel(c)[i], z.channel(c)[i]);
                }
            }
        }
    }

    #[test]
    fn identity_matches_dense_oracle() {
        let z = random_image(1, 4, 4, 1);
        let y = random_image(1, 4, 4, 2);
        let fast = prox_identity(&y, &z, 2.5).unwrap();
        let dense = dense_prox(&DenseMatrix::identity(16), &y, &z, 2.5).unwrap();
        assert!(fast.max_abs_diff(&dense).unwrap() < 1e-14);
    }

    #[test]
    fn consistent_point_is_fixed() {
        let x = random_image(3, 16, 16, 3);
        let k = gaussian_kernel(5, 1.2).unwrap();
        let blur = DegradationModel::new(Operator::Blur(k.clone()), 0.0).unwrap();
        let y = blur.forward(&x).unwrap();
        for rho in [1e-3, 1.0, 1e3] {
            assert!(
                prox_deblur_fft(&y, &k, &x, rho)
                    .unwrap()
                    .max_abs_diff(&x)
                    .unwrap()
                    < 1e-12
            );
        }
        let sr = DegradationModel::new(
            Operator::Downsample {
                sf: 4,
                filter: DownFilter::Kernel(k.clone()),
            },
            0.0,
        )
        .unwrap();
        let ys = sr.forward(&x).unwrap();
        assert!(
            prox_sr_closed(&ys, &k, 4, &x, 0.5)
                .unwrap()
                .max_abs_diff(&x)
                .unwrap()
                < 1e-12
        );
        let m = Mask::boxed(
            16,
            16,
            BoxSpec {
                height: 4,
                width: 6,
                offset: None,
            },
        )
        .unwrap();
        let yi = m.apply(&x).unwrap();
        assert_eq!(prox_inpaint(&yi, &m, &x, 0.1).unwrap(), x);
        let yb = bicubic_resize(&x, 2, ResizeDirection::Down).unwrap();
        assert!(
            prox_sr_ibp(&yb, 2, &x, 0.1, 1.0, 5)
                .unwrap()
                .max_abs_diff(&x)
                .unwrap()
                < 1e-14
        );
    }

    fn all_models(h: usize, w: usize) -> Vec<DegradationModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        vec![
            DegradationModel::identity(0.05).unwrap(),
            DegradationModel::new(
                Operator::Blur(motion_kernel(5, 0.5, &mut rng).unwrap()),
                0.05,
            )
            .unwrap(),
            DegradationModel::new(
                Operator::Inpaint(Mask::random(h, w, 0.5, &mut rng).unwrap()),
                0.0,
            )
            .unwrap(),
            DegradationModel::new(
                Operator::Downsample {
                    sf: 2,
                    filter: DownFilter::Kernel(gaussian_kernel(3, 0.8).unwrap()),
                },
                0.05,
            )
            .unwrap(),
            DegradationModel::new(
                Operator::Downsample {
                    sf: 2,
                    filter: DownFilter::Bicubic,
                },
                0.0,
            )
            .unwrap(),
        ]
    }

    #[test]
    fn large_rho_returns_z() {
        let z = random_image(2, 16, 16, 5);
        for model in all_models(16, 16) {
            let y = random_image(2, 16, 16, 6);
            let y = if matches!(model.operator(), Operator::Downsample { .. }) {
                bicubic_resize(&y, 2, ResizeDirection::Down).unwrap()
            } else {
                y
            };
            for opts in [
                ProxOptions::default(),
                ProxOptions {
                    sr: SrSolver::Ibp,
                    ..Default::default()
                },
                ProxOptions {
                    gradient_only: true,
                    ..Default::default()
                },
            ] {
                let x = solve(&model, &y, &z, 1e9, &opts).unwrap();
                assert!(x.max_abs_diff(&z).unwrap() < 1e-5, "{}", model.kind_name());
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let z = Image::zeros(1, 8, 8);
        let k = Kernel2D::delta();
        assert!(prox_deblur_fft(&z, &k, &z, 0.0).is_err());
        assert!(prox_deblur_fft(&z, &k, &z, f64::NAN).is_err());
        assert!(prox_deblur_fft(&Image::zeros(1, 8, 7), &k, &z, 1.0).is_err());
        assert!(prox_sr_closed(&Image::zeros(1, 3, 4), &k, 2, &z, 1.0).is_err());
        assert!(prox_deblur_fft(&z, &random_kernel(9, 1), &z, 1.0).is_err());
    }

    #[test]
    fn ibp_residual_does_not_grow() {
        let x = random_image(1, 16, 16, 8);
        let y = bicubic_resize(&random_image(1, 16, 16, 9), 2, ResizeDirection::Down).unwrap();
        let mut prev = f64::INFINITY;
        for iters in 0..8 {
            let xi = prox_sr_ibp(&y, 2, &x, 0.2, 1.0, iters).unwrap();
            let r = y
                .sub(&bicubic_resize(&xi, 2, ResizeDirection::Down).unwrap())
                .unwrap()
                .norm();
            assert!(r <= prev + 1e-12, "iteration {iters}: {r} > {prev}");
            prev = r;
        }
    }

    #[test]
    fn gradient_step_matches_finite_differences() {
        // data term f(z) = ‖y − H z‖²; the step direction is −∇f / 2
        let h = 16;
        for model in all_models(h, h) {
            let z = random_image(1, h, h, 30);
            let y = model.forward(&random_image(1, h, h, 31)).unwrap();
            let f = |x: &Image| y.sub(&model.forward(x).unwrap()).unwrap().norm_sq();
            let step = prox_gradient_step(&y, &model, &z, 1.0)
                .unwrap()
                .sub(&z)
                .unwrap();
            let eps = 1e-6;
            for i in [0usize, 9, 27, 63, 200] {
                let mut zp = z.clone();
                zp.data_mut()[i] += eps;
                let mut zm = z.clone();
                zm.data_mut()[i] -= eps;
                let g = (f(&zp) - f(&zm)) / (2.0 * eps);
                let err = (-g / 2.0 - step.data()[i]).abs();
                assert!(err < 1e-5 * (1.0 + g.abs()), "{}: {err}", model.kind_name());
            }
        }
    }

    #[test]
    fn scalar_inpaint_values() {
        let m = Mask::new(1, 2, vec![true, false]).unwrap();
        let y = Image::from_vec(1, 1, 2, vec![0.5, 0.0]).unwrap();
        let z = Image::from_vec(1, 1, 2, vec![0.3, 0.7]).unwrap();
        let x = prox_inpaint(&y, &m, &z, 1.0).unwrap();
        assert!((x.data()[0] - 0.4).abs() < 1e-15);
        assert_eq!(x.data()[1], 0.7);
        let all = Mask::all_keep(4, 4).unwrap();
        let y = random_image(2, 4, 4, 1);
        let x = prox_inpaint(&y, &all, &random_image(2, 4, 4, 2), 1e-12).unwrap();
        assert!(x.max_abs_diff(&y).unwrap() < 1e-9);
    }

    #[test]
    fn delta_kernel_and_unit_factor_degenerate() {
        let y = random_image(3, 8, 8, 1);
        let z = random_image(3, 8, 8, 2);
        let rho = 0.7;
        let x = prox_deblur_fft(&y, &Kernel2D::delta(), &z, rho).unwrap();
        let want = y.zip_map(&z, |a, b| (a + rho * b) / (1.0 + rho)).unwrap();
        assert!(x.max_abs_diff(&want).unwrap() < 1e-14);
        let k = random_kernel(3, 4);
        let a = prox_sr_closed(&y, &k, 1, &z, rho).unwrap();
        let b = prox_deblur_fft(&y, &k, &z, rho).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-10);
    }

    #[test]
    fn constants_are_fixed_points() {
        let c = Image::filled(2, 8, 8, 0.37);
        let k = random_kernel(3, 9);
        let x = prox_deblur_fft(&c, &k, &c, 0.2).unwrap();
        assert!(x.data().iter().all(|v| (v - 0.37).abs() < 1e-14));
        let yc = Image::filled(2, 4, 4, 0.37);
        let x = prox_sr_closed(&yc, &k, 2, &c, 0.2).unwrap();
        assert!(x.data().iter().all(|v| (v - 0.37).abs() < 1e-14));
    }

    #[test]
    fn ibp_zero_step_and_gradient_examples() {
        let z = random_image(1, 8, 8, 3);
        let y = random_image(1, 4, 4, 4);
        assert_eq!(prox_sr_ibp(&y, 2, &z, 0.5, 0.0, 5).unwrap(), z);
        let id = DegradationModel::identity(0.0).unwrap();
        let one = Image::filled(1, 1, 1, 1.0);
        let x = prox_gradient_step(&one, &id, &Image::zeros(1, 1, 1), 1.0).unwrap();
        assert_eq!(x.data(), &[1.0]);
        for model in all_models(16, 16) {
            let z = random_image(1, 16, 16, 5);
            let y = model.forward(&z).unwrap();
            let x = prox_gradient_step(&y, &model, &z, 0.3).unwrap();
            assert!(x.max_abs_diff(&z).unwrap() < 1e-12, "{}", model.kind_name());
        }
    }

    #[test]
    fn solvers_reduce_objective_from_z() {
        // the gradient step is a descent step once ρ exceeds ‖H‖², which is at
        // most one for the normalized operators used here
        let (h, w) = (8, 8);
        let k = random_kernel(3, 12);
        let blur = DegradationModel::new(Operator::Blur(k.clone()), 0.0).unwrap();
        let sr = DegradationModel::new(
            Operator::Downsample {
                sf: 2,
                filter: DownFilter::Kernel(k.clone()),
            },
            0.0,
        )
        .unwrap();
        let z = random_image(1, h, w, 13);
        for rho in [1.5, 4.0, 20.0] {
            let y = random_image(1, h, w, 14);
            let hm = blur_matrix(&k, h, w).unwrap();
            let base = dense_objective(&hm, &y, &z, &z, rho);
            for x in [
                prox_deblur_fft(&y, &k, &z, rho).unwrap(),
                prox_gradient_step(&y, &blur, &z, rho).unwrap(),
            ] {
                assert!(dense_objective(&hm, &y, &x, &z, rho) < base);
            }
            let ys = random_image(1, h / 2, w / 2, 15);
            let hm = decimation_matrix(h, w, 2)
                .unwrap()
                .mul(&blur_matrix(&k, h, w).unwrap());
            let base = dense_objective(&hm, &ys, &z, &z, rho);
            for x in [
                prox_sr_closed(&ys, &k, 2, &z, rho).unwrap(),
                prox_gradient_step(&ys, &sr, &z, rho).unwrap(),
            ] {
                assert!(dense_objective(&hm, &ys, &x, &z, rho) < base);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn perturbation_increases_objective(seed in any::<u64>(), rho in 0.05f64..5.0, which in 0usize..3) {
            let (h, w) = (6, 6);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = random_kernel(3, seed);
            let z = random_image(1, h, w, seed ^ 1);
            let (hm, y, x) = match which {
                0 => {
                    let y = random_image(1, h, w, seed ^ 2);
                    (blur_matrix(&k, h, w).unwrap(), y.clone(), prox_deblur_fft(&y, &k, &z, rho).unwrap())
                }
                1 => {
                    let m = Mask::random(h, w, 0.5, &mut rng).unwrap();
                    let y = m.apply(&random_image(1, h, w, seed ^ 2)).unwrap();
                    (mask_matrix(&m).unwrap(), y.clone(), prox_inpaint(&y, &m, &z, rho).unwrap())
                }
                _ => {
                    let y = random_image(1, h / 2, w / 2, seed ^ 2);
                    let hm = decimation_matrix(h, w, 2).unwrap().mul(&blur_matrix(&k, h, w).unwrap());
                    (hm, y.clone(), prox_sr_closed(&y, &k, 2, &z, rho).unwrap())
                }
            };
            let base = dense_objective(&hm, &y, &x, &z, rho);
            let mut d = Image::standard_normal(1, h, w, &mut rng);
            d = d.scaled(1e-3 / d.norm());
            let bumped = x.add(&d).unwrap();
            prop_assert!(dense_objective(&hm, &y, &bumped, &z, rho) > base);
        }
    }
}
