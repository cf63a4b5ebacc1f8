//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use diffpir::degrade::{gaussian_kernel, BoxSpec, DownFilter, Mask, Operator};
use diffpir::denoise::{
    gaussian_score, gmm_score, oracle_denoiser, GaussianPrior, GmmComponent, GmmPrior, PriorMean,
};
use diffpir::oracle::{blur_matrix, decimation_matrix, dense_prox};
use diffpir::prox::{prox_deblur_fft, prox_gradient_step, prox_inpaint, prox_sr_closed};
use diffpir::sample::{
    ddpm_update, hqs_prior_step, run, run_ddpm, DdpmVariance, SamplerConfig, SamplerKind,
};
use diffpir::schedule::NoiseSchedule;
use diffpir::{degrade::DegradationModel, psnr, Image, Kernel2D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_image(c: usize, h: usize, w: usize, r: &mut ChaCha8Rng) -> Image {
    Image::from_fn(c, h, w, |_, _, _| r.random::<f64>())
}

fn random_kernel(size: usize, r: &mut ChaCha8Rng) -> Kernel2D {
    let w = (0..size * size).map(|_| r.random::<f64>() + 0.05).collect();
    Kernel2D::new(size, size, w).unwrap().normalized().unwrap()
}

fn rel_err(a: &Image, b: &Image) -> f64 {
    let scale = b
        .data()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    a.max_abs_diff(b).unwrap() / scale
}

fn prox_oracle() -> Outcome {
    let (c, h, w) = (3, 8, 8);
    let mut r = rng(100);
    let (mut worst_blur, mut worst_sr) = (0.0f64, 0.0f64);
    let mut inpaint_exact = true;
    let instances = 20;
    for i in 0..instances {
        let rho = 10f64.powf(r.random_range(-2.0..2.0));
        let z = uniform_image(c, h, w, &mut r);

        let k = random_kernel(3 + i % 3, &mut r);
        let y = uniform_image(c, h, w, &mut r);
        let hm = blur_matrix(&k, h, w).unwrap();
        let fast = prox_deblur_fft(&y, &k, &z, rho).unwrap();
        worst_blur = worst_blur.max(rel_err(&fast, &dense_prox(&hm, &y, &z, rho).unwrap()));

        let k = random_kernel(3 + i % 2, &mut r);
        let ys = uniform_image(c, h / 2, w / 2, &mut r);
        let hm = decimation_matrix(h, w, 2)
            .unwrap()
            .mul(&blur_matrix(&k, h, w).unwrap());
        let fast = prox_sr_closed(&ys, &k, 2, &z, rho).unwrap();
        worst_sr = worst_sr.max(rel_err(&fast, &dense_prox(&hm, &ys, &z, rho).unwrap()));

        let mask = Mask::random(h, w, 0.5, &mut r).unwrap();
        let got = prox_inpaint(&y, &mask, &z, rho).unwrap();
        for ch in 0..c {
            for p in 0..h * w {
                let (yv, zv) = (y.channel(ch)[p], z.channel(ch)[p]);
                let g = got.channel(ch)[p];
                let ok = if mask.keep()[p] {
                    let want = (yv + rho * zv) / (1.0 + rho);
                    (g - want).abs() <= 4.0 * f64::EPSILON * (yv.abs() + zv.abs())
                } else {
                    g.to_bits() == zv.to_bits()
                };
                inpaint_exact &= ok;
            }
        }
    }
    let pass = worst_blur < 1e-8 && worst_sr < 1e-8 && inpaint_exact;
    outcome(
        pass,
        format!(
            "{instances} instances each: deblur rel {worst_blur:.2e}, sr rel {worst_sr:.2e}, \
             inpaint elementwise {}",
            if inpaint_exact { "exact" } else { "mismatch" }
        ),
    )
}

fn central_fd(x: &Image, h: f64, mut f: impl FnMut(&Image) -> f64) -> Image {
    let mut g = Image::zeros(x.channels(), x.height(), x.width());
    for i in 0..x.len() {
        let mut p = x.clone();
        p.data_mut()[i] += h;
        let mut m = x.clone();
        m.data_mut()[i] -= h;
        g.data_mut()[i] = (f(&p) - f(&m)) / (2.0 * h);
    }
    g
}

fn rel_norm_err(a: &Image, b: &Image) -> f64 {
    a.sub(b).unwrap().norm() / b.norm().max(1e-300)
}

fn gradient_checks() -> Outcome {
    let mut r = rng(200);
    let (h, w) = (8, 8);
    let models = [
        DegradationModel::identity(0.05).unwrap(),
        DegradationModel::new(Operator::Blur(random_kernel(3, &mut r)), 0.05).unwrap(),
        DegradationModel::new(
            Operator::Inpaint(Mask::random(h, w, 0.4, &mut r).unwrap()),
            0.05,
        )
        .unwrap(),
        DegradationModel::new(
            Operator::Downsample {
                sf: 2,
                filter: DownFilter::Kernel(random_kernel(3, &mut r)),
            },
            0.05,
        )
        .unwrap(),
        DegradationModel::new(
            Operator::Downsample {
                sf: 2,
                filter: DownFilter::Bicubic,
            },
            0.05,
        )
        .unwrap(),
    ];
    let mut worst_prox = 0.0f64;
    for m in &models {
        let z = uniform_image(1, h, w, &mut r);
        let (c, mh, mw) = m.measurement_shape((1, h, w)).unwrap();
        let y = uniform_image(c, mh, mw, &mut r);
        let rho = 1.0;
        let step = prox_gradient_step(&y, m, &z, rho).unwrap();
        let analytic = z.sub(&step).unwrap().scaled(rho);
        let fd = central_fd(&z, 1e-5, |x| {
            0.5 * y.sub(&m.forward(x).unwrap()).unwrap().norm_sq()
        });
        worst_prox = worst_prox.max(rel_norm_err(&analytic, &fd));
    }

    let s = NoiseSchedule::default();
    let gauss = GaussianPrior::scalar(0.4, 0.05).unwrap();
    let gmm = toy_gmm();
    let (mut worst_g, mut worst_m) = (0.0f64, 0.0f64);
    for t in [1, 50, 300, 700, 1000] {
        let x = uniform_image(1, h, w, &mut r);
        let sc = gaussian_score(&gauss, &x, t, &s).unwrap();
        let fd = central_fd(&x, 1e-4, |v| gauss.log_density(v, t, &s).unwrap());
        worst_g = worst_g.max(rel_norm_err(&sc, &fd));
        let sc = gmm_score(&gmm, &x, t, &s).unwrap();
        let fd = central_fd(&x, 1e-5, |v| gmm.log_density(v, t, &s).unwrap());
        worst_m = worst_m.max(rel_norm_err(&sc, &fd));
    }
    let pass = worst_prox < 1e-5 && worst_g < 1e-6 && worst_m < 1e-5;
    outcome(
        pass,
        format!(
            "data-term rel {worst_prox:.2e} over {} operators, gaussian score rel {worst_g:.2e}, \
             gmm score rel {worst_m:.2e}",
            models.len()
        ),
    )
}

fn hqs_equivalence() -> Outcome {
    let s = NoiseSchedule::default();
    let mut r = rng(300);
    let mut worst = 0.0f64;
    let n = 1000;
    for _ in 0..n {
        let t = r.random_range(1..=s.n_train());
        let pick = |r: &mut ChaCha8Rng| Image::standard_normal(1, 1, 1, r).scaled(2.0);
        let (x, score, noise) = (pick(&mut r), pick(&mut r), pick(&mut r));
        let ab = s.alpha_bar(t).unwrap();
        let eps = score.scaled(-(1.0 - ab).sqrt());
        let a = hqs_prior_step(&x, &score, t, &s, &noise).unwrap();
        let b = ddpm_update(&x, &eps, t, &s, DdpmVariance::Beta, Some(&noise)).unwrap();
        let d = (a.data()[0] - b.data()[0]).abs() / b.data()[0].abs().max(1.0);
        worst = worst.max(d);
    }
    outcome(
        worst <= 1e-12,
        format!("{n} scalar instances, max error {worst:.2e}"),
    )
}

fn distribution_fidelity() -> Outcome {
    let s = NoiseSchedule::default();
    let (m, v) = (0.3, 0.04);
    let mut prior = GaussianPrior::scalar(m, v).unwrap();
    let (out, traj) = run_ddpm(
        (1, 100, 100),
        &mut prior,
        &s,
        1000,
        DdpmVariance::Beta,
        &mut rng(400),
    )
    .unwrap();
    let n = out.len() as f64;
    let mean = out.mean();
    let var = out.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    let se_mean = std / n.sqrt();
    let se_std = std / (2.0 * (n - 1.0)).sqrt();
    let zm = (mean - m).abs() / se_mean;
    let zs = (std - v.sqrt()).abs() / se_std;
    outcome(
        zm <= 3.0 && zs <= 3.0 && traj.nfe == 1000,
        format!(
            "{} chains: mean {mean:.5} ({zm:.2} SE), std {std:.5} ({zs:.2} SE), target {m} / {:.5}",
            out.len(),
            v.sqrt()
        ),
    )
}

fn exact_recovery() -> Outcome {
    let s = NoiseSchedule::default();
    let mut r = rng(500);
    let x_true = uniform_image(3, 64, 64, &mut r);
    let spec = BoxSpec {
        height: 32,
        width: 32,
        offset: None,
    };
    let model =
        DegradationModel::new(Operator::Inpaint(Mask::boxed(64, 64, spec).unwrap()), 0.0).unwrap();
    let y = model.forward(&x_true).unwrap();
    let mut d = oracle_denoiser(x_true.clone());
    let cfg = SamplerConfig {
        zeta: 0.0,
        steps: 20,
        ..Default::default()
    };
    let (out, traj) = run(&y, &model, &mut d, &s, &cfg).unwrap();
    let p = psnr(&out, &x_true).unwrap();
    let diff = out.max_abs_diff(&x_true).unwrap();
    outcome(
        p.is_infinite() && diff <= 1e-9 && traj.nfe == 20,
        format!("64x64 box inpainting, 20 steps: PSNR {p}, max pixel error {diff:.1e}"),
    )
}

fn nfe_budget() -> Outcome {
    let s = NoiseSchedule::default();
    let model =
        DegradationModel::new(Operator::Blur(gaussian_kernel(5, 1.0).unwrap()), 0.05).unwrap();
    let mut r = rng(600);
    let x = uniform_image(3, 16, 16, &mut r);
    let y = diffpir::degrade::apply(&model, &x, &mut r).unwrap();
    let mut prior = GaussianPrior::scalar(0.5, 0.08).unwrap();
    let cfg = SamplerConfig {
        steps: 100,
        ..Default::default()
    };
    let (_, traj) = run(&y, &model, &mut prior, &s, &cfg).unwrap();
    outcome(
        traj.nfe == 100 && traj.records.len() == 100,
        format!("100-step run reported {} evaluations", traj.nfe),
    )
}

const TOY: usize = 8;

fn toy_gmm() -> GmmPrior {
    let pattern = |f: fn(usize, usize) -> f64| Image::from_fn(1, TOY, TOY, |_, i, j| f(i, j));
    let means = [
        pattern(|i, j| if (i / 2 + j / 2) % 2 == 0 { 0.8 } else { 0.2 }),
        pattern(|i, _| i as f64 / (TOY - 1) as f64),
        pattern(|i, j| if i.abs_diff(j) <= 1 { 0.9 } else { 0.3 }),
    ];
    GmmPrior::new(
        means
            .into_iter()
            .map(|m| GmmComponent {
                weight: 1.0 / 3.0,
                mean: PriorMean::Image(m),
                variance: 0.01,
            })
            .collect(),
    )
    .unwrap()
}

fn toy_rmse(model: &DegradationModel, cfg: &SamplerConfig, seeds: u64) -> f64 {
    let s = NoiseSchedule::default();
    let mut prior = toy_gmm();
    let mut total = 0.0;
    for seed in 0..seeds {
        let mut r = rng(10_000 + seed);
        let x = prior.sample(1, TOY, TOY, &mut r).unwrap();
        let y = diffpir::degrade::apply(model, &x, &mut r).unwrap();
        let cfg = SamplerConfig {
            seed,
            ..cfg.clone()
        };
        let (out, _) = run(&y, model, &mut prior, &s, &cfg).unwrap();
        total += out.mse(&x).unwrap().sqrt();
    }
    total / seeds as f64
}

fn ablation_trends() -> Outcome {
    let seeds = 100;
    let sr = DegradationModel::new(
        Operator::Downsample {
            sf: 2,
            filter: DownFilter::Kernel(gaussian_kernel(3, 0.8).unwrap()),
        },
        0.05,
    )
    .unwrap();
    let base = SamplerConfig {
        kind: SamplerKind::DiffPir,
        lambda: 1.0,
        zeta: 0.3,
        ..Default::default()
    };
    let e100 = toy_rmse(
        &sr,
        &SamplerConfig {
            steps: 100,
            ..base.clone()
        },
        seeds,
    );
    let e10 = toy_rmse(
        &sr,
        &SamplerConfig {
            steps: 10,
            ..base.clone()
        },
        seeds,
    );

    let blur =
        DegradationModel::new(Operator::Blur(gaussian_kernel(5, 1.2).unwrap()), 0.05).unwrap();
    let full = toy_rmse(
        &blur,
        &SamplerConfig {
            steps: 100,
            ..base.clone()
        },
        seeds,
    );
    let short = toy_rmse(
        &blur,
        &SamplerConfig {
            steps: 100,
            t_start: 400,
            ..base
        },
        seeds,
    );
    let pass = e100 <= e10 && short <= 1.1 * full;
    outcome(
        pass,
        format!(
            "{seeds} seeds: SR rmse 100 steps {e100:.4} vs 10 steps {e10:.4}; deblur rmse \
             t_start 400 {short:.4} vs 1000 {full:.4} (ratio {:.3})",
            short / full
        ),
    )
}

/// Double-double value `hi + lo`.
#[derive(Clone, Copy)]
struct Dd(f64, f64);

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

impl Dd {
    fn mul(self, o: Dd) -> Dd {
        let p = self.0 * o.0;
        let e = self.0.mul_add(o.0, -p);
        let (hi, lo) = two_sum(p, e + self.0 * o.1 + self.1 * o.0);
        Dd(hi, lo)
    }

    fn one_minus(b: f64) -> Dd {
        let (hi, lo) = two_sum(1.0, -b);
        Dd(hi, lo)
    }
}

fn schedule_constants() -> Outcome {
    let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let mut prod = Dd(1.0, 0.0);
    for i in 0..1000 {
        let beta = 1e-4 + (0.02 - 1e-4) * i as f64 / 999.0;
        prod = prod.mul(Dd::one_minus(beta));
    }
    let oracle = prod.0 + prod.1;
    let got = s.alpha_bar(1000).unwrap();
    let rel = (got - oracle).abs() / oracle;
    outcome(
        rel <= 1e-8,
        format!("alpha_bar_N {got:.12e} vs extended product {oracle:.12e}, rel {rel:.1e}"),
    )
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        (
            "prox oracle equivalence",
            Duration::from_secs(10),
            prox_oracle,
        ),
        ("gradient checks", Duration::from_secs(10), gradient_checks),
        (
            "hqs prior step equals ancestral step",
            Duration::from_secs(1),
            hqs_equivalence,
        ),
        (
            "distributional fidelity",
            Duration::from_secs(60),
            distribution_fidelity,
        ),
        (
            "exact recovery end-to-end",
            Duration::from_secs(5),
            exact_recovery,
        ),
        ("nfe budget", Duration::MAX, nfe_budget),
        ("ablation trends", Duration::from_secs(120), ablation_trends),
        ("schedule constants", Duration::MAX, schedule_constants),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let o = check();
        let took = start.elapsed();
        let in_time = took <= budget;
        let pass = o.pass && in_time;
        failed += usize::from(!pass);
        let limit = if budget == Duration::MAX {
            String::new()
        } else {
            format!(" / limit {:.0}s", budget.as_secs_f64())
        };
        println!(
            "{} {name}: {} [{:.2}s{limit}{}]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            if in_time { "" } else { ", over time" }
        );
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
