//! Parameter sweeps over `(steps, t_start, λ, ζ)`.
//!
//! Without `--gt` every cell restores fresh draws from an 8×8 Gaussian
//! mixture toy whose prior is also the denoiser, so errors are comparable
//! across cells. With `--gt` the given image is degraded and restored.

use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use diffpir::degrade::{
    apply, gaussian_kernel, motion_kernel, BoxSpec, DegradationModel, DownFilter, Mask, Operator,
};
use diffpir::denoise::{oracle_denoiser, Denoiser, GmmComponent, GmmPrior, PriorMean};
use diffpir::{sample, Image, Psnr};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::commands::aligned;
use crate::config::{RunConfig, Task};
use crate::setup::{build_denoiser, build_model, load_image, noise_rng, param_rng};

pub const TOY_SIZE: usize = 8;

pub const CSV_HEADER: [&str; 12] = [
    "cell", "steps", "t_start", "lambda", "zeta", "runs", "psnr_db", "rmse", "residual", "nfe",
    "time_s", "status",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub steps: usize,
    pub t_start: usize,
    pub lambda: f64,
    pub zeta: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub cell: usize,
    #[serde(flatten)]
    pub params: Cell,
    pub runs: usize,
    pub psnr_db: Option<Psnr>,
    pub rmse: Option<f64>,
    pub residual: Option<f64>,
    pub nfe: Option<usize>,
    pub time_s: f64,
    pub status: String,
}

impl Row {
    fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6e}")).unwrap_or_default();
        vec![
            self.cell.to_string(),
            self.params.steps.to_string(),
            self.params.t_start.to_string(),
            self.params.lambda.to_string(),
            self.params.zeta.to_string(),
            self.runs.to_string(),
            self.psnr_db
                .map(|p| format!("{:.4}", p.db()))
                .unwrap_or_default(),
            opt(self.rmse),
            opt(self.residual),
            self.nfe.map(|n| n.to_string()).unwrap_or_default(),
            format!("{:.4}", self.time_s),
            self.status.clone(),
        ]
    }
}

/// Cross product of the sweep axes; an unset axis contributes the base value
/// and an empty axis yields no cells.
pub fn cells(cfg: &RunConfig) -> Vec<Cell> {
    let s = &cfg.sampler;
    let steps = cfg.sweep_steps.clone().unwrap_or_else(|| vec![s.steps]);
    let starts = cfg.sweep_t_start.clone().unwrap_or_else(|| vec![s.t_start]);
    let lambdas = cfg.sweep_lambda.clone().unwrap_or_else(|| vec![s.lambda]);
    let zetas = cfg.sweep_zeta.clone().unwrap_or_else(|| vec![s.zeta]);
    let mut out = Vec::new();
    for &steps in &steps {
        for &t_start in &starts {
            for &lambda in &lambdas {
                for &zeta in &zetas {
                    out.push(Cell {
                        steps,
                        t_start,
                        lambda,
                        zeta,
                    });
                }
            }
        }
    }
    out
}

/// Three-component mixture over whole 8×8 images.
pub fn toy_prior() -> GmmPrior {
    let n = TOY_SIZE;
    let pattern = |f: &dyn Fn(usize, usize) -> f64| Image::from_fn(1, n, n, |_, i, j| f(i, j));
    let means = [
        pattern(&|i, j| if (i / 2 + j / 2) % 2 == 0 { 0.8 } else { 0.2 }),
        pattern(&|i, _| i as f64 / (n - 1) as f64),
        pattern(&|i, j| if i.abs_diff(j) <= 1 { 0.9 } else { 0.3 }),
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
    .expect("toy mixture is valid")
}

/// Small-support operator for the toy.
pub fn toy_model(cfg: &RunConfig, seed: u64) -> Result<DegradationModel> {
    let n = TOY_SIZE;
    let op = match cfg.task {
        Task::DeblurGauss => Operator::Blur(gaussian_kernel(5, 1.2)?),
        Task::DeblurMotion => Operator::Blur(motion_kernel(
            5,
            cfg.motion_intensity,
            &mut param_rng(seed),
        )?),
        Task::InpaintBox => Operator::Inpaint(Mask::boxed(
            n,
            n,
            BoxSpec {
                height: n / 2,
                width: n / 2,
                offset: None,
            },
        )?),
        Task::InpaintRandom => {
            Operator::Inpaint(Mask::random(n, n, cfg.drop_ratio, &mut param_rng(seed))?)
        }
        Task::Sr => Operator::Downsample {
            sf: 2,
            filter: DownFilter::Kernel(gaussian_kernel(3, 0.8)?),
        },
    };
    Ok(DegradationModel::new(op, cfg.sigma_n())?)
}

struct RunStats {
    mse: f64,
    residual: f64,
    nfe: usize,
}

fn run_once(cfg: &RunConfig, cell: &Cell, gt: Option<&Image>, seed: u64) -> Result<RunStats> {
    let mut scfg = cfg.sampler.clone();
    scfg.steps = cell.steps;
    scfg.t_start = cell.t_start;
    scfg.lambda = cell.lambda;
    scfg.zeta = cell.zeta;
    scfg.seed = seed;
    scfg.record = false;

    let (x, model, mut denoiser): (Image, DegradationModel, Box<dyn Denoiser>) = match gt {
        Some(x) => {
            let mut c = cfg.clone();
            c.sampler.seed = seed;
            let (model, _) = build_model(&c, x.height(), x.width())?;
            (x.clone(), model, build_denoiser(cfg, Some(x))?)
        }
        None => {
            let prior = toy_prior();
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(3);
            let x = prior.sample(1, TOY_SIZE, TOY_SIZE, &mut r)?;
            let d: Box<dyn Denoiser> = match cfg.denoiser.as_str() {
                "oracle" => Box::new(oracle_denoiser(x.clone())),
                _ if cfg.is_extern() => build_denoiser(cfg, None)?,
                _ => Box::new(prior),
            };
            (x, toy_model(cfg, seed)?, d)
        }
    };
    let y = apply(&model, &x, &mut noise_rng(seed))?;
    let (out, traj) = sample::run(&y, &model, &mut *denoiser, &cfg.schedule()?, &scfg)?;
    Ok(RunStats {
        mse: out.mse(&x)?,
        residual: y.sub(&model.forward(&out)?)?.norm(),
        nfe: traj.nfe,
    })
}

fn run_cell(cfg: &RunConfig, index: usize, cell: Cell, gt: Option<&Image>) -> Row {
    let start = Instant::now();
    let runs = cfg.runs.max(1);
    let result = (0..runs)
        .map(|r| run_once(cfg, &cell, gt, cfg.sampler.seed.wrapping_add(r as u64)))
        .collect::<Result<Vec<_>>>();
    let time_s = start.elapsed().as_secs_f64();
    let mut row = Row {
        cell: index,
        params: cell,
        runs,
        psnr_db: None,
        rmse: None,
        residual: None,
        nfe: None,
        time_s,
        status: "ok".into(),
    };
    match result {
        Ok(stats) => {
            let k = stats.len() as f64;
            let mse = stats.iter().map(|s| s.mse).sum::<f64>() / k;
            row.psnr_db = Some(Psnr::from_mse(mse));
            row.rmse = Some(stats.iter().map(|s| s.mse.sqrt()).sum::<f64>() / k);
            row.residual = Some(stats.iter().map(|s| s.residual).sum::<f64>() / k);
            row.nfe = stats.first().map(|s| s.nfe);
        }
        Err(e) => row.status = format!("error: {e:#}"),
    }
    row
}

pub fn run_bench(cfg: &RunConfig) -> Result<Vec<Row>> {
    let gt = cfg.gt.as_deref().map(load_image).transpose()?;
    let cells = cells(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .context("starting worker pool")?;
    Ok(pool.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(i, &c)| run_cell(cfg, i, c, gt.as_ref()))
            .collect()
    }))
}

pub fn write_csv(rows: &[Row], path: &Path) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn bench(cfg: &RunConfig) -> Result<()> {
    let out = cfg
        .out
        .as_deref()
        .ok_or_else(|| anyhow!("--out is required"))?;
    let rows = run_bench(cfg)?;
    write_csv(&rows, out)?;
    if let Some(report) = &cfg.report {
        let v = serde_json::json!({
            "command": "bench",
            "source": if cfg.gt.is_some() { "image" } else { "toy" },
            "rows": rows,
            "config": cfg.json_pairs(),
        });
        std::fs::write(report, serde_json::to_string_pretty(&v)? + "\n")
            .with_context(|| format!("writing {}", report.display()))?;
    }
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    print!(
        "{}",
        aligned(&[
            ("cells", rows.len().to_string()),
            ("failed", failed.to_string()),
            ("csv", out.display().to_string()),
        ])
    );
    for r in rows.iter().filter(|r| r.status != "ok") {
        eprintln!("cell {}: {}", r.cell, r.status);
    }
    Ok(())
}
