#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod bench;
mod commands;
mod config;
mod presets;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

/// Plug-and-play diffusion restoration: synthesize degradations, restore
/// measurements and sweep sampler parameters.
#[derive(Parser)]
#[command(name = "diffpir", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply a degradation to a clean image and write the measurement.
    Degrade(Opts),
    /// Restore a measurement and write the result and a report.
    Restore(Opts),
    /// Run a parameter sweep and write one CSV row per cell.
    Bench(Opts),
}

/// Every flag mirrors the config key of the same name.
#[derive(Args)]
struct Opts {
    /// Flat `key = value` config file, or a JSON provenance/report record.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named hyperparameter preset, e.g. ffhq-noisy-nfe100.
    #[arg(long)]
    preset: Option<String>,
    /// deblur-gauss | deblur-motion | inpaint-box | inpaint-random | sr
    #[arg(long)]
    task: Option<String>,
    /// diffpir | ddpm | ddim | dps-yt | dps-y0
    #[arg(long)]
    sampler: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    t_start: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    zeta: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    sigma_n: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// gaussian | gmm | oracle | extern:<endpoint>
    #[arg(long)]
    denoiser: Option<String>,
    /// Kernel file (.k2d or .png).
    #[arg(long)]
    kernel: Option<String>,
    /// Mask PNG (0 = dropped, 255 = kept).
    #[arg(long)]
    mask: Option<String>,
    #[arg(long)]
    sf: Option<String>,
    /// Input image (.png, or .f64 raw sidecar).
    #[arg(long = "in")]
    input: Option<String>,
    /// Ground-truth image for metrics and the oracle denoiser.
    #[arg(long)]
    gt: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    report: Option<String>,
    /// Directory for per-step frames and a manifest.
    #[arg(long)]
    dump_trajectory: Option<String>,
    /// Worker threads for bench (0 = all cores).
    #[arg(long)]
    workers: Option<String>,
    /// Seeded runs averaged per bench cell.
    #[arg(long)]
    runs: Option<String>,
    #[arg(long)]
    sweep_steps: Option<String>,
    #[arg(long)]
    sweep_t_start: Option<String>,
    #[arg(long)]
    sweep_lambda: Option<String>,
    #[arg(long)]
    sweep_zeta: Option<String>,
    /// Any other config key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Opts {
    fn flags(&self) -> Vec<(&'static str, &String)> {
        let all = [
            ("preset", &self.preset),
            ("task", &self.task),
            ("sampler", &self.sampler),
            ("steps", &self.steps),
            ("t_start", &self.t_start),
            ("lambda", &self.lambda),
            ("zeta", &self.zeta),
            ("eta", &self.eta),
            ("sigma_n", &self.sigma_n),
            ("seed", &self.seed),
            ("denoiser", &self.denoiser),
            ("kernel", &self.kernel),
            ("mask", &self.mask),
            ("sf", &self.sf),
            ("in", &self.input),
            ("gt", &self.gt),
            ("out", &self.out),
            ("report", &self.report),
            ("dump_trajectory", &self.dump_trajectory),
            ("workers", &self.workers),
            ("runs", &self.runs),
            ("sweep_steps", &self.sweep_steps),
            ("sweep_t_start", &self.sweep_t_start),
            ("sweep_lambda", &self.sweep_lambda),
            ("sweep_zeta", &self.sweep_zeta),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
            .collect()
    }

    fn build(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        for (k, v) in self.flags() {
            cfg.set(k, v)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
            cfg.set(k, v)?;
        }
        cfg.resolve()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Degrade(o) => o.build().and_then(|c| commands::degrade(&c)),
        Command::Restore(o) => o.build().and_then(|c| commands::restore(&c)),
        Command::Bench(o) => o.build().and_then(|c| bench::bench(&c)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
