use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use diffpir::{degrade, psnr, sample};
use serde_json::json;

use crate::config::RunConfig;
use crate::setup::{
    build_denoiser, build_model, load_image, noise_rng, save_clamped_png, sibling, signal_shape,
    write_raw,
};

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| anyhow!("--{flag} is required"))
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Left-aligned `key  value` lines.
pub fn aligned(rows: &[(&str, String)]) -> String {
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    rows.iter()
        .map(|(k, v)| format!("{k:<width$}  {v}\n"))
        .collect()
}

pub fn degrade(cfg: &RunConfig) -> Result<()> {
    let input = required(&cfg.input, "in")?;
    let out = required(&cfg.out, "out")?;
    let x = load_image(input)?;
    let (model, art) = build_model(cfg, x.height(), x.width())?;
    let y = degrade::apply(&model, &x, &mut noise_rng(cfg.sampler.seed))?;

    save_clamped_png(&y, out)?;
    let raw = sibling(out, "f64");
    write_raw(&y, &raw)?;
    let mut files = serde_json::Map::new();
    files.insert("measurement".into(), json!(out.display().to_string()));
    files.insert("measurement_raw".into(), json!(raw.display().to_string()));
    if let Some(k) = &art.kernel {
        let p = sibling(out, "kernel.k2d");
        k.save_k2d(&p)?;
        let png = sibling(out, "kernel.png");
        save_clamped_png(&k.to_display_image(), &png)?;
        files.insert("kernel".into(), json!(p.display().to_string()));
        files.insert("kernel_png".into(), json!(png.display().to_string()));
    }
    if let Some(m) = &art.mask {
        let p = sibling(out, "mask.png");
        m.save_png(&p)?;
        files.insert("mask".into(), json!(p.display().to_string()));
    }
    let prov_path = cfg.report.clone().unwrap_or_else(|| sibling(out, "json"));
    let prov = json!({
        "command": "degrade",
        "task": cfg.task.as_str(),
        "seed": cfg.sampler.seed,
        "sigma_n": cfg.sigma_n(),
        "operator": model.kind_name(),
        "input_shape": [x.channels(), x.height(), x.width()],
        "measurement_shape": [y.channels(), y.height(), y.width()],
        "files": files,
        "config": cfg.json_pairs(),
    });
    write_json(&prov_path, &prov)?;
    print!(
        "{}",
        aligned(&[
            ("task", cfg.task.to_string()),
            ("sigma_n", cfg.sigma_n().to_string()),
            ("seed", cfg.sampler.seed.to_string()),
            ("measurement", out.display().to_string()),
            ("provenance", prov_path.display().to_string()),
        ])
    );
    Ok(())
}

pub fn restore(cfg: &RunConfig) -> Result<()> {
    let input = required(&cfg.input, "in")?;
    let out = required(&cfg.out, "out")?;
    let y = load_image(input)?;
    let shape = signal_shape(cfg, y.shape());
    let (model, _) = build_model(cfg, shape.1, shape.2)?;
    let expected = model.measurement_shape(shape)?;
    if expected != y.shape() {
        bail!(
            "measurement shape {:?} does not fit task {} (expected {expected:?})",
            y.shape(),
            cfg.task
        );
    }
    let gt = cfg.gt.as_deref().map(load_image).transpose()?;
    if let Some(g) = &gt {
        if g.shape() != shape {
            bail!(
                "ground truth shape {:?} differs from the signal shape {shape:?}",
                g.shape()
            );
        }
    }
    let mut denoiser = build_denoiser(cfg, gt.as_ref())?;
    let schedule = cfg.schedule()?;
    let mut scfg = cfg.sampler.clone();
    scfg.record = cfg.dump_trajectory.is_some();

    let start = Instant::now();
    let (x, traj) = sample::run(&y, &model, &mut *denoiser, &schedule, &scfg)?;
    let wall = start.elapsed().as_secs_f64();

    save_clamped_png(&x, out)?;
    let raw = sibling(out, "f64");
    write_raw(&x, &raw)?;
    let final_residual = y.sub(&model.forward(&x)?)?.norm();
    let p = match (&gt, cfg.metrics) {
        (Some(g), true) => Some(psnr(&x, g)?),
        _ => None,
    };
    if let Some(dir) = &cfg.dump_trajectory {
        traj.dump(dir)
            .with_context(|| format!("writing trajectory to {}", dir.display()))?;
    }

    let report_path = cfg.report.clone().unwrap_or_else(|| sibling(out, "json"));
    let report = json!({
        "command": "restore",
        "task": cfg.task.as_str(),
        "sampler": scfg.kind.as_str(),
        "denoiser": denoiser.name(),
        "nfe": traj.nfe,
        "steps": traj.records.len(),
        "wall_time_s": wall,
        "psnr": p,
        "final_residual": final_residual,
        "residuals": traj.residuals(),
        "output": out.display().to_string(),
        "output_raw": raw.display().to_string(),
        "config": cfg.json_pairs(),
    });
    write_json(&report_path, &report)?;

    let mut rows = vec![
        ("task", cfg.task.to_string()),
        ("sampler", scfg.kind.to_string()),
        ("denoiser", denoiser.name()),
        ("nfe", traj.nfe.to_string()),
        ("wall_time_s", format!("{wall:.3}")),
        ("final_residual", format!("{final_residual:.6e}")),
    ];
    if let Some(p) = p {
        rows.push(("psnr_db", p.to_string()));
    }
    rows.push(("output", out.display().to_string()));
    rows.push(("report", report_path.display().to_string()));
    let text = aligned(&rows);
    fs::write(sibling(&report_path, "txt"), &text)?;
    print!("{text}");
    Ok(())
}
