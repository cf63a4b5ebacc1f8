use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::image::save_png;
use crate::{Error, Image, Result};

/// Images kept for one step when recording is enabled.
#[derive(Clone, Debug)]
pub struct StepImages {
    pub x_t: Image,
    pub x0: Image,
    pub x0_hat: Image,
}

#[derive(Clone, Debug)]
pub struct StepRecord {
    pub t: usize,
    pub t_prev: usize,
    /// `‖y − H(x̂0)‖` for conditional samplers.
    pub residual: Option<f64>,
    pub images: Option<StepImages>,
}

/// Per-step history of a sampling run plus its denoiser call count.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub nfe: usize,
}

#[derive(Serialize)]
struct FrameEntry {
    index: usize,
    t: usize,
    t_prev: usize,
    residual: Option<f64>,
    x_t: String,
    x0: String,
    x0_hat: String,
}

impl Trajectory {
    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.residual).collect()
    }

    /// Writes clamped PNG frames of every recorded step and `manifest.json`.
    pub fn dump(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.records.len());
        for (i, r) in self.records.iter().enumerate() {
            let imgs = r.images.as_ref().ok_or_else(|| {
                Error::InvalidConfig("trajectory was recorded without images".into())
            })?;
            let name = |tag: &str| format!("step{i:04}_t{:04}_{tag}.png", r.t);
            let entry = FrameEntry {
                index: i,
                t: r.t,
                t_prev: r.t_prev,
                residual: r.residual,
                x_t: name("xt"),
                x0: name("x0"),
                x0_hat: name("x0hat"),
            };
            save_png(&imgs.x_t.clamped(0.0, 1.0), dir.join(&entry.x_t))?;
            save_png(&imgs.x0.clamped(0.0, 1.0), dir.join(&entry.x0))?;
            save_png(&imgs.x0_hat.clamped(0.0, 1.0), dir.join(&entry.x0_hat))?;
            entries.push(entry);
        }
        let manifest = serde_json::json!({ "nfe": self.nfe, "frames": entries });
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.into()))?;
        fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }
}
