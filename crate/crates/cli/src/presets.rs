//! Published per-task `λ`/`ζ` settings for pretrained face and ImageNet
//! denoisers at 20 and 100 evaluations.

use anyhow::{anyhow, Result};

use crate::config::Task;

/// Scale factor the super-resolution presets were tuned for.
pub const PRESET_SF: usize = 4;

pub struct Preset {
    pub name: &'static str,
    pub nfe: usize,
    pub sigma_n: f64,
    /// `(task, λ, ζ)`.
    pub entries: &'static [(Task, f64, f64)],
}

impl Preset {
    pub fn lookup(&self, task: Task) -> Result<(f64, f64)> {
        self.entries
            .iter()
            .find(|e| e.0 == task)
            .map(|e| (e.1, e.2))
            .ok_or_else(|| anyhow!("preset {} has no setting for task {task}", self.name))
    }
}

use Task::*;

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "ffhq-noisy-nfe20",
        nfe: 20,
        sigma_n: 0.05,
        entries: &[
            (DeblurGauss, 8.0, 0.5),
            (DeblurMotion, 7.0, 0.8),
            (Sr, 8.0, 0.4),
        ],
    },
    Preset {
        name: "imagenet-noisy-nfe20",
        nfe: 20,
        sigma_n: 0.05,
        entries: &[
            (DeblurGauss, 12.0, 0.9),
            (DeblurMotion, 7.0, 1.0),
            (Sr, 10.0, 0.5),
        ],
    },
    Preset {
        name: "ffhq-noiseless-nfe20",
        nfe: 20,
        sigma_n: 0.0,
        entries: &[
            (InpaintBox, 6.0, 1.0),
            (InpaintRandom, 3.0, 1.0),
            (DeblurGauss, 15.0, 0.5),
            (DeblurMotion, 25.0, 1.0),
            (Sr, 9.0, 0.2),
        ],
    },
    Preset {
        name: "ffhq-noisy-nfe100",
        nfe: 100,
        sigma_n: 0.05,
        entries: &[
            (DeblurGauss, 7.0, 0.3),
            (DeblurMotion, 7.0, 0.4),
            (Sr, 8.0, 0.2),
        ],
    },
    Preset {
        name: "imagenet-noisy-nfe100",
        nfe: 100,
        sigma_n: 0.05,
        entries: &[
            (DeblurGauss, 8.0, 0.3),
            (DeblurMotion, 8.0, 0.7),
            (Sr, 9.0, 0.5),
        ],
    },
    Preset {
        name: "ffhq-noiseless-nfe100",
        nfe: 100,
        sigma_n: 0.0,
        entries: &[
            (InpaintBox, 6.0, 0.5),
            (InpaintRandom, 7.0, 1.0),
            (DeblurGauss, 12.0, 0.4),
            (DeblurMotion, 7.0, 0.9),
            (Sr, 6.0, 0.3),
        ],
    },
];

pub fn find(name: &str) -> Result<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<_> = PRESETS.iter().map(|p| p.name).collect();
        anyhow!("unknown preset {name:?}; available: {}", names.join(", "))
    })
}
