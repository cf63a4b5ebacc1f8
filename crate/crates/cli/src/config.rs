//! Flat key-value run configuration.
//!
//! Sources are layered: built-in defaults, then a config file, then flags.
//! Keys use underscores; dashes are accepted and normalized.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use diffpir::prox::SrSolver;
use diffpir::sample::{DdpmVariance, SamplerConfig};
use diffpir::schedule::{NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_N_TRAIN};

use crate::presets;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    DeblurGauss,
    DeblurMotion,
    InpaintBox,
    InpaintRandom,
    Sr,
}

impl Task {
    pub const ALL: [Task; 5] = [
        Task::DeblurGauss,
        Task::DeblurMotion,
        Task::InpaintBox,
        Task::InpaintRandom,
        Task::Sr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::DeblurGauss => "deblur-gauss",
            Task::DeblurMotion => "deblur-motion",
            Task::InpaintBox => "inpaint-box",
            Task::InpaintRandom => "inpaint-random",
            Task::Sr => "sr",
        }
    }

    pub fn is_inpaint(self) -> bool {
        matches!(self, Task::InpaintBox | Task::InpaintRandom)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| anyhow!("unknown task {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub sampler: SamplerConfig,
    pub t_start: Option<usize>,
    pub sigma_n: Option<f64>,
    pub n_train: usize,
    pub beta_start: f64,
    pub beta_end: f64,

    pub denoiser: String,
    pub prior_mean: f64,
    pub prior_var: f64,
    /// Comma-separated `weight:mean:variance` components.
    pub gmm: String,
    pub timeout: f64,

    pub kernel: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub sf: usize,
    pub kernel_size: usize,
    pub kernel_std: f64,
    pub motion_intensity: f64,
    pub box_height: usize,
    pub box_width: usize,
    pub drop_ratio: f64,

    pub input: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub dump_trajectory: Option<PathBuf>,
    pub preset: Option<String>,
    pub metrics: bool,

    pub workers: usize,
    pub runs: usize,
    pub sweep_steps: Option<Vec<usize>>,
    pub sweep_t_start: Option<Vec<usize>>,
    pub sweep_lambda: Option<Vec<f64>>,
    pub sweep_zeta: Option<Vec<f64>>,

    explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::DeblurGauss,
            sampler: SamplerConfig::default(),
            t_start: None,
            sigma_n: None,
            n_train: DEFAULT_N_TRAIN,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            denoiser: "gaussian".into(),
            prior_mean: 0.5,
            prior_var: 0.05,
            gmm: "0.5:0.3:0.02,0.5:0.7:0.02".into(),
            timeout: 60.0,
            kernel: None,
            mask: None,
            sf: 4,
            kernel_size: 61,
            kernel_std: 3.0,
            motion_intensity: 0.5,
            box_height: 128,
            box_width: 128,
            drop_ratio: 0.5,
            input: None,
            gt: None,
            out: None,
            report: None,
            dump_trajectory: None,
            preset: None,
            metrics: true,
            workers: 0,
            runs: 1,
            sweep_steps: None,
            sweep_t_start: None,
            sweep_lambda: None,
            sweep_zeta: None,
            explicit: BTreeSet::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.trim()
        .parse()
        .map_err(|e| anyhow!("invalid value {v:?} for {key}: {e}"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => bail!("invalid value {v:?} for {key}: expected true or false"),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn path(v: &str) -> Option<PathBuf> {
    let v = v.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn solver_name(s: SrSolver) -> &'static str {
    match s {
        SrSolver::Closed => "closed",
        SrSolver::Ibp => "ibp",
    }
}

fn variance_name(v: DdpmVariance) -> &'static str {
    match v {
        DdpmVariance::Beta => "beta",
        DdpmVariance::Posterior => "posterior",
    }
}

pub fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl RunConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize_key(key);
        let k = key.as_str();
        let s = &mut self.sampler;
        match k {
            "task" => self.task = value.trim().parse()?,
            "sampler" => s.kind = value.trim().parse()?,
            "steps" => s.steps = parse(k, value)?,
            "t_start" => self.t_start = Some(parse(k, value)?),
            "lambda" => s.lambda = parse(k, value)?,
            "zeta" => s.zeta = parse(k, value)?,
            "eta" => s.eta = parse(k, value)?,
            "seed" => s.seed = parse(k, value)?,
            "sigma_floor" => s.sigma_floor = parse(k, value)?,
            "sr_solver" => {
                s.prox.sr = match value.trim() {
                    "closed" => SrSolver::Closed,
                    "ibp" => SrSolver::Ibp,
                    other => bail!("invalid value {other:?} for sr_solver: expected closed or ibp"),
                }
            }
            "ibp_gamma" => s.prox.ibp_gamma = parse(k, value)?,
            "ibp_iters" => s.prox.ibp_iters = parse(k, value)?,
            "gradient_only" => s.prox.gradient_only = parse_bool(k, value)?,
            "ddpm_variance" => {
                s.ddpm_variance = match value.trim() {
                    "beta" => DdpmVariance::Beta,
                    "posterior" => DdpmVariance::Posterior,
                    other => {
                        bail!(
                            "invalid value {other:?} for ddpm_variance: expected beta or posterior"
                        )
                    }
                }
            }
            "fd_fallback" => s.fd_fallback = parse_bool(k, value)?,
            "fd_step" => s.fd_step = parse(k, value)?,
            "sigma_n" => self.sigma_n = Some(parse(k, value)?),
            "n_train" => self.n_train = parse(k, value)?,
            "beta_start" => self.beta_start = parse(k, value)?,
            "beta_end" => self.beta_end = parse(k, value)?,
            "denoiser" => self.denoiser = value.trim().to_string(),
            "prior_mean" => self.prior_mean = parse(k, value)?,
            "prior_var" => self.prior_var = parse(k, value)?,
            "gmm" => self.gmm = value.trim().to_string(),
            "timeout" => self.timeout = parse(k, value)?,
            "kernel" => self.kernel = path(value),
            "mask" => self.mask = path(value),
            "sf" => self.sf = parse(k, value)?,
            "kernel_size" => self.kernel_size = parse(k, value)?,
            "kernel_std" => self.kernel_std = parse(k, value)?,
            "motion_intensity" => self.motion_intensity = parse(k, value)?,
            "box_height" => self.box_height = parse(k, value)?,
            "box_width" => self.box_width = parse(k, value)?,
            "drop_ratio" => self.drop_ratio = parse(k, value)?,
            "in" => self.input = path(value),
            "gt" => self.gt = path(value),
            "out" => self.out = path(value),
            "report" => self.report = path(value),
            "dump_trajectory" => self.dump_trajectory = path(value),
            "preset" => {
                let name = value.trim();
                presets::find(name)?;
                self.preset = Some(name.to_string());
            }
            "metrics" => self.metrics = parse_bool(k, value)?,
            "workers" => self.workers = parse(k, value)?,
            "runs" => self.runs = parse(k, value)?,
            "sweep_steps" => self.sweep_steps = Some(parse_list(k, value)?),
            "sweep_t_start" => self.sweep_t_start = Some(parse_list(k, value)?),
            "sweep_lambda" => self.sweep_lambda = Some(parse_list(k, value)?),
            "sweep_zeta" => self.sweep_zeta = Some(parse_list(k, value)?),
            _ => bail!("unknown config key {key:?}"),
        }
        self.explicit.insert(key);
        Ok(())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    /// Every key with its current value, in a stable order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let s = &self.sampler;
        let mut out: Vec<(&str, String)> = vec![
            ("task", self.task.to_string()),
            ("sampler", s.kind.to_string()),
            ("steps", s.steps.to_string()),
        ];
        if let Some(t) = self.t_start {
            out.push(("t_start", t.to_string()));
        }
        out.extend([
            ("lambda", s.lambda.to_string()),
            ("zeta", s.zeta.to_string()),
            ("eta", s.eta.to_string()),
            ("seed", s.seed.to_string()),
            ("sigma_floor", s.sigma_floor.to_string()),
            ("sr_solver", solver_name(s.prox.sr).to_string()),
            ("ibp_gamma", s.prox.ibp_gamma.to_string()),
            ("ibp_iters", s.prox.ibp_iters.to_string()),
            ("gradient_only", s.prox.gradient_only.to_string()),
            ("ddpm_variance", variance_name(s.ddpm_variance).to_string()),
            ("fd_fallback", s.fd_fallback.to_string()),
            ("fd_step", s.fd_step.to_string()),
        ]);
        if let Some(v) = self.sigma_n {
            out.push(("sigma_n", v.to_string()));
        }
        out.extend([
            ("n_train", self.n_train.to_string()),
            ("beta_start", self.beta_start.to_string()),
            ("beta_end", self.beta_end.to_string()),
            ("denoiser", self.denoiser.clone()),
            ("prior_mean", self.prior_mean.to_string()),
            ("prior_var", self.prior_var.to_string()),
            ("gmm", self.gmm.clone()),
            ("timeout", self.timeout.to_string()),
            ("sf", self.sf.to_string()),
            ("kernel_size", self.kernel_size.to_string()),
            ("kernel_std", self.kernel_std.to_string()),
            ("motion_intensity", self.motion_intensity.to_string()),
            ("box_height", self.box_height.to_string()),
            ("box_width", self.box_width.to_string()),
            ("drop_ratio", self.drop_ratio.to_string()),
            ("metrics", self.metrics.to_string()),
            ("workers", self.workers.to_string()),
            ("runs", self.runs.to_string()),
        ]);
        let paths = [
            ("kernel", &self.kernel),
            ("mask", &self.mask),
            ("in", &self.input),
            ("gt", &self.gt),
            ("out", &self.out),
            ("report", &self.report),
            ("dump_trajectory", &self.dump_trajectory),
        ];
        for (k, p) in paths {
            if let Some(p) = p {
                out.push((k, p.display().to_string()));
            }
        }
        if let Some(p) = &self.preset {
            out.push(("preset", p.clone()));
        }
        let lists = [
            ("sweep_steps", self.sweep_steps.as_deref().map(join)),
            ("sweep_t_start", self.sweep_t_start.as_deref().map(join)),
            ("sweep_lambda", self.sweep_lambda.as_deref().map(join)),
            ("sweep_zeta", self.sweep_zeta.as_deref().map(join)),
        ];
        for (k, v) in lists {
            if let Some(v) = v {
                out.push((k, v));
            }
        }
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", n + 1))?;
            self.set(k, v).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    /// Applies a JSON object of string values, or the `config` member of a
    /// provenance or report record.
    pub fn apply_json(&mut self, text: &str) -> Result<()> {
        let v: serde_json::Value = serde_json::from_str(text).context("parsing JSON config")?;
        let obj = v.get("config").unwrap_or(&v);
        let map = obj
            .as_object()
            .ok_or_else(|| anyhow!("JSON config must be an object"))?;
        for (k, val) in map {
            let text = match val {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            self.set(k, &text).with_context(|| format!("key {k}"))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        if text.trim_start().starts_with('{') {
            self.apply_json(&text)
        } else {
            self.apply_text(&text)
        }
        .with_context(|| format!("in config {}", path.display()))
    }

    /// Fills task-dependent defaults and binds the preset. Preset values
    /// never override keys that were set explicitly.
    pub fn resolve(&mut self) -> Result<()> {
        if let Some(name) = self.preset.clone() {
            let p = presets::find(&name)?;
            let (lambda, zeta) = p.lookup(self.task)?;
            if !self.is_explicit("steps") {
                self.sampler.steps = p.nfe;
            }
            if self.sigma_n.is_none() {
                self.sigma_n = Some(p.sigma_n);
            }
            if self.task == Task::Sr && !self.is_explicit("sf") {
                self.sf = presets::PRESET_SF;
            }
            if self.is_extern() {
                if !self.is_explicit("lambda") {
                    self.sampler.lambda = lambda;
                }
                if !self.is_explicit("zeta") {
                    self.sampler.zeta = zeta;
                }
            } else {
                eprintln!(
                    "note: preset {name} keeps lambda/zeta unchanged for the analytic {} denoiser",
                    self.denoiser
                );
            }
        }
        if self.sigma_n.is_none() {
            self.sigma_n = Some(if self.task.is_inpaint() { 0.0 } else { 0.05 });
        }
        if self.t_start.is_none() {
            self.t_start = Some(self.n_train);
        }
        self.sampler.t_start = self.t_start.unwrap_or(self.n_train);
        Ok(())
    }

    pub fn is_extern(&self) -> bool {
        self.denoiser == "extern" || self.denoiser.starts_with("extern:")
    }

    pub fn sigma_n(&self) -> f64 {
        self.sigma_n
            .unwrap_or(if self.task.is_inpaint() { 0.0 } else { 0.05 })
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::linear(
            self.n_train,
            self.beta_start,
            self.beta_end,
        )?)
    }

    pub fn timeout(&self) -> Result<Duration> {
        if !(self.timeout > 0.0) || !self.timeout.is_finite() {
            bail!("timeout must be a positive number of seconds");
        }
        Ok(Duration::from_secs_f64(self.timeout))
    }

    pub fn json_pairs(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.pairs()
                .into_iter()
                .map(|(k, v)| (k, serde_json::Value::String(v)))
                .collect(),
        )
    }
}
