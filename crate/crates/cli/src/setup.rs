//! Image I/O, operator construction and denoiser selection shared by the
//! subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use diffpir::degrade::{
    gaussian_kernel, motion_kernel, BoxSpec, DegradationModel, DownFilter, Mask, Operator,
};
use diffpir::denoise::{
    oracle_denoiser, Denoiser, Endpoint, ExternalDenoiser, GaussianPrior, GmmComponent, GmmPrior,
    PriorMean,
};
use diffpir::image::{load_png, save_png};
use diffpir::{Image, Kernel2D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, Task};

pub const BRIDGE_ENV: &str = "DIFFPIR_BRIDGE";

const RAW_MAGIC: &[u8; 4] = b"F64I";

/// `F64I`, then `u32` channels, height, width and `f64` samples in CHW
/// order, all little-endian.
pub fn write_raw(x: &Image, path: &Path) -> Result<()> {
    let (c, h, w) = x.shape();
    let mut buf = Vec::with_capacity(16 + 8 * x.len());
    buf.extend_from_slice(RAW_MAGIC);
    for d in [c, h, w] {
        buf.extend_from_slice(&u32::try_from(d)?.to_le_bytes());
    }
    for v in x.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

pub fn read_raw(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.len() < 16 || &bytes[..4] != RAW_MAGIC {
        bail!("{} is not a raw F64I image", path.display());
    }
    let dim =
        |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (c, h, w) = (dim(0), dim(1), dim(2));
    let n = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| anyhow!("{}: dimensions overflow", path.display()))?;
    if bytes.len() != 16 + 8 * n {
        bail!(
            "{}: expected {} samples, found {} bytes",
            path.display(),
            n,
            bytes.len() - 16
        );
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(Image::from_vec(c, h, w, data)?)
}

fn has_ext(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Loads a PNG, or a raw sidecar when the extension is `.f64`.
pub fn load_image(path: &Path) -> Result<Image> {
    if has_ext(path, "f64") {
        read_raw(path)
    } else {
        load_png(path).with_context(|| format!("loading {}", path.display()))
    }
}

pub fn save_clamped_png(x: &Image, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_png(&x.clamped(0.0, 1.0), path).with_context(|| format!("writing {}", path.display()))
}

/// `dir/stem.suffix` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Random stream for kernels and masks.
pub fn param_rng(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(1);
    r
}

/// Random stream for measurement noise.
pub fn noise_rng(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(2);
    r
}

/// Kernel or mask used by an operator.
#[derive(Default)]
pub struct Artifacts {
    pub kernel: Option<Kernel2D>,
    pub mask: Option<Mask>,
}

pub fn signal_shape(cfg: &RunConfig, y: (usize, usize, usize)) -> (usize, usize, usize) {
    match cfg.task {
        Task::Sr => (y.0, y.1 * cfg.sf, y.2 * cfg.sf),
        _ => y,
    }
}

fn load_kernel(cfg: &RunConfig) -> Result<Option<Kernel2D>> {
    cfg.kernel
        .as_deref()
        .map(|p| Kernel2D::load(p).with_context(|| format!("loading kernel {}", p.display())))
        .transpose()
}

/// Builds the operator for a signal of height `h` and width `w`, loading the
/// kernel or mask from file when given and generating it from the seed
/// otherwise.
pub fn build_model(cfg: &RunConfig, h: usize, w: usize) -> Result<(DegradationModel, Artifacts)> {
    let mut rng = param_rng(cfg.sampler.seed);
    let mut art = Artifacts::default();
    let op = match cfg.task {
        Task::DeblurGauss | Task::DeblurMotion => {
            let k = match load_kernel(cfg)? {
                Some(k) => k,
                None if cfg.task == Task::DeblurGauss => {
                    gaussian_kernel(cfg.kernel_size, cfg.kernel_std)?
                }
                None => motion_kernel(cfg.kernel_size, cfg.motion_intensity, &mut rng)?,
            };
            art.kernel = Some(k.clone());
            Operator::Blur(k)
        }
        Task::InpaintBox | Task::InpaintRandom => {
            let m = match &cfg.mask {
                Some(p) => {
                    Mask::load_png(p).with_context(|| format!("loading mask {}", p.display()))?
                }
                None if cfg.task == Task::InpaintBox => Mask::boxed(
                    h,
                    w,
                    BoxSpec {
                        height: cfg.box_height,
                        width: cfg.box_width,
                        offset: None,
                    },
                )?,
                None => Mask::random(h, w, cfg.drop_ratio, &mut rng)?,
            };
            art.mask = Some(m.clone());
            Operator::Inpaint(m)
        }
        Task::Sr => {
            let filter = match load_kernel(cfg)? {
                Some(k) => {
                    art.kernel = Some(k.clone());
                    DownFilter::Kernel(k)
                }
                None => DownFilter::Bicubic,
            };
            Operator::Downsample { sf: cfg.sf, filter }
        }
    };
    Ok((DegradationModel::new(op, cfg.sigma_n())?, art))
}

pub fn parse_gmm(spec: &str) -> Result<GmmPrior> {
    let comps = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|c| {
            let parts: Vec<f64> = c
                .split(':')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| anyhow!("gmm component {c:?}: {e}"))?;
            match parts[..] {
                [weight, mean, variance] => Ok(GmmComponent {
                    weight,
                    mean: PriorMean::Scalar(mean),
                    variance,
                }),
                _ => bail!("gmm component {c:?} must be weight:mean:variance"),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GmmPrior::new(comps)?)
}

/// Endpoint of an external denoiser, with the environment override applied.
pub fn extern_endpoint(denoiser: &str) -> Result<Endpoint> {
    if let Ok(env) = std::env::var(BRIDGE_ENV) {
        if !env.trim().is_empty() {
            return Ok(env.trim().parse()?);
        }
    }
    match denoiser.strip_prefix("extern:") {
        Some(rest) => Ok(rest.parse()?),
        None => bail!("denoiser extern needs an endpoint (extern:<endpoint> or {BRIDGE_ENV})"),
    }
}

pub fn build_denoiser(cfg: &RunConfig, gt: Option<&Image>) -> Result<Box<dyn Denoiser>> {
    Ok(match cfg.denoiser.as_str() {
        "gaussian" => Box::new(GaussianPrior::scalar(cfg.prior_mean, cfg.prior_var)?),
        "gmm" => Box::new(parse_gmm(&cfg.gmm)?),
        "oracle" => {
            let gt = gt.ok_or_else(|| anyhow!("the oracle denoiser needs --gt"))?;
            Box::new(oracle_denoiser(gt.clone()))
        }
        d if cfg.is_extern() => {
            let ep = extern_endpoint(d)?;
            Box::new(
                ExternalDenoiser::connect(&ep, cfg.timeout()?)
                    .with_context(|| format!("connecting to {ep}"))?,
            )
        }
        other => {
            bail!("unknown denoiser {other:?}; expected gaussian, gmm, oracle or extern:<endpoint>")
        }
    })
}
