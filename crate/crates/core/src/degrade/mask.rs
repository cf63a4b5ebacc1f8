use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use crate::image::{load_png, save_png};
use crate::{Error, Image, Result};

/// Pixel keep/drop mask shared by all channels. At least one pixel is kept.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    keep: Vec<bool>,
}

/// Size and placement of a rectangular hole.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoxSpec {
    pub height: usize,
    pub width: usize,
    /// `(top, left)`; centered when `None`.
    pub offset: Option<(usize, usize)>,
}

impl Default for BoxSpec {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            offset: None,
        }
    }
}

impl Mask {
    pub fn new(height: usize, width: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != height * width {
            return Err(Error::shape(format!(
                "{} mask entries for {height}x{width}",
                keep.len()
            )));
        }
        if !keep.iter().any(|&k| k) {
            return Err(Error::range("mask must keep at least one pixel"));
        }
        Ok(Self {
            height,
            width,
            keep,
        })
    }

    pub fn all_keep(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![true; height * width])
    }

    /// Drops a rectangular region, by default a centered 128x128 box.
    pub fn boxed(height: usize, width: usize, spec: BoxSpec) -> Result<Self> {
        if spec.height > height || spec.width > width {
            return Err(Error::range(format!(
                "{}x{} box does not fit a {height}x{width} image",
                spec.height, spec.width
            )));
        }
        let (top, left) = spec
            .offset
            .unwrap_or(((height - spec.height) / 2, (width - spec.width) / 2));
        if top + spec.height > height || left + spec.width > width {
            return Err(Error::range("box offset places the box outside the image"));
        }
        let mut keep = vec![true; height * width];
        for y in top..top + spec.height {
            for x in left..left + spec.width {
                keep[y * width + x] = false;
            }
        }
        Self::new(height, width, keep)
    }

    /// Drops exactly `round(drop_ratio * height * width)` pixels chosen
    /// uniformly without replacement.
    pub fn random<R: Rng + ?Sized>(
        height: usize,
        width: usize,
        drop_ratio: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&drop_ratio) {
            return Err(Error::range(format!(
                "drop ratio {drop_ratio} outside [0, 1)"
            )));
        }
        let n = height * width;
        let n_drop = (drop_ratio * n as f64).round() as usize;
        let mut keep = vec![true; n];
        for i in sample(rng, n, n_drop.min(n)) {
            keep[i] = false;
        }
        Self::new(height, width, keep)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn is_kept(&self, y: usize, x: usize) -> bool {
        self.keep[y * self.width + x]
    }

    pub fn dropped_count(&self) -> usize {
        self.keep.iter().filter(|&&k| !k).count()
    }

    pub fn kept_count(&self) -> usize {
        self.keep.len() - self.dropped_count()
    }

    /// Mask value (1 kept, 0 dropped) at a plane index.
    pub fn weight(&self, i: usize) -> f64 {
        if self.keep[i] {
            1.0
        } else {
            0.0
        }
    }

    pub fn check_image(&self, x: &Image) -> Result<()> {
        if x.height() != self.height || x.width() != self.width {
            return Err(Error::shape(format!(
                "mask {}x{} vs image {}x{}",
                self.height,
                self.width,
                x.height(),
                x.width()
            )));
        }
        Ok(())
    }

    /// `M ⊙ x`, dropped pixels exactly zero.
    pub fn apply(&self, x: &Image) -> Result<Image> {
        self.check_image(x)?;
        let mut out = x.clone();
        for c in 0..x.channels() {
            for (v, &k) in out.channel_mut(c).iter_mut().zip(&self.keep) {
                if !k {
                    *v = 0.0;
                }
            }
        }
        Ok(out)
    }

    pub fn to_image(&self) -> Image {
        Image::from_fn(1, self.height, self.width, |_, y, x| {
            if self.is_kept(y, x) {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Pixels at or above one half (averaged over channels) are kept.
    pub fn from_image(img: &Image) -> Result<Self> {
        let n = img.plane_len();
        let keep = (0..n)
            .map(|i| {
                let s: f64 = (0..img.channels()).map(|c| img.channel(c)[i]).sum();
                s / img.channels() as f64 >= 0.5
            })
            .collect();
        Self::new(img.height(), img.width(), keep)
    }

    /// 8-bit PNG: 0 = dropped, 255 = kept.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        save_png(&self.to_image(), path)
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_image(&load_png(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_box_on_256_drops_16384() {
        let m = Mask::boxed(256, 256, BoxSpec::default()).unwrap();
        assert_eq!(m.dropped_count(), 128 * 128);
        assert!(!m.is_kept(128, 128));
        assert!(m.is_kept(0, 0));
        assert!(!m.is_kept(64, 64));
        assert!(m.is_kept(63, 64));
    }

    #[test]
    fn box_must_fit() {
        assert!(Mask::boxed(64, 64, BoxSpec::default()).is_err());
        let spec = BoxSpec {
            height: 8,
            width: 8,
            offset: Some((60, 0)),
        };
        assert!(Mask::boxed(64, 64, spec).is_err());
    }

    #[test]
    fn random_mask_exact_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            Mask::random(16, 16, 0.0, &mut rng).unwrap().dropped_count(),
            0
        );
        assert_eq!(
            Mask::random(16, 16, 0.5, &mut rng).unwrap().dropped_count(),
            128
        );
        assert!(Mask::random(16, 16, 1.0, &mut rng).is_err());
        // rounding would drop the only pixel
        assert!(Mask::random(1, 1, 0.9, &mut rng).is_err());
    }

    #[test]
    fn apply_zeroes_dropped_pixels() {
        let m = Mask::boxed(
            4,
            4,
            BoxSpec {
                height: 2,
                width: 2,
                offset: None,
            },
        )
        .unwrap();
        let x = Image::filled(3, 4, 4, 0.7);
        let y = m.apply(&x).unwrap();
        for c in 0..3 {
            assert_eq!(y.get(c, 1, 1), 0.0);
            assert_eq!(y.get(c, 0, 0), 0.7);
        }
        assert!(m.apply(&Image::zeros(1, 4, 5)).is_err());
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = Mask::random(9, 7, 0.3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        m.save_png(&p).unwrap();
        assert_eq!(Mask::load_png(&p).unwrap(), m);
    }
}
