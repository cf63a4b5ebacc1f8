//! Noise schedules and sampling step plans.
//!
//! Timesteps are 1-based: `t` ranges over `1..=n_train`, and `t = 0` denotes
//! the clean signal with `alpha_bar(0) == 1`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_N_TRAIN: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Lower bound applied to the measurement noise level when computing the
/// data-prox weight, so noiseless problems still get a positive weight.
pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Betas spaced linearly from `beta_start` to `beta_end`, both inclusive.
    pub fn linear(n_train: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if n_train == 0 {
            return Err(Error::range("n_train must be at least 1"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::range(format!(
                "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let beta: Vec<f64> = if n_train == 1 {
            vec![beta_start]
        } else {
            let step = (beta_end - beta_start) / (n_train - 1) as f64;
            (0..n_train)
                .map(|i| {
                    if i == n_train - 1 {
                        beta_end
                    } else {
                        beta_start + step * i as f64
                    }
                })
                .collect()
        };
        Self::from_betas(beta)
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::range("empty beta table"));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::range(format!("beta {b} outside (0, 1)")));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut acc = 1.0;
        let alpha_bar = alpha
            .iter()
            .map(|a| {
                acc *= a;
                acc
            })
            .collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn n_train(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.n_train() {
            return Err(Error::OutOfRange(format!(
                "timestep {t} outside 1..={}",
                self.n_train()
            )));
        }
        Ok(())
    }

    fn check_with_zero(&self, t: usize) -> Result<()> {
        if t > self.n_train() {
            return Err(Error::OutOfRange(format!(
                "timestep {t} outside 0..={}",
                self.n_train()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.beta[t - 1])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.alpha[t - 1])
    }

    /// Cumulative product of alphas; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_with_zero(t)?;
        Ok(if t == 0 { 1.0 } else { self.alpha_bar[t - 1] })
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Noise level of `x_t / sqrt(alpha_bar_t)`: `sqrt((1 - a) / a)`.
    pub fn sigma_bar(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        let a = self.alpha_bar[t - 1];
        Ok(((1.0 - a) / a).sqrt())
    }

    /// Relative noise level between consecutive states, `sqrt(beta / (1 - beta))`.
    pub fn sigma_step(&self, t: usize) -> Result<f64> {
        let b = self.beta(t)?;
        Ok((b / (1.0 - b)).sqrt())
    }

    /// Data-prox weight `lambda * max(sigma_n, floor)^2 / sigma_bar_t^2`.
    pub fn rho(&self, t: usize, lambda: f64, sigma_n: f64) -> Result<f64> {
        self.rho_with_floor(t, lambda, sigma_n, DEFAULT_SIGMA_FLOOR)
    }

    pub fn rho_with_floor(&self, t: usize, lambda: f64, sigma_n: f64, floor: f64) -> Result<f64> {
        if !(lambda > 0.0) {
            return Err(Error::range(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        let sb = self.sigma_bar(t)?;
        let s = effective_sigma(sigma_n, floor);
        Ok(lambda * s * s / (sb * sb))
    }
}

pub(crate) fn effective_sigma(sigma_n: f64, floor: f64) -> f64 {
    sigma_n.max(floor)
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_N_TRAIN, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule parameters are valid")
    }
}

/// Sampling timesteps in the order they are visited (strictly decreasing).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepPlan {
    timesteps: Vec<usize>,
    t_start: usize,
}

impl StepPlan {
    /// Explicit plan; `timesteps` must be strictly decreasing, within
    /// `1..=t_start`, and begin at `t_start`.
    pub fn new(timesteps: Vec<usize>, t_start: usize) -> Result<Self> {
        if timesteps.is_empty() {
            return Err(Error::range("empty step plan"));
        }
        if timesteps[0] != t_start {
            return Err(Error::range("plan must begin at t_start"));
        }
        if timesteps.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::range("plan timesteps must strictly decrease"));
        }
        if *timesteps.last().unwrap() < 1 {
            return Err(Error::range("plan timesteps must be >= 1"));
        }
        Ok(Self { timesteps, t_start })
    }

    /// Every timestep from `t_start` down to 1.
    pub fn full(t_start: usize) -> Result<Self> {
        if t_start == 0 {
            return Err(Error::range("t_start must be >= 1"));
        }
        Ok(Self {
            timesteps: (1..=t_start).rev().collect(),
            t_start,
        })
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    pub fn t_start(&self) -> usize {
        self.t_start
    }

    pub fn len(&self) -> usize {
        self.timesteps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timesteps.is_empty()
    }

    /// `(t, t_prev)` pairs, ending with `(last, 0)`.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.timesteps
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, self.timesteps.get(i + 1).copied().unwrap_or(0)))
    }

    pub fn ensure_within(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.t_start > schedule.n_train() {
            return Err(Error::OutOfRange(format!(
                "t_start {} exceeds schedule length {}",
                self.t_start,
                schedule.n_train()
            )));
        }
        Ok(())
    }
}

/// Quadratically spaced plan from `t_start` down to 1, denser near `t = 1`.
///
/// Positions are `1 + round((i / (n_steps - 1))^2 * (t_start - 1))`. When
/// rounding collides, neighbors are pushed apart by one so the plan always
/// contains exactly `n_steps` distinct timesteps.
pub fn quadratic_subsequence(n_train: usize, n_steps: usize, t_start: usize) -> Result<StepPlan> {
    if !(1 <= n_steps && n_steps <= t_start && t_start <= n_train) {
        return Err(Error::range(format!(
            "need 1 <= n_steps ({n_steps}) <= t_start ({t_start}) <= n_train ({n_train})"
        )));
    }
    if n_steps == 1 {
        return StepPlan::new(vec![t_start], t_start);
    }
    let span = (t_start - 1) as f64;
    let last = (n_steps - 1) as f64;
    let mut ts: Vec<usize> = (0..n_steps)
        .map(|i| {
            let f = i as f64 / last;
            1 + (f * f * span).round() as usize
        })
        .collect();
    for i in 1..n_steps {
        ts[i] = ts[i].max(ts[i - 1] + 1);
    }
    ts[n_steps - 1] = t_start;
    for i in (0..n_steps - 1).rev() {
        ts[i] = ts[i].min(ts[i + 1] - 1);
    }
    ts.reverse();
    StepPlan::new(ts, t_start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Double-double running product: an extended-precision reference for
    /// the cumulative alpha products.
    fn dd_alpha_bar(betas: &[f64]) -> Vec<f64> {
        fn two_prod(a: f64, b: f64) -> (f64, f64) {
            let p = a * b;
            (p, a.mul_add(b, -p))
        }
        fn two_sum(a: f64, b: f64) -> (f64, f64) {
            let s = a + b;
            let bb = s - a;
            (s, (a - (s - bb)) + (b - bb))
        }
        let (mut hi, mut lo) = (1.0f64, 0.0f64);
        let mut out = Vec::new();
        for &b in betas {
            // alpha = 1 - b exactly in double-double
            let (a_hi, a_lo) = two_sum(1.0, -b);
            let (p, e) = two_prod(hi, a_hi);
            let e = e + hi * a_lo + lo * a_hi;
            let (s, t) = two_sum(p, e);
            hi = s;
            lo = t;
            out.push(hi + lo);
        }
        out
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 0.3, 0.3).unwrap();
        assert_eq!(s.betas(), &[0.3]);
        assert!((s.alpha_bar(1).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn two_step_schedule() {
        let s = NoiseSchedule::linear(2, 0.1, 0.3).unwrap();
        assert!((s.beta(1).unwrap() - 0.1).abs() < 1e-15);
        assert!((s.beta(2).unwrap() - 0.3).abs() < 1e-15);
        assert!((s.alpha_bar(1).unwrap() - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2).unwrap() - 0.63).abs() < 1e-15);
    }

    #[test]
    fn standard_schedule_final_alpha_bar() {
        let s = NoiseSchedule::default();
        let reference = dd_alpha_bar(s.betas());
        let got = s.alpha_bar(1000).unwrap();
        assert!((got - reference[999]).abs() / reference[999] < 1e-8);
        assert!((got - 4.0e-5).abs() < 1e-6, "{got}");
        for (t, r) in reference.iter().enumerate() {
            let a = s.alpha_bar(t + 1).unwrap();
            assert!((a - r).abs() / r < 1e-12, "t={}", t + 1);
        }
    }

    #[test]
    fn invalid_ranges() {
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn alpha_is_one_minus_beta_exactly() {
        let s = NoiseSchedule::default();
        for t in 1..=1000 {
            assert_eq!(s.alpha(t).unwrap(), 1.0 - s.beta(t).unwrap());
        }
    }

    #[test]
    fn sigma_bar_values() {
        let s = NoiseSchedule::from_betas(vec![0.5]).unwrap();
        assert!((s.sigma_bar(1).unwrap() - 1.0).abs() < 1e-15);
        let s = NoiseSchedule::from_betas(vec![0.1]).unwrap();
        assert!((s.sigma_bar(1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(s.sigma_bar(0), Err(Error::OutOfRange(_))));
        assert!(matches!(s.sigma_bar(2), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn sigma_bar_identity_and_monotonicity() {
        let s = NoiseSchedule::default();
        let mut prev = 0.0;
        for t in 1..=1000 {
            let sb = s.sigma_bar(t).unwrap();
            let a = s.alpha_bar(t).unwrap();
            assert!((a * (1.0 + sb * sb) - 1.0).abs() < 1e-12);
            assert!(sb > prev);
            prev = sb;
        }
    }

    #[test]
    fn rho_values() {
        let s = NoiseSchedule::from_betas(vec![0.5]).unwrap();
        assert!((s.rho(1, 8.0, 0.05).unwrap() - 0.02).abs() < 1e-15);
        let r0 = s.rho(1, 8.0, 0.0).unwrap();
        assert!((r0 - 8.0 * 1e-6).abs() < 1e-18);
        assert!(r0 > 0.0);
        assert!(s.rho(1, 0.0, 0.05).is_err());
    }

    #[test]
    fn rho_decreases_in_t() {
        let s = NoiseSchedule::default();
        let mut prev = f64::INFINITY;
        for t in 1..=1000 {
            let r = s.rho(t, 7.0, 0.05).unwrap();
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn quadratic_plan_examples() {
        let p = quadratic_subsequence(100, 5, 100).unwrap();
        assert_eq!(p.timesteps(), &[100, 57, 26, 7, 1]);

        let p = quadratic_subsequence(50, 20, 20).unwrap();
        assert_eq!(p.timesteps(), (1..=20).rev().collect::<Vec<_>>().as_slice());

        let p = quadratic_subsequence(50, 1, 30).unwrap();
        assert_eq!(p.timesteps(), &[30]);

        assert!(quadratic_subsequence(100, 0, 10).is_err());
        assert!(quadratic_subsequence(100, 11, 10).is_err());
        assert!(quadratic_subsequence(100, 5, 101).is_err());
    }

    #[test]
    fn hundred_step_plan_has_exactly_hundred_steps() {
        let p = quadratic_subsequence(1000, 100, 1000).unwrap();
        assert_eq!(p.len(), 100);
        assert_eq!(p.timesteps()[0], 1000);
        assert_eq!(*p.timesteps().last().unwrap(), 1);
    }

    #[test]
    fn transitions_end_at_zero() {
        let p = quadratic_subsequence(100, 5, 100).unwrap();
        let tr: Vec<_> = p.transitions().collect();
        assert_eq!(tr, vec![(100, 57), (57, 26), (26, 7), (7, 1), (1, 0)]);
    }

    proptest! {
        #[test]
        fn plan_invariants(n_train in 1usize..1200, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let t_start = 1 + ((n_train - 1) as f64 * a) as usize;
            let n_steps = 1 + ((t_start - 1) as f64 * b) as usize;
            let p = quadratic_subsequence(n_train, n_steps, t_start).unwrap();
            let ts = p.timesteps();
            prop_assert_eq!(ts.len(), n_steps);
            prop_assert_eq!(ts[0], t_start);
            if n_steps > 1 {
                prop_assert_eq!(*ts.last().unwrap(), 1);
            }
            prop_assert!(ts.windows(2).all(|w| w[0] > w[1]));
            // gaps shrink toward t = 1, up to one step of rounding slack
            let gaps: Vec<usize> = ts.windows(2).map(|w| w[0] - w[1]).collect();
            for g in gaps.windows(2) {
                prop_assert!(g[1] <= g[0] + 1, "gaps {:?}", gaps);
            }
        }

        #[test]
        fn alpha_bar_strictly_decreasing(n in 2usize..400, b0 in 1e-5f64..0.01, db in 0.0f64..0.05) {
            let s = NoiseSchedule::linear(n, b0, b0 + db).unwrap();
            let ab = s.alpha_bars();
            prop_assert!(ab.windows(2).all(|w| w[1] < w[0]));
            prop_assert!(ab.iter().all(|&a| a > 0.0 && a < 1.0));
        }
    }
}
