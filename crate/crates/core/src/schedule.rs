//! Shifted flow-matching noise schedule.
//!
//! Corruption interpolates `x_t = (1 - σ_t) x_0 + σ_t ε` with the shifted
//! noise level `σ_t = s t / (1 + (s - 1) t)`. Times are continuous reals in
//! `[0, 1]`; the schedule stores the discretised times `1 = t_1 > … > t_{S+1} = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Desk-scale default shift.
pub const DEFAULT_SHIFT: f64 = 3.0;
/// Desk-scale default interior times (a four-step schedule).
pub const DEFAULT_INTERIOR: [f64; 3] = [0.75, 0.5, 0.25];

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

fn check_shift(shift: f64) -> Result<()> {
    if !(shift > 0.0 && shift.is_finite()) {
        return Err(invalid(format!(
            "shift must be positive and finite, got {shift}"
        )));
    }
    Ok(())
}

/// Noise level `σ(t)` for the shifted schedule.
pub fn sigma(t: f64, shift: f64) -> Result<f64> {
    check_time(t)?;
    check_shift(shift)?;
    Ok(sigma_unchecked(t, shift))
}

#[inline]
pub(crate) fn sigma_unchecked(t: f64, shift: f64) -> f64 {
    // Rounding can push the ratio a hair above 1 near t = 1.
    (shift * t / (1.0 + (shift - 1.0) * t)).min(1.0)
}

/// Signal-to-noise ratio `(1 - σ)² / σ²`. Infinite exactly when `σ = 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SnrValue(f64);

impl SnrValue {
    pub fn from_sigma(sigma: f64) -> Self {
        if sigma == 0.0 {
            SnrValue(f64::INFINITY)
        } else {
            let signal = 1.0 - sigma;
            SnrValue(signal * signal / (sigma * sigma))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

pub fn snr(t: f64, shift: f64) -> Result<SnrValue> {
    Ok(SnrValue::from_sigma(sigma(t, shift)?))
}

/// A validated discretisation of the denoising trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    shift: f64,
    times: Vec<f64>,
    sigmas: Vec<f64>,
}

/// Builds a schedule from interior step times.
///
/// The endpoints `1` and `0` are added when absent; passing them explicitly is
/// also accepted. Interior times must be strictly decreasing and lie in `(0, 1)`.
pub fn make_schedule(shift: f64, step_times: &[f64]) -> Result<NoiseSchedule> {
    check_shift(shift)?;
    let mut interior = step_times;
    if interior.first() == Some(&1.0) {
        interior = &interior[1..];
    }
    if interior.last() == Some(&0.0) {
        interior = &interior[..interior.len() - 1];
    }
    for &t in interior {
        if !(t > 0.0 && t < 1.0) {
            return Err(invalid(format!(
                "interior step time {t} must lie strictly inside (0, 1)"
            )));
        }
    }
    if let Some(w) = interior.windows(2).find(|w| w[1] >= w[0]) {
        return Err(invalid(format!(
            "step times must be strictly decreasing, got {} followed by {}",
            w[0], w[1]
        )));
    }
    let mut times = Vec::with_capacity(interior.len() + 2);
    times.push(1.0);
    times.extend_from_slice(interior);
    times.push(0.0);
    let sigmas: Vec<f64> = times.iter().map(|&t| sigma_unchecked(t, shift)).collect();
    if sigmas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid(
            "noise levels collapse numerically; step times too close",
        ));
    }
    Ok(NoiseSchedule {
        shift,
        times,
        sigmas,
    })
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_SHIFT, &DEFAULT_INTERIOR).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Number of denoising steps `S`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// All `S + 1` level times, starting at 1 and ending at 0.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Time of level `j` (0-based: level 0 is pure noise, level `S` is clean).
    pub fn time(&self, level: usize) -> f64 {
        self.times[level]
    }

    pub fn sigma_at(&self, level: usize) -> f64 {
        self.sigmas[level]
    }

    /// Euler coefficients `σ_{t_{j+1}} - σ_{t_j}`, one per step; all negative.
    pub fn euler_coefficients(&self) -> Vec<f64> {
        self.sigmas.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Interior times, as they appear in an experiment config.
    pub fn interior_times(&self) -> &[f64] {
        &self.times[1..self.times.len() - 1]
    }

    /// Level index whose time equals `t` exactly, if any.
    pub fn level_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&x| x == t)
    }

    pub fn sigma_of(&self, t: f64) -> f64 {
        sigma_unchecked(t, self.shift)
    }
}

/// One Euler update `x + v (σ_to - σ_from)`.
pub fn euler_step(x: &[f64], v: &[f64], sigma_from: f64, sigma_to: f64) -> Result<Vec<f64>> {
    if x.len() != v.len() {
        return Err(invalid(format!(
            "latent length {} does not match velocity length {}",
            x.len(),
            v.len()
        )));
    }
    if !(0.0..=1.0).contains(&sigma_from) || !(0.0..=1.0).contains(&sigma_to) {
        return Err(invalid("noise levels must lie in [0, 1]"));
    }
    let h = sigma_to - sigma_from;
    Ok(x.iter().zip(v).map(|(xi, vi)| xi + vi * h).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma(0.0, 3.0).unwrap(), 0.0);
        assert_eq!(sigma(1.0, 3.0).unwrap(), 1.0);
        // 3 * 0.5 / (1 + 2 * 0.5) = 1.5 / 2
        assert_eq!(sigma(0.5, 3.0).unwrap(), 0.75);
        assert_eq!(sigma(0.5, 1.0).unwrap(), 0.5);
    }

    #[test]
    fn sigma_rejects_bad_input() {
        assert!(sigma(-0.1, 3.0).is_err());
        assert!(sigma(1.1, 3.0).is_err());
        assert!(sigma(0.5, 0.0).is_err());
        assert!(sigma(0.5, -2.0).is_err());
        assert!(sigma(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn snr_examples() {
        assert_eq!(snr(0.5, 1.0).unwrap().value(), 1.0);
        let v = snr(0.5, 3.0).unwrap().value();
        assert!((v - 1.0 / 9.0).abs() < 1e-15);
        assert!(snr(0.0, 3.0).unwrap().is_infinite());
        assert!(snr(2.0, 3.0).is_err());
    }

    #[test]
    fn default_schedule_shape() {
        let s = make_schedule(3.0, &[0.75, 0.5, 0.25]).unwrap();
        assert_eq!(s.steps(), 4);
        assert_eq!(s.times(), &[1.0, 0.75, 0.5, 0.25, 0.0]);
        let c = s.euler_coefficients();
        assert_eq!(c.len(), 4);
        assert!(c.iter().all(|&x| x < 0.0));
        // σ(0.75) = 2.25 / 2.5 = 0.9, σ(0.25) = 0.75 / 1.5 = 0.5
        assert!((s.sigma_at(1) - 0.9).abs() < 1e-15);
        assert!((s.sigma_at(3) - 0.5).abs() < 1e-15);
        assert!((c.iter().sum::<f64>() + 1.0).abs() < 1e-15);
        assert_eq!(s, NoiseSchedule::default());
    }

    #[test]
    fn one_step_schedule() {
        let s = make_schedule(1.0, &[]).unwrap();
        assert_eq!(s.steps(), 1);
        assert_eq!(s.euler_coefficients(), vec![-1.0]);
    }

    #[test]
    fn endpoints_may_be_given_explicitly() {
        let a = make_schedule(3.0, &[1.0, 0.5, 0.0]).unwrap();
        let b = make_schedule(3.0, &[0.5]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn schedule_rejects_non_monotone_or_out_of_range() {
        assert!(make_schedule(3.0, &[0.5, 0.75]).is_err());
        assert!(make_schedule(3.0, &[0.5, 0.5]).is_err());
        assert!(make_schedule(3.0, &[1.5]).is_err());
        assert!(make_schedule(0.0, &[0.5]).is_err());
    }

    #[test]
    fn euler_step_examples() {
        assert_eq!(
            euler_step(&[1.0, -2.0], &[0.0, 0.0], 0.9, 0.5).unwrap(),
            vec![1.0, -2.0]
        );
        let x = euler_step(&[1.0], &[0.8], 0.75, 0.0).unwrap();
        assert!((x[0] - 0.4).abs() < 1e-15);
        assert_eq!(euler_step(&[3.0], &[7.0], 0.4, 0.4).unwrap(), vec![3.0]);
        assert!(euler_step(&[1.0], &[1.0, 2.0], 1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn sigma_is_monotone_bijection(shift in 0.05f64..20.0, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let sl = sigma(lo, shift).unwrap();
            let sh = sigma(hi, shift).unwrap();
            prop_assert!((0.0..=1.0).contains(&sl));
            prop_assert!(sl <= sh);
            if lo < hi { prop_assert!(sl < sh || (sh - sl).abs() < 1e-15); }
        }

        #[test]
        fn causality_equivalence_on_times(shift in 0.05f64..20.0, a in 1e-6f64..=1.0, b in 1e-6f64..=1.0) {
            let sa = snr(a, shift).unwrap();
            let sb = snr(b, shift).unwrap();
            prop_assert_eq!(sa >= sb, a <= b);
        }

        #[test]
        fn refined_constant_velocity_steps_telescope(
            shift in 0.1f64..10.0,
            cuts in proptest::collection::btree_set(1u32..1000, 0..8),
            v in -5.0f64..5.0,
            x0 in -5.0f64..5.0,
        ) {
            let interior: Vec<f64> = cuts.iter().rev().map(|&c| c as f64 / 1000.0).collect();
            let s = make_schedule(shift, &interior).unwrap();
            let mut x = vec![x0];
            for w in s.sigmas().windows(2) {
                x = euler_step(&x, &[v], w[0], w[1]).unwrap();
            }
            let coarse = euler_step(&[x0], &[v], 1.0, 0.0).unwrap();
            prop_assert!((x[0] - coarse[0]).abs() < 1e-12);
        }
    }
}
