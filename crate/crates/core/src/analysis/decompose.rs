use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::renoise_values;
use crate::rng;
use crate::schedule::sigma;

/// A renoised context split into true signal, carried prediction error and
/// fresh noise.
///
/// With the prediction `x̂ = x0 + δ`, the context `(1 - σ) x̂ + σ η` equals
/// `(1 - σ) x0 + (1 - σ) δ + σ η`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    pub level: f64,
    pub sigma: f64,
    pub signal_coeff: f64,
    pub bias_coeff: f64,
    pub noise_coeff: f64,
    pub signal: Vec<f64>,
    pub bias: Vec<f64>,
    pub noise: Vec<f64>,
    /// The context as the generators build it from the prediction.
    pub context: Vec<f64>,
}

impl ErrorDecomposition {
    /// `(signal + bias) + noise`, elementwise.
    pub fn reconstruct(&self) -> Vec<f64> {
        self.signal
            .iter()
            .zip(&self.bias)
            .zip(&self.noise)
            .map(|((s, b), n)| (s + b) + n)
            .collect()
    }
}

/// Decomposes the context built from `x0_true + delta` at time `level`.
///
/// The noise `η` is drawn from `seed`. Reconstruction is exact whenever
/// `(1 - σ) x0`, `(1 - σ) δ` and their sum are representable, e.g. for
/// dyadic inputs and dyadic `σ`; otherwise it agrees to a few ulps.
pub fn decompose_context(
    x0_true: &[f64],
    delta: &[f64],
    level: f64,
    shift: f64,
    seed: u64,
) -> Result<ErrorDecomposition> {
    if x0_true.len() != delta.len() {
        return Err(invalid(format!(
            "clean block has {} values, injected error has {}",
            x0_true.len(),
            delta.len()
        )));
    }
    let s = sigma(level, shift)?;
    let keep = 1.0 - s;
    let eta = rng::standard_normals(
        rng::derive_seed(seed, rng::STREAM_DECOMPOSE, 0),
        x0_true.len(),
    );
    let predicted: Vec<f64> = x0_true.iter().zip(delta).map(|(x, d)| x + d).collect();
    Ok(ErrorDecomposition {
        level,
        sigma: s,
        signal_coeff: keep,
        bias_coeff: keep,
        noise_coeff: s,
        signal: x0_true.iter().map(|x| keep * x).collect(),
        bias: delta.iter().map(|d| keep * d).collect(),
        noise: eta.iter().map(|e| s * e).collect(),
        context: renoise_values(&predicted, &eta, s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clean_level_passes_the_full_error() {
        let d = decompose_context(&[0.5, -1.25], &[0.75, 2.0], 0.0, 3.0, 1).unwrap();
        assert_eq!(d.bias, vec![0.75, 2.0]);
        assert!(d.noise.iter().all(|&n| n == 0.0));
        assert_eq!(d.reconstruct(), d.context);
    }

    #[test]
    fn pure_noise_level_drops_signal_and_error() {
        let d = decompose_context(&[0.5], &[3.0], 1.0, 3.0, 4).unwrap();
        assert_eq!(d.signal, vec![0.0]);
        assert_eq!(d.bias, vec![0.0]);
        assert_eq!(d.context, d.noise);
    }

    #[test]
    fn bias_at_three_quarters() {
        // σ(0.5) = 0.75 at shift 3
        let d = decompose_context(&[0.0], &[1.0], 0.5, 3.0, 2).unwrap();
        assert_eq!(d.sigma, 0.75);
        assert_eq!(d.bias, vec![0.25]);
        assert_eq!(d.signal_coeff + d.noise_coeff, 1.0);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(decompose_context(&[1.0], &[1.0, 2.0], 0.5, 3.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn dyadic_inputs_reconstruct_exactly(
            xs in proptest::collection::vec(-64i32..64, 1..16),
            ds in proptest::collection::vec(-64i32..64, 16),
            level in prop::sample::select(vec![0.0, 0.25, 0.5, 0.75, 1.0]),
            seed in any::<u64>(),
        ) {
            let x0: Vec<f64> = xs.iter().map(|&v| v as f64 / 8.0).collect();
            let delta: Vec<f64> = ds[..x0.len()].iter().map(|&v| v as f64 / 16.0).collect();
            let d = decompose_context(&x0, &delta, level, 1.0, seed).unwrap();
            prop_assert_eq!(d.reconstruct(), d.context);
        }

        #[test]
        fn arbitrary_inputs_reconstruct_to_rounding(
            x0 in proptest::collection::vec(-10.0f64..10.0, 8),
            delta in proptest::collection::vec(-10.0f64..10.0, 8),
            level in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let d = decompose_context(&x0, &delta, level, 3.0, seed).unwrap();
            for (r, c) in d.reconstruct().iter().zip(&d.context) {
                prop_assert!((r - c).abs() <= 8.0 * f64::EPSILON * (1.0 + c.abs() + 20.0));
            }
        }

        #[test]
        fn error_coefficient_decreases_with_level(a in 0.0f64..=1.0, b in 0.0f64..=1.0, shift in 0.1f64..10.0) {
            prop_assume!(a < b);
            let da = decompose_context(&[1.0], &[1.0], a, shift, 0).unwrap();
            let db = decompose_context(&[1.0], &[1.0], b, shift, 0).unwrap();
            prop_assert!(da.bias_coeff >= db.bias_coeff);
            prop_assert_eq!(da.bias_coeff, da.signal_coeff);
        }
    }
}
