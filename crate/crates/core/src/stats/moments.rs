//! The second-layer cross moment `E[h₁²h₂²] − E[h₁²] E[h₂²]`.
//!
//! Conditioned on the first layer, second-layer units are Gaussian with a
//! shared random variance, so the gap equals
//! `σ_w⁴ (E[x⁴] − E[x²]²) / N` with `x = φ(h_1)` and
//! `h_1 ~ N(0, σ_w² + σ_b²)`. A nonzero gap rules out independence.

use serde::Serialize;

use super::StatsError;
use crate::activations::Activation;
use crate::simulator::stream::{bits_to_open_unit, philox4x32};

const MIN_PAIRS: usize = 1000;
const BOOTSTRAP_RESAMPLES: usize = 200;
const BOOTSTRAP_KEY: [u32; 2] = [0x5EED_B007, 0x0000_0C0F];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossMomentResult {
    pub samples: usize,
    pub gap_estimate: f64,
    /// Bootstrap standard error.
    pub std_error: f64,
    /// `gap_estimate / std_error`, the evidence against a zero gap.
    pub z_score: f64,
    pub theoretical_gap: Option<f64>,
    /// `(gap_estimate − theoretical_gap) / std_error`.
    pub z_vs_theory: Option<f64>,
}

impl CrossMomentResult {
    pub fn with_theory(mut self, theory: f64) -> Self {
        self.theoretical_gap = Some(theory);
        self.z_vs_theory = Some((self.gap_estimate - theory) / self.std_error);
        self
    }
}

fn plug_in_gap(pairs: &[(f64, f64)], idx: Option<&[usize]>) -> f64 {
    let (mut s_ab, mut s_a, mut s_b) = (0.0, 0.0, 0.0);
    let mut acc = |(a, b): (f64, f64)| {
        let (a2, b2) = (a * a, b * b);
        s_ab += a2 * b2;
        s_a += a2;
        s_b += b2;
    };
    let n = match idx {
        Some(ix) => {
            ix.iter().for_each(|&i| acc(pairs[i]));
            ix.len()
        }
        None => {
            pairs.iter().for_each(|&p| acc(p));
            pairs.len()
        }
    } as f64;
    s_ab / n - (s_a / n) * (s_b / n)
}

/// Plug-in estimate of the cross-moment gap with a seeded bootstrap
/// standard error over 200 resamples.
pub fn cross_moment_gap(pairs: &[(f64, f64)]) -> Result<CrossMomentResult, StatsError> {
    if pairs.len() < MIN_PAIRS {
        return Err(StatsError::InsufficientSamples {
            needed: MIN_PAIRS,
            got: pairs.len(),
        });
    }
    let n = pairs.len();
    let gap = plug_in_gap(pairs, None);

    let mut idx = vec![0usize; n];
    let mut boots = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for b in 0..BOOTSTRAP_RESAMPLES {
        let mut block = 0u32;
        let mut k = 0;
        while k < n {
            let w = philox4x32([block, b as u32, 0, 0], BOOTSTRAP_KEY);
            for bits in [
                ((w[0] as u64) << 32) | w[1] as u64,
                ((w[2] as u64) << 32) | w[3] as u64,
            ] {
                if k < n {
                    idx[k] = ((bits_to_open_unit(bits) * n as f64) as usize).min(n - 1);
                    k += 1;
                }
            }
            block += 1;
        }
        boots.push(plug_in_gap(pairs, Some(&idx)));
    }
    let mean = boots.iter().sum::<f64>() / boots.len() as f64;
    let var = boots.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>()
        / (boots.len() - 1) as f64;
    let std_error = var.sqrt();
    Ok(CrossMomentResult {
        samples: n,
        gap_estimate: gap,
        std_error,
        z_score: gap / std_error,
        theoretical_gap: None,
        z_vs_theory: None,
    })
}

/// Closed-form cross-moment gap for `relu` and `heaviside`.
///
/// With `v = σ_w² + σ_b²`:
/// * heaviside: `E[x²] = E[x⁴] = 1/2`, gap `σ_w⁴ / (4N)` (0 when `v = 0`);
/// * relu: `E[x²] = v/2`, `E[x⁴] = 3v²/2`, gap `5 σ_w⁴ v² / (4N)`, which is
///   `5 σ_w⁸ / (4N)` without bias.
pub fn theoretical_gap(
    act: &Activation,
    sigma_w: f64,
    sigma_b: f64,
    width: usize,
) -> Result<f64, StatsError> {
    if width == 0 || !(sigma_w >= 0.0 && sigma_b >= 0.0) {
        return Err(StatsError::InvalidArgument(format!(
            "need width >= 1 and nonnegative sigmas, got N = {width}, {sigma_w}, {sigma_b}"
        )));
    }
    let v = sigma_w * sigma_w + sigma_b * sigma_b;
    let (m2, m4) = match act {
        Activation::Heaviside if v == 0.0 => (0.0, 0.0),
        Activation::Heaviside => (0.5, 0.5),
        Activation::Relu => (v / 2.0, 1.5 * v * v),
        other => return Err(StatsError::UnsupportedActivation(other.name())),
    };
    Ok(sigma_w.powi(4) * (m4 - m2 * m2) / width as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::stream::NormalStream;

    fn normal_pairs(n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut s = NormalStream::new(seed, 0, 1, 0);
        (0..n).map(|_| (s.next_normal(), s.next_normal())).collect()
    }

    #[test]
    fn closed_forms() {
        let h = theoretical_gap(&Activation::Heaviside, 1.0, 0.0, 10).unwrap();
        assert!((h - 0.025).abs() < 1e-15);
        let r = theoretical_gap(&Activation::Relu, 1.0, 0.0, 10).unwrap();
        assert!((r - 0.125).abs() < 1e-15);
        let r = theoretical_gap(&Activation::Relu, 1.0, 0.0, 1_000_000).unwrap();
        assert!((r / 1.25e-6 - 1.0).abs() < 1e-14);
        let sw: f64 = 1.3;
        let r = theoretical_gap(&Activation::Relu, sw, 0.0, 7).unwrap();
        assert!((r - 5.0 * sw.powi(8) / 28.0).abs() < 1e-14);
        assert!(theoretical_gap(&Activation::Tanh, 1.0, 0.0, 10).is_err());
    }

    #[test]
    fn gap_scales_as_inverse_width() {
        for act in [Activation::Relu, Activation::Heaviside] {
            for n in [2usize, 10, 333] {
                let a = theoretical_gap(&act, 1.7, 0.4, n).unwrap();
                let b = theoretical_gap(&act, 1.7, 0.4, 2 * n).unwrap();
                assert_eq!(b, a / 2.0);
            }
        }
    }

    #[test]
    fn independent_pairs_have_no_gap() {
        let r = cross_moment_gap(&normal_pairs(50_000, 3)).unwrap();
        assert!(r.std_error > 0.0);
        assert!(r.gap_estimate.abs() < 3.0 * r.std_error, "{r:?}");
    }

    #[test]
    fn estimator_is_unbiased_on_independent_pairs() {
        let reps: Vec<f64> = (0..100)
            .map(|k| cross_moment_gap(&normal_pairs(2_000, 100 + k)).unwrap().gap_estimate)
            .collect();
        let mean = reps.iter().sum::<f64>() / 100.0;
        let sd = (reps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
        // the plug-in estimator is biased by -Cov/n, negligible here
        assert!(mean.abs() < 3.0 * sd / 10.0, "mean {mean}, se {}", sd / 10.0);
    }

    #[test]
    fn dependent_pairs_show_gap() {
        // shared random scale: a = s z1, b = s z2 with s² ∈ {0.5, 1.5}
        let mut s = NormalStream::new(9, 0, 1, 0);
        let pairs: Vec<(f64, f64)> = (0..50_000)
            .map(|_| {
                let scale = if s.next_normal() > 0.0 { 1.5f64 } else { 0.5 }.sqrt();
                (scale * s.next_normal(), scale * s.next_normal())
            })
            .collect();
        // gap = Var(s²) = 0.25
        let r = cross_moment_gap(&pairs).unwrap().with_theory(0.25);
        assert!(r.z_vs_theory.unwrap().abs() < 4.0, "{r:?}");
        assert!(r.z_score > 5.0);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let p = normal_pairs(5_000, 1);
        assert_eq!(cross_moment_gap(&p).unwrap(), cross_moment_gap(&p).unwrap());
    }

    #[test]
    fn too_few_pairs() {
        assert!(matches!(
            cross_moment_gap(&normal_pairs(999, 1)),
            Err(StatsError::InsufficientSamples { .. })
        ));
    }
}
