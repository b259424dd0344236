use serde::Serialize;

use super::StatsError;
use crate::activations::Activation;
use crate::lengthmap::{compute_length_map, LengthMap};
use crate::quadrature::QuadratureSpec;
use crate::simulator::{for_each_trial, InputSpec, NetworkConfig};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval at 95% for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceSetup {
    pub activation: Activation,
    pub sigma_w: f64,
    pub sigma_b: f64,
    pub depth: usize,
    pub widths: Vec<usize>,
    pub trials: u64,
    pub epsilon: f64,
    pub seed: u64,
    pub input: InputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidthResult {
    pub width: usize,
    pub seed: u64,
    pub trials: u64,
    /// Trials with `|q_ℓ − q̃_ℓ| ≤ ε` for every layer.
    pub successes: u64,
    pub success_fraction: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Per-layer success counts, indexed `0..=D`.
    pub layer_successes: Vec<u64>,
    /// Overflowed trials, counted as failures.
    pub overflow_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub setup: ConvergenceSetup,
    pub length_map: LengthMap,
    pub widths: Vec<WidthResult>,
}

impl ConvergenceReport {
    /// True when no later width's success fraction falls clearly below an
    /// earlier one: for every `i < j`, the upper 95% bound at width `j` is at
    /// least the point estimate at width `i`.
    pub fn nondecreasing_within_ci(&self) -> bool {
        let w = &self.widths;
        (0..w.len()).all(|i| (i + 1..w.len()).all(|j| w[j].ci_hi >= w[i].success_fraction))
    }
}

/// Seed of the ensemble run at `width`, so that different widths never share
/// row streams.
pub fn width_seed(seed: u64, width: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (width as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fraction of trials, per width, whose whole length process stays within
/// `ε` of the length map.
pub fn convergence_report(
    setup: &ConvergenceSetup,
    workers: Option<usize>,
) -> Result<ConvergenceReport, StatsError> {
    if setup.widths.is_empty() || setup.widths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(StatsError::InvalidArgument(
            "widths must be nonempty and strictly increasing".into(),
        ));
    }
    if setup.trials == 0 || !(setup.epsilon > 0.0) {
        return Err(StatsError::InvalidArgument(
            "need trials >= 1 and epsilon > 0".into(),
        ));
    }
    let map = compute_length_map(
        &setup.activation,
        setup.sigma_w,
        setup.sigma_b,
        setup.depth,
        &QuadratureSpec::default(),
    )?;
    if let Some(layer) = map.diverged_at() {
        return Err(StatsError::MapDiverged { layer });
    }

    let mut results = Vec::with_capacity(setup.widths.len());
    for &width in &setup.widths {
        let seed = width_seed(setup.seed, width);
        let cfg = NetworkConfig::new(
            setup.activation.clone(),
            width,
            setup.depth,
            setup.sigma_w,
            setup.sigma_b,
        )
        .with_seed(seed)
        .with_input(setup.input);
        let mut layer_successes = vec![0u64; setup.depth + 1];
        let (mut successes, mut overflow_count) = (0u64, 0u64);
        for_each_trial(&cfg, setup.trials, None, workers, |_, outcome| match outcome {
            Ok(obs) => {
                let mut all = true;
                for (l, (&q, &qt)) in obs.q.iter().zip(&map.qtilde).enumerate() {
                    if (q - qt).abs() <= setup.epsilon {
                        layer_successes[l] += 1;
                    } else {
                        all = false;
                    }
                }
                successes += all as u64;
            }
            Err(_) => overflow_count += 1,
        })?;
        let (ci_lo, ci_hi) = wilson_interval(successes, setup.trials);
        results.push(WidthResult {
            width,
            seed,
            trials: setup.trials,
            successes,
            success_fraction: successes as f64 / setup.trials as f64,
            ci_lo,
            ci_hi,
            layer_successes,
            overflow_count,
        });
    }
    Ok(ConvergenceReport {
        setup: setup.clone(),
        length_map: map,
        widths: results,
    })
}
