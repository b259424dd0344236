//! Monte Carlo of the finite-width random network.
//!
//! `h_ℓ = W_ℓ x_{ℓ-1} + b_ℓ`, `x_ℓ = φ(h_ℓ)`, with `W` entries drawn from
//! `N(0, σ_w²/N)` and `b` entries from `N(0, σ_b²)`. Weights are never
//! stored: row `i` of layer `ℓ` in trial `t` is regenerated from the normal
//! stream keyed by `(master_seed, t, ℓ, i)`, whose first `N` draws are the
//! row's weights and whose next draw is the bias. Memory per trial is `O(N)`.

mod ensemble;
pub mod stream;

pub use ensemble::{
    for_each_trial, simulate_ensemble, EnsembleStats, RunningMoments, TrialOutcome,
    MAX_PAIRS_DEFAULT,
};

use serde::Serialize;
use thiserror::Error;

use crate::activations::Activation;
use crate::quadrature::OVERFLOW_SENTINEL;
use stream::{philox4x32, FillBuffers, NormalStream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("overflow in layer {layer} of trial {trial}")]
    Overflow { trial: u64, layer: usize },
}

/// How the input `x_0 ∈ {-1, 1}^N` is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InputSpec {
    AllOnes,
    /// `+1, -1, +1, ...`
    Alternating,
    /// Signs drawn from a dedicated stream keyed by `seed`.
    RandomSigns { seed: u64 },
}

impl InputSpec {
    pub fn materialize(&self, width: usize) -> Vec<f64> {
        match *self {
            InputSpec::AllOnes => vec![1.0; width],
            InputSpec::Alternating => (0..width)
                .map(|j| if j % 2 == 0 { 1.0 } else { -1.0 })
                .collect(),
            InputSpec::RandomSigns { seed } => {
                let key = [seed as u32, (seed >> 32) as u32];
                let mut out = Vec::with_capacity(width);
                let mut block = 0u32;
                while out.len() < width {
                    // layer 0 is never used by weight streams
                    let words = philox4x32([block, 0, 0, u32::MAX], key);
                    for w in words {
                        for bit in 0..32 {
                            if out.len() < width {
                                out.push(if (w >> bit) & 1 == 1 { 1.0 } else { -1.0 });
                            }
                        }
                    }
                    block += 1;
                }
                out
            }
        }
    }
}

/// Full description of one random-network experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkConfig {
    pub width: usize,
    pub depth: usize,
    /// Standard deviation scale of the weights (entries have variance `σ_w²/N`).
    pub sigma_w: f64,
    /// Standard deviation of the biases.
    pub sigma_b: f64,
    pub input: InputSpec,
    pub activation: Activation,
    pub master_seed: u64,
}

impl NetworkConfig {
    pub fn new(activation: Activation, width: usize, depth: usize, sigma_w: f64, sigma_b: f64) -> Self {
        NetworkConfig {
            width,
            depth,
            sigma_w,
            sigma_b,
            input: InputSpec::AllOnes,
            activation,
            master_seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn with_input(mut self, input: InputSpec) -> Self {
        self.input = input;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.width == 0 || self.width > u32::MAX as usize {
            return bad(format!("width must be in 1..=2^32-1, got {}", self.width));
        }
        if self.depth == 0 || self.depth > u32::MAX as usize {
            return bad(format!("depth must be positive, got {}", self.depth));
        }
        if !(self.sigma_w >= 0.0 && self.sigma_b >= 0.0)
            || !self.sigma_w.is_finite()
            || !self.sigma_b.is_finite()
        {
            return bad(format!(
                "sigma_w and sigma_b must be finite and nonnegative, got {}, {}",
                self.sigma_w, self.sigma_b
            ));
        }
        Ok(())
    }
}

/// Which units of which layer to record, and how many raw values to keep
/// across an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptureSpec {
    /// 1-based layer index.
    pub layer: usize,
    /// 0-based unit indices; `None` means every unit.
    pub units: Option<Vec<usize>>,
    /// Bound on raw values kept by [`EnsembleStats`].
    pub max_samples: usize,
    /// Optional `(bins, lo, hi)` histogram of every captured value.
    pub histogram: Option<(usize, f64, f64)>,
}

impl CaptureSpec {
    pub fn all(layer: usize, max_samples: usize) -> Self {
        CaptureSpec {
            layer,
            units: None,
            max_samples,
            histogram: None,
        }
    }

    pub fn units(layer: usize, units: Vec<usize>, max_samples: usize) -> Self {
        CaptureSpec {
            layer,
            units: Some(units),
            max_samples,
            histogram: None,
        }
    }

    pub fn with_histogram(mut self, bins: usize, lo: f64, hi: f64) -> Self {
        self.histogram = Some((bins, lo, hi));
        self
    }

    /// Number of units captured per trial in a network of the given width.
    pub fn units_per_trial(&self, width: usize) -> usize {
        match &self.units {
            None => width,
            Some(u) => u.iter().filter(|&&i| i < width).count(),
        }
    }

    fn validate(&self, cfg: &NetworkConfig) -> Result<(), SimError> {
        if self.layer == 0 || self.layer > cfg.depth {
            return Err(SimError::InvalidConfig(format!(
                "capture layer {} outside 1..={}",
                self.layer, cfg.depth
            )));
        }
        if let Some(u) = &self.units {
            if let Some(&bad) = u.iter().find(|&&i| i >= cfg.width) {
                return Err(SimError::InvalidConfig(format!(
                    "capture unit {bad} outside 0..{}",
                    cfg.width
                )));
            }
        }
        Ok(())
    }
}

/// Per-layer empirical lengths for one random draw.
///
/// `q[ℓ] = (1/N) Σ h_{ℓ,i}²` and `r[ℓ] = (1/N) Σ x_{ℓ,i}²` for
/// `ℓ = 1..=D`; `q[0] = r[0] = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerObservables {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    /// Raw pre-activations of the captured units, in unit order.
    pub captured: Vec<f64>,
}

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent accumulators, fixed order
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Runs trial `trial` of `cfg` and returns its per-layer observables.
pub fn forward_once(
    cfg: &NetworkConfig,
    trial: u64,
    capture: Option<&CaptureSpec>,
) -> Result<LayerObservables, SimError> {
    cfg.validate()?;
    if let Some(c) = capture {
        c.validate(cfg)?;
    }
    let trial32 = u32::try_from(trial)
        .map_err(|_| SimError::InvalidConfig(format!("trial index {trial} exceeds 2^32-1")))?;

    let n = cfg.width;
    let w_scale = cfg.sigma_w / (n as f64).sqrt();
    let mut x = cfg.input.materialize(n);
    let mut h = vec![0.0; n];
    let mut row = vec![0.0; n + 1];
    let mut buffers = FillBuffers::default();
    let mut q = Vec::with_capacity(cfg.depth + 1);
    let mut r = Vec::with_capacity(cfg.depth + 1);
    q.push(1.0);
    r.push(1.0);
    let mut captured = Vec::new();

    for layer in 1..=cfg.depth {
        let mut q_sum = CompensatedSum::default();
        for (i, hi) in h.iter_mut().enumerate() {
            let mut s = NormalStream::new(cfg.master_seed, trial32, layer as u32, i as u32);
            s.fill_normals_with(&mut row, &mut buffers);
            let v = w_scale * dot(&row[..n], &x) + cfg.sigma_b * row[n];
            if !(v.abs() <= OVERFLOW_SENTINEL) {
                return Err(SimError::Overflow { trial, layer });
            }
            *hi = v;
            q_sum.add(v * v);
        }
        let mut r_sum = CompensatedSum::default();
        for (xi, &hi) in x.iter_mut().zip(&h) {
            let v = cfg.activation.eval(hi);
            if !(v.abs() <= OVERFLOW_SENTINEL) {
                return Err(SimError::Overflow { trial, layer });
            }
            *xi = v;
            r_sum.add(v * v);
        }
        q.push(q_sum.value() / n as f64);
        r.push(r_sum.value() / n as f64);

        if let Some(c) = capture.filter(|c| c.layer == layer) {
            match &c.units {
                None => captured.extend_from_slice(&h),
                Some(units) => captured.extend(units.iter().map(|&i| h[i])),
            }
        }
    }
    Ok(LayerObservables { q, r, captured })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_parameters_give_zero_lengths() {
        for act in [Activation::Relu, Activation::Tanh, Activation::Reciprocal] {
            let cfg = NetworkConfig::new(act, 7, 4, 0.0, 0.0).with_seed(3);
            let obs = forward_once(&cfg, 0, None).unwrap();
            assert_eq!(obs.q, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
            assert_eq!(obs.r, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn reproducible_bit_for_bit() {
        let cfg = NetworkConfig::new(Activation::Tanh, 33, 3, 1.2, 0.3).with_seed(99);
        let cap = CaptureSpec::all(2, 100);
        let a = forward_once(&cfg, 5, Some(&cap)).unwrap();
        let b = forward_once(&cfg, 5, Some(&cap)).unwrap();
        assert_eq!(a, b);
        let c = forward_once(&cfg, 6, Some(&cap)).unwrap();
        assert_ne!(a.q, c.q);
        assert_eq!(a.captured.len(), 33);
    }

    #[test]
    fn layer_one_matches_manual_row_streams() {
        let cfg = NetworkConfig::new(Activation::Identity, 5, 1, 0.8, 0.6)
            .with_seed(11)
            .with_input(InputSpec::Alternating);
        let obs = forward_once(&cfg, 2, Some(&CaptureSpec::all(1, 10))).unwrap();
        let x0 = cfg.input.materialize(5);
        for i in 0..5 {
            let mut s = NormalStream::new(11, 2, 1, i as u32);
            let mut row = vec![0.0; 6];
            s.fill_normals(&mut row);
            let expected = 0.8 / 5f64.sqrt() * dot(&row[..5], &x0) + 0.6 * row[5];
            assert_eq!(obs.captured[i].to_bits(), expected.to_bits());
        }
    }

    #[test]
    fn inputs_are_signs() {
        for spec in [
            InputSpec::AllOnes,
            InputSpec::Alternating,
            InputSpec::RandomSigns { seed: 5 },
        ] {
            let x = spec.materialize(300);
            assert_eq!(x.len(), 300);
            assert!(x.iter().all(|&v| v == 1.0 || v == -1.0));
        }
        let x = InputSpec::RandomSigns { seed: 5 }.materialize(300);
        let pos = x.iter().filter(|&&v| v > 0.0).count();
        assert!((100..200).contains(&pos));
    }

    #[test]
    fn overflow_is_reported() {
        let cfg = NetworkConfig::new(Activation::exp_square(5.0), 16, 6, 3.0, 1.0).with_seed(1);
        match forward_once(&cfg, 0, None) {
            Err(SimError::Overflow { layer, .. }) => assert!(layer >= 1),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn invalid_configs() {
        let cfg = NetworkConfig::new(Activation::Relu, 0, 1, 1.0, 0.0);
        assert!(forward_once(&cfg, 0, None).is_err());
        let cfg = NetworkConfig::new(Activation::Relu, 4, 2, -1.0, 0.0);
        assert!(forward_once(&cfg, 0, None).is_err());
        let cfg = NetworkConfig::new(Activation::Relu, 4, 2, 1.0, 0.0);
        assert!(forward_once(&cfg, 0, Some(&CaptureSpec::all(3, 1))).is_err());
        assert!(forward_once(&cfg, 0, Some(&CaptureSpec::units(1, vec![4], 1))).is_err());
        assert!(forward_once(&cfg, 1 << 33, None).is_err());
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }
}
