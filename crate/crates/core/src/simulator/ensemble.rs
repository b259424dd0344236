use rayon::prelude::*;
use serde::Serialize;

use super::{forward_once, CaptureSpec, LayerObservables, NetworkConfig, SimError};
use crate::stats::histogram::Histogram;

/// Default bound on stored `(h_{ℓ,a}, h_{ℓ,b})` pairs.
pub const MAX_PAIRS_DEFAULT: usize = 1 << 20;

/// Trials evaluated per parallel batch. Batches are folded in trial order.
const BATCH: usize = 64;

/// Count, mean and sum of squared deviations, mergeable with Chan's update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RunningMoments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningMoments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningMoments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let (na, nb) = (self.count as f64, other.count as f64);
        let d = other.mean - self.mean;
        self.mean += d * nb / n;
        self.m2 += other.m2 + d * d * na * nb / n;
        self.count += other.count;
    }

    /// Unbiased sample variance; 0 for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }
}

/// Aggregate of an ensemble of trials.
///
/// `trial_count` counts completed trials; trials that overflowed are only
/// tallied in `overflow_count` and contribute nothing else.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub trial_count: u64,
    pub overflow_count: u64,
    /// Indexed by layer `0..=D`.
    pub q: Vec<RunningMoments>,
    pub r: Vec<RunningMoments>,
    pub units_per_trial: usize,
    pub histogram: Option<Histogram>,
    /// First `max_samples` captured values, in trial order.
    pub samples: Vec<f64>,
    pub max_samples: usize,
    /// First two captured units of each trial, bounded by `max_samples`.
    pub pairs: Vec<(f64, f64)>,
}

impl EnsembleStats {
    pub fn empty(depth: usize, capture: Option<&CaptureSpec>, width: usize) -> Self {
        let histogram = capture
            .and_then(|c| c.histogram)
            .map(|(bins, lo, hi)| Histogram::new(bins, lo, hi).expect("histogram spec"));
        EnsembleStats {
            trial_count: 0,
            overflow_count: 0,
            q: vec![RunningMoments::default(); depth + 1],
            r: vec![RunningMoments::default(); depth + 1],
            units_per_trial: capture.map_or(0, |c| c.units_per_trial(width)),
            histogram,
            samples: Vec::new(),
            max_samples: capture.map_or(0, |c| c.max_samples),
            pairs: Vec::new(),
        }
    }

    pub fn push(&mut self, obs: &LayerObservables) {
        self.trial_count += 1;
        for (m, &v) in self.q.iter_mut().zip(&obs.q) {
            m.push(v);
        }
        for (m, &v) in self.r.iter_mut().zip(&obs.r) {
            m.push(v);
        }
        if let Some(h) = &mut self.histogram {
            for &v in &obs.captured {
                h.add(v);
            }
        }
        let room = self.max_samples.saturating_sub(self.samples.len());
        self.samples
            .extend(obs.captured.iter().take(room).copied());
        if obs.captured.len() >= 2 && self.pairs.len() < self.max_samples {
            self.pairs.push((obs.captured[0], obs.captured[1]));
        }
    }

    /// Folds `other` into `self`. `other` is taken to come from later trials.
    pub fn merge(&mut self, other: &EnsembleStats) {
        self.trial_count += other.trial_count;
        self.overflow_count += other.overflow_count;
        for (a, b) in self.q.iter_mut().zip(&other.q) {
            a.merge(b);
        }
        for (a, b) in self.r.iter_mut().zip(&other.r) {
            a.merge(b);
        }
        match (&mut self.histogram, &other.histogram) {
            (Some(a), Some(b)) => a.merge(b).expect("histograms share binning"),
            (None, Some(b)) => self.histogram = Some(b.clone()),
            _ => {}
        }
        let room = self.max_samples.saturating_sub(self.samples.len());
        self.samples.extend(other.samples.iter().take(room).copied());
        let room = self.max_samples.saturating_sub(self.pairs.len());
        self.pairs.extend(other.pairs.iter().take(room).copied());
    }
}

/// One trial's result, as handed to [`for_each_trial`] observers.
pub type TrialOutcome = Result<LayerObservables, SimError>;

/// Runs trials `0..trials` on up to `workers` threads (all cores when
/// `None`) and hands each outcome to `observe` in trial-index order.
pub fn for_each_trial<F>(
    cfg: &NetworkConfig,
    trials: u64,
    capture: Option<&CaptureSpec>,
    workers: Option<usize>,
    mut observe: F,
) -> Result<(), SimError>
where
    F: FnMut(u64, TrialOutcome),
{
    cfg.validate()?;
    if let Some(c) = capture {
        c.validate(cfg)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| SimError::InvalidConfig(format!("thread pool: {e}")))?;
    let mut start = 0u64;
    while start < trials {
        let end = (start + BATCH as u64).min(trials);
        let outcomes: Vec<TrialOutcome> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|t| forward_once(cfg, t, capture))
                .collect()
        });
        for (t, o) in (start..end).zip(outcomes) {
            observe(t, o);
        }
        start = end;
    }
    Ok(())
}

/// Aggregates `trials` independent draws of `cfg`.
///
/// The result depends only on `(cfg, trials, capture)`, never on `workers`.
pub fn simulate_ensemble(
    cfg: &NetworkConfig,
    trials: u64,
    capture: Option<&CaptureSpec>,
    workers: Option<usize>,
) -> Result<EnsembleStats, SimError> {
    if trials == 0 {
        return Err(SimError::InvalidConfig("trials must be at least 1".into()));
    }
    if let Some((bins, lo, hi)) = capture.and_then(|c| c.histogram) {
        Histogram::new(bins, lo, hi)
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    }
    let mut stats = EnsembleStats::empty(cfg.depth, capture, cfg.width);
    for_each_trial(cfg, trials, capture, workers, |_, outcome| match outcome {
        Ok(obs) => stats.push(&obs),
        Err(SimError::Overflow { .. }) => stats.overflow_count += 1,
        Err(e) => panic!("validated configuration failed: {e}"),
    })?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::Activation;
    use proptest::prelude::*;

    #[test]
    fn singleton_ensemble() {
        let cfg = NetworkConfig::new(Activation::Tanh, 20, 3, 1.1, 0.2).with_seed(4);
        let stats = simulate_ensemble(&cfg, 1, None, Some(1)).unwrap();
        let obs = forward_once(&cfg, 0, None).unwrap();
        assert_eq!(stats.trial_count, 1);
        for l in 0..=3 {
            assert_eq!(stats.q[l].mean, obs.q[l]);
            assert_eq!(stats.r[l].mean, obs.r[l]);
            assert_eq!(stats.q[l].variance(), 0.0);
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let cfg = NetworkConfig::new(Activation::Relu, 24, 3, 1.4, 0.1).with_seed(8);
        let cap = CaptureSpec::all(2, 10_000).with_histogram(20, -3.0, 3.0);
        let a = simulate_ensemble(&cfg, 150, Some(&cap), Some(1)).unwrap();
        let b = simulate_ensemble(&cfg, 150, Some(&cap), Some(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn histogram_total_is_trials_times_units() {
        let cfg = NetworkConfig::new(Activation::Heaviside, 10, 2, 1.0, 0.0).with_seed(2);
        let cap = CaptureSpec::units(2, vec![0, 1, 7], 5).with_histogram(10, -1.0, 1.0);
        let s = simulate_ensemble(&cfg, 200, Some(&cap), None).unwrap();
        assert_eq!(s.histogram.as_ref().unwrap().total(), 200 * 3);
        assert_eq!(s.samples.len(), 5);
        assert_eq!(s.pairs.len(), 5);
    }

    #[test]
    fn overflows_are_counted_not_fatal() {
        let cfg = NetworkConfig::new(Activation::exp_square(5.0), 8, 5, 3.0, 1.0);
        let s = simulate_ensemble(&cfg, 10, None, None).unwrap();
        assert_eq!(s.overflow_count + s.trial_count, 10);
        assert!(s.overflow_count > 0);
    }

    #[test]
    fn zero_trials_rejected() {
        let cfg = NetworkConfig::new(Activation::Relu, 8, 2, 1.0, 0.0);
        assert!(simulate_ensemble(&cfg, 0, None, None).is_err());
    }

    fn moments_of(xs: &[f64]) -> RunningMoments {
        let mut m = RunningMoments::default();
        for &x in xs {
            m.push(x);
        }
        m
    }

    fn rel_close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1e-300)
    }

    proptest! {
        #[test]
        fn moment_merge_is_associative_and_commutative(
            a in proptest::collection::vec(-1e3f64..1e3, 0..40),
            b in proptest::collection::vec(-1e3f64..1e3, 0..40),
            c in proptest::collection::vec(-1e3f64..1e3, 0..40),
        ) {
            let (ma, mb, mc) = (moments_of(&a), moments_of(&b), moments_of(&c));
            let mut left = ma;
            left.merge(&mb);
            left.merge(&mc);
            let mut bc = mb;
            bc.merge(&mc);
            let mut right = ma;
            right.merge(&bc);
            let mut swapped = mc;
            swapped.merge(&mb);
            swapped.merge(&ma);
            let all: Vec<f64> = a.iter().chain(&b).chain(&c).copied().collect();
            let direct = moments_of(&all);
            for m in [right, swapped, direct] {
                prop_assert_eq!(left.count, m.count);
                prop_assert!(rel_close(left.mean, m.mean) || (left.mean - m.mean).abs() < 1e-9);
                prop_assert!(rel_close(left.m2, m.m2) || (left.m2 - m.m2).abs() < 1e-6);
            }
        }
    }
}
