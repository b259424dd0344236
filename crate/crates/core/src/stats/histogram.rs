use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HistogramError {
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("histogram range must satisfy lo < hi, got [{lo}, {hi}]")]
    BadRange { lo: f64, hi: f64 },
    #[error("cannot merge histograms with different binning")]
    Mismatch,
}

/// Equal-width bins on `[lo, hi]` plus underflow and overflow counters.
///
/// Bins are half-open `[e_k, e_{k+1})` except the last, which also holds
/// `hi`. Values below `lo` go to `underflow`; values above `hi` and NaN go to
/// `overflow`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn new(bins: usize, lo: f64, hi: f64) -> Result<Self, HistogramError> {
        if bins == 0 {
            return Err(HistogramError::NoBins);
        }
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(HistogramError::BadRange { lo, hi });
        }
        Ok(Histogram {
            lo,
            hi,
            counts: vec![0; bins],
            underflow: 0,
            overflow: 0,
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn edges(&self) -> Vec<f64> {
        let n = self.bins();
        (0..=n)
            .map(|k| {
                if k == n {
                    self.hi
                } else {
                    self.lo + (self.hi - self.lo) * k as f64 / n as f64
                }
            })
            .collect()
    }

    pub fn add(&mut self, x: f64) {
        if x < self.lo {
            self.underflow += 1;
        } else if x <= self.hi {
            let n = self.bins();
            let k = ((x - self.lo) / (self.hi - self.lo) * n as f64) as usize;
            self.counts[k.min(n - 1)] += 1;
        } else {
            self.overflow += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }

    pub fn merge(&mut self, other: &Histogram) -> Result<(), HistogramError> {
        if self.lo != other.lo || self.hi != other.hi || self.bins() != other.bins() {
            return Err(HistogramError::Mismatch);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.underflow += other.underflow;
        self.overflow += other.overflow;
        Ok(())
    }
}

/// Bins `samples` into `bins` equal bins on `range`.
pub fn histogram(samples: &[f64], bins: usize, range: (f64, f64)) -> Result<Histogram, HistogramError> {
    let mut h = Histogram::new(bins, range.0, range.1)?;
    for &x in samples {
        h.add(x);
    }
    Ok(h)
}
