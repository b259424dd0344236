//! Kolmogorov–Smirnov statistics and maximum-likelihood fits for the
//! Cauchy and centered Gaussian families.

use std::f64::consts::{FRAC_1_PI, PI};

use serde::Serialize;

use super::StatsError;
use crate::special::normal_cdf;

const MIN_SAMPLES: usize = 100;

/// Reference distribution for the KS comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Reference {
    Cauchy { location: f64, scale: f64 },
    /// Centered Gaussian with standard deviation `sigma`.
    Gaussian { sigma: f64 },
    /// Compare against the fitted members of both families.
    AutoFit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionFit {
    pub sample_count: usize,
    pub cauchy_location: f64,
    pub cauchy_scale: f64,
    /// Maximum-likelihood σ of `N(0, σ²)`, i.e. the root mean square.
    pub gaussian_sigma: f64,
    /// Against the Cauchy reference if one was given, else the fitted Cauchy.
    pub ks_vs_cauchy: f64,
    /// Against the Gaussian reference if one was given, else the fitted one.
    pub ks_vs_gaussian: f64,
    pub reference: Reference,
}

pub fn cauchy_cdf(x: f64, location: f64, scale: f64) -> f64 {
    0.5 + FRAC_1_PI * ((x - location) / scale).atan()
}

/// `sup_x |F̂(x) − F(x)|` for the empirical CDF of `samples`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    ks_sorted(&xs, cdf)
}

fn ks_sorted<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> f64 {
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < xs.len() {
        // ties: the empirical CDF jumps once over the whole run
        let mut j = i;
        while j + 1 < xs.len() && xs[j + 1] == xs[i] {
            j += 1;
        }
        let f = cdf(xs[i]);
        d = d.max(f - i as f64 / n).max((j + 1) as f64 / n - f);
        i = j + 1;
    }
    d.clamp(0.0, 1.0)
}

fn median_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn quantile_sorted(xs: &[f64], p: f64) -> f64 {
    let pos = p * (xs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    xs[lo] + (pos - lo as f64) * (xs[hi] - xs[lo])
}

fn cauchy_loglik(xs: &[f64], loc: f64, scale: f64) -> f64 {
    let n = xs.len() as f64;
    let s2 = scale * scale;
    n * (scale.ln() - PI.ln()) - xs.iter().map(|x| (s2 + (x - loc).powi(2)).ln()).sum::<f64>()
}

/// Maximum-likelihood `(location, scale)` of a Cauchy distribution.
///
/// Newton's method on both parameters from `(median, IQR/2)` with step
/// halving; if Newton fails to converge or leaves `scale > 0`, falls back to
/// golden-section search on the scale with the location fixed at the median.
pub fn fit_cauchy(samples: &[f64]) -> Result<(f64, f64), StatsError> {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    fit_cauchy_sorted(&xs)
}

fn fit_cauchy_sorted(xs: &[f64]) -> Result<(f64, f64), StatsError> {
    if xs.len() < 2 {
        return Err(StatsError::InsufficientSamples {
            needed: 2,
            got: xs.len(),
        });
    }
    if xs.first() == xs.last() {
        return Err(StatsError::DegenerateSample);
    }
    let median = median_sorted(xs);
    let iqr = quantile_sorted(xs, 0.75) - quantile_sorted(xs, 0.25);
    let spread = xs[xs.len() - 1] - xs[0];
    let start_scale = if iqr > 0.0 { 0.5 * iqr } else { spread * 1e-3 };

    if let Some(fit) = newton_cauchy(xs, median, start_scale) {
        return Ok(fit);
    }
    Ok((median, golden_scale(xs, median, start_scale)))
}

fn newton_cauchy(xs: &[f64], loc0: f64, scale0: f64) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    let (mut loc, mut scale) = (loc0, scale0);
    let mut ll = cauchy_loglik(xs, loc, scale);
    for _ in 0..200 {
        let s2 = scale * scale;
        let (mut g_loc, mut g_scale) = (0.0, n / scale);
        let (mut h_ll, mut h_ls, mut h_ss) = (0.0, 0.0, -n / s2);
        for &x in xs {
            let d = x - loc;
            let den = s2 + d * d;
            let den2 = den * den;
            g_loc += 2.0 * d / den;
            g_scale -= 2.0 * scale / den;
            h_ll += 2.0 * (d * d - s2) / den2;
            h_ls -= 4.0 * d * scale / den2;
            h_ss += 2.0 * (s2 - d * d) / den2;
        }
        let det = h_ll * h_ss - h_ls * h_ls;
        // Newton needs a negative definite Hessian to climb
        if !(det > 0.0 && h_ll < 0.0) {
            return None;
        }
        let d_loc = -(h_ss * g_loc - h_ls * g_scale) / det;
        let d_scale = -(h_ll * g_scale - h_ls * g_loc) / det;

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let (nl, ns) = (loc + t * d_loc, scale + t * d_scale);
            if ns > 0.0 {
                let nll = cauchy_loglik(xs, nl, ns);
                if nll >= ll {
                    loc = nl;
                    scale = ns;
                    ll = nll;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return None;
        }
        if (t * d_loc).abs() <= 1e-12 * scale && (t * d_scale).abs() <= 1e-12 * scale {
            return Some((loc, scale));
        }
    }
    None
}

fn golden_scale(xs: &[f64], loc: f64, start: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    // search ln(scale) over a generous bracket around the start value
    let (mut a, mut b) = (start.ln() - 10.0, start.ln() + 10.0);
    let f = |ls: f64| cauchy_loglik(xs, loc, ls.exp());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > 1e-12 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (0.5 * (a + b)).exp()
}

/// Fits both families and computes KS statistics against `reference`.
pub fn fit_and_test_distribution(
    samples: &[f64],
    reference: Reference,
) -> Result<DistributionFit, StatsError> {
    if samples.len() < MIN_SAMPLES {
        return Err(StatsError::InsufficientSamples {
            needed: MIN_SAMPLES,
            got: samples.len(),
        });
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    if xs.first() == xs.last() {
        return Err(StatsError::DegenerateSample);
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::InvalidArgument("samples must be finite".into()));
    }
    let (loc, scale) = fit_cauchy_sorted(&xs)?;
    let sigma = (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt();

    let (c_loc, c_scale) = match reference {
        Reference::Cauchy { location, scale } => (location, scale),
        _ => (loc, scale),
    };
    let g_sigma = match reference {
        Reference::Gaussian { sigma } => sigma,
        _ => sigma,
    };
    if !(c_scale > 0.0 && g_sigma > 0.0) {
        return Err(StatsError::InvalidArgument(
            "reference scale must be positive".into(),
        ));
    }
    Ok(DistributionFit {
        sample_count: xs.len(),
        cauchy_location: loc,
        cauchy_scale: scale,
        gaussian_sigma: sigma,
        ks_vs_cauchy: ks_sorted(&xs, |x| cauchy_cdf(x, c_loc, c_scale)),
        ks_vs_gaussian: ks_sorted(&xs, |x| normal_cdf(x / g_sigma)),
        reference,
    })
}
