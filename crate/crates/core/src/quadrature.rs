//! Gaussian second moments `E_{z~N(0,1)}[φ(√q z)²]` and the exact total
//! variation distance between centered Gaussians.
//!
//! Integrals run over a truncated window `[-a, a]` using composite
//! Gauss–Legendre panels split at the origin, so the kinks of `relu` and
//! the jump of `heaviside` always fall on a panel boundary. The window is
//! chosen from numerically estimated tail integrals. Divergence is detected
//! from the decay exponent of the integrand on the outermost decade of the
//! window and from the power-law exponent of `φ²` at the origin.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::Serialize;
use thiserror::Error;

use crate::activations::Activation;
use crate::special::normal_cdf;

/// Magnitude treated as numerical overflow.
pub const OVERFLOW_SENTINEL: f64 = 1e150;

const GL_ORDER: usize = 10;
/// Spacing of candidate truncation points.
const TAIL_STEP: f64 = 0.05;
/// Number of `q` values checked between `r` and `s`.
const TAIL_Q_GRID: usize = 16;
/// Points in the outer-decade exponent fit.
const FIT_POINTS: usize = 64;
/// Slack on "fitted z² coefficient ≥ 0" that absorbs rounding in `ln φ`.
const DECAY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("integral diverges at q = {q}: {reason}")]
    Diverged { q: f64, reason: String },
    #[error("no convergence at q = {q} within the panel budget (last error estimate {est_error:e})")]
    NonConvergent { q: f64, est_error: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Tolerances and limits for [`gaussian_second_moment`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Largest truncation point `a_max` ever used.
    pub max_truncation: f64,
    /// Initial number of panels over `[-a, a]`, half on each side of 0.
    pub panels: usize,
    /// Target for the unnormalized two-sided tail integral.
    pub tail_beta: f64,
    /// How many times the panel count may double.
    pub max_refinements: u32,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_truncation: 40.0,
            panels: 256,
            tail_beta: 1e-12,
            max_refinements: 8,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<(), QuadratureError> {
        let bad = |m: &str| Err(QuadratureError::InvalidArgument(m.to_string()));
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.max_truncation >= 8.0 && self.max_truncation.is_finite()) {
            return bad("max_truncation must be finite and at least 8");
        }
        if self.panels < 64 {
            return bad("panels must be at least 64");
        }
        if !(self.tail_beta > 0.0 && self.tail_beta <= 1e-6) {
            return bad("tail_beta must lie in (0, 1e-6]");
        }
        Ok(())
    }
}

/// A converged Gaussian second moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianMoment {
    pub value: f64,
    pub truncation_used: f64,
    pub est_error: f64,
    pub q: f64,
}

/// Result of [`tail_truncation_point`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Truncation {
    pub a: f64,
    /// False when the tail beyond `a_max` could not be bounded by `beta` and
    /// `a` was capped at `a_max`.
    pub certified: bool,
}

struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    fn new(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    fn get() -> &'static GaussLegendre {
        static RULE: OnceLock<GaussLegendre> = OnceLock::new();
        RULE.get_or_init(|| GaussLegendre::new(GL_ORDER))
    }

    /// Integral of `f` over `[lo, hi]` split into `panels` equal panels.
    fn integrate<F: Fn(f64) -> f64>(&self, f: &F, lo: f64, hi: f64, panels: usize) -> f64 {
        let h = (hi - lo) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let mid = lo + (p as f64 + 0.5) * h;
            let mut s = 0.0;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                s += w * f(mid + 0.5 * h * x);
            }
            total += 0.5 * h * s;
        }
        total
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// `φ(√q z)² exp(-z²/2)`, evaluated in log space so that large `φ` does not
/// overflow before the Gaussian factor is applied.
#[inline]
fn weighted_square(act: &Activation, sqrt_q: f64, z: f64) -> f64 {
    let v = act.eval(sqrt_q * z);
    let direct = v * v * (-0.5 * z * z).exp();
    if direct.is_finite() {
        direct
    } else {
        (2.0 * act.ln_abs(sqrt_q * z) - 0.5 * z * z).exp()
    }
}

/// Checks that `φ(√q z)² e^{-z²/2}` decays on the outermost decade of the
/// window and that `φ²` is integrable at the origin. On success returns, per
/// side, the fitted `(c0, c1)` of `ln(integrand) ≈ c0 + c1 z²` (or `None`
/// when `φ` vanishes on that decade).
fn divergence_test(
    act: &Activation,
    q: f64,
    a_max: f64,
) -> Result<[Option<(f64, f64)>; 2], QuadratureError> {
    let sqrt_q = q.sqrt();
    let mut fits = [None, None];
    for (side, sign) in [1.0, -1.0].into_iter().enumerate() {
        let lo = a_max / 10.0;
        let mut pts = Vec::with_capacity(FIT_POINTS);
        for k in 0..FIT_POINTS {
            let z = lo + (a_max - lo) * k as f64 / (FIT_POINTS - 1) as f64;
            let y = 2.0 * act.ln_abs(sign * sqrt_q * z) - 0.5 * z * z;
            if y == f64::NEG_INFINITY {
                continue;
            }
            if !y.is_finite() {
                return Err(QuadratureError::Diverged {
                    q,
                    reason: format!("integrand is not finite at z = {}", sign * z),
                });
            }
            pts.push((z * z, y));
        }
        if pts.len() >= 2 {
            let (c0, c1) = least_squares(&pts);
            if c1 >= -DECAY_SLACK {
                return Err(QuadratureError::Diverged {
                    q,
                    reason: format!(
                        "integrand does not decay: fitted z^2 coefficient {c1:.3e} on |z| in [{lo}, {a_max}]"
                    ),
                });
            }
            fits[side] = Some((c0, c1));
        }

        // power law of φ² at the origin: ∫ z^p dz near 0 needs p > -1
        let near: Vec<(f64, f64)> = (0..5)
            .map(|k| 10f64.powi(-4 - k))
            .filter_map(|z| {
                let y = 2.0 * act.ln_abs(sign * sqrt_q * z);
                y.is_finite().then_some((z.ln(), y))
            })
            .collect();
        if near.len() >= 2 {
            let (_, slope) = least_squares(&near);
            if slope <= -1.0 + 1e-6 {
                return Err(QuadratureError::Diverged {
                    q,
                    reason: format!("phi^2 ~ |z|^{slope:.3} at the origin is not integrable"),
                });
            }
        }
    }
    Ok(fits)
}

fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Smallest `a` (on a grid of spacing 0.05, capped at `a_max`) such that the
/// two-sided tail `∫_{|z|>a} φ(√q z)² e^{-z²/2} dz` is at most `beta` for 16
/// values of `q` spanning `[r, s]`.
pub fn tail_truncation_point(
    act: &Activation,
    r: f64,
    s: f64,
    beta: f64,
) -> Result<Truncation, QuadratureError> {
    tail_truncation_point_capped(act, r, s, beta, QuadratureSpec::default().max_truncation)
}

pub fn tail_truncation_point_capped(
    act: &Activation,
    r: f64,
    s: f64,
    beta: f64,
    a_max: f64,
) -> Result<Truncation, QuadratureError> {
    if !(r > 0.0 && r <= s && s.is_finite()) {
        return Err(QuadratureError::InvalidArgument(format!(
            "need 0 < r <= s < inf, got r = {r}, s = {s}"
        )));
    }
    if !(beta > 0.0) {
        return Err(QuadratureError::InvalidArgument(format!(
            "beta must be positive, got {beta}"
        )));
    }
    let rule = GaussLegendre::get();
    let steps = (a_max / TAIL_STEP).ceil() as usize;
    let grid_q = if r == s { 1 } else { TAIL_Q_GRID };

    // worst two-sided tail over q at each candidate point
    let mut worst = vec![0.0f64; steps + 1];
    let mut certified = true;
    for k in 0..grid_q {
        let q = if grid_q == 1 {
            r
        } else {
            r + (s - r) * k as f64 / (grid_q - 1) as f64
        };
        let fits = divergence_test(act, q, a_max)?;
        let sqrt_q = q.sqrt();

        // remainder beyond a_max from the fitted Gaussian decay
        let mut remainder = 0.0;
        for (c0, c1) in fits.into_iter().flatten() {
            let g = (c0 + c1 * a_max * a_max).exp();
            remainder += g / (2.0 * -c1 * a_max);
        }
        if remainder > beta {
            certified = false;
        }

        let mut tail = remainder;
        worst[steps] = worst[steps].max(tail);
        for j in (0..steps).rev() {
            let lo = j as f64 * TAIL_STEP;
            let hi = ((j + 1) as f64 * TAIL_STEP).min(a_max);
            let f = |z: f64| {
                weighted_square(act, sqrt_q, z) + weighted_square(act, sqrt_q, -z)
            };
            tail += rule.integrate(&f, lo, hi, 1);
            if !(tail <= OVERFLOW_SENTINEL) {
                return Err(QuadratureError::Diverged {
                    q,
                    reason: format!("tail integral exceeds {OVERFLOW_SENTINEL:e}"),
                });
            }
            worst[j] = worst[j].max(tail);
        }
    }

    if !certified {
        return Ok(Truncation {
            a: a_max,
            certified: false,
        });
    }
    let idx = worst.iter().position(|&t| t <= beta).unwrap_or(steps);
    Ok(Truncation {
        a: (idx as f64 * TAIL_STEP).min(a_max),
        certified: worst[idx.min(steps)] <= beta,
    })
}

/// `E_{z~N(0,1)}[φ(√q z)²]`, refined until the difference between successive
/// panel doublings meets `spec`.
pub fn gaussian_second_moment(
    act: &Activation,
    q: f64,
    spec: &QuadratureSpec,
) -> Result<GaussianMoment, QuadratureError> {
    spec.validate()?;
    if !(q > 0.0 && q.is_finite()) {
        return Err(QuadratureError::InvalidArgument(format!(
            "q must be positive and finite, got {q}"
        )));
    }
    let trunc = tail_truncation_point_capped(act, q, q, spec.tail_beta, spec.max_truncation)?;
    if !trunc.certified {
        return Err(QuadratureError::NonConvergent {
            q,
            est_error: f64::INFINITY,
        });
    }
    let a = trunc.a;
    if a == 0.0 {
        // the tail bound already holds with an empty window
        return Ok(GaussianMoment {
            value: 0.0,
            truncation_used: 0.0,
            est_error: 0.0,
            q,
        });
    }

    let rule = GaussLegendre::get();
    let sqrt_q = q.sqrt();
    let norm = 1.0 / (2.0 * PI).sqrt();
    let f = |z: f64| weighted_square(act, sqrt_q, z);
    let integrate = |panels: usize| -> f64 {
        let half = panels / 2;
        norm * (rule.integrate(&f, -a, 0.0, half) + rule.integrate(&f, 0.0, a, half))
    };

    let mut panels = spec.panels.max(2);
    let mut prev = integrate(panels);
    let mut est_error = f64::INFINITY;
    for _ in 0..=spec.max_refinements {
        panels *= 2;
        let next = integrate(panels);
        if !(next.abs() <= OVERFLOW_SENTINEL) {
            return Err(QuadratureError::Diverged {
                q,
                reason: format!("partial sums exceed {OVERFLOW_SENTINEL:e}"),
            });
        }
        est_error = (next - prev).abs();
        if est_error <= spec.abs_tol.max(spec.rel_tol * next.abs()) {
            return Ok(GaussianMoment {
                value: next.max(0.0),
                truncation_used: a,
                est_error,
                q,
            });
        }
        prev = next;
    }
    Err(QuadratureError::NonConvergent { q, est_error })
}

/// Exact total variation distance between `N(0, σ1²)` and `N(0, σ2²)`.
///
/// The densities cross at `±x*` with
/// `x*² = 2 σ1² σ2² ln(σ2/σ1) / (σ2² − σ1²)`, and the distance is
/// `2 (Φ(x*/σ_small) − Φ(x*/σ_large))`.
///
/// # Panics
/// If either standard deviation is not positive and finite.
pub fn gaussian_tv_distance(sigma1: f64, sigma2: f64) -> f64 {
    assert!(
        sigma1 > 0.0 && sigma2 > 0.0 && sigma1.is_finite() && sigma2.is_finite(),
        "standard deviations must be positive and finite"
    );
    if sigma1 == sigma2 {
        return 0.0;
    }
    let (lo, hi) = if sigma1 < sigma2 {
        (sigma1, sigma2)
    } else {
        (sigma2, sigma1)
    };
    let log_ratio = ((hi - lo) / lo).ln_1p();
    let x2 = 2.0 * lo * lo * hi * hi * log_ratio / ((hi - lo) * (hi + lo));
    let x = x2.sqrt();
    (2.0 * (normal_cdf(x / lo) - normal_cdf(x / hi))).clamp(0.0, 1.0)
}
