//! Activation functions and a numerical permissibility auditor.
//!
//! An activation is permissible when it is bounded on every finite interval,
//! satisfies `|φ(x)| ≤ exp(o(x²))` as `|x| → ∞`, and is measurable. The
//! auditor below only gathers numerical evidence for the first two
//! conditions; measurability is assumed.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

/// Coarse description of how fast an activation grows. Advisory only; no
/// numerical routine trusts it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthHint {
    Bounded,
    Polynomial,
    SubgaussianExponential,
    GaussianOrFaster,
    Singular,
}

/// A scalar activation function.
///
/// Every variant is a total function on the reals. `Reciprocal` is patched
/// to return `0` at the origin and `Heaviside` is the indicator of `z > 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    Relu,
    Heaviside,
    Tanh,
    Identity,
    Reciprocal,
    /// The constant zero function.
    Zero,
    /// `z ↦ exp(alpha z²)`, `alpha > 0`.
    ExpSquare { alpha: f64 },
    /// `z ↦ inner(scale · z)`.
    Scaled { scale: f64, inner: Box<Activation> },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseActivationError {
    #[error("unknown activation `{0}`")]
    Unknown(String),
    #[error("invalid parameter `{value}` for `{name}`")]
    BadParameter { name: &'static str, value: String },
}

impl Activation {
    pub fn exp_square(alpha: f64) -> Self {
        assert!(alpha > 0.0 && alpha.is_finite(), "exp_square needs alpha > 0");
        Activation::ExpSquare { alpha }
    }

    pub fn scaled(scale: f64, inner: Activation) -> Self {
        Activation::Scaled {
            scale,
            inner: Box::new(inner),
        }
    }

    /// Evaluates `φ(z)`.
    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Heaviside => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
            Activation::Reciprocal => {
                if z == 0.0 {
                    0.0
                } else {
                    1.0 / z
                }
            }
            Activation::Zero => 0.0,
            Activation::ExpSquare { alpha } => (alpha * z * z).exp(),
            Activation::Scaled { scale, inner } => inner.eval(scale * z),
        }
    }

    /// `ln |φ(z)|`, computed without overflow where the closed form allows it.
    /// Returns `-inf` where `φ(z) = 0`.
    pub fn ln_abs(&self, z: f64) -> f64 {
        match self {
            Activation::ExpSquare { alpha } => alpha * z * z,
            Activation::Scaled { scale, inner } => inner.ln_abs(scale * z),
            _ => self.eval(z).abs().ln(),
        }
    }

    pub fn growth_hint(&self) -> GrowthHint {
        match self {
            Activation::Heaviside | Activation::Tanh | Activation::Zero => GrowthHint::Bounded,
            Activation::Relu | Activation::Identity => GrowthHint::Polynomial,
            Activation::Reciprocal => GrowthHint::Singular,
            Activation::ExpSquare { .. } => GrowthHint::GaussianOrFaster,
            Activation::Scaled { inner, .. } => inner.growth_hint(),
        }
    }

    /// The innermost builtin, with all affine prefixes stripped.
    pub fn base(&self) -> &Activation {
        match self {
            Activation::Scaled { inner, .. } => inner.base(),
            other => other,
        }
    }

    /// Name in the same syntax [`FromStr`] accepts.
    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => f.write_str("relu"),
            Activation::Heaviside => f.write_str("heaviside"),
            Activation::Tanh => f.write_str("tanh"),
            Activation::Identity => f.write_str("identity"),
            Activation::Reciprocal => f.write_str("reciprocal"),
            Activation::Zero => f.write_str("zero"),
            Activation::ExpSquare { alpha } => write!(f, "exp_square:{alpha}"),
            Activation::Scaled { scale, inner } => write!(f, "scale:{scale}:{inner}"),
        }
    }
}

impl FromStr for Activation {
    type Err = ParseActivationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("scale:") {
            let (c, inner) = rest.split_once(':').ok_or_else(|| ParseActivationError::BadParameter {
                name: "scale",
                value: rest.to_string(),
            })?;
            let scale: f64 = c.parse().map_err(|_| ParseActivationError::BadParameter {
                name: "scale",
                value: c.to_string(),
            })?;
            if !scale.is_finite() {
                return Err(ParseActivationError::BadParameter {
                    name: "scale",
                    value: c.to_string(),
                });
            }
            return Ok(Activation::scaled(scale, inner.parse()?));
        }
        if let Some(a) = s.strip_prefix("exp_square:") {
            let alpha: f64 = a.parse().map_err(|_| ParseActivationError::BadParameter {
                name: "exp_square",
                value: a.to_string(),
            })?;
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(ParseActivationError::BadParameter {
                    name: "exp_square",
                    value: a.to_string(),
                });
            }
            return Ok(Activation::ExpSquare { alpha });
        }
        match s {
            "relu" => Ok(Activation::Relu),
            "heaviside" => Ok(Activation::Heaviside),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            "reciprocal" => Ok(Activation::Reciprocal),
            "zero" => Ok(Activation::Zero),
            other => Err(ParseActivationError::Unknown(other.to_string())),
        }
    }
}

impl Serialize for Activation {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// Where and how densely to probe an activation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeGrid {
    /// Smallest probed `|x|`.
    pub lo: f64,
    /// Largest probed `|x|`.
    pub hi: f64,
    pub points_per_sign: usize,
    /// `log|φ(x)|/x²` above this on the outermost decade is a growth violation.
    pub growth_threshold: f64,
    /// Any `|φ(x)|` above this is treated as unbounded.
    pub cap: f64,
}

impl Default for ProbeGrid {
    fn default() -> Self {
        ProbeGrid {
            lo: 1e-6,
            hi: 1e3,
            points_per_sign: 4096,
            growth_threshold: 1e-2,
            cap: 1e300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    PermissibleEvidence,
    ViolatesBoundedness,
    ViolatesGrowth,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermissibilityReport {
    pub activation: String,
    pub interval_bounded: bool,
    pub growth_exponent_estimate: f64,
    pub verdict: Verdict,
    pub probe_range: [f64; 2],
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuditError {
    #[error("probe grid needs 0 < lo < hi < inf, got [{lo}, {hi}]")]
    BadRange { lo: f64, hi: f64 },
    #[error("probe grid needs at least 1000 points, got {0}")]
    TooFewPoints(usize),
}

/// Inner decades scanned for blow-up toward the origin.
const INNER_DECADES: usize = 3;
/// Minimum per-decade growth factor of `max|φ|` toward the origin that counts
/// as a singularity.
const BLOWUP_RATIO: f64 = 3.0;

/// Gathers numerical evidence for or against permissibility.
///
/// The result is heuristic: passing the audit is not a proof, and a function
/// may fool a finite grid.
pub fn audit_permissibility(
    act: &Activation,
    grid: &ProbeGrid,
) -> Result<PermissibilityReport, AuditError> {
    if !(grid.lo > 0.0 && grid.lo < grid.hi && grid.hi.is_finite()) {
        return Err(AuditError::BadRange {
            lo: grid.lo,
            hi: grid.hi,
        });
    }
    if grid.points_per_sign < 1000 {
        return Err(AuditError::TooFewPoints(grid.points_per_sign));
    }

    let n = grid.points_per_sign;
    let log_lo = grid.lo.log10();
    let log_hi = grid.hi.log10();
    let step = (log_hi - log_lo) / (n - 1) as f64;
    let magnitudes: Vec<f64> = (0..n)
        .map(|k| 10f64.powf(log_lo + step * k as f64))
        .collect();

    let mut notes = Vec::new();

    // growth: max of log|φ(x)|/x² on the outermost decade, both signs
    let outer_start = grid.hi / 10.0;
    let mut growth = 0.0f64;
    for &m in magnitudes.iter().filter(|&&m| m >= outer_start) {
        for x in [m, -m] {
            let g = act.ln_abs(x) / (x * x);
            if g.is_nan() {
                continue;
            }
            growth = growth.max(g);
        }
    }

    // boundedness: sentinel cap anywhere off the outer decade, plus blow-up
    // of per-decade maxima toward the origin
    let mut capped_at = None;
    for &m in magnitudes.iter().filter(|&&m| m < outer_start) {
        for x in [m, -m] {
            let v = act.eval(x).abs();
            if !(v <= grid.cap) {
                capped_at.get_or_insert(x);
            }
        }
    }
    let blowup = inner_blowup(act, &magnitudes, grid.lo);
    if let Some(x) = capped_at {
        notes.push(format!("|phi| exceeds cap {:e} at x = {x:e}", grid.cap));
    }
    if let Some(sign) = blowup {
        notes.push(format!(
            "max |phi| grows by >= {BLOWUP_RATIO}x per decade approaching 0{sign}"
        ));
    }
    let interval_bounded = capped_at.is_none() && blowup.is_none();

    let verdict = if growth > grid.growth_threshold {
        notes.push(format!(
            "log|phi(x)|/x^2 reaches {growth:.6} on |x| in [{outer_start:e}, {:e}]",
            grid.hi
        ));
        Verdict::ViolatesGrowth
    } else if !interval_bounded {
        Verdict::ViolatesBoundedness
    } else if growth > grid.growth_threshold / 10.0 {
        notes.push("growth exponent is small but not clearly zero".to_string());
        Verdict::Inconclusive
    } else {
        Verdict::PermissibleEvidence
    };
    notes.push("numerical evidence only; measurability is assumed".to_string());

    Ok(PermissibilityReport {
        activation: act.name(),
        interval_bounded,
        growth_exponent_estimate: growth,
        verdict,
        probe_range: [grid.lo, grid.hi],
        notes: notes.join("; "),
    })
}

/// Returns the side (`+` or `-`) on which `max|φ|` over successive decades
/// increases geometrically as `|x| → lo`.
fn inner_blowup(act: &Activation, magnitudes: &[f64], lo: f64) -> Option<char> {
    for (sign, s) in [(1.0, '+'), (-1.0, '-')] {
        let mut maxima = [0.0f64; INNER_DECADES];
        for &m in magnitudes {
            let decade = (m / lo).log10().floor();
            if decade < 0.0 || decade >= INNER_DECADES as f64 {
                continue;
            }
            let v = act.eval(sign * m).abs();
            let slot = &mut maxima[decade as usize];
            if v > *slot || v.is_nan() {
                *slot = if v.is_nan() { f64::INFINITY } else { v };
            }
        }
        let growing = maxima
            .windows(2)
            .all(|w| w[0] > 0.0 && w[0] >= BLOWUP_RATIO * w[1]);
        if growing {
            return Some(s);
        }
    }
    None
}
