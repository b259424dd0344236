//! The length map `q̃_ℓ = σ_w² tr_{ℓ-1} + σ_b²`, `tr_ℓ = E[φ(√q̃_ℓ z)²]`,
//! with `q̃_0 = tr_0 = 1`.

use serde::Serialize;
use thiserror::Error;

use crate::activations::Activation;
use crate::quadrature::{gaussian_second_moment, QuadratureError, QuadratureSpec};

/// Iterates above this magnitude count as divergence of the fixed-point map.
const FIXED_POINT_CAP: f64 = 1e100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerStatus {
    Finite,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LengthMapError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("moment diverges at q = {q}: {reason}")]
    Diverged { q: f64, reason: String },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// `qtilde[ℓ]` and `trtilde[ℓ]` for `ℓ = 0..=depth`.
///
/// A layer is diverged when its `tr` is undefined; every later layer is then
/// diverged too. Diverged entries hold `+inf`, except that `qtilde` of the
/// first diverged layer is still finite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthMap {
    pub activation: String,
    pub sigma_w: f64,
    pub sigma_b: f64,
    pub depth: usize,
    pub qtilde: Vec<f64>,
    pub trtilde: Vec<f64>,
    pub status: Vec<LayerStatus>,
}

impl LengthMap {
    pub fn is_finite(&self) -> bool {
        self.status.iter().all(|s| *s == LayerStatus::Finite)
    }

    /// First diverged layer, if any.
    pub fn diverged_at(&self) -> Option<usize> {
        self.status.iter().position(|s| *s == LayerStatus::Diverged)
    }
}

/// `E[φ(√q z)²]`, with `q = 0` handled as the point mass at 0.
fn tr_of(act: &Activation, q: f64, spec: &QuadratureSpec) -> Result<f64, QuadratureError> {
    if q == 0.0 {
        let v = act.eval(0.0);
        return Ok(v * v);
    }
    gaussian_second_moment(act, q, spec).map(|m| m.value)
}

pub fn compute_length_map(
    act: &Activation,
    sigma_w: f64,
    sigma_b: f64,
    depth: usize,
    spec: &QuadratureSpec,
) -> Result<LengthMap, LengthMapError> {
    if !(sigma_w >= 0.0 && sigma_b >= 0.0 && sigma_w.is_finite() && sigma_b.is_finite()) {
        return Err(LengthMapError::InvalidArgument(format!(
            "sigma_w and sigma_b must be finite and nonnegative, got {sigma_w}, {sigma_b}"
        )));
    }
    if depth < 1 {
        return Err(LengthMapError::InvalidArgument("depth must be at least 1".into()));
    }
    spec.validate()?;

    let (sw2, sb2) = (sigma_w * sigma_w, sigma_b * sigma_b);
    let mut qtilde = vec![1.0];
    let mut trtilde = vec![1.0];
    let mut status = vec![LayerStatus::Finite];
    for _ in 1..=depth {
        let prev = *trtilde.last().unwrap();
        if status.last() == Some(&LayerStatus::Diverged) {
            qtilde.push(f64::INFINITY);
            trtilde.push(f64::INFINITY);
            status.push(LayerStatus::Diverged);
            continue;
        }
        let q = sw2 * prev + sb2;
        qtilde.push(q);
        match tr_of(act, q, spec) {
            Ok(tr) => {
                trtilde.push(tr);
                status.push(LayerStatus::Finite);
            }
            Err(QuadratureError::Diverged { .. }) => {
                trtilde.push(f64::INFINITY);
                status.push(LayerStatus::Diverged);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(LengthMap {
        activation: act.name(),
        sigma_w,
        sigma_b,
        depth,
        qtilde,
        trtilde,
        status,
    })
}

/// Picard iteration of `q ↦ σ_w² E[φ(√q z)²] + σ_b²` started from the
/// length map's first layer `q̃_1 = σ_w² + σ_b²` (that is, from `tr_0 = 1`).
///
/// Returns `Ok(Some(q))` once `|F(q) − q| ≤ tol`, `Ok(None)` if that does not
/// happen within `max_iter` steps.
pub fn length_map_fixed_point(
    act: &Activation,
    sigma_w: f64,
    sigma_b: f64,
    tol: f64,
    max_iter: usize,
    spec: &QuadratureSpec,
) -> Result<Option<f64>, LengthMapError> {
    if !(sigma_w > 0.0 && sigma_b >= 0.0 && sigma_w.is_finite() && sigma_b.is_finite()) {
        return Err(LengthMapError::InvalidArgument(format!(
            "need sigma_w > 0 and sigma_b >= 0, got {sigma_w}, {sigma_b}"
        )));
    }
    if !(tol > 0.0) {
        return Err(LengthMapError::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let (sw2, sb2) = (sigma_w * sigma_w, sigma_b * sigma_b);
    let step = |q: f64| -> Result<f64, LengthMapError> {
        match tr_of(act, q, spec) {
            Ok(tr) => Ok(sw2 * tr + sb2),
            Err(QuadratureError::Diverged { q, reason }) => {
                Err(LengthMapError::Diverged { q, reason })
            }
            Err(e) => Err(e.into()),
        }
    };
    let mut q = sw2 + sb2;
    for _ in 0..max_iter {
        let next = step(q)?;
        if (next - q).abs() <= tol {
            return Ok(Some(q));
        }
        if !(next.abs() <= FIXED_POINT_CAP) {
            return Err(LengthMapError::Diverged {
                q: next,
                reason: format!("iterate exceeds {FIXED_POINT_CAP:e}"),
            });
        }
        q = next;
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(act: Activation, sw: f64, sb: f64, depth: usize) -> LengthMap {
        compute_length_map(&act, sw, sb, depth, &QuadratureSpec::default()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn relu_critical() {
        let m = map(Activation::Relu, 2f64.sqrt(), 0.0, 5);
        close(&m.qtilde, &[1.0, 2.0, 2.0, 2.0, 2.0, 2.0], 1e-8);
        close(&m.trtilde, &[1.0; 6], 1e-8);
        assert!(m.is_finite());
    }

    #[test]
    fn heaviside_with_bias() {
        let m = map(Activation::Heaviside, 1.0, 1.0, 3);
        close(&m.qtilde, &[1.0, 2.0, 1.5, 1.5], 1e-10);
        close(&m.trtilde, &[1.0, 0.5, 0.5, 0.5], 1e-10);
    }

    #[test]
    fn identity_affine_closed_form() {
        let (sw2, sb2): (f64, f64) = (0.5, 0.25);
        let m = map(Activation::Identity, sw2.sqrt(), sb2.sqrt(), 3);
        close(&m.qtilde, &[1.0, 0.75, 0.625, 0.5625], 1e-10);
    }

    #[test]
    fn exp_square_diverges_after_first_layer() {
        // σ_w² + σ_b² = 1/(4α²) with α = 1
        let m = map(Activation::exp_square(1.0), 0.5, 0.0, 4);
        assert_eq!(m.diverged_at(), Some(1));
        assert_eq!(m.qtilde[1], 0.25);
        assert!(m.status[1..].iter().all(|s| *s == LayerStatus::Diverged));
        assert!(m.trtilde[1..].iter().all(|t| t.is_infinite()));
    }

    #[test]
    fn zero_variance_uses_point_mass() {
        let m = map(Activation::Tanh, 0.0, 0.0, 3);
        assert_eq!(m.qtilde, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.trtilde, vec![1.0, 0.0, 0.0, 0.0]);
        let m = map(Activation::exp_square(2.0), 0.0, 0.0, 2);
        assert_eq!(m.trtilde, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn recursion_is_bit_consistent() {
        let spec = QuadratureSpec::default();
        for (act, sw, sb) in [
            (Activation::Tanh, 1.3, 0.2),
            (Activation::Relu, 1.1, 0.5),
            (Activation::Heaviside, 0.7, 0.1),
        ] {
            let m = map(act.clone(), sw, sb, 6);
            for l in 1..=6 {
                let q = sw * sw * m.trtilde[l - 1] + sb * sb;
                assert_eq!(q.to_bits(), m.qtilde[l].to_bits());
                let tr = gaussian_second_moment(&act, q, &spec).unwrap().value;
                assert_eq!(tr.to_bits(), m.trtilde[l].to_bits());
            }
        }
    }

    #[test]
    fn homogeneous_growth_without_bias() {
        for (act, h) in [(Activation::Relu, 0.5), (Activation::Identity, 1.0)] {
            let sw: f64 = 1.3;
            let m = map(act, sw, 0.0, 6);
            for l in 1..=6 {
                let expected = (sw * sw * h).powi(l as i32 - 1) * sw * sw;
                assert!((m.qtilde[l] - expected).abs() <= 1e-8 * expected);
                assert!((m.trtilde[l] / m.qtilde[l] - h).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn positivity() {
        for act in [
            Activation::Relu,
            Activation::Heaviside,
            Activation::Tanh,
            Activation::Identity,
        ] {
            let m = map(act, 0.3, 0.0, 8);
            assert!(m.qtilde.iter().chain(&m.trtilde).all(|&v| v > 0.0));
        }
    }

    #[test]
    fn fixed_points() {
        let spec = QuadratureSpec::default();
        let tol = 1e-9;
        let fp = |act, sw, sb| length_map_fixed_point(&act, sw, sb, tol, 1000, &spec);
        let q = fp(Activation::Relu, 2f64.sqrt(), 0.0).unwrap().unwrap();
        assert!((q - 2.0).abs() < 1e-8);
        let q = fp(Activation::Heaviside, 1.0, 1.0).unwrap().unwrap();
        assert!((q - 1.5).abs() < 1e-8);
        let q = fp(Activation::Identity, 0.5f64.sqrt(), 0.5).unwrap().unwrap();
        assert!((q - 0.5).abs() < 1e-8);
        // geometric growth never settles
        assert!(matches!(
            fp(Activation::Identity, 2.0, 0.0),
            Err(LengthMapError::Diverged { .. })
        ));
        assert_eq!(
            length_map_fixed_point(&Activation::Identity, 0.9, 0.0, 1e-12, 3, &spec).unwrap(),
            None
        );
        assert!(matches!(
            fp(Activation::exp_square(1.0), 0.5, 0.0),
            Err(LengthMapError::Diverged { .. })
        ));
    }

    #[test]
    fn rejects_bad_arguments() {
        let spec = QuadratureSpec::default();
        assert!(compute_length_map(&Activation::Relu, -1.0, 0.0, 3, &spec).is_err());
        assert!(compute_length_map(&Activation::Relu, 1.0, 0.0, 0, &spec).is_err());
        assert!(length_map_fixed_point(&Activation::Relu, 0.0, 0.0, 1e-6, 10, &spec).is_err());
    }

    proptest::proptest! {
        #[test]
        fn relu_map_is_affine_in_previous_length(sw in 0.0f64..3.0, sb in 0.0f64..2.0) {
            let m = compute_length_map(&Activation::Relu, sw, sb, 4, &QuadratureSpec::default()).unwrap();
            for l in 1..=4 {
                let expect = sw * sw * m.trtilde[l - 1] + sb * sb;
                proptest::prop_assert!((m.qtilde[l] - expect).abs() <= 1e-12 * expect.max(1.0));
                proptest::prop_assert!((m.trtilde[l] - m.qtilde[l] / 2.0).abs() <= 1e-8 * m.qtilde[l].max(1.0));
            }
        }

        #[test]
        fn bounded_activation_keeps_tr_below_bound(sw in 0.0f64..5.0, sb in 0.0f64..5.0) {
            let m = compute_length_map(&Activation::Tanh, sw, sb, 3, &QuadratureSpec::default()).unwrap();
            for l in 1..=3 {
                proptest::prop_assert!(m.trtilde[l] >= 0.0 && m.trtilde[l] <= 1.0);
            }
        }
    }
}
