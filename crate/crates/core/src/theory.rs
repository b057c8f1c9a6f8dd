//! Lambert W and the confidence-ratio bound for energy-conserving logits.
//!
//! For logits with zero Boltzmann mean `Σ p_i z_i = 0` the largest logit
//! satisfies `z_max e^{z_max} ≤ (n-1)/e`, hence `z_max ≤ W((n-1)/e)`. That
//! inequality is checked exactly. The companion ratio bound
//! `p_max / p_min ≤ e^{W((n-1)/e) + 1}` does not follow for arbitrary logits
//! (`z_min` can be very negative while the mean stays at zero), so it is only
//! recorded, never assumed.

use std::f64::consts::E;

use crate::diffcore::softmax;
use crate::error::{Error, Result};

/// Absolute slack allowed on the `z_max` inequality to absorb rounding.
pub const Z_MAX_TOL: f64 = 1e-9;

/// Residual scaled by `max(1, |x|)`. Absolute residuals below `1e-12` are not
/// representable once `|x|` grows past a few thousand.
pub fn lambert_residual(w: f64, x: f64) -> f64 {
    (w * w.exp() - x).abs() / x.abs().max(1.0)
}

/// Principal branch `W0(x)` for `x ≥ -1/e` by Halley iteration.
pub fn lambert_w0(x: f64) -> Result<f64> {
    let branch = -1.0 / E;
    if x.is_nan() || x < branch {
        return Err(Error::Domain { func: "lambert_w0", value: x });
    }
    if x == branch {
        return Ok(-1.0);
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let mut w = x.ln_1p().max(-1.0);
    // Near the branch point the Halley denominator vanishes at w = -1; start
    // from the square-root expansion instead.
    if x < -0.3 {
        let p = (2.0 * (E * x + 1.0)).sqrt();
        w = -1.0 + p - p * p / 3.0;
    }
    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        let next = (w - step).max(-1.0);
        if (next - w).abs() <= 4.0 * f64::EPSILON * w.abs().max(1e-300) {
            w = next;
            break;
        }
        w = next;
    }
    Ok(w)
}

/// `e^{W((n-1)/e) + 1}`.
pub fn ratio_bound(n: usize) -> Result<f64> {
    Ok((z_max_bound(n)? + 1.0).exp())
}

/// `W((n-1)/e)`.
pub fn z_max_bound(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::Domain {
            func: "ratio_bound",
            value: n as f64,
        });
    }
    lambert_w0((n - 1) as f64 / E)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub n: usize,
    pub mean_energy: f64,
    pub z_max: f64,
    pub z_min: f64,
    /// `p_max / p_min`
    pub ratio: f64,
    pub bound: f64,
    pub z_max_bound: f64,
    pub satisfied_ratio: bool,
    pub satisfied_z_max: bool,
}

impl BoundReport {
    /// True when the mean energy is small enough for the `z_max` inequality to
    /// be implied.
    pub fn energy_conserved(&self, tol: f64) -> bool {
        self.mean_energy.abs() <= tol
    }
}

/// Audits a logit vector against both bounds. `n` must be at least 2.
pub fn audit_logits(z: &[f64]) -> Result<BoundReport> {
    let n = z.len();
    let zb = z_max_bound(n)?;
    let bound = (zb + 1.0).exp();
    let p = softmax(z);
    let mean_energy: f64 = p.iter().zip(z).map(|(p, z)| p * z).sum();
    let z_max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z_min = z.iter().copied().fold(f64::INFINITY, f64::min);
    // p_max / p_min = e^{z_max - z_min}; computed this way it stays exact when
    // p_min underflows.
    let ratio = (z_max - z_min).exp();
    Ok(BoundReport {
        n,
        mean_energy,
        z_max,
        z_min,
        ratio,
        bound,
        z_max_bound: zb,
        satisfied_ratio: ratio <= bound,
        satisfied_z_max: z_max <= zb + Z_MAX_TOL,
    })
}

/// Shifts `z` by `-Σ p_i z_i` so that its Boltzmann mean is zero; the
/// softmax is unchanged.
pub fn conserve_energy(z: &[f64]) -> Vec<f64> {
    let p = softmax(z);
    let c: f64 = p.iter().zip(z).map(|(p, z)| p * z).sum();
    z.iter().map(|v| v - c).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // reference values from 40-digit arithmetic
    const W_INV_E: f64 = 0.278_464_542_761_073_8;
    const W_ONE: f64 = 0.567_143_290_409_784;
    const W_TEN: f64 = 1.745_528_002_740_699_4;
    const W_MILLION: f64 = 11.383_358_086_140_053;

    #[test]
    fn exact_points() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert!((lambert_w0(E).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(lambert_w0(-1.0 / E).unwrap(), -1.0);
    }

    #[test]
    fn matches_high_precision_references() {
        for (x, w) in [(1.0 / E, W_INV_E), (1.0, W_ONE), (10.0, W_TEN), (1e6, W_MILLION)] {
            let got = lambert_w0(x).unwrap();
            assert!((got - w).abs() < 1e-13 * w.abs().max(1.0), "W({x}) = {got}");
        }
        let near = lambert_w0(-1.0 / E + 1e-9).unwrap();
        assert!((near - -0.999_926_268_755_381_9).abs() < 1e-9, "{near}");
    }

    #[test]
    fn residuals_on_documented_points() {
        for x in [-1.0 / E + 1e-9, 0.0, 1.0 / E, 1.0, E, 10.0, 1e6] {
            let w = lambert_w0(x).unwrap();
            assert!(lambert_residual(w, x) < 1e-12, "x={x} w={w}");
            assert!(w >= -1.0);
        }
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(lambert_w0(-0.5), Err(Error::Domain { .. })));
        assert!(lambert_w0(f64::NAN).is_err());
        assert!(ratio_bound(1).is_err());
        assert!(ratio_bound(0).is_err());
    }

    #[test]
    fn ratio_bound_values() {
        assert!((ratio_bound(2).unwrap() - 3.591_121_476_668_622).abs() < 1e-12);
        let b10 = ratio_bound(10).unwrap();
        assert!((b10 - (1.101_002_997_276_972_7f64 + 1.0).exp()).abs() < 1e-11);
        for n in 2..50 {
            assert!(ratio_bound(n + 1).unwrap() > ratio_bound(n).unwrap());
        }
    }

    #[test]
    fn zero_logits() {
        let r = audit_logits(&[0.0; 4]).unwrap();
        assert_eq!(r.mean_energy, 0.0);
        assert_eq!(r.ratio, 1.0);
        assert!(r.satisfied_ratio && r.satisfied_z_max);
    }

    #[test]
    fn proof_gap_witness() {
        let r = audit_logits(&[0.00045, -9.99955]).unwrap();
        assert!(r.mean_energy.abs() < 1e-5, "{}", r.mean_energy);
        assert!(r.ratio > 2e4);
        assert!(!r.satisfied_ratio);
        assert!(r.satisfied_z_max);
    }

    #[test]
    fn single_arm_rejected() {
        assert!(audit_logits(&[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn conserved_logits_respect_z_max(z in proptest::collection::vec(-20.0..20.0f64, 2..12)) {
            let shifted = conserve_energy(&z);
            let r = audit_logits(&shifted).unwrap();
            prop_assert!(r.mean_energy.abs() < 1e-9);
            let spread = r.z_max - r.z_min;
            // the true z_max is positive but can be as small as spread·e^{-spread}
            if spread > 1e-6 && spread < 20.0 {
                prop_assert!(r.z_max > 0.0);
            }
            prop_assert!(r.satisfied_z_max, "z_max {} bound {}", r.z_max, r.z_max_bound);
            let zw = r.z_max * r.z_max.exp();
            prop_assert!(zw <= (r.n - 1) as f64 / E + 1e-9);
        }

        #[test]
        fn residual_small_everywhere(x in -0.3678..1e8f64) {
            if x >= -1.0 / E {
                let w = lambert_w0(x).unwrap();
                prop_assert!(lambert_residual(w, x) < 1e-12, "x={} w={}", x, w);
            }
        }
    }
}
