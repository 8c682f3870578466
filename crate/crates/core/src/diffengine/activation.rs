//! Scalar activations with derivatives up to fourth order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smooth leaky activation pair `σ₊`, `σ₋ = σ₊⁻¹` of the constrained
/// autoencoder. Both are hyperbola branches with asymptotic slopes
/// `tan(π/4 ± α)`, passing through the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "f64", into = "f64")]
pub struct AeSigma {
    alpha: f64,
    a: f64,
    b: f64,
    k: f64,
    rs: f64,
    rc: f64,
}

impl From<f64> for AeSigma {
    fn from(alpha: f64) -> Self {
        let (s, c) = alpha.sin_cos();
        let (is2, ic2) = (1.0 / (s * s), 1.0 / (c * c));
        AeSigma {
            alpha,
            a: is2 - ic2,
            b: is2 + ic2,
            k: 2.0 / (s * c),
            rs: std::f64::consts::SQRT_2 / s,
            rc: std::f64::consts::SQRT_2 / c,
        }
    }
}

impl From<AeSigma> for f64 {
    fn from(s: AeSigma) -> f64 {
        s.alpha
    }
}

impl AeSigma {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < std::f64::consts::FRAC_PI_4) {
            return Err(Error::invalid(format!("activation slope angle must lie in (0, π/4), got {alpha}")));
        }
        Ok(alpha.into())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `order`-th derivative of `σ₊` (`sign = 1`) or `σ₋` (`sign = -1`).
    fn eval(&self, sign: f64, order: usize, x: f64) -> f64 {
        let u = self.k * x - sign * self.rc;
        let r2 = u * u + 2.0 * self.a;
        let r = r2.sqrt();
        let k = self.k;
        match order {
            0 => (self.b * x - sign * self.rs + sign * r) / self.a,
            1 => (self.b + sign * k * u / r) / self.a,
            2 => sign * 2.0 * k * k / (r2 * r),
            3 => -sign * 6.0 * k.powi(3) * u / (r2 * r2 * r),
            4 => -sign * 6.0 * k.powi(4) * (r2 - 5.0 * u * u) / (r2 * r2 * r2 * r),
            _ => panic!("activation derivative of order {order} is not supported"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    SoftPlus,
    SigmaPlus(AeSigma),
    SigmaMinus(AeSigma),
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Activation {
    /// `order`-th derivative at `x`, `order ≤ 4`.
    pub fn eval(&self, order: usize, x: f64) -> f64 {
        match *self {
            Activation::Identity => match order {
                0 => x,
                1 => 1.0,
                _ => 0.0,
            },
            Activation::SoftPlus => {
                if order == 0 {
                    return softplus(x);
                }
                let s = sigmoid(x);
                let p = s * (1.0 - s);
                match order {
                    1 => s,
                    2 => p,
                    3 => p * (1.0 - 2.0 * s),
                    4 => p * ((1.0 - 2.0 * s).powi(2) - 2.0 * p),
                    _ => panic!("activation derivative of order {order} is not supported"),
                }
            }
            Activation::SigmaPlus(s) => s.eval(1.0, order, x),
            Activation::SigmaMinus(s) => s.eval(-1.0, order, x),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Activation::Identity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn all() -> Vec<Activation> {
        let s = AeSigma::new(PI / 8.0).unwrap();
        let t = AeSigma::new(0.3).unwrap();
        vec![
            Activation::SoftPlus,
            Activation::SigmaPlus(s),
            Activation::SigmaMinus(s),
            Activation::SigmaPlus(t),
            Activation::SigmaMinus(t),
        ]
    }

    #[test]
    fn derivatives_match_central_differences() {
        for act in all() {
            for &x in &[-7.3, -1.1, -0.2, 0.0, 0.4, 2.5, 9.0] {
                for order in 0..4 {
                    let h = 1e-5 * (1.0 + f64::abs(x));
                    let fd = (act.eval(order, x + h) - act.eval(order, x - h)) / (2.0 * h);
                    let an = act.eval(order + 1, x);
                    assert!(
                        (fd - an).abs() <= 1e-6 * (1.0 + an.abs()),
                        "{act:?} order {order} at {x}: fd {fd} vs {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        assert!((Activation::SoftPlus.eval(0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((Activation::SoftPlus.eval(0, 800.0) - 800.0).abs() < 1e-12);
        assert!(Activation::SoftPlus.eval(0, -800.0) >= 0.0);
    }

    #[test]
    fn sigma_pair_is_mutually_inverse() {
        let s = AeSigma::new(PI / 8.0).unwrap();
        let (p, m) = (Activation::SigmaPlus(s), Activation::SigmaMinus(s));
        assert_eq!(p.eval(0, 0.0).abs() < 1e-15, true);
        for i in 0..=2000 {
            let x = -10.0 + 0.01 * i as f64;
            let y = m.eval(0, p.eval(0, x));
            assert!((y - x).abs() < 1e-9, "{x} -> {y}");
            assert!(p.eval(1, x) > 0.0 && m.eval(1, x) > 0.0);
        }
    }

    #[test]
    fn sigma_asymptotic_slopes() {
        let alpha = PI / 8.0;
        let p = Activation::SigmaPlus(AeSigma::new(alpha).unwrap());
        let hi = (PI / 4.0 + alpha).tan();
        let lo = (PI / 4.0 - alpha).tan();
        assert!((p.eval(1, 1e6) - hi).abs() < 1e-6);
        assert!((p.eval(1, -1e6) - lo).abs() < 1e-6);
    }

    #[test]
    fn sigma_rejects_bad_angle() {
        assert!(AeSigma::new(0.0).is_err());
        assert!(AeSigma::new(PI / 4.0).is_err());
        assert!(AeSigma::new(-0.1).is_err());
    }

    #[test]
    fn serde_roundtrip_keeps_angle() {
        let a = Activation::SigmaPlus(AeSigma::new(0.3).unwrap());
        let s = serde_json::to_string(&a).unwrap();
        let b: Activation = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
    }
}
