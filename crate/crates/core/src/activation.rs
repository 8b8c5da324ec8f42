//! Activation functions together with the local inverse data needed to build
//! scaled activations: the inverse `tau` of each strictly monotone activation
//! and its first two derivatives in closed form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Activation {
    Linear,
    Logistic,
    /// `2 * range / (1 + exp(-z / scale)) - range`.
    ScaledLogistic {
        scale: f64,
        range: f64,
    },
    Tanh,
    Relu,
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    /// The fixed preset used in the construction experiments:
    /// `S(z) = 2000 / (1 + exp(-z / 500)) - 1000`.
    pub const SL: Activation = Activation::ScaledLogistic {
        scale: 500.0,
        range: 1000.0,
    };

    /// Whether the activation and its derivative are continuous everywhere.
    pub fn is_c1(&self) -> bool {
        !matches!(self, Activation::Relu)
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Activation::Linear)
    }

    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            Activation::Linear => z,
            Activation::Logistic => logistic(z),
            Activation::ScaledLogistic { scale, range } => 2.0 * range * logistic(z / scale) - range,
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    pub fn derivative(&self, z: f64) -> f64 {
        match *self {
            Activation::Linear => 1.0,
            Activation::Logistic => {
                let s = logistic(z);
                s * (1.0 - s)
            }
            Activation::ScaledLogistic { scale, range } => {
                let s = logistic(z / scale);
                2.0 * range / scale * s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative at `z` given `a = eval(z)`, reusing `a` where that is exact.
    pub fn derivative_given(&self, z: f64, a: f64) -> f64 {
        match *self {
            Activation::Logistic => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
            _ => self.derivative(z),
        }
    }

    /// Point where the derivative is largest; the expansion point of the
    /// scaled-activation construction.
    pub fn expansion_point(&self) -> f64 {
        0.0
    }

    /// `eval(z) - eval(0)` without the cancellation of the plain difference.
    pub fn shifted_from_origin(&self, z: f64) -> f64 {
        match *self {
            Activation::Linear => z,
            Activation::Logistic => 0.5 * (0.5 * z).tanh(),
            Activation::ScaledLogistic { scale, range } => range * (0.5 * z / scale).tanh(),
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Half-width of the neighbourhood of the expansion point on which the
    /// inverse is sampled for its suprema.
    pub fn neighbourhood_radius(&self) -> f64 {
        match *self {
            Activation::ScaledLogistic { scale, .. } => 2.0 * scale,
            _ => 1.0,
        }
    }

    /// Inverse of the activation. `None` for relu, which is not invertible.
    pub fn inverse(&self, y: f64) -> Option<f64> {
        match *self {
            Activation::Linear => Some(y),
            Activation::Logistic => Some((y / (1.0 - y)).ln()),
            Activation::ScaledLogistic { scale, range } => Some(2.0 * scale * (y / range).atanh()),
            Activation::Tanh => Some(y.atanh()),
            Activation::Relu => None,
        }
    }

    /// First derivative of the inverse at `y`.
    pub fn inverse_d1(&self, y: f64) -> Option<f64> {
        match *self {
            Activation::Linear => Some(1.0),
            Activation::Logistic => Some(1.0 / (y * (1.0 - y))),
            Activation::ScaledLogistic { scale, range } => {
                let u = y / range;
                Some(2.0 * scale / range / (1.0 - u * u))
            }
            Activation::Tanh => Some(1.0 / (1.0 - y * y)),
            Activation::Relu => None,
        }
    }

    /// Second derivative of the inverse at `y`.
    pub fn inverse_d2(&self, y: f64) -> Option<f64> {
        match *self {
            Activation::Linear => Some(0.0),
            Activation::Logistic => {
                let q = y * (1.0 - y);
                Some((2.0 * y - 1.0) / (q * q))
            }
            Activation::ScaledLogistic { scale, range } => {
                let u = y / range;
                let d = 1.0 - u * u;
                Some(4.0 * scale * u / (range * range * d * d))
            }
            Activation::Tanh => {
                let d = 1.0 - y * y;
                Some(2.0 * y / (d * d))
            }
            Activation::Relu => None,
        }
    }

    /// Short label used in reports (`L`, `SL`, ...).
    pub fn label(&self) -> String {
        match *self {
            Activation::Linear => "L".into(),
            Activation::Logistic => "logistic".into(),
            Activation::ScaledLogistic { scale, range } => {
                if *self == Activation::SL {
                    "SL".into()
                } else {
                    format!("SL[{scale},{range}]")
                }
            }
            Activation::Tanh => "tanh".into(),
            Activation::Relu => "relu".into(),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" | "l" => Ok(Activation::Linear),
            "logistic" | "sigmoid" => Ok(Activation::Logistic),
            "sl" | "scaled-logistic" => Ok(Activation::SL),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidInput(format!("unknown activation `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KINDS: [Activation; 4] = [
        Activation::Linear,
        Activation::Logistic,
        Activation::SL,
        Activation::Tanh,
    ];

    #[test]
    fn c1_flags() {
        for a in KINDS {
            assert!(a.is_c1(), "{a}");
        }
        assert!(!Activation::Relu.is_c1());
    }

    #[test]
    fn scaled_logistic_preset_values() {
        let sl = Activation::SL;
        assert_eq!(sl.eval(0.0), 0.0);
        let z: f64 = 750.0;
        let expected = 2000.0 / (1.0 + (-z / 500.0).exp()) - 1000.0;
        assert!((sl.eval(z) - expected).abs() < 1e-9);
        assert!((sl.derivative(0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-6;
        for a in KINDS {
            for &z in &[-0.7, -0.1, 0.0, 0.3, 0.9] {
                let z = z * a.neighbourhood_radius();
                let fd = (a.eval(z + h) - a.eval(z - h)) / (2.0 * h);
                assert!((fd - a.derivative(z)).abs() < 1e-6, "{a} at {z}");
            }
        }
    }

    #[test]
    fn derivative_from_value_is_exact() {
        for a in KINDS {
            for &z in &[-30.0, -0.7, 0.0, 0.3, 2.5, 40.0] {
                assert_eq!(a.derivative_given(z, a.eval(z)).to_bits(), a.derivative(z).to_bits(), "{a} at {z}");
            }
        }
    }

    #[test]
    fn inverse_and_its_derivatives() {
        let h = 1e-6;
        for a in KINDS {
            for &z in &[-0.8, -0.2, 0.0, 0.4, 0.9] {
                let z = z * a.neighbourhood_radius();
                let y = a.eval(z);
                assert!((a.inverse(y).unwrap() - z).abs() < 1e-8 * (1.0 + z.abs()), "{a}");
                let scale = a.neighbourhood_radius().max(1.0);
                let hy = h * scale;
                let d1 = (a.inverse(y + hy).unwrap() - a.inverse(y - hy).unwrap()) / (2.0 * hy);
                let d1_exact = a.inverse_d1(y).unwrap();
                assert!((d1 - d1_exact).abs() < 1e-5 * d1_exact.abs().max(1.0), "{a} d1");
                let d2 = (a.inverse_d1(y + hy).unwrap() - a.inverse_d1(y - hy).unwrap()) / (2.0 * hy);
                let d2_exact = a.inverse_d2(y).unwrap();
                assert!((d2 - d2_exact).abs() < 1e-4 * d2_exact.abs().max(1e-3), "{a} d2 {d2} {d2_exact}");
            }
        }
    }

    #[test]
    fn shifted_matches_difference() {
        for a in KINDS {
            for &z in &[-0.5, 0.01, 0.7] {
                let diff = a.eval(z) - a.eval(0.0);
                assert!((a.shifted_from_origin(z) - diff).abs() < 1e-12 * a.neighbourhood_radius().max(1.0));
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("sl".parse::<Activation>().unwrap(), Activation::SL);
        assert_eq!("Linear".parse::<Activation>().unwrap(), Activation::Linear);
        assert!("softmax".parse::<Activation>().is_err());
    }
}
