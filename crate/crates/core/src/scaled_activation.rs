//! Scaled activations: affine maps around a non-linear activation so that
//! `L1(σ(L0(g)))` reproduces a given linear combiner `g` within `ε` at every
//! training point.
//!
//! `L0(v) = v / M0 + z0` squeezes the range of `g` into `(z0 - γ, z0 + γ)`,
//! where σ is nearly affine, and `L1` is the first-order expansion of the
//! inverse `τ = σ⁻¹` at `y0 = σ(z0)`, scaled back by `M0`. The Taylor
//! remainder bounds the pointwise error by `M0 M1 γ²`.

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::model::{CompositeNetwork, Node, NodeOp};

/// Grid size used to estimate suprema over the sampling neighbourhood.
pub const SUPREMUM_SAMPLES: usize = 100_000;

/// Factor in front of the curvature supremum defining `M1`.
pub const M1_FACTOR: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "gamma")]
pub enum GammaRule {
    /// `γ = min(γ0 / 2, 2^-Mγ)` with `Mγ = ceil(log2(Mg M1 / ε)) + 1`.
    Procedure,
    /// A caller-chosen half-width, e.g. `1e-5 ε` for the logistic with `|g| < 1000`.
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledWrapper {
    pub activation: Activation,
    pub z0: f64,
    pub y0: f64,
    /// First derivative of the inverse activation at `y0`.
    pub tau_slope: f64,
    pub m0: f64,
    pub m1: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub inner_bias: f64,
    pub outer_slope: f64,
    pub outer_bias: f64,
    /// Largest `|g|` seen during construction.
    pub calibrated_max: f64,
}

/// Suprema of the curvature term over `(z0 - radius, z0 + radius)`:
/// `sup_z max_{y between y0 and σ(z)} |τ''(y)| * ((σ(z) - σ(z0)) / (z - z0))²`.
fn curvature_supremum(act: Activation, z0: f64, radius: f64) -> f64 {
    let half = SUPREMUM_SAMPLES / 2;
    let y0 = act.eval(z0);
    let mut best = 0.0f64;
    for sign in [-1.0, 1.0] {
        let mut tau2_max = act.inverse_d2(y0).unwrap_or(0.0).abs();
        for i in 1..=half {
            let dz = sign * radius * i as f64 / half as f64;
            let z = z0 + dz;
            let y = act.eval(z);
            tau2_max = tau2_max.max(act.inverse_d2(y).unwrap_or(0.0).abs());
            let slope = act.shifted_from_origin(z) / dz;
            best = best.max(tau2_max * slope * slope);
        }
    }
    best
}

pub fn construct_wrapper(g_star: &[f64], activation: Activation, epsilon: f64) -> Result<ScaledWrapper> {
    construct_wrapper_with(g_star, activation, epsilon, GammaRule::Procedure)
}

pub fn construct_wrapper_with(
    g_star: &[f64],
    activation: Activation,
    epsilon: f64,
    rule: GammaRule,
) -> Result<ScaledWrapper> {
    if !activation.is_c1() {
        return Err(Error::NotC1Activation(activation.label()));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidInput(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    if g_star.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("linear combiner outputs must be finite".into()));
    }
    let z0 = activation.expansion_point();
    let slope0 = activation.derivative(z0);
    if slope0.abs() < 1e-12 {
        return Err(Error::VanishingDerivative(slope0));
    }
    let y0 = activation.eval(z0);
    let tau_slope = activation.inverse_d1(y0).expect("c1 activations are invertible");
    let calibrated_max = g_star.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mg = (2.0 * calibrated_max).max(1.0);

    let (m1, gamma) = if activation.is_linear() {
        // σ is affine: no curvature, and any neighbourhood works
        match rule {
            GammaRule::Procedure => (0.0, mg),
            GammaRule::Fixed(g) => (0.0, g),
        }
    } else {
        let radius = activation.neighbourhood_radius();
        let m1 = M1_FACTOR * curvature_supremum(activation, z0, radius);
        let gamma = match rule {
            GammaRule::Procedure => {
                let m_gamma = ((mg * m1.max(f64::MIN_POSITIVE) / epsilon).log2().ceil() + 1.0).max(1.0);
                (radius / 2.0).min((-m_gamma).exp2())
            }
            GammaRule::Fixed(g) => {
                if g > radius / 2.0 {
                    return Err(Error::InvalidInput(format!(
                        "gamma {g} exceeds half the invertibility radius {radius}"
                    )));
                }
                g
            }
        };
        (m1, gamma)
    };
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidInput(format!("gamma must be positive, got {gamma}")));
    }
    let m0 = mg / gamma;
    if !(m0 * m1 * gamma * gamma < epsilon) {
        return Err(Error::InvalidInput(format!(
            "error bound M0 M1 γ² = {:.3e} does not reach epsilon {epsilon}",
            m0 * m1 * gamma * gamma
        )));
    }
    Ok(ScaledWrapper {
        activation,
        z0,
        y0,
        tau_slope,
        m0,
        m1,
        gamma,
        epsilon,
        inner_bias: z0,
        outer_slope: m0 * tau_slope,
        outer_bias: m0 * (z0 - tau_slope * y0),
        calibrated_max,
    })
}

impl ScaledWrapper {
    /// `L0(v) = v / M0 + z0`.
    pub fn inner(&self, value: f64) -> f64 {
        value / self.m0 + self.inner_bias
    }

    /// `M0 M1 γ²`, the guaranteed pointwise error bound.
    pub fn error_bound(&self) -> f64 {
        self.m0 * self.m1 * self.gamma * self.gamma
    }

    /// `outer_slope * σ(L0(v)) + outer_bias`. The activation is evaluated as
    /// an offset from `y0` so the large outer slope does not amplify rounding.
    pub fn apply(&self, value: f64) -> f64 {
        let z = self.inner(value);
        let shifted = if self.z0 == 0.0 {
            self.activation.shifted_from_origin(z)
        } else {
            self.activation.eval(z) - self.y0
        };
        self.outer_slope * shifted + (self.outer_bias + self.outer_slope * self.y0)
    }

    /// The wrapper as network nodes on top of `g`: combine (`1/M0`, bias
    /// `z0`), activation, combine (`outer_slope`, `outer_bias`).
    pub fn sandwich_network(&self, g: &CompositeNetwork) -> Result<CompositeNetwork> {
        let base = g.nodes().iter().map(|n| n.id + 1).max().unwrap_or(0);
        let mut nodes = g.nodes().to_vec();
        nodes.push(Node {
            id: base,
            op: NodeOp::Combine {
                children: vec![g.root()],
                theta: vec![self.inner_bias, 1.0 / self.m0],
                frozen: false,
            },
        });
        nodes.push(Node {
            id: base + 1,
            op: NodeOp::Activate {
                child: base,
                activation: self.activation,
            },
        });
        nodes.push(Node {
            id: base + 2,
            op: NodeOp::Combine {
                children: vec![base + 1],
                theta: vec![self.outer_bias, self.outer_slope],
                frozen: false,
            },
        });
        CompositeNetwork::new(nodes, base + 2)
    }
}

pub fn apply_wrapper(wrapper: &ScaledWrapper, g_star_value: f64) -> f64 {
    if g_star_value.abs() > wrapper.calibrated_max * (1.0 + 1e-12) {
        log::warn!(
            "value {g_star_value} lies outside the calibrated range ±{}",
            wrapper.calibrated_max
        );
    }
    wrapper.apply(g_star_value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginCheck {
    pub ok: bool,
    /// Largest ε that keeps the wrapped combiner below the best component loss.
    pub epsilon_needed: f64,
    /// `max_i |g*(x_i) - y_i|`
    pub m2: f64,
    pub diagnosis: Option<String>,
}

/// ε needed so that the scaled combiner still beats the best component:
/// `(E(f_best) - E(g*)) / (4 N (2 M2 + 1))` with `M2 = max_i |g*(x_i) - y_i|`.
pub fn verify_margin(
    wrapper: &ScaledWrapper,
    g_star_loss: f64,
    best_component_loss: f64,
    g_star: &[f64],
    labels: &[f64],
) -> MarginCheck {
    let m2 = g_star
        .iter()
        .zip(labels)
        .fold(0.0f64, |a, (g, y)| a.max((g - y).abs()));
    if g_star.len() != labels.len() || labels.is_empty() {
        return MarginCheck {
            ok: false,
            epsilon_needed: 0.0,
            m2,
            diagnosis: Some("combiner outputs and labels must be non-empty and of equal length".into()),
        };
    }
    if !(g_star_loss < best_component_loss) {
        return MarginCheck {
            ok: false,
            epsilon_needed: 0.0,
            m2,
            diagnosis: Some(format!(
                "the linear combiner (loss {g_star_loss}) does not beat the best component (loss {best_component_loss})"
            )),
        };
    }
    let n = labels.len() as f64;
    let epsilon_needed = (best_component_loss - g_star_loss) / (4.0 * n * (2.0 * m2 + 1.0));
    let ok = wrapper.epsilon <= epsilon_needed;
    MarginCheck {
        ok,
        epsilon_needed,
        m2,
        diagnosis: (!ok).then(|| format!("wrapper epsilon {} exceeds the needed {epsilon_needed:.3e}", wrapper.epsilon)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_solver::mse;

    #[test]
    fn relu_refused() {
        assert!(matches!(
            construct_wrapper(&[1.0], Activation::Relu, 0.1),
            Err(Error::NotC1Activation(_))
        ));
        assert!(construct_wrapper(&[1.0], Activation::Logistic, 0.0).is_err());
        assert!(construct_wrapper(&[1.0], Activation::Logistic, 1.5).is_err());
    }

    #[test]
    fn logistic_example_constants() {
        let g: Vec<f64> = (0..50).map(|i| -999.0 + 40.0 * i as f64).collect();
        let eps = 0.1;
        let w = construct_wrapper_with(&g, Activation::Logistic, eps, GammaRule::Fixed(1e-5 * eps)).unwrap();
        assert_eq!(w.tau_slope, 4.0);
        assert!(w.m0 < 2e3 / w.gamma);
        assert!(w.m1 < 50.0, "m1 = {}", w.m1);
        assert!(w.error_bound() < eps);
    }

    #[test]
    fn origin_is_a_fixed_point() {
        let w = construct_wrapper(&[3.0, -2.0], Activation::Logistic, 0.5).unwrap();
        assert_eq!(apply_wrapper(&w, 0.0), 0.0);
    }

    #[test]
    fn linear_wrapper_is_exact() {
        let g = vec![-3.25, 0.0, 7.5, 1e-3];
        let w = construct_wrapper(&g, Activation::Linear, 0.1).unwrap();
        for &v in &g {
            assert_eq!(w.apply(v), v);
        }
    }

    #[test]
    fn tanh_pointwise_error_below_epsilon() {
        let g: Vec<f64> = (0..101).map(|i| -5.0 + 0.1 * i as f64).collect();
        let w = construct_wrapper(&g, Activation::Tanh, 0.1).unwrap();
        let max_err = g.iter().map(|&v| (w.apply(v) - v).abs()).fold(0.0, f64::max);
        assert!(max_err < 0.1, "{max_err}");
        for &v in &g {
            assert!(w.inner(v).abs() < w.gamma);
        }
    }

    #[test]
    fn strictly_increasing_on_calibrated_range() {
        let w = construct_wrapper(&[10.0], Activation::Logistic, 0.01).unwrap();
        let span = w.m0 * w.gamma;
        let mut prev = f64::NEG_INFINITY;
        for i in 1..400 {
            let v = -span + 2.0 * span * i as f64 / 400.0;
            let out = w.apply(v);
            assert!(out > prev);
            prev = out;
        }
    }

    #[test]
    fn half_gamma_point_stays_within_epsilon() {
        for act in [Activation::Logistic, Activation::Tanh, Activation::SL] {
            let w = construct_wrapper(&[2.0, -1.0], act, 0.05).unwrap();
            let v = w.m0 * w.gamma / 2.0;
            // Taylor remainder of the inverse is cubic here; the reference is v itself
            assert!((w.apply(v) - v).abs() < 0.05, "{act}");
        }
    }

    #[test]
    fn margin_formula_by_hand() {
        // N = 2, residuals (1, -1): M2 = 1, needed = gap / (4 * 2 * 3)
        let g = vec![2.0, 0.0];
        let y = vec![1.0, 1.0];
        let w = construct_wrapper(&g, Activation::Logistic, 1e-3).unwrap();
        let gap = 0.6;
        let loss = mse(&g, &y);
        let check = verify_margin(&w, loss, loss + gap, &g, &y);
        assert_eq!(check.m2, 1.0);
        assert!((check.epsilon_needed - gap / 24.0).abs() < 1e-15);
        assert!(check.ok);
    }

    #[test]
    fn margin_refuses_when_combiner_is_not_better() {
        let w = construct_wrapper(&[1.0], Activation::Logistic, 0.1).unwrap();
        let c = verify_margin(&w, 2.0, 1.0, &[1.0], &[0.0]);
        assert!(!c.ok && c.diagnosis.is_some());
        let perfect = verify_margin(&w, 0.0, 0.5, &[1.0, 2.0], &[1.0, 2.0]);
        assert!(perfect.epsilon_needed > 0.0);
    }

    #[test]
    fn network_form_matches_direct_application() {
        use crate::matrix::Matrix;
        use crate::model::{Component, ComponentKind, Layer, Model, Role};
        let comp = Component {
            id: "g".into(),
            kind: ComponentKind::PreTrained,
            role: Role::Base,
            input_columns: None,
            layers: vec![Layer {
                shape: [1, 1],
                weights: vec![1.0],
                bias: vec![0.0],
                activation: Activation::Linear,
                frozen: true,
            }],
        };
        let values = vec![-4.0, -1.5, 0.0, 2.0, 3.5];
        let w = construct_wrapper(&values, Activation::Tanh, 0.5).unwrap();
        let leaf = Model::leaf(comp).unwrap();
        let net = w.sandwich_network(&leaf.network).unwrap();
        let out = crate::model::evaluate(&net, &leaf.registry, &Matrix::column_vector(&values)).unwrap();
        for (o, v) in out.as_slice().iter().zip(&values) {
            assert!((o - w.apply(*v)).abs() < 1e-9);
            assert!((o - v).abs() < 0.5);
        }
    }
}
