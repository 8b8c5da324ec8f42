use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentKind {
    PreTrained,
    NonInstantiated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Base,
    Auxiliary,
}

/// One affine map followed by an activation. Weights are stored row-major
/// with shape `[out, in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub shape: [usize; 2],
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    #[serde(default)]
    pub frozen: bool,
}

impl Layer {
    pub fn outputs(&self) -> usize {
        self.shape[0]
    }

    pub fn inputs(&self) -> usize {
        self.shape[1]
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Layer {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.random_range(-a..a)).collect();
        Layer {
            shape: [outputs, inputs],
            weights,
            bias: vec![0.0; outputs],
            activation,
            frozen: false,
        }
    }

    fn pre_activation(&self, x: &Matrix) -> Matrix {
        let (out, inp) = (self.outputs(), self.inputs());
        let mut z = Matrix::zeros(x.rows(), out);
        for i in 0..x.rows() {
            let row = x.row(i);
            let zr = z.row_mut(i);
            for (o, zo) in zr.iter_mut().enumerate() {
                let w = &self.weights[o * inp..(o + 1) * inp];
                *zo = self.bias[o] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        z
    }
}

/// A neural network unit that takes part in a composite network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub id: String,
    pub kind: ComponentKind,
    pub role: Role,
    /// Columns of the shared input row fed to this component; all columns when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_columns: Option<Vec<usize>>,
    pub layers: Vec<Layer>,
}

/// Per-layer values kept by the forward pass for backpropagation.
pub(crate) struct ForwardTrace {
    pub inputs: Vec<Matrix>,
    pub pre: Vec<Matrix>,
    pub output: Matrix,
}

impl Component {
    /// Builds a feed-forward net with `sizes = [in, hidden.., out]`, hidden
    /// activation `hidden` and linear output.
    pub fn mlp<R: Rng + ?Sized>(
        id: impl Into<String>,
        kind: ComponentKind,
        role: Role,
        sizes: &[usize],
        hidden: Activation,
        rng: &mut R,
    ) -> Result<Component> {
        if sizes.len() < 2 {
            return Err(Error::InvalidInput("an mlp needs at least input and output sizes".into()));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { Activation::Linear } else { hidden };
                let mut layer = Layer::glorot(w[0], w[1], act, rng);
                layer.frozen = kind == ComponentKind::PreTrained;
                layer
            })
            .collect();
        let c = Component {
            id: id.into(),
            kind,
            role,
            input_columns: None,
            layers,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::outputs)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.layers.iter().filter(|l| !l.frozen).map(Layer::parameter_count).sum()
    }

    pub fn is_fully_frozen(&self) -> bool {
        self.layers.iter().all(|l| l.frozen)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidComponent {
            id: self.id.clone(),
            reason,
        };
        if self.id.is_empty() {
            return Err(bad("empty id".into()));
        }
        if self.layers.is_empty() {
            return Err(bad("no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.shape[0] == 0 || l.shape[1] == 0 {
                return Err(bad(format!("layer {i} has a zero dimension")));
            }
            if l.weights.len() != l.shape[0] * l.shape[1] || l.bias.len() != l.shape[0] {
                return Err(bad(format!("layer {i} buffers do not match shape {:?}", l.shape)));
            }
            if i > 0 && self.layers[i - 1].outputs() != l.inputs() {
                return Err(bad(format!("layer {i} input width does not chain")));
            }
            if !l.weights.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(bad(format!("layer {i} has non-finite weights")));
            }
        }
        match self.kind {
            ComponentKind::PreTrained if !self.is_fully_frozen() => {
                return Err(bad("pre-trained components must be fully frozen".into()))
            }
            ComponentKind::NonInstantiated if self.is_fully_frozen() => {
                return Err(bad("non-instantiated components need a trainable block".into()))
            }
            _ => {}
        }
        if let Some(cols) = &self.input_columns {
            if cols.len() != self.input_dim() {
                return Err(bad(format!(
                    "{} input columns selected for input width {}",
                    cols.len(),
                    self.input_dim()
                )));
            }
        }
        Ok(())
    }

    /// Selects this component's columns from the shared input rows.
    pub fn select_inputs(&self, inputs: &Matrix) -> Result<Matrix> {
        match &self.input_columns {
            Some(cols) => {
                if let Some(&c) = cols.iter().find(|&&c| c >= inputs.cols()) {
                    return Err(Error::mismatch(
                        format!("input columns of component `{}`", self.id),
                        inputs.cols(),
                        c + 1,
                    ));
                }
                Ok(inputs.select_cols(cols))
            }
            None => {
                if inputs.cols() != self.input_dim() {
                    return Err(Error::mismatch(
                        format!("input width of component `{}`", self.id),
                        self.input_dim(),
                        inputs.cols(),
                    ));
                }
                Ok(inputs.clone())
            }
        }
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<Matrix> {
        let mut x = self.select_inputs(inputs)?;
        for l in &self.layers {
            let act = l.activation;
            x = l.pre_activation(&x).map(|z| act.eval(z));
        }
        Ok(x)
    }

    pub(crate) fn forward_trace(&self, inputs: &Matrix) -> Result<ForwardTrace> {
        let mut x = self.select_inputs(inputs)?;
        let mut ins = Vec::with_capacity(self.layers.len());
        let mut pres = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let z = l.pre_activation(&x);
            let act = l.activation;
            let next = z.map(|v| act.eval(v));
            ins.push(x);
            pres.push(z);
            x = next;
        }
        Ok(ForwardTrace {
            inputs: ins,
            pre: pres,
            output: x,
        })
    }

    /// Accumulates parameter gradients of every unfrozen layer into `sink`,
    /// given the adjoint of the component output. `sink(layer, grad_w, grad_b)`.
    pub(crate) fn backward(
        &self,
        trace: &ForwardTrace,
        output_adjoint: &Matrix,
        mut sink: impl FnMut(usize, &[f64], &[f64]),
    ) {
        let first_trainable = match self.layers.iter().position(|l| !l.frozen) {
            Some(p) => p,
            None => return,
        };
        let mut adj = output_adjoint.clone();
        for li in (first_trainable..self.layers.len()).rev() {
            let l = &self.layers[li];
            let (out, inp) = (l.outputs(), l.inputs());
            let pre = &trace.pre[li];
            let act = l.activation;
            // adjoint of the pre-activation
            let a = trace.inputs.get(li + 1).unwrap_or(&trace.output);
            let mut dz = adj.clone();
            for ((d, &z), &av) in dz.as_mut_slice().iter_mut().zip(pre.as_slice()).zip(a.as_slice()) {
                *d *= act.derivative_given(z, av);
            }
            let x = &trace.inputs[li];
            if !l.frozen {
                let mut gw = vec![0.0; out * inp];
                let mut gb = vec![0.0; out];
                for i in 0..x.rows() {
                    let xr = x.row(i);
                    for (o, &d) in dz.row(i).iter().enumerate() {
                        gb[o] += d;
                        for (g, &xv) in gw[o * inp..(o + 1) * inp].iter_mut().zip(xr) {
                            *g += d * xv;
                        }
                    }
                }
                sink(li, &gw, &gb);
            }
            if li > first_trainable {
                let mut next = Matrix::zeros(x.rows(), inp);
                for i in 0..x.rows() {
                    let nr = next.row_mut(i);
                    for (o, &d) in dz.row(i).iter().enumerate() {
                        for (n, &w) in nr.iter_mut().zip(&l.weights[o * inp..(o + 1) * inp]) {
                            *n += d * w;
                        }
                    }
                }
                adj = next;
            }
        }
    }

    /// Marks every layer frozen and the component pre-trained.
    pub fn freeze(&mut self) {
        for l in &mut self.layers {
            l.frozen = true;
        }
        self.kind = ComponentKind::PreTrained;
    }

    /// Opens every layer for training.
    pub fn open(&mut self) {
        for l in &mut self.layers {
            l.frozen = false;
        }
        self.kind = ComponentKind::NonInstantiated;
    }
}

/// Components keyed by id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegistryFile", into = "RegistryFile")]
pub struct Registry {
    components: BTreeMap<String, Component>,
}

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    components: Vec<Component>,
}

impl TryFrom<RegistryFile> for Registry {
    type Error = Error;

    fn try_from(file: RegistryFile) -> Result<Self> {
        let mut r = Registry::default();
        for c in file.components {
            r.insert(c)?;
        }
        Ok(r)
    }
}

impl From<Registry> for RegistryFile {
    fn from(r: Registry) -> Self {
        RegistryFile {
            components: r.components.into_values().collect(),
        }
    }
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_components(components: impl IntoIterator<Item = Component>) -> Result<Self> {
        let mut r = Registry::default();
        for c in components {
            r.insert(c)?;
        }
        Ok(r)
    }

    /// Adds a component; ids must be unique.
    pub fn insert(&mut self, component: Component) -> Result<()> {
        component.validate()?;
        if self.components.contains_key(&component.id) {
            return Err(Error::InvalidInput(format!("duplicate component id `{}`", component.id)));
        }
        self.components.insert(component.id.clone(), component);
        Ok(())
    }

    /// Inserts or replaces.
    pub fn upsert(&mut self, component: Component) -> Result<()> {
        component.validate()?;
        self.components.insert(component.id.clone(), component);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&Component> {
        self.components
            .get(id)
            .ok_or_else(|| Error::UnresolvedComponent(id.to_string()))
    }

    pub(crate) fn get_mut(&mut self, id: &str) -> Result<&mut Component> {
        self.components
            .get_mut(id)
            .ok_or_else(|| Error::UnresolvedComponent(id.to_string()))
    }

    pub fn remove(&mut self, id: &str) -> Option<Component> {
        self.components.remove(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.components.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Component> {
        self.components.values()
    }

    /// Union of two registries. Shared ids must carry identical components.
    pub fn merged(&self, other: &Registry) -> Result<Registry> {
        let mut out = self.clone();
        for c in other.iter() {
            match out.components.get(&c.id) {
                Some(existing) if existing != c => {
                    return Err(Error::InvalidInput(format!(
                        "component `{}` differs between merged registries",
                        c.id
                    )))
                }
                Some(_) => {}
                None => {
                    out.components.insert(c.id.clone(), c.clone());
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_layer_mlp_parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Component::mlp("f", ComponentKind::PreTrained, Role::Base, &[4, 3, 1], Activation::Tanh, &mut rng)
            .unwrap();
        // 4*3 + 3 + 3*1 + 1
        assert_eq!(c.parameter_count(), 19);
        assert_eq!(c.trainable_parameter_count(), 0);
    }

    #[test]
    fn kind_and_frozen_flags_must_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c =
            Component::mlp("f", ComponentKind::PreTrained, Role::Base, &[2, 1], Activation::Linear, &mut rng).unwrap();
        c.layers[0].frozen = false;
        assert!(c.validate().is_err());
        c.kind = ComponentKind::NonInstantiated;
        assert!(c.validate().is_ok());
        c.layers[0].frozen = true;
        assert!(c.validate().is_err());
    }

    #[test]
    fn wrong_input_width_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = Component::mlp("f", ComponentKind::PreTrained, Role::Base, &[3, 1], Activation::Linear, &mut rng)
            .unwrap();
        let x = Matrix::zeros(2, 4);
        assert!(matches!(c.forward(&x), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn column_selection_feeds_chosen_features() {
        let c = Component {
            id: "pick".into(),
            kind: ComponentKind::PreTrained,
            role: Role::Auxiliary,
            input_columns: Some(vec![2]),
            layers: vec![Layer {
                shape: [1, 1],
                weights: vec![2.0],
                bias: vec![1.0],
                activation: Activation::Linear,
                frozen: true,
            }],
        };
        let x = Matrix::from_rows(&[vec![0.0, 0.0, 3.0], vec![9.0, 9.0, -1.0]]).unwrap();
        assert_eq!(c.forward(&x).unwrap().as_slice(), &[7.0, -1.0]);
    }

    #[test]
    fn registry_rejects_duplicates_and_conflicting_merges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Component::mlp("a", ComponentKind::PreTrained, Role::Base, &[2, 1], Activation::Linear, &mut rng)
            .unwrap();
        let mut r = Registry::new();
        r.insert(a.clone()).unwrap();
        assert!(r.insert(a.clone()).is_err());
        let mut other = a.clone();
        other.layers[0].bias[0] = 5.0;
        let r2 = Registry::from_components([other]).unwrap();
        assert!(r.merged(&r2).is_err());
        assert_eq!(r.merged(&r).unwrap(), r);
    }
}
