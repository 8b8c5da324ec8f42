//! Minibatch gradient descent over the trainable parameters of a composite
//! network: unfrozen combine weights and unfrozen component layers.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{forward, mean_squared_error, CompositeNetwork, Dataset, Model, NodeOp, Registry, Split};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Epochs without a new best train loss before stopping; 0 disables.
    pub early_stop_patience: usize,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
    pub momentum: f64,
    /// Cosine decay of the learning rate to zero over `max_epochs`.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            batch_size: 32,
            max_epochs: 500,
            seed: 0,
            early_stop_patience: 50,
            grad_clip: None,
            momentum: 0.0,
            cosine_decay: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning rate {} must be finite and non-negative", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config(format!("gradient clip {c} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest train loss.
    pub model: Model,
    /// Epoch 0 holds the losses before any update.
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best_train_loss(&self) -> f64 {
        self.history[self.best_epoch].train_loss
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Block {
    Theta { position: usize },
    Weights { component: String, layer: usize },
    Bias { component: String, layer: usize },
}

#[derive(Clone, Debug, PartialEq)]
struct Slot {
    block: Block,
    offset: usize,
    len: usize,
    name: String,
}

/// Flat ordering of the trainable parameters: combine weights in node order,
/// then unfrozen component layers (weights then bias) in first-reference order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterLayout {
    slots: Vec<Slot>,
    len: usize,
}

impl ParameterLayout {
    pub fn new(net: &CompositeNetwork, registry: &Registry) -> Result<Self> {
        let mut slots = Vec::new();
        let mut offset = 0;
        let mut push = |block, len, name| {
            slots.push(Slot { block, offset, len, name });
            offset += len;
        };
        for (p, n) in net.nodes().iter().enumerate() {
            if let NodeOp::Combine { theta, frozen: false, .. } = &n.op {
                push(Block::Theta { position: p }, theta.len(), format!("node {} theta", n.id));
            }
        }
        for id in net.component_ids() {
            let c = registry.get(&id)?;
            for (li, l) in c.layers.iter().enumerate() {
                if l.frozen {
                    continue;
                }
                push(
                    Block::Weights { component: id.clone(), layer: li },
                    l.weights.len(),
                    format!("{id} layer {li} weights"),
                );
                push(
                    Block::Bias { component: id.clone(), layer: li },
                    l.bias.len(),
                    format!("{id} layer {li} bias"),
                );
            }
        }
        Ok(Self { slots, len: offset })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Human-readable name of flat parameter `i`, e.g. `f1 layer 0 bias[2]`.
    pub fn path(&self, i: usize) -> String {
        let s = self
            .slots
            .iter()
            .find(|s| i >= s.offset && i < s.offset + s.len)
            .expect("parameter index in range");
        format!("{}[{}]", s.name, i - s.offset)
    }

    pub fn gather(&self, net: &CompositeNetwork, registry: &Registry) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len);
        for s in &self.slots {
            match &s.block {
                Block::Theta { position } => match &net.nodes()[*position].op {
                    NodeOp::Combine { theta, .. } => out.extend_from_slice(theta),
                    _ => return Err(Error::InvalidNetwork("parameter layout does not match network".into())),
                },
                Block::Weights { component, layer } => {
                    out.extend_from_slice(&registry.get(component)?.layers[*layer].weights)
                }
                Block::Bias { component, layer } => out.extend_from_slice(&registry.get(component)?.layers[*layer].bias),
            }
        }
        Ok(out)
    }

    pub fn scatter(&self, net: &mut CompositeNetwork, registry: &mut Registry, values: &[f64]) -> Result<()> {
        if values.len() != self.len {
            return Err(Error::mismatch("parameter vector", self.len, values.len()));
        }
        for s in &self.slots {
            let src = &values[s.offset..s.offset + s.len];
            let dst: &mut Vec<f64> = match &s.block {
                Block::Theta { position } => match &mut net.nodes_mut()[*position].op {
                    NodeOp::Combine { theta, .. } => theta,
                    _ => return Err(Error::InvalidNetwork("parameter layout does not match network".into())),
                },
                Block::Weights { component, layer } => &mut registry.get_mut(component)?.layers[*layer].weights,
                Block::Bias { component, layer } => &mut registry.get_mut(component)?.layers[*layer].bias,
            };
            dst.copy_from_slice(src);
        }
        Ok(())
    }
}

/// Gradient of `<g - y, g - y> / N` with respect to the trainable parameters.
#[derive(Clone, Debug)]
pub struct Gradient {
    pub layout: ParameterLayout,
    pub values: Vec<f64>,
    pub loss: f64,
}

pub fn gradients(net: &CompositeNetwork, registry: &Registry, inputs: &Matrix, labels: &Matrix) -> Result<Gradient> {
    let layout = ParameterLayout::new(net, registry)?;
    let needs = needs_gradient(net, registry)?;
    let (values, loss) = backprop(net, registry, &layout, &needs, inputs, labels, None)?;
    Ok(Gradient { layout, values, loss })
}

/// Whether each node's subtree holds a trainable parameter.
fn needs_gradient(net: &CompositeNetwork, registry: &Registry) -> Result<Vec<bool>> {
    let pos = net.positions();
    let mut needs: Vec<bool> = Vec::with_capacity(net.nodes().len());
    for n in net.nodes() {
        let v = match &n.op {
            NodeOp::Component { component } => !registry.get(component)?.is_fully_frozen(),
            NodeOp::Combine { children, frozen, .. } => !frozen || children.iter().any(|c| needs[pos[c]]),
            NodeOp::Activate { child, .. } => needs[pos[child]],
        };
        needs.push(v);
    }
    Ok(needs)
}

fn backprop(
    net: &CompositeNetwork,
    registry: &Registry,
    layout: &ParameterLayout,
    needs: &[bool],
    inputs: &Matrix,
    labels: &Matrix,
    fixed: Option<&[Option<Matrix>]>,
) -> Result<(Vec<f64>, f64)> {
    let trace = forward(net, registry, inputs, true, fixed)?;
    let pos = net.positions();
    let root = pos[&net.root()];
    let out = &trace.outputs[root];
    let loss = mean_squared_error(out, labels)?;
    let rows = labels.rows() as f64;

    let mut grad = vec![0.0; layout.len()];
    let theta_offset: HashMap<usize, usize> = layout
        .slots
        .iter()
        .filter_map(|s| match s.block {
            Block::Theta { position } => Some((position, s.offset)),
            _ => None,
        })
        .collect();

    let mut adjoint: Vec<Option<Matrix>> = vec![None; net.nodes().len()];
    let mut root_adj = out.clone();
    for (a, &y) in root_adj.as_mut_slice().iter_mut().zip(labels.as_slice()) {
        *a = 2.0 * (*a - y) / rows;
    }
    adjoint[root] = Some(root_adj);
    let mut component_adjoint: HashMap<&str, Matrix> = HashMap::new();

    let add_into = |slot: &mut Option<Matrix>, m: Matrix| match slot {
        Some(acc) => {
            for (a, v) in acc.as_mut_slice().iter_mut().zip(m.as_slice()) {
                *a += v;
            }
        }
        None => *slot = Some(m),
    };

    for p in (0..net.nodes().len()).rev() {
        if !needs[p] {
            continue;
        }
        let Some(adj) = adjoint[p].take() else { continue };
        match &net.nodes()[p].op {
            NodeOp::Component { component } => match component_adjoint.get_mut(component.as_str()) {
                Some(acc) => {
                    for (a, v) in acc.as_mut_slice().iter_mut().zip(adj.as_slice()) {
                        *a += v;
                    }
                }
                None => {
                    component_adjoint.insert(component.as_str(), adj);
                }
            },
            NodeOp::Combine { children, theta, frozen } => {
                if !frozen {
                    let off = theta_offset[&p];
                    grad[off] += adj.as_slice().iter().sum::<f64>();
                    for (j, c) in children.iter().enumerate() {
                        let child = &trace.outputs[pos[c]];
                        grad[off + j + 1] += adj.as_slice().iter().zip(child.as_slice()).map(|(a, v)| a * v).sum::<f64>();
                    }
                }
                for (c, &t) in children.iter().zip(&theta[1..]) {
                    let cp = pos[c];
                    if needs[cp] {
                        add_into(&mut adjoint[cp], adj.map(|a| a * t));
                    }
                }
            }
            NodeOp::Activate { child, activation } => {
                let cp = pos[child];
                let z = &trace.outputs[cp];
                let mut m = adj;
                for (a, &zv) in m.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *a *= activation.derivative(zv);
                }
                add_into(&mut adjoint[cp], m);
            }
        }
    }

    for s in &layout.slots {
        if let Block::Weights { component, layer } = &s.block {
            // weights and bias slots of one layer are adjacent
            let Some(adj) = component_adjoint.get(component.as_str()) else { continue };
            let Some(t) = trace.components.get(component) else { continue };
            let c = registry.get(component)?;
            let target = *layer;
            let w_off = s.offset;
            let b_off = s.offset + s.len;
            let mut seen = false;
            c.backward(t, adj, |li, gw, gb| {
                if li == target {
                    seen = true;
                    for (g, v) in grad[w_off..w_off + gw.len()].iter_mut().zip(gw) {
                        *g += v;
                    }
                    for (g, v) in grad[b_off..b_off + gb.len()].iter_mut().zip(gb) {
                        *g += v;
                    }
                }
            });
            debug_assert!(seen);
        }
    }

    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { path: layout.path(i) });
    }
    Ok((grad, loss))
}

/// Outputs of the maximal frozen subtrees feeding trainable nodes, computed
/// once per split so minibatches do not re-run frozen components.
fn frozen_outputs(net: &CompositeNetwork, registry: &Registry, needs: &[bool], inputs: &Matrix) -> Result<Vec<Option<Matrix>>> {
    let pos = net.positions();
    let count = net.nodes().len();
    let mut boundary = vec![false; count];
    let root = pos[&net.root()];
    if !needs[root] {
        boundary[root] = true;
    }
    for (p, n) in net.nodes().iter().enumerate() {
        if needs[p] {
            for c in n.children() {
                if !needs[pos[&c]] {
                    boundary[pos[&c]] = true;
                }
            }
        }
    }
    if !boundary.iter().any(|b| *b) {
        return Ok(vec![None; count]);
    }
    let trace = forward(net, registry, inputs, false, None)?;
    Ok(trace
        .outputs
        .into_iter()
        .zip(boundary)
        .map(|(m, b)| b.then_some(m))
        .collect())
}

fn select_fixed(fixed: &[Option<Matrix>], rows: &[usize]) -> Vec<Option<Matrix>> {
    fixed.iter().map(|m| m.as_ref().map(|m| m.select_rows(rows))).collect()
}

fn split_loss(net: &CompositeNetwork, registry: &Registry, x: &Matrix, y: &Matrix, fixed: &[Option<Matrix>]) -> Result<f64> {
    let trace = forward(net, registry, x, false, Some(fixed))?;
    mean_squared_error(&trace.outputs[net.position(net.root()).expect("root present")], y)
}

/// Trains a copy of `model` on the train split and returns the parameters with
/// the lowest train loss seen, including the starting point.
pub fn train(model: &Model, data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let train_idx = data.train_indices();
    if train_idx.is_empty() {
        return Err(Error::EmptySplit(Split::Train.to_string()));
    }
    let mut net = model.network.clone();
    let mut reg = model.registry.clone();
    let layout = ParameterLayout::new(&net, &reg)?;
    if layout.is_empty() {
        return Err(Error::NoTrainableParameters);
    }
    let needs = needs_gradient(&net, &reg)?;
    let (xtr, ytr) = data.subset(Split::Train);
    let (xte, yte) = data.subset(Split::Test);
    let has_test = !data.test_indices().is_empty();
    let fixed_tr = frozen_outputs(&net, &reg, &needs, &xtr)?;
    let fixed_te = if has_test {
        frozen_outputs(&net, &reg, &needs, &xte)?
    } else {
        Vec::new()
    };

    let evaluate = |net: &CompositeNetwork, reg: &Registry, epoch: usize| -> Result<EpochRecord> {
        let diverged = |e: Error| match e {
            Error::NonFinite { .. } => Error::Diverged { epoch },
            e => e,
        };
        let train_loss = split_loss(net, reg, &xtr, &ytr, &fixed_tr).map_err(diverged)?;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let test_loss = if has_test {
            Some(split_loss(net, reg, &xte, &yte, &fixed_te).map_err(diverged)?)
        } else {
            None
        };
        Ok(EpochRecord { epoch, train_loss, test_loss })
    };

    let mut params = layout.gather(&net, &reg)?;
    let mut velocity = vec![0.0; params.len()];
    let mut history = vec![evaluate(&net, &reg, 0)?];
    let mut best = (0usize, history[0].train_loss, params.clone());
    let mut rng = rng::seeded(config.seed);
    let mut order: Vec<usize> = (0..xtr.rows()).collect();
    let batch = config.batch_size.min(order.len());

    for epoch in 1..=config.max_epochs {
        let lr = if config.cosine_decay {
            let t = (epoch - 1) as f64 / config.max_epochs as f64;
            config.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        } else {
            config.learning_rate
        };
        order.shuffle(&mut rng);
        for rows in order.chunks(batch) {
            let xb = xtr.select_rows(rows);
            let yb = ytr.select_rows(rows);
            let fb = select_fixed(&fixed_tr, rows);
            let (mut g, _) = backprop(&net, &reg, &layout, &needs, &xb, &yb, Some(&fb)).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged { epoch },
                e => e,
            })?;
            if let Some(clip) = config.grad_clip {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > clip {
                    g.iter_mut().for_each(|v| *v *= clip / norm);
                }
            }
            for ((p, v), gi) in params.iter_mut().zip(&mut velocity).zip(&g) {
                *v = config.momentum * *v + gi;
                *p -= lr * *v;
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            layout.scatter(&mut net, &mut reg, &params)?;
        }
        let record = evaluate(&net, &reg, epoch)?;
        log::trace!("epoch {epoch}: train {:.6e}", record.train_loss);
        if record.train_loss < best.1 {
            best = (epoch, record.train_loss, params.clone());
        }
        history.push(record);
        if config.early_stop_patience > 0 && epoch - best.0 >= config.early_stop_patience {
            break;
        }
    }

    layout.scatter(&mut net, &mut reg, &best.2)?;
    Ok(TrainOutcome {
        model: Model { network: net, registry: reg },
        history,
        best_epoch: best.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::linear_solver;
    use crate::model::{Component, ComponentKind, Layer, Role};
    use rand::Rng;

    fn data(n: usize, seed: u64) -> (Matrix, Matrix) {
        let mut r = rng::seeded(seed);
        let x = Matrix::from_vec(n, 2, (0..2 * n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let y = Matrix::from_vec(n, 1, (0..n).map(|i| (x[(i, 0)] * 2.0).sin() + 0.5 * x[(i, 1)]).collect()).unwrap();
        (x, y)
    }

    fn mixed_model() -> Model {
        let mut r = rng::seeded(3);
        let f1 = Component::mlp("f1", ComponentKind::PreTrained, Role::Base, &[2, 3, 1], Activation::Tanh, &mut r).unwrap();
        let f2 = Component::mlp("f2", ComponentKind::NonInstantiated, Role::Base, &[2, 3, 1], Activation::Logistic, &mut r).unwrap();
        let g = CompositeNetwork::sandwich(&[&CompositeNetwork::leaf("f1"), &CompositeNetwork::leaf("f2")], Activation::SL);
        let mut g = g;
        g.nodes_mut()
            .iter_mut()
            .for_each(|n| if let NodeOp::Combine { theta, .. } = &mut n.op {
                for t in theta.iter_mut() {
                    *t += 0.3;
                }
            });
        let h = CompositeNetwork::sandwich(&[&g, &CompositeNetwork::leaf("f2")], Activation::Tanh);
        Model::new(h, Registry::from_components([f1, f2]).unwrap()).unwrap()
    }

    // Central differences, independent of the reverse pass.
    fn numeric_gradient(model: &Model, x: &Matrix, y: &Matrix, i: usize) -> f64 {
        let layout = ParameterLayout::new(&model.network, &model.registry).unwrap();
        let base = layout.gather(&model.network, &model.registry).unwrap();
        let h = 1e-6 * base[i].abs().max(1.0);
        let loss_at = |v: f64| {
            let mut p = base.clone();
            p[i] = v;
            let mut m = model.clone();
            layout.scatter(&mut m.network, &mut m.registry, &p).unwrap();
            mean_squared_error(&m.evaluate(x).unwrap(), y).unwrap()
        };
        (loss_at(base[i] + h) - loss_at(base[i] - h)) / (2.0 * h)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = mixed_model();
        let (x, y) = data(12, 1);
        let g = gradients(&model.network, &model.registry, &x, &y).unwrap();
        assert!(g.values.len() >= 20);
        let mut r = rng::seeded(9);
        let mut picks: Vec<usize> = (0..g.values.len()).collect();
        picks.shuffle(&mut r);
        for &i in picks.iter().take(20) {
            let fd = numeric_gradient(&model, &x, &y, i);
            let err = (g.values[i] - fd).abs();
            assert!(
                err <= 1e-5 * fd.abs().max(g.values[i].abs()) || err <= 1e-7,
                "{}: analytic {} numeric {}",
                g.layout.path(i),
                g.values[i],
                fd
            );
        }
    }

    #[test]
    fn frozen_parameters_excluded() {
        let model = mixed_model();
        let layout = ParameterLayout::new(&model.network, &model.registry).unwrap();
        let f2 = model.registry.get("f2").unwrap().parameter_count();
        let thetas: usize = model
            .network
            .nodes()
            .iter()
            .map(|n| match &n.op {
                NodeOp::Combine { theta, .. } => theta.len(),
                _ => 0,
            })
            .sum();
        assert_eq!(layout.len(), f2 + thetas);
        assert_eq!(layout.len(), model.parameters().unwrap().trainable);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let model = mixed_model();
        let (x, y) = data(40, 2);
        let d = Dataset::with_fraction(x, y, 0.75).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 3,
            ..TrainConfig::default()
        };
        let out = train(&model, &d, &cfg).unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.history.len(), 4);
    }

    #[test]
    fn frozen_weights_unchanged_and_seed_deterministic() {
        let model = mixed_model();
        let (x, y) = data(60, 4);
        let d = Dataset::with_fraction(x, y, 0.8).unwrap();
        let cfg = TrainConfig {
            max_epochs: 20,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let a = train(&model, &d, &cfg).unwrap();
        let b = train(&model, &d, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.model.registry.get("f1").unwrap(), model.registry.get("f1").unwrap());
        assert!(a.best_train_loss() <= a.history[0].train_loss);
    }

    #[test]
    fn linear_combination_reaches_closed_form() {
        let n = 200;
        let mut r = rng::seeded(11);
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-1.5..1.5)).collect();
        let f: Vec<Vec<f64>> = (0..2)
            .map(|_| y.iter().map(|v| v + r.random_range(-0.8..0.8)).collect())
            .collect();
        // components echo input columns
        let x = Matrix::from_vec(n, 2, (0..n).flat_map(|i| [f[0][i], f[1][i]]).collect()).unwrap();
        let comp = |id: &str, col| Component {
            id: id.into(),
            kind: ComponentKind::PreTrained,
            role: Role::Base,
            input_columns: Some(vec![col]),
            layers: vec![Layer {
                shape: [1, 1],
                weights: vec![1.0],
                bias: vec![0.0],
                activation: Activation::Linear,
                frozen: true,
            }],
        };
        let net = CompositeNetwork::combine(
            &[&CompositeNetwork::leaf("f1"), &CompositeNetwork::leaf("f2")],
            vec![0.0, 0.5, 0.5],
        )
        .unwrap();
        let model = Model::new(net, Registry::from_components([comp("f1", 0), comp("f2", 1)]).unwrap()).unwrap();
        let d = Dataset::new(x, Matrix::column_vector(&y), (0..n).collect(), vec![]).unwrap();
        let out = train(&model, &d, &TrainConfig::default()).unwrap();
        let fit = linear_solver::fit(&f, &y, 0.0).unwrap();
        assert!(
            (out.best_train_loss() - fit.composite_loss).abs() < 1e-4,
            "{} vs {}",
            out.best_train_loss(),
            fit.composite_loss
        );
    }

    #[test]
    fn fully_frozen_model_has_nothing_to_train() {
        let model = mixed_model().frozen();
        let (x, y) = data(10, 5);
        let d = Dataset::with_fraction(x, y, 1.0).unwrap();
        assert!(matches!(train(&model, &d, &TrainConfig::default()), Err(Error::NoTrainableParameters)));
    }
}
