//! Components, composite-network DAGs, datasets, evaluation and loss.

mod component;
mod dataset;
mod network;

pub use component::{Component, ComponentKind, Layer, Registry, Role};
pub use dataset::{Dataset, Split};
pub use network::{evaluate, CompositeNetwork, Node, NodeId, NodeOp};
pub(crate) use network::forward;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// `<g(x) - y, g(x) - y> / N` over the rows of `predictions` and `labels`.
pub fn mean_squared_error(predictions: &Matrix, labels: &Matrix) -> Result<f64> {
    if !predictions.same_shape(labels) {
        return Err(Error::mismatch(
            "prediction/label shape",
            labels.rows() * labels.cols(),
            predictions.rows() * predictions.cols(),
        ));
    }
    if labels.rows() == 0 {
        return Err(Error::EmptySplit("predictions".into()));
    }
    let sum: f64 = predictions
        .as_slice()
        .iter()
        .zip(labels.as_slice())
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    Ok(sum / labels.rows() as f64)
}

/// L2 loss of the network on one split. RMSE is its square root.
pub fn loss_l2(net: &CompositeNetwork, registry: &Registry, data: &Dataset, split: Split) -> Result<f64> {
    let idx = data.indices(split);
    if idx.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let (x, y) = data.subset(split);
    let pred = evaluate(net, registry, &x)?;
    mean_squared_error(&pred, &y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub trainable: usize,
    pub total: usize,
}

/// Unfrozen combine weights plus unfrozen component blocks are trainable;
/// frozen blocks add to the total. Each component counts once however often
/// it is referenced.
pub fn count_parameters(net: &CompositeNetwork, registry: &Registry) -> Result<ParameterCount> {
    let mut trainable = 0;
    let mut total = 0;
    for n in net.nodes() {
        if let NodeOp::Combine { theta, frozen, .. } = &n.op {
            total += theta.len();
            if !frozen {
                trainable += theta.len();
            }
        }
    }
    for id in net.component_ids() {
        let c = registry.get(&id)?;
        total += c.parameter_count();
        trainable += c.trainable_parameter_count();
    }
    Ok(ParameterCount { trainable, total })
}

/// A network together with the components it references.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub network: CompositeNetwork,
    pub registry: Registry,
}

impl Model {
    pub fn new(network: CompositeNetwork, registry: Registry) -> Result<Self> {
        for id in network.component_ids() {
            registry.get(&id)?;
        }
        Ok(Self { network, registry })
    }

    /// Model made of a single component.
    pub fn leaf(component: Component) -> Result<Self> {
        let network = CompositeNetwork::leaf(component.id.clone());
        let registry = Registry::from_components([component])?;
        Ok(Self { network, registry })
    }

    pub fn evaluate(&self, inputs: &Matrix) -> Result<Matrix> {
        evaluate(&self.network, &self.registry, inputs)
    }

    pub fn loss(&self, data: &Dataset, split: Split) -> Result<f64> {
        loss_l2(&self.network, &self.registry, data, split)
    }

    pub fn parameters(&self) -> Result<ParameterCount> {
        count_parameters(&self.network, &self.registry)
    }

    /// Freezes every combine node and every referenced component.
    pub fn frozen(&self) -> Model {
        let mut m = self.clone();
        m.network.freeze_combines();
        for id in m.network.component_ids() {
            if let Ok(c) = m.registry.get_mut(&id) {
                c.freeze();
            }
        }
        m
    }

    /// Opens every combine node and every referenced component for training.
    /// Components that were frozen get the suffix `°` so the open copy does
    /// not collide with the pre-trained original.
    pub fn opened(&self) -> Result<Model> {
        let mut network = self.network.clone();
        network.open_combines();
        let mut registry = Registry::new();
        let ids = self.network.component_ids();
        for id in &ids {
            let mut c = self.registry.get(id)?.clone();
            if c.is_fully_frozen() && !c.id.ends_with('°') {
                c.id = format!("{}°", c.id);
            }
            c.open();
            registry.insert(c)?;
        }
        network.rename_components(|id| {
            let c = self.registry.get(id).ok()?;
            (c.is_fully_frozen() && !id.ends_with('°')).then(|| format!("{id}°"))
        });
        Ok(Model { network, registry })
    }

    /// Registry restricted to the components the network references.
    pub fn pruned_registry(&self) -> Result<Registry> {
        Registry::from_components(
            self.network
                .component_ids()
                .iter()
                .map(|id| self.registry.get(id).cloned())
                .collect::<Result<Vec<_>>>()?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;

    fn scalar_component(id: &str, w: f64, b: f64) -> Component {
        Component {
            id: id.into(),
            kind: ComponentKind::PreTrained,
            role: Role::Base,
            input_columns: Some(vec![0]),
            layers: vec![Layer {
                shape: [1, 1],
                weights: vec![w],
                bias: vec![b],
                activation: Activation::Linear,
                frozen: true,
            }],
        }
    }

    #[test]
    fn single_row_loss() {
        let p = Matrix::column_vector(&[3.0]);
        let y = Matrix::column_vector(&[1.0]);
        assert_eq!(mean_squared_error(&p, &y).unwrap(), 4.0);
        assert_eq!(mean_squared_error(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn empty_split_is_an_error() {
        let reg = Registry::from_components([scalar_component("f", 1.0, 0.0)]).unwrap();
        let net = CompositeNetwork::leaf("f");
        let data = Dataset::new(Matrix::zeros(2, 1), Matrix::zeros(2, 1), vec![0, 1], vec![]).unwrap();
        assert!(matches!(loss_l2(&net, &reg, &data, Split::Test), Err(Error::EmptySplit(_))));
    }

    #[test]
    fn linear_combine_parameter_count() {
        let reg = Registry::from_components([scalar_component("f1", 1.0, 0.0), scalar_component("f2", 2.0, 1.0)])
            .unwrap();
        let net = CompositeNetwork::combine(
            &[&CompositeNetwork::leaf("f1"), &CompositeNetwork::leaf("f2")],
            vec![0.0, 0.5, 0.5],
        )
        .unwrap();
        let count = count_parameters(&net, &reg).unwrap();
        assert_eq!(count, ParameterCount { trainable: 3, total: 3 + 2 + 2 });
    }

    #[test]
    fn shared_component_counted_once() {
        let reg = Registry::from_components([scalar_component("f", 1.0, 0.0)]).unwrap();
        let leaf = CompositeNetwork::leaf("f");
        let net = CompositeNetwork::combine(&[&leaf, &leaf], vec![0.0, 1.0, 1.0]).unwrap();
        assert_eq!(count_parameters(&net, &reg).unwrap().total, 3 + 2);
    }

    #[test]
    fn opened_model_renames_frozen_components() {
        let m = Model::leaf(scalar_component("f1", 1.0, 0.0)).unwrap();
        let open = m.opened().unwrap();
        assert_eq!(open.network.component_ids(), vec!["f1°".to_string()]);
        assert_eq!(open.parameters().unwrap().trainable, 2);
        let frozen = open.frozen();
        assert_eq!(frozen.parameters().unwrap().trainable, 0);
        // reopening a component that already carries the suffix keeps its id
        assert_eq!(frozen.opened().unwrap().network.component_ids(), vec!["f1°".to_string()]);
    }
}
