//! Composite networks: a rooted DAG of component references, linear
//! combinations with bias, and elementwise activations, stored in postorder.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::component::Registry;

pub type NodeId = u32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum NodeOp {
    Component {
        component: String,
    },
    /// `theta[0] + sum_j theta[j + 1] * child_j`, applied per output coordinate.
    Combine {
        children: Vec<NodeId>,
        theta: Vec<f64>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        frozen: bool,
    },
    Activate {
        child: NodeId,
        activation: Activation,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    #[serde(flatten)]
    pub op: NodeOp,
}

impl Node {
    pub fn children(&self) -> Vec<NodeId> {
        match &self.op {
            NodeOp::Component { .. } => Vec::new(),
            NodeOp::Combine { children, .. } => children.clone(),
            NodeOp::Activate { child, .. } => vec![*child],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetwork", into = "RawNetwork")]
pub struct CompositeNetwork {
    nodes: Vec<Node>,
    root: NodeId,
}

#[derive(Serialize, Deserialize)]
struct RawNetwork {
    nodes: Vec<Node>,
    root: NodeId,
}

impl TryFrom<RawNetwork> for CompositeNetwork {
    type Error = Error;

    fn try_from(raw: RawNetwork) -> Result<Self> {
        CompositeNetwork::new(raw.nodes, raw.root)
    }
}

impl From<CompositeNetwork> for RawNetwork {
    fn from(n: CompositeNetwork) -> Self {
        RawNetwork {
            nodes: n.nodes,
            root: n.root,
        }
    }
}

impl CompositeNetwork {
    /// Validates a postorder node list: unique ids, children listed before
    /// their parents, Θ of length `children + 1`, and every node reachable
    /// from the root.
    pub fn new(nodes: Vec<Node>, root: NodeId) -> Result<Self> {
        let mut seen: HashMap<NodeId, usize> = HashMap::new();
        for (pos, node) in nodes.iter().enumerate() {
            for c in node.children() {
                if !seen.contains_key(&c) {
                    return Err(Error::InvalidNetwork(format!(
                        "node {} refers to {c}, which is not listed before it",
                        node.id
                    )));
                }
            }
            match &node.op {
                NodeOp::Combine { children, theta, .. } => {
                    if theta.len() != children.len() + 1 {
                        return Err(Error::InvalidNetwork(format!(
                            "combine node {} has {} weights for {} children",
                            node.id,
                            theta.len(),
                            children.len()
                        )));
                    }
                    if !theta.iter().all(|t| t.is_finite()) {
                        return Err(Error::InvalidNetwork(format!("combine node {} has non-finite weights", node.id)));
                    }
                }
                NodeOp::Component { component } if component.is_empty() => {
                    return Err(Error::InvalidNetwork(format!("node {} has an empty component id", node.id)));
                }
                _ => {}
            }
            if seen.insert(node.id, pos).is_some() {
                return Err(Error::InvalidNetwork(format!("duplicate node id {}", node.id)));
            }
        }
        let root_pos = *seen
            .get(&root)
            .ok_or_else(|| Error::InvalidNetwork(format!("root {root} is not a node")))?;
        let mut reachable = vec![false; nodes.len()];
        reachable[root_pos] = true;
        for pos in (0..nodes.len()).rev() {
            if reachable[pos] {
                for c in nodes[pos].children() {
                    reachable[seen[&c]] = true;
                }
            }
        }
        if let Some(p) = reachable.iter().position(|r| !r) {
            return Err(Error::InvalidNetwork(format!("node {} is not reachable from the root", nodes[p].id)));
        }
        Ok(Self { nodes, root })
    }

    /// Network consisting of a single component reference.
    pub fn leaf(component: impl Into<String>) -> Self {
        Self {
            nodes: vec![Node {
                id: 0,
                op: NodeOp::Component {
                    component: component.into(),
                },
            }],
            root: 0,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub(crate) fn nodes_mut(&mut self) -> &mut [Node] {
        &mut self.nodes
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn position(&self, id: NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub(crate) fn positions(&self) -> HashMap<NodeId, usize> {
        self.nodes.iter().enumerate().map(|(p, n)| (n.id, p)).collect()
    }

    /// Distinct component ids in first-reference order.
    pub fn component_ids(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for n in &self.nodes {
            if let NodeOp::Component { component } = &n.op {
                if seen.insert(component.clone()) {
                    out.push(component.clone());
                }
            }
        }
        out
    }

    /// Number of activation layers on the longest root path.
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let pos = self.positions();
        for (p, n) in self.nodes.iter().enumerate() {
            let below = n.children().iter().map(|c| depth[pos[c]]).max().unwrap_or(0);
            depth[p] = below + usize::from(matches!(n.op, NodeOp::Activate { .. }));
        }
        depth[pos[&self.root]]
    }

    /// Serializes to the postorder JSON form.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Appends the nodes of `other` with fresh ids; returns the id of its root.
    fn append(&mut self, other: &CompositeNetwork) -> NodeId {
        let offset = self.next_id();
        let map = |id: NodeId| id + offset;
        for n in &other.nodes {
            let op = match &n.op {
                NodeOp::Component { component } => NodeOp::Component {
                    component: component.clone(),
                },
                NodeOp::Combine { children, theta, frozen } => NodeOp::Combine {
                    children: children.iter().copied().map(map).collect(),
                    theta: theta.clone(),
                    frozen: *frozen,
                },
                NodeOp::Activate { child, activation } => NodeOp::Activate {
                    child: map(*child),
                    activation: *activation,
                },
            };
            self.nodes.push(Node { id: map(n.id), op });
        }
        map(other.root)
    }

    fn next_id(&self) -> NodeId {
        self.nodes.iter().map(|n| n.id + 1).max().unwrap_or(0)
    }

    /// `L1(σ(L0(operands)))`: a combine node over the operand roots, the
    /// activation, and a one-child outer combine. The inner weights start at
    /// the uniform ensemble and the outer map at the identity.
    pub fn sandwich(operands: &[&CompositeNetwork], activation: Activation) -> CompositeNetwork {
        let mut out = CompositeNetwork {
            nodes: Vec::new(),
            root: 0,
        };
        let roots: Vec<NodeId> = operands.iter().map(|o| out.append(o)).collect();
        let k = roots.len();
        let mut theta = vec![0.0];
        theta.extend(std::iter::repeat_n(1.0 / k.max(1) as f64, k));
        let inner = out.next_id();
        out.nodes.push(Node {
            id: inner,
            op: NodeOp::Combine {
                children: roots,
                theta,
                frozen: false,
            },
        });
        let act = inner + 1;
        out.nodes.push(Node {
            id: act,
            op: NodeOp::Activate { child: inner, activation },
        });
        let outer = act + 1;
        out.nodes.push(Node {
            id: outer,
            op: NodeOp::Combine {
                children: vec![act],
                theta: vec![0.0, 1.0],
                frozen: false,
            },
        });
        out.root = outer;
        out
    }

    /// A single combine node over `operands` with the given weights.
    pub fn combine(operands: &[&CompositeNetwork], theta: Vec<f64>) -> Result<CompositeNetwork> {
        let mut out = CompositeNetwork {
            nodes: Vec::new(),
            root: 0,
        };
        let roots: Vec<NodeId> = operands.iter().map(|o| out.append(o)).collect();
        let id = out.next_id();
        out.nodes.push(Node {
            id,
            op: NodeOp::Combine {
                children: roots,
                theta,
                frozen: false,
            },
        });
        CompositeNetwork::new(out.nodes, id)
    }

    /// Freezes every combine node.
    pub fn freeze_combines(&mut self) {
        for n in &mut self.nodes {
            if let NodeOp::Combine { frozen, .. } = &mut n.op {
                *frozen = true;
            }
        }
    }

    pub fn open_combines(&mut self) {
        for n in &mut self.nodes {
            if let NodeOp::Combine { frozen, .. } = &mut n.op {
                *frozen = false;
            }
        }
    }

    /// Renames component references.
    pub fn rename_components(&mut self, rename: impl Fn(&str) -> Option<String>) {
        for n in &mut self.nodes {
            if let NodeOp::Component { component } = &mut n.op {
                if let Some(new) = rename(component) {
                    *component = new;
                }
            }
        }
    }
}

/// Per-node outputs of a forward pass, indexed by node position.
pub(crate) struct NetworkTrace {
    pub outputs: Vec<Matrix>,
    pub components: HashMap<String, crate::model::component::ForwardTrace>,
}

pub(crate) fn forward(
    net: &CompositeNetwork,
    registry: &Registry,
    inputs: &Matrix,
    keep_traces: bool,
    fixed: Option<&[Option<Matrix>]>,
) -> Result<NetworkTrace> {
    let pos = net.positions();
    let count = net.nodes.len();
    let fixed_at = |p: usize| fixed.and_then(|f| f[p].as_ref());
    // only nodes feeding the root without a precomputed value are evaluated
    let mut required = vec![false; count];
    required[pos[&net.root]] = true;
    for p in (0..count).rev() {
        if required[p] && fixed_at(p).is_none() {
            for c in net.nodes[p].children() {
                required[pos[&c]] = true;
            }
        }
    }
    let rows = inputs.rows();
    let mut outputs: Vec<Matrix> = Vec::with_capacity(count);
    let mut components = HashMap::new();
    let mut cache: HashMap<&str, Matrix> = HashMap::new();
    for (p, node) in net.nodes.iter().enumerate() {
        if !required[p] {
            outputs.push(Matrix::zeros(0, 0));
            continue;
        }
        if let Some(m) = fixed_at(p) {
            outputs.push(m.clone());
            continue;
        }
        let out = match &node.op {
            NodeOp::Component { component } => {
                if let Some(m) = cache.get(component.as_str()) {
                    m.clone()
                } else {
                    let c = registry.get(component)?;
                    let m = if keep_traces && !c.is_fully_frozen() {
                        let t = c.forward_trace(inputs)?;
                        let m = t.output.clone();
                        components.insert(component.clone(), t);
                        m
                    } else {
                        c.forward(inputs)?
                    };
                    cache.insert(component.as_str(), m.clone());
                    m
                }
            }
            NodeOp::Combine { children, theta, .. } => {
                let width = children.first().map_or(1, |c| outputs[pos[c]].cols());
                for c in children {
                    let w = outputs[pos[c]].cols();
                    if w != width {
                        return Err(Error::mismatch(format!("children widths of combine node {}", node.id), width, w));
                    }
                }
                let mut m = Matrix::filled(rows, width, theta[0]);
                for (c, &t) in children.iter().zip(&theta[1..]) {
                    let child = &outputs[pos[c]];
                    for (o, &v) in m.as_mut_slice().iter_mut().zip(child.as_slice()) {
                        *o += t * v;
                    }
                }
                m
            }
            NodeOp::Activate { child, activation } => {
                let a = *activation;
                outputs[pos[child]].map(|z| a.eval(z))
            }
        };
        if !out.all_finite() {
            return Err(Error::NonFinite {
                node: node.id.to_string(),
            });
        }
        outputs.push(out);
    }
    Ok(NetworkTrace { outputs, components })
}

/// Evaluates the network on every input row.
pub fn evaluate(net: &CompositeNetwork, registry: &Registry, inputs: &Matrix) -> Result<Matrix> {
    let mut trace = forward(net, registry, inputs, false, None)?;
    let root = net.position(net.root).expect("validated root");
    Ok(trace.outputs.swap_remove(root))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: NodeId, op: NodeOp) -> Node {
        Node { id, op }
    }

    #[test]
    fn rejects_forward_references_and_bad_theta() {
        let bad_order = vec![
            node(
                1,
                NodeOp::Combine {
                    children: vec![0],
                    theta: vec![0.0, 1.0],
                    frozen: false,
                },
            ),
            node(0, NodeOp::Component { component: "f".into() }),
        ];
        assert!(CompositeNetwork::new(bad_order, 1).is_err());

        let bad_theta = vec![
            node(0, NodeOp::Component { component: "f".into() }),
            node(
                1,
                NodeOp::Combine {
                    children: vec![0],
                    theta: vec![1.0],
                    frozen: false,
                },
            ),
        ];
        assert!(CompositeNetwork::new(bad_theta, 1).is_err());
    }

    #[test]
    fn rejects_unreachable_and_duplicate_nodes() {
        let dangling = vec![
            node(0, NodeOp::Component { component: "f".into() }),
            node(1, NodeOp::Component { component: "g".into() }),
        ];
        assert!(CompositeNetwork::new(dangling, 1).is_err());
        let dup = vec![
            node(0, NodeOp::Component { component: "f".into() }),
            node(0, NodeOp::Component { component: "g".into() }),
        ];
        assert!(CompositeNetwork::new(dup, 0).is_err());
    }

    #[test]
    fn shared_subtree_is_a_dag() {
        let nodes = vec![
            node(0, NodeOp::Component { component: "f".into() }),
            node(
                1,
                NodeOp::Activate {
                    child: 0,
                    activation: Activation::Tanh,
                },
            ),
            node(
                2,
                NodeOp::Combine {
                    children: vec![0, 1, 1],
                    theta: vec![0.0, 1.0, 1.0, 1.0],
                    frozen: false,
                },
            ),
        ];
        let net = CompositeNetwork::new(nodes, 2).unwrap();
        assert_eq!(net.component_ids(), vec!["f".to_string()]);
        assert_eq!(net.depth(), 1);
    }

    #[test]
    fn sandwich_shape() {
        let a = CompositeNetwork::leaf("a");
        let b = CompositeNetwork::leaf("b");
        let s = CompositeNetwork::sandwich(&[&a, &b], Activation::SL);
        assert_eq!(s.nodes().len(), 5);
        assert_eq!(s.depth(), 1);
        let t = CompositeNetwork::sandwich(&[&s, &CompositeNetwork::leaf("c")], Activation::Linear);
        assert_eq!(t.depth(), 2);
        assert_eq!(t.component_ids(), vec!["a", "b", "c"]);
    }

    #[test]
    fn json_uses_op_tags() {
        let s = CompositeNetwork::sandwich(&[&CompositeNetwork::leaf("a")], Activation::Logistic);
        let text = s.to_json().unwrap();
        assert!(text.contains("\"op\": \"combine\""));
        assert!(text.contains("\"kind\": \"logistic\""));
        assert_eq!(CompositeNetwork::from_json(&text).unwrap(), s);
    }
}
