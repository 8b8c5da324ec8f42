//! Greedy construction of composite networks from a component pool: the deep
//! chain (DBCN), the balanced base tree followed by a chain (BBCN), and the
//! exhaustive search over frozen/open operand states.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::model::{Component, ComponentKind, CompositeNetwork, Dataset, Model, Registry, Role, Split};
use crate::rng;
use crate::trainer::{self, EpochRecord, TrainConfig};

/// Default cap on the number of candidates an exhaustive search may train.
pub const CANDIDATE_BUDGET: usize = 1 << 12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMetric {
    #[default]
    TrainLoss,
    ValidationLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstructionConfig {
    pub activations: Vec<Activation>,
    pub delta: f64,
    /// Number of leading base components merged into the balanced tree.
    /// `None` uses every leading base component.
    pub k0: Option<usize>,
    pub train: TrainConfig,
    pub selection: SelectionMetric,
    pub candidate_budget: usize,
}

impl Default for ConstructionConfig {
    fn default() -> Self {
        Self {
            activations: vec![Activation::Linear, Activation::SL],
            delta: 0.0,
            k0: None,
            train: TrainConfig::default(),
            selection: SelectionMetric::TrainLoss,
            candidate_budget: CANDIDATE_BUDGET,
        }
    }
}

impl ConstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.activations.is_empty() {
            return Err(Error::Config("activation set is empty".into()));
        }
        if let Some(a) = self.activations.iter().find(|a| !a.is_c1()) {
            return Err(Error::NotC1Activation(a.label()));
        }
        if self.delta.is_nan() {
            return Err(Error::Config("delta is NaN".into()));
        }
        self.train.validate()
    }
}

/// Binary merge schedule over positions in the ordered pool.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeTree {
    Leaf(usize),
    Merge {
        name: String,
        left: Box<MergeTree>,
        right: Box<MergeTree>,
    },
}

impl MergeTree {
    fn merge(name: String, left: MergeTree, right: MergeTree) -> Self {
        MergeTree::Merge {
            name,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// `((f1 ⊕ f2) ⊕ f3) ⊕ ...` with results named `g2, g3, ...`.
    pub fn chain(n: usize) -> Self {
        Self::chain_from(MergeTree::Leaf(0), 1, n)
    }

    fn chain_from(base: MergeTree, start: usize, n: usize) -> Self {
        (start..n).fold(base, |acc, j| Self::merge(format!("g{}", j + 1), acc, MergeTree::Leaf(j)))
    }

    /// Balanced pairwise merges over the first `k0` leaves (an odd subtree
    /// carries into the next round), then a chain over the rest.
    pub fn bbcn_shape(n: usize, k0: usize) -> Self {
        let k0 = k0.clamp(1, n.max(1));
        let mut level: Vec<MergeTree> = (0..k0).map(MergeTree::Leaf).collect();
        let mut round = 1;
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len().div_ceil(2));
            let mut it = level.into_iter();
            let mut t = 1;
            while let Some(a) = it.next() {
                match it.next() {
                    Some(b) => next.push(Self::merge(format!("h{round},{t}"), a, b)),
                    None => next.push(a),
                }
                t += 1;
            }
            level = next;
            round += 1;
        }
        let root = level.pop().expect("k0 >= 1");
        Self::chain_from(root, k0, n)
    }

    pub fn merge_count(&self) -> usize {
        match self {
            MergeTree::Leaf(_) => 0,
            MergeTree::Merge { left, right, .. } => 1 + left.merge_count() + right.merge_count(),
        }
    }

    fn leaves(&self, out: &mut Vec<usize>) {
        match self {
            MergeTree::Leaf(i) => out.push(*i),
            MergeTree::Merge { left, right, .. } => {
                left.leaves(out);
                right.leaves(out);
            }
        }
    }

    /// Parenthesised shape, e.g. `((f1, f2), (f3, f4))`.
    pub fn shape(&self, names: &[String]) -> String {
        match self {
            MergeTree::Leaf(i) => names.get(*i).cloned().unwrap_or_else(|| format!("#{i}")),
            MergeTree::Merge { left, right, .. } => format!("({}, {})", left.shape(names), right.shape(names)),
        }
    }
}

/// Operand state in a merge: frozen (×) or opened for training (○).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperandState {
    Frozen,
    Open,
}

impl OperandState {
    fn mark(self) -> &'static str {
        match self {
            OperandState::Frozen => "×",
            OperandState::Open => "○",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub description: String,
    pub activation: Activation,
    pub states: [OperandState; 2],
    pub train_loss: Option<f64>,
    pub test_loss: Option<f64>,
    pub trainable: usize,
    pub total: usize,
    /// Training error when the candidate failed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CandidateRecord {
    pub fn metric(&self, m: SelectionMetric) -> Option<f64> {
        match m {
            SelectionMetric::TrainLoss => self.train_loss,
            SelectionMetric::ValidationLoss => self.test_loss,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub name: String,
    pub candidates: Vec<CandidateRecord>,
    pub front_runner: usize,
    /// Per-epoch losses of the front-runner's training run.
    #[serde(skip)]
    pub history: Vec<EpochRecord>,
}

impl StepRecord {
    pub fn front_runner(&self) -> &CandidateRecord {
        &self.candidates[self.front_runner]
    }
}

/// A network on the pruning spine with its losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpineEntry {
    pub name: String,
    pub description: String,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstructionReport {
    pub strategy: String,
    pub order: Vec<String>,
    pub schedule: String,
    pub selection: SelectionMetric,
    pub steps: Vec<StepRecord>,
    /// Base network followed by every chain extension, in build order.
    pub spine: Vec<SpineEntry>,
    /// Spine length before pruning.
    pub pruned_from: usize,
    /// Spine position kept by pruning, 1-based (1 is the base).
    pub depth: usize,
    pub final_description: String,
    pub final_train_loss: f64,
    pub final_test_loss: Option<f64>,
    #[serde(rename = "final")]
    pub final_model: Model,
}

impl ConstructionReport {
    /// Whether every step's front-runner carries the step's minimum metric.
    pub fn front_runners_are_minimal(&self) -> bool {
        self.steps.iter().all(|s| {
            let best = s
                .candidates
                .iter()
                .filter_map(|c| c.metric(self.selection))
                .fold(f64::INFINITY, f64::min);
            s.front_runner().metric(self.selection) == Some(best)
        })
    }
}

/// Pool order: pre-trained before non-instantiated, base before auxiliary,
/// then ascending loss. Ties and non-instantiated components keep pool order.
pub fn order_components(pool: &[Component], losses: &[Option<f64>]) -> Vec<Component> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    let key = |i: usize| {
        let c = &pool[i];
        let kind = (c.kind == ComponentKind::NonInstantiated) as u8;
        let role = (c.role == Role::Auxiliary) as u8;
        let loss = match c.kind {
            ComponentKind::PreTrained => losses.get(i).copied().flatten().unwrap_or(f64::INFINITY),
            ComponentKind::NonInstantiated => 0.0,
        };
        (kind, role, loss)
    };
    idx.sort_by(|&a, &b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.cmp(&kb.0).then(ka.1.cmp(&kb.1)).then(ka.2.total_cmp(&kb.2))
    });
    idx.into_iter().map(|i| pool[i].clone()).collect()
}

/// Loss of each component alone on a split; `None` for non-instantiated ones.
pub fn component_losses(pool: &[Component], data: &Dataset, split: Split) -> Result<Vec<Option<f64>>> {
    pool.iter()
        .map(|c| match c.kind {
            ComponentKind::NonInstantiated => Ok(None),
            ComponentKind::PreTrained => Model::leaf(c.clone())?.loss(data, split).map(Some),
        })
        .collect()
}

/// Seed used to train candidate `index` of merge `step`.
pub fn candidate_seed(seed: u64, step: usize, index: usize) -> u64 {
    rng::derive(rng::derive(seed, step as u64 + 1), index as u64)
}

/// Candidates in report order: operand states outermost, activations inner.
fn candidate_grid(states: &[[OperandState; 2]], activations: &[Activation]) -> Vec<([OperandState; 2], Activation)> {
    states
        .iter()
        .flat_map(|s| activations.iter().map(move |a| (*s, *a)))
        .collect()
}

const FROZEN_ONLY: [[OperandState; 2]; 1] = [[OperandState::Frozen, OperandState::Frozen]];
const ALL_STATES: [[OperandState; 2]; 4] = [
    [OperandState::Frozen, OperandState::Frozen],
    [OperandState::Frozen, OperandState::Open],
    [OperandState::Open, OperandState::Frozen],
    [OperandState::Open, OperandState::Open],
];

struct Built {
    name: String,
    description: String,
    model: Model,
    train_loss: f64,
    test_loss: Option<f64>,
}

struct Executor<'a> {
    pool: &'a [Component],
    data: &'a Dataset,
    cfg: &'a ConstructionConfig,
    states: &'a [[OperandState; 2]],
    show_states: bool,
    has_test: bool,
    steps: Vec<StepRecord>,
}

impl Executor<'_> {
    fn losses(&self, model: &Model) -> Result<(f64, Option<f64>)> {
        let train = model.loss(self.data, Split::Train)?;
        let test = if self.has_test {
            Some(model.loss(self.data, Split::Test)?)
        } else {
            None
        };
        Ok((train, test))
    }

    fn leaf(&self, i: usize) -> Result<Built> {
        let c = &self.pool[i];
        let mut model = Model::leaf(c.clone())?;
        if model.parameters()?.trainable > 0 {
            // a non-instantiated base trains alone before any merge
            let mut tc = self.cfg.train.clone();
            tc.seed = rng::derive(self.cfg.train.seed, u64::MAX - i as u64);
            model = trainer::train(&model, self.data, &tc)?.model.frozen();
        }
        let (train_loss, test_loss) = self.losses(&model)?;
        Ok(Built {
            name: c.id.clone(),
            description: c.id.clone(),
            model,
            train_loss,
            test_loss,
        })
    }

    fn metric(&self, b: &Built) -> f64 {
        match self.cfg.selection {
            SelectionMetric::TrainLoss => b.train_loss,
            SelectionMetric::ValidationLoss => b.test_loss.unwrap_or(f64::INFINITY),
        }
    }

    fn operand(&self, b: &Built, state: OperandState) -> Result<Model> {
        Ok(match state {
            OperandState::Frozen => b.model.frozen(),
            OperandState::Open => b.model.opened()?,
        })
    }

    fn merge(&mut self, name: &str, left: &Built, right: &Built) -> Result<Built> {
        let step = self.steps.len();
        let grid = candidate_grid(self.states, &self.cfg.activations);
        let outcomes: Vec<Result<(CandidateRecord, Model, Vec<EpochRecord>)>> = grid
            .par_iter()
            .enumerate()
            .map(|(idx, &(states, act))| {
                let lm = self.operand(left, states[0])?;
                let rm = self.operand(right, states[1])?;
                let registry: Registry = lm.registry.merged(&rm.registry)?;
                let network = CompositeNetwork::sandwich(&[&lm.network, &rm.network], act);
                let model = Model::new(network, registry)?;
                let count = model.parameters()?;
                let description = if self.show_states {
                    format!(
                        "{}({}{}, {}{})",
                        act.label(),
                        left.name,
                        states[0].mark(),
                        right.name,
                        states[1].mark()
                    )
                } else {
                    format!("{}({}, {})", act.label(), left.name, right.name)
                };
                let mut tc = self.cfg.train.clone();
                tc.seed = candidate_seed(self.cfg.train.seed, step, idx);
                let mut rec = CandidateRecord {
                    description,
                    activation: act,
                    states,
                    train_loss: None,
                    test_loss: None,
                    trainable: count.trainable,
                    total: count.total,
                    error: None,
                };
                match trainer::train(&model, self.data, &tc) {
                    Ok(out) => {
                        let (tr, te) = self.losses(&out.model)?;
                        rec.train_loss = Some(tr);
                        rec.test_loss = te;
                        Ok((rec, out.model, out.history))
                    }
                    Err(e) => {
                        log::warn!("candidate {} failed: {e}", rec.description);
                        rec.error = Some(e.to_string());
                        Ok((rec, model, Vec::new()))
                    }
                }
            })
            .collect();
        let mut records = Vec::with_capacity(outcomes.len());
        let mut models = Vec::with_capacity(outcomes.len());
        let mut histories = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            let (r, m, h) = o?;
            records.push(r);
            models.push(m);
            histories.push(h);
        }
        let metric = self.cfg.selection;
        let best = records
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.metric(metric).filter(|v| v.is_finite()).map(|v| (i, v)))
            .fold(None, |acc: Option<(usize, f64)>, (i, v)| match acc {
                Some((_, b)) if b <= v => acc,
                _ => Some((i, v)),
            })
            .map(|(i, _)| i)
            .ok_or_else(|| Error::AllCandidatesFailed { step: name.to_string() })?;
        let rec = &records[best];
        let built = Built {
            name: name.to_string(),
            description: rec.description.clone(),
            model: models.swap_remove(best).frozen(),
            train_loss: rec.train_loss.expect("selected candidate trained"),
            test_loss: rec.test_loss,
        };
        log::info!("{name}: {} (train {:.6e})", built.description, built.train_loss);
        self.steps.push(StepRecord {
            name: name.to_string(),
            candidates: records,
            front_runner: best,
            history: histories.swap_remove(best),
        });
        Ok(built)
    }

    /// Builds the tree in postorder. Returns the root plus the chain spine
    /// (base first) used for pruning.
    fn run(&mut self, tree: &MergeTree) -> Result<(Built, Vec<Built>)> {
        match tree {
            MergeTree::Leaf(i) => {
                let b = self.leaf(*i)?;
                Ok((b, Vec::new()))
            }
            MergeTree::Merge { name, left, right } => {
                let (l, mut spine) = self.run(left)?;
                let (r, _) = self.run(right)?;
                let out = self.merge(name, &l, &r)?;
                if matches!(**right, MergeTree::Leaf(_)) {
                    if spine.is_empty() {
                        spine.push(l);
                    }
                    spine.push(Built {
                        name: out.name.clone(),
                        description: out.description.clone(),
                        model: out.model.clone(),
                        train_loss: out.train_loss,
                        test_loss: out.test_loss,
                    });
                } else {
                    spine.clear();
                }
                Ok((out, spine))
            }
        }
    }
}

/// Drops trailing spine entries whose gain over their predecessor is at most
/// `delta`; returns the kept index.
pub fn prune(losses: &[f64], delta: f64) -> usize {
    let mut j = losses.len().saturating_sub(1);
    while j > 0 && losses[j - 1] - losses[j] <= delta {
        j -= 1;
    }
    j
}

fn construct(
    strategy: &str,
    pool: &[Component],
    data: &Dataset,
    cfg: &ConstructionConfig,
    tree: &MergeTree,
    states: &[[OperandState; 2]],
) -> Result<ConstructionReport> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::InvalidInput("component pool is empty".into()));
    }
    let mut seen = Vec::new();
    tree.leaves(&mut seen);
    seen.sort_unstable();
    if seen != (0..pool.len()).collect::<Vec<_>>() {
        return Err(Error::InvalidInput("merge schedule must use every pool position once".into()));
    }
    let has_test = !data.test_indices().is_empty();
    if cfg.selection == SelectionMetric::ValidationLoss && !has_test {
        return Err(Error::EmptySplit(Split::Test.to_string()));
    }
    let mut ex = Executor {
        pool,
        data,
        cfg,
        states,
        show_states: states.len() > 1,
        has_test,
        steps: Vec::new(),
    };
    let (root, mut spine) = ex.run(tree)?;
    if spine.is_empty() {
        spine.push(root);
    }
    let metrics: Vec<f64> = spine.iter().map(|b| ex.metric(b)).collect();
    let keep = prune(&metrics, cfg.delta);
    let pruned_from = spine.len();
    let entries = spine
        .iter()
        .map(|b| SpineEntry {
            name: b.name.clone(),
            description: b.description.clone(),
            train_loss: b.train_loss,
            test_loss: b.test_loss,
        })
        .collect();
    let kept = spine.swap_remove(keep);
    let names: Vec<String> = pool.iter().map(|c| c.id.clone()).collect();
    Ok(ConstructionReport {
        strategy: strategy.to_string(),
        order: names.clone(),
        schedule: tree.shape(&names),
        selection: cfg.selection,
        steps: ex.steps,
        spine: entries,
        pruned_from,
        depth: keep + 1,
        final_description: kept.description,
        final_train_loss: kept.train_loss,
        final_test_loss: kept.test_loss,
        final_model: Model {
            registry: kept.model.pruned_registry()?,
            network: kept.model.network,
        },
    })
}

/// Deep chain: `g_j = argmin_σ σ(g_{j-1}, f_j)` with `g_{j-1}` frozen, then
/// pruning of trailing layers that gain at most `delta`. `pool` is used in
/// the given order.
pub fn dbcn(pool: &[Component], data: &Dataset, cfg: &ConstructionConfig) -> Result<ConstructionReport> {
    construct("dbcn", pool, data, cfg, &MergeTree::chain(pool.len()), &FROZEN_ONLY)
}

/// Balanced merges over the first `k0` base components, then a chain over the
/// rest. `k0 < 2` falls back to the deep chain.
pub fn bbcn(pool: &[Component], data: &Dataset, cfg: &ConstructionConfig) -> Result<ConstructionReport> {
    let leading_bases = pool.iter().take_while(|c| c.role == Role::Base).count();
    let k0 = cfg.k0.unwrap_or(leading_bases);
    if k0 > leading_bases {
        return Err(Error::Config(format!(
            "k0 = {k0} exceeds the {leading_bases} leading base components"
        )));
    }
    if k0 < 2 {
        log::warn!("k0 = {k0} leaves nothing to balance; building the deep chain");
        return dbcn(pool, data, cfg).map(|mut r| {
            r.strategy = "bbcn".into();
            r
        });
    }
    construct("bbcn", pool, data, cfg, &MergeTree::bbcn_shape(pool.len(), k0), &FROZEN_ONLY)
}

/// Every merge of `schedule` tries both operands frozen or open under every
/// activation. The frozen-frozen candidates come first and share seeds with
/// the chain strategies.
pub fn exhaustive(
    pool: &[Component],
    data: &Dataset,
    cfg: &ConstructionConfig,
    schedule: &MergeTree,
) -> Result<ConstructionReport> {
    let requested = schedule.merge_count() * ALL_STATES.len() * cfg.activations.len();
    if requested > cfg.candidate_budget {
        return Err(Error::BudgetExceeded {
            requested,
            limit: cfg.candidate_budget,
        });
    }
    construct("exhaustive", pool, data, cfg, schedule, &ALL_STATES)
}
