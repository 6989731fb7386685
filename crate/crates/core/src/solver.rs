//! Wiring search over the event-type hypergraph.
//!
//! Vertices are [`EventType`]s and hyperedges are catalog operators. Tokens
//! start on the capability vertices and are propagated in synchronous rounds:
//! every round fires each edge whose input vertices all hold tokens, once per
//! combination of input derivations that involves at least one token from the
//! previous round. Tokens reaching the requirement vertex are the wirings.
//!
//! [`solve_exhaustive`] enumerates the same set by backward expansion from the
//! requirement and exists as an independent oracle for [`solve`].

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::hash::Hash;
use std::sync::Arc;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::EventType;
use crate::operator::{Catalog, OpId, OperatorSpec};

pub type CapabilityId = String;

/// Default bound on the longest operator chain of a wiring.
pub const DEFAULT_MAX_DEPTH: u32 = 6;
/// Default number of ranked wirings offered for one requirement.
pub const DEFAULT_MAX_RESULTS: usize = 20;
/// Weight of each distinct capability leaf in the wiring cost.
pub const LEAF_WEIGHT: u64 = 1;

/// A derivation tree: capabilities at the leaves, operators at inner nodes.
///
/// The derived ordering (leaves before operator nodes, then field by field) is
/// the canonical structural order used to break cost ties.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Derivation {
    Leaf {
        capability: CapabilityId,
        #[serde(rename = "type")]
        ty: EventType,
    },
    Op {
        op: OpId,
        /// Output index of the operator (non-zero only for split components).
        port: usize,
        #[serde(rename = "type")]
        ty: EventType,
        inputs: Vec<Arc<Derivation>>,
    },
}

impl Derivation {
    pub fn leaf(capability: impl Into<CapabilityId>, ty: EventType) -> Self {
        Derivation::Leaf {
            capability: capability.into(),
            ty,
        }
    }

    /// Operator node; `ty` is taken from the operator's output `port`.
    pub fn op(spec: &OperatorSpec, port: usize, inputs: Vec<Derivation>) -> Self {
        Derivation::Op {
            op: spec.id.clone(),
            port,
            ty: spec.outputs[port],
            inputs: inputs.into_iter().map(Arc::new).collect(),
        }
    }

    pub fn root_type(&self) -> EventType {
        match self {
            Derivation::Leaf { ty, .. } | Derivation::Op { ty, .. } => *ty,
        }
    }

    /// Longest operator chain from any leaf to the root.
    pub fn depth(&self) -> u32 {
        match self {
            Derivation::Leaf { .. } => 0,
            Derivation::Op { inputs, .. } => {
                1 + inputs.iter().map(|d| d.depth()).max().unwrap_or(0)
            }
        }
    }

    /// Distinct capability ids referenced by the leaves.
    pub fn capabilities(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.visit(&mut |d| {
            if let Derivation::Leaf { capability, .. } = d {
                out.insert(capability.as_str());
            }
        });
        out
    }

    /// Number of operator nodes in the tree.
    pub fn operator_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |d| {
            if matches!(d, Derivation::Op { .. }) {
                n += 1;
            }
        });
        n
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Derivation)) {
        f(self);
        if let Derivation::Op { inputs, .. } = self {
            for child in inputs {
                child.visit(f);
            }
        }
    }

    /// Σ operator costs + one per distinct capability leaf. `None` when an
    /// operator is absent from the catalog.
    pub fn cost(&self, catalog: &Catalog) -> Option<u64> {
        let mut ops = 0u64;
        let mut missing = false;
        self.visit(&mut |d| {
            if let Derivation::Op { op, .. } = d {
                match catalog.get(op) {
                    Some(spec) => ops += u64::from(spec.cost),
                    None => missing = true,
                }
            }
        });
        (!missing).then(|| ops + LEAF_WEIGHT * self.capabilities().len() as u64)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("derivation serializes")
    }
}

/// A derivation bound to one application requirement.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Wiring {
    pub requirement_id: String,
    pub cost: u64,
    pub derivation: Derivation,
}

impl Wiring {
    /// Canonical ranking key: cost first, then structure.
    pub fn rank_key(&self) -> (u64, &Derivation) {
        (self.cost, &self.derivation)
    }

    /// Canonical JSON form (sorted keys, no whitespace).
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_value(self)
            .expect("wiring serializes")
            .to_string()
    }
}

impl PartialOrd for Wiring {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Wiring {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.rank_key()
            .cmp(&other.rank_key())
            .then_with(|| self.requirement_id.cmp(&other.requirement_id))
    }
}

/// Event types as vertices, operators as hyperedges.
#[derive(Debug, Clone)]
pub struct Hypergraph {
    pub vertices: BTreeSet<EventType>,
    /// Sorted by operator id.
    pub edges: Vec<OperatorSpec>,
    /// Sorted by capability id.
    pub sources: Vec<(CapabilityId, EventType)>,
    pub target: EventType,
}

/// Builds the hypergraph for one requirement: vertices are the closure of
/// the capability and requirement types under the catalog signatures.
pub fn build_graph<'a>(
    capabilities: &[(CapabilityId, EventType)],
    catalog: impl IntoIterator<Item = &'a OperatorSpec>,
    requirement: EventType,
) -> Hypergraph {
    let catalog: Vec<&OperatorSpec> = catalog.into_iter().collect();
    let mut vertices: BTreeSet<EventType> = capabilities.iter().map(|(_, t)| *t).collect();
    vertices.insert(requirement);
    loop {
        let before = vertices.len();
        for op in &catalog {
            if op.inputs.iter().all(|t| vertices.contains(t)) {
                vertices.extend(op.outputs.iter().copied());
            }
        }
        if vertices.len() == before {
            break;
        }
    }
    let mut edges: Vec<OperatorSpec> = catalog
        .into_iter()
        .filter(|op| {
            op.inputs
                .iter()
                .chain(&op.outputs)
                .all(|t| vertices.contains(t))
        })
        .cloned()
        .collect();
    edges.sort_by(|a, b| a.id.cmp(&b.id));
    edges.dedup_by(|a, b| a.id == b.id);
    let mut sources = capabilities.to_vec();
    sources.sort();
    sources.dedup();
    Hypergraph {
        vertices,
        edges,
        sources,
        target: requirement,
    }
}

impl Hypergraph {
    /// Indices of edges that can both fire from the sources and contribute
    /// to the target. Restricting propagation to these does not change the
    /// result set.
    fn relevant_edges(&self) -> Vec<usize> {
        let mut forward: HashSet<EventType> = self.sources.iter().map(|(_, t)| *t).collect();
        let mut fires = vec![false; self.edges.len()];
        loop {
            let mut changed = false;
            for (i, e) in self.edges.iter().enumerate() {
                if !fires[i] && e.inputs.iter().all(|t| forward.contains(t)) {
                    fires[i] = true;
                    changed = true;
                    forward.extend(e.outputs.iter().copied());
                }
            }
            if !changed {
                break;
            }
        }
        let mut backward: HashSet<EventType> = HashSet::from([self.target]);
        let mut useful = vec![false; self.edges.len()];
        loop {
            let mut changed = false;
            for (i, e) in self.edges.iter().enumerate() {
                if fires[i] && !useful[i] && e.outputs.iter().any(|t| backward.contains(t)) {
                    useful[i] = true;
                    changed = true;
                    backward.extend(e.inputs.iter().copied());
                }
            }
            if !changed {
                break;
            }
        }
        (0..self.edges.len()).filter(|&i| useful[i]).collect()
    }
}

/// Hash-consing store: structurally equal values share one index.
struct Interner<T> {
    nodes: Vec<T>,
    index: HashMap<T, u32>,
}

impl<T: Clone + Eq + Hash> Interner<T> {
    fn new() -> Self {
        Interner {
            nodes: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Index of `node` and whether it was newly added.
    fn intern(&mut self, node: T) -> (u32, bool) {
        if let Some(&id) = self.index.get(&node) {
            return (id, false);
        }
        let id = u32::try_from(self.nodes.len()).expect("interner overflow");
        self.nodes.push(node.clone());
        self.index.insert(node, id);
        (id, true)
    }

    fn get(&self, id: u32) -> &T {
        &self.nodes[id as usize]
    }
}

/// Derivation node whose children are interned.
#[derive(Clone, PartialEq, Eq, Hash)]
enum Node {
    Leaf(u32),
    Op { edge: u32, port: u32, inputs: Box<[u32]> },
}

/// Runtime behaviour of a derivation. Payload-preserving casts are erased,
/// a split of a merge selects the merged lane, elementwise casts commute
/// with split and merge, and mutually inverse affine casts cancel.
#[derive(Clone, PartialEq, Eq, Hash)]
enum Behaviour {
    Capability(u32),
    Split { port: u32, input: u32 },
    Merge(Box<[u32]>),
    /// `class` stands for (rule, params, output domain).
    Cast { class: u32, inputs: Box<[u32]> },
}

#[derive(Clone, Copy)]
enum EdgeBehaviour {
    Identity,
    Split,
    Merge,
    Cast(u32),
}

struct Behaviours {
    arena: Interner<Behaviour>,
    degenerate: Vec<bool>,
    /// Sorted source signals (capabilities or split lanes of one) per behaviour.
    signals: Vec<Box<[u32]>>,
    edges: Vec<EdgeBehaviour>,
    /// Rule name per cast class.
    rules: Vec<String>,
}

/// Rule, parameter bits and output domain of a cast.
type CastClass = (String, Vec<(String, u64)>, crate::event::Domain);

/// `(cost, depth, size)` of the tokens kept per (vertex, class, capabilities).
type ClassFronts = HashMap<(usize, u32, FixedBitSet), Vec<(u64, u32, u32)>>;

impl Behaviours {
    fn new(g: &Hypergraph) -> Self {
        use crate::operator::{rules, OperatorKind};
        let mut classes: Interner<CastClass> = Interner::new();
        let edges = g
            .edges
            .iter()
            .map(|spec| match spec.kind {
                OperatorKind::Split => EdgeBehaviour::Split,
                OperatorKind::Merge => EdgeBehaviour::Merge,
                OperatorKind::Cast => {
                    let rule = spec.rule.clone().unwrap_or_default();
                    if rule == rules::REINTERPRET || rule == rules::BUTTON_TO_TRIGGER {
                        return EdgeBehaviour::Identity;
                    }
                    let params = spec.params.iter().map(|(k, v)| (k.clone(), v.to_bits())).collect();
                    EdgeBehaviour::Cast(classes.intern((rule, params, spec.outputs[0].domain())).0)
                }
            })
            .collect();
        Behaviours {
            arena: Interner::new(),
            degenerate: Vec::new(),
            signals: Vec::new(),
            edges,
            rules: classes.nodes.into_iter().map(|(rule, _, _)| rule).collect(),
        }
    }

    fn capability(&mut self, source: u32) -> u32 {
        self.make(Behaviour::Capability(source))
    }

    fn combine(&mut self, edge: usize, port: u32, inputs: &[u32]) -> u32 {
        match self.edges[edge] {
            EdgeBehaviour::Identity => inputs[0],
            EdgeBehaviour::Split => self.split(port, inputs[0]),
            EdgeBehaviour::Merge => self.make(Behaviour::Merge(inputs.into())),
            EdgeBehaviour::Cast(class) => self.cast(class, inputs),
        }
    }

    fn is_degenerate(&self, id: u32) -> bool {
        self.degenerate[id as usize]
    }

    fn elementwise(&self, class: u32) -> bool {
        use crate::operator::rules;
        matches!(
            self.rules[class as usize].as_str(),
            rules::UNSIGNED_TO_SIGNED | rules::SIGNED_TO_UNSIGNED | rules::RELATIVE_TO_ABSOLUTE
        )
    }

    fn inverse(&self, a: u32, b: u32) -> bool {
        use crate::operator::rules;
        matches!(
            (self.rules[a as usize].as_str(), self.rules[b as usize].as_str()),
            (rules::UNSIGNED_TO_SIGNED, rules::SIGNED_TO_UNSIGNED)
                | (rules::SIGNED_TO_UNSIGNED, rules::UNSIGNED_TO_SIGNED)
        )
    }

    fn split(&mut self, port: u32, input: u32) -> u32 {
        match self.arena.get(input).clone() {
            Behaviour::Merge(lanes) if (port as usize) < lanes.len() => lanes[port as usize],
            Behaviour::Cast { class, inputs } if inputs.len() == 1 && self.elementwise(class) => {
                let lane = self.split(port, inputs[0]);
                self.cast(class, &[lane])
            }
            _ => self.make(Behaviour::Split { port, input }),
        }
    }

    fn cast(&mut self, class: u32, inputs: &[u32]) -> u32 {
        if let [input] = inputs {
            match self.arena.get(*input).clone() {
                Behaviour::Cast { class: inner, inputs } if self.inverse(class, inner) => return inputs[0],
                Behaviour::Merge(lanes) if self.elementwise(class) => {
                    let lanes: Box<[u32]> = lanes.iter().map(|&l| self.cast(class, &[l])).collect();
                    return self.make(Behaviour::Merge(lanes));
                }
                _ => {}
            }
        }
        self.make(Behaviour::Cast {
            class,
            inputs: inputs.into(),
        })
    }

    fn sources(&self, ids: &[u32]) -> Box<[u32]> {
        let mut all: Vec<u32> = ids.iter().flat_map(|&i| self.signals[i as usize].iter().copied()).collect();
        all.sort_unstable();
        all.dedup();
        all.into()
    }

    /// A button pair fed twice by the same control always reads zero; a
    /// merge whose lanes share a source signal moves several components
    /// with one control. Both are degenerate, as is anything built on them.
    fn make(&mut self, b: Behaviour) -> u32 {
        use crate::operator::rules;
        let (degenerate, signals) = match &b {
            Behaviour::Capability(_) => (false, None),
            Behaviour::Split { input, .. } => {
                let own = matches!(self.arena.get(*input), Behaviour::Capability(_));
                (self.is_degenerate(*input), (!own).then(|| self.signals[*input as usize].clone()))
            }
            Behaviour::Merge(lanes) => {
                let all = self.sources(lanes);
                let total: usize = lanes.iter().map(|&l| self.signals[l as usize].len()).sum();
                (total != all.len() || lanes.iter().any(|&l| self.is_degenerate(l)), Some(all))
            }
            Behaviour::Cast { class, inputs } => (
                (self.rules[*class as usize] == rules::BUTTON_PAIR && inputs.len() == 2 && inputs[0] == inputs[1])
                    || inputs.iter().any(|&i| self.is_degenerate(i)),
                Some(self.sources(inputs)),
            ),
        };
        let (id, new) = self.arena.intern(b);
        if new {
            self.degenerate.push(degenerate);
            self.signals.push(signals.unwrap_or_else(|| Box::new([id])));
        }
        id
    }
}

#[derive(Clone)]
struct Token {
    node: u32,
    vertex: usize,
    depth: u32,
    op_cost: u64,
    op_count: u32,
    /// Vertices of every node in the subtree (cycle guard).
    types: FixedBitSet,
    leaves: FixedBitSet,
    /// Behaviour class, tracked only by [`solve_distinct`].
    behaviour: Option<u32>,
}

impl Token {
    fn cost(&self) -> u64 {
        self.op_cost + LEAF_WEIGHT * self.leaves.count_ones(..) as u64
    }
}

/// Tokens held by one vertex, grouped by the round that created them. Each
/// group is sorted by operator cost so combination search can stop early.
#[derive(Default)]
struct VertexTokens {
    items: Vec<Token>,
    /// `(round, start)` of every group, in creation order.
    groups: Vec<(u32, usize)>,
}

impl VertexTokens {
    fn group_ranges(&self) -> impl Iterator<Item = (u32, std::ops::Range<usize>)> + '_ {
        self.groups.iter().enumerate().map(|(i, &(round, start))| {
            let end = self
                .groups
                .get(i + 1)
                .map_or(self.items.len(), |&(_, s)| s);
            (round, start..end)
        })
    }
}

/// Which token groups a lane may draw from in the current round.
#[derive(Clone, Copy)]
enum LaneSelect {
    Older,
    Newest,
    Any,
}

/// Lowest `k` target costs seen so far; a partial derivation costing more
/// than the worst of them can never enter the top `k`.
struct CostBound {
    k: usize,
    ceiling: u64,
    heap: BinaryHeap<u64>,
    /// Set when a token was dropped because of `ceiling` alone.
    hit_ceiling: bool,
}

impl CostBound {
    fn new(k: usize, ceiling: u64) -> Self {
        CostBound {
            k,
            ceiling,
            heap: BinaryHeap::new(),
            hit_ceiling: false,
        }
    }

    fn limit(&self) -> u64 {
        let kth = if self.heap.len() < self.k {
            u64::MAX
        } else {
            self.heap.peek().copied().unwrap_or(u64::MAX)
        };
        kth.min(self.ceiling)
    }

    fn admits(&self, cost: u64) -> bool {
        cost <= self.limit()
    }

    fn record(&mut self, cost: u64) {
        if self.heap.len() < self.k {
            self.heap.push(cost);
        } else if self.heap.peek().is_some_and(|&worst| cost < worst) {
            self.heap.pop();
            self.heap.push(cost);
        }
    }
}

/// Token propagation to fixpoint. Returns the wirings at the target sorted
/// by (cost, structure), truncated to `max_results`; `requirement_id` is
/// stamped onto each of them.
///
/// With a finite `max_results` the propagation runs under a cost ceiling
/// that is raised until the `max_results` cheapest wirings are certain to be
/// among the tokens found. Any wiring contains only subtrees of lower or
/// equal cost, so a token above the ceiling never leads to a wiring below
/// it and the truncated result equals that of the unbounded run.
pub fn solve(
    g: &Hypergraph,
    requirement_id: &str,
    max_depth: u32,
    max_results: usize,
) -> Vec<Wiring> {
    let max_results = max_results.max(1);
    let mut ceiling = if max_results == usize::MAX { u64::MAX } else { LEAF_WEIGHT };
    loop {
        let mut p = Propagation::new(g, max_depth, max_results, ceiling, false);
        p.run();
        if p.found.len() >= max_results || !p.bound.hit_ceiling {
            let mut found: Vec<(u64, Arc<Derivation>)> = std::mem::take(&mut p.found)
                .iter()
                .map(|t| (t.cost(), p.derivation(t.node)))
                .collect();
            found.sort();
            found.truncate(max_results);
            return found
                .into_iter()
                .map(|(cost, d)| to_wiring(cost, &d, requirement_id))
                .collect();
        }
        ceiling += 1;
    }
}

/// Like [`solve`], but keeps one wiring per behaviour class: wirings that
/// differ only in where payload-preserving casts sit, in the order of
/// elementwise casts and splits or merges, or in which kind a merge or split
/// operates on deliver identical event streams and are offered once.
/// Degenerate classes (a button pair fed by one control, a merge repeating
/// a signal) are dropped. Representatives and the returned list are ordered
/// by cost, then operator count, then structure.
///
/// Within one vertex, a token is skipped when another of the same class and
/// capability set is no costlier, no deeper and no larger.
pub fn solve_distinct(
    g: &Hypergraph,
    requirement_id: &str,
    max_depth: u32,
    max_results: usize,
) -> Vec<Wiring> {
    let max_results = max_results.max(1);
    let mut ceiling = if max_results == usize::MAX { u64::MAX } else { LEAF_WEIGHT };
    loop {
        let mut p = Propagation::new(g, max_depth, max_results, ceiling, true);
        p.run();
        let mut best: HashMap<u32, (u64, u32, Arc<Derivation>)> = HashMap::new();
        for t in std::mem::take(&mut p.found) {
            let rank = (t.cost(), t.op_count, p.derivation(t.node));
            let class = t.behaviour.expect("distinct tokens carry a class");
            match best.get(&class) {
                Some(cur) if *cur <= rank => {}
                _ => {
                    best.insert(class, rank);
                }
            }
        }
        if best.len() >= max_results || !p.bound.hit_ceiling {
            let mut reps: Vec<_> = best.into_values().collect();
            reps.sort();
            reps.truncate(max_results);
            return reps
                .into_iter()
                .map(|(cost, _, d)| to_wiring(cost, &d, requirement_id))
                .collect();
        }
        ceiling += 1;
    }
}

fn to_wiring(cost: u64, d: &Derivation, requirement_id: &str) -> Wiring {
    Wiring {
        requirement_id: requirement_id.to_string(),
        cost,
        derivation: d.clone(),
    }
}

struct Propagation<'g> {
    g: &'g Hypergraph,
    max_depth: u32,
    edge_ids: Vec<usize>,
    /// Output vertices of the relevant edges reading each vertex.
    successors: Vec<Vec<usize>>,
    /// Fewest edges from each vertex to the target, ignoring the guard.
    distance: Vec<u32>,
    vertex_index: HashMap<EventType, usize>,
    target: usize,
    nodes: Interner<Node>,
    behaviours: Option<Behaviours>,
    tokens: Vec<VertexTokens>,
    classes: ClassFronts,
    target_classes: HashSet<u32>,
    bound: CostBound,
    found: Vec<Token>,
}

impl<'g> Propagation<'g> {
    fn new(g: &'g Hypergraph, max_depth: u32, max_results: usize, ceiling: u64, distinct: bool) -> Self {
        let vertex_index: HashMap<EventType, usize> =
            g.vertices.iter().enumerate().map(|(i, t)| (*t, i)).collect();
        let edge_ids = g.relevant_edges();
        let mut successors = vec![Vec::new(); g.vertices.len()];
        for &e in &edge_ids {
            let out = vertex_index[&g.edges[e].outputs[0]];
            for t in &g.edges[e].inputs {
                successors[vertex_index[t]].push(out);
            }
        }
        for s in &mut successors {
            s.sort_unstable();
            s.dedup();
        }
        let target = vertex_index[&g.target];
        let mut distance = vec![u32::MAX; g.vertices.len()];
        distance[target] = 0;
        for d in 1..=max_depth {
            for v in 0..distance.len() {
                if distance[v] == u32::MAX && successors[v].iter().any(|&w| distance[w] == d - 1) {
                    distance[v] = d;
                }
            }
        }
        Propagation {
            g,
            max_depth,
            edge_ids,
            successors,
            target,
            distance,
            tokens: (0..g.vertices.len()).map(|_| VertexTokens::default()).collect(),
            vertex_index,
            nodes: Interner::new(),
            behaviours: distinct.then(|| Behaviours::new(g)),
            classes: HashMap::new(),
            target_classes: HashSet::new(),
            bound: CostBound::new(max_results, ceiling),
            found: Vec::new(),
        }
    }

    fn run(&mut self) {
        let n_vertices = self.g.vertices.len();
        let n_leaves = self.g.sources.len();
        let mut pending = Vec::new();
        for (i, (_, ty)) in self.g.sources.iter().enumerate() {
            let vertex = self.vertex_index[ty];
            let mut leaves = FixedBitSet::with_capacity(n_leaves);
            leaves.insert(i);
            let mut types = FixedBitSet::with_capacity(n_vertices);
            types.insert(vertex);
            let source = u32::try_from(i).expect("source count");
            pending.push(Token {
                node: self.nodes.intern(Node::Leaf(source)).0,
                vertex,
                depth: 0,
                op_cost: 0,
                op_count: 0,
                types,
                leaves,
                behaviour: self.behaviours.as_mut().map(|b| b.capability(source)),
            });
        }

        for round in 0..=self.max_depth {
            if round > 0 {
                for i in 0..self.edge_ids.len() {
                    self.fire_edge(self.edge_ids[i], round, &mut pending);
                }
            }
            pending.sort_by_key(|t| (t.op_cost, t.op_count));
            let mut added = false;
            for token in pending.drain(..) {
                added |= self.admit(token, round);
            }
            if !added {
                break;
            }
        }
    }

    /// Whether a token at `vertex` whose subtree covers `types` can still
    /// end up in a wiring: some chain of at most `max_depth - depth` edges
    /// leads to the target without revisiting a type.
    fn could_reach(&self, vertex: usize, types: &FixedBitSet, depth: u32) -> bool {
        if vertex == self.target {
            return true;
        }
        if self.distance[vertex].saturating_add(depth) > self.max_depth {
            return false;
        }
        let mut seen = types.clone();
        let mut frontier = vec![vertex];
        for _ in depth..self.max_depth {
            let mut next = Vec::new();
            for &v in &frontier {
                for &w in &self.successors[v] {
                    if w == self.target && !seen.contains(w) {
                        return true;
                    }
                    if !seen.put(w) {
                        next.push(w);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        false
    }

    /// Records a drop caused by the ceiling alone, if it mattered.
    fn note_ceiling(&mut self, cost: u64, vertex: usize, types: &FixedBitSet, depth: u32) {
        if cost > self.bound.ceiling && !self.bound.hit_ceiling && self.could_reach(vertex, types, depth) {
            self.bound.hit_ceiling = true;
        }
    }

    fn admit(&mut self, token: Token, round: u32) -> bool {
        let cost = token.cost();
        // operator tokens were checked when their inputs were combined
        if token.depth == 0 && !self.could_reach(token.vertex, &token.types, 0) {
            return false;
        }
        if !self.bound.admits(cost) {
            self.bound.hit_ceiling |= cost > self.bound.ceiling;
            return false;
        }
        if let Some(class) = token.behaviour {
            let front = self
                .classes
                .entry((token.vertex, class, token.leaves.clone()))
                .or_default();
            let size = token.op_count;
            if front.iter().any(|&(c, d, s)| c <= cost && d <= token.depth && s <= size) {
                return false;
            }
            front.push((cost, token.depth, size));
        }
        if token.vertex == self.target {
            // a class counts once towards the top-k bound
            if token.behaviour.is_none_or(|c| self.target_classes.insert(c)) {
                self.bound.record(cost);
            }
            self.found.push(token.clone());
        }
        let entry = &mut self.tokens[token.vertex];
        if entry.groups.last().map(|&(r, _)| r) != Some(round) {
            entry.groups.push((round, entry.items.len()));
        }
        entry.items.push(token);
        true
    }

    /// Enumerates the input combinations of `edge` that involve at least one
    /// token created in the previous round, skipping those whose cost already
    /// exceeds the bound.
    fn fire_edge(&mut self, edge: usize, round: u32, pending: &mut Vec<Token>) {
        let spec = &self.g.edges[edge];
        // all outputs of an operator share one type
        let out = self.vertex_index[&spec.outputs[0]];
        let lanes: Vec<usize> = spec.inputs.iter().map(|t| self.vertex_index[t]).collect();
        if lanes.iter().any(|&v| self.tokens[v].items.is_empty()) {
            return;
        }
        let mut combos: Vec<Vec<usize>> = Vec::new();
        let mut picked = Vec::with_capacity(lanes.len());
        for first_new in 0..lanes.len() {
            let select: Vec<LaneSelect> = (0..lanes.len())
                .map(|j| match j.cmp(&first_new) {
                    std::cmp::Ordering::Less => LaneSelect::Older,
                    std::cmp::Ordering::Equal => LaneSelect::Newest,
                    std::cmp::Ordering::Greater => LaneSelect::Any,
                })
                .collect();
            self.descend(&lanes, &select, out, round - 1, u64::from(spec.cost), &mut picked, &mut combos);
        }
        for combo in combos {
            let children: Vec<&Token> = combo
                .iter()
                .zip(&lanes)
                .map(|(&i, &v)| &self.tokens[v].items[i])
                .collect();
            let depth = 1 + children.iter().map(|c| c.depth).max().unwrap_or(0);
            let mut leaves = children[0].leaves.clone();
            let mut types = children[0].types.clone();
            for c in &children[1..] {
                leaves.union_with(&c.leaves);
                types.union_with(&c.types);
            }
            types.insert(out);
            let op_cost = u64::from(spec.cost) + children.iter().map(|c| c.op_cost).sum::<u64>();
            let op_count = 1 + children.iter().map(|c| c.op_count).sum::<u32>();
            let child_nodes: Box<[u32]> = children.iter().map(|c| c.node).collect();
            let child_classes: Option<Vec<u32>> =
                children.iter().map(|c| c.behaviour).collect::<Option<Vec<u32>>>();
            for port in 0..spec.outputs.len() {
                let port = u32::try_from(port).expect("port count");
                let behaviour = match (&mut self.behaviours, &child_classes) {
                    (Some(b), Some(inputs)) => {
                        let class = b.combine(edge, port, inputs);
                        if b.is_degenerate(class) {
                            continue;
                        }
                        Some(class)
                    }
                    _ => None,
                };
                let (node, new) = self.nodes.intern(Node::Op {
                    edge: u32::try_from(edge).expect("edge count"),
                    port,
                    inputs: child_nodes.clone(),
                });
                if !new {
                    continue;
                }
                pending.push(Token {
                    node,
                    vertex: out,
                    depth,
                    op_cost,
                    op_count,
                    types: types.clone(),
                    leaves: leaves.clone(),
                    behaviour,
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn descend(
        &mut self,
        lanes: &[usize],
        select: &[LaneSelect],
        out: usize,
        newest: u32,
        partial: u64,
        picked: &mut Vec<usize>,
        combos: &mut Vec<Vec<usize>>,
    ) {
        let lane = picked.len();
        if lane == lanes.len() {
            let items = |j: usize| &self.tokens[lanes[j]].items[picked[j]];
            let depth = 1 + (0..lanes.len()).map(|j| items(j).depth).max().unwrap_or(0);
            if depth > self.max_depth {
                return;
            }
            let mut leaves = items(0).leaves.clone();
            let mut types = items(0).types.clone();
            for j in 1..lanes.len() {
                leaves.union_with(&items(j).leaves);
                types.union_with(&items(j).types);
            }
            types.insert(out);
            let cost = partial + LEAF_WEIGHT * leaves.count_ones(..) as u64;
            if self.bound.admits(cost) {
                if self.could_reach(out, &types, depth) {
                    combos.push(picked.clone());
                }
            } else {
                self.note_ceiling(cost, out, &types, depth);
            }
            return;
        }
        let v = lanes[lane];
        let ranges: Vec<(u32, std::ops::Range<usize>)> = self.tokens[v].group_ranges().collect();
        for (round, range) in ranges {
            let wanted = match select[lane] {
                LaneSelect::Older => round < newest,
                LaneSelect::Newest => round == newest,
                LaneSelect::Any => round <= newest,
            };
            if !wanted {
                continue;
            }
            for i in range {
                let token = &self.tokens[v].items[i];
                let next = partial + token.op_cost;
                let skip = token.types.contains(out);
                // every wiring has at least one leaf
                if !self.bound.admits(next + LEAF_WEIGHT) {
                    if next + LEAF_WEIGHT > self.bound.ceiling && !self.bound.hit_ceiling {
                        // what the remaining lanes add is unknown: assume nothing
                        let mut types = token.types.clone();
                        let mut depth = token.depth;
                        for (j, &k) in picked.iter().enumerate() {
                            let t = &self.tokens[lanes[j]].items[k];
                            types.union_with(&t.types);
                            depth = depth.max(t.depth);
                        }
                        types.insert(out);
                        self.note_ceiling(next + LEAF_WEIGHT, out, &types, depth + 1);
                    }
                    break;
                }
                if skip {
                    continue;
                }
                picked.push(i);
                self.descend(lanes, select, out, newest, next, picked, combos);
                picked.pop();
            }
        }
    }

    fn derivation(&self, node: u32) -> Arc<Derivation> {
        let mut memo: HashMap<u32, Arc<Derivation>> = HashMap::new();
        self.build(node, &mut memo)
    }

    fn build(&self, node: u32, memo: &mut HashMap<u32, Arc<Derivation>>) -> Arc<Derivation> {
        if let Some(d) = memo.get(&node) {
            return d.clone();
        }
        let d = match self.nodes.get(node) {
            Node::Leaf(i) => {
                let (id, ty) = &self.g.sources[*i as usize];
                Arc::new(Derivation::leaf(id.clone(), *ty))
            }
            Node::Op { edge, port, inputs } => {
                let spec = &self.g.edges[*edge as usize];
                Arc::new(Derivation::Op {
                    op: spec.id.clone(),
                    port: *port as usize,
                    ty: spec.outputs[*port as usize],
                    inputs: inputs.iter().map(|&c| self.build(c, memo)).collect(),
                })
            }
        };
        memo.insert(node, d.clone());
        d
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("exhaustive enumeration exceeded its budget of {budget} nodes")]
pub struct BudgetExceeded {
    pub budget: usize,
}

/// Enumerates every well-typed derivation rooted at the target with depth at
/// most `max_depth` and no operator repeated on a root-to-leaf path, by
/// recursive backward expansion. Intended for small graphs.
pub fn solve_exhaustive(
    g: &Hypergraph,
    requirement_id: &str,
    max_depth: u32,
    node_budget: usize,
) -> Result<BTreeSet<Wiring>, BudgetExceeded> {
    struct Search<'g> {
        g: &'g Hypergraph,
        budget: usize,
        nodes: usize,
        on_path: BTreeSet<EventType>,
    }

    impl Search<'_> {
        fn expand(&mut self, ty: EventType, depth_left: u32) -> Result<Vec<Derivation>, BudgetExceeded> {
            if self.on_path.contains(&ty) {
                return Ok(Vec::new());
            }
            let mut out: Vec<Derivation> = self
                .g
                .sources
                .iter()
                .filter(|(_, t)| *t == ty)
                .map(|(id, t)| Derivation::leaf(id.clone(), *t))
                .collect();
            if depth_left == 0 {
                return self.charge(out);
            }
            self.on_path.insert(ty);
            for spec in &self.g.edges {
                if !spec.outputs.contains(&ty) {
                    continue;
                }
                let mut child_sets = Vec::with_capacity(spec.inputs.len());
                for input in &spec.inputs {
                    child_sets.push(self.expand(*input, depth_left - 1)?);
                }
                let combos = cartesian(&child_sets);
                for (port, _) in spec.outputs.iter().enumerate().filter(|(_, t)| **t == ty) {
                    for children in &combos {
                        out.push(Derivation::op(spec, port, children.clone()));
                    }
                }
                if out.len() > self.budget {
                    return Err(BudgetExceeded {
                        budget: self.budget,
                    });
                }
            }
            self.on_path.remove(&ty);
            self.charge(out)
        }

        fn charge(&mut self, out: Vec<Derivation>) -> Result<Vec<Derivation>, BudgetExceeded> {
            self.nodes += out.len();
            if self.nodes > self.budget {
                Err(BudgetExceeded {
                    budget: self.budget,
                })
            } else {
                Ok(out)
            }
        }
    }

    let catalog = Catalog::new(g.edges.iter().cloned()).unwrap_or_default();
    let mut search = Search {
        g,
        budget: node_budget,
        nodes: 0,
        on_path: BTreeSet::new(),
    };
    let all = search.expand(g.target, max_depth)?;
    Ok(all
        .into_iter()
        .map(|d| Wiring {
            requirement_id: requirement_id.to_string(),
            cost: d.cost(&catalog).unwrap_or(u64::MAX),
            derivation: d,
        })
        .collect())
}

fn cartesian(sets: &[Vec<Derivation>]) -> Vec<Vec<Derivation>> {
    sets.iter().fold(vec![Vec::new()], |acc, set| {
        let mut next = Vec::with_capacity(acc.len() * set.len());
        for prefix in &acc {
            for item in set {
                let mut row = prefix.clone();
                row.push(item.clone());
                next.push(row);
            }
        }
        next
    })
}

/// Location of a node inside a derivation: lane indices from the root.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NodePath(pub Vec<usize>);

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("root")?;
        for lane in &self.0 {
            write!(f, ".inputs[{lane}]")?;
        }
        Ok(())
    }
}

/// First failure found while checking a wiring, in pre-order.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("capability `{capability}` is not available (at {path})")]
    MissingCapability { capability: String, path: NodePath },
    #[error("operator `{op}` is not in the catalog (at {path})")]
    UnknownOperator { op: String, path: NodePath },
    #[error("type mismatch at {path}: expected {expected}, found {found}")]
    TypeMismatch {
        path: NodePath,
        expected: EventType,
        found: EventType,
    },
    #[error("operator `{op}` takes {expected} inputs, found {found} (at {path})")]
    InputCount {
        op: String,
        path: NodePath,
        expected: usize,
        found: usize,
    },
    #[error("operator `{op}` has no output port {port} (at {path})")]
    BadPort {
        op: String,
        path: NodePath,
        port: usize,
    },
    #[error("wiring produces {found} but requirement `{requirement}` needs {expected}")]
    RootMismatch {
        requirement: String,
        expected: EventType,
        found: EventType,
    },
}

impl ValidationError {
    pub fn code(&self) -> &'static str {
        match self {
            ValidationError::MissingCapability { .. } => "missing_capability",
            ValidationError::UnknownOperator { .. } => "unknown_operator",
            ValidationError::TypeMismatch { .. } => "type_mismatch",
            ValidationError::InputCount { .. } => "input_count",
            ValidationError::BadPort { .. } => "bad_port",
            ValidationError::RootMismatch { .. } => "root_mismatch",
        }
    }

    pub fn path(&self) -> Option<&NodePath> {
        match self {
            ValidationError::MissingCapability { path, .. }
            | ValidationError::UnknownOperator { path, .. }
            | ValidationError::TypeMismatch { path, .. }
            | ValidationError::InputCount { path, .. }
            | ValidationError::BadPort { path, .. } => Some(path),
            ValidationError::RootMismatch { .. } => None,
        }
    }

    /// `{code, detail, path}` report.
    pub fn report(&self) -> serde_json::Value {
        serde_json::json!({
            "code": self.code(),
            "detail": self.to_string(),
            "path": self.path().map(ToString::to_string),
        })
    }
}

/// Checks that every leaf names an available capability of the declared
/// type, every node a catalog operator, and all signatures line up.
pub fn validate(
    w: &Wiring,
    capabilities: &BTreeMap<CapabilityId, EventType>,
    catalog: &Catalog,
) -> Result<(), ValidationError> {
    fn check(
        d: &Derivation,
        path: &mut Vec<usize>,
        caps: &BTreeMap<CapabilityId, EventType>,
        catalog: &Catalog,
    ) -> Result<(), ValidationError> {
        match d {
            Derivation::Leaf { capability, ty } => {
                let actual = caps
                    .get(capability)
                    .ok_or_else(|| ValidationError::MissingCapability {
                        capability: capability.clone(),
                        path: NodePath(path.clone()),
                    })?;
                if actual != ty {
                    return Err(ValidationError::TypeMismatch {
                        path: NodePath(path.clone()),
                        expected: *actual,
                        found: *ty,
                    });
                }
            }
            Derivation::Op {
                op,
                port,
                ty,
                inputs,
            } => {
                let spec = catalog
                    .get(op)
                    .ok_or_else(|| ValidationError::UnknownOperator {
                        op: op.clone(),
                        path: NodePath(path.clone()),
                    })?;
                let out = spec
                    .outputs
                    .get(*port)
                    .ok_or_else(|| ValidationError::BadPort {
                        op: op.clone(),
                        path: NodePath(path.clone()),
                        port: *port,
                    })?;
                if out != ty {
                    return Err(ValidationError::TypeMismatch {
                        path: NodePath(path.clone()),
                        expected: *out,
                        found: *ty,
                    });
                }
                if inputs.len() != spec.inputs.len() {
                    return Err(ValidationError::InputCount {
                        op: op.clone(),
                        path: NodePath(path.clone()),
                        expected: spec.inputs.len(),
                        found: inputs.len(),
                    });
                }
                for (lane, (child, expected)) in inputs.iter().zip(&spec.inputs).enumerate() {
                    path.push(lane);
                    if child.root_type() != *expected {
                        return Err(ValidationError::TypeMismatch {
                            path: NodePath(path.clone()),
                            expected: *expected,
                            found: child.root_type(),
                        });
                    }
                    check(child, path, caps, catalog)?;
                    path.pop();
                }
            }
        }
        Ok(())
    }

    check(&w.derivation, &mut Vec::new(), capabilities, catalog)
}
