//! Factor graph for the FPCA model and the generic message rules.
//!
//! Stochastic nodes are the spline coefficients `ν`, the score vectors
//! `ζ_1..ζ_n`, the variances `σ²_ε, σ²_μ, σ²_ψ1..σ²_ψL` and one auxiliary
//! variable per variance. Every node has exactly two neighbouring factors.

use std::collections::HashMap;
use std::fmt;

use crate::error::{FpcaError, Result};
use crate::expfam::{Basis, NaturalParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeId {
    Nu,
    Zeta(usize),
    SigmaSqEps,
    AuxEps,
    SigmaSqMu,
    AuxMu,
    SigmaSqPsi(usize),
    AuxPsi(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FactorId {
    /// `p(y | ν, ζ_1..ζ_n, σ²_ε)`
    Likelihood,
    /// `p(ν | σ²_μ, σ²_ψ1..σ²_ψL)`
    Penalization,
    /// `p(ζ_i)`
    ZetaPrior(usize),
    /// `p(σ²_ε | a_ε)`
    IteratedEps,
    /// `p(a_ε)`
    AuxPriorEps,
    IteratedMu,
    AuxPriorMu,
    IteratedPsi(usize),
    AuxPriorPsi(usize),
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Nu => write!(f, "nu"),
            NodeId::Zeta(i) => write!(f, "zeta[{i}]"),
            NodeId::SigmaSqEps => write!(f, "sigsq_eps"),
            NodeId::AuxEps => write!(f, "a_eps"),
            NodeId::SigmaSqMu => write!(f, "sigsq_mu"),
            NodeId::AuxMu => write!(f, "a_mu"),
            NodeId::SigmaSqPsi(l) => write!(f, "sigsq_psi[{l}]"),
            NodeId::AuxPsi(l) => write!(f, "a_psi[{l}]"),
        }
    }
}

impl fmt::Display for FactorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FactorId::Likelihood => write!(f, "p(y|nu,zeta,sigsq_eps)"),
            FactorId::Penalization => write!(f, "p(nu|sigsq_mu,sigsq_psi)"),
            FactorId::ZetaPrior(i) => write!(f, "p(zeta[{i}])"),
            FactorId::IteratedEps => write!(f, "p(sigsq_eps|a_eps)"),
            FactorId::AuxPriorEps => write!(f, "p(a_eps)"),
            FactorId::IteratedMu => write!(f, "p(sigsq_mu|a_mu)"),
            FactorId::AuxPriorMu => write!(f, "p(a_mu)"),
            FactorId::IteratedPsi(l) => write!(f, "p(sigsq_psi[{l}]|a_psi[{l}])"),
            FactorId::AuxPriorPsi(l) => write!(f, "p(a_psi[{l}])"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    FactorToNode,
    NodeToFactor,
}

/// Graph message attached to inverse G-Wishart family messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphTag {
    Full,
    Diagonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub params: NaturalParams,
    pub graph_tag: Option<GraphTag>,
}

impl Message {
    pub fn new(params: NaturalParams) -> Self {
        Self {
            params,
            graph_tag: None,
        }
    }

    pub fn tagged(params: NaturalParams, tag: GraphTag) -> Self {
        Self {
            params,
            graph_tag: Some(tag),
        }
    }
}

/// Adjacency of a bipartite factor graph.
pub trait Topology {
    fn node_neighbors(&self, node: NodeId) -> Vec<FactorId>;
    fn factor_neighbors(&self, factor: FactorId) -> Vec<NodeId>;
}

/// Topology of the FPCA factor graph for `n` curves and `L` eigenfunctions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FactorGraph {
    pub num_curves: usize,
    pub num_eigen: usize,
}

impl FactorGraph {
    pub fn new(num_curves: usize, num_eigen: usize) -> Self {
        Self {
            num_curves,
            num_eigen,
        }
    }

    pub fn nodes(&self) -> Vec<NodeId> {
        let mut nodes = vec![NodeId::Nu];
        nodes.extend((0..self.num_curves).map(NodeId::Zeta));
        nodes.extend([NodeId::SigmaSqEps, NodeId::AuxEps, NodeId::SigmaSqMu, NodeId::AuxMu]);
        for l in 0..self.num_eigen {
            nodes.push(NodeId::SigmaSqPsi(l));
            nodes.push(NodeId::AuxPsi(l));
        }
        nodes
    }

    pub fn factors(&self) -> Vec<FactorId> {
        let mut factors = vec![FactorId::Likelihood, FactorId::Penalization];
        factors.extend((0..self.num_curves).map(FactorId::ZetaPrior));
        factors.extend([
            FactorId::IteratedEps,
            FactorId::AuxPriorEps,
            FactorId::IteratedMu,
            FactorId::AuxPriorMu,
        ]);
        for l in 0..self.num_eigen {
            factors.push(FactorId::IteratedPsi(l));
            factors.push(FactorId::AuxPriorPsi(l));
        }
        factors
    }

    /// Sufficient-statistic basis used by every message incident to `node`.
    pub fn node_basis(node: NodeId) -> Basis {
        match node {
            NodeId::Nu => Basis::GaussianVec,
            NodeId::Zeta(_) => Basis::GaussianVech,
            _ => Basis::InvChiSq,
        }
    }
}

impl Topology for FactorGraph {
    fn factor_neighbors(&self, factor: FactorId) -> Vec<NodeId> {
        match factor {
            FactorId::Likelihood => {
                let mut v = vec![NodeId::Nu];
                v.extend((0..self.num_curves).map(NodeId::Zeta));
                v.push(NodeId::SigmaSqEps);
                v
            }
            FactorId::Penalization => {
                let mut v = vec![NodeId::Nu, NodeId::SigmaSqMu];
                v.extend((0..self.num_eigen).map(NodeId::SigmaSqPsi));
                v
            }
            FactorId::ZetaPrior(i) => vec![NodeId::Zeta(i)],
            FactorId::IteratedEps => vec![NodeId::SigmaSqEps, NodeId::AuxEps],
            FactorId::AuxPriorEps => vec![NodeId::AuxEps],
            FactorId::IteratedMu => vec![NodeId::SigmaSqMu, NodeId::AuxMu],
            FactorId::AuxPriorMu => vec![NodeId::AuxMu],
            FactorId::IteratedPsi(l) => vec![NodeId::SigmaSqPsi(l), NodeId::AuxPsi(l)],
            FactorId::AuxPriorPsi(l) => vec![NodeId::AuxPsi(l)],
        }
    }

    fn node_neighbors(&self, node: NodeId) -> Vec<FactorId> {
        match node {
            NodeId::Nu => vec![FactorId::Likelihood, FactorId::Penalization],
            NodeId::Zeta(i) => vec![FactorId::Likelihood, FactorId::ZetaPrior(i)],
            NodeId::SigmaSqEps => vec![FactorId::Likelihood, FactorId::IteratedEps],
            NodeId::AuxEps => vec![FactorId::IteratedEps, FactorId::AuxPriorEps],
            NodeId::SigmaSqMu => vec![FactorId::Penalization, FactorId::IteratedMu],
            NodeId::AuxMu => vec![FactorId::IteratedMu, FactorId::AuxPriorMu],
            NodeId::SigmaSqPsi(l) => vec![FactorId::Penalization, FactorId::IteratedPsi(l)],
            NodeId::AuxPsi(l) => vec![FactorId::IteratedPsi(l), FactorId::AuxPriorPsi(l)],
        }
    }
}

type Key = (FactorId, NodeId, Direction);

/// Keyed message store. Reads of absent keys are errors, never implicit zeros.
#[derive(Debug, Clone, Default)]
pub struct MessageStore {
    messages: HashMap<Key, Message>,
}

impl MessageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Store a message, checking it uses the basis fixed for its node.
    pub fn set(&mut self, factor: FactorId, node: NodeId, dir: Direction, msg: Message) -> Result<()> {
        let expected = FactorGraph::node_basis(node);
        if msg.params.basis() != expected {
            return Err(FpcaError::BasisMismatch(format!(
                "message {factor} -> {node} uses {:?}, node requires {expected:?}",
                msg.params.basis()
            )));
        }
        self.messages.insert((factor, node, dir), msg);
        Ok(())
    }

    pub fn get(&self, factor: FactorId, node: NodeId, dir: Direction) -> Result<&Message> {
        self.messages.get(&(factor, node, dir)).ok_or_else(|| {
            let arrow = match dir {
                Direction::FactorToNode => format!("{factor} -> {node}"),
                Direction::NodeToFactor => format!("{node} -> {factor}"),
            };
            FpcaError::MissingMessage(arrow)
        })
    }

    pub fn factor_to_node(&self, factor: FactorId, node: NodeId) -> Result<&Message> {
        self.get(factor, node, Direction::FactorToNode)
    }

    pub fn node_to_factor(&self, node: NodeId, factor: FactorId) -> Result<&Message> {
        self.get(factor, node, Direction::NodeToFactor)
    }

    pub fn set_factor_to_node(&mut self, factor: FactorId, node: NodeId, msg: Message) -> Result<()> {
        self.set(factor, node, Direction::FactorToNode, msg)
    }
}

/// Sum of a non-empty sequence of natural parameter vectors.
fn sum_params<'a>(mut it: impl Iterator<Item = &'a NaturalParams>) -> Result<Option<NaturalParams>> {
    let Some(first) = it.next() else {
        return Ok(None);
    };
    let mut acc = first.clone();
    for p in it {
        acc = acc.try_add(p)?;
    }
    Ok(Some(acc))
}

/// Message from `node` to `target`: the sum of the messages `node` received
/// from all its other neighbouring factors.
pub fn stochastic_to_factor(
    graph: &(impl Topology + ?Sized),
    node: NodeId,
    target: FactorId,
    store: &MessageStore,
) -> Result<Message> {
    let neighbors = graph.node_neighbors(node);
    if !neighbors.contains(&target) {
        return Err(FpcaError::Invalid(format!("{target} is not a neighbour of {node}")));
    }
    let incoming = neighbors
        .iter()
        .filter(|&&f| f != target)
        .map(|&f| store.factor_to_node(f, node).map(|m| &m.params))
        .collect::<Result<Vec<_>>>()?;
    let params = match sum_params(incoming.into_iter())? {
        Some(p) => p,
        // A leaf node sends the zero vector (a flat message).
        None => store.factor_to_node(target, node)?.params.zeros_like(),
    };
    // Forward the graph tag carried by variance messages.
    let tag = neighbors
        .iter()
        .filter(|&&f| f != target)
        .find_map(|&f| store.factor_to_node(f, node).ok().and_then(|m| m.graph_tag));
    Ok(Message {
        params,
        graph_tag: tag,
    })
}

/// Natural parameters of the optimal q-density of `node`: the sum of all
/// factor-to-node messages it receives.
pub fn q_natural_params(graph: &(impl Topology + ?Sized), node: NodeId, store: &MessageStore) -> Result<NaturalParams> {
    let incoming = graph
        .node_neighbors(node)
        .iter()
        .map(|&f| store.factor_to_node(f, node).map(|m| &m.params))
        .collect::<Result<Vec<_>>>()?;
    sum_params(incoming.into_iter())?
        .ok_or_else(|| FpcaError::Invalid(format!("{node} has no neighbours")))
}

/// `η_{f↔θ} = η_{f→θ} + η_{θ→f}`.
pub fn npbf(factor: FactorId, node: NodeId, store: &MessageStore) -> Result<NaturalParams> {
    let to_node = store.factor_to_node(factor, node)?;
    let to_factor = store.node_to_factor(node, factor)?;
    to_node.params.try_add(&to_factor.params)
}

/// Recompute and store every node-to-factor message incident to `factor`.
pub fn refresh_incoming(graph: &(impl Topology + ?Sized), factor: FactorId, store: &mut MessageStore) -> Result<()> {
    for node in graph.factor_neighbors(factor) {
        let msg = stochastic_to_factor(graph, node, factor, store)?;
        store.set(factor, node, Direction::NodeToFactor, msg)?;
    }
    Ok(())
}
