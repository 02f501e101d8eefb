//! The path-reasoning MDP: states, the policy network scoring actions,
//! deterministic transitions and the terminal reward.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{Action, EntityId, KnowledgeGraph, Relation};
use crate::linalg::{dot, log_softmax, sigmoid, Matrix};
use crate::transe::EmbeddingTable;

/// Alternating entity/relation walk starting at `start`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SemanticPath {
    pub start: EntityId,
    pub hops: Vec<Action>,
}

impl SemanticPath {
    pub fn new(start: EntityId) -> Self {
        SemanticPath {
            start,
            hops: Vec::new(),
        }
    }

    pub fn end(&self) -> EntityId {
        self.hops.last().map_or(self.start, |&(_, e)| e)
    }

    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> + '_ {
        std::iter::once(self.start).chain(self.hops.iter().map(|&(_, e)| e))
    }

    /// Every consecutive `(e, r, e′)` is a triple of `g`.
    pub fn is_valid_in(&self, g: &KnowledgeGraph) -> bool {
        let mut prev = self.start;
        for &(r, e) in &self.hops {
            if !g.contains(prev, r, e) {
                return false;
            }
            prev = e;
        }
        true
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct State {
    pub path: SemanticPath,
}

impl State {
    pub fn initial(g: &KnowledgeGraph, start: EntityId) -> Result<Self> {
        g.entity(start)?;
        Ok(State {
            path: SemanticPath::new(start),
        })
    }

    pub fn current(&self) -> EntityId {
        self.path.end()
    }

    pub fn last_relation(&self) -> Option<Relation> {
        self.path.hops.last().map(|&(r, _)| r)
    }

    pub fn step_index(&self) -> usize {
        self.path.len()
    }

    pub fn visited(&self) -> Vec<EntityId> {
        self.path.entities().collect()
    }

    pub fn legal_actions(&self, g: &KnowledgeGraph) -> Result<Vec<Action>> {
        g.neighbors(self.current(), &self.visited())
    }
}

/// Deterministic transition; the action must be legal in `state`.
pub fn step(g: &KnowledgeGraph, state: &State, action: Action) -> Result<State> {
    let visited = state.visited();
    if visited.contains(&action.1) || !g.contains(state.current(), action.0, action.1) {
        return Err(Error::IllegalAction {
            relation: action.0.index(),
            entity: action.1 .0,
        });
    }
    let mut next = state.clone();
    next.path.hops.push(action);
    Ok(next)
}

/// One tanh layer over `S_e ⊕ S_p` and the action projection `W₁`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    /// `d₂ × (d₁ + d₀)`
    pub mlp_weight: Matrix,
    pub mlp_bias: Vec<f64>,
    /// `d₀ × d₂`
    pub w1: Matrix,
}

impl PolicyParams {
    pub fn zeros(session_dim: usize, embed_dim: usize, state_dim: usize) -> Self {
        PolicyParams {
            mlp_weight: Matrix::zeros(state_dim, session_dim + embed_dim),
            mlp_bias: vec![0.0; state_dim],
            w1: Matrix::zeros(embed_dim, state_dim),
        }
    }

    /// Uniform in `±1/√fan_in` per layer.
    pub fn random(session_dim: usize, embed_dim: usize, state_dim: usize, seed: u64) -> Self {
        let mut p = Self::zeros(session_dim, embed_dim, state_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b1 = 1.0 / ((session_dim + embed_dim) as f64).sqrt();
        for x in p.mlp_weight.data.iter_mut().chain(p.mlp_bias.iter_mut()) {
            *x = rng.gen_range(-b1..b1);
        }
        let b2 = 1.0 / (state_dim as f64).sqrt();
        for x in &mut p.w1.data {
            *x = rng.gen_range(-b2..b2);
        }
        p
    }

    pub fn session_dim(&self) -> usize {
        self.mlp_weight.cols - self.w1.rows
    }

    pub fn embed_dim(&self) -> usize {
        self.w1.rows
    }

    pub fn state_dim(&self) -> usize {
        self.mlp_bias.len()
    }

    pub fn len(&self) -> usize {
        self.mlp_weight.data.len() + self.mlp_bias.len() + self.w1.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        [&self.mlp_weight.data[..], &self.mlp_bias, &self.w1.data].concat()
    }

    pub fn assign(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Shape {
                expected: self.len(),
                actual: flat.len(),
            });
        }
        let (a, rest) = flat.split_at(self.mlp_weight.data.len());
        let (b, w) = rest.split_at(self.mlp_bias.len());
        self.mlp_weight.data.copy_from_slice(a);
        self.mlp_bias.copy_from_slice(b);
        self.w1.data.copy_from_slice(w);
        Ok(())
    }
}

/// Forward activations of the state MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    /// `S_e ⊕ S_p`
    pub input: Vec<f64>,
    /// `s_t = tanh(A·input + b)`
    pub value: Vec<f64>,
}

/// `S_p = x_{e_t} + x_{r_t}`, with a zero relation term at `t = 0`.
pub fn path_summary(state: &State, table: &EmbeddingTable) -> Vec<f64> {
    let mut sp = table.entity(state.current()).to_vec();
    if let Some(r) = state.last_relation() {
        crate::linalg::axpy(1.0, table.relation(r), &mut sp);
    }
    sp
}

pub fn state_vector(state: &State, session_vec: &[f64], params: &PolicyParams, table: &EmbeddingTable) -> Result<StateVector> {
    table.check_entity(state.current())?;
    if session_vec.len() != params.session_dim() {
        return Err(Error::Shape {
            expected: params.session_dim(),
            actual: session_vec.len(),
        });
    }
    if table.dim() != params.embed_dim() {
        return Err(Error::Shape {
            expected: params.embed_dim(),
            actual: table.dim(),
        });
    }
    let mut input = session_vec.to_vec();
    input.extend(path_summary(state, table));
    let mut pre = params.mlp_bias.clone();
    params.mlp_weight.matvec_acc(&input, &mut pre);
    let value = pre.into_iter().map(f64::tanh).collect();
    Ok(StateVector { input, value })
}

/// Masked softmax over the supplied legal actions.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    /// `W₁ s_t`
    pub projected: Vec<f64>,
    pub logits: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }
}

/// `x_r + x_e`, the embedding an action is scored by.
pub fn action_embedding(action: Action, table: &EmbeddingTable) -> Vec<f64> {
    let mut u = table.relation(action.0).to_vec();
    crate::linalg::axpy(1.0, table.entity(action.1), &mut u);
    u
}

pub fn action_logits(projected: &[f64], actions: &[Action], table: &EmbeddingTable) -> Vec<f64> {
    actions
        .iter()
        .map(|&(r, e)| dot(table.relation(r), projected) + dot(table.entity(e), projected))
        .collect()
}

pub fn action_distribution(
    state_vec: &StateVector,
    actions: &[Action],
    params: &PolicyParams,
    table: &EmbeddingTable,
) -> Result<ActionDistribution> {
    if actions.is_empty() {
        return Err(Error::DeadEnd);
    }
    for &(_, e) in actions {
        table.check_entity(e)?;
    }
    let projected = params.w1.matvec(&state_vec.value);
    let logits = action_logits(&projected, actions, table);
    let log_probs = log_softmax(&logits);
    Ok(ActionDistribution {
        projected,
        logits,
        log_probs,
    })
}

/// Gradient accumulator with the same layout as `PolicyParams`.
pub type PolicyGrads = PolicyParams;

/// Back-propagates `dL/dlogits` of one decision into the policy gradients.
/// Returns `dL/dS_e`.
pub fn policy_backward(
    state_vec: &StateVector,
    actions: &[Action],
    dlogits: &[f64],
    params: &PolicyParams,
    table: &EmbeddingTable,
    grads: &mut PolicyGrads,
) -> Vec<f64> {
    let mut dproj = vec![0.0; params.embed_dim()];
    for (&g, &a) in dlogits.iter().zip(actions) {
        if g != 0.0 {
            crate::linalg::axpy(g, table.relation(a.0), &mut dproj);
            crate::linalg::axpy(g, table.entity(a.1), &mut dproj);
        }
    }
    grads.w1.add_outer(&dproj, &state_vec.value);
    let ds = params.w1.tmatvec(&dproj);
    let dpre: Vec<f64> = ds
        .iter()
        .zip(&state_vec.value)
        .map(|(g, s)| g * (1.0 - s * s))
        .collect();
    grads.mlp_weight.add_outer(&dpre, &state_vec.input);
    crate::linalg::axpy(1.0, &dpre, &mut grads.mlp_bias);
    let dinput = params.mlp_weight.tmatvec(&dpre);
    dinput[..params.session_dim()].to_vec()
}

/// Which reward terms enter the total.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// item + 2^rank + path
    Full,
    /// item + path
    NoRank,
    /// item only
    ItemOnly,
    /// 1 when the terminal is the target, else 0
    Binary,
}

impl RewardMode {
    pub fn uses_path(self) -> bool {
        matches!(self, RewardMode::Full | RewardMode::NoRank)
    }
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardMode::Full => "full",
            RewardMode::NoRank => "no_rank",
            RewardMode::ItemOnly => "item_only",
            RewardMode::Binary => "binary",
        })
    }
}

impl FromStr for RewardMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(RewardMode::Full),
            "no_rank" => Ok(RewardMode::NoRank),
            "item_only" => Ok(RewardMode::ItemOnly),
            "binary" => Ok(RewardMode::Binary),
            other => Err(Error::Config(format!("unknown reward mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub item: f64,
    pub rank: f64,
    pub path: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn zero() -> Self {
        Self::default()
    }
}

/// Mean of every entity and relation row along the path.
pub fn path_representation(path: &SemanticPath, table: &EmbeddingTable) -> Vec<f64> {
    let mut acc = table.entity(path.start).to_vec();
    for &(r, e) in &path.hops {
        crate::linalg::axpy(1.0, table.relation(r), &mut acc);
        crate::linalg::axpy(1.0, table.entity(e), &mut acc);
    }
    let n = (1 + 2 * path.hops.len()) as f64;
    acc.iter_mut().for_each(|x| *x /= n);
    acc
}

/// Terminal reward of `path` for a session whose ground truth is `target`.
/// `rank` is the 0-based position of the terminal among the episode batch's
/// candidate products (ignored for non-product terminals).
pub fn reward(
    g: &KnowledgeGraph,
    table: &EmbeddingTable,
    path: &SemanticPath,
    session_vec: &[f64],
    target: EntityId,
    rank: Option<usize>,
    mode: RewardMode,
) -> Result<RewardBreakdown> {
    let terminal = path.end();
    table.check_entity(terminal)?;
    table.check_entity(target)?;
    let is_product = g.is_product(terminal);
    let item = if terminal == target {
        1.0
    } else if is_product {
        sigmoid(dot(table.entity(terminal), table.entity(target)))
    } else {
        0.0
    };
    let rank_term = match (is_product, rank) {
        (true, Some(ra)) => 1.0 / ((ra + 2) as f64).log2(),
        _ => 0.0,
    };
    let path_term = if session_vec.len() == table.dim() {
        sigmoid(dot(&path_representation(path, table), session_vec))
    } else if mode.uses_path() {
        return Err(Error::Shape {
            expected: table.dim(),
            actual: session_vec.len(),
        });
    } else {
        0.0
    };
    let total = match mode {
        RewardMode::Full => item + rank_term.exp2() + path_term,
        RewardMode::NoRank => item + path_term,
        RewardMode::ItemOnly => item,
        RewardMode::Binary => {
            if terminal == target {
                1.0
            } else {
                0.0
            }
        }
    };
    Ok(RewardBreakdown {
        item,
        rank: rank_term,
        path: path_term,
        total,
    })
}
