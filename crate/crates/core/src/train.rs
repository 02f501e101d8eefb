//! Policy training: branching rollouts, in-batch item scoring, the
//! REINFORCE-with-baseline loss, the cross-entropy loss and the combined
//! optimizer step.
//!
//! A rollout for one session is a tree: every decision point stores the state
//! and its legal actions, and every leaf is an `Episode` referencing the
//! decisions it passed through. Losses are recomputed from that structure,
//! so the same code path serves training and gradient checking.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderTrace;
use crate::error::{Error, Result};
use crate::ingest::Session;
use crate::kg::{Action, EntityId, EntityKind, KnowledgeGraph};
use crate::mdp::{
    action_distribution, policy_backward, reward, state_vector, step, PolicyGrads, PolicyParams, RewardBreakdown,
    RewardMode, SemanticPath, State,
};
use crate::model::ReksModel;
use crate::transe::EmbeddingTable;

/// Clamp applied to predicted item scores inside the cross-entropy.
pub const CE_EPSILON: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPoint {
    LastItem,
    User,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `β·L_r + L_ce`
    Combined,
    /// `L_r` alone
    RewardOnly,
    /// `L_ce` alone
    CrossEntropyOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

macro_rules! string_enum {
    ($ty:ty, $($variant:path => $name:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " {:?}"), other
                    ))),
                }
            }
        }
    };
}

string_enum!(StartPoint, StartPoint::LastItem => "last_item", StartPoint::User => "user");
string_enum!(LossMode, LossMode::Combined => "combined", LossMode::RewardOnly => "reward", LossMode::CrossEntropyOnly => "ce");
string_enum!(OptimizerKind, OptimizerKind::Sgd => "sgd", OptimizerKind::Adam => "adam");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub path_length: usize,
    pub sampling_sizes: Vec<usize>,
    pub gamma: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub baseline_decay: f64,
    /// Rescales a batch gradient whose L2 norm exceeds this; 0 disables.
    pub grad_clip: f64,
    pub optimizer: OptimizerKind,
    pub reward_mode: RewardMode,
    pub loss_mode: LossMode,
    pub start: StartPoint,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            path_length: 2,
            sampling_sizes: vec![100, 1],
            gamma: 0.99,
            beta: 0.2,
            learning_rate: 0.001,
            batch_size: 256,
            epochs: 30,
            baseline_decay: 0.9,
            grad_clip: 0.0,
            optimizer: OptimizerKind::Sgd,
            reward_mode: RewardMode::Full,
            loss_mode: LossMode::Combined,
            start: StartPoint::LastItem,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.path_length == 0 {
            return fail("path length must be at least 1".into());
        }
        if self.sampling_sizes.len() != self.path_length {
            return fail(format!(
                "{} sampling sizes given for path length {}",
                self.sampling_sizes.len(),
                self.path_length
            ));
        }
        if self.sampling_sizes.contains(&0) {
            return fail("sampling sizes must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !(self.beta >= 0.0) {
            return fail(format!("beta {} must be nonnegative", self.beta));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return fail("learning rate and batch size must be positive".into());
        }
        if !(self.grad_clip >= 0.0) {
            return fail(format!("gradient clip {} must be nonnegative", self.grad_clip));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return fail(format!("baseline decay {} outside [0, 1)", self.baseline_decay));
        }
        Ok(())
    }

    /// `(reward weight, cross-entropy weight)`
    pub fn loss_weights(&self) -> LossWeights {
        match self.loss_mode {
            LossMode::Combined => LossWeights {
                reward: self.beta,
                ce: 1.0,
            },
            LossMode::RewardOnly => LossWeights { reward: 1.0, ce: 0.0 },
            LossMode::CrossEntropyOnly => LossWeights { reward: 0.0, ce: 1.0 },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub reward: f64,
    pub ce: f64,
}

/// A session resolved against the graph. Items unknown to the graph are
/// dropped from `items`; a missing start or target leaves `None`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreparedSession {
    pub id: String,
    pub user: Option<EntityId>,
    pub items: Vec<EntityId>,
    pub last_item: Option<EntityId>,
    pub target: Option<EntityId>,
}

impl PreparedSession {
    pub fn start(&self, start: StartPoint) -> Option<EntityId> {
        match start {
            StartPoint::LastItem => self.last_item,
            StartPoint::User => self.user,
        }
    }
}

pub fn prepare_sessions(g: &KnowledgeGraph, sessions: &[Session]) -> Vec<PreparedSession> {
    sessions
        .iter()
        .map(|s| PreparedSession {
            id: s.id.clone(),
            user: g.find(EntityKind::User, &s.user_id),
            items: s.items.iter().filter_map(|i| g.product(i)).collect(),
            last_item: g.product(s.last_item()),
            target: g.product(&s.target),
        })
        .collect()
}

/// A branching point of a rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub state: State,
    pub actions: Vec<Action>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub path: SemanticPath,
    /// `(decision index, chosen action index)` per hop.
    pub steps: Vec<(usize, usize)>,
    /// `Σ_t log π(a_t | s_t)` at rollout time.
    pub log_prob: f64,
    pub dead_end: bool,
    pub rank: Option<usize>,
    pub reward: RewardBreakdown,
    /// Discounted return `γ^{T−1}·R_T`.
    pub ret: f64,
}

impl Episode {
    pub fn terminal(&self) -> EntityId {
        self.path.end()
    }
}

#[derive(Clone, Debug)]
pub struct SessionRollout {
    pub session_id: String,
    pub items: Vec<EntityId>,
    pub target: Option<EntityId>,
    pub encoder_trace: EncoderTrace,
    pub decisions: Vec<Decision>,
    pub episodes: Vec<Episode>,
}

fn item_rows<'a>(table: &'a EmbeddingTable, items: &[EntityId]) -> Vec<&'a [f64]> {
    items.iter().map(|&e| table.entity(e)).collect()
}

/// Draws `k` distinct indices with probability proportional to `weights`,
/// one at a time without replacement. Takes every index, in order, when
/// `k ≥ weights.len()`.
pub fn sample_without_replacement(weights: &[f64], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    if k >= weights.len() {
        return (0..weights.len()).collect();
    }
    let mut remaining: Vec<(usize, f64)> = weights.iter().copied().enumerate().collect();
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = remaining.iter().map(|&(_, w)| w).sum();
        let pos = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pos = remaining.len() - 1;
            for (i, &(_, w)) in remaining.iter().enumerate() {
                if u < w {
                    pos = i;
                    break;
                }
                u -= w;
            }
            pos
        } else {
            rng.gen_range(0..remaining.len())
        };
        picked.push(remaining.remove(pos).0);
    }
    picked
}

/// Expands `sampling_sizes[t]` actions per open branch at hop `t`, sampling
/// from the policy without replacement. Returns `None` when the session has
/// no start entity or the start is a dead end.
pub fn rollout_session(
    model: &ReksModel,
    table: &EmbeddingTable,
    g: &KnowledgeGraph,
    session: &PreparedSession,
    config: &TrainConfig,
    train_mode: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Option<SessionRollout>> {
    let Some(start) = session.start(config.start) else {
        return Ok(None);
    };
    if session.items.is_empty() {
        return Ok(None);
    }
    let rows = item_rows(table, &session.items);
    let trace = model
        .encoder
        .forward(&rows, if train_mode { Some(rng as &mut dyn RngCore) } else { None })?;
    let session_vec = trace.output.clone();

    let mut decisions = Vec::new();
    let mut episodes = Vec::new();
    // (state, steps, log prob)
    let mut frontier = vec![(State::initial(g, start)?, Vec::<(usize, usize)>::new(), 0.0)];
    for (t, &width) in config.sampling_sizes.iter().enumerate() {
        let mut next = Vec::new();
        for (state, steps, lp) in frontier {
            let actions = state.legal_actions(g)?;
            if actions.is_empty() {
                if t == 0 {
                    return Ok(None);
                }
                episodes.push(Episode {
                    path: state.path,
                    steps,
                    log_prob: lp,
                    dead_end: true,
                    rank: None,
                    reward: RewardBreakdown::zero(),
                    ret: 0.0,
                });
                continue;
            }
            let sv = state_vector(&state, &session_vec, &model.policy, table)?;
            let dist = action_distribution(&sv, &actions, &model.policy, table)?;
            let chosen = sample_without_replacement(&dist.probs(), width, rng);
            let d = decisions.len();
            for idx in chosen {
                let child = step(g, &state, actions[idx])?;
                let mut child_steps = steps.clone();
                child_steps.push((d, idx));
                next.push((child, child_steps, lp + dist.log_probs[idx]));
            }
            decisions.push(Decision { state, actions });
        }
        frontier = next;
    }
    for (state, steps, lp) in frontier {
        episodes.push(Episode {
            path: state.path,
            steps,
            log_prob: lp,
            dead_end: false,
            rank: None,
            reward: RewardBreakdown::zero(),
            ret: 0.0,
        });
    }
    Ok(Some(SessionRollout {
        session_id: session.id.clone(),
        items: session.items.clone(),
        target: session.target,
        encoder_trace: trace,
        decisions,
        episodes,
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub item: EntityId,
    /// Summed path probability.
    pub raw: f64,
    /// `raw / max raw`
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ItemScores {
    /// Candidate products in rank order.
    pub items: Vec<ItemScore>,
    /// 0-based rank of each episode's terminal, `None` for non-products and
    /// dead ends.
    pub episode_ranks: Vec<Option<usize>>,
    /// Log of the top item's summed path probability.
    pub log_max: f64,
}

/// Aggregates path probabilities of product-terminal episodes into item
/// scores; ties rank by ascending entity index. Sums are taken in log space
/// so normalized scores stay finite for tiny path probabilities.
pub fn score_items(episodes: &[Episode], g: &KnowledgeGraph) -> ItemScores {
    let mut log_raw: HashMap<EntityId, f64> = HashMap::new();
    for ep in episodes {
        if !ep.dead_end && g.is_product(ep.terminal()) {
            let acc = log_raw.entry(ep.terminal()).or_insert(f64::NEG_INFINITY);
            *acc = log_add(*acc, ep.log_prob);
        }
    }
    let mut ranked: Vec<(EntityId, f64)> = log_raw.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let log_max = ranked.first().map_or(0.0, |r| r.1);
    let items: Vec<ItemScore> = ranked
        .iter()
        .map(|&(item, lr)| ItemScore {
            item,
            raw: lr.exp(),
            score: (lr - log_max).exp(),
        })
        .collect();
    let rank_of: HashMap<EntityId, usize> = items.iter().enumerate().map(|(i, s)| (s.item, i)).collect();
    let episode_ranks = episodes
        .iter()
        .map(|ep| if ep.dead_end { None } else { rank_of.get(&ep.terminal()).copied() })
        .collect();
    ItemScores {
        items,
        episode_ranks,
        log_max,
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

/// Fills in ranks, rewards and discounted returns of a rollout's episodes.
pub fn assign_rewards(
    rollout: &mut SessionRollout,
    g: &KnowledgeGraph,
    table: &EmbeddingTable,
    target: EntityId,
    mode: RewardMode,
    gamma: f64,
) -> Result<()> {
    let scores = score_items(&rollout.episodes, g);
    let session_vec = rollout.encoder_trace.output.clone();
    for (ep, rank) in rollout.episodes.iter_mut().zip(scores.episode_ranks) {
        ep.rank = rank;
        if ep.dead_end {
            ep.reward = RewardBreakdown::zero();
            ep.ret = 0.0;
            continue;
        }
        ep.reward = reward(g, table, &ep.path, &session_vec, target, rank, mode)?;
        ep.ret = gamma.powi(ep.path.len() as i32 - 1) * ep.reward.total;
    }
    Ok(())
}

/// Exponential moving average of batch-mean returns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub value: f64,
    pub decay: f64,
}

impl Baseline {
    pub fn new(decay: f64) -> Self {
        Baseline { value: 0.0, decay }
    }

    pub fn update(&mut self, batch_mean: f64) {
        self.value = self.decay * self.value + (1.0 - self.decay) * batch_mean;
    }
}

/// `−mean_e (G_e − b)·logπ_e` and its derivative w.r.t. each `logπ_e`.
pub fn reinforce_terms(returns: &[f64], log_probs: &[f64], baseline: f64) -> (f64, Vec<f64>) {
    let n = returns.len() as f64;
    if returns.is_empty() {
        return (0.0, Vec::new());
    }
    let loss = -returns
        .iter()
        .zip(log_probs)
        .map(|(g, lp)| (g - baseline) * lp)
        .sum::<f64>()
        / n;
    let grads = returns.iter().map(|g| -(g - baseline) / n).collect();
    (loss, grads)
}

/// REINFORCE loss at the current baseline, then folds this batch's mean
/// return into the baseline.
pub fn reinforce_loss(returns: &[f64], log_probs: &[f64], baseline: &mut Baseline) -> (f64, Vec<f64>) {
    let out = reinforce_terms(returns, log_probs, baseline.value);
    if !returns.is_empty() {
        baseline.update(returns.iter().sum::<f64>() / returns.len() as f64);
    }
    out
}

/// Binary cross-entropy summed over candidates, scores clamped to
/// `[ε, 1−ε]`. Returns the loss and `dL/dŷ` (zero where clamped).
pub fn cross_entropy_loss(scores: &[f64], labels: &[bool]) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(scores.len());
    for (&y_hat, &y) in scores.iter().zip(labels) {
        let clamped = y_hat.clamp(CE_EPSILON, 1.0 - CE_EPSILON);
        let inside = clamped == y_hat;
        if y {
            loss -= clamped.ln();
            grads.push(if inside { -1.0 / clamped } else { 0.0 });
        } else {
            loss -= (1.0 - clamped).ln();
            grads.push(if inside { 1.0 / (1.0 - clamped) } else { 0.0 });
        }
    }
    (loss, grads)
}

/// Cross-entropy of one session as a function of its episodes' log-probs.
/// `None` when the target is not among the candidates.
pub fn session_ce(episodes: &[Episode], log_probs: &[f64], g: &KnowledgeGraph, target: EntityId) -> Option<(f64, Vec<f64>)> {
    let eps: Vec<Episode> = episodes
        .iter()
        .zip(log_probs)
        .map(|(e, &lp)| Episode { log_prob: lp, ..e.clone() })
        .collect();
    let scores = score_items(&eps, g);
    if !scores.items.iter().any(|s| s.item == target) {
        return None;
    }
    let labels: Vec<bool> = scores.items.iter().map(|s| s.item == target).collect();
    let y_hat: Vec<f64> = scores.items.iter().map(|s| s.score).collect();
    let (loss, dy) = cross_entropy_loss(&y_hat, &labels);

    // ŷ_j = raw_j / raw_max with raw_j = Σ_{e→j} exp(lp_e); the top item is
    // constant (ŷ = 1, clamped) and only enters through the denominator.
    let slot: HashMap<EntityId, usize> = scores.items.iter().enumerate().map(|(i, s)| (s.item, i)).collect();
    let denom_pull: f64 = scores.items[1..]
        .iter()
        .zip(&dy[1..])
        .map(|(s, d)| d * s.score)
        .sum::<f64>();
    let mut dlp = vec![0.0; episodes.len()];
    for (k, ep) in eps.iter().enumerate() {
        let Some(&j) = slot.get(&ep.terminal()).filter(|_| !ep.dead_end) else {
            continue;
        };
        // p_k / raw_max
        let share = (ep.log_prob - scores.log_max).exp();
        dlp[k] = if j == 0 { -share * denom_pull } else { dy[j] * share };
    }
    Some((loss, dlp))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub reward_loss: f64,
    pub ce_loss: f64,
    pub total: f64,
    pub episodes: usize,
    pub ce_sessions: usize,
    pub ce_skipped: usize,
}

struct SessionForward {
    trace: EncoderTrace,
    states: Vec<crate::mdp::StateVector>,
    dists: Vec<crate::mdp::ActionDistribution>,
    log_probs: Vec<f64>,
}

fn forward_rollout(model: &ReksModel, table: &EmbeddingTable, rollout: &SessionRollout) -> Result<SessionForward> {
    let rows = item_rows(table, &rollout.items);
    let trace = model.encoder.replay(&rows, &rollout.encoder_trace)?;
    let mut states = Vec::with_capacity(rollout.decisions.len());
    let mut dists = Vec::with_capacity(rollout.decisions.len());
    for d in &rollout.decisions {
        let sv = state_vector(&d.state, &trace.output, &model.policy, table)?;
        dists.push(action_distribution(&sv, &d.actions, &model.policy, table)?);
        states.push(sv);
    }
    let log_probs = rollout
        .episodes
        .iter()
        .map(|ep| ep.steps.iter().map(|&(d, a)| dists[d].log_probs[a]).sum())
        .collect();
    Ok(SessionForward {
        trace,
        states,
        dists,
        log_probs,
    })
}

/// Recomputes `w_r·L_r + w_ce·L_ce` over fixed rollouts (paths, returns and
/// baseline held constant) and, on request, its gradient in the model's flat
/// parameter layout.
pub fn batch_objective(
    model: &ReksModel,
    table: &EmbeddingTable,
    g: &KnowledgeGraph,
    rollouts: &[SessionRollout],
    baseline: f64,
    weights: LossWeights,
    with_grad: bool,
) -> Result<(BatchLoss, Option<Vec<f64>>)> {
    let forwards: Vec<SessionForward> = rollouts
        .iter()
        .map(|r| forward_rollout(model, table, r))
        .collect::<Result<_>>()?;

    let returns: Vec<f64> = rollouts.iter().flat_map(|r| r.episodes.iter().map(|e| e.ret)).collect();
    let log_probs: Vec<f64> = forwards.iter().flat_map(|f| f.log_probs.iter().copied()).collect();
    let (reward_loss, d_reward) = reinforce_terms(&returns, &log_probs, baseline);

    let mut out = BatchLoss {
        reward_loss,
        episodes: returns.len(),
        ..Default::default()
    };
    let mut d_ce: Vec<Vec<f64>> = Vec::with_capacity(rollouts.len());
    let mut ce_sum = 0.0;
    for (r, f) in rollouts.iter().zip(&forwards) {
        let ce = if weights.ce == 0.0 {
            None
        } else {
            r.target.and_then(|t| session_ce(&r.episodes, &f.log_probs, g, t))
        };
        match ce {
            Some((loss, d)) => {
                ce_sum += loss;
                out.ce_sessions += 1;
                d_ce.push(d);
            }
            None => {
                if weights.ce != 0.0 {
                    out.ce_skipped += 1;
                }
                d_ce.push(vec![0.0; r.episodes.len()]);
            }
        }
    }
    let ce_scale = if out.ce_sessions > 0 { 1.0 / out.ce_sessions as f64 } else { 0.0 };
    out.ce_loss = ce_sum * ce_scale;
    out.total = weights.reward * out.reward_loss + weights.ce * out.ce_loss;
    if !with_grad {
        return Ok((out, None));
    }

    let mut enc_grad = vec![0.0; model.encoder.num_parameters()];
    let mut pol_grad: PolicyGrads = PolicyParams::zeros(model.session_dim(), model.embed_dim(), model.state_dim());
    let mut offset = 0;
    for ((r, f), dce) in rollouts.iter().zip(&forwards).zip(&d_ce) {
        let mut dlogits: Vec<Vec<f64>> = f.dists.iter().map(|d| vec![0.0; d.logits.len()]).collect();
        for (k, ep) in r.episodes.iter().enumerate() {
            let c = weights.reward * d_reward[offset + k] + weights.ce * ce_scale * dce[k];
            if c == 0.0 {
                continue;
            }
            for &(d, a) in &ep.steps {
                // d logπ(a)/d logits = onehot(a) − π
                for (i, lp) in f.dists[d].log_probs.iter().enumerate() {
                    dlogits[d][i] -= c * lp.exp();
                }
                dlogits[d][a] += c;
            }
        }
        offset += r.episodes.len();
        let mut d_session = vec![0.0; model.session_dim()];
        for (d, dl) in dlogits.iter().enumerate() {
            if dl.iter().all(|&x| x == 0.0) {
                continue;
            }
            let ds = policy_backward(&f.states[d], &r.decisions[d].actions, dl, &model.policy, table, &mut pol_grad);
            crate::linalg::axpy(1.0, &ds, &mut d_session);
        }
        if model.encoder.num_parameters() > 0 {
            let eg = model.encoder.backward(&f.trace, &d_session)?;
            crate::linalg::axpy(1.0, &eg.params, &mut enc_grad);
        }
    }
    enc_grad.extend(pol_grad.flatten());
    Ok((out, Some(enc_grad)))
}

/// Scales `grad` down to L2 norm `max_norm` when it is larger; `0` is a no-op.
pub fn clip_norm(grad: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = crate::linalg::norm(grad);
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|x| *x *= s);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, num_params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                m: vec![0.0; num_params],
                v: vec![0.0; num_params],
                t: 0,
            },
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        match self {
            Optimizer::Sgd { lr } => crate::linalg::axpy(-*lr, grads, params),
            Optimizer::Adam { lr, m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                *t += 1;
                let c1 = 1.0 - B1.powi(*t);
                let c2 = 1.0 - B2.powi(*t);
                for i in 0..params.len() {
                    m[i] = B1 * m[i] + (1.0 - B1) * grads[i];
                    v[i] = B2 * v[i] + (1.0 - B2) * grads[i] * grads[i];
                    params[i] -= *lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
                }
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    #[serde(rename = "L_r")]
    pub reward_loss: f64,
    #[serde(rename = "L_ce")]
    pub ce_loss: f64,
    #[serde(rename = "L")]
    pub loss: f64,
    pub mean_reward: f64,
    pub skipped_sessions: usize,
    pub ce_skipped: usize,
    pub episodes: usize,
}

/// Mutable training state: rng stream, baseline and optimizer moments.
pub struct Trainer {
    pub config: TrainConfig,
    pub rng: ChaCha8Rng,
    pub baseline: Baseline,
    pub optimizer: Optimizer,
    pub epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, model: &ReksModel) -> Result<Self> {
        config.validate()?;
        if config.loss_weights().reward > 0.0 && config.reward_mode.uses_path() && model.session_dim() != model.embed_dim() {
            return Err(Error::Config(format!(
                "path-level reward needs session dim == embedding dim, got {} and {}",
                model.session_dim(),
                model.embed_dim()
            )));
        }
        Ok(Trainer {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            baseline: Baseline::new(config.baseline_decay),
            optimizer: Optimizer::new(config.optimizer, config.learning_rate, model.num_parameters()),
            epoch: 0,
            config,
        })
    }

    /// Rolls out every session of the batch (skipped sessions are counted)
    /// and assigns rewards.
    pub fn collect(
        &mut self,
        model: &ReksModel,
        table: &EmbeddingTable,
        g: &KnowledgeGraph,
        batch: &[&PreparedSession],
    ) -> Result<(Vec<SessionRollout>, usize)> {
        let mut rollouts = Vec::with_capacity(batch.len());
        let mut skipped = 0;
        for s in batch {
            let Some(target) = s.target else {
                skipped += 1;
                continue;
            };
            match rollout_session(model, table, g, s, &self.config, true, &mut self.rng)? {
                Some(mut r) => {
                    assign_rewards(&mut r, g, table, target, self.config.reward_mode, self.config.gamma)?;
                    rollouts.push(r);
                }
                None => skipped += 1,
            }
        }
        Ok((rollouts, skipped))
    }

    /// One optimizer step on one batch. Returns the batch loss, the number of
    /// skipped sessions and the summed episode reward.
    pub fn train_batch(
        &mut self,
        model: &mut ReksModel,
        table: &EmbeddingTable,
        g: &KnowledgeGraph,
        batch: &[&PreparedSession],
    ) -> Result<(BatchLoss, usize, f64)> {
        let (rollouts, skipped) = self.collect(model, table, g, batch)?;
        if rollouts.is_empty() {
            return Ok((BatchLoss::default(), skipped, 0.0));
        }
        let (loss, grad) = batch_objective(
            model,
            table,
            g,
            &rollouts,
            self.baseline.value,
            self.config.loss_weights(),
            true,
        )?;
        let mut grad = grad.expect("gradient requested");
        clip_norm(&mut grad, self.config.grad_clip);
        let mut params = model.parameters();
        self.optimizer.step(&mut params, &grad);
        model.set_parameters(&params)?;

        let returns: Vec<f64> = rollouts.iter().flat_map(|r| r.episodes.iter().map(|e| e.ret)).collect();
        self.baseline.update(returns.iter().sum::<f64>() / returns.len() as f64);
        let reward_sum = rollouts
            .iter()
            .flat_map(|r| r.episodes.iter().map(|e| e.reward.total))
            .sum();
        Ok((loss, skipped, reward_sum))
    }

    pub fn train_epoch(
        &mut self,
        model: &mut ReksModel,
        table: &EmbeddingTable,
        g: &KnowledgeGraph,
        sessions: &[PreparedSession],
    ) -> Result<EpochReport> {
        if sessions.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let mut order: Vec<&PreparedSession> = sessions.iter().collect();
        order.shuffle(&mut self.rng);
        self.epoch += 1;
        let mut report = EpochReport {
            epoch: self.epoch,
            ..Default::default()
        };
        let mut batches = 0usize;
        let mut reward_sum = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let (loss, skipped, rsum) = self.train_batch(model, table, g, batch)?;
            report.skipped_sessions += skipped;
            if loss.episodes == 0 {
                continue;
            }
            batches += 1;
            report.reward_loss += loss.reward_loss;
            report.ce_loss += loss.ce_loss;
            report.loss += loss.total;
            report.ce_skipped += loss.ce_skipped;
            report.episodes += loss.episodes;
            reward_sum += rsum;
        }
        if batches > 0 {
            let b = batches as f64;
            report.reward_loss /= b;
            report.ce_loss /= b;
            report.loss /= b;
        }
        if report.episodes > 0 {
            report.mean_reward = reward_sum / report.episodes as f64;
        }
        Ok(report)
    }

    pub fn fit(
        &mut self,
        model: &mut ReksModel,
        table: &EmbeddingTable,
        g: &KnowledgeGraph,
        sessions: &[PreparedSession],
    ) -> Result<Vec<EpochReport>> {
        (0..self.config.epochs)
            .map(|_| self.train_epoch(model, table, g, sessions))
            .collect()
    }
}
