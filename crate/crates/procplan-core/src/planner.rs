//! Inference-time planning.
//!
//! Procedure planning infers the context from (start, goal), rolls the
//! generation model forward, and (optionally) keeps the best of several
//! sampled rollouts under the discriminator reward. Walk-through planning
//! scores pairwise transitions over an observation pool with the learned
//! model and orders the pool by an exact subset-DP path maximizer with fixed
//! endpoints.

use serde::{Deserialize, Serialize};

use crate::context::{mean_context, sample_context, ContextNet, ContextVariable};
use crate::error::{Error, Result};
use crate::gail::Discriminator;
use crate::genmodel::{GenStack, LatentState, RolloutMode};
use crate::nn::one_hot;
use crate::rng::Rng;

/// Horizons above this are refused by the exact permutation solver.
pub const EXACT_SOLVER_LIMIT: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanMode {
    /// Posterior mean, greedy rollout.
    Mean,
    /// Sampled context and stochastic rollout.
    Sample,
}

impl std::str::FromStr for PlanMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(PlanMode::Mean),
            "sample" => Ok(PlanMode::Sample),
            other => Err(Error::InvalidConfig(format!("unknown plan mode `{other}`"))),
        }
    }
}

/// One procedure-planning request.
#[derive(Clone, Debug)]
pub struct PlanQuery {
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    pub horizon: usize,
    pub mode: PlanMode,
    pub num_samples: usize,
}

impl PlanQuery {
    pub fn mean(start: Vec<f64>, goal: Vec<f64>, horizon: usize) -> Self {
        PlanQuery {
            start,
            goal,
            horizon,
            mode: PlanMode::Mean,
            num_samples: 1,
        }
    }
}

/// A planned action sequence with its per-step discriminator rewards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedSequence {
    pub actions: Vec<usize>,
    pub step_rewards: Vec<f64>,
    pub total_reward: f64,
}

/// All rollout candidates for a query, in generation order.
pub fn plan_candidates(
    context: &ContextNet,
    stack: &GenStack,
    disc: &Discriminator,
    query: &PlanQuery,
    max_horizon: usize,
    rng: &mut Rng,
) -> Result<Vec<PlannedSequence>> {
    if query.horizon < 2 {
        return Err(Error::InvalidConfig(format!(
            "planning horizon must be >= 2, got {}",
            query.horizon
        )));
    }
    if query.horizon > max_horizon {
        return Err(Error::HorizonExceeded {
            got: query.horizon,
            max: max_horizon,
        });
    }
    if query.num_samples == 0 {
        return Err(Error::InvalidConfig("num_samples must be >= 1".into()));
    }
    let posterior = context.encode(&query.start, &query.goal)?;
    let m = stack.dims().action_vocab;
    let mut out = Vec::with_capacity(query.num_samples);
    for _ in 0..query.num_samples {
        let (z, mode) = match query.mode {
            PlanMode::Mean => (mean_context(&posterior), RolloutMode::Greedy),
            PlanMode::Sample => (sample_context(&posterior, rng), RolloutMode::Sample),
        };
        let rollout = stack.rollout(&z, query.horizon, mode, rng)?;
        let mut step_rewards = Vec::with_capacity(rollout.len());
        for step in &rollout {
            step_rewards.push(disc.reward(&step.state, &one_hot(step.action, m))?);
        }
        let total_reward = step_rewards.iter().sum();
        out.push(PlannedSequence {
            actions: rollout.iter().map(|s| s.action).collect(),
            step_rewards,
            total_reward,
        });
    }
    Ok(out)
}

/// Plans one action sequence. With `num_samples > 1` the candidate with the
/// highest accumulated log-D reward wins (ties keep the earliest).
pub fn plan_procedure(
    context: &ContextNet,
    stack: &GenStack,
    disc: &Discriminator,
    query: &PlanQuery,
    max_horizon: usize,
    rng: &mut Rng,
) -> Result<PlannedSequence> {
    let candidates = plan_candidates(context, stack, disc, query, max_horizon, rng)?;
    Ok(candidates
        .into_iter()
        .reduce(|best, cand| {
            if cand.total_reward > best.total_reward {
                cand
            } else {
                best
            }
        })
        .expect("num_samples >= 1"))
}

// ── Score matrix ────────────────────────────────────────────────────

/// Pairwise transition scores over an observation pool. Row i distributes
/// one unit of probability mass over the nearest neighbors of the one-step
/// predictions from pool state i.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub n: usize,
    scores: Vec<f64>,
}

impl ScoreMatrix {
    pub fn from_raw(n: usize, scores: Vec<f64>) -> Self {
        assert_eq!(scores.len(), n * n);
        ScoreMatrix { n, scores }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.n + j]
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        self.scores[i * self.n + j] += v;
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.scores[i * self.n..(i + 1) * self.n].iter().sum()
    }
}

/// Index of the pool state nearest to `target` (squared Euclidean; ties to
/// the lowest index).
fn nearest_index(pool: &[Vec<f64>], target: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (k, cand) in pool.iter().enumerate() {
        let d: f64 = cand
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Builds the transition-score matrix for a pool, inferring the context from
/// the query's (start, goal). For the exterior stack each action contributes
/// a vote weighted by its policy probability; the interior stack's
/// deterministic transition casts the full row mass on one neighbor.
pub fn build_score_matrix(
    context: &ContextNet,
    stack: &GenStack,
    o_start: &[f64],
    o_goal: &[f64],
    pool: &[Vec<f64>],
) -> Result<ScoreMatrix> {
    if pool.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "pool must contain at least 2 observations, got {}",
            pool.len()
        )));
    }
    let posterior = context.encode(o_start, o_goal)?;
    let z = mean_context(&posterior);
    score_matrix_with_context(stack, &z, pool)
}

/// Score matrix from an explicit context variable.
pub fn score_matrix_with_context(
    stack: &GenStack,
    z: &ContextVariable,
    pool: &[Vec<f64>],
) -> Result<ScoreMatrix> {
    let n = pool.len();
    let dims = stack.dims();
    let mut s = ScoreMatrix::from_raw(n, vec![0.0; n * n]);
    match stack {
        GenStack::Int(cell) => {
            for (i, obs) in pool.iter().enumerate() {
                let out = cell.step(&LatentState { s: obs.clone() }, z)?;
                let k = nearest_index(pool, &out.next_state.s);
                s.add(i, k, 1.0);
            }
        }
        GenStack::Ext(model) => {
            let mut dummy = Rng::seed_from(0);
            for (i, obs) in pool.iter().enumerate() {
                let state = LatentState { s: obs.clone() };
                let dist = stack.policy_forward(&state)?;
                for a in 0..dims.action_vocab {
                    let next =
                        model.transition(&state, Some(a), z, RolloutMode::Greedy, &mut dummy)?;
                    let k = nearest_index(pool, &next.s);
                    s.add(i, k, dist.probs[a]);
                }
            }
        }
    }
    Ok(s)
}

// ── Permutation solving ─────────────────────────────────────────────

/// An ordering of a T-element pool with the endpoints pinned: the first
/// entry is always 1 and the last is always T (1-based pool indices).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkPlan {
    pub order: Vec<usize>,
}

impl WalkPlan {
    /// Checks the endpoint constraints and bijectivity.
    pub fn validate(order: Vec<usize>) -> Result<WalkPlan> {
        let t = order.len();
        if t < 2 || order[0] != 1 || order[t - 1] != t {
            return Err(Error::InvalidConfig(format!(
                "walk plan must start at 1 and end at {t}: {order:?}"
            )));
        }
        let mut seen = vec![false; t + 1];
        for &v in &order {
            if v == 0 || v > t || seen[v] {
                return Err(Error::InvalidConfig(format!(
                    "walk plan is not a permutation of 1..={t}: {order:?}"
                )));
            }
            seen[v] = true;
        }
        Ok(WalkPlan { order })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Path score Σ S[b(i), b(i+1)] of a 1-based ordering.
pub fn path_score(s: &ScoreMatrix, order: &[usize]) -> f64 {
    order
        .windows(2)
        .map(|w| s.at(w[0] - 1, w[1] - 1))
        .sum()
}

/// Exact maximizer of the path score with fixed endpoints, by dynamic
/// programming over interior subsets. Ties break lexicographically on the
/// permutation. Pool size above [`EXACT_SOLVER_LIMIT`] is refused (use
/// [`solve_permutation_greedy`]).
pub fn solve_permutation(s: &ScoreMatrix, t: usize) -> Result<WalkPlan> {
    if s.n != t {
        return Err(Error::InvalidConfig(format!(
            "score matrix size {} does not match horizon {t}",
            s.n
        )));
    }
    if t > EXACT_SOLVER_LIMIT {
        return Err(Error::PermutationTooLarge {
            got: t,
            max: EXACT_SOLVER_LIMIT,
        });
    }
    if t == 2 {
        return WalkPlan::validate(vec![1, 2]);
    }

    // Interior nodes are 1..=t-2 (0-based); bit b of a mask is interior
    // node b+1. f[mask][j] = best score from j through `mask` to the goal.
    let interior = t - 2;
    let goal = t - 1;
    let full = (1usize << interior) - 1;
    let mut f = vec![vec![f64::NEG_INFINITY; t]; full + 1];
    for j in 0..t {
        f[0][j] = s.at(j, goal);
    }
    for mask in 1..=full {
        for j in 0..t {
            // j is the current node; it must not be inside `mask`.
            if j >= 1 && j <= interior && mask & (1 << (j - 1)) != 0 {
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            for b in 0..interior {
                if mask & (1 << b) != 0 {
                    let k = b + 1;
                    let cand = s.at(j, k) + f[mask & !(1 << b)][k];
                    if cand > best {
                        best = cand;
                    }
                }
            }
            f[mask][j] = best;
        }
    }

    // Forward reconstruction; choosing the smallest k that attains the
    // optimum at each position yields the lexicographically smallest
    // maximizer.
    let mut order = Vec::with_capacity(t);
    order.push(1usize);
    let mut cur = 0usize;
    let mut mask = full;
    while mask != 0 {
        let target = f[mask][cur];
        let mut chosen = None;
        for b in 0..interior {
            if mask & (1 << b) != 0 {
                let k = b + 1;
                let cand = s.at(cur, k) + f[mask & !(1 << b)][k];
                if (cand - target).abs() <= 1e-12 * target.abs().max(1.0) {
                    chosen = Some((b, k));
                    break;
                }
            }
        }
        let (b, k) = chosen.expect("DP reconstruction always finds its optimum");
        order.push(k + 1);
        cur = k;
        mask &= !(1 << b);
    }
    order.push(t);
    WalkPlan::validate(order)
}

/// Greedy fallback for long pools: repeatedly hop to the unvisited interior
/// state with the highest transition score, then the goal.
pub fn solve_permutation_greedy(s: &ScoreMatrix, t: usize) -> Result<WalkPlan> {
    if s.n != t {
        return Err(Error::InvalidConfig(format!(
            "score matrix size {} does not match horizon {t}",
            s.n
        )));
    }
    let mut visited = vec![false; t];
    visited[0] = true;
    visited[t - 1] = true;
    let mut order = vec![1usize];
    let mut cur = 0usize;
    for _ in 0..t - 2 {
        let mut best = None;
        let mut best_v = f64::NEG_INFINITY;
        for k in 1..t - 1 {
            if !visited[k] && s.at(cur, k) > best_v {
                best_v = s.at(cur, k);
                best = Some(k);
            }
        }
        let k = best.expect("interior state remains");
        visited[k] = true;
        order.push(k + 1);
        cur = k;
    }
    order.push(t);
    WalkPlan::validate(order)
}

/// A walk-through plan with the per-edge scores along the chosen path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkResult {
    pub plan: WalkPlan,
    pub step_scores: Vec<f64>,
}

/// Orders a candidate pool between start and goal. The pool convention:
/// `pool[0]` is the start clip and `pool[last]` the goal clip; the interior
/// may be in any order. `allow_greedy` enables the fallback solver beyond
/// the exact limit.
pub fn walkthrough(
    context: &ContextNet,
    stack: &GenStack,
    o_start: &[f64],
    o_goal: &[f64],
    pool: &[Vec<f64>],
    allow_greedy: bool,
) -> Result<WalkResult> {
    let t = pool.len();
    let s = build_score_matrix(context, stack, o_start, o_goal, pool)?;
    let plan = if t <= EXACT_SOLVER_LIMIT {
        solve_permutation(&s, t)?
    } else if allow_greedy {
        solve_permutation_greedy(&s, t)?
    } else {
        return Err(Error::PermutationTooLarge {
            got: t,
            max: EXACT_SOLVER_LIMIT,
        });
    };
    let step_scores = plan
        .order
        .windows(2)
        .map(|w| s.at(w[0] - 1, w[1] - 1))
        .collect();
    Ok(WalkResult { plan, step_scores })
}

/// One line of the plan output record stream.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub actions: Vec<usize>,
    pub walk_order: Vec<usize>,
    pub scores: Vec<f64>,
}
