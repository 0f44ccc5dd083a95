//! Synthetic instructional-task environments and expert demonstrations.
//!
//! Each task is a partial order over a handful of steps drawn from a shared
//! action vocabulary. Experts execute uniformly random linear extensions of
//! that order; observations are task-embedding + progress-embedding + noise,
//! where progress depends on the *set* of completed steps so interchangeable
//! orders reach the same goal observation.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seed_for_ids, Rng};

const TAG_TASK: u64 = 0x7461736b; // "task"
const TAG_PROGRESS: u64 = 0x70726f67; // "prog"
const TAG_STRUCTURE: u64 = 0x73747275; // "stru"
const TAG_NOISE: u64 = 0x6e6f6973; // "nois"

/// A task: an ordered list of global action ids plus precedence edges between
/// step positions (`i -> j` means step `i` must run before step `j`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    pub steps: Vec<usize>,
    pub precedence: Vec<(usize, usize)>,
}

impl TaskSpec {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    /// True when `actions` is a permutation of this task's steps that
    /// respects every precedence edge.
    pub fn is_linear_extension(&self, actions: &[usize]) -> bool {
        if actions.len() != self.steps.len() {
            return false;
        }
        let mut pos_of_step = vec![usize::MAX; self.steps.len()];
        for (t, &a) in actions.iter().enumerate() {
            match self.steps.iter().position(|&s| s == a) {
                Some(k) if pos_of_step[k] == usize::MAX => pos_of_step[k] = t,
                _ => return false,
            }
        }
        self.precedence
            .iter()
            .all(|&(i, j)| pos_of_step[i] < pos_of_step[j])
    }

    fn preds_mask(&self) -> Vec<u64> {
        let n = self.steps.len();
        let mut preds = vec![0u64; n];
        for &(i, j) in &self.precedence {
            preds[j] |= 1 << i;
        }
        preds
    }

    /// Number of linear extensions (exact, memoized over subsets).
    pub fn count_linear_extensions(&self) -> u64 {
        let n = self.steps.len();
        assert!(n <= 20, "extension counting limited to 20 steps");
        let preds = self.preds_mask();
        let mut memo: HashMap<u64, u64> = HashMap::new();
        count_ext(((1u64 << n) - 1) as u64, &preds, &mut memo)
    }

    /// Uniformly random linear extension, as step positions.
    pub fn sample_linear_extension(&self, rng: &mut Rng) -> Vec<usize> {
        let n = self.steps.len();
        assert!(n <= 20, "extension sampling limited to 20 steps");
        let preds = self.preds_mask();
        let mut memo: HashMap<u64, u64> = HashMap::new();
        let mut remaining = (1u64 << n) - 1;
        let mut order = Vec::with_capacity(n);
        while remaining != 0 {
            let mut choices = Vec::new();
            let mut weights = Vec::new();
            for v in 0..n {
                let bit = 1u64 << v;
                if remaining & bit != 0 && preds[v] & remaining == 0 {
                    choices.push(v);
                    weights.push(count_ext(remaining & !bit, &preds, &mut memo) as f64);
                }
            }
            let pick = choices[rng.weighted(&weights)];
            order.push(pick);
            remaining &= !(1u64 << pick);
        }
        order
    }

    /// All linear extensions as action-id sequences (small tasks only).
    pub fn enumerate_extensions(&self) -> Vec<Vec<usize>> {
        let n = self.steps.len();
        assert!(n <= 8, "enumeration limited to 8 steps");
        let preds = self.preds_mask();
        let mut out = Vec::new();
        let mut cur = Vec::new();
        enumerate_rec((1u64 << n) - 1, &preds, &mut cur, &mut out);
        out.into_iter()
            .map(|pos| pos.iter().map(|&p| self.steps[p]).collect())
            .collect()
    }
}

fn count_ext(mask: u64, preds: &[u64], memo: &mut HashMap<u64, u64>) -> u64 {
    if mask == 0 {
        return 1;
    }
    if let Some(&v) = memo.get(&mask) {
        return v;
    }
    let mut total = 0u64;
    for v in 0..preds.len() {
        let bit = 1u64 << v;
        if mask & bit != 0 && preds[v] & mask == 0 {
            total += count_ext(mask & !bit, preds, memo);
        }
    }
    memo.insert(mask, total);
    total
}

fn enumerate_rec(mask: u64, preds: &[u64], cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if mask == 0 {
        out.push(cur.clone());
        return;
    }
    for v in 0..preds.len() {
        let bit = 1u64 << v;
        if mask & bit != 0 && preds[v] & mask == 0 {
            cur.push(v);
            enumerate_rec(mask & !bit, preds, cur, out);
            cur.pop();
        }
    }
}

/// World generation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub num_tasks: usize,
    pub steps_min: usize,
    pub steps_max: usize,
    /// Shared action vocabulary size M.
    pub action_vocab: usize,
    pub obs_dim: usize,
    pub noise_sigma: f64,
    /// Fraction of adjacent step pairs left unordered (no precedence edge).
    pub interchangeable_fraction: f64,
    pub seed: u64,
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 {
            return Err(Error::InvalidConfig("num_tasks must be positive".into()));
        }
        if self.steps_min < 2 || self.steps_min > self.steps_max {
            return Err(Error::InvalidConfig(format!(
                "invalid steps range [{}, {}]",
                self.steps_min, self.steps_max
            )));
        }
        if self.steps_max > self.action_vocab {
            return Err(Error::InvalidConfig(format!(
                "steps_max {} exceeds action vocabulary {}",
                self.steps_max, self.action_vocab
            )));
        }
        if self.obs_dim < 2 {
            return Err(Error::InvalidConfig("obs_dim must be at least 2".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("noise_sigma must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.interchangeable_fraction) {
            return Err(Error::InvalidConfig(
                "interchangeable_fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// One expert or relabeled episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: usize,
    #[serde(rename = "obs")]
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub relabeled: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Generated tasks together with the config that fixes their embeddings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub tasks: Vec<TaskSpec>,
}

impl World {
    /// Builds `num_tasks` random partial orders, deterministic in the seed.
    pub fn generate(config: WorldConfig) -> Result<World> {
        config.validate()?;
        let mut rng = Rng::seed_from(seed_for_ids(config.seed, TAG_STRUCTURE, []));
        let mut tasks = Vec::with_capacity(config.num_tasks);
        for task_id in 0..config.num_tasks {
            let n = config.steps_min + rng.below(config.steps_max - config.steps_min + 1);
            let mut steps = rng.sample_indices(config.action_vocab, n);
            steps.sort_unstable();
            rng.shuffle(&mut steps);
            let mut precedence = Vec::new();
            for k in 0..n - 1 {
                if rng.uniform() >= config.interchangeable_fraction {
                    precedence.push((k, k + 1));
                }
            }
            tasks.push(TaskSpec {
                task_id,
                steps,
                precedence,
            });
        }
        Ok(World { config, tasks })
    }

    fn unit_embedding(&self, tag: u64, ids: impl IntoIterator<Item = u64>) -> Vec<f64> {
        let seed = seed_for_ids(self.config.seed, tag, ids);
        let mut rng = Rng::seed_from(seed);
        let mut v = rng.normal_vec(self.config.obs_dim);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }

    pub fn task_embedding(&self, task_id: usize) -> Vec<f64> {
        self.unit_embedding(TAG_TASK, [task_id as u64])
    }

    /// Progress embedding of a *set* of completed global action ids.
    pub fn progress_embedding(&self, completed: &[usize]) -> Vec<f64> {
        let mut ids: Vec<u64> = completed.iter().map(|&a| a as u64).collect();
        ids.sort_unstable();
        self.unit_embedding(TAG_PROGRESS, ids)
    }

    /// Noise-free observation for a task at a given completion set.
    pub fn clean_observation(&self, task_id: usize, completed: &[usize]) -> Vec<f64> {
        let e = self.task_embedding(task_id);
        let p = self.progress_embedding(completed);
        e.iter().zip(&p).map(|(a, b)| a + b).collect()
    }

    fn noisy_observation(&self, task_id: usize, completed: &[usize], rng: &mut Rng) -> Vec<f64> {
        let mut o = self.clean_observation(task_id, completed);
        if self.config.noise_sigma > 0.0 {
            for x in o.iter_mut() {
                *x += self.config.noise_sigma * rng.normal();
            }
        }
        o
    }

    /// Goal observation (all steps complete), noise-free.
    pub fn goal_observation(&self, task: &TaskSpec) -> Vec<f64> {
        self.clean_observation(task.task_id, &task.steps)
    }

    /// Samples one expert demonstration: a uniform linear extension, observed
    /// before each action, with the final observation showing the completed
    /// task. Noise is drawn from `rng`.
    pub fn sample_expert(&self, task: &TaskSpec, rng: &mut Rng) -> Trajectory {
        let order = task.sample_linear_extension(rng);
        let actions: Vec<usize> = order.iter().map(|&p| task.steps[p]).collect();
        let t_len = actions.len();
        let mut observations = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let completed: &[usize] = if t + 1 == t_len {
                &actions[..] // goal view: everything done
            } else {
                &actions[..t]
            };
            observations.push(self.noisy_observation(task.task_id, completed, rng));
        }
        Trajectory {
            task_id: task.task_id,
            observations,
            actions,
            relabeled: false,
        }
    }

    /// Samples `demos_per_task` demonstrations per task with per-trajectory
    /// RNG streams derived from the master rng.
    pub fn sample_dataset(&self, demos_per_task: usize, rng: &mut Rng) -> Vec<Trajectory> {
        let mut out = Vec::with_capacity(self.tasks.len() * demos_per_task);
        for task in &self.tasks {
            for _ in 0..demos_per_task {
                let mut traj_rng = rng.split();
                out.push(self.sample_expert(task, &mut traj_rng));
            }
        }
        out
    }

    /// Stream of noise draws for observation reconstruction in tests.
    pub fn noise_rng(&self, stream: u64) -> Rng {
        Rng::seed_from(seed_for_ids(self.config.seed, TAG_NOISE, [stream]))
    }
}

/// Outcome of a hindsight-relabeling pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HerReport {
    pub relabeled: usize,
    pub skipped_too_short: usize,
}

/// Appends sub-trajectory copies with hindsight goals.
///
/// `fraction` of the trajectories (rounded, chosen without replacement, each
/// at most once) contribute one contiguous slice `(o_m..=o_n, a_m..=a_n)`
/// with `n >= m + 2`, marked `relabeled`. Originals are retained. Trajectories
/// too short to contain a non-adjacent index pair are skipped and counted.
pub fn her_relabel(
    dataset: &mut Vec<Trajectory>,
    fraction: f64,
    rng: &mut Rng,
) -> Result<HerReport> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "relabel fraction {fraction} outside [0, 1]"
        )));
    }
    let n_total = dataset.len();
    let k = (fraction * n_total as f64).round() as usize;
    let chosen = rng.sample_indices(n_total, k.min(n_total));
    let mut report = HerReport::default();
    let mut additions = Vec::new();
    let mut chosen_sorted = chosen;
    chosen_sorted.sort_unstable();
    for idx in chosen_sorted {
        let src = &dataset[idx];
        let t_len = src.len();
        if t_len < 3 {
            report.skipped_too_short += 1;
            continue;
        }
        // Uniform over pairs (m, n) with n >= m + 2, 0-based inclusive.
        let mut pairs = Vec::new();
        for m in 0..t_len {
            for n in (m + 2)..t_len {
                pairs.push((m, n));
            }
        }
        let (m, n) = pairs[rng.below(pairs.len())];
        additions.push(Trajectory {
            task_id: src.task_id,
            observations: src.observations[m..=n].to_vec(),
            actions: src.actions[m..=n].to_vec(),
            relabeled: true,
        });
        report.relabeled += 1;
    }
    dataset.extend(additions);
    Ok(report)
}

// ── Trajectory file I/O ─────────────────────────────────────────────
//
// Line-delimited records, one trajectory per line:
// {"task_id": int, "obs": [[f64,...]], "actions": [int,...], "relabeled": bool}
// Serialized f64s use the shortest round-trip decimal form, so read/write is
// bit-exact.

pub fn write_trajectories(path: &Path, dataset: &[Trajectory]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for traj in dataset {
        serde_json::to_writer(&mut w, traj)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads and validates a trajectory file against the world dimensions.
pub fn read_trajectories(path: &Path, action_vocab: usize, obs_dim: usize) -> Result<Vec<Trajectory>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let traj: Trajectory = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: line_no,
            field: "record".into(),
            msg: e.to_string(),
        })?;
        validate_trajectory(&traj, action_vocab, obs_dim, line_no)?;
        out.push(traj);
    }
    Ok(out)
}

fn validate_trajectory(
    traj: &Trajectory,
    action_vocab: usize,
    obs_dim: usize,
    line: usize,
) -> Result<()> {
    if traj.actions.len() != traj.observations.len() {
        return Err(Error::MalformedRecord {
            line,
            field: "actions".into(),
            msg: format!(
                "{} actions vs {} observations",
                traj.actions.len(),
                traj.observations.len()
            ),
        });
    }
    if traj.actions.len() < 2 {
        return Err(Error::MalformedRecord {
            line,
            field: "actions".into(),
            msg: "trajectory shorter than 2 steps".into(),
        });
    }
    if let Some(&bad) = traj.actions.iter().find(|&&a| a >= action_vocab) {
        return Err(Error::MalformedRecord {
            line,
            field: "actions".into(),
            msg: format!("action id {bad} >= vocabulary size {action_vocab}"),
        });
    }
    if let Some(o) = traj.observations.iter().find(|o| o.len() != obs_dim) {
        return Err(Error::MalformedRecord {
            line,
            field: "obs".into(),
            msg: format!("observation dim {} != {obs_dim}", o.len()),
        });
    }
    Ok(())
}
