//! Context-embedding export for external 2-D projection tools.

use std::path::Path;

use crate::context::ContextNet;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::taskworld::Trajectory;

/// Posterior-mean context vectors for sampled (start, goal) pairs, grouped
/// by task: `pairs_per_task` rows per task present in the dataset.
pub fn embed_rows(
    context: &ContextNet,
    dataset: &[Trajectory],
    pairs_per_task: usize,
    rng: &mut Rng,
) -> Result<Vec<(usize, Vec<f64>)>> {
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("empty dataset".into()));
    }
    let mut by_task: std::collections::BTreeMap<usize, Vec<&Trajectory>> = Default::default();
    for t in dataset {
        by_task.entry(t.task_id).or_default().push(t);
    }
    let mut rows = Vec::new();
    for (task_id, trajs) in by_task {
        for _ in 0..pairs_per_task {
            let t = trajs[rng.below(trajs.len())];
            let post = context.encode(
                t.observations.first().unwrap(),
                t.observations.last().unwrap(),
            )?;
            rows.push((task_id, post.mean));
        }
    }
    Ok(rows)
}

/// CSV with header `task_id,z0,...,z{d-1}`.
pub fn write_embed_csv(path: &Path, rows: &[(usize, Vec<f64>)]) -> Result<()> {
    let mut out = String::new();
    if let Some((_, first)) = rows.first() {
        out.push_str("task_id");
        for i in 0..first.len() {
            out.push_str(&format!(",z{i}"));
        }
        out.push('\n');
    }
    for (task_id, z) in rows {
        out.push_str(&task_id.to_string());
        for v in z {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
