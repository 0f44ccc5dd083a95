//! Plan-quality metrics and embedding diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-query action-sequence metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionMetrics {
    /// Exact sequence match.
    pub success: bool,
    /// Fraction of positions that match, in [0, 1].
    pub accuracy: f64,
    /// Intersection over union of the action *sets* (order-insensitive).
    pub iou: f64,
}

/// Exact-match / per-step / set-overlap comparison of two action sequences.
pub fn action_metrics(gt: &[usize], pred: &[usize]) -> Result<ActionMetrics> {
    if gt.len() != pred.len() {
        return Err(Error::InvalidConfig(format!(
            "sequence length mismatch: {} vs {}",
            gt.len(),
            pred.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::InvalidConfig("empty sequences".into()));
    }
    let matches = gt.iter().zip(pred).filter(|(a, b)| a == b).count();
    let mut gt_set: Vec<usize> = gt.to_vec();
    gt_set.sort_unstable();
    gt_set.dedup();
    let mut pred_set: Vec<usize> = pred.to_vec();
    pred_set.sort_unstable();
    pred_set.dedup();
    let inter = gt_set.iter().filter(|a| pred_set.contains(a)).count();
    let union = gt_set.len() + pred_set.len() - inter;
    Ok(ActionMetrics {
        success: matches == gt.len(),
        accuracy: matches as f64 / gt.len() as f64,
        iou: inter as f64 / union as f64,
    })
}

/// Per-query observation-order metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderMetrics {
    /// Count of positions where the permutations differ.
    pub hamming: usize,
    /// Concordant-pair fraction in [0, 1] (2/(T(T−1)) normalization).
    pub pair_accuracy: f64,
}

fn check_permutation(name: &str, p: &[usize]) -> Result<()> {
    let t = p.len();
    let mut seen = vec![false; t + 1];
    for &v in p {
        if v == 0 || v > t || seen[v] {
            return Err(Error::InvalidConfig(format!(
                "{name} is not a permutation of 1..={t}: {p:?}"
            )));
        }
        seen[v] = true;
    }
    Ok(())
}

/// Positional mismatch count and concordant-pair fraction between two
/// permutations of 1..=T.
pub fn order_metrics(gt: &[usize], pred: &[usize]) -> Result<OrderMetrics> {
    if gt.len() != pred.len() || gt.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "order metrics need equal-length permutations of size >= 2, got {} and {}",
            gt.len(),
            pred.len()
        )));
    }
    check_permutation("gt", gt)?;
    check_permutation("pred", pred)?;
    let t = gt.len();
    let hamming = gt.iter().zip(pred).filter(|(a, b)| a != b).count();

    // Position of each element in pred, for O(1) order lookups.
    let mut pos_pred = vec![0usize; t + 1];
    for (i, &v) in pred.iter().enumerate() {
        pos_pred[v] = i;
    }
    let mut concordant = 0usize;
    for i in 0..t {
        for j in i + 1..t {
            // Elements gt[i], gt[j] appear in this order in gt; do they keep
            // this order in pred?
            if pos_pred[gt[i]] < pos_pred[gt[j]] {
                concordant += 1;
            }
        }
    }
    let pairs = t * (t - 1) / 2;
    Ok(OrderMetrics {
        hamming,
        pair_accuracy: concordant as f64 / pairs as f64,
    })
}

/// Mean silhouette score of labeled points under Euclidean distance.
/// Positive means points sit closer to their own label group than to the
/// nearest other group.
pub fn silhouette_score(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    assert_eq!(points.len(), labels.len());
    let n = points.len();
    let classes: Vec<usize> = {
        let mut c: Vec<usize> = labels.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    if classes.len() < 2 {
        return 0.0;
    }
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..n {
        let own = labels[i];
        let mut own_sum = 0.0;
        let mut own_n = 0usize;
        let mut other: Vec<(f64, usize)> = classes
            .iter()
            .filter(|&&c| c != own)
            .map(|&c| (0.0, c))
            .collect();
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = dist(&points[i], &points[j]);
            if labels[j] == own {
                own_sum += d;
                own_n += 1;
            } else if let Some(slot) = other.iter_mut().find(|(_, c)| *c == labels[j]) {
                slot.0 += d;
            }
        }
        if own_n == 0 {
            continue; // singleton cluster: silhouette undefined, skip
        }
        let a = own_sum / own_n as f64;
        let b = other
            .iter()
            .map(|(sum, c)| sum / labels.iter().filter(|&&l| l == *c).count() as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean cosine similarity of same-label pairs vs different-label pairs.
pub fn intra_inter_cosine(points: &[Vec<f64>], labels: &[usize]) -> (f64, f64) {
    let n = points.len();
    let mut intra = (0.0, 0usize);
    let mut inter = (0.0, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            let c = cosine(&points[i], &points[j]);
            if labels[i] == labels[j] {
                intra.0 += c;
                intra.1 += 1;
            } else {
                inter.0 += c;
                inter.1 += 1;
            }
        }
    }
    (
        if intra.1 == 0 { 0.0 } else { intra.0 / intra.1 as f64 },
        if inter.1 == 0 { 0.0 } else { inter.0 / inter.1 as f64 },
    )
}

// ── Aggregated reports ──────────────────────────────────────────────

/// Raw per-query evaluation record; reports are recomputable from these.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QueryLog {
    pub horizon: usize,
    pub task_id: usize,
    pub gt_actions: Vec<usize>,
    pub pred_actions: Vec<usize>,
    pub success: bool,
    pub accuracy: f64,
    pub iou: f64,
    /// Walk-through results when a pool was evaluated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gt_order: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pred_order: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hamming: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair_accuracy: Option<f64>,
}

/// Metrics of one horizon, with the integer counts they derive from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: usize,
    pub sample_count: usize,
    pub success_count: usize,
    pub position_matches: usize,
    pub position_total: usize,
    /// Percentages in [0, 100].
    pub success_rate: f64,
    pub accuracy: f64,
    pub miou: f64,
    pub walk_sample_count: usize,
    pub hamming_mean: f64,
    pub pair_accuracy: f64,
    /// Free-permutation baseline variant (reported by the uniform baseline
    /// next to the fixed-endpoint number).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hamming_free_mean: Option<f64>,
}

/// Full evaluation report: one block per horizon.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_horizon: Vec<HorizonMetrics>,
}

impl MetricsReport {
    pub fn horizon(&self, t: usize) -> Option<&HorizonMetrics> {
        self.per_horizon.iter().find(|h| h.horizon == t)
    }
}

/// Aggregates per-query logs into one horizon block. Percentages derive
/// from the integer counts.
pub fn aggregate_horizon(horizon: usize, logs: &[QueryLog]) -> HorizonMetrics {
    let sample_count = logs.len();
    let success_count = logs.iter().filter(|l| l.success).count();
    let position_total: usize = logs.iter().map(|l| l.gt_actions.len()).sum();
    let position_matches: usize = logs
        .iter()
        .map(|l| {
            l.gt_actions
                .iter()
                .zip(&l.pred_actions)
                .filter(|(a, b)| a == b)
                .count()
        })
        .sum();
    let miou_sum: f64 = logs.iter().map(|l| l.iou).sum();
    let walk: Vec<&QueryLog> = logs.iter().filter(|l| l.hamming.is_some()).collect();
    let walk_sample_count = walk.len();
    let hamming_mean = if walk.is_empty() {
        0.0
    } else {
        walk.iter().map(|l| l.hamming.unwrap() as f64).sum::<f64>() / walk.len() as f64
    };
    let pair_accuracy = if walk.is_empty() {
        0.0
    } else {
        100.0 * walk.iter().map(|l| l.pair_accuracy.unwrap()).sum::<f64>() / walk.len() as f64
    };
    HorizonMetrics {
        horizon,
        sample_count,
        success_count,
        position_matches,
        position_total,
        success_rate: 100.0 * success_count as f64 / sample_count.max(1) as f64,
        accuracy: 100.0 * position_matches as f64 / position_total.max(1) as f64,
        miou: 100.0 * miou_sum / sample_count.max(1) as f64,
        walk_sample_count,
        hamming_mean,
        pair_accuracy,
        hamming_free_mean: None,
    }
}
