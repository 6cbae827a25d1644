use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use super::types::{Frame, Payload, Pose};
use super::DatasetError;

/// Gap bound used when none is configured: 20 ms.
pub const DEFAULT_MAX_GAP_NS: u64 = 20_000_000;

/// Time-ordered poses with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>) -> Result<Self, DatasetError> {
        if poses.is_empty() {
            return Err(DatasetError::EmptyTrajectory);
        }
        for (i, w) in poses.windows(2).enumerate() {
            if w[1].timestamp_ns <= w[0].timestamp_ns {
                return Err(DatasetError::Schema(format!(
                    "trajectory timestamps not strictly increasing at pose {}",
                    i + 1
                )));
            }
        }
        Ok(Trajectory { poses })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn first_timestamp(&self) -> u64 {
        self.poses[0].timestamp_ns
    }

    pub fn last_timestamp(&self) -> u64 {
        self.poses[self.poses.len() - 1].timestamp_ns
    }

    /// Pose with exactly this timestamp, if any.
    pub fn at(&self, timestamp_ns: u64) -> Option<&Pose> {
        self.poses
            .binary_search_by_key(&timestamp_ns, |p| p.timestamp_ns)
            .ok()
            .map(|i| &self.poses[i])
    }

    /// Sum of Euclidean distances between consecutive translations.
    pub fn length(&self) -> f64 {
        trajectory_length(self)
    }
}

pub fn trajectory_length(t: &Trajectory) -> f64 {
    t.poses.windows(2).map(|w| (w[1].translation - w[0].translation).norm()).sum()
}

/// Collects every ground-truth pose in stream order.
pub fn extract_ground_truth<'a, I>(frames: I) -> Result<Trajectory, DatasetError>
where
    I: IntoIterator<Item = &'a Frame>,
{
    let poses: Vec<Pose> = frames
        .into_iter()
        .filter_map(|f| match &f.payload {
            Payload::Pose(p) => Some(*p),
            _ => None,
        })
        .collect();
    Trajectory::new(poses)
}

/// Matches estimate poses to reference poses by timestamp.
///
/// Candidate pairs are accepted greedily in ascending `|Δt|` order (ties broken by
/// estimate index, then reference index); each estimate and each reference pose is
/// used at most once and pairs with `|Δt| > max_gap_ns` are never formed. The result
/// is sorted by estimate index.
pub fn associate(estimate: &Trajectory, reference: &Trajectory, max_gap_ns: u64) -> Result<Vec<(usize, usize)>, DatasetError> {
    let mut unused: BTreeMap<u64, usize> =
        reference.poses.iter().enumerate().map(|(j, p)| (p.timestamp_ns, j)).collect();

    let nearest = |unused: &BTreeMap<u64, usize>, t: u64| -> Option<(u64, usize)> {
        let below = unused.range(..=t).next_back().map(|(&rt, &j)| (t - rt, j));
        let above = unused.range(t..).next().map(|(&rt, &j)| (rt - t, j));
        match (below, above) {
            (Some(a), Some(b)) => Some(if (b.0, b.1) < (a.0, a.1) { b } else { a }),
            (a, b) => a.or(b),
        }
    };

    let mut heap = BinaryHeap::new();
    for (i, p) in estimate.poses.iter().enumerate() {
        if let Some((gap, j)) = nearest(&unused, p.timestamp_ns) {
            if gap <= max_gap_ns {
                heap.push(Reverse((gap, i, j)));
            }
        }
    }

    let mut pairs = Vec::new();
    while let Some(Reverse((gap, i, j))) = heap.pop() {
        let rt = reference.poses[j].timestamp_ns;
        if unused.get(&rt) == Some(&j) {
            unused.remove(&rt);
            pairs.push((i, j));
        } else if let Some((gap2, j2)) = nearest(&unused, estimate.poses[i].timestamp_ns) {
            // the reference was taken; gaps only grow, so re-queue the next best
            debug_assert!(gap2 >= gap);
            if gap2 <= max_gap_ns {
                heap.push(Reverse((gap2, i, j2)));
            }
        }
    }
    if pairs.is_empty() {
        return Err(DatasetError::NoOverlap);
    }
    pairs.sort_unstable();
    Ok(pairs)
}
