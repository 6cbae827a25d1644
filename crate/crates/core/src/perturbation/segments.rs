use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Consecutive overlap rejections after which planning stops.
pub const MAX_REJECTIONS: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    pub segment_duration_ns: u64,
    pub max_fraction: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams { segment_duration_ns: 1_000_000_000, max_fraction: 0.10 }
    }
}

/// Half-open `[start_ns, end_ns)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Segment {
    pub start_ns: u64,
    pub end_ns: u64,
}

impl Segment {
    pub fn contains(&self, t: u64) -> bool {
        self.start_ns <= t && t < self.end_ns
    }

    fn overlaps(&self, other: &Segment) -> bool {
        self.start_ns < other.end_ns && other.start_ns < self.end_ns
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub seed: u64,
    pub params: SegmentParams,
    /// Offset added to every segment (timestamp of the first frame).
    pub origin_ns: u64,
    pub sequence_duration_ns: u64,
    /// Sorted by start, pairwise disjoint, relative to `origin_ns`.
    pub segments: Vec<Segment>,
    /// The sequence is not longer than one segment; nothing was planned.
    pub too_short: bool,
    /// Planning stopped at the rejection limit before the budget was spent.
    pub rejection_limit_hit: bool,
}

impl SegmentPlan {
    /// Whether an absolute timestamp falls inside a planned segment.
    pub fn covers(&self, timestamp_ns: u64) -> bool {
        let Some(t) = timestamp_ns.checked_sub(self.origin_ns) else {
            return false;
        };
        let i = self.segments.partition_point(|s| s.start_ns <= t);
        i > 0 && self.segments[i - 1].contains(t)
    }

    pub fn covered_ns(&self) -> u64 {
        self.segments.iter().map(|s| s.end_ns - s.start_ns).sum()
    }

    pub fn with_origin(mut self, origin_ns: u64) -> Self {
        self.origin_ns = origin_ns;
        self
    }
}

/// Draws disjoint segments with uniformly distributed starts in
/// `[0, duration - segment]` using ChaCha8 seeded from `seed`. A draw overlapping an
/// accepted segment is rejected; planning stops once the segment count reaches
/// `floor(max_fraction * duration / segment)` or after [`MAX_REJECTIONS`] rejections.
pub fn plan_segments(seed: u64, sequence_duration_ns: u64, params: SegmentParams) -> SegmentPlan {
    let mut plan = SegmentPlan {
        seed,
        params,
        origin_ns: 0,
        sequence_duration_ns,
        segments: Vec::new(),
        too_short: false,
        rejection_limit_hit: false,
    };
    let seg = params.segment_duration_ns;
    if seg == 0 || sequence_duration_ns <= seg {
        plan.too_short = true;
        return plan;
    }
    let budget = (params.max_fraction.max(0.0) * sequence_duration_ns as f64 / seg as f64 + 1e-9).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rejections = 0u32;
    let mut chosen: Vec<Segment> = Vec::with_capacity(budget);
    while chosen.len() < budget {
        let start = rng.random_range(0..=sequence_duration_ns - seg);
        let cand = Segment { start_ns: start, end_ns: start + seg };
        if chosen.iter().any(|s| s.overlaps(&cand)) {
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                plan.rejection_limit_hit = true;
                break;
            }
            continue;
        }
        chosen.push(cand);
    }
    chosen.sort_unstable();
    plan.segments = chosen;
    plan
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-run seed: `splitmix64(splitmix64(splitmix64(base) ^ value as u64) ^ repetition)`.
pub fn derive_seed(base_seed: u64, value: i64, repetition: u32) -> u64 {
    splitmix64(splitmix64(splitmix64(base_seed) ^ value as u64) ^ repetition as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SEC: u64 = 1_000_000_000;

    #[test]
    fn zero_fraction_is_empty() {
        for seed in 0..5 {
            let p = plan_segments(seed, 100 * SEC, SegmentParams { max_fraction: 0.0, ..Default::default() });
            assert!(p.segments.is_empty());
            assert!(!p.too_short);
        }
    }

    #[test]
    fn short_sequence_flagged() {
        let p = plan_segments(1, SEC, SegmentParams::default());
        assert!(p.too_short && p.segments.is_empty());
    }

    #[test]
    fn hundred_seconds_gives_ten_disjoint_segments() {
        for seed in 0..50 {
            let p = plan_segments(seed, 100 * SEC, SegmentParams::default());
            assert_eq!(p.segments.len(), 10, "seed {seed}");
            for w in p.segments.windows(2) {
                assert!(w[0].end_ns <= w[1].start_ns);
            }
            assert!(p.covered_ns() <= 10 * SEC);
            assert!(p.segments.iter().all(|s| s.end_ns <= 100 * SEC));
        }
    }

    #[test]
    fn same_seed_same_plan() {
        let a = plan_segments(99, 73 * SEC, SegmentParams::default());
        let b = plan_segments(99, 73 * SEC, SegmentParams::default());
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        assert_ne!(a.segments, plan_segments(100, 73 * SEC, SegmentParams::default()).segments);
    }

    #[test]
    fn crowded_plan_hits_rejection_limit() {
        // 9 of 10 one-second slots must be packed; random starts cannot achieve that
        let p = plan_segments(3, 10 * SEC + 1, SegmentParams { max_fraction: 0.9, ..Default::default() });
        assert!(p.rejection_limit_hit);
        assert!(p.segments.len() < 9);
    }

    #[test]
    fn covers_uses_origin() {
        let mut p = plan_segments(5, 100 * SEC, SegmentParams::default());
        p.origin_ns = 7;
        let s = p.segments[0];
        assert!(p.covers(s.start_ns + 7));
        assert!(!p.covers(s.end_ns + 7));
        assert!(!p.covers(0) || s.start_ns == 0);
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, 25, 0);
        assert_ne!(a, derive_seed(1, -25, 0));
        assert_ne!(a, derive_seed(1, 25, 1));
        assert_ne!(a, derive_seed(2, 25, 0));
        assert_eq!(a, derive_seed(1, 25, 0));
    }
}
