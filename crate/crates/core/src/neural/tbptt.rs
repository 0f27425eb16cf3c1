use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A contiguous slice `[offset, offset + len)` of one trajectory. Segments with a
/// nonzero offset start from the recurrent state their predecessor ended in,
/// treated as a constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub trajectory: usize,
    pub offset: usize,
    pub len: usize,
}

impl Segment {
    pub fn carries_state(&self) -> bool {
        self.offset > 0
    }

    pub fn end(&self) -> usize {
        self.offset + self.len
    }
}

/// Splits each trajectory of the given lengths into `⌈T/L⌉` contiguous segments.
pub fn segment_for_tbptt(lengths: &[usize], segment_len: usize) -> Vec<Segment> {
    assert!(segment_len >= 1, "segment length must be at least 1");
    let mut out = Vec::new();
    for (trajectory, &t) in lengths.iter().enumerate() {
        let mut offset = 0;
        while offset < t {
            let len = segment_len.min(t - offset);
            out.push(Segment { trajectory, offset, len });
            offset += len;
        }
    }
    out
}

/// Shuffles segments and groups them into mini-batches of at most `batch` segments
/// that all have the same length, so a batch can be unrolled in lock-step.
pub fn shuffled_batches<R: Rng + ?Sized>(segments: &[Segment], batch: usize, rng: &mut R) -> Vec<Vec<Segment>> {
    assert!(batch >= 1, "batch size must be at least 1");
    let mut shuffled = segments.to_vec();
    shuffled.shuffle(rng);
    let mut lengths: Vec<usize> = shuffled.iter().map(|s| s.len).collect();
    lengths.sort_unstable();
    lengths.dedup();
    let mut batches = Vec::new();
    for len in lengths {
        let group: Vec<Segment> = shuffled.iter().filter(|s| s.len == len).copied().collect();
        batches.extend(group.chunks(batch).map(|c| c.to_vec()));
    }
    batches.shuffle(rng);
    batches
}
